//! Group-rational KAN layers with two coefficient-gradient strategies: a
//! scatter of per-element atomic adds and a blocked reduction over private
//! partial sums. Includes an exact memory-access model, cost formulas, a
//! double-precision oracle and a benchmark driver.

pub mod access;
pub mod backward;
pub mod bench;
pub mod dump;
pub mod error;
pub mod layer;
pub mod rational;
pub mod real;
pub mod stats;
pub mod tensor;
pub mod train;
pub mod verify;

pub use access::{
    blocked_access_bounds, instrumented_backward, predict_accesses_blocked, predict_accesses_naive, AccessReport,
    FlopsConfig,
};
pub use backward::{
    backward, backward_blocked, backward_naive, combine_partials, BlockPartial, CombineMode, ExecutionPlan, GradBundle,
    Strategy,
};
pub use error::{GrkanError, Result};
pub use layer::{Activation, CoefficientPreset, GrKanLayer, InitSpec, LayerGrads};
pub use rational::{elementwise_grads, eval_rational, forward_tensor, GroupCoeffs, GroupLayout, GroupRationalParams};
pub use real::{Precision, Real};
pub use tensor::{ActivationTensor, Matrix, Shape3};
