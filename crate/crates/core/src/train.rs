//! Two-layer GR-KAN regression used as a training smoke test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GrkanError, Result};
use crate::layer::{Activation, GrKanLayer, InitSpec};
use crate::tensor::{ActivationTensor, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch: usize,
    pub seq: usize,
    pub dim: usize,
    pub d_out: usize,
    pub groups: usize,
    pub m: usize,
    pub n: usize,
    pub steps: usize,
    pub lr: f64,
    pub block_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            seq: 8,
            dim: 16,
            d_out: 4,
            groups: 4,
            m: 5,
            n: 4,
            steps: 500,
            lr: 0.05,
            block_size: 32,
            seed: 7,
        }
    }
}

/// Identity-initialized first layer followed by a swish-initialized second.
#[derive(Debug, Clone)]
pub struct TwoLayerNet {
    pub first: GrKanLayer,
    pub second: GrKanLayer,
}

impl TwoLayerNet {
    pub fn new(cfg: &TrainConfig) -> Result<Self> {
        let first = GrKanLayer::identity(cfg.dim, cfg.groups, cfg.m + 1, cfg.n)?;
        let second = GrKanLayer::with_activation(cfg.dim, cfg.d_out, cfg.groups, Activation::Swish, cfg.m, cfg.n)?;
        let init = InitSpec { target_activation: None, mc_samples: 100_000, seed: cfg.seed };
        let (second, _) = second.init_variance_preserving(&init)?;
        Ok(Self { first, second })
    }

    pub fn forward(&self, x: &ActivationTensor<f64>) -> Result<ActivationTensor<f64>> {
        self.second.forward(&self.first.forward(x)?)
    }

    /// `0.5·mean over rows of ‖y − t‖²`, then one gradient-descent step.
    pub fn step(
        &mut self,
        x: &ActivationTensor<f64>,
        target: &ActivationTensor<f64>,
        lr: f64,
        block_size: usize,
    ) -> Result<f64> {
        let h = self.first.forward(x)?;
        let y = self.second.forward(&h)?;
        let rows = x.shape().rows() as f64;
        let diff: Vec<f64> = y.data().iter().zip(target.data()).map(|(a, b)| a - b).collect();
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / rows;
        let up_y = ActivationTensor::new(y.shape(), diff.iter().map(|d| d / rows).collect())?;
        let g2 = self.second.backward_with(&h, &up_y, block_size, None)?;
        let g1 = self.first.backward_with(x, &g2.rational.d_x, block_size, None)?;
        self.second.apply_gradients(&g2, lr);
        self.first.apply_gradients(&g1, lr);
        if !loss.is_finite() {
            return Err(GrkanError::NonFiniteInput("training loss".into()));
        }
        Ok(loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub losses: Vec<f64>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("at least one step")
    }

    pub fn reduction(&self) -> f64 {
        1.0 - self.final_loss() / self.initial_loss()
    }
}

/// Synthetic data: standard-normal-ish inputs, targets from a smooth
/// nonlinear map of two fixed projections.
pub fn synthetic_task(cfg: &TrainConfig) -> Result<(ActivationTensor<f64>, ActivationTensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDA7A);
    let xs = Shape3::new(cfg.batch, cfg.seq, cfg.dim);
    let x = ActivationTensor::from_fn(xs, |_, _, _| rng.random_range(-1.5..1.5))?;
    let proj: Vec<f64> =
        (0..cfg.d_out * cfg.dim).map(|_| rng.random_range(-1.0..1.0) / (cfg.dim as f64).sqrt()).collect();
    let ts = Shape3::new(cfg.batch, cfg.seq, cfg.d_out);
    let target = ActivationTensor::from_fn(ts, |b, s, o| {
        let row = x.row(b * cfg.seq + s);
        let z: f64 = row.iter().zip(&proj[o * cfg.dim..(o + 1) * cfg.dim]).map(|(a, w)| a * w).sum();
        z.tanh() + 0.3 * z
    })?;
    Ok((x, target))
}

pub fn train_smoke(cfg: &TrainConfig) -> Result<TrainReport> {
    let (x, target) = synthetic_task(cfg)?;
    let mut net = TwoLayerNet::new(cfg)?;
    let mut losses = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        losses.push(net.step(&x, &target, cfg.lr, cfg.block_size)?);
    }
    let y = net.forward(&x)?;
    let rows = x.shape().rows() as f64;
    losses.push(0.5 * y.data().iter().zip(target.data()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / rows);
    Ok(TrainReport { config: *cfg, losses })
}
