//! The GR-KAN layer `y = W·F(x) + bias`, activation-mimicking coefficient
//! presets and variance-preserving weight initialization.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_blocked, with_workers, ExecutionPlan, GradBundle};
use crate::error::{GrkanError, Result};
use crate::rational::{eval_rational, forward_tensor, GroupCoeffs, GroupLayout, GroupRationalParams};
use crate::tensor::{ActivationTensor, Matrix, Shape3};

pub const FIT_DOMAIN: (f64, f64) = (-3.0, 3.0);
pub const FIT_POINTS: usize = 2001;
pub const FIT_TOLERANCE: f64 = 1e-2;
/// Fits whose least-squares system is worse conditioned than this are rejected.
pub const MAX_FIT_CONDITION: f64 = 1e13;

/// Activation a rational can be initialized to mimic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Swish,
    Gelu,
}

impl Activation {
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Swish => x / (1.0 + (-x).exp()),
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Swish => "swish",
            Activation::Gelu => "gelu",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = GrkanError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "swish" | "silu" => Ok(Activation::Swish),
            "gelu" => Ok(Activation::Gelu),
            other => Err(GrkanError::InvalidConfig(format!("unknown activation '{other}'"))),
        }
    }
}

/// Coefficient preset document, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientPreset {
    pub activation: Activation,
    /// Numerator degree.
    pub m: usize,
    /// Denominator coefficient count.
    pub n: usize,
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub fit_domain: [f64; 2],
    /// Max absolute error on the fit grid.
    pub fit_error: f64,
}

impl CoefficientPreset {
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| GrkanError::Format(e.to_string()))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let preset: Self = toml::from_str(s).map_err(|e| GrkanError::Format(e.to_string()))?;
        if preset.numerator.len() != preset.m + 1 || preset.denominator.len() != preset.n {
            return Err(GrkanError::Format(format!(
                "preset declares m={}, n={} but stores {} and {} coefficients",
                preset.m,
                preset.n,
                preset.numerator.len(),
                preset.denominator.len()
            )));
        }
        Ok(preset)
    }

    pub fn coeffs(&self) -> GroupCoeffs<'_, f64> {
        GroupCoeffs::new(&self.numerator, &self.denominator)
    }
}

/// Presets fitted for `(m, n) = (5, 4)` and committed under `presets/`.
pub fn builtin_preset(activation: Activation) -> Result<CoefficientPreset> {
    let text = match activation {
        Activation::Identity => include_str!("../presets/identity.toml"),
        Activation::Swish => include_str!("../presets/swish.toml"),
        Activation::Gelu => include_str!("../presets/gelu.toml"),
    };
    CoefficientPreset::from_toml_str(text)
}

fn fit_grid() -> impl Iterator<Item = f64> {
    let (lo, hi) = FIT_DOMAIN;
    let step = (hi - lo) / (FIT_POINTS - 1) as f64;
    (0..FIT_POINTS).map(move |k| lo + step * k as f64)
}

fn max_fit_error(activation: Activation, numerator: &[f64], denominator: &[f64]) -> f64 {
    let coeffs = GroupCoeffs::new(numerator, denominator);
    fit_grid().map(|x| (eval_rational(x, coeffs) - activation.eval(x)).abs()).fold(0.0, f64::max)
}

/// Least-squares rational fit of degree `m` numerator and `n` denominator
/// coefficients to `activation` on the fit grid.
///
/// The fit linearizes `P(x) ≈ f(x)·(1 + A(x))` and solves it by SVD; the
/// accepted result is then scored against the true `P/(1 + |A|)`.
pub fn fit_activation_coeffs(activation: Activation, m: usize, n: usize) -> Result<CoefficientPreset> {
    let domain = [FIT_DOMAIN.0, FIT_DOMAIN.1];
    if activation == Activation::Identity {
        if m < 1 {
            return Err(GrkanError::InvalidConfig("identity needs numerator degree >= 1".into()));
        }
        let mut numerator = vec![0.0; m + 1];
        numerator[1] = 1.0;
        let denominator = vec![0.0; n];
        let fit_error = max_fit_error(activation, &numerator, &denominator);
        return Ok(CoefficientPreset { activation, m, n, numerator, denominator, fit_domain: domain, fit_error });
    }

    let cols = m + 1 + n;
    let xs: Vec<f64> = fit_grid().collect();
    let design = DMatrix::from_fn(xs.len(), cols, |r, c| {
        let x = xs[r];
        if c <= m {
            x.powi(c as i32)
        } else {
            -activation.eval(x) * x.powi((c - m) as i32)
        }
    });
    let rhs = DVector::from_iterator(xs.len(), xs.iter().map(|&x| activation.eval(x)));
    let svd = design.svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let condition = if s_min > 0.0 { s_max / s_min } else { f64::INFINITY };
    if !condition.is_finite() || condition > MAX_FIT_CONDITION {
        return Err(GrkanError::FitFailure { reason: "singular least-squares system".into(), condition });
    }
    let solution = svd
        .solve(&rhs, s_max * f64::EPSILON)
        .map_err(|e| GrkanError::FitFailure { reason: e.to_string(), condition })?;
    let numerator: Vec<f64> = solution.iter().take(m + 1).copied().collect();
    let denominator: Vec<f64> = solution.iter().skip(m + 1).copied().collect();
    if !numerator.iter().chain(&denominator).all(|v| v.is_finite()) {
        return Err(GrkanError::FitFailure { reason: "non-finite coefficients".into(), condition });
    }
    let fit_error = max_fit_error(activation, &numerator, &denominator);
    if fit_error > FIT_TOLERANCE {
        return Err(GrkanError::FitFailure {
            reason: format!("max grid error {fit_error:.3e} exceeds {FIT_TOLERANCE:e}"),
            condition,
        });
    }
    Ok(CoefficientPreset { activation, m, n, numerator, denominator, fit_domain: domain, fit_error })
}

/// Monte-Carlo estimate of `E[F(x)²]` for `x ~ N(0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlphaEstimate {
    pub alpha: f64,
    pub std_error: f64,
}

/// Samples are spread round-robin over the groups.
pub fn estimate_alpha(params: &GroupRationalParams<f64>, samples: usize, seed: u64) -> Result<AlphaEstimate> {
    if samples < 2 {
        return Err(GrkanError::InvalidConfig("need at least two Monte-Carlo samples".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_g = params.num_groups();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for k in 0..samples {
        let x: f64 = StandardNormal.sample(&mut rng);
        let f = eval_rational(x, params.group(k % n_g));
        let v = f * f;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / samples as f64;
    let var = ((sum_sq / samples as f64) - mean * mean).max(0.0) * samples as f64 / (samples - 1) as f64;
    let alpha = mean;
    if !alpha.is_finite() {
        return Err(GrkanError::DegenerateAlpha(format!("alpha estimate is {alpha}")));
    }
    if alpha <= 0.0 {
        return Err(GrkanError::DegenerateAlpha("F(x) is identically zero under N(0,1)".into()));
    }
    Ok(AlphaEstimate { alpha, std_error: (var / samples as f64).sqrt() })
}

/// Variance-preserving initialization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    /// When set, coefficients are first replaced by the fitted preset.
    pub target_activation: Option<Activation>,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self { target_activation: None, mc_samples: 1_000_000, seed: 0 }
    }
}

/// A GR-KAN layer. `weight` is `d_out × d_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrKanLayer {
    pub params: GroupRationalParams<f64>,
    pub layout: GroupLayout,
    pub weight: Matrix<f64>,
    pub bias: Vec<f64>,
}

/// Gradients of a layer backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub rational: GradBundle<f64>,
    pub d_weight: Matrix<f64>,
    pub d_bias: Vec<f64>,
}

impl GrKanLayer {
    pub fn new(
        params: GroupRationalParams<f64>,
        layout: GroupLayout,
        weight: Matrix<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if layout.num_groups() != params.num_groups() {
            return Err(GrkanError::LayoutMismatch("params and layout disagree on groups".into()));
        }
        if weight.cols() != layout.feature_dim() {
            return Err(GrkanError::LayoutMismatch(format!(
                "weight has {} columns, d_in is {}",
                weight.cols(),
                layout.feature_dim()
            )));
        }
        if bias.len() != weight.rows() {
            return Err(GrkanError::LayoutMismatch(format!("bias length {} != d_out {}", bias.len(), weight.rows())));
        }
        if !weight.all_finite() || !bias.iter().all(|v| v.is_finite()) {
            return Err(GrkanError::NonFiniteInput("layer weight".into()));
        }
        Ok(Self { params, layout, weight, bias })
    }

    /// Layer whose rational mimics `activation` in every group, with zero
    /// weights and bias.
    pub fn with_activation(
        d_in: usize,
        d_out: usize,
        num_groups: usize,
        activation: Activation,
        m: usize,
        n: usize,
    ) -> Result<Self> {
        let fit = fit_activation_coeffs(activation, m, n)?;
        let layout = GroupLayout::new(d_in, num_groups)?;
        let params = GroupRationalParams::broadcast(num_groups, &fit.numerator, &fit.denominator)?;
        Self::new(params, layout, Matrix::zeros(d_out, d_in), vec![0.0; d_out])
    }

    /// `W = I`, identity rationals.
    pub fn identity(d: usize, num_groups: usize, num_coeffs: usize, den_coeffs: usize) -> Result<Self> {
        let layout = GroupLayout::new(d, num_groups)?;
        let params = GroupRationalParams::identity(num_groups, num_coeffs, den_coeffs)?;
        Self::new(params, layout, Matrix::identity(d), vec![0.0; d])
    }

    pub fn d_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn d_out(&self) -> usize {
        self.weight.rows()
    }

    /// Estimates alpha from the current coefficients and draws
    /// `W ~ N(0, 1/(alpha·d_in))`; then `Var[y] = d_in·Var[W]·E[F(x)²]`
    /// equals `Var[x] = 1`. Bias is reset to zero.
    pub fn init_variance_preserving(mut self, init: &InitSpec) -> Result<(Self, AlphaEstimate)> {
        if let Some(act) = init.target_activation {
            let fit = fit_activation_coeffs(act, self.params.numerator_degree(), self.params.den_coeffs())?;
            self.params = GroupRationalParams::broadcast(self.params.num_groups(), &fit.numerator, &fit.denominator)?;
        }
        let est = estimate_alpha(&self.params, init.mc_samples, init.seed)?;
        let std = (1.0 / (est.alpha * self.d_in() as f64)).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| GrkanError::DegenerateAlpha(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(init.seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
        for w in self.weight.data_mut() {
            *w = normal.sample(&mut rng);
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        Ok((self, est))
    }

    fn linear(&self, f: &ActivationTensor<f64>) -> Result<ActivationTensor<f64>> {
        let shape = f.shape();
        let d_in = self.d_in();
        let d_out = self.d_out();
        let mut out = vec![0.0; shape.rows() * d_out];
        out.par_chunks_mut(d_out).zip(f.data().par_chunks(d_in)).for_each(|(y, fx)| {
            for (o, dst) in y.iter_mut().enumerate() {
                let w = self.weight.row(o);
                *dst = w.iter().zip(fx).map(|(a, b)| a * b).sum::<f64>() + self.bias[o];
            }
        });
        ActivationTensor::new_unchecked(Shape3::new(shape.batch, shape.seq, d_out), out)
    }

    /// `y[b,s,:] = W·F(x[b,s,:]) + bias`.
    pub fn forward(&self, x: &ActivationTensor<f64>) -> Result<ActivationTensor<f64>> {
        self.check_input(x.shape())?;
        let f = forward_tensor(x, &self.params, &self.layout)?;
        self.linear(&f)
    }

    fn check_input(&self, shape: Shape3) -> Result<()> {
        if shape.feature != self.d_in() {
            return Err(GrkanError::LayoutMismatch(format!(
                "input feature dim {} != d_in {}",
                shape.feature,
                self.d_in()
            )));
        }
        Ok(())
    }

    pub fn backward(&self, x: &ActivationTensor<f64>, upstream_y: &ActivationTensor<f64>) -> Result<LayerGrads> {
        self.backward_with(x, upstream_y, ExecutionPlan::DEFAULT_BLOCK_SIZE, None)
    }

    /// Chain rule around the rational stage, which runs the blocked strategy.
    /// `d_weight` and `d_bias` are summed per row-block and combined in
    /// ascending block order.
    pub fn backward_with(
        &self,
        x: &ActivationTensor<f64>,
        upstream_y: &ActivationTensor<f64>,
        block_size: usize,
        workers: Option<usize>,
    ) -> Result<LayerGrads> {
        let shape = x.shape();
        self.check_input(shape)?;
        let d_in = self.d_in();
        let d_out = self.d_out();
        if upstream_y.shape() != Shape3::new(shape.batch, shape.seq, d_out) {
            return Err(GrkanError::LayoutMismatch(format!(
                "upstream shape {:?} does not match output shape {}x{}x{d_out}",
                upstream_y.shape(),
                shape.batch,
                shape.seq
            )));
        }
        let plan = ExecutionPlan::blocked(shape, self.layout, block_size)?.with_workers(workers);
        let f = forward_tensor(x, &self.params, &self.layout)?;

        let (up_f, partials) = with_workers(workers, || {
            let mut up_f = vec![0.0; shape.len()];
            let partials: Vec<(Vec<f64>, Vec<f64>)> = up_f
                .par_chunks_mut(block_size * d_in)
                .enumerate()
                .map(|(blk, up_chunk)| {
                    let mut dw = vec![0.0; d_out * d_in];
                    let mut db = vec![0.0; d_out];
                    let first_row = blk * block_size;
                    for (k, up_row) in up_chunk.chunks_mut(d_in).enumerate() {
                        let row = first_row + k;
                        let gy = upstream_y.row(row);
                        let fx = f.row(row);
                        for (o, &g) in gy.iter().enumerate() {
                            let w = self.weight.row(o);
                            for i in 0..d_in {
                                up_row[i] += g * w[i];
                                dw[o * d_in + i] += g * fx[i];
                            }
                            db[o] += g;
                        }
                    }
                    (dw, db)
                })
                .collect();
            (up_f, partials)
        })?;

        let mut d_weight = Matrix::zeros(d_out, d_in);
        let mut d_bias = vec![0.0; d_out];
        for (dw, db) in partials {
            for (dst, v) in d_weight.data_mut().iter_mut().zip(dw) {
                *dst += v;
            }
            for (dst, v) in d_bias.iter_mut().zip(db) {
                *dst += v;
            }
        }
        let up_f = ActivationTensor::new_unchecked(shape, up_f)?;
        let rational = backward_blocked(x, &up_f, &self.params, &plan)?;
        Ok(LayerGrads { rational, d_weight, d_bias })
    }

    /// Plain gradient-descent step.
    pub fn apply_gradients(&mut self, grads: &LayerGrads, lr: f64) {
        for (p, g) in self.params.numerator_mut().iter_mut().zip(grads.rational.d_a.data()) {
            *p -= lr * g;
        }
        for (p, g) in self.params.denominator_mut().iter_mut().zip(grads.rational.d_b.data()) {
            *p -= lr * g;
        }
        for (p, g) in self.weight.data_mut().iter_mut().zip(grads.d_weight.data()) {
            *p -= lr * g;
        }
        for (p, g) in self.bias.iter_mut().zip(&grads.d_bias) {
            *p -= lr * g;
        }
    }
}
