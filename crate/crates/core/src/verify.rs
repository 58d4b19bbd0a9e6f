//! Independent oracles, the finite-difference harness and the coefficient
//! gradient rounding experiment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_blocked, backward_naive, CombineMode, ExecutionPlan, GradBundle, Strategy};
use crate::error::{GrkanError, Result};
use crate::layer::GrKanLayer;
use crate::rational::{check_layout, GroupLayout, GroupRationalParams};
use crate::real::{Precision, Real};
use crate::stats::Summary;
use crate::tensor::{ActivationTensor, Matrix, Shape3};

/// `‖a − b‖∞ / ‖b‖∞`, zero when both are zero.
pub fn max_rel_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Mean absolute difference.
pub fn mean_abs_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64
}

pub fn to_f64_vec<T: Real>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Elementwise partials written directly from their definitions, with
/// explicit powers. Shares no code with the production kernel.
fn oracle_element(x: f64, up: f64, a: &[f64], b: &[f64], d_a: &mut [f64], d_b: &mut [f64]) -> f64 {
    let p: f64 = a.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
    let dp: f64 = a.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c * x.powi(i as i32 - 1)).sum();
    let big_a: f64 = b.iter().enumerate().map(|(j, c)| c * x.powi(j as i32 + 1)).sum();
    let dbig_a: f64 = b.iter().enumerate().map(|(j, c)| (j + 1) as f64 * c * x.powi(j as i32)).sum();
    let sign = if big_a > 0.0 {
        1.0
    } else if big_a < 0.0 {
        -1.0
    } else {
        0.0
    };
    let q = 1.0 + big_a.abs();
    let dq = sign * dbig_a;
    for (i, out) in d_a.iter_mut().enumerate() {
        *out = up * x.powi(i as i32) / q;
    }
    for (j, out) in d_b.iter_mut().enumerate() {
        *out = up * (-x.powi(j as i32 + 1) * sign * p / (q * q));
    }
    up * (dp / q - dq * p / (q * q))
}

type GroupSums = (Vec<f64>, Vec<f64>, Vec<(usize, f64)>);

/// Double-precision ground truth: for each group, the literal triple sum over
/// batch, sequence and in-group feature.
pub fn oracle_backward<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    layout: &GroupLayout,
) -> Result<GradBundle<f64>> {
    if x.shape() != upstream.shape() {
        return Err(GrkanError::LayoutMismatch("x and upstream shapes differ".into()));
    }
    let shape = x.shape();
    check_layout(shape.feature, params, layout)?;
    let xd = x.cast::<f64>();
    let ud = upstream.cast::<f64>();
    let pd = params.cast::<f64>();
    let n_g = layout.num_groups();
    let d_g = layout.group_width();
    let m1 = pd.num_coeffs();
    let nd = pd.den_coeffs();

    let per_group: Vec<GroupSums> = (0..n_g)
        .into_par_iter()
        .map(|g| {
            let coeffs = pd.group(g);
            let mut sum_a = vec![0.0; m1];
            let mut sum_b = vec![0.0; nd];
            let mut ea = vec![0.0; m1];
            let mut eb = vec![0.0; nd];
            let mut dx = Vec::with_capacity(shape.rows() * d_g);
            for bi in 0..shape.batch {
                for si in 0..shape.seq {
                    for k in 0..d_g {
                        let idx = xd.index(bi, si, g * d_g + k);
                        let v = oracle_element(
                            xd.data()[idx],
                            ud.data()[idx],
                            coeffs.numerator,
                            coeffs.denominator,
                            &mut ea,
                            &mut eb,
                        );
                        dx.push((idx, v));
                        for (s, e) in sum_a.iter_mut().zip(&ea) {
                            *s += e;
                        }
                        for (s, e) in sum_b.iter_mut().zip(&eb) {
                            *s += e;
                        }
                    }
                }
            }
            (sum_a, sum_b, dx)
        })
        .collect();

    let mut d_a = Matrix::zeros(n_g, m1);
    let mut d_b = Matrix::zeros(n_g, nd);
    let mut d_x = vec![0.0; shape.len()];
    for (g, (sa, sb, dx)) in per_group.into_iter().enumerate() {
        d_a.row_mut(g).copy_from_slice(&sa);
        d_b.row_mut(g).copy_from_slice(&sb);
        for (idx, v) in dx {
            d_x[idx] = v;
        }
    }
    Ok(GradBundle {
        d_x: ActivationTensor::new_unchecked(shape, d_x)?,
        d_a,
        d_b,
        strategy: Strategy::NaiveAtomic,
        precision: Precision::Double,
        combine_mode: CombineMode::DeterministicOrdered,
    })
}

/// One coordinate that exceeded the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdFailure {
    pub index: usize,
    pub label: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub checked: usize,
    /// Coordinates on the `|A(x)|` kink, left unchecked.
    pub non_smooth_skips: Vec<usize>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub failures: Vec<FdFailure>,
    pub passed: bool,
}

/// Per-coordinate error `|a − n| / max(|a|, |n|, 1)`.
pub fn fd_rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

/// Central differences of a scalar function at `theta`.
///
/// The step for coordinate `i` is `h·max(1, |θ_i|)`. Coordinates flagged in
/// `skip` are reported as non-smooth skips. The check passes only when every
/// checked coordinate's error is strictly below `tolerance`, so a zero
/// tolerance always fails.
pub fn finite_diff_check<F>(
    f: F,
    theta: &[f64],
    analytic: &[f64],
    skip: &[bool],
    labels: &dyn Fn(usize) -> String,
    h: f64,
    tolerance: f64,
) -> FdReport
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    assert_eq!(theta.len(), analytic.len());
    assert_eq!(theta.len(), skip.len());
    let results: Vec<Option<(f64, f64)>> = (0..theta.len())
        .into_par_iter()
        .map(|i| {
            if skip[i] {
                return None;
            }
            let step = h * theta[i].abs().max(1.0);
            let mut probe = theta.to_vec();
            probe[i] = theta[i] + step;
            let plus = f(&probe);
            probe[i] = theta[i] - step;
            let minus = f(&probe);
            let numeric = (plus - minus) / (2.0 * step);
            Some((numeric, fd_rel_error(analytic[i], numeric)))
        })
        .collect();

    let mut report = FdReport {
        checked: 0,
        non_smooth_skips: Vec::new(),
        max_rel_error: 0.0,
        tolerance,
        failures: Vec::new(),
        passed: false,
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            None => report.non_smooth_skips.push(i),
            Some((numeric, rel)) => {
                report.checked += 1;
                report.max_rel_error = report.max_rel_error.max(rel);
                if rel.is_nan() || rel >= tolerance {
                    report.failures.push(FdFailure {
                        index: i,
                        label: labels(i),
                        analytic: analytic[i],
                        numeric,
                        rel_error: rel,
                    });
                }
            }
        }
    }
    report.passed = report.failures.is_empty();
    report
}

/// `|A(x)|` below this is treated as the kink of the safe denominator.
pub const KINK_THRESHOLD: f64 = 1e-9;

fn big_a(x: f64, den: &[f64]) -> f64 {
    den.iter().enumerate().map(|(j, c)| c * x.powi(j as i32 + 1)).sum()
}

/// Which flattened parameter a coordinate of [`layer_gradient_check`] refers to.
#[derive(Debug, Clone, Copy)]
struct LayerCoords {
    n_x: usize,
    n_a: usize,
    n_b: usize,
    n_w: usize,
}

impl LayerCoords {
    fn label(&self, i: usize) -> String {
        let mut i = i;
        for (name, len) in [("x", self.n_x), ("a", self.n_a), ("b", self.n_b), ("W", self.n_w)] {
            if i < len {
                return format!("{name}[{i}]");
            }
            i -= len;
        }
        format!("bias[{i}]")
    }
}

/// Finite-difference check of every gradient of a GR-KAN layer for the scalar
/// loss `L = Σ upstream_y ⊙ layer(x)`: input, numerator, denominator, weight
/// and bias coordinates, flattened in that order.
pub fn layer_gradient_check(
    layer: &GrKanLayer,
    x: &ActivationTensor<f64>,
    upstream_y: &ActivationTensor<f64>,
    h: f64,
    tolerance: f64,
) -> Result<FdReport> {
    let grads = layer.backward(x, upstream_y)?;
    let shape = x.shape();
    let coords = LayerCoords {
        n_x: shape.len(),
        n_a: layer.params.numerator().len(),
        n_b: layer.params.denominator().len(),
        n_w: layer.weight.data().len(),
    };

    let mut theta = Vec::new();
    theta.extend_from_slice(x.data());
    theta.extend_from_slice(layer.params.numerator());
    theta.extend_from_slice(layer.params.denominator());
    theta.extend_from_slice(layer.weight.data());
    theta.extend_from_slice(&layer.bias);

    let mut analytic = Vec::with_capacity(theta.len());
    analytic.extend_from_slice(grads.rational.d_x.data());
    analytic.extend_from_slice(grads.rational.d_a.data());
    analytic.extend_from_slice(grads.rational.d_b.data());
    analytic.extend_from_slice(grads.d_weight.data());
    analytic.extend_from_slice(&grads.d_bias);

    let mut skip = vec![false; theta.len()];
    let d_g = layer.layout.group_width();
    let nd = layer.params.den_coeffs();
    for (idx, &xv) in x.data().iter().enumerate() {
        let g = (idx % shape.feature) / d_g;
        let den = layer.params.group(g).denominator;
        if big_a(xv, den).abs() < KINK_THRESHOLD {
            skip[idx] = true;
            let base = coords.n_x + coords.n_a + g * nd;
            skip[base..base + nd].iter_mut().for_each(|s| *s = true);
        }
    }

    let template = layer.clone();
    let loss = |p: &[f64]| -> f64 {
        let mut l = template.clone();
        let mut off = coords.n_x;
        l.params.numerator_mut().copy_from_slice(&p[off..off + coords.n_a]);
        off += coords.n_a;
        l.params.denominator_mut().copy_from_slice(&p[off..off + coords.n_b]);
        off += coords.n_b;
        l.weight.data_mut().copy_from_slice(&p[off..off + coords.n_w]);
        off += coords.n_w;
        l.bias.copy_from_slice(&p[off..]);
        let xin = ActivationTensor::new_unchecked(shape, p[..coords.n_x].to_vec()).expect("shape");
        let y = l.forward(&xin).expect("forward");
        y.data().iter().zip(upstream_y.data()).map(|(a, b)| a * b).sum()
    };
    Ok(finite_diff_check(loss, &theta, &analytic, &skip, &|i| coords.label(i), h, tolerance))
}

/// Shape and degrees of one rounding experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundingShape {
    pub batch: usize,
    pub seq: usize,
    pub dim: usize,
    pub groups: usize,
    pub num_coeffs: usize,
    pub den_coeffs: usize,
}

impl RoundingShape {
    pub const FULL: Self = Self { batch: 1024, seq: 197, dim: 768, groups: 8, num_coeffs: 6, den_coeffs: 4 };
    pub const DESK: Self = Self { batch: 256, seq: 64, dim: 256, groups: 8, num_coeffs: 6, den_coeffs: 4 };

    pub fn tensor_shape(&self) -> Shape3 {
        Shape3::new(self.batch, self.seq, self.dim)
    }
}

/// MAE statistics of both single-pass strategies against the f64 oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundingReport {
    pub shape: RoundingShape,
    pub precision: Precision,
    pub block_size: usize,
    pub passes: usize,
    pub seed: u64,
    pub mae_da_naive: f64,
    pub mae_da_blocked: f64,
    pub mae_db_naive: f64,
    pub mae_db_blocked: f64,
    /// Half-widths in the order (da naive, da blocked, db naive, db blocked);
    /// `None` with a single pass.
    pub ci95_half_widths: Option<[f64; 4]>,
    /// Sample variances across passes, same order; zero with a single pass.
    pub variances: [f64; 4],
    pub insufficient_passes: bool,
    /// Per-pass MAEs, each `[da naive, da blocked, db naive, db blocked]`.
    pub per_pass: Vec<[f64; 4]>,
}

impl RoundingReport {
    pub fn ratio_da(&self) -> f64 {
        self.mae_da_blocked / self.mae_da_naive
    }

    pub fn ratio_db(&self) -> f64 {
        self.mae_db_blocked / self.mae_db_naive
    }

    /// Blocked MAE strictly below naive MAE on every pass, for both gradients.
    pub fn per_pass_dominance(&self) -> bool {
        self.per_pass.iter().all(|p| p[1] < p[0] && p[3] < p[2])
    }
}

/// Seed of pass `i`, derived from the master seed.
pub fn pass_seed(master: u64, pass: usize) -> u64 {
    master ^ (pass as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One pass's standard-normal instance.
pub fn normal_instance<T: Real>(
    shape: &RoundingShape,
    seed: u64,
) -> Result<(ActivationTensor<T>, ActivationTensor<T>, GroupRationalParams<T>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || T::from_f64(StandardNormal.sample(&mut rng));
    let ts = shape.tensor_shape();
    let x = ActivationTensor::new_unchecked(ts, (0..ts.len()).map(|_| draw()).collect())?;
    let up = ActivationTensor::new_unchecked(ts, (0..ts.len()).map(|_| draw()).collect())?;
    let num = (0..shape.groups * shape.num_coeffs).map(|_| draw()).collect();
    let den = (0..shape.groups * shape.den_coeffs).map(|_| draw()).collect();
    let params = GroupRationalParams::new(shape.groups, shape.num_coeffs, shape.den_coeffs, num, den)?;
    Ok((x, up, params))
}

/// Rounding experiment in precision `T`. Passes run sequentially; each pass
/// parallelizes internally.
pub fn rounding_experiment_in<T: Real>(
    shape: RoundingShape,
    passes: usize,
    seed: u64,
    block_size: usize,
) -> Result<RoundingReport> {
    if passes == 0 {
        return Err(GrkanError::InvalidConfig("need at least one pass".into()));
    }
    let layout = GroupLayout::new(shape.dim, shape.groups)?;
    let ts = shape.tensor_shape();
    let naive_plan = ExecutionPlan::naive(ts, layout, block_size)?;
    let blocked_plan = ExecutionPlan::blocked(ts, layout, block_size)?;
    let mut per_pass = Vec::with_capacity(passes);
    for pass in 0..passes {
        let (x, up, params) = normal_instance::<T>(&shape, pass_seed(seed, pass))?;
        let oracle = oracle_backward(&x, &up, &params, &layout)?;
        let naive = backward_naive(&x, &up, &params, &naive_plan)?;
        let blocked = backward_blocked(&x, &up, &params, &blocked_plan)?;
        per_pass.push([
            mean_abs_error(&to_f64_vec(naive.d_a.data()), oracle.d_a.data()),
            mean_abs_error(&to_f64_vec(blocked.d_a.data()), oracle.d_a.data()),
            mean_abs_error(&to_f64_vec(naive.d_b.data()), oracle.d_b.data()),
            mean_abs_error(&to_f64_vec(blocked.d_b.data()), oracle.d_b.data()),
        ]);
    }
    let summaries: Vec<Summary> =
        (0..4).map(|k| Summary::of(&per_pass.iter().map(|p| p[k]).collect::<Vec<_>>())).collect();
    let insufficient = passes < 2;
    let ci = if insufficient { None } else { Some([0, 1, 2, 3].map(|k| summaries[k].ci95_half_width.unwrap_or(0.0))) };
    Ok(RoundingReport {
        shape,
        precision: T::PRECISION,
        block_size,
        passes,
        seed,
        mae_da_naive: summaries[0].mean,
        mae_da_blocked: summaries[1].mean,
        mae_db_naive: summaries[2].mean,
        mae_db_blocked: summaries[3].mean,
        ci95_half_widths: ci,
        variances: [0, 1, 2, 3].map(|k| summaries[k].variance),
        insufficient_passes: insufficient,
        per_pass,
    })
}

/// Single-precision rounding experiment with the default block size.
pub fn rounding_experiment(shape: RoundingShape, passes: usize, seed: u64) -> Result<RoundingReport> {
    rounding_experiment_in::<f32>(shape, passes, seed, ExecutionPlan::DEFAULT_BLOCK_SIZE)
}

/// Random small layer instance for gradient checks: `B, N ≤ 4`, `d ≤ 16`,
/// `n_g ∈ {1, 2, 4}`, six numerator and four denominator coefficients.
pub fn random_layer_instance(seed: u64) -> Result<(GrKanLayer, ActivationTensor<f64>, ActivationTensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = [1usize, 2, 4][rng.random_range(0..3)];
    let dim = groups * rng.random_range(1..=16 / groups);
    let d_out = rng.random_range(1..=8);
    let shape = Shape3::new(rng.random_range(1..=4), rng.random_range(1..=4), dim);
    let num = (0..groups * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let den = (0..groups * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
    let params = GroupRationalParams::new(groups, 6, 4, num, den)?;
    let weight = Matrix::from_vec(d_out, dim, (0..d_out * dim).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let bias = (0..d_out).map(|_| rng.random_range(-0.5..0.5)).collect();
    let layer = GrKanLayer::new(params, GroupLayout::new(dim, groups)?, weight, bias)?;
    let x = ActivationTensor::from_fn(shape, |_, _, _| rng.random_range(-2.0..2.0))?;
    let up =
        ActivationTensor::from_fn(Shape3::new(shape.batch, shape.seq, d_out), |_, _, _| rng.random_range(-1.0..1.0))?;
    Ok((layer, x, up))
}

/// `(x, upstream, params, layout, block_size)`.
pub type StrategyInstance<T> = (ActivationTensor<T>, ActivationTensor<T>, GroupRationalParams<T>, GroupLayout, usize);

/// Random small rational-only instance with a matching blocked block size.
pub fn random_strategy_instance<T: Real>(seed: u64) -> Result<StrategyInstance<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = [1usize, 2, 4, 8][rng.random_range(0..4)];
    let dim = groups * rng.random_range(1..=8);
    let shape = Shape3::new(rng.random_range(1..=6), rng.random_range(1..=12), dim);
    let block_size = rng.random_range(1..=shape.rows() + 2);
    let mut draw = |lo: f64, hi: f64| T::from_f64(rng.random_range(lo..hi));
    let x = ActivationTensor::new(shape, (0..shape.len()).map(|_| draw(-2.0, 2.0)).collect())?;
    let up = ActivationTensor::new(shape, (0..shape.len()).map(|_| draw(-1.0, 1.0)).collect())?;
    let num = (0..groups * 6).map(|_| draw(-1.0, 1.0)).collect();
    let den = (0..groups * 4).map(|_| draw(-1.0, 1.0)).collect();
    let params = GroupRationalParams::new(groups, 6, 4, num, den)?;
    Ok((x, up, params, GroupLayout::new(dim, groups)?, block_size))
}
