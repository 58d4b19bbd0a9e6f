//! Global-memory access accounting for both backward strategies.
//!
//! One access is one element-sized load or store. An atomic add counts as one
//! load plus one store and is additionally tallied in `rmw_atomic`.

use std::ops::Range;
use std::sync::atomic::{AtomicU32, Ordering};

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::backward::{backward_blocked_with, backward_naive_with, ExecutionPlan, GradBundle, Strategy};
use crate::error::{GrkanError, Result};
use crate::rational::GroupRationalParams;
use crate::real::Real;
use crate::tensor::ActivationTensor;

/// Receiver for modeled memory traffic. Kernels are generic over the sink so
/// the uninstrumented path compiles to nothing.
pub trait AccessSink: Send + Sync + Sized {
    fn read(&mut self, n: usize);
    fn write(&mut self, n: usize);
    /// `n` atomic read-modify-writes.
    fn atomic_rmw(&mut self, n: usize);
    /// Marks a contiguous range of flattened elements as consumed by the
    /// current block.
    fn visit(&mut self, elements: Range<usize>);
    /// Fresh sink for a parallel worker.
    fn fork(&self) -> Self;
    fn merge(&mut self, other: Self);
}

/// Sink that discards everything.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoAccess;

impl AccessSink for NoAccess {
    #[inline(always)]
    fn read(&mut self, _: usize) {}
    #[inline(always)]
    fn write(&mut self, _: usize) {}
    #[inline(always)]
    fn atomic_rmw(&mut self, _: usize) {}
    #[inline(always)]
    fn visit(&mut self, _: Range<usize>) {}
    fn fork(&self) -> Self {
        NoAccess
    }
    fn merge(&mut self, _: Self) {}
}

/// Per-worker counters, optionally recording per-element coverage.
#[derive(Debug)]
pub struct AccessCounter<'a> {
    pub reads: u64,
    pub writes: u64,
    pub rmw_atomic: u64,
    coverage: Option<&'a [AtomicU32]>,
}

impl<'a> AccessCounter<'a> {
    pub fn new(coverage: Option<&'a [AtomicU32]>) -> Self {
        Self { reads: 0, writes: 0, rmw_atomic: 0, coverage }
    }
}

impl AccessSink for AccessCounter<'_> {
    fn read(&mut self, n: usize) {
        self.reads += n as u64;
    }
    fn write(&mut self, n: usize) {
        self.writes += n as u64;
    }
    fn atomic_rmw(&mut self, n: usize) {
        self.reads += n as u64;
        self.writes += n as u64;
        self.rmw_atomic += n as u64;
    }
    fn visit(&mut self, elements: Range<usize>) {
        if let Some(cov) = self.coverage {
            for e in elements {
                cov[e].fetch_add(1, Ordering::Relaxed);
            }
        }
    }
    fn fork(&self) -> Self {
        Self::new(self.coverage)
    }
    fn merge(&mut self, other: Self) {
        self.reads += other.reads;
        self.writes += other.writes;
        self.rmw_atomic += other.rmw_atomic;
    }
}

/// Counted traffic of one instrumented backward run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessReport {
    pub strategy: Strategy,
    pub reads: u64,
    pub writes: u64,
    pub rmw_atomic: u64,
    pub total: u64,
    /// Closed-form prediction; `None` when the blocked grid has a tail.
    pub predicted_total: Option<u64>,
    /// Every element was consumed by exactly one block.
    pub coverage_exact: bool,
}

impl AccessReport {
    pub fn matches_prediction(&self) -> bool {
        self.predicted_total == Some(self.total)
    }
}

fn mul_checked(factors: &[u64], what: &'static str) -> Result<u64> {
    factors.iter().try_fold(1u64, |acc, &f| acc.checked_mul(f)).ok_or(GrkanError::CountOverflow(what))
}

fn require_positive(values: &[(u64, &str)]) -> Result<()> {
    for (v, name) in values {
        if *v == 0 {
            return Err(GrkanError::InvalidConfig(format!("{name} must be positive")));
        }
    }
    Ok(())
}

/// `3·(coeffs + 1)·B·N·d`, where `coeffs` is the learnable coefficient count
/// per group.
pub fn predict_accesses_naive(batch: u64, seq: u64, dim: u64, coeffs: u64) -> Result<u64> {
    require_positive(&[(batch, "batch"), (seq, "seq"), (dim, "dim")])?;
    let per_elem = coeffs
        .checked_add(1)
        .and_then(|c| c.checked_mul(3))
        .ok_or(GrkanError::CountOverflow("naive access prediction"))?;
    mul_checked(&[per_elem, batch, seq, dim], "naive access prediction")
}

/// `3·(coeffs / (S_block·d_g) + 1)·B·N·d`, evaluated as an exact rational.
/// Only defined for exact tiling (`S_block | B·N`, `d_g | d`).
pub fn predict_accesses_blocked(
    batch: u64,
    seq: u64,
    dim: u64,
    block_size: u64,
    group_width: u64,
    coeffs: u64,
) -> Result<u64> {
    require_positive(&[
        (batch, "batch"),
        (seq, "seq"),
        (dim, "dim"),
        (block_size, "block size"),
        (group_width, "group width"),
    ])?;
    if !dim.is_multiple_of(group_width) {
        return Err(GrkanError::LayoutMismatch(format!("group width {group_width} does not divide dim {dim}")));
    }
    let rows = mul_checked(&[batch, seq], "blocked access prediction")?;
    if rows % block_size != 0 {
        return Err(GrkanError::TailNotCovered(format!("block size {block_size} does not divide B*N = {rows}")));
    }
    let elements = mul_checked(&[rows, dim], "blocked access prediction")? as u128;
    let block_elems = (block_size as u128) * (group_width as u128);
    let total =
        (Ratio::new(coeffs as u128, block_elems) + Ratio::from_integer(1u128)) * Ratio::from_integer(3 * elements);
    if !total.is_integer() {
        return Err(GrkanError::TailNotCovered("non-integral blocked count".into()));
    }
    u64::try_from(total.to_integer()).map_err(|_| GrkanError::CountOverflow("blocked access prediction"))
}

/// Bounds for a blocked grid whose last row-block is partial: the counts with
/// `⌊B·N / S_block⌋` and `⌈B·N / S_block⌉` row-blocks.
pub fn blocked_access_bounds(
    batch: u64,
    seq: u64,
    dim: u64,
    block_size: u64,
    group_width: u64,
    coeffs: u64,
) -> Result<(u64, u64)> {
    require_positive(&[
        (batch, "batch"),
        (seq, "seq"),
        (dim, "dim"),
        (block_size, "block size"),
        (group_width, "group width"),
    ])?;
    let rows = mul_checked(&[batch, seq], "blocked access bounds")?;
    let elements = mul_checked(&[rows, dim], "blocked access bounds")?;
    let groups = dim / group_width;
    let base = mul_checked(&[3, elements], "blocked access bounds")?;
    let per_block = mul_checked(&[3, coeffs, groups], "blocked access bounds")?;
    let lo = base + mul_checked(&[per_block, rows / block_size], "blocked access bounds")?;
    let hi = base + mul_checked(&[per_block, rows.div_ceil(block_size)], "blocked access bounds")?;
    Ok((lo, hi))
}

/// Closed-form prediction for a plan, when one exists.
pub fn predict_for_plan<T: Real>(
    x: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<Option<u64>> {
    let s = x.shape();
    let coeffs = params.coefficient_count() as u64;
    match plan.strategy {
        Strategy::NaiveAtomic => {
            predict_accesses_naive(s.batch as u64, s.seq as u64, s.feature as u64, coeffs).map(Some)
        }
        Strategy::BlockedReduction => match predict_accesses_blocked(
            s.batch as u64,
            s.seq as u64,
            s.feature as u64,
            plan.block_size as u64,
            plan.layout.group_width() as u64,
            coeffs,
        ) {
            Ok(v) => Ok(Some(v)),
            Err(GrkanError::TailNotCovered(_)) => Ok(None),
            Err(e) => Err(e),
        },
    }
}

/// Runs the plan's strategy while counting every modeled global access.
pub fn instrumented_backward<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<(GradBundle<T>, AccessReport)> {
    let coverage: Vec<AtomicU32> = (0..x.shape().len()).map(|_| AtomicU32::new(0)).collect();
    let mut counter = AccessCounter::new(Some(&coverage));
    let grads = match plan.strategy {
        Strategy::NaiveAtomic => backward_naive_with(x, upstream, params, plan, &mut counter)?,
        Strategy::BlockedReduction => backward_blocked_with(x, upstream, params, plan, &mut counter)?,
    };
    let coverage_exact = coverage.iter().all(|c| c.load(Ordering::Relaxed) == 1);
    let report = AccessReport {
        strategy: plan.strategy,
        reads: counter.reads,
        writes: counter.writes,
        rmw_atomic: counter.rmw_atomic,
        total: counter.reads + counter.writes,
        predicted_total: predict_for_plan(x, params, plan)?,
        coverage_exact,
    };
    Ok((grads, report))
}

/// Inputs to the parameter-count and FLOPs formulas of the three layer types.
///
/// `m` and `n` are polynomial *degrees* for the GR-KAN row. With six numerator
/// and four denominator coefficients the degree reading is `m = 5, n = 4`;
/// pass `m = 6` for the coefficient-count reading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopsConfig {
    pub d_in: u64,
    pub d_out: u64,
    pub func_flops: u64,
    pub spline_order: u64,
    pub intervals: u64,
    pub m: u64,
    pub n: u64,
    pub groups: u64,
}

impl FlopsConfig {
    fn check_dims(&self) -> Result<()> {
        require_positive(&[(self.d_in, "d_in"), (self.d_out, "d_out")])
    }

    fn io(&self) -> Result<u64> {
        mul_checked(&[self.d_in, self.d_out], "d_in * d_out")
    }
}

fn add_checked(terms: &[u64], what: &'static str) -> Result<u64> {
    terms.iter().try_fold(0u64, |acc, &t| acc.checked_add(t)).ok_or(GrkanError::CountOverflow(what))
}

/// `FuncFLOPs·d_out + 2·d_in·d_out`
pub fn flops_mlp(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    add_checked(
        &[mul_checked(&[cfg.func_flops, cfg.d_out], "mlp flops")?, mul_checked(&[2, cfg.io()?], "mlp flops")?],
        "mlp flops",
    )
}

/// `9K·(G + 1.5K) + 2G − 2.5K + 3`, always an integer: it equals
/// `9KG + K(27K − 5)/2 + 2G + 3`.
pub fn kan_edge_bracket(spline_order: u64, intervals: u64) -> Result<u64> {
    let k = spline_order;
    let g = intervals;
    let half_term = if k == 0 { 0 } else { mul_checked(&[k, 27 * k - 5], "kan bracket")? / 2 };
    add_checked(
        &[mul_checked(&[9, k, g], "kan bracket")?, half_term, mul_checked(&[2, g], "kan bracket")?, 3],
        "kan bracket",
    )
}

/// `FuncFLOPs·d_in + d_in·d_out·[9K(G + 1.5K) + 2G − 2.5K + 3]`
pub fn flops_kan(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    let bracket = kan_edge_bracket(cfg.spline_order, cfg.intervals)?;
    add_checked(
        &[mul_checked(&[cfg.func_flops, cfg.d_in], "kan flops")?, mul_checked(&[cfg.io()?, bracket], "kan flops")?],
        "kan flops",
    )
}

/// `(2m + 2n + 3)·d_in + 2·d_in·d_out`
pub fn flops_grkan(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    let act = add_checked(
        &[mul_checked(&[2, cfg.m], "grkan flops")?, mul_checked(&[2, cfg.n], "grkan flops")?, 3],
        "grkan flops",
    )?;
    add_checked(
        &[mul_checked(&[act, cfg.d_in], "grkan flops")?, mul_checked(&[2, cfg.io()?], "grkan flops")?],
        "grkan flops",
    )
}

/// `d_in·d_out + d_out`
pub fn params_mlp(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    add_checked(&[cfg.io()?, cfg.d_out], "mlp params")
}

/// `d_in·d_out·(G + K + 3) + d_out`
pub fn params_kan(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    let per_edge = add_checked(&[cfg.intervals, cfg.spline_order, 3], "kan params")?;
    add_checked(&[mul_checked(&[cfg.io()?, per_edge], "kan params")?, cfg.d_out], "kan params")
}

/// `d_in·d_out + d_out + (m + n·g)`, transcribed as tabulated.
pub fn params_grkan(cfg: &FlopsConfig) -> Result<u64> {
    cfg.check_dims()?;
    add_checked(&[cfg.io()?, cfg.d_out, cfg.m, mul_checked(&[cfg.n, cfg.groups], "grkan params")?], "grkan params")
}
