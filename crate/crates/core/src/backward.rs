//! Whole-tensor backward passes for the group-wise rational.
//!
//! [`backward_naive`] models the scatter strategy: every element adds its
//! coefficient contributions straight into one shared accumulator per
//! coefficient, one atomic read-modify-write at a time, in ascending
//! flattened element order. [`backward_blocked`] partitions the tensor into a
//! `T × n_g` grid of blocks (`S_block` rows of one group each); a block
//! reduces its contributions with a pairwise tree into private partials and
//! only the partials are combined into the shared result.
//!
//! Both strategies produce bitwise-identical `d_x`; only `d_a`/`d_b` rounding
//! differs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::access::{AccessSink, NoAccess};
use crate::error::{GrkanError, Result};
use crate::rational::{check_layout, element_grads_into, GroupLayout, GroupRationalParams};
use crate::real::{with_fma, AtomicReal, Precision, Real};
use crate::tensor::{ActivationTensor, Matrix, Shape3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    NaiveAtomic,
    BlockedReduction,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::NaiveAtomic => f.write_str("naive_atomic"),
            Strategy::BlockedReduction => f.write_str("blocked_reduction"),
        }
    }
}

/// How per-block partials reach the shared coefficient gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    /// Partials are added in ascending `(row, group)` block order.
    DeterministicOrdered,
    /// Blocks add their partials atomically as they finish.
    UnorderedScatter,
}

/// Grid geometry for one backward launch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub block_size: usize,
    pub layout: GroupLayout,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub strategy: Strategy,
    pub combine_mode: CombineMode,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

impl ExecutionPlan {
    pub const DEFAULT_BLOCK_SIZE: usize = 256;

    /// 1D grid of `⌈B·N·d / S_block⌉` blocks.
    pub fn naive(shape: Shape3, layout: GroupLayout, block_size: usize) -> Result<Self> {
        let block_size = positive_block(block_size)?;
        Ok(Self {
            block_size,
            layout,
            grid_rows: shape.len().div_ceil(block_size),
            grid_cols: 1,
            strategy: Strategy::NaiveAtomic,
            combine_mode: CombineMode::DeterministicOrdered,
            workers: None,
        })
    }

    /// 2D grid of `⌈B·N / S_block⌉ × n_g` blocks.
    pub fn blocked(shape: Shape3, layout: GroupLayout, block_size: usize) -> Result<Self> {
        let block_size = positive_block(block_size)?;
        Ok(Self {
            block_size,
            layout,
            grid_rows: shape.rows().div_ceil(block_size),
            grid_cols: layout.num_groups(),
            strategy: Strategy::BlockedReduction,
            combine_mode: CombineMode::DeterministicOrdered,
            workers: None,
        })
    }

    pub fn for_strategy(strategy: Strategy, shape: Shape3, layout: GroupLayout, block_size: usize) -> Result<Self> {
        match strategy {
            Strategy::NaiveAtomic => Self::naive(shape, layout, block_size),
            Strategy::BlockedReduction => Self::blocked(shape, layout, block_size),
        }
    }

    pub fn with_combine_mode(mut self, mode: CombineMode) -> Self {
        self.combine_mode = mode;
        self
    }

    pub fn with_workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn block_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    /// Checks that the grid tiles a tensor of `shape` exactly once.
    pub fn validate(&self, shape: Shape3) -> Result<()> {
        if self.block_size == 0 {
            return Err(GrkanError::GridGeometryInvalid("block size is zero".into()));
        }
        if self.layout.feature_dim() != shape.feature {
            return Err(GrkanError::LayoutMismatch(format!(
                "plan feature dim {} != tensor feature dim {}",
                self.layout.feature_dim(),
                shape.feature
            )));
        }
        let (rows, cols) = match self.strategy {
            Strategy::NaiveAtomic => (shape.len().div_ceil(self.block_size), 1),
            Strategy::BlockedReduction => (shape.rows().div_ceil(self.block_size), self.layout.num_groups()),
        };
        if (self.grid_rows, self.grid_cols) != (rows, cols) {
            return Err(GrkanError::GridGeometryInvalid(format!(
                "{} grid {}x{} does not tile the tensor (expected {rows}x{cols})",
                self.strategy, self.grid_rows, self.grid_cols
            )));
        }
        Ok(())
    }
}

fn positive_block(block_size: usize) -> Result<usize> {
    if block_size == 0 {
        Err(GrkanError::GridGeometryInvalid("block size must be positive".into()))
    } else {
        Ok(block_size)
    }
}

/// Output of a backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle<T> {
    pub d_x: ActivationTensor<T>,
    pub d_a: Matrix<T>,
    pub d_b: Matrix<T>,
    pub strategy: Strategy,
    pub precision: Precision,
    pub combine_mode: CombineMode,
}

impl<T: Real> GradBundle<T> {
    /// Bitwise equality of every gradient entry.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        fn bits<T: Real>(v: &[T]) -> Vec<u8> {
            let mut out = Vec::with_capacity(v.len() * 8);
            v.iter().for_each(|x| x.write_le(&mut out));
            out
        }
        bits(self.d_x.data()) == bits(other.d_x.data())
            && bits(self.d_a.data()) == bits(other.d_a.data())
            && bits(self.d_b.data()) == bits(other.d_b.data())
    }
}

/// Private partial sums of one block, identified by its linear id
/// `row * n_g + group`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPartial<T> {
    pub block_id: usize,
    pub d_a: Vec<T>,
    pub d_b: Vec<T>,
}

/// Runs `f` on a dedicated pool of `workers` threads, or inline on the
/// global pool.
pub(crate) fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(GrkanError::InvalidConfig("worker count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| GrkanError::Resource(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn check_inputs<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
    expected: Strategy,
) -> Result<()> {
    if x.shape() != upstream.shape() {
        return Err(GrkanError::LayoutMismatch(format!(
            "x shape {:?} != upstream shape {:?}",
            x.shape(),
            upstream.shape()
        )));
    }
    if plan.strategy != expected {
        return Err(GrkanError::InvalidConfig(format!("plan is for {}, called {expected}", plan.strategy)));
    }
    check_layout(x.shape().feature, params, &plan.layout)?;
    plan.validate(x.shape())
}

fn check_accumulated<T: Real>(d_a: &Matrix<T>, d_b: &Matrix<T>) -> Result<()> {
    if d_a.all_finite() && d_b.all_finite() {
        Ok(())
    } else {
        Err(GrkanError::AccumulationOverflow("coefficient gradient became non-finite".into()))
    }
}

/// Scatter strategy: one atomic add per element and coefficient.
pub fn backward_naive<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<GradBundle<T>> {
    backward_naive_with(x, upstream, params, plan, &mut NoAccess)
}

pub(crate) fn backward_naive_with<T: Real, S: AccessSink>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
    sink: &mut S,
) -> Result<GradBundle<T>> {
    check_inputs(x, upstream, params, plan, Strategy::NaiveAtomic)?;
    let shape = x.shape();
    let len = shape.len();
    let d = shape.feature;
    let d_g = plan.layout.group_width();
    let n_g = params.num_groups();
    let m1 = params.num_coeffs();
    let nd = params.den_coeffs();
    let coeff_count = m1 + nd;

    let acc_a: Vec<T::Atomic> = (0..n_g * m1).map(|_| T::Atomic::new(T::ZERO)).collect();
    let acc_b: Vec<T::Atomic> = (0..n_g * nd).map(|_| T::Atomic::new(T::ZERO)).collect();
    let mut scratch_a = vec![T::ZERO; m1];
    let mut scratch_b = vec![T::ZERO; nd];
    let mut d_x = vec![T::ZERO; len];
    let xs = x.data();
    let ups = upstream.data();

    with_fma(
        #[inline(always)]
        || {
            for blk in 0..plan.grid_rows {
                let start = blk * plan.block_size;
                let end = (start + plan.block_size).min(len);
                // load X_i, dO_i
                sink.read(2 * (end - start));
                let mut feature = start % d;
                for e in start..end {
                    let g = feature / d_g;
                    let coeffs = params.group(g);
                    sink.read(coeff_count);
                    sink.visit(e..e + 1);
                    d_x[e] = element_grads_into(xs[e], ups[e], coeffs, &mut scratch_a, &mut scratch_b);
                    let row_a = &acc_a[g * m1..(g + 1) * m1];
                    for (cell, &v) in row_a.iter().zip(&scratch_a) {
                        cell.fetch_add(v);
                    }
                    let row_b = &acc_b[g * nd..(g + 1) * nd];
                    for (cell, &v) in row_b.iter().zip(&scratch_b) {
                        cell.fetch_add(v);
                    }
                    sink.atomic_rmw(coeff_count);
                    feature += 1;
                    if feature == d {
                        feature = 0;
                    }
                }
                // write back dX_i
                sink.write(end - start);
            }
        },
    );

    let d_a = Matrix::from_vec(n_g, m1, acc_a.iter().map(|c| c.load()).collect())?;
    let d_b = Matrix::from_vec(n_g, nd, acc_b.iter().map(|c| c.load()).collect())?;
    check_accumulated(&d_a, &d_b)?;
    Ok(GradBundle {
        d_x: ActivationTensor::new_unchecked(shape, d_x)?,
        d_a,
        d_b,
        strategy: Strategy::NaiveAtomic,
        precision: T::PRECISION,
        combine_mode: CombineMode::DeterministicOrdered,
    })
}

/// Pairwise reduction in a fixed tree shape: adjacent pairs are added level
/// by level, an odd trailing element is carried up unchanged. Clobbers `v`.
pub fn tree_sum<T: Real>(v: &mut [T]) -> T {
    let mut len = v.len();
    if len == 0 {
        return T::ZERO;
    }
    while len > 1 {
        let half = len / 2;
        for i in 0..half {
            v[i] = v[2 * i] + v[2 * i + 1];
        }
        if len % 2 == 1 {
            v[half] = v[len - 1];
            len = half + 1;
        } else {
            len = half;
        }
    }
    v[0]
}

/// [`tree_sum`] applied independently to every column of a row-major
/// `rows × width` buffer; the column totals end up in the first row.
pub fn tree_sum_rows<T: Real>(v: &mut [T], width: usize) -> &[T] {
    debug_assert_eq!(v.len() % width.max(1), 0);
    let mut len = v.len() / width.max(1);
    if len == 0 {
        v.iter_mut().take(width).for_each(|c| *c = T::ZERO);
        return &v[..width.min(v.len())];
    }
    while len > 1 {
        let half = len / 2;
        {
            let (l, r) = v[..2 * width].split_at_mut(width);
            l.iter_mut().zip(r.iter()).for_each(|(a, &b)| *a += b);
        }
        for i in 1..half {
            let (head, src) = v.split_at_mut(2 * i * width);
            let (l, r) = src[..2 * width].split_at(width);
            let dst = &mut head[i * width..(i + 1) * width];
            dst.iter_mut().zip(l.iter().zip(r)).for_each(|(d, (&a, &b))| *d = a + b);
        }
        if len % 2 == 1 {
            v.copy_within((len - 1) * width..len * width, half * width);
            len = half + 1;
        } else {
            len = half;
        }
    }
    &v[..width]
}

/// Blocked strategy: each block reduces its terms with a pairwise tree into
/// private partials, combined once per block.
pub fn backward_blocked<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<GradBundle<T>> {
    backward_blocked_with(x, upstream, params, plan, &mut NoAccess)
}

pub(crate) fn backward_blocked_with<T: Real, S: AccessSink>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
    sink: &mut S,
) -> Result<GradBundle<T>> {
    check_inputs(x, upstream, params, plan, Strategy::BlockedReduction)?;
    let shape = x.shape();
    let d = shape.feature;
    let d_g = plan.layout.group_width();
    let n_g = params.num_groups();
    let m1 = params.num_coeffs();
    let nd = params.den_coeffs();
    let coeff_count = m1 + nd;
    let chunk_len = plan.block_size * d;
    let xs = x.data();
    let ups = upstream.data();

    let scatter = match plan.combine_mode {
        CombineMode::UnorderedScatter => Some((
            (0..n_g * m1).map(|_| T::Atomic::new(T::ZERO)).collect::<Vec<_>>(),
            (0..n_g * nd).map(|_| T::Atomic::new(T::ZERO)).collect::<Vec<_>>(),
        )),
        CombineMode::DeterministicOrdered => None,
    };

    let mut d_x = vec![T::ZERO; shape.len()];
    let template = sink.fork();
    let per_row: Vec<(Vec<BlockPartial<T>>, S)> = with_workers(plan.workers, || {
        d_x.par_chunks_mut(chunk_len)
            .enumerate()
            .map(|(row_block, dx_chunk)| {
                with_fma(
                    #[inline(always)]
                    || {
                        let mut local = template.fork();
                        let base = row_block * chunk_len;
                        let rows_here = dx_chunk.len() / d;
                        let span = rows_here * d_g;
                        let mut terms = vec![T::ZERO; coeff_count * span];
                        let mut partials = Vec::with_capacity(n_g);
                        for g in 0..n_g {
                            let coeffs = params.group(g);
                            // load A_j, B_j, then X_ij and dO_ij
                            local.read(coeff_count);
                            local.read(2 * rows_here * d_g);
                            for k in 0..rows_here {
                                let off = k * d + g * d_g;
                                local.visit(base + off..base + off + d_g);
                                for l in 0..d_g {
                                    let e = base + off + l;
                                    let t = (k * d_g + l) * coeff_count;
                                    let (ta, tb) = terms[t..t + coeff_count].split_at_mut(m1);
                                    dx_chunk[off + l] = element_grads_into(xs[e], ups[e], coeffs, ta, tb);
                                }
                            }
                            let total = tree_sum_rows(&mut terms, coeff_count);
                            let part_a = total[..m1].to_vec();
                            let part_b = total[m1..].to_vec();
                            // one read-modify-write per coefficient, then write back dX_ij
                            local.atomic_rmw(coeff_count);
                            local.write(rows_here * d_g);
                            match &scatter {
                                Some((acc_a, acc_b)) => {
                                    for (cell, &v) in acc_a[g * m1..(g + 1) * m1].iter().zip(&part_a) {
                                        cell.fetch_add(v);
                                    }
                                    for (cell, &v) in acc_b[g * nd..(g + 1) * nd].iter().zip(&part_b) {
                                        cell.fetch_add(v);
                                    }
                                }
                                None => partials.push(BlockPartial {
                                    block_id: row_block * n_g + g,
                                    d_a: part_a,
                                    d_b: part_b,
                                }),
                            }
                        }
                        (partials, local)
                    },
                )
            })
            .collect()
    })?;

    let mut all_partials = Vec::with_capacity(plan.block_count());
    for (partials, local) in per_row {
        sink.merge(local);
        all_partials.extend(partials);
    }

    let (d_a, d_b) = match scatter {
        Some((acc_a, acc_b)) => (
            Matrix::from_vec(n_g, m1, acc_a.iter().map(|c| c.load()).collect())?,
            Matrix::from_vec(n_g, nd, acc_b.iter().map(|c| c.load()).collect())?,
        ),
        None => combine_partials(&all_partials, n_g, m1, nd, CombineMode::DeterministicOrdered)?,
    };
    check_accumulated(&d_a, &d_b)?;
    Ok(GradBundle {
        d_x: ActivationTensor::new_unchecked(shape, d_x)?,
        d_a,
        d_b,
        strategy: Strategy::BlockedReduction,
        precision: T::PRECISION,
        combine_mode: plan.combine_mode,
    })
}

/// Dispatches on `plan.strategy`.
pub fn backward<T: Real>(
    x: &ActivationTensor<T>,
    upstream: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    plan: &ExecutionPlan,
) -> Result<GradBundle<T>> {
    match plan.strategy {
        Strategy::NaiveAtomic => backward_naive(x, upstream, params, plan),
        Strategy::BlockedReduction => backward_blocked(x, upstream, params, plan),
    }
}

/// Sums block partials into `num_groups × num_coeffs` and
/// `num_groups × den_coeffs` matrices. Block `id` belongs to group
/// `id % num_groups`; ids must be exactly `0..partials.len()`.
pub fn combine_partials<T: Real>(
    partials: &[BlockPartial<T>],
    num_groups: usize,
    num_coeffs: usize,
    den_coeffs: usize,
    mode: CombineMode,
) -> Result<(Matrix<T>, Matrix<T>)> {
    if num_groups == 0 {
        return Err(GrkanError::InvalidConfig("num_groups must be positive".into()));
    }
    let count = partials.len();
    let mut order: Vec<Option<usize>> = vec![None; count];
    for (pos, p) in partials.iter().enumerate() {
        if p.d_a.len() != num_coeffs || p.d_b.len() != den_coeffs {
            return Err(GrkanError::LayoutMismatch(format!(
                "block {} partial has widths ({}, {}), expected ({num_coeffs}, {den_coeffs})",
                p.block_id,
                p.d_a.len(),
                p.d_b.len()
            )));
        }
        match order.get_mut(p.block_id) {
            Some(slot @ None) => *slot = Some(pos),
            Some(Some(_)) => return Err(GrkanError::PartialCoverage(format!("block {} appears twice", p.block_id))),
            None => return Err(GrkanError::PartialCoverage(format!("block {} outside 0..{count}", p.block_id))),
        }
    }
    if !count.is_multiple_of(num_groups) {
        return Err(GrkanError::PartialCoverage(format!(
            "{count} partials do not cover a whole number of grid rows of {num_groups} groups"
        )));
    }

    match mode {
        CombineMode::DeterministicOrdered => {
            let mut d_a = Matrix::zeros(num_groups, num_coeffs);
            let mut d_b = Matrix::zeros(num_groups, den_coeffs);
            for pos in order.into_iter().flatten() {
                let p = &partials[pos];
                let g = p.block_id % num_groups;
                for (dst, &v) in d_a.row_mut(g).iter_mut().zip(&p.d_a) {
                    *dst += v;
                }
                for (dst, &v) in d_b.row_mut(g).iter_mut().zip(&p.d_b) {
                    *dst += v;
                }
            }
            Ok((d_a, d_b))
        }
        CombineMode::UnorderedScatter => {
            let acc_a: Vec<T::Atomic> = (0..num_groups * num_coeffs).map(|_| T::Atomic::new(T::ZERO)).collect();
            let acc_b: Vec<T::Atomic> = (0..num_groups * den_coeffs).map(|_| T::Atomic::new(T::ZERO)).collect();
            partials.par_iter().for_each(|p| {
                let g = p.block_id % num_groups;
                for (cell, &v) in acc_a[g * num_coeffs..(g + 1) * num_coeffs].iter().zip(&p.d_a) {
                    cell.fetch_add(v);
                }
                for (cell, &v) in acc_b[g * den_coeffs..(g + 1) * den_coeffs].iter().zip(&p.d_b) {
                    cell.fetch_add(v);
                }
            });
            Ok((
                Matrix::from_vec(num_groups, num_coeffs, acc_a.iter().map(|c| c.load()).collect())?,
                Matrix::from_vec(num_groups, den_coeffs, acc_b.iter().map(|c| c.load()).collect())?,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_sum_shapes() {
        assert_eq!(tree_sum::<f64>(&mut []), 0.0);
        assert_eq!(tree_sum(&mut [5.0f64]), 5.0);
        for n in 1..40usize {
            let mut v: Vec<f64> = (1..=n).map(|i| i as f64).collect();
            assert_eq!(tree_sum(&mut v), (n * (n + 1) / 2) as f64);
        }
    }

    #[test]
    fn tree_sum_rows_matches_columnwise_tree() {
        for rows in [1usize, 2, 3, 7, 8, 33] {
            let width = 3;
            let data: Vec<f32> = (0..rows * width).map(|i| 1.0 / (1.0 + i as f32)).collect();
            let mut buf = data.clone();
            let total = tree_sum_rows(&mut buf, width).to_vec();
            for c in 0..width {
                let mut col: Vec<f32> = (0..rows).map(|r| data[r * width + c]).collect();
                assert_eq!(total[c].to_bits(), tree_sum(&mut col).to_bits());
            }
        }
    }

    #[test]
    fn tree_sum_does_not_absorb() {
        // 1.0 followed by 2^-24 values: a running sum stays at 1.0 forever
        let mut v = vec![2f32.powi(-24); 1024];
        v[0] = 1.0;
        let mut running = 0.0f32;
        v.iter().for_each(|&t| running += t);
        assert_eq!(running, 1.0);
        let exact = 1.0 + 1023.0 * 2f64.powi(-24);
        assert!((tree_sum(&mut v) as f64 - exact).abs() <= 2f64.powi(-23));
    }

    fn single_element() -> (ActivationTensor<f64>, ActivationTensor<f64>, GroupRationalParams<f64>, GroupLayout) {
        let shape = Shape3::new(1, 1, 1);
        (
            ActivationTensor::new(shape, vec![3.0]).unwrap(),
            ActivationTensor::new(shape, vec![1.0]).unwrap(),
            GroupRationalParams::identity(1, 6, 4).unwrap(),
            GroupLayout::new(1, 1).unwrap(),
        )
    }

    #[test]
    fn single_element_by_hand() {
        let (x, up, p, layout) = single_element();
        let naive = backward_naive(&x, &up, &p, &ExecutionPlan::naive(x.shape(), layout, 256).unwrap()).unwrap();
        assert_eq!(naive.d_a.data(), &[1.0, 3.0, 9.0, 27.0, 81.0, 243.0]);
        assert!(naive.d_b.data().iter().all(|&v| v == 0.0));
        assert_eq!(naive.d_x.data(), &[1.0]);

        let blocked = backward_blocked(&x, &up, &p, &ExecutionPlan::blocked(x.shape(), layout, 256).unwrap()).unwrap();
        assert_eq!(blocked.d_a, naive.d_a);
        assert_eq!(blocked.d_b, naive.d_b);
        assert_eq!(blocked.d_x, naive.d_x);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let shape = Shape3::new(2, 3, 8);
        let layout = GroupLayout::new(8, 2).unwrap();
        let x = ActivationTensor::from_fn(shape, |b, s, f| (b + s) as f64 * 0.3 - f as f64 * 0.1).unwrap();
        let up = ActivationTensor::zeros(shape).unwrap();
        let p = GroupRationalParams::broadcast(2, &[0.1, 0.9, -0.2, 0.3, 0.0, 0.05], &[0.5, -0.1, 0.2, 0.01]).unwrap();
        for plan in [ExecutionPlan::naive(shape, layout, 5).unwrap(), ExecutionPlan::blocked(shape, layout, 4).unwrap()]
        {
            let g = backward(&x, &up, &p, &plan).unwrap();
            assert!(g.d_a.data().iter().chain(g.d_b.data()).chain(g.d_x.data()).all(|&v| v == 0.0));
        }
    }

    #[test]
    fn tail_blocks_cover_remainder() {
        let shape = Shape3::new(3, 3, 4);
        let layout = GroupLayout::new(4, 2).unwrap();
        let x = ActivationTensor::from_fn(shape, |b, s, f| 0.1 * (b * 12 + s * 4 + f) as f64 - 1.0).unwrap();
        let up = ActivationTensor::from_fn(shape, |_, _, _| 1.0).unwrap();
        let p = GroupRationalParams::broadcast(2, &[0.2, 1.0, 0.1], &[0.3, 0.2]).unwrap();
        let plan = ExecutionPlan::blocked(shape, layout, 4).unwrap();
        assert_eq!(plan.grid_rows, 3);
        let a = backward_blocked(&x, &up, &p, &plan).unwrap();
        let b = backward_naive(&x, &up, &p, &ExecutionPlan::naive(shape, layout, 7).unwrap()).unwrap();
        assert_eq!(a.d_x, b.d_x);
        for (u, v) in a.d_a.data().iter().zip(b.d_a.data()) {
            assert!((u - v).abs() <= 1e-12 * v.abs().max(1.0));
        }
    }

    #[test]
    fn invalid_grid_is_rejected() {
        let shape = Shape3::new(2, 4, 16);
        let layout = GroupLayout::new(16, 2).unwrap();
        let x = ActivationTensor::<f64>::zeros(shape).unwrap();
        let p = GroupRationalParams::identity(2, 6, 4).unwrap();
        let mut plan = ExecutionPlan::blocked(shape, layout, 4).unwrap();
        plan.grid_rows = 1;
        let err = backward_blocked(&x, &x, &p, &plan).unwrap_err();
        assert!(err.to_string().contains("grid geometry invalid"));
        let mut plan = ExecutionPlan::blocked(shape, layout, 4).unwrap();
        plan.grid_cols = 1;
        assert!(matches!(backward_blocked(&x, &x, &p, &plan), Err(GrkanError::GridGeometryInvalid(_))));
        assert!(ExecutionPlan::naive(shape, layout, 0).is_err());
    }

    #[test]
    fn strategy_mismatch_is_rejected() {
        let (x, up, p, layout) = single_element();
        let plan = ExecutionPlan::naive(x.shape(), layout, 1).unwrap();
        assert!(backward_blocked(&x, &up, &p, &plan).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let shape = Shape3::new(1, 2, 1);
        let layout = GroupLayout::new(1, 1).unwrap();
        let x = ActivationTensor::new(shape, vec![1.0f32, 1.0]).unwrap();
        let up = ActivationTensor::new(shape, vec![3e38f32, 3e38]).unwrap();
        let p = GroupRationalParams::identity(1, 2, 0).unwrap();
        let err = backward_naive(&x, &up, &p, &ExecutionPlan::naive(shape, layout, 2).unwrap()).unwrap_err();
        assert!(err.to_string().contains("accumulation overflow"));
    }

    #[test]
    fn combine_simple_sum() {
        let partials = vec![
            BlockPartial { block_id: 0, d_a: vec![1.0f64], d_b: vec![] },
            BlockPartial { block_id: 1, d_a: vec![2.0], d_b: vec![] },
        ];
        for mode in [CombineMode::DeterministicOrdered, CombineMode::UnorderedScatter] {
            let (a, b) = combine_partials(&partials, 1, 1, 0, mode).unwrap();
            assert_eq!(a.data(), &[3.0]);
            assert_eq!((b.rows(), b.cols()), (1, 0));
        }
    }

    #[test]
    fn combine_rejects_bad_coverage() {
        let dup = vec![
            BlockPartial { block_id: 0, d_a: vec![1.0f64], d_b: vec![] },
            BlockPartial { block_id: 0, d_a: vec![2.0], d_b: vec![] },
        ];
        let err = combine_partials(&dup, 1, 1, 0, CombineMode::DeterministicOrdered).unwrap_err();
        assert!(err.to_string().contains("partial coverage violation"));
        let gap = vec![
            BlockPartial { block_id: 0, d_a: vec![1.0f64], d_b: vec![] },
            BlockPartial { block_id: 2, d_a: vec![2.0], d_b: vec![] },
        ];
        assert!(matches!(
            combine_partials(&gap, 1, 1, 0, CombineMode::DeterministicOrdered),
            Err(GrkanError::PartialCoverage(_))
        ));
    }

    #[test]
    fn block_partials_avoid_absorption() {
        let tiny = 2f32.powi(-24);
        let partials: Vec<_> = (0..64).map(|id| BlockPartial { block_id: id, d_a: vec![tiny], d_b: vec![] }).collect();
        let (a, _) = combine_partials(&partials, 1, 1, 0, CombineMode::DeterministicOrdered).unwrap();
        assert_eq!(a.data()[0], 64.0 * tiny);
        assert_eq!(a.data()[0] as f64, 64.0 * 2f64.powi(-24));

        let mut running = 1.0f32;
        for _ in 0..64 {
            running += tiny;
        }
        assert_eq!(running, 1.0);
        assert_ne!(running as f64, 1.0 + 64.0 * 2f64.powi(-24));
    }

    #[test]
    fn ordered_combine_is_reproducible_across_workers() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let shape = Shape3::new(4, 16, 16);
        let layout = GroupLayout::new(16, 4).unwrap();
        let x = ActivationTensor::from_fn(shape, |_, _, _| rng.random_range(-2.0f32..2.0)).unwrap();
        let up = ActivationTensor::from_fn(shape, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap();
        let p =
            GroupRationalParams::broadcast(4, &[0.1f32, 0.9, -0.2, 0.3, 0.0, 0.05], &[0.5, -0.1, 0.2, 0.01]).unwrap();
        let base = ExecutionPlan::blocked(shape, layout, 3).unwrap();
        let reference = backward_blocked(&x, &up, &p, &base.with_workers(Some(1))).unwrap();
        for w in [2, 3, 8] {
            let g = backward_blocked(&x, &up, &p, &base.with_workers(Some(w))).unwrap();
            assert!(g.bitwise_eq(&reference));
        }
        let scattered =
            backward_blocked(&x, &up, &p, &base.with_combine_mode(CombineMode::UnorderedScatter).with_workers(Some(4)))
                .unwrap();
        assert_eq!(scattered.d_x, reference.d_x);
        for (u, v) in scattered.d_a.data().iter().zip(reference.d_a.data()) {
            assert!((u - v).abs() <= 1e-4 * v.abs().max(1.0));
        }
    }
}
