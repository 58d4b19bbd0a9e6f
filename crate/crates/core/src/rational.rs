//! Safe group-wise rational activation and its analytic partials.
//!
//! `F(x) = P(x) / Q(x)` with `P(x) = a_0 + a_1 x + … + a_m x^m` and
//! `Q(x) = 1 + |b_1 x + … + b_n x^n|`. The constant denominator term is fixed
//! to one and is not stored, so `Q(x) >= 1` for every finite input.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{GrkanError, Result};
use crate::real::{with_fma, Real};
use crate::tensor::{ActivationTensor, Matrix};

/// Partition of the feature axis into `num_groups` contiguous groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupLayout {
    feature_dim: usize,
    num_groups: usize,
    group_width: usize,
}

impl GroupLayout {
    pub fn new(feature_dim: usize, num_groups: usize) -> Result<Self> {
        if feature_dim == 0 || num_groups == 0 {
            return Err(GrkanError::LayoutMismatch(format!(
                "feature_dim ({feature_dim}) and num_groups ({num_groups}) must be positive"
            )));
        }
        if !feature_dim.is_multiple_of(num_groups) {
            return Err(GrkanError::LayoutMismatch(format!(
                "feature_dim {feature_dim} is not divisible by num_groups {num_groups}"
            )));
        }
        Ok(Self { feature_dim, num_groups, group_width: feature_dim / num_groups })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn group_width(&self) -> usize {
        self.group_width
    }

    #[inline]
    pub fn group_of(&self, feature: usize) -> usize {
        feature / self.group_width
    }
}

/// Borrowed coefficients of one group: `(a_0 … a_m)` and `(b_1 … b_n)`.
#[derive(Debug, Clone, Copy)]
pub struct GroupCoeffs<'a, T> {
    pub numerator: &'a [T],
    pub denominator: &'a [T],
}

impl<'a, T: Real> GroupCoeffs<'a, T> {
    pub fn new(numerator: &'a [T], denominator: &'a [T]) -> Self {
        Self { numerator, denominator }
    }

    fn check_finite(&self) -> Result<()> {
        if self.numerator.iter().chain(self.denominator).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(GrkanError::NonFiniteInput("coefficient".into()))
        }
    }
}

/// Per-group numerator and denominator coefficient matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupRationalParams<T> {
    num_groups: usize,
    num_coeffs: usize,
    den_coeffs: usize,
    numerator: Vec<T>,
    denominator: Vec<T>,
}

impl<T: Real> GroupRationalParams<T> {
    /// `numerator` is `num_groups × num_coeffs` row-major (`num_coeffs = m + 1`),
    /// `denominator` is `num_groups × den_coeffs` (`den_coeffs = n`).
    pub fn new(
        num_groups: usize,
        num_coeffs: usize,
        den_coeffs: usize,
        numerator: Vec<T>,
        denominator: Vec<T>,
    ) -> Result<Self> {
        if num_groups == 0 || num_coeffs == 0 {
            return Err(GrkanError::InvalidConfig("need at least one group and one numerator coefficient".into()));
        }
        if numerator.len() != num_groups * num_coeffs {
            return Err(GrkanError::LayoutMismatch(format!(
                "numerator has {} entries, expected {num_groups}x{num_coeffs}",
                numerator.len()
            )));
        }
        if denominator.len() != num_groups * den_coeffs {
            return Err(GrkanError::LayoutMismatch(format!(
                "denominator has {} entries, expected {num_groups}x{den_coeffs}",
                denominator.len()
            )));
        }
        if !numerator.iter().chain(&denominator).all(|v| v.is_finite()) {
            return Err(GrkanError::NonFiniteInput("coefficient".into()));
        }
        Ok(Self { num_groups, num_coeffs, den_coeffs, numerator, denominator })
    }

    /// Every group set to the same coefficients.
    pub fn broadcast(num_groups: usize, numerator: &[T], denominator: &[T]) -> Result<Self> {
        let num = numerator.iter().copied().cycle().take(num_groups * numerator.len()).collect();
        let den = denominator.iter().copied().cycle().take(num_groups * denominator.len()).collect();
        Self::new(num_groups, numerator.len(), denominator.len(), num, den)
    }

    /// `F(x) = x` in every group.
    pub fn identity(num_groups: usize, num_coeffs: usize, den_coeffs: usize) -> Result<Self> {
        if num_coeffs < 2 {
            return Err(GrkanError::InvalidConfig("identity needs a linear numerator term".into()));
        }
        let mut row = vec![T::ZERO; num_coeffs];
        row[1] = T::ONE;
        Self::broadcast(num_groups, &row, &vec![T::ZERO; den_coeffs])
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    /// `m + 1`.
    pub fn num_coeffs(&self) -> usize {
        self.num_coeffs
    }

    /// `n`.
    pub fn den_coeffs(&self) -> usize {
        self.den_coeffs
    }

    /// Numerator degree `m`.
    pub fn numerator_degree(&self) -> usize {
        self.num_coeffs - 1
    }

    /// Learnable coefficients per group, `(m + 1) + n`.
    pub fn coefficient_count(&self) -> usize {
        self.num_coeffs + self.den_coeffs
    }

    pub fn group(&self, g: usize) -> GroupCoeffs<'_, T> {
        GroupCoeffs {
            numerator: &self.numerator[g * self.num_coeffs..(g + 1) * self.num_coeffs],
            denominator: &self.denominator[g * self.den_coeffs..(g + 1) * self.den_coeffs],
        }
    }

    pub fn numerator(&self) -> &[T] {
        &self.numerator
    }

    pub fn denominator(&self) -> &[T] {
        &self.denominator
    }

    pub fn numerator_mut(&mut self) -> &mut [T] {
        &mut self.numerator
    }

    pub fn denominator_mut(&mut self) -> &mut [T] {
        &mut self.denominator
    }

    pub fn numerator_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.num_groups, self.num_coeffs, self.numerator.clone())
            .expect("shape checked at construction")
    }

    pub fn denominator_matrix(&self) -> Matrix<T> {
        Matrix::from_vec(self.num_groups, self.den_coeffs, self.denominator.clone())
            .expect("shape checked at construction")
    }

    pub fn cast<U: Real>(&self) -> GroupRationalParams<U> {
        GroupRationalParams {
            num_groups: self.num_groups,
            num_coeffs: self.num_coeffs,
            den_coeffs: self.den_coeffs,
            numerator: self.numerator.iter().map(|v| U::from_f64(v.to_f64())).collect(),
            denominator: self.denominator.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }
}

/// Partials of `upstream · F(x)` with respect to `x`, `a_i` and `b_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGrads<T> {
    pub d_x: T,
    pub d_a: Vec<T>,
    pub d_b: Vec<T>,
}

/// `P(x)/Q(x)` with both polynomials evaluated by fused multiply-add Horner.
#[inline]
pub fn eval_rational<T: Real>(x: T, coeffs: GroupCoeffs<'_, T>) -> T {
    let mut p = T::ZERO;
    for &a in coeffs.numerator.iter().rev() {
        p = p.mul_add(x, a);
    }
    // A(x) = x·(b_1 + b_2 x + … + b_n x^{n-1})
    let mut inner = T::ZERO;
    for &b in coeffs.denominator.iter().rev() {
        inner = inner.mul_add(x, b);
    }
    let q = T::ONE + (inner * x).abs();
    p / q
}

pub fn eval_rational_checked<T: Real>(x: T, coeffs: GroupCoeffs<'_, T>) -> Result<T> {
    if !x.is_finite() {
        return Err(GrkanError::NonFiniteInput(format!("x = {x}")));
    }
    coeffs.check_finite()?;
    Ok(eval_rational(x, coeffs))
}

/// Writes the per-element coefficient contributions into `d_a` and `d_b`
/// (overwriting them) and returns `d_x`. This is the shared on-chip compute
/// step of every backward strategy.
#[inline]
pub fn element_grads_into<T: Real>(x: T, upstream: T, coeffs: GroupCoeffs<'_, T>, d_a: &mut [T], d_b: &mut [T]) -> T {
    let num = coeffs.numerator;
    let den = coeffs.denominator;
    debug_assert_eq!(d_a.len(), num.len());
    debug_assert_eq!(d_b.len(), den.len());

    // P and P' together.
    let mut p = T::ZERO;
    let mut dp = T::ZERO;
    for &a in num.iter().rev() {
        dp = dp.mul_add(x, p);
        p = p.mul_add(x, a);
    }
    // A and A' over the coefficient list (0, b_1, …, b_n).
    let mut poly_a = T::ZERO;
    let mut dpoly_a = T::ZERO;
    for &b in den.iter().rev() {
        dpoly_a = dpoly_a.mul_add(x, poly_a);
        poly_a = poly_a.mul_add(x, b);
    }
    dpoly_a = dpoly_a.mul_add(x, poly_a);
    poly_a *= x;

    let sign = poly_a.sign_or_zero();
    let q = T::ONE + poly_a.abs();
    let dq = sign * dpoly_a;
    let q2 = q * q;

    let d_x = upstream * (dp / q - dq * p / q2);

    let scale_a = upstream / q;
    let scale_b = upstream * sign * p / q2;
    let top = num.len().max(den.len() + 1);
    let mut pow = T::ONE;
    for i in 0..top {
        if i < num.len() {
            d_a[i] = scale_a * pow;
        }
        if i >= 1 && i <= den.len() {
            d_b[i - 1] = -(scale_b * pow);
        }
        pow *= x;
    }
    d_x
}

pub fn elementwise_grads<T: Real>(x: T, upstream: T, coeffs: GroupCoeffs<'_, T>) -> ElementGrads<T> {
    let mut d_a = vec![T::ZERO; coeffs.numerator.len()];
    let mut d_b = vec![T::ZERO; coeffs.denominator.len()];
    let d_x = element_grads_into(x, upstream, coeffs, &mut d_a, &mut d_b);
    ElementGrads { d_x, d_a, d_b }
}

pub fn elementwise_grads_checked<T: Real>(x: T, upstream: T, coeffs: GroupCoeffs<'_, T>) -> Result<ElementGrads<T>> {
    if !x.is_finite() || !upstream.is_finite() {
        return Err(GrkanError::NonFiniteInput(format!("x = {x}, upstream = {upstream}")));
    }
    coeffs.check_finite()?;
    Ok(elementwise_grads(x, upstream, coeffs))
}

pub(crate) fn check_layout<T: Real>(
    feature: usize,
    params: &GroupRationalParams<T>,
    layout: &GroupLayout,
) -> Result<()> {
    if feature != layout.feature_dim() {
        return Err(GrkanError::LayoutMismatch(format!(
            "tensor feature dim {feature} != layout feature dim {}",
            layout.feature_dim()
        )));
    }
    if params.num_groups() != layout.num_groups() {
        return Err(GrkanError::LayoutMismatch(format!(
            "params have {} groups, layout has {}",
            params.num_groups(),
            layout.num_groups()
        )));
    }
    Ok(())
}

/// Applies the group-routed rational to every element.
pub fn forward_tensor<T: Real>(
    x: &ActivationTensor<T>,
    params: &GroupRationalParams<T>,
    layout: &GroupLayout,
) -> Result<ActivationTensor<T>> {
    let shape = x.shape();
    check_layout(shape.feature, params, layout)?;
    let d = layout.feature_dim();
    let d_g = layout.group_width();
    let mut out = vec![T::ZERO; shape.len()];
    let rows_per_task = (4096 / d).max(1);
    out.par_chunks_mut(d * rows_per_task).zip(x.data().par_chunks(d * rows_per_task)).for_each(
        |(out_rows, in_rows)| {
            with_fma(
                #[inline(always)]
                || {
                    for (out_row, in_row) in out_rows.chunks_mut(d).zip(in_rows.chunks(d)) {
                        for (g, (o, i)) in out_row.chunks_mut(d_g).zip(in_row.chunks(d_g)).enumerate() {
                            let coeffs = params.group(g);
                            for (dst, &v) in o.iter_mut().zip(i) {
                                *dst = eval_rational(v, coeffs);
                            }
                        }
                    }
                },
            )
        },
    );
    ActivationTensor::new_unchecked(shape, out)
}
