//! Forward-mode lexicographic directional derivatives.
//!
//! An [`LdScalar`] carries a function value together with a row of `k`
//! lexicographic directional derivatives taken along the columns of a
//! directions matrix. Smooth primitives propagate rows with the ordinary
//! chain rule; `min`, `max` and `abs` select a whole row by comparing the
//! augmented rows `(value, dirs...)` lexicographically, which is what makes
//! the result a valid LD-derivative for piecewise-smooth compositions.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use nalgebra::DMatrix;

use crate::error::Error;

/// Sign of the first nonzero element, or `0` if there is none.
pub fn fsign<I>(seq: I) -> i8
where
    I: IntoIterator<Item = f64>,
{
    for v in seq {
        if v > 0.0 {
            return 1;
        }
        if v < 0.0 {
            return -1;
        }
    }
    0
}

/// A value paired with its lexicographic directional derivatives.
#[derive(Clone, PartialEq)]
pub struct LdScalar {
    value: f64,
    dirs: Vec<f64>,
}

impl fmt::Debug for LdScalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:?}, {:?})", self.value, self.dirs)
    }
}

impl LdScalar {
    pub fn new(value: f64, dirs: Vec<f64>) -> Self {
        Self { value, dirs }
    }

    /// A constant: `k` zero directional derivatives.
    pub fn constant(value: f64, k: usize) -> Self {
        Self {
            value,
            dirs: vec![0.0; k],
        }
    }

    /// The `i`-th independent variable probed by unit direction `i` among `k`.
    pub fn variable(value: f64, i: usize, k: usize) -> Self {
        let mut dirs = vec![0.0; k];
        dirs[i] = 1.0;
        Self { value, dirs }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn dirs(&self) -> &[f64] {
        &self.dirs
    }

    pub fn into_dirs(self) -> Vec<f64> {
        self.dirs
    }

    pub fn k(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.dirs.iter().all(|d| d.is_finite())
    }

    fn check_k(&self, other: &Self) -> Result<(), Error> {
        if self.k() != other.k() {
            return Err(Error::DirectionMismatch {
                left: self.k(),
                right: other.k(),
            });
        }
        Ok(())
    }

    /// Scale every directional derivative by `factor`, leaving exact zeros alone
    /// so that infinite slopes do not leak into unprobed directions.
    fn chain(&self, value: f64, factor: f64) -> Self {
        let dirs = self
            .dirs
            .iter()
            .map(|&d| if d == 0.0 { 0.0 } else { d * factor })
            .collect();
        Self { value, dirs }
    }

    /// Lexicographic minimum (the `slmin` rule).
    pub fn min(&self, other: &Self) -> Self {
        assert_eq!(self.k(), other.k(), "direction count mismatch");
        let first = std::iter::once(self.value - other.value)
            .chain(self.dirs.iter().zip(&other.dirs).map(|(a, b)| a - b));
        if fsign(first) <= 0 {
            self.clone()
        } else {
            other.clone()
        }
    }

    pub fn max(&self, other: &Self) -> Self {
        -(&(-self).min(&-other))
    }

    pub fn abs(&self) -> Self {
        self.max(&-self)
    }

    pub fn exp(&self) -> Self {
        let e = self.value.exp();
        self.chain(e, e)
    }

    pub fn ln(&self) -> Self {
        self.chain(self.value.ln(), 1.0 / self.value)
    }

    pub fn sqrt(&self) -> Self {
        let s = self.value.sqrt();
        self.chain(s, 0.5 / s)
    }

    pub fn sin(&self) -> Self {
        self.chain(self.value.sin(), self.value.cos())
    }

    pub fn cos(&self) -> Self {
        self.chain(self.value.cos(), -self.value.sin())
    }

    /// `self ^ exponent`. When the exponent carries no directional information
    /// the log term is skipped, so negative bases with integer powers work.
    pub fn pow(&self, exponent: &Self) -> Self {
        assert_eq!(self.k(), exponent.k(), "direction count mismatch");
        let value = self.value.powf(exponent.value);
        if exponent.dirs.iter().all(|&d| d == 0.0) {
            let factor = exponent.value * self.value.powf(exponent.value - 1.0);
            return self.chain(value, factor);
        }
        let da = exponent.value * self.value.powf(exponent.value - 1.0);
        let db = value * self.value.ln();
        let dirs = self
            .dirs
            .iter()
            .zip(&exponent.dirs)
            .map(|(&a, &b)| {
                let ta = if a == 0.0 { 0.0 } else { a * da };
                let tb = if b == 0.0 { 0.0 } else { b * db };
                ta + tb
            })
            .collect();
        Self { value, dirs }
    }
}

/// Lexicographic minimum with a checked direction count.
pub fn ld_min(a: &LdScalar, b: &LdScalar) -> Result<LdScalar, Error> {
    a.check_k(b)?;
    Ok(a.min(b))
}

/// Lexicographic maximum, `-min(-a, -b)`.
pub fn ld_max(a: &LdScalar, b: &LdScalar) -> Result<LdScalar, Error> {
    a.check_k(b)?;
    Ok(a.max(b))
}

/// Lexicographic absolute value, `max(a, -a)`.
pub fn ld_abs(a: &LdScalar) -> LdScalar {
    a.abs()
}

impl Neg for &LdScalar {
    type Output = LdScalar;
    fn neg(self) -> LdScalar {
        LdScalar {
            value: -self.value,
            dirs: self.dirs.iter().map(|d| -d).collect(),
        }
    }
}

impl Neg for LdScalar {
    type Output = LdScalar;
    fn neg(self) -> LdScalar {
        -&self
    }
}

impl Add for &LdScalar {
    type Output = LdScalar;
    fn add(self, rhs: &LdScalar) -> LdScalar {
        assert_eq!(self.k(), rhs.k(), "direction count mismatch");
        LdScalar {
            value: self.value + rhs.value,
            dirs: self.dirs.iter().zip(&rhs.dirs).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Sub for &LdScalar {
    type Output = LdScalar;
    fn sub(self, rhs: &LdScalar) -> LdScalar {
        assert_eq!(self.k(), rhs.k(), "direction count mismatch");
        LdScalar {
            value: self.value - rhs.value,
            dirs: self.dirs.iter().zip(&rhs.dirs).map(|(a, b)| a - b).collect(),
        }
    }
}

impl Mul for &LdScalar {
    type Output = LdScalar;
    fn mul(self, rhs: &LdScalar) -> LdScalar {
        assert_eq!(self.k(), rhs.k(), "direction count mismatch");
        LdScalar {
            value: self.value * rhs.value,
            dirs: self
                .dirs
                .iter()
                .zip(&rhs.dirs)
                .map(|(a, b)| self.value * b + rhs.value * a)
                .collect(),
        }
    }
}

impl Div for &LdScalar {
    type Output = LdScalar;
    fn div(self, rhs: &LdScalar) -> LdScalar {
        assert_eq!(self.k(), rhs.k(), "direction count mismatch");
        let q = self.value / rhs.value;
        LdScalar {
            value: q,
            dirs: self
                .dirs
                .iter()
                .zip(&rhs.dirs)
                .map(|(a, b)| (a - q * b) / rhs.value)
                .collect(),
        }
    }
}

macro_rules! forward_owned_binop {
    ($tr:ident, $method:ident) => {
        impl $tr for LdScalar {
            type Output = LdScalar;
            fn $method(self, rhs: LdScalar) -> LdScalar {
                $tr::$method(&self, &rhs)
            }
        }
    };
}

forward_owned_binop!(Add, add);
forward_owned_binop!(Sub, sub);
forward_owned_binop!(Mul, mul);
forward_owned_binop!(Div, div);

/// Arithmetic shared by plain reals and [`LdScalar`], so one expression
/// evaluator produces both values and LD-derivatives.
pub trait Scalar: Clone + fmt::Debug {
    fn constant(value: f64, k: usize) -> Self;
    fn value(&self) -> f64;
    /// Direction count; zero for plain reals.
    fn k(&self) -> usize;
    fn is_finite(&self) -> bool;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    fn div(&self, rhs: &Self) -> Self;
    fn neg(&self) -> Self;
    fn pow(&self, exponent: &Self) -> Self;
    fn exp(&self) -> Self;
    fn ln(&self) -> Self;
    fn sqrt(&self) -> Self;
    fn sin(&self) -> Self;
    fn cos(&self) -> Self;
    fn min(&self, rhs: &Self) -> Self;
    fn max(&self, rhs: &Self) -> Self;
    fn abs(&self) -> Self;
}

impl Scalar for f64 {
    fn constant(value: f64, _k: usize) -> Self {
        value
    }
    fn value(&self) -> f64 {
        *self
    }
    fn k(&self) -> usize {
        0
    }
    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn pow(&self, exponent: &Self) -> Self {
        self.powf(*exponent)
    }
    fn exp(&self) -> Self {
        f64::exp(*self)
    }
    fn ln(&self) -> Self {
        f64::ln(*self)
    }
    fn sqrt(&self) -> Self {
        f64::sqrt(*self)
    }
    fn sin(&self) -> Self {
        f64::sin(*self)
    }
    fn cos(&self) -> Self {
        f64::cos(*self)
    }
    fn min(&self, rhs: &Self) -> Self {
        if self - rhs <= 0.0 {
            *self
        } else {
            *rhs
        }
    }
    fn max(&self, rhs: &Self) -> Self {
        -Scalar::min(&-self, &-rhs)
    }
    fn abs(&self) -> Self {
        Scalar::max(self, &-self)
    }
}

impl Scalar for LdScalar {
    fn constant(value: f64, k: usize) -> Self {
        LdScalar::constant(value, k)
    }
    fn value(&self) -> f64 {
        self.value
    }
    fn k(&self) -> usize {
        self.dirs.len()
    }
    fn is_finite(&self) -> bool {
        LdScalar::is_finite(self)
    }
    fn add(&self, rhs: &Self) -> Self {
        self + rhs
    }
    fn sub(&self, rhs: &Self) -> Self {
        self - rhs
    }
    fn mul(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn div(&self, rhs: &Self) -> Self {
        self / rhs
    }
    fn neg(&self) -> Self {
        -self
    }
    fn pow(&self, exponent: &Self) -> Self {
        LdScalar::pow(self, exponent)
    }
    fn exp(&self) -> Self {
        LdScalar::exp(self)
    }
    fn ln(&self) -> Self {
        LdScalar::ln(self)
    }
    fn sqrt(&self) -> Self {
        LdScalar::sqrt(self)
    }
    fn sin(&self) -> Self {
        LdScalar::sin(self)
    }
    fn cos(&self) -> Self {
        LdScalar::cos(self)
    }
    fn min(&self, rhs: &Self) -> Self {
        LdScalar::min(self, rhs)
    }
    fn max(&self, rhs: &Self) -> Self {
        LdScalar::max(self, rhs)
    }
    fn abs(&self) -> Self {
        LdScalar::abs(self)
    }
}

/// How the L-derivative is recovered from an LD-derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RightInverseKind {
    /// Square, nonsingular `M`; right inverse is `M^-1`.
    SquareInverse,
    /// `M = [d  I]`; right inverse is `[0; I]`.
    DropFirstColumn,
}

/// Full-row-rank directions matrix `M` (`n_x` rows, `k` columns).
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionsMatrix {
    entries: DMatrix<f64>,
    kind: RightInverseKind,
    right_inverse: DMatrix<f64>,
}

impl DirectionsMatrix {
    /// `M = I_n`.
    pub fn identity(n: usize) -> Self {
        Self {
            entries: DMatrix::identity(n, n),
            kind: RightInverseKind::SquareInverse,
            right_inverse: DMatrix::identity(n, n),
        }
    }

    /// `M = [d  I]` for a probing direction `d`.
    pub fn probing(d: &[f64]) -> Self {
        let n = d.len();
        let mut entries = DMatrix::zeros(n, n + 1);
        for (i, &di) in d.iter().enumerate() {
            entries[(i, 0)] = di;
            entries[(i, i + 1)] = 1.0;
        }
        let mut right_inverse = DMatrix::zeros(n + 1, n);
        for i in 0..n {
            right_inverse[(i + 1, i)] = 1.0;
        }
        Self {
            entries,
            kind: RightInverseKind::DropFirstColumn,
            right_inverse,
        }
    }

    /// A general square directions matrix; must be invertible.
    pub fn square(m: DMatrix<f64>) -> Result<Self, Error> {
        if !m.is_square() || m.nrows() == 0 {
            return Err(Error::InvalidArgument(
                "square directions matrix must be n x n with n > 0".into(),
            ));
        }
        let inv = m.clone().try_inverse().ok_or_else(|| {
            Error::InvalidArgument("directions matrix is not full row rank".into())
        })?;
        if inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(
                "directions matrix is not full row rank".into(),
            ));
        }
        Ok(Self {
            entries: m,
            kind: RightInverseKind::SquareInverse,
            right_inverse: inv,
        })
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn kind(&self) -> RightInverseKind {
        self.kind
    }

    /// `k x n_x` right inverse `M^-R` with `M M^-R = I`.
    pub fn right_inverse(&self) -> &DMatrix<f64> {
        &self.right_inverse
    }

    pub fn n_x(&self) -> usize {
        self.entries.nrows()
    }

    pub fn k(&self) -> usize {
        self.entries.ncols()
    }

    /// L-derivative `J = D M^-R` from an LD-derivative `D = f'(x; M)`.
    pub fn l_derivative(&self, ld: &DMatrix<f64>) -> DMatrix<f64> {
        ld * &self.right_inverse
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ld(v: f64, d: &[f64]) -> LdScalar {
        LdScalar::new(v, d.to_vec())
    }

    #[test]
    fn fsign_cases() {
        assert_eq!(fsign([0.0, 0.0, 0.0]), 0);
        assert_eq!(fsign([0.0, -2.0, 5.0]), -1);
        assert_eq!(fsign([3.0, -7.0]), 1);
        assert_eq!(fsign(std::iter::empty()), 0);
    }

    #[test]
    fn min_selection() {
        let r = ld_min(&ld(1.0, &[10.0, 20.0]), &ld(2.0, &[30.0, 40.0])).unwrap();
        assert_eq!(r, ld(1.0, &[10.0, 20.0]));
        let r = ld_min(&ld(0.0, &[1.0, 0.0]), &ld(0.0, &[0.0, 1.0])).unwrap();
        assert_eq!(r, ld(0.0, &[0.0, 1.0]));
        let r = ld_min(&ld(0.0, &[0.0, 5.0]), &ld(0.0, &[0.0, 7.0])).unwrap();
        assert_eq!(r, ld(0.0, &[0.0, 5.0]));
    }

    #[test]
    fn max_selection() {
        let r = ld_max(&ld(2.0, &[1.0]), &ld(1.0, &[9.0])).unwrap();
        assert_eq!(r, ld(2.0, &[1.0]));
        let r = ld_max(&ld(0.0, &[1.0, -1.0]), &ld(0.0, &[-1.0, 1.0])).unwrap();
        assert_eq!(r, ld(0.0, &[1.0, -1.0]));
        let a = ld(0.3, &[1.0, 2.0]);
        assert_eq!(ld_max(&a, &a).unwrap(), a);
    }

    #[test]
    fn abs_selection() {
        assert_eq!(ld_abs(&ld(-3.0, &[1.0, 0.0])), ld(3.0, &[-1.0, 0.0]));
        assert_eq!(ld_abs(&ld(0.0, &[1.0, -1.0])), ld(0.0, &[1.0, -1.0]));
        assert_eq!(ld_abs(&ld(0.0, &[0.0, 0.0])), ld(0.0, &[0.0, 0.0]));
        // first nonzero direction negative: the -x branch wins
        assert_eq!(ld_abs(&ld(0.0, &[0.0, -2.0])), ld(0.0, &[0.0, 2.0]));
    }

    #[test]
    fn mismatched_direction_counts_are_rejected() {
        let err = ld_min(&ld(0.0, &[1.0]), &ld(0.0, &[1.0, 2.0])).unwrap_err();
        assert!(matches!(err, Error::DirectionMismatch { left: 1, right: 2 }));
        assert!(ld_max(&ld(0.0, &[]), &ld(0.0, &[1.0])).is_err());
    }

    #[test]
    fn smooth_rules() {
        let p = &ld(2.0, &[1.0, 0.0]) * &ld(3.0, &[0.0, 1.0]);
        assert_eq!(p, ld(6.0, &[3.0, 2.0]));
        assert_eq!(ld(0.0, &[1.0]).exp(), ld(1.0, &[1.0]));
        assert_eq!(ld(2.0, &[1.0]).pow(&LdScalar::constant(2.0, 1)), ld(4.0, &[4.0]));
        let q = &ld(1.0, &[1.0]) / &ld(2.0, &[0.0]);
        assert_eq!(q, ld(0.5, &[0.5]));
    }

    #[test]
    fn sqrt_at_zero_with_no_direction_stays_finite() {
        let s = ld(0.0, &[0.0, 0.0]).sqrt();
        assert!(s.is_finite());
        assert!(!ld(0.0, &[1.0]).sqrt().is_finite());
    }

    #[test]
    fn negative_base_integer_power() {
        let r = ld(-2.0, &[1.0]).pow(&LdScalar::constant(3.0, 1));
        assert_eq!(r, ld(-8.0, &[12.0]));
    }

    #[test]
    fn probing_right_inverse() {
        let m = DirectionsMatrix::probing(&[0.3, -1.0]);
        assert_eq!(m.k(), 3);
        assert_eq!(m.kind(), RightInverseKind::DropFirstColumn);
        let prod = m.entries() * m.right_inverse();
        assert_eq!(prod, DMatrix::identity(2, 2));
        assert!(DirectionsMatrix::square(DMatrix::zeros(2, 2)).is_err());
    }
}
