//! Exact truncated power series with nonnegative rational coefficients and
//! zero constant term.
//!
//! Every series carries an explicit truncation order `N`: coefficients of
//! `z^1..=z^N` are known exactly, everything above is unknown. Binary
//! operations truncate to the smaller of the two orders.

use std::fmt;
use std::ops;
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeriesError {
    #[error("negative coefficient {value} at index {index}")]
    Negative { index: usize, value: String },
    #[error("power series must have zero constant term")]
    ConstantTerm,
    #[error("truncation order must be positive")]
    ZeroOrder,
    #[error("evaluation point {0} is negative")]
    NegativePoint(f64),
    #[error("series order {0} is too low for numeric evaluation (need at least 8)")]
    OrderTooLow(usize),
    #[error("invalid number {0:?}")]
    BadNumber(String),
}

/// An exact nonnegative rational number.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coefficient(BigRational);

impl Coefficient {
    pub fn new(value: BigRational) -> Result<Self, SeriesError> {
        if value.is_negative() {
            return Err(SeriesError::Negative { index: 0, value: value.to_string() });
        }
        Ok(Coefficient(value))
    }

    pub fn zero() -> Self {
        Coefficient(BigRational::zero())
    }

    pub fn one() -> Self {
        Coefficient(BigRational::one())
    }

    pub fn integer(n: u64) -> Self {
        Coefficient(BigRational::from_integer(BigInt::from(n)))
    }

    /// `num/den`; panics if `den == 0`.
    pub fn ratio(num: u64, den: u64) -> Self {
        assert!(den != 0, "zero denominator");
        Coefficient(BigRational::new(BigInt::from(num), BigInt::from(den)))
    }

    pub fn value(&self) -> &BigRational {
        &self.0
    }

    pub fn into_inner(self) -> BigRational {
        self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn to_f64(&self) -> f64 {
        ratio_to_f64(&self.0)
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0.to_string())
    }
}

/// Accepts `7`, `3/4` and plain decimals such as `0.25`, all parsed exactly.
impl FromStr for Coefficient {
    type Err = SeriesError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || SeriesError::BadNumber(s.to_string());
        let s = s.trim();
        let value = if let Some((num, den)) = s.split_once('/') {
            let num: BigInt = num.trim().parse().map_err(|_| bad())?;
            let den: BigInt = den.trim().parse().map_err(|_| bad())?;
            if den.is_zero() {
                return Err(bad());
            }
            BigRational::new(num, den)
        } else if let Some((int, frac)) = s.split_once('.') {
            if frac.is_empty() || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let int: BigInt = if int.is_empty() { BigInt::zero() } else { int.parse().map_err(|_| bad())? };
            let frac_val: BigInt = frac.parse().map_err(|_| bad())?;
            let scale = num_traits::pow(BigInt::from(10), frac.len());
            BigRational::new(int * &scale + frac_val, scale)
        } else {
            BigRational::from_integer(s.parse().map_err(|_| bad())?)
        };
        Coefficient::new(value).map_err(|_| bad())
    }
}

/// Natural log of `|r|`, robust for integers far outside the f64 range.
/// Returns `-inf` for zero.
pub(crate) fn ln_abs(r: &BigRational) -> f64 {
    if r.is_zero() {
        return f64::NEG_INFINITY;
    }
    ln_bigint(r.numer()) - ln_bigint(r.denom())
}

pub(crate) fn ln_bigint(n: &BigInt) -> f64 {
    let bits = n.bits();
    if bits <= 1000 {
        n.abs().to_f64().unwrap_or(f64::INFINITY).ln()
    } else {
        let shift = bits - 64;
        let top: BigInt = n.abs() >> shift;
        top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
    }
}

pub(crate) fn ratio_to_f64(r: &BigRational) -> f64 {
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() && d != 0.0 => n / d,
        _ => {
            let sign = if r.is_negative() { -1.0 } else { 1.0 };
            sign * ln_abs(r).exp()
        }
    }
}

/// Value of a numeric evaluation together with a heuristic bound on the
/// omitted tail. `tail_bound == f64::INFINITY` means the known prefix gives
/// no evidence of convergence at this point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RealValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// Safety factor applied to the empirical coefficient growth ratio.
pub const TAIL_SAFETY: f64 = 1.25;

/// Power series in `DOM[z]` truncated at `order`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Series {
    // coeffs[0] is the (always zero) constant term; len == order + 1
    coeffs: Vec<BigRational>,
}

impl fmt::Debug for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Series[")?;
        for (i, c) in self.coeffs.iter().enumerate().skip(1) {
            if i > 1 {
                write!(f, ", ")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, "; O(z^{})]", self.order() + 1)
    }
}

impl Series {
    pub fn zero(order: usize) -> Self {
        assert!(order > 0, "truncation order must be positive");
        Series { coeffs: vec![BigRational::zero(); order + 1] }
    }

    /// `c * z^k`, truncated at `order`.
    pub fn monomial(k: usize, c: Coefficient, order: usize) -> Self {
        assert!(k >= 1, "monomial must have positive degree");
        let mut s = Series::zero(order);
        if k <= order {
            s.coeffs[k] = c.0;
        }
        s
    }

    /// `z`, truncated at `order`.
    pub fn z(order: usize) -> Self {
        Series::monomial(1, Coefficient::one(), order)
    }

    /// Builds a series from the coefficients of `z^1, z^2, ...`; the order is
    /// the number of values supplied.
    pub fn from_rationals(values: Vec<BigRational>) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::ZeroOrder);
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| v.is_negative()) {
            return Err(SeriesError::Negative { index: i + 1, value: v.to_string() });
        }
        let mut coeffs = Vec::with_capacity(values.len() + 1);
        coeffs.push(BigRational::zero());
        coeffs.extend(values);
        Ok(Series { coeffs })
    }

    pub fn from_coefficients(values: impl IntoIterator<Item = Coefficient>) -> Result<Self, SeriesError> {
        Series::from_rationals(values.into_iter().map(Coefficient::into_inner).collect())
    }

    pub fn from_integers(values: &[u64]) -> Self {
        Series::from_rationals(values.iter().map(|&v| BigRational::from_integer(v.into())).collect())
            .expect("nonempty integer list")
    }

    /// Validates a raw coefficient vector (index 0 = constant term).
    pub fn from_raw(coeffs: Vec<BigRational>) -> Result<Self, SeriesError> {
        if coeffs.len() < 2 {
            return Err(SeriesError::ZeroOrder);
        }
        if !coeffs[0].is_zero() {
            return Err(SeriesError::ConstantTerm);
        }
        if let Some((i, v)) = coeffs.iter().enumerate().find(|(_, v)| v.is_negative()) {
            return Err(SeriesError::Negative { index: i, value: v.to_string() });
        }
        Ok(Series { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient of `z^n`; `n` must not exceed the order.
    pub fn coeff(&self, n: usize) -> &BigRational {
        &self.coeffs[n]
    }

    /// Coefficients of `z^1..=z^N`.
    pub fn coefficients(&self) -> &[BigRational] {
        &self.coeffs[1..]
    }

    /// Coefficients including the zero constant term at index 0.
    pub fn raw(&self) -> &[BigRational] {
        &self.coeffs
    }

    pub fn truncate(&self, order: usize) -> Series {
        assert!(order > 0);
        let order = order.min(self.order());
        Series { coeffs: self.coeffs[..=order].to_vec() }
    }

    /// Index of the first nonzero coefficient.
    pub fn valuation(&self) -> Option<usize> {
        self.coeffs.iter().position(|c| !c.is_zero())
    }

    pub fn is_zero(&self) -> bool {
        self.valuation().is_none()
    }

    pub fn is_integral(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_integer())
    }

    pub fn to_int_series(&self) -> Option<IntSeries> {
        self.is_integral().then(|| IntSeries { coeffs: self.coeffs.iter().map(|c| c.to_integer()).collect() })
    }

    /// Coefficientwise `self ⊴ other` on the common prefix.
    pub fn dominated_by(&self, other: &Series) -> bool {
        let n = self.order().min(other.order());
        (1..=n).all(|i| self.coeffs[i] <= other.coeffs[i])
    }

    pub fn add(&self, other: &Series) -> Series {
        let n = self.order().min(other.order());
        Series { coeffs: (0..=n).map(|i| &self.coeffs[i] + &other.coeffs[i]).collect() }
    }

    /// Cauchy product truncated to the smaller order.
    pub fn mul(&self, other: &Series) -> Series {
        let n = self.order().min(other.order());
        Series { coeffs: mul_raw(&self.coeffs, &other.coeffs, n) }
    }

    pub fn scale(&self, c: &Coefficient) -> Series {
        Series { coeffs: self.coeffs.iter().map(|a| a * &c.0).collect() }
    }

    /// `self(inner(z))`, truncated to the smaller order.
    pub fn compose(&self, inner: &Series) -> Series {
        let n = self.order().min(inner.order());
        // Horner: (((a_n) b + a_{n-1}) b + ... + a_1) b
        let mut acc = vec![BigRational::zero(); n + 1];
        for k in (1..=n).rev() {
            acc[0] += &self.coeffs[k];
            acc = mul_raw(&acc, &inner.coeffs, n);
        }
        Series { coeffs: acc }
    }

    /// `self(z^k)`: the plethysm term used by the unlabelled constructions.
    pub fn substitute_power(&self, k: usize) -> Series {
        assert!(k >= 1, "substitution power must be positive");
        let n = self.order();
        let mut coeffs = vec![BigRational::zero(); n + 1];
        for (i, c) in self.coeffs.iter().enumerate().skip(1) {
            if i * k > n {
                break;
            }
            coeffs[i * k] = c.clone();
        }
        Series { coeffs }
    }

    /// Termwise derivative. The result generally has a nonzero constant term,
    /// so it is returned as a raw sequence: entry `i` is the coefficient of
    /// `z^i`, for `i < order`.
    pub fn derivative(&self) -> Vec<BigRational> {
        (1..self.coeffs.len()).map(|n| &self.coeffs[n] * BigRational::from_integer(BigInt::from(n))).collect()
    }

    /// Evaluates the known prefix at `x >= 0` and bounds the omitted tail by
    /// a geometric series whose ratio is the growth rate of the trailing
    /// coefficients (or `tail_ratio_hint`), inflated by [`TAIL_SAFETY`].
    pub fn eval_real(&self, x: f64, tail_ratio_hint: Option<f64>) -> Result<RealValue, SeriesError> {
        if x < 0.0 || x.is_nan() {
            return Err(SeriesError::NegativePoint(x));
        }
        if self.order() < 8 {
            return Err(SeriesError::OrderTooLow(self.order()));
        }
        let logs: Vec<f64> = self.coeffs.iter().map(ln_abs).collect();
        Ok(eval_log_coeffs(&logs, x, tail_ratio_hint))
    }
}

/// Evaluation of a nonnegative series given the natural logs of its
/// coefficients (index 0 = constant term, `-inf` for zero).
pub(crate) fn eval_log_coeffs(logs: &[f64], x: f64, tail_ratio_hint: Option<f64>) -> RealValue {
    if x == 0.0 {
        let value = if logs[0].is_finite() { logs[0].exp() } else { 0.0 };
        return RealValue { value, tail_bound: 0.0 };
    }
    let lx = x.ln();
    let value: f64 =
        logs.iter().enumerate().filter(|(_, l)| l.is_finite()).map(|(i, l)| (l + i as f64 * lx).exp()).sum();
    RealValue { value, tail_bound: tail_bound(logs, x, tail_ratio_hint) }
}

fn tail_bound(logs: &[f64], x: f64, hint: Option<f64>) -> f64 {
    let n = logs.len() - 1;
    let nonzero_from = |start: usize| -> Vec<usize> { (start..=n).filter(|&i| logs[i].is_finite()).collect() };
    let mut idx = nonzero_from(n - n / 4);
    if idx.is_empty() {
        // no activity in the last quarter: treat as a polynomial
        return 0.0;
    }
    if idx.len() < 2 {
        idx = nonzero_from(n / 2);
    }
    let growth = match hint {
        Some(h) => h,
        None => {
            if idx.len() < 2 {
                return f64::INFINITY;
            }
            idx.windows(2).map(|w| ((logs[w[1]] - logs[w[0]]) / (w[1] - w[0]) as f64).exp()).fold(0.0, f64::max)
        }
    };
    let r = TAIL_SAFETY * growth;
    let rx = r * x;
    if rx >= 1.0 {
        return f64::INFINITY;
    }
    let m = *idx.last().unwrap();
    let lead = logs[m] + m as f64 * x.ln();
    (lead + (n + 1 - m) as f64 * rx.ln()).exp() / (1.0 - rx)
}

/// Truncated product of two raw coefficient vectors (index 0 = constant).
pub(crate) fn mul_raw(a: &[BigRational], b: &[BigRational], order: usize) -> Vec<BigRational> {
    let mut out = vec![BigRational::zero(); order + 1];
    for (i, ai) in a.iter().enumerate().take(order + 1) {
        if ai.is_zero() {
            continue;
        }
        for (j, bj) in b.iter().enumerate().take(order + 1 - i) {
            if !bj.is_zero() {
                out[i + j] += ai * bj;
            }
        }
    }
    out
}

impl ops::Add for &Series {
    type Output = Series;
    fn add(self, rhs: &Series) -> Series {
        Series::add(self, rhs)
    }
}

impl ops::Mul for &Series {
    type Output = Series;
    fn mul(self, rhs: &Series) -> Series {
        Series::mul(self, rhs)
    }
}

/// A series in `IDOM[z]`: nonnegative integer coefficients, zero constant term.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IntSeries {
    coeffs: Vec<BigInt>,
}

impl IntSeries {
    /// From the coefficients of `z^1, z^2, ...`.
    pub fn new(values: Vec<BigInt>) -> Result<Self, SeriesError> {
        if values.is_empty() {
            return Err(SeriesError::ZeroOrder);
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| v.is_negative()) {
            return Err(SeriesError::Negative { index: i + 1, value: v.to_string() });
        }
        let mut coeffs = Vec::with_capacity(values.len() + 1);
        coeffs.push(BigInt::zero());
        coeffs.extend(values);
        Ok(IntSeries { coeffs })
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, n: usize) -> &BigInt {
        &self.coeffs[n]
    }

    pub fn coefficients(&self) -> &[BigInt] {
        &self.coeffs[1..]
    }

    pub fn to_series(&self) -> Series {
        Series { coeffs: self.coeffs.iter().map(|c| BigRational::from_integer(c.clone())).collect() }
    }
}
