//! Characteristic point `(ρ, τ)` and the constant of `t(n) ~ C·ρ⁻ⁿ·n^{-3/2}`.
//!
//! The operator is evaluated at the solution through its representative
//! `E(z, w)`: plethysm arguments `A(z^k)` with `k >= 2` are frozen as known
//! series built from the exact prefix, and only `A(z)` stays live in `w`.
//! Values carry the partials `∂z`, `∂w`, `∂²w` by forward differentiation.

use std::f64::consts::PI;
use std::ops;

use serde::Serialize;

use crate::classify::is_integral;
use crate::fixpoint::{apply_operator, solve, FixpointError, SolutionPrefix};
use crate::periodicity::PeriodInfo;
use crate::series::{eval_log_coeffs, ln_abs, Series, SeriesError};
use crate::specset::SpecSet;
use crate::term::{StdKind, Term};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SingularityError {
    #[error("series order too low: {0}")]
    OrderTooLow(String),
    #[error("evaluation diverges: {0}")]
    DivergentEvaluation(String),
    #[error("no characteristic point found: {0}")]
    NoCriticalPoint(String),
    #[error("series tails ({tail:.3e}) exceed the tolerance at the candidate point even at order {order}")]
    PrecisionLoss { tail: f64, order: usize },
    #[error("second w-derivative {0:.3e} is not positive")]
    DegenerateSecondDerivative(f64),
    #[error(transparent)]
    Fixpoint(#[from] FixpointError),
    #[error(transparent)]
    Series(#[from] SeriesError),
}

type Result<T> = std::result::Result<T, SingularityError>;

fn diverges(what: impl Into<String>) -> SingularityError {
    SingularityError::DivergentEvaluation(what.into())
}

// ---------------------------------------------------------------------------
// jets

/// Value and partials `∂z`, `∂w`, `∂²w` of a bivariate function at a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct Jet2 {
    pub v: f64,
    pub dz: f64,
    pub dw: f64,
    pub dww: f64,
}

impl Jet2 {
    pub const ZERO: Jet2 = Jet2 { v: 0.0, dz: 0.0, dw: 0.0, dww: 0.0 };
    pub const ONE: Jet2 = Jet2 { v: 1.0, dz: 0.0, dw: 0.0, dww: 0.0 };

    pub fn new(v: f64, dz: f64, dw: f64, dww: f64) -> Self {
        Jet2 { v, dz, dw, dww }
    }

    pub fn z(x: f64) -> Self {
        Jet2::new(x, 1.0, 0.0, 0.0)
    }

    pub fn w(y: f64) -> Self {
        Jet2::new(y, 0.0, 1.0, 0.0)
    }

    /// `f∘self` given `f`, `f'` and `f''` at `self.v`.
    fn lift(self, f: f64, f1: f64, f2: f64) -> Jet2 {
        Jet2::new(f, f1 * self.dz, f1 * self.dw, f2 * self.dw * self.dw + f1 * self.dww)
    }

    pub fn exp(self) -> Jet2 {
        let e = self.v.exp();
        self.lift(e, e, e)
    }

    /// `-ln(1 - self)`; requires `v < 1`.
    pub fn neg_ln_1m(self) -> Jet2 {
        let g = 1.0 / (1.0 - self.v);
        self.lift(-(-self.v).ln_1p(), g, g * g)
    }

    /// `1/(1 - self)`; requires `v < 1`.
    pub fn geometric(self) -> Jet2 {
        let g = 1.0 / (1.0 - self.v);
        self.lift(g, g * g, 2.0 * g * g * g)
    }

    pub fn powi(self, m: u32) -> Jet2 {
        match m {
            0 => Jet2::ONE,
            1 => self,
            _ => {
                let m_f = m as f64;
                let p2 = self.v.powi(m as i32 - 2);
                self.lift(p2 * self.v * self.v, m_f * p2 * self.v, m_f * (m_f - 1.0) * p2)
            }
        }
    }
}

impl ops::Add for Jet2 {
    type Output = Jet2;
    fn add(self, o: Jet2) -> Jet2 {
        Jet2::new(self.v + o.v, self.dz + o.dz, self.dw + o.dw, self.dww + o.dww)
    }
}

impl ops::Sub for Jet2 {
    type Output = Jet2;
    fn sub(self, o: Jet2) -> Jet2 {
        Jet2::new(self.v - o.v, self.dz - o.dz, self.dw - o.dw, self.dww - o.dww)
    }
}

impl ops::Mul for Jet2 {
    type Output = Jet2;
    fn mul(self, o: Jet2) -> Jet2 {
        Jet2::new(
            self.v * o.v,
            self.dz * o.v + self.v * o.dz,
            self.dw * o.v + self.v * o.dw,
            self.dww * o.v + 2.0 * self.dw * o.dw + self.v * o.dww,
        )
    }
}

impl ops::Mul<f64> for Jet2 {
    type Output = Jet2;
    fn mul(self, c: f64) -> Jet2 {
        Jet2::new(self.v * c, self.dz * c, self.dw * c, self.dww * c)
    }
}

impl ops::Neg for Jet2 {
    type Output = Jet2;
    fn neg(self) -> Jet2 {
        self * -1.0
    }
}

impl std::iter::Sum for Jet2 {
    fn sum<I: Iterator<Item = Jet2>>(iter: I) -> Jet2 {
        iter.fold(Jet2::ZERO, |a, b| a + b)
    }
}

// ---------------------------------------------------------------------------
// representative

/// Log-coefficients of a frozen plethysm argument `U` and of `U'`.
#[derive(Debug, Clone)]
struct Frozen {
    logs: Vec<f64>,
    dlogs: Vec<f64>,
    val: Option<usize>,
}

impl Frozen {
    fn new(u: &Series) -> Self {
        let raw = u.raw();
        let logs: Vec<f64> = raw.iter().map(ln_abs).collect();
        let dlogs: Vec<f64> = (1..raw.len()).map(|n| logs[n] + (n as f64).ln()).collect();
        Frozen { logs, dlogs, val: u.valuation() }
    }
}

/// Plethysm constants `p_k = (U(x^k), k·x^{k-1}·U'(x^k), 0, 0)` for one `x`,
/// one vector per plethysm node in evaluation order.
#[derive(Debug, Clone)]
pub struct Plethysm {
    pub x: f64,
    consts: Vec<Vec<Jet2>>,
    /// Sum of the series tail bounds over all constants.
    pub tail: f64,
}

/// Numerical evaluator for the representative of an operator at its solution.
#[derive(Debug, Clone)]
pub struct Representative {
    term: Term,
    frozen: Vec<Frozen>,
    m_max: usize,
    tail_tol: f64,
    order: usize,
}

fn needs_plethysm(kind: StdKind, set: &SpecSet) -> bool {
    kind != StdKind::Seq && !set.is_identity()
}

fn collect(t: &Term, w: &Series, out: &mut Vec<Frozen>) -> std::result::Result<(), FixpointError> {
    match t {
        Term::Z | Term::W | Term::Const(_) => Ok(()),
        Term::Scale(_, a) | Term::ExpM1(a) | Term::PowSum { arg: a, .. } => collect(a, w, out),
        Term::Add(a, b) | Term::Mul(a, b) => {
            collect(a, w, out)?;
            collect(b, w, out)
        }
        Term::ComposeW { outer, inner } => {
            collect(inner, w, out)?;
            let fed = apply_operator(inner, w)?;
            collect(outer, &fed, out)
        }
        Term::Std { kind, set, arg } => {
            if needs_plethysm(*kind, set) {
                out.push(Frozen::new(&apply_operator(arg, w)?));
            }
            collect(arg, w, out)
        }
    }
}

/// Plethysm constants below this size are dropped.
const NEGLIGIBLE: f64 = 1e-30;

impl Representative {
    pub fn new(t: &Term, prefix: &SolutionPrefix, m_max: usize) -> Result<Self> {
        let mut frozen = Vec::new();
        collect(t, &prefix.series, &mut frozen)?;
        Ok(Representative { term: t.clone(), frozen, m_max: m_max.max(2), tail_tol: 1e-13, order: prefix.order })
    }

    pub fn has_plethysm(&self) -> bool {
        !self.frozen.is_empty()
    }

    pub fn plethysm_at(&self, x: f64) -> Result<Plethysm> {
        if !(0.0..1.0).contains(&x) && self.has_plethysm() {
            return Err(diverges(format!("plethysm terms need 0 <= x < 1, got {x}")));
        }
        let mut tail = 0.0;
        let mut consts = Vec::with_capacity(self.frozen.len());
        for f in &self.frozen {
            let mut ps = vec![Jet2::ZERO; 2];
            let val = f.val.unwrap_or(usize::MAX);
            for k in 2..=self.m_max {
                // U(x^k) <= O(x^{k·val}) once it is this small
                if x == 0.0 || (k * val) as f64 * x.ln() < NEGLIGIBLE.ln() {
                    break;
                }
                let xk = x.powi(k as i32);
                let u = eval_log_coeffs(&f.logs, xk, None);
                let du = eval_log_coeffs(&f.dlogs, xk, None);
                if !u.tail_bound.is_finite() || !du.tail_bound.is_finite() {
                    return Err(SingularityError::OrderTooLow(format!(
                        "prefix of order {} does not converge at x^{k} = {xk:.6}",
                        self.order
                    )));
                }
                tail += u.tail_bound;
                ps.push(Jet2::new(u.value, k as f64 * x.powi(k as i32 - 1) * du.value, 0.0, 0.0));
            }
            consts.push(ps);
        }
        Ok(Plethysm { x, consts, tail })
    }

    /// Richardson-extrapolated central differences of the value, for
    /// checking [`Representative::jet`]. Truncation error is `O(h⁴)`.
    pub fn finite_difference_jet(&self, x: f64, y: f64) -> Result<Jet2> {
        const H: f64 = 1e-3;
        let v = |x: f64, y: f64| -> Result<f64> { Ok(self.jet(&self.plethysm_at(x)?, y)?.v) };
        let centre = v(x, y)?;
        let mut d = [[0.0; 3]; 2];
        for (i, h) in [H, H / 2.0].into_iter().enumerate() {
            let (zp, zm) = (v(x + h, y)?, v(x - h, y)?);
            let (wp, wm) = (v(x, y + h)?, v(x, y - h)?);
            d[i] = [(zp - zm) / (2.0 * h), (wp - wm) / (2.0 * h), (wp - 2.0 * centre + wm) / (h * h)];
        }
        let r = |k: usize| (4.0 * d[1][k] - d[0][k]) / 3.0;
        Ok(Jet2::new(centre, r(0), r(1), r(2)))
    }

    pub fn jet(&self, pl: &Plethysm, y: f64) -> Result<Jet2> {
        let mut counter = 0;
        self.eval(&self.term, pl, Jet2::w(y), &mut counter)
    }

    fn eval(&self, t: &Term, pl: &Plethysm, wj: Jet2, ctr: &mut usize) -> Result<Jet2> {
        Ok(match t {
            Term::Z => Jet2::z(pl.x),
            Term::W => wj,
            Term::Const(g) => {
                let (v, d) = g.eval(pl.x).ok_or_else(|| diverges(format!("constant diverges at z = {}", pl.x)))?;
                Jet2::new(v, d, 0.0, 0.0)
            }
            Term::Scale(c, a) => self.eval(a, pl, wj, ctr)? * c.to_f64(),
            Term::Add(a, b) => self.eval(a, pl, wj, ctr)? + self.eval(b, pl, wj, ctr)?,
            Term::Mul(a, b) => self.eval(a, pl, wj, ctr)? * self.eval(b, pl, wj, ctr)?,
            Term::ComposeW { outer, inner } => {
                let fed = self.eval(inner, pl, wj, ctr)?;
                self.eval(outer, pl, fed, ctr)?
            }
            Term::ExpM1(a) => self.eval(a, pl, wj, ctr)?.exp() - Jet2::ONE,
            Term::PowSum { c, set, arg } => self.power_sum(self.eval(arg, pl, wj, ctr)? * c.to_f64(), set)?,
            Term::Std { kind: StdKind::Seq, set, arg } => self.power_sum(self.eval(arg, pl, wj, ctr)?, set)?,
            Term::Std { set, arg, .. } if set.is_identity() => self.eval(arg, pl, wj, ctr)?,
            Term::Std { kind, set, arg } => {
                let idx = *ctr;
                *ctr += 1;
                let a = self.eval(arg, pl, wj, ctr)?;
                let p = &pl.consts[idx];
                match kind {
                    StdKind::MSet => self.mset(a, p, set)?,
                    StdKind::DCycle => self.dcycle(a, p, set)?,
                    StdKind::Cycle => self.cycle(a, p, set)?,
                    StdKind::Seq => unreachable!("handled above"),
                }
            }
        })
    }

    fn check_tail(&self, tail: f64, value: f64, what: &str) -> Result<()> {
        if tail > self.tail_tol * value.abs().max(1.0) {
            Err(SingularityError::OrderTooLow(format!(
                "{what} truncated at m_max = {} leaves tail {tail:.3e}",
                self.m_max
            )))
        } else {
            Ok(())
        }
    }

    /// `Σ_{m∈M} aᵐ`.
    fn power_sum(&self, a: Jet2, set: &SpecSet) -> Result<Jet2> {
        if let Some(top) = set.max() {
            return Ok(set.members_upto(top).map(|m| a.powi(m as u32)).sum());
        }
        if a.v >= 1.0 {
            return Err(diverges(format!("power sum of {:.6} over an infinite set", a.v)));
        }
        if let Some((f, s)) = set.as_progression() {
            return Ok(a.powi(f as u32) * a.powi(s as u32).geometric());
        }
        let m_max = self.m_max as u64;
        let sum: Jet2 = set.members_upto(m_max).map(|m| a.powi(m as u32)).sum();
        self.check_tail(a.v.powi(self.m_max as i32 + 1) / (1.0 - a.v), sum.v, "power sum")?;
        Ok(sum)
    }

    fn mset(&self, a: Jet2, p: &[Jet2], set: &SpecSet) -> Result<Jet2> {
        let frozen_log =
            |sign: f64| -> Jet2 { (2..p.len()).map(|k| p[k] * (if k % 2 == 1 { sign } else { 1.0 } / k as f64)).sum() };
        match set.as_progression() {
            Some((1, 1)) => Ok((a + frozen_log(1.0)).exp() - Jet2::ONE),
            Some((f @ (1 | 2), 2)) => {
                let plus = (a + frozen_log(1.0)).exp();
                let minus = (-a + frozen_log(-1.0)).exp();
                Ok(if f == 1 { (plus - minus) * 0.5 } else { (plus + minus) * 0.5 - Jet2::ONE })
            }
            _ => {
                let m_lim = set.max().map_or(self.m_max, |top| top as usize);
                let pk = |k: usize| if k == 1 { a } else { p.get(k).copied().unwrap_or(Jet2::ZERO) };
                let mut h = vec![Jet2::ONE];
                for m in 1..=m_lim {
                    let s: Jet2 = (1..=m.min(p.len().max(2) - 1).max(1)).map(|k| pk(k) * h[m - k]).sum();
                    h.push(s * (1.0 / m as f64));
                }
                let sum: Jet2 = set.members_upto(m_lim as u64).map(|m| h[m as usize]).sum();
                if set.max().is_none() {
                    let (last, prev) = (h[m_lim].v, h[m_lim - 1].v);
                    let r = if prev > 0.0 { last / prev } else { 0.0 };
                    if r >= 0.9 {
                        return Err(SingularityError::OrderTooLow(format!(
                            "MSet terms decay too slowly (ratio {r:.3})"
                        )));
                    }
                    self.check_tail(last * r / (1.0 - r), sum.v, "MSet")?;
                }
                Ok(sum)
            }
        }
    }

    fn dcycle(&self, a: Jet2, p: &[Jet2], set: &SpecSet) -> Result<Jet2> {
        let pk = |k: usize| if k == 1 { a } else { p.get(k).copied().unwrap_or(Jet2::ZERO) };
        let k_max = p.len().max(2) - 1;
        let infinite = set.max().is_none();
        if infinite && a.v >= 1.0 {
            return Err(diverges(format!("cycle construction over an infinite set at A = {:.6}", a.v)));
        }
        if set.as_progression() == Some((1, 1)) {
            return Ok((1..=k_max).map(|k| pk(k).neg_ln_1m() * (phi(k) / k as f64)).sum());
        }
        let m_lim = set.max().map_or(self.m_max, |top| top as usize);
        let mut out = Jet2::ZERO;
        for k in 1..=k_max.min(m_lim) {
            let base = pk(k);
            let weight = phi(k) / k as f64;
            let mut power = Jet2::ONE;
            for j in 1..=m_lim / k {
                power = power * base;
                if set.member((j * k) as u64) {
                    out = out + power * (weight / j as f64);
                }
            }
        }
        if infinite {
            let j = self.m_max + 1;
            self.check_tail(a.v.powi(j as i32) / (j as f64 * (1.0 - a.v)), out.v, "DCycle")?;
        }
        Ok(out)
    }

    fn cycle(&self, a: Jet2, p: &[Jet2], set: &SpecSet) -> Result<Jet2> {
        let dc = self.dcycle(a, p, set)?;
        let p2 = p.get(2).copied().unwrap_or(Jet2::ZERO);
        let infinite = set.max().is_none();
        if infinite && p2.v >= 1.0 {
            return Err(diverges("reflection part of a cycle construction"));
        }
        let s = match set.as_progression() {
            Some((1, 1)) => (a * 2.0 + a * a + p2) * p2.geometric(),
            Some((1, 2)) => a * 2.0 * p2.geometric(),
            Some((2, 2)) => (a * a + p2) * p2.geometric(),
            _ => {
                let m_lim = set.max().map_or(self.m_max, |top| top as usize);
                let s: Jet2 = set
                    .members_upto(m_lim as u64)
                    .map(|m| {
                        let m = m as u32;
                        if m % 2 == 1 {
                            a * 2.0 * p2.powi((m - 1) / 2)
                        } else {
                            a * a * p2.powi((m - 2) / 2) + p2.powi(m / 2)
                        }
                    })
                    .sum();
                if infinite {
                    let tail = (2.0 * a.v + a.v * a.v + 1.0) * p2.v.powi(m_lim as i32 / 2) / (1.0 - p2.v);
                    self.check_tail(tail, s.v, "Cycle")?;
                }
                s
            }
        };
        Ok(dc * 0.5 + s * 0.25)
    }
}

fn phi(k: usize) -> f64 {
    crate::fixpoint::totient(k as u64) as f64
}

/// Jet of the representative of `t` at `(x, y)`, plethysm terms frozen at the
/// solution prefix.
pub fn eval_jet(t: &Term, prefix: &SolutionPrefix, x: f64, y: f64, m_max: usize) -> Result<Jet2> {
    let rep = Representative::new(t, prefix, m_max)?;
    rep.jet(&rep.plethysm_at(x)?, y)
}

// ---------------------------------------------------------------------------
// characteristic system

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharConfig {
    pub tol: f64,
    pub m_max: usize,
    /// Largest prefix order used when retrying after a precision loss.
    pub max_order: usize,
}

impl Default for CharConfig {
    fn default() -> Self {
        CharConfig { tol: 1e-8, m_max: 400, max_order: 2048 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CharSolution {
    pub rho: f64,
    pub tau: f64,
    #[serde(rename = "Ez")]
    pub ez: f64,
    #[serde(rename = "Eww")]
    pub eww: f64,
    /// `(|τ - E|, |1 - E_w|)` at the returned point.
    pub residuals: (f64, f64),
    pub rho_error: f64,
    pub tau_error: f64,
    /// Sum of plethysm tail bounds at `ρ`.
    pub tail: f64,
    /// Prefix order the plethysm terms were built from.
    pub order: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Phase {
    /// The inner equation `y = E(x, y)` has a solution with `E_w < 1`.
    Sub(f64),
    Super,
}

/// Newton's method on the convex `g(y) = E(x, y) - y` from `y = 0` climbs
/// monotonically to the smallest root when one exists.
fn classify_x(rep: &Representative, x: f64) -> Phase {
    let Ok(pl) = rep.plethysm_at(x) else { return Phase::Super };
    let mut y = 0.0;
    for _ in 0..200 {
        let Ok(j) = rep.jet(&pl, y) else { return Phase::Super };
        let g = j.v - y;
        if !g.is_finite() || j.dw >= 1.0 {
            return Phase::Super;
        }
        if g.abs() <= 4.0 * f64::EPSILON * y.max(1.0) {
            return Phase::Sub(y);
        }
        let next = y + g / (1.0 - j.dw);
        if next <= y {
            return Phase::Sub(y);
        }
        y = next;
    }
    // undecided: treat as beyond the singularity
    Phase::Super
}

/// Coarse `1/ρ` from the trailing nonzero coefficients.
fn growth_estimate(s: &Series) -> Option<f64> {
    let idx: Vec<usize> = (1..=s.order()).filter(|&i| !num_traits::Zero::is_zero(s.coeff(i))).collect();
    let (&hi, &lo) = (idx.last()?, idx.get(idx.len().checked_sub(1 + idx.len() / 4)?)?);
    (hi > lo).then(|| ((ln_abs(s.coeff(hi)) - ln_abs(s.coeff(lo))) / (hi - lo) as f64).exp())
}

fn bracket(rep: &Representative, t: &Term, prefix: &SolutionPrefix) -> Result<(f64, f64)> {
    let start = if is_integral(t) || rep.has_plethysm() {
        0.999
    } else {
        growth_estimate(&prefix.series).map_or(1.0, |g| 1.5 / g)
    };
    let mut hi = start;
    let mut tries = 0;
    while classify_x(rep, hi) != Phase::Super {
        if rep.has_plethysm() || tries > 60 {
            return Err(SingularityError::NoCriticalPoint(format!("no super-critical point found up to x = {hi}")));
        }
        hi *= 2.0;
        tries += 1;
    }
    let mut lo = hi * 1e-3;
    let mut tries = 0;
    while classify_x(rep, lo) == Phase::Super {
        if tries > 60 {
            return Err(SingularityError::NoCriticalPoint("no sub-critical point found".into()));
        }
        hi = lo;
        lo *= 1e-2;
        tries += 1;
    }
    Ok((lo, hi))
}

struct Polished {
    rho: f64,
    tau: f64,
    jet: Jet2,
    ewz: f64,
}

/// 2-D Newton on `(E - y, E_w - 1)`; `∂z E_w` by central differences.
fn polish(rep: &Representative, mut x: f64, mut y: f64) -> Result<Polished> {
    let jet_at = |x: f64, y: f64| -> Result<Jet2> { rep.jet(&rep.plethysm_at(x)?, y) };
    let ewz_at = |x: f64, y: f64| -> Result<f64> {
        let h = 1e-6 * x.max(1e-3);
        Ok((jet_at(x + h, y)?.dw - jet_at(x - h, y)?.dw) / (2.0 * h))
    };
    for _ in 0..4 {
        let j = jet_at(x, y)?;
        let ewz = ewz_at(x, y)?;
        let (f1, f2) = (j.v - y, j.dw - 1.0);
        let (a, b, c, d) = (j.dz, j.dw - 1.0, ewz, j.dww);
        let det = a * d - b * c;
        if det.abs() < 1e-300 {
            break;
        }
        let dx = (f1 * d - b * f2) / det;
        let dy = (a * f2 - c * f1) / det;
        let (nx, ny) = (x - dx, y - dy);
        if !(nx > 0.0 && ny.is_finite()) {
            break;
        }
        if jet_at(nx, ny).is_err() {
            break;
        }
        x = nx;
        y = ny;
    }
    let jet = jet_at(x, y)?;
    let ewz = ewz_at(x, y)?;
    Ok(Polished { rho: x, tau: y, jet, ewz })
}

fn char_point_once(t: &Term, prefix: &SolutionPrefix, cfg: &CharConfig) -> Result<CharSolution> {
    let rep = Representative::new(t, prefix, cfg.m_max)?;
    let (mut lo, mut hi) = bracket(&rep, t, prefix)?;
    let mut y_lo = match classify_x(&rep, lo) {
        Phase::Sub(y) => y,
        Phase::Super => unreachable!("bracket guarantees a sub-critical lower end"),
    };
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        match classify_x(&rep, mid) {
            Phase::Sub(y) => {
                lo = mid;
                y_lo = y;
            }
            Phase::Super => hi = mid,
        }
    }
    let p = polish(&rep, lo, y_lo)?;
    let tail = rep.plethysm_at(p.rho)?.tail;
    if tail > cfg.tol {
        return Err(SingularityError::PrecisionLoss { tail, order: prefix.order });
    }
    let residuals = ((p.tau - p.jet.v).abs(), (1.0 - p.jet.dw).abs());
    // a constant perturbation δ of E moves ρ by δ/E_z and τ by -E_wz·δρ/E_ww
    let delta = tail + residuals.0 + residuals.1;
    let rho_error = delta / p.jet.dz.max(f64::MIN_POSITIVE) + (hi - lo);
    let tau_error = (p.ewz / p.jet.dww).abs() * rho_error + residuals.0;
    Ok(CharSolution {
        rho: p.rho,
        tau: p.tau,
        ez: p.jet.dz,
        eww: p.jet.dww,
        residuals,
        rho_error,
        tau_error,
        tail,
        order: prefix.order,
    })
}

/// Solves `E(ρ, τ) = τ`, `E_w(ρ, τ) = 1` by bisection on `x` with an inner
/// Newton solve, followed by a 2-D Newton polish. On precision loss the prefix
/// order is doubled (at most three times, capped at `cfg.max_order`).
pub fn find_char_point(t: &Term, prefix: &SolutionPrefix, cfg: &CharConfig) -> Result<CharSolution> {
    let mut owned: Option<SolutionPrefix> = None;
    for retry in 0..=3 {
        let current = owned.as_ref().unwrap_or(prefix);
        let err = match char_point_once(t, current, cfg) {
            Ok(sol) => {
                if sol.residuals.0 > cfg.tol || sol.residuals.1 > cfg.tol {
                    return Err(SingularityError::NoCriticalPoint(format!(
                        "residuals ({:.3e}, {:.3e}) exceed tolerance {:.1e}",
                        sol.residuals.0, sol.residuals.1, cfg.tol
                    )));
                }
                return Ok(sol);
            }
            Err(e @ (SingularityError::PrecisionLoss { .. } | SingularityError::OrderTooLow(_))) => e,
            Err(e) => return Err(e),
        };
        let next = current.order * 2;
        if retry == 3 || next > cfg.max_order || !rep_uses_prefix(t) {
            return Err(err);
        }
        owned = Some(solve(t, next)?);
    }
    unreachable!("loop returns on its last iteration")
}

fn rep_uses_prefix(t: &Term) -> bool {
    let mut found = false;
    t.visit(&mut |n| {
        if let Term::Std { kind, set, .. } = n {
            found |= needs_plethysm(*kind, set);
        }
    });
    found
}

// ---------------------------------------------------------------------------
// asymptotic law

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticLaw {
    #[serde(rename = "C")]
    pub c: f64,
    #[serde(rename = "C_error")]
    pub c_error: f64,
    pub rho: f64,
    pub d: u64,
    pub q: u64,
    pub support: String,
}

/// `C = q·sqrt(ρ·E_z / (2π·E_ww))` on the support class `n ≡ d (mod q)`.
pub fn asymptotic_constant(sol: &CharSolution, p: &PeriodInfo, tol: f64) -> Result<AsymptoticLaw> {
    if sol.eww <= tol {
        return Err(SingularityError::DegenerateSecondDerivative(sol.eww));
    }
    let q = p.q as f64;
    let c = q * (sol.rho * sol.ez / (2.0 * PI * sol.eww)).sqrt();
    // relative error of ρ dominates; E_z and E_ww inherit the tail bound
    let rel = 0.5 * (sol.rho_error / sol.rho + sol.tail / sol.ez.min(sol.eww).max(f64::MIN_POSITIVE));
    Ok(AsymptoticLaw {
        c,
        c_error: c * rel,
        rho: sol.rho,
        d: p.d,
        q: p.q,
        support: if p.q == 1 { format!("n >= {}", p.d) } else { format!("n ≡ {} (mod {})", p.d % p.q, p.q) },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::periodicity::compute_dq;
    use crate::term::parse;
    use proptest::prelude::*;

    fn sol(eq: &str, n: usize) -> (Term, SolutionPrefix) {
        let t = parse(eq).unwrap();
        let s = solve(&t, n).unwrap();
        (t, s)
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn jet_examples() {
        let (t, s) = sol("z + z*w^2", 16);
        let j = eval_jet(&t, &s, 0.5, 1.0, 400).unwrap();
        assert_eq!(j, Jet2::new(1.0, 2.0, 1.0, 1.0));
        assert_eq!(eval_jet(&t, &s, 0.0, 0.0, 400).unwrap(), Jet2::new(0.0, 1.0, 0.0, 0.0));
    }

    #[test]
    fn jet_algebra_rules() {
        let f = Jet2::new(0.3, 0.2, 0.7, 0.1);
        let g = Jet2::new(0.5, -0.4, 0.2, 0.9);
        let fg = f * g;
        assert!(close(fg.dww, f.dww * g.v + 2.0 * f.dw * g.dw + f.v * g.dww, 1e-15));
        let sq = f.powi(2);
        assert!(close(sq.dww, (f * f).dww, 1e-15));
        assert!(close(f.powi(5).v, 0.3f64.powi(5), 1e-15));
        let e = f.exp();
        assert!(close(e.dww, e.v * (f.dw * f.dw + f.dww), 1e-15));
    }

    /// Centered differences of the value channel, plethysm frozen per `x`.
    fn finite_differences(rep: &Representative, x: f64, y: f64) -> (f64, f64, f64) {
        let j = rep.finite_difference_jet(x, y).unwrap();
        (j.dz, j.dw, j.dww)
    }

    fn rel_ok(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
    }

    #[test]
    fn mset_jet_matches_finite_difference_at_solution() {
        let (t, s) = sol("z + z*MSet(w)", 120);
        let rep = Representative::new(&t, &s, 400).unwrap();
        let y = s.series.eval_real(0.3, None).unwrap().value;
        let j = rep.jet(&rep.plethysm_at(0.3).unwrap(), y).unwrap();
        let (_, dw, _) = finite_differences(&rep, 0.3, y);
        assert!((j.dw - dw).abs() < 1e-6, "{} vs {dw}", j.dw);
    }

    #[test]
    fn mset_partials_follow_lower_symmetric_powers() {
        // ∂h_m/∂p₁ = h_{m-1} and ∂²h_m/∂p₁² = h_{m-2}
        let (t, s) = sol("z + MSet[{3}](w)", 40);
        let lower = |eq: &str| {
            let (u, _) = sol(eq, 40);
            let rep = Representative::new(&u, &s, 400).unwrap();
            rep.jet(&rep.plethysm_at(0.2).unwrap(), 0.3).unwrap().v
        };
        let rep = Representative::new(&t, &s, 400).unwrap();
        let j = rep.jet(&rep.plethysm_at(0.2).unwrap(), 0.3).unwrap();
        let h2 = lower("z + MSet[{2}](w)") - 0.2;
        assert!(close(j.dw, h2, 1e-12), "{} vs {h2}", j.dw);
        assert!(close(j.dww, 0.3, 1e-12));
    }

    #[test]
    fn char_point_examples() {
        let cfg = CharConfig::default();
        let (t, s) = sol("z + z*w^2", 200);
        let c = find_char_point(&t, &s, &cfg).unwrap();
        assert!(close(c.rho, 0.5, 1e-10) && close(c.tau, 1.0, 1e-8), "{c:?}");
        let (t, s) = sol("z + z*Seq(w)", 200);
        let c = find_char_point(&t, &s, &cfg).unwrap();
        assert!(close(c.rho, 0.25, 1e-9) && close(c.tau, 0.5, 1e-7), "{c:?}");
        let (t, s) = sol("z + z*expm1(w)", 60);
        let c = find_char_point(&t, &s, &cfg).unwrap();
        assert!(close(c.rho, (-1.0f64).exp(), 1e-8) && close(c.tau, 1.0, 1e-6), "{c:?}");
    }

    #[test]
    fn constant_examples() {
        let cfg = CharConfig::default();
        for (eq, want) in [
            ("z + z*w^2", (2.0 / PI).sqrt()),
            ("z + z*Seq(w)", 1.0 / (4.0 * PI.sqrt())),
            ("z + z*expm1(w)", 1.0 / (2.0 * PI).sqrt()),
        ] {
            let (t, s) = sol(eq, 120);
            let c = find_char_point(&t, &s, &cfg).unwrap();
            let law = asymptotic_constant(&c, &compute_dq(&s).unwrap(), cfg.tol).unwrap();
            assert!(close(law.c, want, 1e-7), "{eq}: {} vs {want}", law.c);
        }
    }

    #[test]
    fn degenerate_second_derivative_is_reported() {
        let c = CharSolution {
            rho: 0.5,
            tau: 1.0,
            ez: 1.0,
            eww: 0.0,
            residuals: (0.0, 0.0),
            rho_error: 0.0,
            tau_error: 0.0,
            tail: 0.0,
            order: 8,
        };
        let p =
            PeriodInfo { d: 1, q: 1, stabilization_span: 0, exactness: crate::periodicity::Exactness::PrefixEstimate };
        assert!(matches!(asymptotic_constant(&c, &p, 1e-8), Err(SingularityError::DegenerateSecondDerivative(_))));
    }

    #[test]
    fn rooted_trees_characteristic_residuals() {
        let (t, s) = sol("z + z*MSet(w)", 300);
        let c = find_char_point(&t, &s, &CharConfig::default()).unwrap();
        assert!(c.residuals.0 < 1e-8 && c.residuals.1 < 1e-8, "{c:?}");
        assert!(c.ez > 0.0 && c.eww > 0.0);
        assert!(c.rho > 0.33 && c.rho < 0.34, "{}", c.rho);
    }

    #[test]
    fn sub_critical_slope_is_monotone() {
        let (t, s) = sol("z + z*MSet(w)", 300);
        let rep = Representative::new(&t, &s, 400).unwrap();
        let mut last = 0.0;
        for i in 1..30 {
            let x = 0.33 * i as f64 / 30.0;
            let y = s.series.eval_real(x, None).unwrap().value;
            let ew = rep.jet(&rep.plethysm_at(x).unwrap(), y).unwrap().dw;
            assert!(ew >= last - 1e-12, "E_w decreased at x = {x}");
            last = ew;
        }
        assert!(last < 1.0);
    }

    const JET_CORPUS: [&str; 6] = [
        "z + z*w^2",
        "z + z*Seq(w)",
        "z + z*MSet(w)",
        "z + z*expm1(w)",
        "z + z*Cycle(w) + z*DCycle[odd](w)",
        "z + z*MSet[{2,3}](w) + (z*w*w)@(z + w)",
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn jets_match_finite_differences(idx in 0usize..6, xf in 0.05f64..0.3, yf in 0.05f64..0.4) {
            let (t, s) = sol(JET_CORPUS[idx], 80);
            let rep = Representative::new(&t, &s, 400).unwrap();
            let j = rep.jet(&rep.plethysm_at(xf).unwrap(), yf).unwrap();
            let (dz, dw, dww) = finite_differences(&rep, xf, yf);
            prop_assert!(rel_ok(j.dz, dz, 1e-5), "dz {} vs {}", j.dz, dz);
            prop_assert!(rel_ok(j.dw, dw, 1e-5), "dw {} vs {}", j.dw, dw);
            prop_assert!(rel_ok(j.dww, dww, 1e-5), "dww {} vs {}", j.dww, dww);
        }
    }
}
