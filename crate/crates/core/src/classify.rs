//! Static certification of a recursion equation `w = A(z) + Θ₁(w)`.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::One;
use serde::{Serialize, Serializer};

use crate::series::Coefficient;
use crate::term::{split_constant_part, Generator, RadiusClass, SplitError, StdKind, Term};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Retro {
    Retro,
    WeaklyRetro,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Openness {
    OpenElementary,
    /// Open at the solution once `Θ(T)(ρ) < ∞` is observed numerically.
    OpenForSolutionPending,
    NotOpen(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Membership {
    InOE,
    InOI,
    InONeither(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Classification {
    pub retro: Retro,
    pub nonlinear: bool,
    /// `R` with `Θ(T) ⊴ A_R(z + T)` for every `T`.
    pub bounded: Option<Coefficient>,
    pub integral: bool,
    pub openness: Openness,
    pub membership: Membership,
}

pub fn classify(t: &Term) -> Classification {
    let membership = check_membership(t);
    let openness = match &membership {
        Membership::InOE => Openness::OpenElementary,
        Membership::InOI => Openness::OpenForSolutionPending,
        Membership::InONeither(r) => Openness::NotOpen(r.clone()),
    };
    Classification {
        retro: check_retro(t),
        nonlinear: check_nonlinear(t),
        bounded: check_bounded(t),
        integral: is_integral(t),
        openness,
        membership,
    }
}

// ---------------------------------------------------------------------------
// valuation and retro lag

pub(crate) const INF: u64 = u64::MAX;

/// Lower bound on the order of `t(T)` given a lower bound `vw` on the order of the w-input.
pub(crate) fn valuation_with(t: &Term, vw: u64) -> u64 {
    match t {
        Term::W => vw,
        Term::Z => 1,
        Term::Const(g) => g.valuation().map_or(INF, |v| v as u64),
        Term::Scale(_, a) | Term::ExpM1(a) => valuation_with(a, vw),
        Term::Add(a, b) => valuation_with(a, vw).min(valuation_with(b, vw)),
        Term::Mul(a, b) => valuation_with(a, vw).saturating_add(valuation_with(b, vw)),
        Term::Std { set, arg, .. } | Term::PowSum { set, arg, .. } => set.min().saturating_mul(valuation_with(arg, vw)),
        Term::ComposeW { outer, inner } => valuation_with(outer, valuation_with(inner, vw)),
    }
}

/// Largest `L` such that coefficient `n` of `t(T)` reads only `T(1..=n-L)`.
///
/// `lw` and `vw` are the lag and valuation of whatever feeds the w-slot.
pub(crate) fn lag_with(t: &Term, lw: u64, vw: u64) -> u64 {
    match t {
        Term::W => lw,
        Term::Z | Term::Const(_) => INF,
        Term::Scale(_, a) | Term::ExpM1(a) => lag_with(a, lw, vw),
        Term::Add(a, b) => lag_with(a, lw, vw).min(lag_with(b, lw, vw)),
        Term::Mul(a, b) => {
            let (la, lb) = (lag_with(a, lw, vw), lag_with(b, lw, vw));
            let (va, vb) = (valuation_with(a, vw), valuation_with(b, vw));
            la.saturating_add(vb).min(lb.saturating_add(va))
        }
        Term::Std { set, arg, .. } | Term::PowSum { set, arg, .. } => {
            lag_with(arg, lw, vw).saturating_add(u64::from(!set.member(1)))
        }
        Term::ComposeW { outer, inner } => lag_with(outer, lag_with(inner, lw, vw), valuation_with(inner, vw)),
    }
}

pub fn retro_lag(t: &Term) -> u64 {
    lag_with(t, 0, 1)
}

pub fn check_retro(t: &Term) -> Retro {
    if retro_lag(t) >= 1 {
        Retro::Retro
    } else {
        Retro::WeaklyRetro
    }
}

// ---------------------------------------------------------------------------
// nonlinearity

/// (a w-leaf is on or below the node, the node is nonlinear in w)
fn nonlinear_with(t: &Term, env: (bool, bool)) -> (bool, bool) {
    match t {
        Term::W => env,
        Term::Z | Term::Const(_) => (false, false),
        Term::Scale(_, a) => nonlinear_with(a, env),
        Term::Add(a, b) => {
            let (ma, na) = nonlinear_with(a, env);
            let (mb, nb) = nonlinear_with(b, env);
            (ma || mb, na || nb)
        }
        Term::Mul(a, b) => {
            let (ma, na) = nonlinear_with(a, env);
            let (mb, nb) = nonlinear_with(b, env);
            (ma || mb, na || nb || (ma && mb))
        }
        Term::Std { set, arg, .. } | Term::PowSum { set, arg, .. } => {
            let (m, n) = nonlinear_with(arg, env);
            (m, n || (m && !set.is_identity()))
        }
        Term::ExpM1(a) => {
            let (m, n) = nonlinear_with(a, env);
            (m, n || m)
        }
        Term::ComposeW { outer, inner } => nonlinear_with(outer, nonlinear_with(inner, env)),
    }
}

pub fn check_nonlinear(t: &Term) -> bool {
    nonlinear_with(t, (true, false)).1
}

// ---------------------------------------------------------------------------
// boundedness

fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

fn compose_witness(r1: &BigRational, r2: &BigRational) -> BigRational {
    let s = rat(1) + r1 + r2;
    rat(2) * &s * &s
}

fn max_coeff_witness(coeffs: &[Coefficient]) -> BigRational {
    coeffs.iter().map(|c| c.value().clone()).fold(BigRational::one(), |m, c| if c > m { c } else { m })
}

fn generator_witness(g: &Generator) -> Option<BigRational> {
    match g {
        Generator::Poly(c) => Some(max_coeff_witness(c)),
        Generator::Geometric(r) => Some(r.value().clone()),
        Generator::ExpM1 => Some(BigRational::one()),
        Generator::UserList { coeffs, class } => (*class != RadiusClass::Zero).then(|| max_coeff_witness(coeffs)),
    }
}

fn bounded_raw(t: &Term) -> Option<BigRational> {
    Some(match t {
        Term::Z | Term::W => BigRational::one(),
        Term::Const(g) => generator_witness(g)?,
        Term::Scale(c, a) => (c.value() + rat(1)) * bounded_raw(a)?,
        Term::Add(a, b) | Term::Mul(a, b) => bounded_raw(a)? + bounded_raw(b)?,
        Term::ComposeW { outer, inner } => compose_witness(&bounded_raw(outer)?, &bounded_raw(inner)?),
        Term::Std { arg, .. } => unary_witness(BigRational::one(), arg)?,
        Term::PowSum { c, arg, .. } => unary_witness(c.value().clone(), arg)?,
        Term::ExpM1(arg) => unary_witness(BigRational::one(), arg)?,
    })
}

/// Witness of `Φ(arg)` where `Φ(w) ⊴ A_r(z + w)`.
fn unary_witness(r: BigRational, arg: &Term) -> Option<BigRational> {
    if matches!(arg, Term::W) {
        Some(r)
    } else {
        Some(compose_witness(&r, &bounded_raw(arg)?))
    }
}

pub fn check_bounded(t: &Term) -> Option<Coefficient> {
    bounded_raw(t).and_then(|r| Coefficient::new(r).ok())
}

// ---------------------------------------------------------------------------
// integrality and membership

fn generator_integral(g: &Generator) -> bool {
    g.is_integral()
}

pub fn is_integral(t: &Term) -> bool {
    let mut ok = true;
    t.visit(&mut |n| match n {
        Term::Scale(c, _) | Term::PowSum { c, .. } if !c.is_integer() => ok = false,
        Term::Const(g) if !generator_integral(g) => ok = false,
        Term::ExpM1(_) => ok = false,
        _ => {}
    });
    ok
}

fn generator_open(g: &Generator) -> Result<(), String> {
    match g.radius_class() {
        RadiusClass::Infinite | RadiusClass::FiniteDivergent => Ok(()),
        RadiusClass::FiniteConvergent => Err("a constant series converges at its radius, so it is not open".into()),
        RadiusClass::Zero => Err("a constant series has radius zero, so it is not bounded".into()),
    }
}

/// First node that keeps `t` out of the bounded open elementary operators.
fn elementary_obstruction(t: &Term) -> Option<String> {
    let mut reason = None;
    t.visit(&mut |n| {
        if reason.is_some() {
            return;
        }
        match n {
            Term::Const(g) => reason = generator_open(g).err(),
            Term::Std { kind, .. } if *kind != StdKind::Seq => {
                reason = Some(format!("{n} is not an elementary operator"));
            }
            _ => {}
        }
    });
    reason
}

fn integral_obstruction(t: &Term) -> Option<String> {
    let mut reason = None;
    t.visit(&mut |n| {
        if reason.is_some() {
            return;
        }
        reason = match n {
            Term::Scale(c, _) if !c.is_integer() => Some(format!("scalar {c} is not an integer")),
            Term::PowSum { c, .. } if !c.is_integer() => Some(format!("powsum scalar {c} is not an integer")),
            Term::ExpM1(_) => Some("expm1 has non-integral coefficients".into()),
            Term::Const(g) if !generator_integral(g) => Some(format!("constant {n} has non-integral coefficients")),
            Term::Const(g) => generator_open(g).err(),
            Term::Std { kind: StdKind::Cycle | StdKind::DCycle, set, .. }
                if !(set.is_finite() || set.harmonic_divergent()) =>
            {
                Some(format!("{n}: cycle restriction set is infinite with convergent harmonic sum"))
            }
            _ => None,
        };
    });
    reason
}

pub fn check_membership(t: &Term) -> Membership {
    let e = elementary_obstruction(t);
    if e.is_none() {
        return Membership::InOE;
    }
    let i = integral_obstruction(t);
    match (e, i) {
        (_, None) => Membership::InOI,
        (Some(e), Some(i)) => Membership::InONeither(format!("not in either O_E or O_I: O_E: {e}; O_I: {i}")),
        (None, Some(_)) => unreachable!("handled above"),
    }
}

// ---------------------------------------------------------------------------
// certificate

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Check {
    pub hypothesis: &'static str,
    pub pass: bool,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, thiserror::Error)]
pub enum RejectReason {
    #[error("no constant part: every summand mentions w")]
    NoConstantPart,
    #[error("not recursive: no summand mentions w")]
    NoRecursivePart,
    #[error("constant part: {0}")]
    ConstantPart(String),
    #[error("not retro: coefficient n of the operator reads t(n)")]
    NotRetro,
    #[error("linear: the recursive part is linear in w")]
    Linear,
    #[error("not bounded: no witness R found")]
    NotBounded,
    #[error("membership: {0}")]
    Membership(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Certified,
    Rejected(RejectReason),
}

fn ser_opt_term<S: Serializer>(t: &Option<Term>, s: S) -> Result<S::Ok, S::Error> {
    match t {
        Some(t) => s.serialize_some(&t.to_string()),
        None => s.serialize_none(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Certificate {
    #[serde(serialize_with = "ser_opt_term")]
    pub a_part: Option<Term>,
    #[serde(serialize_with = "ser_opt_term")]
    pub theta1: Option<Term>,
    /// Classification of `Θ₁`, absent when the split failed.
    pub classification: Option<Classification>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
}

impl Certificate {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    fn rejected(checks: Vec<Check>, reason: RejectReason) -> Self {
        Certificate { a_part: None, theta1: None, classification: None, checks, verdict: Verdict::Rejected(reason) }
    }
}

fn constant_divergence(a: &Term) -> Result<(), String> {
    let mut res = Ok(());
    a.visit(&mut |n| {
        if let (Ok(()), Term::Const(g)) = (&res, n) {
            res = match g.radius_class() {
                RadiusClass::Infinite | RadiusClass::FiniteDivergent => Ok(()),
                RadiusClass::FiniteConvergent => Err(format!("{n} converges at its radius")),
                RadiusClass::Zero => Err(format!("{n} has radius zero")),
            };
        }
    });
    res
}

pub fn certify(t: &Term) -> Certificate {
    let mut checks = Vec::new();
    let (a, theta1) = match split_constant_part(t) {
        Ok(p) => p,
        Err(e) => {
            checks.push(Check { hypothesis: "split", pass: false, reason: e.to_string() });
            let reason = match e {
                SplitError::NoConstantPart => RejectReason::NoConstantPart,
                SplitError::NoRecursivePart => RejectReason::NoRecursivePart,
            };
            return Certificate::rejected(checks, reason);
        }
    };
    checks.push(Check { hypothesis: "split", pass: true, reason: format!("A = {a}, Θ₁ = {theta1}") });
    let cls = classify(&theta1);
    let mut first_fail: Option<RejectReason> = None;
    let mut record = |checks: &mut Vec<Check>, hypothesis, result: Result<String, (String, RejectReason)>| match result
    {
        Ok(reason) => checks.push(Check { hypothesis, pass: true, reason }),
        Err((reason, rr)) => {
            checks.push(Check { hypothesis, pass: false, reason });
            first_fail.get_or_insert(rr);
        }
    };

    // every generator has a positive coefficient, so a w-free summand is nonzero
    record(&mut checks, "constant part nonzero", Ok("A has a positive coefficient".into()));
    record(
        &mut checks,
        "constant part diverges at its radius",
        constant_divergence(&a)
            .map(|()| "every constant leaf is entire or diverges at its radius".into())
            .map_err(|e| (e.clone(), RejectReason::ConstantPart(e))),
    );
    record(
        &mut checks,
        "retro",
        match cls.retro {
            Retro::Retro => Ok(format!("lag {}", display_lag(retro_lag(&theta1)))),
            Retro::WeaklyRetro => Err(("coefficient n reads t(n)".into(), RejectReason::NotRetro)),
        },
    );
    record(
        &mut checks,
        "nonlinear",
        if cls.nonlinear {
            Ok("w occurs below a nonlinear node or on both sides of a product".into())
        } else {
            Err(("Θ₁ is linear in w".into(), RejectReason::Linear))
        },
    );
    record(
        &mut checks,
        "bounded",
        match &cls.bounded {
            Some(r) => Ok(format!("witness R = {r}")),
            None => Err(("no witness".into(), RejectReason::NotBounded)),
        },
    );
    let membership = match &cls.membership {
        Membership::InOE => Ok("bounded open elementary operator (O_E)".to_string()),
        Membership::InOI if !is_integral(&a) => {
            let r = "not in either O_E or O_I: Θ₁ is in O_I but the constant part is not integral".to_string();
            Err((r.clone(), RejectReason::Membership(r)))
        }
        Membership::InOI => Ok("integral operator built from open elementary and standard operators (O_I)".into()),
        Membership::InONeither(r) => Err((r.clone(), RejectReason::Membership(r.clone()))),
    };
    record(&mut checks, "membership", membership);

    let verdict = match first_fail {
        None => Verdict::Certified,
        Some(r) => Verdict::Rejected(r),
    };
    Certificate { a_part: Some(a), theta1: Some(theta1), classification: Some(cls), checks, verdict }
}

fn display_lag(l: u64) -> String {
    if l == INF {
        "infinite".into()
    } else {
        l.to_string()
    }
}
