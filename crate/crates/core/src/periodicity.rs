//! Shift-periodic constants `(d, q)` of a solution and its dominant singularities.
//!
//! A solution has the form `z^d·V(z^q)`: `d` is its first nonzero index and `q`
//! the gcd of the gaps between nonzero indices. Two routes compute them:
//! [`compute_dq`] reads the exact prefix, and [`elementary_dq`] derives them
//! from the operator alone through the bivariate spectrum of an elementary term.

use num_complex::Complex64;
use num_integer::Integer;
use num_traits::Zero;
use serde::Serialize;

use crate::fixpoint::SolutionPrefix;
use crate::specset::{SpecSet, SpectrumPrefix};
use crate::term::{Generator, StdKind, Term};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PeriodError {
    #[error("the solution prefix is identically zero")]
    ZeroSolution,
    #[error("term is not elementary: {0}")]
    NotElementary(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Exactness {
    ProvedStable,
    PrefixEstimate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PeriodInfo {
    pub d: u64,
    pub q: u64,
    /// Trailing spectrum elements over which `q` did not change.
    pub stabilization_span: usize,
    pub exactness: Exactness,
}

impl PeriodInfo {
    pub fn warning(&self) -> Option<String> {
        (self.exactness == Exactness::PrefixEstimate).then(|| {
            format!(
                "period q = {} is a prefix estimate (stable over only {} trailing nonzero terms)",
                self.q, self.stabilization_span
            )
        })
    }

    /// Whether `n` lies in the support class `n ≡ d (mod q)`, `n >= d`.
    pub fn in_support_class(&self, n: u64) -> bool {
        n >= self.d && (n - self.d).is_multiple_of(self.q)
    }
}

/// Minimum confirming terms after the last gcd change for `ProvedStable`.
const CONFIRMATIONS: usize = 8;

/// Minimum index window over which the gcd must stay constant.
pub const STABILITY_WINDOW: usize = 48;

/// `(d, q)` read off the exact prefix.
///
/// `ProvedStable` requires the gcd to reach its final value by index `N/2`,
/// to survive at least [`CONFIRMATIONS`] further nonzero terms, and to hold
/// over at least [`STABILITY_WINDOW`] indices.
pub fn compute_dq(prefix: &SolutionPrefix) -> Result<PeriodInfo, PeriodError> {
    let n = prefix.order;
    let support: Vec<usize> = (1..=n).filter(|&i| !prefix.coeff(i).is_zero()).collect();
    let &d = support.first().ok_or(PeriodError::ZeroSolution)?;
    let mut g = 0u64;
    let mut last_change = 0;
    for (pos, &i) in support.iter().enumerate().skip(1) {
        let next = g.gcd(&((i - d) as u64));
        if next != g {
            g = next;
            last_change = pos;
        }
    }
    let span = support.len() - 1 - last_change;
    let settled = support[last_change];
    let stable = g > 0 && settled <= n / 2 && span >= CONFIRMATIONS && n - settled >= STABILITY_WINDOW;
    Ok(PeriodInfo {
        d: d as u64,
        q: g.max(1),
        stabilization_span: span,
        exactness: if stable { Exactness::ProvedStable } else { Exactness::PrefixEstimate },
    })
}

/// Whether every nonzero index of the prefix is `≡ d (mod q)`.
pub fn congruence_holds(prefix: &SolutionPrefix, info: &PeriodInfo) -> bool {
    (1..=prefix.order).all(|i| prefix.coeff(i).is_zero() || info.in_support_class(i as u64))
}

/// The `q` points `ρ·e^{2πij/q}`.
pub fn dominant_singularities(rho: f64, q: u64) -> Vec<Complex64> {
    (0..q).map(|j| Complex64::from_polar(rho, std::f64::consts::TAU * j as f64 / q as f64)).collect()
}

// ---------------------------------------------------------------------------
// operator-side computation

/// Horizon cap for the bivariate spectrum; sumsets are quadratic in it.
pub const ELEMENTARY_HORIZON: usize = 256;

/// Bivariate support of an elementary `E(z, w)`: `rows[n]` is `Spec(E_n)`
/// where `E = Σ E_n(z) wⁿ`, truncated to `n <= w_max` and z-degree `<= h`.
#[derive(Debug, Clone, PartialEq)]
struct Support {
    rows: Vec<SpectrumPrefix>,
}

impl Support {
    fn empty(h: usize, w_max: usize) -> Self {
        Support { rows: vec![SpectrumPrefix::empty(h); w_max + 1] }
    }

    fn h(&self) -> usize {
        self.rows[0].horizon()
    }

    fn w_max(&self) -> usize {
        self.rows.len() - 1
    }

    fn single(h: usize, w_max: usize, i: usize, n: usize) -> Self {
        let mut s = Self::empty(h, w_max);
        if n <= w_max {
            s.rows[n].insert(i);
        }
        s
    }

    fn is_empty(&self) -> bool {
        self.rows.iter().all(SpectrumPrefix::is_empty)
    }

    fn union(&self, other: &Support) -> Support {
        Support { rows: self.rows.iter().zip(&other.rows).map(|(a, b)| a.union(b)).collect() }
    }

    fn product(&self, other: &Support) -> Support {
        let mut out = Self::empty(self.h(), self.w_max());
        for (i, a) in self.rows.iter().enumerate().filter(|(_, r)| !r.is_empty()) {
            for (j, b) in other.rows.iter().enumerate().take(self.w_max() + 1 - i).filter(|(_, r)| !r.is_empty()) {
                out.rows[i + j] = out.rows[i + j].union(&a.sum_shift(b));
            }
        }
        out
    }

    /// `Σ_{m∈M} selfᵐ`; powers stop once they vanish from the window.
    fn power_sum(&self, set: &SpecSet) -> Support {
        let mut out = Self::empty(self.h(), self.w_max());
        let mut power = self.clone();
        let mut m = 1u64;
        while !power.is_empty() {
            if set.member(m) {
                out = out.union(&power);
            }
            if set.max().is_some_and(|top| m >= top) {
                break;
            }
            power = power.product(self);
            m += 1;
        }
        out
    }

    /// `Σ_n rows[n](z)·innerⁿ`.
    fn substitute(&self, inner: &Support) -> Support {
        let mut out = Self::empty(self.h(), self.w_max());
        let mut power = Self::single(self.h(), self.w_max(), 0, 0);
        for row in &self.rows {
            if power.is_empty() {
                break;
            }
            if !row.is_empty() {
                let mut coeff = Self::empty(self.h(), self.w_max());
                coeff.rows[0] = row.clone();
                out = out.union(&coeff.product(&power));
            }
            power = power.product(inner);
        }
        out
    }
}

fn generator_spectrum(g: &Generator, h: usize) -> SpectrumPrefix {
    SpectrumPrefix::from_elements(h, (1..=h).filter(|&i| !g.coeff(i).is_zero()))
}

fn support_of(t: &Term, h: usize, w_max: usize) -> Result<Support, PeriodError> {
    Ok(match t {
        Term::Z => Support::single(h, w_max, 1, 0),
        Term::W => Support::single(h, w_max, 0, 1),
        Term::Const(g) => {
            let mut s = Support::empty(h, w_max);
            s.rows[0] = generator_spectrum(g, h);
            s
        }
        Term::Scale(_, a) => support_of(a, h, w_max)?,
        Term::Add(a, b) => support_of(a, h, w_max)?.union(&support_of(b, h, w_max)?),
        Term::Mul(a, b) => support_of(a, h, w_max)?.product(&support_of(b, h, w_max)?),
        Term::ComposeW { outer, inner } => support_of(outer, h, w_max)?.substitute(&support_of(inner, h, w_max)?),
        Term::PowSum { set, arg, .. } | Term::Std { kind: StdKind::Seq, set, arg } => {
            support_of(arg, h, w_max)?.power_sum(set)
        }
        Term::ExpM1(arg) => support_of(arg, h, w_max)?.power_sum(&SpecSet::all()),
        Term::Std { kind, set, .. } => {
            return Err(PeriodError::NotElementary(format!("{}[{set}] is not an elementary operator", kind.name())))
        }
    })
}

/// `(d, q)` from the operator alone: `d = min Spec(E₀)` and
/// `q = gcd ∪_n (Spec(E_n) + (n-1)d)`, with spectra taken up to the horizon
/// `min(N, ELEMENTARY_HORIZON)`. `ProvedStable` when the gcd is already
/// attained by the elements up to half the horizon.
pub fn elementary_dq(t: &Term, prefix: &SolutionPrefix) -> Result<PeriodInfo, PeriodError> {
    let h = prefix.order.clamp(2, ELEMENTARY_HORIZON);
    // E_n contributes only while (n-1)d <= h, and d >= 1
    let probe = support_of(t, h, 0)?;
    let d = probe.rows[0].min().ok_or(PeriodError::ZeroSolution)?;
    let w_max = h / d + 1;
    let support = support_of(t, h, w_max)?;
    let mut union = SpectrumPrefix::empty(h);
    for (n, row) in support.rows.iter().enumerate() {
        let shifted = row.shift((n as isize - 1) * d as isize);
        union = union.union(&shifted);
    }
    let q_full = union.gcd_of(0);
    let half = SpectrumPrefix::from_elements(h, union.elements().filter(|&e| e <= h / 2));
    let q_half = half.gcd_of(0);
    let span = {
        let elems: Vec<usize> = union.elements().collect();
        let mut g = 0u64;
        let mut last = 0;
        for (pos, &e) in elems.iter().enumerate() {
            let next = g.gcd(&(e as u64));
            if next != g {
                g = next;
                last = pos;
            }
        }
        elems.len().saturating_sub(last + 1)
    };
    Ok(PeriodInfo {
        d: d as u64,
        q: q_full.max(1),
        stabilization_span: span,
        exactness: if q_full > 0 && q_half == q_full { Exactness::ProvedStable } else { Exactness::PrefixEstimate },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::solve;
    use crate::series::Series;
    use crate::term::parse;
    use proptest::prelude::*;

    fn prefix_of(values: &[u64]) -> SolutionPrefix {
        let series = Series::from_integers(values);
        SolutionPrefix { order: series.order(), series, stabilized_at: 0 }
    }

    fn dq(eq: &str, n: usize) -> (PeriodInfo, PeriodInfo) {
        let t = parse(eq).unwrap();
        let sol = solve(&t, n).unwrap();
        (compute_dq(&sol).unwrap(), elementary_dq(&t, &sol).unwrap())
    }

    #[test]
    fn prefix_examples() {
        let p = compute_dq(&prefix_of(&[1, 0, 1, 0, 2, 0, 5])).unwrap();
        assert_eq!((p.d, p.q), (1, 2));
        assert_eq!(p.exactness, Exactness::PrefixEstimate);
        let p = compute_dq(&prefix_of(&[1, 1, 2, 5, 14, 42, 132, 429])).unwrap();
        assert_eq!((p.d, p.q), (1, 1));
        assert_eq!(compute_dq(&prefix_of(&[0, 0, 0])), Err(PeriodError::ZeroSolution));
    }

    #[test]
    fn long_prefixes_are_proved_stable() {
        let sol = solve(&parse("z + z*MSet(w)").unwrap(), 60).unwrap();
        let p = compute_dq(&sol).unwrap();
        assert_eq!((p.d, p.q, p.exactness), (1, 1, Exactness::ProvedStable));
        assert!(p.warning().is_none());
    }

    #[test]
    fn short_prefixes_are_only_estimates() {
        let sol = solve(&parse("z + z*MSet(w)").unwrap(), 32).unwrap();
        let p = compute_dq(&sol).unwrap();
        assert_eq!((p.d, p.q, p.exactness), (1, 1, Exactness::PrefixEstimate));
        assert!(p.warning().unwrap().contains("prefix estimate"));
    }

    #[test]
    fn operator_side_examples() {
        let (a, b) = dq("z + z*w^2", 64);
        assert_eq!((a.d, a.q), (1, 2));
        assert_eq!((b.d, b.q, b.exactness), (1, 2, Exactness::ProvedStable));
        let (a, b) = dq("z + z*Seq(w)", 64);
        assert_eq!((a.q, b.q), (1, 1));
        let (a, b) = dq("z^2 + z^2*w^2", 64);
        // z² + z⁶ + 2z¹⁰ + ...
        assert_eq!((a.d, a.q), (2, 4));
        assert_eq!((b.d, b.q), (2, 4));
    }

    #[test]
    fn elementary_and_prefix_routes_agree() {
        for eq in [
            "z + z*w^2",
            "z + z*Seq(w)",
            "z + z*expm1(w)",
            "z^3 + z*w^3",
            "z^2 + z^4*Seq[even](w)",
            "poly(0, 1, 0, 1) + z*w*w",
            "z + (z*w*w)@(z + w)",
            "z + z*powsum(2, odd, w)",
        ] {
            let (a, b) = dq(eq, 96);
            assert_eq!((a.d, a.q), (b.d, b.q), "{eq}");
        }
    }

    #[test]
    fn standard_operators_are_not_elementary() {
        let t = parse("z + z*MSet(w)").unwrap();
        let sol = solve(&t, 16).unwrap();
        assert!(matches!(elementary_dq(&t, &sol), Err(PeriodError::NotElementary(_))));
    }

    #[test]
    fn singularities_on_the_circle() {
        let s = dominant_singularities(0.5, 2);
        assert!((s[0] - Complex64::new(0.5, 0.0)).norm() < 1e-15);
        assert!((s[1] - Complex64::new(-0.5, 0.0)).norm() < 1e-15);
        assert_eq!(dominant_singularities(0.3, 1), vec![Complex64::new(0.3, 0.0)]);
        let s = dominant_singularities(0.25, 4);
        for (p, want) in s.iter().zip([(0.25, 0.0), (0.0, 0.25), (-0.25, 0.0), (0.0, -0.25)]) {
            assert!((p - Complex64::new(want.0, want.1)).norm() < 1e-15);
        }
    }

    #[test]
    fn congruence_invariant_on_corpus() {
        for eq in ["z + z*w^2", "z^2 + z^2*w^2", "z + z*MSet(w)", "z + z*MSet[{3}](w)", "z^2 + z^2*Cycle[even](w)"] {
            let sol = solve(&parse(eq).unwrap(), 80).unwrap();
            let info = compute_dq(&sol).unwrap();
            assert!(congruence_holds(&sol, &info), "{eq}");
        }
    }

    proptest! {
        #[test]
        fn extending_a_prefix_never_increases_q(values in proptest::collection::vec(0u64..3, 12..40), cut in 8usize..12) {
            prop_assume!(values[..cut].iter().any(|&v| v > 0));
            let short = compute_dq(&prefix_of(&values[..cut])).unwrap();
            let long = compute_dq(&prefix_of(&values)).unwrap();
            prop_assert_eq!(short.d, long.d);
            prop_assert_eq!(short.q % long.q, 0);
        }
    }
}
