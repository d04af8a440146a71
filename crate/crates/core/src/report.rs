//! Independent oracles, empirical validation of the universal law, and the
//! end-to-end analysis report.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::classify::{certify, Certificate, Classification, Membership, Openness, Verdict};
use crate::fixpoint::{divisors, solve, SolutionPrefix};
use crate::periodicity::{compute_dq, congruence_holds, dominant_singularities, elementary_dq, Exactness, PeriodInfo};
use crate::series::{ln_abs, mul_raw, IntSeries, Series};
use crate::singularity::{asymptotic_constant, find_char_point, AsymptoticLaw, CharConfig, CharSolution};
use crate::term::{parse, pretty_print, ParseError, Term};

// ---------------------------------------------------------------------------
// oracles

/// Rooted unlabelled trees from `n·t(n+1) = Σ_{k=1}^{n} (Σ_{d|k} d·t(d))·t(n-k+1)`.
pub fn euler_product_prefix(order: usize) -> IntSeries {
    let mut t = vec![BigInt::zero(), BigInt::one()];
    let mut s = vec![BigInt::zero()];
    for n in 1..order {
        s.push(divisors(n).into_iter().map(|d| BigInt::from(d) * &t[d]).sum());
        let total: BigInt = (1..=n).map(|k| &s[k] * &t[n - k + 1]).sum();
        t.push(total / BigInt::from(n));
    }
    t.truncate(order + 1);
    IntSeries::new(t.split_off(1)).expect("counts are nonnegative")
}

/// Shifted Catalan numbers `c(1) = 1`, `c(n+1) = Σ_{k=1}^{n} c(k)·c(n+1-k)`.
pub fn catalan_prefix(order: usize) -> IntSeries {
    let mut c = vec![BigInt::zero(), BigInt::one()];
    for n in 1..order {
        let next: BigInt = (1..=n).map(|k| &c[k] * &c[n + 1 - k]).sum();
        c.push(next);
    }
    c.truncate(order + 1);
    IntSeries::new(c.split_off(1)).expect("counts are nonnegative")
}

/// Partitions of `m` as multiplicity vectors `k[i]` = number of parts equal to `i`.
fn partitions(m: usize) -> Vec<Vec<usize>> {
    fn go(rest: usize, max_part: usize, k: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rest == 0 {
            out.push(k.clone());
            return;
        }
        for part in (1..=max_part.min(rest)).rev() {
            k[part] += 1;
            go(rest - part, part, k, out);
            k[part] -= 1;
        }
    }
    let mut out = Vec::new();
    go(m, m, &mut vec![0; m + 1], &mut out);
    out
}

/// `MSet_{m}(A)` by expanding the cycle index of the symmetric group,
/// `Z(S_m) = Σ_{λ⊢m} Π_i p_i^{k_i} / (i^{k_i}·k_i!)` with `p_i = A(z^i)`.
/// Independent of the solver's Newton recurrence.
pub fn mset_by_cycle_index(a: &Series, m: usize) -> Series {
    assert!(m >= 1, "multiset size must be positive");
    let n = a.order();
    let mut total = vec![BigRational::zero(); n + 1];
    for k in partitions(m) {
        let mut prod = vec![BigRational::zero(); n + 1];
        prod[0] = BigRational::one();
        let mut weight = BigInt::one();
        for (i, &ki) in k.iter().enumerate().skip(1) {
            let p = a.substitute_power(i);
            for j in 1..=ki {
                prod = mul_raw(&prod, p.raw(), n);
                weight *= BigInt::from(i) * BigInt::from(j);
            }
        }
        for (t, c) in total.iter_mut().zip(prod) {
            *t += c / BigRational::from_integer(weight.clone());
        }
    }
    Series::from_raw(total).expect("cycle index of a series without constant term")
}

// ---------------------------------------------------------------------------
// empirical checks

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error("only {found} support points; at least {needed} are required")]
    InsufficientSupportPoints { found: usize, needed: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitReport {
    /// `(n, t(n)·ρⁿ·n^{3/2})` on the support class.
    pub samples: Vec<(usize, f64)>,
    /// Mean of the samples over the last 20% of support indices.
    pub tail_mean: f64,
    pub relative_deviation: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// Minimum support points for a fit.
pub const MIN_FIT_POINTS: usize = 40;

/// Compares `t(n)·ρⁿ·n^{3/2}` on the support class against `C`.
pub fn empirical_fit(prefix: &SolutionPrefix, law: &AsymptoticLaw, threshold: f64) -> Result<FitReport, FitError> {
    let ln_rho = law.rho.ln();
    let samples: Vec<(usize, f64)> = (1..=prefix.order)
        .filter(|&n| (n as u64) >= law.d && (n as u64 - law.d).is_multiple_of(law.q) && !prefix.coeff(n).is_zero())
        .map(|n| (n, (ln_abs(prefix.coeff(n)) + n as f64 * ln_rho + 1.5 * (n as f64).ln()).exp()))
        .collect();
    if samples.len() < MIN_FIT_POINTS {
        return Err(FitError::InsufficientSupportPoints { found: samples.len(), needed: MIN_FIT_POINTS });
    }
    let tail = &samples[samples.len() - samples.len() / 5..];
    let tail_mean = tail.iter().map(|s| s.1).sum::<f64>() / tail.len() as f64;
    let relative_deviation = (tail_mean - law.c).abs() / law.c;
    Ok(FitReport { samples, tail_mean, relative_deviation, threshold, pass: relative_deviation <= threshold })
}

/// `(t(n)/t(n-q))^{1/q}` averaged over the trailing tenth of the support,
/// an estimate of `1/ρ`. `None` with fewer than 50 support points.
pub fn ratio_rho_estimate(prefix: &SolutionPrefix, p: &PeriodInfo) -> Option<f64> {
    let q = p.q as usize;
    let support: Vec<usize> = (1..=prefix.order).filter(|&n| !prefix.coeff(n).is_zero()).collect();
    if support.len() < 50 {
        return None;
    }
    let tail = &support[support.len() - support.len() / 10..];
    let ratios: Vec<f64> = tail
        .iter()
        .filter(|&&n| n > q && !prefix.coeff(n - q).is_zero())
        .map(|&n| ((ln_abs(prefix.coeff(n)) - ln_abs(prefix.coeff(n - q))) / q as f64).exp())
        .collect();
    (!ratios.is_empty()).then(|| ratios.iter().sum::<f64>() / ratios.len() as f64)
}

// ---------------------------------------------------------------------------
// pipeline

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("order {0} outside [32, 2048]")]
    Order(usize),
    #[error("tolerance {0:e} outside [1e-12, 1e-4]")]
    Tolerance(f64),
    #[error("fit threshold {0} must be positive")]
    FitThreshold(f64),
    #[error("m_max {0} must be at least 2")]
    MMax(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunConfig {
    pub order: usize,
    pub tol: f64,
    pub fit_threshold: f64,
    pub m_max: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { order: 600, tol: 1e-8, fit_threshold: 0.05, m_max: 400 }
    }
}

impl RunConfig {
    pub const ORDER_RANGE: (usize, usize) = (32, 2048);

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(Self::ORDER_RANGE.0..=Self::ORDER_RANGE.1).contains(&self.order) {
            return Err(ConfigError::Order(self.order));
        }
        if !(1e-12..=1e-4).contains(&self.tol) {
            return Err(ConfigError::Tolerance(self.tol));
        }
        if !self.fit_threshold.is_finite() || self.fit_threshold <= 0.0 {
            return Err(ConfigError::FitThreshold(self.fit_threshold));
        }
        if self.m_max < 2 {
            return Err(ConfigError::MMax(self.m_max));
        }
        Ok(())
    }

    fn char_config(&self) -> CharConfig {
        CharConfig { tol: self.tol, m_max: self.m_max, max_order: Self::ORDER_RANGE.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Certified and the empirical fit passes.
    Certified,
    Rejected,
    /// Certified, but a numeric stage failed or the fit missed its threshold.
    NumericFailure,
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Certified => 0,
            Outcome::Rejected => 2,
            Outcome::NumericFailure => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub deviation: Option<f64>,
    pub pass: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub equation: String,
    pub outcome: Outcome,
    pub order: usize,
    pub classification: Option<Classification>,
    pub certificate: Certificate,
    pub d: Option<u64>,
    pub q: Option<u64>,
    pub period_exactness: Option<Exactness>,
    pub rho: Option<f64>,
    pub rho_error: Option<f64>,
    pub tau: Option<f64>,
    pub tau_error: Option<f64>,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    #[serde(rename = "C_error")]
    pub c_error: Option<f64>,
    pub support: Option<String>,
    /// For integral operators whose openness depends on the solution: whether
    /// the solver reached a finite characteristic point. `None` otherwise.
    pub openness_confirmed: Option<bool>,
    /// Estimate of `1/ρ` from coefficient ratios.
    pub growth_ratio_estimate: Option<f64>,
    /// `|ratio·ρ - 1|` when both are known.
    pub growth_ratio_gap: Option<f64>,
    pub dominant_singularities: Vec<[f64; 2]>,
    pub fit: FitSummary,
    pub coefficients_head: Vec<String>,
    /// `"full"`, or `"reduced"` when a periodicity or tail estimate is heuristic.
    pub confidence: &'static str,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| out.push_str(&format!("{k:<22}{v}\n"));
        let num = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.12}"));
        let err = |v: Option<f64>| v.map_or(String::new(), |v| format!(" ± {v:.1e}"));
        line("equation", format!("w = {}", self.equation));
        line(
            "verdict",
            match &self.certificate.verdict {
                Verdict::Certified => "certified".into(),
                Verdict::Rejected(r) => format!("rejected ({r})"),
            },
        );
        if let Some(c) = &self.classification {
            let m = match &c.membership {
                Membership::InOE => "O_E".to_string(),
                Membership::InOI => "O_I".to_string(),
                Membership::InONeither(r) => r.clone(),
            };
            line("membership", m);
        }
        if let Some(ok) = self.openness_confirmed {
            line("openness", if ok { "confirmed at the solution" } else { "not confirmed" }.into());
        }
        line("order", self.order.to_string());
        line(
            "d, q",
            format!(
                "{}, {}",
                self.d.map_or("-".into(), |d| d.to_string()),
                self.q.map_or("-".into(), |q| q.to_string())
            ),
        );
        line("rho", format!("{}{}", num(self.rho), err(self.rho_error)));
        line("tau = T(rho)", format!("{}{}", num(self.tau), err(self.tau_error)));
        line("C", format!("{}{}", num(self.c), err(self.c_error)));
        if let Some(s) = &self.support {
            line("law", format!("t(n) ~ C·rho^-n·n^-3/2 on {s}"));
        }
        line("growth ratio", num(self.growth_ratio_estimate));
        line(
            "fit",
            match self.fit.deviation {
                Some(d) => format!("deviation {d:.4} ({})", if self.fit.pass { "pass" } else { "fail" }),
                None => "not run".into(),
            },
        );
        line("coefficients", self.coefficients_head.join(", "));
        line("confidence", self.confidence.into());
        for w in &self.warnings {
            line("warning", w.clone());
        }
        out
    }
}

/// The numeric stages that follow a successful certification.
struct Numerics {
    period: PeriodInfo,
    sol: CharSolution,
    law: AsymptoticLaw,
}

fn numerics(t: &Term, prefix: &SolutionPrefix, cfg: &RunConfig) -> Result<Numerics, String> {
    // the operator route proves (d, q) when it applies
    let period = match elementary_dq(t, prefix) {
        Ok(p) => p,
        Err(_) => compute_dq(prefix).map_err(|e| e.to_string())?,
    };
    let sol = find_char_point(t, prefix, &cfg.char_config()).map_err(|e| e.to_string())?;
    let law = asymptotic_constant(&sol, &period, cfg.tol).map_err(|e| e.to_string())?;
    Ok(Numerics { period, sol, law })
}

/// Parses and analyses one equation.
pub fn analyze(text: &str, cfg: &RunConfig) -> Result<AnalysisReport, ParseError> {
    Ok(analyze_term(&parse(text)?, cfg))
}

pub fn analyze_term(t: &Term, cfg: &RunConfig) -> AnalysisReport {
    analyze_parts(t, cfg).0
}

/// Like [`analyze_term`], also returning the exact prefix when it was computed.
pub fn analyze_parts(t: &Term, cfg: &RunConfig) -> (AnalysisReport, Option<SolutionPrefix>) {
    let certificate = certify(t);
    let mut warnings = Vec::new();
    let mut report = AnalysisReport {
        equation: pretty_print(t),
        outcome: Outcome::Rejected,
        order: cfg.order,
        classification: certificate.classification.clone(),
        certificate: certificate.clone(),
        d: None,
        q: None,
        period_exactness: None,
        rho: None,
        rho_error: None,
        tau: None,
        tau_error: None,
        c: None,
        c_error: None,
        support: None,
        openness_confirmed: None,
        growth_ratio_estimate: None,
        growth_ratio_gap: None,
        dominant_singularities: Vec::new(),
        fit: FitSummary { deviation: None, pass: false, threshold: cfg.fit_threshold },
        coefficients_head: Vec::new(),
        confidence: "full",
        warnings: Vec::new(),
    };

    let pending =
        matches!(certificate.classification.as_ref().map(|c| &c.openness), Some(Openness::OpenForSolutionPending));
    let prefix = match solve(t, cfg.order) {
        Ok(p) => Some(p),
        Err(e) => {
            warnings.push(format!("coefficients not computed: {e}"));
            None
        }
    };
    if let Some(p) = &prefix {
        report.coefficients_head = (1..=p.order.min(20)).map(|n| p.coeff(n).to_string()).collect();
        if let Ok(period) = compute_dq(p) {
            report.growth_ratio_estimate = ratio_rho_estimate(p, &period);
            if !congruence_holds(p, &period) {
                warnings.push("support congruence n ≡ d (mod q) fails on the prefix".into());
            }
        }
    }

    match (&certificate.verdict, &prefix) {
        (Verdict::Rejected(reason), _) => {
            warnings.push(format!("no certificate; law not asserted ({reason})"));
        }
        (Verdict::Certified, None) => report.outcome = Outcome::NumericFailure,
        (Verdict::Certified, Some(p)) => match numerics(t, p, cfg) {
            Err(e) => {
                warnings.push(format!("numeric stage failed: {e}"));
                report.openness_confirmed = pending.then_some(false);
                report.outcome = Outcome::NumericFailure;
            }
            Ok(Numerics { period, sol, law }) => {
                if let Some(w) = period.warning() {
                    warnings.push(w);
                    report.confidence = "reduced";
                }
                if sol.order > p.order {
                    warnings.push(format!("plethysm terms needed order {}", sol.order));
                }
                report.d = Some(period.d);
                report.q = Some(period.q);
                report.period_exactness = Some(period.exactness);
                report.rho = Some(sol.rho);
                report.rho_error = Some(sol.rho_error);
                report.tau = Some(sol.tau);
                report.tau_error = Some(sol.tau_error);
                report.c = Some(law.c);
                report.c_error = Some(law.c_error);
                report.support = Some(law.support.clone());
                report.openness_confirmed = pending.then_some(sol.tau.is_finite());
                report.dominant_singularities =
                    dominant_singularities(sol.rho, period.q).into_iter().map(|z| [z.re, z.im]).collect();
                if let Some(g) = report.growth_ratio_estimate {
                    let gap = (g * sol.rho - 1.0).abs();
                    report.growth_ratio_gap = Some(gap);
                    if gap > 0.01 {
                        warnings.push(format!("growth ratio {g:.6} differs from 1/rho by {:.2}%", 100.0 * gap));
                    }
                }
                match empirical_fit(p, &law, cfg.fit_threshold) {
                    Ok(fit) => {
                        report.fit.deviation = Some(fit.relative_deviation);
                        report.fit.pass = fit.pass;
                    }
                    Err(e) => warnings.push(format!("fit not run: {e}")),
                }
                report.outcome = if report.fit.pass { Outcome::Certified } else { Outcome::NumericFailure };
            }
        },
    }
    report.warnings = warnings;
    (report, prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::apply_operator;
    use crate::term::parse;

    fn ints(s: &IntSeries) -> Vec<i64> {
        s.coefficients().iter().map(|c| c.try_into().unwrap()).collect()
    }

    #[test]
    fn oracle_examples() {
        assert_eq!(ints(&euler_product_prefix(5)), vec![1, 1, 2, 4, 9]);
        assert_eq!(ints(&euler_product_prefix(1)), vec![1]);
        assert_eq!(ints(&catalan_prefix(6)), vec![1, 1, 2, 5, 14, 42]);
        assert_eq!(ints(&catalan_prefix(1)), vec![1]);
    }

    #[test]
    fn oracles_match_the_solver() {
        let s = solve(&parse("z + z*MSet(w)").unwrap(), 13).unwrap();
        assert_eq!(s.int_series().unwrap(), euler_product_prefix(13));
        let s = solve(&parse("z + z*Seq(w)").unwrap(), 40).unwrap();
        assert_eq!(s.int_series().unwrap(), catalan_prefix(40));
    }

    #[test]
    fn partition_counts() {
        let counts: Vec<usize> = (1..=8).map(|m| partitions(m).len()).collect();
        assert_eq!(counts, [1, 2, 3, 5, 7, 11, 15, 22]);
    }

    #[test]
    fn cycle_index_matches_the_operator() {
        let a = Series::from_integers(&[1, 2, 0, 3, 1, 1, 4, 0, 2, 5]);
        for m in 1..=6 {
            let t = parse(&format!("MSet[{{{m}}}](w)")).unwrap();
            assert_eq!(apply_operator(&t, &a).unwrap(), mset_by_cycle_index(&a, m), "m = {m}");
        }
        // two-element multisets of {z, z²}: z², z³, z⁴
        let b = Series::from_integers(&[1, 1, 0, 0]);
        assert_eq!(mset_by_cycle_index(&b, 2), Series::from_integers(&[0, 1, 1, 1]));
    }

    #[test]
    fn ratio_estimates() {
        let s = solve(&parse("z + z*w^2").unwrap(), 400).unwrap();
        let g = ratio_rho_estimate(&s, &compute_dq(&s).unwrap()).unwrap();
        assert!((g - 2.0).abs() < 0.02, "{g}");
        let s = solve(&parse("z + z*Seq(w)").unwrap(), 400).unwrap();
        let g = ratio_rho_estimate(&s, &compute_dq(&s).unwrap()).unwrap();
        assert!((g - 4.0).abs() < 0.04, "{g}");
        let short = solve(&parse("z + z*Seq(w)").unwrap(), 20).unwrap();
        assert_eq!(ratio_rho_estimate(&short, &compute_dq(&short).unwrap()), None);
    }

    #[test]
    fn fit_needs_support_points() {
        let s = solve(&parse("z + z*Seq(w)").unwrap(), 20).unwrap();
        let law = AsymptoticLaw { c: 0.14, c_error: 0.0, rho: 0.25, d: 1, q: 1, support: String::new() };
        assert!(matches!(empirical_fit(&s, &law, 0.05), Err(FitError::InsufficientSupportPoints { found: 20, .. })));
    }

    #[test]
    fn config_bounds() {
        assert!(RunConfig::default().validate().is_ok());
        assert_eq!(RunConfig { order: 16, ..RunConfig::default() }.validate(), Err(ConfigError::Order(16)));
        assert!(RunConfig { tol: 1e-3, ..RunConfig::default() }.validate().is_err());
        assert!(RunConfig { tol: 1e-12, ..RunConfig::default() }.validate().is_ok());
    }

    #[test]
    fn report_for_planar_binary() {
        let r = analyze("w = z + z*w^2", &RunConfig { order: 301, ..RunConfig::default() }).unwrap();
        assert_eq!(r.outcome, Outcome::Certified, "{:#?}", r.warnings);
        assert_eq!((r.d, r.q), (Some(1), Some(2)));
        assert!((r.rho.unwrap() - 0.5).abs() < 1e-10);
        assert_eq!(r.dominant_singularities.len(), 2);
        assert_eq!(r.coefficients_head[..5], ["1", "0", "1", "0", "2"]);
        let json: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        for key in [
            "equation",
            "classification",
            "certificate",
            "d",
            "q",
            "rho",
            "rho_error",
            "tau",
            "C",
            "C_error",
            "fit",
            "coefficients_head",
            "warnings",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        assert!(json["fit"]["deviation"].is_number() && json["fit"]["pass"].is_boolean());
        assert!(r.render_text().contains("certified"));
    }

    #[test]
    fn report_for_rejections() {
        let r = analyze("z + z*w", &RunConfig { order: 64, ..RunConfig::default() }).unwrap();
        assert_eq!(r.outcome, Outcome::Rejected);
        assert_eq!(r.outcome.exit_code(), 2);
        assert!(r.rho.is_none());
        assert!(r.warnings.iter().any(|w| w.contains("law not asserted")));
        assert!(analyze("z + ", &RunConfig::default()).is_err());
    }
}
