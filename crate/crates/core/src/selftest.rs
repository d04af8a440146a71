//! The acceptance suite: seven criteria, each a list of named checks.
//!
//! Criteria 1 to 6 run the full pipeline on reference equations. Criterion 7
//! runs seeded property checks that need no asymptotic numerics.

use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Pow, Zero};
use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};
use serde::Serialize;

use crate::classify::{RejectReason, Verdict};
use crate::corpus;
use crate::fixpoint::{apply_operator, solve, solve_by_iteration, SolutionPrefix};
use crate::periodicity::{compute_dq, congruence_holds, elementary_dq};
use crate::report::{
    analyze_parts, catalan_prefix, empirical_fit, euler_product_prefix, mset_by_cycle_index, AnalysisReport, RunConfig,
};
use crate::series::Series;
use crate::singularity::{AsymptoticLaw, Representative};
use crate::term::{parse, Term};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelftestConfig {
    /// Replaces every criterion's own order when set.
    pub order: Option<usize>,
    pub tol: f64,
    pub fit_threshold: f64,
    pub m_max: usize,
    pub seed: u64,
}

impl Default for SelftestConfig {
    fn default() -> Self {
        let run = RunConfig::default();
        SelftestConfig { order: None, tol: run.tol, fit_threshold: run.fit_threshold, m_max: run.m_max, seed: 0x5eed }
    }
}

impl SelftestConfig {
    fn run(&self, order: usize) -> RunConfig {
        RunConfig {
            order: self.order.unwrap_or(order),
            tol: self.tol,
            fit_threshold: self.fit_threshold,
            m_max: self.m_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u8,
    pub title: &'static str,
    pub pass: bool,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub seconds: f64,
}

impl CriterionResult {
    /// One summary line, e.g. `PASS  1  planar binary trees  (7/7 checks, 0.06 s)`.
    pub fn line(&self) -> String {
        let passed = self.checks.iter().filter(|c| c.pass).count();
        format!(
            "{}  {}  {:<32}({}/{} checks, {:.2} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            passed,
            self.checks.len(),
            self.seconds
        )
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

pub const CRITERIA: [(u8, &str); 7] = [
    (1, "planar binary trees"),
    (2, "planar trees"),
    (3, "unlabelled rooted trees"),
    (4, "labelled trees"),
    (5, "rejections"),
    (6, "mixed branching classes"),
    (7, "property suites"),
];

pub fn run_all(cfg: &SelftestConfig) -> Vec<CriterionResult> {
    CRITERIA.iter().map(|&(id, _)| run(id, cfg)).collect()
}

/// Runs one criterion. Panics on an unknown id.
pub fn run(id: u8, cfg: &SelftestConfig) -> CriterionResult {
    let title = CRITERIA.iter().find(|c| c.0 == id).unwrap_or_else(|| panic!("no criterion {id}")).1;
    let start = Instant::now();
    let mut s = Suite::default();
    match id {
        1 => planar_binary(&mut s, cfg),
        2 => planar(&mut s, cfg),
        3 => rooted_trees(&mut s, cfg),
        4 => labelled_trees(&mut s, cfg),
        5 => rejections(&mut s, cfg),
        6 => mixed_classes(&mut s, cfg),
        _ => properties(&mut s, cfg),
    }
    CriterionResult {
        id,
        title,
        pass: !s.checks.is_empty() && s.checks.iter().all(|c| c.pass),
        checks: s.checks,
        warnings: s.warnings,
        seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Default)]
struct Suite {
    checks: Vec<Check>,
    warnings: Vec<String>,
}

impl Suite {
    fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    /// `|got - want| <= tol`; a missing value fails.
    fn near(&mut self, name: &str, got: Option<f64>, want: f64, tol: f64) {
        match got {
            Some(g) => self.check(name, (g - want).abs() <= tol, format!("{g:.15} vs {want:.15} (tol {tol:e})")),
            None => self.check(name, false, "not computed"),
        }
    }

    fn eq<T: PartialEq + std::fmt::Debug>(&mut self, name: &str, got: T, want: T) {
        let detail = format!("{got:?} vs {want:?}");
        self.check(name, got == want, detail);
    }

    /// Runs the pipeline on a corpus entry and records its warnings.
    fn pipeline(&mut self, name: &str, order: usize, cfg: &SelftestConfig) -> (AnalysisReport, Option<SolutionPrefix>) {
        let entry = corpus::lookup(name).expect("corpus entry");
        let t = parse(entry.source).expect("corpus parses");
        let (report, prefix) = analyze_parts(&t, &cfg.run(order));
        self.warnings.extend(report.warnings.iter().map(|w| format!("{name}: {w}")));
        (report, prefix)
    }

    fn certified(&mut self, r: &AnalysisReport) {
        self.check("certified", r.certificate.is_certified(), format!("{:?}", r.certificate.verdict));
    }

    fn fit_below(&mut self, prefix: Option<&SolutionPrefix>, r: &AnalysisReport, bound: f64) {
        let law = match (r.c, r.rho, r.d, r.q) {
            (Some(c), Some(rho), Some(d), Some(q)) => {
                AsymptoticLaw { c, c_error: 0.0, rho, d, q, support: String::new() }
            }
            _ => return self.check("empirical fit", false, "no law"),
        };
        match prefix.map(|p| empirical_fit(p, &law, bound)) {
            Some(Ok(f)) => self.check(
                format!("empirical fit deviation < {bound}"),
                f.relative_deviation < bound,
                format!("{:.5}", f.relative_deviation),
            ),
            Some(Err(e)) => self.check("empirical fit", false, e.to_string()),
            None => self.check("empirical fit", false, "no prefix"),
        }
    }
}

fn prefix_ints(p: &SolutionPrefix) -> Option<Vec<BigInt>> {
    p.int_series().map(|s| s.coefficients().to_vec())
}

fn planar_binary(s: &mut Suite, cfg: &SelftestConfig) {
    let start = Instant::now();
    let (r, p) = s.pipeline("planar_binary", 1201, cfg);
    let secs = start.elapsed().as_secs_f64();
    s.certified(&r);
    s.near("rho = 1/2", r.rho, 0.5, 1e-9);
    s.near("T(rho) = 1", r.tau, 1.0, 1e-6);
    s.eq("(d, q)", (r.d, r.q), (Some(1), Some(2)));
    s.near("C = sqrt(2/pi)", r.c, (2.0 / std::f64::consts::PI).sqrt(), 1e-6);
    match &p {
        Some(p) => {
            let bad = (1..=p.order / 2).find(|&n| !p.coeff(2 * n).is_zero());
            s.check("t(2n) = 0", bad.is_none(), format!("first nonzero even index {bad:?} up to {}", p.order));
        }
        None => s.check("t(2n) = 0", false, "no prefix"),
    }
    s.check("runtime < 5 s", secs < 5.0, format!("{secs:.3} s at N = {}", cfg.order.unwrap_or(1201)));
}

fn planar(s: &mut Suite, cfg: &SelftestConfig) {
    let (r, p) = s.pipeline("planar", 600, cfg);
    s.certified(&r);
    let n = p.as_ref().map_or(0, |p| p.order);
    let exact = p.as_ref().and_then(prefix_ints).is_some_and(|c| c == catalan_prefix(n).coefficients());
    s.check("Catalan oracle equality", exact, format!("n <= {n}"));
    s.near("rho = 1/4", r.rho, 0.25, 1e-9);
    s.eq("q", r.q, Some(1));
    s.near("C = 1/(4 sqrt(pi))", r.c, 1.0 / (4.0 * std::f64::consts::PI.sqrt()), 1e-4);
    s.fit_below(p.as_ref(), &r, 0.02);
}

fn rooted_trees(s: &mut Suite, cfg: &SelftestConfig) {
    let (r, p) = s.pipeline("rooted_trees", 500, cfg);
    s.certified(&r);
    let n = p.as_ref().map_or(0, |p| p.order);
    let exact = p.as_ref().and_then(prefix_ints).is_some_and(|c| c == euler_product_prefix(n).coefficients());
    s.check("Euler-product oracle equality", exact, format!("n <= {n}"));
    match (r.growth_ratio_gap, r.growth_ratio_estimate) {
        (Some(gap), Some(g)) => {
            s.check("ratio estimate within 1% of 1/rho", gap < 0.01, format!("{g:.6}, gap {:.3}%", 100.0 * gap))
        }
        _ => s.check("ratio estimate within 1% of 1/rho", false, "not computed"),
    }
    s.fit_below(p.as_ref(), &r, 0.05);
}

fn labelled_trees(s: &mut Suite, cfg: &SelftestConfig) {
    let (r, p) = s.pipeline("labelled_trees", 200, cfg);
    s.certified(&r);
    s.near("rho = 1/e", r.rho, (-1.0f64).exp(), 1e-8);
    s.near("C = 1/sqrt(2 pi)", r.c, 1.0 / std::f64::consts::TAU.sqrt(), 1e-4);
    let Some(p) = p else { return s.check("n! t(n) = n^(n-1)", false, "no prefix") };
    let mut fact = BigInt::one();
    let limit = p.order.min(60);
    let bad = (1..=limit).find(|&n| {
        fact *= n;
        let want = BigInt::from(n).pow((n - 1) as u32);
        p.coeff(n) * BigRational::from_integer(fact.clone()) != BigRational::from_integer(want)
    });
    s.check("n! t(n) = n^(n-1)", bad.is_none(), format!("n <= {limit}, first mismatch {bad:?}"));
}

fn rejections(s: &mut Suite, cfg: &SelftestConfig) {
    let (chains, _) = s.pipeline("chains", 200, cfg);
    s.check(
        "chains rejected as linear",
        matches!(chains.certificate.verdict, Verdict::Rejected(RejectReason::Linear)),
        format!("{:?}", chains.certificate.verdict),
    );
    let (half, p) = s.pipeline("half_mset2", 1500, cfg);
    let reason = match &half.certificate.verdict {
        Verdict::Rejected(RejectReason::Membership(m)) => Some(m.clone()),
        _ => None,
    };
    s.check(
        "integral counterexample rejected on membership",
        reason.as_deref().is_some_and(|m| m.contains("not in either O_E or O_I")),
        format!("{:?}", half.certificate.verdict),
    );
    s.check("still solved", p.is_some(), format!("order {}", half.order));
    s.check(
        "law not asserted",
        half.rho.is_none() && half.warnings.iter().any(|w| w.contains("no certificate; law not asserted")),
        format!("{:?}", half.warnings),
    );
    let est = half.growth_ratio_estimate;
    s.check("ratio estimate > 0.9", est.is_some_and(|g| g > 0.9), format!("{est:?}"));
}

fn mixed_classes(s: &mut Suite, cfg: &SelftestConfig) {
    let (r, p) = s.pipeline("mixed_classes", 200, cfg);
    s.certified(&r);
    let via = r.classification.as_ref().map(|c| format!("{:?}", c.membership));
    s.eq("membership", via.as_deref(), Some("InOI"));
    for (name, v) in [("rho", r.rho), ("tau", r.tau), ("C", r.c)] {
        s.check(format!("finite {name}"), v.is_some_and(f64::is_finite), format!("{v:?}"));
    }
    let holds = match (&p, compute_dq_opt(p.as_ref())) {
        (Some(p), Some(info)) => congruence_holds(p, &info),
        _ => false,
    };
    s.check("support congruence on the full prefix", holds, format!("d = {:?}, q = {:?}", r.d, r.q));
}

fn compute_dq_opt(p: Option<&SolutionPrefix>) -> Option<crate::periodicity::PeriodInfo> {
    compute_dq(p?).ok()
}

// ---------------------------------------------------------------------------
// property suites

/// Equations for the jet check.
pub const JET_CORPUS: [&str; 6] = [
    "z + z*w^2",
    "z + z*Seq(w)",
    "z + z*MSet(w)",
    "z + z*expm1(w)",
    "z + z*Cycle(w) + z*DCycle[odd](w)",
    "z + z*MSet[{2,3}](w) + (z*w*w)@(z + w)",
];

/// Equations built only from elementary operators.
pub const ELEMENTARY_CORPUS: [&str; 8] = [
    "z + z*w^2",
    "z + z*Seq(w)",
    "z + z*expm1(w)",
    "z^2 + z^2*w^2",
    "z + z*Seq[{3}](w)",
    "z^3 + z*powsum(1, even, w)",
    "z + z*w^2 + z^3*w^3",
    "z + z*(w + w^2)@(z*w)",
];

const ITERATION_CORPUS: [&str; 5] =
    ["z + z*MSet(w)", "z + z*Cycle(w)", "z + z*DCycle(w)", "z + z*MSet[{2,3}](w) + z*Seq[odd](w)", "z + z*expm1(w)"];

fn random_series(rng: &mut StdRng, order: usize) -> Series {
    let v: Vec<u64> = (0..order).map(|_| rng.random_range(0..6)).collect();
    Series::from_integers(&v)
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-3)
}

fn properties(s: &mut Suite, cfg: &SelftestConfig) {
    let mut rng = StdRng::seed_from_u64(cfg.seed);

    let mut algebra = Vec::new();
    for _ in 0..25 {
        let (a, b, c) = (random_series(&mut rng, 10), random_series(&mut rng, 10), random_series(&mut rng, 10));
        let laws = [
            a.add(&b) == b.add(&a),
            a.mul(&b) == b.mul(&a),
            a.mul(&b).mul(&c) == a.mul(&b.mul(&c)),
            a.add(&b).mul(&c) == a.mul(&c).add(&b.mul(&c)),
            a.compose(&b).compose(&c) == a.compose(&b.compose(&c)),
        ];
        algebra.extend(laws);
    }
    let failed = algebra.iter().filter(|ok| !**ok).count();
    s.check("series algebra laws", failed == 0, format!("{} law instances, {failed} failed", algebra.len()));

    let ops: Vec<Term> = ["MSet(w)", "Cycle(w)", "DCycle(w)", "Seq[odd](w)", "expm1(w)", "w*w"]
        .iter()
        .map(|e| parse(e).expect("operator parses"))
        .collect();
    let mut bad = 0;
    let mut total = 0;
    for _ in 0..10 {
        let (a, d, c) = (random_series(&mut rng, 8), random_series(&mut rng, 8), random_series(&mut rng, 8));
        let big = a.add(&d);
        total += 2 + ops.len();
        bad += usize::from(!a.mul(&c).dominated_by(&big.mul(&c)));
        bad += usize::from(!a.compose(&c).dominated_by(&big.compose(&c)));
        for op in &ops {
            let ok = match (apply_operator(op, &a), apply_operator(op, &big)) {
                (Ok(x), Ok(y)) => x.dominated_by(&y),
                _ => false,
            };
            bad += usize::from(!ok);
        }
    }
    s.check("dominance preservation", bad == 0, format!("{total} instances, {bad} failed"));

    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for eq in JET_CORPUS {
        let t = parse(eq).expect("jet corpus parses");
        let rep = solve(&t, 80)
            .map_err(|e| e.to_string())
            .and_then(|p| Representative::new(&t, &p, cfg.m_max).map_err(|e| e.to_string()));
        let rep = match rep {
            Ok(r) => r,
            Err(e) => {
                failures.push(format!("{eq}: {e}"));
                continue;
            }
        };
        for _ in 0..20 {
            let (x, y) = (rng.random_range(0.05..0.3), rng.random_range(0.05..0.4));
            let pair = rep
                .plethysm_at(x)
                .and_then(|pl| rep.jet(&pl, y))
                .and_then(|j| Ok((j, rep.finite_difference_jet(x, y)?)));
            match pair {
                Ok((j, fd)) => {
                    for (a, b) in [(j.dz, fd.dz), (j.dw, fd.dw), (j.dww, fd.dww)] {
                        worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1e-3));
                        if !rel_close(a, b, 1e-5) {
                            failures.push(format!("{eq} at ({x:.4}, {y:.4}): {a} vs {b}"));
                        }
                    }
                }
                Err(e) => failures.push(format!("{eq} at ({x:.4}, {y:.4}): {e}")),
            }
        }
    }
    s.check(
        "jets match finite differences within 1e-5",
        failures.is_empty(),
        match failures.first() {
            None => format!("120 points, worst relative error {worst:.2e}"),
            Some(f) => format!("{} failures, first {f}", failures.len()),
        },
    );

    let mut mismatches = Vec::new();
    for m in 1..=6 {
        let t = parse(&format!("MSet[{{{m}}}](w)")).expect("operator parses");
        for _ in 0..4 {
            let a = random_series(&mut rng, 12);
            if apply_operator(&t, &a).ok() != Some(mset_by_cycle_index(&a, m)) {
                mismatches.push(m);
            }
        }
    }
    s.check(
        "MSet recurrence matches cycle-index expansion",
        mismatches.is_empty(),
        format!("m <= 6, mismatches at {mismatches:?}"),
    );

    let mut problems = Vec::new();
    for eq in ITERATION_CORPUS {
        let t = parse(eq).expect("iteration corpus parses");
        let (online, iterated) = (solve(&t, 24), solve_by_iteration(&t, 24));
        match (online, iterated) {
            (Ok(o), Ok(i)) => {
                let fixed = apply_operator(&t, &o.series).is_ok_and(|img| img == o.series);
                if !fixed {
                    problems.push(format!("{eq}: not a fixpoint"));
                }
                if i.series != o.series {
                    problems.push(format!("{eq}: iteration disagrees"));
                }
            }
            (o, i) => problems.push(format!("{eq}: {:?} / {:?}", o.err(), i.err())),
        }
    }
    let detail = if problems.is_empty() {
        format!("{} equations at N = 24", ITERATION_CORPUS.len())
    } else {
        problems.join("; ")
    };
    s.check("fixpoint property and monotone iterates", problems.is_empty(), detail);

    let mut disagreements = Vec::new();
    for eq in ELEMENTARY_CORPUS {
        let t = parse(eq).expect("elementary corpus parses");
        let agree = solve(&t, 120).ok().and_then(|p| {
            let (a, b) = (compute_dq(&p).ok()?, elementary_dq(&t, &p).ok()?);
            Some((a.d, a.q) == (b.d, b.q))
        });
        if agree != Some(true) {
            disagreements.push(eq);
        }
    }
    let detail = format!("{} equations, disagreements {disagreements:?}", ELEMENTARY_CORPUS.len());
    s.check("prefix and operator periods agree", disagreements.is_empty(), detail);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn property_suite_passes() {
        let r = run(7, &SelftestConfig::default());
        assert!(r.pass, "{:#?}", r.checks);
        assert!(r.line().starts_with("PASS  7"));
    }

    #[test]
    fn quick_criteria_pass() {
        for id in [2, 4] {
            let r = run(id, &SelftestConfig::default());
            assert!(r.pass, "{:#?}", r.checks);
        }
    }

    #[test]
    fn forced_tiny_order_degrades_rather_than_panics() {
        let r = run(2, &SelftestConfig { order: Some(32), ..SelftestConfig::default() });
        assert!(!r.pass);
        assert!(r.failures().any(|c| c.name.contains("fit")));
    }
}
