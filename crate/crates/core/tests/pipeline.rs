//! End-to-end invariants over randomly assembled equations.

use polya_core::classify::{certify, check_retro, Retro};
use polya_core::fixpoint::{apply_operator, solve, solve_by_iteration};
use polya_core::periodicity::{compute_dq, congruence_holds};
use polya_core::report::{analyze_term, Outcome, RunConfig};
use polya_core::term::{parse, pretty_print};
use proptest::prelude::*;

const OPERATORS: [&str; 10] = [
    "w^2",
    "Seq(w)",
    "MSet(w)",
    "MSet[{2}](w)",
    "MSet[{2,3}](w)",
    "Cycle(w)",
    "DCycle[odd](w)",
    "Seq[even](w)",
    "expm1(w)",
    "powsum(2, odd, w)",
];

/// `z + z*op₁ + z²*op₂ + ...`, always retro.
fn equation() -> impl Strategy<Value = String> {
    prop::collection::vec((0..OPERATORS.len(), 1usize..3), 1..4).prop_map(|parts| {
        let mut eq = String::from("z");
        for (op, power) in parts {
            eq += &format!(" + z^{power}*{}", OPERATORS[op]);
        }
        eq
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pretty_print_round_trips(eq in equation()) {
        let t = parse(&eq).unwrap();
        prop_assert_eq!(parse(&pretty_print(&t)).unwrap(), t);
    }

    #[test]
    fn online_solution_is_the_iteration_limit(eq in equation()) {
        let t = parse(&eq).unwrap();
        prop_assert_eq!(check_retro(&t), Retro::Retro);
        let online = solve(&t, 18).unwrap();
        prop_assert_eq!(&apply_operator(&t, &online.series).unwrap(), &online.series);
        prop_assert_eq!(solve_by_iteration(&t, 18).unwrap().series, online.series);
    }

    #[test]
    fn longer_prefixes_extend_shorter_ones(eq in equation(), n in 8usize..24) {
        let t = parse(&eq).unwrap();
        let (short, long) = (solve(&t, n).unwrap(), solve(&t, n + 7).unwrap());
        prop_assert_eq!(short.series, long.series.truncate(n));
    }

    #[test]
    fn support_congruence_holds(eq in equation()) {
        let p = solve(&parse(&eq).unwrap(), 60).unwrap();
        let info = compute_dq(&p).unwrap();
        prop_assert!(congruence_holds(&p, &info));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn reports_are_consistent_with_certificates(eq in equation()) {
        let t = parse(&eq).unwrap();
        let r = analyze_term(&t, &RunConfig { order: 200, ..RunConfig::default() });
        prop_assert_eq!(r.certificate.is_certified(), certify(&t).is_certified());
        match r.outcome {
            Outcome::Rejected => prop_assert!(r.rho.is_none() && !r.certificate.is_certified()),
            Outcome::Certified => {
                let (rho, tau, c) = (r.rho.unwrap(), r.tau.unwrap(), r.c.unwrap());
                prop_assert!(rho > 0.0 && rho < 1.0 && tau > 0.0 && c > 0.0);
                prop_assert!(r.fit.pass);
                prop_assert!(r.growth_ratio_gap.is_some_and(|g| g < 0.05), "{:?}", r.growth_ratio_gap);
            }
            Outcome::NumericFailure => prop_assert!(r.certificate.is_certified() && !r.warnings.is_empty()),
        }
        prop_assert_eq!(r.coefficients_head.len(), 20);
    }
}
