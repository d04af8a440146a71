//! Acceptance suite. Prints one PASS/FAIL line per criterion, with the failing
//! checks beneath, and exits nonzero if any criterion fails.

use polya_core::selftest::{run, SelftestConfig, CRITERIA};

fn main() {
    let cfg = SelftestConfig::default();
    let mut failed = 0;
    println!("\nacceptance criteria");
    for (id, _) in CRITERIA {
        let r = run(id, &cfg);
        println!("{}", r.line());
        for c in &r.checks {
            println!("        {} {:<48} {}", if c.pass { "ok  " } else { "FAIL" }, c.name, c.detail);
        }
        for w in &r.warnings {
            println!("        warn {w}");
        }
        failed += usize::from(!r.pass);
    }
    println!("{} of {} criteria passed\n", CRITERIA.len() - failed, CRITERIA.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
