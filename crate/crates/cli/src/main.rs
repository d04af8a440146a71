//! `polya`: exact coefficients and square-root asymptotics for tree equations.
//!
//! Exit codes: 0 certified with a passing fit (or all self-test rows pass),
//! 1 input error, 2 rejected, 3 numeric or fit failure.

use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use polya_core::fixpoint::solve;
use polya_core::report::{analyze_term, RunConfig};
use polya_core::selftest::{self, SelftestConfig, CRITERIA};
use polya_core::term::{parse, Term};

const INPUT_ERROR: u8 = 1;
const CHECK_FAILED: u8 = 3;

#[derive(Parser)]
#[command(
    name = "polya",
    version,
    about = "Counts trees defined by recursion equations and derives their asymptotic law"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Classify, solve, and derive t(n) ~ C·ρ^-n·n^-3/2 for an equation.
    Analyze {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the exact coefficients t(1..N).
    Coeffs {
        #[command(flatten)]
        input: Input,
        /// Number of coefficients.
        #[arg(long, short = 'n', env = "POLYA_ORDER", default_value_t = 20)]
        order: usize,
        /// Print a JSON array of decimal strings.
        #[arg(long)]
        json: bool,
    },
    /// Run the acceptance suite.
    Selftest {
        /// Force every criterion to this order instead of its own.
        #[arg(long)]
        order: Option<usize>,
        #[arg(long, default_value_t = RunConfig::default().tol)]
        tol: f64,
        #[arg(long, default_value_t = RunConfig::default().fit_threshold)]
        fit_threshold: f64,
        #[arg(long, default_value_t = RunConfig::default().m_max)]
        m_max: usize,
        /// Run only these criteria (1 to 7).
        #[arg(long = "criterion", short = 'c', value_parser = clap::value_parser!(u8).range(1..=7))]
        criteria: Vec<u8>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct Input {
    /// Equation text, e.g. "w = z + z*w^2".
    #[arg(required_unless_present = "file", conflicts_with = "file")]
    equation: Option<String>,
    /// Read the equation from a file; `-` reads standard input.
    #[arg(long, short = 'f')]
    file: Option<PathBuf>,
}

impl Input {
    fn read(&self) -> Result<String, String> {
        match (&self.equation, &self.file) {
            (Some(e), _) => Ok(e.clone()),
            (None, Some(p)) if p.as_os_str() == "-" => {
                let mut s = String::new();
                std::io::stdin().read_to_string(&mut s).map_err(|e| format!("stdin: {e}"))?;
                Ok(s)
            }
            (None, Some(p)) => std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display())),
            (None, None) => Err("no equation given".into()),
        }
    }

    fn term(&self) -> Result<Term, String> {
        let text = self.read()?;
        parse(&text).map_err(|e| format!("parse error: {e}"))
    }
}

#[derive(Args)]
struct Opts {
    /// Truncation order N, in [32, 2048].
    #[arg(long, env = "POLYA_ORDER", default_value_t = RunConfig::default().order)]
    order: usize,
    /// Tolerance for the characteristic system, in [1e-12, 1e-4].
    #[arg(long, default_value_t = RunConfig::default().tol)]
    tol: f64,
    /// Maximum relative deviation accepted by the empirical fit.
    #[arg(long, default_value_t = RunConfig::default().fit_threshold)]
    fit_threshold: f64,
    /// Truncation of infinite operator sums during evaluation.
    #[arg(long, default_value_t = RunConfig::default().m_max)]
    m_max: usize,
    /// Print the report as JSON.
    #[arg(long)]
    json: bool,
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("polya: {msg}");
    ExitCode::from(code)
}

fn analyze(input: &Input, opts: &Opts) -> ExitCode {
    let cfg = RunConfig { order: opts.order, tol: opts.tol, fit_threshold: opts.fit_threshold, m_max: opts.m_max };
    if let Err(e) = cfg.validate() {
        return fail(INPUT_ERROR, e);
    }
    let t = match input.term() {
        Ok(t) => t,
        Err(e) => return fail(INPUT_ERROR, e),
    };
    let report = analyze_term(&t, &cfg);
    if opts.json {
        emit(&(report.to_json() + "\n"));
    } else {
        emit(&report.render_text());
    }
    ExitCode::from(report.outcome.exit_code() as u8)
}

fn coeffs(input: &Input, order: usize, json: bool) -> ExitCode {
    if order == 0 {
        return fail(INPUT_ERROR, "order must be positive");
    }
    let t = match input.term() {
        Ok(t) => t,
        Err(e) => return fail(INPUT_ERROR, e),
    };
    let prefix = match solve(&t, order) {
        Ok(p) => p,
        Err(e) => return fail(CHECK_FAILED, e),
    };
    let values: Vec<String> = (1..=order).map(|n| prefix.coeff(n).to_string()).collect();
    if json {
        emit(&(serde_json::to_string(&values).expect("strings serialize") + "\n"));
    } else {
        emit(&(values.join(",") + "\n"));
    }
    ExitCode::SUCCESS
}

fn run_selftest(cfg: &SelftestConfig, criteria: &[u8], json: bool) -> ExitCode {
    let ids: Vec<u8> = if criteria.is_empty() { CRITERIA.iter().map(|c| c.0).collect() } else { criteria.to_vec() };
    let mut results = Vec::new();
    for id in ids {
        let r = selftest::run(id, cfg);
        if !json {
            let mut text = format!("{}\n", r.line());
            for c in r.failures() {
                text += &format!("        FAIL {}: {}\n", c.name, c.detail);
            }
            for w in &r.warnings {
                text += &format!("        warn {w}\n");
            }
            emit(&text);
        }
        results.push(r);
    }
    let failed = results.iter().filter(|r| !r.pass).count();
    if json {
        emit(&(serde_json::to_string_pretty(&results).expect("results serialize") + "\n"));
    } else {
        emit(&format!("{} of {} criteria passed\n", results.len() - failed, results.len()));
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(CHECK_FAILED)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { INPUT_ERROR } else { 0 });
        }
    };
    match &cli.command {
        Command::Analyze { input, opts } => analyze(input, opts),
        Command::Coeffs { input, order, json } => coeffs(input, *order, *json),
        Command::Selftest { order, tol, fit_threshold, m_max, criteria, json } => {
            let check = RunConfig {
                order: order.unwrap_or(RunConfig::default().order),
                tol: *tol,
                fit_threshold: *fit_threshold,
                m_max: *m_max,
            };
            if let Err(e) = check.validate() {
                return fail(INPUT_ERROR, e);
            }
            let cfg = SelftestConfig {
                order: *order,
                tol: *tol,
                fit_threshold: *fit_threshold,
                m_max: *m_max,
                ..SelftestConfig::default()
            };
            run_selftest(&cfg, criteria, *json)
        }
    }
}
