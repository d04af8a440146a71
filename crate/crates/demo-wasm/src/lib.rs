//! Browser bindings for the static demo page in `www/`.
//!
//! Every export takes equation text and returns a JSON string, or throws a
//! string error. The plain functions below the exports are testable natively.

use polya_core::fixpoint::solve;
use polya_core::report::{analyze_parts, empirical_fit, RunConfig};
use polya_core::singularity::AsymptoticLaw;
use polya_core::term::parse;
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Largest order the page may request; keeps the tab responsive.
pub const MAX_DEMO_ORDER: usize = 1200;

#[wasm_bindgen]
pub fn coefficients(equation: &str, n: usize) -> Result<String, JsValue> {
    coefficients_json(equation, n).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn analyze(equation: &str, order: usize) -> Result<String, JsValue> {
    analyze_json(equation, order).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn convergence(equation: &str, order: usize) -> Result<String, JsValue> {
    convergence_json(equation, order).map_err(|e| JsValue::from_str(&e))
}

fn check_order(order: usize, min: usize) -> Result<(), String> {
    if (min..=MAX_DEMO_ORDER).contains(&order) {
        Ok(())
    } else {
        Err(format!("order must lie in [{min}, {MAX_DEMO_ORDER}]"))
    }
}

/// Exact `t(1..=n)` as decimal or fraction strings.
pub fn coefficients_json(equation: &str, n: usize) -> Result<String, String> {
    check_order(n, 1)?;
    let t = parse(equation).map_err(|e| e.to_string())?;
    let p = solve(&t, n).map_err(|e| e.to_string())?;
    let values: Vec<String> = (1..=n).map(|i| p.coeff(i).to_string()).collect();
    Ok(json!(values).to_string())
}

/// The full analysis report.
pub fn analyze_json(equation: &str, order: usize) -> Result<String, String> {
    check_order(order, RunConfig::ORDER_RANGE.0)?;
    let t = parse(equation).map_err(|e| e.to_string())?;
    let (report, _) = analyze_parts(&t, &RunConfig { order, ..RunConfig::default() });
    Ok(report.to_json())
}

/// `t(n)·ρⁿ·n^{3/2}` on the support class, which tends to `C` when the law holds.
pub fn convergence_json(equation: &str, order: usize) -> Result<String, String> {
    check_order(order, RunConfig::ORDER_RANGE.0)?;
    let t = parse(equation).map_err(|e| e.to_string())?;
    let (r, prefix) = analyze_parts(&t, &RunConfig { order, ..RunConfig::default() });
    let (Some(c), Some(rho), Some(d), Some(q), Some(prefix)) = (r.c, r.rho, r.d, r.q, prefix) else {
        let why = r.warnings.first().cloned().unwrap_or_else(|| "no law".into());
        return Err(format!("no asymptotic law: {why}"));
    };
    let law = AsymptoticLaw {
        c,
        c_error: r.c_error.unwrap_or(0.0),
        rho,
        d,
        q,
        support: r.support.clone().unwrap_or_default(),
    };
    let fit = empirical_fit(&prefix, &law, RunConfig::default().fit_threshold).map_err(|e| e.to_string())?;
    Ok(json!({
        "C": c,
        "rho": rho,
        "d": d,
        "q": q,
        "deviation": fit.relative_deviation,
        "samples": fit.samples,
    })
    .to_string())
}
