use polya_demo_wasm::{analyze_json, coefficients_json, convergence_json};
use serde_json::Value;

#[test]
fn coefficients_as_strings() {
    assert_eq!(coefficients_json("z + z*Seq(w)", 5).unwrap(), r#"["1","1","2","5","14"]"#);
    assert_eq!(coefficients_json("z + z*expm1(w)", 3).unwrap(), r#"["1","1","3/2"]"#);
    assert!(coefficients_json("z +", 5).is_err());
    assert!(coefficients_json("z + z*w^2", 0).is_err());
}

#[test]
fn analysis_report() {
    let v: Value = serde_json::from_str(&analyze_json("w = z + z*w^2", 301).unwrap()).unwrap();
    assert_eq!(v["outcome"], "certified");
    assert_eq!(v["q"], 2);
    assert!(analyze_json("z + z*w^2", 5000).is_err());
}

#[test]
fn samples_approach_the_constant() {
    let v: Value = serde_json::from_str(&convergence_json("z + z*MSet(w)", 300).unwrap()).unwrap();
    let c = v["C"].as_f64().unwrap();
    let last = v["samples"].as_array().unwrap().last().unwrap()[1].as_f64().unwrap();
    assert!((last - c).abs() / c < 0.01);
    assert!(convergence_json("z + z*w", 64).unwrap_err().contains("no asymptotic law"));
}
