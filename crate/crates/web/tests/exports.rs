use bpca_web::{direction_errors, phi_explorer, rotation_slice};

fn parse(s: Result<String, String>) -> serde_json::Value {
    serde_json::from_str(&s.expect("export succeeds")).unwrap()
}

#[test]
fn phi_orbit_approaches_the_fixed_point() {
    let v = parse(phi_explorer(100.0, 1.0, 100, 10, 1098.453, 10.1, 0.001, 8000));
    let a_star = v["report"]["candidates"][0]["a"].as_f64().unwrap();
    let last = v["orbit"].as_array().unwrap().last().unwrap()[0].as_f64().unwrap();
    assert!((last - a_star).abs() < 1e-8);
}

#[test]
fn direction_errors_respect_bounds() {
    let v = parse(direction_errors(60, 6, 5.0, 0.5, 3, 40));
    for p in v["report"]["observed"].as_array().unwrap() {
        let t = p["t"].as_u64().unwrap();
        let (e, b) = (p["err_z"].as_f64().unwrap(), p["bound_z"].as_f64().unwrap());
        if t >= 2 && e > 1e-12 {
            assert!(e <= b, "t={t}: {e} > {b}");
        }
    }
}

#[test]
fn rotation_slice_is_flat_only_for_isotropic_prior() {
    let flat = parse(rotation_slice(1.0, 1.0, 1, 33));
    let bent = parse(rotation_slice(1.0, 2.0, 1, 33));
    let span = |v: &serde_json::Value| v["delta_psi"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().abs()).fold(0.0, f64::max);
    assert!(span(&flat) < 1e-8 * (1.0 + flat["psi"].as_f64().unwrap().abs()));
    assert!(span(&bent) > 1e-3);
}

#[test]
fn invalid_input_is_an_error_string() {
    assert!(phi_explorer(100.0, 1.0, 5, 10, 10.0, 1.0, 1.0, 3).is_err());
}
