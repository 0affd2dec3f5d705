use srx_core::expr::parse;
use srx_core::synth::{integrate_rk45, solve_ivp, OdeError, OdeSpec, DEFAULT_ATOL, DEFAULT_RTOL};

fn names(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn decay_error(rtol: f64, atol: f64) -> f64 {
    let rhs = vec![parse("-y", &names(&["y", "t"])).unwrap()];
    let sol = solve_ivp(&rhs, &[1.0], (0.0, 1.0), &[1.0], rtol, atol).unwrap();
    (sol.y[0][0] - (-1.0f64).exp()).abs()
}

#[test]
fn decay_endpoint() {
    let err = decay_error(DEFAULT_RTOL, DEFAULT_ATOL);
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn decay_dense_output_matches_exact() {
    let spec = OdeSpec {
        rhs: vec![parse("-y", &names(&["y", "t"])).unwrap()],
        initial: vec![1.0],
        t_span: (0.0, 60.0),
        samples: 5000,
    };
    let sol = integrate_rk45(&spec, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
    assert_eq!(sol.t.len(), 5000);
    let worst = sol
        .t
        .iter()
        .zip(&sol.y)
        .map(|(t, y)| (y[0] - (-t).exp()).abs())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-6, "{worst:e}");
}

#[test]
fn oscillator_energy_drift() {
    let v = names(&["x", "v", "t"]);
    let spec = OdeSpec {
        rhs: vec![parse("v", &v).unwrap(), parse("-x", &v).unwrap()],
        initial: vec![1.0, 0.0],
        t_span: (0.0, 60.0),
        samples: 5000,
    };
    let sol = integrate_rk45(&spec, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
    let drift = sol
        .y
        .iter()
        .map(|s| ((s[0] * s[0] + s[1] * s[1]) / 2.0 - 0.5).abs())
        .fold(0.0, f64::max);
    assert!(drift <= 1e-5, "{drift:e}");
}

/// Step control keeps the local error near the tolerance, so the global
/// error scales about linearly with it.
#[test]
fn error_tracks_tolerance() {
    for base in [1e-5, 1e-6, 1e-7] {
        let coarse = decay_error(base, base * 1e-3);
        let fine = decay_error(base / 2.0, base * 1e-3 / 2.0);
        let ratio = coarse / fine;
        assert!((1.5..3.0).contains(&ratio), "rtol {base:e}: {coarse:e} -> {fine:e}");
    }
    let errs: Vec<f64> = [1e-4, 1e-6, 1e-8].iter().map(|&r| decay_error(r, r * 1e-3)).collect();
    assert!(errs[0] > 10.0 * errs[1] && errs[1] > 10.0 * errs[2], "{errs:?}");
}

#[test]
fn constant_rhs_is_exact() {
    let v = names(&["y", "t"]);
    let spec = OdeSpec {
        rhs: vec![parse("0", &v).unwrap()],
        initial: vec![2.5],
        t_span: (0.0, 60.0),
        samples: 100,
    };
    let sol = integrate_rk45(&spec, DEFAULT_RTOL, DEFAULT_ATOL).unwrap();
    assert!(sol.y.iter().all(|s| s[0] == 2.5));
}

#[test]
fn blow_up_fails() {
    let v = names(&["y", "t"]);
    let spec = OdeSpec {
        rhs: vec![parse("y**2", &v).unwrap()],
        initial: vec![1.0],
        t_span: (0.0, 60.0),
        samples: 5000,
    };
    let err = integrate_rk45(&spec, DEFAULT_RTOL, DEFAULT_ATOL).unwrap_err();
    assert!(matches!(err, OdeError::StepUnderflow { .. } | OdeError::NonFinite { .. }), "{err:?}");
}
