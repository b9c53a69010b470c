use num_complex::Complex64 as C64;
use peakfn::config::parse_config;
use peakfn::domain::ParameterValue;
use peakfn::pipeline::{certificate_json, certify, config_from_certificate, load, sha256_hex, Construction};
use peakfn::verify::verify;

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// A small disc run: two parameter values, four base points, coarse sampling.
fn small_disc() -> Construction {
    let config = parse_config(
        r#"{
            "family": {"name": "disc", "t_points": 2},
            "eta1": 0.5,
            "seed": 5,
            "verification": {"zeta_count": 4, "sample_budget": 2000, "local_samples": 300,
                             "holomorphy_points": 60, "triples_per_delta": 6}
        }"#,
    )
    .unwrap();
    certify(&config).unwrap()
}

#[test]
fn disc_certificate_and_report() {
    let construction = small_disc();
    let cert = &construction.certificate;
    assert_eq!(construction.evaluators.len(), 8);
    assert!(cert.c2 < cert.c1 && cert.c1 < 1.0);
    assert!(cert.eta1 < cert.eps2);
    assert!(cert.d2 < 1.0);

    let text = certificate_json(cert);
    let hash = sha256_hex(text.as_bytes());
    let report = verify(&construction, &hash).unwrap();
    assert_eq!(report.certificate, hash);
    assert!(report.pass, "{}", report.to_json());
    assert!(report.properties.iter().all(|p| p.margin >= 0.0 && p.samples > 0));
    assert!(report.continuity.windows(2).all(|w| w[1].omega <= w[0].omega));

    let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
    for key in ["certificate", "properties", "continuity", "solver", "seed", "version"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    for key in ["backend", "residual_max", "residual_mean"] {
        assert!(json["solver"].get(key).is_some(), "missing solver.{key}");
    }
}

#[test]
fn certificate_round_trips_and_reloads() {
    let construction = small_disc();
    let text = certificate_json(&construction.certificate);
    let back: peakfn::peak::ConstantsCertificate = serde_json::from_str(&text).unwrap();
    assert_eq!(certificate_json(&back), text);

    let config = config_from_certificate(&back, 5);
    let loaded = load(&config, &back).unwrap();
    let t = ParameterValue::real(0.0);
    let zeta = [c(0.6, 0.8)];
    let a = construction.evaluator_at(t, &zeta).unwrap().eval_h(&[c(0.1, -0.2)]).unwrap();
    let b = loaded.evaluator_at(t, &zeta).unwrap().eval_h(&[c(0.1, -0.2)]).unwrap();
    assert_eq!(a, b);
}

#[test]
fn quarter_turn_rotation_leaves_h_unchanged() {
    // A quarter turn maps the quadrature grid onto itself.
    let construction = small_disc();
    let t = ParameterValue::real(0.0);
    let zeta = [c(0.6, 0.8)];
    let rot = c(0.0, 1.0);
    let ev = construction.evaluator_at(t, &zeta).unwrap();
    let ev_rot = construction.evaluator_at(t, &[zeta[0] * rot]).unwrap();
    for z in [c(0.1, -0.2), c(-0.4, 0.3), c(0.5, 0.6), c(0.0, 0.0)] {
        let a = ev.eval_h(&[z]).unwrap();
        let b = ev_rot.eval_h(&[z * rot]).unwrap();
        assert!((a - b).norm() <= 1e-6, "{z}: {a} vs {b}");
    }
}

#[test]
fn general_rotation_within_discretization_error() {
    let construction = small_disc();
    let t = ParameterValue::real(0.0);
    let zeta = [c(1.0, 0.0)];
    let rot = C64::from_polar(1.0, 0.7);
    let ev = construction.evaluator_at(t, &zeta).unwrap();
    let ev_rot = construction.evaluator_at(t, &[rot]).unwrap();
    for z in [c(0.1, -0.2), c(-0.4, 0.3), c(0.5, 0.1)] {
        let a = ev.eval_h(&[z]).unwrap();
        let b = ev_rot.eval_h(&[z * rot]).unwrap();
        assert!((a - b).norm() <= 1e-3, "{z}: {a} vs {b}");
    }
}

#[test]
fn unreachable_eta1_is_rejected_at_its_stage() {
    let config = parse_config(r#"{"family":"disc","eta1":0.72,"seed":1}"#).unwrap();
    let err = certify(&config).unwrap_err();
    assert_eq!(err.stage(), Some("eta1_check"), "{err}");
}
