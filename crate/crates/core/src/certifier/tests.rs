use super::*;
use crate::certifier::file::Sealed;
use crate::definition::MultiplierDegrees;
use crate::nn::{Activation, Layer, NeuralNetwork};

fn zero_net(n_in: usize) -> NeuralNetwork {
    NeuralNetwork::new(
        vec![
            Layer { weights: vec![vec![0.0; n_in]; 2], bias: vec![0.0; 2] },
            Layer { weights: vec![vec![0.0; 2]], bias: vec![0.0] },
        ],
        Activation::Relu,
    )
    .unwrap()
}

fn scalar(dynamics: &str, extra: &str) -> SystemDefinition {
    let text = format!("states = [\"z1\"]\ndynamics.z1 = \"{dynamics}\"\n{extra}");
    SystemDefinition::parse(&text, None, Some(zero_net(1))).unwrap()
}

#[test]
fn stable_scalar_gets_quadratic_v() {
    let r = certify_global(&scalar("-z1 + u", "")).unwrap();
    let s = &r.instance.space;
    let v = &r.v;
    assert_eq!(v.len(), 1);
    let (m, c) = v.terms().next().unwrap();
    assert_eq!(m.display(s).to_string(), "z1^2");
    assert!(c > 1e-4, "{c}");
    assert!(r.soundness.passed);
    assert_eq!(r.shrink_iterations, 0);
}

#[test]
fn unstable_scalar_is_infeasible_at_every_degree() {
    for deg in [2, 4, 6] {
        let d = scalar("z1 + u", &format!("[certify]\nv_degree = {deg}\n"));
        match certify_global(&d) {
            Err(e @ CertifyError::Infeasible(_)) => assert!(e.is_infeasible()),
            Err(e) => panic!("degree {deg}: unexpected error {e}"),
            Ok(r) => panic!("degree {deg}: certified {}", r.v.display(&r.instance.space)),
        }
    }
}

#[test]
fn unit_disk_level_set() {
    let s = VariableSpace::with_vars(&["z1", "z2"]);
    let states = [VarId(0), VarId(1)];
    let v = Polynomial::parse("z1^2 + z2^2", &s).unwrap();
    let d = Polynomial::parse("1 - z1^2 - z2^2", &s).unwrap();
    let opts = SosOptions::default();
    let r = roa_maximize(&s, &states, &v, std::slice::from_ref(&d), 1, &opts).unwrap();
    assert!((r.gamma - 1.0).abs() < 1e-6, "{}", r.gamma);
    let r10 = roa_maximize(&s, &states, &v.scale(10.0), std::slice::from_ref(&d), 1, &opts).unwrap();
    assert!((r10.gamma - 10.0).abs() < 1e-5, "{}", r10.gamma);
    // 1-D analysis along a ray: V = t^2 reaches the boundary at t = 1
    let r0 = roa_maximize(&s, &states, &v, &[d], 0, &opts).unwrap();
    assert!((r0.gamma - 1.0).abs() < 1e-6, "{}", r0.gamma);
}

#[test]
fn box_level_set_touches_nearest_face() {
    // V = z1^2 + 4 z2^2 in [-1, 1] x [-2, 2]: the binding face is z1 = 1
    let def = SystemDefinition::parse(
        "states = [\"z1\", \"z2\"]\ndynamics.z1 = \"-z1\"\ndynamics.z2 = \"-z2 + u\"\n",
        None,
        Some(zero_net(2)),
    )
    .unwrap();
    let region = BoxRegion::new(vec![-1.0, -2.0], vec![1.0, 2.0]).unwrap();
    let d = level_set_region(&def, &region);
    assert_eq!(d.len(), 4);
    let v = Polynomial::parse("z1^2 + 4*z2^2", &def.space).unwrap();
    let r = roa_maximize(&def.space, &def.states, &v, &d, 1, &SosOptions::default()).unwrap();
    assert!((r.gamma - 1.0).abs() < 1e-5, "{}", r.gamma);
}

#[test]
fn region_must_contain_origin() {
    let d = scalar("-z1 + u", "[region]\nlower = [0.5]\nupper = [1.0]\n");
    assert!(matches!(run_shrinking(&d, Mode::Local), Err(CertifyError::Precondition(_))));
}

#[test]
fn non_equilibrium_is_refused() {
    let d = scalar("-z1 + u + 0.1", "");
    match certify_global(&d) {
        Err(CertifyError::Precondition(m)) => assert!(m.contains("equilibrium"), "{m}"),
        other => panic!("{other:?}"),
    }
}

const CUBIC: &str = "[region]\nlower = [-2.0]\nupper = [2.0]\n[certify]\nregion_products = true\nmultipliers.region = 2\n";

#[test]
fn zero_shrink_budget_fails_immediately() {
    let d = scalar("-z1 + z1^3 + u", &format!("{CUBIC}max_shrink = 0\n"));
    match run_shrinking(&d, Mode::Local) {
        Err(CertifyError::Infeasible(a)) => assert_eq!(a.len(), 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn shrinking_reaches_the_feasible_box() {
    // z' = -z + z^3 is stable exactly on |z| < 1; boxes 2, 1.5, 1.125 fail
    let d = scalar("-z1 + z1^3 + u", CUBIC);
    let r = run_shrinking(&d, Mode::Local).unwrap();
    assert_eq!(r.shrink_iterations, 3);
    let fin = r.final_region.as_ref().unwrap();
    assert!((fin.upper[0] - 2.0 * 0.75f64.powi(3)).abs() < 1e-12);
    assert!(fin.is_subset_of(r.initial_region.as_ref().unwrap()));
    assert_eq!(r.attempts.len(), 4);
    for w in r.attempts.windows(2) {
        let (a, b) = (w[0].region.as_ref().unwrap(), w[1].region.as_ref().unwrap());
        assert!(b.is_subset_of(a) && b != a);
    }
    // oracle: a direct local solve at each scheduled box agrees
    for a in &r.attempts {
        let direct = certify_local(&d, a.region.as_ref().unwrap());
        assert_eq!(direct.is_ok(), a.outcome == "feasible", "{:?}", a.region);
    }
}

#[test]
fn multiplier_defaults_and_facial_reduction() {
    let d = scalar("-z1 + z1^3 + u", CUBIC);
    let region = d.region.clone().unwrap();
    let inst = build_instance(&d, Some(&region), &d.certify).unwrap();
    let plans = plan_multipliers(&inst, &d.certify);
    // every region polynomial is positive or vanishes to first order at the
    // origin, so each multiplier must vanish there: no constant monomial
    let faces: Vec<_> = plans.iter().filter(|p| p.label.ends_with("lower") || p.label.ends_with("upper")).collect();
    assert_eq!(faces.len(), 2);
    assert!(plans.iter().all(|p| p.basis.iter().all(|m| !m.is_one())));
    assert!(plans.iter().any(|p| p.label.starts_with('(')));
    assert_eq!(plans.len(), 3, "{:?}", plans.iter().map(|p| &p.label).collect::<Vec<_>>());
    let cfg = CertifyConfig { v_degree: 4, ..CertifyConfig::default() };
    assert_eq!(multiplier_degree(&cfg, MultiplierClass::Network), 2);
    assert_eq!(multiplier_degree(&cfg, MultiplierClass::Equality), 3);
    let cfg = CertifyConfig { multipliers: MultiplierDegrees { network: Some(1), ..Default::default() }, ..cfg };
    assert_eq!(multiplier_degree(&cfg, MultiplierClass::Network), 2);
}

#[test]
fn collapsed_parameter_matches_nominal_problem() {
    let extra = |lo: f64, hi: f64| {
        format!(
            "[region]\nlower = [-0.5]\nupper = [0.5]\n[[parameters]]\nname = \"delta\"\nlower = {lo}\nupper = {hi}\nnominal = 2.0\n[certify]\nmultipliers.auxiliary = 2\n"
        )
    };
    let robust = scalar("-delta*z1 + u", &extra(2.0, 2.0));
    let r = certify_robust(&robust).unwrap();
    let local = certify_local(&robust, robust.region.as_ref().unwrap()).unwrap();
    assert!(r.soundness.passed && local.soundness.passed);
    assert!(r.instance.params.is_empty());
    let wide = scalar("-delta*z1 + u", &extra(1.0, 3.0));
    let r = certify_robust(&wide).unwrap();
    assert_eq!(r.instance.params.len(), 1);
    let unstable = scalar("-delta*z1 + u", &extra(-1.0, 3.0));
    assert!(certify_robust(&unstable).unwrap_err().is_infeasible());
}

#[test]
fn certificate_file_round_trip_and_recheck() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    std::fs::write(&net, zero_net(2).to_json()).unwrap();
    let text = "name = \"linear\"\nstates = [\"z1\", \"z2\"]\nnetwork = \"net.json\"\n\
                dynamics.z1 = \"z2\"\ndynamics.z2 = \"-z1 - z2 + u\"\n\
                [region]\nlower = [-1.0, -1.0]\nupper = [1.0, 1.0]\n";
    let path = dir.path().join("sys.toml");
    std::fs::write(&path, text).unwrap();
    let def = SystemDefinition::load(&path).unwrap();
    let r = certify(&def, Mode::Local).unwrap();
    let file = CertificateFile::new(&def, &r, file::input_hashes(&path, &def).unwrap(), false);
    let json = file.to_json();
    let back = CertificateFile::from_json(&json).unwrap();
    assert_eq!(back.to_json(), json);
    assert_eq!(sha256_hex(json.as_bytes()), sha256_hex(file.to_json().as_bytes()));

    let report = check_certificate(&back, &path, &def, 500, 7, None).unwrap();
    assert!(report.passed(), "{report:?}");
    let report = check_certificate(&back, &path, &def, 0, 7, None).unwrap();
    assert!(report.passed());

    let tampered = json.replacen("\"shrink_iterations\": 0", "\"shrink_iterations\": 1", 1);
    assert_ne!(tampered, json);
    assert!(matches!(CertificateFile::from_json(&tampered), Err(CertifyError::Integrity(_))));

    std::fs::write(&path, text.replace("-z1 - z2 + u", "z1 - z2 + u")).unwrap();
    let edited = SystemDefinition::load(&path).unwrap();
    let report = check_certificate(&back, &path, &edited, 500, 7, None).unwrap();
    assert!(!report.passed());
    let sampling = report.lines.iter().find(|l| l.name == "sampling").unwrap();
    assert!(!sampling.passed, "{}", sampling.detail);
}
