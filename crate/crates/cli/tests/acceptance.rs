//! End-to-end acceptance checks. Each test prints one `criterion N` line
//! with its verdict before asserting.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nflsos_core::poly::{Polynomial, VariableSpace};
use nflsos_core::sdp::{
    solve, validate, Entry, InfeasibilityCertificate, LinearForm, SdpProblem, SolveStatus, SolverOptions,
};
use nflsos_core::sos::{sos_decompose, SosOptions};

const BIN: &str = env!("CARGO_BIN_EXE_nflsos");

fn bench(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn run(args: &[&str]) -> Output {
    let out = Command::new(BIN).args(args).output().expect("binary runs");
    if !out.status.success() {
        eprintln!("$ nflsos {}\n{}", args.join(" "), String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Number following `key` on the first line that contains it.
fn number_after(text: &str, key: &str) -> Option<f64> {
    let line = text.lines().find(|l| l.contains(key))?;
    let rest = &line[line.find(key)? + key.len()..];
    let tok: String = rest
        .trim_start()
        .chars()
        .take_while(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | 'e' | 'E' | '+'))
        .collect();
    tok.parse().ok()
}

fn report(n: u32, what: &str, pass: bool, detail: &str, start: Instant, budget: Duration) -> bool {
    let elapsed = start.elapsed();
    let ok = pass && elapsed <= budget;
    println!(
        "criterion {n} {what}: {} ({detail}; {:.1}s of {}s)",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    ok
}

fn p(s: &VariableSpace, text: &str) -> Polynomial {
    Polynomial::parse(text, s).unwrap_or_else(|e| panic!("{text}: {e}"))
}

/// Random square of a polynomial of degree <= `half` in the first `nv` variables.
fn random_square(rng: &mut ChaCha8Rng, names: &[&str], nv: usize, half: u32) -> String {
    let mut terms = Vec::new();
    let mut exps = vec![0u32; nv];
    loop {
        if exps.iter().sum::<u32>() <= half && rng.gen_bool(0.7) {
            let c: f64 = rng.gen_range(-1.0..1.0);
            let mono: Vec<String> =
                exps.iter().zip(names).filter(|(e, _)| **e > 0).map(|(e, n)| format!("{n}^{e}")).collect();
            let body = if mono.is_empty() { String::new() } else { format!("*{}", mono.join("*")) };
            terms.push(format!("({c:.6}){body}"));
        }
        // odometer over exponent vectors
        let mut k = 0;
        while k < nv && exps[k] == half {
            exps[k] = 0;
            k += 1;
        }
        if k == nv {
            break;
        }
        exps[k] += 1;
    }
    if terms.is_empty() {
        terms.push("1".into());
    }
    format!("({})^2", terms.join(" + "))
}

#[test]
fn criterion_1_sos_kernel() {
    let start = Instant::now();
    let names = ["x", "y", "z"];
    let s = VariableSpace::with_vars(&names);
    let opts = SosOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for k in 0..50 {
        let nv = rng.gen_range(1..=3);
        let half = rng.gen_range(1..=3);
        let squares: Vec<String> = (0..rng.gen_range(1..=3)).map(|_| random_square(&mut rng, &names, nv, half)).collect();
        let q = p(&s, &squares.join(" + "));
        match sos_decompose(&q, &s, &opts) {
            Ok(cert) => {
                // independent reconstruction: sum of Q_ij b_i b_j by polynomial arithmetic
                let g = &cert.gram_matrices["p"];
                let basis: Vec<Polynomial> = g.basis.iter().map(|b| p(&s, b)).collect();
                let mut recon = Polynomial::zero(s.id());
                for (i, bi) in basis.iter().enumerate() {
                    for (j, bj) in basis.iter().enumerate() {
                        recon = &recon + &(bi * bj).scale(g.matrix[i][j]);
                    }
                }
                let err = recon.max_abs_diff(&q);
                worst = worst.max(err);
                if err > 1e-6 {
                    failures.push(format!("#{k} residual {err:e}"));
                }
            }
            Err(e) => failures.push(format!("#{k} {}: {e}", q.display(&s))),
        }
    }
    let motzkin = p(&s, "x^4*y^2 + x^2*y^4 - 3*x^2*y^2 + 1");
    let motzkin_rejected = sos_decompose(&motzkin, &s, &opts).is_err();
    let odd = ["x", "x^3 + y^2 + 1", "x*y^2 + x^4 + y^4", "x^5 + z^6 + 1"];
    let odd_rejected = odd.iter().all(|t| sos_decompose(&p(&s, t), &s, &opts).is_err());
    let pass = failures.is_empty() && motzkin_rejected && odd_rejected;
    let detail = format!(
        "50 random SOS, worst residual {worst:e}, {} failure(s) {failures:?}, motzkin rejected {motzkin_rejected}, odd rejected {odd_rejected}",
        failures.len()
    );
    assert!(report(1, "SOS kernel", pass, &detail, start, Duration::from_secs(120)));
}

fn row(entries: &[(usize, usize, usize, f64)], free: &[(usize, f64)]) -> LinearForm {
    LinearForm { entries: entries.iter().map(|&(b, i, j, c)| Entry::new(b, i, j, c)).collect(), free: free.to_vec() }
}

/// (name, problem, analytic optimum)
fn analytic_corpus() -> Vec<(&'static str, SdpProblem, f64)> {
    let mut out = Vec::new();

    // max -x s.t. [[x, 1], [1, x]] PSD: x >= 1
    let mut a = SdpProblem::new();
    a.add_block(2);
    a.add_row(row(&[(0, 0, 1, 1.0)], &[]), 1.0);
    a.add_row(row(&[(0, 0, 0, 1.0), (0, 1, 1, -1.0)], &[]), 0.0);
    a.objective = row(&[(0, 0, 0, -1.0)], &[]);
    out.push(("arrow", a, -1.0));

    // max <C, X> s.t. tr X = 1 is lambda_max(C); C = [[2,1,0],[1,2,0],[0,0,1]] has eigenvalues 3, 1, 1
    let mut b = SdpProblem::new();
    b.add_block(3);
    b.add_row(row(&[(0, 0, 0, 1.0), (0, 1, 1, 1.0), (0, 2, 2, 1.0)], &[]), 1.0);
    b.objective = row(&[(0, 0, 0, 2.0), (0, 1, 1, 2.0), (0, 2, 2, 1.0), (0, 0, 1, 2.0)], &[]);
    out.push(("lambda_max", b, 3.0));

    // max t s.t. [[1, t], [t, 1]] PSD: |t| <= 1
    let mut c = SdpProblem::new();
    c.add_block(2);
    let t = c.add_free();
    c.add_row(row(&[(0, 0, 0, 1.0)], &[]), 1.0);
    c.add_row(row(&[(0, 1, 1, 1.0)], &[]), 1.0);
    c.add_row(row(&[(0, 0, 1, 1.0)], &[(t, -1.0)]), 0.0);
    c.objective = row(&[], &[(t, 1.0)]);
    out.push(("free_offdiagonal", c, 1.0));

    // LP as 1x1 blocks: max 3a + b s.t. a + 2b = 4, a, b >= 0: vertex a = 4
    let mut d = SdpProblem::new();
    d.add_block(1);
    d.add_block(1);
    d.add_row(row(&[(0, 0, 0, 1.0), (1, 0, 0, 2.0)], &[]), 4.0);
    d.objective = row(&[(0, 0, 0, 3.0), (1, 0, 0, 1.0)], &[]);
    out.push(("diagonal_lp", d, 12.0));

    // Lovasz theta of the 5-cycle: max <J, X> s.t. tr X = 1, X_ij = 0 on edges; theta(C5) = sqrt 5
    let mut e = SdpProblem::new();
    e.add_block(5);
    e.add_row(row(&(0..5).map(|i| (0, i, i, 1.0)).collect::<Vec<_>>(), &[]), 1.0);
    for i in 0..5 {
        let j = (i + 1) % 5;
        e.add_row(row(&[(0, i.min(j), i.max(j), 1.0)], &[]), 0.0);
    }
    let mut j_entries = Vec::new();
    for i in 0..5 {
        for k in i..5 {
            j_entries.push((0, i, k, if i == k { 1.0 } else { 2.0 }));
        }
    }
    e.objective = row(&j_entries, &[]);
    out.push(("theta_c5", e, 5f64.sqrt()));
    out
}

#[test]
fn criterion_2_sdp_corpus() {
    let start = Instant::now();
    let opts = SolverOptions::default();
    let mut notes = Vec::new();
    let mut pass = true;
    for (name, prob, expected) in analytic_corpus() {
        let sol = solve(&prob, &opts);
        let err = (sol.primal_objective - expected).abs();
        let ok = sol.status == SolveStatus::Optimal && err <= 1e-6 && validate(&prob, &sol, &opts).consistent();
        pass &= ok;
        notes.push(format!("{name} {:?} err {err:.1e}", sol.status));
    }
    // x11 = 1 and x11 = 2
    let mut bad = SdpProblem::new();
    bad.add_block(1);
    bad.add_row(row(&[(0, 0, 0, 1.0)], &[]), 1.0);
    bad.add_row(row(&[(0, 0, 0, 1.0)], &[]), 2.0);
    let sol = solve(&bad, &opts);
    let infeasible = sol.status == SolveStatus::PrimalInfeasible
        && matches!(sol.certificate, Some(InfeasibilityCertificate::Primal { .. }))
        && validate(&bad, &sol, &opts).consistent();
    pass &= infeasible;
    notes.push(format!("contradictory {:?} certificate {}", sol.status, sol.certificate.is_some()));
    assert!(report(2, "SDP corpus", pass, &notes.join(", "), start, Duration::from_secs(10)));
}

#[test]
fn criterion_3_duffing_global() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("duffing.cert.json");
    let def = bench("duffing.toml");
    let out = run(&[
        "certify",
        def.to_str().unwrap(),
        "--global",
        "--v-degree",
        "4",
        "--mult-degree",
        "2",
        "-o",
        cert.to_str().unwrap(),
    ]);
    let certified = out.status.code() == Some(0);
    let check = run(&["check-cert", cert.to_str().unwrap(), def.to_str().unwrap(), "-n", "10000"]);
    let text = stdout(&check);
    let sound = check.status.success() && text.contains("sampling: pass (10000 samples: 0 positivity");
    let detail = format!("exit {:?}, re-check exit {:?}", out.status.code(), check.status.code());
    assert!(report(3, "Duffing global", certified && sound, &detail, start, Duration::from_secs(300)));
}

#[test]
fn criterion_4_three_state_basin() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("ts.cert.json");
    let roa = dir.path().join("ts.roa.json");
    let def = bench("three_state.toml");
    let out = run(&["certify", def.to_str().unwrap(), "-o", cert.to_str().unwrap()]);
    let text = stdout(&out);
    let full_box = text.contains("upper [3.0, 3.0, 3.0] after 0 shrink");
    let r = run(&["roa", cert.to_str().unwrap(), def.to_str().unwrap(), "-o", roa.to_str().unwrap()]);
    let gamma = number_after(&stdout(&r), "gamma =").unwrap_or(f64::NAN);
    let sim = run(&[
        "simulate",
        def.to_str().unwrap(),
        "--grid",
        "15",
        "--cert",
        cert.to_str().unwrap(),
        "--roa",
        roa.to_str().unwrap(),
    ]);
    let st = stdout(&sim);
    let inside = number_after(&st, "inside level set:").unwrap_or(0.0);
    let inside_line = st.lines().find(|l| l.contains("inside level set:")).unwrap_or("");
    let bad = number_after(inside_line, "points,").unwrap_or(f64::NAN);
    let pass = out.status.success() && full_box && gamma > 0.0 && sim.status.success() && bad == 0.0 && inside > 0.0;
    let detail = format!("full cube {full_box}, gamma {gamma}, {inside} grid points inside the level set, {bad} not converged");
    assert!(report(4, "3-state basin", pass, &detail, start, Duration::from_secs(900)));
}

/// Certificate, ROA level and box fraction of the pendulum at one V degree.
fn pendulum_at(dir: &Path, degree: &str) -> (bool, f64, f64, PathBuf, PathBuf) {
    let cert = dir.join(format!("pend{degree}.cert.json"));
    let roa = dir.join(format!("pend{degree}.roa.json"));
    let def = bench("pendulum.toml");
    let out = run(&["certify", def.to_str().unwrap(), "--v-degree", degree, "-o", cert.to_str().unwrap()]);
    let full_box = stdout(&out).contains("upper [0.3, 1.4] after 0 shrink");
    let r = run(&["roa", cert.to_str().unwrap(), def.to_str().unwrap(), "-o", roa.to_str().unwrap()]);
    let rt = stdout(&r);
    let gamma = number_after(&rt, "gamma =").unwrap_or(f64::NAN);
    let frac = number_after(&rt, "box fraction inside level set:").unwrap_or(f64::NAN);
    (out.status.success() && full_box && r.status.success(), gamma, frac, cert, roa)
}

#[test]
fn criterion_5_pendulum() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let def = bench("pendulum.toml");
    let (ok4, g4, f4, cert, roa) = pendulum_at(dir.path(), "4");
    let sim = run(&[
        "simulate",
        def.to_str().unwrap(),
        "--cert",
        cert.to_str().unwrap(),
        "--roa",
        roa.to_str().unwrap(),
        "--inside",
        "100",
    ]);
    let converged = stdout(&sim).contains("converged: 100/100");
    let (ok2, g2, f2, _, _) = pendulum_at(dir.path(), "2");
    let pass = ok4 && g4 > 0.0 && converged && ok2 && g4 >= g2 && f4 >= f2;
    let detail = format!(
        "quartic gamma {g4:.4e} covers {f4} of the box, quadratic gamma {g2:.4e} covers {f2}, 100 inside converged {converged}"
    );
    assert!(report(5, "pendulum", pass, &detail, start, Duration::from_secs(1200)));
}

#[test]
fn criterion_6_robust_pendulum() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("robust.cert.json");
    let def = bench("pendulum_robust.toml");
    let out = run(&["robust", def.to_str().unwrap(), "-o", cert.to_str().unwrap()]);
    let full_box = stdout(&out).contains("upper [0.1, 0.3] after 0 shrink");
    let mut failed = Vec::new();
    for delta in ["1.25", "2", "3", "4", "5"] {
        let c = run(&["check-cert", cert.to_str().unwrap(), def.to_str().unwrap(), "--params", delta]);
        if !c.status.success() {
            failed.push(delta);
        }
    }
    let pass = out.status.success() && full_box && failed.is_empty();
    let detail = format!("full box {full_box}, soundness failed at delta {failed:?}");
    assert!(report(6, "robust pendulum", pass, &detail, start, Duration::from_secs(1200)));
}

#[test]
fn criterion_7_negative_control() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("u.cert.json");
    let def = bench("unstable.toml");
    let mut codes = Vec::new();
    for degree in ["2", "4", "6"] {
        for global in [false, true] {
            let mut args = vec!["certify", def.to_str().unwrap(), "--v-degree", degree, "-o", cert.to_str().unwrap()];
            if global {
                args.push("--global");
            }
            let out = Command::new(BIN).args(&args).output().unwrap();
            codes.push(out.status.code());
        }
    }
    let pass = codes.iter().all(|c| *c == Some(2)) && !cert.exists();
    let detail = format!("exit codes {codes:?} for degrees 2, 4, 6 (local, global)");
    assert!(report(7, "negative control", pass, &detail, start, Duration::from_secs(60)));
}

#[test]
fn criterion_8_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &str, &[&str]); 4] = [
        ("duffing", "certify", &["--global", "--v-degree", "4", "--mult-degree", "2"]),
        ("three_state", "certify", &[]),
        ("pendulum", "certify", &[]),
        ("pendulum_robust", "robust", &[]),
    ];
    let mut differing = Vec::new();
    for (name, cmd, extra) in cases {
        let def = bench(&format!("{name}.toml"));
        let mut files = Vec::new();
        for k in 0..2 {
            let cert = dir.path().join(format!("{name}.{k}.json"));
            let mut args = vec![cmd, def.to_str().unwrap(), "-o", cert.to_str().unwrap()];
            args.extend_from_slice(extra);
            let out = run(&args);
            files.push(if out.status.success() { std::fs::read(&cert).ok() } else { None });
        }
        if files[0].is_none() || files[0] != files[1] {
            differing.push(name);
        }
    }
    let detail = format!("differing or missing certificates: {differing:?}");
    assert!(report(8, "determinism", differing.is_empty(), &detail, start, Duration::from_secs(3600)));
}
