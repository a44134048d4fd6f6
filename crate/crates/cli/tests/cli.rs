use std::path::{Path, PathBuf};
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_nflsos");

fn bench(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(name)
}

fn nflsos(args: &[&str]) -> (Option<i32>, String, String) {
    let o = Command::new(BIN).args(args).output().unwrap();
    (o.status.code(), String::from_utf8_lossy(&o.stdout).into(), String::from_utf8_lossy(&o.stderr).into())
}

fn copy_bench(dir: &Path, toml: &str, net: &str) -> PathBuf {
    std::fs::copy(bench(net), dir.join(net)).unwrap();
    let def = dir.join(toml);
    std::fs::copy(bench(toml), &def).unwrap();
    def
}

#[test]
fn dump_constraints_lists_tagged_sets() {
    let (code, out, _) = nflsos(&["dump-constraints", bench("pendulum.toml").to_str().unwrap()]);
    assert_eq!(code, Some(0));
    for tag in ["[affine]", "[tanh-sector]", "[ibp-box]", "[saturation]", "[recast-sector]", "[region]"] {
        assert!(out.contains(tag), "missing {tag}");
    }
    assert!(out.contains("dz2/dt = "));
}

#[test]
fn sdpa_export_writes_a_readable_problem() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.dat-s");
    let (code, stdout, _) = nflsos(&[
        "certify",
        bench("duffing.toml").to_str().unwrap(),
        "--global",
        "--v-degree",
        "4",
        "--mult-degree",
        "2",
        "--solver",
        "sdpa-export",
        "-o",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, Some(0));
    assert!(stdout.starts_with("wrote "));
    let text = std::fs::read_to_string(&out).unwrap();
    let p = nflsos_core::sdp::read_sdpa(&text).unwrap();
    assert!(p.num_rows() > 0);
}

#[test]
fn roa_refuses_an_edited_definition() {
    let dir = tempfile::tempdir().unwrap();
    let def = copy_bench(dir.path(), "three_state.toml", "three_state.json");
    let cert = dir.path().join("c.json");
    let (code, _, _) = nflsos(&["certify", def.to_str().unwrap(), "-o", cert.to_str().unwrap()]);
    assert_eq!(code, Some(0));
    let text = std::fs::read_to_string(&def).unwrap();
    std::fs::write(&def, text.replace("horizon = 40.0", "horizon = 30.0")).unwrap();
    let (code, _, err) = nflsos(&["roa", cert.to_str().unwrap(), def.to_str().unwrap()]);
    assert_eq!(code, Some(1));
    assert!(err.contains("definition hash mismatch"), "{err}");
}

#[test]
fn tampered_certificate_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let def = bench("duffing.toml");
    let cert = dir.path().join("c.json");
    let args = ["certify", def.to_str().unwrap(), "--global", "--v-degree", "4", "--mult-degree", "2", "-o"];
    let (code, _, _) = nflsos(&[&args[..], &[cert.to_str().unwrap()]].concat());
    assert_eq!(code, Some(0));
    let (code, out, _) = nflsos(&["check-cert", cert.to_str().unwrap(), def.to_str().unwrap(), "-n", "200"]);
    assert_eq!(code, Some(0), "{out}");
    let text = std::fs::read_to_string(&cert).unwrap();
    let edited = text.replacen("\"k\": 1", "\"k\": 2", 1);
    assert_ne!(edited, text);
    std::fs::write(&cert, edited).unwrap();
    let (code, _, err) = nflsos(&["check-cert", cert.to_str().unwrap(), def.to_str().unwrap()]);
    assert_eq!(code, Some(1));
    assert!(err.contains("integrity"), "{err}");
}

#[test]
fn single_trajectory_and_bad_arguments() {
    let def = bench("duffing.toml");
    let (code, out, _) = nflsos(&["simulate", def.to_str().unwrap(), "--z0", "1.0,-0.5"]);
    assert_eq!(code, Some(0));
    assert!(out.contains("exit: converged"), "{out}");
    let (code, _, err) = nflsos(&["simulate", def.to_str().unwrap(), "--z0", "1.0"]);
    assert_eq!(code, Some(1));
    assert!(err.contains("2 states"), "{err}");
    let (code, _, _) = nflsos(&["certify", "/nonexistent.toml"]);
    assert_eq!(code, Some(1));
}
