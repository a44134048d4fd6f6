//! Certificate files: JSON with input hashes and a self digest, plus the
//! solver-free re-verification used by `check-cert`.

use std::collections::BTreeMap;
use std::path::Path;

use faer::Mat;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    build_instance, param_sampling, plan_multipliers, prepared, sampling_region, state_norm_sq, CertifyError, Mode,
    RoaResult, StabilityResult,
};
use crate::definition::{CertifyConfig, SystemDefinition};
use crate::nn::BoxRegion;
use crate::poly::{Monomial, Polynomial, VariableSpace};
use crate::sdp;
use crate::simulator::{sample_certificate, ParamSampling, SoundnessReport};
use crate::sos::{gram_expansion, Diagnostics, GramMatrix};

pub const TOOL_NAME: &str = "nflsos";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read(path: &Path) -> Result<Vec<u8>, CertifyError> {
    std::fs::read(path).map_err(|source| CertifyError::Io { path: path.display().to_string(), source })
}

/// Hashes of the definition file and of the weight file it references.
pub fn input_hashes(def_path: &Path, def: &SystemDefinition) -> Result<(String, Option<String>), CertifyError> {
    let d = sha256_hex(&read(def_path)?);
    let n = match &def.network_path {
        Some(p) => Some(sha256_hex(&read(p)?)),
        None => None,
    };
    Ok((d, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierRecord {
    pub name: String,
    /// `sos` or `free`.
    pub kind: String,
    pub tag: String,
    pub label: String,
    pub constraint: String,
    pub polynomial: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateFile {
    pub tool: String,
    pub version: String,
    pub system: String,
    pub definition_sha256: String,
    pub network_sha256: Option<String>,
    pub shift_output_bias: bool,
    pub mode: Mode,
    pub options: CertifyConfig,
    pub initial_region: Option<BoxRegion>,
    pub final_region: Option<BoxRegion>,
    pub shrink_iterations: u32,
    pub attempts: Vec<super::Attempt>,
    pub variables: Vec<String>,
    pub lyapunov: String,
    pub multipliers: Vec<MultiplierRecord>,
    pub gram: BTreeMap<String, GramMatrix>,
    pub diagnostics: Diagnostics,
    pub soundness: SoundnessReport,
    pub digest: String,
}

/// JSON documents carrying a sha256 of themselves with the digest blanked.
pub trait Sealed: Serialize + for<'de> Deserialize<'de> + Clone {
    fn digest_mut(&mut self) -> &mut String;

    fn compute_digest(&self) -> String {
        let mut c = self.clone();
        c.digest_mut().clear();
        sha256_hex(serde_json::to_string_pretty(&c).expect("serializable").as_bytes())
    }

    fn to_json(&self) -> String {
        let mut c = self.clone();
        *c.digest_mut() = self.compute_digest();
        let mut s = serde_json::to_string_pretty(&c).expect("serializable");
        s.push('\n');
        s
    }

    fn from_json(text: &str) -> Result<Self, CertifyError> {
        let mut parsed: Self = serde_json::from_str(text)?;
        let stored = parsed.digest_mut().clone();
        let actual = parsed.compute_digest();
        if stored != actual {
            return Err(CertifyError::Integrity(format!("digest mismatch: stored {stored}, computed {actual}")));
        }
        Ok(parsed)
    }
}

impl Sealed for CertificateFile {
    fn digest_mut(&mut self) -> &mut String {
        &mut self.digest
    }
}

impl CertificateFile {
    pub fn new(
        def: &SystemDefinition,
        result: &StabilityResult,
        hashes: (String, Option<String>),
        shift_output_bias: bool,
    ) -> Self {
        let space = &result.instance.space;
        let polys = &result.certificate.polynomials;
        let multipliers = result
            .plans
            .iter()
            .map(|p| MultiplierRecord {
                name: p.name.clone(),
                kind: if p.sos { "sos" } else { "free" }.into(),
                tag: p.tag.as_str().into(),
                label: p.label.clone(),
                constraint: p.constraint.display(space).to_string(),
                polynomial: polys[&p.name].display(space).to_string(),
            })
            .collect();
        Self {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            system: def.name.clone(),
            definition_sha256: hashes.0,
            network_sha256: hashes.1,
            shift_output_bias,
            mode: result.mode,
            options: def.certify.clone(),
            initial_region: result.initial_region.clone(),
            final_region: result.final_region.clone(),
            shrink_iterations: result.shrink_iterations,
            attempts: result.attempts.clone(),
            variables: space.vars().map(|v| space.name(v).to_string()).collect(),
            lyapunov: result.v.display(space).to_string(),
            multipliers,
            gram: result.certificate.gram_matrices.clone(),
            diagnostics: result.certificate.diagnostics.clone(),
            soundness: result.soundness.clone(),
            digest: String::new(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, CertifyError> {
        let text = String::from_utf8_lossy(&read(path)?).into_owned();
        Self::from_json(&text)
    }

    /// Definition prepared the way the certificate was produced.
    pub fn prepare_definition(&self, def: &SystemDefinition) -> SystemDefinition {
        let mut d = def.clone();
        if self.shift_output_bias {
            d.network = d.network.with_shifted_output_bias();
        }
        d.certify = self.options.clone();
        prepared(&d, self.mode)
    }
}

/// Level-set result written by `roa`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoaFile {
    pub tool: String,
    pub version: String,
    pub certificate_digest: String,
    pub definition_sha256: String,
    pub lyapunov: String,
    pub k: u32,
    pub gamma: f64,
    pub region_constraints: Vec<String>,
    pub multipliers: BTreeMap<String, String>,
    pub gram: BTreeMap<String, GramMatrix>,
    pub diagnostics: Diagnostics,
    pub digest: String,
}

impl Sealed for RoaFile {
    fn digest_mut(&mut self) -> &mut String {
        &mut self.digest
    }
}

impl RoaFile {
    pub fn new(cert: &CertificateFile, space: &VariableSpace, roa: &RoaResult) -> Self {
        Self {
            tool: TOOL_NAME.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            certificate_digest: cert.digest.clone(),
            definition_sha256: cert.definition_sha256.clone(),
            lyapunov: cert.lyapunov.clone(),
            k: roa.k,
            gamma: roa.gamma,
            region_constraints: roa.constraints.clone(),
            multipliers: roa
                .certificate
                .polynomials
                .iter()
                .map(|(n, p)| (n.clone(), p.display(space).to_string()))
                .collect(),
            gram: roa.certificate.gram_matrices.clone(),
            diagnostics: roa.certificate.diagnostics.clone(),
            digest: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub lines: Vec<CheckLine>,
}

impl CheckReport {
    fn push(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.lines.push(CheckLine { name: name.into(), passed, detail: detail.into() });
    }

    pub fn passed(&self) -> bool {
        self.lines.iter().all(|l| l.passed)
    }
}

fn parse_in(text: &str, space: &VariableSpace, what: &str) -> Result<Polynomial, String> {
    Polynomial::parse(text, space).map_err(|e| format!("{what}: {e}"))
}

fn gram_poly(g: &GramMatrix, space: &VariableSpace) -> Result<Polynomial, String> {
    let basis = g
        .basis
        .iter()
        .map(|t| {
            let p = parse_in(t, space, "gram basis")?;
            let m = match p.terms().next() {
                Some((m, c)) if p.len() == 1 && c == 1.0 => Ok(m.clone()),
                _ => Err(format!("gram basis entry `{t}` is not a monomial")),
            };
            m
        })
        .collect::<Result<Vec<Monomial>, String>>()?;
    let n = basis.len();
    if g.matrix.len() != n || g.matrix.iter().any(|r| r.len() != n) {
        return Err("gram matrix shape does not match its basis".into());
    }
    Ok(gram_expansion(&basis, &Mat::from_fn(n, n, |i, j| g.matrix[i][j]), space))
}

/// Re-derives the certificate identities from the definition and samples
/// the true closed loop. No solver is involved. `params` pins the
/// parameter values used for sampling.
pub fn check_certificate(
    cert: &CertificateFile,
    def_path: &Path,
    def: &SystemDefinition,
    n: usize,
    seed: u64,
    params: Option<&[f64]>,
) -> Result<CheckReport, CertifyError> {
    let mut report = CheckReport::default();
    let (dh, nh) = input_hashes(def_path, def)?;
    report.push(
        "input hashes",
        dh == cert.definition_sha256 && nh == cert.network_sha256,
        if dh == cert.definition_sha256 { "definition matches" } else { "definition file differs from the certified one" },
    );

    let d = cert.prepare_definition(def);
    let cfg = &cert.options;
    let inst = build_instance(&d, cert.final_region.as_ref(), cfg)?;
    let space = &inst.space;
    let plans = plan_multipliers(&inst, cfg);

    let by_name: BTreeMap<&str, &super::MultiplierRecord> =
        cert.multipliers.iter().map(|m| (m.name.as_str(), m)).collect();
    let mut structure = Vec::new();
    if plans.len() != cert.multipliers.len() {
        structure.push(format!("{} multipliers rebuilt, {} stored", plans.len(), cert.multipliers.len()));
    }
    for p in &plans {
        match by_name.get(p.name.as_str()) {
            None => structure.push(format!("{} missing", p.name)),
            Some(r) if r.constraint != p.constraint.display(space).to_string() => {
                structure.push(format!("{}: constraint differs", p.name))
            }
            _ => {}
        }
    }
    report.push("constraint structure", structure.is_empty(), structure.join("; "));

    let identity = (|| -> Result<f64, String> {
        let v = parse_in(&cert.lyapunov, space, "lyapunov")?;
        let gram = |name: &str| cert.gram.get(name).ok_or_else(|| format!("gram block `{name}` missing"));
        let norm = state_norm_sq(space, &inst.states);
        let mut worst = (&v - &norm.scale(cfg.epsilon)).max_abs_diff(&gram_poly(gram("lyapunov")?, space)?);
        let mut e = Polynomial::zero(space.id());
        for (z, f) in inst.states.iter().zip(&inst.dynamics) {
            e = &e - &(&v.differentiate(*z) * f);
        }
        e = &e - &norm.scale(cfg.decay);
        for p in &plans {
            let r = by_name.get(p.name.as_str()).ok_or_else(|| format!("{} missing", p.name))?;
            let m = parse_in(&r.polynomial, space, &p.name)?;
            if p.sos {
                worst = worst.max(m.max_abs_diff(&gram_poly(gram(&p.name)?, space)?));
            }
            e = &e - &(&m * &p.constraint);
        }
        worst = worst.max(e.max_abs_diff(&gram_poly(gram("derivative")?, space)?));
        Ok(worst)
    })();
    match identity {
        Ok(w) => report.push(
            "gram identities",
            w <= cfg.recon_tol,
            format!("max coefficient residual {w:e} (tolerance {:e})", cfg.recon_tol),
        ),
        Err(msg) => report.push("gram identities", false, msg),
    }

    let mut min_eig = f64::INFINITY;
    for g in cert.gram.values() {
        let k = g.matrix.len();
        if k == 0 || g.matrix.iter().any(|r| r.len() != k) {
            continue;
        }
        let m = Mat::from_fn(k, k, |i, j| 0.5 * (g.matrix[i][j] + g.matrix[j][i]));
        min_eig = min_eig.min(sdp::min_eigenvalue(&m));
    }
    report.push(
        "gram eigenvalues",
        min_eig >= -cfg.psd_tol,
        format!("smallest eigenvalue {min_eig:e} (tolerance -{:e})", cfg.psd_tol),
    );

    if n == 0 {
        report.push("sampling", true, "skipped (n = 0)");
    } else {
        match parse_in(&cert.lyapunov, space, "lyapunov") {
            Ok(v) => {
                let region = sampling_region(&d, cert.final_region.as_ref());
                let sampling = params.map_or_else(|| param_sampling(cert.mode), |p| ParamSampling::Fixed(p.to_vec()));
                let s = sample_certificate(&d, &v, cfg.epsilon, &region, &sampling, n, seed);
                report.push("sampling", s.passed, s.summary());
            }
            Err(msg) => report.push("sampling", false, msg),
        }
    }
    Ok(report)
}
