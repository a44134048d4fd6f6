//! Global, local and robust Lyapunov certification, the region-shrinking
//! loop and level-set ROA maximization.

mod file;
mod instance;
#[cfg(test)]
mod tests;

use log::{info, warn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use file::{
    check_certificate, input_hashes, sha256_hex, CertificateFile, Sealed, CheckLine, CheckReport, MultiplierRecord, RoaFile, TOOL_NAME,
};
pub use instance::{
    build_instance, derivative_basis_options, derivative_expression, equilibrium_residual, lyapunov_basis,
    multiplier_degree, plan_multipliers, stability_program, state_norm_sq, Instance, MultiplierClass,
    MultiplierPlan, StabilityProgram, variable_scales,
};

use crate::abstraction::AbstractionError;
use crate::definition::{CertifyConfig, DefinitionError, SystemDefinition};
use crate::nn::BoxRegion;
use crate::poly::{Monomial, Polynomial, VarId, VariableSpace};
use crate::sdp::{SolveStatus, SolverOptions};
use crate::simulator::{sample_certificate, ParamSampling, SoundnessReport};
use crate::sos::{monomials_up_to, BasisOptions, Certificate, LinExpr, LinPoly, SosError, SosOptions, SosProgram};

/// Largest residual `|f(0, pi(0))|` accepted as an equilibrium.
pub const EQUILIBRIUM_TOL: f64 = 1e-8;

/// Half-width of the sampling box used to check global certificates.
pub const GLOBAL_SAMPLE_HALF_WIDTH: f64 = 2.0;

#[derive(Debug, Error)]
pub enum CertifyError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Abstraction(#[from] AbstractionError),
    #[error(transparent)]
    Definition(#[from] DefinitionError),
    #[error("{0}")]
    Sos(SosError),
    #[error("no certificate found after {} attempt(s)", .0.len())]
    Infeasible(Vec<Attempt>),
    #[error("certificate failed the soundness check: {0}")]
    Unsound(String),
    #[error("degenerate level set: gamma = {0:e}")]
    Degenerate(f64),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed certificate: {0}")]
    Json(#[from] serde_json::Error),
    #[error("integrity check failed: {0}")]
    Integrity(String),
}

impl CertifyError {
    /// Honest infeasibility, as opposed to an error.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, CertifyError::Infeasible(_) | CertifyError::Degenerate(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Global,
    Local,
    Robust,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Global => "global",
            Mode::Local => "local",
            Mode::Robust => "robust",
        }
    }
}

/// One solve of the region-shrinking loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub region: Option<BoxRegion>,
    pub outcome: String,
}

#[derive(Debug, Clone)]
pub struct StabilityResult {
    pub mode: Mode,
    pub instance: Instance,
    pub plans: Vec<MultiplierPlan>,
    pub certificate: Certificate,
    /// The Lyapunov function, over the states.
    pub v: Polynomial,
    pub initial_region: Option<BoxRegion>,
    pub final_region: Option<BoxRegion>,
    pub shrink_iterations: u32,
    pub attempts: Vec<Attempt>,
    pub soundness: SoundnessReport,
}

pub fn sos_options(cfg: &CertifyConfig) -> SosOptions {
    SosOptions { solver: SolverOptions::default(), psd_tol: cfg.psd_tol, recon_tol: cfg.recon_tol }
}

fn failure_is_infeasible(e: &SosError) -> bool {
    match e {
        SosError::Solver(s) => !matches!(s, SolveStatus::Optimal | SolveStatus::Feasible),
        SosError::Rejected(_) | SosError::Uncoverable { .. } => true,
        SosError::DuplicateName(_) => false,
    }
}

/// The definition with parameters pinned to their nominal values.
fn pinned(def: &SystemDefinition) -> SystemDefinition {
    let mut d = def.clone();
    for p in &mut d.parameters {
        p.lower = p.nominal;
        p.upper = p.nominal;
    }
    d
}

/// The definition as a given mode sees it: parameters pinned outside robust
/// mode, region dropped in global mode.
pub fn prepared(def: &SystemDefinition, mode: Mode) -> SystemDefinition {
    let mut d = if mode == Mode::Robust { def.clone() } else { pinned(def) };
    if mode == Mode::Global {
        d.region = None;
        d.extra_region.clear();
    }
    d
}

/// Parameter choice used when sampling a certificate of the given mode.
pub fn param_sampling(mode: Mode) -> ParamSampling {
    if mode == Mode::Robust {
        ParamSampling::Uniform
    } else {
        ParamSampling::Nominal
    }
}

type Solved = (Instance, Vec<MultiplierPlan>, Certificate);

/// Solves one instance; the inner `Err` carries an infeasibility reason.
fn solve_instance(
    def: &SystemDefinition,
    region: Option<&BoxRegion>,
    cfg: &CertifyConfig,
) -> Result<Result<Solved, String>, CertifyError> {
    let inst = build_instance(def, region, cfg)?;
    let StabilityProgram { program, plans } = stability_program(&inst, def, cfg)?;
    match program.solve(&sos_options(cfg)) {
        Ok(cert) => Ok(Ok((inst, plans, cert))),
        Err(e) if failure_is_infeasible(&e) => Ok(Err(e.to_string())),
        Err(e) => Err(CertifyError::Sos(e)),
    }
}

impl From<SosError> for CertifyError {
    fn from(e: SosError) -> Self {
        CertifyError::Sos(e)
    }
}

fn check_equilibrium_of(def: &SystemDefinition) -> Result<(), CertifyError> {
    let r = equilibrium_residual(def);
    if !(r <= EQUILIBRIUM_TOL) {
        return Err(CertifyError::Precondition(format!(
            "origin is not an equilibrium of the closed loop: residual {r:e} (see --shift-output-bias)"
        )));
    }
    Ok(())
}

/// Global certificate: no region, IBP-free network abstraction.
pub fn certify_global(def: &SystemDefinition) -> Result<StabilityResult, CertifyError> {
    if def.region.is_some() || !def.extra_region.is_empty() {
        info!("global mode ignores the region of the definition");
    }
    let d = prepared(def, Mode::Global);
    check_equilibrium_of(&d)?;
    let cfg = &def.certify;
    match solve_instance(&d, None, cfg)? {
        Ok((instance, plans, certificate)) => {
            let attempts = vec![Attempt { region: None, outcome: "feasible".into() }];
            finish(&d, Mode::Global, instance, plans, certificate, None, None, 0, attempts)
        }
        Err(why) => Err(CertifyError::Infeasible(vec![Attempt { region: None, outcome: why }])),
    }
}

/// One local solve on a fixed region, no shrinking.
pub fn certify_local(def: &SystemDefinition, region: &BoxRegion) -> Result<StabilityResult, CertifyError> {
    let mut cfg = def.certify.clone();
    cfg.max_shrink = 0;
    let mut d = pinned(def);
    d.region = Some(region.clone());
    d.certify = cfg;
    run_shrinking(&d, Mode::Local)
}

/// Local certificate valid for every parameter value in its interval.
pub fn certify_robust(def: &SystemDefinition) -> Result<StabilityResult, CertifyError> {
    if def.parameters.is_empty() {
        return Err(CertifyError::Precondition("robust mode needs at least one [[parameters]] entry".into()));
    }
    run_shrinking(def, Mode::Robust)
}

/// IBP, abstraction and a local solve on a shrinking box.
pub fn run_shrinking(def: &SystemDefinition, mode: Mode) -> Result<StabilityResult, CertifyError> {
    let d = prepared(def, mode);
    let initial = d
        .region
        .clone()
        .ok_or_else(|| CertifyError::Precondition("local certification needs a region box".into()))?;
    if !initial.contains_origin_strictly() {
        return Err(CertifyError::Precondition("region must contain the origin in its interior".into()));
    }
    check_equilibrium_of(&d)?;
    let cfg = &d.certify;
    let mut attempts = Vec::new();
    let mut region = initial.clone();
    for it in 0..=cfg.max_shrink {
        info!("attempt {}: region lower {:?} upper {:?}", it + 1, region.lower, region.upper);
        match solve_instance(&d, Some(&region), cfg)? {
            Ok((instance, plans, certificate)) => {
                attempts.push(Attempt { region: Some(region.clone()), outcome: "feasible".into() });
                return finish(&d, mode, instance, plans, certificate, Some(initial), Some(region), it, attempts);
            }
            Err(why) => {
                info!("attempt {} infeasible: {why}", it + 1);
                attempts.push(Attempt { region: Some(region.clone()), outcome: why });
                region = region.scaled(cfg.shrink_factor);
            }
        }
    }
    Err(CertifyError::Infeasible(attempts))
}

/// Entry point used by the CLI.
pub fn certify(def: &SystemDefinition, mode: Mode) -> Result<StabilityResult, CertifyError> {
    match mode {
        Mode::Global => certify_global(def),
        Mode::Local => run_shrinking(def, Mode::Local),
        Mode::Robust => certify_robust(def),
    }
}

/// Sampling box for the soundness gate.
pub fn sampling_region(def: &SystemDefinition, final_region: Option<&BoxRegion>) -> BoxRegion {
    match final_region {
        Some(r) => r.clone(),
        None => BoxRegion::symmetric(&vec![GLOBAL_SAMPLE_HALF_WIDTH; def.states.len()]).expect("positive widths"),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    def: &SystemDefinition,
    mode: Mode,
    instance: Instance,
    plans: Vec<MultiplierPlan>,
    certificate: Certificate,
    initial_region: Option<BoxRegion>,
    final_region: Option<BoxRegion>,
    shrink_iterations: u32,
    attempts: Vec<Attempt>,
) -> Result<StabilityResult, CertifyError> {
    let v = certificate.polynomials["V"].clone();
    let cfg = &def.certify;
    let region = sampling_region(def, final_region.as_ref());
    let soundness = sample_certificate(def, &v, cfg.epsilon, &region, &param_sampling(mode), cfg.samples, cfg.seed);
    if !soundness.passed {
        warn!("soundness sampling found {} violation(s)", soundness.violations);
        return Err(CertifyError::Unsound(soundness.summary()));
    }
    Ok(StabilityResult {
        mode,
        instance,
        plans,
        certificate,
        v,
        initial_region,
        final_region,
        shrink_iterations,
        attempts,
        soundness,
    })
}

/// Result of the level-set program.
#[derive(Debug, Clone)]
pub struct RoaResult {
    pub k: u32,
    pub gamma: f64,
    pub constraints: Vec<String>,
    pub certificate: Certificate,
}

fn even_ceil(d: u32) -> u32 {
    d + d % 2
}

/// Largest `gamma` with `{V < gamma}` inside every `d_k >= 0`, certified by
/// `|z|^{2k} (V - gamma) + p_k d_k` SOS.
pub fn roa_maximize(
    space: &VariableSpace,
    states: &[VarId],
    v: &Polynomial,
    region: &[Polynomial],
    k: u32,
    opts: &SosOptions,
) -> Result<RoaResult, CertifyError> {
    if region.is_empty() {
        return Err(CertifyError::Precondition("level-set maximization needs region constraints".into()));
    }
    let mut prog = SosProgram::new(space);
    let gamma = prog.new_free();
    let norm_k = state_norm_sq(space, states).pow(k);
    let lifted_v = &norm_k * v;
    let vars = BasisOptions { vars: Some(states.to_vec()), ..BasisOptions::default() };
    for (i, d) in region.iter().enumerate() {
        let deg = even_ceil((2 * k + v.degree()).saturating_sub(d.degree()));
        let basis: Vec<Monomial> = monomials_up_to(states, k, deg / 2);
        let mut e = LinPoly::from_poly(&lifted_v);
        for (m, c) in norm_k.terms() {
            e.add_term(m.clone(), &LinExpr::term(gamma, -c), 1.0);
        }
        if !basis.is_empty() {
            let p = prog.new_sos_poly(&format!("p{}", i + 1), basis)?;
            e.add_scaled(&p.mul_poly(d), 1.0);
        }
        prog.add_sos(&format!("level{}", i + 1), e, &vars)?;
    }
    prog.set_objective(LinExpr::var(gamma));
    let certificate = match prog.solve(opts) {
        Ok(c) => c,
        Err(e) if failure_is_infeasible(&e) => {
            return Err(CertifyError::Infeasible(vec![Attempt { region: None, outcome: e.to_string() }]))
        }
        Err(e) => return Err(e.into()),
    };
    let gamma = certificate.objective_value;
    if !(gamma > 0.0) {
        return Err(CertifyError::Degenerate(gamma));
    }
    Ok(RoaResult { k, gamma, constraints: region.iter().map(|d| d.display(space).to_string()).collect(), certificate })
}

/// Region polynomials of a certified local result, without pairwise products.
pub fn level_set_region(def: &SystemDefinition, region: &BoxRegion) -> Vec<Polynomial> {
    let sid = def.space.id();
    let mut out = Vec::new();
    for (&z, iv) in def.states.iter().zip(region.intervals()) {
        let zp = Polynomial::var(sid, z);
        out.push(&zp - &Polynomial::constant(sid, iv.lo));
        out.push(&Polynomial::constant(sid, iv.hi) - &zp);
    }
    out.extend(def.extra_region.iter().cloned());
    out
}
