//! `nflsos`: certify neural feedback loops from TOML definitions.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use nflsos_core::certifier::{
    self, build_instance, check_certificate, input_hashes, level_set_region, roa_maximize, sos_options,
    stability_program, CertificateFile, CertifyError, Mode, RoaFile, Sealed,
};
use nflsos_core::definition::{SlopeMode, SystemDefinition};
use nflsos_core::nn::BoxRegion;
use nflsos_core::poly::Polynomial;
use nflsos_core::sdp::write_sdpa;
use nflsos_core::simulator::{
    basin_csv, basin_sample, integrate, level_set_points, points_csv, sample_sublevel, sublevel_fraction, trajectory_csv,
    ExitReason, SimConfig,
};

/// Exit status for honest infeasibility.
const INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "nflsos", version, about = "SOS stability certificates for neural feedback loops")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Lyapunov certificate on the definition's region (or globally).
    Certify(CertifyArgs),
    /// Certificate valid over the parameter intervals.
    Robust(CertifyArgs),
    /// Largest certified level set of a certificate's V.
    Roa(RoaArgs),
    /// Simulate the true closed loop.
    Simulate(SimulateArgs),
    /// Re-verify a certificate without the solver.
    CheckCert(CheckArgs),
    /// Print the constraint set handed to the SOS program.
    DumpConstraints(CertifyArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SolverChoice {
    Embedded,
    SdpaExport,
}

#[derive(Args)]
struct CertifyArgs {
    definition: PathBuf,
    /// Certificate output path (default `<definition stem>.cert.json`).
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long)]
    global: bool,
    #[arg(long)]
    v_degree: Option<u32>,
    /// Degree of the network, region and auxiliary multipliers.
    #[arg(long)]
    mult_degree: Option<u32>,
    /// Exponent k of |z|^{2k} in the level-set program.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    shrink_factor: Option<f64>,
    #[arg(long)]
    max_shrink: Option<u32>,
    /// Slope constraints between every pair of nodes, not only within a layer.
    #[arg(long)]
    all_pairs_slope: bool,
    /// Subtract the network's output at the origin from its output bias.
    #[arg(long)]
    shift_output_bias: bool,
    #[arg(long, value_enum, default_value = "embedded")]
    solver: SolverChoice,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the constraint set before solving.
    #[arg(long)]
    dump_constraints: bool,
}

#[derive(Args)]
struct RoaArgs {
    certificate: PathBuf,
    definition: PathBuf,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Level-set contour samples as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    points: usize,
    #[arg(long)]
    k: Option<u32>,
    /// Samples for the level-set volume estimate.
    #[arg(long, default_value_t = 100_000)]
    volume_samples: usize,
}

#[derive(Args)]
struct SimulateArgs {
    definition: PathBuf,
    /// Initial state, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z0: Option<Vec<f64>>,
    /// Basin grid with this many points per axis over the region box.
    #[arg(long)]
    grid: Option<usize>,
    /// Half-width of the grid box when the definition has no region.
    #[arg(long)]
    half_width: Option<f64>,
    /// Certificate whose level set classifies the grid or seeds `--inside`.
    #[arg(long, requires = "roa")]
    cert: Option<PathBuf>,
    /// Level-set file written by `roa`.
    #[arg(long)]
    roa: Option<PathBuf>,
    /// Simulate this many random states from inside the certified level set.
    #[arg(long, requires = "roa")]
    inside: Option<usize>,
    /// Parameter values, comma separated (default nominal).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Option<Vec<f64>>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    certificate: PathBuf,
    definition: PathBuf,
    /// Number of sampled states.
    #[arg(short, default_value_t = 10_000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Parameter values to sample at, comma separated (default: as certified).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    params: Option<Vec<f64>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    let result = match cli.command {
        Command::Certify(a) => cmd_certify(&a, false),
        Command::Robust(a) => cmd_certify(&a, true),
        Command::Roa(a) => cmd_roa(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::CheckCert(a) => cmd_check(&a),
        Command::DumpConstraints(a) => cmd_dump(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            if let Some(ce) = e.downcast_ref::<CertifyError>() {
                if ce.is_infeasible() {
                    eprintln!("infeasible: {ce}");
                    if let CertifyError::Infeasible(attempts) = ce {
                        for (i, a) in attempts.iter().enumerate() {
                            match &a.region {
                                Some(r) => eprintln!("  attempt {}: box {:?}..{:?}: {}", i + 1, r.lower, r.upper, a.outcome),
                                None => eprintln!("  attempt {}: {}", i + 1, a.outcome),
                            }
                        }
                    }
                    return ExitCode::from(INFEASIBLE);
                }
            }
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_definition(path: &Path) -> Result<SystemDefinition> {
    SystemDefinition::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))
}

/// Definition with command-line overrides applied.
fn configured(a: &CertifyArgs) -> Result<SystemDefinition> {
    let mut def = load_definition(&a.definition)?;
    let c = &mut def.certify;
    if let Some(v) = a.v_degree {
        c.v_degree = v;
    }
    if let Some(m) = a.mult_degree {
        c.multipliers.network = Some(m);
        c.multipliers.region = Some(m);
        c.multipliers.auxiliary = Some(m);
    }
    if let Some(k) = a.k {
        c.k = k;
    }
    if let Some(e) = a.epsilon {
        c.epsilon = e;
    }
    if let Some(s) = a.shrink_factor {
        c.shrink_factor = s;
    }
    if let Some(m) = a.max_shrink {
        c.max_shrink = m;
    }
    if a.all_pairs_slope {
        c.slope = SlopeMode::AllPairs;
    }
    if let Some(s) = a.seed {
        c.seed = s;
    }
    c.validate().map_err(|e| anyhow!("{e}"))?;
    if a.shift_output_bias {
        def.network = def.network.with_shifted_output_bias();
        info!("output bias shifted so that the network vanishes at the origin");
    }
    Ok(def)
}

fn mode_of(a: &CertifyArgs, robust: bool) -> Mode {
    if robust {
        Mode::Robust
    } else if a.global {
        Mode::Global
    } else {
        Mode::Local
    }
}

fn default_output(def: &Path, suffix: &str) -> PathBuf {
    let stem = def.file_stem().map_or("system".into(), |s| s.to_string_lossy().into_owned());
    PathBuf::from(format!("{stem}{suffix}"))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn initial_region(def: &SystemDefinition, mode: Mode) -> Option<BoxRegion> {
    if mode == Mode::Global {
        None
    } else {
        def.region.clone()
    }
}

fn cmd_certify(a: &CertifyArgs, robust: bool) -> Result<ExitCode> {
    let def = configured(a)?;
    let mode = mode_of(a, robust);
    if a.dump_constraints {
        print!("{}", dump(&def, mode)?);
    }
    if a.solver == SolverChoice::SdpaExport {
        let d = certifier::prepared(&def, mode);
        let inst = build_instance(&d, initial_region(&d, mode).as_ref(), &d.certify)?;
        let prog = stability_program(&inst, &d, &d.certify)?;
        let sdp = prog.program.lower()?;
        let out = a.output.clone().unwrap_or_else(|| default_output(&a.definition, ".dat-s"));
        write(&out, &write_sdpa(&sdp))?;
        println!(
            "wrote {} ({} constraints, blocks {:?}, {} free variables)",
            out.display(),
            sdp.num_rows(),
            sdp.block_dims,
            sdp.num_free
        );
        return Ok(ExitCode::SUCCESS);
    }
    let result = certifier::certify(&def, mode)?;
    let file = CertificateFile::new(&def, &result, input_hashes(&a.definition, &def)?, a.shift_output_bias);
    let out = a.output.clone().unwrap_or_else(|| default_output(&a.definition, ".cert.json"));
    write(&out, &file.to_json())?;
    println!("certified ({} mode)", mode.as_str());
    println!("V = {}", file.lyapunov);
    if let Some(r) = &result.final_region {
        println!("region: lower {:?} upper {:?} after {} shrink step(s)", r.lower, r.upper, result.shrink_iterations);
    }
    println!("soundness: {}", result.soundness.summary());
    println!("certificate: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn dump(def: &SystemDefinition, mode: Mode) -> Result<String> {
    let d = certifier::prepared(def, mode);
    let inst = build_instance(&d, initial_region(&d, mode).as_ref(), &d.certify)?;
    let mut s = String::from("# abstraction\n");
    s.push_str(&inst.raw.dump(&inst.space));
    s.push_str("# after substituting definitions\n");
    s.push_str(&inst.set.dump(&inst.space));
    s.push_str("# closed-loop dynamics\n");
    for (z, f) in inst.states.iter().zip(&inst.dynamics) {
        s.push_str(&format!("d{}/dt = {}\n", inst.space.name(*z), f.display(&inst.space)));
    }
    Ok(s)
}

fn cmd_dump(a: &CertifyArgs) -> Result<ExitCode> {
    let def = configured(a)?;
    print!("{}", dump(&def, mode_of(a, false))?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_roa(a: &RoaArgs) -> Result<ExitCode> {
    let cert = CertificateFile::load(&a.certificate)?;
    let def = load_definition(&a.definition)?;
    let (dh, _) = input_hashes(&a.definition, &def)?;
    if dh != cert.definition_sha256 {
        bail!("definition hash mismatch: certificate was issued for a different {}", a.definition.display());
    }
    let region = cert
        .final_region
        .clone()
        .ok_or_else(|| anyhow!("level sets need a region; the certificate is global"))?;
    let v = Polynomial::parse(&cert.lyapunov, &def.space).map_err(|e| anyhow!("lyapunov: {e}"))?;
    let d = level_set_region(&def, &region);
    let k = a.k.unwrap_or(cert.options.k);
    let roa = roa_maximize(&def.space, &def.states, &v, &d, k, &sos_options(&cert.options))?;
    let file = RoaFile::new(&cert, &def.space, &roa);
    let out = a.output.clone().unwrap_or_else(|| default_output(&a.definition, ".roa.json"));
    write(&out, &file.to_json())?;
    println!("gamma = {}", roa.gamma);
    println!("level set: {} <= {}", cert.lyapunov, roa.gamma);
    let frac = sublevel_fraction(&def, &v, roa.gamma, &region, a.volume_samples, cert.options.seed);
    println!("box fraction inside level set: {frac} ({} samples)", a.volume_samples);
    if let Some(csv) = &a.csv {
        let pts = level_set_points(&def, &v, roa.gamma, &region, a.points, cert.options.seed);
        write(csv, &points_csv(&pts, &state_names(&def)))?;
        println!("contour samples: {}", csv.display());
    }
    println!("roa: {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn state_names(def: &SystemDefinition) -> Vec<String> {
    def.states.iter().map(|v| def.space.name(*v).to_string()).collect()
}

fn cmd_simulate(a: &SimulateArgs) -> Result<ExitCode> {
    let def = load_definition(&a.definition)?;
    let mut cfg = SimConfig::from(&def.simulate);
    if let Some(h) = a.step {
        cfg.step = h;
    }
    if let Some(t) = a.horizon {
        cfg.horizon = t;
    }
    if !(cfg.step > 0.0 && cfg.horizon >= cfg.step) {
        bail!("need step > 0 and horizon >= step");
    }
    let params = a.params.clone().unwrap_or_else(|| def.nominal_parameters());
    if params.len() != def.parameters.len() {
        bail!("{} parameter value(s) given, definition has {}", params.len(), def.parameters.len());
    }
    let f = |z: &[f64]| def.closed_loop(z, &params);
    let names = state_names(&def);

    let level = match &a.roa {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let roa = RoaFile::from_json(&text)?;
            if let Some(c) = &a.cert {
                let cert = CertificateFile::load(c)?;
                if cert.digest != roa.certificate_digest {
                    bail!("{} was not computed from {}", p.display(), c.display());
                }
            }
            let v = Polynomial::parse(&roa.lyapunov, &def.space).map_err(|e| anyhow!("lyapunov: {e}"))?;
            Some((v, roa.gamma))
        }
        None => None,
    };
    let n = def.states.len();
    let region = match (&def.region, a.half_width) {
        (_, Some(h)) => BoxRegion::symmetric(&vec![h; n])?,
        (Some(r), None) => r.clone(),
        (None, None) => BoxRegion::symmetric(&vec![1.0; n])?,
    };

    if let Some(z0) = &a.z0 {
        if z0.len() != n {
            bail!("--z0 has {} entries, system has {n} states", z0.len());
        }
        let t = integrate(f, z0, &cfg);
        println!("exit: {} at t = {}", t.exit_reason.as_str(), t.times.last().unwrap());
        println!("final state: {:?}", t.final_state());
        if let Some(csv) = &a.csv {
            write(csv, &trajectory_csv(&t, &names))?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(count) = a.inside {
        let (v, gamma) = level.as_ref().expect("clap enforces --roa");
        let pts = sample_sublevel(&def, v, *gamma, &region, count, a.seed);
        if pts.len() < count {
            bail!("found only {} of {count} states inside the level set", pts.len());
        }
        let res = basin_sample(f, &pts, &cfg);
        let ok = res.iter().filter(|r| **r == ExitReason::Converged).count();
        println!("converged: {ok}/{count}");
        if let Some(csv) = &a.csv {
            write(csv, &basin_csv(&pts, &res, &names))?;
        }
        return Ok(ExitCode::SUCCESS);
    }
    let per_axis = a.grid.unwrap_or(11);
    let pts = region.grid(per_axis);
    let res = basin_sample(f, &pts, &cfg);
    let ok = res.iter().filter(|r| **r == ExitReason::Converged).count();
    let diverged = res.iter().filter(|r| **r == ExitReason::Diverged).count();
    println!("grid: {} points, converged {ok}, diverged {diverged}, horizon {}", pts.len(), pts.len() - ok - diverged);
    if let Some((v, gamma)) = &level {
        let mut inside = 0;
        let mut bad = 0;
        let mut pt = vec![0.0; def.space.len()];
        for (z, r) in pts.iter().zip(&res) {
            for (s, x) in def.states.iter().zip(z) {
                pt[s.index()] = *x;
            }
            if v.eval(&pt) <= *gamma {
                inside += 1;
                if *r != ExitReason::Converged {
                    bad += 1;
                }
            }
        }
        println!("inside level set: {inside} points, {bad} not converged");
    }
    if let Some(csv) = &a.csv {
        write(csv, &basin_csv(&pts, &res, &names))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(a: &CheckArgs) -> Result<ExitCode> {
    let cert = CertificateFile::load(&a.certificate)?;
    let def = load_definition(&a.definition)?;
    if let Some(p) = &a.params {
        if p.len() != def.parameters.len() {
            bail!("{} parameter value(s) given, definition has {}", p.len(), def.parameters.len());
        }
        for (par, x) in def.parameters.iter().zip(p) {
            if *x < par.lower || *x > par.upper {
                bail!("parameter value {x} outside [{}, {}]", par.lower, par.upper);
            }
        }
    }
    let report = check_certificate(&cert, &a.definition, &def, a.n, a.seed, a.params.as_deref())?;
    for l in &report.lines {
        println!("{}: {} ({})", l.name, if l.passed { "pass" } else { "FAIL" }, l.detail);
    }
    if report.passed() {
        println!("certificate verified");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("certificate NOT verified");
        Ok(ExitCode::FAILURE)
    }
}
