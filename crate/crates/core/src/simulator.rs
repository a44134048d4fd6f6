//! Fixed-step RK4 simulation of the true closed loop, basin sampling and
//! certificate sampling.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::definition::{SimulateConfig, SystemDefinition};
use crate::nn::BoxRegion;
use crate::poly::Polynomial;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub step: f64,
    pub horizon: f64,
    pub convergence_radius: f64,
    /// `|z|` above this (or non-finite) counts as divergence.
    pub blowup: f64,
    /// Consecutive steps inside the convergence ball required.
    pub settle_steps: usize,
    /// Store every n-th state; 0 keeps only the endpoints.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::from(&SimulateConfig::default())
    }
}

impl From<&SimulateConfig> for SimConfig {
    fn from(c: &SimulateConfig) -> Self {
        Self {
            step: c.step,
            horizon: c.horizon,
            convergence_radius: c.convergence_radius,
            blowup: 1e6,
            settle_steps: 50,
            record_every: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExitReason {
    Converged,
    Horizon,
    Diverged,
}

impl ExitReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ExitReason::Converged => "converged",
            ExitReason::Horizon => "horizon",
            ExitReason::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub exit_reason: ExitReason,
}

impl Trajectory {
    pub fn converged(&self) -> bool {
        self.exit_reason == ExitReason::Converged
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory holds the initial state")
    }
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn axpy(z: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    z.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

/// One classical RK4 step.
pub fn rk4_step(f: &impl Fn(&[f64]) -> Vec<f64>, z: &[f64], h: f64) -> Vec<f64> {
    let k1 = f(z);
    let k2 = f(&axpy(z, 0.5 * h, &k1));
    let k3 = f(&axpy(z, 0.5 * h, &k2));
    let k4 = f(&axpy(z, h, &k3));
    (0..z.len()).map(|i| z[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Integrates `z' = f(z)` from `z0` until convergence, divergence or the
/// horizon.
pub fn integrate(f: impl Fn(&[f64]) -> Vec<f64>, z0: &[f64], cfg: &SimConfig) -> Trajectory {
    assert!(cfg.step > 0.0 && cfg.horizon >= cfg.step, "invalid step/horizon");
    let n_steps = (cfg.horizon / cfg.step).round() as usize;
    let mut times = vec![0.0];
    let mut states = vec![z0.to_vec()];
    let mut z = z0.to_vec();
    let mut inside = 0usize;
    let mut reason = ExitReason::Horizon;
    let mut last = 0usize;
    for i in 1..=n_steps {
        z = rk4_step(&f, &z, cfg.step);
        last = i;
        let r = norm(&z);
        if !r.is_finite() || r > cfg.blowup {
            reason = ExitReason::Diverged;
            break;
        }
        inside = if r <= cfg.convergence_radius { inside + 1 } else { 0 };
        if inside >= cfg.settle_steps {
            reason = ExitReason::Converged;
            break;
        }
        if cfg.record_every > 0 && i % cfg.record_every == 0 {
            times.push(i as f64 * cfg.step);
            states.push(z.clone());
        }
    }
    if times.len() == 1 || *times.last().unwrap() != last as f64 * cfg.step {
        times.push(last as f64 * cfg.step);
        states.push(z);
    }
    Trajectory { times, states, exit_reason: reason }
}

/// Runs `work` over `items` on all cores, preserving input order.
fn par_map<T: Sync, R: Send>(items: &[T], work: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> =
            items.chunks(chunk).map(|c| s.spawn(|| c.iter().map(&work).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Classifies every initial state; the result follows the input order.
pub fn basin_sample(
    f: impl Fn(&[f64]) -> Vec<f64> + Sync,
    points: &[Vec<f64>],
    cfg: &SimConfig,
) -> Vec<ExitReason> {
    let cfg = SimConfig { record_every: 0, ..*cfg };
    par_map(points, |z0| integrate(&f, z0, &cfg).exit_reason)
}

/// Closed-loop right-hand side of a definition at fixed parameter values.
pub fn closed_loop_fn(def: &SystemDefinition, params: Vec<f64>) -> impl Fn(&[f64]) -> Vec<f64> + Sync + '_ {
    move |z: &[f64]| def.closed_loop(z, &params)
}

/// How uncertain parameters are chosen while sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamSampling {
    Nominal,
    Uniform,
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub samples: usize,
    pub seed: u64,
    /// Smallest `V - eps |z|^2 (1 - 1e-6)`.
    pub worst_positivity: f64,
    /// Largest `grad V . f - 1e-6 (1 + |z|^2)`.
    pub worst_derivative: f64,
    pub positivity_violations: usize,
    pub derivative_violations: usize,
    pub violations: usize,
    pub passed: bool,
}

impl SoundnessReport {
    pub fn summary(&self) -> String {
        format!(
            "{} samples: {} positivity violation(s) (worst margin {:e}), {} derivative violation(s) (worst excess {:e})",
            self.samples,
            self.positivity_violations,
            self.worst_positivity,
            self.derivative_violations,
            self.worst_derivative
        )
    }
}

/// Checks `V >= eps |z|^2` and `grad V . f <= 0` (with the fixed tolerances)
/// at `n` random states under the true dynamics.
pub fn sample_certificate(
    def: &SystemDefinition,
    v: &Polynomial,
    epsilon: f64,
    region: &BoxRegion,
    params: &ParamSampling,
    n: usize,
    seed: u64,
) -> SoundnessReport {
    let grad: Vec<Polynomial> = def.states.iter().map(|&z| v.differentiate(z)).collect();
    let width = def.space.len().max(v.variables().iter().map(|x| x.index() + 1).max().unwrap_or(0));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SoundnessReport {
        samples: n,
        seed,
        worst_positivity: f64::INFINITY,
        worst_derivative: f64::NEG_INFINITY,
        positivity_violations: 0,
        derivative_violations: 0,
        violations: 0,
        passed: true,
    };
    for _ in 0..n {
        let z = region.sample(&mut rng);
        let p: Vec<f64> = match params {
            ParamSampling::Nominal => def.nominal_parameters(),
            ParamSampling::Uniform => def
                .parameters
                .iter()
                .map(|p| if p.lower < p.upper { rng.gen_range(p.lower..=p.upper) } else { p.lower })
                .collect(),
            ParamSampling::Fixed(v) => v.clone(),
        };
        let mut pt = vec![0.0; width];
        for (s, x) in def.states.iter().zip(&z) {
            pt[s.index()] = *x;
        }
        let r2: f64 = z.iter().map(|x| x * x).sum();
        let pos = v.eval(&pt) - epsilon * r2 * (1.0 - 1e-6);
        let f = def.closed_loop(&z, &p);
        let vdot: f64 = grad.iter().zip(&f).map(|(g, fi)| g.eval(&pt) * fi).sum();
        let der = vdot - 1e-6 * (1.0 + r2);
        report.worst_positivity = report.worst_positivity.min(pos);
        report.worst_derivative = report.worst_derivative.max(der);
        if !(pos >= 0.0) {
            report.positivity_violations += 1;
        }
        if !(der <= 0.0) {
            report.derivative_violations += 1;
        }
    }
    if n == 0 {
        report.worst_positivity = 0.0;
        report.worst_derivative = 0.0;
    }
    report.violations = report.positivity_violations + report.derivative_violations;
    report.passed = report.violations == 0;
    report
}

fn state_point(def: &SystemDefinition, z: &[f64]) -> Vec<f64> {
    let mut pt = vec![0.0; def.space.len()];
    for (s, x) in def.states.iter().zip(z) {
        pt[s.index()] = *x;
    }
    pt
}

/// Rejection sample of `{V <= gamma}` inside a box.
pub fn sample_sublevel(
    def: &SystemDefinition,
    v: &Polynomial,
    gamma: f64,
    region: &BoxRegion,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n && tries < 1000 * n.max(1) {
        tries += 1;
        let z = region.sample(&mut rng);
        if v.eval(&state_point(def, &z)) <= gamma {
            out.push(z);
        }
    }
    out
}

/// Monte Carlo estimate of the fraction of `region` inside `{V <= gamma}`.
pub fn sublevel_fraction(def: &SystemDefinition, v: &Polynomial, gamma: f64, region: &BoxRegion, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inside = (0..n).filter(|_| v.eval(&state_point(def, &region.sample(&mut rng))) <= gamma).count();
    inside as f64 / n.max(1) as f64
}

/// Points on `{V = gamma}` along rays from the origin: evenly spaced angles
/// in two dimensions, random directions otherwise. Rays that leave `region`
/// first are clipped to its boundary.
pub fn level_set_points(
    def: &SystemDefinition,
    v: &Polynomial,
    gamma: f64,
    region: &BoxRegion,
    n: usize,
    seed: u64,
) -> Vec<Vec<f64>> {
    let dim = def.states.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let dir: Vec<f64> = if dim == 2 {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            vec![a.cos(), a.sin()]
        } else {
            let d: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l = norm(&d).max(1e-12);
            d.into_iter().map(|x| x / l).collect()
        };
        // largest t keeping t*dir in the box
        let t_box = dir
            .iter()
            .zip(region.lower.iter().zip(&region.upper))
            .map(|(d, (lo, hi))| if *d > 0.0 { hi / d } else if *d < 0.0 { lo / d } else { f64::INFINITY })
            .fold(f64::INFINITY, f64::min);
        let at = |t: f64| v.eval(&state_point(def, &dir.iter().map(|d| d * t).collect::<Vec<_>>()));
        let steps = 200;
        let mut hit = t_box;
        let mut prev = 0.0;
        for s in 1..=steps {
            let t = t_box * s as f64 / steps as f64;
            if at(t) > gamma {
                let (mut a, mut b) = (prev, t);
                for _ in 0..60 {
                    let m = 0.5 * (a + b);
                    if at(m) > gamma {
                        b = m;
                    } else {
                        a = m;
                    }
                }
                hit = a;
                break;
            }
            prev = t;
        }
        out.push(dir.iter().map(|d| d * hit).collect());
    }
    out
}

pub fn trajectory_csv(traj: &Trajectory, names: &[String]) -> String {
    let mut s = String::from("t");
    for n in names {
        write!(s, ",{n}").unwrap();
    }
    s.push('\n');
    for (t, z) in traj.times.iter().zip(&traj.states) {
        write!(s, "{t}").unwrap();
        for x in z {
            write!(s, ",{x}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn basin_csv(points: &[Vec<f64>], results: &[ExitReason], names: &[String]) -> String {
    let mut s = names.join(",");
    s.push_str(",converged,exit\n");
    for (z, r) in points.iter().zip(results) {
        for x in z {
            write!(s, "{x},").unwrap();
        }
        writeln!(s, "{},{}", u8::from(*r == ExitReason::Converged), r.as_str()).unwrap();
    }
    s
}

pub fn points_csv(points: &[Vec<f64>], names: &[String]) -> String {
    let mut s = names.join(",");
    s.push('\n');
    for z in points {
        let row: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}
