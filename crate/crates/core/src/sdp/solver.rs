//! Homogeneous self-dual interior-point method with HKM search direction and
//! Mehrotra predictor-corrector steps.

use faer::linalg::solvers::{DenseSolveCore, Lblt, Llt, Solve};
use faer::{Mat, Side};
use log::debug;

use super::{
    min_eigenvalue, ConicSolution, InfeasibilityCertificate, IterationRecord, Residuals, SdpProblem, SolveStatus,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    /// Threshold on normalized improving-ray residuals.
    pub infeas_tol: f64,
    pub max_iters: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_factor: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { feas_tol: 1e-8, gap_tol: 1e-8, infeas_tol: 1e-8, max_iters: 200, step_factor: 0.95 }
    }
}

/// Block data with symmetric expansion of every entry, grouped by row.
struct BlockOps {
    n: usize,
    /// `(row, [(p, q, a)])`, both triangles present, `a` already row-scaled.
    rows: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

struct Scaled {
    m: usize,
    nf: usize,
    order: usize,
    row_scale: Vec<f64>,
    b: Vec<f64>,
    blocks: Vec<BlockOps>,
    /// `(row, var, value)`, row-scaled.
    free: Vec<(usize, usize, f64)>,
    c: Vec<Mat<f64>>,
    c_free: Vec<f64>,
}

impl Scaled {
    fn new(problem: &SdpProblem, keep: &[usize]) -> Self {
        let m = keep.len();
        let mut row_scale = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        let mut blocks: Vec<BlockOps> =
            problem.block_dims.iter().map(|&n| BlockOps { n, rows: Vec::new() }).collect();
        let mut free = Vec::new();
        for (new_i, &orig) in keep.iter().enumerate() {
            let row = problem.rows[orig].normalized();
            let s = 1.0 / row.norm_sq().sqrt();
            row_scale.push(s);
            b.push(problem.rhs[orig] * s);
            let mut per_block: Vec<Vec<(usize, usize, f64)>> = vec![Vec::new(); blocks.len()];
            for e in &row.entries {
                if e.i == e.j {
                    per_block[e.block].push((e.i, e.i, e.coef * s));
                } else {
                    let a = 0.5 * e.coef * s;
                    per_block[e.block].push((e.i, e.j, a));
                    per_block[e.block].push((e.j, e.i, a));
                }
            }
            for (k, list) in per_block.into_iter().enumerate() {
                if !list.is_empty() {
                    blocks[k].rows.push((new_i, list));
                }
            }
            for (v, c) in &row.free {
                free.push((new_i, *v, c * s));
            }
        }
        let mut c: Vec<Mat<f64>> = problem.block_dims.iter().map(|&n| Mat::zeros(n, n)).collect();
        super::add_form_to_blocks(&mut c, &problem.objective.normalized(), 1.0);
        let mut c_free = vec![0.0; problem.num_free];
        for (v, val) in &problem.objective.free {
            c_free[*v] += val;
        }
        Self {
            m,
            nf: problem.num_free,
            order: problem.cone_order(),
            row_scale,
            b,
            blocks,
            free,
            c,
            c_free,
        }
    }

    /// `A(Z)` for arbitrary (not necessarily symmetric) blocks.
    fn a_op(&self, z: &[Mat<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (blk, zk) in self.blocks.iter().zip(z) {
            for (row, list) in &blk.rows {
                out[*row] += list.iter().map(|&(p, q, a)| a * zk[(p, q)]).sum::<f64>();
            }
        }
        out
    }

    fn a_free(&self, xf: &[f64], out: &mut [f64]) {
        for &(row, v, a) in &self.free {
            out[row] += a * xf[v];
        }
    }

    /// `sum_i y_i A_i`.
    fn at_op(&self, y: &[f64]) -> Vec<Mat<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut z = Mat::zeros(blk.n, blk.n);
                for (row, list) in &blk.rows {
                    for &(p, q, a) in list {
                        z[(p, q)] += a * y[*row];
                    }
                }
                z
            })
            .collect()
    }

    fn aft(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nf];
        for &(row, v, a) in &self.free {
            out[v] += a * y[row];
        }
        out
    }

    fn c_dot(&self, z: &[Mat<f64>]) -> f64 {
        inner(&self.c, z)
    }

    /// Schur complement `M_ij = tr(A_i X A_j S^{-1})`, column-major.
    fn schur(&self, x: &[Mat<f64>], s_inv: &[Mat<f64>]) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for (k, blk) in self.blocks.iter().enumerate() {
            let n = blk.n;
            if n == 0 || blk.rows.is_empty() {
                continue;
            }
            let xv = col_major(&x[k]);
            let sv = col_major(&s_inv[k]);
            let mut h = vec![0.0; n * n];
            for (i, list_i) in &blk.rows {
                // H = S^{-1} A_i X
                h.iter_mut().for_each(|v| *v = 0.0);
                for &(p, q, a) in list_i {
                    let sp = &sv[p * n..(p + 1) * n];
                    for c in 0..n {
                        let f = a * xv[q * n + c];
                        if f != 0.0 {
                            let hc = &mut h[c * n..(c + 1) * n];
                            for (hv, s) in hc.iter_mut().zip(sp) {
                                *hv += f * s;
                            }
                        }
                    }
                }
                let col = &mut out[i * m..(i + 1) * m];
                for (j, list_j) in &blk.rows {
                    col[*j] += list_j.iter().map(|&(r, s, a)| a * h[s + r * n]).sum::<f64>();
                }
            }
        }
        out
    }
}

fn col_major(m: &Mat<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut v = Vec::with_capacity(n * m.ncols());
    for j in 0..m.ncols() {
        for i in 0..n {
            v.push(m[(i, j)]);
        }
    }
    v
}

fn inner(a: &[Mat<f64>], b: &[Mat<f64>]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        for j in 0..x.ncols() {
            for i in 0..x.nrows() {
                acc += x[(i, j)] * y[(i, j)];
            }
        }
    }
    acc
}

fn fro_sq(a: &[Mat<f64>]) -> f64 {
    inner(a, a)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn sym(m: &Mat<f64>) -> Mat<f64> {
    let n = m.nrows();
    Mat::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

fn lincomb(a: &[Mat<f64>], alpha: f64, b: &[Mat<f64>], beta: f64) -> Vec<Mat<f64>> {
    a.iter()
        .zip(b)
        .map(|(x, y)| Mat::from_fn(x.nrows(), x.ncols(), |i, j| alpha * x[(i, j)] + beta * y[(i, j)]))
        .collect()
}

fn scaled_blocks(a: &[Mat<f64>], alpha: f64) -> Vec<Mat<f64>> {
    a.iter().map(|x| Mat::from_fn(x.nrows(), x.ncols(), |i, j| alpha * x[(i, j)])).collect()
}

/// Largest `alpha` with `X + alpha * dX` PSD, given `L` with `X = L L'`.
fn max_step_psd(l: &Mat<f64>, dx: &Mat<f64>) -> f64 {
    let n = l.nrows();
    if n == 0 {
        return f64::INFINITY;
    }
    let mut w = dx.clone();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), w.as_mut(), faer::Par::Seq);
    let mut wt = w.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l.as_ref(), wt.as_mut(), faer::Par::Seq);
    let lam = min_eigenvalue(&sym(&wt));
    if lam.is_nan() {
        0.0
    } else if lam < 0.0 {
        -1.0 / lam
    } else {
        f64::INFINITY
    }
}

fn max_step_scalar(v: f64, dv: f64) -> f64 {
    if dv < 0.0 {
        -v / dv
    } else {
        f64::INFINITY
    }
}

#[derive(Clone)]
struct Iterate {
    x: Vec<Mat<f64>>,
    xf: Vec<f64>,
    y: Vec<f64>,
    s: Vec<Mat<f64>>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: Vec<Mat<f64>>,
    dxf: Vec<f64>,
    dy: Vec<f64>,
    ds: Vec<Mat<f64>>,
    dtau: f64,
    dkappa: f64,
}

/// Factored Newton system `[[M, A_f], [A_f', 0]]` with refinement.
struct KktSystem {
    k: Mat<f64>,
    fact: Lblt<f64>,
}

impl KktSystem {
    fn new(sc: &Scaled, mvals: &[f64]) -> Self {
        let (m, nf) = (sc.m, sc.nf);
        let dim = m + nf;
        let mut k = Mat::zeros(dim, dim);
        for j in 0..m {
            for i in 0..m {
                k[(i, j)] = 0.5 * (mvals[j * m + i] + mvals[i * m + j]);
            }
        }
        for &(row, v, a) in &sc.free {
            k[(row, m + v)] += a;
            k[(m + v, row)] += a;
        }
        let scale = (0..m).map(|i| k[(i, i)].abs()).fold(1.0, f64::max);
        let delta = 1e-13 * scale;
        let mut reg = k.clone();
        for i in 0..dim {
            reg[(i, i)] += if i < m { delta } else { -delta };
        }
        let fact = Lblt::new(reg.as_ref(), Side::Lower);
        Self { k, fact }
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let dim = rhs.len();
        let r = Mat::from_fn(dim, 1, |i, _| rhs[i]);
        let mut x = self.fact.solve(&r);
        for _ in 0..3 {
            let kx = &self.k * &x;
            let res = Mat::from_fn(dim, 1, |i, _| r[(i, 0)] - kx[(i, 0)]);
            let corr = self.fact.solve(&res);
            for i in 0..dim {
                x[(i, 0)] += corr[(i, 0)];
            }
        }
        (0..dim).map(|i| x[(i, 0)]).collect()
    }
}

/// Per-iteration quantities shared by predictor and corrector.
struct Newton<'a> {
    sc: &'a Scaled,
    it: &'a Iterate,
    s_inv: Vec<Mat<f64>>,
    kkt: KktSystem,
    p: Vec<f64>,
    d: Vec<Mat<f64>>,
    d_free: Vec<f64>,
    g: f64,
    a_c: Vec<f64>,
    c_xc: f64,
    a_xd: Vec<f64>,
    c_xd: f64,
    v: Vec<f64>,
}

impl Newton<'_> {
    fn direction(&self, r_c: &[Mat<f64>], rc_tau: f64, eta: f64) -> Direction {
        let sc = self.sc;
        let (m, nf) = (sc.m, sc.nf);
        let a_rc = sc.a_op(r_c);
        let mut rhs = vec![0.0; m + nf];
        for i in 0..m {
            rhs[i] = a_rc[i] + eta * self.a_xd[i] - eta * self.p[i];
        }
        for v in 0..nf {
            rhs[m + v] = eta * self.d_free[v];
        }
        let u = self.kkt.solve(&rhs);
        let v = &self.v;
        let tau = self.it.tau;
        let kappa = self.it.kappa;
        let acb: Vec<f64> = self.a_c.iter().zip(&sc.b).map(|(a, b)| a + b).collect();
        let num = -eta * self.g - sc.c_dot(r_c) - eta * self.c_xd
            + dot(&acb, &u[..m])
            + dot(&sc.c_free, &u[m..])
            + rc_tau / tau;
        let den = self.c_xc - dot(&acb, &v[..m]) - dot(&sc.c_free, &v[m..]) + kappa / tau;
        let dtau = num / den;
        let dy: Vec<f64> = (0..m).map(|i| u[i] + dtau * v[i]).collect();
        let dxf: Vec<f64> = (0..nf).map(|j| -(u[m + j] + dtau * v[m + j])).collect();
        let dkappa = (rc_tau - kappa * dtau) / tau;
        let aty = sc.at_op(&dy);
        let ds: Vec<Mat<f64>> = aty
            .iter()
            .zip(&sc.c)
            .zip(&self.d)
            .map(|((a, c), d)| Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] - dtau * c[(i, j)] - eta * d[(i, j)]))
            .collect();
        let dx: Vec<Mat<f64>> = r_c
            .iter()
            .zip(&self.it.x)
            .zip(&ds)
            .zip(&self.s_inv)
            .map(|(((rc, x), ds), si)| {
                let t = sym(&(&(x * ds) * si));
                Mat::from_fn(rc.nrows(), rc.ncols(), |i, j| rc[(i, j)] - t[(i, j)])
            })
            .collect();
        Direction { dx, dxf, dy, ds, dtau, dkappa }
    }
}

fn step_length(it: &Iterate, lx: &[Mat<f64>], ls: &[Mat<f64>], dir: &Direction) -> f64 {
    let mut a = max_step_scalar(it.tau, dir.dtau).min(max_step_scalar(it.kappa, dir.dkappa));
    for (l, d) in lx.iter().zip(&dir.dx) {
        a = a.min(max_step_psd(l, d));
    }
    for (l, d) in ls.iter().zip(&dir.ds) {
        a = a.min(max_step_psd(l, d));
    }
    a
}

fn cholesky_factors(blocks: &[Mat<f64>]) -> Option<Vec<Mat<f64>>> {
    blocks
        .iter()
        .map(|b| {
            if b.nrows() == 0 {
                return Some(Mat::zeros(0, 0));
            }
            b.llt(Side::Lower).ok().map(|f| f.L().to_owned())
        })
        .collect()
}

fn inverses(blocks: &[Mat<f64>]) -> Option<Vec<Mat<f64>>> {
    blocks
        .iter()
        .map(|b| {
            if b.nrows() == 0 {
                return Some(Mat::zeros(0, 0));
            }
            let f: Llt<f64> = b.llt(Side::Lower).ok()?;
            Some(sym(&f.inverse()))
        })
        .collect()
}

/// Relative residuals and objectives of a candidate primal-dual point on the
/// original problem.
pub(crate) fn measure(
    problem: &SdpProblem,
    x: &[Mat<f64>],
    xf: &[f64],
    y: &[f64],
    s: &[Mat<f64>],
) -> (Residuals, f64, f64) {
    let ax = problem.apply(x, xf);
    let pr: Vec<f64> = ax.iter().zip(&problem.rhs).map(|(a, b)| a - b).collect();
    let primal = norm(&pr) / (1.0 + norm(&problem.rhs));
    let slack = problem.dual_slack(y);
    let dres = lincomb(&slack, 1.0, s, -1.0);
    let fr = problem.free_residual(y);
    let c_norm = problem.objective.normalized().norm_sq().sqrt();
    let dual = (fro_sq(&dres) + dot(&fr, &fr)).sqrt() / (1.0 + c_norm);
    let pobj = problem.objective.evaluate(x, xf);
    let dobj = dot(&problem.rhs, y);
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
    (Residuals { primal, dual, gap }, pobj, dobj)
}

/// Solves `problem` from the canonical start `X = S = I`, `y = 0`,
/// `tau = kappa = 1`. Deterministic for fixed input.
pub fn solve(problem: &SdpProblem, opts: &SolverOptions) -> ConicSolution {
    let dims = &problem.block_dims;
    let zero_blocks = || -> Vec<Mat<f64>> { dims.iter().map(|&n| Mat::zeros(n, n)).collect() };

    // presolve: empty rows are either redundant or a direct contradiction
    let mut keep = Vec::new();
    for (i, row) in problem.rows.iter().enumerate() {
        if !row.normalized().is_empty() {
            keep.push(i);
        } else if problem.rhs[i] != 0.0 {
            let mut ray = vec![0.0; problem.rows.len()];
            ray[i] = -1.0 / problem.rhs[i];
            debug!("row {i} has no coefficients but rhs {}; primal infeasible", problem.rhs[i]);
            return ConicSolution {
                status: SolveStatus::PrimalInfeasible,
                x: zero_blocks(),
                x_free: vec![0.0; problem.num_free],
                y: ray.clone(),
                s: zero_blocks(),
                primal_objective: f64::NAN,
                dual_objective: f64::NAN,
                iterations: 0,
                residuals: Residuals { primal: f64::INFINITY, dual: f64::NAN, gap: f64::NAN },
                certificate: Some(InfeasibilityCertificate::Primal { y: ray }),
                trace: Vec::new(),
            };
        }
    }
    let sc = Scaled::new(problem, &keep);
    let m = sc.m;
    let nf = sc.nf;
    let nu = (sc.order + 1) as f64;

    let identity = || -> Vec<Mat<f64>> { dims.iter().map(|&n| Mat::identity(n, n)).collect() };
    let mut it = Iterate { x: identity(), xf: vec![0.0; nf], y: vec![0.0; m], s: identity(), tau: 1.0, kappa: 1.0 };

    let b_norm = norm(&problem.rhs);
    let c_norm = problem.objective.normalized().norm_sq().sqrt();
    let mut trace = Vec::new();
    let mut status = SolveStatus::Stalled;
    let mut certificate = None;
    let mut iterations = 0;
    let mu0 = (inner(&it.x, &it.s) + it.tau * it.kappa) / nu;
    // fallback when the iterations stall after their best point
    let mut best: Option<(f64, Iterate)> = None;

    let unscale = |it: &Iterate| -> (Vec<Mat<f64>>, Vec<f64>, Vec<f64>, Vec<Mat<f64>>) {
        let inv = 1.0 / it.tau;
        let mut y_full = vec![0.0; problem.rows.len()];
        for (k, &orig) in keep.iter().enumerate() {
            y_full[orig] = it.y[k] * sc.row_scale[k] * inv;
        }
        (
            scaled_blocks(&it.x, inv),
            it.xf.iter().map(|v| v * inv).collect(),
            y_full,
            scaled_blocks(&it.s, inv),
        )
    };

    loop {
        // residuals of the embedding
        let mut ax = sc.a_op(&it.x);
        sc.a_free(&it.xf, &mut ax);
        let p: Vec<f64> = (0..m).map(|i| sc.b[i] * it.tau - ax[i]).collect();
        let aty = sc.at_op(&it.y);
        let d: Vec<Mat<f64>> = (0..dims.len())
            .map(|k| {
                let (c, s, a) = (&sc.c[k], &it.s[k], &aty[k]);
                Mat::from_fn(dims[k], dims[k], |i, j| c[(i, j)] * it.tau + s[(i, j)] - a[(i, j)])
            })
            .collect();
        let d_free: Vec<f64> = {
            let af = sc.aft(&it.y);
            (0..nf).map(|v| sc.c_free[v] * it.tau - af[v]).collect()
        };
        let pc = sc.c_dot(&it.x) + dot(&sc.c_free, &it.xf);
        let by = dot(&sc.b, &it.y);
        let g = pc - by - it.kappa;
        let mu = (inner(&it.x, &it.s) + it.tau * it.kappa) / nu;

        let p_orig: Vec<f64> = p.iter().zip(&sc.row_scale).map(|(v, s)| v / s).collect();
        let dual_raw = (fro_sq(&d) + dot(&d_free, &d_free)).sqrt();
        let res = Residuals {
            primal: norm(&p_orig) / it.tau / (1.0 + b_norm),
            dual: dual_raw / it.tau / (1.0 + c_norm),
            gap: (pc - by).abs() / it.tau / (1.0 + (pc.abs() + by.abs()) / it.tau),
        };
        let record = IterationRecord {
            iteration: iterations,
            mu,
            tau: it.tau,
            kappa: it.kappa,
            step: 0.0,
            sigma: 0.0,
            residuals: res,
            primal_objective: pc / it.tau,
            dual_objective: by / it.tau,
        };
        debug!(
            "it {:3} mu {:.3e} tau {:.3e} kappa {:.3e} pres {:.2e} dres {:.2e} gap {:.2e} pobj {:.8e}",
            iterations, mu, it.tau, it.kappa, res.primal, res.dual, res.gap, pc / it.tau
        );
        let merit = res.primal.max(res.dual).max(res.gap);
        if it.tau > 0.0 && best.as_ref().is_none_or(|(m, _)| merit < *m) {
            best = Some((merit, it.clone()));
        }
        if cfg!(debug_assertions) && it.tau > 0.0 {
            // weak duality up to the embedding residuals
            let slack = (dot(&it.y, &p).abs() + dot(&it.xf, &d_free).abs() + inner(&it.x, &d).abs())
                / (it.tau * it.tau);
            let lhs = pc / it.tau - by / it.tau;
            debug_assert!(
                lhs <= slack + 1e-9 * (1.0 + lhs.abs() + slack),
                "weak duality violated: pobj - dobj = {lhs}, slack {slack}"
            );
        }

        if res.primal <= opts.feas_tol && res.dual <= opts.feas_tol && res.gap <= opts.gap_tol {
            let (x, xf, y, s) = unscale(&it);
            let (r, _, _) = measure(problem, &x, &xf, &y, &s);
            if r.primal <= opts.feas_tol && r.dual <= opts.feas_tol && r.gap <= opts.gap_tol {
                status = SolveStatus::Optimal;
                trace.push(record);
                break;
            }
        }
        if by < 0.0 {
            let scale = -by;
            // divide before squaring: y and S may be tiny enough to underflow
            let cd: Vec<Mat<f64>> = lincomb(&sc.c, it.tau / scale, &d, -1.0 / scale);
            let cf: Vec<f64> = (0..nf).map(|v| (sc.c_free[v] * it.tau - d_free[v]) / scale).collect();
            let ray_res = (fro_sq(&cd) + dot(&cf, &cf)).sqrt();
            if ray_res <= opts.infeas_tol {
                let mut y_full = vec![0.0; problem.rows.len()];
                for (k, &orig) in keep.iter().enumerate() {
                    y_full[orig] = it.y[k] * sc.row_scale[k] / scale;
                }
                certificate = Some(InfeasibilityCertificate::Primal { y: y_full });
                status = SolveStatus::PrimalInfeasible;
                trace.push(record);
                break;
            }
        }
        if pc > 0.0 {
            let axo: Vec<f64> = ax.iter().zip(&sc.row_scale).map(|(v, s)| v / s / pc).collect();
            if norm(&axo) <= opts.infeas_tol {
                certificate = Some(InfeasibilityCertificate::Dual {
                    x: scaled_blocks(&it.x, 1.0 / pc),
                    x_free: it.xf.iter().map(|v| v / pc).collect(),
                });
                status = SolveStatus::DualInfeasible;
                trace.push(record);
                break;
            }
        }
        if mu <= 1e-24 * mu0 {
            debug!("complementarity exhausted with residuals left");
            trace.push(record);
            break;
        }
        if iterations >= opts.max_iters {
            debug!("iteration limit reached");
            trace.push(record);
            break;
        }

        // factorizations
        let (Some(lx), Some(ls), Some(s_inv)) =
            (cholesky_factors(&it.x), cholesky_factors(&it.s), inverses(&it.s))
        else {
            debug!("lost positive definiteness");
            trace.push(record);
            break;
        };
        let mvals = sc.schur(&it.x, &s_inv);
        let kkt = KktSystem::new(&sc, &mvals);
        let xcs: Vec<Mat<f64>> = (0..dims.len()).map(|k| &(&it.x[k] * &sc.c[k]) * &s_inv[k]).collect();
        let xds: Vec<Mat<f64>> = (0..dims.len()).map(|k| &(&it.x[k] * &d[k]) * &s_inv[k]).collect();
        let a_c = sc.a_op(&xcs);
        let mut t = vec![0.0; m + nf];
        for i in 0..m {
            t[i] = a_c[i] - sc.b[i];
        }
        t[m..].copy_from_slice(&sc.c_free);
        let v = kkt.solve(&t);
        let newton = Newton {
            sc: &sc,
            it: &it,
            c_xc: sc.c_dot(&xcs),
            a_xd: sc.a_op(&xds),
            c_xd: sc.c_dot(&xds),
            s_inv,
            kkt,
            p,
            d,
            d_free,
            g,
            a_c,
            v,
        };

        // predictor
        let r_aff = scaled_blocks(&it.x, -1.0);
        let aff = newton.direction(&r_aff, -it.tau * it.kappa, 1.0);
        let a_aff = step_length(&it, &lx, &ls, &aff).min(1.0);
        let x_a = lincomb(&it.x, 1.0, &aff.dx, a_aff);
        let s_a = lincomb(&it.s, 1.0, &aff.ds, a_aff);
        let mu_aff =
            (inner(&x_a, &s_a) + (it.tau + a_aff * aff.dtau) * (it.kappa + a_aff * aff.dkappa)) / nu;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // corrector
        let r_c: Vec<Mat<f64>> = (0..dims.len())
            .map(|k| {
                let second = sym(&(&(&aff.dx[k] * &aff.ds[k]) * &newton.s_inv[k]));
                let (si, x) = (&newton.s_inv[k], &it.x[k]);
                Mat::from_fn(dims[k], dims[k], |i, j| sigma * mu * si[(i, j)] - x[(i, j)] - second[(i, j)])
            })
            .collect();
        let rc_tau = sigma * mu - it.tau * it.kappa - aff.dtau * aff.dkappa;
        let dir = newton.direction(&r_c, rc_tau, 1.0 - sigma);
        let a_max = step_length(&it, &lx, &ls, &dir);
        let alpha = (opts.step_factor * a_max).min(1.0);
        trace.push(IterationRecord { step: alpha, sigma, ..record });
        if !(alpha > 1e-10) {
            debug!("step length collapsed ({alpha:e})");
            break;
        }
        it.x = lincomb(&it.x, 1.0, &dir.dx, alpha).iter().map(sym).collect();
        it.s = lincomb(&it.s, 1.0, &dir.ds, alpha).iter().map(sym).collect();
        for (a, b) in it.xf.iter_mut().zip(&dir.dxf) {
            *a += alpha * b;
        }
        for (a, b) in it.y.iter_mut().zip(&dir.dy) {
            *a += alpha * b;
        }
        it.tau += alpha * dir.dtau;
        it.kappa += alpha * dir.dkappa;
        iterations += 1;
    }

    if status == SolveStatus::Stalled {
        if let Some((merit, b)) = best {
            debug!("falling back to the best iterate (merit {merit:e})");
            it = b;
        }
    }
    let (mut x, mut x_free, y, s) = unscale(&it);
    let (mut residuals, mut pobj, dobj) = measure(problem, &x, &x_free, &y, &s);
    if status == SolveStatus::Stalled && residuals.primal > opts.feas_tol && it.tau > 0.0 {
        if let Some((px, pf)) = polish_primal(problem, &x, &x_free, opts.feas_tol) {
            let (r, po, _) = measure(problem, &px, &pf, &y, &s);
            debug!("primal polish: residual {:e} -> {:e}", residuals.primal, r.primal);
            if r.primal <= opts.feas_tol {
                (x, x_free, residuals, pobj) = (px, pf, r, po);
            }
        }
    }
    if status == SolveStatus::Stalled && residuals.primal <= opts.feas_tol {
        status = SolveStatus::Feasible;
    }
    ConicSolution {
        status,
        x,
        x_free,
        y,
        s,
        primal_objective: pobj,
        dual_objective: dobj,
        iterations,
        residuals,
        certificate,
        trace,
    }
}

/// Minimum-norm correction of `(X, x_f)` onto `A(X) + A_f x_f = b`.
/// Returns `None` when the corrected matrix leaves the PSD cone by more than `tol`.
fn polish_primal(problem: &SdpProblem, x: &[Mat<f64>], xf: &[f64], tol: f64) -> Option<(Vec<Mat<f64>>, Vec<f64>)> {
    use std::collections::HashMap;
    let m = problem.rows.len();
    let rows: Vec<_> = problem.rows.iter().map(|r| r.normalized()).collect();
    // columns: upper-triangle Gram entries, then free variables
    let mut cols: HashMap<(usize, usize, usize), Vec<(usize, f64)>> = HashMap::new();
    let mut free_cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); problem.num_free];
    for (r, row) in rows.iter().enumerate() {
        for e in &row.entries {
            let (i, j) = if e.i <= e.j { (e.i, e.j) } else { (e.j, e.i) };
            cols.entry((e.block, i, j)).or_default().push((r, e.coef));
        }
        for &(v, c) in &row.free {
            free_cols[v].push((r, c));
        }
    }
    let mut g = Mat::<f64>::zeros(m, m);
    for col in cols.values().chain(free_cols.iter()) {
        for &(a, ca) in col {
            for &(b, cb) in col {
                g[(a, b)] += ca * cb;
            }
        }
    }
    let ax = problem.apply(x, xf);
    let r = Mat::from_fn(m, 1, |i, _| problem.rhs[i] - ax[i]);
    let scale = (0..m).map(|i| g[(i, i)]).fold(0.0, f64::max).max(1.0);
    for i in 0..m {
        g[(i, i)] += 1e-14 * scale;
    }
    let Ok(fact) = g.llt(Side::Lower) else {
        debug!("primal polish: normal equations not positive definite");
        return None;
    };
    let w = fact.solve(&r);
    let mut px: Vec<Mat<f64>> = x.to_vec();
    for (&(b, i, j), col) in &cols {
        let d: f64 = col.iter().map(|&(row, c)| c * w[(row, 0)]).sum();
        px[b][(i, j)] += d;
        if i != j {
            px[b][(j, i)] += d;
        }
    }
    let mut pf = xf.to_vec();
    for (v, col) in free_cols.iter().enumerate() {
        pf[v] += col.iter().map(|&(row, c)| c * w[(row, 0)]).sum::<f64>();
    }
    let worst = px.iter().filter(|b| b.nrows() > 0).map(min_eigenvalue).fold(f64::INFINITY, f64::min);
    if worst < -tol {
        debug!("primal polish leaves the cone: min eigenvalue {worst:e}");
        return None;
    }
    Some((px, pf))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub residuals: Residuals,
    pub min_eig_x: Vec<f64>,
    /// Smallest eigenvalues of the recomputed dual slack `A*(y) - C`.
    pub min_eig_dual_slack: Vec<f64>,
    pub issues: Vec<String>,
}

impl ValidationReport {
    pub fn consistent(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Recomputes residuals and eigenvalue floors independently of the solver
/// and checks them against the claimed status.
pub fn validate(problem: &SdpProblem, sol: &ConicSolution, opts: &SolverOptions) -> ValidationReport {
    let (residuals, _, _) = measure(problem, &sol.x, &sol.x_free, &sol.y, &sol.s);
    let min_eig_x: Vec<f64> = sol.x.iter().map(min_eigenvalue).collect();
    let slack = problem.dual_slack(&sol.y);
    let min_eig_dual_slack: Vec<f64> = slack.iter().map(min_eigenvalue).collect();
    let c_norm = problem.objective.normalized().norm_sq().sqrt();
    let mut issues = Vec::new();
    let x_psd = |issues: &mut Vec<String>, tol: f64| {
        for (k, e) in min_eig_x.iter().enumerate() {
            if !(*e >= -tol) {
                issues.push(format!("block {k}: min eigenvalue {e:e} below -{tol:e}"));
            }
        }
    };
    match sol.status {
        SolveStatus::Optimal | SolveStatus::Feasible => {
            if !(residuals.primal <= opts.feas_tol) {
                issues.push(format!("primal residual {:e} exceeds {:e}", residuals.primal, opts.feas_tol));
            }
            x_psd(&mut issues, opts.feas_tol);
            if sol.status == SolveStatus::Optimal {
                if !(residuals.dual <= opts.feas_tol) {
                    issues.push(format!("dual residual {:e} exceeds {:e}", residuals.dual, opts.feas_tol));
                }
                if !(residuals.gap <= opts.gap_tol) {
                    issues.push(format!("duality gap {:e} exceeds {:e}", residuals.gap, opts.gap_tol));
                }
                let floor = -opts.feas_tol * (1.0 + c_norm);
                for (k, e) in min_eig_dual_slack.iter().enumerate() {
                    if !(*e >= floor) {
                        issues.push(format!("dual slack block {k}: min eigenvalue {e:e}"));
                    }
                }
            }
        }
        SolveStatus::PrimalInfeasible => match &sol.certificate {
            Some(InfeasibilityCertificate::Primal { y }) => {
                let by = dot(&problem.rhs, y);
                if !((by + 1.0).abs() <= 1e-9) {
                    issues.push(format!("certificate has b'y = {by}, expected -1"));
                }
                let mut ray = problem.dual_slack(y);
                super::add_form_to_blocks(&mut ray, &problem.objective, 1.0);
                for (k, blk) in ray.iter().enumerate() {
                    let e = min_eigenvalue(blk);
                    if !(e >= -opts.infeas_tol) {
                        issues.push(format!("certificate block {k}: A*(y) min eigenvalue {e:e}"));
                    }
                }
                let mut fr = problem.free_residual(y);
                for (v, c) in &problem.objective.free {
                    fr[*v] += c;
                }
                if !(norm(&fr) <= opts.infeas_tol) {
                    issues.push(format!("certificate free residual {:e}", norm(&fr)));
                }
            }
            _ => issues.push("primal infeasibility claimed without a dual ray".into()),
        },
        SolveStatus::DualInfeasible => match &sol.certificate {
            Some(InfeasibilityCertificate::Dual { x, x_free }) => {
                let obj = problem.objective.evaluate(x, x_free);
                if !((obj - 1.0).abs() <= 1e-9) {
                    issues.push(format!("certificate objective {obj}, expected 1"));
                }
                let ax = problem.apply(x, x_free);
                if !(norm(&ax) <= opts.infeas_tol) {
                    issues.push(format!("certificate residual {:e}", norm(&ax)));
                }
                for (k, blk) in x.iter().enumerate() {
                    let e = min_eigenvalue(blk);
                    if !(e >= -opts.infeas_tol) {
                        issues.push(format!("certificate block {k}: min eigenvalue {e:e}"));
                    }
                }
            }
            _ => issues.push("dual infeasibility claimed without a primal ray".into()),
        },
        SolveStatus::Stalled => {}
    }
    ValidationReport { residuals, min_eig_x, min_eig_dual_slack, issues }
}
