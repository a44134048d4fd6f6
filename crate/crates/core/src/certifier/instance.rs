use std::collections::{BTreeMap, BTreeSet};

use log::{debug, info};

use super::CertifyError;
use crate::abstraction::{
    network_constraints, recast_alpha, recast_sector_constraint, region_constraints, robustness_constraint,
    saturation_constraints, Constraint, NetworkVars, RegionSpec, SemialgebraicSet, Tag,
};
use crate::definition::{CertifyConfig, MultiplierVars, SystemDefinition};
use crate::nn::{BoxRegion, IbpBounds};
use crate::poly::{Monomial, Polynomial, VarId, VariableSpace};
use crate::sos::{monomials_up_to, BasisOptions, LinExpr, LinPoly, SosProgram};

/// One closed-loop abstraction over a fixed region.
#[derive(Debug, Clone)]
pub struct Instance {
    pub space: VariableSpace,
    pub states: Vec<VarId>,
    /// Uncertain parameters with a proper interval.
    pub params: Vec<VarId>,
    pub vars: NetworkVars,
    /// Abstraction before definitions are eliminated.
    pub raw: SemialgebraicSet,
    /// Abstraction after elimination; the program is built from this.
    pub set: SemialgebraicSet,
    pub dynamics: Vec<Polynomial>,
    pub region: Option<BoxRegion>,
    pub bounds: Option<IbpBounds>,
}

/// `max |f(0, pi(0))|` over the nominal and extreme parameter values.
pub fn equilibrium_residual(def: &SystemDefinition) -> f64 {
    let zero = vec![0.0; def.states.len()];
    let mut corners = vec![def.nominal_parameters()];
    for i in 0..def.parameters.len() {
        for end in [def.parameters[i].lower, def.parameters[i].upper] {
            let mut p = def.nominal_parameters();
            p[i] = end;
            corners.push(p);
        }
    }
    corners
        .iter()
        .map(|p| def.closed_loop(&zero, p).iter().map(|f| f.abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max)
}

pub fn build_instance(
    def: &SystemDefinition,
    region: Option<&BoxRegion>,
    cfg: &CertifyConfig,
) -> Result<Instance, CertifyError> {
    let mut space = def.space.clone();
    let out_names: Vec<String> = def.inputs.iter().map(|&u| format!("{}_nn", def.space.name(u))).collect();
    let vars = NetworkVars::register(&mut space, &def.network, &def.states, &out_names)?;
    let sid = space.id();
    let bounds = match region {
        Some(b) => Some(def.network.ibp(b).map_err(|e| CertifyError::Precondition(e.to_string()))?),
        None => None,
    };
    let mut set = network_constraints(&space, &def.network, &vars, bounds.as_ref(), cfg.slope.pairs())?;

    for (j, &u) in def.inputs.iter().enumerate() {
        match (def.saturation, &bounds) {
            (None, _) => set.define(u, Polynomial::var(sid, vars.outputs[j]), Tag::Affine, "controller"),
            (Some(m), Some(b)) => set.extend(saturation_constraints(&space, vars.outputs[j], u, m, b.output[j])),
            (Some(_), None) => {
                return Err(CertifyError::Precondition("input saturation needs a bounded region".into()))
            }
        }
    }

    for r in &def.recasts {
        let b = region.ok_or_else(|| CertifyError::Precondition("recast constraints need a bounded region".into()))?;
        let idx = def.states.iter().position(|&s| s == r.driver).expect("driver is a state");
        let iv = b.intervals().nth(idx).unwrap();
        let alpha = recast_alpha(iv.lo, iv.hi);
        info!("recast {}: sector slope {alpha:.6} over [{}, {}]", space.name(r.var), iv.lo, iv.hi);
        let g = recast_sector_constraint(&space, r.var, r.driver, alpha)?;
        set.inequalities.push(Constraint::new(g, Tag::RecastSector, space.name(r.var).to_string()));
    }

    let mut params = Vec::new();
    let mut fixed = BTreeMap::new();
    for p in &def.parameters {
        if p.lower == p.upper {
            fixed.insert(p.var, Polynomial::constant(sid, p.lower));
        } else {
            params.push(p.var);
            let g = robustness_constraint(&space, p.var, p.lower, p.upper)?;
            set.inequalities.push(Constraint::new(g, Tag::Robustness, space.name(p.var).to_string()));
        }
    }

    if let Some(b) = region {
        if !b.contains_origin_strictly() {
            return Err(CertifyError::Precondition("region must contain the origin in its interior".into()));
        }
        set.extend(region_constraints(&space, &def.states, &RegionSpec::Box(b.clone()))?);
    }
    if region.is_some() || !def.extra_region.is_empty() {
        for (k, d) in def.extra_region.iter().enumerate() {
            if !(d.constant_term() > 0.0) {
                return Err(CertifyError::Precondition(format!("region constraint d{} is not positive at 0", k + 1)));
            }
            set.region.push(Constraint::new(d.clone(), Tag::Region, format!("d{}", k + 1)));
        }
    }
    if cfg.region_products {
        let base: Vec<Constraint> = set.region.clone();
        for a in 0..base.len() {
            for b in a + 1..base.len() {
                let p = &base[a].poly * &base[b].poly;
                set.region.push(Constraint::new(p, Tag::Region, format!("({}) * ({})", base[a].label, base[b].label)));
            }
        }
    }

    let reduced = set.eliminate_definitions();
    let dynamics: Vec<Polynomial> = def
        .dynamics
        .iter()
        .map(|f| {
            let r = reduced_dynamics(&set, f);
            if fixed.is_empty() {
                r
            } else {
                r.substitute_many(&fixed).expect("same space")
            }
        })
        .collect();
    debug!(
        "instance: {} inequalities, {} equalities, {} region constraints, {} variables",
        reduced.inequalities.len(),
        reduced.equalities.len(),
        reduced.region.len(),
        space.len()
    );
    Ok(Instance {
        space,
        states: def.states.clone(),
        params,
        vars,
        raw: set,
        set: reduced,
        dynamics,
        region: region.cloned(),
        bounds,
    })
}

fn reduced_dynamics(set: &SemialgebraicSet, f: &Polynomial) -> Polynomial {
    set.resolve(f)
}

/// Constraint class used to pick a multiplier degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MultiplierClass {
    Network,
    Region,
    Auxiliary,
    Equality,
}

impl MultiplierClass {
    fn of(tag: Tag) -> Self {
        match tag {
            Tag::Region => MultiplierClass::Region,
            Tag::Saturation | Tag::RecastSector | Tag::Robustness => MultiplierClass::Auxiliary,
            _ => MultiplierClass::Network,
        }
    }
}

fn even_up(d: u32) -> u32 {
    d + d % 2
}

/// Multiplier degree for a class after defaults are applied.
pub fn multiplier_degree(cfg: &CertifyConfig, class: MultiplierClass) -> u32 {
    let s_default = cfg.v_degree.saturating_sub(2);
    let m = &cfg.multipliers;
    match class {
        MultiplierClass::Network => even_up(m.network.unwrap_or(s_default)),
        MultiplierClass::Region => even_up(m.region.unwrap_or(s_default)),
        MultiplierClass::Auxiliary => even_up(m.auxiliary.unwrap_or(s_default)),
        MultiplierClass::Equality => m.equality.unwrap_or(cfg.v_degree - 1),
    }
}

/// A planned multiplier: `name` times `constraint` enters the derivative
/// condition with a minus sign.
#[derive(Debug, Clone)]
pub struct MultiplierPlan {
    pub name: String,
    pub sos: bool,
    pub tag: Tag,
    pub label: String,
    pub constraint: Polynomial,
    pub basis: Vec<Monomial>,
}

/// Variables of the derivative condition, sorted.
fn expression_vars(inst: &Instance) -> Vec<VarId> {
    let mut vars: BTreeSet<VarId> = inst.states.iter().copied().collect();
    vars.extend(inst.params.iter().copied());
    for c in inst.set.inequalities.iter().chain(&inst.set.equalities).chain(&inst.set.region) {
        vars.extend(c.poly.variables());
    }
    for f in &inst.dynamics {
        vars.extend(f.variables());
    }
    vars.into_iter().collect()
}

/// Lowest total degree in the non-parameter variables.
fn order_at_anchor(p: &Polynomial, params: &[VarId]) -> u32 {
    p.terms().map(|(m, _)| m.degree_in(|v| !params.contains(&v))).min().unwrap_or(0)
}

pub fn plan_multipliers(inst: &Instance, cfg: &CertifyConfig) -> Vec<MultiplierPlan> {
    let mvars: Vec<VarId> = match cfg.multiplier_vars {
        MultiplierVars::All => expression_vars(inst),
        MultiplierVars::State => {
            let mut v: Vec<VarId> = inst.states.iter().chain(&inst.params).copied().collect();
            v.sort();
            v
        }
    };
    let mut plans = Vec::new();
    let ineqs = inst.set.inequalities.iter().chain(&inst.set.region);
    for (i, c) in ineqs.enumerate() {
        let deg = multiplier_degree(cfg, MultiplierClass::of(c.tag));
        let mut basis = monomials_up_to(&mvars, 0, deg / 2);
        // A multiplier whose constraint does not vanish to second order at
        // the equilibrium must itself vanish there.
        if order_at_anchor(&c.poly, &inst.params) <= 1 {
            basis.retain(|m| m.degree_in(|v| !inst.params.contains(&v)) >= 1);
        }
        if basis.is_empty() {
            debug!("no multiplier for [{}] {}", c.tag, c.label);
            continue;
        }
        plans.push(MultiplierPlan {
            name: format!("s{}", i + 1),
            sos: true,
            tag: c.tag,
            label: c.label.clone(),
            constraint: c.poly.clone(),
            basis,
        });
    }
    let tdeg = multiplier_degree(cfg, MultiplierClass::Equality);
    for (j, c) in inst.set.equalities.iter().enumerate() {
        plans.push(MultiplierPlan {
            name: format!("t{}", j + 1),
            sos: false,
            tag: c.tag,
            label: c.label.clone(),
            constraint: c.poly.clone(),
            basis: monomials_up_to(&mvars, 0, tdeg),
        });
    }
    plans
}

/// `sum_i z_i^2` over the states.
pub fn state_norm_sq(space: &VariableSpace, states: &[VarId]) -> Polynomial {
    let sid = space.id();
    states.iter().fold(Polynomial::zero(sid), |acc, &z| &acc + &Polynomial::monomial(sid, Monomial::var_pow(z, 2), 1.0))
}

/// Derivative condition `-dV/dz f - decay |z|^2 - sum m_i c_i`.
pub fn derivative_expression(
    inst: &Instance,
    cfg: &CertifyConfig,
    v: &LinPoly,
    plans: &[MultiplierPlan],
    multipliers: &[LinPoly],
) -> LinPoly {
    let mut e = LinPoly::zero(inst.space.id());
    for (z, f) in inst.states.iter().zip(&inst.dynamics) {
        e.add_scaled(&v.differentiate(*z).mul_poly(f), -1.0);
    }
    e.add_poly(&state_norm_sq(&inst.space, &inst.states), -cfg.decay);
    for (plan, m) in plans.iter().zip(multipliers) {
        e.add_scaled(&m.mul_poly(&plan.constraint), -1.0);
    }
    e
}

pub fn lyapunov_basis(inst: &Instance, cfg: &CertifyConfig) -> Vec<Monomial> {
    monomials_up_to(&inst.states, 2, cfg.v_degree)
}

pub fn derivative_basis_options(inst: &Instance) -> BasisOptions {
    let nonstate: Vec<VarId> =
        expression_vars(inst).into_iter().filter(|v| !inst.states.contains(v) && !inst.params.contains(v)).collect();
    BasisOptions { groups: if nonstate.is_empty() { vec![] } else { vec![nonstate] }, ..BasisOptions::default() }
}

/// Typical magnitude of each variable over the region: box half-widths for
/// states, IBP bounds for network nodes, interval ends for parameters.
/// Variables without a bound keep scale 1.
pub fn variable_scales(inst: &Instance, def: &SystemDefinition) -> Vec<(VarId, f64)> {
    let mag = |lo: f64, hi: f64| lo.abs().max(hi.abs());
    let mut out = Vec::new();
    let mut push = |v: VarId, s: f64| {
        if s.is_finite() && s > 0.0 {
            out.push((v, s.clamp(1e-3, 1e3)));
        }
    };
    if let Some(r) = &inst.region {
        for (z, iv) in inst.states.iter().zip(r.intervals()) {
            push(*z, mag(iv.lo, iv.hi));
        }
        for rc in &def.recasts {
            let idx = def.states.iter().position(|&s| s == rc.driver).expect("driver is a state");
            let iv = r.intervals().nth(idx).unwrap();
            push(rc.var, mag(rc.rule.apply(iv.lo), rc.rule.apply(iv.hi)));
        }
    }
    if let Some(b) = &inst.bounds {
        for (vars, ivs) in inst.vars.pre.iter().zip(&b.pre).chain(inst.vars.post.iter().zip(&b.post)) {
            for (v, iv) in vars.iter().zip(ivs) {
                push(*v, mag(iv.lo, iv.hi));
            }
        }
        for (j, (v, iv)) in inst.vars.outputs.iter().zip(&b.output).enumerate() {
            push(*v, mag(iv.lo, iv.hi));
            let u = def.inputs[j];
            push(u, def.saturation.map_or(mag(iv.lo, iv.hi), |m| m.min(mag(iv.lo, iv.hi))));
        }
    }
    for p in &def.parameters {
        if inst.params.contains(&p.var) {
            push(p.var, mag(p.lower, p.upper));
        }
    }
    out
}

/// The full stability program of an instance.
pub struct StabilityProgram {
    pub program: SosProgram,
    pub plans: Vec<MultiplierPlan>,
}

pub fn stability_program(
    inst: &Instance,
    def: &SystemDefinition,
    cfg: &CertifyConfig,
) -> Result<StabilityProgram, CertifyError> {
    let mut prog = SosProgram::new(&inst.space);
    for (v, s) in variable_scales(inst, def) {
        prog.set_variable_scale(v, s);
    }
    let v = prog.new_poly(&lyapunov_basis(inst, cfg));
    prog.name_poly("V", &v);
    let rho = state_norm_sq(&inst.space, &inst.states).scale(cfg.epsilon);
    let mut pos = v.clone();
    pos.add_poly(&rho, -1.0);
    let pos_opts = BasisOptions { vars: Some(inst.states.clone()), ..BasisOptions::default() };
    prog.add_sos("lyapunov", pos, &pos_opts)?;

    let plans = plan_multipliers(inst, cfg);
    let mut mults = Vec::with_capacity(plans.len());
    for plan in &plans {
        let m = if plan.sos {
            prog.new_sos_poly(&plan.name, plan.basis.clone())?
        } else {
            let t = prog.new_poly(&plan.basis);
            prog.name_poly(&plan.name, &t);
            t
        };
        mults.push(m);
    }
    let e = derivative_expression(inst, cfg, &v, &plans, &mults);
    prog.add_sos("derivative", e, &derivative_basis_options(inst))?;
    prog.set_objective(LinExpr::default());
    Ok(StabilityProgram { program: prog, plans })
}
