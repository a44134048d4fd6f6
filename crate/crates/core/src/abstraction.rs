//! Semialgebraic over-approximation of the network graph, plus the region,
//! recast, saturation and uncertainty constraints that accompany it.

use std::collections::BTreeMap;
use std::fmt;

use log::{debug, info};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Activation, BoxRegion, ForwardTrace, IbpBounds, Interval, NeuralNetwork};
use crate::poly::{Polynomial, VarId, VariableSpace};

#[derive(Debug, Error)]
pub enum AbstractionError {
    #[error("{0} constraints requested for a {1:?} network")]
    WrongActivation(&'static str, Activation),
    #[error("bounds do not match the network layout")]
    BoundsShape,
    #[error("variable name clash: {0}")]
    Name(String),
    #[error("empty or degenerate interval [{0}, {1}]")]
    Interval(f64, f64),
    #[error("malformed region: {0}")]
    Region(String),
    #[error("negative sector slope {0}")]
    Alpha(f64),
}

/// Provenance label of a constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tag {
    Affine,
    ReluSign,
    ReluComplementarity,
    IbpBox,
    TanhSector,
    Slope,
    Region,
    Saturation,
    RecastSector,
    Robustness,
}

impl Tag {
    pub fn as_str(self) -> &'static str {
        match self {
            Tag::Affine => "affine",
            Tag::ReluSign => "relu-sign",
            Tag::ReluComplementarity => "relu-complementarity",
            Tag::IbpBox => "ibp-box",
            Tag::TanhSector => "tanh-sector",
            Tag::Slope => "slope",
            Tag::Region => "region",
            Tag::Saturation => "saturation",
            Tag::RecastSector => "recast-sector",
            Tag::Robustness => "robustness",
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub poly: Polynomial,
    pub tag: Tag,
    pub label: String,
}

impl Constraint {
    pub fn new(poly: Polynomial, tag: Tag, label: impl Into<String>) -> Self {
        Self { poly, tag, label: label.into() }
    }
}

/// Equality of the special form `var = expr`, removable by substitution.
#[derive(Debug, Clone, PartialEq)]
pub struct Definition {
    pub var: VarId,
    pub expr: Polynomial,
    pub tag: Tag,
    pub label: String,
}

/// Inequalities `g_i >= 0`, equalities `h_j = 0` and region polynomials
/// `d_k >= 0`. Definitions are equalities too; they are listed separately so
/// they can be eliminated.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SemialgebraicSet {
    pub inequalities: Vec<Constraint>,
    pub equalities: Vec<Constraint>,
    pub region: Vec<Constraint>,
    pub definitions: Vec<Definition>,
}

impl SemialgebraicSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, other: SemialgebraicSet) {
        self.inequalities.extend(other.inequalities);
        self.equalities.extend(other.equalities);
        self.region.extend(other.region);
        self.definitions.extend(other.definitions);
    }

    pub fn is_empty(&self) -> bool {
        self.inequalities.is_empty() && self.equalities.is_empty() && self.region.is_empty() && self.definitions.is_empty()
    }

    pub fn define(&mut self, var: VarId, expr: Polynomial, tag: Tag, label: impl Into<String>) {
        self.definitions.push(Definition { var, expr, tag, label: label.into() });
    }

    /// Every equality including definitions, as `h = 0` polynomials.
    pub fn all_equalities(&self) -> Vec<Constraint> {
        let mut out: Vec<Constraint> = self
            .definitions
            .iter()
            .map(|d| {
                let lhs = Polynomial::var(d.expr.space(), d.var);
                Constraint::new(&lhs - &d.expr, d.tag, d.label.clone())
            })
            .collect();
        out.extend(self.equalities.iter().cloned());
        out
    }

    pub fn count(&self, tag: Tag) -> usize {
        self.inequalities.iter().chain(&self.equalities).chain(&self.region).filter(|c| c.tag == tag).count()
            + self.definitions.iter().filter(|d| d.tag == tag).count()
    }

    /// Substitutes every definition (transitively) into `p`.
    pub fn resolve(&self, p: &Polynomial) -> Polynomial {
        let subs: BTreeMap<VarId, Polynomial> =
            self.definitions.iter().map(|d| (d.var, d.expr.clone())).collect();
        let mut cur = p.clone();
        for _ in 0..=self.definitions.len() {
            if !cur.variables().iter().any(|v| subs.contains_key(v)) {
                return cur;
            }
            cur = cur.substitute_many(&subs).expect("definitions share the space");
        }
        panic!("cyclic definitions");
    }

    /// The same set with all definitions substituted away. Constraints that
    /// become trivially true are dropped.
    pub fn eliminate_definitions(&self) -> SemialgebraicSet {
        let map = |cs: &[Constraint], keep: &dyn Fn(&Polynomial) -> bool| -> Vec<Constraint> {
            cs.iter()
                .map(|c| Constraint::new(self.resolve(&c.poly), c.tag, c.label.clone()))
                .filter(|c| keep(&c.poly))
                .collect()
        };
        let ineq_keep = |p: &Polynomial| !(p.degree() == 0 && p.constant_term() >= 0.0);
        let eq_keep = |p: &Polynomial| !p.is_zero();
        SemialgebraicSet {
            inequalities: map(&self.inequalities, &ineq_keep),
            equalities: map(&self.equalities, &eq_keep),
            region: map(&self.region, &ineq_keep),
            definitions: Vec::new(),
        }
    }

    /// Human-readable listing with provenance tags.
    pub fn dump(&self, space: &VariableSpace) -> String {
        let mut out = String::new();
        for d in &self.definitions {
            out.push_str(&format!(
                "[{}] {}: {} = {}\n",
                d.tag,
                d.label,
                space.name(d.var),
                d.expr.display(space)
            ));
        }
        for c in &self.equalities {
            out.push_str(&format!("[{}] {}: {} = 0\n", c.tag, c.label, c.poly.display(space)));
        }
        for c in &self.inequalities {
            out.push_str(&format!("[{}] {}: {} >= 0\n", c.tag, c.label, c.poly.display(space)));
        }
        for c in &self.region {
            out.push_str(&format!("[{}] {}: {} >= 0\n", c.tag, c.label, c.poly.display(space)));
        }
        out
    }

    /// Worst violation at a point: the most negative inequality or region
    /// value and the largest equality magnitude.
    pub fn violation(&self, point: &[f64]) -> (f64, f64) {
        let ineq = self.inequalities.iter().chain(&self.region).map(|c| c.poly.eval(point)).fold(f64::INFINITY, f64::min);
        let eq = self.all_equalities().iter().map(|c| c.poly.eval(point).abs()).fold(0.0, f64::max);
        (ineq, eq)
    }
}

/// Symbolic variables for every node of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkVars {
    pub inputs: Vec<VarId>,
    /// Pre-activation `v`, per hidden layer.
    pub pre: Vec<Vec<VarId>>,
    /// Post-activation `x`, per hidden layer.
    pub post: Vec<Vec<VarId>>,
    pub outputs: Vec<VarId>,
}

impl NetworkVars {
    /// Registers `v{k}_{i}`, `x{k}_{i}` (1-based) and the given output names.
    pub fn register(
        space: &mut VariableSpace,
        nn: &NeuralNetwork,
        inputs: &[VarId],
        output_names: &[String],
    ) -> Result<Self, AbstractionError> {
        if inputs.len() != nn.input_dim() || output_names.len() != nn.output_dim() {
            return Err(AbstractionError::BoundsShape);
        }
        let mut add = |name: String| space.add(&name).map_err(AbstractionError::Name);
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for (k, width) in nn.hidden_widths().into_iter().enumerate() {
            let mut pv = Vec::with_capacity(width);
            let mut xv = Vec::with_capacity(width);
            for i in 0..width {
                pv.push(add(format!("v{}_{}", k + 1, i + 1))?);
                xv.push(add(format!("x{}_{}", k + 1, i + 1))?);
            }
            pre.push(pv);
            post.push(xv);
        }
        let outputs = output_names.iter().map(|n| add(n.clone())).collect::<Result<_, _>>()?;
        Ok(Self { inputs: inputs.to_vec(), pre, post, outputs })
    }

    pub fn node_count(&self) -> usize {
        self.post.iter().map(Vec::len).sum()
    }

    /// All post-activation variables in layer order.
    pub fn post_flat(&self) -> Vec<VarId> {
        self.post.iter().flatten().copied().collect()
    }

    /// Writes a forward trace into a dense point vector.
    pub fn fill_point(&self, trace: &ForwardTrace, point: &mut [f64]) {
        for (vars, vals) in self.pre.iter().zip(&trace.pre).chain(self.post.iter().zip(&trace.post)) {
            for (v, x) in vars.iter().zip(vals) {
                point[v.index()] = *x;
            }
        }
        for (v, x) in self.outputs.iter().zip(&trace.output) {
            point[v.index()] = *x;
        }
    }

    fn check(&self, nn: &NeuralNetwork) -> Result<(), AbstractionError> {
        if self.pre.iter().map(Vec::len).ne(nn.hidden_widths()) {
            return Err(AbstractionError::BoundsShape);
        }
        Ok(())
    }
}

fn check_bounds(nn: &NeuralNetwork, b: &IbpBounds) -> Result<(), AbstractionError> {
    if b.pre.iter().map(Vec::len).ne(nn.hidden_widths()) || b.output.len() != nn.output_dim() {
        return Err(AbstractionError::BoundsShape);
    }
    Ok(())
}

/// Affine layer maps `v^k = W^k x^k + b^k` and the output map as definitions.
pub fn affine_definitions(space: &VariableSpace, nn: &NeuralNetwork, vars: &NetworkVars) -> SemialgebraicSet {
    let sid = space.id();
    let mut set = SemialgebraicSet::new();
    let mut prev = vars.inputs.clone();
    for (k, layer) in nn.hidden_layers().iter().enumerate() {
        for (i, (row, b)) in layer.weights.iter().zip(&layer.bias).enumerate() {
            let expr = Polynomial::affine(sid, &prev, row, *b);
            set.define(vars.pre[k][i], expr, Tag::Affine, format!("layer {} node {}", k + 1, i + 1));
        }
        prev = vars.post[k].clone();
    }
    let out = nn.output_layer();
    for (j, (row, b)) in out.weights.iter().zip(&out.bias).enumerate() {
        set.define(vars.outputs[j], Polynomial::affine(sid, &prev, row, *b), Tag::Affine, format!("output {}", j + 1));
    }
    set
}

fn box_constraints(set: &mut SemialgebraicSet, space: &VariableSpace, x: VarId, iv: Interval, label: &str) {
    let p = Polynomial::var(space.id(), x);
    set.inequalities.push(Constraint::new(&p - &Polynomial::constant(space.id(), iv.lo), Tag::IbpBox, format!("{label} lower")));
    set.inequalities.push(Constraint::new(&Polynomial::constant(space.id(), iv.hi) - &p, Tag::IbpBox, format!("{label} upper")));
}

/// ReLU sign and complementarity constraints for every node, plus IBP box
/// constraints when bounds are given (omit them for global claims).
pub fn relu_constraints(
    space: &VariableSpace,
    nn: &NeuralNetwork,
    vars: &NetworkVars,
    bounds: Option<&IbpBounds>,
) -> Result<SemialgebraicSet, AbstractionError> {
    if nn.activation() != Activation::Relu {
        return Err(AbstractionError::WrongActivation("relu", nn.activation()));
    }
    vars.check(nn)?;
    if let Some(b) = bounds {
        check_bounds(nn, b)?;
    }
    let sid = space.id();
    let mut set = affine_definitions(space, nn, vars);
    for (k, layer_vars) in vars.post.iter().enumerate() {
        for (i, &x) in layer_vars.iter().enumerate() {
            let label = format!("layer {} node {}", k + 1, i + 1);
            let xp = Polynomial::var(sid, x);
            let vp = Polynomial::var(sid, vars.pre[k][i]);
            let gap = &xp - &vp;
            set.inequalities.push(Constraint::new(xp.clone(), Tag::ReluSign, format!("{label} x")));
            set.inequalities.push(Constraint::new(gap.clone(), Tag::ReluSign, format!("{label} x-v")));
            set.equalities.push(Constraint::new(&xp * &gap, Tag::ReluComplementarity, label.clone()));
            if let Some(b) = bounds {
                let post = b.post[k][i];
                if b.pre[k][i].hi <= 0.0 {
                    // provably inactive
                    set.define(x, Polynomial::zero(sid), Tag::IbpBox, label);
                } else {
                    box_constraints(&mut set, space, x, post, &label);
                }
            }
        }
    }
    Ok(set)
}

/// Lower slope of the tightest sector `[alpha, 1]` through the origin that
/// contains `tanh` on `[lo, hi]`.
pub fn tanh_alpha(lo: f64, hi: f64) -> f64 {
    let chord = |v: f64| if v == 0.0 { 1.0 } else { v.tanh() / v };
    chord(lo).min(chord(hi))
}

/// Sector constraint `(x - alpha v)(v - x) >= 0` per node, with IBP box
/// constraints on `x`.
pub fn tanh_sector_constraints(
    space: &VariableSpace,
    nn: &NeuralNetwork,
    vars: &NetworkVars,
    bounds: &IbpBounds,
) -> Result<SemialgebraicSet, AbstractionError> {
    if nn.activation() != Activation::Tanh {
        return Err(AbstractionError::WrongActivation("tanh", nn.activation()));
    }
    vars.check(nn)?;
    check_bounds(nn, bounds)?;
    let sid = space.id();
    let mut set = affine_definitions(space, nn, vars);
    for (k, layer_vars) in vars.post.iter().enumerate() {
        for (i, &x) in layer_vars.iter().enumerate() {
            let label = format!("layer {} node {}", k + 1, i + 1);
            let iv = bounds.pre[k][i];
            let alpha = tanh_alpha(iv.lo, iv.hi);
            if iv.lo > 0.0 || iv.hi < 0.0 {
                info!("{label}: pre-activation interval [{}, {}] excludes 0, sector widened", iv.lo, iv.hi);
            }
            let xp = Polynomial::var(sid, x);
            let vp = Polynomial::var(sid, vars.pre[k][i]);
            let sector = &(&xp - &vp.scale(alpha)) * &(&vp - &xp);
            set.inequalities.push(Constraint::new(sector, Tag::TanhSector, label.clone()));
            box_constraints(&mut set, space, x, bounds.post[k][i], &label);
        }
    }
    Ok(set)
}

/// Bound-free tanh abstraction: `x (v - x) >= 0` and `|x| <= 1`, valid for every input.
pub fn tanh_global_constraints(
    space: &VariableSpace,
    nn: &NeuralNetwork,
    vars: &NetworkVars,
) -> Result<SemialgebraicSet, AbstractionError> {
    if nn.activation() != Activation::Tanh {
        return Err(AbstractionError::WrongActivation("tanh", nn.activation()));
    }
    vars.check(nn)?;
    let sid = space.id();
    let mut set = affine_definitions(space, nn, vars);
    for (k, layer_vars) in vars.post.iter().enumerate() {
        for (i, &x) in layer_vars.iter().enumerate() {
            let label = format!("layer {} node {}", k + 1, i + 1);
            let xp = Polynomial::var(sid, x);
            let vp = Polynomial::var(sid, vars.pre[k][i]);
            set.inequalities.push(Constraint::new(&xp * &(&vp - &xp), Tag::TanhSector, label.clone()));
            box_constraints(&mut set, space, x, Interval::new(-1.0, 1.0), &label);
        }
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopePairs {
    #[default]
    IntraLayer,
    AllPairs,
}

/// Pairwise slope constraints for activations with slope in `[0, 1]`:
/// `(dx)(dv - dx) >= 0` for each node pair.
pub fn slope_constraints(space: &VariableSpace, vars: &NetworkVars, pairs: SlopePairs) -> SemialgebraicSet {
    let sid = space.id();
    let nodes: Vec<(usize, usize)> =
        vars.post.iter().enumerate().flat_map(|(k, l)| (0..l.len()).map(move |i| (k, i))).collect();
    let mut set = SemialgebraicSet::new();
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let ((ka, ia), (kb, ib)) = (nodes[a], nodes[b]);
            if pairs == SlopePairs::IntraLayer && ka != kb {
                continue;
            }
            let dx = &Polynomial::var(sid, vars.post[ka][ia]) - &Polynomial::var(sid, vars.post[kb][ib]);
            let dv = &Polynomial::var(sid, vars.pre[ka][ia]) - &Polynomial::var(sid, vars.pre[kb][ib]);
            let poly = &dx * &(&dv - &dx);
            let label = format!("nodes {}.{} / {}.{}", ka + 1, ia + 1, kb + 1, ib + 1);
            set.inequalities.push(Constraint::new(poly, Tag::Slope, label));
        }
    }
    set
}

/// Closed-form count of slope constraints.
pub fn slope_pair_count(widths: &[usize], pairs: SlopePairs) -> usize {
    let c2 = |n: usize| n * n.saturating_sub(1) / 2;
    match pairs {
        SlopePairs::IntraLayer => widths.iter().map(|&w| c2(w)).sum(),
        SlopePairs::AllPairs => c2(widths.iter().sum()),
    }
}

/// Region `D^z` as a box or a list of `d_k >= 0` polynomials.
#[derive(Debug, Clone, PartialEq)]
pub enum RegionSpec {
    Box(BoxRegion),
    Custom(Vec<Polynomial>),
}

pub fn region_constraints(
    space: &VariableSpace,
    states: &[VarId],
    region: &RegionSpec,
) -> Result<SemialgebraicSet, AbstractionError> {
    let sid = space.id();
    let mut set = SemialgebraicSet::new();
    match region {
        RegionSpec::Box(b) => {
            if b.dim() != states.len() {
                return Err(AbstractionError::Region(format!("{} bounds for {} states", b.dim(), states.len())));
            }
            for (&z, iv) in states.iter().zip(b.intervals()) {
                let zp = Polynomial::var(sid, z);
                let name = space.name(z);
                set.region.push(Constraint::new(
                    &zp - &Polynomial::constant(sid, iv.lo),
                    Tag::Region,
                    format!("{name} lower"),
                ));
                set.region.push(Constraint::new(
                    &Polynomial::constant(sid, iv.hi) - &zp,
                    Tag::Region,
                    format!("{name} upper"),
                ));
            }
        }
        RegionSpec::Custom(ps) => {
            for (k, p) in ps.iter().enumerate() {
                set.region.push(Constraint::new(p.clone(), Tag::Region, format!("d{}", k + 1)));
            }
        }
    }
    Ok(set)
}

/// `var (alpha driver - var) >= 0`.
pub fn recast_sector_constraint(
    space: &VariableSpace,
    var: VarId,
    driver: VarId,
    alpha: f64,
) -> Result<Polynomial, AbstractionError> {
    if !(alpha >= 0.0) {
        return Err(AbstractionError::Alpha(alpha));
    }
    let sid = space.id();
    let w = Polynomial::var(sid, var);
    let d = Polynomial::var(sid, driver);
    Ok(&w * &(&d.scale(alpha) - &w))
}

/// Sector slope for `s - sin(s)` over `[lo, hi]`: the larger endpoint chord.
pub fn recast_alpha(lo: f64, hi: f64) -> f64 {
    let chord = |s: f64| if s == 0.0 { 0.0 } else { (s - s.sin()) / s };
    chord(hi).max(chord(lo))
}

/// Links the saturated plant input `w` to the raw network output `u`.
pub fn saturation_constraints(
    space: &VariableSpace,
    u: VarId,
    w: VarId,
    u_max: f64,
    ibp_u: Interval,
) -> SemialgebraicSet {
    let mut set = SemialgebraicSet::new();
    if u_max.is_infinite() {
        return set;
    }
    let sid = space.id();
    let wp = Polynomial::var(sid, w);
    let up = Polynomial::var(sid, u);
    let m = Polynomial::constant(sid, u_max);
    let label = format!("sat({})", space.name(u));
    set.inequalities.push(Constraint::new(&m - &wp, Tag::Saturation, format!("{label} upper")));
    set.inequalities.push(Constraint::new(&wp + &m, Tag::Saturation, format!("{label} lower")));
    let reach = ibp_u.magnitude();
    if reach <= u_max {
        info!("{label}: IBP range {reach:.6} within {u_max}, saturation inactive");
        set.define(w, up, Tag::Saturation, label);
    } else {
        let kappa = u_max / reach;
        info!("{label}: IBP range {reach:.6} exceeds {u_max}, sector slope {kappa:.6}");
        set.inequalities.push(Constraint::new(&(&wp - &up.scale(kappa)) * &(&up - &wp), Tag::Saturation, format!("{label} sector")));
    }
    set
}

/// `(hi - delta)(delta - lo) >= 0`.
pub fn robustness_constraint(space: &VariableSpace, delta: VarId, lo: f64, hi: f64) -> Result<Polynomial, AbstractionError> {
    if !(lo < hi) {
        return Err(AbstractionError::Interval(lo, hi));
    }
    let sid = space.id();
    let d = Polynomial::var(sid, delta);
    Ok(&(&Polynomial::constant(sid, hi) - &d) * &(&d - &Polynomial::constant(sid, lo)))
}

/// Network abstraction for the activation kind of `nn`.
pub fn network_constraints(
    space: &VariableSpace,
    nn: &NeuralNetwork,
    vars: &NetworkVars,
    bounds: Option<&IbpBounds>,
    slope: Option<SlopePairs>,
) -> Result<SemialgebraicSet, AbstractionError> {
    let mut set = match nn.activation() {
        Activation::Relu => relu_constraints(space, nn, vars, bounds)?,
        Activation::Tanh => match bounds {
            Some(b) => tanh_sector_constraints(space, nn, vars, b)?,
            None => tanh_global_constraints(space, nn, vars)?,
        },
    };
    if let Some(pairs) = slope {
        set.extend(slope_constraints(space, vars, pairs));
    }
    debug!(
        "network abstraction: {} inequalities, {} equalities, {} definitions",
        set.inequalities.len(),
        set.equalities.len(),
        set.definitions.len()
    );
    Ok(set)
}

#[cfg(test)]
mod tests;
