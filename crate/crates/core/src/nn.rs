//! Feed-forward controller networks, forward evaluation and interval bound
//! propagation.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::{Polynomial, VarId};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("malformed network: {0}")]
    Malformed(String),
    #[error("malformed box: {0}")]
    MalformedBox(String),
    #[error("cannot read network file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse network file: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// Row-major weight matrix, `rows = outputs`.
    #[serde(rename = "W")]
    pub weights: Vec<Vec<f64>>,
    #[serde(rename = "b")]
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }
}

/// Fully connected network: hidden layers share one activation, the last
/// entry of `layers` is the affine output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork")]
pub struct NeuralNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

#[derive(Deserialize)]
struct RawNetwork {
    layers: Vec<Layer>,
    activation: Activation,
}

impl TryFrom<RawNetwork> for NeuralNetwork {
    type Error = NnError;
    fn try_from(raw: RawNetwork) -> Result<Self, NnError> {
        NeuralNetwork::new(raw.layers, raw.activation)
    }
}

/// Every intermediate value of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// Pre-activations `v^k`, one vector per hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-activations `x^{k+1} = phi(v^k)`.
    pub post: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl NeuralNetwork {
    pub fn new(layers: Vec<Layer>, activation: Activation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Malformed("no layers".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.weights.len() != l.bias.len() {
                return Err(NnError::Malformed(format!(
                    "layer {k}: {} weight rows but {} biases",
                    l.weights.len(),
                    l.bias.len()
                )));
            }
            let cols = l.inputs();
            if cols == 0 || l.weights.iter().any(|r| r.len() != cols) {
                return Err(NnError::Malformed(format!("layer {k}: ragged or empty weight matrix")));
            }
            if k > 0 && cols != layers[k - 1].outputs() {
                return Err(NnError::Malformed(format!(
                    "layer {k} expects {cols} inputs but layer {} has {} outputs",
                    k - 1,
                    layers[k - 1].outputs()
                )));
            }
            if l.weights.iter().flatten().chain(&l.bias).any(|w| !w.is_finite()) {
                return Err(NnError::Malformed(format!("layer {k}: non-finite parameter")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            layers: &'a [Layer],
            activation: Activation,
        }
        serde_json::to_string_pretty(&Out { layers: &self.layers, activation: self.activation })
            .expect("network serializes")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs()
    }

    pub fn hidden_layers(&self) -> &[Layer] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    /// Width of every hidden layer.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden_layers().iter().map(Layer::outputs).collect()
    }

    pub fn hidden_node_count(&self) -> usize {
        self.hidden_widths().iter().sum()
    }

    pub fn forward(&self, z: &[f64]) -> Result<ForwardTrace, NnError> {
        if z.len() != self.input_dim() {
            return Err(NnError::Dimension { expected: self.input_dim(), got: z.len() });
        }
        let mut x = z.to_vec();
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut post = Vec::with_capacity(self.layers.len() - 1);
        for layer in self.hidden_layers() {
            let v = layer.affine(&x);
            x = v.iter().map(|&vi| self.activation.apply(vi)).collect();
            pre.push(v);
            post.push(x.clone());
        }
        let output = self.output_layer().affine(&x);
        Ok(ForwardTrace { pre, post, output })
    }

    /// Controller output only.
    pub fn eval(&self, z: &[f64]) -> Result<Vec<f64>, NnError> {
        Ok(self.forward(z)?.output)
    }

    /// Interval bound propagation over `region`.
    pub fn ibp(&self, region: &BoxRegion) -> Result<IbpBounds, NnError> {
        if region.dim() != self.input_dim() {
            return Err(NnError::Dimension { expected: self.input_dim(), got: region.dim() });
        }
        let mut cur: Vec<Interval> = region.intervals().collect();
        let mut pre = Vec::new();
        let mut post = Vec::new();
        for layer in self.hidden_layers() {
            let v = interval_affine(layer, &cur);
            cur = v
                .iter()
                .map(|iv| Interval::new(self.activation.apply(iv.lo), self.activation.apply(iv.hi)))
                .collect();
            pre.push(v);
            post.push(cur.clone());
        }
        let output = interval_affine(self.output_layer(), &cur);
        Ok(IbpBounds { pre, post, output })
    }

    /// Returns a copy whose output bias is shifted so that `pi(0) = 0`.
    pub fn with_shifted_output_bias(&self) -> Self {
        let zero = vec![0.0; self.input_dim()];
        let at_zero = self.eval(&zero).expect("dimension matches");
        let mut out = self.clone();
        let last = out.layers.last_mut().unwrap();
        for (b, p) in last.bias.iter_mut().zip(at_zero) {
            *b -= p;
        }
        out
    }
}

fn interval_affine(layer: &Layer, x: &[Interval]) -> Vec<Interval> {
    layer
        .weights
        .iter()
        .zip(&layer.bias)
        .map(|(row, b)| {
            let (mut lo, mut hi) = (*b, *b);
            for (w, iv) in row.iter().zip(x) {
                if *w >= 0.0 {
                    lo += w * iv.lo;
                    hi += w * iv.hi;
                } else {
                    lo += w * iv.hi;
                    hi += w * iv.lo;
                }
            }
            Interval::new(lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi || lo.is_nan() || hi.is_nan(), "inverted interval [{lo}, {hi}]");
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        x >= self.lo - tol && x <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn magnitude(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    pub fn is_within(&self, outer: &Interval) -> bool {
        self.lo >= outer.lo && self.hi <= outer.hi
    }
}

/// Axis-aligned box, one interval per state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, NnError> {
        if lower.len() != upper.len() {
            return Err(NnError::MalformedBox(format!(
                "{} lower bounds but {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l <= u) || !l.is_finite() || !u.is_finite() {
                return Err(NnError::MalformedBox(format!("coordinate {i}: [{l}, {u}]")));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(half_widths: &[f64]) -> Result<Self, NnError> {
        Self::new(half_widths.iter().map(|h| -h).collect(), half_widths.to_vec())
    }

    pub fn point(z: &[f64]) -> Self {
        Self { lower: z.to_vec(), upper: z.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        self.lower.iter().zip(&self.upper).map(|(l, u)| Interval::new(*l, *u))
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.dim()
            && z.iter().zip(&self.lower).zip(&self.upper).all(|((x, l), u)| x >= l && x <= u)
    }

    /// Whether the origin lies in the interior.
    pub fn contains_origin_strictly(&self) -> bool {
        self.lower.iter().zip(&self.upper).all(|(l, u)| *l < 0.0 && *u > 0.0)
    }

    /// Contracts towards the origin by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            lower: self.lower.iter().map(|l| l * factor).collect(),
            upper: self.upper.iter().map(|u| u * factor).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BoxRegion) -> bool {
        self.intervals().zip(other.intervals()).all(|(a, b)| a.is_within(&b))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..=*u) })
            .collect()
    }

    /// Regular grid with `n` points per axis (endpoints included).
    pub fn grid(&self, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let axis = |i: usize, k: usize| {
            if n <= 1 {
                0.5 * (self.lower[i] + self.upper[i])
            } else {
                self.lower[i] + (self.upper[i] - self.lower[i]) * k as f64 / (n - 1) as f64
            }
        };
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut pt = vec![0.0; d];
                for (i, x) in pt.iter_mut().enumerate().rev() {
                    *x = axis(i, idx % n);
                    idx /= n;
                }
                pt
            })
            .collect()
    }
}

/// Sound interval enclosures for every hidden node and output.
#[derive(Debug, Clone, PartialEq)]
pub struct IbpBounds {
    pub pre: Vec<Vec<Interval>>,
    pub post: Vec<Vec<Interval>>,
    pub output: Vec<Interval>,
}

impl IbpBounds {
    /// Checks that a forward trace lies inside the bounds.
    pub fn contains_trace(&self, trace: &ForwardTrace, tol: f64) -> bool {
        let layer_ok = |bounds: &[Vec<Interval>], vals: &[Vec<f64>]| {
            bounds.iter().zip(vals).all(|(b, v)| b.iter().zip(v).all(|(iv, x)| iv.contains(*x, tol)))
        };
        layer_ok(&self.pre, &trace.pre)
            && layer_ok(&self.post, &trace.post)
            && self.output.iter().zip(&trace.output).all(|(iv, x)| iv.contains(*x, tol))
    }

    /// Whether every bound of `self` lies inside the matching bound of `outer`.
    pub fn is_within(&self, outer: &IbpBounds) -> bool {
        let nested = |a: &[Vec<Interval>], b: &[Vec<Interval>]| {
            a.iter().zip(b).all(|(x, y)| x.iter().zip(y).all(|(i, o)| i.is_within(o)))
        };
        nested(&self.pre, &outer.pre)
            && nested(&self.post, &outer.post)
            && self.output.iter().zip(&outer.output).all(|(i, o)| i.is_within(o))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumCheck {
    pub residual: f64,
    pub passed: bool,
}

/// Evaluates `max_i |f_i(z*, pi(0))|` where `base_point` assigns every
/// non-input variable at the equilibrium and `inputs` receive the network
/// output at the zero state.
pub fn check_equilibrium(
    nn: &NeuralNetwork,
    dynamics: &[Polynomial],
    inputs: &[VarId],
    base_point: &[f64],
    tol: f64,
) -> EquilibriumCheck {
    let u0 = nn.eval(&vec![0.0; nn.input_dim()]).expect("dimension matches");
    let mut point = base_point.to_vec();
    for (v, u) in inputs.iter().zip(&u0) {
        if v.index() >= point.len() {
            point.resize(v.index() + 1, 0.0);
        }
        point[v.index()] = *u;
    }
    let residual = dynamics
        .iter()
        .map(|f| f.evaluate(&point).map(f64::abs).unwrap_or(f64::NAN))
        .fold(0.0, |a: f64, r| if r.is_nan() || a.is_nan() { f64::NAN } else { a.max(r) });
    EquilibriumCheck { residual, passed: residual <= tol }
}
