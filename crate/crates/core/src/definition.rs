//! TOML system definitions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::abstraction::SlopePairs;
use crate::nn::{BoxRegion, NeuralNetwork};
use crate::poly::{Polynomial, VarId, VariableSpace};

#[derive(Debug, Error)]
pub enum DefinitionError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
    #[error("network: {0}")]
    Network(#[from] crate::nn::NnError),
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> DefinitionError {
    DefinitionError::Field { field: field.into(), message: message.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDefinition {
    #[serde(default)]
    name: String,
    states: Vec<String>,
    #[serde(default = "default_inputs")]
    inputs: Vec<String>,
    network: Option<String>,
    dynamics: BTreeMap<String, String>,
    #[serde(default)]
    recast: Vec<RawRecast>,
    region: Option<RawRegion>,
    saturation: Option<RawSaturation>,
    #[serde(default)]
    parameters: Vec<RawParameter>,
    #[serde(default)]
    certify: CertifyConfig,
    #[serde(default)]
    simulate: SimulateConfig,
}

fn default_inputs() -> Vec<String> {
    vec!["u".into()]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecast {
    var: String,
    rule: RecastRule,
    driver: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    lower: Option<Vec<f64>>,
    upper: Option<Vec<f64>>,
    #[serde(default)]
    constraints: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSaturation {
    u_max: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParameter {
    name: String,
    lower: f64,
    upper: f64,
    nominal: Option<f64>,
}

/// Non-polynomial auxiliary variable `var = rule(driver)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecastRule {
    /// `driver - sin(driver)`.
    XMinusSin,
}

impl RecastRule {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            RecastRule::XMinusSin => x - x.sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recast {
    pub var: VarId,
    pub rule: RecastRule,
    pub driver: VarId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub var: VarId,
    pub lower: f64,
    pub upper: f64,
    pub nominal: f64,
}

/// Which variables multiplier polynomials may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MultiplierVars {
    /// Every variable of the derivative condition.
    #[default]
    All,
    /// States and uncertain parameters only.
    State,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeMode {
    None,
    #[default]
    IntraLayer,
    AllPairs,
}

impl SlopeMode {
    pub fn pairs(self) -> Option<SlopePairs> {
        match self {
            SlopeMode::None => None,
            SlopeMode::IntraLayer => Some(SlopePairs::IntraLayer),
            SlopeMode::AllPairs => Some(SlopePairs::AllPairs),
        }
    }
}

/// Multiplier degrees per constraint class; `None` selects the default
/// derived from the Lyapunov degree.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierDegrees {
    pub network: Option<u32>,
    pub region: Option<u32>,
    pub auxiliary: Option<u32>,
    pub equality: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertifyConfig {
    pub v_degree: u32,
    pub multipliers: MultiplierDegrees,
    pub multiplier_vars: MultiplierVars,
    pub k: u32,
    pub epsilon: f64,
    /// Weight of `|z|^2` subtracted in the derivative condition.
    pub decay: f64,
    pub slope: SlopeMode,
    /// Add pairwise products of region polynomials.
    pub region_products: bool,
    pub shrink_factor: f64,
    pub max_shrink: u32,
    pub psd_tol: f64,
    pub recon_tol: f64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        Self {
            v_degree: 2,
            multipliers: MultiplierDegrees::default(),
            multiplier_vars: MultiplierVars::All,
            k: 1,
            epsilon: 1e-4,
            decay: 1e-4,
            slope: SlopeMode::IntraLayer,
            region_products: false,
            shrink_factor: 0.75,
            max_shrink: 10,
            psd_tol: 1e-6,
            recon_tol: 1e-6,
            samples: 10_000,
            seed: 0,
        }
    }
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<(), DefinitionError> {
        if self.v_degree < 2 || !self.v_degree.is_multiple_of(2) {
            return Err(field_err("certify.v_degree", "must be even and at least 2"));
        }
        if !(self.epsilon > 0.0) {
            return Err(field_err("certify.epsilon", "must be positive"));
        }
        if !(self.decay >= 0.0) {
            return Err(field_err("certify.decay", "must be nonnegative"));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return Err(field_err("certify.shrink_factor", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, serde::Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub step: f64,
    pub horizon: f64,
    pub convergence_radius: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self { step: 1e-3, horizon: 30.0, convergence_radius: 1e-3 }
    }
}

/// A parsed closed-loop problem.
#[derive(Debug, Clone)]
pub struct SystemDefinition {
    pub name: String,
    pub space: VariableSpace,
    pub states: Vec<VarId>,
    pub inputs: Vec<VarId>,
    pub dynamics: Vec<Polynomial>,
    pub network: NeuralNetwork,
    pub network_path: Option<PathBuf>,
    pub region: Option<BoxRegion>,
    pub extra_region: Vec<Polynomial>,
    pub recasts: Vec<Recast>,
    pub saturation: Option<f64>,
    pub parameters: Vec<Parameter>,
    pub certify: CertifyConfig,
    pub simulate: SimulateConfig,
}

impl SystemDefinition {
    /// Reads a definition; the network path is resolved against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, DefinitionError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| DefinitionError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text, path.parent(), None)
    }

    /// Parses definition text. `network` overrides the `network` key.
    pub fn parse(text: &str, base: Option<&Path>, network: Option<NeuralNetwork>) -> Result<Self, DefinitionError> {
        let raw: RawDefinition = toml::from_str(text)?;
        let mut space = VariableSpace::new();
        let add = |space: &mut VariableSpace, name: &str, field: &str| {
            space.add(name).map_err(|m| field_err(field, m))
        };
        let states = raw.states.iter().map(|n| add(&mut space, n, "states")).collect::<Result<Vec<_>, _>>()?;
        let inputs = raw.inputs.iter().map(|n| add(&mut space, n, "inputs")).collect::<Result<Vec<_>, _>>()?;
        let mut recast_names = Vec::new();
        for r in &raw.recast {
            recast_names.push(add(&mut space, &r.var, "recast.var")?);
        }
        let mut parameters = Vec::new();
        for p in &raw.parameters {
            let var = add(&mut space, &p.name, "parameters.name")?;
            if !(p.lower <= p.upper) {
                return Err(field_err(format!("parameters.{}", p.name), "lower must not exceed upper"));
            }
            let nominal = p.nominal.unwrap_or(0.5 * (p.lower + p.upper));
            parameters.push(Parameter { var, lower: p.lower, upper: p.upper, nominal });
        }
        let recasts = raw
            .recast
            .iter()
            .zip(recast_names)
            .map(|(r, var)| {
                let driver = space.get(&r.driver).filter(|d| states.contains(d)).ok_or_else(|| {
                    field_err("recast.driver", format!("`{}` is not a state", r.driver))
                })?;
                Ok(Recast { var, rule: r.rule, driver })
            })
            .collect::<Result<Vec<_>, DefinitionError>>()?;

        for key in raw.dynamics.keys() {
            if !raw.states.contains(key) {
                return Err(field_err(format!("dynamics.{key}"), "not a declared state"));
            }
        }
        let dynamics = raw
            .states
            .iter()
            .map(|s| {
                let text = raw.dynamics.get(s).ok_or_else(|| field_err("dynamics", format!("missing `{s}`")))?;
                Polynomial::parse(text, &space).map_err(|e| field_err(format!("dynamics.{s}"), e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;

        let network = match (network, &raw.network) {
            (Some(nn), _) => nn,
            (None, Some(p)) => NeuralNetwork::load(base.map_or_else(|| PathBuf::from(p), |b| b.join(p)))?,
            (None, None) => return Err(field_err("network", "missing")),
        };
        let network_path = raw.network.as_ref().map(|p| base.map_or_else(|| PathBuf::from(p), |b| b.join(p)));
        if network.input_dim() != states.len() {
            return Err(field_err("network", format!("expects {} inputs, system has {} states", network.input_dim(), states.len())));
        }
        if network.output_dim() != inputs.len() {
            return Err(field_err("network", format!("has {} outputs, system has {} inputs", network.output_dim(), inputs.len())));
        }

        let (region, extra_region) = match &raw.region {
            None => (None, Vec::new()),
            Some(r) => {
                let b = match (&r.lower, &r.upper) {
                    (Some(lo), Some(hi)) => {
                        if lo.len() != states.len() {
                            return Err(field_err("region", format!("{} bounds for {} states", lo.len(), states.len())));
                        }
                        Some(BoxRegion::new(lo.clone(), hi.clone()).map_err(|e| field_err("region", e.to_string()))?)
                    }
                    (None, None) => None,
                    _ => return Err(field_err("region", "lower and upper must be given together")),
                };
                let extra = r
                    .constraints
                    .iter()
                    .enumerate()
                    .map(|(k, t)| {
                        let p = Polynomial::parse(t, &space).map_err(|e| field_err(format!("region.constraints[{k}]"), e.to_string()))?;
                        if p.variables().iter().any(|v| !states.contains(v)) {
                            return Err(field_err(format!("region.constraints[{k}]"), "may only use states"));
                        }
                        Ok(p)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                (b, extra)
            }
        };
        if !recasts.is_empty() && region.is_none() {
            return Err(field_err("recast", "needs a region box to bound the driver"));
        }
        let saturation = match raw.saturation {
            Some(s) if s.u_max > 0.0 => Some(s.u_max),
            Some(_) => return Err(field_err("saturation.u_max", "must be positive")),
            None => None,
        };
        raw.certify.validate()?;
        Ok(Self {
            name: raw.name,
            space,
            states,
            inputs,
            dynamics,
            network,
            network_path,
            region,
            extra_region,
            recasts,
            saturation,
            parameters,
            certify: raw.certify,
            simulate: raw.simulate,
        })
    }

    pub fn parameter_vars(&self) -> Vec<VarId> {
        self.parameters.iter().map(|p| p.var).collect()
    }

    /// Point vector for the base space from a state, the plant input and
    /// parameter values, with auxiliary variables set to their true values.
    pub fn base_point(&self, z: &[f64], u: &[f64], params: &[f64]) -> Vec<f64> {
        let mut pt = vec![0.0; self.space.len()];
        for (v, x) in self.states.iter().zip(z) {
            pt[v.index()] = *x;
        }
        for (v, x) in self.inputs.iter().zip(u) {
            pt[v.index()] = *x;
        }
        for r in &self.recasts {
            pt[r.var.index()] = r.rule.apply(pt[r.driver.index()]);
        }
        for (p, x) in self.parameters.iter().zip(params) {
            pt[p.var.index()] = *x;
        }
        pt
    }

    pub fn nominal_parameters(&self) -> Vec<f64> {
        self.parameters.iter().map(|p| p.nominal).collect()
    }

    /// Applied input: network output, saturated when configured.
    pub fn control(&self, z: &[f64]) -> Vec<f64> {
        let u = self.network.eval(z).expect("state dimension matches the network");
        match self.saturation {
            Some(m) => u.into_iter().map(|x| x.clamp(-m, m)).collect(),
            None => u,
        }
    }

    /// True closed-loop vector field (non-polynomial terms evaluated exactly).
    pub fn closed_loop(&self, z: &[f64], params: &[f64]) -> Vec<f64> {
        let pt = self.base_point(z, &self.control(z), params);
        self.dynamics.iter().map(|f| f.eval(&pt)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn zero_net(n_in: usize) -> NeuralNetwork {
        NeuralNetwork::new(
            vec![
                Layer { weights: vec![vec![0.0; n_in]], bias: vec![0.0] },
                Layer { weights: vec![vec![0.0]], bias: vec![0.0] },
            ],
            Activation::Relu,
        )
        .unwrap()
    }

    const PENDULUM: &str = r#"
states = ["z1", "z2"]
dynamics.z1 = "z2"
dynamics.z2 = "19.62*(z1 - z3) - 13.333333333333334*z2 + 26.666666666666668*u"

[[recast]]
var = "z3"
rule = "x_minus_sin"
driver = "z1"

[region]
lower = [-0.3, -1.4]
upper = [0.3, 1.4]

[saturation]
u_max = 1.0

[certify]
v_degree = 4
"#;

    #[test]
    fn parses_pendulum_shape() {
        let d = SystemDefinition::parse(PENDULUM, None, Some(zero_net(2))).unwrap();
        assert_eq!(d.states.len(), 2);
        assert_eq!(d.recasts.len(), 1);
        assert_eq!(d.saturation, Some(1.0));
        assert_eq!(d.certify.v_degree, 4);
        assert_eq!(d.certify.k, 1);
        let f = d.closed_loop(&[0.2, 0.0], &[]);
        let expected = 19.62 * 0.2f64.sin();
        assert!((f[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn misspelled_variable_is_reported() {
        let bad = PENDULUM.replace("dynamics.z1 = \"z2\"", "dynamics.z1 = \"zz2\"");
        let err = SystemDefinition::parse(&bad, None, Some(zero_net(2))).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dynamics.z1") && msg.contains("zz2"), "{msg}");
    }

    #[test]
    fn unknown_key_and_state_rejected() {
        let bad = PENDULUM.replace("[saturation]", "[saturatoin]");
        assert!(matches!(SystemDefinition::parse(&bad, None, Some(zero_net(2))), Err(DefinitionError::Toml(_))));
        let bad = PENDULUM.replace("dynamics.z1", "dynamics.z4");
        assert!(SystemDefinition::parse(&bad, None, Some(zero_net(2))).is_err());
        let bad = PENDULUM.replace("v_degree = 4", "v_degree = 3");
        assert!(SystemDefinition::parse(&bad, None, Some(zero_net(2))).is_err());
    }

    #[test]
    fn network_shape_checked() {
        assert!(SystemDefinition::parse(PENDULUM, None, Some(zero_net(3))).is_err());
    }
}
