//! Run configuration (TOML) and assembly of the numerical objects it describes.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{build_eigenbasis, Basis};
use crate::control::{AdmissibleSpec, ControlAtom, OptimizerSpec, Parametrization, TimeProfile};
use crate::diagnostics::StabilityConstants;
use crate::dynamics::{GalerkinModel, InitialCondition, NoiseModel, TimeSpec};
use crate::error::{Error, Result};
use crate::geometry::{DomainSpec, Wall};
use crate::lifting::{BoundaryControl, ControlField, LiftOperator, LiftSolver};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisConfig {
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_control_modes")]
    pub modes: usize,
    #[serde(default = "default_time_nodes")]
    pub time_nodes: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_lambda")]
    pub lambda1: f64,
    #[serde(default = "default_lambda")]
    pub lambda2: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default = "default_atoms")]
    pub atoms: Vec<ControlAtom>,
    /// Parameters of the control used by `lift`, `simulate` and `verify`.
    #[serde(default)]
    pub apply: Vec<f64>,
    /// Parameters of the second control in the stability certificate.
    #[serde(default)]
    pub compare: Vec<f64>,
    /// Parameters of the control that generates the tracking target.
    #[serde(default)]
    pub target: Vec<f64>,
    /// Starting parameters of the optimizer.
    #[serde(default)]
    pub initial: Vec<f64>,
}

fn default_control_modes() -> usize {
    1
}
fn default_time_nodes() -> usize {
    11
}
fn default_radius() -> f64 {
    10.0
}
fn default_lambda() -> f64 {
    1e-4
}
fn default_p() -> f64 {
    4.0
}
fn default_atoms() -> Vec<ControlAtom> {
    vec![
        ControlAtom {
            field: ControlField::A,
            wall: Wall::Bottom,
            mode: 1,
            profile: TimeProfile::Constant,
        },
        ControlAtom {
            field: ControlField::B,
            wall: Wall::Top,
            mode: 1,
            profile: TimeProfile::Constant,
        },
    ]
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            modes: default_control_modes(),
            time_nodes: default_time_nodes(),
            radius: default_radius(),
            lambda1: default_lambda(),
            lambda2: default_lambda(),
            p: default_p(),
            atoms: default_atoms(),
            apply: vec![],
            compare: vec![],
            target: vec![],
            initial: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    #[serde(default = "default_c0")]
    pub c0: f64,
    #[serde(default = "default_c0")]
    pub c2: f64,
    /// Defaults to `2K` with `K` the noise Lipschitz constant.
    #[serde(default)]
    pub c3: Option<f64>,
    /// Basis size used as the stand-in for the limit solution; defaults to `2n`.
    #[serde(default)]
    pub refined_size: Option<usize>,
}

fn default_c0() -> f64 {
    1.0
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            c0: 1.0,
            c2: 1.0,
            c3: None,
            refined_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 lets the runtime decide.
    #[serde(default)]
    pub threads: usize,
}

fn default_paths() -> usize {
    100
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        MonteCarloConfig {
            paths: default_paths(),
            seed: 0,
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub basis: BasisConfig,
    pub time: TimeSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default = "InitialCondition::zero")]
    pub initial: InitialCondition,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSpec,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub monte_carlo: MonteCarloConfig,
    #[serde(default = "default_output")]
    pub output_dir: String,
}

fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec {
        kind: Default::default(),
        budget: 30,
        step: 0.1,
        gain: 0.1,
        seed: 0,
    }
}

fn default_output() -> String {
    "slipflow-out".into()
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.time.validate()?;
        self.noise.validate()?;
        self.admissible().validate()?;
        if self.basis.size == 0 {
            return Err(Error::InvalidConfig("basis size must be at least 1".into()));
        }
        if self.monte_carlo.paths == 0 {
            return Err(Error::InvalidConfig("paths must be at least 1".into()));
        }
        if self.control.modes > self.domain.modes_x {
            return Err(Error::InvalidConfig(format!(
                "control modes {} exceed the resolved band {}",
                self.control.modes, self.domain.modes_x
            )));
        }
        if !(self.initial.amplitude.is_finite() && self.initial.decay.is_finite()) {
            return Err(Error::InvalidConfig(
                "initial condition must be finite".into(),
            ));
        }
        if !(self.diagnostics.c0 >= 0.0 && self.diagnostics.c2 >= 0.0) {
            return Err(Error::InvalidConfig(
                "diagnostic constants must be nonnegative".into(),
            ));
        }
        let d = self.control.atoms.len();
        for (name, v) in [
            ("apply", &self.control.apply),
            ("compare", &self.control.compare),
            ("target", &self.control.target),
            ("initial", &self.control.initial),
        ] {
            if !v.is_empty() && v.len() != d {
                return Err(Error::InvalidConfig(format!(
                    "control.{name} has {} entries for {d} atoms",
                    v.len()
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the thread count and output location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.monte_carlo.threads = 0;
        c.output_dir.clear();
        let text = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn admissible(&self) -> AdmissibleSpec {
        AdmissibleSpec {
            modes: self.control.modes,
            time_nodes: self.control.time_nodes,
            radius: self.control.radius,
            lambda1: self.control.lambda1,
            lambda2: self.control.lambda2,
            p: self.control.p,
        }
    }

    pub fn stability_constants(&self) -> StabilityConstants {
        StabilityConstants {
            c0: self.diagnostics.c0,
            c2: self.diagnostics.c2,
            c3: self
                .diagnostics
                .c3
                .unwrap_or(2.0 * self.noise.lipschitz_k()),
        }
    }

    /// Control for a parameter list, zero when the list is empty.
    pub fn params_or_zero(&self, v: &[f64]) -> Vec<f64> {
        if v.is_empty() {
            vec![0.0; self.control.atoms.len()]
        } else {
            v.to_vec()
        }
    }
}

/// Basis, lifting and model built from one configuration.
pub struct Workbench {
    pub config: RunConfig,
    pub model: GalerkinModel,
    pub param: Parametrization,
    pub beta0: Vec<f64>,
}

impl Workbench {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let basis = build_eigenbasis(&config.domain, config.basis.size)?;
        Self::with_basis(config, basis)
    }

    pub fn with_basis(config: &RunConfig, basis: Basis) -> Result<Self> {
        if basis.spec != config.domain {
            return Err(Error::InvalidConfig(
                "basis artifact was built for a different domain".into(),
            ));
        }
        let solver = LiftSolver::new(&basis.grid)?;
        let lift = LiftOperator::new(&solver, config.control.modes)?;
        let beta0 = config.initial.coefficients(&basis.eigenvalues());
        let model = GalerkinModel::new(basis, lift, config.noise.clone(), config.time.clone())?;
        let param = Parametrization::new(
            &config.control.atoms,
            config.domain.length_x,
            &config.admissible(),
            config.time.horizon,
        )?;
        Ok(Workbench {
            config: config.clone(),
            model,
            param,
            beta0,
        })
    }

    pub fn control(&self, params: &[f64]) -> Result<BoundaryControl> {
        self.param.control(&self.config.params_or_zero(params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
        [domain]
        length_x = 6.283185307179586
        modes_x = 2
        nodes_y = 12
        friction_alpha = 0.5
        viscosity = 0.5

        [basis]
        size = 6

        [time]
        horizon = 0.2
        dt = 0.05
    "#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(c.monte_carlo.paths, 100);
        assert_eq!(c.control.atoms.len(), 2);
        assert_eq!(c.hash(), RunConfig::from_toml(SAMPLE).unwrap().hash());
        let mut d = c.clone();
        d.monte_carlo.threads = 4;
        assert_eq!(d.hash(), c.hash());
        d.time.dt = 0.01;
        assert_ne!(d.hash(), c.hash());
    }

    #[test]
    fn rejects_bad_values() {
        let bad = SAMPLE.replace("dt = 0.05", "dt = 0.0");
        assert!(matches!(
            RunConfig::from_toml(&bad),
            Err(Error::InvalidConfig(_))
        ));
        let unknown = format!("{SAMPLE}\n[extra]\nx = 1\n");
        assert!(RunConfig::from_toml(&unknown).is_err());
    }

    #[test]
    fn workbench_builds() {
        let c = RunConfig::from_toml(SAMPLE).unwrap();
        let w = Workbench::new(&c).unwrap();
        assert_eq!(w.model.dim(), 6);
        assert_eq!(w.control(&[]).unwrap().max_abs(), 0.0);
    }
}
