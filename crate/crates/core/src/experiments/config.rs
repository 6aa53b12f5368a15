//! TOML scenario files.
//!
//! ```toml
//! alpha = 1.0
//! beta = 1.0
//! chi = 1.0
//! dim = 1
//! seed = 2024
//!
//! [kernel]
//! kind = "gaussian"
//! delta = 1.0
//!
//! [potential]
//! kind = "quadratic"
//! a = 1.0            # or matrix = [[1.0, 0.0], [0.0, 3.0]]
//!
//! [h0]
//! kind = "zero"      # or "gaussian_bump" with amplitude, variance
//!
//! [mu0]
//! kind = "gaussian"
//! params = { mean = 0.0, variance = 0.5 }
//!
//! [run]
//! epsilon = 0.01
//!
//! [sweep]
//! n_values = [32, 64, 128, 256]
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    InitialDistribution, InitialField, KernelDescriptor, Model, ModelParams, PotentialDescriptor,
};
use crate::simulate::{FieldMethod, GridSettings, ReferenceSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Constants,
    Simulate,
    PocFinite,
    PocUniform,
    EulerRate,
    Concentration,
    FieldBounds,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::Simulate => "simulate",
            Experiment::PocFinite => "poc_finite",
            Experiment::PocUniform => "poc_uniform",
            Experiment::EulerRate => "euler_rate",
            Experiment::Concentration => "concentration",
            Experiment::FieldBounds => "field_bounds",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Gaussian { delta: f64 },
    Custom {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Quadratic {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        a: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        matrix: Option<Vec<Vec<f64>>>,
    },
    Custom {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    GaussianBump { amplitude: f64, variance: f64 },
    Custom {},
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub kind: String,
    #[serde(default)]
    pub params: toml::Table,
}

impl DistributionSpec {
    pub fn to_distribution(&self) -> Result<InitialDistribution> {
        let mut t = self.params.clone();
        t.insert("kind".into(), toml::Value::String(self.kind.clone()));
        let d: InitialDistribution = toml::Value::Table(t)
            .try_into()
            .map_err(|e| Error::config(format!("mu0: {e}")))?;
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epsilon: Option<f64>,
    pub horizon: Option<f64>,
    pub n_particles: Option<usize>,
    pub field_method: Option<FieldMethod>,
    pub noise: Option<bool>,
    #[serde(default)]
    pub snapshot_steps: Vec<usize>,
    pub record_trajectory: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_values: Option<Vec<usize>>,
    pub epsilon_values: Option<Vec<f64>>,
    /// Thresholds of the concentration experiment.
    pub tail_epsilons: Option<Vec<f64>>,
    /// Finite-horizon observation time of the concentration experiment.
    pub fixed_time: Option<f64>,
    pub replications: Option<usize>,
    pub n_ref: Option<usize>,
    /// Optional second reference size, reported as a sensitivity check.
    pub n_ref_alt: Option<usize>,
    pub reference_seed: Option<ReferenceSeed>,
    pub refinement: Option<u32>,
}

/// A complete scenario: problem instance plus run and sweep settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<Experiment>,
    pub alpha: f64,
    pub beta: f64,
    pub chi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
    pub kernel: KernelSpec,
    pub potential: PotentialSpec,
    pub h0: FieldSpec,
    pub mu0: DistributionSpec,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl ScenarioConfig {
    /// The default instance: `d = 1`, `alpha = beta = chi = 1`, Gaussian `g`
    /// with `delta = 1`, `h0 = 0`, `V = x^2 / 2`, `mu0 = N(0, 1/2)`.
    pub fn default_instance() -> Self {
        let mut params = toml::Table::new();
        params.insert("mean".into(), 0.0.into());
        params.insert("variance".into(), 0.5.into());
        Self {
            experiment: None,
            alpha: 1.0,
            beta: 1.0,
            chi: 1.0,
            gamma: None,
            dim: 1,
            seed: 2024,
            kernel: KernelSpec::Gaussian { delta: 1.0 },
            potential: PotentialSpec::Quadratic {
                a: Some(1.0),
                matrix: None,
            },
            h0: FieldSpec::Zero,
            mu0: DistributionSpec {
                kind: "gaussian".into(),
                params,
            },
            run: RunSection::default(),
            grid: GridSettings::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s)?;
        c.model()?;
        Ok(c)
    }

    /// Read a TOML scenario, or the config echoed in a `manifest.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let m: super::Manifest = serde_json::from_str(&text)?;
            let mut c = m.config;
            c.experiment = Some(m.experiment);
            c.model()?;
            return Ok(c);
        }
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn model(&self) -> Result<Model> {
        if let Some(g) = self.gamma {
            if g != 1.0 {
                return Err(Error::config(format!(
                    "gamma = {g} is not supported: the field time scale is fixed to 1"
                )));
            }
        }
        let params = ModelParams::new(self.alpha, self.beta, self.chi, self.dim)?;
        let kernel = match self.kernel {
            KernelSpec::Gaussian { delta } => KernelDescriptor::gaussian(delta)?,
            KernelSpec::Custom {} => return Err(custom("kernel")),
        };
        let potential = match &self.potential {
            PotentialSpec::Quadratic {
                a: Some(a),
                matrix: None,
            } => PotentialDescriptor::isotropic(*a, self.dim)?,
            PotentialSpec::Quadratic {
                a: None,
                matrix: Some(rows),
            } => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(Error::config("potential.matrix must be square"));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                PotentialDescriptor::quadratic(DMatrix::from_row_slice(n, n, &flat))?
            }
            PotentialSpec::Quadratic { .. } => {
                return Err(Error::config(
                    "potential needs exactly one of `a` and `matrix`",
                ))
            }
            PotentialSpec::Custom {} => return Err(custom("potential")),
        };
        let h0 = match self.h0 {
            FieldSpec::Zero => InitialField::Zero,
            FieldSpec::GaussianBump {
                amplitude,
                variance,
            } => InitialField::gaussian_bump(amplitude, variance)?,
            FieldSpec::Custom {} => return Err(custom("h0")),
        };
        Model::new(params, kernel, potential, h0, self.mu0.to_distribution()?)
    }
}

fn custom(what: &str) -> Error {
    Error::Unsupported(format!(
        "custom {what} descriptors are available through the library API only"
    ))
}
