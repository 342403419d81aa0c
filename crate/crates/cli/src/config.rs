//! Experiment configuration files (JSON).

use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use relkin_core::fields::{GridChannel, SampledGrid};
use relkin_core::free_particle::FreeParticleSolution;
use relkin_core::sde::Direction;
use relkin_core::{DriftFields, EMPotential, Gauge, GaugeSpec, LorentzTransform, PhysicalConstants};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Must match the experiment named on the command line when present.
    pub experiment: Option<String>,
    #[serde(default)]
    pub natural_units: bool,
    pub constants: Option<ConstantsBlock>,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default)]
    pub gauge: GaugeSpec,
    pub simulation: Option<SimulationBlock>,
    pub grid: Option<GridBlock>,
    pub output: Option<PathBuf>,
    /// Per-check tolerance overrides keyed by check name.
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
pub enum ConstantsBlock {
    Preset { preset: Preset },
    Values { m: f64, q: f64, c: f64, h: f64 },
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Electron,
    Natural,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    FreeParticleRest {
        #[serde(default)]
        boost: Option<[f64; 3]>,
    },
    ConstantPotential {
        potential: f64,
        #[serde(default)]
        boost: Option<[f64; 3]>,
    },
    LinearPotential {
        slope: f64,
    },
    Grid {
        path: PathBuf,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::FreeParticleRest { boost: None }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationBlock {
    pub step: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub seed: Option<u64>,
    #[serde(default = "forward")]
    pub direction: Direction,
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub x0: [f64; 4],
    #[serde(default)]
    pub s0: f64,
}

fn forward() -> Direction {
    Direction::Forward
}

fn one() -> usize {
    1
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub lengths: Vec<f64>,
    pub points: Vec<usize>,
    /// Constant coefficients; when absent the field is restricted to `axes`.
    pub v: Option<Vec<f64>>,
    pub w: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub axes: Option<Vec<usize>>,
    #[serde(default)]
    pub base: [f64; 4],
    pub n_modes: Option<usize>,
    #[serde(default)]
    pub x0_index: usize,
}

/// Experiment-specific knobs; every entry is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Params {
    pub taus: Option<Vec<f64>>,
    pub c_values: Option<Vec<f64>>,
    pub delta_g: Option<f64>,
    pub n_random: Option<usize>,
    pub window: Option<f64>,
    pub interval: Option<[f64; 2]>,
    pub split: Option<[f64; 3]>,
    pub points: Option<Vec<[f64; 4]>>,
    pub fd_step: Option<f64>,
    pub moving_drift: Option<[f64; 3]>,
}

/// Configuration errors map to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<relkin_core::Error> for ConfigError {
    fn from(e: relkin_core::Error) -> Self {
        ConfigError(e.to_string())
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
    serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))
}

impl ExperimentConfig {
    pub fn constants(&self, force_natural: bool) -> Result<PhysicalConstants, ConfigError> {
        if force_natural || self.natural_units {
            if self.constants.is_some() && !force_natural {
                return Err(ConfigError(
                    "give either \"natural_units\": true or a constants block, not both".into(),
                ));
            }
            return Ok(PhysicalConstants::natural());
        }
        match &self.constants {
            None => Err(ConfigError(
                "a constants block or \"natural_units\": true is required".into(),
            )),
            Some(ConstantsBlock::Preset { preset: Preset::Electron }) => Ok(PhysicalConstants::electron()),
            Some(ConstantsBlock::Preset { preset: Preset::Natural }) => Ok(PhysicalConstants::natural()),
            Some(ConstantsBlock::Values { m, q, c, h }) => Ok(PhysicalConstants::new(*m, *q, *c, *h)?),
        }
    }

    pub fn gauge(&self) -> Result<Gauge, ConfigError> {
        Ok(self.gauge.build()?)
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.tolerances.get(name).copied().unwrap_or(default)
    }
}

/// Fields resolved from a [`FieldSpec`].
pub struct ResolvedField {
    pub drifts: DriftFields,
    pub potential: EMPotential,
    /// Closed-form solution when the field is a (possibly boosted) free particle.
    pub solution: Option<FreeParticleSolution>,
    pub analytic_derivatives: bool,
}

fn free_particle(k: &PhysicalConstants, gauge: &Gauge, boost: Option<[f64; 3]>) -> Result<FreeParticleSolution, ConfigError> {
    Ok(match boost {
        None => FreeParticleSolution::rest_solution(k, gauge.clone())?,
        Some(beta) => {
            let l = LorentzTransform::boost(beta)?;
            FreeParticleSolution::boosted_solution(k, gauge.clone(), &l)?
        }
    })
}

pub fn resolve_field(
    spec: &FieldSpec,
    k: &PhysicalConstants,
    gauge: &Gauge,
    base_dir: &Path,
) -> Result<ResolvedField, ConfigError> {
    match spec {
        FieldSpec::FreeParticleRest { boost } => {
            let sol = free_particle(k, gauge, *boost)?;
            Ok(ResolvedField {
                drifts: sol.drifts(),
                potential: EMPotential::zero(),
                solution: Some(sol),
                analytic_derivatives: true,
            })
        }
        FieldSpec::ConstantPotential { potential, boost } => {
            let sol = free_particle(k, gauge, *boost)?;
            Ok(ResolvedField {
                drifts: sol.drifts(),
                potential: EMPotential::constant_scalar(*potential, k.c),
                solution: Some(sol),
                analytic_derivatives: true,
            })
        }
        FieldSpec::LinearPotential { slope } => Ok(ResolvedField {
            drifts: DriftFields::free_particle_rest(k),
            potential: EMPotential::linear(*slope),
            solution: None,
            analytic_derivatives: true,
        }),
        FieldSpec::Grid { path } => {
            let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
            let file = File::open(&full)
                .map_err(|e| ConfigError(format!("grid field {}: {e}", full.display())))?;
            let grid = Arc::new(SampledGrid::from_csv_reader(file)?);
            let potential = if grid.has_potential() {
                EMPotential::new(Arc::new(grid.field(GridChannel::Potential)))
            } else {
                EMPotential::zero()
            };
            Ok(ResolvedField {
                drifts: DriftFields::new(
                    Arc::new(grid.field(GridChannel::Osmotic)),
                    Arc::new(grid.field(GridChannel::Current)),
                ),
                potential,
                solution: None,
                analytic_derivatives: false,
            })
        }
    }
}
