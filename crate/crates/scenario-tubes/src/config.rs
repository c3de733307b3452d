//! Run configuration: one JSON document per run.
//!
//! The schema is flat and strict (unknown keys are rejected). A run either
//! spells out its model or names a preset; presets bundle the model, the
//! matching plant, and campaign defaults. Every command writes the resolved
//! configuration next to its outputs so a run can be reproduced from its
//! artifacts alone.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::basis::{BasisFamily, KernelSpec};
use crate::certificates::ConfidenceSchedule;
use crate::error::{Error, Result};
use crate::functionals::{Functional, FunctionalKind, Orientation};
use crate::grid::build_grid;
use crate::model::{CoeffDistribution, Dataset, FunctionModel, NoiseDistribution};
use crate::plants::{
    example1_model, furuta_plant, haar_model, FurutaParams, Plant, SyntheticPlant,
    EXAMPLE1_DEFAULT_SEED,
};
use crate::safe_bo::{SafeBoConfig, Threshold};
use crate::tube::{TubeMethodChoice, TubeOptions};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "SCENARIO_TUBES_OUT";

/// Lengthscale of the simulated-pendulum surrogate model. Wide enough that
/// one observation vouches for a neighborhood of the 41 x 41 gain grid.
pub const FURUTA_LENGTHSCALE: f64 = 0.18;

/// Coefficient variance of the pendulum surrogate; together with the
/// lengthscale this puts the prior pointwise spread near +-2, generous for
/// outputs that live in [-1.6, 1.6].
pub const FURUTA_COEFF_VARIANCE: f64 = 5e-3;

/// Default gain grid of the pendulum preset (41 x 41 over the unit square).
pub const FURUTA_POINTS_PER_AXIS: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresetName {
    Example1,
    Haar,
    Furuta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetConfig {
    pub name: PresetName,
    /// Grid points per axis (defaults: 1000 for the synthetic presets, 41
    /// for the pendulum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    /// Seed of the fixed ground-truth draw (synthetic presets).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub bounds: Vec<(f64, f64)>,
    pub points_per_axis: Vec<usize>,
    pub bases: Vec<BasisFamily>,
    pub prior: CoeffDistribution,
    pub noise: NoiseDistribution,
}

impl ModelConfig {
    pub fn build(&self) -> Result<FunctionModel> {
        let grid = build_grid(&self.bounds, &self.points_per_axis)?;
        FunctionModel::new(grid, self.bases.clone(), self.prior, self.noise)
    }

    pub fn from_model(model: &FunctionModel) -> Self {
        ModelConfig {
            bounds: model.grid.bounds().to_vec(),
            points_per_axis: model.grid.points_per_axis().to_vec(),
            bases: model.bases.clone(),
            prior: model.prior,
            noise: model.noise,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// CSV file in the dataset schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Inline parameters (must lie on the grid).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Vec<f64>>>,
    /// Inline observation rows, one per parameter, one value per output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarConfig {
    pub functional: FunctionalKind,
    #[serde(default = "default_orientation")]
    pub orientation: Orientation,
    #[serde(default)]
    pub output: usize,
    #[serde(default)]
    pub discards: usize,
}

fn default_orientation() -> Orientation {
    Orientation::Upper
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafeBoSection {
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Explicit thresholds; presets fill these when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<Vec<Threshold>>,
    /// For synthetic presets: place the reward threshold at this quantile of
    /// the seeded truth.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_quantile: Option<f64>,
    /// Initial safe parameters (coordinates on the grid); presets fill a
    /// default when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_safe_points: Option<Vec<Vec<f64>>>,
    /// Write one tube CSV per iteration.
    #[serde(default)]
    pub write_tubes: bool,
}

fn default_horizon() -> usize {
    20
}

fn default_nu() -> f64 {
    0.1
}

fn default_kappa() -> f64 {
    1e-3
}

fn default_iteration() -> usize {
    1
}

/// The run-level configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Iteration index `t` entering the confidence schedule.
    #[serde(default = "default_iteration")]
    pub iteration: usize,
    #[serde(default)]
    pub method: TubeMethodChoice,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scalar: Option<ScalarConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safe_bo: Option<SafeBoSection>,
    #[serde(default)]
    pub tube_options: TubeOptions,
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, level) in [("nu", self.nu), ("kappa", self.kappa)] {
            if !(level.is_finite() && 0.0 < level && level < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0,1)")));
            }
        }
        if self.iteration < 1 {
            return Err(Error::Config("iteration must be >= 1".into()));
        }
        if self.preset.is_none() && self.model.is_none() {
            return Err(Error::Config(
                "either a preset or an explicit model is required".into(),
            ));
        }
        Ok(())
    }

    /// Output directory: flag/config value, else the environment override,
    /// else `runs/<seed>`.
    pub fn resolve_out_dir(&self) -> PathBuf {
        if let Some(dir) = &self.out_dir {
            return dir.clone();
        }
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            if !dir.is_empty() {
                return PathBuf::from(dir);
            }
        }
        PathBuf::from(format!("runs/seed-{}", self.seed))
    }

    /// Build the model, plant, and campaign pieces this config describes.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        self.validate()?;
        let mut resolved = self.clone();

        let (model, plant): (FunctionModel, Option<Box<dyn Plant>>) = match &self.preset {
            Some(preset) => {
                let (model, plant) = build_preset(preset, self.seed)?;
                resolved.model = Some(ModelConfig::from_model(&model));
                (model, Some(plant))
            }
            None => {
                let model = self
                    .model
                    .as_ref()
                    .expect("validated: model present when no preset")
                    .build()?;
                (model, None)
            }
        };

        let dataset = match &self.dataset {
            None => Dataset::empty(model.outputs()),
            Some(cfg) => {
                if let Some(path) = &cfg.path {
                    crate::io::read_dataset_csv(path, &model.grid, model.outputs())?
                } else {
                    let points = cfg.points.clone().unwrap_or_default();
                    let rows = cfg.observations.clone().unwrap_or_default();
                    Dataset::from_observations(&model.grid, &points, &rows)?
                }
            }
        };

        let safe_bo = match &self.safe_bo {
            None => None,
            Some(section) => Some(self.build_safe_bo(section, &model, plant.as_deref())?),
        };

        Ok(ResolvedRun {
            config: resolved,
            model,
            plant,
            dataset,
            safe_bo,
            scalar: self.scalar.clone(),
        })
    }

    fn build_safe_bo(
        &self,
        section: &SafeBoSection,
        model: &FunctionModel,
        plant: Option<&dyn Plant>,
    ) -> Result<SafeBoConfig> {
        let preset_name = self.preset.as_ref().map(|p| p.name);

        let initial_safe: Vec<usize> = match &section.initial_safe_points {
            Some(points) => points
                .iter()
                .map(|p| model.grid.locate(p))
                .collect::<Result<_>>()?,
            None => match preset_name {
                Some(PresetName::Example1) | Some(PresetName::Haar) => {
                    // Grid point closest to 0.53.
                    let n = model.grid.len();
                    vec![((0.53 * (n - 1) as f64).round() as usize).min(n - 1)]
                }
                Some(PresetName::Furuta) => {
                    vec![model.grid.locate(&[0.225, 0.40])?]
                }
                None => {
                    return Err(Error::Config(
                        "initial_safe_points is required without a preset".into(),
                    ))
                }
            },
        };

        let thresholds = match (&section.thresholds, preset_name) {
            (Some(ts), _) => ts.clone(),
            (None, Some(PresetName::Furuta)) => vec![
                Threshold {
                    output: 1,
                    min: 0.0,
                },
                Threshold {
                    output: 2,
                    min: 0.0,
                },
            ],
            (None, Some(_)) => {
                // Synthetic presets: threshold at a truth quantile.
                let q = section.threshold_quantile.unwrap_or(0.2);
                let plant = plant.ok_or_else(|| {
                    Error::Config("quantile threshold needs a synthetic plant".into())
                })?;
                let mut values: Vec<f64> = (0..model.grid.len())
                    .filter_map(|p| plant.truth(model.grid.point(p)).map(|v| v[0]))
                    .collect();
                if values.is_empty() {
                    return Err(Error::Config(
                        "plant does not expose truth for quantile thresholds".into(),
                    ));
                }
                values.sort_by(f64::total_cmp);
                let idx = ((values.len() as f64 - 1.0) * q).round() as usize;
                vec![Threshold {
                    output: 0,
                    min: values[idx],
                }]
            }
            (None, None) => {
                return Err(Error::Config(
                    "thresholds are required without a preset".into(),
                ))
            }
        };

        Ok(SafeBoConfig {
            thresholds,
            initial_safe,
            horizon: section.horizon,
            nu: self.nu,
            schedule: ConfidenceSchedule::new(self.kappa)?,
            method: self.method,
            tube_options: self.tube_options,
            keep_tubes: section.write_tubes,
        })
    }
}

/// Everything a command needs, built from one config.
pub struct ResolvedRun {
    pub config: RunConfig,
    pub model: FunctionModel,
    pub plant: Option<Box<dyn Plant>>,
    pub dataset: Dataset,
    pub safe_bo: Option<SafeBoConfig>,
    pub scalar: Option<ScalarConfig>,
}

impl ResolvedRun {
    pub fn functional(&self) -> Result<(Functional, usize, usize)> {
        let scalar = self
            .scalar
            .as_ref()
            .ok_or_else(|| Error::Config("a scalar section is required".into()))?;
        Ok((
            Functional {
                kind: scalar.functional,
                orientation: scalar.orientation,
            },
            scalar.output,
            scalar.discards,
        ))
    }
}

/// Three-output Matérn surrogate over the pendulum gain box.
pub fn furuta_model(points_per_axis: usize) -> Result<FunctionModel> {
    let grid = build_grid(
        &[(0.0, 1.0), (0.0, 1.0)],
        &[points_per_axis, points_per_axis],
    )?;
    let basis = BasisFamily::KernelSections {
        kernel: KernelSpec::Matern32 {
            lengthscale: FURUTA_LENGTHSCALE,
        },
    };
    FunctionModel::new(
        grid,
        vec![basis.clone(), basis.clone(), basis],
        CoeffDistribution::gaussian(0.0, FURUTA_COEFF_VARIANCE)?,
        NoiseDistribution::uniform(0.05)?,
    )
}

fn build_preset(
    preset: &PresetConfig,
    _run_seed: u64,
) -> Result<(FunctionModel, Box<dyn Plant>)> {
    let truth_seed = preset.truth_seed.unwrap_or(EXAMPLE1_DEFAULT_SEED);
    match preset.name {
        PresetName::Example1 => {
            let n = preset.points.unwrap_or(1000);
            let model = example1_model(n)?;
            let plant = SyntheticPlant::from_model(&model, truth_seed)?;
            Ok((model, Box::new(plant)))
        }
        PresetName::Haar => {
            let n = preset.points.unwrap_or(1000);
            let model = haar_model(n)?;
            let plant = SyntheticPlant::from_model(&model, truth_seed)?;
            Ok((model, Box::new(plant)))
        }
        PresetName::Furuta => {
            let n = preset.points.unwrap_or(FURUTA_POINTS_PER_AXIS);
            let model = furuta_model(n)?;
            let plant = furuta_plant(
                FurutaParams::qube_preset(),
                NoiseDistribution::uniform(0.05)?,
            );
            Ok((model, Box::new(plant)))
        }
    }
}
