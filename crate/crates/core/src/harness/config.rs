use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapt::{TrainConfig, Variant};
use crate::error::{Error, Result};
use crate::physweights::{PhysicalProperties, Property, DEFAULT_EPS};
use crate::quakesim::{BuildingSpec, GroundMotionSpec};
use crate::sigprep::PrepConfig;
use crate::Task;

/// One building of the synthetic fleet with the properties used for
/// physics weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetBuilding {
    pub id: String,
    pub stories: usize,
    pub floor_mass: f64,
    /// Elastic first-mode period the story stiffness is tuned to (s).
    pub first_period: f64,
    pub damping_ratio: f64,
    pub yield_drift: f64,
    pub hardening_ratio: f64,
    pub overstrength: f64,
    pub ductility: f64,
}

impl FleetBuilding {
    pub fn spec(&self) -> Result<BuildingSpec> {
        BuildingSpec::with_first_period(
            self.id.clone(),
            self.stories,
            self.floor_mass,
            self.first_period,
            self.damping_ratio,
            self.yield_drift,
            self.hardening_ratio,
        )
    }

    pub fn properties(&self) -> Result<PhysicalProperties> {
        let spec = self.spec()?;
        Ok(PhysicalProperties {
            id: self.id.clone(),
            stories: self.stories as f64,
            overstrength: self.overstrength,
            ductility: self.ductility,
            period: self.first_period,
            height: spec.total_height(),
        })
    }
}

/// Five archetypes with the story counts, overstrength, ductility and
/// periods of the reference steel frames.
pub fn default_fleet() -> Vec<FleetBuilding> {
    let rows = [
        ("b2", 2, 2.98, 4.10, 0.88),
        ("b4", 4, 1.75, 4.60, 1.51),
        ("b8", 8, 2.63, 3.30, 2.00),
        ("b12", 12, 2.09, 2.70, 2.70),
        ("b20", 20, 1.89, 2.61, 3.44),
    ];
    rows.into_iter()
        .map(|(id, n, omega, mu, t1)| FleetBuilding {
            id: id.into(),
            stories: n,
            floor_mass: 5.0e5,
            first_period: t1,
            damping_ratio: 0.03,
            yield_drift: 0.0075,
            hardening_ratio: 0.05,
            overstrength: omega,
            ductility: mu,
        })
        .collect()
}

/// Randomized suite of ground-motion realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MotionSuite {
    pub count: usize,
    pub seed: u64,
    pub freq_range_hz: (f64, f64),
    pub damping_range: (f64, f64),
    pub strong_duration_range_s: (f64, f64),
    pub total_duration_s: f64,
    pub rise_fraction: f64,
    pub decay_fraction: f64,
    /// Peak ground acceleration at scale 1 (m/s²).
    pub pga: f64,
    pub sample_rates_hz: Vec<f64>,
}

impl Default for MotionSuite {
    fn default() -> Self {
        MotionSuite {
            count: 14,
            seed: 2024,
            freq_range_hz: (1.0, 6.0),
            damping_range: (0.3, 0.6),
            strong_duration_range_s: (8.0, 12.0),
            total_duration_s: 20.0,
            rise_fraction: 0.25,
            decay_fraction: 0.5,
            pga: 1.0,
            sample_rates_hz: vec![50.0, 100.0, 200.0],
        }
    }
}

impl MotionSuite {
    /// Draws `count` motion specs deterministically from `seed`.
    pub fn generate(&self) -> Result<Vec<GroundMotionSpec>> {
        if self.count == 0 || self.sample_rates_hz.is_empty() {
            return Err(Error::Config(
                "motion suite needs a count and sample rates".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let draw = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| {
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        };
        let specs: Vec<GroundMotionSpec> = (0..self.count)
            .map(|i| {
                let fs = self.sample_rates_hz[rng.random_range(0..self.sample_rates_hz.len())];
                GroundMotionSpec {
                    id: format!("gm{i:03}"),
                    dominant_freq_hz: draw(&mut rng, self.freq_range_hz),
                    filter_damping: draw(&mut rng, self.damping_range),
                    strong_duration_s: draw(&mut rng, self.strong_duration_range_s),
                    total_duration_s: self.total_duration_s,
                    rise_fraction: self.rise_fraction,
                    decay_fraction: self.decay_fraction,
                    pga: self.pga,
                    scale: 1.0,
                    sample_rate_hz: fs,
                    seed: rng.random(),
                }
            })
            .collect();
        for s in &specs {
            s.validate()?;
        }
        Ok(specs)
    }
}

/// Scale factors applied to every motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleSuite {
    pub factors: Vec<f64>,
    /// When set, factors are relative to a per-building reference scale
    /// at which the median elastic peak drift of the studied story
    /// equals this value.
    pub calibrate_to_drift: Option<f64>,
}

impl Default for ScaleSuite {
    fn default() -> Self {
        ScaleSuite {
            factors: vec![0.5, 1.0, 2.0],
            calibrate_to_drift: Some(0.01),
        }
    }
}

/// Full description of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    /// 1-based story whose responses are classified.
    pub story: usize,
    pub target: String,
    /// Source buildings; all non-target buildings when empty.
    pub sources: Vec<String>,
    pub buildings: Vec<FleetBuilding>,
    pub motions: MotionSuite,
    pub scales: ScaleSuite,
    pub prep: PrepConfig,
    /// A partial `[train]` table is completed from `TrainConfig`'s own
    /// defaults.
    pub train: TrainConfig,
    pub variants: Vec<Variant>,
    pub seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    /// Folds for the lambda sweep; 1 uses the training loop's own split.
    pub sweep_folds: usize,
    pub weight_properties: Vec<Property>,
    pub eps: f64,
    /// Cap on samples kept per domain (seeded subsample).
    pub max_samples_per_domain: Option<usize>,
    /// Compute proxy A-distances on raw and adapted features.
    pub diagnostics: bool,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "default".into(),
            task: Task::Detection,
            story: 2,
            target: "b12".into(),
            sources: vec!["b4".into(), "b8".into(), "b20".into()],
            buildings: default_fleet(),
            motions: MotionSuite::default(),
            scales: ScaleSuite::default(),
            prep: PrepConfig::default(),
            train: TrainConfig::default(),
            variants: vec![Variant::Phymdan, Variant::Mdan, Variant::CCnn],
            seeds: vec![0, 1, 2],
            lambda_grid: vec![0.01, 0.1, 0.5],
            sweep_folds: 1,
            weight_properties: vec![Property::H],
            eps: DEFAULT_EPS,
            max_samples_per_domain: None,
            diagnostics: true,
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Reads TOML or JSON, chosen by file extension.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ExperimentConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text)?,
            Some("toml") => toml::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            _ => {
                return Err(Error::Config(format!(
                    "{}: config must be .toml or .json",
                    path.display()
                )))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let find = |id: &str| self.buildings.iter().find(|b| b.id == id);
        if self.story == 0 {
            return Err(Error::Config("story is 1-based".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!(
                "eps must be positive, got {}",
                self.eps
            )));
        }
        if find(&self.target).is_none() {
            return Err(Error::Config(format!(
                "target {:?} is not in the fleet",
                self.target
            )));
        }
        let sources = self.source_ids();
        if sources.is_empty() {
            return Err(Error::Config("no source buildings".into()));
        }
        for s in &sources {
            if *s == self.target {
                return Err(Error::Config(format!(
                    "target {s:?} is also listed as a source"
                )));
            }
            let b = find(s)
                .ok_or_else(|| Error::Config(format!("source {s:?} is not in the fleet")))?;
            if b.stories < self.story {
                return Err(Error::Config(format!(
                    "building {s} has no story {}",
                    self.story
                )));
            }
        }
        if find(&self.target).is_some_and(|b| b.stories < self.story) {
            return Err(Error::Config(format!("target has no story {}", self.story)));
        }
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda grid is empty".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if self.weight_properties.is_empty() {
            return Err(Error::Config("no weight properties".into()));
        }
        if self.sweep_folds == 0 {
            return Err(Error::Config("sweep_folds must be >= 1".into()));
        }
        Ok(())
    }

    pub fn source_ids(&self) -> Vec<String> {
        if self.sources.is_empty() {
            self.buildings
                .iter()
                .filter(|b| b.id != self.target)
                .map(|b| b.id.clone())
                .collect()
        } else {
            self.sources.clone()
        }
    }

    pub fn building(&self, id: &str) -> Result<&FleetBuilding> {
        self.buildings
            .iter()
            .find(|b| b.id == id)
            .ok_or_else(|| Error::Config(format!("building {id:?} is not in the fleet")))
    }
}
