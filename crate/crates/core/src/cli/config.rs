use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregation::AggregationConfig;
use crate::dedup::DuplicityConfig;
use crate::error::{Error, Result};
use crate::geolocation::GeolocationConfig;
use crate::inference::InferenceConfig;
use crate::simulator::{files, Scenario};

/// Input files of the pipeline. Unset entries point into the simulator's output directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InputPaths {
    pub events: Option<PathBuf>,
    pub signal: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub simulation: Option<PathBuf>,
    pub antenna_cells: Option<PathBuf>,
    pub regions: Option<PathBuf>,
    pub register: Option<PathBuf>,
    pub pnt_rate: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeolocationSection {
    #[serde(flatten)]
    pub model: GeolocationConfig,
    pub posterior_prefix: String,
    pub joint_prefix: String,
}

impl Default for GeolocationSection {
    fn default() -> Self {
        GeolocationSection {
            model: GeolocationConfig::default(),
            posterior_prefix: "postLocDevice".into(),
            joint_prefix: "postLocJointProbDevice".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceSection {
    #[serde(flatten)]
    pub model: InferenceConfig,
    /// Also write the individual population draws.
    pub write_draws: bool,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            model: InferenceConfig::default(),
            write_draws: true,
        }
    }
}

/// Settings of every layer plus the orchestration options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub workers: usize,
    pub cache_dir: PathBuf,
    pub no_cache: bool,
    /// When present, `simulate` writes the inputs into `output_dir/sim`.
    pub scenario: Option<Scenario>,
    pub inputs: InputPaths,
    pub geolocation: GeolocationSection,
    pub dedup: DuplicityConfig,
    pub aggregation: AggregationConfig,
    pub inference: InferenceSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            output_dir: PathBuf::from("mobcount-out"),
            seed: 1,
            workers: 1,
            cache_dir: PathBuf::from(".mobcount-cache"),
            no_cache: false,
            scenario: Some(Scenario::default()),
            inputs: InputPaths::default(),
            geolocation: GeolocationSection::default(),
            dedup: DuplicityConfig::default(),
            aggregation: AggregationConfig::default(),
            inference: InferenceSection::default(),
        }
    }
}

/// Resolved input locations.
#[derive(Debug, Clone, PartialEq)]
pub struct Inputs {
    pub events: PathBuf,
    pub signal: PathBuf,
    pub grid: PathBuf,
    pub simulation: PathBuf,
    pub antenna_cells: Option<PathBuf>,
    pub regions: PathBuf,
    pub register: PathBuf,
    pub pnt_rate: PathBuf,
}

impl PipelineConfig {
    /// Parses a TOML file; relative paths inside are taken from the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: PipelineConfig = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.cache_dir);
        let i = &mut self.inputs;
        for p in [
            &mut i.events,
            &mut i.signal,
            &mut i.grid,
            &mut i.simulation,
            &mut i.antenna_cells,
            &mut i.regions,
            &mut i.register,
            &mut i.pnt_rate,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    /// Pushes the global seed and worker count into every layer.
    pub fn propagate(&mut self) {
        self.geolocation.model.seed = self.seed;
        self.geolocation.model.workers = self.workers;
        self.dedup.workers = self.workers;
        self.aggregation.seed = self.seed;
        self.aggregation.workers = self.workers;
        self.inference.model.seed = self.seed;
        self.inference.model.workers = self.workers;
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::invalid("worker count must be positive"));
        }
        if self.geolocation.model.retrain == 0 {
            return Err(Error::invalid("retrain must be positive"));
        }
        if self.aggregation.n_draws == 0 {
            return Err(Error::invalid("number of draws must be positive"));
        }
        let level = self.inference.model.ci_level;
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::invalid(format!("CI level {level} outside (0, 1)")));
        }
        self.dedup.validate()
    }

    pub fn sim_dir(&self) -> PathBuf {
        self.output_dir.join("sim")
    }

    pub fn geolocation_dir(&self) -> PathBuf {
        self.output_dir.join("geolocation")
    }

    pub fn dedup_dir(&self) -> PathBuf {
        self.output_dir.join("dedup")
    }

    pub fn aggregation_dir(&self) -> PathBuf {
        self.output_dir.join("aggregation")
    }

    pub fn inference_dir(&self) -> PathBuf {
        self.output_dir.join("inference")
    }

    pub fn inputs(&self) -> Inputs {
        let sim = self.sim_dir();
        let pick = |p: &Option<PathBuf>, name: &str| p.clone().unwrap_or_else(|| sim.join(name));
        let i = &self.inputs;
        let cells = pick(&i.antenna_cells, files::CELLS);
        Inputs {
            events: pick(&i.events, files::EVENTS),
            signal: pick(&i.signal, files::SIGNAL),
            grid: pick(&i.grid, files::GRID),
            simulation: pick(&i.simulation, files::PARAMS),
            antenna_cells: (i.antenna_cells.is_some() || self.scenario.is_some() || cells.exists())
                .then_some(cells),
            regions: pick(&i.regions, files::REGIONS),
            register: pick(&i.register, files::REGISTER),
            pnt_rate: pick(&i.pnt_rate, files::PNT_RATE),
        }
    }
}
