//! Run configuration: one TOML file plus dotted `--set` overrides.

use std::fmt;
use std::path::{Path, PathBuf};

use driftless_core::inference::plan_windows;
use driftless_core::model::DenoiserConfig;
use driftless_core::schedule::ScheduleConfig;
use driftless_core::synthworld::{World, WorldParams};
use driftless_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, IoContext, Result};

/// The configuration shipped with the repository.
pub const DEFAULT_CONFIG: &str = include_str!("../../../configs/default.toml");

/// File name of the resolved config written into every artifact directory.
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pmwd,
    Sliding,
    Fifo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Frame,
    Global,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pmwd => "pmwd",
            Mode::Sliding => "sliding",
            Mode::Fifo => "fifo",
        })
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Frame => "frame",
            PromptMode::Global => "global",
        })
    }
}

/// Training corpus shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub clips: usize,
    pub frames: usize,
    pub min_scenes: usize,
    pub max_scenes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { clips: 256, frames: 21, min_scenes: 1, max_scenes: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceConfig {
    pub mode: Mode,
    pub prompt: PromptMode,
    /// Total frames per generated sequence.
    pub frames: usize,
    pub window: usize,
    /// Window count for pmwd.
    pub windows: usize,
    /// New frames per pass for sliding.
    pub slide: usize,
    pub t_history: usize,
    pub eta: f64,
    /// Scenes per benchmark script.
    pub scenes: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Pmwd,
            prompt: PromptMode::Frame,
            frames: 126,
            window: 21,
            windows: 8,
            slide: 15,
            t_history: 0,
            eta: 0.0,
            scenes: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkConfig {
    /// Benchmark sequences per variant; run `i` draws its script and noise
    /// from a stream derived from the master seed and `i`.
    pub runs: usize,
    /// Floor on Confusion Degree normalizers.
    pub denom_floor: f64,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { runs: 10, denom_floor: driftless_core::metrics::DEFAULT_DENOM_FLOOR }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed for data, initialization and benchmark scripts.
    pub seed: u64,
    pub out: PathBuf,
    pub world: WorldParams,
    pub data: DataConfig,
    pub model: DenoiserConfig,
    pub schedule: ScheduleConfig,
    pub train: TrainConfig,
    pub inference: InferenceConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs/default"),
            world: WorldParams::default(),
            data: DataConfig::default(),
            model: DenoiserConfig::default(),
            schedule: ScheduleConfig::default(),
            train: TrainConfig::default(),
            inference: InferenceConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or the shipped default), applies `--set` overrides in
    /// order, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let (text, origin) = match path {
            Some(p) => (std::fs::read_to_string(p).at(p)?, p.to_path_buf()),
            None => (DEFAULT_CONFIG.to_string(), PathBuf::from("<default config>")),
        };
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Toml(origin.clone(), e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Toml(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// Writes the resolved config into `dir`.
    pub fn write_into(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).at(dir)?;
        let path = dir.join(CONFIG_FILE);
        std::fs::write(&path, self.to_toml()).at(path)
    }

    /// Reports the first inconsistency.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        World::new(self.world.clone())?;
        self.model.validate()?;
        self.train.validate()?;
        let schedule = self.schedule.build()?;
        let (m, w, inf) = (&self.model, &self.world, &self.inference);
        if schedule.steps() != m.steps {
            return bad(format!("schedule.steps {} differs from model.steps {}", schedule.steps(), m.steps));
        }
        if w.latent_dim != m.latent_dim || w.text_dim != m.text_dim {
            return bad(format!(
                "world dims ({}, {}) differ from model dims ({}, {})",
                w.latent_dim, w.text_dim, m.latent_dim, m.text_dim
            ));
        }
        if m.text_tokens != 1 {
            return bad(format!("the scene embedder emits 1 token per caption, model.text_tokens is {}", m.text_tokens));
        }
        if self.data.clips == 0 {
            return bad("data.clips must be at least 1".into());
        }
        if self.data.frames < m.window {
            return bad(format!("data.frames {} is shorter than model.window {}", self.data.frames, m.window));
        }
        if !(1..=self.data.max_scenes).contains(&self.data.min_scenes) || self.data.max_scenes > self.data.frames {
            return bad(format!("scene range {}..={} does not fit {} frames", self.data.min_scenes, self.data.max_scenes, self.data.frames));
        }
        if inf.window != m.window {
            return bad(format!("inference.window {} differs from model.window {}", inf.window, m.window));
        }
        if inf.scenes == 0 || inf.scenes > inf.frames {
            return bad(format!("cannot place {} scenes in {} frames", inf.scenes, inf.frames));
        }
        if !(0.0..=1.0).contains(&inf.eta) {
            return bad(format!("inference.eta {} outside [0, 1]", inf.eta));
        }
        if inf.t_history > m.steps {
            return bad(format!("inference.t_history {} beyond {} steps", inf.t_history, m.steps));
        }
        if inf.frames < inf.window {
            return bad(format!("inference.frames {} shorter than one window {}", inf.frames, inf.window));
        }
        match inf.mode {
            Mode::Pmwd => {
                plan_windows(inf.frames, inf.window, inf.windows)?;
            }
            Mode::Sliding => {
                if inf.slide == 0 || inf.slide >= inf.window {
                    return bad(format!("inference.slide {} must lie in [1, {})", inf.slide, inf.window));
                }
            }
            Mode::Fifo => {
                if m.steps < inf.window {
                    return bad(format!("fifo needs at least {} steps, schedule has {}", inf.window, m.steps));
                }
            }
        }
        if self.benchmark.runs == 0 {
            return bad("benchmark.runs must be at least 1".into());
        }
        if !(self.benchmark.denom_floor > 0.0) {
            return bad("benchmark.denom_floor must be positive".into());
        }
        Ok(())
    }

    /// Name of the inference variant, e.g. `pmwd-frame`.
    pub fn variant(&self) -> String {
        format!("{}-{}", self.inference.mode, self.inference.prompt)
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal when it parses
/// as one and as a bare string otherwise.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let fail = |m: &str| CliError::Override(spec.to_string(), m.to_string());
    let (key, raw) = spec.split_once('=').ok_or_else(|| fail("expected key=value"))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(fail("empty key segment"));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut node = table;
    for p in parents {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| fail(&format!("{p} is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
