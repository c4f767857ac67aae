//! Benchmark cases shared by `infer` and the acceptance suite.

use std::fmt;

use driftless_core::conditioning::{build_prompt_track, replicate_global_prompt, CaptionDocument, PromptTrack, TextEmbedder};
use driftless_core::inference::{
    fifo_generate, plan_windows, pmwd_generate, sliding_window_generate, PmwdOptions, Sampling,
};
use driftless_core::latent::LatentSequence;
use driftless_core::model::Denoiser;
use driftless_core::rng::SeedStream;
use driftless_core::schedule::NoiseSchedule;
use driftless_core::synthworld::{SceneScript, World};

use crate::config::{InferenceConfig, Mode, PromptMode, RunConfig};
use crate::error::Result;

const BENCH_TAG: u64 = 0x6265_6e63;
const SCRIPT_TAG: u64 = 1;
const NOISE_TAG: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variant {
    pub mode: Mode,
    pub prompt: PromptMode,
}

impl Variant {
    pub const fn new(mode: Mode, prompt: PromptMode) -> Self {
        Self { mode, prompt }
    }

    /// The four variants compared by the default pipeline.
    pub const BENCHMARK: [Variant; 4] = [
        Variant::new(Mode::Pmwd, PromptMode::Frame),
        Variant::new(Mode::Sliding, PromptMode::Frame),
        Variant::new(Mode::Fifo, PromptMode::Frame),
        Variant::new(Mode::Fifo, PromptMode::Global),
    ];

    pub fn of(cfg: &RunConfig) -> Self {
        Self::new(cfg.inference.mode, cfg.inference.prompt)
    }

    /// `cfg` with this variant selected.
    pub fn apply(self, cfg: &RunConfig) -> RunConfig {
        let mut c = cfg.clone();
        c.inference.mode = self.mode;
        c.inference.prompt = self.prompt;
        c
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.mode, self.prompt)
    }
}

/// Seed stream of benchmark run `run`. Every variant sees the same script
/// and the same starting noise for a given run, so comparisons are paired.
pub fn run_stream(master: u64, run: usize) -> SeedStream {
    SeedStream::new(master).derive(BENCH_TAG).derive(run as u64)
}

pub fn benchmark_script(world: &World, inf: &InferenceConfig, run: SeedStream) -> Result<SceneScript> {
    Ok(world.sample_script(inf.scenes, inf.frames, &mut run.derive(SCRIPT_TAG).rng())?)
}

pub fn prompt_track(script: &SceneScript, prompt: PromptMode, embedder: &dyn TextEmbedder) -> Result<PromptTrack> {
    let tokens = embedder.tokens();
    Ok(match prompt {
        PromptMode::Frame => build_prompt_track(&CaptionDocument::new(script.captions.clone())?, embedder, tokens)?,
        PromptMode::Global => replicate_global_prompt(&script.global_caption(), script.frames(), embedder, tokens)?,
    })
}

/// Generates one benchmark sequence for `script` with the given variant.
#[allow(clippy::too_many_arguments)]
pub fn generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    world: &World,
    schedule: &NoiseSchedule,
    inf: &InferenceConfig,
    variant: Variant,
    script: &SceneScript,
    run: SeedStream,
    eta: f64,
) -> Result<LatentSequence> {
    let prompts = prompt_track(script, variant.prompt, &world.text_embedder())?;
    let sampling = Sampling { schedule, eta, seed: run.derive(NOISE_TAG) };
    let (frames, window, dim) = (script.frames(), inf.window, world.dim());
    Ok(match variant.mode {
        Mode::Pmwd => {
            let plan = plan_windows(frames, window, inf.windows)?;
            pmwd_generate(denoiser, &plan, &prompts, &sampling, dim, &PmwdOptions::default())?
        }
        Mode::Sliding => {
            sliding_window_generate(denoiser, &prompts, window, inf.slide, inf.t_history, &sampling, dim, None)?
        }
        Mode::Fifo => fifo_generate(denoiser, &prompts, window, frames, &sampling, dim, |_| {})?,
    })
}
