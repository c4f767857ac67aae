//! Long-sequence schedulers: parallel multi-window, sliding window, and
//! FIFO diagonal denoising.

mod fifo;
mod plan;
mod pmwd;
mod sliding;

pub use fifo::{diagonal_levels, fifo_generate, FifoStep};
pub use plan::{admissible_counts, plan_windows, WindowPlan};
pub use pmwd::{pmwd_generate, pmwd_generate_traced, BoundaryCondition, PmwdOptions, PmwdStep};
pub use sliding::sliding_window_generate;

use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::{LatentSequence, TimestepVector};
use crate::model::Denoiser;
use crate::numerics::Matrix;
use crate::rng::SeedStream;
use crate::schedule::{sampler_step, FrameNoise, NoiseSchedule};

const INIT_TAG: u64 = 0x696e_6974;
const STEP_TAG: u64 = 0x7374_6570;
const RENOISE_TAG: u64 = 0x7265_6e6f;

/// Shared sampler settings.
#[derive(Clone, Copy, Debug)]
pub struct Sampling<'a> {
    pub schedule: &'a NoiseSchedule,
    /// 0 is deterministic DDIM, 1 matches ancestral sampling.
    pub eta: f64,
    pub seed: SeedStream,
}

impl Sampling<'_> {
    /// Starting noise for absolute frames `start..start+frames`; each row
    /// depends only on its frame index.
    pub fn initial_noise(&self, start: usize, frames: usize, dim: usize) -> Matrix {
        let base = self.seed.derive(INIT_TAG);
        let data: Vec<f64> = (start..start + frames)
            .flat_map(|f| base.derive(f as u64).normal_vec(dim))
            .collect();
        Matrix::from_vec(frames, dim, data).expect("sized above")
    }

    /// Per-step sampler noise keyed by absolute frame and level.
    pub fn step_noise(&self) -> FrameNoise {
        FrameNoise::new(self.seed.derive(STEP_TAG))
    }

    /// Forward-process noise for re-noising frame `frame` in pass `pass`.
    pub fn renoise(&self, frame: usize, pass: usize, dim: usize) -> Vec<f64> {
        self.seed.derive(RENOISE_TAG).derive2(frame as u64, pass as u64).normal_vec(dim)
    }
}

/// Denoises the frames after the first `fixed` from `T` to 0, one level per
/// step, holding the first `fixed` frames at level `fixed_t`. `offset` is
/// the absolute index of row 0.
pub(crate) fn denoise_span<D: Denoiser + ?Sized>(
    denoiser: &D,
    z: Matrix,
    fixed: usize,
    fixed_t: usize,
    prompts: &PromptTrack,
    sampling: &Sampling<'_>,
    offset: usize,
) -> Result<Matrix> {
    let frames = z.rows();
    ensure!(prompts.frames() == frames, Contract, "{} prompts for {frames} frames", prompts.frames());
    ensure!(fixed <= frames, Contract, "{fixed} fixed frames of {frames}");
    let steps = sampling.schedule.steps();
    ensure!(fixed_t <= steps, Range, "history level {fixed_t} beyond {steps}");
    let noise = sampling.step_noise().shifted(offset);
    let levels = |t: usize| TimestepVector::new((0..frames).map(|f| if f < fixed { fixed_t } else { t }).collect());
    let mut seq = LatentSequence::new(z, levels(steps))?;
    for t in (1..=steps).rev() {
        let x0 = denoiser.evaluate(seq.latents(), seq.timesteps(), prompts)?;
        seq = sampler_step(&seq, &x0, &levels(t - 1), sampling.schedule, sampling.eta, &noise)?;
    }
    Ok(seq.into_parts().0)
}
