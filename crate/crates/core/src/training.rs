//! Diffusion Forcing training on synthetic clips.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{build_prompt_track, replicate_global_prompt, CaptionDocument, PromptTrack, TextEmbedder};
use crate::error::{ensure, Result};
use crate::model::{Denoiser, Dit};
use crate::numerics::{Graph, Matrix, NodeId, ParamSet};
use crate::rng::{normal_matrix, SeedStream};
use crate::schedule::{add_noise, sample_df_timesteps, NoiseSchedule, TimestepMode};
use crate::synthworld::{SceneScript, World};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Largest ramp step size; each ramp draws uniformly from `0..=s_max`.
    pub s_max: usize,
    /// Probability of fully independent per-frame timesteps.
    pub p_iid: f64,
    /// Probability of conditioning a sample on the replicated clip caption.
    pub p_global: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 1500,
            batch: 8,
            learning_rate: 2e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            s_max: 4,
            p_iid: 0.2,
            p_global: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.batch >= 1, Config, "batch must be at least 1");
        ensure!((0.0..=1.0).contains(&self.p_iid), Config, "p_iid must lie in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.p_global), Config, "p_global must lie in [0, 1]");
        ensure!(self.learning_rate >= 0.0 && self.learning_rate.is_finite(), Config, "learning rate");
        ensure!(
            (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0,
            Config,
            "Adam betas must lie in [0, 1) and eps must be positive"
        );
        Ok(())
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(params: &ParamSet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Matrix> = params.values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        Self { lr, beta1, beta2, eps, step: 0, m: zeros.clone(), v: zeros }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Matrix]) -> Result<()> {
        ensure!(grads.len() == params.len(), Dimension, "{} gradients for {} parameters", grads.len(), params.len());
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.iter().enumerate() {
            let p = params.get_mut(i);
            ensure!(g.shape() == p.shape(), Dimension, "gradient {i} shape {:?}", g.shape());
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (((w, &gk), mk), vk) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mk = self.beta1 * *mk + (1.0 - self.beta1) * gk;
                *vk = self.beta2 * *vk + (1.0 - self.beta2) * gk * gk;
                let mhat = *mk / c1;
                let vhat = *vk / c2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// One training window with its conditioning.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub z0: Matrix,
    pub prompts: PromptTrack,
}

/// Timestep policy for [`df_loss`].
#[derive(Clone, Copy, Debug)]
pub struct DfPolicy {
    pub window: usize,
    pub s_max: usize,
    pub p_iid: f64,
}

/// Draws per-frame timesteps: independent with probability `p_iid`,
/// otherwise a ramp with step size uniform in `0..=s_max`.
pub fn draw_timesteps<R: Rng + ?Sized>(policy: &DfPolicy, steps: usize, rng: &mut R) -> crate::latent::TimestepVector {
    if rng.random_bool(policy.p_iid) {
        sample_df_timesteps(policy.window, steps, 0, TimestepMode::Iid, rng)
    } else {
        let step_size = rng.random_range(0..=policy.s_max);
        sample_df_timesteps(policy.window, steps, step_size, TimestepMode::Ramp, rng)
    }
}

/// Mean over samples of the per-sample x0 mean squared error, accumulated
/// in batch order.
pub fn df_loss<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    model: &D,
    g: &mut Graph<'_>,
    batch: &[TrainSample],
    schedule: &NoiseSchedule,
    policy: &DfPolicy,
    rng: &mut R,
) -> Result<NodeId> {
    ensure!(!batch.is_empty(), Contract, "empty batch");
    let mut total: Option<NodeId> = None;
    for (i, s) in batch.iter().enumerate() {
        ensure!(
            s.z0.rows() == policy.window && s.prompts.frames() == policy.window,
            Contract,
            "sample {i} has {} frames and {} prompts, window is {}",
            s.z0.rows(),
            s.prompts.frames(),
            policy.window
        );
        let t = draw_timesteps(policy, schedule.steps(), rng);
        let eps = normal_matrix(rng, s.z0.rows(), s.z0.cols());
        let z_t = add_noise(&s.z0, &t, &eps, schedule)?;
        let pred = model.record(g, z_t.latents(), &t, &s.prompts)?;
        let target = g.constant(s.z0.clone());
        let l = g.mse(pred, target)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    Ok(g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64))
}

/// A generated clip with its ground-truth script.
#[derive(Clone, Debug)]
pub struct Clip {
    pub latents: Matrix,
    pub script: SceneScript,
}

/// `count` clips of `frames` frames, each with a scene count drawn
/// uniformly from `scenes`.
pub fn synth_clips(
    world: &World,
    count: usize,
    frames: usize,
    scenes: std::ops::RangeInclusive<usize>,
    seed: SeedStream,
) -> Result<Vec<Clip>> {
    ensure!(!scenes.is_empty(), Config, "empty scene-count range");
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(i as u64).rng();
            let k = rng.random_range(scenes.clone());
            let script = world.sample_script(k, frames, &mut rng)?;
            let latents = world.render_latents(&script, &mut rng)?.into_parts().0;
            Ok(Clip { latents, script })
        })
        .collect()
}

/// Per-iteration training record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    pub loss: f64,
    pub grad_norm: f64,
    /// Seconds since training started.
    pub wall_time: f64,
}

/// Draws one training window from `clips`: random clip, random offset, and
/// frame-level or replicated clip-level conditioning.
pub fn draw_sample<R: Rng + ?Sized>(
    clips: &[Clip],
    window: usize,
    p_global: f64,
    embedder: &dyn TextEmbedder,
    rng: &mut R,
) -> Result<TrainSample> {
    ensure!(!clips.is_empty(), Contract, "no training clips");
    let clip = &clips[rng.random_range(0..clips.len())];
    let frames = clip.latents.rows();
    ensure!(frames >= window, Contract, "clip of {frames} frames is shorter than the window {window}");
    let start = rng.random_range(0..=frames - window);
    let z0 = clip.latents.slice_rows(start, start + window);
    let tokens = embedder.tokens();
    let prompts = if rng.random_bool(p_global) {
        replicate_global_prompt(&clip.script.global_caption(), window, embedder, tokens)?
    } else {
        let doc = CaptionDocument::new(clip.script.captions[start..start + window].to_vec())?;
        build_prompt_track(&doc, embedder, tokens)?
    };
    Ok(TrainSample { z0, prompts })
}

/// Smoothed loss: mean of the last `span` recorded losses.
pub fn trailing_mean(log: &[TrainRecord], span: usize) -> f64 {
    let tail = &log[log.len().saturating_sub(span)..];
    tail.iter().map(|r| r.loss).sum::<f64>() / tail.len().max(1) as f64
}

/// Trains `model` in place and returns the per-iteration log. Each record
/// is also handed to `on_record` as soon as it exists.
pub fn train(
    model: &mut Dit,
    config: &TrainConfig,
    clips: &[Clip],
    embedder: &dyn TextEmbedder,
    schedule: &NoiseSchedule,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<Vec<TrainRecord>> {
    config.validate()?;
    ensure!(
        schedule.steps() == model.config().steps,
        Config,
        "schedule has {} steps, model expects {}",
        schedule.steps(),
        model.config().steps
    );
    let policy = DfPolicy {
        window: model.config().window,
        s_max: config.s_max,
        p_iid: config.p_iid,
    };
    let mut adam = Adam::new(model.params(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut rng: ChaCha8Rng = SeedStream::new(config.seed).derive(0x74_7261_696e).rng();
    let started = Instant::now();
    let mut log = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let batch = (0..config.batch)
            .map(|_| draw_sample(clips, policy.window, config.p_global, embedder, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = {
            let mut g = Graph::new(model.params());
            let loss = df_loss(&*model, &mut g, &batch, schedule, &policy, &mut rng)?;
            (g.scalar(loss)?, g.backward(loss)?.into_dense())
        };
        let grad_norm = grads.iter().map(|m| m.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        let record = TrainRecord {
            iteration: it,
            loss,
            grad_norm,
            wall_time: started.elapsed().as_secs_f64(),
        };
        on_record(&record);
        ensure!(
            loss.is_finite() && grad_norm.is_finite(),
            NonFinite,
            "training diverged at iteration {it}: loss {loss}, gradient norm {grad_norm}"
        );
        log.push(record);
        adam.step(model.params_mut(), &grads)?;
    }
    Ok(log)
}
