use rayon::prelude::*;

use super::{Sampling, WindowPlan};
use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::{LatentSequence, TimestepVector};
use crate::model::Denoiser;
use crate::numerics::Matrix;
use crate::schedule::sampler_step;

/// Frames pinned clean for the whole run.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryCondition {
    pub positions: Vec<usize>,
    /// One row per position.
    pub latents: Matrix,
}

impl BoundaryCondition {
    pub fn validate(&self, frames: usize, dim: usize) -> Result<()> {
        ensure!(
            self.latents.rows() == self.positions.len() && self.latents.cols() == dim,
            Dimension,
            "{} boundary positions with latents {:?}",
            self.positions.len(),
            self.latents.shape()
        );
        ensure!(
            self.positions.iter().all(|&p| p < frames),
            Range,
            "boundary position outside [0, {frames})"
        );
        ensure!(self.latents.is_finite(), NonFinite, "boundary latents are not finite");
        Ok(())
    }

    fn apply(&self, z: &mut Matrix, t: &mut TimestepVector) {
        for (i, &p) in self.positions.iter().enumerate() {
            z.row_mut(p).copy_from_slice(self.latents.row(i));
            t.as_mut_slice()[p] = 0;
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PmwdOptions {
    pub boundary: Option<BoundaryCondition>,
    /// Order in which windows are evaluated; reduction is always in
    /// ascending window index.
    pub eval_order: Option<Vec<usize>>,
}

/// State after one PMWD step.
#[derive(Debug)]
pub struct PmwdStep<'a> {
    /// Level the non-boundary frames just left.
    pub from: usize,
    pub latents: &'a Matrix,
    pub timesteps: &'a TimestepVector,
    /// Window contributions accumulated per frame before division.
    pub contributions: &'a [usize],
}

pub fn pmwd_generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    plan: &WindowPlan,
    prompts: &PromptTrack,
    sampling: &Sampling<'_>,
    dim: usize,
    options: &PmwdOptions,
) -> Result<LatentSequence> {
    pmwd_generate_traced(denoiser, plan, prompts, sampling, dim, options, |_| {})
}

/// Every frame starts from noise at `T`. Each step evaluates all windows on
/// the current latents, takes one sampler step per window, sums the
/// stepped latents per frame and divides by the number of contributions.
/// Boundary frames are rewritten after every step.
pub fn pmwd_generate_traced<D: Denoiser + ?Sized>(
    denoiser: &D,
    plan: &WindowPlan,
    prompts: &PromptTrack,
    sampling: &Sampling<'_>,
    dim: usize,
    options: &PmwdOptions,
    mut observe: impl FnMut(&PmwdStep<'_>),
) -> Result<LatentSequence> {
    let frames = plan.frames;
    ensure!(
        prompts.frames() == frames,
        Contract,
        "{} prompts for a {frames}-frame plan",
        prompts.frames()
    );
    if let Some(b) = &options.boundary {
        b.validate(frames, dim)?;
    }
    let order: Vec<usize> = match &options.eval_order {
        Some(o) => {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            ensure!(
                sorted == (0..plan.count).collect::<Vec<_>>(),
                Contract,
                "evaluation order must permute 0..{}",
                plan.count
            );
            o.clone()
        }
        None => (0..plan.count).collect(),
    };
    let steps = sampling.schedule.steps();
    let noise = sampling.step_noise();
    let window_prompts: Vec<PromptTrack> = (0..plan.count)
        .map(|k| {
            let (s, e) = plan.range(k);
            prompts.window(s, e)
        })
        .collect();

    let mut z = sampling.initial_noise(0, frames, dim);
    let mut t_vec = TimestepVector::uniform(frames, steps);
    if let Some(b) = &options.boundary {
        b.apply(&mut z, &mut t_vec);
    }
    for t in (1..=steps).rev() {
        let next = TimestepVector::new(t_vec.as_slice().iter().map(|&v| v.min(t - 1)).collect());
        let evaluated: Vec<(usize, Result<Matrix>)> = order
            .par_iter()
            .map(|&k| {
                let (s, e) = plan.range(k);
                let run = || -> Result<Matrix> {
                    let win = LatentSequence::new(z.slice_rows(s, e), t_vec.slice(s, e))?;
                    let x0 = denoiser.evaluate(win.latents(), win.timesteps(), &window_prompts[k])?;
                    let stepped = sampler_step(
                        &win,
                        &x0,
                        &next.slice(s, e),
                        sampling.schedule,
                        sampling.eta,
                        &noise.shifted(s),
                    )?;
                    Ok(stepped.into_parts().0)
                };
                (k, run())
            })
            .collect();
        let mut by_k: Vec<Option<Matrix>> = vec![None; plan.count];
        for (k, r) in evaluated {
            by_k[k] = Some(r?);
        }

        let mut sum = Matrix::zeros(frames, dim);
        let mut count = vec![0usize; frames];
        for (k, stepped) in by_k.into_iter().enumerate() {
            let stepped = stepped.expect("every window evaluated");
            let s = plan.starts[k];
            for r in 0..plan.window {
                for (a, b) in sum.row_mut(s + r).iter_mut().zip(stepped.row(r)) {
                    *a += b;
                }
                count[s + r] += 1;
            }
        }
        for (f, &c) in count.iter().enumerate() {
            ensure!(c > 0, Contract, "frame {f} is covered by no window");
            let inv = c as f64;
            for v in sum.row_mut(f) {
                *v /= inv;
            }
        }
        z = sum;
        t_vec = next;
        if let Some(b) = &options.boundary {
            b.apply(&mut z, &mut t_vec);
        }
        observe(&PmwdStep { from: t, latents: &z, timesteps: &t_vec, contributions: &count });
    }
    LatentSequence::new(z, t_vec)
}
