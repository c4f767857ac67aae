use super::{denoise_span, Sampling};
use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::{LatentSequence, TimestepVector};
use crate::model::Denoiser;
use crate::numerics::Matrix;
use crate::schedule::{add_noise, sampler_step};

/// Queue state around one FIFO step.
#[derive(Debug)]
pub struct FifoStep<'a> {
    pub step: usize,
    pub before: &'a [usize],
    /// Levels of the slots right after denoising, head first.
    pub stepped: &'a [usize],
    pub emitted_frame: usize,
    /// Levels once the head is dequeued and any new frame enqueued.
    pub after: &'a [usize],
}

/// `τ_i = round(i·T/window)` for `i = 1..=window`.
pub fn diagonal_levels(steps: usize, window: usize) -> Result<Vec<usize>> {
    ensure!(window >= 1, Config, "window must be at least 1");
    ensure!(
        steps >= window,
        Config,
        "{steps} schedule steps cannot give {window} distinct queue levels"
    );
    Ok((1..=window)
        .map(|i| ((i * steps) as f64 / window as f64).round() as usize)
        .collect())
}

/// Diagonal denoising. The first window is generated in full and its
/// frames are re-noised to `τ_1 < … < τ_window`; every step then lowers
/// each slot by one diagonal level, emits the head at level 0 and enqueues
/// fresh noise at `T` for the next prompt. Once prompts run out the queue
/// drains. With no frames beyond the first window, that window is returned
/// as is.
pub fn fifo_generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    prompts: &PromptTrack,
    window: usize,
    total_frames: usize,
    sampling: &Sampling<'_>,
    dim: usize,
    mut observe: impl FnMut(&FifoStep<'_>),
) -> Result<LatentSequence> {
    ensure!(total_frames >= window && window >= 1, Contract, "total frames {total_frames} below window {window}");
    ensure!(
        prompts.frames() == total_frames,
        Contract,
        "{} prompts for {total_frames} frames",
        prompts.frames()
    );
    let steps = sampling.schedule.steps();
    let tau = diagonal_levels(steps, window)?;
    let warm = denoise_span(denoiser, sampling.initial_noise(0, window, dim), 0, 0, &prompts.window(0, window), sampling, 0)?;
    if total_frames == window {
        return LatentSequence::clean(warm);
    }

    let eps_rows: Vec<f64> = (0..window).flat_map(|f| sampling.renoise(f, 0, dim)).collect();
    let eps = Matrix::from_vec(window, dim, eps_rows)?;
    let mut queue: Vec<Vec<f64>> = add_noise(&warm, &TimestepVector::new(tau.clone()), &eps, sampling.schedule)?
        .into_parts()
        .0
        .data()
        .chunks(dim)
        .map(<[f64]>::to_vec)
        .collect();
    let noise = sampling.step_noise();
    let mut out: Vec<f64> = Vec::with_capacity(total_frames * dim);
    let (mut head, mut next_frame, mut step) = (0usize, window, 0usize);
    while !queue.is_empty() {
        step += 1;
        let len = queue.len();
        let before = &tau[..len];
        let mut stepped_levels = vec![0];
        stepped_levels.extend_from_slice(&tau[..len - 1]);
        let z = Matrix::from_vec(len, dim, queue.concat())?;
        let seq = LatentSequence::new(z, TimestepVector::new(before.to_vec()))?;
        let slots: Vec<usize> = (head..head + len).collect();
        let x0 = denoiser.evaluate(seq.latents(), seq.timesteps(), &prompts.select(&slots))?;
        let stepped = sampler_step(
            &seq,
            &x0,
            &TimestepVector::new(stepped_levels.clone()),
            sampling.schedule,
            sampling.eta,
            &noise.shifted(head),
        )?;
        let (m, _) = stepped.into_parts();
        out.extend_from_slice(m.row(0));
        queue = m.data()[dim..].chunks(dim).map(<[f64]>::to_vec).collect();
        if next_frame < total_frames {
            queue.push(sampling.initial_noise(next_frame, 1, dim).into_data());
            next_frame += 1;
        }
        observe(&FifoStep {
            step,
            before,
            stepped: &stepped_levels,
            emitted_frame: head,
            after: &tau[..queue.len()],
        });
        head += 1;
    }
    ensure!(head == total_frames, Contract, "emitted {head} of {total_frames} frames");
    LatentSequence::clean(Matrix::from_vec(total_frames, dim, out)?)
}
