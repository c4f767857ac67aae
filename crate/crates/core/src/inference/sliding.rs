use super::{denoise_span, Sampling};
use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::{LatentSequence, TimestepVector};
use crate::numerics::Matrix;
use crate::model::Denoiser;
use crate::schedule::add_noise;

/// Autoregressive generation. The first window is `initial` when given and
/// is otherwise denoised from scratch. Each slide keeps the last
/// `window − slide` frames as history, re-noises them to `t_history`, holds
/// them there while `slide` fresh frames are denoised from `T` to 0, and
/// appends the new frames. A final short slide keeps extra history so the
/// window still ends at the last prompt.
#[allow(clippy::too_many_arguments)]
pub fn sliding_window_generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    prompts: &PromptTrack,
    window: usize,
    slide: usize,
    t_history: usize,
    sampling: &Sampling<'_>,
    dim: usize,
    initial: Option<&Matrix>,
) -> Result<LatentSequence> {
    let frames = prompts.frames();
    ensure!(window >= 1, Config, "window must be at least 1");
    ensure!(
        frames >= window,
        Contract,
        "prompt track of {frames} frames is shorter than one window of {window}"
    );
    ensure!(slide >= 1 && slide < window, Config, "slide {slide} must lie in [1, {window})");
    ensure!(t_history <= sampling.schedule.steps(), Range, "history level {t_history} beyond T");

    let first = match initial {
        Some(m) => {
            ensure!(m.shape() == (window, dim), Dimension, "initial window {:?}", m.shape());
            m.clone()
        }
        None => denoise_span(denoiser, sampling.initial_noise(0, window, dim), 0, 0, &prompts.window(0, window), sampling, 0)?,
    };
    let mut out: Vec<f64> = Vec::with_capacity(frames * dim);
    out.extend_from_slice(first.data());
    let mut produced = window;
    let mut pass = 0;
    while produced < frames {
        pass += 1;
        let fresh = slide.min(frames - produced);
        let start = produced + fresh - window;
        let history = window - fresh;
        let hist = Matrix::from_vec(history, dim, out[start * dim..produced * dim].to_vec())?;
        let hist = if t_history == 0 {
            hist
        } else {
            let eps_rows: Vec<f64> = (start..produced).flat_map(|f| sampling.renoise(f, pass, dim)).collect();
            let eps = Matrix::from_vec(history, dim, eps_rows)?;
            add_noise(&hist, &TimestepVector::uniform(history, t_history), &eps, sampling.schedule)?
                .into_parts()
                .0
        };
        let mut z = Vec::with_capacity(window * dim);
        z.extend_from_slice(hist.data());
        z.extend_from_slice(sampling.initial_noise(produced, fresh, dim).data());
        let z = Matrix::from_vec(window, dim, z)?;
        let done = denoise_span(
            denoiser,
            z,
            history,
            t_history,
            &prompts.window(start, start + window),
            sampling,
            start,
        )?;
        out.extend_from_slice(&done.data()[history * dim..]);
        produced += fresh;
    }
    LatentSequence::clean(Matrix::from_vec(frames, dim, out)?)
}
