//! Discrete noise schedule, per-frame forward noising, Diffusion Forcing
//! timestep sampling, and the DDIM-style sampler update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, ensure, Result};
use crate::latent::{LatentSequence, TimestepVector};
use crate::numerics::Matrix;
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

/// Serializable schedule parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { steps: 100, beta_min: 1e-3, beta_max: 0.2, kind: ScheduleKind::Linear }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.steps, self.beta_min, self.beta_max, self.kind)
    }
}

/// `T`-step schedule with `alpha_bars[0] = 1` so "clean" is in-band.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    steps: usize,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(steps: usize, beta_min: f64, beta_max: f64, kind: ScheduleKind) -> Result<Self> {
        ensure!(steps >= 2, Config, "schedule needs at least 2 steps, got {steps}");
        ensure!(
            beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0,
            Config,
            "beta range must satisfy 0 < {beta_min} <= {beta_max} < 1"
        );
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => (0..steps)
                .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
                .collect(),
            ScheduleKind::Cosine => {
                let s = 0.008;
                let f = |t: usize| {
                    let x = (t as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2;
                    x.cos().powi(2)
                };
                (1..=steps)
                    .map(|t| (1.0 - f(t) / f(t - 1)).clamp(beta_min, beta_max))
                    .collect()
            }
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        ensure!(betas.len() >= 2, Config, "schedule needs at least 2 steps");
        ensure!(
            betas.iter().all(|b| *b > 0.0 && *b < 1.0),
            Config,
            "betas must lie in (0, 1)"
        );
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            steps: betas.len(),
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `T`.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// `betas[i]` is the variance added going from step `i` to `i + 1`.
    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    /// Indexed `0..=T`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    #[inline]
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }
}

/// Forward process applied independently per frame:
/// `√ᾱ[t_f]·z0_f + √(1−ᾱ[t_f])·eps_f`.
pub fn add_noise(
    z0: &Matrix,
    t_vec: &TimestepVector,
    eps: &Matrix,
    schedule: &NoiseSchedule,
) -> Result<LatentSequence> {
    ensure!(
        t_vec.len() == z0.rows(),
        Dimension,
        "{} timesteps for {} frames",
        t_vec.len(),
        z0.rows()
    );
    ensure!(eps.shape() == z0.shape(), Dimension, "noise shape {:?} vs {:?}", eps.shape(), z0.shape());
    t_vec.check_range(schedule.steps())?;
    let mut out = z0.clone();
    for (f, &t) in t_vec.as_slice().iter().enumerate() {
        if t == 0 {
            continue;
        }
        let ab = schedule.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        for (o, e) in out.row_mut(f).iter_mut().zip(eps.row(f)) {
            *o = a * *o + b * e;
        }
    }
    LatentSequence::new(out, t_vec.clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestepMode {
    /// Reference frame with a random level; neighbours offset by `step_size` per frame.
    Ramp,
    Iid,
    Uniform,
}

/// Diffusion Forcing timestep assignment over `frames` frames.
pub fn sample_df_timesteps<R: Rng + ?Sized>(
    frames: usize,
    steps: usize,
    step_size: usize,
    mode: TimestepMode,
    rng: &mut R,
) -> TimestepVector {
    let values = match mode {
        TimestepMode::Ramp => {
            let reference = rng.random_range(0..frames.max(1));
            let t_ref = rng.random_range(1..=steps) as i64;
            (0..frames)
                .map(|f| {
                    let t = t_ref + (f as i64 - reference as i64) * step_size as i64;
                    t.clamp(0, steps as i64) as usize
                })
                .collect()
        }
        TimestepMode::Iid => (0..frames).map(|_| rng.random_range(1..=steps)).collect(),
        TimestepMode::Uniform => vec![rng.random_range(1..=steps); frames],
    };
    TimestepVector::new(values)
}

/// Fresh sampler noise keyed by absolute frame index and source timestep,
/// so a frame shared by overlapping windows sees one draw per step.
#[derive(Clone, Copy, Debug)]
pub struct FrameNoise {
    stream: SeedStream,
    offset: usize,
}

impl FrameNoise {
    pub fn new(stream: SeedStream) -> Self {
        Self { stream, offset: 0 }
    }

    /// View whose frame 0 is absolute frame `offset`.
    pub fn shifted(&self, offset: usize) -> Self {
        Self {
            stream: self.stream,
            offset: self.offset + offset,
        }
    }

    pub fn draw(&self, frame: usize, t: usize, dim: usize) -> Vec<f64> {
        self.stream
            .derive2((self.offset + frame) as u64, t as u64)
            .normal_vec(dim)
    }
}

/// One sampler update from each frame's current level to `next`.
///
/// x0-parameterized DDIM: the implied noise is
/// `ε̂ = (z_t − √ᾱ_t·x̂0)/√(1−ᾱ_t)` and the new latent is
/// `√ᾱ_t'·x̂0 + √(1−ᾱ_t'−σ²)·ε̂ + σ·ξ` with
/// `σ = eta·√((1−ᾱ_t')/(1−ᾱ_t))·√(1−ᾱ_t/ᾱ_t')`. Frames whose level does not
/// change pass through untouched.
pub fn sampler_step(
    z_t: &LatentSequence,
    x0_pred: &Matrix,
    next: &TimestepVector,
    schedule: &NoiseSchedule,
    eta: f64,
    noise: &FrameNoise,
) -> Result<LatentSequence> {
    ensure!(
        x0_pred.shape() == z_t.latents().shape(),
        Dimension,
        "prediction {:?} for latents {:?}",
        x0_pred.shape(),
        z_t.latents().shape()
    );
    ensure!(next.len() == z_t.frames(), Dimension, "next timestep vector length");
    ensure!(eta >= 0.0, Config, "eta must be non-negative");
    next.check_range(schedule.steps())?;
    let mut out = z_t.latents().clone();
    let dim = z_t.dim();
    for (f, (&t, &t_next)) in z_t
        .timesteps()
        .as_slice()
        .iter()
        .zip(next.as_slice())
        .enumerate()
    {
        if t_next > t {
            bail!(ScheduleOrder, "frame {f}: next timestep {t_next} exceeds current {t}");
        }
        if t_next == t {
            continue;
        }
        let ab = schedule.alpha_bar(t);
        let ab_next = schedule.alpha_bar(t_next);
        let sigma = if eta > 0.0 {
            eta * ((1.0 - ab_next) / (1.0 - ab)).sqrt() * (1.0 - ab / ab_next).sqrt()
        } else {
            0.0
        };
        let dir = (1.0 - ab_next - sigma * sigma).max(0.0).sqrt();
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        let fresh = (sigma > 0.0).then(|| noise.draw(f, t, dim));
        let x0 = x0_pred.row(f);
        let row = out.row_mut(f);
        for c in 0..dim {
            let eps_hat = (row[c] - sa * x0[c]) / sb;
            let mut v = ab_next.sqrt() * x0[c] + dir * eps_hat;
            if let Some(xi) = &fresh {
                v += sigma * xi[c];
            }
            row[c] = v;
        }
    }
    LatentSequence::new(out, next.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal_matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn default_schedule() -> NoiseSchedule {
        NoiseSchedule::build(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap()
    }

    #[test]
    fn thousand_step_linear_schedule() {
        let s = default_schedule();
        // Oracle: direct cumulative product of the betas.
        let mut acc = 1.0f64;
        for t in 1..=1000 {
            acc *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0);
            assert!((s.alpha_bar(t) - acc).abs() <= 1e-15);
        }
        assert_eq!(s.alpha_bar(0), 1.0);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn two_step_hand_computation() {
        let s = NoiseSchedule::build(2, 0.1, 0.1, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bars()[0], 1.0);
        assert!((s.alpha_bars()[1] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[2] - 0.81).abs() < 1e-15);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(NoiseSchedule::build(10, 0.2, 0.1, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::build(1, 0.1, 0.1, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, 0.0, 0.1, ScheduleKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, 0.1, 1.0, ScheduleKind::Cosine).is_err());
    }

    #[test]
    fn cosine_schedule_is_monotone() {
        let s = NoiseSchedule::build(200, 1e-5, 0.999, ScheduleKind::Cosine).unwrap();
        assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]));
        assert!(s.alpha_bar(200) < 1e-4);
    }

    #[test]
    fn add_noise_edge_levels() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z0 = normal_matrix(&mut rng, 2, 6);
        let eps = normal_matrix(&mut rng, 2, 6);

        let clean = add_noise(&z0, &TimestepVector::uniform(2, 0), &eps, &s).unwrap();
        assert_eq!(clean.latents(), &z0);

        let mixed = add_noise(&z0, &TimestepVector::new(vec![0, 1000]), &eps, &s).unwrap();
        assert_eq!(mixed.frame(0), z0.row(0));
        for c in 0..6 {
            assert!((mixed.frame(1)[c] - eps.get(1, c)).abs() <= 0.011 * (1.0 + z0.get(1, c).abs()));
        }
        assert_eq!(mixed.timesteps().as_slice(), &[0, 1000]);

        assert!(add_noise(&z0, &TimestepVector::new(vec![0, 1001]), &eps, &s).is_err());
    }

    #[test]
    fn ramp_and_uniform_modes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let flat = sample_df_timesteps(21, 100, 0, TimestepMode::Ramp, &mut rng);
        assert!(flat.as_slice().iter().all(|&t| t == flat.as_slice()[0]));
        let uni = sample_df_timesteps(21, 100, 7, TimestepMode::Uniform, &mut rng);
        assert!(uni.as_slice().iter().all(|&t| t == uni.as_slice()[0]));
    }

    #[test]
    fn ramp_matches_direct_formula() {
        // Replay the same draws to recover (u, t_ref) and rebuild the ramp.
        for seed in 0..50 {
            let steps = 100;
            let s = (seed % 6) as usize;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tv = sample_df_timesteps(21, steps, s, TimestepMode::Ramp, &mut rng);
            let mut replay = ChaCha8Rng::seed_from_u64(seed);
            let u = replay.random_range(0..21usize) as i64;
            let t_ref = replay.random_range(1..=steps) as i64;
            for (f, &t) in tv.as_slice().iter().enumerate() {
                let expect = (t_ref + (f as i64 - u) * s as i64).clamp(0, steps as i64);
                assert_eq!(t as i64, expect);
            }
            for w in tv.as_slice().windows(2) {
                let d = w[1] - w[0];
                assert!(d <= s);
                if w[0] > 0 && w[1] < steps {
                    assert_eq!(d, s);
                }
            }
        }
    }

    #[test]
    fn sampler_no_op_and_terminal() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = LatentSequence::new(normal_matrix(&mut rng, 3, 4), TimestepVector::new(vec![500, 20, 999]))
            .unwrap();
        let x0 = normal_matrix(&mut rng, 3, 4);
        let noise = FrameNoise::new(SeedStream::new(1));

        let same = sampler_step(&z, &x0, z.timesteps(), &s, 0.0, &noise).unwrap();
        assert_eq!(same, z);

        let done = sampler_step(&z, &x0, &TimestepVector::uniform(3, 0), &s, 0.0, &noise).unwrap();
        assert_eq!(done.latents(), &x0);
        let done_eta = sampler_step(&z, &x0, &TimestepVector::uniform(3, 0), &s, 1.0, &noise).unwrap();
        assert!(done_eta.latents().max_abs_diff(&x0) <= 1e-12);

        let err = sampler_step(&z, &x0, &TimestepVector::new(vec![501, 0, 0]), &s, 0.0, &noise);
        assert!(matches!(err, Err(crate::Error::ScheduleOrder(_))));
    }

    #[test]
    fn deterministic_steps_compose() {
        // Closed form: with a fixed x0 prediction, the implied noise is
        // invariant across eta = 0 steps, so t -> t1 -> t2 equals t -> t2.
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = LatentSequence::new(normal_matrix(&mut rng, 2, 5), TimestepVector::new(vec![800, 650]))
            .unwrap();
        let x0 = normal_matrix(&mut rng, 2, 5);
        let noise = FrameNoise::new(SeedStream::new(2));
        let mid = sampler_step(&z, &x0, &TimestepVector::new(vec![400, 300]), &s, 0.0, &noise).unwrap();
        let two = sampler_step(&mid, &x0, &TimestepVector::new(vec![100, 50]), &s, 0.0, &noise).unwrap();
        let one = sampler_step(&z, &x0, &TimestepVector::new(vec![100, 50]), &s, 0.0, &noise).unwrap();
        assert!(two.latents().max_abs_diff(one.latents()) <= 1e-12);
    }

    #[test]
    fn noising_then_exact_denoising_recovers_input() {
        let s = default_schedule();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z0 = normal_matrix(&mut rng, 4, 3);
        let eps = normal_matrix(&mut rng, 4, 3);
        let tv = TimestepVector::new(vec![1, 250, 999, 1000]);
        let zt = add_noise(&z0, &tv, &eps, &s).unwrap();
        let back = sampler_step(&zt, &z0, &TimestepVector::uniform(4, 0), &s, 0.0, &FrameNoise::new(SeedStream::new(0)))
            .unwrap();
        assert!(back.latents().max_abs_diff(&z0) <= 1e-9);
    }

    #[test]
    fn stochastic_noise_is_shared_per_absolute_frame() {
        let n = FrameNoise::new(SeedStream::new(4));
        assert_eq!(n.shifted(5).draw(0, 10, 3), n.draw(5, 10, 3));
        assert_ne!(n.draw(5, 10, 3), n.draw(5, 9, 3));
    }
}
