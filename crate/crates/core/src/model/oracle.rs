use super::Denoiser;
use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::TimestepVector;
use crate::numerics::Matrix;
use crate::schedule::NoiseSchedule;
use crate::synthworld::World;

/// Exact posterior-mean denoiser for the synthetic world.
///
/// Each frame's caption fixes its prior `N(μ_f, σ²I)`; with
/// `z_t = √ᾱ·z0 + √(1−ᾱ)·ε` the posterior mean is
/// `((1−ᾱ)·μ_f + √ᾱ·σ²·z_t) / ((1−ᾱ) + ᾱ·σ²)`.
#[derive(Clone, Debug)]
pub struct OracleDenoiser {
    world: World,
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(world: World, schedule: NoiseSchedule) -> Self {
        Self { world, schedule }
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }
}

impl Denoiser for OracleDenoiser {
    fn evaluate(&self, z_t: &Matrix, t_vec: &TimestepVector, prompts: &PromptTrack) -> Result<Matrix> {
        let f = z_t.rows();
        ensure!(t_vec.len() == f && prompts.frames() == f, Dimension, "frame counts differ");
        ensure!(z_t.cols() == self.world.dim(), Dimension, "latent width {} vs world {}", z_t.cols(), self.world.dim());
        t_vec.check_range(self.schedule.steps())?;
        let raw = prompts
            .raw()
            .ok_or_else(|| crate::Error::Contract("oracle needs caption text to resolve scenes".into()))?;
        let s2 = self.world.sigma() * self.world.sigma();
        let mut out = Matrix::zeros(f, z_t.cols());
        for (r, (&t, caption)) in t_vec.as_slice().iter().zip(raw).enumerate() {
            let mu = self.world.mean_for_caption(caption)?;
            let ab = self.schedule.alpha_bar(t);
            if ab == 1.0 {
                // Clean frame; also avoids 0/0 when σ underflows.
                out.row_mut(r).copy_from_slice(z_t.row(r));
                continue;
            }
            let denom = (1.0 - ab) + ab * s2;
            let (a, b) = ((1.0 - ab) / denom, ab.sqrt() * s2 / denom);
            for ((o, m), z) in out.row_mut(r).iter_mut().zip(&mu).zip(z_t.row(r)) {
                *o = a * m + b * z;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::PromptSource;
    use crate::rng::SeedStream;
    use crate::schedule::ScheduleKind;
    use crate::synthworld::{frame_caption, global_caption, WorldParams};

    fn setup(sigma: f64) -> (OracleDenoiser, PromptTrack) {
        let world = World::new(WorldParams { sigma, ..WorldParams::default() }).unwrap();
        let schedule = NoiseSchedule::build(100, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let caps = vec![frame_caption(2, 0.0), frame_caption(5, 0.4)];
        let blocks = vec![Matrix::zeros(1, 1); 2];
        let track = PromptTrack::from_blocks(&blocks, PromptSource::FrameLevel, Some(caps)).unwrap();
        (OracleDenoiser::new(world, schedule), track)
    }

    #[test]
    fn clean_input_returns_itself() {
        let (o, p) = setup(0.3);
        let z = SeedStream::new(1).normal_matrix(2, 16);
        let out = o.evaluate(&z, &TimestepVector::uniform(2, 0), &p).unwrap();
        assert!(out.max_abs_diff(&z) < 1e-12);
    }

    #[test]
    fn pure_noise_limit_returns_mean() {
        let (o, p) = setup(0.1);
        let z = SeedStream::new(2).normal_matrix(2, 16);
        let out = o.evaluate(&z, &TimestepVector::uniform(2, 100), &p).unwrap();
        let mu = o.world().mean_for_caption(&frame_caption(5, 0.4)).unwrap();
        let err = out.row(1).iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        // Residual weight on z_t is √ᾱ_T·σ² / (1−ᾱ_T) with ᾱ_T ≈ 2e-5.
        let ab = o.schedule().alpha_bar(100);
        let bound = ab.sqrt() * 0.01 / (1.0 - ab) * (z.frobenius_norm() + 4.0 * 2.0);
        assert!(err < bound && bound < 1e-3, "{err} vs {bound}");
    }

    #[test]
    fn vanishing_sigma_returns_mean_anywhere() {
        let (o, p) = setup(1e-300);
        let z = SeedStream::new(3).normal_matrix(2, 16).map(|v| 50.0 * v);
        for t in [1, 37, 100] {
            let out = o.evaluate(&z, &TimestepVector::uniform(2, t), &p).unwrap();
            let mu = o.world().mean_for_caption(&frame_caption(2, 0.0)).unwrap();
            let err = out.row(0).iter().zip(&mu).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9);
        }
    }

    #[test]
    fn global_caption_is_contract_error() {
        let (o, _) = setup(0.1);
        let caps = vec![global_caption(&[1, 2])];
        let p = PromptTrack::from_blocks(&[Matrix::zeros(1, 1)], PromptSource::VideoLevelReplicated, Some(caps)).unwrap();
        let err = o.evaluate(&Matrix::zeros(1, 16), &TimestepVector::uniform(1, 5), &p).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn matches_importance_sampled_posterior() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let sigma = 0.5;
        let (o, p) = setup(sigma);
        let t = 50;
        let ab = o.schedule().alpha_bar(t);
        let mu = o.world().mean_for_caption(&frame_caption(2, 0.0)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let z: Vec<f64> = mu.iter().map(|m| ab.sqrt() * (m + 0.4) + 0.3).collect();
        let zm = Matrix::from_vec(1, 16, z.clone()).unwrap();
        let p1 = p.select(&[0]);
        let got = o.evaluate(&zm, &TimestepVector::uniform(1, t), &p1).unwrap();
        // Coordinates are independent; check three of them.
        for d in [0usize, 7, 15] {
            let n = 100_000;
            let (mut sw, mut swx) = (0.0, 0.0);
            let mut samples = Vec::with_capacity(n);
            for _ in 0..n {
                let e: f64 = StandardNormal.sample(&mut rng);
                let x0 = mu[d] + sigma * e;
                let r = z[d] - ab.sqrt() * x0;
                let w = (-(r * r) / (2.0 * (1.0 - ab))).exp();
                sw += w;
                swx += w * x0;
                samples.push((x0, w));
            }
            let m = swx / sw;
            let var: f64 = samples.iter().map(|(x, w)| w * w * (x - m) * (x - m)).sum::<f64>() / (sw * sw);
            let se = var.sqrt();
            assert!((got.get(0, d) - m).abs() < 3.0 * se, "d{d}: {} vs {m} ± {se}", got.get(0, d));
        }
    }
}
