//! Text/video agreement metrics, Confusion Degree, and drift profiling.

use std::io::Write;

use crate::conditioning::PromptTrack;
use crate::error::{ensure, Result};
use crate::latent::LatentSequence;
use crate::numerics::{dot, Matrix};

/// Frames sampled for a video-level embedding.
pub const VIDEO_SAMPLE_FRAMES: usize = 8;

/// Default lower clamp on normalization denominators.
pub const DEFAULT_DENOM_FLOOR: f64 = 1e-6;

/// Paired text and frame encoders producing unit vectors in a shared space.
pub trait EmbeddingPair {
    fn text(&self, caption: &str) -> Result<Vec<f64>>;
    fn frame(&self, latent: &[f64]) -> Vec<f64>;

    /// Normalized mean of the embeddings of 8 uniformly spaced frames, or
    /// of every frame when the video is shorter.
    fn video(&self, video: &Matrix) -> Result<Vec<f64>> {
        ensure!(video.rows() > 0, Contract, "empty video");
        let mut acc = vec![0.0; 0];
        for f in sample_frames(video.rows()) {
            let e = self.frame(video.row(f));
            if acc.is_empty() {
                acc = e;
            } else {
                for (a, b) in acc.iter_mut().zip(&e) {
                    *a += b;
                }
            }
        }
        Ok(crate::synthworld::unit(acc))
    }
}

/// Indices `round(i·(F−1)/7)` for `i = 0..8`; all frames when `F < 8`.
pub fn sample_frames(frames: usize) -> Vec<usize> {
    if frames <= VIDEO_SAMPLE_FRAMES {
        return (0..frames).collect();
    }
    let last = (frames - 1) as f64;
    let steps = (VIDEO_SAMPLE_FRAMES - 1) as f64;
    (0..VIDEO_SAMPLE_FRAMES)
        .map(|i| (i as f64 * last / steps).round() as usize)
        .collect()
}

/// Cosine similarity; zero when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn global_similarity(global_prompt: &str, video: &LatentSequence, embeds: &dyn EmbeddingPair) -> Result<f64> {
    let t = embeds.text(global_prompt)?;
    let v = embeds.video(video.latents())?;
    Ok(cosine(&t, &v))
}

fn prompt_embeddings(prompts: &PromptTrack, frames: usize, embeds: &dyn EmbeddingPair) -> Result<Vec<Vec<f64>>> {
    ensure!(
        prompts.frames() == frames,
        Contract,
        "{} prompts for {frames} frames",
        prompts.frames()
    );
    let raw = prompts
        .raw()
        .ok_or_else(|| crate::Error::Contract("prompt track carries no caption text".into()))?;
    raw.iter().map(|c| embeds.text(c)).collect()
}

/// Mean over frames of `Sim(Φ_T(P_f), Φ_V(V_f))`.
pub fn frame_consistency(prompts: &PromptTrack, video: &LatentSequence, embeds: &dyn EmbeddingPair) -> Result<f64> {
    let f = video.frames();
    ensure!(f > 0, Contract, "empty video");
    let p = prompt_embeddings(prompts, f, embeds)?;
    let total: f64 = (0..f).map(|i| cosine(&p[i], &embeds.frame(video.frame(i)))).sum();
    Ok(total / f as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionReport {
    pub per_prompt: Vec<f64>,
    pub mean_cd: f64,
    pub s_tt: Matrix,
    pub s_tf: Matrix,
    pub s_tt_norm: Matrix,
    pub s_tf_norm: Matrix,
}

impl ConfusionReport {
    /// One row per prompt, then a `mean` summary row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "prompt,cd,s_tt_diag,s_tf_diag")?;
        for (i, cd) in self.per_prompt.iter().enumerate() {
            writeln!(w, "{},{cd:.9},{:.9},{:.9}", i + 1, self.s_tt.get(i, i), self.s_tf.get(i, i))?;
        }
        writeln!(w, "mean,{:.9},,", self.mean_cd)?;
        Ok(())
    }
}

/// Confusion Degree from raw similarity matrices. Row `i` of each matrix
/// is divided by its diagonal entry, clamped below by `denom_floor`.
pub fn confusion_from_similarities(s_tt: Matrix, s_tf: Matrix, denom_floor: f64) -> Result<ConfusionReport> {
    let n = s_tt.rows();
    ensure!(
        s_tt.shape() == (n, n) && s_tf.shape() == (n, n),
        Dimension,
        "similarity matrices must be square and equal: {:?} vs {:?}",
        s_tt.shape(),
        s_tf.shape()
    );
    ensure!(n > 0, Contract, "no prompts");
    ensure!(denom_floor > 0.0, Range, "denominator floor must be positive");
    let normalize = |m: &Matrix| {
        Matrix::from_fn(n, n, |i, j| m.get(i, j) / m.get(i, i).max(denom_floor))
    };
    let s_tt_norm = normalize(&s_tt);
    let s_tf_norm = normalize(&s_tf);
    let per_prompt: Vec<f64> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (s_tf_norm.get(i, j) - s_tt_norm.get(i, j)).max(0.0))
                .sum()
        })
        .collect();
    let mean_cd = per_prompt.iter().sum::<f64>() / n as f64;
    Ok(ConfusionReport { per_prompt, mean_cd, s_tt, s_tf, s_tt_norm, s_tf_norm })
}

pub fn confusion_degree(
    prompts: &PromptTrack,
    video: &LatentSequence,
    embeds: &dyn EmbeddingPair,
    denom_floor: f64,
) -> Result<ConfusionReport> {
    let f = video.frames();
    let p = prompt_embeddings(prompts, f, embeds)?;
    let v: Vec<Vec<f64>> = (0..f).map(|j| embeds.frame(video.frame(j))).collect();
    let s_tt = Matrix::from_fn(f, f, |i, j| cosine(&p[i], &p[j]));
    let s_tf = Matrix::from_fn(f, f, |i, j| cosine(&p[i], &v[j]));
    confusion_from_similarities(s_tt, s_tf, denom_floor)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftProfile {
    pub errors: Vec<f64>,
    pub slope: f64,
}

/// Ordinary least-squares slope of `y` on `0..y.len()`.
pub fn ols_slope(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    if y.len() < 2 {
        return 0.0;
    }
    let xm = (n - 1.0) / 2.0;
    let ym = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - xm;
        sxy += dx * (v - ym);
        sxx += dx * dx;
    }
    sxy / sxx
}

/// Per-frame squared distance to the ground-truth conditional mean and its
/// least-squares trend over frame index.
pub fn drift_profile(video: &LatentSequence, means: Option<&Matrix>) -> Result<DriftProfile> {
    let means = means.ok_or_else(|| crate::Error::Contract("drift profiling needs ground-truth means".into()))?;
    ensure!(
        means.shape() == video.latents().shape(),
        Contract,
        "means {:?} vs video {:?}",
        means.shape(),
        video.latents().shape()
    );
    let errors: Vec<f64> = (0..video.frames())
        .map(|f| {
            video
                .frame(f)
                .iter()
                .zip(means.row(f))
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect();
    let slope = ols_slope(&errors);
    Ok(DriftProfile { errors, slope })
}

/// One-sided sign test: probability of at least `successes` heads in
/// `trials` fair coin flips.
pub fn sign_test_p_value(successes: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for k in successes..=trials {
        p += binomial(trials, k);
    }
    p / 2f64.powi(trials as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditioning::{PromptSource, PromptTrack};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Identity embeddings over R^n; captions are "e<i>" or "mix".
    struct Axes(usize);

    impl EmbeddingPair for Axes {
        fn text(&self, caption: &str) -> Result<Vec<f64>> {
            let mut v = vec![0.0; self.0];
            if caption == "mix" {
                v[0] = 1.0;
                v[1] = 1.0;
            } else {
                v[caption[1..].parse::<usize>().unwrap()] = 1.0;
            }
            Ok(crate::synthworld::unit(v))
        }
        fn frame(&self, latent: &[f64]) -> Vec<f64> {
            crate::synthworld::unit(latent.to_vec())
        }
    }

    fn track(captions: &[&str]) -> PromptTrack {
        let blocks = vec![Matrix::zeros(1, 1); captions.len()];
        PromptTrack::from_blocks(
            &blocks,
            PromptSource::FrameLevel,
            Some(captions.iter().map(|s| s.to_string()).collect()),
        )
        .unwrap()
    }

    fn video(rows: Vec<Vec<f64>>) -> LatentSequence {
        LatentSequence::clean(Matrix::from_rows(&rows).unwrap()).unwrap()
    }

    fn axis(n: usize, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v
    }

    #[test]
    fn sampled_frames() {
        assert_eq!(sample_frames(5), vec![0, 1, 2, 3, 4]);
        assert_eq!(sample_frames(8), (0..8).collect::<Vec<_>>());
        assert_eq!(sample_frames(15), vec![0, 2, 4, 6, 8, 10, 12, 14]);
        let s = sample_frames(126);
        assert_eq!((s[0], s[7], s.len()), (0, 125, 8));
    }

    #[test]
    fn global_similarity_cases() {
        let e = Axes(3);
        let same = video(vec![axis(3, 0); 10]);
        assert_eq!(global_similarity("e0", &same, &e).unwrap(), 1.0);
        assert_eq!(global_similarity("e1", &same, &e).unwrap(), 0.0);
        // Half A, half B, prompt A: mean-then-normalize by hand.
        let rows: Vec<Vec<f64>> = (0..16).map(|f| axis(3, usize::from(f >= 8))).collect();
        let idx = sample_frames(16);
        let a = idx.iter().filter(|&&f| f < 8).count() as f64;
        let b = idx.len() as f64 - a;
        let oracle = a / (a * a + b * b).sqrt();
        let got = global_similarity("e0", &video(rows), &e).unwrap();
        assert!((got - oracle).abs() < 1e-15, "{got} vs {oracle}");
    }

    #[test]
    fn empty_video_is_contract_error() {
        let e = Axes(2);
        let empty = Matrix::zeros(0, 2);
        assert!(matches!(e.video(&empty), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn frame_consistency_cases() {
        let e = Axes(2);
        let v = video(vec![axis(2, 0), axis(2, 1)]);
        assert_eq!(frame_consistency(&track(&["e0", "e1"]), &v, &e).unwrap(), 1.0);
        assert_eq!(frame_consistency(&track(&["e1", "e0"]), &v, &e).unwrap(), 0.0);
        assert!(frame_consistency(&track(&["e0"]), &v, &e).is_err());
    }

    #[test]
    fn frame_consistency_random_assignment_monte_carlo() {
        let k = 4;
        let e = Axes(k);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (trials, frames) = (400, 20);
        let mut acc = 0.0;
        for _ in 0..trials {
            let caps: Vec<String> = (0..frames).map(|_| format!("e{}", rng.random_range(0..k))).collect();
            let refs: Vec<&str> = caps.iter().map(String::as_str).collect();
            let rows = (0..frames).map(|_| axis(k, rng.random_range(0..k))).collect();
            acc += frame_consistency(&track(&refs), &video(rows), &e).unwrap();
        }
        let mean = acc / trials as f64;
        // Bernoulli(1/4) per frame: SE = sqrt(3/16 / 8000).
        let se = (0.1875f64 / (trials * frames) as f64).sqrt();
        assert!((mean - 0.25).abs() < 4.0 * se, "{mean}");
    }

    #[test]
    fn cd_zero_for_perfect_orthogonal_match() {
        let e = Axes(3);
        let v = video((0..3).map(|i| axis(3, i)).collect());
        let r = confusion_degree(&track(&["e0", "e1", "e2"]), &v, &e, DEFAULT_DENOM_FLOOR).unwrap();
        assert_eq!(r.mean_cd, 0.0);
        assert!(r.per_prompt.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn cd_blend_hand_computed() {
        let e = Axes(2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let v = video(vec![vec![h, h]; 2]);
        let r = confusion_degree(&track(&["e0", "e1"]), &v, &e, DEFAULT_DENOM_FLOOR).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!((r.s_tf_norm.get(i, j) - 1.0).abs() < 1e-15);
                assert_eq!(r.s_tt_norm.get(i, j), if i == j { 1.0 } else { 0.0 });
            }
        }
        assert!((r.per_prompt[0] - 1.0).abs() < 1e-15);
        assert!((r.per_prompt[1] - 1.0).abs() < 1e-15);
        assert!((r.mean_cd - 1.0).abs() < 1e-15);
    }

    #[test]
    fn floor_prevents_blow_up() {
        let s_tt = Matrix::identity(2);
        let s_tf = Matrix::from_rows(&[vec![0.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let r = confusion_from_similarities(s_tt, s_tf, 1e-6).unwrap();
        assert!((r.per_prompt[0] - 0.5e6).abs() < 1e-6);
        assert!(r.mean_cd.is_finite());
    }

    #[test]
    fn csv_has_summary_row() {
        let r = confusion_from_similarities(Matrix::identity(2), Matrix::identity(2), 1e-6).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().last().unwrap().starts_with("mean,0.000000000"));
    }

    #[test]
    fn drift_slopes() {
        let means = Matrix::zeros(6, 1);
        let flat = video(vec![vec![2.0]; 6]);
        assert_eq!(drift_profile(&flat, Some(&means)).unwrap().slope, 0.0);
        // e_f = (sqrt(c f))^2 = c f.
        let c = 0.37;
        let line = video((0..6).map(|f| vec![(c * f as f64).sqrt()]).collect());
        let p = drift_profile(&line, Some(&means)).unwrap();
        assert!((p.slope - c).abs() < 1e-12);
        assert!(drift_profile(&line, None).is_err());
    }

    #[test]
    fn sign_test_values() {
        assert!((sign_test_p_value(9, 10) - 11.0 / 1024.0).abs() < 1e-15);
        assert_eq!(sign_test_p_value(0, 10), 1.0);
    }
}
