//! Synthetic multi-scene ground truth.
//!
//! Every scene `s` has a mean `μ_s` of norm `r` and a unit drift direction
//! `d_s`; all `2·num_scenes` directions are mutually orthonormal. A frame in
//! scene `s` at within-scene phase `p` is
//! `μ_s + dynamics_rate·p·d_s + σ·η`, `η ~ N(0, I)`.
//!
//! Captions are synthesized as `scene:<s> phase:<p> [Long Shot, Eye-Level]`
//! and parsed back by the exact embedders, so text embeddings are known in
//! closed form.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::TextEmbedder;
use crate::error::{bail, ensure, Error, Result};
use crate::latent::LatentSequence;
use crate::metrics::EmbeddingPair;
use crate::numerics::{dot, norm, Matrix};
use crate::rng::{normal_matrix, SeedStream};

pub const SHOT_TAG: &str = "[Long Shot, Eye-Level]";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldParams {
    pub num_scenes: usize,
    pub latent_dim: usize,
    /// Width of the conditioning text embedding; must be at least `num_scenes`.
    pub text_dim: usize,
    pub radius: f64,
    pub sigma: f64,
    pub dynamics_rate: f64,
    pub seed: u64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            num_scenes: 8,
            latent_dim: 16,
            text_dim: 8,
            radius: 4.0,
            sigma: 0.1,
            dynamics_rate: 4.0,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct World {
    params: WorldParams,
    // Unit directions; `means = radius * mean_dirs`.
    mean_dirs: Matrix,
    drift_dirs: Matrix,
}

impl World {
    pub fn new(params: WorldParams) -> Result<Self> {
        let (k, d) = (params.num_scenes, params.latent_dim);
        ensure!(k >= 1, Config, "world needs at least one scene");
        ensure!(2 * k <= d, Config, "{k} scenes need latent_dim >= {}, got {d}", 2 * k);
        ensure!(params.text_dim >= k, Config, "text_dim {} < num_scenes {k}", params.text_dim);
        ensure!(params.sigma > 0.0, Config, "sigma must be positive");
        ensure!(params.radius > 0.0, Config, "radius must be positive");
        ensure!(params.dynamics_rate >= 0.0, Config, "dynamics_rate must be non-negative");
        let basis = orthonormal_rows(2 * k, d, SeedStream::new(params.seed).derive(0xB45E));
        Ok(Self {
            mean_dirs: basis.slice_rows(0, k),
            drift_dirs: basis.slice_rows(k, 2 * k),
            params,
        })
    }

    /// Same geometry with a different within-scene spread.
    pub fn with_sigma(&self, sigma: f64) -> Self {
        let mut w = self.clone();
        w.params.sigma = sigma;
        w
    }

    pub fn params(&self) -> &WorldParams {
        &self.params
    }

    pub fn num_scenes(&self) -> usize {
        self.params.num_scenes
    }

    pub fn dim(&self) -> usize {
        self.params.latent_dim
    }

    pub fn sigma(&self) -> f64 {
        self.params.sigma
    }

    pub fn scene_mean(&self, s: usize) -> Vec<f64> {
        self.mean_dirs.row(s).iter().map(|v| v * self.params.radius).collect()
    }

    pub fn drift_dir(&self, s: usize) -> &[f64] {
        self.drift_dirs.row(s)
    }

    /// Noise-free frame for scene `s` at phase `p`.
    pub fn conditional_mean(&self, s: usize, phase: f64) -> Vec<f64> {
        let k = self.params.dynamics_rate * phase;
        self.mean_dirs
            .row(s)
            .iter()
            .zip(self.drift_dirs.row(s))
            .map(|(m, d)| self.params.radius * m + k * d)
            .collect()
    }

    pub fn conditional_means(&self, script: &SceneScript) -> Matrix {
        let rows: Vec<Vec<f64>> = script
            .scene_of
            .iter()
            .zip(&script.phase)
            .map(|(&s, &p)| self.conditional_mean(s, p))
            .collect();
        Matrix::from_rows(&rows).expect("uniform rows")
    }

    /// Conditional mean for a synthesized frame caption.
    pub fn mean_for_caption(&self, caption: &str) -> Result<Vec<f64>> {
        match parse_caption(caption)? {
            WorldCaption::Frame { scene, phase } if scene < self.num_scenes() => {
                Ok(self.conditional_mean(scene, phase))
            }
            other => bail!(Contract, "caption {other:?} does not resolve to a scene of this world"),
        }
    }

    pub fn sample_script<R: Rng + ?Sized>(
        &self,
        scenes_in_clip: usize,
        frames: usize,
        rng: &mut R,
    ) -> Result<SceneScript> {
        sample_script(scenes_in_clip, frames, self.num_scenes(), rng)
    }

    /// Clean latents for a script.
    pub fn render_latents<R: Rng + ?Sized>(&self, script: &SceneScript, rng: &mut R) -> Result<LatentSequence> {
        ensure!(
            script.scene_of.iter().all(|&s| s < self.num_scenes()),
            Contract,
            "script references a scene beyond the world's {}",
            self.num_scenes()
        );
        let mut out = self.conditional_means(script);
        let eta = normal_matrix(rng, out.rows(), out.cols());
        for (o, e) in out.data_mut().iter_mut().zip(eta.data()) {
            *o += self.params.sigma * e;
        }
        LatentSequence::clean(out)
    }

    /// Scene whose mean direction is most similar to `latent`.
    pub fn classify(&self, latent: &[f64]) -> usize {
        (0..self.num_scenes())
            .map(|s| (s, dot(self.mean_dirs.row(s), latent)))
            .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
            .0
    }

    pub fn embedders(&self) -> GroundTruthEmbedders<'_> {
        GroundTruthEmbedders { world: self }
    }

    pub fn text_embedder(&self) -> SceneTextEmbedder {
        SceneTextEmbedder {
            num_scenes: self.num_scenes(),
            text_dim: self.params.text_dim,
        }
    }
}

/// Signed coordinate axes in a seeded order. Axis-aligned rows make every
/// cross-scene dot product exactly zero, not just zero to rounding.
fn orthonormal_rows(count: usize, dim: usize, stream: SeedStream) -> Matrix {
    let mut rng = stream.rng();
    let mut axes: Vec<usize> = (0..dim).collect();
    axes.shuffle(&mut rng);
    let mut out = Matrix::zeros(count, dim);
    for (r, &axis) in axes[..count].iter().enumerate() {
        out.set(r, axis, if rng.random::<bool>() { 1.0 } else { -1.0 });
    }
    out
}

/// Per-frame scene labels, within-scene phases and captions.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneScript {
    pub scene_of: Vec<usize>,
    pub phase: Vec<f64>,
    pub captions: Vec<String>,
}

impl SceneScript {
    pub fn frames(&self) -> usize {
        self.scene_of.len()
    }

    /// Scene ids in order of first appearance.
    pub fn scene_order(&self) -> Vec<usize> {
        let mut order = Vec::new();
        for &s in &self.scene_of {
            if order.last() != Some(&s) && !order.contains(&s) {
                order.push(s);
            }
        }
        order
    }

    /// Maximal runs of equal scene ids as `(start, end)`.
    pub fn runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut start = 0;
        for f in 1..=self.frames() {
            if f == self.frames() || self.scene_of[f] != self.scene_of[start] {
                runs.push((start, f));
                start = f;
            }
        }
        runs
    }

    /// Video-level caption listing the scenes in order.
    pub fn global_caption(&self) -> String {
        global_caption(&self.scene_order())
    }

    /// Recovers a script from synthesized frame captions.
    pub fn from_captions(captions: &[String]) -> Result<SceneScript> {
        let mut scene_of = Vec::with_capacity(captions.len());
        let mut phase = Vec::with_capacity(captions.len());
        for c in captions {
            match parse_caption(c)? {
                WorldCaption::Frame { scene, phase: p } => {
                    scene_of.push(scene);
                    phase.push(p);
                }
                WorldCaption::Global { .. } => bail!(Parse, "expected a frame caption, got {c:?}"),
            }
        }
        Ok(SceneScript { scene_of, phase, captions: captions.to_vec() })
    }

    pub fn window(&self, start: usize, end: usize) -> SceneScript {
        SceneScript {
            scene_of: self.scene_of[start..end].to_vec(),
            phase: self.phase[start..end].to_vec(),
            captions: self.captions[start..end].to_vec(),
        }
    }
}

pub fn frame_caption(scene: usize, phase: f64) -> String {
    format!("scene:{scene} phase:{phase} {SHOT_TAG}")
}

pub fn global_caption(scenes: &[usize]) -> String {
    let list: Vec<String> = scenes.iter().map(usize::to_string).collect();
    format!("scenes:{} {SHOT_TAG}", list.join(","))
}

/// Scene boundaries are drawn uniformly without replacement from the
/// `frames - 1` gaps. Scene ids are distinct when the world has enough
/// scenes; otherwise only adjacent runs are guaranteed to differ.
pub fn sample_script<R: Rng + ?Sized>(
    scenes_in_clip: usize,
    frames: usize,
    world_scenes: usize,
    rng: &mut R,
) -> Result<SceneScript> {
    ensure!(
        scenes_in_clip >= 1 && scenes_in_clip <= frames,
        Contract,
        "cannot place {scenes_in_clip} scenes in {frames} frames"
    );
    ensure!(
        world_scenes >= 1 && (scenes_in_clip == 1 || world_scenes >= 2),
        Contract,
        "{world_scenes} world scenes cannot form {scenes_in_clip} runs"
    );
    let mut gaps: Vec<usize> = (1..frames).collect();
    gaps.shuffle(rng);
    let mut cuts: Vec<usize> = gaps[..scenes_in_clip - 1].to_vec();
    cuts.sort_unstable();

    let ids: Vec<usize> = if scenes_in_clip <= world_scenes {
        let mut all: Vec<usize> = (0..world_scenes).collect();
        all.shuffle(rng);
        all.truncate(scenes_in_clip);
        all
    } else {
        let mut ids = Vec::with_capacity(scenes_in_clip);
        for i in 0..scenes_in_clip {
            loop {
                let s = rng.random_range(0..world_scenes);
                if i == 0 || ids[i - 1] != s {
                    ids.push(s);
                    break;
                }
            }
        }
        ids
    };

    let mut bounds = Vec::with_capacity(scenes_in_clip + 1);
    bounds.push(0);
    bounds.extend(cuts);
    bounds.push(frames);

    let mut scene_of = Vec::with_capacity(frames);
    let mut phase = Vec::with_capacity(frames);
    for (run, w) in bounds.windows(2).enumerate() {
        let len = w[1] - w[0];
        for i in 0..len {
            scene_of.push(ids[run]);
            phase.push(if len == 1 { 0.0 } else { i as f64 / (len - 1) as f64 });
        }
    }
    let captions = scene_of
        .iter()
        .zip(&phase)
        .map(|(&s, &p)| frame_caption(s, p))
        .collect();
    Ok(SceneScript {
        scene_of,
        phase,
        captions,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum WorldCaption {
    Frame { scene: usize, phase: f64 },
    Global { scenes: Vec<usize> },
}

/// Parses a synthesized caption; the shot tag is optional and ignored.
pub fn parse_caption(caption: &str) -> Result<WorldCaption> {
    let body = caption.trim();
    let body = body.strip_suffix(SHOT_TAG).unwrap_or(body).trim();
    let fail = || Error::Parse(format!("caption {caption:?} was not synthesized by this world"));
    if let Some(list) = body.strip_prefix("scenes:") {
        let scenes = list
            .split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| fail())?;
        return if scenes.is_empty() { Err(fail()) } else { Ok(WorldCaption::Global { scenes }) };
    }
    let mut parts = body.split_whitespace();
    let scene = parts
        .next()
        .and_then(|p| p.strip_prefix("scene:"))
        .and_then(|s| s.parse::<usize>().ok())
        .ok_or_else(fail)?;
    let phase = parts
        .next()
        .and_then(|p| p.strip_prefix("phase:"))
        .and_then(|s| s.parse::<f64>().ok())
        .filter(|p| (0.0..=1.0).contains(p))
        .ok_or_else(fail)?;
    if parts.next().is_some() {
        return Err(fail());
    }
    Ok(WorldCaption::Frame { scene, phase })
}

/// Conditioning embedder: a frame caption maps to the one-hot scene vector
/// in `R^text_dim` (orthonormal across scenes; phase and shot tags are
/// ignored); a global caption maps to the normalized sum of its scenes.
#[derive(Clone, Copy, Debug)]
pub struct SceneTextEmbedder {
    num_scenes: usize,
    text_dim: usize,
}

impl SceneTextEmbedder {
    pub fn scene_embedding(&self, s: usize) -> Matrix {
        let mut m = Matrix::zeros(1, self.text_dim);
        m.set(0, s, 1.0);
        m
    }
}

impl TextEmbedder for SceneTextEmbedder {
    fn text_dim(&self) -> usize {
        self.text_dim
    }

    fn tokens(&self) -> usize {
        1
    }

    fn embed(&self, caption: &str) -> Result<Matrix> {
        let mut m = Matrix::zeros(1, self.text_dim);
        match parse_caption(caption)? {
            WorldCaption::Frame { scene, .. } => {
                ensure!(scene < self.num_scenes, Parse, "unknown scene {scene}");
                m.set(0, scene, 1.0);
            }
            WorldCaption::Global { mut scenes } => {
                scenes.sort_unstable();
                scenes.dedup();
                ensure!(scenes.iter().all(|&s| s < self.num_scenes), Parse, "unknown scene in {caption:?}");
                let w = 1.0 / (scenes.len() as f64).sqrt();
                for s in scenes {
                    m.set(0, s, w);
                }
            }
        }
        Ok(m)
    }
}

/// Exact stand-ins for the text and frame encoders of a vision-language
/// model: `Φ_T` maps a caption to the unit direction of its conditional
/// mean (global captions to the normalized sum of their scene directions);
/// `Φ_V` projects a latent onto the span of all scene and drift directions
/// and normalizes.
#[derive(Clone, Copy, Debug)]
pub struct GroundTruthEmbedders<'w> {
    world: &'w World,
}

impl EmbeddingPair for GroundTruthEmbedders<'_> {
    fn text(&self, caption: &str) -> Result<Vec<f64>> {
        let w = self.world;
        let v = match parse_caption(caption)? {
            WorldCaption::Frame { scene, phase } => {
                ensure!(scene < w.num_scenes(), Parse, "unknown scene {scene}");
                w.conditional_mean(scene, phase)
            }
            WorldCaption::Global { mut scenes } => {
                scenes.sort_unstable();
                scenes.dedup();
                ensure!(scenes.iter().all(|&s| s < w.num_scenes()), Parse, "unknown scene in {caption:?}");
                let mut v = vec![0.0; w.dim()];
                for s in scenes {
                    for (a, b) in v.iter_mut().zip(w.mean_dirs.row(s)) {
                        *a += b;
                    }
                }
                v
            }
        };
        Ok(unit(v))
    }

    fn frame(&self, latent: &[f64]) -> Vec<f64> {
        let w = self.world;
        let mut proj = vec![0.0; latent.len()];
        for dirs in [&w.mean_dirs, &w.drift_dirs] {
            for s in 0..dirs.rows() {
                let u = dirs.row(s);
                let c = dot(latent, u);
                for (p, b) in proj.iter_mut().zip(u) {
                    *p += c * b;
                }
            }
        }
        unit(proj)
    }
}

/// Normalizes to unit length; the zero vector stays zero.
pub(crate) fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = norm(&v);
    if n > 0.0 {
        for x in &mut v {
            *x /= n;
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> World {
        World::new(WorldParams::default()).unwrap()
    }

    #[test]
    fn directions_are_orthonormal() {
        let w = world();
        let all: Vec<&[f64]> = (0..8).map(|s| w.mean_dirs.row(s)).chain((0..8).map(|s| w.drift_dirs.row(s))).collect();
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(a, b) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_scene_script() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_script(1, 5, 8, &mut rng).unwrap();
        assert!(s.scene_of.iter().all(|&x| x == s.scene_of[0]));
        assert_eq!(s.phase, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    }

    #[test]
    fn one_scene_per_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = sample_script(21, 21, 8, &mut rng).unwrap();
        assert!(s.scene_of.windows(2).all(|w| w[0] != w[1]));
        assert!(s.phase.iter().all(|&p| p == 0.0));
        assert_eq!(s.runs().len(), 21);
    }

    #[test]
    fn three_scenes_have_two_boundaries() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = sample_script(3, 21, 8, &mut rng).unwrap();
            // Scan oracle: count label changes, check run lengths and phases.
            let changes = s.scene_of.windows(2).filter(|w| w[0] != w[1]).count();
            assert_eq!(changes, 2);
            let mut len = 1;
            for f in 1..=21 {
                if f == 21 || s.scene_of[f] != s.scene_of[f - 1] {
                    assert!(len >= 1);
                    assert_eq!(s.phase[f - 1], if len == 1 { 0.0 } else { 1.0 });
                    len = 1;
                } else {
                    assert!(s.phase[f] > s.phase[f - 1]);
                    len += 1;
                }
            }
        }
    }

    #[test]
    fn infeasible_scripts_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_script(0, 5, 8, &mut rng).is_err());
        assert!(sample_script(6, 5, 8, &mut rng).is_err());
        assert!(sample_script(3, 5, 1, &mut rng).is_err());
    }

    #[test]
    fn noiseless_render_is_exact() {
        let w = World::new(WorldParams { sigma: 1e-300, dynamics_rate: 0.0, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = w.sample_script(3, 12, &mut rng).unwrap();
        let z = w.render_latents(&s, &mut rng).unwrap();
        for f in 0..12 {
            let mu = w.scene_mean(s.scene_of[f]);
            // Zero coordinates pick up the 1e-300 spread itself.
            assert!(z.frame(f).iter().zip(&mu).all(|(a, b)| (a - b).abs() <= 1e-290));
        }
    }

    #[test]
    fn noiseless_scene_frames_are_collinear() {
        let w = world().with_sigma(1e-300);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = w.sample_script(1, 9, &mut rng).unwrap();
        let z = w.render_latents(&s, &mut rng).unwrap();
        let a = z.frame(0).to_vec();
        let dir: Vec<f64> = z.frame(8).iter().zip(&a).map(|(b, a)| b - a).collect();
        let dn = norm(&dir);
        for f in 1..8 {
            let v: Vec<f64> = z.frame(f).iter().zip(&a).map(|(b, a)| b - a).collect();
            let cos = dot(&v, &dir) / (norm(&v) * dn);
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empirical_scene_mean() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let script = SceneScript {
            scene_of: vec![2],
            phase: vec![0.0],
            captions: vec![frame_caption(2, 0.0)],
        };
        let n = 10_000;
        let mut sum = vec![0.0; 16];
        for _ in 0..n {
            let z = w.render_latents(&script, &mut rng).unwrap();
            for (s, v) in sum.iter_mut().zip(z.frame(0)) {
                *s += v;
            }
        }
        let mu = w.scene_mean(2);
        let se = w.sigma() / (n as f64).sqrt();
        for (s, m) in sum.iter().zip(&mu) {
            assert!((s / n as f64 - m).abs() < 3.0 * se);
        }
    }

    #[test]
    fn embedder_fixed_points() {
        let w = world();
        let e = w.embedders();
        for s in 0..8 {
            let t = e.text(&frame_caption(s, 0.0)).unwrap();
            let mu = w.scene_mean(s);
            for (a, b) in t.iter().zip(&mu) {
                assert!((a - b / 4.0).abs() < 1e-12);
            }
            let v = e.frame(&mu);
            for (a, b) in v.iter().zip(&mu) {
                assert!((a - b / 4.0).abs() < 1e-12);
            }
        }
        for a in 0..8 {
            for b in 0..8 {
                if a != b {
                    let ta = e.text(&frame_caption(a, 0.0)).unwrap();
                    let tb = e.text(&frame_caption(b, 0.0)).unwrap();
                    assert!(dot(&ta, &tb).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn text_and_noiseless_frame_agree() {
        let w = world().with_sigma(1e-300);
        let e = w.embedders();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = w.sample_script(4, 20, &mut rng).unwrap();
        let z = w.render_latents(&s, &mut rng).unwrap();
        for f in 0..20 {
            let sim = dot(&e.text(&s.captions[f]).unwrap(), &e.frame(z.frame(f)));
            assert!((sim - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classification_recovers_scenes() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut correct = 0;
        let mut total = 0;
        for _ in 0..50 {
            let s = w.sample_script(3, 21, &mut rng).unwrap();
            let z = w.render_latents(&s, &mut rng).unwrap();
            for f in 0..21 {
                correct += usize::from(w.classify(z.frame(f)) == s.scene_of[f]);
                total += 1;
            }
        }
        assert!(correct as f64 / total as f64 >= 0.99);
    }

    #[test]
    fn foreign_caption_is_parse_error() {
        let w = world();
        assert!(matches!(w.embedders().text("a dog runs"), Err(Error::Parse(_))));
        assert!(w.text_embedder().embed("scene:99 phase:0").is_err());
        assert!(parse_caption("scene:1 phase:1.5").is_err());
    }

    #[test]
    fn caption_round_trip() {
        for (s, p) in [(0, 0.0), (3, 1.0 / 3.0), (7, 1.0)] {
            assert_eq!(parse_caption(&frame_caption(s, p)).unwrap(), WorldCaption::Frame { scene: s, phase: p });
        }
        assert_eq!(
            parse_caption(&global_caption(&[3, 1])).unwrap(),
            WorldCaption::Global { scenes: vec![3, 1] }
        );
    }

    #[test]
    fn scripts_round_trip_through_captions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = sample_script(4, 37, 8, &mut rng).unwrap();
        assert_eq!(SceneScript::from_captions(&s.captions).unwrap(), s);
        assert!(SceneScript::from_captions(&[global_caption(&[1, 2])]).is_err());
    }
}
