//! Fixtures shared by the benchmarks.

use driftless_core::conditioning::{build_prompt_track, CaptionDocument, PromptTrack};
use driftless_core::model::{DenoiserConfig, Dit};
use driftless_core::rng::SeedStream;
use driftless_core::schedule::{NoiseSchedule, ScheduleConfig};
use driftless_core::synthworld::{SceneScript, World, WorldParams};

pub struct Fixture {
    pub world: World,
    pub schedule: NoiseSchedule,
    pub model: Dit,
    pub script: SceneScript,
    pub prompts: PromptTrack,
}

/// Default world and model with perturbed weights, so the output head is
/// not the all-zero initialization, plus a `frames`-frame script.
pub fn fixture(frames: usize, scenes: usize) -> Fixture {
    let world = World::new(WorldParams::default()).expect("default world");
    let schedule = ScheduleConfig::default().build().expect("default schedule");
    let mut model = Dit::init(DenoiserConfig::default(), SeedStream::new(1)).expect("default model");
    for idx in 0..model.params().len() {
        let m = model.params_mut().get_mut(idx);
        let n = SeedStream::new(2).derive(idx as u64).normal_matrix(m.rows(), m.cols());
        m.add_assign(&n.map(|v| 0.05 * v));
    }
    let script = world.sample_script(scenes, frames, &mut SeedStream::new(3).rng()).expect("script");
    let doc = CaptionDocument::new(script.captions.clone()).expect("captions");
    let prompts = build_prompt_track(&doc, &world.text_embedder(), 1).expect("prompts");
    Fixture { world, schedule, model, script, prompts }
}
