use driftless_core::conditioning::{PromptSource, PromptTrack};
use driftless_core::latent::TimestepVector;
use driftless_core::model::{frame_level_cross_attention, CrossAttentionWeights, Denoiser, OracleDenoiser};
use driftless_core::numerics::Matrix;
use driftless_core::rng::SeedStream;
use driftless_core::schedule::{NoiseSchedule, ScheduleKind};
use driftless_core::synthworld::{frame_caption, World, WorldParams};
use proptest::prelude::*;

fn track(blocks: &[Matrix]) -> PromptTrack {
    PromptTrack::from_blocks(blocks, PromptSource::FrameLevel, None).unwrap()
}

proptest! {
    #[test]
    fn cross_attention_row_depends_only_on_its_frame(
        seed: u64,
        frames in 2usize..8,
        tokens in 1usize..4,
        f in 0usize..8,
        g in 0usize..8,
    ) {
        let (f, g) = (f % frames, g % frames);
        prop_assume!(f != g);
        let s = SeedStream::new(seed);
        let (dq, dc, dk) = (5, 3, 4);
        let weights = CrossAttentionWeights {
            w_q: s.derive(1).normal_matrix(dq, dk),
            w_k: s.derive(2).normal_matrix(dc, dk),
            w_v: s.derive(3).normal_matrix(dc, dq),
        };
        let queries = s.derive(4).normal_matrix(frames, dq);
        let blocks: Vec<Matrix> = (0..frames).map(|i| s.derive(10 + i as u64).normal_matrix(tokens, dc)).collect();
        let base = frame_level_cross_attention(&queries, &track(&blocks), &weights).unwrap();

        // Perturb frame g's query and caption; only row g may change.
        let mut q2 = queries.clone();
        q2.row_mut(g).iter_mut().for_each(|v| *v += 1.5);
        let mut b2 = blocks.clone();
        b2[g] = s.derive(99).normal_matrix(tokens, dc);
        let moved = frame_level_cross_attention(&q2, &track(&b2), &weights).unwrap();
        prop_assert_eq!(moved.row(f), base.row(f));
        prop_assert!(moved.row(g) != base.row(g));
    }

    #[test]
    fn noiseless_oracle_returns_the_scene_mean(seed: u64, t in 1usize..=100, scene in 0usize..8, phase in 0.0f64..1.0) {
        let world = World::new(WorldParams::default()).unwrap().with_sigma(1e-12);
        let schedule = NoiseSchedule::build(100, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let caption = frame_caption(scene, phase);
        let mean = world.mean_for_caption(&caption).unwrap();
        let oracle = OracleDenoiser::new(world.clone(), schedule);
        let prompts = PromptTrack::from_blocks(
            &[world.text_embedder().scene_embedding(scene)],
            PromptSource::FrameLevel,
            Some(vec![caption]),
        ).unwrap();
        let z = SeedStream::new(seed).normal_matrix(1, 16).map(|v| 10.0 * v);
        let out = oracle.evaluate(&z, &TimestepVector::new(vec![t]), &prompts).unwrap();
        let err = out.row(0).iter().zip(&mean).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9, "error {err}");
    }
}
