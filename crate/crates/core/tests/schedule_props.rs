use driftless_core::latent::TimestepVector;
use driftless_core::rng::SeedStream;
use driftless_core::schedule::{
    add_noise, sample_df_timesteps, sampler_step, FrameNoise, NoiseSchedule, ScheduleKind, TimestepMode,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mode() -> impl Strategy<Value = TimestepMode> {
    prop_oneof![Just(TimestepMode::Ramp), Just(TimestepMode::Iid), Just(TimestepMode::Uniform)]
}

proptest! {
    #[test]
    fn timesteps_stay_in_range(frames in 1usize..40, steps in 1usize..300, step_size in 0usize..20, m in mode(), seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_df_timesteps(frames, steps, step_size, m, &mut rng);
        prop_assert_eq!(t.len(), frames);
        prop_assert!(t.as_slice().iter().all(|&v| v <= steps));
    }

    #[test]
    fn ramps_are_monotone(frames in 1usize..40, steps in 1usize..300, step_size in 0usize..20, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = sample_df_timesteps(frames, steps, step_size, TimestepMode::Ramp, &mut rng);
        prop_assert!(t.as_slice().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn frames_are_noised_independently(frames in 2usize..12, g in 0usize..12, seed: u64, t_new in 0usize..=100) {
        let g = g % frames;
        let schedule = NoiseSchedule::build(100, 1e-3, 0.2, ScheduleKind::Linear).unwrap();
        let s = SeedStream::new(seed);
        let z0 = s.derive(1).normal_matrix(frames, 5);
        let eps = s.derive(2).normal_matrix(frames, 5);
        let mut rng = s.rng();
        let t = sample_df_timesteps(frames, 100, 0, TimestepMode::Iid, &mut rng);
        let mut changed = t.clone();
        changed.as_mut_slice()[g] = t_new;
        let a = add_noise(&z0, &t, &eps, &schedule).unwrap();
        let b = add_noise(&z0, &changed, &eps, &schedule).unwrap();
        for f in (0..frames).filter(|&f| f != g) {
            prop_assert_eq!(a.frame(f), b.frame(f));
        }
    }

    #[test]
    fn exact_prediction_recovers_clean_frames(frames in 1usize..10, seed: u64, eta in 0.0f64..1.0, cosine: bool) {
        let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        let schedule = NoiseSchedule::build(100, 1e-3, 0.2, kind).unwrap();
        let s = SeedStream::new(seed);
        let z0 = s.derive(1).normal_matrix(frames, 4);
        let eps = s.derive(2).normal_matrix(frames, 4);
        let mut rng = s.rng();
        let t = sample_df_timesteps(frames, 100, 0, TimestepMode::Iid, &mut rng);
        let z_t = add_noise(&z0, &t, &eps, &schedule).unwrap();
        let out = sampler_step(&z_t, &z0, &TimestepVector::uniform(frames, 0), &schedule, eta, &FrameNoise::new(s.derive(3))).unwrap();
        prop_assert!(out.latents().max_abs_diff(&z0) <= 1e-9);
    }
}
