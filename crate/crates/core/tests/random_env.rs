use diloc::deployment::{generate_uniform_field, triangulate_all, SensorField, TriangulationParams};
use diloc::engine::{diloc_step, IterationState, StopRule, TraceOptions};
use diloc::fixtures;
use diloc::random_env::{
    dlre_limit, dlre_step, make_weight_schedule, relative_error, run_dlre, sample_environment, BiasSpec, ChannelNoise,
    EnvError, Environment, NoiseModel, StepSize, WeightSchedule,
};
use diloc::system::{build_system_matrices, exact_locations_oracle, AnchorBlock, SystemMatrices};
use proptest::prelude::*;

fn setup(field: &SensorField) -> (SystemMatrices, AnchorBlock) {
    let tris = triangulate_all(field, TriangulationParams::for_field(field)).unwrap();
    (build_system_matrices(field, &tris).unwrap(), AnchorBlock::from_field(field))
}

fn fixture() -> (SystemMatrices, AnchorBlock) {
    setup(&fixtures::seven_node_field())
}

fn model(q: f64, channel: ChannelNoise, fluct: f64, bias: BiasSpec, seed: u64) -> NoiseModel {
    NoiseModel { link_prob: q, channel_noise: channel, matrix_fluct_var: fluct, bias, seed }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quiet_environment_is_diloc(count in 1usize..30, seed in any::<u64>(), t in 0usize..1000) {
        let field = generate_uniform_field(vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 9.0]], count, seed).unwrap();
        let (sys, u) = setup(&field);
        let env = Environment::new(NoiseModel::degenerate(seed), &sys).unwrap();
        let s = IterationState::uniform_in_box(&u, sys.num_sensors(), seed);
        let plain = diloc_step(&s, &sys, &u).unwrap().sensors();
        let noisy = dlre_step(&s.sensors(), &sys, &u, &env, &1.0, t);
        prop_assert!((plain - noisy).amax() < 1e-12);
        let limit = dlre_limit(&sys, &u, &env).unwrap();
        prop_assert_eq!(limit.e_l, 0.0);
    }

    #[test]
    fn samples_depend_only_on_seed_and_time(seed in any::<u64>(), t in 0usize..100_000) {
        let (sys, _) = fixture();
        let env = Environment::new(model(0.7, ChannelNoise::Fixed { var: 0.5 }, 0.2, BiasSpec::None {}, seed), &sys).unwrap();
        let a = sample_environment(&env, &sys, t);
        let b = sample_environment(&env, &sys, t);
        prop_assert_eq!(&a.alive_p, &b.alive_p);
        prop_assert_eq!(&a.v_b, &b.v_b);
        prop_assert_eq!(a.p_hat, b.p_hat);
        let c = sample_environment(&env, &sys, t + 1);
        prop_assert_ne!(a.v_b, c.v_b);
    }

    #[test]
    fn bias_ladder_is_linear(seed in any::<u64>(), norm in 0.001f64..0.02) {
        let (sys, u) = fixture();
        let env = Environment::new(model(1.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::Random { norm }, seed), &sys).unwrap();
        prop_assert!((env.s_p().frobenius_norm() - norm).abs() < 1e-12);
        let e1 = dlre_limit(&sys, &u, &env).unwrap().e_l;
        let e0 = dlre_limit(&sys, &u, &env.with_bias_scaled(&sys, 0.0).unwrap()).unwrap().e_l;
        let eh = dlre_limit(&sys, &u, &env.with_bias_scaled(&sys, 0.5).unwrap()).unwrap().e_l;
        prop_assert_eq!(e0, 0.0);
        // first order in the bias for small perturbations
        prop_assert!(eh < e1 && (eh / e1 - 0.5).abs() < 0.05, "e(1) = {e1}, e(1/2) = {eh}");
    }
}

#[test]
fn link_survival_rate_matches_q() {
    let (sys, _) = fixture();
    let q = 0.8;
    let env = Environment::new(model(q, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::None {}, 5), &sys).unwrap();
    let draws = 5000;
    let mut alive = 0usize;
    let mut total = 0usize;
    for t in 0..draws {
        let s = sample_environment(&env, &sys, t);
        alive += s.alive_b.iter().chain(&s.alive_p).filter(|&&a| a).count();
        total += s.alive_b.len() + s.alive_p.len();
    }
    let rate = alive as f64 / total as f64;
    let se = (q * (1.0 - q) / total as f64).sqrt();
    assert!((rate - q).abs() < 4.0 * se, "rate {rate}");
}

#[test]
fn channel_noise_variance() {
    let (sys, _) = fixture();
    let env =
        Environment::new(model(1.0, ChannelNoise::InverseSensorCount {}, 0.0, BiasSpec::None {}, 6), &sys).unwrap();
    assert_eq!(env.channel_var(), 0.25);
    let v: Vec<f64> = (0..4000).flat_map(|t| sample_environment(&env, &sys, t).v_p).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64;
    // standard error of a normal sample variance is var * sqrt(2 / n)
    assert!((var - 0.25).abs() < 4.0 * 0.25 * (2.0 / v.len() as f64).sqrt(), "variance {var}");
}

#[test]
fn link_failures_alone_still_converge() {
    let (sys, u) = fixture();
    let x_star = exact_locations_oracle(&sys, &u).unwrap();
    let schedule = WeightSchedule::Harmonic { a: 1.0 };
    let mut early = 0.0;
    let mut late = 0.0;
    for seed in 0..5 {
        let env =
            Environment::new(model(0.7, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::None {}, seed), &sys).unwrap();
        let init = IterationState::uniform_in_box(&u, 4, seed);
        let stop = StopRule { step_tol: 0.0, max_iters: 200 };
        let t = run_dlre(init, &sys, &u, &env, &schedule, stop, &TraceOptions::default()).unwrap();
        early += relative_error(&t.final_state.sensors(), &x_star);
        let stop = StopRule { step_tol: 0.0, max_iters: 20_000 };
        let init = IterationState::uniform_in_box(&u, 4, seed);
        let t = run_dlre(init, &sys, &u, &env, &schedule, stop, &TraceOptions::default()).unwrap();
        late += relative_error(&t.final_state.sensors(), &x_star);
        assert_eq!(t.iterations(), 20_000);
        assert!(t.counts.messages.iter().all(|&k| k <= 3));
    }
    assert!(late < early, "late {late} vs early {early}");
    assert!(late / 5.0 < 0.05, "mean relative error {}", late / 5.0);
}

#[test]
fn schedules() {
    let h = make_weight_schedule(WeightSchedule::Harmonic { a: 4.0 }).unwrap();
    assert_eq!(h.alpha(0), 4.0);
    assert_eq!(h.alpha(3), 1.0);
    let p = make_weight_schedule(WeightSchedule::Power { p: 1.0 }).unwrap();
    assert_eq!(p.alpha(9), 0.1);
    for bad in [WeightSchedule::Power { p: 0.5 }, WeightSchedule::Power { p: 1.2 }, WeightSchedule::Harmonic { a: 0.0 }]
    {
        assert!(matches!(make_weight_schedule(bad), Err(EnvError::PersistenceViolation(_))));
    }
}

#[test]
fn invalid_models_and_large_bias() {
    let (sys, _) = fixture();
    for bad in [
        model(0.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::None {}, 0),
        model(1.0, ChannelNoise::Fixed { var: -1.0 }, 0.0, BiasSpec::None {}, 0),
        model(1.0, ChannelNoise::Fixed { var: 0.0 }, f64::NAN, BiasSpec::None {}, 0),
        model(1.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::DistanceNoise { sigma: 0.1, draws: 0 }, 0),
    ] {
        assert!(matches!(Environment::new(bad, &sys), Err(EnvError::InvalidModel(_))));
    }
    let huge = model(1.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::Random { norm: 50.0 }, 1);
    assert!(matches!(Environment::new(huge, &sys), Err(EnvError::LowBiasViolation(_))));
    let distance =
        model(1.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::DistanceNoise { sigma: 0.01, draws: 10 }, 1);
    assert!(matches!(Environment::new(distance, &sys), Err(EnvError::BiasNeedsField)));
}

#[test]
fn distance_noise_bias_vanishes_with_sigma() {
    let field = fixtures::seven_node_field();
    let tris = triangulate_all(&field, TriangulationParams::for_field(&field)).unwrap();
    let sys = build_system_matrices(&field, &tris).unwrap();
    let u = AnchorBlock::from_field(&field);
    let spec =
        |sigma| model(1.0, ChannelNoise::Fixed { var: 0.0 }, 0.0, BiasSpec::DistanceNoise { sigma, draws: 400 }, 3);
    let e_small =
        dlre_limit(&sys, &u, &Environment::from_deployment(spec(0.001), &sys, &field, &tris).unwrap()).unwrap().e_l;
    let e_large =
        dlre_limit(&sys, &u, &Environment::from_deployment(spec(0.02), &sys, &field, &tris).unwrap()).unwrap().e_l;
    assert!(e_small < e_large, "{e_small} vs {e_large}");
    let zero = Environment::from_deployment(spec(0.0), &sys, &field, &tris).unwrap();
    // only the rounding gap between the two weight normalizations remains
    assert!(zero.s_p().frobenius_norm() < 1e-12);
}

#[test]
fn noise_model_toml_is_strict() {
    let ok = "link_prob = 0.9\nmatrix_fluct_var = 0.1\nseed = 3\n[channel_noise]\nkind = \"inverse_sensor_count\"\n[bias]\nkind = \"random\"\nnorm = 0.01\n";
    let m: NoiseModel = toml::from_str(ok).unwrap();
    assert_eq!(m.bias, BiasSpec::Random { norm: 0.01 });
    let extra = ok.replace("kind = \"inverse_sensor_count\"", "kind = \"inverse_sensor_count\"\nvar = 1.0");
    assert!(toml::from_str::<NoiseModel>(&extra).is_err());
}
