//! Built-in scenarios covering the seven-node example and the four
//! numerical-study regimes (deterministic, link failures with channel noise,
//! noisy distances, everything combined).

use super::config::{Algorithm, ExperimentConfig, FieldSource, NoiseSpec, OutputSpec, StopSpec};
use crate::random_env::{BiasSpec, ChannelNoise, WeightSchedule};

pub const PRESET_NAMES: [&str; 6] =
    ["deterministic-fixture", "deterministic-random", "relaxed-fixture", "lf-cn", "noisy-distances", "all-random"];

/// Iteration cap of the random-environment presets; raise it in a config
/// file for longer runs.
const NOISY_MAX_ITERS: usize = 20_000;

fn small_triangle() -> Vec<Vec<f64>> {
    vec![vec![0.0, 0.0], vec![10.0, 0.0], vec![5.0, 9.0]]
}

fn fifty_nodes() -> FieldSource {
    FieldSource::Uniform { count: 47, anchors: small_triangle() }
}

fn base(scenario: &str, field: FieldSource, algorithm: Algorithm) -> ExperimentConfig {
    ExperimentConfig {
        scenario: scenario.to_string(),
        dim: 2,
        seed: 1,
        output_dir: None,
        field,
        algorithm,
        noise: None,
        stop: StopSpec::default(),
        output: OutputSpec::default(),
    }
}

fn noisy(mut cfg: ExperimentConfig, noise: NoiseSpec) -> ExperimentConfig {
    cfg.noise = Some(noise);
    cfg.stop = StopSpec { step_tol: 0.0, max_iters: NOISY_MAX_ITERS };
    cfg.output.plot_sensors = vec![10, 30];
    cfg
}

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "deterministic-fixture" => {
            let mut c = base(name, FieldSource::Fixture {}, Algorithm::Diloc {});
            c.output.snapshot_stride = 1;
            c
        }
        "deterministic-random" => {
            let anchors = vec![vec![0.0, 0.0], vec![100.0, 0.0], vec![50.0, 90.0]];
            let mut c = base(name, FieldSource::Uniform { count: 497, anchors }, Algorithm::Diloc {});
            c.output.plot_sensors = vec![100, 300];
            c
        }
        "relaxed-fixture" => {
            let mut c = base(name, FieldSource::Fixture {}, Algorithm::DilocRel { alpha: 0.5 });
            c.output.snapshot_stride = 1;
            c
        }
        "lf-cn" => noisy(
            base(name, fifty_nodes(), Algorithm::Dlre { schedule: WeightSchedule::Harmonic { a: 4.0 } }),
            NoiseSpec {
                link_prob: 0.9,
                channel_noise: ChannelNoise::InverseSensorCount {},
                matrix_fluct_var: 0.0,
                bias: BiasSpec::None {},
            },
        ),
        "noisy-distances" => noisy(
            base(name, fifty_nodes(), Algorithm::Dlre { schedule: WeightSchedule::Power { p: 0.55 } }),
            NoiseSpec {
                link_prob: 1.0,
                channel_noise: ChannelNoise::Fixed { var: 0.0 },
                matrix_fluct_var: 0.1,
                bias: BiasSpec::Random { norm: 0.05 },
            },
        ),
        "all-random" => noisy(
            base(name, fifty_nodes(), Algorithm::Dlre { schedule: WeightSchedule::Power { p: 0.55 } }),
            NoiseSpec {
                link_prob: 0.9,
                channel_noise: ChannelNoise::InverseSensorCount {},
                matrix_fluct_var: 0.1,
                bias: BiasSpec::Random { norm: 0.05 },
            },
        ),
        _ => return None,
    };
    Some(cfg)
}
