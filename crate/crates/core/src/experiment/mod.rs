//! Seeded experiment runs and their on-disk artifacts.
//!
//! A run writes, into its output directory:
//!
//! - `trace.csv`: one row per iteration step
//! - `summary.json`: run-level results
//! - `plot/sensor_<id>.csv`: estimated coordinates per snapshot
//! - `config.resolved.toml`: the configuration with all defaults filled in
//! - `matrices/B.coo`, `matrices/P.coo`: system matrices (optional)
//!
//! Outputs depend only on the config and the seed.

mod config;
mod output;
mod presets;

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

pub use config::{Algorithm, ExperimentConfig, FieldSource, NoiseSpec, OutputSpec, StopSpec, DEFAULT_SNAPSHOT_STRIDE};
pub use output::{emit_plot_data, emit_summary, emit_trace, SensorState, Summary};
pub use presets::{preset, PRESET_NAMES};

use crate::deployment::{
    generate_poisson_field, generate_uniform_field, load_field, triangulate_all, SensorField, TriangulationParams,
};
use crate::engine::{run_to_convergence, IterationState, Mode, StopRule, TraceOptions};
use crate::fixtures;
use crate::geometry::NodeId;
use crate::random_env::{dlre_limit, make_weight_schedule, run_dlre, Environment};
use crate::rng::{self, Purpose};
use crate::system::{build_system_matrices, spectral_radius, AnchorBlock, SpectralOptions};

/// Environment variable naming the root for default output directories.
pub const OUTPUT_ROOT_ENV: &str = "DILOC_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot load field: {0}")]
    FieldLoad(String),
    #[error("run failed: {0}")]
    Runtime(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// Process exit status: 2 for configuration problems, 3 for failures
    /// during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) | ExperimentError::FieldLoad(_) => 2,
            ExperimentError::Runtime(_) | ExperimentError::Io(_) => 3,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Runtime(e.to_string())
}

/// Reads a config file, or a built-in scenario written as `preset:NAME`.
pub fn load_config(spec: &str) -> Result<ExperimentConfig, ExperimentError> {
    if let Some(name) = spec.strip_prefix("preset:") {
        return preset(name).ok_or_else(|| ExperimentError::Config(format!("unknown preset `{name}`")));
    }
    let text = fs::read_to_string(spec).map_err(|e| ExperimentError::Config(format!("{spec}: {e}")))?;
    ExperimentConfig::from_toml(&text)
}

/// Output directory: explicit override, then the config's `output_dir`, then
/// `$DILOC_OUTPUT_ROOT/<scenario>`, then `runs/<scenario>`.
pub fn resolve_output_dir(cfg: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(p) = &cfg.output_dir {
        return p.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(&cfg.scenario)
}

/// Builds the field a config describes, for a given seed.
pub fn build_field(cfg: &ExperimentConfig, seed: u64) -> Result<SensorField, ExperimentError> {
    let field = match &cfg.field {
        FieldSource::Fixture {} => fixtures::seven_node_field(),
        FieldSource::Poisson { density, anchors } => {
            generate_poisson_field(cfg.dim, *density, anchors.clone(), seed).map_err(runtime)?
        }
        FieldSource::Uniform { count, anchors } => {
            generate_uniform_field(anchors.clone(), *count, seed).map_err(runtime)?
        }
        FieldSource::File { path } => load_field(path).map_err(|e| ExperimentError::FieldLoad(e.to_string()))?,
    };
    if field.dim() != cfg.dim {
        return Err(ExperimentError::Config(format!("field is {}-dimensional, config says {}", field.dim(), cfg.dim)));
    }
    Ok(field)
}

/// Ground-truth sensor block of a field.
pub fn true_sensor_block(field: &SensorField) -> DMatrix<f64> {
    let m = field.dim();
    let ids: Vec<NodeId> = field.sensor_ids().collect();
    DMatrix::from_fn(ids.len(), m, |i, j| field.true_position(ids[i]).expect("sensor has a position")[j])
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub out_dir: PathBuf,
}

/// Runs `cfg` with its own seed and writes every artifact into `out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunOutcome, ExperimentError> {
    cfg.validate()?;
    let seed = cfg.seed;
    let field = build_field(cfg, seed)?;
    let tris = triangulate_all(&field, TriangulationParams::for_field(&field)).map_err(runtime)?;
    let sys = build_system_matrices(&field, &tris).map_err(runtime)?;
    let anchors = AnchorBlock::from_field(&field);
    let truth = true_sensor_block(&field);
    let initial = IterationState::uniform_in_box(&anchors, sys.num_sensors(), seed);
    let initial_error = crate::engine::max_abs_diff(&initial.sensors(), &truth);
    let stop = StopRule { step_tol: cfg.stop.step_tol, max_iters: cfg.stop.max_iters };
    let opts =
        TraceOptions { oracle: Some(&truth), snapshot_stride: Some(cfg.output.snapshot_stride), seed: Some(seed) };
    let rho_p = spectral_radius(sys.p(), SpectralOptions { seed, ..Default::default() }).map_err(runtime)?;

    let mut dlre = None;
    let trace = match cfg.algorithm {
        Algorithm::Diloc {} => {
            run_to_convergence(initial, &sys, &anchors, Mode::Diloc, stop, &opts).map_err(runtime)?
        }
        Algorithm::DilocRel { alpha } => {
            run_to_convergence(initial, &sys, &anchors, Mode::DilocRel(alpha), stop, &opts).map_err(runtime)?
        }
        Algorithm::Dlre { schedule } => {
            let schedule = make_weight_schedule(schedule).map_err(|e| ExperimentError::Config(e.to_string()))?;
            let noise_seed = rng::derive_seed(seed, &[Purpose::Environment as u64]);
            let model = cfg.noise.unwrap_or_default().model(noise_seed);
            let env = Environment::from_deployment(model, &sys, &field, &tris).map_err(runtime)?;
            let limit = dlre_limit(&sys, &anchors, &env).map_err(runtime)?;
            let rho_biased = env.biased_radius();
            let trace = run_dlre(initial, &sys, &anchors, &env, &schedule, stop, &opts).map_err(runtime)?;
            dlre = Some((limit, rho_biased));
            trace
        }
    };

    let summary = Summary::new(cfg, &field, &trace, initial_error, rho_p, dlre.as_ref().map(|(l, r)| (l, *r)));
    fs::create_dir_all(out_dir)?;
    emit_trace(&trace, &out_dir.join("trace.csv"))?;
    emit_summary(&summary, &out_dir.join("summary.json"))?;
    let sensor_ids: Vec<NodeId> = field.sensor_ids().collect();
    let selected: Vec<NodeId> = if cfg.output.plot_sensors.is_empty() {
        sensor_ids.clone()
    } else {
        cfg.output.plot_sensors.iter().map(|&i| NodeId(i)).collect()
    };
    for id in &selected {
        if !field.is_sensor(*id) {
            return Err(ExperimentError::Config(format!("plot_sensors lists {id}, which is not a sensor")));
        }
    }
    emit_plot_data(&trace, &sensor_ids, &selected, &out_dir.join("plot"))?;
    fs::write(out_dir.join("config.resolved.toml"), cfg.to_toml())?;
    if cfg.output.dump_matrices {
        let dir = out_dir.join("matrices");
        fs::create_dir_all(&dir)?;
        sys.write_dump(fs::File::create(dir.join("B.coo"))?, fs::File::create(dir.join("P.coo"))?)?;
    }
    Ok(RunOutcome { summary, out_dir: out_dir.to_path_buf() })
}

/// Seed of replica `i` of a run seeded with `seed`.
pub fn replica_seed(seed: u64, i: usize) -> u64 {
    rng::derive_seed(seed, &[Purpose::Replica as u64, i as u64])
}

/// Runs `k` independent replicas in parallel, replica `i` in
/// `out_dir/replica_<i>` with seed [`replica_seed`]. `k = 1` runs the config
/// itself directly in `out_dir`.
pub fn run_replicas(cfg: &ExperimentConfig, k: usize, out_dir: &Path) -> Result<Vec<RunOutcome>, ExperimentError> {
    if k == 0 {
        return Err(ExperimentError::Config("replica count must be at least 1".into()));
    }
    if k == 1 {
        return Ok(vec![run_experiment(cfg, out_dir)?]);
    }
    (0..k)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = replica_seed(cfg.seed, i);
            run_experiment(&c, &out_dir.join(format!("replica_{i}")))
        })
        .collect()
}
