use std::fs;
use std::io::{self, Write};
use std::path::Path;

use serde::Serialize;

use super::config::{Algorithm, ExperimentConfig};
use crate::deployment::SensorField;
use crate::engine::RunTrace;
use crate::geometry::NodeId;
use crate::random_env::{relative_error, DlreLimit};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SensorState {
    pub id: NodeId,
    pub coords: Vec<f64>,
}

/// Run-level results. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub algorithm: String,
    pub config_hash: String,
    pub seed: u64,
    pub dim: usize,
    pub num_anchors: usize,
    pub num_sensors: usize,
    pub iterations: usize,
    pub converged_at: Option<usize>,
    pub final_step_norm: Option<f64>,
    /// Largest coordinate error of the initial guess.
    pub initial_oracle_error: f64,
    /// Largest coordinate error after the last step.
    pub final_oracle_error: Option<f64>,
    pub spectral_radius_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_radius_j: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decay_rate: Option<f64>,
    pub max_messages_per_sensor: usize,
    pub max_ops_per_sensor: usize,
    /// `ρ(P + S_P)`, random-environment runs only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectral_radius_biased: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e_l: Option<f64>,
    /// Frobenius distance of the final estimate from `d*`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance_to_d_star: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_distance_to_d_star: Option<f64>,
    pub final_state: Vec<SensorState>,
}

impl Summary {
    pub fn new(
        cfg: &ExperimentConfig,
        field: &SensorField,
        trace: &RunTrace,
        initial_oracle_error: f64,
        rho_p: f64,
        dlre: Option<(&DlreLimit, f64)>,
    ) -> Self {
        let x = trace.final_state.sensors();
        let final_state = field
            .sensor_ids()
            .enumerate()
            .map(|(i, id)| SensorState { id, coords: x.row(i).iter().copied().collect() })
            .collect();
        let spectral_radius_j = match cfg.algorithm {
            Algorithm::DilocRel { alpha } => Some(1.0 - alpha + alpha * rho_p),
            _ => None,
        };
        Self {
            scenario: cfg.scenario.clone(),
            algorithm: cfg.algorithm.name().to_string(),
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            dim: field.dim(),
            num_anchors: field.num_anchors(),
            num_sensors: field.num_sensors(),
            iterations: trace.iterations(),
            converged_at: trace.converged_at,
            final_step_norm: trace.records.last().map(|r| r.step_norm),
            initial_oracle_error,
            final_oracle_error: trace.final_oracle_error(),
            spectral_radius_p: rho_p,
            spectral_radius_j,
            decay_rate: trace.decay_rate,
            max_messages_per_sensor: trace.counts.messages.iter().copied().max().unwrap_or(0),
            max_ops_per_sensor: trace.counts.ops.iter().copied().max().unwrap_or(0),
            spectral_radius_biased: dlre.map(|(_, r)| r),
            e_l: dlre.map(|(l, _)| l.e_l),
            distance_to_d_star: dlre.map(|(l, _)| (&x - &l.d_star).norm()),
            relative_distance_to_d_star: dlre.map(|(l, _)| relative_error(&x, &l.d_star)),
            final_state,
        }
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Trace rows `iteration,step_norm,oracle_error,messages_total,alpha_t`; the
/// oracle column is left empty when no oracle was supplied.
pub fn emit_trace(trace: &RunTrace, path: &Path) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "step_norm", "oracle_error", "messages_total", "alpha_t"])?;
    for r in &trace.records {
        w.write_record([
            r.iteration.to_string(),
            num(r.step_norm),
            r.oracle_error.map(num).unwrap_or_default(),
            r.messages_total.to_string(),
            num(r.alpha_t),
        ])?;
    }
    w.flush()
}

pub fn emit_summary(summary: &Summary, path: &Path) -> io::Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, summary)?;
    writeln!(f)
}

/// One file per selected sensor, `sensor_<id>.csv`, with a row
/// `iteration,x1,...,xm` per snapshot. `sensor_ids` gives the row order of
/// the snapshot matrices.
pub fn emit_plot_data(trace: &RunTrace, sensor_ids: &[NodeId], selected: &[NodeId], dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    let m = trace.final_state.dim();
    for id in selected {
        let Some(row) = sensor_ids.iter().position(|s| s == id) else {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("{id} is not a sensor")));
        };
        let mut w = csv::Writer::from_path(dir.join(format!("sensor_{}.csv", id.0)))?;
        let mut header = vec!["iteration".to_string()];
        header.extend((1..=m).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for snap in &trace.snapshots {
            let mut rec = vec![snap.iteration.to_string()];
            rec.extend((0..m).map(|j| num(snap.sensors[(row, j)])));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}
