//! Localization in a random environment (DLRE).
//!
//! Each iteration a sensor sees noisy versions of its rows of `B` and `P`,
//! loses each link with probability `1 - q`, and receives neighbor states
//! corrupted by additive channel noise. DLRE compensates lost links with the
//! factor `e/q` and damps noise with a decreasing gain `α(t)`:
//!
//! ```text
//! x_l(t+1) = (1 - α(t)) x_l(t)
//!          + α(t) [ Σ_{n anchor}  (e_ln/q) B̂_ln(t) (u_n + v_ln(t))
//!                 + Σ_{n sensor}  (e_ln/q) P̂_ln(t) (x_n(t) + v_ln(t)) ]
//! ```
//!
//! with `B̂(t) = B + S_B + S̃_B(t)` and `P̂(t) = P + S_P + S̃_P(t)`. The iterates
//! converge almost surely to `d* = (I - P - S_P)⁻¹ (B + S_B) U`.
//!
//! Randomness is drawn per `(seed, t, sensor row)` so a row of any iteration
//! can be regenerated on its own. Noise only touches actual links; entries
//! outside the patterns of `B` and `P` stay zero.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deployment::{SensorField, TriangulationSet};
use crate::engine::{drive, IterationState, RunTrace, StepCounts, StopRule, TraceOptions};
use crate::geometry::{generalized_volume, DistanceMatrix, GeometryError, NodeId};
use crate::rng::{self, Purpose};
use crate::sparse::CsrMatrix;
use crate::system::{
    dense_spectral_radius, exact_locations_oracle, solve_shifted, spectral_radius, AnchorBlock, SpectralOptions,
    SystemError, SystemMatrices, DENSE_SOLVE_LIMIT,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("weight schedule violates the persistence condition: {0}")]
    PersistenceViolation(String),
    #[error("invalid noise model: {0}")]
    InvalidModel(String),
    #[error("bias too large: spectral radius of P + S_P is {0}")]
    LowBiasViolation(f64),
    #[error("distance-noise bias needs the sensor field and triangulation sets")]
    BiasNeedsField,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("every noisy-distance draw for sensor {0} was unusable")]
    NoUsableDraws(NodeId),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Variance of the additive channel noise, per coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelNoise {
    Fixed {
        var: f64,
    },
    /// `1 / M`, roughly unit variance for the whole network.
    InverseSensorCount {},
}

impl ChannelNoise {
    pub fn variance(&self, num_sensors: usize) -> f64 {
        match *self {
            ChannelNoise::Fixed { var } => var,
            ChannelNoise::InverseSensorCount {} => 1.0 / num_sensors.max(1) as f64,
        }
    }
}

/// Fixed bias `S_B`, `S_P` of the system-matrix estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BiasSpec {
    None {},
    /// Gaussian directions on the link patterns, each block scaled to the
    /// given Frobenius norm.
    Random {
        norm: f64,
    },
    /// Mean error of weights recomputed from distances perturbed by
    /// `N(0, sigma²)`, estimated over `draws` samples per sensor.
    DistanceNoise {
        sigma: f64,
        draws: usize,
    },
}

/// Serializable description of a random environment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    /// Link-alive probability `q`, the same for every directed link.
    pub link_prob: f64,
    pub channel_noise: ChannelNoise,
    /// Variance of each entry of the zero-mean fluctuations `S̃_B(t)`,
    /// `S̃_P(t)`.
    pub matrix_fluct_var: f64,
    pub bias: BiasSpec,
    pub seed: u64,
}

impl NoiseModel {
    /// No link failures, no noise, no bias.
    pub fn degenerate(seed: u64) -> Self {
        Self {
            link_prob: 1.0,
            channel_noise: ChannelNoise::Fixed { var: 0.0 },
            matrix_fluct_var: 0.0,
            bias: BiasSpec::None {},
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.link_prob > 0.0 && self.link_prob <= 1.0) {
            return Err(EnvError::InvalidModel(format!("link_prob must lie in (0, 1], got {}", self.link_prob)));
        }
        let nonneg = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(EnvError::InvalidModel(format!("{name} must be finite and nonnegative, got {v}")))
            }
        };
        if let ChannelNoise::Fixed { var } = self.channel_noise {
            nonneg("channel noise variance", var)?;
        }
        nonneg("matrix_fluct_var", self.matrix_fluct_var)?;
        match self.bias {
            BiasSpec::None {} => {}
            BiasSpec::Random { norm } => nonneg("bias norm", norm)?,
            BiasSpec::DistanceNoise { sigma, draws } => {
                nonneg("distance noise sigma", sigma)?;
                if draws == 0 {
                    return Err(EnvError::InvalidModel("distance noise needs at least one draw".into()));
                }
            }
        }
        Ok(())
    }
}

/// A noise model realized against a particular system.
#[derive(Debug, Clone)]
pub struct Environment {
    model: NoiseModel,
    channel_var: f64,
    s_b: CsrMatrix,
    s_p: CsrMatrix,
    mean_b: CsrMatrix,
    mean_p: CsrMatrix,
    rho_biased: f64,
}

impl Environment {
    /// Realizes `model` for `sys`. Distance-noise bias needs the deployment,
    /// see [`Environment::from_deployment`].
    pub fn new(model: NoiseModel, sys: &SystemMatrices) -> Result<Self, EnvError> {
        model.validate()?;
        let (s_b, s_p) = match model.bias {
            BiasSpec::None {} => (sys.b().scaled(0.0), sys.p().scaled(0.0)),
            BiasSpec::Random { norm } => random_bias(sys, norm, model.seed),
            BiasSpec::DistanceNoise { .. } => return Err(EnvError::BiasNeedsField),
        };
        Self::with_bias(model, sys, s_b, s_p)
    }

    pub fn from_deployment(
        model: NoiseModel,
        sys: &SystemMatrices,
        field: &SensorField,
        tris: &[TriangulationSet],
    ) -> Result<Self, EnvError> {
        match model.bias {
            BiasSpec::DistanceNoise { sigma, draws } => {
                model.validate()?;
                let bias = distance_noise_bias(field, tris, sys, sigma, draws, model.seed)?;
                Self::with_bias(model, sys, bias.s_b, bias.s_p)
            }
            _ => Self::new(model, sys),
        }
    }

    /// Uses explicit biases, which must share the patterns of `B` and `P`.
    /// Fails when `ρ(P + S_P) ≥ 1`.
    pub fn with_bias(
        model: NoiseModel,
        sys: &SystemMatrices,
        s_b: CsrMatrix,
        s_p: CsrMatrix,
    ) -> Result<Self, EnvError> {
        model.validate()?;
        if !s_b.same_pattern(sys.b()) || !s_p.same_pattern(sys.p()) {
            return Err(EnvError::DimensionMismatch("bias must share the sparsity pattern of B and P".into()));
        }
        let mean_b = sys.b().add_same_pattern(&s_b);
        let mean_p = sys.p().add_same_pattern(&s_p);
        let rho = biased_spectral_radius(&mean_p)?;
        if rho >= 1.0 {
            return Err(EnvError::LowBiasViolation(rho));
        }
        Ok(Self {
            model,
            channel_var: model.channel_noise.variance(sys.num_sensors()),
            s_b,
            s_p,
            mean_b,
            mean_p,
            rho_biased: rho,
        })
    }

    pub fn model(&self) -> &NoiseModel {
        &self.model
    }

    pub fn channel_var(&self) -> f64 {
        self.channel_var
    }

    pub fn s_b(&self) -> &CsrMatrix {
        &self.s_b
    }

    pub fn s_p(&self) -> &CsrMatrix {
        &self.s_p
    }

    /// `B + S_B`.
    pub fn mean_b(&self) -> &CsrMatrix {
        &self.mean_b
    }

    /// `P + S_P`.
    pub fn mean_p(&self) -> &CsrMatrix {
        &self.mean_p
    }

    /// `ρ(P + S_P)`, or an upper bound on it for very large systems.
    pub fn biased_radius(&self) -> f64 {
        self.rho_biased
    }

    /// Same environment with both biases multiplied by `s`.
    pub fn with_bias_scaled(&self, sys: &SystemMatrices, s: f64) -> Result<Self, EnvError> {
        Self::with_bias(self.model, sys, self.s_b.scaled(s), self.s_p.scaled(s))
    }
}

fn biased_spectral_radius(mean_p: &CsrMatrix) -> Result<f64, EnvError> {
    if mean_p.nrows() <= DENSE_SOLVE_LIMIT {
        return Ok(dense_spectral_radius(&mean_p.to_dense()));
    }
    // ρ(A) ≤ ρ(|A|) for any real A; |A| is nonnegative so power iteration applies.
    let abs = mean_p.with_values(mean_p.values().iter().map(|v| v.abs()).collect());
    Ok(spectral_radius(&abs, SpectralOptions::default())?)
}

fn random_bias(sys: &SystemMatrices, norm: f64, seed: u64) -> (CsrMatrix, CsrMatrix) {
    let mut rng = rng::stream(seed, Purpose::Bias, &[sys.num_sensors() as u64]);
    let mut draw = |a: &CsrMatrix| {
        let dir: Vec<f64> = (0..a.nnz()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        let s = if len > 0.0 { norm / len } else { 0.0 };
        a.with_values(dir.into_iter().map(|v| v * s).collect())
    };
    let s_b = draw(sys.b());
    let s_p = draw(sys.p());
    (s_b, s_p)
}

/// Induced bias of the distance-noise adapter.
#[derive(Debug, Clone)]
pub struct DistanceBias {
    pub s_b: CsrMatrix,
    pub s_p: CsrMatrix,
    /// Mean per-entry variance of the recomputed weights.
    pub weight_var: f64,
    /// Draws discarded because the perturbed distances were not realizable.
    pub rejected_draws: usize,
}

/// Perturbs every distance within each sensor's triangulation set by
/// `N(0, sigma²)`, recomputes `a_lk = A({l} ∪ Θ \ {k}) / A(Θ)` from the noisy
/// distances, and returns the mean deviation from the exact weights as
/// `(S_B, S_P)`. The recomputed rows are not renormalized.
pub fn distance_noise_bias(
    field: &SensorField,
    tris: &[TriangulationSet],
    sys: &SystemMatrices,
    sigma: f64,
    draws: usize,
    seed: u64,
) -> Result<DistanceBias, EnvError> {
    let m = field.dim();
    let first_sensor = m + 2;
    let mut s_b = vec![0.0; sys.b().nnz()];
    let mut s_p = vec![0.0; sys.p().nnz()];
    let mut var_sum = 0.0;
    let mut var_count = 0usize;
    let mut rejected = 0;
    for (row, &l) in sys.sensor_ids().iter().enumerate() {
        let t = tris.iter().find(|t| t.sensor_id == l).ok_or(SystemError::MissingTriangulation(l))?;
        let mut ids = vec![l];
        ids.extend(&t.neighbor_ids);
        let exact = field.distance_matrix(&ids).to_rows();
        let mut rng = rng::stream(seed, Purpose::DistanceNoise, &[l.0 as u64]);
        let mut sum = vec![0.0; m + 1];
        let mut sum_sq = vec![0.0; m + 1];
        let mut used = 0usize;
        for _ in 0..draws {
            let mut noisy = exact.clone();
            for i in 0..ids.len() {
                for j in i + 1..ids.len() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let d = (exact[i][j].sqrt() + sigma * z).abs();
                    noisy[i][j] = d * d;
                    noisy[j][i] = d * d;
                }
            }
            let d = DistanceMatrix::new(ids.clone(), &noisy)?;
            match noisy_weights(&d, &ids, m) {
                Some(w) => {
                    for k in 0..=m {
                        sum[k] += w[k];
                        sum_sq[k] += w[k] * w[k];
                    }
                    used += 1;
                }
                None => rejected += 1,
            }
        }
        if used == 0 {
            return Err(EnvError::NoUsableDraws(l));
        }
        for (k, (&nid, &exact_w)) in t.neighbor_ids.iter().zip(&t.weights.weights).enumerate() {
            let mean = sum[k] / used as f64;
            var_sum += (sum_sq[k] / used as f64 - mean * mean).max(0.0);
            var_count += 1;
            let (block, pattern, col) = if field.is_anchor(nid) {
                (&mut s_b, sys.b(), nid.0 - 1)
            } else {
                (&mut s_p, sys.p(), nid.0 - first_sensor)
            };
            let pos = pattern
                .row_range(row)
                .find(|&p| pattern.col_indices()[p] == col)
                .ok_or(SystemError::UnknownNode(nid))?;
            block[pos] = mean - exact_w;
        }
    }
    Ok(DistanceBias {
        s_b: sys.b().with_values(s_b),
        s_p: sys.p().with_values(s_p),
        weight_var: if var_count > 0 { var_sum / var_count as f64 } else { 0.0 },
        rejected_draws: rejected,
    })
}

/// Volume-ratio weights from a possibly inconsistent distance table, `None`
/// when some simplex is not realizable or the reference simplex collapses.
fn noisy_weights(d: &DistanceMatrix, ids: &[NodeId], m: usize) -> Option<Vec<f64>> {
    let theta = &ids[1..];
    let whole = generalized_volume(&d.restrict(theta).ok()?, m).ok()?;
    if whole <= 0.0 {
        return None;
    }
    let mut sub = theta.to_vec();
    let mut w = Vec::with_capacity(m + 1);
    for k in 0..=m {
        sub[k] = ids[0];
        w.push(generalized_volume(&d.restrict(&sub).ok()?, m).ok()? / whole);
        sub[k] = theta[k];
    }
    Some(w)
}

/// Gain sequences satisfying `Σα = ∞`, `Σα² < ∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSchedule {
    /// `α(t) = a / (t + 1)`.
    Harmonic { a: f64 },
    /// `α(t) = 1 / (t + 1)^p`.
    Power { p: f64 },
}

/// Anything that yields a gain per iteration. A bare `f64` is a constant
/// gain, which does not satisfy the persistence condition but is handy for
/// one-step checks.
pub trait StepSize {
    fn alpha(&self, t: usize) -> f64;
}

impl StepSize for WeightSchedule {
    fn alpha(&self, t: usize) -> f64 {
        let t1 = t as f64 + 1.0;
        match *self {
            WeightSchedule::Harmonic { a } => a / t1,
            WeightSchedule::Power { p } => t1.powf(-p),
        }
    }
}

impl StepSize for f64 {
    fn alpha(&self, _t: usize) -> f64 {
        *self
    }
}

/// Validates a schedule. Early gains above one (e.g. `a = 4`) are allowed.
pub fn make_weight_schedule(spec: WeightSchedule) -> Result<WeightSchedule, EnvError> {
    match spec {
        WeightSchedule::Harmonic { a } if a > 0.0 && a.is_finite() => Ok(spec),
        WeightSchedule::Harmonic { a } => {
            Err(EnvError::PersistenceViolation(format!("harmonic gain must be positive, got {a}")))
        }
        WeightSchedule::Power { p } if p > 0.5 && p <= 1.0 => Ok(spec),
        WeightSchedule::Power { p } => {
            Err(EnvError::PersistenceViolation(format!("power exponent must lie in (0.5, 1], got {p}")))
        }
    }
}

/// One iteration's worth of randomness.
#[derive(Debug, Clone)]
pub struct EnvironmentSample {
    /// Link states `e_ln(t)`, aligned with the stored entries of `B`.
    pub alive_b: Vec<bool>,
    /// Link states aligned with the stored entries of `P`.
    pub alive_p: Vec<bool>,
    /// `B + S_B + S̃_B(t)`.
    pub b_hat: CsrMatrix,
    /// `P + S_P + S̃_P(t)`.
    pub p_hat: CsrMatrix,
    /// Channel noise `v_ln(t)`, `m` values per stored entry of `B`.
    pub v_b: Vec<f64>,
    /// Channel noise, `m` values per stored entry of `P`.
    pub v_p: Vec<f64>,
}

/// Draws link states, matrix fluctuations and channel noise for iteration
/// `t`. Deterministic in `(seed, t)`.
pub fn sample_environment(env: &Environment, sys: &SystemMatrices, t: usize) -> EnvironmentSample {
    let m = sys.dim();
    let q = env.model.link_prob;
    let fluct_sd = env.model.matrix_fluct_var.sqrt();
    let noise_sd = env.channel_var.sqrt();
    let (nb, np) = (sys.b().nnz(), sys.p().nnz());
    let mut alive_b = vec![true; nb];
    let mut alive_p = vec![true; np];
    let mut b_vals = env.mean_b.values().to_vec();
    let mut p_vals = env.mean_p.values().to_vec();
    let mut v_b = vec![0.0; nb * m];
    let mut v_p = vec![0.0; np * m];
    for l in 0..sys.num_sensors() {
        let mut rng = rng::stream(env.model.seed, Purpose::Environment, &[t as u64, l as u64]);
        let mut link = |alive: &mut bool, w: &mut f64, v: &mut [f64]| {
            *alive = q >= 1.0 || rng.random_bool(q);
            let z: f64 = StandardNormal.sample(&mut rng);
            *w += fluct_sd * z;
            for vj in v.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *vj = noise_sd * z;
            }
        };
        for k in sys.b().row_range(l) {
            link(&mut alive_b[k], &mut b_vals[k], &mut v_b[k * m..(k + 1) * m]);
        }
        for k in sys.p().row_range(l) {
            link(&mut alive_p[k], &mut p_vals[k], &mut v_p[k * m..(k + 1) * m]);
        }
    }
    EnvironmentSample {
        alive_b,
        alive_p,
        b_hat: env.mean_b.with_values(b_vals),
        p_hat: env.mean_p.with_values(p_vals),
        v_b,
        v_p,
    }
}

/// Applies one DLRE update to the `M x m` estimate `x` with a given sample
/// and gain. Returns the new estimate and the number of messages each
/// sensor received.
pub fn dlre_update(
    x: &DMatrix<f64>,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
    env: &Environment,
    sample: &EnvironmentSample,
    alpha: f64,
) -> (DMatrix<f64>, Vec<usize>) {
    let m = sys.dim();
    let q = env.model.link_prob;
    let mut out = DMatrix::zeros(x.nrows(), m);
    let mut received = vec![0; x.nrows()];
    for l in 0..x.nrows() {
        let mut acc = vec![0.0; m];
        for k in sys.b().row_range(l) {
            if sample.alive_b[k] {
                let g = sample.b_hat.values()[k] / q;
                let n = sys.b().col_indices()[k];
                for j in 0..m {
                    acc[j] += g * (anchors.u[(n, j)] + sample.v_b[k * m + j]);
                }
                received[l] += 1;
            }
        }
        for k in sys.p().row_range(l) {
            if sample.alive_p[k] {
                let g = sample.p_hat.values()[k] / q;
                let n = sys.p().col_indices()[k];
                for j in 0..m {
                    acc[j] += g * (x[(n, j)] + sample.v_p[k * m + j]);
                }
                received[l] += 1;
            }
        }
        for j in 0..m {
            out[(l, j)] = (1.0 - alpha) * x[(l, j)] + alpha * acc[j];
        }
    }
    (out, received)
}

/// One DLRE iteration at time `t`.
pub fn dlre_step(
    x: &DMatrix<f64>,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
    env: &Environment,
    gain: &impl StepSize,
    t: usize,
) -> DMatrix<f64> {
    let sample = sample_environment(env, sys, t);
    dlre_update(x, sys, anchors, env, &sample, gain.alpha(t)).0
}

/// `E[x(t+1) | x(t)] = x − α [(I − P − S_P) x − (B + S_B) U]`.
pub fn conditional_mean_step(x: &DMatrix<f64>, anchors: &AnchorBlock, env: &Environment, alpha: f64) -> DMatrix<f64> {
    let drift = x - env.mean_p.mul_dense(x) - env.mean_b.mul_dense(&anchors.u);
    x - drift * alpha
}

/// Almost-sure limit of DLRE and its distance from the exact locations.
#[derive(Debug, Clone)]
pub struct DlreLimit {
    /// `(I − P − S_P)⁻¹ (B + S_B) U`.
    pub d_star: DMatrix<f64>,
    /// Frobenius norm of `d* − X*`.
    pub e_l: f64,
}

pub fn dlre_limit(sys: &SystemMatrices, anchors: &AnchorBlock, env: &Environment) -> Result<DlreLimit, EnvError> {
    let rhs = env.mean_b.mul_dense(&anchors.u);
    let d_star = solve_shifted(&env.mean_p, &rhs)?;
    let x_star = exact_locations_oracle(sys, anchors)?;
    let e_l = (&d_star - x_star).norm();
    Ok(DlreLimit { d_star, e_l })
}

/// Runs DLRE from `initial` until the step norm drops below
/// `stop.step_tol` (pass 0 to always run `stop.max_iters` steps).
///
/// Each sensor is charged one message per live link. Operations are counted
/// like DILOC-REL on the live links: one multiply and one add per link, less
/// one add, plus three for the relaxation.
pub fn run_dlre(
    initial: IterationState,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
    env: &Environment,
    schedule: &impl StepSize,
    stop: StopRule,
    opts: &TraceOptions<'_>,
) -> Result<RunTrace, EnvError> {
    if initial.num_sensors() != sys.num_sensors() || initial.dim() != sys.dim() {
        return Err(EnvError::DimensionMismatch("initial state does not match the system".into()));
    }
    if initial.anchors() != anchors.u {
        return Err(EnvError::DimensionMismatch("initial anchor rows differ from the anchor block".into()));
    }
    drive(initial, stop, opts, |s| {
        let t = s.t();
        let alpha = schedule.alpha(t);
        let sample = sample_environment(env, sys, t);
        let (next, received) = dlre_update(&s.sensors(), sys, anchors, env, &sample, alpha);
        let ops = received.iter().map(|&r| if r > 0 { 2 * r - 1 + 3 } else { 3 }).collect();
        Ok((s.successor(next, alpha, StepCounts { messages: received, ops }), alpha))
    })
}

/// Relative Frobenius distance `‖x − d*‖ / ‖d*‖`.
pub fn relative_error(x: &DMatrix<f64>, d_star: &DMatrix<f64>) -> f64 {
    (x - d_star).norm() / d_star.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deployment::{triangulate_all, TriangulationParams};
    use crate::engine::diloc_rel_step;
    use crate::fixtures;
    use crate::system::build_system_matrices;

    fn fixture() -> (SensorField, Vec<TriangulationSet>, SystemMatrices, AnchorBlock) {
        let f = fixtures::seven_node_field();
        let tris = triangulate_all(&f, TriangulationParams::for_field(&f)).unwrap();
        let sys = build_system_matrices(&f, &tris).unwrap();
        let u = AnchorBlock::from_field(&f);
        (f, tris, sys, u)
    }

    #[test]
    fn schedules() {
        let h = make_weight_schedule(WeightSchedule::Harmonic { a: 4.0 }).unwrap();
        assert_eq!(h.alpha(0), 4.0);
        assert_eq!(h.alpha(3), 1.0);
        assert!(make_weight_schedule(WeightSchedule::Power { p: 0.55 }).is_ok());
        assert!(make_weight_schedule(WeightSchedule::Power { p: 1.0 }).is_ok());
        for p in [0.5, 0.3, 1.01] {
            assert!(matches!(
                make_weight_schedule(WeightSchedule::Power { p }),
                Err(EnvError::PersistenceViolation(_))
            ));
        }
        assert!(make_weight_schedule(WeightSchedule::Harmonic { a: 0.0 }).is_err());
    }

    #[test]
    fn degenerate_sample_is_exact() {
        let (_, _, sys, _) = fixture();
        let env = Environment::new(NoiseModel::degenerate(1), &sys).unwrap();
        let s = sample_environment(&env, &sys, 17);
        assert_eq!(&s.b_hat, sys.b());
        assert_eq!(&s.p_hat, sys.p());
        assert!(s.alive_b.iter().chain(&s.alive_p).all(|&a| a));
        assert!(s.v_b.iter().chain(&s.v_p).all(|&v| v == 0.0));
    }

    #[test]
    fn degenerate_dlre_matches_relaxed_diloc() {
        let (_, _, sys, u) = fixture();
        let env = Environment::new(NoiseModel::degenerate(1), &sys).unwrap();
        let state = IterationState::uniform_in_box(&u, 4, 9);
        for a in [0.3, 1.0] {
            let next = dlre_step(&state.sensors(), &sys, &u, &env, &a, 0);
            assert_eq!(next, diloc_rel_step(&state, &sys, &u, a).unwrap().sensors());
        }
    }

    #[test]
    fn samples_are_reproducible() {
        let (_, _, sys, _) = fixture();
        let model = NoiseModel {
            link_prob: 0.9,
            channel_noise: ChannelNoise::InverseSensorCount {},
            matrix_fluct_var: 0.1,
            bias: BiasSpec::None {},
            seed: 4,
        };
        let env = Environment::new(model, &sys).unwrap();
        let a = sample_environment(&env, &sys, 3);
        let b = sample_environment(&env, &sys, 3);
        let c = sample_environment(&env, &sys, 4);
        assert_eq!(a.p_hat, b.p_hat);
        assert_eq!(a.v_p, b.v_p);
        assert_ne!(a.p_hat, c.p_hat);
        assert_eq!(env.channel_var(), 0.25);
    }

    #[test]
    fn link_frequency_matches_q() {
        let (_, _, sys, _) = fixture();
        let mut model = NoiseModel::degenerate(8);
        model.link_prob = 0.9;
        let env = Environment::new(model, &sys).unwrap();
        let (mut alive, mut total) = (0usize, 0usize);
        for t in 0..10_000 {
            let s = sample_environment(&env, &sys, t);
            alive += s.alive_b[0] as usize;
            total += 1;
        }
        let freq = alive as f64 / total as f64;
        assert!((freq - 0.9).abs() < 0.01, "{freq}");
    }

    #[test]
    fn unbiased_limit_is_exact() {
        let (_, _, sys, u) = fixture();
        let env = Environment::new(NoiseModel::degenerate(1), &sys).unwrap();
        let lim = dlre_limit(&sys, &u, &env).unwrap();
        assert_eq!(lim.e_l, 0.0);
        let drift = conditional_mean_step(&lim.d_star, &u, &env, 0.7) - &lim.d_star;
        assert!(drift.amax() < 1e-12);
    }

    #[test]
    fn bias_error_shrinks_with_scale() {
        let (_, _, sys, u) = fixture();
        let mut model = NoiseModel::degenerate(2);
        model.bias = BiasSpec::Random { norm: 0.01 };
        let env = Environment::new(model, &sys).unwrap();
        assert!((env.s_p().frobenius_norm() - 0.01).abs() < 1e-12);
        assert!((env.s_b().frobenius_norm() - 0.01).abs() < 1e-12);
        let errs: Vec<f64> = [1.0, 0.5, 0.25, 0.125]
            .iter()
            .map(|&s| dlre_limit(&sys, &u, &env.with_bias_scaled(&sys, s).unwrap()).unwrap().e_l)
            .collect();
        assert!(errs[0] > 0.0);
        assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
    }

    #[test]
    fn large_bias_is_rejected() {
        let (_, _, sys, _) = fixture();
        let s_p = sys.p().scaled(1.0);
        let r = Environment::with_bias(NoiseModel::degenerate(0), &sys, sys.b().scaled(0.0), s_p);
        assert!(matches!(r, Err(EnvError::LowBiasViolation(_))));
    }

    #[test]
    fn distance_noise_adapter() {
        let (f, tris, sys, _) = fixture();
        let zero = distance_noise_bias(&f, &tris, &sys, 0.0, 3, 1).unwrap();
        assert!(zero.s_b.frobenius_norm() < 1e-9 && zero.s_p.frobenius_norm() < 1e-9);
        let noisy = distance_noise_bias(&f, &tris, &sys, 0.05, 400, 1).unwrap();
        assert!(noisy.weight_var > 0.0);
        let mut model = NoiseModel::degenerate(1);
        model.bias = BiasSpec::DistanceNoise { sigma: 0.05, draws: 400 };
        assert!(matches!(Environment::new(model, &sys), Err(EnvError::BiasNeedsField)));
        let env = Environment::from_deployment(model, &sys, &f, &tris).unwrap();
        assert_eq!(env.s_p(), &noisy.s_p);
    }
}
