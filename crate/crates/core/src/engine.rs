//! Deterministic iterations: DILOC and its relaxed form DILOC-REL.
//!
//! The state is the full `N x m` coordinate matrix `C(t)` with anchors in the
//! first `m+1` rows. Each step is synchronous: every sensor reads its
//! neighbors' states from iteration `t` and writes iteration `t+1`.

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::rng::{self, Purpose};
use crate::sparse::CsrMatrix;
use crate::system::{spectral_radius, AnchorBlock, SpectralOptions, SystemError, SystemMatrices};

/// Default stopping tolerance on the step norm.
pub const DEFAULT_STEP_TOL: f64 = 1e-10;
/// Default iteration cap.
pub const DEFAULT_MAX_ITERS: usize = 100_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("anchor rows of the state differ from the anchor block")]
    AnchorMismatch,
    #[error("relaxation parameter must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("invalid stopping rule: {0}")]
    InvalidStop(String),
    #[error(transparent)]
    System(#[from] SystemError),
}

/// Per-sensor counters of the most recent step: messages received and
/// arithmetic operations spent on the state update (one vector multiply or
/// add counts as one operation).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepCounts {
    pub messages: Vec<usize>,
    pub ops: Vec<usize>,
}

impl StepCounts {
    pub fn total_messages(&self) -> usize {
        self.messages.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationState {
    c: DMatrix<f64>,
    num_anchors: usize,
    t: usize,
    alpha: f64,
    counts: StepCounts,
}

impl IterationState {
    /// Stacks the anchor block over the given `M x m` sensor estimates.
    pub fn new(anchors: &AnchorBlock, sensors: &DMatrix<f64>) -> Result<Self, EngineError> {
        let m = anchors.dim();
        if anchors.u.nrows() != m + 1 || sensors.ncols() != m {
            return Err(EngineError::DimensionMismatch(format!(
                "anchors {}x{}, sensors {}x{}",
                anchors.u.nrows(),
                anchors.u.ncols(),
                sensors.nrows(),
                sensors.ncols()
            )));
        }
        let mut c = DMatrix::zeros(m + 1 + sensors.nrows(), m);
        c.rows_mut(0, m + 1).copy_from(&anchors.u);
        c.rows_mut(m + 1, sensors.nrows()).copy_from(sensors);
        Ok(Self { c, num_anchors: m + 1, t: 0, alpha: 1.0, counts: StepCounts::default() })
    }

    /// Sensor estimates drawn i.i.d. uniformly over the anchors' bounding
    /// box, so some start outside the anchor simplex.
    pub fn uniform_in_box(anchors: &AnchorBlock, num_sensors: usize, seed: u64) -> Self {
        let m = anchors.dim();
        let mut rng = rng::stream(seed, Purpose::Initialization, &[num_sensors as u64]);
        let bounds: Vec<(f64, f64)> = (0..m)
            .map(|j| {
                let col = anchors.u.column(j);
                (col.min(), col.max())
            })
            .collect();
        let sensors = DMatrix::from_fn(num_sensors, m, |_, j| {
            let (lo, hi) = bounds[j];
            if hi > lo {
                rng.random_range(lo..hi)
            } else {
                lo
            }
        });
        // dimensions agree by construction
        Self::new(anchors, &sensors).expect("bounding-box initialization")
    }

    /// Full coordinate matrix, anchors first.
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn dim(&self) -> usize {
        self.c.ncols()
    }

    pub fn num_sensors(&self) -> usize {
        self.c.nrows() - self.num_anchors
    }

    /// Sensor estimates `X(t)`, one row per sensor.
    pub fn sensors(&self) -> DMatrix<f64> {
        self.c.rows(self.num_anchors, self.num_sensors()).into_owned()
    }

    pub fn anchors(&self) -> DMatrix<f64> {
        self.c.rows(0, self.num_anchors).into_owned()
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn counts(&self) -> &StepCounts {
        &self.counts
    }

    /// Entry `(l, j)` of the sensor block.
    pub fn x(&self, l: usize, j: usize) -> f64 {
        self.c[(self.num_anchors + l, j)]
    }

    pub(crate) fn successor(&self, sensors: DMatrix<f64>, alpha: f64, counts: StepCounts) -> Self {
        let mut c = self.c.clone();
        c.rows_mut(self.num_anchors, sensors.nrows()).copy_from(&sensors);
        Self { c, num_anchors: self.num_anchors, t: self.t + 1, alpha, counts }
    }

    fn check(&self, sys: &SystemMatrices, anchors: &AnchorBlock) -> Result<(), EngineError> {
        if sys.dim() != self.dim() || sys.num_sensors() != self.num_sensors() || anchors.u.nrows() != self.num_anchors {
            return Err(EngineError::DimensionMismatch(format!(
                "state has {} sensors in {} dimensions, system has {} in {}",
                self.num_sensors(),
                self.dim(),
                sys.num_sensors(),
                sys.dim()
            )));
        }
        if self.c.rows(0, self.num_anchors) != anchors.u {
            return Err(EngineError::AnchorMismatch);
        }
        Ok(())
    }
}

/// `P X(t) + B U` with per-sensor accounting: `m+1` neighbor states read,
/// `m+1` multiplies and `m` adds.
fn combine(state: &IterationState, sys: &SystemMatrices) -> (DMatrix<f64>, StepCounts) {
    let m = state.dim();
    let a = state.num_anchors;
    let n = state.num_sensors();
    let mut out = DMatrix::zeros(n, m);
    let mut counts = StepCounts { messages: vec![0; n], ops: vec![0; n] };
    for l in 0..n {
        let terms = sys.b().row(l).chain(sys.p().row(l).map(|(k, w)| (a + k, w)));
        let mut arity = 0;
        for (row, w) in terms {
            for j in 0..m {
                out[(l, j)] += w * state.c[(row, j)];
            }
            arity += 1;
        }
        counts.messages[l] = arity;
        counts.ops[l] = 2 * arity - usize::from(arity > 0);
    }
    (out, counts)
}

/// One DILOC step: sensor rows become `P X(t) + B U`, anchors stay put.
pub fn diloc_step(
    state: &IterationState,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
) -> Result<IterationState, EngineError> {
    state.check(sys, anchors)?;
    let (next, counts) = combine(state, sys);
    Ok(state.successor(next, 1.0, counts))
}

/// One DILOC-REL step, `X(t+1) = (1-α) X(t) + α (P X(t) + B U)`.
///
/// `α = 1` delegates to [`diloc_step`]. Otherwise the relaxation costs three
/// extra operations per sensor on top of the plain combination.
pub fn diloc_rel_step(
    state: &IterationState,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
    alpha: f64,
) -> Result<IterationState, EngineError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(EngineError::InvalidAlpha(alpha));
    }
    if alpha == 1.0 {
        return diloc_step(state, sys, anchors);
    }
    state.check(sys, anchors)?;
    let (mut next, mut counts) = combine(state, sys);
    for l in 0..next.nrows() {
        for j in 0..next.ncols() {
            next[(l, j)] = (1.0 - alpha) * state.x(l, j) + alpha * next[(l, j)];
        }
        counts.ops[l] += 3;
    }
    Ok(state.successor(next, alpha, counts))
}

/// `J = (1-α) I + α P`.
pub fn relaxation_matrix(p: &CsrMatrix, alpha: f64) -> CsrMatrix {
    let rows = (0..p.nrows())
        .map(|i| {
            let mut row: Vec<(usize, f64)> = p.row(i).filter(|&(c, _)| c != i).map(|(c, v)| (c, alpha * v)).collect();
            row.push((i, 1.0 - alpha + alpha * p.get(i, i)));
            row
        })
        .collect();
    CsrMatrix::from_rows(p.ncols(), rows)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Diloc,
    DilocRel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub step_tol: f64,
    pub max_iters: usize,
}

impl Default for StopRule {
    fn default() -> Self {
        Self { step_tol: DEFAULT_STEP_TOL, max_iters: DEFAULT_MAX_ITERS }
    }
}

/// What a run records besides the step norms.
#[derive(Debug, Clone, Default)]
pub struct TraceOptions<'a> {
    /// Ground-truth sensor block; enables the oracle-error column.
    pub oracle: Option<&'a DMatrix<f64>>,
    /// Keep the sensor block every `stride` iterations (and at the end).
    /// `None` keeps no snapshots.
    pub snapshot_stride: Option<usize>,
    /// Seed that produced the initial state, carried into the trace.
    pub seed: Option<u64>,
}

/// One row per executed step `t -> t+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    /// Step index `t`; the row describes the state `X(t+1)`.
    pub iteration: usize,
    /// `max |X(t+1) - X(t)|` over all entries.
    pub step_norm: f64,
    /// `max |X(t+1) - X*|`, when an oracle is supplied.
    pub oracle_error: Option<f64>,
    /// Messages exchanged network-wide up to and including this step.
    pub messages_total: u64,
    /// Gain applied in this step.
    pub alpha_t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// State index `t` of `X(t)`.
    pub iteration: usize,
    pub sensors: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Counters of the last executed step.
    pub counts: StepCounts,
    pub seed: Option<u64>,
    /// Index of the step whose norm first fell below the tolerance.
    pub converged_at: Option<usize>,
    pub final_state: IterationState,
    /// Per-step contraction factor fitted over the tail of the step norms.
    pub decay_rate: Option<f64>,
    /// `ρ(P)` for DILOC, `ρ(J)` for DILOC-REL.
    pub reference_radius: Option<f64>,
}

impl RunTrace {
    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn final_oracle_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.oracle_error)
    }
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Shared driver for deterministic and random-environment runs. `step` maps
/// the current state to the next one and reports the gain it used.
pub(crate) fn drive<E>(
    initial: IterationState,
    stop: StopRule,
    opts: &TraceOptions<'_>,
    mut step: impl FnMut(&IterationState) -> Result<(IterationState, f64), E>,
) -> Result<RunTrace, E> {
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let mut state = initial;
    let mut current = state.sensors();
    let mut messages_total = 0u64;
    let mut converged_at = None;
    for k in 0..stop.max_iters {
        let (next, alpha_t) = step(&state)?;
        let next_sensors = next.sensors();
        let step_norm = max_abs_diff(&next_sensors, &current);
        messages_total += next.counts.total_messages() as u64;
        records.push(TraceRecord {
            iteration: k,
            step_norm,
            oracle_error: opts.oracle.map(|x| max_abs_diff(&next_sensors, x)),
            messages_total,
            alpha_t,
        });
        if let Some(stride) = opts.snapshot_stride {
            if stride > 0 && (k + 1) % stride == 0 {
                snapshots.push(Snapshot { iteration: k + 1, sensors: next_sensors.clone() });
            }
        }
        state = next;
        current = next_sensors;
        if step_norm < stop.step_tol {
            converged_at = Some(k);
            break;
        }
    }
    if opts.snapshot_stride.is_some_and(|s| s > 0)
        && snapshots.last().map(|s| s.iteration) != Some(state.t)
        && state.t > 0
    {
        snapshots.push(Snapshot { iteration: state.t, sensors: current });
    }
    Ok(RunTrace {
        records,
        snapshots,
        counts: state.counts.clone(),
        seed: opts.seed,
        converged_at,
        final_state: state,
        decay_rate: None,
        reference_radius: None,
    })
}

/// Geometric decay factor of a norm sequence, by least squares of `ln v`
/// against the index over the second half of the positive entries.
pub fn estimate_decay_rate(norms: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        norms.iter().enumerate().filter(|(_, v)| v.is_finite() && **v > 0.0).map(|(i, v)| (i as f64, v.ln())).collect();
    let tail = &pts[pts.len() / 2..];
    if tail.len() < 4 {
        return None;
    }
    let n = tail.len() as f64;
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| (sxy / sxx).exp())
}

/// Iterates until the step norm drops below `stop.step_tol` or the cap is
/// reached. Non-convergence is reported through `converged_at = None`.
pub fn run_to_convergence(
    initial: IterationState,
    sys: &SystemMatrices,
    anchors: &AnchorBlock,
    mode: Mode,
    stop: StopRule,
    opts: &TraceOptions<'_>,
) -> Result<RunTrace, EngineError> {
    if !(stop.step_tol > 0.0) {
        return Err(EngineError::InvalidStop(format!("step tolerance must be positive, got {}", stop.step_tol)));
    }
    let alpha = match mode {
        Mode::Diloc => 1.0,
        Mode::DilocRel(a) if a > 0.0 && a <= 1.0 => a,
        Mode::DilocRel(a) => return Err(EngineError::InvalidAlpha(a)),
    };
    initial.check(sys, anchors)?;
    if let Some(x) = opts.oracle {
        if x.shape() != (sys.num_sensors(), sys.dim()) {
            return Err(EngineError::DimensionMismatch("oracle shape differs from the sensor block".into()));
        }
    }
    let mut trace = drive(initial, stop, opts, |s| match mode {
        Mode::Diloc => diloc_step(s, sys, anchors).map(|n| (n, 1.0)),
        Mode::DilocRel(a) => diloc_rel_step(s, sys, anchors, a).map(|n| (n, a)),
    })?;
    let norms: Vec<f64> = trace.records.iter().map(|r| r.step_norm).collect();
    trace.decay_rate = estimate_decay_rate(&norms);
    let rho_p = spectral_radius(sys.p(), SpectralOptions { seed: opts.seed.unwrap_or(0), ..Default::default() })?;
    // ρ(J) = 1 - α + α ρ(P) because the Perron root of P is real and dominant.
    trace.reference_radius = Some(1.0 - alpha + alpha * rho_p);
    Ok(trace)
}
