//! System matrices of the localization iteration.
//!
//! Stacking anchors first, the iteration matrix is
//!
//! ```text
//! Υ = [ I  0 ]
//!     [ B  P ]
//! ```
//!
//! with `B` (M x (m+1)) holding each sensor's barycentric weights on anchors
//! and `P` (M x M) its weights on other sensors. `Υ` is the transition matrix
//! of an absorbing Markov chain whose absorbing states are the anchors, so
//! `ρ(P) < 1` and the sensor block of `Υᵗ` converges to `(I - P)⁻¹ B`.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::Rng;
use thiserror::Error;

use crate::deployment::{SensorField, TriangulationSet};
use crate::geometry::NodeId;
use crate::rng::{self, Purpose};
use crate::sparse::CsrMatrix;

/// Largest system solved by dense LU; bigger ones use Gauss-Seidel sweeps.
pub const DENSE_SOLVE_LIMIT: usize = 2000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("sensor {0} has no triangulation set")]
    MissingTriangulation(NodeId),
    #[error("triangulation set refers to unknown node {0}")]
    UnknownNode(NodeId),
    #[error("sensor {0} has more than one triangulation set")]
    DuplicateTriangulation(NodeId),
    #[error("system is singular or not absorbing")]
    SingularSystem,
    #[error("power iteration did not converge in {iterations} iterations (estimate {estimate})")]
    NoConvergence { estimate: f64, iterations: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("matrix dump: {0}")]
    Dump(String),
}

/// `B` and `P` blocks, one row per sensor in id order.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemMatrices {
    m: usize,
    sensor_ids: Vec<NodeId>,
    b: CsrMatrix,
    p: CsrMatrix,
}

/// Anchor coordinates `U`, one row per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorBlock {
    pub u: DMatrix<f64>,
}

impl AnchorBlock {
    pub fn from_field(field: &SensorField) -> Self {
        let m = field.dim();
        let flat: Vec<f64> = field.anchor_positions().iter().flatten().copied().collect();
        Self { u: DMatrix::from_row_slice(m + 1, m, &flat) }
    }

    pub fn dim(&self) -> usize {
        self.u.ncols()
    }
}

impl SystemMatrices {
    pub fn new(m: usize, sensor_ids: Vec<NodeId>, b: CsrMatrix, p: CsrMatrix) -> Result<Self, SystemError> {
        let n = sensor_ids.len();
        if b.nrows() != n || b.ncols() != m + 1 || p.nrows() != n || p.ncols() != n {
            return Err(SystemError::DimensionMismatch(format!(
                "B is {}x{}, P is {}x{}, expected {n}x{} and {n}x{n}",
                b.nrows(),
                b.ncols(),
                p.nrows(),
                p.ncols(),
                m + 1
            )));
        }
        Ok(Self { m, sensor_ids, b, p })
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn num_sensors(&self) -> usize {
        self.sensor_ids.len()
    }

    pub fn sensor_ids(&self) -> &[NodeId] {
        &self.sensor_ids
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    pub fn p(&self) -> &CsrMatrix {
        &self.p
    }

    /// Total weight of row `l` of `[B | P]`.
    pub fn row_sum(&self, l: usize) -> f64 {
        self.b.row_sum(l) + self.p.row_sum(l)
    }

    /// Number of stored entries of row `l` of `[B | P]`.
    pub fn row_arity(&self, l: usize) -> usize {
        self.b.row_range(l).len() + self.p.row_range(l).len()
    }

    /// Dense `Υ` with anchors first, for inspection and small oracles.
    pub fn iteration_matrix(&self) -> DMatrix<f64> {
        let a = self.m + 1;
        let n = a + self.num_sensors();
        let mut up = DMatrix::zeros(n, n);
        for q in 0..a {
            up[(q, q)] = 1.0;
        }
        for l in 0..self.num_sensors() {
            for (c, v) in self.b.row(l) {
                up[(a + l, c)] = v;
            }
            for (c, v) in self.p.row(l) {
                up[(a + l, a + c)] = v;
            }
        }
        up
    }

    pub fn write_dump<W: Write>(&self, b: W, p: W) -> std::io::Result<()> {
        self.b.write_coo(b)?;
        self.p.write_coo(p)
    }

    pub fn read_dump<R: BufRead>(m: usize, sensor_ids: Vec<NodeId>, b: R, p: R) -> Result<Self, SystemError> {
        let b = CsrMatrix::read_coo(b).map_err(SystemError::Dump)?;
        let p = CsrMatrix::read_coo(p).map_err(SystemError::Dump)?;
        Self::new(m, sensor_ids, b, p)
    }
}

/// Scatters each sensor's barycentric weights into `B` (anchor neighbors) or
/// `P` (sensor neighbors).
pub fn build_system_matrices(field: &SensorField, tris: &[TriangulationSet]) -> Result<SystemMatrices, SystemError> {
    let m = field.dim();
    let first_sensor = m + 2;
    let mut by_sensor: HashMap<NodeId, &TriangulationSet> = HashMap::with_capacity(tris.len());
    for t in tris {
        if !field.is_sensor(t.sensor_id) {
            return Err(SystemError::UnknownNode(t.sensor_id));
        }
        if by_sensor.insert(t.sensor_id, t).is_some() {
            return Err(SystemError::DuplicateTriangulation(t.sensor_id));
        }
    }
    let sensor_ids: Vec<NodeId> = field.sensor_ids().collect();
    let mut b_rows = Vec::with_capacity(sensor_ids.len());
    let mut p_rows = Vec::with_capacity(sensor_ids.len());
    for &l in &sensor_ids {
        let t = by_sensor.get(&l).ok_or(SystemError::MissingTriangulation(l))?;
        let (mut b_row, mut p_row) = (Vec::new(), Vec::new());
        for (k, a) in t.weights.iter() {
            if field.is_anchor(k) {
                b_row.push((k.0 - 1, a));
            } else if field.is_sensor(k) {
                p_row.push((k.0 - first_sensor, a));
            } else {
                return Err(SystemError::UnknownNode(k));
            }
        }
        b_rows.push(b_row);
        p_rows.push(p_row);
    }
    let n = sensor_ids.len();
    SystemMatrices::new(m, sensor_ids, CsrMatrix::from_rows(m + 1, b_rows), CsrMatrix::from_rows(n, p_rows))
}

/// Settings for [`spectral_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iters: 10_000, seed: 0 }
    }
}

/// Spectral radius of a nonnegative square matrix.
///
/// Power iteration runs on `P + I`: for nonnegative `P` the Perron root `ρ`
/// becomes the strictly dominant eigenvalue `ρ + 1`, which removes the
/// oscillation of periodic chains. If the iterate has not settled within the
/// cap, systems up to [`DENSE_SOLVE_LIMIT`] fall back to a dense Schur
/// eigenvalue computation; larger ones report the best estimate.
pub fn spectral_radius(p: &CsrMatrix, opts: SpectralOptions) -> Result<f64, SystemError> {
    let n = p.nrows();
    if n != p.ncols() {
        return Err(SystemError::DimensionMismatch(format!("{}x{} is not square", n, p.ncols())));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut start = rng::stream(opts.seed, Purpose::SpectralStart, &[n as u64]);
    let mut x: Vec<f64> = (0..n).map(|_| start.random_range(0.5..1.5)).collect();
    let mut y = vec![0.0; n];
    let mut mu = 0.0;
    for _ in 0..opts.max_iters {
        p.mul_vec(&x, &mut y);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += xi;
        }
        mu = y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if mu == 0.0 {
            return Ok(0.0);
        }
        let mut delta = 0.0f64;
        for (xi, yi) in x.iter_mut().zip(&y) {
            let next = yi / mu;
            delta = delta.max((next - *xi).abs());
            *xi = next;
        }
        if delta <= opts.tol {
            return Ok((mu - 1.0).max(0.0));
        }
    }
    if n <= DENSE_SOLVE_LIMIT {
        return Ok(dense_spectral_radius(&p.to_dense()));
    }
    Err(SystemError::NoConvergence { estimate: (mu - 1.0).max(0.0), iterations: opts.max_iters })
}

/// Largest eigenvalue modulus from a dense Schur decomposition. Works for
/// matrices with negative entries too, e.g. perturbed system blocks.
pub fn dense_spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// True when every sensor reaches an anchor with positive probability, i.e.
/// every row of `P` leads through the graph of `P` to a row with weight on
/// `B`.
pub fn absorbing_check(sys: &SystemMatrices) -> bool {
    let n = sys.num_sensors();
    // reverse adjacency: k -> sensors that put weight on k
    let mut parents = vec![Vec::new(); n];
    for l in 0..n {
        for (k, v) in sys.p.row(l) {
            if v != 0.0 {
                parents[k].push(l);
            }
        }
    }
    let mut reached = vec![false; n];
    let mut queue: VecDeque<usize> = (0..n).filter(|&l| sys.b.row(l).any(|(_, v)| v != 0.0)).collect();
    for &l in &queue {
        reached[l] = true;
    }
    while let Some(k) = queue.pop_front() {
        for &l in &parents[k] {
            if !reached[l] {
                reached[l] = true;
                queue.push_back(l);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// Solves `(I - A) X = R` for a square block `A`. Dense LU up to
/// [`DENSE_SOLVE_LIMIT`] rows, Gauss-Seidel above it with a relative residual
/// target of 1e-12.
pub(crate) fn solve_shifted(a: &CsrMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SystemError> {
    let n = a.nrows();
    if n <= DENSE_SOLVE_LIMIT {
        let lhs = DMatrix::identity(n, n) - a.to_dense();
        let x = lhs.lu().solve(rhs).ok_or(SystemError::SingularSystem)?;
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(SystemError::SingularSystem)
        }
    } else {
        gauss_seidel(a, rhs)
    }
}

fn gauss_seidel(a: &CsrMatrix, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, SystemError> {
    const MAX_SWEEPS: usize = 1_000_000;
    let n = a.nrows();
    let scale = rhs.amax().max(1.0);
    let mut x = rhs.clone();
    for _ in 0..MAX_SWEEPS {
        for i in 0..n {
            let diag: f64 = a.get(i, i);
            for j in 0..rhs.ncols() {
                let off: f64 = a.row(i).filter(|&(c, _)| c != i).map(|(c, v)| v * x[(c, j)]).sum();
                x[(i, j)] = (rhs[(i, j)] + off) / (1.0 - diag);
            }
        }
        let residual = &x - a.mul_dense(&x) - rhs;
        let r = residual.amax();
        if !r.is_finite() {
            return Err(SystemError::SingularSystem);
        }
        if r < 1e-12 * scale {
            return Ok(x);
        }
    }
    Err(SystemError::SingularSystem)
}

/// Closed-form sensor positions `X* = (I - P)⁻¹ B U`.
pub fn exact_locations_oracle(sys: &SystemMatrices, anchors: &AnchorBlock) -> Result<DMatrix<f64>, SystemError> {
    if anchors.u.nrows() != sys.m + 1 || anchors.u.ncols() != sys.m {
        return Err(SystemError::DimensionMismatch(format!(
            "anchor block is {}x{}, expected {}x{}",
            anchors.u.nrows(),
            anchors.u.ncols(),
            sys.m + 1,
            sys.m
        )));
    }
    if !absorbing_check(sys) {
        return Err(SystemError::SingularSystem);
    }
    solve_shifted(&sys.p, &sys.b.mul_dense(&anchors.u))
}

/// Truncated Neumann series `Σ_{k=0}^{terms} Pᵏ`; `terms = 0` gives `I`.
pub fn fundamental_matrix_series(p: &CsrMatrix, terms: usize) -> DMatrix<f64> {
    let n = p.nrows();
    let mut power = DMatrix::identity(n, n);
    let mut sum = power.clone();
    for _ in 0..terms {
        power = p.mul_dense(&power);
        sum += &power;
    }
    sum
}
