//! Distance-only computational geometry.
//!
//! Everything here works from squared inter-node distances: simplex volumes
//! come from Cayley-Menger determinants, barycentric coordinates are ratios of
//! those volumes, and the convex-hull inclusion test compares the volume of a
//! simplex with the sum of the volumes obtained by swapping each vertex for
//! the query node.
//!
//! Internally all volumes for one query are computed on distances normalized
//! by the largest squared distance among the participating nodes, so the
//! absolute tolerance [`VOLUME_TOL`] is meaningful regardless of the units the
//! caller works in.

use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Absolute tolerance on the squared volume of a simplex whose longest edge
/// has been normalized to 1. Squared volumes at or below it count as zero.
pub const VOLUME_TOL: f64 = 1e-12;

/// Relative tolerance used when comparing the sum of sub-simplex volumes with
/// the volume of the enclosing simplex.
pub const HULL_REL_TOL: f64 = 1e-9;

/// Tolerance on the sum of barycentric weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Identifier of a node in the network. Anchors are `1..=m+1`, sensors
/// follow from `m+2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("distance table is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },
    #[error("{ids} ids supplied for a {n}x{n} distance table")]
    IdCountMismatch { ids: usize, n: usize },
    #[error("duplicate node id {0}")]
    DuplicateId(NodeId),
    #[error("asymmetric distance table at ({row}, {col})")]
    Asymmetric { row: usize, col: usize },
    #[error("negative squared distance at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize },
    #[error("nonzero diagonal entry at ({row}, {col})")]
    NonzeroDiagonal { row: usize, col: usize },
    #[error("non-finite squared distance at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("node {0} is not part of the distance table")]
    UnknownNode(NodeId),
    #[error("expected {expected} nodes, got {got}")]
    WrongNodeCount { expected: usize, got: usize },
    #[error("distances are not realizable in dimension {m} (squared volume {sq_volume:e})")]
    NotRealizable { m: usize, sq_volume: f64 },
    #[error("degenerate simplex (normalized squared volume {sq_volume:e})")]
    DegenerateSimplex { sq_volume: f64 },
    #[error("node {0} lies outside the convex hull of its candidate simplex")]
    OutsideHull(NodeId),
}

/// Symmetric table of squared Euclidean distances over a set of nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    ids: Vec<NodeId>,
    sq: Vec<f64>,
}

impl DistanceMatrix {
    /// Validates a raw table of squared distances. Nothing is symmetrized or
    /// clamped: any violation is reported with the offending index pair.
    pub fn new(ids: Vec<NodeId>, raw: &[Vec<f64>]) -> Result<Self, GeometryError> {
        let n = raw.len();
        for (row, r) in raw.iter().enumerate() {
            if r.len() != n {
                return Err(GeometryError::NotSquare { row, len: r.len(), expected: n });
            }
        }
        if ids.len() != n {
            return Err(GeometryError::IdCountMismatch { ids: ids.len(), n });
        }
        let mut seen = ids.clone();
        seen.sort();
        if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
            return Err(GeometryError::DuplicateId(w[0]));
        }
        for row in 0..n {
            for col in 0..n {
                let v = raw[row][col];
                if !v.is_finite() {
                    return Err(GeometryError::NonFinite { row, col });
                }
                if row == col && v != 0.0 {
                    return Err(GeometryError::NonzeroDiagonal { row, col });
                }
                if v < 0.0 {
                    return Err(GeometryError::NegativeEntry { row, col });
                }
                if v != raw[col][row] {
                    return Err(GeometryError::Asymmetric { row, col });
                }
            }
        }
        let sq = raw.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self { ids, sq })
    }

    /// Builds the table from coordinates. Used by the deployment layer to
    /// emulate distance measurements and by tests as ground truth.
    pub fn from_points<P: AsRef<[f64]>>(ids: Vec<NodeId>, points: &[P]) -> Self {
        assert_eq!(ids.len(), points.len(), "one id per point");
        let n = points.len();
        let mut sq = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let d = squared_distance(points[i].as_ref(), points[j].as_ref());
                sq[i * n + j] = d;
                sq[j * n + i] = d;
            }
        }
        Self { ids, sq }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    pub fn index_of(&self, id: NodeId) -> Option<usize> {
        self.ids.iter().position(|&x| x == id)
    }

    /// Squared distance by row/column index.
    #[inline]
    pub fn sq_at(&self, i: usize, j: usize) -> f64 {
        self.sq[i * self.ids.len() + j]
    }

    /// Squared distance by node id.
    pub fn sq_dist(&self, a: NodeId, b: NodeId) -> Result<f64, GeometryError> {
        let i = self.index_of(a).ok_or(GeometryError::UnknownNode(a))?;
        let j = self.index_of(b).ok_or(GeometryError::UnknownNode(b))?;
        Ok(self.sq_at(i, j))
    }

    /// Sub-table over `ids`, in the order given.
    pub fn restrict(&self, ids: &[NodeId]) -> Result<Self, GeometryError> {
        let idx = self.indices(ids)?;
        let n = idx.len();
        let mut sq = vec![0.0; n * n];
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                sq[a * n + b] = self.sq_at(i, j);
            }
        }
        Ok(Self { ids: ids.to_vec(), sq })
    }

    /// Copy with every squared distance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self { ids: self.ids.clone(), sq: self.sq.iter().map(|v| v * factor).collect() }
    }

    /// Rows as nested vectors, mainly for serialization.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.sq.chunks(self.ids.len().max(1)).map(<[f64]>::to_vec).collect()
    }

    fn indices(&self, ids: &[NodeId]) -> Result<Vec<usize>, GeometryError> {
        ids.iter().map(|&id| self.index_of(id).ok_or(GeometryError::UnknownNode(id))).collect()
    }

    fn max_sq_among(&self, idx: &[usize]) -> f64 {
        let mut s = 0.0f64;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                s = s.max(self.sq_at(i, j));
            }
        }
        s
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Coefficient `c(m) = (-1)^(m+1) 2^m (m!)^2` linking the Cayley-Menger
/// determinant of `m+1` points to their squared m-volume: `det = c(m) A^2`.
/// The sequence runs -1, 2, -16, 288, -9216, 460800, ...
pub fn cayley_menger_coefficient(m: usize) -> f64 {
    let fact: f64 = (1..=m).map(|k| k as f64).product();
    let sign = if m % 2 == 1 { 1.0 } else { -1.0 };
    sign * 2f64.powi(m as i32) * fact * fact
}

/// Determinant of the bordered matrix
/// `[[0, 1ᵀ], [1, D]]` built from the squared distances of all nodes in `d`.
pub fn cayley_menger_determinant(d: &DistanceMatrix) -> f64 {
    let idx: Vec<usize> = (0..d.len()).collect();
    bordered_determinant(d, &idx, 1.0)
}

fn bordered_determinant(d: &DistanceMatrix, idx: &[usize], scale: f64) -> f64 {
    let n = idx.len() + 1;
    let mut a = vec![0.0; n * n];
    for c in 1..n {
        a[c] = 1.0;
        a[c * n] = 1.0;
    }
    for (r, &i) in idx.iter().enumerate() {
        for (c, &j) in idx.iter().enumerate() {
            a[(r + 1) * n + c + 1] = d.sq_at(i, j) / scale;
        }
    }
    determinant_in_place(&mut a, n)
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` buffer.
pub(crate) fn determinant_in_place(a: &mut [f64], n: usize) -> f64 {
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&x, &y| a[x * n + col].abs().total_cmp(&a[y * n + col].abs())).unwrap_or(col);
        let p = a[pivot * n + col];
        if p == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap(pivot * n + k, col * n + k);
            }
            det = -det;
        }
        det *= p;
        for r in (col + 1)..n {
            let f = a[r * n + col] / p;
            if f != 0.0 {
                for k in col..n {
                    a[r * n + k] -= f * a[col * n + k];
                }
            }
        }
    }
    det
}

/// Squared volumes of simplices drawn from one distance table, normalized by
/// a common length scale.
struct VolumeKernel<'a> {
    d: &'a DistanceMatrix,
    m: usize,
    scale: f64,
}

impl<'a> VolumeKernel<'a> {
    fn new(d: &'a DistanceMatrix, m: usize, participants: &[usize]) -> Self {
        let s = d.max_sq_among(participants);
        Self { d, m, scale: if s > 0.0 { s } else { 1.0 } }
    }

    /// Normalized squared volume, with values within tolerance of zero
    /// snapped to exactly zero.
    fn sq_volume(&self, idx: &[usize]) -> Result<f64, GeometryError> {
        debug_assert_eq!(idx.len(), self.m + 1);
        let v2 = bordered_determinant(self.d, idx, self.scale) / cayley_menger_coefficient(self.m);
        if v2 < -VOLUME_TOL {
            return Err(GeometryError::NotRealizable { m: self.m, sq_volume: v2 });
        }
        Ok(if v2 <= VOLUME_TOL { 0.0 } else { v2 })
    }

    /// Converts a normalized volume back to the caller's units.
    fn denormalize(&self, v: f64) -> f64 {
        v * self.scale.powf(self.m as f64 / 2.0)
    }
}

/// Generalized volume (length, area, volume, ...) of the simplex spanned by
/// the `m+1` nodes of `d`.
pub fn generalized_volume(d: &DistanceMatrix, m: usize) -> Result<f64, GeometryError> {
    if d.len() != m + 1 {
        return Err(GeometryError::WrongNodeCount { expected: m + 1, got: d.len() });
    }
    let idx: Vec<usize> = (0..d.len()).collect();
    let k = VolumeKernel::new(d, m, &idx);
    Ok(k.denormalize(k.sq_volume(&idx)?.sqrt()))
}

/// A simplex of `dim + 1` nodes together with its volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Simplex {
    pub dim: usize,
    pub vertex_ids: Vec<NodeId>,
    pub volume: f64,
}

impl Simplex {
    pub fn from_distances(d: &DistanceMatrix, m: usize) -> Result<Self, GeometryError> {
        let volume = generalized_volume(d, m)?;
        Ok(Self { dim: m, vertex_ids: d.ids().to_vec(), volume })
    }

    pub fn is_degenerate(&self) -> bool {
        self.volume == 0.0
    }
}

/// Barycentric coordinates of `sensor_id` with respect to `neighbor_ids`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarycentricWeights {
    pub sensor_id: NodeId,
    pub neighbor_ids: Vec<NodeId>,
    pub weights: Vec<f64>,
}

impl BarycentricWeights {
    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
        self.neighbor_ids.iter().copied().zip(self.weights.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HullInclusion {
    Inside,
    Boundary,
    Outside,
}

/// Outcome of the volume comparison, in normalized units.
#[derive(Debug, Clone)]
pub(crate) struct HullTest {
    pub verdict: HullInclusion,
    /// Volume of the sub-simplex with vertex `k` replaced by the query node.
    pub sub_volumes: Vec<f64>,
}

/// Index-level hull test used by [`convex_hull_inclusion`],
/// [`barycentric_coordinates`] and the triangulation search.
pub(crate) fn hull_test(d: &DistanceMatrix, l: usize, simplex: &[usize], m: usize) -> Result<HullTest, GeometryError> {
    if simplex.len() != m + 1 {
        return Err(GeometryError::WrongNodeCount { expected: m + 1, got: simplex.len() });
    }
    let mut participants = simplex.to_vec();
    participants.push(l);
    let kernel = VolumeKernel::new(d, m, &participants);
    let whole = kernel.sq_volume(simplex)?;
    if whole == 0.0 {
        return Err(GeometryError::DegenerateSimplex { sq_volume: whole });
    }
    let whole = whole.sqrt();

    let mut sub = simplex.to_vec();
    let mut sub_volumes = Vec::with_capacity(m + 1);
    for k in 0..simplex.len() {
        sub[k] = l;
        sub_volumes.push(kernel.sq_volume(&sub)?.sqrt());
        sub[k] = simplex[k];
    }
    let total: f64 = sub_volumes.iter().sum();
    let verdict = if total > whole * (1.0 + HULL_REL_TOL) {
        HullInclusion::Outside
    } else if sub_volumes.contains(&0.0) {
        HullInclusion::Boundary
    } else {
        HullInclusion::Inside
    };
    Ok(HullTest { verdict, sub_volumes })
}

/// Decides whether node `l` lies in the convex hull of the `m+1` nodes in
/// `kappa`, using only the distances in `d`.
pub fn convex_hull_inclusion(
    l: NodeId,
    kappa: &[NodeId],
    d: &DistanceMatrix,
    m: usize,
) -> Result<HullInclusion, GeometryError> {
    let li = d.index_of(l).ok_or(GeometryError::UnknownNode(l))?;
    let ki = d.indices(kappa)?;
    Ok(hull_test(d, li, &ki, m)?.verdict)
}

/// Barycentric coordinates of `l` with respect to `theta`:
/// `a_lk = A({l} ∪ Θ \ {k}) / A(Θ)`.
///
/// The denominator used is the sum of the sub-simplex volumes, which equals
/// `A(Θ)` to within [`HULL_REL_TOL`] whenever `l` is in the hull and makes
/// the weights sum to one to rounding precision.
pub fn barycentric_coordinates(
    l: NodeId,
    theta: &[NodeId],
    d: &DistanceMatrix,
    m: usize,
) -> Result<BarycentricWeights, GeometryError> {
    let li = d.index_of(l).ok_or(GeometryError::UnknownNode(l))?;
    let ti = d.indices(theta)?;
    let test = hull_test(d, li, &ti, m)?;
    weights_from_test(l, theta, &test)
}

pub(crate) fn weights_from_test(
    l: NodeId,
    theta: &[NodeId],
    test: &HullTest,
) -> Result<BarycentricWeights, GeometryError> {
    if test.verdict == HullInclusion::Outside {
        return Err(GeometryError::OutsideHull(l));
    }
    let total: f64 = test.sub_volumes.iter().sum();
    let weights = test.sub_volumes.iter().map(|v| v / total).collect();
    Ok(BarycentricWeights { sensor_id: l, neighbor_ids: theta.to_vec(), weights })
}
