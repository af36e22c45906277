use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{DeploymentError, SensorField};
use crate::geometry::{
    hull_test, weights_from_test, BarycentricWeights, DistanceMatrix, GeometryError, HullInclusion, NodeId,
};

/// Default multiplicative radius increment between set-up rounds.
pub const DEFAULT_GROWTH: f64 = 1.25;

/// A sensor's triangulation set: `m+1` neighbors whose simplex strictly
/// contains it, with the barycentric weights of the sensor w.r.t. them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriangulationSet {
    pub sensor_id: NodeId,
    /// Search radius `r_l` of the successful round.
    pub radius: f64,
    pub neighbor_ids: Vec<NodeId>,
    pub weights: BarycentricWeights,
    /// Communication radius `2 r_l`, bounding every pairwise distance in
    /// `{l} ∪ Θ_l`.
    pub comm_radius: f64,
    /// Number of radius rounds used, starting at 1.
    pub rounds: usize,
}

/// Radius schedule for the set-up phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangulationParams {
    pub initial_radius: f64,
    pub growth: f64,
}

impl TriangulationParams {
    /// `r0 = γ^(-1/m) / 2` with growth 1.25, where γ is the field's intensity.
    pub fn for_field(field: &SensorField) -> Self {
        let gamma = field.effective_density();
        Self { initial_radius: gamma.powf(-1.0 / field.dim() as f64) / 2.0, growth: DEFAULT_GROWTH }
    }
}

/// One set-up round at fixed radius `r`: candidate `(m+1)`-subsets of the
/// nodes strictly within `r` are tried in order of increasing longest edge
/// (ties broken by ids) and the first one strictly containing `l` wins.
pub fn triangulate_within(field: &SensorField, l: NodeId, r: f64) -> Result<Option<TriangulationSet>, DeploymentError> {
    triangulate_round(field, l, r, None, 1)
}

/// Runs one round. Subsets made only of nodes strictly within `tested_below`
/// were already rejected by an earlier round and are skipped; the verdict of
/// a subset depends on its own distances alone, so the winner is unchanged.
fn triangulate_round(
    field: &SensorField,
    l: NodeId,
    r: f64,
    tested_below: Option<f64>,
    round: usize,
) -> Result<Option<TriangulationSet>, DeploymentError> {
    if !field.is_sensor(l) {
        return Err(DeploymentError::NotASensor(l));
    }
    let m = field.dim();
    let candidates = field.nodes_within(l, r);
    if candidates.len() < m + 1 {
        return Ok(None);
    }
    let mut local_ids = vec![l];
    local_ids.extend(&candidates);
    let d = field.distance_matrix(&local_ids);
    let n = local_ids.len();
    let old: Vec<bool> = match tested_below {
        Some(r_prev) => (0..n).map(|i| d.sq_at(0, i) < r_prev * r_prev).collect(),
        None => vec![false; n],
    };
    let frame = LocalFrame::embed(&d, m);

    // Sweep the edges by length. Every subset is generated from its longest
    // edge, so subsets come out grouped by longest edge in increasing order;
    // equal lengths are merged and ordered by ids before testing.
    let mut edges: Vec<(f64, usize, usize)> = (1..n).tuple_combinations().map(|(a, b)| (d.sq_at(a, b), a, b)).collect();
    edges.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| (x.1, x.2).cmp(&(y.1, y.2))));

    let mut group: Vec<Vec<usize>> = Vec::new();
    let mut i = 0;
    while i < edges.len() {
        let len = edges[i].0;
        let mut j = i;
        group.clear();
        while j < edges.len() && edges[j].0 == len {
            let (_, a, b) = edges[j];
            let pool: Vec<usize> =
                (1..n).filter(|&c| c != a && c != b && d.sq_at(a, c) <= len && d.sq_at(b, c) <= len).collect();
            let mut chosen = Vec::with_capacity(m + 1);
            extend_subsets(&d, &pool, 0, m - 1, len, &mut chosen, &mut |extra| {
                if old[a] && old[b] && extra.iter().all(|&c| old[c]) {
                    return;
                }
                let mut s = vec![a, b];
                s.extend_from_slice(extra);
                if frame.as_ref().is_some_and(|f| f.clearly_outside(&s)) {
                    return;
                }
                s.sort_unstable();
                group.push(s);
            });
            j += 1;
        }
        group.sort_unstable();
        group.dedup();
        for s in &group {
            let test = match hull_test(&d, 0, s, m) {
                Ok(t) => t,
                Err(GeometryError::DegenerateSimplex { .. }) => continue,
                Err(e) => return Err(e.into()),
            };
            if test.verdict != HullInclusion::Inside {
                continue;
            }
            let theta: Vec<NodeId> = s.iter().map(|&k| local_ids[k]).collect();
            let weights = weights_from_test(l, &theta, &test)?;
            return Ok(Some(TriangulationSet {
                sensor_id: l,
                radius: r,
                neighbor_ids: theta,
                weights,
                comm_radius: 2.0 * r,
                rounds: round,
            }));
        }
        i = j;
    }
    Ok(None)
}

/// Coordinates of the round's nodes relative to `l`, recovered from the
/// distances alone by a pivoted Cholesky factorization of the Gram matrix.
/// Used only to skip subsets that plainly miss `l`; every subset that might
/// contain it still goes through the exact volume test.
struct LocalFrame {
    m: usize,
    coords: Vec<f64>,
    origin: Vec<f64>,
    scale: f64,
}

/// Largest dimension the frame filter handles; higher ones skip it.
const FRAME_MAX_DIM: usize = 7;

/// Barycentric slack below which a subset is dismissed without the exact
/// test. Far larger than the embedding error, so no candidate is lost.
const FRAME_SLACK: f64 = 1e-6;

impl LocalFrame {
    fn embed(d: &DistanceMatrix, m: usize) -> Option<Self> {
        if m > FRAME_MAX_DIM {
            return None;
        }
        let n = d.len();
        let gram = |i: usize, j: usize| 0.5 * (d.sq_at(0, i) + d.sq_at(0, j) - d.sq_at(i, j));
        let mut coords = vec![0.0; n * m];
        let mut diag: Vec<f64> = (0..n).map(|i| gram(i, i)).collect();
        let scale = diag.iter().copied().fold(0.0, f64::max);
        if scale <= 0.0 {
            return None;
        }
        for k in 0..m {
            let (piv, &top) = diag.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1))?;
            if top <= 1e-10 * scale {
                // nodes are (nearly) confined to a lower-dimensional set
                return None;
            }
            let root = top.sqrt();
            for i in 0..n {
                let mut g = gram(i, piv);
                for q in 0..k {
                    g -= coords[i * m + q] * coords[piv * m + q];
                }
                let c = g / root;
                coords[i * m + k] = c;
                diag[i] -= c * c;
            }
        }
        Some(Self { m, coords, origin: vec![0.0; m], scale: scale.sqrt() })
    }

    fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.m..(i + 1) * self.m]
    }

    /// True when the origin (the sensor) has a barycentric coordinate below
    /// `-FRAME_SLACK` with respect to the simplex `s`.
    fn clearly_outside(&self, s: &[usize]) -> bool {
        let m = self.m;
        let mut buf: [&[f64]; FRAME_MAX_DIM + 1] = [&[]; FRAME_MAX_DIM + 1];
        for (slot, &i) in buf.iter_mut().zip(s) {
            *slot = self.point(i);
        }
        let pts = &mut buf[..=m];
        let whole = signed_volume(pts);
        if whole.abs() <= 1e-12 * self.scale.powi(m as i32) {
            return false;
        }
        for k in 0..pts.len() {
            let keep = pts[k];
            pts[k] = &self.origin;
            let lambda = signed_volume(pts) / whole;
            pts[k] = keep;
            if lambda < -FRAME_SLACK {
                return true;
            }
        }
        false
    }
}

/// `det(p1 - p0, ..., pm - p0)`, up to the `1/m!` factor.
fn signed_volume(p: &[&[f64]]) -> f64 {
    let m = p.len() - 1;
    let e = |i: usize, j: usize| p[i + 1][j] - p[0][j];
    match m {
        1 => e(0, 0),
        2 => e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0),
        3 => {
            e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1)) - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
                + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0))
        }
        _ => nalgebra::DMatrix::from_fn(m, m, e).determinant(),
    }
}

/// Calls `visit` with every `k`-subset of `pool[from..]` whose members are
/// pairwise within `len` of each other (squared lengths).
fn extend_subsets(
    d: &DistanceMatrix,
    pool: &[usize],
    from: usize,
    k: usize,
    len: f64,
    chosen: &mut Vec<usize>,
    visit: &mut impl FnMut(&[usize]),
) {
    if k == 0 {
        visit(chosen);
        return;
    }
    for p in from..pool.len() {
        let c = pool[p];
        if chosen.iter().all(|&o| d.sq_at(o, c) <= len) {
            chosen.push(c);
            extend_subsets(d, pool, p + 1, k - 1, len, chosen, visit);
            chosen.pop();
        }
    }
}

/// Set-up phase for one sensor: start at radius `r0` and multiply by
/// `growth` until a triangulation set is found. Fails with
/// [`DeploymentError::Diverged`] once the radius covers every node and no
/// set exists, which only happens when the sensor is not inside the anchors.
pub fn triangulate_sensor(
    field: &SensorField,
    l: NodeId,
    r0: f64,
    growth: f64,
) -> Result<TriangulationSet, DeploymentError> {
    if !(r0 > 0.0 && r0.is_finite()) {
        return Err(DeploymentError::InvalidParameter(format!("initial radius must be positive, got {r0}")));
    }
    if !(growth > 1.0 && growth.is_finite()) {
        return Err(DeploymentError::InvalidParameter(format!("growth must exceed 1, got {growth}")));
    }
    if !field.is_sensor(l) {
        return Err(DeploymentError::NotASensor(l));
    }
    let reach = field.max_distance_from(l);
    let mut r = r0;
    let mut tested_below = None;
    let mut round = 1;
    loop {
        if let Some(t) = triangulate_round(field, l, r, tested_below, round)? {
            return Ok(t);
        }
        if r > reach {
            return Err(DeploymentError::Diverged { sensor: l, radius: r });
        }
        tested_below = Some(r);
        r *= growth;
        round += 1;
    }
}

/// Triangulates every sensor of the field, in id order. Sensors are
/// independent, so the work is spread over the rayon pool.
pub fn triangulate_all(
    field: &SensorField,
    params: TriangulationParams,
) -> Result<Vec<TriangulationSet>, DeploymentError> {
    let ids: Vec<NodeId> = field.sensor_ids().collect();
    ids.par_iter().map(|&l| triangulate_sensor(field, l, params.initial_radius, params.growth)).collect()
}

/// Sufficient condition for triangulation: every orthant sector of the radius-`r`
/// ball around `l` holds at least one other node. Sectors are half-open, a
/// coordinate offset of exactly zero counts as positive.
pub fn sector_sufficiency_check(field: &SensorField, l: NodeId, r: f64) -> Result<bool, DeploymentError> {
    let m = field.dim();
    if !(m == 2 || m == 3) {
        return Err(DeploymentError::UnsupportedDimension(m));
    }
    let c = field.position(l);
    let mut hit = vec![false; 1 << m];
    for k in field.nodes_within(l, r) {
        let p = field.position(k);
        let sector = (0..m).filter(|&j| p[j] - c[j] >= 0.0).fold(0usize, |acc, j| acc | (1 << j));
        hit[sector] = true;
    }
    Ok(hit.into_iter().all(|h| h))
}
