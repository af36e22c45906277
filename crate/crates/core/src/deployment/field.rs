use rand::Rng;
use rand_distr::{Distribution, Exp1, Poisson};

use super::DeploymentError;
use crate::geometry::{
    convex_hull_inclusion, generalized_volume, squared_distance, DistanceMatrix, HullInclusion, NodeId,
};
use crate::rng::{self, Purpose};

/// Anchors and sensors of a deployment.
///
/// Node ids follow the usual convention: anchors are `1..=m+1`, sensors are
/// `m+2..=N`. Anchor coordinates are public knowledge. Sensor coordinates are
/// ground truth and only reachable through [`SensorField::true_position`],
/// which exists for oracles, test harnesses and distance emulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorField {
    m: usize,
    coords: Vec<Vec<f64>>,
    density: Option<f64>,
    anchor_volume: f64,
}

impl SensorField {
    /// Explicit field. Checks that the anchor simplex is nondegenerate and
    /// that every sensor lies strictly inside it.
    pub fn new(anchors: Vec<Vec<f64>>, sensors: Vec<Vec<f64>>) -> Result<Self, DeploymentError> {
        let anchor_volume = anchor_volume(&anchors)?;
        let m = anchors.len() - 1;
        let mut coords = anchors;
        for (i, s) in sensors.into_iter().enumerate() {
            let id = NodeId(m + 2 + i);
            if s.len() != m {
                return Err(DeploymentError::DimensionMismatch { id, expected: m, got: s.len() });
            }
            if strict_inclusion(&coords[..=m], &s)? != HullInclusion::Inside {
                return Err(DeploymentError::SensorOutsideAnchors(id));
            }
            coords.push(s);
        }
        Ok(Self { m, coords, density: None, anchor_volume })
    }

    /// Records the deployment intensity the field was drawn with.
    pub fn with_density(mut self, gamma: f64) -> Self {
        self.density = Some(gamma);
        self
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn num_anchors(&self) -> usize {
        self.m + 1
    }

    pub fn num_sensors(&self) -> usize {
        self.coords.len() - self.m - 1
    }

    pub fn num_nodes(&self) -> usize {
        self.coords.len()
    }

    pub fn anchor_ids(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.m + 1).map(NodeId)
    }

    pub fn sensor_ids(&self) -> impl Iterator<Item = NodeId> {
        (self.m + 2..=self.coords.len()).map(NodeId)
    }

    pub fn is_anchor(&self, id: NodeId) -> bool {
        (1..=self.m + 1).contains(&id.0)
    }

    pub fn is_sensor(&self, id: NodeId) -> bool {
        id.0 > self.m + 1 && id.0 <= self.coords.len()
    }

    /// Position of anchor `id`; `None` for sensors.
    pub fn anchor_position(&self, id: NodeId) -> Option<&[f64]> {
        self.is_anchor(id).then(|| self.coords[id.0 - 1].as_slice())
    }

    pub fn anchor_positions(&self) -> &[Vec<f64>] {
        &self.coords[..=self.m]
    }

    /// Ground-truth position of any node. Oracle use only: nothing on the
    /// protocol path may depend on it except distance emulation.
    pub fn true_position(&self, id: NodeId) -> Option<&[f64]> {
        self.coords.get(id.0.wrapping_sub(1)).map(Vec::as_slice)
    }

    pub(crate) fn position(&self, id: NodeId) -> &[f64] {
        &self.coords[id.0 - 1]
    }

    /// Volume of the anchor simplex.
    pub fn anchor_volume(&self) -> f64 {
        self.anchor_volume
    }

    /// Intensity the field was generated with, if any.
    pub fn density(&self) -> Option<f64> {
        self.density
    }

    /// Generation intensity, or sensors per unit volume for explicit fields.
    pub fn effective_density(&self) -> f64 {
        self.density.unwrap_or_else(|| self.num_sensors().max(1) as f64 / self.anchor_volume)
    }

    /// Measured squared distance between two nodes.
    pub fn sq_distance(&self, a: NodeId, b: NodeId) -> f64 {
        squared_distance(self.position(a), self.position(b))
    }

    /// Distance table over `ids`, as the nodes themselves would measure it.
    pub fn distance_matrix(&self, ids: &[NodeId]) -> DistanceMatrix {
        let pts: Vec<&[f64]> = ids.iter().map(|&id| self.position(id)).collect();
        DistanceMatrix::from_points(ids.to_vec(), &pts)
    }

    /// Nodes other than `l` strictly closer than `r`, in id order.
    pub fn nodes_within(&self, l: NodeId, r: f64) -> Vec<NodeId> {
        let c = self.position(l);
        let r2 = r * r;
        (1..=self.coords.len()).map(NodeId).filter(|&k| k != l && squared_distance(c, self.position(k)) < r2).collect()
    }

    /// Largest distance from `l` to any other node.
    pub fn max_distance_from(&self, l: NodeId) -> f64 {
        let c = self.position(l);
        self.coords.iter().map(|p| squared_distance(c, p)).fold(0.0, f64::max).sqrt()
    }

    /// Axis-aligned bounding box of the anchors, as (min, max) per axis.
    pub fn anchor_bounding_box(&self) -> Vec<(f64, f64)> {
        (0..self.m)
            .map(|j| {
                self.anchor_positions()
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p[j]), hi.max(p[j])))
            })
            .collect()
    }
}

fn anchor_volume(anchors: &[Vec<f64>]) -> Result<f64, DeploymentError> {
    if anchors.len() < 2 {
        return Err(DeploymentError::DegenerateAnchors);
    }
    let m = anchors.len() - 1;
    if let Some((i, a)) = anchors.iter().enumerate().find(|(_, a)| a.len() != m) {
        return Err(DeploymentError::DimensionMismatch { id: NodeId(i + 1), expected: m, got: a.len() });
    }
    let ids = (1..=m + 1).map(NodeId).collect();
    let v = generalized_volume(&DistanceMatrix::from_points(ids, anchors), m)?;
    if v <= 0.0 {
        return Err(DeploymentError::DegenerateAnchors);
    }
    Ok(v)
}

fn strict_inclusion(anchors: &[Vec<f64>], p: &[f64]) -> Result<HullInclusion, DeploymentError> {
    let m = anchors.len() - 1;
    let mut pts: Vec<&[f64]> = vec![p];
    pts.extend(anchors.iter().map(Vec::as_slice));
    let ids: Vec<NodeId> = (0..=m + 1).map(NodeId).collect();
    let d = DistanceMatrix::from_points(ids.clone(), &pts);
    Ok(convex_hull_inclusion(NodeId(0), &ids[1..], &d, m)?)
}

/// Uniform point in the simplex spanned by `anchors`, drawn by normalizing
/// i.i.d. exponential spacings into barycentric weights. Draws that land on
/// the numerical boundary are redrawn so every sensor is strictly inside.
fn sample_in_simplex<R: Rng>(anchors: &[Vec<f64>], rng: &mut R) -> Result<Vec<f64>, DeploymentError> {
    let m = anchors.len() - 1;
    loop {
        let e: Vec<f64> = (0..=m).map(|_| Exp1.sample(rng)).collect();
        let total: f64 = e.iter().sum();
        let p: Vec<f64> = (0..m).map(|j| e.iter().zip(anchors).map(|(w, a)| w / total * a[j]).sum()).collect();
        if strict_inclusion(anchors, &p)? == HullInclusion::Inside {
            return Ok(p);
        }
    }
}

/// Poisson deployment of intensity `gamma` over the anchor simplex: the
/// sensor count is Poisson with mean `gamma * A_κ` and positions are i.i.d.
/// uniform given the count.
pub fn generate_poisson_field(
    m: usize,
    gamma: f64,
    anchors: Vec<Vec<f64>>,
    seed: u64,
) -> Result<SensorField, DeploymentError> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(DeploymentError::InvalidParameter(format!("intensity must be positive, got {gamma}")));
    }
    if anchors.len() != m + 1 {
        return Err(DeploymentError::InvalidParameter(format!("{} anchors supplied for dimension {m}", anchors.len())));
    }
    let volume = anchor_volume(&anchors)?;
    let mean = gamma * volume;
    let mut rng = rng::stream(seed, Purpose::Deployment, &[0]);
    // rand_distr rejects a zero mean; that limit has no sensors anyway.
    let count = if mean < 1e-300 {
        0
    } else {
        let poisson =
            Poisson::new(mean).map_err(|e| DeploymentError::InvalidParameter(format!("poisson mean {mean}: {e}")))?;
        poisson.sample(&mut rng) as usize
    };
    let sensors = (0..count).map(|_| sample_in_simplex(&anchors, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    Ok(SensorField { m, coords: [anchors, sensors].concat(), density: Some(gamma), anchor_volume: volume })
}

/// Deployment with a fixed number of sensors, i.e. a Poisson field
/// conditioned on its count.
pub fn generate_uniform_field(anchors: Vec<Vec<f64>>, count: usize, seed: u64) -> Result<SensorField, DeploymentError> {
    let volume = anchor_volume(&anchors)?;
    let m = anchors.len() - 1;
    let mut rng = rng::stream(seed, Purpose::Deployment, &[1]);
    let sensors = (0..count).map(|_| sample_in_simplex(&anchors, &mut rng)).collect::<Result<Vec<_>, _>>()?;
    Ok(SensorField {
        m,
        coords: [anchors, sensors].concat(),
        density: Some(count as f64 / volume),
        anchor_volume: volume,
    })
}
