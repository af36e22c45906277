//! Sensor fields, the triangulation set-up protocol and Poisson deployment
//! bounds.

mod bounds;
mod field;
mod file;
mod triangulate;

use thiserror::Error;

use crate::geometry::{GeometryError, NodeId};

pub use bounds::{min_density_for_probability, min_radius_for_probability, triangulation_probability_bound};
pub use field::{generate_poisson_field, generate_uniform_field, SensorField};
pub use file::{load_field, read_field, write_field};
pub use triangulate::{
    sector_sufficiency_check, triangulate_all, triangulate_sensor, triangulate_within, TriangulationParams,
    TriangulationSet, DEFAULT_GROWTH,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeploymentError {
    #[error("anchor simplex is degenerate")]
    DegenerateAnchors,
    #[error("sensor {0} is not strictly inside the anchor simplex")]
    SensorOutsideAnchors(NodeId),
    #[error("node {id} has {got} coordinates, expected {expected}")]
    DimensionMismatch { id: NodeId, expected: usize, got: usize },
    #[error("node {0} is not a sensor")]
    NotASensor(NodeId),
    #[error("sector test is defined for m = 2 or 3, not {0}")]
    UnsupportedDimension(usize),
    #[error("sensor {sensor} found no triangulation set up to radius {radius}")]
    Diverged { sensor: NodeId, radius: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("field file: {0}")]
    FieldFile(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
