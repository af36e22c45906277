//! The seven-node planar example network: anchors 1-3, sensors 4-7, with
//! triangulation sets Θ4 = {1,5,7}, Θ5 = {4,6,7}, Θ6 = {2,5,7},
//! Θ7 = {3,4,6}. Sensor 5 has no anchor in its set and every other sensor
//! has exactly one, so no sensor can localize in a single step.

use crate::deployment::SensorField;

pub const SEVEN_NODE_ANCHORS: [[f64; 2]; 3] = [[0.0, 0.0], [10.0, 0.0], [5.0, 9.0]];
pub const SEVEN_NODE_SENSORS: [[f64; 2]; 4] = [[2.37, 1.94], [3.93, 2.35], [8.44, 1.42], [5.96, 5.31]];

pub fn seven_node_field() -> SensorField {
    SensorField::new(
        SEVEN_NODE_ANCHORS.iter().map(|p| p.to_vec()).collect(),
        SEVEN_NODE_SENSORS.iter().map(|p| p.to_vec()).collect(),
    )
    .expect("example field satisfies the deployment assumptions")
}
