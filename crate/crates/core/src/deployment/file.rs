//! Field files: CSV with header `id,role,c1,...,cm`, one record per node.
//!
//! ```text
//! id,role,c1,c2
//! 1,anchor,0,0
//! 2,anchor,10,0
//! 3,anchor,5,9
//! 4,sensor,2.37,1.94
//! ```
//!
//! Anchors must carry ids `1..=m+1` and sensors the following ids, with no
//! gaps; records may appear in any order.

use std::io::{Read, Write};
use std::path::Path;

use super::{DeploymentError, SensorField};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Anchor,
    Sensor,
}

fn bad(msg: impl Into<String>) -> DeploymentError {
    DeploymentError::FieldFile(msg.into())
}

pub fn read_field<R: Read>(reader: R) -> Result<SensorField, DeploymentError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "role" {
        return Err(bad("header must be `id,role,c1,...,cm`"));
    }
    let m = headers.len() - 2;
    let mut records: Vec<(usize, Role, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let id: usize = rec[0].parse().map_err(|_| bad(format!("record {}: bad id `{}`", line + 1, &rec[0])))?;
        let role = match &rec[1] {
            "anchor" => Role::Anchor,
            "sensor" => Role::Sensor,
            other => return Err(bad(format!("record {}: unknown role `{other}`", line + 1))),
        };
        let coords = (2..rec.len())
            .map(|i| {
                rec[i].parse::<f64>().map_err(|_| bad(format!("record {}: bad coordinate `{}`", line + 1, &rec[i])))
            })
            .collect::<Result<Vec<_>, _>>()?;
        records.push((id, role, coords));
    }
    records.sort_by_key(|r| r.0);
    for (i, (id, role, _)) in records.iter().enumerate() {
        if *id != i + 1 {
            return Err(bad(format!("ids must be 1..=N without gaps; found {id} at position {}", i + 1)));
        }
        let expected = if i <= m { Role::Anchor } else { Role::Sensor };
        if *role != expected {
            return Err(bad(format!("node {id} must be {expected:?} (anchors are 1..={})", m + 1)));
        }
    }
    if records.len() < m + 1 {
        return Err(bad(format!("need {} anchors, found {}", m + 1, records.len())));
    }
    let mut coords: Vec<Vec<f64>> = records.into_iter().map(|r| r.2).collect();
    let sensors = coords.split_off(m + 1);
    SensorField::new(coords, sensors)
}

pub fn load_field(path: &Path) -> Result<SensorField, DeploymentError> {
    let f = std::fs::File::open(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
    read_field(f)
}

pub fn write_field<W: Write>(field: &SensorField, writer: W) -> Result<(), DeploymentError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "role".to_string()];
    header.extend((1..=field.dim()).map(|j| format!("c{j}")));
    w.write_record(&header).map_err(|e| bad(e.to_string()))?;
    for i in 1..=field.num_nodes() {
        let id = crate::geometry::NodeId(i);
        let role = if field.is_anchor(id) { "anchor" } else { "sensor" };
        let mut rec = vec![i.to_string(), role.to_string()];
        rec.extend(field.position(id).iter().map(|c| c.to_string()));
        w.write_record(&rec).map_err(|e| bad(e.to_string()))?;
    }
    w.flush().map_err(|e| bad(e.to_string()))?;
    Ok(())
}
