//! Poisson deployment bounds in the plane.
//!
//! A sensor is guaranteed a triangulation set within radius `r` when each of
//! the four equal-area quadrant sectors of its disk holds a node. Under a
//! Poisson deployment of intensity `γ` each sector is non-empty with
//! probability `1 - exp(-γπr²/4)`, independently.

use std::f64::consts::PI;

use super::DeploymentError;

fn check_positive(name: &str, v: f64) -> Result<(), DeploymentError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(DeploymentError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn check_probability(eps: f64) -> Result<(), DeploymentError> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(DeploymentError::InvalidParameter(format!("target probability must lie in (0, 1), got {eps}")))
    }
}

/// `-4 ln(1 - ε^(1/4))`, shared by the radius and density inversions.
fn sector_exponent(eps: f64) -> f64 {
    -4.0 * (-eps.powf(0.25)).ln_1p()
}

/// Lower bound `(1 - exp(-γπr²/4))⁴` on the probability that a sensor can be
/// triangulated within radius `r`.
pub fn triangulation_probability_bound(gamma: f64, r: f64) -> Result<f64, DeploymentError> {
    check_positive("intensity", gamma)?;
    check_positive("radius", r)?;
    let per_sector = -(-gamma * PI * r * r / 4.0).exp_m1();
    Ok(per_sector.powi(4))
}

/// Smallest communication radius `R_l = 2 r_l` for which the bound reaches
/// `eps`: `R_l = 2 sqrt(-4 ln(1 - ε^(1/4)) / (γπ))`.
pub fn min_radius_for_probability(gamma: f64, eps: f64) -> Result<f64, DeploymentError> {
    check_positive("intensity", gamma)?;
    check_probability(eps)?;
    Ok(2.0 * (sector_exponent(eps) / (gamma * PI)).sqrt())
}

/// Smallest intensity for which communication radius `R` reaches `eps`:
/// `γ = -4 ln(1 - ε^(1/4)) / (π (R/2)²)`.
pub fn min_density_for_probability(comm_radius: f64, eps: f64) -> Result<f64, DeploymentError> {
    check_positive("radius", comm_radius)?;
    check_probability(eps)?;
    let half = comm_radius / 2.0;
    Ok(sector_exponent(eps) / (PI * half * half))
}
