use crate::error::{Error, Result};

/// One-dimensional Earth Mover's Distance between two non-negative histograms
/// over the same bins, with unit spacing between neighbouring bins.
///
/// Both inputs are scaled to unit mass first, so only their shapes matter.
/// In one dimension the optimal transport cost is the L1 distance between the
/// cumulative distributions.
pub fn earth_movers_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Incompatible(format!(
            "histograms of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Config(
            "histogram entries must be finite and non-negative".into(),
        ));
    }
    let mass_a: f64 = a.iter().sum();
    let mass_b: f64 = b.iter().sum();
    if mass_a <= 0.0 || mass_b <= 0.0 {
        return Err(Error::ZeroMass);
    }

    let mut cdf_diff = 0.0f64;
    let mut total = 0.0f64;
    // The last cumulative difference is zero by construction.
    for (x, y) in a.iter().zip(b).take(a.len().saturating_sub(1)) {
        cdf_diff += x / mass_a - y / mass_b;
        total += cdf_diff.abs();
    }
    Ok(total)
}
