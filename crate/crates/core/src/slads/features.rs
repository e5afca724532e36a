//! Per-pixel descriptors fed to the linear ERD regressor. The vector is
//! fixed-width and versioned so trained coefficient files can reject
//! incompatible extractors.

use super::recon::{nearest_measured, weighted_mode, MeasurementSet, Reconstruction};

pub const FEATURE_COUNT: usize = 6;
pub const FEATURE_VERSION: u32 = 1;
/// Chebyshev radius of the local measured-density window.
pub const DENSITY_RADIUS: usize = 4;

/// Feature vector for an unmeasured pixel:
/// 0. inverse Euclidean distance to the nearest measurement
/// 1. measured fraction of the (2r+1)^2 window around the pixel
/// 2. fraction of the K nearest measurements disagreeing with the pixel's
///    reconstructed label
/// 3. Shannon entropy (nats) of the K nearest measurements' labels
/// 4. fraction of in-bounds 4-neighbors whose reconstructed label differs
/// 5. constant 1 (intercept)
pub fn extract_features(
    mset: &MeasurementSet,
    recon: &Reconstruction,
    x: usize,
    y: usize,
    k: usize,
) -> [f64; FEATURE_COUNT] {
    let n = mset.n();
    let neighbors = nearest_measured(mset, x, y, k);
    debug_assert!(!neighbors.is_empty());

    let nearest_d = neighbors[0].d2.sqrt();
    let inv_nearest = 1.0 / nearest_d.max(1.0);

    let r = DENSITY_RADIUS;
    let x0 = x.saturating_sub(r);
    let x1 = (x + r).min(n - 1);
    let y0 = y.saturating_sub(r);
    let y1 = (y + r).min(n - 1);
    let mut measured_in_window = 0usize;
    for wy in y0..=y1 {
        for wx in x0..=x1 {
            if mset.is_measured(wx, wy) {
                measured_in_window += 1;
            }
        }
    }
    let window_px = (2 * r + 1) * (2 * r + 1);
    let density = measured_in_window as f64 / window_px as f64;

    let here = recon.label_at(x, y);
    let disagree = neighbors.iter().filter(|nb| nb.label != here).count() as f64
        / neighbors.len() as f64;

    let mut counts = [0usize; 256];
    for nb in &neighbors {
        counts[nb.label as usize] += 1;
    }
    let total = neighbors.len() as f64;
    let mut entropy = 0.0;
    for &c in counts.iter() {
        if c > 0 {
            let q = c as f64 / total;
            entropy -= q * q.ln();
        }
    }

    let mut differing = 0usize;
    let mut in_bounds = 0usize;
    let mut check = |nx: i64, ny: i64| {
        if nx >= 0 && ny >= 0 && (nx as usize) < n && (ny as usize) < n {
            in_bounds += 1;
            if recon.label_at(nx as usize, ny as usize) != here {
                differing += 1;
            }
        }
    };
    check(x as i64 - 1, y as i64);
    check(x as i64 + 1, y as i64);
    check(x as i64, y as i64 - 1);
    check(x as i64, y as i64 + 1);
    let edge = differing as f64 / in_bounds as f64;

    [inv_nearest, density, disagree, entropy, edge, 1.0]
}

/// Reconstructed label an unmeasured pixel would take under the current
/// measurement set (sharing the neighbor query with feature extraction).
pub fn interpolated_label(mset: &MeasurementSet, x: usize, y: usize, k: usize) -> u8 {
    weighted_mode(&nearest_measured(mset, x, y, k))
}
