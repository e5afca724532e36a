//! Ground-truth label morphologies: vertical bands, tilted lamellae and
//! Voronoi blob mixtures.

use super::LabelImage;
use crate::error::{Error, Result};
use crate::rng::{derive, seeded_rng};
use rand::Rng;

const MORPHOLOGY_STREAM: u64 = 0x4d4f5250;

#[derive(Debug, Clone, PartialEq)]
pub enum Morphology {
    /// Equal vertical bands, one per phase (the 2-phase case is a split
    /// half-plane).
    HalfPlane,
    /// Tilted stripes cycling through the phases, eutectic-style. `wobble`
    /// bends the lamellae sinusoidally (0 = straight).
    Lamellae { stripe_width: f64, angle_deg: f64, wobble: f64 },
    /// Voronoi tessellation around `sites_per_phase` random sites per phase.
    Blobs { sites_per_phase: usize },
}

impl Morphology {
    pub fn name(&self) -> &'static str {
        match self {
            Morphology::HalfPlane => "half-plane",
            Morphology::Lamellae { .. } => "lamellae",
            Morphology::Blobs { .. } => "blobs",
        }
    }
}

/// Deterministically synthesize an N×N ground-truth image with labels 1..=L.
/// Every phase is guaranteed at least 1% of the pixels; parameter choices
/// that starve a phase are configuration errors.
pub fn synth_label_image(
    n: usize,
    num_phases: u8,
    morphology: &Morphology,
    seed: u64,
) -> Result<LabelImage> {
    if n < 8 {
        return Err(Error::config(format!("label image side {n} is below the minimum of 8")));
    }
    if num_phases < 2 {
        return Err(Error::config("need at least two phases"));
    }
    if num_phases as usize >= n {
        return Err(Error::config(format!(
            "{num_phases} phases cannot tile a {n}x{n} image"
        )));
    }

    let mut rng = seeded_rng(derive(seed, MORPHOLOGY_STREAM));
    let l = num_phases as usize;
    let labels = match morphology {
        Morphology::HalfPlane => {
            let mut labels = vec![0u8; n * n];
            for y in 0..n {
                for x in 0..n {
                    let band = (x * l / n).min(l - 1);
                    labels[y * n + x] = band as u8 + 1;
                }
            }
            labels
        }
        Morphology::Lamellae { stripe_width, angle_deg, wobble } => {
            if *stripe_width < 2.0 {
                return Err(Error::config("lamellae need stripe_width >= 2"));
            }
            let theta = angle_deg.to_radians();
            let (dir_x, dir_y) = (theta.cos(), theta.sin());
            let bend_period = 4.0 * stripe_width;
            let phase_shift = rng.random_range(0.0..(stripe_width * l as f64));
            let mut labels = vec![0u8; n * n];
            for y in 0..n {
                for x in 0..n {
                    let along = x as f64 * dir_x + y as f64 * dir_y + phase_shift;
                    let across = -(x as f64) * dir_y + y as f64 * dir_x;
                    let bent = along
                        + wobble * (std::f64::consts::TAU * across / bend_period).sin();
                    let stripe = (bent / stripe_width).floor().rem_euclid(l as f64) as usize;
                    labels[y * n + x] = stripe as u8 + 1;
                }
            }
            labels
        }
        Morphology::Blobs { sites_per_phase } => {
            if *sites_per_phase == 0 {
                return Err(Error::config("blobs need at least one site per phase"));
            }
            let mut sites: Vec<(f64, f64, u8)> = Vec::with_capacity(l * sites_per_phase);
            for phase in 1..=num_phases {
                for _ in 0..*sites_per_phase {
                    let sx = rng.random_range(0.0..n as f64);
                    let sy = rng.random_range(0.0..n as f64);
                    sites.push((sx, sy, phase));
                }
            }
            let mut labels = vec![0u8; n * n];
            for y in 0..n {
                for x in 0..n {
                    let mut best = 0usize;
                    let mut best_d = f64::INFINITY;
                    for (i, (sx, sy, _)) in sites.iter().enumerate() {
                        let d = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
                        if d < best_d {
                            best_d = d;
                            best = i;
                        }
                    }
                    labels[y * n + x] = sites[best].2;
                }
            }
            labels
        }
    };

    let image = LabelImage::new(n, num_phases, labels)?;
    let min_share = n * n / 100;
    let hist = image.histogram();
    for (phase, &count) in hist.iter().enumerate().take(l + 1).skip(1) {
        if count < min_share.max(1) {
            return Err(Error::config(format!(
                "{} morphology leaves phase {phase} with {count} of {} pixels (<1%)",
                morphology.name(),
                n * n
            )));
        }
    }
    Ok(image)
}
