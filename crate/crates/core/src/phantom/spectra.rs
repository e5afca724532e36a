//! Spectrum synthesis: bremsstrahlung-like backgrounds with phase-specific
//! Gaussian peak sets, Poisson measurement noise, and flat ill-spectra.

use super::{PhaseLibrary, Spectrum};
use crate::error::{Error, Result};
use crate::rng::{derive, seeded_rng};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

pub const DEFAULT_SPECTRUM_BINS: usize = 2040;
/// Mean count of the i.i.d. Poisson ill-spectrum bins.
pub const DEFAULT_ILL_LAMBDA: f64 = 20.0;

const LIBRARY_STREAM: u64 = 0x4c494252;
const NOISE_STREAM: u64 = 0x4e4f4953;
const ILL_STREAM: u64 = 0x494c4c53;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Center bin (fractional).
    pub center: f64,
    /// Gaussian width in bins.
    pub width: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LibraryParams {
    pub peaks_per_phase: usize,
    pub amplitude_range: (f64, f64),
    /// Peak width as a fraction of the bin count (clamped to ≥ 1.5 bins).
    pub width_fraction: (f64, f64),
    pub background_amplitude: f64,
    /// Relative amplitude variation between the M acquisitions of one phase.
    pub acquisition_jitter: f64,
}

impl Default for LibraryParams {
    fn default() -> Self {
        LibraryParams {
            peaks_per_phase: 4,
            amplitude_range: (40.0, 120.0),
            width_fraction: (0.002, 0.006),
            background_amplitude: 8.0,
            acquisition_jitter: 0.15,
        }
    }
}

/// How Poisson noise maps a clean bin value to a measured one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// `Poisson(clean * lambda_scale) / lambda_scale`: keeps the clean
    /// expectation, `lambda_scale` sets the effective dose.
    Scaled { lambda_scale: f64 },
    /// `Poisson(clean) + Poisson(lambda)`: an additive noise floor.
    Offset { lambda: f64 },
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::Scaled { lambda_scale: 2.0 }
    }
}

impl NoiseModel {
    pub fn name(&self) -> &'static str {
        match self {
            NoiseModel::Scaled { .. } => "scaled",
            NoiseModel::Offset { .. } => "offset",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            NoiseModel::Scaled { lambda_scale } if *lambda_scale > 0.0 => Ok(()),
            NoiseModel::Offset { lambda } if *lambda > 0.0 => Ok(()),
            _ => Err(Error::config("noise model parameters must be positive")),
        }
    }
}

fn poisson_draw(mean: f64, rng: &mut impl Rng) -> f64 {
    if mean <= 0.0 {
        return 0.0;
    }
    Poisson::new(mean).expect("positive finite mean").sample(rng)
}

/// Smooth continuum falling from low to high energy.
fn background_shape(u: f64) -> f64 {
    (1.0 - u) * (-2.5 * u).exp()
}

/// Generate clean reference spectra for `num_phases` phases, `per_phase`
/// acquisitions each. Peak positions are interleaved across phases on a slot
/// grid so no two phases share a peak.
pub fn synth_phase_spectra(
    num_phases: u8,
    per_phase: usize,
    bins: usize,
    params: &LibraryParams,
    seed: u64,
) -> Result<PhaseLibrary> {
    if num_phases < 2 {
        return Err(Error::config("need at least two phases"));
    }
    if per_phase < 2 {
        return Err(Error::config("need at least two spectra per phase"));
    }
    if bins < 32 {
        return Err(Error::config(format!("{bins} bins is below the minimum of 32")));
    }
    if params.peaks_per_phase == 0 {
        return Err(Error::config("need at least one peak per phase"));
    }
    if !(0.0..1.0).contains(&params.acquisition_jitter) {
        return Err(Error::config("acquisition jitter must be in [0, 1)"));
    }
    let (amp_lo, amp_hi) = params.amplitude_range;
    if !(0.0 < amp_lo && amp_lo <= amp_hi) {
        return Err(Error::config("peak amplitude range must be positive and ordered"));
    }
    let (w_lo, w_hi) = params.width_fraction;
    if !(0.0 < w_lo && w_lo <= w_hi) {
        return Err(Error::config("peak width range must be positive and ordered"));
    }

    let slots = num_phases as usize * params.peaks_per_phase;
    let band_start = bins as f64 * 0.05;
    let band_width = bins as f64 * 0.90;
    let slot_width = band_width / slots as f64;
    if slot_width < 3.0 {
        return Err(Error::config(format!(
            "{slots} peaks do not fit {bins} bins without overlapping phases"
        )));
    }

    let mut rng = seeded_rng(derive(seed, LIBRARY_STREAM));
    let mut peaks: Vec<Vec<Peak>> = vec![Vec::new(); num_phases as usize];
    for slot in 0..slots {
        let phase = slot % num_phases as usize;
        let offset = rng.random_range(0.25..0.75);
        let center = band_start + (slot as f64 + offset) * slot_width;
        let width = (rng.random_range(w_lo..=w_hi) * bins as f64)
            .max(1.5)
            .min(slot_width / 2.0);
        let amplitude = rng.random_range(amp_lo..=amp_hi);
        peaks[phase].push(Peak { center, width, amplitude });
    }

    let mut spectra = Vec::with_capacity(num_phases as usize);
    for phase_peaks in &peaks {
        let mut acquisitions = Vec::with_capacity(per_phase);
        for _ in 0..per_phase {
            let jitter = |rng: &mut rand_chacha::ChaCha8Rng| {
                1.0 + params.acquisition_jitter * rng.random_range(-1.0..1.0)
            };
            let bg_scale = params.background_amplitude * jitter(&mut rng);
            let amp_scales: Vec<f64> =
                phase_peaks.iter().map(|_| jitter(&mut rng)).collect();
            let mut counts = Vec::with_capacity(bins);
            for i in 0..bins {
                let u = i as f64 / (bins - 1) as f64;
                let mut v = bg_scale * background_shape(u);
                for (peak, scale) in phase_peaks.iter().zip(&amp_scales) {
                    let d = (i as f64 - peak.center) / peak.width;
                    v += peak.amplitude * scale * (-0.5 * d * d).exp();
                }
                counts.push(v);
            }
            acquisitions.push(Spectrum::new(counts)?);
        }
        spectra.push(acquisitions);
    }
    PhaseLibrary::new(spectra, peaks, bins)
}

/// Draw a noisy copy of `clean` using an existing RNG stream.
pub fn noisy_draw(clean: &Spectrum, model: &NoiseModel, rng: &mut impl Rng) -> Spectrum {
    let counts = match model {
        NoiseModel::Scaled { lambda_scale } => clean
            .counts()
            .iter()
            .map(|&c| poisson_draw(c * lambda_scale, rng) / lambda_scale)
            .collect(),
        NoiseModel::Offset { lambda } => clean
            .counts()
            .iter()
            .map(|&c| poisson_draw(c, rng) + poisson_draw(*lambda, rng))
            .collect(),
    };
    Spectrum { counts }
}

/// Seeded convenience wrapper around [`noisy_draw`].
pub fn add_poisson_noise(clean: &Spectrum, model: &NoiseModel, seed: u64) -> Spectrum {
    let mut rng = seeded_rng(derive(seed, NOISE_STREAM));
    noisy_draw(clean, model, &mut rng)
}

/// Ill spectrum: i.i.d. Poisson(lambda) in every bin, belonging to no phase.
pub fn ill_draw(bins: usize, lambda: f64, rng: &mut impl Rng) -> Spectrum {
    Spectrum { counts: (0..bins).map(|_| poisson_draw(lambda, rng)).collect() }
}

/// Seeded convenience wrapper around [`ill_draw`].
pub fn gen_ill_spectrum(bins: usize, lambda: f64, seed: u64) -> Result<Spectrum> {
    if bins == 0 {
        return Err(Error::config("ill spectrum needs at least one bin"));
    }
    if lambda <= 0.0 {
        return Err(Error::config("ill spectrum lambda must be positive"));
    }
    let mut rng = seeded_rng(derive(seed, ILL_STREAM));
    Ok(ill_draw(bins, lambda, &mut rng))
}
