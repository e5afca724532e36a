//! Synthetic specimens: ground-truth label images, per-phase spectrum
//! libraries, and the simulated N×N×p object the sampling loop measures
//! from.

mod morphology;
mod object;
mod spectra;

pub use morphology::{synth_label_image, Morphology};
pub use object::{build_simulated_object, ObjectMeta, SimulatedObject};
pub use spectra::{
    add_poisson_noise, gen_ill_spectrum, ill_draw, noisy_draw, synth_phase_spectra, LibraryParams,
    NoiseModel, Peak, DEFAULT_ILL_LAMBDA, DEFAULT_SPECTRUM_BINS,
};

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{
    expect_magic, read_f64, read_f64_vec, read_pgm, read_u32, write_f64, write_f64_slice,
    write_pgm, write_u32,
};
use serde::{Deserialize, Serialize};

/// One energy spectrum: nonnegative photon counts per energy bin.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    counts: Vec<f64>,
}

impl Spectrum {
    pub fn new(counts: Vec<f64>) -> Result<Self> {
        if counts.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::input("spectrum bins must be finite and nonnegative"));
        }
        Ok(Spectrum { counts })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Square grid of labels in `{0, 1, ..., L}`; 0 marks ill-spectrum pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelImage {
    n: usize,
    num_phases: u8,
    labels: Vec<u8>,
}

impl LabelImage {
    pub fn new(n: usize, num_phases: u8, labels: Vec<u8>) -> Result<Self> {
        if num_phases == 0 {
            return Err(Error::config("label image needs at least one phase"));
        }
        if labels.len() != n * n {
            return Err(Error::input(format!(
                "label image size {}x{} does not match {} labels",
                n,
                n,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&v| v > num_phases) {
            return Err(Error::input(format!(
                "label {bad} exceeds phase count {num_phases}"
            )));
        }
        Ok(LabelImage { n, num_phases, labels })
    }

    pub fn filled(n: usize, num_phases: u8, label: u8) -> Result<Self> {
        LabelImage::new(n, num_phases, vec![label; n * n])
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_phases(&self) -> u8 {
        self.num_phases
    }

    pub fn at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.n + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        debug_assert!(label <= self.num_phases);
        self.labels[y * self.n + x] = label;
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Pixel counts per label value 0..=L.
    pub fn histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_phases as usize + 1];
        for &v in &self.labels {
            hist[v as usize] += 1;
        }
        hist
    }

    fn gray_of(&self, label: u8) -> u8 {
        ((label as usize * 255) / self.num_phases as usize) as u8
    }

    /// Write `<stem>.pgm` (labels as spread gray levels) and a `<stem>.json`
    /// sidecar mapping gray levels back to labels.
    pub fn save_pgm(&self, pgm_path: &Path) -> Result<()> {
        let pixels: Vec<u8> = self.labels.iter().map(|&v| self.gray_of(v)).collect();
        write_pgm(pgm_path, self.n, self.n, &pixels)?;
        let mut levels = BTreeMap::new();
        for label in 0..=self.num_phases {
            levels.insert(self.gray_of(label).to_string(), label);
        }
        let sidecar = LabelSidecar { n: self.n, num_phases: self.num_phases, levels };
        let json = serde_json::to_string_pretty(&sidecar)
            .map_err(|e| Error::runtime(format!("sidecar encode: {e}")))?;
        std::fs::write(pgm_path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load_pgm(pgm_path: &Path) -> Result<Self> {
        let sidecar_path = pgm_path.with_extension("json");
        let json = std::fs::read_to_string(&sidecar_path)?;
        let sidecar: LabelSidecar = serde_json::from_str(&json)
            .map_err(|e| Error::input(format!("bad label sidecar {}: {e}", sidecar_path.display())))?;
        let (w, h, pixels) = read_pgm(pgm_path)?;
        if w != sidecar.n || h != sidecar.n {
            return Err(Error::input("label image dims disagree with sidecar"));
        }
        let mut labels = Vec::with_capacity(pixels.len());
        for gray in pixels {
            let label = sidecar.levels.get(&gray.to_string()).copied().ok_or_else(|| {
                Error::input(format!("gray level {gray} missing from label sidecar"))
            })?;
            labels.push(label);
        }
        LabelImage::new(sidecar.n, sidecar.num_phases, labels)
    }
}

#[derive(Serialize, Deserialize)]
struct LabelSidecar {
    n: usize,
    num_phases: u8,
    levels: BTreeMap<String, u8>,
}

/// Clean reference spectra for each phase plus the peak sets that generated
/// them (kept for diagnostics and oracle tests).
#[derive(Debug, Clone)]
pub struct PhaseLibrary {
    num_phases: u8,
    bins: usize,
    /// `spectra[phase][m]`, phase indices 0..L-1 correspond to labels 1..L.
    spectra: Vec<Vec<Spectrum>>,
    peaks: Vec<Vec<Peak>>,
}

impl PhaseLibrary {
    pub fn new(spectra: Vec<Vec<Spectrum>>, peaks: Vec<Vec<Peak>>, bins: usize) -> Result<Self> {
        if spectra.len() < 2 {
            return Err(Error::config("phase library needs at least two phases"));
        }
        if spectra.len() != peaks.len() {
            return Err(Error::input("per-phase peak metadata missing"));
        }
        if spectra.iter().any(|per| per.is_empty()) {
            return Err(Error::input("every phase needs at least one spectrum"));
        }
        if spectra.iter().flatten().any(|s| s.len() != bins) {
            return Err(Error::input("library spectra disagree on bin count"));
        }
        Ok(PhaseLibrary { num_phases: spectra.len() as u8, bins, spectra, peaks })
    }

    pub fn num_phases(&self) -> u8 {
        self.num_phases
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn per_phase(&self) -> usize {
        self.spectra[0].len()
    }

    /// Reference spectra of phase `label` (1-based label, as in LabelImage).
    pub fn phase(&self, label: u8) -> &[Spectrum] {
        &self.spectra[label as usize - 1]
    }

    pub fn peaks(&self, label: u8) -> &[Peak] {
        &self.peaks[label as usize - 1]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl std::io::Write) -> Result<()> {
        w.write_all(b"PLIB")?;
        write_u32(w, 1)?;
        write_u32(w, self.num_phases as u32)?;
        write_u32(w, self.bins as u32)?;
        for (per_phase, peaks) in self.spectra.iter().zip(&self.peaks) {
            write_u32(w, peaks.len() as u32)?;
            for peak in peaks {
                write_f64(w, peak.center)?;
                write_f64(w, peak.width)?;
                write_f64(w, peak.amplitude)?;
            }
            write_u32(w, per_phase.len() as u32)?;
            for s in per_phase {
                write_f64_slice(w, s.counts())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl std::io::Read) -> Result<Self> {
        expect_magic(r, b"PLIB", "phase library")?;
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::input(format!("unsupported phase library version {version}")));
        }
        let num_phases = read_u32(r)? as usize;
        let bins = read_u32(r)? as usize;
        let mut spectra = Vec::with_capacity(num_phases);
        let mut peaks = Vec::with_capacity(num_phases);
        for _ in 0..num_phases {
            let n_peaks = read_u32(r)? as usize;
            let mut phase_peaks = Vec::with_capacity(n_peaks);
            for _ in 0..n_peaks {
                phase_peaks.push(Peak {
                    center: read_f64(r)?,
                    width: read_f64(r)?,
                    amplitude: read_f64(r)?,
                });
            }
            let count = read_u32(r)? as usize;
            let mut per_phase = Vec::with_capacity(count);
            for _ in 0..count {
                per_phase.push(Spectrum::new(read_f64_vec(r, bins)?)?);
            }
            spectra.push(per_phase);
            peaks.push(phase_peaks);
        }
        PhaseLibrary::new(spectra, peaks, bins)
    }
}
