//! The simulated N×N×p object: every pixel holds a noisy spectrum drawn
//! from its phase's library entry, except injected ill pixels which hold
//! flat Poisson noise.

use std::io::Write;
use std::path::Path;

use super::{ill_draw, noisy_draw, LabelImage, NoiseModel, PhaseLibrary, Spectrum};
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f64_vec, read_u32, write_f64_slice, write_u32};
use crate::rng::{derive, pixel_stream, seeded_rng};
use rand::Rng;
use serde::{Deserialize, Serialize};

const ILL_PICK_STREAM: u64 = 0x4f424a49;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ObjectMeta {
    pub n: usize,
    pub bins: usize,
    pub num_phases: u8,
    pub seed: u64,
    pub noise_fraction: f64,
    pub noise_model: String,
    pub ill_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct SimulatedObject {
    truth: LabelImage,
    spectra: Vec<Spectrum>,
    meta: ObjectMeta,
}

impl SimulatedObject {
    pub fn n(&self) -> usize {
        self.truth.n()
    }

    pub fn bins(&self) -> usize {
        self.meta.bins
    }

    pub fn truth(&self) -> &LabelImage {
        &self.truth
    }

    pub fn meta(&self) -> &ObjectMeta {
        &self.meta
    }

    pub fn spectrum_at(&self, x: usize, y: usize) -> &Spectrum {
        &self.spectra[y * self.truth.n() + x]
    }

    /// Write `truth.pgm` + `truth.json`, `spectra.bin` and `meta.json`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.truth.save_pgm(&dir.join("truth.pgm"))?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join("spectra.bin"))?);
        w.write_all(b"SPCF").map_err(Error::Io)?;
        write_u32(&mut w, 1)?;
        write_u32(&mut w, self.truth.n() as u32)?;
        write_u32(&mut w, self.meta.bins as u32)?;
        for s in &self.spectra {
            write_f64_slice(&mut w, s.counts())?;
        }
        let json = serde_json::to_string_pretty(&self.meta)
            .map_err(|e| Error::runtime(format!("meta encode: {e}")))?;
        std::fs::write(dir.join("meta.json"), json)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let meta_json = std::fs::read_to_string(dir.join("meta.json"))?;
        let meta: ObjectMeta = serde_json::from_str(&meta_json)
            .map_err(|e| Error::input(format!("bad object meta: {e}")))?;
        let truth = LabelImage::load_pgm(&dir.join("truth.pgm"))?;
        if truth.n() != meta.n || truth.num_phases() != meta.num_phases {
            return Err(Error::input("object truth image disagrees with meta.json"));
        }
        let mut r = std::io::BufReader::new(std::fs::File::open(dir.join("spectra.bin"))?);
        expect_magic(&mut r, b"SPCF", "object spectra")?;
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::input(format!("unsupported spectra file version {version}")));
        }
        let n = read_u32(&mut r)? as usize;
        let bins = read_u32(&mut r)? as usize;
        if n != meta.n || bins != meta.bins {
            return Err(Error::input("spectra file header disagrees with meta.json"));
        }
        let mut spectra = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            spectra.push(Spectrum::new(read_f64_vec(&mut r, bins)?)?);
        }
        Ok(SimulatedObject { truth, spectra, meta })
    }
}

/// Assemble the measurable object: relabel an exact `floor(noise_fraction ·
/// N²)` random pixel subset to 0 with ill spectra, and give every other
/// pixel a Poisson-noised copy of a uniformly chosen library spectrum of its
/// phase. Per-pixel RNG streams make the result order-independent and
/// reproducible.
pub fn build_simulated_object(
    mut truth: LabelImage,
    library: &PhaseLibrary,
    noise_fraction: f64,
    noise_model: &NoiseModel,
    ill_lambda: f64,
    seed: u64,
) -> Result<SimulatedObject> {
    if truth.num_phases() > library.num_phases() {
        return Err(Error::config(format!(
            "truth uses {} phases but the library holds {}",
            truth.num_phases(),
            library.num_phases()
        )));
    }
    if !(0.0..1.0).contains(&noise_fraction) {
        return Err(Error::config("noise fraction must be in [0, 1)"));
    }
    if ill_lambda <= 0.0 {
        return Err(Error::config("ill lambda must be positive"));
    }
    noise_model.validate()?;

    let n = truth.n();
    let ill_count = (noise_fraction * (n * n) as f64).floor() as usize;
    let mut indices: Vec<u32> = (0..(n * n) as u32).collect();
    let mut pick_rng = seeded_rng(derive(seed, ILL_PICK_STREAM));
    for i in 0..ill_count {
        let j = pick_rng.random_range(i..indices.len());
        indices.swap(i, j);
    }
    for &idx in &indices[..ill_count] {
        truth.set(idx as usize % n, idx as usize / n, 0);
    }

    let mut spectra = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let mut rng = seeded_rng(pixel_stream(seed, x as u32, y as u32));
            let label = truth.at(x, y);
            let spectrum = if label == 0 {
                ill_draw(library.bins(), ill_lambda, &mut rng)
            } else {
                let refs = library.phase(label);
                let pick = rng.random_range(0..refs.len());
                noisy_draw(&refs[pick], noise_model, &mut rng)
            };
            spectra.push(spectrum);
        }
    }

    let meta = ObjectMeta {
        n,
        bins: library.bins(),
        num_phases: truth.num_phases(),
        seed,
        noise_fraction,
        noise_model: noise_model.name().to_string(),
        ill_lambda,
    };
    Ok(SimulatedObject { truth, spectra, meta })
}
