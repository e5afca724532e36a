//! Dynamic sampling: a linear model maps per-pixel features to an expected
//! reduction in distortion (ERD), and the sampler repeatedly measures the
//! pixel with the highest estimate. Measuring means classifying that pixel's
//! spectrum with the two-tier detector/classifier stack, so labels entering
//! the reconstruction carry real classification noise.

pub mod features;
pub mod recon;
pub mod train;

use std::io::{Read, Write};
use std::path::Path;

use crate::classifier::{classify_spectrum_detailed, CnnModel};
use crate::detector::NnrModel;
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::phantom::{LabelImage, SimulatedObject};
use crate::rng::{derive, halton_grid_points, seeded_rng};

pub use features::{extract_features, FEATURE_COUNT, FEATURE_VERSION};
pub use recon::{reconstruct, MeasurementSet, Neighbor, Reconstruction, DEFAULT_K_NEIGHBORS};
pub use train::{fit_theta, generate_pairs, CorpusParams, TrainingCorpus, TrainingPair, DEFAULT_RIDGE};

const SEED_STREAM: u64 = 0x534c_4453; // initial measurement locations
const BASELINE_STREAM: u64 = 0x524e_4442; // random-baseline mask

/// Number of differing pixels between two equally sized label images.
pub fn distortion(a: &LabelImage, b: &LabelImage) -> Result<u64> {
    if a.n() != b.n() {
        return Err(Error::input(format!(
            "distortion needs equal sizes, got {} vs {}",
            a.n(),
            b.n()
        )));
    }
    Ok(label_distortion(a.labels(), b.labels()))
}

pub(crate) fn label_distortion(a: &[u8], b: &[u8]) -> u64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).filter(|(x, y)| x != y).count() as u64
}

/// Linear ERD regressor: a coefficient per feature, plus provenance needed
/// to refuse mismatched extractors and leaking train images into tests.
#[derive(Debug, Clone, PartialEq)]
pub struct ErdModel {
    theta: Vec<f64>,
    feature_version: u32,
    train_image_seeds: Vec<u64>,
}

impl ErdModel {
    pub fn new(theta: Vec<f64>, train_image_seeds: Vec<u64>) -> Result<Self> {
        if theta.len() != FEATURE_COUNT {
            return Err(Error::config(format!(
                "ERD model needs {} coefficients, got {}",
                FEATURE_COUNT,
                theta.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::config("ERD coefficients must be finite"));
        }
        Ok(ErdModel { theta, feature_version: FEATURE_VERSION, train_image_seeds })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn train_image_seeds(&self) -> &[u64] {
        &self.train_image_seeds
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"ERDM").map_err(Error::Io)?;
        write_u32(&mut w, 1)?;
        write_u32(&mut w, self.feature_version)?;
        write_u32(&mut w, self.theta.len() as u32)?;
        for &t in &self.theta {
            write_f64(&mut w, t)?;
        }
        write_u32(&mut w, self.train_image_seeds.len() as u32)?;
        for &s in &self.train_image_seeds {
            write_u64(&mut w, s)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, b"ERDM", "ERD model")?;
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::input(format!("unsupported ERD model version {version}")));
        }
        let feature_version = read_u32(r)?;
        if feature_version != FEATURE_VERSION {
            return Err(Error::input(format!(
                "ERD model was trained with feature set v{feature_version}, this build expects v{FEATURE_VERSION}"
            )));
        }
        let t = read_u32(r)? as usize;
        let mut theta = Vec::with_capacity(t);
        for _ in 0..t {
            theta.push(read_f64(r)?);
        }
        let n_seeds = read_u32(r)? as usize;
        let mut train_image_seeds = Vec::with_capacity(n_seeds);
        for _ in 0..n_seeds {
            train_image_seeds.push(read_u64(r)?);
        }
        ErdModel::new(theta, train_image_seeds)
    }
}

/// Estimated reduction in distortion for one feature vector.
pub fn estimate_erd(model: &ErdModel, v: &[f64]) -> Result<f64> {
    if v.len() != model.theta.len() {
        return Err(Error::input(format!(
            "feature vector has {} entries, model expects {}",
            v.len(),
            model.theta.len()
        )));
    }
    Ok(model.theta.iter().zip(v).map(|(t, f)| t * f).sum())
}

/// Highest-ERD unmeasured pixel, scanning row-major so ties go to the
/// earliest (y, x). `Ok(None)` means every pixel is measured.
pub fn select_next(
    model: &ErdModel,
    mset: &MeasurementSet,
    recon: &Reconstruction,
    k: usize,
) -> Result<Option<(usize, usize)>> {
    let n = mset.n();
    if recon.n() != n {
        return Err(Error::input("measurement set and reconstruction sizes differ"));
    }
    let mut best: Option<((usize, usize), f64)> = None;
    for y in 0..n {
        for x in 0..n {
            if mset.is_measured(x, y) {
                continue;
            }
            let erd = estimate_erd(model, &extract_features(mset, recon, x, y, k))?;
            match best {
                Some((_, b)) if erd <= b => {}
                _ => best = Some(((x, y), erd)),
            }
        }
    }
    Ok(best.map(|(loc, _)| loc))
}

#[derive(Debug, Clone, Copy)]
pub struct SamplingConfig {
    /// Fraction of pixels measured up front at low-discrepancy locations.
    pub initial_fraction: f64,
    /// Total measured fraction at which sampling stops.
    pub stop_fraction: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            initial_fraction: 0.01,
            stop_fraction: 0.15,
            k_neighbors: DEFAULT_K_NEIGHBORS,
            seed: 0,
        }
    }
}

impl SamplingConfig {
    fn validate(&self) -> Result<()> {
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= 1.0) {
            return Err(Error::config("initial_fraction must be in (0, 1]"));
        }
        if !(self.stop_fraction >= self.initial_fraction && self.stop_fraction <= 1.0) {
            return Err(Error::config("stop_fraction must be in [initial_fraction, 1]"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::config("k_neighbors must be >= 1"));
        }
        Ok(())
    }
}

/// One acquired measurement: its 1-based index, location, two-tier label,
/// detector variance, and the total distortion after incorporating it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub x: usize,
    pub y: usize,
    pub label: u8,
    pub sigma2: f64,
    pub td: f64,
}

#[derive(Debug)]
pub struct SladsRun {
    pub rows: Vec<TraceRow>,
    pub measurements: MeasurementSet,
    pub recon: Reconstruction,
    pub final_td: f64,
}

pub fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::runtime(format!("trace: {e}")))?;
    w.write_record(["k", "x", "y", "label", "sigma2", "td"])
        .map_err(|e| Error::runtime(format!("trace: {e}")))?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            r.x.to_string(),
            r.y.to_string(),
            r.label.to_string(),
            format!("{:.6e}", r.sigma2),
            format!("{:.6}", r.td),
        ])
        .map_err(|e| Error::runtime(format!("trace: {e}")))?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

/// Incremental sampler state. The reconstruction, each unmeasured pixel's
/// k-th neighbor distance, and the ERD field are kept exactly up to date:
/// a new measurement re-queries only pixels it could have entered the
/// neighbor set of (those with `d² < kth_d2`), then refreshes ERD for pixels
/// whose features could have changed (re-queried ones, the density window,
/// and 4-neighborhoods of relabeled pixels).
struct Engine<'a> {
    n: usize,
    k: usize,
    model: &'a ErdModel,
    truth: &'a [u8],
    mset: MeasurementSet,
    labels: Vec<u8>,
    kth_d2: Vec<f64>,
    erd: Vec<f64>,
    distortion: u64,
}

impl<'a> Engine<'a> {
    fn new(
        n: usize,
        k: usize,
        model: &'a ErdModel,
        truth: &'a [u8],
        mset: MeasurementSet,
    ) -> Result<Self> {
        if mset.is_empty() {
            return Err(Error::input("sampler needs at least one seed measurement"));
        }
        let mut eng = Engine {
            n,
            k,
            model,
            truth,
            mset,
            labels: vec![0; n * n],
            kth_d2: vec![f64::INFINITY; n * n],
            erd: vec![f64::NEG_INFINITY; n * n],
            distortion: 0,
        };
        eng.rebuild()?;
        Ok(eng)
    }

    fn rebuild(&mut self) -> Result<()> {
        let n = self.n;
        let state = recon::build_state(&self.mset, self.k);
        self.labels = state.labels;
        self.kth_d2 = state.kth_d2;
        self.distortion = label_distortion(&self.labels, self.truth);
        let recon = self.snapshot();
        for y in 0..n {
            for x in 0..n {
                let idx = y * n + x;
                self.erd[idx] = if self.mset.is_measured(x, y) {
                    f64::NEG_INFINITY
                } else {
                    estimate_erd(self.model, &extract_features(&self.mset, &recon, x, y, self.k))?
                };
            }
        }
        Ok(())
    }

    fn snapshot(&self) -> Reconstruction {
        let measured = (0..self.n * self.n)
            .map(|i| self.mset.is_measured(i % self.n, i / self.n))
            .collect();
        Reconstruction::from_parts(self.n, self.labels.clone(), measured)
    }

    fn td(&self) -> f64 {
        self.distortion as f64 / (self.n * self.n) as f64
    }

    fn relabel(&mut self, idx: usize, new: u8) {
        let old = self.labels[idx];
        if old == new {
            return;
        }
        let t = self.truth[idx];
        self.distortion = self.distortion + u64::from(new != t) - u64::from(old != t);
        self.labels[idx] = new;
    }

    fn add_measurement(&mut self, x: usize, y: usize, label: u8) -> Result<()> {
        let n = self.n;
        self.mset.push(x, y, label)?;
        let here = y * n + x;
        let mut relabeled: Vec<usize> = Vec::new();
        if self.labels[here] != label {
            relabeled.push(here);
        }
        self.relabel(here, label);
        self.kth_d2[here] = 0.0;
        self.erd[here] = f64::NEG_INFINITY;

        // pixels whose k-nearest set may now include (x, y)
        let mut requeried: Vec<usize> = Vec::new();
        for py in 0..n {
            for px in 0..n {
                let idx = py * n + px;
                if self.mset.is_measured(px, py) {
                    continue;
                }
                let dx = px as f64 - x as f64;
                let dy = py as f64 - y as f64;
                // <= : a tie at the k-th distance can still swap the neighbor
                // set under the canonical scan order
                if dx * dx + dy * dy <= self.kth_d2[idx] {
                    let nbs = recon::nearest_measured(&self.mset, px, py, self.k);
                    self.kth_d2[idx] = if nbs.len() == self.k {
                        nbs[self.k - 1].d2
                    } else {
                        f64::INFINITY
                    };
                    let new = recon::weighted_mode(&nbs);
                    if new != self.labels[idx] {
                        relabeled.push(idx);
                    }
                    self.relabel(idx, new);
                    requeried.push(idx);
                }
            }
        }

        let mut dirty = vec![false; n * n];
        for &idx in &requeried {
            dirty[idx] = true;
        }
        let r = features::DENSITY_RADIUS;
        for py in y.saturating_sub(r)..=(y + r).min(n - 1) {
            for px in x.saturating_sub(r)..=(x + r).min(n - 1) {
                dirty[py * n + px] = true;
            }
        }
        for &idx in &relabeled {
            let (px, py) = (idx % n, idx / n);
            dirty[idx] = true;
            if px > 0 {
                dirty[idx - 1] = true;
            }
            if px + 1 < n {
                dirty[idx + 1] = true;
            }
            if py > 0 {
                dirty[idx - n] = true;
            }
            if py + 1 < n {
                dirty[idx + n] = true;
            }
        }

        let recon = self.snapshot();
        for idx in dirty.iter().enumerate().filter_map(|(i, &d)| d.then_some(i)) {
            let (px, py) = (idx % n, idx / n);
            if self.mset.is_measured(px, py) {
                self.erd[idx] = f64::NEG_INFINITY;
            } else {
                self.erd[idx] = estimate_erd(
                    self.model,
                    &extract_features(&self.mset, &recon, px, py, self.k),
                )?;
            }
        }
        Ok(())
    }

    fn best_pixel(&self) -> Option<(usize, usize)> {
        let mut best: Option<(usize, f64)> = None;
        for idx in 0..self.n * self.n {
            if self.mset.is_measured(idx % self.n, idx / self.n) {
                continue;
            }
            match best {
                Some((_, b)) if self.erd[idx] <= b => {}
                _ => best = Some((idx, self.erd[idx])),
            }
        }
        best.map(|(idx, _)| (idx % self.n, idx / self.n))
    }
}

pub(crate) fn fraction_to_count(fraction: f64, n2: usize) -> usize {
    ((fraction * n2 as f64).round() as usize).clamp(1, n2)
}

/// Greedy ERD-driven acquisition over a simulated object. Seeds with
/// low-discrepancy measurements, then repeatedly measures the
/// highest-ERD pixel until `stop_fraction` coverage. Seed rows report the
/// distortion of the post-seed reconstruction; loop rows report it after
/// each individual measurement.
pub fn run_slads(
    object: &SimulatedObject,
    detector: &NnrModel,
    classifier: &CnnModel,
    model: &ErdModel,
    cfg: &SamplingConfig,
) -> Result<SladsRun> {
    cfg.validate()?;
    let n = object.n();
    let n2 = n * n;
    let seed_count = fraction_to_count(cfg.initial_fraction, n2);
    let stop_count = fraction_to_count(cfg.stop_fraction, n2).max(seed_count);

    let mut mset = MeasurementSet::new(n);
    let mut rows = Vec::with_capacity(stop_count);
    let offset = derive(cfg.seed, SEED_STREAM);
    for (x, y) in halton_grid_points(n, seed_count, offset) {
        let (label, sigma2) = classify_spectrum_detailed(detector, classifier, object.spectrum_at(x, y))?;
        mset.push(x, y, label)?;
        rows.push(TraceRow { k: mset.len(), x, y, label, sigma2, td: f64::NAN });
    }

    let mut engine = Engine::new(n, cfg.k_neighbors, model, object.truth().labels(), mset)?;
    let seed_td = engine.td();
    for row in &mut rows {
        row.td = seed_td;
    }

    while engine.mset.len() < stop_count {
        let Some((x, y)) = engine.best_pixel() else { break };
        let (label, sigma2) = classify_spectrum_detailed(detector, classifier, object.spectrum_at(x, y))?;
        engine.add_measurement(x, y, label)?;
        rows.push(TraceRow { k: engine.mset.len(), x, y, label, sigma2, td: engine.td() });
    }

    let recon = engine.snapshot();
    let final_td = engine.td();
    Ok(SladsRun { rows, measurements: engine.mset, recon, final_td })
}

/// Uniform-random acquisition at the same coverage, classification stack and
/// reconstructor; the control arm for judging the greedy sampler.
pub fn run_random_baseline(
    object: &SimulatedObject,
    detector: &NnrModel,
    classifier: &CnnModel,
    fraction: f64,
    k_neighbors: usize,
    seed: u64,
) -> Result<SladsRun> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config("baseline fraction must be in (0, 1]"));
    }
    let n = object.n();
    let n2 = n * n;
    let count = fraction_to_count(fraction, n2);
    let mut rng = seeded_rng(derive(seed, BASELINE_STREAM));
    let mut indices: Vec<u32> = (0..n2 as u32).collect();
    let mut mset = MeasurementSet::new(n);
    let mut rows = Vec::with_capacity(count);
    for i in 0..count {
        let j = rand::Rng::random_range(&mut rng, i..n2);
        indices.swap(i, j);
        let (x, y) = (indices[i] as usize % n, indices[i] as usize / n);
        let (label, sigma2) = classify_spectrum_detailed(detector, classifier, object.spectrum_at(x, y))?;
        mset.push(x, y, label)?;
        rows.push(TraceRow { k: mset.len(), x, y, label, sigma2, td: f64::NAN });
    }
    let recon = reconstruct(&mset, k_neighbors)?;
    let final_td =
        label_distortion(recon.labels(), object.truth().labels()) as f64 / (n2 as f64);
    for row in &mut rows {
        row.td = final_td;
    }
    Ok(SladsRun { rows, measurements: mset, recon, final_td })
}
