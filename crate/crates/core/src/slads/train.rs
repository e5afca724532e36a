//! Fitting the ERD regressor. Training pairs come from ground-truth label
//! images: random measurement masks at several coverage levels, and for each
//! candidate pixel the exact reduction in distortion that measuring it (with
//! its true label) would produce. A ridge-regularized least-squares solve
//! maps the feature vectors onto those reductions.

use std::io::{Read, Write};
use std::path::Path;

use super::features::{extract_features, FEATURE_COUNT, FEATURE_VERSION};
use super::recon::{
    build_state, nearest_measured, weighted_mode, MeasurementSet, Reconstruction,
};
use super::{fraction_to_count, ErdModel};
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f64, read_u32, read_u64, write_f64, write_u32, write_u64};
use crate::phantom::LabelImage;
use crate::rng::{derive, seeded_rng};

pub const DEFAULT_RIDGE: f64 = 1e-6;
pub const DEFAULT_COVERAGE_LEVELS: [f64; 5] = [0.05, 0.10, 0.20, 0.40, 0.80];

const MASK_STREAM: u64 = 0x4d41_534b;
const CANDIDATE_STREAM: u64 = 0x4341_4e44;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingPair {
    pub features: [f64; FEATURE_COUNT],
    pub rd: f64,
}

/// Feature/RD pairs plus the provenance needed to reject stale extractors
/// and to keep evaluation phantoms disjoint from training ones.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCorpus {
    pub pairs: Vec<TrainingPair>,
    pub image_seeds: Vec<u64>,
    pub coverage_levels: Vec<f64>,
    pub seed: u64,
    pub feature_version: u32,
}

#[derive(Debug, Clone)]
pub struct CorpusParams {
    pub coverage_levels: Vec<f64>,
    pub pairs_per_level: usize,
    pub k_neighbors: usize,
}

impl Default for CorpusParams {
    fn default() -> Self {
        CorpusParams {
            coverage_levels: DEFAULT_COVERAGE_LEVELS.to_vec(),
            pairs_per_level: 200,
            k_neighbors: super::DEFAULT_K_NEIGHBORS,
        }
    }
}

impl CorpusParams {
    fn validate(&self) -> Result<()> {
        if self.coverage_levels.is_empty() {
            return Err(Error::config("need at least one coverage level"));
        }
        if self.coverage_levels.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::config("coverage levels must lie in (0, 1)"));
        }
        if self.pairs_per_level == 0 {
            return Err(Error::config("pairs_per_level must be >= 1"));
        }
        if self.k_neighbors == 0 {
            return Err(Error::config("k_neighbors must be >= 1"));
        }
        Ok(())
    }
}

/// Exact distortion reduction from additionally measuring `(x, y)` with its
/// true label: only pixels whose k-nearest set can change (distance to the
/// candidate below their current k-th neighbor distance) are re-queried.
fn reduction_in_distortion(
    truth: &LabelImage,
    mset: &MeasurementSet,
    labels: &[u8],
    kth_d2: &[f64],
    x: usize,
    y: usize,
    k: usize,
) -> i64 {
    let n = truth.n();
    let here = y * n + x;
    let mut with_s = mset.clone();
    with_s.push(x, y, truth.at(x, y)).expect("candidate must be unmeasured");

    // the candidate pixel itself: interpolated label -> true label
    let mut delta = i64::from(labels[here] != truth.at(x, y));
    for py in 0..n {
        for px in 0..n {
            let idx = py * n + px;
            if idx == here || mset.is_measured(px, py) {
                continue;
            }
            let dx = px as f64 - x as f64;
            let dy = py as f64 - y as f64;
            if dx * dx + dy * dy <= kth_d2[idx] {
                let new = weighted_mode(&nearest_measured(&with_s, px, py, k));
                let t = truth.at(px, py);
                delta += i64::from(labels[idx] != t) - i64::from(new != t);
            }
        }
    }
    delta
}

/// Sample feature/RD pairs from ground-truth images. Each image gets one
/// random mask per coverage level; RD targets use true labels throughout,
/// so no classifier is involved here.
pub fn generate_pairs(
    images: &[(u64, LabelImage)],
    params: &CorpusParams,
    seed: u64,
) -> Result<TrainingCorpus> {
    params.validate()?;
    if images.is_empty() {
        return Err(Error::input("need at least one training image"));
    }
    let k = params.k_neighbors;
    let mut pairs = Vec::new();
    for (img_idx, (_, truth)) in images.iter().enumerate() {
        let n = truth.n();
        let n2 = n * n;
        for (lvl_idx, &level) in params.coverage_levels.iter().enumerate() {
            let stream = derive(derive(seed, MASK_STREAM), (img_idx * 1000 + lvl_idx) as u64);
            let mut rng = seeded_rng(stream);
            let count = fraction_to_count(level, n2).min(n2 - 1);
            let mut indices: Vec<u32> = (0..n2 as u32).collect();
            let mut mset = MeasurementSet::new(n);
            for i in 0..count {
                let j = rand::Rng::random_range(&mut rng, i..n2);
                indices.swap(i, j);
                let (px, py) = (indices[i] as usize % n, indices[i] as usize / n);
                mset.push(px, py, truth.at(px, py))?;
            }
            let state = build_state(&mset, k);
            let recon = Reconstruction::from_parts(
                n,
                state.labels.clone(),
                (0..n2).map(|i| mset.is_measured(i % n, i / n)).collect(),
            );

            let mut cand_rng =
                seeded_rng(derive(derive(seed, CANDIDATE_STREAM), (img_idx * 1000 + lvl_idx) as u64));
            let unmeasured = n2 - count;
            let wanted = params.pairs_per_level.min(unmeasured);
            // reuse the tail of the shuffle: indices[count..] are unmeasured
            for i in 0..wanted {
                let j = rand::Rng::random_range(&mut cand_rng, (count + i)..n2);
                indices.swap(count + i, j);
                let (px, py) =
                    (indices[count + i] as usize % n, indices[count + i] as usize / n);
                let features = extract_features(&mset, &recon, px, py, k);
                let rd = reduction_in_distortion(
                    truth,
                    &mset,
                    &state.labels,
                    &state.kth_d2,
                    px,
                    py,
                    k,
                ) as f64;
                pairs.push(TrainingPair { features, rd });
            }
        }
    }
    Ok(TrainingCorpus {
        pairs,
        image_seeds: images.iter().map(|(s, _)| *s).collect(),
        coverage_levels: params.coverage_levels.clone(),
        seed,
        feature_version: FEATURE_VERSION,
    })
}

/// Solve the t x t system A x = b by Gaussian elimination with partial
/// pivoting. `scale` calibrates the singularity threshold.
#[allow(clippy::needless_range_loop)] // row elimination reads two rows of `a` at once
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let t = b.len();
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..t {
        let pivot_row = (col..t)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        if a[pivot_row][col].abs() <= 1e-12 * scale {
            return Err(Error::training(
                "feature matrix is singular; increase the ridge penalty",
            ));
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in col + 1..t {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..t {
                a[row][c] -= f * a[col][c];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; t];
    for row in (0..t).rev() {
        let mut acc = b[row];
        for c in row + 1..t {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Ok(x)
}

/// Ridge-regularized least squares over the corpus: theta = argmin
/// sum (theta . v - rd)^2 + ridge ||theta||^2, via the normal equations.
pub fn fit_theta(corpus: &TrainingCorpus, ridge: f64) -> Result<ErdModel> {
    if corpus.pairs.is_empty() {
        return Err(Error::input("training corpus is empty"));
    }
    if corpus.feature_version != FEATURE_VERSION {
        return Err(Error::input(format!(
            "corpus built with feature set v{}, this build expects v{}",
            corpus.feature_version, FEATURE_VERSION
        )));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::config("ridge must be finite and >= 0"));
    }
    let t = FEATURE_COUNT;
    let mut a = vec![vec![0.0f64; t]; t];
    let mut b = vec![0.0f64; t];
    for pair in &corpus.pairs {
        for i in 0..t {
            b[i] += pair.features[i] * pair.rd;
            for (aij, fj) in a[i].iter_mut().zip(&pair.features) {
                *aij += pair.features[i] * fj;
            }
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += ridge;
    }
    let theta = solve_linear(a, b)?;
    ErdModel::new(theta, corpus.image_seeds.clone())
}

impl TrainingCorpus {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"CRPS").map_err(Error::Io)?;
        write_u32(&mut w, 1)?;
        write_u32(&mut w, self.feature_version)?;
        write_u64(&mut w, self.seed)?;
        write_u32(&mut w, self.image_seeds.len() as u32)?;
        for &s in &self.image_seeds {
            write_u64(&mut w, s)?;
        }
        write_u32(&mut w, self.coverage_levels.len() as u32)?;
        for &c in &self.coverage_levels {
            write_f64(&mut w, c)?;
        }
        write_u64(&mut w, self.pairs.len() as u64)?;
        for p in &self.pairs {
            for &f in &p.features {
                write_f64(&mut w, f)?;
            }
            write_f64(&mut w, p.rd)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, b"CRPS", "training corpus")?;
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::input(format!("unsupported corpus version {version}")));
        }
        let feature_version = read_u32(r)?;
        let seed = read_u64(r)?;
        let n_seeds = read_u32(r)? as usize;
        let mut image_seeds = Vec::with_capacity(n_seeds);
        for _ in 0..n_seeds {
            image_seeds.push(read_u64(r)?);
        }
        let n_levels = read_u32(r)? as usize;
        let mut coverage_levels = Vec::with_capacity(n_levels);
        for _ in 0..n_levels {
            coverage_levels.push(read_f64(r)?);
        }
        let n_pairs = read_u64(r)? as usize;
        let mut pairs = Vec::with_capacity(n_pairs.min(1 << 24));
        for _ in 0..n_pairs {
            let mut features = [0.0; FEATURE_COUNT];
            for f in &mut features {
                *f = read_f64(r)?;
            }
            let rd = read_f64(r)?;
            pairs.push(TrainingPair { features, rd });
        }
        Ok(TrainingCorpus { pairs, image_seeds, coverage_levels, seed, feature_version })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_label_image, Morphology};
    use crate::slads::recon::reconstruct;
    use rand::Rng;

    fn synthetic_corpus(theta_star: &[f64; FEATURE_COUNT], n_pairs: usize, seed: u64) -> TrainingCorpus {
        let mut rng = seeded_rng(seed);
        let pairs = (0..n_pairs)
            .map(|_| {
                let mut features = [0.0; FEATURE_COUNT];
                for f in features.iter_mut().take(FEATURE_COUNT - 1) {
                    *f = rng.random_range(-1.0..1.0);
                }
                features[FEATURE_COUNT - 1] = 1.0;
                let rd = theta_star.iter().zip(&features).map(|(t, v)| t * v).sum();
                TrainingPair { features, rd }
            })
            .collect();
        TrainingCorpus {
            pairs,
            image_seeds: vec![1, 2],
            coverage_levels: vec![0.1],
            seed,
            feature_version: FEATURE_VERSION,
        }
    }

    #[test]
    fn fit_recovers_exact_linear_targets() {
        let theta_star = [0.7, -1.3, 2.1, 0.05, -0.4, 0.9];
        let corpus = synthetic_corpus(&theta_star, 400, 3);
        let model = fit_theta(&corpus, 0.0).unwrap();
        for (got, want) in model.theta().iter().zip(&theta_star) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert_eq!(model.train_image_seeds(), &[1, 2]);
    }

    #[test]
    fn singular_system_suggests_ridge() {
        let mut corpus = synthetic_corpus(&[1.0; FEATURE_COUNT], 50, 4);
        for p in &mut corpus.pairs {
            p.features = [1.0, 2.0, 3.0, 4.0, 5.0, 1.0];
            p.rd = 6.0;
        }
        let err = fit_theta(&corpus, 0.0).unwrap_err();
        assert!(err.to_string().contains("ridge"), "{err}");
        assert!(fit_theta(&corpus, DEFAULT_RIDGE).is_ok());
    }

    #[test]
    fn ridge_shrinks_coefficient_norm() {
        let theta_star = [0.7, -1.3, 2.1, 0.05, -0.4, 0.9];
        let corpus = synthetic_corpus(&theta_star, 150, 5);
        let norm = |m: &ErdModel| m.theta().iter().map(|t| t * t).sum::<f64>().sqrt();
        let mut last = f64::INFINITY;
        for ridge in [0.0, 1e-3, 1e-1, 10.0, 1e3] {
            let n = norm(&fit_theta(&corpus, ridge).unwrap());
            assert!(n <= last + 1e-12, "ridge {ridge}: {n} > {last}");
            last = n;
        }
    }

    #[test]
    fn rd_matches_brute_force_on_small_grids() {
        let truth = synth_label_image(16, 2, &Morphology::HalfPlane, 21).unwrap();
        let n = truth.n();
        let n2 = n * n;
        let k = 4;
        for (mask_seed, level) in [(1u64, 0.05), (2, 0.2), (3, 0.5)] {
            let mut rng = seeded_rng(mask_seed);
            let mut mset = MeasurementSet::new(n);
            let count = fraction_to_count(level, n2);
            let mut placed = 0;
            while placed < count {
                let x = rng.random_range(0..n);
                let y = rng.random_range(0..n);
                if !mset.is_measured(x, y) {
                    mset.push(x, y, truth.at(x, y)).unwrap();
                    placed += 1;
                }
            }
            let state = build_state(&mset, k);
            let base = reconstruct(&mset, k).unwrap();
            let d_before = super::super::label_distortion(base.labels(), truth.labels()) as i64;

            for y in 0..n {
                for x in 0..n {
                    if mset.is_measured(x, y) {
                        continue;
                    }
                    let fast = reduction_in_distortion(
                        &truth, &mset, &state.labels, &state.kth_d2, x, y, k,
                    );
                    let mut with_s = mset.clone();
                    with_s.push(x, y, truth.at(x, y)).unwrap();
                    let full = reconstruct(&with_s, k).unwrap();
                    let d_after =
                        super::super::label_distortion(full.labels(), truth.labels()) as i64;
                    assert_eq!(fast, d_before - d_after, "candidate ({x},{y}) level {level}");
                }
            }
        }
    }

    #[test]
    fn generated_pairs_are_deterministic_and_tagged() {
        let img = synth_label_image(24, 2, &Morphology::HalfPlane, 33).unwrap();
        let params = CorpusParams {
            coverage_levels: vec![0.1, 0.3],
            pairs_per_level: 20,
            k_neighbors: 6,
        };
        let a = generate_pairs(&[(33, img.clone())], &params, 9).unwrap();
        let b = generate_pairs(&[(33, img)], &params, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs.len(), 40);
        assert_eq!(a.image_seeds, vec![33]);
        assert_eq!(a.coverage_levels, vec![0.1, 0.3]);
        assert!(a.pairs.iter().all(|p| p.features.iter().all(|f| f.is_finite())));
        assert!(a.pairs.iter().any(|p| p.rd != 0.0), "corpus carries signal");
    }

    #[test]
    fn corpus_round_trips() {
        let img = synth_label_image(16, 2, &Morphology::HalfPlane, 40).unwrap();
        let params =
            CorpusParams { coverage_levels: vec![0.2], pairs_per_level: 15, k_neighbors: 5 };
        let corpus = generate_pairs(&[(40, img)], &params, 11).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.bin");
        corpus.save(&path).unwrap();
        assert_eq!(TrainingCorpus::load(&path).unwrap(), corpus);
    }

    #[test]
    fn invalid_params_rejected() {
        let img = synth_label_image(16, 2, &Morphology::HalfPlane, 1).unwrap();
        let images = [(1u64, img)];
        let bad_level =
            CorpusParams { coverage_levels: vec![1.0], ..CorpusParams::default() };
        assert!(generate_pairs(&images, &bad_level, 0).is_err());
        let no_pairs = CorpusParams { pairs_per_level: 0, ..CorpusParams::default() };
        assert!(generate_pairs(&images, &no_pairs, 0).is_err());
        assert!(generate_pairs(&[], &CorpusParams::default(), 0).is_err());
    }
}
