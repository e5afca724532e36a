//! Scattered-label reconstruction: each unmeasured pixel takes the
//! inverse-squared-distance weighted plurality label of its K nearest
//! measured neighbors. Neighbor search expands square rings on the pixel
//! grid and is exact; scan order is fixed so distance ties resolve
//! deterministically.

use crate::error::{Error, Result};

pub const DEFAULT_K_NEIGHBORS: usize = 10;

/// Ordered, duplicate-free set of measured pixels with their labels.
#[derive(Debug, Clone)]
pub struct MeasurementSet {
    n: usize,
    order: Vec<(u32, u32, u8)>,
    grid: Vec<Option<u8>>,
}

impl MeasurementSet {
    pub fn new(n: usize) -> Self {
        MeasurementSet { n, order: Vec::new(), grid: vec![None; n * n] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn label_at(&self, x: usize, y: usize) -> Option<u8> {
        self.grid[y * self.n + x]
    }

    pub fn is_measured(&self, x: usize, y: usize) -> bool {
        self.grid[y * self.n + x].is_some()
    }

    /// Acquisition-ordered (x, y, label) triples.
    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, u8)> + '_ {
        self.order.iter().copied()
    }

    pub fn push(&mut self, x: usize, y: usize, label: u8) -> Result<()> {
        if x >= self.n || y >= self.n {
            return Err(Error::input(format!("measurement ({x},{y}) outside {0}x{0}", self.n)));
        }
        let slot = &mut self.grid[y * self.n + x];
        if slot.is_some() {
            return Err(Error::input(format!("pixel ({x},{y}) measured twice")));
        }
        *slot = Some(label);
        self.order.push((x as u32, y as u32, label));
        Ok(())
    }
}

/// One measured neighbor of a query pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub x: usize,
    pub y: usize,
    pub label: u8,
    pub d2: f64,
}

/// Exact K nearest measured neighbors of (x, y), nearest first. If fewer
/// than K pixels are measured, returns all of them.
pub fn nearest_measured(
    mset: &MeasurementSet,
    x: usize,
    y: usize,
    k: usize,
) -> Vec<Neighbor> {
    let n = mset.n;
    let mut found: Vec<Neighbor> = Vec::with_capacity(k + 1);
    let mut worst = f64::INFINITY;
    let max_ring = n; // rings beyond n-1 cannot contain grid pixels

    let visit = |px: usize, py: usize, found: &mut Vec<Neighbor>, worst: &mut f64| {
        if let Some(label) = mset.grid[py * n + px] {
            let dx = px as f64 - x as f64;
            let dy = py as f64 - y as f64;
            let d2 = dx * dx + dy * dy;
            if found.len() < k {
                let pos = found.partition_point(|nb| nb.d2 <= d2);
                found.insert(pos, Neighbor { x: px, y: py, label, d2 });
                if found.len() == k {
                    *worst = found[k - 1].d2;
                }
            } else if d2 < *worst {
                let pos = found.partition_point(|nb| nb.d2 <= d2);
                found.insert(pos, Neighbor { x: px, y: py, label, d2 });
                found.pop();
                *worst = found[k - 1].d2;
            }
        }
    };

    for r in 0..=max_ring {
        // every pixel in ring r is at Euclidean distance >= r
        if found.len() == k && (r * r) as f64 > worst {
            break;
        }
        let lo_x = x.saturating_sub(r);
        let hi_x = (x + r).min(n - 1);
        if r == 0 {
            visit(x, y, &mut found, &mut worst);
            continue;
        }
        if y >= r {
            let py = y - r;
            for px in lo_x..=hi_x {
                visit(px, py, &mut found, &mut worst);
            }
        }
        if y + r < n {
            let py = y + r;
            for px in lo_x..=hi_x {
                visit(px, py, &mut found, &mut worst);
            }
        }
        let lo_y = y.saturating_sub(r - 1);
        let hi_y = (y + r - 1).min(n - 1);
        if x >= r {
            let px = x - r;
            for py in lo_y..=hi_y {
                visit(px, py, &mut found, &mut worst);
            }
        }
        if x + r < n {
            let px = x + r;
            for py in lo_y..=hi_y {
                visit(px, py, &mut found, &mut worst);
            }
        }
    }
    found
}

/// Inverse-squared-distance weighted plurality label; ties break to the
/// lowest label value.
pub fn weighted_mode(neighbors: &[Neighbor]) -> u8 {
    debug_assert!(!neighbors.is_empty());
    let mut weights = [0.0f64; 256];
    let mut seen_max = 0usize;
    for nb in neighbors {
        weights[nb.label as usize] += 1.0 / nb.d2.max(1e-12);
        seen_max = seen_max.max(nb.label as usize);
    }
    let mut best = 0usize;
    for label in 0..=seen_max {
        if weights[label] > weights[best] {
            best = label;
        }
    }
    best as u8
}

/// Full label image inferred from scattered measurements. Measured pixels
/// keep their measured labels exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    n: usize,
    labels: Vec<u8>,
    measured: Vec<bool>,
}

impl Reconstruction {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn label_at(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.n + x]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn is_measured(&self, x: usize, y: usize) -> bool {
        self.measured[y * self.n + x]
    }

    pub(crate) fn from_parts(n: usize, labels: Vec<u8>, measured: Vec<bool>) -> Self {
        Reconstruction { n, labels, measured }
    }

    /// View as a label image for distortion computations; phase count is the
    /// largest label present.
    pub fn to_label_image(&self, num_phases: u8) -> Result<crate::phantom::LabelImage> {
        crate::phantom::LabelImage::new(self.n, num_phases, self.labels.clone())
    }
}

/// Reconstruction labels plus each pixel's k-th neighbor distance², the
/// invalidation radius for incremental updates (0 for measured pixels,
/// infinite while fewer than k measurements exist).
pub(crate) struct ReconState {
    pub labels: Vec<u8>,
    pub kth_d2: Vec<f64>,
}

pub(crate) fn build_state(mset: &MeasurementSet, k: usize) -> ReconState {
    let n = mset.n();
    let mut labels = vec![0u8; n * n];
    let mut kth_d2 = vec![f64::INFINITY; n * n];
    for y in 0..n {
        for x in 0..n {
            let idx = y * n + x;
            if let Some(label) = mset.label_at(x, y) {
                labels[idx] = label;
                kth_d2[idx] = 0.0;
            } else {
                let nbs = nearest_measured(mset, x, y, k);
                labels[idx] = weighted_mode(&nbs);
                if nbs.len() == k {
                    kth_d2[idx] = nbs[k - 1].d2;
                }
            }
        }
    }
    ReconState { labels, kth_d2 }
}

pub fn reconstruct(mset: &MeasurementSet, k: usize) -> Result<Reconstruction> {
    if mset.is_empty() {
        return Err(Error::input("cannot reconstruct from an empty measurement set"));
    }
    if k == 0 {
        return Err(Error::config("reconstruction needs k >= 1 neighbors"));
    }
    let n = mset.n;
    let mut labels = vec![0u8; n * n];
    let mut measured = vec![false; n * n];
    for y in 0..n {
        for x in 0..n {
            let idx = y * n + x;
            if let Some(label) = mset.label_at(x, y) {
                labels[idx] = label;
                measured[idx] = true;
            } else {
                labels[idx] = weighted_mode(&nearest_measured(mset, x, y, k));
            }
        }
    }
    Ok(Reconstruction { n, labels, measured })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_measurement_rejected() {
        let mut m = MeasurementSet::new(8);
        m.push(3, 4, 1).unwrap();
        assert!(m.push(3, 4, 2).is_err());
        assert!(m.push(8, 0, 1).is_err());
        assert_eq!(m.len(), 1);
    }

    #[test]
    fn single_measurement_floods_image() {
        let mut m = MeasurementSet::new(6);
        m.push(2, 2, 2).unwrap();
        let r = reconstruct(&m, 10).unwrap();
        assert!(r.labels().iter().all(|&l| l == 2));
    }

    #[test]
    fn empty_set_is_input_error() {
        assert!(reconstruct(&MeasurementSet::new(4), 10).is_err());
    }

    #[test]
    fn fully_measured_image_is_exact() {
        let n = 8;
        let mut m = MeasurementSet::new(n);
        for y in 0..n {
            for x in 0..n {
                m.push(x, y, ((x + y) % 3) as u8).unwrap();
            }
        }
        let r = reconstruct(&m, 10).unwrap();
        for y in 0..n {
            for x in 0..n {
                assert_eq!(r.label_at(x, y), ((x + y) % 3) as u8);
                assert!(r.is_measured(x, y));
            }
        }
    }

    #[test]
    fn nearest_search_matches_brute_force() {
        use crate::rng::seeded_rng;
        use rand::Rng;
        let n = 24;
        let mut rng = seeded_rng(31);
        let mut m = MeasurementSet::new(n);
        let mut placed = 0;
        while placed < 60 {
            let x = rng.random_range(0..n);
            let y = rng.random_range(0..n);
            if !m.is_measured(x, y) {
                m.push(x, y, rng.random_range(0..4) as u8).unwrap();
                placed += 1;
            }
        }
        for _ in 0..200 {
            let qx = rng.random_range(0..n);
            let qy = rng.random_range(0..n);
            let got = nearest_measured(&m, qx, qy, 5);
            let mut brute: Vec<(f64, usize, usize)> = m
                .iter()
                .map(|(x, y, _)| {
                    let dx = x as f64 - qx as f64;
                    let dy = y as f64 - qy as f64;
                    (dx * dx + dy * dy, x as usize, y as usize)
                })
                .collect();
            brute.sort_by(|a, b| a.0.total_cmp(&b.0));
            assert_eq!(got.len(), 5);
            for (nb, b) in got.iter().zip(&brute) {
                // distances must agree even if equidistant points swap
                assert_eq!(nb.d2, b.0, "query ({qx},{qy})");
            }
        }
    }

    #[test]
    fn closer_neighbors_dominate_the_vote() {
        let neighbors = [
            Neighbor { x: 0, y: 0, label: 1, d2: 1.0 },
            Neighbor { x: 0, y: 0, label: 2, d2: 9.0 },
            Neighbor { x: 0, y: 0, label: 2, d2: 9.0 },
            Neighbor { x: 0, y: 0, label: 2, d2: 9.0 },
        ];
        // weights: label 1 -> 1.0, label 2 -> 3/9 = 0.333
        assert_eq!(weighted_mode(&neighbors), 1);
    }

    #[test]
    fn vote_ties_break_to_lowest_label() {
        let neighbors = [
            Neighbor { x: 0, y: 0, label: 3, d2: 2.0 },
            Neighbor { x: 0, y: 0, label: 1, d2: 2.0 },
        ];
        assert_eq!(weighted_mode(&neighbors), 1);
    }

    #[test]
    fn half_plane_reconstructs_well_from_random_sample() {
        use crate::rng::seeded_rng;
        use rand::Rng;
        let n = 32;
        let mut rng = seeded_rng(5);
        let truth = |x: usize| if x < n / 2 { 1u8 } else { 2u8 };
        let mut m = MeasurementSet::new(n);
        let mut placed = 0;
        while placed < n * n / 5 {
            let x = rng.random_range(0..n);
            let y = rng.random_range(0..n);
            if !m.is_measured(x, y) {
                m.push(x, y, truth(x)).unwrap();
                placed += 1;
            }
        }
        let r = reconstruct(&m, DEFAULT_K_NEIGHBORS).unwrap();
        let wrong: usize = (0..n)
            .flat_map(|y| (0..n).map(move |x| (x, y)))
            .filter(|&(x, y)| r.label_at(x, y) != truth(x))
            .count();
        assert!((wrong as f64) < 0.05 * (n * n) as f64, "{wrong} wrong pixels");
    }
}
