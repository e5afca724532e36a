//! Tier-1 ill-spectrum detection: a fully-connected network regresses every
//! valid spectrum onto a fixed ramp target; the variance of the absolute
//! residual separates in-family spectra (tiny, shape-true residuals) from
//! ill ones (large, structured residuals). A spectrum is declared ill when
//! that variance exceeds the calibrated threshold.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f64, read_f64_vec, read_u32, write_f64, write_f64_slice, write_u32};
use crate::nn::{train_network, Loss, Network, NetworkBuilder, SgdConfig};
use crate::phantom::{ill_draw, noisy_draw, NoiseModel, PhaseLibrary, Spectrum};
use crate::rng::{derive, seeded_rng};

const TRAIN_STREAM: u64 = 0x4e4e5254;
const CALIB_STREAM: u64 = 0x4e4e5243;

#[derive(Debug, Clone)]
pub struct NnrModel {
    network: Network,
    target_line: Vec<f64>,
    threshold: f64,
    /// Inputs are scaled to total count = `input_gain` before the network.
    input_gain: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    pub variance: f64,
    pub is_ill: bool,
}

#[derive(Debug, Clone)]
pub struct DetectorTrainConfig {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    /// Q: width of the target line and of every hidden layer's output.
    pub output_width: usize,
    /// Noisy draws generated per clean library spectrum for training.
    pub draws_per_spectrum: usize,
    pub noise_model: NoiseModel,
    pub ill_lambda: f64,
    pub sgd: SgdConfig,
    /// Mean per-draw residual loss the validation split must reach.
    pub target_residual: f64,
    pub seed: u64,
}

impl Default for DetectorTrainConfig {
    fn default() -> Self {
        DetectorTrainConfig {
            hidden_layers: 5,
            hidden_width: 100,
            output_width: 100,
            draws_per_spectrum: 24,
            noise_model: NoiseModel::default(),
            ill_lambda: crate::phantom::DEFAULT_ILL_LAMBDA,
            sgd: SgdConfig { learning_rate: 0.002, momentum: 0.9, batch_size: 16, epochs: 60 },
            target_residual: 0.5,
            seed: 7,
        }
    }
}

/// The fixed regression target: a unit ramp over Q outputs.
pub fn ramp_target(q: usize) -> Vec<f64> {
    (0..q).map(|i| i as f64 / (q - 1) as f64).collect()
}

fn normalize(spectrum: &Spectrum, gain: f64) -> Vec<f64> {
    let total = spectrum.total();
    if total <= 0.0 {
        return vec![0.0; spectrum.len()];
    }
    let scale = gain / total;
    spectrum.counts().iter().map(|c| c * scale).collect()
}

/// Clean spectra labeled with the phase they came from.
pub(crate) type LabeledSpectra<'a> = Vec<(&'a Spectrum, u8)>;

/// Split each phase's clean spectra into train/validation halves
/// (first half trains, second half validates).
pub(crate) fn split_library(library: &PhaseLibrary) -> (LabeledSpectra<'_>, LabeledSpectra<'_>) {
    let mut train_half = Vec::new();
    let mut val_half = Vec::new();
    for label in 1..=library.num_phases() {
        let per = library.phase(label);
        let mid = per.len() / 2;
        for s in &per[..mid] {
            train_half.push((s, label));
        }
        for s in &per[mid..] {
            val_half.push((s, label));
        }
    }
    (train_half, val_half)
}

pub fn train_nnr(library: &PhaseLibrary, cfg: &DetectorTrainConfig) -> Result<NnrModel> {
    if library.per_phase() < 2 {
        return Err(Error::training("need at least two spectra per phase to split train/validation"));
    }
    if cfg.output_width < 2 {
        return Err(Error::config("target line needs at least two points"));
    }
    if cfg.draws_per_spectrum == 0 {
        return Err(Error::config("need at least one noisy draw per spectrum"));
    }

    let bins = library.bins();
    // sqrt(bins) keeps the squared norm of a normalized spectrum roughly
    // invariant to re-binning, so one learning rate works at any bin count.
    let input_gain = (bins as f64).sqrt();
    let target_line = ramp_target(cfg.output_width);
    let (train_half, val_half) = split_library(library);

    let mut draw_rng = seeded_rng(derive(cfg.seed, TRAIN_STREAM));
    let mut make_draws = |clean: &[(&Spectrum, u8)]| -> Vec<Vec<f64>> {
        let mut rows = Vec::with_capacity(clean.len() * cfg.draws_per_spectrum);
        for (s, _) in clean {
            for _ in 0..cfg.draws_per_spectrum {
                rows.push(normalize(&noisy_draw(s, &cfg.noise_model, &mut draw_rng), input_gain));
            }
        }
        rows
    };
    let train_rows = make_draws(&train_half);
    let val_rows = make_draws(&val_half);
    let targets = vec![target_line.clone(); train_rows.len()];

    let mut builder = NetworkBuilder::new(bins, cfg.seed)?;
    for _ in 0..cfg.hidden_layers {
        builder = builder.dense(cfg.hidden_width)?.relu();
    }
    let mut network = builder.dense(cfg.output_width)?.build();

    let mut train_rng = seeded_rng(derive(cfg.seed, TRAIN_STREAM ^ 1));
    let epoch_losses = train_network(
        &mut network,
        &train_rows,
        &targets,
        &cfg.sgd,
        Loss::HalfSquaredError,
        &mut train_rng,
    )?;

    let val_residual = val_rows
        .iter()
        .map(|row| {
            let out = network.forward(row).expect("validated shape");
            out.iter().zip(&target_line).map(|(o, t)| (o - t) * (o - t)).sum::<f64>()
        })
        .sum::<f64>()
        / val_rows.len() as f64;
    if val_residual > cfg.target_residual {
        return Err(Error::training(format!(
            "validation residual {val_residual:.6} exceeds target {}; epoch losses {:?}",
            cfg.target_residual,
            &epoch_losses[epoch_losses.len().saturating_sub(5)..]
        )));
    }

    let mut model = NnrModel { network, target_line, threshold: f64::MAX, input_gain };
    model.threshold = calibrate_threshold(&model, library, cfg)?;
    Ok(model)
}

/// T sits at the log-scale midpoint between the 99th percentile of valid
/// variances and the 1st percentile of ill variances, both measured on the
/// validation half.
fn calibrate_threshold(
    model: &NnrModel,
    library: &PhaseLibrary,
    cfg: &DetectorTrainConfig,
) -> Result<f64> {
    let (_, val_half) = split_library(library);
    let mut rng = seeded_rng(derive(cfg.seed, CALIB_STREAM));
    let mut valid_vars = Vec::new();
    for (s, _) in &val_half {
        for _ in 0..cfg.draws_per_spectrum {
            valid_vars.push(variance_metric(model, &noisy_draw(s, &cfg.noise_model, &mut rng)));
        }
    }
    let mut ill_vars = Vec::with_capacity(valid_vars.len());
    for _ in 0..valid_vars.len() {
        ill_vars.push(variance_metric(model, &ill_draw(library.bins(), cfg.ill_lambda, &mut rng)));
    }
    valid_vars.sort_by(f64::total_cmp);
    ill_vars.sort_by(f64::total_cmp);
    let valid_hi = percentile(&valid_vars, 0.99).max(1e-300);
    let ill_lo = percentile(&ill_vars, 0.01).max(1e-300);
    if valid_hi >= ill_lo {
        return Err(Error::training(format!(
            "detector failed to separate: valid 99th pct {valid_hi:.3e} >= ill 1st pct {ill_lo:.3e}"
        )));
    }
    Ok((valid_hi * ill_lo).sqrt())
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

/// Variance of the absolute residual between the target line and the
/// network's projection of `z`.
pub fn variance_metric(model: &NnrModel, z: &Spectrum) -> f64 {
    let out = model
        .network
        .forward(&normalize(z, model.input_gain))
        .expect("spectrum length checked by caller");
    let residuals: Vec<f64> =
        out.iter().zip(&model.target_line).map(|(o, t)| (t - o).abs()).collect();
    let q = residuals.len() as f64;
    let mean = residuals.iter().sum::<f64>() / q;
    residuals.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / q
}

pub fn detect(model: &NnrModel, z: &Spectrum) -> Result<DetectionResult> {
    if z.len() != model.network.input_len() {
        return Err(Error::input(format!(
            "detector expects {} bins, got {}",
            model.network.input_len(),
            z.len()
        )));
    }
    let variance = variance_metric(model, z);
    Ok(DetectionResult { variance, is_ill: variance > model.threshold })
}

impl NnrModel {
    pub fn bins(&self) -> usize {
        self.network.input_len()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn target_line(&self) -> &[f64] {
        &self.target_line
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Test-support constructor bypassing training.
    pub fn from_parts(network: Network, target_line: Vec<f64>, threshold: f64, input_gain: f64) -> Result<Self> {
        if network.output_len() != target_line.len() {
            return Err(Error::config("target line width must match network output"));
        }
        if threshold.is_nan() || threshold <= 0.0 {
            return Err(Error::config("threshold must be positive"));
        }
        let constant = target_line.windows(2).all(|w| w[0] == w[1]);
        if target_line.is_empty() || constant || target_line.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("target line must be finite and non-constant"));
        }
        Ok(NnrModel { network, target_line, threshold, input_gain })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"NNRD")?;
        write_u32(w, 1)?;
        write_u32(w, self.target_line.len() as u32)?;
        write_f64(w, self.threshold)?;
        write_f64(w, self.input_gain)?;
        write_f64_slice(w, &self.target_line)?;
        self.network.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, b"NNRD", "detector checkpoint")?;
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::input(format!("unsupported detector checkpoint version {version}")));
        }
        let q = read_u32(r)? as usize;
        let threshold = read_f64(r)?;
        let input_gain = read_f64(r)?;
        let target_line = read_f64_vec(r, q)?;
        let network = Network::read_from(r)?;
        if network.output_len() != q {
            return Err(Error::input("detector checkpoint output width mismatch"));
        }
        Ok(NnrModel { network, target_line, threshold, input_gain })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_phase_spectra, LibraryParams};

    fn quick_cfg(seed: u64) -> DetectorTrainConfig {
        DetectorTrainConfig {
            hidden_layers: 2,
            hidden_width: 40,
            output_width: 50,
            draws_per_spectrum: 8,
            sgd: SgdConfig { learning_rate: 0.002, momentum: 0.9, batch_size: 16, epochs: 60 },
            seed,
            ..DetectorTrainConfig::default()
        }
    }

    #[test]
    fn ramp_target_is_unit_ramp() {
        let f = ramp_target(100);
        assert_eq!(f[0], 0.0);
        assert_eq!(f[99], 1.0);
        assert!((f[50] - 50.0 / 99.0).abs() < 1e-15);
    }

    #[test]
    fn variance_metric_matches_two_pass_oracle() {
        let lib = synth_phase_spectra(2, 4, 64, &LibraryParams::default(), 1).unwrap();
        let net = NetworkBuilder::new(64, 2).unwrap().dense(20).unwrap().build();
        let model = NnrModel::from_parts(net, ramp_target(20), 1.0, 64.0).unwrap();
        let z = &lib.phase(1)[0];
        let got = variance_metric(&model, z);

        let out = model.network().forward(&normalize(z, 64.0)).unwrap();
        let g: Vec<f64> =
            out.iter().zip(model.target_line()).map(|(o, t)| (t - o).abs()).collect();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let oracle = g.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / g.len() as f64;
        assert!((got - oracle).abs() < 1e-12);
        assert!(got >= 0.0);
    }

    #[test]
    fn constant_residual_has_zero_variance() {
        // identity-free network: zero weights, bias = target + 0.3 shifts
        // every output by the same constant, so residuals are constant
        let mut net = NetworkBuilder::new(8, 0).unwrap().dense(10).unwrap().build();
        let target = ramp_target(10);
        for w in net.layers_mut()[0].weights.iter_mut() {
            *w = 0.0;
        }
        for (b, t) in net.layers_mut()[0].bias.iter_mut().zip(&target) {
            *b = t + 0.3;
        }
        let model = NnrModel::from_parts(net, target, 1.0, 8.0).unwrap();
        let z = Spectrum::new(vec![5.0; 8]).unwrap();
        assert!(variance_metric(&model, &z) < 1e-24);
    }

    #[test]
    fn tie_at_threshold_is_not_ill() {
        let mut net = NetworkBuilder::new(4, 0).unwrap().dense(3).unwrap().build();
        for w in net.layers_mut()[0].weights.iter_mut() {
            *w = 0.0;
        }
        // residuals g = target exactly -> variance = var(target)
        let target = vec![0.0, 0.5, 1.0];
        let var = {
            let mean = 0.5;
            target.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / 3.0
        };
        let model = NnrModel::from_parts(net, target, var, 4.0).unwrap();
        let z = Spectrum::new(vec![1.0; 4]).unwrap();
        let res = detect(&model, &z).unwrap();
        assert!((res.variance - var).abs() < 1e-15);
        assert!(!res.is_ill, "boundary must classify as valid");
    }

    #[test]
    fn trained_detector_separates_ill_spectra() {
        let lib = synth_phase_spectra(2, 8, 96, &LibraryParams::default(), 5).unwrap();
        let cfg = quick_cfg(5);
        let model = train_nnr(&lib, &cfg).unwrap();
        let mut rng = seeded_rng(123);
        let mut errors = 0;
        let trials = 400;
        for i in 0..trials {
            let valid = noisy_draw(&lib.phase(1 + (i % 2) as u8)[i % 8], &cfg.noise_model, &mut rng);
            if detect(&model, &valid).unwrap().is_ill {
                errors += 1;
            }
            let ill = ill_draw(96, cfg.ill_lambda, &mut rng);
            if !detect(&model, &ill).unwrap().is_ill {
                errors += 1;
            }
        }
        assert!(errors as f64 <= 0.02 * (2 * trials) as f64, "{errors} errors in {}", 2 * trials);
    }

    #[test]
    fn detector_checkpoint_round_trips() {
        let net = NetworkBuilder::new(48, 9)
            .unwrap()
            .dense(16)
            .unwrap()
            .relu()
            .dense(12)
            .unwrap()
            .build();
        let model = NnrModel::from_parts(net, ramp_target(12), 3.25e-4, 48.0).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let loaded = NnrModel::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(loaded.threshold().to_bits(), model.threshold().to_bits());
        let z = ill_draw(48, 20.0, &mut seeded_rng(1));
        assert_eq!(
            variance_metric(&loaded, &z).to_bits(),
            variance_metric(&model, &z).to_bits()
        );
        assert_eq!(detect(&loaded, &z).unwrap(), detect(&model, &z).unwrap());
    }

    #[test]
    fn wrong_length_spectrum_is_input_error() {
        let net = NetworkBuilder::new(16, 3).unwrap().dense(8).unwrap().build();
        let model = NnrModel::from_parts(net, ramp_target(8), 1.0, 16.0).unwrap();
        let z = Spectrum::new(vec![1.0; 8]).unwrap();
        assert!(detect(&model, &z).is_err());
    }
}

