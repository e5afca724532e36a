//! Tier-2 phase classification: a 1-D CNN over the spectrum ending in an
//! L-way softmax. Inputs are normalized exactly as in the detector; the
//! caller is expected to run the detector first and only classify spectra
//! it accepted.

use std::io::{Read, Write};
use std::path::Path;

use crate::detector::{detect, split_library, NnrModel};
use crate::error::{Error, Result};
use crate::io::{expect_magic, read_f64, read_u32, write_f64, write_u32};
use crate::nn::{train_network, Loss, Network, NetworkBuilder, SgdConfig};
use crate::phantom::{noisy_draw, NoiseModel, PhaseLibrary, Spectrum};
use crate::rng::{derive, seeded_rng};

const TRAIN_STREAM: u64 = 0x434e4e54;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnnArch {
    /// Feature counts (u1, u2) of the two conv layers; u2 % u1 must be 0.
    pub conv_features: (usize, usize),
    pub kernel_size: usize,
    pub stride: usize,
    pub pool_size: usize,
    pub pool_stride: usize,
    pub fc_widths: [usize; 3],
}

impl Default for CnnArch {
    fn default() -> Self {
        CnnArch {
            conv_features: (8, 16),
            kernel_size: 10,
            stride: 2,
            pool_size: 10,
            pool_stride: 2,
            fc_widths: [100, 32, 8],
        }
    }
}

#[derive(Debug, Clone)]
pub struct CnnModel {
    network: Network,
    num_phases: u8,
    input_gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    /// Softmax probabilities over phases; index i ↔ label i+1.
    pub probs: Vec<f64>,
    /// Predicted label in 1..=L; argmax ties resolve to the lowest label.
    pub label: u8,
}

#[derive(Debug, Clone)]
pub struct ClassifierTrainConfig {
    pub arch: CnnArch,
    pub draws_per_spectrum: usize,
    pub noise_model: NoiseModel,
    pub sgd: SgdConfig,
    /// Held-out accuracy the trained model must reach.
    pub target_accuracy: f64,
    pub seed: u64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            arch: CnnArch::default(),
            draws_per_spectrum: 24,
            noise_model: NoiseModel::default(),
            sgd: SgdConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 16, epochs: 30 },
            target_accuracy: 0.99,
            seed: 11,
        }
    }
}

/// Compose the CNN for `bins`-long spectra and `num_phases` classes. Layer
/// lengths follow the ceil-division rule, so the flat width adapts to any
/// bin count (2040 bins → 16×128 = 2048).
pub fn build_cnn(bins: usize, num_phases: u8, arch: &CnnArch, seed: u64) -> Result<Network> {
    let (u1, u2) = arch.conv_features;
    if u1 == 0 || u2 == 0 || u2 % u1 != 0 {
        return Err(Error::config(format!(
            "second conv features {u2} must be a positive multiple of the first {u1}"
        )));
    }
    if num_phases < 2 {
        return Err(Error::config("classifier needs at least two phases"));
    }
    let mut b = NetworkBuilder::new(bins, seed)?
        .conv1d(u1, arch.kernel_size, arch.stride)?
        .relu()
        .max_pool1d(arch.pool_size, arch.pool_stride)?
        .conv1d(u2, arch.kernel_size, arch.stride)?
        .relu()
        .max_pool1d(arch.pool_size, arch.pool_stride)?
        .flatten();
    for width in arch.fc_widths {
        b = b.dense(width)?.relu();
    }
    Ok(b.dense(num_phases as usize)?.softmax()?.build())
}

fn one_hot(label: u8, num_phases: u8) -> Vec<f64> {
    let mut v = vec![0.0; num_phases as usize];
    v[label as usize - 1] = 1.0;
    v
}

fn normalize(spectrum: &Spectrum, gain: f64) -> Vec<f64> {
    let total = spectrum.total();
    if total <= 0.0 {
        return vec![0.0; spectrum.len()];
    }
    let scale = gain / total;
    spectrum.counts().iter().map(|c| c * scale).collect()
}

pub fn train_cnn(library: &PhaseLibrary, cfg: &ClassifierTrainConfig) -> Result<CnnModel> {
    if library.per_phase() < 2 {
        return Err(Error::training("need at least two spectra per phase to split train/validation"));
    }
    if cfg.draws_per_spectrum == 0 {
        return Err(Error::config("need at least one noisy draw per spectrum"));
    }

    let bins = library.bins();
    let num_phases = library.num_phases();
    // Same sqrt(bins) gain as the detector: keeps input norms, and therefore
    // gradient scales, comparable across bin counts.
    let input_gain = (bins as f64).sqrt();
    let (train_half, val_half) = split_library(library);

    let mut draw_rng = seeded_rng(derive(cfg.seed, TRAIN_STREAM));
    let mut make_draws = |half: &[(&Spectrum, u8)]| -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rows = Vec::with_capacity(half.len() * cfg.draws_per_spectrum);
        let mut labels = Vec::with_capacity(rows.capacity());
        for (s, label) in half {
            for _ in 0..cfg.draws_per_spectrum {
                rows.push(normalize(&noisy_draw(s, &cfg.noise_model, &mut draw_rng), input_gain));
                labels.push(*label);
            }
        }
        (rows, labels)
    };
    let (train_rows, train_labels) = make_draws(&train_half);
    let (val_rows, val_labels) = make_draws(&val_half);
    let targets: Vec<Vec<f64>> =
        train_labels.iter().map(|&l| one_hot(l, num_phases)).collect();

    let mut network = build_cnn(bins, num_phases, &cfg.arch, cfg.seed)?;
    let mut train_rng = seeded_rng(derive(cfg.seed, TRAIN_STREAM ^ 1));
    let epoch_losses = train_network(
        &mut network,
        &train_rows,
        &targets,
        &cfg.sgd,
        Loss::CrossEntropy,
        &mut train_rng,
    )?;

    let model = CnnModel { network, num_phases, input_gain };
    let correct = val_rows
        .iter()
        .zip(&val_labels)
        .filter(|(row, &label)| model.classify_normalized(row).label == label)
        .count();
    let accuracy = correct as f64 / val_rows.len() as f64;
    if accuracy < cfg.target_accuracy {
        return Err(Error::training(format!(
            "validation accuracy {accuracy:.4} below target {}; epoch losses {:?}",
            cfg.target_accuracy,
            &epoch_losses[epoch_losses.len().saturating_sub(5)..]
        )));
    }
    Ok(model)
}

impl CnnModel {
    pub fn bins(&self) -> usize {
        self.network.input_len()
    }

    pub fn num_phases(&self) -> u8 {
        self.num_phases
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    /// Test-support constructor bypassing training.
    pub fn from_parts(network: Network, num_phases: u8, input_gain: f64) -> Result<Self> {
        if network.output_len() != num_phases as usize {
            return Err(Error::config("network output width must equal the phase count"));
        }
        Ok(CnnModel { network, num_phases, input_gain })
    }

    fn classify_normalized(&self, row: &[f64]) -> ClassScores {
        let probs = self.network.forward(row).expect("shape fixed at build time");
        let mut best = 0usize;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        ClassScores { probs, label: best as u8 + 1 }
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
        w.write_all(b"CNNC")?;
        write_u32(w, 1)?;
        write_u32(w, self.num_phases as u32)?;
        write_f64(w, self.input_gain)?;
        self.network.write_to(w)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, b"CNNC", "classifier checkpoint")?;
        let version = read_u32(r)?;
        if version != 1 {
            return Err(Error::input(format!(
                "unsupported classifier checkpoint version {version}"
            )));
        }
        let num_phases = read_u32(r)? as u8;
        let input_gain = read_f64(r)?;
        let network = Network::read_from(r)?;
        CnnModel::from_parts(network, num_phases, input_gain)
    }
}

/// Phase scores for a spectrum that already passed the detector.
pub fn classify(model: &CnnModel, z: &Spectrum) -> Result<ClassScores> {
    if z.len() != model.network.input_len() {
        return Err(Error::input(format!(
            "classifier expects {} bins, got {}",
            model.network.input_len(),
            z.len()
        )));
    }
    Ok(model.classify_normalized(&normalize(z, model.input_gain)))
}

/// The full two-tier label: 0 if the detector flags the spectrum ill,
/// otherwise the CNN's phase label.
pub fn classify_spectrum_full(
    detector: &NnrModel,
    classifier: &CnnModel,
    z: &Spectrum,
) -> Result<u8> {
    if detector.bins() != classifier.bins() {
        return Err(Error::config(format!(
            "detector ({} bins) and classifier ({} bins) are incompatible",
            detector.bins(),
            classifier.bins()
        )));
    }
    Ok(classify_spectrum_detailed(detector, classifier, z)?.0)
}

/// Two-tier label plus the detector variance that produced the ill verdict.
pub fn classify_spectrum_detailed(
    detector: &NnrModel,
    classifier: &CnnModel,
    z: &Spectrum,
) -> Result<(u8, f64)> {
    if detector.bins() != classifier.bins() {
        return Err(Error::config(format!(
            "detector ({} bins) and classifier ({} bins) are incompatible",
            detector.bins(),
            classifier.bins()
        )));
    }
    let verdict = detect(detector, z)?;
    if verdict.is_ill {
        return Ok((0, verdict.variance));
    }
    Ok((classify(classifier, z)?.label, verdict.variance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{synth_phase_spectra, LibraryParams};

    fn quick_cfg(seed: u64) -> ClassifierTrainConfig {
        ClassifierTrainConfig {
            draws_per_spectrum: 8,
            sgd: SgdConfig { learning_rate: 0.01, momentum: 0.9, batch_size: 16, epochs: 25 },
            seed,
            ..ClassifierTrainConfig::default()
        }
    }

    #[test]
    fn paper_architecture_dimensions() {
        let net = build_cnn(2040, 2, &CnnArch::default(), 0).unwrap();
        // conv/pool chain: 2040 -> 1020 -> 510 -> 255 -> 128; flat = 16*128
        let flatten_out = {
            let specs: Vec<_> = net.layers().iter().map(|l| l.spec).collect();
            let mut ch = 1usize;
            let mut len = 2040usize;
            let mut flat = 0usize;
            for s in specs {
                match s.kind {
                    crate::nn::LayerKind::Conv1d => {
                        ch = s.out_features;
                        len = len.div_ceil(s.stride);
                    }
                    crate::nn::LayerKind::MaxPool1d => len = len.div_ceil(s.stride),
                    crate::nn::LayerKind::Flatten => {
                        flat = ch * len;
                        len = flat;
                        ch = 1;
                    }
                    _ => {}
                }
            }
            flat
        };
        assert_eq!(flatten_out, 2048);
        assert_eq!(net.output_len(), 2);
    }

    #[test]
    fn conv_feature_multiple_enforced() {
        let arch = CnnArch { conv_features: (8, 12), ..CnnArch::default() };
        assert!(build_cnn(2040, 2, &arch, 0).is_err());
        let ok = CnnArch { conv_features: (4, 16), ..CnnArch::default() };
        assert!(build_cnn(2040, 2, &ok, 0).is_ok());
    }

    #[test]
    fn ties_break_to_lowest_label() {
        // zero final dense layer -> equal logits -> uniform softmax
        let mut net = NetworkBuilder::new(8, 1)
            .unwrap()
            .dense(4)
            .unwrap()
            .softmax()
            .unwrap()
            .build();
        for w in net.layers_mut()[0].weights.iter_mut() {
            *w = 0.0;
        }
        let model = CnnModel::from_parts(net, 4, 8.0).unwrap();
        let scores = classify(&model, &Spectrum::new(vec![1.0; 8]).unwrap()).unwrap();
        assert_eq!(scores.label, 1);
        for p in &scores.probs {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        let net = build_cnn(64, 3, &CnnArch::default(), 5).unwrap();
        let model = CnnModel::from_parts(net, 3, 64.0).unwrap();
        let z = Spectrum::new((0..64).map(|i| (i % 7) as f64).collect()).unwrap();
        let scores = classify(&model, &z).unwrap();
        let sum: f64 = scores.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!((1..=3).contains(&scores.label));
    }

    #[test]
    fn trained_cnn_labels_held_out_draws() {
        let lib = synth_phase_spectra(2, 8, 96, &LibraryParams::default(), 21).unwrap();
        let cfg = quick_cfg(21);
        let model = train_cnn(&lib, &cfg).unwrap();
        let mut rng = seeded_rng(77);
        let mut wrong = 0;
        let trials = 500;
        for i in 0..trials {
            let label = 1 + (i % 2) as u8;
            let clean = &lib.phase(label)[4 + i % 4]; // validation half
            let z = noisy_draw(clean, &cfg.noise_model, &mut rng);
            if classify(&model, &z).unwrap().label != label {
                wrong += 1;
            }
        }
        assert!(wrong as f64 / trials as f64 <= 0.01, "{wrong}/{trials} wrong");
    }

    #[test]
    fn classifier_checkpoint_round_trips() {
        let net = build_cnn(96, 2, &CnnArch::default(), 3).unwrap();
        let model = CnnModel::from_parts(net, 2, 96.0).unwrap();
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        let loaded = CnnModel::read_from(&mut buf.as_slice()).unwrap();
        let z = Spectrum::new((0..96).map(|i| (i as f64 * 0.37).sin().abs() * 30.0).collect())
            .unwrap();
        let a = classify(&model, &z).unwrap();
        let b = classify(&loaded, &z).unwrap();
        assert_eq!(a.label, b.label);
        assert!(a.probs.iter().zip(&b.probs).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wrong_length_is_input_error() {
        let net = build_cnn(64, 2, &CnnArch::default(), 1).unwrap();
        let model = CnnModel::from_parts(net, 2, 64.0).unwrap();
        assert!(classify(&model, &Spectrum::new(vec![1.0; 32]).unwrap()).is_err());
    }
}
