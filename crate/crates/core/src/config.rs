//! Experiment configuration: a flat `key = value` text format holding every
//! tunable of the pipeline with defaults matching the reference setup.
//! Unknown or duplicate keys are errors so typos cannot silently fall back
//! to defaults.

use std::path::Path;

use crate::error::{Error, Result};
use crate::phantom::{Morphology, NoiseModel};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub config_version: u32,
    /// Image side length.
    pub n: usize,
    pub num_phases: u8,
    /// Spectrum length in energy bins.
    pub bins: usize,
    /// Reference acquisitions per phase in the library (M).
    pub acquisitions_per_phase: usize,
    pub morphology: Morphology,
    pub peaks_per_phase: usize,
    pub noise_model: NoiseModel,
    /// Fraction of pixels replaced by unclassifiable (ill) spectra.
    pub ill_fraction: f64,
    pub ill_lambda: f64,
    pub initial_fraction: f64,
    pub stop_fraction: f64,
    pub k_neighbors: usize,
    /// Phantoms used to fit the ERD regressor.
    pub train_images: usize,
    pub pairs_per_level: usize,
    pub coverage_levels: Vec<f64>,
    pub ridge: f64,
    pub det_draws: usize,
    pub det_epochs: usize,
    pub det_learning_rate: f64,
    pub cls_draws: usize,
    pub cls_epochs: usize,
    pub cls_learning_rate: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            config_version: CONFIG_VERSION,
            n: 128,
            num_phases: 2,
            bins: 2040,
            acquisitions_per_phase: 24,
            morphology: Morphology::HalfPlane,
            peaks_per_phase: 4,
            noise_model: NoiseModel::default(),
            ill_fraction: 0.01,
            ill_lambda: 20.0,
            initial_fraction: 0.01,
            stop_fraction: 0.15,
            k_neighbors: 10,
            train_images: 2,
            pairs_per_level: 200,
            coverage_levels: vec![0.05, 0.10, 0.20, 0.40, 0.80],
            ridge: 1e-6,
            det_draws: 24,
            det_epochs: 60,
            det_learning_rate: 0.002,
            cls_draws: 24,
            cls_epochs: 30,
            cls_learning_rate: 0.01,
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value for {key}: {value:?}")))
}

impl ExperimentConfig {
    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        // morphology/noise sub-parameters arrive in arbitrary order, so
        // collect raw pairs first and assemble the enums afterwards
        let mut morphology = String::from("half-plane");
        let mut stripe_width = 16.0f64;
        let mut angle_deg = 30.0f64;
        let mut wobble = 0.0f64;
        let mut sites_per_phase = 3usize;
        let mut noise_model = String::from("scaled");
        let mut lambda_scale = 2.0f64;
        let mut noise_lambda = 5.0f64;

        let mut seen: Vec<String> = Vec::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected `key = value`, got {raw:?}",
                    line_no + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::config(format!("duplicate key {key}")));
            }
            seen.push(key.to_string());
            match key {
                "config_version" => cfg.config_version = parse(key, value)?,
                "n" => cfg.n = parse(key, value)?,
                "num_phases" => cfg.num_phases = parse(key, value)?,
                "bins" => cfg.bins = parse(key, value)?,
                "acquisitions_per_phase" => cfg.acquisitions_per_phase = parse(key, value)?,
                "morphology" => morphology = value.to_string(),
                "stripe_width" => stripe_width = parse(key, value)?,
                "angle_deg" => angle_deg = parse(key, value)?,
                "wobble" => wobble = parse(key, value)?,
                "sites_per_phase" => sites_per_phase = parse(key, value)?,
                "peaks_per_phase" => cfg.peaks_per_phase = parse(key, value)?,
                "noise_model" => noise_model = value.to_string(),
                "lambda_scale" => lambda_scale = parse(key, value)?,
                "noise_lambda" => noise_lambda = parse(key, value)?,
                "ill_fraction" => cfg.ill_fraction = parse(key, value)?,
                "ill_lambda" => cfg.ill_lambda = parse(key, value)?,
                "initial_fraction" => cfg.initial_fraction = parse(key, value)?,
                "stop_fraction" => cfg.stop_fraction = parse(key, value)?,
                "k_neighbors" => cfg.k_neighbors = parse(key, value)?,
                "train_images" => cfg.train_images = parse(key, value)?,
                "pairs_per_level" => cfg.pairs_per_level = parse(key, value)?,
                "coverage_levels" => {
                    let mut levels = Vec::new();
                    for part in value.split(',') {
                        levels.push(parse::<f64>(key, part.trim())?);
                    }
                    cfg.coverage_levels = levels;
                }
                "ridge" => cfg.ridge = parse(key, value)?,
                "det_draws" => cfg.det_draws = parse(key, value)?,
                "det_epochs" => cfg.det_epochs = parse(key, value)?,
                "det_learning_rate" => cfg.det_learning_rate = parse(key, value)?,
                "cls_draws" => cfg.cls_draws = parse(key, value)?,
                "cls_epochs" => cfg.cls_epochs = parse(key, value)?,
                "cls_learning_rate" => cfg.cls_learning_rate = parse(key, value)?,
                "seed" => cfg.seed = parse(key, value)?,
                other => return Err(Error::config(format!("unknown config key {other:?}"))),
            }
        }
        if cfg.config_version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "config_version {} not supported (expected {CONFIG_VERSION})",
                cfg.config_version
            )));
        }
        cfg.morphology = match morphology.as_str() {
            "half-plane" => Morphology::HalfPlane,
            "lamellae" => Morphology::Lamellae { stripe_width, angle_deg, wobble },
            "blobs" => Morphology::Blobs { sites_per_phase },
            other => {
                return Err(Error::config(format!(
                    "unknown morphology {other:?} (half-plane, lamellae, blobs)"
                )))
            }
        };
        cfg.noise_model = match noise_model.as_str() {
            "scaled" => NoiseModel::Scaled { lambda_scale },
            "offset" => NoiseModel::Offset { lambda: noise_lambda },
            other => {
                return Err(Error::config(format!("unknown noise_model {other:?} (scaled, offset)")))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_str_contents(&text)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("config_version", self.config_version.to_string());
        push("n", self.n.to_string());
        push("num_phases", self.num_phases.to_string());
        push("bins", self.bins.to_string());
        push("acquisitions_per_phase", self.acquisitions_per_phase.to_string());
        match &self.morphology {
            Morphology::HalfPlane => push("morphology", "half-plane".into()),
            Morphology::Lamellae { stripe_width, angle_deg, wobble } => {
                push("morphology", "lamellae".into());
                push("stripe_width", stripe_width.to_string());
                push("angle_deg", angle_deg.to_string());
                push("wobble", wobble.to_string());
            }
            Morphology::Blobs { sites_per_phase } => {
                push("morphology", "blobs".into());
                push("sites_per_phase", sites_per_phase.to_string());
            }
        }
        push("peaks_per_phase", self.peaks_per_phase.to_string());
        match &self.noise_model {
            NoiseModel::Scaled { lambda_scale } => {
                push("noise_model", "scaled".into());
                push("lambda_scale", lambda_scale.to_string());
            }
            NoiseModel::Offset { lambda } => {
                push("noise_model", "offset".into());
                push("noise_lambda", lambda.to_string());
            }
        }
        push("ill_fraction", self.ill_fraction.to_string());
        push("ill_lambda", self.ill_lambda.to_string());
        push("initial_fraction", self.initial_fraction.to_string());
        push("stop_fraction", self.stop_fraction.to_string());
        push("k_neighbors", self.k_neighbors.to_string());
        push("train_images", self.train_images.to_string());
        push("pairs_per_level", self.pairs_per_level.to_string());
        push(
            "coverage_levels",
            self.coverage_levels.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        );
        push("ridge", self.ridge.to_string());
        push("det_draws", self.det_draws.to_string());
        push("det_epochs", self.det_epochs.to_string());
        push("det_learning_rate", self.det_learning_rate.to_string());
        push("cls_draws", self.cls_draws.to_string());
        push("cls_epochs", self.cls_epochs.to_string());
        push("cls_learning_rate", self.cls_learning_rate.to_string());
        push("seed", self.seed.to_string());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_config_string()).map_err(Error::Io)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 8 {
            return Err(Error::config("n must be >= 8"));
        }
        if self.num_phases < 2 {
            return Err(Error::config("num_phases must be >= 2"));
        }
        if self.bins < 32 {
            return Err(Error::config("bins must be >= 32"));
        }
        if self.acquisitions_per_phase < 2 {
            return Err(Error::config("acquisitions_per_phase must be >= 2"));
        }
        if !(0.0..1.0).contains(&self.ill_fraction) {
            return Err(Error::config("ill_fraction must be in [0, 1)"));
        }
        if !(self.initial_fraction > 0.0 && self.initial_fraction <= self.stop_fraction) {
            return Err(Error::config("need 0 < initial_fraction <= stop_fraction"));
        }
        if self.stop_fraction > 1.0 {
            return Err(Error::config("stop_fraction must be <= 1"));
        }
        if self.train_images == 0 {
            return Err(Error::config("train_images must be >= 1"));
        }
        self.noise_model.validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_config_string();
        let back = ExperimentConfig::from_str_contents(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn empty_text_yields_defaults() {
        let cfg = ExperimentConfig::from_str_contents("").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
    }

    #[test]
    fn comments_and_spacing_are_tolerated() {
        let cfg = ExperimentConfig::from_str_contents(
            "# experiment\n  n   =  64  # small\n\nseed=9\n",
        )
        .unwrap();
        assert_eq!(cfg.n, 64);
        assert_eq!(cfg.seed, 9);
    }

    #[test]
    fn unknown_key_is_an_error() {
        let err = ExperimentConfig::from_str_contents("stop_fractoin = 0.2\n").unwrap_err();
        assert!(err.to_string().contains("stop_fractoin"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = ExperimentConfig::from_str_contents("n = 64\nn = 32\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let err = ExperimentConfig::from_str_contents("config_version = 2\n").unwrap_err();
        assert!(err.to_string().contains("config_version"), "{err}");
    }

    #[test]
    fn morphology_and_noise_variants_parse() {
        let cfg = ExperimentConfig::from_str_contents(
            "morphology = lamellae\nstripe_width = 24\nangle_deg = 15\nwobble = 1.5\n\
             noise_model = offset\nnoise_lambda = 3\n",
        )
        .unwrap();
        assert_eq!(
            cfg.morphology,
            Morphology::Lamellae { stripe_width: 24.0, angle_deg: 15.0, wobble: 1.5 }
        );
        assert_eq!(cfg.noise_model, NoiseModel::Offset { lambda: 3.0 });
        let back = ExperimentConfig::from_str_contents(&cfg.to_config_string()).unwrap();
        assert_eq!(back, cfg);

        assert!(ExperimentConfig::from_str_contents("morphology = swirl\n").is_err());
        assert!(ExperimentConfig::from_str_contents("noise_model = cauchy\n").is_err());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "n = four\n",
            "n = 4\n",
            "ill_fraction = 1.0\n",
            "initial_fraction = 0.3\nstop_fraction = 0.2\n",
            "stop_fraction = 1.5\n",
            "num_phases = 1\n",
        ] {
            let err = ExperimentConfig::from_str_contents(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text:?} -> {err}");
        }
    }
}
