//! `eds-slads`: synthesize spectroscopic phantoms, train the two-tier
//! classifier stack and the ERD regressor, and run dynamic-sampling
//! experiments from the command line.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use eds_slads::classifier::{classify_spectrum_detailed, CnnModel};
use eds_slads::config::ExperimentConfig;
use eds_slads::detector::NnrModel;
use eds_slads::error::{Error, Result};
use eds_slads::experiment::{
    self, build_training_corpus, run_experiment, train_stack, RunReport,
    SeedPlan,
};
use eds_slads::metrics::misclassification_rate;
use eds_slads::phantom::{LabelImage, PhaseLibrary, SimulatedObject};
use eds_slads::slads::fit_theta;

const OUT_ENV: &str = "EDS_SLADS_OUT";
const THREADS_ENV: &str = "EDS_SLADS_THREADS";

#[derive(Parser)]
#[command(name = "eds-slads", version, about = "Reduced-exposure dynamic sampling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config file's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (falls back to $EDS_SLADS_OUT, then ./eds-slads-out).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment config file (flat key = value); defaults apply if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

impl Common {
    fn load_config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_dir(&self) -> PathBuf {
        self.out
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("eds-slads-out"))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phase library and a simulated object ready to sample.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Also write PNG copies of emitted PGM images.
        #[arg(long)]
        png: bool,
    },
    /// Train the ill-spectrum detector and the phase classifier.
    TrainClassifier {
        #[command(flatten)]
        common: Common,
        /// Existing library file; synthesized from the config when omitted.
        #[arg(long)]
        library: Option<PathBuf>,
    },
    /// Sample an ERD training corpus and fit the regression coefficients.
    TrainSlads {
        #[command(flatten)]
        common: Common,
    },
    /// Full experiment: synth, train everything, sample, write artifacts.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write PNG copies of the four panels.
        #[arg(long)]
        png: bool,
    },
    /// Summarize a finished run directory.
    Report {
        #[command(flatten)]
        common: Common,
        /// Run directory (defaults to the output directory).
        #[arg(long)]
        run: Option<PathBuf>,
    },
    /// Apply saved detector + classifier to every pixel of a saved object.
    Classify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        detector: PathBuf,
        #[arg(long)]
        classifier: PathBuf,
        /// Object directory produced by `synth`.
        #[arg(long)]
        object: PathBuf,
        /// Also write a PNG copy of the label image.
        #[arg(long)]
        png: bool,
    },
}

fn check_threads_env() -> Result<()> {
    let Some(raw) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let text = raw.to_string_lossy();
    let threads: usize = text
        .parse()
        .map_err(|_| Error::config(format!("{THREADS_ENV} must be a positive integer, got {text:?}")))?;
    if threads == 0 {
        return Err(Error::config(format!("{THREADS_ENV} must be >= 1")));
    }
    if threads > 1 {
        eprintln!("note: {THREADS_ENV}={threads} requested; this build executes single-threaded");
    }
    Ok(())
}

fn png_copy(pgm: &Path) -> Result<()> {
    let img = image::open(pgm)
        .map_err(|e| Error::runtime(format!("cannot reread {}: {e}", pgm.display())))?;
    let out = pgm.with_extension("png");
    img.save(&out)
        .map_err(|e| Error::runtime(format!("cannot write {}: {e}", out.display())))?;
    Ok(())
}

fn png_copies(dir: &Path, names: &[&str]) -> Result<()> {
    for name in names {
        let path = dir.join(name);
        if path.exists() {
            png_copy(&path)?;
        }
    }
    Ok(())
}

fn cmd_synth(common: &Common, png: bool) -> Result<()> {
    let cfg = common.load_config()?;
    cfg.validate()?;
    let out = common.out_dir();
    std::fs::create_dir_all(&out).map_err(Error::Io)?;
    let plan = SeedPlan::new(cfg.seed);
    let library = eds_slads::phantom::synth_phase_spectra(
        cfg.num_phases,
        cfg.acquisitions_per_phase,
        cfg.bins,
        &experiment::library_params(&cfg),
        plan.library,
    )?;
    library.save(&out.join(experiment::LIBRARY_FILE))?;
    let truth =
        eds_slads::phantom::synth_label_image(cfg.n, cfg.num_phases, &cfg.morphology, plan.test_image)?;
    let object = eds_slads::phantom::build_simulated_object(
        truth,
        &library,
        cfg.ill_fraction,
        &cfg.noise_model,
        cfg.ill_lambda,
        plan.object,
    )?;
    let object_dir = out.join("object");
    object.save_dir(&object_dir)?;
    cfg.save(&out.join(experiment::CONFIG_ECHO_FILE))?;
    if png {
        png_copies(&object_dir, &["truth.pgm"])?;
    }
    println!(
        "library: {} phases x {} spectra x {} bins -> {}",
        library.num_phases(),
        cfg.acquisitions_per_phase,
        cfg.bins,
        out.join(experiment::LIBRARY_FILE).display()
    );
    println!(
        "object: {}x{} px, {} ill pixels -> {}",
        cfg.n,
        cfg.n,
        object.truth().labels().iter().filter(|&&l| l == 0).count(),
        object_dir.display()
    );
    Ok(())
}

fn cmd_train_classifier(common: &Common, library: &Option<PathBuf>) -> Result<()> {
    let cfg = common.load_config()?;
    cfg.validate()?;
    let out = common.out_dir();
    std::fs::create_dir_all(&out).map_err(Error::Io)?;
    let plan = SeedPlan::new(cfg.seed);
    let (library, detector, classifier) = match library {
        Some(path) => {
            let lib = PhaseLibrary::load(path)?;
            let det = eds_slads::detector::train_nnr(
                &lib,
                &experiment::detector_config(&cfg, plan.detector),
            )?;
            let cls = eds_slads::classifier::train_cnn(
                &lib,
                &experiment::classifier_config(&cfg, plan.classifier),
            )?;
            (lib, det, cls)
        }
        None => {
            let stack = train_stack(&cfg, &plan)?;
            stack.library.save(&out.join(experiment::LIBRARY_FILE))?;
            (stack.library, stack.detector, stack.classifier)
        }
    };
    detector.save(&out.join(experiment::DETECTOR_FILE))?;
    classifier.save(&out.join(experiment::CLASSIFIER_FILE))?;
    println!(
        "detector: threshold {:.3e}, {} bins -> {}",
        detector.threshold(),
        detector.bins(),
        out.join(experiment::DETECTOR_FILE).display()
    );
    println!(
        "classifier: {} phases, {} bins -> {}",
        classifier.num_phases(),
        library.bins(),
        out.join(experiment::CLASSIFIER_FILE).display()
    );
    Ok(())
}

fn cmd_train_slads(common: &Common) -> Result<()> {
    let cfg = common.load_config()?;
    cfg.validate()?;
    let out = common.out_dir();
    std::fs::create_dir_all(&out).map_err(Error::Io)?;
    let plan = SeedPlan::new(cfg.seed);
    let corpus = build_training_corpus(&cfg, &plan)?;
    corpus.save(&out.join("corpus.bin"))?;
    let model = fit_theta(&corpus, cfg.ridge)?;
    model.save(&out.join(experiment::ERD_FILE))?;
    println!(
        "corpus: {} pairs over {} phantoms -> {}",
        corpus.pairs.len(),
        corpus.image_seeds.len(),
        out.join("corpus.bin").display()
    );
    let coeffs: Vec<String> = model.theta().iter().map(|t| format!("{t:.4}")).collect();
    println!("theta: [{}] -> {}", coeffs.join(", "), out.join(experiment::ERD_FILE).display());
    Ok(())
}

fn cmd_run(common: &Common, png: bool) -> Result<()> {
    let cfg = common.load_config()?;
    let out = common.out_dir();
    let report = run_experiment(&cfg, &out)?;
    if png {
        png_copies(
            &out,
            &[
                experiment::TRUTH_PANEL,
                experiment::RECON_PANEL,
                experiment::MASK_PANEL,
                experiment::DISTORTION_PANEL,
            ],
        )?;
    }
    print_report(&report);
    println!("artifacts: {}", out.display());
    Ok(())
}

fn print_report(report: &RunReport) {
    println!(
        "run: {}x{} {} ({} phases, {} bins, seed {})",
        report.n, report.n, report.morphology, report.num_phases, report.bins, report.seed
    );
    println!(
        "coverage: {:.2}% ({} measurements, {} ill pixels in truth)",
        report.coverage * 100.0,
        report.measurements,
        report.ill_pixels_true
    );
    println!(
        "TD: {:.6}  (random baseline {:.6}, ratio {:.3})",
        report.final_td,
        report.baseline_td,
        report.final_td / report.baseline_td.max(f64::MIN_POSITIVE)
    );
    println!("measured-pixel misclassification: {:.6}", report.misclassification_rate);
    for (stage, secs) in &report.stage_seconds {
        println!("  {stage}: {secs:.3}s");
    }
}

fn cmd_report(common: &Common, run: &Option<PathBuf>) -> Result<()> {
    let dir = run.clone().unwrap_or_else(|| common.out_dir());
    let report = RunReport::load(&dir.join(experiment::REPORT_FILE))?;
    print_report(&report);
    let trace = dir.join(experiment::TRACE_FILE);
    if trace.exists() {
        println!("trace: {} rows at {}", report.trace_rows, trace.display());
    }
    Ok(())
}

fn cmd_classify(
    common: &Common,
    detector: &Path,
    classifier: &Path,
    object_dir: &Path,
    png: bool,
) -> Result<()> {
    let out = common.out_dir();
    std::fs::create_dir_all(&out).map_err(Error::Io)?;
    let detector = NnrModel::load(detector)?;
    let classifier = CnnModel::load(classifier)?;
    let object = SimulatedObject::load_dir(object_dir)?;
    let n = object.n();
    let mut labels = vec![0u8; n * n];
    let mut ill = 0usize;
    for y in 0..n {
        for x in 0..n {
            let (label, _) =
                classify_spectrum_detailed(&detector, &classifier, object.spectrum_at(x, y))?;
            labels[y * n + x] = label;
            if label == 0 {
                ill += 1;
            }
        }
    }
    let image = LabelImage::new(n, classifier.num_phases(), labels.clone())?;
    image.save_pgm(&out.join("labels.pgm"))?;
    if png {
        png_copies(&out, &["labels.pgm"])?;
    }
    let rate = misclassification_rate(&labels, object.truth().labels())?;
    let summary = serde_json::json!({
        "n": n,
        "pixels": n * n,
        "ill_flagged": ill,
        "misclassification_rate": rate,
    });
    std::fs::write(
        out.join("classification.json"),
        serde_json::to_string_pretty(&summary).map_err(|e| Error::runtime(e.to_string()))?,
    )
    .map_err(Error::Io)?;
    println!("labels: {}", out.join("labels.pgm").display());
    println!("misclassification vs truth: {rate:.6} ({ill} pixels flagged ill)");
    Ok(())
}

fn real_main() -> Result<()> {
    check_threads_env()?;
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { common, png } => cmd_synth(common, *png),
        Command::TrainClassifier { common, library } => cmd_train_classifier(common, library),
        Command::TrainSlads { common } => cmd_train_slads(common),
        Command::Run { common, png } => cmd_run(common, *png),
        Command::Report { common, run } => cmd_report(common, run),
        Command::Classify { common, detector, classifier, object, png } => {
            cmd_classify(common, detector, classifier, object, *png)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
