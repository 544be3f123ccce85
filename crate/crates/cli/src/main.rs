use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use gciforge::config::{PipelineConfig, Precision};
use gciforge::pipeline::{
    annotate_step, detect_step, eval_step, synth_step, train_step, Detector, ModelId, Reference, Subset,
};
use gciforge::synth::PresetMix;
use gciforge::Error;

const SEED_ENV: &str = "GCIFORGE_SEED";

/// GCI detection for pathological speech.
///
/// Settings come from built-in defaults, then the optional --config TOML
/// file, then command-line flags. The root seed falls back to the
/// GCIFORGE_SEED environment variable when neither the file nor --seed sets
/// it.
#[derive(Parser, Debug)]
#[command(name = "gciforge", version)]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads for per-recording work.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus (2-channel WAVs, truth marks, manifest).
    Synth(SynthArgs),
    /// Derive reference GCI marks from the EGG channel.
    Annotate(CorpusArgs),
    /// Train Models 1-4 and the joint model.
    Train(TrainArgs),
    /// Write GCI mark files for one detector.
    Detect(DetectArgs),
    /// Score detections against reference marks.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output corpus directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of recordings.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated labels cycled over recordings (N,P,L,T,C,PV,healthy).
    #[arg(long)]
    mix: Option<PresetMix>,
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Corpus directory holding manifest.tsv.
    #[arg(long)]
    corpus: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Checkpoint directory.
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Train only these models (model1..model4, joint).
    #[arg(long, value_delimiter = ',')]
    only: Vec<ModelId>,
    /// Maximum epochs per model.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct DetectArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long)]
    checkpoints: Option<PathBuf>,
    /// Detection output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// proposed, zff, model1..model4 or joint.
    #[arg(long, default_value = "proposed")]
    detector: Detector,
    /// Every recording instead of the held-out test split.
    #[arg(long)]
    all: bool,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Detection directory.
    #[arg(long)]
    detections: Option<PathBuf>,
    /// Report directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Detectors to score; defaults to every detector with detections on disk.
    #[arg(long, value_delimiter = ',')]
    detectors: Vec<Detector>,
    /// Add one row per disorder label.
    #[arg(long)]
    per_disorder: bool,
    /// annotation (EGG-derived) or truth (manifest marks).
    #[arg(long, default_value = "annotation")]
    reference: Reference,
    #[arg(long)]
    all: bool,
}

fn parse_precision(s: &str) -> Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("unknown precision '{other}' (f32, f64)")),
    }
}

/// Command-line failure split into usage problems (exit 2) and
/// everything else (exit 1).
enum Failure {
    Usage(String),
    Operational(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            other => Failure::Operational(other),
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, Failure> {
    let (mut cfg, seed_in_file) = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            let seed_in_file = text.parse::<toml::Table>().map(|t| t.contains_key("seed")).unwrap_or(false);
            (PipelineConfig::from_toml_str(&text, p)?, seed_in_file)
        }
        None => (PipelineConfig::default(), false),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    } else if !seed_in_file {
        if let Ok(v) = std::env::var(SEED_ENV) {
            cfg.seed = v
                .trim()
                .parse()
                .map_err(|_| Failure::Usage(format!("{SEED_ENV}='{v}' is not an unsigned integer")))?;
        }
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j.max(1);
    }
    Ok(cfg)
}

fn set_corpus(cfg: &mut PipelineConfig, a: &CorpusArgs) {
    if let Some(c) = &a.corpus {
        cfg.paths.corpus_dir = c.clone();
    }
}

fn existing_detectors(cfg: &PipelineConfig) -> Vec<Detector> {
    let mut all = vec![Detector::Proposed, Detector::Zff];
    all.extend(ModelId::ALL.into_iter().map(Detector::Model));
    all.into_iter().filter(|d| cfg.paths.detection_dir.join(d.name()).is_dir()).collect()
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut cfg = load_config(&cli)?;
    let started = Instant::now();
    match cli.command {
        Command::Synth(a) => {
            cfg.paths.corpus_dir = a.out;
            if let Some(n) = a.n {
                cfg.synth.n_recordings = n;
            }
            if let Some(m) = a.mix {
                cfg.synth.mix = m.to_string();
            }
            let m = synth_step(&cfg)?;
            println!("wrote {} recordings to {}", m.entries.len(), cfg.paths.corpus_dir.display());
        }
        Command::Annotate(a) => {
            set_corpus(&mut cfg, &a);
            let rows = annotate_step(&cfg)?;
            let unsure = rows.iter().filter(|r| !r.confident).count();
            println!("annotated {} recordings ({} with low-confidence delay)", rows.len(), unsure);
        }
        Command::Train(a) => {
            set_corpus(&mut cfg, &a.corpus);
            if let Some(c) = a.checkpoints {
                cfg.paths.checkpoint_dir = c;
            }
            if let Some(e) = a.epochs {
                cfg.train.max_epochs = e;
            }
            if let Some(p) = a.precision {
                cfg.precision = p;
            }
            cfg.validate()?;
            for r in train_step(&cfg, &a.only)? {
                println!(
                    "{}: {} epochs, best epoch {} (val BCE {:.5})",
                    r.model, r.epochs, r.best_epoch, r.best_val_bce
                );
            }
        }
        Command::Detect(a) => {
            set_corpus(&mut cfg, &a.corpus);
            if let Some(c) = a.checkpoints {
                cfg.paths.checkpoint_dir = c;
            }
            if let Some(o) = a.out {
                cfg.paths.detection_dir = o;
            }
            if let Some(p) = a.precision {
                cfg.precision = p;
            }
            let subset = if a.all { Subset::All } else { Subset::Test };
            let out = detect_step(&cfg, a.detector, subset)?;
            let n: usize = out.iter().map(|(_, m)| m.len()).sum();
            println!("{}: {} marks over {} recordings", a.detector, n, out.len());
        }
        Command::Eval(a) => {
            set_corpus(&mut cfg, &a.corpus);
            if let Some(d) = a.detections {
                cfg.paths.detection_dir = d;
            }
            if let Some(o) = a.out {
                cfg.paths.report_dir = o;
            }
            let detectors = if a.detectors.is_empty() { existing_detectors(&cfg) } else { a.detectors };
            if detectors.is_empty() {
                return Err(Failure::Operational(Error::InvalidArgument(format!(
                    "no detections under {} (run detect first)",
                    cfg.paths.detection_dir.display()
                ))));
            }
            let subset = if a.all { Subset::All } else { Subset::Test };
            let out = eval_step(&cfg, &detectors, subset, a.reference, a.per_disorder)?;
            print!("{}", out.table);
        }
    }
    eprintln!("done in {:.1} s", started.elapsed().as_secs_f64());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Operational(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
