use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use segcut::boundary::{read_segments, write_segments};
use segcut::oracle::{macro_accuracy, OracleModel, TrainConfig, DEFAULT_DROPOUT, DEFAULT_HIDDEN};
use segcut::pipeline::{
    ablate, ablation_table, default_grid, evaluate_corpus, run_corpus, train_oracle, training_sets,
    Corpus, PipelineConfig, Variant,
};
use segcut::spectral::ThresholdMode;
use segcut::synth::{gen_corpus, write_corpus, Split, SynthConfig};

/// Exit status when some clips failed but the rest were processed.
const EXIT_PARTIAL: u8 = 1;
/// Exit status for invalid input or configuration.
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "segcut", version, about = "Weakly supervised dysfluency segmentation")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus with ground-truth segments.
    Synth(SynthArgs),
    /// Train the window classifier on the corpus train/val splits.
    TrainOracle(TrainArgs),
    /// Segment every clip of a corpus into dysfluent regions.
    Segment(SegmentArgs),
    /// Score a segment file against corpus ground truth.
    Evaluate(EvaluateArgs),
    /// Compare all variants and threshold modes on one corpus.
    Ablate(AblateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    clips: usize,
    #[arg(long, default_value_t = 6.0)]
    duration_s: f64,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Number of dysfluency classes (1 to 4).
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// Fluent-to-class mean distance in noise standard deviations.
    #[arg(long, default_value_t = 6.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    noise_sigma: f64,
    #[arg(long, default_value_t = 0.3)]
    dysfluency_rate: f64,
    #[arg(long, default_value_t = 10)]
    speakers: usize,
    /// Probability of toggling one weak label on a train/val clip.
    #[arg(long, default_value_t = 0.0)]
    label_noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint to write; the epoch log goes next to it as `.log.tsv`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1e-4)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 2.0)]
    focal_gamma: f64,
    #[arg(long, default_value_t = 2)]
    lr_halving_patience_epochs: usize,
    #[arg(long, default_value_t = DEFAULT_HIDDEN)]
    hidden: usize,
    #[arg(long, default_value_t = DEFAULT_DROPOUT)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Pipeline settings. A config file is applied first, then these flags.
#[derive(Args)]
struct PipelineArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long)]
    window_length_s: Option<String>,
    #[arg(long)]
    window_stride_s: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    floor: Option<String>,
    #[arg(long)]
    eta_s: Option<String>,
    /// merge_then_filter or filter_then_merge
    #[arg(long)]
    boundary_order: Option<String>,
    /// sign or mean
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    mc_passes: Option<String>,
    /// full, prob_mask, no_mask, pure_ncut, kmeans or fuzzy_cmeans
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    fuzzifier: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Split to process: train, val, eval or all.
    #[arg(long, default_value = "eval")]
    split: String,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<(PipelineConfig, OracleModel, Option<Split>)> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::from_file(p)?,
            None => PipelineConfig::default(),
        };
        let overrides = [
            ("checkpoint", &self.checkpoint),
            ("window_length_s", &self.window_length_s),
            ("window_stride_s", &self.window_stride_s),
            ("tau", &self.tau),
            ("floor", &self.floor),
            ("eta_s", &self.eta_s),
            ("boundary_order", &self.boundary_order),
            ("threshold", &self.threshold),
            ("mc_passes", &self.mc_passes),
            ("variant", &self.variant),
            ("fuzzifier", &self.fuzzifier),
            ("seed", &self.seed),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        // Every variant needs the classifier, at least to pick the dysfluent side.
        let Some(ckpt) = cfg.checkpoint.clone() else {
            bail!("an oracle checkpoint is required (--checkpoint or `checkpoint =` in the config)");
        };
        let model = OracleModel::load(&ckpt)
            .with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
        Ok((cfg, model, parse_split(&self.split)?))
    }
}

fn parse_split(s: &str) -> Result<Option<Split>> {
    Ok(if s == "all" { None } else { Some(s.parse()?) })
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Segment CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Directory for per-clip intermediate matrices (JSON).
    #[arg(long)]
    audit: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Segment CSV produced by `segment`.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// JSON report to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "eval")]
    split: String,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Directory for `ablation.txt` and `ablation.json`.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated variants; default is every variant.
    #[arg(long, value_delimiter = ',')]
    variants: Vec<String>,
    /// Comma-separated threshold modes for spectral variants.
    #[arg(long, value_delimiter = ',', default_value = "sign,mean")]
    thresholds: Vec<String>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

fn synth(a: &SynthArgs) -> Result<u8> {
    let cfg = SynthConfig {
        clip_count: a.clips,
        clip_duration_s: a.duration_s,
        embedding_dim: a.dim,
        class_count: a.classes,
        cluster_separation: a.separation,
        noise_sigma: a.noise_sigma,
        dysfluency_rate: a.dysfluency_rate,
        speakers: a.speakers,
        label_noise: a.label_noise,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let clips = gen_corpus(&cfg)?;
    write_corpus(&a.out, &clips, &cfg.class_names())?;
    println!("wrote {} clips to {}", clips.len(), a.out.display());
    Ok(0)
}

fn train_cmd(a: &TrainArgs) -> Result<u8> {
    let corpus = Corpus::open(&a.corpus)?;
    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        focal_gamma: a.focal_gamma,
        seed: a.seed,
        lr_halving_patience_epochs: a.lr_halving_patience_epochs,
    };
    let (model, log) = train_oracle(&corpus, &cfg, a.hidden, a.dropout)?;
    model.save(&a.out)?;

    let log_path = a.out.with_extension("log.tsv");
    let mut f = fs::File::create(&log_path)?;
    writeln!(f, "epoch\ttrain_loss\tval_loss\tlearning_rate")?;
    for e in &log {
        let val = e.val_loss.map_or(String::new(), |v| format!("{v:.6}"));
        writeln!(f, "{}\t{:.6}\t{val}\t{:e}", e.epoch, e.train_loss, e.learning_rate)?;
        println!(
            "epoch {:>3}  train {:.6}  val {}  lr {:e}",
            e.epoch,
            e.train_loss,
            if val.is_empty() { "n/a" } else { &val },
            e.learning_rate
        );
    }
    let (_, val) = training_sets(&corpus)?;
    if !val.is_empty() {
        println!("validation macro accuracy {:.4}", macro_accuracy(&model, &val)?);
    }
    println!("wrote {} and {}", a.out.display(), log_path.display());
    Ok(0)
}

fn segment_cmd(a: &SegmentArgs) -> Result<u8> {
    let (cfg, model, split) = a.pipeline.resolve()?;
    let corpus = Corpus::open(&a.corpus)?;
    let run = run_corpus(&corpus, split, &model, &cfg, a.audit.is_some())?;
    write_segments(&a.out, &run.records)?;
    if let Some(dir) = &a.audit {
        fs::create_dir_all(dir)?;
        for audit in &run.audits {
            let path = dir.join(format!("{}.audit.json", audit.clip_id));
            fs::write(&path, serde_json::to_string(audit)?)?;
        }
    }
    info!("{} segments written to {}", run.records.len(), a.out.display());
    for (clip, err) in &run.failures {
        warn!("clip {clip} skipped: {err}");
    }
    if run.failures.is_empty() {
        Ok(0)
    } else {
        eprintln!("{} clip(s) failed; see log", run.failures.len());
        Ok(EXIT_PARTIAL)
    }
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<u8> {
    let corpus = Corpus::open(&a.corpus)?;
    let records = read_segments(&a.pred)?;
    let report = evaluate_corpus(&corpus, parse_split(&a.split)?, &records)?;
    report.write_json(&a.out)?;
    let name = a
        .pred
        .file_stem()
        .map_or_else(|| "prediction".into(), |s| s.to_string_lossy().into_owned());
    print!(
        "{}",
        segcut::metrics::render_table(&[(name, &report)], corpus.dysfluency_classes())
    );
    for note in &report.notes {
        println!("note: {note}");
    }
    Ok(0)
}

fn ablate_cmd(a: &AblateArgs) -> Result<u8> {
    let (cfg, model, split) = a.pipeline.resolve()?;
    let corpus = Corpus::open(&a.corpus)?;
    let variants: Vec<Variant> = if a.variants.is_empty() {
        Variant::ALL.to_vec()
    } else {
        a.variants.iter().map(|v| v.parse()).collect::<segcut::Result<_>>()?
    };
    let modes: Vec<ThresholdMode> =
        a.thresholds.iter().map(|t| t.parse()).collect::<segcut::Result<_>>()?;
    let grid: Vec<_> = default_grid()
        .into_iter()
        .filter(|(v, t)| variants.contains(v) && t.is_none_or(|t| modes.contains(&t)))
        .collect();
    let rows = ablate(&corpus, split, &model, &cfg, &grid)?;
    let table = ablation_table(&rows, corpus.dysfluency_classes());
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("ablation.txt"), &table)?;
    fs::write(
        a.out.join("ablation.json"),
        serde_json::to_string_pretty(&rows)? + "\n",
    )?;
    print!("{table}");
    Ok(if rows.iter().any(|r| r.failed_clips > 0) {
        EXIT_PARTIAL
    } else {
        0
    })
}

fn run(cli: &Cli) -> Result<u8> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::TrainOracle(a) => train_cmd(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
