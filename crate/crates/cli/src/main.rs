//! `proxlink`: generate data, train, rank, evaluate, and export traces.
//!
//! Every subcommand reads one TOML config and explicit input/output paths.
//! Failures print a single `error: <category>: <message>` line to stderr and
//! exit with status 1 (2 for usage errors).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use proxlink::datakit::{self, build_vocabulary, generate_synthetic, make_nil_split, pick_holdout_types, render_mention};
use proxlink::evalkit::{self, evaluate, evaluate_with_nil, rank_all, tune_nil_threshold};
use proxlink::sampling::build_index;
use proxlink::trainer::{self, sample_variance};
use proxlink::{
    checkpoint, DatasetSplit, GradNormTrace, MentionRecord, NilThreshold, RenderStyle, SynthConfig, TokenSequence,
    TrainConfig, TrainingSet, Vocabulary,
};

const MODEL_FILE: &str = "model.bin";
const VOCAB_FILE: &str = "vocab.txt";
const TRACE_FILE: &str = "trace.tsv";
const CONFIG_FILE: &str = "train_config.toml";
const METRICS_FILE: &str = "metrics.tsv";
const PR_CURVE_FILE: &str = "pr_curve.tsv";

/// Harness config shared by all subcommands; each reads the parts it needs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct HarnessConfig {
    render_style: RenderStyle,
    /// Cut-offs reported by `eval` and `nil-eval`.
    ks: Vec<usize>,
    /// Number of ranked entities kept per mention.
    rank_depth: usize,
    /// When positive, `gen-synth` holds out this share of entity types as NIL.
    nil_holdout_fraction: f64,
    nil_holdout_seed: u64,
    synth: SynthConfig,
    train: TrainConfig,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            render_style: RenderStyle::Zeshel,
            ks: vec![1, 64],
            rank_depth: 64,
            nil_holdout_fraction: 0.0,
            nil_holdout_seed: 0,
            synth: SynthConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl HarnessConfig {
    fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(proxlink::Error::from)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| proxlink::Error::Config(e.message().to_string()))?;
        cfg.synth.validate()?;
        cfg.train.validate()?;
        if cfg.ks.is_empty() || cfg.ks.contains(&0) {
            return Err(proxlink::Error::Config("ks must be non-empty and positive".into()).into());
        }
        if cfg.rank_depth == 0 {
            return Err(proxlink::Error::Config("rank_depth must be at least 1".into()).into());
        }
        if !(0.0..1.0).contains(&cfg.nil_holdout_fraction) {
            return Err(proxlink::Error::Config(format!(
                "nil_holdout_fraction must be in [0, 1), got {}",
                cfg.nil_holdout_fraction
            ))
            .into());
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    fn of(self, d: &DatasetSplit) -> &[MentionRecord] {
        match self {
            Split::Train => &d.train,
            Split::Validation => &d.validation,
            Split::Test => &d.test,
        }
    }
}

#[derive(Parser)]
#[command(name = "proxlink", version, about = "Bi-encoder entity retrieval with proxy-based and cross-entropy training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (optionally with NIL-held-out types).
    GenSynth {
        #[arg(long)]
        config: PathBuf,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a bi-encoder; writes per-epoch checkpoints, the final model, vocabulary and trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank the whole KB for every mention of a split.
    Rank {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Predictions file (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Recall@k over in-KB mentions.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        predictions: PathBuf,
        /// Output directory for metrics.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick the NIL threshold maximising NIL F1.
    NilTune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "validation")]
        split: Split,
        #[arg(long)]
        predictions: PathBuf,
        /// Threshold file.
        #[arg(long)]
        out: PathBuf,
    },
    /// All-classes recall@k with a NIL threshold, NIL precision/recall and PR curve.
    NilEval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        threshold: PathBuf,
        /// Output directory for metrics.tsv and pr_curve.tsv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-smooth a gradient-norm trace with the configured EMA factor.
    TraceExport {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let summary: Vec<&str> = text
                .lines()
                .take_while(|l| !l.starts_with("Usage:"))
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .collect();
            eprintln!("error: usage: {}", summary.join(" ").trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {}", category(&e), one_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn category(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<proxlink::Error>())
        .map(proxlink::Error::category)
        .unwrap_or("internal")
}

fn one_line(e: &anyhow::Error) -> String {
    e.chain().map(ToString::to_string).collect::<Vec<_>>().join(": ").replace('\n', " ")
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenSynth { config, out } => gen_synth(&HarnessConfig::load(&config)?, &out),
        Command::Train { config, data, out } => train(&HarnessConfig::load(&config)?, &data, &out),
        Command::Rank { config, data, split, checkpoint, vocab, out } => {
            rank(&HarnessConfig::load(&config)?, &data, split, &checkpoint, &vocab, &out)
        }
        Command::Eval { config, data, split, predictions, out } => {
            let cfg = HarnessConfig::load(&config)?;
            let d = load_data(&data)?;
            let preds = read_predictions(&predictions)?;
            let report = evaluate(&preds, split.of(&d), &cfg.ks)?;
            create_dir(&out)?;
            report.write_metrics(&out.join(METRICS_FILE))?;
            print!("{}", report.metrics_tsv());
            Ok(())
        }
        Command::NilTune { config, data, split, predictions, out } => {
            HarnessConfig::load(&config)?;
            let d = load_data(&data)?;
            let (scores, is_nil) = top1_and_labels(&read_predictions(&predictions)?, split.of(&d))?;
            let tau = tune_nil_threshold(&scores, &is_nil, &format!("{split:?}").to_lowercase())?;
            tau.write(&out).with_context(|| format!("writing {}", out.display()))?;
            println!("tau\t{}\nf1_at_tau\t{}", tau.tau, tau.f1_at_tau);
            Ok(())
        }
        Command::NilEval { config, data, split, predictions, threshold, out } => {
            let cfg = HarnessConfig::load(&config)?;
            let d = load_data(&data)?;
            let preds = read_predictions(&predictions)?;
            let tau = NilThreshold::read(&threshold)?;
            let report = evaluate_with_nil(&preds, split.of(&d), tau.tau, &cfg.ks)?;
            create_dir(&out)?;
            report.write_metrics(&out.join(METRICS_FILE))?;
            report.write_pr_curve(&out.join(PR_CURVE_FILE))?;
            print!("{}", report.metrics_tsv());
            Ok(())
        }
        Command::TraceExport { config, trace, out } => {
            let cfg = HarnessConfig::load(&config)?;
            let t = GradNormTrace::read_tsv(&trace, cfg.train.trace_smoothing)?;
            let mut resmoothed = GradNormTrace::new(cfg.train.trace_smoothing)?;
            for r in t.rows() {
                resmoothed.record(r.lr, r.raw_grad_norm, r.loss);
            }
            resmoothed.write_tsv(&out)?;
            println!("steps\t{}", resmoothed.len());
            println!("smoothed_variance\t{}", sample_variance(&resmoothed.smoothed()));
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(proxlink::Error::from).with_context(|| format!("creating {}", dir.display()))
}

fn load_data(dir: &Path) -> Result<DatasetSplit> {
    datakit::load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn read_predictions(path: &Path) -> Result<Vec<evalkit::RankedPrediction>> {
    evalkit::read_predictions(path).with_context(|| format!("reading predictions {}", path.display()))
}

fn top1_and_labels(preds: &[evalkit::RankedPrediction], mentions: &[MentionRecord]) -> Result<(Vec<f64>, Vec<bool>)> {
    let by_id: std::collections::HashMap<&str, f64> =
        preds.iter().map(|p| (p.mention_id.as_str(), p.top1_score)).collect();
    let mut scores = Vec::with_capacity(mentions.len());
    for m in mentions {
        let Some(&s) = by_id.get(m.mention_id.as_str()) else {
            return Err(proxlink::Error::InvalidArgument(format!("no prediction for mention `{}`", m.mention_id)).into());
        };
        scores.push(s);
    }
    Ok((scores, mentions.iter().map(|m| m.label.is_nil()).collect()))
}

fn gen_synth(cfg: &HarnessConfig, out: &Path) -> Result<()> {
    let mut d = generate_synthetic(&cfg.synth)?;
    if cfg.nil_holdout_fraction > 0.0 {
        let held = pick_holdout_types(&d.kb, cfg.nil_holdout_fraction, cfg.nil_holdout_seed)?;
        d = make_nil_split(&d, &held)?;
    }
    datakit::write_dataset(out, &d).with_context(|| format!("writing dataset {}", out.display()))?;
    let stats = d.seen_stats();
    println!("entities\t{}", d.kb.len());
    println!("train\t{}\nvalidation\t{}\ntest\t{}", d.train.len(), d.validation.len(), d.test.len());
    println!("test_seen_pct\t{}", stats.test_seen_pct);
    Ok(())
}

fn train(cfg: &HarnessConfig, data: &Path, out: &Path) -> Result<()> {
    let d = load_data(data)?;
    let vocab = build_vocabulary(&d);
    let tc = &cfg.train;
    let set = TrainingSet::from_records(&d.train, &d.kb, &vocab, tc.model.max_seq_len, cfg.render_style)?;
    if set.is_empty() {
        bail!(proxlink::Error::Empty("training mentions"));
    }
    create_dir(out)?;
    vocab.write(&out.join(VOCAB_FILE))?;
    fs::write(out.join(CONFIG_FILE), tc.to_toml_string()).map_err(proxlink::Error::from)?;
    let outcome = trainer::train(&set, tc, |epoch, model| {
        checkpoint::save(model, &out.join(format!("checkpoint-epoch-{}.bin", epoch.epoch)))?;
        println!("epoch\t{}\tsteps\t{}\tmean_loss\t{}", epoch.epoch, epoch.steps, epoch.mean_loss);
        Ok(())
    })?;
    checkpoint::save(&outcome.model, &out.join(MODEL_FILE))?;
    outcome.trace.write_tsv(&out.join(TRACE_FILE))?;
    Ok(())
}

fn rank(cfg: &HarnessConfig, data: &Path, split: Split, ckpt: &Path, vocab: &Path, out: &Path) -> Result<()> {
    let d = load_data(data)?;
    let model = checkpoint::load(ckpt).with_context(|| format!("loading checkpoint {}", ckpt.display()))?;
    let vocab = Vocabulary::read(vocab).with_context(|| format!("loading vocabulary {}", vocab.display()))?;
    let max_len = model.mention_tower.dims().max_seq_len;
    let entities = datakit::render_kb(&d.kb, &vocab, model.entity_tower.dims().max_seq_len, cfg.render_style)?;
    let index = build_index(&d.kb.ids(), &entities, &model, 0)?;
    let mentions = split.of(&d);
    let seqs = mentions.iter().map(|m| render_mention(m, &vocab, max_len)).collect::<proxlink::Result<Vec<TokenSequence>>>()?;
    let ids: Vec<String> = mentions.iter().map(|m| m.mention_id.clone()).collect();
    let preds = rank_all(&model, &ids, &seqs, &index, cfg.rank_depth)?;
    evalkit::write_predictions(out, &preds).with_context(|| format!("writing {}", out.display()))?;
    println!("ranked\t{}", preds.len());
    Ok(())
}
