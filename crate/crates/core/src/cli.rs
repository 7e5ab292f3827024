//! Command-line front end: one subcommand per stage of the experimental
//! workflow. Every subcommand that writes files also writes a run manifest
//! that `replay` can re-execute.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::diagnostics::{self, ComparisonRow, HistogramConfig, NamedModel};
use crate::error::{Error, Result};
use crate::losses::{corpus_perplexity, EncodedGroup, LossKind};
use crate::nbest::{self, ChannelConfig, Metric, NBestGroup};
use crate::nn::{self, init_params, Dims, ModelParams};
use crate::rescore::{self, Grid, RescoreConfig, TuneObjective};
use crate::trainer::{self, TrainingConfig};
use crate::vocab::{build_vocab, Vocabulary};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "MARGINLM_THREADS";
pub const MANIFEST_SUFFIX: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(
    name = "marginlm",
    version,
    about = "Discriminatively trained recurrent language models for n-best rescoring"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Sample a Markov source, write train/dev/test corpora and noisy n-best lists.
    Synth(SynthArgs),
    /// Train a language model by maximum likelihood.
    TrainMle(TrainMleArgs),
    /// Fine-tune only the softmax layer on in-domain text.
    Adapt(AdaptArgs),
    /// Fine-tune with the naive, large-margin or ranking loss on n-best lists.
    TrainMargin(TrainMarginArgs),
    /// Corpus perplexity.
    Ppl(PplArgs),
    /// Per-sentence LM scores, one per line.
    Score(ScoreArgs),
    /// Grid-search the LM interpolation weight on dev n-best lists.
    Tune(TuneArgs),
    /// Rerank n-best lists by task score plus weighted LM score.
    Rescore(RescoreArgs),
    /// Top-1 WER or corpus BLEU of an n-best file.
    Eval(EvalArgs),
    /// Margin histograms, correlation boxplots and comparison tables.
    Diagnose(DiagnoseArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::TrainMle(_) => "train-mle",
            Command::Adapt(_) => "adapt",
            Command::TrainMargin(_) => "train-margin",
            Command::Ppl(_) => "ppl",
            Command::Score(_) => "score",
            Command::Tune(_) => "tune",
            Command::Rescore(_) => "rescore",
            Command::Eval(_) => "eval",
            Command::Diagnose(_) => "diagnose",
            Command::Replay(_) => "replay",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum LossArg {
    Naive,
    Margin,
    Rank,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Naive => LossKind::Naive,
            LossArg::Margin => LossKind::Margin,
            LossArg::Rank => LossKind::Rank,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricArg {
    Wer,
    Bleu,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Self {
        match m {
            MetricArg::Wer => Metric::Wer,
            MetricArg::Bleu => Metric::Bleu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveArg {
    MinWer,
    MaxBleu,
}

impl From<ObjectiveArg> for TuneObjective {
    fn from(o: ObjectiveArg) -> Self {
        match o {
            ObjectiveArg::MinWer => TuneObjective::MinWer,
            ObjectiveArg::MaxBleu => TuneObjective::MaxBleu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NamedPath {
    pub name: String,
    pub path: PathBuf,
}

fn parse_named_path(s: &str) -> std::result::Result<NamedPath, String> {
    let (name, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=path, got `{s}`"))?;
    if name.is_empty() || path.is_empty() {
        return Err(format!("expected name=path, got `{s}`"));
    }
    Ok(NamedPath {
        name: name.to_string(),
        path: PathBuf::from(path),
    })
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of content tokens in the source.
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 20000)]
    pub train_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub dev_n: usize,
    #[arg(long, default_value_t = 1000)]
    pub test_n: usize,
    /// Training sentences that also get n-best lists (default: all).
    #[arg(long)]
    pub train_nbest_n: Option<usize>,
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 0.15)]
    pub p_sub: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_del: f64,
    #[arg(long, default_value_t = 0.05)]
    pub p_ins: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_sigma: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainMleArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Vocabulary size including the three reserved tokens.
    #[arg(long, default_value_t = 10000)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    pub embed: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden: usize,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_MLE_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Global gradient-norm clip.
    #[arg(long)]
    pub grad_clip: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_MLE_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainMarginArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    /// Dev n-best lists for per-epoch loss and margin statistics.
    #[arg(long)]
    pub dev_nbest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LossArg::Margin)]
    pub loss: LossArg,
    #[arg(long, default_value_t = crate::losses::DEFAULT_TAU)]
    pub tau: f64,
    /// Metric used to sort candidates for the ranking loss.
    #[arg(long, value_enum, default_value_t = MetricArg::Wer)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = trainer::DEFAULT_DISCRIMINATIVE_LR)]
    pub lr: f64,
    #[arg(long, default_value_t = trainer::DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub grad_clip: Option<f64>,
    /// Train even if the model was never trained before.
    #[arg(long)]
    pub allow_cold_start: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PplArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ScoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Corpus file, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Write scores here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TuneArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::MinWer)]
    pub objective: ObjectiveArg,
    /// Weight grid as min:max:step.
    #[arg(long, default_value_t = Grid::default())]
    pub grid: Grid,
    #[arg(long)]
    pub length_norm: bool,
    /// JSON report with the chosen weight and the full table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct RescoreArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long)]
    pub weight: f64,
    #[arg(long)]
    pub length_norm: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub nbest: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Wer)]
    pub metric: MetricArg,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    /// Models as name=checkpoint, comma separated; the first two are histogrammed.
    #[arg(long, value_delimiter = ',', value_parser = parse_named_path, required = true)]
    pub models: Vec<NamedPath>,
    /// Evaluation n-best lists.
    #[arg(long)]
    pub nbest: PathBuf,
    /// Dev n-best lists for weight tuning (default: the evaluation lists).
    #[arg(long)]
    pub dev_nbest: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = MetricArg::Wer)]
    pub metric: MetricArg,
    #[arg(long, default_value_t = Grid::default())]
    pub grid: Grid,
    #[arg(long)]
    pub length_norm: bool,
    #[arg(long, default_value_t = 2.0)]
    pub bin_width: f64,
    #[arg(long, default_value_t = -40.0, allow_hyphen_values = true)]
    pub hist_lo: f64,
    #[arg(long, default_value_t = 40.0, allow_hyphen_values = true)]
    pub hist_hi: f64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}

/// Record of one run: enough to reproduce its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub subcommand: String,
    /// Arguments after the program name, replayable as-is.
    pub argv: Vec<String>,
    /// Fully resolved configuration including defaults.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

struct Run {
    subcommand: &'static str,
    argv: Vec<String>,
    config: serde_json::Value,
}

impl Run {
    fn manifest(
        &self,
        seeds: &[(&str, u64)],
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> RunManifest {
        RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            subcommand: self.subcommand.to_string(),
            argv: self.argv.clone(),
            config: self.config.clone(),
            seeds: seeds.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
            inputs: inputs.iter().map(|p| p.to_path_buf()).collect(),
            outputs: outputs.to_vec(),
        }
    }

    fn write_manifest(
        &self,
        path: &Path,
        seeds: &[(&str, u64)],
        inputs: &[&Path],
        outputs: &[PathBuf],
    ) -> Result<()> {
        let manifest = self.manifest(seeds, inputs, outputs);
        let text =
            serde_json::to_string_pretty(&manifest).map_err(|e| Error::invalid(e.to_string()))?;
        write_text(path, &(text + "\n"))
    }
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Applies the thread cap from `MARGINLM_THREADS`, if set. Results never
/// depend on the thread count.
pub fn configure_threads() -> Result<()> {
    let Some(value) = std::env::var_os(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .to_str()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n| n >= 1)
        .ok_or_else(|| {
            Error::invalid(format!(
                "{THREADS_ENV} must be a positive integer, got {value:?}"
            ))
        })?;
    // a pool may already exist when running inside a test harness; the cap then does not apply
    if rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .is_err()
    {
        log::debug!("global thread pool already initialized; {THREADS_ENV} ignored");
    }
    Ok(())
}

fn encode_corpus(vocab: &Vocabulary, corpus: &[Vec<String>]) -> Vec<Vec<u32>> {
    corpus.iter().map(|s| vocab.encode(s)).collect()
}

fn read_optional_corpus(path: Option<&Path>, vocab: &Vocabulary) -> Result<Vec<Vec<u32>>> {
    match path {
        Some(p) => Ok(encode_corpus(vocab, &nbest::read_corpus(p)?)),
        None => Ok(Vec::new()),
    }
}

fn references(groups: &[NBestGroup], vocab: &Vocabulary) -> Vec<Vec<u32>> {
    groups.iter().map(|g| vocab.encode(&g.reference)).collect()
}

fn save_curve(out: &Path, curve: &trainer::LossCurve) -> Result<Vec<PathBuf>> {
    let curve_path = with_suffix(out, "curve.csv");
    let epochs_path = with_suffix(out, "epochs.csv");
    diagnostics::emit_loss_curve(curve, &curve_path)?;
    diagnostics::emit_epoch_summary(curve, &epochs_path)?;
    Ok(vec![curve_path, epochs_path])
}

#[derive(Debug, Serialize)]
struct SplitReport {
    sentences: usize,
    groups: usize,
    oracle_ppl: f64,
    baseline_top1_wer: f64,
}

#[derive(Debug, Serialize)]
struct SourceReport {
    seed: u64,
    vocab_size: usize,
    unigram_ppl_dev: Option<f64>,
    unigram_ppl_test: Option<f64>,
    splits: BTreeMap<String, SplitReport>,
}

/// Channel seed used for split `index` (train 0, dev 1, test 2).
pub fn split_channel_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(3).wrapping_add(index)
}

fn cmd_synth(run: &Run, a: &SynthArgs) -> Result<()> {
    if a.train_n == 0 {
        return Err(Error::invalid("--train-n must be positive"));
    }
    let total = a.train_n + a.dev_n + a.test_n;
    let (corpus, source) = nbest::generate_source_corpus(a.vocab_size, total, a.seed)?;
    let (train, rest) = corpus.split_at(a.train_n);
    let (dev, test) = rest.split_at(a.dev_n);
    let train_nbest_n = a.train_nbest_n.unwrap_or(a.train_n).min(a.train_n);
    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();
    let mut report = SourceReport {
        seed: a.seed,
        vocab_size: a.vocab_size,
        unigram_ppl_dev: None,
        unigram_ppl_test: None,
        splits: BTreeMap::new(),
    };
    if !dev.is_empty() {
        report.unigram_ppl_dev = Some(nbest::unigram_ppl(train, dev)?);
    }
    if !test.is_empty() {
        report.unigram_ppl_test = Some(nbest::unigram_ppl(train, test)?);
    }
    type Split<'a> = (&'a str, &'a [Vec<String>], &'a [Vec<String>]);
    let splits: [Split; 3] = [
        ("train", train, &train[..train_nbest_n]),
        ("dev", dev, dev),
        ("test", test, test),
    ];
    for (index, (name, sentences, nbest_src)) in splits.into_iter().enumerate() {
        if sentences.is_empty() {
            continue;
        }
        let corpus_path = a.out_dir.join(format!("{name}.txt"));
        nbest::write_corpus(sentences, &corpus_path)?;
        outputs.push(corpus_path);
        let channel = ChannelConfig {
            p_sub: a.p_sub,
            p_del: a.p_del,
            p_ins: a.p_ins,
            k: a.k,
            noise_sigma: a.noise_sigma,
            seed: split_channel_seed(a.seed, index as u64),
        };
        let groups = nbest::generate_nbest(nbest_src, &source, &channel, name)?;
        let nbest_path = a.out_dir.join(format!("{name}.nbest.jsonl"));
        nbest::write_nbest(&groups, &nbest_path)?;
        outputs.push(nbest_path);
        let baseline = if groups.is_empty() {
            f64::NAN
        } else {
            rescore::evaluate_top1(&groups, Metric::Wer)?
        };
        report.splits.insert(
            name.to_string(),
            SplitReport {
                sentences: sentences.len(),
                groups: groups.len(),
                oracle_ppl: nbest::oracle_source_ppl(&source, sentences)?,
                baseline_top1_wer: baseline,
            },
        );
    }
    let source_path = a.out_dir.join("source.json");
    write_json(&source_path, &source)?;
    let report_path = a.out_dir.join("source_report.json");
    write_json(&report_path, &report)?;
    outputs.push(source_path);
    outputs.push(report_path);
    for (name, s) in &report.splits {
        println!(
            "{name}: {} sentences, {} groups, oracle PPL {:.4}, baseline top-1 WER {:.2}%",
            s.sentences,
            s.groups,
            s.oracle_ppl,
            100.0 * s.baseline_top1_wer
        );
    }
    run.write_manifest(
        &a.out_dir.join(MANIFEST_SUFFIX),
        &[("seed", a.seed)],
        &[],
        &outputs,
    )
}

fn cmd_train_mle(run: &Run, a: &TrainMleArgs) -> Result<()> {
    let corpus = nbest::read_corpus(&a.corpus)?;
    let vocab = build_vocab(&corpus, a.vocab_size)?;
    let train = encode_corpus(&vocab, &corpus);
    let dev = read_optional_corpus(a.dev.as_deref(), &vocab)?;
    let mut model = init_params(Dims::new(vocab.len(), a.embed, a.hidden)?, a.seed, false);
    let config = TrainingConfig {
        lr: a.lr,
        batch_size: a.batch,
        grad_clip: a.grad_clip,
        ..TrainingConfig::mle(a.epochs, a.seed)
    };
    let curve = trainer::train_mle(&mut model, &train, &dev, &config)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&model, &vocab, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    outputs.extend(save_curve(&a.out, &curve)?);
    if let Some(ppl) = curve.epochs.last().and_then(|e| e.dev_ppl) {
        println!("dev PPL {ppl:.4}");
    }
    let mut inputs = vec![a.corpus.as_path()];
    inputs.extend(a.dev.as_deref());
    run.write_manifest(
        &with_suffix(&a.out, MANIFEST_SUFFIX),
        &[("seed", a.seed)],
        &inputs,
        &outputs,
    )
}

fn cmd_adapt(run: &Run, a: &AdaptArgs) -> Result<()> {
    let (mut model, vocab) = load_checkpoint(&a.model)?;
    let train = encode_corpus(&vocab, &nbest::read_corpus(&a.corpus)?);
    let dev = read_optional_corpus(a.dev.as_deref(), &vocab)?;
    let config = TrainingConfig {
        lr: a.lr,
        batch_size: a.batch,
        ..TrainingConfig::adapt(a.epochs, a.seed)
    };
    let curve = trainer::adapt_softmax(&mut model, &train, &dev, &config)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&model, &vocab, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    outputs.extend(save_curve(&a.out, &curve)?);
    if let Some(ppl) = curve.epochs.last().and_then(|e| e.dev_ppl) {
        println!("dev PPL {ppl:.4}");
    }
    let mut inputs = vec![a.model.as_path(), a.corpus.as_path()];
    inputs.extend(a.dev.as_deref());
    run.write_manifest(
        &with_suffix(&a.out, MANIFEST_SUFFIX),
        &[("seed", a.seed)],
        &inputs,
        &outputs,
    )
}

/// Encodes groups for training; ranking needs them sorted by the task metric.
pub fn encode_for_training(
    groups: &[NBestGroup],
    vocab: &Vocabulary,
    kind: LossKind,
    metric: Metric,
) -> Result<Vec<EncodedGroup>> {
    if kind == LossKind::Rank {
        groups
            .iter()
            .map(|g| Ok(nbest::sort_candidates(g, metric)?.encode(vocab)))
            .collect()
    } else {
        Ok(groups.iter().map(|g| g.encode(vocab)).collect())
    }
}

fn cmd_train_margin(run: &Run, a: &TrainMarginArgs) -> Result<()> {
    let (mut model, vocab) = load_checkpoint(&a.model)?;
    let kind = LossKind::from(a.loss);
    let metric = Metric::from(a.metric);
    let groups = encode_for_training(&nbest::read_nbest(&a.nbest)?, &vocab, kind, metric)?;
    let dev = match &a.dev_nbest {
        Some(p) => encode_for_training(&nbest::read_nbest(p)?, &vocab, kind, metric)?,
        None => Vec::new(),
    };
    let config = TrainingConfig {
        lr: a.lr,
        batch_size: a.batch,
        tau: a.tau,
        sort_metric: metric,
        grad_clip: a.grad_clip,
        allow_cold_start: a.allow_cold_start,
        ..TrainingConfig::discriminative(kind, a.epochs, a.seed)
    };
    let curve = trainer::train_discriminative(&mut model, &groups, &dev, &config)?;
    ensure_parent(&a.out)?;
    save_checkpoint(&model, &vocab, &a.out)?;
    let mut outputs = vec![a.out.clone()];
    outputs.extend(save_curve(&a.out, &curve)?);
    if let Some(e) = curve.epochs.last() {
        println!("final epoch mean {} loss {:.6}", kind.name(), e.mean_loss);
    }
    let mut inputs = vec![a.model.as_path(), a.nbest.as_path()];
    inputs.extend(a.dev_nbest.as_deref());
    run.write_manifest(
        &with_suffix(&a.out, MANIFEST_SUFFIX),
        &[("seed", a.seed)],
        &inputs,
        &outputs,
    )
}

fn cmd_ppl(a: &PplArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let corpus = encode_corpus(&vocab, &nbest::read_corpus(&a.corpus)?);
    println!("{:.6}", corpus_perplexity(&model, &corpus)?);
    Ok(())
}

fn cmd_score(run: &Run, a: &ScoreArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let corpus = encode_corpus(&vocab, &nbest::read_corpus(&a.input)?);
    let scores = nn::lm_scores(&model, &corpus)?;
    let text: String = scores.iter().map(|s| format!("{s}\n")).collect();
    match &a.out {
        Some(out) => {
            write_text(out, &text)?;
            run.write_manifest(
                &with_suffix(out, MANIFEST_SUFFIX),
                &[],
                &[a.model.as_path(), a.input.as_path()],
                std::slice::from_ref(out),
            )
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct TuneReport {
    objective: TuneObjective,
    length_norm: bool,
    grid: Grid,
    weight: f64,
    value: f64,
    table: Vec<(f64, f64)>,
}

fn cmd_tune(run: &Run, a: &TuneArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let groups = nbest::read_nbest(&a.nbest)?;
    let objective = TuneObjective::from(a.objective);
    let cfg = RescoreConfig {
        weight: 0.0,
        length_norm: a.length_norm,
        grid: a.grid,
    };
    let result = rescore::tune_weight(&groups, &model, &vocab, &cfg, objective)?;
    println!(
        "weight {} {}",
        result.weight,
        format_metric(objective.metric(), result.objective)
    );
    if let Some(out) = &a.out {
        let report = TuneReport {
            objective,
            length_norm: a.length_norm,
            grid: a.grid,
            weight: result.weight,
            value: result.objective,
            table: result.table,
        };
        write_json(out, &report)?;
        run.write_manifest(
            &with_suffix(out, MANIFEST_SUFFIX),
            &[],
            &[a.model.as_path(), a.nbest.as_path()],
            std::slice::from_ref(out),
        )?;
    }
    Ok(())
}

fn cmd_rescore(run: &Run, a: &RescoreArgs) -> Result<()> {
    let (model, vocab) = load_checkpoint(&a.model)?;
    let groups = nbest::read_nbest(&a.nbest)?;
    let cfg = RescoreConfig {
        weight: a.weight,
        length_norm: a.length_norm,
        ..RescoreConfig::default()
    };
    if !(cfg.weight >= 0.0 && cfg.weight.is_finite()) {
        return Err(Error::invalid(format!(
            "weight must be nonnegative, got {}",
            cfg.weight
        )));
    }
    let out = rescore::rescore_groups(&groups, &model, &vocab, &cfg)?;
    ensure_parent(&a.out)?;
    nbest::write_nbest(&out, &a.out)?;
    run.write_manifest(
        &with_suffix(&a.out, MANIFEST_SUFFIX),
        &[],
        &[a.model.as_path(), a.nbest.as_path()],
        std::slice::from_ref(&a.out),
    )
}

/// WER as a percentage with two decimals, BLEU scaled to 0-100 likewise.
pub fn format_metric(metric: Metric, value: f64) -> String {
    match metric {
        Metric::Wer => format!("WER {:.2}%", 100.0 * value),
        Metric::Bleu => format!("BLEU {:.2}", 100.0 * value),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let groups = nbest::read_nbest(&a.nbest)?;
    let metric = Metric::from(a.metric);
    println!(
        "{}",
        format_metric(metric, rescore::evaluate_top1(&groups, metric)?)
    );
    Ok(())
}

fn tune_objective(metric: Metric) -> TuneObjective {
    match metric {
        Metric::Wer => TuneObjective::MinWer,
        Metric::Bleu => TuneObjective::MaxBleu,
    }
}

fn cmd_diagnose(run: &Run, a: &DiagnoseArgs) -> Result<()> {
    let metric = Metric::from(a.metric);
    let test = nbest::read_nbest(&a.nbest)?;
    let dev = match &a.dev_nbest {
        Some(p) => nbest::read_nbest(p)?,
        None => test.clone(),
    };
    let models: Vec<(String, ModelParams, Vocabulary)> = a
        .models
        .iter()
        .map(|m| {
            let (model, vocab) = load_checkpoint(&m.path)?;
            Ok((m.name.clone(), model, vocab))
        })
        .collect::<Result<_>>()?;
    let named: Vec<NamedModel<'_>> = models
        .iter()
        .map(|(name, model, vocab)| NamedModel { name, model, vocab })
        .collect();
    create_dir(&a.out_dir)?;
    let mut outputs = Vec::new();

    if named.len() >= 2 {
        let hist = HistogramConfig {
            bin_width: a.bin_width,
            lo: a.hist_lo,
            hi: a.hist_hi,
        };
        let path = a.out_dir.join("margin_histogram.csv");
        let summary = diagnostics::emit_margin_histogram(named[0], named[1], &test, &hist, &path)?;
        println!(
            "positive margins: {} {:.4}, {} {:.4}",
            named[0].name,
            summary.fraction_a(),
            named[1].name,
            summary.fraction_b()
        );
        outputs.push(diagnostics::summary_path(&path));
        outputs.push(path);
    }

    let boxplot = a.out_dir.join("correlation_boxplot.csv");
    diagnostics::emit_correlation_boxplot(&named, &test, metric, &boxplot)?;
    outputs.push(boxplot);

    let mut rows = vec![ComparisonRow {
        model_name: "baseline".to_string(),
        dev_objective: rescore::evaluate_top1(&dev, metric)?,
        test_objective: rescore::evaluate_top1(&test, metric)?,
        dev_ppl: None,
        test_ppl: None,
    }];
    let mut weights = BTreeMap::new();
    for m in &named {
        let cfg = RescoreConfig {
            weight: 0.0,
            length_norm: a.length_norm,
            grid: a.grid,
        };
        let tuned = rescore::tune_weight(&dev, m.model, m.vocab, &cfg, tune_objective(metric))?;
        let rescored = rescore::rescore_groups(
            &test,
            m.model,
            m.vocab,
            &RescoreConfig {
                weight: tuned.weight,
                ..cfg
            },
        )?;
        weights.insert(m.name.to_string(), tuned.weight);
        rows.push(ComparisonRow {
            model_name: m.name.to_string(),
            dev_objective: tuned.objective,
            test_objective: rescore::evaluate_top1(&rescored, metric)?,
            dev_ppl: Some(corpus_perplexity(m.model, &references(&dev, m.vocab))?),
            test_ppl: Some(corpus_perplexity(m.model, &references(&test, m.vocab))?),
        });
    }
    let table = a.out_dir.join("comparison.csv");
    diagnostics::emit_comparison_table(&rows, &table)?;
    outputs.push(table);
    let weights_path = a.out_dir.join("weights.json");
    write_json(&weights_path, &weights)?;
    outputs.push(weights_path);
    for r in &rows {
        println!(
            "{}: dev {} test {}",
            r.model_name,
            format_metric(metric, r.dev_objective),
            format_metric(metric, r.test_objective)
        );
    }

    let mut inputs: Vec<&Path> = a.models.iter().map(|m| m.path.as_path()).collect();
    inputs.push(&a.nbest);
    inputs.extend(a.dev_nbest.as_deref());
    run.write_manifest(&a.out_dir.join(MANIFEST_SUFFIX), &[], &inputs, &outputs)
}

fn cmd_replay(a: &ReplayArgs) -> Result<()> {
    let text = fs::read_to_string(&a.manifest).map_err(|e| Error::io(&a.manifest, e))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| Error::invalid(format!("bad manifest: {e}")))?;
    if manifest.subcommand == "replay" {
        return Err(Error::invalid("manifest records a replay"));
    }
    let argv = std::iter::once(manifest.tool.clone()).chain(manifest.argv.iter().cloned());
    let cli = Cli::try_parse_from(argv)
        .map_err(|e| Error::invalid(format!("manifest arguments do not parse: {e}")))?;
    execute(cli.command, manifest.argv)
}

fn execute(command: Command, argv: Vec<String>) -> Result<()> {
    let run = Run {
        subcommand: command.name(),
        argv,
        config: serde_json::to_value(&command).map_err(|e| Error::invalid(e.to_string()))?,
    };
    match &command {
        Command::Synth(a) => cmd_synth(&run, a),
        Command::TrainMle(a) => cmd_train_mle(&run, a),
        Command::Adapt(a) => cmd_adapt(&run, a),
        Command::TrainMargin(a) => cmd_train_margin(&run, a),
        Command::Ppl(a) => cmd_ppl(a),
        Command::Score(a) => cmd_score(&run, a),
        Command::Tune(a) => cmd_tune(&run, a),
        Command::Rescore(a) => cmd_rescore(&run, a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(&run, a),
        Command::Replay(a) => cmd_replay(a),
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    let argv: Vec<String> = args
        .iter()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .filter(|a| !is_verbosity_flag(a))
        .collect();
    let result = configure_threads().and_then(|_| execute(cli.command, argv));
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn is_verbosity_flag(arg: &str) -> bool {
    arg == "--verbose"
        || (arg.starts_with('-')
            && !arg.starts_with("--")
            && arg.len() > 1
            && arg[1..].chars().all(|c| c == 'v'))
}
