//! Command-line surface.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use causal_core::corpus::{
    build_pool, grouped_split, triplets_to_pairs, validate_pairs, CausalPair, DatasetSplit, Side,
    SynthGenerator,
};
use causal_core::encoder::{encode_texts, EncoderParams, SemanticPretrainConfig};
use causal_core::eval::{
    beta_ablation, evaluate_run, gold_pool, mean_report, pair_judgments, AblationPools, Direction,
    QueryJudgment, QuerySide,
};
use causal_core::loss::SimilarityKind;
use causal_core::text::Vocab;
use causal_core::train::{fit, AdamWConfig, EncoderInit, TrainConfig};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::FormatError;
use crate::manifest::{default_path, fingerprint, sha256_file, RunManifest};
use crate::report::{write_json, AblationTable, MetricsJson, SeedMetrics};
use crate::{checkpoint, embfile, formats, pipeline};

/// Exit status for usage errors.
pub const EXIT_USAGE: i32 = 2;
/// Exit status for malformed or inconsistent data.
pub const EXIT_DATA: i32 = 3;
/// Exit status for numeric failures (non-finite values).
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(
    name = "causal-retrieval",
    version,
    about = "Cause/effect dense retrieval: data prep, training, indexing and evaluation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cause/effect corpus and held-out distractors.
    Synth(SynthArgs),
    /// Split pairs (or triplets) into train/val/test and build the test pool.
    Prepare(PrepareArgs),
    /// Pretrain the semantic encoder and train the cause/effect encoders.
    Train(TrainArgs),
    /// Write an embedding file for a pool or for queries.
    Embed(EmbedArgs),
    /// Build an index from an embedding file and report its shape.
    Index(IndexArgs),
    /// Rank pool documents for each query.
    Retrieve(RetrieveArgs),
    /// Score ranked results against judgments.
    Eval(EvalArgs),
    /// Train and evaluate one model per semantic-loss weight.
    Ablate(AblateArgs),
    /// Dump cause/effect/semantic embeddings of pairs as TSV.
    ExportEmbeddings(ExportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::Synth(_) => "synth",
            Self::Prepare(_) => "prepare",
            Self::Train(_) => "train",
            Self::Embed(_) => "embed",
            Self::Index(_) => "index",
            Self::Retrieve(_) => "retrieve",
            Self::Eval(_) => "eval",
            Self::Ablate(_) => "ablate",
            Self::ExportEmbeddings(_) => "export-embeddings",
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DirectionArg {
    #[value(name = "cause2effect")]
    CauseToEffect,
    #[value(name = "effect2cause")]
    EffectToCause,
}

impl From<DirectionArg> for Direction {
    fn from(d: DirectionArg) -> Self {
        match d {
            DirectionArg::CauseToEffect => Direction::CauseToEffect,
            DirectionArg::EffectToCause => Direction::EffectToCause,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SimilarityArg {
    Dot,
    Cosine,
}

impl From<SimilarityArg> for SimilarityKind {
    fn from(s: SimilarityArg) -> Self {
        match s {
            SimilarityArg::Dot => SimilarityKind::Dot,
            SimilarityArg::Cosine => SimilarityKind::Cosine,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum InitArg {
    /// Start from copies of the semantic encoder.
    Semantic,
    Random,
}

#[derive(Debug, Clone, Copy, Default, ValueEnum)]
pub enum EncoderArg {
    /// The direction's trained encoder.
    #[default]
    Trained,
    /// The frozen semantic encoder (baseline).
    Semantic,
}

impl From<EncoderArg> for QuerySide {
    fn from(e: EncoderArg) -> Self {
        match e {
            EncoderArg::Trained => QuerySide::Trained,
            EncoderArg::Semantic => QuerySide::SemanticOnly,
        }
    }
}

#[derive(Debug, Args)]
pub struct ManifestArg {
    /// Where to write the run manifest (default: next to the main output).
    #[arg(long)]
    pub manifest_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    pub n_pairs: usize,
    #[arg(long, default_value_t = 64)]
    pub cause_vocab: usize,
    #[arg(long, default_value_t = 64)]
    pub effect_vocab: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Pair JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    /// Number of held-out distractor sentences per side.
    #[arg(long, default_value_t = 0)]
    pub distractors: usize,
    /// Effect-side distractors (one sentence per line).
    #[arg(long)]
    pub effect_distractors_out: Option<PathBuf>,
    /// Cause-side distractors (one sentence per line).
    #[arg(long)]
    pub cause_distractors_out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).multiple(true).args(["pairs", "triplets"])))]
pub struct PrepareArgs {
    /// Pair JSONL inputs.
    #[arg(long)]
    pub pairs: Vec<PathBuf>,
    /// Triplet JSONL inputs; each triplet becomes two pairs in one group.
    #[arg(long)]
    pub triplets: Vec<PathBuf>,
    /// train:val:test ratios.
    #[arg(long, default_value = "6:1:1", value_parser = pipeline::parse_ratios)]
    pub ratios: [f64; 3],
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Receives train.jsonl, val.jsonl, test.jsonl and pool.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Direction of the test pool (which side forms the documents).
    #[arg(long, value_enum, default_value = "cause2effect")]
    pub direction: DirectionArg,
    /// Distractor sentences mixed into the test pool, one per line.
    #[arg(long, requires = "n_distractors")]
    pub distractors: Option<PathBuf>,
    #[arg(long, requires = "distractors")]
    pub n_distractors: Option<usize>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

/// Model and optimization flags shared by `train` and `ablate`.
#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs (default 50, or 500 with --paper-hparams).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batch size (default 64).
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Learning rate (default 1e-3, or 1e-5 with --paper-hparams).
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub weight_decay: f64,
    #[arg(long, value_enum, default_value = "dot")]
    pub similarity: SimilarityArg,
    /// Disable L2 normalization of encoder outputs.
    #[arg(long)]
    pub no_normalize: bool,
    /// Initialization of the cause/effect encoders.
    #[arg(long, value_enum, default_value = "semantic")]
    pub init: InitArg,
    #[arg(long, default_value_t = 64)]
    pub d_emb: usize,
    #[arg(long, default_value_t = 64)]
    pub d: usize,
    /// Maximum tokens per text.
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Minimum token frequency for the vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_freq: usize,
    /// Batch 64, learning rate 1e-5, 500 epochs.
    #[arg(long)]
    pub paper_hparams: bool,
    /// Reuse the semantic encoder and vocabulary of an existing checkpoint.
    #[arg(long)]
    pub semantic_from: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub semantic_epochs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub semantic_dropout: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub semantic_lr: f64,
    /// Softmax temperature of semantic pretraining.
    #[arg(long, default_value_t = 0.05)]
    pub semantic_temperature: f64,
}

impl ModelArgs {
    pub fn train_config(&self, beta: f64) -> TrainConfig {
        let mut cfg = TrainConfig::default();
        if self.paper_hparams {
            cfg = cfg.with_paper_hparams();
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(b) = self.batch_size {
            cfg.batch_size = b;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.learning_rate = lr;
        }
        cfg.optimizer.weight_decay = self.weight_decay;
        cfg.loss.beta = beta;
        cfg.loss.similarity = self.similarity.into();
        cfg.seed = self.seed;
        cfg.d_emb = self.d_emb;
        cfg.d = self.d;
        cfg.max_len = self.max_len;
        cfg.normalize_output = !self.no_normalize;
        cfg.init = match self.init {
            InitArg::Semantic => EncoderInit::FromSemantic,
            InitArg::Random => EncoderInit::Random,
        };
        cfg
    }

    pub fn semantic_config(&self) -> SemanticPretrainConfig {
        SemanticPretrainConfig {
            epochs: self.semantic_epochs,
            dropout: self.semantic_dropout,
            d_emb: self.d_emb,
            d: self.d,
            max_len: self.max_len,
            normalize_output: !self.no_normalize,
            similarity: self.similarity.into(),
            temperature: self.semantic_temperature,
            optimizer: AdamWConfig {
                learning_rate: self.semantic_lr,
                ..AdamWConfig::default()
            },
            ..SemanticPretrainConfig::default()
        }
    }

    /// Vocabulary and frozen semantic encoder: loaded from `--semantic-from`
    /// or pretrained on the training texts. Adjusts `cfg` to match a loaded
    /// encoder's normalization.
    fn semantic(
        &self,
        train: &[CausalPair],
        cfg: &mut TrainConfig,
        manifest: &mut RunManifest,
    ) -> Result<(Vocab, EncoderParams)> {
        match &self.semantic_from {
            Some(path) => {
                manifest.input(path)?;
                let ckpt = checkpoint::load(path)?;
                cfg.normalize_output = ckpt.semantic.normalize_output;
                Ok((ckpt.vocab, ckpt.semantic))
            }
            None => Ok(pipeline::semantic_from_train(
                train,
                self.min_freq,
                &self.semantic_config(),
                self.seed,
            )?),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    /// Checkpoint output.
    #[arg(long)]
    pub out: PathBuf,
    /// Weight of the semantic-preservation terms.
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Per-epoch loss and validation Hit@1 as JSONL.
    #[arg(long)]
    pub history_out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["pool", "pairs"])))]
pub struct EmbedArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Pool JSONL, embedded with the semantic encoder.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Pair JSONL whose query side is embedded (requires --direction).
    #[arg(long, requires = "direction")]
    pub pairs: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub direction: Option<DirectionArg>,
    /// Query-side encoder.
    #[arg(long, value_enum, default_value = "trained")]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Embedding file output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long, default_value_t = causal_core::index::DEFAULT_CHUNK_ROWS)]
    pub chunk_rows: usize,
    /// Index summary JSON (also printed).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("query_source").required(true).args(["queries", "query_embeddings"])))]
pub struct RetrieveArgs {
    /// Task direction; selects the query encoder.
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    /// Pool embedding file.
    #[arg(long)]
    pub pool_embeddings: PathBuf,
    /// Pair JSONL of queries (requires --checkpoint).
    #[arg(long, requires = "checkpoint")]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Precomputed query embedding file.
    #[arg(long)]
    pub query_embeddings: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "trained")]
    pub encoder: EncoderArg,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = causal_core::index::DEFAULT_CHUNK_ROWS)]
    pub chunk_rows: usize,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// Ranked results JSONL output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("judged").required(true).args(["pool", "pairs"])))]
pub struct EvalArgs {
    /// Ranked results, one file per run (e.g. per seed).
    #[arg(long, required = true, num_args = 1..)]
    pub results: Vec<PathBuf>,
    /// Judgments from a pool's gold_for annotations.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Judgments from pairs: query id and gold doc id are the pair id.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    /// Seed of each results file, in order.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Checkpoint of each run (one, or one per results file), for fingerprints.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub ks: Vec<usize>,
    /// Metrics JSON output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub val: PathBuf,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "0,0.1,1,2,5")]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Effect-like distractors for the cause2effect augmented pool.
    #[arg(long)]
    pub effect_distractors: Option<PathBuf>,
    /// Cause-like distractors for the effect2cause augmented pool.
    #[arg(long)]
    pub cause_distractors: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub n_distractors: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    pub ks: Vec<usize>,
    /// Ablation table JSON output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub max_len: usize,
    /// TSV output.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub manifest: ManifestArg,
}

fn finish_manifest(
    mut m: RunManifest,
    explicit: &ManifestArg,
    primary: &Path,
    outputs: &[&Path],
) -> Result<()> {
    for o in outputs {
        m.output(o);
    }
    let path = explicit
        .manifest_out
        .clone()
        .unwrap_or_else(|| default_path(primary));
    m.write(&path)?;
    Ok(())
}

fn cmd_synth(a: &SynthArgs, mut m: RunManifest) -> Result<()> {
    m.seeds.push(a.seed);
    let generator = SynthGenerator::new(a.cause_vocab, a.effect_vocab, a.seed)?;
    let pairs = generator.pairs(a.n_pairs)?;
    formats::write_pairs(&a.out, &pairs)?;
    let mut outputs = vec![a.out.as_path()];
    let sides = [
        (&a.effect_distractors_out, Side::Effect, 0),
        (&a.cause_distractors_out, Side::Cause, 1),
    ];
    for (path, side, stream) in sides {
        if let Some(path) = path {
            let sentences = generator.distractors(side, a.distractors, &pairs, stream)?;
            formats::write_sentences(path, &sentences)?;
            outputs.push(path);
        }
    }
    finish_manifest(m, &a.manifest, &a.out, &outputs)
}

fn cmd_prepare(a: &PrepareArgs, mut m: RunManifest) -> Result<()> {
    m.seeds.push(a.seed);
    let mut pairs = Vec::new();
    for p in &a.pairs {
        m.input(p)?;
        pairs.extend(formats::load_pairs(p)?);
    }
    for t in &a.triplets {
        m.input(t)?;
        pairs.extend(triplets_to_pairs(&formats::load_triplets(t)?)?);
    }
    validate_pairs(&pairs).context("combined inputs")?;
    let split = grouped_split(&pairs, a.ratios, a.seed)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| FormatError::io(&a.out_dir, e))?;
    let names = ["train.jsonl", "val.jsonl", "test.jsonl"];
    let paths: Vec<PathBuf> = names.iter().map(|n| a.out_dir.join(n)).collect();
    for (path, part) in paths.iter().zip(split.parts()) {
        formats::write_pairs(path, part)?;
    }
    let gold = gold_pool(&split.test, a.direction.into());
    let distractors = match &a.distractors {
        Some(p) => {
            m.input(p)?;
            formats::load_sentences(p)?
        }
        None => Vec::new(),
    };
    let pool_size = gold.len() + a.n_distractors.unwrap_or(0);
    let pool = build_pool(&gold, &distractors, pool_size, a.seed)?;
    let pool_path = a.out_dir.join("pool.jsonl");
    formats::write_pool(&pool_path, &pool)?;
    eprintln!(
        "split {}/{}/{} pairs; pool {} documents",
        split.train.len(),
        split.validation.len(),
        split.test.len(),
        pool.len()
    );
    let mut outputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    outputs.push(&pool_path);
    let manifest_default = a.out_dir.join("manifest");
    finish_manifest(m, &a.manifest, &manifest_default, &outputs)
}

#[derive(Serialize)]
struct EpochLine {
    epoch: usize,
    loss: f64,
    val_hit_at_1: f64,
}

fn cmd_train(a: &TrainArgs, mut m: RunManifest) -> Result<()> {
    m.seeds.push(a.model.seed);
    m.input(&a.train)?;
    m.input(&a.val)?;
    let train = formats::load_pairs(&a.train)?;
    let val = formats::load_pairs(&a.val)?;
    let mut cfg = a.model.train_config(a.beta);
    cfg.validate()?;
    let (vocab, semantic) = a.model.semantic(&train, &mut cfg, &mut m)?;
    let report = fit(&train, &val, &semantic, &vocab, &cfg)?;
    for r in &report.history {
        eprintln!(
            "epoch {:>4}  loss {:.6}  val Hit@1 {:.4}",
            r.epoch + 1,
            r.loss,
            r.val_metric
        );
    }
    checkpoint::save(&report.best, &a.out)?;
    println!(
        "best checkpoint: step {} val Hit@1 {:.4} beta {}",
        report.best.meta.step, report.best.meta.val_metric, report.best.meta.beta
    );
    let mut outputs = vec![a.out.as_path()];
    if let Some(h) = &a.history_out {
        let lines: Vec<EpochLine> = report
            .history
            .iter()
            .map(|r| EpochLine {
                epoch: r.epoch + 1,
                loss: r.loss,
                val_hit_at_1: r.val_metric,
            })
            .collect();
        let mut text = String::new();
        for l in &lines {
            text.push_str(&serde_json::to_string(l)?);
            text.push('\n');
        }
        std::fs::write(h, text).map_err(|e| FormatError::io(h, e))?;
        outputs.push(h);
    }
    finish_manifest(m, &a.manifest, &a.out, &outputs)
}

fn cmd_embed(a: &EmbedArgs, mut m: RunManifest) -> Result<()> {
    m.input(&a.checkpoint)?;
    let ckpt = checkpoint::load(&a.checkpoint)?;
    m.seeds.push(ckpt.meta.seed);
    if let Some(pool) = &a.pool {
        m.input(pool)?;
        let pool = formats::load_pool(pool)?;
        pipeline::write_pool_embeddings(&a.out, &pool, &ckpt, a.max_len)?;
    } else if let Some(pairs_path) = &a.pairs {
        m.input(pairs_path)?;
        let direction = a
            .direction
            .ok_or_else(|| usage("--pairs requires --direction"))?;
        let pairs = formats::load_pairs(pairs_path)?;
        pipeline::write_query_embeddings(
            &a.out,
            &pairs,
            &ckpt,
            direction.into(),
            a.encoder.into(),
            a.max_len,
        )?;
    }
    finish_manifest(m, &a.manifest, &a.out, &[&a.out])
}

#[derive(Serialize)]
struct IndexSummary {
    n: usize,
    d: usize,
    similarity: &'static str,
    chunk_rows: usize,
    chunks: usize,
}

fn cmd_index(a: &IndexArgs, mut m: RunManifest) -> Result<()> {
    m.input(&a.embeddings)?;
    let index = embfile::load_index(&a.embeddings, a.chunk_rows)?;
    let summary = IndexSummary {
        n: index.len(),
        d: index.d(),
        similarity: index.similarity().as_str(),
        chunk_rows: a.chunk_rows,
        chunks: index.chunk_count(),
    };
    println!("{}", serde_json::to_string(&summary)?);
    match &a.out {
        Some(out) => {
            write_json(out, &summary)?;
            finish_manifest(m, &a.manifest, out, &[out])
        }
        None => {
            let mut name = a.embeddings.as_os_str().to_owned();
            name.push(".index");
            finish_manifest(m, &a.manifest, Path::new(&name), &[])
        }
    }
}

fn cmd_retrieve(a: &RetrieveArgs, mut m: RunManifest) -> Result<()> {
    m.input(&a.pool_embeddings)?;
    let direction: Direction = a.direction.into();
    let index = embfile::load_index(&a.pool_embeddings, a.chunk_rows)?;
    let (ids, queries) = if let Some(q) = &a.query_embeddings {
        m.input(q)?;
        let (h, ids, matrix) = embfile::load_matrix(q)?;
        if h.similarity_kind() != Some(index.similarity()) {
            return Err(FormatError::Integrity {
                path: q.clone(),
                message: format!(
                    "query similarity `{}` differs from pool similarity `{}`",
                    h.similarity,
                    index.similarity().as_str()
                ),
            }
            .into());
        }
        (ids, matrix)
    } else {
        let ckpt_path = a
            .checkpoint
            .as_ref()
            .ok_or_else(|| usage("--queries requires --checkpoint"))?;
        let queries_path = a.queries.as_ref().expect("query source group");
        m.input(ckpt_path)?;
        m.input(queries_path)?;
        let ckpt = checkpoint::load(ckpt_path)?;
        m.seeds.push(ckpt.meta.seed);
        let pairs = formats::load_pairs(queries_path)?;
        let texts: Vec<&str> = pairs.iter().map(|p| direction.query_text(p)).collect();
        let encoder = pipeline::query_encoder(&ckpt, direction, a.encoder.into());
        let matrix = encode_texts(encoder, &ckpt.vocab, &texts, a.max_len)?;
        (pairs.into_iter().map(|p| p.id).collect(), matrix)
    };
    let results = index.batch_top_k(&ids, &queries, a.k)?;
    formats::write_results(&a.out, &results)?;
    finish_manifest(m, &a.manifest, &a.out, &[&a.out])
}

fn report_unjoined(
    results: &[causal_core::index::RetrievalResult],
    judgments: &[QueryJudgment],
    path: &Path,
) {
    let judged: BTreeSet<&str> = judgments.iter().map(|j| j.query_id.as_str()).collect();
    let returned: BTreeSet<&str> = results.iter().map(|r| r.query_id.as_str()).collect();
    let unjudged: Vec<&str> = returned.difference(&judged).copied().collect();
    let missing: Vec<&str> = judged.difference(&returned).copied().collect();
    let preview = |ids: &[&str]| ids.iter().take(5).copied().collect::<Vec<_>>().join(", ");
    if !unjudged.is_empty() {
        eprintln!(
            "{}: {} result queries have no judgment (ignored): {}",
            path.display(),
            unjudged.len(),
            preview(&unjudged)
        );
    }
    if !missing.is_empty() {
        eprintln!(
            "{}: {} judged queries have no results (scored as zero): {}",
            path.display(),
            missing.len(),
            preview(&missing)
        );
    }
}

fn cmd_eval(a: &EvalArgs, mut m: RunManifest) -> Result<()> {
    let n = a.results.len();
    if !a.seeds.is_empty() && a.seeds.len() != n {
        return Err(usage(format!(
            "{} seeds given for {n} results files",
            a.seeds.len()
        )));
    }
    if !(a.checkpoints.is_empty() || a.checkpoints.len() == 1 || a.checkpoints.len() == n) {
        return Err(usage(format!(
            "{} checkpoints given for {n} results files",
            a.checkpoints.len()
        )));
    }
    if a.ks.contains(&0) {
        return Err(usage("cutoffs in --ks must be positive"));
    }
    let (judged_path, judgments) = match (&a.pool, &a.pairs) {
        (Some(p), _) => (p, pipeline::judgments_from_pool(&formats::load_pool(p)?)),
        (None, Some(p)) => (p, pair_judgments(&formats::load_pairs(p)?)),
        (None, None) => unreachable!("clap requires a judgment source"),
    };
    let pool_id = sha256_file(judged_path)?;
    m.input(judged_path)?;
    m.seeds = a.seeds.clone();
    let mut per_seed = Vec::with_capacity(n);
    let mut reports = Vec::with_capacity(n);
    for (i, path) in a.results.iter().enumerate() {
        m.input(path)?;
        let results = formats::load_results(path)?;
        report_unjoined(&results, &judgments, path);
        let mut report = evaluate_run(&results, &judgments, &a.ks)
            .with_context(|| path.display().to_string())?;
        let ckpt_id = match a.checkpoints.get(i).or(a.checkpoints.first()) {
            Some(c) => {
                m.input(c)?;
                pipeline::checkpoint_identity(c)?
            }
            None => String::new(),
        };
        let seed = a.seeds.get(i).copied();
        let seed_str = seed.map(|s| s.to_string()).unwrap_or_default();
        report.fingerprint = fingerprint(&[ckpt_id.as_str(), pool_id.as_str(), seed_str.as_str()]);
        if let Some(s) = seed {
            per_seed.push(SeedMetrics::new(s, &report));
        }
        reports.push(report);
    }
    let mut mean = if reports.len() == 1 {
        reports[0].clone()
    } else {
        mean_report(&reports)
    };
    if reports.len() > 1 {
        let fps: Vec<&str> = reports.iter().map(|r| r.fingerprint.as_str()).collect();
        mean.fingerprint = fingerprint(&fps);
    }
    let json = MetricsJson::new(&mean, per_seed);
    write_json(&a.out, &json)?;
    for (k, v) in &json.hit {
        println!("Hit@{k} {v:.4}");
    }
    for (k, v) in &json.mrr {
        println!("MRR@{k} {v:.4}");
    }
    for (k, v) in &json.ndcg {
        println!("nDCG@{k} {v:.4}");
    }
    finish_manifest(m, &a.manifest, &a.out, &[&a.out])
}

fn cmd_ablate(a: &AblateArgs, mut m: RunManifest) -> Result<()> {
    if a.betas.is_empty() {
        return Err(usage("--betas must list at least one value"));
    }
    m.seeds.push(a.model.seed);
    for p in [&a.train, &a.val, &a.test] {
        m.input(p)?;
    }
    let split = DatasetSplit {
        train: formats::load_pairs(&a.train)?,
        validation: formats::load_pairs(&a.val)?,
        test: formats::load_pairs(&a.test)?,
    };
    let mut load_distractors = |p: &Option<PathBuf>| -> Result<Vec<String>> {
        match p {
            Some(p) => {
                m.input(p)?;
                Ok(formats::load_sentences(p)?)
            }
            None if a.n_distractors > 0 => Err(usage(
                "--n-distractors needs --effect-distractors and --cause-distractors",
            )),
            None => Ok(Vec::new()),
        }
    };
    let pools = AblationPools {
        effect_distractors: load_distractors(&a.effect_distractors)?,
        cause_distractors: load_distractors(&a.cause_distractors)?,
        n_distractors: a.n_distractors,
    };
    let mut cfg = a.model.train_config(a.betas[0]);
    cfg.validate()?;
    let (vocab, semantic) = a.model.semantic(&split.train, &mut cfg, &mut m)?;
    let rows = beta_ablation(&split, &semantic, &vocab, &cfg, &a.betas, &pools, &a.ks)?;
    let table = AblationTable::new(&rows, &a.ks, a.n_distractors, a.model.seed);
    write_json(&a.out, &table)?;
    println!("beta      c2e H@1  c2e+ H@1  e2c H@1  e2c+ H@1");
    for r in &rows {
        println!(
            "{:<8}  {:>7.4}  {:>8.4}  {:>7.4}  {:>8.4}",
            r.beta,
            r.cause_to_effect.in_split.hit_at(1),
            r.cause_to_effect.augmented.hit_at(1),
            r.effect_to_cause.in_split.hit_at(1),
            r.effect_to_cause.augmented.hit_at(1),
        );
    }
    finish_manifest(m, &a.manifest, &a.out, &[&a.out])
}

fn cmd_export(a: &ExportArgs, mut m: RunManifest) -> Result<()> {
    m.input(&a.checkpoint)?;
    m.input(&a.pairs)?;
    let ckpt = checkpoint::load(&a.checkpoint)?;
    m.seeds.push(ckpt.meta.seed);
    let pairs = formats::load_pairs(&a.pairs)?;
    pipeline::export_tsv(&a.out, &pairs, &ckpt, a.max_len)?;
    finish_manifest(m, &a.manifest, &a.out, &[&a.out])
}

/// Runs a parsed command. `flags` are the raw arguments after the subcommand.
pub fn run(cli: &Cli, flags: &[String]) -> Result<()> {
    let m = RunManifest::new(cli.command.name(), flags);
    match &cli.command {
        Command::Synth(a) => cmd_synth(a, m),
        Command::Prepare(a) => cmd_prepare(a, m),
        Command::Train(a) => cmd_train(a, m),
        Command::Embed(a) => cmd_embed(a, m),
        Command::Index(a) => cmd_index(a, m),
        Command::Retrieve(a) => cmd_retrieve(a, m),
        Command::Eval(a) => cmd_eval(a, m),
        Command::Ablate(a) => cmd_ablate(a, m),
        Command::ExportEmbeddings(a) => cmd_export(a, m),
    }
}

/// Exit status for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<causal_core::Error>() {
            return match e {
                causal_core::Error::NonFinite(_) => EXIT_NUMERIC,
                causal_core::Error::InvalidConfig(_) => EXIT_USAGE,
                _ => EXIT_DATA,
            };
        }
        if cause.downcast_ref::<FormatError>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return EXIT_DATA;
        }
    }
    1
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit status.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let name = cli.command.name();
    let flags: Vec<String> = args
        .iter()
        .skip(1)
        .skip_while(|a| a.as_str() != name)
        .skip(1)
        .cloned()
        .collect();
    match run(&cli, &flags) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
