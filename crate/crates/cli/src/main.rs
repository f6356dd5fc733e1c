//! `vrt`: operator surface for the retrieval engine. Subcommands cover
//! embedding, indexing, search, re-ranking, moment localization, composed
//! retrieval, toy training, and evaluation; pipelines compose via files.

mod formats;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind as ClapErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use formats::{
    read_manifest, read_moment_gt, read_rankings, read_retrieval_gt, read_windows, WindowsLine,
};
use vrt_core::composed::composed_retrieve;
use vrt_core::eval::{
    emit_report, mean_iou, moment_recall, recall_at_k, MetricRecord, ReportFormat,
};
use vrt_core::index::{build_index, DenseIndex};
use vrt_core::model::{CorpusItem, EmbeddingVector, ItemKind, QueryKind, QuerySpec};
use vrt_core::moment::{localize, MomentConfig};
use vrt_core::objectives::{JointLossWeights, MinerConfig};
use vrt_core::pipeline::{
    rerank, retrieve_batch, CandidateScorer, PipelineConfig, RemoteScorer, ToyCandidateScorer,
};
use vrt_core::provider::remote::{HttpConfig, RemoteProvider};
use vrt_core::provider::store::{read_store, write_store};
use vrt_core::provider::synthetic::{synthetic_pair, SyntheticProvider, SyntheticWorld};
use vrt_core::provider::{prompts, EmbedRequest, EmbeddingProvider, FileStoreProvider};
use vrt_core::trainer::{
    train_embedder, train_reranker, EpochStat, LinearAdapter, RerankTrainExample, ToyScorer,
    TrainConfig,
};

/// Error that should exit with the usage code instead of the runtime code.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

macro_rules! bail_usage {
    ($($arg:tt)*) => {
        return Err(anyhow::Error::new(UsageError(format!($($arg)*))))
    };
}

#[derive(Parser)]
#[command(name = "vrt", version, about = "Video retrieval and moment localization engine")]
struct Cli {
    /// JSON config file; command-line flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for all randomized behavior.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Cap on concurrent provider requests.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Embed a manifest of items into a binary store.
    Embed(EmbedArgs),
    /// Normalize a store into a search-ready index store.
    BuildIndex(BuildIndexArgs),
    /// Top-K cosine search, with dual-softmax re-ordering for query batches.
    Search(SearchArgs),
    /// Reorder candidate lists with a pointwise scorer.
    Rerank(RerankArgs),
    /// Localize the moments of a video matching a text query.
    Localize(LocalizeArgs),
    /// Composed (video + modification) retrieval.
    Compose(ComposeArgs),
    /// Train the toy adapter and scorer on a synthetic world.
    TrainToy(TrainToyArgs),
    /// Compute retrieval or moment metrics against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum ProviderKind {
    Synthetic,
    File,
    Remote,
}

#[derive(Args, Clone)]
struct ProviderArgs {
    /// Embedding backend.
    #[arg(long, value_enum)]
    provider: Option<ProviderKind>,
    /// Remote embedding service endpoint.
    #[arg(long)]
    endpoint: Option<String>,
    /// Backing store for the file provider.
    #[arg(long)]
    provider_store: Option<PathBuf>,
    /// Synthetic world latent dimension.
    #[arg(long)]
    latent_dim: Option<usize>,
    /// Synthetic world raw (output) dimension.
    #[arg(long)]
    raw_dim: Option<usize>,
    /// Synthetic world noise sigma.
    #[arg(long)]
    noise: Option<f64>,
    /// Synthetic world concept count.
    #[arg(long)]
    concepts: Option<usize>,
    /// Drop modification text from composed queries (ablation).
    #[arg(long)]
    ignore_modification: bool,
}

/// Optional values loaded from --config; flags win over these.
#[derive(Debug, Default, Deserialize)]
struct FileConfig {
    seed: Option<u64>,
    k: Option<usize>,
    provider: Option<ProviderKind>,
    endpoint: Option<String>,
    provider_store: Option<PathBuf>,
    dual_softmax: Option<bool>,
    ds_temperature: Option<f64>,
    jobs: Option<usize>,
    world: Option<SyntheticWorld>,
    stage2_world: Option<SyntheticWorld>,
    train: Option<TrainOverrides>,
    miner: Option<MinerConfig>,
    weights: Option<JointLossWeights>,
    moment: Option<MomentOverrides>,
    task: Option<TrainTask>,
}

#[derive(Debug, Default, Clone, Deserialize)]
struct TrainOverrides {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    step_size: Option<f64>,
    emb_dim: Option<usize>,
    temperature: Option<f64>,
    holdout_fraction: Option<f64>,
}

impl TrainOverrides {
    fn apply(&self, seed: u64, stage2_world: Option<SyntheticWorld>) -> TrainConfig {
        let d = TrainConfig::default();
        TrainConfig {
            epochs: self.epochs.unwrap_or(d.epochs),
            batch_size: self.batch_size.unwrap_or(d.batch_size),
            step_size: self.step_size.unwrap_or(d.step_size),
            seed,
            emb_dim: self.emb_dim.unwrap_or(d.emb_dim),
            temperature: self.temperature.unwrap_or(d.temperature),
            holdout_fraction: self.holdout_fraction.unwrap_or(d.holdout_fraction),
            stage2_world,
        }
    }
}

#[derive(Debug, Default, Clone, Deserialize)]
struct MomentOverrides {
    smooth_sigma: Option<f64>,
    beta: Option<f64>,
    alpha: Option<f64>,
    nms_iou: Option<f64>,
    max_windows: Option<usize>,
    min_window_frames: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum TrainTask {
    Embedder,
    Reranker,
}

/// Everything a subcommand needs from global flags plus the config file.
struct Ctx {
    config: FileConfig,
    seed: u64,
    jobs: usize,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let config = match &cli.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                serde_json::from_str(&text)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => FileConfig::default(),
        };
        let seed = cli.seed.or(config.seed).unwrap_or(0);
        let jobs = cli.jobs.or(config.jobs).unwrap_or(4);
        Ok(Self { config, seed, jobs })
    }

    fn provider(&self, args: &ProviderArgs) -> Result<Box<dyn EmbeddingProvider>> {
        let kind = args
            .provider
            .or(self.config.provider)
            .unwrap_or(ProviderKind::Synthetic);
        match kind {
            ProviderKind::Synthetic => {
                let world = if let Some(w) = &self.config.world {
                    w.clone()
                } else {
                    SyntheticWorld::new(
                        self.seed,
                        args.latent_dim.unwrap_or(16),
                        args.raw_dim.unwrap_or(32),
                        args.noise.unwrap_or(0.1),
                        args.concepts.unwrap_or(256),
                    )
                };
                Ok(Box::new(if args.ignore_modification {
                    SyntheticProvider::ignoring_modification(world)
                } else {
                    SyntheticProvider::new(world)
                }))
            }
            ProviderKind::File => {
                let path = args
                    .provider_store
                    .clone()
                    .or_else(|| self.config.provider_store.clone());
                let Some(path) = path else {
                    bail_usage!("--provider file requires --provider-store");
                };
                Ok(Box::new(FileStoreProvider::open(&path)?))
            }
            ProviderKind::Remote => {
                let endpoint = args
                    .endpoint
                    .clone()
                    .or_else(|| self.config.endpoint.clone());
                let Some(endpoint) = endpoint else {
                    bail_usage!("--provider remote requires --endpoint");
                };
                let http = HttpConfig {
                    max_in_flight: self.jobs,
                    ..HttpConfig::default()
                };
                Ok(Box::new(RemoteProvider::with_config(endpoint, http, 32)))
            }
        }
    }

    fn moment_config(&self, args: &LocalizeArgs) -> MomentConfig {
        let file = self.config.moment.clone().unwrap_or_default();
        let d = MomentConfig::default();
        MomentConfig {
            smooth_sigma: args.sigma.or(file.smooth_sigma).unwrap_or(d.smooth_sigma),
            beta: args.beta.or(file.beta).unwrap_or(d.beta),
            alpha: args.alpha.or(file.alpha).unwrap_or(d.alpha),
            nms_iou: args.nms_iou.or(file.nms_iou).unwrap_or(d.nms_iou),
            max_windows: args.max_windows.or(file.max_windows).unwrap_or(d.max_windows),
            min_window_frames: args
                .min_window_frames
                .or(file.min_window_frames)
                .unwrap_or(d.min_window_frames),
        }
    }
}

#[derive(Args)]
struct EmbedArgs {
    /// JSONL manifest of items to embed.
    #[arg(long)]
    manifest: PathBuf,
    /// Output VRTEMB01 store.
    #[arg(long)]
    out: PathBuf,
    /// Prompt id applied to every item (default: per-kind prompt).
    #[arg(long)]
    prompt: Option<String>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct BuildIndexArgs {
    /// Input store.
    #[arg(long)]
    store: PathBuf,
    /// Output normalized index store.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SearchArgs {
    /// Index (or plain) store to search.
    #[arg(long)]
    index: PathBuf,
    /// Results per query.
    #[arg(short, long)]
    k: Option<usize>,
    /// JSONL manifest of queries (batch mode).
    #[arg(long, conflicts_with = "query_text")]
    queries: Option<PathBuf>,
    /// Single ad-hoc text query.
    #[arg(long)]
    query_text: Option<String>,
    /// Id reported for the ad-hoc query.
    #[arg(long, requires = "query_text")]
    query_id: Option<String>,
    /// Toggle dual-softmax re-ordering for query batches.
    #[arg(long)]
    dual_softmax: Option<bool>,
    /// Dual-softmax sharpness.
    #[arg(long)]
    ds_temperature: Option<f64>,
    /// Output rankings JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct RerankArgs {
    /// Candidate rankings JSONL from `search`.
    #[arg(long)]
    candidates: PathBuf,
    /// JSONL manifest resolving each query id to its spec.
    #[arg(long)]
    queries: PathBuf,
    /// Store with candidate embeddings (toy scorer).
    #[arg(long)]
    store: Option<PathBuf>,
    /// Scorer backend.
    #[arg(long, value_enum, default_value = "toy")]
    scorer: ScorerBackendKind,
    /// Toy model JSON produced by `train-toy`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output rankings JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerBackendKind {
    Toy,
    Remote,
}

#[derive(Args)]
struct LocalizeArgs {
    /// Store holding the video's frame embeddings, in temporal order.
    #[arg(long)]
    frames_store: PathBuf,
    /// Only frames whose id starts with this prefix.
    #[arg(long)]
    frames_prefix: Option<String>,
    /// Text query to localize.
    #[arg(long)]
    query_text: String,
    /// Id reported for the query.
    #[arg(long)]
    query_id: Option<String>,
    /// Seconds between sampled frames.
    #[arg(long)]
    hop: Option<f64>,
    /// Video duration in seconds (default: frames × hop).
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    nms_iou: Option<f64>,
    #[arg(long)]
    max_windows: Option<usize>,
    #[arg(long)]
    min_window_frames: Option<usize>,
    /// Output windows JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct ComposeArgs {
    /// Comma-separated source video frame refs.
    #[arg(long, value_delimiter = ',')]
    frames: Vec<String>,
    /// Modification text.
    #[arg(long)]
    modification: String,
    /// Corpus store to search.
    #[arg(long)]
    index: PathBuf,
    #[arg(short, long)]
    k: Option<usize>,
    /// Id reported for the query.
    #[arg(long)]
    query_id: Option<String>,
    /// Output ranking JSONL (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    provider: ProviderArgs,
}

#[derive(Args)]
struct TrainToyArgs {
    /// embedder trains the adapter; reranker also trains the scorer head.
    #[arg(long, value_enum)]
    task: Option<TrainTask>,
    /// Output model JSON.
    #[arg(long)]
    out_model: PathBuf,
    /// Output history JSONL.
    #[arg(long)]
    history: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Metric family.
    #[arg(long, value_enum)]
    task: EvalTask,
    /// Rankings JSONL (retrieval).
    #[arg(long)]
    rankings: Option<PathBuf>,
    /// Windows JSONL (moment).
    #[arg(long)]
    windows: Option<PathBuf>,
    /// Ground-truth JSONL.
    #[arg(long)]
    gt: PathBuf,
    /// Recall cutoffs.
    #[arg(short, long, value_delimiter = ',')]
    k: Vec<usize>,
    /// IoU thresholds (moment).
    #[arg(long, value_delimiter = ',')]
    iou: Vec<f64>,
    /// Report format.
    #[arg(long, value_enum, default_value = "csv")]
    format: ReportFormatArg,
    /// Output report file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalTask {
    Retrieval,
    Moment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormatArg {
    Csv,
    Json,
}

/// Serialized toy model: adapter always present, scorer for reranker runs.
#[derive(Serialize, Deserialize)]
struct ToyModelFile {
    adapter: LinearAdapter,
    #[serde(skip_serializing_if = "Option::is_none")]
    scorer: Option<ToyScorer>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ClapErrorKind::DisplayHelp | ClapErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::load(&cli)?;
    match &cli.command {
        Command::Embed(args) => cmd_embed(&ctx, args),
        Command::BuildIndex(args) => cmd_build_index(args),
        Command::Search(args) => cmd_search(&ctx, args),
        Command::Rerank(args) => cmd_rerank(&ctx, args),
        Command::Localize(args) => cmd_localize(&ctx, args),
        Command::Compose(args) => cmd_compose(&ctx, args),
        Command::TrainToy(args) => cmd_train_toy(&ctx, args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn item_kind(kind: QueryKind) -> ItemKind {
    match kind {
        QueryKind::Text => ItemKind::Text,
        QueryKind::Video | QueryKind::Composed => ItemKind::Video,
    }
}

fn cmd_embed(ctx: &Ctx, args: &EmbedArgs) -> Result<()> {
    let manifest = read_manifest(&args.manifest)?;
    let provider = ctx.provider(&args.provider)?;

    // group items by prompt, embed, reassemble in manifest order
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, item) in manifest.iter().enumerate() {
        let prompt = args
            .prompt
            .clone()
            .unwrap_or_else(|| prompts::default_for(item.kind).to_string());
        groups.entry(prompt).or_default().push(i);
    }
    let mut embeddings: Vec<Option<EmbeddingVector>> = vec![None; manifest.len()];
    for (prompt, indices) in groups {
        let specs: Vec<QuerySpec> = indices.iter().map(|&i| manifest[i].spec()).collect();
        let out = provider.embed(&EmbedRequest::new(specs, prompt))?;
        for (&i, vector) in indices.iter().zip(out) {
            embeddings[i] = Some(vector);
        }
    }

    let mut items: Vec<CorpusItem> = manifest
        .iter()
        .zip(embeddings)
        .map(|(m, v)| CorpusItem::new(m.id.clone(), item_kind(m.kind), v.expect("embedded above")))
        .collect();
    let uniform = items
        .windows(2)
        .all(|w| w[0].embedding.is_normalized() == w[1].embedding.is_normalized());
    if !uniform {
        eprintln!("note: mixed normalization flags; storing all records unflagged");
        for item in items.iter_mut() {
            item.embedding = EmbeddingVector::new(item.embedding.values().to_vec())?;
        }
    }
    write_store(&args.out, &items)?;
    eprintln!("wrote {} records to {}", items.len(), args.out.display());
    Ok(())
}

fn cmd_build_index(args: &BuildIndexArgs) -> Result<()> {
    let items = read_store(&args.store)?;
    let index = build_index(&items)?;
    let normalized: Vec<CorpusItem> = (0..index.len())
        .map(|i| {
            CorpusItem::new(
                index.ids()[i].clone(),
                ItemKind::Video,
                EmbeddingVector::from_f32(index.row(i), true).expect("rows are unit"),
            )
        })
        .collect();
    write_store(&args.out, &normalized)?;
    eprintln!(
        "indexed {} rows of dim {} into {}",
        index.len(),
        index.dim(),
        args.out.display()
    );
    Ok(())
}

fn load_index(path: &Path) -> Result<DenseIndex> {
    let items = read_store(path).with_context(|| format!("reading store {}", path.display()))?;
    Ok(build_index(&items)?)
}

fn write_or_print(path: Option<&PathBuf>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).with_context(|| format!("writing {}", p.display())),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
            Ok(())
        }
    }
}

fn rankings_bytes(lists: &[vrt_core::model::RankedList]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    for list in lists {
        serde_json::to_writer(&mut buf, &formats::RankingLine::from(list))?;
        buf.push(b'\n');
    }
    Ok(buf)
}

fn cmd_search(ctx: &Ctx, args: &SearchArgs) -> Result<()> {
    let index = load_index(&args.index)?;
    let provider = ctx.provider(&args.provider)?;
    let queries: Vec<(String, QuerySpec)> = match (&args.queries, &args.query_text) {
        (Some(path), None) => read_manifest(path)?
            .iter()
            .map(|m| (m.id.clone(), m.spec()))
            .collect(),
        (None, Some(text)) => {
            let id = args.query_id.clone().unwrap_or_else(|| text.clone());
            vec![(id, QuerySpec::text(text.clone()))]
        }
        _ => bail_usage!("search needs exactly one of --queries or --query-text"),
    };
    let cfg = PipelineConfig {
        k_candidates: args.k.or(ctx.config.k).unwrap_or(50),
        use_dual_softmax: args
            .dual_softmax
            .or(ctx.config.dual_softmax)
            .unwrap_or(true),
        ds_temperature: args
            .ds_temperature
            .or(ctx.config.ds_temperature)
            .unwrap_or(100.0),
        ..PipelineConfig::default()
    };
    let lists = retrieve_batch(&index, &queries, provider.as_ref(), &cfg, None)?;
    write_or_print(args.out.as_ref(), &rankings_bytes(&lists)?)
}

fn cmd_rerank(ctx: &Ctx, args: &RerankArgs) -> Result<()> {
    let candidates = read_rankings(&args.candidates)?;
    let manifest = read_manifest(&args.queries)?;
    let specs: HashMap<&str, QuerySpec> = manifest
        .iter()
        .map(|m| (m.id.as_str(), m.spec()))
        .collect();

    let provider;
    let embeddings;
    let model;
    let scorer: Box<dyn CandidateScorer> = match args.scorer {
        ScorerBackendKind::Toy => {
            let Some(store_path) = &args.store else {
                bail_usage!("--scorer toy requires --store with candidate embeddings");
            };
            let Some(model_path) = &args.model else {
                bail_usage!("--scorer toy requires --model from train-toy");
            };
            let text = std::fs::read_to_string(model_path)
                .with_context(|| format!("reading model {}", model_path.display()))?;
            let parsed: ToyModelFile = serde_json::from_str(&text)
                .with_context(|| format!("parsing model {}", model_path.display()))?;
            model = parsed;
            let Some(scorer_head) = &model.scorer else {
                bail!(
                    "model {} has no scorer head; run train-toy --task reranker",
                    model_path.display()
                );
            };
            provider = ctx.provider(&args.provider)?;
            embeddings = read_store(store_path)?
                .into_iter()
                .map(|item| (item.id, item.embedding))
                .collect::<HashMap<_, _>>();
            Box::new(ToyCandidateScorer {
                scorer: scorer_head,
                provider: provider.as_ref(),
                candidate_embeddings: &embeddings,
                adapter: Some(&model.adapter),
            })
        }
        ScorerBackendKind::Remote => {
            let endpoint = args
                .provider
                .endpoint
                .clone()
                .or_else(|| ctx.config.endpoint.clone());
            let Some(endpoint) = endpoint else {
                bail_usage!("--scorer remote requires --endpoint");
            };
            let http = HttpConfig {
                max_in_flight: ctx.jobs,
                ..HttpConfig::default()
            };
            Box::new(RemoteScorer::with_config(endpoint, http))
        }
    };

    let mut out_lists = Vec::with_capacity(candidates.len());
    for list in &candidates {
        let spec = specs.get(list.query_id.as_str()).ok_or_else(|| {
            anyhow!("query {} missing from the --queries manifest", list.query_id)
        })?;
        out_lists.push(rerank(list, spec, scorer.as_ref())?);
    }
    write_or_print(args.out.as_ref(), &rankings_bytes(&out_lists)?)
}

fn cmd_localize(ctx: &Ctx, args: &LocalizeArgs) -> Result<()> {
    let provider = ctx.provider(&args.provider)?;
    let all_frames = read_store(&args.frames_store)?;
    let frames: Vec<EmbeddingVector> = all_frames
        .into_iter()
        .filter(|item| {
            args.frames_prefix
                .as_deref()
                .is_none_or(|p| item.id.starts_with(p))
        })
        .map(|item| item.embedding)
        .collect();
    if frames.is_empty() {
        bail!("no frames matched in {}", args.frames_store.display());
    }
    let query = vrt_core::provider::embed_one(
        provider.as_ref(),
        &QuerySpec::text(args.query_text.clone()),
    )?;
    let hop = args.hop.unwrap_or(1.0);
    let duration = args.duration.unwrap_or(hop * frames.len() as f64);
    let cfg = ctx.moment_config(args);
    let windows = localize(&query, &frames, hop, duration, &cfg)?;
    let line = WindowsLine {
        query_id: args
            .query_id
            .clone()
            .unwrap_or_else(|| args.query_text.clone()),
        windows,
    };
    let mut buf = serde_json::to_vec(&line)?;
    buf.push(b'\n');
    write_or_print(args.out.as_ref(), &buf)
}

fn cmd_compose(ctx: &Ctx, args: &ComposeArgs) -> Result<()> {
    if args.frames.is_empty() || args.modification.is_empty() {
        bail_usage!("compose requires --frames and a non-empty --modification");
    }
    let provider = ctx.provider(&args.provider)?;
    let index = load_index(&args.index)?;
    let spec =
        vrt_core::composed::build_composed_spec(args.frames.clone(), args.modification.clone())?;
    let query_id = args.query_id.clone().unwrap_or_else(|| "composed".into());
    let k = args.k.or(ctx.config.k).unwrap_or(50);
    let list = composed_retrieve(&index, &query_id, &spec, provider.as_ref(), k)?;
    write_or_print(args.out.as_ref(), &rankings_bytes(std::slice::from_ref(&list))?)
}

fn write_history(path: Option<&PathBuf>, history: &[EpochStat]) -> Result<()> {
    let Some(path) = path else { return Ok(()) };
    let mut out = String::new();
    for stat in history {
        out.push_str(&serde_json::to_string(stat)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing history {}", path.display()))
}

fn cmd_train_toy(ctx: &Ctx, args: &TrainToyArgs) -> Result<()> {
    let Some(world) = ctx.config.world.clone() else {
        bail_usage!("train-toy requires a config file with a \"world\" section");
    };
    let train = ctx
        .config
        .train
        .clone()
        .unwrap_or_default()
        .apply(ctx.seed, ctx.config.stage2_world.clone());
    let task = args.task.or(ctx.config.task).unwrap_or(TrainTask::Embedder);

    let (adapter, mut history) = train_embedder(&world, &train)?;
    let mut model = ToyModelFile {
        adapter,
        scorer: None,
    };

    if task == TrainTask::Reranker {
        let miner = ctx.config.miner.clone().unwrap_or_default();
        let weights = ctx.config.weights.unwrap_or_default();
        let holdout = ((world.num_concepts as f64 * train.holdout_fraction).round() as usize)
            .min(world.num_concepts);
        let train_count = world.num_concepts - holdout;
        let mut examples = Vec::with_capacity(train_count);
        let mut candidates = Vec::with_capacity(world.num_concepts);
        for i in 0..world.num_concepts {
            let (q, c) = synthetic_pair(&world, i)?;
            let cid = format!("concept:{i}/view:c");
            candidates.push((cid.clone(), model.adapter.apply(&c)?));
            if i < train_count {
                examples.push(RerankTrainExample {
                    query: model.adapter.apply(&q)?,
                    gt_id: cid,
                });
            }
        }
        let items: Vec<CorpusItem> = candidates
            .iter()
            .map(|(id, v)| CorpusItem::new(id.clone(), ItemKind::Video, v.clone()))
            .collect();
        let index = build_index(&items)?;
        let (scorer, scorer_history) =
            train_reranker(&examples, &candidates, &index, &miner, &weights, &train)?;
        let offset = history.len();
        history.extend(scorer_history.into_iter().map(|s| EpochStat {
            epoch: offset + s.epoch,
            ..s
        }));
        model.scorer = Some(scorer);
    }

    let json = serde_json::to_string_pretty(&model)?;
    std::fs::write(&args.out_model, json)
        .with_context(|| format!("writing model {}", args.out_model.display()))?;
    write_history(args.history.as_ref(), &history)?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained: final loss {:.6}{}",
            last.loss,
            last.r_at_1
                .map(|r| format!(", r_at_1 {r:.3}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut metrics = Vec::new();
    match args.task {
        EvalTask::Retrieval => {
            let Some(rankings_path) = &args.rankings else {
                bail_usage!("--task retrieval requires --rankings");
            };
            let rankings = read_rankings(rankings_path)?;
            let gt = read_retrieval_gt(&args.gt)?;
            let ks = if args.k.is_empty() {
                vec![1, 5, 10]
            } else {
                args.k.clone()
            };
            for k in ks {
                let value = recall_at_k(&rankings, &gt, k)?;
                metrics.push(MetricRecord::new("retrieval", "recall", Some(k), None, value));
            }
        }
        EvalTask::Moment => {
            let Some(windows_path) = &args.windows else {
                bail_usage!("--task moment requires --windows");
            };
            let lines = read_windows(windows_path)?;
            let predictions: BTreeMap<String, Vec<vrt_core::model::MomentWindow>> = lines
                .into_iter()
                .map(|l| (l.query_id, l.windows))
                .collect();
            let gt = read_moment_gt(&args.gt)?;
            let k = args.k.first().copied().unwrap_or(1);
            let ious = if args.iou.is_empty() {
                vec![0.3, 0.5, 0.7]
            } else {
                args.iou.clone()
            };
            for iou in ious {
                let value = moment_recall(&predictions, &gt, iou, k)?;
                metrics.push(MetricRecord::new(
                    "moment",
                    "recall",
                    Some(k),
                    Some(iou),
                    value,
                ));
            }
            let value = mean_iou(&predictions, &gt)?;
            metrics.push(MetricRecord::new("moment", "miou", None, None, value));
        }
    }
    let format = match args.format {
        ReportFormatArg::Csv => ReportFormat::Csv,
        ReportFormatArg::Json => ReportFormat::Json,
    };
    let bytes = emit_report(&metrics, format)?;
    write_or_print(args.out.as_ref(), &bytes)
}
