//! The `kgrec` command line. Every subcommand is an ordinary function over
//! parsed arguments, so the binary only parses `argv` and maps errors to exit
//! codes: 0 on success, 1 on usage errors, 2 on data errors.
//!
//! Each run writes `<out>.run.json` (or `run.json` inside an output
//! directory) echoing the resolved configuration.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::context::{fit_context, ContextOptions, ContextStats};
use crate::eval::{all_links, evaluate_dataset, observed_links, rank_links, EvalMode, Link, LinkQuery};
use crate::formats::{self, FormatError};
use crate::graph::{self, load_triples, make_splits, transitive_expand, TripleStore, DEFAULT_TRANSITIVE};
use crate::image::{train_embedder, Activation, EmbedderConfig, ImageEmbedder, LabeledFeature};
use crate::kg::{train, KgModel, ModelConfig, Variant};
use crate::optim::OptimizerKind;
use crate::pca::pca_project;

/// Offsets added to `--seed` by stages that draw random numbers besides
/// their main task, so one seed can drive a whole pipeline.
pub const CONTEXT_SEED_OFFSET: u64 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

macro_rules! data_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}

data_error_from!(
    FormatError,
    graph::GraphError,
    crate::kg::KgError,
    crate::image::ImageError,
    crate::context::ContextError,
    crate::eval::EvalError,
    crate::pca::PcaError
);

type Result<T, E = CliError> = std::result::Result<T, E>;

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Data(format!("{}: {e}", path.display()))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("missing file: {}", path.display())))
    }
}

#[derive(Debug, Parser)]
#[command(name = "kgrec", version, about = "Knowledge-graph embeddings and open-world link prediction for images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Generate a toy taxonomy with random part links.
    GenToy(GenToyArgs),
    /// Add transitive closures of the chosen relations up to a path length.
    Expand(ExpandArgs),
    /// Split triples into train, standard test and hard (held-out) test.
    Split(SplitArgs),
    /// Train a graph embedding (TransE, NTL or SNTL).
    TrainKg(TrainKgArgs),
    /// Train the image embedding onto a model's entity vectors.
    TrainImg(TrainImgArgs),
    /// Fit attention counts and score distributions for re-scoring.
    FitContext(FitContextArgs),
    /// Rank links for labelled feature vectors and report metrics.
    Eval(EvalArgs),
    /// Rank links for feature vectors, including unlabelled (`?`) images.
    Predict(PredictArgs),
    /// Project entity or image vectors onto principal components.
    Project(ProjectArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenToyArgs {
    #[arg(long, default_value_t = 3)]
    pub branching: usize,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 40)]
    pub meronyms: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ExpandArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Comma-separated relations to close; defaults to hypernym, hyponym,
    /// part_meronym and part_holonym (those absent from the input are skipped).
    #[arg(long, value_delimiter = ',')]
    pub relations: Option<Vec<String>>,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Entity labels to hold out, one per line (`#` starts a comment).
    #[arg(long)]
    pub holdout_file: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    pub test_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainKgArgs {
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value = "sntl")]
    pub variant: Variant,
    #[arg(long, default_value_t = 60)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub slices: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Standard deviation of the SNTL entity perturbation.
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value = "gd")]
    pub optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Freeze the slice combination at all ones (plain sum of slices).
    #[arg(long)]
    pub sum_slices: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainImgArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    /// Comma-separated hidden widths; `none` for a single linear layer.
    #[arg(long, default_value = "256")]
    pub hidden: String,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value = "tanh")]
    pub activation: Activation,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitContextArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training triples the model was fitted on.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub false_sample: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fit score distributions per relation instead of globally.
    #[arg(long)]
    pub per_relation: bool,
    /// Laplace pseudo-count for attention (0 disables).
    #[arg(long, default_value_t = 0.0)]
    pub laplace: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Feature file of labelled query vectors.
    #[arg(long)]
    pub queries: PathBuf,
    /// Image embedder; without it the query vectors are used as-is.
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    /// Triple files giving the true links of each label (repeatable).
    #[arg(long, required = true)]
    pub truth: Vec<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    /// Collapse queries of the same label into their normalized mean.
    #[arg(long)]
    pub per_class: bool,
    /// Only rank `(r, e)` pairs observed as relation/tail in these triples.
    #[arg(long)]
    pub restrict_tails: Option<PathBuf>,
    /// Per-candidate ranking CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub summary: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    /// Collapse labelled images by class mean; `?` images stay individual.
    #[arg(long)]
    pub per_class: bool,
    #[arg(long)]
    pub restrict_tails: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    /// Project the model's entity vectors (or, with --features, use the
    /// model only for its dimension check).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Project feature vectors, embedded first when --embedder is given.
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub components: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    #[serde(skip_serializing_if = "Option::is_none")]
    resolved: Option<serde_json::Value>,
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn write_manifest(path: &Path, command: &Command, resolved: Option<serde_json::Value>) -> Result<()> {
    let manifest = RunManifest {
        tool: "kgrec",
        version: env!("CARGO_PKG_VERSION"),
        command,
        resolved,
    };
    formats::write_json(path, &manifest)?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the subcommand,
/// returning the process exit code. Errors go to stderr.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Caps rayon's global pool at `KGREC_THREADS` when set.
pub fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("KGREC_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| CliError::Usage(format!("KGREC_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::GenToy(a) => gen_toy(a, command),
        Command::Expand(a) => expand(a, command),
        Command::Split(a) => split(a, command),
        Command::TrainKg(a) => train_kg(a, command),
        Command::TrainImg(a) => train_img(a, command),
        Command::FitContext(a) => fit_context_cmd(a, command),
        Command::Eval(a) => eval(a, command),
        Command::Predict(a) => predict(a, command),
        Command::Project(a) => project(a, command),
    }
}

fn load_store(path: &Path) -> Result<TripleStore> {
    require_file(path)?;
    Ok(load_triples(path)?)
}

fn load_model(path: &Path) -> Result<KgModel> {
    require_file(path)?;
    Ok(formats::load_model(path)?)
}

fn gen_toy(a: &GenToyArgs, command: &Command) -> Result<()> {
    if a.branching < 1 || a.depth < 1 {
        return Err(CliError::Usage("--branching and --depth must be >= 1".into()));
    }
    let store = graph::gen_toy_graph(a.branching, a.depth, a.meronyms, a.seed)?;
    store.save(&a.out)?;
    log::info!("wrote {} triples to {}", store.len(), a.out.display());
    write_manifest(&manifest_path(&a.out), command, None)
}

fn expand(a: &ExpandArgs, command: &Command) -> Result<()> {
    if a.depth < 1 {
        return Err(CliError::Usage("--depth must be >= 1".into()));
    }
    let store = load_store(&a.input)?;
    let relations = match &a.relations {
        Some(labels) => store.resolve_relations(labels)?,
        None => DEFAULT_TRANSITIVE
            .iter()
            .filter_map(|r| store.relation_id(r))
            .collect(),
    };
    let expanded = transitive_expand(&store, &relations, a.depth)?;
    expanded.save(&a.out)?;
    log::info!("{} -> {} triples", store.len(), expanded.len());
    let names: Vec<&str> = relations.iter().map(|&r| store.relation_label(r)).collect();
    write_manifest(
        &manifest_path(&a.out),
        command,
        Some(serde_json::json!({ "relations": names, "input_triples": store.len(), "output_triples": expanded.len() })),
    )
}

fn read_label_list(path: &Path) -> Result<Vec<String>> {
    require_file(path)?;
    let file = File::open(path).map_err(io_error(path))?;
    let mut labels = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_error(path))?;
        let line = line.trim();
        if !line.is_empty() && !line.starts_with('#') {
            labels.push(line.to_owned());
        }
    }
    Ok(labels)
}

fn split(a: &SplitArgs, command: &Command) -> Result<()> {
    if !(0.0..=1.0).contains(&a.test_fraction) {
        return Err(CliError::Usage("--test-fraction must lie in [0, 1]".into()));
    }
    let store = load_store(&a.input)?;
    let holdout: BTreeSet<_> = match &a.holdout_file {
        Some(path) => store.resolve_entities(&read_label_list(path)?)?.into_iter().collect(),
        None => BTreeSet::new(),
    };
    let splits = make_splits(&store, &holdout, a.test_fraction, a.seed)?;
    formats::save_splits(&splits, a.seed, a.test_fraction, &a.out_dir)?;
    log::info!(
        "train {} / standard test {} / hard test {}",
        splits.train.len(),
        splits.standard_test.len(),
        splits.hard_test.len()
    );
    write_manifest(&a.out_dir.join("run.json"), command, None)
}

fn train_kg(a: &TrainKgArgs, command: &Command) -> Result<()> {
    let config = ModelConfig {
        dim: a.dim,
        slices: a.slices,
        gamma: a.gamma,
        alpha: a.alpha,
        noise: a.noise,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: a.optimizer,
        seed: a.seed,
        sum_slices: a.sum_slices,
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let store = load_store(&a.train)?;
    let model = KgModel::init(a.variant, config.clone(), store.entities().clone(), store.relations().clone())?;
    let (model, report) = train(model, &store)?;
    formats::save_model(&model, &a.out)?;
    if let Some(path) = &a.report {
        fs::write(path, report.to_csv()).map_err(io_error(path))?;
    }
    log::info!(
        "loss {:.6} -> {:.6}",
        report.first().unwrap_or(f64::NAN),
        report.last().unwrap_or(f64::NAN)
    );
    write_manifest(
        &manifest_path(&a.out),
        command,
        Some(serde_json::json!({ "config": config, "final_loss": report.last() })),
    )
}

fn parse_hidden(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if spec.is_empty() || spec == "none" {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|w| {
            w.trim()
                .parse::<usize>()
                .ok()
                .filter(|&w| w > 0)
                .ok_or_else(|| CliError::Usage(format!("bad hidden width `{w}`")))
        })
        .collect()
}

fn train_img(a: &TrainImgArgs, command: &Command) -> Result<()> {
    let config = EmbedderConfig {
        hidden: parse_hidden(&a.hidden)?,
        activation: a.activation,
        dropout: a.dropout,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: a.seed,
    };
    if !(0.0..1.0).contains(&config.dropout) || config.batch_size == 0 {
        return Err(CliError::Usage("--dropout must lie in [0, 1) and --batch-size be >= 1".into()));
    }
    let model = load_model(&a.model)?;
    require_file(&a.features)?;
    let features = formats::load_features(&a.features)?;
    let (usable, skipped): (Vec<LabeledFeature>, Vec<LabeledFeature>) = features
        .records
        .into_iter()
        .partition(|r| r.is_labeled() && model.entities.get(&r.label).is_some());
    if !skipped.is_empty() {
        log::warn!("{} records are unlabelled or not model entities; skipped", skipped.len());
    }
    if usable.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no record is labelled with a model entity",
            a.features.display()
        )));
    }
    let (embedder, report) = train_embedder(&usable, &model.entities, &model.embedding, &config)?;
    formats::save_embedder(&embedder, &a.out)?;
    if let Some(path) = &a.report {
        let mut csv = String::from("epoch,loss\n");
        for (i, l) in report.losses.iter().enumerate() {
            csv.push_str(&format!("{i},{l}\n"));
        }
        fs::write(path, csv).map_err(io_error(path))?;
    }
    write_manifest(
        &manifest_path(&a.out),
        command,
        Some(serde_json::json!({
            "config": config,
            "records_used": usable.len(),
            "records_skipped": skipped.len(),
            "initial_loss": report.initial(),
            "final_loss": report.last(),
        })),
    )
}

/// Re-expresses a triple file over the model's vocabularies.
fn store_for_model(path: &Path, model: &KgModel) -> Result<TripleStore> {
    let source = load_store(path)?;
    let mut store = TripleStore::with_vocab(model.entities.clone(), model.relations.clone());
    for t in source.triples() {
        let (h, r, tl) = (
            source.entity_label(t.head),
            source.relation_label(t.relation),
            source.entity_label(t.tail),
        );
        let resolved = (model.entity_id(h), model.relation_id(r), model.entity_id(tl));
        let (Some(h), Some(r), Some(tl)) = resolved else {
            return Err(CliError::Data(format!(
                "{}: triple {h} {r} {tl} is not covered by the model",
                path.display()
            )));
        };
        store.insert(graph::Triple::new(h, r, tl))?;
    }
    Ok(store)
}

fn fit_context_cmd(a: &FitContextArgs, command: &Command) -> Result<()> {
    if !(a.laplace >= 0.0) {
        return Err(CliError::Usage("--laplace must be >= 0".into()));
    }
    let model = load_model(&a.model)?;
    let store = store_for_model(&a.train, &model)?;
    let mut rng = crate::seeded_rng(a.seed.wrapping_add(CONTEXT_SEED_OFFSET));
    let options = ContextOptions {
        per_relation: a.per_relation,
        laplace: a.laplace,
    };
    let stats = fit_context(&model, &store, a.false_sample, &mut rng, options)?;
    formats::save_context(&stats, &model, &a.out)?;
    write_manifest(&manifest_path(&a.out), command, None)
}

fn load_context(path: &Option<PathBuf>, model: &KgModel) -> Result<Option<ContextStats>> {
    match path {
        Some(p) => {
            require_file(p)?;
            Ok(Some(formats::load_context(p, model)?))
        }
        None => Ok(None),
    }
}

/// Feature records as semantic vectors, embedded when an embedder is given.
fn query_vectors(
    features_path: &Path,
    embedder_path: &Option<PathBuf>,
    model: &KgModel,
) -> Result<Vec<(LabeledFeature, Vec<f64>)>> {
    require_file(features_path)?;
    let features = formats::load_features(features_path)?;
    let embedder: Option<ImageEmbedder> = match embedder_path {
        Some(p) => {
            require_file(p)?;
            Some(formats::load_embedder(p)?)
        }
        None => None,
    };
    let expected = embedder.as_ref().map_or(model.dim(), ImageEmbedder::input_dim);
    if features.dim != expected {
        return Err(CliError::Data(format!(
            "{}: feature width {} does not match the expected {expected}",
            features_path.display(),
            features.dim
        )));
    }
    if let Some(e) = &embedder {
        if e.output_dim() != model.dim() {
            return Err(CliError::Data(format!(
                "embedder outputs {} dimensions, model uses {}",
                e.output_dim(),
                model.dim()
            )));
        }
    }
    features
        .records
        .into_iter()
        .map(|r| {
            let v = match &embedder {
                Some(e) => e.embed(&r.feature)?,
                None => r.feature.clone(),
            };
            Ok((r, v))
        })
        .collect()
}

fn candidate_links(restrict: &Option<PathBuf>, model: &KgModel) -> Result<Vec<Link>> {
    match restrict {
        Some(path) => Ok(observed_links(&store_for_model(path, model)?)),
        None => Ok(all_links(model)),
    }
}

/// True links per head label, resolved against the model; links whose
/// relation or tail the model lacks are dropped.
fn truth_by_label(paths: &[PathBuf], model: &KgModel) -> Result<HashMap<String, HashSet<Link>>> {
    let mut out: HashMap<String, HashSet<Link>> = HashMap::new();
    for path in paths {
        let store = load_store(path)?;
        for t in store.triples() {
            if let (Some(r), Some(e)) = (
                model.relation_id(store.relation_label(t.relation)),
                model.entity_id(store.entity_label(t.tail)),
            ) {
                out.entry(store.entity_label(t.head).to_owned()).or_default().insert((r, e));
            }
        }
    }
    Ok(out)
}

fn eval(a: &EvalArgs, command: &Command) -> Result<()> {
    if a.n < 1 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let model = load_model(&a.model)?;
    let context = load_context(&a.context, &model)?;
    let vectors = query_vectors(&a.queries, &a.embedder, &model)?;
    let candidates = candidate_links(&a.restrict_tails, &model)?;
    let candidate_set: HashSet<Link> = candidates.iter().copied().collect();
    let truth = truth_by_label(&a.truth, &model)?;

    let mut queries = Vec::new();
    let (mut unlabeled, mut without_truth, mut dropped_links) = (0usize, 0usize, 0usize);
    for (record, vector) in vectors {
        if !record.is_labeled() {
            unlabeled += 1;
            continue;
        }
        let Some(links) = truth.get(&record.label) else {
            without_truth += 1;
            continue;
        };
        let kept: HashSet<Link> = links.iter().copied().filter(|l| candidate_set.contains(l)).collect();
        dropped_links += links.len() - kept.len();
        if kept.is_empty() {
            without_truth += 1;
            continue;
        }
        queries.push(LinkQuery::new(record.image_id, vector, candidates.clone(), kept)?.with_class(record.label));
    }
    if unlabeled + without_truth > 0 {
        log::warn!("{unlabeled} unlabelled and {without_truth} unmatched queries excluded from metrics");
    }
    if dropped_links > 0 {
        log::warn!("{dropped_links} true links fall outside the candidate set");
    }
    if queries.is_empty() {
        return Err(CliError::Data("no query has a true link among the candidates".into()));
    }
    let mode = if a.per_class { EvalMode::PerClass } else { EvalMode::PerImage };
    let report = evaluate_dataset(&model, &queries, context.as_ref(), a.n, mode)?;
    if let Some(path) = &a.report {
        let file = File::create(path).map_err(io_error(path))?;
        let mut out = BufWriter::new(file);
        report.write_csv(&model, &mut out).map_err(io_error(path))?;
        out.flush().map_err(io_error(path))?;
    }
    formats::write_json(&a.summary, &report.summary())?;
    write_manifest(
        &manifest_path(&a.summary),
        command,
        Some(serde_json::json!({
            "queries": queries.len(),
            "excluded_unlabeled": unlabeled,
            "excluded_without_truth": without_truth,
            "candidates": candidates.len(),
        })),
    )
}

fn predict(a: &PredictArgs, command: &Command) -> Result<()> {
    if a.top < 1 {
        return Err(CliError::Usage("--top must be >= 1".into()));
    }
    let model = load_model(&a.model)?;
    let context = load_context(&a.context, &model)?;
    let vectors = query_vectors(&a.features, &a.embedder, &model)?;
    let candidates = candidate_links(&a.restrict_tails, &model)?;
    let queries: Vec<LinkQuery> = vectors
        .into_iter()
        .map(|(record, vector)| {
            let q = LinkQuery {
                query_id: record.image_id,
                class_label: None,
                vector,
                candidates: candidates.clone(),
                truth: HashSet::new(),
            };
            if a.per_class && record.label != crate::image::UNLABELED {
                q.with_class(record.label)
            } else {
                q
            }
        })
        .collect();
    let queries = if a.per_class {
        crate::eval::collapse_by_class(&queries)?
    } else {
        queries
    };

    let file = File::create(&a.out).map_err(io_error(&a.out))?;
    let mut out = BufWriter::new(file);
    let write_err = io_error(&a.out);
    writeln!(out, "query_id,rank,relation,entity,raw_score,u_score").map_err(&write_err)?;
    for q in &queries {
        let ranking = rank_links(&model, q, context.as_ref())?;
        for (i, l) in ranking.links.iter().take(a.top).enumerate() {
            let u = l.u_score.map(|u| u.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{}",
                q.query_id,
                i + 1,
                model.relations.label(l.relation.0),
                model.entities.label(l.entity.0),
                l.raw_score,
                u
            )
            .map_err(&write_err)?;
        }
    }
    out.flush().map_err(&write_err)?;
    write_manifest(
        &manifest_path(&a.out),
        command,
        Some(serde_json::json!({ "queries": queries.len(), "candidates": candidates.len() })),
    )
}

fn project(a: &ProjectArgs, command: &Command) -> Result<()> {
    let (ids, vectors): (Vec<String>, Vec<Vec<f64>>) = match (&a.model, &a.features) {
        (_, Some(features)) => {
            require_file(features)?;
            let embedder = match &a.embedder {
                Some(p) => {
                    require_file(p)?;
                    Some(formats::load_embedder(p)?)
                }
                None => None,
            };
            let file = formats::load_features(features)?;
            file.records
                .into_iter()
                .map(|r| {
                    let v = match &embedder {
                        Some(e) => e.embed(&r.feature)?,
                        None => r.feature,
                    };
                    Ok((r.image_id, v))
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip()
        }
        (Some(model), None) => {
            let model = load_model(model)?;
            (
                model.entities.labels().to_vec(),
                model.embedding.iter_rows().map(<[f64]>::to_vec).collect(),
            )
        }
        (None, None) => return Err(CliError::Usage("project needs --model or --features".into())),
    };
    if a.components < 1 {
        return Err(CliError::Usage("--components must be >= 1".into()));
    }
    let projection = pca_project(&vectors, a.components)?;
    let file = File::create(&a.out).map_err(io_error(&a.out))?;
    let mut out = BufWriter::new(file);
    formats::write_projection(&ids, &projection, &mut out).map_err(io_error(&a.out))?;
    out.flush().map_err(io_error(&a.out))?;
    write_manifest(
        &manifest_path(&a.out),
        command,
        Some(serde_json::json!({ "explained_variance": projection.explained })),
    )
}
