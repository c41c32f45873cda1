//! Command-line pipeline: build-lexicon, fit, analyze, correlate, report.
//!
//! Every subcommand reads the same configuration file and writes into one
//! output directory. Outputs depend only on inputs and configuration, so a
//! re-run rewrites byte-identical files.

pub mod config;
pub mod fixtures;

use std::collections::HashSet;
use std::fs::File;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use polident::analytics::{
    all_similarity_matrices, association_network, block_averages, classify_dimension, model_salience,
    pair_topic_rankings, top_features_by_side, within_country_lr, write_beta_csv, write_blocks_csv,
    write_feature_diffs_csv, write_lr_table_csv, write_network_edges_csv, write_network_graphml,
    write_pair_rankings_csv, write_salience_csv, write_similarity_long_csv, write_similarity_matrix_csv,
    write_theta_csv, GroupDistributions, SimilarityMatrix,
};
use polident::corpus::{read_records, read_vocabulary, write_vocabulary, Corpus};
use polident::groups::PolPos;
use polident::lexicon::{build_lexicon, read_annotated, SeedLexicon};
use polident::stats::{correlate, fitted_curve, grid_over, join_observations, read_country_values, write_curve_csv};
use polident::stm::{estimate_effects, fit, PrevalenceDesign, StmModel, RESIDUAL_TOPIC};
use serde::Serialize;
use thiserror::Error;

pub use config::PipelineConfig;

/// File names inside the output directory.
pub mod files {
    pub const VOCABULARY: &str = "vocabulary.tsv";
    pub const LEXICON: &str = "lexicon.json";
    pub const SEED_REPORT: &str = "seed_report.csv";
    pub const LEXICON_SUMMARY: &str = "lexicon_summary.json";
    pub const MODEL: &str = "model.json";
    pub const BOUND_TRACE: &str = "bound_trace.csv";
    pub const THETA: &str = "theta.csv";
    pub const EFFECTS: &str = "effects.csv";
    pub const FIT_SUMMARY: &str = "fit_summary.json";
    pub const ANALYSIS_DIR: &str = "analysis";
    pub const BETA: &str = "beta.csv";
    pub const SIMILARITY_LONG: &str = "similarity_long.csv";
    pub const SIMILARITY_DIR: &str = "similarity";
    pub const BLOCKS: &str = "blocks.csv";
    pub const SALIENCE: &str = "salience.csv";
    pub const FEATURE_DIFFS: &str = "feature_diffs.csv";
    pub const PAIRS_LEFT: &str = "pair_rankings_left.csv";
    pub const PAIRS_RIGHT: &str = "pair_rankings_right.csv";
    pub const WITHIN_LR: &str = "within_country_lr.csv";
    pub const COUNTRY_SIMILARITY: &str = "country_similarity.csv";
    pub const NETWORK_DIR: &str = "networks";
    pub const CORRELATION: &str = "correlation.json";
    pub const CURVE: &str = "curve.csv";
    pub const REPORT: &str = "report.tar";
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] polident::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {message}", path.display())]
    ConfigFile { path: PathBuf, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}

impl CliError {
    /// 2 for missing or malformed inputs and configuration, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_input_error() => 2,
            CliError::Core(_) | CliError::ThreadPool(_) => 1,
            CliError::Io { .. } | CliError::ConfigFile { .. } | CliError::Config(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "polident",
    version,
    about = "Seeded topic modeling of political self-descriptions"
)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Maximum worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for the EM initialization and the bootstrap.
    #[arg(long, global = true)]
    pub rng_seed: Option<u64>,
    /// Output directory (overrides the config and $POLIDENT_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the seed lexicon from annotated sentences against the corpus vocabulary.
    BuildLexicon(LexiconArgs),
    /// Fit the seeded topic model.
    Fit(FitArgs),
    /// Export all analytics tables from a fitted model.
    Analyze(AnalyzeArgs),
    /// Correlate country similarity with survey shares.
    Correlate(CorrelateArgs),
    /// Bundle the exported tables into one tar archive.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct LexiconArgs {
    /// Bios JSON lines.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Annotated sentences TSV.
    #[arg(long)]
    pub annotated: Option<PathBuf>,
    /// Topics with fewer annotated sentences are dropped.
    #[arg(long)]
    pub min_sentences: Option<usize>,
    /// Candidate features claimed per topic.
    #[arg(long)]
    pub per_topic: Option<usize>,
    /// Minimum TF-IDF of a kept seed.
    #[arg(long)]
    pub tfidf_min: Option<f64>,
    /// Minimum count of a seed in both corpora.
    #[arg(long)]
    pub min_count_each: Option<u64>,
    /// Topics left with fewer seeds are dropped.
    #[arg(long)]
    pub min_seeds: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Bios JSON lines.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Lexicon JSON; defaults to the one in the output directory.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    /// Relative bound change to stop at; "inf" stops after one iteration.
    #[arg(long, value_parser = parse_tolerance)]
    pub emtol: Option<f64>,
    /// Initial probability mass on each topic's seeds.
    #[arg(long)]
    pub seed_mass: Option<f64>,
    /// EM iteration cap.
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// L1 weight on the content deviations.
    #[arg(long)]
    pub kappa_l1: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Model JSON; defaults to the one in the output directory.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Top features per level in each association network.
    #[arg(long)]
    pub top_n: Option<usize>,
}

#[derive(Debug, Args)]
pub struct CorrelateArgs {
    /// CSV with columns country, similarity.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// CSV with columns country, conflict_share.
    #[arg(long)]
    pub survey: Option<PathBuf>,
    /// Bootstrap resamples.
    #[arg(long)]
    pub resamples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Archive path; defaults to report.tar in the output directory.
    #[arg(long)]
    pub archive: Option<PathBuf>,
}

fn parse_tolerance(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|e| format!("bad tolerance '{s}': {e}")),
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

/// Runs one invocation and returns the summary line printed on success.
pub fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.rng_seed {
        cfg.stm.rng_seed = seed;
        cfg.stats.rng_seed = seed;
    }
    let out = cfg.output_dir(cli.out.as_deref());
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::ThreadPool(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::BuildLexicon(a) => {
            set(&mut cfg.paths.corpus, a.corpus);
            set(&mut cfg.paths.annotated, a.annotated);
            set(&mut cfg.lexicon.min_sentences, a.min_sentences);
            set(&mut cfg.lexicon.per_topic, a.per_topic);
            set(&mut cfg.lexicon.tfidf_min, a.tfidf_min);
            set(&mut cfg.lexicon.min_count_each, a.min_count_each);
            set(&mut cfg.lexicon.min_seeds, a.min_seeds);
            cfg.validate()?;
            cmd_build_lexicon(&cfg, &out)
        }
        Command::Fit(a) => {
            set(&mut cfg.paths.corpus, a.corpus);
            set(&mut cfg.stm.emtol, a.emtol);
            set(&mut cfg.stm.seed_mass, a.seed_mass);
            set(&mut cfg.stm.max_iter, a.max_iter);
            set(&mut cfg.stm.kappa_l1, a.kappa_l1);
            cfg.validate()?;
            let lexicon = a.lexicon.unwrap_or_else(|| out.join(files::LEXICON));
            cmd_fit(&cfg, &out, &lexicon)
        }
        Command::Analyze(a) => {
            set(&mut cfg.analytics.top_n, a.top_n);
            cfg.validate()?;
            let model = a.model.unwrap_or_else(|| out.join(files::MODEL));
            cmd_analyze(&cfg, &out, &model)
        }
        Command::Correlate(a) => {
            set(&mut cfg.stats.resamples, a.resamples);
            cfg.validate()?;
            let similarity = a
                .similarity
                .or_else(|| cfg.paths.similarity.clone())
                .unwrap_or_else(|| out.join(files::ANALYSIS_DIR).join(files::COUNTRY_SIMILARITY));
            let survey = a
                .survey
                .or_else(|| cfg.paths.survey.clone())
                .ok_or_else(|| CliError::Config("no survey file given (--survey or paths.survey)".into()))?;
            cmd_correlate(&cfg, &out, &similarity, &survey)
        }
        Command::Report(a) => {
            let archive = a.archive.unwrap_or_else(|| out.join(files::REPORT));
            cmd_report(&out, &archive)
        }
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| polident::Error::Serialization(e.to_string()))?;
    s.push('\n');
    write_text(path, &s)
}

fn prepare_corpus(cfg: &PipelineConfig) -> Result<Corpus> {
    let records = read_records(&cfg.paths.corpus)?;
    let corpus = Corpus::prepare(&records, &cfg.corpus_config()?)?;
    info!(
        "corpus: {} documents, {} features, dropped {}",
        corpus.documents.len(),
        corpus.vocabulary.len(),
        corpus.drops
    );
    Ok(corpus)
}

#[derive(Debug, Serialize)]
struct LexiconSummary<'a> {
    topics: usize,
    features: usize,
    dropped_tfidf: usize,
    dropped_count: usize,
    dropped_topics: &'a [String],
    seed_counts: &'a [(String, usize)],
}

pub fn cmd_build_lexicon(cfg: &PipelineConfig, out: &Path) -> Result<String> {
    let sentences = read_annotated(&cfg.paths.annotated)?;
    let corpus = prepare_corpus(cfg)?;
    let build = build_lexicon(&sentences, &corpus.vocabulary, &cfg.lexicon_config())?;
    create_dir(out)?;
    write_vocabulary(&out.join(files::VOCABULARY), &corpus.vocabulary)?;
    build.lexicon.write_json(&out.join(files::LEXICON))?;
    build.lexicon.write_seed_report(&out.join(files::SEED_REPORT))?;
    let (t, f) = (build.lexicon.topics.len(), build.lexicon.total_features());
    write_json(
        &out.join(files::LEXICON_SUMMARY),
        &LexiconSummary {
            topics: t,
            features: f,
            dropped_tfidf: build.report.dropped_tfidf,
            dropped_count: build.report.dropped_count,
            dropped_topics: &build.report.dropped_topics,
            seed_counts: &build.report.seed_counts,
        },
    )?;
    Ok(format!("{t} topics, {f} features"))
}

#[derive(Debug, Serialize)]
struct FitSummary<'a> {
    documents: usize,
    features: usize,
    topics: &'a [String],
    dropped: &'a polident::corpus::DropReport,
    convergence: &'a polident::stm::Convergence,
    final_bound: f64,
    flagged_docs: usize,
    config: &'a polident::stm::ModelConfig,
}

pub fn cmd_fit(cfg: &PipelineConfig, out: &Path, lexicon_path: &Path) -> Result<String> {
    let lexicon = SeedLexicon::read_json(lexicon_path)?;
    let corpus = prepare_corpus(cfg)?;
    let labels: Vec<_> = corpus.documents.iter().map(|d| d.group).collect();
    let design = PrevalenceDesign::build(&labels, &corpus.countries)?;
    let model = fit(&corpus, &design, &lexicon, &cfg.stm)?;

    create_dir(out)?;
    write_vocabulary(&out.join(files::VOCABULARY), &corpus.vocabulary)?;
    model.write(&out.join(files::MODEL))?;
    let mut trace = String::from("iteration,bound,relative_change\n");
    for (i, b) in model.bound_trace.iter().enumerate() {
        let change = match i {
            0 => String::new(),
            _ => {
                let prev = model.bound_trace[i - 1];
                ((b - prev) / prev.abs()).abs().to_string()
            }
        };
        trace.push_str(&format!("{},{b},{change}\n", i + 1));
    }
    write_text(&out.join(files::BOUND_TRACE), &trace)?;
    let doc_ids: Vec<String> = corpus.documents.iter().map(|d| d.doc_id.clone()).collect();
    write_theta_csv(&out.join(files::THETA), &model, &doc_ids)?;
    estimate_effects(&model, &design)?.write_csv(&out.join(files::EFFECTS))?;
    let final_bound = model.bound_trace.last().copied().unwrap_or(f64::NAN);
    write_json(
        &out.join(files::FIT_SUMMARY),
        &FitSummary {
            documents: corpus.documents.len(),
            features: corpus.vocabulary.len(),
            topics: &model.topic_names,
            dropped: &corpus.drops,
            convergence: &model.convergence,
            final_bound,
            flagged_docs: model.flagged_docs.len(),
            config: &model.config,
        },
    )?;
    let reason = match model.convergence.reason {
        polident::stm::StopReason::Emtol => "emtol",
        polident::stm::StopReason::MaxIter => "max_iter",
    };
    Ok(format!(
        "{} iterations, stopped on {reason}, bound {final_bound}",
        model.convergence.iterations
    ))
}

/// File-name stem for a topic: its index and a lowercase slug.
pub fn topic_slug(index: usize, name: &str) -> String {
    let mut slug = String::new();
    for c in name.chars().flat_map(char::to_lowercase) {
        if c.is_ascii_alphanumeric() {
            slug.push(c);
        } else if !slug.ends_with('_') {
            slug.push('_');
        }
    }
    format!("{index:02}_{}", slug.trim_matches('_'))
}

pub fn cmd_analyze(cfg: &PipelineConfig, out: &Path, model_path: &Path) -> Result<String> {
    let model = StmModel::read(model_path)?;
    let vocab_path = model_path
        .parent()
        .map(|d| d.join(files::VOCABULARY))
        .filter(|p| p.exists())
        .unwrap_or_else(|| out.join(files::VOCABULARY));
    let vocabulary = read_vocabulary(&vocab_path)?;
    let dists = GroupDistributions::from_model(&model, &vocabulary)?;
    let dir = out.join(files::ANALYSIS_DIR);
    let n = write_analysis(&dists, &model, cfg, &dir)?;
    Ok(format!("{n} files written to {}", dir.display()))
}

/// Writes every analytics table for one model into `dir`; returns the
/// number of files.
pub fn write_analysis(dists: &GroupDistributions, model: &StmModel, cfg: &PipelineConfig, dir: &Path) -> Result<usize> {
    let opts = &cfg.analytics;
    let countries = &dists.countries;
    let sim_dir = dir.join(files::SIMILARITY_DIR);
    let net_dir = dir.join(files::NETWORK_DIR);
    for d in [dir, &sim_dir, &net_dir] {
        if d.exists() {
            std::fs::remove_dir_all(d).map_err(|source| CliError::Io {
                path: d.to_path_buf(),
                source,
            })?;
        }
        create_dir(d)?;
    }
    let mut written = 0;

    write_beta_csv(&dir.join(files::BETA), dists)?;
    let sims = all_similarity_matrices(dists)?;
    write_similarity_long_csv(&dir.join(files::SIMILARITY_LONG), &sims, countries)?;
    for (k, s) in sims.iter().enumerate() {
        write_similarity_matrix_csv(&sim_dir.join(format!("{}.csv", topic_slug(k, &s.topic))), s, countries)?;
    }
    written += 2 + sims.len();

    let blocks = sims
        .iter()
        .map(|s| {
            block_averages(s, countries).map(|b| {
                let c = classify_dimension(&b);
                (b, c)
            })
        })
        .collect::<polident::Result<Vec<_>>>()?;
    write_blocks_csv(&dir.join(files::BLOCKS), &blocks)?;
    write_salience_csv(&dir.join(files::SALIENCE), &model_salience(model)?)?;
    let mut diffs = Vec::new();
    for k in 0..dists.n_topics() {
        diffs.extend(top_features_by_side(dists, k, opts.features_per_side)?);
    }
    write_feature_diffs_csv(&dir.join(files::FEATURE_DIFFS), &diffs)?;
    written += 3;

    // Rankings and the Left-Right table cover identity dimensions only.
    let seeded: Vec<SimilarityMatrix> = sims.iter().filter(|s| s.topic != RESIDUAL_TOPIC).cloned().collect();
    for (side, name) in [(PolPos::Left, files::PAIRS_LEFT), (PolPos::Right, files::PAIRS_RIGHT)] {
        write_pair_rankings_csv(
            &dir.join(name),
            &pair_topic_rankings(&seeded, side, countries, opts.rank_n)?,
        )?;
    }
    let lr = (0..countries.len())
        .map(|c| within_country_lr(&seeded, countries, c))
        .collect::<polident::Result<Vec<_>>>()?;
    write_lr_table_csv(&dir.join(files::WITHIN_LR), &lr)?;
    let mut table = String::from("country,similarity\n");
    for c in &lr {
        table.push_str(&format!("{},{}\n", c.country, c.average));
    }
    write_text(&dir.join(files::COUNTRY_SIMILARITY), &table)?;
    written += 4;

    for k in 0..dists.n_topics() {
        let slug = topic_slug(k, &dists.topic_names[k]);
        for c in 0..countries.len() {
            let net = association_network(
                dists,
                k,
                countries.level(c, PolPos::Left),
                countries.level(c, PolPos::Right),
                opts.top_n,
            )?;
            let stem = format!("{slug}_{}", countries.name(c));
            write_network_graphml(&net_dir.join(format!("{stem}.graphml")), &net)?;
            write_network_edges_csv(&net_dir.join(format!("{stem}_edges.csv")), &net)?;
            written += 2;
        }
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct CorrelationOutput {
    similarity_only: Vec<String>,
    survey_only: Vec<String>,
    #[serde(flatten)]
    report: polident::stats::CorrelationReport,
}

fn country_key(s: &str) -> String {
    let s = s.trim().to_lowercase();
    s.strip_prefix("the ").map(str::to_string).unwrap_or(s)
}

pub fn cmd_correlate(cfg: &PipelineConfig, out: &Path, similarity: &Path, survey: &Path) -> Result<String> {
    let sims = read_country_values(similarity, "similarity")?;
    let shares = read_country_values(survey, "conflict_share")?;
    let obs = join_observations(&sims, &shares);
    let matched: HashSet<String> = obs.iter().map(|o| country_key(&o.country)).collect();
    let unmatched = |rows: &[(String, f64)]| -> Vec<String> {
        rows.iter()
            .filter(|(c, _)| !matched.contains(&country_key(c)))
            .map(|(c, _)| c.clone())
            .collect()
    };
    let (similarity_only, survey_only) = (unmatched(&sims), unmatched(&shares));
    for c in similarity_only.iter().chain(&survey_only) {
        log::warn!("country '{c}' appears in only one input and is excluded");
    }
    if obs.len() < 3 {
        return Err(polident::Error::InsufficientData(format!(
            "{} matched countries, at least 3 are needed",
            obs.len()
        ))
        .into());
    }
    let report = correlate(&obs, &cfg.correlate_options())?;
    let x: Vec<f64> = obs.iter().map(|o| o.similarity).collect();
    let curve = fitted_curve(&report.glm, &grid_over(&x, cfg.stats.curve_points));
    create_dir(out)?;
    write_curve_csv(&out.join(files::CURVE), &curve)?;
    let summary = format!(
        "{} countries, r = {:.4}, slope = {:.4}",
        report.n,
        report.pearson_r,
        report.glm.slope()
    );
    write_json(
        &out.join(files::CORRELATION),
        &CorrelationOutput {
            similarity_only,
            survey_only,
            report,
        },
    )?;
    Ok(summary)
}

fn collect_files(root: &Path, dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    let io_err = |source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    };
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_dir() {
            collect_files(root, &path, acc)?;
        } else if let Ok(rel) = path.strip_prefix(root) {
            acc.push(rel.to_path_buf());
        }
    }
    Ok(())
}

/// Tar archive of the analysis directory plus the stand-alone tables, with
/// sorted entries and zeroed timestamps.
pub fn cmd_report(out: &Path, archive: &Path) -> Result<String> {
    let mut entries = Vec::new();
    let analysis = out.join(files::ANALYSIS_DIR);
    if !analysis.is_dir() {
        return Err(CliError::Io {
            path: analysis,
            source: io::Error::new(io::ErrorKind::NotFound, "run analyze first"),
        });
    }
    collect_files(out, &analysis, &mut entries)?;
    for name in [
        files::LEXICON,
        files::SEED_REPORT,
        files::LEXICON_SUMMARY,
        files::BOUND_TRACE,
        files::EFFECTS,
        files::FIT_SUMMARY,
        files::CORRELATION,
        files::CURVE,
    ] {
        if out.join(name).is_file() {
            entries.push(name.into());
        }
    }
    entries.sort();

    let io_err = |source| CliError::Io {
        path: archive.to_path_buf(),
        source,
    };
    if let Some(dir) = archive.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let mut builder = tar::Builder::new(File::create(archive).map_err(io_err)?);
    for rel in &entries {
        let src = out.join(rel);
        let data = std::fs::read(&src).map_err(|source| CliError::Io { path: src, source })?;
        let mut header = tar::Header::new_gnu();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_cksum();
        builder.append_data(&mut header, rel, data.as_slice()).map_err(io_err)?;
    }
    builder.into_inner().map_err(io_err)?;
    Ok(format!("{} files archived to {}", entries.len(), archive.display()))
}
