//! Pipeline configuration loaded from a TOML file. Every section and key is
//! optional; missing values take the published defaults.

use std::path::{Path, PathBuf};

use polident::corpus::{CorpusConfig, DepFallback};
use polident::groups::{CountrySet, DEFAULT_COUNTRIES};
use polident::lexicon::LexiconConfig;
use polident::stats::CorrelateOptions;
use polident::stm::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUTPUT_ENV: &str = "POLIDENT_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "polident_out";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub corpus: CorpusOptions,
    pub lexicon: LexiconConfig,
    pub stm: ModelConfig,
    pub analytics: AnalyticsOptions,
    pub stats: StatsOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// JSON-lines bios.
    pub corpus: PathBuf,
    /// TSV of annotated manifesto sentences.
    pub annotated: PathBuf,
    /// Falls back to `$POLIDENT_OUT`, then `polident_out`.
    pub output_dir: Option<PathBuf>,
    /// Country similarity table for `correlate`; defaults to the one written
    /// by `analyze`.
    pub similarity: Option<PathBuf>,
    /// Survey table with a `conflict_share` column.
    pub survey: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            corpus: "bios.jsonl".into(),
            annotated: "annotated.tsv".into(),
            output_dir: None,
            similarity: None,
            survey: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusOptions {
    pub min_count: u64,
    /// Applies to both the bios and the annotated sentences.
    pub fallback: DepFallback,
    pub countries: Vec<String>,
}

impl Default for CorpusOptions {
    fn default() -> Self {
        Self {
            min_count: 5,
            fallback: DepFallback::Bigram,
            countries: DEFAULT_COUNTRIES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyticsOptions {
    /// Top features per level entering each association network.
    pub top_n: usize,
    /// Features per side in the Left-Right differential table.
    pub features_per_side: usize,
    /// Topics listed at each end of a country-pair ranking.
    pub rank_n: usize,
}

impl Default for AnalyticsOptions {
    fn default() -> Self {
        Self {
            top_n: 20,
            features_per_side: 10,
            rank_n: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsOptions {
    pub resamples: usize,
    pub quantiles: (f64, f64),
    pub rng_seed: u64,
    /// Points on the fitted-curve grid.
    pub curve_points: usize,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            resamples: 10_000,
            quantiles: (0.05, 0.95),
            rng_seed: 0,
            curve_points: 101,
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl PipelineConfig {
    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| CliError::ConfigFile {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        p.corpus = resolve(base, &p.corpus);
        p.annotated = resolve(base, &p.annotated);
        for opt in [&mut p.output_dir, &mut p.similarity, &mut p.survey] {
            if let Some(x) = opt.as_mut() {
                *x = resolve(base, x);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        let l = &self.lexicon;
        if l.min_sentences == 0 || l.per_topic == 0 || l.min_count_each == 0 || l.min_seeds == 0 {
            return bad("lexicon thresholds must be positive");
        }
        if !(l.tfidf_min > 0.0) {
            return bad("lexicon.tfidf_min must be positive");
        }
        if self.corpus.min_count == 0 {
            return bad("corpus.min_count must be positive");
        }
        self.stm.validate()?;
        let a = &self.analytics;
        if a.top_n == 0 || a.features_per_side == 0 || a.rank_n == 0 {
            return bad("analytics options must be positive");
        }
        let s = &self.stats;
        if s.resamples == 0 || s.curve_points < 2 {
            return bad("stats.resamples must be positive and stats.curve_points at least 2");
        }
        let (lo, hi) = s.quantiles;
        if !(0.0 < lo && lo < hi && hi < 1.0) {
            return bad("stats.quantiles must satisfy 0 < lo < hi < 1");
        }
        Ok(())
    }

    /// Output directory: explicit override, then the config, then the
    /// environment, then the built-in default.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.paths.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into())
    }

    pub fn corpus_config(&self) -> Result<CorpusConfig, CliError> {
        Ok(CorpusConfig {
            min_count: self.corpus.min_count,
            fallback: self.corpus.fallback,
            countries: CountrySet::new(&self.corpus.countries)?,
        })
    }

    pub fn lexicon_config(&self) -> LexiconConfig {
        LexiconConfig {
            fallback: self.corpus.fallback,
            ..self.lexicon.clone()
        }
    }

    pub fn correlate_options(&self) -> CorrelateOptions {
        CorrelateOptions {
            resamples: self.stats.resamples,
            quantiles: self.stats.quantiles,
            rng_seed: self.stats.rng_seed,
            ..CorrelateOptions::default()
        }
    }
}
