//! Record ingestion, feature extraction, vocabulary building and the
//! sparse document vectors consumed by the topic model.

mod io;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{CountrySet, GroupLabel, PolPos};

pub(crate) use io::tsv_reader as tsv_reader_for;
pub use io::{
    read_doc_meta, read_records, read_triplets, read_vocabulary, write_doc_meta, write_records_jsonl, write_triplets,
    write_vocabulary,
};

pub const DEP_SEPARATOR: &str = "->";

/// Documents with fewer distinct in-vocabulary features are dropped.
pub const MIN_DOC_FEATURES: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub doc_id: String,
    pub text: String,
    pub country: String,
    pub lr_score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dep_pairs: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Unigram,
    DepPair,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Unigram => "unigram",
            FeatureKind::DepPair => "dep_pair",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unigram" => Some(FeatureKind::Unigram),
            "dep_pair" => Some(FeatureKind::DepPair),
            _ => None,
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A unigram or a `head->child` dependency pair. Ordering is by surface
/// first so sorted collections read naturally.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Feature {
    pub surface: String,
    pub kind: FeatureKind,
}

impl PartialOrd for Feature {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Feature {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.surface.cmp(&other.surface).then(self.kind.cmp(&other.kind))
    }
}

impl Feature {
    pub fn unigram(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            kind: FeatureKind::Unigram,
        }
    }

    pub fn dep_pair(head: &str, child: &str) -> Self {
        Self {
            surface: format!("{head}{DEP_SEPARATOR}{child}"),
            kind: FeatureKind::DepPair,
        }
    }

    /// Parses and normalizes a `head->child` string. Returns `None` when the
    /// string does not contain exactly one separator or a side is empty.
    pub fn parse_dep_pair(raw: &str) -> Option<Self> {
        let mut parts = raw.split(DEP_SEPARATOR);
        let head = parts.next()?.trim().to_lowercase();
        let child = parts.next()?.trim().to_lowercase();
        if parts.next().is_some() || head.is_empty() || child.is_empty() {
            return None;
        }
        Some(Self::dep_pair(&head, &child))
    }

    /// Endpoints of a dependency pair.
    pub fn endpoints(&self) -> Option<(&str, &str)> {
        match self.kind {
            FeatureKind::DepPair => self.surface.split_once(DEP_SEPARATOR),
            FeatureKind::Unigram => None,
        }
    }

    /// Reconstructs a feature from a surface string, inferring the kind from
    /// the presence of the separator.
    pub fn from_surface(surface: &str) -> Option<Self> {
        if surface.contains(DEP_SEPARATOR) {
            Self::parse_dep_pair(surface)
        } else {
            let s = surface.trim().to_lowercase();
            (!s.is_empty()).then(|| Self::unigram(s))
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.surface)
    }
}

/// Multiset of features.
pub type FeatureCounts = BTreeMap<Feature, u64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepFallback {
    /// Adjacent tokens `a b` become `a->b` when a record carries no pairs.
    #[default]
    Bigram,
    None,
}

/// Lowercases, replaces every non-alphanumeric character by a separator and
/// splits on whitespace. No stemming, no stopword removal.
pub fn tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Unigram multiset of a text.
pub fn tokenize(text: &str) -> FeatureCounts {
    let mut out = FeatureCounts::new();
    for t in tokens(text) {
        *out.entry(Feature::unigram(t)).or_default() += 1;
    }
    out
}

/// Dependency-pair features of a record. Precomputed pairs take precedence;
/// malformed ones are skipped with a warning.
pub fn derive_dep_pairs(dep_pairs: Option<&[String]>, tokens: &[String], fallback: DepFallback) -> Vec<Feature> {
    match dep_pairs {
        Some(pairs) => pairs
            .iter()
            .filter_map(|raw| {
                let parsed = Feature::parse_dep_pair(raw);
                if parsed.is_none() {
                    warn!("skipping malformed dependency pair '{raw}'");
                }
                parsed
            })
            .collect(),
        None => match fallback {
            DepFallback::Bigram => tokens.windows(2).map(|w| Feature::dep_pair(&w[0], &w[1])).collect(),
            DepFallback::None => Vec::new(),
        },
    }
}

/// All features (unigrams and dependency pairs) of one text.
pub fn text_features(text: &str, dep_pairs: Option<&[String]>, fallback: DepFallback) -> FeatureCounts {
    let toks = tokens(text);
    let mut out = FeatureCounts::new();
    for f in derive_dep_pairs(dep_pairs, &toks, fallback) {
        *out.entry(f).or_default() += 1;
    }
    for t in toks {
        *out.entry(Feature::unigram(t)).or_default() += 1;
    }
    out
}

impl RawRecord {
    pub fn features(&self, fallback: DepFallback) -> FeatureCounts {
        text_features(&self.text, self.dep_pairs.as_deref(), fallback)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrOutOfRange(pub f64);

impl fmt::Display for LrOutOfRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "lr_score {} outside [0, 10]", self.0)
    }
}

/// Left-closed thirds of the 0-10 scale: `[0, 10/3)`, `[10/3, 20/3)`,
/// `[20/3, 10]`.
pub fn discretize_lr(score: f64) -> Result<PolPos, LrOutOfRange> {
    if !(0.0..=10.0).contains(&score) {
        return Err(LrOutOfRange(score));
    }
    Ok(if score < 10.0 / 3.0 {
        PolPos::Left
    } else if score < 20.0 / 3.0 {
        PolPos::Center
    } else {
        PolPos::Right
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    features: Vec<Feature>,
    counts: Vec<u64>,
    index: HashMap<Feature, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from already ordered entries.
    pub fn from_entries(entries: Vec<(Feature, u64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        let mut features = Vec::with_capacity(entries.len());
        let mut counts = Vec::with_capacity(entries.len());
        for (i, (f, c)) in entries.into_iter().enumerate() {
            if index.insert(f.clone(), i).is_some() {
                return Err(Error::Config(format!("feature '{f}' listed twice in vocabulary")));
            }
            features.push(f);
            counts.push(c);
        }
        Ok(Self {
            features,
            counts,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn feature(&self, v: usize) -> &Feature {
        &self.features[v]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, v: usize) -> u64 {
        self.counts[v]
    }

    pub fn get(&self, f: &Feature) -> Option<usize> {
        self.index.get(f).copied()
    }

    /// Lookup by surface only, inferring the kind.
    pub fn get_surface(&self, surface: &str) -> Option<usize> {
        Feature::from_surface(surface).and_then(|f| self.get(&f))
    }

    /// Corpus count of a feature, zero if absent.
    pub fn count_of(&self, f: &Feature) -> u64 {
        self.get(f).map_or(0, |v| self.counts[v])
    }

    pub fn has_dep_pairs(&self) -> bool {
        self.features.iter().any(|f| f.kind == FeatureKind::DepPair)
    }
}

/// Sums feature multisets. Associative and commutative, so shards may be
/// merged in any order.
pub fn merge_counts(mut a: FeatureCounts, b: FeatureCounts) -> FeatureCounts {
    if a.len() < b.len() {
        return merge_counts(b, a);
    }
    for (f, c) in b {
        *a.entry(f).or_default() += c;
    }
    a
}

/// Corpus-wide feature counts over records, computed in parallel.
pub fn count_features(records: &[RawRecord], fallback: DepFallback) -> FeatureCounts {
    records
        .par_iter()
        .map(|r| r.features(fallback))
        .reduce(FeatureCounts::new, merge_counts)
}

/// Keeps features with count >= `min_count`, ordered by count descending
/// then surface ascending.
pub fn build_vocabulary<I>(stream: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = FeatureCounts>,
{
    if min_count == 0 {
        return Err(Error::Config("min_count must be positive".into()));
    }
    let total = stream.into_iter().fold(FeatureCounts::new(), merge_counts);
    let mut entries: Vec<(Feature, u64)> = total.into_iter().filter(|(_, c)| *c >= min_count).collect();
    if entries.is_empty() {
        return Err(Error::EmptyVocabulary { min_count });
    }
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentVector {
    pub doc_id: String,
    /// `(feature index, count)` sorted by feature index.
    pub features: Vec<(usize, u32)>,
    pub group: GroupLabel,
}

impl DocumentVector {
    pub fn total_count(&self) -> u64 {
        self.features.iter().map(|&(_, c)| c as u64).sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropReport {
    pub empty: usize,
    pub too_short: usize,
    pub invalid_lr: usize,
    pub unknown_country: usize,
}

impl DropReport {
    pub fn total(&self) -> usize {
        self.empty + self.too_short + self.invalid_lr + self.unknown_country
    }
}

impl fmt::Display for DropReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "empty={} too_short={} invalid_lr={} unknown_country={}",
            self.empty, self.too_short, self.invalid_lr, self.unknown_country
        )
    }
}

#[derive(Debug, Clone)]
pub struct CorpusConfig {
    pub min_count: u64,
    pub fallback: DepFallback,
    pub countries: CountrySet,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            min_count: 5,
            fallback: DepFallback::Bigram,
            countries: CountrySet::default(),
        }
    }
}

/// Maps a record to its group label, or the reason it cannot be labeled.
pub fn record_group(record: &RawRecord, countries: &CountrySet) -> Result<GroupLabel> {
    let country = countries
        .index_of(&record.country)
        .ok_or_else(|| Error::InvalidRecord {
            doc_id: record.doc_id.clone(),
            reason: format!("country '{}' not in configured set", record.country),
        })?;
    let pos = discretize_lr(record.lr_score).map_err(|e| Error::InvalidRecord {
        doc_id: record.doc_id.clone(),
        reason: e.to_string(),
    })?;
    Ok(GroupLabel::new(country, pos))
}

/// Converts records to sparse vectors over `vocabulary`, dropping records
/// that cannot be labeled or that keep fewer than two distinct features.
pub fn build_corpus(
    records: &[RawRecord],
    vocabulary: &Vocabulary,
    config: &CorpusConfig,
) -> Result<(Vec<DocumentVector>, DropReport)> {
    let mut seen = HashSet::with_capacity(records.len());
    for r in records {
        if !seen.insert(r.doc_id.as_str()) {
            return Err(Error::DuplicateDocument(r.doc_id.clone()));
        }
    }

    enum Outcome {
        Kept(DocumentVector),
        Empty,
        TooShort,
        InvalidLr,
        UnknownCountry,
    }

    let outcomes: Vec<Outcome> = records
        .par_iter()
        .map(|r| {
            let Some(country) = config.countries.index_of(&r.country) else {
                return Outcome::UnknownCountry;
            };
            let Ok(pos) = discretize_lr(r.lr_score) else {
                return Outcome::InvalidLr;
            };
            let mut features: Vec<(usize, u32)> = r
                .features(config.fallback)
                .into_iter()
                .filter_map(|(f, c)| vocabulary.get(&f).map(|v| (v, c as u32)))
                .collect();
            features.sort_unstable();
            match features.len() {
                0 => Outcome::Empty,
                n if n < MIN_DOC_FEATURES => Outcome::TooShort,
                _ => Outcome::Kept(DocumentVector {
                    doc_id: r.doc_id.clone(),
                    features,
                    group: GroupLabel::new(country, pos),
                }),
            }
        })
        .collect();

    let mut report = DropReport::default();
    let mut docs = Vec::with_capacity(outcomes.len());
    for (o, r) in outcomes.into_iter().zip(records) {
        match o {
            Outcome::Kept(d) => docs.push(d),
            Outcome::Empty => report.empty += 1,
            Outcome::TooShort => report.too_short += 1,
            Outcome::InvalidLr => {
                warn!("record {}: lr_score {} outside [0, 10]", r.doc_id, r.lr_score);
                report.invalid_lr += 1
            }
            Outcome::UnknownCountry => report.unknown_country += 1,
        }
    }
    Ok((docs, report))
}

/// Vocabulary and document vectors of one prepared corpus.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocabulary: Vocabulary,
    pub documents: Vec<DocumentVector>,
    pub countries: CountrySet,
    pub drops: DropReport,
}

impl Corpus {
    /// Full preparation pass: label filtering, vocabulary, document vectors.
    /// Records that cannot be labeled do not contribute to the vocabulary.
    pub fn prepare(records: &[RawRecord], config: &CorpusConfig) -> Result<Self> {
        let labeled: Vec<RawRecord> = records
            .iter()
            .filter(|r| record_group(r, &config.countries).is_ok())
            .cloned()
            .collect();
        let vocabulary = build_vocabulary([count_features(&labeled, config.fallback)], config.min_count)?;
        let (documents, mut drops) = build_corpus(&labeled, &vocabulary, config)?;
        for r in records {
            if config.countries.index_of(&r.country).is_none() {
                drops.unknown_country += 1;
            } else if discretize_lr(r.lr_score).is_err() {
                warn!("record {}: lr_score {} outside [0, 10]", r.doc_id, r.lr_score);
                drops.invalid_lr += 1;
            }
        }
        Ok(Self {
            vocabulary,
            documents,
            countries: config.countries.clone(),
            drops,
        })
    }

    /// Number of documents per content level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut out = vec![0; self.countries.n_levels()];
        for d in &self.documents {
            out[d.group.content_level()] += 1;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, text: &str, country: &str, lr: f64) -> RawRecord {
        RawRecord {
            doc_id: id.into(),
            text: text.into(),
            country: country.into(),
            lr_score: lr,
            dep_pairs: None,
        }
    }

    fn counts(pairs: &[(&str, u64)]) -> FeatureCounts {
        pairs.iter().map(|(s, c)| (Feature::unigram(*s), *c)).collect()
    }

    #[test]
    fn tokenize_normalizes_case_and_punctuation() {
        assert_eq!(
            tokenize("Proud father. Proud father!"),
            counts(&[("proud", 2), ("father", 2)])
        );
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Human Rights defender"),
            counts(&[("human", 1), ("rights", 1), ("defender", 1)])
        );
    }

    #[test]
    fn dep_pairs_passthrough_fallback_and_malformed() {
        let toks = tokens("change world");
        let given = vec!["Human->Rights".to_string()];
        assert_eq!(
            derive_dep_pairs(Some(&given), &toks, DepFallback::Bigram),
            vec![Feature::dep_pair("human", "rights")]
        );
        assert_eq!(
            derive_dep_pairs(None, &toks, DepFallback::Bigram),
            vec![Feature::dep_pair("change", "world")]
        );
        assert_eq!(derive_dep_pairs(None, &toks, DepFallback::None), vec![]);
        let bad = vec!["a->b->c".to_string(), "nohead".to_string(), "->x".to_string()];
        assert!(derive_dep_pairs(Some(&bad), &toks, DepFallback::Bigram).is_empty());
        assert_eq!(Feature::dep_pair("a", "b").endpoints(), Some(("a", "b")));
    }

    #[test]
    fn discretize_boundaries() {
        assert_eq!(discretize_lr(0.0), Ok(PolPos::Left));
        assert_eq!(discretize_lr(5.0), Ok(PolPos::Center));
        assert_eq!(discretize_lr(10.0), Ok(PolPos::Right));
        assert_eq!(discretize_lr(10.0 / 3.0), Ok(PolPos::Center));
        assert_eq!(discretize_lr(20.0 / 3.0), Ok(PolPos::Right));
        assert_eq!(discretize_lr(3.33), Ok(PolPos::Left));
        assert_eq!(discretize_lr(6.66), Ok(PolPos::Center));
        assert!(discretize_lr(-0.1).is_err());
        assert!(discretize_lr(10.01).is_err());
        assert!(discretize_lr(f64::NAN).is_err());
    }

    #[test]
    fn vocabulary_threshold_and_ties() {
        let v = build_vocabulary([counts(&[("a", 5), ("b", 1)])], 2).unwrap();
        assert_eq!(v.features(), &[Feature::unigram("a")]);
        let v = build_vocabulary([counts(&[("b", 3), ("a", 3)])], 1).unwrap();
        assert_eq!(v.features(), &[Feature::unigram("a"), Feature::unigram("b")]);
        assert!(matches!(
            build_vocabulary([counts(&[("a", 1)])], 2),
            Err(Error::EmptyVocabulary { .. })
        ));
    }

    #[test]
    fn short_and_empty_documents_are_dropped() {
        let recs = vec![
            rec("1", "alpha beta beta", "belgium", 1.0),
            rec("2", "alpha zzz", "belgium", 1.0),
            rec("3", "qqq", "france", 9.0),
            rec("4", "alpha beta", "mars", 5.0),
        ];
        let vocab = build_vocabulary([counts(&[("alpha", 3), ("beta", 3)])], 1).unwrap();
        let cfg = CorpusConfig {
            fallback: DepFallback::None,
            ..Default::default()
        };
        let (docs, report) = build_corpus(&recs, &vocab, &cfg).unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].doc_id, "1");
        assert_eq!(docs[0].total_count(), 3);
        assert_eq!(report.too_short, 1);
        assert_eq!(report.empty, 1);
        assert_eq!(report.unknown_country, 1);
    }

    #[test]
    fn duplicate_doc_id_is_fatal() {
        let recs = vec![rec("1", "a b", "belgium", 1.0), rec("1", "a b", "belgium", 1.0)];
        let vocab = build_vocabulary([counts(&[("a", 1), ("b", 1)])], 1).unwrap();
        assert!(matches!(
            build_corpus(&recs, &vocab, &CorpusConfig::default()),
            Err(Error::DuplicateDocument(_))
        ));
    }

    proptest! {
        #[test]
        fn discretize_partitions_the_scale(score in 0.0f64..=10.0) {
            let pos = discretize_lr(score).unwrap();
            let third = 10.0 / 3.0;
            let expected = if score < third { PolPos::Left } else if score < 2.0 * third { PolPos::Center } else { PolPos::Right };
            prop_assert_eq!(pos, expected);
        }

        #[test]
        fn vocabulary_is_order_invariant(words in proptest::collection::vec("[a-e]{1,2}", 1..60), min in 1u64..4) {
            let forward: Vec<FeatureCounts> = words.iter().map(|w| tokenize(w)).collect();
            let mut backward = forward.clone();
            backward.reverse();
            let a = build_vocabulary(forward, min);
            let b = build_vocabulary(backward, min);
            match (a, b) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "inconsistent outcomes"),
            }
        }

        #[test]
        fn tokenize_is_deterministic(text in "\\PC{0,40}") {
            prop_assert_eq!(tokenize(&text), tokenize(&text));
            for f in tokenize(&text).keys() {
                prop_assert!(!f.surface.is_empty());
                prop_assert!(!f.surface.contains(DEP_SEPARATOR));
            }
        }
    }
}
