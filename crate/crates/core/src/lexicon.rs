//! Seed lexicon construction from an annotated reference corpus.
//!
//! Labels are consolidated into topics, topics with too few sentences are
//! removed, features are ranked per topic by relative frequency and handed
//! out round-robin so that no feature belongs to two topics. Candidates are
//! then filtered by TF-IDF, by minimum count in both corpora, and topics
//! left with too few seeds are removed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{merge_counts, text_features, DepFallback, Feature, FeatureCounts, FeatureKind, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub text: String,
    pub raw_label: String,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedTopic {
    pub name: String,
    pub domain: String,
    pub sentence_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexiconConfig {
    pub min_sentences: usize,
    pub per_topic: usize,
    pub tfidf_min: f64,
    pub min_count_each: u64,
    pub min_seeds: usize,
    pub fallback: DepFallback,
}

impl Default for LexiconConfig {
    fn default() -> Self {
        Self {
            min_sentences: 5000,
            per_topic: 100,
            tfidf_min: 5.0,
            min_count_each: 50,
            min_seeds: 3,
            fallback: DepFallback::Bigram,
        }
    }
}

const GENERAL_SUFFIX: &str = ": general";

fn strip_suffix_ignore_case<'a>(s: &'a str, suffix: &str) -> Option<&'a str> {
    let n = s.len().checked_sub(suffix.len())?;
    (s.is_char_boundary(n) && s[n..].eq_ignore_ascii_case(suffix)).then(|| &s[..n])
}

/// Strips trailing `+`/`-`, a trailing `: general` (any case), and anything
/// from the first `.` onward, repeating until nothing changes. Returns
/// `None` when nothing is left.
pub fn consolidate_label(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    loop {
        let before = s;
        s = s.trim_end_matches(['+', '-']).trim_end();
        if let Some(rest) = strip_suffix_ignore_case(s, GENERAL_SUFFIX) {
            s = rest.trim_end();
        }
        if let Some(dot) = s.find('.') {
            s = s[..dot].trim_end();
        }
        s = s.trim();
        if s == before {
            break;
        }
    }
    (!s.is_empty()).then(|| s.to_string())
}

/// Consolidated topic of each sentence, `None` for labels that vanish.
pub fn consolidate_all(sentences: &[AnnotatedSentence]) -> Vec<Option<String>> {
    sentences
        .iter()
        .map(|s| {
            let t = consolidate_label(&s.raw_label);
            if t.is_none() {
                warn!(
                    "label '{}' is empty after consolidation; sentence excluded",
                    s.raw_label
                );
            }
            t
        })
        .collect()
}

/// Sentence counts per consolidated topic, sorted by name. A topic's domain
/// is the most frequent domain among its sentences (ties by name).
pub fn topic_counts(sentences: &[AnnotatedSentence], labels: &[Option<String>]) -> Vec<ConsolidatedTopic> {
    let mut by_topic: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for (s, l) in sentences.iter().zip(labels) {
        if let Some(l) = l {
            *by_topic.entry(l).or_default().entry(s.domain.as_str()).or_default() += 1;
        }
    }
    by_topic
        .into_iter()
        .map(|(name, domains)| {
            let sentence_count = domains.values().sum();
            let domain = domains
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
                .map(|(d, _)| d.to_string())
                .unwrap_or_default();
            ConsolidatedTopic {
                name: name.to_string(),
                domain,
                sentence_count,
            }
        })
        .collect()
}

/// Keeps topics with at least `min_sentences` sentences.
pub fn filter_topics(topics: Vec<ConsolidatedTopic>, min_sentences: usize) -> Result<Vec<ConsolidatedTopic>> {
    let kept: Vec<_> = topics
        .into_iter()
        .filter(|t| t.sentence_count >= min_sentences)
        .collect();
    if kept.is_empty() {
        return Err(Error::AllTopicsDropped(format!(
            "no topic has at least {min_sentences} annotated sentences"
        )));
    }
    Ok(kept)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScore {
    pub count: u64,
    pub rf: f64,
    pub tfidf: f64,
}

#[derive(Debug, Clone)]
pub struct TopicFeatureStats {
    pub topics: Vec<ConsolidatedTopic>,
    /// Per topic (same order as `topics`).
    pub scores: Vec<BTreeMap<Feature, FeatureScore>>,
    /// Counts over the whole reference corpus.
    pub reference_counts: HashMap<Feature, u64>,
    /// Counts in the target corpus (features absent from its vocabulary are 0).
    pub target_counts: HashMap<Feature, u64>,
}

impl TopicFeatureStats {
    pub fn reference_count(&self, f: &Feature) -> u64 {
        self.reference_counts.get(f).copied().unwrap_or(0)
    }

    pub fn target_count(&self, f: &Feature) -> u64 {
        self.target_counts.get(f).copied().unwrap_or(0)
    }

    pub fn topic_index(&self, name: &str) -> Option<usize> {
        self.topics.iter().position(|t| t.name == name)
    }
}

/// Relative frequency and TF-IDF per (topic, feature), each topic's
/// aggregated text acting as one document:
/// `rf = count / topic total`, `tfidf = count * ln(T / df)`.
pub fn compute_topic_stats(
    sentences: &[AnnotatedSentence],
    labels: &[Option<String>],
    topics: Vec<ConsolidatedTopic>,
    fallback: DepFallback,
    target: &Vocabulary,
) -> TopicFeatureStats {
    let idx: HashMap<&str, usize> = topics.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
    let n_topics = topics.len();

    let (per_topic, reference) = sentences
        .par_iter()
        .zip(labels.par_iter())
        .fold(
            || (vec![FeatureCounts::new(); n_topics], FeatureCounts::new()),
            |(mut per, mut all), (s, l)| {
                let feats = text_features(&s.text, None, fallback);
                if let Some(&t) = l.as_deref().and_then(|l| idx.get(l)) {
                    per[t] = merge_counts(std::mem::take(&mut per[t]), feats.clone());
                }
                all = merge_counts(all, feats);
                (per, all)
            },
        )
        .reduce(
            || (vec![FeatureCounts::new(); n_topics], FeatureCounts::new()),
            |(a, ra), (b, rb)| {
                let per = a.into_iter().zip(b).map(|(x, y)| merge_counts(x, y)).collect();
                (per, merge_counts(ra, rb))
            },
        );

    let mut df: HashMap<&Feature, usize> = HashMap::new();
    for counts in &per_topic {
        for f in counts.keys() {
            *df.entry(f).or_default() += 1;
        }
    }
    let t = n_topics as f64;
    let scores = per_topic
        .iter()
        .map(|counts| {
            let total: u64 = counts.values().sum();
            counts
                .iter()
                .map(|(f, &c)| {
                    let idf = (t / df[f] as f64).ln();
                    (
                        f.clone(),
                        FeatureScore {
                            count: c,
                            rf: c as f64 / total as f64,
                            tfidf: c as f64 * idf,
                        },
                    )
                })
                .collect()
        })
        .collect();

    let target_counts = reference
        .keys()
        .filter_map(|f| target.get(f).map(|v| (f.clone(), target.count(v))))
        .collect();

    TopicFeatureStats {
        topics,
        scores,
        reference_counts: reference.into_iter().collect(),
        target_counts,
    }
}

/// Features of one topic in assignment order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateTopic {
    pub topic: usize,
    pub features: Vec<Feature>,
}

/// Ranking within a topic: RF descending, count descending, surface ascending.
pub fn ranked_features(scores: &BTreeMap<Feature, FeatureScore>) -> Vec<&Feature> {
    let mut v: Vec<(&Feature, &FeatureScore)> = scores.iter().collect();
    v.sort_by(|a, b| {
        b.1.rf
            .total_cmp(&a.1.rf)
            .then(b.1.count.cmp(&a.1.count))
            .then_with(|| a.0.cmp(b.0))
    });
    v.into_iter().map(|(f, _)| f).collect()
}

/// Round-robin exclusive assignment: topics take turns (in stats order)
/// claiming their best-ranked unclaimed feature until each has `per_topic`
/// candidates or runs out.
pub fn assign_seeds(stats: &TopicFeatureStats, per_topic: usize) -> Vec<CandidateTopic> {
    let ranked: Vec<Vec<&Feature>> = stats.scores.iter().map(ranked_features).collect();
    let mut cursor = vec![0usize; ranked.len()];
    let mut done: Vec<bool> = vec![per_topic == 0; ranked.len()];
    let mut claimed: HashSet<&Feature> = HashSet::new();
    let mut out: Vec<CandidateTopic> = (0..ranked.len())
        .map(|topic| CandidateTopic {
            topic,
            features: Vec::new(),
        })
        .collect();

    while done.iter().any(|d| !d) {
        for t in 0..ranked.len() {
            if done[t] {
                continue;
            }
            while cursor[t] < ranked[t].len() && claimed.contains(ranked[t][cursor[t]]) {
                cursor[t] += 1;
            }
            let Some(&f) = ranked[t].get(cursor[t]) else {
                done[t] = true;
                continue;
            };
            claimed.insert(f);
            cursor[t] += 1;
            out[t].features.push(f.clone());
            if out[t].features.len() >= per_topic {
                done[t] = true;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seed {
    pub surface: String,
    pub kind: FeatureKind,
    pub rf: f64,
    pub tfidf: f64,
}

impl Seed {
    pub fn feature(&self) -> Feature {
        Feature {
            surface: self.surface.clone(),
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexiconTopic {
    pub topic: String,
    pub domain: String,
    pub seeds: Vec<Seed>,
}

/// Exclusive topic to seed-feature mapping. Serializes as a JSON array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SeedLexicon {
    pub topics: Vec<LexiconTopic>,
}

impl SeedLexicon {
    pub fn total_features(&self) -> usize {
        self.topics.iter().map(|t| t.seeds.len()).sum()
    }

    pub fn topic_names(&self) -> Vec<String> {
        self.topics.iter().map(|t| t.topic.clone()).collect()
    }

    /// True when no feature is listed under two topics (or twice).
    pub fn is_exclusive(&self) -> bool {
        let mut seen = HashSet::new();
        self.topics
            .iter()
            .flat_map(|t| &t.seeds)
            .all(|s| seen.insert((s.kind, s.surface.as_str())))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        std::fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }

    /// Per-seed report with columns topic, surface, rf.
    pub fn write_seed_report(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(f));
        let err = |e: csv::Error| Error::Serialization(e.to_string());
        w.write_record(["topic", "surface", "rf"]).map_err(err)?;
        for t in &self.topics {
            for s in &t.seeds {
                w.write_record([t.topic.as_str(), s.surface.as_str(), &s.rf.to_string()])
                    .map_err(err)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinalizeReport {
    pub dropped_tfidf: usize,
    pub dropped_count: usize,
    pub dropped_topics: Vec<String>,
    /// Surviving seed count per topic of the candidate stage.
    pub seed_counts: Vec<(String, usize)>,
}

/// True when a candidate feature passes the TF-IDF and count thresholds.
pub fn passes_thresholds(stats: &TopicFeatureStats, topic: usize, f: &Feature, cfg: &LexiconConfig) -> bool {
    let Some(score) = stats.scores[topic].get(f) else {
        return false;
    };
    score.tfidf >= cfg.tfidf_min
        && stats.reference_count(f) >= cfg.min_count_each
        && stats.target_count(f) >= cfg.min_count_each
}

pub fn finalize_lexicon(
    candidates: &[CandidateTopic],
    stats: &TopicFeatureStats,
    cfg: &LexiconConfig,
) -> Result<(SeedLexicon, FinalizeReport)> {
    let mut report = FinalizeReport::default();
    let mut topics = Vec::new();
    for c in candidates {
        let scores = &stats.scores[c.topic];
        let mut seeds = Vec::new();
        for f in &c.features {
            let s = scores[f];
            if s.tfidf < cfg.tfidf_min {
                report.dropped_tfidf += 1;
                continue;
            }
            if stats.reference_count(f) < cfg.min_count_each || stats.target_count(f) < cfg.min_count_each {
                report.dropped_count += 1;
                continue;
            }
            seeds.push(Seed {
                surface: f.surface.clone(),
                kind: f.kind,
                rf: s.rf,
                tfidf: s.tfidf,
            });
        }
        let topic = &stats.topics[c.topic];
        report.seed_counts.push((topic.name.clone(), seeds.len()));
        if seeds.len() < cfg.min_seeds {
            report.dropped_topics.push(topic.name.clone());
            continue;
        }
        topics.push(LexiconTopic {
            topic: topic.name.clone(),
            domain: topic.domain.clone(),
            seeds,
        });
    }
    if topics.is_empty() {
        return Err(Error::AllTopicsDropped(format!(
            "no topic keeps at least {} seeds",
            cfg.min_seeds
        )));
    }
    Ok((SeedLexicon { topics }, report))
}

#[derive(Debug, Clone)]
pub struct LexiconBuild {
    pub lexicon: SeedLexicon,
    pub surviving_topics: Vec<ConsolidatedTopic>,
    pub report: FinalizeReport,
}

/// Runs the whole pipeline.
pub fn build_lexicon(
    sentences: &[AnnotatedSentence],
    target: &Vocabulary,
    cfg: &LexiconConfig,
) -> Result<LexiconBuild> {
    if cfg.per_topic == 0 || cfg.min_seeds == 0 || cfg.min_count_each == 0 || cfg.tfidf_min <= 0.0 {
        return Err(Error::Config("lexicon thresholds must be positive".into()));
    }
    let labels = consolidate_all(sentences);
    let topics = filter_topics(topic_counts(sentences, &labels), cfg.min_sentences)?;
    let stats = compute_topic_stats(sentences, &labels, topics, cfg.fallback, target);
    let candidates = assign_seeds(&stats, cfg.per_topic);
    let (lexicon, report) = finalize_lexicon(&candidates, &stats, cfg)?;
    Ok(LexiconBuild {
        lexicon,
        surviving_topics: stats.topics.clone(),
        report,
    })
}

/// Reads a TSV with columns text, raw_label, domain.
pub fn read_annotated(path: &Path) -> Result<Vec<AnnotatedSentence>> {
    let mut rdr = crate::corpus::tsv_reader_for(path)?;
    let headers = rdr.headers().map_err(|e| Error::parse(path, 1, e.to_string()))?.clone();
    let col = |n: &str| headers.iter().position(|h| h.trim() == n);
    let (Some(text), Some(label), Some(domain)) = (col("text"), col("raw_label"), col("domain")) else {
        return Err(Error::parse(path, 1, "expected columns text, raw_label, domain"));
    };
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse(path, i + 2, e.to_string()))?;
        let get = |j: usize| row.get(j).unwrap_or("").to_string();
        let raw_label = get(label);
        if raw_label.trim().is_empty() {
            return Err(Error::parse(path, i + 2, "raw_label is empty"));
        }
        out.push(AnnotatedSentence {
            text: get(text),
            raw_label,
            domain: get(domain),
        });
    }
    Ok(out)
}

/// Writes the annotated-corpus TSV format read by [`read_annotated`].
pub fn write_annotated(path: &Path, sentences: &[AnnotatedSentence]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let io = |e| Error::io(path, e);
    writeln!(w, "text\traw_label\tdomain").map_err(io)?;
    for s in sentences {
        writeln!(w, "{}\t{}\t{}", s.text, s.raw_label, s.domain).map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;

    fn sentence(text: &str, label: &str) -> AnnotatedSentence {
        AnnotatedSentence {
            text: text.into(),
            raw_label: label.into(),
            domain: "Economy".into(),
        }
    }

    fn stats_from(topic_counts: &[(&str, &[(&str, u64)])]) -> TopicFeatureStats {
        let topics = topic_counts
            .iter()
            .map(|(n, _)| ConsolidatedTopic {
                name: n.to_string(),
                domain: String::new(),
                sentence_count: 1,
            })
            .collect::<Vec<_>>();
        let scores = topic_counts
            .iter()
            .map(|(_, cs)| {
                let total: u64 = cs.iter().map(|c| c.1).sum();
                cs.iter()
                    .map(|(s, c)| {
                        (
                            Feature::unigram(*s),
                            FeatureScore {
                                count: *c,
                                rf: *c as f64 / total as f64,
                                tfidf: 10.0,
                            },
                        )
                    })
                    .collect()
            })
            .collect();
        TopicFeatureStats {
            topics,
            scores,
            reference_counts: HashMap::new(),
            target_counts: HashMap::new(),
        }
    }

    #[test]
    fn label_consolidation() {
        assert_eq!(consolidate_label("Welfare+").as_deref(), Some("Welfare"));
        assert_eq!(consolidate_label("Welfare-").as_deref(), Some("Welfare"));
        assert_eq!(
            consolidate_label("National Way of Life.Immigration: Positive").as_deref(),
            Some("National Way of Life")
        );
        assert_eq!(consolidate_label("Democracy").as_deref(), Some("Democracy"));
        assert_eq!(consolidate_label("Europe: General").as_deref(), Some("Europe"));
        assert_eq!(
            consolidate_label("Law and Order: general+").as_deref(),
            Some("Law and Order")
        );
        assert_eq!(consolidate_label("  Culture  ").as_deref(), Some("Culture"));
        assert_eq!(consolidate_label("+"), None);
        assert_eq!(consolidate_label(".x"), None);
    }

    #[test]
    fn topic_filter_threshold_is_inclusive() {
        let t = |n: &str, c| ConsolidatedTopic {
            name: n.into(),
            domain: String::new(),
            sentence_count: c,
        };
        let kept = filter_topics(vec![t("A", 6000), t("B", 4999)], 5000).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].name, "A");
        assert_eq!(filter_topics(vec![t("A", 5000)], 5000).unwrap().len(), 1);
        assert!(matches!(
            filter_topics(vec![t("A", 10)], 5000),
            Err(Error::AllTopicsDropped(_))
        ));
    }

    #[test]
    fn relative_frequency_and_tfidf() {
        let sentences = vec![sentence("x x x y", "A"), sentence("y z", "B")];
        let labels = consolidate_all(&sentences);
        let topics = topic_counts(&sentences, &labels);
        let vocab = build_vocabulary([crate::corpus::tokenize("x y z")], 1).unwrap();
        let stats = compute_topic_stats(&sentences, &labels, topics, DepFallback::None, &vocab);
        let a = &stats.scores[0];
        assert_eq!(a[&Feature::unigram("x")].rf, 0.75);
        // y occurs in both topics: ln(2/2) = 0.
        assert_eq!(a[&Feature::unigram("y")].tfidf, 0.0);
        assert!((a[&Feature::unigram("x")].tfidf - 3.0 * 2f64.ln()).abs() < 1e-15);
        assert_eq!(stats.reference_count(&Feature::unigram("y")), 2);
        assert_eq!(stats.target_count(&Feature::unigram("z")), 1);
    }

    #[test]
    fn shared_top_feature_goes_to_first_topic() {
        let stats = stats_from(&[("A", &[("f", 5), ("a", 2)]), ("B", &[("f", 9), ("b", 3)])]);
        let c = assign_seeds(&stats, 2);
        assert_eq!(c[0].features, vec![Feature::unigram("f"), Feature::unigram("a")]);
        assert_eq!(c[1].features, vec![Feature::unigram("b")]);
    }

    #[test]
    fn per_topic_one_takes_argmax() {
        let stats = stats_from(&[("A", &[("a1", 5), ("a2", 2)]), ("B", &[("b1", 1), ("b2", 3)])]);
        let c = assign_seeds(&stats, 1);
        assert_eq!(c[0].features, vec![Feature::unigram("a1")]);
        assert_eq!(c[1].features, vec![Feature::unigram("b2")]);
    }

    #[test]
    fn finalize_applies_thresholds() {
        let mut stats = stats_from(&[("A", &[("a", 5), ("b", 4), ("c", 3), ("d", 2)])]);
        for f in ["a", "b", "c", "d"] {
            stats.reference_counts.insert(Feature::unigram(f), 100);
            stats.target_counts.insert(Feature::unigram(f), 100);
        }
        stats.scores[0].get_mut(&Feature::unigram("a")).unwrap().tfidf = 4.9;
        stats.target_counts.insert(Feature::unigram("b"), 49);
        let c = assign_seeds(&stats, 10);
        let cfg = LexiconConfig::default();
        // Two seeds survive, fewer than three: topic dropped, nothing left.
        assert!(matches!(
            finalize_lexicon(&c, &stats, &cfg),
            Err(Error::AllTopicsDropped(_))
        ));
        let cfg2 = LexiconConfig { min_seeds: 2, ..cfg };
        let (lex, report) = finalize_lexicon(&c, &stats, &cfg2).unwrap();
        assert_eq!(report.dropped_tfidf, 1);
        assert_eq!(report.dropped_count, 1);
        let surfaces: Vec<_> = lex.topics[0].seeds.iter().map(|s| s.surface.as_str()).collect();
        assert_eq!(surfaces, ["c", "d"]);
    }

    #[test]
    fn json_is_an_array() {
        let lex = SeedLexicon {
            topics: vec![LexiconTopic {
                topic: "t".into(),
                domain: "d".into(),
                seeds: vec![Seed {
                    surface: "human->rights".into(),
                    kind: FeatureKind::DepPair,
                    rf: 0.5,
                    tfidf: 7.0,
                }],
            }],
        };
        let v: serde_json::Value = serde_json::from_str(&lex.to_json().unwrap()).unwrap();
        assert!(v.is_array());
        assert_eq!(v[0]["seeds"][0]["kind"], "dep_pair");
    }
}
