//! Group-level comparisons of fitted topic content and prevalence.
//!
//! Everything here is a pure function of the per-(level, topic) feature
//! distributions and the document-topic proportions, so results can be
//! recomputed from exported tables without the fitted model.

mod export;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Feature, FeatureKind, Vocabulary};
use crate::error::{Error, Result};
use crate::groups::{CountrySet, PolPos};
use crate::stm::StmModel;

pub use export::{
    read_beta_csv, write_beta_csv, write_blocks_csv, write_feature_diffs_csv, write_lr_table_csv,
    write_network_edges_csv, write_network_graphml, write_pair_rankings_csv, write_salience_csv,
    write_similarity_long_csv, write_similarity_matrix_csv, write_theta_csv,
};

/// Feature distributions for every (content level, topic) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDistributions {
    pub topic_names: Vec<String>,
    pub countries: CountrySet,
    pub features: Vec<Feature>,
    /// Indexed `[level * K + topic]`.
    pub beta: Vec<Vec<f64>>,
}

impl GroupDistributions {
    pub fn from_model(model: &StmModel, vocabulary: &Vocabulary) -> Result<Self> {
        if vocabulary.len() != model.vocab_size() {
            return Err(Error::LengthMismatch {
                left: vocabulary.len(),
                right: model.vocab_size(),
            });
        }
        if crate::stm::vocabulary_hash(vocabulary) != model.vocab_hash {
            return Err(Error::Config("vocabulary does not match the fitted model".into()));
        }
        let k = model.n_topics();
        let beta = (0..model.n_levels() * k)
            .into_par_iter()
            .map(|i| model.beta(i / k, i % k))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            topic_names: model.topic_names.clone(),
            countries: model.countries.clone(),
            features: vocabulary.features().to_vec(),
            beta,
        })
    }

    pub fn n_topics(&self) -> usize {
        self.topic_names.len()
    }

    pub fn n_levels(&self) -> usize {
        self.countries.n_levels()
    }

    pub fn vocab_size(&self) -> usize {
        self.features.len()
    }

    pub fn topic_index(&self, name: &str) -> Result<usize> {
        self.topic_names
            .iter()
            .position(|t| t == name)
            .ok_or_else(|| Error::Config(format!("unknown topic '{name}'")))
    }

    pub fn get(&self, level: usize, topic: usize) -> Result<&[f64]> {
        if level >= self.n_levels() {
            return Err(Error::Index {
                what: "content level",
                index: level,
                len: self.n_levels(),
            });
        }
        if topic >= self.n_topics() {
            return Err(Error::Index {
                what: "topic",
                index: topic,
                len: self.n_topics(),
            });
        }
        Ok(&self.beta[level * self.n_topics() + topic])
    }

    /// Country-averaged distribution of `topic` on one side.
    pub fn side_mean(&self, topic: usize, pos: PolPos) -> Result<Vec<f64>> {
        let c = self.countries.len();
        let mut out = vec![0.0; self.vocab_size()];
        for country in 0..c {
            let b = self.get(self.countries.level(country, pos), topic)?;
            for (o, x) in out.iter_mut().zip(b) {
                *o += x;
            }
        }
        out.iter_mut().for_each(|x| *x /= c as f64);
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Divergence and similarity

fn kl_to_mid(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(a, _)| **a > 0.0)
        .map(|(a, b)| a * (2.0 * a / (a + b)).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits, so the result lies in [0, 1].
pub fn js_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    let d = 0.5 * kl_to_mid(p, q) + 0.5 * kl_to_mid(q, p);
    Ok(d.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityMatrix {
    pub topic: String,
    pub levels: Vec<usize>,
    /// Row-major `levels.len()` squared entries.
    pub values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn size(&self) -> usize {
        self.levels.len()
    }

    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.size() + b]
    }

    /// Entry for two content levels, looked up by level id.
    pub fn between(&self, level_a: usize, level_b: usize) -> Option<f64> {
        let a = self.levels.iter().position(|&l| l == level_a)?;
        let b = self.levels.iter().position(|&l| l == level_b)?;
        Some(self.at(a, b))
    }
}

/// `S[a][b] = 1 - JSD(beta(a, k), beta(b, k))` over the given levels.
pub fn similarity_matrix(dists: &GroupDistributions, topic: usize, levels: &[usize]) -> Result<SimilarityMatrix> {
    let n = levels.len();
    let rows: Vec<&[f64]> = levels.iter().map(|&l| dists.get(l, topic)).collect::<Result<_>>()?;
    let mut values = vec![1.0; n * n];
    for a in 0..n {
        for b in a + 1..n {
            let s = 1.0 - js_divergence(rows[a], rows[b])?;
            values[a * n + b] = s;
            values[b * n + a] = s;
        }
    }
    Ok(SimilarityMatrix {
        topic: dists.topic_names[topic].clone(),
        levels: levels.to_vec(),
        values,
    })
}

/// Similarity matrices over all content levels, one per topic.
pub fn all_similarity_matrices(dists: &GroupDistributions) -> Result<Vec<SimilarityMatrix>> {
    let levels: Vec<usize> = (0..dists.n_levels()).collect();
    (0..dists.n_topics())
        .into_par_iter()
        .map(|k| similarity_matrix(dists, k, &levels))
        .collect()
}

// ---------------------------------------------------------------------------
// Blocks and classification

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSummary {
    pub topic: String,
    pub within_left: f64,
    pub within_center: f64,
    pub within_right: f64,
    pub left_right: f64,
    pub left_center: f64,
    pub center_right: f64,
}

fn full_level_index(s: &SimilarityMatrix, countries: &CountrySet) -> Result<()> {
    let expected: Vec<usize> = (0..countries.n_levels()).collect();
    if s.levels != expected {
        return Err(Error::Config(format!(
            "block averages need a matrix over all {} content levels in order",
            countries.n_levels()
        )));
    }
    Ok(())
}

fn within_block(s: &SimilarityMatrix, countries: &CountrySet, pos: PolPos) -> f64 {
    let c = countries.len();
    let mut sum = 0.0;
    let mut n = 0usize;
    for i in 0..c {
        for j in i + 1..c {
            sum += s.at(countries.level(i, pos), countries.level(j, pos));
            n += 1;
        }
    }
    sum / n as f64
}

fn cross_block(s: &SimilarityMatrix, countries: &CountrySet, a: PolPos, b: PolPos) -> f64 {
    let c = countries.len();
    let mut sum = 0.0;
    for i in 0..c {
        for j in 0..c {
            sum += s.at(countries.level(i, a), countries.level(j, b));
        }
    }
    sum / (c * c) as f64
}

/// Within-side blocks average distinct country pairs; cross-side blocks
/// average every ordered country pair, same-country pairs included.
pub fn block_averages(s: &SimilarityMatrix, countries: &CountrySet) -> Result<BlockSummary> {
    if countries.len() < 2 {
        return Err(Error::InsufficientData(
            "within-side blocks need at least two countries".into(),
        ));
    }
    full_level_index(s, countries)?;
    Ok(BlockSummary {
        topic: s.topic.clone(),
        within_left: within_block(s, countries, PolPos::Left),
        within_center: within_block(s, countries, PolPos::Center),
        within_right: within_block(s, countries, PolPos::Right),
        left_right: cross_block(s, countries, PolPos::Left, PolPos::Right),
        left_center: cross_block(s, countries, PolPos::Left, PolPos::Center),
        center_right: cross_block(s, countries, PolPos::Center, PolPos::Right),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DimensionClass {
    pub partisan: bool,
    pub right_splinter: bool,
    pub left_splinter: bool,
}

/// Strict comparisons of the Left/Right blocks; ties set no flag.
pub fn classify_dimension(b: &BlockSummary) -> DimensionClass {
    DimensionClass {
        partisan: b.left_right < b.within_left && b.left_right < b.within_right,
        right_splinter: b.within_right < b.left_right,
        left_splinter: b.within_left < b.left_right,
    }
}

// ---------------------------------------------------------------------------
// Salience

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceRow {
    pub topic: String,
    /// Mean proportion per content level; `None` for levels without documents.
    pub raw: Vec<Option<f64>>,
    /// Min-max scaled raw values; `None` when the row is degenerate.
    pub normalized: Option<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceTable {
    pub level_labels: Vec<String>,
    pub rows: Vec<SalienceRow>,
}

impl SalienceTable {
    pub fn degenerate_topics(&self) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.normalized.is_none())
            .map(|r| r.topic.as_str())
            .collect()
    }
}

/// Min-max scaling of the defined entries; `None` if fewer than two
/// distinct values are present.
pub fn min_max(values: &[Option<f64>]) -> Option<Vec<Option<f64>>> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if present.len() < 2 || !(hi > lo) {
        return None;
    }
    Some(values.iter().map(|v| v.map(|x| (x - lo) / (hi - lo))).collect())
}

/// Mean topic proportion per content level.
pub fn salience_table(
    theta: &[Vec<f64>],
    doc_levels: &[usize],
    topic_names: &[String],
    countries: &CountrySet,
) -> Result<SalienceTable> {
    if theta.len() != doc_levels.len() {
        return Err(Error::LengthMismatch {
            left: theta.len(),
            right: doc_levels.len(),
        });
    }
    let (nl, k) = (countries.n_levels(), topic_names.len());
    let mut sums = vec![vec![0.0; k]; nl];
    let mut counts = vec![0usize; nl];
    for (row, &l) in theta.iter().zip(doc_levels) {
        if l >= nl {
            return Err(Error::Index {
                what: "content level",
                index: l,
                len: nl,
            });
        }
        counts[l] += 1;
        for (s, x) in sums[l].iter_mut().zip(row) {
            *s += x;
        }
    }
    let rows = (0..k)
        .map(|t| {
            let raw: Vec<Option<f64>> = (0..nl)
                .map(|l| (counts[l] > 0).then(|| sums[l][t] / counts[l] as f64))
                .collect();
            let normalized = min_max(&raw);
            SalienceRow {
                topic: topic_names[t].clone(),
                raw,
                normalized,
            }
        })
        .collect();
    Ok(SalienceTable {
        level_labels: countries.level_labels(),
        rows,
    })
}

pub fn model_salience(model: &StmModel) -> Result<SalienceTable> {
    salience_table(&model.theta, &model.doc_levels, &model.topic_names, &model.countries)
}

// ---------------------------------------------------------------------------
// Left-Right feature differentials

/// Country-averaged Right probability minus country-averaged Left
/// probability of feature `v` in `topic`.
pub fn feature_diff(dists: &GroupDistributions, topic: usize, v: usize) -> Result<f64> {
    if v >= dists.vocab_size() {
        return Err(Error::Index {
            what: "feature",
            index: v,
            len: dists.vocab_size(),
        });
    }
    let c = dists.countries.len();
    let mut right = 0.0;
    let mut left = 0.0;
    for country in 0..c {
        right += dists.get(dists.countries.level(country, PolPos::Right), topic)?[v];
        left += dists.get(dists.countries.level(country, PolPos::Left), topic)?[v];
    }
    Ok(right / c as f64 - left / c as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDiff {
    pub topic: String,
    pub feature: String,
    pub kind: FeatureKind,
    /// Which side's top list the feature came from: left, right or both.
    pub side: String,
    pub mean_prob: f64,
    pub diff: f64,
}

/// Indices of the `n` largest entries, ties broken by feature surface.
fn top_indices(p: &[f64], features: &[Feature], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| {
        p[b].partial_cmp(&p[a])
            .unwrap_or(Ordering::Equal)
            .then_with(|| features[a].cmp(&features[b]))
    });
    idx.truncate(n);
    idx
}

/// Top `n_per_side` features of each side by country-averaged probability,
/// merged without duplicates (Left list first) and tagged with their diff.
pub fn top_features_by_side(dists: &GroupDistributions, topic: usize, n_per_side: usize) -> Result<Vec<FeatureDiff>> {
    let left = dists.side_mean(topic, PolPos::Left)?;
    let right = dists.side_mean(topic, PolPos::Right)?;
    let top_l = top_indices(&left, &dists.features, n_per_side);
    let top_r = top_indices(&right, &dists.features, n_per_side);
    let mut order: Vec<usize> = top_l.clone();
    for v in &top_r {
        if !order.contains(v) {
            order.push(*v);
        }
    }
    Ok(order
        .into_iter()
        .map(|v| {
            let side = match (top_l.contains(&v), top_r.contains(&v)) {
                (true, true) => "both",
                (true, false) => "left",
                _ => "right",
            };
            FeatureDiff {
                topic: dists.topic_names[topic].clone(),
                feature: dists.features[v].surface.clone(),
                kind: dists.features[v].kind,
                side: side.to_string(),
                mean_prob: 0.5 * (left[v] + right[v]),
                diff: right[v] - left[v],
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Country-pair rankings and within-country Left-Right similarity

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedTopic {
    pub topic: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRanking {
    pub side: PolPos,
    pub country_a: String,
    pub country_b: String,
    pub top: Vec<RankedTopic>,
    pub bottom: Vec<RankedTopic>,
}

/// For every unordered country pair on `side`, the `n` most and least
/// similar topics. Ties are broken by topic name.
pub fn pair_topic_rankings(
    similarities: &[SimilarityMatrix],
    side: PolPos,
    countries: &CountrySet,
    n: usize,
) -> Result<Vec<PairRanking>> {
    let c = countries.len();
    let mut out = Vec::with_capacity(c * c.saturating_sub(1) / 2);
    for i in 0..c {
        for j in i + 1..c {
            let (la, lb) = (countries.level(i, side), countries.level(j, side));
            let mut ranked: Vec<RankedTopic> = similarities
                .iter()
                .map(|s| {
                    s.between(la, lb)
                        .map(|similarity| RankedTopic {
                            topic: s.topic.clone(),
                            similarity,
                        })
                        .ok_or_else(|| Error::Config(format!("matrix for '{}' lacks levels {la}/{lb}", s.topic)))
                })
                .collect::<Result<_>>()?;
            let by_name = |a: &RankedTopic, b: &RankedTopic| a.topic.cmp(&b.topic);
            ranked.sort_by(|a, b| {
                b.similarity
                    .partial_cmp(&a.similarity)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| by_name(a, b))
            });
            let top: Vec<RankedTopic> = ranked.iter().take(n).cloned().collect();
            ranked.sort_by(|a, b| {
                a.similarity
                    .partial_cmp(&b.similarity)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| by_name(a, b))
            });
            let bottom = ranked.into_iter().take(n).collect();
            out.push(PairRanking {
                side,
                country_a: countries.name(i).to_string(),
                country_b: countries.name(j).to_string(),
                top,
                bottom,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryLr {
    pub country: String,
    pub per_topic: Vec<RankedTopic>,
    pub average: f64,
}

/// Left-vs-Right similarity of each topic inside one country.
pub fn within_country_lr(
    similarities: &[SimilarityMatrix],
    countries: &CountrySet,
    country: usize,
) -> Result<CountryLr> {
    if country >= countries.len() {
        return Err(Error::Index {
            what: "country",
            index: country,
            len: countries.len(),
        });
    }
    if similarities.is_empty() {
        return Err(Error::InsufficientData("no similarity matrices".into()));
    }
    let (l, r) = (
        countries.level(country, PolPos::Left),
        countries.level(country, PolPos::Right),
    );
    let per_topic: Vec<RankedTopic> = similarities
        .iter()
        .map(|s| {
            s.between(l, r)
                .map(|similarity| RankedTopic {
                    topic: s.topic.clone(),
                    similarity,
                })
                .ok_or_else(|| Error::Config(format!("matrix for '{}' lacks levels {l}/{r}", s.topic)))
        })
        .collect::<Result<_>>()?;
    let average = per_topic.iter().map(|t| t.similarity).sum::<f64>() / per_topic.len() as f64;
    Ok(CountryLr {
        country: countries.name(country).to_string(),
        per_topic,
        average,
    })
}

// ---------------------------------------------------------------------------
// Association networks

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkNode {
    pub id: String,
    pub weight: f64,
    pub signed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEdge {
    pub source: String,
    pub target: String,
    pub weight: f64,
    pub signed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationNetwork {
    pub topic: String,
    pub level_a: String,
    pub level_b: String,
    pub nodes: Vec<NetworkNode>,
    pub edges: Vec<NetworkEdge>,
}

/// Word-association graph for one topic contrasting two levels.
///
/// Nodes are the unigrams among the union of both levels' `top_n`
/// features. Edges are the dependency-pair features of the vocabulary whose
/// head and child are both nodes. Weights are the mean probability over the
/// two levels; signed values are `beta(level_b) - beta(level_a)`.
pub fn association_network(
    dists: &GroupDistributions,
    topic: usize,
    level_a: usize,
    level_b: usize,
    top_n: usize,
) -> Result<AssociationNetwork> {
    let pa = dists.get(level_a, topic)?;
    let pb = dists.get(level_b, topic)?;
    let mut union = top_indices(pa, &dists.features, top_n);
    for v in top_indices(pb, &dists.features, top_n) {
        if !union.contains(&v) {
            union.push(v);
        }
    }
    union.sort_by(|&a, &b| dists.features[a].cmp(&dists.features[b]));
    let nodes: Vec<NetworkNode> = union
        .iter()
        .filter(|&&v| dists.features[v].kind == FeatureKind::Unigram)
        .map(|&v| NetworkNode {
            id: dists.features[v].surface.clone(),
            weight: 0.5 * (pa[v] + pb[v]),
            signed: pb[v] - pa[v],
        })
        .collect();
    let has_pairs = dists.features.iter().any(|f| f.kind == FeatureKind::DepPair);
    if !has_pairs {
        log::warn!("vocabulary has no dependency-pair features; network has no edges");
    }
    let is_node = |s: &str| nodes.binary_search_by(|n| n.id.as_str().cmp(s)).is_ok();
    let edges = dists
        .features
        .iter()
        .enumerate()
        .filter_map(|(v, f)| {
            let (h, c) = f.endpoints()?;
            (is_node(h) && is_node(c)).then(|| NetworkEdge {
                source: h.to_string(),
                target: c.to_string(),
                weight: 0.5 * (pa[v] + pb[v]),
                signed: pb[v] - pa[v],
            })
        })
        .collect();
    Ok(AssociationNetwork {
        topic: dists.topic_names[topic].clone(),
        level_a: dists.countries.level_label(level_a),
        level_b: dists.countries.level_label(level_b),
        nodes,
        edges,
    })
}
