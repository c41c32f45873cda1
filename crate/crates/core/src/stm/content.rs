//! Topic content: a fixed baseline log-frequency plus sparse topic, level
//! and level-by-topic deviations, and their penalized M-step.

use serde::{Deserialize, Serialize};

use crate::corpus::{DocumentVector, Vocabulary};
use crate::error::{Error, Result};
use crate::lexicon::SeedLexicon;

pub const RESIDUAL_TOPIC: &str = "residual topic";

/// `beta[l][k] = softmax(baseline + kappa_topic[k] + kappa_level[l] + kappa_inter[l][k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentModel {
    pub n_topics: usize,
    pub n_levels: usize,
    pub vocab_size: usize,
    pub baseline: Vec<f64>,
    #[serde(with = "sparse")]
    pub kappa_topic: Vec<f64>,
    #[serde(with = "sparse")]
    pub kappa_level: Vec<f64>,
    #[serde(with = "sparse")]
    pub kappa_inter: Vec<f64>,
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    for x in v.iter_mut() {
        *x /= z;
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Baseline log relative frequency from document counts. Features with no
/// occurrence get half a count so the baseline stays finite.
pub fn baseline_log_frequency(docs: &[DocumentVector], vocab_size: usize) -> Vec<f64> {
    let mut counts = vec![0.0; vocab_size];
    for d in docs {
        for &(v, c) in &d.features {
            counts[v] += c as f64;
        }
    }
    for c in counts.iter_mut() {
        if *c == 0.0 {
            *c = 0.5;
        }
    }
    let total: f64 = counts.iter().sum();
    counts.iter().map(|c| (c / total).ln()).collect()
}

impl ContentModel {
    pub fn zeros(baseline: Vec<f64>, n_topics: usize, n_levels: usize) -> Self {
        let v = baseline.len();
        Self {
            n_topics,
            n_levels,
            vocab_size: v,
            baseline,
            kappa_topic: vec![0.0; n_topics * v],
            kappa_level: vec![0.0; n_levels * v],
            kappa_inter: vec![0.0; n_levels * n_topics * v],
        }
    }

    fn check(&self, level: usize, topic: usize) -> Result<()> {
        if level >= self.n_levels {
            return Err(Error::Index {
                what: "content level",
                index: level,
                len: self.n_levels,
            });
        }
        if topic >= self.n_topics {
            return Err(Error::Index {
                what: "topic",
                index: topic,
                len: self.n_topics,
            });
        }
        Ok(())
    }

    pub fn topic_row(&self, k: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.kappa_topic[k * v..(k + 1) * v]
    }

    pub fn level_row(&self, l: usize) -> &[f64] {
        let v = self.vocab_size;
        &self.kappa_level[l * v..(l + 1) * v]
    }

    pub fn inter_row(&self, l: usize, k: usize) -> &[f64] {
        let v = self.vocab_size;
        let o = (l * self.n_topics + k) * v;
        &self.kappa_inter[o..o + v]
    }

    /// Unnormalized log-probabilities of cell (l, k).
    pub fn logits(&self, level: usize, topic: usize) -> Vec<f64> {
        let (t, y, i) = (
            self.topic_row(topic),
            self.level_row(level),
            self.inter_row(level, topic),
        );
        (0..self.vocab_size)
            .map(|v| self.baseline[v] + t[v] + y[v] + i[v])
            .collect()
    }

    pub fn beta(&self, level: usize, topic: usize) -> Result<Vec<f64>> {
        self.check(level, topic)?;
        let mut b = self.logits(level, topic);
        softmax_in_place(&mut b);
        Ok(b)
    }

    pub fn log_beta(&self, level: usize, topic: usize) -> Vec<f64> {
        let mut b = self.logits(level, topic);
        let z = log_sum_exp(&b);
        b.iter_mut().for_each(|x| *x -= z);
        b
    }

    /// Log topic-feature distributions for every (level, topic), indexed
    /// `[level * K + topic]`.
    pub fn log_beta_cube(&self) -> Vec<Vec<f64>> {
        (0..self.n_levels)
            .flat_map(|l| (0..self.n_topics).map(move |k| (l, k)))
            .map(|(l, k)| self.log_beta(l, k))
            .collect()
    }
}

/// Initial topic-feature distributions and the topic names they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct SeededInit {
    pub topic_names: Vec<String>,
    /// `K x V`, lexicon topics first and the residual topic last.
    pub beta: Vec<Vec<f64>>,
    pub seeds: Vec<Vec<usize>>,
}

/// Seeded topic k with s_k seeds gets `seed_mass / s_k` on each seed on top
/// of `(1 - seed_mass) / V` everywhere; the residual topic is uniform.
pub fn init_seeded(vocabulary: &Vocabulary, lexicon: &SeedLexicon, seed_mass: f64) -> Result<SeededInit> {
    if !(seed_mass > 0.0 && seed_mass < 1.0) {
        return Err(Error::Config(format!("seed_mass must lie in (0, 1), got {seed_mass}")));
    }
    let v = vocabulary.len();
    let vf = v as f64;
    let mut topic_names = Vec::with_capacity(lexicon.topics.len() + 1);
    let mut beta = Vec::with_capacity(lexicon.topics.len() + 1);
    let mut seeds = Vec::with_capacity(lexicon.topics.len() + 1);
    for t in &lexicon.topics {
        let mut idx = Vec::with_capacity(t.seeds.len());
        for s in &t.seeds {
            let f = s.feature();
            let i = vocabulary
                .get(&f)
                .ok_or_else(|| Error::SeedNotInVocabulary(f.surface.clone()))?;
            if !idx.contains(&i) {
                idx.push(i);
            }
        }
        if idx.is_empty() {
            return Err(Error::Config(format!("topic '{}' has no seeds", t.topic)));
        }
        let mut row = vec![(1.0 - seed_mass) / vf; v];
        let per_seed = seed_mass / idx.len() as f64;
        for &i in &idx {
            row[i] += per_seed;
        }
        topic_names.push(t.topic.clone());
        beta.push(row);
        seeds.push(idx);
    }
    topic_names.push(RESIDUAL_TOPIC.to_string());
    beta.push(vec![1.0 / vf; v]);
    seeds.push(Vec::new());
    Ok(SeededInit {
        topic_names,
        beta,
        seeds,
    })
}

impl ContentModel {
    /// Content model whose every level reproduces the initial distributions:
    /// topic deviations `ln beta0 - baseline`, all other deviations zero.
    pub fn from_init(baseline: Vec<f64>, init: &SeededInit, n_levels: usize) -> Self {
        let k = init.beta.len();
        let mut m = Self::zeros(baseline, k, n_levels);
        let v = m.vocab_size;
        for (t, row) in init.beta.iter().enumerate() {
            for j in 0..v {
                m.kappa_topic[t * v + j] = row[j].ln() - m.baseline[j];
            }
        }
        m
    }
}

/// Expected token counts per (level, topic, feature), indexed
/// `[(level * K + topic) * V + feature]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCounts {
    pub n_levels: usize,
    pub n_topics: usize,
    pub vocab_size: usize,
    pub data: Vec<f64>,
}

impl ExpectedCounts {
    pub fn zeros(n_levels: usize, n_topics: usize, vocab_size: usize) -> Self {
        Self {
            n_levels,
            n_topics,
            vocab_size,
            data: vec![0.0; n_levels * n_topics * vocab_size],
        }
    }

    pub fn cell(&self, l: usize, k: usize) -> &[f64] {
        let v = self.vocab_size;
        let o = (l * self.n_topics + k) * v;
        &self.data[o..o + v]
    }

    pub fn cell_mut(&mut self, l: usize, k: usize) -> &mut [f64] {
        let v = self.vocab_size;
        let o = (l * self.n_topics + k) * v;
        &mut self.data[o..o + v]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContentOptions {
    /// L1 weight per unit of expected count in the block being updated.
    pub l1: f64,
    pub sweeps: usize,
    pub inner_iter: usize,
}

impl Default for ContentOptions {
    fn default() -> Self {
        Self {
            l1: 0.01,
            sweeps: 3,
            inner_iter: 15,
        }
    }
}

#[derive(Clone, Copy)]
enum Block {
    Topic(usize),
    Level(usize),
    Inter(usize, usize),
}

/// Largest change of a single coordinate in one proximal step.
const MAX_COORD_STEP: f64 = 5.0;

fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Penalized multinomial-logit update of all deviation blocks by block
/// coordinate descent. Each block solves
/// `min sum_c [N_c lse(o_c + x) - E_c.(o_c + x)] + lambda |x|_1`
/// over its deviation vector `x`, with `o_c` the other terms of cell c, by
/// diagonal proximal Newton steps with backtracking.
///
/// The penalty of a block is `l1 * sqrt(N_block)`: noise in an expected
/// count grows like its square root, so the same weight shrinks small and
/// large blocks alike.
pub fn update_content(model: &mut ContentModel, counts: &ExpectedCounts, opts: &ContentOptions) {
    let (nl, nk) = (model.n_levels, model.n_topics);
    let mut blocks: Vec<Block> = (0..nk).map(Block::Topic).collect();
    blocks.extend((0..nl).map(Block::Level));
    blocks.extend((0..nl).flat_map(|l| (0..nk).map(move |k| Block::Inter(l, k))));
    for _ in 0..opts.sweeps {
        for &b in &blocks {
            update_block(model, counts, b, opts);
        }
    }
}

fn block_cells(model: &ContentModel, b: Block) -> Vec<(usize, usize)> {
    match b {
        Block::Topic(k) => (0..model.n_levels).map(|l| (l, k)).collect(),
        Block::Level(l) => (0..model.n_topics).map(|k| (l, k)).collect(),
        Block::Inter(l, k) => vec![(l, k)],
    }
}

fn block_slice(model: &mut ContentModel, b: Block) -> &mut [f64] {
    let v = model.vocab_size;
    match b {
        Block::Topic(k) => &mut model.kappa_topic[k * v..(k + 1) * v],
        Block::Level(l) => &mut model.kappa_level[l * v..(l + 1) * v],
        Block::Inter(l, k) => {
            let o = (l * model.n_topics + k) * v;
            &mut model.kappa_inter[o..o + v]
        }
    }
}

struct Cell<'a> {
    /// Logits without this block's contribution.
    offset: Vec<f64>,
    counts: &'a [f64],
    total: f64,
}

fn smooth_loss(cells: &[Cell], x: &[f64], scratch: &mut Vec<f64>) -> f64 {
    let mut loss = 0.0;
    for c in cells {
        scratch.clear();
        scratch.extend(c.offset.iter().zip(x).map(|(o, xi)| o + xi));
        let lse = log_sum_exp(scratch);
        let dot: f64 = c.counts.iter().zip(scratch.iter()).map(|(e, z)| e * z).sum();
        loss += c.total * lse - dot;
    }
    loss
}

fn l1_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v.abs()).sum()
}

fn update_block(model: &mut ContentModel, counts: &ExpectedCounts, b: Block, opts: &ContentOptions) {
    let v = model.vocab_size;
    let x_old = block_slice(model, b).to_vec();
    let cells: Vec<Cell> = block_cells(model, b)
        .into_iter()
        .filter_map(|(l, k)| {
            let e = counts.cell(l, k);
            let total: f64 = e.iter().sum();
            if total <= 0.0 {
                return None;
            }
            let mut offset = model.logits(l, k);
            offset.iter_mut().zip(&x_old).for_each(|(o, x)| *o -= x);
            Some(Cell {
                offset,
                counts: e,
                total,
            })
        })
        .collect();
    if cells.is_empty() {
        return;
    }
    let n_block: f64 = cells.iter().map(|c| c.total).sum();
    let lambda = opts.l1 * n_block.sqrt();

    let mut x = x_old;
    let mut scratch = Vec::with_capacity(v);
    let mut objective = smooth_loss(&cells, &x, &mut scratch) + lambda * l1_norm(&x);
    let mut grad = vec![0.0; v];
    let mut hess = vec![0.0; v];
    let mut z = vec![0.0; v];
    let mut trial = vec![0.0; v];
    for _ in 0..opts.inner_iter {
        grad.iter_mut().for_each(|g| *g = 0.0);
        hess.iter_mut().for_each(|h| *h = 0.0);
        for c in &cells {
            scratch.clear();
            scratch.extend(c.offset.iter().zip(&x).map(|(o, xi)| o + xi));
            softmax_in_place(&mut scratch);
            for j in 0..v {
                let p = scratch[j];
                grad[j] += c.total * p - c.counts[j];
                hess[j] += c.total * p * (1.0 - p);
            }
        }
        for j in 0..v {
            let h = hess[j].max(1e-10);
            let proposal = soft_threshold(x[j] - grad[j] / h, lambda / h);
            z[j] = x[j] + (proposal - x[j]).clamp(-MAX_COORD_STEP, MAX_COORD_STEP);
        }
        let predicted: f64 =
            (0..v).map(|j| grad[j] * (z[j] - x[j])).sum::<f64>() + lambda * (l1_norm(&z) - l1_norm(&x));
        let max_move = (0..v).fold(0.0f64, |m, j| m.max((z[j] - x[j]).abs()));
        if predicted >= 0.0 || max_move < 1e-12 {
            break;
        }
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            for j in 0..v {
                trial[j] = x[j] + step * (z[j] - x[j]);
            }
            let obj = smooth_loss(&cells, &trial, &mut scratch) + lambda * l1_norm(&trial);
            if obj <= objective + 0.25 * step * predicted + 1e-15 * objective.abs() {
                objective = obj;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
        x.copy_from_slice(&trial);
    }
    block_slice(model, b).copy_from_slice(&x);
}

/// Serializes dense row-major buffers as `{len, entries: [[index, value]]}`
/// keeping only nonzeros.
mod sparse {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Sparse {
        len: usize,
        entries: Vec<(usize, f64)>,
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        Sparse {
            len: v.len(),
            entries: v
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, x)| (i, *x))
                .collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let sp = Sparse::deserialize(d)?;
        let mut v = vec![0.0; sp.len];
        for (i, x) in sp.entries {
            if i >= sp.len {
                return Err(serde::de::Error::custom("sparse index out of range"));
            }
            v[i] = x;
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, tokenize, FeatureKind};
    use crate::lexicon::{LexiconTopic, Seed};

    fn lexicon(topics: &[(&str, &[&str])]) -> SeedLexicon {
        SeedLexicon {
            topics: topics
                .iter()
                .map(|(n, seeds)| LexiconTopic {
                    topic: n.to_string(),
                    domain: String::new(),
                    seeds: seeds
                        .iter()
                        .map(|s| Seed {
                            surface: s.to_string(),
                            kind: FeatureKind::Unigram,
                            rf: 0.0,
                            tfidf: 0.0,
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn seeded_initialization_four_features() {
        let vocab = build_vocabulary([tokenize("a a a a b b b c c d")], 1).unwrap();
        let init = init_seeded(&vocab, &lexicon(&[("t", &["a", "b"])]), 0.25).unwrap();
        assert_eq!(init.beta[0], vec![0.3125, 0.3125, 0.1875, 0.1875]);
        assert_eq!(init.beta[1], vec![0.25; 4]);
        assert_eq!(init.topic_names, vec!["t", RESIDUAL_TOPIC]);
        let sum: f64 = init.beta[0].iter().sum();
        assert!((sum - 1.0).abs() < 1e-15);
    }

    #[test]
    fn seed_missing_from_vocabulary() {
        let vocab = build_vocabulary([tokenize("a b")], 1).unwrap();
        match init_seeded(&vocab, &lexicon(&[("t", &["zzz"])]), 0.25) {
            Err(Error::SeedNotInVocabulary(s)) => assert_eq!(s, "zzz"),
            other => panic!("{other:?}"),
        }
        assert!(init_seeded(&vocab, &lexicon(&[("t", &["a"])]), 1.0).is_err());
    }

    #[test]
    fn zero_deviations_give_baseline_frequencies() {
        let freqs = [0.1, 0.2, 0.3, 0.4];
        let m = ContentModel::zeros(freqs.iter().map(|f: &f64| f.ln()).collect(), 3, 2);
        for l in 0..2 {
            for k in 0..3 {
                let b = m.beta(l, k).unwrap();
                for (x, y) in b.iter().zip(freqs) {
                    assert!((x - y).abs() < 1e-15);
                }
            }
        }
        assert!(m.beta(2, 0).is_err());
        assert!(m.beta(0, 3).is_err());
    }

    #[test]
    fn large_deviation_concentrates_mass() {
        let mut m = ContentModel::zeros(vec![0.0; 5], 2, 1);
        m.kappa_topic[2] = 60.0;
        let b = m.beta(0, 0).unwrap();
        assert!(b[2] > 1.0 - 1e-15);
        assert!(b.iter().enumerate().all(|(j, &x)| j == 2 || x < 1e-25));
    }

    #[test]
    fn unpenalized_update_matches_count_ratios() {
        // One level, two topics, three features: each cell is a free
        // multinomial, so the optimum is beta = E / N.
        let baseline = vec![(0.2f64).ln(), (0.5f64).ln(), (0.3f64).ln()];
        let mut m = ContentModel::zeros(baseline, 2, 1);
        let mut counts = ExpectedCounts::zeros(1, 2, 3);
        counts.cell_mut(0, 0).copy_from_slice(&[30.0, 10.0, 60.0]);
        counts.cell_mut(0, 1).copy_from_slice(&[5.0, 40.0, 15.0]);
        let opts = ContentOptions {
            l1: 0.0,
            sweeps: 50,
            inner_iter: 50,
        };
        update_content(&mut m, &counts, &opts);
        for k in 0..2 {
            let e = counts.cell(0, k);
            let n: f64 = e.iter().sum();
            let b = m.beta(0, k).unwrap();
            for v in 0..3 {
                assert!((b[v] - e[v] / n).abs() < 1e-8, "k={k} v={v} {b:?}");
            }
            // Log-ratios of the combined deviations equal log count ratios.
            let logit = m.logits(0, k);
            assert!(((logit[0] - logit[2]) - (e[0] / e[2]).ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn penalty_keeps_deviations_sparse() {
        let baseline = vec![(0.25f64).ln(); 4];
        let mut m = ContentModel::zeros(baseline, 1, 1);
        let mut counts = ExpectedCounts::zeros(1, 1, 4);
        counts.cell_mut(0, 0).copy_from_slice(&[25.0, 25.0, 24.0, 26.0]);
        update_content(
            &mut m,
            &counts,
            &ContentOptions {
                l1: 1.0,
                ..Default::default()
            },
        );
        assert!(m.kappa_topic.iter().all(|&x| x == 0.0));
        assert!(m.kappa_inter.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sparse_serialization_round_trip() {
        let mut m = ContentModel::zeros(vec![-1.0, -2.0], 2, 1);
        m.kappa_inter[3] = 0.125;
        let s = serde_json::to_string(&m).unwrap();
        assert!(s.contains("[3,0.125]"));
        let back: ContentModel = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
    }
}
