//! Synthetic corpora with known generating parameters.
//!
//! [`planted_corpus`] draws bios from planted topic-word distributions and
//! prevalence coefficients; [`annotated_corpus`] draws labeled sentences
//! over the same topic vocabulary, so a lexicon built from the latter seeds
//! a model of the former. Both are deterministic in their `rng_seed`.

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{Feature, RawRecord};
use crate::error::{Error, Result};
use crate::groups::{CountrySet, GroupLabel, PolPos};
use crate::lexicon::{AnnotatedSentence, LexiconTopic, Seed, SeedLexicon};
use crate::stm::{PrevalenceDesign, RESIDUAL_TOPIC};

pub struct TopicSpec {
    pub name: &'static str,
    pub domain: &'static str,
    pub words: [&'static str; 8],
    /// Two-word phrases; in bios they appear as dependency pairs.
    pub phrases: [(&'static str, &'static str); 2],
}

/// Topics shared by both generators, in model order.
pub const BIO_TOPICS: [TopicSpec; 5] = [
    TopicSpec {
        name: "Environmental Protection",
        domain: "Welfare and Quality of Life",
        words: [
            "climate",
            "green",
            "planet",
            "nature",
            "ecology",
            "sustainability",
            "renewables",
            "wildlife",
        ],
        phrases: [("climate", "change"), ("green", "energy")],
    },
    TopicSpec {
        name: "Education Expansion",
        domain: "Welfare and Quality of Life",
        words: [
            "teacher",
            "school",
            "students",
            "education",
            "university",
            "learning",
            "professor",
            "pupils",
        ],
        phrases: [("public", "school"), ("lifelong", "learning")],
    },
    TopicSpec {
        name: "Freedom and Human Rights",
        domain: "Freedom and Democracy",
        words: [
            "freedom",
            "democracy",
            "liberty",
            "citizen",
            "justice",
            "constitution",
            "equality",
            "activist",
        ],
        phrases: [("human", "rights"), ("free", "speech")],
    },
    TopicSpec {
        name: "European Community/Union",
        domain: "External Relations",
        words: [
            "europe",
            "european",
            "brussels",
            "eu",
            "federalist",
            "erasmus",
            "schengen",
            "euro",
        ],
        phrases: [("european", "union"), ("united", "europe")],
    },
    TopicSpec {
        name: "Welfare State Expansion",
        domain: "Welfare and Quality of Life",
        words: [
            "welfare",
            "workers",
            "solidarity",
            "pension",
            "healthcare",
            "wages",
            "labour",
            "housing",
        ],
        phrases: [("social", "security"), ("public", "health")],
    },
];

/// Frequent in the annotated corpus but absent from bios, so its seeds
/// fail the bios count threshold.
pub const FARM_TOPIC: TopicSpec = TopicSpec {
    name: "Agriculture and Farmers",
    domain: "Economy",
    words: [
        "farmer",
        "agriculture",
        "farming",
        "crops",
        "harvest",
        "rural",
        "livestock",
        "dairy",
    ],
    phrases: [("organic", "farming"), ("family", "farm")],
};

/// Too few sentences to survive the sentence-count filter.
pub const RARE_TOPIC: TopicSpec = TopicSpec {
    name: "Military",
    domain: "External Relations",
    words: [
        "army", "soldier", "veteran", "defence", "navy", "troops", "military", "officer",
    ],
    phrases: [("armed", "forces"), ("national", "defence")],
};

pub const RESIDUAL_WORDS: [&str; 10] = [
    "father", "mother", "husband", "wife", "proud", "love", "dad", "football", "music", "coffee",
];

pub const BACKGROUND: &[&str] = &[
    "the",
    "and",
    "of",
    "in",
    "a",
    "to",
    "my",
    "for",
    "with",
    "on",
    "at",
    "is",
    "from",
    "by",
    "all",
    "our",
    "we",
    "i",
    "you",
    "me",
    "views",
    "own",
    "here",
    "more",
    "about",
    "new",
    "not",
    "just",
    "one",
    "time",
    "people",
    "world",
    "city",
    "country",
    "work",
    "day",
    "years",
    "news",
    "politics",
    "opinions",
    "tweets",
    "personal",
    "account",
    "official",
    "follow",
    "member",
    "party",
    "council",
    "local",
    "national",
    "former",
    "director",
    "manager",
    "founder",
    "writer",
    "author",
    "journalist",
    "editor",
    "engineer",
    "lawyer",
    "doctor",
    "nurse",
    "artist",
    "designer",
    "photographer",
    "researcher",
    "analyst",
    "consultant",
    "entrepreneur",
    "history",
    "science",
    "art",
    "culture",
    "books",
    "travel",
    "food",
    "sport",
    "fan",
    "team",
    "club",
    "media",
    "tech",
    "digital",
    "business",
    "economy",
    "finance",
    "market",
    "trade",
    "law",
    "policy",
    "government",
    "state",
    "web",
    "online",
    "blog",
    "podcast",
    "radio",
    "tv",
    "film",
    "cinema",
    "theatre",
    "photo",
    "town",
    "home",
    "friends",
    "kids",
    "dog",
    "cat",
    "wine",
    "beer",
    "running",
    "cycling",
    "yoga",
    "chess",
    "gaming",
    "jazz",
    "rock",
    "guitar",
    "piano",
    "poetry",
    "philosophy",
    "faith",
    "retired",
    "phd",
    "alumni",
    "graduate",
    "passionate",
    "curious",
    "enthusiast",
    "lover",
    "geek",
    "dreamer",
    "thinker",
    "traveller",
    "foodie",
    "runner",
    "reader",
    "blogger",
    "speaker",
    "coach",
];

/// Zipf exponent of the shared background distribution.
const ZIPF_EXPONENT: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedEffect {
    pub topic: usize,
    pub term: String,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct PlantedConfig {
    pub n_docs: usize,
    pub countries: Vec<String>,
    /// Seeded topics drawn from [`BIO_TOPICS`]; a residual topic is added.
    pub n_topics: usize,
    /// Mass of each topic on its exclusive features.
    pub exclusive_mass: f64,
    /// Inclusive token-count range per document.
    pub doc_len: (usize, usize),
    pub eta_sd: f64,
    /// Nonzero prevalence coefficients on the logit scale.
    pub effects: Vec<PlantedEffect>,
    /// Log-scale spread of each topic's background around the shared Zipf.
    pub topic_noise: f64,
    /// Log-scale content deviation shared by a political position.
    pub position_noise: f64,
    /// Log-scale content deviation of each country and position cell.
    pub level_noise: f64,
    /// Give the residual topic its own exclusive words. Without them it is
    /// the shared background distribution.
    pub residual_exclusive: bool,
    pub seeds_per_topic: usize,
    pub rng_seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_docs: 10_000,
            countries: vec!["belgium".into(), "france".into()],
            n_topics: 5,
            exclusive_mass: 0.4,
            doc_len: (8, 20),
            eta_sd: 1.0,
            effects: vec![
                PlantedEffect {
                    topic: 0,
                    term: "left".into(),
                    value: 0.5,
                },
                PlantedEffect {
                    topic: 1,
                    term: "france".into(),
                    value: -0.5,
                },
            ],
            topic_noise: 0.0,
            position_noise: 0.0,
            level_noise: 0.0,
            residual_exclusive: false,
            seeds_per_topic: 5,
            rng_seed: 0,
        }
    }
}

impl PlantedConfig {
    /// Settings of the bundled bios fixture: 2,000 documents over 200
    /// features, with content that differs by political position and, less,
    /// by country.
    pub fn bundled() -> Self {
        Self {
            n_docs: 2000,
            residual_exclusive: true,
            topic_noise: 0.3,
            position_noise: 0.5,
            level_noise: 0.2,
            rng_seed: 2024,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub records: Vec<RawRecord>,
    pub countries: CountrySet,
    /// Seeded topics followed by the residual topic.
    pub topic_names: Vec<String>,
    pub features: Vec<Feature>,
    /// True topic-word distributions, `beta[level][topic][feature]`.
    pub beta: Vec<Vec<Vec<f64>>>,
    pub terms: Vec<String>,
    /// Prevalence coefficients, one row per term, one column per
    /// non-residual topic.
    pub gamma: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub labels: Vec<GroupLabel>,
    /// Top-weighted exclusive features of each seeded topic.
    pub lexicon: SeedLexicon,
}

impl PlantedCorpus {
    /// True distribution of `topic` at `level` in the order of `features`.
    pub fn beta_for(&self, level: usize, topic: usize, features: &[Feature]) -> Vec<f64> {
        let index: std::collections::HashMap<&Feature, usize> =
            self.features.iter().enumerate().map(|(i, f)| (f, i)).collect();
        features
            .iter()
            .map(|f| index.get(f).map_or(0.0, |&i| self.beta[level][topic][i]))
            .collect()
    }
}

fn normalized(w: Vec<f64>) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

fn zipf(n: usize) -> Vec<f64> {
    normalized((0..n).map(|j| (j as f64 + 1.0).powf(-ZIPF_EXPONENT)).collect())
}

fn softmax(eta: &[f64]) -> Vec<f64> {
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    normalized(eta.iter().map(|e| (e - m).exp()).collect())
}

fn weighted(w: &[f64]) -> WeightedIndex<f64> {
    WeightedIndex::new(w).expect("weights are positive and finite")
}

fn lr_in(rng: &mut ChaCha8Rng, pos: PolPos) -> f64 {
    let third = 10.0 / 3.0;
    match pos {
        PolPos::Left => rng.random_range(0.0..third),
        PolPos::Center => rng.random_range(third..2.0 * third),
        PolPos::Right => rng.random_range(2.0 * third..=10.0),
    }
}

pub fn planted_corpus(cfg: &PlantedConfig) -> Result<PlantedCorpus> {
    if cfg.n_topics == 0 || cfg.n_topics > BIO_TOPICS.len() {
        return Err(Error::Config(format!("n_topics must be in 1..={}", BIO_TOPICS.len())));
    }
    if !(0.0..1.0).contains(&cfg.exclusive_mass) || cfg.doc_len.0 == 0 || cfg.doc_len.0 > cfg.doc_len.1 {
        return Err(Error::Config("invalid planted corpus settings".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let countries = CountrySet::new(cfg.countries.iter().map(String::as_str))?;
    let topics = &BIO_TOPICS[..cfg.n_topics];
    let k = cfg.n_topics + 1;
    let n_levels = countries.n_levels();

    // Feature layout: per-topic exclusive blocks, residual block, background.
    let mut features = Vec::new();
    let mut exclusive: Vec<Vec<usize>> = Vec::with_capacity(k);
    for t in topics {
        let start = features.len();
        features.extend(t.words.iter().map(|w| Feature::unigram(*w)));
        features.extend(t.phrases.iter().map(|(h, c)| Feature::dep_pair(h, c)));
        exclusive.push((start..features.len()).collect());
    }
    let start = features.len();
    if cfg.residual_exclusive {
        features.extend(RESIDUAL_WORDS.iter().map(|w| Feature::unigram(*w)));
    }
    exclusive.push((start..features.len()).collect());
    let bg_start = features.len();
    features.extend(BACKGROUND.iter().map(|w| Feature::unigram(*w)));
    let v = features.len();
    let n_bg = BACKGROUND.len();

    let excl_weights: Vec<Vec<f64>> = exclusive
        .iter()
        .map(|ix| normalized(ix.iter().map(|_| rng.random_range(0.5..1.5)).collect()))
        .collect();
    let base = zipf(n_bg);
    let draw_noise =
        |sd: f64, rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n_bg).map(|_| sd * std_normal.sample(rng)).collect() };
    let topic_noise: Vec<Vec<f64>> = (0..k).map(|_| draw_noise(cfg.topic_noise, &mut rng)).collect();
    let pos_noise: Vec<Vec<Vec<f64>>> = (0..3)
        .map(|_| (0..k).map(|_| draw_noise(cfg.position_noise, &mut rng)).collect())
        .collect();
    let level_noise: Vec<Vec<Vec<f64>>> = (0..n_levels)
        .map(|_| (0..k).map(|_| draw_noise(cfg.level_noise, &mut rng)).collect())
        .collect();

    let beta: Vec<Vec<Vec<f64>>> = (0..n_levels)
        .map(|l| {
            let p = GroupLabel::from_level(l).pol_pos.index();
            (0..k)
                .map(|t| {
                    let shared = normalized(
                        (0..n_bg)
                            .map(|j| base[j] * (topic_noise[t][j] + pos_noise[p][t][j] + level_noise[l][t][j]).exp())
                            .collect(),
                    );
                    let mut row = vec![0.0; v];
                    let em = if exclusive[t].is_empty() {
                        0.0
                    } else {
                        cfg.exclusive_mass
                    };
                    for (&i, w) in exclusive[t].iter().zip(&excl_weights[t]) {
                        row[i] = em * w;
                    }
                    for (j, s) in shared.iter().enumerate() {
                        row[bg_start + j] = (1.0 - em) * s;
                    }
                    row
                })
                .collect()
        })
        .collect();

    let labels: Vec<GroupLabel> = (0..cfg.n_docs)
        .map(|_| {
            let c = rng.random_range(0..countries.len());
            let p = PolPos::from_index(rng.random_range(0..3)).expect("three positions");
            GroupLabel::new(c, p)
        })
        .collect();
    let design = PrevalenceDesign::build(&labels, &countries)?;
    let terms = design.terms().to_vec();
    let mut gamma = vec![vec![0.0; k - 1]; terms.len()];
    for e in &cfg.effects {
        let row = terms
            .iter()
            .position(|t| *t == e.term)
            .ok_or_else(|| Error::Config(format!("unknown design term '{}'", e.term)))?;
        if e.topic >= k - 1 {
            return Err(Error::Config(format!("effect topic {} out of range", e.topic)));
        }
        gamma[row][e.topic] = e.value;
    }
    let samplers: Vec<Vec<WeightedIndex<f64>>> = beta
        .iter()
        .map(|cells| cells.iter().map(|b| weighted(b)).collect())
        .collect();
    let eta_noise = Normal::new(0.0, cfg.eta_sd).map_err(|e| Error::Config(e.to_string()))?;

    let width = cfg.n_docs.to_string().len().max(4);
    let mut records = Vec::with_capacity(cfg.n_docs);
    let mut theta = Vec::with_capacity(cfg.n_docs);
    for (d, g) in labels.iter().enumerate() {
        let x = design.row(d);
        let mut eta: Vec<f64> = (0..k - 1)
            .map(|t| x.iter().zip(&gamma).map(|(xi, row)| xi * row[t]).sum::<f64>() + eta_noise.sample(&mut rng))
            .collect();
        eta.push(0.0);
        let th = softmax(&eta);
        let topic_draw = weighted(&th);
        let n = rng.random_range(cfg.doc_len.0..=cfg.doc_len.1);
        let l = g.content_level();
        let mut words = Vec::new();
        let mut pairs = Vec::new();
        for _ in 0..n {
            let z = topic_draw.sample(&mut rng);
            let f = &features[samplers[l][z].sample(&mut rng)];
            match f.endpoints() {
                Some(_) => pairs.push(f.surface.clone()),
                None => words.push(f.surface.as_str()),
            }
        }
        records.push(RawRecord {
            doc_id: format!("bio{:0width$}", d + 1),
            text: words.join(" "),
            country: countries.name(g.country).to_string(),
            lr_score: lr_in(&mut rng, g.pol_pos),
            dep_pairs: Some(pairs),
        });
        theta.push(th);
    }

    let lexicon = SeedLexicon {
        topics: topics
            .iter()
            .enumerate()
            .map(|(t, spec)| {
                let mut order: Vec<usize> = (0..exclusive[t].len()).collect();
                order.sort_by(|&a, &b| excl_weights[t][b].total_cmp(&excl_weights[t][a]));
                LexiconTopic {
                    topic: spec.name.to_string(),
                    domain: spec.domain.to_string(),
                    seeds: order
                        .into_iter()
                        .take(cfg.seeds_per_topic)
                        .map(|j| {
                            let f = &features[exclusive[t][j]];
                            Seed {
                                surface: f.surface.clone(),
                                kind: f.kind,
                                rf: excl_weights[t][j],
                                tfidf: 0.0,
                            }
                        })
                        .collect(),
                }
            })
            .collect(),
    };

    let mut topic_names: Vec<String> = topics.iter().map(|t| t.name.to_string()).collect();
    topic_names.push(RESIDUAL_TOPIC.to_string());
    Ok(PlantedCorpus {
        records,
        countries,
        topic_names,
        features,
        beta,
        terms,
        gamma,
        theta,
        labels,
        lexicon,
    })
}

#[derive(Debug, Clone)]
pub struct AnnotatedConfig {
    /// Sentences for each of [`BIO_TOPICS`] and [`FARM_TOPIC`].
    pub sentences_per_topic: usize,
    pub rare_sentences: usize,
    /// Inclusive token-count range before phrase insertion.
    pub sentence_len: (usize, usize),
    /// Chance that a token comes from the topic's own words.
    pub topic_mass: f64,
    /// Chance that a sentence contains one of the topic's phrases.
    pub phrase_rate: f64,
    pub rng_seed: u64,
}

impl Default for AnnotatedConfig {
    fn default() -> Self {
        Self {
            sentences_per_topic: 1320,
            rare_sentences: 80,
            sentence_len: (8, 16),
            topic_mass: 0.5,
            phrase_rate: 0.3,
            rng_seed: 7,
        }
    }
}

/// Raw label spellings that all consolidate to the topic name.
fn label_variant(name: &str, rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..6) {
        0 => format!("{name}+"),
        1 => format!("{name}-"),
        2 => format!("{name}: general"),
        3 => format!("{name}.1"),
        4 => format!("{name}.2 positive"),
        _ => name.to_string(),
    }
}

pub fn annotated_corpus(cfg: &AnnotatedConfig) -> Vec<AnnotatedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let bg = weighted(&zipf(BACKGROUND.len()));
    let plan: Vec<(&TopicSpec, usize)> = BIO_TOPICS
        .iter()
        .chain(std::iter::once(&FARM_TOPIC))
        .map(|t| (t, cfg.sentences_per_topic))
        .chain(std::iter::once((&RARE_TOPIC, cfg.rare_sentences)))
        .collect();
    let mut out = Vec::new();
    for (spec, n) in plan {
        for _ in 0..n {
            let len = rng.random_range(cfg.sentence_len.0..=cfg.sentence_len.1);
            let mut tokens: Vec<&str> = (0..len)
                .map(|_| {
                    if rng.random_bool(cfg.topic_mass) {
                        spec.words[rng.random_range(0..spec.words.len())]
                    } else {
                        BACKGROUND[bg.sample(&mut rng)]
                    }
                })
                .collect();
            if rng.random_bool(cfg.phrase_rate) {
                let (h, c) = spec.phrases[rng.random_range(0..2)];
                let at = rng.random_range(0..=tokens.len());
                tokens.splice(at..at, [h, c]);
            }
            let mut text = tokens.join(" ");
            if let Some(first) = text.get(..1) {
                text = first.to_uppercase() + &text[1..] + ".";
            }
            out.push(AnnotatedSentence {
                text,
                raw_label: label_variant(spec.name, &mut rng),
                domain: spec.domain.to_string(),
            });
        }
    }
    out.shuffle(&mut rng);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn word_lists_are_disjoint() {
        let mut seen = HashSet::new();
        let lists = BIO_TOPICS
            .iter()
            .chain([&FARM_TOPIC, &RARE_TOPIC])
            .flat_map(|t| t.words.iter())
            .chain(RESIDUAL_WORDS.iter())
            .chain(BACKGROUND.iter());
        for w in lists {
            assert!(seen.insert(*w), "duplicate word {w}");
        }
        assert_eq!(BACKGROUND.len(), 140);
    }

    #[test]
    fn planted_distributions_are_normalized() {
        let c = planted_corpus(&PlantedConfig {
            n_docs: 200,
            ..PlantedConfig::bundled()
        })
        .unwrap();
        assert_eq!(c.features.len(), 200);
        assert_eq!(c.beta.len(), 6);
        for cells in &c.beta {
            for b in cells {
                assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // Exclusive blocks carry the configured mass.
        let first: f64 = c.beta[0][0][..10].iter().sum();
        assert!((first - 0.4).abs() < 1e-12);
        assert_eq!(c.gamma[1][0], 0.5);
        assert_eq!(c.gamma[3][1], -0.5);
        assert!(c.lexicon.is_exclusive());
    }

    #[test]
    fn generators_are_deterministic() {
        let cfg = PlantedConfig {
            n_docs: 50,
            ..PlantedConfig::default()
        };
        assert_eq!(
            planted_corpus(&cfg).unwrap().records,
            planted_corpus(&cfg).unwrap().records
        );
        let a = AnnotatedConfig {
            sentences_per_topic: 20,
            rare_sentences: 3,
            ..AnnotatedConfig::default()
        };
        let s1 = annotated_corpus(&a);
        assert_eq!(s1.len(), 123);
        assert_eq!(s1, annotated_corpus(&a));
    }

    #[test]
    fn labels_consolidate_to_topic_names() {
        let s = annotated_corpus(&AnnotatedConfig {
            sentences_per_topic: 30,
            rare_sentences: 5,
            ..AnnotatedConfig::default()
        });
        let names: HashSet<&str> = BIO_TOPICS
            .iter()
            .chain([&FARM_TOPIC, &RARE_TOPIC])
            .map(|t| t.name)
            .collect();
        for x in &s {
            let c = crate::lexicon::consolidate_label(&x.raw_label).unwrap();
            assert!(names.contains(c.as_str()), "{c}");
        }
    }
}
