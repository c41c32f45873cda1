use std::collections::HashMap;

use polident::corpus::{
    build_vocabulary, read_records, read_vocabulary, tokenize, write_records_jsonl, write_vocabulary, Corpus,
    CorpusConfig, DepFallback, Feature, RawRecord,
};
use polident::groups::CountrySet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 12] = [
    "proud", "mother", "patriot", "teacher", "green", "union", "faith", "family", "free", "worker", "nurse", "voter",
];

fn random_records(n: usize, countries: &[&str], seed: u64) -> Vec<RawRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let len = rng.random_range(1..12);
            let text: Vec<&str> = (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect();
            RawRecord {
                doc_id: format!("d{i:04}"),
                text: text.join(" "),
                country: countries[rng.random_range(0..countries.len())].to_string(),
                lr_score: rng.random_range(0..=100) as f64 / 10.0,
                dep_pairs: None,
            }
        })
        .collect()
}

#[test]
fn vocabulary_matches_a_plain_word_count() {
    let records = random_records(1000, &["belgium"], 1);
    let mut oracle: HashMap<String, u64> = HashMap::new();
    for r in &records {
        for w in r.text.split(' ') {
            *oracle.entry(w.to_string()).or_default() += 1;
        }
    }
    let vocab = build_vocabulary(records.iter().map(|r| tokenize(&r.text)), 50).unwrap();
    let expected = oracle.values().filter(|&&c| c >= 50).count();
    assert_eq!(vocab.len(), expected);
    for (f, &c) in vocab.features().iter().zip(vocab.counts()) {
        assert_eq!(oracle[&f.surface], c, "{}", f.surface);
    }
    // count descending, then surface ascending
    for w in vocab.features().windows(2).zip(vocab.counts().windows(2)) {
        let (f, c) = w;
        assert!(c[0] > c[1] || (c[0] == c[1] && f[0].surface < f[1].surface));
    }
}

fn lr_cell(score: f64) -> usize {
    // thirds of the scale, written out independently
    if score * 3.0 < 10.0 {
        0
    } else if score * 3.0 < 20.0 {
        1
    } else {
        2
    }
}

#[test]
fn level_counts_match_a_group_by() {
    let countries = CountrySet::default();
    let names: Vec<&str> = countries.names().iter().map(String::as_str).collect();
    let records = random_records(1500, &names, 2);
    let cfg = CorpusConfig {
        min_count: 3,
        fallback: DepFallback::None,
        countries: countries.clone(),
    };
    let corpus = Corpus::prepare(&records, &cfg).unwrap();
    let kept: HashMap<&str, ()> = corpus.documents.iter().map(|d| (d.doc_id.as_str(), ())).collect();
    let mut oracle = vec![0usize; 3 * names.len()];
    for r in records.iter().filter(|r| kept.contains_key(r.doc_id.as_str())) {
        let c = names.iter().position(|n| *n == r.country).unwrap();
        let pos = lr_cell(r.lr_score);
        // level enumeration is country-major with Left, Center, Right
        oracle[3 * c + pos] += 1;
    }
    assert_eq!(corpus.level_counts(), oracle);
    assert_eq!(corpus.documents.len() + corpus.drops.total(), records.len());
}

#[test]
fn preparation_ignores_record_order() {
    let cfg = CorpusConfig {
        countries: CountrySet::new(["belgium", "france"]).unwrap(),
        ..CorpusConfig::default()
    };
    let records = random_records(400, &["belgium", "france", "narnia"], 3);
    let mut shuffled = records.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(9));
    let a = Corpus::prepare(&records, &cfg).unwrap();
    let b = Corpus::prepare(&shuffled, &cfg).unwrap();
    assert_eq!(a.vocabulary, b.vocabulary);
    assert_eq!(a.drops, b.drops);
    let mut da = a.documents.clone();
    let mut db = b.documents.clone();
    da.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
    db.sort_by(|x, y| x.doc_id.cmp(&y.doc_id));
    assert_eq!(da, db);
    assert!(a.drops.unknown_country > 0);
}

#[test]
fn document_counts_never_exceed_vocabulary_counts() {
    let cfg = CorpusConfig {
        countries: CountrySet::new(["belgium", "france"]).unwrap(),
        ..CorpusConfig::default()
    };
    let corpus = Corpus::prepare(&random_records(600, &["belgium", "france"], 4), &cfg).unwrap();
    let mut totals = vec![0u64; corpus.vocabulary.len()];
    for d in &corpus.documents {
        assert!(d.features.windows(2).all(|w| w[0].0 < w[1].0));
        for &(v, c) in &d.features {
            totals[v] += c as u64;
        }
    }
    for (v, &t) in totals.iter().enumerate() {
        assert!(t <= corpus.vocabulary.count(v));
    }
    assert!(corpus.vocabulary.has_dep_pairs());
}

#[test]
fn records_and_vocabulary_round_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = random_records(50, &["france"], 5);
    records[0].dep_pairs = Some(vec!["proud->mother".into()]);
    let path = dir.path().join("bios.jsonl");
    write_records_jsonl(&path, &records).unwrap();
    assert_eq!(read_records(&path).unwrap(), records);

    let vocab = build_vocabulary(records.iter().map(|r| r.features(DepFallback::Bigram)), 2).unwrap();
    let vpath = dir.path().join("vocabulary.tsv");
    write_vocabulary(&vpath, &vocab).unwrap();
    assert_eq!(read_vocabulary(&vpath).unwrap(), vocab);
    assert!(vocab.get(&Feature::unigram("proud")).is_some());
}
