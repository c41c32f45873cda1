//! Bundled test fixtures. `cargo run -p polident-cli --example make_fixtures`
//! rewrites them; a test checks the checked-in copies are unchanged.

use std::path::Path;

use polident::corpus::write_records_jsonl;
use polident::lexicon::write_annotated;
use polident::synth::{annotated_corpus, planted_corpus, AnnotatedConfig, PlantedConfig};

use crate::{CliError, Result};

pub const BIOS: &str = "bios.jsonl";
pub const ANNOTATED: &str = "annotated.tsv";
pub const SIMILARITY: &str = "similarity_reported.csv";
pub const SURVEY: &str = "survey_synthetic.csv";
pub const CONFIG: &str = "pipeline.toml";

/// Average within-country Left-Right similarity of the eight countries as
/// published.
pub const REPORTED_SIMILARITY: [(&str, f64); 8] = [
    ("germany", 0.8866),
    ("spain", 0.8870),
    ("poland", 0.8971),
    ("france", 0.9077),
    ("netherlands", 0.9084),
    ("italy", 0.9254),
    ("belgium", 0.9379),
    ("slovenia", 0.9590),
];

/// Countries covered by the survey. Poland and Slovenia are missing, Greece
/// and Sweden have no similarity score.
pub const SURVEY_COUNTRIES: [&str; 8] = [
    "belgium",
    "france",
    "germany",
    "italy",
    "netherlands",
    "spain",
    "greece",
    "sweden",
];

/// Survey share that falls linearly in the similarity score.
pub fn synthetic_share(similarity: f64) -> f64 {
    0.5 - 4.0 * (similarity - 0.91)
}

const CONFIG_TEXT: &str = r#"# Bundled fixture pipeline: two countries and a small annotated corpus.
[paths]
corpus = "bios.jsonl"
annotated = "annotated.tsv"
similarity = "similarity_reported.csv"
survey = "survey_synthetic.csv"

[corpus]
countries = ["belgium", "france"]

[lexicon]
min_sentences = 500
"#;

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_all(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let planted = planted_corpus(&PlantedConfig::bundled())?;
    write_records_jsonl(&dir.join(BIOS), &planted.records)?;
    write_annotated(&dir.join(ANNOTATED), &annotated_corpus(&AnnotatedConfig::default()))?;

    let mut sim = String::from("country,similarity\n");
    for (c, s) in REPORTED_SIMILARITY {
        sim.push_str(&format!("{c},{s}\n"));
    }
    write(&dir.join(SIMILARITY), &sim)?;

    let mut survey = String::from("country,conflict_share\n");
    for c in SURVEY_COUNTRIES {
        let share = match REPORTED_SIMILARITY.iter().find(|(t, _)| *t == c) {
            Some(&(_, s)) => synthetic_share(s),
            None if c == "greece" => 0.55,
            None => 0.35,
        };
        survey.push_str(&format!("{c},{share:.4}\n"));
    }
    write(&dir.join(SURVEY), &survey)?;
    write(&dir.join(CONFIG), CONFIG_TEXT)
}
