use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use polident::analytics::GroupDistributions;
use polident::corpus::read_vocabulary;
use polident::stm::StmModel;
use polident_cli::{fixtures, write_analysis, PipelineConfig};

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn polident(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_polident"))
        .arg("--config")
        .arg(fixture_dir().join(fixtures::CONFIG))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).trim().to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).to_string()
}

fn ok(o: Output) -> String {
    assert_eq!(o.status.code(), Some(0), "stderr: {}", stderr(&o));
    stdout(&o)
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Runs build-lexicon and fit into a fresh directory.
fn fitted(extra_fit: &[&str]) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    ok(polident(tmp.path(), &["build-lexicon"]));
    let mut args = vec!["fit"];
    args.extend_from_slice(extra_fit);
    ok(polident(tmp.path(), &args));
    tmp
}

#[test]
fn bundled_fixtures_regenerate_identically() {
    let tmp = tempfile::tempdir().unwrap();
    fixtures::write_all(tmp.path()).unwrap();
    for name in [
        fixtures::BIOS,
        fixtures::ANNOTATED,
        fixtures::SIMILARITY,
        fixtures::SURVEY,
        fixtures::CONFIG,
    ] {
        assert!(
            read(&tmp.path().join(name)) == read(&fixture_dir().join(name)),
            "{name} differs from the generator output"
        );
    }
}

#[test]
fn build_lexicon_summary_and_determinism() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(ok(polident(a.path(), &["build-lexicon"])), "5 topics, 50 features");
    ok(polident(b.path(), &["--threads", "1", "build-lexicon"]));
    for f in [
        "lexicon.json",
        "seed_report.csv",
        "vocabulary.tsv",
        "lexicon_summary.json",
    ] {
        assert!(read(&a.path().join(f)) == read(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn missing_input_exits_2_and_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polident(
        tmp.path(),
        &["build-lexicon", "--annotated", "/nonexistent/annotated.tsv"],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/annotated.tsv"), "{}", stderr(&o));
}

#[test]
fn impossible_min_seeds_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polident(tmp.path(), &["build-lexicon", "--min-seeds", "500"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("all topics dropped"), "{}", stderr(&o));
}

#[test]
fn bad_config_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[lexicon]\nper_topc = 3\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polident"))
        .arg("--config")
        .arg(&cfg)
        .arg("build-lexicon")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.toml"), "{}", stderr(&o));

    std::fs::write(&cfg, "[stm]\nseed_mass = 1.5\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_polident"))
        .arg("--config")
        .arg(&cfg)
        .arg("fit")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_is_deterministic_across_runs_and_threads() {
    let a = fitted(&[]);
    let b = tempfile::tempdir().unwrap();
    ok(polident(b.path(), &["build-lexicon"]));
    ok(polident(b.path(), &["--threads", "2", "fit"]));
    for f in [
        "model.json",
        "bound_trace.csv",
        "theta.csv",
        "effects.csv",
        "fit_summary.json",
    ] {
        assert!(read(&a.path().join(f)) == read(&b.path().join(f)), "{f} differs");
    }
}

#[test]
fn infinite_emtol_runs_one_iteration() {
    let tmp = fitted(&["--emtol", "inf"]);
    let model = StmModel::read(&tmp.path().join("model.json")).unwrap();
    assert_eq!(model.convergence.iterations, 1);
    assert_eq!(model.convergence.reason, polident::stm::StopReason::Emtol);
    let summary = std::fs::read_to_string(tmp.path().join("fit_summary.json")).unwrap();
    assert!(summary.contains("\"reason\": \"emtol\""), "{summary}");
}

#[test]
fn max_iter_is_recorded() {
    let tmp = fitted(&["--emtol", "1e-12", "--max-iter", "2"]);
    let model = StmModel::read(&tmp.path().join("model.json")).unwrap();
    assert_eq!(model.convergence.iterations, 2);
    assert_eq!(model.convergence.reason, polident::stm::StopReason::MaxIter);
    let trace = std::fs::read_to_string(tmp.path().join("bound_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 3);
}

#[test]
fn fit_without_lexicon_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polident(tmp.path(), &["fit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("lexicon.json"));
}

#[test]
fn analyze_outputs_have_expected_shapes() {
    let tmp = fitted(&[]);
    ok(polident(tmp.path(), &["analyze"]));
    let dir = tmp.path().join("analysis");
    let lines = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap().lines().count();
    // 6 topics, 6 levels.
    assert_eq!(lines("similarity_long.csv"), 1 + 6 * 36);
    assert_eq!(lines("blocks.csv"), 1 + 6);
    assert_eq!(lines("salience.csv"), 1 + 6 * 6);
    assert_eq!(lines("beta.csv"), 1 + 36);
    // One country pair, three ranks, seeded topics only.
    assert_eq!(lines("pair_rankings_left.csv"), 1 + 3);
    assert_eq!(lines("within_country_lr.csv"), 1 + 5 + 1);
    assert_eq!(lines("country_similarity.csv"), 1 + 2);
    assert_eq!(std::fs::read_dir(dir.join("similarity")).unwrap().count(), 6);
    assert_eq!(std::fs::read_dir(dir.join("networks")).unwrap().count(), 6 * 2 * 2);
    let header = std::fs::read_to_string(dir.join("feature_diffs.csv")).unwrap();
    assert!(header.starts_with("topic,feature,kind,side,mean_prob,diff\n"));

    let before: Vec<(PathBuf, Vec<u8>)> = walk(&dir);
    ok(polident(tmp.path(), &["analyze"]));
    assert!(before == walk(&dir), "analyze is not idempotent");
}

fn walk(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.clone(), read(&p)));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn analyze_missing_model_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polident(tmp.path(), &["analyze", "--model", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identical_levels_give_unit_similarity() {
    let tmp = fitted(&[]);
    let model = StmModel::read(&tmp.path().join("model.json")).unwrap();
    let vocab = read_vocabulary(&tmp.path().join("vocabulary.tsv")).unwrap();
    let mut dists = GroupDistributions::from_model(&model, &vocab).unwrap();
    let k = dists.n_topics();
    for i in k..dists.beta.len() {
        dists.beta[i] = dists.beta[i % k].clone();
    }
    let dir = tmp.path().join("dup");
    write_analysis(&dists, &model, &PipelineConfig::default(), &dir).unwrap();
    let long = std::fs::read_to_string(dir.join("similarity_long.csv")).unwrap();
    let rows: Vec<&str> = long.lines().skip(1).collect();
    assert_eq!(rows.len(), k * 36);
    assert!(rows.iter().all(|r| r.ends_with(",1")), "{long}");
    let lr = std::fs::read_to_string(dir.join("country_similarity.csv")).unwrap();
    assert_eq!(lr, "country,similarity\nbelgium,1\nfrance,1\n");
}

#[test]
fn correlate_lists_exclusions_and_recovers_sign() {
    let tmp = tempfile::tempdir().unwrap();
    let line = ok(polident(tmp.path(), &["correlate"]));
    assert!(line.starts_with("6 countries, r = -1.0000"), "{line}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("correlation.json")).unwrap()).unwrap();
    assert_eq!(report["similarity_only"], serde_json::json!(["poland", "slovenia"]));
    assert_eq!(report["survey_only"], serde_json::json!(["greece", "sweden"]));
    assert!(report["glm"]["coefficients"][1]["estimate"].as_f64().unwrap() < 0.0);
    let curve = std::fs::read_to_string(tmp.path().join("curve.csv")).unwrap();
    assert_eq!(curve.lines().next(), Some("x,fit,lower,upper"));

    let first = read(&tmp.path().join("correlation.json"));
    ok(polident(tmp.path(), &["correlate"]));
    assert!(first == read(&tmp.path().join("correlation.json")));
}

#[test]
fn correlate_with_fewer_than_three_matches_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim.csv");
    std::fs::write(&sim, "country,similarity\nbelgium,0.9\nfrance,0.95\nportugal,0.8\n").unwrap();
    let sim = sim.to_str().unwrap();
    let o = polident(tmp.path(), &["correlate", "--similarity", sim]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("2 matched countries"), "{}", stderr(&o));
}

#[test]
fn correlate_with_malformed_survey_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let survey = tmp.path().join("survey.csv");
    std::fs::write(&survey, "country,share\nbelgium,0.4\n").unwrap();
    let o = polident(tmp.path(), &["correlate", "--survey", survey.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("conflict_share"));
}

#[test]
fn report_archives_deterministically() {
    let tmp = fitted(&[]);
    ok(polident(tmp.path(), &["analyze"]));
    ok(polident(tmp.path(), &["correlate"]));
    let line = ok(polident(tmp.path(), &["report"]));
    assert!(line.starts_with("47 files archived"), "{line}");
    let first = read(&tmp.path().join("report.tar"));
    ok(polident(tmp.path(), &["report"]));
    assert!(first == read(&tmp.path().join("report.tar")));

    let mut names: Vec<String> = tar::Archive::new(first.as_slice())
        .entries()
        .unwrap()
        .map(|e| e.unwrap().path().unwrap().display().to_string())
        .collect();
    assert!(names.contains(&"analysis/beta.csv".to_string()));
    assert!(names.contains(&"correlation.json".to_string()));
    let sorted = {
        let mut s = names.clone();
        s.sort();
        s
    };
    assert_eq!(names, sorted);
    names.dedup();
    assert_eq!(names.len(), 47);
}

#[test]
fn report_before_analyze_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let o = polident(tmp.path(), &["report"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn output_dir_falls_back_to_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_polident"))
        .arg("--config")
        .arg(fixture_dir().join(fixtures::CONFIG))
        .arg("build-lexicon")
        .env("POLIDENT_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("lexicon.json").is_file());
}

#[test]
fn rng_seed_flag_reaches_the_model() {
    let tmp = fitted(&["--emtol", "inf"]);
    let b = tempfile::tempdir().unwrap();
    ok(polident(b.path(), &["build-lexicon"]));
    ok(polident(b.path(), &["--rng-seed", "99", "fit", "--emtol", "inf"]));
    let m0 = StmModel::read(&tmp.path().join("model.json")).unwrap();
    let m1 = StmModel::read(&b.path().join("model.json")).unwrap();
    assert_eq!(m0.config.rng_seed, 0);
    assert_eq!(m1.config.rng_seed, 99);
    assert_ne!(m0.lambda, m1.lambda);
}
