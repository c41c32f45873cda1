//! CSV and GraphML writers for analytics outputs, plus the reader for
//! exported feature distributions.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::corpus::Feature;
use crate::error::{Error, Result};
use crate::groups::CountrySet;
use crate::stm::StmModel;

use super::{
    AssociationNetwork, BlockSummary, CountryLr, DimensionClass, FeatureDiff, GroupDistributions, PairRanking,
    SalienceTable, SimilarityMatrix,
};

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Serialization(format!("{}: {e}", path.display()))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

/// One row per (level, topic) with one column per feature. Values use the
/// shortest representation that round-trips exactly.
pub fn write_beta_csv(path: &Path, dists: &GroupDistributions) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["level".to_string(), "topic".to_string()];
    header.extend(dists.features.iter().map(|f| f.surface.clone()));
    w.write_record(&header).map_err(&err)?;
    let k = dists.n_topics();
    for (i, row) in dists.beta.iter().enumerate() {
        let mut rec = vec![dists.countries.level_label(i / k), dists.topic_names[i % k].clone()];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a table written by [`write_beta_csv`]. Countries are taken from the
/// level labels in order of appearance.
pub fn read_beta_csv(path: &Path) -> Result<GroupDistributions> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.len() < 3 || &header[0] != "level" || &header[1] != "topic" {
        return Err(Error::parse(path, 1, "expected columns level,topic,<features>"));
    }
    let features: Vec<Feature> = header
        .iter()
        .skip(2)
        .map(|s| Feature::from_surface(s).ok_or_else(|| Error::parse(path, 1, format!("bad feature '{s}'"))))
        .collect::<Result<_>>()?;
    let mut labels = Vec::new();
    let mut topics: Vec<String> = Vec::new();
    let mut beta = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err(path))?;
        if rec.len() != header.len() {
            return Err(Error::parse(path, line, "wrong number of fields"));
        }
        labels.push(rec[0].to_string());
        if !topics.iter().any(|t| t == &rec[1]) {
            topics.push(rec[1].to_string());
        }
        let row: Vec<f64> = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map_err(|e| Error::parse(path, line, e.to_string())))
            .collect::<Result<_>>()?;
        beta.push(row);
    }
    let mut names: Vec<String> = Vec::new();
    for l in &labels {
        let (c, _) = l
            .rsplit_once('_')
            .ok_or_else(|| Error::parse(path, 0, format!("bad level label '{l}'")))?;
        if !names.iter().any(|n| n == c) {
            names.push(c.to_string());
        }
    }
    let countries = CountrySet::new(names)?;
    let k = topics.len();
    if beta.len() != countries.n_levels() * k {
        return Err(Error::parse(path, 0, "table does not cover every (level, topic) cell"));
    }
    for (i, l) in labels.iter().enumerate() {
        if countries.parse_level(l)? != i / k {
            return Err(Error::parse(path, i + 2, format!("level '{l}' out of order")));
        }
    }
    Ok(GroupDistributions {
        topic_names: topics,
        countries,
        features,
        beta,
    })
}

pub fn write_theta_csv(path: &Path, model: &StmModel, doc_ids: &[String]) -> Result<()> {
    if doc_ids.len() != model.n_docs() {
        return Err(Error::LengthMismatch {
            left: doc_ids.len(),
            right: model.n_docs(),
        });
    }
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["doc_id".to_string(), "level".to_string()];
    header.extend(model.topic_names.iter().cloned());
    w.write_record(&header).map_err(&err)?;
    for (d, row) in model.theta.iter().enumerate() {
        let mut rec = vec![doc_ids[d].clone(), model.countries.level_label(model.doc_levels[d])];
        rec.extend(row.iter().map(|x| x.to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_similarity_matrix_csv(path: &Path, s: &SimilarityMatrix, countries: &CountrySet) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let labels: Vec<String> = s.levels.iter().map(|&l| countries.level_label(l)).collect();
    let mut header = vec!["level".to_string()];
    header.extend(labels.iter().cloned());
    w.write_record(&header).map_err(&err)?;
    for a in 0..s.size() {
        let mut rec = vec![labels[a].clone()];
        rec.extend((0..s.size()).map(|b| s.at(a, b).to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_similarity_long_csv(path: &Path, matrices: &[SimilarityMatrix], countries: &CountrySet) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["topic", "level_a", "level_b", "similarity"])
        .map_err(&err)?;
    for s in matrices {
        for a in 0..s.size() {
            for b in 0..s.size() {
                w.write_record([
                    s.topic.clone(),
                    countries.level_label(s.levels[a]),
                    countries.level_label(s.levels[b]),
                    s.at(a, b).to_string(),
                ])
                .map_err(&err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_blocks_csv(path: &Path, rows: &[(BlockSummary, DimensionClass)]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record([
        "topic",
        "within_left",
        "within_center",
        "within_right",
        "left_right",
        "left_center",
        "center_right",
        "partisan",
        "right_splinter",
        "left_splinter",
    ])
    .map_err(&err)?;
    for (b, c) in rows {
        w.write_record([
            b.topic.clone(),
            b.within_left.to_string(),
            b.within_center.to_string(),
            b.within_right.to_string(),
            b.left_right.to_string(),
            b.left_center.to_string(),
            b.center_right.to_string(),
            c.partisan.to_string(),
            c.right_splinter.to_string(),
            c.left_splinter.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Long format: topic, level, raw, normalized. Missing cells and degenerate
/// rows leave the field empty.
pub fn write_salience_csv(path: &Path, table: &SalienceTable) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["topic", "level", "raw", "normalized"]).map_err(&err)?;
    for row in &table.rows {
        for (l, label) in table.level_labels.iter().enumerate() {
            let norm = row.normalized.as_ref().and_then(|n| n[l]);
            w.write_record([row.topic.clone(), label.clone(), fmt_opt(row.raw[l]), fmt_opt(norm)])
                .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_feature_diffs_csv(path: &Path, rows: &[FeatureDiff]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["topic", "feature", "kind", "side", "mean_prob", "diff"])
        .map_err(&err)?;
    for r in rows {
        w.write_record([
            r.topic.clone(),
            r.feature.clone(),
            r.kind.as_str().to_string(),
            r.side.clone(),
            r.mean_prob.to_string(),
            r.diff.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_pair_rankings_csv(path: &Path, rankings: &[PairRanking]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record([
        "side",
        "country_a",
        "country_b",
        "rank",
        "top_topic",
        "top_similarity",
        "bottom_topic",
        "bottom_similarity",
    ])
    .map_err(&err)?;
    for p in rankings {
        let n = p.top.len().max(p.bottom.len());
        for i in 0..n {
            let (tt, ts) = p.top.get(i).map_or((String::new(), String::new()), |t| {
                (t.topic.clone(), t.similarity.to_string())
            });
            let (bt, bs) = p.bottom.get(i).map_or((String::new(), String::new()), |t| {
                (t.topic.clone(), t.similarity.to_string())
            });
            w.write_record([
                p.side.as_str().to_string(),
                p.country_a.clone(),
                p.country_b.clone(),
                (i + 1).to_string(),
                tt,
                ts,
                bt,
                bs,
            ])
            .map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Topics as rows, countries as columns, with a closing `average` row.
pub fn write_lr_table_csv(path: &Path, table: &[CountryLr]) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    let mut header = vec!["topic".to_string()];
    header.extend(table.iter().map(|c| c.country.clone()));
    w.write_record(&header).map_err(&err)?;
    let n_topics = table.first().map_or(0, |c| c.per_topic.len());
    for t in 0..n_topics {
        let mut rec = vec![table[0].per_topic[t].topic.clone()];
        rec.extend(table.iter().map(|c| c.per_topic[t].similarity.to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    let mut rec = vec!["average".to_string()];
    rec.extend(table.iter().map(|c| c.average.to_string()));
    w.write_record(&rec).map_err(&err)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_network_edges_csv(path: &Path, net: &AssociationNetwork) -> Result<()> {
    let mut w = writer(path)?;
    let err = csv_err(path);
    w.write_record(["source", "target", "weight", "signed"]).map_err(&err)?;
    for e in &net.edges {
        w.write_record([
            e.source.clone(),
            e.target.clone(),
            e.weight.to_string(),
            e.signed.to_string(),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

pub fn write_network_graphml(path: &Path, net: &AssociationNetwork) -> Result<()> {
    let file = create(path)?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, r#"<?xml version="1.0" encoding="UTF-8"?>"#).map_err(io)?;
    writeln!(w, r#"<graphml xmlns="http://graphml.graphdrawing.org/xmlns">"#).map_err(io)?;
    for (id, target) in [("nw", "node"), ("ns", "node"), ("ew", "edge"), ("es", "edge")] {
        let name = if id.ends_with('w') { "weight" } else { "signed" };
        writeln!(
            w,
            r#"  <key id="{id}" for="{target}" attr.name="{name}" attr.type="double"/>"#
        )
        .map_err(io)?;
    }
    writeln!(
        w,
        r#"  <graph id="{}" edgedefault="directed">"#,
        xml_escape(&format!("{}:{}:{}", net.topic, net.level_a, net.level_b))
    )
    .map_err(io)?;
    for n in &net.nodes {
        writeln!(
            w,
            r#"    <node id="{}"><data key="nw">{}</data><data key="ns">{}</data></node>"#,
            xml_escape(&n.id),
            n.weight,
            n.signed
        )
        .map_err(io)?;
    }
    for e in &net.edges {
        writeln!(
            w,
            r#"    <edge source="{}" target="{}"><data key="ew">{}</data><data key="es">{}</data></edge>"#,
            xml_escape(&e.source),
            xml_escape(&e.target),
            e.weight,
            e.signed
        )
        .map_err(io)?;
    }
    writeln!(w, "  </graph>\n</graphml>").map_err(io)?;
    w.flush().map_err(io)
}
