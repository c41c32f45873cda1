use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::groups::{CountrySet, GroupLabel, PolPos};

use super::{DocumentVector, Feature, FeatureKind, RawRecord, Vocabulary};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn tsv_reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    Ok(csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .flexible(true)
        .from_reader(open(path)?))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(path, line, e.to_string())
}

/// Reads bio records from JSONL (`.jsonl`, `.json`, `.ndjson`) or TSV (any
/// other extension). TSV columns: doc_id, text, country, lr_score and an
/// optional comma-joined dep_pairs column.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    if matches!(ext.as_str(), "jsonl" | "json" | "ndjson") {
        read_jsonl(path)
    } else {
        read_tsv_records(path)
    }
}

/// Writes one JSON object per line; the inverse of the JSONL branch of
/// [`read_records`].
pub fn write_records_jsonl(path: &Path, records: &[RawRecord]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}

fn read_jsonl(path: &Path) -> Result<Vec<RawRecord>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| Error::parse(path, i + 1, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

fn read_tsv_records(path: &Path) -> Result<Vec<RawRecord>> {
    let mut rdr = tsv_reader(path)?;
    let headers = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (Some(id), Some(text), Some(country), Some(lr)) = (col("doc_id"), col("text"), col("country"), col("lr_score"))
    else {
        return Err(Error::parse(
            path,
            1,
            "expected columns doc_id, text, country, lr_score",
        ));
    };
    let dep = col("dep_pairs");
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let field = |j: usize| -> Result<&str> {
            row.get(j)
                .ok_or_else(|| Error::parse(path, line, format!("missing column {j}")))
        };
        let lr_score: f64 = field(lr)?
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line, "lr_score is not a number"))?;
        let dep_pairs = dep.and_then(|j| row.get(j)).and_then(|s| {
            let s = s.trim();
            (!s.is_empty()).then(|| s.split(',').map(|p| p.trim().to_string()).collect())
        });
        out.push(RawRecord {
            doc_id: field(id)?.to_string(),
            text: field(text)?.to_string(),
            country: field(country)?.to_string(),
            lr_score,
            dep_pairs,
        });
    }
    Ok(out)
}

/// Columns: index, kind, surface, count. Indices are zero-based.
pub fn write_vocabulary(path: &Path, vocab: &Vocabulary) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "index\tkind\tsurface\tcount").map_err(io)?;
    for (i, f) in vocab.features().iter().enumerate() {
        writeln!(w, "{i}\t{}\t{}\t{}", f.kind, f.surface, vocab.count(i)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_vocabulary(path: &Path) -> Result<Vocabulary> {
    let mut rdr = tsv_reader(path)?;
    let mut entries = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        if row.len() < 4 {
            return Err(Error::parse(path, line, "expected 4 columns"));
        }
        let index: usize = row[0].parse().map_err(|_| Error::parse(path, line, "bad index"))?;
        if index != entries.len() {
            return Err(Error::parse(path, line, "indices must be dense and ordered"));
        }
        let kind = FeatureKind::parse(&row[1])
            .ok_or_else(|| Error::parse(path, line, format!("unknown kind '{}'", &row[1])))?;
        let count: u64 = row[3].parse().map_err(|_| Error::parse(path, line, "bad count"))?;
        let feature = match kind {
            FeatureKind::Unigram => Feature::unigram(row[2].to_string()),
            FeatureKind::DepPair => Feature::parse_dep_pair(&row[2])
                .ok_or_else(|| Error::parse(path, line, "malformed dep_pair surface"))?,
        };
        entries.push((feature, count));
    }
    Vocabulary::from_entries(entries)
}

/// Sparse triplets: doc_index, feature_index, count.
pub fn write_triplets(path: &Path, docs: &[DocumentVector]) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "doc_index\tfeature_index\tcount").map_err(io)?;
    for (d, doc) in docs.iter().enumerate() {
        for &(v, c) in &doc.features {
            writeln!(w, "{d}\t{v}\t{c}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

/// Columns: doc_index, doc_id, country, pol_pos, content_level.
pub fn write_doc_meta(path: &Path, docs: &[DocumentVector], countries: &CountrySet) -> Result<()> {
    let mut w = create(path)?;
    let io = |e| Error::io(path, e);
    writeln!(w, "doc_index\tdoc_id\tcountry\tpol_pos\tcontent_level").map_err(io)?;
    for (d, doc) in docs.iter().enumerate() {
        writeln!(
            w,
            "{d}\t{}\t{}\t{}\t{}",
            doc.doc_id,
            countries.name(doc.group.country),
            doc.group.pol_pos,
            doc.group.content_level()
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Group labels and ids in document order.
pub fn read_doc_meta(path: &Path, countries: &CountrySet) -> Result<Vec<(String, GroupLabel)>> {
    let mut rdr = tsv_reader(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        if row.len() < 4 {
            return Err(Error::parse(path, line, "expected at least 4 columns"));
        }
        let country = countries
            .index_of(&row[2])
            .ok_or_else(|| Error::parse(path, line, format!("unknown country '{}'", &row[2])))?;
        let pos = PolPos::ALL
            .into_iter()
            .find(|p| p.as_str() == &row[3])
            .ok_or_else(|| Error::parse(path, line, format!("unknown pol_pos '{}'", &row[3])))?;
        out.push((row[1].to_string(), GroupLabel::new(country, pos)));
    }
    Ok(out)
}

/// Rebuilds document vectors from a triplet file and its metadata.
pub fn read_triplets(path: &Path, meta: &[(String, GroupLabel)]) -> Result<Vec<DocumentVector>> {
    let mut docs: Vec<DocumentVector> = meta
        .iter()
        .map(|(id, g)| DocumentVector {
            doc_id: id.clone(),
            features: Vec::new(),
            group: *g,
        })
        .collect();
    let mut rdr = tsv_reader(path)?;
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| csv_err(path, e))?;
        let line = i + 2;
        let parse = |j: usize| -> Result<usize> {
            row.get(j)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::parse(path, line, "bad triplet"))
        };
        let (d, v, c) = (parse(0)?, parse(1)?, parse(2)?);
        let doc = docs
            .get_mut(d)
            .ok_or_else(|| Error::parse(path, line, format!("doc_index {d} has no metadata")))?;
        doc.features.push((v, c as u32));
    }
    for d in &mut docs {
        d.features.sort_unstable();
    }
    Ok(docs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use crate::corpus::tokenize;

    #[test]
    fn vocabulary_round_trip() {
        let mut counts = tokenize("a a b c c c");
        counts.insert(Feature::dep_pair("a", "b"), 2);
        let vocab = build_vocabulary([counts], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.tsv");
        write_vocabulary(&p, &vocab).unwrap();
        assert_eq!(read_vocabulary(&p).unwrap(), vocab);
    }

    #[test]
    fn tsv_and_jsonl_records() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = dir.path().join("r.tsv");
        std::fs::write(
            &tsv,
            "doc_id\ttext\tcountry\tlr_score\tdep_pairs\n1\tHuman rights \"now\"\tfrance\t2.5\thuman->rights,rights->now\n2\tx y\tspain\t7\t\n",
        )
        .unwrap();
        let recs = read_records(&tsv).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].text, "Human rights \"now\"");
        assert_eq!(
            recs[0].dep_pairs.as_deref(),
            Some(&["human->rights".to_string(), "rights->now".to_string()][..])
        );
        assert_eq!(recs[1].dep_pairs, None);

        let jsonl = dir.path().join("r.jsonl");
        std::fs::write(
            &jsonl,
            "{\"doc_id\":\"1\",\"text\":\"a b\",\"country\":\"italy\",\"lr_score\":4.0}\n\n{\"doc_id\":\"2\",\"text\":\"c\",\"country\":\"italy\",\"lr_score\":1,\"dep_pairs\":[\"c->d\"]}\n",
        )
        .unwrap();
        let recs = read_records(&jsonl).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].dep_pairs.as_ref().unwrap()[0], "c->d");

        let missing = dir.path().join("nope.jsonl");
        assert!(matches!(read_records(&missing), Err(Error::Io { .. })));
    }
}
