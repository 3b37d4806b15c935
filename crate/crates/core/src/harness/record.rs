use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One evaluated run: a query under one sampling policy.
///
/// `alpha` is empty for deterministic-baseline and oracle rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub query_id: String,
    pub alpha: Option<f64>,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub eed_raw: f64,
    pub eer_raw: f64,
    pub eed_norm: f64,
    pub eer_norm: f64,
    pub eu_raw: f64,
    pub eu_norm: f64,
    pub u_max: f64,
    /// Every run of the query scored zero utility, so `eu_norm` is 0 by fiat.
    pub eu_flagged: bool,
    pub retriever: String,
    pub generator: String,
    pub config_hash: String,
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(file);
    // Header written by hand so an empty file still carries it.
    writer.write_record(RECORD_COLUMNS)?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.iter().ne(RECORD_COLUMNS.iter().copied()) {
        return Err(Error::parse(path, 1, "unexpected run record header"));
    }
    reader
        .deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::parse(path, i + 2, e.to_string())))
        .collect()
}

pub const RECORD_COLUMNS: [&str; 17] = [
    "query_id",
    "alpha",
    "seed",
    "n",
    "m",
    "k",
    "eed_raw",
    "eer_raw",
    "eed_norm",
    "eer_norm",
    "eu_raw",
    "eu_norm",
    "u_max",
    "eu_flagged",
    "retriever",
    "generator",
    "config_hash",
];

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn record(query_id: &str, alpha: Option<f64>) -> RunRecord {
        RunRecord {
            query_id: query_id.into(),
            alpha,
            seed: 7,
            n: 20,
            m: 5,
            k: 5,
            eed_raw: 1.0 / 3.0,
            eer_raw: 0.1 + 0.2,
            eed_norm: 0.25,
            eer_norm: 0.999_999_999_999_9,
            eu_raw: 2.0 / 7.0,
            eu_norm: 1.0,
            u_max: 2.0 / 7.0,
            eu_flagged: false,
            retriever: "scores:planted".into(),
            generator: "cmd:python3 -c \"print(1)\"".into(),
            config_hash: "abc".into(),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        let records = vec![record("q1", Some(0.5)), record("q,2", None)];
        write_records(&path, &records).unwrap();
        assert_eq!(read_records(&path).unwrap(), records);
    }

    #[test]
    fn empty_list_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("runs.csv");
        write_records(&path, &[]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, format!("{}\n", RECORD_COLUMNS.join(",")));
        assert!(read_records(&path).unwrap().is_empty());
    }

    #[test]
    fn column_list_matches_struct() {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.serialize(record("q", None)).unwrap();
        let text = String::from_utf8(writer.into_inner().unwrap()).unwrap();
        assert_eq!(text.lines().next().unwrap(), RECORD_COLUMNS.join(","));
    }
}
