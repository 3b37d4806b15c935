//! Retrieval score vectors: built-in BM25, run-file ingestion, min-max
//! normalization, deterministic ranking and the stochastic oracle.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::collection::{Query, TestCollection};
use crate::error::{Error, Result};

/// Raw retrieval scores aligned with a query's corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    pub query_id: String,
    pub item_ids: Vec<String>,
    pub scores: Vec<f64>,
}

/// Scores min-max mapped into `[1, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedScores {
    pub query_id: String,
    pub item_ids: Vec<String>,
    pub values: Vec<f64>,
}

/// Anything that assigns one score per corpus item.
pub trait Scored {
    fn query_id(&self) -> &str;
    fn item_ids(&self) -> &[String];
    fn values(&self) -> &[f64];
}

impl Scored for ScoreVector {
    fn query_id(&self) -> &str {
        &self.query_id
    }
    fn item_ids(&self) -> &[String] {
        &self.item_ids
    }
    fn values(&self) -> &[f64] {
        &self.scores
    }
}

impl Scored for NormalizedScores {
    fn query_id(&self) -> &str {
        &self.query_id
    }
    fn item_ids(&self) -> &[String] {
        &self.item_ids
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A (possibly truncated) ordering of corpus indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RankedList {
    pub query_id: String,
    pub items: Vec<usize>,
    pub truncation_k: usize,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn item_ids<'a>(&self, ids: &'a [String]) -> Vec<&'a str> {
        self.items.iter().map(|&i| ids[i].as_str()).collect()
    }
}

impl ScoreVector {
    /// Builds a vector from a sparse map, imputing the per-query minimum for
    /// corpus items the map does not mention.
    pub fn from_map(query: &Query, scores: &BTreeMap<String, f64>) -> Result<Self> {
        for (item_id, score) in scores {
            if query.item_index(item_id).is_none() {
                return Err(Error::UnknownItem {
                    query_id: query.query_id.clone(),
                    item_id: item_id.clone(),
                });
            }
            if !score.is_finite() {
                return Err(Error::Degenerate(format!(
                    "non-finite score for `{item_id}` in query `{}`",
                    query.query_id
                )));
            }
        }
        let floor = scores.values().copied().fold(f64::INFINITY, f64::min);
        let floor = if floor.is_finite() { floor } else { 0.0 };
        Ok(Self {
            query_id: query.query_id.clone(),
            item_ids: query.corpus.iter().map(|i| i.item_id.clone()).collect(),
            scores: query
                .corpus
                .iter()
                .map(|item| scores.get(&item.item_id).copied().unwrap_or(floor))
                .collect(),
        })
    }

    /// Scores stored inline in the collection under `retriever_name`.
    pub fn from_inline(query: &Query, retriever_name: &str) -> Result<Self> {
        let scores = query.scores.get(retriever_name).ok_or_else(|| {
            Error::Config(format!(
                "query `{}` carries no `{retriever_name}` scores",
                query.query_id
            ))
        })?;
        Self::from_map(query, scores)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Okapi BM25 of every corpus item against the query input.
///
/// Tokens are lowercased whitespace splits, IDF is
/// `max(0, ln((N - df + 0.5) / (df + 0.5)))` and document lengths are
/// normalized by the per-query corpus average.
pub fn bm25_score(query: &Query, params: Bm25Params) -> Result<ScoreVector> {
    if query.corpus.is_empty() {
        return Err(Error::EmptyCorpus(query.query_id.clone()));
    }
    if params.k1.is_nan() || params.k1 <= 0.0 || !(0.0..=1.0).contains(&params.b) {
        return Err(Error::Config(format!(
            "bm25 requires k1 > 0 and b in [0, 1], got k1={} b={}",
            params.k1, params.b
        )));
    }
    let docs: Vec<Vec<String>> = query.corpus.iter().map(|i| tokenize(&i.text)).collect();
    let n_docs = docs.len() as f64;
    let avg_len = docs.iter().map(Vec::len).sum::<usize>() as f64 / n_docs;

    let mut seen = HashSet::new();
    let terms: Vec<String> = tokenize(&query.input_text)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect();

    let term_freqs: Vec<HashMap<&str, usize>> = docs
        .iter()
        .map(|doc| {
            let mut tf = HashMap::new();
            for tok in doc {
                *tf.entry(tok.as_str()).or_insert(0) += 1;
            }
            tf
        })
        .collect();

    let mut scores = vec![0.0; docs.len()];
    for term in &terms {
        let df = term_freqs
            .iter()
            .filter(|tf| tf.contains_key(term.as_str()))
            .count() as f64;
        let idf = ((n_docs - df + 0.5) / (df + 0.5)).ln().max(0.0);
        if idf == 0.0 {
            continue;
        }
        for (score, (tf, doc)) in scores.iter_mut().zip(term_freqs.iter().zip(&docs)) {
            let Some(&f) = tf.get(term.as_str()) else {
                continue;
            };
            let f = f as f64;
            let len_norm = if avg_len > 0.0 {
                1.0 - params.b + params.b * doc.len() as f64 / avg_len
            } else {
                1.0
            };
            *score += idf * f * (params.k1 + 1.0) / (f + params.k1 * len_norm);
        }
    }

    Ok(ScoreVector {
        query_id: query.query_id.clone(),
        item_ids: query.corpus.iter().map(|i| i.item_id.clone()).collect(),
        scores,
    })
}

/// Reads a `query_id<TAB>item_id<TAB>score` run file. Unscored corpus items
/// receive the minimum score observed for their query.
pub fn load_scores(
    path: &Path,
    collection: &TestCollection,
) -> Result<BTreeMap<String, ScoreVector>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut raw: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query_id, item_id, score] = fields[..] else {
            return Err(Error::parse(
                path,
                line_no,
                "expected 3 tab-separated fields",
            ));
        };
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, line_no, format!("bad score `{score}`")))?;
        if !score.is_finite() {
            return Err(Error::parse(path, line_no, "non-finite score"));
        }
        let query = collection
            .query(query_id)
            .ok_or_else(|| Error::UnknownQuery(query_id.to_owned()))?;
        if query.item_index(item_id).is_none() {
            return Err(Error::UnknownItem {
                query_id: query_id.to_owned(),
                item_id: item_id.to_owned(),
            });
        }
        if raw
            .entry(query_id.to_owned())
            .or_default()
            .insert(item_id.to_owned(), score)
            .is_some()
        {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate score for ({query_id}, {item_id})"),
            ));
        }
    }
    raw.into_iter()
        .map(|(query_id, scores)| {
            let query = collection.query(&query_id).expect("checked above");
            Ok((query_id, ScoreVector::from_map(query, &scores)?))
        })
        .collect()
}

pub fn write_scores<'a>(
    path: &Path,
    vectors: impl IntoIterator<Item = &'a ScoreVector>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = || -> std::io::Result<()> {
        writeln!(out, "# query_id\titem_id\tscore")?;
        for vector in vectors {
            for (item_id, score) in vector.item_ids.iter().zip(&vector.scores) {
                writeln!(out, "{}\t{item_id}\t{score}", vector.query_id)?;
            }
        }
        out.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Maps scores affinely onto `[1, 2]`; a constant vector maps to 1.5.
pub fn minmax_normalize(scores: &ScoreVector) -> NormalizedScores {
    let (lo, hi) = scores
        .scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let range = hi - lo;
    let values = if range > 0.0 && range.is_finite() {
        scores
            .scores
            .iter()
            .map(|&s| (1.0 + (s - lo) / range).clamp(1.0, 2.0))
            .collect()
    } else {
        vec![1.5; scores.scores.len()]
    };
    NormalizedScores {
        query_id: scores.query_id.clone(),
        item_ids: scores.item_ids.clone(),
        values,
    }
}

/// Sorts by score descending with ties broken by ascending item id, then
/// truncates to `min(k, n)`.
pub fn deterministic_rank(scores: &impl Scored, k: usize) -> RankedList {
    let ids = scores.item_ids();
    let values = scores.values();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .total_cmp(&values[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order.truncate(k.min(values.len()));
    RankedList {
        query_id: scores.query_id().to_owned(),
        items: order,
        truncation_k: k,
    }
}

/// One draw from the stochastic oracle: a uniform shuffle of the useful
/// items followed by a uniform shuffle of the rest, truncated to `k`.
pub fn oracle_permutation<R: Rng + ?Sized>(
    query_id: &str,
    useful: &[bool],
    k: usize,
    rng: &mut R,
) -> RankedList {
    let mut good: Vec<usize> = (0..useful.len()).filter(|&i| useful[i]).collect();
    let mut rest: Vec<usize> = (0..useful.len()).filter(|&i| !useful[i]).collect();
    good.shuffle(rng);
    rest.shuffle(rng);
    good.extend(rest);
    good.truncate(k.min(useful.len()));
    RankedList {
        query_id: query_id.to_owned(),
        items: good,
        truncation_k: k,
    }
}
