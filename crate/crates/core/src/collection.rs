//! Test collections: queries with per-query corpora, target outputs and
//! binary utility labels.
//!
//! The on-disk format is JSONL, one query per line, with `format_version: 1`.
//! Labels may be attached inline (`"labels": {item_id: 0|1}`) or kept in a
//! separate TSV file `query_id<TAB>item_id<TAB>label<TAB>gain`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Prefix that marks payload tokens in synthetic item texts and inputs.
pub const PAYLOAD_MARKER: char = '@';

/// Retriever name under which synthetic collections carry planted scores.
pub const PLANTED_RETRIEVER: &str = "planted";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: String,
    #[serde(rename = "input")]
    pub input_text: String,
    #[serde(rename = "target")]
    pub target_output: String,
    pub corpus: Vec<Item>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<BTreeMap<String, u8>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Query {
    pub fn n(&self) -> usize {
        self.corpus.len()
    }

    pub fn item_index(&self, item_id: &str) -> Option<usize> {
        self.corpus.iter().position(|item| item.item_id == item_id)
    }

    fn validate(&self) -> Result<()> {
        if self.query_id.is_empty() {
            return Err(Error::InvalidItem {
                query_id: String::new(),
                message: "empty query_id".into(),
            });
        }
        if self.corpus.is_empty() {
            return Err(Error::EmptyCorpus(self.query_id.clone()));
        }
        let mut seen = HashSet::with_capacity(self.corpus.len());
        for item in &self.corpus {
            if item.item_id.is_empty() {
                return Err(Error::InvalidItem {
                    query_id: self.query_id.clone(),
                    message: "empty item_id".into(),
                });
            }
            if item.text.is_empty() {
                return Err(Error::InvalidItem {
                    query_id: self.query_id.clone(),
                    message: format!("item `{}` has empty text", item.item_id),
                });
            }
            if !seen.insert(item.item_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "item",
                    id: item.item_id.clone(),
                    context: Some(format!("corpus of query `{}`", self.query_id)),
                });
            }
        }
        if let Some(labels) = &self.labels {
            for (item_id, &label) in labels {
                if !seen.contains(item_id.as_str()) {
                    return Err(Error::UnknownLabelPair {
                        query_id: self.query_id.clone(),
                        item_id: item_id.clone(),
                    });
                }
                if label > 1 {
                    return Err(Error::InvalidItem {
                        query_id: self.query_id.clone(),
                        message: format!("label for `{item_id}` must be 0 or 1, got {label}"),
                    });
                }
            }
        }
        for (retriever, scores) in &self.scores {
            for (item_id, score) in scores {
                if !seen.contains(item_id.as_str()) {
                    return Err(Error::UnknownItem {
                        query_id: self.query_id.clone(),
                        item_id: item_id.clone(),
                    });
                }
                if !score.is_finite() {
                    return Err(Error::InvalidItem {
                        query_id: self.query_id.clone(),
                        message: format!("non-finite `{retriever}` score for `{item_id}`"),
                    });
                }
            }
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct QueryRecordOut<'a> {
    format_version: u32,
    #[serde(flatten)]
    query: &'a Query,
}

#[derive(Deserialize)]
struct QueryRecordIn {
    format_version: u32,
    #[serde(flatten)]
    query: Query,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TestCollection {
    pub queries: Vec<Query>,
}

impl TestCollection {
    pub fn new(queries: Vec<Query>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(queries.len());
        for query in &queries {
            query.validate()?;
            if !seen.insert(query.query_id.as_str()) {
                return Err(Error::DuplicateId {
                    kind: "query",
                    id: query.query_id.clone(),
                    context: None,
                });
            }
        }
        Ok(Self { queries })
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query(&self, query_id: &str) -> Option<&Query> {
        self.queries.iter().find(|q| q.query_id == query_id)
    }

    /// Labels attached inline to the queries, if every query carries them.
    pub fn inline_labels(&self) -> Option<UtilityLabelSet> {
        let mut set = UtilityLabelSet::default();
        for query in &self.queries {
            let labels = query.labels.as_ref()?;
            for (item_id, &label) in labels {
                set.insert(&query.query_id, item_id, f64::from(label));
            }
        }
        Some(set)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for query in &self.queries {
            let record = QueryRecordOut {
                format_version: FORMAT_VERSION,
                query,
            };
            serde_json::to_writer(&mut out, &record)?;
            out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// Loads and validates a JSONL collection.
pub fn load_collection(path: &Path) -> Result<TestCollection> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut queries = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: QueryRecordIn =
            serde_json::from_str(&line).map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        if record.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                path,
                line_no,
                format!("unsupported format_version {}", record.format_version),
            ));
        }
        queries.push(record.query);
    }
    TestCollection::new(queries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: u8,
    pub gain: f64,
}

/// Binary utility labels keyed by `(query_id, item_id)`; `label == 1` exactly
/// when `gain > 0`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UtilityLabelSet {
    entries: BTreeMap<(String, String), LabelEntry>,
}

impl UtilityLabelSet {
    pub fn insert(&mut self, query_id: &str, item_id: &str, gain: f64) {
        let label = u8::from(gain > 0.0);
        self.entries.insert(
            (query_id.to_owned(), item_id.to_owned()),
            LabelEntry { label, gain },
        );
    }

    pub fn get(&self, query_id: &str, item_id: &str) -> Option<LabelEntry> {
        self.entries
            .get(&(query_id.to_owned(), item_id.to_owned()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, LabelEntry)> {
        self.entries
            .iter()
            .map(|((q, i), e)| (q.as_str(), i.as_str(), *e))
    }

    pub fn extend(&mut self, other: UtilityLabelSet) {
        self.entries.extend(other.entries);
    }

    pub fn contains_query(&self, query_id: &str) -> bool {
        self.entries
            .range((query_id.to_owned(), String::new())..)
            .next()
            .is_some_and(|((q, _), _)| q == query_id)
    }

    fn missing_pairs<'a>(
        &self,
        queries: impl IntoIterator<Item = &'a Query>,
    ) -> Vec<(String, String)> {
        let mut missing = Vec::new();
        for query in queries {
            for item in &query.corpus {
                if self.get(&query.query_id, &item.item_id).is_none() {
                    missing.push((query.query_id.clone(), item.item_id.clone()));
                }
            }
        }
        missing
    }

    /// Usefulness flags aligned with the query's corpus order.
    pub fn labels_for(&self, query: &Query) -> Result<Vec<bool>> {
        let missing = self.missing_pairs(std::iter::once(query));
        if !missing.is_empty() {
            return Err(Error::MissingLabels(missing));
        }
        Ok(query
            .corpus
            .iter()
            .map(|item| self.get(&query.query_id, &item.item_id).unwrap().label == 1)
            .collect())
    }

    pub fn useful_count(&self, query: &Query) -> Result<usize> {
        Ok(self.labels_for(query)?.into_iter().filter(|&l| l).count())
    }

    /// Checks that every entry resolves to an item of the collection.
    pub fn validate_against(&self, collection: &TestCollection) -> Result<()> {
        for (query_id, item_id) in self.entries.keys() {
            let query = collection
                .query(query_id)
                .ok_or_else(|| Error::UnknownLabelPair {
                    query_id: query_id.clone(),
                    item_id: item_id.clone(),
                })?;
            if query.item_index(item_id).is_none() {
                return Err(Error::UnknownLabelPair {
                    query_id: query_id.clone(),
                    item_id: item_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_tsv_to(&mut out)
            .map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub(crate) fn write_tsv_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        for ((q, i), e) in &self.entries {
            writeln!(out, "{q}\t{i}\t{}\t{}", e.label, e.gain)?;
        }
        Ok(())
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut set = Self::default();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 4 {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    "expected 4 tab-separated fields",
                ));
            }
            let label: u8 = fields[2]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad label `{}`", fields[2])))?;
            let gain: f64 = fields[3]
                .parse()
                .map_err(|_| Error::parse(path, idx + 1, format!("bad gain `{}`", fields[3])))?;
            if label > 1 || (label == 1) != (gain > 0.0) {
                return Err(Error::parse(
                    path,
                    idx + 1,
                    format!("label {label} inconsistent with gain {gain}"),
                ));
            }
            set.insert(fields[0], fields[1], gain);
        }
        Ok(set)
    }
}

/// Keeps the queries with at least two useful items, preserving order.
pub fn filter_for_fairness(
    collection: &TestCollection,
    labels: &UtilityLabelSet,
) -> Result<TestCollection> {
    let missing = labels.missing_pairs(&collection.queries);
    if !missing.is_empty() {
        return Err(Error::MissingLabels(missing));
    }
    let mut kept = Vec::with_capacity(collection.len());
    for query in &collection.queries {
        if labels.useful_count(query)? >= 2 {
            kept.push(query.clone());
        }
    }
    Ok(TestCollection { queries: kept })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollectionStats {
    pub query_count: usize,
    pub avg_docs: f64,
    pub std_docs: f64,
    pub avg_pos_labels: f64,
    pub std_pos_labels: f64,
    /// Mean over queries of `100 * m / n`.
    pub avg_pct_pos: f64,
}

pub fn collection_stats(
    collection: &TestCollection,
    labels: &UtilityLabelSet,
) -> Result<CollectionStats> {
    if collection.is_empty() {
        return Err(Error::EmptyCollection);
    }
    let mut docs = Vec::with_capacity(collection.len());
    let mut pos = Vec::with_capacity(collection.len());
    let mut pct = Vec::with_capacity(collection.len());
    for query in &collection.queries {
        let n = query.n() as f64;
        let m = labels.useful_count(query)? as f64;
        docs.push(n);
        pos.push(m);
        pct.push(100.0 * m / n);
    }
    let (avg_docs, std_docs) = mean_std(&docs);
    let (avg_pos_labels, std_pos_labels) = mean_std(&pos);
    let (avg_pct_pos, _) = mean_std(&pct);
    Ok(CollectionStats {
        query_count: collection.len(),
        avg_docs,
        std_docs,
        avg_pos_labels,
        std_pos_labels,
        avg_pct_pos,
    })
}

// Population standard deviation.
fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Parameters of a planted synthetic collection.
///
/// Each query gets `round(pct_useful * n)` useful items (positive gain),
/// `round(pct_distractor * n)` distractors (negative gain) and neutral items
/// for the rest. Planted retrieval scores are `score_gap` for useful items,
/// `distractor_gap` for distractors and `0` for neutral items, each plus
/// Gaussian noise with standard deviation `noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub query_count: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub pct_useful: f64,
    #[serde(default)]
    pub pct_distractor: f64,
    pub score_gap: f64,
    #[serde(default)]
    pub distractor_gap: f64,
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_owned()));
        if self.query_count == 0 {
            return bad("query_count must be positive");
        }
        if self.n_min == 0 || self.n_min > self.n_max {
            return bad("n range must satisfy 1 <= n_min <= n_max");
        }
        if !(self.pct_useful > 0.0 && self.pct_useful < 1.0) {
            return bad("pct_useful must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.pct_distractor) {
            return bad("pct_distractor must lie in [0, 1)");
        }
        if self.pct_useful + self.pct_distractor > 1.0 {
            return bad("pct_useful + pct_distractor must not exceed 1");
        }
        if !(self.score_gap > 0.0 && self.score_gap.is_finite()) {
            return bad("score_gap must be positive");
        }
        if !(self.distractor_gap.is_finite() && self.noise.is_finite() && self.noise >= 0.0) {
            return bad("distractor_gap and noise must be finite, noise non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlantedRole {
    Useful,
    Distractor,
    Neutral,
}

impl PlantedRole {
    /// Planted utility gain: +1 useful, -1 distractor, 0 neutral.
    pub fn gain(self) -> f64 {
        match self {
            PlantedRole::Useful => 1.0,
            PlantedRole::Distractor => -1.0,
            PlantedRole::Neutral => 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub collection: TestCollection,
    pub labels: UtilityLabelSet,
    pub planted: BTreeMap<(String, String), PlantedRole>,
}

impl SyntheticCollection {
    pub fn planted_gain(&self, query_id: &str, item_id: &str) -> Option<f64> {
        self.planted
            .get(&(query_id.to_owned(), item_id.to_owned()))
            .map(|r| r.gain())
    }
}

const FILLER: &[&str] = &[
    "the", "report", "notes", "about", "weather", "market", "river", "garden", "music", "history",
    "travel", "recipe", "engine", "harbor", "winter", "letter", "review", "station", "forest",
    "screen", "island", "paper", "signal", "window", "camera", "bridge", "summer", "village",
    "circuit", "painting",
];

/// Deterministically builds a planted collection.
///
/// Item texts carry `@`-prefixed payload tokens: the input holds one prior
/// token that the generator always knows, useful items hold a token of the
/// target, distractors hold a token outside it, neutral items hold none.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCollection> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = Normal::new(0.0, spec.noise).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut queries = Vec::with_capacity(spec.query_count);
    let mut labels = UtilityLabelSet::default();
    let mut planted = BTreeMap::new();
    let width = spec.query_count.to_string().len().max(4);

    for q in 0..spec.query_count {
        let query_id = format!("s{q:0width$}");
        let n = rng.random_range(spec.n_min..=spec.n_max);
        let m = ((spec.pct_useful * n as f64).round() as usize).min(n);
        let d = ((spec.pct_distractor * n as f64).round() as usize).min(n - m);

        let mut roles: Vec<PlantedRole> = std::iter::repeat_n(PlantedRole::Useful, m)
            .chain(std::iter::repeat_n(PlantedRole::Distractor, d))
            .chain(std::iter::repeat_n(PlantedRole::Neutral, n - m - d))
            .collect();
        roles.shuffle(&mut rng);

        let topic: Vec<String> = (0..3).map(|t| format!("{query_id}topic{t}")).collect();
        let prior = format!("{PAYLOAD_MARKER}{query_id}.p");
        let input_text = format!(
            "tell me about {} {} {} {prior}",
            topic[0], topic[1], topic[2]
        );

        let mut corpus = Vec::with_capacity(n);
        let mut scores = BTreeMap::new();
        let mut inline = BTreeMap::new();
        let mut target_tokens = vec![prior.clone()];
        let (mut u, mut x) = (0, 0);
        for (j, role) in roles.iter().enumerate() {
            let item_id = format!("{query_id}-d{j:03}");
            let mut words: Vec<String> = (0..4)
                .map(|_| FILLER[rng.random_range(0..FILLER.len())].to_owned())
                .collect();
            let base = match role {
                PlantedRole::Useful => {
                    let token = format!("{PAYLOAD_MARKER}{query_id}.u{u}");
                    u += 1;
                    target_tokens.push(token.clone());
                    words.push(topic[0].clone());
                    words.push(token);
                    spec.score_gap
                }
                PlantedRole::Distractor => {
                    let token = format!("{PAYLOAD_MARKER}{query_id}.x{x}");
                    x += 1;
                    words.extend(topic.iter().cloned());
                    words.push(token);
                    spec.distractor_gap
                }
                PlantedRole::Neutral => 0.0,
            };
            let score = base + normal.sample(&mut rng);
            corpus.push(Item {
                item_id: item_id.clone(),
                text: words.join(" "),
                provider_id: None,
            });
            scores.insert(item_id.clone(), score);
            inline.insert(item_id.clone(), u8::from(*role == PlantedRole::Useful));
            labels.insert(&query_id, &item_id, role.gain());
            planted.insert((query_id.clone(), item_id), *role);
        }
        target_tokens.sort();

        queries.push(Query {
            query_id,
            input_text,
            target_output: target_tokens.join(" "),
            corpus,
            labels: Some(inline),
            scores: BTreeMap::from([(PLANTED_RETRIEVER.to_owned(), scores)]),
        });
    }

    Ok(SyntheticCollection {
        collection: TestCollection::new(queries)?,
        labels,
        planted,
    })
}
