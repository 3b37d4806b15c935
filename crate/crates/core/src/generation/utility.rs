use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use crate::collection::{TestCollection, UtilityLabelSet};
use crate::error::{Error, Result};
use crate::generation::adapter::Generator;
use crate::generation::metrics::{string_utility, UtilityMetric};
use crate::generation::prompt::{build_prompt_from_indices, PromptTemplate};

/// Monte-Carlo expected utility: the mean over sampled rankings.
pub fn expected_utility(utilities: &[f64]) -> Result<f64> {
    if utilities.is_empty() {
        return Err(Error::Degenerate("expected utility of zero samples".into()));
    }
    Ok(utilities.iter().sum::<f64>() / utilities.len() as f64)
}

/// Largest single-sample utility across every run of a query.
pub fn empirical_max_utility<'a>(runs: impl IntoIterator<Item = &'a [f64]>) -> Result<f64> {
    runs.into_iter()
        .flatten()
        .copied()
        .reduce(f64::max)
        .ok_or_else(|| Error::Degenerate("no utilities to take a maximum over".into()))
}

/// Normalized EU and whether the query had to be flagged because every run
/// scored zero.
pub fn normalize_eu(eu_raw: f64, u_max: f64) -> (f64, bool) {
    if u_max > 0.0 {
        ((eu_raw / u_max).clamp(0.0, 1.0), false)
    } else {
        (0.0, true)
    }
}

/// Binary utility labels from single-item utility gains.
///
/// For each query the generator answers once without context (`u_i`) and
/// once per corpus item with only that item in context (`u_j`); the item is
/// useful when `u_j - u_i > 0`. With a checkpoint path, finished queries are
/// appended to it as label TSV and skipped on the next call, so a run that
/// aborts on a generator failure can be resumed.
pub fn label_utilities(
    collection: &TestCollection,
    generator: &dyn Generator,
    metric: UtilityMetric,
    template: &PromptTemplate,
    checkpoint: Option<&Path>,
) -> Result<UtilityLabelSet> {
    let mut labels = match checkpoint {
        Some(path) if path.exists() => UtilityLabelSet::load_tsv(path)?,
        _ => UtilityLabelSet::default(),
    };

    for query in &collection.queries {
        let done = query
            .corpus
            .iter()
            .all(|item| labels.get(&query.query_id, &item.item_id).is_some());
        if done {
            continue;
        }

        let mut prompts = Vec::with_capacity(query.n() + 1);
        prompts.push(build_prompt_from_indices(query, &[], template)?);
        for j in 0..query.n() {
            prompts.push(build_prompt_from_indices(query, &[j], template)?);
        }
        let outputs =
            generator
                .generate_batch(&prompts)
                .map_err(|source| Error::LabelingAborted {
                    query_id: query.query_id.clone(),
                    source,
                })?;

        let baseline = string_utility(metric, &query.target_output, &outputs[0])?;
        let mut fresh = UtilityLabelSet::default();
        for (item, output) in query.corpus.iter().zip(&outputs[1..]) {
            let gain = string_utility(metric, &query.target_output, output)? - baseline;
            fresh.insert(&query.query_id, &item.item_id, gain);
        }

        if let Some(path) = checkpoint {
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| Error::io(path, e))?;
            let mut buf = Vec::new();
            fresh.write_tsv_to(&mut buf).expect("in-memory write");
            file.write_all(&buf).map_err(|e| Error::io(path, e))?;
        }
        labels.extend(fresh);
    }
    Ok(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{generate_synthetic, Item, Query, SyntheticSpec};
    use crate::generation::adapter::SyntheticGenerator;
    use crate::GenerationError;
    use std::collections::BTreeMap;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn mean_and_max() {
        assert!((expected_utility(&[0.5, 0.7, 0.6]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(expected_utility(&[0.3; 7]).unwrap(), 0.3);
        assert_eq!(expected_utility(&[0.9]).unwrap(), 0.9);
        assert!(expected_utility(&[]).is_err());

        let sweep = [0.2, 0.4];
        let oracle = [0.3, 0.8];
        assert_eq!(empirical_max_utility([&sweep[..1]]).unwrap(), 0.2);
        assert_eq!(
            empirical_max_utility([&sweep[..], &oracle[..]]).unwrap(),
            0.8
        );
    }

    #[test]
    fn eu_normalization() {
        assert_eq!(normalize_eu(0.8, 0.8), (1.0, false));
        assert_eq!(normalize_eu(0.0, 0.8), (0.0, false));
        assert_eq!(normalize_eu(0.0, 0.0), (0.0, true));
    }

    struct Scripted {
        answers: BTreeMap<String, String>,
    }

    impl Generator for Scripted {
        fn identity(&self) -> &str {
            "scripted"
        }
        fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
            Ok(prompts
                .iter()
                .map(|p| self.answers.get(p).cloned().unwrap_or_default())
                .collect())
        }
    }

    #[test]
    fn strict_gain_rule() {
        let template = PromptTemplate::new("{input}|{items}", ",").unwrap();
        let query = Query {
            query_id: "q".into(),
            input_text: "x".into(),
            target_output: "a b c d".into(),
            corpus: vec![
                Item {
                    item_id: "up".into(),
                    text: "U".into(),
                    provider_id: None,
                },
                Item {
                    item_id: "same".into(),
                    text: "S".into(),
                    provider_id: None,
                },
            ],
            labels: None,
            scores: BTreeMap::new(),
        };
        let generator = Scripted {
            answers: BTreeMap::from([
                ("x|".to_owned(), "a b".to_owned()),
                ("x|U".to_owned(), "a b c".to_owned()),
                ("x|S".to_owned(), "a b".to_owned()),
            ]),
        };
        let collection = TestCollection::new(vec![query]).unwrap();
        let labels = label_utilities(
            &collection,
            &generator,
            UtilityMetric::TokenF1,
            &template,
            None,
        )
        .unwrap();
        let up = labels.get("q", "up").unwrap();
        assert_eq!(up.label, 1);
        assert!(up.gain > 0.0);
        assert_eq!(labels.get("q", "same").unwrap().label, 0);
        assert_eq!(labels.get("q", "same").unwrap().gain, 0.0);
    }

    struct FailAfter {
        calls: AtomicUsize,
        budget: usize,
    }

    impl Generator for FailAfter {
        fn identity(&self) -> &str {
            "synthetic"
        }
        fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
            if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
                return Err(GenerationError::ProcessExited { id: 99 });
            }
            SyntheticGenerator.generate_batch(prompts)
        }
    }

    #[test]
    fn aborted_labeling_resumes_from_checkpoint() {
        let synth = generate_synthetic(&SyntheticSpec {
            query_count: 4,
            n_min: 6,
            n_max: 6,
            pct_useful: 0.5,
            pct_distractor: 0.2,
            score_gap: 1.0,
            distractor_gap: 1.0,
            noise: 0.1,
            seed: 3,
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("labels.ckpt.tsv");
        let template = PromptTemplate::default();

        let flaky = FailAfter {
            calls: AtomicUsize::new(0),
            budget: 2,
        };
        let err = label_utilities(
            &synth.collection,
            &flaky,
            UtilityMetric::TokenF1,
            &template,
            Some(&ckpt),
        )
        .unwrap_err();
        match err {
            Error::LabelingAborted { query_id, .. } => {
                assert_eq!(query_id, synth.collection.queries[2].query_id)
            }
            other => panic!("unexpected {other:?}"),
        }

        let healthy = FailAfter {
            calls: AtomicUsize::new(0),
            budget: usize::MAX,
        };
        let resumed = label_utilities(
            &synth.collection,
            &healthy,
            UtilityMetric::TokenF1,
            &template,
            Some(&ckpt),
        )
        .unwrap();
        assert_eq!(healthy.calls.load(Ordering::SeqCst), 2);
        let fresh = label_utilities(
            &synth.collection,
            &SyntheticGenerator,
            UtilityMetric::TokenF1,
            &template,
            None,
        )
        .unwrap();
        assert_eq!(resumed, fresh);
    }
}
