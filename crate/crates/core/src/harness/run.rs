use std::collections::BTreeMap;

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use crate::collection::{Query, TestCollection, UtilityLabelSet};
use crate::error::{Error, Result};
use crate::exposure::{ee_metrics, exposure_counts, EeMetrics};
use crate::generation::{
    build_prompt, empirical_max_utility, expected_utility, normalize_eu, string_utility, Generator,
    PromptTemplate, UtilityMetric,
};
use crate::harness::record::RunRecord;
use crate::retrievers::{
    bm25_score, deterministic_rank, minmax_normalize, oracle_permutation, Bm25Params, RankedList,
    ScoreVector,
};
use crate::rng::{stream_rng, ORACLE_DOMAIN};
use crate::sampler::{sample_set, SamplingConfig};

/// Where a query's retrieval scores come from.
#[derive(Debug, Clone)]
pub enum ScoreSource {
    Bm25(Bm25Params),
    /// Scores stored inline in the collection under this name.
    Inline(String),
    /// Scores loaded from a run file, keyed by query id.
    Precomputed {
        name: String,
        vectors: BTreeMap<String, ScoreVector>,
    },
    /// The stochastic oracle: useful items first, each group shuffled.
    Oracle,
}

impl ScoreSource {
    pub fn name(&self) -> String {
        match self {
            Self::Bm25(_) => "bm25".into(),
            Self::Inline(name) | Self::Precomputed { name, .. } => format!("scores:{name}"),
            Self::Oracle => "oracle".into(),
        }
    }

    fn scores(&self, query: &Query, useful: &[bool]) -> Result<ScoreVector> {
        match self {
            Self::Bm25(params) => bm25_score(query, *params),
            Self::Inline(name) => ScoreVector::from_inline(query, name),
            Self::Precomputed { vectors, .. } => vectors
                .get(&query.query_id)
                .cloned()
                .ok_or_else(|| Error::UnknownQuery(query.query_id.clone())),
            Self::Oracle => Ok(ScoreVector {
                query_id: query.query_id.clone(),
                item_ids: query.corpus.iter().map(|i| i.item_id.clone()).collect(),
                scores: useful.iter().map(|&u| f64::from(u8::from(u))).collect(),
            }),
        }
    }
}

/// Everything needed to evaluate a collection, already loaded.
pub struct Experiment<'a> {
    pub collection: &'a TestCollection,
    pub labels: &'a UtilityLabelSet,
    pub scores: ScoreSource,
    pub generator: &'a dyn Generator,
    pub metric: UtilityMetric,
    pub template: PromptTemplate,
    pub alphas: Vec<f64>,
    pub samples: usize,
    pub topk: usize,
    pub seed: u64,
    /// Run the alpha sweep; when false only the baseline and oracle runs are
    /// evaluated.
    pub sweep: bool,
    pub keep_samples: bool,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryFailure {
    pub query_id: String,
    pub error: String,
}

/// Sampled rankings of one (query, alpha) run, as item ids.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleDump {
    pub query_id: String,
    pub alpha: f64,
    pub rankings: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    /// One record per retained (query, alpha), in collection then alpha order.
    pub runs: Vec<RunRecord>,
    pub baseline: Vec<RunRecord>,
    pub oracle: Vec<RunRecord>,
    pub failures: Vec<QueryFailure>,
    /// Queries dropped for having fewer than two useful items.
    pub skipped: Vec<String>,
    pub samples: Vec<SampleDump>,
    /// Runs the sweep should have produced for non-skipped queries.
    pub expected_runs: usize,
}

struct Evaluated {
    metrics: EeMetrics,
    utilities: Vec<f64>,
}

struct QueryRecords {
    runs: Vec<RunRecord>,
    baseline: RunRecord,
    oracle: RunRecord,
    dumps: Vec<SampleDump>,
}

struct QueryOutcome {
    sweep: Vec<(f64, Evaluated)>,
    oracle: Evaluated,
    baseline: Evaluated,
    dumps: Vec<SampleDump>,
}

impl Experiment<'_> {
    fn utilities(&self, query: &Query, rankings: &[RankedList]) -> Result<Vec<f64>> {
        let prompts = rankings
            .iter()
            .map(|r| build_prompt(query, r, &self.template))
            .collect::<Result<Vec<_>>>()?;
        let outputs = self.generator.generate_batch(&prompts)?;
        outputs
            .iter()
            .map(|o| string_utility(self.metric, &query.target_output, o))
            .collect()
    }

    fn evaluate(
        &self,
        query: &Query,
        useful: &[bool],
        rankings: &[RankedList],
    ) -> Result<Evaluated> {
        let exposure = exposure_counts(rankings, query.n()).to_exposure(&query.query_id);
        Ok(Evaluated {
            metrics: ee_metrics(&exposure, useful, self.topk)?,
            utilities: self.utilities(query, rankings)?,
        })
    }

    fn oracle_rankings(&self, query: &Query, useful: &[bool]) -> Vec<RankedList> {
        (0..self.samples as u64)
            .map(|i| {
                let mut rng = stream_rng(self.seed, ORACLE_DOMAIN, &query.query_id, i);
                oracle_permutation(&query.query_id, useful, self.topk, &mut rng)
            })
            .collect()
    }

    fn run_query(&self, query: &Query, useful: &[bool]) -> Result<QueryOutcome> {
        let scores = self.scores.scores(query, useful)?;
        let normalized = minmax_normalize(&scores);
        let oracle_rankings = self.oracle_rankings(query, useful);

        let mut sweep = Vec::new();
        let mut dumps = Vec::new();
        if self.sweep {
            for &alpha in &self.alphas {
                let rankings = if matches!(self.scores, ScoreSource::Oracle) {
                    oracle_rankings.clone()
                } else {
                    let config = SamplingConfig {
                        alpha,
                        sample_count: self.samples,
                        truncation_k: self.topk,
                        seed: self.seed,
                    };
                    sample_set(&normalized, &config)?.rankings
                };
                sweep.push((alpha, self.evaluate(query, useful, &rankings)?));
                if self.keep_samples {
                    dumps.push(SampleDump {
                        query_id: query.query_id.clone(),
                        alpha,
                        rankings: rankings
                            .iter()
                            .map(|r| {
                                r.item_ids(&scores.item_ids)
                                    .into_iter()
                                    .map(str::to_owned)
                                    .collect()
                            })
                            .collect(),
                    });
                }
            }
        }
        let oracle = self.evaluate(query, useful, &oracle_rankings)?;
        let baseline = self.evaluate(query, useful, &[deterministic_rank(&scores, self.topk)])?;
        Ok(QueryOutcome {
            sweep,
            oracle,
            baseline,
            dumps,
        })
    }

    fn record(
        &self,
        query: &Query,
        alpha: Option<f64>,
        retriever: &str,
        run: &Evaluated,
        u_max: f64,
    ) -> Result<RunRecord> {
        let eu_raw = expected_utility(&run.utilities)?;
        let (eu_norm, eu_flagged) = normalize_eu(eu_raw, u_max);
        Ok(RunRecord {
            query_id: query.query_id.clone(),
            alpha,
            seed: self.seed,
            n: run.metrics.n,
            m: run.metrics.m,
            k: run.metrics.k,
            eed_raw: run.metrics.eed_raw,
            eer_raw: run.metrics.eer_raw,
            eed_norm: run.metrics.eed_norm,
            eer_norm: run.metrics.eer_norm,
            eu_raw,
            eu_norm,
            u_max,
            eu_flagged,
            retriever: retriever.to_owned(),
            generator: self.generator.identity().to_owned(),
            config_hash: self.config_hash.clone(),
        })
    }

    fn query_records(&self, query: &Query) -> Result<Option<QueryRecords>> {
        let useful = self.labels.labels_for(query)?;
        if useful.iter().filter(|&&u| u).count() < 2 {
            return Ok(None);
        }
        let outcome = self.run_query(query, &useful)?;
        let u_max = empirical_max_utility(
            outcome
                .sweep
                .iter()
                .map(|(_, run)| run.utilities.as_slice())
                .chain([
                    outcome.oracle.utilities.as_slice(),
                    outcome.baseline.utilities.as_slice(),
                ]),
        )?;
        let name = self.scores.name();
        let runs = outcome
            .sweep
            .iter()
            .map(|(alpha, run)| self.record(query, Some(*alpha), &name, run, u_max))
            .collect::<Result<Vec<_>>>()?;
        let baseline = self.record(query, None, &name, &outcome.baseline, u_max)?;
        let oracle = self.record(query, None, "oracle", &outcome.oracle, u_max)?;
        Ok(Some(QueryRecords {
            runs,
            baseline,
            oracle,
            dumps: outcome.dumps,
        }))
    }
}

/// Evaluates every query of the experiment, in parallel across queries.
///
/// A failing query is logged and listed in `failures`; the remaining
/// queries are unaffected. Output order follows the collection, so results
/// do not depend on the thread count.
pub fn run_experiment(experiment: &Experiment) -> ExperimentOutput {
    let results: Vec<_> = experiment
        .collection
        .queries
        .par_iter()
        .map(|query| (query, experiment.query_records(query)))
        .collect();

    let mut out = ExperimentOutput::default();
    let per_query = if experiment.sweep {
        experiment.alphas.len()
    } else {
        0
    };
    for (query, result) in results {
        match result {
            Ok(Some(records)) => {
                out.expected_runs += per_query;
                out.runs.extend(records.runs);
                out.baseline.push(records.baseline);
                out.oracle.push(records.oracle);
                out.samples.extend(records.dumps);
            }
            Ok(None) => out.skipped.push(query.query_id.clone()),
            Err(e) => {
                warn!("query {} failed: {e}", query.query_id);
                out.expected_runs += per_query;
                out.failures.push(QueryFailure {
                    query_id: query.query_id.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    info!(
        "{} runs, {} failed queries, {} skipped queries",
        out.runs.len(),
        out.failures.len(),
        out.skipped.len()
    );
    out
}

/// Deterministic-ranking baseline only (plus the oracle reference that
/// anchors utility normalization).
pub fn baseline_run(experiment: &Experiment) -> ExperimentOutput {
    let baseline_only = Experiment {
        collection: experiment.collection,
        labels: experiment.labels,
        scores: experiment.scores.clone(),
        generator: experiment.generator,
        metric: experiment.metric,
        template: experiment.template.clone(),
        alphas: experiment.alphas.clone(),
        samples: experiment.samples,
        topk: experiment.topk,
        seed: experiment.seed,
        sweep: false,
        keep_samples: false,
        config_hash: experiment.config_hash.clone(),
    };
    run_experiment(&baseline_only)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collection::{generate_synthetic, SyntheticSpec, PLANTED_RETRIEVER};
    use crate::generation::SyntheticGenerator;
    use crate::GenerationError;

    fn spec(query_count: usize) -> SyntheticSpec {
        SyntheticSpec {
            query_count,
            n_min: 8,
            n_max: 12,
            pct_useful: 0.3,
            pct_distractor: 0.2,
            score_gap: 1.0,
            distractor_gap: 1.5,
            noise: 0.5,
            seed: 11,
        }
    }

    fn experiment<'a>(
        synth: &'a crate::collection::SyntheticCollection,
        generator: &'a dyn Generator,
    ) -> Experiment<'a> {
        Experiment {
            collection: &synth.collection,
            labels: &synth.labels,
            scores: ScoreSource::Inline(PLANTED_RETRIEVER.into()),
            generator,
            metric: UtilityMetric::TokenF1,
            template: PromptTemplate::default(),
            alphas: vec![0.0, 1.0, 4.0],
            samples: 40,
            topk: 3,
            seed: 5,
            sweep: true,
            keep_samples: true,
            config_hash: "h".into(),
        }
    }

    #[test]
    fn records_cover_every_query_and_alpha() {
        let synth = generate_synthetic(&spec(6)).unwrap();
        let exp = experiment(&synth, &SyntheticGenerator);
        let out = run_experiment(&exp);
        let retained = synth.collection.len() - out.skipped.len();
        assert!(out.failures.is_empty());
        assert_eq!(out.runs.len(), retained * 3);
        assert_eq!(out.expected_runs, out.runs.len());
        assert_eq!(out.baseline.len(), retained);
        assert_eq!(out.samples.len(), out.runs.len());
        for b in &out.baseline {
            assert_eq!(b.eed_norm, 1.0);
            assert_eq!(b.alpha, None);
        }
        for r in out.runs.iter().chain(&out.baseline).chain(&out.oracle) {
            for v in [r.eed_norm, r.eer_norm, r.eu_norm] {
                assert!((0.0..=1.0).contains(&v), "{r:?}");
            }
        }
    }

    #[test]
    fn oracle_rows_reach_full_relevance() {
        let synth = generate_synthetic(&spec(4)).unwrap();
        let mut exp = experiment(&synth, &SyntheticGenerator);
        exp.scores = ScoreSource::Oracle;
        let out = run_experiment(&exp);
        for r in out.runs.iter().chain(&out.oracle) {
            assert!(r.eer_norm > 0.999, "{r:?}");
        }
        assert!(out.runs.iter().all(|r| r.retriever == "oracle"));
    }

    #[test]
    fn independent_of_thread_count() {
        let synth = generate_synthetic(&spec(8)).unwrap();
        let exp = experiment(&synth, &SyntheticGenerator);
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_experiment(&exp).runs)
        };
        assert_eq!(run_with(1), run_with(4));
    }

    struct FailOn(String);

    impl Generator for FailOn {
        fn identity(&self) -> &str {
            "fail-on"
        }
        fn generate_batch(&self, prompts: &[String]) -> Result<Vec<String>, GenerationError> {
            if prompts.iter().any(|p| p.contains(&self.0)) {
                return Err(GenerationError::ProcessExited { id: 1 });
            }
            SyntheticGenerator.generate_batch(prompts)
        }
    }

    #[test]
    fn failures_are_isolated_and_counted() {
        let synth = generate_synthetic(&spec(5)).unwrap();
        let victim = synth.collection.queries[1].input_text.clone();
        let generator = FailOn(victim);
        let exp = experiment(&synth, &generator);
        let out = run_experiment(&exp);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(
            out.failures[0].query_id,
            synth.collection.queries[1].query_id
        );
        assert_eq!(out.runs.len() + 3 * out.failures.len(), out.expected_runs);
    }

    #[test]
    fn large_alpha_converges_to_baseline() {
        let raw = ScoreVector {
            query_id: "toy".into(),
            item_ids: ["a", "b", "c", "d"].map(String::from).to_vec(),
            scores: vec![0.3, 2.0, 1.1, 0.9],
        };
        let normalized = minmax_normalize(&raw);
        let baseline = deterministic_rank(&raw, 4);
        let config = SamplingConfig {
            alpha: 64.0,
            sample_count: 1000,
            truncation_k: 4,
            seed: 1,
        };
        let set = sample_set(&normalized, &config).unwrap();
        let hits = set
            .rankings
            .iter()
            .filter(|r| r.items == baseline.items)
            .count();
        assert!(hits >= 990, "{hits}");
    }

    #[test]
    fn baseline_only_skips_sweep() {
        let synth = generate_synthetic(&spec(3)).unwrap();
        let exp = experiment(&synth, &SyntheticGenerator);
        let out = baseline_run(&exp);
        assert!(out.runs.is_empty());
        assert_eq!(out.expected_runs, 0);
        assert_eq!(
            out.baseline.len(),
            synth.collection.len() - out.skipped.len()
        );
    }
}
