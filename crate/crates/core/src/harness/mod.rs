//! Experiment orchestration: alpha sweeps, baselines, tradeoff analysis and
//! report files.

pub mod analysis;
pub mod config;
pub mod record;
pub mod report;
pub mod run;

use std::path::Path;
use std::sync::Arc;

use log::info;

pub use analysis::{curve_auc, fit_tradeoff_line, interval_table, IntervalTable, TradeoffSummary};
pub use config::{ExperimentConfig, FileConfig, GeneratorSpec, RetrieverSpec};
pub use record::{read_records, write_records, RunRecord};
pub use report::{emit_analysis, emit_reports, Summary};
pub use run::{
    baseline_run, run_experiment, Experiment, ExperimentOutput, QueryFailure, ScoreSource,
};

use crate::collection::{load_collection, TestCollection, UtilityLabelSet};
use crate::error::{Error, Result};
use crate::generation::{
    label_utilities, CachedGenerator, ExternalGenerator, Generator, SyntheticGenerator,
};
use crate::retrievers::load_scores;

pub const LABELS_FILE: &str = "labels.tsv";
pub const LABELS_CHECKPOINT_FILE: &str = "labels.checkpoint.tsv";

pub fn make_generator(config: &ExperimentConfig) -> Result<Arc<dyn Generator>> {
    let inner: Arc<dyn Generator> = match &config.generator {
        GeneratorSpec::Synthetic => Arc::new(SyntheticGenerator),
        GeneratorSpec::Command(cmd) => {
            let g = ExternalGenerator::new(cmd.clone(), config.timeout);
            g.warm_up()?;
            Arc::new(g)
        }
    };
    Ok(Arc::new(CachedGenerator::new(inner)))
}

/// Labels the collection, resuming from and finally removing a checkpoint
/// in `out_dir`; the finished label set is written to `labels.tsv` there.
pub fn label_into(
    collection: &TestCollection,
    generator: &dyn Generator,
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<UtilityLabelSet> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint = out_dir.join(LABELS_CHECKPOINT_FILE);
    let labels = label_utilities(
        collection,
        generator,
        config.metric,
        &config.template,
        Some(&checkpoint),
    )?;
    labels.write_tsv(&out_dir.join(LABELS_FILE))?;
    std::fs::remove_file(&checkpoint).map_err(|e| Error::io(&checkpoint, e))?;
    Ok(labels)
}

/// Inputs of an experiment, loaded from disk.
pub struct Prepared {
    pub collection: TestCollection,
    pub labels: UtilityLabelSet,
    pub scores: ScoreSource,
    pub generator: Arc<dyn Generator>,
}

impl Prepared {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let collection = load_collection(&config.collection)?;
        let generator = make_generator(config)?;
        let labels = match (&config.labels, collection.inline_labels()) {
            (Some(path), _) => UtilityLabelSet::load_tsv(path)?,
            (None, Some(inline)) => inline,
            (None, None) => {
                info!("no labels supplied; labeling with {}", generator.identity());
                label_into(&collection, generator.as_ref(), config, &config.out)?
            }
        };
        let scores = match &config.retriever {
            RetrieverSpec::Bm25(params) => ScoreSource::Bm25(*params),
            RetrieverSpec::Oracle => ScoreSource::Oracle,
            RetrieverSpec::Scores(name) => match &config.scores_file {
                Some(path) => ScoreSource::Precomputed {
                    name: name.clone(),
                    vectors: load_scores(path, &collection)?,
                },
                None => ScoreSource::Inline(name.clone()),
            },
        };
        Ok(Self {
            collection,
            labels,
            scores,
            generator,
        })
    }

    pub fn experiment<'a>(&'a self, config: &ExperimentConfig) -> Experiment<'a> {
        Experiment {
            collection: &self.collection,
            labels: &self.labels,
            scores: self.scores.clone(),
            generator: self.generator.as_ref(),
            metric: config.metric,
            template: config.template.clone(),
            alphas: config.alphas.clone(),
            samples: config.samples,
            topk: config.topk,
            seed: config.seed,
            sweep: !config.baseline_only,
            keep_samples: config.dump_samples,
            config_hash: config.hash(),
        }
    }
}

/// Loads inputs, evaluates, and writes every report into `config.out`.
pub fn execute(config: &ExperimentConfig) -> Result<(ExperimentOutput, Summary)> {
    let prepared = Prepared::load(config)?;
    let experiment = prepared.experiment(config);
    let evaluate = || {
        if config.baseline_only {
            baseline_run(&experiment)
        } else {
            run_experiment(&experiment)
        }
    };
    let output = match config.workers {
        Some(workers) => rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(evaluate),
        None => evaluate(),
    };
    let summary = if config.baseline_only {
        // Leave any sweep results in the directory untouched.
        std::fs::create_dir_all(&config.out).map_err(|e| Error::io(&config.out, e))?;
        write_records(&config.out.join(report::BASELINE_FILE), &output.baseline)?;
        write_records(&config.out.join(report::ORACLE_FILE), &output.oracle)?;
        report::write_failures(&config.out.join(report::FAILURES_FILE), &output.failures)?;
        report::summarize(&[], &output.baseline, None)?
    } else {
        emit_reports(&config.out, &output)?
    };
    Ok((output, summary))
}
