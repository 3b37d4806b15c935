use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fairrag::collection::{
    collection_stats, generate_synthetic, load_collection, SyntheticSpec, UtilityLabelSet,
};
use fairrag::harness::config::AlphaList;
use fairrag::harness::report::{BASELINE_FILE, RUNS_FILE};
use fairrag::harness::{self, emit_analysis, read_records, FileConfig};
use fairrag::{Error, Result};

#[derive(Parser)]
#[command(
    name = "fairrag",
    version,
    about = "Fairness and utility evaluation for stochastic retrieval-augmented generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive binary utility labels from single-item generation gains.
    Label(ExperimentArgs),
    /// Sweep sampling temperatures and write per-run metrics and reports.
    Run(ExperimentArgs),
    /// Evaluate the deterministic ranking only.
    Baseline(ExperimentArgs),
    /// Recompute summaries from runs.csv and baseline.csv in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic collection with planted labels and scores.
    Synth(SynthArgs),
    /// Print collection statistics.
    Stats {
        #[arg(long)]
        collection: PathBuf,
        /// Label TSV; defaults to labels stored in the collection.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// TOML file with the same keys as these flags; flags win.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    collection: Option<PathBuf>,
    /// bm25, scores:NAME or oracle
    #[arg(long)]
    retriever: Option<String>,
    /// Run file with `query_id<TAB>item_id<TAB>score` lines for scores:NAME.
    #[arg(long)]
    scores_file: Option<PathBuf>,
    /// Label TSV; without it, labels come from the collection or are computed.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// synthetic or cmd:"COMMAND"
    #[arg(long)]
    generator: Option<String>,
    /// exact_match, token_f1, rouge1_f or mae_inverted:BOUND
    #[arg(long)]
    metric: Option<String>,
    /// Comma-separated temperatures.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    topk: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Prompt template file with `{input}` and `{items}` placeholders.
    #[arg(long)]
    template: Option<PathBuf>,
    /// Separator placed between item texts in the prompt.
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Per-request generator timeout in seconds.
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    bm25_k1: Option<f64>,
    #[arg(long)]
    bm25_b: Option<f64>,
    /// Also write every sampled ranking to samples.jsonl.
    #[arg(long)]
    dump_samples: bool,
}

impl ExperimentArgs {
    fn resolve(self, baseline_only: bool) -> Result<harness::ExperimentConfig> {
        let file = match &self.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        let flags = FileConfig {
            collection: self.collection,
            retriever: self.retriever,
            scores_file: self.scores_file,
            labels: self.labels,
            generator: self.generator,
            metric: self.metric,
            template: self.template,
            delimiter: self.delimiter,
            alphas: self.alphas.map(AlphaList::Text),
            samples: self.samples,
            topk: self.topk,
            seed: self.seed,
            out: self.out,
            workers: self.workers,
            timeout_secs: self.timeout_secs,
            bm25_k1: self.bm25_k1,
            bm25_b: self.bm25_b,
            dump_samples: self.dump_samples.then_some(true),
        };
        let mut config = flags.or(file).into_experiment()?;
        config.baseline_only = baseline_only;
        Ok(config)
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Output collection file (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    #[arg(long, default_value_t = 20)]
    n_min: usize,
    #[arg(long, default_value_t = 30)]
    n_max: usize,
    #[arg(long, default_value_t = 0.3)]
    pct_useful: f64,
    #[arg(long, default_value_t = 0.0)]
    pct_distractor: f64,
    #[arg(long, default_value_t = 1.0)]
    score_gap: f64,
    #[arg(long, default_value_t = 0.0)]
    distractor_gap: f64,
    #[arg(long, default_value_t = 0.5)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Returns true when some queries failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Label(args) => {
            let config = args.resolve(false)?;
            let collection = load_collection(&config.collection)?;
            let generator = harness::make_generator(&config)?;
            let labels =
                harness::label_into(&collection, generator.as_ref(), &config, &config.out)?;
            println!(
                "labeled {} items over {} queries -> {}",
                labels.len(),
                collection.len(),
                config.out.join(harness::LABELS_FILE).display()
            );
            Ok(false)
        }
        Command::Run(args) => experiment(args, false),
        Command::Baseline(args) => experiment(args, true),
        Command::Report { out } => {
            let runs = read_records(&out.join(RUNS_FILE))?;
            let baseline_path = out.join(BASELINE_FILE);
            let baseline = if baseline_path.exists() {
                read_records(&baseline_path)?
            } else {
                Vec::new()
            };
            let summary = emit_analysis(&out, &runs, &baseline, None)?;
            print_summary(&summary);
            Ok(false)
        }
        Command::Synth(args) => {
            let synth = generate_synthetic(&SyntheticSpec {
                query_count: args.queries,
                n_min: args.n_min,
                n_max: args.n_max,
                pct_useful: args.pct_useful,
                pct_distractor: args.pct_distractor,
                score_gap: args.score_gap,
                distractor_gap: args.distractor_gap,
                noise: args.noise,
                seed: args.seed,
            })?;
            synth.collection.write_jsonl(&args.out)?;
            println!(
                "wrote {} queries -> {}",
                synth.collection.len(),
                args.out.display()
            );
            Ok(false)
        }
        Command::Stats { collection, labels } => stats(&collection, labels.as_deref()),
    }
}

fn experiment(args: ExperimentArgs, baseline_only: bool) -> Result<bool> {
    let config = args.resolve(baseline_only)?;
    let (output, summary) = harness::execute(&config)?;
    println!(
        "{} runs, {} baseline rows, {} skipped queries, {} failed queries -> {}",
        output.runs.len(),
        output.baseline.len(),
        output.skipped.len(),
        output.failures.len(),
        config.out.display()
    );
    print_summary(&summary);
    for f in &output.failures {
        eprintln!("failed {}: {}", f.query_id, f.error);
    }
    Ok(!output.failures.is_empty())
}

fn print_summary(summary: &harness::Summary) {
    for t in &summary.tradeoffs {
        println!(
            "{} vs {}: slope {:.4}, intercept {:.4}, auc {:.4} ({} points)",
            t.y_name, t.x_name, t.slope, t.intercept, t.auc, t.point_count
        );
    }
    if let Some(table) = &summary.intervals {
        println!(
            "baseline eu_norm {:.4} (raw {:.4})",
            table.baseline_eu, table.baseline_eu_raw
        );
        for row in &table.rows {
            let delta = row
                .mean_delta_eu
                .map_or("-".to_owned(), |d| format!("{d:+.4}"));
            println!(
                "  eed_norm [{:.1}, {:.1}): delta eu {delta} over {} runs",
                row.lower, row.upper, row.run_count
            );
        }
    }
}

fn stats(collection: &Path, labels: Option<&Path>) -> Result<bool> {
    let collection = load_collection(collection)?;
    let labels = match labels {
        Some(path) => UtilityLabelSet::load_tsv(path)?,
        None => collection.inline_labels().ok_or_else(|| {
            Error::Config("collection has no inline labels; pass --labels".into())
        })?,
    };
    let s = collection_stats(&collection, &labels)?;
    println!("queries\t{}", s.query_count);
    println!("avg_docs\t{:.2} ± {:.2}", s.avg_docs, s.std_docs);
    println!(
        "avg_pos_labels\t{:.2} ± {:.2}",
        s.avg_pos_labels, s.std_pos_labels
    );
    println!("avg_pct_pos\t{:.2}", s.avg_pct_pos);
    Ok(false)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
