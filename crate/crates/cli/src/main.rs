use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use wfa_extract::corpus::read_corpus;
use wfa_extract::{seed, FillStrategy};
use wfa_extract_cli::artifact::Outputs;
use wfa_extract_cli::config::PipelineConfig;
use wfa_extract_cli::pipeline::{augment_config, extract_params, run_pipeline, teacher_source, Layout};
use wfa_extract_cli::stages;

/// Extract weighted finite automata from the output traces of a
/// probabilistic sequence classifier.
#[derive(Debug, Parser)]
#[command(name = "wfa-extract", version)]
struct Cli {
    /// Master seed; each stage derives its own seed from it and the stage name.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// TOML file with a `[pipeline]` section; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeat for more).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Grow a corpus with synonym replacement and `<unk>` dropout.
    Augment(AugmentArgs),
    /// Record a teacher's per-prefix outputs on a corpus as JSONL traces.
    Teach(TeachArgs),
    /// Cluster trace outputs and build a model.
    Extract(ExtractArgs),
    /// Consistency rate of a model against the teacher labels in traces.
    Eval(EvalArgs),
    /// Print cluster and sparsity statistics of a model.
    Inspect(InspectArgs),
    /// Consistency rate of every fill strategy, with and without context, on one clustering.
    Compare(CompareArgs),
    /// Run augment, teach, extract, eval and inspect in order.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct AugmentArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Generated copies per sentence.
    #[arg(long)]
    epochs: Option<usize>,
    /// Synonym candidates per word.
    #[arg(long)]
    synonyms: Option<usize>,
    /// Probability of dropping an unreplaced word to `<unk>`.
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TeachArgs {
    /// `random` or a teacher JSON file.
    #[arg(long)]
    teacher: Option<String>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Hidden states of a random teacher.
    #[arg(long)]
    hidden_states: Option<usize>,
    /// Labels of a random teacher (default: as many as the corpus uses).
    #[arg(long)]
    labels: Option<usize>,
    /// Where to write a randomly sampled teacher.
    #[arg(long)]
    save_teacher: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Number of clusters (default 40 for multi-class traces, 20 for binary).
    #[arg(long)]
    clusters: Option<usize>,
    /// Static probability (default 0.4 for multi-class traces, 0.2 for binary).
    #[arg(long)]
    alpha: Option<f64>,
    /// Reference rate for empirical filling (default 0.3).
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    #[arg(long)]
    traces: Option<PathBuf>,
    #[command(flatten)]
    build: BuildArgs,
    /// empirical, uniform or null.
    #[arg(long)]
    fill: Option<FillStrategy>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct InspectArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    /// Print JSON instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Training traces.
    #[arg(long)]
    traces: Option<PathBuf>,
    /// Traces whose teacher labels are the reference.
    #[arg(long)]
    test_traces: Option<PathBuf>,
    #[command(flatten)]
    build: BuildArgs,
    /// Write the table as JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    overrides: PipelineConfig,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let globals = PipelineConfig {
        seed: cli.seed,
        threads: cli.threads,
        ..Default::default()
    };
    let base = file.overlay(globals);
    if let Some(n) = base.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }

    match cli.command {
        Command::Augment(a) => {
            let cfg = base.overlay(PipelineConfig {
                corpus: a.corpus,
                embeddings: a.embeddings,
                epochs: a.epochs,
                synonym_k: a.synonyms,
                dropout_prob: a.dropout,
                ..Default::default()
            });
            cfg.validate()?;
            let corpus = required(&cfg.corpus, "--corpus")?;
            let embeddings = required(&cfg.embeddings, "--embeddings")?;
            let out = a.out.unwrap_or_else(|| Layout::new(&cfg).augmented);
            let summary = guarded(|outs| stages::augment(corpus, embeddings, &augment_config(&cfg), &out, outs))?;
            println!(
                "{} sentences -> {} in {} (embedding coverage {:.1}%)",
                summary.original,
                summary.augmented,
                out.display(),
                100.0 * summary.embedding_coverage
            );
        }
        Command::Teach(a) => {
            let cfg = base.overlay(PipelineConfig {
                corpus: a.corpus,
                teacher: a.teacher,
                hidden_states: a.hidden_states,
                labels: a.labels,
                ..Default::default()
            });
            cfg.validate()?;
            let corpus = required(&cfg.corpus, "--corpus")?;
            let out = a.out.unwrap_or_else(|| Layout::new(&cfg).traces);
            let source = teacher_source(&cfg);
            let summary = guarded(|outs| {
                let sentences = read_corpus(corpus).with_context(|| format!("reading corpus {}", corpus.display()))?;
                let teacher = source.obtain(&sentences, seed::derive(cfg.seed(), "teacher"))?;
                if let Some(path) = &a.save_teacher {
                    outs.write_with(path, |w| Ok(serde_json::to_writer(w, &teacher)?))?;
                }
                stages::trace_sentences(&teacher, &sentences, &out, outs)
            })?;
            println!(
                "{} traces ({} outputs, {} labels) -> {}",
                summary.sentences,
                summary.outputs,
                summary.labels,
                out.display()
            );
        }
        Command::Extract(a) => {
            let cfg = base.overlay(PipelineConfig {
                traces: a.traces,
                fill_strategy: a.fill,
                ..a.build.into_config()
            });
            cfg.validate()?;
            let layout = Layout::new(&cfg);
            let out = a.out.unwrap_or(layout.model);
            let summary = guarded(|outs| stages::extract(&layout.traces, &extract_params(&cfg), &out, outs))?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval(a) => {
            let cfg = base.overlay(PipelineConfig {
                model: a.model,
                test_traces: a.traces,
                ..Default::default()
            });
            let layout = Layout::new(&cfg);
            let report = guarded(|outs| stages::eval(&layout.model, &layout.test_traces, a.report.as_deref(), outs))?;
            println!(
                "consistency rate {:.4} ({} of {} sentences), oov rate {:.4}, {} degenerate",
                report.consistency_rate, report.n_agree, report.n_total, report.oov_rate, report.n_degenerate
            );
        }
        Command::Inspect(a) => {
            let cfg = base.overlay(PipelineConfig {
                model: a.model,
                ..Default::default()
            });
            let report = stages::inspect(&stages::load_model(&Layout::new(&cfg).model)?);
            if a.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Command::Compare(a) => {
            let cfg = base.overlay(PipelineConfig {
                traces: a.traces,
                test_traces: a.test_traces,
                ..a.build.into_config()
            });
            cfg.validate()?;
            let layout = Layout::new(&cfg);
            let report = stages::compare(&layout.traces, &layout.test_traces, &extract_params(&cfg))?;
            if let Some(out) = &a.out {
                guarded(|outs| outs.write_json(out, &report))?;
            }
            print!("{report}");
        }
        Command::Pipeline(a) => {
            let cfg = base.overlay(a.overrides);
            let manifest = run_pipeline(&cfg)?;
            let layout = Layout::new(&cfg);
            for stage in &manifest.stages {
                for out in &stage.outputs {
                    println!("{:<8} {}  {}", stage.name, &out.sha256[..16], out.path.display());
                }
            }
            println!("manifest {}", layout.manifest.display());
        }
    }
    Ok(())
}

impl BuildArgs {
    fn into_config(self) -> PipelineConfig {
        PipelineConfig {
            k: self.clusters,
            alpha: self.alpha,
            beta: self.beta,
            ..Default::default()
        }
    }
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| anyhow!("{flag} is required (or set it in the config file)"))
}

/// Runs `f`; if it fails, anything it wrote is removed.
fn guarded<T>(f: impl FnOnce(&mut Outputs) -> Result<T>) -> Result<T> {
    let mut outs = Outputs::default();
    f(&mut outs).inspect_err(|_| outs.discard())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["wfa-extract", "extract", "--clusters", "5", "--seed", "3"]).unwrap();
        assert_eq!(cli.seed, Some(3));
        let Command::Extract(a) = cli.command else { panic!() };
        assert_eq!(a.build.clusters, Some(5));
    }

    #[test]
    fn fill_flag_rejects_unknown_strategy() {
        assert!(Cli::try_parse_from(["wfa-extract", "extract", "--fill", "nearest"]).is_err());
    }

    #[test]
    fn missing_required_input_is_reported() {
        let err = required(&None, "--corpus").unwrap_err();
        assert!(err.to_string().contains("--corpus"));
    }
}
