use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use inputrisk::io::{self, ModelArtifact};
use inputrisk::num::fmt_num;
use inputrisk::pipeline::{
    self, ablation_grid, cli_run, evaluate_set, join_labels, write_report, write_synthetic, ExperimentConfig,
    FeatureSet, ReportFile,
};
use inputrisk::remote::{RemoteConfig, TopKMode};
use inputrisk_core::corpus::UnparseablePolicy;
use inputrisk_core::learn::{evaluate, train, ModelKind, ProtocolConfig, TrainConfig};
use inputrisk_core::measures::{CwsConfig, Measure};
use inputrisk_core::synth::SyntheticSpec;
use inputrisk_core::trace::validate_trace;

#[derive(Parser)]
#[command(name = "inputrisk", version, about = "Anticipate LM errors from input-side likelihood traces")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a dataset and/or a trace file against their invariants.
    Validate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        traces: Option<PathBuf>,
    },
    /// Score prompts with a character bigram model.
    TraceToy {
        #[arg(long)]
        dataset: PathBuf,
        /// Trained model JSON.
        #[arg(long, conflicts_with = "corpus", required_unless_present = "corpus")]
        model: Option<PathBuf>,
        /// Plain-text corpus, one sequence per line, to train a model from.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// Also write the trained model here.
        #[arg(long)]
        save_model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score prompts with an OpenAI-compatible completions endpoint.
    TraceRemote {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, env = "INPUTRISK_ENDPOINT")]
        endpoint: String,
        #[arg(long = "model")]
        model_name: String,
        /// Alternatives per position; 0 requests observed-token logprobs only.
        #[arg(long, default_value_t = 0)]
        top_k: u32,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long, default_value_t = 5)]
        max_retries: u32,
        #[arg(long, default_value_t = 120)]
        timeout_secs: u64,
        /// Append request/response pairs to this JSONL file.
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Parse raw model outputs into error labels.
    Label {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        /// Drop unparseable outputs instead of counting them as errors.
        #[arg(long)]
        drop_unparseable: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a feature CSV (and manifest sidecar) from traces.
    Featurize {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        traces: PathBuf,
        /// full, sentence or baseline:{logprob,maxprob,odd,combined}
        #[arg(long, default_value = "full")]
        set: FeatureSet,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a classifier on every labeled row and save the model artifact.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the split/train/test protocol over seeds, or score with a saved model.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Score with this artifact instead of running the protocol.
        #[arg(long)]
        artifact: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// Directory for report.{json,txt,csv}.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Leave-one-measure-out grid with deltas against the full table.
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, value_delimiter = ',', default_value = "spr,h,cws,cis")]
        measures: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic suite with planted in-span spikes.
    Synth {
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, default_value_t = 5.0)]
        magnitude: f64,
        #[arg(long, default_value_t = 3)]
        span_len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge report JSON files into comparison and ablation tables.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a whole experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    features: PathBuf,
    /// Labels CSV from `label` or `synth`.
    #[arg(long)]
    labels: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value = "logreg", value_parser = parse_model)]
    classifier: ModelKind,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    ModelKind::parse(s).ok_or_else(|| format!("unknown classifier `{s}` (logreg or mlp)"))
}

impl ModelArgs {
    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.classifier,
            threshold: self.tau,
            ..TrainConfig::default()
        }
    }

    fn protocol(&self, seeds: &[u64]) -> ProtocolConfig {
        ProtocolConfig {
            train: self.train_config(),
            seeds: seeds.to_vec(),
            ..ProtocolConfig::default()
        }
    }
}

fn load_xy(data: &DataArgs) -> anyhow::Result<(io::FeatureTable, Vec<bool>, FeatureSet)> {
    let table = io::read_features(&data.features)?;
    let labels = io::read_labels(&data.labels)?;
    let set = infer_set(&table)?;
    let (table, y) = join_labels(&table, &labels)?;
    Ok((table, y, set))
}

/// The feature set whose manifest the table carries.
fn infer_set(table: &io::FeatureTable) -> anyhow::Result<FeatureSet> {
    FeatureSet::ALL
        .into_iter()
        .find(|s| s.manifest() == table.manifest)
        .context("feature columns do not match any known feature set")
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn run(cmd: Cmd) -> anyhow::Result<()> {
    match cmd {
        Cmd::Validate { dataset, traces } => {
            if dataset.is_none() && traces.is_none() {
                bail!("nothing to validate: pass --dataset and/or --traces");
            }
            if let Some(d) = dataset {
                let n = io::load_dataset(&d)?.len();
                println!("{}: {n} records ok", d.display());
            }
            if let Some(t) = traces {
                let traces = io::read_traces(&t)?;
                let mut bad = 0;
                for tr in &traces {
                    if let Err(v) = validate_trace(tr) {
                        bad += 1;
                        for x in v {
                            println!("{}: {x}", tr.example_id);
                        }
                    }
                }
                println!("{}: {} traces, {bad} with violations", t.display(), traces.len());
                if bad > 0 {
                    bail!("{bad} trace(s) violate invariants");
                }
            }
        }
        Cmd::TraceToy {
            dataset,
            model,
            corpus,
            alpha,
            save_model,
            out,
        } => {
            let records = io::load_dataset(&dataset)?;
            let m = pipeline::toy_model(model.as_deref(), corpus.as_deref(), alpha, &records)?;
            if let Some(p) = save_model {
                io::write_toy_model(&p, &m)?;
                println!("wrote {}", p.display());
            }
            let traces = pipeline::toy_traces(&m, &records)?;
            io::write_traces(&out, &traces)?;
            println!("wrote {} traces to {}", traces.len(), out.display());
        }
        Cmd::TraceRemote {
            dataset,
            endpoint,
            model_name,
            top_k,
            concurrency,
            max_retries,
            timeout_secs,
            log,
            out,
        } => {
            let records = io::load_dataset(&dataset)?;
            let mut cfg = RemoteConfig::new(endpoint, model_name);
            cfg.top_k = if top_k == 0 { TopKMode::ObservedOnly } else { TopKMode::TopK(top_k) };
            cfg.concurrency = concurrency;
            cfg.max_retries = max_retries;
            cfg.timeout = Duration::from_secs(timeout_secs);
            cfg.log_path = log;
            let traces = pipeline::remote_traces(&cfg, &records)?;
            io::write_traces(&out, &traces)?;
            println!("wrote {} of {} traces to {}", traces.len(), records.len(), out.display());
        }
        Cmd::Label {
            dataset,
            predictions,
            drop_unparseable,
            out,
        } => {
            let records = io::load_dataset(&dataset)?;
            let preds = io::read_predictions(&predictions)?;
            let policy = if drop_unparseable {
                UnparseablePolicy::Drop
            } else {
                UnparseablePolicy::CountAsError
            };
            let labeling = pipeline::label_predictions(&records, &preds, policy)?;
            io::write_labels(&out, &labeling.labels)?;
            let errors = labeling.labels.iter().filter(|l| l.error).count();
            println!(
                "{} labels, {errors} errors, task accuracy {}",
                labeling.labels.len(),
                fmt_num(labeling.accuracy)
            );
        }
        Cmd::Featurize {
            dataset,
            traces,
            set,
            gamma,
            out,
        } => {
            let records = io::load_dataset(&dataset)?;
            let traces = io::load_traces(&traces)?;
            let table = pipeline::featurize(&records, &traces, set, CwsConfig::new(gamma))?;
            io::write_features(&out, &table)?;
            println!(
                "wrote {} rows x {} columns to {}",
                table.x.rows(),
                table.x.cols(),
                out.display()
            );
        }
        Cmd::Train { data, model, seed, out } => {
            let (table, y, _) = load_xy(&data)?;
            let trained = train(&table.x, &y, &model.train_config(), seed)?;
            io::write_model(&out, &ModelArtifact::new(table.columns(), trained))?;
            println!("wrote {}", out.display());
        }
        Cmd::Eval {
            data,
            model,
            artifact,
            seeds,
            out,
        } => {
            let (table, y, set) = load_xy(&data)?;
            if let Some(a) = artifact {
                let art = io::read_model(&a)?;
                let (_, decisions) = art.score(&table)?;
                let m = evaluate(&decisions, &y)?;
                println!(
                    "n {}  accuracy {}  error P {} R {} F1 {}",
                    m.n,
                    fmt_num(m.accuracy),
                    fmt_num(m.error.precision),
                    fmt_num(m.error.recall),
                    fmt_num(m.error.f1)
                );
                return Ok(());
            }
            let entry = evaluate_set(&table, &y, set, None, &model.protocol(&seeds))?;
            let report = ReportFile {
                name: String::new(),
                entries: vec![entry],
            };
            print!("{}", pipeline::emit_report(&report.entries).comparison.to_text());
            if let Some(dir) = out {
                print_written(&write_report(&dir, "report", &report)?);
            }
        }
        Cmd::Ablate {
            data,
            model,
            seeds,
            measures,
            out,
        } => {
            let (table, y, set) = load_xy(&data)?;
            let measures = measures
                .iter()
                .map(|m| Measure::parse(m).with_context(|| format!("unknown measure `{m}`")))
                .collect::<anyhow::Result<Vec<_>>>()?;
            let protocol = model.protocol(&seeds);
            let mut entries = vec![evaluate_set(&table, &y, set, None, &protocol)?];
            entries.extend(ablation_grid(&table, &y, set, &measures, &protocol)?);
            let report = ReportFile {
                name: "ablation".into(),
                entries,
            };
            let tables = pipeline::emit_report(&report.entries);
            if let Some(a) = &tables.ablation {
                print!("{}", a.to_text());
            }
            print_written(&write_report(&out, "ablation", &report)?);
        }
        Cmd::Synth {
            n,
            rho,
            magnitude,
            span_len,
            seed,
            out,
        } => {
            let spec = SyntheticSpec {
                n,
                rho,
                magnitude,
                span_len,
                ..SyntheticSpec::default()
            };
            print_written(&write_synthetic(&out, &spec, seed)?);
        }
        Cmd::Report { reports, out } => {
            let mut merged = ReportFile {
                name: String::new(),
                entries: Vec::new(),
            };
            for r in &reports {
                merged.entries.extend(pipeline::read_report(r)?.entries);
            }
            let tables = pipeline::emit_report(&merged.entries);
            print!("{}", tables.comparison.to_text());
            print_written(&write_report(&out, "report", &merged)?);
        }
        Cmd::Run { config } => {
            let (cfg, base) = ExperimentConfig::load(&config).map_err(|e| pipeline::StageError {
                stage: pipeline::Stage::Config,
                source: e,
            })?;
            let summary = cli_run(&cfg, &base)?;
            print!("{}", pipeline::emit_report(&summary.report.entries).comparison.to_text());
            print_written(&summary.written);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let name = stage_name(&cli.cmd);
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // `run` errors already carry their pipeline stage
            if e.downcast_ref::<pipeline::StageError>().is_some() {
                eprintln!("error: {e:#}");
            } else {
                eprintln!("error in `{name}`: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn stage_name(cmd: &Cmd) -> &'static str {
    match cmd {
        Cmd::Validate { .. } => "validate",
        Cmd::TraceToy { .. } => "trace-toy",
        Cmd::TraceRemote { .. } => "trace-remote",
        Cmd::Label { .. } => "label",
        Cmd::Featurize { .. } => "featurize",
        Cmd::Train { .. } => "train",
        Cmd::Eval { .. } => "eval",
        Cmd::Ablate { .. } => "ablate",
        Cmd::Synth { .. } => "synth",
        Cmd::Report { .. } => "report",
        Cmd::Run { .. } => "run",
    }
}
