use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::commands::{self, Diagnosis};
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cryda", version, about = "Domain shift diagnostics and adaptation for cry audio")]
pub struct Cli {
    /// Experiment config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Print the resolved config and exit.
    #[arg(long)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the two-hospital corpus.
    Synth {
        /// Output directory (default: <work_dir>/corpus).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides corpus.seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one method with one seed.
    Train {
        /// baseline, bn, em, hafn, safn, symnet or tni
        #[arg(long)]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run directory for model.ckpt, history.jsonl and metrics.json.
        #[arg(long)]
        out: PathBuf,
        /// Corpus directory (default: <work_dir>/corpus).
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Start from this checkpoint; required for bn.
        #[arg(long)]
        from_checkpoint: Option<PathBuf>,
    },
    /// Run a TNI parameter sweep over all configured seeds.
    Sweep {
        #[arg(long, default_value = "tni")]
        method: String,
        /// alpha or noise-fraction
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 0,0.25,0.5,1
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Shift diagnostics: domain-id, pitch-dist or xgen.
    Diagnose {
        /// domain-id, pitch-dist or xgen
        #[arg(long)]
        task: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Aggregate metrics.json files into a results table.
    Report {
        /// Directory searched recursively for metrics.json files.
        #[arg(long)]
        runs: PathBuf,
        /// Output directory (default: the runs directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn corpus_dir(cfg: &ExperimentConfig, arg: Option<PathBuf>) -> PathBuf {
    arg.unwrap_or_else(|| cfg.corpus_dir())
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = ExperimentConfig::load(cli.config.as_deref())?;
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::Usage("no command given; see `cryda --help`".into()));
    };
    match command {
        Command::Synth { out, seed } => {
            let out = out.unwrap_or_else(|| cfg.corpus_dir());
            let corpus = commands::cmd_synth(&cfg, &out, seed)?;
            eprintln!("wrote {} clips and {} noise recordings to {}", corpus.clips.len(), corpus.noise.len(), show(&out));
        }
        Command::Train { method, seed, out, corpus, from_checkpoint } => {
            let method = commands::parse_method(&method)?;
            let corpus = corpus_dir(&cfg, corpus);
            let r = commands::cmd_train(&cfg, &corpus, method, seed, &out, from_checkpoint.as_deref())?;
            let m = &r.metrics;
            println!(
                "{method} seed {seed}: source AUC {:?}, target AUC {:?}, best epoch {:?}",
                m.source_test_auc, m.target_test_auc, m.best_epoch
            );
        }
        Command::Sweep { method, param, values, out, corpus } => {
            let method = commands::parse_method(&method)?;
            let param: commands::SweepParam = param.parse()?;
            let corpus = corpus_dir(&cfg, corpus);
            for p in commands::cmd_sweep(&cfg, &corpus, method, param, &values, &out)? {
                println!("{}={}: target AUC {:.4} ± {:.4}", param.name(), p.value, p.mean_auc_target, p.stderr);
            }
        }
        Command::Diagnose { task, seed, out, corpus } => {
            let task: commands::DiagnoseTask = task.parse()?;
            let corpus = corpus_dir(&cfg, corpus);
            match commands::cmd_diagnose(&cfg, &corpus, task, seed, &out)? {
                Diagnosis::DomainId(r) => println!("domain-id accuracy {:.4} on {} clips", r.accuracy, r.n_test),
                Diagnosis::Pitch(r) => match r.wasserstein1_hz {
                    Some(w) => println!("pitch W1 distance {w:.2} Hz"),
                    None => println!("pitch W1 distance undefined (no voiced frames)"),
                },
                Diagnosis::Xgen(r) => println!(
                    "source->source {:.4}, source->target {:.4}, target->target {:.4}",
                    r.source_to_source, r.source_to_target, r.target_to_target
                ),
            }
        }
        Command::Report { runs, out } => {
            let out = out.unwrap_or_else(|| runs.clone());
            let report = commands::cmd_report(&runs, &out)?;
            print!("{}", report.to_markdown());
        }
    }
    Ok(())
}
