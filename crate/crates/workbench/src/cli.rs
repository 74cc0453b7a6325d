// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use steerprobe::LayerRange;

use crate::config::{ExperimentConfig, JudgeKind};
use crate::error::{Result, WorkbenchError};
use crate::pipeline::Experiment;

#[derive(Debug, Parser)]
#[command(name = "steerprobe", version, about = "Layer-wise probing and probe-guided activation steering")]
pub struct Cli {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Target probability for steering edits.
    #[arg(long = "p-hat", global = true)]
    pub p_hat: Option<f64>,
    /// Steered layer range, LO:HI (1-based, inclusive).
    #[arg(long, global = true)]
    pub layers: Option<LayerRange>,
    #[arg(long, global = true, value_enum)]
    pub judge: Option<JudgeKind>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render prompts, capture final-token states and write an activation dump.
    Extract,
    /// Train per-layer probes on a dump and report V-information.
    Probe {
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Run one steered generation and print its trace.
    Steer {
        /// Label id the prompt requests.
        #[arg(long)]
        source: String,
        /// Label id to steer toward.
        #[arg(long)]
        target: String,
        #[arg(long, default_value = "query-000")]
        entity: String,
        #[arg(long)]
        probes: Option<PathBuf>,
    },
    /// Evaluate every ordered label pair and write the direction report.
    Eval {
        #[arg(long)]
        probes: Option<PathBuf>,
    },
    /// Weight-mass, patching, token-importance and embedding analyses.
    Interpret {
        #[arg(long)]
        dump: Option<PathBuf>,
        #[arg(long)]
        probes: Option<PathBuf>,
    },
    /// Check the configured runtime against the adapter contract.
    Conformance {
        #[arg(long, default_value_t = 8)]
        max_tokens: usize,
    },
    /// extract, probe, eval and interpret in sequence.
    Run,
}

fn experiment(cli: &Cli) -> Result<Experiment> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.p_hat {
        config.steering.p_hat = p;
    }
    if let Some(range) = cli.layers {
        config.steering.layers = Some(range.to_string());
    }
    if let Some(judge) = cli.judge {
        config.evaluation.judge = judge;
    }
    if let Some(out) = &cli.out {
        config.out = out.clone();
    }
    config.validate()?;
    if !(config.steering.p_hat > 0.0 && config.steering.p_hat < 1.0) {
        return Err(steerprobe::Error::Domain(format!("target probability {} outside (0, 1)", config.steering.p_hat)).into());
    }
    Ok(Experiment {
        config,
        config_path: cli.config.clone(),
    })
}

fn label_index(exp: &Experiment, id: &str) -> Result<usize> {
    Ok(exp.label_set()?.require_index(id)?)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let exp = experiment(cli)?;
    match &cli.command {
        Command::Extract => {
            let ds = exp.extract()?;
            println!("extracted {} records ({} layers, d={}) into {}", ds.len(), ds.num_layers(), ds.dim(), exp.layout().dump().display());
        }
        Command::Probe { dump } => {
            let ds = exp.load_dataset(dump.as_deref())?;
            let (report, _, elapsed) = exp.probe(&ds)?;
            println!("null entropy {:.6}", report.null_entropy);
            for l in &report.layers {
                println!("layer {:>3}  V-information {:.6}  test accuracy {:.4}", l.layer, l.v_information, l.test_accuracy);
            }
            println!("trained {} probes in {:.2}s", report.layers.len(), elapsed.as_secs_f64());
        }
        Command::Steer { source, target, entity, probes } => {
            let stack = exp.load_stack(probes.as_deref(), None)?;
            let trace = exp.steer(&stack, label_index(&exp, source)?, label_index(&exp, target)?, entity)?;
            println!("{}", serde_json::to_string_pretty(&trace)?);
        }
        Command::Eval { probes } => {
            let stack = exp.load_stack(probes.as_deref(), None)?;
            let judge = exp.judge()?;
            let matrix = exp.eval(&stack, judge.as_ref())?;
            for r in &matrix.reports {
                println!(
                    "{:<12} SR {}  baseline {}",
                    match &r.direction {
                        steerprobe::evaluation::ReportDirection::Pair { source, target } => format!("{source}->{target}"),
                        steerprobe::evaluation::ReportDirection::Average => "average".into(),
                    },
                    r.success_rate.map_or_else(|| "NA".into(), |v| format!("{v:.3}")),
                    r.baseline_success_rate.map_or_else(|| "NA".into(), |v| format!("{v:.3}")),
                );
            }
            if let Some(ratio) = matrix.timing.ratio() {
                println!("steered/unsteered per-token cost {ratio:.2}");
            }
        }
        Command::Interpret { dump, probes } => {
            let ds = exp.load_dataset(dump.as_deref())?;
            let stack = exp.load_stack(probes.as_deref(), Some(&ds.content_hash()))?;
            let judge = exp.judge()?;
            let r = exp.interpret(&ds, &stack, judge.as_ref())?;
            println!("unpatched average SR {}", r.unpatched_success_rate.map_or_else(|| "NA".into(), |v| format!("{v:.3}")));
            for p in &r.patches {
                println!("patch fraction {:.2}: average SR {}", p.fraction, p.average_success_rate.map_or_else(|| "NA".into(), |v| format!("{v:.3}")));
            }
            println!("report written to {}", exp.layout().report().display());
        }
        Command::Conformance { max_tokens } => {
            let checks = exp.conformance(*max_tokens)?;
            let mut failed = 0;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                failed += usize::from(!c.passed);
            }
            if failed > 0 {
                return Err(steerprobe::Error::Input(format!("{failed} conformance check(s) failed")).into());
            }
        }
        Command::Run => {
            exp.run_all()?;
            println!("report written to {}", exp.layout().report().display());
        }
    }
    Ok(())
}

/// Parse `argv` and run; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            e.exit_code()
        }
    }
}

impl From<clap::Error> for WorkbenchError {
    fn from(e: clap::Error) -> Self {
        WorkbenchError::Usage(e.to_string())
    }
}
