use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use bft_core::audit::{audit, export_graph, FusionGraph};
use bft_core::bench::{run_bench, BenchConfig};
use bft_core::butterfly::{ButterflySpec, ResidualPolicy};
use bft_core::demo::{train_demo, DemoTask, TrainConfig};
use bft_core::flops::{profile, ArchConfig, Fusion};
use bft_core::verify::run_verify;
use bft_core::{BftError, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Butterfly Transform channel fusion: checks, benchmarks and FLOP reports.
#[derive(Parser)]
#[command(name = "bft", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the oracle, statistics, gradient and audit self-checks.
    Verify {
        /// Run only this suite.
        #[arg(long)]
        filter: Option<String>,
        /// Also validate this weight file (and its .json sidecar).
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Time BFT against dense pointwise fusion.
    Bench {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [28, 28])]
        hw: Vec<usize>,
        #[arg(long, default_value_t = 21)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Per-block MAC profile of an architecture.
    Flops(FlopsArgs),
    /// Train the toy BFT and dense-pointwise models on synthetic data.
    TrainDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.0)]
        weight_decay: f64,
        #[arg(long, default_value = "firsttolast")]
        residual: ResidualPolicy,
        #[arg(long, default_value_t = 4)]
        base: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, value_enum, default_value_t = TaskKind::Separable)]
        task: TaskKind,
        #[arg(long)]
        json: bool,
    },
    /// Audit a fusion graph against the four design principles.
    Audit {
        /// Butterfly width; the graph is exported from a base-k spec.
        #[arg(long, conflicts_with = "graph")]
        n: Option<usize>,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Graph JSON file (`layers`, `edges`).
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Write the audited graph as JSON.
        #[arg(long)]
        export: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Args)]
struct FlopsArgs {
    /// Built-in config, e.g. mobilenetv1-0.5-224 or shufflenetv2-1.25.
    #[arg(long, required_unless_present = "config", conflicts_with = "config")]
    arch: Option<String>,
    /// Architecture config JSON file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    fusion: Option<FusionArg>,
    #[arg(long, default_value_t = 4)]
    base: usize,
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FusionArg {
    Bft,
    Pointwise,
}

#[derive(Clone, Copy, ValueEnum)]
enum TaskKind {
    Separable,
    Hard,
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn cmd_verify(filter: Option<String>, weights: Option<PathBuf>, json: bool) -> Result<bool> {
    let report = run_verify(filter.as_deref(), weights.as_deref())?;
    if json {
        print_json(&report)?;
    } else {
        print!("{}", report.to_table());
    }
    for f in report.failures() {
        eprintln!("FAILED {f}");
    }
    Ok(report.passed())
}

fn cmd_flops(args: FlopsArgs) -> Result<bool> {
    let mut arch = match (&args.arch, &args.config) {
        (Some(name), _) => ArchConfig::builtin(name)?,
        (None, Some(path)) => ArchConfig::from_json(&fs::read_to_string(path)?)?,
        (None, None) => unreachable!("clap requires --arch or --config"),
    };
    match args.fusion {
        Some(FusionArg::Bft) => arch = arch.with_fusion(Fusion::Bft { base: args.base }),
        Some(FusionArg::Pointwise) => arch = arch.with_fusion(Fusion::Pointwise),
        None => {}
    }
    let report = profile(&arch)?;
    if args.json {
        let mut value = serde_json::to_value(&report)?;
        value["fusion_macs"] = report.fusion_macs().into();
        value["fusion_share"] = report.fusion_share().into();
        print_json(&value)?;
    } else {
        print!("{}", report.to_table());
    }
    Ok(true)
}

fn cmd_audit(n: Option<usize>, k: usize, graph: Option<PathBuf>, export: Option<PathBuf>, json: bool) -> Result<bool> {
    let g = match (n, graph) {
        (_, Some(path)) => FusionGraph::from_json(&fs::read_to_string(path)?)?,
        (Some(n), None) => export_graph(&ButterflySpec::with_base(n, k)?),
        (None, None) => return Err(BftError::InvalidSpec("audit needs --n or --graph".into())),
    };
    if let Some(path) = export {
        fs::write(path, g.to_json())?;
    }
    let r = audit(&g);
    if json {
        print_json(&r)?;
    } else {
        println!("layers {:?}  edges {}", r.layers, r.edge_count);
        let names = [
            "full connectivity",
            "large bottleneck",
            "low operation count",
            "operation symmetry",
        ];
        for (name, ok) in names.iter().zip(r.principles()) {
            println!("{:<22}{}", name, if ok { "PASS" } else { "FAIL" });
        }
        println!("unique paths          {}", r.unique_paths);
        println!("bottleneck            {}", r.bottleneck);
        println!("edges / n log2 n      {:.3}", r.bound_ratio);
        for note in &r.notes {
            println!("note: {note}");
        }
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Verify { filter, weights, json } => cmd_verify(filter, weights, json),
        Command::Bench {
            n,
            k,
            hw,
            reps,
            seed,
            json,
        } => {
            let cfg = BenchConfig {
                seed,
                ..BenchConfig::new(n, k, hw[0], hw[1], reps)
            };
            let report = run_bench(&cfg)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", report.to_table());
            }
            Ok(true)
        }
        Command::Flops(args) => cmd_flops(args),
        Command::TrainDemo {
            seed,
            weight_decay,
            residual,
            base,
            epochs,
            task,
            json,
        } => {
            let task = match task {
                TaskKind::Separable => DemoTask::separable(seed),
                TaskKind::Hard => DemoTask::hard(seed),
            };
            let cfg = TrainConfig {
                epochs,
                weight_decay,
                residual,
                base,
                seed,
                ..TrainConfig::default()
            };
            let metrics = train_demo(&task, &cfg)?;
            if json {
                print_json(&metrics)?;
            } else {
                println!(
                    "{:<10}{:>10}{:>12}{:>12}{:>12}",
                    "fusion", "channels", "MACs/img", "train acc", "val acc"
                );
                for r in &metrics.runs {
                    println!(
                        "{:<10}{:>10}{:>12}{:>12.4}{:>12.4}",
                        serde_json::to_value(r.fusion)?.as_str().unwrap_or("?"),
                        r.fusion_channels,
                        r.macs_per_image,
                        r.final_train_accuracy,
                        r.final_val_accuracy
                    );
                }
            }
            Ok(true)
        }
        Command::Audit {
            n,
            k,
            graph,
            export,
            json,
        } => cmd_audit(n, k, graph, export, json),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
