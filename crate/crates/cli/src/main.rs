//! `pipetab` command-line front end.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pipetab::analytic::formula_bubble_ratio;
use pipetab::execgraph::{build_exec_graph, check_graph, GradientRelease, GraphOptions};
use pipetab::schedule::{build_schedule, render_table, structural_metrics, BuildOptions, ScheduleKind, TableFormat};
use pipetab::simulator::{export_trace, timeline_csv};
use pipetab::sweep::{
    build_regimes, compare_report, prepare_cell, read_cells_csv, run_sweep, simulate_cell, CompareMode, Config,
    PlacementVariant, ScheduleSpec,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Core(#[from] pipetab::Error),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "pipetab", version, about = "Pipeline-parallel schedule tables, execution graphs and simulation")]
struct Cli {
    /// JSON file with `model`, `system` and `sweep` sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for sweep datasets.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Reserved. Nothing here is random, so the flag is rejected.
    #[arg(long, global = true)]
    seed_irrelevant: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a schedule table, print it and its structural metrics.
    Table {
        #[command(flatten)]
        shape: Shape,
        #[arg(long, value_enum, default_value_t = FormatArg::Ascii)]
        format: FormatArg,
    },
    /// Closed-form bubble ratio.
    Formula {
        #[arg(long)]
        schedule: ScheduleKind,
        #[arg(long)]
        stages: usize,
        #[arg(long)]
        microbatches: usize,
    },
    /// Lower a table to an execution graph; dump and/or check it.
    Graph {
        #[command(flatten)]
        shape: Shape,
        #[command(flatten)]
        graph: GraphArgs,
        /// Print every node and edge.
        #[arg(long)]
        dump: bool,
        /// Run the structural graph checks; exits non-zero on violations.
        #[arg(long)]
        check: bool,
    },
    /// Simulate one cell under one regime.
    Simulate {
        #[command(flatten)]
        shape: Shape,
        #[command(flatten)]
        graph: GraphArgs,
        /// Regime name from the 3×3 grid, e.g. `baseline` or `slow_nw_fast_cp`.
        #[arg(long, default_value = "baseline")]
        regime: String,
        /// Write a trace-event JSON file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write per-node start and end times as CSV.
        #[arg(long)]
        timeline_csv: Option<PathBuf>,
    },
    /// Run the configured sweep and write dataset CSV files into `--out`.
    Sweep,
    /// Compare two schedules from a sweep's cell file.
    Report {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Cell file; defaults to `<out>/sweep_cells.csv`.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct Shape {
    /// gpipe, 1f1b, chimera or hanayo.
    #[arg(long)]
    schedule: ScheduleKind,
    #[arg(long)]
    stages: usize,
    #[arg(long)]
    microbatches: usize,
    /// Recompute activations before each backward step.
    #[arg(long)]
    recompute: bool,
    /// V-shaped passes per microbatch for hanayo.
    #[arg(long, default_value_t = 2)]
    waves: usize,
    /// Use the 1:2 asymmetric chimera placement.
    #[arg(long)]
    asymmetric: bool,
    /// Override the model's block count.
    #[arg(long)]
    blocks: Option<u32>,
}

impl Shape {
    fn spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            kind: self.schedule,
            placement: if self.asymmetric { PlacementVariant::Asymmetric } else { PlacementVariant::Balanced },
            recompute: self.recompute,
            waves: self.waves,
        }
    }
}

#[derive(Args, Debug)]
struct GraphArgs {
    /// When a stage's activation gradient is sent upstream.
    #[arg(long, value_enum, default_value_t = ReleaseArg::Agrad)]
    release: ReleaseArg,
    /// Add weight-gradient exchanges between chimera replicas.
    #[arg(long)]
    reductions: bool,
}

impl GraphArgs {
    fn options(&self) -> GraphOptions {
        GraphOptions {
            gradient_release: match self.release {
                ReleaseArg::Agrad => GradientRelease::AfterAgrad,
                ReleaseArg::Backward => GradientRelease::AfterBackward,
            },
            cross_replica_reduction: self.reductions,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FormatArg {
    Ascii,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReleaseArg {
    Agrad,
    Backward,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    HanayoVsChimera,
    AsymVsSym,
}

fn load_config(path: Option<&Path>) -> CliResult<Config> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn model_for(cfg: &Config, shape: &Shape) -> pipetab::costmodel::ModelConfig {
    let mut model = cfg.model.clone();
    if let Some(b) = shape.blocks {
        model.blocks = b;
    }
    model
}

fn run(cli: Cli) -> CliResult {
    if cli.seed_irrelevant.is_some() {
        return Err(CliError::Usage(
            "--seed-irrelevant is reserved: schedules, simulation and sweeps are fully deterministic".into(),
        ));
    }
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Table { shape, format } => {
            let model = model_for(&cfg, &shape);
            let spec = shape.spec();
            let placement = spec.placement_for(shape.stages, model.blocks)?;
            let opts = BuildOptions { recompute: shape.recompute, waves: shape.waves };
            let table = build_schedule(shape.schedule, shape.stages, shape.microbatches, &placement, opts)?;
            let metrics = structural_metrics(&table)?;
            match format {
                FormatArg::Ascii => {
                    print!("{}", render_table(&table, TableFormat::Ascii));
                    println!("bubble_ratio {:.6}", metrics.bubble_ratio);
                    println!("schedule_length {}", metrics.schedule_length);
                }
                FormatArg::Csv => print!("{}", render_table(&table, TableFormat::Csv)),
            }
        }
        Command::Formula { schedule, stages, microbatches } => {
            let f = formula_bubble_ratio(schedule, stages, microbatches)?;
            println!("bubble_ratio {:.6}", f.bubble_ratio);
            println!("assumptions: {}", f.assumptions);
        }
        Command::Graph { shape, graph, dump, check } => {
            let model = model_for(&cfg, &shape);
            let spec = shape.spec();
            let placement = spec.placement_for(shape.stages, model.blocks)?;
            let opts = BuildOptions { recompute: shape.recompute, waves: shape.waves };
            let table = build_schedule(shape.schedule, shape.stages, shape.microbatches, &placement, opts)?;
            let g = build_exec_graph(&table, &model, graph.options())?;
            if dump {
                print!("{}", g.dump());
            }
            println!("nodes {} edges {} transfers {}", g.len(), g.edges.len(), g.transfer_count());
            if check {
                let report = check_graph(&g);
                for v in &report.violations {
                    println!("violation: {v}");
                }
                if !report.is_ok() {
                    return Err(CliError::Failed(format!("{} graph violations", report.violations.len())));
                }
                println!("check ok");
            }
        }
        Command::Simulate { shape, graph, regime, trace, timeline_csv: csv_path } => {
            let model = model_for(&cfg, &shape);
            let grid = build_regimes(&cfg.system, cfg.sweep.factor)?;
            let regime = grid.get(&regime).ok_or_else(|| {
                CliError::Usage(format!("unknown regime `{regime}`; known: {}", grid.names().join(", ")))
            })?;
            let prepared = prepare_cell(&shape.spec(), shape.stages, shape.microbatches, &model, graph.options())?;
            let sim = simulate_cell(&prepared, &model, &regime.system)?;
            println!("regime {}", regime.name);
            println!("t_sim_s {:.6}", sim.metrics.t_sim);
            println!("beta_idle {:.6}", sim.metrics.beta_idle);
            println!("table_bubble_ratio {:.6}", prepared.metrics.bubble_ratio);
            println!("peak_activation_bytes {}", sim.memory.peak_activation());
            println!("peak_total_bytes {}", sim.memory.peak_total());
            if let Some(p) = trace {
                export_trace(&sim.timeline, &prepared.graph, &p)?;
            }
            if let Some(p) = csv_path {
                std::fs::write(&p, timeline_csv(&sim.timeline, &prepared.graph)).map_err(pipetab::Error::from)?;
            }
        }
        Command::Sweep => {
            let outs = run_sweep(&cfg, &cli.out)?;
            for f in &outs.files {
                println!("wrote {}", f.display());
            }
            for f in &outs.failures {
                eprintln!("cell failed: {f}");
            }
        }
        Command::Report { mode, input } => {
            let path = input.unwrap_or_else(|| cli.out.join("sweep_cells.csv"));
            let records = read_cells_csv(&path)?;
            let mode = match mode {
                ModeArg::HanayoVsChimera => CompareMode::HanayoVsChimera,
                ModeArg::AsymVsSym => CompareMode::AsymVsSym,
            };
            let report = compare_report(&records, mode);
            print!("{}", report.text(mode));
            if report.rows.is_empty() {
                return Err(CliError::Failed(format!("no comparable cells in {}", path.display())));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
