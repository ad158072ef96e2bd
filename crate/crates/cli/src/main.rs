//! `histo-tl`: prepare the dataset, train the experiment matrix and report on it.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use histo_tl::experiment::{
    self, build_report, discover_runs, exit_code, ExperimentPlan, ReportGrid, RunOptions, EXIT_CONFIG, EXIT_OK,
    EXIT_PARTIAL, REPORT_DIR_NAME,
};
use histo_tl::model::Backbone;
use histo_tl::task::TaskName;
use histo_tl::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "histo-tl", version, about = "Transfer-learning experiments on histology tiles")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Experiment configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Results directory; overrides the config and HISTO_TL_RESULTS.
    #[arg(long, global = true)]
    results_dir: Option<PathBuf>,
    /// Training seed; overrides `train.seed` and `augment.rng_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Retrain runs that already completed.
    #[arg(long, global = true)]
    force: bool,
    /// Number of runs trained concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    parallel: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Ingest the dataset and write manifest.csv and split.json.
    Prepare,
    /// Train and evaluate the selected cells of the matrix.
    Run {
        /// Comma-separated task names, e.g. MULTICLASS,NCT_vs_VT.
        #[arg(long, value_delimiter = ',')]
        task: Vec<TaskName>,
        /// Comma-separated backbones, e.g. VGG19,InceptionV3.
        #[arg(long, value_delimiter = ',')]
        model: Vec<Backbone>,
    },
    /// Build comparison tables and charts from completed runs.
    Report,
    /// Summarise one run.
    Inspect { run_id: String },
}

fn load_plan(global: &Global) -> Result<ExperimentPlan> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    let mut plan = ExperimentPlan::load(path)?;
    if let Some(seed) = global.seed {
        plan.train.seed = seed;
        plan.augment.rng_seed = seed;
    }
    Ok(plan)
}

/// Results directory for commands that may run without a config.
fn results_dir(global: &Global, plan: Option<&ExperimentPlan>) -> Result<PathBuf> {
    match plan {
        Some(p) => p.resolve_results_dir(global.results_dir.as_deref()),
        None => global
            .results_dir
            .clone()
            .or_else(|| std::env::var_os(experiment::RESULTS_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| {
                Error::Config(format!(
                    "no results directory: pass --results-dir or set {}",
                    experiment::RESULTS_DIR_ENV
                ))
            }),
    }
}

fn cmd_prepare(global: &Global) -> Result<i32> {
    let plan = load_plan(global)?;
    let dir = results_dir(global, Some(&plan))?;
    if !plan.dataset.root.exists() {
        return Err(Error::Ingestion {
            path: plan.dataset.root.clone(),
            message: "dataset root does not exist".into(),
        });
    }
    println!("{}", experiment::prepare(&plan, &dir)?);
    Ok(EXIT_OK)
}

fn cmd_run(global: &Global, task: Vec<TaskName>, model: Vec<Backbone>) -> Result<i32> {
    let plan = load_plan(global)?;
    let dir = results_dir(global, Some(&plan))?;
    let opts = RunOptions {
        tasks: (!task.is_empty()).then_some(task),
        backbones: (!model.is_empty()).then_some(model),
        force: global.force,
        parallel: global.parallel,
    };
    let summary = experiment::run_matrix(&plan, &dir, &opts)?;
    println!("{summary}");
    Ok(if summary.any_failed() { EXIT_PARTIAL } else { EXIT_OK })
}

fn cmd_report(global: &Global) -> Result<i32> {
    let plan = global.config.is_some().then(|| load_plan(global)).transpose()?;
    let dir = results_dir(global, plan.as_ref())?;
    let runs = discover_runs(&dir)?;
    let grid = match &plan {
        Some(p) => ReportGrid::from_plan(p),
        None => ReportGrid::discovered(&runs),
    };
    let report = build_report(runs, grid)?;
    let out = dir.join(REPORT_DIR_NAME);
    let written = experiment::write_report(&report, &out)?;
    println!("{report}\n");
    for path in written {
        println!("wrote {}", path.display());
    }
    if report.missing.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("{} expected runs are missing", report.missing.len());
        Ok(EXIT_PARTIAL)
    }
}

fn cmd_inspect(global: &Global, run_id: &str) -> Result<i32> {
    let plan = global.config.is_some().then(|| load_plan(global)).transpose()?;
    let dir = results_dir(global, plan.as_ref())?;
    println!("{}", experiment::inspect(Path::new(&dir), run_id)?);
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare => cmd_prepare(&cli.global),
        Command::Run { task, model } => cmd_run(&cli.global, task, model),
        Command::Report => cmd_report(&cli.global),
        Command::Inspect { run_id } => cmd_inspect(&cli.global, &run_id),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    };
    debug_assert!([EXIT_OK, EXIT_PARTIAL, EXIT_CONFIG].contains(&code));
    ExitCode::from(code as u8)
}
