use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hyperalloc_cli::engine::{run_model, Mode, Model, RunOptions};
use hyperalloc_cli::report::{emit_report, render_flows, render_pi, render_routes, Format};
use hyperalloc_cli::scenario::{parse_scenario, Scenario};
use hyperalloc_core::subspaces::{parse_subspaces, Subspace};

const VALIDATION: u8 = 1;
const ENGINE: u8 = 2;

#[derive(Parser)]
#[command(
    name = "hyperalloc",
    version,
    about = "Allocate tasks to robot, fog and cloud nodes by subspace scores"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arrival of a scenario and report the decisions.
    Allocate(AllocateArgs),
    /// Print intermediate results of a scenario's model.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario file.
    #[arg(long)]
    scenario: PathBuf,
    /// Communication-time evaluation; defaults to the scenario's setting.
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated list drawn from cmpt, comm, cplt.
    #[arg(long, value_parser = subspace_list)]
    subspaces: Option<SubspaceList>,
    /// Weight-update step of the capability dynamics.
    #[arg(long)]
    step: Option<f64>,
    /// Convergence tolerance of the capability dynamics.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    /// Worker threads for candidate scoring.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone)]
struct SubspaceList(Vec<Subspace>);

fn subspace_list(s: &str) -> Result<SubspaceList, String> {
    parse_subspaces(s).map(SubspaceList)
}

#[derive(Args)]
struct AllocateArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum, env = "HYPERALLOC_FORMAT", default_value = "table")]
    format: FormatArg,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InspectArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    #[arg(long, value_enum)]
    what: What,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Expected,
    Sample,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Table,
    Jsonl,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum What {
    Flows,
    Pi,
    Routes,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn validation(message: impl Into<String>) -> Self {
        Failure {
            code: VALIDATION,
            message: message.into(),
        }
    }

    fn engine(message: impl Into<String>) -> Self {
        Failure {
            code: ENGINE,
            message: message.into(),
        }
    }
}

fn load(args: &ScenarioArgs) -> Result<(Scenario, RunOptions), Failure> {
    let path = args.scenario.display();
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::validation(format!("cannot read {path}: {e}")))?;
    let scenario = parse_scenario(&text).map_err(|errs| {
        let lines: Vec<String> = errs.0.iter().map(|e| format!("{path}:{e}")).collect();
        Failure::validation(lines.join("\n"))
    })?;
    let mut opts = scenario.options.clone();
    if let Some(m) = args.mode {
        opts.mode = match m {
            ModeArg::Expected => Mode::Expected,
            ModeArg::Sample => Mode::Sample,
        };
    }
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    if let Some(subs) = &args.subspaces {
        opts.subspaces = subs.0.clone();
    }
    if let Some(step) = args.step {
        if !(step.is_finite() && step >= 0.0) {
            return Err(Failure::validation(
                "--step must be finite and non-negative",
            ));
        }
        opts.dynamics.step = step;
    }
    if let Some(tol) = args.tol {
        if !(tol.is_finite() && tol >= 0.0) {
            return Err(Failure::validation("--tol must be finite and non-negative"));
        }
        opts.dynamics.tol = tol;
    }
    if let Some(n) = args.max_iter {
        opts.dynamics.max_iter = n;
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        opts.threads = n;
    }
    Ok((scenario, opts))
}

fn allocate(args: &AllocateArgs) -> Result<(), Failure> {
    let (scenario, opts) = load(&args.scenario)?;
    let model = Model::build(&scenario, &opts).map_err(|e| Failure::engine(e.to_string()))?;
    let report = run_model(&model, &scenario).map_err(|e| Failure::engine(e.to_string()))?;
    let format = match args.format {
        FormatArg::Table => Format::Table,
        FormatArg::Jsonl => Format::Jsonl,
        FormatArg::Csv => Format::Csv,
    };
    let text = emit_report(&report, format);
    match &args.out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| Failure::engine(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn inspect(args: &InspectArgs) -> Result<(), Failure> {
    let (scenario, opts) = load(&args.scenario)?;
    let model = Model::build(&scenario, &opts).map_err(|e| Failure::engine(e.to_string()))?;
    let text = match args.what {
        What::Flows => render_flows(&model).map_err(|e| Failure::engine(e.to_string()))?,
        What::Pi => render_pi(&model),
        What::Routes => render_routes(&model),
    };
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Allocate(a) => allocate(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
