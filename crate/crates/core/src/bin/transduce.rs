use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use transduce::workflow::{self, BackendChoice, PolicyOverrides, RunOptions};

/// Run typed transduction workflows.
#[derive(Parser)]
#[command(name = "transduce", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check types, data bindings and stage wiring; exit 0 iff clean.
    Validate { workflow: PathBuf },
    /// Execute a workflow, writing final states and a JSONL trace.
    Run {
        workflow: PathBuf,
        #[arg(long, value_enum, default_value_t = BackendChoice::Mock)]
        backend: BackendChoice,
        /// Mock rules file; defaults to the workflow's `mock_rules`.
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Defaults to `<out>/trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        max_concurrency: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        fail_fast: bool,
    },
    /// Inspect a trace file.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
}

#[derive(Subcommand)]
enum TraceCommand {
    /// All records in id order, or one record in full.
    Show {
        trace: PathBuf,
        #[arg(long)]
        id: Option<u64>,
    },
    /// Ancestor chain and per-slot evidence of one record.
    Lineage { trace: PathBuf, id: u64 },
}

fn fail(e: workflow::WorkflowError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Validate { workflow } => {
            let (report, ok) = workflow::cmd_validate(&workflow);
            print!("{report}");
            if ok {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Run {
            workflow,
            backend,
            rules,
            out,
            trace,
            max_concurrency,
            batch_size,
            fail_fast,
        } => {
            let options = RunOptions {
                backend,
                rules,
                out_dir: out,
                trace,
                policy: PolicyOverrides {
                    max_concurrency,
                    batch_size,
                    fail_fast,
                },
            };
            let runtime = tokio::runtime::Runtime::new().expect("tokio runtime");
            match runtime.block_on(workflow::cmd_run(&workflow, &options)) {
                Ok(summary) => {
                    println!(
                        "wrote {} state(s) to {} and {} trace record(s) to {}",
                        summary.states,
                        summary.output.display(),
                        summary.records,
                        summary.trace.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
        Command::Trace { command } => {
            let report = match command {
                TraceCommand::Show { trace, id } => workflow::cmd_trace_show(&trace, id),
                TraceCommand::Lineage { trace, id } => workflow::cmd_trace_lineage(&trace, id),
            };
            match report {
                Ok(text) => {
                    print!("{text}");
                    ExitCode::SUCCESS
                }
                Err(e) => fail(e),
            }
        }
    }
}
