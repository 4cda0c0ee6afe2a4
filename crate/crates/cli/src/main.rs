use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ehrbench::fixtures::{write_fixtures, FixtureConfig};
use ehrbench::llm::StubRule;
use ehrbench::pipeline::{
    cmd_eval, cmd_ingest, cmd_query, cmd_run, cmd_testgen, gold_stub_rules, write_stub_script, PipelineError,
    RunConfig, DEMO_CONFIG,
};
use ehrbench::testgen::{load_suite, Modality};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_PARTIAL: u8 = 4;

#[derive(Parser)]
#[command(name = "ehrbench", version, about = "Evaluate LLM pipelines over clinical tables and notes")]
struct Cli {
    /// Run configuration file.
    #[arg(short, long, global = true, default_value = "ehrbench.toml")]
    config: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityArg {
    Structured,
    Unstructured,
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Structured => Modality::Structured,
            ModalityArg::Unstructured => Modality::Unstructured,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StubKind {
    /// Reply to each structured question with its gold program.
    Gold,
    /// Echo every prompt back.
    Echo,
}

#[derive(Subcommand)]
enum Command {
    /// Sample, join and project the input tables into the analysis table.
    Ingest,
    /// Generate a test suite.
    Testgen {
        #[arg(long, value_enum)]
        modality: ModalityArg,
    },
    /// Run a suite against one configured model.
    Run {
        #[arg(long, value_enum)]
        modality: ModalityArg,
        #[arg(long)]
        model: String,
    },
    /// Score run records and write report.json, report.txt and report.tsv.
    Eval {
        /// Run-record files; defaults to every file under <output_dir>/runs.
        #[arg(long, num_args = 1..)]
        records: Vec<PathBuf>,
        #[arg(long)]
        annotations: Option<PathBuf>,
    },
    /// Ask one question about the ingested table.
    Query {
        #[arg(long)]
        model: String,
        question: String,
    },
    /// Write synthetic input tables, a clinical note and a demo config.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        patients: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write an offline stub script.
    StubScript {
        #[arg(long, value_enum)]
        kind: StubKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn config(path: &Path) -> Result<RunConfig, PipelineError> {
    if !path.exists() {
        return Err(PipelineError::Usage(format!("config file {} not found", path.display())));
    }
    RunConfig::load(path)
}

fn run(cli: Cli) -> Result<u8, PipelineError> {
    match cli.command {
        Command::Fixtures { out, patients, seed } => {
            write_fixtures(&out, &FixtureConfig { n_patients: patients, seed })?;
            let cfg_path = out.join("ehrbench.toml");
            std::fs::write(&cfg_path, DEMO_CONFIG).map_err(|e| PipelineError::Io(cfg_path.display().to_string(), e))?;
            let echo = out.join("stub_echo.jsonl");
            write_stub_script(&[StubRule::echo_any()], &echo)?;
            println!("wrote fixtures and ehrbench.toml to {}", out.display());
            Ok(0)
        }
        Command::Ingest => {
            let cfg = config(&cli.config)?;
            let o = cmd_ingest(&cfg)?;
            println!("rows={}, cols={}", o.rows, o.columns);
            println!("wrote {} and {}", o.table_path.display(), o.schema_path.display());
            Ok(0)
        }
        Command::Testgen { modality } => {
            let cfg = config(&cli.config)?;
            let o = cmd_testgen(&cfg, modality.into())?;
            println!("cases={} skipped={}", o.cases, o.skipped.len());
            for s in &o.skipped {
                println!("  skipped {}: {}", s.source, s.reason);
            }
            println!("wrote {}", o.path.display());
            Ok(0)
        }
        Command::Run { modality, model } => {
            let cfg = config(&cli.config)?;
            let o = cmd_run(&cfg, modality.into(), &model)?;
            let failed = o.records.iter().filter(|r| r.failure.is_some()).count();
            println!("records={} failed={} generation_failures={}", o.records.len(), failed, o.generation_failures());
            println!("wrote {}", o.path.display());
            Ok(if o.is_partial() { EXIT_PARTIAL } else { 0 })
        }
        Command::Eval { records, annotations } => {
            let cfg = config(&cli.config)?;
            let records = if records.is_empty() {
                let dir = cfg.output_dir.join("runs");
                let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
                    .map_err(|e| PipelineError::Io(dir.display().to_string(), e))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
                    .collect();
                files.sort();
                files
            } else {
                records
            };
            let o = cmd_eval(&cfg, &records, annotations.as_deref())?;
            print!("{}", o.report.to_text());
            println!("wrote {}, {} and {}", o.json_path.display(), o.text_path.display(), o.tsv_path.display());
            Ok(0)
        }
        Command::Query { model, question } => {
            let cfg = config(&cli.config)?;
            let a = cmd_query(&cfg, &question, &model)?;
            println!("program: {}", a.program_text);
            if let Some(r) = &a.raw_result {
                println!("result: {}", r.render());
            }
            match &a.failure {
                None => {
                    println!("answer: {}", a.final_answer);
                    Ok(0)
                }
                Some(f) => {
                    println!("failed ({:?}): {}", f.kind, f.detail);
                    Ok(EXIT_DATA)
                }
            }
        }
        Command::StubScript { kind, out } => {
            let rules = match kind {
                StubKind::Echo => vec![StubRule::echo_any()],
                StubKind::Gold => {
                    let cfg = config(&cli.config)?;
                    gold_stub_rules(&load_suite(&cfg.suite_path(Modality::Structured))?)
                }
            };
            write_stub_script(&rules, &out)?;
            println!("wrote {} rules to {}", rules.len(), out.display());
            Ok(0)
        }
    }
}
