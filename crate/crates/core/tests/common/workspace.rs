//! A throwaway offline workspace: fixture tables, the demo config and stub
//! scripts, all under one directory.

use std::path::{Path, PathBuf};

use ehrbench::fixtures::{write_fixtures, FixtureConfig};
use ehrbench::llm::StubRule;
use ehrbench::pipeline::{
    cmd_eval, cmd_ingest, cmd_run, cmd_testgen, gold_stub_rules, write_stub_script, RunConfig, DEMO_CONFIG,
};
use ehrbench::testgen::{load_suite, Modality};

/// A wrong but valid program; its answer never equals a gold answer.
pub const SENTINEL_PROGRAM: &str = "DERIVE X = SUBJECT_ID * 0 - 987654 | AGGREGATE MIN(X)";

pub const CORRUPT_ENDPOINT: &str = r#"
[[endpoint]]
endpoint_id = "stub-corrupt"
kind = "scripted_stub"
script = "stub_corrupt.jsonl"
"#;

/// Writes fixtures, the demo config (with `extra` appended) and the echo
/// stub, then loads the config.
pub fn setup(dir: &Path, prefix: &str, extra: &str) -> RunConfig {
    write_fixtures(dir, &FixtureConfig::default()).unwrap();
    let text = format!("{prefix}{DEMO_CONFIG}{extra}");
    std::fs::write(dir.join("ehrbench.toml"), &text).unwrap();
    write_stub_script(&[StubRule::echo_any()], &dir.join("stub_echo.jsonl")).unwrap();
    RunConfig::load(&dir.join("ehrbench.toml")).unwrap()
}

pub struct FullRun {
    pub cfg: RunConfig,
    pub record_files: Vec<PathBuf>,
}

/// ingest, both suites, gold and echo runs, eval.
pub fn full_offline_run(dir: &Path, prefix: &str) -> FullRun {
    let cfg = setup(dir, prefix, "");
    cmd_ingest(&cfg).unwrap();
    cmd_testgen(&cfg, Modality::Structured).unwrap();
    let suite = load_suite(&cfg.suite_path(Modality::Structured)).unwrap();
    write_stub_script(&gold_stub_rules(&suite), &dir.join("stub_gold.jsonl")).unwrap();
    cmd_testgen(&cfg, Modality::Unstructured).unwrap();
    let a = cmd_run(&cfg, Modality::Structured, "stub-gold").unwrap();
    let b = cmd_run(&cfg, Modality::Unstructured, "stub-echo").unwrap();
    let record_files = vec![a.path, b.path];
    cmd_eval(&cfg, &record_files, None).unwrap();
    FullRun { cfg, record_files }
}
