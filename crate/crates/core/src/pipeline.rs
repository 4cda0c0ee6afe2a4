//! Config-driven ingest → testgen → run → eval commands.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentAnswer, Failure, FailureKind, RepairPolicy, StructuredAgent};
use crate::eval::{
    aggregate_report_with, ingest_annotations, load_records, EvalError, EvalReport, MatchMode, RunRecord,
};
use crate::fixtures::KEPT_COLUMNS;
use crate::fsutil::write_atomic;
use crate::llm::{EndpointConfig, Gateway, GatewayError, Journal};
use crate::par::{with_workers, Execution};
use crate::query::ExecutionContext;
use crate::rag::{
    answer_unstructured_question, build_index, chunk_document, ChunkStore, ChunkingConfig, Embedder, HashEmbedder,
    RagError, RemoteEmbedder, RetrievalConfig,
};
use crate::table::{
    join_cohort, load_csv, project_columns, read_schema_sidecar, sample_cohort, synthesize_dob, write_csv,
    write_schema_sidecar, CohortConfig, Table, TableError,
};
use crate::testgen::{
    generate_structured_suite, generate_unstructured_suite, load_suite, parse_templates, save_suite,
    segment_document, Modality, SkippedCase, TestCase, TestgenError, DEFAULT_TEMPLATES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub patients: PathBuf,
    pub prescriptions: PathBuf,
    pub diagnoses: PathBuf,
    pub d_icd: PathBuf,
    /// Clinical note for the unstructured suite.
    pub note: Option<PathBuf>,
    /// Structured template file; the shipped set when absent.
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestgenSettings {
    pub structured_cases: usize,
    pub segments: usize,
    /// Endpoint used for segmentation and question writing; none means the
    /// deterministic fallbacks.
    pub generator: Option<String>,
    pub allow_segmentation_fallback: bool,
}

impl Default for TestgenSettings {
    fn default() -> Self {
        Self {
            structured_cases: 30,
            segments: 50,
            generator: None,
            allow_segmentation_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Hash,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingSettings {
    pub kind: EmbedderKind,
    pub dimension: usize,
    /// Model name sent to a remote embedding endpoint.
    pub model: Option<String>,
    /// Connection settings of a remote embedding endpoint; `base_url` is the
    /// full embeddings URL.
    pub endpoint: Option<EndpointConfig>,
}

impl Default for EmbeddingSettings {
    fn default() -> Self {
        Self {
            kind: EmbedderKind::Hash,
            dimension: HashEmbedder::DEFAULT_DIMENSION,
            model: None,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub match_mode: MatchMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub workers: Option<usize>,
    pub data: DataPaths,
    #[serde(default)]
    pub cohort: CohortConfig,
    #[serde(default)]
    pub execution: ExecutionContext,
    #[serde(default)]
    pub chunking: ChunkingConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub agent: RepairPolicy,
    #[serde(default)]
    pub testgen: TestgenSettings,
    #[serde(default)]
    pub embedding: EmbeddingSettings,
    #[serde(default)]
    pub eval: EvalSettings,
    /// Model endpoints; `endpoint_id` is the model id used on the command line.
    #[serde(default, rename = "endpoint")]
    pub endpoints: Vec<EndpointConfig>,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Testgen(#[from] TestgenError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Endpoint(#[from] GatewayError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

impl PipelineError {
    /// 1 usage, 2 data, 3 endpoint.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            PipelineError::Endpoint(_) | PipelineError::Rag(RagError::Gateway(_) | RagError::Embed(_)) => 3,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io(path.display().to_string(), e)
}

impl RunConfig {
    /// Parses a TOML config; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        };
        abs(&mut cfg.output_dir);
        for p in [
            &mut cfg.data.patients,
            &mut cfg.data.prescriptions,
            &mut cfg.data.diagnoses,
            &mut cfg.data.d_icd,
        ] {
            abs(p);
        }
        for p in [&mut cfg.data.note, &mut cfg.data.templates].into_iter().flatten() {
            abs(p);
        }
        for e in &mut cfg.endpoints {
            if let Some(p) = &mut e.script {
                abs(p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut ids = BTreeSet::new();
        for e in &self.endpoints {
            if !ids.insert(e.endpoint_id.as_str()) {
                return Err(PipelineError::Config(format!("duplicate endpoint id {:?}", e.endpoint_id)));
            }
            e.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let Some(g) = &self.testgen.generator {
            if !ids.contains(g.as_str()) {
                return Err(PipelineError::Config(format!("testgen generator {g:?} is not a configured endpoint")));
            }
        }
        self.cohort.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        self.chunking.validate().map_err(PipelineError::Config)?;
        if self.embedding.dimension == 0 {
            return Err(PipelineError::Config("embedding dimension must be positive".into()));
        }
        Ok(())
    }

    pub fn workers(&self) -> usize {
        self.workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1)
    }

    pub fn model_ids(&self) -> Vec<&str> {
        self.endpoints.iter().map(|e| e.endpoint_id.as_str()).collect()
    }

    pub fn endpoint(&self, model_id: &str) -> Result<&EndpointConfig, PipelineError> {
        self.endpoints.iter().find(|e| e.endpoint_id == model_id).ok_or_else(|| {
            PipelineError::Usage(format!(
                "unknown model id {model_id:?}; configured: {}",
                if self.endpoints.is_empty() {
                    "(none)".to_string()
                } else {
                    self.model_ids().join(", ")
                }
            ))
        })
    }

    pub fn cohort_path(&self) -> PathBuf {
        self.output_dir.join("cohort.csv")
    }

    pub fn cohort_schema_path(&self) -> PathBuf {
        self.output_dir.join("cohort.schema")
    }

    pub fn suite_path(&self, modality: Modality) -> PathBuf {
        self.output_dir.join(format!("suite_{}.jsonl", modality.as_str()))
    }

    pub fn records_path(&self, modality: Modality, model_id: &str) -> PathBuf {
        let safe: String = model_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
            .collect();
        self.output_dir.join("runs").join(format!("{}_{safe}.jsonl", modality.as_str()))
    }

    pub fn journal_path(&self) -> PathBuf {
        self.output_dir.join("journal.jsonl")
    }

    fn gateway(&self, model_id: &str, journal: &Journal) -> Result<Gateway, PipelineError> {
        Ok(Gateway::from_config(self.endpoint(model_id)?.clone(), journal.clone())?)
    }

    fn embedder(&self) -> Result<Box<dyn Embedder>, PipelineError> {
        match self.embedding.kind {
            EmbedderKind::Hash => Ok(Box::new(HashEmbedder::new(self.embedding.dimension))),
            EmbedderKind::Remote => {
                let endpoint = self.embedding.endpoint.as_ref().ok_or_else(|| {
                    PipelineError::Config("remote embedding needs an [embedding.endpoint] section".into())
                })?;
                let model = self.embedding.model.as_deref().unwrap_or(&endpoint.endpoint_id);
                Ok(Box::new(
                    RemoteEmbedder::new(endpoint, model, self.embedding.dimension).map_err(RagError::from)?,
                ))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestOutcome {
    pub rows: usize,
    pub columns: usize,
    pub table_path: PathBuf,
    pub schema_path: PathBuf,
}

fn load_input(path: &Path) -> Result<Table, PipelineError> {
    if !path.exists() {
        return Err(TableError::MissingFile(path.to_path_buf()).into());
    }
    Ok(load_csv(path, None)?)
}

/// Samples the cohort, adds the synthetic DOB column, joins the four tables
/// and keeps the 23 analysis columns.
pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestOutcome, PipelineError> {
    let patients = load_input(&cfg.data.patients)?;
    let prescriptions = load_input(&cfg.data.prescriptions)?;
    let diagnoses = load_input(&cfg.data.diagnoses)?;
    let d_icd = load_input(&cfg.data.d_icd)?;
    let cohort = sample_cohort(&patients, &cfg.cohort)?;
    let cohort = synthesize_dob(&cohort, &cfg.cohort)?;
    let joined = join_cohort(&cohort, &prescriptions, &diagnoses, &d_icd)?;
    let keep: Vec<String> = KEPT_COLUMNS
        .iter()
        .map(|c| {
            if *c == "DOB_Demo" {
                cfg.cohort.dob_column_name.clone()
            } else {
                c.to_string()
            }
        })
        .collect();
    let merged = project_columns(&joined, &keep)?;
    log::info!(
        "sampled {} of {} patients; joined table has {} rows",
        cohort.num_rows(),
        patients.num_rows(),
        merged.num_rows()
    );
    let (table_path, schema_path) = (cfg.cohort_path(), cfg.cohort_schema_path());
    write_csv(&merged, &table_path)?;
    write_schema_sidecar(merged.schema(), &schema_path)?;
    Ok(IngestOutcome {
        rows: merged.num_rows(),
        columns: merged.num_columns(),
        table_path,
        schema_path,
    })
}

/// Loads the ingested table using its schema sidecar.
pub fn load_cohort(cfg: &RunConfig) -> Result<Table, PipelineError> {
    let (table_path, schema_path) = (cfg.cohort_path(), cfg.cohort_schema_path());
    if !table_path.exists() || !schema_path.exists() {
        return Err(PipelineError::Usage(format!(
            "no ingested table at {}; run ingest first",
            table_path.display()
        )));
    }
    let schema = read_schema_sidecar(&schema_path)?;
    Ok(load_csv(&table_path, Some(&schema))?)
}

fn read_note(cfg: &RunConfig) -> Result<String, PipelineError> {
    let path = cfg
        .data
        .note
        .as_ref()
        .ok_or_else(|| PipelineError::Config("data.note is required for the unstructured modality".into()))?;
    fs::read_to_string(path).map_err(io_err(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestgenOutcome {
    pub path: PathBuf,
    pub cases: usize,
    pub skipped: Vec<SkippedCase>,
}

pub fn cmd_testgen(cfg: &RunConfig, modality: Modality) -> Result<TestgenOutcome, PipelineError> {
    let journal = Journal::to_file(&cfg.journal_path()).map_err(io_err(&cfg.journal_path()))?;
    let generator = match &cfg.testgen.generator {
        Some(id) => Some(cfg.gateway(id, &journal)?),
        None => None,
    };
    let (cases, skipped) = with_workers(cfg.workers(), || -> Result<_, PipelineError> {
        match modality {
            Modality::Structured => {
                let table = load_cohort(cfg)?;
                let templates = match &cfg.data.templates {
                    Some(p) => parse_templates(&fs::read_to_string(p).map_err(io_err(p))?)?,
                    None => parse_templates(DEFAULT_TEMPLATES)?,
                };
                let suite = generate_structured_suite(
                    &table,
                    &cfg.execution,
                    &templates,
                    cfg.seed,
                    cfg.testgen.structured_cases,
                    Execution::Parallel,
                )?;
                Ok((suite.cases, suite.skipped))
            }
            Modality::Unstructured => {
                let note = read_note(cfg)?;
                let seg = segment_document(
                    &note,
                    cfg.testgen.segments,
                    generator.as_ref(),
                    cfg.testgen.allow_segmentation_fallback,
                )?;
                let suite = generate_unstructured_suite(&seg.segments, generator.as_ref(), Execution::Parallel);
                Ok((suite.cases, suite.skipped))
            }
        }
    })?;
    for s in &skipped {
        log::warn!("skipped {}: {}", s.source, s.reason);
    }
    let path = cfg.suite_path(modality);
    save_suite(&cases, &path)?;
    Ok(TestgenOutcome {
        path,
        cases: cases.len(),
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub path: PathBuf,
    pub records: Vec<RunRecord>,
}

impl RunOutcome {
    /// Cases that never got a model answer (endpoint errors, exhausted budget).
    pub fn generation_failures(&self) -> usize {
        self.records
            .iter()
            .filter(|r| r.failure.as_ref().is_some_and(|f| f.kind == FailureKind::Generation))
            .count()
    }

    pub fn is_partial(&self) -> bool {
        self.generation_failures() > 0
    }
}

pub fn structured_record(case: &TestCase, model_id: &str, ctx: &ExecutionContext, a: &AgentAnswer) -> RunRecord {
    RunRecord {
        case_id: case.case_id.clone(),
        modality: Modality::Structured,
        model_id: model_id.to_string(),
        question: case.question.clone(),
        gold_answer: case.gold_answer.clone(),
        final_answer: a.final_answer.clone(),
        program_text: Some(a.program_text.clone()),
        raw_result: a.raw_result.as_ref().map(|r| r.render()),
        failure: a.failure.clone(),
        attempts: Some(a.attempts),
        retrieved_chunk_ids: None,
        reference_date: Some(ctx.reference_date),
    }
}

fn load_suite_for(cfg: &RunConfig, modality: Modality) -> Result<Vec<TestCase>, PipelineError> {
    let path = cfg.suite_path(modality);
    if !path.exists() {
        return Err(PipelineError::Usage(format!(
            "no {} suite at {}; run testgen first",
            modality.as_str(),
            path.display()
        )));
    }
    Ok(load_suite(&path)?)
}

/// Runs every suite case against one endpoint. Per-case failures are
/// recorded, not raised.
pub fn cmd_run(cfg: &RunConfig, modality: Modality, model_id: &str) -> Result<RunOutcome, PipelineError> {
    cfg.endpoint(model_id)?;
    let suite = load_suite_for(cfg, modality)?;
    let journal = Journal::to_file(&cfg.journal_path()).map_err(io_err(&cfg.journal_path()))?;
    let gateway = cfg.gateway(model_id, &journal)?;
    log::info!("running {} {} cases against {model_id}", suite.len(), modality.as_str());
    let records = match modality {
        Modality::Structured => {
            let table = load_cohort(cfg)?;
            let agent = StructuredAgent::new(table.schema(), cfg.agent)
                .map_err(|e| PipelineError::Usage(e.to_string()))?;
            with_workers(cfg.workers(), || {
                Execution::Parallel.map(&suite, |case| {
                    let a = agent.answer(&case.question, &table, &cfg.execution, &gateway);
                    structured_record(case, model_id, &cfg.execution, &a)
                })
            })
        }
        Modality::Unstructured => {
            let note = read_note(cfg)?;
            let chunks = ChunkStore::new(chunk_document("note", &note, &cfg.chunking))?;
            let embedder = cfg.embedder()?;
            let index = build_index(embedder.as_ref(), &chunks)?;
            chunks.save(&cfg.output_dir.join("chunks.jsonl"))?;
            index.save(&cfg.output_dir.join("index.jsonl"))?;
            with_workers(cfg.workers(), || {
                Execution::Parallel.map(&suite, |case| {
                    let mut rec = RunRecord {
                        case_id: case.case_id.clone(),
                        modality: Modality::Unstructured,
                        model_id: model_id.to_string(),
                        question: case.question.clone(),
                        gold_answer: case.gold_answer.clone(),
                        final_answer: String::new(),
                        program_text: None,
                        raw_result: None,
                        failure: None,
                        attempts: None,
                        retrieved_chunk_ids: None,
                        reference_date: Some(cfg.execution.reference_date),
                    };
                    match answer_unstructured_question(
                        &case.question,
                        &index,
                        &chunks,
                        embedder.as_ref(),
                        &gateway,
                        &cfg.retrieval,
                    ) {
                        Ok(a) => {
                            rec.final_answer = a.answer;
                            rec.retrieved_chunk_ids = Some(a.retrieved.iter().map(|h| h.chunk_id).collect());
                        }
                        Err(e) => {
                            rec.failure = Some(Failure {
                                kind: FailureKind::Generation,
                                detail: e.to_string(),
                            })
                        }
                    }
                    rec
                })
            })
        }
    };
    let path = cfg.records_path(modality, model_id);
    crate::eval::save_records(&records, &path)?;
    log::info!(
        "{} of {} cases failed; records in {}",
        records.iter().filter(|r| r.failure.is_some()).count(),
        records.len(),
        path.display()
    );
    Ok(RunOutcome { path, records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub report: EvalReport,
    pub json_path: PathBuf,
    pub text_path: PathBuf,
    pub tsv_path: PathBuf,
}

/// Scores record files and writes `report.json`, `report.txt` and
/// `report.tsv` to the output directory.
pub fn cmd_eval(
    cfg: &RunConfig,
    record_files: &[PathBuf],
    annotations: Option<&Path>,
) -> Result<EvalOutcome, PipelineError> {
    let mut records = Vec::new();
    for f in record_files {
        records.extend(load_records(f)?);
    }
    let mut suite = Vec::new();
    for m in [Modality::Structured, Modality::Unstructured] {
        let p = cfg.suite_path(m);
        if p.exists() {
            suite.extend(load_suite(&p)?);
        }
    }
    if !suite.is_empty() {
        for r in &records {
            if !suite.iter().any(|c| c.case_id == r.case_id && c.modality == r.modality) {
                return Err(PipelineError::Eval(EvalError::Format(format!(
                    "record for case {:?} ({}) has no matching test case",
                    r.case_id,
                    r.modality.as_str()
                ))));
            }
        }
    }
    let annotations = match annotations {
        Some(p) => ingest_annotations(p, &suite)?,
        None => Vec::new(),
    };
    let report = with_workers(cfg.workers(), || {
        aggregate_report_with(&records, &annotations, cfg.eval.match_mode, Execution::Parallel)
    })?;
    let json_path = cfg.output_dir.join("report.json");
    let text_path = cfg.output_dir.join("report.txt");
    let tsv_path = cfg.output_dir.join("report.tsv");
    write_atomic(&json_path, report.to_json().as_bytes()).map_err(io_err(&json_path))?;
    write_atomic(&text_path, report.to_text().as_bytes()).map_err(io_err(&text_path))?;
    write_atomic(&tsv_path, report.to_tsv().as_bytes()).map_err(io_err(&tsv_path))?;
    Ok(EvalOutcome {
        report,
        json_path,
        text_path,
        tsv_path,
    })
}

/// Answers one structured question against the ingested table.
pub fn cmd_query(cfg: &RunConfig, question: &str, model_id: &str) -> Result<AgentAnswer, PipelineError> {
    cfg.endpoint(model_id)?;
    let table = load_cohort(cfg)?;
    let journal = Journal::to_file(&cfg.journal_path()).map_err(io_err(&cfg.journal_path()))?;
    let gateway = cfg.gateway(model_id, &journal)?;
    let agent = StructuredAgent::new(table.schema(), cfg.agent).map_err(|e| PipelineError::Usage(e.to_string()))?;
    Ok(agent.answer(question, &table, &cfg.execution, &gateway))
}

/// Config written next to generated fixtures: two offline stub endpoints,
/// one replaying gold programs and one echoing its prompt.
pub const DEMO_CONFIG: &str = r#"seed = 42
output_dir = "out"

[data]
patients = "PATIENTS.csv"
prescriptions = "PRESCRIPTIONS.csv"
diagnoses = "DIAGNOSES_ICD.csv"
d_icd = "D_ICD_DIAGNOSES.csv"
note = "clinical_note.txt"

[cohort]
n_patients = 101
seed = 42
dob_start = "1930-01-01"
dob_end = "2000-12-31"

[execution]
reference_date = "2020-01-01"

[chunking]
chunk_size = 400
overlap = 50

[retrieval]
top_k = 4

[testgen]
structured_cases = 30
segments = 50

[[endpoint]]
endpoint_id = "stub-gold"
kind = "scripted_stub"
script = "stub_gold.jsonl"

[[endpoint]]
endpoint_id = "stub-echo"
kind = "scripted_stub"
script = "stub_echo.jsonl"

# A hosted model speaking the chat-completions wire format:
# [[endpoint]]
# endpoint_id = "gpt-4o-mini"
# kind = "http_chat"
# base_url = "https://api.openai.com/v1/chat/completions"
# credential_env = "OPENAI_API_KEY"
# budget = 200000
"#;

/// Stub rules answering each structured question with its gold program.
pub fn gold_stub_rules(suite: &[TestCase]) -> Vec<crate::llm::StubRule> {
    suite
        .iter()
        .filter_map(|c| {
            let program = c.gold_program_text.as_ref()?;
            Some(crate::llm::StubRule::exact(c.question.clone(), program.clone()))
        })
        .collect()
}

pub fn write_stub_script(rules: &[crate::llm::StubRule], path: &Path) -> Result<(), PipelineError> {
    let mut out = String::new();
    for r in rules {
        out.push_str(&r.to_json_line());
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}
