//! Question → query program → result → phrased answer.

use serde::{Deserialize, Serialize, Serializer};

use crate::llm::{ChatMessage, Gateway, GatewayError};
use crate::query::{
    execute_program, parse_program, validate_program, ExecutionContext, QueryResult, ValidatedProgram,
    GRAMMAR_SUMMARY,
};
use crate::table::{Schema, Table};

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("cannot build a system prompt for an empty schema")]
    EmptySchema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepairPolicy {
    /// Extra generation rounds after a parse or validation failure.
    pub max_repairs: u32,
}

impl Default for RepairPolicy {
    fn default() -> Self {
        Self { max_repairs: 1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Generation,
    Parse,
    Validation,
    Execution,
    Postprocess,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Failure {
    pub kind: FailureKind,
    pub detail: String,
}

/// Trace of one structured question. Exactly one of `raw_result` and
/// `failure` is set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgentAnswer {
    pub question: String,
    /// Program text extracted from the last generation reply.
    pub program_text: String,
    #[serde(serialize_with = "ser_program")]
    pub program: Option<ValidatedProgram>,
    #[serde(serialize_with = "ser_result")]
    pub raw_result: Option<QueryResult>,
    pub final_answer: String,
    pub failure: Option<Failure>,
    pub attempts: u32,
}

fn ser_program<S: Serializer>(p: &Option<ValidatedProgram>, s: S) -> Result<S::Ok, S::Error> {
    match p {
        Some(p) => s.serialize_some(&p.program().to_string()),
        None => s.serialize_none(),
    }
}

fn ser_result<S: Serializer>(r: &Option<QueryResult>, s: S) -> Result<S::Ok, S::Error> {
    match r {
        Some(r) => s.serialize_some(&r.render()),
        None => s.serialize_none(),
    }
}

impl AgentAnswer {
    pub fn is_success(&self) -> bool {
        self.failure.is_none()
    }
}

/// The system prompt shared by every model for a given schema.
pub fn build_system_prompt(schema: &Schema, grammar: &str) -> Result<String, AgentError> {
    if schema.is_empty() {
        return Err(AgentError::EmptySchema);
    }
    let mut out = String::from(
        "You translate questions about a patient table into programs in a small query language.\n\n\
         Table columns (name: type):\n",
    );
    for c in schema.columns() {
        out.push_str(&format!("- {}: {}\n", c.name, c.kind.as_str()));
    }
    out.push_str("\nQuery language:\n");
    out.push_str(grammar);
    out.push_str(
        "\n\nReply with a program only: no explanation, no prose, no code other than the program. \
         Quote column names containing spaces or symbols with backticks.",
    );
    Ok(out)
}

pub const PHRASING_SYSTEM_PROMPT: &str =
    "You turn query results into a short, direct answer to the user's question. Do not add information.";

pub fn phrasing_prompt(question: &str, rendered_result: &str) -> String {
    format!("Question: {question}\nQuery result:\n{rendered_result}\n\nAnswer the question directly using the result.")
}

pub fn repair_prompt(error: &str) -> String {
    format!("The program was rejected: {error}\nReply with a corrected program only.")
}

/// The first fenced code block if there is one, else the trimmed reply.
pub fn extract_program(reply: &str) -> String {
    if let Some(open) = reply.find("```") {
        let after = &reply[open + 3..];
        // Skip an info string such as ```text
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let info = &after[..body_start];
        let body = if info.trim().contains(char::is_whitespace) || info.contains("```") {
            after
        } else {
            &after[body_start..]
        };
        if let Some(close) = body.find("```") {
            return body[..close].trim().to_string();
        }
    }
    reply.trim().to_string()
}

/// Holds the system prompt for one table and answers questions against it.
#[derive(Debug, Clone)]
pub struct StructuredAgent {
    system_prompt: String,
    policy: RepairPolicy,
}

impl StructuredAgent {
    pub fn new(schema: &Schema, policy: RepairPolicy) -> Result<Self, AgentError> {
        Ok(Self {
            system_prompt: build_system_prompt(schema, GRAMMAR_SUMMARY)?,
            policy,
        })
    }

    pub fn system_prompt(&self) -> &str {
        &self.system_prompt
    }

    pub fn answer(&self, question: &str, table: &Table, ctx: &ExecutionContext, gateway: &Gateway) -> AgentAnswer {
        let mut messages = vec![ChatMessage::system(&self.system_prompt), ChatMessage::user(question)];
        let mut answer = AgentAnswer {
            question: question.to_string(),
            program_text: String::new(),
            program: None,
            raw_result: None,
            final_answer: String::new(),
            failure: None,
            attempts: 0,
        };
        let fail = |mut a: AgentAnswer, kind, detail: String| {
            a.failure = Some(Failure { kind, detail });
            a
        };

        let validated = loop {
            answer.attempts += 1;
            let reply = match gateway.complete(&gateway.request(messages.clone())) {
                Ok(r) => r.content,
                Err(e) => return fail(answer, FailureKind::Generation, e.to_string()),
            };
            answer.program_text = extract_program(&reply);
            let (kind, detail) = match parse_program(&answer.program_text) {
                Err(e) => (FailureKind::Parse, e.to_string()),
                Ok(program) => match validate_program(&program, table.schema()) {
                    Ok(v) => break v,
                    Err(e) => (FailureKind::Validation, e.to_string()),
                },
            };
            if answer.attempts > self.policy.max_repairs {
                return fail(answer, kind, detail);
            }
            let echoed = if reply.trim().is_empty() { "(empty reply)".to_string() } else { reply };
            messages.push(ChatMessage::assistant(echoed));
            messages.push(ChatMessage::user(repair_prompt(&detail)));
        };

        let result = match execute_program(&validated, table, ctx) {
            Ok(r) => r,
            Err(e) => {
                answer.program = Some(validated);
                return fail(answer, FailureKind::Execution, e.to_string());
            }
        };
        answer.program = Some(validated);
        let rendered = result.render();
        let phrasing = vec![
            ChatMessage::system(PHRASING_SYSTEM_PROMPT),
            ChatMessage::user(phrasing_prompt(question, &rendered)),
        ];
        match gateway.complete(&gateway.request(phrasing)) {
            Ok(r) => {
                answer.final_answer = r.content;
                answer.raw_result = Some(result);
                answer
            }
            Err(GatewayError::NoScriptMatch { .. }) if gateway.is_stub() => {
                answer.final_answer = rendered;
                answer.raw_result = Some(result);
                answer
            }
            Err(e) => fail(answer, FailureKind::Postprocess, e.to_string()),
        }
    }
}

/// One-shot form of [`StructuredAgent::answer`].
pub fn answer_structured_question(
    question: &str,
    table: &Table,
    ctx: &ExecutionContext,
    gateway: &Gateway,
    policy: RepairPolicy,
) -> Result<AgentAnswer, AgentError> {
    Ok(StructuredAgent::new(table.schema(), policy)?.answer(question, table, ctx, gateway))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Journal, ScriptedStub, StubRule};
    use crate::table::{ColumnKind, Value};
    use chrono::NaiveDate;

    fn table() -> Table {
        let schema = Schema::from_pairs([
            ("SUBJECT_ID", ColumnKind::Integer),
            ("GENDER", ColumnKind::String),
            ("DOB_Demo", ColumnKind::Date),
        ])
        .unwrap();
        let d = |y, m, dd| Value::Date(NaiveDate::from_ymd_opt(y, m, dd).unwrap());
        Table::new(
            schema,
            vec![
                vec![Value::Int(1), Value::Str("F".into()), d(1950, 1, 1)],
                vec![Value::Int(2), Value::Str("M".into()), d(1960, 6, 1)],
                vec![Value::Int(3), Value::Str("F".into()), d(1970, 1, 2)],
            ],
        )
        .unwrap()
    }

    fn gateway(rules: Vec<StubRule>) -> Gateway {
        Gateway::from_stub("stub", ScriptedStub::new(rules), Journal::in_memory())
    }

    #[test]
    fn prompt_lists_each_column_once() {
        let t = table();
        let p = build_system_prompt(t.schema(), GRAMMAR_SUMMARY).unwrap();
        for name in ["SUBJECT_ID", "GENDER", "DOB_Demo"] {
            assert_eq!(p.matches(&format!("- {name}:")).count(), 1);
        }
        assert_eq!(p, build_system_prompt(t.schema(), GRAMMAR_SUMMARY).unwrap());
        assert!(matches!(
            build_system_prompt(&Schema::default(), GRAMMAR_SUMMARY),
            Err(AgentError::EmptySchema)
        ));
    }

    #[test]
    fn extraction() {
        assert_eq!(extract_program("  LIMIT 1 \n"), "LIMIT 1");
        assert_eq!(extract_program("Here:\n```\nLIMIT 2\n```\nthanks"), "LIMIT 2");
        assert_eq!(extract_program("```text\nLIMIT 3\n```"), "LIMIT 3");
        assert_eq!(extract_program("```LIMIT 4```"), "LIMIT 4");
    }

    #[test]
    fn median_age_end_to_end() {
        let program = "DERIVE AGE = YEARS_BETWEEN(DOB_Demo, @ref) | AGGREGATE MEDIAN(AGE)";
        let gw = gateway(vec![
            StubRule::exact("What is the median age?", format!("```\n{program}\n```")),
            StubRule::exact(phrasing_prompt("What is the median age?", "59"), "The median age is 59."),
        ]);
        let a = answer_structured_question("What is the median age?", &table(), &ExecutionContext::default(), &gw, RepairPolicy::default()).unwrap();
        assert_eq!(a.raw_result, Some(QueryResult::Scalar(Value::Float(59.0))));
        assert_eq!(a.final_answer, "The median age is 59.");
        assert_eq!(a.attempts, 1);
        assert!(a.failure.is_none());
    }

    #[test]
    fn phrasing_falls_back_to_rendering() {
        let gw = gateway(vec![StubRule::exact("How many?", "AGGREGATE COUNT(*)")]);
        let a = answer_structured_question("How many?", &table(), &ExecutionContext::default(), &gw, RepairPolicy::default()).unwrap();
        assert_eq!(a.final_answer, "3");
    }

    #[test]
    fn validation_failure_after_repair() {
        let gw = gateway(vec![StubRule::any("FILTER NOPE == 1")]);
        let a = answer_structured_question("q", &table(), &ExecutionContext::default(), &gw, RepairPolicy { max_repairs: 1 }).unwrap();
        assert_eq!(a.failure.as_ref().unwrap().kind, FailureKind::Validation);
        assert_eq!(a.attempts, 2);
        assert!(a.raw_result.is_none());
    }

    #[test]
    fn prose_is_a_parse_failure() {
        let gw = gateway(vec![StubRule::any("Sure! Here is the answer you need.")]);
        let a = answer_structured_question("q", &table(), &ExecutionContext::default(), &gw, RepairPolicy { max_repairs: 0 }).unwrap();
        assert_eq!(a.failure.unwrap().kind, FailureKind::Parse);
        assert_eq!(a.attempts, 1);
    }

    #[test]
    fn repair_round_recovers() {
        let gw = gateway(vec![StubRule::ordinal(1, "FILTER NOPE == 1"), StubRule::ordinal(2, "AGGREGATE COUNT(*)")]);
        let a = answer_structured_question("q", &table(), &ExecutionContext::default(), &gw, RepairPolicy::default()).unwrap();
        assert!(a.is_success());
        assert_eq!(a.attempts, 2);
        let second = &gw.journal().entries()[1];
        assert_eq!(second.messages.len(), 4);
        assert!(second.messages[3].content.starts_with("The program was rejected"));
    }

    #[test]
    fn gateway_error_is_generation_failure() {
        let gw = gateway(vec![]);
        let a = answer_structured_question("q", &table(), &ExecutionContext::default(), &gw, RepairPolicy::default()).unwrap();
        assert_eq!(a.failure.unwrap().kind, FailureKind::Generation);
    }
}
