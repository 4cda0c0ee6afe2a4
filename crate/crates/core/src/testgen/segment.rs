use serde::{Deserialize, Serialize};

use super::{Modality, SkippedCase, TestCase, TestgenError};
use crate::llm::{ChatMessage, Gateway, GatewayError};
use crate::par::Execution;
use crate::rag::{span_text, token_spans};

/// A contiguous token range of the source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: usize,
    pub token_start: usize,
    pub token_end: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    pub segments: Vec<Segment>,
    /// Set when the model's cut points were rejected and the equal split was used.
    pub fallback_reason: Option<String>,
}

/// Builds segments starting at token 0 and at each of `cuts`.
pub fn segments_from_cuts(doc: &str, cuts: &[usize]) -> Vec<Segment> {
    let spans = token_spans(doc);
    let mut bounds = vec![0];
    bounds.extend_from_slice(cuts);
    bounds.push(spans.len());
    bounds
        .windows(2)
        .enumerate()
        .map(|(i, w)| Segment {
            segment_id: i,
            token_start: w[0],
            token_end: w[1],
            text: span_text(doc, &spans, w[0], w[1]).to_string(),
        })
        .collect()
}

/// `n` segments of equal token count, the remainder spread one token each
/// over the first segments.
pub fn equal_segments(doc: &str, n: usize) -> Result<Vec<Segment>, TestgenError> {
    let len = token_spans(doc).len();
    if n == 0 || len < n {
        return Err(TestgenError::DocumentTooShort { tokens: len, segments: n });
    }
    let (base, extra) = (len / n, len % n);
    let mut cuts = Vec::with_capacity(n - 1);
    let mut at = 0;
    for i in 0..n - 1 {
        at += base + usize::from(i < extra);
        cuts.push(at);
    }
    Ok(segments_from_cuts(doc, &cuts))
}

pub const SEGMENTER_SYSTEM_PROMPT: &str =
    "You split clinical documents into semantically coherent segments. Reply with a JSON array of integers only.";

fn segmenter_prompt(tokens: &[&str], n: usize) -> String {
    let numbered: Vec<String> = tokens.iter().enumerate().map(|(i, t)| format!("[{i}]{t}")).collect();
    format!(
        "The document below has {} tokens, each prefixed by its index.\n\
         Choose {} cut points so that the document splits into {n} semantically coherent segments. \
         A cut point is the index of the first token of a new segment. \
         Reply with a JSON array of {} strictly increasing integers between 1 and {}.\n\n{}",
        tokens.len(),
        n - 1,
        n - 1,
        tokens.len() - 1,
        numbered.join(" ")
    )
}

fn parse_cuts(reply: &str, n: usize, len: usize) -> Result<Vec<usize>, String> {
    let (Some(a), Some(b)) = (reply.find('['), reply.rfind(']')) else {
        return Err("reply has no JSON array".into());
    };
    if b < a {
        return Err("reply has no JSON array".into());
    }
    let cuts: Vec<usize> = serde_json::from_str(&reply[a..=b]).map_err(|e| format!("cut points: {e}"))?;
    if cuts.len() != n - 1 {
        return Err(format!("expected {} cut points, got {}", n - 1, cuts.len()));
    }
    if cuts.first().is_some_and(|&c| c == 0) || cuts.last().is_some_and(|&c| c >= len) {
        return Err("cut point out of bounds".into());
    }
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err("cut points are not strictly increasing".into());
    }
    Ok(cuts)
}

/// Splits `doc` into `n` segments. With a model, its cut points are used when
/// valid; otherwise (or without a model) the document is split equally,
/// unless `allow_fallback` is false.
pub fn segment_document(
    doc: &str,
    n: usize,
    segmenter: Option<&Gateway>,
    allow_fallback: bool,
) -> Result<Segmentation, TestgenError> {
    let spans = token_spans(doc);
    if n == 0 || spans.len() < n {
        return Err(TestgenError::DocumentTooShort {
            tokens: spans.len(),
            segments: n,
        });
    }
    let Some(gw) = segmenter else {
        return Ok(Segmentation {
            segments: equal_segments(doc, n)?,
            fallback_reason: None,
        });
    };
    let tokens: Vec<&str> = spans.iter().map(|&(a, b)| &doc[a..b]).collect();
    let messages = vec![
        ChatMessage::system(SEGMENTER_SYSTEM_PROMPT),
        ChatMessage::user(segmenter_prompt(&tokens, n)),
    ];
    let request = gw.request(messages).with_max_output_tokens(8 * n + 16);
    let outcome = gw
        .complete(&request)
        .map_err(|e| e.to_string())
        .and_then(|r| parse_cuts(&r.content, n, spans.len()));
    match outcome {
        Ok(cuts) => Ok(Segmentation {
            segments: segments_from_cuts(doc, &cuts),
            fallback_reason: None,
        }),
        Err(reason) if allow_fallback => {
            log::warn!("model segmentation rejected ({reason}); using equal split");
            Ok(Segmentation {
                segments: equal_segments(doc, n)?,
                fallback_reason: Some(reason),
            })
        }
        Err(reason) => Err(TestgenError::Segmentation(reason)),
    }
}

/// Hand-written questions for segments containing a known sentence:
/// `(sentence, question)`. The sentence is the gold answer.
pub const CURATED_QUESTIONS: &[(&str, &str)] = &[(
    "Physical exam prior to surgery was not obtained since the patient was intubated and sedated.",
    "Why was the pre-surgical physical exam not obtained?",
)];

pub const QA_SYSTEM_PROMPT: &str = "You write evaluation questions for clinical notes. \
Reply with a JSON object of the form {\"question\": \"...\", \"answer\": \"...\"} and nothing else.";

fn qa_prompt(segment: &str) -> String {
    format!(
        "Segment:\n{segment}\n\nWrite one question that can be answered solely from this segment, \
         together with its answer."
    )
}

const QA_RETRY_PROMPT: &str = "Reply with only the JSON object {\"question\": \"...\", \"answer\": \"...\"}.";

#[derive(Deserialize)]
struct QaPair {
    question: String,
    answer: String,
}

fn parse_qa(reply: &str) -> Option<(String, String)> {
    let (a, b) = (reply.find('{')?, reply.rfind('}')?);
    if b < a {
        return None;
    }
    let qa: QaPair = serde_json::from_str(&reply[a..=b]).ok()?;
    let (q, ans) = (qa.question.trim(), qa.answer.trim());
    (!q.is_empty() && !ans.is_empty()).then(|| (q.to_string(), ans.to_string()))
}

fn template_pair(segment: &Segment) -> (String, String) {
    for (sentence, question) in CURATED_QUESTIONS {
        if segment.text.contains(sentence) {
            return (question.to_string(), sentence.to_string());
        }
    }
    let body = segment.text.trim_end_matches(['.', '?', '!', ' ']);
    (format!("According to the note, {body}?"), segment.text.clone())
}

enum QaOutcome {
    Pair(String, String),
    Skip(String),
}

fn model_pair(gw: &Gateway, segment: &Segment) -> QaOutcome {
    let mut messages = vec![ChatMessage::system(QA_SYSTEM_PROMPT), ChatMessage::user(qa_prompt(&segment.text))];
    for attempt in 0..2 {
        match gw.complete(&gw.request(messages.clone())) {
            Ok(r) => {
                if let Some((q, a)) = parse_qa(&r.content) {
                    return QaOutcome::Pair(q, a);
                }
                if attempt == 0 {
                    messages.push(ChatMessage::assistant(r.content));
                    messages.push(ChatMessage::user(QA_RETRY_PROMPT));
                }
            }
            Err(GatewayError::NoScriptMatch { .. }) if gw.is_stub() => {
                let (q, a) = template_pair(segment);
                return QaOutcome::Pair(q, a);
            }
            Err(e) => return QaOutcome::Skip(e.to_string()),
        }
    }
    QaOutcome::Skip("reply is not a question/answer JSON object after one retry".into())
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnstructuredSuite {
    pub cases: Vec<TestCase>,
    pub skipped: Vec<SkippedCase>,
}

/// One question per segment, case ids `U001`… following segment order.
/// Without a generator the template form is used; a scripted stub with no
/// matching rule falls back to it per segment.
pub fn generate_unstructured_suite(
    segments: &[Segment],
    generator: Option<&Gateway>,
    execution: Execution,
) -> UnstructuredSuite {
    let outcomes = execution.map(segments, |s| match generator {
        None => {
            let (q, a) = template_pair(s);
            QaOutcome::Pair(q, a)
        }
        Some(gw) => model_pair(gw, s),
    });
    let mut suite = UnstructuredSuite::default();
    for (s, outcome) in segments.iter().zip(outcomes) {
        match outcome {
            QaOutcome::Pair(question, gold_answer) => suite.cases.push(TestCase {
                case_id: format!("U{:03}", s.segment_id + 1),
                modality: Modality::Unstructured,
                question,
                gold_answer,
                complexity: None,
                source_segment_id: Some(s.segment_id),
                gold_program_text: None,
            }),
            QaOutcome::Skip(reason) => suite.skipped.push(SkippedCase {
                source: format!("segment {}", s.segment_id),
                reason,
            }),
        }
    }
    suite
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Journal, ScriptedStub, StubRule};
    use crate::rag::tokenize;

    fn words(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn equal_split() {
        let segs = equal_segments(&words(500), 50).unwrap();
        assert_eq!(segs.len(), 50);
        assert!(segs.iter().all(|s| s.token_end - s.token_start == 10));
        let segs = equal_segments(&words(53), 5).unwrap();
        let sizes: Vec<usize> = segs.iter().map(|s| s.token_end - s.token_start).collect();
        assert_eq!(sizes, [11, 11, 11, 10, 10]);
        assert!(equal_segments(&words(3), 5).is_err());
    }

    #[test]
    fn partition_round_trips_through_tokenize() {
        let doc = "Pt was intubated, sedated. (BP 120/80) \"stable\"... ok.";
        let segs = equal_segments(doc, 4).unwrap();
        let joined = segs.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join(" ");
        assert_eq!(tokenize(&joined), tokenize(doc));
    }

    fn stub(rules: Vec<StubRule>) -> Gateway {
        Gateway::from_stub("gen", ScriptedStub::new(rules), Journal::in_memory())
    }

    #[test]
    fn model_cut_points_and_fallback() {
        let doc = words(20);
        let good = stub(vec![StubRule::any("[5, 12]")]);
        let s = segment_document(&doc, 3, Some(&good), true).unwrap();
        let bounds: Vec<(usize, usize)> = s.segments.iter().map(|s| (s.token_start, s.token_end)).collect();
        assert_eq!(bounds, [(0, 5), (5, 12), (12, 20)]);
        assert!(s.fallback_reason.is_none());

        let bad = stub(vec![StubRule::any("[12, 5]")]);
        let s = segment_document(&doc, 3, Some(&bad), true).unwrap();
        assert!(s.fallback_reason.is_some());
        assert_eq!(s.segments, equal_segments(&doc, 3).unwrap());
        assert!(segment_document(&doc, 3, Some(&bad), false).is_err());
    }

    #[test]
    fn curated_and_template_questions() {
        let doc = "Physical exam prior to surgery was not obtained since the patient was intubated and sedated. \
                   Vitals were stable.";
        let segs = segments_from_cuts(doc, &[16]);
        let suite = generate_unstructured_suite(&segs, None, Execution::Sequential);
        assert_eq!(suite.cases[0].question, "Why was the pre-surgical physical exam not obtained?");
        assert_eq!(suite.cases[1].question, "According to the note, Vitals were stable?");
        assert_eq!(suite.cases[1].gold_answer, "Vitals were stable.");
        assert_eq!(suite.cases[1].case_id, "U002");
    }

    #[test]
    fn model_pairs_retry_then_skip() {
        let segs = segments_from_cuts(&words(6), &[3]);
        let gw = stub(vec![
            StubRule::exact(qa_prompt("w0 w1 w2"), r#"{"question": "Q0?", "answer": "A0"}"#),
            StubRule::exact(qa_prompt("w3 w4 w5"), "not json"),
            StubRule::exact(QA_RETRY_PROMPT, "still not json"),
        ]);
        let suite = generate_unstructured_suite(&segs, Some(&gw), Execution::Sequential);
        assert_eq!(suite.cases.len(), 1);
        assert_eq!((suite.cases[0].question.as_str(), suite.cases[0].gold_answer.as_str()), ("Q0?", "A0"));
        assert_eq!(suite.skipped.len(), 1);
        assert_eq!(gw.journal().entries().len(), 3);
    }
}
