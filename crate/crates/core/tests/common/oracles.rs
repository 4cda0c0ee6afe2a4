//! Brute-force references for joins, chunking, search and ROUGE.

use std::collections::BTreeMap;

use ehrbench::rag::{tokenize, Hit};
use ehrbench::rng::SplitMix64;
use ehrbench::table::{ColumnKind, Schema, Table, Value};

pub const ROUGE_TOL: f64 = 1e-9;

/// Four small raw tables shaped like the join inputs. Some patients match
/// nothing; some keys are null or dangling.
pub fn random_join_inputs(rng: &mut SplitMix64) -> [Table; 4] {
    let int = |v: i64| Value::Int(v);
    let s = |v: &str| Value::Str(v.to_string());
    let n_pat = 1 + rng.below(8) as usize;
    let mut ids: Vec<i64> = Vec::new();
    while ids.len() < n_pat {
        let id = 100 + rng.below(20) as i64;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    let patients = ids
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let key = if rng.below(15) == 0 { Value::Null } else { int(id) };
            vec![int(i as i64), key, s(["F", "M"][rng.below(2) as usize])]
        })
        .collect();
    let key = |rng: &mut SplitMix64| match rng.below(10) {
        0 => Value::Null,
        1 => int(900),
        _ => int(ids[rng.below(ids.len() as u64) as usize]),
    };
    let rx = (0..rng.below(12))
        .map(|i| vec![int(i as i64), key(rng), s(["Heparin", "Insulin", "Aspirin"][rng.below(3) as usize])])
        .collect();
    let codes = ["4019", "5849", "V4581", "0389", "7994"];
    let dx = (0..rng.below(12))
        .map(|i| {
            let code = if rng.below(8) == 0 { Value::Null } else { s(codes[rng.below(5) as usize]) };
            vec![int(i as i64), key(rng), int(1 + rng.below(3) as i64), code]
        })
        .collect();
    let d_icd = codes[..4]
        .iter()
        .enumerate()
        .filter(|_| rng.below(5) != 0)
        .map(|(i, c)| vec![int(i as i64), s(c), s(&format!("title {c}"))])
        .collect();
    let schema = |cols: &[(&str, ColumnKind)]| Schema::from_pairs(cols.iter().copied()).unwrap();
    use ColumnKind::*;
    [
        Table::new(schema(&[("ROW_ID", Integer), ("SUBJECT_ID", Integer), ("GENDER", String)]), patients).unwrap(),
        Table::new(schema(&[("ROW_ID", Integer), ("SUBJECT_ID", Integer), ("DRUG", String)]), rx).unwrap(),
        Table::new(
            schema(&[("ROW_ID", Integer), ("SUBJECT_ID", Integer), ("SEQ_NUM", Integer), ("ICD9_CODE", String)]),
            dx,
        )
        .unwrap(),
        Table::new(schema(&[("ROW_ID", Integer), ("ICD9_CODE", String), ("SHORT_TITLE", String)]), d_icd).unwrap(),
    ]
}

fn matching<'a>(table: &'a Table, column: &str, key: &Value) -> Vec<Option<&'a Vec<Value>>> {
    let i = table.schema().index_of(column).unwrap();
    let hits: Vec<Option<&Vec<Value>>> = if key.is_null() {
        Vec::new()
    } else {
        table.rows().iter().filter(|r| !r[i].is_null() && r[i] == *key).map(Some).collect()
    };
    if hits.is_empty() {
        vec![None]
    } else {
        hits
    }
}

fn without(row: Option<&Vec<Value>>, width: usize, skip: usize) -> Vec<Value> {
    match row {
        None => vec![Value::Null; width - 1],
        Some(r) => r.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, v)| v.clone()).collect(),
    }
}

/// Nested-loop left-join chain. Returns column names and rows.
pub fn nested_loop_join(p: &Table, rx: &Table, dx: &Table, d: &Table) -> (Vec<String>, Vec<Vec<Value>>) {
    let mut names: Vec<String> = p.schema().names().map(String::from).collect();
    for (t, key, label) in [(rx, "SUBJECT_ID", "PRESCRIPTIONS"), (dx, "SUBJECT_ID", "DIAGNOSES"), (d, "ICD9_CODE", "D_ICD")] {
        for n in t.schema().names().filter(|n| *n != key) {
            let name = if names.iter().any(|x| x == n) { format!("{n}_{label}") } else { n.to_string() };
            names.push(name);
        }
    }
    let sid = |t: &Table| t.schema().index_of("SUBJECT_ID").unwrap();
    let mut rows = Vec::new();
    for prow in p.rows() {
        let key = &prow[sid(p)];
        for r in matching(rx, "SUBJECT_ID", key) {
            for x in matching(dx, "SUBJECT_ID", key) {
                let code = x.map_or(Value::Null, |x| x[dx.schema().index_of("ICD9_CODE").unwrap()].clone());
                for e in matching(d, "ICD9_CODE", &code) {
                    let mut row = prow.clone();
                    row.extend(without(r, rx.num_columns(), sid(rx)));
                    row.extend(without(x, dx.num_columns(), sid(dx)));
                    row.extend(without(e, d.num_columns(), d.schema().index_of("ICD9_CODE").unwrap()));
                    rows.push(row);
                }
            }
        }
    }
    (names, rows)
}

/// Expected window starts: every multiple of the stride that begins inside
/// the document, stopping after the first window that reaches its end.
pub fn expected_window_starts(n_tokens: usize, size: usize, overlap: usize) -> Vec<usize> {
    let stride = size - overlap;
    let mut out = Vec::new();
    let mut k = 0;
    while k * stride < n_tokens {
        out.push(k * stride);
        if k * stride + size >= n_tokens {
            break;
        }
        k += 1;
    }
    out
}

/// Full scan: score every vector, sort by score then id, keep `k`.
pub fn linear_scan(vectors: &[(usize, Vec<f32>)], query: &[f32], k: usize) -> Vec<Hit> {
    let mut all: Vec<Hit> = vectors
        .iter()
        .map(|(id, v)| {
            let mut s = 0f32;
            for i in 0..v.len() {
                s += v[i] * query[i];
            }
            Hit { chunk_id: *id, score: s }
        })
        .collect();
    all.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap().then(a.chunk_id.cmp(&b.chunk_id)));
    all.truncate(k);
    all
}

fn lower(s: &str) -> Vec<String> {
    tokenize(s).into_iter().map(|t| t.to_lowercase()).collect()
}

pub fn prf(matches: usize, cand: usize, reference: usize) -> (f64, f64, f64) {
    if matches == 0 {
        return (0.0, 0.0, 0.0);
    }
    let p = matches as f64 / cand as f64;
    let r = matches as f64 / reference as f64;
    (p, r, 2.0 * p * r / (p + r))
}

/// ROUGE-N by listing every n-gram and counting clipped matches.
pub fn brute_rouge_n(candidate: &str, reference: &str, n: usize) -> (f64, f64, f64) {
    let grams = |t: &[String]| -> Vec<Vec<String>> {
        if t.len() < n {
            return Vec::new();
        }
        (0..=t.len() - n).map(|i| t[i..i + n].to_vec()).collect()
    };
    let (c, r) = (grams(&lower(candidate)), grams(&lower(reference)));
    let mut used = vec![false; r.len()];
    let mut matches = 0;
    for g in &c {
        if let Some(j) = (0..r.len()).find(|&j| !used[j] && r[j] == *g) {
            used[j] = true;
            matches += 1;
        }
    }
    prf(matches, c.len(), r.len())
}

/// Longest common subsequence by trying every subsequence of `a`.
pub fn brute_lcs(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16, "exhaustive search is exponential");
    let mut best = 0;
    for mask in 0u32..(1 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let mut j = 0;
        let mut ok = true;
        for (i, x) in a.iter().enumerate() {
            if mask & (1 << i) == 0 {
                continue;
            }
            while j < b.len() && b[j] != *x {
                j += 1;
            }
            if j == b.len() {
                ok = false;
                break;
            }
            j += 1;
        }
        if ok {
            best = len;
        }
    }
    best
}

pub fn brute_rouge_l(candidate: &str, reference: &str) -> (f64, f64, f64) {
    let (c, r) = (lower(candidate), lower(reference));
    prf(brute_lcs(&c, &r), c.len(), r.len())
}

/// Cosine of lower-cased token bags, ignoring punctuation-only tokens and
/// weighting a count n as 1 + ln n.
pub fn bag_cosine(a: &str, b: &str) -> f64 {
    let counts = |s: &str| {
        let mut m: BTreeMap<String, f64> = BTreeMap::new();
        for t in lower(s) {
            if !t.chars().all(|c| c.is_ascii_punctuation()) {
                *m.entry(t).or_default() += 1.0;
            }
        }
        m.values_mut().for_each(|v| *v = 1.0 + v.ln());
        m
    };
    let (x, y) = (counts(a), counts(b));
    let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).copied().unwrap_or(0.0)).sum();
    let norm = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    dot / (norm(&x) * norm(&y))
}

pub fn random_words(rng: &mut SplitMix64, vocab: &[&str], max_len: usize) -> String {
    let n = rng.below(max_len as u64 + 1) as usize;
    (0..n).map(|_| vocab[rng.below(vocab.len() as u64) as usize]).collect::<Vec<_>>().join(" ")
}
