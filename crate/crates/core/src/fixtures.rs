//! Synthetic MIMIC-shaped tables and a clinical note for offline runs.
//!
//! Column names and kinds follow the public MIMIC-III table layouts; every
//! value is generated from a seed and describes no real person.

use std::fs;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::rng::SplitMix64;
use crate::table::{write_csv, ColumnKind, Schema, Table, TableError, Value};

/// The de-identified discharge-style note used for the unstructured suite.
pub const CLINICAL_NOTE: &str = include_str!("../data/clinical_note.txt");

pub const PATIENTS_FILE: &str = "PATIENTS.csv";
pub const PRESCRIPTIONS_FILE: &str = "PRESCRIPTIONS.csv";
pub const DIAGNOSES_FILE: &str = "DIAGNOSES_ICD.csv";
pub const D_ICD_FILE: &str = "D_ICD_DIAGNOSES.csv";
pub const NOTE_FILE: &str = "clinical_note.txt";

/// Columns kept after the raw 30-column join.
pub const KEPT_COLUMNS: [&str; 23] = [
    "SUBJECT_ID",
    "GENDER",
    "DOD",
    "EXPIRE_FLAG",
    "DOB_Demo",
    "HADM_ID",
    "ICUSTAY_ID",
    "STARTDATE",
    "ENDDATE",
    "DRUG_TYPE",
    "DRUG",
    "DRUG_NAME_POE",
    "DRUG_NAME_GENERIC",
    "FORMULARY_DRUG_CD",
    "PROD_STRENGTH",
    "DOSE_VAL_RX",
    "DOSE_UNIT_RX",
    "ROUTE",
    "HADM_ID_DIAGNOSES",
    "SEQ_NUM",
    "ICD9_CODE",
    "SHORT_TITLE",
    "LONG_TITLE",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub n_patients: usize,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        Self {
            n_patients: 500,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTables {
    pub patients: Table,
    pub prescriptions: Table,
    pub diagnoses: Table,
    pub d_icd: Table,
}

struct Drug {
    name: &'static str,
    poe: &'static str,
    generic: &'static str,
    formulary: &'static str,
    strength: &'static str,
    unit: &'static str,
    route: &'static str,
    doses: &'static [f64],
    gsn: &'static str,
    ndc: &'static str,
}

#[allow(clippy::too_many_arguments)]
const fn drug(
    name: &'static str,
    generic: &'static str,
    formulary: &'static str,
    strength: &'static str,
    unit: &'static str,
    route: &'static str,
    doses: &'static [f64],
    gsn: &'static str,
    ndc: &'static str,
) -> Drug {
    Drug {
        name,
        poe: name,
        generic,
        formulary,
        strength,
        unit,
        route,
        doses,
        gsn,
        ndc,
    }
}

const DRUGS: &[Drug] = &[
    drug("Heparin", "Heparin Sodium", "HEPA5I", "5000 Units / mL- 1mL Vial", "UNIT", "SC", &[5000.0], "006549", "63323026201"),
    drug("Metoprolol Tartrate", "Metoprolol Tartrate", "METO25", "25mg Tablet", "mg", "PO", &[12.5, 25.0, 50.0], "005132", "51079025520"),
    drug("Furosemide", "Furosemide", "FURO40I", "40mg/4mL Vial", "mg", "IV", &[20.0, 40.0], "008208", "00409610202"),
    drug("Insulin", "Insulin Human Regular", "INSULIN", "100 Units / mL - 10 mL Vial", "UNIT", "SC", &[0.0, 2.0, 4.0], "027214", "00002821501"),
    drug("Docusate Sodium", "Docusate Sodium", "DOCU100", "100mg Capsule", "mg", "PO", &[100.0], "003009", "00904224461"),
    drug("Acetaminophen", "Acetaminophen", "ACET325", "325mg Tablet", "mg", "PO/NG", &[325.0, 650.0], "004489", "00182844789"),
    drug("Potassium Chloride", "Potassium Chloride", "KCL20P", "20mEq Packet", "mEq", "PO", &[20.0, 40.0], "001275", "00067114010"),
    drug("Vancomycin", "Vancomycin HCl", "VANC1F", "1g Frozen Bag", "g", "IV", &[1.0, 1.25], "009327", "00338355248"),
    drug("Pantoprazole", "Pantoprazole Sodium", "PANT40", "40mg Tablet", "mg", "PO", &[40.0], "027462", "00008084181"),
    drug("Aspirin", "Aspirin", "ASA81", "81mg Tablet", "mg", "PO", &[81.0, 325.0], "004380", "63739043601"),
    drug("Morphine Sulfate", "Morphine Sulfate", "MORP2I", "2mg Syringe", "mg", "IV", &[2.0, 4.0], "004117", "00409189001"),
    drug("Lorazepam", "Lorazepam", "LORA1I", "2mg/mL Vial", "mg", "IV", &[0.5, 1.0], "003757", "00641604401"),
    drug("Senna", "Sennosides", "SENN187", "8.6 mg Tablet", "TAB", "PO", &[1.0, 2.0], "012934", "00904516561"),
    drug("Simvastatin", "Simvastatin", "SIMV20", "20mg Tablet", "mg", "PO", &[20.0, 40.0], "016578", "00006074031"),
    drug("Sodium Chloride 0.9%  Flush", "Sodium Chloride 0.9%", "NACLFLUSH", "10 mL Syringe", "mL", "IV", &[3.0, 10.0], "008472", "08290306547"),
];

/// (code, short title, long title).
const ICD9: &[(&str, &str, &str)] = &[
    ("4019", "Hypertension NOS", "Unspecified essential hypertension"),
    ("4280", "CHF NOS", "Congestive heart failure, unspecified"),
    ("42731", "Atrial fibrillation", "Atrial fibrillation"),
    ("41401", "Crnry athrscl natve vssl", "Coronary atherosclerosis of native coronary artery"),
    ("5849", "Acute kidney failure NOS", "Acute kidney failure, unspecified"),
    ("25000", "DMII wo cmp nt st uncntr", "Diabetes mellitus without mention of complication, type II or unspecified type, not stated as uncontrolled"),
    ("2724", "Hyperlipidemia NEC/NOS", "Other and unspecified hyperlipidemia"),
    ("51881", "Acute respiratry failure", "Acute respiratory failure"),
    ("5990", "Urin tract infection NOS", "Urinary tract infection, site not specified"),
    ("0389", "Septicemia NOS", "Unspecified septicemia"),
    ("V5861", "Long-term use anticoagul", "Long-term (current) use of anticoagulants"),
    ("2851", "Ac posthemorrhag anemia", "Acute posthemorrhagic anemia"),
    ("486", "Pneumonia, organism NOS", "Pneumonia, organism unspecified"),
    ("V4581", "Aortocoronary bypass", "Aortocoronary bypass status"),
    ("2449", "Hypothyroidism NOS", "Unspecified acquired hypothyroidism"),
];

/// Codes present in the dictionary but never diagnosed, and one diagnosed
/// code missing from the dictionary.
const ICD9_DICTIONARY_ONLY: &[(&str, &str, &str)] = &[
    ("E8788", "Surg proc NEC-abn react", "Other specified surgical operations and procedures causing abnormal patient reaction"),
    ("V1582", "History of tobacco use", "Personal history of tobacco use"),
];
const ICD9_UNLISTED: &str = "7994";

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid fixture date")
}

fn pick<'a, T>(rng: &mut SplitMix64, items: &'a [T]) -> &'a T {
    &items[rng.below(items.len() as u64) as usize]
}

fn days(rng: &mut SplitMix64, lo: i64, hi: i64) -> Duration {
    Duration::days(lo + rng.below((hi - lo + 1) as u64) as i64)
}

fn s(v: &str) -> Value {
    if v.is_empty() {
        Value::Null
    } else {
        Value::Str(v.to_string())
    }
}

fn schema(cols: &[(&str, ColumnKind)]) -> Schema {
    Schema::from_pairs(cols.iter().copied()).expect("fixture schema is valid")
}

pub fn generate_tables(cfg: &FixtureConfig) -> RawTables {
    use ColumnKind::*;
    let mut rng = SplitMix64::new(cfg.seed);
    let subject_ids: Vec<i64> = (0..cfg.n_patients as i64).map(|i| 10_006 + 3 * i).collect();

    let mut patients = Vec::with_capacity(cfg.n_patients);
    let mut admissions = Vec::with_capacity(cfg.n_patients);
    for (i, &sid) in subject_ids.iter().enumerate() {
        let dob = date(2040, 1, 1) + days(&mut rng, 0, 70 * 365);
        let admit = dob + days(&mut rng, 20 * 365, 89 * 365);
        let expired = rng.below(4) == 0;
        let dod = if expired {
            Value::Date(admit + days(&mut rng, 1, 900))
        } else {
            Value::Null
        };
        let gender = if rng.below(2) == 0 { "F" } else { "M" };
        patients.push(vec![
            Value::Int(i as i64 + 1),
            Value::Int(sid),
            s(gender),
            Value::Date(dob),
            dod,
            Value::Int(i64::from(expired)),
        ]);
        admissions.push((100_001 + 7 * i as i64, admit));
    }

    let mut prescriptions = Vec::new();
    for (i, &sid) in subject_ids.iter().enumerate() {
        let n = [0, 1, 2, 3, 4, 5, 6][rng.below(7) as usize] * usize::from(rng.below(5) != 0);
        let (hadm, admit) = admissions[i];
        let icustay = if rng.below(3) == 0 {
            Value::Null
        } else {
            Value::Int(200_001 + 5 * i as i64)
        };
        for _ in 0..n {
            let d = pick(&mut rng, DRUGS);
            let start = admit + days(&mut rng, 0, 10);
            let end = start + days(&mut rng, 0, 7);
            let drug_type = if d.formulary == "NACLFLUSH" { "BASE" } else { "MAIN" };
            let poe = if drug_type == "BASE" { "" } else { d.poe };
            prescriptions.push(vec![
                Value::Int(prescriptions.len() as i64 + 1),
                Value::Int(sid),
                Value::Int(hadm),
                icustay.clone(),
                Value::Date(start),
                Value::Date(end),
                s(drug_type),
                s(d.name),
                s(poe),
                s(d.generic),
                s(d.formulary),
                s(d.gsn),
                s(d.ndc),
                s(d.strength),
                Value::Float(*pick(&mut rng, d.doses)),
                s(d.unit),
                s(d.route),
            ]);
        }
    }

    let mut diagnoses = Vec::new();
    for (i, &sid) in subject_ids.iter().enumerate() {
        let n = if rng.below(7) == 0 { 0 } else { 1 + rng.below(4) as usize };
        let (hadm, _) = admissions[i];
        for seq in 1..=n {
            let code = if rng.below(40) == 0 {
                ICD9_UNLISTED
            } else {
                pick(&mut rng, ICD9).0
            };
            diagnoses.push(vec![
                Value::Int(diagnoses.len() as i64 + 1),
                Value::Int(sid),
                Value::Int(hadm),
                Value::Int(seq as i64),
                s(code),
            ]);
        }
    }

    let d_icd = ICD9
        .iter()
        .chain(ICD9_DICTIONARY_ONLY)
        .enumerate()
        .map(|(i, (code, short, long))| vec![Value::Int(i as i64 + 1), s(code), s(short), s(long)])
        .collect();

    let build = |cols: &[(&str, ColumnKind)], rows| Table::new(schema(cols), rows).expect("fixture rows match schema");
    RawTables {
        patients: build(
            &[
                ("ROW_ID", Integer),
                ("SUBJECT_ID", Integer),
                ("GENDER", String),
                ("DOB", Date),
                ("DOD", Date),
                ("EXPIRE_FLAG", Integer),
            ],
            patients,
        ),
        prescriptions: build(
            &[
                ("ROW_ID", Integer),
                ("SUBJECT_ID", Integer),
                ("HADM_ID", Integer),
                ("ICUSTAY_ID", Integer),
                ("STARTDATE", Date),
                ("ENDDATE", Date),
                ("DRUG_TYPE", String),
                ("DRUG", String),
                ("DRUG_NAME_POE", String),
                ("DRUG_NAME_GENERIC", String),
                ("FORMULARY_DRUG_CD", String),
                ("GSN", String),
                ("NDC", String),
                ("PROD_STRENGTH", String),
                ("DOSE_VAL_RX", Float),
                ("DOSE_UNIT_RX", String),
                ("ROUTE", String),
            ],
            prescriptions,
        ),
        diagnoses: build(
            &[
                ("ROW_ID", Integer),
                ("SUBJECT_ID", Integer),
                ("HADM_ID", Integer),
                ("SEQ_NUM", Integer),
                ("ICD9_CODE", String),
            ],
            diagnoses,
        ),
        d_icd: build(
            &[
                ("ROW_ID", Integer),
                ("ICD9_CODE", String),
                ("SHORT_TITLE", String),
                ("LONG_TITLE", String),
            ],
            d_icd,
        ),
    }
}

/// Writes the four CSV tables and the note into `dir`.
pub fn write_fixtures(dir: &Path, cfg: &FixtureConfig) -> Result<(), TableError> {
    fs::create_dir_all(dir).map_err(|source| TableError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let t = generate_tables(cfg);
    write_csv(&t.patients, &dir.join(PATIENTS_FILE))?;
    write_csv(&t.prescriptions, &dir.join(PRESCRIPTIONS_FILE))?;
    write_csv(&t.diagnoses, &dir.join(DIAGNOSES_FILE))?;
    write_csv(&t.d_icd, &dir.join(D_ICD_FILE))?;
    let note = dir.join(NOTE_FILE);
    crate::fsutil::write_atomic(&note, CLINICAL_NOTE.as_bytes()).map_err(|source| TableError::Io { path: note, source })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::load_csv;

    #[test]
    fn deterministic_and_round_trips_through_csv() {
        let cfg = FixtureConfig { n_patients: 60, seed: 3 };
        let a = generate_tables(&cfg);
        assert_eq!(a, generate_tables(&cfg));
        let dir = tempfile::tempdir().unwrap();
        write_fixtures(dir.path(), &cfg).unwrap();
        let p = load_csv(&dir.path().join(PATIENTS_FILE), None).unwrap();
        assert_eq!(p, a.patients);
        let rx = load_csv(&dir.path().join(PRESCRIPTIONS_FILE), None).unwrap();
        assert_eq!(rx.num_rows(), a.prescriptions.num_rows());
        assert_eq!(rx.schema().kind_of("DOSE_VAL_RX"), Some(ColumnKind::Float));
        let dx = load_csv(&dir.path().join(DIAGNOSES_FILE), None).unwrap();
        assert_eq!(dx.schema().kind_of("ICD9_CODE"), Some(ColumnKind::String));
    }

    #[test]
    fn some_patients_have_no_prescriptions() {
        let t = generate_tables(&FixtureConfig::default());
        let with_rx: std::collections::HashSet<_> =
            t.prescriptions.column("SUBJECT_ID").unwrap().map(|v| v.to_csv_cell()).collect();
        assert!(with_rx.len() < t.patients.num_rows());
        assert!(!with_rx.is_empty());
    }

    #[test]
    fn note_anchor_sentence_sits_in_one_segment() {
        let segs = crate::testgen::equal_segments(CLINICAL_NOTE, 50).unwrap();
        let (sentence, _) = crate::testgen::CURATED_QUESTIONS[0];
        assert_eq!(segs.iter().filter(|s| s.text.contains(sentence)).count(), 1);
    }
}
