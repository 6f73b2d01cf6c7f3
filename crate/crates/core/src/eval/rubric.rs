//! Review records, the "Yes" frequency table and the reliability report.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::Deserialize;
use thiserror::Error;

use super::kappa::{lights_kappa, AgreementBand, KappaError, LightsKappa};
use crate::phase::Phase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ResponseType {
    Peer,
    Tutor,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RubricRecord {
    pub pair_id: String,
    pub reviewer_id: String,
    pub phase: Phase,
    pub conceptual: bool,
    pub no_inaccuracy: bool,
    pub correctness: bool,
    pub relevance: bool,
    pub completeness: bool,
    pub code_solution: bool,
    pub response_type: ResponseType,
}

/// Rubric questions, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Conceptual,
    NoInaccuracy,
    Correctness,
    Relevance,
    Completeness,
    CodeSolution,
    ResponseType,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Conceptual,
        Category::NoInaccuracy,
        Category::Correctness,
        Category::Relevance,
        Category::Completeness,
        Category::CodeSolution,
        Category::ResponseType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Conceptual => "conceptual",
            Category::NoInaccuracy => "no_inaccuracy",
            Category::Correctness => "correctness",
            Category::Relevance => "relevance",
            Category::Completeness => "completeness",
            Category::CodeSolution => "code_solution",
            Category::ResponseType => "response_type",
        }
    }

    /// The record's answer, as a label for agreement statistics.
    pub fn label(self, r: &RubricRecord) -> bool {
        match self {
            Category::Conceptual => r.conceptual,
            Category::NoInaccuracy => r.no_inaccuracy,
            Category::Correctness => r.correctness,
            Category::Relevance => r.relevance,
            Category::Completeness => r.completeness,
            Category::CodeSolution => r.code_solution,
            Category::ResponseType => r.response_type == ResponseType::Tutor,
        }
    }
}

#[derive(Debug, Error)]
pub enum RubricError {
    #[error("line {line}: {message}")]
    Field { line: u64, message: String },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("reviewer {reviewer} rated pair {pair} twice")]
    Duplicate { pair: String, reviewer: String },
}

#[derive(Deserialize)]
struct Row {
    pair_id: String,
    reviewer_id: String,
    phase: String,
    conceptual: String,
    no_inaccuracy: String,
    correctness: String,
    relevance: String,
    completeness: String,
    code_solution: String,
    response_type: String,
}

fn yes_no(value: &str) -> Option<bool> {
    match value.trim().to_ascii_lowercase().as_str() {
        "y" | "yes" | "1" | "true" => Some(true),
        "n" | "no" | "0" | "false" => Some(false),
        _ => None,
    }
}

fn parse_row(row: Row, line: u64) -> Result<RubricRecord, RubricError> {
    let field = |name: &str, value: &str| RubricError::Field {
        line,
        message: format!("invalid {name} `{value}`"),
    };
    let flag = |name: &str, value: &str| yes_no(value).ok_or_else(|| field(name, value));
    let phase = match row.phase.trim().to_ascii_lowercase().as_str() {
        "ct" | "compile-time" | "compile" => Phase::CompileTime,
        "rt" | "run-time" | "runtime" => Phase::RunTime,
        _ => return Err(field("phase", &row.phase)),
    };
    let response_type = match row.response_type.trim().to_ascii_lowercase().as_str() {
        "peer" => ResponseType::Peer,
        "tutor" => ResponseType::Tutor,
        _ => return Err(field("response_type", &row.response_type)),
    };
    Ok(RubricRecord {
        conceptual: flag("conceptual", &row.conceptual)?,
        no_inaccuracy: flag("no_inaccuracy", &row.no_inaccuracy)?,
        correctness: flag("correctness", &row.correctness)?,
        relevance: flag("relevance", &row.relevance)?,
        completeness: flag("completeness", &row.completeness)?,
        code_solution: flag("code_solution", &row.code_solution)?,
        pair_id: row.pair_id.trim().to_string(),
        reviewer_id: row.reviewer_id.trim().to_string(),
        phase,
        response_type,
    })
}

/// Reads review records from CSV with the header
/// `pair_id,reviewer_id,phase,conceptual,no_inaccuracy,correctness,relevance,completeness,code_solution,response_type`.
pub fn read_records(input: impl Read) -> Result<Vec<RubricRecord>, RubricError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize::<Row>() {
        let row = row?;
        let line = records.len() as u64 + 2;
        let record = parse_row(row, line)?;
        if !seen.insert((record.pair_id.clone(), record.reviewer_id.clone())) {
            return Err(RubricError::Duplicate {
                pair: record.pair_id,
                reviewer: record.reviewer_id,
            });
        }
        records.push(record);
    }
    Ok(records)
}

/// Rounds `yes / n` to a whole percent, halves to even.
pub fn percent(yes: usize, n: usize) -> Option<u32> {
    if n == 0 {
        return None;
    }
    let (q, r) = ((yes * 100) / n, (yes * 100) % n);
    let up = match (2 * r).cmp(&n) {
        std::cmp::Ordering::Greater => true,
        std::cmp::Ordering::Equal => q % 2 == 1,
        std::cmp::Ordering::Less => false,
    };
    Some((q + usize::from(up)) as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyRow {
    pub label: &'static str,
    pub category: Category,
    pub ct_yes_pct: Option<u32>,
    pub rt_yes_pct: Option<u32>,
    pub kappa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityReport {
    pub ct_records: usize,
    pub rt_records: usize,
    pub rows: Vec<FrequencyRow>,
    pub per_category: BTreeMap<&'static str, LightsKappa>,
}

const ROWS: [(&str, Category, bool); 8] = [
    ("Conceptually accurate", Category::Conceptual, true),
    ("No inaccuracy in solution", Category::NoInaccuracy, true),
    ("Correctness of response", Category::Correctness, true),
    ("Relevance of response", Category::Relevance, true),
    ("Completeness of response", Category::Completeness, true),
    ("Solution is provided", Category::CodeSolution, true),
    ("Response of peer quality", Category::ResponseType, false),
    ("Response of tutor quality", Category::ResponseType, true),
];

fn category_kappa(records: &[RubricRecord], category: Category) -> Result<LightsKappa, KappaError> {
    let mut ratings: BTreeMap<String, BTreeMap<String, bool>> = BTreeMap::new();
    for r in records {
        ratings
            .entry(r.reviewer_id.clone())
            .or_default()
            .insert(r.pair_id.clone(), category.label(r));
    }
    lights_kappa(&ratings)
}

/// Percent "Yes" per category and phase, plus Light's kappa per category
/// where reviewers overlap.
pub fn frequency_table(records: &[RubricRecord]) -> ReliabilityReport {
    let ct: Vec<&RubricRecord> = records.iter().filter(|r| r.phase == Phase::CompileTime).collect();
    let rt: Vec<&RubricRecord> = records.iter().filter(|r| r.phase == Phase::RunTime).collect();
    let per_category: BTreeMap<&'static str, LightsKappa> = Category::ALL
        .iter()
        .filter_map(|&c| Some((c.name(), category_kappa(records, c).ok()?)))
        .collect();
    let pct = |set: &[&RubricRecord], category: Category, yes: bool| {
        percent(set.iter().filter(|r| category.label(r) == yes).count(), set.len())
    };
    let rows = ROWS
        .iter()
        .map(|&(label, category, yes)| FrequencyRow {
            label,
            category,
            ct_yes_pct: pct(&ct, category, yes),
            rt_yes_pct: pct(&rt, category, yes),
            kappa: per_category.get(category.name()).map(|k| k.kappa),
        })
        .collect();
    ReliabilityReport {
        ct_records: ct.len(),
        rt_records: rt.len(),
        rows,
        per_category,
    }
}

fn cell(p: Option<u32>) -> String {
    p.map_or_else(|| "n/a".to_string(), |p| format!("{p}%"))
}

impl ReliabilityReport {
    pub fn render(&self) -> String {
        let headers = [
            format!("Measure (n={})", self.ct_records + self.rt_records),
            format!("CT (n={})", self.ct_records),
            format!("RT (n={})", self.rt_records),
            "Light's kappa".to_string(),
        ];
        let body: Vec<[String; 4]> = self
            .rows
            .iter()
            .map(|r| {
                [
                    r.label.to_string(),
                    cell(r.ct_yes_pct),
                    cell(r.rt_yes_pct),
                    r.kappa.map_or_else(|| "n/a".to_string(), |k| format!("{k:.2}")),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..4)
            .map(|i| body.iter().map(|row| row[i].len()).chain([headers[i].len()]).max().unwrap())
            .collect();
        let mut out = String::new();
        for row in std::iter::once(&headers).chain(&body) {
            let _ = writeln!(
                out,
                "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}",
                row[0],
                row[1],
                row[2],
                row[3],
                w0 = widths[0],
                w1 = widths[1],
                w2 = widths[2],
                w3 = widths[3]
            );
        }
        if !self.per_category.is_empty() {
            out.push('\n');
            for (name, k) in &self.per_category {
                let _ = writeln!(
                    out,
                    "{name}: Light's kappa {:.2} ({}), {} reviewer pairs",
                    k.kappa,
                    AgreementBand::of(k.kappa).as_str(),
                    k.pairwise.len()
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding() {
        assert_eq!(percent(180, 200), Some(90));
        assert_eq!(percent(57, 200), Some(28));
        assert_eq!(percent(143, 200), Some(72));
        assert_eq!(percent(1, 3), Some(33));
        assert_eq!(percent(2, 3), Some(67));
        assert_eq!(percent(0, 0), None);
    }

    #[test]
    fn csv_input() {
        let text = "pair_id,reviewer_id,phase,conceptual,no_inaccuracy,correctness,relevance,completeness,code_solution,response_type\n\
                    p1,r1,CT,Y,Y,N,Y,N,Y,tutor\n\
                    p1,r2,run-time,n,yes,no,y,n,n,Peer\n";
        let records = read_records(text.as_bytes()).unwrap();
        assert_eq!(records.len(), 2);
        assert!(records[0].conceptual && !records[0].correctness);
        assert_eq!(records[1].phase, Phase::RunTime);
        assert_eq!(records[1].response_type, ResponseType::Peer);
        let dup = format!("{text}p1,r1,CT,Y,Y,Y,Y,Y,Y,tutor\n");
        assert!(matches!(read_records(dup.as_bytes()), Err(RubricError::Duplicate { .. })));
        let bad = text.replace("tutor", "expert");
        assert!(matches!(read_records(bad.as_bytes()), Err(RubricError::Field { line: 2, .. })));
    }

    #[test]
    fn empty_and_one_phase() {
        let report = frequency_table(&[]);
        assert!(report.rows.iter().all(|r| r.ct_yes_pct.is_none() && r.rt_yes_pct.is_none()));
        assert!(report.render().contains("n/a"));
        let record = RubricRecord {
            pair_id: "p".into(),
            reviewer_id: "r".into(),
            phase: Phase::CompileTime,
            conceptual: true,
            no_inaccuracy: true,
            correctness: true,
            relevance: true,
            completeness: false,
            code_solution: false,
            response_type: ResponseType::Peer,
        };
        let report = frequency_table(&[record]);
        assert_eq!(report.rows[0].ct_yes_pct, Some(100));
        assert_eq!(report.rows[0].rt_yes_pct, None);
        assert_eq!(report.rows[6].ct_yes_pct, Some(100));
        assert_eq!(report.rows[7].ct_yes_pct, Some(0));
    }
}
