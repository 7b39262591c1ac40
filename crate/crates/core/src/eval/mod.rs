//! Generation, output parsing, scoring and significance testing.

mod client;
pub mod metrics;
pub mod significance;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{QueryInstance, TaskFamily, TaskId};
use crate::error::{Error, Result};
use crate::prompt::{PromptBundle, LAMP2_TAGS};

pub use client::{generate, generate_batch, generate_text, Generated, GenerationConfig};
pub use significance::{mcnemar, paired_t, McNemar, PairedT};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum ParsedOutput {
    Choice(u8),
    Tag(String),
    Rating(u8),
    Text(String),
    Unparseable,
}

impl ParsedOutput {
    pub fn is_parseable(&self) -> bool {
        *self != ParsedOutput::Unparseable
    }

    /// Class label for classification metrics.
    fn label(&self) -> Option<String> {
        match self {
            ParsedOutput::Choice(c) => Some(c.to_string()),
            ParsedOutput::Tag(t) => Some(t.clone()),
            _ => None,
        }
    }
}

fn first_digit_run(s: &str) -> Option<&str> {
    let start = s.find(|c: char| c.is_ascii_digit())?;
    let rest = &s[start..];
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    Some(&rest[..end])
}

fn at_word_boundary(hay: &str, start: usize, end: usize) -> bool {
    let before = hay[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
    let after = hay[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
    before && after
}

/// Longest tag found case-insensitively at word boundaries; ties go to the
/// earliest match.
fn find_tag(raw: &str) -> Option<&'static str> {
    let hay = raw.to_lowercase();
    let mut best: Option<(&str, usize)> = None;
    for tag in LAMP2_TAGS {
        let found = hay
            .match_indices(tag)
            .map(|(i, _)| i)
            .find(|&i| at_word_boundary(&hay, i, i + tag.len()));
        if let Some(i) = found {
            let better = match best {
                None => true,
                Some((b, j)) => tag.len() > b.len() || (tag.len() == b.len() && i < j),
            };
            if better {
                best = Some((tag, i));
            }
        }
    }
    best.map(|(t, _)| t)
}

pub fn parse_output(raw: &str, task: TaskId) -> ParsedOutput {
    match task {
        TaskId::Lamp1 => {
            let bracket = [("[1]", 1u8), ("[2]", 2u8)]
                .iter()
                .filter_map(|(pat, v)| raw.find(pat).map(|i| (i, *v)))
                .min();
            match bracket {
                Some((_, v)) => ParsedOutput::Choice(v),
                None => match first_digit_run(raw) {
                    Some("1") => ParsedOutput::Choice(1),
                    Some("2") => ParsedOutput::Choice(2),
                    _ => ParsedOutput::Unparseable,
                },
            }
        }
        TaskId::Lamp2 | TaskId::Synth => find_tag(raw).map_or(ParsedOutput::Unparseable, |t| ParsedOutput::Tag(t.into())),
        TaskId::Lamp3 => match first_digit_run(raw).and_then(|d| d.parse::<u8>().ok()) {
            Some(r @ 1..=5) => ParsedOutput::Rating(r),
            _ => ParsedOutput::Unparseable,
        },
        TaskId::Lamp4 | TaskId::Lamp5 | TaskId::Lamp7 => {
            let text = raw.split_whitespace().collect::<Vec<_>>().join(" ");
            if text.is_empty() {
                ParsedOutput::Unparseable
            } else {
                ParsedOutput::Text(text)
            }
        }
    }
}

/// Offline stand-in for a generator: the tag of the first profile pair in a
/// movie-tagging prompt, or an empty string when the prompt has none.
pub fn copy_first_profile_tag(prompt: &str) -> String {
    const OPEN: &str = "the tag for the movie description:";
    const NEXT: [&str; 2] = [", the tag for the movie description:", ", which tag does the movie description:"];
    let lower = prompt.to_lowercase();
    let Some(start) = lower.find(OPEN) else {
        return String::new();
    };
    let body = start + OPEN.len();
    let end = NEXT
        .iter()
        .filter_map(|n| lower[body..].find(n).map(|i| body + i))
        .min()
        .unwrap_or(prompt.len());
    match prompt[body..end].rsplit_once(" is ") {
        Some((_, tag)) => tag.trim().to_string(),
        None => String::new(),
    }
}

pub fn prompt_hash(text: &str) -> String {
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

/// Rating substituted for an unparseable ordinal output: the far end of the
/// scale from the gold value.
fn worst_rating(gold: u8) -> u8 {
    if gold >= 3 {
        1
    } else {
        5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub user_id: String,
    pub task_id: TaskId,
    pub prompt_hash: String,
    pub raw_output: String,
    pub parsed_output: ParsedOutput,
    pub gold_output: Option<String>,
    pub scores: BTreeMap<String, f64>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl EvalRecord {
    pub fn new(query: &QueryInstance, bundle: &PromptBundle, raw_output: String, flags: Vec<String>) -> Self {
        let parsed = parse_output(&raw_output, query.task_id);
        let scores = query
            .gold_output
            .as_deref()
            .map(|g| record_scores(query.task_id, &parsed, g))
            .unwrap_or_default();
        Self {
            query_id: query.query_id.clone(),
            user_id: query.user_id.clone(),
            task_id: query.task_id,
            prompt_hash: prompt_hash(&bundle.prompt_text),
            raw_output,
            parsed_output: parsed,
            gold_output: query.gold_output.clone(),
            scores,
            flags,
        }
    }
}

fn record_scores(task: TaskId, parsed: &ParsedOutput, gold: &str) -> BTreeMap<String, f64> {
    let mut s = BTreeMap::new();
    match task.family() {
        TaskFamily::Classification => {
            let g = parse_output(gold, task);
            let ok = parsed.is_parseable() && *parsed == g;
            s.insert("correct".into(), if ok { 1.0 } else { 0.0 });
        }
        TaskFamily::Ordinal => {
            if let ParsedOutput::Rating(g) = parse_output(gold, task) {
                let p = match parsed {
                    ParsedOutput::Rating(r) => *r,
                    _ => worst_rating(g),
                };
                let e = (p as f64 - g as f64).abs();
                s.insert("abs_error".into(), e);
                s.insert("sq_error".into(), e * e);
            }
        }
        TaskFamily::Generation => {
            let p = match parsed {
                ParsedOutput::Text(t) => t.as_str(),
                _ => "",
            };
            s.insert("rouge1".into(), metrics::rouge1(p, gold).fmeasure);
            s.insert("rougeL".into(), metrics::rouge_l(p, gold).fmeasure);
        }
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub task: TaskId,
    pub n: usize,
    pub n_unparseable: usize,
    pub metrics: BTreeMap<String, f64>,
    /// Averaging used for F1, when reported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_average: Option<String>,
}

fn gold_of(r: &EvalRecord) -> Result<&str> {
    r.gold_output
        .as_deref()
        .ok_or_else(|| Error::InvalidParams(format!("record `{}` has no gold output", r.query_id)))
}

pub fn score(records: &[EvalRecord], task: TaskId) -> Result<MetricReport> {
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("no records to score for {task}")));
    }
    if let Some(r) = records.iter().find(|r| r.task_id != task) {
        return Err(Error::InvalidParams(format!("record `{}` belongs to {}, not {task}", r.query_id, r.task_id)));
    }
    let n_unparseable = records.iter().filter(|r| !r.parsed_output.is_parseable()).count();
    let mut out = BTreeMap::new();
    let mut f1_average = None;
    match task.family() {
        TaskFamily::Classification => {
            let mut gold = Vec::with_capacity(records.len());
            let mut pred = Vec::with_capacity(records.len());
            for r in records {
                let g = parse_output(gold_of(r)?, task).label().ok_or_else(|| {
                    Error::InvalidParams(format!("gold output of `{}` is outside the label space", r.query_id))
                })?;
                gold.push(g);
                pred.push(r.parsed_output.label());
            }
            out.insert("accuracy".into(), metrics::accuracy(&pred, &gold));
            out.insert("f1".into(), metrics::macro_f1(&pred, &gold));
            f1_average = Some("macro".to_string());
        }
        TaskFamily::Ordinal => {
            let mut gold = Vec::with_capacity(records.len());
            let mut pred = Vec::with_capacity(records.len());
            for r in records {
                let ParsedOutput::Rating(g) = parse_output(gold_of(r)?, task) else {
                    return Err(Error::InvalidParams(format!("gold output of `{}` is not a 1-5 rating", r.query_id)));
                };
                let p = match r.parsed_output {
                    ParsedOutput::Rating(p) => p,
                    _ => worst_rating(g),
                };
                gold.push(g as f64);
                pred.push(p as f64);
            }
            let mae = metrics::mae(&pred, &gold);
            let rmse = metrics::rmse(&pred, &gold);
            assert!(mae <= rmse + 1e-12, "MAE {mae} exceeds RMSE {rmse}");
            out.insert("mae".into(), mae);
            out.insert("rmse".into(), rmse);
        }
        TaskFamily::Generation => {
            let mut r1 = 0.0;
            let mut rl = 0.0;
            for r in records {
                let g = gold_of(r)?;
                let p = match &r.parsed_output {
                    ParsedOutput::Text(t) => t.as_str(),
                    _ => "",
                };
                r1 += metrics::rouge1(p, g).fmeasure;
                rl += metrics::rouge_l(p, g).fmeasure;
            }
            out.insert("rouge1".into(), r1 / records.len() as f64);
            out.insert("rougeL".into(), rl / records.len() as f64);
        }
    }
    Ok(MetricReport {
        task,
        n: records.len(),
        n_unparseable,
        metrics: out,
        f1_average,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum SignificanceResult {
    Mcnemar(McNemar),
    PairedT(PairedT),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceReport {
    pub task: TaskId,
    pub metric: String,
    pub n_pairs: usize,
    pub p_value: f64,
    pub result: SignificanceResult,
}

/// Compares run A against run B on the queries both contain.
pub fn significance(records_a: &[EvalRecord], records_b: &[EvalRecord], task: TaskId) -> Result<Vec<SignificanceReport>> {
    let b_by_id: HashMap<&str, &EvalRecord> = records_b.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let pairs: Vec<(&EvalRecord, &EvalRecord)> = records_a
        .iter()
        .filter(|r| r.task_id == task)
        .filter_map(|a| b_by_id.get(a.query_id.as_str()).map(|b| (a, *b)))
        .collect();
    if pairs.len() < 2 {
        return Err(Error::InvalidParams(format!("significance needs >= 2 paired records, got {}", pairs.len())));
    }
    let metric_of = |r: &EvalRecord, m: &str| -> Result<f64> {
        r.scores
            .get(m)
            .copied()
            .ok_or_else(|| Error::InvalidParams(format!("record `{}` has no `{m}` score", r.query_id)))
    };
    let mut out = Vec::new();
    match task.family() {
        TaskFamily::Classification => {
            let (mut b, mut c) = (0, 0);
            for (x, y) in &pairs {
                match (metric_of(x, "correct")? > 0.5, metric_of(y, "correct")? > 0.5) {
                    (true, false) => b += 1,
                    (false, true) => c += 1,
                    _ => {}
                }
            }
            let t = mcnemar(b, c);
            out.push(SignificanceReport {
                task,
                metric: "accuracy".into(),
                n_pairs: pairs.len(),
                p_value: t.p_value,
                result: SignificanceResult::Mcnemar(t),
            });
        }
        family => {
            let names: [(&str, &str); 2] = if family == TaskFamily::Ordinal {
                [("mae", "abs_error"), ("rmse", "sq_error")]
            } else {
                [("rouge1", "rouge1"), ("rougeL", "rougeL")]
            };
            for (metric, key) in names {
                let a: Vec<f64> = pairs.iter().map(|(x, _)| metric_of(x, key)).collect::<Result<_>>()?;
                let b: Vec<f64> = pairs.iter().map(|(_, y)| metric_of(y, key)).collect::<Result<_>>()?;
                let t = paired_t(&a, &b)?;
                out.push(SignificanceReport {
                    task,
                    metric: metric.into(),
                    n_pairs: pairs.len(),
                    p_value: t.p_value,
                    result: SignificanceResult::PairedT(t),
                });
            }
        }
    }
    Ok(out)
}
