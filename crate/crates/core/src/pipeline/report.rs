//! Metric tables from one or two `results.jsonl` files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::corpus::{read_jsonl, TaskId};
use crate::error::{Error, Result};
use crate::eval::{score, significance, EvalRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTables {
    pub text: String,
    pub csv: String,
}

fn load(path: &Path) -> Result<BTreeMap<TaskId, Vec<EvalRecord>>> {
    let records: Vec<EvalRecord> = read_jsonl(path)?;
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("{} has no records", path.display())));
    }
    let mut by_task: BTreeMap<TaskId, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        by_task.entry(r.task_id).or_default().push(r);
    }
    Ok(by_task)
}

fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn render_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    line(width.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().iter().map(String::as_str).collect(), &mut out);
    for r in rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// One results file gives a `task,metric,value` table. Two files give both
/// values side by side with `delta = second - first` and significance stars
/// (`*` p < 0.05, `**` p < 0.01, `***` p < 0.001).
pub fn cmd_report(paths: &[&Path]) -> Result<ReportTables> {
    match paths {
        [one] => {
            let runs = load(one)?;
            let mut rows = Vec::new();
            for (task, recs) in &runs {
                let rep = score(recs, *task)?;
                for (metric, v) in &rep.metrics {
                    rows.push(vec![task.to_string(), metric.clone(), format!("{v:.6}")]);
                }
            }
            let header = ["task", "metric", "value"];
            Ok(ReportTables {
                text: render_text(&header, &rows),
                csv: to_csv(&header, &rows),
            })
        }
        [first, second] => {
            let a = load(first)?;
            let b = load(second)?;
            let mut rows = Vec::new();
            for (task, ra) in &a {
                let Some(rb) = b.get(task) else {
                    continue;
                };
                let sa = score(ra, *task)?;
                let sb = score(rb, *task)?;
                let tests = significance(ra, rb, *task)?;
                for (metric, va) in &sa.metrics {
                    let vb = sb.metrics[metric];
                    let p = tests.iter().find(|t| &t.metric == metric).map(|t| t.p_value);
                    rows.push(vec![
                        task.to_string(),
                        metric.clone(),
                        format!("{va:.6}"),
                        format!("{vb:.6}"),
                        format!("{:+.6}", vb - va),
                        p.map(|p| format!("{p:.4}")).unwrap_or_default(),
                        p.map(stars).unwrap_or_default().to_string(),
                    ]);
                }
            }
            if rows.is_empty() {
                return Err(Error::EmptyInput("the two result sets share no task".into()));
            }
            let header = ["task", "metric", "a", "b", "delta", "p_value", "sig"];
            Ok(ReportTables {
                text: render_text(&header, &rows),
                csv: to_csv(&header, &rows),
            })
        }
        _ => Err(Error::Config("report takes one or two results files".into())),
    }
}

fn to_csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}
