//! Task metrics: accuracy, macro-F1, MAE, RMSE, ROUGE-1 and ROUGE-L.

use std::collections::{BTreeSet, HashMap};

/// Lowercase, map every non `[a-z0-9]` character to a space, split.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_ascii_lowercase() || c.is_ascii_digit() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub fmeasure: f64,
}

impl RougeScore {
    fn from_overlap(hit: usize, n_pred: usize, n_gold: usize) -> Self {
        if hit == 0 {
            return Self {
                precision: 0.0,
                recall: 0.0,
                fmeasure: 0.0,
            };
        }
        let p = hit as f64 / n_pred as f64;
        let r = hit as f64 / n_gold as f64;
        Self {
            precision: p,
            recall: r,
            fmeasure: 2.0 * p * r / (p + r),
        }
    }
}

pub fn rouge1(prediction: &str, gold: &str) -> RougeScore {
    let p = rouge_tokens(prediction);
    let g = rouge_tokens(gold);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut hit = 0;
    for t in &p {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                hit += 1;
            }
        }
    }
    RougeScore::from_overlap(hit, p.len(), g.len())
}

pub fn rouge_l(prediction: &str, gold: &str) -> RougeScore {
    let p = rouge_tokens(prediction);
    let g = rouge_tokens(gold);
    RougeScore::from_overlap(lcs_len(&p, &g), p.len(), g.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Fraction of equal pairs. `None` predictions never match.
pub fn accuracy<T: PartialEq>(pred: &[Option<T>], gold: &[T]) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let hits = pred.iter().zip(gold).filter(|(p, g)| p.as_ref() == Some(*g)).count();
    hits as f64 / gold.len() as f64
}

/// Unweighted mean of per-label F1 over every label seen in gold or in a
/// (parseable) prediction. `None` predictions count as misses only.
pub fn macro_f1<T: Ord + Clone>(pred: &[Option<T>], gold: &[T]) -> f64 {
    let labels: BTreeSet<T> = gold.iter().cloned().chain(pred.iter().flatten().cloned()).collect();
    if labels.is_empty() {
        return 0.0;
    }
    let total: f64 = labels
        .iter()
        .map(|l| {
            let mut tp = 0usize;
            let mut fp = 0usize;
            let mut fn_ = 0usize;
            for (p, g) in pred.iter().zip(gold) {
                let p_is = p.as_ref() == Some(l);
                let g_is = g == l;
                match (p_is, g_is) {
                    (true, true) => tp += 1,
                    (true, false) => fp += 1,
                    (false, true) => fn_ += 1,
                    _ => {}
                }
            }
            if tp == 0 {
                0.0
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            }
        })
        .sum();
    total / labels.len() as f64
}

pub fn mae(pred: &[f64], gold: &[f64]) -> f64 {
    pred.iter().zip(gold).map(|(p, g)| (p - g).abs()).sum::<f64>() / gold.len() as f64
}

pub fn rmse(pred: &[f64], gold: &[f64]) -> f64 {
    (pred.iter().zip(gold).map(|(p, g)| (p - g).powi(2)).sum::<f64>() / gold.len() as f64).sqrt()
}
