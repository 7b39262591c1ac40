//! Paired significance tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// A right, B wrong.
    pub b: usize,
    /// A wrong, B right.
    pub c: usize,
    pub exact: bool,
    pub statistic: f64,
    pub p_value: f64,
}

/// Exact two-sided binomial test when `b + c < 25`, otherwise the
/// continuity-corrected chi-square with one degree of freedom.
pub fn mcnemar(b: usize, c: usize) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar {
            b,
            c,
            exact: true,
            statistic: 0.0,
            p_value: 1.0,
        };
    }
    if n < 25 {
        let k = b.min(c);
        let mut coef = 1.0f64;
        let mut tail = 0.0f64;
        for i in 0..=k {
            if i > 0 {
                coef = coef * (n - i + 1) as f64 / i as f64;
            }
            tail += coef;
        }
        let p = (2.0 * tail / 2f64.powi(n as i32)).min(1.0);
        McNemar {
            b,
            c,
            exact: true,
            statistic: k as f64,
            p_value: p,
        }
    } else {
        let diff = (b as f64 - c as f64).abs() - 1.0;
        let chi2 = diff.max(0.0).powi(2) / n as f64;
        McNemar {
            b,
            c,
            exact: false,
            statistic: chi2,
            p_value: erfc((chi2 / 2.0).sqrt()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedT {
    pub n: usize,
    pub mean_diff: f64,
    /// `None` when the differences have zero variance.
    pub statistic: Option<f64>,
    pub p_value: f64,
    /// Zero-variance differences (up to rounding): p is 0 for a non-zero
    /// mean, 1 otherwise.
    pub degenerate: bool,
}

/// Two-tailed paired t-test on `a[i] - b[i]`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<PairedT> {
    if a.len() != b.len() {
        return Err(Error::InvalidParams("paired samples differ in length".into()));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::InvalidParams(format!("paired t-test needs >= 2 pairs, got {n}")));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var.sqrt() <= 1e-12 * mean.abs().max(1.0) {
        return Ok(PairedT {
            n,
            mean_diff: mean,
            statistic: None,
            p_value: if mean.abs() <= 1e-12 { 1.0 } else { 0.0 },
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid degrees of freedom");
    Ok(PairedT {
        n,
        mean_diff: mean,
        statistic: Some(t),
        p_value: (2.0 * dist.sf(t.abs())).min(1.0),
        degenerate: false,
    })
}
