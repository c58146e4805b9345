//! Evaluation metrics: ROC AUC via the Mann-Whitney statistic with half
//! credit for ties, Pearson correlation, Lin's concordance correlation, and
//! the arousal/valence combination used for the stress task.
//!
//! Correlations are computed from centered sums scaled by n, which keeps
//! small-integer cases exact: `ccc = 2*S_xy / (S_xx + S_yy + n*(mx-my)^2)`
//! equals the population-moment form.

use crate::error::{Error, Result};

/// Mann-Whitney pair statistic:
/// `(#{pos > neg} + 0.5 * #{pos = neg}) / (#pos * #neg)`,
/// computed through midranks in O(n log n).
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "auc: {} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let mut pos = 0usize;
    let mut neg = 0usize;
    for &l in labels {
        if l == 1.0 {
            pos += 1;
        } else if l == 0.0 {
            neg += 1;
        } else {
            return Err(Error::InvalidArgument(format!(
                "auc: labels must be 0 or 1, got {l}"
            )));
        }
    }
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedMetric(
            "auc requires both classes present".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { op: "auc" });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks over tie groups; ranks are 1-based
    let n = scores.len();
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if labels[idx] == 1.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let p = pos as f64;
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok(u / (p * neg as f64))
}

/// Pearson's correlation coefficient. Constant input is an explicit error so
/// evaluation bugs cannot hide behind a silent zero.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "pearson: need two equal-length series of n >= 2, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let (sxy, sxx, syy, _, _) = centered_sums(x, y);
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric(
            "pearson is undefined for constant input".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Lin's concordance correlation with population (1/n) moments:
/// `2*cov / (var_p + var_t + (mean_p - mean_t)^2)`.
///
/// Edge rule: both series constant and equal -> 1.0; both constant and
/// unequal -> 0.0.
pub fn ccc(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() || pred.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "ccc: need two equal-length series of n >= 2, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let (spt, spp, stt, mp, mt) = centered_sums(pred, target);
    if spp == 0.0 && stt == 0.0 {
        return Ok(if mp == mt { 1.0 } else { 0.0 });
    }
    let n = pred.len() as f64;
    let d = mp - mt;
    Ok(2.0 * spt / (spp + stt + n * d * d))
}

/// Combination rule for the two stress targets: arithmetic mean.
pub fn combined_stress(ccc_arousal: f64, ccc_valence: f64) -> f64 {
    (ccc_arousal + ccc_valence) / 2.0
}

/// (S_xy, S_xx, S_yy, mean_x, mean_y) with centered sums.
fn centered_sums(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    (sxy, sxx, syy, mx, my)
}

/// Named metric values from one evaluation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub task: String,
    pub values: Vec<(String, f64)>,
    pub samples: usize,
}

impl MetricReport {
    pub fn new(task: impl Into<String>, samples: usize) -> Self {
        MetricReport {
            task: task.into(),
            values: Vec::new(),
            samples,
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.values.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    /// One-row CSV with named columns: `task,n,<metric...>`.
    pub fn to_csv(&self) -> String {
        let mut header = String::from("task,n");
        let mut row = format!("{},{}", self.task, self.samples);
        for (name, value) in &self.values {
            header.push(',');
            header.push_str(name);
            row.push(',');
            row.push_str(&value.to_string());
        }
        format!("{header}\n{row}\n")
    }
}
