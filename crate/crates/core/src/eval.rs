//! Classification metrics, the feature-group ablation harness and frozen
//! cross-condition evaluation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::FeatureGroup;
use crate::pipeline::{fit_pipeline, labels, select_for_task, PipelineConfig, Resources, TrainedPipeline};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.r#fn
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub auc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub confusion: Confusion,
}

pub const METRICS_HEADER: &str = "ACC,AUC,F1,Precision,Recall";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{:.4},{:.4},{:.4},{:.4},{:.4}",
            self.accuracy, self.auc, self.f1, self.precision, self.recall
        )
    }

    pub fn to_csv(&self) -> String {
        format!("{METRICS_HEADER}\n{}\n", self.csv_row())
    }

    pub fn confusion_json(&self) -> String {
        let c = &self.confusion;
        serde_json::json!({
            "threshold": self.threshold,
            "matrix": [[c.tn, c.fp], [c.r#fn, c.tp]],
            "rows": ["actual_negative", "actual_positive"],
            "columns": ["predicted_negative", "predicted_positive"],
        })
        .to_string()
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counted one half, computed from average ranks.
pub fn auc(probs: &[f64], labels: &[bool]) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Dimension {
            what: "probabilities vs labels",
            expected: labels.len(),
            got: probs.len(),
        });
    }
    let n_pos = labels.iter().filter(|&&y| y).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass("AUC is undefined for one class".into()));
    }
    if probs.iter().any(|p| p.is_nan()) {
        return Err(Error::Invalid("NaN probability".into()));
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] {
                rank_sum += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// A probability at or above `threshold` counts as a positive prediction.
pub fn compute_metrics(probs: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let auc = auc(probs, labels)?;
    let mut c = Confusion { tp: 0, fp: 0, tn: 0, r#fn: 0 };
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.r#fn += 1,
        }
    }
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.r#fn);
    let f1 = if precision * recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(MetricsReport {
        accuracy: ratio(c.tp + c.tn, c.total()),
        auc,
        f1,
        precision,
        recall,
        threshold,
        confusion: c,
    })
}

/// Named feature-group subsets, one trained model per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSpec {
    pub rows: Vec<(String, BTreeSet<FeatureGroup>)>,
}

impl AblationSpec {
    /// Looks up the standard row names: `full`, `no_emotion`, `no_user`,
    /// `no_numeric`, `no_post`, `no_text` and `text_only`.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let all: BTreeSet<FeatureGroup> = FeatureGroup::ALL.into_iter().collect();
        let without = |g: FeatureGroup| {
            let mut s = all.clone();
            s.remove(&g);
            s
        };
        let rows = names
            .iter()
            .map(|n| {
                let n = n.as_ref().trim();
                let groups = match n {
                    "full" => all.clone(),
                    "no_emotion" | "no_emotions" => without(FeatureGroup::Emotions),
                    "no_user" => without(FeatureGroup::User),
                    "no_numeric" => without(FeatureGroup::NumericText),
                    "no_post" => without(FeatureGroup::Post),
                    "no_text" => without(FeatureGroup::Text),
                    "text_only" => [FeatureGroup::Text].into_iter().collect(),
                    other => return Err(Error::Invalid(format!("unknown ablation row `{other}`"))),
                };
                Ok((n.to_string(), groups))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    pub fn standard() -> Self {
        Self::from_names(&["full", "no_emotion", "no_user", "no_numeric", "no_post", "text_only"])
            .expect("standard names")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub metrics: MetricsReport,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = format!("model,{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.name, r.metrics.csv_row()));
    }
    s
}

/// Trains and evaluates one pipeline per subset with identical seeds and
/// hyperparameters. Rows run in parallel.
pub fn run_ablation(
    train: &Corpus,
    test: &Corpus,
    res: Resources<'_>,
    spec: &AblationSpec,
    base: &PipelineConfig,
) -> Result<Vec<AblationRow>> {
    use rayon::prelude::*;
    if spec.rows.is_empty() {
        return Err(Error::Invalid("ablation spec has no rows".into()));
    }
    if let Some((name, _)) = spec.rows.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::Invalid(format!("ablation row `{name}` has no feature groups")));
    }
    spec.rows
        .par_iter()
        .map(|(name, groups)| {
            let mut cfg = base.clone();
            cfg.groups = groups.clone();
            let p = fit_pipeline(train, res, &cfg)?;
            Ok(AblationRow {
                name: name.clone(),
                metrics: evaluate_pipeline(&p, test, res)?,
            })
        })
        .collect()
}

/// Metrics of a trained pipeline on a labelled corpus, after the task's
/// pair selection.
pub fn evaluate_pipeline(p: &TrainedPipeline, corpus: &Corpus, res: Resources<'_>) -> Result<MetricsReport> {
    let c = select_for_task(corpus, p.config.task);
    let y = labels(&c, p.config.task)?;
    let probs = p.predict(&c, res)?;
    compute_metrics(&probs, &y, 0.5)
}

/// Evaluates a pipeline fitted on a source condition on a target corpus.
/// The featurizer and network are borrowed immutably; categories unseen in
/// the source map to the reserved code.
pub fn transfer_evaluate(p: &TrainedPipeline, target: &Corpus, res: Resources<'_>) -> Result<MetricsReport> {
    evaluate_pipeline(p, target, res)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Trapezoidal area under the ROC curve traced over distinct thresholds.
    fn trapezoid_auc(probs: &[f64], labels: &[bool]) -> f64 {
        let mut t: Vec<f64> = probs.to_vec();
        t.sort_by(|a, b| b.total_cmp(a));
        t.dedup();
        let p = labels.iter().filter(|&&y| y).count() as f64;
        let n = labels.len() as f64 - p;
        let mut pts = vec![(0.0, 0.0)];
        for th in t {
            let tp = probs.iter().zip(labels).filter(|(&s, &y)| s >= th && y).count() as f64;
            let fp = probs.iter().zip(labels).filter(|(&s, &y)| s >= th && !y).count() as f64;
            pts.push((fp / n, tp / p));
        }
        pts.windows(2).map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0).sum()
    }

    fn pairwise_auc(probs: &[f64], labels: &[bool]) -> f64 {
        let mut s = 0.0;
        let mut c = 0.0;
        for i in 0..probs.len() {
            for j in 0..probs.len() {
                if labels[i] && !labels[j] {
                    c += 1.0;
                    s += if probs[i] > probs[j] {
                        1.0
                    } else if probs[i] == probs[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        s / c
    }

    #[test]
    fn hand_case() {
        let y = [true, true, false, false];
        let p = [0.9, 0.4, 0.6, 0.2];
        assert_eq!(auc(&p, &y).unwrap(), 0.75);
        assert_eq!(pairwise_auc(&p, &y), 0.75);
    }

    #[test]
    fn perfect_and_constant() {
        let y = [true, false, true, false];
        let m = compute_metrics(&[1.0, 0.0, 0.9, 0.1], &y, 0.5).unwrap();
        assert_eq!((m.accuracy, m.auc, m.f1, m.precision, m.recall), (1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(auc(&[0.7; 4], &y).unwrap(), 0.5);
        assert!(matches!(compute_metrics(&[0.1, 0.2], &[true, true], 0.5), Err(Error::SingleClass(_))));
    }

    #[test]
    fn rank_formula_matches_trapezoid_and_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.random_range(2..60);
            let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            y[0] = true;
            y[1] = false;
            // Coarse scores force ties.
            let p: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 8.0).collect();
            let a = auc(&p, &y).unwrap();
            assert!((a - trapezoid_auc(&p, &y)).abs() < 1e-9);
            assert!((a - pairwise_auc(&p, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn f1_consistent_with_confusion() {
        let y = [true, true, false, false, true];
        let m = compute_metrics(&[0.8, 0.3, 0.6, 0.1, 0.5], &y, 0.5).unwrap();
        let c = m.confusion;
        assert_eq!((c.tp, c.fp, c.tn, c.r#fn), (2, 1, 1, 1));
        assert_eq!(c.total(), 5);
        let (p, r) = (2.0 / 3.0, 2.0 / 3.0);
        assert!((m.f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
        let none = compute_metrics(&[0.1, 0.2, 0.3], &[true, false, true], 0.5).unwrap();
        assert_eq!((none.precision, none.f1), (0.0, 0.0));
    }

    #[test]
    fn csv_and_json_shapes() {
        let m = compute_metrics(&[0.9, 0.4, 0.6, 0.2], &[true, true, false, false], 0.5).unwrap();
        let csv = m.to_csv();
        assert!(csv.starts_with("ACC,AUC,F1,Precision,Recall\n"));
        assert_eq!(csv.lines().nth(1).unwrap().split(',').count(), 5);
        let v: serde_json::Value = serde_json::from_str(&m.confusion_json()).unwrap();
        assert_eq!(v["matrix"][1][1], 1);
    }

    #[test]
    fn ablation_spec_names() {
        let s = AblationSpec::standard();
        assert_eq!(s.rows.len(), 6);
        assert_eq!(s.rows[0].1.len(), 5);
        assert!(!s.rows[3].1.contains(&FeatureGroup::NumericText));
        assert!(AblationSpec::from_names(&["full", "bogus"]).is_err());
    }
}
