//! Model-agnostic Shapley attributions over tabular features and
//! leave-one-out token attributions over text.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::textfeat::TokenizerConfig;

/// Largest feature count handled by exact coalition enumeration.
pub const MAX_EXACT_FEATURES: usize = 15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    /// Mean prediction over the background rows.
    pub base_value: f64,
    pub phi: Vec<f64>,
    pub prediction: f64,
    pub feature_values: Vec<f64>,
    /// Per-feature standard errors; present for sampled estimates.
    pub std_errors: Option<Vec<f64>>,
}

impl Attribution {
    /// `prediction - base_value - Σφ`.
    pub fn efficiency_gap(&self) -> f64 {
        self.prediction - self.base_value - self.phi.iter().sum::<f64>()
    }
}

fn check_rows(background: &[Vec<f64>], x: &[f64]) -> Result<usize> {
    if background.is_empty() {
        return Err(Error::Invalid("background set is empty".into()));
    }
    let f = x.len();
    if let Some(b) = background.iter().find(|b| b.len() != f) {
        return Err(Error::Dimension {
            what: "background row width",
            expected: f,
            got: b.len(),
        });
    }
    Ok(f)
}

fn checked_batch<P>(predict: &P, rows: &[Vec<f64>]) -> Result<Vec<f64>>
where
    P: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let out = predict(rows)?;
    if out.len() != rows.len() {
        return Err(Error::Dimension {
            what: "predictions per batch",
            expected: rows.len(),
            got: out.len(),
        });
    }
    Ok(out)
}

/// Exact Shapley values by enumerating all `2^F` coalitions. The value of a
/// coalition is the mean prediction over background rows whose features in
/// the coalition are replaced by the explained instance's values.
pub fn shap_exact<P>(predict: P, background: &[Vec<f64>], x: &[f64]) -> Result<Attribution>
where
    P: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let f = check_rows(background, x)?;
    if f > MAX_EXACT_FEATURES {
        return Err(Error::Invalid(format!(
            "{f} features exceed the exact limit of {MAX_EXACT_FEATURES}; use shap_sampled"
        )));
    }
    let n_masks = 1usize << f;
    let mut value = vec![0.0; n_masks];
    let mut batch = Vec::with_capacity(background.len());
    for (mask, v) in value.iter_mut().enumerate() {
        batch.clear();
        for b in background {
            let z: Vec<f64> = (0..f).map(|j| if mask >> j & 1 == 1 { x[j] } else { b[j] }).collect();
            batch.push(z);
        }
        let preds = checked_batch(&predict, &batch)?;
        *v = preds.iter().sum::<f64>() / preds.len() as f64;
    }
    // weight[s] = s! (F - s - 1)! / F!
    let mut fact = vec![1.0f64; f + 1];
    for k in 1..=f {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..f).map(|s| fact[s] * fact[f - s - 1] / fact[f]).collect();
    let mut phi = vec![0.0; f];
    for mask in 0..n_masks {
        let size = mask.count_ones() as usize;
        for (i, p) in phi.iter_mut().enumerate() {
            if mask >> i & 1 == 0 {
                *p += weight[size] * (value[mask | 1 << i] - value[mask]);
            }
        }
    }
    Ok(Attribution {
        base_value: value[0],
        phi,
        prediction: value[n_masks - 1],
        feature_values: x.to_vec(),
        std_errors: None,
    })
}

/// Permutation-sampling estimate: each sample walks a random feature order
/// from a random background row to the instance, crediting each feature with
/// the change it causes.
pub fn shap_sampled<P>(predict: P, background: &[Vec<f64>], x: &[f64], n_samples: usize, seed: u64) -> Result<Attribution>
where
    P: Fn(&[Vec<f64>]) -> Result<Vec<f64>>,
{
    let f = check_rows(background, x)?;
    if n_samples < f.max(2) {
        return Err(Error::Invalid(format!("n_samples {n_samples} must be at least the feature count {f} and 2")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sum = vec![0.0; f];
    let mut sum_sq = vec![0.0; f];
    let mut order: Vec<usize> = (0..f).collect();
    let mut walk = Vec::with_capacity(f + 1);
    for _ in 0..n_samples {
        order.shuffle(&mut rng);
        let mut z = background[rng.random_range(0..background.len())].clone();
        walk.clear();
        walk.push(z.clone());
        for &j in &order {
            z[j] = x[j];
            walk.push(z.clone());
        }
        let preds = checked_batch(&predict, &walk)?;
        for (k, &j) in order.iter().enumerate() {
            let d = preds[k + 1] - preds[k];
            sum[j] += d;
            sum_sq[j] += d * d;
        }
    }
    let n = n_samples as f64;
    let phi: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let std_errors = sum_sq
        .iter()
        .zip(&phi)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    let base = checked_batch(&predict, background)?;
    let prediction = checked_batch(&predict, &[x.to_vec()])?[0];
    Ok(Attribution {
        base_value: base.iter().sum::<f64>() / base.len() as f64,
        phi,
        prediction,
        feature_values: x.to_vec(),
        std_errors: Some(std_errors),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSummary {
    pub feature_names: Vec<String>,
    pub mean_abs_phi: Vec<f64>,
    /// Feature indices by descending mean |φ|; ties keep schema order.
    pub ranking: Vec<usize>,
    /// Pearson correlation of feature value and φ; 0 when undefined.
    pub direction: Vec<f64>,
    pub attributions: Vec<Attribution>,
}

pub fn global_summary(attributions: &[Attribution], feature_names: &[String]) -> Result<GlobalSummary> {
    let first = attributions
        .first()
        .ok_or_else(|| Error::Invalid("no attributions to summarise".into()))?;
    let f = first.phi.len();
    if feature_names.len() != f {
        return Err(Error::Dimension {
            what: "feature names",
            expected: f,
            got: feature_names.len(),
        });
    }
    if let Some(a) = attributions.iter().find(|a| a.phi.len() != f || a.feature_values.len() != f) {
        return Err(Error::Dimension {
            what: "attribution width",
            expected: f,
            got: a.phi.len(),
        });
    }
    let n = attributions.len() as f64;
    let mean_abs_phi: Vec<f64> = (0..f)
        .map(|j| attributions.iter().map(|a| a.phi[j].abs()).sum::<f64>() / n)
        .collect();
    let mut ranking: Vec<usize> = (0..f).collect();
    ranking.sort_by(|&a, &b| mean_abs_phi[b].total_cmp(&mean_abs_phi[a]).then(a.cmp(&b)));
    let direction = (0..f)
        .map(|j| {
            let xs: Vec<f64> = attributions.iter().map(|a| a.feature_values[j]).collect();
            let ys: Vec<f64> = attributions.iter().map(|a| a.phi[j]).collect();
            pearson(&xs, &ys)
        })
        .collect();
    Ok(GlobalSummary {
        feature_names: feature_names.to_vec(),
        mean_abs_phi,
        ranking,
        direction,
        attributions: attributions.to_vec(),
    })
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

impl GlobalSummary {
    /// `feature,value,phi,instance` rows for a beeswarm plot.
    pub fn beeswarm_csv(&self) -> String {
        let mut s = String::from("feature,value,phi,instance\n");
        for &j in &self.ranking {
            for (i, a) in self.attributions.iter().enumerate() {
                s.push_str(&format!("{},{},{},{}\n", self.feature_names[j], a.feature_values[j], a.phi[j], i));
            }
        }
        s
    }

    pub fn importance_csv(&self) -> String {
        let mut s = String::from("rank,feature,mean_abs_phi,direction\n");
        for (r, &j) in self.ranking.iter().enumerate() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                r + 1,
                self.feature_names[j],
                self.mean_abs_phi[j],
                self.direction[j]
            ));
        }
        s
    }
}

/// Settings for explaining a trained pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainOptions {
    /// Background rows drawn from the background corpus.
    pub background: usize,
    /// Instances drawn from the corpus being explained.
    pub instances: usize,
    /// Permutations per instance for the sampled estimator.
    pub samples: usize,
    pub exact: bool,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            background: 100,
            instances: 20,
            samples: 500,
            exact: false,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineExplanation {
    /// Positions of the explained pairs in the task-selected corpus.
    pub indices: Vec<usize>,
    pub summary: GlobalSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenScore {
    pub token: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextAttribution {
    pub prediction: f64,
    pub tokens: Vec<TokenScore>,
}

/// Leave-one-out token scores: prediction on the full text minus the
/// prediction with that token occurrence removed. Everything except the text
/// is held fixed by the caller's closure.
pub fn text_attribution<P>(predict: P, text: &str, tokenizer: &TokenizerConfig) -> Result<TextAttribution>
where
    P: Fn(&str) -> Result<f64>,
{
    let tokens = tokenizer.tokenize(text);
    let prediction = predict(text)?;
    let mut out = Vec::with_capacity(tokens.len());
    for i in 0..tokens.len() {
        let rest: Vec<&str> = tokens
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, t)| t.as_str())
            .collect();
        out.push(TokenScore {
            token: tokens[i].clone(),
            score: prediction - predict(&rest.join(" "))?,
        });
    }
    Ok(TextAttribution { prediction, tokens: out })
}

fn escape_html(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

impl TextAttribution {
    /// Tokens coloured red for positive and blue for negative scores, opacity
    /// proportional to magnitude.
    pub fn to_html(&self, title: &str) -> String {
        let max = self.tokens.iter().map(|t| t.score.abs()).fold(0.0, f64::max);
        let mut body = String::new();
        for t in &self.tokens {
            let alpha = if max > 0.0 { t.score.abs() / max } else { 0.0 };
            let (r, g, b) = if t.score >= 0.0 { (220, 40, 40) } else { (40, 80, 220) };
            body.push_str(&format!(
                "<span title=\"{:+.4}\" style=\"background: rgba({r},{g},{b},{alpha:.3})\">{}</span> ",
                t.score,
                escape_html(&t.token)
            ));
        }
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>{0}</title></head>\n<body>\n<h3>{0}</h3>\n<p>prediction = {1:.4}</p>\n<p style=\"line-height: 2\">{2}</p>\n</body></html>\n",
            escape_html(title),
            self.prediction,
            body.trim_end()
        )
    }
}

/// Local explanation of one instance as JSON.
pub fn local_json(
    pair_id: &str,
    names: &[String],
    attribution: &Attribution,
    text: Option<&TextAttribution>,
) -> String {
    serde_json::json!({
        "pair_id": pair_id,
        "base": attribution.base_value,
        "prediction": attribution.prediction,
        "features": names,
        "values": attribution.feature_values,
        "phi": attribution.phi,
        "std_errors": attribution.std_errors,
        "tokens": text.map(|t| &t.tokens),
    })
    .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn linear(w: Vec<f64>) -> impl Fn(&[Vec<f64>]) -> Result<Vec<f64>> {
        move |rows| Ok(rows.iter().map(|r| r.iter().zip(&w).map(|(a, b)| a * b).sum()).collect())
    }

    #[test]
    fn linear_game_closed_form() {
        let w = vec![0.5, -2.0, 3.0, 0.0];
        let b = vec![1.0, 1.0, -1.0, 2.0];
        let x = vec![2.0, 0.5, 1.0, 7.0];
        let a = shap_exact(linear(w.clone()), std::slice::from_ref(&b), &x).unwrap();
        for j in 0..4 {
            assert!((a.phi[j] - w[j] * (x[j] - b[j])).abs() < 1e-12);
        }
        assert!(a.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn constant_model_gets_zero() {
        let c = |rows: &[Vec<f64>]| Ok(vec![0.3; rows.len()]);
        let bg = vec![vec![0.0, 1.0], vec![2.0, 3.0]];
        let a = shap_exact(c, &bg, &[5.0, 5.0]).unwrap();
        assert!(a.phi.iter().all(|p| *p == 0.0));
        let s = shap_sampled(c, &bg, &[5.0, 5.0], 10, 1).unwrap();
        assert!(s.phi.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn duplicated_features_share_credit() {
        let m = |rows: &[Vec<f64>]| Ok(rows.iter().map(|r| (r[0] + r[1]).tanh() + r[2]).collect());
        let bg = vec![vec![0.0, 0.0, 0.0], vec![1.0, 1.0, -1.0]];
        let a = shap_exact(m, &bg, &[0.7, 0.7, 0.2]).unwrap();
        assert!((a.phi[0] - a.phi[1]).abs() < 1e-12);
    }

    #[test]
    fn too_many_features_for_exact() {
        let x = vec![0.0; 16];
        let err = shap_exact(linear(vec![1.0; 16]), std::slice::from_ref(&x), &x).unwrap_err();
        assert!(err.to_string().contains("shap_sampled"));
    }

    #[test]
    fn sampled_is_deterministic_and_near_exact() {
        let m = |rows: &[Vec<f64>]| {
            Ok(rows
                .iter()
                .map(|r| 1.0 / (1.0 + (-(r[0] * r[1] - r[2] + 0.5 * r[3] * r[3])).exp()))
                .collect())
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bg: Vec<Vec<f64>> = (0..20).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let x = vec![0.9, -0.4, 0.3, 1.2];
        let e = shap_exact(m, &bg, &x).unwrap();
        let a = shap_sampled(m, &bg, &x, 2000, 9).unwrap();
        assert_eq!(a, shap_sampled(m, &bg, &x, 2000, 9).unwrap());
        let se = a.std_errors.as_ref().unwrap();
        for j in 0..4 {
            assert!((a.phi[j] - e.phi[j]).abs() <= 3.0 * se[j] + 1e-12);
        }
        assert!(a.efficiency_gap().abs() < 0.02);
    }

    #[test]
    fn summary_ranking_and_duplication() {
        let mk = |phi: Vec<f64>| Attribution {
            base_value: 0.0,
            feature_values: vec![1.0; phi.len()],
            prediction: phi.iter().sum(),
            phi,
            std_errors: None,
        };
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let one = global_summary(&[mk(vec![0.1, -0.5, 0.0])], &names).unwrap();
        assert_eq!(one.ranking, vec![1, 0, 2]);
        let atts = vec![mk(vec![0.2, 0.1, 0.0]), mk(vec![-0.3, 0.5, 0.0])];
        let g = global_summary(&atts, &names).unwrap();
        let doubled: Vec<Attribution> = atts.iter().chain(&atts).cloned().collect();
        assert_eq!(global_summary(&doubled, &names).unwrap().ranking, g.ranking);
        assert_eq!(*g.ranking.last().unwrap(), 2);
        assert!(global_summary(&[], &names).is_err());
        assert!(g.beeswarm_csv().starts_with("feature,value,phi,instance\nb,"));
    }

    #[test]
    fn leave_one_out_tokens() {
        let tok = TokenizerConfig::default();
        let weights = |t: &str| match t {
            "dose" => 0.4,
            "pain" => -0.1,
            _ => 0.05,
        };
        let model = |text: &str| Ok(tok.tokenize(text).iter().map(|t| weights(t)).sum::<f64>());
        let text = "Lower the dose, pain stays; dose again.";
        let a = text_attribution(model, text, &tok).unwrap();
        let total: f64 = a.tokens.iter().map(|t| t.score).sum();
        assert!((total - (model(text).unwrap() - model("").unwrap())).abs() < 1e-12);
        assert_eq!(a.tokens[2].token, "dose");
        assert!((a.tokens[2].score - 0.4).abs() < 1e-12);

        let single = text_attribution(model, "dose", &tok).unwrap();
        assert_eq!(single.tokens.len(), 1);
        assert!((single.tokens[0].score - (model("dose").unwrap() - model("").unwrap())).abs() < 1e-15);
        assert!(text_attribution(model, "", &tok).unwrap().tokens.is_empty());
        let constant = text_attribution(|_: &str| Ok(0.7), text, &tok).unwrap();
        assert!(constant.tokens.iter().all(|t| t.score == 0.0));
        let html = a.to_html("pair <1>");
        assert!(html.contains("pair &lt;1&gt;") && html.contains("rgba(220,40,40"));
    }
}
