//! Binary GLMs (logit, probit) with classical and sandwich errors, variance
//! inflation factors, matched undersampling and the helpfulness regression.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Logit,
    Probit,
}

impl std::str::FromStr for Link {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logit" => Ok(Self::Logit),
            "probit" => Ok(Self::Probit),
            other => Err(Error::Invalid(format!("unknown link `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub link: Link,
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    /// Huber-White sandwich errors with the `n / (n - 1)` small-sample factor.
    pub robust_se: Vec<f64>,
    /// Whether `z` and `p_values` use the robust errors.
    pub robust: bool,
    pub z: Vec<f64>,
    pub p_values: Vec<f64>,
    /// `exp(coef)`; logit only.
    pub odds_ratios: Option<Vec<f64>>,
    pub log_likelihood: f64,
    pub null_log_likelihood: f64,
    pub pseudo_r2: f64,
    pub lr_chi2: f64,
    pub df: usize,
    pub n: usize,
    pub iterations: usize,
}

impl RegressionResult {
    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn used_se(&self) -> &[f64] {
        if self.robust {
            &self.robust_se
        } else {
            &self.se
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite values serialise")
    }

    /// Aligned table in the usual regression-report layout.
    pub fn to_table(&self) -> String {
        let se_head = if self.robust { "Robust SE" } else { "Std. Err." };
        let w = self.names.iter().map(|n| n.len()).max().unwrap_or(8).max(8);
        let mut s = format!(
            "{:<w$} {:>14} {:>10} {:>8} {:>8}",
            "Variable", "Coef.", se_head, "z", "P>|z|"
        );
        if self.odds_ratios.is_some() {
            s.push_str(&format!(" {:>11}", "Odds Ratio"));
        }
        s.push('\n');
        for i in 0..self.names.len() {
            let coef = format!("{:.4}{}", self.coef[i], stars(self.p_values[i]));
            s.push_str(&format!(
                "{:<w$} {:>14} {:>10.4} {:>8.2} {:>8.3}",
                self.names[i],
                coef,
                self.used_se()[i],
                self.z[i],
                self.p_values[i]
            ));
            if let Some(or) = &self.odds_ratios {
                s.push_str(&format!(" {:>11.4}", or[i]));
            }
            s.push('\n');
        }
        s.push_str(&format!(
            "Number of Obs. = {}   Log Likelihood = {:.3}   LR Chi2({}) = {:.3}   Pseudo R2 = {:.4}\n",
            self.n, self.log_likelihood, self.df, self.lr_chi2, self.pseudo_r2
        ));
        s.push_str("***p < 0.001; **p < 0.01; *p < 0.05\n");
        s
    }
}

pub fn stars(p: f64) -> &'static str {
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

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Per-observation log-likelihood, its first and second derivative in the
/// linear predictor.
fn obs_terms(link: Link, eta: f64, y: bool, n01: &Normal) -> (f64, f64, f64) {
    match link {
        Link::Logit => {
            let mu = 1.0 / (1.0 + (-eta).exp());
            let softplus = if eta > 0.0 { eta + (-eta).exp().ln_1p() } else { eta.exp().ln_1p() };
            let ll = if y { eta - softplus } else { -softplus };
            let r = f64::from(u8::from(y)) - mu;
            (ll, r, -mu * (1.0 - mu))
        }
        Link::Probit => {
            // Work with q = 2y - 1 so both outcomes use Φ(qη).
            let q = if y { 1.0 } else { -1.0 };
            let t = q * eta;
            let cdf = n01.cdf(t);
            let (log_cdf, lambda) = if t > -30.0 {
                (cdf.ln(), n01.pdf(t) / cdf)
            } else {
                // Mills-ratio asymptotics in the far tail.
                let lam = -t * (1.0 + 1.0 / (t * t));
                (n01.ln_pdf(t) - (-t).ln() - (1.0 / (t * t)).ln_1p(), lam)
            };
            (log_cdf, q * lambda, -lambda * (lambda + t))
        }
    }
}

/// Index of the first column that lies (numerically) in the span of the
/// columns before it.
fn first_dependent_column(x: &[Vec<f64>], p: usize) -> Option<usize> {
    let n = x.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for j in 0..p {
        let mut v: Vec<f64> = (0..n).map(|i| x[i][j]).collect();
        let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return Some(j);
        }
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= d * c);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            return Some(j);
        }
        v.iter_mut().for_each(|a| *a /= norm);
        basis.push(v);
    }
    None
}

const MAX_ITER: usize = 100;
const SEPARATION_ETA: f64 = 30.0;

/// Newton-Raphson maximum likelihood for a binary GLM. `x` must already
/// contain the intercept column if one is wanted.
pub fn fit_glm_binary(x: &[Vec<f64>], names: &[String], y: &[bool], link: Link, robust: bool) -> Result<RegressionResult> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::Dimension {
            what: "design rows vs outcomes",
            expected: y.len(),
            got: n,
        });
    }
    let p = names.len();
    if let Some(r) = x.iter().find(|r| r.len() != p) {
        return Err(Error::Dimension {
            what: "design columns",
            expected: p,
            got: r.len(),
        });
    }
    if p == 0 || n <= p {
        return Err(Error::Invalid(format!("need more observations ({n}) than columns ({p})")));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite design value".into()));
    }
    let n_pos = y.iter().filter(|&&b| b).count();
    if n_pos == 0 || n_pos == n {
        return Err(Error::SingleClass("binary outcome is constant".into()));
    }
    if let Some(j) = first_dependent_column(x, p) {
        return Err(Error::RankDeficient(names[j].clone()));
    }

    let n01 = std_normal();
    let xm = DMatrix::from_fn(n, p, |i, j| x[i][j]);
    let eval = |beta: &DVector<f64>| {
        let eta = &xm * beta;
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut hess = DMatrix::zeros(p, p);
        let mut s_obs = Vec::with_capacity(n);
        for i in 0..n {
            let (l, d1, d2) = obs_terms(link, eta[i], y[i], &n01);
            ll += l;
            let xi = xm.row(i).transpose();
            score.axpy(d1, &xi, 1.0);
            hess.ger(d2, &xi, &xi, 1.0);
            s_obs.push(d1);
        }
        (ll, score, hess, eta.amax(), s_obs)
    };

    let mut beta = DVector::<f64>::zeros(p);
    let (mut ll, mut score, mut hess, _, _) = eval(&beta);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITER {
        if score.amax() < 1e-8 {
            converged = true;
            break;
        }
        iterations += 1;
        let neg_h = -&hess;
        let step = neg_h
            .clone()
            .cholesky()
            .map(|c| c.solve(&score))
            .or_else(|| neg_h.lu().solve(&score))
            .ok_or_else(|| Error::RankDeficient("information matrix is singular".into()))?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + &step * t;
            let e = eval(&cand);
            if e.0 >= ll - 1e-12 * ll.abs() {
                accepted = Some((cand, e));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, (cll, cscore, chess, max_eta, _))) = accepted else {
            break;
        };
        let moved = (&cand - &beta).amax();
        beta = cand;
        let improved = cll >= ll;
        ll = cll;
        score = cscore;
        hess = chess;
        if max_eta > SEPARATION_ETA && improved {
            let j = (0..p)
                .max_by(|&a, &b| beta[a].abs().total_cmp(&beta[b].abs()))
                .unwrap_or(0);
            return Err(Error::Separation(format!(
                "fitted probabilities reach 0 or 1; coefficient of `{}` diverges",
                names[j]
            )));
        }
        if moved < 1e-10 {
            converged = true;
            break;
        }
    }
    if !converged && score.amax() >= 1e-6 {
        return Err(Error::NoConvergence(iterations));
    }

    let (ll, _, hess, _, s_obs) = eval(&beta);
    let cov = (-hess)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient("information matrix is singular".into()))?;
    let mut meat = DMatrix::<f64>::zeros(p, p);
    for (i, &s) in s_obs.iter().enumerate() {
        let xi = xm.row(i).transpose();
        meat.ger(s * s, &xi, &xi, 1.0);
    }
    let robust_cov = &cov * meat * &cov * (n as f64 / (n as f64 - 1.0));
    let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let robust_se: Vec<f64> = (0..p).map(|j| robust_cov[(j, j)].max(0.0).sqrt()).collect();
    let coef: Vec<f64> = beta.iter().copied().collect();
    let used = if robust { &robust_se } else { &se };
    let z: Vec<f64> = coef.iter().zip(used).map(|(b, s)| b / s).collect();
    let p_values = z.iter().map(|z| 2.0 * n01.sf(z.abs())).collect();
    let ybar = n_pos as f64 / n as f64;
    let null_ll = n as f64 * (ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln());
    let has_intercept = (0..p).any(|j| x.iter().all(|r| r[j] == 1.0));
    Ok(RegressionResult {
        link,
        names: names.to_vec(),
        odds_ratios: (link == Link::Logit).then(|| coef.iter().map(|b| b.exp()).collect()),
        coef,
        se,
        robust_se,
        robust,
        z,
        p_values,
        log_likelihood: ll,
        null_log_likelihood: null_ll,
        pseudo_r2: 1.0 - ll / null_ll,
        lr_chi2: 2.0 * (ll - null_ll),
        df: p - usize::from(has_intercept),
        n,
        iterations,
    })
}

/// Variance inflation factor of each column: `1 / (1 - R²)` from least
/// squares of the column on all others plus an intercept.
pub fn vif(columns: &[Vec<f64>], names: &[String]) -> Result<Vec<f64>> {
    let k = columns.len();
    if k < 2 || names.len() != k {
        return Err(Error::Invalid("vif needs at least two named columns".into()));
    }
    let n = columns[0].len();
    if columns.iter().any(|c| c.len() != n) {
        return Err(Error::Invalid("vif columns differ in length".into()));
    }
    if n <= k {
        return Err(Error::Invalid(format!("need more rows ({n}) than columns ({k})")));
    }
    (0..k)
        .map(|j| {
            let yv = &columns[j];
            let mean = yv.iter().sum::<f64>() / n as f64;
            let sst: f64 = yv.iter().map(|v| (v - mean).powi(2)).sum();
            if sst <= 1e-12 * (1.0 + mean * mean) * n as f64 {
                return Err(Error::Invalid(format!("column `{}` is constant", names[j])));
            }
            let others: Vec<usize> = (0..k).filter(|&c| c != j).collect();
            let a = DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { columns[others[c - 1]][i] });
            let b = DVector::from_column_slice(yv);
            let svd = a.svd(true, true);
            let coef = svd
                .solve(&b, 1e-12)
                .map_err(|e| Error::Invalid(format!("least squares failed: {e}")))?;
            let resid = b - DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { columns[others[c - 1]][i] }) * coef;
            let r2 = 1.0 - resid.norm_squared() / sst;
            if r2 >= 1.0 - 1e-10 {
                return Err(Error::RankDeficient(names[j].clone()));
            }
            Ok(1.0 / (1.0 - r2))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchItem {
    pub condition: String,
    pub chars: usize,
    pub helpful: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// Kept input indices in ascending order.
    pub indices: Vec<usize>,
    /// Upper edges of the character-length bins (last bin is open).
    pub bin_edges: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Length-bin edges at the deciles (for `bins = 10`) of `lengths`.
pub fn quantile_edges(lengths: &[usize], bins: usize) -> Vec<usize> {
    let mut s = lengths.to_vec();
    s.sort_unstable();
    let mut edges: Vec<usize> = (1..bins)
        .map(|k| s[((k * s.len()) / bins).min(s.len() - 1)])
        .collect();
    edges.dedup();
    edges
}

pub fn length_bin(chars: usize, edges: &[usize]) -> usize {
    edges.iter().take_while(|&&e| chars >= e).count()
}

/// Balances helpful and non-helpful rows inside every (condition,
/// length-bin) cell by keeping the minority class and a seeded sample of the
/// majority class of equal size.
pub fn matched_undersample(items: &[MatchItem], bins: usize, seed: u64) -> Result<MatchResult> {
    if items.is_empty() || bins == 0 {
        return Err(Error::Invalid("matching needs rows and at least one bin".into()));
    }
    let lengths: Vec<usize> = items.iter().map(|i| i.chars).collect();
    let edges = quantile_edges(&lengths, bins);
    let mut cells: BTreeMap<(String, usize), (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for (i, it) in items.iter().enumerate() {
        let cell = cells.entry((it.condition.clone(), length_bin(it.chars, &edges))).or_default();
        if it.helpful {
            cell.0.push(i);
        } else {
            cell.1.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    let mut warnings = Vec::new();
    for ((cond, bin), (pos, neg)) in &cells {
        let m = pos.len().min(neg.len());
        if m == 0 {
            warnings.push(format!(
                "cell ({cond}, bin {bin}) has {} helpful and {} non-helpful rows; dropped",
                pos.len(),
                neg.len()
            ));
            continue;
        }
        for side in [pos, neg] {
            if side.len() == m {
                indices.extend_from_slice(side);
            } else {
                indices.extend(sample(&mut rng, side.len(), m).into_iter().map(|k| side[k]));
            }
        }
    }
    indices.sort_unstable();
    Ok(MatchResult {
        indices,
        bin_edges: edges,
        warnings,
    })
}

/// 2×2 counts of ISR (rows) by HELPFUL (columns).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    /// `counts[isr][helpful]`.
    pub counts: [[u64; 2]; 2],
}

impl ContingencyTable {
    pub fn from_flags(isr: &[bool], helpful: &[bool]) -> Self {
        let mut counts = [[0u64; 2]; 2];
        for (&r, &h) in isr.iter().zip(helpful) {
            counts[usize::from(r)][usize::from(h)] += 1;
        }
        Self { counts }
    }

    pub fn odds_ratio(&self) -> f64 {
        let c = &self.counts;
        (c[1][1] as f64 * c[0][0] as f64) / (c[1][0] as f64 * c[0][1] as f64)
    }

    /// Expands the counts back into one (ISR, HELPFUL) row per observation.
    pub fn expand(&self) -> (Vec<bool>, Vec<bool>) {
        let mut isr = Vec::new();
        let mut helpful = Vec::new();
        for r in 0..2 {
            for h in 0..2 {
                for _ in 0..self.counts[r][h] {
                    isr.push(r == 1);
                    helpful.push(h == 1);
                }
            }
        }
        (isr, helpful)
    }

    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!(
            ",Non-helpful,Helpful\nNon-ISR,{},{}\nISR,{},{}\n",
            c[0][0], c[0][1], c[1][0], c[1][1]
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionCoding {
    /// One regressor holding the condition's 1-based rank in sorted order.
    Ordinal,
    /// One dummy per condition except the first.
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessOptions {
    pub bins: usize,
    pub seed: u64,
    pub coding: ConditionCoding,
    pub link: Link,
}

impl Default for HelpfulnessOptions {
    fn default() -> Self {
        Self {
            bins: 10,
            seed: 0,
            coding: ConditionCoding::Ordinal,
            link: Link::Logit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HelpfulnessReport {
    pub result: RegressionResult,
    pub contingency: ContingencyTable,
    pub matched: MatchResult,
    pub n_input: usize,
    /// Regression design of the matched rows, columns as in `result.names`.
    pub design: Vec<Vec<f64>>,
    pub response: Vec<bool>,
}

/// Matched undersampling on (condition, character-length bin) followed by a
/// robust binary regression of HELPFUL on ISR, R_LEN (characters),
/// M_CONDITION, R_PWRC and Q_MED_EXPERT.
pub fn helpfulness_analysis(corpus: &Corpus, isr: &[bool], opts: &HelpfulnessOptions) -> Result<HelpfulnessReport> {
    if isr.len() != corpus.len() {
        return Err(Error::Dimension {
            what: "ISR predictions vs pairs",
            expected: corpus.len(),
            got: isr.len(),
        });
    }
    let helpful: Vec<bool> = corpus
        .pairs
        .iter()
        .map(|p| {
            p.helpful
                .ok_or_else(|| Error::Invalid(format!("pair `{}` has no helpful flag", p.pair_id)))
        })
        .collect::<Result<_>>()?;
    let items: Vec<MatchItem> = corpus
        .pairs
        .iter()
        .zip(&helpful)
        .map(|(p, &h)| MatchItem {
            condition: p.condition.clone(),
            chars: p.response_text.chars().count(),
            helpful: h,
        })
        .collect();
    let matched = matched_undersample(&items, opts.bins, opts.seed)?;
    let conditions: Vec<String> = corpus.conditions().into_iter().collect();
    let mut names = vec!["Intercept".to_string(), "ISR".into(), "R_LEN".into()];
    let multi = conditions.len() > 1;
    if multi {
        match opts.coding {
            ConditionCoding::Ordinal => names.push("M_CONDITION".into()),
            ConditionCoding::OneHot => names.extend(conditions[1..].iter().map(|c| format!("M_CONDITION[{c}]"))),
        }
    }
    names.push("R_PWRC".into());
    names.push("Q_MED_EXPERT".into());
    let mut x = Vec::with_capacity(matched.indices.len());
    let mut y = Vec::with_capacity(matched.indices.len());
    for &i in &matched.indices {
        let p = &corpus.pairs[i];
        let mut row = vec![1.0, f64::from(u8::from(isr[i])), items[i].chars as f64];
        let rank = conditions.iter().position(|c| *c == p.condition).unwrap_or(0);
        if multi {
            match opts.coding {
                ConditionCoding::Ordinal => row.push((rank + 1) as f64),
                ConditionCoding::OneHot => row.extend((1..conditions.len()).map(|k| f64::from(u8::from(k == rank)))),
            }
        }
        row.push(p.r_user.platform_response_count as f64);
        row.push(f64::from(u8::from(p.q_user.med_expert)));
        x.push(row);
        y.push(helpful[i]);
    }
    let result = fit_glm_binary(&x, &names, &y, opts.link, true)?;
    let kept_isr: Vec<bool> = matched.indices.iter().map(|&i| isr[i]).collect();
    Ok(HelpfulnessReport {
        contingency: ContingencyTable::from_flags(&kept_isr, &y),
        result,
        matched,
        n_input: corpus.len(),
        design: x,
        response: y,
    })
}
