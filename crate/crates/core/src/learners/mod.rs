//! Classical baselines and greedy ensemble selection.

mod ensemble;
pub mod tree;

pub use ensemble::{greedy_ensemble, log_loss, EnsembleWeights};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use tree::{LeafRule, Tree, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineKind {
    Logistic {
        l2: f64,
    },
    LinearSvm {
        lambda: f64,
        epochs: usize,
    },
    Knn {
        k: usize,
    },
    RandomForest {
        trees: usize,
        max_depth: usize,
        min_samples_leaf: usize,
    },
    GradientBoosting {
        rounds: usize,
        learning_rate: f64,
        max_depth: usize,
    },
}

impl BaselineKind {
    pub fn logistic() -> Self {
        Self::Logistic { l2: 1.0 }
    }
    pub fn linear_svm() -> Self {
        Self::LinearSvm { lambda: 1e-3, epochs: 50 }
    }
    pub fn knn() -> Self {
        Self::Knn { k: 15 }
    }
    pub fn random_forest() -> Self {
        Self::RandomForest {
            trees: 300,
            max_depth: 8,
            min_samples_leaf: 1,
        }
    }
    pub fn gradient_boosting() -> Self {
        Self::GradientBoosting {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Logistic { .. } => "Logistic",
            Self::LinearSvm { .. } => "SVM",
            Self::Knn { .. } => "KNN",
            Self::RandomForest { .. } => "Random Forest",
            Self::GradientBoosting { .. } => "Gradient Boosting",
        }
    }

    /// Default-configured instance by short name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "logistic" => Ok(Self::logistic()),
            "svm" | "linear_svm" => Ok(Self::linear_svm()),
            "knn" => Ok(Self::knn()),
            "random_forest" | "rf" => Ok(Self::random_forest()),
            "gradient_boosting" | "gb" => Ok(Self::gradient_boosting()),
            other => Err(Error::Invalid(format!("unknown baseline `{other}`"))),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Logistic { l2 } => l2 >= 0.0,
            Self::LinearSvm { lambda, epochs } => lambda > 0.0 && epochs > 0,
            Self::Knn { k } => k > 0,
            Self::RandomForest { trees, max_depth, min_samples_leaf } => {
                trees > 0 && max_depth > 0 && min_samples_leaf > 0
            }
            Self::GradientBoosting { rounds, learning_rate, max_depth } => {
                rounds > 0 && learning_rate > 0.0 && max_depth > 0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Invalid(format!("invalid hyperparameters for {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineModel {
    Logistic {
        weights: Vec<f64>,
        bias: f64,
    },
    LinearSvm {
        weights: Vec<f64>,
        bias: f64,
        /// Logistic link on the margin: `σ(scale · margin + shift)`.
        scale: f64,
        shift: f64,
    },
    Knn {
        k: usize,
        rows: Vec<Vec<f64>>,
        labels: Vec<bool>,
    },
    RandomForest {
        n_features: usize,
        trees: Vec<Tree>,
    },
    GradientBoosting {
        n_features: usize,
        init: f64,
        learning_rate: f64,
        trees: Vec<(f64, Tree)>,
        /// Training log-loss after the initial constant and after each round.
        train_loss: Vec<f64>,
    },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_xy(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Invalid("rows and labels must be non-empty and equal in length".into()));
    }
    let d = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != d) {
        return Err(Error::Dimension {
            what: "baseline design row",
            expected: d,
            got: r.len(),
        });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite design value".into()));
    }
    let pos = y.iter().filter(|&&b| b).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass("baseline training labels".into()));
    }
    Ok(d)
}

/// Fits one baseline on dense rows.
pub fn train_baseline(kind: &BaselineKind, x: &[Vec<f64>], y: &[bool], seed: u64) -> Result<BaselineModel> {
    kind.validate()?;
    let d = check_xy(x, y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match *kind {
        BaselineKind::Logistic { l2 } => {
            let (weights, bias) = fit_logistic_irls(x, y, l2)?;
            BaselineModel::Logistic { weights, bias }
        }
        BaselineKind::LinearSvm { lambda, epochs } => fit_svm(x, y, lambda, epochs, &mut rng),
        BaselineKind::Knn { k } => BaselineModel::Knn {
            k,
            rows: x.to_vec(),
            labels: y.to_vec(),
        },
        BaselineKind::RandomForest { trees, max_depth, min_samples_leaf } => {
            let target: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
            let params = TreeParams {
                max_depth,
                min_samples_leaf,
                max_features: Some(((d as f64).sqrt().ceil() as usize).max(1)),
            };
            let n = x.len();
            let fitted = (0..trees)
                .map(|_| {
                    let mut tree_rng = ChaCha8Rng::seed_from_u64(rng.random());
                    let boot: Vec<usize> = (0..n).map(|_| tree_rng.random_range(0..n)).collect();
                    Tree::fit(x, &target, boot, params, LeafRule::Mean, &mut tree_rng)
                })
                .collect();
            BaselineModel::RandomForest {
                n_features: d,
                trees: fitted,
            }
        }
        BaselineKind::GradientBoosting { rounds, learning_rate, max_depth } => {
            fit_boosting(x, y, rounds, learning_rate, max_depth, &mut rng)
        }
    })
}

/// L2-penalised logistic regression by iteratively reweighted least squares.
/// The intercept is not penalised.
fn fit_logistic_irls(x: &[Vec<f64>], y: &[bool], l2: f64) -> Result<(Vec<f64>, f64)> {
    let n = x.len();
    let d = x[0].len();
    let p = d + 1;
    let mut beta = DVector::<f64>::zeros(p);
    let design = |i: usize, j: usize| if j == d { 1.0 } else { x[i][j] };
    for _ in 0..100 {
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut g = DVector::<f64>::zeros(p);
        for i in 0..n {
            let z: f64 = (0..p).map(|j| design(i, j) * beta[j]).sum();
            let mu = sigmoid(z);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let r = f64::from(u8::from(y[i])) - mu;
            for a in 0..p {
                let xa = design(i, a);
                if xa == 0.0 {
                    continue;
                }
                g[a] += xa * r;
                for b in a..p {
                    h[(a, b)] += w * xa * design(i, b);
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for j in 0..d {
            h[(j, j)] += l2;
            g[j] -= l2 * beta[j];
        }
        // Keeps the system solvable when l2 = 0 and the design is degenerate.
        for j in 0..p {
            h[(j, j)] += 1e-10;
        }
        let step = h
            .cholesky()
            .ok_or_else(|| Error::Invalid("logistic Hessian is not positive definite".into()))?
            .solve(&g);
        beta += &step;
        if step.amax() < 1e-10 {
            break;
        }
    }
    let bias = beta[d];
    Ok((beta.as_slice()[..d].to_vec(), bias))
}

/// Pegasos-style subgradient descent on the hinge loss, followed by a
/// one-dimensional logistic fit on the training margins.
fn fit_svm(x: &[Vec<f64>], y: &[bool], lambda: f64, epochs: usize, rng: &mut ChaCha8Rng) -> BaselineModel {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..x.len()).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * (t as f64 + 10.0));
            let yi = if y[i] { 1.0 } else { -1.0 };
            let margin = yi * (dot(&w, &x[i]) + b);
            w.iter_mut().for_each(|wj| *wj *= 1.0 - eta * lambda);
            if margin < 1.0 {
                for (wj, xj) in w.iter_mut().zip(&x[i]) {
                    *wj += eta * yi * xj;
                }
                b += eta * yi;
            }
        }
    }
    let margins: Vec<f64> = x.iter().map(|r| dot(&w, r) + b).collect();
    let (scale, shift) = fit_margin_link(&margins, y);
    BaselineModel::LinearSvm {
        weights: w,
        bias: b,
        scale,
        shift,
    }
}

/// Newton's method for `P(y=1) = σ(a·m + c)` with a tiny ridge for stability.
fn fit_margin_link(m: &[f64], y: &[bool]) -> (f64, f64) {
    let (mut a, mut c) = (1.0, 0.0);
    for _ in 0..50 {
        let (mut g0, mut g1, mut h00, mut h01, mut h11) = (0.0, 0.0, 1e-6, 0.0, 1e-6);
        for (&mi, &yi) in m.iter().zip(y) {
            let p = sigmoid(a * mi + c);
            let r = f64::from(u8::from(yi)) - p;
            let w = p * (1.0 - p);
            g0 += r * mi;
            g1 += r;
            h00 += w * mi * mi;
            h01 += w * mi;
            h11 += w;
        }
        g0 -= 1e-6 * a;
        g1 -= 1e-6 * c;
        let det = h00 * h11 - h01 * h01;
        if det.abs() < 1e-300 {
            break;
        }
        let da = (h11 * g0 - h01 * g1) / det;
        let dc = (h00 * g1 - h01 * g0) / det;
        a += da;
        c += dc;
        if da.abs().max(dc.abs()) < 1e-10 {
            break;
        }
    }
    (a, c)
}

fn fit_boosting(
    x: &[Vec<f64>],
    y: &[bool],
    rounds: usize,
    learning_rate: f64,
    max_depth: usize,
    rng: &mut ChaCha8Rng,
) -> BaselineModel {
    let n = x.len();
    let yf: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
    let prior = yf.iter().sum::<f64>() / n as f64;
    let init = (prior / (1.0 - prior)).ln();
    let mut f = vec![init; n];
    let loss_of = |f: &[f64]| -> f64 {
        f.iter()
            .zip(&yf)
            .map(|(&z, &t)| crate::fusenet::bce_with_logit(z, t))
            .sum::<f64>()
            / n as f64
    };
    let mut train_loss = vec![loss_of(&f)];
    let mut trees = Vec::new();
    let params = TreeParams {
        max_depth,
        min_samples_leaf: 1,
        max_features: None,
    };
    for _ in 0..rounds {
        let p: Vec<f64> = f.iter().map(|&z| sigmoid(z)).collect();
        let resid: Vec<f64> = p.iter().zip(&yf).map(|(p, t)| t - p).collect();
        let hess: Vec<f64> = p.iter().map(|p| (p * (1.0 - p)).max(1e-12)).collect();
        let tree = Tree::fit(x, &resid, (0..n).collect(), params, LeafRule::Newton(&hess), rng);
        let delta: Vec<f64> = x.iter().map(|r| tree.predict(r)).collect();
        let current = *train_loss.last().unwrap();
        // Backtrack so the training loss never increases.
        let mut scale = learning_rate;
        let mut accepted = None;
        for _ in 0..20 {
            let cand: Vec<f64> = f.iter().zip(&delta).map(|(z, d)| z + scale * d).collect();
            let l = loss_of(&cand);
            if l <= current {
                accepted = Some((cand, l));
                break;
            }
            scale *= 0.5;
        }
        let Some((cand, l)) = accepted else { break };
        f = cand;
        train_loss.push(l);
        trees.push((scale, tree));
    }
    BaselineModel::GradientBoosting {
        n_features: x[0].len(),
        init,
        learning_rate,
        trees,
        train_loss,
    }
}

impl BaselineModel {
    pub fn n_features(&self) -> usize {
        match self {
            Self::Logistic { weights, .. } | Self::LinearSvm { weights, .. } => weights.len(),
            Self::Knn { rows, .. } => rows.first().map_or(0, Vec::len),
            Self::RandomForest { n_features, .. } | Self::GradientBoosting { n_features, .. } => *n_features,
        }
    }

    fn predict_row(&self, r: &[f64]) -> f64 {
        match self {
            Self::Logistic { weights, bias } => sigmoid(dot(weights, r) + bias),
            Self::LinearSvm { weights, bias, scale, shift } => sigmoid(scale * (dot(weights, r) + bias) + shift),
            Self::Knn { k, rows, labels } => {
                let mut dist: Vec<(f64, usize)> = rows
                    .iter()
                    .enumerate()
                    .map(|(i, t)| (t.iter().zip(r).map(|(a, b)| (a - b).powi(2)).sum(), i))
                    .collect();
                let k = (*k).min(dist.len());
                dist.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let pos = dist[..k].iter().filter(|(_, i)| labels[*i]).count();
                pos as f64 / k as f64
            }
            Self::RandomForest { trees, .. } => {
                let votes = trees.iter().filter(|t| t.predict(r) > 0.5).count();
                votes as f64 / trees.len() as f64
            }
            Self::GradientBoosting { init, trees, .. } => {
                sigmoid(init + trees.iter().map(|(s, t)| s * t.predict(r)).sum::<f64>())
            }
        }
    }

    pub fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let d = self.n_features();
        x.iter()
            .map(|r| {
                if r.len() != d {
                    return Err(Error::Dimension {
                        what: "baseline input row",
                        expected: d,
                        got: r.len(),
                    });
                }
                Ok(self.predict_row(r))
            })
            .collect()
    }
}

pub fn predict_baseline(model: &BaselineModel, x: &[Vec<f64>]) -> Result<Vec<f64>> {
    model.predict(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accuracy(p: &[f64], y: &[bool]) -> f64 {
        p.iter().zip(y).filter(|(p, y)| (**p > 0.5) == **y).count() as f64 / y.len() as f64
    }

    /// XOR layout: 200 points, label = sign(x0) != sign(x1).
    fn xor(seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        while x.len() < 200 {
            let a: f64 = rng.random_range(-1.0..1.0);
            let b: f64 = rng.random_range(-1.0..1.0);
            if a.abs() < 0.05 || b.abs() < 0.05 {
                continue;
            }
            x.push(vec![a, b]);
            y.push((a > 0.0) != (b > 0.0));
        }
        (x, y)
    }

    /// Evaluation grid over [-0.95, 0.95]², skipping the axes.
    fn grid() -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let a = -0.95 + 0.1 * i as f64;
                let b = -0.95 + 0.1 * j as f64;
                x.push(vec![a, b]);
                y.push((a > 0.0) != (b > 0.0));
            }
        }
        (x, y)
    }

    #[test]
    fn knn_one_memorises() {
        let (x, y) = xor(1);
        let m = train_baseline(&BaselineKind::Knn { k: 1 }, &x, &y, 0).unwrap();
        assert_eq!(accuracy(&m.predict(&x).unwrap(), &y), 1.0);
    }

    #[test]
    fn logistic_learns_direction() {
        let x: Vec<Vec<f64>> = (-10..=10).filter(|&i| i != 0).map(|i| vec![i as f64 / 10.0 + if i > 0 { 1.0 } else { -1.0 }]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.0).collect();
        let m = train_baseline(&BaselineKind::logistic(), &x, &y, 0).unwrap();
        match m {
            BaselineModel::Logistic { ref weights, .. } => assert!(weights[0] > 0.0),
            _ => unreachable!(),
        }
        assert_eq!(accuracy(&m.predict(&x).unwrap(), &y), 1.0);
    }

    #[test]
    fn forest_solves_xor_where_logistic_cannot() {
        let (x, y) = xor(7);
        let (gx, gy) = grid();
        let rf = BaselineKind::RandomForest { trees: 100, max_depth: 8, min_samples_leaf: 1 };
        let rf = train_baseline(&rf, &x, &y, 3).unwrap();
        let lr = train_baseline(&BaselineKind::logistic(), &x, &y, 3).unwrap();
        let acc_rf = accuracy(&rf.predict(&gx).unwrap(), &gy);
        let acc_lr = accuracy(&lr.predict(&gx).unwrap(), &gy);
        assert!(acc_rf > 0.9, "forest {acc_rf}");
        assert!(acc_lr <= 0.6, "logistic {acc_lr}");
    }

    #[test]
    fn boosting_loss_non_increasing_and_fits_xor() {
        let (x, y) = xor(2);
        let m = train_baseline(&BaselineKind::gradient_boosting(), &x, &y, 0).unwrap();
        let BaselineModel::GradientBoosting { ref train_loss, .. } = m else { unreachable!() };
        assert!(train_loss.windows(2).all(|w| w[1] <= w[0]));
        let (gx, gy) = grid();
        assert!(accuracy(&m.predict(&gx).unwrap(), &gy) > 0.9);
    }

    #[test]
    fn svm_separates_and_is_calibrated() {
        let x: Vec<Vec<f64>> = (0..100).map(|i| vec![(i as f64 - 49.5) / 10.0, (i % 7) as f64]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.0).collect();
        let m = train_baseline(&BaselineKind::linear_svm(), &x, &y, 4).unwrap();
        let p = m.predict(&x).unwrap();
        assert!(accuracy(&p, &y) >= 0.98);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(p[99] > p[0]);
    }

    #[test]
    fn baselines_are_deterministic_permutation_equivariant_and_checked() {
        let (x, y) = xor(3);
        for kind in [
            BaselineKind::logistic(),
            BaselineKind::linear_svm(),
            BaselineKind::knn(),
            BaselineKind::RandomForest { trees: 20, max_depth: 4, min_samples_leaf: 1 },
            BaselineKind::GradientBoosting { rounds: 20, learning_rate: 0.1, max_depth: 2 },
        ] {
            let a = train_baseline(&kind, &x, &y, 5).unwrap();
            let b = train_baseline(&kind, &x, &y, 5).unwrap();
            assert_eq!(a, b, "{}", kind.name());
            let p = a.predict(&x).unwrap();
            assert_eq!(a.predict(&x[..1]).unwrap()[0], p[0]);
            let rev: Vec<Vec<f64>> = x.iter().rev().cloned().collect();
            let q = a.predict(&rev).unwrap();
            assert!(p.iter().rev().zip(&q).all(|(u, v)| u == v));
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(matches!(a.predict(&[vec![1.0]]), Err(Error::Dimension { .. })));
            assert!(matches!(
                train_baseline(&kind, &x, &vec![true; x.len()], 0),
                Err(Error::SingleClass(_))
            ));
        }
    }
}
