use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const CLIP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleWeights {
    pub weights: Vec<f64>,
    /// Validation log-loss of the weighted blend.
    pub val_loss: f64,
}

impl EnsembleWeights {
    pub fn blend(&self, probs: &[Vec<f64>]) -> Result<Vec<f64>> {
        if probs.len() != self.weights.len() {
            return Err(Error::Dimension {
                what: "ensemble candidates",
                expected: self.weights.len(),
                got: probs.len(),
            });
        }
        let n = probs.first().map_or(0, Vec::len);
        Ok((0..n)
            .map(|i| self.weights.iter().zip(probs).map(|(w, p)| w * p[i]).sum())
            .collect())
    }
}

/// Mean binary log-loss with probabilities clipped away from 0 and 1.
pub fn log_loss(p: &[f64], y: &[bool]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = p.clamp(CLIP, 1.0 - CLIP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    s / y.len().max(1) as f64
}

/// Greedy forward selection with replacement. Starts from the best single
/// candidate; every round adds the candidate that minimises the loss of the
/// uniform average over all selections so far. All `max_rounds` rounds run
/// and the best prefix of the selection sequence is kept, so the result is
/// never worse than the best single candidate.
pub fn greedy_ensemble(val_probs: &[Vec<f64>], y_val: &[bool], max_rounds: usize) -> Result<EnsembleWeights> {
    if val_probs.is_empty() {
        return Err(Error::Invalid("ensemble needs at least one candidate".into()));
    }
    for p in val_probs {
        if p.len() != y_val.len() {
            return Err(Error::Dimension {
                what: "ensemble candidate predictions",
                expected: y_val.len(),
                got: p.len(),
            });
        }
    }
    let m = val_probs.len();
    let n = y_val.len();
    let losses: Vec<f64> = val_probs.iter().map(|p| log_loss(p, y_val)).collect();
    let first = (0..m).min_by(|&a, &b| losses[a].total_cmp(&losses[b])).unwrap_or(0);

    let mut counts = vec![0usize; m];
    counts[first] = 1;
    let mut sum = val_probs[first].clone();
    let mut best_counts = counts.clone();
    let mut best_loss = losses[first];
    let mut cand = vec![0.0; n];
    for round in 1..max_rounds.max(1) {
        let k = (round + 1) as f64;
        let mut pick: Option<(f64, usize)> = None;
        for (c, p) in val_probs.iter().enumerate() {
            for i in 0..n {
                cand[i] = (sum[i] + p[i]) / k;
            }
            let l = log_loss(&cand, y_val);
            if pick.is_none_or(|(b, _)| l < b) {
                pick = Some((l, c));
            }
        }
        let Some((l, c)) = pick else { break };
        counts[c] += 1;
        for i in 0..n {
            sum[i] += val_probs[c][i];
        }
        if l < best_loss {
            best_loss = l;
            best_counts.clone_from(&counts);
        }
    }
    let total: usize = best_counts.iter().sum();
    let weights = best_counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(EnsembleWeights {
        weights,
        val_loss: best_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_best(a: &[f64], b: &[f64], y: &[bool]) -> f64 {
        (0..=100)
            .map(|k| {
                let w = k as f64 / 100.0;
                let p: Vec<f64> = a.iter().zip(b).map(|(x, z)| w * x + (1.0 - w) * z).collect();
                log_loss(&p, y)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn single_candidate_gets_all_weight() {
        let w = greedy_ensemble(&[vec![0.2, 0.7]], &[false, true], 10).unwrap();
        assert_eq!(w.weights, vec![1.0]);
    }

    #[test]
    fn perfect_candidate_dominates() {
        let y = [true, false, true, true];
        let exact: Vec<f64> = y.iter().map(|&b| f64::from(u8::from(b))).collect();
        let w = greedy_ensemble(&[vec![0.6, 0.4, 0.5, 0.7], exact, vec![0.5; 4]], &y, 20).unwrap();
        assert_eq!(w.weights, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn complementary_pair_matches_grid() {
        let y = [true, true, false, false];
        let a = vec![0.9, 0.4, 0.1, 0.6];
        let b = vec![0.4, 0.9, 0.6, 0.1];
        let w = greedy_ensemble(&[a.clone(), b.clone()], &y, 100).unwrap();
        assert!((w.val_loss - grid_best(&a, &b, &y)).abs() < 1e-9);
        assert!((w.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn never_worse_than_best_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 40;
            let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let m = rng.random_range(1..6);
            let probs: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random::<f64>()).collect()).collect();
            let w = greedy_ensemble(&probs, &y, 50).unwrap();
            let best = probs.iter().map(|p| log_loss(p, &y)).fold(f64::INFINITY, f64::min);
            assert!(w.val_loss <= best + 1e-12);
            assert!((log_loss(&w.blend(&probs).unwrap(), &y) - w.val_loss).abs() < 1e-12);
        }
    }
}
