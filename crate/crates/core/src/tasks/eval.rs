use serde::{Deserialize, Serialize};

use super::generate::{argmax, TaskInstance};
use crate::attention::Model;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    /// Fraction of instances whose anchor attends most to the target's argmax.
    pub accuracy: f64,
    /// Mean per-instance Spearman correlation between anchor logits and
    /// negative distance over the non-anchor tokens; absent when no
    /// instance has at least two candidates.
    pub spearman: Option<f64>,
}

/// Anchor-row statistics for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRow {
    pub weights: Vec<f64>,
    pub logits: Vec<f64>,
}

/// Runs the model with the anchor's self-attention masked and scores the
/// head-averaged anchor row of the last block.
pub fn evaluate(model: &Model, instances: &[TaskInstance]) -> Result<EvalReport> {
    let rows = instances
        .iter()
        .map(|inst| {
            let pass = model.forward(&inst.tokens, Some(inst.anchor))?;
            let last = pass.last_attention();
            Ok(AnchorRow {
                weights: last.mean_weights_row(inst.anchor),
                logits: last.mean_logits_row(inst.anchor),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(score_rows(&rows, instances))
}

/// Scores precomputed anchor rows against their instances.
pub fn score_rows(rows: &[AnchorRow], instances: &[TaskInstance]) -> EvalReport {
    let mut hits = 0usize;
    let mut rho_sum = 0.0;
    let mut rho_count = 0usize;
    for (row, inst) in rows.iter().zip(instances) {
        if argmax(&row.weights) == inst.target_argmax() {
            hits += 1;
        }
        let (logits, neg_dist): (Vec<f64>, Vec<f64>) = (0..inst.tokens.len())
            .filter(|&j| j != inst.anchor)
            .map(|j| (row.logits[j], -inst.distances[j]))
            .unzip();
        if let Some(rho) = spearman(&logits, &neg_dist) {
            rho_sum += rho;
            rho_count += 1;
        }
    }
    let n = rows.len().min(instances.len());
    EvalReport {
        instances: n,
        accuracy: if n == 0 { 0.0 } else { hits as f64 / n as f64 },
        spearman: (rho_count > 0).then(|| rho_sum / rho_count as f64),
    }
}

/// Ranks starting at 1, ties receive their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` for fewer than two points or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    })
}

/// `p ± k·sqrt(p(1−p)/n)`, the band a binomial proportion falls in by chance.
pub fn binomial_band(p: f64, n: usize, k: f64) -> (f64, f64) {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    (p - k * sigma, p + k * sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{make_position, Geotoken, SphereModel};
    use crate::tasks::generate::nearest_neighbor_instance;

    fn three_token_instance() -> TaskInstance {
        let toks = [(0.0, 0.0), (0.0, 10.0), (0.0, 40.0)]
            .iter()
            .enumerate()
            .map(|(i, &(la, lo))| Geotoken::new(format!("t{i}"), make_position(la, lo).unwrap(), vec![0.0; 3]).unwrap())
            .collect();
        nearest_neighbor_instance(toks, 0, &SphereModel::unit()).unwrap()
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0], &[1.0]), None);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]), None);
        let r = spearman(&[1.0, 2.0, 2.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }

    #[test]
    fn anti_correlated_logits() {
        let inst = three_token_instance();
        // logits grow with distance: rank reversal against negative distance
        let row = AnchorRow {
            weights: vec![0.0, 0.3, 0.7],
            logits: vec![0.0, 1.0, 2.0],
        };
        let report = score_rows(&[row], &[inst]);
        assert_eq!(report.spearman, Some(-1.0));
        assert_eq!(report.accuracy, 0.0);
    }

    #[test]
    fn oracle_rows_are_perfect() {
        let inst = three_token_instance();
        let row = AnchorRow {
            weights: inst.target.clone(),
            logits: inst.distances.iter().map(|d| -d).collect(),
        };
        let report = score_rows(&[row.clone(), row], &[inst.clone(), inst]);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.spearman, Some(1.0));
    }

    #[test]
    fn spearman_absent_with_one_candidate() {
        let toks = vec![
            Geotoken::new("a", make_position(0.0, 0.0).unwrap(), vec![0.0; 3]).unwrap(),
            Geotoken::new("b", make_position(1.0, 0.0).unwrap(), vec![0.0; 3]).unwrap(),
        ];
        let inst = nearest_neighbor_instance(toks, 0, &SphereModel::unit()).unwrap();
        let row = AnchorRow {
            weights: vec![0.0, 1.0],
            logits: vec![0.0, 1.0],
        };
        assert_eq!(score_rows(&[row], &[inst]).spearman, None);
    }

    #[test]
    fn median_and_band() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
        let (lo, hi) = binomial_band(0.5, 100, 2.0);
        assert!((lo - 0.4).abs() < 1e-12 && (hi - 0.6).abs() < 1e-12);
    }
}
