//! One-to-one assignment of predictions to ground-truth lines.

use alloc::vec;
use alloc::vec::Vec;

use crate::evaluation::Prediction;
use crate::geometry::LineSegment;

use super::LossWeights;

/// L1 distance over the four endpoint coordinates.
pub fn l1_distance(a: &LineSegment, b: &LineSegment) -> f64 {
    a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).sum()
}

/// L1 distance minimized over the endpoint order of `truth`.
pub fn line_cost(pred: &LineSegment, truth: &LineSegment) -> f64 {
    l1_distance(pred, truth).min(l1_distance(pred, &truth.swapped()))
}

/// Minimum-cost assignment of every row to a distinct column of a row-major
/// `rows x cols` matrix with `rows <= cols`. Returns the column of each row.
pub fn hungarian(cost: &[f64], rows: usize, cols: usize) -> Vec<usize> {
    assert!(rows <= cols, "hungarian needs rows <= cols");
    assert_eq!(cost.len(), rows * cols);
    let (n, m) = (rows, cols);
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * m + j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Ground-truth index matched to each prediction; `None` is background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Assignment {
    pub pred_to_truth: Vec<Option<usize>>,
}

impl Assignment {
    pub fn matched(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pred_to_truth
            .iter()
            .enumerate()
            .filter_map(|(p, t)| t.map(|t| (p, t)))
    }
}

/// `cost(i, j) = w_line * line_cost(pred_i, truth_j) - w_class * score_i`.
pub fn match_cost(pred: &Prediction, truth: &LineSegment, weights: &LossWeights) -> f64 {
    weights.w_line * line_cost(&pred.line, truth) - weights.w_class * pred.score
}

/// Optimal one-to-one matching; with more truths than predictions some truths
/// stay unmatched.
pub fn bipartite_match(predictions: &[Prediction], truths: &[LineSegment], weights: &LossWeights) -> Assignment {
    let (np, nt) = (predictions.len(), truths.len());
    let mut pred_to_truth = vec![None; np];
    if np == 0 || nt == 0 {
        return Assignment { pred_to_truth };
    }
    if nt <= np {
        let mut cost = Vec::with_capacity(nt * np);
        for t in truths {
            cost.extend(predictions.iter().map(|p| match_cost(p, t, weights)));
        }
        for (t, p) in hungarian(&cost, nt, np).into_iter().enumerate() {
            pred_to_truth[p] = Some(t);
        }
    } else {
        let mut cost = Vec::with_capacity(nt * np);
        for p in predictions {
            cost.extend(truths.iter().map(|t| match_cost(p, t, weights)));
        }
        for (p, t) in hungarian(&cost, np, nt).into_iter().enumerate() {
            pred_to_truth[p] = Some(t);
        }
    }
    Assignment { pred_to_truth }
}

/// Total matching cost of an assignment.
pub fn assignment_cost(
    predictions: &[Prediction],
    truths: &[LineSegment],
    assignment: &Assignment,
    weights: &LossWeights,
) -> f64 {
    assignment
        .matched()
        .map(|(p, t)| match_cost(&predictions[p], &truths[t], weights))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn w() -> LossWeights {
        LossWeights { w_line: 5.0, w_class: 1.0 }
    }

    fn p(v: [f64; 4], score: f64) -> Prediction {
        Prediction {
            line: LineSegment::from_array(v),
            score,
        }
    }

    #[test]
    fn two_by_two_diagonal() {
        assert_eq!(hungarian(&[1.0, 10.0, 10.0, 1.0], 2, 2), vec![0, 1]);
        assert_eq!(hungarian(&[10.0, 1.0, 1.0, 10.0], 2, 2), vec![1, 0]);
    }

    #[test]
    fn exact_prediction_is_matched() {
        let gt = LineSegment::from_array([0.1, 0.2, 0.6, 0.7]);
        let preds = [p([0.9, 0.9, 0.8, 0.1], 0.5), p(gt.to_array(), 0.5)];
        let a = bipartite_match(&preds, &[gt], &w());
        assert_eq!(a.pred_to_truth, vec![None, Some(0)]);
    }

    #[test]
    fn swapped_prediction_costs_nothing() {
        let gt = LineSegment::from_array([0.1, 0.2, 0.6, 0.7]);
        assert_eq!(line_cost(&gt.swapped(), &gt), 0.0);
        let preds = [p([0.5, 0.5, 0.5, 0.6], 0.5), p(gt.swapped().to_array(), 0.5)];
        assert_eq!(bipartite_match(&preds, &[gt], &w()).pred_to_truth, vec![None, Some(0)]);
    }

    #[test]
    fn empty_truths_are_all_background() {
        let preds = [p([0.1; 4], 0.3)];
        assert_eq!(bipartite_match(&preds, &[], &w()).pred_to_truth, vec![None]);
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for rest in permutations(n - 1) {
            for pos in 0..=rest.len() {
                let mut v = rest.clone();
                v.insert(pos, n - 1);
                out.push(v);
            }
        }
        out
    }

    #[test]
    fn optimal_against_brute_force() {
        let mut rng = Rng::new(3, 0);
        for _ in 0..200 {
            let np = 1 + rng.below(6) as usize;
            let nt = 1 + rng.below(6) as usize;
            let mut rand4 = || [rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()];
            let preds: Vec<Prediction> = (0..np).map(|_| p(rand4(), 0.0)).collect();
            let truths: Vec<LineSegment> = (0..nt).map(|_| LineSegment::from_array(rand4())).collect();
            let preds: Vec<Prediction> = preds
                .into_iter()
                .map(|x| Prediction {
                    score: rng.uniform(),
                    ..x
                })
                .collect();
            let a = bipartite_match(&preds, &truths, &w());
            let got = assignment_cost(&preds, &truths, &a, &w());
            assert_eq!(a.matched().count(), np.min(nt));
            // Every injection of the smaller side into the larger one.
            let big = np.max(nt);
            let mut best = f64::INFINITY;
            for perm in permutations(big) {
                let c: f64 = if np <= nt {
                    (0..np).map(|i| match_cost(&preds[i], &truths[perm[i]], &w())).sum()
                } else {
                    (0..nt).map(|j| match_cost(&preds[perm[j]], &truths[j], &w())).sum()
                };
                best = best.min(c);
            }
            assert!(got <= best + 1e-12, "{got} > {best}");
        }
    }
}
