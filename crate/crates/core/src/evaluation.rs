//! Structural average precision (sAP) and precision/recall curves.
//!
//! Endpoints are rescaled from the normalized frame to a 128x128 frame. All
//! predictions of the dataset are ranked by descending score (ties broken by
//! image index, then prediction index). Walking down the ranking, a
//! prediction is a true positive when an unmatched ground-truth line of the
//! same image lies within squared endpoint distance `theta` (minimized over
//! the two endpoint orderings); the nearest such line is consumed. AP is the
//! area under the interpolated (monotone envelope) precision/recall curve,
//! scaled to `[0, 100]`.

use alloc::format;
use alloc::vec::Vec;

use crate::geometry::LineSegment;
use crate::{Error, Result};

/// Side of the square frame the endpoints are rescaled to.
pub const SAP_FRAME: f64 = 128.0;

/// The thresholds reported by default.
pub const SAP_THRESHOLDS: [f64; 3] = [5.0, 10.0, 15.0];

/// A detected line with its confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub line: LineSegment,
    pub score: f64,
}

/// Squared endpoint distance in the 128 frame, minimized over endpoint order.
pub fn structural_distance(a: &LineSegment, b: &LineSegment) -> f64 {
    let s = |p: [f64; 2], q: [f64; 2]| {
        let dx = (p[0] - q[0]) * SAP_FRAME;
        let dy = (p[1] - q[1]) * SAP_FRAME;
        dx * dx + dy * dy
    };
    let direct = s(a.ep1, b.ep1) + s(a.ep2, b.ep2);
    let swapped = s(a.ep1, b.ep2) + s(a.ep2, b.ep1);
    direct.min(swapped)
}

fn check(predictions: &[Vec<Prediction>], truths: &[Vec<LineSegment>], theta: f64) -> Result<()> {
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("sAP threshold must be positive, got {theta}")));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Domain(format!(
            "{} prediction sets for {} images",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.iter().flatten().any(|p| !p.score.is_finite()) {
        return Err(Error::Domain("non-finite prediction score".into()));
    }
    Ok(())
}

/// True-positive flag of every prediction in ranking order, and the number of
/// ground-truth lines.
fn ranked_hits(predictions: &[Vec<Prediction>], truths: &[Vec<LineSegment>], theta: f64) -> (Vec<bool>, usize) {
    let mut order: Vec<(usize, usize)> = predictions
        .iter()
        .enumerate()
        .flat_map(|(img, ps)| (0..ps.len()).map(move |i| (img, i)))
        .collect();
    order.sort_by(|&(ia, pa), &(ib, pb)| {
        predictions[ib][pb]
            .score
            .total_cmp(&predictions[ia][pa].score)
            .then(ia.cmp(&ib))
            .then(pa.cmp(&pb))
    });
    let mut used: Vec<Vec<bool>> = truths.iter().map(|t| alloc::vec![false; t.len()]).collect();
    let hits = order
        .iter()
        .map(|&(img, i)| {
            let line = &predictions[img][i].line;
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in truths[img].iter().enumerate() {
                if used[img][j] {
                    continue;
                }
                let d = structural_distance(line, gt);
                if d <= theta && best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            match best {
                Some((j, _)) => {
                    used[img][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect();
    (hits, truths.iter().map(Vec::len).sum())
}

/// Raw `(recall, precision)` after every prefix of the ranking.
pub fn pr_curve(
    predictions: &[Vec<Prediction>],
    truths: &[Vec<LineSegment>],
    theta: f64,
) -> Result<Vec<(f64, f64)>> {
    check(predictions, truths, theta)?;
    let (hits, n_gt) = ranked_hits(predictions, truths, theta);
    let mut tp = 0usize;
    Ok(hits
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            tp += usize::from(h);
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect())
}

/// Structural AP at threshold `theta`, in `[0, 100]`. No ground truth gives 0.
pub fn sap(predictions: &[Vec<Prediction>], truths: &[Vec<LineSegment>], theta: f64) -> Result<f64> {
    check(predictions, truths, theta)?;
    let (hits, n_gt) = ranked_hits(predictions, truths, theta);
    if n_gt == 0 {
        return Ok(0.0);
    }
    let mut tp = 0usize;
    let mut precision: Vec<f64> = hits
        .iter()
        .enumerate()
        .map(|(i, &h)| {
            tp += usize::from(h);
            tp as f64 / (i + 1) as f64
        })
        .collect();
    for i in (0..precision.len().saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    let area = hits.iter().zip(&precision).filter(|(h, _)| **h).fold(0.0, |acc, (_, p)| acc + p);
    Ok(area / n_gt as f64 * 100.0)
}

/// sAP and raw curve at each threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub sap: Vec<(f64, f64)>,
    pub pr_points: Vec<(f64, Vec<(f64, f64)>)>,
}

impl EvalResult {
    pub fn sap_at(&self, theta: f64) -> Option<f64> {
        self.sap.iter().find(|(t, _)| *t == theta).map(|(_, v)| *v)
    }
}

pub fn evaluate(predictions: &[Vec<Prediction>], truths: &[Vec<LineSegment>], thresholds: &[f64]) -> Result<EvalResult> {
    let mut out = EvalResult { sap: Vec::new(), pr_points: Vec::new() };
    for &t in thresholds {
        out.sap.push((t, sap(predictions, truths, t)?));
        out.pr_points.push((t, pr_curve(predictions, truths, t)?));
    }
    Ok(out)
}

/// Mean, median and 95th percentile of a set of timings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyStats {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
}

impl LatencyStats {
    /// Nearest-rank percentiles. `None` for an empty sample.
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let rank = |q: f64| {
            let r = libm::ceil(q * s.len() as f64) as usize;
            s[r.clamp(1, s.len()) - 1]
        };
        Some(Self {
            mean: s.iter().sum::<f64>() / s.len() as f64,
            p50: rank(0.5),
            p95: rank(0.95),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use alloc::vec;
    use proptest::prelude::*;

    fn seg(a: f64, b: f64, c: f64, d: f64) -> LineSegment {
        LineSegment::from_array([a, b, c, d])
    }

    fn pred(l: LineSegment, score: f64) -> Prediction {
        Prediction { line: l, score }
    }

    /// Greedy matching written out directly: repeatedly take the highest
    /// remaining prediction, scan its image's truths, and integrate the
    /// interpolated precision by recomputing a max over the tail each time.
    fn oracle(predictions: &[Vec<Prediction>], truths: &[Vec<LineSegment>], theta: f64) -> f64 {
        let n_gt: usize = truths.iter().map(|t| t.len()).sum();
        if n_gt == 0 {
            return 0.0;
        }
        let mut remaining: Vec<(usize, usize)> = Vec::new();
        for (img, ps) in predictions.iter().enumerate() {
            for i in 0..ps.len() {
                remaining.push((img, i));
            }
        }
        let mut taken = vec![vec![false; 0]; truths.len()];
        for (img, t) in truths.iter().enumerate() {
            taken[img] = vec![false; t.len()];
        }
        let mut flags = Vec::new();
        while !remaining.is_empty() {
            let mut best = 0;
            for k in 1..remaining.len() {
                let (ib, pb) = remaining[best];
                let (ik, pk) = remaining[k];
                let (sb, sk) = (predictions[ib][pb].score, predictions[ik][pk].score);
                if sk > sb || (sk == sb && (ik, pk) < (ib, pb)) {
                    best = k;
                }
            }
            let (img, i) = remaining.remove(best);
            let mut chosen: Option<usize> = None;
            for j in 0..truths[img].len() {
                let d = structural_distance(&predictions[img][i].line, &truths[img][j]);
                if !taken[img][j] && d <= theta {
                    let better = match chosen {
                        None => true,
                        Some(c) => d < structural_distance(&predictions[img][i].line, &truths[img][c]),
                    };
                    if better {
                        chosen = Some(j);
                    }
                }
            }
            if let Some(j) = chosen {
                taken[img][j] = true;
            }
            flags.push(chosen.is_some());
        }
        let prec: Vec<f64> = (0..flags.len())
            .map(|i| flags[..=i].iter().filter(|f| **f).count() as f64 / (i + 1) as f64)
            .collect();
        let mut area = 0.0;
        for i in 0..flags.len() {
            if flags[i] {
                area += prec[i..].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            }
        }
        area / n_gt as f64 * 100.0
    }

    fn random_instance(rng: &mut Rng) -> (Vec<Vec<Prediction>>, Vec<Vec<LineSegment>>) {
        let images = 1 + rng.below(3) as usize;
        let mut n_pred = 1 + rng.below(10) as usize;
        let mut n_gt = rng.below(6) as usize;
        let mut preds = vec![Vec::new(); images];
        let mut gts = vec![Vec::new(); images];
        for img in 0..images {
            let g = if img + 1 == images { n_gt } else { rng.below(n_gt as u64 + 1) as usize };
            n_gt -= g;
            for _ in 0..g {
                gts[img].push(seg(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform()));
            }
            let p = if img + 1 == images { n_pred } else { rng.below(n_pred as u64 + 1) as usize };
            n_pred -= p;
            for _ in 0..p {
                let line = if !gts[img].is_empty() && rng.uniform() < 0.7 {
                    let base = gts[img][rng.below(gts[img].len() as u64) as usize].to_array();
                    let j = 0.03 * rng.uniform();
                    let mut v = base.map(|c| c + rng.range(-j, j));
                    if rng.uniform() < 0.5 {
                        v = [v[2], v[3], v[0], v[1]];
                    }
                    LineSegment::from_array(v)
                } else {
                    seg(rng.uniform(), rng.uniform(), rng.uniform(), rng.uniform())
                };
                // Coarse scores make ties common.
                preds[img].push(pred(line, rng.below(4) as f64 / 4.0));
            }
        }
        (preds, gts)
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = Rng::new(11, 0);
        for _ in 0..300 {
            let (p, g) = random_instance(&mut rng);
            for t in SAP_THRESHOLDS {
                assert_eq!(sap(&p, &g, t).unwrap(), oracle(&p, &g, t));
            }
        }
    }

    #[test]
    fn perfect_predictions_score_100() {
        let g = vec![vec![seg(0.1, 0.1, 0.9, 0.2), seg(0.5, 0.5, 0.5, 0.9)]];
        let p = vec![vec![pred(g[0][0], 0.2), pred(g[0][1].swapped(), 0.9)]];
        assert_eq!(sap(&p, &g, 5.0).unwrap(), 100.0);
        let curve = pr_curve(&p, &g, 5.0).unwrap();
        assert!(curve.iter().all(|&(_, prec)| prec == 1.0));
        assert_eq!(curve.last().unwrap().0, 1.0);
    }

    #[test]
    fn no_predictions_score_zero() {
        let g = vec![vec![seg(0.1, 0.1, 0.9, 0.2)]];
        assert_eq!(sap(&[vec![]], &g, 10.0).unwrap(), 0.0);
    }

    #[test]
    fn wrong_predictions_have_zero_precision() {
        let g = vec![vec![seg(0.0, 0.0, 0.1, 0.1)]];
        let p = vec![vec![pred(seg(0.9, 0.9, 0.5, 0.5), 0.5), pred(seg(0.7, 0.2, 0.5, 0.5), 0.4)]];
        assert!(pr_curve(&p, &g, 15.0).unwrap().iter().all(|&(_, prec)| prec == 0.0));
    }

    #[test]
    fn threshold_boundary() {
        // gt ((0,0),(1,1)) in the 128 frame; moving ep2 by sqrt(s) along x
        // gives squared distance sum s.
        let g = vec![vec![seg(0.0, 0.0, 1.0 / 128.0, 1.0 / 128.0)]];
        let at = |s: f64| {
            let p = vec![vec![pred(seg(0.0, 0.0, (1.0 + libm::sqrt(s)) / 128.0, 1.0 / 128.0), 0.5)]];
            sap(&p, &g, 10.0).unwrap()
        };
        assert_eq!(at(10.0 + 1e-6), 0.0);
        assert_eq!(at(10.0 - 1e-6), 100.0);
    }

    #[test]
    fn hand_enumerated_prefixes() {
        let g = vec![vec![seg(0.1, 0.1, 0.4, 0.1), seg(0.6, 0.6, 0.6, 0.9)]];
        let p = vec![vec![
            pred(seg(0.1, 0.1, 0.4, 0.1), 0.9),
            pred(seg(0.9, 0.1, 0.9, 0.3), 0.8),
            pred(seg(0.6, 0.9, 0.6, 0.6), 0.7),
        ]];
        let c = pr_curve(&p, &g, 10.0).unwrap();
        assert_eq!(c, vec![(0.5, 1.0), (0.5, 0.5), (1.0, 2.0 / 3.0)]);
        let want = (1.0 + 2.0 / 3.0) / 2.0 * 100.0;
        assert!((sap(&p, &g, 10.0).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn duplicates_count_once() {
        let g = vec![vec![seg(0.1, 0.1, 0.4, 0.1)]];
        let p = vec![vec![pred(g[0][0], 0.9), pred(g[0][0], 0.8)]];
        let c = pr_curve(&p, &g, 5.0).unwrap();
        assert_eq!(c, vec![(1.0, 1.0), (1.0, 0.5)]);
    }

    #[test]
    fn bad_inputs_are_domain_errors() {
        let g = vec![vec![seg(0.1, 0.1, 0.4, 0.1)]];
        let p = vec![vec![pred(g[0][0], 0.9)]];
        assert!(matches!(sap(&p, &g, 0.0), Err(Error::Domain(_))));
        assert!(matches!(sap(&p, &g, -1.0), Err(Error::Domain(_))));
        assert!(matches!(pr_curve(&p, &g, f64::NAN), Err(Error::Domain(_))));
        let bad = vec![vec![pred(g[0][0], f64::NAN)]];
        assert!(sap(&bad, &g, 5.0).is_err());
    }

    #[test]
    fn no_truths_score_zero() {
        let p = vec![vec![pred(seg(0.1, 0.1, 0.4, 0.1), 0.9)]];
        assert_eq!(sap(&p, &[vec![]], 5.0).unwrap(), 0.0);
    }

    #[test]
    fn latency_stats() {
        let s = LatencyStats::from_samples(&[3.0]).unwrap();
        assert_eq!((s.mean, s.p50, s.p95), (3.0, 3.0, 3.0));
        let s = LatencyStats::from_samples(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!((s.mean, s.p50, s.p95), (2.5, 2.0, 4.0));
        assert!(LatencyStats::from_samples(&[]).is_none());
    }

    proptest! {
        #[test]
        fn monotone_in_threshold(seed in 0u64..10_000) {
            let (p, g) = random_instance(&mut Rng::new(seed, 1));
            let a: Vec<f64> = SAP_THRESHOLDS.iter().map(|&t| sap(&p, &g, t).unwrap()).collect();
            prop_assert!(a[0] <= a[1] && a[1] <= a[2]);
            prop_assert!(a.iter().all(|v| (0.0..=100.0).contains(v)));
        }

        #[test]
        fn endpoint_order_invariant(seed in 0u64..10_000) {
            let (p, g) = random_instance(&mut Rng::new(seed, 2));
            let ps: Vec<Vec<Prediction>> = p.iter()
                .map(|v| v.iter().map(|q| pred(q.line.swapped(), q.score)).collect())
                .collect();
            let gs: Vec<Vec<LineSegment>> = g.iter().map(|v| v.iter().map(|l| l.swapped()).collect()).collect();
            prop_assert_eq!(sap(&p, &g, 10.0).unwrap(), sap(&ps, &gs, 10.0).unwrap());
        }

        #[test]
        fn rank_statistic(seed in 0u64..10_000) {
            let (p, g) = random_instance(&mut Rng::new(seed, 3));
            let q: Vec<Vec<Prediction>> = p.iter()
                .map(|v| v.iter().map(|x| pred(x.line, libm::exp(3.0 * x.score) - 7.0)).collect())
                .collect();
            prop_assert_eq!(sap(&p, &g, 10.0).unwrap(), sap(&q, &g, 10.0).unwrap());
        }

        #[test]
        fn recall_nondecreasing(seed in 0u64..10_000) {
            let (p, g) = random_instance(&mut Rng::new(seed, 4));
            let c = pr_curve(&p, &g, 15.0).unwrap();
            prop_assert!(c.windows(2).all(|w| w[0].0 <= w[1].0));
        }
    }
}
