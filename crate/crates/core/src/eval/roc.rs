use crate::error::{Error, Result};
use crate::geometry::generalized_score;

/// Verification pairs over an indexed embedding set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairProtocol {
    pub pairs: Vec<(usize, usize, bool)>,
}

impl PairProtocol {
    pub fn new(pairs: Vec<(usize, usize, bool)>) -> Self {
        Self { pairs }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for &(a, b, _) in &self.pairs {
            for index in [a, b] {
                if index >= n {
                    return Err(Error::Index { index, len: n });
                }
            }
        }
        Ok(())
    }
}

/// `(‖a‖·‖b‖)^t · cos θ` for every pair; `t = 0` is plain cosine.
pub fn score_pairs(
    embeddings: &[Vec<f64>],
    protocol: &PairProtocol,
    t: f64,
) -> Result<Vec<(f64, bool)>> {
    protocol.validate(embeddings.len())?;
    protocol
        .pairs
        .iter()
        .map(|&(a, b, same)| Ok((generalized_score(&embeddings[a], &embeddings[b], t)?, same)))
        .collect()
}

/// Exact ROC step curve. `points[k]` is the operating point of accepting
/// every score `>= thresholds[k]`; the first point is `(0, 0)` at `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
    pub thresholds: Vec<f64>,
}

/// Builds the ROC curve by sweeping the threshold over distinct scores.
/// Positives and negatives sharing a score enter together, producing a
/// diagonal segment.
pub fn roc(scores: &[(f64, bool)]) -> Result<RocCurve> {
    if scores.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::ProtocolDegenerate("NaN score".into()));
    }
    let n_pos = scores.iter().filter(|s| s.1).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::ProtocolDegenerate(format!(
            "need at least one positive and one negative pair, got {n_pos} and {n_neg}"
        )));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = vec![f64::INFINITY];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == s {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        thresholds.push(s);
    }
    Ok(RocCurve { points, thresholds })
}

/// Normalized partial area `(1/x)·∫₀ˣ TPR(f) df`. Segments are integrated
/// exactly as straight lines, so vertical jumps contribute nothing and tie
/// segments contribute their trapezoid.
pub fn auc_x(curve: &RocCurve, x: f64) -> Result<f64> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(Error::Domain {
            what: "x",
            value: x,
        });
    }
    let mut area = 0.0;
    for w in curve.points.windows(2) {
        let ((f0, t0), (f1, t1)) = (w[0], w[1]);
        if f1 <= f0 || f0 >= x {
            continue;
        }
        let hi = f1.min(x);
        let t_hi = t0 + (t1 - t0) * (hi - f0) / (f1 - f0);
        area += 0.5 * (t0 + t_hi) * (hi - f0);
    }
    Ok((area / x).clamp(0.0, 1.0))
}

/// Full area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    auc_x(curve, 1.0).expect("x = 1 is in range")
}

/// TPR of the strictest operating point whose FPR does not exceed each
/// level. There is no interpolation between operating points.
pub fn tar_at_far(curve: &RocCurve, far_levels: &[f64]) -> Vec<f64> {
    far_levels
        .iter()
        .map(|&level| {
            curve
                .points
                .iter()
                .take_while(|p| p.0 <= level)
                .map(|p| p.1)
                .fold(0.0, f64::max)
        })
        .collect()
}

/// `P(score_pos > score_neg) + ½·P(tie)` over all positive/negative pairs.
pub fn mann_whitney_auc(scores: &[(f64, bool)]) -> Result<f64> {
    let pos: Vec<f64> = scores.iter().filter(|s| s.1).map(|s| s.0).collect();
    let mut neg: Vec<f64> = scores.iter().filter(|s| !s.1).map(|s| s.0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::ProtocolDegenerate(
            "need both positive and negative scores".into(),
        ));
    }
    neg.sort_by(f64::total_cmp);
    let mut u = 0.0;
    for p in &pos {
        let below = neg.partition_point(|n| n < p);
        let not_above = neg.partition_point(|n| n <= p);
        u += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(u / (pos.len() as f64 * neg.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_scores_pass_through_top_left() {
        let c = roc(&[(0.9, true), (0.8, true), (0.1, false), (0.2, false)]).unwrap();
        assert!(c.points.contains(&(0.0, 1.0)));
        assert_eq!(*c.points.last().unwrap(), (1.0, 1.0));
        for x in [1e-4, 0.3, 1.0] {
            assert_eq!(auc_x(&c, x).unwrap(), 1.0);
        }
        assert_eq!(tar_at_far(&c, &[1e-6, 0.5]), vec![1.0, 1.0]);
    }

    #[test]
    fn equal_scores_give_the_diagonal() {
        let c = roc(&[(0.5, true), (0.5, false), (0.5, true)]).unwrap();
        assert_eq!(c.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        for x in [0.1, 0.5, 1.0] {
            assert!((auc_x(&c, x).unwrap() - x / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn stepped_diagonal_tar() {
        // TPR = FPR at every multiple of 1/1000.
        let scores: Vec<(f64, bool)> = (0..1000)
            .flat_map(|i| [(i as f64, true), (i as f64, false)])
            .collect();
        let c = roc(&scores).unwrap();
        let t = tar_at_far(&c, &[1e-2]);
        assert!((t[0] - 1e-2).abs() < 1e-12);
    }

    #[test]
    fn single_jump_curve() {
        let c = RocCurve {
            points: vec![(0.0, 0.0), (1e-3, 0.0), (1e-3, 0.9), (1.0, 0.9), (1.0, 1.0)],
            thresholds: vec![f64::INFINITY, 3.0, 2.0, 1.0, 0.0],
        };
        assert_eq!(tar_at_far(&c, &[1e-2, 1e-4]), vec![0.9, 0.0]);
    }

    #[test]
    fn degenerate_protocols() {
        assert!(matches!(
            roc(&[(0.1, true)]),
            Err(Error::ProtocolDegenerate(_))
        ));
        assert!(roc(&[(f64::NAN, true), (0.0, false)]).is_err());
        let c = roc(&[(1.0, true), (0.0, false)]).unwrap();
        assert!(auc_x(&c, 0.0).is_err());
        assert!(auc_x(&c, 1.5).is_err());
    }

    #[test]
    fn scoring() {
        let e = vec![vec![1.0, 0.0], vec![3.0, 0.0], vec![-2.0, 0.0]];
        let p = PairProtocol::new(vec![(0, 1, true), (0, 2, false)]);
        let s = score_pairs(&e, &p, 0.0).unwrap();
        assert!((s[0].0 - 1.0).abs() < 1e-15 && (s[1].0 + 1.0).abs() < 1e-15);
        let bad = PairProtocol::new(vec![(0, 3, true)]);
        assert!(matches!(
            score_pairs(&e, &bad, 0.0),
            Err(Error::Index { index: 3, len: 3 })
        ));
    }

    #[test]
    fn mann_whitney_counts_ties_as_half() {
        let s = [(1.0, true), (0.0, true), (0.0, false), (-1.0, false)];
        assert!((mann_whitney_auc(&s).unwrap() - 0.875).abs() < 1e-15);
        assert!((auc(&roc(&s).unwrap()) - 0.875).abs() < 1e-15);
    }
}
