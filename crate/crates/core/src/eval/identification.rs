use crate::error::{Error, Result};
use crate::geometry::cosine_score;

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationReport {
    /// Fraction of mated probes whose nearest gallery entry shares the label.
    pub top1: f64,
    /// `(fpir level, tpir)`; empty when no distractors were supplied.
    pub tpir_at_fpir: Vec<(f64, f64)>,
}

/// Best cosine match in the gallery: `(index, score)`.
fn best_match(gallery: &[Vec<f64>], probe: &[f64]) -> Result<(usize, f64)> {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, g) in gallery.iter().enumerate() {
        let s = cosine_score(g, probe)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

fn check_labels(n: usize, labels: usize) -> Result<()> {
    if n != labels {
        return Err(Error::Shape {
            expected: n,
            got: labels,
        });
    }
    Ok(())
}

/// Open-set rates at a fixed threshold. A probe is accepted when its best
/// match score is strictly above `threshold`. TPIR counts accepted mated
/// probes whose match is correct; FPIR counts accepted distractors.
pub fn open_set_rates<L: PartialEq>(
    gallery: &[Vec<f64>],
    gallery_labels: &[L],
    probes: &[Vec<f64>],
    probe_labels: &[L],
    distractors: &[Vec<f64>],
    threshold: f64,
) -> Result<(f64, Option<f64>)> {
    check_inputs(gallery, gallery_labels, probes, probe_labels)?;
    let mut hits = 0usize;
    for (p, l) in probes.iter().zip(probe_labels) {
        let (i, s) = best_match(gallery, p)?;
        if s > threshold && gallery_labels[i] == *l {
            hits += 1;
        }
    }
    let fpir = if distractors.is_empty() {
        None
    } else {
        let mut accepted = 0usize;
        for d in distractors {
            if best_match(gallery, d)?.1 > threshold {
                accepted += 1;
            }
        }
        Some(accepted as f64 / distractors.len() as f64)
    };
    Ok((hits as f64 / probes.len() as f64, fpir))
}

fn check_inputs<L>(
    gallery: &[Vec<f64>],
    gallery_labels: &[L],
    probes: &[Vec<f64>],
    probe_labels: &[L],
) -> Result<()> {
    if gallery.is_empty() {
        return Err(Error::EmptySet("gallery"));
    }
    if probes.is_empty() {
        return Err(Error::EmptySet("probe set"));
    }
    check_labels(gallery.len(), gallery_labels.len())?;
    check_labels(probes.len(), probe_labels.len())
}

/// Closed-set top-1 rate and open-set TPIR at each FPIR level.
///
/// For a level `f` with `n` distractors, the threshold is the
/// `⌊f·n⌋+1`-th largest distractor best-match score, so at most `⌊f·n⌋`
/// distractors score strictly above it.
pub fn identification<L: PartialEq>(
    gallery: &[Vec<f64>],
    gallery_labels: &[L],
    probes: &[Vec<f64>],
    probe_labels: &[L],
    distractors: &[Vec<f64>],
    fpir_levels: &[f64],
) -> Result<IdentificationReport> {
    check_inputs(gallery, gallery_labels, probes, probe_labels)?;
    let matches: Vec<(bool, f64)> = probes
        .iter()
        .zip(probe_labels)
        .map(|(p, l)| best_match(gallery, p).map(|(i, s)| (gallery_labels[i] == *l, s)))
        .collect::<Result<_>>()?;
    let top1 = matches.iter().filter(|m| m.0).count() as f64 / probes.len() as f64;

    let mut tpir_at_fpir = Vec::new();
    if !distractors.is_empty() {
        let mut imposter: Vec<f64> = distractors
            .iter()
            .map(|d| best_match(gallery, d).map(|m| m.1))
            .collect::<Result<_>>()?;
        imposter.sort_by(|a, b| b.total_cmp(a));
        for &level in fpir_levels {
            if !(0.0..=1.0).contains(&level) {
                return Err(Error::Domain {
                    what: "fpir level",
                    value: level,
                });
            }
            let allowed = (level * imposter.len() as f64).floor() as usize;
            let threshold = imposter.get(allowed).copied().unwrap_or(f64::NEG_INFINITY);
            let hits = matches
                .iter()
                .filter(|&&(ok, s)| ok && s > threshold)
                .count();
            tpir_at_fpir.push((level, hits as f64 / probes.len() as f64));
        }
    }
    Ok(IdentificationReport { top1, tpir_at_fpir })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gallery_as_probes() {
        let g = vec![vec![1.0, 0.2], vec![-0.3, 1.0], vec![0.0, -1.0]];
        let r = identification(&g, &[0, 1, 2], &g, &[0, 1, 2], &[], &[]).unwrap();
        assert_eq!(r.top1, 1.0);
        assert!(r.tpir_at_fpir.is_empty());
    }

    #[test]
    fn antipodal_gallery_tight_probes() {
        let g = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let p = vec![vec![1.0, 0.01], vec![0.9, -0.02], vec![-1.0, 0.03]];
        let r = identification(&g, &["a", "b"], &p, &["a", "a", "b"], &[], &[]).unwrap();
        assert_eq!(r.top1, 1.0);
    }

    #[test]
    fn orthogonal_probe_is_rejected() {
        let g = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let p = vec![vec![0.0, 0.0, 1.0]];
        let d = vec![vec![0.0, 0.0, -1.0]];
        let (tpir, fpir) = open_set_rates(&g, &[0, 1], &p, &[0], &d, 0.1).unwrap();
        assert_eq!(tpir, 0.0);
        assert_eq!(fpir, Some(0.0));
    }

    #[test]
    fn fpir_threshold_is_conservative() {
        let g = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let p = vec![vec![1.0, 0.05], vec![1.0, 0.5], vec![0.1, 1.0]];
        // Distractor best scores spread between the probe scores.
        let d: Vec<Vec<f64>> = [0.95, 0.8, 0.6, 0.4]
            .iter()
            .map(|&c: &f64| vec![c, -(1.0 - c * c).sqrt()])
            .collect();
        let r = identification(&g, &[0, 0], &p, &[0, 0, 1], &d, &[0.0, 0.25, 1.0]).unwrap();
        let lv: Vec<f64> = r.tpir_at_fpir.iter().map(|t| t.1).collect();
        // Probe cosines: ~0.9988, ~0.894, and label mismatch for the third.
        assert_eq!(lv, vec![1.0 / 3.0, 2.0 / 3.0, 2.0 / 3.0]);
    }

    #[test]
    fn errors() {
        let g = vec![vec![1.0, 0.0]];
        let empty: Vec<Vec<f64>> = Vec::new();
        assert!(matches!(
            identification(&empty, &[] as &[u8], &g, &[0], &[], &[]),
            Err(Error::EmptySet(_))
        ));
        assert!(matches!(
            identification(&g, &[0], &empty, &[], &[], &[]),
            Err(Error::EmptySet(_))
        ));
        assert!(identification(&g, &[0, 1], &g, &[0], &[], &[]).is_err());
    }
}
