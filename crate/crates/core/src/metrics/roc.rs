use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Samples scoring at or above this value are called positive. The first
    /// point uses +inf so that nothing is.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub positive_class: usize,
}

impl RocCurve {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["threshold", "fpr", "tpr"])?;
        for p in &self.points {
            w.write_record([p.threshold.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path, positive_class: usize, auc: f64) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let points = r
            .deserialize::<RocPoint>()
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self {
            points,
            auc,
            positive_class,
        })
    }
}

/// ROC curve of `scores` (positive-class probabilities) against `labels`
/// (task-class indices). One point per distinct score, so tied scores move
/// the curve diagonally; the trapezoidal area then equals the probability that
/// a random positive outscores a random negative, ties counting one half.
pub fn roc(scores: &[f64], labels: &[usize], positive_class: usize) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::Input(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("scores must be finite".into()));
    }
    let positives = labels.iter().filter(|&&l| l == positive_class).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::RocUndefined(
            "need at least one positive and one negative label".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0u64, 0u64);
    // twice the area, in units of one positive-negative pair
    let mut doubled_area: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        let (prev_tp, prev_fp) = (tp, fp);
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] == positive_class {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        doubled_area += ((fp - prev_fp) as u128) * ((tp + prev_tp) as u128);
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / negatives as f64,
            tpr: tp as f64 / positives as f64,
        });
    }
    let auc = doubled_area as f64 / (2 * positives * negatives) as f64;
    Ok(RocCurve {
        points,
        auc,
        positive_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let c = roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], 1).unwrap();
        assert_eq!(c.auc, 0.75);
        let coords: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(
            coords,
            vec![(0.0, 0.0), (0.0, 0.5), (0.5, 0.5), (0.5, 1.0), (1.0, 1.0)]
        );
    }

    #[test]
    fn separable_scores() {
        let c = roc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0], 1).unwrap();
        assert_eq!(c.auc, 1.0);
        let c = roc(&[0.9, 0.8, 0.3, 0.1], &[1, 1, 0, 0], 0).unwrap();
        assert_eq!(c.auc, 0.0);
    }

    #[test]
    fn all_tied_scores_give_half() {
        let c = roc(&[0.5; 6], &[0, 1, 0, 1, 1, 0], 1).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points.len(), 2);
    }

    #[test]
    fn curve_is_monotone_from_origin_to_corner() {
        let scores = [0.3, 0.3, 0.9, 0.1, 0.7, 0.7, 0.2];
        let labels = [1, 0, 1, 0, 0, 1, 1];
        let c = roc(&scores, &labels, 1).unwrap();
        let first = c.points.first().unwrap();
        let last = c.points.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        for w in c.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc(&[0.1, 0.2], &[1, 1], 1), Err(Error::RocUndefined(_))));
        assert!(matches!(roc(&[0.1], &[1, 0], 1), Err(Error::Input(_))));
        assert!(matches!(roc(&[f64::NAN, 0.2], &[1, 0], 1), Err(Error::Input(_))));
    }

    #[test]
    fn csv_round_trip() {
        let c = roc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1], 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("roc.csv");
        c.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("threshold,fpr,tpr\ninf,0,0\n"), "{text}");
        assert_eq!(RocCurve::read_csv(&p, 1, c.auc).unwrap(), c);
    }
}
