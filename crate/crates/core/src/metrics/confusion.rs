use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[i][j]` is the number of samples of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<Vec<u64>>,
    pub class_names: Vec<String>,
}

impl ConfusionMatrix {
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|row| row.len() != n) {
            return Err(Error::Input("confusion matrix must be square".into()));
        }
        Ok(Self {
            n_classes: n,
            class_names: (0..n).map(|i| i.to_string()).collect(),
            counts,
        })
    }

    pub fn with_class_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.n_classes {
            return Err(Error::Input(format!(
                "{} class names for {} classes",
                names.len(),
                self.n_classes
            )));
        }
        self.class_names = names.to_vec();
        Ok(self)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.counts[i][i]).sum()
    }

    /// Number of samples whose true class is `class`.
    pub fn row_sum(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Number of samples predicted as `class`.
    pub fn col_sum(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// CSV with one row per true class and one column per predicted class.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["true_class".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header)?;
        for (name, row) in self.class_names.iter().zip(&self.counts) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn confusion(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} true labels but {} predictions",
            truth.len(),
            pred.len()
        )));
    }
    let mut counts = vec![vec![0u64; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Input(format!(
                "label pair ({t}, {p}) outside [0, {n_classes})"
            )));
        }
        counts[t][p] += 1;
    }
    ConfusionMatrix::from_counts(counts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_diagonal() {
        let cm = confusion(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
    }

    #[test]
    fn hand_enumerated_pairs() {
        let cm = confusion(&[0, 0, 1, 1], &[0, 1, 1, 1], 2).unwrap();
        assert_eq!(cm.counts, vec![vec![1, 1], vec![0, 2]]);
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.row_sum(0), 2);
        assert_eq!(cm.col_sum(1), 3);
    }

    #[test]
    fn empty_input_gives_zero_matrix() {
        let cm = confusion(&[], &[], 3).unwrap();
        assert_eq!(cm.total(), 0);
        assert_eq!(cm.counts.len(), 3);
    }

    #[test]
    fn bad_inputs() {
        assert!(matches!(confusion(&[0, 1], &[0], 2), Err(Error::Input(_))));
        assert!(matches!(confusion(&[0, 2], &[0, 1], 2), Err(Error::Input(_))));
        assert!(ConfusionMatrix::from_counts(vec![vec![1, 2], vec![3]]).is_err());
    }

    #[test]
    fn csv_rows_are_true_classes() {
        let cm = confusion(&[0, 0, 1], &[1, 0, 1], 2)
            .unwrap()
            .with_class_names(&["NCT".into(), "VT".into()])
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("confusion.csv");
        cm.write_csv(&p).unwrap();
        assert_eq!(
            std::fs::read_to_string(p).unwrap(),
            "true_class,NCT,VT\nNCT,1,1\nVT,0,1\n"
        );
    }
}
