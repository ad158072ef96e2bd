use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::TaskName;

/// Tile accuracy per tumor type, as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TumorTypeAccuracy {
    pub non_tumor: f64,
    pub necrotic_tumor: f64,
    pub viable_tumor: f64,
}

impl TumorTypeAccuracy {
    /// `(NT, NCT, VT)` in percent.
    pub fn percent(&self) -> (f64, f64, f64) {
        (
            self.non_tumor * 100.0,
            self.necrotic_tumor * 100.0,
            self.viable_tumor * 100.0,
        )
    }
}

/// Averages the binary-task accuracies that involve each tumor type:
/// NT over NT_vs_REST, NCT_vs_NT and VT_vs_NT; NCT over NCT_vs_NT and
/// NCT_vs_VT; VT over VT_vs_NT and NCT_vs_VT.
pub fn tumor_type_aggregate(binary_accuracies: &BTreeMap<TaskName, f64>) -> Result<TumorTypeAccuracy> {
    let get = |t: TaskName| {
        binary_accuracies
            .get(&t)
            .copied()
            .ok_or_else(|| Error::Aggregation(t.to_string()))
    };
    let nt_rest = get(TaskName::NtVsRest)?;
    let nct_nt = get(TaskName::NctVsNt)?;
    let vt_nt = get(TaskName::VtVsNt)?;
    let nct_vt = get(TaskName::NctVsVt)?;
    Ok(TumorTypeAccuracy {
        non_tumor: mean(&[nt_rest, nct_nt, vt_nt]),
        necrotic_tumor: mean(&[nct_nt, nct_vt]),
        viable_tumor: mean(&[vt_nt, nct_vt]),
    })
}

/// Mean taken as an offset from the first value, which returns equal inputs
/// unchanged (`(a + a + a) / 3` does not always round back to `a`).
fn mean(values: &[f64]) -> f64 {
    let base = values[0];
    base + values[1..].iter().map(|v| v - base).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn accs(v: [f64; 4]) -> BTreeMap<TaskName, f64> {
        TaskName::BINARY.into_iter().zip(v).collect()
    }

    #[test]
    fn worked_example() {
        let a = tumor_type_aggregate(&accs([0.9, 0.8, 1.0, 0.6])).unwrap();
        assert_eq!(a.non_tumor, 0.9);
        assert_eq!(a.necrotic_tumor, 0.7);
        assert_eq!(a.viable_tumor, 0.8);
    }

    #[test]
    fn equal_inputs_give_equal_outputs() {
        let mut x = 0.123_f64;
        for _ in 0..2000 {
            // cheap deterministic spread over (0, 1)
            x = (x * 9301.0 + 0.49297).fract();
            let a = x;
            let out = tumor_type_aggregate(&accs([a; 4])).unwrap();
            assert_eq!((out.non_tumor, out.necrotic_tumor, out.viable_tumor), (a, a, a));
        }
        let out = tumor_type_aggregate(&accs([1.0; 4])).unwrap();
        assert_eq!(out.percent(), (100.0, 100.0, 100.0));
    }

    #[test]
    fn missing_task_is_named() {
        let mut m = accs([0.9; 4]);
        m.remove(&TaskName::VtVsNt);
        let err = tumor_type_aggregate(&m).unwrap_err();
        assert!(err.to_string().contains("VT_vs_NT"), "{err}");
    }
}
