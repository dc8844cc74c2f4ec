//! Classification report: confusion matrix, per-class recall and precision,
//! accuracy and false-positive rate.

use serde::Serialize;

use crate::error::{Error, Result};

pub const CONFUSION_CSV_VERSION: &str = "lehgr-confusion v1";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub classes: usize,
    /// Rows are truth, columns are prediction.
    pub confusion: Vec<Vec<u64>>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// Classes with no truth samples; their recall is reported as 0.
    pub recall_undefined: Vec<bool>,
    /// Classes never predicted; their precision is reported as 0.
    pub precision_undefined: Vec<bool>,
    pub accuracy: f64,
    /// Share of truth-negative samples predicted as any gesture class.
    pub false_positive_rate: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn metrics(predictions: &[usize], truths: &[usize], classes: usize) -> Result<MetricsReport> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidInput(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if classes == 0 {
        return Err(Error::InvalidInput("no classes".into()));
    }
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (&p, &t) in predictions.iter().zip(truths) {
        if p >= classes || t >= classes {
            return Err(Error::InvalidInput(format!(
                "label pair ({t}, {p}) outside {classes} classes"
            )));
        }
        confusion[t][p] += 1;
    }
    let total = truths.len() as u64;
    let diag: u64 = (0..classes).map(|c| confusion[c][c]).sum();
    let mut recall = Vec::with_capacity(classes);
    let mut precision = Vec::with_capacity(classes);
    let mut recall_undefined = Vec::with_capacity(classes);
    let mut precision_undefined = Vec::with_capacity(classes);
    for c in 0..classes {
        let row: u64 = confusion[c].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[c]).sum();
        let (r, ru) = ratio(confusion[c][c], row);
        let (p, pu) = ratio(confusion[c][c], col);
        recall.push(r);
        recall_undefined.push(ru);
        precision.push(p);
        precision_undefined.push(pu);
    }
    let negatives: u64 = confusion[0].iter().sum();
    Ok(MetricsReport {
        classes,
        accuracy: ratio(diag, total).0,
        false_positive_rate: ratio(negatives - confusion[0][0], negatives).0,
        confusion,
        recall,
        precision,
        recall_undefined,
        precision_undefined,
        total,
    })
}

impl MetricsReport {
    pub fn truth_counts(&self) -> Vec<u64> {
        self.confusion.iter().map(|r| r.iter().sum()).collect()
    }

    /// Fixed-width text table.
    pub fn to_text(&self, names: &[String]) -> String {
        let name = |c: usize| names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
        let w = (0..self.classes).map(|c| name(c).len()).max().unwrap_or(0).max(8);
        let flag = |undef: bool| if undef { "*" } else { " " };
        let mut s = String::new();
        s.push_str(&format!(
            "{:<w$}  {:>8}  {:>9}  {:>9}\n",
            "class", "samples", "recall", "precision"
        ));
        let counts = self.truth_counts();
        for c in 0..self.classes {
            s.push_str(&format!(
                "{:<w$}  {:>8}  {:>8.4}{}  {:>8.4}{}\n",
                name(c),
                counts[c],
                self.recall[c],
                flag(self.recall_undefined[c]),
                self.precision[c],
                flag(self.precision_undefined[c]),
            ));
        }
        s.push_str(&format!("{:<w$}  {:>8}\n", "total", self.total));
        s.push_str(&format!("{:<w$}  {:>8.4}\n", "accuracy", self.accuracy));
        s.push_str(&format!("{:<w$}  {:>8.4}\n", "false-pos", self.false_positive_rate));
        s.push_str("confusion (rows truth, columns prediction)\n");
        for (c, row) in self.confusion.iter().enumerate() {
            s.push_str(&format!("{:<w$}", name(c)));
            for v in row {
                s.push_str(&format!("  {v:>8}"));
            }
            s.push('\n');
        }
        if self.recall_undefined.iter().chain(&self.precision_undefined).any(|&u| u) {
            s.push_str("* undefined (0/0), reported as 0\n");
        }
        s
    }

    /// Versioned CSV of the confusion matrix.
    pub fn confusion_csv(&self, names: &[String]) -> String {
        let name = |c: usize| names.get(c).cloned().unwrap_or_else(|| format!("class{c}"));
        let mut s = format!("# {CONFUSION_CSV_VERSION}\ntruth");
        for c in 0..self.classes {
            s.push(',');
            s.push_str(&name(c));
        }
        s.push('\n');
        for (c, row) in self.confusion.iter().enumerate() {
            s.push_str(&name(c));
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions() {
        let y = [0, 1, 2, 2, 1, 0];
        let r = metrics(&y, &y, 3).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.false_positive_rate, 0.0);
        for (i, row) in r.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v == 0, i != j);
            }
        }
    }

    #[test]
    fn all_negative_predictor() {
        let truths = [0, 0, 1, 2];
        let r = metrics(&[0; 4], &truths, 3).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.false_positive_rate, 0.0);
        assert_eq!((r.recall[1], r.recall[2]), (0.0, 0.0));
        assert!(r.precision_undefined[1] && r.precision_undefined[2]);
    }

    #[test]
    fn hand_counted_example() {
        let r = metrics(&[0, 1, 1, 1, 2], &[0, 0, 1, 1, 2], 3).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        assert_eq!(r.false_positive_rate, 0.5);
        assert_eq!(r.recall[1], 1.0);
        assert!((r.precision[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.truth_counts(), vec![2, 2, 1]);
    }

    #[test]
    fn errors() {
        assert!(metrics(&[0, 1], &[0], 2).is_err());
        assert!(metrics(&[3], &[0], 2).is_err());
    }

    #[test]
    fn text_and_csv() {
        let names: Vec<String> = ["negative", "left-wave", "right-wave"].map(String::from).to_vec();
        let r = metrics(&[0, 1, 1, 1, 2], &[0, 0, 1, 1, 2], 3).unwrap();
        let csv = r.confusion_csv(&names);
        assert_eq!(
            csv,
            "# lehgr-confusion v1\ntruth,negative,left-wave,right-wave\nnegative,1,1,0\nleft-wave,0,2,0\nright-wave,0,0,1\n"
        );
        let text = r.to_text(&names);
        assert!(text.contains("accuracy") && text.contains("0.8000"));
    }
}
