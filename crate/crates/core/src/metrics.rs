//! Per-class confusion matrices, precision/recall/F1, and the macro and
//! support-weighted report over (gold, predicted) label pairs.
//!
//! Conventions: zero denominators yield 0.0 and flip the report's
//! `degenerate` flag; displayed values round half-up to 4 decimals; stored
//! values are never rounded.

use serde::Serialize;

use crate::corpus::Label;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub positive: Label,
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    /// Gold items belonging to the positive class.
    pub fn support(&self) -> u64 {
        self.true_pos + self.false_neg
    }
}

/// Counts pairs with respect to `positive`: a true positive is a gold
/// positive predicted positive.
pub fn confusion(pairs: &[(Label, Label)], positive: Label) -> Result<ConfusionMatrix> {
    if pairs.is_empty() {
        return Err(Error::Input("confusion: no prediction pairs".into()));
    }
    let mut cm = ConfusionMatrix {
        positive,
        true_pos: 0,
        false_pos: 0,
        false_neg: 0,
        true_neg: 0,
    };
    for &(gold, pred) in pairs {
        match (gold == positive, pred == positive) {
            (true, true) => cm.true_pos += 1,
            (false, true) => cm.false_pos += 1,
            (true, false) => cm.false_neg += 1,
            (false, false) => cm.true_neg += 1,
        }
    }
    Ok(cm)
}

pub fn precision(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.true_pos, cm.true_pos + cm.false_pos)
}

pub fn recall(cm: &ConfusionMatrix) -> f64 {
    ratio(cm.true_pos, cm.true_pos + cm.false_neg)
}

pub fn f1(cm: &ConfusionMatrix) -> f64 {
    let p = precision(cm);
    let r = recall(cm);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AvgMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class rows plus macro (unweighted) and weighted (by gold support)
/// averages. Weighted recall equals plain accuracy by construction.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassReport {
    pub ham: ClassMetrics,
    pub spam: ClassMetrics,
    pub macro_avg: AvgMetrics,
    pub weighted_avg: AvgMetrics,
    pub accuracy: f64,
    pub total: u64,
    /// True when any metric hit a zero denominator.
    pub degenerate: bool,
}

pub fn report(pairs: &[(Label, Label)]) -> Result<ClassReport> {
    let per_class = |positive: Label| -> Result<(ClassMetrics, bool)> {
        let cm = confusion(pairs, positive)?;
        let degenerate = cm.true_pos + cm.false_pos == 0
            || cm.true_pos + cm.false_neg == 0
            || (precision(&cm) + recall(&cm)) == 0.0;
        Ok((
            ClassMetrics {
                precision: precision(&cm),
                recall: recall(&cm),
                f1: f1(&cm),
                support: cm.support(),
            },
            degenerate,
        ))
    };
    let (ham, ham_degenerate) = per_class(Label::Ham)?;
    let (spam, spam_degenerate) = per_class(Label::Spam)?;

    let total = ham.support + spam.support;
    let correct = pairs.iter().filter(|(g, p)| g == p).count() as f64;
    let accuracy = correct / total as f64;

    let macro_avg = AvgMetrics {
        precision: (ham.precision + spam.precision) / 2.0,
        recall: (ham.recall + spam.recall) / 2.0,
        f1: (ham.f1 + spam.f1) / 2.0,
    };
    let weight = |h: f64, s: f64| (h * ham.support as f64 + s * spam.support as f64) / total as f64;
    let weighted_avg = AvgMetrics {
        precision: weight(ham.precision, spam.precision),
        recall: weight(ham.recall, spam.recall),
        f1: weight(ham.f1, spam.f1),
    };

    Ok(ClassReport {
        ham,
        spam,
        macro_avg,
        weighted_avg,
        accuracy,
        total,
        degenerate: ham_degenerate || spam_degenerate,
    })
}

/// Half-up rounding at 4 decimals, the display precision of every table
/// this crate prints. Stored values stay full precision.
pub fn round4(x: f64) -> f64 {
    (x * 10_000.0 + 0.5).floor() / 10_000.0
}

impl ClassReport {
    /// Aligned plain-text table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str("                precision    recall  f1-score   support\n");
        let row = |name: &str, m: &ClassMetrics| {
            format!(
                "{name:>16}    {:>6.4}    {:>6.4}    {:>6.4}   {:>7}\n",
                round4(m.precision),
                round4(m.recall),
                round4(m.f1),
                m.support
            )
        };
        out.push_str(&row("ham", &self.ham));
        out.push_str(&row("spam", &self.spam));
        out.push('\n');
        let avg_row = |name: &str, m: &AvgMetrics| {
            format!(
                "{name:>16}    {:>6.4}    {:>6.4}    {:>6.4}   {:>7}\n",
                round4(m.precision),
                round4(m.recall),
                round4(m.f1),
                self.total
            )
        };
        out.push_str(&format!(
            "{:>16}                        {:>6.4}   {:>7}\n",
            "accuracy",
            round4(self.accuracy),
            self.total
        ));
        out.push_str(&avg_row("macro avg", &self.macro_avg));
        out.push_str(&avg_row("weighted avg", &self.weighted_avg));
        out
    }
}

/// Expands a confusion matrix back into prediction pairs; the inverse of
/// `confusion` up to ordering. Lets published matrices drive `report`.
pub fn pairs_from_matrix(cm: &ConfusionMatrix) -> Vec<(Label, Label)> {
    let negative = match cm.positive {
        Label::Ham => Label::Spam,
        Label::Spam => Label::Ham,
    };
    let mut pairs = Vec::with_capacity(cm.total() as usize);
    pairs.extend(std::iter::repeat_n((cm.positive, cm.positive), cm.true_pos as usize));
    pairs.extend(std::iter::repeat_n((negative, cm.positive), cm.false_pos as usize));
    pairs.extend(std::iter::repeat_n((cm.positive, negative), cm.false_neg as usize));
    pairs.extend(std::iter::repeat_n((negative, negative), cm.true_neg as usize));
    pairs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_near(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn confusion_counts_all_quadrants() {
        let pairs = vec![
            (Label::Spam, Label::Spam),
            (Label::Spam, Label::Spam),
            (Label::Ham, Label::Ham),
            (Label::Ham, Label::Ham),
        ];
        let cm = confusion(&pairs, Label::Spam).unwrap();
        assert_eq!((cm.true_pos, cm.false_pos, cm.false_neg, cm.true_neg), (2, 0, 0, 2));

        let cm = confusion(&[(Label::Spam, Label::Ham)], Label::Spam).unwrap();
        assert_eq!((cm.true_pos, cm.false_pos, cm.false_neg, cm.true_neg), (0, 0, 1, 0));
    }

    #[test]
    fn confusion_rejects_empty_input() {
        assert!(matches!(confusion(&[], Label::Spam), Err(Error::Input(_))));
        assert!(report(&[]).is_err());
    }

    #[test]
    fn ham_and_spam_matrices_are_transposes() {
        let pairs = vec![
            (Label::Spam, Label::Spam),
            (Label::Spam, Label::Ham),
            (Label::Ham, Label::Spam),
            (Label::Ham, Label::Ham),
            (Label::Ham, Label::Ham),
        ];
        let spam = confusion(&pairs, Label::Spam).unwrap();
        let ham = confusion(&pairs, Label::Ham).unwrap();
        assert_eq!(spam.true_pos, ham.true_neg);
        assert_eq!(spam.false_pos, ham.false_neg);
        assert_eq!(spam.false_neg, ham.false_pos);
        assert_eq!(spam.true_neg, ham.true_pos);
        assert_eq!(spam.total(), pairs.len() as u64);
    }

    #[test]
    fn zero_denominators_yield_zero_and_flag() {
        let cm = ConfusionMatrix {
            positive: Label::Spam,
            true_pos: 0,
            false_pos: 0,
            false_neg: 0,
            true_neg: 5,
        };
        assert_eq!(precision(&cm), 0.0);
        assert_eq!(recall(&cm), 0.0);
        assert_eq!(f1(&cm), 0.0);

        let pairs = vec![(Label::Ham, Label::Ham); 5];
        let r = report(&pairs).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.spam.f1, 0.0);
        assert_near(r.ham.f1, 1.0);
    }

    #[test]
    fn weighted_recall_is_accuracy() {
        let pairs = vec![
            (Label::Spam, Label::Spam),
            (Label::Spam, Label::Ham),
            (Label::Ham, Label::Ham),
            (Label::Ham, Label::Ham),
            (Label::Ham, Label::Spam),
            (Label::Spam, Label::Spam),
            (Label::Ham, Label::Ham),
        ];
        let r = report(&pairs).unwrap();
        assert_near(r.weighted_avg.recall, r.accuracy);
        assert_near(r.accuracy, 5.0 / 7.0);
    }

    #[test]
    fn f1_sits_between_precision_and_recall() {
        let cm = ConfusionMatrix {
            positive: Label::Spam,
            true_pos: 8,
            false_pos: 3,
            false_neg: 1,
            true_neg: 10,
        };
        let (p, r, f) = (precision(&cm), recall(&cm), f1(&cm));
        assert!(p.min(r) <= f && f <= p.max(r));
        assert!((0.0..=1.0).contains(&f));
    }

    #[test]
    fn report_is_identical_from_either_orientation() {
        // Report never takes an orientation; this pins the transpose law by
        // rebuilding pairs from each matrix and comparing reports.
        let pairs = vec![
            (Label::Spam, Label::Spam),
            (Label::Spam, Label::Ham),
            (Label::Ham, Label::Spam),
            (Label::Ham, Label::Ham),
        ];
        let from_spam = pairs_from_matrix(&confusion(&pairs, Label::Spam).unwrap());
        let from_ham = pairs_from_matrix(&confusion(&pairs, Label::Ham).unwrap());
        let a = report(&from_spam).unwrap();
        let b = report(&from_ham).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, report(&pairs).unwrap());
    }

    #[test]
    fn rounding_is_half_up_at_four_decimals() {
        assert_eq!(round4(0.98615), 0.9862);
        assert_eq!(round4(0.98614), 0.9861);
        assert_eq!(round4(0.12345), 0.1235);
        assert_eq!(round4(0.0), 0.0);
        assert_eq!(round4(1.0), 1.0);
    }

    #[test]
    fn table_renders_all_rows() {
        let pairs = vec![
            (Label::Spam, Label::Spam),
            (Label::Ham, Label::Ham),
            (Label::Ham, Label::Spam),
        ];
        let table = report(&pairs).unwrap().to_table();
        for needle in ["precision", "ham", "spam", "accuracy", "macro avg", "weighted avg"] {
            assert!(table.contains(needle), "missing {needle} in:\n{table}");
        }
    }

    #[test]
    fn json_serialization_mirrors_the_table() {
        let pairs = vec![(Label::Spam, Label::Spam), (Label::Ham, Label::Ham)];
        let r = report(&pairs).unwrap();
        let json = serde_json::to_value(&r).unwrap();
        assert_eq!(json["ham"]["support"], 1);
        assert_eq!(json["weighted_avg"]["f1"], 1.0);
        assert_eq!(json["degenerate"], false);
    }
}
