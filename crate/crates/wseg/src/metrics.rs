//! Pixel-level evaluation: confusion counts, the derived metrics
//! (accuracy, precision, TPR, FPR, Dice), and per-fold aggregation.

use crate::error::{Error, Result};
use crate::image::LabelMask;

/// Pixel confusion counts with class 1 (adipose) as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Counts per-pixel agreement between a prediction and the ground truth.
pub fn confusion(pred: &LabelMask, truth: &LabelMask) -> Result<ConfusionCounts> {
    if pred.height() != truth.height() || pred.width() != truth.width() {
        return Err(Error::shape(
            "confusion",
            format!("{}x{}", truth.height(), truth.width()),
            format!("{}x{}", pred.height(), pred.width()),
        ));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &t) in pred.classes().iter().zip(truth.classes()) {
        match (p, t) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// The metric bundle reported throughout the pipeline. All values in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub dice: f64,
}

/// Derives the metric bundle from confusion counts. Ratios with an empty
/// denominator take their "nothing to get wrong" value: precision and TPR
/// are 1 when no positives were predicted/present, FPR is 0 without true
/// negatives or false positives, and Dice is 1 when both sides are empty.
pub fn derive_metrics(c: &ConfusionCounts) -> Metrics {
    let total = c.total();
    let ratio = |num: usize, den: usize, empty: f64| {
        if den == 0 {
            empty
        } else {
            num as f64 / den as f64
        }
    };
    Metrics {
        accuracy: ratio(c.tp + c.tn, total, 1.0),
        precision: ratio(c.tp, c.tp + c.fp, 1.0),
        tpr: ratio(c.tp, c.tp + c.fn_, 1.0),
        fpr: ratio(c.fp, c.fp + c.tn, 0.0),
        dice: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, 1.0),
    }
}

/// Sample mean and standard deviation (n−1 convention).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Per-image metrics over one evaluation fold plus their aggregates.
///
/// TPR and Dice are aggregated over images that contain adipose truth
/// (`*_pos`); on negatives those metrics sit at their defined fallbacks and
/// would only dilute the averages. FPR and accuracy aggregate over all
/// images. `dice_all` keeps the everything-included mean for reference.
#[derive(Debug, Clone)]
pub struct FoldReport {
    pub per_image: Vec<(String, Metrics, bool)>,
    pub tpr_pos: (f64, f64),
    pub fpr_all: (f64, f64),
    pub dice_pos: (f64, f64),
    pub dice_all: (f64, f64),
    pub accuracy_all: (f64, f64),
    pub precision_pos: (f64, f64),
}

impl FoldReport {
    /// `entries` pairs a sample name with its metrics and whether the truth
    /// mask contains any adipose pixel.
    pub fn from_entries(entries: Vec<(String, Metrics, bool)>) -> FoldReport {
        let pos: Vec<&Metrics> = entries.iter().filter(|e| e.2).map(|e| &e.1).collect();
        let collect = |vals: Vec<f64>| mean_std(&vals);
        FoldReport {
            tpr_pos: collect(pos.iter().map(|m| m.tpr).collect()),
            dice_pos: collect(pos.iter().map(|m| m.dice).collect()),
            precision_pos: collect(pos.iter().map(|m| m.precision).collect()),
            fpr_all: collect(entries.iter().map(|e| e.1.fpr).collect()),
            dice_all: collect(entries.iter().map(|e| e.1.dice).collect()),
            accuracy_all: collect(entries.iter().map(|e| e.1.accuracy).collect()),
            per_image: entries,
        }
    }

    /// CSV rows, one per image: `name,label,accuracy,precision,tpr,fpr,dice`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("name,label,accuracy,precision,tpr,fpr,dice\n");
        for (name, m, positive) in &self.per_image {
            out.push_str(&format!(
                "{name},{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                u8::from(*positive),
                m.accuracy,
                m.precision,
                m.tpr,
                m.fpr,
                m.dice
            ));
        }
        out
    }

    /// Human-readable summary table (values in percent, mean ± std).
    pub fn to_table(&self, title: &str) -> String {
        let row = |name: &str, (mean, std): (f64, f64)| {
            format!("{name:<28} {:6.2} ± {:.2}\n", mean * 100.0, std * 100.0)
        };
        let mut out = format!("{title}\n");
        out.push_str(&row("True Positive Rate (pos)", self.tpr_pos));
        out.push_str(&row("False Positive Rate (all)", self.fpr_all));
        out.push_str(&row("Dice Coefficient (pos)", self.dice_pos));
        out.push_str(&row("Dice Coefficient (all)", self.dice_all));
        out.push_str(&row("Accuracy (all)", self.accuracy_all));
        out.push_str(&row("Precision (pos)", self.precision_pos));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_zero_prediction_counts_true_negatives() {
        let pred = LabelMask::zeros(4, 4);
        let truth = LabelMask::zeros(4, 4);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (0, 0, 16, 0));
    }

    #[test]
    fn complement_prediction_has_no_agreement_on_positives() {
        let mut truth = LabelMask::zeros(2, 2);
        truth.set(0, 0, 1);
        truth.set(1, 1, 1);
        let mut pred = LabelMask::zeros(2, 2);
        pred.set(0, 1, 1);
        pred.set(1, 0, 1);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(c.tp, 0);
        assert_eq!(c.tn, 0);
        assert_eq!(c.fp, 2);
        assert_eq!(c.fn_, 2);
    }

    #[test]
    fn confusion_matches_pixel_loop_oracle() {
        // fixed pseudo-random 8×8 pair
        let mut pred = LabelMask::zeros(8, 8);
        let mut truth = LabelMask::zeros(8, 8);
        for i in 0..64 {
            pred.classes_mut()[i] = ((i * 2654435761) % 7 < 3) as u8;
            truth.classes_mut()[i] = ((i * 40503) % 5 < 2) as u8;
        }
        let c = confusion(&pred, &truth).unwrap();
        let (mut tp, mut fp, mut tn, mut fnn) = (0, 0, 0, 0);
        for i in 0..64 {
            match (pred.classes()[i], truth.classes()[i]) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 0) => tn += 1,
                _ => fnn += 1,
            }
        }
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (tp, fp, tn, fnn));
        assert_eq!(c.total(), 64);
    }

    #[test]
    fn metric_fallbacks_score_clean_negatives_perfectly() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 25,
            fn_: 0,
        };
        let m = derive_metrics(&c);
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.precision, 1.0);
        assert_eq!(m.tpr, 1.0);
        assert_eq!(m.fpr, 0.0);
        assert_eq!(m.dice, 1.0);
    }

    #[test]
    fn dice_arithmetic() {
        let c = ConfusionCounts {
            tp: 50,
            fp: 10,
            tn: 30,
            fn_: 10,
        };
        let m = derive_metrics(&c);
        assert!((m.dice - 100.0 / 120.0).abs() < 1e-12);
        assert!((m.accuracy - 0.8).abs() < 1e-12);
        assert!((m.precision - 50.0 / 60.0).abs() < 1e-12);
        assert!((m.tpr - 50.0 / 60.0).abs() < 1e-12);
        assert!((m.fpr - 10.0 / 40.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_prediction_metrics() {
        let mut truth = LabelMask::zeros(3, 3);
        truth.set(2, 2, 1);
        let c = confusion(&truth.clone(), &truth).unwrap();
        let m = derive_metrics(&c);
        assert_eq!((m.accuracy, m.precision, m.tpr, m.dice, m.fpr), (1.0, 1.0, 1.0, 1.0, 0.0));
    }

    #[test]
    fn dice_is_symmetric() {
        let mut a = LabelMask::zeros(4, 4);
        a.set(0, 0, 1);
        a.set(1, 1, 1);
        let mut b = LabelMask::zeros(4, 4);
        b.set(1, 1, 1);
        b.set(2, 2, 1);
        b.set(3, 3, 1);
        let dab = derive_metrics(&confusion(&a, &b).unwrap()).dice;
        let dba = derive_metrics(&confusion(&b, &a).unwrap()).dice;
        assert_eq!(dab, dba);
    }

    #[test]
    fn sample_std_uses_n_minus_one() {
        let (mean, std) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((mean - 2.0).abs() < 1e-12);
        assert!((std - 1.0).abs() < 1e-12);
    }
}
