//! Binary cross-entropy and the evaluation report (confusion matrix,
//! accuracy, precision, recall, F1). The positive class is "cactus" (label 1).

use serde::Serialize;
use serde_json::json;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-7;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// `-(y ln p + (1 - y) ln(1 - p))` with clamped `p`.
pub fn bce_loss(p: f64, label: u8) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Gradient of the loss with respect to the pre-sigmoid logit: `p - y`.
pub fn bce_logit_grad(p: f64, label: u8) -> f64 {
    p - f64::from(label)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn record(&mut self, predicted_positive: bool, label: u8) {
        match (predicted_positive, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_loss: f64,
    pub confusion: ConfusionMatrix,
    pub cactus: ClassMetrics,
    pub no_cactus: ClassMetrics,
    /// Ratios whose denominator was zero and were reported as 0.
    pub undefined: Vec<String>,
}

fn ratio(num: u64, den: u64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if den == 0 {
        undefined.push(name.to_string());
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64, name: &str, undefined: &mut Vec<String>) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        undefined.push(name.to_string());
        0.0
    }
}

/// Thresholds each probability (`p >= threshold` is positive) and tallies
/// the report.
pub fn compute_metrics(predictions: &[f64], labels: &[u8], threshold: f64) -> Result<MetricsReport> {
    if predictions.is_empty() {
        return Err(Error::Domain("cannot compute metrics on an empty set".into()));
    }
    if predictions.len() != labels.len() {
        return Err(Error::Domain(format!(
            "{} predictions but {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(Error::Domain(format!("label {l} is not 0 or 1")));
    }
    if let Some(p) = predictions.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("prediction {p} is not a probability")));
    }

    let mut cm = ConfusionMatrix::default();
    let mut loss = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        cm.record(p >= threshold, y);
        loss += bce_loss(p, y);
    }
    let n = predictions.len() as u64;
    let mut undefined = Vec::new();
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision", &mut undefined);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall", &mut undefined);
    let f1 = harmonic(precision, recall, "f1", &mut undefined);
    let neg_precision = ratio(cm.tn, cm.tn + cm.fn_, "no_cactus.precision", &mut undefined);
    let neg_recall = ratio(cm.tn, cm.tn + cm.fp, "no_cactus.recall", &mut undefined);
    let neg_f1 = harmonic(neg_precision, neg_recall, "no_cactus.f1", &mut undefined);

    Ok(MetricsReport {
        accuracy: (cm.tp + cm.tn) as f64 / n as f64,
        precision,
        recall,
        f1,
        mean_loss: loss / n as f64,
        confusion: cm,
        cactus: ClassMetrics {
            precision,
            recall,
            f1,
            support: cm.tp + cm.fn_,
        },
        no_cactus: ClassMetrics {
            precision: neg_precision,
            recall: neg_recall,
            f1: neg_f1,
            support: cm.tn + cm.fp,
        },
        undefined,
    })
}

impl MetricsReport {
    /// Structured report with top-level keys `accuracy`, `precision`,
    /// `recall`, `f1`, `loss` and `confusion`; per-class figures and the
    /// undefined-ratio flags live under `confusion`.
    pub fn to_json(&self) -> serde_json::Value {
        json!({
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "loss": self.mean_loss,
            "confusion": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "tn": self.confusion.tn,
                "fn": self.confusion.fn_,
                "per_class": {
                    "cactus": self.cactus,
                    "no_cactus": self.no_cactus,
                },
                "undefined": self.undefined,
            }
        })
    }

    /// Plain `key = value` lines.
    pub fn to_text(&self) -> String {
        let cm = &self.confusion;
        let mut s = String::new();
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
            ("loss", self.mean_loss),
        ] {
            s.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in [("tp", cm.tp), ("fp", cm.fp), ("tn", cm.tn), ("fn", cm.fn_)] {
            s.push_str(&format!("confusion.{k} = {v}\n"));
        }
        for (name, c) in [("cactus", &self.cactus), ("no_cactus", &self.no_cactus)] {
            s.push_str(&format!("{name}.precision = {}\n", c.precision));
            s.push_str(&format!("{name}.recall = {}\n", c.recall));
            s.push_str(&format!("{name}.f1 = {}\n", c.f1));
            s.push_str(&format!("{name}.support = {}\n", c.support));
        }
        if !self.undefined.is_empty() {
            s.push_str(&format!("undefined = {}\n", self.undefined.join(",")));
        }
        s
    }

    /// Human-readable summary table.
    pub fn table(&self) -> String {
        let cm = &self.confusion;
        let mut s = String::new();
        s.push_str("Accuracy  Precision  Recall  F1-score  Loss\n");
        s.push_str(&format!(
            "{:>7.2}%  {:>8.2}%  {:>5.2}%  {:>7.2}%  {:.4}\n",
            100.0 * self.accuracy,
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            self.mean_loss
        ));
        s.push_str(&format!(
            "confusion: tp={} fp={} tn={} fn={}\n",
            cm.tp, cm.fp, cm.tn, cm.fn_
        ));
        for (name, c) in [("cactus", &self.cactus), ("no_cactus", &self.no_cactus)] {
            s.push_str(&format!(
                "{name:<10} precision={:.4} recall={:.4} f1={:.4} support={}\n",
                c.precision, c.recall, c.f1, c.support
            ));
        }
        if !self.undefined.is_empty() {
            s.push_str(&format!("undefined (reported as 0): {}\n", self.undefined.join(", ")));
        }
        s
    }
}
