//! Anomaly scoring, threshold classification and detection metrics.

use std::cmp::Ordering;
use std::path::Path;
use std::time::Instant;

use serde::{Serialize, Serializer};

use crate::error::{config_err, shape_err, Error, Result};
use crate::io::write_file;
use crate::model::DualAttWaveNet;
use crate::numerics::Tensor;
use crate::scalar::Scalar;
use crate::sim::SplitInputs;
use crate::training::{effective_lambda2, per_sample_losses, Threshold};
use crate::wavelet::WaveletBank;

/// Per-sample composite reconstruction loss; larger is more anomalous.
pub fn score<T: Scalar>(
    model: &DualAttWaveNet<T>,
    bank: &WaveletBank<T>,
    data: &SplitInputs<T>,
    lambda1: f64,
    lambda2: f64,
) -> Result<Vec<f64>> {
    let lambda2 = effective_lambda2(model.config().ablation, lambda2);
    per_sample_losses(model, bank, data, lambda1, lambda2, 64)
}

/// Interference iff the score strictly exceeds the threshold.
pub fn classify(score: f64, threshold: &Threshold) -> u8 {
    u8::from(score > threshold.value)
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(shape_err!("{} scores vs {} labels", scores.len(), labels.len()));
    }
    if let Some(l) = labels.iter().find(|&&l| l > 1) {
        return Err(config_err!("labels must be 0 or 1, got {l}"));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::Numerical(format!("score is {s}")));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(config_err!("both classes must be present ({pos} positive, {neg} negative)"));
    }
    Ok((pos, neg))
}

/// Mann-Whitney estimate of `P(score₊ > score₋)`, ties counted one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of midranks (1-based) of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * idx[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn ser_threshold<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn fmt_threshold(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    #[serde(serialize_with = "ser_threshold")]
    pub threshold: f64,
}

/// Operating points of the `score > thr` rule for `thr` in `+∞`, every
/// distinct score in decreasing order, then `-∞`.
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::with_capacity(scores.len() + 2);
    out.push(RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    });
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let thr = scores[idx[i]];
        // Everything above `thr` has already been counted.
        out.push(RocPoint {
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
            threshold: thr,
        });
        while i < idx.len() && scores[idx[i]] == thr {
            if labels[idx[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    out.push(RocPoint {
        fpr: 1.0,
        tpr: 1.0,
        threshold: f64::NEG_INFINITY,
    });
    Ok(out)
}

/// Trapezoidal area under a ROC polyline.
pub fn roc_area(roc: &[RocPoint]) -> f64 {
    roc.windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tp: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tn + self.fp + self.fn_ + self.tp
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// F1 of the interference class; 0 when undefined.
    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// `(accuracy, f1, confusion)` of hard predictions.
pub fn f1_accuracy_confusion(pred: &[u8], labels: &[u8]) -> Result<(f64, f64, Confusion)> {
    if pred.len() != labels.len() {
        return Err(shape_err!("{} predictions vs {} labels", pred.len(), labels.len()));
    }
    let mut c = Confusion::default();
    for (&p, &l) in pred.iter().zip(labels) {
        match (p, l) {
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            (0, 1) => c.fn_ += 1,
            (1, 1) => c.tp += 1,
            _ => return Err(config_err!("labels and predictions must be 0 or 1, got ({p}, {l})")),
        }
    }
    Ok((c.accuracy(), c.f1(), c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Timing {
    pub median_s: f64,
    pub mean_s: f64,
    pub repeats: usize,
}

/// Wall-clock latency of reconstructing one batch, over `repeats` runs
/// after one discarded warm-up.
pub fn time_inference<T: Scalar>(
    model: &DualAttWaveNet<T>,
    time: &Tensor<T>,
    freq: &Tensor<T>,
    repeats: usize,
) -> Result<Timing> {
    if repeats < 3 {
        return Err(config_err!("timing needs at least 3 repeats, got {repeats}"));
    }
    model.reconstruct(time, freq)?;
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        std::hint::black_box(model.reconstruct(time, freq)?);
        samples.push(t0.elapsed().as_secs_f64());
    }
    let mean_s = samples.iter().sum::<f64>() / repeats as f64;
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let median_s = if repeats % 2 == 1 {
        samples[repeats / 2]
    } else {
        (samples[repeats / 2 - 1] + samples[repeats / 2]) / 2.0
    };
    Ok(Timing {
        median_s,
        mean_s,
        repeats,
    })
}

/// Test-split detection results. Rates are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub ablation: String,
    pub accuracy: f64,
    pub f1: f64,
    pub auc: f64,
    pub confusion: Confusion,
    pub threshold: Threshold,
    pub n_class0: usize,
    pub n_class1: usize,
    pub timing_batch_size: usize,
    pub median_batch_time_s: f64,
    pub mean_batch_time_s: f64,
    pub timing_repeats: usize,
    pub roc: Vec<RocPoint>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub lambda1: f64,
    pub lambda2: f64,
    pub timing_batch: usize,
    pub timing_repeats: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.1,
            timing_batch: 64,
            timing_repeats: 5,
        }
    }
}

/// Scores, classifies and summarizes the test split.
pub fn evaluate<T: Scalar>(
    model: &DualAttWaveNet<T>,
    bank: &WaveletBank<T>,
    threshold: &Threshold,
    test: &SplitInputs<T>,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let scores = score(model, bank, test, opts.lambda1, opts.lambda2)?;
    let labels = &test.labels;
    let pred: Vec<u8> = scores.iter().map(|&s| classify(s, threshold)).collect();
    let (accuracy, f1, confusion) = f1_accuracy_confusion(&pred, labels)?;
    let auc = auc(&scores, labels)?;
    let roc = roc_curve(&scores, labels)?;

    let n = labels.len();
    let b = opts.timing_batch.clamp(1, n);
    let (lt, lf) = (test.time.shape()[1], test.freq.shape()[1]);
    let tb = Tensor::from_vec(&[b, lt], test.time.data()[..b * lt].to_vec())?;
    let fb = Tensor::from_vec(&[b, lf], test.freq.data()[..b * lf].to_vec())?;
    let timing = time_inference(model, &tb, &fb, opts.timing_repeats)?;
    let n_class1 = labels.iter().filter(|&&l| l == 1).count();
    Ok(MetricsReport {
        ablation: model.config().ablation.cli_name().to_string(),
        accuracy,
        f1,
        auc,
        confusion,
        threshold: *threshold,
        n_class0: n - n_class1,
        n_class1,
        timing_batch_size: b,
        median_batch_time_s: timing.median_s,
        mean_batch_time_s: timing.mean_s,
        timing_repeats: timing.repeats,
        roc,
    })
}

pub const REPORT_FILE: &str = "report.json";
pub const ROC_FILE: &str = "roc.csv";
pub const CONFUSION_FILE: &str = "confusion.csv";

impl MetricsReport {
    /// Copy with wall-clock fields zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> Self {
        Self {
            median_batch_time_s: 0.0,
            mean_batch_time_s: 0.0,
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn roc_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fpr", "tpr", "thr"]).map_err(csv_err)?;
        for p in &self.roc {
            w.write_record([p.fpr.to_string(), p.tpr.to_string(), fmt_threshold(p.threshold)])
                .map_err(csv_err)?;
        }
        finish_csv(w)
    }

    /// 2×2 table, rows are true classes, columns predicted classes.
    pub fn confusion_csv(&self) -> Result<String> {
        let c = &self.confusion;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["actual", "pred_0", "pred_1"]).map_err(csv_err)?;
        w.write_record(["0".to_string(), c.tn.to_string(), c.fp.to_string()])
            .map_err(csv_err)?;
        w.write_record(["1".to_string(), c.fn_.to_string(), c.tp.to_string()])
            .map_err(csv_err)?;
        finish_csv(w)
    }

    /// Writes the JSON report and both CSV tables into `dir`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_file(&dir.join(REPORT_FILE), self.to_json()?.as_bytes())?;
        write_file(&dir.join(ROC_FILE), self.roc_csv()?.as_bytes())?;
        write_file(&dir.join(CONFUSION_FILE), self.confusion_csv()?.as_bytes())
    }

    /// `accuracy, f1, auc, time_s` summary line.
    pub fn summary_row(&self) -> String {
        format!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>10.4}",
            self.ablation, self.accuracy, self.f1, self.auc, self.median_batch_time_s
        )
    }

    pub fn summary_header() -> String {
        format!("{:<24} {:>8} {:>8} {:>8} {:>10}", "model", "accuracy", "f1", "auc", "time_s")
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(scores: &[f64], labels: &[u8]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] == 1 && labels[j] == 0 {
                    den += 1.0;
                    num += if si > sj {
                        1.0
                    } else if si == sj {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1, 1]).is_err());
    }

    #[test]
    fn auc_with_ties_matches_brute_force() {
        let s = [0.2, 0.2, 0.5, 0.1, 0.5, 0.9, 0.2];
        let l = [0, 1, 1, 0, 0, 1, 1];
        assert!((auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn roc_endpoints_and_area() {
        let s = [0.1, 0.4, 0.35, 0.8];
        let l = [0, 0, 1, 1];
        let roc = roc_curve(&s, &l).unwrap();
        let first = roc.first().unwrap();
        let last = roc.last().unwrap();
        assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        assert!((roc_area(&roc) - 0.75).abs() < 1e-12);
        assert!(roc.windows(2).all(|w| w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr));
    }

    #[test]
    fn confusion_example() {
        // tp=3, fp=1, fn=2, tn=4
        let pred = [1, 1, 1, 1, 0, 0, 0, 0, 0, 0];
        let labels = [1, 1, 1, 0, 1, 1, 0, 0, 0, 0];
        let (acc, f1, c) = f1_accuracy_confusion(&pred, &labels).unwrap();
        assert_eq!((c.tp, c.fp, c.fn_, c.tn), (3, 1, 2, 4));
        assert!((c.precision() - 0.75).abs() < 1e-15);
        assert!((c.recall() - 0.6).abs() < 1e-15);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((acc - 0.7).abs() < 1e-15);
    }

    #[test]
    fn degenerate_f1_is_zero() {
        let (acc, f1, _) = f1_accuracy_confusion(&[0, 0, 0], &[1, 0, 1]).unwrap();
        assert_eq!(f1, 0.0);
        assert!((acc - 1.0 / 3.0).abs() < 1e-15);
        assert!(f1_accuracy_confusion(&[0], &[0, 1]).is_err());
    }

    #[test]
    fn strict_threshold() {
        let t = Threshold {
            mu: 1.0,
            sigma: 0.5,
            value: 1.5,
        };
        assert_eq!(classify(1.5, &t), 0);
        assert_eq!(classify(1.5 + 1e-12, &t), 1);
    }

    #[test]
    fn roc_csv_has_sentinels() {
        let roc = roc_curve(&[0.1, 0.9], &[0, 1]).unwrap();
        let r = MetricsReport {
            ablation: "full".into(),
            accuracy: 1.0,
            f1: 1.0,
            auc: 1.0,
            confusion: Confusion::default(),
            threshold: Threshold {
                mu: 0.0,
                sigma: 0.0,
                value: 0.0,
            },
            n_class0: 1,
            n_class1: 1,
            timing_batch_size: 1,
            median_batch_time_s: 0.0,
            mean_batch_time_s: 0.0,
            timing_repeats: 3,
            roc,
        };
        let csv = r.roc_csv().unwrap();
        assert!(csv.starts_with("fpr,tpr,thr\n0,0,inf\n"));
        assert!(csv.trim_end().ends_with("1,1,-inf"));
        assert!(r.to_json().unwrap().contains("\"-inf\""));
    }
}
