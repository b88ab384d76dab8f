//! Classification metrics, ROC analysis, bootstrap AUC and calibration.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{par, rng, stats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// The same outcomes with class 0 treated as positive.
    pub fn inverted(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

fn check_binary(y: &[u8]) -> Result<()> {
    if let Some(v) = y.iter().find(|&&v| v > 1) {
        return Err(Error::invalid(format!("labels must be 0 or 1, found {v}")));
    }
    Ok(())
}

pub fn confusion(y_true: &[u8], y_pred: &[u8]) -> Result<ConfusionMatrix> {
    check_lengths(y_true.len(), y_pred.len())?;
    check_binary(y_true)?;
    check_binary(y_pred)?;
    let mut cm = ConfusionMatrix::default();
    for (&t, &p) in y_true.iter().zip(y_pred) {
        match (t, p) {
            (1, 1) => cm.tp += 1,
            (0, 0) => cm.tn += 1,
            (0, 1) => cm.fp += 1,
            _ => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PrfReport {
    pub class0: ClassMetrics,
    pub class1: ClassMetrics,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
}

fn ratio(num: usize, den: usize, what: &str) -> f64 {
    if den == 0 {
        log::warn!("{what} is 0/0; reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn class_metrics(cm: &ConfusionMatrix) -> ClassMetrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp, "precision");
    let recall = ratio(cm.tp, cm.tp + cm.fn_, "recall");
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    ClassMetrics { precision, recall, f1 }
}

pub fn precision_recall_f1(cm: &ConfusionMatrix) -> PrfReport {
    let class1 = class_metrics(cm);
    let class0 = class_metrics(&cm.inverted());
    PrfReport {
        class0,
        class1,
        macro_avg: ClassMetrics {
            precision: 0.5 * (class0.precision + class1.precision),
            recall: 0.5 * (class0.recall + class1.recall),
            f1: 0.5 * (class0.f1 + class1.f1),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// Descending; the first entry is +∞ and yields the (0, 0) point.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    pub curve: RocCurve,
    pub auc: f64,
}

/// ROC curve over every distinct score (ties form one step) and its
/// trapezoidal area.
pub fn roc_auc(y_true: &[u8], scores: &[f64]) -> Result<RocResult> {
    check_lengths(y_true.len(), scores.len())?;
    check_binary(y_true)?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN score".into()));
    }
    let pos = y_true.iter().filter(|&&v| v == 1).count();
    let neg = y_true.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateLabels("ROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut thresholds = vec![f64::INFINITY];
    let mut fpr = vec![0.0];
    let mut tpr = vec![0.0];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if y_true[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x, y) = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (x - fpr[fpr.len() - 1]) * (y + tpr[tpr.len() - 1]) * 0.5;
        thresholds.push(s);
        fpr.push(x);
        tpr.push(y);
    }
    Ok(RocResult {
        curve: RocCurve { thresholds, fpr, tpr },
        auc,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapAuc {
    pub mean: f64,
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_boot: usize,
    /// Resamples dropped because they contained a single class.
    pub skipped: usize,
    pub seed: u64,
}

/// Resamples (label, score) pairs with replacement `n_boot` times and
/// summarises the AUCs with mean, standard deviation and a 2.5–97.5
/// percentile interval.
pub fn bootstrap_auc(y_true: &[u8], scores: &[f64], n_boot: usize, seed: u64) -> Result<BootstrapAuc> {
    if n_boot < 2 {
        return Err(Error::invalid("bootstrap needs n_boot >= 2"));
    }
    roc_auc(y_true, scores)?;
    let n = y_true.len();
    let aucs: Vec<Option<f64>> = par::map_range(n_boot, |b| {
        let mut r = rng::stream(seed, b as u64);
        let idx: Vec<usize> = (0..n).map(|_| r.random_range(0..n)).collect();
        let ys: Vec<u8> = idx.iter().map(|&i| y_true[i]).collect();
        let ss: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
        roc_auc(&ys, &ss).ok().map(|r| r.auc)
    });
    let kept: Vec<f64> = aucs.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(Error::DegenerateLabels(
            "every bootstrap resample had a single class".into(),
        ));
    }
    let sorted = stats::sorted(&kept);
    Ok(BootstrapAuc {
        mean: stats::mean(&kept),
        std: if kept.len() > 1 { stats::std_dev(&kept) } else { 0.0 },
        ci_low: stats::quantile_sorted(&sorted, 0.025),
        ci_high: stats::quantile_sorted(&sorted, 0.975),
        n_boot,
        skipped: n_boot - kept.len(),
        seed,
    })
}

fn check_probs(y_true: &[u8], probs: &[f64]) -> Result<()> {
    check_lengths(y_true.len(), probs.len())?;
    check_binary(y_true)?;
    if y_true.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::invalid(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

pub fn brier(y_true: &[u8], probs: &[f64]) -> Result<f64> {
    check_probs(y_true, probs)?;
    Ok(y_true
        .iter()
        .zip(probs)
        .map(|(&y, &p)| (f64::from(y) - p).powi(2))
        .sum::<f64>()
        / y_true.len() as f64)
}

pub const LOG_LOSS_EPS: f64 = 1e-15;

pub fn log_loss(y_true: &[u8], probs: &[f64], eps: f64) -> Result<f64> {
    check_lengths(y_true.len(), probs.len())?;
    check_binary(y_true)?;
    if y_true.is_empty() {
        return Err(Error::Empty("no predictions".into()));
    }
    Ok(-y_true
        .iter()
        .zip(probs)
        .map(|(&y, &p)| {
            let p = p.clamp(eps, 1.0 - eps);
            if y == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / y_true.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    /// `n_bins + 1` equal-width edges on [0, 1].
    pub edges: Vec<f64>,
    /// Per bin; `None` for empty bins.
    pub mean_pred: Vec<Option<f64>>,
    pub obs_rate: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl CalibrationCurve {
    pub fn bin_mid(&self, b: usize) -> f64 {
        (2 * b + 1) as f64 / (2 * self.counts.len()) as f64
    }
}

pub fn calibration_curve(y_true: &[u8], probs: &[f64], n_bins: usize) -> Result<CalibrationCurve> {
    if n_bins < 2 {
        return Err(Error::invalid("calibration needs at least 2 bins"));
    }
    check_probs(y_true, probs)?;
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    let mut counts = vec![0usize; n_bins];
    for (&y, &p) in y_true.iter().zip(probs) {
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        sum_y[b] += f64::from(y);
        counts[b] += 1;
    }
    let per_bin = |s: &[f64]| -> Vec<Option<f64>> {
        s.iter()
            .zip(&counts)
            .map(|(&v, &c)| (c > 0).then(|| v / c as f64))
            .collect()
    };
    Ok(CalibrationCurve {
        edges: (0..=n_bins).map(|b| b as f64 / n_bins as f64).collect(),
        mean_pred: per_bin(&sum_p),
        obs_rate: per_bin(&sum_y),
        counts,
    })
}

pub fn roc_csv(curve: &RocCurve) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for i in 0..curve.fpr.len() {
        s.push_str(&format!("{},{},{}\n", curve.fpr[i], curve.tpr[i], curve.thresholds[i]));
    }
    s
}

pub fn calibration_csv(curve: &CalibrationCurve) -> String {
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut s = String::from("bin_mid,mean_pred,obs_rate,count\n");
    for b in 0..curve.counts.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            curve.bin_mid(b),
            fmt(curve.mean_pred[b]),
            fmt(curve.obs_rate[b]),
            curve.counts[b]
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub threshold: f64,
    pub n_boot: usize,
    pub calibration_bins: usize,
    pub log_loss_eps: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            threshold: 0.5,
            n_boot: 200,
            calibration_bins: 10,
            log_loss_eps: LOG_LOSS_EPS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub model: String,
    pub n: usize,
    pub threshold: f64,
    pub confusion: ConfusionMatrix,
    pub scores: PrfReport,
    pub auc: f64,
    pub bootstrap: BootstrapAuc,
    pub brier: f64,
    pub log_loss: f64,
    #[serde(skip)]
    pub roc: Option<RocCurve>,
    #[serde(skip)]
    pub calibration: Option<CalibrationCurve>,
}

/// Full evaluation of one model's probabilities. `labels` overrides the
/// thresholded probabilities for hard-vote ensembles.
pub fn evaluate(
    model: &str,
    y_true: &[u8],
    probs: &[f64],
    labels: Option<&[u8]>,
    settings: &EvalSettings,
    seed: u64,
) -> Result<EvaluationReport> {
    check_probs(y_true, probs)?;
    let thresholded: Vec<u8> = probs.iter().map(|&p| u8::from(p >= settings.threshold)).collect();
    let pred = labels.unwrap_or(&thresholded);
    let cm = confusion(y_true, pred)?;
    let roc = roc_auc(y_true, probs)?;
    let calibration = calibration_curve(y_true, probs, settings.calibration_bins)?;
    Ok(EvaluationReport {
        model: model.to_string(),
        n: y_true.len(),
        threshold: settings.threshold,
        confusion: cm,
        scores: precision_recall_f1(&cm),
        auc: roc.auc,
        bootstrap: bootstrap_auc(y_true, probs, settings.n_boot, seed)?,
        brier: brier(y_true, probs)?,
        log_loss: log_loss(y_true, probs, settings.log_loss_eps)?,
        roc: Some(roc.curve),
        calibration: Some(calibration),
    })
}

impl EvaluationReport {
    /// Structured text with a fixed key order.
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// P(score⁺ > score⁻) + ½·P(tie) over all positive/negative pairs.
    fn concordance_auc(y: &[u8], s: &[f64]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i] == 1 && y[j] == 0 {
                    den += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_fixture() {
        let cm = confusion(&[1, 1, 0, 0], &[1, 0, 0, 1]).unwrap();
        assert_eq!(
            cm,
            ConfusionMatrix {
                tp: 1,
                tn: 1,
                fp: 1,
                fn_: 1
            }
        );
        let perfect = confusion(&[1, 0, 1], &[1, 0, 1]).unwrap();
        assert_eq!((perfect.fp, perfect.fn_), (0, 0));
        let wrong = confusion(&[1, 0, 1], &[0, 1, 0]).unwrap();
        assert_eq!((wrong.tp, wrong.tn), (0, 0));
        assert!(confusion(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn prf_fixtures() {
        let cm = ConfusionMatrix {
            tp: 3,
            tn: 4,
            fp: 1,
            fn_: 2,
        };
        let r = precision_recall_f1(&cm);
        assert_eq!(r.class1.precision, 0.75);
        assert_eq!(r.class1.recall, 0.6);
        assert_eq!(r.class1.f1, 2.0 * 0.75 * 0.6 / 1.35);
        assert_eq!(r.class0.precision, 4.0 / 6.0);
        assert_eq!(r.class0.recall, 0.8);
        assert_eq!(r.macro_avg.recall, 0.7);

        let same = precision_recall_f1(&ConfusionMatrix {
            tp: 2,
            tn: 0,
            fp: 2,
            fn_: 2,
        });
        assert_eq!(same.class1.f1, same.class1.precision);

        let none = precision_recall_f1(&ConfusionMatrix {
            tp: 0,
            tn: 5,
            fp: 0,
            fn_: 3,
        });
        assert_eq!(none.class1.precision, 0.0);
        assert_eq!(none.class1.f1, 0.0);
    }

    #[test]
    fn auc_edges() {
        assert_eq!(roc_auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[1, 1, 0, 0], &[0.1, 0.2, 0.3, 0.4]).unwrap().auc, 0.0);
        assert_eq!(roc_auc(&[1, 0], &[0.5, 0.5]).unwrap().auc, 0.5);
        assert!(roc_auc(&[1, 1], &[0.5, 0.6]).is_err());
        let c = roc_auc(&[0, 1, 0, 1, 1], &[0.3, 0.3, 0.1, 0.9, 0.2]).unwrap().curve;
        assert_eq!(c.thresholds, vec![f64::INFINITY, 0.9, 0.3, 0.2, 0.1]);
        assert_eq!((c.fpr[0], c.tpr[0]), (0.0, 0.0));
        assert_eq!((*c.fpr.last().unwrap(), *c.tpr.last().unwrap()), (1.0, 1.0));
        assert!(roc_csv(&c).starts_with("fpr,tpr,threshold\n0,0,inf\n"));
    }

    #[test]
    fn brier_and_log_loss_fixtures() {
        assert_eq!(brier(&[1, 0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(brier(&[1, 0, 1, 0], &[0.5; 4]).unwrap(), 0.25);
        assert!((brier(&[1, 0], &[0.8, 0.3]).unwrap() - 0.065).abs() < 1e-15);
        assert!(brier(&[1], &[1.2]).is_err());
        assert!((log_loss(&[1, 0], &[0.5, 0.5], LOG_LOSS_EPS).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(log_loss(&[1, 0], &[1.0, 0.0], LOG_LOSS_EPS).unwrap() < 1e-10);
        let expected = -(0.8f64.ln() + 0.7f64.ln()) / 2.0;
        assert!((log_loss(&[1, 0], &[0.8, 0.3], LOG_LOSS_EPS).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn calibration_fixtures() {
        let y: Vec<u8> = (0..10).map(|i| u8::from(i < 3)).collect();
        let c = calibration_curve(&y, &[0.3; 10], 10).unwrap();
        assert_eq!(c.counts.iter().sum::<usize>(), 10);
        let occupied: Vec<usize> = (0..10).filter(|&b| c.counts[b] > 0).collect();
        assert_eq!(occupied, vec![3]);
        assert!((c.mean_pred[3].unwrap() - 0.3).abs() < 1e-12);
        assert!((c.obs_rate[3].unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(c.mean_pred[0], None);

        let exact = calibration_curve(&[0, 1, 1, 0], &[0.0, 1.0, 1.0, 0.0], 10).unwrap();
        for b in 0..10 {
            if exact.counts[b] > 0 {
                assert_eq!(exact.mean_pred[b], exact.obs_rate[b]);
            }
        }
        assert!(calibration_csv(&exact).starts_with("bin_mid,mean_pred,obs_rate,count\n0.05,0,0,2\n0.15,,,0\n"));
        assert!(calibration_curve(&[0, 1], &[0.1, 0.9], 1).is_err());
    }

    #[test]
    fn bootstrap_perfect_and_seeded() {
        let y: Vec<u8> = (0..50).map(|i| u8::from(i % 2 == 0)).collect();
        let s: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
        let b = bootstrap_auc(&y, &s, 200, 42).unwrap();
        assert_eq!((b.mean, b.std), (1.0, 0.0));
        let noisy: Vec<f64> = (0..50).map(|i| ((i * 37) % 50) as f64).collect();
        assert_eq!(
            bootstrap_auc(&y, &noisy, 100, 9).unwrap(),
            bootstrap_auc(&y, &noisy, 100, 9).unwrap()
        );
        assert!(bootstrap_auc(&y, &noisy, 1, 9).is_err());
    }

    #[test]
    fn bootstrap_ci_coverage() {
        let mut covered = 0;
        for trial in 0..50u64 {
            let mut r = rng::seeded(1000 + trial);
            let y: Vec<u8> = (0..120).map(|_| u8::from(r.random::<f64>() < 0.4)).collect();
            let s: Vec<f64> = y.iter().map(|&v| f64::from(v) + 1.5 * r.random::<f64>()).collect();
            let full = roc_auc(&y, &s).unwrap().auc;
            let b = bootstrap_auc(&y, &s, 200, trial).unwrap();
            if b.ci_low <= full && full <= b.ci_high {
                covered += 1;
            }
        }
        assert!(covered >= 45, "{covered}/50");
    }

    #[test]
    fn bootstrap_thread_invariant() {
        let y: Vec<u8> = (0..80).map(|i| u8::from(i % 3 == 0)).collect();
        let s: Vec<f64> = (0..80).map(|i| ((i * 13) % 17) as f64).collect();
        let a = par::with_threads(1, || bootstrap_auc(&y, &s, 64, 5).unwrap());
        let b = par::with_threads(3, || bootstrap_auc(&y, &s, 64, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn report_text_is_stable() {
        let y = [1, 0, 1, 1, 0, 0, 1, 0];
        let p = [0.9, 0.2, 0.6, 0.4, 0.5, 0.1, 0.8, 0.3];
        let a = evaluate("m", &y, &p, None, &EvalSettings::default(), 1).unwrap();
        let t = a.to_text().unwrap();
        assert_eq!(
            t,
            evaluate("m", &y, &p, None, &EvalSettings::default(), 1)
                .unwrap()
                .to_text()
                .unwrap()
        );
        let keys: Vec<&str> = t
            .lines()
            .filter(|l| !l.starts_with('[') && !l.is_empty())
            .map(|l| l.split(' ').next().unwrap())
            .collect();
        assert_eq!(&keys[..4], &["model", "n", "threshold", "auc"]);
        assert_eq!(a.confusion, confusion(&y, &[1, 0, 1, 0, 1, 0, 1, 0]).unwrap());
    }

    fn fixture() -> impl Strategy<Value = (Vec<u8>, Vec<f64>)> {
        (2usize..80).prop_flat_map(|n| {
            (
                proptest::collection::vec(0u8..2, n),
                proptest::collection::vec((0i32..20).prop_map(|v| f64::from(v) / 4.0), n),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_matches_concordance((y, s) in fixture()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let auc = roc_auc(&y, &s).unwrap().auc;
            prop_assert!((auc - concordance_auc(&y, &s)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&auc));
            let c = roc_auc(&y, &s).unwrap().curve;
            prop_assert!(c.fpr.windows(2).all(|w| w[0] <= w[1]) && c.tpr.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn auc_symmetry_and_monotone_invariance(y in proptest::collection::vec(0u8..2, 2..60), seed in any::<u64>()) {
            prop_assume!(y.contains(&0) && y.contains(&1));
            let mut r = rng::seeded(seed);
            let s: Vec<f64> = y.iter().map(|_| r.random::<f64>()).collect();
            let a = roc_auc(&y, &s).unwrap().auc;
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((a + roc_auc(&y, &neg).unwrap().auc - 1.0).abs() < 1e-12);
            let warped: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() - 7.0).collect();
            prop_assert!((a - roc_auc(&y, &warped).unwrap().auc).abs() < 1e-12);
        }

        #[test]
        fn macro_f1_inversion_symmetric(y in proptest::collection::vec(0u8..2, 1..50), p in proptest::collection::vec(0u8..2, 50)) {
            let p = &p[..y.len()];
            let a = precision_recall_f1(&confusion(&y, p).unwrap()).macro_avg.f1;
            let yi: Vec<u8> = y.iter().map(|v| 1 - v).collect();
            let pi: Vec<u8> = p.iter().map(|v| 1 - v).collect();
            let b = precision_recall_f1(&confusion(&yi, &pi).unwrap()).macro_avg.f1;
            prop_assert!((a - b).abs() < 1e-15);
        }

        #[test]
        fn base_rate_constant_brier(half in 1usize..50) {
            let y: Vec<u8> = (0..2 * half).map(|i| u8::from(i < half)).collect();
            prop_assert!(brier(&y, &vec![0.5; 2 * half]).unwrap() <= 0.25);
        }
    }
}
