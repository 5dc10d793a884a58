//! Confusion matrices, derived rates, ROC/AUC, report tables and SVG plots.
//!
//! Polyp (label 1) is the positive class and a sample is predicted positive
//! when its score is `>=` the threshold.

mod plots;
mod report;

pub use plots::{emit_plots, performance_svg, confusion_svg, roc_svg, PlotFiles, PLOT_LAYOUT};
pub use report::{emit_report, fmt_pct1, fmt_pct0, ReportFiles, ReportRow};

use crate::data::Label;
use crate::error::{format_err, value_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ConfusionMatrix {
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tp: u64,
}

impl ConfusionMatrix {
    pub fn new(tn: u64, fp: u64, fn_: u64, tp: u64) -> Self {
        Self { tn, fp, fn_, tp }
    }

    pub fn total(&self) -> u64 {
        self.tn + self.fp + self.fn_ + self.tp
    }
}

/// Tallies predictions `score >= threshold` against labels.
pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<ConfusionMatrix> {
    if scores.len() != labels.len() {
        return Err(value_err!("{} scores but {} labels", scores.len(), labels.len()));
    }
    if scores.is_empty() {
        return Err(value_err!("confusion matrix needs at least one sample"));
    }
    if let Some(s) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(value_err!("score {s} is outside [0, 1]"));
    }
    let mut cm = ConfusionMatrix::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (y, s >= threshold) {
            (Label::Normal, false) => cm.tn += 1,
            (Label::Normal, true) => cm.fp += 1,
            (Label::Polyp, false) => cm.fn_ += 1,
            (Label::Polyp, true) => cm.tp += 1,
        }
    }
    Ok(cm)
}

/// Rates derived from a confusion matrix. `None` marks a 0/0 ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub misclassification: f64,
    pub sensitivity: Option<f64>,
    pub precision: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(value_err!("metrics need a non-empty confusion matrix"));
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let sensitivity = ratio(cm.tp, cm.tp + cm.fn_);
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(s)) if p + s > 0.0 => Some(2.0 * p * s / (p + s)),
        _ => None,
    };
    Ok(Metrics {
        accuracy,
        // 1 - accuracy rather than (fp+fn)/total so the two sum to exactly 1
        misclassification: 1.0 - accuracy,
        sensitivity,
        precision,
        specificity: ratio(cm.tn, cm.tn + cm.fp),
        f1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    /// Predict positive iff `score >= threshold`; the sentinels are `+inf` and `-inf`.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// Curve through `points` with its trapezoid area.
    pub fn from_points(points: Vec<RocPoint>) -> Self {
        let auc = points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        Self { points, auc }
    }

    /// Reads [`RocCurve::to_csv`] output back.
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        if lines.next() != Some("threshold,fpr,tpr") {
            return Err(format_err!("ROC file must start with `threshold,fpr,tpr`"));
        }
        let mut points = Vec::new();
        for line in lines {
            let bad = || format_err!("malformed ROC row `{line}`");
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            let [threshold, fpr, tpr] = f[..] else {
                return Err(bad());
            };
            points.push(RocPoint { threshold, fpr, tpr });
        }
        if points.len() < 2 {
            return Err(format_err!("ROC file has fewer than two points"));
        }
        Ok(Self::from_points(points))
    }

    /// `threshold,fpr,tpr` rows; sentinels print as `inf` and `-inf`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,fpr,tpr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.fpr, p.tpr));
        }
        s
    }
}

/// Threshold sweep over the distinct scores (descending) bracketed by
/// `+inf` and `-inf`; area by the trapezoid rule.
pub fn roc(scores: &[f64], labels: &[Label]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(value_err!("{} scores but {} labels", scores.len(), labels.len()));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(value_err!("score {s} is not finite"));
    }
    let pos = labels.iter().filter(|&&l| l == Label::Polyp).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(value_err!("ROC needs both classes, got {pos} positive and {neg} negative"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            match labels[order[i]] {
                Label::Polyp => tp += 1,
                Label::Normal => fp += 1,
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold: t,
            fpr: fp as f64 / neg as f64,
            tpr: tp as f64 / pos as f64,
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    Ok(RocCurve::from_points(points))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Normal as N, Polyp as P};

    #[test]
    fn confusion_examples() {
        assert_eq!(confusion(&[0.9, 0.1], &[P, N], 0.5).unwrap(), ConfusionMatrix::new(1, 0, 0, 1));
        assert_eq!(confusion(&[0.4, 0.6], &[P, N], 0.5).unwrap(), ConfusionMatrix::new(0, 1, 1, 0));
        assert_eq!(confusion(&[0.5], &[P], 0.5).unwrap().tp, 1);
        assert!(confusion(&[0.5], &[P, N], 0.5).is_err());
        assert!(confusion(&[], &[], 0.5).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&ConfusionMatrix::new(57, 4, 4, 57)).unwrap();
        assert!((m.accuracy - 0.934).abs() < 5e-4);
        assert!((m.misclassification - 0.066).abs() < 5e-4);
        let m = metrics(&ConfusionMatrix::new(61, 0, 0, 61)).unwrap();
        assert_eq!(
            [m.accuracy, m.sensitivity.unwrap(), m.precision.unwrap(), m.specificity.unwrap(), m.f1.unwrap()],
            [1.0; 5]
        );
        let m = metrics(&ConfusionMatrix::new(55, 6, 3, 58)).unwrap();
        assert!((m.sensitivity.unwrap() - 58.0 / 61.0).abs() < 1e-15);
        assert!((m.precision.unwrap() - 58.0 / 64.0).abs() < 1e-15);
        assert!((m.f1.unwrap() - 0.928).abs() < 5e-4);
    }

    #[test]
    fn undefined_rates_are_none() {
        let m = metrics(&ConfusionMatrix::new(5, 0, 0, 0)).unwrap();
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.precision, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.specificity, Some(1.0));
        let m = metrics(&ConfusionMatrix::new(0, 2, 3, 0)).unwrap();
        assert_eq!(m.sensitivity, Some(0.0));
        assert_eq!(m.f1, None);
        assert!(metrics(&ConfusionMatrix::default()).is_err());
    }

    #[test]
    fn accuracy_and_misclassification_sum_to_one() {
        for total in 1..=300u64 {
            for correct in 0..=total {
                let m = metrics(&ConfusionMatrix::new(correct, total - correct, 0, 0)).unwrap();
                assert_eq!(m.accuracy + m.misclassification, 1.0, "{correct}/{total}");
            }
        }
    }

    #[test]
    fn roc_examples() {
        let r = roc(&[0.9, 0.8, 0.7, 0.1], &[P, N, P, N]).unwrap();
        assert_eq!(r.auc, 0.75);
        assert_eq!(roc(&[0.9, 0.8, 0.2, 0.1], &[P, P, N, N]).unwrap().auc, 1.0);
        let flat = roc(&[0.5; 4], &[P, N, P, N]).unwrap();
        assert_eq!(flat.auc, 0.5);
        let xy: Vec<(f64, f64)> = flat.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(xy, [(0.0, 0.0), (1.0, 1.0), (1.0, 1.0)]);
        assert!(roc(&[0.1, 0.2], &[P, P]).is_err());
    }

    #[test]
    fn roc_csv_has_sentinels() {
        let csv = roc(&[0.9, 0.1], &[P, N]).unwrap().to_csv();
        assert_eq!(csv, "threshold,fpr,tpr\ninf,0,0\n0.9,0,1\n0.1,1,1\n-inf,1,1\n");
        let curve = roc(&[0.9, 0.8, 0.7, 0.1], &[P, N, P, N]).unwrap();
        assert_eq!(RocCurve::parse(&curve.to_csv()).unwrap(), curve);
        assert!(RocCurve::parse("threshold,fpr,tpr\ninf,0,0\n").is_err());
    }

    proptest! {
        #[test]
        fn roc_is_monotone_with_fixed_endpoints(
            data in prop::collection::vec((0u8..10, any::<bool>()), 2..100),
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 10.0).collect();
            let mut labels: Vec<Label> = data.iter().map(|(_, p)| if *p { P } else { N }).collect();
            labels[0] = P;
            labels[1] = N;
            let r = roc(&scores, &labels).unwrap();
            let first = r.points.first().unwrap();
            let last = r.points.last().unwrap();
            prop_assert_eq!((first.fpr, first.tpr), (0.0, 0.0));
            prop_assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
            for w in r.points.windows(2) {
                prop_assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            }
            prop_assert!((0.0..=1.0).contains(&r.auc));
        }
    }
}
