//! Self-contained SVG plots with a fixed coordinate layout.
//!
//! Every plot area is a `PLOT_LAYOUT.size` square whose top-left corner is
//! at `(left, top)`; a value `(u, v)` normalised to `[0, 1]` maps to
//! `(left + u * size, top + (1 - v) * size)`. Coordinates are printed with
//! three decimals. Series carry `data-series` attributes and confusion
//! cells carry `data-cell`, so tests can read geometry back.
//!
//! * `performance.svg`: accuracy panel (`acc`, `val_acc`) at `left`, loss
//!   panel (`loss`, `val_loss`) at `left + panel_stride`. Epoch `e` of `E`
//!   maps to `u = (e - 1) / (E - 1)` (`u = 0.5` when `E = 1`); accuracy uses
//!   `v = acc`, loss uses `v = loss / max_loss`.
//! * `confusion.svg`: rows are actual (normal, polyp), columns predicted.
//! * `roc.svg`: `roc` polyline over `(fpr, tpr)`, `diagonal` reference,
//!   legend text `AUC = x.xxx`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::train::TrainingHistory;

use super::{ConfusionMatrix, RocCurve};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub left: f64,
    pub top: f64,
    pub size: f64,
    pub panel_stride: f64,
}

pub const PLOT_LAYOUT: Layout = Layout {
    left: 60.0,
    top: 40.0,
    size: 300.0,
    panel_stride: 400.0,
};

impl Layout {
    pub fn map(&self, panel: usize, u: f64, v: f64) -> (f64, f64) {
        (
            self.left + panel as f64 * self.panel_stride + u * self.size,
            self.top + (1.0 - v) * self.size,
        )
    }
}

fn open(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"12\">\n<title>{title}</title>\n<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

fn frame(s: &mut String, panel: usize, title: &str, x_label: &str, y_label: &str) {
    let l = PLOT_LAYOUT;
    let (x0, y0) = l.map(panel, 0.0, 1.0);
    let _ = writeln!(
        s,
        "<rect x=\"{x0}\" y=\"{y0}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        l.size, l.size
    );
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{title}</text>", x0 + l.size / 2.0, y0 - 12.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>", x0 + l.size / 2.0, y0 + l.size + 30.0);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">{y_label}</text>",
        x0 - 35.0,
        y0 + l.size / 2.0,
        x0 - 35.0,
        y0 + l.size / 2.0
    );
}

fn polyline(s: &mut String, series: &str, color: &str, dashed: bool, points: &[(f64, f64)]) {
    let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.3},{y:.3}")).collect();
    let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
    let _ = writeln!(
        s,
        "<polyline data-series=\"{series}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
        pts.join(" ")
    );
}

fn legend(s: &mut String, panel: usize, entries: &[(&str, &str)]) {
    let (x, y) = PLOT_LAYOUT.map(panel, 0.6, 0.35);
    for (i, (label, color)) in entries.iter().enumerate() {
        let yy = y + 18.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{x}\" y1=\"{yy}\" x2=\"{}\" y2=\"{yy}\" stroke=\"{color}\" stroke-width=\"2\"/><text x=\"{}\" y=\"{}\">{label}</text>",
            x + 20.0,
            x + 26.0,
            yy + 4.0
        );
    }
}

/// Accuracy and loss curves over epochs, train and validation.
pub fn performance_svg(history: &TrainingHistory) -> String {
    let rows = &history.rows;
    let n = rows.len();
    let u = |i: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let max_loss = rows
        .iter()
        .flat_map(|r| [r.loss, r.val_loss])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let mut s = open(800.0, 400.0, "Performance");
    frame(&mut s, 0, "Accuracy", "epoch", "accuracy");
    frame(&mut s, 1, "Loss", "epoch", &format!("loss (max {max_loss:.4})"));
    let series = |panel: usize, f: &dyn Fn(usize) -> f64| -> Vec<(f64, f64)> {
        (0..n).map(|i| PLOT_LAYOUT.map(panel, u(i), f(i))).collect()
    };
    polyline(&mut s, "acc", "#1f77b4", false, &series(0, &|i| rows[i].acc));
    polyline(&mut s, "val_acc", "#ff7f0e", true, &series(0, &|i| rows[i].val_acc));
    polyline(&mut s, "loss", "#1f77b4", false, &series(1, &|i| rows[i].loss / max_loss));
    polyline(&mut s, "val_loss", "#ff7f0e", true, &series(1, &|i| rows[i].val_loss / max_loss));
    legend(&mut s, 0, &[("train", "#1f77b4"), ("validation", "#ff7f0e")]);
    legend(&mut s, 1, &[("train", "#1f77b4"), ("validation", "#ff7f0e")]);
    s.push_str("</svg>\n");
    s
}

/// 2x2 grid: rows actual (normal, polyp), columns predicted (normal, polyp).
pub fn confusion_svg(cm: &ConfusionMatrix) -> String {
    let l = PLOT_LAYOUT;
    let cells = [("tn", cm.tn, 0, 0), ("fp", cm.fp, 0, 1), ("fn", cm.fn_, 1, 0), ("tp", cm.tp, 1, 1)];
    let max = cells.iter().map(|c| c.1).max().unwrap_or(0).max(1) as f64;
    let half = l.size / 2.0;
    let mut s = open(420.0, 400.0, "Confusion matrix");
    for (name, count, row, col) in cells {
        let x = l.left + col as f64 * half;
        let y = l.top + row as f64 * half;
        let shade = 255.0 - 180.0 * count as f64 / max;
        let _ = writeln!(
            s,
            "<g data-cell=\"{name}\"><rect x=\"{x}\" y=\"{y}\" width=\"{half}\" height=\"{half}\" fill=\"rgb({shade:.0},{shade:.0},255)\" stroke=\"black\"/><text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"20\">{count}</text></g>",
            x + half / 2.0,
            y + half / 2.0 + 7.0
        );
    }
    for (i, label) in ["normal", "polyp"].iter().enumerate() {
        let c = l.left + half * (i as f64 + 0.5);
        let r = l.top + half * (i as f64 + 0.5);
        let _ = writeln!(s, "<text x=\"{c}\" y=\"{}\" text-anchor=\"middle\">{label}</text>", l.top - 8.0);
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{r}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {r})\">{label}</text>",
            l.left - 12.0,
            l.left - 12.0
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted</text>", l.left + half, l.top - 24.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">actual</text>", l.left - 30.0, l.top + l.size + 20.0);
    s.push_str("</svg>\n");
    s
}

/// ROC polyline with the chance diagonal and the AUC in the legend.
pub fn roc_svg(curve: &RocCurve) -> String {
    let mut s = open(420.0, 400.0, "ROC curve");
    frame(&mut s, 0, "ROC", "false positive rate", "true positive rate");
    polyline(&mut s, "diagonal", "#999999", true, &[PLOT_LAYOUT.map(0, 0.0, 0.0), PLOT_LAYOUT.map(0, 1.0, 1.0)]);
    let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| PLOT_LAYOUT.map(0, p.fpr, p.tpr)).collect();
    polyline(&mut s, "roc", "#d62728", false, &pts);
    legend(&mut s, 0, &[(&format!("AUC = {:.3}", curve.auc), "#d62728"), ("chance", "#999999")]);
    s.push_str("</svg>\n");
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlotFiles {
    pub performance: PathBuf,
    pub confusion: PathBuf,
    pub roc: PathBuf,
}

/// Writes `performance.svg`, `confusion.svg` and `roc.svg` into `dir`.
pub fn emit_plots(history: &TrainingHistory, cm: &ConfusionMatrix, roc: &RocCurve, dir: &Path) -> Result<PlotFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let write = |name: &str, text: String| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    Ok(PlotFiles {
        performance: write("performance.svg", performance_svg(history))?,
        confusion: write("confusion.svg", confusion_svg(cm))?,
        roc: write("roc.svg", roc_svg(roc))?,
    })
}
