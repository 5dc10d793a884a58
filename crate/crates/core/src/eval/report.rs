use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{value_err, Error, Result};
use crate::train::{EpochRecord, TrainingHistory, THRESHOLD};

use super::{metrics, ConfusionMatrix};

/// One row of every report table (a final or a `-Best` checkpoint).
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub description: String,
    /// Dropout rates as written in the model table, e.g. `0.3 0.3`; empty for none.
    pub dropout: String,
    pub epoch: usize,
    /// Wall time of the whole run; only set on final rows.
    pub elapsed_minutes: Option<f64>,
    pub record: EpochRecord,
    pub confusion: ConfusionMatrix,
    pub auc: Option<f64>,
}

impl ReportRow {
    /// The `<name>` (final weights) and `<name>-Best` rows of one run.
    #[allow(clippy::too_many_arguments)]
    pub fn final_and_best(
        name: &str,
        description: &str,
        dropout: &[f64],
        history: &TrainingHistory,
        final_cm: ConfusionMatrix,
        final_auc: Option<f64>,
        best_cm: ConfusionMatrix,
        best_auc: Option<f64>,
    ) -> [ReportRow; 2] {
        let dropout = dropout.iter().map(|r| r.to_string()).collect::<Vec<_>>().join(" ");
        [
            ReportRow {
                model: name.to_string(),
                description: description.to_string(),
                dropout: dropout.clone(),
                epoch: history.epochs(),
                elapsed_minutes: Some(history.elapsed_minutes),
                record: *history.last(),
                confusion: final_cm,
                auc: final_auc,
            },
            ReportRow {
                model: format!("{name}-Best"),
                description: description.to_string(),
                dropout,
                epoch: history.best_epoch,
                elapsed_minutes: None,
                record: *history.best(),
                confusion: best_cm,
                auc: best_auc,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportFiles {
    pub table1: PathBuf,
    pub table2: PathBuf,
    pub table3: PathBuf,
    pub table4: PathBuf,
    pub summary: PathBuf,
}

/// Percentage with one decimal, e.g. `93.4%`.
pub fn fmt_pct1(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Whole percentage, e.g. `7%`.
pub fn fmt_pct0(x: f64) -> String {
    format!("{:.0}%", x * 100.0)
}

fn int_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".to_string(), |v| format!("{:.0}", v * 100.0))
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn decision_comment() -> String {
    format!("# positive=polyp threshold>={THRESHOLD}\n")
}

/// Writes `table1.csv` (models), `table2.csv` (accuracy and loss),
/// `table3.csv` (confusion matrices), `table4.csv` (rates) and
/// `summary.txt` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path) -> Result<ReportFiles> {
    if rows.is_empty() {
        return Err(value_err!("report needs at least one run"));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut t1 = String::from("model,description,dropout,epoch,elapsed_min\n");
    let mut t2 = String::from("model,epoch,loss,acc,val_loss,val_acc\n");
    let mut t3 = decision_comment() + "model,tn,fp,fn,tp,accuracy,misclassification\n";
    let mut t4 = decision_comment() + "model,sensitivity,precision,specificity,f1,roc\n";
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "{:<14} {:>6} {:>9} {:>7} {:>9} {:>8}  {:>4} {:>4} {:>4} {:>4}  {:>8} {:>6} {:>5} {:>5} {:>5} {:>5}",
        "model", "epoch", "loss", "acc", "val_loss", "val_acc", "TN", "FP", "FN", "TP", "accuracy", "miscl", "sens", "prec", "spec", "f1"
    );
    for r in rows {
        let m = metrics(&r.confusion)?;
        let cm = r.confusion;
        let rec = r.record;
        let elapsed = r.elapsed_minutes.map(|e| format!("{e:.5}")).unwrap_or_default();
        let _ = writeln!(
            t1,
            "{},{},{},{},{}",
            csv_field(&r.model),
            csv_field(&r.description),
            csv_field(&r.dropout),
            r.epoch,
            elapsed
        );
        let _ = writeln!(
            t2,
            "{},{},{:.4},{:.4},{:.4},{:.4}",
            csv_field(&r.model),
            r.epoch,
            rec.loss,
            rec.acc,
            rec.val_loss,
            rec.val_acc
        );
        let _ = writeln!(
            t3,
            "{},{},{},{},{},{},{}",
            csv_field(&r.model),
            cm.tn,
            cm.fp,
            cm.fn_,
            cm.tp,
            fmt_pct1(m.accuracy),
            fmt_pct0(m.misclassification)
        );
        let _ = writeln!(
            t4,
            "{},{},{},{},{},{}",
            csv_field(&r.model),
            int_pct(m.sensitivity),
            int_pct(m.precision),
            int_pct(m.specificity),
            int_pct(m.f1),
            int_pct(r.auc)
        );
        let _ = writeln!(
            summary,
            "{:<14} {:>6} {:>9.4} {:>7.4} {:>9.4} {:>8.4}  {:>4} {:>4} {:>4} {:>4}  {:>8} {:>6} {:>5} {:>5} {:>5} {:>5}",
            r.model,
            r.epoch,
            rec.loss,
            rec.acc,
            rec.val_loss,
            rec.val_acc,
            cm.tn,
            cm.fp,
            cm.fn_,
            cm.tp,
            fmt_pct1(m.accuracy),
            fmt_pct0(m.misclassification),
            int_pct(m.sensitivity),
            int_pct(m.precision),
            int_pct(m.specificity),
            int_pct(m.f1)
        );
    }
    let write = |name: &str, text: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    };
    Ok(ReportFiles {
        table1: write("table1.csv", &t1)?,
        table2: write("table2.csv", &t2)?,
        table3: write("table3.csv", &t3)?,
        table4: write("table4.csv", &t4)?,
        summary: write("summary.txt", &summary)?,
    })
}
