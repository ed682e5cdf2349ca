use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub label: &'static str,
    pub forget_accuracy: f64,
    pub personal_accuracy: f64,
}

/// Forget-class and personalized-subset accuracy of the baseline, masked and
/// adjusted models.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub forget_class: usize,
    pub rows: Vec<ReportRow>,
}

pub const ROW_LABELS: [&str; 3] = ["Baseline", "After Mask", "After Adjustment"];

impl Report {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    pub fn to_text(&self) -> String {
        let forget = format!("Forget class {} acc (%)", self.forget_class);
        let personal = "Personalized acc (%)";
        let w0 = self.rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
        let mut out = String::new();
        writeln!(out, "{:<w0$}  {forget}  {personal}", "Model").unwrap();
        writeln!(out, "{}  {}  {}", "-".repeat(w0), "-".repeat(forget.len()), "-".repeat(personal.len())).unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<w0$}  {:>w1$.2}  {:>w2$.2}",
                r.label,
                100.0 * r.forget_accuracy,
                100.0 * r.personal_accuracy,
                w1 = forget.len(),
                w2 = personal.len()
            )
            .unwrap();
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,forget_class,forget_accuracy,personalized_accuracy\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6},{:.6}", r.label, self.forget_class, r.forget_accuracy, r.personal_accuracy).unwrap();
        }
        out
    }

    pub fn write(&self, txt: &Path, csv: &Path) -> Result<()> {
        fs::write(txt, self.to_text()).map_err(|e| Error::io(txt, e))?;
        fs::write(csv, self.to_csv()).map_err(|e| Error::io(csv, e))
    }
}
