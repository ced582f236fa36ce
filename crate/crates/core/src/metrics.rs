//! Segmentation metrics over a confusion matrix.
//!
//! Rows index ground truth and columns index prediction. Classes with no
//! ground-truth points are left out of the mean class accuracy, and classes
//! that are neither present nor predicted are left out of the mean IoU. Both
//! summaries report how many classes were excluded.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

/// A mean over a subset of classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassMean {
    pub value: f64,
    pub excluded: usize,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|p| self.get(c, p)).sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, c)).sum()
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!(
                "{} counts for a {classes}x{classes} matrix",
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    /// Adds one count per point. Points whose truth is `None` (unlabeled)
    /// are skipped. The matrix is left untouched on error.
    pub fn accumulate(&mut self, truth: &[Option<usize>], pred: &[usize]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::InvalidInput(format!(
                "{} truth labels but {} predictions",
                truth.len(),
                pred.len()
            )));
        }
        for (i, (t, p)) in truth.iter().zip(pred).enumerate() {
            let bad = |id: usize, what: &str| {
                Error::InvalidInput(format!(
                    "point {i}: {what} class {id} outside 0..{}",
                    self.classes
                ))
            };
            if let Some(t) = t {
                if *t >= self.classes {
                    return Err(bad(*t, "truth"));
                }
            }
            if *p >= self.classes {
                return Err(bad(*p, "predicted"));
            }
        }
        for (t, p) in truth.iter().zip(pred) {
            if let Some(t) = t {
                self.counts[t * self.classes + p] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum; merge order does not affect the result.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "cannot merge {} classes into {}",
                other.classes, self.classes
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn require_points(&self) -> Result<u64> {
        match self.total() {
            0 => Err(Error::UndefinedMetric("confusion matrix is empty".into())),
            n => Ok(n),
        }
    }

    pub fn overall_accuracy(&self) -> Result<f64> {
        let total = self.require_points()?;
        Ok(self.trace() as f64 / total as f64)
    }

    /// Per-class recall; `None` for classes absent from ground truth.
    pub fn class_accuracies(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| match self.row_sum(c) {
                0 => None,
                r => Some(self.get(c, c) as f64 / r as f64),
            })
            .collect()
    }

    /// Per-class IoU; `None` when the class is neither present nor predicted.
    pub fn class_ious(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                match self.row_sum(c) + self.col_sum(c) - tp {
                    0 => None,
                    d => Some(tp as f64 / d as f64),
                }
            })
            .collect()
    }

    pub fn mean_class_accuracy(&self) -> Result<ClassMean> {
        self.require_points()?;
        mean_of(
            &self.class_accuracies(),
            "no class is present in ground truth",
        )
    }

    pub fn mean_iou(&self) -> Result<ClassMean> {
        self.require_points()?;
        mean_of(&self.class_ious(), "every IoU denominator is zero")
    }

    /// Per-class rows followed by summary rows.
    pub fn report_csv(&self, class_names: &[&str]) -> Result<String> {
        let oa = self.overall_accuracy()?;
        let macc = self.mean_class_accuracy()?;
        let miou = self.mean_iou()?;
        let mut out = String::from("class,name,support,accuracy,iou\n");
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for (c, (acc, iou)) in self
            .class_accuracies()
            .into_iter()
            .zip(self.class_ious())
            .enumerate()
        {
            let name = class_names.get(c).copied().unwrap_or("");
            let _ = writeln!(
                out,
                "{c},{name},{},{},{}",
                self.row_sum(c),
                fmt(acc),
                fmt(iou)
            );
        }
        let _ = writeln!(out, "summary,overall_accuracy,{},{oa:.6},", self.total());
        let _ = writeln!(
            out,
            "summary,mean_class_accuracy,{},{:.6},",
            macc.excluded, macc.value
        );
        let _ = writeln!(out, "summary,mean_iou,{},,{:.6}", miou.excluded, miou.value);
        Ok(out)
    }

    /// The raw counts as a C x C table, truth by row.
    pub fn matrix_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.classes {
            let row: Vec<String> = (0..self.classes)
                .map(|p| self.get(t, p).to_string())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn write_csvs(&self, report: &Path, matrix: &Path, class_names: &[&str]) -> Result<()> {
        std::fs::write(report, self.report_csv(class_names)?).map_err(|e| Error::io(report, e))?;
        std::fs::write(matrix, self.matrix_csv()).map_err(|e| Error::io(matrix, e))
    }
}

fn mean_of(values: &[Option<f64>], empty: &str) -> Result<ClassMean> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::UndefinedMetric(empty.into()));
    }
    Ok(ClassMean {
        value: present.iter().sum::<f64>() / present.len() as f64,
        excluded: values.len() - present.len(),
    })
}
