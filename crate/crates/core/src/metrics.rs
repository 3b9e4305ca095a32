//! Confusion matrix and segmentation scores.

use std::fmt::Write as _;

use crate::{Error, Result};

/// Rows are ground truth, columns are predictions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub oa: f64,
    pub macc: f64,
    pub miou: f64,
    /// `None` for classes absent from both truth and prediction.
    pub class_acc: Vec<Option<f64>>,
    pub iou: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self { classes, counts: vec![0; classes * classes] }
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

    pub fn accumulate(&mut self, labels: &[u32], predictions: &[u32]) -> Result<()> {
        if labels.len() != predictions.len() {
            return Err(Error::Validation(format!("{} labels against {} predictions", labels.len(), predictions.len())));
        }
        if let Some(&bad) = labels.iter().chain(predictions).find(|&&v| v as usize >= self.classes) {
            return Err(Error::Validation(format!("class id {bad} outside [0, {})", self.classes)));
        }
        for (&t, &p) in labels.iter().zip(predictions) {
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Validation(format!("cannot merge {} classes into {}", other.classes, self.classes)));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scores(&self) -> Result<Scores> {
        let total = self.total();
        if total == 0 {
            return Err(Error::UndefinedMetric);
        }
        let q = self.classes;
        let mut trace = 0;
        let mut class_acc = Vec::with_capacity(q);
        let mut iou = Vec::with_capacity(q);
        for c in 0..q {
            let tp = self.get(c, c);
            let row: u64 = (0..q).map(|p| self.get(c, p)).sum();
            let col: u64 = (0..q).map(|t| self.get(t, c)).sum();
            trace += tp;
            if row == 0 && col == 0 {
                class_acc.push(None);
                iou.push(None);
                continue;
            }
            // a class that is only ever predicted scores zero accuracy
            class_acc.push(Some(if row == 0 { 0.0 } else { tp as f64 / row as f64 }));
            iou.push(Some(tp as f64 / (row + col - tp) as f64));
        }
        let mean = |v: &[Option<f64>]| {
            let present: Vec<f64> = v.iter().flatten().copied().collect();
            present.iter().sum::<f64>() / present.len() as f64
        };
        Ok(Scores { oa: trace as f64 / total as f64, macc: mean(&class_acc), miou: mean(&iou), class_acc, iou })
    }
}

impl Scores {
    /// Human-readable lines followed by `key=value` lines.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "OA    {:.4}", self.oa);
        let _ = writeln!(s, "mAcc  {:.4}", self.macc);
        let _ = writeln!(s, "mIoU  {:.4}", self.miou);
        for (c, v) in self.iou.iter().enumerate() {
            match v {
                Some(v) => {
                    let _ = writeln!(s, "IoU[{c}] {v:.4}");
                }
                None => {
                    let _ = writeln!(s, "IoU[{c}] absent");
                }
            }
        }
        let _ = writeln!(s, "oa={}", self.oa);
        let _ = writeln!(s, "macc={}", self.macc);
        let _ = writeln!(s, "miou={}", self.miou);
        for (c, v) in self.iou.iter().enumerate() {
            if let Some(v) = v {
                let _ = writeln!(s, "iou.{c}={v}");
            }
        }
        s
    }
}
