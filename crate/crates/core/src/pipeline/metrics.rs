use crate::error::{Error, Result};

/// Counts indexed by `(truth, prediction)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.num_classes + pred]
    }

    pub fn add(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::LengthMismatch {
                expected: truth.len(),
                actual: pred.len(),
            });
        }
        let k = self.num_classes;
        if let Some(&label) = pred.iter().chain(truth).find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange { label, num_classes: k });
        }
        for (&p, &t) in pred.iter().zip(truth) {
            self.counts[t * k + p] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Overall accuracy in percent; 0 for an empty matrix.
    pub fn overall_accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.num_classes).map(|c| self.get(c, c)).sum();
        100.0 * trace as f64 / total as f64
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class appears in
    /// neither predictions nor ground truth.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.num_classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.num_classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.num_classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes that occur, in percent.
    pub fn mean_iou(&self) -> f64 {
        let present: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if present.is_empty() {
            return 0.0;
        }
        100.0 * present.iter().sum::<f64>() / present.len() as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Metrics {
    /// Percent.
    pub overall_accuracy: f64,
    /// Percent.
    pub mean_iou: f64,
    /// Fractions in `[0, 1]`; `None` for classes that never occur.
    pub class_iou: Vec<Option<f64>>,
    pub confusion: ConfusionMatrix,
}

impl Metrics {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Self {
            overall_accuracy: confusion.overall_accuracy(),
            mean_iou: confusion.mean_iou(),
            class_iou: confusion.class_iou(),
            confusion,
        }
    }
}

pub fn compute_metrics(pred: &[usize], truth: &[usize], num_classes: usize) -> Result<Metrics> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.add(pred, truth)?;
    Ok(Metrics::from_confusion(cm))
}
