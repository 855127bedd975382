use serde::{Deserialize, Serialize};

/// Counts indexed `[truth][prediction]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
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

    pub fn add(&mut self, truth: usize, prediction: usize) {
        self.counts[truth * self.classes + prediction] += 1;
    }

    pub fn extend(&mut self, truth: &[usize], predictions: &[usize]) {
        for (&t, &p) in truth.iter().zip(predictions) {
            self.add(t, p);
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn get(&self, truth: usize, prediction: usize) -> u64 {
        self.counts[truth * self.classes + prediction]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn metrics(&self) -> Metrics {
        let c = self.classes;
        let total = self.total();
        let correct: u64 = (0..c).map(|i| self.get(i, i)).sum();
        let mut recalls = Vec::new();
        let mut iou = Vec::with_capacity(c);
        for k in 0..c {
            let tp = self.get(k, k);
            let truth: u64 = (0..c).map(|p| self.get(k, p)).sum();
            let predicted: u64 = (0..c).map(|t| self.get(t, k)).sum();
            if truth == 0 {
                iou.push(None);
                continue;
            }
            recalls.push(tp as f64 / truth as f64);
            iou.push(Some(tp as f64 / (truth + predicted - tp) as f64));
        }
        let present: Vec<f64> = iou.iter().flatten().copied().collect();
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        Metrics {
            overall_accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            average_accuracy: mean(&recalls),
            mean_iou: mean(&present),
            iou,
        }
    }
}

/// Classes absent from the ground truth have no IoU and are left out of
/// the class averages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub iou: Vec<Option<f64>>,
    pub mean_iou: f64,
}
