//! Isotonic confidence calibration (pool adjacent violators).

use serde::{Deserialize, Serialize};

/// Monotone step function. `pairs` are sorted by threshold with
/// non-decreasing values. An empty model is the identity.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationModel {
    pub pairs: Vec<(f64, f64)>,
}

impl CalibrationModel {
    pub fn identity() -> Self {
        CalibrationModel::default()
    }

    pub fn is_identity(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Value of the step at the largest threshold not above `raw`, clamped
    /// to the first and last steps outside the fitted range.
    pub fn apply(&self, raw: f64) -> f64 {
        if self.pairs.is_empty() {
            return raw.clamp(0.0, 1.0);
        }
        let idx = self.pairs.partition_point(|&(t, _)| t <= raw);
        if idx == 0 {
            self.pairs[0].1
        } else {
            self.pairs[idx - 1].1
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).unwrap()
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let m: CalibrationModel = serde_json::from_str(text)?;
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    sum: f64,
    weight: f64,
    first: usize,
    last: usize,
}

impl Block {
    fn mean(&self) -> f64 {
        self.sum / self.weight
    }
}

/// Fit on `(raw confidence, correct)` pairs. Equal raw scores are pooled
/// before fitting, so the model has one step per distinct raw value.
pub fn fit_calibration(pairs: &[(f64, bool)]) -> CalibrationModel {
    if pairs.len() < 2 {
        return CalibrationModel::identity();
    }
    let mut sorted: Vec<(f64, f64)> = pairs.iter().map(|&(r, c)| (r, if c { 1.0 } else { 0.0 })).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut thresholds: Vec<f64> = Vec::new();
    let mut blocks: Vec<Block> = Vec::new();
    for (raw, y) in sorted {
        if thresholds.last() == Some(&raw) {
            let b = blocks.last_mut().unwrap();
            b.sum += y;
            b.weight += 1.0;
            continue;
        }
        thresholds.push(raw);
        let i = thresholds.len() - 1;
        blocks.push(Block { sum: y, weight: 1.0, first: i, last: i });
    }

    let mut stack: Vec<Block> = Vec::with_capacity(blocks.len());
    for b in blocks {
        let mut cur = b;
        while let Some(prev) = stack.last() {
            if prev.mean() <= cur.mean() {
                break;
            }
            let prev = stack.pop().unwrap();
            cur = Block { sum: prev.sum + cur.sum, weight: prev.weight + cur.weight, first: prev.first, last: cur.last };
        }
        stack.push(cur);
    }

    let mut values = vec![0.0; thresholds.len()];
    for b in &stack {
        for v in &mut values[b.first..=b.last] {
            *v = b.mean();
        }
    }
    CalibrationModel { pairs: thresholds.into_iter().zip(values).collect() }
}
