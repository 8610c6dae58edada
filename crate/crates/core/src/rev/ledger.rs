//! Semantic byte accounting (element count x scalar width) per memory category.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Category {
    Activations,
    Weights,
    Gradients,
    OptimizerStates,
    Workspace,
}

impl Category {
    pub const ALL: [Category; 5] =
        [Category::Activations, Category::Weights, Category::Gradients, Category::OptimizerStates, Category::Workspace];

    pub fn name(self) -> &'static str {
        match self {
            Category::Activations => "activations",
            Category::Weights => "weights",
            Category::Gradients => "gradients",
            Category::OptimizerStates => "optimizer_states",
            Category::Workspace => "workspace",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MemoryLedger {
    pub activations: u64,
    pub weights: u64,
    pub gradients: u64,
    pub optimizer_states: u64,
    pub workspace: u64,
    /// Largest short-lived buffer set alive on top of the tracked total
    /// (branch traces rebuilt during reversible backward).
    pub transient: u64,
}

impl MemoryLedger {
    pub fn get(&self, c: Category) -> u64 {
        match c {
            Category::Activations => self.activations,
            Category::Weights => self.weights,
            Category::Gradients => self.gradients,
            Category::OptimizerStates => self.optimizer_states,
            Category::Workspace => self.workspace,
        }
    }

    /// Sum over the five tracked categories.
    pub fn total(&self) -> u64 {
        Category::ALL.iter().map(|&c| self.get(c)).sum()
    }

    /// Peak over a training step: everything tracked plus the largest transient set.
    pub fn peak(&self) -> u64 {
        self.total() + self.transient
    }

    pub fn share(&self, c: Category) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.get(c) as f64 / total as f64
        }
    }

    /// `category,bytes,share` rows in fixed order, followed by `total` and `peak`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("category,bytes,share\n");
        for c in Category::ALL {
            let _ = writeln!(out, "{},{},{:.6}", c.name(), self.get(c), self.share(c));
        }
        let total = self.total();
        let _ = writeln!(out, "total,{total},{:.6}", if total == 0 { 0.0 } else { 1.0 });
        let peak_share = if total == 0 { 0.0 } else { self.peak() as f64 / total as f64 };
        let _ = writeln!(out, "peak,{},{peak_share:.6}", self.peak());
        out
    }
}

/// Number of devices needed to reach `total_batch` when each fits `per_gpu_max` samples.
pub fn gpus_required(total_batch: u64, per_gpu_max: u64) -> Result<u64> {
    if per_gpu_max == 0 {
        return Err(Error::Capacity("a device that fits no sample cannot contribute".into()));
    }
    Ok(total_batch.div_ceil(per_gpu_max).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn device_counts() {
        assert_eq!(gpus_required(256, 31).unwrap(), 9);
        assert_eq!(gpus_required(256, 297).unwrap(), 1);
        assert_eq!(gpus_required(64, 64).unwrap(), 1);
        assert!(gpus_required(1, 0).is_err());
    }

    #[test]
    fn csv_is_ordered_and_shares_sum_to_one() {
        let l = MemoryLedger { activations: 6, weights: 2, gradients: 2, optimizer_states: 0, workspace: 0, transient: 1 };
        let csv = l.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "category,bytes,share");
        assert_eq!(lines[1], "activations,6,0.600000");
        assert_eq!(lines[6], "total,10,1.000000");
        assert_eq!(lines[7], "peak,11,1.100000");
        let sum: f64 = Category::ALL.iter().map(|&c| l.share(c)).sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
