use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::game::{endowment_condition, Mechanism, HEAD_ENDOWMENT};

/// Head participant's share of the fund over a grid of head contribution
/// (rows, 0..=10) and common tail contribution (columns, 0..=tail).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyHeatmap {
    pub mechanism_id: String,
    pub tail_endowment: u32,
    /// `cells[head][tail]`.
    pub cells: Vec<Vec<f64>>,
}

impl PolicyHeatmap {
    pub fn head_share(&self, head_contribution: u32, tail_contribution: u32) -> f64 {
        self.cells[head_contribution as usize][tail_contribution as usize]
    }

    /// Fraction of cells whose head share is below `threshold`.
    pub fn low_share_fraction(&self, threshold: f64) -> f64 {
        let total: usize = self.cells.iter().map(Vec::len).sum();
        let low = self
            .cells
            .iter()
            .flatten()
            .filter(|x| **x < threshold)
            .count();
        low as f64 / total.max(1) as f64
    }

    /// Tab-separated grid; the first column is the head contribution, the
    /// header lists tail contributions.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("head\\tail");
        for t in 0..=self.tail_endowment {
            let _ = write!(out, "\t{t}");
        }
        out.push('\n');
        for (h, row) in self.cells.iter().enumerate() {
            let _ = write!(out, "{h}");
            for x in row {
                let _ = write!(out, "\t{x:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates `mechanism` with the head at seat 0 and all three tails
/// contributing the same amount.
pub fn export_policy_heatmap(mechanism: &dyn Mechanism, tail_endowment: u32) -> PolicyHeatmap {
    let endowments = endowment_condition(tail_endowment);
    let cells = (0..=HEAD_ENDOWMENT)
        .map(|head| {
            (0..=tail_endowment)
                .map(|tail| {
                    mechanism
                        .weights(&endowments, &[head, tail, tail, tail])
                        .0[0]
                })
                .collect()
        })
        .collect();
    PolicyHeatmap {
        mechanism_id: mechanism.id().to_string(),
        tail_endowment,
        cells,
    }
}
