//! CONVERGENCE: checkpoint-versus-checkpoint vote shares and the dominance
//! test that ends the outer loop.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{endowment_conditions, NUM_PLAYERS, ROUNDS_PER_STAGE};
use crate::mechanism::GraphMechanism;
use crate::participant::ParticipantModel;
use crate::rng::derive_seed;
use crate::selfplay::{head_to_head, MechanismRef};

pub const DEFAULT_EPSILON: f64 = 0.02;
pub const DEFAULT_REPETITIONS: usize = 100;

/// `values[i][j]`: mean predicted vote share of checkpoint `i` when it
/// faces checkpoint `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaGameMatrix {
    pub checkpoint_ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
    pub repetitions: usize,
}

impl MetaGameMatrix {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean share of row `i` against the checkpoints before it.
    pub fn mean_against_earlier(&self, i: usize) -> Option<f64> {
        (i > 0).then(|| self.values[i][..i].iter().sum::<f64>() / i as f64)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("row\\col");
        for id in &self.checkpoint_ids {
            let _ = write!(out, "\t{id}");
        }
        out.push('\n');
        for (id, row) in self.checkpoint_ids.iter().zip(&self.values) {
            out.push_str(id);
            for x in row {
                let _ = write!(out, "\t{x:.6}");
            }
            out.push('\n');
        }
        out
    }
}

/// Plays every unordered pair of checkpoints `repetitions` times under the
/// participant model, cycling endowment conditions. Each cell is the mean
/// over games and participants of the predicted probability of voting for
/// the row checkpoint's episode. Both cells of a pair come from the same
/// games, so `M + Mᵀ = 1` up to rounding.
pub fn build_payoff_matrix(
    checkpoints: &[GraphMechanism],
    participants: &ParticipantModel,
    repetitions: usize,
    seed: u64,
) -> Result<MetaGameMatrix> {
    if checkpoints.is_empty() || repetitions == 0 {
        return Err(Error::Validation(
            "meta-game needs checkpoints and repetitions".into(),
        ));
    }
    let conditions = endowment_conditions();
    let endowments: Vec<[u32; NUM_PLAYERS]> = (0..repetitions)
        .map(|k| conditions[k % conditions.len()])
        .collect();
    let n = checkpoints.len();
    let mut values = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let a = &checkpoints[i];
            let b = &checkpoints[j];
            let games = head_to_head(
                MechanismRef {
                    params: a.params(),
                    config: a.config(),
                },
                MechanismRef {
                    params: b.params(),
                    config: b.config(),
                },
                participants,
                &endowments,
                ROUNDS_PER_STAGE,
                derive_seed(seed, &["metagame"], &[i as u64, j as u64]),
            )?;
            let (sa, sb) = games
                .iter()
                .fold((0.0, 0.0), |(x, y), (pa, pb)| (x + pa, y + pb));
            values[i][j] = sa / repetitions as f64;
            if i != j {
                values[j][i] = sb / repetitions as f64;
            }
        }
    }
    Ok(MetaGameMatrix {
        checkpoint_ids: checkpoints.iter().map(|c| crate::game::Mechanism::id(c).to_string()).collect(),
        values,
        repetitions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "decision", rename_all = "kebab-case")]
pub enum ConvergenceDecision {
    Continue { min_advantage: Option<f64> },
    /// The latest checkpoint no longer beats every earlier one.
    DominanceBroken { min_advantage: f64 },
    /// The latest checkpoint beats every earlier one by less than ε.
    NegligibleAdvantage { min_advantage: f64 },
}

impl ConvergenceDecision {
    pub fn converged(&self) -> bool {
        !matches!(self, ConvergenceDecision::Continue { .. })
    }
}

/// Reads the last row: converged when some earlier checkpoint holds the
/// latest to half the votes or less, or when the smallest advantage over an
/// earlier checkpoint is below `epsilon`.
pub fn check_convergence(matrix: &MetaGameMatrix, epsilon: f64) -> ConvergenceDecision {
    let n = matrix.len();
    if n < 2 {
        return ConvergenceDecision::Continue {
            min_advantage: None,
        };
    }
    let last = &matrix.values[n - 1];
    let min_advantage = last[..n - 1]
        .iter()
        .map(|x| x - 0.5)
        .fold(f64::INFINITY, f64::min);
    if min_advantage <= 0.0 {
        ConvergenceDecision::DominanceBroken { min_advantage }
    } else if min_advantage < epsilon {
        ConvergenceDecision::NegligibleAdvantage { min_advantage }
    } else {
        ConvergenceDecision::Continue {
            min_advantage: Some(min_advantage),
        }
    }
}
