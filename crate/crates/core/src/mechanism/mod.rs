//! The trainable redistribution mechanism: a graph network over the four
//! participants that maps the current round to simplex weights.

mod heatmap;

pub use heatmap::{export_policy_heatmap, PolicyHeatmap};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{fractional_contribution, Mechanism, RedistributionWeights, NUM_PLAYERS};
use crate::nn::{
    graph_block_forward, init_graph_block, init_linear, linear_forward, Activation,
    GraphBlockShape, Matrix, ParamSet, Tape, Var,
};

const PREFIX: &str = "mech";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismConfig {
    pub hidden: usize,
    pub message_passing_rounds: usize,
    pub activation: Activation,
    /// Adds `c/e` to the `(e/10, c/10)` node features.
    pub include_fraction: bool,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            hidden: 32,
            message_passing_rounds: 1,
            activation: Activation::Relu,
            include_fraction: true,
        }
    }
}

impl MechanismConfig {
    pub fn node_features(&self) -> usize {
        if self.include_fraction {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.message_passing_rounds == 0 {
            return Err(Error::Config(
                "mechanism hidden size and message passing rounds must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Random parameters (fan-in uniform).
    pub fn init(&self, rng: &mut dyn RngCore) -> ParamSet {
        let mut params = ParamSet::new();
        let mut input = self.node_features();
        for k in 0..self.message_passing_rounds {
            init_graph_block(
                &mut params,
                &format!("{PREFIX}.gn{k}"),
                GraphBlockShape {
                    input,
                    hidden: self.hidden,
                },
                rng,
            );
            input = self.hidden;
        }
        init_linear(&mut params, &format!("{PREFIX}.head"), self.hidden, 1, rng);
        params
    }

    /// Checks that `params` has the names and shapes this configuration
    /// produces.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let mut rng = <crate::rng::StreamRng as rand::SeedableRng>::seed_from_u64(0);
        let reference = self.init(&mut rng);
        for (name, m) in reference.iter() {
            match params.get(name) {
                Some(p) if p.shape() == m.shape() => {}
                _ => {
                    return Err(Error::Config(format!(
                        "mechanism parameters lack `{name}` with shape {:?}",
                        m.shape()
                    )))
                }
            }
        }
        if params.len() != reference.len() {
            return Err(Error::Config("unexpected mechanism parameters".into()));
        }
        Ok(())
    }
}

/// Node features `(e/10, c/10[, c/e])` for a batch of rounds, one row per
/// participant.
pub fn node_features(
    config: &MechanismConfig,
    endowments: &[[u32; NUM_PLAYERS]],
    contributions: &[[u32; NUM_PLAYERS]],
) -> Matrix {
    let f = config.node_features();
    let mut m = Matrix::zeros(endowments.len() * NUM_PLAYERS, f);
    for (g, (e, c)) in endowments.iter().zip(contributions).enumerate() {
        for i in 0..NUM_PLAYERS {
            let row = m.row_mut(g * NUM_PLAYERS + i);
            row[0] = e[i] as f64 / 10.0;
            row[1] = c[i] as f64 / 10.0;
            if config.include_fraction {
                row[2] = fractional_contribution(e[i], c[i]);
            }
        }
    }
    m
}

/// Redistribution weights for a batch of rounds as a `batch x 4` node.
pub fn weights_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    config: &MechanismConfig,
    endowments: &[[u32; NUM_PLAYERS]],
    contributions: &[[u32; NUM_PLAYERS]],
    trainable: bool,
) -> Result<Var> {
    if endowments.len() != contributions.len() || endowments.is_empty() {
        return Err(Error::shape(
            "weights_on_tape",
            format!("{} endowment rows, {} contribution rows", endowments.len(), contributions.len()),
        ));
    }
    let batch = endowments.len();
    let mut h = tape.constant(node_features(config, endowments, contributions));
    for k in 0..config.message_passing_rounds {
        h = graph_block_forward(
            tape,
            params,
            &format!("{PREFIX}.gn{k}"),
            h,
            config.activation,
            trainable,
        )?;
    }
    let logits = linear_forward(tape, params, &format!("{PREFIX}.head"), h, trainable)?;
    let logits = tape.reshape(logits, batch, NUM_PLAYERS)?;
    Ok(tape.softmax_rows(logits))
}

/// A graph-network mechanism with fixed parameters.
#[derive(Debug, Clone)]
pub struct GraphMechanism {
    id: String,
    params: ParamSet,
    config: MechanismConfig,
}

impl GraphMechanism {
    pub fn new(id: impl Into<String>, params: ParamSet, config: MechanismConfig) -> Result<Self> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(GraphMechanism {
            id: id.into(),
            params,
            config,
        })
    }

    pub fn random(id: impl Into<String>, config: MechanismConfig, rng: &mut dyn RngCore) -> Self {
        let params = config.init(rng);
        GraphMechanism {
            id: id.into(),
            params,
            config,
        }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn config(&self) -> &MechanismConfig {
        &self.config
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Weights for many rounds at once.
    pub fn weights_batch(
        &self,
        endowments: &[[u32; NUM_PLAYERS]],
        contributions: &[[u32; NUM_PLAYERS]],
    ) -> Result<Vec<RedistributionWeights>> {
        let mut tape = Tape::new();
        let w = weights_on_tape(&mut tape, &self.params, &self.config, endowments, contributions, false)?;
        let m = tape.value(w);
        Ok((0..m.rows())
            .map(|r| RedistributionWeights(m.row(r).try_into().expect("4 columns")))
            .collect())
    }
}

/// Weights of a graph mechanism for one round.
pub fn redistribution_weights(
    params: &ParamSet,
    config: &MechanismConfig,
    endowments: &[u32; NUM_PLAYERS],
    contributions: &[u32; NUM_PLAYERS],
) -> Result<RedistributionWeights> {
    let mut tape = Tape::new();
    let w = weights_on_tape(&mut tape, params, config, &[*endowments], &[*contributions], false)?;
    Ok(RedistributionWeights(
        tape.value(w).row(0).try_into().expect("4 columns"),
    ))
}

impl Mechanism for GraphMechanism {
    fn id(&self) -> &str {
        &self.id
    }

    fn weights(
        &self,
        endowments: &[u32; NUM_PLAYERS],
        contributions: &[u32; NUM_PLAYERS],
    ) -> RedistributionWeights {
        redistribution_weights(&self.params, &self.config, endowments, contributions)
            .expect("parameters validated at construction")
    }
}
