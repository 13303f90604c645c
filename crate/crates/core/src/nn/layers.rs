use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{Matrix, ParamSet, Tape, Var};
use crate::error::{Error, Result};

/// Nodes per graph; every graph is complete and directed, without
/// self-loops.
pub const GRAPH_NODES: usize = 4;
/// Incoming edges per node.
pub const GRAPH_FAN_IN: usize = GRAPH_NODES - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }
}

fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut dyn RngCore) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Fan-in uniform initialization of `{prefix}.w` (`input x output`) and
/// `{prefix}.b`.
pub fn init_linear(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    output: usize,
    rng: &mut dyn RngCore,
) {
    let bound = 1.0 / (input.max(1) as f64).sqrt();
    params.insert(format!("{prefix}.w"), uniform(input, output, bound, rng));
    params.insert(format!("{prefix}.b"), uniform(1, output, bound, rng));
}

/// `x · W + b`.
pub fn linear_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    trainable: bool,
) -> Result<Var> {
    let w = tape.load(params, &format!("{prefix}.w"), trainable)?;
    let b = tape.load(params, &format!("{prefix}.b"), trainable)?;
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// LSTM weights: `{prefix}.wx` (`input x 4H`), `{prefix}.wh` (`H x 4H`) and
/// `{prefix}.b`, gate order input, forget, candidate, output. The forget
/// gate bias starts at 1.
pub fn init_lstm(
    params: &mut ParamSet,
    prefix: &str,
    input: usize,
    hidden: usize,
    rng: &mut dyn RngCore,
) {
    let bound = 1.0 / (hidden.max(1) as f64).sqrt();
    params.insert(format!("{prefix}.wx"), uniform(input, 4 * hidden, bound, rng));
    params.insert(format!("{prefix}.wh"), uniform(hidden, 4 * hidden, bound, rng));
    let mut b = Matrix::zeros(1, 4 * hidden);
    for j in hidden..2 * hidden {
        b.set(0, j, 1.0);
    }
    params.insert(format!("{prefix}.b"), b);
}

#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> Self {
        LstmState {
            h: tape.constant(Matrix::zeros(batch, hidden)),
            c: tape.constant(Matrix::zeros(batch, hidden)),
        }
    }
}

pub fn lstm_hidden_size(params: &ParamSet, prefix: &str) -> Result<usize> {
    params
        .get(&format!("{prefix}.wh"))
        .map(Matrix::rows)
        .ok_or_else(|| Error::shape("lstm", format!("missing `{prefix}.wh`")))
}

/// One LSTM cell application.
pub fn lstm_step(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    x: Var,
    state: LstmState,
    trainable: bool,
) -> Result<LstmState> {
    let hidden = lstm_hidden_size(params, prefix)?;
    let wx = tape.load(params, &format!("{prefix}.wx"), trainable)?;
    let wh = tape.load(params, &format!("{prefix}.wh"), trainable)?;
    let b = tape.load(params, &format!("{prefix}.b"), trainable)?;
    let xw = tape.matmul(x, wx)?;
    let hw = tape.matmul(state.h, wh)?;
    let pre = tape.add(xw, hw)?;
    let gates = tape.add_row(pre, b)?;
    let i = tape.slice_cols(gates, 0, hidden)?;
    let f = tape.slice_cols(gates, hidden, hidden)?;
    let g = tape.slice_cols(gates, 2 * hidden, hidden)?;
    let o = tape.slice_cols(gates, 3 * hidden, hidden)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

/// Runs the cell over a sequence; returns per-step hidden outputs and the
/// final state.
pub fn lstm_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    inputs: &[Var],
    initial: LstmState,
    trainable: bool,
) -> Result<(Vec<Var>, LstmState)> {
    let mut state = initial;
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in inputs {
        state = lstm_step(tape, params, prefix, *x, state, trainable)?;
        outputs.push(state.h);
    }
    Ok((outputs, state))
}

/// A batch of complete 4-node graphs. Row `g * 4 + i` of `nodes` holds the
/// features of node `i` in graph `g`.
#[derive(Debug, Clone)]
pub struct Graph {
    pub nodes: Matrix,
}

impl Graph {
    pub fn new(nodes: Matrix) -> Result<Self> {
        if nodes.rows() == 0 || nodes.rows() % GRAPH_NODES != 0 {
            return Err(Error::shape(
                "Graph::new",
                format!("{} node rows is not a multiple of {GRAPH_NODES}", nodes.rows()),
            ));
        }
        Ok(Graph { nodes })
    }

    pub fn batch(&self) -> usize {
        self.nodes.rows() / GRAPH_NODES
    }

    /// Directed edges `(sender, receiver)` of one graph, grouped by receiver.
    pub fn edges() -> [(usize, usize); GRAPH_NODES * GRAPH_FAN_IN] {
        let mut out = [(0, 0); GRAPH_NODES * GRAPH_FAN_IN];
        let mut k = 0;
        for receiver in 0..GRAPH_NODES {
            for sender in 0..GRAPH_NODES {
                if sender != receiver {
                    out[k] = (sender, receiver);
                    k += 1;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphBlockShape {
    pub input: usize,
    pub hidden: usize,
}

/// Edge MLP on `sender ‖ receiver` (`{prefix}.edge`) and node MLP on
/// `node ‖ Σ incoming` (`{prefix}.node`).
pub fn init_graph_block(
    params: &mut ParamSet,
    prefix: &str,
    shape: GraphBlockShape,
    rng: &mut dyn RngCore,
) {
    init_linear(params, &format!("{prefix}.edge"), 2 * shape.input, shape.hidden, rng);
    init_linear(
        params,
        &format!("{prefix}.node"),
        shape.input + shape.hidden,
        shape.hidden,
        rng,
    );
}

/// One round of message passing with shared edge and node functions and
/// sum aggregation at the receiver. `nodes` is `batch·4 x input`; the result
/// is `batch·4 x hidden`.
pub fn graph_block_forward(
    tape: &mut Tape,
    params: &ParamSet,
    prefix: &str,
    nodes: Var,
    activation: Activation,
    trainable: bool,
) -> Result<Var> {
    let (rows, features) = tape.value(nodes).shape();
    if rows % GRAPH_NODES != 0 {
        return Err(Error::shape(
            "graph_block_forward",
            format!("{rows} node rows"),
        ));
    }
    let batch = rows / GRAPH_NODES;
    let edges = Graph::edges();
    let edge_rows = batch * edges.len();
    let mut sender_idx = Vec::with_capacity(edge_rows * features);
    let mut receiver_idx = Vec::with_capacity(edge_rows * features);
    for g in 0..batch {
        for (s, r) in edges {
            let (srow, rrow) = (g * GRAPH_NODES + s, g * GRAPH_NODES + r);
            for f in 0..features {
                sender_idx.push(srow * features + f);
                receiver_idx.push(rrow * features + f);
            }
        }
    }
    let senders = tape.gather(nodes, sender_idx, edge_rows, features)?;
    let receivers = tape.gather(nodes, receiver_idx, edge_rows, features)?;
    let edge_in = tape.concat_cols(&[senders, receivers])?;
    let edge_pre = linear_forward(tape, params, &format!("{prefix}.edge"), edge_in, trainable)?;
    let messages = activation.apply(tape, edge_pre);
    let incoming = tape.group_sum(messages, GRAPH_FAN_IN)?;
    let node_in = tape.concat_cols(&[nodes, incoming])?;
    let node_pre = linear_forward(tape, params, &format!("{prefix}.node"), node_in, trainable)?;
    Ok(activation.apply(tape, node_pre))
}
