//! Minimal reverse-mode differentiation and the layers the models need.

mod adam;
mod gradcheck;
mod layers;
mod loss;
mod matrix;
mod params;
mod tape;

pub use adam::{adam_step, Adam};
pub use gradcheck::{grad_check, ArrayCheck, GradCheckReport};
pub use layers::{
    graph_block_forward, init_graph_block, init_linear, init_lstm, linear_forward,
    lstm_forward, lstm_hidden_size, lstm_step, Activation, Graph, GraphBlockShape, LstmState,
    GRAPH_FAN_IN, GRAPH_NODES,
};
pub use loss::{softmax, softmax_cross_entropy};
pub use matrix::Matrix;
pub use params::{ParamSet, CHECKPOINT_VERSION};
pub use tape::{log_sum_exp, sigmoid, Tape, Var};
