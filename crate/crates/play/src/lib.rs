//! Live play server: humans take seats in a Public Investment Game session
//! over HTTP, with bots filling empty or abandoned seats. Finished sessions
//! are appended to a dataset file in the same format as simulated ones.

mod error;
mod server;
mod session;

pub use error::PlayError;
pub use server::{
    router, serve, AppState, ContributeRequest, ContributeResponse, ErrorBody, ServerConfig,
    SessionRequest, SessionResponse, StateQuery, VoteRequest, VoteResponse,
};
pub use session::{
    Event, GameView, LiveSession, MechanismRegistry, Occupant, Phase, RoundResult, SeatTicket,
    SeatView, SessionConfig, SessionView,
};
