use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlayError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown mechanism `{0}`")]
    UnknownMechanism(String),
    #[error("tail endowment {0} is not one of 2, 4, 6, 8, 10")]
    InvalidCondition(u32),
    #[error("all seats are taken")]
    SessionFull,
    #[error("no seat {0}")]
    BadSeat(usize),
    #[error("seat token does not match")]
    BadToken,
    #[error("seat {0} was taken over after a missed deadline")]
    SeatTakenOver(usize),
    #[error("request not allowed outside the {0} phase")]
    WrongPhase(&'static str),
    #[error("{coins} coins exceed the endowment of {endowment}")]
    OutOfRange { coins: u32, endowment: u32 },
    #[error("already submitted")]
    Duplicate,
    #[error("choice must be game 1 or game 2, got {0}")]
    BadChoice(u8),
    #[error("could not persist session: {0}")]
    Persist(String),
}
