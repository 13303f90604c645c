//! One live group as a pure state machine. The server feeds it requests and
//! timer expiries in arrival order and broadcasts the events it returns.

use std::collections::BTreeMap;
use std::sync::Arc;

use hcmd_core::cohort::{act_contribution, cast_vote, ArchetypeSpec};
use hcmd_core::game::{
    compute_round, endowment_condition, majority_vote, EpisodeRecord, LiberalEgalitarian, Mechanism,
    RoundRecord, RoundState, SessionRecord, StrictEgalitarian, Winner, NUM_PLAYERS,
    ROUNDS_PER_STAGE, TAIL_ENDOWMENTS,
};
use hcmd_core::rng::StreamRng;
use rand::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::PlayError;

/// Mechanisms a session may be created with, by id.
#[derive(Clone, Default)]
pub struct MechanismRegistry {
    map: BTreeMap<String, Arc<dyn Mechanism>>,
}

impl MechanismRegistry {
    pub fn with_baselines() -> Self {
        let mut r = MechanismRegistry::default();
        r.insert(Arc::new(StrictEgalitarian));
        r.insert(Arc::new(LiberalEgalitarian));
        r
    }

    pub fn insert(&mut self, mechanism: Arc<dyn Mechanism>) {
        self.map.insert(mechanism.id().to_string(), mechanism);
    }

    pub fn get(&self, id: &str) -> Result<Arc<dyn Mechanism>, PlayError> {
        self.map
            .get(id)
            .cloned()
            .ok_or_else(|| PlayError::UnknownMechanism(id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub tail_endowment: u32,
    pub mechanism_a: String,
    pub mechanism_b: String,
    /// Whether mechanism B plays the first game.
    #[serde(default)]
    pub b_first: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    /// Waiting for contributions in `round` of `game` (1..=3).
    Playing { game: u8, round: u32 },
    Voting,
    Done,
    Abandoned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Occupant {
    Empty,
    Human,
    /// Filled by the server at lobby timeout, or a human seat taken over
    /// after a missed deadline.
    Bot,
}

/// What the server broadcasts. Mechanism identities never appear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    SeatJoined { seat: usize },
    BotsFilled { seats: Vec<usize> },
    StageStarted { game: u8, endowments: [u32; NUM_PLAYERS] },
    RoundStarted { game: u8, round: u32 },
    ContributionReceived { game: u8, round: u32, seat: usize },
    SeatTimedOut { seat: usize },
    RoundResult { game: u8, result: RoundResult },
    VotePrompt { games: [u8; 2] },
    VoteReceived { seat: usize },
    SessionDone,
    Abandoned { reason: String },
}

/// One round as participants see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundResult {
    pub round: u32,
    pub endowments: [u32; NUM_PLAYERS],
    pub contributions: [u32; NUM_PLAYERS],
    pub fund: f64,
    pub payouts: [f64; NUM_PLAYERS],
    pub kept: [f64; NUM_PLAYERS],
}

impl From<&RoundRecord> for RoundResult {
    fn from(r: &RoundRecord) -> Self {
        RoundResult {
            round: r.state.round_index,
            endowments: r.state.endowments,
            contributions: r.state.contributions,
            fund: r.outcome.fund,
            payouts: r.outcome.payouts,
            kept: r.outcome.kept,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatView {
    pub occupant: Occupant,
    pub submitted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameView {
    pub game: u8,
    pub rounds: Vec<RoundResult>,
    pub totals: [f64; NUM_PLAYERS],
}

/// Everything a client needs to redraw its screen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    #[serde(flatten)]
    pub phase: Phase,
    pub endowments: [u32; NUM_PLAYERS],
    pub seats: Vec<SeatView>,
    pub your_seat: Option<usize>,
    pub your_vote: Option<u8>,
    pub votes_received: usize,
    pub games: Vec<GameView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatTicket {
    pub session_id: String,
    pub seat: usize,
    pub token: String,
    pub endowment: u32,
}

pub struct LiveSession {
    id: String,
    endowments: [u32; NUM_PLAYERS],
    mechanism_a: Arc<dyn Mechanism>,
    mechanism_b: Arc<dyn Mechanism>,
    b_first: bool,
    bot: ArchetypeSpec,
    rng: StreamRng,
    occupants: [Occupant; NUM_PLAYERS],
    tokens: [Option<String>; NUM_PLAYERS],
    phase: Phase,
    /// Finished rounds per game, game 1 first.
    games: Vec<Vec<RoundRecord>>,
    pending: [Option<u32>; NUM_PLAYERS],
    /// Ballots as the game number chosen.
    ballots: [Option<u8>; NUM_PLAYERS],
    winner: Option<(Winner, bool)>,
    epoch: u64,
    record: Option<SessionRecord>,
}

impl LiveSession {
    pub fn new(
        id: impl Into<String>,
        config: &SessionConfig,
        registry: &MechanismRegistry,
        bot: ArchetypeSpec,
        seed: u64,
    ) -> Result<Self, PlayError> {
        if !TAIL_ENDOWMENTS.contains(&config.tail_endowment) {
            return Err(PlayError::InvalidCondition(config.tail_endowment));
        }
        Ok(LiveSession {
            id: id.into(),
            endowments: endowment_condition(config.tail_endowment),
            mechanism_a: registry.get(&config.mechanism_a)?,
            mechanism_b: registry.get(&config.mechanism_b)?,
            b_first: config.b_first,
            bot,
            rng: StreamRng::seed_from_u64(seed),
            occupants: [Occupant::Empty; NUM_PLAYERS],
            tokens: Default::default(),
            phase: Phase::Lobby,
            games: Vec::new(),
            pending: [None; NUM_PLAYERS],
            ballots: [None; NUM_PLAYERS],
            winner: None,
            epoch: 0,
            record: None,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Changes whenever a new deadline starts; a timer armed for an older
    /// epoch is stale.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Whether a deadline is running.
    pub fn awaiting(&self) -> bool {
        matches!(self.phase, Phase::Lobby | Phase::Playing { .. } | Phase::Voting)
    }

    /// The finished record, once, after the session is done.
    pub fn take_record(&mut self) -> Option<SessionRecord> {
        self.record.take()
    }

    /// Seats the next caller. The lobby closes when all four seats hold
    /// humans.
    pub fn join(&mut self) -> Result<(SeatTicket, Vec<Event>), PlayError> {
        if self.phase != Phase::Lobby {
            return Err(PlayError::WrongPhase("lobby"));
        }
        let seat = self
            .occupants
            .iter()
            .position(|o| *o == Occupant::Empty)
            .ok_or(PlayError::SessionFull)?;
        let token = format!("{:016x}{:016x}", self.rng.next_u64(), self.rng.next_u64());
        self.occupants[seat] = Occupant::Human;
        self.tokens[seat] = Some(token.clone());
        let mut events = vec![Event::SeatJoined { seat }];
        if self.occupants.iter().all(|o| *o == Occupant::Human) {
            self.start_game(1, &mut events);
        }
        Ok((
            SeatTicket {
                session_id: self.id.clone(),
                seat,
                token,
                endowment: self.endowments[seat],
            },
            events,
        ))
    }

    fn authorize(&self, seat: usize, token: &str) -> Result<(), PlayError> {
        if seat >= NUM_PLAYERS {
            return Err(PlayError::BadSeat(seat));
        }
        match (&self.tokens[seat], self.occupants[seat]) {
            (Some(t), Occupant::Human) if t == token => Ok(()),
            (Some(t), Occupant::Bot) if t == token => Err(PlayError::SeatTakenOver(seat)),
            _ => Err(PlayError::BadToken),
        }
    }

    pub fn submit_contribution(
        &mut self,
        seat: usize,
        token: &str,
        coins: u32,
    ) -> Result<Vec<Event>, PlayError> {
        self.authorize(seat, token)?;
        let Phase::Playing { game, round } = self.phase else {
            return Err(PlayError::WrongPhase("playing"));
        };
        if self.pending[seat].is_some() {
            return Err(PlayError::Duplicate);
        }
        if coins > self.endowments[seat] {
            return Err(PlayError::OutOfRange {
                coins,
                endowment: self.endowments[seat],
            });
        }
        self.pending[seat] = Some(coins);
        let mut events = vec![Event::ContributionReceived { game, round, seat }];
        if self.pending.iter().all(Option::is_some) {
            self.resolve_round(&mut events);
        }
        Ok(events)
    }

    /// `game` is 1 or 2: the game the participant would like to repeat.
    pub fn submit_vote(&mut self, seat: usize, token: &str, game: u8) -> Result<Vec<Event>, PlayError> {
        self.authorize(seat, token)?;
        if self.phase != Phase::Voting {
            return Err(PlayError::WrongPhase("voting"));
        }
        if !(1..=2).contains(&game) {
            return Err(PlayError::BadChoice(game));
        }
        if self.ballots[seat].is_some() {
            return Err(PlayError::Duplicate);
        }
        self.ballots[seat] = Some(game);
        let mut events = vec![Event::VoteReceived { seat }];
        if self.ballots.iter().all(Option::is_some) {
            self.close_vote(&mut events);
        }
        Ok(events)
    }

    /// The deadline armed at `epoch` expired. Empty lobby seats become
    /// bots; human seats that have not acted are taken over by bots. Stale
    /// epochs are ignored.
    pub fn timeout(&mut self, epoch: u64) -> Vec<Event> {
        let mut events = Vec::new();
        if epoch != self.epoch {
            return events;
        }
        match self.phase {
            Phase::Lobby => {
                if !self.occupants.contains(&Occupant::Human) {
                    self.abandon("no participant joined", &mut events);
                    return events;
                }
                let seats: Vec<usize> = (0..NUM_PLAYERS)
                    .filter(|i| self.occupants[*i] == Occupant::Empty)
                    .collect();
                for &i in &seats {
                    self.occupants[i] = Occupant::Bot;
                }
                events.push(Event::BotsFilled { seats });
                self.start_game(1, &mut events);
            }
            Phase::Playing { .. } => {
                for i in 0..NUM_PLAYERS {
                    if self.pending[i].is_none() {
                        self.take_over(i, &mut events);
                    }
                }
                if self.abandon_if_unattended(&mut events) {
                    return events;
                }
                self.bots_contribute();
                self.resolve_round(&mut events);
            }
            Phase::Voting => {
                for i in 0..NUM_PLAYERS {
                    if self.ballots[i].is_none() {
                        self.take_over(i, &mut events);
                    }
                }
                if self.abandon_if_unattended(&mut events) {
                    return events;
                }
                self.bots_vote();
                self.close_vote(&mut events);
            }
            Phase::Done | Phase::Abandoned => {}
        }
        events
    }

    fn take_over(&mut self, seat: usize, events: &mut Vec<Event>) {
        if self.occupants[seat] == Occupant::Human {
            self.occupants[seat] = Occupant::Bot;
            events.push(Event::SeatTimedOut { seat });
        }
    }

    fn abandon_if_unattended(&mut self, events: &mut Vec<Event>) -> bool {
        if self.occupants.contains(&Occupant::Human) {
            return false;
        }
        self.abandon("every participant timed out", events);
        true
    }

    fn abandon(&mut self, reason: &str, events: &mut Vec<Event>) {
        self.phase = Phase::Abandoned;
        self.epoch += 1;
        tracing::info!(session = %self.id, reason, "session abandoned");
        events.push(Event::Abandoned {
            reason: reason.to_string(),
        });
    }

    fn mechanism_for(&self, game: u8) -> &Arc<dyn Mechanism> {
        let a_game = if self.b_first { 2 } else { 1 };
        match game {
            3 => match self.winner.expect("vote closed before game 3").0 {
                Winner::A => &self.mechanism_a,
                Winner::B => &self.mechanism_b,
            },
            g if g == a_game => &self.mechanism_a,
            _ => &self.mechanism_b,
        }
    }

    fn start_game(&mut self, game: u8, events: &mut Vec<Event>) {
        self.games.push(Vec::with_capacity(ROUNDS_PER_STAGE));
        events.push(Event::StageStarted {
            game,
            endowments: self.endowments,
        });
        self.start_round(game, 1, events);
    }

    fn start_round(&mut self, game: u8, round: u32, events: &mut Vec<Event>) {
        self.phase = Phase::Playing { game, round };
        self.epoch += 1;
        self.pending = [None; NUM_PLAYERS];
        events.push(Event::RoundStarted { game, round });
        self.bots_contribute();
        if self.pending.iter().all(Option::is_some) {
            self.resolve_round(events);
        }
    }

    fn bots_contribute(&mut self) {
        let history = self.games.last().expect("a game is running");
        for i in 0..NUM_PLAYERS {
            if self.occupants[i] == Occupant::Bot && self.pending[i].is_none() {
                self.pending[i] = Some(act_contribution(&self.bot, history, i, self.endowments[i], &mut self.rng));
            }
        }
    }

    fn resolve_round(&mut self, events: &mut Vec<Event>) {
        let Phase::Playing { game, round } = self.phase else {
            unreachable!("rounds resolve only while playing");
        };
        let contributions = self.pending.map(|c| c.expect("all contributions in"));
        let state = RoundState::new(round, self.endowments, contributions).expect("contributions checked on submit");
        let weights = self.mechanism_for(game).weights(&self.endowments, &contributions);
        let outcome = compute_round(&state, &weights).expect("mechanism weights lie on the simplex");
        let record = RoundRecord {
            state,
            weights,
            outcome,
        };
        events.push(Event::RoundResult {
            game,
            result: RoundResult::from(&record),
        });
        self.games.last_mut().expect("a game is running").push(record);
        if (round as usize) < ROUNDS_PER_STAGE {
            self.start_round(game, round + 1, events);
        } else if game == 1 {
            self.start_game(2, events);
        } else if game == 2 {
            self.phase = Phase::Voting;
            self.epoch += 1;
            self.ballots = [None; NUM_PLAYERS];
            events.push(Event::VotePrompt { games: [1, 2] });
            self.bots_vote();
            if self.ballots.iter().all(Option::is_some) {
                self.close_vote(events);
            }
        } else {
            self.finish(events);
        }
    }

    fn episode(&self, game: u8) -> EpisodeRecord {
        EpisodeRecord::from_rounds(
            self.mechanism_for(game).id(),
            self.games[game as usize - 1].clone(),
        )
    }

    fn bots_vote(&mut self) {
        let ep1 = EpisodeRecord::from_rounds("", self.games[0].clone());
        let ep2 = EpisodeRecord::from_rounds("", self.games[1].clone());
        for i in 0..NUM_PLAYERS {
            if self.occupants[i] == Occupant::Bot && self.ballots[i].is_none() {
                let prefers_1 = cast_vote(self.bot.voter, &ep1, &ep2, i, &mut self.rng);
                self.ballots[i] = Some(if prefers_1 { 1 } else { 2 });
            }
        }
    }

    fn prefers_a(&self) -> [bool; NUM_PLAYERS] {
        let a_game = if self.b_first { 2 } else { 1 };
        self.ballots.map(|b| b.expect("all ballots in") == a_game)
    }

    fn close_vote(&mut self, events: &mut Vec<Event>) {
        let votes = self.prefers_a();
        self.winner = Some(majority_vote(&votes, &mut self.rng));
        self.start_game(3, events);
    }

    fn finish(&mut self, events: &mut Vec<Event>) {
        self.phase = Phase::Done;
        self.epoch += 1;
        let (winner, tie_broken) = self.winner.expect("vote closed");
        let record = SessionRecord {
            group_id: self.id.clone(),
            endowment_condition: self.endowments,
            mechanism_a: self.mechanism_a.id().to_string(),
            mechanism_b: self.mechanism_b.id().to_string(),
            b_first: self.b_first,
            stage1: self.episode(1),
            stage2: self.episode(2),
            votes: self.prefers_a().map(u8::from),
            tie_broken,
            winner: match winner {
                Winner::A => self.mechanism_a.id().to_string(),
                Winner::B => self.mechanism_b.id().to_string(),
            },
            stage3: Some(self.episode(3)),
            bot_seats: (0..NUM_PLAYERS as u8)
                .filter(|i| self.occupants[*i as usize] == Occupant::Bot)
                .collect(),
        };
        self.record = Some(record);
        events.push(Event::SessionDone);
    }

    /// The session as seen from `seat`, or by an observer. Never carries
    /// mechanism identities.
    pub fn view(&self, seat: Option<usize>) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            phase: self.phase,
            endowments: self.endowments,
            seats: (0..NUM_PLAYERS)
                .map(|i| SeatView {
                    occupant: self.occupants[i],
                    submitted: match self.phase {
                        Phase::Playing { .. } => self.pending[i].is_some(),
                        Phase::Voting => self.ballots[i].is_some(),
                        _ => false,
                    },
                })
                .collect(),
            your_seat: seat,
            your_vote: seat.and_then(|s| self.ballots.get(s).copied().flatten()),
            votes_received: self.ballots.iter().filter(|b| b.is_some()).count(),
            games: self
                .games
                .iter()
                .enumerate()
                .map(|(k, rounds)| {
                    let mut totals = [0.0; NUM_PLAYERS];
                    for r in rounds {
                        for (t, x) in totals.iter_mut().zip(r.outcome.rewards()) {
                            *t += x;
                        }
                    }
                    GameView {
                        game: k as u8 + 1,
                        rounds: rounds.iter().map(RoundResult::from).collect(),
                        totals,
                    }
                })
                .collect(),
        }
    }

    /// Checks `token` for `seat` without changing anything.
    pub fn check_token(&self, seat: usize, token: &str) -> Result<(), PlayError> {
        match self.authorize(seat, token) {
            Err(PlayError::SeatTakenOver(_)) => Ok(()),
            other => other,
        }
    }
}
