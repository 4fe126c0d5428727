//! Event-handler contract shared by the server, referee and player engines.
//!
//! Engines never read a clock; the simulator hands them `now` with every
//! input and they answer with a list of [`Action`]s.

use crate::ids::{PlayerId, RoundIndex};
use crate::wire::ProtocolMessage;

/// Simulated milliseconds.
pub type SimTime = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Timer {
    /// Player boot: send the login request.
    Start,
    /// Referee: end of round `r`.
    CloseRound(RoundIndex),
    /// Owner: stop waiting for outputs of round `r`.
    RestoreDeadline(RoundIndex),
    /// Player: log in again after leaving.
    Rejoin,
}

/// A decoded frame as seen by its receiver.
#[derive(Debug, Clone)]
pub struct Envelope {
    /// Link-level source. Only used to answer unauthenticated senders.
    pub from: PlayerId,
    pub sent_at: SimTime,
    pub msg: ProtocolMessage,
}

#[derive(Debug, Clone)]
pub enum Action {
    Send { to: PlayerId, msg: ProtocolMessage },
    SetTimer { at: SimTime, timer: Timer },
}

impl Action {
    pub fn send(to: PlayerId, msg: ProtocolMessage) -> Self {
        Action::Send { to, msg }
    }
}
