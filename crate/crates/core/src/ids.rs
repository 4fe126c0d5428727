use serde::{Deserialize, Serialize};
use std::fmt;

/// Session-unique entity identifier carried in every frame header.
///
/// `0` is the referee and `1` the server; players start at [`PlayerId::FIRST_PLAYER`].
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerId(pub u32);

impl PlayerId {
    pub const REFEREE: PlayerId = PlayerId(0);
    pub const SERVER: PlayerId = PlayerId(1);
    pub const FIRST_PLAYER: u32 = 2;
    /// Sender field of a login request, before the server has assigned an id.
    pub const UNASSIGNED: PlayerId = PlayerId(u32::MAX);

    pub fn is_player(self) -> bool {
        self.0 >= Self::FIRST_PLAYER && self != Self::UNASSIGNED
    }

    pub fn to_be_bytes(self) -> [u8; 4] {
        self.0.to_be_bytes()
    }
}

impl fmt::Debug for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for PlayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::REFEREE => write!(f, "R"),
            Self::SERVER => write!(f, "S"),
            Self::UNASSIGNED => write!(f, "P?"),
            PlayerId(n) => write!(f, "P{n}"),
        }
    }
}

/// A share holder is either a player or the referee (`PlayerId::REFEREE`).
pub type HolderId = PlayerId;

pub type RoundIndex = u32;
