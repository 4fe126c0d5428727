//! Scenario files (TOML) and their validation.

use crate::adversary::{CheatKind, CheatStrategy};
use crate::ids::{PlayerId, RoundIndex};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioError {
    Io(String),
    Parse { line: usize, col: usize, message: String },
    Invalid { line: usize, message: String },
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "{e}"),
            ScenarioError::Parse { line, col, message } => write!(f, "line {line}, column {col}: {message}"),
            ScenarioError::Invalid { line, message } => write!(f, "line {line}: {message}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Move {
    pub round: RoundIndex,
    pub position: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    /// Defaults to `2 + index`.
    pub id: Option<u32>,
    #[serde(default = "default_latency")]
    pub latency_ms: u64,
    #[serde(default)]
    pub position: i64,
    #[serde(default)]
    pub moves: Vec<Move>,
    /// Defaults to a seed-derived value.
    pub initial_state: Option<u64>,
    pub strategy: Option<CheatStrategy>,
    pub leave_round: Option<RoundIndex>,
    pub rejoin_after_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpectedOutcome {
    Detected,
    Survived,
    Disconnected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutcomeExpectation {
    pub player: u32,
    pub outcome: ExpectedOutcome,
    /// Detection round for `detected`, removal round for `disconnected`.
    pub round: Option<RoundIndex>,
    /// `cheating` or `disconnected`, checked for `disconnected`.
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkExpectation {
    pub player: u32,
    pub round: RoundIndex,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountExpectation {
    pub player: u32,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    pub all_reconstructions_succeed: Option<bool>,
    #[serde(default)]
    pub outcomes: Vec<OutcomeExpectation>,
    #[serde(default)]
    pub never_marked: Vec<u32>,
    #[serde(default)]
    pub marked: Vec<MarkExpectation>,
    #[serde(default)]
    pub dead_reckoned: Vec<CountExpectation>,
    pub referee_holds_share: Option<bool>,
    /// `d` identical across every round after the first adaptation.
    pub d_stable: Option<bool>,
    /// Whether pooled side-channel outputs reveal an owner's state.
    pub collusion_derives: Option<bool>,
    #[serde(default)]
    pub state_persisted: Vec<u32>,
    pub min_reconstructions: Option<usize>,
}

fn default_latency() -> u64 {
    20
}
fn default_rounds() -> RoundIndex {
    10
}
fn default_d_max() -> u32 {
    600
}
fn default_d_min() -> u32 {
    10
}
fn default_f() -> usize {
    1
}
fn default_threshold() -> u32 {
    3
}
fn default_radius() -> i64 {
    10
}
fn default_hops() -> u32 {
    6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_rounds")]
    pub rounds: RoundIndex,
    #[serde(default = "default_d_max")]
    pub d_max_ms: u32,
    #[serde(default = "default_d_min")]
    pub d_min_ms: u32,
    #[serde(default = "default_hops")]
    pub hop_factor: u32,
    #[serde(default = "default_f")]
    pub fault_tolerance: usize,
    #[serde(default = "default_threshold")]
    pub r_disconnect: u32,
    #[serde(default = "default_threshold")]
    pub r_cheat: u32,
    #[serde(default = "default_radius")]
    pub aoi_radius: i64,
    #[serde(default)]
    pub jitter_ms: u64,
    #[serde(default)]
    pub loss_rate: f64,
    #[serde(default)]
    pub reorder: bool,
    pub players: Vec<PlayerSpec>,
    #[serde(default)]
    pub expect: Expectations,
}

impl Scenario {
    pub fn player_ids(&self) -> Vec<PlayerId> {
        self.players
            .iter()
            .enumerate()
            .map(|(i, p)| PlayerId(p.id.unwrap_or(PlayerId::FIRST_PLAYER + i as u32)))
            .collect()
    }

    pub fn cheaters(&self) -> Vec<PlayerId> {
        self.player_ids()
            .into_iter()
            .zip(&self.players)
            .filter(|(_, p)| p.strategy.is_some())
            .map(|(id, _)| id)
            .collect()
    }
}

fn line_at(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.len() - before.rfind('\n').map(|i| i + 1).unwrap_or(0) + 1;
    (line, col)
}

/// Line of the first occurrence of `needle` at the start of a line, or 1.
fn line_of(text: &str, needle: &str) -> usize {
    text.lines()
        .position(|l| l.trim_start().starts_with(needle))
        .map(|i| i + 1)
        .unwrap_or(1)
}

/// Line of the `[[players]]` header for the `index`-th player.
fn player_line(text: &str, index: usize) -> usize {
    text.lines()
        .enumerate()
        .filter(|(_, l)| l.trim() == "[[players]]")
        .nth(index)
        .map(|(i, _)| i + 1)
        .unwrap_or_else(|| line_of(text, "players"))
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| {
        let (line, col) = e.span().map(|s| line_at(text, s.start)).unwrap_or((1, 1));
        ScenarioError::Parse {
            line,
            col,
            message: e.message().to_string(),
        }
    })?;
    validate(&scenario, text)?;
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn invalid(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        line,
        message: message.into(),
    }
}

pub fn validate(s: &Scenario, text: &str) -> Result<(), ScenarioError> {
    if s.players.len() < 3 {
        return Err(invalid(
            player_line(text, 0),
            format!("n ≥ 3 players required, found {}", s.players.len()),
        ));
    }
    if s.players.iter().all(|p| p.strategy.is_some()) {
        return Err(invalid(player_line(text, 0), "at least one honest player required"));
    }
    let ids = s.player_ids();
    let mut seen = BTreeSet::new();
    for (i, id) in ids.iter().enumerate() {
        if !id.is_player() {
            return Err(invalid(
                player_line(text, i),
                format!("player id {id} is reserved (ids start at {})", PlayerId::FIRST_PLAYER),
            ));
        }
        if !seen.insert(*id) {
            return Err(invalid(player_line(text, i), format!("duplicate player id {id}")));
        }
    }
    for (i, p) in s.players.iter().enumerate() {
        if let Some(CheatStrategy {
            kind: CheatKind::Collude { partner },
            ..
        }) = &p.strategy
        {
            if !seen.contains(partner) {
                return Err(invalid(
                    player_line(text, i),
                    format!("collusion partner {partner} is not a player"),
                ));
            }
        }
        if p.leave_round == Some(0) {
            return Err(invalid(player_line(text, i), "leave_round must be ≥ 1"));
        }
    }
    if !(0.0..1.0).contains(&s.loss_rate) {
        return Err(invalid(line_of(text, "loss_rate"), "loss_rate must lie in [0, 1)"));
    }
    if s.rounds == 0 {
        return Err(invalid(line_of(text, "rounds"), "rounds must be ≥ 1"));
    }
    if s.d_min_ms == 0 || s.d_min_ms > s.d_max_ms {
        return Err(invalid(line_of(text, "d_max_ms"), "need 0 < d_min_ms ≤ d_max_ms"));
    }
    if s.r_cheat == 0 || s.r_disconnect == 0 {
        return Err(invalid(line_of(text, "r_"), "thresholds must be ≥ 1"));
    }
    if s.aoi_radius < 0 {
        return Err(invalid(line_of(text, "aoi_radius"), "aoi_radius must be ≥ 0"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = r#"
seed = 1

[[players]]
latency_ms = 10

[[players]]
latency_ms = 20

[[players]]
latency_ms = 30
"#;

    #[test]
    fn defaults_are_filled() {
        let s = parse_scenario(THREE).unwrap();
        assert_eq!(s.rounds, 10);
        assert_eq!(s.r_cheat, 3);
        assert_eq!(s.player_ids(), vec![PlayerId(2), PlayerId(3), PlayerId(4)]);
        assert!(s.cheaters().is_empty());
    }

    #[test]
    fn two_players_rejected_with_line() {
        let text = "seed = 1\n\n[[players]]\n\n[[players]]\n";
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { line: 3, .. }), "{err}");
        assert!(err.to_string().contains("n ≥ 3"));
    }

    #[test]
    fn all_cheaters_rejected() {
        let mut text = String::from("seed = 1\n");
        for _ in 0..3 {
            text.push_str("\n[[players]]\nstrategy = { kind = \"forge_output\" }\n");
        }
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("honest"), "{err}");
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse_scenario("seed = 1\nrounds = \"many\"\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err}");
        let err = parse_scenario("seed = 1\nbogus = 3\n[[players]]\n").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = "seed = 1\n[[players]]\nid = 5\n[[players]]\nid = 5\n[[players]]\n";
        let err = parse_scenario(text).unwrap_err();
        assert!(matches!(err, ScenarioError::Invalid { line: 4, .. }), "{err}");
    }
}
