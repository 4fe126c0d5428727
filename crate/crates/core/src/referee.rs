//! Trusted referee R: area-of-interest manager, share dealer, round clock,
//! verification model, suspicion ledger and leaving models.

use crate::actor::{Action, Envelope, SimTime, Timer};
use crate::crypto::{self, MacTag, Nonce, SimRng, Signature, SymmetricKey, VerificationKey};
use crate::field::{FieldElement, PrimeField};
use crate::ids::{HolderId, PlayerId, RoundIndex};
use crate::server;
use crate::sharing::{self, Output, RoundEvent, Share};
use crate::wire::{
    self, transcript, Body, CorrectionBody, CorrectionKind, EntryStatus, GameState, MessageType, NotifyReason,
    ProtocolMessage, RemovalReason, ReportBody, Request, POINT_LEN,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RefereeError {
    #[error("unknown player {0}")]
    UnknownPlayer(PlayerId),
    #[error("MAC verification failed")]
    BadMac,
    #[error("sealed field did not open")]
    BadSeal,
    #[error("nonce already used")]
    ReplayedNonce,
    #[error("frame for round {got} during round {current}")]
    StaleRound { got: RoundIndex, current: RoundIndex },
    #[error("{0} holds no role in this round")]
    NotParticipating(PlayerId),
    #[error("plaintext request does not match the sealed copy")]
    RequestMismatch,
    #[error("duplicate frame")]
    Duplicate,
    #[error("malformed plaintext")]
    Malformed,
    #[error("{0} has left the game")]
    Departed(PlayerId),
}

#[derive(Debug, Clone)]
pub struct RefereeConfig {
    /// Rounds to play after the setup round 0.
    pub rounds: RoundIndex,
    pub d_max_ms: u32,
    pub d_min_ms: u32,
    pub r_disconnect: u32,
    pub r_cheat: u32,
    pub fault_tolerance: usize,
    pub aoi_radius: i64,
    /// Sequential protocol hops a round has to fit (ROUND_OPEN → … → CORRECTION).
    pub hop_factor: u32,
}

impl Default for RefereeConfig {
    fn default() -> Self {
        Self {
            rounds: 10,
            d_max_ms: 1000,
            d_min_ms: 10,
            r_disconnect: 3,
            r_cheat: 3,
            fault_tolerance: 1,
            aoi_radius: 10,
            hop_factor: 6,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundClock {
    pub d: u32,
    pub d_max: u32,
    pub current_round: RoundIndex,
    pub opened_at: SimTime,
}

impl RoundClock {
    /// `d = clamp(2 · hops · p95, d_min, d_max)` over this round's on-time samples.
    pub fn adapt(&mut self, samples: &[SimTime], hops: u32, d_min: u32) {
        if let Some(p95) = percentile_95(samples) {
            let target = 2u64 * hops as u64 * p95;
            self.d = target.clamp(d_min as u64, self.d_max as u64) as u32;
        }
        debug_assert!(self.d > 0 && self.d <= self.d_max);
    }
}

/// Nearest-rank 95th percentile.
pub fn percentile_95(samples: &[SimTime]) -> Option<SimTime> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let rank = (95 * s.len()).div_ceil(100).max(1);
    Some(s[rank - 1])
}

#[derive(Debug, Clone, Default)]
pub struct AoiModel {
    pub positions: BTreeMap<PlayerId, i64>,
    pub radius: i64,
    pairs: BTreeSet<(PlayerId, PlayerId)>,
}

fn ordered(a: PlayerId, b: PlayerId) -> (PlayerId, PlayerId) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl AoiModel {
    pub fn new(radius: i64) -> Self {
        Self {
            radius,
            ..Default::default()
        }
    }

    pub fn interacting(&self, a: PlayerId, b: PlayerId) -> bool {
        match (self.positions.get(&a), self.positions.get(&b)) {
            (Some(pa), Some(pb)) => a != b && pa.abs_diff(*pb) <= self.radius as u64,
            _ => false,
        }
    }

    /// Moves `player`; returns `(new pairs, pairs that fell apart)`.
    pub fn update(
        &mut self,
        player: PlayerId,
        position: i64,
    ) -> (Vec<(PlayerId, PlayerId)>, Vec<(PlayerId, PlayerId)>) {
        self.positions.insert(player, position);
        let mut formed = Vec::new();
        let mut broken = Vec::new();
        let others: Vec<_> = self.positions.keys().copied().filter(|p| *p != player).collect();
        for other in others {
            let pair = ordered(player, other);
            let now = self.interacting(player, other);
            let before = self.pairs.contains(&pair);
            if now && !before {
                self.pairs.insert(pair);
                formed.push(pair);
            } else if !now && before {
                self.pairs.remove(&pair);
                broken.push(pair);
            }
        }
        (formed, broken)
    }

    pub fn remove(&mut self, player: PlayerId) {
        self.positions.remove(&player);
        self.pairs.retain(|(a, b)| *a != player && *b != player);
    }

    pub fn neighbours(&self, player: PlayerId) -> BTreeSet<PlayerId> {
        self.pairs
            .iter()
            .filter_map(|(a, b)| {
                if *a == player {
                    Some(*b)
                } else if *b == player {
                    Some(*a)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn is_pair(&self, a: PlayerId, b: PlayerId) -> bool {
        self.pairs.contains(&ordered(a, b))
    }

    /// Connected components (size ≥ 2) of the interaction graph over `eligible`.
    pub fn groups(&self, eligible: &BTreeSet<PlayerId>) -> Vec<BTreeSet<PlayerId>> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for &start in eligible {
            if seen.contains(&start) {
                continue;
            }
            let mut comp = BTreeSet::new();
            let mut stack = vec![start];
            while let Some(p) = stack.pop() {
                if !comp.insert(p) {
                    continue;
                }
                for n in self.neighbours(p) {
                    if eligible.contains(&n) && !comp.contains(&n) {
                        stack.push(n);
                    }
                }
            }
            seen.extend(comp.iter().copied());
            if comp.len() >= 2 {
                out.push(comp);
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct SuspicionLedger {
    pub missing_rounds: BTreeMap<PlayerId, u32>,
    pub dishonest_rounds: BTreeMap<PlayerId, u32>,
    pub r_disconnect: u32,
    pub r_cheat: u32,
}

impl SuspicionLedger {
    pub fn new(r_disconnect: u32, r_cheat: u32) -> Self {
        Self {
            missing_rounds: BTreeMap::new(),
            dishonest_rounds: BTreeMap::new(),
            r_disconnect,
            r_cheat,
        }
    }

    /// Applies one closed round. A clean round resets both counters; a
    /// missing round leaves the dishonest counter untouched.
    pub fn close_round(
        &mut self,
        participants: &BTreeSet<PlayerId>,
        missing: &BTreeSet<PlayerId>,
        dishonest: &BTreeSet<PlayerId>,
    ) -> Vec<(PlayerId, RemovalReason)> {
        let mut removals = Vec::new();
        for &p in participants {
            let m = self.missing_rounds.entry(p).or_insert(0);
            if missing.contains(&p) {
                *m += 1;
            } else {
                *m = 0;
            }
            let d = self.dishonest_rounds.entry(p).or_insert(0);
            if dishonest.contains(&p) {
                *d += 1;
            } else if !missing.contains(&p) {
                *d = 0;
            }
            if *d >= self.r_cheat {
                removals.push((p, RemovalReason::Cheating));
            } else if self.missing_rounds[&p] >= self.r_disconnect {
                removals.push((p, RemovalReason::Disconnected));
            }
        }
        removals
    }

    pub fn counters(&self, p: PlayerId) -> (u32, u32) {
        (
            self.missing_rounds.get(&p).copied().unwrap_or(0),
            self.dishonest_rounds.get(&p).copied().unwrap_or(0),
        )
    }
}

#[derive(Debug, Clone)]
pub struct DealingRecord {
    pub owner: PlayerId,
    /// Player holders, owner first; the referee is appended in the two-player case.
    pub holders: Vec<HolderId>,
    pub k: usize,
    pub round: RoundIndex,
    pub event: RoundEvent,
    pub request: Option<Request>,
    pub shares_issued: Vec<Share>,
    pub holder_requests: BTreeMap<PlayerId, Request>,
    pub dealt: BTreeSet<PlayerId>,
    /// Signed outputs reported straight to the referee.
    pub outputs_received: BTreeMap<HolderId, (Output, Signature)>,
    pub reports: BTreeMap<PlayerId, ReportBody>,
    pub referee_output: Option<Output>,
    pub corrected: BTreeSet<HolderId>,
    pub resend_requested: BTreeSet<HolderId>,
    pub awaiting_resend: BTreeMap<HolderId, ([u8; POINT_LEN], Signature)>,
}

impl DealingRecord {
    pub fn player_holders(&self) -> impl Iterator<Item = PlayerId> + '_ {
        self.holders.iter().copied().filter(|h| *h != PlayerId::REFEREE)
    }

    fn share_of(&self, holder: PlayerId) -> Option<&Share> {
        self.shares_issued.iter().find(|s| s.holder == holder)
    }

    /// The output an honest holder would produce, from the dealer's own copy.
    pub fn expected_output(&self, holder: PlayerId) -> Option<Output> {
        self.share_of(holder).map(|s| sharing::evaluate_event(s, &self.event))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VerdictKind {
    /// Case 2: the output delivered to the owner differs from the holder's report.
    ForgedOutput,
    /// Case 2 inverse: the accused holder's output checks out.
    WrongAccusation,
    /// Holder's report to the referee disagrees with the share it was dealt.
    InconsistentReport,
    BadMac,
    BadSeal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Verdict {
    pub subject: PlayerId,
    pub kind: VerdictKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum VerdictAction {
    Forward { owner: PlayerId, holder: PlayerId },
    DeadReckon { owner: PlayerId, holder: PlayerId },
    Correct { owner: PlayerId, holder: PlayerId },
    RequestResend { holder: PlayerId },
    Mark(Verdict),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ShareAudit {
    pub issued: usize,
    pub consumed: usize,
    pub arbitrated: usize,
    pub expired: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DealingAudit {
    pub owner: PlayerId,
    pub holders: Vec<PlayerId>,
    pub k: usize,
    pub referee_holds_share: bool,
    pub event_a: String,
    pub event_b: String,
    pub dealt: bool,
    pub owner_reported: bool,
    pub restored_claim: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundAudit {
    pub round: RoundIndex,
    pub d_ms: u32,
    pub opened_at: SimTime,
    pub closed_at: SimTime,
    pub dealings: Vec<DealingAudit>,
    pub verdicts: Vec<Verdict>,
    pub actions: Vec<VerdictAction>,
    pub counters: BTreeMap<PlayerId, (u32, u32)>,
    pub missing: Vec<PlayerId>,
    pub removals: Vec<(PlayerId, RemovalReason)>,
    pub share_audit: ShareAudit,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum RefereeEvent {
    Joined { player: PlayerId, at: SimTime },
    Dropped { round: RoundIndex, from: PlayerId, msg: MessageType, reason: String },
    KeyIssued { a: PlayerId, b: PlayerId, round: RoundIndex },
    AoiMatched { a: PlayerId, b: PlayerId },
    AoiLeft { a: PlayerId, b: PlayerId },
    OwnerSelected { round: RoundIndex, owner: PlayerId, group: Vec<PlayerId> },
    LeaveStarted { player: PlayerId, reason: RemovalReason, at: SimTime },
    Departed { player: PlayerId, reason: RemovalReason, at: SimTime },
    DeadReckoned { round: RoundIndex, player: PlayerId, avatar: String },
}

#[derive(Debug, Clone, Default)]
struct LatencyStats {
    sum: u64,
    count: u64,
}

impl LatencyStats {
    fn mean(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum as f64 / self.count as f64)
    }
}

#[derive(Clone)]
pub struct Referee {
    pub config: RefereeConfig,
    rng: SimRng,
    pub clock: RoundClock,
    pub aoi: AoiModel,
    pub ledger: SuspicionLedger,
    long_term: BTreeMap<PlayerId, SymmetricKey>,
    backend_key: SymmetricKey,
    directory: BTreeMap<PlayerId, VerificationKey>,
    pub online: BTreeSet<PlayerId>,
    pub leaving: BTreeMap<PlayerId, RemovalReason>,
    pub departed: BTreeMap<PlayerId, RemovalReason>,
    pub known_state: BTreeMap<PlayerId, GameState>,
    /// Last reconstructed output per holder; the zero-order hold for dead reckoning.
    last_output: BTreeMap<PlayerId, FieldElement>,
    nonce_cache: BTreeSet<[u8; 32]>,
    latency: BTreeMap<PlayerId, LatencyStats>,
    round_samples: Vec<SimTime>,
    previous_groups: Vec<(BTreeSet<PlayerId>, PlayerId)>,
    pub dealings: BTreeMap<PlayerId, DealingRecord>,
    round_verdicts: Vec<Verdict>,
    round_actions: Vec<VerdictAction>,
    round_dropped: usize,
    pub audit: Vec<RoundAudit>,
    pub events: Vec<RefereeEvent>,
    pub finished: bool,
}

impl Referee {
    pub fn new(
        config: RefereeConfig,
        long_term: BTreeMap<PlayerId, SymmetricKey>,
        backend_key: SymmetricKey,
        directory: BTreeMap<PlayerId, VerificationKey>,
        rng: SimRng,
    ) -> Self {
        Self {
            clock: RoundClock {
                d: config.d_max_ms,
                d_max: config.d_max_ms,
                current_round: 0,
                opened_at: 0,
            },
            aoi: AoiModel::new(config.aoi_radius),
            ledger: SuspicionLedger::new(config.r_disconnect, config.r_cheat),
            config,
            rng,
            long_term,
            backend_key,
            directory,
            online: BTreeSet::new(),
            leaving: BTreeMap::new(),
            departed: BTreeMap::new(),
            known_state: BTreeMap::new(),
            last_output: BTreeMap::new(),
            nonce_cache: BTreeSet::new(),
            latency: BTreeMap::new(),
            round_samples: Vec::new(),
            previous_groups: Vec::new(),
            dealings: BTreeMap::new(),
            round_verdicts: Vec::new(),
            round_actions: Vec::new(),
            round_dropped: 0,
            audit: Vec::new(),
            events: Vec::new(),
            finished: false,
        }
    }

    /// Setup round 0 lasts `d_max`.
    pub fn start(&self) -> Vec<Action> {
        vec![Action::SetTimer {
            at: self.config.d_max_ms as SimTime,
            timer: Timer::CloseRound(0),
        }]
    }

    fn key(&self, p: PlayerId) -> Result<&SymmetricKey, RefereeError> {
        self.long_term.get(&p).ok_or(RefereeError::UnknownPlayer(p))
    }

    fn control(&self, to: PlayerId, body: Body) -> Option<Action> {
        let key = self.long_term.get(&to)?;
        Some(Action::send(
            to,
            ProtocolMessage::new(PlayerId::REFEREE, self.clock.current_round, body).with_control_mac(key),
        ))
    }

    fn mark(&mut self, subject: PlayerId, kind: VerdictKind, detail: String) {
        let v = Verdict { subject, kind, detail };
        self.round_actions.push(VerdictAction::Mark(v.clone()));
        self.round_verdicts.push(v);
    }

    pub fn mean_latency(&self, p: PlayerId) -> Option<f64> {
        self.latency.get(&p).and_then(|s| s.mean())
    }

    /// Lowest observed mean latency; ties and unobserved players fall back to the lowest id.
    pub fn select_secret_owner(&self, group: &[PlayerId]) -> PlayerId {
        let mut best = group[0];
        let mut best_lat = self.mean_latency(best).unwrap_or(f64::INFINITY);
        for &p in &group[1..] {
            let lat = self.mean_latency(p).unwrap_or(f64::INFINITY);
            if lat < best_lat || (lat == best_lat && p < best) {
                best = p;
                best_lat = lat;
            }
        }
        best
    }

    /// Positions `player` and emits AOI_MATCH / NOTIFY(LeftAoi) for changed pairs.
    pub fn update_aoi(&mut self, player: PlayerId, position: i64) -> Result<Vec<Action>, RefereeError> {
        if !self.online.contains(&player) {
            return Err(RefereeError::UnknownPlayer(player));
        }
        let (formed, broken) = self.aoi.update(player, position);
        let mut actions = Vec::new();
        for (a, b) in formed {
            if !self.online.contains(&a) || !self.online.contains(&b) {
                continue;
            }
            self.events.push(RefereeEvent::AoiMatched { a, b });
            let a_first = self.select_secret_owner(&[a, b]) == a;
            let mac = MacTag([0; 32]);
            actions.extend(self.control(
                a,
                Body::AoiMatch {
                    peer: b,
                    initiator: a_first,
                    mac,
                },
            ));
            actions.extend(self.control(
                b,
                Body::AoiMatch {
                    peer: a,
                    initiator: !a_first,
                    mac,
                },
            ));
        }
        for (a, b) in broken {
            self.events.push(RefereeEvent::AoiLeft { a, b });
            let mac = MacTag([0; 32]);
            actions.extend(self.control(
                a,
                Body::Notify {
                    reason: NotifyReason::LeftAoi,
                    subject: b,
                    mac,
                },
            ));
            actions.extend(self.control(
                b,
                Body::Notify {
                    reason: NotifyReason::LeftAoi,
                    subject: a,
                    mac,
                },
            ));
        }
        Ok(actions)
    }

    /// M2 → (M3 to the initiator, M4 to the responder).
    pub fn establish_session_key(
        &mut self,
        m2: &ProtocolMessage,
    ) -> Result<(ProtocolMessage, ProtocolMessage, PlayerId), RefereeError> {
        let Body::KeyEstablish {
            nonce_a,
            nonce_b,
            responder,
            mac,
        } = &m2.body
        else {
            return Err(RefereeError::Malformed);
        };
        let b = m2.sender;
        if *responder != b {
            return Err(RefereeError::Malformed);
        }
        let k_br = self.key(b)?.clone();
        if self.nonce_cache.contains(&nonce_b.0) || self.nonce_cache.contains(&nonce_a.0) {
            return Err(RefereeError::ReplayedNonce);
        }
        let header = m2.header();
        let a = self
            .aoi
            .neighbours(b)
            .into_iter()
            .find(|a| crypto::verify_mac(&k_br, &transcript::m2(&header, nonce_a, nonce_b, *a, b), mac))
            .ok_or(RefereeError::BadMac)?;
        let k_ar = self.key(a)?.clone();
        self.nonce_cache.insert(nonce_a.0);
        self.nonce_cache.insert(nonce_b.0);

        let k_ab = crypto::derive_session_key(&mut self.rng);
        let round = self.clock.current_round;
        let m3 = self.key_delivery(MessageType::M3, &k_ar, &k_ab, nonce_a, b, round);
        let m4 = self.key_delivery(MessageType::M4, &k_br, &k_ab, nonce_b, a, round);
        self.events.push(RefereeEvent::KeyIssued { a, b, round });
        Ok((m3, m4, a))
    }

    fn key_delivery(
        &mut self,
        ty: MessageType,
        key: &SymmetricKey,
        k_ab: &SymmetricKey,
        nonce: &Nonce,
        peer: PlayerId,
        round: RoundIndex,
    ) -> ProtocolMessage {
        let header = wire::header_bytes(ty, PlayerId::REFEREE, round);
        let sealed_key = crypto::seal_with_aad(key, &header, k_ab.as_bytes(), &mut self.rng);
        let mac = crypto::mac(key, &transcript::key_delivery(&header, nonce, peer, &sealed_key));
        let body = if ty == MessageType::M3 {
            Body::SessionKeyForInitiator { sealed_key, peer, mac }
        } else {
            Body::SessionKeyForResponder { sealed_key, peer, mac }
        };
        ProtocolMessage::new(PlayerId::REFEREE, round, body)
    }

    fn check_round(&self, msg: &ProtocolMessage) -> Result<(), RefereeError> {
        if msg.round != self.clock.current_round {
            return Err(RefereeError::StaleRound {
                got: msg.round,
                current: self.clock.current_round,
            });
        }
        Ok(())
    }

    /// M5 → split, M7 to the owner and M8 to every holder that asked.
    pub fn deal_shares(&mut self, m5: &ProtocolMessage) -> Result<Vec<Action>, RefereeError> {
        self.check_round(m5)?;
        let Body::StateSubmit { request, sealed_state } = &m5.body else {
            return Err(RefereeError::Malformed);
        };
        let owner = m5.sender;
        let k_ar = self.key(owner)?.clone();
        let dealing = self
            .dealings
            .get(&owner)
            .ok_or(RefereeError::NotParticipating(owner))?;
        if dealing.request.is_some() {
            return Err(RefereeError::Duplicate);
        }
        let pt = match crypto::open_with_aad(&k_ar, &m5.header(), sealed_state) {
            Ok(pt) => pt,
            Err(_) => {
                self.mark(owner, VerdictKind::BadSeal, "M5 did not open".into());
                return Err(RefereeError::BadSeal);
            }
        };
        let (bound, state) = wire::decode_state_submission(&pt).map_err(|_| RefereeError::Malformed)?;
        if bound != *request {
            self.mark(owner, VerdictKind::BadSeal, "M5 request binding".into());
            return Err(RefereeError::RequestMismatch);
        }
        let dealing = self.dealings.get_mut(&owner).unwrap();
        let shares = sharing::split(
            &state,
            owner,
            dealing.round,
            &dealing.holders,
            dealing.k,
            &mut self.rng,
        )
        .expect("dealing parameters validated at round open");
        dealing.request = Some(*request);
        dealing.referee_output = shares
            .iter()
            .find(|s| s.holder == PlayerId::REFEREE)
            .map(|s| sharing::evaluate_event(s, &dealing.event));
        dealing.shares_issued = shares;
        let next = dealing.event.apply(&state);
        self.known_state.insert(owner, next);

        let round = dealing.round;
        let peers: Vec<_> = dealing.player_holders().filter(|h| *h != owner).collect();
        let own_share = dealing.share_of(owner).cloned().expect("owner is a holder");
        let h7 = wire::header_bytes(MessageType::M7, PlayerId::REFEREE, round);
        let sealed_share = crypto::seal_with_aad(&k_ar, &h7, &wire::encode_share(&own_share), &mut self.rng);
        let referee_output = dealing.referee_output.clone();
        let sealed_referee_output = referee_output
            .as_ref()
            .map(|o| crypto::seal_with_aad(&k_ar, &h7, &wire::encode_output(o), &mut self.rng));
        let mac = crypto::mac(
            &k_ar,
            &transcript::m7(&h7, request, &peers, &sealed_share, sealed_referee_output.as_ref()),
        );
        let mut actions = vec![Action::send(
            owner,
            ProtocolMessage::new(
                PlayerId::REFEREE,
                round,
                Body::OwnerDeal {
                    sealed_share,
                    sealed_referee_output,
                    mac,
                },
            ),
        )];
        let waiting: Vec<_> = self.dealings[&owner].holder_requests.keys().copied().collect();
        for h in waiting {
            actions.extend(self.send_m8(owner, h)?);
        }
        Ok(actions)
    }

    fn send_m8(&mut self, owner: PlayerId, holder: PlayerId) -> Result<Vec<Action>, RefereeError> {
        let key = self.key(holder)?.clone();
        let dealing = self.dealings.get_mut(&owner).unwrap();
        if dealing.shares_issued.is_empty() || !dealing.dealt.insert(holder) {
            return Ok(vec![]);
        }
        let request = dealing.holder_requests[&holder];
        let share = dealing.share_of(holder).cloned().ok_or(RefereeError::NotParticipating(holder))?;
        let round = dealing.round;
        let header = wire::header_bytes(MessageType::M8, PlayerId::REFEREE, round);
        let sealed_share = crypto::seal_with_aad(&key, &header, &wire::encode_share(&share), &mut self.rng);
        let mac = crypto::mac(&key, &transcript::m8(&header, &request, owner, &sealed_share));
        Ok(vec![Action::send(
            holder,
            ProtocolMessage::new(
                PlayerId::REFEREE,
                round,
                Body::HolderDeal {
                    sealed_share,
                    owner,
                    mac,
                },
            ),
        )])
    }

    fn dealing_of_holder(&self, holder: PlayerId) -> Option<PlayerId> {
        self.dealings
            .values()
            .find(|d| d.owner != holder && d.holders.contains(&holder))
            .map(|d| d.owner)
    }

    fn accept_holder_request(&mut self, m6: &ProtocolMessage) -> Result<Vec<Action>, RefereeError> {
        self.check_round(m6)?;
        let Body::HolderRequest { request, holder } = &m6.body else {
            return Err(RefereeError::Malformed);
        };
        if *holder != m6.sender {
            return Err(RefereeError::Malformed);
        }
        let owner = self
            .dealing_of_holder(*holder)
            .ok_or(RefereeError::NotParticipating(*holder))?;
        let dealing = self.dealings.get_mut(&owner).unwrap();
        if dealing.holder_requests.contains_key(holder) {
            return Err(RefereeError::Duplicate);
        }
        dealing.holder_requests.insert(*holder, *request);
        self.send_m8(owner, *holder)
    }

    /// Holder's signed output or the owner's MP_AR.
    pub fn ingest_round_report(&mut self, msg: &ProtocolMessage) -> Result<Vec<Action>, RefereeError> {
        self.check_round(msg)?;
        let from = msg.sender;
        let key = self.key(from)?.clone();
        match &msg.body {
            Body::OutputReport { sealed } => {
                let owner = self.dealing_of_holder(from).ok_or(RefereeError::NotParticipating(from))?;
                let pt = crypto::open_with_aad(&key, &msg.header(), sealed).map_err(|_| RefereeError::BadSeal)?;
                let (point, sig) = wire::decode_signed_output(&pt).map_err(|_| RefereeError::Malformed)?;
                let output = wire::decode_output(&point, from, msg.round).map_err(|_| RefereeError::Malformed)?;
                let dealing = self.dealings.get_mut(&owner).unwrap();
                if dealing.outputs_received.contains_key(&from) {
                    return Err(RefereeError::Duplicate);
                }
                dealing.outputs_received.insert(from, (output.clone(), sig));
                let expected = dealing.expected_output(from);
                let sig_ok = self
                    .directory
                    .get(&from)
                    .is_some_and(|vk| crypto::verify_signature(vk, &output.signing_bytes(), &sig));
                if !sig_ok {
                    self.mark(from, VerdictKind::BadSeal, "output report signature".into());
                } else if expected.as_ref().is_some_and(|e| *e != output) {
                    self.mark(
                        from,
                        VerdictKind::InconsistentReport,
                        "reported output is off the dealt share".into(),
                    );
                }
                let pending = self.dealings.get_mut(&owner).unwrap().awaiting_resend.remove(&from);
                match pending {
                    Some((p, s)) => Ok(self.case_two(owner, from, &p, &s)),
                    None => Ok(vec![]),
                }
            }
            Body::Report { sealed } => {
                let dealing = self.dealings.get(&from).ok_or(RefereeError::NotParticipating(from))?;
                if dealing.reports.contains_key(&from) {
                    return Err(RefereeError::Duplicate);
                }
                let pt = crypto::open_with_aad(&key, &msg.header(), sealed).map_err(|_| RefereeError::BadSeal)?;
                let report = ReportBody::decode(&pt).map_err(|_| RefereeError::Malformed)?;
                self.dealings.get_mut(&from).unwrap().reports.insert(from, report.clone());
                Ok(self.arbitrate_failure(from, &report))
            }
            _ => Err(RefereeError::Malformed),
        }
    }

    /// Verification model for one owner report. Case 2 entries are handled
    /// before case 1.
    pub fn arbitrate_failure(&mut self, owner: PlayerId, report: &ReportBody) -> Vec<Action> {
        let mut actions = Vec::new();
        let mut case_one = Vec::new();
        let mut flagged = false;
        for e in &report.entries {
            match (e.status, &e.evidence) {
                (EntryStatus::BadPacket, Some((point, sig))) => {
                    flagged = true;
                    actions.extend(self.case_two(owner, e.sender, point, sig));
                }
                (EntryStatus::BadPacket, None) | (EntryStatus::Missing, _) => {
                    flagged = true;
                    case_one.push(e.sender);
                }
                (EntryStatus::Received, _) => {}
            }
        }
        for holder in case_one {
            actions.extend(self.case_one(owner, holder));
        }
        if !report.restored && !flagged {
            // Nobody singled out: compare each piece of evidence to the holder's own report.
            let mut resolved = false;
            for e in &report.entries {
                if let Some((point, sig)) = &e.evidence {
                    let differs = self.dealings[&owner]
                        .outputs_received
                        .get(&e.sender)
                        .is_some_and(|(o, _)| wire::encode_output(o) != *point);
                    if differs {
                        resolved = true;
                        actions.extend(self.case_two(owner, e.sender, point, sig));
                    }
                }
            }
            if !resolved {
                let holders: Vec<_> = self.dealings[&owner].player_holders().filter(|h| *h != owner).collect();
                for h in holders {
                    let d = self.dealings.get_mut(&owner).unwrap();
                    if d.resend_requested.insert(h) {
                        self.round_actions.push(VerdictAction::RequestResend { holder: h });
                        actions.extend(self.control(
                            h,
                            Body::Notify {
                                reason: NotifyReason::Resend,
                                subject: h,
                                mac: MacTag([0; 32]),
                            },
                        ));
                    }
                }
            }
        }
        actions
    }

    /// No usable message from `holder` reached the owner.
    fn case_one(&mut self, owner: PlayerId, holder: PlayerId) -> Vec<Action> {
        let dealing = &self.dealings[&owner];
        if dealing.corrected.contains(&holder) {
            return vec![];
        }
        let Some(expected) = dealing.expected_output(holder) else {
            return vec![];
        };
        let reported = dealing.outputs_received.get(&holder).map(|(o, _)| o.clone());
        let mut actions = Vec::new();
        let (kind, point) = match reported {
            Some(o) if o == expected => {
                self.round_actions.push(VerdictAction::Forward { owner, holder });
                (CorrectionKind::Forwarded, wire::encode_output(&o))
            }
            Some(_) => {
                self.round_actions.push(VerdictAction::Correct { owner, holder });
                (CorrectionKind::Corrected, wire::encode_output(&expected))
            }
            None => {
                self.round_actions.push(VerdictAction::DeadReckon { owner, holder });
                let avatar = self
                    .last_output
                    .get(&holder)
                    .cloned()
                    .or_else(|| self.known_state.get(&holder).cloned())
                    .unwrap_or_else(FieldElement::zero);
                self.events.push(RefereeEvent::DeadReckoned {
                    round: self.clock.current_round,
                    player: holder,
                    avatar: avatar.to_string(),
                });
                actions.extend(self.control(
                    holder,
                    Body::Notify {
                        reason: NotifyReason::NotReceived,
                        subject: holder,
                        mac: MacTag([0; 32]),
                    },
                ));
                (CorrectionKind::DeadReckoned, wire::encode_output(&expected))
            }
        };
        actions.extend(self.send_correction(owner, holder, kind, point));
        actions
    }

    /// The owner holds a signed packet from `holder` it could not use.
    fn case_two(&mut self, owner: PlayerId, holder: PlayerId, point: &[u8; POINT_LEN], sig: &Signature) -> Vec<Action> {
        let dealing = &self.dealings[&owner];
        let round = dealing.round;
        let Some((reported, _)) = dealing.outputs_received.get(&holder).cloned() else {
            let d = self.dealings.get_mut(&owner).unwrap();
            if d.resend_requested.insert(holder) {
                d.awaiting_resend.insert(holder, (*point, *sig));
                self.round_actions.push(VerdictAction::RequestResend { holder });
                return self
                    .control(
                        holder,
                        Body::Notify {
                            reason: NotifyReason::Resend,
                            subject: holder,
                            mac: MacTag([0; 32]),
                        },
                    )
                    .into_iter()
                    .collect();
            }
            return self.case_one(owner, holder);
        };
        let delivered = wire::decode_output(point, holder, round).ok();
        let signed_delivered = delivered.as_ref().is_some_and(|o| {
            self.directory
                .get(&holder)
                .is_some_and(|vk| crypto::verify_signature(vk, &o.signing_bytes(), sig))
        });
        if wire::encode_output(&reported) != *point {
            self.mark(
                holder,
                VerdictKind::ForgedOutput,
                format!("owner {owner} received a different output; signature over it valid: {signed_delivered}"),
            );
            let expected = self.dealings[&owner].expected_output(holder).unwrap_or(reported);
            self.round_actions.push(VerdictAction::Correct { owner, holder });
            self.send_correction(owner, holder, CorrectionKind::Corrected, wire::encode_output(&expected))
        } else {
            self.mark(owner, VerdictKind::WrongAccusation, format!("{holder} is wrongly accused"));
            vec![]
        }
    }

    fn send_correction(
        &mut self,
        owner: PlayerId,
        holder: PlayerId,
        kind: CorrectionKind,
        point: [u8; POINT_LEN],
    ) -> Vec<Action> {
        let Ok(key) = self.key(owner).cloned() else {
            return vec![];
        };
        let d = self.dealings.get_mut(&owner).unwrap();
        if !d.corrected.insert(holder) {
            return vec![];
        }
        let round = d.round;
        let header = wire::header_bytes(MessageType::Correction, PlayerId::REFEREE, round);
        let body = CorrectionBody { holder, kind, point };
        let sealed = crypto::seal_with_aad(&key, &header, &body.encode(), &mut self.rng);
        vec![Action::send(
            owner,
            ProtocolMessage::new(PlayerId::REFEREE, round, Body::Correction { sealed }),
        )]
    }

    /// Store → ack → disconnect → broadcast, shared by both leaving models.
    pub fn handle_leave(&mut self, now: SimTime, player: PlayerId, reason: RemovalReason) -> Vec<Action> {
        if self.leaving.contains_key(&player) || self.departed.contains_key(&player) || !self.online.contains(&player)
        {
            return vec![];
        }
        self.leaving.insert(player, reason);
        self.events.push(RefereeEvent::LeaveStarted {
            player,
            reason,
            at: now,
        });
        let state = self.known_state.get(&player).cloned().unwrap_or_else(FieldElement::zero);
        let Ok(key) = self.key(player).cloned() else {
            return vec![];
        };
        let sealed_state = server::seal_state(&key, player, &state, &mut self.rng);
        let msg = ProtocolMessage::new(
            PlayerId::REFEREE,
            self.clock.current_round,
            Body::StoreState {
                player,
                sealed_state,
                offline: true,
                mac: MacTag([0; 32]),
            },
        )
        .with_control_mac(&self.backend_key);
        vec![Action::send(PlayerId::SERVER, msg)]
    }

    fn finish_leave(&mut self, now: SimTime, player: PlayerId) -> Vec<Action> {
        let Some(reason) = self.leaving.remove(&player) else {
            return vec![];
        };
        let mut actions = Vec::new();
        for p in self.online.clone() {
            actions.extend(self.control(
                p,
                Body::Remove {
                    player,
                    reason,
                    mac: MacTag([0; 32]),
                },
            ));
        }
        self.online.remove(&player);
        self.aoi.remove(player);
        self.departed.insert(player, reason);
        self.events.push(RefereeEvent::Departed {
            player,
            reason,
            at: now,
        });
        actions
    }

    fn eligible(&self) -> BTreeSet<PlayerId> {
        self.online
            .iter()
            .copied()
            .filter(|p| !self.leaving.contains_key(p) && self.aoi.positions.contains_key(p))
            .collect()
    }

    fn open_round(&mut self, now: SimTime, round: RoundIndex) -> Vec<Action> {
        self.clock.current_round = round;
        self.clock.opened_at = now;
        self.round_samples.clear();
        self.round_verdicts.clear();
        self.round_actions.clear();
        self.round_dropped = 0;
        self.dealings.clear();

        let eligible = self.eligible();
        let mut groups_now = Vec::new();
        let mut opens: BTreeMap<PlayerId, Body> = BTreeMap::new();
        for group in self.aoi.groups(&eligible) {
            let members: Vec<_> = group.iter().copied().collect();
            let owner = match self
                .previous_groups
                .iter()
                .find(|(g, o)| *g == group && group.contains(o))
            {
                Some((_, o)) => *o,
                None => {
                    let o = self.select_secret_owner(&members);
                    self.events.push(RefereeEvent::OwnerSelected {
                        round,
                        owner: o,
                        group: members.clone(),
                    });
                    o
                }
            };
            groups_now.push((group.clone(), owner));
            let mut holders = vec![owner];
            holders.extend(self.aoi.neighbours(owner).into_iter().filter(|p| group.contains(p)));
            let player_holders = holders.len();
            if player_holders == 2 {
                holders.push(PlayerId::REFEREE);
            }
            let k = sharing::threshold_policy(player_holders, self.config.fault_tolerance);
            let event = RoundEvent::random(&mut self.rng);
            for &m in &members {
                let body = if holders.contains(&m) {
                    Body::RoundOpen {
                        d_ms: self.clock.d,
                        event_a: event.a().clone(),
                        event_b: event.b().clone(),
                        owner,
                        k: k as u8,
                        holders: holders.clone(),
                        mac: MacTag([0; 32]),
                    }
                } else {
                    idle_open(self.clock.d)
                };
                opens.insert(m, body);
            }
            self.dealings.insert(
                owner,
                DealingRecord {
                    owner,
                    holders,
                    k,
                    round,
                    event,
                    request: None,
                    shares_issued: Vec::new(),
                    holder_requests: BTreeMap::new(),
                    dealt: BTreeSet::new(),
                    outputs_received: BTreeMap::new(),
                    reports: BTreeMap::new(),
                    referee_output: None,
                    corrected: BTreeSet::new(),
                    resend_requested: BTreeSet::new(),
                    awaiting_resend: BTreeMap::new(),
                },
            );
        }
        self.previous_groups = groups_now;
        let mut actions = Vec::new();
        for p in self.online.clone() {
            if self.leaving.contains_key(&p) {
                continue;
            }
            let body = opens.remove(&p).unwrap_or_else(|| idle_open(self.clock.d));
            actions.extend(self.control(p, body));
        }
        actions.push(Action::SetTimer {
            at: now + self.clock.d as SimTime,
            timer: Timer::CloseRound(round),
        });
        actions
    }

    /// Closes the current round, applies the ledger and opens the next one.
    pub fn tick_round(&mut self, now: SimTime) -> Vec<Action> {
        let round = self.clock.current_round;
        let mut actions = Vec::new();
        let mut participants = BTreeSet::new();
        let mut missing = BTreeSet::new();
        let mut share_audit = ShareAudit::default();
        let mut dealing_audit = Vec::new();

        let owners: Vec<_> = self.dealings.keys().copied().collect();
        for owner in owners {
            // Case-2 packets still waiting for a re-send degrade to case 1.
            let pending: Vec<_> = self.dealings[&owner].awaiting_resend.keys().copied().collect();
            for h in pending {
                self.dealings.get_mut(&owner).unwrap().awaiting_resend.remove(&h);
                actions.extend(self.case_one(owner, h));
            }
            let d = &self.dealings[&owner];
            let report = d.reports.get(&owner);
            for h in d.player_holders() {
                if self.departed.contains_key(&h) || self.leaving.contains_key(&h) {
                    continue;
                }
                participants.insert(h);
                let silent = if h == owner {
                    d.request.is_none() || report.is_none()
                } else {
                    !d.outputs_received.contains_key(&h)
                };
                if silent {
                    missing.insert(h);
                }
            }
            for s in &d.shares_issued {
                share_audit.issued += 1;
                let consumed = if s.holder == owner {
                    report.is_some_and(|r| r.own_output.is_some())
                } else if s.holder == PlayerId::REFEREE {
                    true
                } else {
                    d.outputs_received.contains_key(&s.holder)
                        || report.is_some_and(|r| {
                            r.entries
                                .iter()
                                .any(|e| e.sender == s.holder && e.status == EntryStatus::Received)
                        })
                };
                if d.corrected.contains(&s.holder) {
                    share_audit.arbitrated += 1;
                } else if consumed {
                    share_audit.consumed += 1;
                } else {
                    share_audit.expired += 1;
                }
            }
            for (h, (o, _)) in &d.outputs_received {
                self.last_output.insert(*h, o.y.clone());
            }
            dealing_audit.push(DealingAudit {
                owner,
                holders: d.holders.clone(),
                k: d.k,
                referee_holds_share: d.holders.contains(&PlayerId::REFEREE),
                event_a: d.event.a().to_string(),
                event_b: d.event.b().to_string(),
                dealt: !d.shares_issued.is_empty(),
                owner_reported: report.is_some(),
                restored_claim: report.map(|r| r.restored),
            });
        }
        let dishonest: BTreeSet<_> = self.round_verdicts.iter().map(|v| v.subject).collect();
        participants.extend(dishonest.iter().copied().filter(|p| p.is_player()));
        let removals = self.ledger.close_round(&participants, &missing, &dishonest);
        for (p, reason) in &removals {
            actions.extend(self.handle_leave(now, *p, *reason));
        }
        let counters = participants.iter().map(|p| (*p, self.ledger.counters(*p))).collect();

        let d_used = self.clock.d;
        self.clock
            .adapt(&self.round_samples, self.config.hop_factor, self.config.d_min_ms);
        self.audit.push(RoundAudit {
            round,
            d_ms: d_used,
            opened_at: self.clock.opened_at,
            closed_at: now,
            dealings: dealing_audit,
            verdicts: std::mem::take(&mut self.round_verdicts),
            actions: std::mem::take(&mut self.round_actions),
            counters,
            missing: missing.into_iter().collect(),
            removals,
            share_audit,
            dropped: self.round_dropped,
        });

        if round < self.config.rounds {
            actions.extend(self.open_round(now, round + 1));
        } else {
            self.finished = true;
            self.dealings.clear();
            self.clock.current_round = round + 1;
        }
        actions
    }

    pub fn on_timer(&mut self, now: SimTime, timer: Timer) -> Vec<Action> {
        match timer {
            Timer::CloseRound(r) if r == self.clock.current_round && !self.finished => self.tick_round(now),
            _ => vec![],
        }
    }

    fn drop_msg(&mut self, msg: &ProtocolMessage, reason: String) {
        self.round_dropped += 1;
        self.events.push(RefereeEvent::Dropped {
            round: self.clock.current_round,
            from: msg.sender,
            msg: msg.message_type(),
            reason,
        });
    }

    pub fn handle(&mut self, now: SimTime, env: &Envelope) -> Vec<Action> {
        let msg = &env.msg;
        let from = msg.sender;
        if from.is_player() {
            if let Some(reason) = self.departed.get(&from) {
                let reason = format!("{} ({reason:?})", RefereeError::Departed(from));
                self.drop_msg(msg, reason);
                return vec![];
            }
            if self.online.contains(&from) {
                let lat = now.saturating_sub(env.sent_at);
                let s = self.latency.entry(from).or_default();
                s.sum += lat;
                s.count += 1;
                if msg.round == self.clock.current_round && !self.finished {
                    self.round_samples.push(lat);
                }
            }
        }
        match self.dispatch(now, msg) {
            Ok(actions) => actions,
            Err(e) => {
                self.drop_msg(msg, e.to_string());
                vec![]
            }
        }
    }

    fn dispatch(&mut self, now: SimTime, msg: &ProtocolMessage) -> Result<Vec<Action>, RefereeError> {
        let from = msg.sender;
        match &msg.body {
            Body::StateTransfer {
                player, sealed_state, ..
            } => {
                if from != PlayerId::SERVER || !msg.verify_control_mac(&self.backend_key) {
                    return Err(RefereeError::BadMac);
                }
                let key = self.key(*player)?;
                let state = server::open_state(key, *player, sealed_state).ok_or(RefereeError::BadSeal)?;
                self.known_state.insert(*player, state);
                self.departed.remove(player);
                self.online.insert(*player);
                self.events.push(RefereeEvent::Joined {
                    player: *player,
                    at: now,
                });
                let others: Vec<_> = self.online.iter().copied().filter(|p| p != player).collect();
                Ok(others
                    .into_iter()
                    .filter_map(|p| {
                        self.control(
                            p,
                            Body::Announce {
                                player: *player,
                                mac: MacTag([0; 32]),
                            },
                        )
                    })
                    .collect())
            }
            Body::LeaveAck { player, .. } => {
                if from != PlayerId::SERVER || !msg.verify_control_mac(&self.backend_key) {
                    return Err(RefereeError::BadMac);
                }
                Ok(self.finish_leave(now, *player))
            }
            _ if !self.online.contains(&from) => Err(RefereeError::UnknownPlayer(from)),
            Body::AoiPos { position, .. } => {
                if !msg.verify_control_mac(self.key(from)?) {
                    return Err(RefereeError::BadMac);
                }
                self.update_aoi(from, *position)
            }
            Body::Leave { .. } => {
                if !msg.verify_control_mac(self.key(from)?) {
                    return Err(RefereeError::BadMac);
                }
                Ok(self.handle_leave(now, from, RemovalReason::Left))
            }
            Body::KeyEstablish { .. } => match self.establish_session_key(msg) {
                Ok((m3, m4, a)) => Ok(vec![Action::send(a, m3), Action::send(from, m4)]),
                Err(RefereeError::BadMac) => {
                    self.mark(from, VerdictKind::BadMac, "M2".into());
                    Err(RefereeError::BadMac)
                }
                Err(e) => Err(e),
            },
            Body::StateSubmit { .. } => self.deal_shares(msg),
            Body::HolderRequest { .. } => self.accept_holder_request(msg),
            Body::OutputReport { .. } | Body::Report { .. } => self.ingest_round_report(msg),
            _ => Err(RefereeError::Malformed),
        }
    }
}

fn idle_open(d: u32) -> Body {
    Body::RoundOpen {
        d_ms: d,
        event_a: FieldElement::one(),
        event_b: FieldElement::zero(),
        owner: PlayerId::UNASSIGNED,
        k: 0,
        holders: vec![],
        mac: MacTag([0; 32]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;

    fn p(i: u32) -> PlayerId {
        PlayerId(i)
    }

    #[test]
    fn aoi_radius_is_inclusive() {
        let mut aoi = AoiModel::new(10);
        aoi.update(p(2), 100);
        let (formed, _) = aoi.update(p(3), 105);
        assert_eq!(formed, vec![(p(2), p(3))]);
        let (formed, _) = aoi.update(p(4), 150);
        assert!(formed.is_empty());
        let (formed, _) = aoi.update(p(4), 115);
        assert_eq!(formed, vec![(p(3), p(4))]);
    }

    #[test]
    fn moving_apart_breaks_the_pair_once() {
        let mut aoi = AoiModel::new(10);
        aoi.update(p(2), 100);
        aoi.update(p(3), 105);
        let (_, broken) = aoi.update(p(3), 200);
        assert_eq!(broken, vec![(p(2), p(3))]);
        let (_, broken) = aoi.update(p(3), 300);
        assert!(broken.is_empty());
    }

    #[test]
    fn groups_are_connected_components() {
        let mut aoi = AoiModel::new(10);
        for (id, pos) in [(2, 0), (3, 8), (4, 16), (5, 100), (6, 500), (7, 505)] {
            aoi.update(p(id), pos);
        }
        let all: BTreeSet<_> = (2..=7).map(p).collect();
        let groups = aoi.groups(&all);
        assert_eq!(groups.len(), 2);
        assert_eq!(groups[0], [2, 3, 4].map(p).into_iter().collect());
        assert_eq!(groups[1], [6, 7].map(p).into_iter().collect());
    }

    #[test]
    fn ledger_counts_consecutive_rounds() {
        let mut l = SuspicionLedger::new(3, 3);
        let all: BTreeSet<_> = [p(2), p(3)].into();
        let none = BTreeSet::new();
        let cheat: BTreeSet<_> = [p(3)].into();
        assert!(l.close_round(&all, &none, &cheat).is_empty());
        assert!(l.close_round(&all, &none, &cheat).is_empty());
        assert!(l.close_round(&all, &none, &none).is_empty());
        assert_eq!(l.counters(p(3)), (0, 0));
        l.close_round(&all, &none, &cheat);
        l.close_round(&all, &none, &cheat);
        assert_eq!(l.close_round(&all, &none, &cheat), vec![(p(3), RemovalReason::Cheating)]);
    }

    #[test]
    fn ledger_disconnects_at_threshold() {
        let mut l = SuspicionLedger::new(3, 3);
        let all: BTreeSet<_> = [p(2)].into();
        let gone: BTreeSet<_> = [p(2)].into();
        let none = BTreeSet::new();
        assert!(l.close_round(&all, &gone, &none).is_empty());
        assert!(l.close_round(&all, &gone, &none).is_empty());
        assert_eq!(l.close_round(&all, &gone, &none), vec![(p(2), RemovalReason::Disconnected)]);
    }

    #[test]
    fn percentile_uses_nearest_rank() {
        assert_eq!(percentile_95(&[]), None);
        assert_eq!(percentile_95(&[7]), Some(7));
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(percentile_95(&v), Some(95));
        let v: Vec<u64> = (1..=10).collect();
        assert_eq!(percentile_95(&v), Some(10));
    }

    #[test]
    fn d_stays_within_bounds() {
        let mut c = RoundClock {
            d: 500,
            d_max: 500,
            current_round: 1,
            opened_at: 0,
        };
        c.adapt(&[1000], 6, 10);
        assert_eq!(c.d, 500);
        c.adapt(&[0, 0, 0], 6, 10);
        assert_eq!(c.d, 10);
        c.adapt(&[20, 20], 6, 10);
        assert_eq!(c.d, 240);
        c.adapt(&[], 6, 10);
        assert_eq!(c.d, 240);
    }

    fn referee() -> Referee {
        let keys = (2..6).map(|i| (p(i), SymmetricKey([i as u8; 32]))).collect();
        Referee::new(
            RefereeConfig::default(),
            keys,
            SymmetricKey([1; 32]),
            BTreeMap::new(),
            seeded_rng(5),
        )
    }

    #[test]
    fn owner_is_lowest_latency_then_lowest_id() {
        let mut r = referee();
        r.latency.insert(p(2), LatencyStats { sum: 50, count: 1 });
        r.latency.insert(p(3), LatencyStats { sum: 20, count: 1 });
        assert_eq!(r.select_secret_owner(&[p(2), p(3)]), p(3));
        r.latency.insert(p(3), LatencyStats { sum: 50, count: 1 });
        assert_eq!(r.select_secret_owner(&[p(3), p(2)]), p(2));
    }

    #[test]
    fn aoi_update_requires_online_player() {
        let mut r = referee();
        assert_eq!(r.update_aoi(p(2), 0).unwrap_err(), RefereeError::UnknownPlayer(p(2)));
    }
}
