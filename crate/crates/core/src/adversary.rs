//! Scripted cheat strategies and a symbolic (Dolev-Yao) intruder.
//!
//! Strategies run inside a cheater's own transport: the cheater holds its
//! legitimate keys and rewrites, drops, delays or leaks its outbound frames.

use crate::actor::SimTime;
use crate::crypto::{self, SimRng, SymmetricKey};
use crate::field::{FieldElement, PrimeField};
use crate::ids::{PlayerId, RoundIndex};
use crate::player::{reseal_peer_output, PlayerSession};
use crate::server;
use crate::sharing::{self, RoundEvent};
use crate::wire::{self, Body, EntryStatus, MessageType, ProtocolMessage, ReportBody, POINT_LEN};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CheatKind {
    /// Rewrites the output sent to the owner to `y + 1`, leaving the signature stale.
    ForgeOutput,
    /// Reports `y + 1` to the referee (validly re-signed) while the owner gets the real output.
    Inconsistency,
    /// Drops every round frame for `count` rounds, then behaves.
    SuppressUpdates { count: u32 },
    /// Holds every outbound frame for `ms`.
    FixedDelay { ms: SimTime },
    /// Leaks the cheater's output plaintext to `partner` off-protocol.
    Collude { partner: PlayerId },
    /// As owner, flags an honest holder's valid output as a bad packet.
    FalseAccuse,
}

impl CheatKind {
    pub fn name(&self) -> &'static str {
        match self {
            CheatKind::ForgeOutput => "forge_output",
            CheatKind::Inconsistency => "inconsistency",
            CheatKind::SuppressUpdates { .. } => "suppress_updates",
            CheatKind::FixedDelay { .. } => "fixed_delay",
            CheatKind::Collude { .. } => "collude",
            CheatKind::FalseAccuse => "false_accuse",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheatStrategy {
    #[serde(flatten)]
    pub kind: CheatKind,
    #[serde(default = "first_round")]
    pub from_round: RoundIndex,
    #[serde(default)]
    pub to_round: Option<RoundIndex>,
}

fn first_round() -> RoundIndex {
    1
}

impl CheatStrategy {
    pub fn new(kind: CheatKind) -> Self {
        Self {
            kind,
            from_round: 1,
            to_round: None,
        }
    }

    pub fn active(&self, round: RoundIndex) -> bool {
        if round < self.from_round {
            return false;
        }
        match self.kind {
            CheatKind::SuppressUpdates { count } => round < self.from_round + count,
            _ => self.to_round.is_none_or(|to| round <= to),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportAction {
    Forward,
    Modify(ProtocolMessage),
    Drop,
    Delay(SimTime),
    /// Forward unchanged and hand `payload` to `partner` over a side channel.
    DuplicateTo { partner: PlayerId, payload: Vec<u8> },
}

/// Frames that carry round data, as opposed to joins, AoI and key agreement.
fn is_round_frame(ty: MessageType) -> bool {
    matches!(
        ty,
        MessageType::M5
            | MessageType::M6
            | MessageType::M9
            | MessageType::OutputSig
            | MessageType::OutputReport
            | MessageType::Report
    )
}

fn bump(point: &[u8; POINT_LEN]) -> Option<[u8; POINT_LEN]> {
    let (x, y) = wire::decode_point(point).ok()?;
    Some(wire::encode_point(&x, &y.add(&FieldElement::one())))
}

pub fn apply_strategy(
    strategy: &CheatStrategy,
    cheater: &PlayerSession,
    rng: &mut SimRng,
    to: PlayerId,
    msg: &ProtocolMessage,
) -> TransportAction {
    if msg.sender != cheater.id || !strategy.active(msg.round) {
        return TransportAction::Forward;
    }
    let header = msg.header();
    match &strategy.kind {
        CheatKind::ForgeOutput => {
            let Body::HolderOutput { sealed_output, .. } = &msg.body else {
                return TransportAction::Forward;
            };
            let Some(session) = cheater.session_keys.get(&to) else {
                return TransportAction::Forward;
            };
            let forged = crypto::open_with_aad(&session.key, &header, sealed_output)
                .ok()
                .and_then(|pt| <[u8; POINT_LEN]>::try_from(pt.as_slice()).ok())
                .and_then(|p| bump(&p));
            match forged {
                Some(p) => {
                    let (sealed_output, mac) = reseal_peer_output(session, &header, &p, rng);
                    TransportAction::Modify(ProtocolMessage::new(
                        msg.sender,
                        msg.round,
                        Body::HolderOutput { sealed_output, mac },
                    ))
                }
                None => TransportAction::Forward,
            }
        }
        CheatKind::Inconsistency => {
            let Body::OutputReport { sealed } = &msg.body else {
                return TransportAction::Forward;
            };
            let key = cheater.long_term_key();
            let Some((point, _)) = crypto::open_with_aad(key, &header, sealed)
                .ok()
                .and_then(|pt| wire::decode_signed_output(&pt).ok())
            else {
                return TransportAction::Forward;
            };
            let Some(forged) = bump(&point) else {
                return TransportAction::Forward;
            };
            let Ok(output) = wire::decode_output(&forged, cheater.id, msg.round) else {
                return TransportAction::Forward;
            };
            let sig = cheater.keypair().sign(&output.signing_bytes());
            let sealed = crypto::seal_with_aad(key, &header, &wire::encode_signed_output(&forged, &sig), rng);
            TransportAction::Modify(ProtocolMessage::new(msg.sender, msg.round, Body::OutputReport { sealed }))
        }
        CheatKind::SuppressUpdates { .. } => {
            if is_round_frame(msg.message_type()) {
                TransportAction::Drop
            } else {
                TransportAction::Forward
            }
        }
        CheatKind::FixedDelay { ms } => TransportAction::Delay(*ms),
        CheatKind::Collude { partner } => {
            let Body::OutputReport { sealed } = &msg.body else {
                return TransportAction::Forward;
            };
            match crypto::open_with_aad(cheater.long_term_key(), &header, sealed)
                .ok()
                .and_then(|pt| wire::decode_signed_output(&pt).ok())
            {
                Some((point, _)) => TransportAction::DuplicateTo {
                    partner: *partner,
                    payload: point.to_vec(),
                },
                None => TransportAction::Forward,
            }
        }
        CheatKind::FalseAccuse => {
            let Body::Report { sealed } = &msg.body else {
                return TransportAction::Forward;
            };
            let key = cheater.long_term_key();
            let Some(mut report) = crypto::open_with_aad(key, &header, sealed)
                .ok()
                .and_then(|pt| ReportBody::decode(&pt).ok())
            else {
                return TransportAction::Forward;
            };
            let Some(victim) = report
                .entries
                .iter_mut()
                .find(|e| e.status == EntryStatus::Received && e.evidence.is_some())
            else {
                return TransportAction::Forward;
            };
            victim.status = EntryStatus::BadPacket;
            let sealed = crypto::seal_with_aad(key, &header, &report.encode(), rng);
            TransportAction::Modify(ProtocolMessage::new(msg.sender, msg.round, Body::Report { sealed }))
        }
    }
}

/// What a point on a sharing polynomial is a point of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum PointKind {
    /// Dealt share on the owner's polynomial (constant term X_A).
    Share,
    /// Post-event output (constant term `a·X_A + b`).
    Output,
}

/// Largest point group the intruder interpolates exhaustively.
const MAX_GROUP: usize = 12;

/// Term-level Dolev-Yao knowledge. Cryptography is ideal: a sealed field
/// opens only under a known key, MACs and signatures are opaque.
#[derive(Debug, Clone, Default)]
pub struct IntruderKnowledge {
    pub known_keys: Vec<SymmetricKey>,
    frames: Vec<ProtocolMessage>,
    opaque: Vec<Vec<u8>>,
    terms: BTreeSet<Vec<u8>>,
    points: BTreeMap<(RoundIndex, PointKind), BTreeSet<[u8; POINT_LEN]>>,
    events: BTreeMap<RoundIndex, RoundEvent>,
}

impl IntruderKnowledge {
    pub fn new(compromised: impl IntoIterator<Item = SymmetricKey>) -> Self {
        let mut k = Self::default();
        for key in compromised {
            k.learn_key(key);
        }
        k
    }

    fn learn_key(&mut self, key: SymmetricKey) -> bool {
        if self.known_keys.contains(&key) {
            return false;
        }
        self.terms.insert(key.as_bytes().to_vec());
        self.known_keys.push(key);
        true
    }

    fn learn(&mut self, term: &[u8]) {
        self.terms.insert(term.to_vec());
    }

    fn learn_field(&mut self, v: &FieldElement) {
        self.learn(&v.to_bytes());
    }

    pub fn learn_point(&mut self, round: RoundIndex, kind: PointKind, point: [u8; POINT_LEN]) {
        self.learn(&point);
        if let Ok((_, y)) = wire::decode_point(&point) {
            self.learn_field(&y);
        }
        self.points.entry((round, kind)).or_default().insert(point);
    }

    pub fn learn_event(&mut self, round: RoundIndex, event: RoundEvent) {
        self.learn_field(event.a());
        self.learn_field(event.b());
        self.events.insert(round, event);
    }

    /// Observes one frame from any channel and re-closes the knowledge set.
    pub fn absorb(&mut self, bytes: &[u8]) {
        self.learn(bytes);
        match wire::deserialize(bytes) {
            Ok(msg) => {
                self.learn_plain_fields(&msg);
                self.frames.push(msg);
            }
            Err(_) => self.opaque.push(bytes.to_vec()),
        }
        self.close();
    }

    fn learn_plain_fields(&mut self, msg: &ProtocolMessage) {
        self.learn(&msg.header());
        match &msg.body {
            Body::KeyRequest { nonce_a, .. } => self.learn(&nonce_a.0),
            Body::KeyEstablish { nonce_a, nonce_b, .. } => {
                self.learn(&nonce_a.0);
                self.learn(&nonce_b.0);
            }
            Body::StateSubmit { request, .. } | Body::HolderRequest { request, .. } => self.learn(&request.0),
            Body::RoundOpen { event_a, event_b, .. } => {
                if let Ok(e) = RoundEvent::new(event_a.clone(), event_b.clone()) {
                    self.learn_event(msg.round, e);
                }
            }
            _ => {}
        }
        for ct in sealed_fields(&msg.body) {
            self.learn(&ct.to_bytes());
        }
    }

    /// Opens everything openable, learning new keys until nothing changes,
    /// then applies the interpolation rule.
    fn close(&mut self) {
        loop {
            let mut new_key = false;
            for i in 0..self.frames.len() {
                let msg = self.frames[i].clone();
                new_key |= self.open_frame(&msg);
            }
            if !new_key {
                break;
            }
        }
        self.interpolate();
    }

    fn try_open(&self, aad: &[u8], ct: &crypto::Ciphertext) -> Option<Vec<u8>> {
        self.known_keys
            .iter()
            .find_map(|k| crypto::open_with_aad(k, aad, ct).ok())
    }

    fn open_frame(&mut self, msg: &ProtocolMessage) -> bool {
        let header = msg.header();
        let round = msg.round;
        let mut new_key = false;
        match &msg.body {
            Body::SessionKeyForInitiator { sealed_key, .. } | Body::SessionKeyForResponder { sealed_key, .. } => {
                if let Some(pt) = self.try_open(&header, sealed_key) {
                    if let Ok(k) = SymmetricKey::from_slice(&pt) {
                        new_key = self.learn_key(k);
                    }
                }
            }
            Body::StateSubmit { sealed_state, .. } => {
                if let Some(pt) = self.try_open(&header, sealed_state) {
                    self.learn(&pt);
                    if let Ok((req, state)) = wire::decode_state_submission(&pt) {
                        self.learn(&req.0);
                        self.learn_field(&state);
                    }
                }
            }
            Body::OwnerDeal {
                sealed_share,
                sealed_referee_output,
                ..
            } => {
                if let Some(p) = self.try_open(&header, sealed_share).and_then(as_point) {
                    self.learn_point(round, PointKind::Share, p);
                }
                if let Some(ct) = sealed_referee_output {
                    if let Some(p) = self.try_open(&header, ct).and_then(as_point) {
                        self.learn_point(round, PointKind::Output, p);
                    }
                }
            }
            Body::HolderDeal { sealed_share, .. } => {
                if let Some(p) = self.try_open(&header, sealed_share).and_then(as_point) {
                    self.learn_point(round, PointKind::Share, p);
                }
            }
            Body::HolderOutput { sealed_output, .. } => {
                if let Some(p) = self.try_open(&header, sealed_output).and_then(as_point) {
                    self.learn_point(round, PointKind::Output, p);
                }
            }
            Body::OutputSignature { sealed_signature, .. } => {
                if let Some(pt) = self.try_open(&header, sealed_signature) {
                    self.learn(&pt);
                }
            }
            Body::OutputReport { sealed } => {
                if let Some(pt) = self.try_open(&header, sealed) {
                    self.learn(&pt);
                    if let Ok((p, _)) = wire::decode_signed_output(&pt) {
                        self.learn_point(round, PointKind::Output, p);
                    }
                }
            }
            Body::Report { sealed } => {
                if let Some(pt) = self.try_open(&header, sealed) {
                    self.learn(&pt);
                    if let Ok(r) = ReportBody::decode(&pt) {
                        if let Some(p) = r.own_output {
                            self.learn_point(round, PointKind::Output, p);
                        }
                        for (p, _) in r.entries.iter().filter_map(|e| e.evidence) {
                            self.learn_point(round, PointKind::Output, p);
                        }
                    }
                }
            }
            Body::Correction { sealed } => {
                if let Some(pt) = self.try_open(&header, sealed) {
                    self.learn(&pt);
                    if let Ok(c) = wire::CorrectionBody::decode(&pt) {
                        self.learn_point(round, PointKind::Output, c.point);
                    }
                }
            }
            Body::JoinAck { id, sealed_state } => self.open_stored(*id, sealed_state),
            Body::StateTransfer {
                player, sealed_state, ..
            }
            | Body::StoreState {
                player, sealed_state, ..
            } => self.open_stored(*player, sealed_state),
            _ => {}
        }
        new_key
    }

    fn open_stored(&mut self, player: PlayerId, sealed: &crypto::Ciphertext) {
        if let Some(pt) = self.try_open(&server::stored_state_aad(player), sealed) {
            self.learn(&pt);
            if let Ok(s) = wire::decode_state(&pt) {
                self.learn_field(&s);
            }
        }
    }

    /// Lagrange rule: every subset of ≥ 2 same-round, same-kind points
    /// yields a candidate constant term; with the round event known,
    /// output constants are also inverted back to the pre-event state.
    pub fn interpolate(&mut self) {
        let mut derived = Vec::new();
        for ((round, kind), pts) in &self.points {
            let decoded: Vec<(FieldElement, FieldElement)> =
                pts.iter().filter_map(|p| wire::decode_point(p).ok()).collect();
            let n = decoded.len().min(MAX_GROUP);
            for size in 2..=n {
                for subset in sharing::k_subsets(n, size) {
                    let sel: Vec<_> = subset.iter().map(|&i| decoded[i].clone()).collect();
                    let Ok(c) = sharing::interpolate_at(&sel, &FieldElement::zero()) else {
                        continue;
                    };
                    if *kind == PointKind::Output {
                        if let Some(pre) = self.events.get(round).and_then(|e| invert_event(e, &c)) {
                            derived.push(pre);
                        }
                    } else if let Some(e) = self.events.get(round) {
                        derived.push(e.apply(&c));
                    }
                    derived.push(c);
                }
            }
        }
        for v in derived {
            self.learn_field(&v);
        }
    }

    /// Membership test against the closed knowledge set.
    pub fn can_derive(&self, term: &[u8]) -> bool {
        self.terms.contains(term)
    }

    pub fn can_derive_field(&self, v: &FieldElement) -> bool {
        self.can_derive(&v.to_bytes())
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }
}

fn as_point(pt: Vec<u8>) -> Option<[u8; POINT_LEN]> {
    <[u8; POINT_LEN]>::try_from(pt.as_slice()).ok()
}

fn invert_event(e: &RoundEvent, v: &FieldElement) -> Option<FieldElement> {
    e.a().inverse().map(|inv| v.sub(e.b()).mul(&inv))
}

fn sealed_fields(body: &Body) -> Vec<&crypto::Ciphertext> {
    match body {
        Body::SessionKeyForInitiator { sealed_key, .. } | Body::SessionKeyForResponder { sealed_key, .. } => {
            vec![sealed_key]
        }
        Body::StateSubmit { sealed_state, .. }
        | Body::JoinAck { sealed_state, .. }
        | Body::StateTransfer { sealed_state, .. }
        | Body::StoreState { sealed_state, .. } => vec![sealed_state],
        Body::OwnerDeal {
            sealed_share,
            sealed_referee_output,
            ..
        } => {
            let mut v = vec![sealed_share];
            v.extend(sealed_referee_output.iter());
            v
        }
        Body::HolderDeal { sealed_share, .. } => vec![sealed_share],
        Body::HolderOutput { sealed_output, .. } => vec![sealed_output],
        Body::OutputSignature { sealed_signature, .. } => vec![sealed_signature],
        Body::Report { sealed } | Body::OutputReport { sealed } | Body::Correction { sealed } => vec![sealed],
        _ => vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;
    use crate::sharing::{evaluate_event, split};

    #[test]
    fn suppress_window_covers_count_rounds() {
        let s = CheatStrategy {
            kind: CheatKind::SuppressUpdates { count: 2 },
            from_round: 3,
            to_round: None,
        };
        assert!(!s.active(2));
        assert!(s.active(3));
        assert!(s.active(4));
        assert!(!s.active(5));
    }

    #[test]
    fn bounded_activation() {
        let s = CheatStrategy {
            kind: CheatKind::ForgeOutput,
            from_round: 2,
            to_round: Some(4),
        };
        assert!(!s.active(1) && s.active(2) && s.active(4) && !s.active(5));
    }

    #[test]
    fn strategy_parses_from_toml() {
        let s: CheatStrategy = toml::from_str("kind = \"fixed_delay\"\nms = 700\nfrom_round = 2").unwrap();
        assert_eq!(s.kind, CheatKind::FixedDelay { ms: 700 });
        assert_eq!(s.from_round, 2);
        let s: CheatStrategy = toml::from_str("kind = \"collude\"\npartner = 4").unwrap();
        assert_eq!(s.kind, CheatKind::Collude { partner: PlayerId(4) });
    }

    fn pooled(points: usize, k: usize) -> (IntruderKnowledge, FieldElement, FieldElement) {
        let mut rng = seeded_rng(9);
        let holders: Vec<_> = (2..7).map(PlayerId).collect();
        let secret = FieldElement::random(&mut rng);
        let event = RoundEvent::random(&mut rng);
        let shares = split(&secret, holders[0], 1, &holders, k, &mut rng).unwrap();
        let mut ik = IntruderKnowledge::default();
        ik.learn_event(1, event.clone());
        for s in shares.iter().take(points) {
            ik.learn_point(1, PointKind::Output, wire::encode_output(&evaluate_event(s, &event)));
        }
        ik.interpolate();
        let next = event.apply(&secret);
        (ik, secret, next)
    }

    #[test]
    fn k_minus_one_outputs_reveal_nothing() {
        let (ik, secret, next) = pooled(3, 4);
        assert!(!ik.can_derive_field(&secret));
        assert!(!ik.can_derive_field(&next));
    }

    #[test]
    fn k_outputs_reveal_the_state() {
        let (ik, secret, next) = pooled(4, 4);
        assert!(ik.can_derive_field(&secret));
        assert!(ik.can_derive_field(&next));
    }

    #[test]
    fn compromised_key_opens_m5() {
        let mut rng = seeded_rng(1);
        let k = SymmetricKey::random(&mut rng);
        let state = FieldElement::from_u64(42);
        let req = wire::Request::random(&mut rng);
        let header = wire::header_bytes(MessageType::M5, PlayerId(2), 1);
        let sealed_state = crypto::seal_with_aad(&k, &header, &wire::encode_state_submission(&req, &state), &mut rng);
        let bytes = wire::serialize(&ProtocolMessage::new(
            PlayerId(2),
            1,
            Body::StateSubmit {
                request: req,
                sealed_state,
            },
        ));
        let mut blind = IntruderKnowledge::default();
        blind.absorb(&bytes);
        assert!(!blind.can_derive_field(&state));
        assert!(blind.can_derive(&req.0));
        let mut keyed = IntruderKnowledge::new([k]);
        keyed.absorb(&bytes);
        assert!(keyed.can_derive_field(&state));
    }
}
