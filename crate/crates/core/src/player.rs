//! Honest player engine: key agreement, state submission, share evaluation,
//! reconstruction and round reporting.

use crate::actor::{Action, Envelope, SimTime, Timer};
use crate::crypto::{self, Ciphertext, KeyPair, MacTag, Nonce, Signature, SimRng, SymmetricKey, VerificationKey};
use crate::field::{FieldElement, PrimeField};
use crate::ids::{PlayerId, RoundIndex};
use crate::server;
use crate::sharing::{self, Consistency, Output, RoundEvent, Share};
use crate::wire::{
    self, transcript, Body, CorrectionBody, EntryStatus, GameState, NotifyReason, ProtocolMessage, ReportBody,
    Request, SummaryEntry, POINT_LEN,
};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlayerError {
    #[error("MAC verification failed")]
    BadMac,
    #[error("sealed field did not open")]
    BadSeal,
    #[error("no key exchange pending with {0}")]
    NoPendingExchange(PlayerId),
    #[error("nonce already seen")]
    ReplayedNonce,
    #[error("no session key with {0}")]
    NoSessionKey(PlayerId),
    #[error("frame for round {got}, expected {want}")]
    WrongRound { got: RoundIndex, want: RoundIndex },
    #[error("unexpected sender {0}")]
    UnexpectedSender(PlayerId),
    #[error("{0} is not an area-of-interest peer")]
    NotMatched(PlayerId),
    #[error("not a participant in this round")]
    NotParticipating,
    #[error("malformed plaintext")]
    Malformed,
    #[error("duplicate frame")]
    Duplicate,
}

/// Static provisioning for one player.
#[derive(Debug, Clone)]
pub struct PlayerConfig {
    pub id: PlayerId,
    pub credential: Vec<u8>,
    pub address: Vec<u8>,
    pub long_term_key: SymmetricKey,
    pub keypair: KeyPair,
    /// Public verification keys of every player.
    pub directory: BTreeMap<PlayerId, VerificationKey>,
    /// Position schedule: `round → position`, effective from that round on.
    pub positions: BTreeMap<RoundIndex, i64>,
    pub leave_round: Option<RoundIndex>,
    pub rejoin_after_ms: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct SessionKey {
    pub key: SymmetricKey,
    /// The initiator's M1 nonce; bound into every M9 MAC of the session.
    pub initiator_nonce: Nonce,
}

#[derive(Debug, Clone)]
pub struct ReceivedOutput {
    pub point: [u8; POINT_LEN],
    pub output: Output,
    pub signature: Option<Signature>,
}

/// T_A: one entry per peer output expected this round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceivedSummary {
    pub entries: Vec<SummaryEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailureCase {
    NoMessage,
    BadPacket,
    /// Enough signed outputs, but no single polynomial fits a majority.
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureReport {
    pub cases: Vec<FailureCase>,
    pub evidence: ReceivedSummary,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RestoreOutcome {
    Restored { state: GameState, evidence: ReceivedSummary },
    Failed(FailureReport),
}

/// Everything the player knows about the round it is currently in.
#[derive(Debug, Clone)]
pub struct RoundView {
    pub round: RoundIndex,
    pub d_ms: u32,
    pub event: RoundEvent,
    pub owner: PlayerId,
    pub k: usize,
    pub holders: Vec<PlayerId>,
    pub request: Request,
    pub own_output: Option<Output>,
    pub referee_output: Option<Output>,
    pub received: BTreeMap<PlayerId, ReceivedOutput>,
    pub unusable: BTreeSet<PlayerId>,
    pub corrections: BTreeMap<PlayerId, Output>,
    pub restored: Option<GameState>,
    pub reported: bool,
    /// Holder side: output waiting for a session key with the owner.
    pub held_reply: Option<(Output, Signature)>,
    pub last_output_report: Option<ProtocolMessage>,
}

impl RoundView {
    fn peers(&self, me: PlayerId) -> impl Iterator<Item = PlayerId> + '_ {
        self.holders
            .iter()
            .copied()
            .filter(move |h| *h != me && *h != PlayerId::REFEREE)
    }

    fn x_of(&self, holder: PlayerId) -> Option<FieldElement> {
        self.holders
            .iter()
            .position(|h| *h == holder)
            .map(|i| FieldElement::from_u64(i as u64 + 1))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AdoptionPath {
    Direct,
    Corrected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Adoption {
    pub round: RoundIndex,
    pub state: String,
    pub path: AdoptionPath,
    pub at_ms: SimTime,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum PlayerEvent {
    Rejected { round: RoundIndex, msg: String, reason: String },
    KeyInstalled { peer: PlayerId },
    RestoreFailed { round: RoundIndex, cases: Vec<FailureCase> },
    Removed { reason: String },
    JoinRejected,
}

#[derive(Clone)]
pub struct PlayerSession {
    pub id: PlayerId,
    config: PlayerConfig,
    rng: SimRng,
    pub state: GameState,
    pub online: bool,
    pub session_keys: BTreeMap<PlayerId, SessionKey>,
    pub matched: BTreeSet<PlayerId>,
    pending_initiations: BTreeMap<PlayerId, Nonce>,
    pending_responses: BTreeMap<PlayerId, (Nonce, Nonce)>,
    pub nonce_cache: BTreeSet<[u8; 32]>,
    pub round: RoundIndex,
    pub view: Option<RoundView>,
    position: Option<i64>,
    /// Frames from peers that arrived before the session key.
    unkeyed: Vec<ProtocolMessage>,
    sent_m9: BTreeSet<(RoundIndex, PlayerId)>,
    pub adopted: Vec<Adoption>,
    pub events: Vec<PlayerEvent>,
}

impl PlayerSession {
    pub fn new(config: PlayerConfig, rng: SimRng) -> Self {
        Self {
            id: config.id,
            config,
            rng,
            state: FieldElement::from_u64(0),
            online: false,
            session_keys: BTreeMap::new(),
            matched: BTreeSet::new(),
            pending_initiations: BTreeMap::new(),
            pending_responses: BTreeMap::new(),
            nonce_cache: BTreeSet::new(),
            round: 0,
            view: None,
            position: None,
            unkeyed: Vec::new(),
            sent_m9: BTreeSet::new(),
            adopted: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn long_term_key(&self) -> &SymmetricKey {
        &self.config.long_term_key
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.config.keypair
    }

    pub fn config_leave_round(&self) -> Option<RoundIndex> {
        self.config.leave_round
    }

    pub fn verification_key(&self, of: PlayerId) -> Option<&VerificationKey> {
        self.config.directory.get(&of)
    }

    fn fresh_nonce(&mut self) -> Nonce {
        loop {
            let n = crypto::generate_nonce(&mut self.rng);
            if self.nonce_cache.insert(n.0) {
                return n;
            }
        }
    }

    fn position_for(&self, round: RoundIndex) -> Option<i64> {
        self.config.positions.range(..=round).next_back().map(|(_, p)| *p)
    }

    fn control(&self, body: Body) -> ProtocolMessage {
        ProtocolMessage::new(self.id, self.round, body).with_control_mac(&self.config.long_term_key)
    }

    fn reject(&mut self, msg: &ProtocolMessage, err: &PlayerError) {
        self.events.push(PlayerEvent::Rejected {
            round: msg.round,
            msg: msg.message_type().to_string(),
            reason: err.to_string(),
        });
    }

    // ----- key agreement ---------------------------------------------------

    /// M1 to `peer` with a fresh N_A.
    pub fn initiate(&mut self, peer: PlayerId) -> ProtocolMessage {
        let n_a = self.fresh_nonce();
        self.pending_initiations.insert(peer, n_a);
        ProtocolMessage::new(
            self.id,
            self.round,
            Body::KeyRequest {
                nonce_a: n_a,
                initiator: self.id,
            },
        )
    }

    /// M2 to the referee in answer to a peer's M1.
    pub fn respond_key_request(&mut self, m1: &ProtocolMessage) -> Result<ProtocolMessage, PlayerError> {
        let Body::KeyRequest { nonce_a, initiator } = &m1.body else {
            return Err(PlayerError::Malformed);
        };
        if *initiator != m1.sender {
            return Err(PlayerError::UnexpectedSender(m1.sender));
        }
        if !self.matched.contains(initiator) {
            return Err(PlayerError::NotMatched(*initiator));
        }
        if !self.nonce_cache.insert(nonce_a.0) {
            return Err(PlayerError::ReplayedNonce);
        }
        let n_b = self.fresh_nonce();
        self.pending_responses.insert(*initiator, (*nonce_a, n_b));
        let header = wire::header_bytes(wire::MessageType::M2, self.id, self.round);
        let mac = crypto::mac(
            &self.config.long_term_key,
            &transcript::m2(&header, nonce_a, &n_b, *initiator, self.id),
        );
        Ok(ProtocolMessage::new(
            self.id,
            self.round,
            Body::KeyEstablish {
                nonce_a: *nonce_a,
                nonce_b: n_b,
                responder: self.id,
                mac,
            },
        ))
    }

    /// Installs K_AB from M3 (initiator side) or M4 (responder side).
    pub fn accept_session_key(&mut self, msg: &ProtocolMessage) -> Result<PlayerId, PlayerError> {
        if msg.sender != PlayerId::REFEREE {
            return Err(PlayerError::UnexpectedSender(msg.sender));
        }
        let header = msg.header();
        let (peer, sealed, mac, nonce, initiator_nonce, initiator_side) = match &msg.body {
            Body::SessionKeyForInitiator { sealed_key, peer, mac } => {
                let n_a = *self
                    .pending_initiations
                    .get(peer)
                    .ok_or(PlayerError::NoPendingExchange(*peer))?;
                (*peer, sealed_key, mac, n_a, n_a, true)
            }
            Body::SessionKeyForResponder { sealed_key, peer, mac } => {
                let (n_a, n_b) = *self
                    .pending_responses
                    .get(peer)
                    .ok_or(PlayerError::NoPendingExchange(*peer))?;
                (*peer, sealed_key, mac, n_b, n_a, false)
            }
            _ => return Err(PlayerError::Malformed),
        };
        if !crypto::verify_mac(
            &self.config.long_term_key,
            &transcript::key_delivery(&header, &nonce, peer, sealed),
            mac,
        ) {
            return Err(PlayerError::BadMac);
        }
        let raw = crypto::open_with_aad(&self.config.long_term_key, &header, sealed).map_err(|_| PlayerError::BadSeal)?;
        let key = SymmetricKey::from_slice(&raw).map_err(|_| PlayerError::Malformed)?;
        if initiator_side {
            self.pending_initiations.remove(&peer);
        } else {
            self.pending_responses.remove(&peer);
        }
        self.session_keys.insert(peer, SessionKey { key, initiator_nonce });
        self.events.push(PlayerEvent::KeyInstalled { peer });
        Ok(peer)
    }

    fn forget_peer(&mut self, peer: PlayerId) {
        self.matched.remove(&peer);
        self.session_keys.remove(&peer);
        self.pending_initiations.remove(&peer);
        self.pending_responses.remove(&peer);
    }

    // ----- round participation --------------------------------------------

    /// M5: `R_A ‖ seal(R_A ‖ X_A)` for the owner.
    pub fn submit_state(&mut self, request: Request) -> ProtocolMessage {
        let header = wire::header_bytes(wire::MessageType::M5, self.id, self.round);
        let sealed_state = crypto::seal_with_aad(
            &self.config.long_term_key,
            &header,
            &wire::encode_state_submission(&request, &self.state),
            &mut self.rng,
        );
        ProtocolMessage::new(self.id, self.round, Body::StateSubmit { request, sealed_state })
    }

    /// M6 for a holder.
    pub fn submit_request(&mut self, request: Request) -> ProtocolMessage {
        ProtocolMessage::new(self.id, self.round, Body::HolderRequest { request, holder: self.id })
    }

    fn open_m8(&self, m8: &ProtocolMessage) -> Result<Share, PlayerError> {
        let view = self.view.as_ref().ok_or(PlayerError::NotParticipating)?;
        let Body::HolderDeal {
            sealed_share,
            owner,
            mac,
        } = &m8.body
        else {
            return Err(PlayerError::Malformed);
        };
        if m8.sender != PlayerId::REFEREE {
            return Err(PlayerError::UnexpectedSender(m8.sender));
        }
        if m8.round != view.round {
            return Err(PlayerError::WrongRound {
                got: m8.round,
                want: view.round,
            });
        }
        let header = m8.header();
        if !crypto::verify_mac(
            &self.config.long_term_key,
            &transcript::m8(&header, &view.request, *owner, sealed_share),
            mac,
        ) {
            return Err(PlayerError::BadMac);
        }
        if *owner != view.owner || view.owner == self.id {
            return Err(PlayerError::UnexpectedSender(*owner));
        }
        let pt = crypto::open_with_aad(&self.config.long_term_key, &header, sealed_share)
            .map_err(|_| PlayerError::BadSeal)?;
        let share = wire::decode_share(&pt, *owner, self.id, view.round).map_err(|_| PlayerError::Malformed)?;
        if Some(&share.x) != view.x_of(self.id).as_ref() {
            return Err(PlayerError::Malformed);
        }
        Ok(share)
    }

    /// Holder reaction to M8: M9 and the signature frame to the owner, and
    /// the signed output to the referee.
    pub fn evaluate_and_reply(&mut self, m8: &ProtocolMessage) -> Result<Vec<Action>, PlayerError> {
        let share = self.open_m8(m8)?;
        let view = self.view.as_mut().expect("checked in open_m8");
        if view.held_reply.is_some() || view.last_output_report.is_some() {
            return Err(PlayerError::Duplicate);
        }
        let output = sharing::evaluate_event(&share, &view.event);
        let sig = self.config.keypair.sign(&output.signing_bytes());
        view.held_reply = Some((output.clone(), sig));
        let report = self.output_report(&output, &sig);
        self.view.as_mut().unwrap().last_output_report = Some(report.clone());
        let mut actions = vec![Action::send(PlayerId::REFEREE, report)];
        actions.extend(self.flush_reply());
        Ok(actions)
    }

    fn output_report(&mut self, output: &Output, sig: &Signature) -> ProtocolMessage {
        let header = wire::header_bytes(wire::MessageType::OutputReport, self.id, output.round);
        let sealed = crypto::seal_with_aad(
            &self.config.long_term_key,
            &header,
            &wire::encode_signed_output(&wire::encode_output(output), sig),
            &mut self.rng,
        );
        ProtocolMessage::new(self.id, output.round, Body::OutputReport { sealed })
    }

    /// Sends the held M9 once a session key with the owner exists.
    fn flush_reply(&mut self) -> Vec<Action> {
        let Some(view) = self.view.as_ref() else {
            return vec![];
        };
        let owner = view.owner;
        let round = view.round;
        let Some((output, sig)) = view.held_reply.clone() else {
            return vec![];
        };
        let Some(session) = self.session_keys.get(&owner).cloned() else {
            return vec![];
        };
        if !self.sent_m9.insert((round, owner)) {
            return vec![];
        }
        self.view.as_mut().unwrap().held_reply = None;

        let h9 = wire::header_bytes(wire::MessageType::M9, self.id, round);
        let sealed_output = crypto::seal_with_aad(&session.key, &h9, &wire::encode_output(&output), &mut self.rng);
        let mac9 = crypto::mac(
            &session.key,
            &transcript::peer_output(&h9, &session.initiator_nonce, &sealed_output),
        );
        let hs = wire::header_bytes(wire::MessageType::OutputSig, self.id, round);
        let sealed_signature = crypto::seal_with_aad(&session.key, &hs, sig.as_bytes(), &mut self.rng);
        let macs = crypto::mac(
            &session.key,
            &transcript::peer_output(&hs, &session.initiator_nonce, &sealed_signature),
        );
        vec![
            Action::send(
                owner,
                ProtocolMessage::new(
                    self.id,
                    round,
                    Body::HolderOutput {
                        sealed_output,
                        mac: mac9,
                    },
                ),
            ),
            Action::send(
                owner,
                ProtocolMessage::new(
                    self.id,
                    round,
                    Body::OutputSignature {
                        sealed_signature,
                        mac: macs,
                    },
                ),
            ),
        ]
    }

    fn accept_m7(&mut self, m7: &ProtocolMessage) -> Result<(), PlayerError> {
        let view = self.view.as_ref().ok_or(PlayerError::NotParticipating)?;
        let Body::OwnerDeal {
            sealed_share,
            sealed_referee_output,
            mac,
        } = &m7.body
        else {
            return Err(PlayerError::Malformed);
        };
        if m7.sender != PlayerId::REFEREE {
            return Err(PlayerError::UnexpectedSender(m7.sender));
        }
        if view.owner != self.id {
            return Err(PlayerError::NotParticipating);
        }
        if m7.round != view.round {
            return Err(PlayerError::WrongRound {
                got: m7.round,
                want: view.round,
            });
        }
        if view.own_output.is_some() {
            return Err(PlayerError::Duplicate);
        }
        let header = m7.header();
        let peers: Vec<_> = view.peers(self.id).collect();
        if !crypto::verify_mac(
            &self.config.long_term_key,
            &transcript::m7(&header, &view.request, &peers, sealed_share, sealed_referee_output.as_ref()),
            mac,
        ) {
            return Err(PlayerError::BadMac);
        }
        let key = &self.config.long_term_key;
        let pt = crypto::open_with_aad(key, &header, sealed_share).map_err(|_| PlayerError::BadSeal)?;
        let share = wire::decode_share(&pt, self.id, self.id, view.round).map_err(|_| PlayerError::Malformed)?;
        let own = sharing::evaluate_event(&share, &view.event);
        let referee_output = match sealed_referee_output {
            Some(ct) => {
                let pt = crypto::open_with_aad(key, &header, ct).map_err(|_| PlayerError::BadSeal)?;
                Some(wire::decode_output(&pt, PlayerId::REFEREE, view.round).map_err(|_| PlayerError::Malformed)?)
            }
            None => None,
        };
        let view = self.view.as_mut().unwrap();
        view.own_output = Some(own);
        view.referee_output = referee_output;
        Ok(())
    }

    /// Owner side of M9 / OUTPUT_SIG.
    fn accept_peer_frame(&mut self, msg: &ProtocolMessage) -> Result<(), PlayerError> {
        let from = msg.sender;
        let view = self.view.as_ref().ok_or(PlayerError::NotParticipating)?;
        if view.owner != self.id || !view.holders.contains(&from) || from == self.id {
            return Err(PlayerError::NotParticipating);
        }
        if msg.round != view.round {
            return Err(PlayerError::WrongRound {
                got: msg.round,
                want: view.round,
            });
        }
        let Some(session) = self.session_keys.get(&from).cloned() else {
            self.unkeyed.push(msg.clone());
            return Ok(());
        };
        let header = msg.header();
        let (sealed, mac) = match &msg.body {
            Body::HolderOutput { sealed_output, mac } => (sealed_output, mac),
            Body::OutputSignature { sealed_signature, mac } => (sealed_signature, mac),
            _ => return Err(PlayerError::Malformed),
        };
        let view = self.view.as_mut().unwrap();
        let is_output = matches!(msg.body, Body::HolderOutput { .. });
        if is_output && (view.received.contains_key(&from) || view.unusable.contains(&from)) {
            return Err(PlayerError::Duplicate);
        }
        let opened = if crypto::verify_mac(
            &session.key,
            &transcript::peer_output(&header, &session.initiator_nonce, sealed),
            mac,
        ) {
            crypto::open_with_aad(&session.key, &header, sealed).map_err(|_| PlayerError::BadSeal)
        } else {
            Err(PlayerError::BadMac)
        };
        match (is_output, opened) {
            (true, Ok(pt)) => match <[u8; POINT_LEN]>::try_from(pt.as_slice())
                .ok()
                .and_then(|p| wire::decode_output(&p, from, view.round).ok().map(|o| (p, o)))
            {
                Some((point, output)) if Some(&output.x) == view.x_of(from).as_ref() => {
                    view.received.insert(
                        from,
                        ReceivedOutput {
                            point,
                            output,
                            signature: None,
                        },
                    );
                    Ok(())
                }
                _ => {
                    view.unusable.insert(from);
                    Err(PlayerError::Malformed)
                }
            },
            (true, Err(e)) => {
                view.unusable.insert(from);
                Err(e)
            }
            (false, Ok(pt)) => {
                let sig = Signature::from_slice(&pt).map_err(|_| PlayerError::Malformed)?;
                match view.received.get_mut(&from) {
                    Some(r) if r.signature.is_none() => {
                        r.signature = Some(sig);
                        Ok(())
                    }
                    Some(_) => Err(PlayerError::Duplicate),
                    None => Err(PlayerError::NotParticipating),
                }
            }
            (false, Err(e)) => Err(e),
        }
    }

    fn all_outputs_in(&self) -> bool {
        let Some(view) = &self.view else { return false };
        view.own_output.is_some()
            && view.peers(self.id).all(|p| {
                view.unusable.contains(&p) || view.received.get(&p).is_some_and(|r| r.signature.is_some())
            })
    }

    /// Restores the owner's next state from the outputs gathered so far.
    pub fn attempt_restore(&self) -> RestoreOutcome {
        let view = self.view.as_ref().expect("attempt_restore outside a round");
        let mut entries = Vec::new();
        let mut usable: Vec<Output> = Vec::new();
        let mut cases = BTreeSet::new();
        if let Some(o) = &view.own_output {
            usable.push(o.clone());
        }
        if let Some(o) = view.corrections.get(&PlayerId::REFEREE).or(view.referee_output.as_ref()) {
            usable.push(o.clone());
        }
        for peer in view.peers(self.id) {
            let received = view.received.get(&peer);
            let evidence = received.and_then(|r| r.signature.map(|s| (r.point, s)));
            if let Some(c) = view.corrections.get(&peer) {
                usable.push(c.clone());
                entries.push(SummaryEntry {
                    sender: peer,
                    status: EntryStatus::Received,
                    evidence,
                });
                continue;
            }
            let status = match received {
                None if view.unusable.contains(&peer) => EntryStatus::BadPacket,
                None => EntryStatus::Missing,
                Some(r) => match (r.signature, self.config.directory.get(&peer)) {
                    (Some(sig), Some(vk)) if crypto::verify_signature(vk, &r.output.signing_bytes(), &sig) => {
                        usable.push(r.output.clone());
                        EntryStatus::Received
                    }
                    _ => EntryStatus::BadPacket,
                },
            };
            match status {
                EntryStatus::Missing => {
                    cases.insert(0u8);
                }
                EntryStatus::BadPacket => {
                    cases.insert(1u8);
                }
                EntryStatus::Received => {}
            }
            entries.push(SummaryEntry {
                sender: peer,
                status,
                evidence,
            });
        }
        let to_cases = |c: &BTreeSet<u8>| {
            c.iter()
                .map(|v| if *v == 0 { FailureCase::NoMessage } else { FailureCase::BadPacket })
                .collect::<Vec<_>>()
        };
        if usable.len() < view.k {
            let mut cs = to_cases(&cases);
            if cs.is_empty() {
                cs.push(FailureCase::NoMessage);
            }
            return RestoreOutcome::Failed(FailureReport {
                cases: cs,
                evidence: ReceivedSummary { entries },
            });
        }
        match sharing::verify_share_consistency(&usable, view.k, None) {
            Ok(Consistency::Consistent { value }) => RestoreOutcome::Restored {
                state: value,
                evidence: ReceivedSummary { entries },
            },
            Ok(Consistency::Inconsistent {
                outliers,
                consensus: Some(value),
            }) => {
                for e in entries.iter_mut() {
                    if outliers.contains(&e.sender) {
                        e.status = EntryStatus::BadPacket;
                    }
                }
                RestoreOutcome::Restored {
                    state: value,
                    evidence: ReceivedSummary { entries },
                }
            }
            _ => {
                let mut cs = to_cases(&cases);
                cs.push(FailureCase::Ambiguous);
                RestoreOutcome::Failed(FailureReport {
                    cases: cs,
                    evidence: ReceivedSummary { entries },
                })
            }
        }
    }

    /// MP_AR: own output plus T_A, sealed for the referee.
    pub fn report_round(&mut self, restored: bool, evidence: &ReceivedSummary) -> Option<ProtocolMessage> {
        let view = self.view.as_ref()?;
        let round = view.round;
        let body = ReportBody {
            restored,
            own_output: view.own_output.as_ref().map(wire::encode_output),
            entries: evidence.entries.clone(),
        };
        let header = wire::header_bytes(wire::MessageType::Report, self.id, round);
        let sealed = crypto::seal_with_aad(&self.config.long_term_key, &header, &body.encode(), &mut self.rng);
        Some(ProtocolMessage::new(self.id, round, Body::Report { sealed }))
    }

    fn adopt(&mut self, now: SimTime, state: GameState, path: AdoptionPath) {
        let view = self.view.as_mut().expect("adopt inside a round");
        view.restored = Some(state.clone());
        self.adopted.push(Adoption {
            round: view.round,
            state: state.to_string(),
            path,
            at_ms: now,
        });
        self.state = state;
    }

    fn restore_and_report(&mut self, now: SimTime) -> Vec<Action> {
        let Some(view) = &self.view else { return vec![] };
        if view.reported || view.owner != self.id {
            return vec![];
        }
        let outcome = self.attempt_restore();
        let (restored, evidence) = match outcome {
            RestoreOutcome::Restored { state, evidence } => {
                self.adopt(now, state, AdoptionPath::Direct);
                (true, evidence)
            }
            RestoreOutcome::Failed(report) => {
                self.events.push(PlayerEvent::RestoreFailed {
                    round: self.view.as_ref().unwrap().round,
                    cases: report.cases.clone(),
                });
                (false, report.evidence)
            }
        };
        self.view.as_mut().unwrap().reported = true;
        self.report_round(restored, &evidence)
            .map(|m| vec![Action::send(PlayerId::REFEREE, m)])
            .unwrap_or_default()
    }

    fn accept_correction(&mut self, now: SimTime, msg: &ProtocolMessage) -> Result<(), PlayerError> {
        let Body::Correction { sealed } = &msg.body else {
            return Err(PlayerError::Malformed);
        };
        if msg.sender != PlayerId::REFEREE {
            return Err(PlayerError::UnexpectedSender(msg.sender));
        }
        let view = self.view.as_ref().ok_or(PlayerError::NotParticipating)?;
        if view.owner != self.id {
            return Err(PlayerError::NotParticipating);
        }
        if msg.round != view.round {
            return Err(PlayerError::WrongRound {
                got: msg.round,
                want: view.round,
            });
        }
        let pt = crypto::open_with_aad(&self.config.long_term_key, &msg.header(), sealed)
            .map_err(|_| PlayerError::BadSeal)?;
        let body = CorrectionBody::decode(&pt).map_err(|_| PlayerError::Malformed)?;
        let output = wire::decode_output(&body.point, body.holder, view.round).map_err(|_| PlayerError::Malformed)?;
        if Some(&output.x) != view.x_of(body.holder).as_ref() {
            return Err(PlayerError::Malformed);
        }
        self.view.as_mut().unwrap().corrections.insert(body.holder, output);
        if let RestoreOutcome::Restored { state, .. } = self.attempt_restore() {
            if self.view.as_ref().unwrap().restored.as_ref() != Some(&state) {
                self.adopt(now, state, AdoptionPath::Corrected);
            }
        }
        Ok(())
    }

    // ----- dispatch --------------------------------------------------------

    pub fn on_timer(&mut self, now: SimTime, timer: Timer) -> Vec<Action> {
        match timer {
            Timer::Start | Timer::Rejoin => {
                if self.online {
                    return vec![];
                }
                let join = ProtocolMessage::new(
                    PlayerId::UNASSIGNED,
                    self.round,
                    Body::Join {
                        credential: self.config.credential.clone(),
                        address: self.config.address.clone(),
                    },
                );
                vec![Action::send(PlayerId::SERVER, join)]
            }
            Timer::RestoreDeadline(r) => match &self.view {
                Some(v) if v.round == r => self.restore_and_report(now),
                _ => vec![],
            },
            Timer::CloseRound(_) => vec![],
        }
    }

    pub fn handle(&mut self, now: SimTime, env: &Envelope) -> Vec<Action> {
        let msg = &env.msg;
        let result = self.dispatch(now, msg);
        match result {
            Ok(actions) => actions,
            Err(e) => {
                self.reject(msg, &e);
                vec![]
            }
        }
    }

    fn dispatch(&mut self, now: SimTime, msg: &ProtocolMessage) -> Result<Vec<Action>, PlayerError> {
        if let Body::JoinAck { id, sealed_state } = &msg.body {
            if msg.sender != PlayerId::SERVER || *id != self.id {
                return Err(PlayerError::UnexpectedSender(msg.sender));
            }
            let state =
                server::open_state(&self.config.long_term_key, self.id, sealed_state).ok_or(PlayerError::BadSeal)?;
            self.state = state;
            self.online = true;
            self.position = self.position_for(self.round);
            let pos = self.position.unwrap_or(0);
            return Ok(vec![Action::send(
                PlayerId::REFEREE,
                self.control(Body::AoiPos {
                    position: pos,
                    mac: MacTag([0; 32]),
                }),
            )]);
        }
        if let Body::JoinReject { .. } = &msg.body {
            self.events.push(PlayerEvent::JoinRejected);
            return Ok(vec![]);
        }
        if !self.online {
            return Err(PlayerError::NotParticipating);
        }
        match &msg.body {
            Body::KeyRequest { .. } => {
                let m2 = self.respond_key_request(msg)?;
                Ok(vec![Action::send(PlayerId::REFEREE, m2)])
            }
            Body::SessionKeyForInitiator { .. } | Body::SessionKeyForResponder { .. } => {
                let peer = self.accept_session_key(msg)?;
                let mut actions = Vec::new();
                if self.view.as_ref().is_some_and(|v| v.owner == peer) {
                    actions.extend(self.flush_reply());
                }
                let (ready, rest): (Vec<_>, Vec<_>) =
                    std::mem::take(&mut self.unkeyed).into_iter().partition(|m| m.sender == peer);
                self.unkeyed = rest;
                for m in ready {
                    if let Err(e) = self.accept_peer_frame(&m) {
                        self.reject(&m, &e);
                    }
                }
                if self.all_outputs_in() {
                    actions.extend(self.restore_and_report(now));
                }
                Ok(actions)
            }
            Body::AoiMatch { peer, initiator, .. } => {
                self.check_control(msg)?;
                self.matched.insert(*peer);
                if *initiator {
                    let m1 = self.initiate(*peer);
                    Ok(vec![Action::send(*peer, m1)])
                } else {
                    Ok(vec![])
                }
            }
            Body::RoundOpen { .. } => {
                self.check_control(msg)?;
                Ok(self.open_round(now, msg))
            }
            Body::OwnerDeal { .. } => {
                self.accept_m7(msg)?;
                Ok(if self.all_outputs_in() {
                    self.restore_and_report(now)
                } else {
                    vec![]
                })
            }
            Body::HolderDeal { .. } => self.evaluate_and_reply(msg),
            Body::HolderOutput { .. } | Body::OutputSignature { .. } => {
                self.accept_peer_frame(msg)?;
                Ok(if self.all_outputs_in() {
                    self.restore_and_report(now)
                } else {
                    vec![]
                })
            }
            Body::Correction { .. } => {
                self.accept_correction(now, msg)?;
                Ok(vec![])
            }
            Body::Notify { reason, subject, .. } => {
                self.check_control(msg)?;
                match reason {
                    NotifyReason::LeftAoi => {
                        self.forget_peer(*subject);
                        Ok(vec![])
                    }
                    NotifyReason::Resend => Ok(self
                        .view
                        .as_ref()
                        .filter(|v| v.round == msg.round)
                        .and_then(|v| v.last_output_report.clone())
                        .map(|m| vec![Action::send(PlayerId::REFEREE, m)])
                        .unwrap_or_default()),
                    NotifyReason::NotReceived | NotifyReason::Removed => Ok(vec![]),
                }
            }
            Body::Remove { player, reason, .. } => {
                self.check_control(msg)?;
                if *player == self.id {
                    self.online = false;
                    self.view = None;
                    self.session_keys.clear();
                    self.matched.clear();
                    self.pending_initiations.clear();
                    self.pending_responses.clear();
                    self.events.push(PlayerEvent::Removed {
                        reason: format!("{reason:?}"),
                    });
                    return Ok(self
                        .config
                        .rejoin_after_ms
                        .map(|d| {
                            vec![Action::SetTimer {
                                at: now + d,
                                timer: Timer::Rejoin,
                            }]
                        })
                        .unwrap_or_default());
                }
                self.forget_peer(*player);
                Ok(vec![])
            }
            Body::Announce { .. } => {
                self.check_control(msg)?;
                Ok(vec![])
            }
            _ => Err(PlayerError::Malformed),
        }
    }

    fn check_control(&self, msg: &ProtocolMessage) -> Result<(), PlayerError> {
        if msg.sender != PlayerId::REFEREE {
            return Err(PlayerError::UnexpectedSender(msg.sender));
        }
        if !msg.verify_control_mac(&self.config.long_term_key) {
            return Err(PlayerError::BadMac);
        }
        Ok(())
    }

    fn open_round(&mut self, now: SimTime, msg: &ProtocolMessage) -> Vec<Action> {
        let Body::RoundOpen {
            d_ms,
            event_a,
            event_b,
            owner,
            k,
            holders,
            ..
        } = &msg.body
        else {
            return vec![];
        };
        if msg.round < self.round {
            return vec![];
        }
        self.round = msg.round;
        self.view = None;
        self.unkeyed.clear();
        let mut actions = Vec::new();
        if self.config.leave_round == Some(msg.round) {
            actions.push(Action::send(PlayerId::REFEREE, self.control(Body::Leave { mac: MacTag([0; 32]) })));
            return actions;
        }
        let next = self.position_for(msg.round + 1);
        if next.is_some() && next != self.position {
            self.position = next;
            actions.push(Action::send(
                PlayerId::REFEREE,
                self.control(Body::AoiPos {
                    position: next.unwrap(),
                    mac: MacTag([0; 32]),
                }),
            ));
        }
        if !holders.contains(&self.id) {
            return actions;
        }
        let Ok(event) = RoundEvent::new(event_a.clone(), event_b.clone()) else {
            return actions;
        };
        let request = Request::random(&mut self.rng);
        self.view = Some(RoundView {
            round: msg.round,
            d_ms: *d_ms,
            event,
            owner: *owner,
            k: *k as usize,
            holders: holders.clone(),
            request,
            own_output: None,
            referee_output: None,
            received: BTreeMap::new(),
            unusable: BTreeSet::new(),
            corrections: BTreeMap::new(),
            restored: None,
            reported: false,
            held_reply: None,
            last_output_report: None,
        });
        if *owner == self.id {
            actions.push(Action::send(PlayerId::REFEREE, self.submit_state(request)));
            actions.push(Action::SetTimer {
                at: now + (*d_ms as u64) / 2,
                timer: Timer::RestoreDeadline(msg.round),
            });
        } else {
            actions.push(Action::send(PlayerId::REFEREE, self.submit_request(request)));
        }
        actions
    }
}

/// Sealed-field helper for strategies that rewrite a holder's outputs.
pub fn reseal_peer_output(
    session: &SessionKey,
    header: &[u8; wire::HEADER_LEN],
    plaintext: &[u8],
    rng: &mut SimRng,
) -> (Ciphertext, MacTag) {
    let sealed = crypto::seal_with_aad(&session.key, header, plaintext, rng);
    let mac = crypto::mac(
        &session.key,
        &transcript::peer_output(header, &session.initiator_nonce, &sealed),
    );
    (sealed, mac)
}
