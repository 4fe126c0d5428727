//! Trusted server S: login facility and sealed game-state database.

use crate::actor::{Action, Envelope, SimTime};
use crate::crypto::{self, Ciphertext, MacTag, SimRng, SymmetricKey};
use crate::field::{FieldElement, PrimeField};
use crate::ids::PlayerId;
use crate::wire::{self, Body, JoinRejection, ProtocolMessage};
use serde::Serialize;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServerError {
    #[error("unknown credential")]
    UnknownCredential,
    #[error("{0} already has an active session")]
    AlreadyOnline(PlayerId),
    #[error("{0} is not authenticated")]
    NotAuthenticated(PlayerId),
    #[error("store request from {0}, only the referee may store state")]
    NotFromReferee(PlayerId),
    #[error("bad MAC on backend frame")]
    BadMac,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum ServerEvent {
    LoggedIn { player: PlayerId, minted: bool },
    Rejected { reason: String },
    Stored { player: PlayerId, offline: bool },
    Dropped { reason: String },
}

/// Associated data binding a stored state blob to its player.
pub fn stored_state_aad(player: PlayerId) -> Vec<u8> {
    let mut v = b"state".to_vec();
    v.extend_from_slice(&player.to_be_bytes());
    v
}

pub fn seal_state(key: &SymmetricKey, player: PlayerId, state: &FieldElement, rng: &mut SimRng) -> Ciphertext {
    crypto::seal_with_aad(key, &stored_state_aad(player), &wire::encode_state(state), rng)
}

pub fn open_state(key: &SymmetricKey, player: PlayerId, sealed: &Ciphertext) -> Option<FieldElement> {
    let pt = crypto::open_with_aad(key, &stored_state_aad(player), sealed).ok()?;
    wire::decode_state(&pt).ok()
}

pub struct ServerState {
    pub credential_table: BTreeMap<Vec<u8>, PlayerId>,
    /// Only ever sealed blobs.
    pub state_db: BTreeMap<PlayerId, Ciphertext>,
    pub ip_table: BTreeMap<PlayerId, Vec<u8>>,
    pub online_set: BTreeSet<PlayerId>,
}

pub struct Server {
    pub state: ServerState,
    long_term: BTreeMap<PlayerId, SymmetricKey>,
    backend_key: SymmetricKey,
    rng: SimRng,
    pub audit: Vec<ServerEvent>,
}

impl Server {
    pub fn new(
        credentials: BTreeMap<Vec<u8>, PlayerId>,
        long_term: BTreeMap<PlayerId, SymmetricKey>,
        backend_key: SymmetricKey,
        rng: SimRng,
    ) -> Self {
        Self {
            state: ServerState {
                credential_table: credentials,
                state_db: BTreeMap::new(),
                ip_table: BTreeMap::new(),
                online_set: BTreeSet::new(),
            },
            long_term,
            backend_key,
            rng,
            audit: Vec::new(),
        }
    }

    /// Seeds a player's stored state before the game starts.
    pub fn provision_state(&mut self, player: PlayerId, state: &FieldElement) {
        let key = self.long_term[&player].clone();
        let sealed = seal_state(&key, player, state, &mut self.rng);
        self.state.state_db.insert(player, sealed);
    }

    pub fn is_online(&self, player: PlayerId) -> bool {
        self.state.online_set.contains(&player)
    }

    pub fn authenticate(&mut self, credential: &[u8], address: &[u8]) -> Result<PlayerId, ServerError> {
        let id = *self
            .state
            .credential_table
            .get(credential)
            .ok_or(ServerError::UnknownCredential)?;
        if self.state.online_set.contains(&id) {
            return Err(ServerError::AlreadyOnline(id));
        }
        self.state.online_set.insert(id);
        self.state.ip_table.insert(id, address.to_vec());
        Ok(id)
    }

    /// Sealed X for an authenticated player, minting state 0 on first login.
    pub fn release_state(&mut self, player: PlayerId) -> Result<Ciphertext, ServerError> {
        if !self.state.online_set.contains(&player) {
            return Err(ServerError::NotAuthenticated(player));
        }
        if !self.state.state_db.contains_key(&player) {
            let key = self.long_term.get(&player).ok_or(ServerError::NotAuthenticated(player))?.clone();
            let sealed = seal_state(&key, player, &FieldElement::zero(), &mut self.rng);
            self.state.state_db.insert(player, sealed);
            self.audit.push(ServerEvent::LoggedIn { player, minted: true });
        } else {
            self.audit.push(ServerEvent::LoggedIn { player, minted: false });
        }
        Ok(self.state.state_db[&player].clone())
    }

    pub fn store_state(&mut self, from: PlayerId, player: PlayerId, sealed: Ciphertext) -> Result<(), ServerError> {
        if from != PlayerId::REFEREE {
            return Err(ServerError::NotFromReferee(from));
        }
        self.state.state_db.insert(player, sealed);
        Ok(())
    }

    /// Marks a player offline and forgets its address.
    pub fn disconnect(&mut self, player: PlayerId) {
        self.state.online_set.remove(&player);
        self.state.ip_table.remove(&player);
    }

    /// Serialized image of everything the server holds, for leak scans.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for (cred, id) in &self.state.credential_table {
            out.extend_from_slice(cred);
            out.extend_from_slice(&id.to_be_bytes());
        }
        for (id, ct) in &self.state.state_db {
            out.extend_from_slice(&id.to_be_bytes());
            out.extend_from_slice(&ct.to_bytes());
        }
        for (id, addr) in &self.state.ip_table {
            out.extend_from_slice(&id.to_be_bytes());
            out.extend_from_slice(addr);
        }
        for id in &self.state.online_set {
            out.extend_from_slice(&id.to_be_bytes());
        }
        out
    }

    pub fn handle(&mut self, _now: SimTime, env: &Envelope) -> Vec<Action> {
        let msg = &env.msg;
        match &msg.body {
            Body::Join { credential, address } => match self.authenticate(credential, address) {
                Ok(id) => {
                    let sealed = match self.release_state(id) {
                        Ok(s) => s,
                        Err(e) => {
                            self.audit.push(ServerEvent::Rejected { reason: e.to_string() });
                            return vec![];
                        }
                    };
                    let ack = ProtocolMessage::new(
                        PlayerId::SERVER,
                        msg.round,
                        Body::JoinAck {
                            id,
                            sealed_state: sealed.clone(),
                        },
                    );
                    let transfer = ProtocolMessage::new(
                        PlayerId::SERVER,
                        msg.round,
                        Body::StateTransfer {
                            player: id,
                            sealed_state: sealed,
                            mac: MacTag([0; 32]),
                        },
                    )
                    .with_control_mac(&self.backend_key);
                    vec![Action::send(id, ack), Action::send(PlayerId::REFEREE, transfer)]
                }
                Err(e) => {
                    let reason = match e {
                        ServerError::AlreadyOnline(_) => JoinRejection::AlreadyOnline,
                        _ => JoinRejection::UnknownCredential,
                    };
                    self.audit.push(ServerEvent::Rejected { reason: e.to_string() });
                    vec![Action::send(
                        env.from,
                        ProtocolMessage::new(PlayerId::SERVER, msg.round, Body::JoinReject { reason }),
                    )]
                }
            },
            Body::StoreState {
                player,
                sealed_state,
                offline,
                ..
            } => {
                if !msg.verify_control_mac(&self.backend_key) {
                    self.audit.push(ServerEvent::Dropped {
                        reason: ServerError::BadMac.to_string(),
                    });
                    return vec![];
                }
                if let Err(e) = self.store_state(msg.sender, *player, sealed_state.clone()) {
                    self.audit.push(ServerEvent::Dropped { reason: e.to_string() });
                    return vec![];
                }
                if *offline {
                    self.disconnect(*player);
                }
                self.audit.push(ServerEvent::Stored {
                    player: *player,
                    offline: *offline,
                });
                let ack = ProtocolMessage::new(
                    PlayerId::SERVER,
                    msg.round,
                    Body::LeaveAck {
                        player: *player,
                        mac: MacTag([0; 32]),
                    },
                )
                .with_control_mac(&self.backend_key);
                vec![Action::send(PlayerId::REFEREE, ack)]
            }
            other => {
                self.audit.push(ServerEvent::Dropped {
                    reason: format!("unexpected {} from {}", other.message_type(), msg.sender),
                });
                vec![]
            }
        }
    }
}
