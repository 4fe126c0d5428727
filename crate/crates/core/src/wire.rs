//! Byte-exact frame format for every protocol message.
//!
//! A frame is a 9-byte header (`tag u8 ‖ sender u32 ‖ round u32`, big-endian)
//! followed by the payload fields of that message type in order. Fixed-width
//! fields are written raw; variable fields carry a 2-byte big-endian length
//! prefix. Sealed fields encode as `iv ‖ body ‖ auth_tag`. Deserialization
//! must consume the frame exactly.
//!
//! | tag  | message        | payload                                             |
//! |------|----------------|-----------------------------------------------------|
//! | 0x01 | M1             | N_A (32), A (4)                                     |
//! | 0x02 | M2             | N_A (32), N_B (32), B (4), mac (32)                 |
//! | 0x03 | M3             | seal(K_AB) (var), B (4), mac (32)                   |
//! | 0x04 | M4             | seal(K_AB) (var), A (4), mac (32)                   |
//! | 0x05 | M5             | R_A (16), seal(R_A ‖ X_A) (var)                     |
//! | 0x06 | M6             | R_B (16), B (4)                                     |
//! | 0x07 | M7             | seal(SH_A) (var), seal(U_R) (var, may be empty), mac|
//! | 0x08 | M8             | seal(SH_B) (var), A (4), mac (32)                   |
//! | 0x09 | M9             | seal(U_B) (var), mac (32)                           |
//! | 0x0A | OUTPUT_SIG     | seal(D(U_B)) (var), mac (32)                        |
//! | 0x11 | REPORT (MP_AR) | seal(report body) (var)                             |
//! | 0x12 | OUTPUT_REPORT  | seal(U_B ‖ D(U_B)) (var)                            |
//! | 0x13 | NOTIFY (MRP)   | reason (1), subject (4), mac (32)                   |
//! | 0x14 | CORRECTION     | seal(correction body) (var)                         |
//! | 0x20 | JOIN           | credential (var), address (var)                     |
//! | 0x21 | JOIN_ACK       | id (4), seal(X) (var)                               |
//! | 0x22 | JOIN_REJECT    | reason (1)                                          |
//! | 0x23 | STATE_TRANSFER | player (4), seal(X) (var), mac (32)                 |
//! | 0x24 | ANNOUNCE       | player (4), mac (32)                                |
//! | 0x25 | AOI_POS        | position (8, signed), mac (32)                      |
//! | 0x26 | AOI_MATCH      | peer (4), initiator (1), mac (32)                   |
//! | 0x27 | ROUND_OPEN     | d (4), a (32), b (32), owner (4), k (1), n (1), holders (4·n), mac |
//! | 0x28 | LEAVE          | mac (32)                                            |
//! | 0x29 | STORE_STATE    | player (4), seal(X) (var), offline (1), mac (32)    |
//! | 0x2A | LEAVE_ACK      | player (4), mac (32)                                |
//! | 0x2B | REMOVE         | player (4), reason (1), mac (32)                    |
//!
//! Share and output plaintexts are `x-index (1) ‖ y (32)`; evaluation
//! points are small holder indices, so one byte suffices.

use crate::crypto::{self, Ciphertext, MacTag, Nonce, Signature, SymmetricKey, MAC_LEN};
use crate::field::{FieldElement, PrimeField, FIELD_BYTES};
use crate::ids::{HolderId, PlayerId, RoundIndex};
use crate::sharing::{Output, Share};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub const HEADER_LEN: usize = 9;
pub const REQUEST_LEN: usize = 16;
/// `x-index ‖ y`
pub const POINT_LEN: usize = 1 + FIELD_BYTES;

/// A player's authoritative state.
pub type GameState = FieldElement;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WireError {
    #[error("frame truncated")]
    Truncated,
    #[error("unknown message tag 0x{0:02x}")]
    UnknownTag(u8),
    #[error("length prefix overruns frame")]
    LengthOverrun,
    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),
    #[error("malformed field: {0}")]
    BadField(&'static str),
}

/// Opaque 16-byte per-round request token (`R_A`, `R_B`).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Request(pub [u8; REQUEST_LEN]);

impl Request {
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut b = [0u8; REQUEST_LEN];
        rng.fill_bytes(&mut b);
        Self(b)
    }
}

impl fmt::Debug for Request {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Request({})", hex::encode(&self.0[..4]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum MessageType {
    M1 = 0x01,
    M2 = 0x02,
    M3 = 0x03,
    M4 = 0x04,
    M5 = 0x05,
    M6 = 0x06,
    M7 = 0x07,
    M8 = 0x08,
    M9 = 0x09,
    OutputSig = 0x0A,
    Report = 0x11,
    OutputReport = 0x12,
    Notify = 0x13,
    Correction = 0x14,
    Join = 0x20,
    JoinAck = 0x21,
    JoinReject = 0x22,
    StateTransfer = 0x23,
    Announce = 0x24,
    AoiPos = 0x25,
    AoiMatch = 0x26,
    RoundOpen = 0x27,
    Leave = 0x28,
    StoreState = 0x29,
    LeaveAck = 0x2A,
    Remove = 0x2B,
}

impl MessageType {
    pub const ALL: [MessageType; 26] = [
        Self::M1,
        Self::M2,
        Self::M3,
        Self::M4,
        Self::M5,
        Self::M6,
        Self::M7,
        Self::M8,
        Self::M9,
        Self::OutputSig,
        Self::Report,
        Self::OutputReport,
        Self::Notify,
        Self::Correction,
        Self::Join,
        Self::JoinAck,
        Self::JoinReject,
        Self::StateTransfer,
        Self::Announce,
        Self::AoiPos,
        Self::AoiMatch,
        Self::RoundOpen,
        Self::Leave,
        Self::StoreState,
        Self::LeaveAck,
        Self::Remove,
    ];

    pub const PROTOCOL: [MessageType; 9] = [
        Self::M1,
        Self::M2,
        Self::M3,
        Self::M4,
        Self::M5,
        Self::M6,
        Self::M7,
        Self::M8,
        Self::M9,
    ];

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.iter().copied().find(|t| *t as u8 == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
            Self::M6 => "M6",
            Self::M7 => "M7",
            Self::M8 => "M8",
            Self::M9 => "M9",
            Self::OutputSig => "OUTPUT_SIG",
            Self::Report => "REPORT",
            Self::OutputReport => "OUTPUT_REPORT",
            Self::Notify => "NOTIFY",
            Self::Correction => "CORRECTION",
            Self::Join => "JOIN",
            Self::JoinAck => "JOIN_ACK",
            Self::JoinReject => "JOIN_REJECT",
            Self::StateTransfer => "STATE_TRANSFER",
            Self::Announce => "ANNOUNCE",
            Self::AoiPos => "AOI_POS",
            Self::AoiMatch => "AOI_MATCH",
            Self::RoundOpen => "ROUND_OPEN",
            Self::Leave => "LEAVE",
            Self::StoreState => "STORE_STATE",
            Self::LeaveAck => "LEAVE_ACK",
            Self::Remove => "REMOVE",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum NotifyReason {
    /// Neither the owner nor the referee received this player's output.
    NotReceived = 1,
    /// A peer left this player's area of interest.
    LeftAoi = 2,
    /// The player has been removed from the conversation.
    Removed = 3,
    /// The referee asks for the round's output report once more.
    Resend = 4,
}

impl NotifyReason {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::NotReceived,
            2 => Self::LeftAoi,
            3 => Self::Removed,
            4 => Self::Resend,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum RemovalReason {
    Left = 1,
    Cheating = 2,
    Disconnected = 3,
}

impl RemovalReason {
    fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::Left,
            2 => Self::Cheating,
            3 => Self::Disconnected,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum JoinRejection {
    UnknownCredential = 1,
    AlreadyOnline = 2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Body {
    KeyRequest {
        nonce_a: Nonce,
        initiator: PlayerId,
    },
    KeyEstablish {
        nonce_a: Nonce,
        nonce_b: Nonce,
        responder: PlayerId,
        mac: MacTag,
    },
    SessionKeyForInitiator {
        sealed_key: Ciphertext,
        peer: PlayerId,
        mac: MacTag,
    },
    SessionKeyForResponder {
        sealed_key: Ciphertext,
        peer: PlayerId,
        mac: MacTag,
    },
    StateSubmit {
        request: Request,
        sealed_state: Ciphertext,
    },
    HolderRequest {
        request: Request,
        holder: PlayerId,
    },
    OwnerDeal {
        sealed_share: Ciphertext,
        sealed_referee_output: Option<Ciphertext>,
        mac: MacTag,
    },
    HolderDeal {
        sealed_share: Ciphertext,
        owner: PlayerId,
        mac: MacTag,
    },
    HolderOutput {
        sealed_output: Ciphertext,
        mac: MacTag,
    },
    OutputSignature {
        sealed_signature: Ciphertext,
        mac: MacTag,
    },
    Report {
        sealed: Ciphertext,
    },
    OutputReport {
        sealed: Ciphertext,
    },
    Notify {
        reason: NotifyReason,
        subject: PlayerId,
        mac: MacTag,
    },
    Correction {
        sealed: Ciphertext,
    },
    Join {
        credential: Vec<u8>,
        address: Vec<u8>,
    },
    JoinAck {
        id: PlayerId,
        sealed_state: Ciphertext,
    },
    JoinReject {
        reason: JoinRejection,
    },
    StateTransfer {
        player: PlayerId,
        sealed_state: Ciphertext,
        mac: MacTag,
    },
    Announce {
        player: PlayerId,
        mac: MacTag,
    },
    AoiPos {
        position: i64,
        mac: MacTag,
    },
    AoiMatch {
        peer: PlayerId,
        initiator: bool,
        mac: MacTag,
    },
    RoundOpen {
        d_ms: u32,
        event_a: FieldElement,
        event_b: FieldElement,
        owner: PlayerId,
        k: u8,
        holders: Vec<PlayerId>,
        mac: MacTag,
    },
    Leave {
        mac: MacTag,
    },
    StoreState {
        player: PlayerId,
        sealed_state: Ciphertext,
        offline: bool,
        mac: MacTag,
    },
    LeaveAck {
        player: PlayerId,
        mac: MacTag,
    },
    Remove {
        player: PlayerId,
        reason: RemovalReason,
        mac: MacTag,
    },
}

impl Body {
    pub fn message_type(&self) -> MessageType {
        match self {
            Body::KeyRequest { .. } => MessageType::M1,
            Body::KeyEstablish { .. } => MessageType::M2,
            Body::SessionKeyForInitiator { .. } => MessageType::M3,
            Body::SessionKeyForResponder { .. } => MessageType::M4,
            Body::StateSubmit { .. } => MessageType::M5,
            Body::HolderRequest { .. } => MessageType::M6,
            Body::OwnerDeal { .. } => MessageType::M7,
            Body::HolderDeal { .. } => MessageType::M8,
            Body::HolderOutput { .. } => MessageType::M9,
            Body::OutputSignature { .. } => MessageType::OutputSig,
            Body::Report { .. } => MessageType::Report,
            Body::OutputReport { .. } => MessageType::OutputReport,
            Body::Notify { .. } => MessageType::Notify,
            Body::Correction { .. } => MessageType::Correction,
            Body::Join { .. } => MessageType::Join,
            Body::JoinAck { .. } => MessageType::JoinAck,
            Body::JoinReject { .. } => MessageType::JoinReject,
            Body::StateTransfer { .. } => MessageType::StateTransfer,
            Body::Announce { .. } => MessageType::Announce,
            Body::AoiPos { .. } => MessageType::AoiPos,
            Body::AoiMatch { .. } => MessageType::AoiMatch,
            Body::RoundOpen { .. } => MessageType::RoundOpen,
            Body::Leave { .. } => MessageType::Leave,
            Body::StoreState { .. } => MessageType::StoreState,
            Body::LeaveAck { .. } => MessageType::LeaveAck,
            Body::Remove { .. } => MessageType::Remove,
        }
    }

    /// Trailing MAC, for frame types that end in one.
    pub fn trailing_mac(&self) -> Option<&MacTag> {
        match self {
            Body::KeyEstablish { mac, .. }
            | Body::SessionKeyForInitiator { mac, .. }
            | Body::SessionKeyForResponder { mac, .. }
            | Body::OwnerDeal { mac, .. }
            | Body::HolderDeal { mac, .. }
            | Body::HolderOutput { mac, .. }
            | Body::OutputSignature { mac, .. }
            | Body::Notify { mac, .. }
            | Body::StateTransfer { mac, .. }
            | Body::Announce { mac, .. }
            | Body::AoiPos { mac, .. }
            | Body::AoiMatch { mac, .. }
            | Body::RoundOpen { mac, .. }
            | Body::Leave { mac }
            | Body::StoreState { mac, .. }
            | Body::LeaveAck { mac, .. }
            | Body::Remove { mac, .. } => Some(mac),
            _ => None,
        }
    }

    fn trailing_mac_mut(&mut self) -> Option<&mut MacTag> {
        match self {
            Body::KeyEstablish { mac, .. }
            | Body::SessionKeyForInitiator { mac, .. }
            | Body::SessionKeyForResponder { mac, .. }
            | Body::OwnerDeal { mac, .. }
            | Body::HolderDeal { mac, .. }
            | Body::HolderOutput { mac, .. }
            | Body::OutputSignature { mac, .. }
            | Body::Notify { mac, .. }
            | Body::StateTransfer { mac, .. }
            | Body::Announce { mac, .. }
            | Body::AoiPos { mac, .. }
            | Body::AoiMatch { mac, .. }
            | Body::RoundOpen { mac, .. }
            | Body::Leave { mac }
            | Body::StoreState { mac, .. }
            | Body::LeaveAck { mac, .. }
            | Body::Remove { mac, .. } => Some(mac),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolMessage {
    pub sender: PlayerId,
    pub round: RoundIndex,
    pub body: Body,
}

impl ProtocolMessage {
    pub fn new(sender: PlayerId, round: RoundIndex, body: Body) -> Self {
        Self { sender, round, body }
    }

    pub fn message_type(&self) -> MessageType {
        self.body.message_type()
    }

    /// The 9 header bytes, also used as AEAD associated data.
    pub fn header(&self) -> [u8; HEADER_LEN] {
        header_bytes(self.message_type(), self.sender, self.round)
    }

    /// Bytes a control-frame MAC covers: the serialized frame minus its trailing tag.
    pub fn control_mac_input(&self) -> Vec<u8> {
        let mut bytes = serialize(self);
        if self.body.trailing_mac().is_some() {
            bytes.truncate(bytes.len() - MAC_LEN);
        }
        bytes
    }

    /// Fills the trailing MAC with `mac(key, control_mac_input)`.
    pub fn with_control_mac(mut self, key: &SymmetricKey) -> Self {
        let tag = crypto::mac(key, &self.control_mac_input());
        if let Some(m) = self.body.trailing_mac_mut() {
            *m = tag;
        }
        self
    }

    pub fn verify_control_mac(&self, key: &SymmetricKey) -> bool {
        match self.body.trailing_mac() {
            Some(tag) => crypto::verify_mac(key, &self.control_mac_input(), tag),
            None => false,
        }
    }
}

pub fn header_bytes(ty: MessageType, sender: PlayerId, round: RoundIndex) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0] = ty as u8;
    h[1..5].copy_from_slice(&sender.to_be_bytes());
    h[5..9].copy_from_slice(&round.to_be_bytes());
    h
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn id(&mut self, v: PlayerId) {
        self.u32(v.0);
    }
    fn raw(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn var(&mut self, b: &[u8]) {
        let len = u16::try_from(b.len()).expect("variable field exceeds 65535 bytes");
        self.0.extend_from_slice(&len.to_be_bytes());
        self.0.extend_from_slice(b);
    }
    fn sealed(&mut self, ct: &Ciphertext) {
        self.var(&ct.to_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        let end = self.pos.checked_add(n).ok_or(WireError::Truncated)?;
        if end > self.buf.len() {
            return Err(WireError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn id(&mut self) -> Result<PlayerId, WireError> {
        Ok(PlayerId(self.u32()?))
    }
    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    fn var(&mut self) -> Result<&'a [u8], WireError> {
        let len = u16::from_be_bytes(self.take(2)?.try_into().unwrap()) as usize;
        if self.pos + len > self.buf.len() {
            return Err(WireError::LengthOverrun);
        }
        self.take(len)
    }
    fn sealed(&mut self) -> Result<Ciphertext, WireError> {
        Ciphertext::from_bytes(self.var()?).map_err(|_| WireError::BadField("ciphertext"))
    }
    fn optional_sealed(&mut self) -> Result<Option<Ciphertext>, WireError> {
        let raw = self.var()?;
        if raw.is_empty() {
            return Ok(None);
        }
        Ciphertext::from_bytes(raw)
            .map(Some)
            .map_err(|_| WireError::BadField("ciphertext"))
    }
    fn mac(&mut self) -> Result<MacTag, WireError> {
        Ok(MacTag(self.array()?))
    }
    fn nonce(&mut self) -> Result<Nonce, WireError> {
        Ok(Nonce(self.array()?))
    }
    fn field(&mut self) -> Result<FieldElement, WireError> {
        FieldElement::from_bytes(self.take(FIELD_BYTES)?).map_err(|_| WireError::BadField("field element"))
    }
    fn bool(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(WireError::BadField("bool")),
        }
    }
    fn finish(&self) -> Result<(), WireError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(WireError::TrailingBytes(n)),
        }
    }
}

pub fn serialize(msg: &ProtocolMessage) -> Vec<u8> {
    let mut w = Writer(Vec::with_capacity(128));
    w.raw(&msg.header());
    match &msg.body {
        Body::KeyRequest { nonce_a, initiator } => {
            w.raw(nonce_a.as_bytes());
            w.id(*initiator);
        }
        Body::KeyEstablish {
            nonce_a,
            nonce_b,
            responder,
            mac,
        } => {
            w.raw(nonce_a.as_bytes());
            w.raw(nonce_b.as_bytes());
            w.id(*responder);
            w.raw(mac.as_bytes());
        }
        Body::SessionKeyForInitiator { sealed_key, peer, mac }
        | Body::SessionKeyForResponder { sealed_key, peer, mac } => {
            w.sealed(sealed_key);
            w.id(*peer);
            w.raw(mac.as_bytes());
        }
        Body::StateSubmit { request, sealed_state } => {
            w.raw(&request.0);
            w.sealed(sealed_state);
        }
        Body::HolderRequest { request, holder } => {
            w.raw(&request.0);
            w.id(*holder);
        }
        Body::OwnerDeal {
            sealed_share,
            sealed_referee_output,
            mac,
        } => {
            w.sealed(sealed_share);
            match sealed_referee_output {
                Some(ct) => w.sealed(ct),
                None => w.var(&[]),
            }
            w.raw(mac.as_bytes());
        }
        Body::HolderDeal {
            sealed_share,
            owner,
            mac,
        } => {
            w.sealed(sealed_share);
            w.id(*owner);
            w.raw(mac.as_bytes());
        }
        Body::HolderOutput { sealed_output, mac } => {
            w.sealed(sealed_output);
            w.raw(mac.as_bytes());
        }
        Body::OutputSignature { sealed_signature, mac } => {
            w.sealed(sealed_signature);
            w.raw(mac.as_bytes());
        }
        Body::Report { sealed } | Body::OutputReport { sealed } | Body::Correction { sealed } => {
            w.sealed(sealed);
        }
        Body::Notify { reason, subject, mac } => {
            w.u8(*reason as u8);
            w.id(*subject);
            w.raw(mac.as_bytes());
        }
        Body::Join { credential, address } => {
            w.var(credential);
            w.var(address);
        }
        Body::JoinAck { id, sealed_state } => {
            w.id(*id);
            w.sealed(sealed_state);
        }
        Body::JoinReject { reason } => w.u8(*reason as u8),
        Body::StateTransfer {
            player,
            sealed_state,
            mac,
        } => {
            w.id(*player);
            w.sealed(sealed_state);
            w.raw(mac.as_bytes());
        }
        Body::Announce { player, mac } | Body::LeaveAck { player, mac } => {
            w.id(*player);
            w.raw(mac.as_bytes());
        }
        Body::AoiPos { position, mac } => {
            w.raw(&position.to_be_bytes());
            w.raw(mac.as_bytes());
        }
        Body::AoiMatch { peer, initiator, mac } => {
            w.id(*peer);
            w.u8(*initiator as u8);
            w.raw(mac.as_bytes());
        }
        Body::RoundOpen {
            d_ms,
            event_a,
            event_b,
            owner,
            k,
            holders,
            mac,
        } => {
            w.u32(*d_ms);
            w.raw(&event_a.to_bytes());
            w.raw(&event_b.to_bytes());
            w.id(*owner);
            w.u8(*k);
            w.u8(u8::try_from(holders.len()).expect("at most 255 holders"));
            for h in holders {
                w.id(*h);
            }
            w.raw(mac.as_bytes());
        }
        Body::Leave { mac } => w.raw(mac.as_bytes()),
        Body::StoreState {
            player,
            sealed_state,
            offline,
            mac,
        } => {
            w.id(*player);
            w.sealed(sealed_state);
            w.u8(*offline as u8);
            w.raw(mac.as_bytes());
        }
        Body::Remove { player, reason, mac } => {
            w.id(*player);
            w.u8(*reason as u8);
            w.raw(mac.as_bytes());
        }
    }
    w.0
}

pub fn deserialize(bytes: &[u8]) -> Result<ProtocolMessage, WireError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let tag = r.u8()?;
    let ty = MessageType::from_tag(tag).ok_or(WireError::UnknownTag(tag))?;
    let sender = r.id()?;
    let round = r.u32()?;
    let body = match ty {
        MessageType::M1 => Body::KeyRequest {
            nonce_a: r.nonce()?,
            initiator: r.id()?,
        },
        MessageType::M2 => Body::KeyEstablish {
            nonce_a: r.nonce()?,
            nonce_b: r.nonce()?,
            responder: r.id()?,
            mac: r.mac()?,
        },
        MessageType::M3 => Body::SessionKeyForInitiator {
            sealed_key: r.sealed()?,
            peer: r.id()?,
            mac: r.mac()?,
        },
        MessageType::M4 => Body::SessionKeyForResponder {
            sealed_key: r.sealed()?,
            peer: r.id()?,
            mac: r.mac()?,
        },
        MessageType::M5 => Body::StateSubmit {
            request: Request(r.array()?),
            sealed_state: r.sealed()?,
        },
        MessageType::M6 => Body::HolderRequest {
            request: Request(r.array()?),
            holder: r.id()?,
        },
        MessageType::M7 => Body::OwnerDeal {
            sealed_share: r.sealed()?,
            sealed_referee_output: r.optional_sealed()?,
            mac: r.mac()?,
        },
        MessageType::M8 => Body::HolderDeal {
            sealed_share: r.sealed()?,
            owner: r.id()?,
            mac: r.mac()?,
        },
        MessageType::M9 => Body::HolderOutput {
            sealed_output: r.sealed()?,
            mac: r.mac()?,
        },
        MessageType::OutputSig => Body::OutputSignature {
            sealed_signature: r.sealed()?,
            mac: r.mac()?,
        },
        MessageType::Report => Body::Report { sealed: r.sealed()? },
        MessageType::OutputReport => Body::OutputReport { sealed: r.sealed()? },
        MessageType::Correction => Body::Correction { sealed: r.sealed()? },
        MessageType::Notify => Body::Notify {
            reason: NotifyReason::from_u8(r.u8()?).ok_or(WireError::BadField("notify reason"))?,
            subject: r.id()?,
            mac: r.mac()?,
        },
        MessageType::Join => Body::Join {
            credential: r.var()?.to_vec(),
            address: r.var()?.to_vec(),
        },
        MessageType::JoinAck => Body::JoinAck {
            id: r.id()?,
            sealed_state: r.sealed()?,
        },
        MessageType::JoinReject => Body::JoinReject {
            reason: match r.u8()? {
                1 => JoinRejection::UnknownCredential,
                2 => JoinRejection::AlreadyOnline,
                _ => return Err(WireError::BadField("join rejection")),
            },
        },
        MessageType::StateTransfer => Body::StateTransfer {
            player: r.id()?,
            sealed_state: r.sealed()?,
            mac: r.mac()?,
        },
        MessageType::Announce => Body::Announce {
            player: r.id()?,
            mac: r.mac()?,
        },
        MessageType::AoiPos => Body::AoiPos {
            position: r.i64()?,
            mac: r.mac()?,
        },
        MessageType::AoiMatch => Body::AoiMatch {
            peer: r.id()?,
            initiator: r.bool()?,
            mac: r.mac()?,
        },
        MessageType::RoundOpen => {
            let d_ms = r.u32()?;
            let event_a = r.field()?;
            let event_b = r.field()?;
            let owner = r.id()?;
            let k = r.u8()?;
            let n = r.u8()? as usize;
            let holders = (0..n).map(|_| r.id()).collect::<Result<Vec<_>, _>>()?;
            Body::RoundOpen {
                d_ms,
                event_a,
                event_b,
                owner,
                k,
                holders,
                mac: r.mac()?,
            }
        }
        MessageType::Leave => Body::Leave { mac: r.mac()? },
        MessageType::StoreState => Body::StoreState {
            player: r.id()?,
            sealed_state: r.sealed()?,
            offline: r.bool()?,
            mac: r.mac()?,
        },
        MessageType::LeaveAck => Body::LeaveAck {
            player: r.id()?,
            mac: r.mac()?,
        },
        MessageType::Remove => Body::Remove {
            player: r.id()?,
            reason: RemovalReason::from_u8(r.u8()?).ok_or(WireError::BadField("removal reason"))?,
            mac: r.mac()?,
        },
    };
    r.finish()?;
    Ok(ProtocolMessage { sender, round, body })
}

/// Reads only the header of a frame.
pub fn peek_header(bytes: &[u8]) -> Result<(MessageType, PlayerId, RoundIndex), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated);
    }
    let ty = MessageType::from_tag(bytes[0]).ok_or(WireError::UnknownTag(bytes[0]))?;
    let sender = PlayerId(u32::from_be_bytes(bytes[1..5].try_into().unwrap()));
    let round = u32::from_be_bytes(bytes[5..9].try_into().unwrap());
    Ok((ty, sender, round))
}

// ---------------------------------------------------------------------------
// Sealed plaintext layouts
// ---------------------------------------------------------------------------

/// `x-index (1) ‖ y (32)`.
pub fn encode_point(x: &FieldElement, y: &FieldElement) -> [u8; POINT_LEN] {
    let idx = x
        .to_u128()
        .and_then(|v| u8::try_from(v).ok())
        .filter(|&v| v != 0)
        .expect("evaluation points are holder indices in 1..=255");
    let mut out = [0u8; POINT_LEN];
    out[0] = idx;
    out[1..].copy_from_slice(&y.to_bytes());
    out
}

pub fn decode_point(bytes: &[u8]) -> Result<(FieldElement, FieldElement), WireError> {
    if bytes.len() != POINT_LEN {
        return Err(WireError::BadField("point length"));
    }
    if bytes[0] == 0 {
        return Err(WireError::BadField("zero evaluation point"));
    }
    let x = FieldElement::from_u64(bytes[0] as u64);
    let y = FieldElement::from_bytes(&bytes[1..]).map_err(|_| WireError::BadField("point y"))?;
    Ok((x, y))
}

pub fn encode_share(share: &Share) -> [u8; POINT_LEN] {
    encode_point(&share.x, &share.y)
}

pub fn decode_share(bytes: &[u8], owner: PlayerId, holder: HolderId, round: RoundIndex) -> Result<Share, WireError> {
    let (x, y) = decode_point(bytes)?;
    Ok(Share {
        owner,
        holder,
        round,
        x,
        y,
    })
}

pub fn encode_output(out: &Output) -> [u8; POINT_LEN] {
    encode_point(&out.x, &out.y)
}

pub fn decode_output(bytes: &[u8], holder: HolderId, round: RoundIndex) -> Result<Output, WireError> {
    let (x, y) = decode_point(bytes)?;
    Ok(Output { holder, round, x, y })
}

/// `R_A (16) ‖ X_A (32)`, the plaintext of M5.
pub fn encode_state_submission(request: &Request, state: &GameState) -> Vec<u8> {
    let mut v = Vec::with_capacity(REQUEST_LEN + FIELD_BYTES);
    v.extend_from_slice(&request.0);
    v.extend_from_slice(&state.to_bytes());
    v
}

pub fn decode_state_submission(bytes: &[u8]) -> Result<(Request, GameState), WireError> {
    if bytes.len() != REQUEST_LEN + FIELD_BYTES {
        return Err(WireError::BadField("state submission length"));
    }
    let req = Request(bytes[..REQUEST_LEN].try_into().unwrap());
    let state = FieldElement::from_bytes(&bytes[REQUEST_LEN..]).map_err(|_| WireError::BadField("state"))?;
    Ok((req, state))
}

pub fn encode_state(state: &GameState) -> Vec<u8> {
    state.to_bytes().to_vec()
}

pub fn decode_state(bytes: &[u8]) -> Result<GameState, WireError> {
    FieldElement::from_bytes(bytes).map_err(|_| WireError::BadField("state"))
}

/// Per-peer status inside an owner's round report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum EntryStatus {
    Received = 0,
    /// Case 1: nothing arrived from this holder.
    Missing = 1,
    /// Case 2: the packet arrived but could not be used.
    BadPacket = 2,
}

/// One `T_A` entry: sender id and the signed output as received, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryEntry {
    pub sender: PlayerId,
    pub status: EntryStatus,
    /// `(point bytes as received, signature as received)`.
    pub evidence: Option<([u8; POINT_LEN], Signature)>,
}

/// Plaintext of MP_AR: `restored (1) ‖ U_A (33 | 0) ‖ n (1) ‖ entries`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBody {
    pub restored: bool,
    pub own_output: Option<[u8; POINT_LEN]>,
    pub entries: Vec<SummaryEntry>,
}

impl ReportBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.u8(self.restored as u8);
        match &self.own_output {
            Some(p) => w.var(p),
            None => w.var(&[]),
        }
        w.u8(u8::try_from(self.entries.len()).expect("at most 255 entries"));
        for e in &self.entries {
            w.id(e.sender);
            w.u8(e.status as u8);
            match &e.evidence {
                Some((point, sig)) => {
                    w.u8(1);
                    w.raw(point);
                    w.raw(sig.as_bytes());
                }
                None => w.u8(0),
            }
        }
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let restored = r.bool()?;
        let own = r.var()?;
        let own_output = match own.len() {
            0 => None,
            POINT_LEN => Some(own.try_into().unwrap()),
            _ => return Err(WireError::BadField("own output")),
        };
        let n = r.u8()? as usize;
        let mut entries = Vec::with_capacity(n);
        for _ in 0..n {
            let sender = r.id()?;
            let status = match r.u8()? {
                0 => EntryStatus::Received,
                1 => EntryStatus::Missing,
                2 => EntryStatus::BadPacket,
                _ => return Err(WireError::BadField("entry status")),
            };
            let evidence = if r.bool()? {
                Some((r.array()?, Signature(r.array()?)))
            } else {
                None
            };
            entries.push(SummaryEntry {
                sender,
                status,
                evidence,
            });
        }
        r.finish()?;
        Ok(Self {
            restored,
            own_output,
            entries,
        })
    }
}

/// How a corrected output was obtained by the referee.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CorrectionKind {
    /// The holder's own report, forwarded (case 1).
    Forwarded = 1,
    /// Synthesized by the referee for a silent holder (case 1).
    DeadReckoned = 2,
    /// Replaces a bad packet (case 2).
    Corrected = 3,
}

/// Plaintext of CORRECTION: `holder (4) ‖ kind (1) ‖ point (33)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorrectionBody {
    pub holder: PlayerId,
    pub kind: CorrectionKind,
    pub point: [u8; POINT_LEN],
}

impl CorrectionBody {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.id(self.holder);
        w.u8(self.kind as u8);
        w.raw(&self.point);
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let holder = r.id()?;
        let kind = match r.u8()? {
            1 => CorrectionKind::Forwarded,
            2 => CorrectionKind::DeadReckoned,
            3 => CorrectionKind::Corrected,
            _ => return Err(WireError::BadField("correction kind")),
        };
        let point = r.array()?;
        r.finish()?;
        Ok(Self { holder, kind, point })
    }
}

/// Plaintext of OUTPUT_REPORT: `point (33) ‖ signature (64)`.
pub fn encode_signed_output(point: &[u8; POINT_LEN], sig: &Signature) -> Vec<u8> {
    let mut v = Vec::with_capacity(POINT_LEN + 64);
    v.extend_from_slice(point);
    v.extend_from_slice(sig.as_bytes());
    v
}

pub fn decode_signed_output(bytes: &[u8]) -> Result<([u8; POINT_LEN], Signature), WireError> {
    if bytes.len() != POINT_LEN + 64 {
        return Err(WireError::BadField("signed output length"));
    }
    Ok((
        bytes[..POINT_LEN].try_into().unwrap(),
        Signature(bytes[POINT_LEN..].try_into().unwrap()),
    ))
}

// ---------------------------------------------------------------------------
// MAC transcripts
// ---------------------------------------------------------------------------

/// Inputs covered by the MACs of M2–M4 and M7–M9. Each starts with the
/// frame header so a tag cannot be moved to another round or sender.
pub mod transcript {
    use super::*;

    /// H(K_BR, N_A, N_B, A, B)
    pub fn m2(header: &[u8; HEADER_LEN], n_a: &Nonce, n_b: &Nonce, a: PlayerId, b: PlayerId) -> Vec<u8> {
        let mut v = header.to_vec();
        v.extend_from_slice(n_a.as_bytes());
        v.extend_from_slice(n_b.as_bytes());
        v.extend_from_slice(&a.to_be_bytes());
        v.extend_from_slice(&b.to_be_bytes());
        v
    }

    /// H(K_AR, N_A, B, {K_AB}) and H(K_BR, N_B, A, {K_AB}).
    pub fn key_delivery(header: &[u8; HEADER_LEN], nonce: &Nonce, peer: PlayerId, sealed: &Ciphertext) -> Vec<u8> {
        let mut v = header.to_vec();
        v.extend_from_slice(nonce.as_bytes());
        v.extend_from_slice(&peer.to_be_bytes());
        v.extend_from_slice(&sealed.to_bytes());
        v
    }

    /// H(K_AR, R_A, B…, {SH_A}, {U_R}); `peers` are the other player holders.
    pub fn m7(
        header: &[u8; HEADER_LEN],
        request: &Request,
        peers: &[PlayerId],
        sealed_share: &Ciphertext,
        sealed_referee_output: Option<&Ciphertext>,
    ) -> Vec<u8> {
        let mut v = header.to_vec();
        v.extend_from_slice(&request.0);
        for p in peers {
            v.extend_from_slice(&p.to_be_bytes());
        }
        v.extend_from_slice(&sealed_share.to_bytes());
        if let Some(ct) = sealed_referee_output {
            v.extend_from_slice(&ct.to_bytes());
        }
        v
    }

    /// H(K_BR, R_B, A, {SH_B})
    pub fn m8(header: &[u8; HEADER_LEN], request: &Request, owner: PlayerId, sealed_share: &Ciphertext) -> Vec<u8> {
        let mut v = header.to_vec();
        v.extend_from_slice(&request.0);
        v.extend_from_slice(&owner.to_be_bytes());
        v.extend_from_slice(&sealed_share.to_bytes());
        v
    }

    /// H(K_AB, N_A, {U_B}); also used for the companion signature frame.
    pub fn peer_output(header: &[u8; HEADER_LEN], n_a: &Nonce, sealed: &Ciphertext) -> Vec<u8> {
        let mut v = header.to_vec();
        v.extend_from_slice(n_a.as_bytes());
        v.extend_from_slice(&sealed.to_bytes());
        v
    }
}

// ---------------------------------------------------------------------------
// Length profile
// ---------------------------------------------------------------------------

/// Canonical two-player M1–M9 instances built from a fixed seed.
pub fn canonical_protocol_messages() -> Vec<ProtocolMessage> {
    let mut rng = crypto::seeded_rng(0x5EED);
    let a = PlayerId(2);
    let b = PlayerId(3);
    let key = SymmetricKey([0x11; 32]);
    let kab = SymmetricKey([0x22; 32]);
    let n_a = crypto::generate_nonce(&mut rng);
    let n_b = crypto::generate_nonce(&mut rng);
    let point = encode_point(&FieldElement::from_u64(1), &FieldElement::from_u128(u128::MAX));
    let state = FieldElement::from_u128(0x0123_4567_89AB_CDEF_0123_4567_89AB_CDEF);
    let r_a = Request::random(&mut rng);
    let mac = MacTag([0xAB; 32]);
    let round = 1;
    vec![
        ProtocolMessage::new(a, round, Body::KeyRequest { nonce_a: n_a, initiator: a }),
        ProtocolMessage::new(
            b,
            round,
            Body::KeyEstablish {
                nonce_a: n_a,
                nonce_b: n_b,
                responder: b,
                mac,
            },
        ),
        ProtocolMessage::new(
            PlayerId::REFEREE,
            round,
            Body::SessionKeyForInitiator {
                sealed_key: crypto::seal(&key, kab.as_bytes(), &mut rng),
                peer: b,
                mac,
            },
        ),
        ProtocolMessage::new(
            PlayerId::REFEREE,
            round,
            Body::SessionKeyForResponder {
                sealed_key: crypto::seal(&key, kab.as_bytes(), &mut rng),
                peer: a,
                mac,
            },
        ),
        ProtocolMessage::new(
            a,
            round,
            Body::StateSubmit {
                request: r_a,
                sealed_state: crypto::seal(&key, &encode_state_submission(&r_a, &state), &mut rng),
            },
        ),
        ProtocolMessage::new(
            b,
            round,
            Body::HolderRequest {
                request: Request::random(&mut rng),
                holder: b,
            },
        ),
        ProtocolMessage::new(
            PlayerId::REFEREE,
            round,
            Body::OwnerDeal {
                sealed_share: crypto::seal(&key, &point, &mut rng),
                sealed_referee_output: Some(crypto::seal(&key, &point, &mut rng)),
                mac,
            },
        ),
        ProtocolMessage::new(
            PlayerId::REFEREE,
            round,
            Body::HolderDeal {
                sealed_share: crypto::seal(&key, &point, &mut rng),
                owner: a,
                mac,
            },
        ),
        ProtocolMessage::new(
            b,
            round,
            Body::HolderOutput {
                sealed_output: crypto::seal(&kab, &point, &mut rng),
                mac,
            },
        ),
    ]
}

/// Serialized length of a canonical instance of each of M1–M9.
pub fn message_length_profile() -> Vec<(MessageType, usize)> {
    canonical_protocol_messages()
        .iter()
        .map(|m| (m.message_type(), serialize(m).len()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn len_of(ty: MessageType) -> usize {
        message_length_profile().into_iter().find(|(t, _)| *t == ty).unwrap().1
    }

    #[test]
    fn header_plus_fixed_fields() {
        assert_eq!(len_of(MessageType::M1), HEADER_LEN + 32 + 4);
        assert_eq!(len_of(MessageType::M1), 45);
        assert_eq!(len_of(MessageType::M6), HEADER_LEN + 16 + 4);
        assert_eq!(len_of(MessageType::M6), 29);
    }

    #[test]
    fn m7_is_largest_and_m6_smallest() {
        let profile = message_length_profile();
        let m7 = len_of(MessageType::M7);
        let m6 = len_of(MessageType::M6);
        for (ty, len) in &profile {
            if *ty != MessageType::M7 {
                assert!(m7 > *len, "{ty} {len} >= M7 {m7}");
            }
            if *ty != MessageType::M6 {
                assert!(m6 < *len, "{ty} {len} <= M6 {m6}");
            }
        }
    }

    #[test]
    fn key_and_deal_messages_cluster() {
        let group = [
            MessageType::M2,
            MessageType::M3,
            MessageType::M4,
            MessageType::M8,
            MessageType::M9,
        ]
        .map(len_of);
        let spread = group.iter().max().unwrap() - group.iter().min().unwrap();
        assert!(spread <= 4, "{group:?}");
        assert!(len_of(MessageType::M1) > len_of(MessageType::M6));
    }

    #[test]
    fn canonical_messages_round_trip() {
        for m in canonical_protocol_messages() {
            assert_eq!(deserialize(&serialize(&m)).unwrap(), m);
        }
    }

    #[test]
    fn truncation_is_detected() {
        for m in canonical_protocol_messages() {
            let bytes = serialize(&m);
            assert!(deserialize(&bytes[..bytes.len() - 1]).is_err(), "{}", m.message_type());
        }
    }

    #[test]
    fn unknown_tag_is_rejected() {
        let mut bytes = serialize(&canonical_protocol_messages()[0]);
        bytes[0] = 0xEE;
        assert_eq!(deserialize(&bytes), Err(WireError::UnknownTag(0xEE)));
    }

    #[test]
    fn length_prefix_overrun_is_rejected() {
        let m = &canonical_protocol_messages()[2];
        let mut bytes = serialize(m);
        bytes[HEADER_LEN] = 0xFF;
        assert_eq!(deserialize(&bytes), Err(WireError::LengthOverrun));
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = serialize(&canonical_protocol_messages()[0]);
        bytes.push(0);
        assert_eq!(deserialize(&bytes), Err(WireError::TrailingBytes(1)));
    }

    #[test]
    fn report_body_round_trip() {
        let body = ReportBody {
            restored: false,
            own_output: Some([7; POINT_LEN]),
            entries: vec![
                SummaryEntry {
                    sender: PlayerId(3),
                    status: EntryStatus::BadPacket,
                    evidence: Some(([1; POINT_LEN], Signature([2; 64]))),
                },
                SummaryEntry {
                    sender: PlayerId(4),
                    status: EntryStatus::Missing,
                    evidence: None,
                },
            ],
        };
        assert_eq!(ReportBody::decode(&body.encode()).unwrap(), body);
    }

    #[test]
    fn control_mac_covers_header_and_payload() {
        let key = SymmetricKey([3; 32]);
        let m = ProtocolMessage::new(
            PlayerId(2),
            4,
            Body::AoiPos {
                position: -17,
                mac: MacTag([0; 32]),
            },
        )
        .with_control_mac(&key);
        assert!(m.verify_control_mac(&key));
        let mut moved = m.clone();
        moved.round = 5;
        assert!(!moved.verify_control_mac(&key));
    }

    #[test]
    fn zero_evaluation_point_is_rejected() {
        let mut p = [0u8; POINT_LEN];
        p[0] = 0;
        assert!(decode_point(&p).is_err());
    }
}
