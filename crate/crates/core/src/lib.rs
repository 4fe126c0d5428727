pub mod actor;
pub mod adversary;
pub mod crypto;
pub mod field;
pub mod ids;
pub mod netsim;
pub mod player;
pub mod referee;
pub mod runner;
pub mod server;
pub mod sharing;
pub mod wire;

pub use crypto::{Ciphertext, KeyPair, MacTag, Nonce, Signature, SymmetricKey, VerificationKey};
pub use field::{FieldElement, PrimeField, SmallField};
pub use ids::{HolderId, PlayerId, RoundIndex};
pub use sharing::{Consistency, Output, RoundEvent, Share, SharingError};
pub use wire::{Body, GameState, MessageType, ProtocolMessage, WireError};
