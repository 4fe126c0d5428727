//! Symmetric and asymmetric primitives used by every protocol frame.
//!
//! The concrete algorithms are AES-256-GCM with a 16-byte IV for sealing,
//! HMAC-SHA256 for tagging and Ed25519 for signatures. Callers only see the
//! fixed-size newtypes below, so the wire layout never depends on the choice.
//! All randomness is drawn from a caller-supplied RNG so that a scenario seed
//! fully determines every nonce, key and IV.

use aes_gcm::aead::consts::U16;
use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::aes::Aes256;
use aes_gcm::{AesGcm, Nonce as GcmNonce, Tag};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hmac::{Hmac, Mac};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::Sha256;
use subtle::ConstantTimeEq;
use thiserror::Error;

type Aes256Gcm16 = AesGcm<Aes256, U16>;
type HmacSha256 = Hmac<Sha256>;

pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 32;
pub const MAC_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const IV_LEN: usize = 16;
pub const AUTH_TAG_LEN: usize = 16;
/// Bytes a sealed payload adds on top of its plaintext.
pub const SEAL_OVERHEAD: usize = IV_LEN + AUTH_TAG_LEN;

/// Deterministic randomness source threaded through every randomized op.
pub type SimRng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha20Rng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    /// Covers both tampering and a wrong key; the two are indistinguishable.
    #[error("authentication failed")]
    AuthenticationFailed,
    #[error("expected {expected} bytes, got {actual}")]
    InvalidLength { expected: usize, actual: usize },
}

macro_rules! fixed_bytes {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::InvalidLength {
                    expected: $len,
                    actual: bytes.len(),
                })?;
                Ok(Self(arr))
            }

            pub fn random(rng: &mut impl RngCore) -> Self {
                let mut out = [0u8; $len];
                rng.fill_bytes(&mut out);
                Self(out)
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }
    };
}

fixed_bytes!(
    /// Shared symmetric key (long-term `K_iR` or session `K_AB`).
    SymmetricKey,
    KEY_LEN
);
fixed_bytes!(Nonce, NONCE_LEN);
fixed_bytes!(MacTag, MAC_LEN);
fixed_bytes!(Signature, SIGNATURE_LEN);
fixed_bytes!(VerificationKey, KEY_LEN);

// Keys must never end up in logs.
impl std::fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SymmetricKey(..)")
    }
}

impl std::fmt::Debug for Nonce {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Nonce({})", hex::encode(&self.0[..6]))
    }
}

impl std::fmt::Debug for MacTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "MacTag({})", hex::encode(&self.0[..6]))
    }
}

impl std::fmt::Debug for Signature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0[..6]))
    }
}

impl std::fmt::Debug for VerificationKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "VerificationKey({})", hex::encode(&self.0[..6]))
    }
}

/// Signing key plus its public verification key.
#[derive(Clone)]
pub struct KeyPair {
    signing_key: [u8; KEY_LEN],
    pub verification_key: VerificationKey,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("verification_key", &self.verification_key)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut seed = [0u8; KEY_LEN];
        rng.fill_bytes(&mut seed);
        Self::from_seed(seed)
    }

    pub fn from_seed(seed: [u8; KEY_LEN]) -> Self {
        let sk = SigningKey::from_bytes(&seed);
        Self {
            signing_key: seed,
            verification_key: VerificationKey(sk.verifying_key().to_bytes()),
        }
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(&self.signing_key, message)
    }
}

/// AEAD output: `iv ‖ body ‖ auth_tag` on the wire.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub iv: [u8; IV_LEN],
    pub body: Vec<u8>,
    pub auth_tag: [u8; AUTH_TAG_LEN],
}

impl std::fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.encoded_len())
    }
}

impl Ciphertext {
    pub fn encoded_len(&self) -> usize {
        SEAL_OVERHEAD + self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.body);
        out.extend_from_slice(&self.auth_tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < SEAL_OVERHEAD {
            return Err(CryptoError::InvalidLength {
                expected: SEAL_OVERHEAD,
                actual: bytes.len(),
            });
        }
        let (iv, rest) = bytes.split_at(IV_LEN);
        let (body, tag) = rest.split_at(rest.len() - AUTH_TAG_LEN);
        Ok(Self {
            iv: iv.try_into().expect("split at IV_LEN"),
            body: body.to_vec(),
            auth_tag: tag.try_into().expect("split at AUTH_TAG_LEN"),
        })
    }
}

pub fn generate_nonce(rng: &mut impl RngCore) -> Nonce {
    Nonce::random(rng)
}

/// Fresh session key minted by the referee.
pub fn derive_session_key(rng: &mut impl RngCore) -> SymmetricKey {
    SymmetricKey::random(rng)
}

pub fn mac(key: &SymmetricKey, message: &[u8]) -> MacTag {
    mac_parts(key, &[message])
}

/// MAC over the concatenation of `parts` without materializing it.
pub fn mac_parts(key: &SymmetricKey, parts: &[&[u8]]) -> MacTag {
    let mut h = <HmacSha256 as Mac>::new_from_slice(&key.0).expect("hmac accepts any key length");
    for p in parts {
        h.update(p);
    }
    MacTag(h.finalize().into_bytes().into())
}

/// Constant-time tag comparison.
pub fn verify_mac(key: &SymmetricKey, message: &[u8], tag: &MacTag) -> bool {
    verify_mac_parts(key, &[message], tag)
}

pub fn verify_mac_parts(key: &SymmetricKey, parts: &[&[u8]], tag: &MacTag) -> bool {
    let expected = mac_parts(key, parts);
    expected.0.ct_eq(&tag.0).into()
}

pub fn seal(key: &SymmetricKey, plaintext: &[u8], rng: &mut impl RngCore) -> Ciphertext {
    seal_with_aad(key, &[], plaintext, rng)
}

/// Seals `plaintext`, binding `aad` (typically the frame header) into the tag.
pub fn seal_with_aad(
    key: &SymmetricKey,
    aad: &[u8],
    plaintext: &[u8],
    rng: &mut impl RngCore,
) -> Ciphertext {
    let mut iv = [0u8; IV_LEN];
    rng.fill_bytes(&mut iv);
    let cipher = Aes256Gcm16::new_from_slice(&key.0).expect("32-byte key");
    let mut body = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(GcmNonce::<U16>::from_slice(&iv), aad, &mut body)
        .expect("plaintext within AES-GCM limits");
    Ciphertext {
        iv,
        body,
        auth_tag: tag.into(),
    }
}

pub fn open(key: &SymmetricKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    open_with_aad(key, &[], ct)
}

pub fn open_with_aad(key: &SymmetricKey, aad: &[u8], ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm16::new_from_slice(&key.0).expect("32-byte key");
    let mut body = ct.body.clone();
    cipher
        .decrypt_in_place_detached(
            GcmNonce::<U16>::from_slice(&ct.iv),
            aad,
            &mut body,
            Tag::from_slice(&ct.auth_tag),
        )
        .map_err(|_| CryptoError::AuthenticationFailed)?;
    Ok(body)
}

pub fn sign(signing_key: &[u8; KEY_LEN], message: &[u8]) -> Signature {
    let sk = SigningKey::from_bytes(signing_key);
    Signature(sk.sign(message).to_bytes())
}

pub fn verify_signature(vk: &VerificationKey, message: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&vk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig.0);
    vk.verify_strict(message, &sig).is_ok()
}
