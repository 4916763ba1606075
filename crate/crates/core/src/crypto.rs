//! Cryptographic primitives for the marketplace: Keccak-256 hashing, the
//! hash lock used to gate batched payments, authenticated symmetric
//! encryption, ECDSA signing over secp256k1, and sealed sender-authenticated
//! envelopes for off-chain messages.
//!
//! All randomness is drawn from a caller-supplied seeded RNG so that whole
//! simulation runs are reproducible.

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use k256::ecdh;
use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature, SigningKey, VerifyingKey};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha3::{Digest, Keccak256};
use thiserror::Error;

/// RNG used everywhere in the simulation. One instance, owned by the engine.
pub type SimRng = rand_chacha::ChaCha20Rng;

/// Build the simulation RNG from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    /// Wrong key or tampered ciphertext.
    #[error("authentication failure")]
    AuthenticationFailure,
    /// Envelope signature does not verify against the sender key.
    #[error("signature invalid")]
    SignatureInvalid,
    /// Byte layout of an envelope or sealed message is broken.
    #[error("malformed message: {0}")]
    Malformed(&'static str),
}

macro_rules! hex_bytes_newtype {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }
        }

        impl std::fmt::Debug for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, concat!(stringify!($name), "({})"), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                let raw = hex::decode(text.trim_start_matches("0x"))
                    .map_err(serde::de::Error::custom)?;
                Self::from_slice(&raw).ok_or_else(|| {
                    serde::de::Error::custom(concat!("expected ", $len, " bytes"))
                })
            }
        }
    };
}

/// 32-byte digest. Equality is byte equality.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Hash32(pub [u8; 32]);
hex_bytes_newtype!(Hash32, 32);

/// 32-byte symmetric key.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymKey(pub [u8; 32]);
hex_bytes_newtype!(SymKey, 32);

/// 20-byte account address, derived from a public key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);
hex_bytes_newtype!(Address, 20);

/// Compressed SEC1 public key (33 bytes), used both for signature checks and
/// as the recipient point of sealed messages.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PubKey(pub [u8; 33]);
hex_bytes_newtype!(PubKey, 33);

/// 64-byte compact ECDSA signature carried inside wire messages.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct Sig64(pub [u8; 64]);
hex_bytes_newtype!(Sig64, 64);

impl std::fmt::Display for Address {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "0x{}", self.to_hex())
    }
}

impl SymKey {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; 32];
        rng.fill_bytes(&mut bytes);
        SymKey(bytes)
    }
}

impl PubKey {
    pub fn verifying_key(&self) -> Result<VerifyingKey, CryptoError> {
        VerifyingKey::from_sec1_bytes(&self.0).map_err(|_| CryptoError::Malformed("public key"))
    }

    /// Account address: low 20 bytes of the Keccak-256 digest of the
    /// compressed key encoding.
    pub fn address(&self) -> Address {
        let digest = hash(&self.0);
        let mut out = [0u8; 20];
        out.copy_from_slice(&digest.0[12..]);
        Address(out)
    }
}

/// Keccak-256.
pub fn hash(data: &[u8]) -> Hash32 {
    let mut hasher = Keccak256::new();
    hasher.update(data);
    Hash32(hasher.finalize().into())
}

/// Hash commitment binding a payment batch to a notary id and master key.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Lock {
    pub digest: Hash32,
}

/// Preimage layout: 4-byte big-endian notary id followed by the 32 master
/// key bytes.
fn lock_preimage(notary_id: u32, master_key: &SymKey) -> [u8; 36] {
    let mut preimage = [0u8; 36];
    preimage[..4].copy_from_slice(&notary_id.to_be_bytes());
    preimage[4..].copy_from_slice(&master_key.0);
    preimage
}

pub fn make_lock(notary_id: u32, master_key: &SymKey) -> Lock {
    Lock {
        digest: hash(&lock_preimage(notary_id, master_key)),
    }
}

pub fn verify_lock(lock: &Lock, notary_id: u32, master_key: &SymKey) -> bool {
    hash(&lock_preimage(notary_id, master_key)) == lock.digest
}

/// Authenticated AES-256-GCM ciphertext with the tag held separately.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct Ciphertext {
    pub nonce: [u8; 12],
    pub body: Vec<u8>,
    pub tag: [u8; 16],
}

impl Ciphertext {
    /// nonce (12) || tag (16) || body
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(28 + self.body.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 28 {
            return Err(CryptoError::Malformed("ciphertext too short"));
        }
        Ok(Ciphertext {
            nonce: bytes[..12].try_into().unwrap(),
            tag: bytes[12..28].try_into().unwrap(),
            body: bytes[28..].to_vec(),
        })
    }
}

pub fn sym_encrypt<R: RngCore + CryptoRng>(
    key: &SymKey,
    plaintext: &[u8],
    rng: &mut R,
) -> Ciphertext {
    let mut nonce = [0u8; 12];
    rng.fill_bytes(&mut nonce);
    let cipher = Aes256Gcm::new(key.0.as_slice().into());
    let mut sealed = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload::from(plaintext))
        .expect("AES-GCM encryption is infallible for in-memory buffers");
    // aes-gcm appends the tag to the ciphertext
    let tag_at = sealed.len() - 16;
    let tag: [u8; 16] = sealed[tag_at..].try_into().unwrap();
    sealed.truncate(tag_at);
    Ciphertext {
        nonce,
        body: sealed,
        tag,
    }
}

pub fn sym_decrypt(key: &SymKey, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new(key.0.as_slice().into());
    let mut sealed = ct.body.clone();
    sealed.extend_from_slice(&ct.tag);
    cipher
        .decrypt(Nonce::from_slice(&ct.nonce), sealed.as_slice())
        .map_err(|_| CryptoError::AuthenticationFailure)
}

/// Signing key pair with the derived account address.
#[derive(Clone)]
pub struct SigningKeyPair {
    secret: SigningKey,
    public: PubKey,
    address: Address,
}

impl std::fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SigningKeyPair")
            .field("address", &self.address)
            .finish_non_exhaustive()
    }
}

impl SigningKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let secret = SigningKey::random(rng);
        let public = PubKey(
            secret
                .verifying_key()
                .to_encoded_point(true)
                .as_bytes()
                .try_into()
                .expect("compressed SEC1 point is 33 bytes"),
        );
        let address = public.address();
        SigningKeyPair {
            secret,
            public,
            address,
        }
    }

    pub fn public(&self) -> PubKey {
        self.public
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn sign(&self, msg: &[u8]) -> [u8; 64] {
        let sig: Signature = self.secret.sign(msg);
        sig.to_bytes().into()
    }
}

pub fn verify(pk: &PubKey, msg: &[u8], sig: &[u8; 64]) -> bool {
    let Ok(key) = pk.verifying_key() else {
        return false;
    };
    let Ok(sig) = Signature::from_slice(sig) else {
        return false;
    };
    key.verify(msg, &sig).is_ok()
}

/// Off-chain message body: payload plus the sender's signature of the
/// payload and the sender's public key.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Envelope {
    pub payload: Vec<u8>,
    pub signature: [u8; 64],
    pub sender_pk: PubKey,
}

impl Envelope {
    /// Wire layout, bit-exact: 4-byte big-endian payload length || payload
    /// || 64-byte signature || 33-byte compressed sender key.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.payload.len() + 64 + 33);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.signature);
        out.extend_from_slice(&self.sender_pk.0);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < 4 {
            return Err(CryptoError::Malformed("envelope too short"));
        }
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        if bytes.len() != 4 + len + 64 + 33 {
            return Err(CryptoError::Malformed("envelope length mismatch"));
        }
        let payload = bytes[4..4 + len].to_vec();
        let signature: [u8; 64] = bytes[4 + len..4 + len + 64].try_into().unwrap();
        let sender_pk = PubKey(bytes[4 + len + 64..].try_into().unwrap());
        Ok(Envelope {
            payload,
            signature,
            sender_pk,
        })
    }
}

fn shared_key(ephemeral_pk: &PubKey, shared_x: &[u8]) -> SymKey {
    let mut material = Vec::with_capacity(33 + shared_x.len());
    material.extend_from_slice(&ephemeral_pk.0);
    material.extend_from_slice(shared_x);
    SymKey(hash(&material).0)
}

/// Sign-then-encrypt: wrap `payload` in an [`Envelope`] signed by `sender`,
/// then seal it to `recipient_pk` with an ephemeral ECDH key agreement and
/// AES-256-GCM. Layout: 33-byte ephemeral key || ciphertext bytes.
pub fn seal_message<R: RngCore + CryptoRng>(
    sender: &SigningKeyPair,
    recipient_pk: &PubKey,
    payload: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    let envelope = Envelope {
        signature: sender.sign(payload),
        payload: payload.to_vec(),
        sender_pk: sender.public(),
    };
    let recipient = recipient_pk.verifying_key()?;
    let ephemeral = SigningKey::random(rng);
    let ephemeral_pk = PubKey(
        ephemeral
            .verifying_key()
            .to_encoded_point(true)
            .as_bytes()
            .try_into()
            .unwrap(),
    );
    let shared = ecdh::diffie_hellman(ephemeral.as_nonzero_scalar(), recipient.as_affine());
    let key = shared_key(&ephemeral_pk, shared.raw_secret_bytes());
    let ct = sym_encrypt(&key, &envelope.to_bytes(), rng);
    let mut out = Vec::with_capacity(33 + 28 + ct.body.len());
    out.extend_from_slice(&ephemeral_pk.0);
    out.extend_from_slice(&ct.to_bytes());
    Ok(out)
}

/// Open a sealed message: decrypt with the recipient secret key, then check
/// the sender's signature. Returns the payload and the authenticated sender.
pub fn open_message(
    recipient: &SigningKeyPair,
    sealed: &[u8],
) -> Result<(Vec<u8>, PubKey), CryptoError> {
    if sealed.len() < 33 + 28 {
        return Err(CryptoError::Malformed("sealed message too short"));
    }
    let ephemeral_pk = PubKey(sealed[..33].try_into().unwrap());
    let ephemeral = ephemeral_pk.verifying_key()?;
    let ct = Ciphertext::from_bytes(&sealed[33..])?;
    let shared = ecdh::diffie_hellman(recipient.secret.as_nonzero_scalar(), ephemeral.as_affine());
    let key = shared_key(&ephemeral_pk, shared.raw_secret_bytes());
    let plaintext = sym_decrypt(&key, &ct)?;
    let envelope = Envelope::from_bytes(&plaintext)?;
    if !verify(&envelope.sender_pk, &envelope.payload, &envelope.signature) {
        return Err(CryptoError::SignatureInvalid);
    }
    Ok((envelope.payload, envelope.sender_pk))
}
