// SPDX-License-Identifier: Apache-2.0

//! Probabilistic authenticated encryption (AES-128-GCM) and per-column key
//! derivation.

use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes128Gcm, Nonce, Tag};
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use sha2::Sha256;

use crate::error::{Error, Result};
use crate::model::{EdKind, EncryptedValue, NONCE_LEN, TAG_LEN};

pub const KEY_LEN: usize = 16;

/// The data owner's database key.
#[derive(Clone, PartialEq, Eq)]
pub struct MasterKey([u8; KEY_LEN]);

impl MasterKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    /// Parses the key-file format: 32 hex characters, surrounding
    /// whitespace ignored.
    pub fn from_hex(s: &str) -> Result<Self> {
        let raw = hex::decode(s.trim())
            .map_err(|e| Error::InvalidParams(format!("key is not valid hex: {e}")))?;
        let bytes: [u8; KEY_LEN] = raw.try_into().map_err(|raw: Vec<u8>| {
            Error::InvalidParams(format!("key must be {KEY_LEN} bytes, got {}", raw.len()))
        })?;
        Ok(Self(bytes))
    }

    /// Key-file contents, newline terminated.
    pub fn to_hex_line(&self) -> String {
        format!("{}\n", hex::encode(self.0))
    }
}

impl fmt::Debug for MasterKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("MasterKey(..)")
    }
}

/// Key for one (table, column) pair.
#[derive(Clone)]
pub struct ColumnKey {
    bytes: [u8; KEY_LEN],
    cipher: Aes128Gcm,
}

impl ColumnKey {
    pub fn from_bytes(bytes: [u8; KEY_LEN]) -> Self {
        Self {
            bytes,
            cipher: Aes128Gcm::new(&bytes.into()),
        }
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.bytes
    }
}

impl PartialEq for ColumnKey {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}

impl Eq for ColumnKey {}

impl fmt::Debug for ColumnKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ColumnKey(..)")
    }
}

/// Draws a fresh uniformly random master key.
pub fn pae_gen<R: RngCore + CryptoRng>(rng: &mut R) -> MasterKey {
    let mut bytes = [0u8; KEY_LEN];
    rng.fill_bytes(&mut bytes);
    MasterKey(bytes)
}

/// HMAC-SHA256 over `len(table) || table || len(column) || column` with
/// 4-byte big-endian lengths, truncated to 16 bytes.
pub fn derive_key(mk: &MasterKey, table: &str, column: &str) -> ColumnKey {
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&mk.0).expect("HMAC accepts any key size");
    for field in [table.as_bytes(), column.as_bytes()] {
        mac.update(&(field.len() as u32).to_be_bytes());
        mac.update(field);
    }
    let digest = mac.finalize().into_bytes();
    let mut bytes = [0u8; KEY_LEN];
    bytes.copy_from_slice(&digest[..KEY_LEN]);
    ColumnKey::from_bytes(bytes)
}

/// Encrypts `v` under `key` with the caller-supplied nonce. Nonces must not
/// repeat under one key.
pub fn pae_enc(key: &ColumnKey, nonce: [u8; NONCE_LEN], v: &[u8]) -> EncryptedValue {
    let mut body = v.to_vec();
    let tag = key
        .cipher
        .encrypt_in_place_detached(Nonce::from_slice(&nonce), b"", &mut body)
        .expect("plaintext within AES-GCM length limits");
    EncryptedValue {
        nonce,
        body,
        tag: tag.into(),
    }
}

/// Encrypts `v` under a fresh random nonce drawn from `rng`.
pub fn pae_enc_random<R: RngCore + CryptoRng>(
    key: &ColumnKey,
    rng: &mut R,
    v: &[u8],
) -> EncryptedValue {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    pae_enc(key, nonce, v)
}

pub fn pae_dec(key: &ColumnKey, c: &EncryptedValue) -> Result<Vec<u8>> {
    let mut body = c.body.clone();
    key.cipher
        .decrypt_in_place_detached(
            Nonce::from_slice(&c.nonce),
            b"",
            &mut body,
            Tag::from_slice(&c.tag),
        )
        .map_err(|_| Error::Auth)?;
    Ok(body)
}

/// Seals and opens dictionary entries for a column. Plain stores keep the
/// value in the clear with zeroed nonce and tag, so both kinds share one
/// on-disk layout.
#[derive(Debug, Clone)]
pub enum EntryCipher {
    Aead(Box<ColumnKey>),
    Plain,
}

impl EntryCipher {
    pub fn for_column(kind: EdKind, mk: &MasterKey, table: &str, column: &str) -> Self {
        if kind.is_plain() {
            EntryCipher::Plain
        } else {
            EntryCipher::Aead(Box::new(derive_key(mk, table, column)))
        }
    }

    pub fn seal<R: RngCore + CryptoRng>(&self, rng: &mut R, v: &[u8]) -> EncryptedValue {
        match self {
            EntryCipher::Aead(key) => pae_enc_random(key, rng, v),
            EntryCipher::Plain => EncryptedValue {
                nonce: [0; NONCE_LEN],
                body: v.to_vec(),
                tag: [0; TAG_LEN],
            },
        }
    }

    pub fn open(&self, c: &EncryptedValue) -> Result<Vec<u8>> {
        match self {
            EntryCipher::Aead(key) => pae_dec(key, c),
            EntryCipher::Plain => {
                if c.nonce != [0; NONCE_LEN] || c.tag != [0; TAG_LEN] {
                    return Err(Error::Auth);
                }
                Ok(c.body.clone())
            }
        }
    }
}
