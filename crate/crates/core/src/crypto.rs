//! AES-256-CBC with PKCS#7 padding, and key-to-key re-encryption.
//!
//! Envelopes travel as `iv || body`. They are not authenticated: a wrong key
//! or corrupted body is caught only when the padding happens not to verify.

use std::fmt;

use aes::cipher::block_padding::Pkcs7;
use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use rand::RngCore;
use thiserror::Error;

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

pub const KEY_LEN: usize = 32;
pub const BLOCK_LEN: usize = 16;
pub const IV_LEN: usize = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CryptoError {
    #[error("invalid padding after decryption")]
    BadPadding,
    #[error("malformed cipher envelope ({0} bytes)")]
    MalformedEnvelope(usize),
    #[error("key must be {KEY_LEN} bytes, got {0}")]
    BadKeyLength(usize),
}

#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey([u8; KEY_LEN]);

impl SymmetricKey {
    pub fn new(bytes: [u8; KEY_LEN]) -> Self {
        SymmetricKey(bytes)
    }

    pub fn generate() -> Self {
        let mut bytes = [0u8; KEY_LEN];
        rand::thread_rng().fill_bytes(&mut bytes);
        SymmetricKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }
}

impl TryFrom<&[u8]> for SymmetricKey {
    type Error = CryptoError;

    fn try_from(bytes: &[u8]) -> Result<Self, Self::Error> {
        bytes
            .try_into()
            .map(SymmetricKey)
            .map_err(|_| CryptoError::BadKeyLength(bytes.len()))
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(<redacted>)")
    }
}

impl Drop for SymmetricKey {
    fn drop(&mut self) {
        // Best effort; the optimizer may still leave copies elsewhere.
        for b in self.0.iter_mut() {
            unsafe { std::ptr::write_volatile(b, 0) };
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherEnvelope {
    pub iv: [u8; IV_LEN],
    body: Vec<u8>,
}

impl CipherEnvelope {
    pub fn new(iv: [u8; IV_LEN], body: Vec<u8>) -> Result<Self, CryptoError> {
        if body.is_empty() || !body.len().is_multiple_of(BLOCK_LEN) {
            return Err(CryptoError::MalformedEnvelope(IV_LEN + body.len()));
        }
        Ok(CipherEnvelope { iv, body })
    }

    /// Parses the `iv || body` wire form.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < IV_LEN {
            return Err(CryptoError::MalformedEnvelope(bytes.len()));
        }
        let (iv, body) = bytes.split_at(IV_LEN);
        Self::new(iv.try_into().unwrap(), body.to_vec())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(IV_LEN + self.body.len());
        out.extend_from_slice(&self.iv);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn body(&self) -> &[u8] {
        &self.body
    }
}

/// Length of the ciphertext body for an `n`-byte plaintext.
pub fn padded_len(n: usize) -> usize {
    (n / BLOCK_LEN + 1) * BLOCK_LEN
}

pub fn encrypt(key: &SymmetricKey, plaintext: &[u8]) -> CipherEnvelope {
    let mut iv = [0u8; IV_LEN];
    rand::thread_rng().fill_bytes(&mut iv);
    encrypt_with_iv(key, &iv, plaintext)
}

pub fn encrypt_with_iv(key: &SymmetricKey, iv: &[u8; IV_LEN], plaintext: &[u8]) -> CipherEnvelope {
    let body = Aes256CbcEnc::new(key.as_bytes().into(), iv.into())
        .encrypt_padded_vec_mut::<Pkcs7>(plaintext);
    CipherEnvelope { iv: *iv, body }
}

pub fn decrypt(key: &SymmetricKey, envelope: &CipherEnvelope) -> Result<Vec<u8>, CryptoError> {
    Aes256CbcDec::new(key.as_bytes().into(), (&envelope.iv).into())
        .decrypt_padded_vec_mut::<Pkcs7>(&envelope.body)
        .map_err(|_| CryptoError::BadPadding)
}

/// Decrypts under `from` and re-encrypts under `to` with a fresh IV. The
/// recovered plaintext is wiped before returning.
pub fn reencrypt(
    from: &SymmetricKey,
    to: &SymmetricKey,
    envelope: &CipherEnvelope,
) -> Result<CipherEnvelope, CryptoError> {
    let mut plaintext = decrypt(from, envelope)?;
    let out = encrypt(to, &plaintext);
    for b in plaintext.iter_mut() {
        unsafe { std::ptr::write_volatile(b, 0) };
    }
    Ok(out)
}
