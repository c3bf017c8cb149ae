//! Sealed object store.
//!
//! Each object is one file under the store root, named by the SHA-256 of its
//! id, holding an AES-256-GCM sealed record:
//!
//! ```text
//! "KVTZ" | 0x01 | nonce[12] | seal( id_len:u32be | id | value ) | tag[16]
//! ```
//!
//! The 5 header bytes are bound as associated data. The sealing key is a raw
//! 32-byte keyfile created on first open; it stands in for a hardware-unique
//! key and is only as safe as the file permissions protecting it.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use rand::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cache::Backend;

pub const MAGIC: &[u8; 4] = b"KVTZ";
pub const VERSION: u8 = 0x01;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const HEADER_LEN: usize = MAGIC.len() + 1;
pub const KEY_LEN: usize = 32;
pub const OBJECT_EXT: &str = "kvtz";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("object not found")]
    NotFound,
    #[error("object failed authentication")]
    Integrity,
    #[error("keyfile {path}: expected {KEY_LEN} bytes, found {len}")]
    BadKeyfile { path: PathBuf, len: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub struct SecureStore {
    root: PathBuf,
    aead: Aes256Gcm,
}

impl std::fmt::Debug for SecureStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SecureStore").field("root", &self.root).finish_non_exhaustive()
    }
}

impl SecureStore {
    /// Opens (creating if needed) a store rooted at `root_dir`, sealed with the
    /// key in `keyfile`. A missing keyfile is generated with mode 0600.
    pub fn open(root_dir: impl AsRef<Path>, keyfile: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root_dir.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        let key = load_or_create_key(keyfile.as_ref())?;
        Ok(Self::with_key(root, &key))
    }

    /// Opens a store with an explicit sealing key.
    pub fn with_key(root: PathBuf, key: &[u8; KEY_LEN]) -> Self {
        SecureStore {
            root,
            aead: Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(key)),
        }
    }

    pub fn root_dir(&self) -> &Path {
        &self.root
    }

    /// `root/<hex(sha256(id))>.kvtz`. Hostile ids cannot escape the root.
    pub fn object_path(&self, id: &[u8]) -> PathBuf {
        let digest = Sha256::digest(id);
        self.root.join(format!("{}.{OBJECT_EXT}", hex::encode(digest)))
    }

    /// Seals `value` under `id`, atomically replacing any previous object.
    pub fn write_ss(&self, id: &[u8], value: &[u8]) -> Result<(), StoreError> {
        let sealed = self.seal(id, value);
        let target = self.object_path(id);

        let mut tmp_name = [0u8; 8];
        rand::thread_rng().fill_bytes(&mut tmp_name);
        let tmp = self.root.join(format!(".{}.tmp", hex::encode(tmp_name)));
        let result = (|| {
            let mut f = OpenOptions::new().write(true).create_new(true).open(&tmp)?;
            f.write_all(&sealed)?;
            f.sync_all()?;
            fs::rename(&tmp, &target)?;
            sync_dir(&self.root)
        })();
        if result.is_err() {
            let _ = fs::remove_file(&tmp);
        }
        result.map_err(StoreError::Io)
    }

    pub fn read_ss(&self, id: &[u8]) -> Result<Vec<u8>, StoreError> {
        let raw = match fs::read(self.object_path(id)) {
            Ok(raw) => raw,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound),
            Err(e) => return Err(e.into()),
        };
        self.unseal(id, &raw)
    }

    fn seal(&self, id: &[u8], value: &[u8]) -> Vec<u8> {
        let mut nonce = [0u8; NONCE_LEN];
        rand::thread_rng().fill_bytes(&mut nonce);

        let id_len = u32::try_from(id.len()).expect("id length fits in u32");
        let mut record = Vec::with_capacity(4 + id.len() + value.len());
        record.extend_from_slice(&id_len.to_be_bytes());
        record.extend_from_slice(id);
        record.extend_from_slice(value);

        let mut out = Vec::with_capacity(HEADER_LEN + NONCE_LEN + record.len() + TAG_LEN);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        let sealed = self
            .aead
            .encrypt(
                Nonce::from_slice(&nonce),
                Payload {
                    msg: &record,
                    aad: &out[..HEADER_LEN],
                },
            )
            .expect("AES-GCM encryption of in-memory buffer");
        out.extend_from_slice(&nonce);
        out.extend_from_slice(&sealed);
        out
    }

    fn unseal(&self, id: &[u8], raw: &[u8]) -> Result<Vec<u8>, StoreError> {
        if raw.len() < HEADER_LEN + NONCE_LEN + TAG_LEN {
            return Err(StoreError::Integrity);
        }
        let (header, rest) = raw.split_at(HEADER_LEN);
        if &header[..4] != MAGIC || header[4] != VERSION {
            return Err(StoreError::Integrity);
        }
        let (nonce, sealed) = rest.split_at(NONCE_LEN);
        let record = self
            .aead
            .decrypt(Nonce::from_slice(nonce), Payload { msg: sealed, aad: header })
            .map_err(|_| StoreError::Integrity)?;

        let (len_bytes, body) = record.split_at_checked(4).ok_or(StoreError::Integrity)?;
        let id_len = u32::from_be_bytes(len_bytes.try_into().unwrap()) as usize;
        if body.len() < id_len || &body[..id_len] != id {
            return Err(StoreError::Integrity);
        }
        Ok(body[id_len..].to_vec())
    }
}

impl Backend for SecureStore {
    fn read(&mut self, id: &[u8]) -> Result<Vec<u8>, StoreError> {
        self.read_ss(id)
    }

    fn write(&mut self, id: &[u8], value: &[u8]) -> Result<(), StoreError> {
        self.write_ss(id, value)
    }
}

fn load_or_create_key(path: &Path) -> Result<[u8; KEY_LEN], StoreError> {
    match fs::read(path) {
        Ok(bytes) => bytes.as_slice().try_into().map_err(|_| StoreError::BadKeyfile {
            path: path.to_path_buf(),
            len: bytes.len(),
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let mut key = [0u8; KEY_LEN];
            rand::thread_rng().fill_bytes(&mut key);
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            let mut f = owner_only(OpenOptions::new().write(true).create_new(true)).open(path)?;
            f.write_all(&key)?;
            f.sync_all()?;
            Ok(key)
        }
        Err(e) => Err(e.into()),
    }
}

#[cfg(unix)]
fn owner_only(opts: &mut OpenOptions) -> &mut OpenOptions {
    use std::os::unix::fs::OpenOptionsExt;
    opts.mode(0o600)
}

#[cfg(not(unix))]
fn owner_only(opts: &mut OpenOptions) -> &mut OpenOptions {
    opts
}

#[cfg(unix)]
fn sync_dir(dir: &Path) -> io::Result<()> {
    File::open(dir)?.sync_all()
}

#[cfg(not(unix))]
fn sync_dir(_dir: &Path) -> io::Result<()> {
    Ok(())
}
