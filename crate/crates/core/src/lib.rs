//! A write-through key-value cache over a sealed object store, served to
//! untrusted clients over a newline-delimited base64 protocol, with a
//! key-to-key re-encryption operation and a benchmark harness.
//!
//! Layering, bottom up:
//!
//! - [`store`]: sealed one-file-per-object storage (AES-256-GCM).
//! - [`cache`]: bounded LRU/FIFO cache writing through to a [`cache::Backend`].
//! - [`crypto`]: AES-256-CBC/PKCS#7 envelopes and re-encryption.
//! - [`wire`]: base64 and protocol frames.
//! - [`transport`]: TCP connections and frame reassembly.
//! - [`daemon`]: request dispatch, the serving loop and the client.
//! - [`bench`]: workload generators and CSV output.

pub mod bench;
pub mod cache;
pub mod crypto;
pub mod daemon;
pub mod store;
pub mod transport;
pub mod wire;

pub use cache::{Backend, Cache, CacheConfig, CacheError, Policy};
pub use store::{SecureStore, StoreError};
