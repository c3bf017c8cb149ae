//! C ABI over the kevlar cache, sealed store, AES envelopes and base64 codec.
//!
//! Conventions:
//!
//! - Every fallible call returns a [`KevlarStatus`]; `KEVLAR_STATUS_OK` is 0.
//! - Caches are opaque `KevlarCache*` handles from [`kevlar_cache_open`],
//!   released with [`kevlar_cache_free`]. A handle must not be used from two
//!   threads at once.
//! - Byte outputs are returned in a [`KevlarBuffer`] owned by the caller and
//!   released with [`kevlar_buffer_free`].
//! - The message for the most recent failure on the calling thread is
//!   available from [`kevlar_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kevlar::cache::{Cache, CacheConfig, CacheError, CacheStats, Policy};
use kevlar::crypto::{self, CipherEnvelope, CryptoError, SymmetricKey};
use kevlar::store::{SecureStore, StoreError};
use kevlar::wire;

/// Result codes shared by every entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KevlarStatus {
    Ok = 0,
    NotFound = 1,
    BadRequest = 2,
    CryptoFail = 3,
    StoreFail = 4,
    TooLarge = 5,
    InvalidArgument = 6,
    IntegrityFailure = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KevlarPolicy {
    Lru = 0,
    Fifo = 1,
}

/// Heap bytes handed to C. Free with [`kevlar_buffer_free`].
#[repr(C)]
#[derive(Debug)]
pub struct KevlarBuffer {
    pub data: *mut u8,
    pub len: usize,
}

#[repr(C)]
#[derive(Debug, Default, Clone, Copy)]
pub struct KevlarStats {
    pub hits: u64,
    pub misses: u64,
    pub not_found: u64,
    pub store_failures: u64,
    pub evictions: u64,
    pub saves: u64,
    pub resident: u64,
}

/// Opaque cache handle.
pub struct KevlarCache {
    inner: Cache<SecureStore>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(KevlarStatus, String);

impl From<CacheError> for Failure {
    fn from(e: CacheError) -> Self {
        let status = match &e {
            CacheError::NotFound => KevlarStatus::NotFound,
            CacheError::IdTooLong { .. } | CacheError::ValueTooLong { .. } => KevlarStatus::TooLarge,
            CacheError::EmptyId | CacheError::InvalidConfig(_) => KevlarStatus::InvalidArgument,
            CacheError::Store(StoreError::Integrity) => KevlarStatus::IntegrityFailure,
            CacheError::Store(_) => KevlarStatus::StoreFail,
        };
        Failure(status, e.to_string())
    }
}

impl From<StoreError> for Failure {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound => KevlarStatus::NotFound,
            StoreError::Integrity => KevlarStatus::IntegrityFailure,
            StoreError::BadKeyfile { .. } | StoreError::Io(_) => KevlarStatus::StoreFail,
        };
        Failure(status, e.to_string())
    }
}

impl From<CryptoError> for Failure {
    fn from(e: CryptoError) -> Self {
        Failure(KevlarStatus::CryptoFail, e.to_string())
    }
}

impl From<wire::WireError> for Failure {
    fn from(e: wire::WireError) -> Self {
        Failure(KevlarStatus::BadRequest, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(KevlarStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KevlarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KevlarStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            KevlarStatus::Panic
        }
    }
}

/// Borrows `len` bytes at `ptr`; NULL is only accepted when `len` is 0.
unsafe fn bytes<'a>(ptr: *const u8, len: usize) -> Result<&'a [u8], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(invalid("null data pointer with non-zero length"));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn path(ptr: *const c_char) -> Result<PathBuf, Failure> {
    if ptr.is_null() {
        return Err(invalid("null path"));
    }
    let s = CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn key(ptr: *const u8) -> Result<SymmetricKey, Failure> {
    Ok(SymmetricKey::try_from(bytes(ptr, crypto::KEY_LEN)?)?)
}

unsafe fn emit(out: *mut KevlarBuffer, data: Vec<u8>) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("null output buffer"));
    }
    let boxed = data.into_boxed_slice();
    let len = boxed.len();
    let data = Box::into_raw(boxed) as *mut u8;
    out.write(KevlarBuffer { data, len });
    Ok(())
}

unsafe fn cache_mut<'a>(cache: *mut KevlarCache) -> Result<&'a mut KevlarCache, Failure> {
    cache.as_mut().ok_or_else(|| invalid("null cache handle"))
}

/// Static, NUL-terminated name of a status code.
#[no_mangle]
pub extern "C" fn kevlar_status_str(status: KevlarStatus) -> *const c_char {
    let s: &'static CStr = match status {
        KevlarStatus::Ok => c"OK",
        KevlarStatus::NotFound => c"NOT_FOUND",
        KevlarStatus::BadRequest => c"BAD_REQUEST",
        KevlarStatus::CryptoFail => c"CRYPTO_FAIL",
        KevlarStatus::StoreFail => c"STORE_FAIL",
        KevlarStatus::TooLarge => c"TOO_LARGE",
        KevlarStatus::InvalidArgument => c"INVALID_ARGUMENT",
        KevlarStatus::IntegrityFailure => c"INTEGRITY_FAILURE",
        KevlarStatus::Panic => c"PANIC",
    };
    s.as_ptr()
}

/// Message of the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn kevlar_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Opens the sealed store at `store_dir` (keyfile created if missing) and
/// builds an empty cache over it.
///
/// # Safety
/// `store_dir` and `keyfile` must be NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_cache_open(
    store_dir: *const c_char,
    keyfile: *const c_char,
    capacity: usize,
    bucket_count: usize,
    id_size: usize,
    value_size: usize,
    policy: c_int,
    out: *mut *mut KevlarCache,
) -> KevlarStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null output handle"));
        }
        let policy = match policy {
            p if p == KevlarPolicy::Lru as c_int => Policy::Lru,
            p if p == KevlarPolicy::Fifo as c_int => Policy::Fifo,
            _ => return Err(invalid("unknown eviction policy")),
        };
        let config = CacheConfig::new(capacity, bucket_count, id_size, value_size, policy)?;
        let store = SecureStore::open(path(store_dir)?, path(keyfile)?)?;
        let inner = Cache::init(config, store)?;
        out.write(Box::into_raw(Box::new(KevlarCache { inner })));
        Ok(())
    })
}

/// Releases the volatile cache. Stored objects are untouched. NULL is a no-op.
///
/// # Safety
/// `cache` must come from [`kevlar_cache_open`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kevlar_cache_free(cache: *mut KevlarCache) {
    if !cache.is_null() {
        drop(Box::from_raw(cache));
    }
}

/// # Safety
/// `cache` must be a live handle, `id` must point to `id_len` bytes and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_cache_query(
    cache: *mut KevlarCache,
    id: *const u8,
    id_len: usize,
    out: *mut KevlarBuffer,
) -> KevlarStatus {
    guard(|| {
        let cache = cache_mut(cache)?;
        let value = cache.inner.query(bytes(id, id_len)?)?;
        emit(out, value)
    })
}

/// Writes through to the store, then caches the pair.
///
/// # Safety
/// `cache` must be a live handle; `id` and `value` must point to `id_len` and
/// `value_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn kevlar_cache_save(
    cache: *mut KevlarCache,
    id: *const u8,
    id_len: usize,
    value: *const u8,
    value_len: usize,
) -> KevlarStatus {
    guard(|| {
        let cache = cache_mut(cache)?;
        cache
            .inner
            .save_object(bytes(id, id_len)?, bytes(value, value_len)?)?;
        Ok(())
    })
}

/// # Safety
/// `cache` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_cache_stats(cache: *const KevlarCache, out: *mut KevlarStats) -> KevlarStatus {
    guard(|| {
        let cache = cache.as_ref().ok_or_else(|| invalid("null cache handle"))?;
        if out.is_null() {
            return Err(invalid("null stats output"));
        }
        let CacheStats {
            hits,
            misses,
            not_found,
            store_failures,
            evictions,
            saves,
        } = cache.inner.stats();
        out.write(KevlarStats {
            hits,
            misses,
            not_found,
            store_failures,
            evictions,
            saves,
            resident: cache.inner.len() as u64,
        });
        Ok(())
    })
}

/// Releases a buffer's bytes and zeroes the struct. Safe to call twice.
///
/// # Safety
/// `buf` must be NULL or point to a buffer filled by this library.
#[no_mangle]
pub unsafe extern "C" fn kevlar_buffer_free(buf: *mut KevlarBuffer) {
    let Some(buf) = buf.as_mut() else { return };
    if !buf.data.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(buf.data, buf.len)));
    }
    buf.data = ptr::null_mut();
    buf.len = 0;
}

/// AES-256-CBC/PKCS#7 under a 32-byte key. Output is `iv || body`.
///
/// # Safety
/// `key` must point to 32 bytes, `plaintext` to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_encrypt(
    key: *const u8,
    plaintext: *const u8,
    len: usize,
    out: *mut KevlarBuffer,
) -> KevlarStatus {
    guard(|| {
        let key = self::key(key)?;
        emit(out, crypto::encrypt(&key, bytes(plaintext, len)?).to_bytes())
    })
}

/// # Safety
/// `key` must point to 32 bytes, `cipher` to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_decrypt(
    key: *const u8,
    cipher: *const u8,
    len: usize,
    out: *mut KevlarBuffer,
) -> KevlarStatus {
    guard(|| {
        let key = self::key(key)?;
        let envelope = CipherEnvelope::from_bytes(bytes(cipher, len)?)?;
        emit(out, crypto::decrypt(&key, &envelope)?)
    })
}

/// Moves `cipher` from `key_from` to `key_to` with a fresh IV.
///
/// # Safety
/// Both keys must point to 32 bytes, `cipher` to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_reencrypt(
    key_from: *const u8,
    key_to: *const u8,
    cipher: *const u8,
    len: usize,
    out: *mut KevlarBuffer,
) -> KevlarStatus {
    guard(|| {
        let from = key(key_from)?;
        let to = key(key_to)?;
        let envelope = CipherEnvelope::from_bytes(bytes(cipher, len)?)?;
        emit(out, crypto::reencrypt(&from, &to, &envelope)?.to_bytes())
    })
}

/// Standard padded base64 (no NUL terminator in the output).
///
/// # Safety
/// `data` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_base64_encode(data: *const u8, len: usize, out: *mut KevlarBuffer) -> KevlarStatus {
    guard(|| emit(out, wire::base64_encode(bytes(data, len)?).into_bytes()))
}

/// Strict decode; non-canonical input yields `KEVLAR_STATUS_BAD_REQUEST`.
///
/// # Safety
/// `text` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_base64_decode(text: *const u8, len: usize, out: *mut KevlarBuffer) -> KevlarStatus {
    guard(|| emit(out, wire::base64_decode(bytes(text, len)?)?))
}

/// # Safety
/// `text` must point to `len` bytes; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn kevlar_base64_decode_length(text: *const u8, len: usize, out: *mut usize) -> KevlarStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("null output"));
        }
        out.write(wire::base64_decode_length(bytes(text, len)?)?);
        Ok(())
    })
}
