use std::ffi::{CStr, CString};
use std::ptr;

use kevlar_ffi::*;

fn take(mut buf: KevlarBuffer) -> Vec<u8> {
    let out = unsafe { std::slice::from_raw_parts(buf.data, buf.len) }.to_vec();
    unsafe { kevlar_buffer_free(&mut buf) };
    assert!(buf.data.is_null());
    out
}

fn empty() -> KevlarBuffer {
    KevlarBuffer {
        data: ptr::null_mut(),
        len: 0,
    }
}

fn last_error() -> String {
    let p = kevlar_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Opened {
    _dir: tempfile::TempDir,
    dir: CString,
    key: CString,
}

fn paths() -> Opened {
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().join("objects").to_str().unwrap()).unwrap();
    let key = CString::new(tmp.path().join("seal.key").to_str().unwrap()).unwrap();
    Opened { _dir: tmp, dir, key }
}

unsafe fn open(p: &Opened, capacity: usize, policy: KevlarPolicy) -> *mut KevlarCache {
    let mut cache = ptr::null_mut();
    let st = kevlar_cache_open(p.dir.as_ptr(), p.key.as_ptr(), capacity, 8, 16, 64, policy as i32, &mut cache);
    assert_eq!(st, KevlarStatus::Ok);
    assert!(!cache.is_null());
    cache
}

#[test]
fn cache_roundtrip_survives_reopen() {
    let p = paths();
    unsafe {
        let cache = open(&p, 2, KevlarPolicy::Lru);
        for (id, v) in [(&b"a"[..], &b"one"[..]), (b"b", b"two"), (b"c", b"three")] {
            assert_eq!(kevlar_cache_save(cache, id.as_ptr(), id.len(), v.as_ptr(), v.len()), KevlarStatus::Ok);
        }
        let mut stats = KevlarStats::default();
        assert_eq!(kevlar_cache_stats(cache, &mut stats), KevlarStatus::Ok);
        assert_eq!((stats.saves, stats.evictions, stats.resident), (3, 1, 2));
        kevlar_cache_free(cache);

        let cache = open(&p, 2, KevlarPolicy::Fifo);
        let mut out = empty();
        assert_eq!(kevlar_cache_query(cache, b"a".as_ptr(), 1, &mut out), KevlarStatus::Ok);
        assert_eq!(take(out), b"one");
        let mut out = empty();
        assert_eq!(kevlar_cache_query(cache, b"zz".as_ptr(), 2, &mut out), KevlarStatus::NotFound);
        assert!(out.data.is_null());
        kevlar_cache_stats(cache, &mut stats);
        assert_eq!((stats.misses, stats.not_found), (1, 1));
        kevlar_cache_free(cache);
    }
}

#[test]
fn cache_argument_errors() {
    let p = paths();
    unsafe {
        let mut cache = ptr::null_mut();
        let st = kevlar_cache_open(p.dir.as_ptr(), p.key.as_ptr(), 0, 8, 16, 64, 0, &mut cache);
        assert_eq!(st, KevlarStatus::InvalidArgument);
        assert!(cache.is_null());
        let st = kevlar_cache_open(p.dir.as_ptr(), p.key.as_ptr(), 4, 8, 16, 64, 7, &mut cache);
        assert_eq!(st, KevlarStatus::InvalidArgument);
        assert!(last_error().contains("policy"));
        let st = kevlar_cache_open(ptr::null(), p.key.as_ptr(), 4, 8, 16, 64, 0, &mut cache);
        assert_eq!(st, KevlarStatus::InvalidArgument);

        let cache = open(&p, 4, KevlarPolicy::Lru);
        let long = [7u8; 17];
        assert_eq!(kevlar_cache_save(cache, long.as_ptr(), 17, b"v".as_ptr(), 1), KevlarStatus::TooLarge);
        assert_eq!(kevlar_cache_save(cache, ptr::null(), 0, b"v".as_ptr(), 1), KevlarStatus::InvalidArgument);
        assert_eq!(kevlar_cache_save(cache, ptr::null(), 3, b"v".as_ptr(), 1), KevlarStatus::InvalidArgument);
        assert_eq!(
            kevlar_cache_query(ptr::null_mut(), b"a".as_ptr(), 1, &mut empty()),
            KevlarStatus::InvalidArgument
        );
        kevlar_cache_free(cache);
        kevlar_cache_free(ptr::null_mut());
    }
}

#[test]
fn crypto_roundtrip_and_reencrypt() {
    let k1 = [1u8; 32];
    let k2 = [2u8; 32];
    let msg = b"ecg batch 0.42,0.1234;";
    unsafe {
        let mut out = empty();
        assert_eq!(kevlar_encrypt(k1.as_ptr(), msg.as_ptr(), msg.len(), &mut out), KevlarStatus::Ok);
        let c1 = take(out);
        assert_eq!(c1.len(), 16 + 32);

        let mut out = empty();
        assert_eq!(kevlar_reencrypt(k1.as_ptr(), k2.as_ptr(), c1.as_ptr(), c1.len(), &mut out), KevlarStatus::Ok);
        let c2 = take(out);

        let mut out = empty();
        assert_eq!(kevlar_decrypt(k2.as_ptr(), c2.as_ptr(), c2.len(), &mut out), KevlarStatus::Ok);
        assert_eq!(take(out), msg);

        assert_eq!(kevlar_decrypt(k1.as_ptr(), c1.as_ptr(), 20, &mut empty()), KevlarStatus::CryptoFail);
        assert_eq!(kevlar_encrypt(ptr::null(), msg.as_ptr(), 1, &mut empty()), KevlarStatus::InvalidArgument);
        assert_eq!(kevlar_encrypt(k1.as_ptr(), msg.as_ptr(), 1, ptr::null_mut()), KevlarStatus::InvalidArgument);
    }
}

#[test]
fn base64_through_abi() {
    unsafe {
        let mut out = empty();
        assert_eq!(kevlar_base64_encode(b"foobar".as_ptr(), 6, &mut out), KevlarStatus::Ok);
        assert_eq!(take(out), b"Zm9vYmFy");

        let mut n = 0usize;
        assert_eq!(kevlar_base64_decode_length(b"Zm9vYg==".as_ptr(), 8, &mut n), KevlarStatus::Ok);
        assert_eq!(n, 4);
        let mut out = empty();
        assert_eq!(kevlar_base64_decode(b"Zm9vYg==".as_ptr(), 8, &mut out), KevlarStatus::Ok);
        assert_eq!(take(out), b"foob");
        assert_eq!(kevlar_base64_decode(b"Zm9=".as_ptr(), 4, &mut empty()), KevlarStatus::BadRequest);

        let mut out = empty();
        assert_eq!(kevlar_base64_encode(ptr::null(), 0, &mut out), KevlarStatus::Ok);
        assert_eq!(take(out), b"");
    }
}

#[test]
fn status_names() {
    let name = |s| unsafe { CStr::from_ptr(kevlar_status_str(s)) }.to_str().unwrap();
    assert_eq!(name(KevlarStatus::Ok), "OK");
    assert_eq!(name(KevlarStatus::NotFound), "NOT_FOUND");
    assert_eq!(name(KevlarStatus::IntegrityFailure), "INTEGRITY_FAILURE");
}

#[test]
fn double_free_is_harmless() {
    unsafe {
        let mut out = empty();
        kevlar_base64_encode(b"x".as_ptr(), 1, &mut out);
        kevlar_buffer_free(&mut out);
        kevlar_buffer_free(&mut out);
        kevlar_buffer_free(ptr::null_mut());
    }
}
