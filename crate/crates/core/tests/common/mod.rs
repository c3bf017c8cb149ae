//! Helpers shared by the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::HashMap;

use kevlar::cache::{Backend, Cache, CacheConfig, CacheError, MemoryBackend, Policy, Tier};
use kevlar::wire;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force reference cache: a flat vector in eviction order, index 0 is
/// the next victim. No hashing, no links.
pub struct RefCache {
    pub capacity: usize,
    pub id_size: usize,
    pub value_size: usize,
    pub policy: Policy,
    pub resident: Vec<(Vec<u8>, Vec<u8>)>,
    pub backend: HashMap<Vec<u8>, Vec<u8>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Hit(Vec<u8>),
    Miss(Vec<u8>),
    NotFound,
    Saved,
    Rejected(&'static str),
    Reset,
}

impl RefCache {
    pub fn new(config: &CacheConfig) -> Self {
        RefCache {
            capacity: config.capacity,
            id_size: config.id_size,
            value_size: config.value_size,
            policy: config.policy,
            resident: Vec::new(),
            backend: HashMap::new(),
        }
    }

    fn position(&self, id: &[u8]) -> Option<usize> {
        self.resident.iter().position(|(k, _)| k == id)
    }

    fn admit(&mut self, id: &[u8], value: Vec<u8>) {
        if self.resident.len() == self.capacity {
            self.resident.remove(0);
        }
        self.resident.push((id.to_vec(), value));
    }

    pub fn query(&mut self, id: &[u8]) -> Outcome {
        if id.len() > self.id_size {
            return Outcome::Rejected("id too long");
        }
        if let Some(i) = self.position(id) {
            let value = self.resident[i].1.clone();
            if self.policy == Policy::Lru {
                let e = self.resident.remove(i);
                self.resident.push(e);
            }
            return Outcome::Hit(value);
        }
        match self.backend.get(id).cloned() {
            Some(value) => {
                if value.len() <= self.value_size {
                    self.admit(id, value.clone());
                }
                Outcome::Miss(value)
            }
            None => Outcome::NotFound,
        }
    }

    pub fn save(&mut self, id: &[u8], value: &[u8]) -> Outcome {
        if id.len() > self.id_size {
            return Outcome::Rejected("id too long");
        }
        if id.is_empty() {
            return Outcome::Rejected("empty id");
        }
        if value.len() > self.value_size {
            return Outcome::Rejected("value too long");
        }
        self.backend.insert(id.to_vec(), value.to_vec());
        match self.position(id) {
            Some(i) => {
                self.resident[i].1 = value.to_vec();
                if self.policy == Policy::Lru {
                    let e = self.resident.remove(i);
                    self.resident.push(e);
                }
            }
            None => self.admit(id, value.to_vec()),
        }
        Outcome::Saved
    }

    pub fn reset(&mut self) -> Outcome {
        self.resident.clear();
        Outcome::Reset
    }

    pub fn resident_ids(&self) -> Vec<Vec<u8>> {
        self.resident.iter().map(|(k, _)| k.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub enum CacheOp {
    Save(Vec<u8>, Vec<u8>),
    Query(Vec<u8>),
    Reset,
}

fn classify(e: &CacheError) -> &'static str {
    match e {
        CacheError::IdTooLong { .. } => "id too long",
        CacheError::EmptyId => "empty id",
        CacheError::ValueTooLong { .. } => "value too long",
        _ => "other",
    }
}

pub fn apply<B: Backend>(cache: &mut Option<Cache<B>>, op: &CacheOp) -> Outcome {
    match op {
        CacheOp::Save(id, value) => match cache.as_mut().unwrap().save_object(id, value) {
            Ok(()) => Outcome::Saved,
            Err(e) => Outcome::Rejected(classify(&e)),
        },
        CacheOp::Query(id) => match cache.as_mut().unwrap().lookup(id) {
            Ok((v, Tier::Volatile)) => Outcome::Hit(v),
            Ok((v, Tier::Backend)) => Outcome::Miss(v),
            Err(CacheError::NotFound) => Outcome::NotFound,
            Err(e) => Outcome::Rejected(classify(&e)),
        },
        CacheOp::Reset => {
            let c = cache.take().unwrap();
            let config = *c.config();
            *cache = Some(Cache::init(config, c.free()).unwrap());
            Outcome::Reset
        }
    }
}

/// Random op sequence over a pool of at most `n_ids` ids. Ids and values
/// occasionally exceed the limits or are empty so the rejection paths are
/// compared too.
pub fn random_ops(rng: &mut ChaCha8Rng, n_ops: usize, n_ids: usize, config: &CacheConfig) -> Vec<CacheOp> {
    let pool: Vec<Vec<u8>> = (0..n_ids)
        .map(|i| {
            let len = rng.gen_range(1..=config.id_size);
            let mut id = vec![0u8; len];
            rng.fill(&mut id[..]);
            id[0] = i as u8;
            id
        })
        .collect();
    let pick_id = |rng: &mut ChaCha8Rng| -> Vec<u8> {
        match rng.gen_range(0..100) {
            0 => Vec::new(),
            1 => vec![0xAA; config.id_size + 1],
            _ => pool[rng.gen_range(0..pool.len())].clone(),
        }
    };
    (0..n_ops)
        .map(|_| match rng.gen_range(0..1000) {
            0..=4 => CacheOp::Reset,
            5..=404 => {
                let id = pick_id(rng);
                let len = if rng.gen_ratio(1, 50) {
                    config.value_size + 1
                } else {
                    rng.gen_range(0..=config.value_size)
                };
                let mut value = vec![0u8; len];
                rng.fill(&mut value[..]);
                CacheOp::Save(id, value)
            }
            _ => CacheOp::Query(pick_id(rng)),
        })
        .collect()
}

/// Replays `ops` against the real cache and the reference model and reports
/// the first divergence in outcome, resident order or counters.
pub fn check_equivalence(config: &CacheConfig, ops: &[CacheOp]) -> Result<(), String> {
    let mut model = RefCache::new(config);
    let mut cache = Some(Cache::init(*config, MemoryBackend::new()).unwrap());
    // (hits, misses, not found) since the last init, as classified by the model.
    let mut counts = (0u64, 0u64, 0u64);
    for (step, op) in ops.iter().enumerate() {
        let expected = match op {
            CacheOp::Save(id, v) => model.save(id, v),
            CacheOp::Query(id) => model.query(id),
            CacheOp::Reset => model.reset(),
        };
        match &expected {
            Outcome::Hit(_) => counts.0 += 1,
            Outcome::Miss(_) => counts.1 += 1,
            Outcome::NotFound => counts.2 += 1,
            Outcome::Reset => counts = (0, 0, 0),
            _ => {}
        }
        let got = apply(&mut cache, op);
        if got != expected {
            return Err(format!("step {step} {op:?}: got {got:?}, model {expected:?}"));
        }
        if let (CacheOp::Save(id, v), Outcome::Saved) = (op, &got) {
            let stored = cache.as_mut().unwrap().store_mut().read(id);
            if stored.as_ref().ok() != Some(v) {
                return Err(format!("step {step}: backend does not hold the saved value"));
            }
        }
        let c = cache.as_ref().unwrap();
        let st = c.stats();
        if (st.hits, st.misses, st.not_found) != counts {
            return Err(format!("step {step}: stats {st:?}, model counts {counts:?}"));
        }
        if c.resident_ids() != model.resident_ids() {
            return Err(format!("step {step}: resident order diverged"));
        }
        if c.len() > config.capacity {
            return Err(format!("step {step}: {} entries over capacity", c.len()));
        }
    }
    Ok(())
}

/// One full seeded case: policy, capacity and id pool drawn from the seed.
pub fn seeded_case(seed: u64, max_ops: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy = if seed.is_multiple_of(2) { Policy::Lru } else { Policy::Fifo };
    let capacity = rng.gen_range(1..=8);
    let buckets = rng.gen_range(1..=16);
    let n_ids = rng.gen_range(1..=32);
    let n_ops = rng.gen_range(max_ops / 2..=max_ops);
    let config = CacheConfig::new(capacity, buckets, 12, 32, policy).unwrap();
    let ops = random_ops(&mut rng, n_ops, n_ids, &config);
    check_equivalence(&config, &ops).map_err(|e| format!("seed {seed} ({policy}, cap {capacity}): {e}"))
}

/// Ways `secret` could leak into a text line: raw, hex, or base64 at any of
/// the three byte alignments.
pub fn leak_patterns(secret: &[u8]) -> Vec<Vec<u8>> {
    assert!(secret.len() >= 8);
    let mut out = vec![
        secret.to_vec(),
        hex::encode(secret).into_bytes(),
        hex::encode_upper(secret).into_bytes(),
    ];
    for shift in 0..3 {
        let body = &secret[shift..];
        let body = &body[..body.len() / 3 * 3];
        out.push(wire::base64_encode(body).into_bytes());
    }
    out
}

pub fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Checks a protocol line and the decoded contents of each of its fields.
pub fn leaks(line: &[u8], secret: &[u8]) -> bool {
    let patterns = leak_patterns(secret);
    if patterns.iter().any(|p| contains(line, p)) {
        return true;
    }
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    body.split(|&b| b == b'|').skip(1).any(|field| match wire::base64_decode(field) {
        Ok(decoded) => patterns.iter().any(|p| contains(&decoded, p)),
        Err(_) => false,
    })
}

/// True when `line` is a request the daemon would carry out rather than
/// reject: a known request op with the right number of fields.
pub fn is_well_formed_request(line: &[u8]) -> bool {
    use kevlar::wire::{Op, WireFrame};
    match WireFrame::parse(line, usize::MAX) {
        Ok(f) => matches!(
            (&f.op, f.fields.len()),
            (Op::Ping | Op::Quit, 0) | (Op::Query, 1) | (Op::Save, 2) | (Op::Reenc, 3)
        ),
        Err(_) => false,
    }
}

/// Seeded corpus of malformed request lines, each terminated by exactly one
/// newline. Lines longer than `max_frame` are included sparingly.
pub fn malformed_corpus(seed: u64, n: usize, max_frame: usize) -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let valid: [&[u8]; 6] = [
        b"PING",
        b"QUIT",
        b"QUERY|Zg==",
        b"SAVE|Y2xpZW50MDAwMDAx|AAECAwQFBgcICQoLDA0ODxAREhMUFRYXGBkaGxwdHh8=",
        b"REENC|azE=|azI=|AAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA=",
        b"OK|Zm9v",
    ];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut line: Vec<u8> = match rng.gen_range(0..8) {
            // Random bytes.
            0 => (0..rng.gen_range(0..80)).map(|_| rng.gen()).collect(),
            // Random printable text with pipes.
            1 => (0..rng.gen_range(0..80))
                .map(|_| *b"ABCDEFGHIJKLMNOPQRSTUVWXYZ|=+/az09 \t\r".get(rng.gen_range(0..37)).unwrap())
                .collect(),
            // Byte-level mutations of valid frames.
            2 | 3 => {
                let mut l = valid[rng.gen_range(0..valid.len())].to_vec();
                for _ in 0..rng.gen_range(1..4) {
                    let i = rng.gen_range(0..=l.len());
                    match rng.gen_range(0..3) {
                        0 if i < l.len() => l[i] = rng.gen(),
                        1 => l.insert(i, rng.gen()),
                        _ if i < l.len() => drop(l.remove(i)),
                        _ => l.push(rng.gen()),
                    }
                }
                l
            }
            // Known ops with the wrong number of fields.
            4 => {
                let op = ["PING", "QUIT", "QUERY", "SAVE", "REENC"][rng.gen_range(0..5)];
                let mut l = op.as_bytes().to_vec();
                for _ in 0..rng.gen_range(0..7) {
                    l.push(b'|');
                    let mut f = vec![0u8; rng.gen_range(0..12)];
                    rng.fill(&mut f[..]);
                    l.extend_from_slice(wire::base64_encode(&f).as_bytes());
                }
                l
            }
            // Reply ops and unknown tags sent as requests.
            5 => [&b"OK"[..], b"ERR|QkFEX1JFUVVFU1Q=", b"DELETE|Zg==", b"query|Zg==", b"SAVE\x00|Zg==|Zg=="]
                [rng.gen_range(0..5)]
                .to_vec(),
            // Non-canonical base64 in an otherwise valid request.
            6 => {
                let bad = [&b"Zg="[..], b"Zh==", b"Zm9=", b"Z===", b"Zg==Zg==", b"Zm-v", b"Zm_v", b"Zg"][rng.gen_range(0..8)];
                let mut l = b"QUERY|".to_vec();
                l.extend_from_slice(bad);
                l
            }
            // Oversized.
            _ if rng.gen_ratio(1, 50) => {
                let mut l = b"QUERY|".to_vec();
                l.extend(std::iter::repeat_n(b'A', max_frame + rng.gen_range(0..16)));
                l
            }
            _ => b"SAVE|".to_vec(),
        };
        line.iter_mut().filter(|b| **b == b'\n').for_each(|b| *b = b' ');
        line.push(b'\n');
        if !is_well_formed_request(&line) {
            out.push(line);
        }
    }
    out
}
