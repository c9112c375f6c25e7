//! First-touch-instruction access-intensity prediction.
//!
//! Two Bloom filters hold the program counters of FTIs known to touch
//! write-intensive (`fti_w`) and read-intensive (`fti_r`) pages. Unknown FTIs
//! are profiled for one phase in the Access Intensity Record (AIR), a small
//! LFU-evicted table; at each phase boundary, entries whose access count
//! exceeds the promotion threshold are inserted into the filters and the AIR
//! is wiped.
//!
//! Filter bits are never cleared within a run, so queries have no false
//! negatives. The k probe positions come from double hashing
//! (`h1 + i*h2 mod m`) over a seeded 64-bit mixer; the seed is part of the
//! run configuration so runs replay exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Result of a membership probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BloomQuery {
    MaybePresent,
    DefinitelyAbsent,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SnapshotError {
    #[error("snapshot too short ({0} bytes)")]
    Truncated(usize),
    #[error("bad snapshot magic")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    BadVersion(u16),
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloomFilter {
    bits: Vec<u64>,
    m: u32,
    k: u32,
    hash_seed: u64,
}

impl BloomFilter {
    pub fn new(m: u32, k: u32, hash_seed: u64) -> Self {
        assert!(m > 0 && k > 0, "filter needs m > 0 and k > 0");
        BloomFilter { bits: vec![0; ((m as usize) + 63) / 64], m, k, hash_seed }
    }

    pub fn m(&self) -> u32 {
        self.m
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    fn positions(&self, element: u64) -> impl Iterator<Item = u32> + '_ {
        // k independent seeded mixes. Double hashing (h1 + i*h2 mod m) with
        // an odd step couples probe positions through their parity when m is
        // a power of two, which visibly inflates the false-positive rate at
        // m = 128; independent mixes track the analytic rate.
        let base = splitmix64(element ^ self.hash_seed);
        let m = u64::from(self.m);
        (0..self.k)
            .map(move |i| (splitmix64(base ^ u64::from(i).wrapping_mul(0x9E37_79B9_7F4A_7C15)) % m) as u32)
    }

    pub fn insert(&mut self, element: u64) {
        for pos in self.positions(element).collect::<Vec<_>>() {
            self.bits[(pos / 64) as usize] |= 1u64 << (pos % 64);
        }
    }

    pub fn query(&self, element: u64) -> BloomQuery {
        for pos in self.positions(element) {
            if self.bits[(pos / 64) as usize] & (1u64 << (pos % 64)) == 0 {
                return BloomQuery::DefinitelyAbsent;
            }
        }
        BloomQuery::MaybePresent
    }

    pub fn contains(&self, element: u64) -> bool {
        self.query(element) == BloomQuery::MaybePresent
    }

    pub fn popcount(&self) -> u32 {
        self.bits.iter().map(|w| w.count_ones()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|w| *w == 0)
    }
}

/// Approximate false-positive rate of a Bloom filter with `m` bits, `k` hash
/// functions, and `n` inserted elements: `(1 - e^(-kn/m))^k`.
pub fn expected_fp_rate(m: u32, k: u32, n: u64) -> f64 {
    assert!(m > 0 && k > 0);
    let exponent = -((k as f64) * (n as f64)) / (m as f64);
    (1.0 - exponent.exp()).powi(k as i32)
}

/// One AIR row: program counter of an unknown FTI plus its per-phase profile.
/// Field widths match the hardware table: counters saturate rather than wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AirEntry {
    pub valid: bool,
    pub pc: u32,
    pub read_pages: u16,
    pub write_pages: u16,
    pub accesses: u32,
}

impl AirEntry {
    const INVALID: AirEntry = AirEntry { valid: false, pc: 0, read_pages: 0, write_pages: 0, accesses: 0 };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    pub m: u32,
    pub k: u32,
    pub air_entries: u32,
    pub promotion_threshold: u32,
    pub hash_seed: u64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig { m: 128, k: 3, air_entries: 8, promotion_threshold: 64, hash_seed: 0x7469_6572 }
    }
}

/// FTI tables plus AIR. Program counters are folded to their low 32 bits at
/// this boundary, matching the 32-bit pc field of the hardware tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorState {
    pub fti_w: BloomFilter,
    pub fti_r: BloomFilter,
    air: Vec<AirEntry>,
    promotion_threshold: u32,
}

fn pc32(pc: u64) -> u32 {
    pc as u32
}

impl PredictorState {
    pub fn new(cfg: &PredictorConfig) -> Self {
        PredictorState {
            fti_w: BloomFilter::new(cfg.m, cfg.k, cfg.hash_seed),
            fti_r: BloomFilter::new(cfg.m, cfg.k, cfg.hash_seed ^ 0xA5A5_A5A5_A5A5_A5A5),
            air: vec![AirEntry::INVALID; cfg.air_entries as usize],
            promotion_threshold: cfg.promotion_threshold,
        }
    }

    pub fn air(&self) -> &[AirEntry] {
        &self.air
    }

    pub fn promotion_threshold(&self) -> u32 {
        self.promotion_threshold
    }

    pub fn hits_write_table(&self, pc: u64) -> bool {
        self.fti_w.contains(u64::from(pc32(pc)))
    }

    pub fn hits_read_table(&self, pc: u64) -> bool {
        self.fti_r.contains(u64::from(pc32(pc)))
    }

    /// True when the pc misses both filters, i.e. the FTI is unknown.
    pub fn is_unknown(&self, pc: u64) -> bool {
        !self.hits_write_table(pc) && !self.hits_read_table(pc)
    }

    /// Records one access induced by the unknown FTI `pc`. Creates the entry
    /// if absent, evicting the valid entry with the fewest recorded accesses
    /// when the table is full (the access count doubles as the LFU frequency
    /// estimate).
    pub fn air_record(&mut self, pc: u64) {
        let pc = pc32(pc);
        if let Some(e) = self.air.iter_mut().find(|e| e.valid && e.pc == pc) {
            e.accesses = e.accesses.saturating_add(1);
            return;
        }
        let slot = if let Some(idx) = self.air.iter().position(|e| !e.valid) {
            idx
        } else {
            // LFU eviction; first index wins ties for determinism.
            let mut min_idx = 0;
            for (i, e) in self.air.iter().enumerate() {
                if e.accesses < self.air[min_idx].accesses {
                    min_idx = i;
                }
            }
            min_idx
        };
        self.air[slot] = AirEntry { valid: true, pc, read_pages: 0, write_pages: 0, accesses: 1 };
    }

    /// Reports the phase-end classification of one page first-touched by
    /// `pc`: bumps `write_pages` or `read_pages` if the entry is still
    /// resident. Silently drops the report if the entry was LFU-evicted.
    pub fn air_classify_page(&mut self, pc: u64, write_inducing: bool) {
        let pc = pc32(pc);
        if let Some(e) = self.air.iter_mut().find(|e| e.valid && e.pc == pc) {
            if write_inducing {
                e.write_pages = e.write_pages.saturating_add(1);
            } else {
                e.read_pages = e.read_pages.saturating_add(1);
            }
        }
    }

    /// Phase boundary: promote every valid entry whose access count is
    /// strictly above the threshold into the filters (write table when
    /// `write_pages >= read_pages`, read table when `read_pages >=
    /// write_pages`, both on a tie), then invalidate all entries.
    pub fn phase_commit(&mut self) {
        for i in 0..self.air.len() {
            let e = self.air[i];
            if !e.valid || e.accesses <= self.promotion_threshold {
                continue;
            }
            if e.write_pages >= e.read_pages {
                self.fti_w.insert(u64::from(e.pc));
            }
            if e.read_pages >= e.write_pages {
                self.fti_r.insert(u64::from(e.pc));
            }
        }
        for e in &mut self.air {
            e.valid = false;
        }
    }

    // ----- checkpoint snapshot ---------------------------------------------
    //
    // Layout (little-endian):
    //   magic "FTIS", version u16, promotion_threshold u32,
    //   2 filters: m u32, k u32, hash_seed u64, ceil(m/64) words of u64,
    //   air: count u32, then per entry: valid u8, pc u32, read_pages u16,
    //   write_pages u16, accesses u32.

    const MAGIC: [u8; 4] = *b"FTIS";
    const VERSION: u16 = 1;

    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&Self::MAGIC);
        out.extend_from_slice(&Self::VERSION.to_le_bytes());
        out.extend_from_slice(&self.promotion_threshold.to_le_bytes());
        for f in [&self.fti_w, &self.fti_r] {
            out.extend_from_slice(&f.m.to_le_bytes());
            out.extend_from_slice(&f.k.to_le_bytes());
            out.extend_from_slice(&f.hash_seed.to_le_bytes());
            for w in &f.bits {
                out.extend_from_slice(&w.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.air.len() as u32).to_le_bytes());
        for e in &self.air {
            out.push(u8::from(e.valid));
            out.extend_from_slice(&e.pc.to_le_bytes());
            out.extend_from_slice(&e.read_pages.to_le_bytes());
            out.extend_from_slice(&e.write_pages.to_le_bytes());
            out.extend_from_slice(&e.accesses.to_le_bytes());
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, SnapshotError> {
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(4)? != Self::MAGIC {
            return Err(SnapshotError::BadMagic);
        }
        let version = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
        if version != Self::VERSION {
            return Err(SnapshotError::BadVersion(version));
        }
        let promotion_threshold = cur.u32()?;
        let mut filters = Vec::with_capacity(2);
        for _ in 0..2 {
            let m = cur.u32()?;
            let k = cur.u32()?;
            let hash_seed = cur.u64()?;
            let words = ((m as usize) + 63) / 64;
            let mut bits = Vec::with_capacity(words);
            for _ in 0..words {
                bits.push(cur.u64()?);
            }
            filters.push(BloomFilter { bits, m, k, hash_seed });
        }
        let fti_r = filters.pop().unwrap();
        let fti_w = filters.pop().unwrap();
        let count = cur.u32()? as usize;
        let mut air = Vec::with_capacity(count);
        for _ in 0..count {
            let valid = cur.take(1)?[0] != 0;
            let pc = cur.u32()?;
            let read_pages = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
            let write_pages = u16::from_le_bytes(cur.take(2)?.try_into().unwrap());
            let accesses = cur.u32()?;
            air.push(AirEntry { valid, pc, read_pages, write_pages, accesses });
        }
        Ok(PredictorState { fti_w, fti_r, air, promotion_threshold })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SnapshotError> {
        if self.pos + n > self.bytes.len() {
            return Err(SnapshotError::Truncated(self.bytes.len()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SnapshotError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn insert_then_query_is_present() {
        let mut f = BloomFilter::new(128, 3, 7);
        f.insert(0x400123);
        assert_eq!(f.query(0x400123), BloomQuery::MaybePresent);
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = BloomFilter::new(128, 3, 7);
        for pc in [0u64, 1, 0x400123, u64::MAX] {
            assert_eq!(f.query(pc), BloomQuery::DefinitelyAbsent);
        }
    }

    #[test]
    fn no_false_negatives_exhaustive_small_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut f = BloomFilter::new(64, 4, 3);
        let set: Vec<u64> = (0..32).map(|_| rng.gen()).collect();
        for s in &set {
            f.insert(*s);
        }
        for s in &set {
            assert_eq!(f.query(*s), BloomQuery::MaybePresent);
        }
    }

    #[test]
    fn small_filter_scenario_m16_k3() {
        // A 16-bit filter holding one element: any probe whose positions
        // include an unset bit is declared not present.
        let mut f = BloomFilter::new(16, 3, 1);
        f.insert(42);
        assert!(f.popcount() <= 3);
        let absent = (0u64..64)
            .find(|y| f.positions(*y).any(|p| f.bits[0] & (1 << p) == 0))
            .expect("some probe hits an unset bit");
        assert_eq!(f.query(absent), BloomQuery::DefinitelyAbsent);
    }

    #[test]
    fn all_set_filter_reports_maybe_present() {
        let mut f = BloomFilter::new(16, 3, 1);
        f.bits[0] = 0xFFFF;
        assert_eq!(f.query(999), BloomQuery::MaybePresent);
    }

    #[test]
    fn popcount_monotone_under_inserts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut f = BloomFilter::new(128, 3, 9);
        let mut last = 0;
        for _ in 0..200 {
            f.insert(rng.gen());
            let pc = f.popcount();
            assert!(pc >= last);
            last = pc;
        }
    }

    #[test]
    fn fp_rate_formula_values() {
        assert_eq!(expected_fp_rate(128, 3, 0), 0.0);
        let p = expected_fp_rate(128, 3, 8);
        let expect = (1.0 - (-24.0f64 / 128.0).exp()).powi(3);
        assert!((p - expect).abs() < 1e-15);
        for n in 0..100 {
            assert!(expected_fp_rate(128, 3, n + 1) >= expected_fp_rate(128, 3, n));
        }
    }

    #[test]
    fn measured_fp_rate_tracks_formula() {
        // Monte-Carlo oracle pooled over fresh filters so per-filter bit
        // occupancy noise averages out.
        let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
        let (m, k, n) = (128u32, 3u32, 8u64);
        let filters = 200usize;
        let probes_per_filter = 500usize;
        let mut false_positives = 0usize;
        for _ in 0..filters {
            let mut f = BloomFilter::new(m, k, rng.gen());
            let members: Vec<u64> = (0..n).map(|_| rng.gen::<u64>() | 1 << 40).collect();
            for pc in &members {
                f.insert(*pc);
            }
            for _ in 0..probes_per_filter {
                let probe = rng.gen::<u64>() & !(1 << 40);
                if f.contains(probe) {
                    false_positives += 1;
                }
            }
        }
        let total = (filters * probes_per_filter) as f64;
        let measured = false_positives as f64 / total;
        let predicted = expected_fp_rate(m, k, n);
        let sigma = (predicted * (1.0 - predicted) / total).sqrt();
        assert!(
            (measured - predicted).abs() <= 3.0 * sigma,
            "measured {measured} vs predicted {predicted} (3 sigma = {})",
            3.0 * sigma
        );
    }

    fn state(threshold: u32) -> PredictorState {
        PredictorState::new(&PredictorConfig { promotion_threshold: threshold, ..Default::default() })
    }

    #[test]
    fn air_record_creates_entry() {
        let mut s = state(4);
        s.air_record(0x400100);
        let valid: Vec<_> = s.air().iter().filter(|e| e.valid).collect();
        assert_eq!(valid.len(), 1);
        assert_eq!(valid[0].accesses, 1);
        assert_eq!(valid[0].pc, 0x400100);
    }

    #[test]
    fn air_lfu_evicts_min_access_entry() {
        let mut s = state(4);
        let counts = [5u32, 9, 2, 7, 3, 8, 6, 4];
        for (i, c) in counts.iter().enumerate() {
            for _ in 0..*c {
                s.air_record(1000 + i as u64);
            }
        }
        s.air_record(0xBEEF);
        assert!(!s.air().iter().any(|e| e.valid && e.pc == 1002), "count-2 entry evicted");
        assert!(s.air().iter().any(|e| e.valid && e.pc == 0xBEEF && e.accesses == 1));
        assert_eq!(s.air().iter().filter(|e| e.valid).count(), 8);
    }

    #[test]
    fn air_access_counter_saturates() {
        let mut s = state(4);
        s.air_record(7);
        s.air.iter_mut().find(|e| e.valid).unwrap().accesses = u32::MAX;
        s.air_record(7);
        assert_eq!(s.air().iter().find(|e| e.valid).unwrap().accesses, u32::MAX);
    }

    #[test]
    fn commit_requires_strictly_above_threshold() {
        let mut s = state(3);
        for _ in 0..3 {
            s.air_record(10);
        }
        for _ in 0..4 {
            s.air_record(20);
        }
        s.air_classify_page(10, false);
        s.air_classify_page(20, false);
        s.phase_commit();
        assert!(!s.fti_r.contains(10), "at-threshold entry not promoted");
        assert!(s.fti_r.contains(20));
    }

    #[test]
    fn commit_routes_by_page_majority() {
        let mut s = state(0);
        for _ in 0..5 {
            s.air_record(77);
        }
        // 3 read-inducing pages vs 1 write-inducing: read table only.
        for wi in [false, false, false, true] {
            s.air_classify_page(77, wi);
        }
        s.phase_commit();
        assert!(s.fti_r.contains(77));
        assert!(!s.fti_w.contains(77));
    }

    #[test]
    fn commit_tie_inserts_into_both() {
        let mut s = state(0);
        s.air_record(88);
        s.air_classify_page(88, true);
        s.air_classify_page(88, false);
        s.phase_commit();
        assert!(s.fti_r.contains(88));
        assert!(s.fti_w.contains(88));
    }

    #[test]
    fn commit_resets_air_and_is_idempotent() {
        let mut s = state(0);
        for pc in [1u64, 2, 3] {
            s.air_record(pc);
            s.air_classify_page(pc, true);
        }
        s.phase_commit();
        assert!(s.air().iter().all(|e| !e.valid));
        let w_pop = s.fti_w.popcount();
        s.phase_commit();
        assert_eq!(s.fti_w.popcount(), w_pop, "second commit promotes nothing");
    }

    #[test]
    fn classify_after_eviction_is_dropped() {
        let mut s = state(0);
        for pc in 0..8u64 {
            s.air_record(pc);
            s.air_record(pc);
        }
        s.air_record(99); // evicts one of the count-2 entries
        s.air_classify_page(0, true); // pc 0 was the tie-break victim
        assert!(!s.air().iter().any(|e| e.valid && e.pc == 0));
    }

    #[test]
    fn snapshot_roundtrip() {
        let mut s = state(16);
        for pc in [0x400100u64, 0x400200, 0x400300] {
            s.fti_w.insert(pc);
            s.air_record(pc);
        }
        s.fti_r.insert(0x50000);
        s.air_classify_page(0x400200, true);
        let bytes = s.to_snapshot();
        let restored = PredictorState::from_snapshot(&bytes).unwrap();
        assert_eq!(restored, s);
    }

    #[test]
    fn snapshot_rejects_garbage() {
        assert_eq!(PredictorState::from_snapshot(b"XX"), Err(SnapshotError::Truncated(2)));
        assert_eq!(PredictorState::from_snapshot(b"XXXXXXXX"), Err(SnapshotError::BadMagic));
        let mut bytes = state(1).to_snapshot();
        bytes[0] = b'Z';
        assert_eq!(PredictorState::from_snapshot(&bytes), Err(SnapshotError::BadMagic));
        let mut bytes = state(1).to_snapshot();
        bytes[4] = 0xFF;
        assert!(matches!(PredictorState::from_snapshot(&bytes), Err(SnapshotError::BadVersion(_))));
    }
}
