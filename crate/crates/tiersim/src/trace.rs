//! Memory access trace formats, parsing, and synthetic trace generation.
//!
//! The text format is CSV, one post-cache access per line:
//!
//! ```text
//! instr_index,pc,op,vaddr
//! 100,0x400123,R,0x7f0000001000
//! ```
//!
//! `instr_index` is a non-decreasing instruction counter, `pc` and `vaddr`
//! are 0x-prefixed hex, `op` is `R` or `W`. Blank lines and `#` comments are
//! ignored. An equivalent binary format (magic `MTRB`, version byte, record
//! count, then fixed 25-byte little-endian records) exists for large traces,
//! and gzip-compressed input of either format is accepted transparently.
//!
//! Generators produce deterministic synthetic workloads: a skewed trace in
//! which a small fraction of first-touch instructions induces most accesses,
//! and a phase-shift trace whose FTI working set changes partway through.

use crate::geometry::{MemOp, PAGE_BYTES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// One post-cache memory access.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryRequest {
    pub instr_index: u64,
    pub pc: u64,
    pub op: MemOp,
    pub vaddr: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("instruction index decreases at line {line} ({prev} -> {next})")]
    Monotonicity { line: u64, prev: u64, next: u64 },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

const BINARY_MAGIC: [u8; 4] = *b"MTRB";
const BINARY_VERSION: u8 = 1;
const RECORD_BYTES: usize = 25;

// ---------------------------------------------------------------------------
// Reading
// ---------------------------------------------------------------------------

enum Decoder {
    Text { lines: Box<dyn BufRead>, line_no: u64 },
    Binary { input: Box<dyn Read>, remaining: u64, record_no: u64 },
}

/// Streaming trace reader; yields requests in file order and rejects
/// decreasing instruction indices.
pub struct TraceReader {
    decoder: Decoder,
    last_instr: Option<u64>,
    done: bool,
}

impl TraceReader {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let file = File::open(path)?;
        let mut buf = BufReader::new(file);
        let head = buf.fill_buf()?;
        let reader: Box<dyn BufRead> = if head.starts_with(&[0x1f, 0x8b]) {
            Box::new(BufReader::new(flate2::bufread::GzDecoder::new(buf)))
        } else {
            Box::new(buf)
        };
        Self::from_reader(reader)
    }

    pub fn from_reader(mut reader: Box<dyn BufRead>) -> Result<Self, TraceError> {
        let head = reader.fill_buf()?;
        let decoder = if head.starts_with(&BINARY_MAGIC) {
            let mut header = [0u8; 13];
            reader.read_exact(&mut header)?;
            if header[4] != BINARY_VERSION {
                return Err(TraceError::Parse {
                    line: 0,
                    msg: format!("unsupported binary trace version {}", header[4]),
                });
            }
            let count = u64::from_le_bytes(header[5..13].try_into().unwrap());
            Decoder::Binary { input: Box::new(reader), remaining: count, record_no: 0 }
        } else {
            Decoder::Text { lines: reader, line_no: 0 }
        };
        Ok(TraceReader { decoder, last_instr: None, done: false })
    }

    fn next_record(&mut self) -> Result<Option<MemoryRequest>, TraceError> {
        match &mut self.decoder {
            Decoder::Text { lines, line_no } => {
                let mut buf = String::new();
                loop {
                    buf.clear();
                    if lines.read_line(&mut buf)? == 0 {
                        return Ok(None);
                    }
                    *line_no += 1;
                    let line = buf.trim();
                    if line.is_empty() || line.starts_with('#') {
                        continue;
                    }
                    return parse_line(line, *line_no).map(Some);
                }
            }
            Decoder::Binary { input, remaining, record_no } => {
                if *remaining == 0 {
                    return Ok(None);
                }
                let mut rec = [0u8; RECORD_BYTES];
                input.read_exact(&mut rec).map_err(|e| TraceError::Parse {
                    line: *record_no,
                    msg: format!("truncated binary record: {e}"),
                })?;
                *remaining -= 1;
                *record_no += 1;
                let op = match rec[24] {
                    0 => MemOp::Read,
                    1 => MemOp::Write,
                    other => {
                        return Err(TraceError::Parse {
                            line: *record_no,
                            msg: format!("bad op byte {other}"),
                        })
                    }
                };
                Ok(Some(MemoryRequest {
                    instr_index: u64::from_le_bytes(rec[0..8].try_into().unwrap()),
                    pc: u64::from_le_bytes(rec[8..16].try_into().unwrap()),
                    op,
                    vaddr: u64::from_le_bytes(rec[16..24].try_into().unwrap()),
                }))
            }
        }
    }

    fn record_position(&self) -> u64 {
        match &self.decoder {
            Decoder::Text { line_no, .. } => *line_no,
            Decoder::Binary { record_no, .. } => *record_no,
        }
    }
}

fn parse_hex(field: &str, what: &str, line: u64) -> Result<u64, TraceError> {
    let digits = field
        .strip_prefix("0x")
        .or_else(|| field.strip_prefix("0X"))
        .ok_or_else(|| TraceError::Parse { line, msg: format!("{what} must be 0x-prefixed hex, got {field:?}") })?;
    u64::from_str_radix(digits, 16)
        .map_err(|e| TraceError::Parse { line, msg: format!("bad {what} {field:?}: {e}") })
}

fn parse_line(line: &str, line_no: u64) -> Result<MemoryRequest, TraceError> {
    let mut fields = line.split(',').map(str::trim);
    let missing = || TraceError::Parse { line: line_no, msg: "expected instr_index,pc,op,vaddr".into() };
    let instr = fields.next().ok_or_else(missing)?;
    let pc = fields.next().ok_or_else(missing)?;
    let op = fields.next().ok_or_else(missing)?;
    let vaddr = fields.next().ok_or_else(missing)?;
    if fields.next().is_some() {
        return Err(TraceError::Parse { line: line_no, msg: "too many fields".into() });
    }
    let instr_index = instr
        .parse::<u64>()
        .map_err(|e| TraceError::Parse { line: line_no, msg: format!("bad instr_index {instr:?}: {e}") })?;
    let op = match op {
        "R" => MemOp::Read,
        "W" => MemOp::Write,
        other => return Err(TraceError::Parse { line: line_no, msg: format!("op must be R or W, got {other:?}") }),
    };
    Ok(MemoryRequest {
        instr_index,
        pc: parse_hex(pc, "pc", line_no)?,
        op,
        vaddr: parse_hex(vaddr, "vaddr", line_no)?,
    })
}

impl Iterator for TraceReader {
    type Item = Result<MemoryRequest, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(req)) => {
                if let Some(prev) = self.last_instr {
                    if req.instr_index < prev {
                        self.done = true;
                        return Some(Err(TraceError::Monotonicity {
                            line: self.record_position(),
                            prev,
                            next: req.instr_index,
                        }));
                    }
                }
                self.last_instr = Some(req.instr_index);
                Some(Ok(req))
            }
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Writing
// ---------------------------------------------------------------------------

pub fn write_csv_to<'a, W: Write>(
    mut out: W,
    requests: impl IntoIterator<Item = &'a MemoryRequest>,
) -> io::Result<()> {
    for r in requests {
        writeln!(
            out,
            "{},{:#x},{},{:#x}",
            r.instr_index,
            r.pc,
            match r.op {
                MemOp::Read => 'R',
                MemOp::Write => 'W',
            },
            r.vaddr
        )?;
    }
    Ok(())
}

pub fn write_csv<'a>(
    path: impl AsRef<Path>,
    requests: impl IntoIterator<Item = &'a MemoryRequest>,
) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_csv_to(&mut w, requests)?;
    w.flush()
}

fn record_bytes(r: &MemoryRequest) -> [u8; RECORD_BYTES] {
    let mut rec = [0u8; RECORD_BYTES];
    rec[0..8].copy_from_slice(&r.instr_index.to_le_bytes());
    rec[8..16].copy_from_slice(&r.pc.to_le_bytes());
    rec[16..24].copy_from_slice(&r.vaddr.to_le_bytes());
    rec[24] = match r.op {
        MemOp::Read => 0,
        MemOp::Write => 1,
    };
    rec
}

pub fn write_binary(path: impl AsRef<Path>, requests: &[MemoryRequest]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&BINARY_MAGIC)?;
    w.write_all(&[BINARY_VERSION])?;
    w.write_all(&(requests.len() as u64).to_le_bytes())?;
    for r in requests {
        w.write_all(&record_bytes(r))?;
    }
    w.flush()
}

/// Format-independent identity of a trace: SHA-256 over the canonical record
/// encoding. The CSV and binary forms of the same trace fingerprint equal.
pub struct TraceFingerprint {
    hasher: Sha256,
    pub records: u64,
}

impl Default for TraceFingerprint {
    fn default() -> Self {
        TraceFingerprint { hasher: Sha256::new(), records: 0 }
    }
}

impl TraceFingerprint {
    pub fn update(&mut self, r: &MemoryRequest) {
        self.hasher.update(record_bytes(r));
        self.records += 1;
    }

    pub fn finish(self) -> String {
        let digest = self.hasher.finalize();
        let mut s = String::with_capacity(16);
        for b in &digest[..8] {
            s.push_str(&format!("{b:02x}"));
        }
        format!("{}:{}", self.records, s)
    }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

/// How re-accesses spread over a phase's hot pages.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum AccessSpread {
    Uniform,
    Zipf { exponent: f64 },
}

/// Parameters for the synthetic trace generators. Generation is a pure
/// function of (spec, seed): identical inputs give byte-identical traces.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub num_ftis: u32,
    /// Fraction of FTIs whose pages receive `hot_access_share` of accesses.
    pub hot_fti_fraction: f64,
    pub hot_access_share: f64,
    pub hot_page_spread: AccessSpread,
    /// Fraction of FTIs that are read-oriented; the rest are write-oriented.
    pub read_fti_fraction: f64,
    pub phases: u32,
    pub accesses_per_phase: u64,
    pub pages_per_fti_per_phase: u32,
    pub phase_length_instructions: u64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_ftis: 24,
            hot_fti_fraction: 0.17,
            hot_access_share: 0.90,
            hot_page_spread: AccessSpread::Uniform,
            read_fti_fraction: 0.5,
            phases: 8,
            accesses_per_phase: 100_000,
            pages_per_fti_per_phase: 32,
            phase_length_instructions: 100_000_000,
            seed: 1,
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), TraceError> {
        for (name, v) in [
            ("hot_fti_fraction", self.hot_fti_fraction),
            ("hot_access_share", self.hot_access_share),
            ("read_fti_fraction", self.read_fti_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TraceError::InvalidSpec(format!("{name} = {v} not in [0, 1]")));
            }
        }
        if self.num_ftis == 0 || self.phases == 0 || self.pages_per_fti_per_phase == 0 {
            return Err(TraceError::InvalidSpec("counts must be positive".into()));
        }
        let first_touches = u64::from(self.num_ftis) * u64::from(self.pages_per_fti_per_phase);
        if self.accesses_per_phase < first_touches {
            return Err(TraceError::InvalidSpec(format!(
                "accesses_per_phase {} cannot cover {} first touches",
                self.accesses_per_phase, first_touches
            )));
        }
        if self.phase_length_instructions < self.accesses_per_phase {
            return Err(TraceError::InvalidSpec(
                "phase_length_instructions must be >= accesses_per_phase".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Fti {
    pc: u64,
    hot: bool,
    read_oriented: bool,
}

fn build_ftis(spec: &SyntheticSpec, id_base: u32) -> Vec<Fti> {
    let n = spec.num_ftis as usize;
    let hot_count = ((spec.hot_fti_fraction * n as f64).round() as usize).min(n);
    let read_count = ((spec.read_fti_fraction * n as f64).round() as usize).min(n);
    // Striping spreads read orientation evenly across hot and cold FTIs:
    // exactly read_count of the n indices satisfy the floor inequality.
    (0..n)
        .map(|i| Fti {
            pc: 0x40_0000 + u64::from(id_base + i as u32) * 0x40,
            hot: i < hot_count,
            read_oriented: (i + 1) * read_count / n > i * read_count / n,
        })
        .collect()
}

struct PhaseEmitter<'a> {
    spec: &'a SyntheticSpec,
    next_page: u64,
}

enum Event {
    FirstTouch(usize),
    ReAccess(usize),
}

impl<'a> PhaseEmitter<'a> {
    fn emit_phase(
        &mut self,
        out: &mut Vec<MemoryRequest>,
        rng: &mut ChaCha8Rng,
        ftis: &[Fti],
        phase: u64,
    ) {
        let spec = self.spec;
        // Fresh pages for this phase, grouped by owning FTI.
        let per_fti = spec.pages_per_fti_per_phase as usize;
        let mut page_fti = Vec::with_capacity(ftis.len() * per_fti);
        let mut page_vpn = Vec::with_capacity(ftis.len() * per_fti);
        for (fti_idx, _) in ftis.iter().enumerate() {
            for _ in 0..per_fti {
                page_fti.push(fti_idx);
                page_vpn.push(self.next_page);
                self.next_page += 1;
            }
        }
        let hot_pages: Vec<usize> =
            (0..page_fti.len()).filter(|p| ftis[page_fti[*p]].hot).collect();
        let cold_pages: Vec<usize> =
            (0..page_fti.len()).filter(|p| !ftis[page_fti[*p]].hot).collect();

        let total = spec.accesses_per_phase;
        let first_touches = page_fti.len() as u64;
        let re_total = total - first_touches;
        let hot_first = hot_pages.len() as u64;
        let want_hot = (spec.hot_access_share * total as f64).round() as u64;
        let hot_re = if hot_pages.is_empty() {
            0
        } else {
            want_hot.saturating_sub(hot_first).min(re_total)
        };
        let cold_re = re_total - hot_re;

        let zipf_cdf = |pages: &[usize], exponent: f64| -> Vec<f64> {
            let mut acc = 0.0;
            let mut cdf = Vec::with_capacity(pages.len());
            for rank in 0..pages.len() {
                acc += 1.0 / ((rank + 1) as f64).powf(exponent);
                cdf.push(acc);
            }
            for v in &mut cdf {
                *v /= acc;
            }
            cdf
        };
        let hot_cdf = match spec.hot_page_spread {
            AccessSpread::Uniform => None,
            AccessSpread::Zipf { exponent } => Some(zipf_cdf(&hot_pages, exponent)),
        };
        let pick_hot = |rng: &mut ChaCha8Rng| -> usize {
            match &hot_cdf {
                None => hot_pages[rng.gen_range(0..hot_pages.len())],
                Some(cdf) => {
                    let x: f64 = rng.gen();
                    let idx = cdf.partition_point(|c| *c < x).min(cdf.len() - 1);
                    hot_pages[idx]
                }
            }
        };

        let mut events = Vec::with_capacity(total as usize);
        for p in 0..page_fti.len() {
            events.push(Event::FirstTouch(p));
        }
        for _ in 0..hot_re {
            events.push(Event::ReAccess(pick_hot(rng)));
        }
        for _ in 0..cold_re {
            let p = if cold_pages.is_empty() {
                pick_hot(rng)
            } else {
                cold_pages[rng.gen_range(0..cold_pages.len())]
            };
            events.push(Event::ReAccess(p));
        }
        // Fisher-Yates, then repair ordering so each page's first access
        // carries the FTI's pc.
        for i in (1..events.len()).rev() {
            events.swap(i, rng.gen_range(0..=i));
        }
        let gap = (spec.phase_length_instructions / total).max(1);
        let base_instr = phase * spec.phase_length_instructions;
        let vaddr_of = |p: usize| 0x5500_0000_0000u64 + page_vpn[p] * PAGE_BYTES;
        let mut touched = vec![false; page_fti.len()];
        for (slot, ev) in events.into_iter().enumerate() {
            let p = match ev {
                Event::FirstTouch(p) | Event::ReAccess(p) => p,
            };
            let fti = &ftis[page_fti[p]];
            let first = !touched[p];
            touched[p] = true;
            let op = if fti.read_oriented { MemOp::Read } else { MemOp::Write };
            out.push(MemoryRequest {
                instr_index: base_instr + slot as u64 * gap,
                pc: if first { fti.pc } else { fti.pc | 0x10_0000 },
                op,
                vaddr: vaddr_of(p),
            });
        }
    }
}

/// Skewed trace: a configured fraction of FTIs owns pages that receive the
/// configured share of accesses (defaults: 17% of FTIs, 90% of accesses).
/// Each phase first-touches a fresh set of pages per FTI and re-accesses
/// only that phase's pages.
pub fn generate_skewed(spec: &SyntheticSpec) -> Result<Vec<MemoryRequest>, TraceError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ftis = build_ftis(spec, 0);
    let mut out = Vec::with_capacity((spec.accesses_per_phase * u64::from(spec.phases)) as usize);
    let mut emitter = PhaseEmitter { spec, next_page: 0 };
    for phase in 0..u64::from(spec.phases) {
        emitter.emit_phase(&mut out, &mut rng, &ftis, phase);
    }
    Ok(out)
}

/// Phase-shift trace: the FTI working set changes at the midpoint (plus
/// `overlap_ftis` carried over), modeling a program whose behavior changes
/// partway through execution. Requires at least two phases.
pub fn generate_phase_shift(
    spec: &SyntheticSpec,
    overlap_ftis: u32,
) -> Result<Vec<MemoryRequest>, TraceError> {
    spec.validate()?;
    if spec.phases < 2 {
        return Err(TraceError::InvalidSpec("phase-shift trace needs at least 2 phases".into()));
    }
    if overlap_ftis > spec.num_ftis {
        return Err(TraceError::InvalidSpec("overlap_ftis exceeds num_ftis".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let set_a = build_ftis(spec, 0);
    // Set B reuses the last `overlap_ftis` pcs of A and continues from there;
    // hotness and orientation follow position within the set either way.
    let set_b = build_ftis(spec, spec.num_ftis - overlap_ftis);
    let shift_at = u64::from(spec.phases / 2);
    let mut out = Vec::with_capacity((spec.accesses_per_phase * u64::from(spec.phases)) as usize);
    let mut emitter = PhaseEmitter { spec, next_page: 0 };
    for phase in 0..u64::from(spec.phases) {
        let ftis = if phase < shift_at { &set_a } else { &set_b };
        emitter.emit_phase(&mut out, &mut rng, ftis, phase);
    }
    Ok(out)
}

/// First-touch pcs per phase of a trace; a page is first-touched at its
/// earliest access.
pub fn first_touch_pcs_by_phase(
    requests: &[MemoryRequest],
    phase_length: u64,
) -> Vec<HashSet<u64>> {
    let mut seen = HashSet::new();
    let mut phases: Vec<HashSet<u64>> = Vec::new();
    for r in requests {
        let phase = (r.instr_index / phase_length) as usize;
        while phases.len() <= phase {
            phases.push(HashSet::new());
        }
        if seen.insert(r.vaddr / PAGE_BYTES) {
            phases[phase].insert(r.pc);
        }
    }
    phases
}
