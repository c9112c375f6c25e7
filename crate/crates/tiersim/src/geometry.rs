//! Memory organization, physical address bit-slicing, segment decoding, and
//! the timing/bias lookup tables.
//!
//! Addresses are sliced MSB-to-LSB as `rank | group | tile | row | column |
//! bank | channel | byte`, with each field width being log2 of the
//! corresponding count. Keeping bank and channel in the low bits interleaves
//! consecutive cache lines across banks and channels. The near/far segment of
//! a location is derived from its row: rows below `near_rows` sit in the near
//! bitline segment, directly attached to the peripheral circuit.
//!
//! Timings are stored as exact integer picoseconds and converted to memory
//! clock cycles (rounding up) only at the controller level, so the tables can
//! be checked bit-exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Bytes per burst transfer; also the width of the byte field.
pub const BURST_BYTES: u64 = 64;
const BYTE_BITS: u32 = 6;

/// Simulated page size; pages never straddle a row-segment boundary.
pub const PAGE_BYTES: u64 = 4096;
pub const PAGE_SHIFT: u32 = 12;

/// Bursts needed to move one page over a channel.
pub const BURSTS_PER_PAGE: u64 = PAGE_BYTES / BURST_BYTES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitKind {
    Dram,
    Pcm,
}

impl UnitKind {
    pub const ALL: [UnitKind; 2] = [UnitKind::Dram, UnitKind::Pcm];

    pub fn name(self) -> &'static str {
        match self {
            UnitKind::Dram => "dram",
            UnitKind::Pcm => "pcm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Near,
    Far,
}

impl Segment {
    pub const ALL: [Segment; 2] = [Segment::Near, Segment::Far];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Near => "near",
            Segment::Far => "far",
        }
    }
}

/// Demand operation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemOp {
    Read,
    Write,
}

impl MemOp {
    pub const ALL: [MemOp; 2] = [MemOp::Read, MemOp::Write];

    pub fn name(self) -> &'static str {
        match self {
            MemOp::Read => "read",
            MemOp::Write => "write",
        }
    }
}

/// PCM cell operation, for bias-voltage lookup.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellOp {
    Set,
    Reset,
    Read,
}

impl CellOp {
    pub const ALL: [CellOp; 3] = [CellOp::Set, CellOp::Reset, CellOp::Read];

    pub fn name(self) -> &'static str {
        match self {
            CellOp::Set => "set",
            CellOp::Reset => "reset",
            CellOp::Read => "read",
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GeometryError {
    #[error("address {addr:#x} out of range for {unit} capacity {capacity:#x}")]
    AddressOutOfRange { addr: u64, unit: &'static str, capacity: u64 },
    #[error("location field {field} = {value} exceeds bound {bound}")]
    FieldOutOfRange { field: &'static str, value: u64, bound: u64 },
    #[error("bias voltages are not applicable to DRAM")]
    BiasNotApplicable,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid timing table: {0}")]
    InvalidTiming(String),
    #[error("invalid bias table: {0}")]
    InvalidBias(String),
}

/// Organization of one memory unit (a DRAM or PCM main-memory device).
///
/// `groups_per_bank` are partitions for PCM and subarrays for DRAM;
/// `tiles_per_group` is 1 for DRAM. All counts must be powers of two so the
/// address bit-slicing is exact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryGeometry {
    pub unit_kind: UnitKind,
    pub capacity_bytes: u64,
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub banks_per_rank: u32,
    pub groups_per_bank: u32,
    pub tiles_per_group: u32,
    pub rows_per_tile: u32,
    pub near_rows: u32,
    pub clock_mhz: u32,
}

/// Fully decoded device coordinates for one physical address.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhysicalLocation {
    pub unit_kind: UnitKind,
    pub channel: u32,
    pub rank: u32,
    pub bank: u32,
    pub group: u32,
    pub tile: u32,
    pub row: u32,
    pub column: u32,
    pub byte_offset: u32,
    pub segment: Segment,
}

fn log2_exact(name: &'static str, v: u64) -> Result<u32, GeometryError> {
    if v == 0 || !v.is_power_of_two() {
        return Err(GeometryError::InvalidGeometry(format!(
            "{name} = {v} must be a nonzero power of two"
        )));
    }
    Ok(v.trailing_zeros())
}

impl MemoryGeometry {
    /// 128 GB PCM: 4 channels, 4 ranks/channel, 8 banks/rank, 8 partitions
    /// per bank, 128 tiles/partition, 4096 rows/tile, 512-row near segment.
    pub fn pcm_default() -> Self {
        MemoryGeometry {
            unit_kind: UnitKind::Pcm,
            capacity_bytes: 128 << 30,
            channels: 4,
            ranks_per_channel: 4,
            banks_per_rank: 8,
            groups_per_bank: 8,
            tiles_per_group: 128,
            rows_per_tile: 4096,
            near_rows: 512,
            clock_mhz: 1066,
        }
    }

    /// 64 GB DRAM: 2 channels, 4 ranks/channel, 8 banks/rank, 128 subarrays
    /// per bank, 512 rows/subarray, 128-row near segment.
    pub fn dram_default() -> Self {
        MemoryGeometry {
            unit_kind: UnitKind::Dram,
            capacity_bytes: 64 << 30,
            channels: 2,
            ranks_per_channel: 4,
            banks_per_rank: 8,
            groups_per_bank: 128,
            tiles_per_group: 1,
            rows_per_tile: 512,
            near_rows: 128,
            clock_mhz: 1066,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let bits = self.field_bits()?;
        if self.near_rows == 0 || self.near_rows >= self.rows_per_tile {
            return Err(GeometryError::InvalidGeometry(format!(
                "near_rows = {} must satisfy 0 < near_rows < rows_per_tile = {}",
                self.near_rows, self.rows_per_tile
            )));
        }
        if !u64::from(self.near_rows).is_power_of_two() {
            return Err(GeometryError::InvalidGeometry(format!(
                "near_rows = {} must be a power of two",
                self.near_rows
            )));
        }
        if self.clock_mhz == 0 {
            return Err(GeometryError::InvalidGeometry("clock_mhz must be nonzero".into()));
        }
        // A 4 KB page must sit entirely below the row field so that every
        // page maps to a single row (and hence a single segment).
        if bits.row_shift < PAGE_SHIFT {
            return Err(GeometryError::InvalidGeometry(format!(
                "bits below the row field ({}) must cover a {} B page",
                bits.row_shift, PAGE_BYTES
            )));
        }
        Ok(())
    }

    pub fn far_rows(&self) -> u32 {
        self.rows_per_tile - self.near_rows
    }

    fn field_bits(&self) -> Result<FieldBits, GeometryError> {
        let cap = log2_exact("capacity_bytes", self.capacity_bytes)?;
        let ch = log2_exact("channels", self.channels.into())?;
        let rank = log2_exact("ranks_per_channel", self.ranks_per_channel.into())?;
        let bank = log2_exact("banks_per_rank", self.banks_per_rank.into())?;
        let group = log2_exact("groups_per_bank", self.groups_per_bank.into())?;
        let tile = log2_exact("tiles_per_group", self.tiles_per_group.into())?;
        let row = log2_exact("rows_per_tile", self.rows_per_tile.into())?;
        let fixed = BYTE_BITS + ch + bank + row + tile + group + rank;
        if cap < fixed {
            return Err(GeometryError::InvalidGeometry(format!(
                "capacity 2^{cap} too small for the configured field widths (2^{fixed} minimum)"
            )));
        }
        let col = cap - fixed;
        Ok(FieldBits {
            col,
            ch,
            rank,
            bank,
            group,
            tile,
            row,
            row_shift: BYTE_BITS + ch + bank + col,
        })
    }

    /// Lowest address bit of the row field.
    pub fn row_shift(&self) -> u32 {
        self.field_bits().expect("validated geometry").row_shift
    }

    /// The address bit that separates near from far rows: for the default
    /// PCM geometry this is bit 22 (`row_shift` 13 + log2(512) = 9). An
    /// address belongs to the near segment iff all row bits at or above this
    /// position are zero.
    pub fn segment_select_bit(&self) -> u32 {
        self.row_shift() + u64::from(self.near_rows).trailing_zeros()
    }

    pub fn decode(&self, addr: u64) -> Result<PhysicalLocation, GeometryError> {
        if addr >= self.capacity_bytes {
            return Err(GeometryError::AddressOutOfRange {
                addr,
                unit: self.unit_kind.name(),
                capacity: self.capacity_bytes,
            });
        }
        let b = self.field_bits()?;
        let mut rest = addr;
        let mut take = |bits: u32| -> u64 {
            let v = rest & ((1u64 << bits) - 1);
            rest >>= bits;
            v
        };
        let byte_offset = take(BYTE_BITS) as u32;
        let channel = take(b.ch) as u32;
        let bank = take(b.bank) as u32;
        let column = take(b.col) as u32;
        let row = take(b.row) as u32;
        let tile = take(b.tile) as u32;
        let group = take(b.group) as u32;
        let rank = take(b.rank) as u32;
        debug_assert_eq!(rest, 0);
        Ok(PhysicalLocation {
            unit_kind: self.unit_kind,
            channel,
            rank,
            bank,
            group,
            tile,
            row,
            column,
            byte_offset,
            segment: self.segment_of_row(row),
        })
    }

    /// Inverse of [`decode`](Self::decode): packs coordinates back into a
    /// physical byte address.
    pub fn encode(&self, loc: &PhysicalLocation) -> Result<u64, GeometryError> {
        let b = self.field_bits()?;
        let check = |field: &'static str, value: u32, bits: u32| -> Result<u64, GeometryError> {
            if u64::from(value) >= (1u64 << bits) {
                Err(GeometryError::FieldOutOfRange {
                    field,
                    value: value.into(),
                    bound: 1u64 << bits,
                })
            } else {
                Ok(value.into())
            }
        };
        let mut addr = check("rank", loc.rank, b.rank)?;
        addr = (addr << b.group) | check("group", loc.group, b.group)?;
        addr = (addr << b.tile) | check("tile", loc.tile, b.tile)?;
        addr = (addr << b.row) | check("row", loc.row, b.row)?;
        addr = (addr << b.col) | check("column", loc.column, b.col)?;
        addr = (addr << b.bank) | check("bank", loc.bank, b.bank)?;
        addr = (addr << b.ch) | check("channel", loc.channel, b.ch)?;
        addr = (addr << BYTE_BITS) | check("byte_offset", loc.byte_offset, BYTE_BITS)?;
        Ok(addr)
    }

    pub fn segment_of_row(&self, row: u32) -> Segment {
        if row < self.near_rows {
            Segment::Near
        } else {
            Segment::Far
        }
    }

    // ----- frame arithmetic -------------------------------------------------
    //
    // A frame is a page-aligned 4 KB slice of the physical address space.
    // Because channel, bank, and the low column bits all sit below bit 12,
    // one frame has a single (rank, group, tile, row) and fans its bursts out
    // across every channel and bank. Frames sharing (rank, group, tile) form
    // one contiguous "block" in frame-index space; intra-bank migration is
    // possible exactly between frames of the same block.

    pub fn total_frames(&self) -> u64 {
        self.capacity_bytes >> PAGE_SHIFT
    }

    /// Frames that share one row (the row's span below bit 12).
    pub fn frames_per_row(&self) -> u64 {
        1u64 << (self.row_shift() - PAGE_SHIFT)
    }

    pub fn frames_per_block(&self) -> u64 {
        u64::from(self.rows_per_tile) * self.frames_per_row()
    }

    pub fn near_frames_per_block(&self) -> u64 {
        u64::from(self.near_rows) * self.frames_per_row()
    }

    pub fn block_count(&self) -> u64 {
        self.total_frames() / self.frames_per_block()
    }

    pub fn block_of_frame(&self, frame: u64) -> u64 {
        frame / self.frames_per_block()
    }

    pub fn row_of_frame(&self, frame: u64) -> u32 {
        ((frame / self.frames_per_row()) % u64::from(self.rows_per_tile)) as u32
    }

    pub fn segment_of_frame(&self, frame: u64) -> Segment {
        self.segment_of_row(self.row_of_frame(frame))
    }

    pub fn frame_base_addr(&self, frame: u64) -> u64 {
        frame << PAGE_SHIFT
    }
}

struct FieldBits {
    col: u32,
    ch: u32,
    rank: u32,
    bank: u32,
    group: u32,
    tile: u32,
    row: u32,
    row_shift: u32,
}

// ---------------------------------------------------------------------------
// Timing table
// ---------------------------------------------------------------------------

/// One row of the latency lookup table, in exact picoseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingEntry {
    pub trcd_ps: u64,
    pub tcl_ps: u64,
    pub tbl_ps: u64,
    pub trp_ps: u64,
    pub trc_ps: u64,
}

impl TimingEntry {
    const fn new(trcd_ps: u64, tcl_ps: u64, tbl_ps: u64, trp_ps: u64, trc_ps: u64) -> Self {
        TimingEntry { trcd_ps, tcl_ps, tbl_ps, trp_ps, trc_ps }
    }

    /// tRC must equal the sum of its components, exactly.
    pub fn validate(&self) -> Result<(), GeometryError> {
        let sum = self.trcd_ps + self.tcl_ps + self.tbl_ps + self.trp_ps;
        if sum != self.trc_ps {
            return Err(GeometryError::InvalidTiming(format!(
                "tRC = {} ps but tRCD+tCL+tBL+tRP = {} ps",
                self.trc_ps, sum
            )));
        }
        Ok(())
    }

    pub fn trc_ns(&self) -> f64 {
        self.trc_ps as f64 / 1000.0
    }

    pub fn to_cycles(&self, clock_mhz: u32) -> TimingCycles {
        TimingCycles {
            trcd: ps_to_cycles(self.trcd_ps, clock_mhz),
            tcl: ps_to_cycles(self.tcl_ps, clock_mhz),
            tbl: ps_to_cycles(self.tbl_ps, clock_mhz),
            trp: ps_to_cycles(self.trp_ps, clock_mhz),
            trc: ps_to_cycles(self.trc_ps, clock_mhz),
        }
    }
}

/// Timing parameters in integer memory-clock cycles (rounded up).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingCycles {
    pub trcd: u64,
    pub tcl: u64,
    pub tbl: u64,
    pub trp: u64,
    pub trc: u64,
}

/// ceil(ps * MHz / 1e6), i.e. ceil(ns * MHz / 1e3).
pub fn ps_to_cycles(ps: u64, clock_mhz: u32) -> u64 {
    let num = (ps as u128) * (clock_mhz as u128);
    ((num + 999_999) / 1_000_000) as u64
}

/// Latency lookup table over (unit, segment, operation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimingTable {
    entries: [TimingEntry; 8],
}

fn timing_index(unit: UnitKind, segment: Segment, op: MemOp) -> usize {
    let u = match unit {
        UnitKind::Dram => 0,
        UnitKind::Pcm => 1,
    };
    let s = match segment {
        Segment::Near => 0,
        Segment::Far => 1,
    };
    let o = match op {
        MemOp::Read => 0,
        MemOp::Write => 1,
    };
    u * 4 + s * 2 + o
}

impl Default for TimingTable {
    fn default() -> Self {
        // DRAM from the 45 nm tiered-subarray design, PCM from SPICE runs on
        // the 45 nm PDK; both at ns granularity, stored in ps.
        let mut entries = [TimingEntry::new(0, 0, 0, 0, 0); 8];
        entries[timing_index(UnitKind::Dram, Segment::Near, MemOp::Read)] =
            TimingEntry::new(9_300, 5_500, 7_500, 5_500, 27_800);
        entries[timing_index(UnitKind::Dram, Segment::Near, MemOp::Write)] =
            TimingEntry::new(9_300, 5_500, 7_500, 5_500, 27_800);
        entries[timing_index(UnitKind::Dram, Segment::Far, MemOp::Read)] =
            TimingEntry::new(15_000, 15_000, 7_500, 15_000, 52_500);
        entries[timing_index(UnitKind::Dram, Segment::Far, MemOp::Write)] =
            TimingEntry::new(15_000, 15_000, 7_500, 15_000, 52_500);
        entries[timing_index(UnitKind::Pcm, Segment::Near, MemOp::Read)] =
            TimingEntry::new(3_750, 22_500, 15_000, 0, 41_250);
        entries[timing_index(UnitKind::Pcm, Segment::Near, MemOp::Write)] =
            TimingEntry::new(3_750, 101_000, 15_000, 0, 119_750);
        entries[timing_index(UnitKind::Pcm, Segment::Far, MemOp::Read)] =
            TimingEntry::new(3_750, 37_500, 15_000, 0, 56_250);
        entries[timing_index(UnitKind::Pcm, Segment::Far, MemOp::Write)] =
            TimingEntry::new(3_750, 142_800, 15_000, 0, 161_550);
        TimingTable { entries }
    }
}

impl TimingTable {
    pub fn lookup(&self, unit: UnitKind, segment: Segment, op: MemOp) -> TimingEntry {
        self.entries[timing_index(unit, segment, op)]
    }

    pub fn set(&mut self, unit: UnitKind, segment: Segment, op: MemOp, entry: TimingEntry) {
        self.entries[timing_index(unit, segment, op)] = entry;
    }

    /// Checks tRC sums and the near-is-never-slower ordering.
    pub fn validate(&self) -> Result<(), GeometryError> {
        for unit in UnitKind::ALL {
            for op in MemOp::ALL {
                let near = self.lookup(unit, Segment::Near, op);
                let far = self.lookup(unit, Segment::Far, op);
                near.validate()?;
                far.validate()?;
                if near.trc_ps > far.trc_ps {
                    return Err(GeometryError::InvalidTiming(format!(
                        "near tRC {} ps exceeds far tRC {} ps for {} {}",
                        near.trc_ps,
                        far.trc_ps,
                        unit.name(),
                        op.name()
                    )));
                }
            }
        }
        Ok(())
    }

    /// CSV for golden testing: one line per (unit, segment, op), ns values.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,segment,op,trcd_ns,tcl_ns,tbl_ns,trp_ns,trc_ns\n");
        for unit in UnitKind::ALL {
            for segment in Segment::ALL {
                for op in MemOp::ALL {
                    let e = self.lookup(unit, segment, op);
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        unit.name(),
                        segment.name(),
                        op.name(),
                        fmt_ns(e.trcd_ps),
                        fmt_ns(e.tcl_ps),
                        fmt_ns(e.tbl_ps),
                        fmt_ns(e.trp_ps),
                        fmt_ns(e.trc_ps),
                    ));
                }
            }
        }
        out
    }
}

fn fmt_ns(ps: u64) -> String {
    if ps % 1000 == 0 {
        format!("{}", ps / 1000)
    } else {
        let mut s = format!("{}.{:03}", ps / 1000, ps % 1000);
        while s.ends_with('0') {
            s.pop();
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Bias table
// ---------------------------------------------------------------------------

/// PCM bias voltages in millivolts, per segment and cell operation. The near
/// segment uses the 512-cell bitline column, the far segment the 4096-cell
/// column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasTable {
    entries: [u32; 6],
}

fn bias_index(segment: Segment, op: CellOp) -> usize {
    let s = match segment {
        Segment::Near => 0,
        Segment::Far => 1,
    };
    let o = match op {
        CellOp::Set => 0,
        CellOp::Reset => 1,
        CellOp::Read => 2,
    };
    s * 3 + o
}

impl Default for BiasTable {
    fn default() -> Self {
        let mut entries = [0u32; 6];
        entries[bias_index(Segment::Near, CellOp::Set)] = 2_300;
        entries[bias_index(Segment::Near, CellOp::Reset)] = 6_900;
        entries[bias_index(Segment::Near, CellOp::Read)] = 1_200;
        entries[bias_index(Segment::Far, CellOp::Set)] = 3_700;
        entries[bias_index(Segment::Far, CellOp::Reset)] = 7_100;
        entries[bias_index(Segment::Far, CellOp::Read)] = 2_850;
        BiasTable { entries }
    }
}

impl BiasTable {
    pub fn lookup_mv(&self, segment: Segment, op: CellOp) -> u32 {
        self.entries[bias_index(segment, op)]
    }

    pub fn lookup_volts(&self, segment: Segment, op: CellOp) -> f64 {
        f64::from(self.lookup_mv(segment, op)) / 1000.0
    }

    pub fn set_mv(&mut self, segment: Segment, op: CellOp, mv: u32) {
        self.entries[bias_index(segment, op)] = mv;
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        for op in CellOp::ALL {
            let near = self.lookup_mv(Segment::Near, op);
            let far = self.lookup_mv(Segment::Far, op);
            if near == 0 || far == 0 {
                return Err(GeometryError::InvalidBias(format!(
                    "{} bias voltage must be positive",
                    op.name()
                )));
            }
            if near > far {
                return Err(GeometryError::InvalidBias(format!(
                    "near {} bias {} mV exceeds far bias {} mV",
                    op.name(),
                    near,
                    far
                )));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("op,near_v,far_v\n");
        for op in CellOp::ALL {
            out.push_str(&format!(
                "{},{},{}\n",
                op.name(),
                fmt_volts(self.lookup_mv(Segment::Near, op)),
                fmt_volts(self.lookup_mv(Segment::Far, op)),
            ));
        }
        out
    }
}

fn fmt_volts(mv: u32) -> String {
    if mv % 1000 == 0 {
        format!("{}", mv / 1000)
    } else {
        let mut s = format!("{}.{:03}", mv / 1000, mv % 1000);
        while s.ends_with('0') {
            s.pop();
        }
        s
    }
}

/// Timing and bias tables together, unit-aware.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tables {
    pub timing: TimingTable,
    pub bias: BiasTable,
}

impl Tables {
    pub fn validate(&self) -> Result<(), GeometryError> {
        self.timing.validate()?;
        self.bias.validate()
    }

    /// Bias lookup is PCM-only; DRAM charge sharing has no modeled bias.
    pub fn bias_mv(&self, unit: UnitKind, segment: Segment, op: CellOp) -> Result<u32, GeometryError> {
        match unit {
            UnitKind::Dram => Err(GeometryError::BiasNotApplicable),
            UnitKind::Pcm => Ok(self.bias.lookup_mv(segment, op)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pcm() -> MemoryGeometry {
        MemoryGeometry::pcm_default()
    }

    #[test]
    fn defaults_validate() {
        pcm().validate().unwrap();
        MemoryGeometry::dram_default().validate().unwrap();
        Tables::default().validate().unwrap();
    }

    #[test]
    fn pcm_bit_slicing_matches_reference_layout() {
        // 128 GB: [36:35]=rank [34:32]=partition [31:25]=tile [24:13]=row
        // [12:11]=col [10:8]=bank [7:6]=channel [5:0]=byte.
        let g = pcm();
        let addr = (0b10u64 << 35)
            | (0b101u64 << 32)
            | (0b0110001u64 << 25)
            | (0xABCu64 << 13)
            | (0b11u64 << 11)
            | (0b010u64 << 8)
            | (0b01u64 << 6)
            | 0x2A;
        let loc = g.decode(addr).unwrap();
        assert_eq!(loc.rank, 0b10);
        assert_eq!(loc.group, 0b101);
        assert_eq!(loc.tile, 0b0110001);
        assert_eq!(loc.row, 0xABC);
        assert_eq!(loc.column, 0b11);
        assert_eq!(loc.bank, 0b010);
        assert_eq!(loc.channel, 0b01);
        assert_eq!(loc.byte_offset, 0x2A);
        assert_eq!(g.encode(&loc).unwrap(), addr);
    }

    #[test]
    fn zero_address_is_all_zero_near() {
        let loc = pcm().decode(0).unwrap();
        assert_eq!(
            (loc.rank, loc.group, loc.tile, loc.row, loc.column, loc.bank, loc.channel, loc.byte_offset),
            (0, 0, 0, 0, 0, 0, 0, 0)
        );
        assert_eq!(loc.segment, Segment::Near);
    }

    #[test]
    fn bit_22_selects_far_segment() {
        let g = pcm();
        assert_eq!(g.segment_select_bit(), 22);
        let loc = g.decode(1u64 << 22).unwrap();
        assert_eq!(loc.row, 512);
        assert_eq!(loc.segment, Segment::Far);
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let g = pcm();
        assert_eq!(
            g.decode(g.capacity_bytes),
            Err(GeometryError::AddressOutOfRange {
                addr: g.capacity_bytes,
                unit: "pcm",
                capacity: g.capacity_bytes
            })
        );
    }

    #[test]
    fn encode_rejects_out_of_range_fields() {
        let g = pcm();
        let mut loc = g.decode(0).unwrap();
        loc.row = g.rows_per_tile;
        assert!(matches!(g.encode(&loc), Err(GeometryError::FieldOutOfRange { field: "row", .. })));
    }

    #[test]
    fn roundtrip_random_addresses() {
        // Brute-force round-trip oracle: decode then re-encode is identity.
        let mut state = 0x9E3779B97F4A7C15u64;
        for g in [pcm(), MemoryGeometry::dram_default()] {
            for _ in 0..4096 {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let addr = state % g.capacity_bytes;
                let loc = g.decode(addr).unwrap();
                assert_eq!(g.encode(&loc).unwrap(), addr);
            }
        }
    }

    #[test]
    fn column_and_byte_bits_never_change_segment() {
        let g = pcm();
        let base = (123u64 << 25) | (700u64 << 13);
        let s0 = g.decode(base).unwrap().segment;
        for col in 0..4u64 {
            for byte in [0u64, 1, 63] {
                for bank in 0..8u64 {
                    for ch in 0..4u64 {
                        let addr = base | (col << 11) | (bank << 8) | (ch << 6) | byte;
                        assert_eq!(g.decode(addr).unwrap().segment, s0);
                    }
                }
            }
        }
    }

    #[test]
    fn golden_timing_rows() {
        let t = TimingTable::default();
        let e = t.lookup(UnitKind::Pcm, Segment::Near, MemOp::Read);
        assert_eq!((e.trcd_ps, e.tcl_ps, e.tbl_ps, e.trp_ps, e.trc_ps), (3_750, 22_500, 15_000, 0, 41_250));
        assert_eq!(t.lookup(UnitKind::Pcm, Segment::Far, MemOp::Write).trc_ps, 161_550);
        assert_eq!(t.lookup(UnitKind::Dram, Segment::Near, MemOp::Read).trc_ps, 27_800);
    }

    #[test]
    fn near_trc_strictly_below_far_in_default_table() {
        let t = TimingTable::default();
        for unit in UnitKind::ALL {
            for op in MemOp::ALL {
                assert!(
                    t.lookup(unit, Segment::Near, op).trc_ps < t.lookup(unit, Segment::Far, op).trc_ps
                );
            }
        }
    }

    #[test]
    fn golden_bias_cells() {
        let b = BiasTable::default();
        assert_eq!(b.lookup_volts(Segment::Near, CellOp::Read), 1.2);
        assert_eq!(b.lookup_volts(Segment::Far, CellOp::Read), 2.85);
        assert_eq!(b.lookup_volts(Segment::Far, CellOp::Reset), 7.1);
    }

    #[test]
    fn bias_not_applicable_to_dram() {
        let t = Tables::default();
        assert_eq!(t.bias_mv(UnitKind::Dram, Segment::Near, CellOp::Read), Err(GeometryError::BiasNotApplicable));
        assert_eq!(t.bias_mv(UnitKind::Pcm, Segment::Near, CellOp::Read), Ok(1_200));
    }

    #[test]
    fn trc_sum_enforced() {
        let mut t = TimingTable::default();
        t.set(
            UnitKind::Dram,
            Segment::Near,
            MemOp::Read,
            TimingEntry::new(9_300, 5_500, 7_500, 5_500, 27_900),
        );
        assert!(t.validate().is_err());
    }

    #[test]
    fn cycle_conversion_rounds_up() {
        assert_eq!(ps_to_cycles(41_250, 1066), 44); // 43.9725
        assert_eq!(ps_to_cycles(0, 1066), 0);
        assert_eq!(ps_to_cycles(1_000_000, 1000), 1000);
        assert_eq!(ps_to_cycles(13_000, 1066), 14); // open-row DRAM near read+burst
    }

    #[test]
    fn frame_arithmetic_pcm() {
        let g = pcm();
        assert_eq!(g.frames_per_row(), 2);
        assert_eq!(g.frames_per_block(), 8192);
        assert_eq!(g.near_frames_per_block(), 1024);
        assert_eq!(g.block_count(), 4096);
        assert_eq!(g.segment_of_frame(0), Segment::Near);
        assert_eq!(g.segment_of_frame(1023), Segment::Near);
        assert_eq!(g.segment_of_frame(1024), Segment::Far);
        assert_eq!(g.row_of_frame(8192 + 3), 1);
    }

    #[test]
    fn frame_segment_agrees_with_decode() {
        let g = MemoryGeometry::dram_default();
        let mut state = 1u64;
        for _ in 0..2048 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let frame = state % g.total_frames();
            let loc = g.decode(g.frame_base_addr(frame)).unwrap();
            assert_eq!(loc.segment, g.segment_of_frame(frame));
            assert_eq!(loc.row, g.row_of_frame(frame));
        }
    }
}
