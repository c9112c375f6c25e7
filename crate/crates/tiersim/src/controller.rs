//! Per-channel memory controllers: split read/write queues, FR-FCFS
//! scheduling, row-buffer state, command timing, and execution of intra-bank
//! vs cross-bank page migrations.
//!
//! Each controller serializes one request at a time on its channel. A row
//! miss costs tRP(previous open row) + tRCD + tCL + tBL, a row hit costs
//! tCL + tBL; the data burst occupies the channel for tBL. Writes drain when
//! the write queue crosses a high watermark or the read queue is empty.
//! PCM's tRP is zero, so PCM banks close rows for free, exactly as the
//! timing table states.
//!
//! Migration between tiers of the same bank block copies rows internally
//! (a read row cycle plus a write row cycle through the shared peripheral
//! circuit) and leaves the channels untouched. Any other migration moves the
//! page as read bursts plus write bursts over the channels of both sides.

use crate::geometry::{
    MemOp, MemoryGeometry, Segment, TimingCycles, TimingTable, UnitKind, BURSTS_PER_PAGE,
};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ControllerError {
    #[error("migration source equals destination")]
    SameLocation,
    #[error("queue full on {0} channel {1}")]
    QueueFull(&'static str, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub queue_capacity: usize,
    pub write_watermark: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig { queue_capacity: 64, write_watermark: 32 }
    }
}

/// One 64-byte demand burst bound for a specific bank and row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstRequest {
    pub arrival: u64,
    pub seq: u64,
    pub op: MemOp,
    pub bank_idx: usize,
    pub row_key: u64,
    pub segment: Segment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct OpenRow {
    key: u64,
    segment: Segment,
}

/// Row-buffer and occupancy state of one bank, plus its access counters
/// indexed by (segment, op).
#[derive(Debug, Clone, Default)]
pub struct BankState {
    open_row: Option<OpenRow>,
    pub busy_until: u64,
    pub access_counts: [u64; 4],
}

fn count_index(segment: Segment, op: MemOp) -> usize {
    let s = match segment {
        Segment::Near => 0,
        Segment::Far => 1,
    };
    let o = match op {
        MemOp::Read => 0,
        MemOp::Write => 1,
    };
    s * 2 + o
}

/// Channel occupancy; demand and migration traffic are counted disjointly
/// and `busy_cycles` counts only burst-transfer cycles.
#[derive(Debug, Clone, Default)]
pub struct ChannelState {
    pub busy_until: u64,
    pub demand_bursts: u64,
    pub migration_bursts: u64,
    pub busy_cycles: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleChoice {
    pub queue: MemOp,
    pub index: usize,
    pub row_hit: bool,
}

/// Record of one serviced demand burst, for audits, aging, and energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemandServiced {
    pub unit: UnitKind,
    pub channel: u32,
    pub bank_idx: usize,
    pub row_key: u64,
    pub segment: Segment,
    pub op: MemOp,
    pub row_hit: bool,
    pub issue: u64,
    pub burst_start: u64,
    pub done: u64,
    pub tbl: u64,
}

pub struct Controller {
    pub unit: UnitKind,
    pub channel_id: u32,
    timing: [TimingCycles; 4],
    pub banks: Vec<BankState>,
    read_q: VecDeque<BurstRequest>,
    write_q: VecDeque<BurstRequest>,
    pub channel: ChannelState,
    cfg: ControllerConfig,
    service_until: u64,
    next_seq: u64,
}

fn seg_op_index(segment: Segment, op: MemOp) -> usize {
    count_index(segment, op)
}

impl Controller {
    pub fn new(
        unit: UnitKind,
        channel_id: u32,
        geom: &MemoryGeometry,
        timing_table: &TimingTable,
        cfg: ControllerConfig,
    ) -> Self {
        let mut timing = [TimingCycles { trcd: 0, tcl: 0, tbl: 0, trp: 0, trc: 0 }; 4];
        for segment in Segment::ALL {
            for op in MemOp::ALL {
                timing[seg_op_index(segment, op)] =
                    timing_table.lookup(unit, segment, op).to_cycles(geom.clock_mhz);
            }
        }
        let banks = (geom.ranks_per_channel * geom.banks_per_rank) as usize;
        Controller {
            unit,
            channel_id,
            timing,
            banks: vec![BankState::default(); banks],
            read_q: VecDeque::new(),
            write_q: VecDeque::new(),
            channel: ChannelState::default(),
            cfg,
            service_until: 0,
            next_seq: 0,
        }
    }

    pub fn timing(&self, segment: Segment, op: MemOp) -> TimingCycles {
        self.timing[seg_op_index(segment, op)]
    }

    pub fn pending(&self) -> usize {
        self.read_q.len() + self.write_q.len()
    }

    pub fn has_space(&self, op: MemOp) -> bool {
        let q = match op {
            MemOp::Read => &self.read_q,
            MemOp::Write => &self.write_q,
        };
        q.len() < self.cfg.queue_capacity
    }

    pub fn enqueue(&mut self, mut req: BurstRequest) -> Result<(), ControllerError> {
        if !self.has_space(req.op) {
            return Err(ControllerError::QueueFull(
                match req.op {
                    MemOp::Read => "read",
                    MemOp::Write => "write",
                },
                self.channel_id,
            ));
        }
        req.seq = self.next_seq;
        self.next_seq += 1;
        match req.op {
            MemOp::Read => self.read_q.push_back(req),
            MemOp::Write => self.write_q.push_back(req),
        }
        Ok(())
    }

    fn queue(&self, op: MemOp) -> &VecDeque<BurstRequest> {
        match op {
            MemOp::Read => &self.read_q,
            MemOp::Write => &self.write_q,
        }
    }

    /// FR-FCFS over one queue: first row-buffer hit in arrival order among
    /// requests whose bank is free, else the oldest ready request.
    fn pick_in_queue(&self, op: MemOp, now: u64) -> Option<ScheduleChoice> {
        let mut oldest_ready: Option<usize> = None;
        for (i, req) in self.queue(op).iter().enumerate() {
            let bank = &self.banks[req.bank_idx];
            if bank.busy_until > now {
                continue;
            }
            if bank.open_row.map(|r| r.key) == Some(req.row_key) {
                return Some(ScheduleChoice { queue: op, index: i, row_hit: true });
            }
            if oldest_ready.is_none() {
                oldest_ready = Some(i);
            }
        }
        oldest_ready.map(|index| ScheduleChoice { queue: op, index, row_hit: false })
    }

    /// Picks the next request to service at `now`, or None when no request
    /// is ready. Writes take priority while the write queue is at or above
    /// the watermark, or whenever the read queue is empty.
    pub fn schedule(&self, now: u64) -> Option<ScheduleChoice> {
        let drain_writes = self.write_q.len() >= self.cfg.write_watermark || self.read_q.is_empty();
        let (first, second) =
            if drain_writes { (MemOp::Write, MemOp::Read) } else { (MemOp::Read, MemOp::Write) };
        self.pick_in_queue(first, now).or_else(|| self.pick_in_queue(second, now))
    }

    /// Services one request if the channel is idle and something is ready.
    pub fn try_issue(&mut self, now: u64) -> Option<DemandServiced> {
        if self.service_until > now {
            return None;
        }
        let choice = self.schedule(now)?;
        let req = match choice.queue {
            MemOp::Read => self.read_q.remove(choice.index).unwrap(),
            MemOp::Write => self.write_q.remove(choice.index).unwrap(),
        };
        let bank = &mut self.banks[req.bank_idx];
        let issue = now.max(bank.busy_until);
        let t = self.timing[seg_op_index(req.segment, req.op)];
        let pre = if choice.row_hit {
            t.tcl
        } else {
            // Precharge cost belongs to the row being closed.
            let trp_prev = match bank.open_row {
                Some(prev) => self.timing[seg_op_index(prev.segment, MemOp::Read)].trp,
                None => 0,
            };
            trp_prev + t.trcd + t.tcl
        };
        let burst_start = (issue + pre).max(self.channel.busy_until);
        let done = burst_start + t.tbl;
        bank.open_row = Some(OpenRow { key: req.row_key, segment: req.segment });
        bank.busy_until = done;
        bank.access_counts[count_index(req.segment, req.op)] += 1;
        self.channel.busy_until = done;
        self.channel.busy_cycles += t.tbl;
        self.channel.demand_bursts += 1;
        self.service_until = done;
        Some(DemandServiced {
            unit: self.unit,
            channel: self.channel_id,
            bank_idx: req.bank_idx,
            row_key: req.row_key,
            segment: req.segment,
            op: req.op,
            row_hit: choice.row_hit,
            issue,
            burst_start,
            done,
            tbl: t.tbl,
        })
    }

    /// Earliest time at or after `now` when `try_issue` could make progress,
    /// or None when the queues are empty.
    pub fn next_event_time(&self, now: u64) -> Option<u64> {
        if self.pending() == 0 {
            return None;
        }
        let base = now.max(self.service_until);
        let mut best: Option<u64> = None;
        for q in [&self.read_q, &self.write_q] {
            for req in q {
                let t = base.max(self.banks[req.bank_idx].busy_until);
                best = Some(best.map_or(t, |b: u64| b.min(t)));
            }
        }
        best
    }

    /// Blocks every bank of `rank` until `until` (used while a page that
    /// spans the rank's banks is being migrated) and invalidates their row
    /// buffers.
    pub fn block_rank(&mut self, rank: u32, banks_per_rank: u32, until: u64) {
        let start = (rank * banks_per_rank) as usize;
        for bank in &mut self.banks[start..start + banks_per_rank as usize] {
            bank.busy_until = bank.busy_until.max(until);
            bank.open_row = None;
        }
    }

    /// Accounts migration traffic on this channel: `bursts` transfers of
    /// `tbl` cycles each, with the channel held until `until`.
    pub fn add_migration_bursts(&mut self, bursts: u64, tbl: u64, until: u64) {
        self.channel.migration_bursts += bursts;
        self.channel.busy_cycles += bursts * tbl;
        self.channel.busy_until = self.channel.busy_until.max(until);
        self.service_until = self.service_until.max(until);
    }

    pub fn demand_access_counts(&self) -> [u64; 4] {
        let mut total = [0u64; 4];
        for bank in &self.banks {
            for (i, c) in bank.access_counts.iter().enumerate() {
                total[i] += c;
            }
        }
        total
    }

    pub fn busy_horizon(&self) -> u64 {
        self.service_until
    }

    #[cfg(test)]
    fn force_open_row(&mut self, bank_idx: usize, row_key: u64, segment: Segment) {
        self.banks[bank_idx].open_row = Some(OpenRow { key: row_key, segment });
    }
}

// ---------------------------------------------------------------------------
// Migration execution across controllers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationKind {
    /// Near/far move within one bank block; no channel traffic.
    IntraBank,
    /// Channel-borne move between blocks of the same unit.
    CrossBankSameUnit,
    /// Channel-borne move between units.
    CrossUnit,
}

/// Aging/energy contribution of one migration side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MigrationSideEvents {
    pub unit: UnitKind,
    pub segment: Segment,
    pub op: MemOp,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MigrationOutcome {
    pub kind: MigrationKind,
    pub start: u64,
    pub end: u64,
    pub read_bursts: u64,
    pub write_bursts: u64,
    pub sides: [MigrationSideEvents; 2],
}

/// All controllers of one memory unit.
pub struct UnitBackend {
    pub geom: MemoryGeometry,
    pub controllers: Vec<Controller>,
}

impl UnitBackend {
    pub fn new(geom: MemoryGeometry, timing: &TimingTable, cfg: ControllerConfig) -> Self {
        let controllers = (0..geom.channels)
            .map(|ch| Controller::new(geom.unit_kind, ch, &geom, timing, cfg))
            .collect();
        UnitBackend { geom, controllers }
    }

    fn rank_of_block(&self, block: u64) -> u32 {
        let blocks_per_rank =
            u64::from(self.geom.groups_per_bank) * u64::from(self.geom.tiles_per_group);
        (block / blocks_per_rank) as u32
    }

    /// Bank instances one page spans: every bank of its rank on every
    /// channel.
    fn slices(&self) -> u64 {
        u64::from(self.geom.channels) * u64::from(self.geom.banks_per_rank)
    }

    fn block_rank_all_channels(&mut self, rank: u32, until: u64) {
        let banks_per_rank = self.geom.banks_per_rank;
        for c in &mut self.controllers {
            c.block_rank(rank, banks_per_rank, until);
        }
    }

    fn rank_busy_horizon(&self, rank: u32) -> u64 {
        let start = (rank * self.geom.banks_per_rank) as usize;
        let end = start + self.geom.banks_per_rank as usize;
        self.controllers
            .iter()
            .flat_map(|c| c.banks[start..end].iter().map(|b| b.busy_until))
            .max()
            .unwrap_or(0)
    }

    fn channels_busy_horizon(&self) -> u64 {
        self.controllers.iter().map(|c| c.channel.busy_until).max().unwrap_or(0)
    }
}

/// Moves one page between frames. Same-block moves run inside the bank
/// through the peripheral circuit (a read row cycle into the sense
/// amplifiers, then a write row cycle out of the write driver) and leave
/// `migration_bursts` untouched. All other moves stream the page over the
/// channels of both sides, read bursts then write bursts. A busy destination
/// defers the move (start is pushed back); it is never dropped.
pub fn execute_migration(
    src: &mut UnitBackend,
    dst_same_unit: Option<&mut UnitBackend>,
    src_frame: u64,
    dst_frame: u64,
    start: u64,
) -> Result<MigrationOutcome, ControllerError> {
    let same_unit = dst_same_unit.is_none();
    if same_unit && src_frame == dst_frame {
        return Err(ControllerError::SameLocation);
    }
    let src_seg = src.geom.segment_of_frame(src_frame);
    let src_block = src.geom.block_of_frame(src_frame);
    let src_rank = src.rank_of_block(src_block);

    if same_unit && src_block == src.geom.block_of_frame(dst_frame) {
        let dst_seg = src.geom.segment_of_frame(dst_frame);
        let t_read = src.controllers[0].timing(src_seg, MemOp::Read).trc;
        let t_write = src.controllers[0].timing(dst_seg, MemOp::Write).trc;
        let begin = start.max(src.rank_busy_horizon(src_rank));
        let end = begin + t_read + t_write;
        src.block_rank_all_channels(src_rank, end);
        let slices = src.slices();
        let unit = src.geom.unit_kind;
        return Ok(MigrationOutcome {
            kind: MigrationKind::IntraBank,
            start: begin,
            end,
            read_bursts: 0,
            write_bursts: 0,
            sides: [
                MigrationSideEvents { unit, segment: src_seg, op: MemOp::Read, count: slices },
                MigrationSideEvents { unit, segment: dst_seg, op: MemOp::Write, count: slices },
            ],
        });
    }

    // Channel-borne path: read the page out of the source, then write it
    // into the destination.
    let src_unit = src.geom.unit_kind;
    let src_channels = u64::from(src.geom.channels);
    let per_ch_read = BURSTS_PER_PAGE / src_channels;
    let t_src = src.controllers[0].timing(src_seg, MemOp::Read);
    let read_begin = start.max(src.rank_busy_horizon(src_rank)).max(src.channels_busy_horizon());
    let read_end = read_begin + t_src.trc + per_ch_read * t_src.tbl;
    for c in &mut src.controllers {
        c.add_migration_bursts(per_ch_read, t_src.tbl, read_end);
    }
    src.block_rank_all_channels(src_rank, read_end);

    let dst = match dst_same_unit {
        Some(d) => d,
        None => src,
    };
    let dst_seg = dst.geom.segment_of_frame(dst_frame);
    let dst_block = dst.geom.block_of_frame(dst_frame);
    let dst_rank = dst.rank_of_block(dst_block);
    let dst_unit = dst.geom.unit_kind;
    let dst_channels = u64::from(dst.geom.channels);
    let per_ch_write = BURSTS_PER_PAGE / dst_channels;
    let t_dst = dst.controllers[0].timing(dst_seg, MemOp::Write);
    let write_begin =
        read_end.max(dst.rank_busy_horizon(dst_rank)).max(dst.channels_busy_horizon());
    let write_end = write_begin + t_dst.trc + per_ch_write * t_dst.tbl;
    for c in &mut dst.controllers {
        c.add_migration_bursts(per_ch_write, t_dst.tbl, write_end);
    }
    dst.block_rank_all_channels(dst_rank, write_end);

    Ok(MigrationOutcome {
        kind: if same_unit { MigrationKind::CrossBankSameUnit } else { MigrationKind::CrossUnit },
        start: read_begin,
        end: write_end,
        read_bursts: BURSTS_PER_PAGE,
        write_bursts: BURSTS_PER_PAGE,
        sides: [
            MigrationSideEvents {
                unit: src_unit,
                segment: src_seg,
                op: MemOp::Read,
                count: BURSTS_PER_PAGE,
            },
            MigrationSideEvents {
                unit: dst_unit,
                segment: dst_seg,
                op: MemOp::Write,
                count: BURSTS_PER_PAGE,
            },
        ],
    })
}
