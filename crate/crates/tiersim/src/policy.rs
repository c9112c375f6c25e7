//! OS-level page management: first-touch allocation under four selectable
//! policies, phase bookkeeping, hot/cold tracking, and migration planning.
//!
//! Tiers are ordered `DRAM near -> DRAM far -> PCM near -> PCM far`; cold
//! pages step down this chain, hot far pages are promoted into the near
//! segment of the unit matching their read/write mix. Under `mneme` the
//! initial placement is decided by the FTI filters:
//!
//! * hit FTI_W, miss FTI_R — write-inducing, DRAM near;
//! * miss FTI_W, hit FTI_R — read-inducing, PCM near;
//! * hit both — DRAM near (conservative);
//! * miss both — PCM far if space is available, else DRAM far, and the FTI
//!   starts being profiled in the AIR.
//!
//! When the preferred pool is exhausted the allocator spills along a
//! documented order instead of evicting: DRAM near targets spill to DRAM
//! far, then PCM near, then PCM far; PCM near targets to PCM far, then DRAM
//! far, then DRAM near; unknown-FTI pages to PCM far, DRAM far, PCM near,
//! DRAM near. Only migration-time frame acquisition evicts, by demoting the
//! coldest resident page one tier down.

use crate::geometry::{MemOp, MemoryGeometry, Segment, UnitKind};
use crate::predictor::PredictorState;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PolicyError {
    #[error("out of memory: no free frame in any pool")]
    OutOfMemory,
    #[error("page {0:#x} already mapped")]
    AlreadyMapped(u64),
    #[error("page {0:#x} not mapped")]
    NotMapped(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Baseline,
    Nimble,
    Tldram,
    Mneme,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 4] =
        [PolicyKind::Baseline, PolicyKind::Nimble, PolicyKind::Tldram, PolicyKind::Mneme];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Baseline => "baseline",
            PolicyKind::Nimble => "nimble",
            PolicyKind::Tldram => "tldram",
            PolicyKind::Mneme => "mneme",
        }
    }

    pub fn parse(s: &str) -> Option<PolicyKind> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }
}

/// One (unit, segment) tier of the hybrid memory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tier {
    pub unit: UnitKind,
    pub segment: Segment,
}

impl Tier {
    pub const DRAM_NEAR: Tier = Tier { unit: UnitKind::Dram, segment: Segment::Near };
    pub const DRAM_FAR: Tier = Tier { unit: UnitKind::Dram, segment: Segment::Far };
    pub const PCM_NEAR: Tier = Tier { unit: UnitKind::Pcm, segment: Segment::Near };
    pub const PCM_FAR: Tier = Tier { unit: UnitKind::Pcm, segment: Segment::Far };

    /// Demotion ordering, hottest tier first.
    pub const ORDER: [Tier; 4] = [Tier::DRAM_NEAR, Tier::DRAM_FAR, Tier::PCM_NEAR, Tier::PCM_FAR];

    pub fn next_down(self) -> Option<Tier> {
        let idx = Tier::ORDER.iter().position(|t| *t == self).unwrap();
        Tier::ORDER.get(idx + 1).copied()
    }

    pub fn name(self) -> String {
        format!("{}_{}", self.unit.name(), self.segment.name())
    }
}

// ---------------------------------------------------------------------------
// Free frame pools
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
struct BlockFree {
    virgin_next: [u64; 2],
    freed: [Vec<u64>; 2],
}

fn seg_idx(segment: Segment) -> usize {
    match segment {
        Segment::Near => 0,
        Segment::Far => 1,
    }
}

/// Per-unit free-frame bookkeeping. Frames are grouped into blocks (one
/// block = the frames sharing a (rank, group, tile)); never-allocated frames
/// are tracked by a per-block cursor so pools stay O(blocks) regardless of
/// capacity. Allocation rotates round-robin across blocks, spreading pages
/// over banks the way a random allocator would.
#[derive(Debug, Clone)]
pub struct FramePool {
    unit: UnitKind,
    frames_per_block: u64,
    seg_size: [u64; 2],
    blocks: Vec<BlockFree>,
    free: [u64; 2],
    cursor: [usize; 2],
}

impl FramePool {
    pub fn new(geom: &MemoryGeometry) -> Self {
        let frames_per_block = geom.frames_per_block();
        let near = geom.near_frames_per_block();
        let blocks = geom.block_count() as usize;
        FramePool {
            unit: geom.unit_kind,
            frames_per_block,
            seg_size: [near, frames_per_block - near],
            blocks: vec![BlockFree::default(); blocks],
            free: [near * blocks as u64, (frames_per_block - near) * blocks as u64],
            cursor: [0; 2],
        }
    }

    pub fn unit(&self) -> UnitKind {
        self.unit
    }

    pub fn free_frames(&self, segment: Segment) -> u64 {
        self.free[seg_idx(segment)]
    }

    pub fn total_frames(&self, segment: Segment) -> u64 {
        self.seg_size[seg_idx(segment)] * self.blocks.len() as u64
    }

    fn seg_base(&self, segment: Segment) -> u64 {
        match segment {
            Segment::Near => 0,
            Segment::Far => self.seg_size[0],
        }
    }

    fn take_from_block(&mut self, block: usize, segment: Segment) -> Option<u64> {
        let s = seg_idx(segment);
        let base = self.seg_base(segment);
        let b = &mut self.blocks[block];
        let offset = if let Some(off) = b.freed[s].pop() {
            off
        } else if b.virgin_next[s] < self.seg_size[s] {
            let off = base + b.virgin_next[s];
            b.virgin_next[s] += 1;
            off
        } else {
            return None;
        };
        self.free[s] -= 1;
        Some(block as u64 * self.frames_per_block + offset)
    }

    /// Takes a free frame from the segment, rotating across blocks.
    pub fn take_any(&mut self, segment: Segment) -> Option<u64> {
        let s = seg_idx(segment);
        if self.free[s] == 0 {
            return None;
        }
        let n = self.blocks.len();
        for step in 0..n {
            let block = (self.cursor[s] + step) % n;
            if let Some(frame) = self.take_from_block(block, segment) {
                self.cursor[s] = (block + 1) % n;
                return Some(frame);
            }
        }
        None
    }

    /// Takes a free frame of the segment within a specific block, if any;
    /// such a frame can be reached by intra-bank migration from the block.
    pub fn take_in_block(&mut self, block: u64, segment: Segment) -> Option<u64> {
        self.take_from_block(block as usize, segment)
    }

    pub fn release(&mut self, frame: u64) {
        let block = (frame / self.frames_per_block) as usize;
        let offset = frame % self.frames_per_block;
        let s = usize::from(offset >= self.seg_size[0]);
        self.blocks[block].freed[s].push(offset);
        self.free[s] += 1;
    }
}

// ---------------------------------------------------------------------------
// Page table
// ---------------------------------------------------------------------------

/// Per-page state: current frame, the FTI that first touched the page, and
/// phase-local access counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PageInfo {
    pub frame: u64,
    pub unit: UnitKind,
    pub fti_pc: u64,
    pub reads_phase: u32,
    pub writes_phase: u32,
    pub alloc_seq: u64,
    pub migrations: u32,
    /// Phase in which this page was first touched by an unknown FTI and is
    /// feeding the AIR, if any.
    pub air_tracked_phase: Option<u64>,
}

impl PageInfo {
    pub fn phase_accesses(&self) -> u32 {
        self.reads_phase.saturating_add(self.writes_phase)
    }

    pub fn write_heavy(&self) -> bool {
        self.writes_phase >= self.reads_phase
    }
}

/// How a fault was classified against the FTI tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AllocationCase {
    HitWriteOnly,
    HitReadOnly,
    HitBoth,
    MissBoth,
    /// Policies that do not consult the predictor.
    Unpredicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub vpn: u64,
    pub frame: u64,
    pub tier: Tier,
    pub case: AllocationCase,
    /// True when the preferred pool was full and the spill order decided.
    pub spilled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MoveReason {
    Promote,
    Demote,
    Evict,
}

/// One planned page move; `UnitAny` targets pick the segment by free-count
/// weighting at execution time (segment-oblivious policies).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MoveTarget {
    Tier(Tier),
    UnitAny(UnitKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlannedMove {
    pub vpn: u64,
    pub target: MoveTarget,
    pub reason: MoveReason,
}

/// A physical page move handed to the memory backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MoveJob {
    pub vpn: u64,
    pub src_unit: UnitKind,
    pub src_frame: u64,
    pub dst_unit: UnitKind,
    pub dst_frame: u64,
    pub reason: MoveReason,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PlanExecution {
    pub executed: u64,
    pub skipped: u64,
    pub evictions: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyParams {
    pub hot_threshold: u32,
    pub cold_threshold: u32,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams { hot_threshold: 32, cold_threshold: 0 }
    }
}

/// Fixed-length execution phases; boundary `k` fires when the instruction
/// index first reaches `k * phase_length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseClock {
    pub phase_length: u64,
    pub current_phase: u64,
}

impl PhaseClock {
    pub fn new(phase_length: u64) -> Self {
        assert!(phase_length > 0);
        PhaseClock { phase_length, current_phase: 0 }
    }

    pub fn phase_of(&self, instr_index: u64) -> u64 {
        instr_index / self.phase_length
    }

    /// True when `instr_index` belongs to a later phase than `current_phase`.
    pub fn crossed(&self, instr_index: u64) -> bool {
        self.phase_of(instr_index) > self.current_phase
    }
}

pub struct PagePolicy {
    pub kind: PolicyKind,
    pub params: PolicyParams,
    dram: Option<FramePool>,
    pcm: Option<FramePool>,
    dram_geom: Option<MemoryGeometry>,
    pcm_geom: Option<MemoryGeometry>,
    pages: HashMap<u64, PageInfo>,
    order: Vec<u64>,
}

impl PagePolicy {
    pub fn new(
        kind: PolicyKind,
        params: PolicyParams,
        dram_geom: Option<MemoryGeometry>,
        pcm_geom: Option<MemoryGeometry>,
    ) -> Self {
        PagePolicy {
            kind,
            params,
            dram: dram_geom.as_ref().map(FramePool::new),
            pcm: pcm_geom.as_ref().map(FramePool::new),
            dram_geom,
            pcm_geom,
            pages: HashMap::new(),
            order: Vec::new(),
        }
    }

    pub fn page(&self, vpn: u64) -> Option<&PageInfo> {
        self.pages.get(&vpn)
    }

    pub fn page_count(&self) -> usize {
        self.order.len()
    }

    /// Pages in allocation order, the deterministic scan order for planning.
    pub fn pages_in_order(&self) -> impl Iterator<Item = (u64, &PageInfo)> + '_ {
        self.order.iter().map(move |vpn| (*vpn, &self.pages[vpn]))
    }

    pub fn geom(&self, unit: UnitKind) -> &MemoryGeometry {
        match unit {
            UnitKind::Dram => self.dram_geom.as_ref().expect("dram geometry"),
            UnitKind::Pcm => self.pcm_geom.as_ref().expect("pcm geometry"),
        }
    }

    fn pool(&mut self, unit: UnitKind) -> Option<&mut FramePool> {
        match unit {
            UnitKind::Dram => self.dram.as_mut(),
            UnitKind::Pcm => self.pcm.as_mut(),
        }
    }

    fn pool_ref(&self, unit: UnitKind) -> Option<&FramePool> {
        match unit {
            UnitKind::Dram => self.dram.as_ref(),
            UnitKind::Pcm => self.pcm.as_ref(),
        }
    }

    pub fn free_frames(&self, tier: Tier) -> u64 {
        self.pool_ref(tier.unit).map_or(0, |p| p.free_frames(tier.segment))
    }

    pub fn total_frames(&self, tier: Tier) -> u64 {
        self.pool_ref(tier.unit).map_or(0, |p| p.total_frames(tier.segment))
    }

    pub fn tier_of(&self, info: &PageInfo) -> Tier {
        let segment = self.geom(info.unit).segment_of_frame(info.frame);
        Tier { unit: info.unit, segment }
    }

    fn take_from_tier(&mut self, tier: Tier) -> Option<u64> {
        self.pool(tier.unit)?.take_any(tier.segment)
    }

    fn spill_order(preferred: Tier) -> [Tier; 4] {
        match preferred {
            Tier::DRAM_NEAR => [Tier::DRAM_NEAR, Tier::DRAM_FAR, Tier::PCM_NEAR, Tier::PCM_FAR],
            Tier::PCM_NEAR => [Tier::PCM_NEAR, Tier::PCM_FAR, Tier::DRAM_FAR, Tier::DRAM_NEAR],
            Tier::PCM_FAR => [Tier::PCM_FAR, Tier::DRAM_FAR, Tier::PCM_NEAR, Tier::DRAM_NEAR],
            _ => [Tier::DRAM_FAR, Tier::PCM_NEAR, Tier::PCM_FAR, Tier::DRAM_NEAR],
        }
    }

    fn take_with_spill(&mut self, preferred: Tier) -> Option<(u64, Tier, bool)> {
        for (i, tier) in Self::spill_order(preferred).into_iter().enumerate() {
            if let Some(frame) = self.take_from_tier(tier) {
                return Some((frame, tier, i > 0));
            }
        }
        None
    }

    /// Uniform draw over the free frames of the given tiers, weighted by
    /// free count.
    fn take_uniform(&mut self, tiers: &[Tier], rng: &mut ChaCha8Rng) -> Option<(u64, Tier)> {
        let total: u64 = tiers.iter().map(|t| self.free_frames(*t)).sum();
        if total == 0 {
            return None;
        }
        let mut r = rng.gen_range(0..total);
        for tier in tiers {
            let f = self.free_frames(*tier);
            if r < f {
                let frame = self.take_from_tier(*tier).expect("counted free frame");
                return Some((frame, *tier));
            }
            r -= f;
        }
        unreachable!("weights cover the draw")
    }

    fn enabled_tiers(&self) -> Vec<Tier> {
        Tier::ORDER.iter().copied().filter(|t| self.pool_ref(t.unit).is_some()).collect()
    }

    /// First-touch allocation. `predictor` is consulted only by `mneme`;
    /// `phase` stamps AIR-tracked pages.
    pub fn allocate_on_fault(
        &mut self,
        pc: u64,
        vpn: u64,
        predictor: Option<&PredictorState>,
        phase: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Placement, PolicyError> {
        if self.pages.contains_key(&vpn) {
            return Err(PolicyError::AlreadyMapped(vpn));
        }
        let (case, picked) = match self.kind {
            PolicyKind::Mneme => {
                let p = predictor.expect("mneme needs the predictor");
                let hit_w = p.hits_write_table(pc);
                let hit_r = p.hits_read_table(pc);
                let (case, preferred) = match (hit_w, hit_r) {
                    (true, false) => (AllocationCase::HitWriteOnly, Tier::DRAM_NEAR),
                    (false, true) => (AllocationCase::HitReadOnly, Tier::PCM_NEAR),
                    (true, true) => (AllocationCase::HitBoth, Tier::DRAM_NEAR),
                    (false, false) => (AllocationCase::MissBoth, Tier::PCM_FAR),
                };
                let picked = self
                    .take_with_spill(preferred)
                    .map(|(frame, tier, spilled)| (frame, tier, spilled));
                (case, picked)
            }
            PolicyKind::Tldram => {
                let picked = self.take_with_spill(Tier::DRAM_NEAR);
                (AllocationCase::Unpredicted, picked)
            }
            PolicyKind::Baseline | PolicyKind::Nimble => {
                let tiers = self.enabled_tiers();
                let picked =
                    self.take_uniform(&tiers, rng).map(|(frame, tier)| (frame, tier, false));
                (AllocationCase::Unpredicted, picked)
            }
        };
        let (frame, tier, spilled) = picked.ok_or(PolicyError::OutOfMemory)?;
        let air_tracked = self.kind == PolicyKind::Mneme && case == AllocationCase::MissBoth;
        let info = PageInfo {
            frame,
            unit: tier.unit,
            fti_pc: pc,
            reads_phase: 0,
            writes_phase: 0,
            alloc_seq: self.order.len() as u64,
            migrations: 0,
            air_tracked_phase: air_tracked.then_some(phase),
        };
        self.pages.insert(vpn, info);
        self.order.push(vpn);
        Ok(Placement { vpn, frame, tier, case, spilled })
    }

    /// Bumps the phase counters of a mapped page.
    pub fn record_access(&mut self, vpn: u64, op: MemOp) -> Result<&PageInfo, PolicyError> {
        let info = self.pages.get_mut(&vpn).ok_or(PolicyError::NotMapped(vpn))?;
        match op {
            MemOp::Read => info.reads_phase = info.reads_phase.saturating_add(1),
            MemOp::Write => info.writes_phase = info.writes_phase.saturating_add(1),
        }
        Ok(info)
    }

    /// Pages whose AIR profile for `phase` must be classified at the
    /// boundary, in deterministic order: (fti_pc, write_inducing).
    pub fn air_classifications(&self, phase: u64) -> Vec<(u64, bool)> {
        self.pages_in_order()
            .filter(|(_, p)| p.air_tracked_phase == Some(phase))
            .map(|(_, p)| (p.fti_pc, p.write_heavy()))
            .collect()
    }

    /// Policy-specific migration plan for the ending phase. Demotions come
    /// first (coldest pages first) so they free near space for the
    /// promotions that follow (hottest pages first).
    pub fn plan_phase_migrations(&self) -> Vec<PlannedMove> {
        let mut demotions: Vec<(u32, u64, PlannedMove)> = Vec::new();
        let mut promotions: Vec<(u32, u64, PlannedMove)> = Vec::new();
        match self.kind {
            PolicyKind::Baseline | PolicyKind::Tldram => {}
            PolicyKind::Mneme => {
                for (vpn, p) in self.pages_in_order() {
                    let count = p.phase_accesses();
                    let tier = self.tier_of(p);
                    if tier.segment == Segment::Far && count >= self.params.hot_threshold {
                        let target =
                            if p.write_heavy() { Tier::DRAM_NEAR } else { Tier::PCM_NEAR };
                        promotions.push((
                            count,
                            p.alloc_seq,
                            PlannedMove { vpn, target: MoveTarget::Tier(target), reason: MoveReason::Promote },
                        ));
                    } else if tier.segment == Segment::Near && count <= self.params.cold_threshold {
                        let target = Tier { unit: tier.unit, segment: Segment::Far };
                        demotions.push((
                            count,
                            p.alloc_seq,
                            PlannedMove { vpn, target: MoveTarget::Tier(target), reason: MoveReason::Demote },
                        ));
                    }
                }
            }
            PolicyKind::Nimble => {
                for (vpn, p) in self.pages_in_order() {
                    let count = p.phase_accesses();
                    if p.unit == UnitKind::Pcm && count >= self.params.hot_threshold {
                        promotions.push((
                            count,
                            p.alloc_seq,
                            PlannedMove {
                                vpn,
                                target: MoveTarget::UnitAny(UnitKind::Dram),
                                reason: MoveReason::Promote,
                            },
                        ));
                    } else if p.unit == UnitKind::Dram && count <= self.params.cold_threshold {
                        demotions.push((
                            count,
                            p.alloc_seq,
                            PlannedMove {
                                vpn,
                                target: MoveTarget::UnitAny(UnitKind::Pcm),
                                reason: MoveReason::Demote,
                            },
                        ));
                    }
                }
            }
        }
        demotions.sort_by_key(|(count, seq, _)| (*count, *seq));
        promotions.sort_by_key(|(count, seq, _)| (u32::MAX - *count, *seq));
        demotions.into_iter().chain(promotions).map(|(_, _, m)| m).collect()
    }

    /// Demotes the coldest page of `tier` one tier down (cascading further
    /// down when that tier is full too), releases the vacated frame back
    /// into the pool, and returns its id. The coldest page is the one with
    /// the fewest phase accesses, ties broken by oldest allocation.
    pub fn evict_for_space<F: FnMut(MoveJob)>(
        &mut self,
        tier: Tier,
        migrate: &mut F,
        evictions: &mut u64,
    ) -> Result<u64, PolicyError> {
        let victim = self
            .pages_in_order()
            .filter(|(_, p)| self.tier_of(p) == tier)
            .min_by_key(|(_, p)| (p.phase_accesses(), p.alloc_seq))
            .map(|(vpn, _)| vpn)
            .ok_or(PolicyError::OutOfMemory)?;
        let mut dst_tier = tier.next_down().ok_or(PolicyError::OutOfMemory)?;
        // Skip tiers whose unit is not present in this configuration.
        while self.pool_ref(dst_tier.unit).is_none() {
            dst_tier = dst_tier.next_down().ok_or(PolicyError::OutOfMemory)?;
        }
        let dst_frame = match self.take_from_tier(dst_tier) {
            Some(f) => f,
            None => {
                self.evict_for_space(dst_tier, migrate, evictions)?;
                self.take_from_tier(dst_tier).expect("eviction freed a frame")
            }
        };
        let old = self.pages[&victim];
        migrate(MoveJob {
            vpn: victim,
            src_unit: old.unit,
            src_frame: old.frame,
            dst_unit: dst_tier.unit,
            dst_frame,
            reason: MoveReason::Evict,
        });
        let info = self.pages.get_mut(&victim).unwrap();
        let freed = info.frame;
        info.frame = dst_frame;
        info.unit = dst_tier.unit;
        info.migrations += 1;
        *evictions += 1;
        self.pool(tier.unit).expect("tier pool").release(freed);
        Ok(freed)
    }

    /// Executes a migration plan, acquiring destination frames (preferring
    /// the page's own block so same-unit moves stay inside the bank),
    /// invoking `migrate` for every physical move, and releasing source
    /// frames. Moves that cannot acquire a frame are skipped, never
    /// reordered.
    pub fn execute_plan<F: FnMut(MoveJob)>(
        &mut self,
        plan: &[PlannedMove],
        rng: &mut ChaCha8Rng,
        migrate: &mut F,
    ) -> PlanExecution {
        let mut stats = PlanExecution::default();
        for m in plan {
            let info = self.pages[&m.vpn];
            let src_tier = self.tier_of(&info);
            let src_block = self.geom(info.unit).block_of_frame(info.frame);
            let acquired: Option<(u64, Tier)> = match m.target {
                MoveTarget::Tier(t) if t == src_tier => None,
                MoveTarget::Tier(t) => {
                    let same_block = if t.unit == info.unit {
                        self.pool(t.unit).and_then(|p| p.take_in_block(src_block, t.segment))
                    } else {
                        None
                    };
                    same_block
                        .map(|f| (f, t))
                        .or_else(|| self.take_from_tier(t).map(|f| (f, t)))
                        .or_else(|| {
                            self.evict_for_space(t, migrate, &mut stats.evictions).ok()?;
                            self.take_from_tier(t).map(|f| (f, t))
                        })
                }
                MoveTarget::UnitAny(unit) => {
                    let tiers = [
                        Tier { unit, segment: Segment::Near },
                        Tier { unit, segment: Segment::Far },
                    ];
                    self.take_uniform(&tiers, rng)
                }
            };
            let Some((dst_frame, dst_tier)) = acquired else {
                stats.skipped += 1;
                continue;
            };
            migrate(MoveJob {
                vpn: m.vpn,
                src_unit: info.unit,
                src_frame: info.frame,
                dst_unit: dst_tier.unit,
                dst_frame,
                reason: m.reason,
            });
            let entry = self.pages.get_mut(&m.vpn).unwrap();
            entry.frame = dst_frame;
            entry.unit = dst_tier.unit;
            entry.migrations += 1;
            self.pool(info.unit).expect("source pool").release(info.frame);
            stats.executed += 1;
        }
        stats
    }

    pub fn reset_phase_counters(&mut self) {
        for p in self.pages.values_mut() {
            p.reads_phase = 0;
            p.writes_phase = 0;
            p.air_tracked_phase = None;
        }
    }

    /// Migration-count histogram over all mapped pages: (zero, one, more).
    pub fn migration_histogram(&self) -> (u64, u64, u64) {
        let mut h = (0, 0, 0);
        for p in self.pages.values() {
            match p.migrations {
                0 => h.0 += 1,
                1 => h.1 += 1,
                _ => h.2 += 1,
            }
        }
        h
    }

    /// Frame conservation: allocated + free == total, per tier.
    pub fn audit_frame_conservation(&self) -> Result<(), String> {
        for tier in Tier::ORDER {
            if self.pool_ref(tier.unit).is_none() {
                continue;
            }
            let allocated = self
                .pages
                .values()
                .filter(|p| p.unit == tier.unit && self.tier_of(p).segment == tier.segment)
                .count() as u64;
            let free = self.free_frames(tier);
            let total = self.total_frames(tier);
            if allocated + free != total {
                return Err(format!(
                    "tier {}: allocated {} + free {} != total {}",
                    tier.name(),
                    allocated,
                    free,
                    total
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorConfig;
    use rand::SeedableRng;

    fn tiny_dram() -> MemoryGeometry {
        MemoryGeometry {
            capacity_bytes: 1 << 24, // 16 MB
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 2,
            groups_per_bank: 2,
            tiles_per_group: 1,
            rows_per_tile: 256,
            near_rows: 64,
            ..MemoryGeometry::dram_default()
        }
    }

    fn tiny_pcm() -> MemoryGeometry {
        MemoryGeometry {
            capacity_bytes: 1 << 25, // 32 MB
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 2,
            groups_per_bank: 2,
            tiles_per_group: 2,
            rows_per_tile: 512,
            near_rows: 64,
            ..MemoryGeometry::pcm_default()
        }
    }

    fn policy(kind: PolicyKind) -> PagePolicy {
        tiny_dram().validate().unwrap();
        tiny_pcm().validate().unwrap();
        PagePolicy::new(kind, PolicyParams::default(), Some(tiny_dram()), Some(tiny_pcm()))
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(42)
    }

    fn predictor_with(write_pcs: &[u64], read_pcs: &[u64]) -> PredictorState {
        let mut p = PredictorState::new(&PredictorConfig::default());
        for pc in write_pcs {
            p.fti_w.insert(*pc);
        }
        for pc in read_pcs {
            p.fti_r.insert(*pc);
        }
        p
    }

    #[test]
    fn four_case_allocation_rule() {
        let pred = predictor_with(&[0x100], &[0x200]);
        let both = predictor_with(&[0x300], &[0x300]);
        let cases = [
            (0x100u64, &pred, Tier::DRAM_NEAR, AllocationCase::HitWriteOnly),
            (0x200, &pred, Tier::PCM_NEAR, AllocationCase::HitReadOnly),
            (0x300, &both, Tier::DRAM_NEAR, AllocationCase::HitBoth),
            (0x999, &pred, Tier::PCM_FAR, AllocationCase::MissBoth),
        ];
        for (i, (pc, pred, tier, case)) in cases.into_iter().enumerate() {
            let mut pol = policy(PolicyKind::Mneme);
            let placed = pol.allocate_on_fault(pc, 100 + i as u64, Some(pred), 0, &mut rng()).unwrap();
            assert_eq!(placed.tier, tier, "case {case:?}");
            assert_eq!(placed.case, case);
            assert!(!placed.spilled);
        }
    }

    #[test]
    fn miss_both_marks_air_tracking() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        pol.allocate_on_fault(0x1, 1, Some(&pred), 3, &mut rng()).unwrap();
        assert_eq!(pol.page(1).unwrap().air_tracked_phase, Some(3));
        let pred = predictor_with(&[0x2], &[]);
        pol.allocate_on_fault(0x2, 2, Some(&pred), 3, &mut rng()).unwrap();
        assert_eq!(pol.page(2).unwrap().air_tracked_phase, None);
    }

    #[test]
    fn empty_filters_put_everything_in_far_segments() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        for vpn in 0..200u64 {
            let placed = pol.allocate_on_fault(0x40_0000 + vpn, vpn, Some(&pred), 0, &mut r).unwrap();
            assert_eq!(placed.tier.segment, Segment::Far);
        }
    }

    #[test]
    fn mneme_spills_in_documented_order() {
        let pred = predictor_with(&[0x7], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        let dram_near_total = pol.total_frames(Tier::DRAM_NEAR);
        for vpn in 0..dram_near_total {
            let placed = pol.allocate_on_fault(0x7, vpn, Some(&pred), 0, &mut r).unwrap();
            assert_eq!(placed.tier, Tier::DRAM_NEAR);
        }
        let placed = pol
            .allocate_on_fault(0x7, dram_near_total, Some(&pred), 0, &mut r)
            .unwrap();
        assert_eq!(placed.tier, Tier::DRAM_FAR, "first spill tier");
        assert!(placed.spilled);
    }

    #[test]
    fn tldram_prefers_dram_near_first() {
        let mut pol = policy(PolicyKind::Tldram);
        let mut r = rng();
        let near_total = pol.total_frames(Tier::DRAM_NEAR);
        for vpn in 0..near_total {
            assert_eq!(
                pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap().tier,
                Tier::DRAM_NEAR
            );
        }
        assert_eq!(
            pol.allocate_on_fault(0x1, near_total, None, 0, &mut r).unwrap().tier,
            Tier::DRAM_FAR
        );
    }

    #[test]
    fn baseline_spreads_over_all_tiers() {
        let mut pol = policy(PolicyKind::Baseline);
        let mut r = rng();
        let mut seen = std::collections::HashSet::new();
        for vpn in 0..400u64 {
            let placed = pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap();
            seen.insert(placed.tier.name());
        }
        assert_eq!(seen.len(), 4, "uniform draw reaches every tier: {seen:?}");
    }

    #[test]
    fn out_of_memory_when_every_pool_is_empty() {
        let mut pol = policy(PolicyKind::Baseline);
        let mut r = rng();
        let total: u64 = Tier::ORDER.iter().map(|t| pol.total_frames(*t)).sum();
        for vpn in 0..total {
            pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap();
        }
        assert_eq!(
            pol.allocate_on_fault(0x1, total, None, 0, &mut r),
            Err(PolicyError::OutOfMemory)
        );
        pol.audit_frame_conservation().unwrap();
    }

    #[test]
    fn access_counters_accumulate_and_reset() {
        let mut pol = policy(PolicyKind::Baseline);
        pol.allocate_on_fault(0x1, 7, None, 0, &mut rng()).unwrap();
        pol.record_access(7, MemOp::Read).unwrap();
        pol.record_access(7, MemOp::Write).unwrap();
        pol.record_access(7, MemOp::Write).unwrap();
        let p = pol.page(7).unwrap();
        assert_eq!((p.reads_phase, p.writes_phase), (1, 2));
        assert!(p.write_heavy());
        pol.reset_phase_counters();
        let p = pol.page(7).unwrap();
        assert_eq!((p.reads_phase, p.writes_phase), (0, 0));
    }

    #[test]
    fn baseline_and_tldram_plan_nothing() {
        for kind in [PolicyKind::Baseline, PolicyKind::Tldram] {
            let mut pol = policy(kind);
            let mut r = rng();
            for vpn in 0..20u64 {
                pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap();
                for _ in 0..100 {
                    pol.record_access(vpn, MemOp::Write).unwrap();
                }
            }
            assert!(pol.plan_phase_migrations().is_empty());
        }
    }

    #[test]
    fn zero_counters_plan_is_empty_for_mneme_far_pages() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        for vpn in 0..20u64 {
            pol.allocate_on_fault(0x1, vpn, Some(&pred), 0, &mut r).unwrap();
        }
        // All pages are far with zero counters: no promotions, and demotions
        // only apply to near pages.
        assert!(pol.plan_phase_migrations().is_empty());
    }

    #[test]
    fn mneme_promotes_hot_far_pages_by_write_mix() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        pol.allocate_on_fault(0x1, 1, Some(&pred), 0, &mut r).unwrap();
        pol.allocate_on_fault(0x2, 2, Some(&pred), 0, &mut r).unwrap();
        for _ in 0..40 {
            pol.record_access(1, MemOp::Write).unwrap();
            pol.record_access(2, MemOp::Read).unwrap();
        }
        let plan = pol.plan_phase_migrations();
        assert_eq!(plan.len(), 2);
        let find = |vpn| plan.iter().find(|m| m.vpn == vpn).unwrap();
        assert_eq!(find(1).target, MoveTarget::Tier(Tier::DRAM_NEAR));
        assert_eq!(find(2).target, MoveTarget::Tier(Tier::PCM_NEAR));
        assert!(plan.iter().all(|m| m.reason == MoveReason::Promote));
    }

    #[test]
    fn mneme_demotes_untouched_near_pages() {
        let pred = predictor_with(&[0x5], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        pol.allocate_on_fault(0x5, 1, Some(&pred), 0, &mut r).unwrap();
        assert_eq!(pol.tier_of(pol.page(1).unwrap()), Tier::DRAM_NEAR);
        let plan = pol.plan_phase_migrations();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan[0].target, MoveTarget::Tier(Tier::DRAM_FAR));
        assert_eq!(plan[0].reason, MoveReason::Demote);
    }

    #[test]
    fn nimble_moves_hot_pcm_to_dram_and_cold_dram_to_pcm() {
        let mut pol = policy(PolicyKind::Nimble);
        let mut r = rng();
        // Force placements by temporarily using uniform draws until both
        // units hold pages.
        let mut pcm_vpn = None;
        let mut dram_vpn = None;
        for vpn in 0..100u64 {
            let placed = pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap();
            match placed.tier.unit {
                UnitKind::Pcm if pcm_vpn.is_none() => pcm_vpn = Some(vpn),
                UnitKind::Dram if dram_vpn.is_none() => dram_vpn = Some(vpn),
                _ => {}
            }
            if pcm_vpn.is_some() && dram_vpn.is_some() {
                break;
            }
        }
        let (pcm_vpn, dram_vpn) = (pcm_vpn.unwrap(), dram_vpn.unwrap());
        for _ in 0..50 {
            pol.record_access(pcm_vpn, MemOp::Read).unwrap();
        }
        let plan = pol.plan_phase_migrations();
        assert!(plan
            .iter()
            .any(|m| m.vpn == pcm_vpn && m.target == MoveTarget::UnitAny(UnitKind::Dram)));
        assert!(plan
            .iter()
            .any(|m| m.vpn == dram_vpn && m.target == MoveTarget::UnitAny(UnitKind::Pcm)));
    }

    #[test]
    fn execute_plan_prefers_same_block_for_same_unit_moves() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        pol.allocate_on_fault(0x1, 1, Some(&pred), 0, &mut r).unwrap();
        for _ in 0..40 {
            pol.record_access(1, MemOp::Read).unwrap();
        }
        let plan = pol.plan_phase_migrations();
        assert_eq!(plan[0].target, MoveTarget::Tier(Tier::PCM_NEAR));
        let src_block = {
            let p = pol.page(1).unwrap();
            pol.geom(p.unit).block_of_frame(p.frame)
        };
        let mut jobs = Vec::new();
        pol.execute_plan(&plan, &mut r, &mut |j| jobs.push(j));
        assert_eq!(jobs.len(), 1);
        let dst_block = pol.geom(UnitKind::Pcm).block_of_frame(jobs[0].dst_frame);
        assert_eq!(dst_block, src_block, "near frame taken from the same block");
        assert_eq!(pol.page(1).unwrap().migrations, 1);
        pol.audit_frame_conservation().unwrap();
    }

    #[test]
    fn evict_for_space_picks_coldest_then_oldest() {
        let pred = predictor_with(&[0x9], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        for vpn in 0..3u64 {
            pol.allocate_on_fault(0x9, vpn, Some(&pred), 0, &mut r).unwrap();
        }
        for _ in 0..3 {
            pol.record_access(0, MemOp::Write).unwrap();
        }
        for _ in 0..9 {
            pol.record_access(1, MemOp::Write).unwrap();
        }
        for _ in 0..3 {
            pol.record_access(2, MemOp::Write).unwrap();
        }
        let mut jobs = Vec::new();
        let mut evictions = 0;
        let freed = pol
            .evict_for_space(Tier::DRAM_NEAR, &mut |j| jobs.push(j), &mut evictions)
            .unwrap();
        // vpn 0 and 2 tie at count 3; vpn 0 is older.
        assert_eq!(jobs[0].vpn, 0);
        assert_eq!(jobs[0].dst_unit, UnitKind::Dram);
        assert_eq!(evictions, 1);
        assert!(pol.geom(UnitKind::Dram).segment_of_frame(jobs[0].dst_frame) == Segment::Far);
        assert_eq!(freed, jobs[0].src_frame);
        pol.audit_frame_conservation().unwrap();
    }

    #[test]
    fn eviction_cascades_to_out_of_memory_when_full() {
        // Fill every tier completely, then ask for space in DRAM near.
        let mut pol = policy(PolicyKind::Baseline);
        let mut r = rng();
        let total: u64 = Tier::ORDER.iter().map(|t| pol.total_frames(*t)).sum();
        for vpn in 0..total {
            pol.allocate_on_fault(0x1, vpn, None, 0, &mut r).unwrap();
        }
        let mut evictions = 0;
        let res = pol.evict_for_space(Tier::DRAM_NEAR, &mut |_| {}, &mut evictions);
        assert_eq!(res, Err(PolicyError::OutOfMemory));
    }

    #[test]
    fn frame_pool_take_release_roundtrip() {
        let geom = tiny_pcm();
        let mut pool = FramePool::new(&geom);
        let total_near = pool.total_frames(Segment::Near);
        let mut taken = Vec::new();
        while let Some(f) = pool.take_any(Segment::Near) {
            assert_eq!(geom.segment_of_frame(f), Segment::Near);
            taken.push(f);
        }
        assert_eq!(taken.len() as u64, total_near);
        let mut unique = taken.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), taken.len(), "no frame handed out twice");
        for f in &taken {
            pool.release(*f);
        }
        assert_eq!(pool.free_frames(Segment::Near), total_near);
    }

    #[test]
    fn take_in_block_respects_block_bounds() {
        let geom = tiny_pcm();
        let mut pool = FramePool::new(&geom);
        let f = pool.take_in_block(1, Segment::Far).unwrap();
        assert_eq!(geom.block_of_frame(f), 1);
        assert_eq!(geom.segment_of_frame(f), Segment::Far);
    }

    #[test]
    fn phase_clock_boundaries() {
        let clock = PhaseClock::new(100);
        assert_eq!(clock.phase_of(0), 0);
        assert_eq!(clock.phase_of(99), 0);
        assert_eq!(clock.phase_of(100), 1);
        assert!(!clock.crossed(99));
        assert!(clock.crossed(100));
    }

    #[test]
    fn migration_histogram_partitions_pages() {
        let pred = predictor_with(&[], &[]);
        let mut pol = policy(PolicyKind::Mneme);
        let mut r = rng();
        for vpn in 0..5u64 {
            pol.allocate_on_fault(0x1, vpn, Some(&pred), 0, &mut r).unwrap();
        }
        pol.pages.get_mut(&0).unwrap().migrations = 1;
        pol.pages.get_mut(&1).unwrap().migrations = 3;
        let (zero, one, more) = pol.migration_histogram();
        assert_eq!((zero, one, more), (3, 1, 1));
        assert_eq!(zero + one + more, pol.page_count() as u64);
    }
}
