//! The deterministic discrete-event engine: drives the trace cursor through
//! the policy layer into the per-channel controllers, fires phase boundaries,
//! executes migration plans, and assembles the final report.
//!
//! The CPU side is modeled as a fixed-depth window of outstanding requests:
//! the cursor admits the next access as soon as a window slot and queue space
//! exist, so total cycles reflect average access latency rather than raw
//! channel bandwidth. Time is integer memory-clock cycles on a single global
//! timeline shared by every channel of both units.
//!
//! A phase boundary drains all in-flight requests, samples the reliability
//! series, commits the AIR into the FTI filters, executes the migration
//! plan (sequentially, each move deferring until its banks are free), resets
//! per-page counters, and resumes the cursor. Every run ends with a final
//! boundary so the last partial phase is committed and sampled, which means
//! a run always reports at least one phase.

use crate::controller::{
    execute_migration, BurstRequest, ControllerConfig, DemandServiced, MigrationKind, UnitBackend,
};
use crate::geometry::{
    CellOp, GeometryError, MemOp, MemoryGeometry, Segment, Tables, UnitKind, PAGE_BYTES, PAGE_SHIFT,
};
use crate::policy::{
    MoveJob, PagePolicy, PhaseClock, PolicyError, PolicyKind, PolicyParams,
};
use crate::predictor::{PredictorConfig, PredictorState};
use crate::reliability::{
    endurance_lifetime, aging_lifetime_index, AgingAccumulator, AgingConstants, EnduranceInputs,
    EnergyLedger, EnergyTable,
};
use crate::report::{
    reconcile, AccessCounts, AuditCounters, ChannelCounts, EnduranceReport, EnergyReport,
    MigrationCounts, MigrationHistogram, ReliabilityReport, ReportError, SimReport,
    REPORT_SCHEMA_VERSION,
};
use crate::trace::{MemoryRequest, TraceError, TraceFingerprint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::Write;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Fully resolved inputs of one simulation run.
#[derive(Debug, Clone)]
pub struct SimParams {
    pub policy: PolicyKind,
    pub phase_length: u64,
    pub seed: u64,
    /// CPU-side limit on in-flight memory requests.
    pub max_outstanding: usize,
    pub controller: ControllerConfig,
    pub policy_params: PolicyParams,
    pub predictor: PredictorConfig,
    pub dram_geom: Option<MemoryGeometry>,
    pub pcm_geom: Option<MemoryGeometry>,
    pub tables: Tables,
    pub energy: EnergyTable,
    pub aging: AgingConstants,
    /// PCM cell write endurance (N_e) for the endurance-lifetime estimate.
    pub cell_endurance: u64,
    /// Resolved configuration echoed into the report for provenance.
    pub config_echo: serde_json::Value,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            policy: PolicyKind::Mneme,
            phase_length: 100_000_000,
            seed: 1,
            max_outstanding: 16,
            controller: ControllerConfig::default(),
            policy_params: PolicyParams::default(),
            predictor: PredictorConfig::default(),
            dram_geom: Some(MemoryGeometry::dram_default()),
            pcm_geom: Some(MemoryGeometry::pcm_default()),
            tables: Tables::default(),
            energy: EnergyTable::default(),
            aging: AgingConstants::default(),
            cell_endurance: 10_000_000,
            config_echo: serde_json::Value::Null,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.phase_length == 0 {
            return Err(SimError::Config("phase_length must be positive".into()));
        }
        if self.max_outstanding == 0 {
            return Err(SimError::Config("max_outstanding must be positive".into()));
        }
        for geom in [&self.dram_geom, &self.pcm_geom].into_iter().flatten() {
            geom.validate()?;
        }
        self.tables.validate()?;
        match self.policy {
            PolicyKind::Mneme | PolicyKind::Nimble => {
                if self.dram_geom.is_none() || self.pcm_geom.is_none() {
                    return Err(SimError::Config(format!(
                        "policy {} needs both DRAM and PCM units",
                        self.policy.name()
                    )));
                }
            }
            PolicyKind::Tldram => {
                if self.dram_geom.is_none() {
                    return Err(SimError::Config("policy tldram needs a DRAM unit".into()));
                }
            }
            PolicyKind::Baseline => {
                if self.dram_geom.is_none() && self.pcm_geom.is_none() {
                    return Err(SimError::Config("no memory unit configured".into()));
                }
            }
        }
        Ok(())
    }
}

pub struct Engine {
    params: SimParams,
    policy: PagePolicy,
    predictor: PredictorState,
    dram: Option<UnitBackend>,
    pcm: Option<UnitBackend>,
    clock: PhaseClock,
    now: u64,
    rng: ChaCha8Rng,
    aging: AgingAccumulator,
    energy: EnergyLedger,
    completions: BinaryHeap<Reverse<u64>>,
    outstanding: usize,
    audit: AuditCounters,
    migrations: MigrationCounts,
    pcm_mig_writes: u64,
    faults: u64,
    last_instr: u64,
    any_request: bool,
    fingerprint: TraceFingerprint,
    phase_faults: u64,
    phase_fault_hits: u64,
    hit_rate_series: Vec<Option<f64>>,
    aging_series: Vec<f64>,
    reliability_series: Vec<f64>,
    decision_log: Option<Box<dyn Write>>,
    command_log: Option<Box<dyn Write>>,
}

impl Engine {
    pub fn new(params: SimParams) -> Result<Self, SimError> {
        params.validate()?;
        let policy = PagePolicy::new(
            params.policy,
            params.policy_params,
            params.dram_geom.clone(),
            params.pcm_geom.clone(),
        );
        let backend = |geom: &Option<MemoryGeometry>| {
            geom.as_ref()
                .map(|g| UnitBackend::new(g.clone(), &params.tables.timing, params.controller))
        };
        Ok(Engine {
            policy,
            predictor: PredictorState::new(&params.predictor),
            dram: backend(&params.dram_geom),
            pcm: backend(&params.pcm_geom),
            clock: PhaseClock::new(params.phase_length),
            now: 0,
            rng: ChaCha8Rng::seed_from_u64(params.seed),
            aging: AgingAccumulator::new(params.aging),
            energy: EnergyLedger::new(params.energy.clone()),
            completions: BinaryHeap::new(),
            outstanding: 0,
            audit: AuditCounters::default(),
            migrations: MigrationCounts::default(),
            pcm_mig_writes: 0,
            faults: 0,
            last_instr: 0,
            any_request: false,
            fingerprint: TraceFingerprint::default(),
            phase_faults: 0,
            phase_fault_hits: 0,
            hit_rate_series: Vec::new(),
            aging_series: Vec::new(),
            reliability_series: Vec::new(),
            decision_log: None,
            command_log: None,
            params,
        })
    }

    pub fn with_decision_log(mut self, w: Box<dyn Write>) -> Self {
        self.decision_log = Some(w);
        self
    }

    pub fn with_command_log(mut self, w: Box<dyn Write>) -> Self {
        self.command_log = Some(w);
        self
    }

    pub fn predictor(&self) -> &PredictorState {
        &self.predictor
    }

    pub fn predictor_mut(&mut self) -> &mut PredictorState {
        &mut self.predictor
    }

    fn backends(&mut self) -> impl Iterator<Item = &mut UnitBackend> {
        self.dram.iter_mut().chain(self.pcm.iter_mut())
    }

    fn drain_completions(&mut self) {
        while let Some(Reverse(t)) = self.completions.peek().copied() {
            if t > self.now {
                break;
            }
            self.completions.pop();
            self.outstanding -= 1;
        }
    }

    fn handle_demand(&mut self, ev: DemandServiced) {
        self.completions.push(Reverse(ev.done));
        self.audit.count_demand(ev.unit, ev.segment == Segment::Near, ev.op == MemOp::Read, ev.tbl);
        if ev.unit == UnitKind::Pcm {
            let cell_op = match ev.op {
                MemOp::Read => CellOp::Read,
                MemOp::Write => CellOp::Reset,
            };
            let bias = self.params.tables.bias.lookup_volts(ev.segment, cell_op);
            let trc_ns = self.params.tables.timing.lookup(ev.unit, ev.segment, ev.op).trc_ns();
            self.aging.accumulate(bias, trc_ns);
        }
        self.energy.add_demand(ev.unit, ev.segment, ev.op);
        if let Some(log) = &mut self.command_log {
            let _ = writeln!(
                log,
                "{},{},{}:{}:{},{},{}",
                ev.burst_start,
                match ev.op {
                    MemOp::Read => "READ",
                    MemOp::Write => "WRITE",
                },
                ev.unit.name(),
                ev.channel,
                ev.bank_idx,
                ev.row_key,
                ev.segment.name()
            );
        }
    }

    /// Issues everything issuable at `now`, or advances `now` to the next
    /// event. Returns false when nothing is pending anywhere.
    fn step(&mut self) -> bool {
        let mut events = Vec::new();
        let now = self.now;
        for backend in self.backends() {
            for c in &mut backend.controllers {
                while let Some(ev) = c.try_issue(now) {
                    events.push(ev);
                }
            }
        }
        if !events.is_empty() {
            for ev in events {
                self.handle_demand(ev);
            }
            return true;
        }
        let mut next: Option<u64> = self.completions.peek().map(|Reverse(t)| *t);
        for backend in self.backends() {
            for c in &backend.controllers {
                if let Some(t) = c.next_event_time(now) {
                    next = Some(next.map_or(t, |n| n.min(t)));
                }
            }
        }
        match next {
            Some(t) => {
                debug_assert!(t > self.now, "event loop must advance time");
                self.now = t.max(self.now + 1);
                self.drain_completions();
                true
            }
            None => false,
        }
    }

    fn drain_all(&mut self) {
        loop {
            self.drain_completions();
            if self.outstanding == 0 {
                return;
            }
            let progressed = self.step();
            debug_assert!(progressed, "outstanding requests but no pending event");
            if !progressed {
                return;
            }
        }
    }

    fn admit(&mut self, unit: UnitKind, channel: u32, burst: BurstRequest) {
        loop {
            self.drain_completions();
            let backend = match unit {
                UnitKind::Dram => self.dram.as_ref(),
                UnitKind::Pcm => self.pcm.as_ref(),
            }
            .expect("unit enabled");
            if self.outstanding < self.params.max_outstanding
                && backend.controllers[channel as usize].has_space(burst.op)
            {
                break;
            }
            let progressed = self.step();
            debug_assert!(progressed, "admission blocked with no pending event");
            if !progressed {
                break;
            }
        }
        let arrival = self.now;
        let backend = match unit {
            UnitKind::Dram => self.dram.as_mut(),
            UnitKind::Pcm => self.pcm.as_mut(),
        }
        .expect("unit enabled");
        backend.controllers[channel as usize]
            .enqueue(BurstRequest { arrival, ..burst })
            .expect("space checked");
        self.outstanding += 1;
    }

    fn on_access(&mut self, req: &MemoryRequest) -> Result<(), SimError> {
        let vpn = req.vaddr >> PAGE_SHIFT;
        let phase = self.clock.current_phase;
        let is_mneme = self.params.policy == PolicyKind::Mneme;
        if self.policy.page(vpn).is_none() {
            self.faults += 1;
            self.phase_faults += 1;
            if is_mneme && !self.predictor.is_unknown(req.pc) {
                self.phase_fault_hits += 1;
            }
            let predictor = is_mneme.then_some(&self.predictor);
            let placement = self.policy.allocate_on_fault(req.pc, vpn, predictor, phase, &mut self.rng)?;
            self.audit.faults += 1;
            if let Some(log) = &mut self.decision_log {
                let _ = writeln!(
                    log,
                    "{{\"event\":\"fault\",\"phase\":{phase},\"pc\":\"{:#x}\",\"vpn\":\"{:#x}\",\"case\":{:?},\"tier\":\"{}\",\"spilled\":{}}}",
                    req.pc,
                    vpn,
                    placement.case,
                    placement.tier.name(),
                    placement.spilled
                );
            }
        }
        let info = *self.policy.record_access(vpn, req.op)?;
        if info.air_tracked_phase == Some(phase) {
            self.predictor.air_record(info.fti_pc);
        }
        let geom = self.policy.geom(info.unit);
        let paddr = geom.frame_base_addr(info.frame) | (req.vaddr & (PAGE_BYTES - 1));
        let loc = geom.decode(paddr)?;
        let row_key = (u64::from(loc.group) * u64::from(geom.tiles_per_group) + u64::from(loc.tile))
            * u64::from(geom.rows_per_tile)
            + u64::from(loc.row);
        let bank_idx = (loc.rank * geom.banks_per_rank + loc.bank) as usize;
        let burst = BurstRequest {
            arrival: 0,
            seq: 0,
            op: req.op,
            bank_idx,
            row_key,
            segment: loc.segment,
        };
        self.admit(info.unit, loc.channel, burst);
        Ok(())
    }

    fn phase_boundary(&mut self) {
        self.drain_all();
        let hit_rate = if self.params.policy == PolicyKind::Mneme && self.phase_faults > 0 {
            Some(self.phase_fault_hits as f64 / self.phase_faults as f64)
        } else {
            None
        };
        self.hit_rate_series.push(hit_rate);
        self.aging_series.push(self.aging.aging());
        self.reliability_series.push(self.aging.reliability());

        if self.params.policy == PolicyKind::Mneme {
            for (pc, write_inducing) in self.policy.air_classifications(self.clock.current_phase) {
                self.predictor.air_classify_page(pc, write_inducing);
            }
            self.predictor.phase_commit();
        }

        let plan = self.policy.plan_phase_migrations();
        if let Some(log) = &mut self.decision_log {
            let _ = writeln!(
                log,
                "{{\"event\":\"phase_boundary\",\"phase\":{},\"planned_moves\":{}}}",
                self.clock.current_phase,
                plan.len()
            );
        }

        // Execute the plan; field-level split so the closure can drive the
        // backends while the policy hands out jobs.
        let Engine {
            policy,
            dram,
            pcm,
            aging,
            energy,
            audit,
            migrations,
            pcm_mig_writes,
            params,
            rng,
            command_log,
            now,
            ..
        } = self;
        let mut cursor = *now;
        let clock_of = |unit: UnitKind| match unit {
            UnitKind::Dram => params.dram_geom.as_ref().unwrap().clock_mhz,
            UnitKind::Pcm => params.pcm_geom.as_ref().unwrap().clock_mhz,
        };
        let mut migrate = |job: MoveJob| {
            let outcome = if job.src_unit == job.dst_unit {
                let backend = match job.src_unit {
                    UnitKind::Dram => dram.as_mut(),
                    UnitKind::Pcm => pcm.as_mut(),
                }
                .expect("unit enabled");
                execute_migration(backend, None, job.src_frame, job.dst_frame, cursor)
            } else {
                let (src, dst) = match job.src_unit {
                    UnitKind::Dram => (dram.as_mut().unwrap(), pcm.as_mut().unwrap()),
                    UnitKind::Pcm => (pcm.as_mut().unwrap(), dram.as_mut().unwrap()),
                };
                execute_migration(src, Some(dst), job.src_frame, job.dst_frame, cursor)
            }
            .expect("planner produced a valid move");
            cursor = cursor.max(outcome.end);
            match outcome.kind {
                MigrationKind::IntraBank => migrations.intra_bank += 1,
                MigrationKind::CrossBankSameUnit => migrations.cross_bank_same_unit += 1,
                MigrationKind::CrossUnit => migrations.cross_unit += 1,
            }
            migrations.read_bursts += outcome.read_bursts;
            migrations.write_bursts += outcome.write_bursts;
            audit.migration_moves += 1;
            let side_bursts = [outcome.read_bursts, outcome.write_bursts];
            for (side, bursts) in outcome.sides.iter().zip(side_bursts) {
                let entry = params.tables.timing.lookup(side.unit, side.segment, side.op);
                let tbl = entry.to_cycles(clock_of(side.unit)).tbl;
                audit.count_migration_side(side.unit, bursts, tbl);
                energy.add_migration(side.unit, side.segment, side.op, side.count);
                if side.unit == UnitKind::Pcm && side.op == MemOp::Write {
                    *pcm_mig_writes += side.count;
                }
                if side.unit == UnitKind::Pcm {
                    let cell_op = match side.op {
                        MemOp::Read => CellOp::Read,
                        MemOp::Write => CellOp::Reset,
                    };
                    let bias = params.tables.bias.lookup_volts(side.segment, cell_op);
                    aging.accumulate_n(bias, entry.trc_ns(), side.count);
                }
            }
            if let Some(log) = command_log {
                let _ = writeln!(
                    log,
                    "{},MIGRATE_{:?},{}:{:#x}->{}:{:#x},{}",
                    outcome.start,
                    outcome.kind,
                    job.src_unit.name(),
                    job.src_frame,
                    job.dst_unit.name(),
                    job.dst_frame,
                    outcome.end
                );
            }
        };
        let stats = policy.execute_plan(&plan, rng, &mut migrate);
        self.migrations.skipped += stats.skipped;
        self.migrations.evictions += stats.evictions;
        self.now = self.now.max(cursor);

        self.policy.reset_phase_counters();
        self.phase_faults = 0;
        self.phase_fault_hits = 0;
        self.clock.current_phase += 1;
    }

    /// Runs the engine over a trace. The iterator yields parse results so
    /// malformed traces abort with the underlying error.
    pub fn run<I>(mut self, trace: I) -> Result<SimReport, SimError>
    where
        I: IntoIterator<Item = Result<MemoryRequest, TraceError>>,
    {
        for item in trace {
            let req = item?;
            self.fingerprint.update(&req);
            self.any_request = true;
            self.last_instr = req.instr_index;
            while self.clock.crossed(req.instr_index) {
                self.phase_boundary();
            }
            self.on_access(&req)?;
        }
        self.drain_all();
        self.phase_boundary();
        self.finalize()
    }

    fn finalize(mut self) -> Result<SimReport, SimError> {
        if let Some(log) = &mut self.decision_log {
            log.flush()?;
        }
        if let Some(log) = &mut self.command_log {
            log.flush()?;
        }
        let mut accesses = std::collections::BTreeMap::new();
        let mut channels = std::collections::BTreeMap::new();
        let mut pcm_writes = 0u64;
        for backend in [&self.dram, &self.pcm].into_iter().flatten() {
            let unit = backend.geom.unit_kind;
            let mut acc = AccessCounts::default();
            let mut ch = ChannelCounts::default();
            for c in &backend.controllers {
                let counts = c.demand_access_counts();
                acc.near_reads += counts[0];
                acc.near_writes += counts[1];
                acc.far_reads += counts[2];
                acc.far_writes += counts[3];
                ch.demand_bursts += c.channel.demand_bursts;
                ch.migration_bursts += c.channel.migration_bursts;
                ch.busy_cycles += c.channel.busy_cycles;
            }
            if unit == UnitKind::Pcm {
                pcm_writes = acc.near_writes + acc.far_writes;
            }
            accesses.insert(unit.name().to_string(), acc);
            channels.insert(unit.name().to_string(), ch);
        }
        // Migration writes program PCM wordlines too.
        let endurance = if let Some(geom) = &self.params.pcm_geom {
            let wordlines = u64::from(geom.groups_per_bank) * u64::from(geom.rows_per_tile);
            let writes = pcm_writes + self.pcm_migration_write_events();
            let elapsed = self.now.max(1);
            let lifetime = (writes > 0)
                .then(|| {
                    endurance_lifetime(&EnduranceInputs {
                        wordlines_per_bank: wordlines,
                        cell_endurance: self.params.cell_endurance,
                        writes,
                        elapsed,
                    })
                    .ok()
                    .map(|r| r.as_f64())
                })
                .flatten();
            EnduranceReport {
                wordlines_per_bank: wordlines,
                cell_endurance: self.params.cell_endurance,
                pcm_writes: writes,
                elapsed_cycles: elapsed,
                lifetime_cycles: lifetime,
            }
        } else {
            EnduranceReport::default()
        };

        let (zero, one, more_than_one) = self.policy.migration_histogram();
        let report = SimReport {
            schema_version: REPORT_SCHEMA_VERSION,
            policy: self.params.policy.name().to_string(),
            config: self.params.config_echo.clone(),
            trace_fingerprint: self.fingerprint.finish(),
            total_cycles: self.now,
            instructions: if self.any_request { self.last_instr + 1 } else { 0 },
            phases: self.aging_series.len() as u64,
            faults: self.faults,
            demand_accesses: self.audit.demand_accesses,
            accesses,
            channels,
            migrations: self.migrations,
            pages: MigrationHistogram { zero, one, more_than_one },
            fti_hit_rate_per_phase: self.hit_rate_series,
            energy: EnergyReport {
                demand_pj: self.energy.demand_pj(),
                migration_pj: self.energy.migration_pj(),
                total_pj: self.energy.total_pj(),
                table_provenance: "configuration, not measurement".to_string(),
            },
            reliability: ReliabilityReport {
                aging_total: self.aging.aging(),
                reliability_final: self.aging.reliability(),
                aging_per_phase: self.aging_series,
                reliability_per_phase: self.reliability_series.clone(),
                lifetime_index: aging_lifetime_index(&self.reliability_series),
                endurance,
            },
        };
        self.policy
            .audit_frame_conservation()
            .map_err(ReportError::Reconciliation)?;
        reconcile(&report, &self.audit, self.policy.page_count() as u64)?;
        Ok(report)
    }

    /// PCM-side migration write events (bursts for channel-borne moves,
    /// bank slices for intra-bank moves), counted for endurance.
    fn pcm_migration_write_events(&self) -> u64 {
        self.pcm_mig_writes
    }
}

/// Convenience wrapper: build an engine and run an in-memory trace.
pub fn run_trace(params: SimParams, trace: &[MemoryRequest]) -> Result<SimReport, SimError> {
    Engine::new(params)?.run(trace.iter().map(|r| Ok(*r)))
}
