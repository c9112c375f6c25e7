//! Engine-level integration: counter reconciliation, channel accounting,
//! command/decision logs, and directional behavior across configurations.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use tiersim::geometry::{ps_to_cycles, UnitKind};
use tiersim::policy::{PolicyKind, PolicyParams};
use tiersim::sim::{run_trace, Engine, SimParams};
use tiersim::trace::{generate_phase_shift, generate_skewed, SyntheticSpec};

fn small_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_ftis: 16,
        phases: 4,
        accesses_per_phase: 25_000,
        pages_per_fti_per_phase: 16,
        phase_length_instructions: 1_000_000,
        seed,
        ..Default::default()
    }
}

fn params(policy: PolicyKind) -> SimParams {
    SimParams { policy, phase_length: 1_000_000, ..Default::default() }
}

#[test]
fn counters_reconcile_across_policies() {
    let trace = generate_skewed(&small_spec(31)).unwrap();
    for policy in PolicyKind::ALL {
        let report = run_trace(params(policy), &trace).unwrap();
        // Liveness: every trace request was serviced.
        assert_eq!(report.demand_accesses, trace.len() as u64, "{policy:?}");
        // Conservation: faults + re-accesses = total, one fault per page.
        let pages = report.pages.zero + report.pages.one + report.pages.more_than_one;
        assert_eq!(report.faults, pages, "{policy:?}");
        // Near/far split accounts for every access.
        let split: u64 = report.accesses.values().map(|a| a.total()).sum();
        assert_eq!(split, report.demand_accesses, "{policy:?}");
    }
}

#[test]
fn channel_busy_cycles_match_burst_accounting() {
    let trace = generate_skewed(&small_spec(32)).unwrap();
    let report = run_trace(params(PolicyKind::Mneme), &trace).unwrap();
    // With the default tables tBL is uniform within a unit, so busy cycles
    // collapse to (demand + migration bursts) x tBL.
    let tbl = |unit: UnitKind| match unit {
        UnitKind::Dram => ps_to_cycles(7_500, 1066),
        UnitKind::Pcm => ps_to_cycles(15_000, 1066),
    };
    for (name, c) in &report.channels {
        let unit = if name == "dram" { UnitKind::Dram } else { UnitKind::Pcm };
        assert_eq!(
            c.busy_cycles,
            (c.demand_bursts + c.migration_bursts) * tbl(unit),
            "{name}"
        );
    }
}

#[test]
fn mneme_prefers_intra_bank_migrations() {
    let trace = generate_skewed(&small_spec(33)).unwrap();
    let mneme = run_trace(params(PolicyKind::Mneme), &trace).unwrap();
    let nimble = run_trace(params(PolicyKind::Nimble), &trace).unwrap();
    assert!(mneme.migrations.total_moves() > 0);
    assert!(nimble.migrations.intra_bank == 0, "nimble only moves across units");
    assert!(
        mneme.migrations.intra_bank * 2 > mneme.migrations.total_moves(),
        "most mneme moves stay inside the bank: {:?}",
        mneme.migrations
    );
    assert!(mneme.migrations.cross_unit <= nimble.migrations.cross_unit);
}

#[test]
fn phase_length_sweep_cycles_non_decreasing() {
    // Coarser phases react slower to working-set shifts, costing cycles.
    let spec = SyntheticSpec { phases: 8, ..small_spec(34) };
    let trace = generate_phase_shift(&spec, 0).unwrap();
    let mut cycles = Vec::new();
    for phase_length in [1_000_000u64, 2_500_000, 5_000_000] {
        let p = SimParams { policy: PolicyKind::Mneme, phase_length, ..Default::default() };
        cycles.push(run_trace(p, &trace).unwrap().total_cycles);
    }
    assert!(
        cycles[0] <= cycles[1] && cycles[1] <= cycles[2],
        "cycles must not decrease with phase length: {cycles:?}"
    );
}

#[test]
fn report_embeds_full_provenance() {
    let trace = generate_skewed(&small_spec(35)).unwrap();
    let mut cfg = tiersim::config::RunConfig::default();
    cfg.policy = PolicyKind::Mneme;
    cfg.phase_length = 1_000_000;
    cfg.seed = 77;
    let report = run_trace(cfg.to_sim_params().unwrap(), &trace).unwrap();
    assert_eq!(report.config.pointer("/seed").and_then(|v| v.as_u64()), Some(77));
    assert_eq!(
        report.config.pointer("/geometry/pcm/near_rows").and_then(|v| v.as_u64()),
        Some(512)
    );
    assert!(report.config.pointer("/tables/timing/pcm_far_write").is_some());
    assert_eq!(
        report.config.pointer("/predictor/hash_seed").and_then(|v| v.as_u64()),
        Some(tiersim::predictor::PredictorConfig::default().hash_seed)
    );
    assert!(!report.trace_fingerprint.is_empty());
}

/// Shared buffer writer for capturing engine logs.
#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl std::io::Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn command_log_supports_interval_audit() {
    let trace = generate_skewed(&small_spec(36)).unwrap();
    let commands = SharedBuf::default();
    let decisions = SharedBuf::default();
    let engine = Engine::new(params(PolicyKind::Mneme))
        .unwrap()
        .with_command_log(Box::new(commands.clone()))
        .with_decision_log(Box::new(decisions.clone()));
    let report = engine.run(trace.iter().map(|r| Ok(*r))).unwrap();

    let text = String::from_utf8(commands.0.lock().unwrap().clone()).unwrap();
    let mut demand_lines = 0u64;
    // Burst windows on one channel never overlap: successive starts are
    // separated by at least tBL.
    let mut last_start: HashMap<String, u64> = HashMap::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields[1].starts_with("MIGRATE") {
            continue;
        }
        demand_lines += 1;
        let start: u64 = fields[0].parse().unwrap();
        assert!(matches!(fields[1], "READ" | "WRITE"), "bad command {line}");
        let locator: Vec<&str> = fields[2].split(':').collect();
        let channel_key = format!("{}:{}", locator[0], locator[1]);
        let tbl = if locator[0] == "dram" { 8 } else { 16 };
        if let Some(prev) = last_start.get(&channel_key) {
            assert!(start >= prev + tbl, "overlapping bursts on {channel_key}: {line}");
        }
        last_start.insert(channel_key, start);
        assert!(matches!(fields[4], "near" | "far"), "bad segment {line}");
    }
    assert_eq!(demand_lines, report.demand_accesses);

    let decisions_text = String::from_utf8(decisions.0.lock().unwrap().clone()).unwrap();
    assert!(decisions_text.lines().any(|l| l.contains("\"event\":\"fault\"")));
    assert!(decisions_text.lines().any(|l| l.contains("\"event\":\"phase_boundary\"")));
    for line in decisions_text.lines() {
        serde_json::from_str::<serde_json::Value>(line).expect("decision log lines are JSON");
    }
}

#[test]
fn policies_needing_missing_units_are_rejected() {
    let mut p = params(PolicyKind::Mneme);
    p.dram_geom = None;
    assert!(Engine::new(p).is_err());
    let mut p = params(PolicyKind::Tldram);
    p.dram_geom = None;
    assert!(Engine::new(p).is_err());
    let mut p = params(PolicyKind::Baseline);
    p.pcm_geom = None;
    assert!(Engine::new(p).is_ok(), "baseline runs on a DRAM-only system");
}

#[test]
fn baseline_on_dram_only_system_runs() {
    let trace = generate_skewed(&small_spec(37)).unwrap();
    let mut p = params(PolicyKind::Tldram);
    p.pcm_geom = None;
    let report = run_trace(p, &trace).unwrap();
    assert_eq!(report.demand_accesses, trace.len() as u64);
    assert!(report.accesses.contains_key("dram"));
    assert!(!report.accesses.contains_key("pcm"));
    assert_eq!(report.reliability.aging_total, 0.0, "no PCM, no bias aging");
}

#[test]
fn saturating_write_queue_drains() {
    // Write-only trace slams the write queues; the watermark drain must keep
    // the run live and serve everything.
    let spec = SyntheticSpec { read_fti_fraction: 0.0, ..small_spec(38) };
    let trace = generate_skewed(&spec).unwrap();
    let report = run_trace(params(PolicyKind::Baseline), &trace).unwrap();
    assert_eq!(report.demand_accesses, trace.len() as u64);
    let writes: u64 = report
        .accesses
        .values()
        .map(|a| a.near_writes + a.far_writes)
        .sum();
    assert_eq!(writes, trace.len() as u64);
}

#[test]
fn aging_orders_policies_by_near_usage() {
    // Forcing accesses into near segments must reduce PCM stress relative to
    // a far-heavy run of the same trace.
    let trace = generate_skewed(&small_spec(39)).unwrap();
    let mneme = run_trace(params(PolicyKind::Mneme), &trace).unwrap();
    let degenerate = {
        let mut p = params(PolicyKind::Mneme);
        p.predictor.promotion_threshold = u32::MAX;
        p.policy_params = PolicyParams { hot_threshold: u32::MAX, cold_threshold: 0 };
        run_trace(p, &trace).unwrap()
    };
    assert!(
        mneme.reliability.aging_total < degenerate.reliability.aging_total,
        "near-segment placement must reduce aging: {} vs {}",
        mneme.reliability.aging_total,
        degenerate.reliability.aging_total
    );
    assert!(mneme.reliability.reliability_final >= degenerate.reliability.reliability_final);
}
