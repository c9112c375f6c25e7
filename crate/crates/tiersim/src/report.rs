//! Run reports: aggregate counters, reconciliation against an independent
//! recount, machine-readable emission (JSON plus per-family CSV), and
//! cross-run comparison normalized to a named baseline.

use crate::geometry::UnitKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use thiserror::Error;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reconciliation failed: {0}")]
    Reconciliation(String),
    #[error("mismatched configs: {0}")]
    MismatchedConfig(String),
    #[error("duplicate report label {0:?}")]
    DuplicateLabel(String),
    #[error("baseline {0:?} not among the reports")]
    MissingBaseline(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounts {
    pub near_reads: u64,
    pub near_writes: u64,
    pub far_reads: u64,
    pub far_writes: u64,
}

impl AccessCounts {
    pub fn near(&self) -> u64 {
        self.near_reads + self.near_writes
    }

    pub fn far(&self) -> u64 {
        self.far_reads + self.far_writes
    }

    pub fn total(&self) -> u64 {
        self.near() + self.far()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelCounts {
    pub demand_bursts: u64,
    pub migration_bursts: u64,
    pub busy_cycles: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationCounts {
    pub intra_bank: u64,
    pub cross_bank_same_unit: u64,
    pub cross_unit: u64,
    pub skipped: u64,
    pub evictions: u64,
    /// Channel bursts spent on migrations, read side + write side.
    pub read_bursts: u64,
    pub write_bursts: u64,
}

impl MigrationCounts {
    pub fn total_moves(&self) -> u64 {
        self.intra_bank + self.cross_bank_same_unit + self.cross_unit
    }

    pub fn channel_bursts(&self) -> u64 {
        self.read_bursts + self.write_bursts
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub demand_pj: f64,
    pub migration_pj: f64,
    pub total_pj: f64,
    /// Energy-per-access values come from the run configuration, not from a
    /// measured device model.
    pub table_provenance: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EnduranceReport {
    pub wordlines_per_bank: u64,
    pub cell_endurance: u64,
    pub pcm_writes: u64,
    pub elapsed_cycles: u64,
    /// `wordlines * endurance * elapsed / writes`, in cycles; None when the
    /// run performed no PCM writes.
    pub lifetime_cycles: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub aging_total: f64,
    pub reliability_final: f64,
    pub aging_per_phase: Vec<f64>,
    pub reliability_per_phase: Vec<f64>,
    pub lifetime_index: f64,
    pub endurance: EnduranceReport,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MigrationHistogram {
    pub zero: u64,
    pub one: u64,
    pub more_than_one: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub policy: String,
    /// Resolved run configuration, embedded for provenance.
    pub config: serde_json::Value,
    pub trace_fingerprint: String,
    pub total_cycles: u64,
    pub instructions: u64,
    pub phases: u64,
    pub faults: u64,
    pub demand_accesses: u64,
    pub accesses: BTreeMap<String, AccessCounts>,
    pub channels: BTreeMap<String, ChannelCounts>,
    pub migrations: MigrationCounts,
    pub pages: MigrationHistogram,
    pub fti_hit_rate_per_phase: Vec<Option<f64>>,
    pub energy: EnergyReport,
    pub reliability: ReliabilityReport,
}

impl SimReport {
    pub fn unit_accesses(&self, unit: UnitKind) -> AccessCounts {
        self.accesses.get(unit.name()).copied().unwrap_or_default()
    }

    pub fn near_share(&self) -> f64 {
        let (near, total) = self.accesses.values().fold((0u64, 0u64), |(n, t), a| {
            (n + a.near(), t + a.total())
        });
        if total == 0 {
            0.0
        } else {
            near as f64 / total as f64
        }
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<(), ReportError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// Writes one flat CSV per metric family into `dir`.
    pub fn write_csv_dir(&self, dir: impl AsRef<Path>) -> Result<(), ReportError> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut summary = String::from("metric,value\n");
        for (k, v) in [
            ("total_cycles", self.total_cycles as f64),
            ("instructions", self.instructions as f64),
            ("phases", self.phases as f64),
            ("faults", self.faults as f64),
            ("demand_accesses", self.demand_accesses as f64),
            ("near_share", self.near_share()),
            ("migration_moves", self.migrations.total_moves() as f64),
            ("migration_channel_bursts", self.migrations.channel_bursts() as f64),
            ("energy_total_pj", self.energy.total_pj),
            ("aging_total", self.reliability.aging_total),
        ] {
            summary.push_str(&format!("{k},{v}\n"));
        }
        std::fs::write(dir.join("summary.csv"), summary)?;

        let mut acc = String::from("unit,near_reads,near_writes,far_reads,far_writes\n");
        for (unit, a) in &self.accesses {
            acc.push_str(&format!(
                "{unit},{},{},{},{}\n",
                a.near_reads, a.near_writes, a.far_reads, a.far_writes
            ));
        }
        std::fs::write(dir.join("accesses.csv"), acc)?;

        let mut ch = String::from("unit,demand_bursts,migration_bursts,busy_cycles\n");
        for (unit, c) in &self.channels {
            ch.push_str(&format!(
                "{unit},{},{},{}\n",
                c.demand_bursts, c.migration_bursts, c.busy_cycles
            ));
        }
        std::fs::write(dir.join("channels.csv"), ch)?;

        let m = &self.migrations;
        std::fs::write(
            dir.join("migrations.csv"),
            format!(
                "intra_bank,cross_bank_same_unit,cross_unit,skipped,evictions,read_bursts,write_bursts\n{},{},{},{},{},{},{}\n",
                m.intra_bank, m.cross_bank_same_unit, m.cross_unit, m.skipped, m.evictions,
                m.read_bursts, m.write_bursts
            ),
        )?;

        let mut rel = String::from("phase,aging,reliability,fti_hit_rate\n");
        for i in 0..self.reliability.aging_per_phase.len() {
            let hit = self
                .fti_hit_rate_per_phase
                .get(i)
                .copied()
                .flatten()
                .map_or(String::new(), |h| format!("{h}"));
            rel.push_str(&format!(
                "{i},{},{},{hit}\n",
                self.reliability.aging_per_phase[i], self.reliability.reliability_per_phase[i]
            ));
        }
        std::fs::write(dir.join("reliability.csv"), rel)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// Per-run metrics normalized to the baseline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub cycles: f64,
    pub energy: f64,
    pub migration_bursts: f64,
    pub migration_moves: f64,
    pub aging: f64,
    pub near_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: String,
    /// Rows keyed by report label, in label order.
    pub rows: BTreeMap<String, ComparisonRow>,
}

fn ratio(value: f64, base: f64) -> f64 {
    if base == 0.0 {
        if value == 0.0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        value / base
    }
}

/// Normalizes each labeled report to `baseline_label`. All reports must
/// describe the same trace and geometry.
pub fn compare(
    reports: &[(String, SimReport)],
    baseline_label: &str,
) -> Result<ComparisonTable, ReportError> {
    let mut seen = std::collections::HashSet::new();
    for (label, _) in reports {
        if !seen.insert(label.clone()) {
            return Err(ReportError::DuplicateLabel(label.clone()));
        }
    }
    let base = reports
        .iter()
        .find(|(l, _)| l == baseline_label)
        .map(|(_, r)| r)
        .ok_or_else(|| ReportError::MissingBaseline(baseline_label.to_string()))?;
    for (label, r) in reports {
        if r.trace_fingerprint != base.trace_fingerprint {
            return Err(ReportError::MismatchedConfig(format!(
                "report {label:?} ran a different trace ({} vs {})",
                r.trace_fingerprint, base.trace_fingerprint
            )));
        }
        let geoms = |rep: &SimReport| {
            (rep.config.pointer("/geometry").cloned(), rep.config.pointer("/tables").cloned())
        };
        if geoms(r) != geoms(base) {
            return Err(ReportError::MismatchedConfig(format!(
                "report {label:?} ran a different geometry"
            )));
        }
    }
    let mut rows = BTreeMap::new();
    for (label, r) in reports {
        rows.insert(
            label.clone(),
            ComparisonRow {
                cycles: ratio(r.total_cycles as f64, base.total_cycles as f64),
                energy: ratio(r.energy.total_pj, base.energy.total_pj),
                migration_bursts: ratio(
                    r.migrations.channel_bursts() as f64,
                    base.migrations.channel_bursts() as f64,
                ),
                migration_moves: ratio(
                    r.migrations.total_moves() as f64,
                    base.migrations.total_moves() as f64,
                ),
                aging: ratio(r.reliability.aging_total, base.reliability.aging_total),
                near_share: ratio(r.near_share(), base.near_share()),
            },
        );
    }
    Ok(ComparisonTable { baseline: baseline_label.to_string(), rows })
}

impl ComparisonTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("label,cycles,energy,migration_bursts,migration_moves,aging,near_share\n");
        for (label, row) in &self.rows {
            out.push_str(&format!(
                "{label},{},{},{},{},{},{}\n",
                row.cycles,
                row.energy,
                row.migration_bursts,
                row.migration_moves,
                row.aging,
                row.near_share
            ));
        }
        out
    }

    pub fn write_text(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "normalized to {}", self.baseline)?;
        writeln!(
            w,
            "{:<14} {:>8} {:>8} {:>10} {:>10} {:>8} {:>10}",
            "label", "cycles", "energy", "mig.bursts", "mig.moves", "aging", "near.share"
        )?;
        for (label, r) in &self.rows {
            writeln!(
                w,
                "{label:<14} {:>8.3} {:>8.3} {:>10.3} {:>10.3} {:>8.3} {:>10.3}",
                r.cycles, r.energy, r.migration_bursts, r.migration_moves, r.aging, r.near_share
            )?;
        }
        Ok(())
    }
}

/// Independent recount of what the event stream implied, reconciled against
/// the report counters at finalize time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AuditCounters {
    pub demand_accesses: u64,
    pub accesses: BTreeMap<(UnitKind, bool, bool), u64>,
    pub demand_bursts: BTreeMap<UnitKind, u64>,
    pub migration_bursts: BTreeMap<UnitKind, u64>,
    pub expected_busy_cycles: BTreeMap<UnitKind, u64>,
    pub migration_moves: u64,
    pub faults: u64,
}

impl AuditCounters {
    /// Key: (unit, is_near, is_read).
    pub fn count_demand(&mut self, unit: UnitKind, near: bool, read: bool, tbl: u64) {
        self.demand_accesses += 1;
        *self.accesses.entry((unit, near, read)).or_default() += 1;
        *self.demand_bursts.entry(unit).or_default() += 1;
        *self.expected_busy_cycles.entry(unit).or_default() += tbl;
    }

    pub fn count_migration_side(&mut self, unit: UnitKind, bursts: u64, tbl: u64) {
        *self.migration_bursts.entry(unit).or_default() += bursts;
        *self.expected_busy_cycles.entry(unit).or_default() += bursts * tbl;
    }
}

/// Reconciles the assembled report against the audit recount; returns the
/// first mismatching counter as an error.
pub fn reconcile(report: &SimReport, audit: &AuditCounters, pages: u64) -> Result<(), ReportError> {
    let fail = |msg: String| Err(ReportError::Reconciliation(msg));
    if report.demand_accesses != audit.demand_accesses {
        return fail(format!(
            "demand_accesses {} != recount {}",
            report.demand_accesses, audit.demand_accesses
        ));
    }
    if report.faults != audit.faults {
        return fail(format!("faults {} != recount {}", report.faults, audit.faults));
    }
    let mut acc_total = 0u64;
    for (unit_name, a) in &report.accesses {
        let unit = if unit_name == "dram" { UnitKind::Dram } else { UnitKind::Pcm };
        let get = |near, read| audit.accesses.get(&(unit, near, read)).copied().unwrap_or(0);
        for (label, have, want) in [
            ("near_reads", a.near_reads, get(true, true)),
            ("near_writes", a.near_writes, get(true, false)),
            ("far_reads", a.far_reads, get(false, true)),
            ("far_writes", a.far_writes, get(false, false)),
        ] {
            if have != want {
                return fail(format!("{unit_name} {label} {have} != recount {want}"));
            }
        }
        acc_total += a.total();
    }
    if acc_total != report.demand_accesses {
        return fail(format!(
            "near+far accesses {acc_total} != demand accesses {}",
            report.demand_accesses
        ));
    }
    for (unit_name, c) in &report.channels {
        let unit = if unit_name == "dram" { UnitKind::Dram } else { UnitKind::Pcm };
        let want_demand = audit.demand_bursts.get(&unit).copied().unwrap_or(0);
        let want_migration = audit.migration_bursts.get(&unit).copied().unwrap_or(0);
        let want_busy = audit.expected_busy_cycles.get(&unit).copied().unwrap_or(0);
        if c.demand_bursts != want_demand {
            return fail(format!(
                "{unit_name} demand bursts {} != recount {want_demand}",
                c.demand_bursts
            ));
        }
        if c.migration_bursts != want_migration {
            return fail(format!(
                "{unit_name} migration bursts {} != recount {want_migration}",
                c.migration_bursts
            ));
        }
        if c.busy_cycles != want_busy {
            return fail(format!(
                "{unit_name} busy cycles {} != bursts x tBL recount {want_busy}",
                c.busy_cycles
            ));
        }
    }
    if report.migrations.total_moves() != audit.migration_moves {
        return fail(format!(
            "migration moves {} != recount {}",
            report.migrations.total_moves(),
            audit.migration_moves
        ));
    }
    let hist = &report.pages;
    if hist.zero + hist.one + hist.more_than_one != pages {
        return fail(format!(
            "migration histogram sums to {} but {} pages are mapped",
            hist.zero + hist.one + hist.more_than_one,
            pages
        ));
    }
    if report.faults != pages {
        return fail(format!("faults {} != mapped pages {pages}", report.faults));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(label_cycles: u64) -> SimReport {
        SimReport {
            schema_version: REPORT_SCHEMA_VERSION,
            policy: "baseline".into(),
            trace_fingerprint: "10:abcd".into(),
            total_cycles: label_cycles,
            energy: EnergyReport { demand_pj: 50.0, migration_pj: 10.0, total_pj: 60.0, ..Default::default() },
            reliability: ReliabilityReport { aging_total: 4.0, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn compare_to_self_is_all_ones() {
        let reports = vec![("base".to_string(), report(100))];
        let table = compare(&reports, "base").unwrap();
        let row = &table.rows["base"];
        assert_eq!(row.cycles, 1.0);
        assert_eq!(row.energy, 1.0);
        assert_eq!(row.aging, 1.0);
    }

    #[test]
    fn compare_ratios() {
        let reports = vec![
            ("base".to_string(), report(100)),
            ("fast".to_string(), report(80)),
        ];
        let table = compare(&reports, "base").unwrap();
        assert_eq!(table.rows["fast"].cycles, 0.80);
        assert_eq!(table.rows["base"].cycles, 1.00);
    }

    #[test]
    fn compare_is_permutation_invariant() {
        let a = ("a".to_string(), report(100));
        let b = ("b".to_string(), report(50));
        let c = ("c".to_string(), report(200));
        let t1 = compare(&[a.clone(), b.clone(), c.clone()], "a").unwrap();
        let t2 = compare(&[c, b, a], "a").unwrap();
        assert_eq!(t1, t2);
        assert_eq!(t1.to_csv(), t2.to_csv());
    }

    #[test]
    fn compare_rejects_duplicates_and_mismatches() {
        let reports = vec![("x".to_string(), report(1)), ("x".to_string(), report(2))];
        assert!(matches!(compare(&reports, "x"), Err(ReportError::DuplicateLabel(_))));

        let mut other = report(5);
        other.trace_fingerprint = "9:ffff".into();
        let reports = vec![("x".to_string(), report(1)), ("y".to_string(), other)];
        assert!(matches!(compare(&reports, "x"), Err(ReportError::MismatchedConfig(_))));

        let reports = vec![("x".to_string(), report(1))];
        assert!(matches!(compare(&reports, "zzz"), Err(ReportError::MissingBaseline(_))));
    }

    #[test]
    fn reconcile_catches_counter_drift() {
        let mut r = report(10);
        r.demand_accesses = 5;
        let audit = AuditCounters { demand_accesses: 4, ..Default::default() };
        assert!(matches!(reconcile(&r, &audit, 0), Err(ReportError::Reconciliation(_))));
    }

    #[test]
    fn json_roundtrip_is_stable() {
        let r = report(123);
        let json = r.to_json().unwrap();
        let back = SimReport::from_json(&json).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json().unwrap(), json);
    }
}
