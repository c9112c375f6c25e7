//! Closed-form reliability and overhead models: endurance lifetime, bias
//! voltage aging of the peripheral circuit, derived reliability, isolation
//! transistor area arithmetic, and a coarse per-event energy ledger.
//!
//! The aging constants default to a non-physical normalization (g0 = 1,
//! a = 2, b = 1, beta = 1); absolute aging numbers are only meaningful as
//! relative comparisons between policies on identical traces. Energy table
//! entries likewise come from configuration, not measurement, and reports
//! mark them as such.

use crate::geometry::{MemOp, Segment, UnitKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReliabilityError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Exact unsigned rational, kept reduced. Small enough on purpose: lifetime
/// arithmetic is a three-integer product over a division.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ratio {
    pub num: u128,
    pub den: u128,
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Ratio {
    pub fn new(num: u128, den: u128) -> Self {
        assert!(den != 0, "zero denominator");
        let g = gcd(num, den);
        if g == 0 {
            return Ratio { num: 0, den: 1 };
        }
        Ratio { num: num / g, den: den / g }
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

/// Inputs to the endurance-lifetime estimate: total wordlines per bank, cell
/// write endurance, and the measured write frequency expressed as
/// `writes / elapsed` so the result stays an exact rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnduranceInputs {
    pub wordlines_per_bank: u64,
    pub cell_endurance: u64,
    pub writes: u64,
    pub elapsed: u64,
}

/// Endurance-related lifetime `N_WL * N_e / N_f`, in the time unit of
/// `elapsed` (cycles for simulator runs).
pub fn endurance_lifetime(inputs: &EnduranceInputs) -> Result<Ratio, ReliabilityError> {
    if inputs.wordlines_per_bank == 0 || inputs.cell_endurance == 0 {
        return Err(ReliabilityError::InvalidInput("wordlines and endurance must be positive".into()));
    }
    if inputs.elapsed == 0 {
        return Err(ReliabilityError::InvalidInput("elapsed time must be positive".into()));
    }
    if inputs.writes == 0 {
        return Err(ReliabilityError::InvalidInput(
            "write frequency is zero; endurance lifetime is unbounded".into(),
        ));
    }
    // N_f = writes / elapsed, so L_e = N_WL * N_e * elapsed / writes.
    let num = u128::from(inputs.wordlines_per_bank)
        * u128::from(inputs.cell_endurance)
        * u128::from(inputs.elapsed);
    Ok(Ratio::new(num, u128::from(inputs.writes)))
}

/// Material- and temperature-dependent aging constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgingConstants {
    pub g0: f64,
    pub a: f64,
    pub b: f64,
    pub beta: f64,
}

impl Default for AgingConstants {
    fn default() -> Self {
        AgingConstants { g0: 1.0, a: 2.0, b: 1.0, beta: 1.0 }
    }
}

/// Accumulated bias-voltage stress of the peripheral circuit. Each access
/// contributes `g0 * V_bias^a * tRC^b`; reliability is `exp(-aging^beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgingAccumulator {
    pub constants: AgingConstants,
    aging: f64,
}

impl AgingAccumulator {
    pub fn new(constants: AgingConstants) -> Self {
        assert!(constants.beta > 0.0, "beta must be positive");
        AgingAccumulator { constants, aging: 0.0 }
    }

    pub fn accumulate(&mut self, v_bias_volts: f64, trc_ns: f64) {
        debug_assert!(v_bias_volts > 0.0 && trc_ns > 0.0);
        self.aging +=
            self.constants.g0 * v_bias_volts.powf(self.constants.a) * trc_ns.powf(self.constants.b);
    }

    /// Contribution of `count` identical accesses.
    pub fn accumulate_n(&mut self, v_bias_volts: f64, trc_ns: f64, count: u64) {
        self.aging += count as f64
            * self.constants.g0
            * v_bias_volts.powf(self.constants.a)
            * trc_ns.powf(self.constants.b);
    }

    pub fn aging(&self) -> f64 {
        self.aging
    }

    pub fn reliability(&self) -> f64 {
        (-self.aging.powf(self.constants.beta)).exp()
    }
}

/// Trapezoidal integral of the per-phase reliability series, reported as a
/// relative lifetime index (unit spacing between phase samples).
pub fn aging_lifetime_index(reliability_per_phase: &[f64]) -> f64 {
    match reliability_per_phase.len() {
        0 => 0.0,
        1 => reliability_per_phase[0],
        _ => reliability_per_phase
            .windows(2)
            .map(|w| 0.5 * (w[0] + w[1]))
            .sum(),
    }
}

/// Fractional bank-area increase from adding `extra_isolation` transistors
/// per bitline: `extra * isolation_height / (peripheral_height + cells)`.
/// Heights are in units of one cell height.
pub fn area_overhead(
    isolation_height: f64,
    peripheral_height: f64,
    cells_per_bitline: f64,
    extra_isolation: u32,
) -> f64 {
    assert!(isolation_height >= 0.0 && peripheral_height > 0.0 && cells_per_bitline > 0.0);
    f64::from(extra_isolation) * isolation_height / (peripheral_height + cells_per_bitline)
}

// ---------------------------------------------------------------------------
// Energy ledger
// ---------------------------------------------------------------------------

/// Energy per access in picojoules, per (unit, segment, op). Placeholder
/// magnitudes chosen so PCM writes dominate PCM reads, which dominate DRAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTable {
    entries: [f64; 8],
}

fn energy_index(unit: UnitKind, segment: Segment, op: MemOp) -> usize {
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

impl Default for EnergyTable {
    fn default() -> Self {
        let mut entries = [0.0; 8];
        entries[energy_index(UnitKind::Dram, Segment::Near, MemOp::Read)] = 12.0;
        entries[energy_index(UnitKind::Dram, Segment::Near, MemOp::Write)] = 12.0;
        entries[energy_index(UnitKind::Dram, Segment::Far, MemOp::Read)] = 18.0;
        entries[energy_index(UnitKind::Dram, Segment::Far, MemOp::Write)] = 18.0;
        entries[energy_index(UnitKind::Pcm, Segment::Near, MemOp::Read)] = 30.0;
        entries[energy_index(UnitKind::Pcm, Segment::Near, MemOp::Write)] = 110.0;
        entries[energy_index(UnitKind::Pcm, Segment::Far, MemOp::Read)] = 48.0;
        entries[energy_index(UnitKind::Pcm, Segment::Far, MemOp::Write)] = 170.0;
        EnergyTable { entries }
    }
}

impl EnergyTable {
    pub fn get_pj(&self, unit: UnitKind, segment: Segment, op: MemOp) -> f64 {
        self.entries[energy_index(unit, segment, op)]
    }

    pub fn set_pj(&mut self, unit: UnitKind, segment: Segment, op: MemOp, pj: f64) {
        self.entries[energy_index(unit, segment, op)] = pj;
    }
}

/// Linear accumulation of demand and migration energy over counted events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub table: EnergyTable,
    demand_pj: f64,
    migration_pj: f64,
}

impl EnergyLedger {
    pub fn new(table: EnergyTable) -> Self {
        EnergyLedger { table, demand_pj: 0.0, migration_pj: 0.0 }
    }

    pub fn add_demand(&mut self, unit: UnitKind, segment: Segment, op: MemOp) {
        self.demand_pj += self.table.get_pj(unit, segment, op);
    }

    pub fn add_migration(&mut self, unit: UnitKind, segment: Segment, op: MemOp, count: u64) {
        self.migration_pj += count as f64 * self.table.get_pj(unit, segment, op);
    }

    pub fn demand_pj(&self) -> f64 {
        self.demand_pj
    }

    pub fn migration_pj(&self) -> f64 {
        self.migration_pj
    }

    pub fn total_pj(&self) -> f64 {
        self.demand_pj + self.migration_pj
    }
}
