use tiersim::sim::{run_trace, SimParams};
use tiersim::policy::PolicyKind;
use tiersim::trace::{generate_phase_shift, generate_skewed, SyntheticSpec};

fn main() {
    let spec = SyntheticSpec {
        num_ftis: 12,
        phases: 6,
        accesses_per_phase: 20_000,
        pages_per_fti_per_phase: 16,
        phase_length_instructions: 1_000_000,
        ..Default::default()
    };
    let trace = generate_skewed(&spec).unwrap();
    let params = SimParams { policy: PolicyKind::Mneme, phase_length: 1_000_000, ..Default::default() };
    let r1 = run_trace(params.clone(), &trace).unwrap();
    let r2 = run_trace(params.clone(), &trace).unwrap();
    assert_eq!(r1.to_json().unwrap(), r2.to_json().unwrap());
    println!("determinism ok; {} bytes of report", r1.to_json().unwrap().len());
    println!("hit rates: {:?}", r1.fti_hit_rate_per_phase);

    // phase shift behavior
    let shift = generate_phase_shift(&spec, 0).unwrap();
    let r3 = run_trace(params, &shift).unwrap();
    println!("shift hit rates: {:?}", r3.fti_hit_rate_per_phase);

    // empty trace
    let r4 = run_trace(SimParams::default(), &[]).unwrap();
    println!("empty: cycles={} faults={} R={:?} phases={}",
        r4.total_cycles, r4.faults, r4.reliability.reliability_per_phase, r4.phases);
}
