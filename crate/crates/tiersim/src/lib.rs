//! Trace-driven simulator for a DRAM-PCM hybrid main memory in which every
//! bitline is split by an isolation transistor into a fast, low-voltage near
//! segment and a slower far segment.
//!
//! The crate models the full path from a post-cache memory access trace down
//! to per-bank command timing:
//!
//! * [`geometry`] — memory organization, physical address bit-slicing,
//!   segment decoding, and the timing/bias lookup tables.
//! * [`predictor`] — first-touch-instruction (FTI) access-intensity
//!   prediction: two Bloom filters plus the Access Intensity Record (AIR).
//! * [`policy`] — OS-level page placement under four policies (`baseline`,
//!   `nimble`, `tldram`, `mneme`), phase management, and migration planning.
//! * [`controller`] — per-channel memory controllers with FR-FCFS
//!   scheduling, row-buffer state, and intra-bank vs cross-unit migration.
//! * [`reliability`] — endurance lifetime, bias-voltage aging, and area
//!   overhead models, plus a per-event energy ledger.
//! * [`trace`] — trace file formats and synthetic trace generators.
//! * [`report`] — run reports, reconciliation audits, and cross-run
//!   comparison.
//! * [`sim`] — the deterministic discrete-event engine tying it together.
//!
//! The `examples/` directory has one runnable example per capability; the
//! `tiersim` binary exposes the same functionality as subcommands.

pub mod cli;
pub mod config;
pub mod controller;
pub mod geometry;
pub mod policy;
pub mod predictor;
pub mod reliability;
pub mod report;
pub mod sim;
pub mod trace;
