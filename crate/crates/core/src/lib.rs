//! Trace-driven DRAM memory-controller simulation with run-time
//! address-mapping prediction and on-demand row migration.
//!
//! The crate is organized around the path a memory request takes:
//!
//! * [`trace`] parses, serializes and synthesizes request streams.
//! * [`addrmap`] translates physical addresses to DRAM coordinates
//!   (channel/rank/bank/row/column) under a configurable mapping scheme,
//!   in both directions.
//! * [`monitor`] watches the address stream and accumulates per-bit
//!   change counters over request windows.
//! * [`predictor`] turns a window signature into an estimated mapping
//!   scheme and runs the adopt/keep/rollback decision protocol.
//! * [`migration`] tracks which rows have moved under an adopted scheme
//!   (migration/swap bit tables), resolves every access to the location
//!   currently holding its row, and prices relocations under pluggable
//!   cost models.
//! * [`dramsim`] is the bank-level timing simulator (FR-FCFS scheduling,
//!   page hit/empty/conflict classification) that ties it all together.

pub mod addrmap;
pub mod dramsim;
pub mod migration;
pub mod monitor;
pub mod predictor;
pub mod stats;
pub mod trace;
