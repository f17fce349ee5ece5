//! On-demand row migration between two address-mapping schemes.
//!
//! While an estimated scheme (EAMS) is active, every row lives in exactly
//! one of three places: its home location under the predefined scheme
//! (PAMS), its destination under the EAMS, or wherever a swap parked it.
//! Two bit tables indexed by row location track which:
//!
//! * `mt[L]` — the row whose PAMS home is `L` has migrated to its EAMS
//!   destination.
//! * `st[L]` — the row whose PAMS home is `L` was displaced by another
//!   row migrating into `L`; it is found by walking reverse translations
//!   (`L -> eams_preimage(L) -> ...`) until the swap bit of the pointed
//!   location is clear.
//!
//! A row is migrated only when accessed, so relocation happens gradually
//! and on demand. When the destination is occupied the two rows swap,
//! which caps every relocation at a single exchange instead of a chain of
//! copies. Migrations that stay inside one bank are counted but skipped:
//! they cannot reduce page conflicts, so they are not worth their cost.
//!
//! Rollback drains the recorded relocations last-in-first-out, so every
//! intermediate state is a valid earlier state of the forward run and
//! accesses interleaved with the drain still resolve correctly.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::{
    compose_unchecked, decompose_unchecked, DramCoordinate, DramGeometry, MappingScheme,
};

/// Memory cycles to transfer one row between banks over the internal bus.
pub const ROW_TRANSFER_MEM_CYCLES: u64 = 64;
/// Memory cycles for a relocation that must also preserve the destination
/// row (transfer each way).
pub const SWAP_MEM_CYCLES: u64 = 128;

/// A row slot in the DRAM hierarchy (coordinate minus column/offset).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowLocation {
    pub channel: u64,
    pub rank: u64,
    pub bank: u64,
    pub row: u64,
}

impl RowLocation {
    pub fn of(coord: &DramCoordinate) -> Self {
        Self {
            channel: coord.channel,
            rank: coord.rank,
            bank: coord.bank,
            row: coord.row,
        }
    }

    pub fn index(&self, geom: &DramGeometry) -> usize {
        (((self.channel * geom.ranks_per_channel + self.rank) * geom.banks_per_rank + self.bank)
            * geom.rows_per_bank
            + self.row) as usize
    }

    pub fn same_bank(&self, other: &RowLocation) -> bool {
        self.channel == other.channel && self.rank == other.rank && self.bank == other.bank
    }

    fn coordinate(&self) -> DramCoordinate {
        DramCoordinate {
            channel: self.channel,
            rank: self.rank,
            bank: self.bank,
            row: self.row,
            column: 0,
            offset: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RelocationKind {
    /// One-way row transfer.
    Migrate,
    /// Exchange of two rows.
    Swap,
    /// Exchange performed while draining a rollback.
    RollbackMove,
}

impl RelocationKind {
    pub fn name(&self) -> &'static str {
        match self {
            RelocationKind::Migrate => "migrate",
            RelocationKind::Swap => "swap",
            RelocationKind::RollbackMove => "rollback",
        }
    }
}

/// One relocation, executed or skipped. Intra-bank relocations are recorded
/// with zero cost: they are counted for statistics but never performed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationEvent {
    pub kind: RelocationKind,
    pub src: RowLocation,
    pub dst: RowLocation,
    pub inter_bank: bool,
    pub mem_cycles: u64,
}

impl RelocationEvent {
    pub fn migrate(src: RowLocation, dst: RowLocation) -> Self {
        let inter_bank = !src.same_bank(&dst);
        Self {
            kind: RelocationKind::Migrate,
            src,
            dst,
            inter_bank,
            mem_cycles: if inter_bank { ROW_TRANSFER_MEM_CYCLES } else { 0 },
        }
    }

    pub fn swap(src: RowLocation, dst: RowLocation) -> Self {
        let inter_bank = !src.same_bank(&dst);
        Self {
            kind: RelocationKind::Swap,
            src,
            dst,
            inter_bank,
            mem_cycles: if inter_bank { SWAP_MEM_CYCLES } else { 0 },
        }
    }

    fn rollback(src: RowLocation, dst: RowLocation) -> Self {
        let inter_bank = !src.same_bank(&dst);
        Self {
            kind: RelocationKind::RollbackMove,
            src,
            dst,
            inter_bank,
            mem_cycles: if inter_bank { SWAP_MEM_CYCLES } else { 0 },
        }
    }
}

/// Writes the relocation log CSV:
/// `event_seq,kind,src_bank,src_row,dst_bank,dst_row,inter_bank,mem_cycles`.
pub fn write_relocation_csv<W: Write + ?Sized>(
    out: &mut W,
    events: &[RelocationEvent],
) -> std::io::Result<()> {
    writeln!(
        out,
        "event_seq,kind,src_bank,src_row,dst_bank,dst_row,inter_bank,mem_cycles"
    )?;
    for (seq, e) in events.iter().enumerate() {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            seq,
            e.kind.name(),
            e.src.bank,
            e.src.row,
            e.dst.bank,
            e.dst.row,
            e.inter_bank,
            e.mem_cycles
        )?;
    }
    Ok(())
}

/// Migration cost scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostScenario {
    /// Rows move inside the DRAM; the processor stalls for the transfer.
    InDram,
    /// The mapping only changes across a reboot; the penalty is reported
    /// separately and defaults to zero.
    OfflineReboot,
    /// Flash-backed DIMM bulk copy: one fixed charge per mapping change
    /// (capacity out plus capacity back at the module bandwidth), no
    /// per-relocation charge.
    NvdimmBulk,
    /// Every DRAM write is also committed to flash; data returns on demand,
    /// so neither relocations nor mapping changes carry a bulk charge.
    NanoCommit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostModel {
    pub scenario: CostScenario,
    /// Flash module bandwidth for the bulk-copy scenario.
    pub nvdimm_bandwidth_bytes_per_sec: f64,
    /// Flash commit latency per write.
    pub nanocommit_write_latency_ns: f64,
    /// Reboot cost for the offline scenario; kept out of cycle totals.
    pub reboot_penalty_seconds: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            scenario: CostScenario::InDram,
            nvdimm_bandwidth_bytes_per_sec: (4u64 << 30) as f64,
            nanocommit_write_latency_ns: 48.0,
            reboot_penalty_seconds: 0.0,
        }
    }
}

impl CostModel {
    pub fn in_dram() -> Self {
        Self::default()
    }

    pub fn with_scenario(scenario: CostScenario) -> Self {
        Self {
            scenario,
            ..Self::default()
        }
    }

    /// CPU-cycle stall charged for one relocation event.
    pub fn relocation_cpu_cycles(&self, event: &RelocationEvent, geom: &DramGeometry) -> u64 {
        match self.scenario {
            CostScenario::InDram => event.mem_cycles * geom.cpu_to_mem_clock_ratio,
            _ => 0,
        }
    }

    /// Wall-clock charge applied once per mapping change.
    pub fn mapping_change_wall_seconds(&self, geom: &DramGeometry) -> f64 {
        match self.scenario {
            CostScenario::NvdimmBulk => {
                2.0 * geom.capacity() as f64 / self.nvdimm_bandwidth_bytes_per_sec
            }
            _ => 0.0,
        }
    }

    /// Wall-clock charge per serviced write request.
    pub fn write_commit_wall_seconds(&self) -> f64 {
        match self.scenario {
            CostScenario::NanoCommit => self.nanocommit_write_latency_ns / 1e9,
            _ => 0.0,
        }
    }

    /// Reboot cost, reported separately from all timing totals.
    pub fn reboot_penalty_seconds(&self) -> f64 {
        match self.scenario {
            CostScenario::OfflineReboot => self.reboot_penalty_seconds,
            _ => 0.0,
        }
    }
}

/// MT/ST footprint for a geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableStorage {
    pub bits: u64,
    pub bytes: u64,
    /// Table bits over capacity bits: 2 bits per row of `row_bytes`.
    pub fraction_of_capacity: f64,
}

pub fn table_storage(geom: &DramGeometry) -> TableStorage {
    let bits = 2 * geom.row_locations();
    TableStorage {
        bits,
        bytes: bits.div_ceil(8),
        fraction_of_capacity: 2.0 / (geom.row_bytes() as f64 * 8.0),
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MigrationError {
    #[error("schemes are not migration-compatible: {0}")]
    IncompatibleSchemes(String),
    #[error("migration state integrity failure: {0}")]
    IntegrityFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum UndoRecord {
    /// An executed exchange: `a` was the migration source, `b` the
    /// destination, `home` the migrated row's PAMS location.
    Swap { a: RowLocation, b: RowLocation, home: RowLocation },
    /// A migration bit set without data movement (row already in place).
    MarkOnly { home: RowLocation },
}

/// Relocation statistics kept by the migration state.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelocationStats {
    /// Relocations considered (executed or skipped), one per row.
    pub attempted: u64,
    pub inter_bank: u64,
    pub intra_bank_skipped: u64,
    pub swaps: u64,
    pub rollback_moves: u64,
}

/// Dual-mapping state: the migration/swap tables plus the shadow residency
/// map used for integrity checking.
#[derive(Debug, Clone)]
pub struct MigrationState {
    geom: DramGeometry,
    pams: MappingScheme,
    eams: MappingScheme,
    mt: Vec<bool>,
    st: Vec<bool>,
    /// Shadow map: location index -> home-location index of the resident
    /// row. Not part of the modeled hardware; resolve() never reads it to
    /// find a row, only to verify what the tables produced.
    residency: Vec<usize>,
    /// Rows whose skipped intra-bank relocation was already counted.
    intra_counted: Vec<bool>,
    undo_log: Vec<UndoRecord>,
    draining: bool,
    migrated_rows: u64,
    stats: RelocationStats,
}

impl MigrationState {
    /// Activates `eams` against `pams`. Both schemes must agree on which
    /// address bits select the row location (column and offset bits stay
    /// put), otherwise rows cannot be migrated whole.
    pub fn new(
        pams: MappingScheme,
        eams: MappingScheme,
        geom: DramGeometry,
    ) -> Result<Self, MigrationError> {
        for (name, scheme) in [("pams", &pams), ("eams", &eams)] {
            if let Some(v) = scheme.validate(&geom).into_iter().next() {
                return Err(MigrationError::IncompatibleSchemes(format!(
                    "{name} '{}' invalid: {v}",
                    scheme.scheme_id
                )));
            }
        }
        if pams.location_bits() != eams.location_bits() {
            return Err(MigrationError::IncompatibleSchemes(format!(
                "'{}' and '{}' assign different address bits to row locations",
                pams.scheme_id, eams.scheme_id
            )));
        }
        let n = geom.row_locations() as usize;
        Ok(Self {
            geom,
            pams,
            eams,
            mt: vec![false; n],
            st: vec![false; n],
            residency: (0..n).collect(),
            intra_counted: vec![false; n],
            undo_log: Vec::new(),
            draining: false,
            migrated_rows: 0,
            stats: RelocationStats::default(),
        })
    }

    pub fn eams(&self) -> &MappingScheme {
        &self.eams
    }

    pub fn stats(&self) -> RelocationStats {
        self.stats
    }

    /// Rows currently marked migrated.
    pub fn migrated_rows(&self) -> u64 {
        self.migrated_rows
    }

    pub fn is_draining(&self) -> bool {
        self.draining
    }

    /// True when every migration/swap bit is clear.
    pub fn tables_clear(&self) -> bool {
        self.undo_log.is_empty()
            && self.mt.iter().all(|&b| !b)
            && self.st.iter().all(|&b| !b)
    }

    fn location_of(&self, coord: &DramCoordinate) -> RowLocation {
        RowLocation::of(coord)
    }

    /// Home location of the row that the EAMS sends to `loc` (reverse
    /// translation: compose under EAMS, decompose under PAMS).
    fn eams_preimage(&self, loc: RowLocation) -> RowLocation {
        let addr = compose_unchecked(&loc.coordinate(), &self.eams);
        RowLocation::of(&decompose_unchecked(addr, &self.pams))
    }

    /// Table-driven dispatch: the coordinate to service, the row location
    /// it lives at, and whether an onward migration is due.
    fn locate(&self, addr: u64) -> Result<(DramCoordinate, RowLocation, bool), MigrationError> {
        let pams_coord = decompose_unchecked(addr, &self.pams);
        let eams_coord = decompose_unchecked(addr, &self.eams);
        let home = self.location_of(&pams_coord);
        let home_idx = home.index(&self.geom);

        if self.mt[home_idx] {
            // Branch (b): the row has migrated; the EAMS services it.
            Ok((eams_coord, self.location_of(&eams_coord), false))
        } else if self.st[home_idx] {
            // Branch (c): the row was displaced; walk reverse translations
            // until the pointed location's swap bit is clear.
            let mut probe = self.eams_preimage(home);
            let mut steps = 1u64;
            while self.st[probe.index(&self.geom)] {
                probe = self.eams_preimage(probe);
                steps += 1;
                if steps > self.geom.row_locations() {
                    return Err(MigrationError::IntegrityFailure(format!(
                        "swap-chain walk from {home:?} exceeded {} steps",
                        self.geom.row_locations()
                    )));
                }
            }
            // A displaced row keeps its home's internal column layout.
            let coord = DramCoordinate {
                channel: probe.channel,
                rank: probe.rank,
                bank: probe.bank,
                row: probe.row,
                column: pams_coord.column,
                offset: pams_coord.offset,
            };
            Ok((coord, probe, true))
        } else {
            // Branch (a): the row is home; service, then migrate it.
            Ok((pams_coord, home, true))
        }
    }

    /// The coordinate an access would be serviced at right now, with no
    /// side effects. Schedulers use this to test row hits.
    pub fn peek(&self, addr: u64) -> Result<DramCoordinate, MigrationError> {
        Ok(self.locate(addr)?.0)
    }

    /// Resolves a physical address to the coordinate that must be serviced,
    /// performing the on-demand migration of the touched row. Returned
    /// events carry the executed (or counted-but-skipped) relocations.
    pub fn resolve(
        &mut self,
        addr: u64,
    ) -> Result<(DramCoordinate, Vec<RelocationEvent>), MigrationError> {
        let (service_coord, current, migrate_after) = self.locate(addr)?;
        let home = self.location_of(&decompose_unchecked(addr, &self.pams));
        let home_idx = home.index(&self.geom);

        // The tables must point at the location actually holding the row.
        let resident = self.residency[current.index(&self.geom)];
        if resident != home_idx {
            return Err(MigrationError::IntegrityFailure(format!(
                "tables sent row {home_idx} to {current:?}, which holds row {resident}"
            )));
        }

        let mut events = Vec::new();
        if migrate_after {
            let dest = self.location_of(&decompose_unchecked(addr, &self.eams));
            self.migrate(home, current, dest, &mut events)?;
        }
        Ok((service_coord, events))
    }

    /// Migrates the row homed at `home`, currently residing at `from`, to
    /// its EAMS destination `dest`. No-op while a rollback drains.
    fn migrate(
        &mut self,
        home: RowLocation,
        from: RowLocation,
        dest: RowLocation,
        events: &mut Vec<RelocationEvent>,
    ) -> Result<(), MigrationError> {
        if self.draining {
            return Ok(());
        }
        let home_idx = home.index(&self.geom);
        if dest == from {
            // Already in place (self-mapping row, or a displaced row that
            // happens to sit at its own destination): mark, move nothing.
            self.mt[home_idx] = true;
            self.migrated_rows += 1;
            self.undo_log.push(UndoRecord::MarkOnly { home });
            return Ok(());
        }
        if from.same_bank(&dest) {
            // Intra-bank relocation cannot reduce page conflicts: count it
            // once per row, leave the bits alone, move nothing.
            if !self.intra_counted[home_idx] {
                self.intra_counted[home_idx] = true;
                self.stats.attempted += 1;
                self.stats.intra_bank_skipped += 1;
                events.push(RelocationEvent::swap(from, dest));
            }
            return Ok(());
        }

        let from_idx = from.index(&self.geom);
        let dest_idx = dest.index(&self.geom);
        if self.st[dest_idx] {
            return Err(MigrationError::IntegrityFailure(format!(
                "destination {dest:?} already swap-marked before migration of row {home_idx}"
            )));
        }
        self.residency.swap(from_idx, dest_idx);
        self.mt[home_idx] = true;
        self.st[dest_idx] = true;
        self.migrated_rows += 1;
        self.undo_log.push(UndoRecord::Swap { a: from, b: dest, home });
        self.stats.attempted += 1;
        self.stats.inter_bank += 1;
        self.stats.swaps += 1;
        events.push(RelocationEvent::swap(from, dest));
        Ok(())
    }

    /// Starts draining migrated rows back to their PAMS homes. Accesses keep
    /// resolving against the tables while the drain runs; no new migrations
    /// start.
    pub fn begin_rollback(&mut self) {
        self.draining = true;
    }

    /// True once the drain has returned every row home.
    pub fn rollback_complete(&self) -> bool {
        self.draining && self.undo_log.is_empty()
    }

    /// Undoes up to `budget` recorded exchanges, newest first, so each
    /// intermediate state is exactly an earlier state of the forward run.
    /// Mark-only records cost nothing and drain for free.
    pub fn rollback_step(&mut self, budget: u64) -> Vec<RelocationEvent> {
        assert!(self.draining, "rollback_step outside an active rollback");
        let mut events = Vec::new();
        let mut moved = 0u64;
        while moved < budget {
            match self.undo_log.pop() {
                None => break,
                Some(UndoRecord::MarkOnly { home }) => {
                    self.mt[home.index(&self.geom)] = false;
                    self.migrated_rows -= 1;
                }
                Some(UndoRecord::Swap { a, b, home }) => {
                    let a_idx = a.index(&self.geom);
                    let b_idx = b.index(&self.geom);
                    self.residency.swap(a_idx, b_idx);
                    self.mt[home.index(&self.geom)] = false;
                    self.st[b_idx] = false;
                    self.migrated_rows -= 1;
                    self.stats.rollback_moves += 1;
                    events.push(RelocationEvent::rollback(b, a));
                    moved += 1;
                }
            }
        }
        if self.undo_log.is_empty() {
            debug_assert!(self.tables_clear());
        }
        events
    }

    /// Test/reporting access to the shadow residency map.
    pub fn residency(&self) -> &[usize] {
        &self.residency
    }
}
