//! Bank-level DRAM timing simulation with FR-FCFS scheduling.
//!
//! Each bank has one row buffer; accesses classify as page hits (row
//! already open), page empties (no open row) or page conflicts (a
//! different row is open and must be closed first). The scheduler prefers
//! row hits over older requests, reads over writes outside write-drain
//! mode, and issues at most one command per memory cycle.
//!
//! Three controllers are modeled: a fixed mapping scheme, the online
//! predictor with on-demand migration, and the offline variant that
//! profiles a whole trace first and replays it under the single estimated
//! scheme. Migration penalties are charged additively on top of the
//! simulated cycle count, so the timing effect of a mapping stays
//! separable from the cost of reaching it.

use std::collections::BinaryHeap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::{decompose_unchecked, DramCoordinate, DramGeometry, Field, MappingScheme};
use crate::migration::{
    table_storage, CostModel, MigrationError, MigrationState, RelocationEvent, RelocationStats,
};
use crate::monitor::{
    monitor_storage_bytes, BitChangeMonitor, BitChangeSignature, MonitorError, MonitorStorage,
    SignatureAccumulator, WindowConfig,
};
use crate::predictor::{
    estimate_mapping, improvement, Decision, DecisionEngine, DecisionRecord, PredictorConfig,
    PredictorError,
};
use crate::stats::geometric_mean;
use crate::trace::{MemoryRequest, Op};

/// Bank timing in memory cycles. The defaults are DDR3-1600-class values
/// for an 800 MHz bus; only relative mapping effects should be read out of
/// absolute cycle counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimingParams {
    pub t_cas: u64,
    pub t_rcd: u64,
    pub t_rp: u64,
    /// Data-burst cycles that keep the bank busy after the access latency.
    pub burst_cycles: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        Self {
            t_cas: 11,
            t_rcd: 11,
            t_rp: 11,
            burst_cycles: 4,
        }
    }
}

impl TimingParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.t_cas == 0 || self.t_rcd == 0 || self.t_rp == 0 {
            return Err(SimError::Config("timing parameters must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PageOutcome {
    Hit,
    Empty,
    Conflict,
}

/// Per-bank row-buffer state.
#[derive(Debug, Clone, Copy, Default)]
pub struct BankState {
    pub open_row: Option<u64>,
    pub busy_until: u64,
}

/// Classifies an access against the bank's open row and opens the new row.
/// Hit: `t_cas`; empty: `t_rcd + t_cas`; conflict: `t_rp + t_rcd + t_cas`.
pub fn classify(
    coord: &DramCoordinate,
    bank: &mut BankState,
    timing: &TimingParams,
) -> (PageOutcome, u64) {
    let (outcome, latency) = match bank.open_row {
        Some(row) if row == coord.row => (PageOutcome::Hit, timing.t_cas),
        Some(_) => (
            PageOutcome::Conflict,
            timing.t_rp + timing.t_rcd + timing.t_cas,
        ),
        None => (PageOutcome::Empty, timing.t_rcd + timing.t_cas),
    };
    bank.open_row = Some(coord.row);
    (outcome, latency)
}

/// FR-FCFS pick over a queue in age order: the oldest row hit whose bank is
/// free, else the oldest request whose bank is free.
pub fn schedule_next(
    queue: &[(usize, u64)], // (bank index, row), oldest first
    banks: &[BankState],
    now: u64,
) -> Option<usize> {
    let mut oldest_ready = None;
    for (i, &(bank_idx, row)) in queue.iter().enumerate() {
        let bank = &banks[bank_idx];
        if bank.busy_until > now {
            continue;
        }
        if bank.open_row == Some(row) {
            return Some(i);
        }
        if oldest_ready.is_none() {
            oldest_ready = Some(i);
        }
    }
    oldest_ready
}

/// Controller configurations for [`run`].
#[derive(Debug, Clone, PartialEq)]
pub enum Controller {
    /// One scheme for the whole run.
    Fixed(MappingScheme),
    /// Window monitoring, prediction, adoption with on-demand migration,
    /// and rollback.
    DreamOnline(DreamOnlineConfig),
    /// Replay under a scheme estimated by a profiling pass; migration is a
    /// reboot, whose penalty is reported separately.
    DreamOffline(DreamOfflineConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamOnlineConfig {
    pub base: MappingScheme,
    pub window: WindowConfig,
    pub predictor: PredictorConfig,
    /// Rollback relocations drained per scheduling slot.
    pub drain_per_slot: u64,
}

impl DreamOnlineConfig {
    pub fn new(base: MappingScheme) -> Self {
        Self {
            base,
            window: WindowConfig::default(),
            predictor: PredictorConfig::default(),
            drain_per_slot: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DreamOfflineConfig {
    /// The scheme estimated offline (see [`estimate_offline_scheme`]).
    pub scheme: MappingScheme,
    /// Bit-change improvement measured by the profiling pass.
    pub profile_improvement: f64,
}

/// Simulation-wide knobs beyond the controller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub geom: DramGeometry,
    pub timing: TimingParams,
    pub cost_model: CostModel,
    /// Outstanding requests allowed per thread.
    pub rob_window: u32,
    pub write_high_watermark: usize,
    pub write_low_watermark: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geom: DramGeometry::default(),
            timing: TimingParams::default(),
            cost_model: CostModel::default(),
            rob_window: 32,
            write_high_watermark: 32,
            write_low_watermark: 16,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        self.geom
            .validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        self.timing.validate()?;
        if self.rob_window == 0 {
            return Err(SimError::Config("rob_window must be >= 1".into()));
        }
        if self.write_low_watermark >= self.write_high_watermark {
            return Err(SimError::Config(
                "write_low_watermark must be below write_high_watermark".into(),
            ));
        }
        Ok(())
    }
}

/// Storage-overhead figures attached to every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageReport {
    pub mt_st_bits: u64,
    pub mt_st_bytes: u64,
    pub mt_st_fraction_of_capacity: f64,
    pub mt_st_note: String,
    pub monitor_all_bits: MonitorStorage,
    pub monitor_row_bank_bits_only: MonitorStorage,
    pub monitor_note: String,
}

impl StorageReport {
    pub fn for_geometry(geom: &DramGeometry, counter_bits: u32) -> Self {
        let tables = table_storage(geom);
        let row_bank_bits = geom.field_width(Field::Row)
            + geom.field_width(Field::Bank)
            + geom.field_width(Field::Rank)
            + geom.field_width(Field::Channel);
        Self {
            mt_st_bits: tables.bits,
            mt_st_bytes: tables.bytes,
            mt_st_fraction_of_capacity: tables.fraction_of_capacity,
            mt_st_note: format!(
                "2 tracking bits per {}-byte row = {:.3e} of capacity; as a percentage that is {:.3e}%, so a bare '3e-5' figure matches the fraction only when the percent sign is dropped",
                geom.row_bytes(),
                tables.fraction_of_capacity,
                tables.fraction_of_capacity * 100.0
            ),
            monitor_all_bits: monitor_storage_bytes(geom.address_bits(), counter_bits),
            monitor_row_bank_bits_only: monitor_storage_bytes(row_bank_bits, counter_bits),
            monitor_note: format!(
                "{}-bit counters over all {} address bits; the {}-bit row/bank-only variant is listed alongside because per-module byte budgets near 60 bytes only hold with offset and column bits excluded",
                counter_bits,
                geom.address_bits(),
                row_bank_bits
            ),
        }
    }
}

/// Everything a simulation run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub controller: String,
    pub scheme_id: String,
    pub requests: u64,
    pub reads: u64,
    pub writes: u64,
    pub page_hits: u64,
    pub page_empties: u64,
    pub page_conflicts: u64,
    pub total_mem_cycles: u64,
    /// `total_mem_cycles * cpu_to_mem_clock_ratio + migration_cpu_cycles`.
    pub total_cpu_cycles: u64,
    /// Processor-stall cycles charged for relocations (additive overhead).
    pub migration_cpu_cycles: u64,
    /// Wall-clock cost of the migration mechanism: bulk copies per mapping
    /// change and flash commits per write, depending on the cost scenario.
    pub migration_wall_seconds: f64,
    /// Reboot cost of the offline scenario, never mixed into cycle totals.
    pub reboot_penalty_seconds: f64,
    pub relocations: RelocationStats,
    pub adopted_schemes: Vec<String>,
    pub rollback_decisions: u64,
    /// Rows still away from their home location when the run ended.
    pub migrated_rows_at_end: u64,
    pub windows: Vec<BitChangeSignature>,
    pub decisions: Vec<DecisionRecord>,
    pub storage: StorageReport,
    pub normalized_exec_time: Option<f64>,
}

impl SimReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Migration(#[from] MigrationError),
}

impl SimError {
    /// True for internal invariant breaches as opposed to bad input.
    pub fn is_integrity_failure(&self) -> bool {
        matches!(
            self,
            SimError::Migration(MigrationError::IntegrityFailure(_))
        )
    }
}

/// Profiles the whole trace (the offline region of interest) and estimates
/// a scheme from the aggregate signature. Returns the scheme and its
/// bit-change improvement over `base`.
pub fn estimate_offline_scheme(
    trace: &[MemoryRequest],
    base: &MappingScheme,
    geom: &DramGeometry,
    window: &WindowConfig,
    predictor: &PredictorConfig,
) -> Result<(MappingScheme, f64), SimError> {
    if trace.is_empty() {
        return Err(SimError::Trace("no requests observed".into()));
    }
    window.validate()?;
    predictor.validate()?;
    let mut monitor = BitChangeMonitor::new(geom.address_bits(), window.counter_bits);
    let mut acc = SignatureAccumulator::new();
    for req in trace {
        monitor.observe(req.address);
        if monitor.requests_observed() == window.window_len {
            acc.add(&monitor.finalize_window()?);
        }
    }
    if monitor.requests_observed() > 0 {
        acc.add(&monitor.finalize_window()?);
    }
    let aggregate = acc.aggregate()?;
    let mut scheme = estimate_mapping(&aggregate, base, geom, predictor)?;
    scheme.scheme_id = "offline-estimate".into();
    let imp = improvement(&aggregate, base, &scheme)?;
    Ok((scheme, imp))
}

/// Runs the profiling pass and the replay pass in one call.
pub fn run_dream_offline(
    trace: &[MemoryRequest],
    base: &MappingScheme,
    cfg: &SimConfig,
    window: &WindowConfig,
    predictor: &PredictorConfig,
) -> Result<SimReport, SimError> {
    let (scheme, profile_improvement) =
        estimate_offline_scheme(trace, base, &cfg.geom, window, predictor)?;
    run(
        trace,
        &Controller::DreamOffline(DreamOfflineConfig {
            scheme,
            profile_improvement,
        }),
        cfg,
    )
}

/// Trace-driven simulation under the chosen controller.
pub fn run(
    trace: &[MemoryRequest],
    controller: &Controller,
    cfg: &SimConfig,
) -> Result<SimReport, SimError> {
    Ok(run_with_events(trace, controller, cfg)?.0)
}

struct Queued {
    trace_idx: usize,
    tid: usize,
    address: u64,
    op: Op,
}

struct ThreadStream {
    /// (arrival mem-cycle, trace index) in stream order.
    arrivals: Vec<(u64, usize)>,
    next: usize,
    outstanding: u32,
}

/// Like [`run`], but also returns the relocation event log for export.
pub fn run_with_events(
    trace: &[MemoryRequest],
    controller: &Controller,
    cfg: &SimConfig,
) -> Result<(SimReport, Vec<RelocationEvent>), SimError> {
    cfg.validate()?;
    if trace.is_empty() {
        return Err(SimError::Trace("no requests observed".into()));
    }
    let geom = cfg.geom;
    let capacity = geom.capacity();
    for (i, req) in trace.iter().enumerate() {
        if req.address >= capacity {
            return Err(SimError::Trace(format!(
                "request {i}: address {:#x} outside capacity {capacity:#x}",
                req.address
            )));
        }
    }

    let (controller_name, active_scheme) = match controller {
        Controller::Fixed(scheme) => (format!("fixed:{}", scheme.scheme_id), scheme.clone()),
        Controller::DreamOnline(online) => ("dream-online".to_string(), online.base.clone()),
        Controller::DreamOffline(offline) => ("dream-offline".to_string(), offline.scheme.clone()),
    };
    active_scheme
        .ensure_valid(&geom)
        .map_err(|e| SimError::Config(e.to_string()))?;

    let mut online_state: Option<OnlineState> = None;
    if let Controller::DreamOnline(online) = controller {
        online.window.validate()?;
        online.predictor.validate()?;
        if online.drain_per_slot == 0 {
            return Err(SimError::Config("drain_per_slot must be >= 1".into()));
        }
        online_state = Some(OnlineState {
            monitor: BitChangeMonitor::new(geom.address_bits(), online.window.counter_bits),
            engine: DecisionEngine::new(online.base.clone(), geom, online.predictor),
            migration: None,
            window_len: online.window.window_len,
            drain_per_slot: online.drain_per_slot,
        });
    }

    // Arrival times: cumulative issue gaps over the stream, converted to
    // memory cycles. Threads are densely re-indexed in first-appearance
    // order.
    let ratio = geom.cpu_to_mem_clock_ratio;
    let mut thread_ids: Vec<u32> = Vec::new();
    let mut threads: Vec<ThreadStream> = Vec::new();
    let mut dense_tid = vec![0usize; trace.len()];
    let mut cpu_time = 0u64;
    for (idx, req) in trace.iter().enumerate() {
        cpu_time += req.gap;
        let arrival_mem = cpu_time.div_ceil(ratio);
        let tid = match thread_ids.iter().position(|&t| t == req.thread_id) {
            Some(i) => i,
            None => {
                thread_ids.push(req.thread_id);
                threads.push(ThreadStream {
                    arrivals: Vec::new(),
                    next: 0,
                    outstanding: 0,
                });
                threads.len() - 1
            }
        };
        dense_tid[idx] = tid;
        threads[tid].arrivals.push((arrival_mem, idx));
    }

    let num_banks = (geom.channels * geom.ranks_per_channel * geom.banks_per_rank) as usize;
    let mut banks = vec![BankState::default(); num_banks];
    let bank_index = |c: &DramCoordinate| -> usize {
        ((c.channel * geom.ranks_per_channel + c.rank) * geom.banks_per_rank + c.bank) as usize
    };

    let mut read_q: Vec<Queued> = Vec::new();
    let mut write_q: Vec<Queued> = Vec::new();
    let mut completions: BinaryHeap<std::cmp::Reverse<(u64, usize)>> = BinaryHeap::new();

    let mut report = SimReport {
        controller: controller_name,
        scheme_id: active_scheme.scheme_id.clone(),
        requests: trace.len() as u64,
        reads: trace.iter().filter(|r| r.op == Op::Read).count() as u64,
        writes: trace.iter().filter(|r| r.op == Op::Write).count() as u64,
        page_hits: 0,
        page_empties: 0,
        page_conflicts: 0,
        total_mem_cycles: 0,
        total_cpu_cycles: 0,
        migration_cpu_cycles: 0,
        migration_wall_seconds: 0.0,
        reboot_penalty_seconds: 0.0,
        relocations: RelocationStats::default(),
        adopted_schemes: Vec::new(),
        rollback_decisions: 0,
        migrated_rows_at_end: 0,
        windows: Vec::new(),
        decisions: Vec::new(),
        storage: StorageReport::for_geometry(
            &geom,
            match controller {
                Controller::DreamOnline(o) => o.window.counter_bits,
                _ => WindowConfig::default().counter_bits,
            },
        ),
        normalized_exec_time: None,
    };
    let mut relocation_log: Vec<RelocationEvent> = Vec::new();

    if let Controller::DreamOffline(offline) = controller {
        report.reboot_penalty_seconds = cfg.cost_model.reboot_penalty_seconds();
        report.migration_wall_seconds += cfg.cost_model.mapping_change_wall_seconds(&geom);
        report.adopted_schemes.push(offline.scheme.scheme_id.clone());
        report.decisions.push(DecisionRecord {
            window_id: 0,
            action: "adopt".into(),
            improvement: offline.profile_improvement,
            streak: 0,
            scheme_id: offline.scheme.scheme_id.clone(),
        });
    }

    let mut now = 0u64;
    let mut admitted = 0usize;
    let mut completed = 0usize;
    let mut drain_writes = false;
    let mut last_completion = 0u64;

    while completed < trace.len() {
        // Retire finished requests first so their window slots free up.
        while let Some(&std::cmp::Reverse((t, tid))) = completions.peek() {
            if t > now {
                break;
            }
            completions.pop();
            threads[tid].outstanding -= 1;
            completed += 1;
        }
        if completed >= trace.len() {
            break;
        }

        // Admit arrivals within each thread's outstanding-request window.
        for tid in 0..threads.len() {
            loop {
                let thread = &threads[tid];
                if thread.next >= thread.arrivals.len()
                    || thread.outstanding >= cfg.rob_window
                    || thread.arrivals[thread.next].0 > now
                {
                    break;
                }
                let (_, trace_idx) = threads[tid].arrivals[threads[tid].next];
                threads[tid].next += 1;
                threads[tid].outstanding += 1;
                let req = &trace[trace_idx];
                if let Some(online) = online_state.as_mut() {
                    online.on_request(req.address, &geom, cfg, &mut report)?;
                }
                let q = Queued {
                    trace_idx,
                    tid,
                    address: req.address,
                    op: req.op,
                };
                match req.op {
                    Op::Read => read_q.push(q),
                    Op::Write => write_q.push(q),
                }
                admitted += 1;
            }
        }

        // Rollback drain: a bounded number of relocations per slot.
        if let Some(online) = online_state.as_mut() {
            let budget = online.drain_per_slot;
            online.drain(budget, &geom, cfg, &mut report, &mut relocation_log)?;
        }

        // Write-drain hysteresis.
        if write_q.len() > cfg.write_high_watermark {
            drain_writes = true;
        } else if write_q.len() < cfg.write_low_watermark {
            drain_writes = false;
        }

        let use_writes = if drain_writes {
            !write_q.is_empty()
        } else {
            read_q.is_empty() && !write_q.is_empty()
        };
        let queue: &mut Vec<Queued> = if use_writes { &mut write_q } else { &mut read_q };

        let mut issued = false;
        if !queue.is_empty() {
            let mut slots: Vec<(usize, u64)> = Vec::with_capacity(queue.len());
            for q in queue.iter() {
                let coord = match online_state.as_ref() {
                    Some(online) => online.peek(q.address, &active_scheme)?,
                    None => decompose_unchecked(q.address, &active_scheme),
                };
                slots.push((bank_index(&coord), coord.row));
            }
            if let Some(pick) = schedule_next(&slots, &banks, now) {
                let q = queue.remove(pick);
                let coord = match online_state.as_mut() {
                    Some(online) => online.resolve(
                        q.address,
                        &active_scheme,
                        &geom,
                        cfg,
                        &mut report,
                        &mut relocation_log,
                    )?,
                    None => decompose_unchecked(q.address, &active_scheme),
                };
                let bidx = bank_index(&coord);
                let (outcome, latency) = classify(&coord, &mut banks[bidx], &cfg.timing);
                match outcome {
                    PageOutcome::Hit => report.page_hits += 1,
                    PageOutcome::Empty => report.page_empties += 1,
                    PageOutcome::Conflict => report.page_conflicts += 1,
                }
                if q.op == Op::Write {
                    report.migration_wall_seconds += cfg.cost_model.write_commit_wall_seconds();
                }
                let done = now + latency;
                banks[bidx].busy_until = done + cfg.timing.burst_cycles;
                last_completion = last_completion.max(done);
                completions.push(std::cmp::Reverse((done, q.tid)));
                let _ = q.trace_idx;
                issued = true;
            }
        }

        if issued {
            now += 1;
            continue;
        }

        // Nothing issuable: jump to the next interesting cycle.
        let mut next = u64::MAX;
        if let Some(&std::cmp::Reverse((t, _))) = completions.peek() {
            next = next.min(t);
        }
        if admitted < trace.len() {
            for thread in &threads {
                if thread.next < thread.arrivals.len() && thread.outstanding < cfg.rob_window {
                    next = next.min(thread.arrivals[thread.next].0);
                }
            }
        }
        if !read_q.is_empty() || !write_q.is_empty() {
            for bank in &banks {
                if bank.busy_until > now {
                    next = next.min(bank.busy_until);
                }
            }
        }
        if online_state.as_ref().is_some_and(|o| o.is_draining()) {
            next = next.min(now + 1);
        }
        if next == u64::MAX {
            return Err(SimError::Trace(format!(
                "simulation stalled with requests pending (now={now} admitted={admitted} completed={completed} rq={} wq={} completions={})",
                read_q.len(),
                write_q.len(),
                completions.len(),
            )));
        }
        now = next.max(now + 1);
    }

    // The run is over; finish any outstanding rollback without advancing
    // the clock (relocation charges are additive either way).
    if let Some(online) = online_state.as_mut() {
        while online.is_draining() {
            online.drain(u64::MAX, &geom, cfg, &mut report, &mut relocation_log)?;
        }
    }

    report.total_mem_cycles = last_completion;
    report.total_cpu_cycles = last_completion * ratio + report.migration_cpu_cycles;
    if let Some(online) = online_state {
        if let Some(state) = online.migration {
            report.migrated_rows_at_end = state.migrated_rows();
            merge_stats(&mut report.relocations, &state.stats());
        }
    }
    Ok((report, relocation_log))
}

fn merge_stats(total: &mut RelocationStats, add: &RelocationStats) {
    total.attempted += add.attempted;
    total.inter_bank += add.inter_bank;
    total.intra_bank_skipped += add.intra_bank_skipped;
    total.swaps += add.swaps;
    total.rollback_moves += add.rollback_moves;
}

struct OnlineState {
    monitor: BitChangeMonitor,
    engine: DecisionEngine,
    migration: Option<MigrationState>,
    window_len: u64,
    drain_per_slot: u64,
}

impl OnlineState {
    fn is_draining(&self) -> bool {
        self.migration.as_ref().is_some_and(|m| m.is_draining())
    }

    fn peek(&self, addr: u64, base: &MappingScheme) -> Result<DramCoordinate, SimError> {
        match &self.migration {
            Some(state) => Ok(state.peek(addr)?),
            None => Ok(decompose_unchecked(addr, base)),
        }
    }

    fn resolve(
        &mut self,
        addr: u64,
        base: &MappingScheme,
        geom: &DramGeometry,
        cfg: &SimConfig,
        report: &mut SimReport,
        log: &mut Vec<RelocationEvent>,
    ) -> Result<DramCoordinate, SimError> {
        match &mut self.migration {
            Some(state) => {
                let (coord, events) = state.resolve(addr)?;
                for e in &events {
                    report.migration_cpu_cycles += cfg.cost_model.relocation_cpu_cycles(e, geom);
                }
                log.extend(events);
                Ok(coord)
            }
            None => Ok(decompose_unchecked(addr, base)),
        }
    }

    /// Feeds the monitor; at window boundaries runs the decision protocol.
    fn on_request(
        &mut self,
        addr: u64,
        geom: &DramGeometry,
        cfg: &SimConfig,
        report: &mut SimReport,
    ) -> Result<(), SimError> {
        self.monitor.observe(addr);
        if self.monitor.requests_observed() < self.window_len {
            return Ok(());
        }
        let sig = self.monitor.finalize_window()?;
        let decision = self.engine.step(&sig)?;
        let record = DecisionRecord {
            window_id: sig.window_id,
            action: decision.action_name().into(),
            improvement: decision.improvement(),
            streak: decision.streak(),
            scheme_id: match &decision {
                Decision::Adopt { scheme, .. } => scheme.scheme_id.clone(),
                _ => self
                    .engine
                    .active_scheme()
                    .unwrap_or(self.engine.base())
                    .scheme_id
                    .clone(),
            },
        };
        report.windows.push(sig);
        report.decisions.push(record);
        match decision {
            Decision::Keep { .. } => {}
            Decision::Adopt { scheme, .. } => {
                let state = MigrationState::new(self.engine.base().clone(), scheme.clone(), *geom)
                    .map_err(|e| {
                        SimError::Config(format!("estimated scheme cannot be adopted: {e}"))
                    })?;
                report.adopted_schemes.push(scheme.scheme_id.clone());
                report.migration_wall_seconds += cfg.cost_model.mapping_change_wall_seconds(geom);
                report.reboot_penalty_seconds += cfg.cost_model.reboot_penalty_seconds();
                self.migration = Some(state);
            }
            Decision::Rollback { .. } => {
                report.rollback_decisions += 1;
                report.migration_wall_seconds += cfg.cost_model.mapping_change_wall_seconds(geom);
                if let Some(state) = self.migration.as_mut() {
                    state.begin_rollback();
                }
            }
        }
        Ok(())
    }

    fn drain(
        &mut self,
        budget: u64,
        geom: &DramGeometry,
        cfg: &SimConfig,
        report: &mut SimReport,
        log: &mut Vec<RelocationEvent>,
    ) -> Result<(), SimError> {
        let Some(state) = self.migration.as_mut() else {
            return Ok(());
        };
        if !state.is_draining() {
            return Ok(());
        }
        let events = state.rollback_step(budget);
        for e in &events {
            report.migration_cpu_cycles += cfg.cost_model.relocation_cpu_cycles(e, geom);
        }
        log.extend(events);
        if state.rollback_complete() {
            merge_stats(&mut report.relocations, &state.stats());
            self.migration = None;
            self.engine.rollback_finished();
        }
        Ok(())
    }
}

/// One named run in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub name: String,
    pub total_cpu_cycles: u64,
    pub normalized_exec_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
    pub gmean_normalized: f64,
}

/// Normalizes named cycle counts against the run called `baseline` and
/// appends the geometric mean over all normalized values.
pub fn compare(runs: &[(String, u64)], baseline: &str) -> Result<Comparison, SimError> {
    let base = runs
        .iter()
        .find(|(name, _)| name == baseline)
        .ok_or_else(|| SimError::Config(format!("baseline run '{baseline}' missing")))?;
    if base.1 == 0 {
        return Err(SimError::Config("baseline cycle count is zero".into()));
    }
    let rows: Vec<ComparisonRow> = runs
        .iter()
        .map(|(name, cycles)| ComparisonRow {
            name: name.clone(),
            total_cpu_cycles: *cycles,
            normalized_exec_time: *cycles as f64 / base.1 as f64,
        })
        .collect();
    let gmean = geometric_mean(
        &rows
            .iter()
            .map(|r| r.normalized_exec_time)
            .collect::<Vec<_>>(),
    )
    .ok_or_else(|| SimError::Config("normalized times must be positive".into()))?;
    Ok(Comparison {
        baseline: baseline.to_string(),
        rows,
        gmean_normalized: gmean,
    })
}

/// CSV form of a comparison: `name,total_cpu_cycles,normalized_exec_time`
/// with a trailing GMEAN row.
pub fn write_comparison_csv<W: Write + ?Sized>(out: &mut W, cmp: &Comparison) -> std::io::Result<()> {
    writeln!(out, "name,total_cpu_cycles,normalized_exec_time")?;
    for row in &cmp.rows {
        writeln!(
            out,
            "{},{},{}",
            row.name, row.total_cpu_cycles, row.normalized_exec_time
        )?;
    }
    writeln!(out, "GMEAN,,{}", cmp.gmean_normalized)
}
