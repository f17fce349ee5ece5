//! Mapping prediction from bit-change signatures.
//!
//! Row switches inside a bank are what page conflicts are made of, so the
//! estimator's whole job is to keep high-churn address bits out of the row
//! field: pool bits are sorted by change rate, the quietest ones become the
//! row, the next band fills bank/rank/channel, and (only when column bits
//! are not frozen) the loudest spill into the column field. A small decision
//! machine compares the estimate against the predefined scheme window by
//! window and adopts it after enough consecutive wins, rolling back once an
//! adopted scheme stops paying for itself.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::{DramGeometry, Field, FieldBits, MappingScheme};
use crate::monitor::BitChangeSignature;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredictorConfig {
    /// Minimum fractional row-score improvement a candidate must show.
    pub improvement_threshold: f64,
    /// Consecutive qualifying windows required before adoption.
    pub consistency_windows: u32,
    /// Keep column bits where the base scheme put them, so migration stays
    /// row-granular.
    pub freeze_column_bits: bool,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            improvement_threshold: 0.07,
            consistency_windows: 3,
            freeze_column_bits: true,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), PredictorError> {
        if !(self.improvement_threshold > 0.0 && self.improvement_threshold < 1.0) {
            return Err(PredictorError::BadConfig(format!(
                "improvement_threshold must be in (0,1), got {}",
                self.improvement_threshold
            )));
        }
        if self.consistency_windows == 0 {
            return Err(PredictorError::BadConfig(
                "consistency_windows must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PredictorError {
    #[error("signature covers {have} bits but scheme uses bit {bit}")]
    WidthMismatch { have: u32, bit: u32 },
    #[error("invalid predictor config: {0}")]
    BadConfig(String),
}

/// Row-field change score: the sum of row-bit counters normalized by
/// `(requests - 1) * row_width`. Lower is better. XOR bank permutations do
/// not affect it; they only relabel banks.
pub fn score(sig: &BitChangeSignature, scheme: &MappingScheme) -> Result<f64, PredictorError> {
    let row_bits = &scheme.fields.row;
    for &bit in row_bits {
        if bit >= sig.address_bits() {
            return Err(PredictorError::WidthMismatch {
                have: sig.address_bits(),
                bit,
            });
        }
    }
    if sig.requests_observed < 2 || row_bits.is_empty() {
        return Ok(0.0);
    }
    let sum: u64 = row_bits.iter().map(|&b| sig.counters[b as usize]).sum();
    Ok(sum as f64 / ((sig.requests_observed - 1) as f64 * row_bits.len() as f64))
}

fn base_field_of(base: &MappingScheme, bit: u32) -> Option<Field> {
    Field::ALL
        .into_iter()
        .find(|&f| base.fields.get(f).contains(&bit))
}

// Assignment order: quietest bits fill the row, then bank, rank, channel;
// column last (and only when unfrozen). Also the tie-break order, so a
// uniform signature reproduces the base scheme exactly.
const FILL_ORDER: [Field; 5] = [
    Field::Row,
    Field::Bank,
    Field::Rank,
    Field::Channel,
    Field::Column,
];

fn fill_rank(field: Option<Field>) -> u32 {
    match field {
        Some(f) => FILL_ORDER.iter().position(|&g| g == f).unwrap_or(5) as u32,
        None => 5,
    }
}

/// Estimates a mapping scheme from a window signature.
///
/// Ties on change counts prefer a bit's assignment in the base scheme, then
/// the lower bit index, keeping the estimate deterministic and equal to the
/// base scheme on an uninformative signature. The base scheme's XOR flavor
/// is preserved: when present, the sources are re-derived as the lowest bits
/// of the new row field.
pub fn estimate_mapping(
    sig: &BitChangeSignature,
    base: &MappingScheme,
    geom: &DramGeometry,
    cfg: &PredictorConfig,
) -> Result<MappingScheme, PredictorError> {
    let mut pool: Vec<u32> = Vec::new();
    for field in [Field::Channel, Field::Rank, Field::Bank, Field::Row] {
        pool.extend_from_slice(base.fields.get(field));
    }
    if !cfg.freeze_column_bits {
        pool.extend_from_slice(base.fields.get(Field::Column));
    }
    for &bit in &pool {
        if bit >= sig.address_bits() {
            return Err(PredictorError::WidthMismatch {
                have: sig.address_bits(),
                bit,
            });
        }
    }

    // Counter values share one denominator, so sorting raw counts sorts
    // rates without any float comparison.
    pool.sort_by_key(|&bit| {
        (
            sig.counters[bit as usize],
            fill_rank(base_field_of(base, bit)),
            bit,
        )
    });

    let mut fields = FieldBits::default();
    fields.offset = base.fields.offset.clone();
    if cfg.freeze_column_bits {
        fields.column = base.fields.column.clone();
    }
    let mut cursor = 0usize;
    for field in FILL_ORDER {
        if field == Field::Column && cfg.freeze_column_bits {
            continue;
        }
        let width = geom.field_width(field) as usize;
        let mut bits: Vec<u32> = pool[cursor..cursor + width].to_vec();
        cursor += width;
        bits.sort_unstable();
        *fields.get_mut(field) = bits;
    }
    debug_assert_eq!(cursor, pool.len());

    let xor_bank_sources = base.xor_bank_sources.as_ref().map(|src| {
        let take = src.len().min(fields.row.len());
        fields.row[..take].to_vec()
    });

    Ok(MappingScheme {
        scheme_id: format!("estimated-w{}", sig.window_id),
        fields,
        xor_bank_sources,
    })
}

/// Fractional row-score improvement of `candidate` over `base` on `sig`;
/// zero when the base is already silent.
pub fn improvement(
    sig: &BitChangeSignature,
    base: &MappingScheme,
    candidate: &MappingScheme,
) -> Result<f64, PredictorError> {
    let base_score = score(sig, base)?;
    let cand_score = score(sig, candidate)?;
    if base_score == 0.0 {
        return Ok(0.0);
    }
    Ok((base_score - cand_score) / base_score)
}

/// Outcome of one window's evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Decision {
    /// Stay on the current scheme.
    Keep { improvement: f64, streak: u32 },
    /// Switch to the estimated scheme.
    Adopt {
        scheme: MappingScheme,
        improvement: f64,
        streak: u32,
    },
    /// Retire the active estimated scheme and return rows home.
    Rollback { improvement: f64 },
}

impl Decision {
    pub fn action_name(&self) -> &'static str {
        match self {
            Decision::Keep { .. } => "keep",
            Decision::Adopt { .. } => "adopt",
            Decision::Rollback { .. } => "rollback",
        }
    }

    pub fn improvement(&self) -> f64 {
        match self {
            Decision::Keep { improvement, .. }
            | Decision::Adopt { improvement, .. }
            | Decision::Rollback { improvement } => *improvement,
        }
    }

    pub fn streak(&self) -> u32 {
        match self {
            Decision::Keep { streak, .. } | Decision::Adopt { streak, .. } => *streak,
            Decision::Rollback { .. } => 0,
        }
    }
}

/// One row of the decision log (`window_id,action,improvement,streak,scheme_id`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub window_id: u64,
    pub action: String,
    pub improvement: f64,
    pub streak: u32,
    pub scheme_id: String,
}

pub fn write_decision_csv<W: Write + ?Sized>(
    out: &mut W,
    records: &[DecisionRecord],
) -> std::io::Result<()> {
    writeln!(out, "window_id,action,improvement,streak,scheme_id")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.window_id, r.action, r.improvement, r.streak, r.scheme_id
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
enum EngineState {
    /// No estimated scheme active; counting qualifying windows.
    Idle,
    /// An estimated scheme is in service.
    Active(MappingScheme),
    /// A rollback was issued and rows are still draining home. Streaks keep
    /// counting but adoption waits for [`DecisionEngine::rollback_finished`].
    Draining,
}

/// The adopt/keep/rollback decision machine, stepped once per window.
///
/// While idle it scores each window's fresh estimate against the predefined
/// scheme and adopts after `consistency_windows` consecutive windows above
/// the threshold. While a scheme is active it keeps scoring that scheme on
/// new windows and rolls back as soon as the improvement stops clearing the
/// threshold. The predefined scheme stays the permanent reference either
/// way; a further scheme may be adopted once a rollback has fully drained.
#[derive(Debug, Clone)]
pub struct DecisionEngine {
    base: MappingScheme,
    geom: DramGeometry,
    cfg: PredictorConfig,
    state: EngineState,
    streak: u32,
}

impl DecisionEngine {
    pub fn new(base: MappingScheme, geom: DramGeometry, cfg: PredictorConfig) -> Self {
        Self {
            base,
            geom,
            cfg,
            state: EngineState::Idle,
            streak: 0,
        }
    }

    /// The permanent reference scheme decisions are measured against.
    pub fn base(&self) -> &MappingScheme {
        &self.base
    }

    pub fn active_scheme(&self) -> Option<&MappingScheme> {
        match &self.state {
            EngineState::Active(s) => Some(s),
            _ => None,
        }
    }

    /// Signals that all migrated rows are back home; the engine may adopt
    /// again.
    pub fn rollback_finished(&mut self) {
        if self.state == EngineState::Draining {
            self.state = EngineState::Idle;
        }
    }

    pub fn step(&mut self, sig: &BitChangeSignature) -> Result<Decision, PredictorError> {
        match &self.state {
            EngineState::Active(active) => {
                let imp = improvement(sig, &self.base, active)?;
                if imp <= self.cfg.improvement_threshold {
                    self.state = EngineState::Draining;
                    self.streak = 0;
                    Ok(Decision::Rollback { improvement: imp })
                } else {
                    Ok(Decision::Keep {
                        improvement: imp,
                        streak: 0,
                    })
                }
            }
            EngineState::Idle | EngineState::Draining => {
                let estimate = estimate_mapping(sig, &self.base, &self.geom, &self.cfg)?;
                let imp = improvement(sig, &self.base, &estimate)?;
                if imp > self.cfg.improvement_threshold {
                    self.streak += 1;
                } else {
                    self.streak = 0;
                }
                if self.streak >= self.cfg.consistency_windows
                    && self.state == EngineState::Idle
                {
                    let streak = self.streak;
                    self.streak = 0;
                    self.state = EngineState::Active(estimate.clone());
                    Ok(Decision::Adopt {
                        scheme: estimate,
                        improvement: imp,
                        streak,
                    })
                } else {
                    Ok(Decision::Keep {
                        improvement: imp,
                        streak: self.streak,
                    })
                }
            }
        }
    }
}

/// Runs the decision protocol over a complete window stream, treating each
/// rollback as draining instantly.
pub fn decide(
    windows: &[BitChangeSignature],
    base: &MappingScheme,
    geom: &DramGeometry,
    cfg: &PredictorConfig,
) -> Result<Vec<Decision>, PredictorError> {
    cfg.validate()?;
    let mut engine = DecisionEngine::new(base.clone(), *geom, *cfg);
    let mut out = Vec::with_capacity(windows.len());
    for sig in windows {
        let decision = engine.step(sig)?;
        if matches!(decision, Decision::Rollback { .. }) {
            engine.rollback_finished();
        }
        out.push(decision);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addrmap::{builtin_scheme, SchemeKind};

    fn geom() -> DramGeometry {
        DramGeometry::default()
    }

    fn baseline() -> MappingScheme {
        builtin_scheme(SchemeKind::Baseline, &geom())
    }

    fn sig_with(counters: Vec<u64>, requests: u64) -> BitChangeSignature {
        BitChangeSignature {
            window_id: 0,
            counters,
            requests_observed: requests,
            counter_bits: 18,
        }
    }

    #[test]
    fn zero_signature_scores_zero_everywhere() {
        let sig = sig_with(vec![0; 32], 100);
        for kind in [SchemeKind::Baseline, SchemeKind::Permutation, SchemeKind::Minimalist] {
            let s = builtin_scheme(kind, &geom());
            assert_eq!(score(&sig, &s).unwrap(), 0.0);
        }
    }

    #[test]
    fn score_normalizes_by_requests_and_row_width() {
        let mut counters = vec![0u64; 32];
        counters[20] = 90;
        let sig = sig_with(counters, 100);
        let got = score(&sig, &baseline()).unwrap();
        assert!((got - 90.0 / (99.0 * 16.0)).abs() < 1e-12);
    }

    #[test]
    fn score_follows_the_row_field() {
        let mut counters = vec![0u64; 32];
        counters[20] = 90;
        let sig = sig_with(counters, 100);
        // Swap bits 13 and 20 between bank and row.
        let mut scheme = baseline();
        scheme.fields.bank = vec![14, 15, 20];
        scheme.fields.row = vec![13, 16, 17, 18, 19, 21, 22, 23, 24, 25, 26, 27, 28, 29, 30, 31];
        assert_eq!(score(&sig, &scheme).unwrap(), 0.0);
    }

    #[test]
    fn uniform_signature_estimates_the_base_scheme() {
        let sig = sig_with(vec![5; 32], 100);
        let cfg = PredictorConfig::default();
        for kind in [SchemeKind::Baseline, SchemeKind::Permutation, SchemeKind::Minimalist] {
            let base = builtin_scheme(kind, &geom());
            let est = estimate_mapping(&sig, &base, &geom(), &cfg).unwrap();
            assert_eq!(est.fields, base.fields, "{kind:?}");
            assert_eq!(est.xor_bank_sources, base.xor_bank_sources, "{kind:?}");
        }
    }

    #[test]
    fn hot_row_bit_moves_to_the_bank_field() {
        let mut counters = vec![0u64; 32];
        counters[20] = 90; // hot row bit
        counters[13] = 1;
        counters[14] = 2;
        counters[15] = 3;
        let sig = sig_with(counters, 101);
        let est = estimate_mapping(&sig, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(est.fields.bank.contains(&20));
        assert!(est.fields.row.contains(&13));
        assert!(!est.fields.row.contains(&20));
        assert!(est.validate(&geom()).is_empty());
    }

    #[test]
    fn frozen_column_bits_never_move() {
        let mut counters: Vec<u64> = (0..32).map(|i| (i * 37 % 11) as u64).collect();
        counters[6] = 1000;
        let sig = sig_with(counters, 2000);
        let est = estimate_mapping(&sig, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert_eq!(est.fields.column, baseline().fields.column);
        assert_eq!(est.fields.offset, baseline().fields.offset);
    }

    #[test]
    fn unfrozen_columns_take_the_loudest_bits() {
        let mut counters = vec![0u64; 32];
        counters[20] = 90;
        let sig = sig_with(counters, 100);
        let cfg = PredictorConfig {
            freeze_column_bits: false,
            ..PredictorConfig::default()
        };
        let est = estimate_mapping(&sig, &baseline(), &geom(), &cfg).unwrap();
        assert!(est.fields.column.contains(&20));
        assert!(est.validate(&geom()).is_empty());
    }

    #[test]
    fn estimate_keeps_xor_flavor() {
        let base = builtin_scheme(SchemeKind::Permutation, &geom());
        let mut counters = vec![0u64; 32];
        counters[20] = 90;
        let sig = sig_with(counters, 100);
        let est = estimate_mapping(&sig, &base, &geom(), &PredictorConfig::default()).unwrap();
        let sources = est.xor_bank_sources.as_ref().unwrap();
        assert_eq!(sources.len(), 3);
        assert!(sources.iter().all(|b| est.fields.row.contains(b)));
        assert!(est.validate(&geom()).is_empty());
    }

    fn window_stream(improvements: &[f64]) -> Vec<BitChangeSignature> {
        // Synthesizes signatures whose estimated-vs-baseline improvement is
        // approximately the requested value. All pool bits share a uniform
        // background count so the only gain available to the estimator is
        // evicting the one hot row bit: improvement = hot / (1600 + hot).
        improvements
            .iter()
            .enumerate()
            .map(|(w, &target)| {
                let requests = 10_000u64;
                let mut counters = vec![0u64; 32];
                for bit in 13..32 {
                    counters[bit] = 100;
                }
                let hot = (target * 16.0 * 100.0 / (1.0 - target)).round() as u64;
                counters[20] = 100 + hot;
                let mut sig = sig_with(counters, requests);
                sig.window_id = w as u64;
                sig
            })
            .collect()
    }

    #[test]
    fn below_threshold_improvement_never_adopts() {
        let windows = window_stream(&[0.069; 10]);
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(decisions.iter().all(|d| matches!(d, Decision::Keep { .. })));
    }

    #[test]
    fn streak_of_three_adopts_on_the_third_window() {
        let windows = window_stream(&[0.20; 5]);
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(matches!(decisions[0], Decision::Keep { streak: 1, .. }));
        assert!(matches!(decisions[1], Decision::Keep { streak: 2, .. }));
        assert!(matches!(decisions[2], Decision::Adopt { streak: 3, .. }));
        // Window 4 and 5 evaluate the now-active scheme, which keeps winning.
        assert!(matches!(decisions[3], Decision::Keep { .. }));
    }

    #[test]
    fn interrupted_streak_resets() {
        let windows = window_stream(&[0.2, 0.2, 0.01, 0.2, 0.2, 0.2]);
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(matches!(decisions[2], Decision::Keep { streak: 0, .. }));
        assert!(matches!(decisions[5], Decision::Adopt { .. }));
    }

    #[test]
    fn active_scheme_that_stops_winning_rolls_back() {
        let mut windows = window_stream(&[0.2, 0.2, 0.2]);
        // A window where the whole stream is silent: improvement 0.
        let mut quiet = sig_with(vec![0; 32], 10_000);
        quiet.window_id = 3;
        windows.push(quiet);
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(matches!(decisions[2], Decision::Adopt { .. }));
        assert!(matches!(decisions[3], Decision::Rollback { .. }));
    }

    #[test]
    fn a_third_scheme_can_follow_a_completed_rollback() {
        let mut windows = window_stream(&[0.2, 0.2, 0.2]);
        let mut quiet = sig_with(vec![0; 32], 10_000);
        quiet.window_id = 3;
        windows.push(quiet);
        windows.extend(window_stream(&[0.3, 0.3, 0.3]).into_iter().map(|mut s| {
            s.window_id += 4;
            s
        }));
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(matches!(decisions[3], Decision::Rollback { .. }));
        assert!(matches!(decisions[6], Decision::Adopt { .. }));
    }

    #[test]
    fn silent_base_never_adopts() {
        let windows: Vec<_> = (0..5)
            .map(|w| {
                let mut s = sig_with(vec![0; 32], 1000);
                s.window_id = w;
                s
            })
            .collect();
        let decisions = decide(&windows, &baseline(), &geom(), &PredictorConfig::default()).unwrap();
        assert!(decisions
            .iter()
            .all(|d| matches!(d, Decision::Keep { improvement, .. } if *improvement == 0.0)));
    }

    #[test]
    fn scale_invariance_of_decisions() {
        let windows = window_stream(&[0.2, 0.01, 0.2, 0.2, 0.2]);
        let scaled: Vec<_> = windows
            .iter()
            .map(|s| {
                let mut s = s.clone();
                for c in &mut s.counters {
                    *c *= 7;
                }
                s.requests_observed = (s.requests_observed - 1) * 7 + 1;
                s
            })
            .collect();
        let cfg = PredictorConfig::default();
        let a = decide(&windows, &baseline(), &geom(), &cfg).unwrap();
        let b = decide(&scaled, &baseline(), &geom(), &cfg).unwrap();
        let names: Vec<_> = a.iter().map(|d| d.action_name()).collect();
        let scaled_names: Vec<_> = b.iter().map(|d| d.action_name()).collect();
        assert_eq!(names, scaled_names);
        for (x, y) in a.iter().zip(&b) {
            if let (Decision::Adopt { scheme: sx, .. }, Decision::Adopt { scheme: sy, .. }) = (x, y) {
                assert_eq!(sx.fields, sy.fields);
            }
        }
    }
}
