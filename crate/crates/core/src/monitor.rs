//! Per-bit change monitoring of the request address stream.
//!
//! The monitor keeps one saturating counter per physical-address bit plus a
//! history register holding the last observed address. Every new address is
//! XORed against the history register and each differing bit bumps its
//! counter. Counters are drained into a [`BitChangeSignature`] once per
//! window; the history register survives the window boundary, matching a
//! continuously running circuit.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default requests per window.
pub const DEFAULT_WINDOW_LEN: u64 = 250_000;
/// Modeled hardware counter width.
pub const DEFAULT_COUNTER_BITS: u32 = 18;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub window_len: u64,
    pub counter_bits: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_len: DEFAULT_WINDOW_LEN,
            counter_bits: DEFAULT_COUNTER_BITS,
        }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<(), MonitorError> {
        if self.window_len < 2 {
            return Err(MonitorError::BadWindowLen(self.window_len));
        }
        if self.counter_bits == 0 || self.counter_bits > 63 {
            return Err(MonitorError::BadCounterBits(self.counter_bits));
        }
        Ok(())
    }
}

/// Per-bit change counts accumulated over one request window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BitChangeSignature {
    pub window_id: u64,
    pub counters: Vec<u64>,
    pub requests_observed: u64,
    pub counter_bits: u32,
}

impl BitChangeSignature {
    pub fn address_bits(&self) -> u32 {
        self.counters.len() as u32
    }

    fn counter_max(&self) -> u64 {
        (1u64 << self.counter_bits) - 1
    }

    /// True if any counter hit the hardware limit during the window.
    pub fn saturated(&self) -> bool {
        // A counter can legitimately end a window exactly at the limit; the
        // flag is still raised since further changes would have been lost.
        let max = self.counter_max();
        self.counters.iter().any(|&c| c >= max)
    }

    /// Per-bit change rates, `counters[i] / (requests - 1)`.
    pub fn change_rates(&self) -> Result<Vec<f64>, MonitorError> {
        if self.requests_observed < 2 {
            return Err(MonitorError::TooFewRequests(self.requests_observed));
        }
        let denom = (self.requests_observed - 1) as f64;
        Ok(self.counters.iter().map(|&c| c as f64 / denom).collect())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MonitorError {
    #[error("no requests observed")]
    EmptyWindow,
    #[error("need at least 2 requests for change rates, got {0}")]
    TooFewRequests(u64),
    #[error("window_len must be >= 2, got {0}")]
    BadWindowLen(u64),
    #[error("counter_bits must be in 1..=63, got {0}")]
    BadCounterBits(u32),
}

/// The bit-change monitor: history register + one counter per address bit.
#[derive(Debug, Clone)]
pub struct BitChangeMonitor {
    counters: Vec<u64>,
    history: Option<u64>,
    requests_observed: u64,
    window_id: u64,
    counter_max: u64,
    counter_bits: u32,
}

impl BitChangeMonitor {
    pub fn new(address_bits: u32, counter_bits: u32) -> Self {
        Self {
            counters: vec![0; address_bits as usize],
            history: None,
            requests_observed: 0,
            window_id: 0,
            counter_max: (1u64 << counter_bits) - 1,
            counter_bits,
        }
    }

    pub fn with_defaults(address_bits: u32) -> Self {
        Self::new(address_bits, DEFAULT_COUNTER_BITS)
    }

    pub fn address_bits(&self) -> u32 {
        self.counters.len() as u32
    }

    pub fn requests_observed(&self) -> u64 {
        self.requests_observed
    }

    /// Feeds one address through the XOR array. Bits above the monitored
    /// width are ignored.
    pub fn observe(&mut self, addr: u64) {
        if let Some(prev) = self.history {
            let mut diff = prev ^ addr;
            if self.address_bits() < 64 {
                diff &= (1u64 << self.address_bits()) - 1;
            }
            while diff != 0 {
                let bit = diff.trailing_zeros() as usize;
                if self.counters[bit] < self.counter_max {
                    self.counters[bit] += 1;
                }
                diff &= diff - 1;
            }
        }
        self.history = Some(addr);
        self.requests_observed += 1;
    }

    /// Emits the window's signature and starts a fresh window. The history
    /// register is deliberately kept so windows chain seamlessly.
    pub fn finalize_window(&mut self) -> Result<BitChangeSignature, MonitorError> {
        if self.requests_observed == 0 {
            return Err(MonitorError::EmptyWindow);
        }
        let fresh = vec![0; self.counters.len()];
        let sig = BitChangeSignature {
            window_id: self.window_id,
            counters: std::mem::replace(&mut self.counters, fresh),
            requests_observed: self.requests_observed,
            counter_bits: self.counter_bits,
        };
        self.requests_observed = 0;
        self.window_id += 1;
        Ok(sig)
    }
}

/// Software-side aggregation of window signatures (wide counters, no
/// saturation), used by offline profiling over a whole trace.
#[derive(Debug, Clone, Default)]
pub struct SignatureAccumulator {
    counters: Vec<u64>,
    requests: u64,
    windows: u64,
    any_saturated: bool,
}

impl SignatureAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, sig: &BitChangeSignature) {
        if self.counters.is_empty() {
            self.counters = vec![0; sig.counters.len()];
        }
        assert_eq!(self.counters.len(), sig.counters.len(), "signature width changed");
        self.any_saturated |= sig.saturated();
        for (acc, &c) in self.counters.iter_mut().zip(&sig.counters) {
            *acc += c;
        }
        self.requests += sig.requests_observed;
        self.windows += 1;
    }

    pub fn windows(&self) -> u64 {
        self.windows
    }

    pub fn any_saturated(&self) -> bool {
        self.any_saturated
    }

    /// Collapses the accumulated windows into one aggregate signature.
    pub fn aggregate(&self) -> Result<BitChangeSignature, MonitorError> {
        if self.requests == 0 {
            return Err(MonitorError::EmptyWindow);
        }
        Ok(BitChangeSignature {
            window_id: 0,
            counters: self.counters.clone(),
            requests_observed: self.requests,
            counter_bits: 63,
        })
    }
}

/// Storage footprint of the monitoring hardware.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MonitorStorage {
    pub counter_bytes: u64,
    pub history_bytes: u64,
    pub total_bytes: u64,
}

/// Bytes needed for `address_bits` counters of `counter_bits` each, plus the
/// history register.
pub fn monitor_storage_bytes(address_bits: u32, counter_bits: u32) -> MonitorStorage {
    let counter_bytes = (address_bits as u64 * counter_bits as u64).div_ceil(8);
    let history_bytes = (address_bits as u64).div_ceil(8);
    MonitorStorage {
        counter_bytes,
        history_bytes,
        total_bytes: counter_bytes + history_bytes,
    }
}

/// Writes signatures in the CSV form `window_id,bit,count,requests`.
pub fn write_signature_csv<W: Write + ?Sized>(
    out: &mut W,
    sigs: &[BitChangeSignature],
) -> std::io::Result<()> {
    writeln!(out, "window_id,bit,count,requests")?;
    for sig in sigs {
        for (bit, &count) in sig.counters.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{}",
                sig.window_id, bit, count, sig.requests_observed
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_observation_counts_nothing() {
        let mut m = BitChangeMonitor::with_defaults(32);
        m.observe(0xdead_beef % (1 << 32));
        let sig = m.finalize_window().unwrap();
        assert!(sig.counters.iter().all(|&c| c == 0));
        assert_eq!(sig.requests_observed, 1);
    }

    #[test]
    fn xor_chain_over_small_sequence() {
        let mut m = BitChangeMonitor::with_defaults(32);
        for addr in [0x0, 0x1, 0x2, 0x3] {
            m.observe(addr);
        }
        let sig = m.finalize_window().unwrap();
        assert_eq!(sig.counters[0], 3);
        assert_eq!(sig.counters[1], 1);
        assert!(sig.counters[2..].iter().all(|&c| c == 0));
    }

    #[test]
    fn counter_bounded_by_requests_minus_one() {
        let mut m = BitChangeMonitor::with_defaults(8);
        for addr in [0, 1, 0, 1, 0] {
            m.observe(addr);
        }
        let sig = m.finalize_window().unwrap();
        assert_eq!(sig.requests_observed, 5);
        assert!(sig.counters.iter().all(|&c| c <= 4));
        assert_eq!(sig.counters[0], 4);
    }

    #[test]
    fn change_rates_examples() {
        let sig = BitChangeSignature {
            window_id: 0,
            counters: vec![3, 1, 0],
            requests_observed: 4,
            counter_bits: 18,
        };
        let rates = sig.change_rates().unwrap();
        assert_eq!(rates[0], 1.0);
        assert!((rates[1] - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(rates[2], 0.0);

        let sig = BitChangeSignature {
            window_id: 0,
            counters: vec![1],
            requests_observed: 5,
            counter_bits: 18,
        };
        assert_eq!(sig.change_rates().unwrap()[0], 0.25);
    }

    #[test]
    fn change_rates_need_two_requests() {
        let sig = BitChangeSignature {
            window_id: 0,
            counters: vec![0],
            requests_observed: 1,
            counter_bits: 18,
        };
        assert_eq!(sig.change_rates(), Err(MonitorError::TooFewRequests(1)));
    }

    #[test]
    fn empty_window_is_an_error() {
        let mut m = BitChangeMonitor::with_defaults(8);
        assert_eq!(m.finalize_window(), Err(MonitorError::EmptyWindow));
    }

    #[test]
    fn history_register_survives_window_boundary() {
        let mut m = BitChangeMonitor::with_defaults(8);
        m.observe(0b0000);
        m.finalize_window().unwrap();
        m.observe(0b0011);
        let sig = m.finalize_window().unwrap();
        // The new window's first observation still XORs against the old
        // history value.
        assert_eq!(sig.counters[0], 1);
        assert_eq!(sig.counters[1], 1);
        assert_eq!(sig.window_id, 1);
    }

    #[test]
    fn replayed_sequences_give_identical_signatures() {
        let seq = [0x10u64, 0x33, 0x5, 0x33, 0x2];
        let run = || {
            let mut m = BitChangeMonitor::with_defaults(16);
            for &a in &seq {
                m.observe(a);
            }
            m.finalize_window().unwrap()
        };
        assert_eq!(run().counters, run().counters);
    }

    #[test]
    fn sequential_lines_flip_the_line_bit_every_pair() {
        let mut m = BitChangeMonitor::with_defaults(32);
        let n = 250_000u64;
        for i in 0..n {
            m.observe(i * 64);
        }
        let sig = m.finalize_window().unwrap();
        assert_eq!(sig.counters[6], n - 1);
        assert!(!sig.saturated());
    }

    #[test]
    fn saturation_is_flagged_not_wrapped() {
        let mut m = BitChangeMonitor::new(4, 2); // counters max out at 3
        for i in 0..10u64 {
            m.observe(i & 1);
        }
        let sig = m.finalize_window().unwrap();
        assert_eq!(sig.counters[0], 3);
        assert!(sig.saturated());
    }

    #[test]
    fn storage_formula_examples() {
        assert_eq!(monitor_storage_bytes(32, 18).total_bytes, 76);
        assert_eq!(monitor_storage_bytes(1, 8).total_bytes, 2);
        assert_eq!(monitor_storage_bytes(39, 18).total_bytes, 93);
        assert_eq!(monitor_storage_bytes(39, 18).counter_bytes, 88);
        // Row+bank-only width for a 512 GiB module with the default layout.
        assert_eq!(monitor_storage_bytes(26, 18).counter_bytes, 59);
    }

    #[test]
    fn accumulator_sums_windows_without_saturating() {
        let mut m = BitChangeMonitor::new(8, 4); // saturates at 15
        let mut acc = SignatureAccumulator::new();
        for w in 0..3 {
            for i in 0..30u64 {
                m.observe((w * 30 + i) & 1);
            }
            acc.add(&m.finalize_window().unwrap());
        }
        let agg = acc.aggregate().unwrap();
        assert_eq!(agg.requests_observed, 90);
        assert!(acc.any_saturated());
        // Each window lost counts to saturation; the aggregate keeps what the
        // hardware reported.
        assert_eq!(agg.counters[0], 45);
    }

    #[test]
    fn csv_layout() {
        let sig = BitChangeSignature {
            window_id: 2,
            counters: vec![5, 0],
            requests_observed: 9,
            counter_bits: 18,
        };
        let mut buf = Vec::new();
        write_signature_csv(&mut buf, &[sig]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "window_id,bit,count,requests\n2,0,5,9\n2,1,0,9\n");
    }
}
