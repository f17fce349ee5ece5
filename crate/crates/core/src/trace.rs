//! Memory-request traces: parsing, serialization and synthetic workloads.
//!
//! The canonical trace line is `<gap> <R|W> <hex-address>`: the issue gap in
//! CPU cycles since the previous request in the stream, the operation, and a
//! `0x`-prefixed physical address. Files may be gzip-compressed; compression
//! is detected from the magic bytes.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::addrmap::DramGeometry;

/// Default issue gap stamped on generated requests: one memory cycle at the
/// default 4:1 clock ratio.
pub const DEFAULT_GAP_CPU_CYCLES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Read => "R",
            Op::Write => "W",
        })
    }
}

/// One memory request as seen at the controller boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRequest {
    /// CPU cycles since the previous request in the stream was issued.
    pub gap: u64,
    pub op: Op,
    pub address: u64,
    pub thread_id: u32,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: malformed trace record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("trace parameters invalid: {0}")]
    BadSpec(String),
}

fn malformed(line: usize, reason: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        reason: reason.into(),
    }
}

/// Parses the canonical line format. `thread_id` is stamped 0; threads come
/// from interleaving separate traces.
pub fn parse<R: BufRead>(reader: R) -> Result<Vec<MemoryRequest>, TraceError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| malformed(lineno, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut parts = trimmed.split_ascii_whitespace();
        let gap_str = parts.next().ok_or_else(|| malformed(lineno, "missing gap"))?;
        let op_str = parts.next().ok_or_else(|| malformed(lineno, "missing op"))?;
        let addr_str = parts
            .next()
            .ok_or_else(|| malformed(lineno, "missing address"))?;
        if parts.next().is_some() {
            return Err(malformed(lineno, "trailing fields"));
        }
        let gap: u64 = gap_str
            .parse()
            .map_err(|_| malformed(lineno, format!("bad gap '{gap_str}'")))?;
        let op = match op_str {
            "R" => Op::Read,
            "W" => Op::Write,
            other => return Err(malformed(lineno, format!("bad op '{other}'"))),
        };
        let hex = addr_str
            .strip_prefix("0x")
            .or_else(|| addr_str.strip_prefix("0X"))
            .ok_or_else(|| malformed(lineno, format!("address '{addr_str}' missing 0x prefix")))?;
        let address = u64::from_str_radix(hex, 16)
            .map_err(|_| malformed(lineno, format!("bad address '{addr_str}'")))?;
        out.push(MemoryRequest {
            gap,
            op,
            address,
            thread_id: 0,
        });
    }
    Ok(out)
}

/// Inverse of [`parse`]. Thread identity is not representable in the file
/// format and is dropped.
pub fn serialize<W: Write>(out: &mut W, trace: &[MemoryRequest]) -> std::io::Result<()> {
    for req in trace {
        writeln!(out, "{} {} {:#x}", req.gap, req.op, req.address)?;
    }
    Ok(())
}

/// Loads a trace file, transparently decompressing gzip (1f 8b magic).
pub fn load(path: &Path) -> Result<Vec<MemoryRequest>, TraceError> {
    let mut file = File::open(path)
        .map_err(|e| TraceError::BadSpec(format!("{}: {e}", path.display())))?;
    let mut magic = [0u8; 2];
    let n = file
        .read(&mut magic)
        .map_err(|e| TraceError::BadSpec(e.to_string()))?;
    let file = File::open(path).map_err(|e| TraceError::BadSpec(e.to_string()))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        parse(BufReader::new(GzDecoder::new(file)))
    } else {
        parse(BufReader::new(file))
    }
}

/// Synthetic workload descriptions. Generation is deterministic for a fixed
/// spec (including seeds).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TraceSpec {
    /// Consecutive cache lines from `start`.
    Sequential { start: u64, n: u64 },
    /// `start + i*stride`, optionally XOR-toggling `hot_bit` on every other
    /// request so that bit alone carries a change rate of 1.
    Strided {
        start: u64,
        stride: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        hot_bit: Option<u32>,
        n: u64,
    },
    /// Uniform random in-range line addresses.
    Random { seed: u64, n: u64 },
    /// Phases of other patterns back to back.
    PhaseSwitch { phases: Vec<TraceSpec> },
    /// Timestamp-interleaved multithread mix of component patterns.
    Mix { components: Vec<TraceSpec> },
}

impl TraceSpec {
    pub fn generate(&self, geom: &DramGeometry) -> Result<Vec<MemoryRequest>, TraceError> {
        let capacity = geom.capacity();
        match self {
            TraceSpec::Sequential { start, n } => {
                gen_strided(*start, geom.line_size, None, *n, geom)
            }
            TraceSpec::Strided {
                start,
                stride,
                hot_bit,
                n,
            } => gen_strided(*start, *stride, *hot_bit, *n, geom),
            TraceSpec::Random { seed, n } => gen_random(*seed, *n, geom),
            TraceSpec::PhaseSwitch { phases } => {
                if phases.is_empty() {
                    return Err(TraceError::BadSpec("phase list empty".into()));
                }
                let mut out = Vec::new();
                for phase in phases {
                    out.extend(phase.generate(geom)?);
                }
                Ok(out)
            }
            TraceSpec::Mix { components } => {
                let traces = components
                    .iter()
                    .map(|c| c.generate(geom))
                    .collect::<Result<Vec<_>, _>>()?;
                interleave(traces)
            }
        }
        .map(|trace| {
            debug_assert!(trace.iter().all(|r| r.address < capacity));
            trace
        })
    }
}

fn read_req(address: u64) -> MemoryRequest {
    MemoryRequest {
        gap: DEFAULT_GAP_CPU_CYCLES,
        op: Op::Read,
        address,
        thread_id: 0,
    }
}

/// Consecutive cache lines starting at `start`.
pub fn gen_sequential(start: u64, n: u64, geom: &DramGeometry) -> Result<Vec<MemoryRequest>, TraceError> {
    gen_strided(start, geom.line_size, None, n, geom)
}

/// Strided walk; `hot_bit`, when set, is XOR-toggled on every other request.
pub fn gen_strided(
    start: u64,
    stride: u64,
    hot_bit: Option<u32>,
    n: u64,
    geom: &DramGeometry,
) -> Result<Vec<MemoryRequest>, TraceError> {
    if n == 0 {
        return Err(TraceError::BadSpec("trace length must be >= 1".into()));
    }
    if stride == 0 || stride % geom.line_size != 0 {
        return Err(TraceError::BadSpec(format!(
            "stride {stride} must be a positive multiple of the {}-byte line",
            geom.line_size
        )));
    }
    let capacity = geom.capacity();
    if let Some(bit) = hot_bit {
        if bit >= geom.address_bits() {
            return Err(TraceError::BadSpec(format!(
                "hot_bit {bit} outside the {}-bit address",
                geom.address_bits()
            )));
        }
    }
    let mut out = Vec::with_capacity(n as usize);
    for i in 0..n {
        let mut addr = start.wrapping_add(i.wrapping_mul(stride)) % capacity;
        if let Some(bit) = hot_bit {
            if i % 2 == 1 {
                addr ^= 1 << bit;
            }
        }
        out.push(read_req(addr));
    }
    Ok(out)
}

/// Uniform random line-aligned addresses, reproducible from the seed.
pub fn gen_random(seed: u64, n: u64, geom: &DramGeometry) -> Result<Vec<MemoryRequest>, TraceError> {
    if n == 0 {
        return Err(TraceError::BadSpec("trace length must be >= 1".into()));
    }
    let lines = geom.capacity() / geom.line_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| read_req(rng.gen_range(0..lines) * geom.line_size))
        .collect())
}

/// Merges component traces by cumulative issue timestamps, ties broken by
/// component index. Requests keep their absolute issue times; gaps are
/// re-expressed as deltas of the merged stream and `thread_id` is stamped
/// with the component index.
pub fn interleave(traces: Vec<Vec<MemoryRequest>>) -> Result<Vec<MemoryRequest>, TraceError> {
    if traces.is_empty() {
        return Err(TraceError::BadSpec("interleave needs at least one trace".into()));
    }
    let mut stamped: Vec<(u64, u32, usize, MemoryRequest)> = Vec::new();
    for (tid, trace) in traces.iter().enumerate() {
        let mut t = 0u64;
        for (idx, req) in trace.iter().enumerate() {
            t += req.gap;
            stamped.push((t, tid as u32, idx, *req));
        }
    }
    stamped.sort_by_key(|&(t, tid, idx, _)| (t, tid, idx));
    let mut out = Vec::with_capacity(stamped.len());
    let mut prev_t = 0u64;
    for (t, tid, _, mut req) in stamped {
        req.gap = t - prev_t;
        req.thread_id = tid;
        prev_t = t;
        out.push(req);
    }
    Ok(out)
}

/// The bundled synthetic workload suite: a spread of mapping-sensitive
/// patterns (hot row bits, row-crossing strides) and mapping-insensitive
/// ones (sequential, uniform random, mixes), used by the correlation study.
pub fn standard_suite(requests_per_trace: u64, seed: u64) -> Vec<(String, TraceSpec)> {
    let n = requests_per_trace;
    let mut suite: Vec<(String, TraceSpec)> = Vec::new();
    // Hot row bits at varying positions: the classic mapping-sensitive
    // shape, one loud bit inside the default row field.
    for bit in [16u32, 17, 18, 19, 20, 22, 24, 26] {
        suite.push((
            format!("hotbit{bit}"),
            TraceSpec::Strided { start: 0, stride: 64, hot_bit: Some(bit), n },
        ));
    }
    // Row-crossing strides: consecutive accesses walk rows in one bank.
    for (name, shift) in [("stride8k", 13u32), ("stride16k", 14), ("stride64k", 16), ("stride256k", 18), ("stride1m", 20)] {
        suite.push((
            name.to_string(),
            TraceSpec::Strided { start: 0, stride: 1 << shift, hot_bit: None, n },
        ));
    }
    // Hot bank/column bits: little for the predictor to win.
    suite.push((
        "hotbit13".into(),
        TraceSpec::Strided { start: 0, stride: 64, hot_bit: Some(13), n },
    ));
    suite.push((
        "hotbit8".into(),
        TraceSpec::Strided { start: 0, stride: 64, hot_bit: Some(8), n },
    ));
    // Mapping-insensitive patterns.
    suite.push(("sequential".into(), TraceSpec::Sequential { start: 0, n }));
    for i in 0..3u64 {
        suite.push((
            format!("random{i}"),
            TraceSpec::Random { seed: seed.wrapping_add(i), n },
        ));
    }
    // Multithread-style mixes.
    suite.push((
        "mix-seq-rand".into(),
        TraceSpec::Mix {
            components: vec![
                TraceSpec::Sequential { start: 0, n: n / 2 },
                TraceSpec::Random { seed: seed.wrapping_add(10), n: n / 2 },
            ],
        },
    ));
    suite.push((
        "mix-hot-rand".into(),
        TraceSpec::Mix {
            components: vec![
                TraceSpec::Strided { start: 0, stride: 64, hot_bit: Some(21), n: n / 2 },
                TraceSpec::Random { seed: seed.wrapping_add(11), n: n / 2 },
            ],
        },
    ));
    suite.push((
        "mix-4seq".into(),
        TraceSpec::Mix {
            components: (0..4)
                .map(|i| TraceSpec::Sequential { start: i << 24, n: n / 4 })
                .collect(),
        },
    ));
    // A phase change mid-trace.
    suite.push((
        "phase-hot-seq".into(),
        TraceSpec::PhaseSwitch {
            phases: vec![
                TraceSpec::Strided { start: 0, stride: 64, hot_bit: Some(19), n: n / 2 },
                TraceSpec::Sequential { start: 0, n: n / 2 },
            ],
        },
    ));
    suite
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn geom() -> DramGeometry {
        DramGeometry::default()
    }

    #[test]
    fn parse_basic_lines() {
        let trace = parse(Cursor::new("0 R 0x0\n4 W 0x2040\n")).unwrap();
        assert_eq!(
            trace[0],
            MemoryRequest { gap: 0, op: Op::Read, address: 0, thread_id: 0 }
        );
        assert_eq!(
            trace[1],
            MemoryRequest { gap: 4, op: Op::Write, address: 0x2040, thread_id: 0 }
        );
    }

    #[test]
    fn parse_reports_the_offending_line() {
        let err = parse(Cursor::new("x R 0x0\n")).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 1, .. }));
        let err = parse(Cursor::new("0 R 0x0\n1 Q 0x40\n")).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 2, .. }));
        let err = parse(Cursor::new("0 R 40\n")).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 1, .. }));
    }

    #[test]
    fn serialize_then_parse_round_trips() {
        let trace = vec![
            MemoryRequest { gap: 0, op: Op::Read, address: 0x0, thread_id: 0 },
            MemoryRequest { gap: 7, op: Op::Write, address: 0xabc0, thread_id: 0 },
        ];
        let mut buf = Vec::new();
        serialize(&mut buf, &trace).unwrap();
        assert_eq!(parse(Cursor::new(buf)).unwrap(), trace);
    }

    #[test]
    fn gzip_traces_are_detected() {
        use flate2::write::GzEncoder;
        use flate2::Compression;
        let dir = std::env::temp_dir().join("dream-trace-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.trace.gz");
        let mut enc = GzEncoder::new(File::create(&path).unwrap(), Compression::default());
        enc.write_all(b"0 R 0x40\n").unwrap();
        enc.finish().unwrap();
        let trace = load(&path).unwrap();
        assert_eq!(trace[0].address, 0x40);
    }

    #[test]
    fn sequential_addresses_step_by_line() {
        let t = gen_sequential(0, 4, &geom()).unwrap();
        let addrs: Vec<u64> = t.iter().map(|r| r.address).collect();
        assert_eq!(addrs, vec![0x0, 0x40, 0x80, 0xC0]);
    }

    #[test]
    fn hot_bit_alternates() {
        let t = gen_strided(0, 64, Some(20), 4, &geom()).unwrap();
        let toggles: Vec<u64> = t.iter().map(|r| (r.address >> 20) & 1).collect();
        assert_eq!(toggles, vec![0, 1, 0, 1]);
    }

    #[test]
    fn random_traces_are_deterministic_and_in_range() {
        let a = gen_random(1, 1000, &geom()).unwrap();
        let b = gen_random(1, 1000, &geom()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.address < geom().capacity()));
        assert!(a.iter().all(|r| r.address % 64 == 0));
        assert_ne!(a, gen_random(2, 1000, &geom()).unwrap());
    }

    #[test]
    fn bad_generator_parameters_are_rejected() {
        assert!(gen_strided(0, 48, None, 4, &geom()).is_err());
        assert!(gen_strided(0, 64, Some(60), 4, &geom()).is_err());
        assert!(gen_random(0, 0, &geom()).is_err());
    }

    #[test]
    fn interleave_identity_and_merge_order() {
        let t = gen_sequential(0, 3, &geom()).unwrap();
        let merged = interleave(vec![t.clone()]).unwrap();
        assert_eq!(merged, t);

        let a = vec![MemoryRequest { gap: 0, op: Op::Read, address: 0x0, thread_id: 0 }];
        let b = vec![MemoryRequest { gap: 5, op: Op::Read, address: 0x40, thread_id: 0 }];
        let merged = interleave(vec![a, b]).unwrap();
        assert_eq!(merged[0].thread_id, 0);
        assert_eq!(merged[1].thread_id, 1);
        assert_eq!(merged[1].gap, 5);
    }

    #[test]
    fn interleave_conserves_requests() {
        let a = gen_sequential(0, 10, &geom()).unwrap();
        let b = gen_random(3, 20, &geom()).unwrap();
        let c = gen_strided(0x10000, 128, None, 5, &geom()).unwrap();
        let merged = interleave(vec![a, b, c]).unwrap();
        assert_eq!(merged.len(), 35);
        // Timestamps of the merged stream are the originals.
        let total: u64 = merged.iter().map(|r| r.gap).sum();
        assert_eq!(total, 20 * DEFAULT_GAP_CPU_CYCLES);
    }

    #[test]
    fn standard_suite_is_large_and_deterministic() {
        let suite = standard_suite(1000, 7);
        assert!(suite.len() >= 20, "suite has {}", suite.len());
        let geom = geom();
        for (name, spec) in &suite {
            let a = spec.generate(&geom).unwrap();
            let b = spec.generate(&geom).unwrap();
            assert_eq!(a, b, "{name} not deterministic");
            assert!(!a.is_empty());
        }
        let names: std::collections::BTreeSet<_> = suite.iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), suite.len(), "duplicate workload names");
    }

    #[test]
    fn phase_switch_concatenates() {
        let spec = TraceSpec::PhaseSwitch {
            phases: vec![
                TraceSpec::Sequential { start: 0, n: 3 },
                TraceSpec::Random { seed: 1, n: 2 },
            ],
        };
        assert_eq!(spec.generate(&geom()).unwrap().len(), 5);
    }
}
