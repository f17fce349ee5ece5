//! DRAM geometry, coordinates, and address-mapping schemes.
//!
//! A mapping scheme assigns every physical-address bit to exactly one
//! coordinate field (channel, rank, bank, row, column or line offset).
//! Translation is bijective in both directions, including schemes that
//! XOR a slice of row bits into the bank index.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Physical shape of the simulated memory system.
///
/// All counts are powers of two. The default is a 4 GiB single-channel,
/// single-rank module: 8 banks x 65,536 rows x 128 cache lines per row
/// x 64-byte lines, with a 3.2 GHz core against an 800 MHz bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DramGeometry {
    pub channels: u64,
    pub ranks_per_channel: u64,
    pub banks_per_rank: u64,
    pub rows_per_bank: u64,
    /// Columns counted in cache lines.
    pub columns_per_row: u64,
    pub line_size: u64,
    pub cpu_to_mem_clock_ratio: u64,
}

impl Default for DramGeometry {
    fn default() -> Self {
        Self {
            channels: 1,
            ranks_per_channel: 1,
            banks_per_rank: 8,
            rows_per_bank: 65_536,
            columns_per_row: 128,
            line_size: 64,
            cpu_to_mem_clock_ratio: 4,
        }
    }
}

impl DramGeometry {
    /// Total capacity in bytes.
    pub fn capacity(&self) -> u64 {
        self.channels
            * self.ranks_per_channel
            * self.banks_per_rank
            * self.rows_per_bank
            * self.columns_per_row
            * self.line_size
    }

    /// Number of physical-address bits, `log2(capacity)`.
    pub fn address_bits(&self) -> u32 {
        self.capacity().trailing_zeros()
    }

    /// Row size in bytes (`columns_per_row * line_size`).
    pub fn row_bytes(&self) -> u64 {
        self.columns_per_row * self.line_size
    }

    /// Addressable locations (one per row across all banks/ranks/channels).
    pub fn row_locations(&self) -> u64 {
        self.channels * self.ranks_per_channel * self.banks_per_rank * self.rows_per_bank
    }

    pub fn field_width(&self, field: Field) -> u32 {
        let count = match field {
            Field::Channel => self.channels,
            Field::Rank => self.ranks_per_channel,
            Field::Bank => self.banks_per_rank,
            Field::Row => self.rows_per_bank,
            Field::Column => self.columns_per_row,
            Field::Offset => self.line_size,
        };
        count.trailing_zeros()
    }

    /// Checks that every count is a power of two and at least one.
    pub fn validate(&self) -> Result<(), AddrMapError> {
        let counts = [
            self.channels,
            self.ranks_per_channel,
            self.banks_per_rank,
            self.rows_per_bank,
            self.columns_per_row,
            self.line_size,
        ];
        if counts.iter().any(|&c| c == 0 || !c.is_power_of_two()) {
            return Err(AddrMapError::BadGeometry);
        }
        if self.cpu_to_mem_clock_ratio == 0 {
            return Err(AddrMapError::BadGeometry);
        }
        Ok(())
    }
}

/// One coordinate in the DRAM hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct DramCoordinate {
    pub channel: u64,
    pub rank: u64,
    pub bank: u64,
    pub row: u64,
    pub column: u64,
    pub offset: u64,
}

impl DramCoordinate {
    pub fn is_valid(&self, geom: &DramGeometry) -> bool {
        self.channel < geom.channels
            && self.rank < geom.ranks_per_channel
            && self.bank < geom.banks_per_rank
            && self.row < geom.rows_per_bank
            && self.column < geom.columns_per_row
            && self.offset < geom.line_size
    }
}

/// Coordinate fields a physical-address bit can be assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    Channel,
    Rank,
    Bank,
    Row,
    Column,
    Offset,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::Channel,
        Field::Rank,
        Field::Bank,
        Field::Row,
        Field::Column,
        Field::Offset,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Field::Channel => "channel",
            Field::Rank => "rank",
            Field::Bank => "bank",
            Field::Row => "row",
            Field::Column => "column",
            Field::Offset => "offset",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Built-in scheme layouts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    /// Column bits directly above the line offset, then bank/rank/channel,
    /// row at the top. Maximizes row-buffer locality for sequential streams.
    Baseline,
    /// Baseline layout with the lowest row bits XORed into the bank index,
    /// so a row change also tends to change the bank.
    Permutation,
    /// Column field split around the bank bits: the high part of the column
    /// index comes from a separate section of the address.
    Minimalist,
}

/// Bit layout in the scheme file (arrays of bit positions, LSB = 0).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldBits {
    #[serde(default)]
    pub channel: Vec<u32>,
    #[serde(default)]
    pub rank: Vec<u32>,
    #[serde(default)]
    pub bank: Vec<u32>,
    #[serde(default)]
    pub row: Vec<u32>,
    #[serde(default)]
    pub column: Vec<u32>,
    #[serde(default)]
    pub offset: Vec<u32>,
}

impl FieldBits {
    pub fn get(&self, field: Field) -> &[u32] {
        match field {
            Field::Channel => &self.channel,
            Field::Rank => &self.rank,
            Field::Bank => &self.bank,
            Field::Row => &self.row,
            Field::Column => &self.column,
            Field::Offset => &self.offset,
        }
    }

    pub fn get_mut(&mut self, field: Field) -> &mut Vec<u32> {
        match field {
            Field::Channel => &mut self.channel,
            Field::Rank => &mut self.rank,
            Field::Bank => &mut self.bank,
            Field::Row => &mut self.row,
            Field::Column => &mut self.column,
            Field::Offset => &mut self.offset,
        }
    }
}

/// An assignment of physical-address bits to DRAM coordinate fields.
///
/// Each field holds an ordered (LSB-first) list of address bit positions.
/// `xor_bank_sources`, when present, names one row-field bit per bank bit;
/// the extracted bank index is XORed with those row bits on decompose and
/// un-XORed on compose.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingScheme {
    pub scheme_id: String,
    pub fields: FieldBits,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xor_bank_sources: Option<Vec<u32>>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddrMapError {
    #[error("geometry counts must be powers of two and >= 1")]
    BadGeometry,
    #[error("address {addr:#x} out of range for capacity {capacity:#x}")]
    AddressOutOfRange { addr: u64, capacity: u64 },
    #[error("scheme '{scheme_id}' does not fit the geometry: {first}")]
    SchemeMismatch { scheme_id: String, first: Violation },
    #[error("coordinate {coord:?} invalid for geometry")]
    InvalidCoordinate { coord: DramCoordinate },
}

/// A single scheme-validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    OverlappingBit { bit: u32 },
    FieldWidth { field: Field, got: u32, want: u32 },
    BitOutOfRange { field: Field, bit: u32, address_bits: u32 },
    OffsetNotLow { bit: u32 },
    XorWidth { got: u32, want: u32 },
    XorSourceNotRow { bit: u32 },
    XorSourceDuplicate { bit: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::OverlappingBit { bit } => write!(f, "overlapping bit {bit}"),
            Violation::FieldWidth { field, got, want } => {
                write!(f, "{field} width {got} != {want}")
            }
            Violation::BitOutOfRange { field, bit, address_bits } => {
                write!(f, "{field} bit {bit} outside {address_bits}-bit address")
            }
            Violation::OffsetNotLow { bit } => {
                write!(f, "offset bit {bit} not in the low line-offset range")
            }
            Violation::XorWidth { got, want } => {
                write!(f, "xor_bank_sources width {got} != bank width {want}")
            }
            Violation::XorSourceNotRow { bit } => {
                write!(f, "xor source bit {bit} not in the row field")
            }
            Violation::XorSourceDuplicate { bit } => {
                write!(f, "duplicate xor source bit {bit}")
            }
        }
    }
}

impl MappingScheme {
    /// Returns every invariant violation; an empty list means the scheme is
    /// valid for the geometry.
    pub fn validate(&self, geom: &DramGeometry) -> Vec<Violation> {
        let mut violations = Vec::new();
        let address_bits = geom.address_bits();
        let mut seen = vec![false; address_bits as usize];

        for field in Field::ALL {
            let bits = self.fields.get(field);
            let want = geom.field_width(field);
            if bits.len() as u32 != want {
                violations.push(Violation::FieldWidth {
                    field,
                    got: bits.len() as u32,
                    want,
                });
            }
            for &bit in bits {
                if bit >= address_bits {
                    violations.push(Violation::BitOutOfRange { field, bit, address_bits });
                    continue;
                }
                if seen[bit as usize] {
                    violations.push(Violation::OverlappingBit { bit });
                } else {
                    seen[bit as usize] = true;
                }
            }
        }
        // Line-offset bits are never remapped: they must be the low bits.
        let offset_width = geom.field_width(Field::Offset);
        for &bit in &self.fields.offset {
            if bit >= offset_width {
                violations.push(Violation::OffsetNotLow { bit });
            }
        }

        if let Some(sources) = &self.xor_bank_sources {
            let bank_width = geom.field_width(Field::Bank);
            if sources.len() as u32 != bank_width {
                violations.push(Violation::XorWidth {
                    got: sources.len() as u32,
                    want: bank_width,
                });
            }
            let mut seen_src = Vec::new();
            for &bit in sources {
                if !self.fields.row.contains(&bit) {
                    violations.push(Violation::XorSourceNotRow { bit });
                }
                if seen_src.contains(&bit) {
                    violations.push(Violation::XorSourceDuplicate { bit });
                }
                seen_src.push(bit);
            }
        }
        violations
    }

    pub fn ensure_valid(&self, geom: &DramGeometry) -> Result<(), AddrMapError> {
        match self.validate(geom).into_iter().next() {
            None => Ok(()),
            Some(first) => Err(AddrMapError::SchemeMismatch {
                scheme_id: self.scheme_id.clone(),
                first,
            }),
        }
    }

    /// The set of address bits that determine the row location (everything
    /// outside the column and offset fields), sorted ascending.
    pub fn location_bits(&self) -> Vec<u32> {
        let mut bits: Vec<u32> = self
            .fields
            .channel
            .iter()
            .chain(&self.fields.rank)
            .chain(&self.fields.bank)
            .chain(&self.fields.row)
            .copied()
            .collect();
        bits.sort_unstable();
        bits
    }

    /// Reads a scheme from its JSON file form.
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scheme serializes")
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

fn extract(addr: u64, bits: &[u32]) -> u64 {
    let mut value = 0u64;
    for (i, &bit) in bits.iter().enumerate() {
        value |= ((addr >> bit) & 1) << i;
    }
    value
}

fn deposit(value: u64, bits: &[u32]) -> u64 {
    let mut addr = 0u64;
    for (i, &bit) in bits.iter().enumerate() {
        addr |= ((value >> i) & 1) << bit;
    }
    addr
}

/// Splits a physical address into its DRAM coordinate under `scheme`.
pub fn decompose(
    addr: u64,
    scheme: &MappingScheme,
    geom: &DramGeometry,
) -> Result<DramCoordinate, AddrMapError> {
    let capacity = geom.capacity();
    if addr >= capacity {
        return Err(AddrMapError::AddressOutOfRange { addr, capacity });
    }
    scheme.ensure_valid(geom)?;
    Ok(decompose_unchecked(addr, scheme))
}

/// `decompose` without the validity checks; callers guarantee the scheme
/// matches the geometry and the address is in range.
pub fn decompose_unchecked(addr: u64, scheme: &MappingScheme) -> DramCoordinate {
    let mut bank = extract(addr, &scheme.fields.bank);
    if let Some(sources) = &scheme.xor_bank_sources {
        bank ^= extract(addr, sources);
    }
    DramCoordinate {
        channel: extract(addr, &scheme.fields.channel),
        rank: extract(addr, &scheme.fields.rank),
        bank,
        row: extract(addr, &scheme.fields.row),
        column: extract(addr, &scheme.fields.column),
        offset: extract(addr, &scheme.fields.offset),
    }
}

/// Rebuilds the physical address from a coordinate; exact inverse of
/// [`decompose`].
pub fn compose(
    coord: &DramCoordinate,
    scheme: &MappingScheme,
    geom: &DramGeometry,
) -> Result<u64, AddrMapError> {
    if !coord.is_valid(geom) {
        return Err(AddrMapError::InvalidCoordinate { coord: *coord });
    }
    scheme.ensure_valid(geom)?;
    Ok(compose_unchecked(coord, scheme))
}

/// `compose` without the validity checks.
pub fn compose_unchecked(coord: &DramCoordinate, scheme: &MappingScheme) -> u64 {
    let mut bank = coord.bank;
    if let Some(sources) = &scheme.xor_bank_sources {
        // XOR is self-inverse; the source bits live in the row field, so the
        // row value already carries them.
        let row_addr = deposit(coord.row, &scheme.fields.row);
        bank ^= extract(row_addr, sources);
    }
    deposit(coord.channel, &scheme.fields.channel)
        | deposit(coord.rank, &scheme.fields.rank)
        | deposit(bank, &scheme.fields.bank)
        | deposit(coord.row, &scheme.fields.row)
        | deposit(coord.column, &scheme.fields.column)
        | deposit(coord.offset, &scheme.fields.offset)
}

/// Constructs one of the built-in schemes for the given geometry.
pub fn builtin_scheme(kind: SchemeKind, geom: &DramGeometry) -> MappingScheme {
    let offset_w = geom.field_width(Field::Offset);
    let column_w = geom.field_width(Field::Column);
    let bank_w = geom.field_width(Field::Bank);
    let rank_w = geom.field_width(Field::Rank);
    let channel_w = geom.field_width(Field::Channel);
    let row_w = geom.field_width(Field::Row);

    let mut next = 0u32;
    let mut take = |width: u32| -> Vec<u32> {
        let bits: Vec<u32> = (next..next + width).collect();
        next += width;
        bits
    };

    let mut fields = FieldBits::default();
    fields.offset = take(offset_w);
    match kind {
        SchemeKind::Baseline | SchemeKind::Permutation => {
            fields.column = take(column_w);
            fields.bank = take(bank_w);
            fields.rank = take(rank_w);
            fields.channel = take(channel_w);
            fields.row = take(row_w);
        }
        SchemeKind::Minimalist => {
            // Column split: the top `bank_w` column bits come from above the
            // bank field instead of directly above the offset.
            let high_w = bank_w.min(column_w);
            let low_w = column_w - high_w;
            let col_low = take(low_w);
            fields.bank = take(bank_w);
            let col_high = take(high_w);
            fields.column = col_low.into_iter().chain(col_high).collect();
            fields.rank = take(rank_w);
            fields.channel = take(channel_w);
            fields.row = take(row_w);
        }
    }

    let (scheme_id, xor_bank_sources) = match kind {
        SchemeKind::Baseline => ("baseline".to_string(), None),
        SchemeKind::Minimalist => ("minimalist".to_string(), None),
        SchemeKind::Permutation => {
            assert!(
                bank_w <= row_w,
                "permutation scheme needs at least as many row bits as bank bits"
            );
            let sources = fields.row[..bank_w as usize].to_vec();
            ("permutation".to_string(), Some(sources))
        }
    };

    MappingScheme {
        scheme_id,
        fields,
        xor_bank_sources,
    }
}

/// Generates a random valid scheme: line-offset bits stay put, every other
/// bit is shuffled across the remaining fields. Half the draws get an XOR
/// bank permutation.
pub fn random_scheme<R: Rng>(geom: &DramGeometry, id: &str, rng: &mut R) -> MappingScheme {
    let offset_w = geom.field_width(Field::Offset);
    let mut pool: Vec<u32> = (offset_w..geom.address_bits()).collect();
    pool.shuffle(rng);

    let mut fields = FieldBits::default();
    fields.offset = (0..offset_w).collect();
    let mut cursor = 0usize;
    for field in [Field::Column, Field::Bank, Field::Rank, Field::Channel, Field::Row] {
        let width = geom.field_width(field) as usize;
        let mut bits: Vec<u32> = pool[cursor..cursor + width].to_vec();
        cursor += width;
        bits.sort_unstable();
        *fields.get_mut(field) = bits;
    }

    let bank_w = geom.field_width(Field::Bank) as usize;
    let xor_bank_sources = if bank_w > 0 && bank_w <= fields.row.len() && rng.gen_bool(0.5) {
        let mut row = fields.row.clone();
        row.shuffle(rng);
        Some(row[..bank_w].to_vec())
    } else {
        None
    };

    MappingScheme {
        scheme_id: id.to_string(),
        fields,
        xor_bank_sources,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom() -> DramGeometry {
        DramGeometry::default()
    }

    #[test]
    fn default_geometry_is_4gib_with_32_address_bits() {
        let g = geom();
        g.validate().unwrap();
        assert_eq!(g.capacity(), 4 << 30);
        assert_eq!(g.address_bits(), 32);
        assert_eq!(g.row_bytes(), 8192);
    }

    #[test]
    fn baseline_layout_matches_expected_bits() {
        let s = builtin_scheme(SchemeKind::Baseline, &geom());
        assert_eq!(s.fields.offset, (0..6).collect::<Vec<_>>());
        assert_eq!(s.fields.column, (6..13).collect::<Vec<_>>());
        assert_eq!(s.fields.bank, (13..16).collect::<Vec<_>>());
        assert!(s.fields.rank.is_empty());
        assert!(s.fields.channel.is_empty());
        assert_eq!(s.fields.row, (16..32).collect::<Vec<_>>());
        assert!(s.xor_bank_sources.is_none());
        assert!(s.validate(&geom()).is_empty());
    }

    #[test]
    fn permutation_layout_xors_lowest_row_bits() {
        let s = builtin_scheme(SchemeKind::Permutation, &geom());
        assert_eq!(s.xor_bank_sources, Some(vec![16, 17, 18]));
        assert!(s.validate(&geom()).is_empty());
    }

    #[test]
    fn minimalist_layout_splits_the_column_field() {
        let s = builtin_scheme(SchemeKind::Minimalist, &geom());
        assert_eq!(s.fields.column, vec![6, 7, 8, 9, 13, 14, 15]);
        assert_eq!(s.fields.bank, vec![10, 11, 12]);
        assert_eq!(s.fields.row, (16..32).collect::<Vec<_>>());
        assert!(s.validate(&geom()).is_empty());
    }

    #[test]
    fn decompose_zero_address_gives_zero_coordinate() {
        for kind in [SchemeKind::Baseline, SchemeKind::Permutation, SchemeKind::Minimalist] {
            let s = builtin_scheme(kind, &geom());
            let c = decompose(0, &s, &geom()).unwrap();
            assert_eq!(c, DramCoordinate::default());
        }
    }

    #[test]
    fn decompose_extracts_bank_and_column() {
        let s = builtin_scheme(SchemeKind::Baseline, &geom());
        let c = decompose(0x2040, &s, &geom()).unwrap();
        assert_eq!(c.bank, 1);
        assert_eq!(c.column, 1);
        assert_eq!(c.row, 0);
        assert_eq!(c.offset, 0);
    }

    #[test]
    fn xor_scheme_permutes_the_bank_index() {
        let s = builtin_scheme(SchemeKind::Permutation, &geom());
        // Raw bank field 0b010 (bit 14), row low bits 0b101 (bits 16 and 18).
        let addr = (1u64 << 14) | (1 << 16) | (1 << 18);
        let c = decompose(addr, &s, &geom()).unwrap();
        assert_eq!(c.bank, 0b111);
        // Composing back must un-permute to the original raw bits.
        assert_eq!(compose(&c, &s, &geom()).unwrap(), addr);
    }

    #[test]
    fn compose_zero_coordinate_gives_zero_address() {
        let s = builtin_scheme(SchemeKind::Permutation, &geom());
        assert_eq!(compose(&DramCoordinate::default(), &s, &geom()).unwrap(), 0);
    }

    #[test]
    fn out_of_range_address_is_an_error() {
        let s = builtin_scheme(SchemeKind::Baseline, &geom());
        assert!(matches!(
            decompose(geom().capacity(), &s, &geom()),
            Err(AddrMapError::AddressOutOfRange { .. })
        ));
    }

    #[test]
    fn invalid_coordinate_is_an_error() {
        let s = builtin_scheme(SchemeKind::Baseline, &geom());
        let coord = DramCoordinate {
            bank: 8,
            ..DramCoordinate::default()
        };
        assert!(matches!(
            compose(&coord, &s, &geom()),
            Err(AddrMapError::InvalidCoordinate { .. })
        ));
    }

    #[test]
    fn validate_reports_overlap() {
        let mut s = builtin_scheme(SchemeKind::Baseline, &geom());
        s.fields.bank[0] = 6; // bit 6 already belongs to the column field
        let violations = s.validate(&geom());
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::OverlappingBit { bit: 6 })));
    }

    #[test]
    fn validate_reports_wrong_row_width() {
        let mut s = builtin_scheme(SchemeKind::Baseline, &geom());
        s.fields.row.pop();
        let violations = s.validate(&geom());
        assert!(violations.iter().any(|v| matches!(
            v,
            Violation::FieldWidth { field: Field::Row, got: 15, want: 16 }
        )));
        assert_eq!(
            violations
                .iter()
                .find(|v| matches!(v, Violation::FieldWidth { .. }))
                .unwrap()
                .to_string(),
            "row width 15 != 16"
        );
    }

    #[test]
    fn validate_rejects_xor_source_outside_row() {
        let mut s = builtin_scheme(SchemeKind::Permutation, &geom());
        s.xor_bank_sources = Some(vec![6, 17, 18]);
        assert!(s
            .validate(&geom())
            .iter()
            .any(|v| matches!(v, Violation::XorSourceNotRow { bit: 6 })));
    }

    #[test]
    fn scheme_json_round_trips() {
        let s = builtin_scheme(SchemeKind::Permutation, &geom());
        let text = s.to_json();
        assert_eq!(MappingScheme::from_json(&text).unwrap(), s);

        let s = builtin_scheme(SchemeKind::Baseline, &geom());
        let text = s.to_json();
        assert!(!text.contains("xor_bank_sources"));
        assert_eq!(MappingScheme::from_json(&text).unwrap(), s);
    }

    #[test]
    fn random_schemes_are_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for i in 0..50 {
            let s = random_scheme(&geom(), &format!("rand-{i}"), &mut rng);
            assert!(s.validate(&geom()).is_empty(), "scheme {i}: {:?}", s.validate(&geom()));
        }
    }
}
