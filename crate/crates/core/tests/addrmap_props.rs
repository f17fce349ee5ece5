//! Property tests for address translation: bijectivity, XOR relabeling,
//! and field disjointness.

use dream_core::addrmap::{
    builtin_scheme, compose_unchecked, decompose_unchecked, random_scheme, DramCoordinate,
    DramGeometry, SchemeKind,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn geom() -> DramGeometry {
    DramGeometry::default()
}

fn scheme_strategy() -> impl Strategy<Value = dream_core::addrmap::MappingScheme> {
    // Three builtins plus seeded random layouts.
    prop_oneof![
        Just(builtin_scheme(SchemeKind::Baseline, &geom())),
        Just(builtin_scheme(SchemeKind::Permutation, &geom())),
        Just(builtin_scheme(SchemeKind::Minimalist, &geom())),
        (0u64..1_000_000).prop_map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            random_scheme(&geom(), &format!("prop-{seed}"), &mut rng)
        }),
    ]
}

fn coord_strategy() -> impl Strategy<Value = DramCoordinate> {
    let g = geom();
    (
        0..g.banks_per_rank,
        0..g.rows_per_bank,
        0..g.columns_per_row,
        0..g.line_size,
    )
        .prop_map(|(bank, row, column, offset)| DramCoordinate {
            channel: 0,
            rank: 0,
            bank,
            row,
            column,
            offset,
        })
}

proptest! {
    #[test]
    fn compose_inverts_decompose(scheme in scheme_strategy(), addr in 0u64..(4u64 << 30)) {
        prop_assert!(scheme.validate(&geom()).is_empty());
        let coord = decompose_unchecked(addr, &scheme);
        prop_assert!(coord.is_valid(&geom()));
        prop_assert_eq!(compose_unchecked(&coord, &scheme), addr);
    }

    #[test]
    fn decompose_inverts_compose(scheme in scheme_strategy(), coord in coord_strategy()) {
        let addr = compose_unchecked(&coord, &scheme);
        prop_assert!(addr < geom().capacity());
        prop_assert_eq!(decompose_unchecked(addr, &scheme), coord);
    }

    #[test]
    fn xor_variant_changes_only_the_bank(addr in 0u64..(4u64 << 30)) {
        let base = builtin_scheme(SchemeKind::Baseline, &geom());
        let xor = builtin_scheme(SchemeKind::Permutation, &geom());
        let a = decompose_unchecked(addr, &base);
        let b = decompose_unchecked(addr, &xor);
        prop_assert_eq!(a.row, b.row);
        prop_assert_eq!(a.column, b.column);
        prop_assert_eq!(a.offset, b.offset);
        prop_assert_eq!(a.channel, b.channel);
        prop_assert_eq!(a.rank, b.rank);
        prop_assert_eq!(b.bank, a.bank ^ (a.row & 0b111));
    }

    #[test]
    fn single_bit_flip_changes_exactly_one_field(
        seed in 0u64..100_000,
        addr in 0u64..(4u64 << 30),
        bit in 0u32..32,
    ) {
        // Holds for schemes without an XOR permutation; with one, a source
        // bit flip legitimately relabels the bank as well.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scheme = random_scheme(&geom(), "flip", &mut rng);
        scheme.xor_bank_sources = None;
        let a = decompose_unchecked(addr, &scheme);
        let b = decompose_unchecked(addr ^ (1 << bit), &scheme);
        let diffs = [
            a.channel != b.channel,
            a.rank != b.rank,
            a.bank != b.bank,
            a.row != b.row,
            a.column != b.column,
            a.offset != b.offset,
        ]
        .iter()
        .filter(|&&d| d)
        .count();
        prop_assert_eq!(diffs, 1);
    }
}
