//! Property tests for structural invariants that hold for arbitrary
//! inputs, not just the worked fixtures.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use cdi_core::cdag::{resolve_cycles, BuildLog, CandidateEdge, Cluster, ClusterMap};
use cdi_core::extract::{CandidateAttribute, Provenance};
use cdi_core::oracle::TopicQuery;
use cdi_core::organize::aggregate_multivalued;
use cdi_core::table::{encode, Column, Dataset, Roles};

fn dataset_from_grid(numeric: &[Vec<f64>], categorical: &[Vec<u8>]) -> Dataset {
    let n = numeric
        .first()
        .map(|c| c.len())
        .or_else(|| categorical.first().map(|c| c.len()))
        .unwrap();
    let mut columns = vec![Column::categorical(
        "id",
        (0..n).map(|i| Some(format!("k{i}"))).collect(),
    )];
    for (j, col) in numeric.iter().enumerate() {
        columns.push(Column::numeric(
            format!("n{j}"),
            col.iter().map(|&v| Some(v)).collect(),
        ));
    }
    for (j, col) in categorical.iter().enumerate() {
        columns.push(Column::categorical(
            format!("c{j}"),
            col.iter().map(|&v| Some(format!("v{v}"))).collect(),
        ));
    }
    // Roles are irrelevant for encoding; any two distinct non-key columns
    // work, and the grids always supply at least two.
    let names: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();
    let roles = Roles {
        key: "id".into(),
        exposure: names[1].clone(),
        outcome: names[names.len() - 1].clone(),
    };
    Dataset::new(columns, roles).unwrap()
}

proptest! {
    #[test]
    fn encode_is_deterministic(
        grid in proptest::collection::vec(
            proptest::collection::vec(-100.0f64..100.0, 4..9), 1..3),
        cats in proptest::collection::vec(
            proptest::collection::vec(0u8..4, 4..9), 1..3),
    ) {
        let n = grid[0].len();
        let grid: Vec<Vec<f64>> = grid.into_iter().map(|mut c| { c.resize(n, 0.0); c }).collect();
        let cats: Vec<Vec<u8>> = cats.into_iter().map(|mut c| { c.resize(n, 0); c }).collect();
        let ds = dataset_from_grid(&grid, &cats);
        let selection: Vec<String> = ds
            .column_names()
            .into_iter()
            .filter(|c| c != "id")
            .collect();
        let a = encode(&ds, &selection).unwrap();
        let b = encode(&ds, &selection).unwrap();
        prop_assert_eq!(a.data, b.data);
        prop_assert_eq!(a.kept_rows, b.kept_rows);
    }

    #[test]
    fn encode_permutation_moves_numeric_rows_together(
        col in proptest::collection::vec(-100.0f64..100.0, 4..9),
        seed in 0u64..1000,
    ) {
        let n = col.len();
        // Deterministic permutation derived from the seed.
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (s >> 33) as usize % (i + 1);
            order.swap(i, j);
        }
        let permuted: Vec<f64> = order.iter().map(|&i| col[i]).collect();
        let ds1 = dataset_from_grid(&[col.clone(), col.clone()], &[]);
        let ds2 = dataset_from_grid(&[permuted.clone(), permuted], &[]);
        let sel = vec!["n0".to_string()];
        let a = encode(&ds1, &sel).unwrap();
        let b = encode(&ds2, &sel).unwrap();
        for (new_pos, &old_pos) in order.iter().enumerate() {
            prop_assert_eq!(b.data[(new_pos, 0)], a.data[(old_pos, 0)]);
        }
    }

    #[test]
    fn categorical_coding_partition_is_permutation_invariant(
        col in proptest::collection::vec(0u8..4, 4..9),
    ) {
        let reversed: Vec<u8> = col.iter().rev().copied().collect();
        let ds1 = dataset_from_grid(&[vec![0.0; col.len()]], &[col.clone()]);
        let ds2 = dataset_from_grid(&[vec![0.0; col.len()]], &[reversed.clone()]);
        let sel = vec!["c0".to_string()];
        let a = encode(&ds1, &sel).unwrap();
        let b = encode(&ds2, &sel).unwrap();
        // Same-value rows share a code in both encodings.
        let n = col.len();
        for i in 0..n {
            for j in 0..n {
                let same_orig = col[i] == col[j];
                let same_a = a.data[(i, 0)] == a.data[(j, 0)];
                let same_b = b.data[(n - 1 - i, 0)] == b.data[(n - 1 - j, 0)];
                prop_assert_eq!(same_orig, same_a);
                prop_assert_eq!(same_orig, same_b);
            }
        }
    }

    #[test]
    fn cycle_resolution_always_acyclic(
        raw_edges in proptest::collection::btree_set((0usize..5, 0usize..5), 0..16),
        ps in proptest::collection::vec(0.0f64..1.0, 16),
    ) {
        let clusters: Vec<Cluster> = (0..5)
            .map(|id| Cluster {
                id,
                topic: format!("t{id}"),
                members: [format!("t{id}")].into_iter().collect(),
            })
            .collect();
        let map = ClusterMap { clusters, exposure_cluster: 0, outcome_cluster: 1 };
        let edges: Vec<CandidateEdge> = raw_edges
            .into_iter()
            .filter(|&(a, b)| a != b)
            .enumerate()
            .map(|(i, (from, to))| CandidateEdge {
                from,
                to,
                oracle_confidence: 0.5,
                prune_p: Some(ps[i % ps.len()]),
            })
            .collect();
        let n_in = edges.len();
        let mut log = BuildLog::default();
        let cdag = resolve_cycles(edges, &map, &mut log);
        // Acyclic output, and deletions account for every lost edge.
        prop_assert!(cdag.to_cluster_dag().is_ok());
        prop_assert_eq!(cdag.edges.len() + log.cycle_deletions.len(), n_in);
    }

    #[test]
    fn aggregation_always_single_valued_and_bounded(
        cells in proptest::collection::vec(
            proptest::collection::vec(0u32..1000, 0..4), 2..8),
    ) {
        let candidate = CandidateAttribute {
            name: "x".into(),
            values: cells
                .iter()
                .map(|c| c.iter().map(|v| format!("{v}")).collect())
                .collect(),
            provenance: Provenance::Kg { predicate: "x".into(), hop: 1 },
        };
        let out = aggregate_multivalued(&candidate);
        for attr in &out {
            for (row, cell) in attr.values.iter().enumerate() {
                prop_assert!(cell.len() <= 1);
                prop_assert_eq!(cell.is_empty(), cells[row].is_empty());
            }
        }
        // Numeric means stay within the original cell's range.
        let agg = &out[0];
        for (row, cell) in agg.values.iter().enumerate() {
            if let Some(v) = cell.first() {
                let mean: f64 = v.parse().unwrap();
                let lo = *cells[row].iter().min().unwrap() as f64;
                let hi = *cells[row].iter().max().unwrap() as f64;
                prop_assert!(mean >= lo - 1e-9 && mean <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn topic_key_is_order_insensitive(
        labels in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6})?", 1..5),
    ) {
        let forward = TopicQuery::new(labels.clone());
        let mut rev = labels.clone();
        rev.reverse();
        let backward = TopicQuery::new(rev);
        prop_assert_eq!(forward.canonical_key(), backward.canonical_key());
    }
}

#[test]
fn weights_map_type_is_exported() {
    // Compile-time check that the public surface wires together: an
    // augmented dataset's weights feed estimation.
    let _: BTreeMap<String, cdi_core::organize::WeightVector> = BTreeMap::new();
    let _: BTreeSet<usize> = BTreeSet::new();
}
