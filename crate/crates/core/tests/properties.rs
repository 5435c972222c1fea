//! Property tests for the structural invariants: encoding round trips,
//! block-triangularity, relabeling stability, and move/inverse symmetries.

use proptest::prelude::*;

use movecalc::ext::Ext;
use movecalc::graph::Graph;
use movecalc::moves::{apply_move, collect_sources, insplit, Move};
use movecalc::pair::{from_db, to_db, DbPair};
use movecalc::VertexClass;

fn arb_ext(max: i64, with_inf: bool) -> impl Strategy<Value = Ext> {
    if with_inf {
        prop_oneof![
            3 => (0..=max).prop_map(Ext::Fin),
            1 => Just(Ext::Inf),
        ]
        .boxed()
    } else {
        (0..=max).prop_map(Ext::Fin).boxed()
    }
}

fn arb_graph(max_n: usize, with_inf: bool) -> impl Strategy<Value = Graph> {
    (1..=max_n).prop_flat_map(move |n| {
        proptest::collection::vec(proptest::collection::vec(arb_ext(3, with_inf), n), n)
            .prop_map(|adj| Graph::from_adjacency(adj).unwrap())
    })
}

/// Valid pairs: derived from graphs so every invariant holds by
/// construction, with freshly chosen antenna counts.
fn arb_pair(max_n: usize, with_inf: bool) -> impl Strategy<Value = DbPair> {
    (
        arb_graph(max_n, with_inf),
        proptest::collection::vec(1i64..=5, max_n),
    )
        .prop_filter_map("graph must have indexed vertices", |(g, ds)| {
            let mut p = to_db(&g).ok()?;
            for (v, d) in p.d.iter_mut().zip(ds) {
                *v = d;
            }
            // No indexed vertex may be left as a bare source.
            for v in 0..p.n() {
                let empty = (0..p.n()).all(|j| {
                    let base = if j == v { Ext::Fin(-1) } else { Ext::ZERO };
                    p.b[v][j] == base
                });
                if empty && p.d[v] == 1 {
                    p.d[v] = 2;
                }
            }
            p.validate().ok()?;
            Some(p)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Round trip: the pair encoding is exact in both directions.
    #[test]
    fn pair_round_trip(p in arb_pair(5, true)) {
        let g = from_db(&p).unwrap();
        prop_assert_eq!(to_db(&g).unwrap(), p);
    }

    /// Transposition law: in collected shape, b[i][j] + delta = a[j][i].
    #[test]
    fn transposition_law(p in arb_pair(5, true)) {
        let g = from_db(&p).unwrap();
        let off = g.regular_sources().first().map_or(0, |_| 1);
        for i in 0..p.n() {
            for j in 0..p.n() {
                let delta = i64::from(i == j);
                let lhs = p.b[i][j].add(Ext::Fin(delta)).unwrap();
                prop_assert_eq!(lhs, g.entry(j + off, i + off));
            }
        }
    }

    /// Source collection is idempotent and never touches the non-source
    /// subgraph.
    #[test]
    fn collect_sources_idempotent(g in arb_graph(5, true)) {
        let (once, _) = collect_sources(&g).unwrap();
        let (twice, script) = collect_sources(&once).unwrap();
        prop_assert!(script.is_empty());
        prop_assert!(once.same_shape(&twice));

        let sources_before = g.regular_sources();
        let keep: Vec<usize> = (0..g.n()).filter(|v| !sources_before.contains(v)).collect();
        let sources_after = once.regular_sources();
        let keep_after: Vec<usize> =
            (0..once.n()).filter(|v| !sources_after.contains(v)).collect();
        prop_assert_eq!(keep.len(), keep_after.len());
        for (a, b) in keep.iter().zip(&keep_after) {
            for (c, d) in keep.iter().zip(&keep_after) {
                prop_assert_eq!(g.entry(*a, *c), once.entry(*b, *d));
            }
        }
    }

    /// Component structure only depends on the graph up to relabeling.
    #[test]
    fn components_relabeling(g in arb_graph(5, true), seed in any::<u64>()) {
        let n = g.n();
        let mut perm: Vec<usize> = (0..n).collect();
        // cheap deterministic shuffle
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (s >> 33) as usize % (i + 1);
            perm.swap(i, j);
        }
        let adj2: Vec<Vec<Ext>> = (0..n)
            .map(|i| (0..n).map(|j| g.entry(perm[i], perm[j])).collect())
            .collect();
        let g2 = Graph::from_adjacency(adj2).unwrap();
        let c1 = g.components();
        let c2 = g2.components();
        prop_assert_eq!(c1.count(), c2.count());
        for i in 0..n {
            for j in 0..n {
                let a1 = c1.component_of(perm[i]);
                let b1 = c1.component_of(perm[j]);
                let a2 = c2.component_of(i);
                let b2 = c2.component_of(j);
                prop_assert_eq!(a1 == b1, a2 == b2);
                prop_assert_eq!(c1.leq(a1, b1), c2.leq(a2, b2));
            }
        }
    }

    /// B lies in the block pattern of its own component structure after
    /// block reordering.
    #[test]
    fn b_is_block_triangular(p in arb_pair(5, true)) {
        let reordered = p.block_reordered();
        let pattern = reordered.components().block_pattern();
        prop_assert!(pattern.contains_ext(&reordered.b));
    }

    /// Outsplit duplicates in-edges, so unsplit vertices keep their
    /// in-column totals; insplit copies out-rows, so unsplit vertices keep
    /// their out-row totals.
    #[test]
    fn split_totals(g in arb_graph(4, false), pick in any::<u64>()) {
        let n = g.n();
        let classes = g.classes();
        let w = (pick as usize) % n;
        // Outsplit: halve the row if possible.
        if classes[w] != VertexClass::Sink {
            let row = g.out_row(w).to_vec();
            let half: Vec<Ext> = row
                .iter()
                .map(|e| Ext::Fin(e.finite().unwrap() / 2))
                .collect();
            let rest: Vec<Ext> = row
                .iter()
                .zip(&half)
                .map(|(e, h)| e.sub(*h).unwrap())
                .collect();
            let nonempty = |p: &[Ext]| p.iter().any(|e| e.is_positive());
            if nonempty(&half) && nonempty(&rest) {
                let out = apply_move(&g, &Move::Outsplit { vertex: w, parts: vec![half, rest] })
                    .unwrap();
                for v in 0..n {
                    if v == w {
                        continue;
                    }
                    let before = Ext::checked_sum(g.in_column(v)).unwrap();
                    let target = out.vmap[v][0];
                    let after =
                        Ext::checked_sum(out.graph.in_column(target)).unwrap();
                    prop_assert_eq!(before, after);
                }
            }
        }
        // Insplit at a regular vertex.
        if classes[w] == VertexClass::Regular {
            let col = g.in_column(w);
            let half: Vec<Ext> = col
                .iter()
                .map(|e| Ext::Fin(e.finite().unwrap() / 2))
                .collect();
            let rest: Vec<Ext> = col
                .iter()
                .zip(&half)
                .map(|(e, h)| e.sub(*h).unwrap())
                .collect();
            let split = insplit(&g, w, &[half, rest]).unwrap();
            for v in 0..n {
                if v == w {
                    continue;
                }
                let shifted = if v < w { v } else { v + 1 };
                let before = Ext::checked_sum(g.out_row(v).iter().copied()).unwrap();
                let after =
                    Ext::checked_sum(split.out_row(shifted).iter().copied()).unwrap();
                prop_assert_eq!(before, after);
            }
        }
    }

    /// Reduction only trades one regular loop-free vertex for a regular
    /// source; all other class counts are preserved.
    #[test]
    fn reduction_class_multiset(g in arb_graph(5, true), pick in any::<u64>()) {
        let classes = g.classes();
        let cands: Vec<usize> = (0..g.n())
            .filter(|&v| classes[v].is_regular() && !g.entry(v, v).is_positive()
                && classes[v] != VertexClass::RegularSource)
            .collect();
        prop_assume!(!cands.is_empty());
        let w = cands[(pick as usize) % cands.len()];
        let out = apply_move(&g, &Move::Rplus { vertex: w }).unwrap();
        let count = |cs: &[VertexClass], k: VertexClass| cs.iter().filter(|&&c| c == k).count();
        let before = g.classes();
        let after = out.graph.classes();
        prop_assert_eq!(
            count(&before, VertexClass::Regular) - 1,
            count(&after, VertexClass::Regular)
        );
        prop_assert_eq!(
            count(&before, VertexClass::RegularSource) + 1,
            count(&after, VertexClass::RegularSource)
        );
        prop_assert_eq!(count(&before, VertexClass::Sink), count(&after, VertexClass::Sink));
        prop_assert_eq!(
            count(&before, VertexClass::InfiniteEmitter),
            count(&after, VertexClass::InfiniteEmitter)
        );
    }

    /// Script serialization is lossless.
    #[test]
    fn script_serialization_round_trip(
        kinds in proptest::collection::vec(0u8..5, 1..6),
        nums in proptest::collection::vec(0usize..4, 6),
    ) {
        use movecalc::MoveScript;
        let steps: Vec<Move> = kinds
            .iter()
            .map(|k| match k {
                0 => Move::Outsplit {
                    vertex: nums[0],
                    parts: vec![vec![Ext::Fin(1), Ext::Inf]],
                },
                1 => Move::OutsplitInverse { group: vec![nums[1], nums[1] + 1] },
                2 => Move::IplusRedistribute {
                    group: vec![nums[2]],
                    columns: vec![vec![Ext::Fin(2)]],
                },
                3 => Move::Rplus { vertex: nums[3] },
                _ => Move::RplusInverse {
                    vertex: nums[4],
                    spec: vec![Ext::ZERO, Ext::Fin(3)],
                },
            })
            .collect();
        let script = MoveScript::new(steps);
        prop_assert_eq!(MoveScript::from_jsonl(&script.to_jsonl()).unwrap(), script);
    }
}
