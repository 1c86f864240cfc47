use proptest::prelude::*;

use super::*;
use SegmentRole::*;

fn roles_of(layout: &TokenLayout) -> Vec<(SegmentRole, usize)> {
    layout.segments().iter().map(|s| (s.role, s.len)).collect()
}

#[test]
fn single_turn_layout() {
    let l = build_layout(1, 4, 1, 3, 2, 0, false).unwrap();
    assert_eq!(
        roles_of(&l),
        vec![(Instruction, 4), (Memory, 1), (Ctxt(0), 3), (Act(0), 2)]
    );
    assert_eq!(l.total(), 10);
}

#[test]
fn two_turn_layout_with_queries_orders_segments() {
    let l = build_layout(2, 2, 1, 2, 4, 1, true).unwrap();
    let order: Vec<SegmentRole> = l.segments().iter().map(|s| s.role).collect();
    assert_eq!(
        order,
        vec![
            Instruction,
            Memory,
            Ctxt(0),
            Act(0),
            Query2D(0),
            Query3D(0),
            Ctxt(1),
            Act(1),
            Query2D(1),
            Query3D(1)
        ]
    );
}

#[test]
fn nine_queries_per_modality_segments() {
    let l = build_layout(8, 10, 8, 16, 4, 9, true).unwrap();
    for t in 0..8 {
        assert_eq!(l.segment(Query2D(t)).unwrap().len, 9);
        assert_eq!(l.segment(Query3D(t)).unwrap().len, 9);
    }
}

#[test]
fn zero_lengths_are_rejected() {
    assert!(matches!(
        build_layout(1, 0, 1, 1, 1, 0, false),
        Err(LayoutError::ZeroLength { role: Instruction })
    ));
    assert!(build_layout(2, 1, 1, 1, 1, 0, true).is_err());
    assert_eq!(build_layout(0, 1, 1, 1, 1, 0, false), Err(LayoutError::NoTurns));
}

#[test]
fn explicit_layouts_validate_order() {
    assert!(TokenLayout::new(&[(Instruction, 2), (Ctxt(0), 1), (Act(0), 1)]).is_ok());
    assert!(TokenLayout::new(&[(Memory, 2), (Ctxt(0), 1), (Act(0), 1)]).is_err());
    assert!(TokenLayout::new(&[(Instruction, 2), (Ctxt(1), 1), (Act(1), 1)]).is_err());
    assert!(TokenLayout::new(&[(Instruction, 1), (Ctxt(0), 1), (Act(0), 1), (Query3D(0), 1)]).is_err());
    // queries on one turn only
    assert!(TokenLayout::new(&[
        (Instruction, 1),
        (Ctxt(0), 1),
        (Act(0), 1),
        (Query2D(0), 1),
        (Query3D(0), 1),
        (Ctxt(1), 1),
        (Act(1), 1),
    ])
    .is_err());
}

#[test]
fn single_turn_no_queries_is_lower_triangular() {
    let l = build_layout(1, 3, 2, 4, 4, 0, false).unwrap();
    for v in MaskVariant::ALL {
        let m = build_mask(&l, v);
        assert_eq!(m, AttentionMask::from_fn(l.total(), |q, k| k <= q));
    }
}

#[test]
fn strict_matches_oracle_on_two_turns() {
    let l = build_layout(2, 2, 1, 2, 4, 1, true).unwrap();
    assert_eq!(build_mask(&l, MaskVariant::Strict), check_mask_oracle(&l, MaskVariant::Strict));
}

#[test]
fn strict_navigation_submatrix_equals_stripped_mask() {
    let l = build_layout(3, 2, 2, 3, 4, 2, true).unwrap();
    let strict = build_mask(&l, MaskVariant::Strict);
    let stripped = strip_queries(&l);
    assert_eq!(
        strict.principal(&l.navigation_positions()),
        build_mask(&stripped, MaskVariant::Strict)
    );
}

#[test]
fn strip_queries_cases() {
    let l = build_layout(2, 3, 1, 4, 4, 3, true).unwrap();
    let s = strip_queries(&l);
    assert_eq!(s, build_layout(2, 3, 1, 4, 4, 0, false).unwrap());
    assert_eq!(strip_queries(&s), s);
    assert_eq!(l.total() - s.total(), 2 * 2 * 3);
}

#[test]
fn isolated_queries_see_only_themselves_in_segment() {
    let l = build_layout(2, 1, 1, 1, 1, 3, true).unwrap();
    let m = build_mask_with(&l, MaskVariant::Strict, QuerySelfAttention::Isolated);
    assert_eq!(
        m,
        check_mask_oracle_with(&l, MaskVariant::Strict, QuerySelfAttention::Isolated)
    );
    let q = l.segment(Query2D(1)).unwrap();
    assert!(!m.allows(q.start + 1, q.start));
    assert!(m.allows(q.start + 1, q.start + 1));
}

#[test]
fn ascii_and_pgm_dumps() {
    let l = build_layout(1, 1, 1, 1, 1, 0, false).unwrap();
    let m = build_mask(&l, MaskVariant::Strict);
    assert_eq!(m.to_ascii(), "1...\n11..\n111.\n1111\n");
    let pgm = m.to_pgm();
    assert!(pgm.starts_with("P2\n4 4\n255\n"));
    assert_eq!(pgm.lines().count(), 3 + 4);
}

fn arb_layout() -> impl Strategy<Value = TokenLayout> {
    (1usize..=8, 1usize..=6, 1usize..=6, 1usize..=6, 1usize..=6, 1usize..=3).prop_map(
        |(turns, li, lm, lc, la, q)| build_layout(turns, li, lm, lc, la, q, true).unwrap(),
    )
}

fn query_pairs(l: &TokenLayout) -> Vec<(usize, usize, SegmentRole, SegmentRole)> {
    let roles = l.roles();
    let mut out = Vec::new();
    for q in 0..roles.len() {
        for k in 0..roles.len() {
            out.push((q, k, roles[q], roles[k]));
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compiled_mask_equals_oracle(l in arb_layout()) {
        for v in MaskVariant::ALL {
            prop_assert_eq!(build_mask(&l, v), check_mask_oracle(&l, v));
        }
    }

    #[test]
    fn no_future_leakage(l in arb_layout()) {
        for v in MaskVariant::ALL {
            let m = build_mask(&l, v);
            for q in 0..l.total() {
                for k in q + 1..l.total() {
                    prop_assert!(!m.allows(q, k));
                }
                if l.role_at(q).unwrap().is_navigation() {
                    prop_assert!(m.allows(q, q));
                }
            }
        }
    }

    #[test]
    fn strict_isolation_properties(l in arb_layout()) {
        let m = build_mask(&l, MaskVariant::Strict);
        for (q, k, rq, rk) in query_pairs(&l) {
            if !m.allows(q, k) {
                continue;
            }
            prop_assert!(!(rq.is_navigation() && rk.is_query()));
            if rq.is_query() && rk.is_query() {
                prop_assert_eq!(rq, rk, "query {} attends {}", rq, rk);
            }
            if let (Some(tq), Some(tk)) = (rq.turn(), rk.turn()) {
                if rq.is_query() {
                    prop_assert!(tk <= tq);
                }
            }
        }
        let stripped = strip_queries(&l);
        prop_assert_eq!(
            m.principal(&l.navigation_positions()),
            build_mask(&stripped, MaskVariant::Strict)
        );
    }

    #[test]
    fn noisolation_differs_only_on_same_turn_cross_modality(l in arb_layout()) {
        let strict = build_mask(&l, MaskVariant::Strict);
        let noiso = build_mask(&l, MaskVariant::NoIsolation);
        for (q, k, rq, rk) in query_pairs(&l) {
            let expected_extra = matches!((rq, rk), (Query3D(a), Query2D(b)) if a == b);
            prop_assert!(!(strict.allows(q, k) && !noiso.allows(q, k)));
            prop_assert_eq!(noiso.allows(q, k) && !strict.allows(q, k), expected_extra);
        }
    }

    #[test]
    fn leaky_lets_navigation_read_queries(l in arb_layout()) {
        let m = build_mask(&l, MaskVariant::Leaky);
        let count = query_pairs(&l)
            .into_iter()
            .filter(|&(q, k, rq, rk)| m.allows(q, k) && rq.is_navigation() && rk.is_query())
            .count();
        prop_assert_eq!(count > 0, l.num_turns() >= 2);
    }
}
