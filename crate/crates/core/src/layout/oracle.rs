//! Reference mask: evaluates the attention rules token pair by token pair.
//! Shares nothing with the block compiler in `mask.rs` beyond the layout type.

use super::{AttentionMask, MaskVariant, QuerySelfAttention, SegmentRole, TokenLayout};

pub fn check_mask_oracle(layout: &TokenLayout, variant: MaskVariant) -> AttentionMask {
    check_mask_oracle_with(layout, variant, QuerySelfAttention::Causal)
}

pub fn check_mask_oracle_with(
    layout: &TokenLayout,
    variant: MaskVariant,
    within_query: QuerySelfAttention,
) -> AttentionMask {
    let roles = layout.roles();
    AttentionMask::from_fn(roles.len(), |q, k| {
        may_attend(variant, within_query, q, roles[q], k, roles[k])
    })
}

fn may_attend(
    variant: MaskVariant,
    within_query: QuerySelfAttention,
    q: usize,
    q_role: SegmentRole,
    k: usize,
    k_role: SegmentRole,
) -> bool {
    // nothing ever looks ahead
    if k > q {
        return false;
    }
    if variant == MaskVariant::Leaky {
        return true;
    }
    let (q_turn, q_is_2d) = match q_role {
        SegmentRole::Query2D(t) => (t, true),
        SegmentRole::Query3D(t) => (t, false),
        // navigation rows: causal over navigation columns only
        _ => {
            return !matches!(k_role, SegmentRole::Query2D(_) | SegmentRole::Query3D(_));
        }
    };
    match k_role {
        SegmentRole::Instruction | SegmentRole::Memory => true,
        SegmentRole::Ctxt(t) | SegmentRole::Act(t) => t <= q_turn,
        SegmentRole::Query2D(t) | SegmentRole::Query3D(t) => {
            let k_is_2d = matches!(k_role, SegmentRole::Query2D(_));
            if t != q_turn {
                return false;
            }
            if k_is_2d == q_is_2d {
                match within_query {
                    QuerySelfAttention::Causal => true,
                    QuerySelfAttention::Isolated => k == q,
                }
            } else {
                variant == MaskVariant::NoIsolation
            }
        }
    }
}
