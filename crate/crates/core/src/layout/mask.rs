use std::fmt::Write as _;

use super::{LayoutError, MaskVariant, QuerySelfAttention, Segment, SegmentRole, TokenLayout};

/// Square boolean matrix; `(q, k) == true` means token `q` may attend token `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    dim: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut allowed = Vec::with_capacity(dim * dim);
        for q in 0..dim {
            for k in 0..dim {
                allowed.push(f(q, k));
            }
        }
        AttentionMask { dim, allowed }
    }

    fn empty(dim: usize) -> Self {
        AttentionMask {
            dim,
            allowed: vec![false; dim * dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allowed[q * self.dim + k]
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }

    pub fn count_allowed(&self) -> usize {
        self.allowed.iter().filter(|&&a| a).count()
    }

    /// Rectangular row-major sub-block selecting `rows` × `cols`.
    pub fn select(&self, rows: &[usize], cols: &[usize]) -> Vec<bool> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for &r in rows {
            for &c in cols {
                out.push(self.allows(r, c));
            }
        }
        out
    }

    /// Principal submatrix on `idx` as a new square mask.
    pub fn principal(&self, idx: &[usize]) -> AttentionMask {
        AttentionMask {
            dim: idx.len(),
            allowed: self.select(idx, idx),
        }
    }

    /// One text row per query token: `1` = may attend, `.` = masked.
    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(self.dim * (self.dim + 1));
        for q in 0..self.dim {
            for k in 0..self.dim {
                s.push(if self.allows(q, k) { '1' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    /// Plain (P2) PGM, one pixel per entry, 255 = may attend.
    pub fn to_pgm(&self) -> String {
        let mut s = format!("P2\n{} {}\n255\n", self.dim, self.dim);
        for q in 0..self.dim {
            for k in 0..self.dim {
                if k > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", if self.allows(q, k) { 255 } else { 0 });
            }
            s.push('\n');
        }
        s
    }

    fn fill_full(&mut self, rows: &Segment, cols: &Segment) {
        for q in rows.start..rows.end() {
            self.allowed[q * self.dim + cols.start..q * self.dim + cols.end()].fill(true);
        }
    }

    fn fill_causal_block(&mut self, seg: &Segment) {
        for (i, q) in (seg.start..seg.end()).enumerate() {
            let base = q * self.dim + seg.start;
            self.allowed[base..=base + i].fill(true);
        }
    }

    fn fill_diagonal(&mut self, seg: &Segment) {
        for q in seg.start..seg.end() {
            self.allowed[q * self.dim + q] = true;
        }
    }
}

pub fn build_mask(layout: &TokenLayout, variant: MaskVariant) -> AttentionMask {
    build_mask_with(layout, variant, QuerySelfAttention::Causal)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Block {
    None,
    Full,
    SelfCausal,
}

/// Compile a mask segment-block by segment-block.
pub fn build_mask_with(
    layout: &TokenLayout,
    variant: MaskVariant,
    within_query: QuerySelfAttention,
) -> AttentionMask {
    let n = layout.total();
    if variant == MaskVariant::Leaky {
        return AttentionMask::from_fn(n, |q, k| k <= q);
    }
    let mut mask = AttentionMask::empty(n);
    let segs = layout.segments();
    for (ri, rows) in segs.iter().enumerate() {
        for cols in &segs[..=ri] {
            match block_rule(rows.role, cols.role, variant) {
                Block::None => {}
                Block::Full if cols.start < rows.start => mask.fill_full(rows, cols),
                Block::Full => {}
                Block::SelfCausal => {
                    if rows.role.is_query() && within_query == QuerySelfAttention::Isolated {
                        mask.fill_diagonal(rows);
                    } else {
                        mask.fill_causal_block(rows);
                    }
                }
            }
        }
    }
    mask
}

/// Relationship between a row segment and a column segment that starts no
/// later than it.
fn block_rule(row: SegmentRole, col: SegmentRole, variant: MaskVariant) -> Block {
    if row == col {
        return Block::SelfCausal;
    }
    match (row.is_query(), col.is_query()) {
        (false, false) => Block::Full,
        (false, true) => Block::None,
        // Every navigation segment preceding a query segment belongs to its
        // turn or an earlier one (or the prefix).
        (true, false) => Block::Full,
        (true, true) => {
            let same_turn = row.turn() == col.turn();
            if variant == MaskVariant::NoIsolation && same_turn {
                Block::Full
            } else {
                Block::None
            }
        }
    }
}

impl TokenLayout {
    pub fn check_mask_dim(&self, mask: &AttentionMask) -> Result<(), LayoutError> {
        if mask.dim() != self.total() {
            return Err(LayoutError::DimMismatch {
                mask: mask.dim(),
                layout: self.total(),
            });
        }
        Ok(())
    }
}
