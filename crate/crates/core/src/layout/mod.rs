//! Token layouts for the multi-turn streaming dialogue and the attention masks
//! compiled from them.
//!
//! A layout is an ordered list of segments: the instruction, optional
//! long-term memory, then per turn `Ctxt_i, Act_i` optionally followed by the
//! turn's 2D and 3D stream-query segments. Navigation tokens (instruction,
//! memory, context, action) form an ordinary causal stream; query tokens read
//! from it but are never read by it.

mod mask;
mod oracle;

use std::fmt;

use thiserror::Error;

pub use mask::{build_mask, build_mask_with, AttentionMask};
pub use oracle::{check_mask_oracle, check_mask_oracle_with};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("segment {role} has zero length")]
    ZeroLength { role: SegmentRole },
    #[error("{0}")]
    Order(String),
    #[error("layout must contain at least one turn")]
    NoTurns,
    #[error("mask dimension {mask} does not match layout token count {layout}")]
    DimMismatch { mask: usize, layout: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SegmentRole {
    Instruction,
    Memory,
    Ctxt(usize),
    Act(usize),
    Query2D(usize),
    Query3D(usize),
}

impl SegmentRole {
    pub fn is_navigation(self) -> bool {
        !self.is_query()
    }

    pub fn is_query(self) -> bool {
        matches!(self, SegmentRole::Query2D(_) | SegmentRole::Query3D(_))
    }

    /// Turn index; the instruction/memory prefix belongs to no turn.
    pub fn turn(self) -> Option<usize> {
        match self {
            SegmentRole::Instruction | SegmentRole::Memory => None,
            SegmentRole::Ctxt(t)
            | SegmentRole::Act(t)
            | SegmentRole::Query2D(t)
            | SegmentRole::Query3D(t) => Some(t),
        }
    }
}

impl fmt::Display for SegmentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SegmentRole::Instruction => write!(f, "Instruction"),
            SegmentRole::Memory => write!(f, "Memory"),
            SegmentRole::Ctxt(t) => write!(f, "Ctxt{t}"),
            SegmentRole::Act(t) => write!(f, "Act{t}"),
            SegmentRole::Query2D(t) => write!(f, "Query2D{t}"),
            SegmentRole::Query3D(t) => write!(f, "Query3D{t}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskVariant {
    /// Turn isolation and modality disentanglement for query tokens.
    Strict,
    /// Plain causal mask over the interleaved sequence.
    Leaky,
    /// Strict, except same-turn 2D/3D queries see each other causally.
    NoIsolation,
}

impl MaskVariant {
    pub const ALL: [MaskVariant; 3] = [MaskVariant::Strict, MaskVariant::Leaky, MaskVariant::NoIsolation];

    pub fn name(self) -> &'static str {
        match self {
            MaskVariant::Strict => "strict",
            MaskVariant::Leaky => "leaky",
            MaskVariant::NoIsolation => "noiso",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "strict" => Some(MaskVariant::Strict),
            "leaky" => Some(MaskVariant::Leaky),
            "noiso" | "noisolation" => Some(MaskVariant::NoIsolation),
            _ => None,
        }
    }
}

/// How a query token relates to the other tokens of its own segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QuerySelfAttention {
    #[default]
    Causal,
    /// Each query token sees only itself among its segment.
    Isolated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub role: SegmentRole,
    pub start: usize,
    pub len: usize,
}

impl Segment {
    pub fn end(&self) -> usize {
        self.start + self.len
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    segments: Vec<Segment>,
    total: usize,
    num_turns: usize,
    has_queries: bool,
}

impl TokenLayout {
    /// Validate and index an explicit segment list.
    pub fn new(parts: &[(SegmentRole, usize)]) -> Result<Self, LayoutError> {
        let mut segments = Vec::with_capacity(parts.len());
        let mut start = 0;
        for &(role, len) in parts {
            if len == 0 {
                return Err(LayoutError::ZeroLength { role });
            }
            segments.push(Segment { role, start, len });
            start += len;
        }
        let (num_turns, has_queries) = validate_order(parts)?;
        Ok(TokenLayout {
            segments,
            total: start,
            num_turns,
            has_queries,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn num_turns(&self) -> usize {
        self.num_turns
    }

    pub fn has_queries(&self) -> bool {
        self.has_queries
    }

    pub fn segment(&self, role: SegmentRole) -> Option<&Segment> {
        self.segments.iter().find(|s| s.role == role)
    }

    /// Role of every token position.
    pub fn roles(&self) -> Vec<SegmentRole> {
        let mut out = Vec::with_capacity(self.total);
        for s in &self.segments {
            out.extend(std::iter::repeat(s.role).take(s.len));
        }
        out
    }

    pub fn role_at(&self, pos: usize) -> Option<SegmentRole> {
        self.segments
            .iter()
            .find(|s| pos >= s.start && pos < s.end())
            .map(|s| s.role)
    }

    /// Positions of all navigation tokens, in order.
    pub fn navigation_positions(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.role.is_navigation())
            .flat_map(|s| s.start..s.end())
            .collect()
    }

    fn parts(&self) -> Vec<(SegmentRole, usize)> {
        self.segments.iter().map(|s| (s.role, s.len)).collect()
    }
}

fn validate_order(parts: &[(SegmentRole, usize)]) -> Result<(usize, bool), LayoutError> {
    let bad = |msg: String| Err(LayoutError::Order(msg));
    let mut it = parts.iter().map(|p| p.0).peekable();
    if it.next() != Some(SegmentRole::Instruction) {
        return bad("layout must start with the instruction".into());
    }
    if it.peek() == Some(&SegmentRole::Memory) {
        it.next();
    }
    let mut turn = 0;
    let mut queries: Option<bool> = None;
    while let Some(role) = it.next() {
        if role != SegmentRole::Ctxt(turn) {
            return bad(format!("expected Ctxt{turn}, found {role}"));
        }
        match it.next() {
            Some(SegmentRole::Act(t)) if t == turn => {}
            other => return bad(format!("expected Act{turn} after Ctxt{turn}, found {other:?}")),
        }
        let has_q = it.peek() == Some(&SegmentRole::Query2D(turn));
        if has_q {
            it.next();
            if it.next() != Some(SegmentRole::Query3D(turn)) {
                return bad(format!("Query2D{turn} must be followed by Query3D{turn}"));
            }
        }
        match queries {
            None => queries = Some(has_q),
            Some(q) if q != has_q => {
                return bad("query segments must be present for all turns or none".into())
            }
            _ => {}
        }
        turn += 1;
    }
    if turn == 0 {
        return Err(LayoutError::NoTurns);
    }
    Ok((turn, queries.unwrap_or(false)))
}

/// Parametric layout: every turn has the same segment lengths.
pub fn build_layout(
    num_turns: usize,
    len_instruction: usize,
    len_memory: usize,
    len_ctxt: usize,
    len_act: usize,
    queries_per_modality: usize,
    with_queries: bool,
) -> Result<TokenLayout, LayoutError> {
    let mut parts = vec![
        (SegmentRole::Instruction, len_instruction),
        (SegmentRole::Memory, len_memory),
    ];
    for t in 0..num_turns {
        parts.push((SegmentRole::Ctxt(t), len_ctxt));
        parts.push((SegmentRole::Act(t), len_act));
        if with_queries {
            parts.push((SegmentRole::Query2D(t), queries_per_modality));
            parts.push((SegmentRole::Query3D(t), queries_per_modality));
        }
    }
    TokenLayout::new(&parts)
}

/// Drop every query segment, keeping the navigation segments in order.
pub fn strip_queries(layout: &TokenLayout) -> TokenLayout {
    let parts: Vec<_> = layout
        .parts()
        .into_iter()
        .filter(|(r, _)| r.is_navigation())
        .collect();
    TokenLayout::new(&parts).expect("navigation subsequence of a valid layout is valid")
}

#[cfg(test)]
mod tests;
