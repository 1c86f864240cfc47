//! Parameters and the backend-generic forward pieces shared by cached
//! inference, the dense oracle and training.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::encoders::{condense_keyframe, fuse, project, FusionParams, Linear, Mlp, Teachers};
use crate::layout::{build_mask_with, AttentionMask, SegmentRole, TokenLayout};
use crate::numerics::{BoundParams, Graph, NumericsError, ParamId, ParamStore, Tensor};
use crate::rng::{normal_tensor, rng_for};

use super::config::{PolicyConfig, QueryPool, DECODER_LAYERS, N_ACTIONS};
use super::PolicyError;

#[derive(Clone, Debug)]
pub(crate) struct LayerNormIds {
    pub g: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Debug)]
pub(crate) struct BlockIds {
    pub ln1: LayerNormIds,
    pub attn: AttentionIds,
    pub ln2: LayerNormIds,
    pub ff: Mlp,
}

/// One latent decoder: masked tokens cross-attend the query states.
#[derive(Clone, Debug)]
pub struct DecoderIds {
    pub(crate) layers: Vec<BlockIds>,
    pub(crate) ln_out: LayerNormIds,
    pub(crate) head: Linear,
}

/// Learnable query embeddings, masked tokens and the two latent decoders.
#[derive(Clone, Debug)]
pub struct QueryParams {
    pub q2d: ParamId,
    pub q3d: ParamId,
    pub m2d: ParamId,
    pub m3d: ParamId,
    pub dec2d: DecoderIds,
    pub dec3d: DecoderIds,
}

impl QueryParams {
    /// Every parameter id belonging to the predictive branch.
    pub fn ids(&self, store: &ParamStore) -> Vec<ParamId> {
        let names = [self.q2d, self.q3d, self.m2d, self.m3d];
        let mut out: Vec<ParamId> = names.to_vec();
        for id in store.ids() {
            let n = store.name(id);
            if n.starts_with("dec2d.") || n.starts_with("dec3d.") {
                out.push(id);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub(crate) struct PolicyIds {
    pub tok_embed: ParamId,
    pub act_embed: ParamId,
    pub input2d: Option<(ParamId, ParamId)>,
    pub fusion: FusionParams,
    pub proj: Mlp,
    pub condense: Linear,
    pub blocks: Vec<BlockIds>,
    pub ln_f: LayerNormIds,
    pub head: Linear,
    pub query: Option<QueryParams>,
}

fn layer_norm_ids(store: &mut ParamStore, name: &str, d: usize) -> LayerNormIds {
    LayerNormIds {
        g: store.insert(format!("{name}.g"), Tensor::filled(&[1, d], 1.0), true),
        b: store.insert(format!("{name}.b"), Tensor::zeros(&[1, d]), true),
    }
}

fn block_ids<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d: usize, ff: usize, depth: usize) -> BlockIds {
    let std = 1.0 / (d as f64).sqrt();
    let mut w = |suffix: &str, scale: f64| {
        store.insert(format!("{name}.attn.{suffix}"), normal_tensor(rng, d, d, std * scale), true)
    };
    let attn = AttentionIds {
        wq: w("wq", 1.0),
        wk: w("wk", 1.0),
        wv: w("wv", 1.0),
        wo: w("wo", 1.0 / (2.0 * depth as f64).sqrt()),
    };
    BlockIds {
        ln1: layer_norm_ids(store, &format!("{name}.ln1"), d),
        attn,
        ln2: layer_norm_ids(store, &format!("{name}.ln2"), d),
        ff: Mlp::init(store, rng, &format!("{name}.ff"), &[d, ff, d]),
    }
}

fn decoder_ids<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, cfg: &PolicyConfig, d_out: usize) -> DecoderIds {
    DecoderIds {
        layers: (0..DECODER_LAYERS)
            .map(|i| block_ids(store, rng, &format!("{name}.{i}"), cfg.d_model, cfg.ff_hidden, DECODER_LAYERS))
            .collect(),
        ln_out: layer_norm_ids(store, &format!("{name}.ln_out"), cfg.d_model),
        head: Linear::init(store, rng, &format!("{name}.head"), cfg.d_model, d_out),
    }
}

pub(crate) fn init_params(cfg: &PolicyConfig, teachers: &Teachers) -> (ParamStore, PolicyIds) {
    let mut rng: ChaCha8Rng = rng_for(cfg.seed, "policy-init", 0);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let d = cfg.d_model;
    let enc = &cfg.encoder;
    let tok_embed = store.insert("tok_embed", normal_tensor(rng, cfg.vocab, d, 1.0), true);
    let act_embed = store.insert("act_embed", normal_tensor(rng, N_ACTIONS, d, 1.0), true);
    let input2d = cfg.trainable_2d_input.then(|| {
        (
            store.insert("input2d.proj", (**teachers.proj2d()).clone(), true),
            store.insert("input2d.pos", (**teachers.pos2d()).clone(), true),
        )
    });
    let fusion = FusionParams::init(&mut store, rng, "fusion", enc.d2, enc.d3, cfg.fusion_dk, cfg.fusion_dv);
    let proj = Mlp::init(&mut store, rng, "proj", &[cfg.fusion_dv, d, d]);
    let condense = Linear::init(&mut store, rng, "condense", cfg.fusion_dv, d);
    let blocks = (0..cfg.layers)
        .map(|i| block_ids(&mut store, rng, &format!("block{i}"), d, cfg.ff_hidden, cfg.layers))
        .collect();
    let ln_f = layer_norm_ids(&mut store, "ln_f", d);
    let head = Linear::init(&mut store, rng, "head", d, N_ACTIONS);
    let query = cfg.predictive.then(|| QueryParams {
        q2d: store.insert("query.q2d", normal_tensor(rng, cfg.queries_per_modality, d, 1.0), true),
        q3d: store.insert("query.q3d", normal_tensor(rng, cfg.queries_per_modality, d, 1.0), true),
        m2d: store.insert("query.m2d", normal_tensor(rng, 1, d, 1.0), true),
        m3d: store.insert("query.m3d", normal_tensor(rng, 1, d, 1.0), true),
        dec2d: decoder_ids(&mut store, rng, "dec2d", cfg, enc.d2),
        dec3d: decoder_ids(&mut store, rng, "dec3d", cfg, enc.d3),
    });
    let ids = PolicyIds {
        tok_embed,
        act_embed,
        input2d,
        fusion,
        proj,
        condense,
        blocks,
        ln_f,
        head,
        query,
    };
    (store, ids)
}

/// Fixed sinusoidal encoding, one row per position id.
pub fn positional_encoding(positions: &[usize], d: usize) -> Tensor {
    let mut data = Vec::with_capacity(positions.len() * d);
    for &pos in positions {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let angle = pos as f64 * freq;
            data.push(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::from_rows(positions.len(), d, data).expect("rows × d")
}

/// Per-layer keys and values of a contiguous run of tokens.
#[derive(Clone, Debug)]
pub(crate) struct LayerKv<N> {
    pub k: N,
    pub v: N,
}

fn layer_norm<G: Graph>(g: &mut G, p: &BoundParams<G::Node>, ln: &LayerNormIds, x: &G::Node) -> Result<G::Node, NumericsError> {
    g.layer_norm(x, p.get(ln.g), p.get(ln.b))
}

/// Multi-head attention of `q` rows over `k`/`v` rows.
fn attend<G: Graph>(
    g: &mut G,
    heads: usize,
    q: &G::Node,
    k: &G::Node,
    v: &G::Node,
    mask: &Arc<Vec<bool>>,
) -> Result<G::Node, NumericsError> {
    let d = g.value(q).cols();
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (qh, kh, vh) = if heads == 1 {
            (q.clone(), k.clone(), v.clone())
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let s = g.matmul_nt(&qh, &kh)?;
        let s = g.scale(&s, scale)?;
        let a = g.masked_softmax(&s, mask.clone())?;
        outs.push(g.matmul(&a, &vh)?);
    }
    let refs: Vec<&G::Node> = outs.iter().collect();
    g.concat_cols(&refs)
}

fn feed_forward<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    block: &BlockIds,
    x: &G::Node,
) -> Result<G::Node, NumericsError> {
    let h = layer_norm(g, p, &block.ln2, x)?;
    let h = block.ff.forward(g, p, &h)?;
    g.add(x, &h)
}

/// Run the backbone on `x` (new token rows, positional encoding already
/// added) given cached keys/values of earlier tokens. `mask` is row-major
/// `new × (past + new)`. Returns final-norm hidden rows and the new tokens'
/// keys/values per layer.
pub(crate) fn backbone<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    ids: &PolicyIds,
    heads: usize,
    x: &G::Node,
    past: Option<&[LayerKv<G::Node>]>,
    mask: Arc<Vec<bool>>,
) -> Result<(G::Node, Vec<LayerKv<G::Node>>), NumericsError> {
    let mut x = x.clone();
    let mut fresh = Vec::with_capacity(ids.blocks.len());
    for (l, block) in ids.blocks.iter().enumerate() {
        let h = layer_norm(g, p, &block.ln1, &x)?;
        let q = g.matmul(&h, p.get(block.attn.wq))?;
        let k = g.matmul(&h, p.get(block.attn.wk))?;
        let v = g.matmul(&h, p.get(block.attn.wv))?;
        let (k_all, v_all) = match past {
            Some(kv) => (g.concat_rows(&[&kv[l].k, &k])?, g.concat_rows(&[&kv[l].v, &v])?),
            None => (k.clone(), v.clone()),
        };
        let a = attend(g, heads, &q, &k_all, &v_all, &mask)?;
        let a = g.matmul(&a, p.get(block.attn.wo))?;
        x = g.add(&x, &a)?;
        x = feed_forward(g, p, block, &x)?;
        fresh.push(LayerKv { k, v });
    }
    let out = layer_norm(g, p, &ids.ln_f, &x)?;
    Ok((out, fresh))
}

pub(crate) fn action_logits<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    ids: &PolicyIds,
    hidden_rows: &G::Node,
) -> Result<G::Node, NumericsError> {
    ids.head.forward(g, p, hidden_rows)
}

/// Latent decoder: `masked_tokens` copies of `m` plus positions cross-attend
/// the conditioning rows `e`. Returns raw (unnormalised) predictions.
pub(crate) fn decode<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    dec: &DecoderIds,
    heads: usize,
    masked_token: ParamId,
    masked_tokens: usize,
    e: &G::Node,
) -> Result<G::Node, NumericsError> {
    let d = g.value(e).cols();
    let repeated = g.gather_rows(p.get(masked_token), vec![0; masked_tokens])?;
    let pe = g.constant(positional_encoding(&(0..masked_tokens).collect::<Vec<_>>(), d));
    let mut x = g.add(&repeated, &pe)?;
    let keys = g.value(e).rows();
    let mask = Arc::new(vec![true; masked_tokens * keys]);
    for block in &dec.layers {
        let h = layer_norm(g, p, &block.ln1, &x)?;
        let q = g.matmul(&h, p.get(block.attn.wq))?;
        let k = g.matmul(e, p.get(block.attn.wk))?;
        let v = g.matmul(e, p.get(block.attn.wv))?;
        let a = attend(g, heads, &q, &k, &v, &mask)?;
        let a = g.matmul(&a, p.get(block.attn.wo))?;
        x = g.add(&x, &a)?;
        x = feed_forward(g, p, block, &x)?;
    }
    let x = layer_norm(g, p, &dec.ln_out, &x)?;
    dec.head.forward(g, p, &x)
}

/// Predicted next-step features from a turn's final query states.
/// The 2D prediction is ℓ2-normalised per token.
pub(crate) fn decode_pair<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    cfg: &PolicyConfig,
    qp: &QueryParams,
    e2d: &G::Node,
    e3d: &G::Node,
) -> Result<(G::Node, G::Node), NumericsError> {
    let pool = |g: &mut G, e: &G::Node| match cfg.query_pool {
        QueryPool::Tokens => Ok(e.clone()),
        QueryPool::Mean => g.mean_rows(e),
    };
    let c2 = pool(g, e2d)?;
    let c3 = pool(g, e3d)?;
    let raw2 = decode(g, p, &qp.dec2d, cfg.heads, qp.m2d, cfg.masked_tokens, &c2)?;
    let f2 = g.l2_normalize(&raw2)?;
    let f3 = decode(g, p, &qp.dec3d, cfg.heads, qp.m3d, cfg.masked_tokens, &c3)?;
    Ok((f2, f3))
}

/// Teacher features of one observation, as fed to the input pathway.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnFeatures {
    pub f2d: Tensor,
    pub f3d: Tensor,
    /// Flattened patches; only read when the 2D input copy is trainable.
    pub patches: Option<Tensor>,
}

/// Context tokens and the condensed keyframe token for one observation.
pub(crate) fn encode_turn<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    ids: &PolicyIds,
    feats: &TurnFeatures,
) -> Result<(G::Node, G::Node), PolicyError> {
    let f2d = match (ids.input2d, &feats.patches) {
        (Some((proj, pos)), Some(patches)) => {
            let x = g.constant(patches.clone());
            let h = g.matmul(&x, p.get(proj))?;
            let h = g.add(&h, p.get(pos))?;
            let h = g.tanh(&h)?;
            g.l2_normalize(&h)?
        }
        (Some(_), None) => return Err(PolicyError::MissingPatches),
        (None, _) => g.constant(feats.f2d.clone()),
    };
    let f3d = g.constant(feats.f3d.clone());
    let fused = fuse(g, p, &ids.fusion, &f2d, &f3d)?;
    let ctxt = project(g, p, &ids.proj, &fused)?;
    let key = condense_keyframe(g, p, &ids.condense, &fused)?;
    Ok((ctxt, key))
}

/// 0-based keyframe indices `⌈k·P/m⌉ − 1`, `k = 1..=m`, `m = min(P, cap)`.
pub fn memory_indices(pool: usize, cap: usize) -> Vec<usize> {
    let m = pool.min(cap);
    (1..=m).map(|k| (k * pool).div_ceil(m) - 1).collect()
}

/// Token arrangement of one turn's forward pass.
#[derive(Clone, Debug)]
pub(crate) struct TurnPlan {
    /// Mask over the tokens actually present, in sequence order.
    pub mask: AttentionMask,
    pub positions: Vec<usize>,
    /// Present-index range of the current turn's action tokens.
    pub act: Range<usize>,
    pub query2d: Option<Range<usize>>,
    pub query3d: Option<Range<usize>>,
    pub total: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct TurnShape {
    pub instruction: usize,
    pub memory: usize,
    pub past_turns: usize,
    pub with_queries: bool,
    /// Keep query tokens of past turns in the sequence (teacher-forced training).
    pub past_queries: bool,
}

pub(crate) fn plan_turn(cfg: &PolicyConfig, shape: TurnShape) -> Result<TurnPlan, PolicyError> {
    let t2 = cfg.ctxt_tokens();
    let q = cfg.queries_per_modality;
    let mut parts = vec![(SegmentRole::Instruction, shape.instruction)];
    if shape.memory > 0 {
        parts.push((SegmentRole::Memory, shape.memory));
    }
    for t in 0..=shape.past_turns {
        parts.push((SegmentRole::Ctxt(t), t2));
        parts.push((SegmentRole::Act(t), N_ACTIONS));
        if shape.with_queries {
            parts.push((SegmentRole::Query2D(t), q));
            parts.push((SegmentRole::Query3D(t), q));
        }
    }
    let layout = TokenLayout::new(&parts)?;
    let full = build_mask_with(&layout, cfg.variant, cfg.query_self_attention);
    let current = shape.past_turns;
    let mut present = Vec::with_capacity(layout.total());
    let mut positions = Vec::with_capacity(layout.total());
    let mut ranges: [Option<Range<usize>>; 3] = Default::default();
    let mut nav = 0usize;
    for seg in layout.segments() {
        let keep = !seg.role.is_query() || shape.past_queries || seg.role.turn() == Some(current);
        if !keep {
            continue;
        }
        let start = present.len();
        present.extend(seg.start..seg.end());
        if seg.role.is_query() {
            positions.extend(nav..nav + seg.len);
        } else {
            positions.extend(nav..nav + seg.len);
            nav += seg.len;
        }
        let slot = match seg.role {
            SegmentRole::Act(t) if t == current => Some(0),
            SegmentRole::Query2D(t) if t == current => Some(1),
            SegmentRole::Query3D(t) if t == current => Some(2),
            _ => None,
        };
        if let Some(s) = slot {
            ranges[s] = Some(start..present.len());
        }
    }
    let [act, query2d, query3d] = ranges;
    Ok(TurnPlan {
        mask: full.principal(&present),
        positions,
        act: act.expect("current turn has actions"),
        query2d,
        query3d,
        total: present.len(),
    })
}

/// Row-major sub-block `rows × [0, cols)` of a mask.
pub(crate) fn mask_rows(mask: &AttentionMask, rows: Range<usize>, cols: usize) -> Arc<Vec<bool>> {
    let r: Vec<usize> = rows.collect();
    let c: Vec<usize> = (0..cols).collect();
    Arc::new(mask.select(&r, &c))
}
