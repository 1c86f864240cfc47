use std::collections::VecDeque;
use std::sync::Arc;

use crate::encoders::{patchify, Cut3rState, Teachers, ToyObservation};
use crate::env::{Action, ActionChunk};
use crate::layout::AttentionMask;
use crate::numerics::{kernels, BoundParams, Eager, Graph, ParamStore, Tensor};

use super::config::{PolicyConfig, N_ACTIONS};
use super::model::{
    action_logits, backbone, decode_pair, encode_turn, init_params, mask_rows, memory_indices, plan_turn,
    positional_encoding, LayerKv, PolicyIds, QueryParams, TurnFeatures, TurnPlan, TurnShape,
};
use super::PolicyError;

type Node = Arc<Tensor>;

/// Trained (or freshly initialised) policy weights plus the frozen teachers
/// that feed its input pathway.
pub struct StreamPolicy {
    cfg: PolicyConfig,
    store: ParamStore,
    ids: PolicyIds,
    teachers: Arc<Teachers>,
}

#[derive(Clone, Debug, PartialEq)]
struct TurnRecord {
    index: usize,
    ctxt: Node,
    actions: ActionChunk,
}

/// Keys/values of the cached navigation tokens plus the exact input rows
/// they were computed from; a new turn reuses the longest matching prefix.
#[derive(Clone, Debug, Default, PartialEq)]
struct KvCache {
    inputs: Vec<Vec<f64>>,
    layers: Option<Vec<LayerKv<Node>>>,
}

impl PartialEq for LayerKv<Node> {
    fn eq(&self, other: &Self) -> bool {
        self.k == other.k && self.v == other.v
    }
}

impl KvCache {
    fn len(&self) -> usize {
        self.inputs.len()
    }

    fn common_prefix(&self, rows: &Tensor) -> usize {
        self.inputs
            .iter()
            .enumerate()
            .take_while(|(i, r)| *i < rows.rows() && rows.row(*i) == r.as_slice())
            .count()
    }

    fn truncate(&mut self, n: usize) -> Result<(), PolicyError> {
        if n >= self.len() {
            return Ok(());
        }
        self.inputs.truncate(n);
        if n == 0 {
            self.layers = None;
            return Ok(());
        }
        if let Some(layers) = &mut self.layers {
            for kv in layers.iter_mut() {
                kv.k = Arc::new(kernels::slice_rows(&kv.k, 0, n)?);
                kv.v = Arc::new(kernels::slice_rows(&kv.v, 0, n)?);
            }
        }
        Ok(())
    }

    fn append(&mut self, rows: &Tensor, fresh: Vec<LayerKv<Node>>) -> Result<(), PolicyError> {
        for r in 0..rows.rows() {
            self.inputs.push(rows.row(r).to_vec());
        }
        self.layers = Some(match self.layers.take() {
            None => fresh,
            Some(old) => old
                .into_iter()
                .zip(fresh)
                .map(|(o, f)| {
                    Ok(LayerKv {
                        k: Arc::new(kernels::concat_rows(&[&o.k, &f.k])?),
                        v: Arc::new(kernels::concat_rows(&[&o.v, &f.v])?),
                    })
                })
                .collect::<Result<_, PolicyError>>()?,
        });
        Ok(())
    }
}

/// Everything one episode carries between turns.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamState {
    instruction: Vec<u32>,
    turn: usize,
    cut3r: Cut3rState,
    window: VecDeque<TurnRecord>,
    keyframes: Vec<Node>,
    memory: Vec<Node>,
    cache: KvCache,
}

impl StreamState {
    pub fn turn(&self) -> usize {
        self.turn
    }

    pub fn memory_len(&self) -> usize {
        self.memory.len()
    }

    pub fn keyframe_count(&self) -> usize {
        self.keyframes.len()
    }

    /// Indices of the completed turns still inside the window.
    pub fn window_turns(&self) -> Vec<usize> {
        self.window.iter().map(|r| r.index).collect()
    }

    pub fn cached_tokens(&self) -> usize {
        self.cache.len()
    }

    pub fn instruction_len(&self) -> usize {
        self.instruction.len()
    }

    pub fn cut3r(&self) -> &Cut3rState {
        &self.cut3r
    }

    /// The memory tokens currently in use.
    pub fn memory(&self) -> Vec<Tensor> {
        self.memory.iter().map(|m| (**m).clone()).collect()
    }

    /// Every condensed keyframe seen so far.
    pub fn keyframes(&self) -> Vec<Tensor> {
        self.keyframes.iter().map(|m| (**m).clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    /// `4 × 4`: one row per action position, one column per action.
    pub logits: Tensor,
    pub actions: ActionChunk,
    /// Final-layer states of the 2D and 3D query tokens.
    pub latents: Option<(Tensor, Tensor)>,
}

/// Greedy per-position argmax; ties go to the lowest action index.
pub fn sample_actions(logits: &Tensor) -> ActionChunk {
    let mut out = [Action::Stop; N_ACTIONS];
    for (r, slot) in out.iter_mut().enumerate() {
        let row = logits.row(r);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        *slot = Action::from_index(best).expect("four action columns");
    }
    ActionChunk(out)
}

fn argmax_action(row: &[f64]) -> Action {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    Action::from_index(best).expect("four action columns")
}

impl StreamPolicy {
    pub fn new(cfg: PolicyConfig, teachers: Arc<Teachers>) -> Result<Self, PolicyError> {
        cfg.validate()?;
        if *teachers.config() != cfg.encoder {
            return Err(PolicyError::Config("teacher config differs from policy encoder config".into()));
        }
        let (store, ids) = init_params(&cfg, &teachers);
        Ok(StreamPolicy {
            cfg,
            store,
            ids,
            teachers,
        })
    }

    /// Rebuild around stored weights; every parameter must be present with
    /// the shape the config implies.
    pub fn from_store(cfg: PolicyConfig, teachers: Arc<Teachers>, store: ParamStore) -> Result<Self, PolicyError> {
        let mut policy = StreamPolicy::new(cfg, teachers)?;
        for id in policy.store.ids().collect::<Vec<_>>() {
            let name = policy.store.name(id).to_string();
            let t = store.by_name(&name).ok_or_else(|| PolicyError::Parameter(name.clone()))?;
            policy
                .store
                .set(id, t.clone())
                .map_err(|_| PolicyError::Parameter(name.clone()))?;
        }
        if store.len() != policy.store.len() {
            return Err(PolicyError::Parameter("unexpected extra parameters".into()));
        }
        Ok(policy)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn teachers(&self) -> &Arc<Teachers> {
        &self.teachers
    }

    pub fn query_params(&self) -> Option<&QueryParams> {
        self.ids.query.as_ref()
    }

    pub(crate) fn ids(&self) -> &PolicyIds {
        &self.ids
    }

    /// Teacher features of `obs` for the input pathway, advancing `cut3r`.
    pub fn features(&self, obs: &ToyObservation, cut3r: &Cut3rState) -> Result<(TurnFeatures, Cut3rState), PolicyError> {
        let f2d = self.teachers.encode_2d(obs)?;
        let (f3d, next) = self.teachers.encode_3d_step(obs, cut3r)?;
        let patches = if self.cfg.trainable_2d_input {
            Some(patchify(obs, self.teachers.config())?)
        } else {
            None
        };
        Ok((
            TurnFeatures {
                f2d: f2d.0,
                f3d: f3d.0,
                patches,
            },
            next,
        ))
    }

    pub fn begin_episode(&self, instruction: &[u32]) -> Result<StreamState, PolicyError> {
        if instruction.is_empty() {
            return Err(PolicyError::EmptyInstruction);
        }
        if let Some(&token) = instruction.iter().find(|&&t| t as usize >= self.cfg.vocab) {
            return Err(PolicyError::UnknownToken {
                token,
                vocab: self.cfg.vocab,
            });
        }
        Ok(StreamState {
            instruction: instruction.to_vec(),
            turn: 0,
            cut3r: self.teachers.reset_3d(),
            window: VecDeque::new(),
            keyframes: Vec::new(),
            memory: Vec::new(),
            cache: KvCache::default(),
        })
    }

    fn bind(&self) -> (Eager, BoundParams<Node>) {
        let mut g = Eager;
        let p = self.store.bind(&mut g);
        (g, p)
    }

    fn shape(&self, state: &StreamState, with_queries: bool) -> TurnShape {
        TurnShape {
            instruction: state.instruction.len(),
            memory: state.memory.len(),
            past_turns: state.window.len(),
            with_queries,
            past_queries: false,
        }
    }

    /// Input rows (embedding + position) of the navigation prefix up to and
    /// including the current turn's context tokens.
    fn prefix_rows(
        &self,
        g: &mut Eager,
        p: &BoundParams<Node>,
        state: &StreamState,
        ctxt: Option<&Node>,
        plan_positions: &[usize],
    ) -> Result<Tensor, PolicyError> {
        let instr = g.gather_rows(p.get(self.ids.tok_embed), state.instruction.iter().map(|&t| t as usize).collect())?;
        let mut parts: Vec<Node> = vec![instr];
        parts.extend(state.memory.iter().cloned());
        for rec in &state.window {
            parts.push(rec.ctxt.clone());
            parts.push(g.gather_rows(p.get(self.ids.act_embed), rec.actions.indices().to_vec())?);
        }
        if let Some(c) = ctxt {
            parts.push(c.clone());
        }
        let refs: Vec<&Tensor> = parts.iter().map(|n| n.as_ref()).collect();
        let x = kernels::concat_rows(&refs)?;
        let pe = positional_encoding(&plan_positions[..x.rows()], self.cfg.d_model);
        Ok(kernels::add(&x, &pe)?)
    }

    fn act_row(&self, p: &BoundParams<Node>, action: Action, position: usize) -> Result<Tensor, PolicyError> {
        let e = kernels::gather_rows(p.get(self.ids.act_embed), &[action.index()])?;
        Ok(kernels::add(&e, &positional_encoding(&[position], self.cfg.d_model))?)
    }

    fn query_rows(&self, p: &BoundParams<Node>, plan: &TurnPlan) -> Result<Tensor, PolicyError> {
        let qp = self.ids.query.as_ref().ok_or(PolicyError::BranchDisabled)?;
        let (r2, r3) = (plan.query2d.clone().expect("queries planned"), plan.query3d.clone().expect("queries planned"));
        let x = kernels::concat_rows(&[p.get(qp.q2d), p.get(qp.q3d)])?;
        let pos: Vec<usize> = r2.chain(r3).map(|i| plan.positions[i]).collect();
        Ok(kernels::add(&x, &positional_encoding(&pos, self.cfg.d_model))?)
    }

    /// Cached forward of `rows[lcp..]`; returns the final hidden row.
    fn extend_cache(
        &self,
        g: &mut Eager,
        p: &BoundParams<Node>,
        cache: &mut KvCache,
        rows: &Tensor,
        mask: &AttentionMask,
    ) -> Result<Tensor, PolicyError> {
        let n = rows.rows();
        let lcp = cache.common_prefix(rows).min(n - 1);
        cache.truncate(lcp)?;
        let fresh_rows = kernels::slice_rows(rows, lcp, n - lcp)?;
        let x = g.constant(fresh_rows.clone());
        let m = mask_rows(mask, lcp..n, n);
        let (h, kv) = backbone(g, p, &self.ids, self.cfg.heads, &x, cache.layers.as_deref(), m)?;
        cache.append(&fresh_rows, kv)?;
        Ok(kernels::slice_rows(&h, h.rows() - 1, 1)?)
    }

    /// Dense forward of all rows; returns the last hidden row.
    fn dense_last(&self, g: &mut Eager, p: &BoundParams<Node>, rows: &Tensor, mask: &AttentionMask) -> Result<Tensor, PolicyError> {
        let n = rows.rows();
        let x = g.constant(rows.clone());
        let (h, _) = backbone(g, p, &self.ids, self.cfg.heads, &x, None, mask_rows(mask, 0..n, n))?;
        Ok(kernels::slice_rows(&h, n - 1, 1)?)
    }

    fn logits_row(&self, g: &mut Eager, p: &BoundParams<Node>, hidden: Tensor) -> Result<Tensor, PolicyError> {
        let h = g.constant(hidden);
        Ok((*action_logits(g, p, &self.ids, &h)?).clone())
    }

    /// One streaming turn: encode `obs`, decode four actions through the KV
    /// cache, optionally read out the query states, then slide the window.
    pub fn step(&self, state: &mut StreamState, obs: &ToyObservation, with_prediction: bool) -> Result<StepOutput, PolicyError> {
        let with_q = with_prediction && self.ids.query.is_some();
        if with_prediction && !with_q {
            return Err(PolicyError::BranchDisabled);
        }
        let (g, p) = &mut self.bind();
        let (feats, cut3r) = self.features(obs, &state.cut3r)?;
        let (ctxt, key) = encode_turn(g, p, &self.ids, &feats)?;
        let plan = plan_turn(&self.cfg, self.shape(state, with_q))?;

        let mut rows = self.prefix_rows(g, p, state, Some(&ctxt), &plan.positions)?;
        debug_assert_eq!(rows.rows(), plan.act.start);
        let mut logit_rows = Vec::with_capacity(N_ACTIONS);
        let mut actions = [Action::Stop; N_ACTIONS];
        for j in 0..N_ACTIONS {
            let hidden = self.extend_cache(g, p, &mut state.cache, &rows, &plan.mask)?;
            let logits = self.logits_row(g, p, hidden)?;
            actions[j] = argmax_action(logits.row(0));
            logit_rows.push(logits);
            let act = self.act_row(p, actions[j], plan.positions[plan.act.start + j])?;
            rows = kernels::concat_rows(&[&rows, &act])?;
        }
        // last action token joins the cache for later turns and the queries
        self.extend_cache(g, p, &mut state.cache, &rows, &plan.mask)?;

        let latents = if with_q {
            if state.cache.len() != plan.act.end {
                return Err(PolicyError::CacheDesync {
                    cached: state.cache.len(),
                    expected: plan.act.end,
                });
            }
            let q = self.query_rows(p, &plan)?;
            let x = g.constant(q);
            let mask = mask_rows(&plan.mask, plan.act.end..plan.total, plan.total);
            let (h, _) = backbone(g, p, &self.ids, self.cfg.heads, &x, state.cache.layers.as_deref(), mask)?;
            Some(self.split_queries(&h)?)
        } else {
            None
        };

        let refs: Vec<&Tensor> = logit_rows.iter().collect();
        let out = StepOutput {
            logits: kernels::concat_rows(&refs)?,
            actions: ActionChunk(actions),
            latents,
        };
        state.window.push_back(TurnRecord {
            index: state.turn,
            ctxt,
            actions: out.actions,
        });
        state.keyframes.push(key);
        state.cut3r = cut3r;
        state.turn += 1;
        self.maintain_window(state)?;
        Ok(out)
    }

    fn split_queries(&self, h: &Tensor) -> Result<(Tensor, Tensor), PolicyError> {
        let q = self.cfg.queries_per_modality;
        Ok((kernels::slice_rows(h, 0, q)?, kernels::slice_rows(h, q, q)?))
    }

    /// Evict turns beyond the window, resample memory over the keyframe
    /// pool, and drop cache entries the next turn cannot reuse.
    pub fn maintain_window(&self, state: &mut StreamState) -> Result<(), PolicyError> {
        while state.window.len() > self.cfg.window - 1 {
            state.window.pop_front();
        }
        state.memory = memory_indices(state.keyframes.len(), self.cfg.memory_keyframes)
            .into_iter()
            .map(|i| state.keyframes[i].clone())
            .collect();
        // keep whatever prefix the next turn's sequence still shares
        let (g, p) = &mut self.bind();
        let plan = plan_turn(&self.cfg, self.shape(state, false))?;
        let rows = self.prefix_rows(g, p, state, None, &plan.positions)?;
        let keep = state.cache.common_prefix(&rows);
        state.cache.truncate(keep)
    }

    /// No-cache reference: rebuilds the full sequence for every decoding
    /// stage of every turn and runs dense attention under the same mask.
    pub fn forward_full(
        &self,
        instruction: &[u32],
        observations: &[ToyObservation],
        with_prediction: bool,
    ) -> Result<Vec<StepOutput>, PolicyError> {
        let with_q = with_prediction && self.ids.query.is_some();
        if with_prediction && !with_q {
            return Err(PolicyError::BranchDisabled);
        }
        let (g, p) = &mut self.bind();
        let mut state = self.begin_episode(instruction)?;
        let mut outs = Vec::with_capacity(observations.len());
        for obs in observations {
            let (feats, cut3r) = self.features(obs, &state.cut3r)?;
            let (ctxt, key) = encode_turn(g, p, &self.ids, &feats)?;
            let plan = plan_turn(&self.cfg, self.shape(&state, with_q))?;
            let mut rows = self.prefix_rows(g, p, &state, Some(&ctxt), &plan.positions)?;
            let mut logit_rows = Vec::with_capacity(N_ACTIONS);
            let mut actions = [Action::Stop; N_ACTIONS];
            for j in 0..N_ACTIONS {
                let hidden = self.dense_last(g, p, &rows, &plan.mask)?;
                let logits = self.logits_row(g, p, hidden)?;
                actions[j] = argmax_action(logits.row(0));
                logit_rows.push(logits);
                let act = self.act_row(p, actions[j], plan.positions[plan.act.start + j])?;
                rows = kernels::concat_rows(&[&rows, &act])?;
            }
            let latents = if with_q {
                let all = kernels::concat_rows(&[&rows, &self.query_rows(p, &plan)?])?;
                let x = g.constant(all);
                let n = plan.total;
                let (h, _) = backbone(g, p, &self.ids, self.cfg.heads, &x, None, mask_rows(&plan.mask, 0..n, n))?;
                let qh = kernels::slice_rows(&h, plan.act.end, n - plan.act.end)?;
                Some(self.split_queries(&qh)?)
            } else {
                None
            };
            let refs: Vec<&Tensor> = logit_rows.iter().collect();
            let out = StepOutput {
                logits: kernels::concat_rows(&refs)?,
                actions: ActionChunk(actions),
                latents,
            };
            state.window.push_back(TurnRecord {
                index: state.turn,
                ctxt,
                actions: out.actions,
            });
            state.keyframes.push(key);
            state.cut3r = cut3r;
            state.turn += 1;
            while state.window.len() > self.cfg.window - 1 {
                state.window.pop_front();
            }
            state.memory = memory_indices(state.keyframes.len(), self.cfg.memory_keyframes)
                .into_iter()
                .map(|i| state.keyframes[i].clone())
                .collect();
            outs.push(out);
        }
        Ok(outs)
    }

    /// Predicted next-step 2D (unit rows) and 3D features from query states.
    pub fn decode_latents(&self, e2d: &Tensor, e3d: &Tensor) -> Result<(Tensor, Tensor), PolicyError> {
        let qp = self.ids.query.as_ref().ok_or(PolicyError::BranchDisabled)?;
        let (g, p) = &mut self.bind();
        let a = g.constant(e2d.clone());
        let b = g.constant(e3d.clone());
        let (f2, f3) = decode_pair(g, p, &self.cfg, qp, &a, &b)?;
        Ok(((*f2).clone(), (*f3).clone()))
    }
}
