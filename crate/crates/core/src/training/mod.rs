//! Teacher-forced imitation training with the joint action / latent objective.
//!
//! Every turn of an episode is one dense pass over
//! `[instruction, memory, window turns, current turn]`, laid out exactly as at
//! inference but with each turn's query tokens present. Only the current
//! turn's outputs are supervised: four action logits, and the decoded
//! predictions of the next observation's frozen teacher features.

use rand::Rng;
use thiserror::Error;

use crate::encoders::{EncoderError, Teachers, ToyObservation};
use crate::env::{
    gen_instruction, generate_map, plan_reference, render_obs, ActionChunk, EnvError, GeneratorConfig, GridMap,
    SUCCESS_RADIUS,
};
use crate::numerics::{Adam, AdamConfig, BoundParams, Graph, NumericsError, Tape, Tensor};
use crate::policy::{
    action_logits, backbone, decode_pair, encode_turn, mask_rows, memory_indices, plan_turn, positional_encoding,
    PolicyError, StreamPolicy, TurnFeatures, TurnShape,
};
use crate::rng::rng_for;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("loss weights must be finite and non-negative")]
    NegativeWeight,
    #[error("losses must be non-negative, got nav={nav} l2d={l2d} l3d={l3d}")]
    NegativeLoss { nav: f64, l2d: f64, l3d: f64 },
    #[error("sample has {observations} observations for {turns} turns; expected turns + 1")]
    SampleShape { observations: usize, turns: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("non-finite loss in episode {episode} turn {turn}: nav={nav} l2d={l2d} l3d={l3d}")]
    NonFinite {
        episode: usize,
        turn: usize,
        nav: f64,
        l2d: f64,
        l3d: f64,
    },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// `loss = nav + γ·(α·l2d + β·l3d)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            gamma: 0.01,
            alpha: 0.25,
            beta: 0.75,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), TrainError> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if ok(self.gamma) && ok(self.alpha) && ok(self.beta) {
            Ok(())
        } else {
            Err(TrainError::NegativeWeight)
        }
    }

    /// Whether any latent loss reaches the objective.
    pub fn predictive(&self) -> bool {
        self.gamma * (self.alpha + self.beta) > 0.0
    }
}

pub fn loss_all(nav: f64, l2d: f64, l3d: f64, w: LossWeights) -> Result<f64, TrainError> {
    w.validate()?;
    if !(nav >= 0.0 && l2d >= 0.0 && l3d >= 0.0) {
        return Err(TrainError::NegativeLoss { nav, l2d, l3d });
    }
    Ok(nav + w.gamma * (w.alpha * l2d + w.beta * l3d))
}

/// One expert episode: `turns + 1` observations, one action chunk per turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    pub instruction: Vec<u32>,
    pub observations: Vec<ToyObservation>,
    pub actions: Vec<ActionChunk>,
}

impl TrainSample {
    pub fn new(
        instruction: Vec<u32>,
        observations: Vec<ToyObservation>,
        actions: Vec<ActionChunk>,
    ) -> Result<Self, TrainError> {
        if actions.is_empty() || observations.len() != actions.len() + 1 {
            return Err(TrainError::SampleShape {
                observations: observations.len(),
                turns: actions.len(),
            });
        }
        Ok(TrainSample {
            instruction,
            observations,
            actions,
        })
    }

    pub fn turns(&self) -> usize {
        self.actions.len()
    }
}

/// Frozen next-step teacher features for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnTargets {
    pub f2d: Tensor,
    pub f3d: Tensor,
}

/// Teacher features of every observation, with the 3D teacher rolled from
/// reset over the whole stream.
fn teacher_features(teachers: &Teachers, obs: &[ToyObservation]) -> Result<Vec<(Tensor, Tensor)>, TrainError> {
    let (f3d, _) = teachers.rollout_3d(obs)?;
    obs.iter()
        .zip(f3d)
        .map(|(o, f3)| Ok((teachers.encode_2d(o)?.0, f3.0)))
        .collect()
}

/// Targets for turn `t` are the teacher features of `o_{t+1}`.
pub fn compute_targets(teachers: &Teachers, sample: &TrainSample) -> Result<Vec<TurnTargets>, TrainError> {
    Ok(teacher_features(teachers, &sample.observations)?
        .into_iter()
        .skip(1)
        .map(|(f2d, f3d)| TurnTargets { f2d, f3d })
        .collect())
}

/// A sample with its teacher features computed once.
#[derive(Clone, Debug)]
pub struct PreparedSample {
    pub instruction: Vec<u32>,
    pub actions: Vec<ActionChunk>,
    pub inputs: Vec<TurnFeatures>,
    pub targets: Vec<TurnTargets>,
}

pub fn prepare(policy: &StreamPolicy, sample: &TrainSample) -> Result<PreparedSample, TrainError> {
    let feats = teacher_features(policy.teachers(), &sample.observations)?;
    let turns = sample.turns();
    let mut inputs = Vec::with_capacity(turns);
    for (obs, (f2d, f3d)) in sample.observations.iter().zip(&feats).take(turns) {
        let patches = match policy.config().trainable_2d_input {
            true => Some(crate::encoders::patchify(obs, policy.teachers().config())?),
            false => None,
        };
        inputs.push(TurnFeatures {
            f2d: f2d.clone(),
            f3d: f3d.clone(),
            patches,
        });
    }
    let targets = feats[1..]
        .iter()
        .map(|(f2d, f3d)| TurnTargets {
            f2d: f2d.clone(),
            f3d: f3d.clone(),
        })
        .collect();
    Ok(PreparedSample {
        instruction: sample.instruction.clone(),
        actions: sample.actions.clone(),
        inputs,
        targets,
    })
}

/// Mean per-turn losses of an episode or batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub nav: f64,
    pub l2d: f64,
    pub l3d: f64,
    pub total: f64,
}

pub(crate) struct EpisodePass<N> {
    pub loss: N,
    pub breakdown: LossBreakdown,
    /// Teacher-forced `4 × 4` logits of every turn.
    pub logits: Vec<Tensor>,
}

fn scalar<G: Graph>(g: &G, n: &G::Node) -> f64 {
    g.value(n).data()[0]
}

/// Teacher-forced forward of one episode; `loss` is the mean over turns.
pub(crate) fn episode_pass<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    policy: &StreamPolicy,
    ep: &PreparedSample,
    w: LossWeights,
    episode: usize,
) -> Result<EpisodePass<G::Node>, TrainError> {
    let cfg = policy.config();
    let ids = policy.ids();
    let predictive = w.predictive();
    let qp = match (predictive, ids.query.as_ref()) {
        (true, None) => return Err(PolicyError::BranchDisabled.into()),
        (true, Some(q)) => Some(q),
        (false, _) => None,
    };
    let turns = ep.actions.len();
    let encoded = ep
        .inputs
        .iter()
        .take(turns)
        .map(|f| encode_turn(g, p, ids, f))
        .collect::<Result<Vec<_>, _>>()?;
    let instr_idx = ep.instruction.iter().map(|&t| t as usize).collect();
    let instr = g.gather_rows(p.get(ids.tok_embed), instr_idx)?;
    let acts = ep
        .actions
        .iter()
        .map(|a| g.gather_rows(p.get(ids.act_embed), a.indices().to_vec()))
        .collect::<Result<Vec<_>, _>>()?;

    let mut total: Option<G::Node> = None;
    let mut sums = LossBreakdown::default();
    let mut logits_out = Vec::with_capacity(turns);
    for t in 0..turns {
        let first = t.saturating_sub(cfg.window - 1);
        let memory = memory_indices(t, cfg.memory_keyframes);
        let plan = plan_turn(
            cfg,
            TurnShape {
                instruction: ep.instruction.len(),
                memory: memory.len(),
                past_turns: t - first,
                with_queries: predictive,
                past_queries: true,
            },
        )?;
        let mut parts: Vec<&G::Node> = vec![&instr];
        parts.extend(memory.iter().map(|&i| &encoded[i].1));
        for s in first..=t {
            parts.push(&encoded[s].0);
            parts.push(&acts[s]);
            if let Some(q) = qp {
                parts.push(p.get(q.q2d));
                parts.push(p.get(q.q3d));
            }
        }
        let x = g.concat_rows(&parts)?;
        let pe = g.constant(positional_encoding(&plan.positions, cfg.d_model));
        let x = g.add(&x, &pe)?;
        let n = plan.total;
        let (h, _) = backbone(g, p, ids, cfg.heads, &x, None, mask_rows(&plan.mask, 0..n, n))?;

        let a0 = plan.act.start;
        let rows = g.gather_rows(&h, vec![a0 - 1, a0, a0 + 1, a0 + 2])?;
        let logits = action_logits(g, p, ids, &rows)?;
        logits_out.push(g.value(&logits).clone());
        let nav = g.cross_entropy(&logits, ep.actions[t].indices().to_vec())?;
        let nav_v = scalar(g, &nav);
        let mut turn_loss = nav;
        let (mut l2_v, mut l3_v) = (0.0, 0.0);
        if let Some(q) = qp {
            let r2 = plan.query2d.clone().expect("queries planned");
            let r3 = plan.query3d.clone().expect("queries planned");
            let e2 = g.slice_rows(&h, r2.start, r2.len())?;
            let e3 = g.slice_rows(&h, r3.start, r3.len())?;
            let (f2, f3) = decode_pair(g, p, cfg, q, &e2, &e3)?;
            let t2 = g.constant(ep.targets[t].f2d.clone());
            let t3 = g.constant(ep.targets[t].f3d.clone());
            let l2 = g.cosine_distance(&f2, &t2)?;
            let l3 = g.mse(&f3, &t3)?;
            l2_v = scalar(g, &l2);
            l3_v = scalar(g, &l3);
            let l2 = g.scale(&l2, w.gamma * w.alpha)?;
            let l3 = g.scale(&l3, w.gamma * w.beta)?;
            turn_loss = g.add(&turn_loss, &l2)?;
            turn_loss = g.add(&turn_loss, &l3)?;
        }
        let turn_v = scalar(g, &turn_loss);
        if !(nav_v.is_finite() && l2_v.is_finite() && l3_v.is_finite() && turn_v.is_finite()) {
            return Err(TrainError::NonFinite {
                episode,
                turn: t,
                nav: nav_v,
                l2d: l2_v,
                l3d: l3_v,
            });
        }
        sums.nav += nav_v;
        sums.l2d += l2_v;
        sums.l3d += l3_v;
        sums.total += turn_v;
        total = Some(match total {
            None => turn_loss,
            Some(acc) => g.add(&acc, &turn_loss)?,
        });
    }
    let k = 1.0 / turns as f64;
    let loss = g.scale(&total.expect("at least one turn"), k)?;
    Ok(EpisodePass {
        loss,
        breakdown: LossBreakdown {
            nav: sums.nav * k,
            l2d: sums.l2d * k,
            l3d: sums.l3d * k,
            total: sums.total * k,
        },
        logits: logits_out,
    })
}

/// Batch loss and per-parameter gradients in store order, without updating.
pub fn batch_gradients(
    policy: &StreamPolicy,
    batch: &[PreparedSample],
    w: LossWeights,
) -> Result<(LossBreakdown, Vec<Tensor>), TrainError> {
    w.validate()?;
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let k = 1.0 / batch.len() as f64;
    let mut acc: Option<Vec<Tensor>> = None;
    let mut mean = LossBreakdown::default();
    for (e, ep) in batch.iter().enumerate() {
        let mut tape = Tape::new();
        let p = policy.store().bind(&mut tape);
        let pass = episode_pass(&mut tape, &p, policy, ep, w, e)?;
        let grads = p.gradients(&tape.backward(pass.loss)?);
        mean.nav += pass.breakdown.nav * k;
        mean.l2d += pass.breakdown.l2d * k;
        mean.l3d += pass.breakdown.l3d * k;
        mean.total += pass.breakdown.total * k;
        acc = Some(match acc {
            None => grads.into_iter().map(|g| crate::numerics::kernels::scale(&g, k)).collect(),
            Some(mut sum) => {
                for (s, g) in sum.iter_mut().zip(&grads) {
                    for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
                        *a += b * k;
                    }
                }
                sum
            }
        });
    }
    let grads = acc.expect("non-empty batch");
    for (id, g) in policy.store().ids().zip(&grads) {
        if g.data().iter().any(|v| !v.is_finite()) {
            return Err(TrainError::NonFiniteGradient(policy.store().name(id).to_string()));
        }
    }
    Ok((mean, grads))
}

/// Teacher-forced forward, backward and one Adam update.
pub fn train_step(
    policy: &mut StreamPolicy,
    batch: &[PreparedSample],
    w: LossWeights,
    adam: &mut Adam,
) -> Result<LossBreakdown, TrainError> {
    let (loss, grads) = batch_gradients(policy, batch, w)?;
    adam.step(policy.store_mut(), &grads)?;
    Ok(loss)
}

/// Sum of absolute gradients reaching the frozen teacher weights when they
/// are bound on the same tape as the policy.
pub fn teacher_gradient_sum(policy: &StreamPolicy, ep: &PreparedSample, w: LossWeights) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let teacher_store = policy.teachers().store();
    let teacher_ids: Vec<_> = teacher_store.ids().collect();
    let teacher_nodes: Vec<_> = teacher_ids
        .iter()
        .map(|&id| tape.bind(teacher_store.get(id), true))
        .collect();
    let p = policy.store().bind(&mut tape);
    let pass = episode_pass(&mut tape, &p, policy, ep, w, 0)?;
    let grads = tape.backward(pass.loss)?;
    Ok(teacher_nodes
        .iter()
        .map(|&v| grads.get_or_zeros(v).data().iter().map(|x| x.abs()).sum::<f64>())
        .sum())
}

/// Worst relative error of one parameter tensor in a finite-difference check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// Compare tape gradients of the episode loss with central differences on
/// up to `per_tensor` evenly spaced entries of every trainable tensor.
/// Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    policy: &StreamPolicy,
    ep: &PreparedSample,
    w: LossWeights,
    eps: f64,
    per_tensor: usize,
    floor: f64,
) -> Result<Vec<GradCheck>, TrainError> {
    let (_, grads) = batch_gradients(policy, std::slice::from_ref(ep), w)?;
    let mut probe = StreamPolicy::from_store(*policy.config(), policy.teachers().clone(), policy.store().clone())?;
    let eval = |probe: &StreamPolicy| -> Result<f64, TrainError> {
        let mut g = crate::numerics::Eager;
        let p = probe.store().bind(&mut g);
        let pass = episode_pass(&mut g, &p, probe, ep, w, 0)?;
        Ok(pass.loss.data()[0])
    };
    let mut out = Vec::new();
    let ids: Vec<_> = policy.store().ids().filter(|&id| policy.store().is_trainable(id)).collect();
    for id in ids {
        let n = policy.store().get(id).len();
        let picks: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            (0..per_tensor).map(|i| i * n / per_tensor).collect()
        };
        let mut worst = 0.0f64;
        for &j in &picks {
            let orig = probe.store().get(id).data()[j];
            probe.store_mut().get_mut(id).data_mut()[j] = orig + eps;
            let up = eval(&probe)?;
            probe.store_mut().get_mut(id).data_mut()[j] = orig - eps;
            let down = eval(&probe)?;
            probe.store_mut().get_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let analytic = grads[id_index(policy, id)].data()[j];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
        out.push(GradCheck {
            name: policy.store().name(id).to_string(),
            checked: picks.len(),
            max_rel_error: worst,
        });
    }
    Ok(out)
}

fn id_index(policy: &StreamPolicy, id: crate::numerics::ParamId) -> usize {
    policy.store().ids().position(|i| i == id).expect("id from this store")
}

/// Teacher-forced logits of every turn; the inference-side counterpart of
/// the training forward.
pub fn teacher_forced_logits(
    policy: &StreamPolicy,
    sample: &PreparedSample,
    w: LossWeights,
) -> Result<Vec<Tensor>, TrainError> {
    let mut g = crate::numerics::Eager;
    let p = policy.store().bind(&mut g);
    Ok(episode_pass(&mut g, &p, policy, sample, w, 0)?.logits)
}

/// Expert episodes over freshly generated maps.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub samples: Vec<TrainSample>,
    pub maps: Vec<GridMap>,
    /// Draws that produced no solvable map.
    pub skipped: usize,
}

/// Expert trajectory of `map` as a training sample: the plan cut into
/// chunks (padded with Stop) and the view at the start of every chunk plus
/// the final pose.
pub fn expert_sample<R: Rng>(map: &GridMap, rng: &mut R) -> Result<TrainSample, TrainError> {
    let (plan, path) = plan_reference(map, SUCCESS_RADIUS)?;
    let chunks = ActionChunk::chunk_plan(&plan);
    let observations = (0..=chunks.len())
        .map(|t| render_obs(map, path[(t * crate::env::CHUNK).min(plan.len())]))
        .collect();
    let instruction = gen_instruction(map, &plan, rng);
    TrainSample::new(instruction, observations, chunks)
}

/// `episodes` expert samples; map `i` is drawn from its own seed stream, so
/// any prefix of the dataset is the same for every size.
pub fn build_dataset(gen: &GeneratorConfig, episodes: usize, seed: u64) -> Dataset {
    let mut out = Dataset::default();
    for i in 0..episodes {
        let mut rng = rng_for(seed, "dataset", i as u64);
        let map = match generate_map(gen, &mut rng) {
            Ok(m) => m,
            Err(_) => {
                out.skipped += 1;
                continue;
            }
        };
        match expert_sample(&map, &mut rng) {
            Ok(s) => {
                out.samples.push(s);
                out.maps.push(map);
            }
            Err(_) => out.skipped += 1,
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 200,
            batch_size: 8,
            lr: 1e-3,
            weights: LossWeights::default(),
        }
    }
}

/// One CSV row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: LossBreakdown,
}

/// Train for `cfg.steps` updates over consecutive batches of `data`,
/// wrapping around. `on_step` sees each log row as it is produced.
pub fn fit(
    policy: &mut StreamPolicy,
    data: &[PreparedSample],
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepLog, &StreamPolicy),
) -> Result<Vec<StepLog>, TrainError> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(TrainError::EmptyBatch);
    }
    let mut adam = Adam::new(
        policy.store(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut logs = Vec::with_capacity(cfg.steps);
    let mut cursor = 0;
    for step in 0..cfg.steps {
        let batch: Vec<PreparedSample> = (0..cfg.batch_size.min(data.len()))
            .map(|i| data[(cursor + i) % data.len()].clone())
            .collect();
        cursor = (cursor + batch.len()) % data.len();
        let loss = train_step(policy, &batch, cfg.weights, &mut adam)?;
        let row = StepLog { step, loss };
        on_step(&row, policy);
        logs.push(row);
    }
    Ok(logs)
}

pub fn prepare_all(policy: &StreamPolicy, samples: &[TrainSample]) -> Result<Vec<PreparedSample>, TrainError> {
    samples.iter().map(|s| prepare(policy, s)).collect()
}

#[cfg(test)]
mod tests;
