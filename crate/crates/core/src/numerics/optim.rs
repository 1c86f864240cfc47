use std::collections::HashMap;
use std::sync::Arc;

use super::{Graph, Gradients, NumericsError, Tensor, Var};

/// Named parameter tensors. Frozen entries are bound as non-trainable and are
/// never touched by the optimizer.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
    trainable: Vec<bool>,
    index: HashMap<String, usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Arc::new(value));
        self.trainable.push(trainable);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Arc<Tensor> {
        &self.values[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|id| self.values[id.0].as_ref())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.trainable[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    /// Replace a tensor's contents; the shape must not change.
    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<(), NumericsError> {
        if value.shape() != self.values[id.0].shape() {
            return Err(NumericsError::shape("param_set", self.values[id.0].shape(), value.shape()));
        }
        self.values[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Bind every parameter into a graph; index the result with `ParamId`.
    pub fn bind<G: Graph>(&self, g: &mut G) -> BoundParams<G::Node> {
        BoundParams {
            nodes: self
                .values
                .iter()
                .zip(&self.trainable)
                .map(|(v, &t)| g.bind(v, t))
                .collect(),
        }
    }
}

pub struct BoundParams<N> {
    nodes: Vec<N>,
}

impl<N: Clone> BoundParams<N> {
    pub fn get(&self, id: ParamId) -> &N {
        &self.nodes[id.0]
    }
}

impl BoundParams<Var> {
    /// Gradient for every parameter in store order (zeros when unreachable).
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.nodes.iter().map(|&v| grads.get_or_zeros(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn for_params(params: &[&Tensor]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update over parallel slices of params and grads.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: AdamConfig,
) -> Result<(), NumericsError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::shape(
            "adam_step",
            &[params.len()],
            &[grads.len(), state.m.len()],
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(NumericsError::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj;
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            *w -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Adam over the trainable subset of a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Adam {
    pub cfg: AdamConfig,
    ids: Vec<super::optim::ParamId>,
    state: AdamState,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let ids: Vec<ParamId> = store.ids().filter(|&id| store.is_trainable(id)).collect();
        let shapes: Vec<&Tensor> = ids.iter().map(|&id| store.get(id).as_ref()).collect();
        let state = AdamState::for_params(&shapes);
        Adam { cfg, ids, state }
    }

    pub fn steps_taken(&self) -> u64 {
        self.state.step
    }

    /// `grads` is indexed in store order (as from [`BoundParams::gradients`]).
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Tensor]) -> Result<(), NumericsError> {
        let picked: Vec<Tensor> = self.ids.iter().map(|id| grads[id.0].clone()).collect();
        let mut owned: Vec<Tensor> = self.ids.iter().map(|&id| store.get(id).as_ref().clone()).collect();
        {
            let mut refs: Vec<&mut Tensor> = owned.iter_mut().collect();
            adam_step(&mut refs, &picked, &mut self.state, self.cfg)?;
        }
        for (&id, t) in self.ids.iter().zip(owned) {
            store.set(id, t)?;
        }
        Ok(())
    }
}
