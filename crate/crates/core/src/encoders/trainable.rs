use std::sync::Arc;

use rand::Rng;

use crate::numerics::{BoundParams, Graph, NumericsError, ParamId, ParamStore, Tensor};
use crate::rng::normal_tensor;

/// `y = x·W + b`, `W: d_in × d_out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, d_in: usize, d_out: usize) -> Self {
        let w = store.insert(
            format!("{name}.w"),
            normal_tensor(rng, d_in, d_out, 1.0 / (d_in as f64).sqrt()),
            true,
        );
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[1, d_out]), true);
        Linear { w, b, d_in, d_out }
    }

    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        p: &BoundParams<G::Node>,
        x: &G::Node,
    ) -> Result<G::Node, NumericsError> {
        let h = g.matmul(x, p.get(self.w))?;
        g.add_row(&h, p.get(self.b))
    }
}

/// Stack of linear layers with GELU between them (none after the last).
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, name: &str, dims: &[usize]) -> Self {
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| Linear::init(store, rng, &format!("{name}.{i}"), d[0], d[1]))
            .collect();
        Mlp { layers }
    }

    pub fn forward<G: Graph>(
        &self,
        g: &mut G,
        p: &BoundParams<G::Node>,
        x: &G::Node,
    ) -> Result<G::Node, NumericsError> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = g.gelu(&h)?;
            }
            h = layer.forward(g, p, &h)?;
        }
        Ok(h)
    }
}

/// Cross-attention fusion weights: 2D tokens query the 3D tokens.
#[derive(Clone, Copy, Debug)]
pub struct FusionParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub d2: usize,
    pub d3: usize,
    pub d_k: usize,
    pub d_v: usize,
}

impl FusionParams {
    pub fn init<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d2: usize,
        d3: usize,
        d_k: usize,
        d_v: usize,
    ) -> Self {
        assert!(d_k > 0, "fusion key dim must be positive");
        let mut mk = |suffix: &str, din: usize, dout: usize| {
            store.insert(
                format!("{name}.{suffix}"),
                normal_tensor(rng, din, dout, 1.0 / (din as f64).sqrt()),
                true,
            )
        };
        FusionParams {
            wq: mk("wq", d2, d_k),
            wk: mk("wk", d3, d_k),
            wv: mk("wv", d3, d_v),
            d2,
            d3,
            d_k,
            d_v,
        }
    }
}

/// `softmax((f2d·W_Q)(f3d·W_K)ᵀ / √d_k) · (f3d·W_V)`, one output row per 2D token.
pub fn fuse<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    params: &FusionParams,
    f2d: &G::Node,
    f3d: &G::Node,
) -> Result<G::Node, NumericsError> {
    let q = g.matmul(f2d, p.get(params.wq))?;
    let k = g.matmul(f3d, p.get(params.wk))?;
    let v = g.matmul(f3d, p.get(params.wv))?;
    let scores = g.matmul_nt(&q, &k)?;
    let scores = g.scale(&scores, 1.0 / (params.d_k as f64).sqrt())?;
    let all = Arc::new(vec![true; g.value(&scores).len()]);
    let attn = g.masked_softmax(&scores, all)?;
    g.matmul(&attn, &v)
}

pub fn project<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    mlp: &Mlp,
    fused: &G::Node,
) -> Result<G::Node, NumericsError> {
    mlp.forward(g, p, fused)
}

/// Mean over tokens, then a linear map to a single model-width token.
pub fn condense_keyframe<G: Graph>(
    g: &mut G,
    p: &BoundParams<G::Node>,
    linear: &Linear,
    fused: &G::Node,
) -> Result<G::Node, NumericsError> {
    let pooled = g.mean_rows(fused)?;
    linear.forward(g, p, &pooled)
}
