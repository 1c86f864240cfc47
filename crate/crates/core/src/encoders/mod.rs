//! Frozen stand-ins for the 2D semantic teacher and the recurrent 3D teacher,
//! plus the trainable pieces that turn their features into model tokens:
//! cross-attention fusion, the projection MLP, and keyframe condensation.
//!
//! Teachers are tiny seeded networks whose weights never change after
//! construction. They serve both as the policy's input encoders and as the
//! source of latent prediction targets.

mod trainable;

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{kernels, NumericsError, ParamId, ParamStore, Tensor};
use crate::rng::normal_tensor;

pub use trainable::{condense_keyframe, fuse, project, FusionParams, Linear, Mlp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncoderError {
    #[error("observation shape {got:?} does not match encoder input {want:?}")]
    ObservationShape { got: [usize; 3], want: [usize; 3] },
    #[error("patch size {patch_h}x{patch_w} does not tile a {height}x{width} image")]
    PatchTiling {
        height: usize,
        width: usize,
        patch_h: usize,
        patch_w: usize,
    },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Egocentric image, `height × width × channels`, row-major HWC, values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ToyObservation {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl ToyObservation {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        ToyObservation {
            height,
            width,
            channels,
            pixels: vec![0.0; height * width * channels],
        }
    }

    /// Build from raw pixels; values are clamped into [0, 1].
    pub fn from_pixels(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Option<Self> {
        if pixels.len() != height * width * channels {
            return None;
        }
        let pixels = pixels.into_iter().map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }).collect();
        Some(ToyObservation {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.pixels[(row * self.width + col) * self.channels + ch] = v.clamp(0.0, 1.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EncoderConfig {
    pub image: usize,
    pub channels: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    pub d2: usize,
    pub d3: usize,
    pub d_state: usize,
    pub d_pose: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image: 16,
            channels: 3,
            patch_h: 4,
            patch_w: 4,
            d2: 32,
            d3: 32,
            d_state: 64,
            d_pose: 8,
            seed: 0x5EED_7EAC,
        }
    }
}

impl EncoderConfig {
    pub fn num_patches(&self) -> usize {
        (self.image / self.patch_h) * (self.image / self.patch_w)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_h * self.patch_w * self.channels
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.patch_h == 0
            || self.patch_w == 0
            || self.image % self.patch_h != 0
            || self.image % self.patch_w != 0
        {
            return Err(EncoderError::PatchTiling {
                height: self.image,
                width: self.image,
                patch_h: self.patch_h,
                patch_w: self.patch_w,
            });
        }
        Ok(())
    }
}

/// Flatten non-overlapping patches into rows `[num_patches × patch_dim]`,
/// patch-row-major.
pub fn patchify(obs: &ToyObservation, cfg: &EncoderConfig) -> Result<Tensor, EncoderError> {
    let want = [cfg.image, cfg.image, cfg.channels];
    if obs.dims() != want {
        return Err(EncoderError::ObservationShape { got: obs.dims(), want });
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let mut data = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    for pr in 0..cfg.image / ph {
        for pc in 0..cfg.image / pw {
            for r in 0..ph {
                for c in 0..pw {
                    for ch in 0..cfg.channels {
                        data.push(obs.get(pr * ph + r, pc * pw + c, ch));
                    }
                }
            }
        }
    }
    Ok(Tensor::from_rows(cfg.num_patches(), cfg.patch_dim(), data)?)
}

/// Token features from the 2D teacher, one unit-norm row per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature2D(pub Tensor);

/// Token features from the 3D teacher, one row per patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Feature3D(pub Tensor);

/// Recurrent state of the 3D teacher.
#[derive(Clone, Debug, PartialEq)]
pub struct Cut3rState {
    pub state: Tensor,
    pub steps: usize,
}

struct TeacherIds {
    proj2d: ParamId,
    pos2d: ParamId,
    proj3d: ParamId,
    pos3d: ParamId,
    a: ParamId,
    b: ParamId,
    c: ParamId,
    pose: ParamId,
}

/// Both frozen teachers. Weights live in a [`ParamStore`] whose entries are
/// all non-trainable.
pub struct Teachers {
    cfg: EncoderConfig,
    store: ParamStore,
    ids: TeacherIds,
}

impl Teachers {
    pub fn new(cfg: EncoderConfig) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (t, pd) = (cfg.num_patches(), cfg.patch_dim());
        let mut store = ParamStore::new();
        let mut add = |name: &str, rows: usize, cols: usize, std: f64| {
            store.insert(name, normal_tensor(&mut rng, rows, cols, std), false)
        };
        let ids = TeacherIds {
            proj2d: add("teacher2d.proj", pd, cfg.d2, 2.0 / (pd as f64).sqrt()),
            pos2d: add("teacher2d.pos", t, cfg.d2, 0.5),
            proj3d: add("teacher3d.proj", pd, cfg.d3, 2.0 / (pd as f64).sqrt()),
            pos3d: add("teacher3d.pos", t, cfg.d3, 0.5),
            a: add("teacher3d.state_a", cfg.d_state, cfg.d_state, 0.9 / (cfg.d_state as f64).sqrt()),
            b: add("teacher3d.state_b", cfg.d3, cfg.d_state, 1.5 / (cfg.d3 as f64).sqrt()),
            c: add(
                "teacher3d.out",
                cfg.d3 + cfg.d_state + cfg.d_pose,
                cfg.d3,
                1.0 / ((cfg.d3 + cfg.d_state + cfg.d_pose) as f64).sqrt(),
            ),
            pose: add("teacher3d.pose", 1, cfg.d_pose, 1.0),
        };
        Ok(Teachers { cfg, store, ids })
    }

    /// Rebuild from stored weights (e.g. a checkpoint). Shapes must match `cfg`.
    pub fn from_store(cfg: EncoderConfig, store: ParamStore) -> Result<Self, EncoderError> {
        let fresh = Teachers::new(cfg)?;
        let mut rebuilt = ParamStore::new();
        for id in fresh.store.ids() {
            let name = fresh.store.name(id);
            let want = fresh.store.get(id);
            let got = store
                .by_name(name)
                .filter(|t| t.shape() == want.shape())
                .ok_or(NumericsError::ShapeMismatch {
                    op: "teachers_from_store",
                    left: want.shape().to_vec(),
                    right: Vec::new(),
                })?;
            rebuilt.insert(name, got.clone(), false);
        }
        Ok(Teachers {
            cfg,
            store: rebuilt,
            ids: fresh.ids,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    fn w(&self, id: ParamId) -> &Tensor {
        self.store.get(id)
    }

    pub fn proj2d(&self) -> &Arc<Tensor> {
        self.store.get(self.ids.proj2d)
    }

    pub fn pos2d(&self) -> &Arc<Tensor> {
        self.store.get(self.ids.pos2d)
    }

    /// Patch projection, tanh, then per-token ℓ2 normalisation.
    pub fn encode_2d(&self, obs: &ToyObservation) -> Result<Feature2D, EncoderError> {
        let patches = patchify(obs, &self.cfg)?;
        let h = kernels::add(&kernels::matmul(&patches, self.w(self.ids.proj2d))?, self.w(self.ids.pos2d))?;
        Ok(Feature2D(kernels::l2_normalize(&kernels::tanh(&h))?))
    }

    pub fn reset_3d(&self) -> Cut3rState {
        Cut3rState {
            state: Tensor::zeros(&[1, self.cfg.d_state]),
            steps: 0,
        }
    }

    /// Per-patch features before the recurrent rollout.
    pub fn pre_3d(&self, obs: &ToyObservation) -> Result<Tensor, EncoderError> {
        let patches = patchify(obs, &self.cfg)?;
        let h = kernels::add(&kernels::matmul(&patches, self.w(self.ids.proj3d))?, self.w(self.ids.pos3d))?;
        Ok(kernels::tanh(&h))
    }

    /// `s_t = tanh(s_{t-1}·A + pool(pre)·B)`; tokens `[pre_i ; s_t ; p]·C`.
    pub fn encode_3d_step(
        &self,
        obs: &ToyObservation,
        state: &Cut3rState,
    ) -> Result<(Feature3D, Cut3rState), EncoderError> {
        let pre = self.pre_3d(obs)?;
        let pooled = kernels::mean_rows(&pre)?;
        let next = kernels::tanh(&kernels::add(
            &kernels::matmul(&state.state, self.w(self.ids.a))?,
            &kernels::matmul(&pooled, self.w(self.ids.b))?,
        )?);
        let rows = pre.rows();
        let broadcast = |t: &Tensor| kernels::gather_rows(t, &vec![0; rows]);
        let joined = kernels::concat_cols(&[&pre, &broadcast(&next)?, &broadcast(self.w(self.ids.pose))?])?;
        let out = kernels::matmul(&joined, self.w(self.ids.c))?;
        Ok((
            Feature3D(out),
            Cut3rState {
                state: next,
                steps: state.steps + 1,
            },
        ))
    }

    /// Roll the 3D teacher over a whole stream from reset.
    pub fn rollout_3d(&self, stream: &[ToyObservation]) -> Result<(Vec<Feature3D>, Cut3rState), EncoderError> {
        let mut state = self.reset_3d();
        let mut feats = Vec::with_capacity(stream.len());
        for obs in stream {
            let (f, s) = self.encode_3d_step(obs, &state)?;
            feats.push(f);
            state = s;
        }
        Ok((feats, state))
    }

    /// Raw weights for closed-form checks in tests.
    pub fn weights_3d(&self) -> [&Tensor; 6] {
        [
            self.w(self.ids.proj3d),
            self.w(self.ids.pos3d),
            self.w(self.ids.a),
            self.w(self.ids.b),
            self.w(self.ids.c),
            self.w(self.ids.pose),
        ]
    }
}
