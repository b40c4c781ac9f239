//! The attention feature projector.
//!
//! Raw per-modality features are denoised, pushed through a modality-specific
//! entry layer and a shared second layer into the common space, reshaped into
//! `k` sub-representations, and fused with attention maps. Self-attention
//! fuses two instances of the same modality, co-attention fuses across
//! modalities; both add the two instances' attention maps before weighting.
//!
//! Tape-recorded functions mirror the plain (`*_eval`) functions one-to-one;
//! the plain path is used at evaluation time where no gradients are needed.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autograd::{param_ref, ParamRef, Tape, Var};
use crate::tensor::{self, NumError, Tensor};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("denoise rate must lie in [0, 1), got {0}")]
    DenoiseRate(f64),
    #[error("k = {k} must divide the common-space dimension {common_dim}")]
    KNotDividing { k: usize, common_dim: usize },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ProjectorError {
    #[error("self-attention requires two {expected} instances, got {got}")]
    SelfModalityMismatch { expected: Modality, got: Modality },
    #[error("co-attention requires opposite modalities, both inputs are {0}")]
    CoSameModality(Modality),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Modality {
    Image,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Modality::Image => write!(f, "image"),
            Modality::Text => write!(f, "text"),
        }
    }
}

/// Layer sizes of the projector.
///
/// `common_dim` (the shared space width) must be divisible by `k`; each
/// instance's common-space vector is viewed as `sub_dim() x k`, and the
/// attention scorer works on `attention_hidden() = sub_dim()/2` units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectorDims {
    pub input_dim_img: usize,
    pub input_dim_txt: usize,
    /// Width of the modality-specific entry layer output.
    pub encoder_dim: usize,
    /// Width of the shared common space (the retrieval embedding size).
    pub common_dim: usize,
    /// Number of sub-representations per instance.
    pub k: usize,
}

impl ProjectorDims {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.common_dim == 0 || !self.common_dim.is_multiple_of(self.k) {
            return Err(ConfigError::KNotDividing {
                k: self.k,
                common_dim: self.common_dim,
            });
        }
        for (name, v) in [
            ("input_dim_img", self.input_dim_img),
            ("input_dim_txt", self.input_dim_txt),
            ("encoder_dim", self.encoder_dim),
        ] {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Rows of a reshaped embedding (H = common_dim / k).
    pub fn sub_dim(&self) -> usize {
        self.common_dim / self.k
    }

    /// Hidden width of the attention scorer (H/2, floored, at least 1).
    pub fn attention_hidden(&self) -> usize {
        (self.sub_dim() / 2).max(1)
    }
}

/// All trainable matrices of the projector. The entry layers are per
/// modality (input widths differ); the second layer is shared by both.
pub struct ProjectorParams {
    pub dims: ProjectorDims,
    /// input_dim_img x encoder_dim
    pub w_img: ParamRef,
    /// input_dim_txt x encoder_dim
    pub w_txt: ParamRef,
    /// encoder_dim x common_dim, identical for both modalities
    pub w_shared: ParamRef,
    /// attention_hidden x sub_dim
    pub w_att_hidden: ParamRef,
    /// 1 x attention_hidden
    pub w_att_out: ParamRef,
}

/// Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
pub fn init_matrix(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::new(rows, cols, data).expect("sized to shape")
}

impl ProjectorParams {
    pub fn init(dims: ProjectorDims, rng: &mut ChaCha8Rng) -> Result<Self, ConfigError> {
        dims.validate()?;
        let h = dims.sub_dim();
        let d = dims.attention_hidden();
        let w_img = init_matrix(dims.input_dim_img, dims.encoder_dim, dims.input_dim_img, rng);
        let w_txt = init_matrix(dims.input_dim_txt, dims.encoder_dim, dims.input_dim_txt, rng);
        let w_shared = init_matrix(dims.encoder_dim, dims.common_dim, dims.encoder_dim, rng);
        let w_att_hidden = init_matrix(d, h, h, rng);
        let w_att_out = init_matrix(1, d, d, rng);
        Ok(ProjectorParams {
            dims,
            w_img: param_ref(w_img),
            w_txt: param_ref(w_txt),
            w_shared: param_ref(w_shared),
            w_att_hidden: param_ref(w_att_hidden),
            w_att_out: param_ref(w_att_out),
        })
    }

    /// Parameters trained by the generator step. With attention disabled the
    /// scorer matrices receive no gradient and are left out entirely.
    pub fn trainable(&self, use_attention: bool) -> Vec<ParamRef> {
        let mut out = vec![
            self.w_img.clone(),
            self.w_txt.clone(),
            self.w_shared.clone(),
        ];
        if use_attention {
            out.push(self.w_att_hidden.clone());
            out.push(self.w_att_out.clone());
        }
        out
    }

    pub fn entry_layer(&self, modality: Modality) -> &ParamRef {
        match modality {
            Modality::Image => &self.w_img,
            Modality::Text => &self.w_txt,
        }
    }
}

/// An instance's common-space vector viewed as `sub_dim x k`; column `j`
/// holds elements `[j*H, (j+1)*H)` of the flat vector.
pub struct ReshapedEmbedding {
    pub var: Var,
    pub modality: Modality,
    pub instance: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    SelfAttention,
    CoAttention,
}

/// `x̂_i · (a_i + a_j)`, tagged with where it came from.
pub struct FusedRepresentation {
    pub var: Var,
    pub instance: usize,
    pub partner: usize,
    pub mode: AttentionMode,
}

// ── Denoising ────────────────────────────────────────────────────────

/// Zeroes each element independently with probability `rate`, deterministic
/// in `seed`. Training-time only; evaluation never calls this.
pub fn denoise(x: &Tensor, rate: f64, seed: u64) -> Result<Tensor, ConfigError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(ConfigError::DenoiseRate(rate));
    }
    let mut out = x.clone();
    if rate == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in out.data_mut() {
        if rng.random::<f64>() < rate {
            *v = 0.0;
        }
    }
    Ok(out)
}

// ── Tape-recorded forward ────────────────────────────────────────────

/// Projects a batch of raw features (one row per instance) into the common
/// space: `tanh(tanh(x · W_modality) · W_shared)`, shape n x common_dim.
pub fn encode(
    tape: &mut Tape,
    x: &Tensor,
    params: &ProjectorParams,
    modality: Modality,
) -> Result<Var, NumError> {
    let x = tape.constant(x);
    let w_entry = tape.param(params.entry_layer(modality));
    let pre = tape.matmul(x, w_entry)?;
    let hidden = tape.tanh(pre);
    let w_shared = tape.param(&params.w_shared);
    let z = tape.matmul(hidden, w_shared)?;
    Ok(tape.tanh(z))
}

/// Splits a flat common-space vector (1 x L node) into k sub-representations
/// (H x k node). Column j holds elements [jH, (j+1)H); flattening inverts it.
pub fn reshape_k(tape: &mut Tape, v: Var, k: usize) -> Result<Var, ProjectorError> {
    let (rows, cols) = tape.shape(v);
    let len = rows * cols;
    if k == 0 || !len.is_multiple_of(k) {
        return Err(ConfigError::KNotDividing { k, common_dim: len }.into());
    }
    let h = len / k;
    // Row-major k x H view, transposed, puts contiguous blocks into columns.
    let blocks = tape.reshape(v, k, h)?;
    Ok(tape.transpose(blocks))
}

/// Attention map of one instance: `softmax((W2 · tanh(W1 · x̂))ᵀ)`, a k x 1
/// probability vector over the sub-representations.
pub fn attention_map(
    tape: &mut Tape,
    params: &ProjectorParams,
    x_hat: Var,
) -> Result<Var, NumError> {
    let w1 = tape.param(&params.w_att_hidden);
    let w2 = tape.param(&params.w_att_out);
    let pre = tape.matmul(w1, x_hat)?;
    let hidden = tape.tanh(pre);
    let scores = tape.matmul(w2, hidden)?;
    let col = tape.transpose(scores);
    Ok(tape.softmax_cols(col))
}

/// The shared fusion core: both attended outputs of a pair use the same
/// summed attention map, so the sum is recorded once.
pub fn fuse_pair(
    tape: &mut Tape,
    x_hat_i: Var,
    x_hat_j: Var,
    map_i: Var,
    map_j: Var,
) -> Result<(Var, Var), NumError> {
    let summed = tape.add(map_i, map_j)?;
    let fused_i = tape.matmul(x_hat_i, summed)?;
    let fused_j = tape.matmul(x_hat_j, summed)?;
    Ok((fused_i, fused_j))
}

/// `x̂_i · (a_i + a_j)` for two instances of the same modality.
pub fn self_attend(
    tape: &mut Tape,
    params: &ProjectorParams,
    xi: &ReshapedEmbedding,
    xj: &ReshapedEmbedding,
) -> Result<FusedRepresentation, ProjectorError> {
    if xi.modality != xj.modality {
        return Err(ProjectorError::SelfModalityMismatch {
            expected: xi.modality,
            got: xj.modality,
        });
    }
    let map_i = attention_map(tape, params, xi.var)?;
    let map_j = attention_map(tape, params, xj.var)?;
    let summed = tape.add(map_i, map_j)?;
    let fused = tape.matmul(xi.var, summed)?;
    Ok(FusedRepresentation {
        var: fused,
        instance: xi.instance,
        partner: xj.instance,
        mode: AttentionMode::SelfAttention,
    })
}

/// `x̂_i · (a_i^x + a_j^y)` for two instances of opposite modalities.
pub fn co_attend(
    tape: &mut Tape,
    params: &ProjectorParams,
    xi: &ReshapedEmbedding,
    yj: &ReshapedEmbedding,
) -> Result<FusedRepresentation, ProjectorError> {
    if xi.modality == yj.modality {
        return Err(ProjectorError::CoSameModality(xi.modality));
    }
    let map_i = attention_map(tape, params, xi.var)?;
    let map_j = attention_map(tape, params, yj.var)?;
    let summed = tape.add(map_i, map_j)?;
    let fused = tape.matmul(xi.var, summed)?;
    Ok(FusedRepresentation {
        var: fused,
        instance: xi.instance,
        partner: yj.instance,
        mode: AttentionMode::CoAttention,
    })
}

/// The attention map used when diversified attention is ablated: uniform
/// 1/k weight per sub-representation.
pub fn uniform_map(k: usize) -> Tensor {
    Tensor::new(k, 1, vec![1.0 / k as f64; k]).expect("sized to shape")
}

// ── Plain (evaluation-time) forward ──────────────────────────────────

pub fn encode_eval(
    x: &Tensor,
    params: &ProjectorParams,
    modality: Modality,
) -> Result<Tensor, NumError> {
    let w_entry = params.entry_layer(modality).borrow();
    let hidden = tensor::tanh(&tensor::matmul(x, &w_entry)?);
    let w_shared = params.w_shared.borrow();
    Ok(tensor::tanh(&tensor::matmul(&hidden, &w_shared)?))
}

pub fn reshape_k_eval(v: &[f64], k: usize) -> Result<Tensor, ConfigError> {
    if k == 0 || !v.len().is_multiple_of(k) {
        return Err(ConfigError::KNotDividing {
            k,
            common_dim: v.len(),
        });
    }
    let h = v.len() / k;
    let mut out = Tensor::zeros(h, k);
    for c in 0..k {
        for r in 0..h {
            out.set(r, c, v[c * h + r]);
        }
    }
    Ok(out)
}

pub fn attention_map_eval(params: &ProjectorParams, x_hat: &Tensor) -> Result<Tensor, NumError> {
    let w1 = params.w_att_hidden.borrow();
    let w2 = params.w_att_out.borrow();
    let hidden = tensor::tanh(&tensor::matmul(&w1, x_hat)?);
    let scores = tensor::matmul(&w2, &hidden)?;
    Ok(tensor::softmax_cols(&tensor::transpose(&scores)))
}

/// Plain co-attention fusion pair, matching `fuse_pair`.
pub fn fuse_pair_eval(
    x_hat_i: &Tensor,
    x_hat_j: &Tensor,
    map_i: &Tensor,
    map_j: &Tensor,
) -> Result<(Tensor, Tensor), NumError> {
    let summed = tensor::add(map_i, map_j)?;
    Ok((
        tensor::matmul(x_hat_i, &summed)?,
        tensor::matmul(x_hat_j, &summed)?,
    ))
}
