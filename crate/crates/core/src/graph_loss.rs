//! Distance losses over a mini-batch graph of representations.
//!
//! Three terms are combined: the pairwise distance between the two fused
//! views of the same object, an unpaired term anchoring learned distances to
//! distances measured in the original feature spaces, and a mutual term
//! forcing the cross-modal, image-image and text-text unpaired distances of
//! an object pair to agree. All pair distances are cosine distances between
//! attention-fused representations; reference distances are constants, so no
//! gradient flows into the raw inputs.

use thiserror::Error;

use crate::autograd::{Tape, Var};
use crate::projector::{
    attention_map, fuse_pair, ProjectorError, ProjectorParams, ReshapedEmbedding,
};
use crate::tensor::{cosine_distance_value, NumError, Tensor};

#[derive(Debug, Error)]
pub enum GraphLossError {
    #[error("graph loss on an empty batch")]
    EmptyBatch,
    #[error("batch of {n} instances is too small: unpaired terms need at least 2")]
    BatchTooSmall { n: usize },
    #[error("degenerate batch: the mean original-space distance is zero")]
    DegenerateBatch,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Projector(#[from] ProjectorError),
    #[error(transparent)]
    Config(#[from] crate::projector::ConfigError),
}

/// Weights of the unpaired and mutual terms in the combined loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphLossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl GraphLossWeights {
    pub fn validate(&self) -> Result<(), crate::projector::ConfigError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::projector::ConfigError::Invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything the loss terms need from one mini-batch: the reshaped
/// embeddings of both modalities (index-paired), their attention maps, and
/// the denoised raw inputs for the reference distances.
pub struct BatchContext {
    pub img_embeddings: Vec<Var>,
    pub txt_embeddings: Vec<Var>,
    pub img_maps: Vec<Var>,
    pub txt_maps: Vec<Var>,
    pub raw_img: Tensor,
    pub raw_txt: Tensor,
}

impl BatchContext {
    pub fn new(
        img_embeddings: Vec<Var>,
        txt_embeddings: Vec<Var>,
        img_maps: Vec<Var>,
        txt_maps: Vec<Var>,
        raw_img: Tensor,
        raw_txt: Tensor,
    ) -> Result<Self, GraphLossError> {
        let n = img_embeddings.len();
        if n == 0 {
            return Err(GraphLossError::EmptyBatch);
        }
        if txt_embeddings.len() != n
            || img_maps.len() != n
            || txt_maps.len() != n
            || raw_img.rows() != n
            || raw_txt.rows() != n
        {
            return Err(GraphLossError::Num(NumError::DimMismatch {
                op: "batch_context",
                lhs: (n, txt_embeddings.len()),
                rhs: (raw_img.rows(), raw_txt.rows()),
            }));
        }
        Ok(BatchContext {
            img_embeddings,
            txt_embeddings,
            img_maps,
            txt_maps,
            raw_img,
            raw_txt,
        })
    }

    pub fn len(&self) -> usize {
        self.img_embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.img_embeddings.is_empty()
    }
}

/// Switches of the combined loss. A term is computed only when its flag is
/// set and its weight is nonzero, which keeps the degenerate combinations
/// exact (alpha = beta = 0 yields the pairwise term bit-for-bit).
#[derive(Debug, Clone, Copy)]
pub struct GraphLossOptions {
    pub weights: GraphLossWeights,
    pub use_unpaired: bool,
    pub use_mutual: bool,
    /// Keep the literal signed deviation of the unpaired term instead of the
    /// absolute deviation.
    pub signed_unpaired: bool,
    /// Add the text-to-image unpaired family on top of the three written
    /// ones.
    pub symmetric_unpaired: bool,
    /// Reference-distance normalizer precomputed over the whole training
    /// set; the default normalizes within the mini-batch.
    pub d_mean_override: Option<f64>,
}

impl GraphLossOptions {
    pub fn new(weights: GraphLossWeights) -> Self {
        GraphLossOptions {
            weights,
            use_unpaired: true,
            use_mutual: true,
            signed_unpaired: false,
            symmetric_unpaired: false,
            d_mean_override: None,
        }
    }

    fn need_unpaired(&self) -> bool {
        self.use_unpaired && self.weights.alpha != 0.0
    }

    fn need_mutual(&self) -> bool {
        self.use_mutual && self.weights.beta != 0.0
    }
}

/// The four scalars of one evaluation. Component nodes are present only when
/// the corresponding term entered the combination.
pub struct GraphLossReport {
    pub pairwise: Var,
    pub unpaired: Option<Var>,
    pub mutual: Option<Var>,
    pub combined: Var,
    pub l_pdl: f64,
    pub l_udp: f64,
    pub l_mdp: f64,
    pub l_gpl: f64,
}

// ── Pair distances ───────────────────────────────────────────────────

/// Distance between the fused views of instances `i` and `j`: co-attention
/// fusions for a cross-modal pair, self-attention fusions within a modality.
/// Both fusions share the summed attention map, so the value is symmetric in
/// the pair.
pub fn pair_distance(
    tape: &mut Tape,
    params: &ProjectorParams,
    xi: &ReshapedEmbedding,
    yj: &ReshapedEmbedding,
) -> Result<Var, GraphLossError> {
    let map_i = attention_map(tape, params, xi.var).map_err(GraphLossError::Num)?;
    let map_j = attention_map(tape, params, yj.var).map_err(GraphLossError::Num)?;
    pair_distance_with_maps(tape, xi.var, map_i, yj.var, map_j)
}

/// Pair distance from precomputed attention maps; the batch losses cache
/// each instance's map and reuse it across all pairs.
pub fn pair_distance_with_maps(
    tape: &mut Tape,
    x_hat_i: Var,
    map_i: Var,
    y_hat_j: Var,
    map_j: Var,
) -> Result<Var, GraphLossError> {
    let (fused_i, fused_j) = fuse_pair(tape, x_hat_i, y_hat_j, map_i, map_j)?;
    Ok(tape.cosine_distance(fused_i, fused_j)?)
}

/// Cache of every pair distance a batch needs. `vt` is the full n x n
/// cross-modal table (diagonal = paired distances); `vv` and `tt` hold the
/// symmetric within-modality tables and are only filled when the unpaired or
/// mutual terms ask for them.
struct PairTable {
    n: usize,
    vt: Vec<Option<Var>>,
    vv: Vec<Option<Var>>,
    tt: Vec<Option<Var>>,
}

impl PairTable {
    fn build(
        tape: &mut Tape,
        ctx: &BatchContext,
        off_diagonal: bool,
    ) -> Result<Self, GraphLossError> {
        let n = ctx.len();
        let mut vt = vec![None; n * n];
        let mut vv = vec![None; n * n];
        let mut tt = vec![None; n * n];
        for i in 0..n {
            let d = pair_distance_with_maps(
                tape,
                ctx.img_embeddings[i],
                ctx.img_maps[i],
                ctx.txt_embeddings[i],
                ctx.txt_maps[i],
            )?;
            vt[i * n + i] = Some(d);
        }
        if off_diagonal {
            for i in 0..n {
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = pair_distance_with_maps(
                        tape,
                        ctx.img_embeddings[i],
                        ctx.img_maps[i],
                        ctx.txt_embeddings[j],
                        ctx.txt_maps[j],
                    )?;
                    vt[i * n + j] = Some(d);
                }
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let d = pair_distance_with_maps(
                        tape,
                        ctx.img_embeddings[i],
                        ctx.img_maps[i],
                        ctx.img_embeddings[j],
                        ctx.img_maps[j],
                    )?;
                    vv[i * n + j] = Some(d);
                    vv[j * n + i] = Some(d);
                    let d = pair_distance_with_maps(
                        tape,
                        ctx.txt_embeddings[i],
                        ctx.txt_maps[i],
                        ctx.txt_embeddings[j],
                        ctx.txt_maps[j],
                    )?;
                    tt[i * n + j] = Some(d);
                    tt[j * n + i] = Some(d);
                }
            }
        }
        Ok(PairTable { n, vt, vv, tt })
    }

    fn vt(&self, i: usize, j: usize) -> Var {
        self.vt[i * self.n + j].expect("requested cross-modal pair was built")
    }

    fn vv(&self, i: usize, j: usize) -> Var {
        self.vv[i * self.n + j].expect("requested image-image pair was built")
    }

    fn tt(&self, i: usize, j: usize) -> Var {
        self.tt[i * self.n + j].expect("requested text-text pair was built")
    }
}

// ── Reference distances ──────────────────────────────────────────────

/// Geometric mean of the raw image and raw text cosine distances of a pair.
pub fn original_distance(
    u_i: &[f64],
    u_j: &[f64],
    c_i: &[f64],
    c_j: &[f64],
) -> Result<f64, NumError> {
    let du = cosine_distance_value(u_i, u_j)?;
    let dc = cosine_distance_value(c_i, c_j)?;
    Ok((du * dc).sqrt())
}

/// One normalized reference distance `d_ori / d_mean`.
pub fn reference_distance(
    u_i: &[f64],
    u_j: &[f64],
    c_i: &[f64],
    c_j: &[f64],
    d_mean: f64,
) -> Result<f64, GraphLossError> {
    if d_mean <= 0.0 {
        return Err(GraphLossError::DegenerateBatch);
    }
    Ok(original_distance(u_i, u_j, c_i, c_j)? / d_mean)
}

/// All normalized reference distances of a batch. These are plain constants
/// with respect to the trainable parameters.
pub struct ReferenceDistances {
    n: usize,
    d: Vec<f64>,
    pub d_mean: f64,
}

impl ReferenceDistances {
    /// Computes `d_ori` for every unordered pair and normalizes by the mean
    /// (or by `d_mean_override` when a global normalizer is supplied).
    pub fn compute(
        raw_img: &Tensor,
        raw_txt: &Tensor,
        d_mean_override: Option<f64>,
    ) -> Result<Self, GraphLossError> {
        let n = raw_img.rows();
        if n < 2 {
            return Err(GraphLossError::BatchTooSmall { n });
        }
        let mut ori = vec![0.0; n * n];
        let mut total = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = original_distance(
                    raw_img.row(i),
                    raw_img.row(j),
                    raw_txt.row(i),
                    raw_txt.row(j),
                )?;
                ori[i * n + j] = d;
                ori[j * n + i] = d;
                total += d;
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let d_mean = match d_mean_override {
            Some(m) => m,
            None => total / pairs,
        };
        if d_mean <= 0.0 {
            return Err(GraphLossError::DegenerateBatch);
        }
        ori.iter_mut().for_each(|v| *v /= d_mean);
        Ok(ReferenceDistances { n, d: ori, d_mean })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }
}

// ── Loss terms ───────────────────────────────────────────────────────

fn pairwise_from_table(tape: &mut Tape, table: &PairTable) -> Result<Var, GraphLossError> {
    let diag: Vec<Var> = (0..table.n).map(|i| table.vt(i, i)).collect();
    let total = tape.add_n(&diag)?;
    Ok(tape.scale(total, 1.0 / table.n as f64))
}

/// Mean over the batch of the paired cross-modal distance.
pub fn pairwise_loss(tape: &mut Tape, ctx: &BatchContext) -> Result<Var, GraphLossError> {
    let table = PairTable::build(tape, ctx, false)?;
    pairwise_from_table(tape, &table)
}

fn deviation(tape: &mut Tape, learned: Var, reference: f64, signed: bool) -> Var {
    let r = tape.scalar(reference);
    let diff = tape.sub(learned, r).expect("scalars share a shape");
    if signed {
        diff
    } else {
        tape.abs(diff)
    }
}

fn unpaired_from_table(
    tape: &mut Tape,
    table: &PairTable,
    refs: &ReferenceDistances,
    signed: bool,
    symmetric: bool,
) -> Result<Var, GraphLossError> {
    let n = table.n;
    let mut terms = Vec::with_capacity(n * (n - 1) * if symmetric { 4 } else { 3 });
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = refs.get(i, j);
            terms.push(deviation(tape, table.vt(i, j), d, signed));
            terms.push(deviation(tape, table.vv(i, j), d, signed));
            terms.push(deviation(tape, table.tt(i, j), d, signed));
            if symmetric {
                // Text-to-image family; distances are pair-symmetric, so the
                // transposed cross-modal entry is the needed value.
                terms.push(deviation(tape, table.vt(j, i), d, signed));
            }
        }
    }
    // Inner sums carry 1/n (as written), the outer average over instances
    // another 1/n.
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, 1.0 / (n * n) as f64))
}

/// Unpaired distance preservation: per instance, the deviations of the
/// cross-modal, image-image and text-text unpaired distances from their
/// reference values, averaged over the batch.
pub fn unpaired_loss(
    tape: &mut Tape,
    ctx: &BatchContext,
    refs: &ReferenceDistances,
    signed: bool,
    symmetric: bool,
) -> Result<Var, GraphLossError> {
    let n = ctx.len();
    if n < 2 {
        return Err(GraphLossError::BatchTooSmall { n });
    }
    let table = PairTable::build(tape, ctx, true)?;
    unpaired_from_table(tape, &table, refs, signed, symmetric)
}

fn mutual_from_table(tape: &mut Tape, table: &PairTable) -> Result<Var, GraphLossError> {
    let n = table.n;
    let mut terms = Vec::with_capacity(3 * n * (n - 1));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let vt = table.vt(i, j);
            let vv = table.vv(i, j);
            let tt = table.tt(i, j);
            let d1 = tape.sub(vt, vv)?;
            terms.push(tape.abs(d1));
            let d2 = tape.sub(vt, tt)?;
            terms.push(tape.abs(d2));
            let d3 = tape.sub(vv, tt)?;
            terms.push(tape.abs(d3));
        }
    }
    let total = tape.add_n(&terms)?;
    Ok(tape.scale(total, 1.0 / (n * (n - 1)) as f64))
}

/// Mutual distance preservation: over all ordered pairs, the pairwise
/// disagreements between the three unpaired distance families.
pub fn mutual_loss(tape: &mut Tape, ctx: &BatchContext) -> Result<Var, GraphLossError> {
    let n = ctx.len();
    if n < 2 {
        return Err(GraphLossError::BatchTooSmall { n });
    }
    let table = PairTable::build(tape, ctx, true)?;
    mutual_from_table(tape, &table)
}

/// The combined loss with both optional terms, plus the individual values
/// for logging. Reference distances are computed from the context unless
/// the caller already has them.
pub fn graph_pattern_loss(
    tape: &mut Tape,
    ctx: &BatchContext,
    options: &GraphLossOptions,
    precomputed_refs: Option<&ReferenceDistances>,
) -> Result<GraphLossReport, GraphLossError> {
    let n = ctx.len();
    if n == 0 {
        return Err(GraphLossError::EmptyBatch);
    }
    options.weights.validate()?;
    let need_unpaired = options.need_unpaired();
    let need_mutual = options.need_mutual();
    if (need_unpaired || need_mutual) && n < 2 {
        return Err(GraphLossError::BatchTooSmall { n });
    }

    let table = PairTable::build(tape, ctx, need_unpaired || need_mutual)?;
    let pairwise = pairwise_from_table(tape, &table)?;
    let mut combined = pairwise;

    let mut unpaired = None;
    if need_unpaired {
        let owned;
        let refs = match precomputed_refs {
            Some(r) => r,
            None => {
                owned = ReferenceDistances::compute(
                    &ctx.raw_img,
                    &ctx.raw_txt,
                    options.d_mean_override,
                )?;
                &owned
            }
        };
        let term = unpaired_from_table(
            tape,
            &table,
            refs,
            options.signed_unpaired,
            options.symmetric_unpaired,
        )?;
        let scaled = tape.scale(term, options.weights.alpha);
        combined = tape.add(combined, scaled)?;
        unpaired = Some(term);
    }

    let mut mutual = None;
    if need_mutual {
        let term = mutual_from_table(tape, &table)?;
        let scaled = tape.scale(term, options.weights.beta);
        combined = tape.add(combined, scaled)?;
        mutual = Some(term);
    }

    Ok(GraphLossReport {
        l_pdl: tape.value_scalar(pairwise),
        l_udp: unpaired.map_or(0.0, |v| tape.value_scalar(v)),
        l_mdp: mutual.map_or(0.0, |v| tape.value_scalar(v)),
        l_gpl: tape.value_scalar(combined),
        pairwise,
        unpaired,
        mutual,
        combined,
    })
}
