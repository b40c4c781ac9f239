#![allow(clippy::needless_range_loop)]

//! Straight-line re-implementation of the full objective on nested vectors.
//!
//! This oracle recomputes everything from the denoised raw inputs and the
//! weight matrices with explicit scalar loops: encoding, reshaping,
//! attention, both fusions, cosine distances, the three loss terms, their
//! combination, the modality classifier and both adversarial objectives.
//! It shares no code with the library.

pub type Mat = Vec<Vec<f64>>;

pub struct RefProjector {
    /// input_dim x encoder_dim, one per modality.
    pub w_img: Mat,
    pub w_txt: Mat,
    /// encoder_dim x common_dim.
    pub w_shared: Mat,
    /// attention scorer: d x h and 1 x d.
    pub w1: Mat,
    pub w2: Mat,
    pub k: usize,
}

pub struct RefClassifier {
    /// common_dim x hidden and hidden x 2.
    pub w_hidden: Mat,
    pub w_out: Mat,
}

pub struct RefLossSettings {
    pub alpha: f64,
    pub beta: f64,
    pub use_udp: bool,
    pub use_mdp: bool,
    pub signed_udp: bool,
    pub symmetric_udp: bool,
}

pub struct RefLossValues {
    pub l_pdl: f64,
    pub l_udp: f64,
    pub l_mdp: f64,
    pub l_gpl: f64,
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let m = a.len();
    let k = b.len();
    let n = b[0].len();
    let mut out = vec![vec![0.0; n]; m];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i][p] * b[p][j];
            }
            out[i][j] = acc;
        }
    }
    out
}

pub fn mat_tanh(a: &Mat) -> Mat {
    a.iter()
        .map(|row| row.iter().map(|v| v.tanh()).collect())
        .collect()
}

pub fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    1.0 - (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// tanh(tanh(x · W_modality) · W_shared) for one row.
pub fn encode_row(proj: &RefProjector, row: &[f64], image: bool) -> Vec<f64> {
    let w = if image { &proj.w_img } else { &proj.w_txt };
    let hidden = mat_tanh(&mat_mul(&vec![row.to_vec()], w));
    mat_tanh(&mat_mul(&hidden, &proj.w_shared))[0].clone()
}

/// h x k matrix whose column j is the j-th contiguous block of v.
pub fn reshape_blocks(v: &[f64], k: usize) -> Mat {
    let h = v.len() / k;
    let mut out = vec![vec![0.0; k]; h];
    for j in 0..k {
        for r in 0..h {
            out[r][j] = v[j * h + r];
        }
    }
    out
}

/// softmax((w2 · tanh(w1 · x_hat))ᵀ) as a length-k vector.
pub fn attention(proj: &RefProjector, x_hat: &Mat) -> Vec<f64> {
    let scores = mat_mul(&proj.w2, &mat_tanh(&mat_mul(&proj.w1, x_hat)))[0].clone();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// x_hat · (a_i + a_j) — both self- and co-attention reduce to this.
pub fn fuse(x_hat: &Mat, a_i: &[f64], a_j: &[f64]) -> Vec<f64> {
    let h = x_hat.len();
    let k = a_i.len();
    let mut out = vec![0.0; h];
    for r in 0..h {
        for c in 0..k {
            out[r] += x_hat[r][c] * (a_i[c] + a_j[c]);
        }
    }
    out
}

/// d_cos of the two fused views of a pair, used for every family.
pub fn pair_distance(x_hat_i: &Mat, a_i: &[f64], y_hat_j: &Mat, a_j: &[f64]) -> f64 {
    let fused_i = fuse(x_hat_i, a_i, a_j);
    let fused_j = fuse(y_hat_j, a_j, a_i);
    cosine_distance(&fused_i, &fused_j)
}

/// Full loss-chain evaluation from denoised raw inputs. When `uniform_maps`
/// is set every attention map is the uniform 1/k vector (the attention-off
/// ablation).
pub fn graph_pattern_loss(
    proj: &RefProjector,
    raw_img: &Mat,
    raw_txt: &Mat,
    settings: &RefLossSettings,
    uniform_maps: bool,
) -> RefLossValues {
    let n = raw_img.len();
    let k = proj.k;

    let v_hat: Vec<Mat> = raw_img
        .iter()
        .map(|row| reshape_blocks(&encode_row(proj, row, true), k))
        .collect();
    let t_hat: Vec<Mat> = raw_txt
        .iter()
        .map(|row| reshape_blocks(&encode_row(proj, row, false), k))
        .collect();
    let a_v: Vec<Vec<f64>> = v_hat
        .iter()
        .map(|x| {
            if uniform_maps {
                vec![1.0 / k as f64; k]
            } else {
                attention(proj, x)
            }
        })
        .collect();
    let a_t: Vec<Vec<f64>> = t_hat
        .iter()
        .map(|x| {
            if uniform_maps {
                vec![1.0 / k as f64; k]
            } else {
                attention(proj, x)
            }
        })
        .collect();

    // Pairwise term: mean over instances of the paired co-attended distance.
    let mut l_pdl = 0.0;
    for i in 0..n {
        l_pdl += pair_distance(&v_hat[i], &a_v[i], &t_hat[i], &a_t[i]);
    }
    l_pdl /= n as f64;

    // Reference distances from the raw spaces.
    let mut d_ori = vec![vec![0.0; n]; n];
    let mut d_sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (cosine_distance(&raw_img[i], &raw_img[j])
                * cosine_distance(&raw_txt[i], &raw_txt[j]))
            .sqrt();
            d_ori[i][j] = d;
            d_ori[j][i] = d;
            d_sum += d;
        }
    }
    let d_mean = d_sum / (n * (n - 1) / 2) as f64;

    let lp_vt = |i: usize, j: usize| pair_distance(&v_hat[i], &a_v[i], &t_hat[j], &a_t[j]);
    let lp_vv = |i: usize, j: usize| pair_distance(&v_hat[i], &a_v[i], &v_hat[j], &a_v[j]);
    let lp_tt = |i: usize, j: usize| pair_distance(&t_hat[i], &a_t[i], &t_hat[j], &a_t[j]);

    let mut l_udp = 0.0;
    if settings.use_udp && settings.alpha != 0.0 {
        let dev = |lp: f64, d: f64| {
            if settings.signed_udp {
                lp - d
            } else {
                (lp - d).abs()
            }
        };
        for i in 0..n {
            let mut per_instance = 0.0;
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d = d_ori[i][j] / d_mean;
                per_instance += dev(lp_vt(i, j), d) / n as f64;
                per_instance += dev(lp_vv(i, j), d) / n as f64;
                per_instance += dev(lp_tt(i, j), d) / n as f64;
                if settings.symmetric_udp {
                    per_instance += dev(lp_vt(j, i), d) / n as f64;
                }
            }
            l_udp += per_instance;
        }
        l_udp /= n as f64;
    }

    let mut l_mdp = 0.0;
    if settings.use_mdp && settings.beta != 0.0 {
        for i in 0..n {
            for j in 0..n {
                if j == i {
                    continue;
                }
                let vt = lp_vt(i, j);
                let vv = lp_vv(i, j);
                let tt = lp_tt(i, j);
                l_mdp += (vt - vv).abs() + (vt - tt).abs() + (vv - tt).abs();
            }
        }
        l_mdp /= (n * (n - 1)) as f64;
    }

    let mut l_gpl = l_pdl;
    if settings.use_udp && settings.alpha != 0.0 {
        l_gpl += settings.alpha * l_udp;
    }
    if settings.use_mdp && settings.beta != 0.0 {
        l_gpl += settings.beta * l_mdp;
    }
    RefLossValues {
        l_pdl,
        l_udp,
        l_mdp,
        l_gpl,
    }
}

/// softmax(tanh(x · w_hidden) · w_out) for one row.
pub fn classify(cls: &RefClassifier, row: &[f64]) -> [f64; 2] {
    let hidden = mat_tanh(&mat_mul(&vec![row.to_vec()], &cls.w_hidden));
    let logits = mat_mul(&hidden, &cls.w_out)[0].clone();
    let max = logits[0].max(logits[1]);
    let e0 = (logits[0] - max).exp();
    let e1 = (logits[1] - max).exp();
    [e0 / (e0 + e1), e1 / (e0 + e1)]
}

/// -(y log x + (1-y) log(1-x)) summed over both components, with the same
/// clamp the library applies.
pub fn cross_entropy(pred: [f64; 2], label: [f64; 2]) -> f64 {
    let mut loss = 0.0;
    for c in 0..2 {
        let x = pred[c].clamp(1e-12, 1.0 - 1e-12);
        loss -= label[c] * x.ln() + (1.0 - label[c]) * (1.0 - x).ln();
    }
    loss
}

/// Batch-averaged classifier objective on encoded (not reshaped) features.
pub fn classifier_loss(
    proj: &RefProjector,
    cls: &RefClassifier,
    raw_img: &Mat,
    raw_txt: &Mat,
) -> f64 {
    let n = raw_img.len();
    let mut loss = 0.0;
    for i in 0..n {
        let v = encode_row(proj, &raw_img[i], true);
        let t = encode_row(proj, &raw_txt[i], false);
        loss += cross_entropy(classify(cls, &v), [1.0, 0.0]);
        loss += cross_entropy(classify(cls, &t), [0.0, 1.0]);
    }
    loss / n as f64
}

/// Generator objective: graph loss plus lambda times the flipped-label
/// confusion term.
pub fn generator_loss(
    proj: &RefProjector,
    cls: &RefClassifier,
    raw_img: &Mat,
    raw_txt: &Mat,
    settings: &RefLossSettings,
    uniform_maps: bool,
    lambda: f64,
) -> f64 {
    let gpl = graph_pattern_loss(proj, raw_img, raw_txt, settings, uniform_maps).l_gpl;
    if lambda == 0.0 {
        return gpl;
    }
    let n = raw_img.len();
    let mut confusion = 0.0;
    for i in 0..n {
        let v = encode_row(proj, &raw_img[i], true);
        let t = encode_row(proj, &raw_txt[i], false);
        confusion += cross_entropy(classify(cls, &v), [0.0, 1.0]);
        confusion += cross_entropy(classify(cls, &t), [1.0, 0.0]);
    }
    gpl + lambda * confusion / n as f64
}

/// Snapshot of a shared parameter as nested rows.
pub fn param_to_mat(p: &xmodal_core::autograd::ParamRef) -> Mat {
    let t = p.borrow();
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Snapshot of a tensor as nested rows.
pub fn tensor_to_mat(t: &xmodal_core::Tensor) -> Mat {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

/// Reference view of a projector's current weights.
pub fn projector_to_ref(p: &xmodal_core::projector::ProjectorParams) -> RefProjector {
    RefProjector {
        w_img: param_to_mat(&p.w_img),
        w_txt: param_to_mat(&p.w_txt),
        w_shared: param_to_mat(&p.w_shared),
        w1: param_to_mat(&p.w_att_hidden),
        w2: param_to_mat(&p.w_att_out),
        k: p.dims.k,
    }
}

/// Reference view of a classifier's current weights.
pub fn classifier_to_ref(c: &xmodal_core::adversary::ClassifierParams) -> RefClassifier {
    RefClassifier {
        w_hidden: param_to_mat(&c.w_hidden),
        w_out: param_to_mat(&c.w_out),
    }
}
