//! Modality classifier and its adversarial coupling with the projector.
//!
//! The classifier is a two-layer perceptron over the pre-fusion common-space
//! features, predicting which modality produced each row. Its own loss pushes
//! it toward the true labels; the generator's confusion term is the same
//! expression with the labels flipped, evaluated with the classifier weights
//! frozen so no gradient leaks into them.

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autograd::{param_ref, ParamRef, Tape, Var};
use crate::projector::{init_matrix, ConfigError};
use crate::tensor::{NumError, Tensor};

/// Predicted probabilities are clamped into `[EPS, 1 - EPS]` before the
/// logarithm so a saturated classifier cannot produce infinities.
pub const PRED_CLAMP_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Two-layer perceptron weights: input_dim x hidden and hidden x 2, with a
/// tanh hidden activation and softmax output rows.
pub struct ClassifierParams {
    pub input_dim: usize,
    pub w_hidden: ParamRef,
    pub w_out: ParamRef,
}

impl ClassifierParams {
    pub fn init(input_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self, ConfigError> {
        if input_dim == 0 {
            return Err(ConfigError::Invalid(
                "classifier input dimension must be positive".into(),
            ));
        }
        let hidden = (input_dim / 2).max(1);
        Ok(ClassifierParams {
            input_dim,
            w_hidden: param_ref(init_matrix(input_dim, hidden, input_dim, rng)),
            w_out: param_ref(init_matrix(hidden, 2, hidden, rng)),
        })
    }

    /// All-zero weights: every prediction is exactly (0.5, 0.5). Useful as
    /// the maximally uninformative classifier in tests and identities.
    pub fn zeroed(input_dim: usize) -> Self {
        let hidden = (input_dim / 2).max(1);
        ClassifierParams {
            input_dim,
            w_hidden: param_ref(Tensor::zeros(input_dim, hidden)),
            w_out: param_ref(Tensor::zeros(hidden, 2)),
        }
    }

    pub fn params(&self) -> Vec<ParamRef> {
        vec![self.w_hidden.clone(), self.w_out.clone()]
    }
}

/// Ground-truth modality as a one-hot pair: image = (1, 0), text = (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModalityLabel {
    Image,
    Text,
}

impl ModalityLabel {
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            ModalityLabel::Image => [1.0, 0.0],
            ModalityLabel::Text => [0.0, 1.0],
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            ModalityLabel::Image => ModalityLabel::Text,
            ModalityLabel::Text => ModalityLabel::Image,
        }
    }
}

/// Softmax modality probabilities for a batch of common-space rows
/// (n x input_dim -> n x 2). With `frozen` the weights enter the tape as
/// constants and receive no gradient.
pub fn classify(
    tape: &mut Tape,
    cls: &ClassifierParams,
    features: Var,
    frozen: bool,
) -> Result<Var, NumError> {
    let (w_hidden, w_out) = if frozen {
        (
            tape.frozen_param(&cls.w_hidden),
            tape.frozen_param(&cls.w_out),
        )
    } else {
        (tape.param(&cls.w_hidden), tape.param(&cls.w_out))
    };
    let pre = tape.matmul(features, w_hidden)?;
    let hidden = tape.tanh(pre);
    let logits = tape.matmul(hidden, w_out)?;
    // Row-wise softmax via the column primitive.
    let cols = tape.transpose(logits);
    let soft = tape.softmax_cols(cols);
    Ok(tape.transpose(soft))
}

/// Binary cross-entropy summed over both components and averaged over the
/// batch: `-(y·log x + (1-y)·log(1-x))` per row with the shared label.
/// For a one-hot label against a softmax pair this is twice the categorical
/// cross-entropy; the two-sided form is kept deliberately.
pub fn cross_entropy(
    tape: &mut Tape,
    pred: Var,
    label: ModalityLabel,
) -> Result<Var, NumError> {
    let (n, two) = tape.shape(pred);
    if two != 2 {
        return Err(NumError::DimMismatch {
            op: "cross_entropy",
            lhs: (n, two),
            rhs: (n, 2),
        });
    }
    let y = label.one_hot();
    let mut y_data = Vec::with_capacity(n * 2);
    let mut y_comp_data = Vec::with_capacity(n * 2);
    for _ in 0..n {
        y_data.extend_from_slice(&y);
        y_comp_data.extend_from_slice(&[1.0 - y[0], 1.0 - y[1]]);
    }
    let y_mat = tape.constant(&Tensor::new(n, 2, y_data)?);
    let y_comp = tape.constant(&Tensor::new(n, 2, y_comp_data)?);
    let ones = tape.constant(&Tensor::new(n, 2, vec![1.0; n * 2])?);

    let x = tape.clamp(pred, PRED_CLAMP_EPS, 1.0 - PRED_CLAMP_EPS);
    let log_x = tape.ln(x);
    let hit = tape.hadamard(y_mat, log_x)?;
    let x_comp = tape.sub(ones, x)?;
    let log_x_comp = tape.ln(x_comp);
    let miss = tape.hadamard(y_comp, log_x_comp)?;
    let total = tape.add(hit, miss)?;
    let summed = tape.sum(total);
    Ok(tape.scale(summed, -1.0 / n as f64))
}

/// Classifier objective: true-label cross-entropy on both modalities,
/// batch-averaged. The projector outputs are detached, so gradients reach
/// only the classifier weights.
pub fn classifier_loss(
    tape: &mut Tape,
    cls: &ClassifierParams,
    img_features: Var,
    txt_features: Var,
) -> Result<Var, NumError> {
    let v = tape.detach(img_features);
    let t = tape.detach(txt_features);
    let pred_v = classify(tape, cls, v, false)?;
    let pred_t = classify(tape, cls, t, false)?;
    let loss_v = cross_entropy(tape, pred_v, ModalityLabel::Image)?;
    let loss_t = cross_entropy(tape, pred_t, ModalityLabel::Text)?;
    tape.add(loss_v, loss_t)
}

/// The generator-side confusion term: the classifier loss with flipped
/// labels, weights frozen, gradients flowing into the projector outputs.
pub fn confusion_loss(
    tape: &mut Tape,
    cls: &ClassifierParams,
    img_features: Var,
    txt_features: Var,
) -> Result<Var, NumError> {
    let pred_v = classify(tape, cls, img_features, true)?;
    let pred_t = classify(tape, cls, txt_features, true)?;
    let loss_v = cross_entropy(tape, pred_v, ModalityLabel::Image.flipped())?;
    let loss_t = cross_entropy(tape, pred_t, ModalityLabel::Text.flipped())?;
    tape.add(loss_v, loss_t)
}

/// Full generator objective: combined graph loss plus `lambda` times the
/// confusion term. `lambda = 0` returns the graph loss node unchanged.
pub fn generator_loss(
    tape: &mut Tape,
    graph_loss: Var,
    cls: &ClassifierParams,
    img_features: Var,
    txt_features: Var,
    lambda: f64,
) -> Result<Var, NumError> {
    if lambda == 0.0 {
        return Ok(graph_loss);
    }
    let confusion = confusion_loss(tape, cls, img_features, txt_features)?;
    let scaled = tape.scale(confusion, lambda);
    tape.add(graph_loss, scaled)
}
