//! Cross-modal common-space embedding training and retrieval evaluation.
//!
//! The library trains a shared image/text embedding space from paired
//! feature vectors. An attention feature projector splits each instance into
//! sub-representations and fuses them with self- and co-attention; a set of
//! distance losses over the mini-batch graph of representations aligns
//! paired instances while preserving unpaired distances measured in the
//! original feature spaces; an adversarial modality classifier pushes the
//! two modalities' embeddings toward indistinguishability. Retrieval quality
//! is scored with MAP@k in both directions.
//!
//! Modules:
//! - [`tensor`], [`autograd`], [`optim`]: dense matrices, reverse-mode
//!   differentiation and the two optimizers.
//! - [`projector`]: denoising, weight-shared encoding, reshape-to-k,
//!   attention maps and fusion.
//! - [`graph_loss`]: pairwise, unpaired and mutual distance terms.
//! - [`adversary`]: the modality classifier and both adversarial losses.
//! - [`train`]: the alternating training loop, ablation table, grid search
//!   and checkpoints.
//! - [`data`]: feature files, manifests and the synthetic generator.
//! - [`eval`]: retrieval scoring and MAP@k.

pub mod adversary;
pub mod autograd;
pub mod data;
pub mod eval;
pub mod graph_loss;
pub mod optim;
pub mod projector;
pub mod tensor;
pub mod train;

pub use autograd::{param_ref, ParamRef, Tape, Var};
pub use tensor::{NumError, Tensor};
