//! Alternating adversarial training, ablation table and grid search.
//!
//! Each mini-batch takes two optimizer steps: the modality classifier first
//! (RMSprop on its cross-entropy), then the projector (Adam on the combined
//! graph loss plus the weighted confusion term). Everything is seeded — batch
//! shuffling, denoising masks and initialization — so a fixed configuration
//! reproduces its parameters and logs bit for bit.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{classifier_loss, generator_loss, ClassifierParams};
use crate::autograd::{Tape, Var};
use crate::data::{DataError, PairedDataset};
use crate::eval::{evaluate_model, ApNorm, EvalError};
use crate::graph_loss::{
    graph_pattern_loss, BatchContext, GraphLossError, GraphLossOptions, GraphLossReport,
    GraphLossWeights, ReferenceDistances,
};
use crate::optim::Optimizer;
use crate::projector::{
    attention_map, denoise, encode, reshape_k, uniform_map, ConfigError, Modality, ProjectorDims,
    ProjectorParams,
};
use crate::tensor::{NumError, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPLD";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset must contain at least 2 paired training instances, got {0}")]
    DatasetTooSmall(usize),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    GraphLoss(#[from] GraphLossError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Projector(#[from] crate::projector::ProjectorError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: bad checkpoint: {message}")]
    BadCheckpoint { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Every knob of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Number of sub-representations per instance.
    pub k: usize,
    /// Width of the shared common space (must be divisible by k).
    pub common_dim: usize,
    /// Width of the modality-specific entry layer.
    pub encoder_dim: usize,
    /// Weight of the unpaired distance preserving term.
    pub alpha: f64,
    /// Weight of the mutual distance preserving term.
    pub beta: f64,
    /// Weight of the confusion term in the projector objective.
    pub lambda: f64,
    pub lr_g: f64,
    pub weight_decay_g: f64,
    pub lr_d: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub denoise_rate: f64,
    pub seed: u64,
    pub use_udp: bool,
    pub use_mdp: bool,
    /// Train and use the modality classifier.
    pub use_mc: bool,
    /// Learn attention maps; when off every map is uniform 1/k.
    pub use_da: bool,
    /// Keep the literal signed unpaired deviation instead of |l_p - d|.
    pub udp_signed: bool,
    /// Add the fourth (text-to-image) unpaired family.
    pub symmetric_udp: bool,
    /// Normalize reference distances by a whole-training-set mean instead of
    /// the per-batch mean.
    pub global_d_mean: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 4,
            common_dim: 256,
            encoder_dim: 256,
            alpha: 1.0,
            beta: 0.1,
            lambda: 0.01,
            lr_g: 1e-4,
            weight_decay_g: 1e-4,
            lr_d: 5e-5,
            batch_size: 64,
            epochs: 200,
            denoise_rate: 0.1,
            seed: 7,
            use_udp: true,
            use_mdp: true,
            use_mc: true,
            use_da: true,
            udp_signed: false,
            symmetric_udp: false,
            global_d_mean: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 || self.common_dim == 0 || !self.common_dim.is_multiple_of(self.k) {
            return Err(ConfigError::KNotDividing {
                k: self.k,
                common_dim: self.common_dim,
            });
        }
        if self.encoder_dim == 0 {
            return Err(ConfigError::Invalid("encoder_dim must be positive".into()));
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("lambda", self.lambda),
            ("weight_decay_g", self.weight_decay_g),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ConfigError::Invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        if self.batch_size < 2 {
            return Err(ConfigError::Invalid(
                "batch_size must be at least 2".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(ConfigError::Invalid("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.denoise_rate) {
            return Err(ConfigError::DenoiseRate(self.denoise_rate));
        }
        Ok(())
    }

    fn graph_loss_options(&self, d_mean_override: Option<f64>) -> GraphLossOptions {
        GraphLossOptions {
            weights: GraphLossWeights {
                alpha: self.alpha,
                beta: self.beta,
            },
            use_unpaired: self.use_udp,
            use_mutual: self.use_mdp,
            signed_unpaired: self.udp_signed,
            symmetric_unpaired: self.symmetric_udp,
            d_mean_override,
        }
    }
}

/// One log row per mini-batch (covering the classifier step and the
/// projector step taken on it).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub epoch: usize,
    pub step: usize,
    pub l_pdl: f64,
    pub l_udp: f64,
    pub l_mdp: f64,
    pub l_gpl: f64,
    pub l_d: f64,
    pub l_g: f64,
}

pub struct TrainedModel {
    pub projector: ProjectorParams,
    pub classifier: ClassifierParams,
    pub config: TrainConfig,
}

pub struct TrainOutcome {
    pub model: TrainedModel,
    pub log: Vec<TrainLogRow>,
    pub skipped_batches: usize,
}

/// Splitmix-style seed derivation so every denoising mask gets its own
/// deterministic stream.
fn derive_seed(master: u64, parts: &[u64]) -> u64 {
    let mut z = master;
    for &p in parts {
        z ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(z << 6);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Initializes projector and classifier for a dataset, in a fixed draw
/// order from the configuration seed.
pub fn init_model(dataset: &PairedDataset, config: &TrainConfig) -> Result<TrainedModel, TrainError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dims = ProjectorDims {
        input_dim_img: dataset.dim_img(),
        input_dim_txt: dataset.dim_txt(),
        encoder_dim: config.encoder_dim,
        common_dim: config.common_dim,
        k: config.k,
    };
    let projector = ProjectorParams::init(dims, &mut rng)?;
    let classifier = ClassifierParams::init(config.common_dim, &mut rng)?;
    Ok(TrainedModel {
        projector,
        classifier,
        config: config.clone(),
    })
}

/// The classifier-step objective for one batch of denoised inputs.
pub fn classifier_objective(
    tape: &mut Tape,
    model: &TrainedModel,
    denoised_img: &Tensor,
    denoised_txt: &Tensor,
) -> Result<Var, TrainError> {
    let v = encode(tape, denoised_img, &model.projector, Modality::Image)?;
    let t = encode(tape, denoised_txt, &model.projector, Modality::Text)?;
    Ok(classifier_loss(tape, &model.classifier, v, t)?)
}

/// The projector-step objective for one batch of denoised inputs: encode,
/// reshape, attention (or uniform maps), the combined graph loss and the
/// weighted confusion term.
pub fn generator_objective(
    tape: &mut Tape,
    model: &TrainedModel,
    denoised_img: &Tensor,
    denoised_txt: &Tensor,
    refs: Option<&ReferenceDistances>,
) -> Result<(Var, GraphLossReport), TrainError> {
    let config = &model.config;
    let k = config.k;
    let v = encode(tape, denoised_img, &model.projector, Modality::Image)?;
    let t = encode(tape, denoised_txt, &model.projector, Modality::Text)?;
    let n_b = denoised_img.rows();
    let uniform = uniform_map(k);
    let mut img_embeddings = Vec::with_capacity(n_b);
    let mut txt_embeddings = Vec::with_capacity(n_b);
    let mut img_maps = Vec::with_capacity(n_b);
    let mut txt_maps = Vec::with_capacity(n_b);
    for i in 0..n_b {
        let row_v = tape.row(v, i)?;
        let v_hat = reshape_k(tape, row_v, k)?;
        let row_t = tape.row(t, i)?;
        let t_hat = reshape_k(tape, row_t, k)?;
        if config.use_da {
            img_maps.push(attention_map(tape, &model.projector, v_hat)?);
            txt_maps.push(attention_map(tape, &model.projector, t_hat)?);
        } else {
            img_maps.push(tape.constant(&uniform));
            txt_maps.push(tape.constant(&uniform));
        }
        img_embeddings.push(v_hat);
        txt_embeddings.push(t_hat);
    }
    let ctx = BatchContext::new(
        img_embeddings,
        txt_embeddings,
        img_maps,
        txt_maps,
        denoised_img.clone(),
        denoised_txt.clone(),
    )?;
    // A global d_mean arrives through precomputed refs; batch-local
    // normalization is the fallback.
    let options = config.graph_loss_options(None);
    let report = graph_pattern_loss(tape, &ctx, &options, refs)?;
    let lambda = if config.use_mc { config.lambda } else { 0.0 };
    let loss = generator_loss(
        tape,
        report.combined,
        &model.classifier,
        v,
        t,
        lambda,
    )?;
    Ok((loss, report))
}

/// Mean original-space distance over every unordered pair of the training
/// split, on clean (not denoised) inputs. Used by the global normalizer
/// option.
fn global_reference_mean(dataset: &PairedDataset) -> Result<f64, TrainError> {
    let n = dataset.n_train;
    let mut total = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            total += crate::graph_loss::original_distance(
                dataset.images.row(i),
                dataset.images.row(j),
                dataset.texts.row(i),
                dataset.texts.row(j),
            )?;
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(total / pairs)
}

/// Trains a model on the dataset's training split.
pub fn train(dataset: &PairedDataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    let model = init_model(dataset, config)?;
    let n_train = dataset.n_train;
    if n_train < 2 {
        return Err(TrainError::DatasetTooSmall(n_train));
    }

    let d_mean_override = if config.global_d_mean && config.use_udp && config.alpha != 0.0 {
        Some(global_reference_mean(dataset)?)
    } else {
        None
    };
    let need_refs = config.use_udp && config.alpha != 0.0;

    let mut opt_g = Optimizer::adam(
        model.projector.trainable(config.use_da),
        config.lr_g,
        config.weight_decay_g,
    );
    let mut opt_d = Optimizer::rmsprop(model.classifier.params(), config.lr_d);

    let mut log = Vec::new();
    let mut skipped = 0usize;
    let mut indices: Vec<usize> = (0..n_train).collect();

    for epoch in 0..config.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle_rng.set_stream(1 + epoch as u64);
        indices.shuffle(&mut shuffle_rng);

        let mut step = 0usize;
        for batch in indices.chunks(config.batch_size) {
            // Unpaired and mutual terms are undefined on singleton batches.
            if batch.len() < 2 {
                skipped += 1;
                continue;
            }
            let raw_img = dataset.gather(batch, Modality::Image);
            let raw_txt = dataset.gather(batch, Modality::Text);
            let e = epoch as u64;
            let s = step as u64;

            // The projector-step denoised inputs also provide the reference
            // distances; check degeneracy before either optimizer moves.
            let g_img = denoise(&raw_img, config.denoise_rate, derive_seed(config.seed, &[2, e, s]))?;
            let g_txt = denoise(&raw_txt, config.denoise_rate, derive_seed(config.seed, &[3, e, s]))?;
            let refs = if need_refs {
                match ReferenceDistances::compute(&g_img, &g_txt, d_mean_override) {
                    Ok(r) => Some(r),
                    Err(GraphLossError::DegenerateBatch) => {
                        eprintln!(
                            "warning: skipping degenerate batch (epoch {epoch}, step {step})"
                        );
                        skipped += 1;
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                }
            } else {
                None
            };

            // Classifier step.
            let mut l_d = 0.0;
            if config.use_mc {
                let d_img =
                    denoise(&raw_img, config.denoise_rate, derive_seed(config.seed, &[0, e, s]))?;
                let d_txt =
                    denoise(&raw_txt, config.denoise_rate, derive_seed(config.seed, &[1, e, s]))?;
                let mut tape = Tape::new();
                let loss = classifier_objective(&mut tape, &model, &d_img, &d_txt)?;
                l_d = tape.value_scalar(loss);
                tape.backward(loss)?;
                opt_d.step()?;
                opt_d.zero_grads();
            }

            // Projector step.
            let mut tape = Tape::new();
            let (loss, report) =
                generator_objective(&mut tape, &model, &g_img, &g_txt, refs.as_ref())?;
            let l_g = tape.value_scalar(loss);
            tape.backward(loss)?;
            opt_g.step()?;
            opt_g.zero_grads();

            log.push(TrainLogRow {
                epoch,
                step,
                l_pdl: report.l_pdl,
                l_udp: report.l_udp,
                l_mdp: report.l_mdp,
                l_gpl: report.l_gpl,
                l_d,
                l_g,
            });
            step += 1;
        }
    }

    Ok(TrainOutcome {
        model,
        log,
        skipped_batches: skipped,
    })
}

pub fn write_train_log(path: &Path, log: &[TrainLogRow]) -> Result<(), TrainError> {
    let mut out = String::from("epoch,step,l_pdl,l_udp,l_mdp,l_gpl,l_d,l_g\n");
    for row in log {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.epoch, row.step, row.l_pdl, row.l_udp, row.l_mdp, row.l_gpl, row.l_d, row.l_g
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

// ── Ablation table ───────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub method: &'static str,
    pub img2txt: f64,
    pub txt2img: f64,
    pub avg: f64,
}

/// The six configurations of the component analysis: which loss terms and
/// components are active, from the pairwise-only baseline to the full model.
pub const ABLATION_PRESETS: [(&str, bool, bool, bool, bool); 6] = [
    // (name, use_udp, use_mdp, use_mc, use_da)
    ("baseline", false, false, false, false),
    ("+mdp", false, true, false, false),
    ("+udp", true, false, false, false),
    ("+mdp+udp", true, true, false, false),
    ("+mdp+udp+mc", true, true, true, false),
    ("full", true, true, true, true),
];

/// Trains one model per ablation preset (same seed and data) and evaluates
/// MAP@k in both directions on the given range.
pub fn ablate(
    dataset: &PairedDataset,
    config: &TrainConfig,
    eval_range: std::ops::Range<usize>,
    map_k: usize,
) -> Result<Vec<AblationRow>, TrainError> {
    let mut rows = Vec::with_capacity(ABLATION_PRESETS.len());
    for (name, use_udp, use_mdp, use_mc, use_da) in ABLATION_PRESETS {
        let cfg = TrainConfig {
            use_udp,
            use_mdp,
            use_mc,
            use_da,
            ..config.clone()
        };
        let outcome = train(dataset, &cfg)?;
        let summary = evaluate_model(
            &outcome.model,
            dataset,
            eval_range.clone(),
            map_k,
            ApNorm::MinRelK,
        )?;
        rows.push(AblationRow {
            method: name,
            img2txt: summary.img2txt.map,
            txt2img: summary.txt2img.map,
            avg: summary.avg_map(),
        });
    }
    Ok(rows)
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<(), TrainError> {
    let mut out = String::from("method,img2txt,txt2img,avg\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6}\n",
            row.method, row.img2txt, row.txt2img, row.avg
        ));
    }
    fs::write(path, out).map_err(io_err(path))
}

// ── Grid search ──────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct GridRow {
    pub alpha: f64,
    pub beta: f64,
    pub map: f64,
}

/// Trains one model per (alpha, beta) grid point and records the average
/// MAP@k over both directions.
pub fn grid_search(
    dataset: &PairedDataset,
    alphas: &[f64],
    betas: &[f64],
    config: &TrainConfig,
    eval_range: std::ops::Range<usize>,
    map_k: usize,
) -> Result<Vec<GridRow>, TrainError> {
    if alphas.is_empty() || betas.is_empty() {
        return Err(ConfigError::Invalid("grids must be non-empty".into()).into());
    }
    let mut rows = Vec::with_capacity(alphas.len() * betas.len());
    for &alpha in alphas {
        for &beta in betas {
            let cfg = TrainConfig {
                alpha,
                beta,
                ..config.clone()
            };
            let outcome = train(dataset, &cfg)?;
            let summary = evaluate_model(
                &outcome.model,
                dataset,
                eval_range.clone(),
                map_k,
                ApNorm::MinRelK,
            )?;
            rows.push(GridRow {
                alpha,
                beta,
                map: summary.avg_map(),
            });
        }
    }
    Ok(rows)
}

pub fn write_grid_csv(path: &Path, rows: &[GridRow]) -> Result<(), TrainError> {
    let mut out = String::from("alpha,beta,map\n");
    for row in rows {
        out.push_str(&format!("{},{},{:.6}\n", row.alpha, row.beta, row.map));
    }
    fs::write(path, out).map_err(io_err(path))
}

// ── Checkpoints ──────────────────────────────────────────────────────

const PARAM_NAMES: [&str; 7] = [
    "w_img",
    "w_txt",
    "w_shared",
    "w_att_hidden",
    "w_att_out",
    "cls_hidden",
    "cls_out",
];

/// Versioned binary checkpoint: magic, version, config echo (JSON), then
/// each parameter matrix with its name and shape.
pub fn save_checkpoint(path: &Path, model: &TrainedModel) -> Result<(), TrainError> {
    let config_json =
        serde_json::to_vec(&model.config).expect("config serializes");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(config_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&config_json);
    let params = [
        &model.projector.w_img,
        &model.projector.w_txt,
        &model.projector.w_shared,
        &model.projector.w_att_hidden,
        &model.projector.w_att_out,
        &model.classifier.w_hidden,
        &model.classifier.w_out,
    ];
    bytes.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in PARAM_NAMES.iter().zip(params) {
        let t = p.borrow();
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        bytes.extend_from_slice(&(t.rows() as u32).to_le_bytes());
        bytes.extend_from_slice(&(t.cols() as u32).to_le_bytes());
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(io_err(path))
}

struct CheckpointReader<'a> {
    path: &'a Path,
    bytes: Vec<u8>,
    pos: usize,
}

impl<'a> CheckpointReader<'a> {
    fn take(&mut self, n: usize) -> Result<&[u8], TrainError> {
        if self.pos + n > self.bytes.len() {
            return Err(TrainError::BadCheckpoint {
                path: self.path.to_path_buf(),
                message: format!(
                    "truncated at byte {} (wanted {n} more of {})",
                    self.pos,
                    self.bytes.len()
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("sized")))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("sized")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<TrainedModel, TrainError> {
    let mut file = fs::File::open(path).map_err(io_err(path))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(io_err(path))?;
    let mut r = CheckpointReader {
        path,
        bytes,
        pos: 0,
    };
    let bad = |message: String| TrainError::BadCheckpoint {
        path: path.to_path_buf(),
        message,
    };

    let magic = r.take(4)?.to_vec();
    if magic != CHECKPOINT_MAGIC {
        return Err(bad(format!("magic {magic:?}, expected {CHECKPOINT_MAGIC:?}")));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = r.u64()? as usize;
    let config: TrainConfig = serde_json::from_slice(r.take(config_len)?)
        .map_err(|e| bad(format!("config echo: {e}")))?;
    let n_params = r.u32()? as usize;
    if n_params != PARAM_NAMES.len() {
        return Err(bad(format!(
            "{n_params} parameters, expected {}",
            PARAM_NAMES.len()
        )));
    }
    let mut mats = Vec::with_capacity(n_params);
    for expected_name in PARAM_NAMES {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|e| bad(format!("parameter name: {e}")))?;
        if name != expected_name {
            return Err(bad(format!(
                "parameter `{name}`, expected `{expected_name}`"
            )));
        }
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("sized")))
            .collect();
        mats.push(Tensor::new(rows, cols, data).map_err(|e| bad(e.to_string()))?);
    }

    let mut it = mats.into_iter();
    let w_img = it.next().expect("counted");
    let w_txt = it.next().expect("counted");
    let w_shared = it.next().expect("counted");
    let w_att_hidden = it.next().expect("counted");
    let w_att_out = it.next().expect("counted");
    let cls_hidden = it.next().expect("counted");
    let cls_out = it.next().expect("counted");

    let dims = ProjectorDims {
        input_dim_img: w_img.rows(),
        input_dim_txt: w_txt.rows(),
        encoder_dim: config.encoder_dim,
        common_dim: config.common_dim,
        k: config.k,
    };
    dims.validate()?;
    if w_shared.shape() != (config.encoder_dim, config.common_dim) {
        return Err(bad(format!(
            "w_shared shape {:?} does not match config ({}, {})",
            w_shared.shape(),
            config.encoder_dim,
            config.common_dim
        )));
    }
    let input_dim = config.common_dim;
    let projector = ProjectorParams {
        dims,
        w_img: crate::autograd::param_ref(w_img),
        w_txt: crate::autograd::param_ref(w_txt),
        w_shared: crate::autograd::param_ref(w_shared),
        w_att_hidden: crate::autograd::param_ref(w_att_hidden),
        w_att_out: crate::autograd::param_ref(w_att_out),
    };
    let classifier = ClassifierParams {
        input_dim,
        w_hidden: crate::autograd::param_ref(cls_hidden),
        w_out: crate::autograd::param_ref(cls_out),
    };
    Ok(TrainedModel {
        projector,
        classifier,
        config,
    })
}

/// Writes the resolved configuration next to a run's outputs.
pub fn write_config_echo(path: &Path, config: &TrainConfig) -> Result<(), TrainError> {
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(json.as_bytes()).map_err(io_err(path))?;
    file.write_all(b"\n").map_err(io_err(path))
}
