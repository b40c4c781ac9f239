//! Test-time retrieval scoring and MAP@k.
//!
//! Retrieval scores a query against every candidate of the other modality
//! with the co-attention distance; only co-attention is needed at test time.
//! This path runs on plain tensors (no tape, no denoising) and matches the
//! training-side pair distance definition exactly.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::data::PairedDataset;
use crate::projector::{self, Modality};
use crate::tensor::{self, NumError, Tensor};
use crate::train::TrainedModel;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("retrieval evaluation needs labels, but the dataset has none")]
    MissingLabels,
    #[error("label count {labels} does not match axis size {axis}")]
    LabelMismatch { labels: usize, axis: usize },
    #[error("k must be at least 1")]
    BadK,
    #[error("evaluation split is empty")]
    EmptySplit,
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Config(#[from] crate::projector::ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Retrieval direction: which modality queries and which is ranked.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Img2Txt,
    Txt2Img,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::Img2Txt => write!(f, "Img2Txt"),
            Direction::Txt2Img => write!(f, "Txt2Img"),
        }
    }
}

/// Normalization of average precision at cutoff k.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApNorm {
    /// Divide by min(R, k) where R counts all relevant candidates.
    #[default]
    MinRelK,
    /// Divide by the number of relevant candidates inside the top k.
    RelAtK,
}

impl FromStr for ApNorm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "min-rel-k" => Ok(ApNorm::MinRelK),
            "rel-at-k" => Ok(ApNorm::RelAtK),
            other => Err(format!(
                "unknown AP normalization `{other}` (expected min-rel-k or rel-at-k)"
            )),
        }
    }
}

/// Pairwise cosine distances between queries (rows) and candidates
/// (columns) in the common space.
pub struct ScoreMatrix {
    pub distances: Tensor,
    pub direction: Direction,
}

/// Per-query average precision plus the aggregate.
pub struct RetrievalResult {
    pub ap: Vec<f64>,
    pub map: f64,
    pub k: usize,
    /// Queries skipped because no candidate shares their label.
    pub n_excluded: usize,
}

/// Precomputed per-instance pieces of one modality: the reshaped embedding
/// and its attention map (uniform when attention was ablated at training).
pub struct EvalSide {
    pub reshaped: Vec<Tensor>,
    pub maps: Vec<Tensor>,
}

/// Encodes a feature matrix for evaluation: no denoising, frozen parameters.
pub fn embed_side(
    model: &TrainedModel,
    features: &Tensor,
    modality: Modality,
) -> Result<EvalSide, EvalError> {
    let encoded = projector::encode_eval(features, &model.projector, modality)?;
    let k = model.projector.dims.k;
    let mut reshaped = Vec::with_capacity(encoded.rows());
    let mut maps = Vec::with_capacity(encoded.rows());
    for r in 0..encoded.rows() {
        let x_hat = projector::reshape_k_eval(encoded.row(r), k)?;
        let map = if model.config.use_da {
            projector::attention_map_eval(&model.projector, &x_hat)?
        } else {
            projector::uniform_map(k)
        };
        reshaped.push(x_hat);
        maps.push(map);
    }
    Ok(EvalSide { reshaped, maps })
}

/// Co-attention distance between one image-side and one text-side instance:
/// the cosine distance of the two fusions under the shared summed map.
pub fn score_pair(imgs: &EvalSide, i: usize, txts: &EvalSide, j: usize) -> Result<f64, NumError> {
    let (fused_i, fused_j) = projector::fuse_pair_eval(
        &imgs.reshaped[i],
        &txts.reshaped[j],
        &imgs.maps[i],
        &txts.maps[j],
    )?;
    tensor::cosine_distance(&fused_i, &fused_j)
}

/// Full query-by-candidate distance matrix for one direction.
pub fn score_matrix(
    imgs: &EvalSide,
    txts: &EvalSide,
    direction: Direction,
) -> Result<ScoreMatrix, NumError> {
    let n_img = imgs.reshaped.len();
    let n_txt = txts.reshaped.len();
    let mut img2txt = Tensor::zeros(n_img, n_txt);
    for i in 0..n_img {
        for j in 0..n_txt {
            img2txt.set(i, j, score_pair(imgs, i, txts, j)?);
        }
    }
    let distances = match direction {
        Direction::Img2Txt => img2txt,
        Direction::Txt2Img => tensor::transpose(&img2txt),
    };
    Ok(ScoreMatrix {
        distances,
        direction,
    })
}

/// Mean average precision at cutoff `k`: candidates sorted by ascending
/// distance (ties broken by candidate index), relevance is label equality,
/// queries with no relevant candidate are excluded and counted.
#[allow(clippy::needless_range_loop)]
pub fn map_at_k(
    scores: &ScoreMatrix,
    query_labels: &[u32],
    candidate_labels: &[u32],
    k: usize,
    norm: ApNorm,
) -> Result<RetrievalResult, EvalError> {
    if k == 0 {
        return Err(EvalError::BadK);
    }
    let n_q = scores.distances.rows();
    let n_c = scores.distances.cols();
    if query_labels.len() != n_q {
        return Err(EvalError::LabelMismatch {
            labels: query_labels.len(),
            axis: n_q,
        });
    }
    if candidate_labels.len() != n_c {
        return Err(EvalError::LabelMismatch {
            labels: candidate_labels.len(),
            axis: n_c,
        });
    }
    let mut ap = Vec::with_capacity(n_q);
    let mut n_excluded = 0;
    let mut order: Vec<usize> = Vec::with_capacity(n_c);
    for q in 0..n_q {
        let total_relevant = candidate_labels
            .iter()
            .filter(|&&l| l == query_labels[q])
            .count();
        if total_relevant == 0 {
            n_excluded += 1;
            continue;
        }
        let row = scores.distances.row(q);
        order.clear();
        order.extend(0..n_c);
        order.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let cutoff = k.min(n_c);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        for (rank, &c) in order[..cutoff].iter().enumerate() {
            if candidate_labels[c] == query_labels[q] {
                hits += 1;
                precision_sum += hits as f64 / (rank + 1) as f64;
            }
        }
        let denom = match norm {
            ApNorm::MinRelK => total_relevant.min(k),
            ApNorm::RelAtK => hits,
        };
        ap.push(if denom > 0 {
            precision_sum / denom as f64
        } else {
            0.0
        });
    }
    let map = if ap.is_empty() {
        0.0
    } else {
        ap.iter().sum::<f64>() / ap.len() as f64
    };
    Ok(RetrievalResult {
        ap,
        map,
        k,
        n_excluded,
    })
}

/// Both retrieval directions of one model on one slice of a dataset.
pub struct EvalSummary {
    pub img2txt: RetrievalResult,
    pub txt2img: RetrievalResult,
}

impl EvalSummary {
    pub fn avg_map(&self) -> f64 {
        (self.img2txt.map + self.txt2img.map) / 2.0
    }
}

/// Evaluates a model over a dataset index range with MAP@k in both
/// directions. Labels are required.
pub fn evaluate_model(
    model: &TrainedModel,
    dataset: &PairedDataset,
    range: std::ops::Range<usize>,
    k: usize,
    norm: ApNorm,
) -> Result<EvalSummary, EvalError> {
    let labels_all = dataset.labels.as_ref().ok_or(EvalError::MissingLabels)?;
    if range.is_empty() {
        return Err(EvalError::EmptySplit);
    }
    let indices: Vec<usize> = range.collect();
    let labels: Vec<u32> = indices.iter().map(|&i| labels_all[i]).collect();
    let img_feats = dataset.gather(&indices, Modality::Image);
    let txt_feats = dataset.gather(&indices, Modality::Text);
    let imgs = embed_side(model, &img_feats, Modality::Image)?;
    let txts = embed_side(model, &txt_feats, Modality::Text)?;

    let i2t = score_matrix(&imgs, &txts, Direction::Img2Txt)?;
    let t2i = score_matrix(&imgs, &txts, Direction::Txt2Img)?;
    Ok(EvalSummary {
        img2txt: map_at_k(&i2t, &labels, &labels, k, norm)?,
        txt2img: map_at_k(&t2i, &labels, &labels, k, norm)?,
    })
}

/// Metrics CSV with one row per direction plus the average, matching the
/// shape of the published comparison tables.
pub fn write_metrics_csv(path: &Path, k: usize, summary: &EvalSummary) -> Result<(), EvalError> {
    let mut out = String::from("task,k,map,n_queries,n_excluded\n");
    for (task, r) in [
        ("Img2Txt", &summary.img2txt),
        ("Txt2Img", &summary.txt2img),
    ] {
        out.push_str(&format!(
            "{task},{k},{:.6},{},{}\n",
            r.map,
            r.ap.len(),
            r.n_excluded
        ));
    }
    out.push_str(&format!(
        "Avg,{k},{:.6},{},{}\n",
        summary.avg_map(),
        summary.img2txt.ap.len() + summary.txt2img.ap.len(),
        summary.img2txt.n_excluded + summary.txt2img.n_excluded
    ));
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Optional per-query AP dump.
pub fn write_ap_dump(path: &Path, summary: &EvalSummary) -> Result<(), EvalError> {
    let mut out = String::from("task,query,ap\n");
    for (task, r) in [
        ("Img2Txt", &summary.img2txt),
        ("Txt2Img", &summary.txt2img),
    ] {
        for (q, ap) in r.ap.iter().enumerate() {
            out.push_str(&format!("{task},{q},{ap}\n"));
        }
    }
    std::fs::write(path, out).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, SyntheticSpec};
    use crate::train::{init_model, TrainConfig};

    fn matrix(rows: &[Vec<f64>]) -> ScoreMatrix {
        ScoreMatrix {
            distances: Tensor::from_rows(rows).unwrap(),
            direction: Direction::Img2Txt,
        }
    }

    fn toy_model(n: usize) -> (crate::train::TrainedModel, Tensor, Tensor) {
        let ds = generate_synthetic(&SyntheticSpec {
            n_clusters: n,
            per_cluster: 1,
            dim_img: 6,
            dim_txt: 5,
            noise_sigma: 0.4,
            seed: 31,
        })
        .unwrap();
        let config = TrainConfig {
            k: 2,
            common_dim: 8,
            encoder_dim: 6,
            ..TrainConfig::default()
        };
        let model = init_model(&ds, &config).unwrap();
        (model, ds.images, ds.texts)
    }

    #[test]
    fn txt2img_matrix_is_transpose_of_img2txt() {
        let (model, img, txt) = toy_model(4);
        let imgs = embed_side(&model, &img, Modality::Image).unwrap();
        let txts = embed_side(&model, &txt, Modality::Text).unwrap();
        let i2t = score_matrix(&imgs, &txts, Direction::Img2Txt).unwrap();
        let t2i = score_matrix(&imgs, &txts, Direction::Txt2Img).unwrap();
        assert_eq!(
            tensor::transpose(&i2t.distances).data(),
            t2i.distances.data()
        );
        assert!(i2t
            .distances
            .data()
            .iter()
            .all(|&v| (0.0..=2.0).contains(&v)));
    }

    #[test]
    fn score_matrix_matches_individual_score_pairs() {
        let (model, img, txt) = toy_model(3);
        let imgs = embed_side(&model, &img, Modality::Image).unwrap();
        let txts = embed_side(&model, &txt, Modality::Text).unwrap();
        let m = score_matrix(&imgs, &txts, Direction::Img2Txt).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d = score_pair(&imgs, i, &txts, j).unwrap();
                assert_eq!(m.distances.get(i, j), d);
            }
        }
    }

    #[test]
    fn score_pair_matches_training_side_pair_distance() {
        // The evaluation scorer and the loss-side co-attention distance are
        // one definition; both routes must agree on identical inputs.
        use crate::autograd::Tape;
        use crate::graph_loss::pair_distance;
        use crate::projector::ReshapedEmbedding;
        let (model, img, txt) = toy_model(3);
        let imgs = embed_side(&model, &img, Modality::Image).unwrap();
        let txts = embed_side(&model, &txt, Modality::Text).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let eval_d = score_pair(&imgs, i, &txts, j).unwrap();
                let mut tape = Tape::new();
                let xi = ReshapedEmbedding {
                    var: tape.constant(&imgs.reshaped[i]),
                    modality: Modality::Image,
                    instance: i,
                };
                let yj = ReshapedEmbedding {
                    var: tape.constant(&txts.reshaped[j]),
                    modality: Modality::Text,
                    instance: j,
                };
                let train_d = pair_distance(&mut tape, &model.projector, &xi, &yj).unwrap();
                let diff = (eval_d - tape.value_scalar(train_d)).abs();
                assert!(diff < 1e-15, "({i},{j}): {diff}");
            }
        }
    }

    #[test]
    fn test_split_sized_score_matrix() {
        // A 462-query x 462-candidate evaluation, the size of the smallest
        // published test split.
        let (model, _, _) = toy_model(2);
        let ds = generate_synthetic(&SyntheticSpec {
            n_clusters: 2,
            per_cluster: 231,
            dim_img: 6,
            dim_txt: 5,
            noise_sigma: 0.4,
            seed: 32,
        })
        .unwrap();
        let imgs = embed_side(&model, &ds.images, Modality::Image).unwrap();
        let txts = embed_side(&model, &ds.texts, Modality::Text).unwrap();
        let m = score_matrix(&imgs, &txts, Direction::Img2Txt).unwrap();
        assert_eq!(m.distances.shape(), (462, 462));
    }

    #[test]
    fn perfect_ranking_gives_ap_one() {
        // Two relevant candidates ranked first, R >= k.
        let scores = matrix(&[vec![0.1, 0.2, 0.9, 0.8]]);
        let result = map_at_k(&scores, &[1], &[1, 1, 0, 0], 2, ApNorm::MinRelK).unwrap();
        assert_eq!(result.map, 1.0);
    }

    #[test]
    fn single_relevant_at_rank_two_gives_half() {
        let scores = matrix(&[vec![0.5, 0.1, 0.9]]);
        let result = map_at_k(&scores, &[1], &[1, 0, 0], 50, ApNorm::MinRelK).unwrap();
        assert_eq!(result.map, 0.5);
    }

    #[test]
    fn ties_break_by_candidate_index() {
        // All distances equal: ranking is 0,1,2; only candidate 2 relevant.
        let scores = matrix(&[vec![0.3, 0.3, 0.3]]);
        let result = map_at_k(&scores, &[7], &[0, 0, 7], 3, ApNorm::MinRelK).unwrap();
        assert!((result.map - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn queries_without_relevant_candidates_are_excluded() {
        let scores = matrix(&[vec![0.1, 0.2], vec![0.2, 0.1]]);
        let result = map_at_k(&scores, &[5, 1], &[1, 1], 2, ApNorm::MinRelK).unwrap();
        assert_eq!(result.n_excluded, 1);
        assert_eq!(result.ap.len(), 1);
    }

    #[test]
    fn rel_at_k_normalization_differs() {
        // One relevant candidate found at rank 1, another exists past k.
        let scores = matrix(&[vec![0.0, 0.5, 0.6]]);
        let labels = [1, 0, 1];
        let min_rel = map_at_k(&scores, &[1], &labels, 1, ApNorm::MinRelK).unwrap();
        let rel_at = map_at_k(&scores, &[1], &labels, 1, ApNorm::RelAtK).unwrap();
        assert_eq!(min_rel.map, 1.0); // min(R=2, k=1) = 1
        assert_eq!(rel_at.map, 1.0); // 1 hit in top-1
        // Now make the top-1 irrelevant: zero hits => rel-at-k AP is 0.
        let scores = matrix(&[vec![0.5, 0.0, 0.6]]);
        let rel_at = map_at_k(&scores, &[1], &labels, 1, ApNorm::RelAtK).unwrap();
        assert_eq!(rel_at.map, 0.0);
    }

    #[test]
    fn map_invariant_under_monotone_transform() {
        let rows = vec![
            vec![0.5, 0.1, 0.9, 0.3],
            vec![0.2, 0.8, 0.4, 0.6],
            vec![0.7, 0.3, 0.1, 0.2],
        ];
        let labels_q = [0, 1, 0];
        let labels_c = [0, 1, 0, 1];
        let base = map_at_k(&matrix(&rows), &labels_q, &labels_c, 3, ApNorm::MinRelK).unwrap();
        let transformed: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().map(|&v| (3.0 * v + 1.0).exp()).collect())
            .collect();
        let mapped =
            map_at_k(&matrix(&transformed), &labels_q, &labels_c, 3, ApNorm::MinRelK).unwrap();
        assert_eq!(base.map, mapped.map);
    }

    #[test]
    fn random_balanced_classes_full_depth_map_near_one_over_c() {
        // Full-depth AP (k = n) of a random ranking concentrates around the
        // relevant fraction 1/c.
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let n = 1000;
        let c = 4;
        let labels: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
        let mut rows = Vec::with_capacity(n);
        for _ in 0..n {
            rows.push((0..n).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        }
        let result = map_at_k(&matrix(&rows), &labels, &labels, n, ApNorm::MinRelK).unwrap();
        let expect = 1.0 / c as f64;
        assert!(
            (result.map - expect).abs() < 0.05,
            "map {} vs {expect}",
            result.map
        );
    }
}
