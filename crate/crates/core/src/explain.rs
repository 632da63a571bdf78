//! Concept-based explainability: the concept-bottleneck classifier whose
//! linear weights are the explanation, per-region saliency, and
//! concept-presence discovery between image sets.

use crate::error::{Error, Result};
use crate::infer::{annotate_concepts, argmax_lowest, topk_regions, ConceptPrompt};
use crate::numerics::{cosine, cosine_slices, softmax, Matrix, Vector};
use crate::types::{AlignmentParams, ImageEmbedding};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Linear map from concept-similarity features to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptBottleneck {
    pub concept_ids: Vec<String>,
    pub class_ids: Vec<String>,
    /// n_concepts x n_classes.
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CbmJson {
    concept_ids: Vec<String>,
    class_ids: Vec<String>,
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

/// Cosine between the image's global embedding and each concept embedding.
pub fn concept_similarity_features(
    image: &ImageEmbedding,
    concept_embs: &[Vector],
) -> Result<Vec<f64>> {
    concept_embs
        .iter()
        .map(|g| cosine(&image.cls, g))
        .collect()
}

/// Per-concept fusion of the global cosine with the cosine of the concept's
/// pooled top-k regions: beta * local + (1 - beta) * global.
pub fn concept_similarity_features_fused(
    image: &ImageEmbedding,
    concept_embs: &[Vector],
    params: &AlignmentParams,
) -> Result<Vec<f64>> {
    concept_embs
        .iter()
        .map(|g| {
            let global = cosine(&image.cls, g)?;
            let mut pool = vec![0.0; image.dim()];
            let top = topk_regions(image, g, params.k)?;
            for i in &top {
                for (acc, x) in pool.iter_mut().zip(image.regions.row(*i)) {
                    *acc += x;
                }
            }
            for x in &mut pool {
                *x /= top.len() as f64;
            }
            let local = cosine_slices(&pool, g.as_slice())?;
            Ok(params.beta * local + (1.0 - params.beta) * global)
        })
        .collect()
}

impl ConceptBottleneck {
    /// Fit multinomial logistic regression by deterministic full-batch
    /// gradient descent with backtracking line search, from zero init.
    ///
    /// Objective: mean cross-entropy + ||W||^2 / (2 * l2_inverse_strength),
    /// bias unregularized. Converged when the gradient max-norm drops below
    /// 1e-6, capped at 10,000 steps.
    pub fn train(
        features: &Matrix,
        labels: &[usize],
        l2_inverse_strength: f64,
        concept_ids: Vec<String>,
        class_ids: Vec<String>,
    ) -> Result<Self> {
        let n = features.rows();
        let f = features.cols();
        let c = class_ids.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                left: labels.len(),
                right: n,
            });
        }
        if concept_ids.len() != f {
            return Err(Error::LengthMismatch {
                left: concept_ids.len(),
                right: f,
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::UnknownClass(bad.to_string()));
        }
        let first = labels[0];
        if labels.iter().all(|&l| l == first) {
            return Err(Error::SingleClass);
        }
        if !(l2_inverse_strength > 0.0) {
            return Err(Error::InvalidParams(
                "l2 inverse strength must be positive".into(),
            ));
        }

        let lambda = 1.0 / l2_inverse_strength;
        let mut w = vec![0.0; f * c];
        let mut b = vec![0.0; c];

        let objective = |w: &[f64], b: &[f64]| -> f64 {
            let mut ce = 0.0;
            for i in 0..n {
                let logits = row_logits(features.row(i), w, b, c);
                ce += -log_softmax_at(&logits, labels[i]);
            }
            let reg: f64 = w.iter().map(|x| x * x).sum::<f64>() * lambda / 2.0;
            ce / n as f64 + reg
        };

        let gradient = |w: &[f64], b: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let mut gw = vec![0.0; f * c];
            let mut gb = vec![0.0; c];
            for i in 0..n {
                let logits = row_logits(features.row(i), w, b, c);
                let probs = softmax(&logits);
                let x = features.row(i);
                for cls in 0..c {
                    let delta = probs[cls] - (labels[i] == cls) as usize as f64;
                    gb[cls] += delta;
                    for d in 0..f {
                        gw[d * c + cls] += x[d] * delta;
                    }
                }
            }
            let inv_n = 1.0 / n as f64;
            for (slot, wv) in gw.iter_mut().zip(w) {
                *slot = *slot * inv_n + lambda * wv;
            }
            for slot in gb.iter_mut() {
                *slot *= inv_n;
            }
            (gw, gb)
        };

        let mut obj = objective(&w, &b);
        for _step in 0..10_000 {
            let (gw, gb) = gradient(&w, &b);
            let max_norm = gw
                .iter()
                .chain(gb.iter())
                .fold(0.0f64, |m, &g| m.max(g.abs()));
            if max_norm < 1e-6 {
                break;
            }
            let g_sq: f64 = gw.iter().map(|g| g * g).sum::<f64>()
                + gb.iter().map(|g| g * g).sum::<f64>();

            // backtracking line search on the Armijo condition
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let wt: Vec<f64> = w.iter().zip(&gw).map(|(x, g)| x - t * g).collect();
                let bt: Vec<f64> = b.iter().zip(&gb).map(|(x, g)| x - t * g).collect();
                let new_obj = objective(&wt, &bt);
                if new_obj <= obj - 1e-4 * t * g_sq {
                    w = wt;
                    b = bt;
                    obj = new_obj;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
            if !obj.is_finite() {
                return Err(Error::NonFinite("cbm objective".into()));
            }
        }

        Ok(Self {
            concept_ids,
            class_ids,
            weights: Matrix::new(f, c, w)?,
            bias: b,
        })
    }

    pub fn num_concepts(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.cols()
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.num_concepts() {
            return Err(Error::LengthMismatch {
                left: features.len(),
                right: self.num_concepts(),
            });
        }
        Ok(row_logits(
            features,
            self.weights.values(),
            &self.bias,
            self.num_classes(),
        ))
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax_lowest(&self.logits(features)?))
    }

    pub fn to_json(&self) -> Result<String> {
        let mirror = CbmJson {
            concept_ids: self.concept_ids.clone(),
            class_ids: self.class_ids.clone(),
            weights: (0..self.weights.rows())
                .map(|i| self.weights.row(i).to_vec())
                .collect(),
            bias: self.bias.clone(),
        };
        Ok(serde_json::to_string_pretty(&mirror)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mirror: CbmJson = serde_json::from_str(json)?;
        let weights = Matrix::from_rows(&mirror.weights)?;
        if mirror.concept_ids.len() != weights.rows()
            || mirror.class_ids.len() != weights.cols()
            || mirror.bias.len() != weights.cols()
        {
            return Err(Error::LengthMismatch {
                left: mirror.concept_ids.len(),
                right: weights.rows(),
            });
        }
        Ok(Self {
            concept_ids: mirror.concept_ids,
            class_ids: mirror.class_ids,
            weights,
            bias: mirror.bias,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn row_logits(x: &[f64], w: &[f64], b: &[f64], c: usize) -> Vec<f64> {
    let mut logits = b.to_vec();
    for (d, &xd) in x.iter().enumerate() {
        for (cls, logit) in logits.iter_mut().enumerate() {
            *logit += xd * w[d * c + cls];
        }
    }
    logits
}

fn log_softmax_at(logits: &[f64], idx: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    logits[idx] - m - z.ln()
}

/// Concepts ranked by descending weight toward `class_id`; exact ties order
/// lexicographically by concept id.
pub fn concept_class_association(
    cbm: &ConceptBottleneck,
    class_id: &str,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let col = cbm
        .class_ids
        .iter()
        .position(|c| c == class_id)
        .ok_or_else(|| Error::UnknownClass(class_id.to_string()))?;
    let weights: Vec<f64> = (0..cbm.num_concepts())
        .map(|i| cbm.weights.row(i)[col])
        .collect();
    Ok(rank_concepts(&cbm.concept_ids, &weights, top_n))
}

fn rank_concepts(ids: &[String], weights: &[f64], top_n: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = ids
        .iter()
        .cloned()
        .zip(weights.iter().copied())
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(top_n);
    ranked
}

/// Cosine of each region row against the concept; the argmax names the
/// region the concept focuses on.
pub fn region_saliency(image: &ImageEmbedding, concept_emb: &Vector) -> Result<Vec<f64>> {
    (0..image.num_regions())
        .map(|i| cosine_slices(image.regions.row(i), concept_emb.as_slice()))
        .collect()
}

/// Counts and presence difference for one concept across two image sets.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDiffRow {
    pub cui: String,
    pub n_pos: usize,
    pub n_neg: usize,
    pub prop_pos: f64,
    pub prop_neg: f64,
    /// prop_pos - prop_neg, in [-1, 1].
    pub d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptDiffReport {
    /// Sorted by descending difference, ties by CUI.
    pub rows: Vec<ConceptDiffRow>,
    pub threshold: f64,
}

/// Annotate both image sets with every concept prompt and report, per
/// concept, how much more often it is present among positives.
pub fn concept_presence_difference(
    pos_images: &[ImageEmbedding],
    neg_images: &[ImageEmbedding],
    prompts: &[ConceptPrompt],
    params: &AlignmentParams,
    presence_threshold: f64,
) -> Result<ConceptDiffReport> {
    if pos_images.is_empty() {
        return Err(Error::EmptySet("positive".into()));
    }
    if neg_images.is_empty() {
        return Err(Error::EmptySet("negative".into()));
    }

    let annotate_set = |images: &[ImageEmbedding]| -> Result<Vec<usize>> {
        let per_image: Vec<Vec<f64>> = images
            .par_iter()
            .map(|img| annotate_concepts(img, prompts, params))
            .collect::<Result<Vec<_>>>()?;
        let mut counts = vec![0usize; prompts.len()];
        for presences in &per_image {
            for (count, &p) in counts.iter_mut().zip(presences) {
                if p >= presence_threshold {
                    *count += 1;
                }
            }
        }
        Ok(counts)
    };

    let pos_counts = annotate_set(pos_images)?;
    let neg_counts = annotate_set(neg_images)?;
    let m = pos_images.len() as f64;
    let n = neg_images.len() as f64;

    let mut rows: Vec<ConceptDiffRow> = prompts
        .iter()
        .zip(pos_counts.iter().zip(&neg_counts))
        .map(|(prompt, (&np, &nn))| {
            let prop_pos = np as f64 / m;
            let prop_neg = nn as f64 / n;
            ConceptDiffRow {
                cui: prompt.concept_id.clone(),
                n_pos: np,
                n_neg: nn,
                prop_pos,
                prop_neg,
                d: prop_pos - prop_neg,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.d.total_cmp(&a.d).then_with(|| a.cui.cmp(&b.cui)));
    Ok(ConceptDiffReport {
        rows,
        threshold: presence_threshold,
    })
}

/// Rank concepts for `class_id` by the mean of their weights across several
/// bottleneck models sharing one concept vocabulary.
pub fn disease_level_inspection(
    cbms: &[&ConceptBottleneck],
    class_id: &str,
    top_n: usize,
) -> Result<Vec<(String, f64)>> {
    let first = cbms.first().ok_or(Error::EmptyInput)?;
    for cbm in cbms {
        if cbm.concept_ids != first.concept_ids {
            return Err(Error::VocabMismatch);
        }
    }
    let mut mean = vec![0.0; first.num_concepts()];
    for cbm in cbms {
        let col = cbm
            .class_ids
            .iter()
            .position(|c| c == class_id)
            .ok_or_else(|| Error::UnknownClass(class_id.to_string()))?;
        for (acc, i) in mean.iter_mut().zip(0..cbm.num_concepts()) {
            *acc += cbm.weights.row(i)[col];
        }
    }
    for acc in &mut mean {
        *acc /= cbms.len() as f64;
    }
    Ok(rank_concepts(&first.concept_ids, &mean, top_n))
}
