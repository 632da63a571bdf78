//! Dual-path zero-shot scoring, cross-modal retrieval, and per-concept
//! presence annotation.
//!
//! The global path scores an image against a class sentence embedding; the
//! local path pools, per concept, the top-k most similar image regions and
//! scores the pooled vector against the pooled concept embedding. Class
//! probabilities from both paths are fused as a convex combination.

use crate::error::{Error, Result};
use crate::numerics::{cosine, cosine_slices, softmax, Vector};
use crate::types::{AlignmentParams, ImageEmbedding, TextEmbedding};

/// A candidate class: its sentence embedding plus the embeddings of the
/// concepts that describe it. A class without concepts takes part in the
/// global path only.
#[derive(Debug, Clone)]
pub struct ClassSpec {
    pub class_id: String,
    pub text: TextEmbedding,
    pub concept_embs: Vec<Vector>,
}

impl ClassSpec {
    pub fn new(class_id: impl Into<String>, text: TextEmbedding, concept_embs: Vec<Vector>) -> Self {
        Self {
            class_id: class_id.into(),
            text,
            concept_embs,
        }
    }

    /// Treat each token row of a prompt as one concept embedding. Used when a
    /// prompt arrives as a bare text without explicit concept spans.
    pub fn from_prompt(class_id: impl Into<String>, text: TextEmbedding) -> Result<Self> {
        let concept_embs = (0..text.num_tokens())
            .map(|i| Vector::new(text.tokens.row(i).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            class_id: class_id.into(),
            text,
            concept_embs,
        })
    }
}

/// Per-class probabilities from both paths and their fusion.
/// `fused = beta_used * p_local + (1 - beta_used) * p_global`, elementwise.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub p_global: Vec<f64>,
    pub p_local: Vec<f64>,
    pub fused: Vec<f64>,
    pub argmax: usize,
    /// Equals params.beta except when no class has concepts, in which case
    /// the local path is unavailable and beta is forced to zero.
    pub beta_used: f64,
}

/// s_g = t_g * cos(image cls, class cls) + b_g.
pub fn global_score(
    image: &ImageEmbedding,
    class: &ClassSpec,
    params: &AlignmentParams,
) -> Result<f64> {
    Ok(params.t_g * cosine(&image.cls, &class.text.cls)? + params.b_g)
}

/// Indices of the k regions most similar to `concept`, ordered by descending
/// similarity; exact ties resolve to the lower region index.
pub fn topk_regions(image: &ImageEmbedding, concept: &Vector, k: usize) -> Result<Vec<usize>> {
    let r = image.num_regions();
    if k == 0 || k > r {
        return Err(Error::KTooLarge { k, r });
    }
    let mut scored: Vec<(usize, f64)> = (0..r)
        .map(|i| {
            let c = cosine_slices(image.regions.row(i), concept.as_slice())?;
            Ok((i, c))
        })
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(scored.into_iter().take(k).map(|(i, _)| i).collect())
}

/// s_l = t_l * cos(pooled regions, pooled concepts) + b_l. The image pooling
/// averages un-normalized region rows over each concept's top-k set (regions
/// selected by several concepts are counted once per concept).
pub fn local_score(
    image: &ImageEmbedding,
    class: &ClassSpec,
    params: &AlignmentParams,
) -> Result<f64> {
    if class.concept_embs.is_empty() {
        return Err(Error::NoConcepts(class.class_id.clone()));
    }
    let k = params.k;
    let h = image.dim();
    let w = class.concept_embs.len();

    let mut img_pool = vec![0.0; h];
    let mut txt_pool = vec![0.0; h];
    for g in &class.concept_embs {
        if g.dim() != h {
            return Err(Error::DimMismatch {
                left: h,
                right: g.dim(),
            });
        }
        for i in topk_regions(image, g, k)? {
            for (acc, x) in img_pool.iter_mut().zip(image.regions.row(i)) {
                *acc += x;
            }
        }
        for (acc, x) in txt_pool.iter_mut().zip(g.as_slice()) {
            *acc += x;
        }
    }
    let wk = (w * k) as f64;
    for x in &mut img_pool {
        *x /= wk;
    }
    for x in &mut txt_pool {
        *x /= w as f64;
    }
    Ok(params.t_l * cosine_slices(&img_pool, &txt_pool)? + params.b_l)
}

/// Score every class along both paths and fuse the probabilities.
///
/// Classes without concepts are excluded from the local softmax, which
/// renormalizes over the classes that have them. If no class has concepts the
/// local path is dropped entirely (beta forced to 0).
pub fn fuse_predict(
    image: &ImageEmbedding,
    classes: &[ClassSpec],
    params: &AlignmentParams,
) -> Result<Prediction> {
    if classes.len() < 2 {
        return Err(Error::TooFewItems {
            needed: 2,
            got: classes.len(),
        });
    }
    params.validate()?;

    let s_g: Vec<f64> = classes
        .iter()
        .map(|c| global_score(image, c, params))
        .collect::<Result<Vec<_>>>()?;
    let p_global = softmax(&s_g);

    let local_classes: Vec<usize> = (0..classes.len())
        .filter(|&c| !classes[c].concept_embs.is_empty())
        .collect();
    let (p_local, beta_used) = if local_classes.is_empty() {
        (vec![0.0; classes.len()], 0.0)
    } else {
        let s_l: Vec<f64> = local_classes
            .iter()
            .map(|&c| local_score(image, &classes[c], params))
            .collect::<Result<Vec<_>>>()?;
        let probs = softmax(&s_l);
        let mut p = vec![0.0; classes.len()];
        for (&c, &q) in local_classes.iter().zip(&probs) {
            p[c] = q;
        }
        (p, params.beta)
    };

    let fused: Vec<f64> = p_global
        .iter()
        .zip(&p_local)
        .map(|(g, l)| beta_used * l + (1.0 - beta_used) * g)
        .collect();
    let argmax = argmax_lowest(&fused);

    Ok(Prediction {
        p_global,
        p_local,
        fused,
        argmax,
        beta_used,
    })
}

/// Index of the maximum; exact ties resolve to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate().skip(1) {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Recall@k for one retrieval direction. The true mate of a query is the
/// candidate carrying the same id; candidates rank by descending cosine of
/// global embeddings, ties by lower candidate index.
pub fn recall_at(
    queries: &[(String, Vector)],
    candidates: &[(String, Vector)],
    ks: &[usize],
) -> Result<Vec<(usize, f64)>> {
    if queries.is_empty() || candidates.is_empty() {
        return Err(Error::EmptyStore);
    }
    let mut ranks = Vec::with_capacity(queries.len());
    for (qid, qv) in queries {
        let mate = candidates
            .iter()
            .position(|(cid, _)| cid == qid)
            .ok_or_else(|| Error::UnknownId(qid.clone()))?;
        let sims: Vec<f64> = candidates
            .iter()
            .map(|(_, cv)| cosine(qv, cv))
            .collect::<Result<Vec<_>>>()?;
        let mate_sim = sims[mate];
        // rank = 1 + number of candidates ordered strictly ahead of the mate
        let ahead = sims
            .iter()
            .enumerate()
            .filter(|&(i, &s)| s > mate_sim || (s == mate_sim && i < mate))
            .count();
        ranks.push(ahead + 1);
    }
    Ok(ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|&&r| r <= k).count();
            (k, hits as f64 / ranks.len() as f64)
        })
        .collect())
}

/// One concept's positive/negative prompt pair.
#[derive(Debug, Clone)]
pub struct ConceptPrompt {
    pub concept_id: String,
    pub positive: TextEmbedding,
    pub negative: TextEmbedding,
}

/// Presence probability per concept: the fused probability of the positive
/// prompt in the two-class problem {positive, negative}.
pub fn annotate_concepts(
    image: &ImageEmbedding,
    prompts: &[ConceptPrompt],
    params: &AlignmentParams,
) -> Result<Vec<f64>> {
    prompts
        .iter()
        .map(|p| {
            let classes = [
                ClassSpec::from_prompt("positive", p.positive.clone())?,
                ClassSpec::from_prompt("negative", p.negative.clone())?,
            ];
            Ok(fuse_predict(image, &classes, params)?.fused[0])
        })
        .collect()
}
