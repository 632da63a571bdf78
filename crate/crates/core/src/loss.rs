//! Dual-alignment training objectives and their analytic gradients.
//!
//! The global term is a pairwise sigmoid loss over normalized cls embeddings
//! with positional pairing (item m is positive for item m, negative for every
//! other item). The local term scores each image-text pair by averaging, over
//! the text's concepts, the best log-sigmoid similarity any image region
//! achieves against that concept, and applies the same +1/-1 pairing sign.
//! Total = global + alpha * local.

use crate::error::{Error, Result};
use crate::numerics::{
    dot, log_sigmoid, mean_of_rows, norm, sigmoid, Matrix, Vector, ZERO_NORM_EPS,
};
use crate::types::{AlignmentParams, ConceptSpan, ImageEmbedding, TextEmbedding, Triplet};

/// Loss components; `total = it_align + alpha * rc_align` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub it_align: f64,
    pub rc_align: f64,
    pub total: f64,
    pub alpha: f64,
}

/// Gradient of the total loss for one triplet's embeddings.
#[derive(Debug, Clone)]
pub struct TripletGrad {
    pub image_cls: Vec<f64>,
    /// r x h.
    pub regions: Matrix,
    pub text_cls: Vec<f64>,
    /// s x h.
    pub tokens: Matrix,
}

/// Gradient of the total loss with respect to every embedding coordinate and
/// the four learnable scalars.
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub triplets: Vec<TripletGrad>,
    pub t_g: f64,
    pub b_g: f64,
    pub t_l: f64,
    pub b_l: f64,
}

/// Mean of the token rows named by `span` (indices are 1-based).
pub fn concept_embedding(text: &TextEmbedding, span: &ConceptSpan) -> Result<Vector> {
    span.validate_against(text)?;
    let idx: Vec<usize> = span.token_indices.iter().map(|&v| v - 1).collect();
    mean_of_rows(&text.tokens, &idx)
}

/// r x w matrix of log-sigmoid region-concept similarities:
/// entry (i, j) = log sigma(t_l * cos(region_i, concept_j) - b_l).
pub fn region_concept_matrix(
    image: &ImageEmbedding,
    concept_embs: &[Vector],
    params: &AlignmentParams,
) -> Result<Matrix> {
    if concept_embs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let r = image.num_regions();
    let mut values = Vec::with_capacity(r * concept_embs.len());
    for i in 0..r {
        let region = image.regions.row(i);
        let rn = norm(region);
        if rn < ZERO_NORM_EPS {
            return Err(Error::ZeroNorm);
        }
        for g in concept_embs {
            let gn = g.norm();
            if gn < ZERO_NORM_EPS {
                return Err(Error::ZeroNorm);
            }
            let a = (dot(region, g.as_slice()) / (rn * gn)).clamp(-1.0, 1.0);
            values.push(log_sigmoid(params.t_l * a - params.b_l));
        }
    }
    Matrix::new(r, concept_embs.len(), values)
}

/// Mean over concepts (columns) of the best region score (column max).
pub fn pair_similarity_score(a: &Matrix) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for j in 0..a.cols() {
        let mut best = f64::NEG_INFINITY;
        for i in 0..a.rows() {
            let v = a.row(i)[j];
            if v > best {
                best = v;
            }
        }
        sum += best;
    }
    Ok(sum / a.cols() as f64)
}

// ---------------------------------------------------------------------------
// Shared forward state
// ---------------------------------------------------------------------------

struct TripletCtx {
    img_cls_unit: Vec<f64>,
    img_cls_norm: f64,
    txt_cls_unit: Vec<f64>,
    txt_cls_norm: f64,
    region_units: Vec<Vec<f64>>,
    region_norms: Vec<f64>,
    concepts: Vec<ConceptCtx>,
}

struct ConceptCtx {
    unit: Vec<f64>,
    norm: f64,
    /// 0-based token rows the concept averages.
    token_rows: Vec<usize>,
}

fn build_ctx(batch: &[Triplet]) -> Result<Vec<TripletCtx>> {
    batch
        .iter()
        .map(|t| {
            let img_cls_norm = t.image.cls.norm();
            let txt_cls_norm = t.text.cls.norm();
            if img_cls_norm < ZERO_NORM_EPS || txt_cls_norm < ZERO_NORM_EPS {
                return Err(Error::ZeroNorm);
            }
            let img_cls_unit: Vec<f64> = t
                .image
                .cls
                .as_slice()
                .iter()
                .map(|x| x / img_cls_norm)
                .collect();
            let txt_cls_unit: Vec<f64> = t
                .text
                .cls
                .as_slice()
                .iter()
                .map(|x| x / txt_cls_norm)
                .collect();

            // Zero region rows are tolerated here and rejected lazily: they
            // only matter if this image meets a text with concepts.
            let mut region_units = Vec::with_capacity(t.image.num_regions());
            let mut region_norms = Vec::with_capacity(t.image.num_regions());
            for i in 0..t.image.num_regions() {
                let row = t.image.regions.row(i);
                let n = norm(row);
                region_norms.push(n);
                region_units.push(if n >= ZERO_NORM_EPS {
                    row.iter().map(|x| x / n).collect()
                } else {
                    vec![0.0; row.len()]
                });
            }

            let mut concepts = Vec::with_capacity(t.concepts.len());
            for span in &t.concepts {
                let emb = concept_embedding(&t.text, span)?;
                let n = emb.norm();
                if n < ZERO_NORM_EPS {
                    return Err(Error::ZeroNorm);
                }
                concepts.push(ConceptCtx {
                    unit: emb.as_slice().iter().map(|x| x / n).collect(),
                    norm: n,
                    token_rows: span.token_indices.iter().map(|&v| v - 1).collect(),
                });
            }
            Ok(TripletCtx {
                img_cls_unit,
                img_cls_norm,
                txt_cls_unit,
                txt_cls_norm,
                region_units,
                region_norms,
                concepts,
            })
        })
        .collect()
}

fn pairing_sign(m: usize, n: usize) -> f64 {
    if m == n {
        1.0
    } else {
        -1.0
    }
}

fn check_batch(batch: &[Triplet], params: &AlignmentParams) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput);
    }
    params.validate()?;
    let h = batch[0].image.dim();
    for t in batch {
        if t.image.dim() != h || t.text.dim() != h {
            return Err(Error::DimMismatch {
                left: h,
                right: if t.image.dim() != h {
                    t.image.dim()
                } else {
                    t.text.dim()
                },
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Forward losses
// ---------------------------------------------------------------------------

fn it_align_from_ctx(ctx: &[TripletCtx], params: &AlignmentParams) -> f64 {
    let b = ctx.len() as f64;
    let mut sum = 0.0;
    for (m, cm) in ctx.iter().enumerate() {
        for (n, cn) in ctx.iter().enumerate() {
            let c = dot(&cm.img_cls_unit, &cn.txt_cls_unit).clamp(-1.0, 1.0);
            let u = pairing_sign(m, n) * (params.t_g * c - params.b_g);
            sum += -log_sigmoid(u);
        }
    }
    sum / b
}

// Best region per concept: returns (argmax region, cosine there) per concept.
// Ties resolve to the lowest region index. Valid because log sigma(t_l a - b_l)
// is strictly increasing in a for t_l > 0.
fn best_regions(cm: &TripletCtx, cn: &TripletCtx) -> Result<Vec<(usize, f64)>> {
    if cm.region_norms.iter().any(|&n| n < ZERO_NORM_EPS) {
        return Err(Error::ZeroNorm);
    }
    let mut out = Vec::with_capacity(cn.concepts.len());
    for g in &cn.concepts {
        let mut best_i = 0;
        let mut best_a = f64::NEG_INFINITY;
        for (i, ru) in cm.region_units.iter().enumerate() {
            let a = dot(ru, &g.unit).clamp(-1.0, 1.0);
            if a > best_a {
                best_a = a;
                best_i = i;
            }
        }
        out.push((best_i, best_a));
    }
    Ok(out)
}

fn pair_score(cm: &TripletCtx, cn: &TripletCtx, params: &AlignmentParams) -> Result<f64> {
    let best = best_regions(cm, cn)?;
    let w = best.len() as f64;
    let sum: f64 = best
        .iter()
        .map(|&(_, a)| log_sigmoid(params.t_l * a - params.b_l))
        .sum();
    Ok(sum / w)
}

fn rc_align_from_ctx(ctx: &[TripletCtx], params: &AlignmentParams) -> Result<f64> {
    let b = ctx.len() as f64;
    let mut sum = 0.0;
    for (m, cm) in ctx.iter().enumerate() {
        for (n, cn) in ctx.iter().enumerate() {
            if cn.concepts.is_empty() {
                continue;
            }
            sum += pairing_sign(m, n) * pair_score(cm, cn, params)?;
        }
    }
    Ok(-sum / b)
}

/// Global image-text sigmoid loss over the batch.
pub fn it_align_loss(batch: &[Triplet], params: &AlignmentParams) -> Result<f64> {
    check_batch(batch, params)?;
    let ctx = build_ctx(batch)?;
    Ok(it_align_from_ctx(&ctx, params))
}

/// Region-concept alignment loss over the batch. Pairs whose text has no
/// concepts contribute zero.
pub fn rc_align_loss(batch: &[Triplet], params: &AlignmentParams) -> Result<f64> {
    check_batch(batch, params)?;
    let ctx = build_ctx(batch)?;
    rc_align_from_ctx(&ctx, params)
}

/// Both loss components and their weighted sum.
pub fn total_loss(batch: &[Triplet], params: &AlignmentParams) -> Result<LossBreakdown> {
    check_batch(batch, params)?;
    let ctx = build_ctx(batch)?;
    let it = it_align_from_ctx(&ctx, params);
    let rc = rc_align_from_ctx(&ctx, params)?;
    Ok(LossBreakdown {
        it_align: it,
        rc_align: rc,
        total: it + params.alpha * rc,
        alpha: params.alpha,
    })
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

/// Loss plus the analytic gradient of the total loss. At column-max ties the
/// subgradient flows to the lowest region index.
pub fn total_loss_grad(
    batch: &[Triplet],
    params: &AlignmentParams,
) -> Result<(LossBreakdown, GradientSet)> {
    check_batch(batch, params)?;
    let ctx = build_ctx(batch)?;
    let b = batch.len() as f64;

    let mut grads: Vec<TripletGrad> = batch
        .iter()
        .map(|t| TripletGrad {
            image_cls: vec![0.0; t.image.dim()],
            regions: Matrix::zeros(t.image.num_regions(), t.image.dim()),
            text_cls: vec![0.0; t.text.dim()],
            tokens: Matrix::zeros(t.text.num_tokens(), t.text.dim()),
        })
        .collect();
    let mut g_t_g = 0.0;
    let mut g_b_g = 0.0;
    let mut g_t_l = 0.0;
    let mut g_b_l = 0.0;

    // Global term.
    let mut it = 0.0;
    for m in 0..ctx.len() {
        for n in 0..ctx.len() {
            let cm = &ctx[m];
            let cn = &ctx[n];
            let z = pairing_sign(m, n);
            let c = dot(&cm.img_cls_unit, &cn.txt_cls_unit).clamp(-1.0, 1.0);
            let u = z * (params.t_g * c - params.b_g);
            it += -log_sigmoid(u);

            // d(-log sigma(u))/du = -sigma(-u)
            let du = -sigmoid(-u) / b;
            g_t_g += du * z * c;
            g_b_g += -du * z;
            let dc = du * z * params.t_g;

            // c = cos(raw image cls, raw text cls)
            let (xi, yi) = (&cm.img_cls_unit, &cn.txt_cls_unit);
            for d in 0..xi.len() {
                grads[m].image_cls[d] += dc * (yi[d] - c * xi[d]) / cm.img_cls_norm;
                grads[n].text_cls[d] += dc * (xi[d] - c * yi[d]) / cn.txt_cls_norm;
            }
        }
    }
    it /= b;

    // Local term, scaled by alpha into the total gradient.
    let mut rc_sum = 0.0;
    for m in 0..ctx.len() {
        for n in 0..ctx.len() {
            let cn = &ctx[n];
            if cn.concepts.is_empty() {
                continue;
            }
            let cm = &ctx[m];
            let z = pairing_sign(m, n);
            let best = best_regions(cm, cn)?;
            let w = best.len() as f64;
            let mut s = 0.0;
            for (j, &(i_star, a)) in best.iter().enumerate() {
                let pre = params.t_l * a - params.b_l;
                s += log_sigmoid(pre);

                // dL_total/dA = alpha * (-z / (B w)); dA/dpre = sigma(-pre)
                let f = params.alpha * (-z / (b * w)) * sigmoid(-pre);
                g_t_l += f * a;
                g_b_l += -f;
                let da = f * params.t_l;

                let gc = &cn.concepts[j];
                let ru = &cm.region_units[i_star];
                let rn = cm.region_norms[i_star];
                // a = cos(region, concept): split into both directions.
                let u_tok = 1.0 / gc.token_rows.len() as f64;
                for d in 0..ru.len() {
                    let d_region = da * (gc.unit[d] - a * ru[d]) / rn;
                    grads[m].regions.row_mut(i_star)[d] += d_region;
                    let d_concept = da * (ru[d] - a * gc.unit[d]) / gc.norm;
                    for &row in &gc.token_rows {
                        grads[n].tokens.row_mut(row)[d] += d_concept * u_tok;
                    }
                }
            }
            rc_sum += z * (s / w);
        }
    }
    let rc = -rc_sum / b;

    let breakdown = LossBreakdown {
        it_align: it,
        rc_align: rc,
        total: it + params.alpha * rc,
        alpha: params.alpha,
    };

    let all_finite = grads.iter().all(|g| {
        g.image_cls.iter().all(|v| v.is_finite())
            && g.text_cls.iter().all(|v| v.is_finite())
            && g.regions.values().iter().all(|v| v.is_finite())
            && g.tokens.values().iter().all(|v| v.is_finite())
    }) && [g_t_g, g_b_g, g_t_l, g_b_l].iter().all(|v| v.is_finite());
    if !all_finite || !breakdown.total.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }

    Ok((
        breakdown,
        GradientSet {
            triplets: grads,
            t_g: g_t_g,
            b_g: g_b_g,
            t_l: g_t_l,
            b_l: g_b_l,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Matrix, Vector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params(t_g: f64, b_g: f64, t_l: f64, b_l: f64, alpha: f64) -> AlignmentParams {
        AlignmentParams {
            t_g,
            b_g,
            t_l,
            b_l,
            alpha,
            beta: 0.5,
            k: 1,
        }
    }

    fn triplet(
        cls_i: Vec<f64>,
        regions: Vec<Vec<f64>>,
        cls_t: Vec<f64>,
        tokens: Vec<Vec<f64>>,
        spans: Vec<ConceptSpan>,
    ) -> Triplet {
        Triplet::new(
            ImageEmbedding::new(
                "i",
                Vector::new(cls_i).unwrap(),
                Matrix::from_rows(&regions).unwrap(),
            )
            .unwrap(),
            TextEmbedding::new(
                "t",
                Vector::new(cls_t).unwrap(),
                Matrix::from_rows(&tokens).unwrap(),
            )
            .unwrap(),
            spans,
        )
        .unwrap()
    }

    fn random_triplet(rng: &mut ChaCha8Rng, r: usize, s: usize, h: usize, w: usize) -> Triplet {
        let gauss =
            |rng: &mut ChaCha8Rng| -> f64 { rng.sample(rand_distr::StandardNormal) };
        let vector = |rng: &mut ChaCha8Rng| (0..h).map(|_| gauss(rng)).collect::<Vec<f64>>();
        let rows =
            |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| vector(rng)).collect::<Vec<_>>();
        let mut spans = Vec::new();
        for c in 0..w {
            let len = 1 + rng.random_range(0..2.min(s));
            let start = 1 + rng.random_range(0..(s - len + 1));
            let idx: Vec<usize> = (start..start + len).collect();
            spans.push(ConceptSpan::new(format!("C{c}"), idx).unwrap());
        }
        triplet(vector(rng), rows(rng, r), vector(rng), rows(rng, s), spans)
    }

    #[test]
    fn concept_embedding_cases() {
        let t = triplet(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![],
        );
        let span = ConceptSpan::new("C1", vec![1, 2]).unwrap();
        assert_eq!(
            concept_embedding(&t.text, &span).unwrap().as_slice(),
            &[0.5, 0.5]
        );
        let single = ConceptSpan::new("C1", vec![2]).unwrap();
        assert_eq!(
            concept_embedding(&t.text, &single).unwrap().as_slice(),
            &[0.0, 1.0]
        );
        let text1 = TextEmbedding::new(
            "t1",
            Vector::new(vec![1.0, 0.0]).unwrap(),
            Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        )
        .unwrap();
        assert!(matches!(
            concept_embedding(&text1, &single),
            Err(Error::SpanOutOfRange { .. })
        ));
    }

    #[test]
    fn it_align_single_pair_closed_form() {
        let t = triplet(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![],
        );
        let loss = it_align_loss(&[t], &params(1.0, 0.0, 1.0, 0.0, 0.5)).unwrap();
        assert!((loss - 0.31326168751822286).abs() < 1e-15);
    }

    #[test]
    fn it_align_two_pair_closed_form() {
        // diagonal cosine 1, cross-pair cosine 0
        let t0 = triplet(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![],
        );
        let t1 = triplet(
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0]],
            vec![0.0, 1.0],
            vec![vec![0.0, 1.0]],
            vec![],
        );
        let loss = it_align_loss(&[t0, t1], &params(1.0, 0.0, 1.0, 0.0, 0.5)).unwrap();
        let expected = (2.0 * 0.31326168751822286 + 2.0 * 0.6931471805599453) / 2.0;
        assert!((loss - expected).abs() < 1e-12, "loss={loss}");
    }

    // Literal transcription of the global pairwise sigmoid loss, written
    // directly from the formula with naive exp/ln.
    fn it_align_literal(batch: &[Triplet], p: &AlignmentParams) -> f64 {
        let b = batch.len() as f64;
        let unit = |v: &[f64]| -> Vec<f64> {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / n).collect()
        };
        let mut sum = 0.0;
        for (m, tm) in batch.iter().enumerate() {
            for (n, tn) in batch.iter().enumerate() {
                let x = unit(tm.image.cls.as_slice());
                let y = unit(tn.text.cls.as_slice());
                let xy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
                let z = if m == n { 1.0 } else { -1.0 };
                sum += (1.0 / (1.0 + (z * (-p.t_g * xy + p.b_g)).exp())).ln();
            }
        }
        -sum / b
    }

    // Literal transcription of the region-concept loss chain.
    fn rc_align_literal(batch: &[Triplet], p: &AlignmentParams) -> f64 {
        let b = batch.len() as f64;
        let mut sum = 0.0;
        for (m, tm) in batch.iter().enumerate() {
            for (n, tn) in batch.iter().enumerate() {
                if tn.concepts.is_empty() {
                    continue;
                }
                let w = tn.concepts.len() as f64;
                let mut s = 0.0;
                for span in &tn.concepts {
                    // mean pooling of the concept's token rows
                    let h = tn.text.dim();
                    let mut g = vec![0.0; h];
                    for &v in &span.token_indices {
                        for d in 0..h {
                            g[d] += tn.text.tokens.row(v - 1)[d];
                        }
                    }
                    for gd in &mut g {
                        *gd /= span.token_indices.len() as f64;
                    }
                    let gn = g.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let mut best = f64::NEG_INFINITY;
                    for i in 0..tm.image.num_regions() {
                        let row = tm.image.regions.row(i);
                        let rn = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                        let a =
                            row.iter().zip(&g).map(|(x, y)| x * y).sum::<f64>() / (gn * rn);
                        let aij = (1.0 / (1.0 + (-p.t_l * a + p.b_l).exp())).ln();
                        if aij > best {
                            best = aij;
                        }
                    }
                    s += best;
                }
                let z = if m == n { 1.0 } else { -1.0 };
                sum += z * s / w;
            }
        }
        -sum / b
    }

    #[test]
    fn it_align_matches_literal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let batch: Vec<Triplet> = (0..2).map(|_| random_triplet(&mut rng, 2, 3, 4, 1)).collect();
        let p = params(1.3, 0.2, 0.9, -0.1, 0.5);
        let ours = it_align_loss(&batch, &p).unwrap();
        let lit = it_align_literal(&batch, &p);
        assert!((ours - lit).abs() <= 1e-12 * lit.abs().max(1.0));
    }

    #[test]
    fn region_concept_matrix_closed_forms() {
        let image = ImageEmbedding::new(
            "i",
            Vector::new(vec![1.0, 0.0]).unwrap(),
            Matrix::from_rows(&[vec![2.0, 0.0], vec![0.0, 3.0]]).unwrap(),
        )
        .unwrap();
        let concept = Vector::new(vec![1.0, 0.0]).unwrap();
        let p = params(1.0, 0.0, 1.0, 0.0, 0.5);
        let a = region_concept_matrix(&image, &[concept], &p).unwrap();
        assert!((a.row(0)[0] - (-0.3132616875182228)).abs() < 1e-12);
        assert!((a.row(1)[0] - (-0.6931471805599453)).abs() < 1e-12);

        // anti-aligned concept
        let neg = Vector::new(vec![-1.0, 0.0]).unwrap();
        let a = region_concept_matrix(&image, &[neg], &p).unwrap();
        assert!((a.row(0)[0] - (-1.3132616875182228)).abs() < 1e-12);

        // every entry is a log-probability
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_triplet(&mut rng, 3, 4, 5, 2);
        let embs: Vec<Vector> = t
            .concepts
            .iter()
            .map(|s| concept_embedding(&t.text, s).unwrap())
            .collect();
        let a = region_concept_matrix(&t.image, &embs, &p).unwrap();
        assert!(a.values().iter().all(|&v| v < 0.0));
    }

    #[test]
    fn region_concept_matrix_matches_entrywise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = random_triplet(&mut rng, 3, 4, 5, 2);
        let p = params(1.7, 0.0, 1.7, 0.3, 0.5);
        let embs: Vec<Vector> = t
            .concepts
            .iter()
            .map(|s| concept_embedding(&t.text, s).unwrap())
            .collect();
        let a = region_concept_matrix(&t.image, &embs, &p).unwrap();
        for i in 0..a.rows() {
            for (j, emb) in embs.iter().enumerate() {
                let region = Vector::new(t.image.regions.row(i).to_vec()).unwrap();
                let c = crate::numerics::cosine(&region, emb).unwrap();
                let expect = log_sigmoid(p.t_l * c - p.b_l);
                assert!((a.row(i)[j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pair_similarity_cases() {
        let one = Matrix::from_rows(&[vec![-0.3], vec![-0.7]]).unwrap();
        assert_eq!(pair_similarity_score(&one).unwrap(), -0.3);
        let two = Matrix::from_rows(&[vec![-0.2, -0.8], vec![-0.6, -0.4]]).unwrap();
        assert!((pair_similarity_score(&two).unwrap() - (-0.3)).abs() < 1e-15);

        // brute force on a random 5x3
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| -rng.random_range(0.0..2.0f64)).collect())
            .collect();
        let m = Matrix::from_rows(&rows).unwrap();
        let mut expect = 0.0;
        for j in 0..3 {
            expect += (0..5).map(|i| rows[i][j]).fold(f64::NEG_INFINITY, f64::max);
        }
        expect /= 3.0;
        assert!((pair_similarity_score(&m).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn rc_align_sign_flip_and_symmetry() {
        // |B|=1: loss = -S
        let t = triplet(
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![ConceptSpan::new("C0", vec![1]).unwrap()],
        );
        let p = params(1.0, 0.0, 1.0, 0.0, 0.5);
        let loss = rc_align_loss(&[t.clone()], &p).unwrap();
        assert!((loss - 0.3132616875182228).abs() < 1e-12);

        // |B|=2 with identical S everywhere cancels to zero
        let batch = vec![t.clone(), t];
        let loss = rc_align_loss(&batch, &p).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn rc_align_matches_literal_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch: Vec<Triplet> =
            (0..3).map(|_| random_triplet(&mut rng, 3, 4, 5, 2)).collect();
        let p = params(1.2, 0.1, 0.8, -0.2, 0.7);
        let ours = rc_align_loss(&batch, &p).unwrap();
        let lit = rc_align_literal(&batch, &p);
        assert!((ours - lit).abs() <= 1e-12 * lit.abs().max(1.0));
    }

    #[test]
    fn total_loss_composition() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let batch: Vec<Triplet> =
            (0..3).map(|_| random_triplet(&mut rng, 2, 3, 4, 1)).collect();
        let p0 = params(1.0, 0.0, 1.0, 0.0, 0.0);
        let b0 = total_loss(&batch, &p0).unwrap();
        assert_eq!(b0.total, b0.it_align);

        let p2 = params(1.0, 0.0, 1.0, 0.0, 2.0);
        let b2 = total_loss(&batch, &p2).unwrap();
        assert!((b2.total - b2.it_align - 2.0 * b2.rc_align).abs() < 1e-12);
    }

    #[test]
    fn losses_invariant_to_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = random_triplet(&mut rng, 3, 3, 4, 1);
        let p = params(1.4, 0.1, 1.1, 0.0, 0.5);
        let base_it = it_align_loss(&[t.clone()], &p).unwrap();
        let base_rc = rc_align_loss(&[t.clone()], &p).unwrap();

        let mut scaled = t.clone();
        scaled.image = ImageEmbedding::new(
            "i",
            Vector::new(t.image.cls.as_slice().iter().map(|x| 7.5 * x).collect()).unwrap(),
            Matrix::from_rows(
                &(0..t.image.num_regions())
                    .map(|i| t.image.regions.row(i).iter().map(|x| 0.3 * x).collect())
                    .collect::<Vec<_>>(),
            )
            .unwrap(),
        )
        .unwrap();
        assert!((it_align_loss(&[scaled.clone()], &p).unwrap() - base_it).abs() < 1e-10);
        assert!((rc_align_loss(&[scaled], &p).unwrap() - base_rc).abs() < 1e-10);
    }

    #[test]
    fn losses_invariant_to_batch_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let batch: Vec<Triplet> =
            (0..4).map(|_| random_triplet(&mut rng, 2, 3, 4, 1)).collect();
        let p = params(1.1, -0.2, 0.9, 0.1, 0.5);
        let b = total_loss(&batch, &p).unwrap();
        let permuted: Vec<Triplet> =
            vec![batch[2].clone(), batch[0].clone(), batch[3].clone(), batch[1].clone()];
        let bp = total_loss(&permuted, &p).unwrap();
        assert!((b.it_align - bp.it_align).abs() < 1e-12);
        assert!((b.rc_align - bp.rc_align).abs() < 1e-12);
    }

    #[test]
    fn grad_alpha_identity() {
        // d total / d alpha = rc_align
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch: Vec<Triplet> =
            (0..2).map(|_| random_triplet(&mut rng, 2, 3, 4, 1)).collect();
        let h = 1e-6;
        let lo = total_loss(&batch, &params(1.0, 0.0, 1.0, 0.0, 0.5 - h)).unwrap();
        let hi = total_loss(&batch, &params(1.0, 0.0, 1.0, 0.0, 0.5 + h)).unwrap();
        let fd = (hi.total - lo.total) / (2.0 * h);
        let rc = total_loss(&batch, &params(1.0, 0.0, 1.0, 0.0, 0.5)).unwrap().rc_align;
        assert!((fd - rc).abs() < 1e-6);
    }

    #[test]
    fn zero_norm_cls_rejected() {
        let t = triplet(
            vec![0.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![vec![1.0, 0.0]],
            vec![],
        );
        assert!(matches!(
            it_align_loss(&[t], &params(1.0, 0.0, 1.0, 0.0, 0.5)),
            Err(Error::ZeroNorm)
        ));
    }
}
