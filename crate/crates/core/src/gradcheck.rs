//! Central finite-difference verification of the analytic gradients.
//!
//! Every embedding coordinate and each of the four learnable scalars is
//! perturbed by +-step and compared against the analytic value. Batches whose
//! region-concept columns have near-tied maxima are resampled: the loss is
//! only piecewise smooth and a difference quotient straddling a tie says
//! nothing about the subgradient.

use crate::error::Result;
use crate::loss::{concept_embedding, total_loss, total_loss_grad};
use crate::numerics::{cosine, Matrix, Vector};
use crate::types::{AlignmentParams, ConceptSpan, ImageEmbedding, TextEmbedding, Triplet};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    pub batch: usize,
    pub regions: usize,
    pub tokens: usize,
    pub dim: usize,
    /// Concepts per text are drawn from 0..=max_concepts.
    pub max_concepts: usize,
    pub seed: u64,
    pub step: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            batch: 3,
            regions: 4,
            tokens: 5,
            dim: 6,
            max_concepts: 2,
            seed: 42,
            step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Relative error with a 1e-3 scale floor, so values below 1e-7 pass in
    /// absolute terms as well.
    pub max_rel_error: f64,
    pub coords_checked: usize,
}

// Plain-data mirror of a batch so single coordinates can be perturbed.
#[derive(Clone)]
struct BatchTemplate {
    images: Vec<(Vec<f64>, Vec<Vec<f64>>)>,
    texts: Vec<(Vec<f64>, Vec<Vec<f64>>)>,
    spans: Vec<Vec<ConceptSpan>>,
}

impl BatchTemplate {
    fn build(&self) -> Vec<Triplet> {
        self.images
            .iter()
            .zip(&self.texts)
            .zip(&self.spans)
            .enumerate()
            .map(|(i, (((icls, iregs), (tcls, ttoks)), spans))| {
                Triplet::new(
                    ImageEmbedding::new(
                        format!("i{i}"),
                        Vector::new(icls.clone()).unwrap(),
                        Matrix::from_rows(iregs).unwrap(),
                    )
                    .unwrap(),
                    TextEmbedding::new(
                        format!("t{i}"),
                        Vector::new(tcls.clone()).unwrap(),
                        Matrix::from_rows(ttoks).unwrap(),
                    )
                    .unwrap(),
                    spans.clone(),
                )
                .unwrap()
            })
            .collect()
    }
}

fn random_template(cfg: &GradCheckConfig, rng: &mut ChaCha8Rng) -> BatchTemplate {
    let gauss = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(rand_distr::StandardNormal) };
    let vector = |rng: &mut ChaCha8Rng| (0..cfg.dim).map(|_| gauss(rng)).collect::<Vec<f64>>();
    let rows =
        |rng: &mut ChaCha8Rng, n: usize| (0..n).map(|_| vector(rng)).collect::<Vec<_>>();

    let mut images = Vec::new();
    let mut texts = Vec::new();
    let mut spans = Vec::new();
    for _ in 0..cfg.batch {
        images.push((vector(rng), rows(rng, cfg.regions)));
        texts.push((vector(rng), rows(rng, cfg.tokens)));
        let w = rng.random_range(0..=cfg.max_concepts);
        let mut list = Vec::new();
        for c in 0..w {
            let len = 1 + rng.random_range(0..cfg.tokens.min(3));
            let start = 1 + rng.random_range(0..(cfg.tokens - len + 1));
            list.push(ConceptSpan::new(format!("C{c}"), (start..start + len).collect()).unwrap());
        }
        spans.push(list);
    }
    BatchTemplate {
        images,
        texts,
        spans,
    }
}

fn random_params(rng: &mut ChaCha8Rng) -> AlignmentParams {
    AlignmentParams {
        t_g: rng.random_range(0.5..2.0),
        b_g: rng.random_range(-0.5..0.5),
        t_l: rng.random_range(0.5..2.0),
        b_l: rng.random_range(-0.5..0.5),
        alpha: rng.random_range(0.1..1.5),
        beta: 0.5,
        k: 1,
    }
}

// The smallest gap between the best and second-best region cosine over all
// (image, concept) pairs in the cross product. Infinite when r = 1 or no
// text has concepts.
fn min_max_gap(batch: &[Triplet]) -> f64 {
    let mut min_gap = f64::INFINITY;
    for tn in batch {
        for span in &tn.concepts {
            let g = concept_embedding(&tn.text, span).unwrap();
            for tm in batch {
                let mut best = f64::NEG_INFINITY;
                let mut second = f64::NEG_INFINITY;
                for i in 0..tm.image.num_regions() {
                    let row = Vector::new(tm.image.regions.row(i).to_vec()).unwrap();
                    let a = cosine(&row, &g).unwrap();
                    if a > best {
                        second = best;
                        best = a;
                    } else if a > second {
                        second = a;
                    }
                }
                if second.is_finite() {
                    min_gap = min_gap.min(best - second);
                }
            }
        }
    }
    min_gap
}

/// Draw a batch + params whose region-concept maxima are well separated.
pub fn sample_config(cfg: &GradCheckConfig) -> (Vec<Triplet>, AlignmentParams) {
    let mut attempt = 0u64;
    loop {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt << 32));
        let template = random_template(cfg, &mut rng);
        let params = random_params(&mut rng);
        let batch = template.build();
        if min_max_gap(&batch) > 1e-3 {
            return (batch, params);
        }
        attempt += 1;
    }
}

/// Compare the analytic gradient against central finite differences.
pub fn run(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut attempt = 0u64;
    let (template, params) = loop {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(attempt << 32));
        let template = random_template(cfg, &mut rng);
        let params = random_params(&mut rng);
        if min_max_gap(&template.build()) > 1e-3 {
            break (template, params);
        }
        attempt += 1;
    };

    let batch = template.build();
    let (_, grad) = total_loss_grad(&batch, &params)?;
    let h = cfg.step;

    let mut max_err: f64 = 0.0;
    let mut coords = 0usize;
    let mut check = |analytic: f64, fd: f64| {
        let err = (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
        if err > max_err {
            max_err = err;
        }
        coords += 1;
    };

    let eval = |t: &BatchTemplate, p: &AlignmentParams| -> Result<f64> {
        Ok(total_loss(&t.build(), p)?.total)
    };

    // embedding coordinates
    for m in 0..batch.len() {
        enum Site {
            ImageCls,
            Region(usize),
            TextCls,
            Token(usize),
        }
        let mut sites: Vec<Site> = vec![Site::ImageCls, Site::TextCls];
        for i in 0..cfg.regions {
            sites.push(Site::Region(i));
        }
        for i in 0..cfg.tokens {
            sites.push(Site::Token(i));
        }
        for site in sites {
            for d in 0..cfg.dim {
                fn slot<'a>(
                    t: &'a mut BatchTemplate,
                    site: &Site,
                    m: usize,
                    d: usize,
                ) -> &'a mut f64 {
                    match *site {
                        Site::ImageCls => &mut t.images[m].0[d],
                        Site::Region(i) => &mut t.images[m].1[i][d],
                        Site::TextCls => &mut t.texts[m].0[d],
                        Site::Token(i) => &mut t.texts[m].1[i][d],
                    }
                }
                let mut plus = template.clone();
                let mut minus = template.clone();
                *slot(&mut plus, &site, m, d) += h;
                *slot(&mut minus, &site, m, d) -= h;
                let fd = (eval(&plus, &params)? - eval(&minus, &params)?) / (2.0 * h);
                let analytic = match site {
                    Site::ImageCls => grad.triplets[m].image_cls[d],
                    Site::Region(i) => grad.triplets[m].regions.row(i)[d],
                    Site::TextCls => grad.triplets[m].text_cls[d],
                    Site::Token(i) => grad.triplets[m].tokens.row(i)[d],
                };
                check(analytic, fd);
            }
        }
    }

    // learnable scalars
    let scalar_sites: [(&dyn Fn(&mut AlignmentParams) -> &mut f64, f64); 4] = [
        (&|p| &mut p.t_g, grad.t_g),
        (&|p| &mut p.b_g, grad.b_g),
        (&|p| &mut p.t_l, grad.t_l),
        (&|p| &mut p.b_l, grad.b_l),
    ];
    for (slot, analytic) in scalar_sites {
        let mut plus = params;
        let mut minus = params;
        *slot(&mut plus) += h;
        *slot(&mut minus) -= h;
        let fd = (eval(&template, &plus)? - eval(&template, &minus)?) / (2.0 * h);
        check(analytic, fd);
    }

    Ok(GradCheckReport {
        max_rel_error: max_err,
        coords_checked: coords,
    })
}
