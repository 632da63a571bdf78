//! Desk-scale training: a linear encoder pair and a deterministic
//! gradient-descent loop over the dual-alignment objective.
//!
//! The optimizer is plain full-batch gradient descent (momentum optional,
//! off by default): the objective is where the substance lives, not the
//! optimizer. Positivity of the logit scales is kept by projection after
//! each step.

use crate::error::{Error, Result};
use crate::infer::{fuse_predict, ClassSpec};
use crate::loss::{total_loss_grad, LossBreakdown};
use crate::numerics::{Matrix, Vector};
use crate::synthetic::{RawSample, SyntheticDataset};
use crate::types::{AlignmentParams, ImageEmbedding, TextEmbedding, Triplet};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Linear projections from raw slot space to the shared h-dimensional space.
/// The cls input of an item is the mean of its slot inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    /// d_img_raw x h.
    pub image_proj: Matrix,
    /// d_txt_raw x h.
    pub text_proj: Matrix,
}

impl ToyEncoder {
    /// Projections drawn from uniform(-1/sqrt(d_raw), 1/sqrt(d_raw)).
    pub fn init(d_img_raw: usize, d_txt_raw: usize, hidden_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |d: usize| -> Matrix {
            let bound = 1.0 / (d as f64).sqrt();
            let values: Vec<f64> = (0..d * hidden_dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            Matrix::new(d, hidden_dim, values).expect("finite init")
        };
        let image_proj = draw(d_img_raw);
        let text_proj = draw(d_txt_raw);
        Self {
            image_proj,
            text_proj,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.image_proj.cols()
    }

    pub fn encode_image(&self, id: impl Into<String>, slots: &Matrix) -> Result<ImageEmbedding> {
        let (cls, rows) = encode(slots, &self.image_proj)?;
        ImageEmbedding::new(id, cls, rows)
    }

    pub fn encode_text(&self, id: impl Into<String>, slots: &Matrix) -> Result<TextEmbedding> {
        let (cls, rows) = encode(slots, &self.text_proj)?;
        TextEmbedding::new(id, cls, rows)
    }

    pub fn encode_sample(&self, idx: usize, sample: &RawSample) -> Result<Triplet> {
        let id = format!("s{idx:05}");
        Triplet::new(
            self.encode_image(id.clone(), &sample.image_slots)?,
            self.encode_text(id, &sample.text_slots)?,
            sample.spans.clone(),
        )
    }
}

// Projects every slot row and the mean-of-slots cls row.
fn encode(slots: &Matrix, proj: &Matrix) -> Result<(Vector, Matrix)> {
    if slots.cols() != proj.rows() {
        return Err(Error::DimMismatch {
            left: slots.cols(),
            right: proj.rows(),
        });
    }
    let h = proj.cols();
    let mut rows = Matrix::zeros(slots.rows(), h);
    let mut raw_cls = vec![0.0; slots.cols()];
    for i in 0..slots.rows() {
        let raw = slots.row(i);
        for (acc, x) in raw_cls.iter_mut().zip(raw) {
            *acc += x;
        }
        project_into(raw, proj, rows.row_mut(i));
    }
    for x in &mut raw_cls {
        *x /= slots.rows() as f64;
    }
    let mut cls = vec![0.0; h];
    project_into(&raw_cls, proj, &mut cls);
    Ok((Vector::new(cls)?, rows))
}

fn project_into(raw: &[f64], proj: &Matrix, out: &mut [f64]) {
    for slot in out.iter_mut() {
        *slot = 0.0;
    }
    for (a, &x) in raw.iter().enumerate() {
        for (slot, w) in out.iter_mut().zip(proj.row(a)) {
            *slot += x * w;
        }
    }
}

/// Encoder plus the learned logit scalars, as persisted to model JSON.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub encoder: ToyEncoder,
    pub t_g: f64,
    pub b_g: f64,
    pub t_l: f64,
    pub b_l: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    h: usize,
    image_proj: Vec<Vec<f64>>,
    text_proj: Vec<Vec<f64>>,
    t_g: f64,
    b_g: f64,
    t_l: f64,
    b_l: f64,
}

impl TrainedModel {
    pub fn params(&self, alpha: f64, beta: f64, k: usize) -> AlignmentParams {
        AlignmentParams {
            t_g: self.t_g,
            b_g: self.b_g,
            t_l: self.t_l,
            b_l: self.b_l,
            alpha,
            beta,
            k,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let as_rows = |m: &Matrix| -> Vec<Vec<f64>> {
            (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
        };
        Ok(serde_json::to_string_pretty(&ModelJson {
            h: self.encoder.hidden_dim(),
            image_proj: as_rows(&self.encoder.image_proj),
            text_proj: as_rows(&self.encoder.text_proj),
            t_g: self.t_g,
            b_g: self.b_g,
            t_l: self.t_l,
            b_l: self.b_l,
        })?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let m: ModelJson = serde_json::from_str(json)?;
        let image_proj = Matrix::from_rows(&m.image_proj)?;
        let text_proj = Matrix::from_rows(&m.text_proj)?;
        if image_proj.cols() != m.h || text_proj.cols() != m.h {
            return Err(Error::DimMismatch {
                left: image_proj.cols(),
                right: m.h,
            });
        }
        Ok(Self {
            encoder: ToyEncoder {
                image_proj,
                text_proj,
            },
            t_g: m.t_g,
            b_g: m.b_g,
            t_l: m.t_l,
            b_l: m.b_l,
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub steps: usize,
    /// None trains full-batch; Some(b) walks seeded shuffled minibatches.
    pub batch_size: Option<usize>,
    pub alpha: f64,
    pub init_t_g: f64,
    pub init_b_g: f64,
    pub init_t_l: f64,
    pub init_b_l: f64,
    /// 0.0 disables momentum.
    pub momentum: f64,
    /// Steps at the start trained with alpha forced to zero.
    pub warmup_steps_without_rc: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            learning_rate: 0.05,
            steps: 1500,
            batch_size: None,
            alpha: 0.5,
            init_t_g: 10.0,
            init_b_g: 0.0,
            init_t_l: 10.0,
            init_b_l: 0.0,
            momentum: 0.0,
            warmup_steps_without_rc: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate < 0.0 {
            return Err(Error::InvalidParams("learning rate must be >= 0".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidParams("need at least one step".into()));
        }
        if self.hidden_dim == 0 {
            return Err(Error::InvalidParams("hidden dim must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidParams("momentum must be in [0, 1)".into()));
        }
        if self.alpha < 0.0 {
            return Err(Error::InvalidParams("alpha must be >= 0".into()));
        }
        Ok(())
    }
}

/// One trace row per step, recorded at the pre-update parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub it_align: f64,
    pub rc_align: f64,
    pub total: f64,
}

// Gradient of the batch loss with respect to both projections and the four
// scalars, chained from the per-embedding gradients.
struct ProjGrads {
    image: Matrix,
    text: Matrix,
    t_g: f64,
    b_g: f64,
    t_l: f64,
    b_l: f64,
}

fn batch_grad(
    encoder: &ToyEncoder,
    samples: &[(usize, &RawSample)],
    params: &AlignmentParams,
) -> Result<(LossBreakdown, ProjGrads)> {
    let batch: Vec<Triplet> = samples
        .iter()
        .map(|(idx, s)| encoder.encode_sample(*idx, s))
        .collect::<Result<Vec<_>>>()?;
    let (breakdown, grads) = total_loss_grad(&batch, params)?;

    let mut g_img = Matrix::zeros(encoder.image_proj.rows(), encoder.image_proj.cols());
    let mut g_txt = Matrix::zeros(encoder.text_proj.rows(), encoder.text_proj.cols());
    for ((_, sample), grad) in samples.iter().zip(&grads.triplets) {
        accumulate_proj_grad(&sample.image_slots, &grad.image_cls, grad.regions.values(), &mut g_img);
        accumulate_proj_grad(&sample.text_slots, &grad.text_cls, grad.tokens.values(), &mut g_txt);
    }
    Ok((
        breakdown,
        ProjGrads {
            image: g_img,
            text: g_txt,
            t_g: grads.t_g,
            b_g: grads.b_g,
            t_l: grads.t_l,
            b_l: grads.b_l,
        },
    ))
}

// emb_row_i = raw_i W and cls = mean(raw) W, so
// dL/dW = mean(raw)^T g_cls + sum_i raw_i^T g_row_i.
fn accumulate_proj_grad(slots: &Matrix, g_cls: &[f64], g_rows: &[f64], out: &mut Matrix) {
    let h = out.cols();
    let d = out.rows();
    let n = slots.rows() as f64;
    for i in 0..slots.rows() {
        let raw = slots.row(i);
        let g_row = &g_rows[i * h..(i + 1) * h];
        for a in 0..d {
            let xa = raw[a];
            let cls_coef = xa / n;
            let row = out.row_mut(a);
            for j in 0..h {
                row[j] += xa * g_row[j] + cls_coef * g_cls[j];
            }
        }
    }
}

/// Gradient descent over the dual-alignment objective. Deterministic for a
/// fixed seed; the trace records the loss at each step's pre-update
/// parameters.
pub fn train(
    config: &TrainConfig,
    data: &SyntheticDataset,
) -> Result<(TrainedModel, Vec<TraceRow>)> {
    config.validate()?;
    if data.samples.is_empty() {
        return Err(Error::EmptyInput);
    }

    let mut encoder = ToyEncoder::init(
        data.spec.d_img_raw,
        data.spec.d_txt_raw,
        config.hidden_dim,
        config.seed,
    );
    let mut t_g = config.init_t_g;
    let mut b_g = config.init_b_g;
    let mut t_l = config.init_t_l;
    let mut b_l = config.init_b_l;

    let n = data.samples.len();
    let batch_size = config.batch_size.unwrap_or(n).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(17);
    let mut cursor = n; // force a (re)shuffle on first use when minibatching

    let mut v_img = Matrix::zeros(encoder.image_proj.rows(), encoder.image_proj.cols());
    let mut v_txt = Matrix::zeros(encoder.text_proj.rows(), encoder.text_proj.cols());
    let mut v_scalars = [0.0f64; 4];

    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let indices: Vec<usize> = if batch_size == n {
            order.clone()
        } else {
            if cursor + batch_size > n {
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            let slice = order[cursor..cursor + batch_size].to_vec();
            cursor += batch_size;
            slice
        };
        let batch: Vec<(usize, &RawSample)> =
            indices.iter().map(|&i| (i, &data.samples[i])).collect();

        let alpha = if step < config.warmup_steps_without_rc {
            0.0
        } else {
            config.alpha
        };
        let params = AlignmentParams {
            t_g,
            b_g,
            t_l,
            b_l,
            alpha,
            beta: 0.5,
            k: 1,
        };
        let (breakdown, grads) = batch_grad(&encoder, &batch, &params)?;
        if !breakdown.total.is_finite() {
            return Err(Error::Divergence { step });
        }
        trace.push(TraceRow {
            step,
            it_align: breakdown.it_align,
            rc_align: breakdown.rc_align,
            total: breakdown.total,
        });

        let lr = config.learning_rate;
        let mu = config.momentum;
        let apply = |w: &mut Matrix, v: &mut Matrix, g: &Matrix| {
            for ((wv, vv), gv) in w
                .values_mut()
                .iter_mut()
                .zip(v.values_mut())
                .zip(g.values())
            {
                *vv = mu * *vv + gv;
                *wv -= lr * *vv;
            }
        };
        apply(&mut encoder.image_proj, &mut v_img, &grads.image);
        apply(&mut encoder.text_proj, &mut v_txt, &grads.text);
        let scalar_grads = [grads.t_g, grads.b_g, grads.t_l, grads.b_l];
        for (v, g) in v_scalars.iter_mut().zip(scalar_grads) {
            *v = mu * *v + g;
        }
        t_g -= lr * v_scalars[0];
        b_g -= lr * v_scalars[1];
        t_l -= lr * v_scalars[2];
        b_l -= lr * v_scalars[3];
        // keep the logit scales positive
        t_g = t_g.max(1e-6);
        t_l = t_l.max(1e-6);
    }

    Ok((
        TrainedModel {
            encoder,
            t_g,
            b_g,
            t_l,
            b_l,
        },
        trace,
    ))
}

/// Class specs built from the planted ground truth: each class sentence is
/// the encoding of its concepts' text prototypes, and the concept embeddings
/// are that text's token rows.
pub fn class_specs_from_truth(
    model: &TrainedModel,
    data: &SyntheticDataset,
) -> Result<Vec<ClassSpec>> {
    let truth = &data.truth;
    (0..data.spec.n_classes)
        .map(|c| {
            let concepts = &truth.class_concepts[c];
            let rows: Vec<Vec<f64>> = concepts
                .iter()
                .map(|&k| truth.text_prototypes.row(k).to_vec())
                .collect();
            let text = model
                .encoder
                .encode_text(format!("class{c}"), &Matrix::from_rows(&rows)?)?;
            let concept_embs: Vec<Vector> = (0..text.num_tokens())
                .map(|i| Vector::new(text.tokens.row(i).to_vec()))
                .collect::<Result<Vec<_>>>()?;
            Ok(ClassSpec::new(format!("class{c}"), text, concept_embs))
        })
        .collect()
}

/// Zero-shot accuracy of a trained model on a held-out split, with class
/// texts built from the planted concept prototypes.
pub fn eval_synthetic(
    model: &TrainedModel,
    heldout: &SyntheticDataset,
    beta: f64,
    k: usize,
) -> Result<f64> {
    let classes = class_specs_from_truth(model, heldout)?;
    let params = model.params(0.0, beta, k);
    let mut hits = 0usize;
    for (i, sample) in heldout.samples.iter().enumerate() {
        let image = model
            .encoder
            .encode_image(format!("e{i:05}"), &sample.image_slots)?;
        let pred = fuse_predict(&image, &classes, &params)?;
        if pred.argmax == sample.class {
            hits += 1;
        }
    }
    Ok(hits as f64 / heldout.samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate_split, generate_synthetic, SyntheticSpec};

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            n_concepts: 2,
            n_classes: 2,
            samples_per_class: 4,
            regions: 2,
            tokens: 2,
            d_img_raw: 5,
            d_txt_raw: 4,
            noise_sigma: 0.3,
            seed: 11,
        }
    }

    #[test]
    fn encoder_shapes_and_linearity() {
        let enc = ToyEncoder::init(5, 4, 3, 0);
        let row = vec![1.0, 0.0, 0.0, 0.0, 2.0];
        let slots = Matrix::from_rows(&[row.clone(), row]).unwrap();
        let img = enc.encode_image("x", &slots).unwrap();
        assert_eq!(img.dim(), 3);
        assert_eq!(img.num_regions(), 2);
        // identical slots: cls equals each encoded row
        for d in 0..3 {
            assert!((img.cls[d] - img.regions.row(0)[d]).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_gradients_match_finite_differences() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let enc = ToyEncoder::init(5, 4, 3, 7);
        let params = AlignmentParams {
            t_g: 1.3,
            b_g: 0.1,
            t_l: 0.9,
            b_l: -0.2,
            alpha: 0.7,
            beta: 0.5,
            k: 1,
        };
        let samples: Vec<(usize, &RawSample)> =
            data.samples.iter().enumerate().take(4).collect();
        let (_, grads) = batch_grad(&enc, &samples, &params).unwrap();

        let eval = |enc: &ToyEncoder| -> f64 {
            let batch: Vec<Triplet> = samples
                .iter()
                .map(|(i, s)| enc.encode_sample(*i, s).unwrap())
                .collect();
            crate::loss::total_loss(&batch, &params).unwrap().total
        };

        let h = 1e-5;
        let mut worst = 0.0f64;
        for (proj, g) in [(0, &grads.image), (1, &grads.text)] {
            let rows = if proj == 0 {
                enc.image_proj.rows()
            } else {
                enc.text_proj.rows()
            };
            for a in 0..rows {
                for j in 0..3 {
                    let mut plus = enc.clone();
                    let mut minus = enc.clone();
                    let (p, m) = if proj == 0 {
                        (&mut plus.image_proj, &mut minus.image_proj)
                    } else {
                        (&mut plus.text_proj, &mut minus.text_proj)
                    };
                    p.row_mut(a)[j] += h;
                    m.row_mut(a)[j] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let analytic = g.row(a)[j];
                    let err =
                        (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-3);
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-4, "worst rel error {worst}");
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let config = TrainConfig {
            learning_rate: 0.0,
            steps: 5,
            hidden_dim: 3,
            seed: 7,
            ..Default::default()
        };
        let (model, trace) = train(&config, &data).unwrap();
        let initial = ToyEncoder::init(5, 4, 3, 7);
        assert_eq!(model.encoder, initial);
        assert_eq!(model.t_g, 10.0);
        assert_eq!(trace.len(), 5);
    }

    #[test]
    fn training_is_deterministic_and_alpha_changes_trajectory() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let config = TrainConfig {
            steps: 30,
            hidden_dim: 4,
            learning_rate: 0.02,
            seed: 3,
            ..Default::default()
        };
        let (m1, t1) = train(&config, &data).unwrap();
        let (m2, t2) = train(&config, &data).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);

        let alpha0 = TrainConfig {
            alpha: 0.0,
            ..config
        };
        let (_, t0) = train(&alpha0, &data).unwrap();
        assert!(t0
            .iter()
            .zip(&t1)
            .any(|(a, b)| (a.total - b.total).abs() > 1e-12));
    }

    #[test]
    fn training_reduces_smoothed_loss() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let config = TrainConfig {
            steps: 200,
            hidden_dim: 6,
            learning_rate: 0.05,
            seed: 1,
            ..Default::default()
        };
        let (_, trace) = train(&config, &data).unwrap();
        let head: f64 = trace[..10].iter().map(|r| r.total).sum::<f64>() / 10.0;
        let tail: f64 = trace[trace.len() - 10..].iter().map(|r| r.total).sum::<f64>() / 10.0;
        assert!(tail <= head, "tail {tail} head {head}");
    }

    #[test]
    fn minibatch_path_runs_deterministically() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let config = TrainConfig {
            steps: 20,
            hidden_dim: 4,
            learning_rate: 0.02,
            batch_size: Some(3),
            seed: 9,
            ..Default::default()
        };
        let (m1, t1) = train(&config, &data).unwrap();
        let (m2, t2) = train(&config, &data).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1, t2);
    }

    #[test]
    fn separable_zero_noise_reaches_full_accuracy() {
        // One concept per class, every slot planted. One sample per class:
        // with zero noise, extra samples of a class are bit-identical, and a
        // batch that presents identical items as negatives of each other
        // poisons the pairwise loss.
        let spec = SyntheticSpec {
            n_concepts: 2,
            n_classes: 2,
            samples_per_class: 1,
            regions: 1,
            tokens: 1,
            d_img_raw: 6,
            d_txt_raw: 5,
            noise_sigma: 0.0,
            seed: 21,
        };
        let train_data = generate_split(&spec, 0).unwrap();
        let heldout = generate_split(&spec, 1).unwrap();
        let config = TrainConfig {
            steps: 400,
            hidden_dim: 8,
            learning_rate: 0.05,
            seed: 2,
            ..Default::default()
        };
        let (model, _) = train(&config, &train_data).unwrap();
        let acc = eval_synthetic(&model, &heldout, 0.5, 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn model_json_round_trip() {
        let data = generate_synthetic(&small_spec()).unwrap();
        let config = TrainConfig {
            steps: 5,
            hidden_dim: 3,
            learning_rate: 0.01,
            seed: 4,
            ..Default::default()
        };
        let (model, _) = train(&config, &data).unwrap();
        let back = TrainedModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(model, back);
    }
}
