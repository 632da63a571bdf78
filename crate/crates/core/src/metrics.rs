//! Evaluation statistics: AUC, accuracy, bootstrap confidence intervals, and
//! the two-sided paired t-test.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Binary scores with {0, 1} labels.
#[derive(Debug, Clone)]
pub struct ScoredLabels {
    pub scores: Vec<f64>,
    pub labels: Vec<u8>,
}

impl ScoredLabels {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::LengthMismatch {
                left: scores.len(),
                right: labels.len(),
            });
        }
        if scores.is_empty() {
            return Err(Error::EmptyInput);
        }
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::DegenerateData("labels must be 0 or 1".into()));
        }
        Ok(Self { scores, labels })
    }
}

/// AUC via the rank-sum (Mann-Whitney) formulation with 0.5 credit for tied
/// pairs: (concordant + 0.5 * tied) / (n_pos * n_neg), computed in
/// O(n log n) through average ranks over exact-tie groups.
pub fn auc(data: &ScoredLabels) -> Result<f64> {
    let n = data.scores.len();
    let n_pos = data.labels.iter().filter(|&&l| l == 1).count();
    let n_neg = n - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| data.scores[a].total_cmp(&data.scores[b]).then(a.cmp(&b)));

    // average rank within exact-tie groups; ranks are 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && data.scores[order[j]] == data.scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if data.labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }

    let np = n_pos as f64;
    let u = rank_sum_pos - np * (np + 1.0) / 2.0;
    Ok(u / (np * n_neg as f64))
}

/// Macro mean of one-vs-rest AUCs: column c of `scores` against the indicator
/// of label c. Classes absent from `labels` are skipped; at least two must be
/// present.
pub fn macro_auc(scores: &Matrix, labels: &[usize]) -> Result<f64> {
    if scores.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            left: scores.rows(),
            right: labels.len(),
        });
    }
    let n_classes = scores.cols();
    let mut per_class = Vec::new();
    for c in 0..n_classes {
        let col: Vec<f64> = (0..scores.rows()).map(|i| scores.row(i)[c]).collect();
        let ind: Vec<u8> = labels.iter().map(|&l| (l == c) as u8).collect();
        if ind.iter().all(|&x| x == 0) || ind.iter().all(|&x| x == 1) {
            continue;
        }
        per_class.push(auc(&ScoredLabels::new(col, ind)?)?);
    }
    if per_class.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
}

/// Exact fraction of positions where prediction equals label.
pub fn accuracy<T: PartialEq>(predictions: &[T], labels: &[T]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiEstimate {
    pub lo: f64,
    pub hi: f64,
    /// Resamples abandoned after 100 degenerate redraws.
    pub skipped: usize,
}

/// Percentile bootstrap (2.5 / 97.5) over item resampling with replacement.
///
/// `eval` receives resampled item indices and returns `None` when the
/// resample is degenerate for the metric (e.g. one label class); such
/// resamples are redrawn up to 100 times, then dropped and counted.
/// Per-resample RNG streams make the result independent of evaluation order.
pub fn bootstrap_ci<F>(n_items: usize, n_resamples: usize, seed: u64, eval: F) -> Result<CiEstimate>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n_items == 0 {
        return Err(Error::EmptyInput);
    }
    if n_resamples < 100 {
        return Err(Error::TooFewItems {
            needed: 100,
            got: n_resamples,
        });
    }

    let results: Vec<Option<f64>> = (0..n_resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64 + 1);
            let mut idx = vec![0usize; n_items];
            for _ in 0..100 {
                for slot in idx.iter_mut() {
                    *slot = rng.random_range(0..n_items);
                }
                if let Some(v) = eval(&idx) {
                    return Some(v);
                }
            }
            None
        })
        .collect();

    let mut stats: Vec<f64> = results.iter().filter_map(|r| *r).collect();
    let skipped = n_resamples - stats.len();
    if stats.is_empty() {
        return Err(Error::DegenerateData(
            "all bootstrap resamples were degenerate".into(),
        ));
    }
    stats.sort_by(f64::total_cmp);
    Ok(CiEstimate {
        lo: percentile(&stats, 0.025),
        hi: percentile(&stats, 0.975),
        skipped,
    })
}

// Linear interpolation between order statistics of a sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Two-sided paired t-test. Returns (t statistic, p value).
///
/// t = mean(d) / (sd(d) / sqrt(n)) with the n-1 sample standard deviation;
/// p = I_{nu/(nu+t^2)}(nu/2, 1/2) with nu = n-1 degrees of freedom.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewItems { needed: 2, got: n });
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    let nu = (n - 1) as f64;
    let p = incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
    Ok((t, p.clamp(0.0, 1.0)))
}

// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction
// (absolute error well below 1e-10 for the arguments used here).
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front =
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x) / b
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

// Lanczos approximation, g = 7, n = 9.
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection formula
        return std::f64::consts::PI.ln()
            - (std::f64::consts::PI * x).sin().ln()
            - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
