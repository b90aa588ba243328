//! Supervised single-channel Gaussian classifier.
//!
//! Each tissue class is a normal distribution over intensity. Training takes
//! probability-weighted moments of the training images; classification
//! returns class posteriors under uniform priors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{ProbMap, ScalarImage};

/// Lower bound applied to every fitted variance.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-class intensity mean and variance.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianClassParams {
    means: Vec<f64>,
    variances: Vec<f64>,
}

impl GaussianClassParams {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.len() < 2 {
            return Err(Error::Invalid(format!(
                "classifier needs at least 2 classes, got {}",
                means.len()
            )));
        }
        if means.len() != variances.len() {
            return Err(Error::ClassCount {
                expected: means.len(),
                found: variances.len(),
            });
        }
        if means.iter().chain(&variances).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite classifier parameter".into()));
        }
        if let Some(k) = variances.iter().position(|&v| v < VARIANCE_FLOOR) {
            return Err(Error::Invalid(format!(
                "variance of class {k} is below the floor {VARIANCE_FLOOR}"
            )));
        }
        Ok(Self { means, variances })
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    /// Same means, different variances.
    pub fn with_variances(&self, variances: Vec<f64>) -> Result<Self> {
        Self::new(self.means.clone(), variances)
    }
}

/// Weighted zeroth, first and second moments per class.
#[derive(Clone, Debug)]
struct ClassMoments {
    weight: Vec<f64>,
    sum: Vec<f64>,
}

fn check_pair(img: &ScalarImage, p: &ProbMap) -> Result<()> {
    if img.dims() != p.dims() {
        return Err(Error::Dimension(format!(
            "image dims {:?} do not match probability map dims {:?}",
            img.dims(),
            p.dims()
        )));
    }
    Ok(())
}

/// Fits per-class means and population variances from training pairs,
/// weighting every voxel by its class probability.
pub fn fit_classifier(images: &[ScalarImage], probs: &[ProbMap]) -> Result<GaussianClassParams> {
    if images.is_empty() || images.len() != probs.len() {
        return Err(Error::Invalid(format!(
            "need matching non-empty training lists, got {} images and {} maps",
            images.len(),
            probs.len()
        )));
    }
    let k = probs[0].num_classes();
    for (img, p) in images.iter().zip(probs) {
        check_pair(img, p)?;
        if p.num_classes() != k {
            return Err(Error::ClassCount {
                expected: k,
                found: p.num_classes(),
            });
        }
    }

    let mut m = ClassMoments {
        weight: vec![0.0; k],
        sum: vec![0.0; k],
    };
    for (img, p) in images.iter().zip(probs) {
        for (&x, w) in img.data().iter().zip(p.voxels()) {
            for (c, &wc) in w.iter().enumerate() {
                m.weight[c] += wc;
                m.sum[c] += wc * x;
            }
        }
    }
    if let Some(c) = m.weight.iter().position(|&w| w <= 0.0) {
        return Err(Error::EmptyClass(c));
    }
    let means: Vec<f64> = m.sum.iter().zip(&m.weight).map(|(s, w)| s / w).collect();

    // second pass around the means for a numerically stable variance
    let mut sq = vec![0.0; k];
    for (img, p) in images.iter().zip(probs) {
        for (&x, w) in img.data().iter().zip(p.voxels()) {
            for c in 0..k {
                let d = x - means[c];
                sq[c] += w[c] * d * d;
            }
        }
    }
    let variances = sq
        .iter()
        .zip(&m.weight)
        .map(|(s, w)| (s / w).max(VARIANCE_FLOOR))
        .collect();
    GaussianClassParams::new(means, variances)
}

/// Log-likelihood of `x` under class `k`, dropping the shared `-ln(2*pi)/2`.
#[inline]
fn log_likelihood(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (d * d / var + var.ln())
}

/// Posterior of one voxel under uniform priors. Computed relative to the
/// most likely class, so the normalizer never underflows; when every other
/// likelihood vanishes the best class receives probability one.
fn posterior(x: f64, params: &GaussianClassParams, out: &mut [f64]) {
    let mut best = f64::NEG_INFINITY;
    for ((o, &mu), &var) in out.iter_mut().zip(&params.means).zip(&params.variances) {
        *o = log_likelihood(x, mu, var);
        best = best.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - best).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Per-voxel class posteriors of `img`.
pub fn classify(img: &ScalarImage, params: &GaussianClassParams) -> ProbMap {
    let k = params.num_classes();
    let mut data = vec![0.0; img.len() * k];
    data.par_chunks_mut(k)
        .zip(img.data().par_iter())
        .for_each(|(out, &x)| posterior(x, params, out));
    ProbMap::new(img.dims().to_vec(), k, data).expect("posteriors are normalized")
}
