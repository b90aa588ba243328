//! Partial-volume image simulation and least-squares centroid fitting.
//!
//! A simulated voxel is the probability-weighted sum of class centroids.
//! Fitting the centroids to an observed image is a K-variable linear least
//! squares problem whose normal equations are accumulated in one pass over
//! the voxels; the voxel-by-class matrix is never materialized.

use crate::classifier::VARIANCE_FLOOR;
use crate::error::{Error, Result};
use crate::phantom::{convolve_separable, gaussian_kernel_1d};
use crate::volume::{LabelImage, ProbMap, ScalarImage};

/// Condition number above which the normal equations are regularized.
pub const MAX_CONDITION: f64 = 1e12;

/// Ridge weight relative to the mean diagonal of the normal matrix.
pub const RIDGE_SCALE: f64 = 1e-8;

/// Class centroid vector of the simulation model.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationParams {
    centroids: Vec<f64>,
}

impl SimulationParams {
    pub fn new(centroids: Vec<f64>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::Invalid("empty centroid vector".into()));
        }
        if centroids.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("non-finite centroid".into()));
        }
        Ok(Self { centroids })
    }

    pub fn num_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }
}

fn check_classes(p: &ProbMap, theta: &SimulationParams) -> Result<()> {
    if p.num_classes() != theta.num_classes() {
        return Err(Error::ClassCount {
            expected: p.num_classes(),
            found: theta.num_classes(),
        });
    }
    Ok(())
}

fn check_dims(p: &ProbMap, img: &ScalarImage) -> Result<()> {
    if p.dims() != img.dims() {
        return Err(Error::Dimension(format!(
            "probability map dims {:?} do not match image dims {:?}",
            p.dims(),
            img.dims()
        )));
    }
    Ok(())
}

/// Noiseless image `y_j = sum_k p_jk c_k`.
pub fn simulate(p: &ProbMap, theta: &SimulationParams) -> Result<ScalarImage> {
    check_classes(p, theta)?;
    let data = p
        .voxels()
        .map(|probs| {
            probs
                .iter()
                .zip(theta.centroids())
                .map(|(w, c)| w * c)
                .sum()
        })
        .collect();
    ScalarImage::new(p.dims().to_vec(), data)
}

/// Normal equations `(P^T P) theta = P^T x` of the centroid fit.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalEquations {
    /// Row-major K x K Gram matrix `P^T P`.
    pub gram: Vec<f64>,
    /// Right-hand side `P^T x`.
    pub rhs: Vec<f64>,
    pub num_classes: usize,
}

impl NormalEquations {
    /// Accumulates both sides sequentially in voxel order.
    pub fn accumulate(p: &ProbMap, img: &ScalarImage) -> Result<Self> {
        check_dims(p, img)?;
        let k = p.num_classes();
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (probs, &x) in p.voxels().zip(img.data()) {
            for a in 0..k {
                let pa = probs[a];
                if pa == 0.0 {
                    continue;
                }
                rhs[a] += pa * x;
                for b in a..k {
                    gram[a * k + b] += pa * probs[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                gram[a * k + b] = gram[b * k + a];
            }
        }
        Ok(Self {
            gram,
            rhs,
            num_classes: k,
        })
    }

    /// Solves the system, falling back to a small ridge when the Gram matrix
    /// is singular or badly conditioned. Returns the solution and whether the
    /// ridge was applied.
    pub fn solve(&self) -> (Vec<f64>, bool) {
        let k = self.num_classes;
        if let Some(chol) = Cholesky::factor(&self.gram, k) {
            if chol.condition_1norm(&self.gram) <= MAX_CONDITION {
                return (chol.solve(&self.rhs), false);
            }
        }
        let trace: f64 = (0..k).map(|i| self.gram[i * k + i]).sum();
        let lambda = RIDGE_SCALE * trace / k as f64;
        let mut ridged = self.gram.clone();
        for i in 0..k {
            ridged[i * k + i] += lambda;
        }
        let chol = Cholesky::factor(&ridged, k).expect("ridge system is positive definite");
        (chol.solve(&self.rhs), true)
    }
}

/// Lower-triangular factor `L` with `A = L L^T`.
struct Cholesky {
    lower: Vec<f64>,
    n: usize,
}

impl Cholesky {
    fn factor(a: &[f64], n: usize) -> Option<Self> {
        let mut lower = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let mut s = a[i * n + j];
                for m in 0..j {
                    s -= lower[i * n + m] * lower[j * n + m];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    lower[i * n + i] = s.sqrt();
                } else {
                    lower[i * n + j] = s / lower[j * n + j];
                }
            }
        }
        Some(Self { lower, n })
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            for m in 0..i {
                y[i] -= l[i * n + m] * y[m];
            }
            y[i] /= l[i * n + i];
        }
        for i in (0..n).rev() {
            for m in i + 1..n {
                y[i] -= l[m * n + i] * y[m];
            }
            y[i] /= l[i * n + i];
        }
        y
    }

    /// `||A||_1 * ||A^-1||_1` with the inverse formed column by column.
    fn condition_1norm(&self, a: &[f64]) -> f64 {
        let n = self.n;
        let col_norm = |m: &dyn Fn(usize, usize) -> f64| {
            (0..n)
                .map(|c| (0..n).map(|r| m(r, c).abs()).sum::<f64>())
                .fold(0.0, f64::max)
        };
        let mut inv = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for c in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[c] = 1.0;
            for (r, v) in self.solve(&e).into_iter().enumerate() {
                inv[r * n + c] = v;
            }
        }
        let cond = col_norm(&|r, c| a[r * n + c]) * col_norm(&|r, c| inv[r * n + c]);
        if cond.is_finite() {
            cond
        } else {
            f64::INFINITY
        }
    }
}

/// Least-squares centroids `argmin_theta ||x - P theta||^2`.
pub fn estimate_centroids(p: &ProbMap, img: &ScalarImage) -> Result<SimulationParams> {
    let normal = NormalEquations::accumulate(p, img)?;
    let k = normal.num_classes;
    if let Some(c) = (0..k).find(|&c| normal.gram[c * k + c] <= 0.0) {
        return Err(Error::EmptyClass(c));
    }
    let (theta, _) = normal.solve();
    SimulationParams::new(theta)
}

/// One-hot encodes `labels` into `num_classes` channels and blurs each
/// channel with the phantom kernel, clamping at the borders.
pub fn soften_labels(labels: &LabelImage, num_classes: usize, sigma: f64) -> Result<ProbMap> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Invalid(format!("blur sigma {sigma} must be >= 0")));
    }
    if let Some((voxel, &label)) = labels
        .data()
        .iter()
        .enumerate()
        .find(|(_, &l)| l as usize >= num_classes)
    {
        return Err(Error::LabelRange {
            voxel,
            label: label as usize,
            classes: num_classes,
        });
    }
    let n = labels.len();
    let kernel = gaussian_kernel_1d(sigma);
    let mut data = vec![0.0; n * num_classes];
    let mut channel = vec![0.0; n];
    for c in 0..num_classes {
        for (v, &l) in channel.iter_mut().zip(labels.data()) {
            *v = if l as usize == c { 1.0 } else { 0.0 };
        }
        convolve_separable(&mut channel, labels.dims(), &kernel);
        for (j, &v) in channel.iter().enumerate() {
            data[j * num_classes + c] = v.clamp(0.0, 1.0);
        }
    }
    ProbMap::new(labels.dims().to_vec(), num_classes, data)
}

/// Per-class probability-weighted variance of `img` around the centroids.
pub fn refit_residual_variance(
    p: &ProbMap,
    img: &ScalarImage,
    theta: &SimulationParams,
) -> Result<Vec<f64>> {
    check_dims(p, img)?;
    check_classes(p, theta)?;
    let k = p.num_classes();
    let mut weight = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for (probs, &x) in p.voxels().zip(img.data()) {
        for c in 0..k {
            let d = x - theta.centroids()[c];
            weight[c] += probs[c];
            sq[c] += probs[c] * d * d;
        }
    }
    if let Some(c) = weight.iter().position(|&w| w <= 0.0) {
        return Err(Error::EmptyClass(c));
    }
    Ok(sq
        .iter()
        .zip(&weight)
        .map(|(s, w)| (s / w).max(VARIANCE_FLOOR))
        .collect())
}
