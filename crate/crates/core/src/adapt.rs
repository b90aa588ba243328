//! Contrast-adaptive segmentation loop.
//!
//! Each iteration classifies the input, fits simulation centroids to the
//! input under that classification, re-renders every training image from
//! its (fixed) probability map with those centroids, and retrains the
//! classifier on the re-rendered set. The input image and the training maps
//! are never modified.

use crate::classifier::{classify, fit_classifier, GaussianClassParams};
use crate::error::{Error, Result};
use crate::phantom::add_gaussian_noise;
use crate::simulator::{
    estimate_centroids, refit_residual_variance, simulate, soften_labels, SimulationParams,
};
use crate::volume::{argmax_labels, LabelImage, ProbMap, ScalarImage};

/// Where the classifier variances come from after the first iteration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum VarianceMode {
    /// Residuals of the input image around the fitted centroids.
    Residual,
    /// Weighted variances of the simulated training images.
    #[default]
    Simulated,
}

impl std::str::FromStr for VarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual" => Ok(VarianceMode::Residual),
            "simulated" => Ok(VarianceMode::Simulated),
            other => Err(Error::Invalid(format!("unknown variance mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptConfig {
    pub max_iters: usize,
    /// Stop once fewer than this fraction of voxels change label.
    pub convergence_frac: f64,
    /// Blur width used when training labels arrive as hard labels.
    pub soften_sigma: f64,
    pub variance_mode: VarianceMode,
    /// Std of Gaussian noise added to simulated training images (0 = off).
    pub add_noise_std: f64,
    /// Seed for the optional training-image noise.
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            convergence_frac: 1e-4,
            soften_sigma: 1.0,
            variance_mode: VarianceMode::Simulated,
            add_noise_std: 0.0,
            seed: 0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::Invalid("max_iters must be at least 1".into()));
        }
        if !(self.convergence_frac > 0.0 && self.convergence_frac < 1.0) {
            return Err(Error::Invalid(format!(
                "convergence_frac {} must lie in (0, 1)",
                self.convergence_frac
            )));
        }
        if !(self.soften_sigma >= 0.0) || !self.soften_sigma.is_finite() {
            return Err(Error::Invalid("soften_sigma must be >= 0".into()));
        }
        if !(self.add_noise_std >= 0.0) || !self.add_noise_std.is_finite() {
            return Err(Error::Invalid("add_noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

/// A training image with its class probability map.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub image: ScalarImage,
    pub probs: ProbMap,
}

impl TrainingPair {
    pub fn new(image: ScalarImage, probs: ProbMap) -> Result<Self> {
        if image.dims() != probs.dims() {
            return Err(Error::Dimension(format!(
                "training image dims {:?} do not match map dims {:?}",
                image.dims(),
                probs.dims()
            )));
        }
        Ok(Self { image, probs })
    }

    /// Pairs an image with hard labels softened by a Gaussian of width `sigma`.
    pub fn from_labels(image: ScalarImage, labels: &LabelImage, sigma: f64) -> Result<Self> {
        let probs = soften_labels(labels, labels.num_classes(), sigma)?;
        Self::new(image, probs)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Change fraction rose three times in a row; the best iterate is returned.
    Diverging,
    /// A class lost all probability mass mid-loop; the last valid state is returned.
    EmptyClass(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptResult {
    pub probs: ProbMap,
    pub labels: LabelImage,
    pub theta: SimulationParams,
    pub classifier: GaussianClassParams,
    pub iterations_used: usize,
    /// Fraction of voxels whose label changed at each iteration. The first
    /// iteration has no predecessor and records 1.0.
    pub change_fractions: Vec<f64>,
    /// Fitted centroids of every iteration, in order.
    pub theta_history: Vec<SimulationParams>,
    pub converged: bool,
    pub stop_reason: StopReason,
}

fn split_training(training: &[TrainingPair]) -> Result<(Vec<ScalarImage>, Vec<ProbMap>)> {
    if training.is_empty() {
        return Err(Error::Invalid("no training data".into()));
    }
    Ok(training
        .iter()
        .map(|t| (t.image.clone(), t.probs.clone()))
        .unzip())
}

/// Non-adaptive baseline: train on the given pairs, classify once.
pub fn segment_standard(
    training: &[TrainingPair],
    input: &ScalarImage,
) -> Result<(ProbMap, LabelImage)> {
    let (images, probs) = split_training(training)?;
    let params = fit_classifier(&images, &probs)?;
    let p = classify(input, &params);
    let labels = argmax_labels(&p);
    Ok((p, labels))
}

fn changed_fraction(a: &LabelImage, b: &LabelImage) -> f64 {
    let changed = a
        .data()
        .iter()
        .zip(b.data())
        .filter(|(x, y)| x != y)
        .count();
    changed as f64 / a.len() as f64
}

/// Snapshot of one completed iteration.
#[derive(Clone)]
struct Iterate {
    probs: ProbMap,
    labels: LabelImage,
    theta: SimulationParams,
    classifier: GaussianClassParams,
    change: f64,
}

/// Seed for the noise added to training image `pair`. The same realization
/// is reused every iteration so the rendered images depend only on theta.
fn noise_seed(seed: u64, pair: usize) -> u64 {
    seed ^ (pair as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Retrains the classifier on the training maps rendered with `theta`.
fn retrain(
    training: &[TrainingPair],
    theta: &SimulationParams,
    input: &ScalarImage,
    input_probs: &ProbMap,
    cfg: &AdaptConfig,
) -> Result<GaussianClassParams> {
    let mut images = Vec::with_capacity(training.len());
    let mut probs = Vec::with_capacity(training.len());
    for (i, pair) in training.iter().enumerate() {
        let sim = simulate(&pair.probs, theta)?;
        let sim = if cfg.add_noise_std > 0.0 {
            let mut data = sim.into_data();
            add_gaussian_noise(&mut data, cfg.add_noise_std, noise_seed(cfg.seed, i));
            ScalarImage::new(pair.probs.dims().to_vec(), data)?
        } else {
            sim
        };
        images.push(sim);
        probs.push(pair.probs.clone());
    }
    let fitted = fit_classifier(&images, &probs)?;
    match cfg.variance_mode {
        VarianceMode::Simulated => Ok(fitted),
        VarianceMode::Residual => {
            fitted.with_variances(refit_residual_variance(input_probs, input, theta)?)
        }
    }
}

/// Runs the adaptive loop until the labels stabilize.
pub fn adapt_segment(
    training: &[TrainingPair],
    input: &ScalarImage,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    cfg.validate()?;
    let (images, maps) = split_training(training)?;
    let k = maps[0].num_classes();
    let mut classifier = fit_classifier(&images, &maps)?;

    let mut change_fractions = Vec::new();
    let mut theta_history = Vec::new();
    let mut previous: Option<Iterate> = None;
    let mut best: Option<Iterate> = None;
    let mut rising = 0;

    for iter in 1..=cfg.max_iters {
        let probs = classify(input, &classifier);
        let labels = argmax_labels(&probs);
        let change = previous
            .as_ref()
            .map_or(1.0, |p| changed_fraction(&p.labels, &labels));
        change_fractions.push(change);

        let theta = match estimate_centroids(&probs, input) {
            Ok(t) => t,
            Err(Error::EmptyClass(c)) => {
                let theta = previous.as_ref().map_or_else(
                    || SimulationParams::new(classifier.means().to_vec()),
                    |p| Ok(p.theta.clone()),
                )?;
                let state = Iterate {
                    probs,
                    labels,
                    theta,
                    classifier,
                    change,
                };
                return Ok(finish(
                    state,
                    change_fractions,
                    theta_history,
                    StopReason::EmptyClass(c),
                ));
            }
            Err(e) => return Err(e),
        };
        debug_assert_eq!(theta.num_classes(), k);
        theta_history.push(theta.clone());

        let state = Iterate {
            probs,
            labels,
            theta,
            classifier: classifier.clone(),
            change,
        };

        if iter > 1 && change < cfg.convergence_frac {
            return Ok(finish(
                state,
                change_fractions,
                theta_history,
                StopReason::Converged,
            ));
        }

        match &previous {
            Some(prev) if change > prev.change => rising += 1,
            _ => rising = 0,
        }
        if iter > 1 && best.as_ref().is_none_or(|b| change < b.change) {
            best = Some(state.clone());
        }
        if rising >= 3 {
            let chosen = best.take().unwrap_or(state);
            return Ok(finish(
                chosen,
                change_fractions,
                theta_history,
                StopReason::Diverging,
            ));
        }
        if iter == cfg.max_iters {
            return Ok(finish(
                state,
                change_fractions,
                theta_history,
                StopReason::MaxIterations,
            ));
        }

        match retrain(training, &state.theta, input, &state.probs, cfg) {
            Ok(next) => classifier = next,
            Err(Error::EmptyClass(c)) => {
                return Ok(finish(
                    state,
                    change_fractions,
                    theta_history,
                    StopReason::EmptyClass(c),
                ));
            }
            Err(e) => return Err(e),
        }
        previous = Some(state);
    }
    unreachable!("loop returns by max_iters")
}

fn finish(
    state: Iterate,
    change_fractions: Vec<f64>,
    theta_history: Vec<SimulationParams>,
    stop_reason: StopReason,
) -> AdaptResult {
    AdaptResult {
        probs: state.probs,
        labels: state.labels,
        theta: state.theta,
        classifier: state.classifier,
        iterations_used: change_fractions.len(),
        change_fractions,
        theta_history,
        converged: stop_reason == StopReason::Converged,
        stop_reason,
    }
}
