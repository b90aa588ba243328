//! Contrast sweep: segmentation error against the test center mean for
//! ideal, fixed and adaptive training.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::adapt::{adapt_segment, segment_standard, AdaptConfig, TrainingPair};
use crate::error::{Error, Result};
use crate::metrics::classification_error;
use crate::phantom::{make_phantom, Phantom, PhantomSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
    /// Center mean of the fixed training phantom.
    pub train_mean: f64,
    pub trials: usize,
    /// Class whose mean is swept; the other means come from `phantom`.
    pub varied_class: usize,
    /// Base phantom; its seed offsets every per-trial seed.
    pub phantom: PhantomSpec,
    /// Adaptive loop settings; the seed is offset per trial.
    pub adapt: AdaptConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        let phantom = PhantomSpec::default();
        let adapt = AdaptConfig {
            add_noise_std: phantom.noise_std,
            ..AdaptConfig::default()
        };
        Self {
            lo: 2.0,
            hi: 8.5,
            step: 0.25,
            train_mean: 5.0,
            trials: 5,
            varied_class: 1,
            phantom,
            adapt,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::Invalid(format!(
                "sweep range [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return Err(Error::Invalid(format!(
                "sweep step {} must be positive",
                self.step
            )));
        }
        if self.trials < 1 {
            return Err(Error::Invalid("at least one trial is required".into()));
        }
        if self.varied_class >= self.phantom.num_classes() {
            return Err(Error::Invalid(format!(
                "varied class {} out of range for {} classes",
                self.varied_class,
                self.phantom.num_classes()
            )));
        }
        self.phantom.validate()?;
        self.adapt.validate()
    }

    /// Center means visited, `lo` first. The end point is kept when it lands
    /// on the grid up to rounding.
    pub fn means(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1;
        (0..n).map(|i| self.lo + self.step * i as f64).collect()
    }

    fn phantom_at(&self, mean: f64, seed: u64) -> PhantomSpec {
        let mut spec = self.phantom.clone();
        spec.class_means[self.varied_class] = mean;
        spec.seed = seed;
        spec
    }
}

/// Mean and standard error of one column over the trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Stat {
    pub mean: f64,
    pub std_err: f64,
    pub values: Vec<f64>,
}

impl Stat {
    pub fn from_values(values: Vec<f64>) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std_err = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std_err,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub mean: f64,
    pub ideal: Stat,
    pub fixed: Stat,
    pub adaptive: Stat,
    /// Adaptive iterations used per trial.
    pub iterations: Vec<usize>,
}

fn pair(ph: Phantom) -> Result<TrainingPair> {
    TrainingPair::new(ph.image, ph.truth)
}

fn run_point(spec: &SweepSpec, mean: f64) -> Result<SweepRow> {
    let base = spec.phantom.seed;
    let mut errors = [Vec::new(), Vec::new(), Vec::new()];
    let mut iterations = Vec::new();
    for t in 0..spec.trials as u64 {
        let test = make_phantom(&spec.phantom_at(mean, base + 1000 + t))?;
        let ideal = pair(make_phantom(&spec.phantom_at(mean, base + 2000 + t))?)?;
        let fixed = pair(make_phantom(
            &spec.phantom_at(spec.train_mean, base + 3000 + t),
        )?)?;

        let (_, ideal_labels) = segment_standard(&[ideal], &test.image)?;
        let (_, fixed_labels) = segment_standard(std::slice::from_ref(&fixed), &test.image)?;
        let cfg = AdaptConfig {
            seed: spec.adapt.seed + t,
            ..spec.adapt.clone()
        };
        let adapted = adapt_segment(&[fixed], &test.image, &cfg)?;

        errors[0].push(classification_error(&ideal_labels, &test.labels)?);
        errors[1].push(classification_error(&fixed_labels, &test.labels)?);
        errors[2].push(classification_error(&adapted.labels, &test.labels)?);
        iterations.push(adapted.iterations_used);
    }
    let [ideal, fixed, adaptive] = errors.map(Stat::from_values);
    Ok(SweepRow {
        mean,
        ideal,
        fixed,
        adaptive,
        iterations,
    })
}

/// Runs every sweep point in parallel; rows come back in ascending mean.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    spec.validate()?;
    spec.means()
        .into_par_iter()
        .map(|m| run_point(spec, m))
        .collect()
}

/// Formats `x` with six significant digits, trailing zeros dropped.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let s = format!("{:.5e}", x);
    let (mantissa, exp) = s.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..6).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        return format!("{mantissa}e{exp}");
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// CSV text with header `mean,ideal,fixed,adaptive`, one row per point.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("mean,ideal,fixed,adaptive\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            format_sig6(r.mean),
            format_sig6(r.ideal.mean),
            format_sig6(r.fixed.mean),
            format_sig6(r.adaptive.mean)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_27_points() {
        let m = SweepSpec::default().means();
        assert_eq!(m.len(), 27);
        assert_eq!(m[0], 2.0);
        assert!((m[26] - 8.5).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let ok = SweepSpec::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SweepSpec {
                lo: 3.0,
                hi: 3.0,
                ..ok.clone()
            },
            SweepSpec {
                step: 0.0,
                ..ok.clone()
            },
            SweepSpec {
                trials: 0,
                ..ok.clone()
            },
            SweepSpec {
                varied_class: 3,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(2.25), "2.25");
        assert_eq!(format_sig6(0.123456789), "0.123457");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e6");
        assert_eq!(format_sig6(8.5), "8.5");
        assert_eq!(format_sig6(1e-7), "1e-7");
    }

    #[test]
    fn stat_standard_error() {
        let s = Stat::from_values(vec![1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std_err - (1.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stat::from_values(vec![4.0]).std_err, 0.0);
    }

    #[test]
    fn small_sweep_is_ordered_and_deterministic() {
        let spec = SweepSpec {
            lo: 4.0,
            hi: 6.0,
            step: 1.0,
            trials: 2,
            phantom: PhantomSpec {
                dims: vec![48, 48],
                ..PhantomSpec::default()
            },
            ..SweepSpec::default()
        };
        let a = run_sweep(&spec).unwrap();
        assert_eq!(
            a.iter().map(|r| r.mean).collect::<Vec<_>>(),
            vec![4.0, 5.0, 6.0]
        );
        assert_eq!(a, run_sweep(&spec).unwrap());
        let csv = sweep_csv(&a);
        assert!(csv.starts_with("mean,ideal,fixed,adaptive\n"));
        assert_eq!(csv.lines().count(), 4);
        assert!(!csv.contains('\r'));
    }
}
