//! Image containers shared by every stage of the pipeline.
//!
//! All grids are dense and row-major with the last dimension varying
//! fastest. A [`ProbMap`] stores its class vectors contiguously per voxel,
//! so entry `(j, k)` lives at `j * num_classes + k`.

mod io;

pub use io::{export_pgm, load_probmap, load_volume, save_probmap, save_volume};

use crate::error::{Error, Result};

/// Tolerance used when validating per-voxel probability sums in memory.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Tolerance used when validating probability maps read from disk.
pub const LOAD_SUM_TOLERANCE: f64 = 1e-6;

fn check_dims(dims: &[usize]) -> Result<usize> {
    if !(2..=3).contains(&dims.len()) {
        return Err(Error::Dimension(format!(
            "expected 2-D or 3-D extents, got {}-D",
            dims.len()
        )));
    }
    if dims.contains(&0) {
        return Err(Error::Dimension(format!("zero extent in {dims:?}")));
    }
    Ok(dims.iter().product())
}

/// Real-valued intensity image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl ScalarImage {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if data.len() != n {
            return Err(Error::PayloadMismatch {
                dims,
                payload: data.len(),
            });
        }
        if let Some(j) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite intensity at voxel {j}")));
        }
        Ok(Self { dims, data })
    }

    pub fn filled(dims: Vec<usize>, value: f64) -> Result<Self> {
        let n = check_dims(&dims)?;
        Self::new(dims, vec![value; n])
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Applies `f` to every intensity. Fails if `f` produces a non-finite value.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.dims.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Per-voxel probability vectors over `num_classes` tissue classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    dims: Vec<usize>,
    num_classes: usize,
    data: Vec<f64>,
}

impl ProbMap {
    pub fn new(dims: Vec<usize>, num_classes: usize, data: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(dims, num_classes, data, SUM_TOLERANCE)
    }

    pub(crate) fn with_tolerance(
        dims: Vec<usize>,
        num_classes: usize,
        data: Vec<f64>,
        tol: f64,
    ) -> Result<Self> {
        let n = check_dims(&dims)?;
        if num_classes < 2 {
            return Err(Error::Invalid(format!(
                "probability maps need at least 2 classes, got {num_classes}"
            )));
        }
        if data.len() != n * num_classes {
            return Err(Error::PayloadMismatch {
                dims,
                payload: data.len(),
            });
        }
        for (voxel, probs) in data.chunks_exact(num_classes).enumerate() {
            if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Invalid(format!(
                    "probability outside [0, 1] at voxel {voxel}"
                )));
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(Error::NotNormalized { voxel, sum });
            }
        }
        Ok(Self {
            dims,
            num_classes,
            data,
        })
    }

    /// One-hot encoding of a label image.
    pub fn one_hot(labels: &LabelImage) -> Self {
        let k = labels.num_classes();
        let mut data = vec![0.0; labels.len() * k];
        for (j, &l) in labels.data().iter().enumerate() {
            data[j * k + l as usize] = 1.0;
        }
        Self {
            dims: labels.dims().to_vec(),
            num_classes: k,
            data,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_voxels(&self) -> usize {
        self.data.len() / self.num_classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Class probability vector of voxel `j`.
    pub fn voxel(&self, j: usize) -> &[f64] {
        &self.data[j * self.num_classes..(j + 1) * self.num_classes]
    }

    pub fn voxels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.num_classes)
    }

    /// Total probability mass of each class.
    pub fn class_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.num_classes];
        for probs in self.voxels() {
            for (t, &p) in totals.iter_mut().zip(probs) {
                *t += p;
            }
        }
        totals
    }
}

/// Hard class index per voxel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelImage {
    dims: Vec<usize>,
    num_classes: usize,
    data: Vec<u16>,
}

impl LabelImage {
    pub fn new(dims: Vec<usize>, num_classes: usize, data: Vec<u16>) -> Result<Self> {
        let n = check_dims(&dims)?;
        if num_classes == 0 || num_classes > u16::MAX as usize + 1 {
            return Err(Error::Invalid(format!(
                "unsupported class count {num_classes}"
            )));
        }
        if data.len() != n {
            return Err(Error::PayloadMismatch {
                dims,
                payload: data.len(),
            });
        }
        if let Some((voxel, &label)) = data
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
        Ok(Self {
            dims,
            num_classes,
            data,
        })
    }

    /// Interprets a scalar image holding integral class indices.
    ///
    /// The class count is taken as `max(label) + 1` unless `num_classes` is given.
    pub fn from_scalar(img: &ScalarImage, num_classes: Option<usize>) -> Result<Self> {
        let mut data = Vec::with_capacity(img.len());
        for (j, &v) in img.data().iter().enumerate() {
            if v < 0.0 || v.fract() != 0.0 || v > u16::MAX as f64 {
                return Err(Error::Invalid(format!(
                    "voxel {j} holds {v}, which is not a class index"
                )));
            }
            data.push(v as u16);
        }
        let k = num_classes.unwrap_or_else(|| data.iter().max().map_or(1, |&m| m as usize + 1));
        Self::new(img.dims().to_vec(), k, data)
    }

    pub fn to_scalar(&self) -> ScalarImage {
        ScalarImage {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&l| l as f64).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Voxel count of each class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.data {
            counts[l as usize] += 1;
        }
        counts
    }
}

/// Hard segmentation: index of the most probable class per voxel, lowest
/// index on ties.
pub fn argmax_labels(p: &ProbMap) -> LabelImage {
    let data = p
        .voxels()
        .map(|probs| {
            let mut best = 0;
            for (k, &v) in probs.iter().enumerate().skip(1) {
                if v > probs[best] {
                    best = k;
                }
            }
            best as u16
        })
        .collect();
    LabelImage {
        dims: p.dims().to_vec(),
        num_classes: p.num_classes(),
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(k: usize, rows: &[&[f64]]) -> ProbMap {
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        ProbMap::new(vec![1, rows.len()], k, data).unwrap()
    }

    #[test]
    fn argmax_examples() {
        let p = map(3, &[&[0.2, 0.7, 0.1], &[0.0, 0.0, 1.0]]);
        assert_eq!(argmax_labels(&p).data(), &[1, 2]);
        let tie = map(2, &[&[0.5, 0.5]]);
        assert_eq!(argmax_labels(&tie).data(), &[0]);
    }

    #[test]
    fn rejects_bad_containers() {
        assert!(matches!(
            ScalarImage::new(vec![2, 2], vec![1.0; 3]),
            Err(Error::PayloadMismatch { .. })
        ));
        assert!(ScalarImage::new(vec![2, 2], vec![1.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ScalarImage::new(vec![4], vec![1.0; 4]).is_err());
        assert!(matches!(
            ProbMap::new(vec![1, 1], 2, vec![0.4, 0.4]),
            Err(Error::NotNormalized { voxel: 0, .. })
        ));
        assert!(ProbMap::new(vec![1, 1], 1, vec![1.0]).is_err());
        assert!(matches!(
            LabelImage::new(vec![1, 2], 2, vec![0, 2]),
            Err(Error::LabelRange {
                voxel: 1,
                label: 2,
                ..
            })
        ));
    }

    #[test]
    fn label_scalar_conversion() {
        let img = ScalarImage::new(vec![1, 3], vec![0.0, 2.0, 1.0]).unwrap();
        let labels = LabelImage::from_scalar(&img, None).unwrap();
        assert_eq!(labels.num_classes(), 3);
        assert_eq!(labels.to_scalar(), img);
        let bad = ScalarImage::new(vec![1, 2], vec![0.5, 1.0]).unwrap();
        assert!(LabelImage::from_scalar(&bad, None).is_err());
    }

    fn prob_rows() -> impl Strategy<Value = (usize, Vec<f64>)> {
        (2usize..6, 1usize..20).prop_flat_map(|(k, n)| {
            (
                Just(k),
                prop::collection::vec(0.01f64..1.0, k * n).prop_map(move |raw| {
                    raw.chunks(k)
                        .flat_map(|c| {
                            let s: f64 = c.iter().sum();
                            c.iter().map(move |v| v / s).collect::<Vec<_>>()
                        })
                        .collect()
                }),
            )
        })
    }

    proptest! {
        #[test]
        fn argmax_invariant_under_monotone_rescaling(
            (k, data) in prob_rows(),
            scale in 0.01f64..100.0,
            power in 0.2f64..5.0,
        ) {
            let n = data.len() / k;
            let p = ProbMap::new(vec![1, n], k, data.clone()).unwrap();
            // strictly increasing transform, renormalized per voxel
            let rescaled: Vec<f64> = data
                .chunks(k)
                .flat_map(|c| {
                    let t: Vec<f64> = c.iter().map(|v| scale * v.powf(power)).collect();
                    let s: f64 = t.iter().sum();
                    t.into_iter().map(move |v| v / s)
                })
                .collect();
            let q = ProbMap::with_tolerance(vec![1, n], k, rescaled, 1e-9).unwrap();
            let a = argmax_labels(&p);
            let b = argmax_labels(&q);
            // exact ties can be broken by rounding after the transform
            for (j, (&la, &lb)) in a.data().iter().zip(b.data()).enumerate() {
                if la != lb {
                    let v = p.voxel(j);
                    prop_assert!((v[la as usize] - v[lb as usize]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn argmax_picks_a_maximum_and_lowest_on_ties((k, data) in prob_rows()) {
            let n = data.len() / k;
            let p = ProbMap::new(vec![1, n], k, data).unwrap();
            let labels = argmax_labels(&p);
            for (j, &l) in labels.data().iter().enumerate() {
                let v = p.voxel(j);
                let max = v.iter().cloned().fold(f64::MIN, f64::max);
                prop_assert_eq!(v[l as usize], max);
                prop_assert!(v[..l as usize].iter().all(|&x| x < max));
            }
        }
    }
}
