//! Synthetic K-class phantoms with partial-volume blur and additive noise,
//! plus the Gaussian filtering they share with label softening.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::simulator::soften_labels;
use crate::volume::{LabelImage, ProbMap, ScalarImage};

/// Normalized Gaussian taps `exp(-t^2 / 2 sigma^2)` for `t` in
/// `[-ceil(3 sigma), ceil(3 sigma)]`. `sigma == 0` gives the identity kernel.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Convolves `data` (row-major with extents `dims`) with `kernel` along
/// every axis, clamping indices at the borders.
pub(crate) fn convolve_separable(data: &mut Vec<f64>, dims: &[usize], kernel: &[f64]) {
    if kernel.len() == 1 {
        return;
    }
    let radius = (kernel.len() / 2) as isize;
    let mut line = Vec::new();
    let mut out = vec![0.0; data.len()];
    for axis in 0..dims.len() {
        let n = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        for o in 0..outer {
            for i in 0..stride {
                let base = o * n * stride + i;
                line.clear();
                line.extend((0..n).map(|t| data[base + t * stride]));
                for t in 0..n {
                    let mut acc = 0.0;
                    for (tap, &w) in kernel.iter().enumerate() {
                        let src = (t as isize + tap as isize - radius).clamp(0, n as isize - 1);
                        acc += w * line[src as usize];
                    }
                    out[base + t * stride] = acc;
                }
            }
        }
        std::mem::swap(data, &mut out);
    }
}

/// Separable Gaussian blur with replicate boundary handling.
pub fn blur(img: &ScalarImage, sigma: f64) -> ScalarImage {
    let mut data = img.data().to_vec();
    convolve_separable(&mut data, img.dims(), &gaussian_kernel_1d(sigma));
    ScalarImage::new(img.dims().to_vec(), data).expect("blur keeps values finite")
}

/// Arrangement of the class regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Geometry {
    /// Concentric axis-aligned square (cube) rings of equal width, class 0 outermost.
    #[default]
    NestedSquares,
    /// Concentric circular (spherical) rings of equal width, class 0 outermost.
    NestedDisks,
}

impl std::str::FromStr for Geometry {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested_squares" | "squares" => Ok(Geometry::NestedSquares),
            "nested_disks" | "disks" => Ok(Geometry::NestedDisks),
            other => Err(Error::Invalid(format!("unknown geometry {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub dims: Vec<usize>,
    pub class_means: Vec<f64>,
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub geometry: Geometry,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: vec![128, 128],
            class_means: vec![0.0, 5.0, 10.0],
            blur_sigma: 0.5,
            noise_std: 0.5,
            geometry: Geometry::NestedSquares,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn num_classes(&self) -> usize {
        self.class_means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_means.len() < 2 {
            return Err(Error::Invalid(format!(
                "a phantom needs at least 2 classes, got {}",
                self.class_means.len()
            )));
        }
        if self.class_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::Invalid("class means must be finite".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Invalid(format!("noise_std {} < 0", self.noise_std)));
        }
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::Invalid(format!(
                "blur_sigma {} < 0",
                self.blur_sigma
            )));
        }
        Ok(())
    }
}

/// A generated phantom: noisy image, hard geometry and its partial-volume map.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub image: ScalarImage,
    pub labels: LabelImage,
    pub truth: ProbMap,
}

fn geometry_labels(dims: &[usize], k: usize, geometry: Geometry) -> Result<LabelImage> {
    if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "unsupported phantom dims {dims:?}"
        )));
    }
    let min_dim = *dims.iter().min().expect("non-empty dims");
    let ring = min_dim as f64 / (2 * k) as f64;
    if ring < 1.0 {
        return Err(Error::Geometry(format!(
            "extent {min_dim} is too small for {k} rings (need at least {})",
            2 * k
        )));
    }
    let n: usize = dims.iter().product();
    let mut coords = vec![0usize; dims.len()];
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let label = match geometry {
            Geometry::NestedSquares => {
                let depth = coords
                    .iter()
                    .zip(dims)
                    .map(|(&c, &d)| c.min(d - 1 - c))
                    .min()
                    .expect("non-empty dims");
                ((depth as f64 / ring).floor() as usize).min(k - 1)
            }
            Geometry::NestedDisks => {
                let r = coords
                    .iter()
                    .zip(dims)
                    .map(|(&c, &d)| {
                        let off = c as f64 - (d as f64 - 1.0) / 2.0;
                        off * off
                    })
                    .sum::<f64>()
                    .sqrt();
                (k - 1).saturating_sub((r / ring).floor() as usize)
            }
        };
        data.push(label as u16);
        // row-major increment, last axis fastest
        for axis in (0..dims.len()).rev() {
            coords[axis] += 1;
            if coords[axis] < dims[axis] {
                break;
            }
            coords[axis] = 0;
        }
    }
    LabelImage::new(dims.to_vec(), k, data)
}

/// Builds the phantom described by `spec`.
///
/// The image is the blurred piecewise-constant class composite plus i.i.d.
/// Gaussian noise drawn in raster order from a ChaCha8 stream seeded with
/// `spec.seed`. The returned map is the label geometry softened with the
/// same kernel, i.e. the ground-truth partial-volume fractions.
pub fn make_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let k = spec.num_classes();
    let labels = geometry_labels(&spec.dims, k, spec.geometry)?;
    let composite: Vec<f64> = labels
        .data()
        .iter()
        .map(|&l| spec.class_means[l as usize])
        .collect();
    let mut image = blur(
        &ScalarImage::new(spec.dims.clone(), composite)?,
        spec.blur_sigma,
    )
    .into_data();
    if spec.noise_std > 0.0 {
        add_gaussian_noise(&mut image, spec.noise_std, spec.seed);
    }
    let truth = soften_labels(&labels, k, spec.blur_sigma)?;
    Ok(Phantom {
        image: ScalarImage::new(spec.dims.clone(), image)?,
        labels,
        truth,
    })
}

/// Adds N(0, std^2) samples to `data` in index order.
pub(crate) fn add_gaussian_noise(data: &mut [f64], std: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).expect("finite non-negative std");
    for v in data.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_zero_sigma() {
        assert_eq!(gaussian_kernel_1d(0.0), vec![1.0]);
    }

    #[test]
    fn kernel_unit_sigma() {
        let k = gaussian_kernel_1d(1.0);
        assert_eq!(k.len(), 7);
        let raw: Vec<f64> = (-3..=3)
            .map(|t: i32| (-(t * t) as f64 / 2.0).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        // unnormalized taps sum to 2.506... so the center is ~0.3990
        assert!((total - 2.5066).abs() < 1e-3);
        assert!((k[3] - 1.0 / total).abs() < 1e-15);
        assert!((k[3] - 0.3990).abs() < 1e-4);
    }

    #[test]
    fn blur_constant_is_identity() {
        let img = ScalarImage::filled(vec![9, 7], 3.25).unwrap();
        let out = blur(&img, 1.7);
        for v in out.data() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_impulse_is_outer_product() {
        let n = 21;
        let mut data = vec![0.0; n * n];
        data[10 * n + 10] = 1.0;
        let out = blur(&ScalarImage::new(vec![n, n], data).unwrap(), 1.0);
        let k = gaussian_kernel_1d(1.0);
        for dy in 0..7 {
            for dx in 0..7 {
                let got = out.data()[(7 + dy) * n + 7 + dx];
                assert!((got - k[dy] * k[dx]).abs() < 1e-15);
            }
        }
        assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn blur_preserves_mean_away_from_border() {
        let n = 32;
        let mut data = vec![2.0; n * n];
        for y in 12..20 {
            for x in 10..22 {
                data[y * n + x] = 9.0;
            }
        }
        let img = ScalarImage::new(vec![n, n], data).unwrap();
        let mean = |i: &ScalarImage| i.data().iter().sum::<f64>() / i.len() as f64;
        assert!((mean(&blur(&img, 1.5)) - mean(&img)).abs() < 1e-9);
    }

    #[test]
    fn blur_3d() {
        let img = ScalarImage::filled(vec![5, 6, 7], 1.0).unwrap();
        assert!(blur(&img, 1.0)
            .data()
            .iter()
            .all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn noiseless_unblurred_phantom_is_piecewise_constant() {
        let spec = PhantomSpec {
            noise_std: 0.0,
            blur_sigma: 0.0,
            ..PhantomSpec::default()
        };
        let ph = make_phantom(&spec).unwrap();
        for (&x, &l) in ph.image.data().iter().zip(ph.labels.data()) {
            assert_eq!(x, spec.class_means[l as usize]);
        }
        assert_eq!(ph.truth, ProbMap::one_hot(&ph.labels));
    }

    #[test]
    fn default_phantom_modes() {
        let ph = make_phantom(&PhantomSpec::default()).unwrap();
        assert_eq!(ph.image.dims(), &[128, 128]);
        let counts = ph.labels.class_counts();
        assert!(counts.iter().all(|&c| c > 1000), "{counts:?}");
        // the histogram peaks at the class means
        let mut hist = vec![0usize; 13];
        for &x in ph.image.data() {
            hist[(x + 1.5).floor().clamp(0.0, 12.0) as usize] += 1;
        }
        for mode in [1, 6, 11] {
            assert!(
                hist[mode] > hist[mode - 1] && hist[mode] > hist[mode + 1],
                "{hist:?}"
            );
        }
        for trough in [3, 8] {
            assert!(
                hist[trough] * 10 < hist[trough - 2].min(hist[trough + 3]),
                "{hist:?}"
            );
        }
        // class-interior noise has the requested spread
        let interior: Vec<f64> = ph
            .image
            .data()
            .iter()
            .zip(ph.truth.voxels())
            .filter(|(_, p)| p[2] > 1.0 - 1e-12)
            .map(|(&x, _)| x)
            .collect();
        let m = interior.iter().sum::<f64>() / interior.len() as f64;
        let sd =
            (interior.iter().map(|x| (x - m).powi(2)).sum::<f64>() / interior.len() as f64).sqrt();
        assert!(
            (m - 10.0).abs() < 0.05 && (sd - 0.5).abs() < 0.05,
            "{m} {sd}"
        );
    }

    #[test]
    fn phantom_determinism() {
        let spec = PhantomSpec {
            seed: 17,
            ..PhantomSpec::default()
        };
        let a = make_phantom(&spec).unwrap();
        let b = make_phantom(&spec).unwrap();
        assert_eq!(a, b);
        let c = make_phantom(&PhantomSpec { seed: 18, ..spec }).unwrap();
        assert_ne!(a.image, c.image);
        assert_eq!(a.labels, c.labels);
    }

    #[test]
    fn nested_squares_layout() {
        let labels = geometry_labels(&[6, 6], 3, Geometry::NestedSquares).unwrap();
        #[rustfmt::skip]
        let expected = [
            0, 0, 0, 0, 0, 0,
            0, 1, 1, 1, 1, 0,
            0, 1, 2, 2, 1, 0,
            0, 1, 2, 2, 1, 0,
            0, 1, 1, 1, 1, 0,
            0, 0, 0, 0, 0, 0,
        ];
        assert_eq!(labels.data(), &expected);
    }

    #[test]
    fn nested_disks_layout() {
        let labels = geometry_labels(&[32, 32], 3, Geometry::NestedDisks).unwrap();
        assert_eq!(labels.data()[0], 0);
        assert_eq!(labels.data()[16 * 32 + 16], 2);
        assert!(labels.class_counts().iter().all(|&c| c > 0));
        let cube = geometry_labels(&[12, 12, 12], 2, Geometry::NestedDisks).unwrap();
        assert!(cube.class_counts().iter().all(|&c| c > 0));
    }

    #[test]
    fn too_small_for_rings() {
        let spec = PhantomSpec {
            dims: vec![5, 64],
            ..PhantomSpec::default()
        };
        assert!(matches!(make_phantom(&spec), Err(Error::Geometry(_))));
    }

    #[test]
    fn invalid_spec() {
        let one = PhantomSpec {
            class_means: vec![0.0],
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&one).is_err());
        let neg = PhantomSpec {
            noise_std: -1.0,
            ..PhantomSpec::default()
        };
        assert!(make_phantom(&neg).is_err());
    }

    proptest! {
        #[test]
        fn kernel_normalized_and_symmetric(sigma in 0.0f64..6.0) {
            let k = gaussian_kernel_1d(sigma);
            prop_assert_eq!(k.len() % 2, 1);
            prop_assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..k.len() / 2 {
                prop_assert_eq!(k[i], k[k.len() - 1 - i]);
            }
        }

        #[test]
        fn blur_is_linear(
            (rows, cols, a, b) in (1usize..10, 1usize..10).prop_flat_map(|(r, c)| (
                Just(r), Just(c),
                prop::collection::vec(-10f64..10.0, r * c),
                prop::collection::vec(-10f64..10.0, r * c),
            )),
            sigma in 0.0f64..3.0,
        ) {
            let ia = ScalarImage::new(vec![rows, cols], a.clone()).unwrap();
            let ib = ScalarImage::new(vec![rows, cols], b.clone()).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            let isum = ScalarImage::new(vec![rows, cols], sum).unwrap();
            let lhs = blur(&isum, sigma);
            let (ba, bb) = (blur(&ia, sigma), blur(&ib, sigma));
            for ((l, x), y) in lhs.data().iter().zip(ba.data()).zip(bb.data()) {
                prop_assert!((l - (x + y)).abs() < 1e-12);
            }
        }
    }
}
