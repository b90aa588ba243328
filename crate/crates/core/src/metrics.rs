//! Segmentation agreement measures.

use crate::error::{Error, Result};
use crate::volume::LabelImage;

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationReport {
    pub classification_error: f64,
    pub dice: Vec<f64>,
    pub class_volumes: Vec<usize>,
}

fn check(a: &LabelImage, b: &LabelImage) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!(
            "label dims {:?} and {:?} differ",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Fraction of voxels whose labels differ.
pub fn classification_error(pred: &LabelImage, truth: &LabelImage) -> Result<f64> {
    check(pred, truth)?;
    let wrong = pred
        .data()
        .iter()
        .zip(truth.data())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / pred.len() as f64)
}

/// Dice overlap of class `k`; 1.0 when neither image contains the class.
pub fn dice(pred: &LabelImage, truth: &LabelImage, k: usize) -> Result<f64> {
    check(pred, truth)?;
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        let (in_a, in_b) = (p as usize == k, t as usize == k);
        a += in_a as usize;
        b += in_b as usize;
        both += (in_a && in_b) as usize;
    }
    if a + b == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Symmetric percent difference of the voxel counts covered by `classes`:
/// `|Va - Vb| / ((Va + Vb) / 2) * 100`.
pub fn volume_consistency(a: &LabelImage, b: &LabelImage, classes: &[usize]) -> Result<f64> {
    check(a, b)?;
    let volume = |img: &LabelImage| {
        img.data()
            .iter()
            .filter(|&&l| classes.contains(&(l as usize)))
            .count() as f64
    };
    let (va, vb) = (volume(a), volume(b));
    if va + vb == 0.0 {
        return Err(Error::ZeroVolume);
    }
    Ok(percent_difference(va, vb))
}

pub(crate) fn percent_difference(va: f64, vb: f64) -> f64 {
    (va - vb).abs() / ((va + vb) / 2.0) * 100.0
}

/// Error, per-class Dice and predicted class volumes for `pred` against
/// `truth`. Classes run over the larger of the two class counts.
pub fn report(pred: &LabelImage, truth: &LabelImage) -> Result<SegmentationReport> {
    let k = pred.num_classes().max(truth.num_classes());
    let classification_error = classification_error(pred, truth)?;
    let dice = (0..k)
        .map(|c| dice(pred, truth, c))
        .collect::<Result<Vec<_>>>()?;
    let mut class_volumes = vec![0; k];
    for &l in pred.data() {
        class_volumes[l as usize] += 1;
    }
    Ok(SegmentationReport {
        classification_error,
        dice,
        class_volumes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(k: usize, data: &[u16]) -> LabelImage {
        LabelImage::new(vec![1, data.len()], k, data.to_vec()).unwrap()
    }

    #[test]
    fn error_examples() {
        let a = labels(2, &[0, 1, 1, 0]);
        assert_eq!(classification_error(&a, &a).unwrap(), 0.0);
        assert_eq!(
            classification_error(&a, &labels(2, &[0, 1, 1, 1])).unwrap(),
            0.25
        );
        assert_eq!(
            classification_error(&a, &labels(2, &[1, 0, 0, 1])).unwrap(),
            1.0
        );
        let other = LabelImage::new(vec![2, 2], 2, vec![0; 4]).unwrap();
        assert!(matches!(
            classification_error(&a, &other),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn dice_examples() {
        let a = labels(2, &[1, 1, 0, 0]);
        assert_eq!(dice(&a, &a, 1).unwrap(), 1.0);
        assert_eq!(dice(&a, &labels(2, &[1, 0, 1, 0]), 1).unwrap(), 0.5);
        assert_eq!(dice(&a, &labels(2, &[0, 0, 1, 1]), 1).unwrap(), 0.0);
        assert_eq!(
            dice(&labels(3, &[0, 0]), &labels(3, &[0, 1]), 2).unwrap(),
            1.0
        );
    }

    #[test]
    fn volume_examples() {
        let mut a = vec![1u16; 110];
        a.extend(vec![0u16; 90]);
        let mut b = vec![1u16; 90];
        b.extend(vec![0u16; 110]);
        let (a, b) = (labels(2, &a), labels(2, &b));
        assert!((volume_consistency(&a, &b, &[1]).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(volume_consistency(&a, &a, &[1]).unwrap(), 0.0);
        assert!(matches!(
            volume_consistency(&labels(3, &[0, 0]), &labels(3, &[0, 0]), &[1, 2]),
            Err(Error::ZeroVolume)
        ));
    }

    #[test]
    fn report_fields() {
        let r = report(&labels(3, &[0, 1, 2, 2]), &labels(3, &[0, 1, 2, 1])).unwrap();
        assert_eq!(r.classification_error, 0.25);
        assert_eq!(r.class_volumes, vec![1, 1, 2]);
        assert_eq!(r.dice[0], 1.0);
    }

    fn pair() -> impl Strategy<Value = (LabelImage, LabelImage)> {
        (2usize..5, 1usize..60).prop_flat_map(|(k, n)| {
            (
                prop::collection::vec(0..k as u16, n),
                prop::collection::vec(0..k as u16, n),
            )
                .prop_map(move |(a, b)| (labels(k, &a), labels(k, &b)))
        })
    }

    proptest! {
        #[test]
        fn metrics_symmetric_and_bounded((a, b) in pair()) {
            let e = classification_error(&a, &b).unwrap();
            prop_assert_eq!(e, classification_error(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&e));
            for k in 0..a.num_classes() {
                let d = dice(&a, &b, k).unwrap();
                prop_assert_eq!(d, dice(&b, &a, k).unwrap());
                prop_assert!((0.0..=1.0).contains(&d));
            }
            let classes = [1usize];
            if let Ok(v) = volume_consistency(&a, &b, &classes) {
                prop_assert_eq!(v, volume_consistency(&b, &a, &classes).unwrap());
            }
        }

        #[test]
        fn zero_error_iff_perfect_dice((a, b) in pair()) {
            let e = classification_error(&a, &b).unwrap();
            let all_one = (0..a.num_classes()).all(|k| dice(&a, &b, k).unwrap() == 1.0);
            prop_assert_eq!(e == 0.0, all_one);
        }
    }
}
