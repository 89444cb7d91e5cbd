//! Confidence-adaptive fusion of the dark prediction with the aligned daytime
//! prediction.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{argmax, ClassCatalog, SoftPredictionMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionParams {
    /// Weight on the daytime prediction where the two views disagree about a
    /// dynamic object.
    pub alpha_low: f64,
    pub alpha_high: f64,
    /// Probability at or below which a class counts as absent in the other
    /// view.
    pub eta: f64,
}

impl FusionParams {
    pub fn new(alpha_low: f64, alpha_high: f64, eta: f64) -> Result<Self> {
        if !(alpha_low > 0.0 && alpha_low <= alpha_high && alpha_high <= 1.0) {
            return Err(Error::InvalidValue(format!(
                "need 0 < alpha_low <= alpha_high <= 1, got {alpha_low}, {alpha_high}"
            )));
        }
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::InvalidValue(format!("eta {eta} outside [0, 1]")));
        }
        Ok(Self {
            alpha_low,
            alpha_high,
            eta,
        })
    }
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            alpha_low: 0.3,
            alpha_high: 0.6,
            eta: 0.2,
        }
    }
}

/// Per-pixel weight on the aligned daytime prediction. The low weight applies
/// when either view's top class is dynamic and the other view gives that
/// class at most `eta`.
pub fn compute_alpha(
    s_dark: &SoftPredictionMap,
    s_day_aligned: &SoftPredictionMap,
    catalog: &ClassCatalog,
    params: &FusionParams,
) -> Result<Vec<f64>> {
    s_dark.ensure_same_dims(s_day_aligned)?;
    Ok(s_dark
        .data()
        .par_chunks(s_dark.channels())
        .zip(s_day_aligned.data().par_chunks(s_day_aligned.channels()))
        .map(|(dark, day)| {
            let (c_day, _) = argmax(day);
            let (c_dark, _) = argmax(dark);
            let day_object_missing = catalog.is_dynamic(c_day) && dark[c_day] <= params.eta;
            let dark_object_missing = catalog.is_dynamic(c_dark) && day[c_dark] <= params.eta;
            if day_object_missing || dark_object_missing {
                params.alpha_low
            } else {
                params.alpha_high
            }
        })
        .collect())
}

/// Blends the two predictions per pixel, weighting each by its own maximum
/// probability and the daytime one additionally by `alpha`.
pub fn fuse(s_dark: &SoftPredictionMap, s_day_aligned: &SoftPredictionMap, alpha: &[f64]) -> Result<SoftPredictionMap> {
    s_dark.ensure_same_dims(s_day_aligned)?;
    if alpha.len() != s_dark.len() {
        return Err(Error::InvalidValue(format!(
            "{} alpha values for {} pixels",
            alpha.len(),
            s_dark.len()
        )));
    }
    let c = s_dark.channels();
    let mut out = vec![0.0; s_dark.data().len()];
    out.par_chunks_mut(c)
        .zip(s_dark.data().par_chunks(c))
        .zip(s_day_aligned.data().par_chunks(c))
        .zip(alpha.par_iter())
        .for_each(|(((o, dark), day), &a)| {
            let f_dark = argmax(dark).1;
            let f_day = a * argmax(day).1;
            let denom = f_dark + f_day;
            debug_assert!(denom > 0.0);
            for ((o, &x), &y) in o.iter_mut().zip(dark).zip(day) {
                *o = (f_dark * x + f_day * y) / denom;
            }
        });
    Ok(SoftPredictionMap::from_normalized(s_dark.height(), s_dark.width(), c, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: &[f64]) -> SoftPredictionMap {
        SoftPredictionMap::new(1, 1, v.len(), v.to_vec()).unwrap()
    }

    fn with(entries: &[(usize, f64)]) -> SoftPredictionMap {
        let mut v = vec![0.0; 19];
        for &(i, p) in entries {
            v[i] = p;
        }
        single(&v)
    }

    #[test]
    fn alpha_branches() {
        let cat = ClassCatalog::cityscapes();
        let p = FusionParams::default();
        let (road, car) = (0, 13);
        // Day sees a car that the dark view barely supports.
        let a = compute_alpha(&with(&[(road, 0.9), (car, 0.1)]), &with(&[(car, 0.8), (road, 0.2)]), &cat, &p).unwrap();
        assert_eq!(a, vec![0.3]);
        let a = compute_alpha(&with(&[(road, 1.0)]), &with(&[(road, 1.0)]), &cat, &p).unwrap();
        assert_eq!(a, vec![0.6]);
        let a = compute_alpha(&with(&[(road, 0.5), (car, 0.5)]), &with(&[(car, 0.8), (road, 0.2)]), &cat, &p).unwrap();
        assert_eq!(a, vec![0.6]);
    }

    #[test]
    fn weights_follow_confidences() {
        let mut uniform = vec![1.0 / 19.0; 19];
        uniform[0] = 1.0 - 18.0 / 19.0;
        let out = fuse(&with(&[(1, 1.0)]), &single(&uniform), &[0.6]).unwrap();
        let w_dark = 1.0 / (1.0 + 0.6 / 19.0);
        assert!((out.pixel(0)[1] - (w_dark + (1.0 - w_dark) / 19.0)).abs() < 1e-12);

        let dark = single(&[0.8, 0.2]);
        let day = single(&[0.5, 0.5]);
        let out = fuse(&dark, &day, &[0.6]).unwrap();
        let expect = (0.8 * 0.8 + 0.3 * 0.5) / 1.1;
        assert!((out.pixel(0)[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn parameter_ranges() {
        assert!(FusionParams::new(0.7, 0.6, 0.2).is_err());
        assert!(FusionParams::new(0.0, 0.6, 0.2).is_err());
        assert!(FusionParams::new(0.3, 0.6, 1.5).is_err());
        assert!(FusionParams::new(0.3, 0.6, 0.2).is_ok());
    }
}
