//! Uncertainty-aware IoU: confidence thresholding, per-class tallies,
//! scores and threshold curves.

use std::io::Write;
use std::ops::{Add, AddAssign};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{argmax_with_confidence, ClassCatalog, HardLabelMap, InvalidMask, SoftPredictionMap};

/// Default number of thresholds in a curve.
pub const DEFAULT_GRID_SIZE: usize = 101;

/// Pixel counts for one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct ClassTally {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Invalid prediction on a pixel annotated invalid.
    pub ti: u64,
    /// Invalid prediction on a pixel annotated valid.
    pub fi: u64,
}

impl ClassTally {
    /// `(tp + ti) / (tp + ti + fp + fn + fi)`, `None` when nothing was
    /// counted.
    pub fn uiou(&self) -> Option<f64> {
        let den = self.tp + self.ti + self.fp + self.fn_ + self.fi;
        (den > 0).then(|| (self.tp + self.ti) as f64 / den as f64)
    }
}

impl AddAssign for ClassTally {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.ti += o.ti;
        self.fi += o.fi;
    }
}

/// Per-class tallies. Merging is componentwise addition.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TallyTable {
    classes: Vec<ClassTally>,
}

impl TallyTable {
    pub fn zeros(num_classes: usize) -> Self {
        Self {
            classes: vec![ClassTally::default(); num_classes],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &ClassTally {
        &self.classes[c]
    }

    pub fn classes(&self) -> &[ClassTally] {
        &self.classes
    }

    /// Panics if the tables have different class counts.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.classes.len(), other.classes.len(), "merging tallies of different catalogs");
        for (a, b) in self.classes.iter_mut().zip(&other.classes) {
            *a += *b;
        }
    }

    fn record(&mut self, gt: u8, pred: u8, invalid_gt: bool, catalog: &ClassCatalog) {
        let c = catalog.num_classes();
        let h = gt as usize;
        if h >= c {
            return;
        }
        if pred == catalog.invalid_code() {
            if invalid_gt {
                self.classes[h].ti += 1;
            } else {
                self.classes[h].fi += 1;
            }
        } else if pred == gt {
            self.classes[h].tp += 1;
        } else {
            self.classes[h].fn_ += 1;
            if (pred as usize) < c {
                self.classes[pred as usize].fp += 1;
            }
        }
    }
}

impl Add for TallyTable {
    type Output = Self;

    fn add(mut self, rhs: Self) -> Self {
        self.merge(&rhs);
        self
    }
}

/// Per-class scores and their mean over the classes that occur.
#[derive(Clone, Debug, PartialEq)]
pub struct UiouScore {
    /// `None` for classes absent from both ground truth and prediction.
    pub per_class: Vec<Option<f64>>,
    pub mean: Option<f64>,
}

pub fn uiou_score(t: &TallyTable) -> UiouScore {
    let per_class: Vec<Option<f64>> = t.classes.iter().map(ClassTally::uiou).collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64);
    UiouScore { per_class, mean }
}

fn check_theta(theta: f64, catalog: &ClassCatalog) -> Result<()> {
    let lo = catalog.min_theta();
    if !(theta >= lo - 1e-12 && theta <= 1.0) {
        return Err(Error::ThetaOutOfRange(theta));
    }
    Ok(())
}

fn invalidate(labels: &[u8], confidence: &[f64], theta: f64, invalid: u8) -> Vec<u8> {
    labels
        .iter()
        .zip(confidence)
        .map(|(&l, &s)| if s >= theta { l } else { invalid })
        .collect()
}

/// Argmax labels, replaced by the invalid code wherever the winning
/// probability is below `theta`.
pub fn threshold_to_hard(s: &SoftPredictionMap, theta: f64, catalog: &ClassCatalog) -> Result<HardLabelMap> {
    if s.channels() != catalog.num_classes() {
        return Err(Error::ChannelMismatch {
            expected: catalog.num_classes(),
            found: s.channels(),
        });
    }
    check_theta(theta, catalog)?;
    let (labels, conf) = argmax_with_confidence(s);
    Ok(HardLabelMap::from_labels(
        s.height(),
        s.width(),
        invalidate(labels.labels(), conf.values(), theta, catalog.invalid_code()),
    ))
}

fn tally_labels(pred: &[u8], gt: &[u8], invalid: &[bool], catalog: &ClassCatalog) -> TallyTable {
    let mut t = TallyTable::zeros(catalog.num_classes());
    for ((&p, &h), &j) in pred.iter().zip(gt).zip(invalid) {
        if h == catalog.ignore_code() {
            continue;
        }
        t.record(h, p, j, catalog);
    }
    t
}

/// Counts the five pixel sets per class. Ground-truth pixels that carry no
/// class (ignore or invalid code) are skipped.
pub fn tally(
    pred: &HardLabelMap,
    gt: &HardLabelMap,
    invalid_gt: &InvalidMask,
    catalog: &ClassCatalog,
) -> Result<TallyTable> {
    if pred.dims() != gt.dims() {
        return Err(Error::dims(pred.dims(), gt.dims()));
    }
    if invalid_gt.dims() != gt.dims() {
        return Err(Error::dims(invalid_gt.dims(), gt.dims()));
    }
    Ok(tally_labels(pred.labels(), gt.labels(), invalid_gt.mask(), catalog))
}

/// `n` evenly spaced thresholds from `1/C` to 1 inclusive.
pub fn default_theta_grid(num_classes: usize, n: usize) -> Vec<f64> {
    let lo = 1.0 / num_classes as f64;
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    1.0
                } else {
                    lo + (1.0 - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub theta: f64,
    pub tally: TallyTable,
    pub score: UiouScore,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UiouCurve {
    pub class_names: Vec<String>,
    pub points: Vec<CurvePoint>,
}

/// Formats with `digits` significant digits, without exponent for ordinary
/// magnitudes.
fn fmt_sig(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if (-5..15).contains(&exp) {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        format!("{v:.decimals$}")
    } else {
        format!("{v:.prec$e}", prec = digits - 1)
    }
}

impl UiouCurve {
    /// Threshold with the highest mean score; ties go to the lowest threshold.
    pub fn best(&self) -> Option<(f64, f64)> {
        self.points
            .iter()
            .filter_map(|p| Some((p.theta, p.score.mean?)))
            .fold(None, |best: Option<(f64, f64)>, (t, m)| match best {
                Some((_, bm)) if bm >= m => best,
                _ => Some((t, m)),
            })
    }

    /// CSV with header `theta,mean_uiou,<class names>`; classes that do not
    /// occur leave their field empty.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["theta".to_string(), "mean_uiou".to_string()];
        header.extend(self.class_names.iter().cloned());
        w.write_record(&header)?;
        for p in &self.points {
            let mut row = vec![fmt_sig(p.theta, 9)];
            row.push(p.score.mean.map(|m| fmt_sig(m, 9)).unwrap_or_default());
            row.extend(p.score.per_class.iter().map(|v| v.map(|v| fmt_sig(v, 9)).unwrap_or_default()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn check_aligned(s_maps: &[SoftPredictionMap], gts: &[HardLabelMap], masks: &[InvalidMask]) -> Result<()> {
    if s_maps.len() != gts.len() || gts.len() != masks.len() {
        return Err(Error::InvalidValue(format!(
            "{} predictions, {} ground truths, {} masks",
            s_maps.len(),
            gts.len(),
            masks.len()
        )));
    }
    for ((s, g), m) in s_maps.iter().zip(gts).zip(masks) {
        if s.dims() != g.dims() {
            return Err(Error::dims(s.dims(), g.dims()));
        }
        if m.dims() != g.dims() {
            return Err(Error::dims(m.dims(), g.dims()));
        }
    }
    Ok(())
}

/// Scores a corpus at every threshold in `thetas`, which must increase
/// strictly and start at `1/C`; the first point is then ordinary mean IoU.
pub fn uiou_curve(
    s_maps: &[SoftPredictionMap],
    gts: &[HardLabelMap],
    masks: &[InvalidMask],
    thetas: &[f64],
    catalog: &ClassCatalog,
) -> Result<UiouCurve> {
    check_aligned(s_maps, gts, masks)?;
    let first = *thetas.first().ok_or_else(|| Error::InvalidValue("empty threshold grid".into()))?;
    if (first - catalog.min_theta()).abs() > 1e-12 {
        return Err(Error::InvalidValue(format!("threshold grid starts at {first}, not 1/C")));
    }
    for &t in thetas {
        check_theta(t, catalog)?;
    }
    if thetas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidValue("threshold grid is not strictly increasing".into()));
    }
    let mut hard = Vec::with_capacity(s_maps.len());
    for s in s_maps {
        if s.channels() != catalog.num_classes() {
            return Err(Error::ChannelMismatch {
                expected: catalog.num_classes(),
                found: s.channels(),
            });
        }
        hard.push(argmax_with_confidence(s));
    }
    let points = thetas
        .par_iter()
        .map(|&theta| {
            let tally = hard
                .iter()
                .zip(gts)
                .zip(masks)
                .map(|(((labels, conf), gt), mask)| {
                    let pred = invalidate(labels.labels(), conf.values(), theta, catalog.invalid_code());
                    tally_labels(&pred, gt.labels(), mask.mask(), catalog)
                })
                .fold(TallyTable::zeros(catalog.num_classes()), Add::add);
            let score = uiou_score(&tally);
            CurvePoint { theta, tally, score }
        })
        .collect();
    Ok(UiouCurve {
        class_names: catalog.names().to_vec(),
        points,
    })
}

/// Checks whether confidence separates invalid from valid pixels. Returns
/// `(max confidence on invalid pixels, min confidence on valid pixels)` when
/// the first is strictly below the second. An empty side contributes `1/C`
/// or 1 respectively.
pub fn check_separation(s_maps: &[SoftPredictionMap], masks: &[InvalidMask]) -> Option<(f64, f64)> {
    let mut hi_invalid = f64::NEG_INFINITY;
    let mut lo_valid = f64::INFINITY;
    let mut floor = f64::INFINITY;
    for (s, m) in s_maps.iter().zip(masks) {
        floor = floor.min(1.0 / s.channels() as f64);
        let (_, conf) = argmax_with_confidence(s);
        for (&c, &j) in conf.values().iter().zip(m.mask()) {
            if j {
                hi_invalid = hi_invalid.max(c);
            } else {
                lo_valid = lo_valid.min(c);
            }
        }
    }
    if !floor.is_finite() {
        return None;
    }
    let theta1 = if hi_invalid.is_finite() { hi_invalid } else { floor };
    let theta2 = if lo_valid.is_finite() { lo_valid } else { 1.0 };
    (theta1 < theta2).then_some((theta1, theta2))
}

/// A threshold that invalidates every pixel at or below `theta1` and keeps
/// every pixel at or above `theta2`. Because thresholding keeps pixels whose
/// confidence equals the threshold, `theta1` itself would keep the most
/// confident invalid pixel; the midpoint satisfies the same separation.
pub fn separating_threshold(theta1: f64, theta2: f64) -> f64 {
    0.5 * (theta1 + theta2)
}
