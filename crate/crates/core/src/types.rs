//! Shared data model: class catalog, soft and hard prediction maps, masks,
//! depth and camera geometry.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Accepted deviation of a decoded pixel distribution from unit sum.
pub const LOAD_SUM_TOLERANCE: f64 = 1e-3;

/// Maximum depth produced by the depth network; sky pixels are clamped to it.
pub const DEFAULT_MAX_DEPTH: f64 = 540.0;

const CITYSCAPES_CLASSES: [&str; 19] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// The set of semantic classes plus the reserved label codes.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassCatalog {
    names: Vec<String>,
    dynamic: Vec<bool>,
    invalid_code: u8,
    ignore_code: u8,
}

impl ClassCatalog {
    pub fn new(
        names: Vec<String>,
        dynamic_classes: &[usize],
        invalid_code: u8,
        ignore_code: u8,
    ) -> Result<Self> {
        let c = names.len();
        if c == 0 || c > 254 {
            return Err(Error::InvalidValue(format!("class count {c} not in 1..=254")));
        }
        if invalid_code == ignore_code {
            return Err(Error::InvalidValue(
                "invalid and ignore codes must differ".into(),
            ));
        }
        if (invalid_code as usize) < c || (ignore_code as usize) < c {
            return Err(Error::InvalidValue(
                "reserved codes collide with class indices".into(),
            ));
        }
        let mut dynamic = vec![false; c];
        for &d in dynamic_classes {
            if d >= c {
                return Err(Error::InvalidValue(format!("dynamic class {d} out of range")));
            }
            dynamic[d] = true;
        }
        Ok(Self {
            names,
            dynamic,
            invalid_code,
            ignore_code,
        })
    }

    /// The 19 Cityscapes evaluation classes. Movable classes (person through
    /// bicycle) are dynamic; invalid is 19 and ignore is 255.
    pub fn cityscapes() -> Self {
        Self::new(
            CITYSCAPES_CLASSES.iter().map(|s| s.to_string()).collect(),
            &[11, 12, 13, 14, 15, 16, 17, 18],
            19,
            255,
        )
        .expect("static catalog is valid")
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn invalid_code(&self) -> u8 {
        self.invalid_code
    }

    pub fn ignore_code(&self) -> u8 {
        self.ignore_code
    }

    pub fn is_dynamic(&self, class: usize) -> bool {
        self.dynamic.get(class).copied().unwrap_or(false)
    }

    pub fn dynamic_classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.dynamic
            .iter()
            .enumerate()
            .filter_map(|(i, &d)| d.then_some(i))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Lowest admissible confidence threshold, `1/C`.
    pub fn min_theta(&self) -> f64 {
        1.0 / self.num_classes() as f64
    }

    pub fn is_allowed_label(&self, label: u8) -> bool {
        (label as usize) < self.num_classes()
            || label == self.invalid_code
            || label == self.ignore_code
    }
}

impl Default for ClassCatalog {
    fn default() -> Self {
        Self::cityscapes()
    }
}

/// Undecoded soft map as read from disk: `f32` values, row-major, channel-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSoftMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Per-pixel probability distribution over the catalog classes.
#[derive(Clone, Debug, PartialEq)]
pub struct SoftPredictionMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl SoftPredictionMap {
    /// Validates every pixel and renormalizes sums that are within
    /// [`LOAD_SUM_TOLERANCE`] of one.
    pub fn new(height: usize, width: usize, channels: usize, mut data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidValue("soft map needs at least one channel".into()));
        }
        if data.len() != height * width * channels {
            return Err(Error::InvalidValue(format!(
                "buffer holds {} values, header says {}x{}x{}",
                data.len(),
                height,
                width,
                channels
            )));
        }
        for (index, px) in data.chunks_exact_mut(channels).enumerate() {
            let mut sum = 0.0;
            for &v in px.iter() {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::NotADistribution {
                        index,
                        reason: format!("entry {v}"),
                    });
                }
                sum += v;
            }
            if (sum - 1.0).abs() > LOAD_SUM_TOLERANCE {
                return Err(Error::NotADistribution {
                    index,
                    reason: format!("sum {sum}"),
                });
            }
            if (sum - 1.0).abs() > 1e-12 {
                px.iter_mut().for_each(|v| *v /= sum);
            }
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Caller guarantees every pixel is already a distribution.
    pub(crate) fn from_normalized(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        Self {
            height,
            width,
            channels,
            data,
        }
    }

    /// Every pixel set to the same distribution.
    pub fn constant(height: usize, width: usize, distribution: &[f64]) -> Result<Self> {
        let data = distribution
            .iter()
            .copied()
            .cycle()
            .take(height * width * distribution.len())
            .collect();
        Self::new(height, width, distribution.len(), data)
    }

    /// One-hot map from class labels; labels must be `< channels`.
    pub fn one_hot(height: usize, width: usize, channels: usize, labels: &[u8]) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidValue("label count does not match dimensions".into()));
        }
        let mut data = vec![0.0; height * width * channels];
        for (i, &l) in labels.iter().enumerate() {
            if l as usize >= channels {
                return Err(Error::InvalidValue(format!("label {l} has no channel")));
            }
            data[i * channels + l as usize] = 1.0;
        }
        Ok(Self::from_normalized(height, width, channels, data))
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Distribution at linear pixel index `i = y * width + x`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn at(&self, y: usize, x: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }

    pub fn pixels(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.channels)
    }

    /// Lossy conversion to the on-disk representation.
    pub fn to_raw(&self) -> RawSoftMap {
        RawSoftMap {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub(crate) fn ensure_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::dims(self.dims(), other.dims()));
        }
        if self.channels != other.channels {
            return Err(Error::ChannelMismatch {
                expected: self.channels,
                found: other.channels,
            });
        }
        Ok(())
    }
}

/// Checks a decoded buffer against the catalog and normalizes it.
pub fn validate_soft_map(raw: &RawSoftMap, catalog: &ClassCatalog) -> Result<SoftPredictionMap> {
    if raw.channels != catalog.num_classes() {
        return Err(Error::ChannelMismatch {
            expected: catalog.num_classes(),
            found: raw.channels,
        });
    }
    SoftPredictionMap::new(
        raw.height,
        raw.width,
        raw.channels,
        raw.data.iter().map(|&v| v as f64).collect(),
    )
}

/// Per-pixel class ids, possibly including the invalid or ignore codes.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HardLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl HardLabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>, catalog: &ClassCatalog) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::InvalidValue(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| !catalog.is_allowed_label(l)) {
            return Err(Error::InvalidValue(format!("label {bad} not in catalog")));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    pub(crate) fn from_labels(height: usize, width: usize, labels: Vec<u8>) -> Self {
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

/// Ground-truth invalid annotation; `true` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvalidMask {
    height: usize,
    width: usize,
    mask: Vec<bool>,
}

impl InvalidMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::InvalidValue(format!(
                "{} mask bits for a {height}x{width} map",
                mask.len()
            )));
        }
        Ok(Self {
            height,
            width,
            mask,
        })
    }

    pub fn all_valid(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            mask: vec![false; height * width],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }
}

/// Metric z-depth per pixel of the source view.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    height: usize,
    width: usize,
    depth: Vec<f64>,
    max_depth: f64,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, depth: Vec<f64>, max_depth: f64) -> Result<Self> {
        if depth.len() != height * width {
            return Err(Error::InvalidValue(format!(
                "{} depth values for a {height}x{width} map",
                depth.len()
            )));
        }
        if !(max_depth.is_finite() && max_depth > 0.0) {
            return Err(Error::InvalidValue(format!("depth ceiling {max_depth}")));
        }
        if let Some((i, d)) = depth
            .iter()
            .enumerate()
            .find(|(_, &d)| !(d.is_finite() && d > 0.0 && d <= max_depth))
        {
            return Err(Error::InvalidValue(format!("depth {d} at pixel {i}")));
        }
        Ok(Self {
            height,
            width,
            depth,
            max_depth,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width], DEFAULT_MAX_DEPTH)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn max_depth(&self) -> f64 {
        self.max_depth
    }

    pub fn values(&self) -> &[f64] {
        &self.depth
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.depth[y * self.width + x]
    }

    /// Nearest-pixel lookup; `None` outside the image.
    pub fn sample_nearest(&self, x: f64, y: f64) -> Option<f64> {
        let (xi, yi) = (x.round(), y.round());
        if xi < 0.0 || yi < 0.0 || xi >= self.width as f64 || yi >= self.height as f64 {
            return None;
        }
        Some(self.at(yi as usize, xi as usize))
    }

    /// Sets every masked pixel to the depth ceiling.
    pub fn clamp_to_max(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.depth.len() {
            return Err(Error::InvalidValue("sky mask size differs from depth map".into()));
        }
        let depth = self
            .depth
            .iter()
            .zip(mask)
            .map(|(&d, &m)| if m { self.max_depth } else { d })
            .collect();
        Ok(Self {
            depth,
            ..self.clone()
        })
    }
}

/// Pinhole intrinsics.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let cam = Self { fx, fy, cx, cy };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0 && self.cx.is_finite() && self.cy.is_finite())
            || !(self.fx.is_finite() && self.fy.is_finite())
        {
            return Err(Error::InvalidValue(format!("camera {self:?}")));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Pixel to normalized image coordinates.
    pub fn normalize(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy)
    }

    /// Camera-frame point to pixel; `None` when not in front of the camera.
    pub fn project(&self, x: &Vector3<f64>) -> Option<Vector2<f64>> {
        if x.z <= 0.0 {
            return None;
        }
        Some(Vector2::new(
            self.fx * x.x / x.z + self.cx,
            self.fy * x.y / x.z + self.cy,
        ))
    }
}

/// Rigid transform from the day camera frame to the dark camera frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraMotion {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl CameraMotion {
    pub const ORTHONORMAL_TOLERANCE: f64 = 1e-9;

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        let det = rotation.determinant();
        if err > Self::ORTHONORMAL_TOLERANCE || (det - 1.0).abs() > Self::ORTHONORMAL_TOLERANCE {
            return Err(Error::InvalidValue(format!(
                "rotation not in SO(3): orthonormality error {err:e}, det {det}"
            )));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidValue("non-finite translation".into()));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }
}

/// Per-pixel maximum class probability.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Index of the largest entry, ties broken towards the lowest index.
pub(crate) fn argmax(v: &[f64]) -> (usize, f64) {
    let mut best = 0;
    let mut best_v = v[0];
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > best_v {
            best = i;
            best_v = x;
        }
    }
    (best, best_v)
}

/// Hard labels and their confidences. Confidence is clamped into `[1/C, 1]`
/// so that rounding never pushes a pixel below the minimum threshold.
pub fn argmax_with_confidence(s: &SoftPredictionMap) -> (HardLabelMap, ConfidenceMap) {
    let floor = 1.0 / s.channels() as f64;
    let (labels, values): (Vec<u8>, Vec<f64>) = s
        .pixels()
        .map(|px| {
            let (c, v) = argmax(px);
            (c as u8, v.clamp(floor, 1.0))
        })
        .unzip();
    (
        HardLabelMap::from_labels(s.height(), s.width(), labels),
        ConfidenceMap {
            height: s.height(),
            width: s.width(),
            values,
        },
    )
}
