//! Per-pixel oriented-gradient descriptors.
//!
//! Each pixel gets a 9-vector: 8 smoothed, sigmoid-capped non-negative
//! gradient projections plus a constant regularizer slot, normalized to unit
//! length. Dot products between descriptors therefore lie in `[0, 1]`, and
//! flat regions all share the regularizer-only vector `(0, ..., 0, 1)`.

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, ImageBuffer, Plane};
use crate::par;

/// Number of components per pixel descriptor.
pub const DESC_DIM: usize = 9;
/// Number of gradient orientations.
pub const ORIENTATIONS: usize = 8;

/// Gradients are taken on 8-bit intensity units so that the sigmoid slope
/// has its intended range.
const INTENSITY_SCALE: f32 = 255.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DescriptorParams {
    /// Pre-smoothing standard deviation.
    pub nu1: f32,
    /// Per-orientation smoothing before the sigmoid.
    pub nu2: f32,
    /// Per-orientation smoothing after the sigmoid.
    pub nu3: f32,
    pub sigmoid_slope: f32,
    /// Constant appended as the ninth component.
    pub regularizer: f32,
}

impl Default for DescriptorParams {
    fn default() -> Self {
        DescriptorParams {
            nu1: 1.0,
            nu2: 1.0,
            nu3: 1.0,
            sigmoid_slope: 0.2,
            regularizer: 0.3,
        }
    }
}

impl DescriptorParams {
    /// Setting for uncompressed sources: no pre-smoothing, weaker regularizer.
    pub fn lossless() -> Self {
        DescriptorParams {
            nu1: 0.0,
            regularizer: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let radii = [self.nu1, self.nu2, self.nu3];
        if radii.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidParam("smoothing radii must be >= 0".into()));
        }
        if !(self.sigmoid_slope > 0.0) || !self.sigmoid_slope.is_finite() {
            return Err(Error::InvalidParam("sigmoid slope must be > 0".into()));
        }
        if !(self.regularizer > 0.0) || !self.regularizer.is_finite() {
            return Err(Error::InvalidParam("regularizer must be > 0".into()));
        }
        Ok(())
    }
}

/// Dense field of unit-norm 9-vectors, pixel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorField {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DescriptorField {
    /// Wraps raw pixel-major data; normalizes nothing.
    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * DESC_DIM {
            return Err(Error::DimensionMismatch(format!(
                "descriptor data length {} for {width}x{height}",
                data.len()
            )));
        }
        Ok(DescriptorField {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &[f32] {
        let i = (y * self.width + x) * DESC_DIM;
        &self.data[i..i + DESC_DIM]
    }

    /// Channel-major copy: `DESC_DIM` planes of `width * height`.
    pub fn to_planar(&self) -> Vec<Plane> {
        (0..DESC_DIM)
            .map(|c| Plane {
                width: self.width,
                height: self.height,
                data: self
                    .data
                    .iter()
                    .skip(c)
                    .step_by(DESC_DIM)
                    .copied()
                    .collect(),
            })
            .collect()
    }
}

/// Dot product of two descriptors.
#[inline]
pub fn descriptor_similarity(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sigmoid_cap(x: f32, slope: f32) -> f32 {
    2.0 / (1.0 + (-slope * x).exp()) - 1.0
}

/// Unit direction vectors `(cos(i*pi/4), sin(i*pi/4))` for `i = 1..=8`.
pub fn orientation_dirs() -> [(f32, f32); ORIENTATIONS] {
    std::array::from_fn(|k| {
        let a = (k + 1) as f32 * std::f32::consts::FRAC_PI_4;
        (a.cos(), a.sin())
    })
}

/// Central differences with replicate border.
pub(crate) fn central_gradient(p: &Plane) -> (Plane, Plane) {
    let (w, h) = (p.width, p.height);
    let gx = Plane::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (p.get_clamped(x + 1, y) - p.get_clamped(x - 1, y))
    });
    let gy = Plane::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        0.5 * (p.get_clamped(x, y + 1) - p.get_clamped(x, y - 1))
    });
    (gx, gy)
}

/// Computes the descriptor field of `img` (color is averaged to gray).
pub fn compute_descriptors(
    img: &ImageBuffer,
    params: &DescriptorParams,
) -> Result<DescriptorField> {
    compute_descriptors_with(img, params, par::PARALLEL_AVAILABLE)
}

pub fn compute_descriptors_with(
    img: &ImageBuffer,
    params: &DescriptorParams,
    parallel: bool,
) -> Result<DescriptorField> {
    params.validate()?;
    let gray = img.to_gray().scaled(INTENSITY_SCALE);
    let smooth = gaussian_blur(&gray, params.nu1);
    let (gx, gy) = central_gradient(&smooth);
    let dirs = orientation_dirs();

    let maps: Vec<Plane> = par::map_range(ORIENTATIONS, parallel, |k| {
        let (c, s) = dirs[k];
        let proj = Plane {
            width: gx.width,
            height: gx.height,
            data: gx
                .data
                .iter()
                .zip(&gy.data)
                .map(|(dx, dy)| (dx * c + dy * s).max(0.0))
                .collect(),
        };
        let mut m = gaussian_blur(&proj, params.nu2);
        m.data
            .iter_mut()
            .for_each(|v| *v = sigmoid_cap(*v, params.sigmoid_slope));
        gaussian_blur(&m, params.nu3)
    });

    let n = img.width() * img.height();
    let mut data = vec![0.0f32; n * DESC_DIM];
    for (i, px) in data.chunks_exact_mut(DESC_DIM).enumerate() {
        for (k, m) in maps.iter().enumerate() {
            // smoothing of non-negative maps can leave tiny negative rounding
            px[k] = m.data[i].max(0.0);
        }
        px[ORIENTATIONS] = params.regularizer;
        let norm = px.iter().map(|v| v * v).sum::<f32>().sqrt();
        px.iter_mut().for_each(|v| *v /= norm);
    }
    DescriptorField::from_raw(img.width(), img.height(), data)
}
