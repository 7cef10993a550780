//! Dense rasterization of sparse matches into the guidance term.

use std::f32::consts::PI;

use crate::correspondence::Match;
use crate::error::{Error, Result};
use crate::image::{gaussian_blur, ImageBuffer, Plane};

use super::deriv::{dx, dy};
use super::FlowParams;

/// Per-pixel match guidance: presence, target displacement and weight.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchTermField {
    width: usize,
    height: usize,
    present: Vec<bool>,
    wu: Vec<f32>,
    wv: Vec<f32>,
    phi: Vec<f32>,
    /// Matches dropped because an endpoint fell outside its image.
    pub skipped: usize,
}

impl MatchTermField {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        MatchTermField {
            width,
            height,
            present: vec![false; n],
            wu: vec![0.0; n],
            wv: vec![0.0; n],
            phi: vec![0.0; n],
            skipped: 0,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Places a guide at pixel `(x, y)`; a stronger guide already there wins.
    pub fn insert(&mut self, x: usize, y: usize, w: (f32, f32), phi: f32) {
        let i = y * self.width + x;
        if self.present[i] && self.phi[i] >= phi {
            return;
        }
        self.present[i] = true;
        self.wu[i] = w.0;
        self.wv[i] = w.1;
        self.phi[i] = phi;
    }

    /// `(target displacement, weight)` at pixel `(x, y)`.
    pub fn get(&self, x: usize, y: usize) -> Option<((f32, f32), f32)> {
        let i = y * self.width + x;
        self.present[i].then(|| ((self.wu[i], self.wv[i]), self.phi[i]))
    }

    pub fn count(&self) -> usize {
        self.present.iter().filter(|p| **p).count()
    }

    /// Guides in row-major order as `(x, y, displacement, weight)`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, (f32, f32), f32)> + '_ {
        (0..self.present.len())
            .filter(|&i| self.present[i])
            .map(|i| {
                (
                    i % self.width,
                    i / self.width,
                    (self.wu[i], self.wv[i]),
                    self.phi[i],
                )
            })
    }

    /// The same guides on a `width x height` grid, displacements rescaled.
    pub(crate) fn resampled(&self, width: usize, height: usize) -> MatchTermField {
        if (width, height) == (self.width, self.height) {
            return self.clone();
        }
        let sx = width as f32 / self.width as f32;
        let sy = height as f32 / self.height as f32;
        let mut out = MatchTermField::empty(width, height);
        for (x, y, (u, v), phi) in self.iter() {
            let lx = (((x as f32 + 0.5) * sx) as usize).min(width - 1);
            let ly = (((y as f32 + 0.5) * sy) as usize).min(height - 1);
            out.insert(lx, ly, (u * sx, v * sy), phi);
        }
        out
    }
}

/// Channels scaled to `0..255` and smoothed by `sigma`.
pub(crate) fn prepared_planes(img: &ImageBuffer, sigma: f32) -> Vec<Plane> {
    img.planes()
        .iter()
        .map(|p| gaussian_blur(&p.scaled(255.0), sigma))
        .collect()
}

/// Smallest eigenvalue of the 2x2 structure tensor, Gaussian window
/// `sigma = 1` (3x3 support), summed over channels.
pub(crate) fn min_eigen(planes: &[Plane]) -> Plane {
    let (w, h) = (planes[0].width, planes[0].height);
    let (mut jxx, mut jxy, mut jyy) = (Plane::new(w, h), Plane::new(w, h), Plane::new(w, h));
    for p in planes {
        let (gx, gy) = (dx(p), dy(p));
        for i in 0..w * h {
            jxx.data[i] += gx.data[i] * gx.data[i];
            jxy.data[i] += gx.data[i] * gy.data[i];
            jyy.data[i] += gy.data[i] * gy.data[i];
        }
    }
    let window = |p: &Plane| {
        let k = [(-0.5f32).exp(), 1.0, (-0.5f32).exp()];
        let s: f32 = k.iter().sum();
        Plane::from_fn(w, h, |x, y| {
            let mut acc = 0.0;
            for (j, ky) in k.iter().enumerate() {
                for (i, kx) in k.iter().enumerate() {
                    acc += kx
                        * ky
                        * p.get_clamped(x as isize + i as isize - 1, y as isize + j as isize - 1);
                }
            }
            acc / (s * s)
        })
    };
    let (a, b, c) = (window(&jxx), window(&jxy), window(&jyy));
    Plane::from_fn(w, h, |x, y| {
        let i = y * w + x;
        let (a, b, c) = (a.data[i], b.data[i], c.data[i]);
        let tr = 0.5 * (a + c);
        let d = (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (tr - d).max(0.0)
    })
}

/// Builds the guidance field from matches between `img1` and `img2`.
///
/// Each match lands on the image-1 pixel containing `(x1, y1)`. Its weight
/// grows with the local corner strength of image 1 and decays with the
/// appearance difference between the two endpoints.
pub fn rasterize_matches(
    matches: &[Match],
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    params: &FlowParams,
) -> Result<MatchTermField> {
    params.validate()?;
    if img1.channels() != img2.channels() {
        return Err(Error::DimensionMismatch(
            "images differ in channel count".into(),
        ));
    }
    let (w, h) = (img1.width(), img1.height());
    let (w2, h2) = (img2.width() as f32, img2.height() as f32);
    let p1 = prepared_planes(img1, params.sigma);
    let p2 = prepared_planes(img2, params.sigma);
    let lam = min_eigen(&p1);
    let grads1: Vec<(Plane, Plane)> = p1.iter().map(|p| (dx(p), dy(p))).collect();
    let grads2: Vec<(Plane, Plane)> = p2.iter().map(|p| (dx(p), dy(p))).collect();
    let norm = 1.0 / (params.sigma_m * (2.0 * PI).sqrt());
    let mut field = MatchTermField::empty(w, h);
    for m in matches {
        let inside1 = m.x1 >= 0.0 && m.y1 >= 0.0 && m.x1 < w as f32 && m.y1 < h as f32;
        let inside2 = m.x2 >= 0.0 && m.y2 >= 0.0 && m.x2 < w2 && m.y2 < h2;
        if !inside1 || !inside2 || !m.x1.is_finite() || !m.x2.is_finite() {
            field.skipped += 1;
            continue;
        }
        let (x, y) = (m.x1 as usize, m.y1 as usize);
        let (du, dv) = m.displacement();
        // image 2 pixel coordinates of the displaced pixel center
        let (sx, sy) = (x as f32 + du, y as f32 + dv);
        let mut delta = 0.0;
        for c in 0..p1.len() {
            delta += (p1[c].get(x, y) - p2[c].sample_bilinear(sx, sy)).abs();
            delta += (grads1[c].0.get(x, y) - grads2[c].0.sample_bilinear(sx, sy)).abs();
            delta += (grads1[c].1.get(x, y) - grads2[c].1.sample_bilinear(sx, sy)).abs();
        }
        let lambda = 10.0 * lam.get(x, y);
        let phi = lambda.sqrt() * norm * (-delta / (2.0 * params.sigma_m)).exp();
        field.insert(x, y, (du, dv), phi);
    }
    if field.skipped > 0 {
        log::warn!("{} matches outside the images were skipped", field.skipped);
    }
    Ok(field)
}
