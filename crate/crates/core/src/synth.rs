//! Seeded procedural test imagery: a continuous texture that can be sampled
//! anywhere, affine warps of it, and the matching ground-truth flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::evalio::GroundTruthFlow;
use crate::flow::FlowField;
use crate::image::{ImageBuffer, Plane};

fn hash2(seed: u64, x: i64, y: i64) -> f32 {
    let mut z = seed
        ^ (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 40) as f32 / (1u64 << 24) as f32
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, x: f32, y: f32) -> f32 {
    let (fx, fy) = (x.floor(), y.floor());
    let (ix, iy) = (fx as i64, fy as i64);
    let (tx, ty) = (smooth(x - fx), smooth(y - fy));
    let a = hash2(seed, ix, iy);
    let b = hash2(seed, ix + 1, iy);
    let c = hash2(seed, ix, iy + 1);
    let d = hash2(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bot = c + (d - c) * tx;
    top + (bot - top) * ty
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

/// Multi-octave value noise with scattered hard-edged shapes.
#[derive(Clone, Debug)]
pub struct Texture {
    seed: u64,
    octaves: Vec<(f32, f32)>,
    shapes: Vec<(Shape, f32)>,
}

impl Texture {
    /// Texture whose shapes are scattered over `[-extent, 2 * extent]^2`.
    pub fn new(seed: u64, extent: f32) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let octaves = vec![
            (48.0, 1.0),
            (20.0, 0.8),
            (9.0, 0.6),
            (4.0, 0.45),
            (2.0, 0.2),
        ];
        let n = (extent * extent / 300.0) as usize + 8;
        let shapes = (0..n)
            .map(|_| {
                let cx = rng.random_range(-extent..2.0 * extent);
                let cy = rng.random_range(-extent..2.0 * extent);
                let s = rng.random_range(3.0..extent / 6.0 + 4.0);
                let shape = if rng.random::<bool>() {
                    Shape::Disc { cx, cy, r: s }
                } else {
                    let a = rng.random_range(3.0..extent / 6.0 + 4.0);
                    Shape::Rect {
                        x0: cx,
                        y0: cy,
                        x1: cx + s,
                        y1: cy + a,
                    }
                };
                (shape, rng.random::<f32>())
            })
            .collect();
        Texture {
            seed,
            octaves,
            shapes,
        }
    }

    /// Intensity in `[0, 1]` at continuous position `(x, y)`.
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let mut v = 0.0;
        let mut total = 0.0;
        for (k, &(period, amp)) in self.octaves.iter().enumerate() {
            v += amp
                * value_noise(
                    self.seed.wrapping_add(k as u64 * 7919),
                    x / period,
                    y / period,
                );
            total += amp;
        }
        let mut v = v / total;
        // stretch the mid-heavy noise histogram
        v = ((v - 0.5) * 2.2 + 0.5).clamp(0.0, 1.0);
        for (shape, val) in &self.shapes {
            let inside = match *shape {
                Shape::Disc { cx, cy, r } => (x - cx).hypot(y - cy) < r,
                Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            };
            if inside {
                v = 0.35 * v + 0.65 * val;
            }
        }
        v.clamp(0.0, 1.0)
    }

    /// Renders pixel `(x, y)` from the texture at `map(x + 0.5, y + 0.5)`.
    pub fn render(
        &self,
        width: usize,
        height: usize,
        map: impl Fn(f32, f32) -> (f32, f32),
    ) -> ImageBuffer {
        let p = Plane::from_fn(width, height, |x, y| {
            let (sx, sy) = map(x as f32 + 0.5, y as f32 + 0.5);
            self.sample(sx, sy)
        });
        ImageBuffer::from_planes(&[p])
    }
}

/// 2D affine map `x -> A x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub a: [[f32; 2]; 2],
    pub t: [f32; 2],
}

impl Affine {
    pub fn identity() -> Self {
        Affine {
            a: [[1.0, 0.0], [0.0, 1.0]],
            t: [0.0, 0.0],
        }
    }

    pub fn translation(dx: f32, dy: f32) -> Self {
        Affine {
            t: [dx, dy],
            ..Self::identity()
        }
    }

    /// Rotation by `angle` (radians, y-down frame) and isotropic scaling by
    /// `scale`, both about `center`.
    pub fn similarity_about(center: (f32, f32), angle: f32, scale: f32) -> Self {
        let (s, c) = angle.sin_cos();
        let a = [[scale * c, -scale * s], [scale * s, scale * c]];
        let t = [
            center.0 - a[0][0] * center.0 - a[0][1] * center.1,
            center.1 - a[1][0] * center.0 - a[1][1] * center.1,
        ];
        Affine { a, t }
    }

    pub fn apply(&self, x: f32, y: f32) -> (f32, f32) {
        (
            self.a[0][0] * x + self.a[0][1] * y + self.t[0],
            self.a[1][0] * x + self.a[1][1] * y + self.t[1],
        )
    }

    pub fn inverse(&self) -> Affine {
        let [[a, b], [c, d]] = self.a;
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let t = [
            -(inv[0][0] * self.t[0] + inv[0][1] * self.t[1]),
            -(inv[1][0] * self.t[0] + inv[1][1] * self.t[1]),
        ];
        Affine { a: inv, t }
    }
}

/// Image 1 samples the texture directly; image 2 shows it moved by `warp`.
/// Ground truth at a pixel center `x` is `warp(x) - x`, valid when the
/// target lies inside image 2.
pub fn warped_pair(
    tex: &Texture,
    width: usize,
    height: usize,
    warp: &Affine,
) -> (ImageBuffer, ImageBuffer, GroundTruthFlow) {
    let inv = warp.inverse();
    let img1 = tex.render(width, height, |x, y| (x, y));
    let img2 = tex.render(width, height, |x, y| inv.apply(x, y));
    let flow = FlowField::from_fn(width, height, |x, y| {
        let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
        let (tx, ty) = warp.apply(cx, cy);
        (tx - cx, ty - cy)
    });
    let mut gt = GroundTruthFlow::dense(flow);
    for y in 0..height {
        for x in 0..width {
            let (tx, ty) = warp.apply(x as f32 + 0.5, y as f32 + 0.5);
            let inside = tx >= 0.0 && ty >= 0.0 && tx < width as f32 && ty < height as f32;
            gt.valid[y * width + x] = inside;
        }
    }
    (img1, img2, gt)
}

/// Natural-looking test image: texture plus mild pixel noise.
pub fn natural_image(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let tex = Texture::new(seed, width.max(height) as f32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let base = tex.render(width, height, |x, y| (x, y)).to_gray();
    let data = base
        .data
        .iter()
        .map(|v| (v + rng.random_range(-0.01..0.01)).clamp(0.0, 1.0))
        .collect();
    ImageBuffer::from_planes(&[Plane {
        width,
        height,
        data,
    }])
}
