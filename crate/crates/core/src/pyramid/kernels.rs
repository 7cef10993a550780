//! Inner loops of the bottom-up pass: atomic patch correlation and the fused
//! max-pool / decimate / shift / average / rectify aggregation.

use super::grid::QUADRANT_OFFSETS;
use crate::descriptor::{DescriptorField, DESC_DIM};

/// Values per atomic patch descriptor: 4x4 pixels of 9 components.
pub const PATCH_DIM: usize = 16 * DESC_DIM;

/// Descriptor of one atomic patch, pixel-major in `(row, col, component)`
/// order.
pub type PatchDescriptor = [f32; PATCH_DIM];

/// Gathers the 4x4 patch of `field` centered at `(cx, cy)`, i.e. pixels
/// `cx-2 ..= cx+1` by `cy-2 ..= cy+1`.
pub fn patch_descriptor(field: &DescriptorField, cx: i32, cy: i32) -> PatchDescriptor {
    let mut out = [0.0; PATCH_DIM];
    for b in 0..4 {
        for a in 0..4 {
            let d = field.get((cx - 2 + a) as usize, (cy - 2 + b) as usize);
            let o = ((b * 4 + a) as usize) * DESC_DIM;
            out[o..o + DESC_DIM].copy_from_slice(d);
        }
    }
    out
}

/// Similarity of two atomic patches: the mean of the 16 pixel dot products.
pub fn patch_similarity(a: &PatchDescriptor, b: &PatchDescriptor) -> f32 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f32>() / 16.0
}

/// Image-2 descriptor planes zero-padded by 2 on the top/left and 1 on the
/// bottom/right, so every 4x4 window anchored at an image pixel is in range.
pub struct PaddedPlanes {
    pub width: usize,
    pub height: usize,
    stride: usize,
    planes: Vec<Vec<f32>>,
}

impl PaddedPlanes {
    pub fn new(field: &DescriptorField) -> Self {
        let (w, h) = (field.width(), field.height());
        let stride = w + 3;
        let mut planes = vec![vec![0.0f32; stride * (h + 3)]; DESC_DIM];
        for y in 0..h {
            for x in 0..w {
                let d = field.get(x, y);
                for c in 0..DESC_DIM {
                    planes[c][(y + 2) * stride + x + 2] = d[c];
                }
            }
        }
        PaddedPlanes {
            width: w,
            height: h,
            stride,
            planes,
        }
    }

    pub fn bytes(&self) -> usize {
        self.planes.len() * self.planes[0].len() * std::mem::size_of::<f32>()
    }
}

/// Rectification `v -> v^lambda`, clamped into `[0, 1]`.
#[inline]
pub fn rectify(v: f32, lambda: f32) -> f32 {
    let v = v.clamp(0.0, 1.0);
    if lambda == 1.0 {
        v
    } else {
        v.powf(lambda)
    }
}

/// Rectified correlation of one atomic patch against every pixel of image 2.
/// `out` has `width * height` entries.
pub fn correlate_patch(patch: &PatchDescriptor, img2: &PaddedPlanes, lambda: f32, out: &mut [f32]) {
    let (w, h, stride) = (img2.width, img2.height, img2.stride);
    debug_assert_eq!(out.len(), w * h);
    for (qy, row) in out.chunks_exact_mut(w).enumerate() {
        row.fill(0.0);
        for b in 0..4 {
            let base = (qy + b) * stride;
            for c in 0..DESC_DIM {
                let plane = &img2.planes[c];
                for a in 0..4 {
                    let wgt = patch[(b * 4 + a) * DESC_DIM + c] * (1.0 / 16.0);
                    if wgt == 0.0 {
                        continue;
                    }
                    let src = &plane[base + a..base + a + w];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o += wgt * s;
                    }
                }
            }
        }
    }
    debug_assert!(h * w == out.len());
    out.iter_mut().for_each(|v| *v = rectify(*v, lambda));
}

/// Read-only view of a child map used during aggregation.
#[derive(Clone, Copy)]
pub struct ChildMap<'a> {
    pub width: usize,
    pub height: usize,
    pub data: &'a [f32],
}

const ABSENT: f32 = -1.0;

/// Max over `{2r-1, 2r, 2r+1}` along x for `r` in `-1 ..= out_w`, one row
/// per child row.
fn pool_rows(child: ChildMap, out_w: usize, buf: &mut Vec<f32>) {
    let span = out_w + 2;
    buf.clear();
    buf.resize(span * child.height, ABSENT);
    let cw = child.width as isize;
    for y in 0..child.height {
        let row = &child.data[y * child.width..(y + 1) * child.width];
        let dst = &mut buf[y * span..(y + 1) * span];
        for (k, d) in dst.iter_mut().enumerate() {
            let c = 2 * (k as isize - 1);
            let lo = (c - 1).max(0);
            let hi = (c + 1).min(cw - 1);
            let mut m = ABSENT;
            let mut x = lo;
            while x <= hi {
                m = m.max(row[x as usize]);
                x += 1;
            }
            *d = m;
        }
    }
}

/// Computes one parent map of `out_w x out_h` from up to four children:
/// the average over present children of the 3x3 max-pooled, decimated map
/// read at `q + o_i`, then rectified. Pool windows with no in-bounds cell
/// contribute 0.
pub fn aggregate_map(
    children: &[Option<ChildMap>; 4],
    out_w: usize,
    out_h: usize,
    lambda: f32,
    out: &mut [f32],
) {
    debug_assert_eq!(out.len(), out_w * out_h);
    out.fill(0.0);
    let span = out_w + 2;
    let mut rows = Vec::new();
    let mut pooled = vec![0.0f32; span * (out_h + 2)];
    let mut count = 0u32;
    for (q, child) in children.iter().enumerate() {
        let Some(child) = child else { continue };
        count += 1;
        pool_rows(*child, out_w, &mut rows);
        let ch = child.height as isize;
        for ry in 0..out_h + 2 {
            let c = 2 * (ry as isize - 1);
            let lo = (c - 1).max(0);
            let hi = (c + 1).min(ch - 1);
            let dst = &mut pooled[ry * span..(ry + 1) * span];
            dst.fill(ABSENT);
            let mut y = lo;
            while y <= hi {
                let src = &rows[y as usize * span..(y as usize + 1) * span];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = d.max(*s);
                }
                y += 1;
            }
        }
        let (ox, oy) = QUADRANT_OFFSETS[q];
        for qy in 0..out_h {
            let ry = (qy as i32 + oy + 1) as usize;
            let src = &pooled[ry * span..(ry + 1) * span];
            let x0 = (ox + 1) as usize;
            let dst = &mut out[qy * out_w..(qy + 1) * out_w];
            for (d, s) in dst.iter_mut().zip(&src[x0..x0 + out_w]) {
                *d += s.max(0.0);
            }
        }
    }
    if count == 0 {
        return;
    }
    let inv = 1.0 / count as f32;
    out.iter_mut().for_each(|v| *v = rectify(*v * inv, lambda));
}
