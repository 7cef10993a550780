//! Helpers shared by the integration tests: independent oracles and
//! synthetic inputs.
#![allow(dead_code)]

pub mod props;

use std::collections::HashMap;

use deepmatch::descriptor::{compute_descriptors, DescriptorField, DescriptorParams};
use deepmatch::image::ImageBuffer;
use deepmatch::pyramid::{CorrelationPyramid, PatchGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Descriptor field of a uniform-noise image.
pub fn random_field(w: usize, h: usize, seed: u64) -> DescriptorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = ImageBuffer::new(w, h, 1, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
    compute_descriptors(&img, &DescriptorParams::default()).unwrap()
}

/// Correlation maps computed straight from the recursive definition: each
/// parent cell averages, over its present children, the best child score in
/// the 3x3 window around the child's own position, then rectifies.
pub struct PyramidOracle<'a> {
    f1: &'a DescriptorField,
    f2: &'a DescriptorField,
    lambda: f64,
    grids: Vec<PatchGrid>,
    memo: HashMap<(usize, i32, i32), Vec<f64>>,
}

impl<'a> PyramidOracle<'a> {
    pub fn new(
        f1: &'a DescriptorField,
        f2: &'a DescriptorField,
        lambda: f32,
        pyr: &CorrelationPyramid,
    ) -> Self {
        PyramidOracle {
            f1,
            f2,
            lambda: lambda as f64,
            grids: pyr.levels().iter().map(|l| l.grid().clone()).collect(),
            memo: HashMap::new(),
        }
    }

    fn dims(&self, level: usize) -> (i64, i64) {
        let f = 1i64 << level;
        let (w, h) = (self.f2.width() as i64, self.f2.height() as i64);
        ((w + f - 1) / f, (h + f - 1) / f)
    }

    fn rect(&self, v: f64) -> f64 {
        v.clamp(0.0, 1.0).powf(self.lambda)
    }

    /// Map of the level-`level` patch centered at `p`.
    pub fn map(&mut self, level: usize, p: (i32, i32)) -> Vec<f64> {
        if let Some(m) = self.memo.get(&(level, p.0, p.1)) {
            return m.clone();
        }
        let (mw, mh) = self.dims(level);
        let mut out = Vec::with_capacity((mw * mh) as usize);
        if level == 0 {
            let (w2, h2) = (self.f2.width() as i32, self.f2.height() as i32);
            for qy in 0..mh as i32 {
                for qx in 0..mw as i32 {
                    let mut s = 0.0f64;
                    for b in -2..2 {
                        for a in -2..2 {
                            let (x2, y2) = (qx + a, qy + b);
                            if x2 < 0 || y2 < 0 || x2 >= w2 || y2 >= h2 {
                                continue;
                            }
                            let d1 = self.f1.get((p.0 + a) as usize, (p.1 + b) as usize);
                            let d2 = self.f2.get(x2 as usize, y2 as usize);
                            s += d1
                                .iter()
                                .zip(d2)
                                .map(|(u, v)| *u as f64 * *v as f64)
                                .sum::<f64>();
                        }
                    }
                    out.push(self.rect(s / 16.0));
                }
            }
        } else {
            let shift = 1i32 << level;
            let offsets = [(-1, -1), (-1, 1), (1, -1), (1, 1)];
            let children: Vec<((i32, i32), Vec<f64>)> = offsets
                .iter()
                .filter_map(|&(ox, oy)| {
                    let c = (p.0 + shift * ox, p.1 + shift * oy);
                    self.grids[level - 1].find(c.0, c.1)?;
                    Some(((ox, oy), self.map(level - 1, c)))
                })
                .collect();
            let (cw, ch) = self.dims(level - 1);
            for qy in 0..mh {
                for qx in 0..mw {
                    let mut sum = 0.0;
                    for ((ox, oy), cm) in &children {
                        let (cx, cy) = (2 * (qx + *ox as i64), 2 * (qy + *oy as i64));
                        let mut best: Option<f64> = None;
                        for my in -1..=1 {
                            for mx in -1..=1 {
                                let (x, y) = (cx + mx, cy + my);
                                if x >= 0 && y >= 0 && x < cw && y < ch {
                                    let v = cm[(y * cw + x) as usize];
                                    best = Some(best.map_or(v, |b: f64| b.max(v)));
                                }
                            }
                        }
                        sum += best.unwrap_or(0.0);
                    }
                    let v = if children.is_empty() {
                        0.0
                    } else {
                        self.rect(sum / children.len() as f64)
                    };
                    out.push(v);
                }
            }
        }
        self.memo.insert((level, p.0, p.1), out.clone());
        out
    }
}

/// Largest absolute difference between every stored map and the oracle.
pub fn pyramid_oracle_error(
    f1: &DescriptorField,
    f2: &DescriptorField,
    lambda: f32,
    pyr: &CorrelationPyramid,
) -> f64 {
    let mut oracle = PyramidOracle::new(f1, f2, lambda, pyr);
    let mut worst = 0.0f64;
    for (l, level) in pyr.levels().iter().enumerate() {
        for i in 0..level.grid().len() {
            let want = oracle.map(l, level.grid().position(i));
            let got = level.map(i);
            for (g, w) in got.scores.iter().zip(&want) {
                worst = worst.max((*g as f64 - w).abs());
            }
        }
    }
    worst
}

/// Robust smoothness of a warp given as atomic correspondences on the 4-px
/// lattice: the sum over cells of `sqrt(|grad u|^2 + |grad v|^2 + eps^2)`
/// with forward differences between lattice neighbors.
pub fn warp_smoothness(warp: &[(i32, i32, i32, i32)]) -> f64 {
    let disp: HashMap<(i32, i32), (f64, f64)> = warp
        .iter()
        .map(|&(x1, y1, x2, y2)| ((x1, y1), ((x2 - x1) as f64, (y2 - y1) as f64)))
        .collect();
    let eps = 1e-3f64;
    let mut total = 0.0;
    for (&(x, y), &(u, v)) in &disp {
        let mut g = 0.0;
        for n in [(x + 4, y), (x, y + 4)] {
            if let Some(&(nu, nv)) = disp.get(&n) {
                g += (nu - u).powi(2) + (nv - v).powi(2);
            }
        }
        total += (g + eps * eps).sqrt();
    }
    total
}

/// Same image-1 cells as `like`, each sent to a uniform random pixel of a
/// `w x h` image 2.
pub fn uniform_warp<R: Rng>(
    like: &[(i32, i32, i32, i32)],
    w: usize,
    h: usize,
    rng: &mut R,
) -> Vec<(i32, i32, i32, i32)> {
    like.iter()
        .map(|&(x1, y1, _, _)| {
            (
                x1,
                y1,
                rng.random_range(0..w as i32),
                rng.random_range(0..h as i32),
            )
        })
        .collect()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// accuracy@T by scanning every match for every pixel: the best covering
/// match (highest score, then lowest endpoints) supplies the displacement.
pub fn accuracy_oracle(
    matches: &[deepmatch::correspondence::Match],
    cell: f32,
    gt: &deepmatch::evalio::GroundTruthFlow,
    t: f32,
) -> f64 {
    let (w, h) = (gt.flow.width(), gt.flow.height());
    let half = cell as f64 / 2.0;
    let (mut valid, mut correct) = (0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if !gt.valid[y * w + x] {
                continue;
            }
            valid += 1;
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            let mut best: Option<&deepmatch::correspondence::Match> = None;
            for m in matches {
                let (mx, my) = (m.x1 as f64, m.y1 as f64);
                if mx - half <= cx && cx < mx + half && my - half <= cy && cy < my + half {
                    let better = match best {
                        None => true,
                        Some(b) => {
                            m.score > b.score
                                || (m.score == b.score
                                    && (m.y1, m.x1, m.y2, m.x2) < (b.y1, b.x1, b.y2, b.x2))
                        }
                    };
                    if better {
                        best = Some(m);
                    }
                }
            }
            if let Some(m) = best {
                let (gu, gv) = gt.flow.get(x, y);
                let du = (m.x2 - m.x1) as f64 - gu as f64;
                let dv = (m.y2 - m.y1) as f64 - gv as f64;
                if ((du * du + dv * dv).sqrt() as f32) < t {
                    correct += 1;
                }
            }
        }
    }
    if valid == 0 {
        0.0
    } else {
        correct as f64 / valid as f64
    }
}

/// Mean endpoint error over valid pixels, plain loop.
pub fn epe_oracle(
    flow: &deepmatch::flow::FlowField,
    gt: &deepmatch::evalio::GroundTruthFlow,
) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            if gt.valid[y * flow.width() + x] {
                let (u, v) = flow.get(x, y);
                let (gu, gv) = gt.flow.get(x, y);
                s += ((u as f64 - gu as f64).powi(2) + (v as f64 - gv as f64).powi(2)).sqrt();
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Coverage by checking every lattice point against every match.
pub fn coverage_oracle(matches: &[deepmatch::correspondence::Match], w: usize, h: usize) -> f64 {
    let mut hit = 0usize;
    let mut total = 0usize;
    for gy in (0..h).step_by(10) {
        for gx in (0..w).step_by(10) {
            total += 1;
            if matches
                .iter()
                .any(|m| (m.x1 - gx as f32).abs() <= 10.0 && (m.y1 - gy as f32).abs() <= 10.0)
            {
                hit += 1;
            }
        }
    }
    hit as f64 / total.max(1) as f64
}

/// Random matches over a `w x h` pair with repeated scores.
pub fn random_matches<R: Rng>(
    n: usize,
    w: usize,
    h: usize,
    rng: &mut R,
) -> Vec<deepmatch::correspondence::Match> {
    (0..n)
        .map(|_| deepmatch::correspondence::Match {
            x1: rng.random_range(0.0..w as f32),
            y1: rng.random_range(0.0..h as f32),
            x2: rng.random_range(-5.0..w as f32 + 5.0),
            y2: rng.random_range(-5.0..h as f32 + 5.0),
            score: rng.random_range(0..8) as f32 * 0.5,
        })
        .collect()
}

/// Random ground truth with some invalid pixels and all magnitude bands.
pub fn random_gt<R: Rng>(w: usize, h: usize, rng: &mut R) -> deepmatch::evalio::GroundTruthFlow {
    let flow = deepmatch::flow::FlowField::from_fn(w, h, |_, _| (0.0, 0.0));
    let (mut u, mut v) = flow.into_uv();
    for i in 0..w * h {
        let scale = [5.0, 25.0, 80.0][rng.random_range(0..3)];
        u[i] = rng.random_range(-scale..scale);
        v[i] = rng.random_range(-scale..scale);
    }
    let flow = deepmatch::flow::FlowField::from_uv(w, h, u, v).unwrap();
    let mut gt = deepmatch::evalio::GroundTruthFlow::dense(flow);
    for i in 0..w * h {
        if rng.random_range(0..10) == 0 {
            gt.valid[i] = false;
        }
    }
    gt
}
