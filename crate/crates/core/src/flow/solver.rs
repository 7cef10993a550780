//! Coarse-to-fine minimization. Each level warps image 2 by the current
//! flow, linearizes the data term around it and solves for an increment
//! with a few reweighting passes, each followed by red-black SOR sweeps on
//! the quadratic surrogate.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::{resize_area, resize_bilinear, ImageBuffer, Plane};
use crate::par::{self, SharedMut};

use super::deriv::{dx, dy};
use super::matchterm::{prepared_planes, MatchTermField};
use super::penalizer::{psi, psi_deriv};
use super::{FlowField, FlowParams};

/// Energy split by term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct EnergyBreakdown {
    pub data: f64,
    pub smoothness: f64,
    pub matching: f64,
    pub total: f64,
}

impl std::ops::Add for EnergyBreakdown {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        EnergyBreakdown {
            data: self.data + o.data,
            smoothness: self.smoothness + o.smoothness,
            matching: self.matching + o.matching,
            total: self.total + o.total,
        }
    }
}

/// Energies of one pyramid level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelTrace {
    /// 0 is the input resolution.
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub beta: f32,
    /// Linearized energy before each reweighting pass and after the last.
    pub energies: Vec<f64>,
}

/// Per-level energies, coarsest level first.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolverTrace {
    pub levels: Vec<LevelTrace>,
}

impl SolverTrace {
    pub fn finest(&self) -> Option<&LevelTrace> {
        self.levels.last()
    }
}

/// Symmetric 3x3 tensor stored as `[xx, xy, xz, yy, yz, zz]`.
type Tensor = [f32; 6];

#[inline]
fn quad(t: &Tensor, du: f32, dv: f32) -> f64 {
    let (du, dv) = (du as f64, dv as f64);
    let t = t.map(|v| v as f64);
    (t[0] * du * du
        + 2.0 * t[1] * du * dv
        + 2.0 * t[2] * du
        + t[3] * dv * dv
        + 2.0 * t[4] * dv
        + t[5])
        .max(0.0)
}

#[inline]
fn add_outer(t: &mut Tensor, a: [f32; 3], k: f32) {
    t[0] += k * a[0] * a[0];
    t[1] += k * a[0] * a[1];
    t[2] += k * a[0] * a[2];
    t[3] += k * a[1] * a[1];
    t[4] += k * a[1] * a[2];
    t[5] += k * a[2] * a[2];
}

struct Derivs {
    i: Plane,
    x: Plane,
    y: Plane,
    xx: Plane,
    xy: Plane,
    yy: Plane,
}

impl Derivs {
    fn new(p: &Plane) -> Self {
        let x = dx(p);
        let y = dy(p);
        Derivs {
            i: p.clone(),
            xx: dx(&x),
            xy: dy(&x),
            yy: dy(&y),
            x,
            y,
        }
    }
}

/// One level of the problem with image 2 warped by a fixed base flow.
struct Linearized<'a> {
    w: usize,
    h: usize,
    /// Normalized color constancy tensor.
    j0: Vec<Tensor>,
    /// Normalized gradient constancy tensor.
    jg: Vec<Tensor>,
    alpha: &'a Plane,
    u: &'a [f32],
    v: &'a [f32],
    guide: &'a MatchTermField,
    delta: f32,
    gamma: f32,
    beta: f32,
    eps: f64,
}

fn linearize<'a>(
    d1: &[Derivs],
    d2: &[Derivs],
    alpha: &'a Plane,
    flow: &'a FlowField,
    guide: &'a MatchTermField,
    beta: f32,
    params: &FlowParams,
) -> Linearized<'a> {
    let (w, h) = (flow.width(), flow.height());
    let zeta2 = params.zeta * params.zeta;
    let mut j0 = vec![[0.0f32; 6]; w * h];
    let mut jg = vec![[0.0f32; 6]; w * h];
    let (u, v) = (flow.u(), flow.v());
    let fill = |y: usize, row0: &mut [Tensor], rowg: &mut [Tensor]| {
        for x in 0..w {
            let i = y * w + x;
            let (sx, sy) = (x as f32 + u[i], y as f32 + v[i]);
            // no data evidence where the warp leaves image 2
            if !(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32) {
                continue;
            }
            for (a, b) in d1.iter().zip(d2) {
                let s = |p: &Plane| p.sample_bilinear(sx, sy);
                let ix = 0.5 * (a.x.data[i] + s(&b.x));
                let iy = 0.5 * (a.y.data[i] + s(&b.y));
                let iz = s(&b.i) - a.i.data[i];
                let ixx = 0.5 * (a.xx.data[i] + s(&b.xx));
                let ixy = 0.5 * (a.xy.data[i] + s(&b.xy));
                let iyy = 0.5 * (a.yy.data[i] + s(&b.yy));
                let ixz = s(&b.x) - a.x.data[i];
                let iyz = s(&b.y) - a.y.data[i];
                add_outer(
                    &mut row0[x],
                    [ix, iy, iz],
                    1.0 / (ix * ix + iy * iy + zeta2),
                );
                add_outer(
                    &mut rowg[x],
                    [ixx, ixy, ixz],
                    1.0 / (ixx * ixx + ixy * ixy + zeta2),
                );
                add_outer(
                    &mut rowg[x],
                    [ixy, iyy, iyz],
                    1.0 / (ixy * ixy + iyy * iyy + zeta2),
                );
            }
        }
    };
    let sj0 = SharedMut::new(&mut j0);
    let sjg = SharedMut::new(&mut jg);
    par::for_each_row(h, params.parallel, |y| {
        let mut r0 = vec![[0.0f32; 6]; w];
        let mut rg = vec![[0.0f32; 6]; w];
        fill(y, &mut r0, &mut rg);
        for x in 0..w {
            // SAFETY: row y is written by this closure only
            unsafe {
                sj0.write(y * w + x, r0[x]);
                sjg.write(y * w + x, rg[x]);
            }
        }
    });
    Linearized {
        w,
        h,
        j0,
        jg,
        alpha,
        u,
        v,
        guide,
        delta: params.delta,
        gamma: params.gamma,
        beta,
        eps: params.epsilon as f64,
    }
}

/// Squared forward-difference gradient norm of `(u + du, v + dv)` at `i`.
#[inline]
fn grad2(l: &Linearized, du: &[f32], dv: &[f32], x: usize, y: usize) -> f64 {
    let i = y * l.w + x;
    let (uu, vv) = (
        |j: usize| (l.u[j] + du[j]) as f64,
        |j: usize| (l.v[j] + dv[j]) as f64,
    );
    let mut g = 0.0;
    if x + 1 < l.w {
        g += (uu(i + 1) - uu(i)).powi(2) + (vv(i + 1) - vv(i)).powi(2);
    }
    if y + 1 < l.h {
        g += (uu(i + l.w) - uu(i)).powi(2) + (vv(i + l.w) - vv(i)).powi(2);
    }
    g
}

#[inline]
fn guide_at(l: &Linearized, i: usize) -> Option<((f32, f32), f32)> {
    l.guide.get(i % l.w, i / l.w)
}

impl Linearized<'_> {
    /// Energy of the increment `(du, dv)` under the linearized data term.
    fn energy(&self, du: &[f32], dv: &[f32], parallel: bool) -> EnergyBreakdown {
        let eps = self.eps;
        let rows = par::map_range(self.h, parallel, |y| {
            let mut e = EnergyBreakdown::default();
            for x in 0..self.w {
                let i = y * self.w + x;
                e.data += self.delta as f64 * psi(quad(&self.j0[i], du[i], dv[i]), eps)
                    + self.gamma as f64 * psi(quad(&self.jg[i], du[i], dv[i]), eps);
                e.smoothness += self.alpha.data[i] as f64 * psi(grad2(self, du, dv, x, y), eps);
                if let Some(((gu, gv), phi)) = guide_at(self, i) {
                    let ru = (self.u[i] + du[i] - gu) as f64;
                    let rv = (self.v[i] + dv[i] - gv) as f64;
                    e.matching += self.beta as f64 * phi as f64 * psi(ru * ru + rv * rv, eps);
                }
            }
            e
        });
        let mut e = rows
            .into_iter()
            .fold(EnergyBreakdown::default(), |a, b| a + b);
        e.total = e.data + e.smoothness + e.matching;
        e
    }

    /// Quadratic surrogate coefficients at the current increment.
    fn surrogate(&self, du: &[f32], dv: &[f32], parallel: bool) -> Vec<Coef> {
        let eps = self.eps;
        let mut coefs = vec![Coef::default(); self.w * self.h];
        par::for_each_chunk_mut(&mut coefs, self.w, parallel, |y, row| {
            for (x, c) in row.iter_mut().enumerate() {
                let i = y * self.w + x;
                let kd = self.delta * psi_deriv(quad(&self.j0[i], du[i], dv[i]), eps) as f32;
                let kg = self.gamma * psi_deriv(quad(&self.jg[i], du[i], dv[i]), eps) as f32;
                let (t0, tg) = (&self.j0[i], &self.jg[i]);
                c.a11 = kd * t0[0] + kg * tg[0];
                c.a12 = kd * t0[1] + kg * tg[1];
                c.a22 = kd * t0[3] + kg * tg[3];
                c.b1 = -(kd * t0[2] + kg * tg[2]);
                c.b2 = -(kd * t0[4] + kg * tg[4]);
                if let Some(((gu, gv), phi)) = guide_at(self, i) {
                    let ru = self.u[i] + du[i] - gu;
                    let rv = self.v[i] + dv[i] - gv;
                    let km = self.beta * phi * psi_deriv((ru * ru + rv * rv) as f64, eps) as f32;
                    c.a11 += km;
                    c.a22 += km;
                    c.b1 -= km * (self.u[i] - gu);
                    c.b2 -= km * (self.v[i] - gv);
                }
                c.e = self.alpha.data[i] * psi_deriv(grad2(self, du, dv, x, y), eps) as f32;
            }
        });
        coefs
    }

    /// Red-black SOR on the surrogate; pixels of one color are independent.
    fn sor(
        &self,
        coefs: &[Coef],
        du: &mut [f32],
        dv: &mut [f32],
        iters: usize,
        omega: f32,
        parallel: bool,
    ) {
        let (w, h) = (self.w, self.h);
        let (sdu, sdv) = (SharedMut::new(du), SharedMut::new(dv));
        for _ in 0..iters {
            for color in 0..2 {
                par::for_each_row(h, parallel, |y| {
                    // SAFETY: this pass writes only pixels with (x + y) % 2 ==
                    // color, row y only, and reads their own values plus
                    // neighbors of the other color, which nobody writes.
                    unsafe {
                        let mut x = (color + y) % 2;
                        while x < w {
                            let i = y * w + x;
                            let c = &coefs[i];
                            let mut sum_e = 0.0;
                            let (mut nu, mut nv) = (0.0, 0.0);
                            let mut edge = |j: usize, e: f32| {
                                sum_e += e;
                                nu += e * (self.u[j] + sdu.read(j));
                                nv += e * (self.v[j] + sdv.read(j));
                            };
                            if x + 1 < w {
                                edge(i + 1, c.e);
                            }
                            if x > 0 {
                                edge(i - 1, coefs[i - 1].e);
                            }
                            if y + 1 < h {
                                edge(i + w, c.e);
                            }
                            if y > 0 {
                                edge(i - w, coefs[i - w].e);
                            }
                            let (ui, vi) = (self.u[i], self.v[i]);
                            let den = c.a11 + sum_e;
                            if den > 1e-12 {
                                let t = (c.b1 - c.a12 * sdv.read(i) + nu - sum_e * ui) / den;
                                let old = sdu.read(i);
                                sdu.write(i, old + omega * (t - old));
                            }
                            let den = c.a22 + sum_e;
                            if den > 1e-12 {
                                let t = (c.b2 - c.a12 * sdu.read(i) + nv - sum_e * vi) / den;
                                let old = sdv.read(i);
                                sdv.write(i, old + omega * (t - old));
                            }
                            x += 2;
                        }
                    }
                });
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct Coef {
    a11: f32,
    a12: f32,
    a22: f32,
    b1: f32,
    b2: f32,
    /// Weight of the right and down edges leaving this pixel.
    e: f32,
}

/// Local smoothness weight from the gray level of `planes` (0..255).
fn smoothness_weight(planes: &[Plane], params: &FlowParams) -> Plane {
    let (w, h) = (planes[0].width, planes[0].height);
    let n = planes.len() as f32;
    let gray = Plane::from_fn(w, h, |x, y| {
        planes.iter().map(|p| p.get(x, y)).sum::<f32>() / (255.0 * n)
    });
    let (gx, gy) = (dx(&gray), dy(&gray));
    Plane::from_fn(w, h, |x, y| {
        let g = gx.get(x, y).hypot(gy.get(x, y));
        params.alpha_scale * (-params.kappa * g).exp()
    })
}

fn check_inputs(img1: &ImageBuffer, img2: &ImageBuffer, guide: &MatchTermField) -> Result<()> {
    let d1 = (img1.width(), img1.height(), img1.channels());
    let d2 = (img2.width(), img2.height(), img2.channels());
    if d1 != d2 {
        return Err(Error::DimensionMismatch(format!(
            "images are {d1:?} and {d2:?}"
        )));
    }
    if (guide.width(), guide.height()) != (d1.0, d1.1) {
        return Err(Error::DimensionMismatch(format!(
            "match term is {}x{}, images are {}x{}",
            guide.width(),
            guide.height(),
            d1.0,
            d1.1
        )));
    }
    Ok(())
}

fn upsample(flow: &FlowField, w: usize, h: usize) -> FlowField {
    let (fw, fh) = (flow.width(), flow.height());
    if (w, h) == (fw, fh) {
        return flow.clone();
    }
    let (sx, sy) = (w as f32 / fw as f32, h as f32 / fh as f32);
    let up = |d: &[f32], s: f32| {
        let p = Plane {
            width: fw,
            height: fh,
            data: d.to_vec(),
        };
        resize_bilinear(&p, w, h)
            .data
            .into_iter()
            .map(|v| v * s)
            .collect()
    };
    FlowField::from_uv(w, h, up(flow.u(), sx), up(flow.v(), sy)).expect("sizes agree")
}

/// Dense flow from `img1` to `img2` guided by `guide`.
pub fn solve_flow(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    guide: &MatchTermField,
    params: &FlowParams,
) -> Result<FlowField> {
    solve_flow_traced(img1, img2, guide, params).map(|(f, _)| f)
}

/// [`solve_flow`] that also reports the energy after every reweighting pass.
pub fn solve_flow_traced(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    guide: &MatchTermField,
    params: &FlowParams,
) -> Result<(FlowField, SolverTrace)> {
    params.validate()?;
    check_inputs(img1, img2, guide)?;
    let full1 = prepared_planes(img1, params.sigma);
    let full2 = prepared_planes(img2, params.sigma);
    let sizes = params.level_sizes(img1.width(), img1.height());
    let k_max = sizes.len() - 1;
    let mut flow = FlowField::zeros(sizes[k_max].0, sizes[k_max].1);
    let mut trace = SolverTrace::default();
    for k in (0..=k_max).rev() {
        let (w, h) = sizes[k];
        let level =
            |ps: &[Plane]| -> Vec<Plane> { ps.iter().map(|p| resize_area(p, w, h)).collect() };
        let (p1, p2) = (level(&full1), level(&full2));
        flow = upsample(&flow, w, h);
        let g = guide.resampled(w, h);
        let beta = params.beta_at(k, k_max);
        let energies = refine_level(&p1, &p2, &mut flow, &g, beta, params);
        log::debug!(
            "level {k} {w}x{h} beta {beta}: energy {:?}",
            energies.last()
        );
        trace.levels.push(LevelTrace {
            level: k,
            width: w,
            height: h,
            beta,
            energies,
        });
    }
    Ok((flow, trace))
}

/// Refines `flow` in place on one level; returns the trace energies.
fn refine_level(
    p1: &[Plane],
    p2: &[Plane],
    flow: &mut FlowField,
    guide: &MatchTermField,
    beta: f32,
    params: &FlowParams,
) -> Vec<f64> {
    let alpha = smoothness_weight(p1, params);
    let d1: Vec<Derivs> = p1.iter().map(Derivs::new).collect();
    let d2: Vec<Derivs> = p2.iter().map(Derivs::new).collect();
    let n = flow.width() * flow.height();
    let (mut du, mut dv) = (vec![0.0f32; n], vec![0.0f32; n]);
    let mut energies = Vec::with_capacity(params.fp_iters + 1);
    {
        let lin = linearize(&d1, &d2, &alpha, flow, guide, beta, params);
        for _ in 0..params.fp_iters {
            energies.push(lin.energy(&du, &dv, params.parallel).total);
            let coefs = lin.surrogate(&du, &dv, params.parallel);
            lin.sor(
                &coefs,
                &mut du,
                &mut dv,
                params.sor_iters,
                params.sor_omega,
                params.parallel,
            );
        }
        energies.push(lin.energy(&du, &dv, params.parallel).total);
    }
    let (u, v) = flow.components_mut();
    u.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
    v.iter_mut().zip(&dv).for_each(|(a, b)| *a += b);
    energies
}

/// Energy of `flow` at the input resolution with the full matching weight.
/// The data term warps image 2 by `flow` exactly.
pub fn energy(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    flow: &FlowField,
    guide: &MatchTermField,
    params: &FlowParams,
) -> Result<EnergyBreakdown> {
    params.validate()?;
    check_inputs(img1, img2, guide)?;
    if (flow.width(), flow.height()) != (img1.width(), img1.height()) {
        return Err(Error::DimensionMismatch(
            "flow and images differ in size".into(),
        ));
    }
    let p1 = prepared_planes(img1, params.sigma);
    let p2 = prepared_planes(img2, params.sigma);
    let alpha = smoothness_weight(&p1, params);
    let d1: Vec<Derivs> = p1.iter().map(Derivs::new).collect();
    let d2: Vec<Derivs> = p2.iter().map(Derivs::new).collect();
    let lin = linearize(&d1, &d2, &alpha, flow, guide, params.beta, params);
    let zero = vec![0.0f32; flow.width() * flow.height()];
    Ok(lin.energy(&zero, &zero, params.parallel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correspondence::Match;
    use crate::flow::rasterize_matches;
    use crate::synth::{warped_pair, Affine, Texture};

    fn small() -> FlowParams {
        FlowParams {
            min_size: 24,
            ..FlowParams::default()
        }
    }

    #[test]
    fn identical_images_give_zero_flow() {
        let tex = Texture::new(3, 48.0);
        let img = tex.render(48, 40, |x, y| (x, y));
        let g = MatchTermField::empty(48, 40);
        let f = solve_flow(&img, &img, &g, &small()).unwrap();
        assert_eq!(f.max_norm(), 0.0);
    }

    #[test]
    fn zero_flow_energy_closed_form() {
        let img = ImageBuffer::from_gray_fn(12, 9, |x, y| ((x * 5 + y * 3) % 7) as f32 / 7.0);
        let p = FlowParams {
            delta: 0.4,
            ..FlowParams::default()
        };
        let g = MatchTermField::empty(12, 9);
        let e = energy(&img, &img, &FlowField::zeros(12, 9), &g, &p).unwrap();
        let n = 108.0;
        let expect = n * (p.delta + p.gamma) as f64 * p.epsilon as f64;
        assert!((e.data - expect).abs() < 1e-9 * n, "{e:?}");
        let alpha = smoothness_weight(&prepared_planes(&img, p.sigma), &p);
        let sa: f64 = alpha
            .data
            .iter()
            .map(|a| *a as f64 * p.epsilon as f64)
            .sum();
        assert!((e.smoothness - sa).abs() < 1e-9 * n);
        assert_eq!(e.matching, 0.0);
    }

    #[test]
    fn matching_energy_is_linear_in_beta() {
        let tex = Texture::new(8, 32.0);
        let (a, b, _) = warped_pair(&tex, 32, 32, &Affine::translation(2.0, 1.0));
        let ms = [Match {
            x1: 10.0,
            y1: 12.0,
            x2: 13.0,
            y2: 12.5,
            score: 1.0,
        }];
        let p = FlowParams::default();
        let g = rasterize_matches(&ms, &a, &b, &p).unwrap();
        let f = FlowField::from_fn(32, 32, |x, y| (0.1 * x as f32, -0.05 * y as f32));
        let e1 = energy(&a, &b, &f, &g, &p).unwrap();
        let e2 = energy(
            &a,
            &b,
            &f,
            &g,
            &FlowParams {
                beta: 2.0 * p.beta,
                ..p
            },
        )
        .unwrap();
        assert!(e1.matching > 0.0);
        assert!((e2.matching - 2.0 * e1.matching).abs() < 1e-9 * e2.matching);
        assert_eq!(e1.data, e2.data);
        assert_eq!(e1.smoothness, e2.smoothness);
    }

    #[test]
    fn translation_with_sparse_guides_is_recovered() {
        let tex = Texture::new(21, 64.0);
        let (a, b, gt) = warped_pair(&tex, 64, 64, &Affine::translation(7.0, 3.0));
        let ms: Vec<Match> = (0..4)
            .flat_map(|j| (0..4).map(move |i| (8.0 + 16.0 * i as f32, 8.0 + 16.0 * j as f32)))
            .filter(|(x, y)| x + 7.0 < 64.0 && y + 3.0 < 64.0)
            .map(|(x, y)| Match {
                x1: x,
                y1: y,
                x2: x + 7.0,
                y2: y + 3.0,
                score: 1.0,
            })
            .collect();
        let p = FlowParams::default();
        let g = rasterize_matches(&ms, &a, &b, &p).unwrap();
        let f = solve_flow(&a, &b, &g, &p).unwrap();
        let mut err = 0.0;
        let mut n = 0;
        for y in 8..48 {
            for x in 8..48 {
                let (u, v) = f.get(x, y);
                let (gu, gv) = gt.flow.get(x, y);
                err += (u - gu).hypot(v - gv);
                n += 1;
            }
        }
        let epe = err / n as f32;
        assert!(epe < 0.5, "epe {epe}");
    }

    #[test]
    fn finest_level_energy_never_increases() {
        let tex = Texture::new(5, 48.0);
        let warp = Affine::similarity_about((24.0, 24.0), 0.05, 1.02);
        let (a, b, _) = warped_pair(&tex, 48, 48, &warp);
        let ms = [Match {
            x1: 20.0,
            y1: 20.0,
            x2: 21.0,
            y2: 21.5,
            score: 1.0,
        }];
        let p = small();
        let g = rasterize_matches(&ms, &a, &b, &p).unwrap();
        let (_, trace) = solve_flow_traced(&a, &b, &g, &p).unwrap();
        for lvl in &trace.levels {
            assert_eq!(lvl.energies.len(), p.fp_iters + 1);
            for w in lvl.energies.windows(2) {
                assert!(
                    w[1] <= w[0] * (1.0 + 1e-5),
                    "level {} {:?}",
                    lvl.level,
                    lvl.energies
                );
            }
        }
        assert_eq!(trace.finest().unwrap().level, 0);
    }

    #[test]
    fn strong_guide_pulls_flat_region() {
        let img = ImageBuffer::from_gray_fn(32, 32, |_, _| 0.5);
        let mut g = MatchTermField::empty(32, 32);
        g.insert(16, 16, (3.0, -2.0), 1e4);
        let p = FlowParams {
            b: 0.0,
            ..FlowParams::default()
        };
        let f = solve_flow(&img, &img, &g, &p).unwrap();
        let (u, v) = f.get(16, 16);
        assert!((u - 3.0).abs() < 0.1 && (v + 2.0).abs() < 0.1, "{u} {v}");
    }

    #[test]
    fn brightness_offset_is_ignored_without_color_term() {
        let tex = Texture::new(4, 40.0);
        let (a, b, _) = warped_pair(&tex, 40, 40, &Affine::translation(2.0, 1.0));
        let shift = |img: &ImageBuffer| {
            let g = img.to_gray();
            ImageBuffer::from_gray_fn(40, 40, |x, y| g.get(x, y) * 0.8 + 0.1)
        };
        let scale = |img: &ImageBuffer| {
            let g = img.to_gray();
            ImageBuffer::from_gray_fn(40, 40, |x, y| g.get(x, y) * 0.8)
        };
        let p = FlowParams {
            min_size: 30,
            ..FlowParams::default()
        };
        let g = MatchTermField::empty(40, 40);
        let f1 = solve_flow(&scale(&a), &scale(&b), &g, &p).unwrap();
        let f2 = solve_flow(&shift(&a), &shift(&b), &g, &p).unwrap();
        for (x, y) in f1.u().iter().zip(f2.u()) {
            assert!((x - y).abs() < 1e-3);
        }
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let tex = Texture::new(6, 40.0);
        let (a, b, _) = warped_pair(&tex, 40, 36, &Affine::translation(1.5, -1.0));
        let g = MatchTermField::empty(40, 36);
        let p = FlowParams {
            min_size: 30,
            ..FlowParams::default()
        };
        let f1 = solve_flow(
            &a,
            &b,
            &g,
            &FlowParams {
                parallel: true,
                ..p
            },
        )
        .unwrap();
        let f2 = solve_flow(
            &a,
            &b,
            &g,
            &FlowParams {
                parallel: false,
                ..p
            },
        )
        .unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let a = ImageBuffer::from_gray_fn(10, 10, |_, _| 0.0);
        let b = ImageBuffer::from_gray_fn(10, 11, |_, _| 0.0);
        assert!(solve_flow(
            &a,
            &b,
            &MatchTermField::empty(10, 10),
            &FlowParams::default()
        )
        .is_err());
        assert!(solve_flow(
            &a,
            &a,
            &MatchTermField::empty(9, 10),
            &FlowParams::default()
        )
        .is_err());
    }

    #[test]
    fn flat_region_matches_exert_no_force() {
        // textured left half, flat right half
        let tex = Texture::new(12, 48.0);
        let base = tex.render(48, 32, |x, y| (x, y)).to_gray();
        let a = ImageBuffer::from_gray_fn(48, 32, |x, y| if x < 24 { base.get(x, y) } else { 0.5 });
        let b = ImageBuffer::from_gray_fn(48, 32, |x, y| {
            if x < 24 {
                base.get((x + 1).min(47), y)
            } else {
                0.5
            }
        });
        let p = FlowParams {
            min_size: 24,
            ..FlowParams::default()
        };
        let flat = [Match {
            x1: 40.0,
            y1: 16.0,
            x2: 35.0,
            y2: 20.0,
            score: 1.0,
        }];
        let g = rasterize_matches(&flat, &a, &b, &p).unwrap();
        assert_eq!(g.get(40, 16).unwrap().1, 0.0);
        let with = solve_flow(&a, &b, &g, &p).unwrap();
        let without = solve_flow(&a, &b, &MatchTermField::empty(48, 32), &p).unwrap();
        assert_eq!(with, without);
    }

    #[test]
    fn normalized_color_tensor_is_bounded() {
        let tex = Texture::new(13, 32.0);
        let (a, b, _) = warped_pair(&tex, 32, 32, &Affine::translation(1.0, 0.0));
        let p = FlowParams::default();
        let p1 = prepared_planes(&a, p.sigma);
        let p2 = prepared_planes(&b, p.sigma);
        let alpha = smoothness_weight(&p1, &p);
        let d1: Vec<Derivs> = p1.iter().map(Derivs::new).collect();
        let d2: Vec<Derivs> = p2.iter().map(Derivs::new).collect();
        let f = FlowField::zeros(32, 32);
        let g = MatchTermField::empty(32, 32);
        let lin = linearize(&d1, &d2, &alpha, &f, &g, 0.0, &p);
        for t in &lin.j0 {
            let weight = t[0] + t[3];
            assert!((0.0..1.0).contains(&weight), "{weight}");
        }
    }
}
