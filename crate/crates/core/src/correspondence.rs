//! Top-down pass: backtracking atomic correspondences out of the pyramid,
//! reciprocal filtering, and the end-to-end matcher.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::descriptor::{compute_descriptors_with, DescriptorParams};
use crate::error::{Error, Result};
use crate::image::{downsize, ImageBuffer};
use crate::par;
use crate::pyramid::{
    build_pyramid_approx, build_pyramid_with, cluster_prototypes, CorrelationMap,
    CorrelationPyramid, PyramidOptions, ATOMIC_SIZE, DEFAULT_LAMBDA, QUADRANT_OFFSETS,
};

/// One correspondence between image-1 and image-2 positions.
///
/// Coordinates use the pixel-edge convention: pixel `i` spans `[i, i+1)`,
/// so the center of an atomic patch covering pixels `0..4` is `2.0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub score: f32,
}

impl Match {
    pub fn displacement(&self) -> (f32, f32) {
        (self.x2 - self.x1, self.y2 - self.y1)
    }

    fn endpoint_key(&self) -> [u32; 4] {
        [self.y1, self.x1, self.y2, self.x2].map(f32::to_bits)
    }

    /// Lexicographic `(y1, x1, y2, x2)` order.
    fn endpoint_cmp(&self, o: &Match) -> std::cmp::Ordering {
        (self.y1, self.x1, self.y2, self.x2)
            .partial_cmp(&(o.y1, o.x1, o.y2, o.x2))
            .unwrap_or(std::cmp::Ordering::Equal)
    }

    /// Higher score wins; equal scores go to the lower endpoints.
    pub fn beats(&self, o: &Match) -> bool {
        self.score > o.score || (self.score == o.score && self.endpoint_cmp(o).is_lt())
    }
}

/// Reciprocally verified matches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub matches: Vec<Match>,
    pub params_fingerprint: u64,
    /// Side of the square image-1 region each match stands for.
    pub cell_size: f32,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }
}

/// Candidate child position and value for quadrant `quadrant` of a parent at
/// level position `parent_pos`: the argmax of the child map over the 3x3
/// window around `2 (p' + o_i)`. Ties go to the smallest `(dy, dx)`. Returns
/// `None` when the whole window is outside the map.
pub fn undo_max(
    child: &CorrelationMap,
    parent_pos: (i64, i64),
    quadrant: usize,
) -> Option<((usize, usize), f32)> {
    let (ox, oy) = QUADRANT_OFFSETS[quadrant];
    let cx = 2 * (parent_pos.0 + ox as i64);
    let cy = 2 * (parent_pos.1 + oy as i64);
    let mut best: Option<((usize, usize), f32)> = None;
    for dy in -1..=1 {
        for dx in -1..=1 {
            if let Some(v) = child.get_checked(cx + dx, cy + dy) {
                if best.is_none_or(|b| v > b.1) {
                    best = Some((((cx + dx) as usize, (cy + dy) as usize), v));
                }
            }
        }
    }
    best
}

/// Per-level tuple counts of a backtracking run, top level first.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BacktrackStats {
    pub tuples_per_level: Vec<usize>,
}

impl BacktrackStats {
    pub fn total(&self) -> usize {
        self.tuples_per_level.iter().sum()
    }
}

#[derive(Clone, Copy, Debug)]
struct Tuple {
    patch: u32,
    pos: u32,
    score: f32,
}

/// Keeps one tuple per `(patch, pos)`, the highest-scoring one.
fn dedup_max(mut tuples: Vec<Tuple>, parallel: bool) -> Vec<Tuple> {
    // scores are non-negative, so their bit patterns sort like the values
    par::sort_unstable_by_key(&mut tuples, parallel, |t| {
        (t.patch, t.pos, u32::MAX - t.score.to_bits())
    });
    tuples.dedup_by(|b, a| a.patch == b.patch && a.pos == b.pos);
    tuples
}

fn push_seeds(pyr: &CorrelationPyramid, l: usize, out: &mut Vec<Tuple>) {
    let level = pyr.level(l);
    for patch in pyr.orphans(l) {
        let m = level.map(patch);
        for (pos, &score) in m.scores.iter().enumerate() {
            out.push(Tuple {
                patch: patch as u32,
                pos: pos as u32,
                score,
            });
        }
    }
}

/// Backtracks from every cell of every top-level map, merging tuples that
/// reach the same `(patch, position)` by keeping the higher score. Patches
/// without a parent below the top (elongated images only) seed their own
/// paths. Returns unfiltered atomic correspondences in the working frame.
pub fn backtrack_all(pyr: &CorrelationPyramid, parallel: bool) -> (Vec<Match>, BacktrackStats) {
    let mut tuples = Vec::new();
    push_seeds(pyr, pyr.top_level(), &mut tuples);
    let mut stats = BacktrackStats {
        tuples_per_level: vec![tuples.len()],
    };

    for l in (1..=pyr.top_level()).rev() {
        let parent = pyr.level(l);
        let child = pyr.level(l - 1);
        let (pw, _) = parent.map_dims();
        let (cw, _) = child.map_dims();
        let mut expanded = par::flat_map_slice(&tuples, parallel, |t, out| {
            let pos = ((t.pos as usize % pw) as i64, (t.pos as usize / pw) as i64);
            for (q, c) in parent.grid().children(t.patch as usize).iter().enumerate() {
                let Some(c) = *c else { continue };
                let map = child.map(c as usize);
                if let Some(((x, y), v)) = undo_max(&map, pos, q) {
                    out.push(Tuple {
                        patch: c,
                        pos: (y * cw + x) as u32,
                        score: t.score + v,
                    });
                }
            }
        });
        push_seeds(pyr, l - 1, &mut expanded);
        tuples = dedup_max(expanded, parallel);
        stats.tuples_per_level.push(tuples.len());
    }

    let level0 = pyr.level(0);
    let (w0, _) = level0.map_dims();
    let matches = tuples
        .iter()
        .map(|t| {
            let (x1, y1) = level0.grid().position(t.patch as usize);
            Match {
                x1: x1 as f32,
                y1: y1 as f32,
                x2: (t.pos as usize % w0) as f32,
                y2: (t.pos as usize / w0) as f32,
                score: t.score,
            }
        })
        .collect();
    (matches, stats)
}

/// One step of a traced path: level, patch index, level position, value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathStep {
    pub level: usize,
    pub patch: usize,
    pub pos: (usize, usize),
    pub value: f32,
}

/// An atomic correspondence reached from a single seed, with its path.
#[derive(Clone, Debug, PartialEq)]
pub struct TracedMatch {
    pub found: Match,
    pub path: Vec<PathStep>,
}

/// Backtracks from a single top-level `(patch, position)` without merging.
pub fn backtrack_seed(
    pyr: &CorrelationPyramid,
    patch: usize,
    pos: (usize, usize),
) -> Vec<TracedMatch> {
    backtrack_from(pyr, pyr.top_level(), patch, pos)
}

/// Backtracks from `(patch, position)` of level `l` without merging.
pub fn backtrack_from(
    pyr: &CorrelationPyramid,
    l: usize,
    patch: usize,
    pos: (usize, usize),
) -> Vec<TracedMatch> {
    let value = pyr.level(l).map(patch).get(pos.0, pos.1);
    let mut frontier = vec![vec![PathStep {
        level: l,
        patch,
        pos,
        value,
    }]];
    for l in (1..=l).rev() {
        let parent = pyr.level(l);
        let child = pyr.level(l - 1);
        let mut next = Vec::new();
        for path in frontier {
            let last = *path.last().unwrap();
            let p = (last.pos.0 as i64, last.pos.1 as i64);
            for (q, c) in parent.grid().children(last.patch).iter().enumerate() {
                let Some(c) = *c else { continue };
                if let Some((cp, v)) = undo_max(&child.map(c as usize), p, q) {
                    let mut np = path.clone();
                    np.push(PathStep {
                        level: l - 1,
                        patch: c as usize,
                        pos: cp,
                        value: v,
                    });
                    next.push(np);
                }
            }
        }
        frontier = next;
    }
    let g0 = pyr.level(0).grid();
    frontier
        .into_iter()
        .map(|path| {
            let last = *path.last().unwrap();
            let (x1, y1) = g0.position(last.patch);
            let score = path.iter().fold(0.0f32, |s, p| s + p.value);
            TracedMatch {
                found: Match {
                    x1: x1 as f32,
                    y1: y1 as f32,
                    x2: last.pos.0 as f32,
                    y2: last.pos.1 as f32,
                    score,
                },
                path,
            }
        })
        .collect()
}

/// Atomic correspondences of one random feasible warp over an image-1 grid
/// of `width x height`: backtracking from a random top-level position of the
/// patch covering the image center, with every argmax replaced by a uniform
/// draw from `{-1, 0, 1}^2`. Returns `(x1, y1, x2, y2)` in pixels.
pub fn random_feasible_warp<R: Rng>(
    width: usize,
    height: usize,
    rng: &mut R,
) -> Vec<(i32, i32, i32, i32)> {
    let top = crate::pyramid::top_level(width, height);
    let size = (ATOMIC_SIZE << top) as i32;
    let (mw, mh) = crate::pyramid::map_dims(top, width, height);
    let start = (
        rng.random_range(0..mw) as i32,
        rng.random_range(0..mh) as i32,
    );
    let mut frontier = vec![((size / 2, size / 2), start)];
    for l in (1..=top).rev() {
        let shift = 1i32 << l;
        let mut next = Vec::with_capacity(frontier.len() * 4);
        for ((px, py), (qx, qy)) in frontier {
            for (ox, oy) in QUADRANT_OFFSETS {
                let c = (px + shift * ox, py + shift * oy);
                let m = (rng.random_range(-1..=1), rng.random_range(-1..=1));
                next.push((c, (2 * (qx + ox) + m.0, 2 * (qy + oy) + m.1)));
            }
        }
        frontier = next;
    }
    frontier
        .into_iter()
        .map(|((x1, y1), (x2, y2))| (x1, y1, x2, y2))
        .collect()
}

/// Keeps the matches that are the best within the `cell` x `cell` square
/// centered on each of their endpoints, in both images. Identical endpoint
/// pairs are merged first.
/// Output is sorted by `(y1, x1, y2, x2)`.
pub fn reciprocal_filter(raw: &[Match], cell: f32) -> Vec<Match> {
    reciprocal_filter_indices(raw, cell)
        .into_iter()
        .map(|i| raw[i])
        .collect()
}

/// Indices into `raw` of the matches [`reciprocal_filter`] keeps. Among
/// duplicates of one endpoint pair the highest score (then lowest index)
/// represents the pair.
pub fn reciprocal_filter_indices(raw: &[Match], cell: f32) -> Vec<usize> {
    let mut unique: HashMap<[u32; 4], usize> = HashMap::with_capacity(raw.len());
    for (i, m) in raw.iter().enumerate() {
        unique
            .entry(m.endpoint_key())
            .and_modify(|e| {
                if m.score > raw[*e].score {
                    *e = i
                }
            })
            .or_insert(i);
    }
    let mut all: Vec<usize> = unique.into_values().collect();
    all.sort_by(|a, b| raw[*a].endpoint_cmp(&raw[*b]));

    // a match survives iff no better match has an endpoint strictly within
    // half a cell of its own, in either image; scanning best-first, every
    // point seen so far beats the current one
    let mut order = all.clone();
    order.sort_by(|a, b| {
        let (ma, mb) = (&raw[*a], &raw[*b]);
        mb.score.total_cmp(&ma.score).then(ma.endpoint_cmp(mb))
    });
    let half = cell / 2.0;
    let mut seen1 = Occupancy::new(half);
    let mut seen2 = Occupancy::new(half);
    let mut keep = vec![false; raw.len()];
    for i in order {
        let m = &raw[i];
        let beaten1 = seen1.any_within(m.x1, m.y1);
        let beaten2 = seen2.any_within(m.x2, m.y2);
        keep[i] = !beaten1 && !beaten2;
        seen1.insert(m.x1, m.y1);
        seen2.insert(m.x2, m.y2);
    }
    all.into_iter().filter(|&i| keep[i]).collect()
}

/// Distinct points hashed into square buckets of side `half`, answering
/// "is any point strictly within `half` (Chebyshev) of a query".
struct Occupancy {
    half: f32,
    exact: HashSet<(u32, u32)>,
    buckets: HashMap<(i64, i64), Vec<(f32, f32)>>,
}

impl Occupancy {
    fn new(half: f32) -> Self {
        Occupancy {
            half,
            exact: HashSet::new(),
            buckets: HashMap::new(),
        }
    }

    fn key(&self, x: f32, y: f32) -> (i64, i64) {
        (
            (x / self.half).floor() as i64,
            (y / self.half).floor() as i64,
        )
    }

    fn insert(&mut self, x: f32, y: f32) {
        if self.exact.insert((x.to_bits(), y.to_bits())) {
            let k = self.key(x, y);
            self.buckets.entry(k).or_default().push((x, y));
        }
    }

    fn any_within(&self, x: f32, y: f32) -> bool {
        if self.exact.contains(&(x.to_bits(), y.to_bits())) {
            return true;
        }
        let (kx, ky) = self.key(x, y);
        (-1..=1).any(|dy| {
            (-1..=1).any(|dx| {
                self.buckets.get(&(kx + dx, ky + dy)).is_some_and(|pts| {
                    pts.iter()
                        .any(|(px, py)| (px - x).abs() < self.half && (py - y).abs() < self.half)
                })
            })
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchParams {
    pub descriptor: DescriptorParams,
    pub lambda: f32,
    /// Working resolution factor in `(0, 1]`.
    pub resolution: f32,
    /// Prototype dictionary size, 0 for exact correlation.
    pub dict_size: usize,
    pub kmeans_iters: usize,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            descriptor: DescriptorParams::default(),
            lambda: DEFAULT_LAMBDA,
            resolution: 0.5,
            dict_size: 0,
            kmeans_iters: 20,
            seed: 0,
            parallel: par::PARALLEL_AVAILABLE,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        self.descriptor.validate()?;
        if !(self.resolution > 0.0 && self.resolution <= 1.0) {
            return Err(Error::InvalidParam(format!(
                "resolution must be in (0, 1], got {}",
                self.resolution
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }

    /// Side of the image-1 cell a match stands for, in input pixels.
    pub fn cell_size(&self) -> f32 {
        ATOMIC_SIZE as f32 / self.resolution
    }

    /// Stable hash of every setting that affects the output.
    pub fn fingerprint(&self) -> u64 {
        let d = &self.descriptor;
        let mut s = String::new();
        let _ = write!(
            s,
            "nu={},{},{};slope={};mu={};lambda={};r={};d={};it={};seed={}",
            d.nu1,
            d.nu2,
            d.nu3,
            d.sigmoid_slope,
            d.regularizer,
            self.lambda,
            self.resolution,
            self.dict_size,
            self.kmeans_iters,
            self.seed
        );
        fnv1a(s.as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf29ce484222325u64, |h, b| {
        (h ^ *b as u64).wrapping_mul(0x100000001b3)
    })
}

/// Intermediate products of one matching run, mainly for diagnostics.
#[derive(Clone, Debug)]
pub struct MatchRun {
    /// Unfiltered matches in input-image coordinates.
    pub raw: Vec<Match>,
    /// Reciprocally filtered matches in input-image coordinates.
    pub filtered: Vec<Match>,
    pub backtrack: BacktrackStats,
    pub pyramid_bytes: usize,
    pub analytic_bytes: f64,
    pub level0_maps: usize,
}

/// Full pipeline keeping intermediate results.
pub fn match_images(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    params: &MatchParams,
) -> Result<MatchRun> {
    params.validate()?;
    let (w1, r1) = working_image(img1, params.resolution);
    let (w2, r2) = working_image(img2, params.resolution);
    let f1 = compute_descriptors_with(&w1, &params.descriptor, params.parallel)?;
    let f2 = compute_descriptors_with(&w2, &params.descriptor, params.parallel)?;
    let opts = PyramidOptions {
        lambda: params.lambda,
        parallel: params.parallel,
    };
    let pyr = if params.dict_size == 0 {
        build_pyramid_with(&f1, &f2, &opts)?
    } else {
        let dict = cluster_prototypes(&f1, params.dict_size, params.kmeans_iters, params.seed)?;
        build_pyramid_approx(&f1, &f2, &dict, &opts)?
    };
    let (raw, backtrack) = backtrack_all(&pyr, params.parallel);
    let filtered = reciprocal_filter(&raw, ATOMIC_SIZE as f32);
    let rescale = |m: &Match| Match {
        x1: m.x1 * r1.0,
        y1: m.y1 * r1.1,
        x2: m.x2 * r2.0,
        y2: m.y2 * r2.1,
        score: m.score,
    };
    Ok(MatchRun {
        raw: raw.iter().map(rescale).collect(),
        filtered: filtered.iter().map(rescale).collect(),
        backtrack,
        pyramid_bytes: pyr.score_bytes(),
        analytic_bytes: pyr.analytic_bytes(),
        level0_maps: pyr.level(0).distinct_maps(),
    })
}

/// Image at working resolution `r` and the per-axis factors mapping working
/// coordinates back to input ones.
pub(crate) fn working_image(img: &ImageBuffer, r: f32) -> (ImageBuffer, (f32, f32)) {
    if r >= 1.0 {
        (img.clone(), (1.0, 1.0))
    } else {
        downsize(img, 1.0 / r)
    }
}

/// Matches `img1` against `img2`; coordinates are in the input frames.
pub fn deep_matching(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    params: &MatchParams,
) -> Result<MatchSet> {
    let run = match_images(img1, img2, params)?;
    Ok(MatchSet {
        matches: run.filtered,
        params_fingerprint: params.fingerprint(),
        cell_size: params.cell_size(),
    })
}

/// Serializes matches as `x1 y1 x2 y2 score` lines.
pub fn format_matches(matches: &[Match]) -> String {
    let mut s = String::with_capacity(matches.len() * 32);
    for m in matches {
        let _ = writeln!(s, "{} {} {} {} {}", m.x1, m.y1, m.x2, m.y2, m.score);
    }
    s
}

pub fn parse_matches(text: &str) -> Result<Vec<Match>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| Error::BadMatchLine {
            line: i + 1,
            reason,
        };
        let vals = line
            .split_whitespace()
            .map(|t| t.parse::<f32>().map_err(|e| bad(format!("{t:?}: {e}"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != 5 {
            return Err(bad(format!("expected 5 fields, found {}", vals.len())));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite value".into()));
        }
        out.push(Match {
            x1: vals[0],
            y1: vals[1],
            x2: vals[2],
            y2: vals[3],
            score: vals[4],
        });
    }
    Ok(out)
}

pub fn write_matches(path: impl AsRef<Path>, matches: &[Match]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_matches(matches)).map_err(|e| Error::io(path, e))
}

pub fn read_matches(path: impl AsRef<Path>) -> Result<Vec<Match>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matches(&text)
}
