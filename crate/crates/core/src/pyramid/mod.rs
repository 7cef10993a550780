//! Bottom-up multi-level correlation pyramid.
//!
//! Level 0 holds one rectified correlation map per atomic 4x4 patch of
//! image 1. Each higher level doubles the patch size; a parent map is the
//! rectified average of its children's maps after 3x3 max-pooling,
//! decimation by 2 and a shift by the child's quadrant offset.
//!
//! Maps are stored once per distinct content: patches whose maps are
//! provably identical (same prototype at level 0, or the same tuple of child
//! maps above) share storage.

mod grid;
mod kernels;
mod prototypes;

use std::collections::HashMap;
use std::path::Path;

pub use grid::{map_dims, top_level, PatchGrid, ATOMIC_SIZE, QUADRANT_OFFSETS};
pub use kernels::{
    aggregate_map, correlate_patch, patch_descriptor, patch_similarity, rectify, ChildMap,
    PaddedPlanes, PatchDescriptor, PATCH_DIM,
};
pub use prototypes::{cluster_prototypes, PrototypeDictionary};

use crate::descriptor::DescriptorField;
use crate::error::{Error, Result};
use crate::image::{save_pnm, ImageBuffer};
use crate::par;

/// Default rectification exponent.
pub const DEFAULT_LAMBDA: f32 = 1.4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PyramidOptions {
    pub lambda: f32,
    pub parallel: bool,
}

impl Default for PyramidOptions {
    fn default() -> Self {
        PyramidOptions {
            lambda: DEFAULT_LAMBDA,
            parallel: par::PARALLEL_AVAILABLE,
        }
    }
}

impl PyramidOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Borrowed correlation map of one patch.
#[derive(Clone, Copy, Debug)]
pub struct CorrelationMap<'a> {
    pub owner: (i32, i32),
    pub level: usize,
    pub width: usize,
    pub height: usize,
    pub scores: &'a [f32],
    pub valid_children: u8,
}

impl CorrelationMap<'_> {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.scores[y * self.width + x]
    }

    /// Value at signed coordinates, `None` outside the map.
    #[inline]
    pub fn get_checked(&self, x: i64, y: i64) -> Option<f32> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            None
        } else {
            Some(self.scores[y as usize * self.width + x as usize])
        }
    }

    /// Position and value of the maximum; ties go to the lowest `(y, x)`.
    pub fn argmax(&self) -> ((usize, usize), f32) {
        let mut best = (0, f32::NEG_INFINITY);
        for (i, &v) in self.scores.iter().enumerate() {
            if v > best.1 {
                best = (i, v);
            }
        }
        ((best.0 % self.width, best.0 / self.width), best.1)
    }
}

/// All maps of one level.
#[derive(Clone, Debug)]
pub struct PyramidLevel {
    grid: PatchGrid,
    map_width: usize,
    map_height: usize,
    map_index: Vec<u32>,
    scores: Vec<f32>,
}

impl PyramidLevel {
    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }

    pub fn map_dims(&self) -> (usize, usize) {
        (self.map_width, self.map_height)
    }

    /// Number of maps actually stored.
    pub fn distinct_maps(&self) -> usize {
        self.scores.len() / (self.map_width * self.map_height).max(1)
    }

    /// Storage slot used by `patch`.
    pub fn map_slot(&self, patch: usize) -> usize {
        self.map_index[patch] as usize
    }

    pub fn slot_scores(&self, slot: usize) -> &[f32] {
        let n = self.map_width * self.map_height;
        &self.scores[slot * n..(slot + 1) * n]
    }

    pub fn map(&self, patch: usize) -> CorrelationMap<'_> {
        CorrelationMap {
            owner: self.grid.position(patch),
            level: self.grid.level,
            width: self.map_width,
            height: self.map_height,
            scores: self.slot_scores(self.map_slot(patch)),
            valid_children: self.grid.valid_children(patch),
        }
    }

    fn child_view(&self, slot: u32) -> ChildMap<'_> {
        ChildMap {
            width: self.map_width,
            height: self.map_height,
            data: self.slot_scores(slot as usize),
        }
    }

    pub fn score_bytes(&self) -> usize {
        self.scores.len() * std::mem::size_of::<f32>()
    }

    /// Computes the next level up.
    pub fn aggregate(
        &self,
        image1: (usize, usize),
        image2: (usize, usize),
        opts: &PyramidOptions,
    ) -> PyramidLevel {
        let grid = self.grid.parent(image1.0, image1.1);
        let (mw, mh) = map_dims(grid.level, image2.0, image2.1);

        // parents reading the same child maps get the same map
        let mut slots: HashMap<[Option<u32>; 4], u32> = HashMap::new();
        let mut keys: Vec<[Option<u32>; 4]> = Vec::new();
        let mut map_index = Vec::with_capacity(grid.len());
        for i in 0..grid.len() {
            let key = grid
                .children(i)
                .map(|c| c.map(|c| self.map_index[c as usize]));
            let slot = *slots.entry(key).or_insert_with(|| {
                keys.push(key);
                (keys.len() - 1) as u32
            });
            map_index.push(slot);
        }

        let n = mw * mh;
        let mut scores = vec![0.0f32; keys.len() * n];
        par::for_each_chunk_mut(&mut scores, n, opts.parallel, |slot, out| {
            let kids = keys[slot].map(|c| c.map(|s| self.child_view(s)));
            aggregate_map(&kids, mw, mh, opts.lambda, out);
        });
        PyramidLevel {
            grid,
            map_width: mw,
            map_height: mh,
            map_index,
            scores,
        }
    }
}

/// Per-level storage statistics.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LevelStats {
    pub level: usize,
    pub patch_size: usize,
    pub patches: usize,
    pub distinct_maps: usize,
    pub map_width: usize,
    pub map_height: usize,
    pub bytes: usize,
}

#[derive(Clone, Debug)]
pub struct CorrelationPyramid {
    levels: Vec<PyramidLevel>,
    image1: (usize, usize),
    image2: (usize, usize),
    lambda: f32,
}

impl CorrelationPyramid {
    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, l: usize) -> &PyramidLevel {
        &self.levels[l]
    }

    pub fn top(&self) -> &PyramidLevel {
        self.levels.last().expect("pyramid has a level")
    }

    /// Index of the top level.
    pub fn top_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// Patches of level `l` that no patch of level `l + 1` has as a child.
    /// Every top-level patch counts; below the top this only happens on
    /// very elongated images.
    pub fn orphans(&self, l: usize) -> Vec<usize> {
        let n = self.levels[l].grid.len();
        if l + 1 >= self.levels.len() {
            return (0..n).collect();
        }
        let mut has_parent = vec![false; n];
        let up = &self.levels[l + 1].grid;
        for i in 0..up.len() {
            for c in up.children(i).into_iter().flatten() {
                has_parent[c as usize] = true;
            }
        }
        (0..n).filter(|&i| !has_parent[i]).collect()
    }

    /// Patch side at the top level.
    pub fn top_level_size(&self) -> usize {
        self.top().grid.patch_size
    }

    pub fn image1_size(&self) -> (usize, usize) {
        self.image1
    }

    pub fn image2_size(&self) -> (usize, usize) {
        self.image2
    }

    pub fn lambda(&self) -> f32 {
        self.lambda
    }

    pub fn stats(&self) -> Vec<LevelStats> {
        self.levels
            .iter()
            .enumerate()
            .map(|(l, lv)| LevelStats {
                level: l,
                patch_size: lv.grid.patch_size,
                patches: lv.grid.len(),
                distinct_maps: lv.distinct_maps(),
                map_width: lv.map_width,
                map_height: lv.map_height,
                bytes: lv.score_bytes(),
            })
            .collect()
    }

    /// Bytes of score storage across all levels.
    pub fn score_bytes(&self) -> usize {
        self.levels.iter().map(PyramidLevel::score_bytes).sum()
    }

    /// Score storage an unshared pyramid over the same grids would need:
    /// `sum_l |G_l| * W' * H' / 4^l * 4` bytes.
    pub fn analytic_bytes(&self) -> f64 {
        let wh = (self.image2.0 * self.image2.1) as f64;
        self.levels
            .iter()
            .enumerate()
            .map(|(l, lv)| lv.grid.len() as f64 * wh / 4f64.powi(l as i32) * 4.0)
            .sum()
    }
}

fn check_inputs(
    field1: &DescriptorField,
    field2: &DescriptorField,
    opts: &PyramidOptions,
) -> Result<()> {
    opts.validate()?;
    if field1.width() < ATOMIC_SIZE || field1.height() < ATOMIC_SIZE {
        return Err(Error::TooSmall {
            width: field1.width(),
            height: field1.height(),
            min: ATOMIC_SIZE,
        });
    }
    if field2.width() == 0 || field2.height() == 0 {
        return Err(Error::InvalidImage("image 2 is empty".into()));
    }
    Ok(())
}

/// Exact pyramid with default options.
pub fn build_pyramid(
    field1: &DescriptorField,
    field2: &DescriptorField,
    lambda: f32,
) -> Result<CorrelationPyramid> {
    build_pyramid_with(
        field1,
        field2,
        &PyramidOptions {
            lambda,
            ..PyramidOptions::default()
        },
    )
}

pub fn build_pyramid_with(
    field1: &DescriptorField,
    field2: &DescriptorField,
    opts: &PyramidOptions,
) -> Result<CorrelationPyramid> {
    check_inputs(field1, field2, opts)?;
    let grid = PatchGrid::atomic(field1.width(), field1.height());
    let padded = PaddedPlanes::new(field2);
    let n = field2.width() * field2.height();
    let mut scores = vec![0.0f32; grid.len() * n];
    par::for_each_chunk_mut(&mut scores, n, opts.parallel, |i, out| {
        let (x, y) = grid.position(i);
        let patch = patch_descriptor(field1, x, y);
        correlate_patch(&patch, &padded, opts.lambda, out);
    });
    let map_index = (0..grid.len() as u32).collect();
    Ok(finish(grid, map_index, scores, field1, field2, opts))
}

/// Pyramid whose level-0 maps come from `dict`'s prototypes, one
/// correlation per prototype in use.
pub fn build_pyramid_approx(
    field1: &DescriptorField,
    field2: &DescriptorField,
    dict: &PrototypeDictionary,
    opts: &PyramidOptions,
) -> Result<CorrelationPyramid> {
    check_inputs(field1, field2, opts)?;
    let grid = PatchGrid::atomic(field1.width(), field1.height());
    dict.check_compatible(field1.width(), field1.height(), grid.len())?;

    // compact prototype ids to the ones actually assigned
    let mut slot_of = vec![u32::MAX; dict.size()];
    let mut used = Vec::new();
    let map_index: Vec<u32> = dict
        .assignment()
        .iter()
        .map(|&a| {
            let a = a as usize;
            if slot_of[a] == u32::MAX {
                slot_of[a] = used.len() as u32;
                used.push(a);
            }
            slot_of[a]
        })
        .collect();

    let padded = PaddedPlanes::new(field2);
    let n = field2.width() * field2.height();
    let mut scores = vec![0.0f32; used.len() * n];
    par::for_each_chunk_mut(&mut scores, n, opts.parallel, |s, out| {
        correlate_patch(&dict.centroids()[used[s]], &padded, opts.lambda, out);
    });
    Ok(finish(grid, map_index, scores, field1, field2, opts))
}

fn finish(
    grid: PatchGrid,
    map_index: Vec<u32>,
    scores: Vec<f32>,
    field1: &DescriptorField,
    field2: &DescriptorField,
    opts: &PyramidOptions,
) -> CorrelationPyramid {
    let image1 = (field1.width(), field1.height());
    let image2 = (field2.width(), field2.height());
    let mut levels = vec![PyramidLevel {
        grid,
        map_width: image2.0,
        map_height: image2.1,
        map_index,
        scores,
    }];
    for _ in 0..top_level(image1.0, image1.1) {
        let next = levels.last().unwrap().aggregate(image1, image2, opts);
        // very elongated images run out of parents before the nominal top
        if next.grid.is_empty() {
            break;
        }
        log::debug!(
            "level {}: {} patches, {} maps of {}x{}",
            next.grid.level,
            next.grid.len(),
            next.distinct_maps(),
            next.map_width,
            next.map_height
        );
        levels.push(next);
    }
    CorrelationPyramid {
        levels,
        image1,
        image2,
        lambda: opts.lambda,
    }
}

/// Writes a map as an 8-bit PGM heat image (debugging aid).
pub fn dump_map_pgm(map: &CorrelationMap, path: impl AsRef<Path>) -> Result<()> {
    let img = ImageBuffer::new(map.width, map.height, 1, map.scores.to_vec())?;
    save_pnm(path, &img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptor::{compute_descriptors, DescriptorParams};
    use crate::image::ImageBuffer;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(w: usize, h: usize, seed: u64) -> DescriptorField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img =
            ImageBuffer::new(w, h, 1, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap();
        compute_descriptors(&img, &DescriptorParams::default()).unwrap()
    }

    fn flat_field(w: usize, h: usize) -> DescriptorField {
        let img = ImageBuffer::from_gray_fn(w, h, |_, _| 0.5);
        compute_descriptors(&img, &DescriptorParams::default()).unwrap()
    }

    #[test]
    fn level_count_follows_loop_guard() {
        let f = flat_field(64, 64);
        let p = build_pyramid(&f, &f, DEFAULT_LAMBDA).unwrap();
        let sizes: Vec<_> = p.levels().iter().map(|l| l.grid().patch_size).collect();
        assert_eq!(sizes, vec![4, 8, 16, 32, 64]);
        let f4 = flat_field(4, 4);
        assert_eq!(build_pyramid(&f4, &f4, 1.4).unwrap().levels().len(), 1);
    }

    #[test]
    fn too_small_rejected() {
        let f = flat_field(3, 8);
        assert!(matches!(
            build_pyramid(&f, &f, 1.4),
            Err(Error::TooSmall { .. })
        ));
    }

    #[test]
    fn self_match_peaks_at_own_center() {
        let f = random_field(24, 20, 3);
        let p = build_pyramid(&f, &f, DEFAULT_LAMBDA).unwrap();
        let l0 = p.level(0);
        for i in 0..l0.grid().len() {
            let m = l0.map(i);
            let (x, y) = m.owner;
            assert!((m.get(x as usize, y as usize) - 1.0).abs() < 1e-5);
            let ((ax, ay), v) = m.argmax();
            assert!(v <= m.get(x as usize, y as usize) + 1e-6, "{ax},{ay}");
        }
    }

    #[test]
    fn flat_images_score_one_in_interior() {
        let f = flat_field(16, 16);
        let p = build_pyramid(&f, &f, DEFAULT_LAMBDA).unwrap();
        let m = p.level(0).map(0);
        // windows fully inside image 2 see 16 flat pixels
        for y in 2..15 {
            for x in 2..15 {
                assert!((m.get(x, y) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_children_give_constant_parent() {
        let c = 0.37f32;
        let data = vec![c; 9 * 7];
        let kid = ChildMap {
            width: 9,
            height: 7,
            data: &data,
        };
        let mut out = vec![0.0; 5 * 4];
        aggregate_map(
            &[Some(kid), Some(kid), Some(kid), Some(kid)],
            5,
            4,
            1.4,
            &mut out,
        );
        // border cells read pool windows lying fully outside the child
        for y in 1..3 {
            for x in 1..4 {
                assert!((out[y * 5 + x] - c.powf(1.4)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn scores_stay_in_unit_range() {
        let f1 = random_field(37, 29, 5);
        let f2 = random_field(31, 33, 6);
        let p = build_pyramid(&f1, &f2, DEFAULT_LAMBDA).unwrap();
        for lv in p.levels() {
            for s in 0..lv.distinct_maps() {
                assert!(lv.slot_scores(s).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f1 = random_field(32, 32, 7);
        let f2 = random_field(32, 32, 8);
        let a = build_pyramid_with(
            &f1,
            &f2,
            &PyramidOptions {
                lambda: 1.4,
                parallel: true,
            },
        )
        .unwrap();
        let b = build_pyramid_with(
            &f1,
            &f2,
            &PyramidOptions {
                lambda: 1.4,
                parallel: false,
            },
        )
        .unwrap();
        for (la, lb) in a.levels().iter().zip(b.levels()) {
            assert_eq!(la.scores, lb.scores);
        }
    }

    #[test]
    fn map_dims_are_ceiled() {
        let f1 = random_field(16, 16, 1);
        let f2 = random_field(13, 9, 2);
        let p = build_pyramid(&f1, &f2, 1.4).unwrap();
        assert_eq!(p.level(1).map_dims(), (7, 5));
        assert_eq!(p.level(2).map_dims(), (4, 3));
    }

    #[test]
    fn lossless_dictionary_matches_exact() {
        let f1 = random_field(20, 24, 11);
        let f2 = random_field(22, 18, 12);
        let opts = PyramidOptions::default();
        let exact = build_pyramid_with(&f1, &f2, &opts).unwrap();
        let dict = PrototypeDictionary::lossless(&f1);
        let approx = build_pyramid_approx(&f1, &f2, &dict, &opts).unwrap();
        for (a, b) in exact.levels().iter().zip(approx.levels()) {
            for i in 0..a.grid().len() {
                assert_eq!(a.map(i).scores, b.map(i).scores);
            }
        }
    }

    #[test]
    fn approx_shares_level0_maps() {
        let f1 = random_field(32, 32, 21);
        let dict = cluster_prototypes(&f1, 5, 10, 1).unwrap();
        let p = build_pyramid_approx(&f1, &f1, &dict, &PyramidOptions::default()).unwrap();
        assert!(p.level(0).distinct_maps() <= 5);
        assert!(p.score_bytes() < build_pyramid(&f1, &f1, 1.4).unwrap().score_bytes());
    }

    #[test]
    fn dictionary_mismatch_rejected() {
        let f1 = random_field(16, 16, 1);
        let other = random_field(20, 16, 1);
        let dict = PrototypeDictionary::lossless(&other);
        assert!(matches!(
            build_pyramid_approx(&f1, &f1, &dict, &PyramidOptions::default()),
            Err(Error::DictionaryMismatch(_))
        ));
    }

    #[test]
    fn pgm_dump_writes_file() {
        let f = random_field(8, 8, 1);
        let p = build_pyramid(&f, &f, 1.4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        dump_map_pgm(&p.level(0).map(0), &path).unwrap();
        assert!(std::fs::metadata(&path).unwrap().len() > 64);
    }

    #[test]
    fn atomic_scores_match_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let f1 = random_field(8, 8, rng.random());
        let f2 = random_field(8, 8, rng.random());
        let p = build_pyramid(&f1, &f2, 1.4).unwrap();
        let lv = p.level(0);
        for i in 0..lv.grid().len() {
            let (px, py) = lv.grid().position(i);
            let m = lv.map(i);
            for qy in 0..8i32 {
                for qx in 0..8i32 {
                    let mut s = 0.0f64;
                    for b in -2..2 {
                        for a in -2..2 {
                            let (x2, y2) = (qx + a, qy + b);
                            if x2 < 0 || y2 < 0 || x2 >= 8 || y2 >= 8 {
                                continue;
                            }
                            let d1 = f1.get((px + a) as usize, (py + b) as usize);
                            let d2 = f2.get(x2 as usize, y2 as usize);
                            s += d1
                                .iter()
                                .zip(d2)
                                .map(|(u, v)| (*u as f64) * (*v as f64))
                                .sum::<f64>();
                        }
                    }
                    let want = (s / 16.0).min(1.0).powf(1.4);
                    assert!((m.get(qx as usize, qy as usize) as f64 - want).abs() < 1e-6);
                }
            }
        }
    }
}
