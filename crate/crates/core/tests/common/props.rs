//! Property checks on small randomized instances, shared by the proptest
//! suite and the acceptance runner.

use std::collections::HashMap;

use deepmatch::correspondence::{
    backtrack_all, backtrack_from, backtrack_seed, reciprocal_filter, undo_max, Match,
};
use deepmatch::descriptor::{compute_descriptors, DescriptorField, DescriptorParams};
use deepmatch::image::ImageBuffer;
use deepmatch::pyramid::{
    build_pyramid, build_pyramid_approx, cluster_prototypes, CorrelationPyramid, PyramidOptions,
};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A random image pair description.
#[derive(Clone, Debug)]
pub struct PairCase {
    pub w1: usize,
    pub h1: usize,
    pub w2: usize,
    pub h2: usize,
    pub seed: u64,
    /// Blocky images have large flat areas and exact ties.
    pub blocky: bool,
    pub lambda: f32,
    /// 0 for exact correlation.
    pub dict: usize,
}

pub fn pair_case() -> impl Strategy<Value = PairCase> {
    (
        4usize..20,
        4usize..20,
        1usize..20,
        1usize..20,
        any::<u64>(),
        any::<bool>(),
        1.0f32..3.0,
        prop_oneof![Just(0usize), 1usize..6],
    )
        .prop_map(|(w1, h1, w2, h2, seed, blocky, lambda, dict)| PairCase {
            w1,
            h1,
            w2,
            h2,
            seed,
            blocky,
            lambda,
            dict,
        })
}

fn image(w: usize, h: usize, blocky: bool, rng: &mut ChaCha8Rng) -> ImageBuffer {
    if blocky {
        let levels: Vec<f32> = (0..4)
            .map(|_| rng.random_range(0..4) as f32 / 3.0)
            .collect();
        ImageBuffer::from_gray_fn(w, h, |x, y| levels[(x / 3 + y / 3) % 4])
    } else {
        ImageBuffer::new(w, h, 1, (0..w * h).map(|_| rng.random::<f32>()).collect()).unwrap()
    }
}

pub fn fields(s: &PairCase) -> (DescriptorField, DescriptorField) {
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    let a = image(s.w1, s.h1, s.blocky, &mut rng);
    let b = image(s.w2, s.h2, s.blocky, &mut rng);
    let p = DescriptorParams::default();
    (
        compute_descriptors(&a, &p).unwrap(),
        compute_descriptors(&b, &p).unwrap(),
    )
}

pub fn pyramid(s: &PairCase) -> CorrelationPyramid {
    let (f1, f2) = fields(s);
    if s.dict == 0 {
        build_pyramid(&f1, &f2, s.lambda).unwrap()
    } else {
        let dict = cluster_prototypes(&f1, s.dict, 5, s.seed).unwrap();
        let opts = PyramidOptions {
            lambda: s.lambda,
            ..PyramidOptions::default()
        };
        build_pyramid_approx(&f1, &f2, &dict, &opts).unwrap()
    }
}

/// Every stored score is finite and inside `[0, 1]`.
pub fn scores_in_unit_range(s: &PairCase) -> Result<(), TestCaseError> {
    let pyr = pyramid(s);
    for (l, level) in pyr.levels().iter().enumerate() {
        for slot in 0..level.distinct_maps() {
            for &v in level.slot_scores(slot) {
                prop_assert!((0.0..=1.0).contains(&v), "level {l} score {v}");
            }
        }
    }
    Ok(())
}

pub fn raw_matches() -> impl Strategy<Value = Vec<Match>> {
    let coord = (0u32..40).prop_map(|v| v as f32 * 0.5);
    let score = (0u32..6).prop_map(|v| v as f32 * 0.25);
    prop::collection::vec(
        (coord.clone(), coord.clone(), coord.clone(), coord, score),
        0..60,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|(x1, y1, x2, y2, score)| Match {
                x1,
                y1,
                x2,
                y2,
                score,
            })
            .collect()
    })
}

fn endpoint_key(m: &Match) -> [u32; 4] {
    [m.y1, m.x1, m.y2, m.x2].map(f32::to_bits)
}

/// Filtering is idempotent and keeps exactly the matches that no better
/// match crowds within half a cell in either image.
pub fn reciprocity(raw: &[Match], cell: f32) -> Result<(), TestCaseError> {
    let once = reciprocal_filter(raw, cell);
    let twice = reciprocal_filter(&once, cell);
    prop_assert_eq!(&once, &twice);

    let mut unique: HashMap<[u32; 4], Match> = HashMap::new();
    for m in raw {
        unique
            .entry(endpoint_key(m))
            .and_modify(|e| {
                if m.score > e.score {
                    *e = *m
                }
            })
            .or_insert(*m);
    }
    let half = cell / 2.0;
    let near = |a: (f32, f32), b: (f32, f32)| (a.0 - b.0).abs() < half && (a.1 - b.1).abs() < half;
    let mut want: Vec<Match> = unique
        .values()
        .filter(|m| {
            !unique.values().any(|n| {
                n.beats(m) && (near((n.x1, n.y1), (m.x1, m.y1)) || near((n.x2, n.y2), (m.x2, m.y2)))
            })
        })
        .copied()
        .collect();
    want.sort_by_key(endpoint_key);
    let mut got = once.clone();
    got.sort_by_key(endpoint_key);
    prop_assert_eq!(got, want);
    Ok(())
}

/// Merged backtracking equals the best of all unmerged single-seed
/// backtracks for every atomic correspondence.
pub fn dedup_dominance(s: &PairCase) -> Result<(), TestCaseError> {
    let pyr = pyramid(s);
    let (merged, _) = backtrack_all(&pyr, false);
    let mut best: HashMap<[u32; 4], f32> = HashMap::new();
    for l in 0..=pyr.top_level() {
        let (mw, mh) = pyr.level(l).map_dims();
        for patch in pyr.orphans(l) {
            for y in 0..mh {
                for x in 0..mw {
                    for t in backtrack_from(&pyr, l, patch, (x, y)) {
                        let e = best
                            .entry(endpoint_key(&t.found))
                            .or_insert(f32::NEG_INFINITY);
                        *e = e.max(t.found.score);
                    }
                }
            }
        }
    }
    prop_assert_eq!(merged.len(), best.len());
    for m in &merged {
        let b = best.get(&endpoint_key(m));
        prop_assert_eq!(b.copied(), Some(m.score), "{:?}", m);
    }
    Ok(())
}

/// Every traced path re-reads to the same values, follows the local argmax
/// at each step, and sums to its score.
pub fn path_replay(s: &PairCase, pick: u64) -> Result<(), TestCaseError> {
    let pyr = pyramid(s);
    let top = pyr.top();
    let (tw, th) = top.map_dims();
    let n = (top.grid().len() * tw * th) as u64;
    let k = (pick % n) as usize;
    let (patch, pos) = (k / (tw * th), ((k % (tw * th)) % tw, (k % (tw * th)) / tw));
    for t in backtrack_seed(&pyr, patch, pos) {
        let mut sum = 0.0f32;
        for (i, step) in t.path.iter().enumerate() {
            let map = pyr.level(step.level).map(step.patch);
            prop_assert_eq!(map.get(step.pos.0, step.pos.1), step.value);
            if i > 0 {
                let parent = t.path[i - 1];
                let q = pyr
                    .level(parent.level)
                    .grid()
                    .children(parent.patch)
                    .iter()
                    .position(|c| *c == Some(step.patch as u32));
                prop_assert!(q.is_some());
                let redo = undo_max(&map, (parent.pos.0 as i64, parent.pos.1 as i64), q.unwrap());
                prop_assert_eq!(redo, Some((step.pos, step.value)));
            }
            sum += step.value;
        }
        prop_assert_eq!(sum, t.found.score);
        prop_assert_eq!(t.path.last().unwrap().level, 0);
    }
    Ok(())
}
