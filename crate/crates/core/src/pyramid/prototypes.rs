//! Spherical k-means codebook of atomic patch descriptors.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::grid::PatchGrid;
use super::kernels::{patch_descriptor, patch_similarity, PatchDescriptor, PATCH_DIM};
use crate::descriptor::{DescriptorField, DESC_DIM};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PrototypeDictionary {
    centroids: Vec<PatchDescriptor>,
    assignment: Vec<u32>,
    requested: usize,
    image_size: (usize, usize),
}

impl PrototypeDictionary {
    /// One prototype per atomic patch: approximate mode then reproduces
    /// exact mode.
    pub fn lossless(field1: &DescriptorField) -> Self {
        let centroids = atomic_patches(field1);
        let n = centroids.len();
        PrototypeDictionary {
            centroids,
            assignment: (0..n as u32).collect(),
            requested: n,
            image_size: (field1.width(), field1.height()),
        }
    }

    /// Effective number of prototypes.
    pub fn size(&self) -> usize {
        self.centroids.len()
    }

    /// Size asked for before clamping.
    pub fn requested_size(&self) -> usize {
        self.requested
    }

    pub fn centroids(&self) -> &[PatchDescriptor] {
        &self.centroids
    }

    /// Prototype index per atomic patch, in atomic grid order.
    pub fn assignment(&self) -> &[u32] {
        &self.assignment
    }

    pub(crate) fn check_compatible(&self, w: usize, h: usize, patches: usize) -> Result<()> {
        if self.image_size != (w, h) || self.assignment.len() != patches {
            return Err(Error::DictionaryMismatch(format!(
                "dictionary built for {}x{} ({} patches), image is {w}x{h} ({patches} patches)",
                self.image_size.0,
                self.image_size.1,
                self.assignment.len()
            )));
        }
        Ok(())
    }

    /// Mean similarity between each patch and its prototype.
    pub fn mean_similarity(&self, field1: &DescriptorField) -> f32 {
        let patches = atomic_patches(field1);
        let s: f64 = patches
            .iter()
            .zip(&self.assignment)
            .map(|(p, &a)| patch_similarity(p, &self.centroids[a as usize]) as f64)
            .sum();
        (s / patches.len().max(1) as f64) as f32
    }
}

fn atomic_patches(field: &DescriptorField) -> Vec<PatchDescriptor> {
    let grid = PatchGrid::atomic(field.width(), field.height());
    grid.positions()
        .iter()
        .map(|&(x, y)| patch_descriptor(field, x, y))
        .collect()
}

fn sq_dist(a: &PatchDescriptor, b: &PatchDescriptor) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum()
}

fn bits(p: &PatchDescriptor) -> Vec<u32> {
    p.iter().map(|v| v.to_bits()).collect()
}

/// Nearest centroid by similarity; ties go to the lowest index.
fn nearest(p: &PatchDescriptor, centroids: &[PatchDescriptor]) -> u32 {
    let mut best = (0u32, f32::NEG_INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let s = patch_similarity(p, c);
        if s > best.1 {
            best = (k as u32, s);
        }
    }
    best.0
}

/// Re-projects each pixel's 9-vector onto the unit sphere.
fn normalize_pixels(c: &mut PatchDescriptor) {
    for px in c.chunks_exact_mut(DESC_DIM) {
        let n = px.iter().map(|v| v * v).sum::<f32>().sqrt();
        if n > 0.0 {
            px.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Distance-weighted seeding from distinct patches.
fn seed_centroids(
    patches: &[PatchDescriptor],
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<PatchDescriptor> {
    let first = rng.random_range(0..patches.len());
    let mut centroids = vec![patches[first]];
    let mut d2: Vec<f64> = patches
        .iter()
        .map(|p| sq_dist(p, &patches[first]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut t = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, d) in d2.iter().enumerate() {
            if *d <= 0.0 {
                continue;
            }
            pick = Some(i);
            if t < *d {
                break;
            }
            t -= d;
        }
        let pick = pick.expect("positive total has a positive entry");
        centroids.push(patches[pick]);
        for (d, p) in d2.iter_mut().zip(patches) {
            *d = d.min(sq_dist(p, &patches[pick]));
        }
    }
    centroids
}

/// Clusters the atomic patches of `field1` into at most `d` prototypes.
///
/// `d` is clamped to the number of distinct patch descriptors. Clusters whose
/// members are all bitwise identical end with that member as centroid, so a
/// dictionary at least as large as the set of distinct patches is lossless.
pub fn cluster_prototypes(
    field1: &DescriptorField,
    d: usize,
    iters: usize,
    seed: u64,
) -> Result<PrototypeDictionary> {
    if d == 0 {
        return Err(Error::InvalidParam("dictionary size must be >= 1".into()));
    }
    let patches = atomic_patches(field1);
    if patches.is_empty() {
        return Err(Error::TooSmall {
            width: field1.width(),
            height: field1.height(),
            min: 4,
        });
    }
    let distinct = patches.iter().map(bits).collect::<HashSet<_>>().len();
    let k = d.min(distinct);
    if k < d {
        log::info!("dictionary size clamped from {d} to {k} distinct patches");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = seed_centroids(&patches, k, &mut rng);
    let mut assignment: Vec<u32> = patches.iter().map(|p| nearest(p, &centroids)).collect();

    for _ in 0..iters {
        let mut sums = vec![[0.0f64; PATCH_DIM]; centroids.len()];
        let mut counts = vec![0usize; centroids.len()];
        for (p, &a) in patches.iter().zip(&assignment) {
            counts[a as usize] += 1;
            for (s, v) in sums[a as usize].iter_mut().zip(p.iter()) {
                *s += *v as f64;
            }
        }
        let mut reseeded = HashSet::new();
        for k in 0..centroids.len() {
            if counts[k] == 0 {
                // farthest patch from its own centroid, not already taken
                let far = patches
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| !reseeded.contains(i))
                    .map(|(i, p)| (i, patch_similarity(p, &centroids[assignment[i] as usize])))
                    .fold((0, f32::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                    .0;
                reseeded.insert(far);
                centroids[k] = patches[far];
                continue;
            }
            let inv = 1.0 / counts[k] as f64;
            let mut c = [0.0f32; PATCH_DIM];
            for (o, s) in c.iter_mut().zip(sums[k].iter()) {
                *o = (s * inv) as f32;
            }
            normalize_pixels(&mut c);
            centroids[k] = c;
        }
        let next: Vec<u32> = patches.iter().map(|p| nearest(p, &centroids)).collect();
        let stable = next == assignment && reseeded.is_empty();
        assignment = next;
        if stable {
            break;
        }
    }

    snap_uniform_clusters(&patches, &mut centroids, &assignment);
    let assignment: Vec<u32> = patches.iter().map(|p| nearest(p, &centroids)).collect();
    Ok(PrototypeDictionary {
        centroids,
        assignment,
        requested: d,
        image_size: (field1.width(), field1.height()),
    })
}

fn snap_uniform_clusters(
    patches: &[PatchDescriptor],
    centroids: &mut [PatchDescriptor],
    assignment: &[u32],
) {
    let mut first: Vec<Option<usize>> = vec![None; centroids.len()];
    let mut uniform = vec![true; centroids.len()];
    for (i, &a) in assignment.iter().enumerate() {
        let a = a as usize;
        match first[a] {
            None => first[a] = Some(i),
            Some(j) => {
                if uniform[a] && bits(&patches[i]) != bits(&patches[j]) {
                    uniform[a] = false;
                }
            }
        }
    }
    for k in 0..centroids.len() {
        if let (true, Some(j)) = (uniform[k], first[k]) {
            centroids[k] = patches[j];
        }
    }
}
