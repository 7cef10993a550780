//! Scale- and rotation-invariant matching over a lattice of relative scales
//! and in-plane rotations.

use std::f32::consts::FRAC_PI_4;

use crate::correspondence::{
    match_images, reciprocal_filter_indices, Match, MatchParams, MatchSet,
};
use crate::error::Result;
use crate::image::{downsize, rotate_on_canvas, ImageBuffer, RotationFrame};
use crate::par;

/// One (scale, rotation) hypothesis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpCell {
    /// Log2 scale ratio between image 2 and image 1.
    pub sigma: f32,
    /// Rotation of image 2 relative to image 1, radians.
    pub theta: f32,
    /// Downsizing factor applied to image 1.
    pub sigma1: f32,
    /// Downsizing factor applied to image 2.
    pub sigma2: f32,
}

impl WarpCell {
    pub fn new(sigma: f32, theta: f32) -> Self {
        WarpCell {
            sigma,
            theta,
            sigma1: sigma.exp2().max(1.0),
            sigma2: (-sigma).exp2().max(1.0),
        }
    }
}

/// The default lattice: `sigma` in `-2, -1.5, ..., 2` by `theta = k pi/4`,
/// scale-major.
pub fn default_cells() -> Vec<WarpCell> {
    let mut cells = Vec::with_capacity(72);
    for s in 0..9 {
        for k in 0..8 {
            cells.push(WarpCell::new(-2.0 + 0.5 * s as f32, k as f32 * FRAC_PI_4));
        }
    }
    cells
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantParams {
    pub matching: MatchParams,
    pub cells: Vec<WarpCell>,
    /// Run cells concurrently (output does not depend on it).
    pub parallel_cells: bool,
}

impl Default for InvariantParams {
    fn default() -> Self {
        InvariantParams {
            matching: MatchParams::default(),
            cells: default_cells(),
            parallel_cells: false,
        }
    }
}

/// Input-frame geometry of one cell run, used to map matches back.
#[derive(Clone, Copy, Debug)]
pub struct CellFrame {
    /// Image-1 working-to-input factors.
    pub ratio1: (f32, f32),
    /// Image-2 working-to-canvas factors.
    pub ratio2: (f32, f32),
    pub rotation: Option<RotationFrame>,
}

impl CellFrame {
    /// Maps a match found on the transformed pair back to the input pair.
    pub fn rectify(&self, m: &Match) -> Match {
        let (cx, cy) = (m.x2 * self.ratio2.0, m.y2 * self.ratio2.1);
        let (x2, y2) = match &self.rotation {
            Some(f) => f.to_source(cx, cy),
            None => (cx, cy),
        };
        Match {
            x1: m.x1 * self.ratio1.0,
            y1: m.y1 * self.ratio1.1,
            x2,
            y2,
            score: m.score,
        }
    }

    /// Inverse of [`CellFrame::rectify`].
    pub fn unrectify(&self, m: &Match) -> Match {
        let (cx, cy) = match &self.rotation {
            Some(f) => f.to_canvas(m.x2, m.y2),
            None => (m.x2, m.y2),
        };
        Match {
            x1: m.x1 / self.ratio1.0,
            y1: m.y1 / self.ratio1.1,
            x2: cx / self.ratio2.0,
            y2: cy / self.ratio2.1,
            score: m.score,
        }
    }
}

/// Transformed image pair of one cell.
pub fn prepare_cell(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    cell: &WarpCell,
) -> (ImageBuffer, ImageBuffer, CellFrame) {
    let (i1, ratio1) = if cell.sigma1 > 1.0 {
        downsize(img1, cell.sigma1)
    } else {
        (img1.clone(), (1.0, 1.0))
    };
    let (rot, rotation) = if cell.theta == 0.0 {
        (img2.clone(), None)
    } else {
        let (r, f) = rotate_on_canvas(img2, -cell.theta);
        (r, Some(f))
    };
    let (i2, ratio2) = if cell.sigma2 > 1.0 {
        downsize(&rot, cell.sigma2)
    } else {
        (rot, (1.0, 1.0))
    };
    (
        i1,
        i2,
        CellFrame {
            ratio1,
            ratio2,
            rotation,
        },
    )
}

#[derive(Clone, Debug)]
pub struct InvariantResult {
    pub set: MatchSet,
    /// Index into the cell list of the run that produced each kept match.
    pub provenance: Vec<usize>,
    /// Unfiltered match count contributed by each cell.
    pub raw_per_cell: Vec<usize>,
}

impl InvariantResult {
    /// Kept matches per cell.
    pub fn kept_per_cell(&self, cells: usize) -> Vec<usize> {
        let mut h = vec![0; cells];
        self.provenance.iter().for_each(|&c| h[c] += 1);
        h
    }
}

/// Unfiltered, rectified matches of one cell.
pub fn run_cell(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    cell: &WarpCell,
    params: &MatchParams,
) -> Result<Vec<Match>> {
    let (i1, i2, frame) = prepare_cell(img1, img2, cell);
    let run = match_images(&i1, &i2, params)?;
    Ok(run.raw.iter().map(|m| frame.rectify(m)).collect())
}

/// Matches over every cell, then keeps the reciprocal best of the union.
pub fn match_invariant(
    img1: &ImageBuffer,
    img2: &ImageBuffer,
    params: &InvariantParams,
) -> Result<InvariantResult> {
    params.matching.validate()?;
    let per_cell: Vec<Result<Vec<Match>>> =
        par::map_slice(&params.cells, params.parallel_cells, |c| {
            log::debug!("cell sigma={} theta={}", c.sigma, c.theta);
            run_cell(img1, img2, c, &params.matching)
        });
    let mut union = Vec::new();
    let mut origin = Vec::new();
    let mut raw_per_cell = Vec::with_capacity(per_cell.len());
    for (k, r) in per_cell.into_iter().enumerate() {
        let ms = r?;
        raw_per_cell.push(ms.len());
        origin.extend(std::iter::repeat_n(k, ms.len()));
        union.extend(ms);
    }
    let cell = params.matching.cell_size();
    let kept = reciprocal_filter_indices(&union, cell);
    Ok(InvariantResult {
        set: MatchSet {
            matches: kept.iter().map(|&i| union[i]).collect(),
            params_fingerprint: params.matching.fingerprint() ^ cells_hash(&params.cells),
            cell_size: cell,
        },
        provenance: kept.iter().map(|&i| origin[i]).collect(),
        raw_per_cell,
    })
}

fn cells_hash(cells: &[WarpCell]) -> u64 {
    let s: String = cells
        .iter()
        .map(|c| format!("{},{};", c.sigma, c.theta))
        .collect();
    crate::correspondence::fnv1a(s.as_bytes())
}
