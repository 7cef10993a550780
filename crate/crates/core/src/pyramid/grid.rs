/// Unit quadrant offsets `(x, y)` of the four children of a patch.
pub const QUADRANT_OFFSETS: [(i32, i32); 4] = [(-1, -1), (-1, 1), (1, -1), (1, 1)];

/// Side of an atomic patch in pixels.
pub const ATOMIC_SIZE: usize = 4;

/// Patch centers of image 1 at one pyramid level.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGrid {
    pub level: usize,
    /// Patch side `4 * 2^level`.
    pub patch_size: usize,
    positions: Vec<(i32, i32)>,
    children: Vec<[Option<u32>; 4]>,
    lattice: Lattice,
}

/// Dense lookup from lattice coordinates to patch index.
#[derive(Clone, Debug, PartialEq)]
struct Lattice {
    origin: i32,
    cols: usize,
    rows: usize,
    index: Vec<u32>,
}

const NONE: u32 = u32::MAX;

impl Lattice {
    fn lookup(&self, x: i32, y: i32) -> Option<u32> {
        let (dx, dy) = (x - self.origin, y - self.origin);
        if dx < 0 || dy < 0 || dx % 4 != 0 || dy % 4 != 0 {
            return None;
        }
        let (c, r) = ((dx / 4) as usize, (dy / 4) as usize);
        if c >= self.cols || r >= self.rows {
            return None;
        }
        let v = self.index[r * self.cols + c];
        (v != NONE).then_some(v)
    }
}

impl PatchGrid {
    /// Atomic grid: centers `{2, 6, 10, ...}` on both axes, one per full
    /// 4x4 block of image 1.
    pub fn atomic(width: usize, height: usize) -> PatchGrid {
        let (cols, rows) = (width / ATOMIC_SIZE, height / ATOMIC_SIZE);
        let mut positions = Vec::with_capacity(cols * rows);
        for j in 0..rows {
            for i in 0..cols {
                positions.push((4 * i as i32 + 2, 4 * j as i32 + 2));
            }
        }
        let n = positions.len();
        PatchGrid {
            level: 0,
            patch_size: ATOMIC_SIZE,
            children: vec![[None; 4]; n],
            lattice: Lattice {
                origin: 2,
                cols,
                rows,
                index: (0..n as u32).collect(),
            },
            positions,
        }
    }

    /// Parent grid: lattice points inside image 1 with at least one child
    /// center `p + 2^level * o_i` present in `self`.
    pub fn parent(&self, width: usize, height: usize) -> PatchGrid {
        let level = self.level + 1;
        let shift = 1i32 << level;
        let (cols, rows) = (width.div_ceil(4), height.div_ceil(4));
        let mut positions = Vec::new();
        let mut children = Vec::new();
        let mut index = vec![NONE; cols * rows];
        for r in 0..rows {
            for c in 0..cols {
                let p = (4 * c as i32, 4 * r as i32);
                let kids = QUADRANT_OFFSETS
                    .map(|(ox, oy)| self.lattice.lookup(p.0 + shift * ox, p.1 + shift * oy));
                if kids.iter().any(Option::is_some) {
                    index[r * cols + c] = positions.len() as u32;
                    positions.push(p);
                    children.push(kids);
                }
            }
        }
        PatchGrid {
            level,
            patch_size: self.patch_size * 2,
            positions,
            children,
            lattice: Lattice {
                origin: 0,
                cols,
                rows,
                index,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[(i32, i32)] {
        &self.positions
    }

    #[inline]
    pub fn position(&self, i: usize) -> (i32, i32) {
        self.positions[i]
    }

    /// Child patch indices (into the grid one level below) per quadrant.
    #[inline]
    pub fn children(&self, i: usize) -> [Option<u32>; 4] {
        self.children[i]
    }

    /// Bitmask of present children, bit `q` for quadrant `q`.
    pub fn valid_children(&self, i: usize) -> u8 {
        self.children[i]
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_some())
            .fold(0, |m, (q, _)| m | (1 << q))
    }

    /// Index of the patch centered at `(x, y)`, if any.
    pub fn find(&self, x: i32, y: i32) -> Option<usize> {
        self.lattice.lookup(x, y).map(|v| v as usize)
    }
}

/// Number of levels above the atomic one: the smallest `L` with
/// `4 * 2^L >= max(width, height)`.
pub fn top_level(width: usize, height: usize) -> usize {
    let m = width.max(height);
    let mut n = ATOMIC_SIZE;
    let mut l = 0;
    while n < m {
        n *= 2;
        l += 1;
    }
    l
}

/// Correlation map extent at `level` for an image-2 size.
pub fn map_dims(level: usize, width2: usize, height2: usize) -> (usize, usize) {
    let f = 1usize << level;
    (width2.div_ceil(f), height2.div_ceil(f))
}
