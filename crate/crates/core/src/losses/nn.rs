//! Nearest-neighbor search. Both searches return, for each query, the index
//! of the closest target with ties broken toward the lowest index, so their
//! outputs are identical.

use crate::geometry::Point3;
use crate::scalar::Real;

#[inline]
fn dist2<T: Real>(a: Point3<T>, b: Point3<T>) -> T {
    let dx = a.x - b.x;
    let dy = a.y - b.y;
    let dz = a.z - b.z;
    dx * dx + dy * dy + dz * dz
}

/// O(N·M) search.
pub fn nearest_brute<T: Real>(queries: &[Point3<T>], targets: &[Point3<T>]) -> Vec<usize> {
    queries
        .iter()
        .map(|&q| {
            let mut best = (T::infinity(), usize::MAX);
            for (j, &t) in targets.iter().enumerate() {
                let d = dist2(q, t);
                if d < best.0 {
                    best = (d, j);
                }
            }
            best.1
        })
        .collect()
}

/// Uniform grid over the targets' bounding box, searched in growing
/// Chebyshev shells around the query's (clamped) cell.
pub struct GridIndex<'a, T> {
    targets: &'a [Point3<T>],
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    /// Start of each cell's run in `order`; length cells + 1.
    starts: Vec<usize>,
    /// Target indices sorted by cell, ascending within a cell.
    order: Vec<usize>,
}

const MAX_DIM: usize = 64;

impl<'a, T: Real> GridIndex<'a, T> {
    pub fn new(targets: &'a [Point3<T>]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in targets {
            for (k, v) in [p.x, p.y, p.z].into_iter().enumerate() {
                lo[k] = lo[k].min(v.as_f64());
                hi[k] = hi[k].max(v.as_f64());
            }
        }
        if targets.is_empty() {
            lo = [0.0; 3];
            hi = [0.0; 3];
        }
        let ext: Vec<f64> = (0..3).map(|k| hi[k] - lo[k]).collect();
        let longest = ext.iter().cloned().fold(0.0, f64::max);
        // aim for about two targets per cell
        let floor = (longest * 1e-3).max(1e-12);
        let volume: f64 = ext.iter().map(|e| e.max(floor)).product();
        let cells_wanted = (targets.len() as f64 / 2.0).max(1.0);
        let cell = (volume / cells_wanted).cbrt().max(floor);
        let mut dims = [1usize; 3];
        for k in 0..3 {
            dims[k] = ((ext[k] / cell).floor() as usize + 1).min(MAX_DIM);
        }
        let mut index = Self {
            targets,
            origin: lo,
            cell,
            dims,
            starts: Vec::new(),
            order: Vec::new(),
        };
        let n_cells = dims[0] * dims[1] * dims[2];
        let cell_of: Vec<usize> = targets.iter().map(|&p| index.flat(index.cell_coords(p))).collect();
        let mut counts = vec![0usize; n_cells + 1];
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut order = vec![0usize; targets.len()];
        for (j, &c) in cell_of.iter().enumerate() {
            order[fill[c]] = j;
            fill[c] += 1;
        }
        index.starts = counts;
        index.order = order;
        index
    }

    fn cell_coords(&self, p: Point3<T>) -> [usize; 3] {
        let mut c = [0usize; 3];
        for (k, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            let f = ((v.as_f64() - self.origin[k]) / self.cell).floor();
            c[k] = if f.is_nan() || f < 0.0 {
                0
            } else {
                (f as usize).min(self.dims[k] - 1)
            };
        }
        c
    }

    fn flat(&self, c: [usize; 3]) -> usize {
        (c[2] * self.dims[1] + c[1]) * self.dims[0] + c[0]
    }

    fn scan_cell(&self, c: [usize; 3], q: Point3<T>, best: &mut (T, usize)) {
        let f = self.flat(c);
        for &j in &self.order[self.starts[f]..self.starts[f + 1]] {
            let d = dist2(q, self.targets[j]);
            if d < best.0 || (d == best.0 && j < best.1) {
                *best = (d, j);
            }
        }
    }

    pub fn nearest(&self, q: Point3<T>) -> usize {
        let c = self.cell_coords(q);
        let mut best = (T::infinity(), usize::MAX);
        let max_shell = self.dims.iter().copied().max().unwrap_or(1);
        for r in 0..max_shell {
            let r_i = r as isize;
            let range = |k: usize| {
                let lo = (c[k] as isize - r_i).max(0) as usize;
                let hi = ((c[k] as isize + r_i) as usize).min(self.dims[k] - 1);
                lo..=hi
            };
            for z in range(2) {
                for y in range(1) {
                    let on_yz_shell = z.abs_diff(c[2]) == r || y.abs_diff(c[1]) == r;
                    if on_yz_shell {
                        for x in range(0) {
                            self.scan_cell([x, y, z], q, &mut best);
                        }
                    } else {
                        for x in [c[0].wrapping_sub(r), c[0] + r] {
                            if x < self.dims[0] && (r > 0 || x == c[0]) {
                                self.scan_cell([x, y, z], q, &mut best);
                                if r == 0 {
                                    break;
                                }
                            }
                        }
                    }
                }
            }
            // anything outside shell r is at least r·cell away; the slack
            // absorbs rounding in the distance and cell computations
            if best.1 != usize::MAX {
                let reach = r as f64 * self.cell;
                let slack = 1.0 + 64.0 * T::epsilon().as_f64();
                if best.0.as_f64() * slack < reach * reach {
                    break;
                }
            }
        }
        best.1
    }
}

/// Grid-accelerated search; equal to [`nearest_brute`] element for element.
pub fn nearest_grid<T: Real>(queries: &[Point3<T>], targets: &[Point3<T>]) -> Vec<usize> {
    if targets.is_empty() {
        return vec![usize::MAX; queries.len()];
    }
    let grid = GridIndex::new(targets);
    queries.iter().map(|&q| grid.nearest(q)).collect()
}
