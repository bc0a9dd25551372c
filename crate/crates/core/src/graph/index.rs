//! Uniform-grid spatial index over vertex states.
//!
//! Cells tile the state box; wrapped axes tile periodically. Queries visit
//! Chebyshev rings of cells around the query cell until the k-th best distance
//! is strictly below the distance to any unvisited cell. When a ring would
//! alias itself across a periodic axis the query falls back to a linear scan.

use crate::dynamics::StateSpace;

const TARGET_CELLS: f64 = 4096.0;
const MAX_CELLS_PER_AXIS: usize = 1024;
const REGRID_LOAD: usize = 8;

#[derive(Clone, Debug)]
pub struct NnIndex {
    space: StateSpace,
    cells_per_axis: Vec<usize>,
    cell_width: Vec<f64>,
    cells: Vec<Vec<u32>>,
    points: Vec<Vec<f64>>,
}

impl NnIndex {
    pub fn new(space: StateSpace) -> Self {
        let n = space.dim();
        let per_axis = (TARGET_CELLS.powf(1.0 / n as f64).floor() as usize).clamp(1, 64);
        let mut idx = Self {
            space,
            cells_per_axis: vec![per_axis; n],
            cell_width: Vec::new(),
            cells: Vec::new(),
            points: Vec::new(),
        };
        idx.regrid(per_axis);
        idx
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn space(&self) -> &StateSpace {
        &self.space
    }

    fn regrid(&mut self, per_axis: usize) {
        let n = self.space.dim();
        self.cells_per_axis = vec![per_axis; n];
        self.cell_width = (0..n)
            .map(|i| {
                let span = self.space.bounds.hi[i] - self.space.bounds.lo[i];
                if span > 0.0 {
                    span / per_axis as f64
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        let total: usize = self.cells_per_axis.iter().product();
        self.cells = vec![Vec::new(); total];
        for id in 0..self.points.len() {
            let c = self.cell_of(&self.points[id]);
            self.cells[c].push(id as u32);
        }
    }

    fn axis_cell(&self, axis: usize, v: f64) -> usize {
        let c = self.cells_per_axis[axis];
        let w = self.cell_width[axis];
        if !w.is_finite() {
            return 0;
        }
        let raw = ((v - self.space.bounds.lo[axis]) / w).floor();
        if self.space.wrap[axis] {
            (raw as i64).rem_euclid(c as i64) as usize
        } else {
            raw.clamp(0.0, (c - 1) as f64) as usize
        }
    }

    fn cell_coords(&self, x: &[f64]) -> Vec<usize> {
        (0..x.len()).map(|i| self.axis_cell(i, x[i])).collect()
    }

    fn flat(&self, coords: &[usize]) -> usize {
        let mut f = 0;
        for (i, &c) in coords.iter().enumerate() {
            f = f * self.cells_per_axis[i] + c;
        }
        f
    }

    fn cell_of(&self, x: &[f64]) -> usize {
        let coords = self.cell_coords(x);
        self.flat(&coords)
    }

    /// Appends a point; ids are assigned densely in insertion order.
    pub fn insert(&mut self, x: &[f64]) -> usize {
        let id = self.points.len();
        self.points.push(x.to_vec());
        let c = self.cell_of(x);
        self.cells[c].push(id as u32);
        let per = self.cells_per_axis[0];
        if self.points.len() > REGRID_LOAD * self.cells.len() && per * 2 <= MAX_CELLS_PER_AXIS {
            self.regrid(per * 2);
        }
        id
    }

    pub fn point(&self, id: usize) -> &[f64] {
        &self.points[id]
    }

    fn min_width(&self) -> f64 {
        self.cell_width.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Visits each cell whose Chebyshev offset from `center` is exactly `r`.
    /// Returns false if the ring aliases across a periodic axis.
    fn visit_ring(&self, center: &[usize], r: usize, mut f: impl FnMut(usize)) -> bool {
        let n = center.len();
        for i in 0..n {
            if self.space.wrap[i] && 2 * r + 1 > self.cells_per_axis[i] {
                return false;
            }
        }
        let r = r as i64;
        let mut off = vec![-r; n];
        let mut coords = vec![0usize; n];
        loop {
            if off.iter().any(|o| o.abs() == r) {
                let mut ok = true;
                for i in 0..n {
                    let c = self.cells_per_axis[i] as i64;
                    let v = center[i] as i64 + off[i];
                    if self.space.wrap[i] {
                        coords[i] = v.rem_euclid(c) as usize;
                    } else if v < 0 || v >= c {
                        ok = false;
                        break;
                    } else {
                        coords[i] = v as usize;
                    }
                }
                if ok {
                    f(self.flat(&coords));
                }
            }
            // odometer
            let mut i = 0;
            loop {
                if i == n {
                    return true;
                }
                off[i] += 1;
                if off[i] <= r {
                    break;
                }
                off[i] = -r;
                i += 1;
            }
        }
    }

    fn ring_covers_grid(&self, center: &[usize], r: usize) -> bool {
        (0..center.len()).all(|i| {
            let c = self.cells_per_axis[i];
            if self.space.wrap[i] {
                2 * r + 1 >= c
            } else {
                center[i] <= r && center[i] + r >= c - 1
            }
        })
    }

    fn sort_hits(hits: &mut [(f64, usize)]) {
        hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }

    /// Exhaustive k-nearest query; the reference the grid search must match.
    pub fn nearest_linear(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        let mut hits: Vec<(f64, usize)> = self
            .points
            .iter()
            .enumerate()
            .map(|(id, p)| (self.space.distance_sq(x, p), id))
            .collect();
        Self::sort_hits(&mut hits);
        hits.truncate(k);
        hits.into_iter().map(|(d, id)| (id, d.sqrt())).collect()
    }

    /// The `k` nearest points as `(id, distance)`, ordered by distance then id.
    pub fn nearest(&self, x: &[f64], k: usize) -> Vec<(usize, f64)> {
        if k == 0 || self.points.is_empty() {
            return Vec::new();
        }
        if k >= self.points.len() {
            return self.nearest_linear(x, k);
        }
        let center = self.cell_coords(x);
        let w = self.min_width();
        let mut hits: Vec<(f64, usize)> = Vec::new();
        let mut r = 0usize;
        loop {
            let ok = self.visit_ring(&center, r, |cell| {
                for &id in &self.cells[cell] {
                    let id = id as usize;
                    hits.push((self.space.distance_sq(x, &self.points[id]), id));
                }
            });
            if !ok {
                return self.nearest_linear(x, k);
            }
            if hits.len() >= k {
                Self::sort_hits(&mut hits);
                hits.truncate(k);
                let bound = r as f64 * w;
                if hits[k - 1].0.sqrt() < bound {
                    break;
                }
            }
            if self.ring_covers_grid(&center, r) {
                Self::sort_hits(&mut hits);
                hits.truncate(k);
                break;
            }
            r += 1;
        }
        hits.into_iter().map(|(d, id)| (id, d.sqrt())).collect()
    }

    /// All points with distance strictly below `radius`, ordered by distance then id.
    pub fn within(&self, x: &[f64], radius: f64) -> Vec<(usize, f64)> {
        let r2 = radius * radius;
        let center = self.cell_coords(x);
        let w = self.min_width();
        let reach = if w.is_finite() && w > 0.0 {
            (radius / w).ceil() as usize + 1
        } else {
            0
        };
        let mut hits: Vec<(f64, usize)> = Vec::new();
        for r in 0..=reach {
            let ok = self.visit_ring(&center, r, |cell| {
                for &id in &self.cells[cell] {
                    let id = id as usize;
                    let d = self.space.distance_sq(x, &self.points[id]);
                    if d < r2 {
                        hits.push((d, id));
                    }
                }
            });
            if !ok {
                hits = self
                    .points
                    .iter()
                    .enumerate()
                    .map(|(id, p)| (self.space.distance_sq(x, p), id))
                    .filter(|(d, _)| *d < r2)
                    .collect();
                break;
            }
            if self.ring_covers_grid(&center, r) {
                break;
            }
        }
        Self::sort_hits(&mut hits);
        hits.into_iter().map(|(d, id)| (id, d.sqrt())).collect()
    }
}
