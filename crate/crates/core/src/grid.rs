//! Rectilinear grids, scalar fields on them, and finite-difference gradients.
//!
//! Nodes are stored row-major: the last dimension varies fastest. A periodic
//! dimension with `n` nodes covers `[lo, hi)` with spacing `(hi - lo) / n`; a
//! non-periodic one covers `[lo, hi]` with spacing `(hi - lo) / (n - 1)`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    periodic: Vec<bool>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
}

impl Grid {
    pub fn new(lo: &[f64], hi: &[f64], counts: &[usize], periodic: &[bool]) -> Result<Self> {
        let n = lo.len();
        if n == 0 {
            return Err(Error::InvalidGrid("grid needs at least one dimension".into()));
        }
        if hi.len() != n || counts.len() != n || periodic.len() != n {
            return Err(Error::InvalidGrid(format!(
                "inconsistent lengths: lo {}, hi {}, counts {}, periodic {}",
                n,
                hi.len(),
                counts.len(),
                periodic.len()
            )));
        }
        let mut spacing = Vec::with_capacity(n);
        for d in 0..n {
            if counts[d] < 3 {
                return Err(Error::InvalidGrid(format!(
                    "dimension {d} has {} nodes; at least 3 are required",
                    counts[d]
                )));
            }
            if !(lo[d].is_finite() && hi[d].is_finite()) || lo[d] >= hi[d] {
                return Err(Error::InvalidGrid(format!(
                    "dimension {d} has lo = {} >= hi = {}",
                    lo[d], hi[d]
                )));
            }
            let cells = if periodic[d] { counts[d] } else { counts[d] - 1 };
            spacing.push((hi[d] - lo[d]) / cells as f64);
        }
        let mut strides = vec![1; n];
        for d in (0..n - 1).rev() {
            strides[d] = strides[d + 1] * counts[d + 1];
        }
        Ok(Self {
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: counts.to_vec(),
            periodic: periodic.to_vec(),
            spacing,
            strides,
        })
    }

    pub fn ndim(&self) -> usize {
        self.lo.len()
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn periodic(&self) -> &[bool] {
        &self.periodic
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Coordinate of index `i` along dimension `dim`.
    pub fn axis_coord(&self, dim: usize, i: usize) -> f64 {
        self.lo[dim] + i as f64 * self.spacing[dim]
    }

    pub fn multi_index(&self, node: usize, out: &mut [usize]) {
        let mut rem = node;
        for d in 0..self.ndim() {
            out[d] = rem / self.strides[d];
            rem %= self.strides[d];
        }
    }

    /// Index along `dim` of `node`.
    pub fn index_along(&self, node: usize, dim: usize) -> usize {
        (node / self.strides[dim]) % self.counts[dim]
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn coord_into(&self, node: usize, out: &mut [f64]) {
        let mut rem = node;
        for d in 0..self.ndim() {
            let i = rem / self.strides[d];
            rem %= self.strides[d];
            out[d] = self.axis_coord(d, i);
        }
    }

    pub fn coord(&self, node: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.ndim()];
        self.coord_into(node, &mut x);
        x
    }

    /// Neighbor of `node` shifted by `+1` or `-1` along `dim`, wrapping on
    /// periodic dimensions. `None` past a non-periodic edge.
    pub fn neighbor(&self, node: usize, dim: usize, forward: bool) -> Option<usize> {
        let i = self.index_along(node, dim);
        let n = self.counts[dim];
        let s = self.strides[dim];
        match (forward, self.periodic[dim]) {
            (true, _) if i + 1 < n => Some(node + s),
            (true, true) => Some(node - i * s),
            (false, _) if i > 0 => Some(node - s),
            (false, true) => Some(node + (n - 1) * s),
            _ => None,
        }
    }

    /// Wraps periodic coordinates of `x` into `[lo, hi)`.
    pub fn wrap(&self, x: &mut [f64]) {
        for d in 0..self.ndim() {
            if self.periodic[d] {
                let period = self.hi[d] - self.lo[d];
                x[d] = self.lo[d] + (x[d] - self.lo[d]).rem_euclid(period);
                if x[d] >= self.hi[d] {
                    x[d] = self.lo[d];
                }
            }
        }
    }

    /// Whether `x` lies inside every non-periodic range.
    pub fn contains(&self, x: &[f64]) -> bool {
        (0..self.ndim()).all(|d| self.periodic[d] || (x[d] >= self.lo[d] && x[d] <= self.hi[d]))
    }

    /// Cell-local interpolation stencil: for each dimension the lower node
    /// index, upper node index, and upper weight.
    fn stencil(&self, x: &[f64]) -> Result<Vec<(usize, usize, f64)>> {
        if x.len() != self.ndim() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, grid has {} dimensions",
                x.len(),
                self.ndim()
            )));
        }
        let mut out = Vec::with_capacity(self.ndim());
        for d in 0..self.ndim() {
            let n = self.counts[d];
            let mut t = (x[d] - self.lo[d]) / self.spacing[d];
            if !t.is_finite() {
                return Err(Error::OutOfBounds {
                    point: x.to_vec(),
                    dim: d,
                });
            }
            if (t - t.round()).abs() < 1e-9 {
                t = t.round();
            }
            if self.periodic[d] {
                t = t.rem_euclid(n as f64);
                let i0 = (t.floor() as usize).min(n - 1);
                out.push((i0, (i0 + 1) % n, t - i0 as f64));
            } else {
                let last = (n - 1) as f64;
                if t < 0.0 || t > last {
                    return Err(Error::OutOfBounds {
                        point: x.to_vec(),
                        dim: d,
                    });
                }
                let i0 = (t.floor() as usize).min(n - 2);
                out.push((i0, i0 + 1, t - i0 as f64));
            }
        }
        Ok(out)
    }
}

/// One scalar per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values but the grid has {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(node) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                node,
                coords: grid.coord(node),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut x = vec![0.0; grid.ndim()];
        let values = (0..grid.len())
            .map(|k| {
                grid.coord_into(k, &mut x);
                f(&x)
            })
            .collect();
        Self {
            grid: grid.clone(),
            values,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Multilinear interpolation over the `2^n` nodes enclosing `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let stencil = self.grid.stencil(x)?;
        Ok(interpolate_with(&self.grid, &stencil, &self.values))
    }
}

fn interpolate_with(grid: &Grid, stencil: &[(usize, usize, f64)], values: &[f64]) -> f64 {
    let n = stencil.len();
    let strides = grid.strides();
    let mut acc = 0.0;
    for corner in 0..(1usize << n) {
        let mut weight = 1.0;
        let mut node = 0;
        for (d, &(i0, i1, w)) in stencil.iter().enumerate() {
            if corner >> d & 1 == 1 {
                weight *= w;
                node += i1 * strides[d];
            } else {
                weight *= 1.0 - w;
                node += i0 * strides[d];
            }
        }
        if weight != 0.0 {
            acc += weight * values[node];
        }
    }
    acc
}

/// Signed distance to the failure set `{|x_dim| > half_width}`, positive inside
/// the slab.
pub fn slab_signed_distance(grid: &Grid, dim: usize, half_width: f64) -> Result<ScalarField> {
    box_signed_distance(grid, &[dim], &[half_width])
}

/// Per-coordinate signed distance to the union of slabs
/// `{|x_d| > half_width_d}`: the pointwise minimum of the slab distances.
pub fn box_signed_distance(grid: &Grid, dims: &[usize], half_widths: &[f64]) -> Result<ScalarField> {
    if dims.is_empty() || dims.len() != half_widths.len() {
        return Err(Error::param(
            "dims",
            "need one half-width per constrained dimension",
        ));
    }
    for (&d, &w) in dims.iter().zip(half_widths) {
        if d >= grid.ndim() {
            return Err(Error::param("dim", format!("{d} is not a grid dimension")));
        }
        if !(w > 0.0) {
            return Err(Error::param("half_width", format!("{w} must be positive")));
        }
    }
    Ok(ScalarField::from_fn(grid, |x| {
        dims.iter()
            .zip(half_widths)
            .map(|(&d, &w)| w - x[d].abs())
            .fold(f64::INFINITY, f64::min)
    }))
}

/// Backward (`left`) and forward (`right`) one-sided differences per node and
/// dimension, stored at `node * ndim + dim`.
#[derive(Debug, Clone)]
pub struct GradientField {
    grid: Grid,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl GradientField {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn left_at(&self, node: usize) -> &[f64] {
        let n = self.grid.ndim();
        &self.left[node * n..(node + 1) * n]
    }

    pub fn right_at(&self, node: usize) -> &[f64] {
        let n = self.grid.ndim();
        &self.right[node * n..(node + 1) * n]
    }
}

/// One-sided differences at a single node. Non-periodic edges copy the
/// inward difference to the missing side.
pub(crate) fn one_sided_at(grid: &Grid, values: &[f64], node: usize, left: &mut [f64], right: &mut [f64]) {
    let v = values[node];
    for d in 0..grid.ndim() {
        let h = grid.spacing[d];
        let back = grid.neighbor(node, d, false).map(|k| (v - values[k]) / h);
        let fwd = grid.neighbor(node, d, true).map(|k| (values[k] - v) / h);
        let (l, r) = match (back, fwd) {
            (Some(l), Some(r)) => (l, r),
            (Some(l), None) => (l, l),
            (None, Some(r)) => (r, r),
            (None, None) => unreachable!("grid dimensions have at least 3 nodes"),
        };
        left[d] = l;
        right[d] = r;
    }
}

pub fn upwind_gradients(field: &ScalarField) -> GradientField {
    use rayon::prelude::*;
    let grid = field.grid();
    let n = grid.ndim();
    let mut left = vec![0.0; grid.len() * n];
    let mut right = vec![0.0; grid.len() * n];
    left.par_chunks_mut(n)
        .zip(right.par_chunks_mut(n))
        .enumerate()
        .for_each(|(k, (l, r))| one_sided_at(grid, &field.values, k, l, r));
    GradientField {
        grid: grid.clone(),
        left,
        right,
    }
}

/// Central-difference gradient, one field per dimension. Non-periodic edges
/// fall back to the inward one-sided difference.
pub fn central_gradients(field: &ScalarField) -> Vec<ScalarField> {
    let grid = field.grid();
    let n = grid.ndim();
    let mut comps = vec![vec![0.0; grid.len()]; n];
    let mut l = vec![0.0; n];
    let mut r = vec![0.0; n];
    for k in 0..grid.len() {
        one_sided_at(grid, &field.values, k, &mut l, &mut r);
        for d in 0..n {
            comps[d][k] = 0.5 * (l[d] + r[d]);
        }
    }
    comps
        .into_iter()
        .map(|values| ScalarField {
            grid: grid.clone(),
            values,
        })
        .collect()
}

/// Vector-valued multilinear interpolation sharing one stencil.
pub fn interpolate_many(fields: &[ScalarField], x: &[f64]) -> Result<Vec<f64>> {
    let Some(first) = fields.first() else {
        return Ok(Vec::new());
    };
    let stencil = first.grid.stencil(x)?;
    Ok(fields
        .iter()
        .map(|f| interpolate_with(&f.grid, &stencil, &f.values))
        .collect())
}
