//! Right-continuous piecewise-constant functions on rectangular grids of `[0,1]^d`.
//!
//! A [`GridFunction`] stores one value per grid corner. The function equals that
//! value on the half-open rectangle extending north-east of the corner up to the
//! next breakpoint on every axis (or up to 1 on the last cell).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::subset::SubsetMask;

/// Anything that can be evaluated at a point of `[0,1]^d`.
pub trait Evaluate {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64]) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridFunctionRepr", into = "GridFunctionRepr")]
pub struct GridFunction {
    dim: usize,
    grid: Vec<Vec<f64>>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridFunctionRepr {
    dim: usize,
    grid: Vec<Vec<f64>>,
    values: Vec<f64>,
}

impl TryFrom<GridFunctionRepr> for GridFunction {
    type Error = Error;

    fn try_from(r: GridFunctionRepr) -> Result<Self> {
        if r.grid.len() != r.dim {
            return Err(Error::InvalidGrid(format!(
                "dim is {} but {} axes were given",
                r.dim,
                r.grid.len()
            )));
        }
        GridFunction::new(r.grid, r.values)
    }
}

impl From<GridFunction> for GridFunctionRepr {
    fn from(f: GridFunction) -> Self {
        GridFunctionRepr { dim: f.dim, grid: f.grid, values: f.values }
    }
}

pub(crate) fn validate_axis(axis: usize, breaks: &[f64]) -> Result<()> {
    if breaks.is_empty() {
        return Err(Error::InvalidGrid(format!("axis {axis} has no breakpoints")));
    }
    if breaks[0] != 0.0 {
        return Err(Error::InvalidGrid(format!("axis {axis} does not start at 0")));
    }
    for w in breaks.windows(2) {
        if !(w[0] < w[1]) {
            return Err(Error::InvalidGrid(format!(
                "axis {axis} breakpoints not strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
    }
    if !(breaks[breaks.len() - 1] <= 1.0) {
        return Err(Error::InvalidGrid(format!("axis {axis} has breakpoints above 1")));
    }
    Ok(())
}

pub(crate) fn shape_of(grid: &[Vec<f64>]) -> Vec<usize> {
    grid.iter().map(Vec::len).collect()
}

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for j in (0..shape.len().saturating_sub(1)).rev() {
        strides[j] = strides[j + 1] * shape[j + 1];
    }
    strides
}

/// Index of the last breakpoint `<= x` (0 for points left of the grid).
#[inline]
pub(crate) fn locate(breaks: &[f64], x: f64) -> usize {
    breaks.partition_point(|&b| b <= x).saturating_sub(1)
}

/// Replaces `data` by its full mixed-difference (Moebius) transform: afterwards
/// entry `k` holds the inclusion-exclusion difference over the axes where `k_j >= 1`.
pub(crate) fn difference_in_place(shape: &[usize], data: &mut [f64]) {
    let strides = strides_of(shape);
    for (axis, &len) in shape.iter().enumerate() {
        if len < 2 {
            continue;
        }
        let stride = strides[axis];
        let block = stride * len;
        for start in (0..data.len()).step_by(block) {
            for k in (1..len).rev() {
                let hi = start + k * stride;
                let lo = hi - stride;
                for off in 0..stride {
                    data[hi + off] -= data[lo + off];
                }
            }
        }
    }
}

/// Inverse of [`difference_in_place`]: cumulative sums along every axis.
pub(crate) fn cumsum_in_place(shape: &[usize], data: &mut [f64]) {
    let strides = strides_of(shape);
    for (axis, &len) in shape.iter().enumerate() {
        if len < 2 {
            continue;
        }
        let stride = strides[axis];
        let block = stride * len;
        for start in (0..data.len()).step_by(block) {
            for k in 1..len {
                let hi = start + k * stride;
                let lo = hi - stride;
                for off in 0..stride {
                    data[hi + off] += data[lo + off];
                }
            }
        }
    }
}

/// Per-axis union of breakpoints.
pub fn merge_grids<'a, I>(grids: I) -> Vec<Vec<f64>>
where
    I: IntoIterator<Item = &'a [Vec<f64>]>,
{
    let mut merged: Vec<Vec<f64>> = Vec::new();
    for g in grids {
        if merged.is_empty() {
            merged = vec![Vec::new(); g.len()];
        }
        for (axis, breaks) in g.iter().enumerate() {
            merged[axis].extend_from_slice(breaks);
        }
    }
    for axis in &mut merged {
        axis.sort_by(f64::total_cmp);
        axis.dedup();
    }
    merged
}

impl GridFunction {
    pub fn new(grid: Vec<Vec<f64>>, values: Vec<f64>) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidGrid("dimension must be positive".into()));
        }
        for (axis, breaks) in grid.iter().enumerate() {
            validate_axis(axis, breaks)?;
        }
        let expected: usize = grid.iter().map(Vec::len).product();
        if values.len() != expected {
            return Err(Error::InvalidGrid(format!(
                "expected {expected} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("values must be finite".into()));
        }
        Ok(GridFunction { dim: grid.len(), grid, values })
    }

    pub fn constant(grid: Vec<Vec<f64>>, c: f64) -> Result<Self> {
        let len = grid.iter().map(Vec::len).product();
        GridFunction::new(grid, vec![c; len])
    }

    /// Samples `f` at every grid corner.
    pub fn from_corners(grid: Vec<Vec<f64>>, mut f: impl FnMut(&[f64]) -> f64) -> Result<Self> {
        for (axis, breaks) in grid.iter().enumerate() {
            validate_axis(axis, breaks)?;
        }
        let shape = shape_of(&grid);
        let len: usize = shape.iter().product();
        let mut x = vec![0.0; grid.len()];
        let mut values = Vec::with_capacity(len);
        for flat in 0..len {
            corner_into(&grid, &shape, flat, &mut x);
            values.push(f(&x));
        }
        GridFunction::new(grid, values)
    }

    /// Builds the function whose mixed-difference transform is `masses`.
    pub fn from_masses(grid: Vec<Vec<f64>>, mut masses: Vec<f64>) -> Result<Self> {
        let shape = shape_of(&grid);
        if masses.len() != shape.iter().product::<usize>() {
            return Err(Error::InvalidGrid("mass array does not match grid".into()));
        }
        cumsum_in_place(&shape, &mut masses);
        GridFunction::new(grid, masses)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn grid(&self) -> &[Vec<f64>] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn shape(&self) -> Vec<usize> {
        shape_of(&self.grid)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value_at_origin(&self) -> f64 {
        self.values[0]
    }

    /// Coordinates of the corner with flat index `flat`.
    pub fn corner(&self, flat: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        corner_into(&self.grid, &self.shape(), flat, &mut x);
        x
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let strides = strides_of(&self.shape());
        multi.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    /// Mixed-difference transform of the value array: the signed atoms of every
    /// section measure, with `f(0)` at flat index 0.
    pub fn masses(&self) -> Vec<f64> {
        let mut m = self.values.clone();
        difference_in_place(&self.shape(), &mut m);
        m
    }

    /// Lebesgue measure of the cell north-east of each corner.
    pub fn cell_volumes(&self) -> Vec<f64> {
        let widths: Vec<Vec<f64>> = self
            .grid
            .iter()
            .map(|b| (0..b.len()).map(|k| b.get(k + 1).copied().unwrap_or(1.0) - b[k]).collect())
            .collect();
        let shape = self.shape();
        let len = self.values.len();
        let mut vols = Vec::with_capacity(len);
        for flat in 0..len {
            let mut rem = flat;
            let mut v = 1.0;
            for j in (0..self.dim).rev() {
                v *= widths[j][rem % shape[j]];
                rem /= shape[j];
            }
            vols.push(v);
        }
        vols
    }

    /// `(integral of |f|^2 over [0,1]^d)^(1/2)`, exact for piecewise constants.
    pub fn l2_norm(&self) -> f64 {
        self.cell_volumes().iter().zip(&self.values).map(|(w, v)| w * v * v).sum::<f64>().sqrt()
    }

    pub fn sup_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Re-expresses the function on another grid by evaluation at its corners.
    pub fn resample(&self, grid: &[Vec<f64>]) -> Result<GridFunction> {
        GridFunction::from_corners(grid.to_vec(), |x| self.eval(x))
    }

    /// Inserts a redundant breakpoint; the represented function is unchanged.
    pub fn insert_breakpoint(&self, axis: usize, t: f64) -> Result<GridFunction> {
        let mut grid = self.grid.clone();
        let pos = grid[axis].partition_point(|&b| b < t);
        if grid[axis].get(pos) == Some(&t) {
            return Ok(self.clone());
        }
        grid[axis].insert(pos, t);
        self.resample(&grid)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<GridFunction> {
        GridFunction::new(self.grid.clone(), self.values.iter().map(|&v| f(v)).collect())
    }

    /// Pointwise combination on the merged grid of both operands.
    pub fn zip_with(&self, other: &GridFunction, f: impl Fn(f64, f64) -> f64) -> Result<GridFunction> {
        if self.dim != other.dim {
            return Err(Error::InvalidGrid("dimension mismatch".into()));
        }
        let grid = merge_grids([self.grid(), other.grid()]);
        GridFunction::from_corners(grid, |x| f(self.eval(x), other.eval(x)))
    }

    /// The section `x_s -> f(x_s, 0_{-s})` as a function on the face grid.
    pub fn section(&self, subset: SubsetMask) -> Result<GridFunction> {
        let axes: Vec<usize> = subset.axes().collect();
        if axes.is_empty() || !subset.fits(self.dim) {
            return Err(Error::InvalidInput(format!("subset {subset} invalid for dimension {}", self.dim)));
        }
        let face_grid: Vec<Vec<f64>> = axes.iter().map(|&a| self.grid[a].clone()).collect();
        let strides = strides_of(&self.shape());
        let face_shape = shape_of(&face_grid);
        let face_len: usize = face_shape.iter().product();
        let face_strides = strides_of(&face_shape);
        let mut values = Vec::with_capacity(face_len);
        for flat in 0..face_len {
            let mut idx = 0;
            let mut rem = flat;
            for (k, &a) in axes.iter().enumerate() {
                let i = rem / face_strides[k];
                rem %= face_strides[k];
                idx += i * strides[a];
            }
            values.push(self.values[idx]);
        }
        GridFunction::new(face_grid, values)
    }

    /// Extends a function of `x_s` (defined on a face) to `[0,1]^d`, on `full_grid`.
    pub fn extend_from_face(face: &GridFunction, subset: SubsetMask, full_grid: &[Vec<f64>]) -> Result<GridFunction> {
        let axes: Vec<usize> = subset.axes().collect();
        if axes.len() != face.dim() {
            return Err(Error::InvalidInput("face dimension does not match subset".into()));
        }
        let mut xs = vec![0.0; axes.len()];
        GridFunction::from_corners(full_grid.to_vec(), |x| {
            for (k, &a) in axes.iter().enumerate() {
                xs[k] = x[a];
            }
            face.eval(&xs)
        })
    }
}

pub(crate) fn corner_into(grid: &[Vec<f64>], shape: &[usize], flat: usize, x: &mut [f64]) {
    let mut rem = flat;
    for j in (0..shape.len()).rev() {
        let i = rem % shape[j];
        rem /= shape[j];
        x[j] = grid[j][i];
    }
}

impl Evaluate for GridFunction {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let shape = self.shape();
        let strides = strides_of(&shape);
        let mut idx = 0;
        for j in 0..self.dim {
            idx += locate(&self.grid[j], x[j]) * strides[j];
        }
        self.values[idx]
    }
}
