//! Knot-indicator basis generated by the observed design points, and fitted
//! linear combinations of it.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumsum_in_place, shape_of, strides_of, GridFunction};
use crate::subset::SubsetMask;

/// `x -> 1{x_j >= knot_j for all j in subset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotBasisFunction {
    pub subset: SubsetMask,
    /// One coordinate per axis of `subset`, in increasing axis order.
    pub knot: Vec<f64>,
}

impl KnotBasisFunction {
    pub fn new(subset: SubsetMask, knot: Vec<f64>) -> Result<Self> {
        if subset.is_empty() || subset.len() != knot.len() {
            return Err(Error::InvalidInput(format!(
                "knot of length {} does not match subset {subset}",
                knot.len()
            )));
        }
        if knot.iter().any(|k| !(0.0..=1.0).contains(k)) {
            return Err(Error::InvalidInput("knot coordinates must lie in [0,1]".into()));
        }
        Ok(KnotBasisFunction { subset, knot })
    }

    #[inline]
    pub fn contains(&self, x: &[f64]) -> bool {
        self.subset.axes().zip(&self.knot).all(|(a, &k)| x[a] >= k)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            1.0
        } else {
            0.0
        }
    }

    fn cmp_key(&self, other: &Self) -> Ordering {
        self.subset.cmp(&other.subset).then_with(|| {
            self.knot
                .iter()
                .zip(&other.knot)
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnotBasis {
    pub dim: usize,
    pub functions: Vec<KnotBasisFunction>,
    pub source_n: usize,
}

impl KnotBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

pub fn check_points(points: &[Vec<f64>], dim: usize) -> Result<()> {
    if points.is_empty() {
        return Err(Error::EmptyData);
    }
    for (i, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::InvalidInput(format!("point {i} has {} coordinates, expected {dim}", p.len())));
        }
        if let Some((axis, &value)) = p.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::DomainError { point: i, axis, value });
        }
    }
    Ok(())
}

/// All indicators `1{x_s >= (X_i)_s}` over nonempty `s` and observations `i`,
/// deduplicated and sorted by (subset bits, knot).
///
/// Knot coordinates equal to 0 impose no constraint, so those axes are dropped
/// from the subset; an indicator that reduces to the constant 1 is omitted
/// because the intercept already spans it.
pub fn generate_basis(points: &[Vec<f64>]) -> Result<KnotBasis> {
    let dim = points.first().map(Vec::len).ok_or(Error::EmptyData)?;
    if dim == 0 || dim > 20 {
        return Err(Error::InvalidInput(format!("unsupported dimension {dim}")));
    }
    check_points(points, dim)?;
    let mut functions = Vec::with_capacity(points.len() * ((1 << dim) - 1));
    for p in points {
        for s in SubsetMask::nonempty(dim) {
            let axes: Vec<usize> = s.axes().filter(|&a| p[a] > 0.0).collect();
            if axes.len() != s.len() {
                // the reduced function is generated from its own subset
                continue;
            }
            functions.push(KnotBasisFunction { subset: s, knot: axes.iter().map(|&a| p[a]).collect() });
        }
    }
    functions.sort_by(KnotBasisFunction::cmp_key);
    functions.dedup_by(|a, b| a.cmp_key(b).is_eq());
    Ok(KnotBasis { dim, functions, source_n: points.len() })
}

/// `beta0 + sum_j beta_j phi_j(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedFunction {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub basis: KnotBasis,
}

impl FittedFunction {
    pub fn new(intercept: f64, coefficients: Vec<f64>, basis: KnotBasis) -> Result<Self> {
        if coefficients.len() != basis.len() {
            return Err(Error::InvalidInput(format!(
                "{} coefficients for {} basis functions",
                coefficients.len(),
                basis.len()
            )));
        }
        if !intercept.is_finite() || coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("coefficients must be finite".into()));
        }
        Ok(FittedFunction { intercept, coefficients, basis })
    }

    pub fn zero(basis: KnotBasis) -> Self {
        let p = basis.len();
        FittedFunction { intercept: 0.0, coefficients: vec![0.0; p], basis }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim
    }

    /// Prediction without the domain check.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = self.intercept;
        for (phi, &c) in self.basis.functions.iter().zip(&self.coefficients) {
            if c != 0.0 && phi.contains(x) {
                acc += c;
            }
        }
        acc
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::InvalidInput(format!("point has {} coordinates, expected {}", x.len(), self.dim())));
        }
        if let Some((axis, &value)) = x.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::DomainError { point: 0, axis, value });
        }
        Ok(self.eval(x))
    }

    /// `|beta0| + sum |beta_j|`.
    pub fn fit_svn(&self) -> f64 {
        self.intercept.abs() + self.coefficients.iter().map(|c| c.abs()).sum::<f64>()
    }

    pub fn active_set_size(&self) -> usize {
        self.coefficients.iter().filter(|&&c| c != 0.0).count()
    }

    /// Drops basis functions with zero coefficient.
    pub fn sparsify(&self) -> FittedFunction {
        let (functions, coefficients): (Vec<_>, Vec<_>) = self
            .basis
            .functions
            .iter()
            .zip(&self.coefficients)
            .filter(|(_, &c)| c != 0.0)
            .map(|(f, &c)| (f.clone(), c))
            .unzip();
        FittedFunction {
            intercept: self.intercept,
            coefficients,
            basis: KnotBasis { dim: self.basis.dim, functions, source_n: self.basis.source_n },
        }
    }

    /// Per axis: 0 together with every knot coordinate on that axis.
    pub fn knot_grid(&self) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![0.0]; self.dim()];
        for phi in &self.basis.functions {
            for (a, &k) in phi.subset.axes().zip(&phi.knot) {
                grid[a].push(k);
            }
        }
        for axis in &mut grid {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        grid
    }

    /// The fit as a grid function on its knot grid.
    pub fn render(&self) -> Result<GridFunction> {
        let grid = self.knot_grid();
        let shape = shape_of(&grid);
        let strides = strides_of(&shape);
        let len: usize = shape.iter().product();
        let mut masses = vec![0.0; len];
        masses[0] = self.intercept;
        for (phi, &c) in self.basis.functions.iter().zip(&self.coefficients) {
            let mut idx = 0;
            for (a, &k) in phi.subset.axes().zip(&phi.knot) {
                idx += grid[a].partition_point(|&b| b < k) * strides[a];
            }
            masses[idx] += c;
        }
        cumsum_in_place(&shape, &mut masses);
        GridFunction::new(grid, masses)
    }

    pub fn to_model(&self, provenance: Option<Provenance>) -> ModelFile {
        ModelFile {
            dim: self.dim(),
            intercept: self.intercept,
            entries: self
                .basis
                .functions
                .iter()
                .zip(&self.coefficients)
                .map(|(phi, &coef)| ModelEntry { subset_bits: phi.subset.bits(), knot: phi.knot.clone(), coef })
                .collect(),
            provenance,
        }
    }

    pub fn from_model(model: &ModelFile) -> Result<FittedFunction> {
        if model.dim == 0 || model.dim > 20 {
            return Err(Error::InvalidInput(format!("unsupported dimension {}", model.dim)));
        }
        let mut functions = Vec::with_capacity(model.entries.len());
        let mut coefficients = Vec::with_capacity(model.entries.len());
        for e in &model.entries {
            let subset = SubsetMask(e.subset_bits);
            if !subset.fits(model.dim) {
                return Err(Error::InvalidInput(format!("subset bits {} exceed dimension", e.subset_bits)));
            }
            functions.push(KnotBasisFunction::new(subset, e.knot.clone())?);
            coefficients.push(e.coef);
        }
        let basis = KnotBasis { dim: model.dim, functions, source_n: 0 };
        FittedFunction::new(model.intercept, coefficients, basis)
    }
}

impl crate::grid::Evaluate for FittedFunction {
    fn dim(&self) -> usize {
        self.basis.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        FittedFunction::eval(self, x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub subset_bits: u32,
    pub knot: Vec<f64>,
    pub coef: f64,
}

/// On-disk model: `{dim, intercept, entries: [{subset_bits, knot, coef}], provenance}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub dim: usize,
    pub intercept: f64,
    pub entries: Vec<ModelEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// `(n e / d)^d`.
pub fn basis_count_bound(n: usize, d: usize) -> f64 {
    (n as f64 * std::f64::consts::E / d as f64).powi(d as i32)
}
