//! Sectional variation norm, section measures, and the mixture-of-CDFs
//! representation of functions with bounded variation norm.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{cumsum_in_place, shape_of, strides_of, Evaluate, GridFunction};
use crate::subset::SubsetMask;

/// Absolute tolerance for checks that are exact in principle.
pub const EXACT_TOL: f64 = 1e-12;

/// Signed atomic measure generated by the section `f_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionMeasure {
    pub subset: SubsetMask,
    /// Face corner coordinates (one per axis of the subset) and signed mass.
    pub atoms: Vec<(Vec<f64>, f64)>,
}

impl SectionMeasure {
    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m.abs()).sum()
    }
}

/// Support subset `{j : k_j >= 1}` of a multi-index given by its flat position.
fn support_of(flat: usize, shape: &[usize]) -> SubsetMask {
    let mut rem = flat;
    let mut bits = 0u32;
    for j in (0..shape.len()).rev() {
        if rem % shape[j] != 0 {
            bits |= 1 << j;
        }
        rem /= shape[j];
    }
    SubsetMask(bits)
}

/// `|f(0)| + sum over nonempty s of the total variation of the section measure of f_s`.
pub fn svn_exact(f: &GridFunction) -> f64 {
    f.masses().iter().map(|m| m.abs()).sum()
}

pub fn sup_norm(f: &GridFunction) -> f64 {
    f.sup_abs()
}

/// The atoms of the measure generated by the section `f_s`.
pub fn section_measure(f: &GridFunction, subset: SubsetMask) -> Result<SectionMeasure> {
    if subset.is_empty() || !subset.fits(f.dim()) {
        return Err(Error::InvalidInput(format!("subset {subset} invalid for dimension {}", f.dim())));
    }
    let masses = f.masses();
    let shape = f.shape();
    let axes: Vec<usize> = subset.axes().collect();
    let atoms = masses
        .iter()
        .enumerate()
        .filter(|&(flat, &m)| m != 0.0 && support_of(flat, &shape) == subset)
        .map(|(flat, &m)| {
            let x = f.corner(flat);
            (axes.iter().map(|&a| x[a]).collect(), m)
        })
        .collect();
    Ok(SectionMeasure { subset, atoms })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCdf {
    pub alpha: f64,
    /// CDF on the face `[0_s, 1_s]`, a grid function of dimension `|s|`.
    pub cdf: GridFunction,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub subset: SubsetMask,
    pub positive: WeightedCdf,
    pub negative: WeightedCdf,
}

/// `f(x) = f0 + (M - |f0|) sum_s [a_{s,1} g_{s,1}(x_s) - a_{s,2} g_{s,2}(x_s)]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureRepresentation {
    pub dim: usize,
    pub f0: f64,
    pub budget: f64,
    pub components: Vec<MixtureComponent>,
}

/// Whether `g` is a distribution function: nonnegative quasi-volumes, values in
/// `[0,1]` and total mass 1.
pub fn is_cdf(g: &GridFunction) -> bool {
    let masses = g.masses();
    let total: f64 = masses.iter().sum();
    masses.iter().all(|&m| m >= -EXACT_TOL)
        && g.values().iter().all(|&v| (-EXACT_TOL..=1.0 + EXACT_TOL).contains(&v))
        && (total - 1.0).abs() <= 1e-9
}

/// A unit point mass at the last corner of `face_grid`.
pub fn point_mass_cdf(face_grid: Vec<Vec<f64>>, at: &[f64]) -> Result<GridFunction> {
    let mut grid = face_grid;
    for (axis, &t) in at.iter().enumerate() {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::InvalidInput(format!("point mass location {t} outside [0,1]")));
        }
        let pos = grid[axis].partition_point(|&b| b < t);
        if grid[axis].get(pos) != Some(&t) {
            grid[axis].insert(pos, t);
        }
    }
    GridFunction::from_corners(grid, |x| if x.iter().zip(at).all(|(xi, a)| xi >= a) { 1.0 } else { 0.0 })
}

fn placeholder_cdf(face_grid: &[Vec<f64>]) -> Result<GridFunction> {
    let top: Vec<f64> = face_grid.iter().map(|b| *b.last().unwrap()).collect();
    point_mass_cdf(face_grid.to_vec(), &top)
}

impl MixtureRepresentation {
    pub fn alpha_sum(&self) -> f64 {
        self.components.iter().map(|c| c.positive.alpha + c.negative.alpha).sum()
    }

    pub fn scale(&self) -> f64 {
        self.budget - self.f0.abs()
    }

    pub fn component(&self, subset: SubsetMask) -> Option<&MixtureComponent> {
        self.components.iter().find(|c| c.subset == subset)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if self.dim == 0 {
            return bad("dimension must be positive".into());
        }
        if !(self.budget >= 0.0) || !self.f0.is_finite() {
            return bad("budget must be nonnegative and f0 finite".into());
        }
        if self.f0.abs() > self.budget + EXACT_TOL {
            return bad(format!("|f0| = {} exceeds M = {}", self.f0.abs(), self.budget));
        }
        let mut seen = Vec::new();
        for c in &self.components {
            if c.subset.is_empty() || !c.subset.fits(self.dim) {
                return bad(format!("subset {} invalid for dimension {}", c.subset, self.dim));
            }
            if seen.contains(&c.subset) {
                return bad(format!("subset {} listed twice", c.subset));
            }
            seen.push(c.subset);
            for part in [&c.positive, &c.negative] {
                if !(part.alpha >= 0.0) {
                    return bad(format!("negative weight on subset {}", c.subset));
                }
                if part.cdf.dim() != c.subset.len() {
                    return bad(format!("CDF for subset {} has wrong dimension", c.subset));
                }
                if !is_cdf(&part.cdf) {
                    return bad(format!("component on subset {} is not a CDF", c.subset));
                }
            }
        }
        if self.alpha_sum() > 1.0 + EXACT_TOL {
            return bad(format!("weights sum to {} > 1", self.alpha_sum()));
        }
        Ok(())
    }

    /// Union over components of the face grids, per axis.
    pub fn natural_grid(&self) -> Vec<Vec<f64>> {
        let mut grid = vec![vec![0.0]; self.dim];
        for c in &self.components {
            for part in [&c.positive, &c.negative] {
                for (k, a) in c.subset.axes().enumerate() {
                    grid[a].extend_from_slice(&part.cdf.grid()[k]);
                }
            }
        }
        for axis in &mut grid {
            axis.sort_by(f64::total_cmp);
            axis.dedup();
        }
        grid
    }
}

impl Evaluate for MixtureRepresentation {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        let mut xs = Vec::with_capacity(self.dim);
        for c in &self.components {
            xs.clear();
            xs.extend(c.subset.axes().map(|a| x[a]));
            acc += c.positive.alpha * c.positive.cdf.eval(&xs) - c.negative.alpha * c.negative.cdf.eval(&xs);
        }
        self.f0 + self.scale() * acc
    }
}

/// Jordan-decomposes every section measure of `f` and normalizes each part to a
/// probability distribution, producing weights relative to `M - |f(0)|`.
pub fn decompose(f: &GridFunction, budget: f64) -> Result<MixtureRepresentation> {
    let norm = svn_exact(f);
    if norm > budget + EXACT_TOL * budget.max(1.0) {
        return Err(Error::NormBudgetExceeded { norm, budget });
    }
    let masses = f.masses();
    let f0 = masses[0];
    let constant = masses[1..].iter().all(|&m| m == 0.0);
    let scale = budget - f0.abs();
    if !constant && scale <= 0.0 {
        return Err(Error::DegenerateScale { budget, f0 });
    }

    let shape = f.shape();
    let strides = strides_of(&shape);
    let dim = f.dim();
    let mut components = Vec::new();
    for subset in SubsetMask::nonempty(dim) {
        let axes: Vec<usize> = subset.axes().collect();
        let face_grid: Vec<Vec<f64>> = axes.iter().map(|&a| f.grid()[a].clone()).collect();
        let face_shape = shape_of(&face_grid);
        let face_len: usize = face_shape.iter().product();
        let face_strides = strides_of(&face_shape);
        let mut pos = vec![0.0; face_len];
        let mut neg = vec![0.0; face_len];
        for face_flat in 0..face_len {
            let mut full = 0;
            let mut rem = face_flat;
            let mut interior = true;
            for (k, &a) in axes.iter().enumerate() {
                let i = rem / face_strides[k];
                rem %= face_strides[k];
                interior &= i >= 1;
                full += i * strides[a];
            }
            if !interior {
                continue;
            }
            let m = masses[full];
            if m > 0.0 {
                pos[face_flat] = m;
            } else if m < 0.0 {
                neg[face_flat] = -m;
            }
        }
        let part = |atoms: Vec<f64>| -> Result<WeightedCdf> {
            let total: f64 = atoms.iter().sum();
            if total > 0.0 {
                let mut cdf: Vec<f64> = atoms.iter().map(|m| m / total).collect();
                cumsum_in_place(&face_shape, &mut cdf);
                // pin the top corner to exactly 1 against rounding
                if let Some(last) = cdf.last_mut() {
                    *last = 1.0;
                }
                let cdf = GridFunction::new(face_grid.clone(), cdf.into_iter().map(|v| v.min(1.0)).collect())?;
                Ok(WeightedCdf { alpha: total / scale, cdf })
            } else {
                Ok(WeightedCdf { alpha: 0.0, cdf: placeholder_cdf(&face_grid)? })
            }
        };
        let positive = part(pos)?;
        let negative = part(neg)?;
        components.push(MixtureComponent { subset, positive, negative });
    }
    Ok(MixtureRepresentation { dim, f0, budget, components })
}

/// Evaluates the representation on its natural grid.
pub fn synthesize(rep: &MixtureRepresentation) -> Result<GridFunction> {
    rep.validate()?;
    synthesize_on(rep, &rep.natural_grid())
}

/// Evaluates the representation at the corners of `grid`.
pub fn synthesize_on(rep: &MixtureRepresentation, grid: &[Vec<f64>]) -> Result<GridFunction> {
    if grid.len() != rep.dim {
        return Err(Error::InvalidGrid("grid dimension does not match representation".into()));
    }
    GridFunction::from_corners(grid.to_vec(), |x| rep.eval(x))
}

/// Random member of the ball of radius `budget` whose component CDFs live on
/// faces of `base_grid`: sparse random masses, occasionally a point mass.
pub fn random_mixture<R: rand::Rng>(rng: &mut R, base_grid: &[Vec<f64>], budget: f64) -> Result<MixtureRepresentation> {
    let dim = base_grid.len();
    let f0 = budget * rng.gen_range(-0.5..=0.5);
    let subsets: Vec<SubsetMask> = SubsetMask::nonempty(dim).collect();
    let raw: Vec<f64> = (0..2 * subsets.len()).map(|_| if rng.gen_bool(0.7) { rng.gen::<f64>() } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum::<f64>().max(1e-300);
    let keep = rng.gen_range(0.3..=1.0);
    let mut components = Vec::with_capacity(subsets.len());
    for (k, &s) in subsets.iter().enumerate() {
        let face: Vec<Vec<f64>> = s.axes().map(|a| base_grid[a].clone()).collect();
        let mut cdf = || -> Result<GridFunction> {
            let shape = shape_of(&face);
            let len: usize = shape.iter().product();
            let mut m = vec![0.0; len];
            if rng.gen_bool(0.2) {
                m[rng.gen_range(0..len)] = 1.0;
            } else {
                for v in m.iter_mut() {
                    if rng.gen_bool(0.4) {
                        *v = rng.gen::<f64>();
                    }
                }
                if m.iter().all(|&v| v == 0.0) {
                    m[len - 1] = 1.0;
                }
            }
            let t: f64 = m.iter().sum();
            m.iter_mut().for_each(|v| *v /= t);
            cumsum_in_place(&shape, &mut m);
            // pin the top corner against rounding
            *m.last_mut().unwrap() = 1.0;
            GridFunction::new(face.clone(), m)
        };
        let positive = WeightedCdf { alpha: keep * raw[2 * k] / total, cdf: cdf()? };
        let negative = WeightedCdf { alpha: keep * raw[2 * k + 1] / total, cdf: cdf()? };
        components.push(MixtureComponent { subset: s, positive, negative });
    }
    let rep = MixtureRepresentation { dim, f0, budget, components };
    rep.validate()?;
    Ok(rep)
}
