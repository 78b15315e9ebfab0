//! Brackets for CDF classes and for the unit variation ball, the simplex cover
//! used to discretize mixture weights, loss-transformed brackets, and the
//! entropy-integral bound.

use std::collections::BinaryHeap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{merge_grids, Evaluate, GridFunction};
use crate::losses::LossSpec;
use crate::subset::SubsetMask;
use crate::svn::MixtureRepresentation;

const CONTAIN_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    Lebesgue,
    Empirical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormTag {
    pub order: u32,
    pub measure: Measure,
}

impl NormTag {
    pub const L2_LEBESGUE: NormTag = NormTag { order: 2, measure: Measure::Lebesgue };
}

/// `[lower, upper]` with `lower <= upper` at every grid corner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bracket {
    pub lower: GridFunction,
    pub upper: GridFunction,
    pub size: f64,
    pub norm_tag: NormTag,
}

impl Bracket {
    /// Validates the ordering and records the exact `L2(Lebesgue)` size.
    pub fn new(lower: GridFunction, upper: GridFunction) -> Result<Bracket> {
        let width = upper.zip_with(&lower, |u, l| u - l)?;
        if let Some(v) = width.values().iter().find(|&&v| v < -CONTAIN_TOL) {
            return Err(Error::InvalidInput(format!("bracket lower exceeds upper by {}", -v)));
        }
        let size = width.l2_norm();
        Ok(Bracket { lower, upper, size, norm_tag: NormTag::L2_LEBESGUE })
    }

    /// Whether `lower <= f <= upper` at every corner of the merged grid, which
    /// is exact for piecewise-constant functions.
    pub fn contains(&self, f: &GridFunction) -> bool {
        self.violation(f) <= CONTAIN_TOL
    }

    /// Largest amount by which `f` leaves the bracket.
    pub fn violation(&self, f: &GridFunction) -> f64 {
        let grid = merge_grids([self.lower.grid(), self.upper.grid(), f.grid()]);
        let mut worst = 0.0f64;
        let probe = GridFunction::constant(grid, 0.0).expect("merged grid is valid");
        for flat in 0..probe.len() {
            let x = probe.corner(flat);
            let v = f.eval(&x);
            worst = worst.max(self.lower.eval(&x) - v).max(v - self.upper.eval(&x));
        }
        worst
    }

    /// `(mean over points of (upper - lower)^2)^(1/2)`.
    pub fn empirical_size(&self, points: &[Vec<f64>]) -> f64 {
        if points.is_empty() {
            return 0.0;
        }
        let s: f64 = points
            .iter()
            .map(|x| {
                let w = self.upper.eval(x) - self.lower.eval(x);
                w * w
            })
            .sum();
        (s / points.len() as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketSet {
    pub epsilon: f64,
    pub class_tag: String,
    pub brackets: Vec<Bracket>,
}

impl BracketSet {
    pub fn len(&self) -> usize {
        self.brackets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.brackets.is_empty()
    }

    pub fn max_size(&self) -> f64 {
        self.brackets.iter().map(|b| b.size).fold(0.0, f64::max)
    }

    pub fn covering(&self, f: &GridFunction) -> Option<usize> {
        self.brackets.iter().position(|b| b.contains(f))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidEpsilon(epsilon))
    }
}

fn ln_choose(n: u64, k: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

fn choose(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
    }
    c
}

/// The lattice `{epsilon * j : j in N^K, sum_k j_k <= floor(1/epsilon)}` inside
/// the simplex `{a >= 0, sum a <= 1}`. Rounding every coordinate down gives a
/// lattice point within sup-distance `epsilon`, so points are never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimplexCover {
    pub epsilon: f64,
    #[serde(rename = "K")]
    pub k: usize,
    /// Largest admissible level sum.
    pub levels: u32,
}

pub fn simplex_cover(epsilon: f64, k: usize) -> Result<SimplexCover> {
    check_epsilon(epsilon)?;
    if k == 0 {
        return Err(Error::InvalidInput("simplex dimension K must be positive".into()));
    }
    let levels = (1.0 / epsilon + 1e-9).floor() as u32;
    Ok(SimplexCover { epsilon, k, levels })
}

impl SimplexCover {
    /// `C(levels + K, K)`.
    pub fn count(&self) -> u128 {
        choose(self.levels as u64 + self.k as u64, self.k as u64)
    }

    pub fn log_count(&self) -> f64 {
        ln_choose(self.levels as u64 + self.k as u64, self.k as u64)
    }

    /// `(ceil(1/epsilon) + 1)^K`, the crude grid count.
    pub fn grid_bound(&self) -> f64 {
        ((1.0 / self.epsilon).ceil() + 1.0).powi(self.k as i32)
    }

    pub fn point(&self, levels: &[u32]) -> Vec<f64> {
        levels.iter().map(|&j| j as f64 * self.epsilon).collect()
    }

    /// Level vector of the lattice point at or below `alpha`.
    pub fn nearest(&self, alpha: &[f64]) -> Result<Vec<u32>> {
        if alpha.len() != self.k {
            return Err(Error::InvalidInput(format!("weight vector has length {}, expected {}", alpha.len(), self.k)));
        }
        let mut js: Vec<u32> = alpha
            .iter()
            .map(|&a| {
                let mut j = (a.max(0.0) / self.epsilon).floor();
                if j * self.epsilon > a {
                    j -= 1.0;
                }
                if (j + 1.0) * self.epsilon <= a {
                    j += 1.0;
                }
                j.max(0.0) as u32
            })
            .collect();
        while js.iter().map(|&j| j as u64).sum::<u64>() > self.levels as u64 {
            let (imax, _) = js.iter().enumerate().max_by_key(|(_, &j)| j).unwrap();
            js[imax] -= 1;
        }
        Ok(js)
    }

    /// All lattice points in lexicographic order of their level vectors.
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        let count = self.count();
        if count > 2_000_000 {
            return Err(Error::TooLarge { atoms: count.min(usize::MAX as u128) as usize, budget: 2_000_000 });
        }
        let mut out = Vec::with_capacity(count as usize);
        let mut cur = vec![0u32; self.k];
        fn rec(cover: &SimplexCover, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<f64>>) {
            if pos == cover.k {
                out.push(cover.point(cur));
                return;
            }
            for j in 0..=left {
                cur[pos] = j;
                rec(cover, pos + 1, left - j, cur, out);
            }
            cur[pos] = 0;
        }
        rec(self, 0, self.levels, &mut cur, &mut out);
        Ok(out)
    }
}

/// Whether some point of `points` is within sup-distance `epsilon` of `alpha`.
pub fn covers(points: &[Vec<f64>], alpha: &[f64], epsilon: f64) -> bool {
    points.iter().any(|p| p.iter().zip(alpha).all(|(a, b)| (a - b).abs() <= epsilon + 1e-12))
}

/// `d log(1/epsilon) + d(d+1) log 2`.
pub fn simplex_log_bound(epsilon: f64, d: usize) -> f64 {
    let d = d as f64;
    d * (1.0 / epsilon).ln() + d * (d + 1.0) * std::f64::consts::LN_2
}

/// Range quantization of `[0,1]`-valued monotone functions: level `q` means the
/// band `[epsilon q, min(epsilon (q+1), 1)]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Staircase {
    pub epsilon: f64,
    /// Highest level; its band reaches 1.
    pub top: u32,
}

impl Staircase {
    pub fn new(epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        let top = ((1.0 / epsilon) - 1e-9).ceil().max(1.0) as u32 - 1;
        Ok(Staircase { epsilon, top })
    }

    pub fn level(&self, v: f64) -> u32 {
        let e = self.epsilon;
        let mut q = (v / e).floor();
        if q * e > v {
            q -= 1.0;
        }
        if (q + 1.0) * e < v {
            q += 1.0;
        }
        (q.max(0.0) as u32).min(self.top)
    }

    pub fn lower(&self, q: u32) -> f64 {
        (self.epsilon * q as f64).min(1.0)
    }

    pub fn upper(&self, q: u32) -> f64 {
        if q >= self.top {
            1.0
        } else {
            (self.epsilon * (q + 1) as f64).min(1.0)
        }
    }

    /// Bracket of a `[0,1]`-valued function given on a grid.
    pub fn bracket_of(&self, g: &GridFunction) -> Result<(Vec<u32>, Bracket)> {
        let levels: Vec<u32> = g.values().iter().map(|&v| self.level(v)).collect();
        let b = self.bracket_from_levels(g.grid().to_vec(), &levels)?;
        Ok((levels, b))
    }

    pub fn bracket_from_levels(&self, grid: Vec<Vec<f64>>, levels: &[u32]) -> Result<Bracket> {
        let lower = GridFunction::new(grid.clone(), levels.iter().map(|&q| self.lower(q)).collect())?;
        let upper = GridFunction::new(grid, levels.iter().map(|&q| self.upper(q)).collect())?;
        Bracket::new(lower, upper)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdfMode {
    Construct1d,
    /// Greedy cover of the monotone functions on the grid with values in
    /// `{0, 1/levels, .., 1}`.
    BruteforceTiny { levels: u32 },
}

/// Budget on `grid cells x quantization levels` for brute-force counting.
pub const BRUTEFORCE_ATOMS: usize = 20;

fn nondecreasing_sequences(len: usize, top: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(len);
    fn rec(len: usize, top: u32, lo: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for v in lo..=top {
            cur.push(v);
            rec(len, top, v, cur, out);
            cur.pop();
        }
    }
    rec(len, top, 0, &mut cur, &mut out);
    out
}

/// Brackets for the monotone `[0,1]`-valued functions (in particular the CDFs)
/// on a one-dimensional face grid.
pub fn cdf_brackets(epsilon: f64, face_grid: &[Vec<f64>], mode: CdfMode) -> Result<BracketSet> {
    check_epsilon(epsilon)?;
    if face_grid.len() != 1 {
        return Err(Error::InvalidInput(format!(
            "CDF bracketing is implemented on one-dimensional faces, got dimension {}",
            face_grid.len()
        )));
    }
    crate::grid::validate_axis(0, &face_grid[0])?;
    let m = face_grid[0].len();
    match mode {
        CdfMode::Construct1d => {
            let stair = Staircase::new(epsilon)?;
            let count = choose(m as u64 + stair.top as u64, m as u64);
            if count > 200_000 {
                return Err(Error::TooLarge { atoms: count as usize, budget: 200_000 });
            }
            let brackets = nondecreasing_sequences(m, stair.top)
                .iter()
                .map(|levels| stair.bracket_from_levels(face_grid.to_vec(), levels))
                .collect::<Result<_>>()?;
            Ok(BracketSet { epsilon, class_tag: "cdf-1d".into(), brackets })
        }
        CdfMode::BruteforceTiny { levels } => {
            let atoms = m * levels as usize;
            if levels == 0 || atoms > BRUTEFORCE_ATOMS {
                return Err(Error::TooLarge { atoms, budget: BRUTEFORCE_ATOMS });
            }
            let brackets = greedy_brackets(epsilon, &face_grid[0], levels)?;
            Ok(BracketSet { epsilon, class_tag: format!("cdf-1d-quantized-{levels}"), brackets })
        }
    }
}

/// Greedy set cover: candidates are pairs `l <= u` of class members (in
/// lexicographic order) with size at most `epsilon`; each round takes the first
/// candidate covering the most uncovered members.
fn greedy_brackets(epsilon: f64, breaks: &[f64], q: u32) -> Result<Vec<Bracket>> {
    let universe = nondecreasing_sequences(breaks.len(), q);
    let widths: Vec<f64> = (0..breaks.len()).map(|k| breaks.get(k + 1).copied().unwrap_or(1.0) - breaks[k]).collect();
    let words = universe.len().div_ceil(64);
    let mut cands: Vec<(usize, usize, Vec<u64>)> = Vec::new();
    for (li, l) in universe.iter().enumerate() {
        for (ui, u) in universe.iter().enumerate() {
            if l.iter().zip(u).any(|(a, b)| a > b) {
                continue;
            }
            let sq: f64 = l
                .iter()
                .zip(u)
                .zip(&widths)
                .map(|((&a, &b), w)| {
                    let t = (b - a) as f64 / q as f64;
                    w * t * t
                })
                .sum();
            if sq.sqrt() > epsilon + 1e-12 {
                continue;
            }
            let mut bits = vec![0u64; words];
            for (gi, g) in universe.iter().enumerate() {
                if l.iter().zip(g).zip(u).all(|((a, x), b)| a <= x && x <= b) {
                    bits[gi / 64] |= 1 << (gi % 64);
                }
            }
            cands.push((li, ui, bits));
        }
    }
    let mut uncovered = vec![0u64; words];
    for gi in 0..universe.len() {
        uncovered[gi / 64] |= 1 << (gi % 64);
    }
    let mut chosen = Vec::new();
    while uncovered.iter().any(|&w| w != 0) {
        let mut best = None;
        let mut best_gain = 0;
        for (ci, (_, _, bits)) in cands.iter().enumerate() {
            let gain: u32 = bits.iter().zip(&uncovered).map(|(a, b)| (a & b).count_ones()).sum();
            if gain > best_gain {
                best_gain = gain;
                best = Some(ci);
            }
        }
        let ci = best.expect("every member brackets itself");
        for (u, b) in uncovered.iter_mut().zip(&cands[ci].2) {
            *u &= !b;
        }
        chosen.push(ci);
    }
    let to_fn = |levels: &[u32]| GridFunction::new(vec![breaks.to_vec()], levels.iter().map(|&v| v as f64 / q as f64).collect());
    chosen
        .into_iter()
        .map(|ci| {
            let (li, ui, _) = &cands[ci];
            Bracket::new(to_fn(&universe[*li])?, to_fn(&universe[*ui])?)
        })
        .collect()
}

/// All monotone functions on `breaks` with values in `{0, 1/q, .., 1}`.
pub fn quantized_monotone_functions(breaks: &[f64], q: u32) -> Result<Vec<GridFunction>> {
    nondecreasing_sequences(breaks.len(), q)
        .into_iter()
        .map(|s| GridFunction::new(vec![breaks.to_vec()], s.iter().map(|&v| v as f64 / q as f64).collect()))
        .collect()
}

/// Number of monotone maps from an `a x b` grid poset into `{0..c}`
/// (plane partitions in an `a x b x c` box).
fn ln_plane_partitions(a: usize, b: usize, c: usize) -> f64 {
    let mut s = 0.0;
    for i in 1..=a {
        for j in 1..=b {
            for k in 1..=c {
                s += (((i + j + k - 1) as f64) / ((i + j + k - 2) as f64)).ln();
            }
        }
    }
    s
}

/// Index of a composed bracket: a cover point and one staircase per face CDF.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BracketIndex {
    /// Levels of the `2^(d+1)` weights, ordered by subset bits (empty set
    /// first) and then positive/negative part.
    pub cover: Vec<u32>,
    /// For each nonempty subset (increasing bits) and part, the staircase
    /// levels at the corners of the face grid.
    pub staircases: Vec<Vec<u32>>,
}

/// Brackets for the unit ball `{f : ||f||_v <= 1}` restricted to CDFs on a
/// fixed base grid, written as mixtures with `2^(d+1)` weights where the
/// empty-set components carry `f(0)` against the constant function 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComposedBrackets {
    pub dim: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub base_grid: Vec<Vec<f64>>,
    pub cover: SimplexCover,
    pub staircase: Staircase,
}

pub fn compose_brackets(cover: &SimplexCover, staircase: &Staircase, base_grid: &[Vec<f64>], epsilon: f64) -> Result<ComposedBrackets> {
    check_epsilon(epsilon)?;
    let dim = base_grid.len();
    if dim == 0 || dim > 8 {
        return Err(Error::InvalidInput(format!("unsupported dimension {dim}")));
    }
    for (a, b) in base_grid.iter().enumerate() {
        crate::grid::validate_axis(a, b)?;
    }
    let k = 1usize << (dim + 1);
    let delta = epsilon / k as f64;
    if cover.k != k || (cover.epsilon - delta).abs() > 1e-15 * delta.max(1.0) {
        return Err(Error::InvalidInput(format!(
            "cover must have K = {k} weights at radius {delta}, got K = {} at {}",
            cover.k, cover.epsilon
        )));
    }
    if (staircase.epsilon - epsilon).abs() > 1e-15 {
        return Err(Error::InvalidInput("CDF brackets must have size epsilon".into()));
    }
    Ok(ComposedBrackets { dim, epsilon, delta, base_grid: base_grid.to_vec(), cover: cover.clone(), staircase: *staircase })
}

impl ComposedBrackets {
    fn face_grid(&self, s: SubsetMask) -> Vec<Vec<f64>> {
        s.axes().map(|a| self.base_grid[a].clone()).collect()
    }

    fn face_len(&self, s: SubsetMask) -> usize {
        s.axes().map(|a| self.base_grid[a].len()).product()
    }

    /// Log of the number of staircases on one face (exact up to two axes,
    /// the crude `(top+1)^cells` bound beyond).
    pub fn ln_face_count(&self, s: SubsetMask) -> f64 {
        let lens: Vec<usize> = s.axes().map(|a| self.base_grid[a].len()).collect();
        let c = self.staircase.top as usize;
        match lens.len() {
            1 => ln_choose((lens[0] + c) as u64, c as u64),
            2 => ln_plane_partitions(lens[0], lens[1], c),
            _ => lens.iter().product::<usize>() as f64 * ((c + 1) as f64).ln(),
        }
    }

    /// `log |cover| + sum_s 2 log |staircases on face s|`.
    pub fn ln_count(&self) -> f64 {
        self.cover.log_count() + SubsetMask::nonempty(self.dim).map(|s| 2.0 * self.ln_face_count(s)).sum::<f64>()
    }

    /// Weights of the extended mixture (see [`BracketIndex::cover`]).
    pub fn extended_weights(&self, rep: &MixtureRepresentation) -> Result<Vec<f64>> {
        if rep.dim != self.dim {
            return Err(Error::InvalidInput("representation dimension mismatch".into()));
        }
        if (rep.budget - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("composed brackets cover the unit ball, got M = {}", rep.budget)));
        }
        let scale = rep.scale();
        let mut w = vec![0.0; self.cover.k];
        w[0] = rep.f0.max(0.0);
        w[1] = (-rep.f0).max(0.0);
        for c in &rep.components {
            let b = c.subset.bits() as usize;
            w[2 * b] += scale * c.positive.alpha;
            w[2 * b + 1] += scale * c.negative.alpha;
        }
        Ok(w)
    }

    /// The bracket selected by the nearest cover point and the staircases of
    /// the component CDFs.
    pub fn designated(&self, rep: &MixtureRepresentation) -> Result<(BracketIndex, Bracket)> {
        let w = self.extended_weights(rep)?;
        let cover = self.cover.nearest(&w)?;
        let mut staircases = Vec::new();
        for s in SubsetMask::nonempty(self.dim) {
            let face = self.face_grid(s);
            let comp = rep.component(s);
            for part in 0..2 {
                let levels = match comp {
                    Some(c) => {
                        let g = if part == 0 { &c.positive.cdf } else { &c.negative.cdf };
                        for (k, axis) in g.grid().iter().enumerate() {
                            if axis.iter().any(|t| face[k].binary_search_by(|b| b.total_cmp(t)).is_err()) {
                                return Err(Error::InvalidInput(format!(
                                    "CDF on subset {s} has breakpoints off the base grid"
                                )));
                            }
                        }
                        let on_face = g.resample(&face)?;
                        on_face.values().iter().map(|&v| self.staircase.level(v)).collect()
                    }
                    // an absent component is a zero-weight point mass at the top corner
                    None => {
                        let mut v = vec![0u32; self.face_len(s)];
                        *v.last_mut().unwrap() = self.staircase.level(1.0);
                        v
                    }
                };
                staircases.push(levels);
            }
        }
        let index = BracketIndex { cover, staircases };
        let b = self.bracket(&index)?;
        Ok((index, b))
    }

    pub fn bracket(&self, index: &BracketIndex) -> Result<Bracket> {
        let nfaces = (1usize << self.dim) - 1;
        if index.cover.len() != self.cover.k || index.staircases.len() != 2 * nfaces {
            return Err(Error::InvalidInput("bracket index has the wrong shape".into()));
        }
        if index.cover.iter().map(|&j| j as u64).sum::<u64>() > self.cover.levels as u64 {
            return Err(Error::InvalidInput("cover levels leave the simplex".into()));
        }
        let alpha = self.cover.point(&index.cover);
        let delta = self.delta;
        let st = &self.staircase;
        let faces: Vec<(SubsetMask, Vec<Vec<f64>>)> = SubsetMask::nonempty(self.dim).map(|s| (s, self.face_grid(s))).collect();
        for (fi, (s, face)) in faces.iter().enumerate() {
            let len: usize = face.iter().map(Vec::len).product();
            for part in 0..2 {
                let lv = &index.staircases[2 * fi + part];
                if lv.len() != len || lv.iter().any(|&q| q > st.top) {
                    return Err(Error::InvalidInput(format!("staircase for subset {s} has the wrong shape")));
                }
            }
        }
        let locate_face = |face: &[Vec<f64>], x: &[f64], s: SubsetMask| -> usize {
            let mut idx = 0;
            for (k, a) in s.axes().enumerate() {
                let i = face[k].partition_point(|&b| b <= x[a]).saturating_sub(1);
                idx = idx * face[k].len() + i;
            }
            idx
        };
        let mut lower_vals = Vec::new();
        let mut upper_vals = Vec::new();
        let probe = GridFunction::constant(self.base_grid.clone(), 0.0)?;
        for flat in 0..probe.len() {
            let x = probe.corner(flat);
            // Lambda_i and Gamma_i for parts i = 1, 2; the empty set has l = u = 1
            let mut lam = [alpha[0] - delta, alpha[1] - delta];
            let mut gam = [alpha[0] + delta, alpha[1] + delta];
            for (fi, (s, face)) in faces.iter().enumerate() {
                let idx = locate_face(face, &x, *s);
                let b = s.bits() as usize;
                for part in 0..2 {
                    let q = index.staircases[2 * fi + part][idx];
                    let (l, u) = (st.lower(q), st.upper(q));
                    let a = alpha[2 * b + part];
                    lam[part] += a * l - delta * l.abs();
                    gam[part] += (a + delta) * u;
                }
            }
            lower_vals.push(lam[0] - gam[1]);
            upper_vals.push(gam[0] - lam[1]);
        }
        Bracket::new(
            GridFunction::new(self.base_grid.clone(), lower_vals)?,
            GridFunction::new(self.base_grid.clone(), upper_vals)?,
        )
    }

    /// A uniformly drawn cover point with independently drawn monotone
    /// staircases (random walks clipped to the top level).
    pub fn random_index<R: Rng>(&self, rng: &mut R) -> BracketIndex {
        let mut left = self.cover.levels;
        let mut cover = vec![0u32; self.cover.k];
        let mut order: Vec<usize> = (0..self.cover.k).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        for &i in &order {
            let j = rng.gen_range(0..=left);
            cover[i] = j;
            left -= j;
        }
        let mut staircases = Vec::new();
        for s in SubsetMask::nonempty(self.dim) {
            let face = self.face_grid(s);
            let shape: Vec<usize> = face.iter().map(Vec::len).collect();
            for _ in 0..2 {
                // a nonnegative random mass field, integrated, is monotone
                let len: usize = shape.iter().product();
                let mut field: Vec<f64> = (0..len).map(|_| if rng.gen_bool(0.3) { rng.gen::<f64>() } else { 0.0 }).collect();
                crate::grid::cumsum_in_place(&shape, &mut field);
                let total = field.last().copied().unwrap_or(0.0).max(1e-300);
                staircases.push(field.iter().map(|v| self.staircase.level(v / total)).collect());
            }
        }
        BracketIndex { cover, staircases }
    }

    /// Indices at the corners of the index space: empty or concentrated cover
    /// points with all-bottom or all-top staircases.
    pub fn extreme_indices(&self) -> Vec<BracketIndex> {
        let mut out = Vec::new();
        let faces: Vec<usize> = SubsetMask::nonempty(self.dim).map(|s| self.face_len(s)).collect();
        for &top in &[false, true] {
            let staircases: Vec<Vec<u32>> = faces
                .iter()
                .flat_map(|&len| {
                    let v = vec![if top { self.staircase.top } else { 0 }; len];
                    [v.clone(), v]
                })
                .collect();
            out.push(BracketIndex { cover: vec![0; self.cover.k], staircases: staircases.clone() });
            for i in 0..self.cover.k {
                let mut cover = vec![0; self.cover.k];
                cover[i] = self.cover.levels;
                out.push(BracketIndex { cover, staircases: staircases.clone() });
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: String,
    pub detail: String,
    pub amount: f64,
}

/// `{epsilon, class_tag, bracket_count, max_size, violations}`; the count is
/// reported on the log scale when it does not fit an integer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BracketAuditReport {
    pub epsilon: f64,
    pub class_tag: String,
    pub bracket_count: Option<u64>,
    pub log_bracket_count: f64,
    pub max_size: f64,
    pub size_bound: f64,
    pub functions_checked: usize,
    pub brackets_checked: usize,
    pub violations: Vec<Violation>,
}

impl BracketAuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Containment of every function in its designated bracket and the `5 epsilon`
/// size bound on designated, extreme and `extra_random` random brackets.
pub fn audit_composed<R: Rng>(
    cb: &ComposedBrackets,
    reps: &[MixtureRepresentation],
    extra_random: usize,
    rng: &mut R,
) -> Result<BracketAuditReport> {
    let bound = 5.0 * cb.epsilon;
    let mut violations = Vec::new();
    let mut max_size = 0.0f64;
    let mut checked = 0;
    let mut check_size = |b: &Bracket, what: String, violations: &mut Vec<Violation>| {
        max_size = max_size.max(b.size);
        checked += 1;
        if b.size > bound + 1e-12 {
            violations.push(Violation { kind: "size".into(), detail: what, amount: b.size - bound });
        }
    };
    for (i, rep) in reps.iter().enumerate() {
        let f = crate::svn::synthesize_on(rep, &cb.base_grid)?;
        let (_, b) = cb.designated(rep)?;
        let v = b.violation(&f);
        if v > CONTAIN_TOL {
            violations.push(Violation { kind: "containment".into(), detail: format!("function {i}"), amount: v });
        }
        check_size(&b, format!("designated bracket of function {i}"), &mut violations);
    }
    for (i, idx) in cb.extreme_indices().iter().enumerate() {
        check_size(&cb.bracket(idx)?, format!("extreme bracket {i}"), &mut violations);
    }
    for i in 0..extra_random {
        let idx = cb.random_index(rng);
        check_size(&cb.bracket(&idx)?, format!("random bracket {i}"), &mut violations);
    }
    let ln = cb.ln_count();
    Ok(BracketAuditReport {
        epsilon: cb.epsilon,
        class_tag: format!("variation-ball-d{}", cb.dim),
        bracket_count: if ln < 40.0 { Some(ln.exp().round() as u64) } else { None },
        log_bracket_count: ln,
        max_size,
        size_bound: bound,
        functions_checked: reps.len(),
        brackets_checked: checked,
        violations,
    })
}

/// Bracket for `v -> L(theta(v), y)` from a bracket `[l, u]` for `theta`, with
/// `l`, `u` clipped to `[-clip, clip]`: the upper end is the larger of the loss
/// at the two ends, the lower end is the loss at `u_y` when `u_y` lies between
/// them and the smaller end value otherwise.
pub fn transform_bracket(b: &Bracket, loss: &LossSpec, clip: f64, y: f64) -> Result<Bracket> {
    if !(clip >= 0.0) {
        return Err(Error::InvalidInput(format!("clip must be nonnegative, got {clip}")));
    }
    let grid = merge_grids([b.lower.grid(), b.upper.grid()]);
    let l = b.lower.resample(&grid)?;
    let u = b.upper.resample(&grid)?;
    let ay = loss.unimodal_point(y);
    let f = |t: f64| loss.value(t.clamp(-clip, clip), y);
    let mut lo = Vec::with_capacity(l.len());
    let mut hi = Vec::with_capacity(l.len());
    for (&lv, &uv) in l.values().iter().zip(u.values()) {
        let (lv, uv) = (lv.clamp(-clip, clip), uv.clamp(-clip, clip));
        let (fl, fu) = (f(lv), f(uv));
        hi.push(fl.max(fu));
        lo.push(if lv <= ay && ay <= uv { f(ay) } else { fl.min(fu) });
    }
    Bracket::new(GridFunction::new(grid.clone(), lo)?, GridFunction::new(grid, hi)?)
}

/// `{0, 1/m, .., (m-1)/m}` on every axis.
pub fn uniform_base_grid(dim: usize, m: usize) -> Vec<Vec<f64>> {
    vec![(0..m.max(1)).map(|k| k as f64 / m.max(1) as f64).collect(); dim]
}

/// Composed-bracket audit of the unit variation ball on a uniform base grid:
/// `functions` random mixtures (the first one degenerate, all weights 0) and
/// `random_brackets` random indices.
pub fn audit_variation_ball(
    dim: usize,
    epsilon: f64,
    grid_size: usize,
    functions: usize,
    random_brackets: usize,
    seed: u64,
) -> Result<BracketAuditReport> {
    check_epsilon(epsilon)?;
    let base = uniform_base_grid(dim, grid_size);
    let k = 1usize << (dim + 1);
    let cover = simplex_cover(epsilon / k as f64, k)?;
    let cb = compose_brackets(&cover, &Staircase::new(epsilon)?, &base, epsilon)?;
    let mut rng = crate::rng::substream(seed, "bracket-audit", &[dim as u64]);
    let mut reps = Vec::with_capacity(functions);
    for i in 0..functions {
        let mut rep = crate::svn::random_mixture(&mut rng, &base, 1.0)?;
        if i == 0 {
            rep.f0 = 0.0;
            for c in &mut rep.components {
                c.positive.alpha = 0.0;
                c.negative.alpha = 0.0;
            }
        }
        reps.push(rep);
    }
    audit_composed(&cb, &reps, random_brackets, &mut rng)
}

/// Greedy brute-force bracketing of the quantized monotone functions on the
/// grid `{0, 1/m, .., (m-1)/m}`, with an exhaustive coverage check.
pub fn audit_cdf_bruteforce(epsilon: f64, m: usize, levels: u32) -> Result<BracketAuditReport> {
    let grid = uniform_base_grid(1, m);
    let set = cdf_brackets(epsilon, &grid, CdfMode::BruteforceTiny { levels })?;
    let mut violations = Vec::new();
    let universe = quantized_monotone_functions(&grid[0], levels)?;
    for (i, g) in universe.iter().enumerate() {
        if set.covering(g).is_none() {
            violations.push(Violation { kind: "coverage".into(), detail: format!("function {i}"), amount: 1.0 });
        }
    }
    for (i, b) in set.brackets.iter().enumerate() {
        if b.size > epsilon + 1e-12 {
            violations.push(Violation { kind: "size".into(), detail: format!("bracket {i}"), amount: b.size - epsilon });
        }
    }
    Ok(BracketAuditReport {
        epsilon,
        class_tag: set.class_tag.clone(),
        bracket_count: Some(set.len() as u64),
        log_bracket_count: (set.len() as f64).ln(),
        max_size: set.max_size(),
        size_bound: epsilon,
        functions_checked: universe.len(),
        brackets_checked: set.len(),
        violations,
    })
}

/// Randomized audit of `transform_bracket`: brackets `l <= theta <= u` on
/// random grids inside `[-a_tilde, a_tilde]`, alternating square loss
/// (`y` uniform in `[-a_tilde, a_tilde]`) and logistic loss (`y` in `{0, 1}`),
/// clipped at `a_tilde`. Checks containment of `L(theta, y)` and
/// `size <= lipschitz x input size`.
pub fn audit_transform(draws: usize, a_tilde: f64, seed: u64) -> Result<BracketAuditReport> {
    if !(a_tilde > 0.0) {
        return Err(Error::InvalidInput(format!("a_tilde must be positive, got {a_tilde}")));
    }
    let square = crate::losses::make_loss("square", a_tilde)?;
    let logistic = crate::losses::make_loss("logistic", a_tilde)?;
    let mut rng = crate::rng::substream(seed, "transform-audit", &[]);
    let mut violations = Vec::new();
    let mut max_size = 0.0f64;
    for i in 0..draws {
        let dim = rng.gen_range(1..=2);
        let grid: Vec<Vec<f64>> = (0..dim)
            .map(|_| {
                let mut b: Vec<f64> = (0..rng.gen_range(1..6)).map(|_| rng.gen::<f64>()).collect();
                b.push(0.0);
                b.sort_by(f64::total_cmp);
                b.dedup();
                b
            })
            .collect();
        let len: usize = grid.iter().map(Vec::len).product();
        let mut lo = Vec::with_capacity(len);
        let mut hi = Vec::with_capacity(len);
        let mut th = Vec::with_capacity(len);
        for _ in 0..len {
            let a = rng.gen_range(-a_tilde..=a_tilde);
            let b = rng.gen_range(-a_tilde..=a_tilde);
            let (l, u) = if a <= b { (a, b) } else { (b, a) };
            lo.push(l);
            hi.push(u);
            th.push(l + rng.gen::<f64>() * (u - l));
        }
        let b = Bracket::new(GridFunction::new(grid.clone(), lo)?, GridFunction::new(grid.clone(), hi)?)?;
        let (loss, y) = if i % 2 == 0 {
            (&square, rng.gen_range(-a_tilde..=a_tilde))
        } else {
            (&logistic, if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
        };
        let t = transform_bracket(&b, loss, a_tilde, y)?;
        let image = GridFunction::new(grid, th)?.map(|v| loss.value(v.clamp(-a_tilde, a_tilde), y))?;
        let v = t.violation(&image);
        if v > CONTAIN_TOL {
            violations.push(Violation { kind: "containment".into(), detail: format!("draw {i} ({})", loss.family), amount: v });
        }
        let allowed = loss.lipschitz * b.size;
        max_size = max_size.max(t.size);
        if t.size > allowed * (1.0 + 1e-12) + 1e-15 {
            violations.push(Violation { kind: "size".into(), detail: format!("draw {i} ({})", loss.family), amount: t.size - allowed });
        }
    }
    Ok(BracketAuditReport {
        epsilon: 0.0,
        class_tag: "transformed-loss".into(),
        bracket_count: Some(draws as u64),
        log_bracket_count: (draws.max(1) as f64).ln(),
        max_size,
        size_bound: f64::NAN,
        functions_checked: draws,
        brackets_checked: draws,
        violations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyIntegral {
    pub delta: f64,
    pub d: usize,
    pub integral: f64,
    pub error_estimate: f64,
    /// `integral / (delta^(1/2) log(1/delta)^(d-1))`.
    pub ratio: f64,
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const GK_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod 15-point estimate and its difference from the embedded Gauss 7-point rule.
fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = GK_WEIGHTS[7] * fc;
    let mut g = G_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        k += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        self.error.total_cmp(&o.error)
    }
}

/// Globally adaptive Gauss-Kronrod quadrature on `[a, b]`.
pub fn integrate_adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64, max_pieces: usize) -> Result<(f64, f64)> {
    let mut heap = BinaryHeap::new();
    let (v, e) = gk15(f, a, b);
    heap.push(Piece { a, b, value: v, error: e });
    let (mut total, mut err) = (v, e);
    while err > rel_tol * total.abs() {
        if heap.len() >= max_pieces {
            return Err(Error::QuadratureFailure { estimate: total, error: err, tolerance: rel_tol });
        }
        let p = heap.pop().unwrap();
        let m = 0.5 * (p.a + p.b);
        let (v1, e1) = gk15(f, p.a, m);
        let (v2, e2) = gk15(f, m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
    // re-sum to shed accumulated rounding from the running updates
    let (total, err) = heap.iter().fold((0.0, 0.0), |(t, e), p| (t + p.value, e + p.error));
    if err > rel_tol * total.abs() {
        return Err(Error::QuadratureFailure { estimate: total, error: err, tolerance: rel_tol });
    }
    Ok((total, err))
}

/// `integral_0^delta eps^(-1/2) log(1/eps)^(d-1) d eps` by adaptive quadrature
/// after `eps = delta e^(-s)`, `s = t / (1 - t)`.
pub fn entropy_integral_check(delta: f64, d: usize) -> Result<EntropyIntegral> {
    if !(delta > 0.0 && delta <= (-1.0f64).exp()) {
        return Err(Error::InvalidInput(format!("delta must lie in (0, 1/e], got {delta}")));
    }
    if d == 0 {
        return Err(Error::InvalidInput("d must be positive".into()));
    }
    let big_l = (1.0 / delta).ln();
    let p = (d - 1) as i32;
    let integrand = move |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = t / (1.0 - t);
        (-0.5 * s).exp() * (big_l + s).powi(p) / ((1.0 - t) * (1.0 - t))
    };
    let (inner, err) = integrate_adaptive(&integrand, 0.0, 1.0, 1e-12, 4000)?;
    let integral = delta.sqrt() * inner;
    let ratio = integral / (delta.sqrt() * big_l.powi(p));
    Ok(EntropyIntegral { delta, d, integral, error_estimate: delta.sqrt() * err, ratio })
}

/// Largest ratio over the sweep checked by the lemma audit.
pub const ENTROPY_RATIO_CONSTANT: f64 = 9.0;
