//! Monte Carlo rate experiments: known truths built from mixtures of CDFs,
//! data generation, exact population risks, and log-log slope estimates.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta as BetaLaw, ContinuousCDF};

use crate::bernstein::{sample_noise, NoiseFamily};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::grid::{merge_grids, Evaluate, GridFunction};
use crate::losses::{dissimilarity, make_loss_family, sigmoid, softplus, LossFamily, LossSpec, RiskEstimate, RiskOracle};
use crate::rng::{hash_hex, substream};
use crate::solver::{fit_erm, sieve_radius, SieveSchedule, SolveOptions, SolveStatus};
use crate::subset::SubsetMask;
use crate::svn::{point_mass_cdf, svn_exact, synthesize, MixtureComponent, MixtureRepresentation, WeightedCdf};

/// A component CDF on a face, discretized on the grid `{0, 1/m, .., 1}` per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CdfSpec {
    PointMass { at: Vec<f64> },
    /// Product of uniform distributions on `{1/m, .., 1}`.
    Uniform { m: usize },
    /// Product of `Beta(a, b)` laws rounded up to `{1/m, .., 1}`.
    Beta { a: f64, b: f64, m: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedCdfSpec {
    pub alpha: f64,
    pub cdf: CdfSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    /// 1-based axes.
    pub subset: Vec<usize>,
    #[serde(default)]
    pub positive: Option<WeightedCdfSpec>,
    #[serde(default)]
    pub negative: Option<WeightedCdfSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthSpec {
    pub dim: usize,
    #[serde(rename = "M")]
    pub budget: f64,
    #[serde(default)]
    pub f0: f64,
    #[serde(default)]
    pub components: Vec<ComponentSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TruthChoice {
    Preset { preset: String, #[serde(default = "one")] budget: f64 },
    Spec(TruthSpec),
}

fn one() -> f64 {
    1.0
}

/// Named truths:
/// - `constant`: `theta0 = 0` (`M = 0`);
/// - `indicator`: point mass at `(1/2, .., 1/2)` on the full subset, `1{x >= 1/2}`;
/// - `ramp`: positive product-uniform CDFs on every face with weights `2^-|s|`
///   (normalized), on a 256-step lattice per axis (16 when `d > 2`), a
///   near-linear ramp of variation norm exactly `M`;
/// - `mixed` (`d = 2`): a point mass, a uniform and a beta component with
///   signed weights and `f(0) = M/8`.
pub fn preset(name: &str, dim: usize, budget: f64) -> Result<TruthSpec> {
    if dim == 0 {
        return Err(Error::InvalidInput("dimension must be positive".into()));
    }
    let full: Vec<usize> = (1..=dim).collect();
    let spec = match name {
        "constant" => TruthSpec { dim, budget: 0.0, f0: 0.0, components: vec![] },
        "indicator" => TruthSpec {
            dim,
            budget,
            f0: 0.0,
            components: vec![ComponentSpec {
                subset: full,
                positive: Some(WeightedCdfSpec { alpha: 1.0, cdf: CdfSpec::PointMass { at: vec![0.5; dim] } }),
                negative: None,
            }],
        },
        "ramp" => {
            let subsets: Vec<SubsetMask> = SubsetMask::nonempty(dim).collect();
            let total: f64 = subsets.iter().map(|s| 0.5f64.powi(s.len() as i32)).sum();
            let components = subsets
                .iter()
                .map(|s| ComponentSpec {
                    subset: s.axes().map(|a| a + 1).collect(),
                    positive: Some(WeightedCdfSpec {
                        alpha: 0.5f64.powi(s.len() as i32) / total,
                        cdf: CdfSpec::Uniform { m: if dim <= 2 { 256 } else { 16 } },
                    }),
                    negative: None,
                })
                .collect();
            TruthSpec { dim, budget, f0: 0.0, components }
        }
        "mixed" => {
            if dim != 2 {
                return Err(Error::InvalidInput("the mixed preset is two-dimensional".into()));
            }
            TruthSpec {
                dim,
                budget,
                f0: budget / 8.0,
                components: vec![
                    ComponentSpec {
                        subset: vec![1],
                        positive: Some(WeightedCdfSpec { alpha: 0.3, cdf: CdfSpec::PointMass { at: vec![0.25] } }),
                        negative: Some(WeightedCdfSpec { alpha: 0.1, cdf: CdfSpec::Uniform { m: 4 } }),
                    },
                    ComponentSpec {
                        subset: vec![2],
                        positive: Some(WeightedCdfSpec { alpha: 0.2, cdf: CdfSpec::Beta { a: 2.0, b: 5.0, m: 8 } }),
                        negative: None,
                    },
                    ComponentSpec {
                        subset: vec![1, 2],
                        positive: None,
                        negative: Some(WeightedCdfSpec { alpha: 0.3, cdf: CdfSpec::Uniform { m: 4 } }),
                    },
                ],
            }
        }
        other => return Err(Error::InvalidInput(format!("unknown truth preset `{other}`"))),
    };
    Ok(spec)
}

fn cdf_from_spec(spec: &CdfSpec, k: usize) -> Result<GridFunction> {
    let lattice = |m: usize| -> Result<Vec<f64>> {
        if m == 0 || m > 4096 {
            return Err(Error::InvalidInput(format!("CDF grid size m = {m} out of range")));
        }
        Ok((0..=m).map(|i| i as f64 / m as f64).collect())
    };
    match spec {
        CdfSpec::PointMass { at } => {
            if at.len() != k {
                return Err(Error::InvalidInput(format!("point mass has {} coordinates on a {k}-dimensional face", at.len())));
            }
            point_mass_cdf(vec![vec![0.0]; k], at)
        }
        CdfSpec::Uniform { m } => {
            let axis = lattice(*m)?;
            GridFunction::from_corners(vec![axis; k], |x| x.iter().product())
        }
        CdfSpec::Beta { a, b, m } => {
            let law = BetaLaw::new(*a, *b).map_err(|e| Error::InvalidInput(format!("beta parameters: {e}")))?;
            let axis = lattice(*m)?;
            GridFunction::from_corners(vec![axis; k], |x| {
                x.iter().map(|&t| if t >= 1.0 { 1.0 } else { law.cdf(t) }).product()
            })
        }
    }
}

/// Mixture representation of a truth specification.
pub fn truth_representation(spec: &TruthSpec) -> Result<MixtureRepresentation> {
    let mut components = Vec::with_capacity(spec.components.len());
    for c in &spec.components {
        if c.subset.is_empty() || c.subset.iter().any(|&a| a == 0 || a > spec.dim) {
            return Err(Error::InvalidInput(format!("subset {:?} invalid for dimension {}", c.subset, spec.dim)));
        }
        let subset = SubsetMask::from_axes(&c.subset.iter().map(|a| a - 1).collect::<Vec<_>>());
        let k = subset.len();
        let part = |p: &Option<WeightedCdfSpec>| -> Result<WeightedCdf> {
            match p {
                Some(w) => Ok(WeightedCdf { alpha: w.alpha, cdf: cdf_from_spec(&w.cdf, k)? }),
                None => Ok(WeightedCdf { alpha: 0.0, cdf: point_mass_cdf(vec![vec![0.0]; k], &vec![1.0; k])? }),
            }
        };
        components.push(MixtureComponent { subset, positive: part(&c.positive)?, negative: part(&c.negative)? });
    }
    let rep = MixtureRepresentation { dim: spec.dim, f0: spec.f0, budget: spec.budget, components };
    rep.validate()?;
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub representation: MixtureRepresentation,
    pub theta0: GridFunction,
    pub svn: f64,
}

pub fn gen_truth(spec: &TruthSpec) -> Result<Truth> {
    let representation = truth_representation(spec)?;
    let theta0 = synthesize(&representation)?;
    let svn = svn_exact(&theta0);
    Ok(Truth { representation, theta0, svn })
}

pub fn resolve_truth(choice: &TruthChoice, dim: usize) -> Result<TruthSpec> {
    let spec = match choice {
        TruthChoice::Preset { preset: name, budget } => preset(name, dim, *budget)?,
        TruthChoice::Spec(s) => s.clone(),
    };
    if spec.dim != dim {
        return Err(Error::InvalidInput(format!("truth has dimension {}, config has {dim}", spec.dim)));
    }
    Ok(spec)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Design {
    Uniform,
    /// Independent `Beta(a, b)` coordinates.
    ProductBeta { a: f64, b: f64 },
}

impl Design {
    fn validate(&self) -> Result<()> {
        match *self {
            Design::Uniform => Ok(()),
            Design::ProductBeta { a, b } if a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite() => Ok(()),
            Design::ProductBeta { a, b } => Err(Error::InvalidInput(format!("beta design parameters must be positive, got ({a}, {b})"))),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Vec<f64> {
        match *self {
            Design::Uniform => (0..dim).map(|_| rng.gen::<f64>()).collect(),
            Design::ProductBeta { a, b } => {
                let law = BetaDist::new(a, b).expect("validated parameters");
                (0..dim).map(|_| law.sample(rng)).collect()
            }
        }
    }

    /// Probability of `[lo, hi)` on one axis.
    fn axis_mass(&self, law: Option<&BetaLaw>, lo: f64, hi: f64) -> f64 {
        match (self, law) {
            (Design::ProductBeta { .. }, Some(l)) => {
                let c = |t: f64| if t >= 1.0 { 1.0 } else { l.cdf(t) };
                c(hi) - c(lo)
            }
            _ => hi - lo,
        }
    }
}

/// How `Y` is drawn given `theta0(X)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ResponseSpec {
    /// `Y = theta0(X) + e`; `scale = 0` means no noise.
    Noise { family: NoiseFamily, scale: f64 },
    /// `Y = clip(theta0(X) + U(-half_width, half_width), +-a_tilde)`; the
    /// config requires `a_tilde >= ||theta0||_inf + half_width`, so clipping
    /// never binds and `theta0` stays the regression function.
    Bounded { half_width: f64, a_tilde: f64 },
    /// `Y ~ Bernoulli(sigmoid(theta0(X)))`.
    Bernoulli,
}

impl ResponseSpec {
    fn validate(&self, loss: LossFamily, theta0: &GridFunction) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        match (*self, loss) {
            (ResponseSpec::Noise { scale, .. }, LossFamily::SquareSubexp) => {
                if !(scale >= 0.0 && scale.is_finite()) {
                    return bad(format!("noise scale must be nonnegative, got {scale}"));
                }
                Ok(())
            }
            (ResponseSpec::Bounded { half_width, a_tilde }, LossFamily::SquareBounded) => {
                if !(half_width >= 0.0) || !a_tilde.is_finite() {
                    return bad("bounded response needs half_width >= 0 and finite a_tilde".into());
                }
                let need = theta0.sup_abs() + half_width;
                if a_tilde < need {
                    return bad(format!("a_tilde = {a_tilde} < ||theta0||_inf + half_width = {need}"));
                }
                Ok(())
            }
            (ResponseSpec::Bernoulli, LossFamily::Logistic) => Ok(()),
            (r, l) => bad(format!("response {r:?} does not match loss {l}")),
        }
    }

    /// Conditional variance of `Y` given `X` for square losses.
    fn noise_variance(&self) -> f64 {
        match *self {
            ResponseSpec::Noise { family, scale } => match family {
                NoiseFamily::Laplace => 2.0 * scale * scale,
                NoiseFamily::Gaussian | NoiseFamily::CenteredExponential => scale * scale,
            },
            ResponseSpec::Bounded { half_width, .. } => half_width * half_width / 3.0,
            ResponseSpec::Bernoulli => 0.0,
        }
    }

    fn draw<R: Rng + ?Sized>(&self, t0: f64, rng: &mut R) -> f64 {
        match *self {
            ResponseSpec::Noise { family, scale } => {
                if scale == 0.0 {
                    t0
                } else {
                    t0 + sample_noise(family, scale, rng)
                }
            }
            ResponseSpec::Bounded { half_width, a_tilde } => {
                let u = if half_width > 0.0 { rng.gen_range(-half_width..=half_width) } else { 0.0 };
                (t0 + u).clamp(-a_tilde, a_tilde)
            }
            ResponseSpec::Bernoulli => {
                if rng.gen::<f64>() < sigmoid(t0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `X` then `Y` per observation, from one stream.
pub fn gen_dataset<R: Rng + ?Sized>(
    theta0: &GridFunction,
    n: usize,
    design: &Design,
    response: &ResponseSpec,
    rng: &mut R,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::EmptyData);
    }
    design.validate()?;
    let dim = theta0.dim();
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi = design.sample(dim, rng);
        y.push(response.draw(theta0.eval(&xi), rng));
        x.push(xi);
    }
    Dataset::new(x, y)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskSettings {
    /// Exact cell-wise quadrature up to this many cells, Monte Carlo beyond.
    pub max_cells: u64,
    pub mc_draws: usize,
    pub mc_seed: u64,
}

impl Default for RiskSettings {
    fn default() -> Self {
        RiskSettings { max_cells: 200_000_000, mc_draws: 1_000_000, mc_seed: 0 }
    }
}

/// Population risk under a known design, response law and regression function.
pub struct ExactRiskOracle {
    pub theta0: GridFunction,
    pub design: Design,
    pub response: ResponseSpec,
    pub settings: RiskSettings,
    beta: Option<BetaLaw>,
}

impl ExactRiskOracle {
    pub fn new(theta0: GridFunction, design: Design, response: ResponseSpec, settings: RiskSettings) -> Result<Self> {
        design.validate()?;
        let beta = match design {
            Design::ProductBeta { a, b } => Some(BetaLaw::new(a, b).map_err(|e| Error::InvalidInput(e.to_string()))?),
            Design::Uniform => None,
        };
        Ok(ExactRiskOracle { theta0, design, response, settings, beta })
    }

    /// Expected loss at `u` given `theta0(x) = t0`, minus the same at `base`.
    fn conditional(&self, loss: &LossSpec, u: f64, t0: f64, base: Option<f64>) -> f64 {
        match loss.family {
            LossFamily::Logistic => {
                let eta = sigmoid(t0);
                let r = |v: f64| eta * softplus(-v) + (1.0 - eta) * softplus(v);
                match base {
                    Some(b) => {
                        // difference form avoids cancellation between two risks
                        eta * (softplus(-u) - softplus(-b)) + (1.0 - eta) * (softplus(u) - softplus(b))
                    }
                    None => r(u),
                }
            }
            _ => match base {
                Some(b) => (u - t0) * (u - t0) - (b - t0) * (b - t0),
                None => (u - t0) * (u - t0) + self.response.noise_variance(),
            },
        }
    }

    /// `E[c(theta(X), reference(X))]` over the design, exactly when the merged
    /// grid is small enough.
    fn integrate(&self, loss: &LossSpec, theta: &GridFunction, reference: Option<&GridFunction>) -> Result<RiskEstimate> {
        let dim = self.theta0.dim();
        if theta.dim() != dim || reference.is_some_and(|r| r.dim() != dim) {
            return Err(Error::InvalidInput("function dimension does not match the truth".into()));
        }
        let mut grids = vec![theta.grid(), self.theta0.grid()];
        if let Some(r) = reference {
            grids.push(r.grid());
        }
        let merged = merge_grids(grids);
        let cells: u64 = merged.iter().map(|a| a.len() as u64).try_fold(1u64, |acc, l| acc.checked_mul(l)).unwrap_or(u64::MAX);
        if cells > self.settings.max_cells {
            return Ok(self.monte_carlo(loss, theta, reference));
        }
        let funcs: Vec<&GridFunction> = std::iter::once(theta).chain(std::iter::once(&self.theta0)).chain(reference).collect();
        // per axis and function: merged index -> function grid index
        let maps: Vec<Vec<Vec<usize>>> = funcs
            .iter()
            .map(|f| {
                (0..dim)
                    .map(|a| merged[a].iter().map(|&t| f.grid()[a].partition_point(|&b| b <= t) - 1).collect())
                    .collect()
            })
            .collect();
        let axis_w: Vec<Vec<f64>> = merged
            .iter()
            .map(|b| {
                (0..b.len())
                    .map(|k| self.design.axis_mass(self.beta.as_ref(), b[k], b.get(k + 1).copied().unwrap_or(1.0)))
                    .collect()
            })
            .collect();
        let strides: Vec<Vec<usize>> = funcs
            .iter()
            .map(|f| {
                let shape = f.shape();
                let mut s = vec![1; dim];
                for a in (0..dim.saturating_sub(1)).rev() {
                    s[a] = s[a + 1] * shape[a + 1];
                }
                s
            })
            .collect();
        let shape: Vec<usize> = merged.iter().map(Vec::len).collect();
        // sweep the last axis innermost; partial products over leading axes
        let last = dim - 1;
        let mut idx = vec![0usize; dim];
        let mut total = 0.0;
        let mut comp = 0.0;
        'outer: loop {
            let mut w_lead = 1.0;
            let mut offs = vec![0usize; funcs.len()];
            for a in 0..last {
                w_lead *= axis_w[a][idx[a]];
                for (fi, off) in offs.iter_mut().enumerate() {
                    *off += maps[fi][a][idx[a]] * strides[fi][a];
                }
            }
            if w_lead > 0.0 {
                let mut row = 0.0;
                for k in 0..shape[last] {
                    let w = axis_w[last][k];
                    if w == 0.0 {
                        continue;
                    }
                    let val = |fi: usize| funcs[fi].values()[offs[fi] + maps[fi][last][k]];
                    let u = val(0);
                    let t0 = val(1);
                    let base = if reference.is_some() { Some(val(2)) } else { None };
                    row += w * self.conditional(loss, u, t0, base);
                }
                // Kahan over rows
                let y = w_lead * row - comp;
                let t = total + y;
                comp = (t - total) - y;
                total = t;
            }
            let mut a = last;
            loop {
                if a == 0 {
                    break 'outer;
                }
                a -= 1;
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(RiskEstimate { value: total, std_error: 0.0, n_mc: 0 })
    }

    fn monte_carlo(&self, loss: &LossSpec, theta: &GridFunction, reference: Option<&GridFunction>) -> RiskEstimate {
        let mut rng = substream(self.settings.mc_seed, "risk-oracle", &[]);
        let n = self.settings.mc_draws.max(2);
        let dim = self.theta0.dim();
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = self.design.sample(dim, &mut rng);
            let v = self.conditional(loss, theta.eval(&x), self.theta0.eval(&x), reference.map(|r| r.eval(&x)));
            s += v;
            s2 += v * v;
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        RiskEstimate { value: mean, std_error: (var / n as f64).sqrt(), n_mc: n }
    }
}

impl RiskOracle for ExactRiskOracle {
    fn risk(&self, loss: &LossSpec, theta: &GridFunction) -> Result<RiskEstimate> {
        self.integrate(loss, theta, None)
    }

    fn excess_risk(&self, loss: &LossSpec, theta: &GridFunction, reference: &GridFunction) -> Result<RiskEstimate> {
        self.integrate(loss, theta, Some(reference))
    }
}

/// `(E_design (theta - theta0)^2)^(1/2)`, exact on the merged grid.
pub fn l2_distance(theta: &GridFunction, theta0: &GridFunction, design: &Design) -> Result<f64> {
    let grid = merge_grids([theta.grid(), theta0.grid()]);
    let diff = theta.resample(&grid)?.zip_with(&theta0.resample(&grid)?, |a, b| a - b)?;
    let beta = match *design {
        Design::ProductBeta { a, b } => Some(BetaLaw::new(a, b).map_err(|e| Error::InvalidInput(e.to_string()))?),
        Design::Uniform => None,
    };
    let probe = GridFunction::constant(grid.clone(), 0.0)?;
    let mut s = 0.0;
    for (flat, v) in diff.values().iter().enumerate() {
        let x = probe.corner(flat);
        let mut w = 1.0;
        for (a, &t) in x.iter().enumerate() {
            let k = grid[a].partition_point(|&b| b <= t) - 1;
            w *= design.axis_mass(beta.as_ref(), t, grid[a].get(k + 1).copied().unwrap_or(1.0));
        }
        s += w * v * v;
    }
    Ok(s.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub d: usize,
    pub truth: TruthChoice,
    #[serde(default = "uniform_design")]
    pub design: Design,
    pub loss: LossFamily,
    pub response: ResponseSpec,
    pub schedule: SieveSchedule,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub risk: RiskSettings,
    #[serde(default)]
    pub solver: SolveOptions,
}

fn uniform_design() -> Design {
    Design::Uniform
}

impl ExperimentConfig {
    /// Checks the config and builds the truth.
    pub fn validate(&self) -> Result<Truth> {
        if self.d == 0 {
            return Err(Error::InvalidInput("d must be positive".into()));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidInput("n_grid must be nonempty, positive and strictly increasing".into()));
        }
        if self.replicates < 3 {
            return Err(Error::InvalidInput(format!("need at least 3 replicates, got {}", self.replicates)));
        }
        self.schedule.validate()?;
        self.solver.validate()?;
        self.design.validate()?;
        let truth = gen_truth(&resolve_truth(&self.truth, self.d)?)?;
        let a0 = self.n_grid.iter().map(|&n| sieve_radius(&self.schedule, n)).fold(f64::INFINITY, f64::min);
        if truth.svn > a0 * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!(
                "truth has variation norm {} > smallest sieve radius {a0}; it must be feasible",
                truth.svn
            )));
        }
        self.response.validate(self.loss, &truth.theta0)?;
        Ok(truth)
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hash_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    fn loss_spec(&self) -> Result<LossSpec> {
        let a_tilde = match self.response {
            ResponseSpec::Bounded { a_tilde, .. } => a_tilde,
            _ => self.n_grid.iter().map(|&n| sieve_radius(&self.schedule, n)).fold(0.0, f64::max),
        };
        make_loss_family(self.loss, a_tilde)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub n: usize,
    pub replicate: usize,
    pub radius: f64,
    pub dissimilarity: f64,
    pub std_error: f64,
    pub excess_risk: f64,
    pub fit_svn: f64,
    pub active_set_size: usize,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub status: SolveStatus,
    pub runtime_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub a_n: f64,
    pub median_dissimilarity: f64,
    /// `log median - (2(d-1)/3) log log n - log a_n`.
    pub corrected_log: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuntimeStats {
    pub total_secs: f64,
    pub mean_secs_per_n: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub config_hash: String,
    pub seed: u64,
    pub d: usize,
    pub loss: LossFamily,
    pub truth_svn: f64,
    pub records: Vec<ReplicateRecord>,
    pub points: Vec<RatePoint>,
    pub corrected_slope: f64,
    pub raw_slope: f64,
    /// Standard deviation of per-replicate corrected slopes over `sqrt(R)`.
    pub slope_std_error: f64,
    pub expected_exponent: f64,
    pub log_correction_exponent: f64,
    pub runtime: RuntimeStats,
}

impl RateReport {
    /// Copy with wall-clock fields zeroed, for reproducibility comparisons.
    pub fn without_runtime(&self) -> RateReport {
        let mut r = self.clone();
        r.records.iter_mut().for_each(|x| x.runtime_secs = 0.0);
        r.runtime = RuntimeStats { total_secs: 0.0, mean_secs_per_n: vec![0.0; r.runtime.mean_secs_per_n.len()] };
        r
    }

    /// `n,replicate,d,runtime` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,replicate,d,runtime\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{:e},{}\n", r.n, r.replicate, r.dissimilarity, r.runtime_secs));
        }
        s
    }
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

fn safe_ln(v: f64) -> f64 {
    v.max(f64::MIN_POSITIVE).ln()
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Per-replicate results are persisted here and reused on rerun.
    pub checkpoint_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    config_hash: String,
    record: ReplicateRecord,
}

fn checkpoint_path(dir: &Path, n: usize, rep: usize) -> PathBuf {
    dir.join(format!("n{n}_r{rep}.json"))
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

fn run_one(config: &ExperimentConfig, truth: &Truth, loss: &LossSpec, oracle: &ExactRiskOracle, n: usize, rep: usize) -> Result<ReplicateRecord> {
    let start = Instant::now();
    let mut rng = substream(config.seed, "dataset", &[n as u64, rep as u64]);
    let data = gen_dataset(&truth.theta0, n, &config.design, &config.response, &mut rng)?;
    let radius = sieve_radius(&config.schedule, n);
    let report = fit_erm(&data, loss, radius, &config.solver)?;
    let fit = report.fit.sparsify();
    let rendered = fit.render()?;
    let d = dissimilarity(&rendered, &truth.theta0, loss, oracle)?;
    Ok(ReplicateRecord {
        n,
        replicate: rep,
        radius,
        dissimilarity: d.value,
        std_error: d.std_error,
        excess_risk: d.excess_risk,
        fit_svn: fit.fit_svn(),
        active_set_size: fit.active_set_size(),
        iterations: report.iterations,
        kkt_residual: report.kkt_residual,
        status: report.status,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

/// Runs every `(n, replicate)` task (in parallel), then fits the slopes.
pub fn run_rate_experiment(config: &ExperimentConfig, options: &RunOptions) -> Result<RateReport> {
    let start = Instant::now();
    let truth = config.validate()?;
    let loss = config.loss_spec()?;
    let oracle = ExactRiskOracle::new(truth.theta0.clone(), config.design, config.response, config.risk)?;
    let hash = config.hash();
    if let Some(dir) = &options.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let tasks: Vec<(usize, usize)> =
        config.n_grid.iter().flat_map(|&n| (0..config.replicates).map(move |r| (n, r))).collect();
    let records: Vec<ReplicateRecord> = tasks
        .par_iter()
        .map(|&(n, rep)| -> Result<ReplicateRecord> {
            if let Some(dir) = &options.checkpoint_dir {
                let path = checkpoint_path(dir, n, rep);
                if let Ok(bytes) = std::fs::read(&path) {
                    if let Ok(cp) = serde_json::from_slice::<Checkpoint>(&bytes) {
                        if cp.config_hash == hash {
                            return Ok(cp.record);
                        }
                    }
                }
                let record = run_one(config, &truth, &loss, &oracle, n, rep)?;
                let cp = Checkpoint { config_hash: hash.clone(), record };
                write_atomic(&path, &serde_json::to_vec(&cp)?)?;
                Ok(cp.record)
            } else {
                run_one(config, &truth, &loss, &oracle, n, rep)
            }
        })
        .collect::<Result<_>>()?;

    let reps = config.replicates;
    let d = config.d;
    let corr = 2.0 * (d as f64 - 1.0) / 3.0;
    let log_n: Vec<f64> = config.n_grid.iter().map(|&n| (n as f64).ln()).collect();
    let correction = |n: usize| {
        let a_n = sieve_radius(&config.schedule, n);
        let ll = if d > 1 { corr * (n as f64).ln().ln() } else { 0.0 };
        ll + a_n.ln()
    };
    let mut points = Vec::with_capacity(config.n_grid.len());
    let mut mean_secs = Vec::with_capacity(config.n_grid.len());
    for (k, &n) in config.n_grid.iter().enumerate() {
        let block = &records[k * reps..(k + 1) * reps];
        let mut ds: Vec<f64> = block.iter().map(|r| r.dissimilarity).collect();
        let med = median(&mut ds);
        mean_secs.push(block.iter().map(|r| r.runtime_secs).sum::<f64>() / reps as f64);
        points.push(RatePoint {
            n,
            a_n: sieve_radius(&config.schedule, n),
            median_dissimilarity: med,
            corrected_log: safe_ln(med) - correction(n),
        });
    }
    let raw: Vec<f64> = points.iter().map(|p| safe_ln(p.median_dissimilarity)).collect();
    let corrected: Vec<f64> = points.iter().map(|p| p.corrected_log).collect();
    let (corrected_slope, raw_slope) = if log_n.len() >= 2 {
        (ols_slope(&log_n, &corrected), ols_slope(&log_n, &raw))
    } else {
        (0.0, 0.0)
    };
    let slope_std_error = if log_n.len() >= 2 {
        let per: Vec<f64> = (0..reps)
            .map(|r| {
                let y: Vec<f64> = config
                    .n_grid
                    .iter()
                    .enumerate()
                    .map(|(k, &n)| safe_ln(records[k * reps + r].dissimilarity) - correction(n))
                    .collect();
                ols_slope(&log_n, &y)
            })
            .collect();
        let m = per.iter().sum::<f64>() / reps as f64;
        let var = per.iter().map(|s| (s - m) * (s - m)).sum::<f64>() / (reps as f64 - 1.0);
        (var / reps as f64).sqrt()
    } else {
        0.0
    };
    Ok(RateReport {
        config_hash: hash,
        seed: config.seed,
        d,
        loss: config.loss,
        truth_svn: truth.svn,
        records,
        points,
        corrected_slope,
        raw_slope,
        slope_std_error,
        expected_exponent: -1.0 / 3.0,
        log_correction_exponent: corr,
        runtime: RuntimeStats { total_secs: start.elapsed().as_secs_f64(), mean_secs_per_n: mean_secs },
    })
}

/// Log-log plot of the median dissimilarity against `n`, with a reference
/// line of slope `-1/3` through the first point.
pub fn svg_plot(report: &RateReport) -> String {
    let (w, h, pad) = (480.0, 360.0, 48.0);
    let xs: Vec<f64> = report.points.iter().map(|p| (p.n as f64).ln()).collect();
    let ys: Vec<f64> = report.points.iter().map(|p| safe_ln(p.median_dissimilarity)).collect();
    let reference: Vec<f64> = xs.iter().map(|x| ys.first().copied().unwrap_or(0.0) - (x - xs[0]) / 3.0).collect();
    let all_y = ys.iter().chain(&reference);
    let (y_lo, y_hi) = all_y.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &y| (a.min(y), b.max(y)));
    let (x_lo, x_hi) = (xs.first().copied().unwrap_or(0.0), xs.last().copied().unwrap_or(1.0));
    let sx = |x: f64| pad + (x - x_lo) / (x_hi - x_lo).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y_lo) / (y_hi - y_lo).max(1e-12) * (h - 2.0 * pad);
    let path = |v: &[f64]| {
        xs.iter().zip(v).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect::<Vec<_>>().join(" ")
    };
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n");
    s.push_str(&format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>\n",
        w - 2.0 * pad,
        h - 2.0 * pad
    ));
    s.push_str(&format!("<polyline points=\"{}\" fill=\"none\" stroke=\"#bbb\" stroke-dasharray=\"4 3\"/>\n", path(&reference)));
    s.push_str(&format!("<polyline points=\"{}\" fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\"/>\n", path(&ys)));
    for (p, (&x, &y)) in report.points.iter().zip(xs.iter().zip(&ys)) {
        s.push_str(&format!("<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"#1f5fa8\"><title>n={} d={:e}</title></circle>\n", sx(x), sy(y), p.n, p.median_dissimilarity));
    }
    s.push_str(&format!(
        "<text x=\"{pad}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">log n</text>\n",
        h - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"8\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">log d</text>\n",
        pad - 12.0
    ));
    s.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" font-family=\"sans-serif\">slope {:.3} (corrected {:.3})</text>\n",
        w / 2.0,
        pad - 12.0,
        report.raw_slope,
        report.corrected_slope
    ));
    s.push_str("</svg>\n");
    s
}
