//! Bernstein norm, sub-exponential noise models with certified parameters, and
//! Monte Carlo audits of the norm bounds for the classes
//! `g1 = (theta - theta_ref) e` and `g2 = (theta - theta_ref)(2 theta - theta_ref - theta0)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StatNormal};

use crate::error::{Error, Result};
use crate::grid::{merge_grids, Evaluate, GridFunction};
use crate::svn::svn_exact;

/// `phi(x) = e^x - x - 1`, by its series near 0.
pub fn phi(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        x2 / 2.0 + x2 * x / 6.0 + x2 * x2 / 24.0
    } else {
        x.exp_m1() - x
    }
}

/// `(t^-2 mean phi(t g_i))^(1/2)`.
pub fn bernstein_norm(g_samples: &[f64], t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::InvalidInput(format!("t must be positive, got {t}")));
    }
    if g_samples.is_empty() {
        return Err(Error::EmptyData);
    }
    let mut acc = 0.0;
    for &g in g_samples {
        if !g.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite sample {g}")));
        }
        let x = t * g;
        if x > 700.0 {
            return Err(Error::Overflow(x));
        }
        acc += phi(x);
    }
    Ok((acc / g_samples.len() as f64).sqrt() / t)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Laplace,
    Gaussian,
    CenteredExponential,
}

impl NoiseFamily {
    pub fn name(self) -> &'static str {
        match self {
            NoiseFamily::Laplace => "laplace",
            NoiseFamily::Gaussian => "gaussian",
            NoiseFamily::CenteredExponential => "centered_exponential",
        }
    }
}

impl fmt::Display for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NoiseFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace" => Ok(NoiseFamily::Laplace),
            "gaussian" | "normal" => Ok(NoiseFamily::Gaussian),
            "centered_exponential" | "centered-exponential" | "exponential" => Ok(NoiseFamily::CenteredExponential),
            other => Err(Error::UnknownNoise(other.to_string())),
        }
    }
}

/// `E e^{lambda e} <= e^{nu^2 lambda^2 / 2}` for `|lambda| <= 1/alpha`, and for
/// the magnitude `E e^{lambda |e|} <= e^{nu'^2 / (2 alpha'^2)}` for
/// `0 <= lambda <= 1/alpha'`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubExpParams {
    pub alpha: f64,
    pub nu: f64,
    pub alpha_prime: f64,
    pub nu_prime: f64,
}

impl SubExpParams {
    /// `2 alpha' e^{nu'^2 / (2 alpha'^2)}`, so that `C_n = c_tilde a_n`.
    pub fn c_tilde(&self) -> f64 {
        2.0 * self.alpha_prime * (self.nu_prime * self.nu_prime / (2.0 * self.alpha_prime * self.alpha_prime)).exp()
    }
}

/// Centered noise. `scale` is `b` for Laplace, `sigma` for Gaussian and the
/// mean `1/lambda` of the underlying exponential for the centered exponential.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub family: NoiseFamily,
    pub scale: f64,
    pub params: SubExpParams,
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("noise scale must be positive and finite, got {scale}")))
    }
}

/// Draws one noise value.
pub fn sample_noise<R: Rng + ?Sized>(family: NoiseFamily, scale: f64, rng: &mut R) -> f64 {
    match family {
        NoiseFamily::Laplace => {
            let u: f64 = rng.gen::<f64>() - 0.5;
            -scale * u.signum() * (-2.0 * u.abs()).ln_1p()
        }
        NoiseFamily::Gaussian => Normal::new(0.0, scale).expect("positive scale").sample(rng),
        NoiseFamily::CenteredExponential => Exp::new(1.0 / scale).expect("positive scale").sample(rng) - scale,
    }
}

/// `E e^{lambda e}`; infinite outside the domain of convergence.
pub fn noise_mgf(family: NoiseFamily, scale: f64, lambda: f64) -> f64 {
    match family {
        NoiseFamily::Laplace => {
            let bl = scale * lambda;
            if bl.abs() < 1.0 {
                1.0 / (1.0 - bl * bl)
            } else {
                f64::INFINITY
            }
        }
        NoiseFamily::Gaussian => (0.5 * scale * scale * lambda * lambda).exp(),
        NoiseFamily::CenteredExponential => {
            let sl = scale * lambda;
            if sl < 1.0 {
                (-sl).exp() / (1.0 - sl)
            } else {
                f64::INFINITY
            }
        }
    }
}

/// `E e^{s |e|}` for `s >= 0`.
pub fn abs_noise_mgf(family: NoiseFamily, scale: f64, s: f64) -> f64 {
    match family {
        NoiseFamily::Laplace => {
            if scale * s < 1.0 {
                1.0 / (1.0 - scale * s)
            } else {
                f64::INFINITY
            }
        }
        NoiseFamily::Gaussian => {
            let z = StatNormal::new(0.0, 1.0).expect("standard normal").cdf(scale * s);
            2.0 * (0.5 * scale * scale * s * s).exp() * z
        }
        NoiseFamily::CenteredExponential => {
            // rate r = 1/scale, centered at m = scale
            let r = 1.0 / scale;
            let m = scale;
            if s >= r {
                return f64::INFINITY;
            }
            r * (-1.0f64).exp() / (r - s) + r * (s * m).exp() * (-((-(s + r) * m).exp_m1())) / (s + r)
        }
    }
}

/// Documented `(alpha, nu)` for each family; the centered exponential uses
/// `alpha = 2 scale` and the smallest `nu` over a fine `lambda` grid, padded.
/// The magnitude pair takes `alpha' = alpha` and `nu'` from the exact
/// `E e^{|e|/alpha'}`.
pub fn subexp_params(family: NoiseFamily, scale: f64) -> Result<SubExpParams> {
    check_scale(scale)?;
    let (alpha, nu) = match family {
        NoiseFamily::Laplace => (2f64.sqrt() * scale, 2.0 * scale),
        NoiseFamily::Gaussian => (scale, scale),
        NoiseFamily::CenteredExponential => {
            let alpha = 2.0 * scale;
            let mut nu2: f64 = scale * scale;
            for k in 1..=2000 {
                let lam = k as f64 / 2000.0 / alpha;
                for l in [lam, -lam] {
                    nu2 = nu2.max(2.0 * noise_mgf(family, scale, l).ln() / (l * l));
                }
            }
            (alpha, 1.001 * nu2.sqrt())
        }
    };
    let alpha_prime = alpha;
    let m = abs_noise_mgf(family, scale, 1.0 / alpha_prime);
    let nu_prime = 1.001 * alpha_prime * (2.0 * m.ln()).sqrt();
    Ok(SubExpParams { alpha, nu, alpha_prime, nu_prime })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationPoint {
    pub lambda: f64,
    pub mgf_mc: f64,
    pub std_error: f64,
    pub mgf_exact: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub family: NoiseFamily,
    pub scale: f64,
    pub params: SubExpParams,
    pub draws: usize,
    pub points: Vec<CertificationPoint>,
    pub magnitude_points: Vec<CertificationPoint>,
}

pub const CERT_GRID: usize = 50;
pub const CERT_DRAWS: usize = 1_000_000;
pub const CERT_SIGMAS: f64 = 4.0;

fn mc_mean(draws: &[f64], f: impl Fn(f64) -> f64) -> (f64, f64) {
    let n = draws.len() as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for &e in draws {
        let v = f(e);
        s += v;
        s2 += v * v;
    }
    let mean = s / n;
    let var = (s2 / n - mean * mean).max(0.0);
    (mean, (var / n).sqrt())
}

/// Checks claimed parameters on a `lambda` grid: the exact MGF must not exceed
/// the bound, and the Monte Carlo MGF must not exceed it by more than
/// `CERT_SIGMAS` standard errors.
pub fn check_params<R: Rng + ?Sized>(
    family: NoiseFamily,
    scale: f64,
    params: &SubExpParams,
    draws: usize,
    rng: &mut R,
) -> Result<Certification> {
    check_scale(scale)?;
    if draws < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    let sample: Vec<f64> = (0..draws).map(|_| sample_noise(family, scale, rng)).collect();
    let judge = |p: &CertificationPoint| -> Result<()> {
        let slack = CERT_SIGMAS * p.std_error;
        if p.mgf_exact > p.bound * (1.0 + 1e-12) || !(p.mgf_mc <= p.bound + slack) {
            let mgf = if p.mgf_exact > p.bound { p.mgf_exact } else { p.mgf_mc };
            return Err(Error::CertificationFailure { lambda: p.lambda, mgf, bound: p.bound, slack });
        }
        Ok(())
    };
    let mut points = Vec::with_capacity(CERT_GRID);
    for k in 0..CERT_GRID {
        let lambda = (-1.0 + 2.0 * k as f64 / (CERT_GRID - 1) as f64) / params.alpha;
        let (mgf_mc, std_error) = mc_mean(&sample, |e| (lambda * e).exp());
        let bound = (0.5 * params.nu * params.nu * lambda * lambda).exp();
        let p = CertificationPoint { lambda, mgf_mc, std_error, mgf_exact: noise_mgf(family, scale, lambda), bound };
        judge(&p)?;
        points.push(p);
    }
    let top = (params.nu_prime * params.nu_prime / (2.0 * params.alpha_prime * params.alpha_prime)).exp();
    let mut magnitude_points = Vec::with_capacity(CERT_GRID);
    for k in 1..=CERT_GRID {
        let lambda = k as f64 / CERT_GRID as f64 / params.alpha_prime;
        let (mgf_mc, std_error) = mc_mean(&sample, |e| (lambda * e.abs()).exp());
        let p = CertificationPoint { lambda, mgf_mc, std_error, mgf_exact: abs_noise_mgf(family, scale, lambda), bound: top };
        judge(&p)?;
        magnitude_points.push(p);
    }
    Ok(Certification { family, scale, params: *params, draws, points, magnitude_points })
}

/// Documented parameters, certified with `CERT_DRAWS` draws.
pub fn certify_subexp<R: Rng + ?Sized>(family: NoiseFamily, scale: f64, rng: &mut R) -> Result<NoiseModel> {
    let params = subexp_params(family, scale)?;
    check_params(family, scale, &params, CERT_DRAWS, rng)?;
    Ok(NoiseModel { family, scale, params })
}

impl NoiseModel {
    /// Model with documented parameters and no Monte Carlo certification.
    pub fn uncertified(family: NoiseFamily, scale: f64) -> Result<Self> {
        Ok(NoiseModel { family, scale, params: subexp_params(family, scale)? })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        sample_noise(self.family, self.scale, rng)
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            NoiseFamily::Laplace => 2.0 * self.scale * self.scale,
            NoiseFamily::Gaussian | NoiseFamily::CenteredExponential => self.scale * self.scale,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GConstants {
    pub c_n: f64,
    pub t_n: f64,
    pub c_tilde: f64,
}

/// One audited inequality `lhs <= rhs`. Monte Carlo lines pass when the mean
/// of the paired difference of squares is at most `slack`
/// (`4` standard errors); exact lines have zero slack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinAudit {
    pub inequality: String,
    pub t: Option<f64>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
    pub constants: Option<GConstants>,
}

pub const G1_BERNSTEIN: &str = "g1 Bernstein norm";
pub const G2_L2: &str = "g2 L2 norm";
pub const G2_SUP: &str = "g2 sup norm";

/// Audits the three bounds with `X` uniform on `[0,1]^d` independent of the
/// noise; `theta` and `theta_ref` must lie in the variation ball of radius `a_n`.
pub fn audit_g_classes<R: Rng + ?Sized>(
    theta: &GridFunction,
    theta_ref: &GridFunction,
    theta0: &GridFunction,
    a_n: f64,
    noise: &NoiseModel,
    draws: usize,
    rng: &mut R,
) -> Result<Vec<BernsteinAudit>> {
    let dim = theta.dim();
    if theta_ref.dim() != dim || theta0.dim() != dim {
        return Err(Error::InvalidInput("functions have different dimensions".into()));
    }
    if !(a_n > 0.0) {
        return Err(Error::InvalidInput(format!("a_n must be positive, got {a_n}")));
    }
    for (name, f) in [("theta", theta), ("theta_ref", theta_ref)] {
        let v = svn_exact(f);
        if v > a_n * (1.0 + 1e-12) {
            return Err(Error::InvalidInput(format!("{name} has variation norm {v} > a_n = {a_n}")));
        }
    }
    if draws < 2 {
        return Err(Error::InvalidInput("need at least two draws".into()));
    }
    let grid = merge_grids([theta.grid(), theta_ref.grid(), theta0.grid()]);
    let th = theta.resample(&grid)?;
    let tr = theta_ref.resample(&grid)?;
    let t0 = theta0.resample(&grid)?;
    let diff = th.zip_with(&tr, |a, b| a - b)?;
    let other = GridFunction::from_corners(grid.clone(), |x| 2.0 * th.eval(x) - tr.eval(x) - t0.eval(x))?;
    let g2 = diff.zip_with(&other, |a, b| a * b)?;
    let sup0 = theta0.sup_abs();
    let k2 = sup0 + 3.0 * a_n;

    let p = &noise.params;
    let t_n = 1.0 / (2.0 * a_n * p.alpha_prime);
    let c_tilde = p.c_tilde();
    let c_n = c_tilde * a_n;
    let mut x = vec![0.0; dim];
    let (mut sh, mut sq, mut sd, mut sd2) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..draws {
        x.iter_mut().for_each(|v| *v = rng.gen::<f64>());
        let f = diff.eval(&x);
        let e = noise.sample(rng);
        let tg = t_n * f * e;
        if tg > 700.0 {
            return Err(Error::Overflow(tg));
        }
        let h = phi(tg) / (t_n * t_n);
        let q = c_n * c_n * f * f;
        sh += h;
        sq += f * f;
        sd += h - q;
        sd2 += (h - q) * (h - q);
    }
    let n = draws as f64;
    let mean_d = sd / n;
    let se = ((sd2 / n - mean_d * mean_d).max(0.0) / n).sqrt();
    let g1 = BernsteinAudit {
        inequality: G1_BERNSTEIN.into(),
        t: Some(t_n),
        lhs: (sh / n).sqrt(),
        rhs: c_n * (sq / n).sqrt(),
        slack: 4.0 * se,
        pass: mean_d <= 4.0 * se,
        constants: Some(GConstants { c_n, t_n, c_tilde }),
    };

    // exact under the uniform design
    let l2_g2 = g2.l2_norm();
    let l2_rhs = k2 * diff.l2_norm();
    let g2_l2 = BernsteinAudit {
        inequality: G2_L2.into(),
        t: None,
        lhs: l2_g2,
        rhs: l2_rhs,
        slack: 0.0,
        pass: l2_g2 <= l2_rhs * (1.0 + 1e-12) + 1e-300,
        constants: None,
    };
    let sup = g2.sup_abs();
    let sup_rhs = 2.0 * a_n * k2;
    let g2_sup = BernsteinAudit {
        inequality: G2_SUP.into(),
        t: None,
        lhs: sup,
        rhs: sup_rhs,
        slack: 0.0,
        pass: sup <= sup_rhs * (1.0 + 1e-12),
        constants: None,
    };
    Ok(vec![g1, g2_l2, g2_sup])
}

/// First failing line as an `AuditViolation`.
pub fn require_pass(audits: &[BernsteinAudit]) -> Result<()> {
    match audits.iter().find(|a| !a.pass) {
        Some(a) => Err(Error::AuditViolation { inequality: a.inequality.clone(), lhs: a.lhs, rhs: a.rhs, slack: a.slack }),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BernsteinRunReport {
    pub noise: NoiseModel,
    pub dim: usize,
    pub a_n: f64,
    pub draws: usize,
    pub repetitions: Vec<Vec<BernsteinAudit>>,
    pub failures: usize,
}

impl BernsteinRunReport {
    pub fn first_failure(&self) -> Option<&BernsteinAudit> {
        self.repetitions.iter().flatten().find(|a| !a.pass)
    }
}

/// Repeats the audit with `theta`, `theta_ref` drawn from the ball of radius
/// `a_n` and `theta0` from the ball of radius `2 a_n`, all on a uniform grid
/// with `grid_size` cells per axis. Repetitions run in parallel with their own
/// streams.
pub fn run_bernstein_audits(
    noise: &NoiseModel,
    dim: usize,
    grid_size: usize,
    a_n: f64,
    draws: usize,
    repetitions: usize,
    seed: u64,
) -> Result<BernsteinRunReport> {
    use rayon::prelude::*;
    let base = crate::entropy::uniform_base_grid(dim, grid_size);
    let reps: Vec<Vec<BernsteinAudit>> = (0..repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = crate::rng::substream(seed, "bernstein-audit", &[r as u64]);
            let draw = |rng: &mut rand_chacha::ChaCha8Rng, m: f64| -> Result<GridFunction> {
                crate::svn::synthesize_on(&crate::svn::random_mixture(rng, &base, m)?, &base)
            };
            let theta = draw(&mut rng, a_n)?;
            let theta_ref = draw(&mut rng, a_n)?;
            let theta0 = draw(&mut rng, 2.0 * a_n)?;
            audit_g_classes(&theta, &theta_ref, &theta0, a_n, noise, draws, &mut rng)
        })
        .collect::<Result<_>>()?;
    let failures = reps.iter().flatten().filter(|a| !a.pass).count();
    Ok(BernsteinRunReport { noise: *noise, dim, a_n, draws, repetitions: reps, failures })
}
