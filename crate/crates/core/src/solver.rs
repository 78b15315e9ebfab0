//! Empirical risk minimization over the variation-norm ball of the knot basis:
//! `min (1/n) sum L(beta0 + sum_j beta_j phi_j(X_i), Y_i)` subject to
//! `|beta0| + sum |beta_j| <= radius`.
//!
//! Spectral projected gradient: Barzilai-Borwein trial steps, projection onto
//! the l1 ball and an Armijo backtrack along the projection arc, which keeps the
//! objective monotone. Every few iterations the current support is polished by
//! a Newton step restricted to the face of the ball it lies on; without this the
//! ill-conditioned indicator design makes first-order convergence very slow.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::basis::{generate_basis, FittedFunction, KnotBasis};
use crate::data::Dataset;
use crate::design::DesignOperator;
use crate::error::{Error, Result};
use crate::homotopy::Homotopy;
use crate::losses::LossSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Constant,
    Power,
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ScheduleKind::Constant),
            "power" => Ok(ScheduleKind::Power),
            other => Err(Error::InvalidInput(format!("unknown schedule `{other}` (expected constant or power)"))),
        }
    }
}

/// `a_n = A` or `a_n = A n^p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SieveSchedule {
    pub kind: ScheduleKind,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(default)]
    pub p: f64,
}

impl SieveSchedule {
    pub fn constant(a: f64) -> Self {
        SieveSchedule { kind: ScheduleKind::Constant, a, p: 0.0 }
    }

    pub fn power(a: f64, p: f64) -> Self {
        SieveSchedule { kind: ScheduleKind::Power, a, p }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0) || !self.a.is_finite() {
            return Err(Error::InvalidInput(format!("schedule constant A must be positive, got {}", self.a)));
        }
        if self.kind == ScheduleKind::Power && !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::InvalidInput(format!("power schedule needs p > 0, got {}", self.p)));
        }
        Ok(())
    }
}

pub fn sieve_radius(schedule: &SieveSchedule, n: usize) -> f64 {
    match schedule.kind {
        ScheduleKind::Constant => schedule.a,
        ScheduleKind::Power => schedule.a * (n.max(1) as f64).powf(schedule.p),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRule {
    pub initial_step: f64,
    pub shrink: f64,
    pub sufficient_decrease: f64,
}

impl Default for StepRule {
    fn default() -> Self {
        StepRule { initial_step: 1.0, shrink: 0.5, sufficient_decrease: 1e-4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub objective_tol: f64,
    pub step_rule: StepRule,
    #[serde(default)]
    pub record_trace: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { max_iters: 50_000, grad_tol: 1e-7, objective_tol: 1e-10, step_rule: StepRule::default(), record_trace: false }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let s = &self.step_rule;
        let ok = self.max_iters > 0
            && self.grad_tol > 0.0
            && self.objective_tol > 0.0
            && s.initial_step > 0.0
            && s.shrink > 0.0
            && s.shrink < 1.0
            && s.sufficient_decrease > 0.0
            && s.sufficient_decrease < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("solver options must be positive with shrink and decrease constants in (0,1)".into()))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// KKT residual at most `grad_tol`.
    Converged,
    /// Relative objective decrease at most `objective_tol` over consecutive iterations.
    ObjectiveStalled,
    MaxIters,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub fit: FittedFunction,
    pub iterations: usize,
    pub final_objective: f64,
    pub kkt_residual: f64,
    pub active_set_size: usize,
    pub status: SolveStatus,
    /// Objective after every accepted iteration when requested.
    pub objective_trace: Vec<f64>,
}

/// Euclidean projection onto `{w : sum |w_j| <= radius}` (sort-and-threshold).
pub fn project_l1_ball(v: &[f64], radius: f64) -> Vec<f64> {
    let l1: f64 = v.iter().map(|x| x.abs()).sum();
    if l1 <= radius {
        return v.to_vec();
    }
    if radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).filter(|&m| m > 0.0).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        cumsum += m;
        let t = (cumsum - radius) / (k + 1) as f64;
        if m > t {
            tau = t;
        } else {
            break;
        }
    }
    v.iter().map(|&x| x.signum() * (x.abs() - tau).max(0.0)).collect()
}

/// Consecutive iterations of negligible relative decrease before giving up.
const STALL_WINDOW: usize = 20;
/// Projected-gradient iterations between support polishes.
const POLISH_EVERY: usize = 10;
const POLISH_MAX_SUPPORT: usize = 3000;
/// Cap on `k^2 n` for forming the restricted Hessian.
const POLISH_MAX_WORK: usize = 4_000_000_000;

fn boundary_tol(radius: f64) -> f64 {
    1e-9 * radius.max(1.0)
}

/// Stationarity violation for `min F(w)` over the l1 ball, given `grad = grad F(w)`.
pub fn kkt_from_gradient(w: &[f64], grad: &[f64], radius: f64) -> f64 {
    let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let l1: f64 = w.iter().map(|x| x.abs()).sum();
    if l1 < radius - boundary_tol(radius) {
        return gmax;
    }
    // -grad must lie in lambda times the subdifferential of the l1 norm
    w.iter()
        .zip(grad)
        .filter(|(x, _)| **x != 0.0)
        .map(|(x, g)| (g + gmax * x.signum()).abs())
        .fold(0.0, f64::max)
}

struct Problem<'a> {
    op: DesignOperator,
    basis: &'a KnotBasis,
    x: &'a [Vec<f64>],
    y: &'a [f64],
    loss: &'a LossSpec,
    u: Vec<f64>,
    r: Vec<f64>,
}

impl Problem<'_> {
    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    /// Objective at `w`; leaves the linear predictor in `self.u`.
    fn objective(&mut self, w: &[f64]) -> f64 {
        self.op.apply(w, &mut self.u);
        let s: f64 = self.u.iter().zip(self.y).map(|(&u, &y)| self.loss.value(u, y)).sum();
        s / self.n()
    }

    /// Column `j` of the design (0 is the intercept) as a dense vector.
    fn column(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            return vec![1.0; self.y.len()];
        }
        let phi = &self.basis.functions[j - 1];
        self.x.iter().map(|x| phi.eval(x)).collect()
    }

    /// Newton steps on the support of `w` with signs held fixed, constrained to
    /// the face `sum sign(w_j) w_j = radius` when `w` is on the boundary. Steps
    /// are cut where a coefficient reaches zero or the ball boundary is hit,
    /// then backtracked until the objective does not increase. Returns whether
    /// `w` moved; on return `self.u` matches `w`.
    fn polish(&mut self, w: &mut [f64], f: &mut f64, g: &[f64], radius: f64) -> bool {
        let active: Vec<usize> = (0..w.len()).filter(|&j| w[j] != 0.0).collect();
        let k = active.len();
        let n = self.y.len();
        if k == 0 || k > POLISH_MAX_SUPPORT || (k * k).saturating_mul(n) > POLISH_MAX_WORK {
            return false;
        }
        let cols: Vec<Vec<f64>> = active.iter().map(|&j| self.column(j)).collect();
        let curv: Vec<f64> = self.u.iter().zip(self.y).map(|(&u, &y)| self.loss.curvature(u, y) / n as f64).collect();
        let mut h = nalgebra::DMatrix::<f64>::zeros(k, k);
        for a in 0..k {
            for b in a..k {
                let v: f64 = cols[a].iter().zip(&cols[b]).zip(&curv).map(|((x, y), c)| x * y * c).sum();
                h[(a, b)] = v;
                h[(b, a)] = v;
            }
        }
        let max_diag = (0..k).map(|a| h[(a, a)]).fold(0.0, f64::max);
        if max_diag <= 0.0 {
            return false;
        }
        let mut ridge = 1e-12 * max_diag;
        let chol = loop {
            let mut hr = h.clone();
            for a in 0..k {
                hr[(a, a)] += ridge;
            }
            if let Some(c) = hr.cholesky() {
                break c;
            }
            ridge *= 100.0;
            if ridge > max_diag {
                return false;
            }
        };
        let sigma = nalgebra::DVector::from_iterator(k, active.iter().map(|&j| w[j].signum()));
        let ga = nalgebra::DVector::from_iterator(k, active.iter().map(|&j| g[j]));
        let l1: f64 = w.iter().map(|x| x.abs()).sum();
        let on_boundary = l1 >= radius - boundary_tol(radius);
        let a = chol.solve(&ga);
        let delta = if on_boundary {
            let b = chol.solve(&sigma);
            let mu = -sigma.dot(&a) / sigma.dot(&b);
            -(a + b * mu)
        } else {
            -a
        };
        let slope = ga.dot(&delta);
        if !(slope < 0.0) {
            return false;
        }
        let mut t_max = 1.0;
        let mut blocking = None;
        for (i, &j) in active.iter().enumerate() {
            if w[j] * delta[i] < 0.0 {
                let t = -w[j] / delta[i];
                if t < t_max {
                    t_max = t;
                    blocking = Some(j);
                }
            }
        }
        if !on_boundary {
            let grow = sigma.dot(&delta);
            if grow > 0.0 && (radius - l1) / grow < t_max {
                t_max = (radius - l1) / grow;
                blocking = None;
            }
        }
        let mut t = t_max;
        for _ in 0..40 {
            let mut cand = w.to_vec();
            for (i, &j) in active.iter().enumerate() {
                let v = w[j] + t * delta[i];
                // keep the sign pattern: never cross zero through rounding
                cand[j] = if v * w[j] > 0.0 { v } else { 0.0 };
            }
            if t == t_max {
                if let Some(j) = blocking {
                    cand[j] = 0.0;
                }
            }
            let cand = project_l1_ball(&cand, radius);
            let fc = self.objective(&cand);
            if fc.is_finite() && fc <= *f + 1e-4 * t * slope {
                w.copy_from_slice(&cand);
                *f = fc;
                return true;
            }
            t *= 0.5;
        }
        self.objective(w);
        false
    }

    /// Gradient at the point whose predictor is in `self.u`.
    fn gradient(&mut self, grad: &mut [f64]) {
        let n = self.n();
        for ((r, &u), &y) in self.r.iter_mut().zip(&self.u).zip(self.y) {
            *r = self.loss.subgradient_u(u, y) / n;
        }
        self.op.apply_t(&self.r, grad);
    }
}

/// Fits on the basis generated from `data.x`.
pub fn fit_erm(data: &Dataset, loss: &LossSpec, radius: f64, opts: &SolveOptions) -> Result<SolveReport> {
    let basis = generate_basis(&data.x)?;
    fit_erm_with_basis(data, basis, loss, radius, opts)
}

pub fn fit_erm_with_basis(
    data: &Dataset,
    basis: KnotBasis,
    loss: &LossSpec,
    radius: f64,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    opts.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyData);
    }
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidInput(format!("radius must be finite and nonnegative, got {radius}")));
    }
    let op = DesignOperator::new(&basis, &data.x);
    let p = op.cols();
    let n = data.len();
    let mut prob = Problem { op, basis: &basis, x: &data.x, y: &data.y, loss, u: vec![0.0; n], r: vec![0.0; n] };

    let mut w = vec![0.0; p];
    let mut f = prob.objective(&w);
    if !f.is_finite() {
        return Err(Error::NonFinite { iteration: 0 });
    }
    if loss.family.is_square() && radius > 0.0 {
        let path = Homotopy { op: &prob.op, basis: &basis, x: &data.x, y: &data.y };
        if let Some(start) = path.solve(radius, 20 * n.min(p) + 100) {
            let start = project_l1_ball(&start, radius);
            let fs = prob.objective(&start);
            if fs.is_finite() && fs <= f {
                w = start;
                f = fs;
            }
        }
        prob.objective(&w);
    }
    let mut g = vec![0.0; p];
    prob.gradient(&mut g);
    let mut trace = Vec::new();
    if opts.record_trace {
        trace.push(f);
    }

    let finish = |w: Vec<f64>, f: f64, kkt: f64, iterations: usize, status: SolveStatus, trace: Vec<f64>| {
        let fit = FittedFunction::new(w[0], w[1..].to_vec(), basis.clone())?;
        let active_set_size = w.iter().filter(|&&x| x != 0.0).count();
        Ok(SolveReport { fit, iterations, final_objective: f, kkt_residual: kkt, active_set_size, status, objective_trace: trace })
    };

    if radius == 0.0 {
        let kkt = kkt_from_gradient(&w, &g, radius);
        return finish(w, f, kkt, 0, SolveStatus::Converged, trace);
    }

    let rule = opts.step_rule;
    let (step_min, step_max) = (1e-12, 1e12);
    let mut step = rule.initial_step;
    let mut g_new = vec![0.0; p];
    let mut stalled = 0;
    let mut kkt = kkt_from_gradient(&w, &g, radius);
    let mut iter = 0;
    while iter < opts.max_iters {
        if kkt <= opts.grad_tol {
            return finish(w, f, kkt, iter, SolveStatus::Converged, trace);
        }
        iter += 1;
        // backtrack along the projection arc
        let mut alpha = step;
        let (w_new, f_new) = loop {
            let trial: Vec<f64> = w.iter().zip(&g).map(|(x, gi)| x - alpha * gi).collect();
            let cand = project_l1_ball(&trial, radius);
            let decrease: f64 = cand.iter().zip(&w).zip(&g).map(|((c, x), gi)| gi * (c - x)).sum();
            let fc = prob.objective(&cand);
            if fc.is_finite() && fc <= f + rule.sufficient_decrease * decrease {
                break (cand, fc);
            }
            alpha *= rule.shrink;
            if alpha < step_min * 1e-8 {
                let fc = prob.objective(&w);
                if !fc.is_finite() {
                    return Err(Error::NonFinite { iteration: iter });
                }
                break (w.clone(), f);
            }
        };
        if w_new == w {
            // no progress possible at machine precision
            prob.objective(&w);
            return finish(w, f, kkt, iter, SolveStatus::ObjectiveStalled, trace);
        }
        prob.gradient(&mut g_new);
        if g_new.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { iteration: iter });
        }
        let mut ss = 0.0;
        let mut sy = 0.0;
        for k in 0..p {
            let s = w_new[k] - w[k];
            ss += s * s;
            sy += s * (g_new[k] - g[k]);
        }
        step = if sy > 0.0 { (ss / sy).clamp(step_min, step_max) } else { step_max.min(alpha * 1e3) };
        let decrease = f - f_new;
        w = w_new;
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
        if opts.record_trace {
            trace.push(f);
        }
        kkt = kkt_from_gradient(&w, &g, radius);
        if kkt > opts.grad_tol && iter % POLISH_EVERY == 0 && prob.polish(&mut w, &mut f, &g, radius) {
            prob.gradient(&mut g);
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { iteration: iter });
            }
            if opts.record_trace {
                trace.push(f);
            }
            kkt = kkt_from_gradient(&w, &g, radius);
        }
        if decrease <= opts.objective_tol * f.abs() {
            stalled += 1;
            if stalled >= STALL_WINDOW && kkt > opts.grad_tol {
                return finish(w, f, kkt, iter, SolveStatus::ObjectiveStalled, trace);
            }
        } else {
            stalled = 0;
        }
    }
    let status = if kkt <= opts.grad_tol { SolveStatus::Converged } else { SolveStatus::MaxIters };
    finish(w, f, kkt, iter, status, trace)
}

/// Empirical risk of `fit` on `data`.
pub fn empirical_risk(fit: &FittedFunction, data: &Dataset, loss: &LossSpec) -> f64 {
    let op = DesignOperator::new(&fit.basis, &data.x);
    let mut w = Vec::with_capacity(op.cols());
    w.push(fit.intercept);
    w.extend_from_slice(&fit.coefficients);
    let mut u = vec![0.0; data.len()];
    op.apply(&w, &mut u);
    u.iter().zip(&data.y).map(|(&u, &y)| loss.value(u, y)).sum::<f64>() / data.len() as f64
}

/// KKT residual of `fit` for the constrained empirical risk problem.
pub fn kkt_residual(fit: &FittedFunction, data: &Dataset, loss: &LossSpec, radius: f64) -> f64 {
    let op = DesignOperator::new(&fit.basis, &data.x);
    let mut w = Vec::with_capacity(op.cols());
    w.push(fit.intercept);
    w.extend_from_slice(&fit.coefficients);
    let n = data.len() as f64;
    let mut u = vec![0.0; data.len()];
    op.apply(&w, &mut u);
    let r: Vec<f64> = u.iter().zip(&data.y).map(|(&u, &y)| loss.subgradient_u(u, y) / n).collect();
    let mut g = vec![0.0; op.cols()];
    op.apply_t(&r, &mut g);
    kkt_from_gradient(&w, &g, radius)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::make_loss;

    /// Projection by bisection on the threshold.
    fn project_bisect(v: &[f64], radius: f64) -> Vec<f64> {
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        if l1 <= radius {
            return v.to_vec();
        }
        let (mut lo, mut hi) = (0.0, v.iter().fold(0.0f64, |m, x| m.max(x.abs())));
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|x| (x.abs() - mid).max(0.0)).sum();
            if s > radius {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        v.iter().map(|&x| x.signum() * (x.abs() - hi).max(0.0)).collect()
    }

    #[test]
    fn schedules() {
        assert_eq!(sieve_radius(&SieveSchedule::constant(2.0), 1_000_000), 2.0);
        assert!((sieve_radius(&SieveSchedule::power(1.0, 0.1), 1024) - 2.0).abs() < 1e-12);
        let s = SieveSchedule::power(0.5, 0.3);
        let mut prev = 0.0;
        for n in 1..=100_000 {
            let r = sieve_radius(&s, n);
            assert!(r >= prev);
            prev = r;
        }
        assert!(SieveSchedule::power(1.0, 0.0).validate().is_err());
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_l1_ball(&[0.3, -0.2], 1.0), vec![0.3, -0.2]);
        assert_eq!(project_l1_ball(&[2.0, 0.0], 1.0), vec![1.0, 0.0]);
        let w = project_l1_ball(&[0.6, -0.6], 1.0);
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] + 0.5).abs() < 1e-15);
        assert_eq!(project_l1_ball(&[0.6, -0.6], 0.0), vec![0.0, 0.0]);
    }

    #[test]
    fn projection_matches_bisection() {
        let v = [0.9, -0.05, 0.4, 1.7, -1.1, 0.0, 0.33];
        for r in [0.1, 0.5, 1.0, 2.5, 4.0, 10.0] {
            let a = project_l1_ball(&v, r);
            let b = project_bisect(&v, r);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
            assert!(a.iter().map(|x| x.abs()).sum::<f64>() <= r + 1e-12);
        }
    }

    #[test]
    fn constant_data_is_fit_exactly() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 20.0]).collect();
        let data = Dataset::new(x, vec![0.7; 20]).unwrap();
        let loss = make_loss("square", 1.0).unwrap();
        let rep = fit_erm(&data, &loss, 1.0, &SolveOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Converged);
        assert!(rep.final_objective < 1e-10);
        assert!(rep.fit.fit_svn() <= 1.0 + 1e-9);
        for xi in &data.x {
            assert!((rep.fit.eval(xi) - 0.7).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_radius_gives_zero_fit() {
        let data = Dataset::new(vec![vec![0.2], vec![0.8]], vec![1.0, 2.0]).unwrap();
        let loss = make_loss("square", 1.0).unwrap();
        let rep = fit_erm(&data, &loss, 0.0, &SolveOptions::default()).unwrap();
        assert_eq!(rep.fit.fit_svn(), 0.0);
        assert_eq!(rep.final_objective, 2.5);
    }

    #[test]
    fn kkt_detects_perturbation() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 + 0.5) / 30.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| if p[0] > 0.5 { 1.0 } else { -0.5 } + 0.1 * (p[0] * 17.0).sin()).collect();
        let data = Dataset::new(x, y).unwrap();
        let loss = make_loss("square", 2.0).unwrap();
        for radius in [0.8, 100.0] {
            let rep = fit_erm(&data, &loss, radius, &SolveOptions::default()).unwrap();
            assert_eq!(rep.status, SolveStatus::Converged);
            let k = kkt_residual(&rep.fit, &data, &loss, radius);
            assert!(k <= 10.0 * 1e-7, "kkt {k}");
            let mut bumped = rep.fit.clone();
            bumped.coefficients[3] += 0.1;
            assert!(kkt_residual(&bumped, &data, &loss, radius + 1.0) > k);
        }
    }

    #[test]
    fn objective_is_monotone() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![((i * 7) % 40) as f64 / 40.0, ((i * 13) % 40) as f64 / 40.0]).collect();
        let y: Vec<f64> = x.iter().map(|p| if p[0] + p[1] > 1.0 { 1.0 } else { 0.0 }).collect();
        let data = Dataset::new(x, y).unwrap();
        let loss = make_loss("logistic", 1.0).unwrap();
        let opts = SolveOptions { record_trace: true, ..SolveOptions::default() };
        let rep = fit_erm(&data, &loss, 3.0, &opts).unwrap();
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] <= w[0]);
        }
        assert!(rep.fit.fit_svn() <= 3.0 + 1e-9);
    }
}
