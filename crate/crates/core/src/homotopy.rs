//! Homotopy (LARS with the lasso modification) for the square loss: follows the
//! piecewise-linear path of `min ||y - X w||^2` subject to `||w||_1 <= t` as
//! `t` grows from 0 and stops at the requested radius. Used as a warm start for
//! the projected-gradient solver, which then only has to certify it.

use nalgebra::{DMatrix, DVector};

use crate::basis::KnotBasis;
use crate::design::DesignOperator;

pub(crate) struct Homotopy<'a> {
    pub op: &'a DesignOperator,
    pub basis: &'a KnotBasis,
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
}

impl Homotopy<'_> {
    fn column(&self, j: usize) -> Vec<f64> {
        if j == 0 {
            return vec![1.0; self.y.len()];
        }
        let phi = &self.basis.functions[j - 1];
        self.x.iter().map(|x| phi.eval(x)).collect()
    }

    /// Path solution at `radius`; `None` when the path cannot be followed
    /// (the caller then starts from zero).
    pub fn solve(&self, radius: f64, max_steps: usize) -> Option<Vec<f64>> {
        let n = self.y.len();
        let p = self.op.cols();
        let mut w = vec![0.0; p];
        let mut r = vec![0.0; n];
        let mut c = vec![0.0; p];
        let mut active: Vec<usize> = Vec::new();
        let mut in_active = vec![false; p];
        let mut gram: Vec<Vec<f64>> = Vec::new();
        let mut xw = vec![0.0; n];
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; p];
        let mut dfull = vec![0.0; p];
        let mut last_dropped: Option<usize> = None;
        let mut pending: Vec<usize> = Vec::new();

        for step in 0..max_steps {
            self.op.apply(&w, &mut xw);
            for i in 0..n {
                r[i] = self.y[i] - xw[i];
            }
            self.op.apply_t(&r, &mut c);
            let lambda = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if lambda <= 1e-13 * (1.0 + self.y.iter().map(|v| v.abs()).sum::<f64>()) {
                return Some(w);
            }
            if step == 0 {
                pending = (0..p).filter(|&j| c[j].abs() >= lambda * (1.0 - 1e-12)).collect();
            }
            for j in pending.drain(..) {
                if in_active[j] {
                    continue;
                }
                let col = self.column(j);
                let mut g = vec![0.0; p];
                self.op.apply_t(&col, &mut g);
                for (row, &i) in gram.iter_mut().zip(&active) {
                    row.push(g[i]);
                }
                let mut new_row: Vec<f64> = active.iter().map(|&i| g[i]).collect();
                new_row.push(g[j]);
                gram.push(new_row);
                active.push(j);
                in_active[j] = true;
            }
            let k = active.len();
            if k == 0 {
                return None;
            }
            let signs: Vec<f64> = active
                .iter()
                .map(|&j| if w[j] != 0.0 { w[j].signum() } else { c[j].signum() })
                .collect();
            let g = DMatrix::from_fn(k, k, |i, j| gram[i][j]);
            let max_diag = (0..k).map(|i| g[(i, i)]).fold(0.0, f64::max);
            // columns can coincide on the data; a tiny ridge splits them evenly
            let mut ridge = 1e-13 * max_diag;
            let chol = loop {
                let mut gr = g.clone();
                for i in 0..k {
                    gr[(i, i)] += ridge;
                }
                if let Some(ch) = gr.cholesky() {
                    break ch;
                }
                ridge *= 100.0;
                if ridge > 1e-5 * max_diag {
                    return None;
                }
            };
            let d = chol.solve(&DVector::from_vec(signs.clone()));
            dfull.iter_mut().for_each(|v| *v = 0.0);
            for (i, &j) in active.iter().enumerate() {
                dfull[j] = d[i];
            }
            self.op.apply(&dfull, &mut a);
            self.op.apply_t(&a, &mut b);

            // active correlations shrink at rate 1 in magnitude
            let lam = active.iter().map(|&j| c[j].abs()).fold(0.0, f64::max);
            let l1: f64 = w.iter().map(|v| v.abs()).sum();
            let growth: f64 = active.iter().zip(&signs).map(|(&j, s)| s * dfull[j]).sum();
            let tiny = 1e-14 * lam.max(1e-300);
            let mut gamma = lam;
            let mut event = Event::Zero;
            if growth > 0.0 {
                let gr = (radius - l1) / growth;
                if gr <= gamma {
                    gamma = gr.max(0.0);
                    event = Event::Radius;
                }
            }
            for (i, &j) in active.iter().enumerate() {
                if w[j] != 0.0 && w[j] * d[i] < 0.0 {
                    let gj = -w[j] / d[i];
                    if gj > tiny && gj < gamma {
                        gamma = gj;
                        event = Event::Drop(j);
                    }
                }
            }
            for j in 0..p {
                if in_active[j] || Some(j) == last_dropped {
                    continue;
                }
                for cand in [(lam - c[j]) / (1.0 - b[j]), (lam + c[j]) / (1.0 + b[j])] {
                    if cand.is_finite() && cand > tiny && cand < gamma {
                        gamma = cand;
                        event = Event::Enter(j);
                    }
                }
            }
            for (i, &j) in active.iter().enumerate() {
                w[j] += gamma * d[i];
            }
            last_dropped = None;
            match event {
                Event::Radius | Event::Zero => return Some(w),
                Event::Drop(j) => {
                    w[j] = 0.0;
                    let pos = active.iter().position(|&i| i == j).unwrap();
                    active.remove(pos);
                    gram.remove(pos);
                    for row in gram.iter_mut() {
                        row.remove(pos);
                    }
                    in_active[j] = false;
                    last_dropped = Some(j);
                }
                Event::Enter(j) => {
                    // simultaneous entries (columns equal on the data) join together
                    let lam_new = lam - gamma;
                    pending = (0..p)
                        .filter(|&i| {
                            !in_active[i] && (i == j || (c[i] - gamma * b[i]).abs() >= lam_new * (1.0 - 1e-10))
                        })
                        .collect();
                }
            }
            if k > n + 1 {
                return None;
            }
        }
        None
    }
}

enum Event {
    Radius,
    Zero,
    Drop(usize),
    Enter(usize),
}
