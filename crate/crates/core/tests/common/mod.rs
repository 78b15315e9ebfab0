//! Independent oracles shared by the integration tests. None of these call
//! into the library's algorithms; they only use its data types.
#![allow(dead_code)]

use cadlag::basis::KnotBasis;
use cadlag::GridFunction;
use rand::Rng;

/// `|f(0)| + sum_s sum_cells |mixed difference over the cell|`, by explicit
/// inclusion-exclusion over the `2^|s|` cell corners of each section.
pub fn svn_oracle(grid: &[Vec<f64>], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let d = grid.len();
    let zero = vec![0.0; d];
    let mut total = f(&zero).abs();
    for s in 1u32..(1 << d) {
        let axes: Vec<usize> = (0..d).filter(|j| s >> j & 1 == 1).collect();
        if axes.iter().any(|&a| grid[a].len() < 2) {
            continue;
        }
        let mut idx = vec![1usize; axes.len()];
        'cells: loop {
            let mut diff = 0.0;
            for e in 0u32..(1 << axes.len()) {
                let mut x = zero.clone();
                for (k, &a) in axes.iter().enumerate() {
                    x[a] = if e >> k & 1 == 1 { grid[a][idx[k]] } else { grid[a][idx[k] - 1] };
                }
                let sign = if (axes.len() as u32 - e.count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
                diff += sign * f(&x);
            }
            total += diff.abs();
            for k in 0..axes.len() {
                idx[k] += 1;
                if idx[k] < grid[axes[k]].len() {
                    continue 'cells;
                }
                idx[k] = 1;
            }
            break;
        }
    }
    total
}

/// Right-continuous step evaluation of a grid function, written from scratch.
pub fn step_eval(f: &GridFunction, x: &[f64]) -> f64 {
    let grid = f.grid();
    let mut flat = 0;
    for (a, g) in grid.iter().enumerate() {
        let i = g.iter().rposition(|&t| t <= x[a]).unwrap_or(0);
        flat = flat * g.len() + i;
    }
    f.values()[flat]
}

pub fn svn_of_grid_function(f: &GridFunction) -> f64 {
    svn_oracle(f.grid(), &|x| step_eval(f, x))
}

/// Corners of the union of the grids of all functions involved.
pub fn merged_corners(fs: &[&GridFunction]) -> Vec<Vec<f64>> {
    let d = fs[0].dim();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let mut v: Vec<f64> = fs.iter().flat_map(|f| f.grid()[a].iter().copied()).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let mut out = vec![vec![]];
    for ax in &axes {
        out = out.into_iter().flat_map(|p: Vec<f64>| ax.iter().map(move |&t| [p.clone(), vec![t]].concat())).collect();
    }
    out
}

/// `||f - g||` in `L2(Lebesgue on [0,1]^d)`, summing over the cells of the merged grid.
pub fn l2_diff_uniform(f: &GridFunction, g: &GridFunction) -> f64 {
    let d = f.dim();
    let axes: Vec<Vec<f64>> = (0..d)
        .map(|a| {
            let mut v: Vec<f64> = f.grid()[a].iter().chain(&g.grid()[a]).copied().collect();
            v.push(1.0);
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        })
        .collect();
    let mut total = 0.0;
    for x in merged_corners(&[f, g]) {
        let vol: f64 = (0..d)
            .map(|a| {
                let i = axes[a].iter().position(|&t| t == x[a]).unwrap();
                axes[a].get(i + 1).map_or(0.0, |&t| t - x[a])
            })
            .product();
        let w = step_eval(f, &x) - step_eval(g, &x);
        total += w * w * vol;
    }
    total.sqrt()
}

/// Sorted grid on `[0,1]` starting at 0 with `m` points.
pub fn random_axis<R: Rng>(rng: &mut R, m: usize) -> Vec<f64> {
    let mut v = vec![0.0];
    while v.len() < m {
        let t = (rng.gen::<f64>() * 64.0).round() / 64.0;
        if !v.contains(&t) {
            v.push(t);
        }
    }
    v.sort_by(f64::total_cmp);
    v
}

pub fn random_grid_function<R: Rng>(rng: &mut R, dim: usize, max_m: usize) -> GridFunction {
    let grid: Vec<Vec<f64>> = (0..dim)
        .map(|_| {
            let m = rng.gen_range(1..=max_m);
            random_axis(rng, m)
        })
        .collect();
    let len: usize = grid.iter().map(Vec::len).product();
    let sparse = rng.gen_bool(0.3);
    let values = (0..len)
        .map(|_| if sparse && rng.gen_bool(0.6) { 0.0 } else { rng.gen_range(-2.0..2.0) })
        .collect();
    GridFunction::new(grid, values).unwrap()
}

/// Evaluates `beta0 + sum_j beta_j 1{x_s >= knot}` directly from the basis fields.
pub fn linear_predictor(basis: &KnotBasis, beta0: f64, beta: &[f64], x: &[f64]) -> f64 {
    let mut u = beta0;
    for (phi, b) in basis.functions.iter().zip(beta) {
        if phi.subset.axes().zip(&phi.knot).all(|(a, &k)| x[a] >= k) {
            u += b;
        }
    }
    u
}

/// Integer vectors `v` in `Z^p` with `sum |v_i| <= k`.
pub fn l1_lattice(p: usize, k: i32) -> Vec<Vec<i32>> {
    if p == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in -k..=k {
        for mut rest in l1_lattice(p - 1, k - first.abs()) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Exhaustive search over the lattice `(radius / k) Z^p` inside the l1 ball,
/// followed by a derivative-free pattern search (single and paired coordinate
/// moves) that stays feasible. Returns `(point, objective)`.
pub fn grid_oracle(p: usize, radius: f64, k: i32, objective: &dyn Fn(&[f64]) -> f64) -> (Vec<f64>, f64) {
    let h0 = radius / f64::from(k);
    let mut best = vec![0.0; p];
    let mut best_val = objective(&best);
    for v in l1_lattice(p, k) {
        let w: Vec<f64> = v.iter().map(|&c| f64::from(c) * h0).collect();
        let val = objective(&w);
        if val < best_val {
            best_val = val;
            best = w;
        }
    }
    let feasible = |w: &[f64]| w.iter().map(|v| v.abs()).sum::<f64>() <= radius * (1.0 + 1e-12);
    let mut h = h0 / 2.0;
    while h > 1e-9 {
        let mut improved = true;
        while improved {
            improved = false;
            'moves: for i in 0..p {
                for j in i..p {
                    for si in [-1.0, 1.0] {
                        for sj in [-1.0, 0.0, 1.0] {
                            if i == j && sj != 0.0 {
                                continue;
                            }
                            let mut w = best.clone();
                            w[i] += si * h;
                            w[j] += sj * h;
                            if !feasible(&w) {
                                continue;
                            }
                            let val = objective(&w);
                            if val < best_val - 1e-15 {
                                best_val = val;
                                best = w;
                                improved = true;
                                break 'moves;
                            }
                        }
                    }
                }
            }
        }
        h /= 2.0;
    }
    (best, best_val)
}

/// Sample mean and its standard error.
pub fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}
