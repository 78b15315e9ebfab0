//! Implicit design matrix of the knot basis: column 0 is the intercept, column
//! `j + 1` is basis function `j` evaluated at the data points.
//!
//! Products are computed per subset block without materializing the matrix:
//! one-axis blocks by prefix sums, two-axis blocks by a sweep with a Fenwick
//! tree, larger subsets from explicit row lists.

use crate::basis::KnotBasis;
use crate::subset::SubsetMask;

struct Fenwick {
    tree: Vec<f64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0.0; n + 1] }
    }

    fn clear(&mut self) {
        self.tree.iter_mut().for_each(|t| *t = 0.0);
    }

    /// Adds `v` at 0-based position `i`.
    fn add(&mut self, i: usize, v: f64) {
        let mut k = i + 1;
        while k < self.tree.len() {
            self.tree[k] += v;
            k += k & k.wrapping_neg();
        }
    }

    /// Sum over positions `0..=i`.
    fn prefix(&self, i: usize) -> f64 {
        let mut k = i + 1;
        let mut s = 0.0;
        while k > 0 {
            s += self.tree[k];
            k -= k & k.wrapping_neg();
        }
        s
    }
}

enum Block {
    /// `pos[i]` = number of knots `<= x_i` on the axis.
    Single { cols: usize, pos: Vec<u32> },
    /// Events sorted by the first coordinate (knots before data at ties),
    /// each tagged with its rank along the second coordinate.
    Pair { events: Vec<Event>, ranks: usize },
    General { rows: Vec<Vec<u32>> },
}

#[derive(Clone, Copy)]
struct Event {
    is_knot: bool,
    index: u32,
    rank: u32,
}

pub struct DesignOperator {
    n: usize,
    p: usize,
    blocks: Vec<(usize, Block)>,
    fenwick: std::cell::RefCell<Fenwick>,
}

impl DesignOperator {
    pub fn new(basis: &KnotBasis, points: &[Vec<f64>]) -> Self {
        let n = points.len();
        let funcs = &basis.functions;
        let mut blocks = Vec::new();
        let mut max_ranks = 0;
        let mut start = 0;
        while start < funcs.len() {
            let subset = funcs[start].subset;
            let end = start + funcs[start..].iter().take_while(|f| f.subset == subset).count();
            let knots: Vec<&[f64]> = funcs[start..end].iter().map(|f| f.knot.as_slice()).collect();
            let block = match subset.len() {
                1 => single_block(subset, &knots, points),
                2 => {
                    let b = pair_block(subset, &knots, points);
                    if let Block::Pair { ranks, .. } = &b {
                        max_ranks = max_ranks.max(*ranks);
                    }
                    b
                }
                _ => general_block(subset, &knots, points),
            };
            blocks.push((start + 1, block));
            start = end;
        }
        DesignOperator { n, p: funcs.len() + 1, blocks, fenwick: std::cell::RefCell::new(Fenwick::new(max_ranks)) }
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    /// Number of columns including the intercept.
    pub fn cols(&self) -> usize {
        self.p
    }

    /// `out = X w`.
    pub fn apply(&self, w: &[f64], out: &mut [f64]) {
        debug_assert_eq!(w.len(), self.p);
        out.iter_mut().for_each(|o| *o = w[0]);
        let mut fw = self.fenwick.borrow_mut();
        for (offset, block) in &self.blocks {
            match block {
                Block::Single { cols, pos } => {
                    let wb = &w[*offset..offset + cols];
                    let mut prefix = Vec::with_capacity(cols + 1);
                    prefix.push(0.0);
                    let mut acc = 0.0;
                    for &v in wb {
                        acc += v;
                        prefix.push(acc);
                    }
                    for (o, &k) in out.iter_mut().zip(pos) {
                        *o += prefix[k as usize];
                    }
                }
                Block::Pair { events, .. } => {
                    fw.clear();
                    for e in events {
                        if e.is_knot {
                            let v = w[offset + e.index as usize];
                            if v != 0.0 {
                                fw.add(e.rank as usize, v);
                            }
                        } else {
                            out[e.index as usize] += fw.prefix(e.rank as usize);
                        }
                    }
                }
                Block::General { rows } => {
                    for (j, col) in rows.iter().enumerate() {
                        let v = w[offset + j];
                        if v != 0.0 {
                            for &i in col {
                                out[i as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }

    /// `out = X^T r`.
    pub fn apply_t(&self, r: &[f64], out: &mut [f64]) {
        debug_assert_eq!(r.len(), self.n);
        out[0] = r.iter().sum();
        let mut fw = self.fenwick.borrow_mut();
        for (offset, block) in &self.blocks {
            match block {
                Block::Single { cols, pos } => {
                    let mut bins = vec![0.0; cols + 1];
                    for (&ri, &k) in r.iter().zip(pos) {
                        bins[k as usize] += ri;
                    }
                    // column j (0-based) collects bins j+1..=cols
                    let mut acc = 0.0;
                    for j in (0..*cols).rev() {
                        acc += bins[j + 1];
                        out[offset + j] = acc;
                    }
                }
                Block::Pair { events, .. } => {
                    fw.clear();
                    let mut total = 0.0;
                    for e in events.iter().rev() {
                        if e.is_knot {
                            let below = if e.rank == 0 { 0.0 } else { fw.prefix(e.rank as usize - 1) };
                            out[offset + e.index as usize] = total - below;
                        } else {
                            let v = r[e.index as usize];
                            fw.add(e.rank as usize, v);
                            total += v;
                        }
                    }
                }
                Block::General { rows } => {
                    for (j, col) in rows.iter().enumerate() {
                        out[offset + j] = col.iter().map(|&i| r[i as usize]).sum();
                    }
                }
            }
        }
    }
}

fn single_block(subset: SubsetMask, knots: &[&[f64]], points: &[Vec<f64>]) -> Block {
    let a = subset.axes().next().unwrap();
    let ks: Vec<f64> = knots.iter().map(|k| k[0]).collect();
    let pos = points.iter().map(|p| ks.partition_point(|&k| k <= p[a]) as u32).collect();
    Block::Single { cols: ks.len(), pos }
}

fn pair_block(subset: SubsetMask, knots: &[&[f64]], points: &[Vec<f64>]) -> Block {
    let mut axes = subset.axes();
    let (a, b) = (axes.next().unwrap(), axes.next().unwrap());
    let mut values: Vec<f64> = knots.iter().map(|k| k[1]).chain(points.iter().map(|p| p[b])).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let rank = |v: f64| values.partition_point(|&u| u < v) as u32;
    let mut keyed: Vec<(f64, bool, Event)> = Vec::with_capacity(knots.len() + points.len());
    for (j, k) in knots.iter().enumerate() {
        keyed.push((k[0], true, Event { is_knot: true, index: j as u32, rank: rank(k[1]) }));
    }
    for (i, p) in points.iter().enumerate() {
        keyed.push((p[a], false, Event { is_knot: false, index: i as u32, rank: rank(p[b]) }));
    }
    // knots first at ties so that x_a >= k_a includes equality
    keyed.sort_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)));
    Block::Pair { events: keyed.into_iter().map(|t| t.2).collect(), ranks: values.len() }
}

fn general_block(subset: SubsetMask, knots: &[&[f64]], points: &[Vec<f64>]) -> Block {
    let axes: Vec<usize> = subset.axes().collect();
    let rows = knots
        .iter()
        .map(|k| {
            points
                .iter()
                .enumerate()
                .filter(|(_, p)| axes.iter().zip(k.iter()).all(|(&a, &kv)| p[a] >= kv))
                .map(|(i, _)| i as u32)
                .collect()
        })
        .collect();
    Block::General { rows }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::generate_basis;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense(basis: &KnotBasis, points: &[Vec<f64>]) -> Vec<Vec<f64>> {
        points
            .iter()
            .map(|x| std::iter::once(1.0).chain(basis.functions.iter().map(|f| f.eval(x))).collect())
            .collect()
    }

    fn check(dim: usize, n: usize, levels: Option<u32>, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let coord = |rng: &mut ChaCha8Rng| match levels {
            Some(l) => rng.gen_range(0..=l) as f64 / l as f64,
            None => rng.gen::<f64>(),
        };
        let points: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| coord(&mut rng)).collect()).collect();
        let basis = generate_basis(&points).unwrap();
        let op = DesignOperator::new(&basis, &points);
        let m = dense(&basis, &points);
        let w: Vec<f64> = (0..op.cols()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut xw = vec![0.0; n];
        op.apply(&w, &mut xw);
        for i in 0..n {
            let want: f64 = m[i].iter().zip(&w).map(|(a, b)| a * b).sum();
            assert!((xw[i] - want).abs() < 1e-10, "row {i}: {} vs {want}", xw[i]);
        }
        let mut xtr = vec![0.0; op.cols()];
        op.apply_t(&r, &mut xtr);
        for j in 0..op.cols() {
            let want: f64 = (0..n).map(|i| m[i][j] * r[i]).sum();
            assert!((xtr[j] - want).abs() < 1e-10, "col {j}: {} vs {want}", xtr[j]);
        }
    }

    #[test]
    fn matches_dense_products() {
        for (dim, seed) in [(1, 1), (2, 2), (3, 3), (4, 4)] {
            check(dim, 37, None, seed);
        }
    }

    #[test]
    fn matches_dense_products_with_ties() {
        for (dim, seed) in [(1, 5), (2, 6), (3, 7)] {
            check(dim, 40, Some(4), seed);
        }
    }
}
