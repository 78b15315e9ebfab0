mod common;

use cadlag::svn::{decompose, random_mixture, section_measure, sup_norm, svn_exact, synthesize};
use cadlag::{GridFunction, SubsetMask};
use common::{random_grid_function, step_eval, svn_of_grid_function};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn svn_matches_inclusion_exclusion_oracle(seed in any::<u64>(), dim in 1usize..=3) {
        let f = random_grid_function(&mut rng(seed), dim, 6);
        let (a, b) = (svn_exact(&f), svn_of_grid_function(&f));
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn sup_norm_is_dominated(seed in any::<u64>(), dim in 1usize..=3) {
        let f = random_grid_function(&mut rng(seed), dim, 6);
        prop_assert!(sup_norm(&f) <= svn_exact(&f) * (1.0 + 1e-12));
    }

    #[test]
    fn refinement_leaves_svn_unchanged(seed in any::<u64>(), dim in 1usize..=3, t in 0.001f64..0.999) {
        let mut r = rng(seed);
        let f = random_grid_function(&mut r, dim, 5);
        let axis = r.gen_range(0..dim);
        if f.grid()[axis].contains(&t) {
            return Ok(());
        }
        let g = f.insert_breakpoint(axis, t).unwrap();
        prop_assert_eq!(g.grid()[axis].len(), f.grid()[axis].len() + 1);
        prop_assert!((svn_exact(&g) - svn_exact(&f)).abs() <= 1e-12);
    }

    #[test]
    fn triangle_inequality_and_homogeneity(seed in any::<u64>(), dim in 1usize..=3, c in -5.0f64..5.0) {
        let mut r = rng(seed);
        let f = random_grid_function(&mut r, dim, 5);
        let other: Vec<f64> = (0..f.len()).map(|_| r.gen_range(-2.0..2.0)).collect();
        let g = GridFunction::new(f.grid().to_vec(), other).unwrap();
        let sum = f.zip_with(&g, |a, b| a + b).unwrap();
        prop_assert!(svn_exact(&sum) <= (svn_exact(&f) + svn_exact(&g)) * (1.0 + 1e-12));
        let scaled = f.map(|v| c * v).unwrap();
        prop_assert!((svn_exact(&scaled) - c.abs() * svn_exact(&f)).abs() <= 1e-12 * svn_exact(&f).max(1.0) * c.abs().max(1.0));
    }

    #[test]
    fn round_trip_at_all_corners(seed in any::<u64>(), dim in 1usize..=3, slack in 1.0f64..3.0) {
        let f = random_grid_function(&mut rng(seed), dim, 5);
        let budget = svn_exact(&f) * slack + 1e-3;
        let rep = decompose(&f, budget).unwrap();
        let back = synthesize(&rep).unwrap();
        for flat in 0..f.len() {
            let x = f.corner(flat);
            prop_assert!((step_eval(&back, &x) - f.values()[flat]).abs() <= 1e-12);
        }
    }

    #[test]
    fn synthesized_mixtures_respect_budget(seed in any::<u64>(), dim in 1usize..=3, budget in 0.1f64..10.0) {
        let mut r = rng(seed);
        let base: Vec<Vec<f64>> = (0..dim).map(|_| common::random_axis(&mut r, 4)).collect();
        let rep = random_mixture(&mut r, &base, budget).unwrap();
        let f = synthesize(&rep).unwrap();
        prop_assert!(svn_exact(&f) <= budget * (1.0 + 1e-12));
        prop_assert!(svn_of_grid_function(&f) <= budget * (1.0 + 1e-12));
    }
}

#[test]
fn section_measures_sum_to_section_variation() {
    let mut r = rng(5);
    for _ in 0..50 {
        let f = random_grid_function(&mut r, 3, 4);
        let total: f64 = f.value_at_origin().abs()
            + SubsetMask::nonempty(3).map(|s| section_measure(&f, s).unwrap().total_variation()).sum::<f64>();
        assert!((total - svn_exact(&f)).abs() <= 1e-12 * total.max(1.0));
    }
}

#[test]
fn decompose_below_norm_is_rejected() {
    let f = random_grid_function(&mut rng(9), 2, 4);
    let v = svn_exact(&f);
    assert!(decompose(&f, v * 0.9).is_err());
}
