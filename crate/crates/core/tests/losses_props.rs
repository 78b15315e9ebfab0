mod common;

use cadlag::losses::{dissimilarity, make_loss, LossFamily, LossSpec};
use cadlag::sim::{Design, ExactRiskOracle, ResponseSpec, RiskSettings};
use cadlag::svn::{random_mixture, svn_exact, synthesize};
use cadlag::GridFunction;
use common::{l2_diff_uniform, mean_and_se, random_axis, step_eval};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn family_loss(logistic: bool, a_tilde: f64) -> LossSpec {
    make_loss(if logistic { "logistic" } else { "square" }, a_tilde).unwrap()
}

fn draw_y(r: &mut ChaCha8Rng, logistic: bool, a_tilde: f64) -> f64 {
    if logistic {
        f64::from(u8::from(r.gen_bool(0.5)))
    } else {
        r.gen_range(-a_tilde..=a_tilde)
    }
}

/// `theta` in the variation ball of radius `budget` on a random 2-point-per-axis grid.
fn ball_member(r: &mut ChaCha8Rng, d: usize, budget: f64) -> GridFunction {
    let base: Vec<Vec<f64>> = (0..d).map(|_| random_axis(r, 3)).collect();
    synthesize(&random_mixture(r, &base, budget).unwrap()).unwrap()
}

#[test]
fn unimodal_on_both_sides_of_the_minimizer() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for i in 0..10_000 {
        let logistic = i % 2 == 1;
        let a_tilde = r.gen_range(0.5..4.0);
        let loss = family_loss(logistic, a_tilde);
        let y = draw_y(&mut r, logistic, a_tilde);
        let uy = loss.unimodal_point(y).clamp(-1e3, 1e3);
        let (mut u1, mut u2) = (uy - r.gen_range(0.0..10.0), uy - r.gen_range(0.0..10.0));
        if u1 > u2 {
            std::mem::swap(&mut u1, &mut u2);
        }
        assert!(loss.value(u1, y) >= loss.value(u2, y) - 1e-12, "below u_y: {u1} {u2} {y}");
        let (mut v1, mut v2) = (uy + r.gen_range(0.0..10.0), uy + r.gen_range(0.0..10.0));
        if v1 > v2 {
            std::mem::swap(&mut v1, &mut v2);
        }
        assert!(loss.value(v1, y) <= loss.value(v2, y) + 1e-12, "above u_y: {v1} {v2} {y}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn lipschitz_on_the_admissible_range(seed in any::<u64>(), logistic in any::<bool>(), a_tilde in 0.1f64..5.0) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let loss = family_loss(logistic, a_tilde);
        let y = draw_y(&mut r, logistic, a_tilde);
        let u1 = r.gen_range(-a_tilde..=a_tilde);
        let u2 = r.gen_range(-a_tilde..=a_tilde);
        let lhs = (loss.value(u1, y) - loss.value(u2, y)).abs();
        prop_assert!(lhs <= loss.lipschitz * (u1 - u2).abs() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn subgradient_matches_central_differences(u in -6.0f64..6.0, y in -2.0f64..2.0, logistic in any::<bool>()) {
        let y = if logistic { f64::from(u8::from(y > 0.0)) } else { y };
        let loss = family_loss(logistic, 2.0);
        let h = 1e-5;
        let fd = (loss.value(u + h, y) - loss.value(u - h, y)) / (2.0 * h);
        prop_assert!((fd - loss.subgradient_u(u, y)).abs() <= 1e-6);
    }
}

#[test]
fn square_loss_dissimilarity_is_the_l2_distance() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let response = ResponseSpec::Bounded { half_width: 0.5, a_tilde: 4.0 };
    let loss = make_loss("square", 4.0).unwrap();
    for d in 1..=3 {
        for _ in 0..10 {
            let theta0 = ball_member(&mut r, d, 1.0);
            let theta = ball_member(&mut r, d, 2.0);
            let oracle = ExactRiskOracle::new(theta0.clone(), Design::Uniform, response, RiskSettings::default()).unwrap();
            let est = dissimilarity(&theta, &theta0, &loss, &oracle).unwrap();
            let l2 = l2_diff_uniform(&theta, &theta0);
            assert!((est.value - l2).abs() <= 1e-8, "{} vs {l2}", est.value);
        }
    }
}

/// `||L(theta) - L(theta0)||_{P0,2} <= smoothness * d(theta, theta0)` by Monte
/// Carlo over `(X, Y)`, with 3 standard errors of slack on the squared form.
#[test]
fn l2_smoothness_holds_by_monte_carlo() {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    for (family, logistic) in [(LossFamily::SquareBounded, false), (LossFamily::Logistic, true)] {
        for trial in 0..8 {
            let d = 1 + trial % 2;
            let a_tilde = 2.0;
            let theta0 = ball_member(&mut r, d, 1.0);
            let theta = ball_member(&mut r, d, 1.0);
            assert!(svn_exact(&theta) <= 1.0 + 1e-12);
            let response = if logistic {
                ResponseSpec::Bernoulli
            } else {
                ResponseSpec::Bounded { half_width: 1.0, a_tilde }
            };
            let loss = family_loss(logistic, a_tilde);
            assert_eq!(loss.family, family);
            let oracle = ExactRiskOracle::new(theta0.clone(), Design::Uniform, response, RiskSettings::default()).unwrap();
            let dist = dissimilarity(&theta, &theta0, &loss, &oracle).unwrap().value;
            let mut sq = Vec::with_capacity(200_000);
            for _ in 0..200_000 {
                let x: Vec<f64> = (0..d).map(|_| r.gen::<f64>()).collect();
                let t0 = step_eval(&theta0, &x);
                let y = if logistic {
                    f64::from(u8::from(r.gen::<f64>() < 1.0 / (1.0 + (-t0).exp())))
                } else {
                    t0 + r.gen_range(-1.0..1.0)
                };
                let diff = loss.value(step_eval(&theta, &x), y) - loss.value(t0, y);
                sq.push(diff * diff);
            }
            let (m, se) = mean_and_se(&sq);
            let bound = loss.smoothness * dist;
            assert!(m <= bound * bound + 3.0 * se, "{family}: {m} > {} (se {se})", bound * bound);
        }
    }
}
