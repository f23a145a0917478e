use proptest::prelude::*;
use pwcert::partition::Polytope;
use pwcert::uncertainty::empty_ball::{largest_empty_circle, largest_gap_1d};
use pwcert::uncertainty::total_bound;

fn nearest(sites: &[[f64; 2]], c: [f64; 2]) -> f64 {
    sites
        .iter()
        .map(|s| ((s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2)).sqrt())
        .fold(f64::INFINITY, f64::min)
}

fn sites_strategy() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0).prop_map(|(a, b)| [a, b]), 3..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn empty_circle_is_empty_and_inside(sites in sites_strategy()) {
        let poly = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0], 0);
        let ball = largest_empty_circle(&sites, &poly).unwrap();
        let c = [ball.center[0], ball.center[1]];
        prop_assert!(poly.contains(&ball.center, 1e-9));
        prop_assert!((nearest(&sites, c) - ball.radius).abs() <= 1e-9);
    }

    #[test]
    fn no_grid_point_is_farther_than_the_radius(sites in sites_strategy()) {
        let poly = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0], 0);
        let ball = largest_empty_circle(&sites, &poly).unwrap();
        let k = 60;
        for i in 0..=k {
            for j in 0..=k {
                let p = [-1.0 + 2.0 * i as f64 / k as f64, -1.0 + 2.0 * j as f64 / k as f64];
                prop_assert!(nearest(&sites, p) <= ball.radius + 1e-9);
            }
        }
    }

    #[test]
    fn gap_matches_brute_force(samples in prop::collection::vec(-2.0f64..2.0, 1..30)) {
        let ball = largest_gap_1d(&samples, -1.0, 1.0);
        let k = 4000;
        let mut best = 0.0f64;
        for i in 0..=k {
            let p = -1.0 + 2.0 * i as f64 / k as f64;
            let d = samples.iter().map(|s| (s.clamp(-1.0, 1.0) - p).abs()).fold(f64::INFINITY, f64::min);
            best = best.max(d);
        }
        prop_assert!(ball.radius >= best - 1e-12);
        prop_assert!(ball.radius <= best + 2.0 / k as f64);
        let c = ball.center[0];
        let d = samples.iter().map(|s| (s.clamp(-1.0, 1.0) - c).abs()).fold(f64::INFINITY, f64::min);
        prop_assert!((d - ball.radius).abs() <= 1e-12);
    }
}

#[test]
fn empty_gap_covers_the_interval() {
    let ball = largest_gap_1d(&[], -2.0, 4.0);
    assert_eq!(ball.center, vec![1.0]);
    assert_eq!(ball.radius, 3.0);
}

#[test]
fn total_bound_is_monotone_in_gaps() {
    let d = total_bound(&[0.1, 0.2], &[1.0, 2.0], &[0.5, 0.0], &[0.3, 0.3], &[0.0, 0.1], 0.0, 0.0);
    assert_eq!(d, vec![0.1, 0.2]);
    let wider = total_bound(&[0.1, 0.2], &[1.0, 2.0], &[0.5, 0.0], &[0.3, 0.3], &[0.0, 0.1], 0.1, 0.2);
    assert!((wider[0] - (0.1 + 0.1 + 0.1 + 0.03)).abs() < 1e-12);
    assert!((wider[1] - (0.2 + 0.2 + 0.02 + 0.03)).abs() < 1e-12);
}
