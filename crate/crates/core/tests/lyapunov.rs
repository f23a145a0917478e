use proptest::prelude::*;
use pwcert::linalg::{Mat, Vector};
use pwcert::lyapunov::{delta_v, AccpmConfig, Learner, Proposal, SampleTriple};

fn vec2(v: (f64, f64)) -> Vector {
    Vector::from_vec(vec![v.0, v.1])
}

fn sym(n: usize, seed: &[f64]) -> Mat {
    let a = Mat::from_fn(n, n, |i, j| seed[(i * n + j) % seed.len()]);
    &a + a.transpose()
}

fn triple(a: &Mat, x: Vector) -> SampleTriple {
    let x1 = a * &x;
    let x2 = a * &x1;
    SampleTriple::undisturbed(x, x1, x2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn delta_v_is_linear_in_p(
        s1 in prop::collection::vec(-1.0f64..1.0, 16),
        s2 in prop::collection::vec(-1.0f64..1.0, 16),
        a in -3.0f64..3.0,
        x in (-1.0f64..1.0, -1.0f64..1.0),
        x1 in (-1.0f64..1.0, -1.0f64..1.0),
        x2 in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let t = SampleTriple::undisturbed(vec2(x), vec2(x1), vec2(x2));
        let (p, q) = (sym(4, &s1), sym(4, &s2));
        let lhs = delta_v(&(&p * a + &q), &t);
        let rhs = a * delta_v(&p, &t) + delta_v(&q, &t);
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn candidate_satisfies_cuts_and_box(
        xs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..6),
        rho in 0.2f64..0.8,
    ) {
        let a = Mat::from_row_slice(2, 2, &[rho, 0.1, -0.1, rho]);
        let cfg = AccpmConfig::default();
        let mut learner = Learner::new(2, cfg.clone());
        for x in xs {
            let x = vec2(x);
            if x.norm() > 1e-3 {
                learner.add_counterexample(triple(&a, x)).unwrap();
            }
        }
        match learner.propose().unwrap() {
            Proposal::Candidate(c) => {
                let eig = c.p.clone().symmetric_eigen().eigenvalues;
                prop_assert!(eig.min() > 0.0);
                prop_assert!(eig.max() < 1.0);
                for t in &learner.samples {
                    prop_assert!(delta_v(&c.p, t) <= -cfg.tau * t.x.norm_squared() + 1e-9);
                }
            }
            Proposal::Infeasible { .. } => prop_assert!(false, "contracting samples admit a certificate"),
        }
    }
}

#[test]
fn expanding_sample_is_infeasible() {
    let a = Mat::identity(2, 2) * 2.0;
    let mut learner = Learner::new(2, AccpmConfig::default());
    learner.add_counterexample(triple(&a, vec2((1.0, 0.0)))).unwrap();
    learner.add_counterexample(triple(&a, vec2((0.0, 1.0)))).unwrap();
    assert!(matches!(learner.propose().unwrap(), Proposal::Infeasible { .. }));
}

#[test]
fn duplicate_triples_are_ignored() {
    let a = Mat::identity(2, 2) * 0.5;
    let mut learner = Learner::new(2, AccpmConfig::default());
    assert!(learner.add_counterexample(triple(&a, vec2((1.0, 0.0)))).unwrap());
    assert!(!learner.add_counterexample(triple(&a, vec2((1.0, 0.0)))).unwrap());
    assert!(learner.add_counterexample(SampleTriple::undisturbed(vec2((1.0, 0.0)), vec2((1.0, 0.0)), Vector::zeros(3))).is_err());
    assert_eq!(learner.samples.len(), 1);
}
