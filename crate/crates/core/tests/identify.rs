use pwcert::identify::{batch_ls, AffineDynamics, Basis, PieceModel, PiecewiseModel, RlsConfig, SampleDb};
use pwcert::linalg::{Mat, Vector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_data(seed: u64, n: usize, q: usize, count: usize, noise: f64) -> (Vec<Vector>, Vec<Vector>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = Mat::from_fn(n, q, |_, _| rng.gen_range(-3.0..3.0));
    let thetas: Vec<Vector> = (0..count).map(|_| Vector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0))).collect();
    let targets = thetas
        .iter()
        .map(|t| &w * t + Vector::from_fn(n, |_, _| rng.gen_range(-noise..=noise)))
        .collect();
    (thetas, targets)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rls_converges_to_batch_least_squares(seed in any::<u64>(), n in 1usize..4, q in 2usize..8) {
        let (thetas, targets) = random_data(seed, n, q, 200, 0.2);
        let cfg = RlsConfig { kappa: 1e6, lambda: 1.0 };
        let mut piece = PieceModel::new(n, q, cfg.kappa);
        for (t, f) in thetas.iter().zip(&targets) {
            piece.rls_update(t, f, &cfg).unwrap();
        }
        let ls = batch_ls(&thetas, &targets).unwrap();
        prop_assert!((&piece.w - &ls).norm() <= 1e-6 * ls.norm().max(1e-12));
        prop_assert_eq!(piece.sample_count, 200);
    }

    #[test]
    fn covariance_stays_symmetric_positive(seed in any::<u64>()) {
        let (thetas, targets) = random_data(seed, 2, 5, 300, 0.0);
        let cfg = RlsConfig { kappa: 1e3, lambda: 0.98 };
        let mut piece = PieceModel::new(2, 5, cfg.kappa);
        for (t, f) in thetas.iter().zip(&targets) {
            prop_assert!(!piece.rls_update(t, f, &cfg).unwrap());
        }
        prop_assert!((&piece.cov - piece.cov.transpose()).amax() == 0.0);
        prop_assert!(piece.cov.clone().cholesky().is_some());
    }

    #[test]
    fn affine_layout_roundtrips(seed in any::<u64>(), n in 1usize..4, m in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = AffineDynamics {
            a: Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)),
            b: Mat::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0)),
            c: Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)),
        };
        let basis = Basis::Affine { n };
        let mut piece = PieceModel::new(n, basis.q(m), 1.0);
        piece.set_affine(&d);
        prop_assert_eq!(piece.affine_parts(&basis).unwrap(), d.clone());
        let x = Vector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let u = Vector::from_fn(m, |_, _| rng.gen_range(-1.0..1.0));
        let direct = &d.a * &x + &d.b * &u + &d.c;
        prop_assert!((piece.predict(&basis, &x, &u) - direct).amax() < 1e-12);
    }
}

#[test]
fn forgetting_tracks_a_changed_plant() {
    let cfg = RlsConfig { kappa: 1e3, lambda: 0.95 };
    let mut piece = PieceModel::new(1, 2, cfg.kappa);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for k in 0..2000 {
        let gain = if k < 1000 { 1.0 } else { -2.0 };
        let theta = Vector::from_vec(vec![1.0, rng.gen_range(-1.0..1.0)]);
        let f = Vector::from_vec(vec![gain * theta[1]]);
        piece.rls_update(&theta, &f, &cfg).unwrap();
    }
    assert!((piece.w[(0, 1)] + 2.0).abs() < 1e-6, "{}", piece.w);
}

#[test]
fn database_respects_its_capacity() {
    let basis = Basis::Affine { n: 1 };
    let mut model = PiecewiseModel::new(basis, 1, 2, RlsConfig::default());
    let mut db = SampleDb::new(2, 10, 1e-9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..500 {
        let x = Vector::from_vec(vec![rng.gen_range(-1.0..1.0)]);
        let u = Vector::from_vec(vec![rng.gen_range(-1.0..1.0)]);
        let f = Vector::from_vec(vec![x[0] * x[0] + u[0]]);
        let s = usize::from(x[0] > 0.0);
        model.observe(&mut db, s, &x, &u, &f).unwrap();
    }
    assert!(db.len(0) <= 10 && db.len(1) <= 10);
    assert!(db.total() > 0);
    assert_eq!(model.pieces.iter().map(|p| p.sample_count).sum::<usize>(), 500);
    assert!(SampleDb::new(2, 0, 1.0).is_err());
    assert!(SampleDb::new(2, 5, 0.0).is_err());
}
