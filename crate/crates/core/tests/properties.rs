use foliate::foliation;
use foliate::geometry::{BallChart, CoordinateVector};
use foliate::learning::{self, FlowConfig, LearnerMap, LossSurface};
use foliate::maml;
use foliate::prototypical::{self, Embedding, Episode};
use foliate::relatedness::{Metric, Transformation};
use proptest::prelude::*;

fn coord() -> impl Strategy<Value = f64> {
    -3.0..3.0f64
}

fn pair() -> impl Strategy<Value = [f64; 2]> {
    [coord(), coord()]
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ball_chart_roundtrip(c in pair(), r in 0.1..3.0f64, u in pair()) {
        let b = BallChart::euclidean(CoordinateVector::from(&c[..]), r).unwrap();
        // h works in chart coordinates; pull u strictly inside the ball.
        let scale = 0.95 * r / (1.0 + (u[0] * u[0] + u[1] * u[1]).sqrt());
        let x = [scale * u[0], scale * u[1]];
        let y = b.ball_to_euclidean(&x).unwrap();
        prop_assert!(close(&b.euclidean_to_ball(&y).unwrap(), &x, 1e-12));
        let z = b.ball_to_euclidean(&b.euclidean_to_ball(&u).unwrap()).unwrap();
        prop_assert!(close(&z, &u, 1e-12));
    }

    #[test]
    fn ball_transformation_stays_inside(c in coord(), p in -0.99..0.99f64, v in -5.0..5.0f64) {
        let b = BallChart::euclidean(CoordinateVector::from(&[c][..]), 1.0).unwrap();
        let q = foliation::ball_transform_point(&b, &[c + p], &[v]).unwrap();
        prop_assert!(b.contains(&q));
    }

    #[test]
    fn flow_at_zero_time_is_identity(t in pair(), m0 in pair()) {
        let m = learning::gradient_flow(&LossSurface::quadratic(), &t, &m0, 0.0, &FlowConfig::default()).unwrap();
        prop_assert_eq!(m.as_slice(), &m0[..]);
    }

    #[test]
    fn flow_is_a_semigroup(t in pair(), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let whole = learning::gradient_flow(&l, &t, &[0.0, 0.0], a + b, &cfg).unwrap();
        let first = learning::gradient_flow(&l, &t, &[0.0, 0.0], a, &cfg).unwrap();
        let split = learning::gradient_flow(&l, &t, &first, b, &cfg).unwrap();
        prop_assert!(whole.distance(&split) <= 1e-9);
    }

    #[test]
    fn loss_decreases_along_the_flow(t in pair(), k in 0.0..2.0f64, dk in 0.0..1.0f64) {
        let l = LossSurface::quadratic();
        let cfg = FlowConfig::default();
        let early = learning::gradient_flow(&l, &t, &[0.0, 0.0], k, &cfg).unwrap();
        let late = learning::gradient_flow(&l, &t, &[0.0, 0.0], k + dk, &cfg).unwrap();
        prop_assert!(l.eval(&t, &late) <= l.eval(&t, &early) + 1e-15);
    }

    #[test]
    fn model_at_accuracy_hits_the_target(t in pair(), frac in 0.001..0.999f64) {
        let s = t[0] * t[0] + t[1] * t[1];
        prop_assume!(s > 1e-6);
        let eps = s * frac;
        let m = maml::model_at_accuracy(&t, eps).unwrap();
        let l = LossSurface::quadratic().eval(&t, &m);
        prop_assert!((l - eps).abs() <= 1e-12 * (1.0 + s));
    }

    #[test]
    fn time_to_accuracy_is_rotation_invariant(t in pair(), angle in 0.0..std::f64::consts::TAU, frac in 0.01..0.99f64) {
        let s = t[0] * t[0] + t[1] * t[1];
        prop_assume!(s > 1e-6);
        let rotated = Transformation::rotation(angle).apply(&t).unwrap();
        let a = maml::time_to_accuracy(&t, s * frac).unwrap();
        let b = maml::time_to_accuracy(&rotated, s * frac).unwrap();
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn loss_balls_are_reflexive_and_monotone(t in pair(), e1 in 1e-3..1.0f64, de in 0.0..1.0f64, pts in prop::collection::vec(pair(), 1..30)) {
        let l = LossSurface::quadratic();
        let learner = LearnerMap::exact_quadratic();
        let mut candidates: Vec<CoordinateVector> = pts.iter().map(|p| CoordinateVector::from(&p[..])).collect();
        candidates.push(CoordinateVector::from(&t[..]));
        let small = learning::loss_ball(&l, &learner, &t, e1, &candidates).unwrap();
        let large = learning::loss_ball(&l, &learner, &t, e1 + de, &candidates).unwrap();
        prop_assert!(small.iter().any(|s| s.as_slice() == t));
        prop_assert!(small.iter().all(|s| large.contains(s)));
    }

    #[test]
    fn plaque_keeps_fixed_coordinates(t in [coord(), coord(), coord()], m0 in [coord(), coord(), coord()]) {
        let l = LossSurface::quadratic();
        let out = learning::plaque_restricted_optimize(&l, &t, &m0, &[0, 2], &[1], 1e-3, &FlowConfig::default()).unwrap();
        prop_assert_eq!(out.model[0].to_bits(), m0[0].to_bits());
        prop_assert_eq!(out.model[2].to_bits(), m0[2].to_bits());
    }

    #[test]
    fn probabilities_sum_to_one(seed in any::<u64>(), x in -3.0..3.0f64) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let e = Embedding::random(vec![1, 3, 2], 1.0, &mut rng).unwrap();
        let ep = Episode::bundled_toy();
        let protos = prototypical::compute_prototypes(&e, &ep).unwrap();
        let probs = prototypical::class_probabilities(&protos, &e, &[x], &Metric::squared_euclidean()).unwrap();
        let total: f64 = probs.iter().map(|(_, p)| p).sum();
        prop_assert!((total - 1.0).abs() <= 1e-12);
        prop_assert!(probs.iter().all(|(_, p)| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn identity_prototypes_follow_translations(shift in -5.0..5.0f64) {
        let ep = Episode::bundled_toy();
        let moved = Episode::new(
            ep.support.iter().map(|(x, y)| (x.add(&[shift]), *y)).collect(),
            ep.query.iter().map(|(x, y)| (x.add(&[shift]), *y)).collect(),
        ).unwrap();
        let e = Embedding::identity(1);
        let a = prototypical::compute_prototypes(&e, &ep).unwrap();
        let b = prototypical::compute_prototypes(&e, &moved).unwrap();
        for (pa, pb) in a.prototypes.iter().zip(&b.prototypes) {
            prop_assert!((pb[0] - pa[0] - shift).abs() <= 1e-12);
        }
    }

    #[test]
    fn central_and_forward_gradients_agree(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let e = Embedding::random(vec![1, 3, 2], 0.5, &mut rng).unwrap();
        let eps = [Episode::bundled_toy()];
        let m = Metric::squared_euclidean();
        let c = prototypical::nll_gradient(&e, &eps, &m, 1e-5).unwrap();
        let f = prototypical::nll_forward_gradient(&e, &eps, &m, 1e-7).unwrap();
        prop_assert!(c.distance(&f) <= 1e-3 * c.norm().max(1e-3));
    }

    #[test]
    fn leaf_split_is_deterministic(seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let e = Embedding::random(vec![1, 2], 1.0, &mut rng).unwrap();
        let ep = Episode::bundled_toy();
        let a = prototypical::leaf_split_coordinates(&e, &ep).unwrap();
        let b = prototypical::leaf_split_coordinates(&e, &ep).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.local.dim(), 2 * e.output_dim());
    }

    #[test]
    fn euclidean_metric_axioms(pts in prop::collection::vec([coord(), coord(), coord()], 3..12)) {
        let samples: Vec<CoordinateVector> = pts.iter().map(|p| CoordinateVector::from(&p[..])).collect();
        prop_assert!(Metric::euclidean().axiom_violations(&samples).within(1e-12));
    }
}
