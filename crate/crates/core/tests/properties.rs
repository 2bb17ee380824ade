use std::f64::consts::PI;

use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;

use motionsketch::constraints::{
    orthonormal_frame, ConstraintMetric, ConstraintSpec, PenaltyWeights, DEFAULT_RANK_TOL,
};
use motionsketch::control::{energy, extract_controls, input_fields, rollout, ControlSignal};
use motionsketch::geometry::{compose_metric, curve_length, geodesic_residual, FnMetric, MetricField, UnitBarrier};
use motionsketch::ghf_solver::{flow, FlowConfig};
use motionsketch::obstacles::{BallObstacle, BarrierField, CollisionPair};
use motionsketch::systems::{self, TwoLinkVariant};
use motionsketch::Curve;

fn unicycle_metric(k: f64) -> ConstraintMetric {
    ConstraintMetric::new(systems::unicycle().spec, PenaltyWeights::new(k).unwrap()).unwrap()
}

fn specs() -> Vec<ConstraintSpec> {
    vec![
        systems::unicycle().spec,
        systems::car(systems::CAR_WHEELBASE).spec,
        systems::two_link(TwoLinkVariant::VerticalLine).spec,
        systems::two_link(TwoLinkVariant::CircularArc).spec,
    ]
}

fn state(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-2.0..2.0f64, n).prop_map(DVector::from_vec)
}

/// Smooth curve in `R^dim` from random Fourier coefficients.
fn smooth_curve(dim: usize, n_nodes: usize) -> impl Strategy<Value = Curve> {
    prop::collection::vec(-1.0..1.0f64, dim * 4).prop_map(move |c| {
        Curve::from_fn(n_nodes, dim, |t| {
            DVector::from_fn(dim, |i, _| {
                let k = &c[4 * i..4 * i + 4];
                k[0] + k[1] * t + k[2] * (PI * t).sin() + k[3] * (2.0 * PI * t).sin()
            })
        })
        .unwrap()
    })
}

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-1.0..1.0f64, n * n).prop_map(move |a| {
        let a = DMatrix::from_vec(n, n, a);
        &a * a.transpose() + DMatrix::identity(n, n)
    })
}

fn planar_barrier() -> BarrierField {
    BarrierField::new(vec![BallObstacle::planar(0.0, 0.0, 0.5, 1.0).unwrap()], vec![])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn length_is_reversal_invariant(c in smooth_curve(3, 31), k in 1.0..100.0f64) {
        let m = unicycle_metric(k);
        let forward = curve_length(&c, &m).unwrap();
        let backward = curve_length(&c.reversed(), &m).unwrap();
        prop_assert!((forward - backward).abs() <= 1e-12 * forward.max(1.0));
    }

    #[test]
    fn unit_barrier_leaves_metric_untouched(x in state(3), k in 1.0..1000.0f64) {
        let h = unicycle_metric(k);
        let composed = compose_metric(&h, UnitBarrier);
        prop_assert_eq!(composed.evaluate(&x).unwrap(), h.evaluate(&x).unwrap());
    }

    #[test]
    fn affine_curves_are_geodesics_of_constant_metrics(
        g in spd(3), a in state(3), b in state(3), n_nodes in 3usize..40,
    ) {
        let m = FnMetric::new(3, move |_: &DVector<f64>| g.clone());
        let c = Curve::line(&a, &b, n_nodes).unwrap();
        prop_assert!(geodesic_residual(&c, &m).unwrap().amax() <= 1e-10);
    }

    #[test]
    fn discrete_length_converges_under_refinement(coef in prop::collection::vec(-1.0..1.0f64, 6)) {
        let m = unicycle_metric(10.0);
        // |ẋ₀| >= 1 - 0.3π > 0 keeps the length integrand smooth
        let f = |t: f64| dvector![
            (1.5 + 0.5 * coef[0]) * t + 0.3 * coef[1] * (PI * t).sin(),
            coef[2] * t + coef[3] * (PI * t).sin(),
            coef[4] * t + coef[5] * (2.0 * PI * t).sin()
        ];
        let lengths: Vec<f64> = [193, 385, 769]
            .iter()
            .map(|&n| curve_length(&Curve::from_fn(n, 3, f).unwrap(), &m).unwrap())
            .collect();
        let gaps: Vec<f64> = lengths.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        // the error is O(Δt²); on coarse grids its leading term can still be outweighed
        prop_assert!(gaps[1] <= gaps[0] / 3.0 + 1e-13, "{:?}", gaps);
    }

    #[test]
    fn quadratic_form_splits_into_constrained_and_free_parts(
        which in 0usize..4, x in state(4), v in state(4), k in 1.0..1000.0f64,
    ) {
        let spec = specs().swap_remove(which);
        let (x, v) = (x.rows(0, spec.n).into_owned(), v.rows(0, spec.n).into_owned());
        let frame = orthonormal_frame(&spec, &x, DEFAULT_RANK_TOL).unwrap();
        let h = ConstraintMetric::new(spec, PenaltyWeights::new(k).unwrap()).unwrap().metric(&x).unwrap();
        let split = k * (frame.fc.transpose() * &v).norm_squared() + (frame.ff.transpose() * &v).norm_squared();
        prop_assert!((h.quadratic(&v) - split).abs() <= 1e-10 * split.max(1.0));
    }

    #[test]
    fn spectrum_is_k_and_one_with_frame_multiplicities(which in 0usize..4, x in state(4), k in 2.0..1000.0f64) {
        let spec = specs().swap_remove(which);
        let x = x.rows(0, spec.n).into_owned();
        let l = orthonormal_frame(&spec, &x, DEFAULT_RANK_TOL).unwrap().rank();
        let h = ConstraintMetric::new(spec.clone(), PenaltyWeights::new(k).unwrap()).unwrap().metric(&x).unwrap();
        let mut eig: Vec<f64> = h.matrix.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let p = spec.n - l;
        for (i, e) in eig.iter().enumerate() {
            let want = if i < p { 1.0 } else { k };
            prop_assert!((e - want).abs() <= 1e-9 * k, "{:?}", eig);
        }
    }

    #[test]
    fn metric_ignores_constraint_order(x in state(4), k in 1.0..1000.0f64) {
        let (l1, l2) = (systems::TWO_LINK_L1, systems::TWO_LINK_L2);
        let x0 = systems::two_link_boundary().0[0];
        let q1 = (
            move |x: &DVector<f64>| l1 * x[2].cos() + l2 * x[3].cos() - x[0],
            move |x: &DVector<f64>| dvector![-1.0, 0.0, -l1 * x[2].sin(), -l2 * x[3].sin()],
        );
        let q2 = (
            move |x: &DVector<f64>| l1 * x[2].sin() + l2 * x[3].sin() - x[1],
            move |x: &DVector<f64>| dvector![0.0, -1.0, l1 * x[2].cos(), l2 * x[3].cos()],
        );
        let q3 = (move |x: &DVector<f64>| x[0] - x0, |_: &DVector<f64>| dvector![1.0, 0.0, 0.0, 0.0]);
        let forward = ConstraintSpec::constraint_first(4)
            .with_holonomic("q1", q1.0, q1.1)
            .with_holonomic("q2", q2.0, q2.1)
            .with_holonomic("q3", q3.0, q3.1);
        let shuffled = ConstraintSpec::constraint_first(4)
            .with_holonomic("q3", q3.0, q3.1)
            .with_holonomic("q1", q1.0, q1.1)
            .with_holonomic("q2", q2.0, q2.1);
        let w = PenaltyWeights::new(k).unwrap();
        let a = ConstraintMetric::new(forward, w).unwrap().metric(&x).unwrap();
        let b = ConstraintMetric::new(shuffled, w).unwrap().metric(&x).unwrap();
        prop_assert!((a.matrix - b.matrix).amax() <= 1e-10 * k);
    }

    #[test]
    fn unicycle_frames_agree_in_both_modes(x in state(3), k in 1.0..1000.0f64) {
        let actuation_first = ConstraintSpec::actuation_first(3, vec![])
            .with_actuation(|x| dvector![x[2].cos(), x[2].sin(), 0.0])
            .with_actuation(|_| dvector![0.0, 0.0, 1.0]);
        let w = PenaltyWeights::new(k).unwrap();
        let a = ConstraintMetric::new(actuation_first, w).unwrap().metric(&x).unwrap();
        let b = unicycle_metric(k).metric(&x).unwrap();
        prop_assert!((a.matrix - b.matrix).amax() <= 1e-12 * k);
    }

    #[test]
    fn unit_penalty_gives_identity(which in 0usize..4, x in state(4)) {
        let spec = specs().swap_remove(which);
        let n = spec.n;
        let h = ConstraintMetric::new(spec, PenaltyWeights::new(1.0).unwrap()).unwrap().metric(&x.rows(0, n).into_owned()).unwrap();
        prop_assert!((h.matrix - DMatrix::identity(n, n)).amax() <= 1e-14);
    }

    #[test]
    fn barrier_is_at_least_one_and_exactly_one_outside_detection(x in state(2)) {
        let b = planar_barrier();
        let d = x.norm();
        prop_assume!(d > 0.5);
        let v = b.barrier(&x).unwrap();
        prop_assert!(v >= 1.0);
        if d >= 1.0 {
            prop_assert_eq!(v, 1.0);
            prop_assert_eq!(b.barrier_gradient(&x).unwrap(), DVector::zeros(2));
        }
    }

    #[test]
    fn barrier_is_continuous_across_detection_shell(angle in 0.0..2.0 * PI) {
        let b = planar_barrier();
        let dir = dvector![angle.cos(), angle.sin()];
        let inside = b.barrier(&(&dir * (1.0 - 1e-7))).unwrap();
        let outside = b.barrier(&(&dir * (1.0 + 1e-7))).unwrap();
        prop_assert!((inside - outside).abs() <= 1e-10);
    }

    #[test]
    fn barrier_gradient_matches_finite_differences(angle in 0.0..2.0 * PI, d in 0.6..1.2f64) {
        let b = planar_barrier();
        let x = dvector![d * angle.cos(), d * angle.sin()];
        let g = b.barrier_gradient(&x).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (b.barrier(&xp).unwrap() - b.barrier(&xm).unwrap()) / (2.0 * h);
            prop_assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "{} vs {}", fd, g[i]);
        }
    }

    #[test]
    fn collision_barrier_is_symmetric_in_the_vehicles(a in state(3), b in state(3)) {
        let pair = BarrierField::new(vec![], vec![CollisionPair::new((0, 1), (0, 3), 0.2, 0.4).unwrap()]);
        prop_assume!((a.rows(0, 2) - b.rows(0, 2)).norm() > 0.2);
        let ab = DVector::from_iterator(6, a.iter().chain(b.iter()).copied());
        let ba = DVector::from_iterator(6, b.iter().chain(a.iter()).copied());
        prop_assert_eq!(pair.barrier(&ab).unwrap(), pair.barrier(&ba).unwrap());
        let (gab, gba) = (pair.barrier_gradient(&ab).unwrap(), pair.barrier_gradient(&ba).unwrap());
        prop_assert_eq!(gab.rows(0, 3), gba.rows(3, 3));
    }

    #[test]
    fn projection_residual_is_orthogonal_to_the_inputs(c in smooth_curve(4, 21)) {
        let spec = systems::car(systems::CAR_WHEELBASE).spec;
        let u = extract_controls(&c, &spec).unwrap();
        let v = c.velocities();
        for a in 0..c.n_nodes() {
            let f = input_fields(&spec, &c.node(a).into_owned()).unwrap();
            let r = v.column(a) - &f * u.at(a);
            let scale = v.column(a).norm().max(1.0);
            prop_assert!((f.transpose() * r).amax() <= 1e-10 * scale);
        }
    }

    #[test]
    fn energy_is_reversal_invariant(samples in prop::collection::vec(-3.0..3.0f64, 2 * 17)) {
        let u = ControlSignal::new(DMatrix::from_vec(2, 17, samples)).unwrap();
        let (e, r) = (energy(&u), energy(&u.reversed()));
        prop_assert!((e - r).abs() <= 1e-12 * e.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn rollout_reproduces_exact_admissible_curves(v in (-1.0..1.0f64, -1.0..1.0f64, -2.0..2.0f64, -2.0..2.0f64)) {
        // affine controls are reproduced exactly by the linear interpolation in the rollout
        let (v0, v1, w0, w1) = v;
        let u = |t: f64| dvector![v0 + v1 * t, w0 + w1 * t];
        let spec = systems::unicycle().spec;
        let n_nodes = 101;
        // reference: RK4 on a grid 100 times finer
        let sub = 100;
        let h = 1.0 / ((n_nodes - 1) * sub) as f64;
        let f = |x: &DVector<f64>, t: f64| spec.actuation_matrix(x).unwrap() * u(t);
        let mut x = dvector![0.1, -0.2, 0.3];
        let mut nodes = vec![x.clone()];
        for a in 0..n_nodes - 1 {
            for s in 0..sub {
                let t = (a * sub + s) as f64 * h;
                let k1 = f(&x, t);
                let k2 = f(&(&x + &k1 * (0.5 * h)), t + 0.5 * h);
                let k3 = f(&(&x + &k2 * (0.5 * h)), t + 0.5 * h);
                let k4 = f(&(&x + &k3 * h), t + h);
                x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
            }
            nodes.push(x.clone());
        }
        let exact = Curve::from_nodes(&nodes).unwrap();
        let samples = DMatrix::from_fn(2, n_nodes, |i, a| u(exact.t(a))[i]);
        let r = rollout(&spec, &ControlSignal::new(samples).unwrap(), &exact).unwrap();
        prop_assert!(r.sup_error <= 1e-6, "{}", r.sup_error);
        prop_assert_eq!(r.states.start(), exact.start());
    }

    #[test]
    fn flow_pins_endpoints_and_is_deterministic(c in smooth_curve(3, 21), k in 1.5..50.0f64) {
        let m = unicycle_metric(k);
        let cfg = FlowConfig::new(0.05);
        let first = flow(&c, &m, &cfg).unwrap();
        for snap in &first.snapshots {
            prop_assert_eq!(snap.curve.start(), c.start());
            prop_assert_eq!(snap.curve.end(), c.end());
        }
        let second = flow(&c, &m, &cfg).unwrap();
        prop_assert_eq!(first, second);
    }
}
