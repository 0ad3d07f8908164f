use misspec::edisp::{
    build_demand_misspecified, fleet, sample_demand, CostCurve, CostForm, CostScenario, DispatchInstance, SamplingPlan,
};
use misspec::geometry::{FeasibleSet, Vector};
use misspec::problems::{
    make_block_lsq_learning, make_isotropic_learning, make_quadratic_objective, make_skew_map, AffineMap, Map, Objective, Sample,
    SampleScaling,
};
use nalgebra::{dvector, DMatrix};
use proptest::prelude::*;

const H: f64 = 1e-5;

fn vec_of(n: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vector> {
    prop::collection::vec(lo..hi, n).prop_map(Vector::from_vec)
}

fn central_difference(value: impl Fn(&Vector) -> f64, at: &Vector) -> Vector {
    Vector::from_iterator(
        at.len(),
        (0..at.len()).map(|i| {
            let mut p = at.clone();
            let mut m = at.clone();
            p[i] += H;
            m[i] -= H;
            (value(&p) - value(&m)) / (2.0 * H)
        }),
    )
}

fn rel_err(a: &Vector, b: &Vector) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

fn quadratic() -> impl Objective {
    let q = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.2, 0.0, 0.2, 3.0]);
    let b = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -1.0, 2.0, 0.5, 0.5]);
    make_quadratic_objective(q, b).unwrap()
}

fn dispatch_cost(form: CostForm) -> CostScenario {
    let gens = match form {
        CostForm::Quadratic => fleet(3, 10.0, |i, _| CostCurve::Quadratic { a: 10.0, b: 1.0 + i as f64 }),
        CostForm::MaxLinear => fleet(3, 10.0, |i, cap| CostCurve::convex_pieces(1.0 + 0.1 * i as f64, cap)),
    };
    let inst = DispatchInstance::new(gens, 4, Vector::from_element(4, 6.0)).unwrap();
    let plan = SamplingPlan {
        samples: 40,
        noise_sd: 1.0,
        seed: 1,
    };
    CostScenario::new(inst, form, plan).unwrap()
}

fn demand_map() -> AffineMap {
    let d = dvector![3.0, 4.0, 5.0];
    let obs = sample_demand(&d, 20, 0.5, 3).unwrap();
    let gens = fleet(2, 10.0, |_, _| CostCurve::Quadratic { a: 0.5, b: 1.0 });
    build_demand_misspecified(gens, 3, &d, &obs, SampleScaling::Mean).unwrap().map
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn quadratic_gradient_matches_differences(x in vec_of(3, -3.0, 3.0), theta in vec_of(2, -3.0, 3.0)) {
        let f = quadratic();
        let fd = central_difference(|z| f.value(z, &theta), &x);
        prop_assert!(rel_err(&fd, &f.grad_x(&x, &theta)) <= 1e-5);
    }

    #[test]
    fn dispatch_cost_gradient_matches_differences(x in vec_of(12, 0.0, 4.0), theta in vec_of(6, 0.5, 20.0)) {
        let sc = dispatch_cost(CostForm::Quadratic);
        let f = &sc.objective;
        let fd = central_difference(|z| f.value(z, &theta), &x);
        prop_assert!(rel_err(&fd, &f.grad_x(&x, &theta)) <= 1e-5);
    }

    #[test]
    fn learning_gradients_match_differences(theta in vec_of(6, -5.0, 5.0)) {
        let sc = dispatch_cost(CostForm::Quadratic);
        let fd = central_difference(|t| sc.learning.value(t), &theta);
        prop_assert!(rel_err(&fd, &sc.learning.grad(&theta)) <= 1e-5);

        let samples: Vec<Sample> = (0..6)
            .map(|i| {
                let a = i as f64 * 0.5 - 1.0;
                Sample::new(dvector![a, a * a, 1.0], 2.0 * a - 0.5 * a * a + 1.0)
            })
            .collect();
        let lsq = make_block_lsq_learning(&[samples]).unwrap();
        let t = theta.rows(0, 3).into_owned();
        let fd = central_difference(|u| lsq.value(u), &t);
        prop_assert!(rel_err(&fd, &lsq.grad(&t)) <= 1e-5);

        let iso = make_isotropic_learning(dvector![1.0, 2.0, 3.0], 2.5, FeasibleSet::cube(3, -9.0, 9.0).unwrap()).unwrap();
        let fd = central_difference(|u| iso.value(u), &t);
        prop_assert!(rel_err(&fd, &iso.grad(&t)) <= 1e-5);
    }

    #[test]
    fn max_linear_subgradient_inequality(x in vec_of(12, 0.0, 4.0), y in vec_of(12, 0.0, 4.0)) {
        let sc = dispatch_cost(CostForm::MaxLinear);
        let theta = sc.instance.true_params();
        let f = &sc.objective;
        let g = f.grad_x(&x, &theta);
        prop_assert!(f.value(&y, &theta) >= f.value(&x, &theta) + g.dot(&(&y - &x)) - 1e-9);
        prop_assert!(g.norm() <= f.constants().m_subgrad + 1e-12);
    }

    #[test]
    fn declared_gradient_constants_hold(x in vec_of(12, 0.0, 4.0), y in vec_of(12, 0.0, 4.0)) {
        let sc = dispatch_cost(CostForm::Quadratic);
        let theta = sc.learning.truth();
        let f = &sc.objective;
        let c = f.constants();
        let d = &x - &y;
        let dg = f.grad_x(&x, theta) - f.grad_x(&y, theta);
        prop_assert!(dg.norm() <= c.g_fx * d.norm() * (1.0 + 1e-9) + 1e-12);
        prop_assert!(dg.dot(&d) >= c.eta_f * d.norm_squared() * (1.0 - 1e-9) - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn maps_are_monotone(x in vec_of(23, -5.0, 5.0), y in vec_of(23, -5.0, 5.0), theta in vec_of(3, 0.0, 10.0)) {
        let skew = make_skew_map(DMatrix::from_row_slice(2, 2, &[0.0, 2.0, -2.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let maps: [(&dyn Map, Vector, Vector, Vector); 2] = [
            (&skew, x.rows(0, 2).into_owned(), y.rows(0, 2).into_owned(), theta.rows(0, 2).into_owned()),
            (&demand_map(), x.clone(), y.clone(), theta.clone()),
        ];
        for (map, a, b, t) in maps {
            prop_assert_eq!(map.dim_x(), a.len());
            let d = &a - &b;
            let inner = (map.eval(&a, &t) - map.eval(&b, &t)).dot(&d);
            prop_assert!(inner >= -1e-9 * d.norm_squared().max(1.0));
        }
    }
}
