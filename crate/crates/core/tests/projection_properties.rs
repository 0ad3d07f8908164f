use misspec::edisp::{fleet, CostCurve, DispatchInstance};
use misspec::geometry::{FeasibleSet, Vector};
use nalgebra::dvector;
use proptest::prelude::*;

fn vec_of(n: usize, scale: f64) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-scale..scale, n).prop_map(Vector::from_vec)
}

fn dispatch_set() -> FeasibleSet {
    let gens = fleet(2, 10.0, |_, _| CostCurve::Quadratic { a: 1.0, b: 0.0 });
    DispatchInstance::new(gens, 3, dvector![3.0, 5.0, 4.0]).unwrap().set().clone()
}

fn sets() -> Vec<FeasibleSet> {
    vec![
        FeasibleSet::boxed(dvector![-1.0, 0.0, 2.0, -5.0, 0.0, 1.0], dvector![1.0, 3.0, 2.5, 5.0, 0.0, 4.0]).unwrap(),
        FeasibleSet::nonneg_orthant(6),
        dispatch_set(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn projection_is_feasible_and_idempotent(x in vec_of(6, 20.0)) {
        for set in sets() {
            let p = set.project(&x).unwrap();
            prop_assert!(set.contains(&p, 1e-7));
            let pp = set.project(&p).unwrap();
            prop_assert!((&pp - &p).norm() <= 1e-7);
        }
    }

    #[test]
    fn projection_is_nonexpansive(x in vec_of(6, 20.0), y in vec_of(6, 20.0)) {
        for set in sets() {
            let (px, py) = (set.project(&x).unwrap(), set.project(&y).unwrap());
            prop_assert!((&px - &py).norm() <= (&x - &y).norm() + 1e-7);
        }
    }

    #[test]
    fn projection_satisfies_variational_inequality(x in vec_of(6, 20.0), y in vec_of(6, 20.0)) {
        for set in sets() {
            let p = set.project(&x).unwrap();
            let z = set.project(&y).unwrap();
            prop_assert!((&x - &p).dot(&(&z - &p)) <= 1e-6 * (1.0 + x.norm() * z.norm()));
        }
    }
}
