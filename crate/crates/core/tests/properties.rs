use std::f64::consts::PI;

use approx::assert_relative_eq;
use loopfloer::potentials::{Mode, Potential};
use loopfloer::torus_loops::{action, DiscreteLoop, WindingClass};
use proptest::prelude::*;

fn mode(n: usize) -> impl Strategy<Value = Mode> {
    (prop::collection::vec(-2i64..=2, n), -2i64..=2, -1.0f64..1.0, 0.0f64..(2.0 * PI))
        .prop_map(|(k, m, a, phi)| Mode { k, m, a, phi })
}

fn potential(n: usize) -> impl Strategy<Value = Potential> {
    prop::collection::vec(mode(n), 1..5).prop_map(move |modes| Potential::new(n, modes).unwrap())
}

fn point(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-4.0f64..4.0, n)
}

proptest! {
    #[test]
    fn potential_is_periodic(v in potential(2), q in point(2), t in 0.0f64..1.0, shift in prop::collection::vec(-3i64..=3, 2)) {
        let moved: Vec<f64> = q.iter().zip(&shift).map(|(x, s)| x + 2.0 * PI * *s as f64).collect();
        assert_relative_eq!(v.value(t, &q), v.value(t, &moved), epsilon = 1e-10);
        assert_relative_eq!(v.value(t, &q), v.value(t + 1.0, &q), epsilon = 1e-10);
    }

    #[test]
    fn gradient_matches_central_differences(v in potential(3), q in point(3), t in 0.0f64..1.0) {
        let mut grad = vec![0.0; 3];
        v.add_gradient(t, &q, &mut grad);
        let h = 1e-5;
        for i in 0..3 {
            let mut up = q.clone();
            let mut down = q.clone();
            up[i] += h;
            down[i] -= h;
            let fd = (v.value(t, &up) - v.value(t, &down)) / (2.0 * h);
            assert_relative_eq!(grad[i], fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn hessian_is_symmetric(v in potential(3), q in point(3), t in 0.0f64..1.0, xi in point(3), eta in point(3)) {
        let mut hxi = vec![0.0; 3];
        let mut heta = vec![0.0; 3];
        v.add_hessian_apply(t, &q, &xi, &mut hxi);
        v.add_hessian_apply(t, &q, &eta, &mut heta);
        let a: f64 = hxi.iter().zip(&eta).map(|(x, y)| x * y).sum();
        let b: f64 = heta.iter().zip(&xi).map(|(x, y)| x * y).sum();
        assert_relative_eq!(a, b, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn free_straight_loops_have_kinetic_action(alpha in prop::collection::vec(-3i64..=3, 2), offset in point(2)) {
        let class = WindingClass(alpha);
        let norm2: f64 = class.as_f64().iter().map(|a| a * a).sum();
        let l = DiscreteLoop::straight(class, 16, &offset).unwrap();
        let s = action(&l, &Potential::zero(2)).unwrap();
        assert_relative_eq!(s, 2.0 * PI * PI * norm2, epsilon = 1e-9, max_relative = 1e-12);
    }

    #[test]
    fn action_ignores_lattice_translation(v in potential(2), offset in point(2), shift in prop::collection::vec(-2i64..=2, 2)) {
        let class = WindingClass(vec![1, 0]);
        let moved: Vec<f64> = offset.iter().zip(&shift).map(|(x, s)| x + 2.0 * PI * *s as f64).collect();
        let a = DiscreteLoop::straight(class.clone(), 16, &offset).unwrap();
        let b = DiscreteLoop::straight(class, 16, &moved).unwrap();
        assert_relative_eq!(action(&a, &v).unwrap(), action(&b, &v).unwrap(), epsilon = 1e-9);
    }
}
