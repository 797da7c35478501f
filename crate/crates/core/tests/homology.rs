use std::time::Instant;

use loopfloer::broken_geodesics::broken_homology;
use loopfloer::critical_points::{enumerate_critical, SeedLattice};
use loopfloer::heat_flow::{loop_lines, FlowOptions};
use loopfloer::morse_complex::{build_complex, homology};
use loopfloer::potentials::pendulum_potential;
use loopfloer::torus_loops::WindingClass;

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[test]
fn loop_space_ranks_are_binomial() {
    for n in 1..=3 {
        let t = Instant::now();
        let alpha = WindingClass(vec![1; n]);
        let v = pendulum_potential(&alpha);
        let points = enumerate_critical(&v, &alpha, &SeedLattice::new(32)).unwrap();
        let lines = loop_lines(&points, &v, &FlowOptions::default()).unwrap();
        let complex = build_complex(&points, &lines, None).unwrap();
        let h = homology(&complex).unwrap();
        let expected: Vec<usize> = (0..=n).map(|k| binomial(n, k)).collect();
        assert_eq!(h.ranks(), expected, "n = {n}");
        assert!(h.is_torsion_free());
        eprintln!("n={n}: {:?}", t.elapsed());
    }
}

#[test]
fn polygon_model_agrees_on_the_two_torus() {
    let alpha = WindingClass(vec![1, 1]);
    let h = broken_homology(&pendulum_potential(&alpha), &alpha, 8).unwrap();
    assert_eq!(h.ranks(), vec![1, 2, 1]);
}
