mod common;

use common::*;
use lipro_core::lp::{
    certificate_compose, certificate_value, certificate_verify, certificate_verify_with, dlp_exact,
    dlp_same_space, IsoCertificate, PairInstance,
};
use lipro_core::metric::{
    lipschitz_distance, lipschitz_distance_branch_and_bound, lipschitz_distance_exhaustive, Bijection,
    FiniteMetricSpace, MetricMap, SearchOptions,
};
use lipro_core::paths::{
    constant_path, enumerate_paths, pushforward_measure, pushforward_path, set_distance, uniform_metric,
    GridPath, GridPathMeasure, TimeGrid,
};
use lipro_core::prokhorov::{prokhorov_bruteforce, prokhorov_distance, EnlargementFactor};
use num_traits::One;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dilation_product_at_least_one(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, n), random_space(&mut r, n));
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let d = f.dilations().unwrap();
        // exactly, over the rationals the distances represent
        let exact = |a: f64| num_rational::BigRational::from_float(a).unwrap();
        let ratio = |s: &FiniteMetricSpace, t: &FiniteMetricSpace, g: &Bijection| {
            let mut best = num_rational::BigRational::from_integer(0.into());
            for i in 0..n {
                for j in 0..i {
                    let q = exact(t.d(g.apply(i), g.apply(j))) / exact(s.d(i, j));
                    if q > best {
                        best = q;
                    }
                }
            }
            best
        };
        let g = f.assignment();
        prop_assert!(ratio(&x, &y, g) * ratio(&y, &x, &g.inverse()) >= num_rational::BigRational::one());
        // and in floating point up to the rounding of one product
        prop_assert!(d.forward * d.backward >= 1.0 - 2.0 * f64::EPSILON);
        prop_assert_eq!(d.forward, f.dilation().unwrap());
        prop_assert_eq!(d.backward, f.inverse().dilation().unwrap());
    }

    #[test]
    fn similarity_has_unit_dilation_product(seed in any::<u64>(), n in 2usize..7, k in 0.1f64..10.0) {
        let mut r = rng(seed);
        let x = random_space(&mut r, n);
        let y = x.scaled(k).unwrap();
        let d = MetricMap::new(&x, &y, Bijection::identity(n)).unwrap().dilations().unwrap();
        prop_assert!((d.forward * d.backward - 1.0).abs() < 1e-12);
    }

    // with equal diameters every dilation is at least 1, and the defect is subadditive
    #[test]
    fn defect_subadditive_at_equal_diameter(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let (x, y, z) = (unit_diameter_space(&mut r, n), unit_diameter_space(&mut r, n), unit_diameter_space(&mut r, n));
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let g = MetricMap::new(&y, &z, random_bijection(&mut r, n)).unwrap();
        let gf = MetricMap::new(&x, &z, f.assignment().then(g.assignment()).unwrap()).unwrap();
        let sum = f.isometry_defect().unwrap() + g.isometry_defect().unwrap();
        prop_assert!(gf.isometry_defect().unwrap() <= sum + 1e-12);
    }

    #[test]
    fn lipschitz_distance_metric_at_equal_diameter(seed in any::<u64>(), n in 2usize..6) {
        let mut r = rng(seed);
        let (x, y, z) = (unit_diameter_space(&mut r, n), unit_diameter_space(&mut r, n), unit_diameter_space(&mut r, n));
        let o = SearchOptions::default();
        let xy = lipschitz_distance(&x, &y, o).value;
        let yx = lipschitz_distance(&y, &x, o).value;
        let yz = lipschitz_distance(&y, &z, o).value;
        let xz = lipschitz_distance(&x, &z, o).value;
        prop_assert!((xy - yx).abs() <= 1e-12);
        prop_assert!(xz <= xy + yz + 1e-12);
    }

    #[test]
    fn zero_distance_iff_permuted_matrix(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let x = random_space(&mut r, n);
        let p = random_bijection(&mut r, n);
        // y(i, j) = x(p⁻¹ i, p⁻¹ j), so p is an isometry x -> y
        let q = p.inverse();
        let rows = (0..n).map(|i| (0..n).map(|j| x.d(q.apply(i), q.apply(j))).collect()).collect();
        let y = FiniteMetricSpace::from_matrix(rows).unwrap();
        let found = lipschitz_distance(&x, &y, SearchOptions::default());
        prop_assert_eq!(found.value, 0.0);
        let w = MetricMap::new(&x, &y, found.witness.unwrap()).unwrap();
        prop_assert_eq!(w.isometry_defect().unwrap(), 0.0);

        let other = random_space(&mut r, n);
        let d = lipschitz_distance(&x, &other, SearchOptions::default());
        prop_assert!(d.value > 0.0);
    }

    #[test]
    fn branch_and_bound_matches_exhaustive(seed in any::<u64>(), n in 2usize..7) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, n), random_space(&mut r, n));
        let (a, wa) = lipschitz_distance_exhaustive(&x, &y).unwrap();
        let (b, wb) = lipschitz_distance_branch_and_bound(&x, &y).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(wa, wb);
    }

    #[test]
    fn search_independent_of_jobs(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, 9), random_space(&mut r, 9));
        let one = lipschitz_distance(&x, &y, SearchOptions { jobs: 1, exhaustive_limit: 8 });
        let four = lipschitz_distance(&x, &y, SearchOptions { jobs: 4, exhaustive_limit: 8 });
        prop_assert_eq!(one, four);
    }
}

// The sum of absolute log-dilations is not subadditive once diameters differ:
// the composite can shrink far more than either factor stretches.
#[test]
fn defect_not_subadditive_across_diameters() {
    let x = FiniteMetricSpace::from_matrix(vec![
        vec![0.0, 1.0, 5.0 / 3.0],
        vec![1.0, 0.0, 8.0 / 3.0],
        vec![5.0 / 3.0, 8.0 / 3.0, 0.0],
    ])
    .unwrap();
    let y = FiniteMetricSpace::from_matrix(vec![
        vec![0.0, 1.0, 5.0 / 12.0],
        vec![1.0, 0.0, 2.0 / 3.0],
        vec![5.0 / 12.0, 2.0 / 3.0, 0.0],
    ])
    .unwrap();
    let z = FiniteMetricSpace::from_matrix(vec![
        vec![0.0, 0.25, 5.0 / 12.0],
        vec![0.25, 0.0, 1.0 / 6.0],
        vec![5.0 / 12.0, 1.0 / 6.0, 0.0],
    ])
    .unwrap();
    let id = Bijection::identity(3);
    let fxy = MetricMap::new(&x, &y, id.clone()).unwrap().isometry_defect().unwrap();
    let fyz = MetricMap::new(&y, &z, id.clone()).unwrap().isometry_defect().unwrap();
    let fxz = MetricMap::new(&x, &z, id).unwrap().isometry_defect().unwrap();
    assert!((fxy - 4f64.ln()).abs() < 1e-12);
    assert!((fyz - 4f64.ln()).abs() < 1e-12);
    assert!((fxz - 64f64.ln()).abs() < 1e-12);

    let o = SearchOptions::default();
    let (xy, yz, xz) = (
        lipschitz_distance(&x, &y, o).value,
        lipschitz_distance(&y, &z, o).value,
        lipschitz_distance(&x, &z, o).value,
    );
    assert!(xy <= 4f64.ln() + 1e-12 && yz <= 4f64.ln() + 1e-12);
    assert!(xz > xy + yz + 0.1, "{xz} vs {xy} + {yz}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // the dilation of Φ_f over every grid path equals dil f
    #[test]
    fn path_dilation_lemma_enumerated(seed in any::<u64>(), n in 2usize..5, m in 0usize..4) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, n), random_space(&mut r, n));
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let grid = TimeGrid::new(1.0, m).unwrap();
        let all = enumerate_paths(n, &grid);
        let images: Vec<GridPath> = all.iter().map(|v| pushforward_path(&f, v).unwrap()).collect();
        let mut dil: f64 = 0.0;
        for i in 0..all.len() {
            for j in 0..i {
                let d = uniform_metric(&x, &all[i], &all[j]).unwrap();
                dil = dil.max(uniform_metric(&y, &images[i], &images[j]).unwrap() / d);
            }
        }
        prop_assert_eq!(dil, f.dilation().unwrap());
    }

    #[test]
    fn path_dilation_lemma_sampled(seed in any::<u64>(), n in 5usize..9, m in 3usize..8) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, n), random_space(&mut r, n));
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let grid = TimeGrid::new(1.0, m).unwrap();
        let mut paths: Vec<GridPath> = (0..n).map(|k| constant_path(k, &grid)).collect();
        paths.extend((0..60).map(|_| random_path(&mut r, n, &grid)));
        paths.sort();
        paths.dedup();
        let mut dil: f64 = 0.0;
        for i in 0..paths.len() {
            for j in 0..i {
                let d = uniform_metric(&x, &paths[i], &paths[j]).unwrap();
                let fi = pushforward_path(&f, &paths[i]).unwrap();
                let fj = pushforward_path(&f, &paths[j]).unwrap();
                dil = dil.max(uniform_metric(&y, &fi, &fj).unwrap() / d);
            }
        }
        prop_assert_eq!(dil, f.dilation().unwrap());
    }

    // Φ_f(B^a) ⊆ Φ_f(B)^{a e^ε}
    #[test]
    fn enlargement_inclusion(seed in any::<u64>(), n in 2usize..5, m in 0usize..3, a in 0.0f64..1.5) {
        let mut r = rng(seed);
        let (x, y) = (random_space(&mut r, n), random_space(&mut r, n));
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let eps = f.isometry_defect().unwrap();
        let grid = TimeGrid::new(1.0, m).unwrap();
        let all = enumerate_paths(n, &grid);
        let k = r.gen_range(1..=all.len().min(4));
        let b: Vec<GridPath> = (0..k).map(|_| all[r.gen_range(0..all.len())].clone()).collect();
        let fb: Vec<GridPath> = b.iter().map(|v| pushforward_path(&f, v).unwrap()).collect();
        for v in &all {
            if set_distance(&x, v, &b).unwrap() <= a {
                let fv = pushforward_path(&f, v).unwrap();
                prop_assert!(set_distance(&y, &fv, &fb).unwrap() <= a * eps.exp() * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn pushforward_keeps_unit_mass(seed in any::<u64>(), n in 2usize..6, m in 0usize..4) {
        let mut r = rng(seed);
        let (x, y) = (shared(random_space(&mut r, n)), shared(random_space(&mut r, n)));
        let grid = TimeGrid::new(1.0, m).unwrap();
        let p = random_measure(&mut r, x.clone(), grid, 6);
        let f = MetricMap::new(&x, &y, random_bijection(&mut r, n)).unwrap();
        let q = pushforward_measure(&f, &p).unwrap();
        let total = q.exact_weights().unwrap().iter().fold(num_rational::BigRational::from_integer(0.into()), |s, w| s + w);
        prop_assert!(total.is_one());
        prop_assert_eq!(q.len(), p.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn flow_matches_subset_oracle(seed in any::<u64>(), n in 2usize..7, m in 0usize..3) {
        let mut r = rng(seed);
        let x = shared(random_space(&mut r, n));
        let grid = TimeGrid::new(1.0, m).unwrap();
        let p = random_measure(&mut r, x.clone(), grid, 5);
        let q = random_measure(&mut r, x, grid, 5);
        let flow = prokhorov_distance(&p, &q).unwrap().value;
        let brute = prokhorov_bruteforce(&p, &q).unwrap();
        prop_assert!((flow - brute).abs() <= 1e-9, "flow {} brute {}", flow, brute);
        let float = prokhorov_distance(&float_copy(&p), &float_copy(&q)).unwrap().value;
        prop_assert!((float - flow).abs() <= 1e-9);
    }

    #[test]
    fn prokhorov_is_a_metric(seed in any::<u64>(), n in 2usize..7, m in 0usize..3) {
        let mut r = rng(seed);
        let x = shared(random_space(&mut r, n));
        let grid = TimeGrid::new(1.0, m).unwrap();
        let p = random_measure(&mut r, x.clone(), grid, 5);
        let q = random_measure(&mut r, x.clone(), grid, 5);
        let s = random_measure(&mut r, x, grid, 5);
        let pq = prokhorov_distance(&p, &q).unwrap().value;
        let qp = prokhorov_distance(&q, &p).unwrap().value;
        let qs = prokhorov_distance(&q, &s).unwrap().value;
        let ps = prokhorov_distance(&p, &s).unwrap().value;
        prop_assert!((pq - qp).abs() <= 1e-9);
        prop_assert!(ps <= pq + qs + 1e-9);
        prop_assert!(pq <= 1.0);
        prop_assert_eq!(pq == 0.0, p == q);
        prop_assert_eq!(prokhorov_distance(&p, &p).unwrap().value, 0.0);
    }

    #[test]
    fn coupling_certifies_value(seed in any::<u64>(), n in 2usize..7, m in 0usize..3) {
        let mut r = rng(seed);
        let x = shared(random_space(&mut r, n));
        let grid = TimeGrid::new(1.0, m).unwrap();
        let p = random_measure(&mut r, x.clone(), grid, 5);
        let q = random_measure(&mut r, x.clone(), grid, 5);
        let res = prokhorov_distance(&p, &q).unwrap();
        let mut rows = vec![0.0; p.len()];
        let mut cols = vec![0.0; q.len()];
        for e in &res.coupling.entries {
            prop_assert!(e.mass >= 0.0);
            if e.mass > 0.0 {
                let d = uniform_metric(&x, &p.paths()[e.row], &q.paths()[e.col]).unwrap();
                prop_assert!(d <= res.value);
            }
            rows[e.row] += e.mass;
            cols[e.col] += e.mass;
        }
        for (a, w) in rows.iter().zip(p.weights()) {
            prop_assert!(*a <= w + 1e-12);
        }
        for (a, w) in cols.iter().zip(q.weights()) {
            prop_assert!(*a <= w + 1e-12);
        }
        // exact transported mass certifies 1 - W <= value
        let w = res.exact_transported.unwrap();
        let gap = num_traits::ToPrimitive::to_f64(&(num_rational::BigRational::one() - w)).unwrap();
        prop_assert!(gap <= res.value + 1e-15);
        prop_assert!((res.coupling.total_mass() - res.transported).abs() < 1e-12);
    }
}

fn instance(r: &mut ChaCha8Rng, n: usize, atoms: usize, unit: bool) -> PairInstance {
    let space = shared(if unit { unit_diameter_space(r, n) } else { random_space(r, n) });
    let grid = TimeGrid::new(1.0, 1).unwrap();
    PairInstance::from_measure(random_measure(r, space, grid, atoms))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn certificate_values_verify_and_bound_exact(seed in any::<u64>(), n in 1usize..6) {
        let mut r = rng(seed);
        let a = instance(&mut r, n, 4, false);
        let b = instance(&mut r, n, 4, false);
        let exact = dlp_exact(&a, &b, 0).unwrap();
        for _ in 0..4 {
            let f = random_bijection(&mut r, n);
            let v = certificate_value(&f, &a, &b).unwrap();
            prop_assert!(v.value >= exact.value);
            prop_assert!(certificate_verify(&v.certificate, &a, &b).unwrap().accepted);
            prop_assert!((v.certificate.eps + v.certificate.delta - v.value).abs() < 1e-12);
        }
        let best = exact.certificate.unwrap();
        prop_assert!(certificate_verify(&best, &a, &b).unwrap().accepted);
    }

    #[test]
    fn dlp_symmetric_and_triangle_at_equal_diameter(seed in any::<u64>(), n in 2usize..5) {
        let mut r = rng(seed);
        let (a, b, c) = (instance(&mut r, n, 3, true), instance(&mut r, n, 3, true), instance(&mut r, n, 3, true));
        let ab = dlp_exact(&a, &b, 0).unwrap();
        let ba = dlp_exact(&b, &a, 0).unwrap();
        let bc = dlp_exact(&b, &c, 0).unwrap();
        let ac = dlp_exact(&a, &c, 0).unwrap();
        prop_assert!((ab.value - ba.value).abs() <= 1e-12);
        prop_assert!(ac.value <= ab.value + bc.value + 1e-9);
        let composed = certificate_compose(&ab.certificate.unwrap(), &bc.certificate.unwrap()).unwrap();
        prop_assert!(certificate_verify(&composed, &a, &c).unwrap().accepted);
    }

    #[test]
    fn same_space_below_prokhorov(seed in any::<u64>(), n in 3usize..8, m in 0usize..3) {
        let mut r = rng(seed);
        let x = shared(FiniteMetricSpace::cycle(n, 1.0).unwrap());
        let grid = TimeGrid::new(1.0, m).unwrap();
        let a = PairInstance::from_measure(random_measure(&mut r, x.clone(), grid, 4));
        let b = PairInstance::from_measure(random_measure(&mut r, x, grid, 4));
        let s = dlp_same_space(&a, &b).unwrap();
        prop_assert!(s.value <= prokhorov_distance(a.measure(), b.measure()).unwrap().value);
        prop_assert!(s.value <= s.prokhorov);
    }

    #[test]
    fn zero_dlp_has_zero_certificate(seed in any::<u64>(), n in 2usize..6) {
        let mut r = rng(seed);
        let a = instance(&mut r, n, 4, false);
        // relabel through a random bijection: an isomorphic copy
        let g = random_bijection(&mut r, n);
        let q = g.inverse();
        let rows = (0..n).map(|i| (0..n).map(|j| a.space().d(q.apply(i), q.apply(j))).collect()).collect();
        let y = shared(FiniteMetricSpace::from_matrix(rows).unwrap());
        let f = MetricMap::new(a.space(), &y, g.clone()).unwrap();
        let moved = lipro_core::paths::pushforward_measure_onto(&f, a.measure(), y.clone()).unwrap();
        let b = PairInstance::from_measure(moved);
        let d = dlp_exact(&a, &b, 0).unwrap();
        prop_assert_eq!(d.value, 0.0);
        let c = d.certificate.unwrap();
        prop_assert_eq!((c.eps, c.delta), (0.0, 0.0));
        prop_assert!(certificate_verify(&c, &a, &b).unwrap().accepted);
    }
}

// Dropping e^ε from the level breaks composition: a stretch after a
// measure perturbation enlarges the perturbation.
#[test]
fn unit_factor_breaks_composition() {
    let grid = TimeGrid::new(1.0, 1).unwrap();
    let pair = |d: f64, node: usize| {
        let s = shared(FiniteMetricSpace::from_matrix(vec![vec![0.0, d], vec![d, 0.0]]).unwrap());
        PairInstance::from_measure(GridPathMeasure::dirac(s, grid, constant_path(node, &grid)).unwrap())
    };
    let (a, b, c) = (pair(0.25, 0), pair(0.25, 1), pair(0.5, 1));
    let c1 = IsoCertificate { map: Bijection::identity(2), eps: 0.0, delta: 0.25 };
    let c2 = IsoCertificate { map: Bijection::identity(2), eps: 2.0 * 2f64.ln(), delta: 0.0 };
    for factor in [EnlargementFactor::Unit, EnlargementFactor::Exponential] {
        assert!(certificate_verify_with(&c1, &a, &b, factor).unwrap().accepted);
        assert!(certificate_verify_with(&c2, &b, &c, factor).unwrap().accepted);
    }
    let composed = certificate_compose(&c1, &c2).unwrap();
    assert!(certificate_verify(&composed, &a, &c).unwrap().accepted);
    let unit = certificate_verify_with(&composed, &a, &c, EnlargementFactor::Unit).unwrap();
    assert!(!unit.accepted);
    assert_eq!(unit.forward, 0.5);
}

#[test]
fn composed_certificate_on_scaled_triple() {
    // (0.2, 0.1) and (0.3, 0.05) compose to (0.5, 0.15) and are accepted
    let grid = TimeGrid::new(1.0, 1).unwrap();
    let base = FiniteMetricSpace::from_matrix(vec![
        vec![0.0, 1.0, 1.5],
        vec![1.0, 0.0, 1.2],
        vec![1.5, 1.2, 0.0],
    ])
    .unwrap();
    let k1 = (0.1f64).exp();
    let k2 = (0.15f64).exp();
    let spaces = [
        shared(base.clone()),
        shared(base.scaled(k1).unwrap()),
        shared(base.scaled(k1 * k2).unwrap()),
    ];
    let half = |s: &lipro_core::metric::SpaceRef, w0: (i64, i64)| {
        let w = num_rational::BigRational::new(w0.0.into(), w0.1.into());
        let rest = num_rational::BigRational::one() - &w;
        PairInstance::from_measure(
            GridPathMeasure::new_exact(
                s.clone(),
                grid,
                vec![(constant_path(0, &grid), w), (GridPath(vec![0, 1]), rest)],
            )
            .unwrap(),
        )
    };
    let a = half(&spaces[0], (1, 2));
    let b = half(&spaces[1], (6, 10));
    let c = half(&spaces[2], (13, 20));
    let c1 = IsoCertificate { map: Bijection::identity(3), eps: 0.2, delta: 0.1 };
    let c2 = IsoCertificate { map: Bijection::identity(3), eps: 0.3, delta: 0.05 };
    assert!(certificate_verify(&c1, &a, &b).unwrap().accepted);
    assert!(certificate_verify(&c2, &b, &c).unwrap().accepted);
    let composed = certificate_compose(&c1, &c2).unwrap();
    assert!((composed.eps - 0.5).abs() < 1e-15 && (composed.delta - 0.15).abs() < 1e-15);
    assert!(certificate_verify(&composed, &a, &c).unwrap().accepted);
}
