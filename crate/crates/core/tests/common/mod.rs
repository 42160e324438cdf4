#![allow(dead_code)]

use std::sync::Arc;

use lipro_core::metric::{Bijection, FiniteMetricSpace, SpaceRef};
use lipro_core::paths::{GridPath, GridPathMeasure, TimeGrid};
use num_rational::BigRational;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect()
}

/// `n` uniform points in the unit square.
pub fn random_space(rng: &mut ChaCha8Rng, n: usize) -> FiniteMetricSpace {
    FiniteMetricSpace::euclidean(&points(rng, n)).unwrap()
}

/// As [`random_space`], rescaled to diameter 1.
pub fn unit_diameter_space(rng: &mut ChaCha8Rng, n: usize) -> FiniteMetricSpace {
    let s = random_space(rng, n);
    let d = s.diameter();
    s.scaled(1.0 / d).unwrap()
}

pub fn random_bijection(rng: &mut ChaCha8Rng, n: usize) -> Bijection {
    let mut v: Vec<usize> = (0..n).collect();
    v.shuffle(rng);
    Bijection::new(v).unwrap()
}

pub fn random_path(rng: &mut ChaCha8Rng, n: usize, grid: &TimeGrid) -> GridPath {
    GridPath((0..grid.len()).map(|_| rng.gen_range(0..n)).collect())
}

/// Up to `atoms` random paths with random rational weights summing to one.
pub fn random_measure(rng: &mut ChaCha8Rng, space: SpaceRef, grid: TimeGrid, atoms: usize) -> GridPathMeasure {
    let k = rng.gen_range(1..=atoms);
    let raw: Vec<i64> = (0..k).map(|_| rng.gen_range(1..=12)).collect();
    let total: i64 = raw.iter().sum();
    let list = raw
        .iter()
        .map(|&w| {
            (
                random_path(rng, space.len(), &grid),
                BigRational::new(w.into(), total.into()),
            )
        })
        .collect();
    GridPathMeasure::new_exact(space, grid, list).unwrap()
}

/// The same atoms with floating-point weights.
pub fn float_copy(m: &GridPathMeasure) -> GridPathMeasure {
    GridPathMeasure::new(
        m.space().clone(),
        *m.grid(),
        m.paths().iter().cloned().zip(m.weights().iter().copied()).collect(),
    )
    .unwrap()
}

pub fn shared(space: FiniteMetricSpace) -> SpaceRef {
    Arc::new(space)
}
