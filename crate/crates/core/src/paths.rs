//! Grid-time paths on a finite metric space.
//!
//! A continuous path into a finite space is constant, so paths are sampled on
//! a fixed time grid `t_k = kT/m` and compared with the max-over-grid metric.

use std::sync::Arc;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::metric::{FiniteMetricSpace, MetricMap, SpaceRef};
use crate::{Error, Result, VALIDATION_TOL};

/// Evaluation times `t_k = k T / m`, `k = 0..=m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "m")]
    pub steps: usize,
}

impl TimeGrid {
    /// `steps = 0` is allowed and yields the single time `t_0 = 0`.
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "horizon {horizon} must be positive"
            )));
        }
        Ok(TimeGrid { horizon, steps })
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.horizon / self.steps as f64
        }
    }

    pub fn time(&self, k: usize) -> f64 {
        if self.steps == 0 {
            0.0
        } else if k == self.steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    /// The grid index of `t`, if `t` lies on the grid within `1e-9 · T`.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let tol = 1e-9 * self.horizon;
        if self.steps == 0 {
            return (t.abs() <= tol).then_some(0);
        }
        let k = (t / self.dt()).round();
        if k < 0.0 || k > self.steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= tol).then_some(k)
    }
}

/// A path observed at every time of its grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridPath(pub Vec<usize>);

impl GridPath {
    pub fn values(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub(crate) fn check(&self, space: &FiniteMetricSpace, grid: &TimeGrid) -> Result<()> {
        if self.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "path has {} values, grid has {} times",
                self.len(),
                grid.len()
            )));
        }
        if let Some(&bad) = self.0.iter().find(|&&x| x >= space.len()) {
            return Err(Error::InvalidPath(format!(
                "point index {bad} outside a space of {} points",
                space.len()
            )));
        }
        Ok(())
    }
}

/// `d_C(v, w) = max_k d(v(t_k), w(t_k))`.
pub fn uniform_metric(space: &FiniteMetricSpace, v: &GridPath, w: &GridPath) -> Result<f64> {
    if v.len() != w.len() {
        return Err(Error::GridMismatch(format!(
            "paths of lengths {} and {}",
            v.len(),
            w.len()
        )));
    }
    if let Some(&bad) = v.0.iter().chain(&w.0).find(|&&x| x >= space.len()) {
        return Err(Error::InvalidPath(format!("point index {bad} out of range")));
    }
    Ok(path_distance(space, &v.0, &w.0))
}

#[inline]
pub(crate) fn path_distance(space: &FiniteMetricSpace, v: &[usize], w: &[usize]) -> f64 {
    v.iter()
        .zip(w)
        .map(|(&a, &b)| space.d(a, b))
        .fold(0.0, f64::max)
}

pub fn constant_path(x: usize, grid: &TimeGrid) -> GridPath {
    GridPath(vec![x; grid.len()])
}

/// `Φ_f(v)(t) = f(v(t))`.
pub fn pushforward_path(f: &MetricMap<'_>, v: &GridPath) -> Result<GridPath> {
    if let Some(&bad) = v.0.iter().find(|&&x| x >= f.source().len()) {
        return Err(Error::InvalidPath(format!("point index {bad} out of range")));
    }
    Ok(GridPath(v.0.iter().map(|&x| f.apply(x)).collect()))
}

/// `min_{w ∈ S} d_C(v, w)`.
pub fn set_distance(space: &FiniteMetricSpace, v: &GridPath, set: &[GridPath]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::EmptySet);
    }
    set.iter()
        .map(|w| uniform_metric(space, v, w))
        .try_fold(f64::INFINITY, |acc, d| Ok(acc.min(d?)))
}

/// Every path of `m + 1` values in `0..n`, in lexicographic order.
pub fn enumerate_paths(n: usize, grid: &TimeGrid) -> Vec<GridPath> {
    let len = grid.len();
    let total = n.checked_pow(len as u32).unwrap_or(usize::MAX);
    let mut out = Vec::with_capacity(total.min(1 << 20));
    let mut cur = vec![0usize; len];
    if n == 0 {
        return out;
    }
    loop {
        out.push(GridPath(cur.clone()));
        let mut k = len;
        loop {
            if k == 0 {
                return out;
            }
            k -= 1;
            cur[k] += 1;
            if cur[k] < n {
                break;
            }
            cur[k] = 0;
        }
    }
}

/// A finitely supported probability measure on grid paths.
///
/// Atoms are kept sorted by path with equal paths merged, so two measures
/// are equal iff their atom lists are equal. When weights were supplied as
/// rationals they are also kept exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::io::MeasureWire", into = "crate::io::MeasureWire")]
pub struct GridPathMeasure {
    space: SpaceRef,
    grid: TimeGrid,
    paths: Vec<GridPath>,
    weights: Vec<f64>,
    exact: Option<Vec<BigRational>>,
}

impl GridPathMeasure {
    /// Floating-point weights; they must be positive and sum to 1 within `1e-12`.
    pub fn new(space: SpaceRef, grid: TimeGrid, atoms: Vec<(GridPath, f64)>) -> Result<Self> {
        let mut total = 0.0;
        for (path, w) in &atoms {
            path.check(&space, &grid)?;
            if !(*w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            total += w;
        }
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        if (total - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        let (paths, weights) = merge(atoms, |a, b| a + b);
        Ok(GridPathMeasure {
            space,
            grid,
            paths,
            weights,
            exact: None,
        })
    }

    /// Rational weights; they must be positive and sum to exactly 1.
    pub fn new_exact(
        space: SpaceRef,
        grid: TimeGrid,
        atoms: Vec<(GridPath, BigRational)>,
    ) -> Result<Self> {
        let mut total = BigRational::zero();
        for (path, w) in &atoms {
            path.check(&space, &grid)?;
            if !(*w > BigRational::zero()) {
                return Err(Error::InvalidMeasure(format!("weight {w} is not positive")));
            }
            total += w;
        }
        if atoms.is_empty() {
            return Err(Error::InvalidMeasure("measure has no atoms".into()));
        }
        if !total.is_one() {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        let (paths, exact) = merge(atoms, |a, b| a + b);
        Ok(Self::from_exact_parts(space, grid, paths, exact))
    }

    fn from_exact_parts(
        space: SpaceRef,
        grid: TimeGrid,
        paths: Vec<GridPath>,
        exact: Vec<BigRational>,
    ) -> Self {
        let weights = exact.iter().map(|w| w.to_f64().unwrap_or(f64::NAN)).collect();
        GridPathMeasure {
            space,
            grid,
            paths,
            weights,
            exact: Some(exact),
        }
    }

    pub fn dirac(space: SpaceRef, grid: TimeGrid, path: GridPath) -> Result<Self> {
        Self::new_exact(space, grid, vec![(path, BigRational::one())])
    }

    /// The empirical law `(1/N) Σ δ_{v_k}`, with exact weights `k/N`.
    pub fn empirical(space: SpaceRef, grid: TimeGrid, samples: Vec<GridPath>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidMeasure("no samples".into()));
        }
        for s in &samples {
            s.check(&space, &grid)?;
        }
        let n = samples.len();
        let mut samples = samples;
        samples.sort_unstable();
        let mut paths: Vec<GridPath> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for s in samples {
            match paths.last() {
                Some(last) if *last == s => *counts.last_mut().expect("paired") += 1,
                _ => {
                    paths.push(s);
                    counts.push(1);
                }
            }
        }
        let denom = num_bigint::BigInt::from(n);
        let exact = counts
            .into_iter()
            .map(|c| BigRational::new(num_bigint::BigInt::from(c), denom.clone()))
            .collect();
        Ok(Self::from_exact_parts(space, grid, paths, exact))
    }

    pub fn space(&self) -> &SpaceRef {
        &self.space
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn paths(&self) -> &[GridPath] {
        &self.paths
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn exact_weights(&self) -> Option<&[BigRational]> {
        self.exact.as_deref()
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// The same atoms on another copy of the same space.
    pub fn with_space(&self, space: SpaceRef) -> Result<Self> {
        if *space != *self.space {
            return Err(Error::SpaceMismatch("replacement space differs".into()));
        }
        Ok(GridPathMeasure {
            space,
            ..self.clone()
        })
    }

    /// The law of the time-`t_k` marginal, as point masses.
    pub fn marginal(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.space.len()];
        for (p, w) in self.paths.iter().zip(&self.weights) {
            out[p.0[k]] += w;
        }
        out
    }
}

fn merge<W>(mut atoms: Vec<(GridPath, W)>, add: impl Fn(W, W) -> W) -> (Vec<GridPath>, Vec<W>) {
    atoms.sort_by(|a, b| a.0.cmp(&b.0));
    let mut paths: Vec<GridPath> = Vec::with_capacity(atoms.len());
    let mut weights: Vec<W> = Vec::with_capacity(atoms.len());
    for (p, w) in atoms {
        if paths.last() == Some(&p) {
            let prev = weights.pop().expect("paired");
            weights.push(add(prev, w));
        } else {
            paths.push(p);
            weights.push(w);
        }
    }
    (paths, weights)
}

/// `Φ_f* P`: atoms mapped pathwise, weights unchanged, equal images merged.
///
/// `target` must hold the same space as `f.target()`; passing it lets callers
/// share one allocation across many measures.
pub fn pushforward_measure_onto(
    f: &MetricMap<'_>,
    p: &GridPathMeasure,
    target: SpaceRef,
) -> Result<GridPathMeasure> {
    if **p.space() != *f.source() {
        return Err(Error::SpaceMismatch(
            "measure does not live on the map's source".into(),
        ));
    }
    if *target != *f.target() {
        return Err(Error::SpaceMismatch("target handle differs from the map's target".into()));
    }
    let mapped: Vec<GridPath> = p
        .paths
        .iter()
        .map(|v| GridPath(v.0.iter().map(|&x| f.apply(x)).collect()))
        .collect();
    match &p.exact {
        Some(exact) => {
            let (paths, exact) = merge(mapped.into_iter().zip(exact.iter().cloned()).collect(), |a, b| a + b);
            Ok(GridPathMeasure::from_exact_parts(target, p.grid, paths, exact))
        }
        None => {
            let (paths, weights) = merge(mapped.into_iter().zip(p.weights.iter().copied()).collect(), |a, b| a + b);
            Ok(GridPathMeasure {
                space: target,
                grid: p.grid,
                paths,
                weights,
                exact: None,
            })
        }
    }
}

pub fn pushforward_measure(f: &MetricMap<'_>, p: &GridPathMeasure) -> Result<GridPathMeasure> {
    pushforward_measure_onto(f, p, Arc::new(f.target().clone()))
}
