//! Brownian motion and elliptic diffusions on discretized circles, the
//! dominating φ-bound, and modulus-of-continuity estimates.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::{FiniteMetricSpace, SpaceRef};
use crate::paths::{GridPath, GridPathMeasure, TimeGrid};
use crate::stats::{wilson_interval, Z95};
use crate::{Error, Result};

/// Constants of a manifold family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ManifoldFamilyParams {
    /// Dimension; 1 (circles) or 2 (flat tori).
    pub n: u32,
    /// Curvature bound.
    #[serde(rename = "K")]
    pub k: f64,
    /// Volume lower bound.
    #[serde(rename = "V")]
    pub v: f64,
    /// Diameter upper bound.
    #[serde(rename = "D")]
    pub d: f64,
    /// Volume upper bound.
    #[serde(rename = "Vprime")]
    pub v_prime: f64,
    /// Ellipticity constant.
    #[serde(rename = "Lambda")]
    pub lambda: f64,
}

impl ManifoldFamilyParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n == 1 || self.n == 2) {
            return Err(Error::InvalidParameter(format!("dimension {} unsupported", self.n)));
        }
        if !(self.d > 0.0) {
            return Err(Error::InvalidParameter("diameter bound must be positive".into()));
        }
        if !(self.v <= self.v_prime && self.v > 0.0) {
            return Err(Error::InvalidParameter("need 0 < V <= Vprime".into()));
        }
        if !(self.lambda >= 1.0) {
            return Err(Error::InvalidParameter("Lambda must be at least 1".into()));
        }
        Ok(())
    }

    /// Circles of circumference in `[V, Vprime]`, diameter `Vprime / 2`.
    pub fn circles(v: f64, v_prime: f64, lambda: f64) -> Self {
        ManifoldFamilyParams {
            n: 1,
            k: 0.0,
            v,
            d: v_prime / 2.0,
            v_prime,
            lambda,
        }
    }
}

/// `φ(ξ, r) = C′ ξ^{−(1+ν)} exp(−r² / 4ξ)` with horizon `τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatKernelBound {
    #[serde(rename = "Cprime")]
    pub c_prime: f64,
    pub nu: f64,
    pub tau: f64,
}

impl HeatKernelBound {
    pub fn new(c_prime: f64, nu: f64, tau: f64) -> Result<Self> {
        let b = HeatKernelBound { c_prime, nu, tau };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 2.0) {
            return Err(Error::InvalidParameter(format!("nu = {} must exceed 2", self.nu)));
        }
        if !(self.c_prime >= 0.0) {
            return Err(Error::InvalidParameter("Cprime must be nonnegative".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidParameter("tau must be positive".into()));
        }
        Ok(())
    }

    pub fn phi(&self, xi: f64, r: f64) -> f64 {
        self.c_prime * xi.powf(-(1.0 + self.nu)) * (-r * r / (4.0 * xi)).exp()
    }

    /// `argmax_ξ φ(ξ, r) = r² / (4(1 + ν))`.
    pub fn ridge(&self, r: f64) -> f64 {
        r * r / (4.0 * (1.0 + self.nu))
    }

    /// `sup { φ(ξ, r) : ξ ∈ (0, λ], r ∈ (eps, diameter] }`, zero on an empty range.
    pub fn sup_phi(&self, lambda: f64, eps: f64, diameter: f64) -> f64 {
        if eps >= diameter || lambda <= 0.0 {
            return 0.0;
        }
        // decreasing in r; in ξ increasing up to the ridge, decreasing after
        self.phi(lambda.min(self.ridge(eps)), eps)
    }
}

/// A cycle graph approximating a circle of circumference `L`.
///
/// Node `k` sits at arc length `k h`, `h = L / n`, and carries measure `h`.
/// Edge `k` joins nodes `k` and `k + 1` with conductance `a_k / h`, where the
/// profile `a_k` lies in `[1/Λ, Λ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CircleModel {
    circumference: f64,
    profile: Vec<f64>,
    band: f64,
    space: SpaceRef,
}

impl CircleModel {
    pub fn uniform(circumference: f64, nodes: usize) -> Result<Self> {
        Self::elliptic(circumference, vec![1.0; nodes], 1.0)
    }

    pub fn elliptic(circumference: f64, profile: Vec<f64>, band: f64) -> Result<Self> {
        if !(band >= 1.0) {
            return Err(Error::InvalidParameter("Lambda must be at least 1".into()));
        }
        if profile.len() < 3 {
            return Err(Error::InvalidParameter("a circle model needs at least 3 nodes".into()));
        }
        let tol = 1e-12;
        if let Some((k, a)) = profile
            .iter()
            .enumerate()
            .find(|(_, &a)| !(a >= 1.0 / band - tol && a <= band + tol))
        {
            return Err(Error::BandViolation(format!(
                "edge {k} has profile {a} outside [{}, {band}]",
                1.0 / band
            )));
        }
        let space = Arc::new(FiniteMetricSpace::cycle(profile.len(), circumference)?);
        Ok(CircleModel {
            circumference,
            profile,
            band,
            space,
        })
    }

    /// Profile `Λ^{sin(2πk/n)}`, which spans the band.
    pub fn sinusoidal(circumference: f64, nodes: usize, band: f64) -> Result<Self> {
        let profile = (0..nodes)
            .map(|k| band.powf((2.0 * PI * k as f64 / nodes as f64).sin()))
            .collect();
        Self::elliptic(circumference, profile, band)
    }

    /// The same model with every conductance multiplied by `factor`.
    pub fn scaled_profile(&self, factor: f64, band: f64) -> Result<Self> {
        Self::elliptic(
            self.circumference,
            self.profile.iter().map(|a| a * factor).collect(),
            band,
        )
    }

    pub fn nodes(&self) -> usize {
        self.profile.len()
    }

    pub fn circumference(&self) -> f64 {
        self.circumference
    }

    pub fn spacing(&self) -> f64 {
        self.circumference / self.nodes() as f64
    }

    pub fn profile(&self) -> &[f64] {
        &self.profile
    }

    pub fn band(&self) -> f64 {
        self.band
    }

    pub fn space(&self) -> &SpaceRef {
        &self.space
    }

    /// Conductance of edge `k` (between `k` and `k + 1`).
    pub fn conductance(&self, k: usize) -> f64 {
        self.profile[k] / self.spacing()
    }

    /// Node nearest to arc length `x`, ties toward the lower index.
    pub fn snap(&self, x: f64) -> usize {
        let n = self.nodes();
        let h = self.spacing();
        let u = x.rem_euclid(self.circumference) / h;
        let lo = u.floor();
        let k = if u - lo <= 0.5 { lo as usize } else { lo as usize + 1 };
        // past the last node, or tied between n - 1 and 0: node 0
        if k >= n || (k == n - 1 && u - lo == 0.5) {
            0
        } else {
            k
        }
    }
}

/// `Σ_m (2πt)^{−1/2} exp(−(d + mL)² / 2t)` for the signed displacement `d = y − x`.
pub fn wrapped_heat_kernel(t: f64, x: f64, y: f64, circumference: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!("time {t} must be positive")));
    }
    if !(circumference > 0.0) {
        return Err(Error::InvalidParameter("circumference must be positive".into()));
    }
    // reduce to the symmetric representative so p(t,x,y) = p(t,y,x) exactly
    let d = (y - x).rem_euclid(circumference);
    let d = d.min(circumference - d);
    let norm = (2.0 * PI * t).sqrt().recip();
    let term = |m: i64| norm * (-(d + m as f64 * circumference).powi(2) / (2.0 * t)).exp();
    let mut sum = term(0);
    let mut m = 1;
    loop {
        let (a, b) = (term(m), term(-m));
        sum += a + b;
        if a < 1e-16 && b < 1e-16 {
            break;
        }
        m += 1;
    }
    Ok(sum)
}

/// Where sampled paths start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialLaw {
    /// The normalized node measure.
    #[default]
    Stationary,
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::io::SampleWire", into = "crate::io::SampleWire")]
pub struct PathSample {
    pub space: SpaceRef,
    pub grid: TimeGrid,
    pub paths: Vec<GridPath>,
}

impl PathSample {
    pub fn measure(&self) -> Result<GridPathMeasure> {
        GridPathMeasure::empirical(self.space.clone(), self.grid, self.paths.clone())
    }
}

fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

fn initial_node(model: &CircleModel, init: InitialLaw, rng: &mut ChaCha8Rng) -> Result<usize> {
    match init {
        // node measure is uniform on the cycle
        InitialLaw::Stationary => Ok(rng.gen_range(0..model.nodes())),
        InitialLaw::Node(k) if k < model.nodes() => Ok(k),
        InitialLaw::Node(k) => Err(Error::InvalidParameter(format!("initial node {k} out of range"))),
    }
}

/// Brownian motion on the circle observed at grid times and snapped to nodes.
///
/// Path `i` uses the ChaCha8 stream `(seed, i)`, so the sample does not depend
/// on the thread count.
pub fn sample_bm_paths(
    model: &CircleModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
    init: InitialLaw,
) -> Result<PathSample> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let sd = grid.dt().sqrt();
    let h = model.spacing();
    let paths = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let start = initial_node(model, init, &mut rng)?;
            let mut x = start as f64 * h;
            let mut values = Vec::with_capacity(grid.len());
            values.push(start);
            for _ in 0..grid.steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                x += sd * z;
                values.push(model.snap(x));
            }
            Ok(GridPath(values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSample {
        space: model.space().clone(),
        grid: *grid,
        paths,
    })
}

/// Continuous-time random walk generated by the model's Dirichlet form.
///
/// From node `k` the walk jumps to `k ± 1` at rate `c_edge / (2 h)`.
pub fn sample_elliptic_paths(
    model: &CircleModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
    init: InitialLaw,
) -> Result<PathSample> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let n = model.nodes();
    let h = model.spacing();
    let right: Vec<f64> = (0..n).map(|k| model.conductance(k) / (2.0 * h)).collect();
    let left: Vec<f64> = (0..n).map(|k| model.conductance((k + n - 1) % n) / (2.0 * h)).collect();
    let paths = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let mut node = initial_node(model, init, &mut rng)?;
            let mut values = Vec::with_capacity(grid.len());
            values.push(node);
            let mut t = 0.0;
            for k in 1..grid.len() {
                let until = grid.time(k);
                loop {
                    let rate = left[node] + right[node];
                    let wait: f64 = Exp::new(rate).expect("positive rate").sample(&mut rng);
                    if t + wait > until {
                        // memoryless: restart the clock at the observation time
                        t = until;
                        break;
                    }
                    t += wait;
                    node = if rng.gen::<f64>() * rate < right[node] {
                        (node + 1) % n
                    } else {
                        (node + n - 1) % n
                    };
                }
                values.push(node);
            }
            Ok(GridPath(values))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PathSample {
        space: model.space().clone(),
        grid: *grid,
        paths,
    })
}

/// Synchronously coupled Brownian paths on `C_n(L_src)` and `C_n(L_tgt)`.
///
/// Both copies start at the same node and are driven by the same Gaussian
/// increments; each is snapped to its own cycle.
pub fn sample_coupled_circle_paths(
    source: &CircleModel,
    target: &CircleModel,
    grid: &TimeGrid,
    count: usize,
    seed: u64,
) -> Result<Vec<(GridPath, GridPath)>> {
    if source.nodes() != target.nodes() {
        return Err(Error::InvalidParameter("coupled models need equal node counts".into()));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    let sd = grid.dt().sqrt();
    Ok((0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i as u64);
            let start = rng.gen_range(0..source.nodes());
            let mut xs = start as f64 * source.spacing();
            let mut xt = start as f64 * target.spacing();
            let mut vs = vec![start];
            let mut vt = vec![start];
            for _ in 0..grid.steps {
                let z: f64 = StandardNormal.sample(&mut rng);
                xs += sd * z;
                xt += sd * z;
                vs.push(source.snap(xs));
                vt.push(target.snap(xt));
            }
            (GridPath(vs), GridPath(vt))
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TightnessRow {
    pub lambda: f64,
    pub sup: f64,
}

/// `sup_{ξ ≤ λ, r ∈ (eps, D]} φ(ξ, r)` along the given λ values.
pub fn phi_tightness_limit(
    bound: &HeatKernelBound,
    eps: f64,
    diameter: f64,
    lambdas: &[f64],
) -> Result<Vec<TightnessRow>> {
    bound.validate()?;
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter("eps must be positive".into()));
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| TightnessRow {
            lambda,
            sup: bound.sup_phi(lambda, eps, diameter),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub pass: bool,
    /// Largest `p − φ` over the grid.
    pub max_violation: f64,
    /// Smallest `C′` for which the bound dominates on the grid.
    pub min_c_prime: f64,
    pub worst_time: f64,
    pub worst_distance: f64,
}

/// Compares the wrapped heat kernel with `φ` at every `(t, node distance)`.
pub fn kernel_domination_check(
    model: &CircleModel,
    bound: &HeatKernelBound,
    times: &[f64],
) -> Result<DominationReport> {
    bound.validate()?;
    if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter("times must be positive".into()));
    }
    let n = model.nodes();
    let h = model.spacing();
    let mut report = DominationReport {
        pass: true,
        max_violation: f64::NEG_INFINITY,
        min_c_prime: 0.0,
        worst_time: times[0],
        worst_distance: 0.0,
    };
    for &t in times {
        for k in 0..=n / 2 {
            let r = k as f64 * h;
            let p = wrapped_heat_kernel(t, 0.0, r, model.circumference())?;
            let phi = bound.phi(t, r);
            let need = p * t.powf(1.0 + bound.nu) * (r * r / (4.0 * t)).exp();
            report.min_c_prime = report.min_c_prime.max(need);
            if p - phi > report.max_violation {
                report.max_violation = p - phi;
                report.worst_time = t;
                report.worst_distance = r;
            }
        }
    }
    report.pass = report.max_violation <= 0.0;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModulusEstimate {
    pub exceed: u64,
    pub total: u64,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Fraction of paths whose displacement from time `t` exceeds `gamma` at some
/// grid time in `[t, t + lambda]`, with a Wilson 95% interval.
pub fn empirical_modulus(
    space: &FiniteMetricSpace,
    grid: &TimeGrid,
    paths: &[GridPath],
    t: f64,
    lambda: f64,
    gamma: f64,
) -> Result<ModulusEstimate> {
    let start = grid
        .index_of(t)
        .ok_or_else(|| Error::WindowOffGrid(format!("t = {t} is not a grid time")))?;
    if !(lambda >= 0.0) || t + lambda > grid.horizon * (1.0 + 1e-12) {
        return Err(Error::WindowOffGrid(format!(
            "window [{t}, {}] leaves [0, {}]",
            t + lambda,
            grid.horizon
        )));
    }
    let end = (start..grid.len())
        .take_while(|&k| grid.time(k) <= t + lambda + 1e-12 * grid.horizon)
        .last()
        .unwrap_or(start);
    let exceed = paths
        .par_iter()
        .filter(|p| {
            let v = p.values();
            let x = v[start];
            v[start..=end].iter().any(|&y| space.d(x, y) > gamma)
        })
        .count() as u64;
    let total = paths.len() as u64;
    let (ci_low, ci_high) = wilson_interval(exceed, total, Z95);
    Ok(ModulusEstimate {
        exceed,
        total,
        estimate: if total == 0 { 0.0 } else { exceed as f64 / total as f64 },
        ci_low,
        ci_high,
    })
}

/// `2 V′ sup_{ξ ≤ λ, r > γ/2} φ(ξ, r)`, with `r` clipped to the diameter bound.
pub fn modulus_bound(
    bound: &HeatKernelBound,
    params: &ManifoldFamilyParams,
    lambda: f64,
    gamma: f64,
) -> Result<f64> {
    bound.validate()?;
    if lambda > bound.tau {
        return Err(Error::InvalidParameter(format!(
            "lambda = {lambda} exceeds tau = {}",
            bound.tau
        )));
    }
    Ok(2.0 * params.v_prime * bound.sup_phi(lambda, gamma / 2.0, params.d))
}
