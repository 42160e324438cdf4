//! Finite metric spaces and bijections between them.
//!
//! Every bijection between finite spaces is bi-Lipschitz, so the Lipschitz
//! distance is a minimum over bijections and can be computed exactly:
//! exhaustively for small spaces and by branch-and-bound beyond that.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, VALIDATION_TOL};

/// A finite metric space: labelled points and a symmetric distance matrix.
///
/// The matrix is stored symmetrized (upper triangle wins) so that distance
/// lookups are exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "crate::io::SpaceWire", into = "crate::io::SpaceWire")]
pub struct FiniteMetricSpace {
    labels: Vec<String>,
    dist: Vec<f64>,
}

impl FiniteMetricSpace {
    /// Validates and builds a space from labels and a square distance matrix.
    pub fn new(labels: Vec<String>, dist: Vec<Vec<f64>>) -> Result<Self> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::InvalidSpace("space has no points".into()));
        }
        if dist.len() != n || dist.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpace(format!(
                "distance matrix must be {n}x{n}"
            )));
        }
        let mut flat = vec![0.0; n * n];
        for i in 0..n {
            if dist[i][i] != 0.0 {
                return Err(Error::InvalidSpace(format!(
                    "dist[{i}][{i}] = {} is not zero",
                    dist[i][i]
                )));
            }
            for j in (i + 1)..n {
                let (a, b) = (dist[i][j], dist[j][i]);
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidSpace(format!(
                        "dist[{i}][{j}] is not finite"
                    )));
                }
                if (a - b).abs() > VALIDATION_TOL {
                    return Err(Error::InvalidSpace(format!(
                        "asymmetric entries at ({i},{j}): {a} vs {b}"
                    )));
                }
                if a <= 0.0 {
                    return Err(Error::InvalidSpace(format!(
                        "dist[{i}][{j}] = {a} must be positive"
                    )));
                }
                flat[i * n + j] = a;
                flat[j * n + i] = a;
            }
        }
        let space = FiniteMetricSpace { labels, dist: flat };
        if let Some((i, j, k)) = space.triangle_violation() {
            return Err(Error::InvalidSpace(format!(
                "triangle inequality fails for ({i},{j},{k})"
            )));
        }
        Ok(space)
    }

    /// Builds a space with labels `0..n`.
    pub fn from_matrix(dist: Vec<Vec<f64>>) -> Result<Self> {
        let labels = (0..dist.len()).map(|i| i.to_string()).collect();
        Self::new(labels, dist)
    }

    /// Euclidean distances between points in the plane.
    pub fn euclidean(points: &[(f64, f64)]) -> Result<Self> {
        let dist = points
            .iter()
            .map(|&(x0, y0)| {
                points
                    .iter()
                    .map(|&(x1, y1)| (x1 - x0).hypot(y1 - y0))
                    .collect()
            })
            .collect();
        Self::from_matrix(dist)
    }

    /// The cycle graph `C_n` with shortest-path metric scaled so that the
    /// total length is `circumference`.
    pub fn cycle(n: usize, circumference: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSpace("cycle needs at least two nodes".into()));
        }
        if !(circumference > 0.0 && circumference.is_finite()) {
            return Err(Error::InvalidSpace("circumference must be positive".into()));
        }
        let h = circumference / n as f64;
        let dist = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let k = i.abs_diff(j);
                        k.min(n - k) as f64 * h
                    })
                    .collect()
            })
            .collect();
        Self::from_matrix(dist)
    }

    fn triangle_violation(&self) -> Option<(usize, usize, usize)> {
        let n = self.len();
        for i in 0..n {
            for j in 0..n {
                let dij = self.d(i, j);
                for k in 0..n {
                    if dij > self.d(i, k) + self.d(k, j) + VALIDATION_TOL {
                        return Some((i, j, k));
                    }
                }
            }
        }
        None
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.len();
        &self.dist[i * n..(i + 1) * n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// The same points with every distance multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "scale factor {factor} must be positive"
            )));
        }
        Self::new(
            self.labels.clone(),
            self.rows()
                .into_iter()
                .map(|r| r.into_iter().map(|d| d * factor).collect())
                .collect(),
        )
    }

    /// The subspace on `indices`, in the given order.
    pub fn subspace(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidSpace(format!("index {bad} out of range")));
        }
        let labels = indices.iter().map(|&i| self.labels[i].clone()).collect();
        let dist = indices
            .iter()
            .map(|&i| indices.iter().map(|&j| self.d(i, j)).collect())
            .collect();
        Self::new(labels, dist)
    }

    /// Sorted distances from `i` to every point, used to prefilter automorphisms.
    fn sorted_row(&self, i: usize) -> Vec<f64> {
        let mut r = self.row(i).to_vec();
        r.sort_by(f64::total_cmp);
        r
    }
}

/// A bijection `{0..n} -> {0..n}` given as the list of images.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Bijection(Vec<usize>);

impl Bijection {
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let n = images.len();
        let mut seen = vec![false; n];
        for &y in &images {
            if y >= n || std::mem::replace(&mut seen[y], true) {
                return Err(Error::InvalidMap(format!(
                    "assignment {images:?} is not a permutation of 0..{n}"
                )));
            }
        }
        Ok(Bijection(images))
    }

    pub fn identity(n: usize) -> Self {
        Bijection((0..n).collect())
    }

    /// Rotation `k -> k + shift (mod n)` of a cycle.
    pub fn rotation(n: usize, shift: usize) -> Self {
        Bijection((0..n).map(|k| (k + shift) % n).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    #[inline]
    pub fn apply(&self, x: usize) -> usize {
        self.0[x]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn inverse(&self) -> Bijection {
        let mut inv = vec![0; self.len()];
        for (x, &y) in self.0.iter().enumerate() {
            inv[y] = x;
        }
        Bijection(inv)
    }

    /// `then ∘ self`: apply `self` first.
    pub fn then(&self, then: &Bijection) -> Result<Bijection> {
        if self.len() != then.len() {
            return Err(Error::InvalidMap(format!(
                "cannot compose bijections of sizes {} and {}",
                self.len(),
                then.len()
            )));
        }
        Ok(Bijection(self.0.iter().map(|&y| then.0[y]).collect()))
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &y)| i == y)
    }
}

impl TryFrom<Vec<usize>> for Bijection {
    type Error = Error;
    fn try_from(v: Vec<usize>) -> Result<Self> {
        Bijection::new(v)
    }
}

impl From<Bijection> for Vec<usize> {
    fn from(b: Bijection) -> Self {
        b.0
    }
}

/// Forward and backward dilations of a bijection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dilations {
    /// `dil(f)`: largest ratio `d(f x, f y) / d(x, y)`.
    pub forward: f64,
    /// `dil(f⁻¹)`: largest ratio `d(x, y) / d(f x, f y)`.
    pub backward: f64,
}

impl Dilations {
    /// `|log dil f| + |log dil f⁻¹|`.
    pub fn defect(&self) -> f64 {
        self.forward.ln().abs() + self.backward.ln().abs()
    }
}

/// A bijection between two finite metric spaces.
#[derive(Debug, Clone)]
pub struct MetricMap<'a> {
    source: &'a FiniteMetricSpace,
    target: &'a FiniteMetricSpace,
    assignment: Bijection,
}

impl<'a> MetricMap<'a> {
    pub fn new(
        source: &'a FiniteMetricSpace,
        target: &'a FiniteMetricSpace,
        assignment: Bijection,
    ) -> Result<Self> {
        if source.len() != target.len() || assignment.len() != source.len() {
            return Err(Error::InvalidMap(format!(
                "bijection of size {} between spaces of sizes {} and {}",
                assignment.len(),
                source.len(),
                target.len()
            )));
        }
        Ok(MetricMap {
            source,
            target,
            assignment,
        })
    }

    pub fn identity(space: &'a FiniteMetricSpace) -> Self {
        MetricMap {
            source: space,
            target: space,
            assignment: Bijection::identity(space.len()),
        }
    }

    pub fn source(&self) -> &'a FiniteMetricSpace {
        self.source
    }

    pub fn target(&self) -> &'a FiniteMetricSpace {
        self.target
    }

    pub fn assignment(&self) -> &Bijection {
        &self.assignment
    }

    #[inline]
    pub fn apply(&self, x: usize) -> usize {
        self.assignment.apply(x)
    }

    pub fn inverse(&self) -> MetricMap<'a> {
        MetricMap {
            source: self.target,
            target: self.source,
            assignment: self.assignment.inverse(),
        }
    }

    /// `g ∘ self`.
    pub fn then(&self, g: &MetricMap<'a>) -> Result<MetricMap<'a>> {
        if self.target != g.source {
            return Err(Error::InvalidMap(
                "target of the first map is not the source of the second".into(),
            ));
        }
        Ok(MetricMap {
            source: self.source,
            target: g.target,
            assignment: self.assignment.then(&g.assignment)?,
        })
    }

    pub fn dilations(&self) -> Result<Dilations> {
        let n = self.source.len();
        if n < 2 {
            return Err(Error::DilationUndefined);
        }
        let mut forward: f64 = 0.0;
        let mut backward: f64 = 0.0;
        for x in 0..n {
            for y in (x + 1)..n {
                let dx = self.source.d(x, y);
                let dy = self.target.d(self.apply(x), self.apply(y));
                forward = forward.max(dy / dx);
                backward = backward.max(dx / dy);
            }
        }
        Ok(Dilations { forward, backward })
    }

    /// The smallest Lipschitz constant of the map.
    pub fn dilation(&self) -> Result<f64> {
        Ok(self.dilations()?.forward)
    }

    /// `|log dil f| + |log dil f⁻¹|`; the map is an ε-isometry iff this is ≤ ε.
    pub fn isometry_defect(&self) -> Result<f64> {
        Ok(self.dilations()?.defect())
    }
}

/// How [`lipschitz_distance`] found its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMethod {
    Exhaustive,
    BranchAndBound,
    /// Different cardinalities: no bijection exists.
    Cardinality,
    /// Fewer than two points: every bijection is trivially an isometry.
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchOptions {
    /// Worker threads; `0` means the rayon default.
    pub jobs: usize,
    /// Largest size searched exhaustively.
    pub exhaustive_limit: usize,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            jobs: 0,
            exhaustive_limit: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LipschitzDistance {
    /// `f64::INFINITY` when no bijection exists.
    pub value: f64,
    pub witness: Option<Bijection>,
    pub method: SearchMethod,
}

/// Exact Lipschitz distance: the minimum isometry defect over all bijections.
///
/// Ties are broken by lexicographic order of the assignment, so the witness
/// does not depend on `opts.jobs`.
pub fn lipschitz_distance(
    x: &FiniteMetricSpace,
    y: &FiniteMetricSpace,
    opts: SearchOptions,
) -> LipschitzDistance {
    if x.len() != y.len() {
        return LipschitzDistance {
            value: f64::INFINITY,
            witness: None,
            method: SearchMethod::Cardinality,
        };
    }
    if x.len() < 2 {
        return LipschitzDistance {
            value: 0.0,
            witness: Some(Bijection::identity(x.len())),
            method: SearchMethod::Trivial,
        };
    }
    if x.len() <= opts.exhaustive_limit {
        let (value, witness) = run_with_jobs(opts.jobs, || search(x, y, false));
        LipschitzDistance {
            value,
            witness: Some(witness),
            method: SearchMethod::Exhaustive,
        }
    } else {
        let (value, witness) = run_with_jobs(opts.jobs, || search(x, y, true));
        LipschitzDistance {
            value,
            witness: Some(witness),
            method: SearchMethod::BranchAndBound,
        }
    }
}

/// Exhaustive search regardless of size.
pub fn lipschitz_distance_exhaustive(
    x: &FiniteMetricSpace,
    y: &FiniteMetricSpace,
) -> Result<(f64, Bijection)> {
    check_search_sizes(x, y)?;
    Ok(search(x, y, false))
}

/// Branch-and-bound search regardless of size.
pub fn lipschitz_distance_branch_and_bound(
    x: &FiniteMetricSpace,
    y: &FiniteMetricSpace,
) -> Result<(f64, Bijection)> {
    check_search_sizes(x, y)?;
    Ok(search(x, y, true))
}

fn check_search_sizes(x: &FiniteMetricSpace, y: &FiniteMetricSpace) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::InvalidMap("spaces differ in cardinality".into()));
    }
    if x.len() < 2 {
        return Err(Error::DilationUndefined);
    }
    Ok(())
}

pub(crate) fn run_with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    if jobs == 0 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Depth-first search over assignments `0 -> a0, 1 -> a1, ...` in
/// lexicographic order, split on the image of point 0.
fn search(x: &FiniteMetricSpace, y: &FiniteMetricSpace, prune: bool) -> (f64, Bijection) {
    let n = x.len();
    let incumbent = AtomicU64::new(f64::INFINITY.to_bits());
    let best = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut state = SearchState {
                x,
                y,
                prune,
                incumbent: &incumbent,
                assignment: vec![first],
                used: {
                    let mut u = vec![false; n];
                    u[first] = true;
                    u
                },
                best_value: f64::INFINITY,
                best: Vec::new(),
            };
            state.descend(0.0, 0.0);
            (state.best_value, state.best)
        })
        .filter(|(_, a)| !a.is_empty())
        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
        .expect("at least one complete assignment");
    (best.0, Bijection(best.1))
}

struct SearchState<'s> {
    x: &'s FiniteMetricSpace,
    y: &'s FiniteMetricSpace,
    prune: bool,
    incumbent: &'s AtomicU64,
    assignment: Vec<usize>,
    used: Vec<bool>,
    best_value: f64,
    best: Vec<usize>,
}

impl SearchState<'_> {
    /// `forward`/`backward` are the partial dilations over assigned pairs.
    fn descend(&mut self, forward: f64, backward: f64) {
        let k = self.assignment.len();
        let n = self.x.len();
        if k == n {
            let value = Dilations { forward, backward }.defect();
            if value < self.best_value {
                self.best_value = value;
                self.best = self.assignment.clone();
                let bits = value.to_bits();
                self.incumbent.fetch_min(bits, Ordering::Relaxed);
            }
            return;
        }
        for t in 0..n {
            if self.used[t] {
                continue;
            }
            let mut fw = forward;
            let mut bw = backward;
            for (j, &aj) in self.assignment.iter().enumerate() {
                let dx = self.x.d(j, k);
                let dy = self.y.d(aj, t);
                fw = fw.max(dy / dx);
                bw = bw.max(dx / dy);
            }
            if self.prune {
                // Any completion has dilations at least fw and bw, hence a
                // defect of at least ln⁺ fw + ln⁺ bw.
                let bound = fw.ln().max(0.0) + bw.ln().max(0.0);
                let global = f64::from_bits(self.incumbent.load(Ordering::Relaxed));
                if bound > global.min(self.best_value) {
                    continue;
                }
            }
            self.used[t] = true;
            self.assignment.push(t);
            self.descend(fw, bw);
            self.assignment.pop();
            self.used[t] = false;
        }
    }
}

/// All distance-preserving bijections of `x` onto itself, in lexicographic order.
pub fn self_isometries(x: &FiniteMetricSpace) -> Vec<Bijection> {
    let n = x.len();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| x.sorted_row(i)).collect();
    let compatible: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&t| rows[i] == rows[t]).collect())
        .collect();
    let mut out = Vec::new();
    let mut assignment = Vec::with_capacity(n);
    let mut used = vec![false; n];
    backtrack_isometries(x, &compatible, &mut assignment, &mut used, &mut out);
    out
}

fn backtrack_isometries(
    x: &FiniteMetricSpace,
    compatible: &[Vec<usize>],
    assignment: &mut Vec<usize>,
    used: &mut [bool],
    out: &mut Vec<Bijection>,
) {
    let k = assignment.len();
    if k == x.len() {
        out.push(Bijection(assignment.clone()));
        return;
    }
    for &t in &compatible[k] {
        if used[t] {
            continue;
        }
        let preserves = assignment
            .iter()
            .enumerate()
            .all(|(j, &aj)| x.d(j, k) == x.d(aj, t));
        if !preserves {
            continue;
        }
        used[t] = true;
        assignment.push(t);
        backtrack_isometries(x, compatible, assignment, used, out);
        assignment.pop();
        used[t] = false;
    }
}

/// A finite Lipschitz-Cauchy sequence `X_1 -> X_2 -> ... -> X_N` with declared
/// link defects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyInput {
    pub spaces: Vec<FiniteMetricSpace>,
    /// `links[l]` maps `spaces[l]` onto `spaces[l + 1]`.
    pub links: Vec<Bijection>,
    /// Declared upper bounds on the link defects.
    pub defects: Vec<f64>,
    /// Declared bound on the total defect of links beyond the last space.
    #[serde(default)]
    pub tail: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyLimit {
    /// The limit space; its points are the points of the first space.
    pub limit: FiniteMetricSpace,
    /// `maps[i]` sends `spaces[i]` onto the limit.
    pub maps: Vec<Bijection>,
    /// Reported defects `ε_i = Σ_{l ≥ i} defects[l] + tail`.
    pub eps: Vec<f64>,
    /// Actual isometry defects of `maps[i]`; each is at most `eps[i]`.
    pub measured: Vec<f64>,
    /// Index of the space whose distances approximate the limit.
    pub truncation: usize,
    /// True limit distances lie within a factor `exp(±tail)` of the reported ones.
    pub relative_error: f64,
}

/// Builds the limit of a finite Lipschitz-Cauchy sequence.
///
/// The composed maps `f̃_{1j}` carry the points of `X_1` forward; the limit
/// distance between points `α, β` is read off the last space, and
/// `maps[j] ∘ f̃_{ij} = maps[i]` holds exactly as permutations.
pub fn cauchy_limit(input: &CauchyInput) -> Result<CauchyLimit> {
    let spaces = &input.spaces;
    if spaces.is_empty() {
        return Err(Error::InvalidCauchy("no spaces supplied".into()));
    }
    if input.links.len() + 1 != spaces.len() || input.defects.len() != input.links.len() {
        return Err(Error::InvalidCauchy(format!(
            "{} spaces need {} links and defects, got {} and {}",
            spaces.len(),
            spaces.len() - 1,
            input.links.len(),
            input.defects.len()
        )));
    }
    if !(input.tail >= 0.0 && input.tail.is_finite()) {
        return Err(Error::InvalidCauchy("tail bound must be finite and nonnegative".into()));
    }
    let n = spaces[0].len();
    for (l, link) in input.links.iter().enumerate() {
        if spaces[l + 1].len() != n || link.len() != n {
            return Err(Error::InvalidCauchy(format!(
                "link {l} does not compose: sizes {} -> {}",
                spaces[l].len(),
                spaces[l + 1].len()
            )));
        }
        let declared = input.defects[l];
        if !(declared >= 0.0 && declared.is_finite()) {
            return Err(Error::InvalidCauchy(format!("defect {l} is not a finite nonnegative number")));
        }
        if n >= 2 {
            let actual = MetricMap::new(&spaces[l], &spaces[l + 1], link.clone())?.isometry_defect()?;
            if actual > declared + VALIDATION_TOL {
                return Err(Error::InvalidCauchy(format!(
                    "link {l} has defect {actual} above its declared {declared}"
                )));
            }
        }
    }

    // composed[j] = f̃_{1j}: X_1 -> X_j
    let mut composed = vec![Bijection::identity(n)];
    for link in &input.links {
        let next = composed.last().expect("nonempty").then(link)?;
        composed.push(next);
    }
    let last = spaces.len() - 1;
    let to_last = &composed[last];
    let dist = (0..n)
        .map(|a| {
            (0..n)
                .map(|b| spaces[last].d(to_last.apply(a), to_last.apply(b)))
                .collect()
        })
        .collect();
    let limit = FiniteMetricSpace::new(spaces[0].labels().to_vec(), dist)?;

    let maps: Vec<Bijection> = composed.iter().map(Bijection::inverse).collect();
    let mut eps = vec![input.tail; spaces.len()];
    for i in (0..last).rev() {
        eps[i] = eps[i + 1] + input.defects[i];
    }
    let measured = maps
        .iter()
        .zip(spaces)
        .map(|(f, x)| {
            if n < 2 {
                Ok(0.0)
            } else {
                MetricMap::new(x, &limit, f.clone())?.isometry_defect()
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CauchyLimit {
        limit,
        maps,
        eps,
        measured,
        truncation: last,
        relative_error: input.tail.exp() - 1.0,
    })
}

/// Shared handle used by path measures.
pub type SpaceRef = Arc<FiniteMetricSpace>;
