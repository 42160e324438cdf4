//! Graph Dirichlet forms, their semigroups and resolvents, transfer of
//! functions along near-isometries, and Mosco / finite-dimensional
//! distribution convergence checks.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::diffusion::CircleModel;
use crate::lp::ls_slope;
use crate::metric::{Bijection, FiniteMetricSpace, MetricMap, SpaceRef};
use crate::{Error, Result};

/// Largest form handled by dense eigendecomposition.
pub const DENSE_LIMIT: usize = 2048;

/// Relative residual accepted from resolvent solves.
pub const RESOLVENT_TOL: f64 = 1e-10;

/// Whether energies and inner products are divided by the total measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnergyConvention {
    #[default]
    Raw,
    Normalized,
}

struct Spectral {
    /// Eigenvalues of `S = M^{-1/2} (L/2) M^{-1/2}`, ascending.
    values: DVector<f64>,
    /// Orthonormal eigenvectors of `S`, one per column.
    vectors: DMatrix<f64>,
}

/// `E(u) = ½ Σ_{edges} w_xy (u_x − u_y)²` on a weighted graph with node measure `μ`.
///
/// The generator is `A = ½ M⁻¹ L` with `L` the weighted graph Laplacian and
/// `M = diag(μ)`; it is self-adjoint in `L²(μ)` and `E(u) = ⟨Au, u⟩` under
/// either convention.
pub struct GraphDirichletForm {
    space: SpaceRef,
    edges: Vec<(usize, usize, f64)>,
    measure: Vec<f64>,
    convention: EnergyConvention,
    spectral: OnceLock<Spectral>,
}

impl std::fmt::Debug for GraphDirichletForm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GraphDirichletForm")
            .field("nodes", &self.len())
            .field("edges", &self.edges.len())
            .field("convention", &self.convention)
            .finish()
    }
}

impl Clone for GraphDirichletForm {
    fn clone(&self) -> Self {
        GraphDirichletForm {
            space: self.space.clone(),
            edges: self.edges.clone(),
            measure: self.measure.clone(),
            convention: self.convention,
            spectral: OnceLock::new(),
        }
    }
}

impl GraphDirichletForm {
    pub fn new(
        space: SpaceRef,
        edges: Vec<(usize, usize, f64)>,
        measure: Vec<f64>,
        convention: EnergyConvention,
    ) -> Result<Self> {
        let n = space.len();
        if measure.len() != n {
            return Err(Error::InvalidMeasure(format!(
                "{} node weights for {n} nodes",
                measure.len()
            )));
        }
        if let Some((k, m)) = measure.iter().enumerate().find(|(_, &m)| !(m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidMeasure(format!("node {k} has measure {m}")));
        }
        let mut canon = Vec::with_capacity(edges.len());
        for (x, y, w) in edges {
            if x >= n || y >= n || x == y {
                return Err(Error::InvalidParameter(format!("bad edge ({x}, {y})")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("edge ({x}, {y}) has weight {w}")));
            }
            canon.push((x.min(y), x.max(y), w));
        }
        canon.sort_by_key(|e| (e.0, e.1));
        if canon.windows(2).any(|p| (p[0].0, p[0].1) == (p[1].0, p[1].1)) {
            return Err(Error::InvalidParameter("repeated edge".into()));
        }
        Ok(GraphDirichletForm {
            space,
            edges: canon,
            measure,
            convention,
            spectral: OnceLock::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    pub fn space(&self) -> &SpaceRef {
        &self.space
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn convention(&self) -> EnergyConvention {
        self.convention
    }

    pub fn total_measure(&self) -> f64 {
        self.measure.iter().sum()
    }

    pub fn with_convention(&self, convention: EnergyConvention) -> Self {
        GraphDirichletForm {
            convention,
            ..self.clone()
        }
    }

    fn scale(&self) -> f64 {
        match self.convention {
            EnergyConvention::Raw => 1.0,
            EnergyConvention::Normalized => 1.0 / self.total_measure(),
        }
    }

    fn check_len(&self, u: &[f64]) -> Result<()> {
        if u.len() != self.len() {
            return Err(Error::InvalidParameter(format!(
                "function has {} values, form has {} nodes",
                u.len(),
                self.len()
            )));
        }
        Ok(())
    }

    pub fn energy(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        let raw: f64 = self
            .edges
            .iter()
            .map(|&(x, y, w)| 0.5 * w * (u[x] - u[y]).powi(2))
            .sum();
        Ok(raw * self.scale())
    }

    pub fn inner(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        let raw: f64 = u
            .iter()
            .zip(v)
            .zip(&self.measure)
            .map(|((a, b), m)| a * b * m)
            .sum();
        Ok(raw * self.scale())
    }

    pub fn norm(&self, u: &[f64]) -> Result<f64> {
        Ok(self.inner(u, u)?.sqrt())
    }

    /// `Au = ½ M⁻¹ L u`.
    pub fn generator_apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut lu = vec![0.0; self.len()];
        for &(x, y, w) in &self.edges {
            let d = w * (u[x] - u[y]);
            lu[x] += d;
            lu[y] -= d;
        }
        Ok(lu
            .into_iter()
            .zip(&self.measure)
            .map(|(l, m)| 0.5 * l / m)
            .collect())
    }

    fn spectral(&self) -> Result<&Spectral> {
        if self.len() > DENSE_LIMIT {
            return Err(Error::SizeLimit {
                size: self.len(),
                limit: DENSE_LIMIT,
            });
        }
        Ok(self.spectral.get_or_init(|| {
            let n = self.len();
            let mut s = DMatrix::<f64>::zeros(n, n);
            for &(x, y, w) in &self.edges {
                let off = -0.5 * w / (self.measure[x] * self.measure[y]).sqrt();
                s[(x, y)] += off;
                s[(y, x)] += off;
                s[(x, x)] += 0.5 * w / self.measure[x];
                s[(y, y)] += 0.5 * w / self.measure[y];
            }
            let eig = SymmetricEigen::new(s);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
            let values = DVector::from_iterator(n, order.iter().map(|&k| eig.eigenvalues[k].max(0.0)));
            let vectors = DMatrix::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
            Spectral { values, vectors }
        }))
    }

    /// Eigenvalues of the generator, ascending.
    pub fn spectrum(&self) -> Result<Vec<f64>> {
        Ok(self.spectral()?.values.iter().copied().collect())
    }

    /// `M^{-1/2} V g(Λ) Vᵀ M^{1/2} u`.
    fn spectral_apply(&self, u: &[f64], g: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let sp = self.spectral()?;
        let x = DVector::from_iterator(
            self.len(),
            u.iter().zip(&self.measure).map(|(a, m)| a * m.sqrt()),
        );
        let mut c = sp.vectors.tr_mul(&x);
        for (ck, &lam) in c.iter_mut().zip(sp.values.iter()) {
            *ck *= g(lam);
        }
        let y = &sp.vectors * c;
        Ok(y.iter().zip(&self.measure).map(|(a, m)| a / m.sqrt()).collect())
    }

    /// `G(α) u = (α + A)⁻¹ u`, with the residual checked against [`RESOLVENT_TOL`].
    pub fn resolvent_apply(&self, alpha: f64, u: &[f64]) -> Result<Vec<f64>> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha = {alpha} must be positive")));
        }
        if let Some(c) = constant_value(u) {
            self.check_len(u)?;
            return Ok(vec![c / alpha; u.len()]);
        }
        let v = self.spectral_apply(u, |lam| 1.0 / (alpha + lam))?;
        let av = self.generator_apply(&v)?;
        let residual: Vec<f64> = av
            .iter()
            .zip(&v)
            .zip(u)
            .map(|((a, vv), uu)| alpha * vv + a - uu)
            .collect();
        let (r, un) = (self.norm(&residual)?, self.norm(u)?);
        if r > RESOLVENT_TOL * un.max(f64::MIN_POSITIVE) && r > 0.0 {
            return Err(Error::Precondition(format!(
                "resolvent residual {r:e} exceeds {RESOLVENT_TOL:e} relative to {un:e}"
            )));
        }
        Ok(v)
    }

    /// `T(t) u = exp(−tA) u`.
    pub fn semigroup_apply(&self, t: f64, u: &[f64]) -> Result<Vec<f64>> {
        if !(t >= 0.0) {
            return Err(Error::InvalidParameter(format!("time {t} must be nonnegative")));
        }
        if t == 0.0 || constant_value(u).is_some() {
            self.check_len(u)?;
            return Ok(u.to_vec());
        }
        self.spectral_apply(u, |lam| (-t * lam).exp())
    }

    /// Mean of `u` under the normalized node measure.
    pub fn mean(&self, u: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        Ok(u.iter().zip(&self.measure).map(|(a, m)| a * m).sum::<f64>() / self.total_measure())
    }
}

// A kills constants, so both operators act on them exactly.
fn constant_value(u: &[f64]) -> Option<f64> {
    let c = *u.first()?;
    u.iter().all(|&x| x == c).then_some(c)
}

/// The form of a circle model: edge `k` has the model's conductance, every
/// node carries measure `h`.
pub fn circle_form(model: &CircleModel, convention: EnergyConvention) -> Result<GraphDirichletForm> {
    let n = model.nodes();
    let edges = (0..n).map(|k| (k, (k + 1) % n, model.conductance(k))).collect();
    GraphDirichletForm::new(model.space().clone(), edges, vec![model.spacing(); n], convention)
}

/// `cos(2π j k / n)` at the nodes of an `n`-cycle.
pub fn fourier_mode(nodes: usize, j: usize) -> Vec<f64> {
    (0..nodes)
        .map(|k| (2.0 * std::f64::consts::PI * (j * k) as f64 / nodes as f64).cos())
        .collect()
}

/// Moves functions between a source form and a subset of target nodes.
///
/// Source node `k` corresponds to target node `target_indices[k]`. Norms of
/// transferred functions use `cells[k]`: the target measure of the target
/// nodes whose nearest matched node is `target_indices[k]`; a target node
/// equidistant from several matched nodes splits its mass evenly. When every target node is matched this is the target measure
/// itself and push/pull are the usual `u ∘ f⁻¹` and `u ∘ f`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferMap {
    target_indices: Vec<usize>,
    cells: Vec<f64>,
    target_len: usize,
    target_total: f64,
    defect: f64,
    convention: EnergyConvention,
}

impl TransferMap {
    /// A bijection between equal-size forms.
    pub fn bijection(
        source: &GraphDirichletForm,
        target: &GraphDirichletForm,
        f: &Bijection,
    ) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::InvalidMap("bijective transfer needs equal node counts".into()));
        }
        Self::matched_subset(source, target, f.as_slice().to_vec())
    }

    /// Source nodes matched to distinct target nodes.
    pub fn matched_subset(
        source: &GraphDirichletForm,
        target: &GraphDirichletForm,
        target_indices: Vec<usize>,
    ) -> Result<Self> {
        if target_indices.len() != source.len() {
            return Err(Error::InvalidMap(format!(
                "{} matched nodes for a source of {}",
                target_indices.len(),
                source.len()
            )));
        }
        let mut seen = vec![false; target.len()];
        for &y in &target_indices {
            if y >= target.len() || std::mem::replace(&mut seen[y], true) {
                return Err(Error::InvalidMap(format!("target node {y} repeated or out of range")));
            }
        }
        let sub = target.space().subspace(&target_indices)?;
        let defect = if source.len() < 2 {
            0.0
        } else {
            MetricMap::new(source.space(), &sub, Bijection::identity(source.len()))?.isometry_defect()?
        };
        let tspace: &FiniteMetricSpace = target.space();
        let mut cells = vec![0.0; source.len()];
        let mut nearest = Vec::new();
        for (y, &m) in target.measure().iter().enumerate() {
            let row = tspace.row(y);
            let closest = target_indices.iter().map(|&t| row[t]).fold(f64::INFINITY, f64::min);
            nearest.clear();
            nearest.extend((0..target_indices.len()).filter(|&k| row[target_indices[k]] == closest));
            let share = m / nearest.len() as f64;
            for &k in &nearest {
                cells[k] += share;
            }
        }
        Ok(TransferMap {
            target_indices,
            cells,
            target_len: target.len(),
            target_total: target.total_measure(),
            defect,
            convention: target.convention(),
        })
    }

    /// Refinement of `C_n` into `C_N` along `k -> k N / n`.
    pub fn circle_refinement(source: &GraphDirichletForm, target: &GraphDirichletForm) -> Result<Self> {
        let (n, big) = (source.len(), target.len());
        if n == 0 || big % n != 0 {
            return Err(Error::InvalidMap(format!("{n} does not divide {big}")));
        }
        Self::matched_subset(source, target, (0..n).map(|k| k * (big / n)).collect())
    }

    pub fn defect(&self) -> f64 {
        self.defect
    }

    pub fn target_indices(&self) -> &[usize] {
        &self.target_indices
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn target_len(&self) -> usize {
        self.target_len
    }

    pub fn is_bijective(&self) -> bool {
        self.target_indices.len() == self.target_len
    }

    /// `f_* u`, listed in matched order (entry `k` lives at `target_indices[k]`).
    pub fn push_function(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.target_indices.len() {
            return Err(Error::InvalidParameter("function size differs from the source".into()));
        }
        Ok(u.to_vec())
    }

    /// `f^* g = g ∘ f`.
    pub fn pull_function(&self, g: &[f64]) -> Result<Vec<f64>> {
        if g.len() != self.target_len {
            return Err(Error::InvalidParameter("function size differs from the target".into()));
        }
        Ok(self.target_indices.iter().map(|&y| g[y]).collect())
    }

    /// A pushed function laid out over all target nodes (bijective maps only).
    pub fn to_target_order(&self, pushed: &[f64]) -> Result<Vec<f64>> {
        if !self.is_bijective() {
            return Err(Error::InvalidMap("matched subset does not cover the target".into()));
        }
        let mut out = vec![0.0; self.target_len];
        for (k, &y) in self.target_indices.iter().enumerate() {
            out[y] = pushed[k];
        }
        Ok(out)
    }

    /// Target-side `L²` norm of a pushed function.
    pub fn norm(&self, pushed: &[f64]) -> f64 {
        let scale = match self.convention {
            EnergyConvention::Raw => 1.0,
            EnergyConvention::Normalized => 1.0 / self.target_total,
        };
        (pushed
            .iter()
            .zip(&self.cells)
            .map(|(w, c)| w * w * c)
            .sum::<f64>()
            * scale)
            .sqrt()
    }

    /// `‖pushed − g‖` on the matched nodes.
    pub fn distance(&self, pushed: &[f64], g: &[f64]) -> Result<f64> {
        let restricted = self.pull_function(g)?;
        let diff: Vec<f64> = pushed.iter().zip(&restricted).map(|(a, b)| a - b).collect();
        Ok(self.norm(&diff))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub pass: bool,
    /// `max_k |ln(μ_source(k) / cell(k))|`.
    pub max_log_ratio: f64,
    /// `n ε`.
    pub bound: f64,
    /// Source node with the largest ratio.
    pub worst_node: usize,
}

/// `e^{−nε} ≤ d(f_* μ_source)/dμ_target ≤ e^{nε}` on the matched nodes.
pub fn volume_comparison_check(
    tm: &TransferMap,
    source_measure: &[f64],
    dimension: u32,
) -> Result<VolumeReport> {
    if source_measure.len() != tm.cells.len() {
        return Err(Error::InvalidMeasure("measure size differs from the source".into()));
    }
    let mut worst = (0.0, 0);
    for (k, (&m, &c)) in source_measure.iter().zip(&tm.cells).enumerate() {
        if !(m > 0.0) || !(c > 0.0) {
            return Err(Error::InvalidMeasure(format!("node {k} has zero mass")));
        }
        let r = (m / c).ln().abs();
        if r > worst.0 {
            worst = (r, k);
        }
    }
    let bound = dimension as f64 * tm.defect;
    Ok(VolumeReport {
        pass: worst.0 <= bound,
        max_log_ratio: worst.0,
        bound,
        worst_node: worst.1,
    })
}

/// `‖f_* ∘ T(t)‖` from `L²(μ_source)` to the cell-weighted target space (raw measures).
pub fn push_semigroup_operator_norm(
    form: &GraphDirichletForm,
    tm: &TransferMap,
    t: f64,
) -> Result<f64> {
    if tm.cells.len() != form.len() {
        return Err(Error::InvalidMap("transfer map does not start at this form".into()));
    }
    let sp = form.spectral()?;
    let n = form.len();
    let decay = DVector::from_iterator(n, sp.values.iter().map(|&l| (-t * l).exp()));
    // B = D V e^{-tΛ} Vᵀ with D = diag(sqrt(cell / μ))
    let mut b = &sp.vectors * DMatrix::from_diagonal(&decay) * sp.vectors.transpose();
    for i in 0..n {
        let d = (tm.cells[i] / form.measure[i]).sqrt();
        for j in 0..n {
            b[(i, j)] *= d;
        }
    }
    let gram = b.tr_mul(&b);
    let top = SymmetricEigen::new(gram).eigenvalues.iter().copied().fold(0.0, f64::max);
    Ok(top.sqrt())
}

/// One level of a convergence study: a form and its transfer to the limit.
#[derive(Debug, Clone)]
pub struct Level {
    pub form: GraphDirichletForm,
    pub transfer: TransferMap,
}

impl Level {
    pub fn new(form: GraphDirichletForm, transfer: TransferMap) -> Result<Self> {
        if transfer.cells.len() != form.len() {
            return Err(Error::InvalidMap("transfer map does not start at this form".into()));
        }
        Ok(Level { form, transfer })
    }
}

fn check_levels(levels: &[Level], limit: &GraphDirichletForm) -> Result<()> {
    if levels.is_empty() {
        return Err(Error::InvalidParameter("no levels supplied".into()));
    }
    if let Some(i) = levels.iter().position(|l| l.transfer.target_len != limit.len()) {
        return Err(Error::SpaceMismatch(format!("level {i} maps into a different target")));
    }
    Ok(())
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

fn log_log_slope(levels: &[Level], errors: &[f64]) -> Option<f64> {
    if errors.len() < 2 || errors.iter().any(|&e| !(e > 0.0)) {
        return None;
    }
    let xs: Vec<f64> = levels.iter().map(|l| (l.form.len() as f64).ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
    Some(ls_slope(&xs, &ys))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoscoTable {
    /// `errors[i][j] = ‖f_i* G_i(α) f_i^* u_j − G(α) u_j‖`.
    pub errors: Vec<Vec<f64>>,
    /// Per test function, slope of log error against log resolution.
    pub slopes: Vec<Option<f64>>,
    /// Per test function, whether errors strictly decrease along the levels.
    pub decreasing: Vec<bool>,
}

pub fn mosco_resolvent_test(
    levels: &[Level],
    limit: &GraphDirichletForm,
    alpha: f64,
    tests: &[Vec<f64>],
) -> Result<MoscoTable> {
    check_levels(levels, limit)?;
    let reference = tests
        .iter()
        .map(|u| limit.resolvent_apply(alpha, u))
        .collect::<Result<Vec<_>>>()?;
    let errors = levels
        .iter()
        .map(|l| {
            tests
                .iter()
                .zip(&reference)
                .map(|(u, gu)| {
                    let pulled = l.transfer.pull_function(u)?;
                    let solved = l.form.resolvent_apply(alpha, &pulled)?;
                    l.transfer.distance(&l.transfer.push_function(&solved)?, gu)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<Vec<f64>> = (0..tests.len())
        .map(|j| errors.iter().map(|row| row[j]).collect())
        .collect();
    Ok(MoscoTable {
        slopes: columns.iter().map(|c| log_log_slope(levels, c)).collect(),
        decreasing: columns.iter().map(|c| strictly_decreasing(c)).collect(),
        errors,
    })
}

/// The convergence schedule `tol_i = tol0 · 2^{−i}`.
pub fn tolerance(tol0: f64, i: usize) -> f64 {
    tol0 * 0.5f64.powi(i as i32)
}

/// Threshold below which `E_i(u_i) − E(u)` counts as a liminf violation.
pub const LIMINF_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiminfReport {
    /// `E_i(u_i) − E(u)`.
    pub gaps: Vec<f64>,
    /// `‖f_i* u_i − u‖`.
    pub distances: Vec<f64>,
    /// Minimum gap over the second half of the sequence.
    pub tail_min: f64,
    pub violated: bool,
}

/// Checks `liminf E_i(u_i) ≥ E(u)` along a declared sequence whose pushforwards
/// approach `u` within the schedule `tol0 · 2^{−i}`.
pub fn mosco_liminf_check(
    levels: &[Level],
    limit: &GraphDirichletForm,
    sequence: &[Vec<f64>],
    u: &[f64],
    tol0: f64,
) -> Result<LiminfReport> {
    check_levels(levels, limit)?;
    if sequence.len() != levels.len() {
        return Err(Error::InvalidParameter("one function per level is required".into()));
    }
    let e = limit.energy(u)?;
    let mut gaps = Vec::with_capacity(levels.len());
    let mut distances = Vec::with_capacity(levels.len());
    for (i, (l, ui)) in levels.iter().zip(sequence).enumerate() {
        let d = l.transfer.distance(&l.transfer.push_function(ui)?, u)?;
        if d > tolerance(tol0, i) {
            return Err(Error::Precondition(format!(
                "level {i}: ‖f_* u_i − u‖ = {d:e} exceeds the schedule {:e}",
                tolerance(tol0, i)
            )));
        }
        distances.push(d);
        gaps.push(l.form.energy(ui)? - e);
    }
    let tail_min = gaps[gaps.len() / 2..].iter().copied().fold(f64::INFINITY, f64::min);
    Ok(LiminfReport {
        violated: tail_min < -LIMINF_SLACK,
        gaps,
        distances,
        tail_min,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub sequence: Vec<Vec<f64>>,
    pub energies: Vec<f64>,
    pub limit_energy: f64,
    /// `|E_i(u_i) − E(u)|`.
    pub gaps: Vec<f64>,
    /// `‖f_i* u_i − u‖`.
    pub distances: Vec<f64>,
    /// `max(0, E_i(u_i) − E(u))` at the last level.
    pub limsup_gap: f64,
}

/// The recovery sequence `u_i = f_i^* u` and its energies.
pub fn recovery_sequence(
    limit: &GraphDirichletForm,
    levels: &[Level],
    u: &[f64],
) -> Result<RecoveryReport> {
    check_levels(levels, limit)?;
    let limit_energy = limit.energy(u)?;
    let mut sequence = Vec::with_capacity(levels.len());
    let mut energies = Vec::with_capacity(levels.len());
    let mut distances = Vec::with_capacity(levels.len());
    for l in levels {
        let ui = l.transfer.pull_function(u)?;
        energies.push(l.form.energy(&ui)?);
        distances.push(l.transfer.distance(&l.transfer.push_function(&ui)?, u)?);
        sequence.push(ui);
    }
    let gaps = energies.iter().map(|e| (e - limit_energy).abs()).collect();
    let limsup_gap = (energies.last().copied().unwrap_or(0.0) - limit_energy).max(0.0);
    Ok(RecoveryReport {
        sequence,
        energies,
        limit_energy,
        gaps,
        distances,
        limsup_gap,
    })
}

/// A probability density with respect to a form's node measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialDensity {
    values: Vec<f64>,
    reference: EnergyConvention,
}

impl InitialDensity {
    /// `reference` selects the raw node measure or its normalization.
    pub fn new(form: &GraphDirichletForm, values: Vec<f64>, reference: EnergyConvention) -> Result<Self> {
        form.check_len(&values)?;
        if let Some((k, v)) = values.iter().enumerate().find(|(_, &v)| !(v >= 0.0)) {
            return Err(Error::InvalidMeasure(format!("density {v} at node {k} is negative")));
        }
        let d = InitialDensity { values, reference };
        let mass: f64 = d.masses(form).iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("density integrates to {mass}, not 1")));
        }
        Ok(d)
    }

    /// The stationary start: the normalized node measure.
    pub fn stationary(form: &GraphDirichletForm, reference: EnergyConvention) -> Self {
        let v = match reference {
            EnergyConvention::Raw => 1.0 / form.total_measure(),
            EnergyConvention::Normalized => 1.0,
        };
        InitialDensity {
            values: vec![v; form.len()],
            reference,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn reference(&self) -> EnergyConvention {
        self.reference
    }

    /// Point masses `φ(x) m(x)`.
    pub fn masses(&self, form: &GraphDirichletForm) -> Vec<f64> {
        let scale = match self.reference {
            EnergyConvention::Raw => 1.0,
            EnergyConvention::Normalized => 1.0 / form.total_measure(),
        };
        self.values
            .iter()
            .zip(form.measure())
            .map(|(v, m)| v * m * scale)
            .collect()
    }
}

/// `E[g_1(X_{t_1}) ⋯ g_k(X_{t_k})]` by the backward recursion
/// `h = g_k`, `h ← g_j · T(t_{j+1} − t_j) h`, then `∫ T(t_1) h dμ_0`.
pub fn fdd_recursion(
    form: &GraphDirichletForm,
    density: &InitialDensity,
    times: &[f64],
    observables: &[Vec<f64>],
) -> Result<f64> {
    if times.is_empty() || times.len() != observables.len() {
        return Err(Error::InvalidParameter("one observable per time is required".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!("times {times:?} are not increasing")));
    }
    form.check_len(density.values())?;
    let k = times.len();
    let mut h = observables[k - 1].clone();
    form.check_len(&h)?;
    for j in (0..k - 1).rev() {
        let moved = form.semigroup_apply(times[j + 1] - times[j], &h)?;
        form.check_len(&observables[j])?;
        h = observables[j].iter().zip(&moved).map(|(g, x)| g * x).collect();
    }
    let h1 = form.semigroup_apply(times[0], &h)?;
    Ok(density.masses(form).iter().zip(&h1).map(|(m, x)| m * x).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FddTable {
    pub values: Vec<f64>,
    pub limit_value: f64,
    /// `|fdd_i − fdd|`.
    pub errors: Vec<f64>,
    /// `‖d(f_i*(φ_i μ_i))/dμ − φ‖` on the matched cells.
    pub density_norms: Vec<f64>,
    pub decreasing: bool,
    /// First level whose density norm misses the schedule `tol0 · 2^{−i}`.
    pub density_failure: Option<usize>,
}

pub fn fdd_convergence_test(
    levels: &[Level],
    limit: &GraphDirichletForm,
    densities: &[InitialDensity],
    density: &InitialDensity,
    times: &[f64],
    observables: &[Vec<f64>],
    tol0: f64,
) -> Result<FddTable> {
    check_levels(levels, limit)?;
    if densities.len() != levels.len() {
        return Err(Error::InvalidParameter("one density per level is required".into()));
    }
    for (i, l) in levels.iter().enumerate() {
        let v = volume_comparison_check(&l.transfer, l.form.measure(), 1)?;
        if !v.pass {
            return Err(Error::Precondition(format!(
                "level {i}: volume band fails at node {}",
                v.worst_node
            )));
        }
    }
    let limit_value = fdd_recursion(limit, density, times, observables)?;
    let mut values = Vec::with_capacity(levels.len());
    let mut density_norms = Vec::with_capacity(levels.len());
    for (l, d) in levels.iter().zip(densities) {
        if d.reference() != density.reference() {
            return Err(Error::InvalidParameter("densities use different reference measures".into()));
        }
        let pulled = observables
            .iter()
            .map(|g| l.transfer.pull_function(g))
            .collect::<Result<Vec<_>>>()?;
        values.push(fdd_recursion(&l.form, d, times, &pulled)?);

        let masses = d.masses(&l.form);
        let cell_scale = match density.reference() {
            EnergyConvention::Raw => 1.0,
            EnergyConvention::Normalized => 1.0 / limit.total_measure(),
        };
        let rn: Vec<f64> = masses
            .iter()
            .zip(l.transfer.cells())
            .map(|(m, c)| m / (c * cell_scale))
            .collect();
        let phi = l.transfer.pull_function(density.values())?;
        let diff: Vec<f64> = rn.iter().zip(&phi).map(|(a, b)| a - b).collect();
        let sq: f64 = diff
            .iter()
            .zip(l.transfer.cells())
            .map(|(x, c)| x * x * c * cell_scale)
            .sum();
        density_norms.push(sq.sqrt());
    }
    let errors: Vec<f64> = values.iter().map(|v| (v - limit_value).abs()).collect();
    let density_failure = density_norms
        .iter()
        .enumerate()
        .find(|(i, &d)| d > tolerance(tol0, *i))
        .map(|(i, _)| i);
    Ok(FddTable {
        decreasing: strictly_decreasing(&errors),
        values,
        limit_value,
        errors,
        density_norms,
        density_failure,
    })
}
