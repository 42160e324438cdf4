//! (ε, δ)-isomorphism certificates and the Lipschitz–Prokhorov distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::metric::{run_with_jobs, self_isometries, Bijection, MetricMap, SpaceRef};
use crate::paths::{path_distance, pushforward_measure_onto, GridPath, GridPathMeasure};
use crate::prokhorov::{
    coupled_upper_bound, modified_inequality_check, prokhorov_distance, two_sided,
    EnlargementFactor, InequalityCheck,
};
use crate::{Error, Result, VALIDATION_TOL};

/// Largest space searched by [`dlp_exact`].
pub const EXACT_LIMIT: usize = 8;

/// A space together with a path law on it.
#[derive(Debug, Clone, PartialEq)]
pub struct PairInstance {
    space: SpaceRef,
    measure: GridPathMeasure,
}

impl PairInstance {
    pub fn new(space: SpaceRef, measure: GridPathMeasure) -> Result<Self> {
        if *space != **measure.space() {
            return Err(Error::SpaceMismatch("measure does not live on the space".into()));
        }
        let measure = measure.with_space(space.clone())?;
        Ok(PairInstance { space, measure })
    }

    pub fn from_measure(measure: GridPathMeasure) -> Self {
        PairInstance {
            space: measure.space().clone(),
            measure,
        }
    }

    pub fn space(&self) -> &SpaceRef {
        &self.space
    }

    pub fn measure(&self) -> &GridPathMeasure {
        &self.measure
    }
}

/// A bijection claimed to be an (ε, δ)-isomorphism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsoCertificate {
    pub map: Bijection,
    pub eps: f64,
    pub delta: f64,
}

/// Isometry defect, taken as 0 below two points where every bijection is an isometry.
pub(crate) fn defect_of(f: &MetricMap<'_>) -> Result<f64> {
    if f.source().len() < 2 {
        Ok(0.0)
    } else {
        f.isometry_defect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub accepted: bool,
    pub defect: f64,
    /// `eps − defect`.
    pub defect_slack: f64,
    pub level: f64,
    pub forward: f64,
    pub backward: f64,
    /// `level − forward`.
    pub forward_slack: f64,
    /// `level − backward`.
    pub backward_slack: f64,
}

pub fn certificate_verify(
    c: &IsoCertificate,
    a: &PairInstance,
    b: &PairInstance,
) -> Result<VerifyReport> {
    certificate_verify_with(c, a, b, EnlargementFactor::Exponential)
}

pub fn certificate_verify_with(
    c: &IsoCertificate,
    a: &PairInstance,
    b: &PairInstance,
    factor: EnlargementFactor,
) -> Result<VerifyReport> {
    if !(c.eps >= 0.0 && c.delta >= 0.0) {
        return Err(Error::InvalidCertificate(format!(
            "eps = {} and delta = {} must be nonnegative",
            c.eps, c.delta
        )));
    }
    let f = MetricMap::new(&a.space, &b.space, c.map.clone())?;
    let defect = defect_of(&f)?;
    let InequalityCheck {
        holds,
        level,
        forward,
        backward,
        ..
    } = modified_inequality_check(&a.measure, &b.measure, &f, c.eps, c.delta, factor)?;
    let eps_ok = defect <= c.eps + VALIDATION_TOL;
    Ok(VerifyReport {
        accepted: eps_ok && holds,
        defect,
        defect_slack: c.eps - defect,
        level,
        forward,
        backward,
        forward_slack: level - forward,
        backward_slack: level - backward,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateValue {
    pub value: f64,
    pub certificate: IsoCertificate,
    pub defect: f64,
    pub forward: f64,
    pub backward: f64,
}

/// `min_{ε ≥ ε_f} ε + c e^{−ε}` and its minimizer.
pub fn optimal_split(defect: f64, c: f64) -> (f64, f64, f64) {
    if c <= defect.exp() {
        let delta = c * (-defect).exp();
        (defect + delta, defect, delta)
    } else {
        let eps = c.ln();
        (1.0 + eps, eps, 1.0)
    }
}

/// The best `ε + δ` certified by the fixed bijection `f`.
pub fn certificate_value(
    f: &Bijection,
    a: &PairInstance,
    b: &PairInstance,
) -> Result<CertificateValue> {
    let map = MetricMap::new(&a.space, &b.space, f.clone())?;
    let defect = defect_of(&map)?;
    let (forward, backward) = two_sided(&a.measure, &b.measure, &map)?;
    Ok(assemble(f.clone(), defect, forward, backward))
}

fn assemble(map: Bijection, defect: f64, forward: f64, backward: f64) -> CertificateValue {
    let (value, eps, delta) = optimal_split(defect, forward.max(backward));
    CertificateValue {
        value,
        certificate: IsoCertificate { map, eps, delta },
        defect,
        forward,
        backward,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DlpMode {
    Exact,
    UpperBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlpResult {
    /// `f64::INFINITY` when the spaces differ in cardinality.
    pub value: f64,
    pub certificate: Option<IsoCertificate>,
    pub mode: DlpMode,
}

/// Rearranges `v` into the next permutation in lexicographic order.
fn next_permutation(v: &mut [usize]) -> bool {
    let Some(i) = v.windows(2).rposition(|w| w[0] < w[1]) else {
        return false;
    };
    let j = v.iter().rposition(|&x| x > v[i]).expect("pivot has a successor");
    v.swap(i, j);
    v[i + 1..].reverse();
    true
}

/// Exact `d_LP` by trying every bijection (at most [`EXACT_LIMIT`] points).
///
/// `jobs = 0` uses the ambient rayon pool. The witness is the
/// lexicographically first optimal bijection regardless of `jobs`.
pub fn dlp_exact(a: &PairInstance, b: &PairInstance, jobs: usize) -> Result<DlpResult> {
    let n = a.space.len();
    if n != b.space.len() {
        return Ok(DlpResult {
            value: f64::INFINITY,
            certificate: None,
            mode: DlpMode::Exact,
        });
    }
    if n > EXACT_LIMIT {
        return Err(Error::SizeLimit {
            size: n,
            limit: EXACT_LIMIT,
        });
    }
    let branch = |first: usize| -> Result<Option<CertificateValue>> {
        let mut rest: Vec<usize> = (0..n).filter(|&x| x != first).collect();
        let mut best: Option<CertificateValue> = None;
        loop {
            let mut images = Vec::with_capacity(n);
            images.push(first);
            images.extend_from_slice(&rest);
            let f = Bijection::new(images)?;
            let map = MetricMap::new(&a.space, &b.space, f.clone())?;
            let defect = defect_of(&map)?;
            // the value is at least the defect
            if best.as_ref().is_none_or(|b| defect <= b.value) {
                let (fw, bw) = two_sided(&a.measure, &b.measure, &map)?;
                let cand = assemble(f, defect, fw, bw);
                if best.as_ref().is_none_or(|b| cand.value < b.value) {
                    best = Some(cand);
                }
            }
            if !next_permutation(&mut rest) {
                return Ok(best);
            }
        }
    };
    let results: Vec<Result<Option<CertificateValue>>> =
        run_with_jobs(jobs, || (0..n).into_par_iter().map(branch).collect());
    let mut best: Option<CertificateValue> = None;
    for r in results {
        if let Some(c) = r? {
            // branches arrive in order of their first image, so strict
            // improvement keeps the lexicographically first optimum
            if best.as_ref().is_none_or(|b| c.value < b.value) {
                best = Some(c);
            }
        }
    }
    let best = best.expect("at least one bijection");
    Ok(DlpResult {
        value: best.value,
        certificate: Some(best.certificate),
        mode: DlpMode::Exact,
    })
}

/// An upper bound on `d_LP` from the supplied maps, each composed with every
/// automorphism of the target space.
pub fn dlp_upper_bound(
    a: &PairInstance,
    b: &PairInstance,
    maps: &[Bijection],
) -> Result<(DlpResult, Vec<CertificateValue>)> {
    if a.space.len() != b.space.len() {
        return Ok((
            DlpResult {
                value: f64::INFINITY,
                certificate: None,
                mode: DlpMode::UpperBound,
            },
            Vec::new(),
        ));
    }
    if maps.is_empty() {
        return Err(Error::InvalidParameter("no candidate maps supplied".into()));
    }
    let autos = self_isometries(&b.space);
    let mut candidates: Vec<Bijection> = Vec::with_capacity(maps.len() * autos.len());
    for f in maps {
        for g in &autos {
            candidates.push(f.then(g)?);
        }
    }
    candidates.sort();
    candidates.dedup();
    let values = candidates
        .par_iter()
        .map(|f| certificate_value(f, a, b))
        .collect::<Result<Vec<_>>>()?;
    let best = values
        .iter()
        .min_by(|x, y| {
            x.value
                .total_cmp(&y.value)
                .then_with(|| x.certificate.map.cmp(&y.certificate.map))
        })
        .expect("nonempty candidate list");
    Ok((
        DlpResult {
            value: best.value,
            certificate: Some(best.certificate.clone()),
            mode: DlpMode::UpperBound,
        },
        values,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SameSpaceResult {
    /// `min_g d_P(Φ_g* P, Q)` over isometries `g`.
    pub value: f64,
    pub witness: Bijection,
    /// `d_P(P, Q)`, never below `value`.
    pub prokhorov: f64,
}

/// Minimum over self-isometries `g` of `d_P(Φ_g* P, Q)`.
pub fn dlp_same_space(a: &PairInstance, b: &PairInstance) -> Result<SameSpaceResult> {
    if *a.space != *b.space {
        return Err(Error::SpaceMismatch("instances live on different spaces".into()));
    }
    let space = &a.space;
    let mut best: Option<(f64, Bijection)> = None;
    for g in self_isometries(space) {
        let map = MetricMap::new(space, space, g.clone())?;
        let pushed = pushforward_measure_onto(&map, &a.measure, b.space.clone())?;
        let d = prokhorov_distance(&pushed, &b.measure)?.value;
        if best.as_ref().is_none_or(|(v, _)| d < *v) {
            best = Some((d, g));
        }
    }
    let (value, witness) = best.expect("identity is always an isometry");
    let prokhorov = prokhorov_distance(&a.measure, &b.measure.with_space(space.clone())?)?.value;
    debug_assert!(value <= prokhorov);
    Ok(SameSpaceResult {
        value,
        witness,
        prokhorov,
    })
}

/// `(f_2 ∘ f_1, ε_1 + ε_2, δ_1 + δ_2)`.
pub fn certificate_compose(c1: &IsoCertificate, c2: &IsoCertificate) -> Result<IsoCertificate> {
    Ok(IsoCertificate {
        map: c1.map.then(&c2.map)?,
        eps: c1.eps + c2.eps,
        delta: c1.delta + c2.delta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub index: usize,
    pub defect: f64,
    pub forward: f64,
    pub backward: f64,
    pub value: f64,
    pub eps: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln value` against the index; `None` if some
    /// value is zero or fewer than two rows exist.
    pub log_slope: Option<f64>,
    /// Indices whose value exceeds the previous one.
    pub non_monotone: Vec<usize>,
    pub strictly_decreasing: bool,
}

impl ConvergenceReport {
    fn from_rows(rows: Vec<ConvergenceRow>) -> Self {
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let non_monotone = (1..values.len())
            .filter(|&i| values[i] > values[i - 1] + VALIDATION_TOL)
            .collect();
        let strictly_decreasing = values.windows(2).all(|w| w[1] < w[0]);
        let log_slope = if values.len() >= 2 && values.iter().all(|&v| v > 0.0) {
            let xs: Vec<f64> = (0..values.len()).map(|i| i as f64).collect();
            let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
            Some(ls_slope(&xs, &ys))
        } else {
            None
        };
        ConvergenceReport {
            rows,
            log_slope,
            non_monotone,
            strictly_decreasing,
        }
    }
}

pub(crate) fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Certificate values of `maps[i]: sequence[i] -> target`.
pub fn convergence_report(
    sequence: &[PairInstance],
    target: &PairInstance,
    maps: &[Bijection],
) -> Result<ConvergenceReport> {
    if sequence.len() != maps.len() {
        return Err(Error::InvalidParameter(format!(
            "{} instances but {} maps",
            sequence.len(),
            maps.len()
        )));
    }
    let rows = sequence
        .iter()
        .zip(maps)
        .enumerate()
        .map(|(index, (inst, f))| {
            let v = certificate_value(f, inst, target)?;
            Ok(ConvergenceRow {
                index,
                defect: v.defect,
                forward: v.forward,
                backward: v.backward,
                value: v.value,
                eps: v.certificate.eps,
                delta: v.certificate.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport::from_rows(rows))
}

/// One level of a coupled study: samples `(v_k, w_k)` of a coupling between a
/// law on `source` and a law on `target`, and a bijection between the spaces.
#[derive(Debug, Clone)]
pub struct CoupledLevel {
    pub source: SpaceRef,
    pub target: SpaceRef,
    pub map: Bijection,
    pub pairs: Vec<(GridPath, GridPath)>,
}

/// Like [`convergence_report`], with each Prokhorov distance replaced by a
/// 95% upper confidence bound read off coupled samples.
pub fn convergence_report_coupled(levels: &[CoupledLevel]) -> Result<ConvergenceReport> {
    let rows = levels
        .iter()
        .enumerate()
        .map(|(index, level)| {
            let f = MetricMap::new(&level.source, &level.target, level.map.clone())?;
            let defect = defect_of(&f)?;
            let inv = level.map.inverse();
            let (fw, bw): (Vec<f64>, Vec<f64>) = level
                .pairs
                .par_iter()
                .map(|(v, w)| {
                    let fv: Vec<usize> = v.values().iter().map(|&x| level.map.apply(x)).collect();
                    let gw: Vec<usize> = w.values().iter().map(|&y| inv.apply(y)).collect();
                    (
                        path_distance(&level.target, &fv, w.values()),
                        path_distance(&level.source, &gw, v.values()),
                    )
                })
                .unzip();
            let forward = coupled_upper_bound(&fw)?.value;
            let backward = coupled_upper_bound(&bw)?.value;
            let v = assemble(level.map.clone(), defect, forward, backward);
            Ok(ConvergenceRow {
                index,
                defect,
                forward,
                backward,
                value: v.value,
                eps: v.certificate.eps,
                delta: v.certificate.delta,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport::from_rows(rows))
}
