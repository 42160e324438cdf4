//! Prokhorov distance between finitely supported path laws.
//!
//! `d_P(P, Q) ≤ δ` iff some sub-coupling of `P` and `Q` carried by pairs with
//! `d_C ≤ δ` has mass at least `1 − δ`. Sweeping the distinct pair distances
//! with an incremental max-flow gives the exact value. Enlargements are
//! closed (`d_C(x, A) ≤ δ`) throughout.

use num_rational::BigRational;
use num_traits::{One, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::flow::{BipartiteFlow, Capacity};
use crate::metric::MetricMap;
use crate::paths::{path_distance, pushforward_measure_onto, GridPathMeasure};
use crate::stats::{wilson_interval, Z95};
use crate::{Error, Result, VALIDATION_TOL};

/// Largest union support accepted by [`prokhorov_bruteforce`].
pub const BRUTEFORCE_LIMIT: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingEntry {
    pub row: usize,
    pub col: usize,
    pub mass: f64,
}

/// A sub-coupling of `P` (rows) and `Q` (columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub rows: usize,
    pub cols: usize,
    pub entries: Vec<CouplingEntry>,
}

impl Coupling {
    pub fn total_mass(&self) -> f64 {
        self.entries.iter().map(|e| e.mass).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProkhorovResult {
    pub value: f64,
    /// Distance threshold at which the optimum is attained.
    pub threshold: f64,
    /// Coupled mass at `threshold`.
    pub transported: f64,
    /// The same, exactly, when both measures carry rational weights.
    pub exact_transported: Option<BigRational>,
    pub coupling: Coupling,
}

fn check_compatible(p: &GridPathMeasure, q: &GridPathMeasure) -> Result<()> {
    if p.grid() != q.grid() {
        return Err(Error::GridMismatch(format!(
            "grids {:?} and {:?} differ",
            p.grid(),
            q.grid()
        )));
    }
    if !std::sync::Arc::ptr_eq(p.space(), q.space()) && **p.space() != **q.space() {
        return Err(Error::SpaceMismatch("measures live on different spaces".into()));
    }
    Ok(())
}

fn pair_distances(p: &GridPathMeasure, q: &GridPathMeasure) -> Vec<f64> {
    let space = p.space();
    let mut d = Vec::with_capacity(p.len() * q.len());
    for v in p.paths() {
        for w in q.paths() {
            d.push(path_distance(space, v.values(), w.values()));
        }
    }
    d
}

/// Exact Prokhorov distance with a witnessing coupling.
pub fn prokhorov_distance(p: &GridPathMeasure, q: &GridPathMeasure) -> Result<ProkhorovResult> {
    check_compatible(p, q)?;
    let d = pair_distances(p, q);
    match (p.exact_weights(), q.exact_weights()) {
        (Some(pw), Some(qw)) => {
            let one = BigRational::one();
            let out = sweep(pw, qw, &d, |w: &BigRational| {
                (&one - w).to_f64().unwrap_or(f64::NAN).max(0.0)
            });
            let exact = Some(out.transported.clone());
            Ok(finish(out, p.len(), q.len(), |w| w.to_f64().unwrap_or(f64::NAN), exact))
        }
        _ => {
            let out = sweep(p.weights(), q.weights(), &d, |w: &f64| {
                let gap = 1.0 - w;
                if gap <= VALIDATION_TOL {
                    0.0
                } else {
                    gap
                }
            });
            Ok(finish(out, p.len(), q.len(), |w| *w, None))
        }
    }
}

struct Sweep<C> {
    value: f64,
    threshold: f64,
    transported: C,
    flows: Vec<(usize, usize, C)>,
}

fn sweep<C: Capacity>(
    p: &[C],
    q: &[C],
    d: &[f64],
    gap: impl Fn(&C) -> f64,
) -> Sweep<C> {
    let b = q.len();
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&x, &y| d[x].total_cmp(&d[y]).then(x.cmp(&y)));

    let mut flow = BipartiteFlow::new(p, q);
    let mut best: Option<Sweep<C>> = None;
    let mut next = 0;
    // threshold 0 first, then every distinct pair distance
    let mut threshold = 0.0;
    loop {
        if let Some(b) = &best {
            if threshold >= b.value {
                break;
            }
        }
        while next < order.len() && d[order[next]] <= threshold {
            let e = order[next];
            let (i, j) = (e / b, e % b);
            flow.add_middle(i, j, p[i].min_of(&q[j]));
            next += 1;
        }
        let w = flow.augment().clone();
        let value = threshold.max(gap(&w));
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(Sweep {
                value,
                threshold,
                transported: w,
                flows: flow.middle_flows(),
            });
        }
        if next == order.len() {
            break;
        }
        threshold = d[order[next]];
    }
    best.expect("threshold 0 is always evaluated")
}

fn finish<C>(
    s: Sweep<C>,
    rows: usize,
    cols: usize,
    to_f64: impl Fn(&C) -> f64,
    exact_transported: Option<BigRational>,
) -> ProkhorovResult {
    let transported = to_f64(&s.transported);
    ProkhorovResult {
        value: s.value,
        threshold: s.threshold,
        transported,
        exact_transported,
        coupling: Coupling {
            rows,
            cols,
            entries: s
                .flows
                .iter()
                .map(|(i, j, m)| CouplingEntry {
                    row: *i,
                    col: *j,
                    mass: to_f64(m),
                })
                .collect(),
        },
    }
}

/// Prokhorov distance by enumerating every subset of the union support.
///
/// The answer is the smallest feasible value among the distance levels and
/// the mass excesses `P(A) − Q(A^ℓ)`, then narrowed by bisection to `1e-12`.
pub fn prokhorov_bruteforce(p: &GridPathMeasure, q: &GridPathMeasure) -> Result<f64> {
    check_compatible(p, q)?;
    let mut support: Vec<&crate::paths::GridPath> = p.paths().iter().chain(q.paths()).collect();
    support.sort();
    support.dedup();
    let n = support.len();
    if n > BRUTEFORCE_LIMIT {
        return Err(Error::SupportTooLarge {
            size: n,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let index = |path: &crate::paths::GridPath| support.binary_search(&path).expect("in support");
    let mut pa = vec![0.0; n];
    let mut qa = vec![0.0; n];
    for (path, w) in p.paths().iter().zip(p.weights()) {
        pa[index(path)] += w;
    }
    for (path, w) in q.paths().iter().zip(q.weights()) {
        qa[index(path)] += w;
    }
    let space = p.space();
    let dist: Vec<Vec<f64>> = support
        .iter()
        .map(|u| {
            support
                .iter()
                .map(|v| path_distance(space, u.values(), v.values()))
                .collect()
        })
        .collect();

    let masks = 1usize << n;
    let mass = |atoms: &[f64]| {
        let mut m = vec![0.0; masks];
        for mask in 1..masks {
            let low = mask.trailing_zeros() as usize;
            m[mask] = m[mask & (mask - 1)] + atoms[low];
        }
        m
    };
    let pm = mass(&pa);
    let qm = mass(&qa);
    let enlarge = |delta: f64| {
        let nb: Vec<usize> = (0..n)
            .map(|u| (0..n).filter(|&v| dist[u][v] <= delta).fold(0, |acc, v| acc | (1 << v)))
            .collect();
        let mut e = vec![0usize; masks];
        for mask in 1..masks {
            let low = mask.trailing_zeros() as usize;
            e[mask] = e[mask & (mask - 1)] | nb[low];
        }
        e
    };
    let feasible = |delta: f64| {
        let e = enlarge(delta);
        (1..masks).all(|a| {
            pm[a] <= qm[e[a]] + delta + VALIDATION_TOL && qm[a] <= pm[e[a]] + delta + VALIDATION_TOL
        })
    };

    let mut levels: Vec<f64> = dist.iter().flatten().copied().collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut candidates = levels.clone();
    candidates.push(1.0);
    for &level in &levels {
        let e = enlarge(level);
        for a in 1..masks {
            for excess in [pm[a] - qm[e[a]], qm[a] - pm[e[a]]] {
                if excess > 0.0 && excess < 1.0 {
                    candidates.push(excess);
                }
            }
        }
    }
    candidates.retain(|&c| c <= 1.0);
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // feasibility is monotone in δ
    let k = candidates.partition_point(|&c| !feasible(c));
    let hi = candidates[k.min(candidates.len() - 1)];
    let mut lo = if k == 0 { 0.0 } else { candidates[k - 1] };
    let mut hi = hi;
    if k == 0 {
        return Ok(hi);
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Whether `e^ε` or `1` scales the level in [`modified_inequality_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnlargementFactor {
    #[default]
    Exponential,
    Unit,
}

impl EnlargementFactor {
    pub fn level(self, eps: f64, delta: f64) -> f64 {
        match self {
            EnlargementFactor::Exponential => delta * eps.exp(),
            EnlargementFactor::Unit => delta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// `d_P(Φ_f* P, Q)`.
    Forward,
    /// `d_P(Φ_{f⁻¹}* Q, P)`.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub side: Side,
    /// Amount by which the Prokhorov distance exceeds the level.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub holds: bool,
    pub level: f64,
    pub forward: f64,
    pub backward: f64,
    pub violation: Option<Violation>,
}

/// The two-sided Prokhorov test at level `δ e^ε` (or `δ` for [`EnlargementFactor::Unit`]).
pub fn modified_inequality_check(
    p: &GridPathMeasure,
    q: &GridPathMeasure,
    f: &MetricMap<'_>,
    eps: f64,
    delta: f64,
    factor: EnlargementFactor,
) -> Result<InequalityCheck> {
    let (forward, backward) = two_sided(p, q, f)?;
    let level = factor.level(eps, delta);
    let violation = if forward > level + VALIDATION_TOL {
        Some(Violation {
            side: Side::Forward,
            excess: forward - level,
        })
    } else if backward > level + VALIDATION_TOL {
        Some(Violation {
            side: Side::Backward,
            excess: backward - level,
        })
    } else {
        None
    };
    Ok(InequalityCheck {
        holds: violation.is_none(),
        level,
        forward,
        backward,
        violation,
    })
}

/// `(d_P(Φ_f* P, Q), d_P(Φ_{f⁻¹}* Q, P))`.
pub fn two_sided(
    p: &GridPathMeasure,
    q: &GridPathMeasure,
    f: &MetricMap<'_>,
) -> Result<(f64, f64)> {
    if **p.space() != *f.source() || **q.space() != *f.target() {
        return Err(Error::SpaceMismatch(
            "measures do not live on the map's source and target".into(),
        ));
    }
    let pushed = pushforward_measure_onto(f, p, q.space().clone())?;
    let forward = prokhorov_distance(&pushed, q)?.value;
    let pulled = pushforward_measure_onto(&f.inverse(), q, p.space().clone())?;
    let backward = prokhorov_distance(&pulled, p)?.value;
    Ok((forward, backward))
}

/// An upper confidence bound on `d_P` from samples of a coupling.
///
/// `distances[k]` is `d_C` between the two halves of the `k`-th coupled pair.
/// For each candidate threshold `r` the probability of `d_C > r` is bounded
/// above by a Wilson interval, and `max(r, bound)` bounds `d_P`.
pub fn coupled_upper_bound(distances: &[f64]) -> Result<CoupledBound> {
    if distances.is_empty() {
        return Err(Error::InvalidParameter("no coupled samples".into()));
    }
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as u64;
    let mut best = CoupledBound {
        value: 1.0,
        threshold: f64::INFINITY,
        exceed: 0,
        samples: n,
    };
    let mut candidates = vec![0.0];
    candidates.extend(sorted.iter().copied());
    candidates.dedup();
    for r in candidates {
        if r >= best.value {
            break;
        }
        let exceed = (sorted.len() - sorted.partition_point(|&d| d <= r)) as u64;
        let (_, hi) = wilson_interval(exceed, n, Z95);
        let value = r.max(hi);
        if value < best.value {
            best = CoupledBound {
                value,
                threshold: r,
                exceed,
                samples: n,
            };
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledBound {
    pub value: f64,
    pub threshold: f64,
    pub exceed: u64,
    pub samples: u64,
}
