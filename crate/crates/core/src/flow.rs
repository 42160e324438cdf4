//! Incremental max-flow on the bipartite transport network
//! `s -> left_i -> right_j -> t`.
//!
//! Middle edges can be added between augmentations; the current flow stays
//! feasible, so augmentation resumes where it stopped.

use std::collections::VecDeque;

use num_rational::BigRational;
use num_traits::{Signed, Zero};

pub(crate) trait Capacity: Clone {
    fn zero() -> Self;
    fn add(&self, other: &Self) -> Self;
    fn sub(&self, other: &Self) -> Self;
    fn min_of(&self, other: &Self) -> Self;
    /// Residual capacity large enough to augment along.
    fn usable(&self) -> bool;
}

impl Capacity for f64 {
    fn zero() -> Self {
        0.0
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn min_of(&self, other: &Self) -> Self {
        f64::min(*self, *other)
    }
    fn usable(&self) -> bool {
        // rounding residue below this cannot move meaningful mass
        *self > 1e-15
    }
}

impl Capacity for BigRational {
    fn zero() -> Self {
        Zero::zero()
    }
    fn add(&self, other: &Self) -> Self {
        self + other
    }
    fn sub(&self, other: &Self) -> Self {
        self - other
    }
    fn min_of(&self, other: &Self) -> Self {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }
    fn usable(&self) -> bool {
        self.is_positive()
    }
}

#[derive(Clone)]
struct Edge<C> {
    to: usize,
    cap: C,
    rev: usize,
}

pub(crate) struct BipartiteFlow<C: Capacity> {
    left: usize,
    right: usize,
    graph: Vec<Vec<Edge<C>>>,
    /// `(left, right, node, edge index)` of each middle edge, in insertion order.
    middle: Vec<(usize, usize, usize, usize)>,
    /// Original capacity of each middle edge.
    middle_cap: Vec<C>,
    value: C,
}

impl<C: Capacity> BipartiteFlow<C> {
    pub(crate) fn new(supply: &[C], demand: &[C]) -> Self {
        let left = supply.len();
        let right = demand.len();
        let mut f = BipartiteFlow {
            left,
            right,
            graph: vec![Vec::new(); left + right + 2],
            middle: Vec::new(),
            middle_cap: Vec::new(),
            value: C::zero(),
        };
        let s = f.source();
        let t = f.sink();
        for (i, cap) in supply.iter().enumerate() {
            f.add_edge(s, 1 + i, cap.clone());
        }
        for (j, cap) in demand.iter().enumerate() {
            f.add_edge(1 + left + j, t, cap.clone());
        }
        f
    }

    fn source(&self) -> usize {
        0
    }

    fn sink(&self) -> usize {
        self.left + self.right + 1
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: C) -> usize {
        let a = self.graph[from].len();
        let b = self.graph[to].len();
        self.graph[from].push(Edge { to, cap, rev: b });
        self.graph[to].push(Edge {
            to: from,
            cap: C::zero(),
            rev: a,
        });
        a
    }

    pub(crate) fn add_middle(&mut self, i: usize, j: usize, cap: C) {
        let from = 1 + i;
        let idx = self.add_edge(from, 1 + self.left + j, cap.clone());
        self.middle.push((i, j, from, idx));
        self.middle_cap.push(cap);
    }

    /// Augments along shortest paths until none remain; returns the total flow.
    pub(crate) fn augment(&mut self) -> &C {
        let (s, t) = (self.source(), self.sink());
        let n = self.graph.len();
        loop {
            let mut prev: Vec<Option<(usize, usize)>> = vec![None; n];
            let mut seen = vec![false; n];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                if u == t {
                    break;
                }
                for (k, e) in self.graph[u].iter().enumerate() {
                    if !seen[e.to] && e.cap.usable() {
                        seen[e.to] = true;
                        prev[e.to] = Some((u, k));
                        queue.push_back(e.to);
                    }
                }
            }
            if !seen[t] {
                return &self.value;
            }
            let mut bottleneck: Option<C> = None;
            let mut v = t;
            while let Some((u, k)) = prev[v] {
                let cap = &self.graph[u][k].cap;
                bottleneck = Some(match bottleneck {
                    None => cap.clone(),
                    Some(b) => b.min_of(cap),
                });
                v = u;
            }
            let push = bottleneck.expect("path has at least one edge");
            let mut v = t;
            while let Some((u, k)) = prev[v] {
                let rev = self.graph[u][k].rev;
                self.graph[u][k].cap = self.graph[u][k].cap.sub(&push);
                self.graph[v][rev].cap = self.graph[v][rev].cap.add(&push);
                v = u;
            }
            self.value = self.value.add(&push);
        }
    }

    /// Positive flow on middle edges as `(left, right, amount)`.
    pub(crate) fn middle_flows(&self) -> Vec<(usize, usize, C)> {
        self.middle
            .iter()
            .zip(&self.middle_cap)
            .filter_map(|(&(i, j, node, idx), cap)| {
                let used = cap.sub(&self.graph[node][idx].cap);
                used.usable().then_some((i, j, used))
            })
            .collect()
    }
}
