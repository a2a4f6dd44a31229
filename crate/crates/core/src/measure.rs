//! Random-cluster weights, cluster counting under boundary conditions,
//! exact enumeration and planar duality.

use bitvec::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::DisjointSets;
use crate::error::{RcmError, Result};
use crate::lattice::{BoundaryCondition, DualDomain, LatticeDomain};

/// Largest edge count accepted by [`exact_distribution`].
pub const ENUMERATION_CAP: usize = 24;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Configuration {
    pub open: BitVec<u64, Lsb0>,
}

impl Configuration {
    pub fn all_closed(n_edges: usize) -> Self {
        Configuration {
            open: bitvec![u64, Lsb0; 0; n_edges],
        }
    }

    pub fn all_open(n_edges: usize) -> Self {
        Configuration {
            open: bitvec![u64, Lsb0; 1; n_edges],
        }
    }

    /// Bit `k` of `index` is the state of edge `k`.
    pub fn from_index(index: u64, n_edges: usize) -> Self {
        let mut open = bitvec![u64, Lsb0; 0; n_edges];
        for k in 0..n_edges {
            open.set(k, (index >> k) & 1 == 1);
        }
        Configuration { open }
    }

    pub fn from_bools(states: &[bool]) -> Self {
        Configuration {
            open: states.iter().copied().collect(),
        }
    }

    pub fn index(&self) -> u64 {
        self.open
            .iter_ones()
            .fold(0u64, |acc, k| acc | (1u64 << k))
    }

    pub fn len(&self) -> usize {
        self.open.len()
    }

    pub fn is_empty(&self) -> bool {
        self.open.is_empty()
    }

    pub fn is_open(&self, e: usize) -> bool {
        self.open[e]
    }

    pub fn set(&mut self, e: usize, state: bool) {
        self.open.set(e, state);
    }

    pub fn n_open(&self) -> usize {
        self.open.count_ones()
    }

    pub fn to_bools(&self) -> Vec<bool> {
        self.open.iter().by_vals().collect()
    }

    /// Edgewise `self <= other`.
    pub fn le(&self, other: &Configuration) -> bool {
        self.open.iter_ones().all(|k| other.open[k])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub p: f64,
    pub q: f64,
}

impl ModelParams {
    pub fn new(p: f64, q: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) || p.is_nan() {
            return Err(RcmError::InvalidParameter(format!("p = {p} is outside [0, 1]")));
        }
        if !(q >= 1.0) || !q.is_finite() {
            return Err(RcmError::InvalidParameter(format!(
                "q = {q} < 1: the model is only monotone (FKG) for q >= 1"
            )));
        }
        Ok(ModelParams { p, q })
    }
}

/// Number of components of `omega` on a graph after wiring each class.
pub fn count_components(
    n_vertices: usize,
    edges: &[(usize, usize)],
    open: impl Fn(usize) -> bool,
    classes: &[Vec<usize>],
) -> usize {
    let mut ds = DisjointSets::new(n_vertices);
    for (k, &(u, v)) in edges.iter().enumerate() {
        if open(k) {
            ds.union(u, v);
        }
    }
    for class in classes {
        for w in class.windows(2) {
            ds.union(w[0], w[1]);
        }
    }
    ds.count()
}

fn check_len(cfg: &Configuration, d: &LatticeDomain) -> Result<()> {
    if cfg.len() != d.n_edges() {
        return Err(RcmError::DomainMismatch(format!(
            "configuration has {} edges, domain has {}",
            cfg.len(),
            d.n_edges()
        )));
    }
    Ok(())
}

/// `k(omega, xi)`: clusters of `omega` once the classes of `xi` are wired.
pub fn cluster_count(d: &LatticeDomain, cfg: &Configuration, bc: &BoundaryCondition) -> Result<usize> {
    check_len(cfg, d)?;
    let classes = bc.wiring_classes(d)?;
    Ok(count_components(d.n_vertices(), &d.edges, |k| cfg.open[k], &classes))
}

fn pow0(base: f64, exp: usize) -> f64 {
    if exp == 0 {
        1.0
    } else {
        base.powi(exp as i32)
    }
}

fn weight_from_counts(open: usize, closed: usize, clusters: usize, params: ModelParams) -> f64 {
    let (p, q) = (params.p, params.q);
    if open + closed > 50 {
        log_weight_from_counts(open, closed, clusters, params).exp()
    } else {
        pow0(p, open) * pow0(1.0 - p, closed) * q.powi(clusters as i32)
    }
}

fn log_weight_from_counts(open: usize, closed: usize, clusters: usize, params: ModelParams) -> f64 {
    let term = |base: f64, exp: usize| if exp == 0 { 0.0 } else { exp as f64 * base.ln() };
    term(params.p, open) + term(1.0 - params.p, closed) + clusters as f64 * params.q.ln()
}

/// Unnormalised weight `p^o (1-p)^c q^k`.
pub fn weight(d: &LatticeDomain, cfg: &Configuration, params: ModelParams, bc: &BoundaryCondition) -> Result<f64> {
    let k = cluster_count(d, cfg, bc)?;
    let o = cfg.n_open();
    Ok(weight_from_counts(o, cfg.len() - o, k, params))
}

/// Natural log of [`weight`].
pub fn log_weight(d: &LatticeDomain, cfg: &Configuration, params: ModelParams, bc: &BoundaryCondition) -> Result<f64> {
    let k = cluster_count(d, cfg, bc)?;
    let o = cfg.n_open();
    Ok(log_weight_from_counts(o, cfg.len() - o, k, params))
}

/// Weight of a dual configuration on the dual graph. The outer dual vertex
/// already realises the wiring of the unbounded face.
pub fn dual_weight(dd: &DualDomain, cfg: &Configuration, params: ModelParams) -> f64 {
    let k = count_components(dd.n_vertices(), &dd.edges, |k| cfg.open[k], &[]);
    let o = cfg.n_open();
    weight_from_counts(o, cfg.len() - o, k, params)
}

#[derive(Clone, Debug)]
pub struct ExactDistribution {
    /// Indexed by [`Configuration::index`].
    pub probabilities: Vec<f64>,
    pub partition_function: f64,
    pub n_edges: usize,
}

impl ExactDistribution {
    pub fn probability(&self, cfg: &Configuration) -> f64 {
        self.probabilities[cfg.index() as usize]
    }

    /// Marginal probability that edge `e` is open.
    pub fn edge_marginal(&self, e: usize) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .filter(|(i, _)| (i >> e) & 1 == 1)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn total_variation(&self, other: &[f64]) -> f64 {
        0.5 * self
            .probabilities
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
    }
}

pub fn exact_distribution(d: &LatticeDomain, params: ModelParams, bc: &BoundaryCondition) -> Result<ExactDistribution> {
    let n = d.n_edges();
    if n > ENUMERATION_CAP {
        return Err(RcmError::TooLarge {
            edges: n,
            cap: ENUMERATION_CAP,
        });
    }
    let classes = bc.wiring_classes(d)?;
    let total = 1usize << n;
    let mut weights = Vec::with_capacity(total);
    for idx in 0..total {
        let k = count_components(d.n_vertices(), &d.edges, |e| (idx >> e) & 1 == 1, &classes);
        let o = (idx as u64).count_ones() as usize;
        weights.push(weight_from_counts(o, n - o, k, params));
    }
    let z: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= z;
    }
    Ok(ExactDistribution {
        probabilities: weights,
        partition_function: z,
        n_edges: n,
    })
}

pub fn exact_event_probability(dist: &ExactDistribution, event: impl Fn(&Configuration) -> bool) -> f64 {
    dist.probabilities
        .iter()
        .enumerate()
        .filter(|(i, p)| **p > 0.0 && event(&Configuration::from_index(*i as u64, dist.n_edges)))
        .map(|(_, p)| p)
        .sum()
}

/// `sqrt(q) / (1 + sqrt(q))`.
pub fn self_dual_point(q: f64) -> f64 {
    let s = q.sqrt();
    s / (1.0 + s)
}

/// The unique `p*` with `p p* / ((1-p)(1-p*)) = q`.
pub fn dual_parameter(p: f64, q: f64) -> f64 {
    q * (1.0 - p) / (q * (1.0 - p) + p)
}

/// Dual edge is open iff its primal edge is closed.
pub fn dual_configuration(cfg: &Configuration, dd: &DualDomain) -> Configuration {
    let mut out = Configuration::all_closed(dd.n_edges());
    for j in 0..dd.n_edges() {
        out.set(j, !cfg.is_open(dd.to_primal[j]));
    }
    out
}

/// Inverse of [`dual_configuration`].
pub fn primal_configuration(dual_cfg: &Configuration, dd: &DualDomain) -> Configuration {
    let mut out = Configuration::all_closed(dd.to_dual.len());
    for k in 0..dd.to_dual.len() {
        out.set(k, !dual_cfg.is_open(dd.to_dual[k]));
    }
    out
}

/// Closed form of `weight(omega; free, p) / dual_weight(omega*; p*)`:
/// `((1-p)/p*)^{|E|} q^{|V|-1}`.
pub fn euler_duality_ratio(d: &LatticeDomain, params: ModelParams) -> f64 {
    let ps = dual_parameter(params.p, params.q);
    ((1.0 - params.p) / ps).powi(d.n_edges() as i32) * params.q.powi(d.n_vertices() as i32 - 1)
}

/// Largest relative deviation of `weight(omega) / dual_weight(omega*)`
/// from [`euler_duality_ratio`] over all configurations (free primal,
/// wired dual).
pub fn duality_ratio_deviation(d: &LatticeDomain, params: ModelParams) -> Result<f64> {
    if d.n_edges() > ENUMERATION_CAP {
        return Err(RcmError::TooLarge {
            edges: d.n_edges(),
            cap: ENUMERATION_CAP,
        });
    }
    let dd = crate::lattice::dual_domain(d)?;
    let dual_params = ModelParams::new(dual_parameter(params.p, params.q), params.q)?;
    let expected = euler_duality_ratio(d, params);
    let mut worst: f64 = 0.0;
    for idx in 0..(1u64 << d.n_edges()) {
        let cfg = Configuration::from_index(idx, d.n_edges());
        let r = weight(d, &cfg, params, &BoundaryCondition::Free)? / dual_weight(&dd, &dual_configuration(&cfg, &dd), dual_params);
        worst = worst.max((r / expected - 1.0).abs());
    }
    Ok(worst)
}
