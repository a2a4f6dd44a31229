//! Grimmett's monotone coupling: a Markov chain on label states
//! `Z in [0,1]^E` whose projections `omega_p(Z) = 1{Z <= p}` all perform
//! heat-bath updates at once.
//!
//! Every label carries a provenance token naming the uniform draw that
//! produced it. The atom of the update law copies the threshold label,
//! token included, so "edges that open simultaneously" is an exact
//! relation on tokens.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::io::Write;
use std::sync::Arc;

use rand::Rng as _;

use crate::connectivity::{ClusterGraph, Search};
use crate::error::{RcmError, Result};
use crate::lattice::{BoundaryCondition, LatticeDomain};
use crate::measure::{Configuration, ModelParams};
use crate::rng::Rng;
use crate::stats::{chi_square_independence, chi_square_p_value};

/// Provenance of the threshold when no alternative path exists.
pub const NO_PATH: u64 = u64::MAX;
/// Provenance of the label-0 virtual edges that realise boundary wiring.
pub const BOUNDARY: u64 = u64::MAX - 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Label {
    pub value: f64,
    pub provenance: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelState {
    pub labels: Vec<Label>,
}

impl LabelState {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.labels.iter().map(|l| l.value).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    pub value: f64,
    pub provenance: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Cloud {
    pub level: f64,
    pub edges: Vec<usize>,
}

/// `omega_p(Z)(e) = 1{Z(e) <= p}`.
pub fn project(z: &LabelState, p: f64) -> Configuration {
    let states: Vec<bool> = z.labels.iter().map(|l| l.value <= p).collect();
    Configuration::from_bools(&states)
}

#[derive(Clone, Copy, Debug)]
struct Key(f64);
impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Minimax path search with reusable buffers.
#[derive(Clone, Debug)]
pub struct ThresholdSearch {
    best: Vec<f64>,
    prov: Vec<u64>,
    stamp: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Reverse<(Key, u32)>>,
}

impl ThresholdSearch {
    pub fn new(n_vertices: usize) -> Self {
        ThresholdSearch {
            best: vec![0.0; n_vertices],
            prov: vec![0; n_vertices],
            stamp: vec![0; n_vertices],
            generation: 0,
            heap: BinaryHeap::new(),
        }
    }

    /// Minimum over paths from one endpoint of `e` to the other in
    /// `G \ {e}` of the largest label on the path, with that label's
    /// provenance; `(1, NO_PATH)` when `e` is a bridge of `G`.
    pub fn threshold(&mut self, g: &ClusterGraph, z: &LabelState, e: usize) -> Threshold {
        let (x, y) = g.endpoints[e];
        if self.generation == u32::MAX {
            self.stamp.fill(0);
            self.generation = 0;
        }
        self.generation += 1;
        let gen = self.generation;
        self.heap.clear();
        self.best[x] = 0.0;
        self.prov[x] = BOUNDARY;
        self.stamp[x] = gen;
        self.heap.push(Reverse((Key(0.0), x as u32)));
        let mut done_y = false;
        while let Some(Reverse((Key(d), v))) = self.heap.pop() {
            let v = v as usize;
            if d > self.best[v] {
                continue;
            }
            if v == y {
                done_y = true;
                break;
            }
            for &(w, f) in g.neighbours(v) {
                let f = f as usize;
                if f == e {
                    continue;
                }
                let (lab, lp) = if f >= g.n_real_edges {
                    (0.0, BOUNDARY)
                } else {
                    let l = z.labels[f];
                    (l.value, l.provenance)
                };
                let (cand, cp) = if lab >= d { (lab, lp) } else { (d, self.prov[v]) };
                let w = w as usize;
                if self.stamp[w] != gen || cand < self.best[w] {
                    self.stamp[w] = gen;
                    self.best[w] = cand;
                    self.prov[w] = cp;
                    self.heap.push(Reverse((Key(cand), w as u32)));
                }
            }
        }
        if done_y {
            Threshold {
                value: self.best[y],
                provenance: self.prov[y],
            }
        } else {
            Threshold {
                value: 1.0,
                provenance: NO_PATH,
            }
        }
    }
}

/// Threshold of edge `e` (allocates a fresh search).
pub fn threshold(g: &ClusterGraph, z: &LabelState, e: usize) -> Threshold {
    ThresholdSearch::new(g.n_vertices).threshold(g, z, e)
}

/// Smallest label value `v` with the endpoints of `e` connected in
/// `omega_v(Z) \ {e}`, by scanning sorted label values with a graph search.
pub fn threshold_by_scan(g: &ClusterGraph, z: &LabelState, e: usize) -> f64 {
    let (x, y) = g.endpoints[e];
    let mut levels: Vec<f64> = z.labels.iter().map(|l| l.value).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut search = Search::new(g.n_vertices);
    let connected_at = |p: f64, search: &mut Search| {
        let open: Vec<bool> = z.labels.iter().map(|l| l.value <= p).collect();
        search.connected(g, &open, x, y, Some(e))
    };
    if !connected_at(1.0, &mut search) {
        return 1.0;
    }
    let (mut lo, mut hi) = (0usize, levels.len() - 1);
    if connected_at(levels[0], &mut search) {
        return levels[0];
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if connected_at(levels[mid], &mut search) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    levels[hi]
}

/// Atom weight `T - T / (T + (1 - T) q)` of the update law at threshold `T`.
pub fn atom_mass(t: f64, q: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    t - t / (t + (1.0 - t) * q)
}

/// Inverse-CDF draw from `P(U <= p) = p` for `p >= T`,
/// `p / (p + (1-p) q)` for `p < T`. Fresh tokens come from `next_token`.
pub fn sample_update(t: Threshold, params: ModelParams, rng: &mut Rng, next_token: &mut u64) -> Label {
    let v: f64 = rng.gen();
    sample_update_from(v, t, params.q, next_token)
}

/// Deterministic part of [`sample_update`] for a given uniform `v`.
pub fn sample_update_from(v: f64, t: Threshold, q: f64, next_token: &mut u64) -> Label {
    let lower = if t.value <= 0.0 { 0.0 } else { t.value / (t.value + (1.0 - t.value) * q) };
    let fresh = |value: f64, next_token: &mut u64| {
        let provenance = *next_token;
        *next_token += 1;
        Label { value, provenance }
    };
    if v < lower {
        fresh(v * q / (1.0 + v * (q - 1.0)), next_token)
    } else if v <= t.value {
        Label {
            value: t.value,
            provenance: t.provenance,
        }
    } else {
        fresh(v, next_token)
    }
}

pub struct CouplingChain {
    pub domain: Arc<LatticeDomain>,
    pub q: f64,
    pub bc: BoundaryCondition,
    graph: Arc<ClusterGraph>,
    z: LabelState,
    rng: Rng,
    next_token: u64,
    search: ThresholdSearch,
    step_counter: u64,
    atom_events: u64,
}

impl CouplingChain {
    /// Starts from labels 1 (empty at every p) under free conditions and
    /// labels 0 (full) otherwise, each label with its own token.
    pub fn new(domain: Arc<LatticeDomain>, q: f64, bc: BoundaryCondition, rng: Rng) -> Result<Self> {
        ModelParams::new(0.5, q)?;
        let graph = Arc::new(ClusterGraph::new(&domain, &bc)?);
        let start = if matches!(bc, BoundaryCondition::Free) { 1.0 } else { 0.0 };
        let labels = (0..domain.n_edges())
            .map(|k| Label {
                value: start,
                provenance: k as u64,
            })
            .collect();
        Ok(CouplingChain {
            q,
            bc,
            search: ThresholdSearch::new(graph.n_vertices),
            next_token: domain.n_edges() as u64,
            graph,
            domain,
            z: LabelState { labels },
            rng,
            step_counter: 0,
            atom_events: 0,
        })
    }

    pub fn with_labels(mut self, z: LabelState) -> Result<Self> {
        if z.len() != self.domain.n_edges() {
            return Err(RcmError::DomainMismatch("label state length".into()));
        }
        let max_token = z
            .labels
            .iter()
            .map(|l| l.provenance)
            .filter(|&t| t < BOUNDARY)
            .max()
            .unwrap_or(0);
        self.next_token = self.next_token.max(max_token + 1);
        self.z = z;
        Ok(self)
    }

    /// Replaces the label of a uniformly chosen edge.
    pub fn step(&mut self) {
        let e = self.rng.gen_range(0..self.z.len());
        self.update_edge(e);
    }

    /// Resamples the label of edge `e`.
    pub fn update_edge(&mut self, e: usize) {
        let t = self.search.threshold(&self.graph, &self.z, e);
        let v: f64 = self.rng.gen();
        let label = sample_update_from(v, t, self.q, &mut self.next_token);
        if label.provenance == t.provenance {
            self.atom_events += 1;
        }
        self.z.labels[e] = label;
        self.step_counter += 1;
    }

    pub fn sweep(&mut self) {
        for _ in 0..self.z.len() {
            self.step();
        }
    }

    /// Runs `sweeps` sweeps, handing the state to `collect` after every
    /// `thin`-th sweep.
    pub fn run_to_equilibrium(&mut self, sweeps: usize, thin: usize, mut collect: impl FnMut(&LabelState)) {
        let thin = thin.max(1);
        for s in 1..=sweeps {
            self.sweep();
            if s % thin == 0 {
                collect(&self.z);
            }
        }
    }

    pub fn labels(&self) -> &LabelState {
        &self.z
    }

    pub fn project(&self, p: f64) -> Configuration {
        project(&self.z, p)
    }

    pub fn graph(&self) -> &ClusterGraph {
        &self.graph
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn atom_events(&self) -> u64 {
        self.atom_events
    }

    pub fn threshold(&mut self, e: usize) -> Threshold {
        self.search.threshold(&self.graph, &self.z, e)
    }
}

/// Maximal groups of edges sharing a provenance token, ordered by their
/// smallest edge index.
pub fn clouds(z: &LabelState) -> Vec<Cloud> {
    let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (k, l) in z.labels.iter().enumerate() {
        groups.entry(l.provenance).or_default().push(k);
    }
    let mut out: Vec<Cloud> = groups
        .into_values()
        .map(|edges| Cloud {
            level: z.labels[edges[0]].value,
            edges,
        })
        .collect();
    out.sort_by_key(|c| c.edges[0]);
    out
}

/// CSV snapshot: edge, value (17 significant digits), provenance.
pub fn write_snapshot(z: &LabelState, out: &mut impl Write) -> Result<()> {
    writeln!(out, "edge,value,provenance")?;
    for (k, l) in z.labels.iter().enumerate() {
        writeln!(out, "{k},{:.16e},{}", l.value, l.provenance)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndependenceSummary {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_samples: usize,
    /// Empirical law of `omega_p`, indexed by configuration index.
    pub omega_frequencies: Vec<f64>,
}

/// Chi-square test that, given `omega_p`, the lower labels (on open
/// edges) and the upper labels (on closed edges) are independent.
/// Features: open edge `value <= p/2`; closed edge `value > (1+p)/2`.
pub fn conditional_independence_statistic(samples: &[LabelState], p: f64) -> Result<IndependenceSummary> {
    const MIN_SAMPLES: usize = 100_000;
    if samples.len() < MIN_SAMPLES {
        return Err(RcmError::Precondition(format!(
            "need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if n == 0 || n > 4 {
        return Err(RcmError::Precondition(format!("statistic needs 1..=4 edges, got {n}")));
    }
    let strata = 1usize << n;
    let mut tables: Vec<Vec<Vec<f64>>> = (0..strata)
        .map(|s| {
            let o = (s as u32).count_ones() as usize;
            vec![vec![0.0; 1 << (n - o)]; 1 << o]
        })
        .collect();
    let mut freq = vec![0.0; strata];
    for z in samples {
        let mut omega = 0usize;
        let (mut lo, mut hi) = (0usize, 0usize);
        let (mut lo_bit, mut hi_bit) = (0, 0);
        for (k, l) in z.labels.iter().enumerate() {
            if l.value <= p {
                omega |= 1 << k;
                if l.value <= p / 2.0 {
                    lo |= 1 << lo_bit;
                }
                lo_bit += 1;
            } else {
                if l.value > (1.0 + p) / 2.0 {
                    hi |= 1 << hi_bit;
                }
                hi_bit += 1;
            }
        }
        tables[omega][lo][hi] += 1.0;
        freq[omega] += 1.0;
    }
    let (mut statistic, mut df) = (0.0, 0usize);
    for t in &tables {
        let (s, d) = chi_square_independence(t);
        statistic += s;
        df += d;
    }
    let total = samples.len() as f64;
    Ok(IndependenceSummary {
        statistic,
        df,
        p_value: chi_square_p_value(statistic, df),
        n_samples: samples.len(),
        omega_frequencies: freq.into_iter().map(|f| f / total).collect(),
    })
}
