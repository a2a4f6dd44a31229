//! Desk-scale estimators for near-critical quantities: crossing
//! probabilities, correlation lengths, arm events, pivotal counts, edge
//! intensity and its derivative, influences, cloud statistics and the
//! reference exponent table.
//!
//! Every Monte Carlo estimate aggregates independent replicas. Replica `r`
//! owns its chain and the child stream `r` of the protocol seed; standard
//! errors are computed from replica means only.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coupling::{clouds, CouplingChain};
use crate::dynamics::HeatBathChain;
use crate::error::{RcmError, Result};
use crate::lattice::{build_box, build_torus, BcSpec, BoundaryCondition, LatticeDomain};
use crate::measure::{exact_distribution, Configuration, ExactDistribution, ModelParams};
use crate::rng::{child_stream, derive_seed};
use crate::stats::{mean, mean_and_se, variance};

pub const MIN_REPLICAS: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    Sweeny,
    CouplingProjection,
}

impl Sampler {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sweeny" => Ok(Sampler::Sweeny),
            "coupling" | "coupling-projection" | "coupling_projection" => Ok(Sampler::CouplingProjection),
            _ => Err(RcmError::InvalidParameter(format!("unknown sampler '{s}'"))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Sampler::Sweeny => "sweeny",
            Sampler::CouplingProjection => "coupling",
        }
    }
}

/// Sweeps are counted per replica; `thin` sweeps separate two samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    pub replicas: usize,
    pub samples_per_replica: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        if self.replicas < MIN_REPLICAS {
            return Err(RcmError::Budget(format!(
                "{} replicas requested, at least {MIN_REPLICAS} needed for an error bar",
                self.replicas
            )));
        }
        if self.samples_per_replica == 0 || self.thin == 0 {
            return Err(RcmError::Budget("samples_per_replica and thin must be positive".into()));
        }
        Ok(())
    }

    pub fn total_samples(&self) -> usize {
        self.replicas * self.samples_per_replica
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub params: ModelParams,
    pub bc: BcSpec,
    pub sampler: Sampler,
    pub budget: Budget,
    pub seed: u64,
}

impl Protocol {
    pub fn with_p(&self, p: f64) -> Result<Protocol> {
        Ok(Protocol {
            params: ModelParams::new(p, self.params.q)?,
            ..self.clone()
        })
    }

    pub fn with_seed(&self, seed: u64) -> Protocol {
        Protocol { seed, ..self.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub replicas: usize,
    pub p: f64,
    pub q: f64,
    pub n: usize,
    pub rho: f64,
    pub bc: String,
    pub seed: u64,
}

impl Estimate {
    fn from_replicas(values: &[f64], proto: &Protocol, n: usize, rho: f64) -> Estimate {
        let (value, std_error) = mean_and_se(values);
        Estimate {
            value,
            std_error,
            n_samples: proto.budget.total_samples(),
            replicas: values.len(),
            p: proto.params.p,
            q: proto.params.q,
            n,
            rho,
            bc: proto.bc.label(),
            seed: proto.seed,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// `[0, n] x [0, rho n]`
    Box { n: usize, rho_num: usize, rho_den: usize },
    Torus { n: usize },
}

impl Geometry {
    pub fn square(n: usize) -> Geometry {
        Geometry::Box { n, rho_num: 1, rho_den: 1 }
    }

    pub fn rectangle(n: usize, rho: f64) -> Result<Geometry> {
        let h = n as f64 * rho;
        if !(rho > 0.0) || h.fract() != 0.0 {
            return Err(RcmError::InvalidDomain(format!("n * rho = {h} is not a positive integer")));
        }
        Ok(Geometry::Box {
            n,
            rho_num: h as usize,
            rho_den: n,
        })
    }

    pub fn n(&self) -> usize {
        match *self {
            Geometry::Box { n, .. } | Geometry::Torus { n } => n,
        }
    }

    pub fn rho(&self) -> f64 {
        match *self {
            Geometry::Box { rho_num, rho_den, .. } => rho_num as f64 / rho_den as f64,
            Geometry::Torus { .. } => 1.0,
        }
    }

    pub fn build(&self) -> Result<LatticeDomain> {
        match *self {
            Geometry::Box { n, rho_num, rho_den } => build_box(n, n * rho_num / rho_den),
            Geometry::Torus { n } => build_torus(n),
        }
    }
}

// ---------------------------------------------------------------------------
// Replica engine

/// Runs the protocol's replicas on `domain`, feeding every sampled
/// configuration to `observe`, and returns the per-replica accumulators in
/// replica order.
pub fn replicate<A, I, F>(domain: &Arc<LatticeDomain>, proto: &Protocol, init: I, observe: F) -> Result<Vec<A>>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, &[bool]) + Sync,
{
    proto.budget.validate()?;
    let bc = proto.bc.resolve(domain)?;
    let b = proto.budget;
    (0..b.replicas)
        .into_par_iter()
        .map(|r| {
            let rng = child_stream(proto.seed, r as u64);
            let mut acc = init();
            match proto.sampler {
                Sampler::Sweeny => {
                    let mut chain = HeatBathChain::new(domain.clone(), proto.params, bc.clone(), rng)?;
                    chain.sweeps(b.burn_in);
                    for _ in 0..b.samples_per_replica {
                        chain.sweeps(b.thin);
                        observe(&mut acc, chain.states());
                    }
                }
                Sampler::CouplingProjection => {
                    let mut chain = CouplingChain::new(domain.clone(), proto.params.q, bc.clone(), rng)?;
                    let p = proto.params.p;
                    let mut open = vec![false; domain.n_edges()];
                    for _ in 0..b.burn_in {
                        chain.sweep();
                    }
                    for _ in 0..b.samples_per_replica {
                        for _ in 0..b.thin {
                            chain.sweep();
                        }
                        for (o, l) in open.iter_mut().zip(&chain.labels().labels) {
                            *o = l.value <= p;
                        }
                        observe(&mut acc, &open);
                    }
                }
            }
            Ok(acc)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default)]
struct MeanAcc {
    sum: f64,
    count: usize,
}

impl MeanAcc {
    fn push(&mut self, x: f64) {
        self.sum += x;
        self.count += 1;
    }

    fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }
}

fn indicator_estimate(
    domain: &Arc<LatticeDomain>,
    proto: &Protocol,
    n: usize,
    rho: f64,
    event: impl Fn(&mut Explorer, &[bool]) -> f64 + Sync,
) -> Result<Estimate> {
    let accs = replicate(
        domain,
        proto,
        || (MeanAcc::default(), Explorer::new(domain)),
        |(acc, ex), open| acc.push(event(ex, open)),
    )?;
    let means: Vec<f64> = accs.iter().map(|(a, _)| a.mean()).collect();
    Ok(Estimate::from_replicas(&means, proto, n, rho))
}

// ---------------------------------------------------------------------------
// Connectivity helpers on open configurations (real edges only)

/// Reusable graph search over the open edges of a domain.
pub struct Explorer {
    adj: Vec<Vec<(usize, usize)>>,
    mark: Vec<u32>,
    stamp: u32,
    stack: Vec<usize>,
}

impl Explorer {
    pub fn new(d: &LatticeDomain) -> Self {
        Explorer {
            adj: d.adjacency(),
            mark: vec![0; d.n_vertices()],
            stamp: 0,
            stack: Vec::new(),
        }
    }

    /// Marks every vertex reachable from `sources` through open edges other
    /// than `skip`, staying among vertices accepted by `inside`.
    pub fn explore(&mut self, sources: &[usize], open: &[bool], skip: Option<usize>, inside: impl Fn(usize) -> bool) {
        self.stamp = self.stamp.wrapping_add(1);
        if self.stamp == 0 {
            self.mark.iter_mut().for_each(|m| *m = 0);
            self.stamp = 1;
        }
        self.stack.clear();
        for &s in sources {
            if self.mark[s] != self.stamp && inside(s) {
                self.mark[s] = self.stamp;
                self.stack.push(s);
            }
        }
        while let Some(v) = self.stack.pop() {
            for &(w, k) in &self.adj[v] {
                if open[k] && Some(k) != skip && self.mark[w] != self.stamp && inside(w) {
                    self.mark[w] = self.stamp;
                    self.stack.push(w);
                }
            }
        }
    }

    pub fn reached(&self, v: usize) -> bool {
        self.mark[v] == self.stamp
    }

    pub fn any_reached(&self, vs: &[usize]) -> bool {
        vs.iter().any(|&v| self.reached(v))
    }
}

/// Open path from the bottom side to the top side.
pub fn vertical_crossing(ex: &mut Explorer, d: &LatticeDomain, open: &[bool]) -> bool {
    ex.explore(&d.bottom_side(), open, None, |_| true);
    ex.any_reached(&d.top_side())
}

/// Vertical crossing event with the side lists cached.
#[derive(Clone, Debug)]
pub struct CrossingEvent {
    pub bottom: Vec<usize>,
    pub top: Vec<usize>,
}

impl CrossingEvent {
    pub fn vertical(d: &LatticeDomain) -> Result<Self> {
        if d.periodic || d.height == 0 {
            return Err(RcmError::InvalidDomain("vertical crossing needs a box of positive height".into()));
        }
        Ok(CrossingEvent {
            bottom: d.bottom_side(),
            top: d.top_side(),
        })
    }

    pub fn holds(&self, ex: &mut Explorer, open: &[bool]) -> bool {
        ex.explore(&self.bottom, open, None, |_| true);
        ex.any_reached(&self.top)
    }
}

/// Number of edges whose flip changes the crossing event.
///
/// With a crossing these are the open edges separating bottom from top
/// (bridges between a super-source and a super-sink); without one they are
/// the closed edges joining the bottom cluster to the top cluster.
pub fn pivotal_count_of(d: &LatticeDomain, ev: &CrossingEvent, ex: &mut Explorer, open: &[bool]) -> usize {
    if ev.holds(ex, open) {
        bridge_pivotals(d, ev, open)
    } else {
        let from_bottom: Vec<bool> = (0..d.n_vertices()).map(|v| ex.reached(v)).collect();
        ex.explore(&ev.top, open, None, |_| true);
        d.edges
            .iter()
            .enumerate()
            .filter(|&(k, &(u, v))| {
                !open[k] && ((from_bottom[u] && ex.reached(v)) || (from_bottom[v] && ex.reached(u)))
            })
            .count()
    }
}

fn bridge_pivotals(d: &LatticeDomain, ev: &CrossingEvent, open: &[bool]) -> usize {
    let nv = d.n_vertices();
    let m = d.n_edges();
    let (s, t) = (nv, nv + 1);
    let mut adj: Vec<Vec<(usize, usize)>> = d.adjacency();
    adj.push(Vec::new());
    adj.push(Vec::new());
    let mut next_id = m;
    for &v in &ev.bottom {
        adj[v].push((s, next_id));
        adj[s].push((v, next_id));
        next_id += 1;
    }
    for &v in &ev.top {
        adj[v].push((t, next_id));
        adj[t].push((v, next_id));
        next_id += 1;
    }
    let usable = |k: usize| k >= m || open[k];
    const UNSEEN: usize = usize::MAX;
    let mut disc = vec![UNSEEN; nv + 2];
    let mut low = vec![0usize; nv + 2];
    let mut has_t = vec![false; nv + 2];
    let mut time = 0;
    let mut count = 0;
    // (vertex, edge used to enter, next adjacency position)
    let mut stack: Vec<(usize, usize, usize)> = vec![(s, usize::MAX, 0)];
    disc[s] = 0;
    low[s] = 0;
    while let Some(&mut (v, pe, ref mut pos)) = stack.last_mut() {
        if *pos < adj[v].len() {
            let (w, k) = adj[v][*pos];
            *pos += 1;
            if k == pe || !usable(k) {
                continue;
            }
            if disc[w] == UNSEEN {
                time += 1;
                disc[w] = time;
                low[w] = time;
                has_t[w] = w == t;
                stack.push((w, k, 0));
            } else {
                low[v] = low[v].min(disc[w]);
            }
        } else {
            stack.pop();
            if let Some(&(u, _, _)) = stack.last() {
                low[u] = low[u].min(low[v]);
                has_t[u] |= has_t[v];
                if low[v] > disc[u] && has_t[v] && pe < m {
                    count += 1;
                }
            }
        }
    }
    count
}

/// Four alternating arms from edge `e = (x, y)`: with `e` ignored, both
/// endpoints reach the boundary of the window `inside` and are not joined
/// inside it. By planarity the two primal arms are then separated by two
/// dual arms.
pub fn four_arm_event(
    ex: &mut Explorer,
    open: &[bool],
    e: usize,
    ends: (usize, usize),
    window_boundary: &[usize],
    inside: impl Fn(usize) -> bool + Copy,
) -> bool {
    ex.explore(&[ends.0], open, Some(e), inside);
    if ex.reached(ends.1) || !ex.any_reached(window_boundary) {
        return false;
    }
    ex.explore(&[ends.1], open, Some(e), inside);
    ex.any_reached(window_boundary)
}

// ---------------------------------------------------------------------------
// Estimators

/// Probability of an open vertical crossing of `[0, n] x [0, rho n]`.
pub fn crossing_probability(n: usize, rho: f64, proto: &Protocol) -> Result<Estimate> {
    let geom = Geometry::rectangle(n, rho)?;
    let d = Arc::new(geom.build()?);
    let ev = CrossingEvent::vertical(&d)?;
    indicator_estimate(&d, proto, n, rho, |ex, open| ev.holds(ex, open) as u8 as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Subcritical,
    Supercritical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthStatus {
    /// Crossed the threshold with two standard errors to spare.
    Crossed,
    /// Accepted on the point estimate after the budget widening ran out.
    Straddled,
    /// Never crossed on the grid.
    Censored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationLength {
    pub side: Side,
    pub status: LengthStatus,
    /// Smallest grid size that crossed; `None` when censored.
    pub n_hat: Option<usize>,
    /// Log-linear interpolation of the crossing scale between the last
    /// grid point above the threshold and `n_hat`.
    pub interpolated: Option<f64>,
    pub estimates: Vec<Estimate>,
}

/// Grid of sizes `n_min * 2^{k/4}` rounded, up to `n_max`.
pub fn correlation_grid(n_min: usize, n_max: usize) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    let mut k = 0;
    loop {
        let n = (n_min.max(1) as f64 * 2f64.powf(k as f64 / 4.0)).round() as usize;
        if n > n_max {
            break;
        }
        if out.last() != Some(&n) {
            out.push(n);
        }
        k += 1;
    }
    out
}

/// Smallest grid size at which the crossing probability leaves the critical
/// window: `<= epsilon` below the self-dual point, `>= 1 - epsilon` above.
/// A point whose estimate lies within two standard errors of the threshold
/// is re-run with doubled replicas up to `max_widen` times.
pub fn correlation_length(
    epsilon: f64,
    rho: f64,
    proto: &Protocol,
    n_grid: &[usize],
    max_widen: usize,
) -> Result<CorrelationLength> {
    let p = proto.params.p;
    let psd = crate::measure::self_dual_point(proto.params.q);
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(RcmError::InvalidParameter("epsilon must lie in (0, 1/2)".into()));
    }
    if p == psd {
        return Err(RcmError::InvalidParameter("correlation length is undefined at the self-dual point".into()));
    }
    if n_grid.is_empty() || n_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RcmError::InvalidParameter("n_grid must be non-empty and increasing".into()));
    }
    let side = if p < psd { Side::Subcritical } else { Side::Supercritical };
    let gap = |est: &Estimate| match side {
        Side::Subcritical => est.value,
        Side::Supercritical => 1.0 - est.value,
    };
    let mut estimates = Vec::new();
    let mut prev: Option<(usize, f64)> = None;
    for &n in n_grid {
        let mut local = proto.with_seed(derive_seed(proto.seed, n as u64));
        let mut widen = 0;
        let (est, status) = loop {
            let est = crossing_probability(n, rho, &local)?;
            let g = gap(&est);
            if g + 2.0 * est.std_error <= epsilon {
                break (est, Some(LengthStatus::Crossed));
            }
            if g - 2.0 * est.std_error > epsilon {
                break (est, None);
            }
            if widen == max_widen {
                let st = if g <= epsilon { Some(LengthStatus::Straddled) } else { None };
                break (est, st);
            }
            local.budget.replicas *= 2;
            widen += 1;
        };
        let g = gap(&est);
        estimates.push(est);
        if let Some(status) = status {
            let interpolated = match prev {
                Some((n0, g0)) if g0 > g => {
                    let (l0, l1) = ((n0 as f64).ln(), (n as f64).ln());
                    let t = ((g0 - epsilon) / (g0 - g)).clamp(0.0, 1.0);
                    (l0 + t * (l1 - l0)).exp()
                }
                _ => n as f64,
            };
            return Ok(CorrelationLength {
                side,
                status,
                n_hat: Some(n),
                interpolated: Some(interpolated),
                estimates,
            });
        }
        prev = Some((n, g));
    }
    Ok(CorrelationLength {
        side,
        status: LengthStatus::Censored,
        n_hat: None,
        interpolated: None,
        estimates,
    })
}

/// `P(0 <-> boundary)` on `[-n, n]^2`, realised as `build_box(2n, 2n)` with
/// the origin at `(n, n)`.
pub fn one_arm_probability(n: usize, proto: &Protocol) -> Result<Estimate> {
    if n == 0 {
        return Err(RcmError::InvalidDomain("one-arm radius must be positive".into()));
    }
    let d = Arc::new(build_box(2 * n, 2 * n)?);
    let centre = d.vertex_index(n as i64, n as i64).unwrap();
    let boundary = d.boundary_vertices.clone();
    indicator_estimate(&d, proto, n, 1.0, |ex, open| {
        ex.explore(&[centre], open, None, |_| true);
        ex.any_reached(&boundary) as u8 as f64
    })
}

/// Mean number of pivotal edges for the vertical crossing of `[0, n]^2`.
pub fn pivotal_count(n: usize, proto: &Protocol) -> Result<Estimate> {
    let d = Arc::new(build_box(n, n)?);
    let ev = CrossingEvent::vertical(&d)?;
    indicator_estimate(&d, proto, n, 1.0, |ex, open| pivotal_count_of(&d, &ev, ex, open) as f64)
}

/// Edge `((l, l), (l + 1, l))` at the centre of `build_box(2l, 2l)` and the
/// window `[l - r, l + 1 + r] x [l - r, l + r]`, `r = max(1, l / 2)`.
pub struct FourArmSetup {
    pub domain: Arc<LatticeDomain>,
    pub edge: usize,
    pub ends: (usize, usize),
    pub radius: usize,
    pub window_boundary: Vec<usize>,
    lo: (i64, i64),
    hi: (i64, i64),
}

impl FourArmSetup {
    pub fn new(l: usize) -> Result<Self> {
        if l < 2 {
            return Err(RcmError::InvalidDomain("four-arm scale must be at least 2".into()));
        }
        let d = build_box(2 * l, 2 * l)?;
        let li = l as i64;
        let r = (l / 2).max(1) as i64;
        let x = d.vertex_index(li, li).unwrap();
        let y = d.vertex_index(li + 1, li).unwrap();
        let edge = d.edge_between(x, y).unwrap();
        let lo = (li - r, li - r);
        let hi = (li + 1 + r, li + r);
        let window_boundary = (0..d.n_vertices())
            .filter(|&v| {
                let (a, b) = d.vertices[v];
                a >= lo.0 && a <= hi.0 && b >= lo.1 && b <= hi.1 && (a == lo.0 || a == hi.0 || b == lo.1 || b == hi.1)
            })
            .collect();
        Ok(FourArmSetup {
            domain: Arc::new(d),
            edge,
            ends: (x, y),
            radius: r as usize,
            window_boundary,
            lo,
            hi,
        })
    }

    pub fn inside(&self) -> impl Fn(usize) -> bool + Copy + '_ {
        move |v| {
            let (a, b) = self.domain.vertices[v];
            a >= self.lo.0 && a <= self.hi.0 && b >= self.lo.1 && b <= self.hi.1
        }
    }

    pub fn holds(&self, ex: &mut Explorer, open: &[bool]) -> bool {
        four_arm_event(ex, open, self.edge, self.ends, &self.window_boundary, self.inside())
    }
}

/// Probability of the four-arm event at scale `l` (see [`FourArmSetup`]).
pub fn four_arm_probability(l: usize, proto: &Protocol) -> Result<Estimate> {
    let setup = FourArmSetup::new(l)?;
    let d = setup.domain.clone();
    indicator_estimate(&d, proto, l, 1.0, |ex, open| setup.holds(ex, open) as u8 as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityEstimate {
    /// `phi(e open)` averaged over edges.
    pub intensity: Estimate,
    /// `Var(|omega|) / |E|`
    pub variance_proxy: Estimate,
}

pub fn edge_intensity(geom: Geometry, proto: &Protocol) -> Result<IntensityEstimate> {
    let d = Arc::new(geom.build()?);
    let m = d.n_edges() as f64;
    let accs = replicate(&d, proto, Vec::new, |xs: &mut Vec<f64>, open| {
        xs.push(open.iter().filter(|&&b| b).count() as f64)
    })?;
    let ei: Vec<f64> = accs.iter().map(|xs| mean(xs) / m).collect();
    let var: Vec<f64> = accs.iter().map(|xs| variance(xs) / m).collect();
    Ok(IntensityEstimate {
        intensity: Estimate::from_replicas(&ei, proto, geom.n(), geom.rho()),
        variance_proxy: Estimate::from_replicas(&var, proto, geom.n(), geom.rho()),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivativeEstimate {
    /// `(EI(p + dp) - EI(p - dp)) / (2 dp)` with common random numbers.
    pub finite_difference: Estimate,
    /// `Var(|omega|) / (|E| p (1 - p))`
    pub variance_route: Estimate,
}

/// Two estimators of `d EI / dp`. The finite difference couples its two
/// chains through a shared random stream (the heat-bath update is monotone,
/// so the chains stay ordered); the coupling sampler projects one label
/// state at both parameters.
pub fn edge_intensity_derivative(geom: Geometry, proto: &Protocol, dp: f64) -> Result<DerivativeEstimate> {
    let p = proto.params.p;
    if !(dp > 0.0 && p - dp > 0.0 && p + dp < 1.0) {
        return Err(RcmError::InvalidParameter("need dp > 0 and p +- dp in (0, 1)".into()));
    }
    proto.budget.validate()?;
    let d = Arc::new(geom.build()?);
    let bc = proto.bc.resolve(&d)?;
    let m = d.n_edges() as f64;
    let b = proto.budget;
    let q = proto.params.q;
    let fd: Vec<f64> = (0..b.replicas)
        .into_par_iter()
        .map(|r| -> Result<f64> {
            let mut diff = 0.0;
            match proto.sampler {
                Sampler::Sweeny => {
                    let mk = |pp: f64| -> Result<HeatBathChain> {
                        let init = Configuration::from_bools(&vec![
                            crate::dynamics::default_initial_open(&bc, p);
                            d.n_edges()
                        ]);
                        HeatBathChain::with_backend(
                            d.clone(),
                            ModelParams::new(pp, q)?,
                            bc.clone(),
                            crate::connectivity::bfs_backend(Arc::new(crate::connectivity::ClusterGraph::new(&d, &bc)?)),
                            child_stream(proto.seed, r as u64),
                            &init,
                        )
                    };
                    let mut lo = mk(p - dp)?;
                    let mut hi = mk(p + dp)?;
                    for _ in 0..b.burn_in {
                        lo.sweep();
                        hi.sweep();
                    }
                    for _ in 0..b.samples_per_replica {
                        lo.sweeps(b.thin);
                        hi.sweeps(b.thin);
                        diff += (hi.n_open() as f64 - lo.n_open() as f64) / m;
                    }
                }
                Sampler::CouplingProjection => {
                    let mut chain = CouplingChain::new(d.clone(), q, bc.clone(), child_stream(proto.seed, r as u64))?;
                    for _ in 0..b.burn_in {
                        chain.sweep();
                    }
                    for _ in 0..b.samples_per_replica {
                        for _ in 0..b.thin {
                            chain.sweep();
                        }
                        let between = chain
                            .labels()
                            .labels
                            .iter()
                            .filter(|l| l.value > p - dp && l.value <= p + dp)
                            .count();
                        diff += between as f64 / m;
                    }
                }
            }
            Ok(diff / b.samples_per_replica as f64 / (2.0 * dp))
        })
        .collect::<Result<_>>()?;
    let var_proto = proto.with_seed(derive_seed(proto.seed, 1));
    let var = edge_intensity(geom, &var_proto)?.variance_proxy;
    let scale = 1.0 / (p * (1.0 - p));
    Ok(DerivativeEstimate {
        finite_difference: Estimate::from_replicas(&fd, proto, geom.n(), geom.rho()),
        variance_route: Estimate {
            value: var.value * scale,
            std_error: var.std_error * scale,
            ..var
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceEstimate {
    pub influence: Estimate,
    pub given_open: Estimate,
    pub given_closed: Estimate,
}

/// `phi(A | e open) - phi(A | e closed)` for the vertical crossing `A` of
/// `[0, n] x [0, rho n]`, conditioning by rejection (equilibrium samples are
/// sorted by the state of `e`).
pub fn influence(e: usize, n: usize, rho: f64, proto: &Protocol) -> Result<InfluenceEstimate> {
    let geom = Geometry::rectangle(n, rho)?;
    let d = Arc::new(geom.build()?);
    if e >= d.n_edges() {
        return Err(RcmError::InvalidParameter(format!("edge {e} not in the domain")));
    }
    let ev = CrossingEvent::vertical(&d)?;
    let accs = replicate(
        &d,
        proto,
        || ([MeanAcc::default(), MeanAcc::default()], Explorer::new(&d)),
        |(acc, ex), open| acc[open[e] as usize].push(ev.holds(ex, open) as u8 as f64),
    )?;
    if accs.iter().any(|(a, _)| a[0].count == 0 || a[1].count == 0) {
        return Err(RcmError::Budget(format!("a replica never saw edge {e} in both states")));
    }
    let opened: Vec<f64> = accs.iter().map(|(a, _)| a[1].mean()).collect();
    let closed: Vec<f64> = accs.iter().map(|(a, _)| a[0].mean()).collect();
    let diff: Vec<f64> = opened.iter().zip(&closed).map(|(a, b)| a - b).collect();
    Ok(InfluenceEstimate {
        influence: Estimate::from_replicas(&diff, proto, n, rho),
        given_open: Estimate::from_replicas(&opened, proto, n, rho),
        given_closed: Estimate::from_replicas(&closed, proto, n, rho),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudSummary {
    pub n: usize,
    pub q: f64,
    pub n_samples: usize,
    /// Cloud size -> number of occurrences over all samples.
    pub size_histogram: BTreeMap<usize, u64>,
    /// Levels of multi-edge clouds in 20 bins over `[0, 1]`.
    pub level_histogram: Vec<u64>,
    /// Largest Chebyshev distance between edge midpoints within one cloud.
    pub max_diameter: f64,
    /// Fraction of samples holding a cloud of at least two edges.
    pub multi_edge_frequency: f64,
    pub multi_edge_std_error: f64,
}

pub const LEVEL_BINS: usize = 20;

#[derive(Default)]
struct CloudAcc {
    sizes: BTreeMap<usize, u64>,
    levels: Vec<u64>,
    diameter: f64,
    multi: MeanAcc,
}

/// Cloud statistics of equilibrium label states on `build_box(n, n)`.
pub fn cloud_statistics(n: usize, q: f64, bc: &BcSpec, budget: Budget, seed: u64) -> Result<CloudSummary> {
    budget.validate()?;
    ModelParams::new(0.5, q)?;
    let d = Arc::new(build_box(n, n)?);
    let bcr = bc.resolve(&d)?;
    let mids: Vec<(f64, f64)> = d
        .edges
        .iter()
        .map(|&(u, v)| {
            let (a, b) = (d.vertices[u], d.vertices[v]);
            ((a.0 + b.0) as f64 / 2.0, (a.1 + b.1) as f64 / 2.0)
        })
        .collect();
    let accs: Vec<CloudAcc> = (0..budget.replicas)
        .into_par_iter()
        .map(|r| -> Result<CloudAcc> {
            let mut chain = CouplingChain::new(d.clone(), q, bcr.clone(), child_stream(seed, r as u64))?;
            let mut acc = CloudAcc {
                levels: vec![0; LEVEL_BINS],
                ..Default::default()
            };
            for _ in 0..budget.burn_in {
                chain.sweep();
            }
            for _ in 0..budget.samples_per_replica {
                for _ in 0..budget.thin {
                    chain.sweep();
                }
                let mut multi = false;
                for c in clouds(chain.labels()) {
                    *acc.sizes.entry(c.edges.len()).or_default() += 1;
                    if c.edges.len() >= 2 {
                        multi = true;
                        let bin = ((c.level * LEVEL_BINS as f64) as usize).min(LEVEL_BINS - 1);
                        acc.levels[bin] += 1;
                        for (i, &a) in c.edges.iter().enumerate() {
                            for &b in &c.edges[i + 1..] {
                                let dist = (mids[a].0 - mids[b].0).abs().max((mids[a].1 - mids[b].1).abs());
                                acc.diameter = acc.diameter.max(dist);
                            }
                        }
                    }
                }
                acc.multi.push(multi as u8 as f64);
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut sizes = BTreeMap::new();
    let mut levels = vec![0; LEVEL_BINS];
    let mut diameter: f64 = 0.0;
    for a in &accs {
        for (&k, &v) in &a.sizes {
            *sizes.entry(k).or_default() += v;
        }
        for (l, v) in levels.iter_mut().zip(&a.levels) {
            *l += v;
        }
        diameter = diameter.max(a.diameter);
    }
    let freqs: Vec<f64> = accs.iter().map(|a| a.multi.mean()).collect();
    let (f, se) = mean_and_se(&freqs);
    Ok(CloudSummary {
        n,
        q,
        n_samples: budget.total_samples(),
        size_histogram: sizes,
        level_histogram: levels,
        max_diameter: diameter,
        multi_edge_frequency: f,
        multi_edge_std_error: se,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenRow {
    pub p: f64,
    pub correlation_length: CorrelationLength,
    /// Scale used for the arm event: the rounded interpolated length.
    pub scale: usize,
    pub four_arm: Estimate,
    /// `L^2 alpha_4(L) |p - p_c|` with the interpolated `L`.
    pub product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KestenConfig {
    pub epsilon: f64,
    pub p_grid: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub max_widen: usize,
    pub crossing_budget: Budget,
    pub arm_budget: Budget,
    pub bc: BcSpec,
    pub seed: u64,
}

/// Kesten's scaling relation for percolation: `L(p)`, the critical
/// four-arm probability at that scale, and their product with `|p - 1/2|`.
pub fn kesten_relation_check(cfg: &KestenConfig) -> Result<Vec<KestenRow>> {
    let pc = 0.5;
    let mut rows = Vec::new();
    for (i, &p) in cfg.p_grid.iter().enumerate() {
        let proto = Protocol {
            params: ModelParams::new(p, 1.0)?,
            bc: cfg.bc.clone(),
            sampler: Sampler::Sweeny,
            budget: cfg.crossing_budget,
            seed: derive_seed(cfg.seed, i as u64),
        };
        let cl = correlation_length(cfg.epsilon, 1.0, &proto, &cfg.n_grid, cfg.max_widen)?;
        let l = cl
            .interpolated
            .ok_or_else(|| RcmError::Budget(format!("correlation length censored at p = {p}")))?;
        let scale = (l.round() as usize).max(2);
        let arm_proto = Protocol {
            params: ModelParams::new(pc, 1.0)?,
            bc: BcSpec::Free,
            sampler: Sampler::Sweeny,
            budget: cfg.arm_budget,
            seed: derive_seed(cfg.seed, 1000 + scale as u64),
        };
        let four_arm = four_arm_probability(scale, &arm_proto)?;
        rows.push(KestenRow {
            p,
            product: l * l * four_arm.value * (p - pc).abs(),
            correlation_length: cl,
            scale,
            four_arm,
        });
    }
    Ok(rows)
}

/// Kesten's relation holds for Bernoulli percolation only.
pub fn check_kesten_input(q: f64) -> Result<()> {
    if q != 1.0 {
        return Err(RcmError::InvalidParameter("the Kesten relation check runs at q = 1".into()));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceExponents {
    pub u: f64,
    pub alpha: f64,
    pub beta: f64,
    pub nu: f64,
    pub eta: f64,
    pub xi1: f64,
    pub xi4: f64,
}

pub fn reference_exponents(q: f64) -> Result<ReferenceExponents> {
    if !(1.0..=4.0).contains(&q) {
        return Err(RcmError::InvalidParameter("reference exponents need q in [1, 4]".into()));
    }
    let u = 2.0 / PI * (q.sqrt() / 2.0).min(1.0).acos();
    Ok(ReferenceExponents {
        u,
        alpha: 2.0 * (1.0 - 2.0 * u) / (3.0 * (1.0 - u)),
        beta: (1.0 + u) / 12.0,
        nu: (2.0 - u) / (3.0 * (1.0 - u)),
        eta: (1.0 - u * u) / (2.0 * (2.0 - u)),
        xi1: (1.0 - u * u) / (4.0 * (2.0 - u)),
        xi4: 2.5 - 0.75 * u - 1.0 / (2.0 - u),
    })
}

// ---------------------------------------------------------------------------
// Exact counterparts on enumerable domains

/// Exact probability of the vertical crossing.
pub fn exact_crossing_probability(d: &LatticeDomain, dist: &ExactDistribution) -> Result<f64> {
    let ev = CrossingEvent::vertical(d)?;
    let mut ex = Explorer::new(d);
    Ok(exact_expectation(dist, |open| ev.holds(&mut ex, open) as u8 as f64))
}

/// `E[f(omega)]` under an enumerated distribution.
pub fn exact_expectation(dist: &ExactDistribution, mut f: impl FnMut(&[bool]) -> f64) -> f64 {
    let m = dist.n_edges;
    let mut open = vec![false; m];
    dist.probabilities
        .iter()
        .enumerate()
        .filter(|(_, &pr)| pr > 0.0)
        .map(|(idx, &pr)| {
            for (k, o) in open.iter_mut().enumerate() {
                *o = (idx >> k) & 1 == 1;
            }
            pr * f(&open)
        })
        .sum()
}

/// Exact `phi(A | e open) - phi(A | e closed)`.
pub fn exact_influence(dist: &ExactDistribution, e: usize, mut event: impl FnMut(&[bool]) -> bool) -> f64 {
    let mut pa = [0.0; 2];
    let mut pe = [0.0; 2];
    let m = dist.n_edges;
    let mut open = vec![false; m];
    for (idx, &pr) in dist.probabilities.iter().enumerate() {
        for (k, o) in open.iter_mut().enumerate() {
            *o = (idx >> k) & 1 == 1;
        }
        let s = open[e] as usize;
        pe[s] += pr;
        if event(&open) {
            pa[s] += pr;
        }
    }
    pa[1] / pe[1] - pa[0] / pe[0]
}

/// Exact `d phi(A) / dp` through `Cov(1_A, |omega|) / (p (1 - p))`.
pub fn exact_event_derivative(dist: &ExactDistribution, p: f64, mut event: impl FnMut(&[bool]) -> bool) -> f64 {
    let mut ea = 0.0;
    let mut eo = 0.0;
    let mut eao = 0.0;
    let m = dist.n_edges;
    let mut open = vec![false; m];
    for (idx, &pr) in dist.probabilities.iter().enumerate() {
        for (k, o) in open.iter_mut().enumerate() {
            *o = (idx >> k) & 1 == 1;
        }
        let a = event(&open) as u8 as f64;
        let o = (idx as u64).count_ones() as f64;
        ea += pr * a;
        eo += pr * o;
        eao += pr * a * o;
    }
    (eao - ea * eo) / (p * (1.0 - p))
}

/// Russo-type sum `sum_e phi(omega_e)(1 - phi(omega_e)) I_A(e) / (p (1 - p))`.
pub fn russo_sum(dist: &ExactDistribution, p: f64, event: impl Fn(&[bool]) -> bool) -> f64 {
    (0..dist.n_edges)
        .map(|e| {
            let pe = dist.edge_marginal(e);
            pe * (1.0 - pe) * exact_influence(dist, e, &event)
        })
        .sum::<f64>()
        / (p * (1.0 - p))
}

fn state_index(open: &[bool]) -> usize {
    open.iter().enumerate().fold(0, |acc, (k, &b)| acc | ((b as usize) << k))
}

/// Empirical law of the sampled configurations, pooled over replicas and
/// indexed like [`ExactDistribution::probabilities`].
pub fn empirical_distribution(d: &Arc<LatticeDomain>, proto: &Protocol) -> Result<Vec<f64>> {
    if d.n_edges() > crate::measure::ENUMERATION_CAP {
        return Err(RcmError::TooLarge {
            edges: d.n_edges(),
            cap: crate::measure::ENUMERATION_CAP,
        });
    }
    let size = 1usize << d.n_edges();
    let counts = replicate(d, proto, || vec![0u64; size], |c, open| c[state_index(open)] += 1)?;
    let total = proto.budget.total_samples() as f64;
    let mut out = vec![0.0; size];
    for c in &counts {
        for (o, &k) in out.iter_mut().zip(c) {
            *o += k as f64 / total;
        }
    }
    Ok(out)
}

/// Empirical laws of the projections of one coupling chain at every `p`
/// in `ps` (all projections come from the same label states).
pub fn empirical_projections(
    d: &Arc<LatticeDomain>,
    q: f64,
    bc: &BcSpec,
    ps: &[f64],
    budget: Budget,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    budget.validate()?;
    if d.n_edges() > crate::measure::ENUMERATION_CAP {
        return Err(RcmError::TooLarge {
            edges: d.n_edges(),
            cap: crate::measure::ENUMERATION_CAP,
        });
    }
    let bcr = bc.resolve(d)?;
    let size = 1usize << d.n_edges();
    let counts: Vec<Vec<Vec<u64>>> = (0..budget.replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<Vec<u64>>> {
            let mut chain = CouplingChain::new(d.clone(), q, bcr.clone(), child_stream(seed, r as u64))?;
            let mut c = vec![vec![0u64; size]; ps.len()];
            for _ in 0..budget.burn_in {
                chain.sweep();
            }
            for _ in 0..budget.samples_per_replica {
                for _ in 0..budget.thin {
                    chain.sweep();
                }
                for (j, &p) in ps.iter().enumerate() {
                    let idx = chain
                        .labels()
                        .labels
                        .iter()
                        .enumerate()
                        .fold(0usize, |acc, (k, l)| acc | (((l.value <= p) as usize) << k));
                    c[j][idx] += 1;
                }
            }
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let total = budget.total_samples() as f64;
    let mut out = vec![vec![0.0; size]; ps.len()];
    for c in &counts {
        for (o, cj) in out.iter_mut().zip(c) {
            for (x, &k) in o.iter_mut().zip(cj) {
                *x += k as f64 / total;
            }
        }
    }
    Ok(out)
}

/// Expected total-variation distance of an `n`-sample empirical law from
/// `probs` under independent sampling: about `sqrt(2/pi) / 2 * sum sqrt(p(1-p)) / sqrt(n)`.
pub fn expected_tv_noise(probs: &[f64], n: f64) -> f64 {
    let s: f64 = probs.iter().map(|p| (p * (1.0 - p)).sqrt()).sum();
    (2.0 / PI).sqrt() / 2.0 * s / n.sqrt()
}

/// Exact distribution under a boundary specification.
pub fn exact_for(d: &LatticeDomain, params: ModelParams, bc: &BcSpec) -> Result<ExactDistribution> {
    let bcr: BoundaryCondition = bc.resolve(d)?;
    exact_distribution(d, params, &bcr)
}
