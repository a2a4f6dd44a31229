//! Sweeny heat-bath dynamics: random-scan single-edge Gibbs updates whose
//! open probability depends only on whether the endpoints are otherwise
//! connected.

use std::sync::Arc;

use rand::Rng as _;

use crate::connectivity::{bfs_backend, BfsBackend, ClusterGraph, ConnectivityBackend};
use crate::error::{RcmError, Result};
use crate::lattice::{BoundaryCondition, LatticeDomain};
use crate::measure::{Configuration, ModelParams};
use crate::rng::Rng;

/// `p` if the endpoints are connected off the edge, `p / (p + (1-p) q)` otherwise.
pub fn conditional_open_probability(connected_without_e: bool, params: ModelParams) -> f64 {
    let (p, q) = (params.p, params.q);
    if connected_without_e {
        p
    } else if p == 0.0 {
        0.0
    } else {
        p / (p + (1.0 - p) * q)
    }
}

/// Burn-in in sweeps for linear size `n`.
pub fn default_burn_in(n: usize) -> usize {
    100 * n.max(1)
}

/// All-closed under free conditions, all-open otherwise; `p` in `{0, 1}`
/// forces the matching extreme.
pub fn default_initial_open(bc: &BoundaryCondition, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        !matches!(bc, BoundaryCondition::Free)
    }
}

pub struct HeatBathChain<B: ConnectivityBackend = BfsBackend> {
    pub domain: Arc<LatticeDomain>,
    pub params: ModelParams,
    pub bc: BoundaryCondition,
    backend: B,
    rng: Rng,
    step_counter: u64,
    p_connected: f64,
    p_disconnected: f64,
    n_edges: usize,
}

impl HeatBathChain<BfsBackend> {
    /// Chain with the breadth-first backend and the default initial state.
    pub fn new(domain: Arc<LatticeDomain>, params: ModelParams, bc: BoundaryCondition, rng: Rng) -> Result<Self> {
        let graph = Arc::new(ClusterGraph::new(&domain, &bc)?);
        let backend = bfs_backend(graph);
        let n = domain.n_edges();
        let init = if default_initial_open(&bc, params.p) {
            Configuration::all_open(n)
        } else {
            Configuration::all_closed(n)
        };
        HeatBathChain::with_backend(domain, params, bc, backend, rng, &init)
    }
}

impl<B: ConnectivityBackend> HeatBathChain<B> {
    pub fn with_backend(
        domain: Arc<LatticeDomain>,
        params: ModelParams,
        bc: BoundaryCondition,
        mut backend: B,
        rng: Rng,
        initial: &Configuration,
    ) -> Result<Self> {
        ModelParams::new(params.p, params.q)?;
        if initial.len() != domain.n_edges() || backend.graph().n_real_edges != domain.n_edges() {
            return Err(RcmError::DomainMismatch("initial state or backend does not fit the domain".into()));
        }
        backend.load(initial);
        Ok(HeatBathChain {
            n_edges: domain.n_edges(),
            p_connected: conditional_open_probability(true, params),
            p_disconnected: conditional_open_probability(false, params),
            domain,
            params,
            bc,
            backend,
            rng,
            step_counter: 0,
        })
    }

    /// Resamples one uniformly chosen edge.
    #[inline]
    pub fn step(&mut self) {
        let e = self.rng.gen_range(0..self.n_edges);
        let u: f64 = self.rng.gen();
        // At q = 1 both probabilities agree and the query is skipped.
        let prob = if self.p_connected == self.p_disconnected || self.backend.connected_without(e) {
            self.p_connected
        } else {
            self.p_disconnected
        };
        self.backend.set_edge(e, u < prob);
        self.step_counter += 1;
    }

    /// `|E|` steps.
    pub fn sweep(&mut self) {
        for _ in 0..self.n_edges {
            self.step();
        }
    }

    pub fn sweeps(&mut self, k: usize) {
        for _ in 0..k {
            self.sweep();
        }
    }

    /// Runs `sweeps` sweeps and hands a snapshot to `collect` after every
    /// `thin`-th sweep.
    pub fn run(&mut self, sweeps: usize, thin: usize, mut collect: impl FnMut(&Configuration)) {
        let thin = thin.max(1);
        for s in 1..=sweeps {
            self.sweep();
            if s % thin == 0 {
                collect(&self.configuration());
            }
        }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::from_bools(self.backend.states())
    }

    pub fn states(&self) -> &[bool] {
        self.backend.states()
    }

    /// Index of the current state as in [`Configuration::index`] (`|E| <= 64`).
    pub fn state_index(&self) -> u64 {
        self.backend
            .states()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &b)| acc | ((b as u64) << k))
    }

    pub fn n_open(&self) -> usize {
        self.backend.states().iter().filter(|&&b| b).count()
    }

    pub fn step_counter(&self) -> u64 {
        self.step_counter
    }

    pub fn n_edges(&self) -> usize {
        self.n_edges
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn graph(&self) -> &ClusterGraph {
        self.backend.graph()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::unionfind_rebuild_backend;
    use crate::lattice::build_box;
    use crate::measure::{cluster_count, exact_distribution, weight};
    use crate::rng::child_stream;

    fn pr(p: f64, q: f64) -> ModelParams {
        ModelParams::new(p, q).unwrap()
    }

    #[test]
    fn conditional_probabilities() {
        assert_eq!(conditional_open_probability(true, pr(0.5, 2.0)), 0.5);
        assert!((conditional_open_probability(false, pr(0.5, 2.0)) - 1.0 / 3.0).abs() < 1e-15);
        for p in [0.1, 0.5, 0.9] {
            assert_eq!(conditional_open_probability(false, pr(p, 1.0)), p);
        }
    }

    /// Full single-step kernel built from the heat-bath rule.
    fn kernel(d: &LatticeDomain, params: ModelParams, bc: &BoundaryCondition) -> Vec<Vec<f64>> {
        let n = d.n_edges();
        let total = 1usize << n;
        let graph = Arc::new(ClusterGraph::new(d, bc).unwrap());
        let mut b = bfs_backend(graph);
        let mut k = vec![vec![0.0; total]; total];
        for s in 0..total {
            b.load(&Configuration::from_index(s as u64, n));
            for e in 0..n {
                let prob = conditional_open_probability(b.connected_without(e), params);
                k[s][s | (1 << e)] += prob / n as f64;
                k[s][s & !(1 << e)] += (1.0 - prob) / n as f64;
            }
        }
        k
    }

    #[test]
    fn detailed_balance_on_small_domains() {
        for (w, h) in [(1, 0), (2, 0), (3, 0), (0, 2)] {
            let d = build_box(w, h).unwrap();
            for bc in [BoundaryCondition::Free, BoundaryCondition::Wired] {
                for (p, q) in [(0.5, 2.0), (0.3, 4.0), (0.8, 1.5)] {
                    let params = pr(p, q);
                    let k = kernel(&d, params, &bc);
                    let pi: Vec<f64> = (0..k.len())
                        .map(|s| weight(&d, &Configuration::from_index(s as u64, d.n_edges()), params, &bc).unwrap())
                        .collect();
                    for s in 0..k.len() {
                        for t in 0..k.len() {
                            let lhs = pi[s] * k[s][t];
                            let rhs = pi[t] * k[t][s];
                            assert!((lhs - rhs).abs() <= 1e-12 * (lhs.abs() + rhs.abs()).max(1e-300));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn unit_square_kernel_is_reversible_and_irreducible() {
        let d = build_box(1, 1).unwrap();
        let params = pr(0.4, 2.0);
        let bc = BoundaryCondition::Free;
        let k = kernel(&d, params, &bc);
        let dist = exact_distribution(&d, params, &bc).unwrap();
        // stationarity
        for t in 0..k.len() {
            let flow: f64 = (0..k.len()).map(|s| dist.probabilities[s] * k[s][t]).sum();
            assert!((flow - dist.probabilities[t]).abs() < 1e-14);
        }
        // irreducibility: every state reachable from the empty state
        let mut seen = vec![false; k.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(s) = stack.pop() {
            for t in 0..k.len() {
                if k[s][t] > 0.0 && !seen[t] {
                    seen[t] = true;
                    stack.push(t);
                }
            }
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn single_edge_one_step_preserves_stationary_law() {
        let d = build_box(1, 0).unwrap();
        let k = kernel(&d, pr(0.5, 2.0), &BoundaryCondition::Free);
        let pi = [2.0 / 3.0, 1.0 / 3.0];
        let after_open = pi[0] * k[0][1] + pi[1] * k[1][1];
        assert!((after_open - 1.0 / 3.0).abs() < 1e-15);
        // two-state detailed balance
        assert!((pi[0] * k[0][1] - pi[1] * k[1][0]).abs() < 1e-12);
    }

    #[test]
    fn percolation_marginals_are_bernoulli() {
        let d = Arc::new(build_box(3, 3).unwrap());
        let mut chain = HeatBathChain::new(d.clone(), pr(0.3, 1.0), BoundaryCondition::Free, child_stream(3, 0)).unwrap();
        chain.sweeps(20);
        let mut open = 0usize;
        let mut total = 0usize;
        chain.run(4000, 1, |c| {
            open += c.n_open();
            total += c.len();
        });
        let freq = open as f64 / total as f64;
        assert!((freq - 0.3).abs() < 0.01, "{freq}");
    }

    #[test]
    fn run_zero_sweeps_emits_nothing_and_is_deterministic() {
        let d = Arc::new(build_box(2, 2).unwrap());
        let mk = || HeatBathChain::new(d.clone(), pr(0.58, 2.0), BoundaryCondition::Free, child_stream(1, 2)).unwrap();
        let mut c = mk();
        let mut count = 0;
        c.run(0, 1, |_| count += 1);
        assert_eq!(count, 0);
        let mut a = Vec::new();
        let mut b = Vec::new();
        mk().run(50, 5, |s| a.push(s.index()));
        mk().run(50, 5, |s| b.push(s.index()));
        assert_eq!(a.len(), 10);
        assert_eq!(a, b);
    }

    #[test]
    fn backends_give_identical_trajectories() {
        let d = Arc::new(build_box(4, 4).unwrap());
        let bc = BoundaryCondition::Wired;
        let graph = Arc::new(ClusterGraph::new(&d, &bc).unwrap());
        let init = Configuration::all_open(d.n_edges());
        let mut a = HeatBathChain::with_backend(d.clone(), pr(0.55, 2.0), bc.clone(), bfs_backend(graph.clone()), child_stream(4, 0), &init).unwrap();
        let mut b = HeatBathChain::with_backend(d.clone(), pr(0.55, 2.0), bc.clone(), unionfind_rebuild_backend(graph, 8), child_stream(4, 0), &init).unwrap();
        for _ in 0..200 {
            a.sweep();
            b.sweep();
            assert_eq!(a.states(), b.states());
        }
        assert_eq!(a.step_counter(), 200 * d.n_edges() as u64);
        let k = cluster_count(&d, &a.configuration(), &bc).unwrap();
        assert_eq!(a.backend_mut().component_sizes().len(), k);
    }
}
