//! Connectivity queries for single-edge dynamics.
//!
//! A [`ClusterGraph`] is a lattice domain plus one ghost vertex per wired
//! boundary class, attached by permanently open virtual edges. Real edges
//! keep their domain indices; virtual edges come after them.

use std::sync::Arc;

use crate::error::Result;
use crate::lattice::{BoundaryCondition, LatticeDomain};
use crate::measure::Configuration;

#[derive(Clone, Debug)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    count: usize,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
            count: n,
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `true` when two distinct sets were merged.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.count -= 1;
        true
    }

    pub fn same(&mut self, a: usize, b: usize) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn reset(&mut self) {
        for (i, p) in self.parent.iter_mut().enumerate() {
            *p = i;
        }
        self.size.fill(1);
        self.count = self.parent.len();
    }
}

#[derive(Clone, Debug)]
pub struct ClusterGraph {
    pub n_domain_vertices: usize,
    pub n_vertices: usize,
    pub n_real_edges: usize,
    /// Endpoints of real then virtual edges.
    pub endpoints: Vec<(usize, usize)>,
    offsets: Vec<usize>,
    adj: Vec<(u32, u32)>,
}

impl ClusterGraph {
    pub fn new(d: &LatticeDomain, bc: &BoundaryCondition) -> Result<Self> {
        let classes = bc.wiring_classes(d)?;
        Ok(Self::from_parts(d.n_vertices(), &d.edges, &classes))
    }

    pub fn from_parts(n_domain_vertices: usize, edges: &[(usize, usize)], classes: &[Vec<usize>]) -> Self {
        let n_vertices = n_domain_vertices + classes.len();
        let mut endpoints = edges.to_vec();
        for (c, class) in classes.iter().enumerate() {
            let ghost = n_domain_vertices + c;
            for &v in class {
                endpoints.push((v, ghost));
            }
        }
        let mut deg = vec![0usize; n_vertices + 1];
        for &(u, v) in &endpoints {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut offsets = vec![0usize; n_vertices + 1];
        for i in 0..n_vertices {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut fill = offsets.clone();
        let mut adj = vec![(0u32, 0u32); offsets[n_vertices]];
        for (k, &(u, v)) in endpoints.iter().enumerate() {
            adj[fill[u]] = (v as u32, k as u32);
            fill[u] += 1;
            adj[fill[v]] = (u as u32, k as u32);
            fill[v] += 1;
        }
        ClusterGraph {
            n_domain_vertices,
            n_vertices,
            n_real_edges: edges.len(),
            endpoints,
            offsets,
            adj,
        }
    }

    #[inline]
    pub fn neighbours(&self, v: usize) -> &[(u32, u32)] {
        &self.adj[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn is_virtual(&self, e: usize) -> bool {
        e >= self.n_real_edges
    }

    pub fn n_edges(&self) -> usize {
        self.endpoints.len()
    }
}

/// Reusable bidirectional breadth-first search with generation-stamped marks.
#[derive(Clone, Debug)]
pub struct Search {
    mark: Vec<u32>,
    generation: u32,
    qa: Vec<u32>,
    qb: Vec<u32>,
}

impl Search {
    pub fn new(n_vertices: usize) -> Self {
        Search {
            mark: vec![0; n_vertices],
            generation: 0,
            qa: Vec::new(),
            qb: Vec::new(),
        }
    }

    fn next_generation(&mut self) -> (u32, u32) {
        if self.generation >= u32::MAX - 2 {
            self.mark.fill(0);
            self.generation = 0;
        }
        self.generation += 2;
        (self.generation - 1, self.generation)
    }

    /// Are `x` and `y` joined by open edges other than `skip`? The two
    /// searches advance one vertex at a time, so the cost is bounded by
    /// twice the smaller cluster when they do not meet.
    pub fn connected(&mut self, g: &ClusterGraph, open: &[bool], x: usize, y: usize, skip: Option<usize>) -> bool {
        if x == y {
            return true;
        }
        let skip = skip.map(|s| s as u32).unwrap_or(u32::MAX);
        let (ga, gb) = self.next_generation();
        self.qa.clear();
        self.qb.clear();
        self.qa.push(x as u32);
        self.qb.push(y as u32);
        self.mark[x] = ga;
        self.mark[y] = gb;
        let (mut ha, mut hb) = (0usize, 0usize);
        loop {
            if ha == self.qa.len() {
                return false;
            }
            let v = self.qa[ha] as usize;
            ha += 1;
            for &(w, e) in g.neighbours(v) {
                if e == skip || !(e as usize >= g.n_real_edges || open[e as usize]) {
                    continue;
                }
                let m = self.mark[w as usize];
                if m == gb {
                    return true;
                }
                if m != ga {
                    self.mark[w as usize] = ga;
                    self.qa.push(w);
                }
            }
            if hb == self.qb.len() {
                return false;
            }
            let v = self.qb[hb] as usize;
            hb += 1;
            for &(w, e) in g.neighbours(v) {
                if e == skip || !(e as usize >= g.n_real_edges || open[e as usize]) {
                    continue;
                }
                let m = self.mark[w as usize];
                if m == ga {
                    return true;
                }
                if m != gb {
                    self.mark[w as usize] = gb;
                    self.qb.push(w);
                }
            }
        }
    }
}

/// Component label per vertex of the cluster graph and the number of
/// components (ghost vertices included in their class's component).
pub fn label_components(g: &ClusterGraph, open: &[bool]) -> (Vec<u32>, usize) {
    let mut label = vec![u32::MAX; g.n_vertices];
    let mut stack = Vec::new();
    let mut next = 0u32;
    for s in 0..g.n_vertices {
        if label[s] != u32::MAX {
            continue;
        }
        label[s] = next;
        stack.push(s);
        while let Some(v) = stack.pop() {
            for &(w, e) in g.neighbours(v) {
                let e = e as usize;
                if (e >= g.n_real_edges || open[e]) && label[w as usize] == u32::MAX {
                    label[w as usize] = next;
                    stack.push(w as usize);
                }
            }
        }
        next += 1;
    }
    (label, next as usize)
}

/// Component sizes counted on domain vertices only, sorted descending.
pub fn component_sizes_from_labels(g: &ClusterGraph, labels: &[u32], n_components: usize) -> Vec<usize> {
    let mut sizes = vec![0usize; n_components];
    for &l in &labels[..g.n_domain_vertices] {
        sizes[l as usize] += 1;
    }
    let mut sizes: Vec<usize> = sizes.into_iter().filter(|&s| s > 0).collect();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

/// Plain single-source search used as the reference answer in tests.
pub fn reference_connected(g: &ClusterGraph, open: &[bool], x: usize, y: usize, skip: Option<usize>) -> bool {
    let mut seen = vec![false; g.n_vertices];
    let mut queue = std::collections::VecDeque::from([x]);
    seen[x] = true;
    while let Some(v) = queue.pop_front() {
        if v == y {
            return true;
        }
        for &(w, e) in g.neighbours(v) {
            let e = e as usize;
            if Some(e) == skip || !(e >= g.n_real_edges || open[e]) {
                continue;
            }
            if !seen[w as usize] {
                seen[w as usize] = true;
                queue.push_back(w as usize);
            }
        }
    }
    false
}

pub trait ConnectivityBackend {
    fn graph(&self) -> &ClusterGraph;
    fn load(&mut self, cfg: &Configuration);
    fn set_edge(&mut self, e: usize, open: bool);
    fn is_open(&self, e: usize) -> bool;
    fn states(&self) -> &[bool];
    /// Are the endpoints of `e` connected in the configuration with `e`
    /// forced closed?
    fn connected_without(&mut self, e: usize) -> bool;
    fn connected(&mut self, x: usize, y: usize) -> bool;
    /// Cluster sizes on domain vertices (wired classes merged), descending.
    fn component_sizes(&mut self) -> Vec<usize>;
}

#[derive(Clone, Debug)]
pub struct BfsBackend {
    graph: Arc<ClusterGraph>,
    open: Vec<bool>,
    search: Search,
}

pub fn bfs_backend(graph: Arc<ClusterGraph>) -> BfsBackend {
    let n = graph.n_vertices;
    BfsBackend {
        open: vec![false; graph.n_real_edges],
        search: Search::new(n),
        graph,
    }
}

impl ConnectivityBackend for BfsBackend {
    fn graph(&self) -> &ClusterGraph {
        &self.graph
    }

    fn load(&mut self, cfg: &Configuration) {
        assert_eq!(cfg.len(), self.open.len(), "configuration length");
        for (s, b) in self.open.iter_mut().zip(cfg.open.iter().by_vals()) {
            *s = b;
        }
    }

    #[inline]
    fn set_edge(&mut self, e: usize, open: bool) {
        self.open[e] = open;
    }

    #[inline]
    fn is_open(&self, e: usize) -> bool {
        self.open[e]
    }

    fn states(&self) -> &[bool] {
        &self.open
    }

    #[inline]
    fn connected_without(&mut self, e: usize) -> bool {
        let (x, y) = self.graph.endpoints[e];
        self.search.connected(&self.graph, &self.open, x, y, Some(e))
    }

    fn connected(&mut self, x: usize, y: usize) -> bool {
        self.search.connected(&self.graph, &self.open, x, y, None)
    }

    fn component_sizes(&mut self) -> Vec<usize> {
        let (labels, n) = label_components(&self.graph, &self.open);
        component_sizes_from_labels(&self.graph, &labels, n)
    }
}

/// Union-find updated on openings. A closing marks the structure stale;
/// stale queries fall back to search until the next rebuild, which happens
/// once `rebuild_interval` mutations have accumulated.
#[derive(Clone, Debug)]
pub struct UnionFindBackend {
    graph: Arc<ClusterGraph>,
    open: Vec<bool>,
    search: Search,
    sets: DisjointSets,
    stale: bool,
    mutations: usize,
    rebuild_interval: usize,
}

pub fn unionfind_rebuild_backend(graph: Arc<ClusterGraph>, rebuild_interval: usize) -> UnionFindBackend {
    assert!(rebuild_interval >= 1, "rebuild_interval must be at least 1");
    let n = graph.n_vertices;
    let mut b = UnionFindBackend {
        open: vec![false; graph.n_real_edges],
        search: Search::new(n),
        sets: DisjointSets::new(n),
        stale: true,
        mutations: 0,
        rebuild_interval,
        graph,
    };
    b.rebuild();
    b
}

impl UnionFindBackend {
    pub fn rebuild(&mut self) {
        self.sets.reset();
        for (k, &(u, v)) in self.graph.endpoints.iter().enumerate() {
            if k >= self.graph.n_real_edges || self.open[k] {
                self.sets.union(u, v);
            }
        }
        self.stale = false;
        self.mutations = 0;
    }

    pub fn is_stale(&self) -> bool {
        self.stale
    }
}

impl ConnectivityBackend for UnionFindBackend {
    fn graph(&self) -> &ClusterGraph {
        &self.graph
    }

    fn load(&mut self, cfg: &Configuration) {
        assert_eq!(cfg.len(), self.open.len(), "configuration length");
        for (s, b) in self.open.iter_mut().zip(cfg.open.iter().by_vals()) {
            *s = b;
        }
        self.rebuild();
    }

    fn set_edge(&mut self, e: usize, open: bool) {
        if self.open[e] == open {
            return;
        }
        self.open[e] = open;
        self.mutations += 1;
        if open {
            if !self.stale {
                let (u, v) = self.graph.endpoints[e];
                self.sets.union(u, v);
            }
        } else {
            self.stale = true;
        }
        if self.stale && self.mutations >= self.rebuild_interval {
            self.rebuild();
        }
    }

    fn is_open(&self, e: usize) -> bool {
        self.open[e]
    }

    fn states(&self) -> &[bool] {
        &self.open
    }

    fn connected_without(&mut self, e: usize) -> bool {
        let (x, y) = self.graph.endpoints[e];
        if !self.open[e] && !self.stale {
            return self.sets.same(x, y);
        }
        self.search.connected(&self.graph, &self.open, x, y, Some(e))
    }

    fn connected(&mut self, x: usize, y: usize) -> bool {
        if !self.stale {
            return self.sets.same(x, y);
        }
        self.search.connected(&self.graph, &self.open, x, y, None)
    }

    fn component_sizes(&mut self) -> Vec<usize> {
        if self.stale {
            self.rebuild();
        }
        let mut sizes = std::collections::HashMap::new();
        for v in 0..self.graph.n_domain_vertices {
            *sizes.entry(self.sets.find(v)).or_insert(0usize) += 1;
        }
        let mut sizes: Vec<usize> = sizes.into_values().collect();
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }
}
