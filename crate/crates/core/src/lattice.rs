//! Finite square-lattice domains, planar duals, boundary conditions and
//! medial graphs.
//!
//! Vertices of `build_box(w, h)` are indexed row-major (`y * (w + 1) + x`);
//! horizontal edges come first (row-major), then vertical edges.
//! Medial-graph geometry uses doubled integer coordinates: primal vertex
//! `(x, y)` sits at `(2x, 2y)`, dual face centres at odd/odd points and
//! medial vertices at primal-edge midpoints.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{RcmError, Result};

pub type Coord = (i64, i64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeDomain {
    pub width: usize,
    pub height: usize,
    /// Opposite sides identified (torus). Wrap-around edges join vertices
    /// at lattice distance 1 modulo the period.
    pub periodic: bool,
    pub vertices: Vec<Coord>,
    pub edges: Vec<(usize, usize)>,
    /// Cyclic, counterclockwise from (0, 0). Empty for a torus.
    pub boundary_vertices: Vec<usize>,
}

/// Full rectangle `[0, width] x [0, height]` with `(width+1)(height+1)` vertices.
///
/// Degenerate strips (`height == 0` or `width == 0`) are accepted as long
/// as the domain has at least one edge.
pub fn build_box(width: usize, height: usize) -> Result<LatticeDomain> {
    if width == 0 && height == 0 {
        return Err(RcmError::InvalidDomain(
            "box must have at least one edge".into(),
        ));
    }
    let cols = width + 1;
    let mut vertices = Vec::with_capacity(cols * (height + 1));
    for y in 0..=height {
        for x in 0..=width {
            vertices.push((x as i64, y as i64));
        }
    }
    let id = |x: usize, y: usize| y * cols + x;
    let mut edges = Vec::with_capacity(width * (height + 1) + height * cols);
    for y in 0..=height {
        for x in 0..width {
            edges.push((id(x, y), id(x + 1, y)));
        }
    }
    for y in 0..height {
        for x in 0..=width {
            edges.push((id(x, y), id(x, y + 1)));
        }
    }
    let boundary_vertices = perimeter(width, height)
        .into_iter()
        .map(|(x, y)| id(x as usize, y as usize))
        .collect();
    Ok(LatticeDomain {
        width,
        height,
        periodic: false,
        vertices,
        edges,
        boundary_vertices,
    })
}

/// Torus `Z^2 / nZ^2`; `n >= 3` keeps the graph simple.
pub fn build_torus(n: usize) -> Result<LatticeDomain> {
    if n < 3 {
        return Err(RcmError::InvalidDomain("torus needs n >= 3".into()));
    }
    let mut vertices = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            vertices.push((x as i64, y as i64));
        }
    }
    let id = |x: usize, y: usize| (y % n) * n + (x % n);
    let mut edges = Vec::with_capacity(2 * n * n);
    for y in 0..n {
        for x in 0..n {
            edges.push((id(x, y), id(x + 1, y)));
        }
    }
    for y in 0..n {
        for x in 0..n {
            edges.push((id(x, y), id(x, y + 1)));
        }
    }
    Ok(LatticeDomain {
        width: n,
        height: n,
        periodic: true,
        vertices,
        edges,
        boundary_vertices: Vec::new(),
    })
}

fn perimeter(w: usize, h: usize) -> Vec<Coord> {
    let (w, h) = (w as i64, h as i64);
    if h == 0 {
        return (0..=w).map(|x| (x, 0)).collect();
    }
    if w == 0 {
        return (0..=h).map(|y| (0, y)).collect();
    }
    let mut c = Vec::with_capacity(2 * (w + h) as usize);
    c.extend((0..w).map(|x| (x, 0)));
    c.extend((0..h).map(|y| (w, y)));
    c.extend((1..=w).rev().map(|x| (x, h)));
    c.extend((1..=h).rev().map(|y| (0, y)));
    c
}

impl LatticeDomain {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertex_index(&self, x: i64, y: i64) -> Option<usize> {
        if self.periodic {
            let n = self.width as i64;
            return Some((y.rem_euclid(n) * n + x.rem_euclid(n)) as usize);
        }
        if x < 0 || y < 0 || x > self.width as i64 || y > self.height as i64 {
            return None;
        }
        Some(y as usize * (self.width + 1) + x as usize)
    }

    /// Index of the edge joining two vertices, if any.
    pub fn edge_between(&self, u: usize, v: usize) -> Option<usize> {
        let (a, b) = (self.vertices[u], self.vertices[v]);
        let (lo, hi) = if (a.1, a.0) <= (b.1, b.0) { (u, v) } else { (v, u) };
        if self.periodic {
            let n = self.width;
            let horiz = n * n;
            let (ux, uy) = (self.vertices[u].0 as usize, self.vertices[u].1 as usize);
            let (vx, vy) = (self.vertices[v].0 as usize, self.vertices[v].1 as usize);
            if uy == vy && (ux + 1) % n == vx {
                return Some(uy * n + ux);
            }
            if uy == vy && (vx + 1) % n == ux {
                return Some(vy * n + vx);
            }
            if ux == vx && (uy + 1) % n == vy {
                return Some(horiz + uy * n + ux);
            }
            if ux == vx && (vy + 1) % n == uy {
                return Some(horiz + vy * n + vx);
            }
            return None;
        }
        let (p, q) = (self.vertices[lo], self.vertices[hi]);
        let w = self.width;
        if p.1 == q.1 && q.0 == p.0 + 1 {
            Some(p.1 as usize * w + p.0 as usize)
        } else if p.0 == q.0 && q.1 == p.1 + 1 {
            Some(w * (self.height + 1) + p.1 as usize * (w + 1) + p.0 as usize)
        } else {
            None
        }
    }

    pub fn edge_by_coords(&self, a: Coord, b: Coord) -> Option<usize> {
        let u = self.vertex_index(a.0, a.1)?;
        let v = self.vertex_index(b.0, b.1)?;
        self.edge_between(u, v)
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        if self.periodic {
            return false;
        }
        let (x, y) = self.vertices[v];
        x == 0 || y == 0 || x == self.width as i64 || y == self.height as i64
    }

    pub fn bottom_side(&self) -> Vec<usize> {
        (0..=self.width as i64)
            .map(|x| self.vertex_index(x, 0).unwrap())
            .collect()
    }

    pub fn top_side(&self) -> Vec<usize> {
        (0..=self.width as i64)
            .map(|x| self.vertex_index(x, self.height as i64).unwrap())
            .collect()
    }

    pub fn left_side(&self) -> Vec<usize> {
        (0..=self.height as i64)
            .map(|y| self.vertex_index(0, y).unwrap())
            .collect()
    }

    pub fn right_side(&self) -> Vec<usize> {
        (0..=self.height as i64)
            .map(|y| self.vertex_index(self.width as i64, y).unwrap())
            .collect()
    }

    /// Adjacency lists `(neighbour, edge)`.
    pub fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::with_capacity(4); self.n_vertices()];
        for (k, &(u, v)) in self.edges.iter().enumerate() {
            adj[u].push((v, k));
            adj[v].push((u, k));
        }
        adj
    }

    /// Number of bounded faces of the planar embedding.
    pub fn n_faces(&self) -> usize {
        if self.periodic {
            self.width * self.width
        } else {
            self.width * self.height
        }
    }
}

// ---------------------------------------------------------------------------
// Boundary conditions

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryCondition {
    Free,
    Wired,
    /// Positions `a`, `b` in `boundary_vertices`. The free arc runs
    /// counterclockwise strictly between `a` and `b`; the wired arc is
    /// `b ..= a` counterclockwise, endpoints included.
    Dobrushin { a: usize, b: usize },
    /// Classes of vertex indices, each wired together.
    ExplicitPartition(Vec<Vec<usize>>),
}

impl BoundaryCondition {
    /// Vertex classes that are wired together when counting clusters.
    pub fn wiring_classes(&self, d: &LatticeDomain) -> Result<Vec<Vec<usize>>> {
        match self {
            BoundaryCondition::Free => Ok(Vec::new()),
            BoundaryCondition::Wired => {
                if d.boundary_vertices.is_empty() {
                    Ok(Vec::new())
                } else {
                    Ok(vec![d.boundary_vertices.clone()])
                }
            }
            BoundaryCondition::Dobrushin { a, b } => {
                let (_, wired) = dobrushin_arcs(d, *a, *b)?;
                Ok(vec![wired])
            }
            BoundaryCondition::ExplicitPartition(classes) => {
                let boundary: BTreeSet<usize> = d.boundary_vertices.iter().copied().collect();
                let mut seen = BTreeSet::new();
                for class in classes {
                    for &v in class {
                        if !boundary.contains(&v) {
                            return Err(RcmError::InvalidBoundary(format!(
                                "vertex {v} is not on the boundary"
                            )));
                        }
                        if !seen.insert(v) {
                            return Err(RcmError::InvalidBoundary(format!(
                                "vertex {v} appears in two classes"
                            )));
                        }
                    }
                }
                Ok(classes.iter().filter(|c| !c.is_empty()).cloned().collect())
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            BoundaryCondition::Free => "free".into(),
            BoundaryCondition::Wired => "wired".into(),
            BoundaryCondition::Dobrushin { a, b } => format!("dobrushin:{a}:{b}"),
            BoundaryCondition::ExplicitPartition(c) => format!("partition:{}", c.len()),
        }
    }
}

/// `(free arc, wired arc)` as vertex indices, in counterclockwise order.
pub fn dobrushin_arcs(d: &LatticeDomain, a: usize, b: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    let cyc = &d.boundary_vertices;
    let len = cyc.len();
    if a == b || a >= len || b >= len {
        return Err(RcmError::InvalidBoundary(format!(
            "Dobrushin needs distinct boundary positions, got a={a}, b={b} (cycle length {len})"
        )));
    }
    let mut free = Vec::new();
    let mut k = (a + 1) % len;
    while k != b {
        free.push(cyc[k]);
        k = (k + 1) % len;
    }
    let mut wired = Vec::new();
    let mut k = b;
    loop {
        wired.push(cyc[k]);
        if k == a {
            break;
        }
        k = (k + 1) % len;
    }
    Ok((free, wired))
}

/// Geometry-level description of a boundary condition, resolved against a
/// concrete domain by [`BcSpec::resolve`].
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcSpec {
    Free,
    Wired,
    Dobrushin { a: usize, b: usize },
    /// Bottom side and top side wired as two separate classes.
    TopBottom,
}

impl BcSpec {
    pub fn resolve(&self, d: &LatticeDomain) -> Result<BoundaryCondition> {
        Ok(match self {
            BcSpec::Free => BoundaryCondition::Free,
            BcSpec::Wired => BoundaryCondition::Wired,
            BcSpec::Dobrushin { a, b } => BoundaryCondition::Dobrushin { a: *a, b: *b },
            BcSpec::TopBottom => {
                if d.periodic || d.height == 0 {
                    return Err(RcmError::InvalidBoundary(
                        "top/bottom wiring needs a box of positive height".into(),
                    ));
                }
                BoundaryCondition::ExplicitPartition(vec![d.bottom_side(), d.top_side()])
            }
        })
    }

    pub fn label(&self) -> String {
        match self {
            BcSpec::Free => "free".into(),
            BcSpec::Wired => "wired".into(),
            BcSpec::Dobrushin { a, b } => format!("dobrushin:{a}:{b}"),
            BcSpec::TopBottom => "topbottom".into(),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let parts: Vec<&str> = lower.split([':', ',']).collect();
        match parts.as_slice() {
            ["free"] => Ok(BcSpec::Free),
            ["wired"] => Ok(BcSpec::Wired),
            ["topbottom"] => Ok(BcSpec::TopBottom),
            ["dobrushin", a, b] => {
                let a = a.parse().map_err(|_| RcmError::InvalidBoundary(s.into()))?;
                let b = b.parse().map_err(|_| RcmError::InvalidBoundary(s.into()))?;
                Ok(BcSpec::Dobrushin { a, b })
            }
            _ => Err(RcmError::InvalidBoundary(format!("unknown boundary condition '{s}'"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Dual graph

#[derive(Clone, Debug)]
pub struct DualDomain {
    /// Face centres in doubled coordinates; the outer vertex has no centre.
    pub faces: Vec<Option<Coord>>,
    pub outer: usize,
    pub edges: Vec<(usize, usize)>,
    /// primal edge index -> dual edge index
    pub to_dual: Vec<usize>,
    /// dual edge index -> primal edge index
    pub to_primal: Vec<usize>,
}

impl DualDomain {
    pub fn n_vertices(&self) -> usize {
        self.faces.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Dual of a rectangle: one vertex per bounded face plus a single outer
/// vertex absorbing every unbounded-face site. Dual edges crossing vertical
/// primal edges are listed first.
pub fn dual_domain(d: &LatticeDomain) -> Result<DualDomain> {
    if d.periodic {
        return Err(RcmError::InvalidDomain("dual of a torus is not supported".into()));
    }
    let (w, h) = (d.width, d.height);
    let mut faces: Vec<Option<Coord>> = Vec::with_capacity(w * h + 1);
    for y in 0..h {
        for x in 0..w {
            faces.push(Some((2 * x as i64 + 1, 2 * y as i64 + 1)));
        }
    }
    let outer = faces.len();
    faces.push(None);
    let face = |x: i64, y: i64| -> usize {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            outer
        } else {
            y as usize * w + x as usize
        }
    };
    let n = d.n_edges();
    let mut order: Vec<usize> = (0..n).filter(|&k| is_vertical(d, k)).collect();
    order.extend((0..n).filter(|&k| !is_vertical(d, k)));
    let mut edges = Vec::with_capacity(n);
    let mut to_dual = vec![0; n];
    let mut to_primal = Vec::with_capacity(n);
    for (j, &k) in order.iter().enumerate() {
        let (u, v) = d.edges[k];
        let (p, q) = (d.vertices[u], d.vertices[v]);
        let lo = if (p.1, p.0) <= (q.1, q.0) { p } else { q };
        let pair = if is_vertical(d, k) {
            (face(lo.0 - 1, lo.1), face(lo.0, lo.1))
        } else {
            (face(lo.0, lo.1 - 1), face(lo.0, lo.1))
        };
        edges.push(pair);
        to_dual[k] = j;
        to_primal.push(k);
    }
    Ok(DualDomain {
        faces,
        outer,
        edges,
        to_dual,
        to_primal,
    })
}

fn is_vertical(d: &LatticeDomain, k: usize) -> bool {
    let (u, v) = d.edges[k];
    d.vertices[u].0 == d.vertices[v].0
}

// ---------------------------------------------------------------------------
// Medial graph

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MedialDir {
    NE,
    NW,
    SW,
    SE,
}

impl MedialDir {
    pub fn from_vector(dx: i64, dy: i64) -> MedialDir {
        match (dx > 0, dy > 0) {
            (true, true) => MedialDir::NE,
            (false, true) => MedialDir::NW,
            (false, false) => MedialDir::SW,
            (true, false) => MedialDir::SE,
        }
    }

    pub fn vector(self) -> (i64, i64) {
        match self {
            MedialDir::NE => (1, 1),
            MedialDir::NW => (-1, 1),
            MedialDir::SW => (-1, -1),
            MedialDir::SE => (1, -1),
        }
    }

    /// Counterclockwise angle of the arrow, in radians.
    pub fn angle(self) -> f64 {
        use std::f64::consts::FRAC_PI_4;
        match self {
            MedialDir::NE => FRAC_PI_4,
            MedialDir::NW => 3.0 * FRAC_PI_4,
            MedialDir::SW => -3.0 * FRAC_PI_4,
            MedialDir::SE => -FRAC_PI_4,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            MedialDir::NE => "NE",
            MedialDir::NW => "NW",
            MedialDir::SW => "SW",
            MedialDir::SE => "SE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MedialEdge {
    /// Black side: primal vertex index.
    pub primal: usize,
    /// White side: dual site, doubled coordinates.
    pub dual: Coord,
    pub tail: usize,
    pub head: usize,
    pub dir: MedialDir,
    /// Half-edge hanging off the domain at `a` or `b`; not counted in degrees.
    pub stub: bool,
}

#[derive(Clone, Debug)]
pub struct MedialGraph {
    /// Medial vertices (primal-edge midpoints) in doubled coordinates.
    pub vertices: Vec<Coord>,
    pub edges: Vec<MedialEdge>,
    pub incident: Vec<Vec<usize>>,
    /// Primal edge through each medial vertex, when that edge is in the domain.
    pub primal_edge: Vec<Option<usize>>,
    pub e_a: Option<usize>,
    pub e_b: Option<usize>,
    pub free_arc: Vec<usize>,
    pub wired_arc: Vec<usize>,
    edge_lookup: HashMap<(usize, Coord), usize>,
}

impl MedialGraph {
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    /// Incident edges excluding the half-edges at `a` and `b`.
    pub fn degree(&self, mv: usize) -> usize {
        self.incident[mv]
            .iter()
            .filter(|&&i| !self.edges[i].stub)
            .count()
    }

    pub fn find_edge(&self, primal: usize, dual: Coord) -> Option<usize> {
        self.edge_lookup.get(&(primal, dual)).copied()
    }

    /// The medial edge pointing north-east and bordering the diamond of
    /// primal vertex `v`.
    pub fn ne_edge(&self, d: &LatticeDomain, v: usize) -> Option<usize> {
        let (x, y) = d.vertices[v];
        self.find_edge(v, (2 * x + 1, 2 * y - 1))
    }

    /// Turning angle from edge `i` into edge `j` (`+pi/2` left, `-pi/2` right).
    pub fn turn(&self, i: usize, j: usize) -> f64 {
        let (ax, ay) = self.edges[i].dir.vector();
        let (bx, by) = self.edges[j].dir.vector();
        let c = ax * by - ay * bx;
        std::f64::consts::FRAC_PI_2 * (c.signum() as f64)
    }
}

/// Medial graph of a rectangle under Free or Dobrushin boundary conditions.
///
/// Each medial edge is a black/white pair `(v, f)` with `f = v + (+-1, +-1)`
/// in doubled coordinates, oriented counterclockwise around `v` (hence
/// clockwise around `f`). Under Dobrushin conditions the white sites are
/// the bounded faces plus the outside sites diagonal to a free-arc vertex;
/// pairs of a wired-arc vertex with an outside white site are dropped except
/// for the two half-edges `e_a`, `e_b`, which are chosen so that the
/// exploration path starts on `e_a` and ends on `e_b`.
pub fn medial_graph(d: &LatticeDomain, bc: &BoundaryCondition) -> Result<MedialGraph> {
    if d.periodic || d.width == 0 || d.height == 0 {
        return Err(RcmError::InvalidDomain(
            "medial graph needs a box with positive width and height".into(),
        ));
    }
    let (w, h) = (d.width as i64, d.height as i64);
    let interior_white = |f: Coord| f.0 > 0 && f.1 > 0 && f.0 < 2 * w && f.1 < 2 * h;
    let diagonals = [(1, 1), (-1, 1), (-1, -1), (1, -1)];

    let mut free_arc = Vec::new();
    let mut wired_arc = Vec::new();
    let mut stubs: Vec<(usize, Coord)> = Vec::new();
    let mut is_wired = vec![false; d.n_vertices()];
    let mut ghost_white: BTreeSet<Coord> = BTreeSet::new();

    match bc {
        BoundaryCondition::Free => {}
        BoundaryCondition::Dobrushin { a, b } => {
            let len = d.boundary_vertices.len();
            if *a < len && (*a + 1) % len == *b {
                return Err(RcmError::InvalidBoundary(
                    "Dobrushin arcs need a non-empty free arc (b follows a directly)".into(),
                ));
            }
            let (free, wired) = dobrushin_arcs(d, *a, *b)?;
            for &v in &wired {
                is_wired[v] = true;
            }
            for &v in &free {
                let (x, y) = d.vertices[v];
                for (dx, dy) in diagonals {
                    let f = (2 * x + dx, 2 * y + dy);
                    if !interior_white(f) {
                        ghost_white.insert(f);
                    }
                }
            }
            let cyc = &d.boundary_vertices;
            let av = cyc[*a];
            let bv = cyc[*b];
            let after_a = cyc[(*a + 1) % len];
            let before_b = cyc[(*b + len - 1) % len];
            stubs.push((av, outward_white(d, av, after_a)));
            stubs.push((bv, outward_white(d, before_b, bv)));
            free_arc = free;
            wired_arc = wired;
        }
        _ => {
            return Err(RcmError::InvalidBoundary(
                "medial graph supports Free and Dobrushin conditions".into(),
            ))
        }
    }
    let dobrushin = matches!(bc, BoundaryCondition::Dobrushin { .. });

    let mut vertices: Vec<Coord> = Vec::new();
    let mut vindex: BTreeMap<Coord, usize> = BTreeMap::new();
    let mut edges: Vec<MedialEdge> = Vec::new();
    let mut e_a = None;
    let mut e_b = None;

    let mut intern = |c: Coord, vertices: &mut Vec<Coord>| -> usize {
        *vindex.entry(c).or_insert_with(|| {
            vertices.push(c);
            vertices.len() - 1
        })
    };

    // Sorted black sites for deterministic layout.
    let mut blacks: Vec<usize> = (0..d.n_vertices()).collect();
    blacks.sort_by_key(|&v| (2 * d.vertices[v].0, 2 * d.vertices[v].1));
    for v in blacks {
        let (x, y) = d.vertices[v];
        let vc = (2 * x, 2 * y);
        for (dx, dy) in [(-1, -1), (-1, 1), (1, -1), (1, 1)] {
            let f = (vc.0 + dx, vc.1 + dy);
            let stub = stubs.contains(&(v, f));
            let keep = !dobrushin || interior_white(f) || (ghost_white.contains(&f) && (!is_wired[v] || stub));
            if !keep {
                continue;
            }
            let (tail, head) = if dx == dy {
                ((vc.0 + dx, vc.1), (vc.0, vc.1 + dy))
            } else {
                ((vc.0, vc.1 + dy), (vc.0 + dx, vc.1))
            };
            let t = intern(tail, &mut vertices);
            let hd = intern(head, &mut vertices);
            let dir = MedialDir::from_vector(head.0 - tail.0, head.1 - tail.1);
            let idx = edges.len();
            if stub {
                if stubs[0] == (v, f) {
                    e_a = Some(idx);
                } else {
                    e_b = Some(idx);
                }
            }
            edges.push(MedialEdge {
                primal: v,
                dual: f,
                tail: t,
                head: hd,
                dir,
                stub,
            });
        }
    }

    let mut incident = vec![Vec::new(); vertices.len()];
    for (i, e) in edges.iter().enumerate() {
        incident[e.tail].push(i);
        incident[e.head].push(i);
    }
    let primal_edge = vertices
        .iter()
        .map(|&(mx, my)| {
            // Midpoint of a primal edge: exactly one coordinate is odd.
            let (a, b) = if mx.rem_euclid(2) == 1 {
                ((mx - 1) / 2, (mx + 1) / 2)
            } else {
                ((my - 1) / 2, (my + 1) / 2)
            };
            if mx.rem_euclid(2) == 1 {
                d.edge_by_coords((a, my / 2), (b, my / 2))
            } else {
                d.edge_by_coords((mx / 2, a), (mx / 2, b))
            }
        })
        .collect();
    let edge_lookup = edges
        .iter()
        .enumerate()
        .map(|(i, e)| ((e.primal, e.dual), i))
        .collect();
    Ok(MedialGraph {
        vertices,
        edges,
        incident,
        primal_edge,
        e_a,
        e_b,
        free_arc,
        wired_arc,
        edge_lookup,
    })
}

/// White site just outside the boundary edge `u -> w` (counterclockwise
/// traversal), i.e. on the right of the tangent.
fn outward_white(d: &LatticeDomain, u: usize, w: usize) -> Coord {
    let (pu, pw) = (d.vertices[u], d.vertices[w]);
    let t = (pw.0 - pu.0, pw.1 - pu.1);
    let normal = (t.1, -t.0);
    (pu.0 + pw.0 + normal.0, pu.1 + pw.1 + normal.1)
}
