//! Loop representation on the medial lattice and the fermionic observable
//! of the FK-Ising model (`q = 2`) on small Dobrushin rectangles, computed
//! by exhaustive enumeration, together with its local relations.
//!
//! Conventions. Medial edges are oriented counterclockwise around black
//! (primal) diamonds. The exploration path starts on the half-edge `e_a`
//! and ends on `e_b`. Windings are sums of `+-pi/2` turns, counterclockwise
//! positive, measured from midpoint to midpoint, with `W(e, e) = 0`.
//! Primal edges whose medial vertex lacks four incident edges (both
//! endpoints on the wired arc) do not interact with the loops; they are
//! independent Bernoulli(p) edges and drop out of the observable.

use std::collections::BTreeSet;
use std::f64::consts::{FRAC_PI_4, SQRT_2};
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::connectivity::{label_components, ClusterGraph};
use crate::error::{RcmError, Result};
use crate::lattice::{medial_graph, BoundaryCondition, Coord, LatticeDomain, MedialGraph};
use crate::measure::{Configuration, ExactDistribution, ModelParams};

/// Edge cap for [`observable_exact`].
pub const OBSERVABLE_CAP: usize = 20;

/// `p / ((1 - p) sqrt 2)`; equals 1 exactly at the self-dual point of `q = 2`.
pub fn x_of_p(p: f64) -> f64 {
    p / ((1.0 - p) * SQRT_2)
}

/// Argument of `(e^{i pi/4} + x) / (e^{i pi/4} x + 1)`.
pub fn alpha_of_p(p: f64) -> f64 {
    let x = x_of_p(p);
    let w = Complex64::from_polar(1.0, FRAC_PI_4);
    ((w + x) / (w * x + 1.0)).arg()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MassiveWalkParams {
    pub alpha: f64,
    /// `cos 2 alpha`
    pub mass_interior: f64,
    /// Weight of `F(e_W)` and `F(e_N)` in the free-arc relation.
    pub free_arc_side: f64,
    /// Weight of `F(e_E)` in the free-arc relation.
    pub free_arc_east: f64,
}

impl MassiveWalkParams {
    pub fn new(p: f64) -> Self {
        let a = alpha_of_p(p);
        let denom = 1.0 + (FRAC_PI_4 - a).cos();
        MassiveWalkParams {
            alpha: a,
            mass_interior: (2.0 * a).cos(),
            free_arc_side: (2.0 * a).cos() / (2.0 * denom),
            free_arc_east: (FRAC_PI_4 + a).cos() / denom,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopDecomposition {
    pub loops: Vec<Vec<usize>>,
    pub exploration_path: Vec<usize>,
}

/// How the path continues after entering a medial vertex along an edge.
#[derive(Clone, Copy, Debug)]
enum Exit {
    None,
    Fixed(usize),
    /// `(primal edge, successor if open, successor if closed)`
    Switch(usize, usize, usize),
}

fn exits(mg: &MedialGraph) -> Vec<Exit> {
    let mut out = vec![Exit::None; mg.n_edges()];
    for (mv, inc) in mg.incident.iter().enumerate() {
        let ins: Vec<usize> = inc.iter().copied().filter(|&i| mg.edges[i].head == mv).collect();
        let outs: Vec<usize> = inc.iter().copied().filter(|&i| mg.edges[i].tail == mv).collect();
        match (ins.len(), outs.len()) {
            (1, 1) => out[ins[0]] = Exit::Fixed(outs[0]),
            (2, 2) => {
                let k = mg.primal_edge[mv].expect("four-valent medial vertex on a domain edge");
                for &i in &ins {
                    let same_white = outs.iter().copied().find(|&o| mg.edges[o].dual == mg.edges[i].dual);
                    let same_black = outs.iter().copied().find(|&o| mg.edges[o].primal == mg.edges[i].primal);
                    out[i] = Exit::Switch(k, same_white.unwrap(), same_black.unwrap());
                }
            }
            _ => {}
        }
    }
    out
}

/// Primal edges that interact with the loops, in increasing order.
fn relevant_edges(mg: &MedialGraph) -> Vec<usize> {
    let mut rel: BTreeSet<usize> = BTreeSet::new();
    for (mv, inc) in mg.incident.iter().enumerate() {
        if inc.len() == 4 {
            if let Some(k) = mg.primal_edge[mv] {
                rel.insert(k);
            }
        }
    }
    rel.into_iter().collect()
}

fn successor(exits: &[Exit], open: &[bool], i: usize) -> Option<usize> {
    match exits[i] {
        Exit::None => None,
        Exit::Fixed(o) => Some(o),
        Exit::Switch(k, a, b) => Some(if open[k] { a } else { b }),
    }
}

/// Splits the medial edges into the exploration path and closed loops.
pub fn loop_decomposition(cfg: &Configuration, mg: &MedialGraph) -> Result<LoopDecomposition> {
    let (ea, eb) = match (mg.e_a, mg.e_b) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(RcmError::Precondition("loop decomposition needs a Dobrushin medial graph".into())),
    };
    let ex = exits(mg);
    let open = cfg.to_bools();
    let mut used = vec![false; mg.n_edges()];
    let mut path = vec![ea];
    used[ea] = true;
    let mut cur = ea;
    while cur != eb {
        cur = successor(&ex, &open, cur).ok_or_else(|| RcmError::Precondition("exploration path stopped early".into()))?;
        if used[cur] {
            return Err(RcmError::Precondition("exploration path revisits an edge".into()));
        }
        used[cur] = true;
        path.push(cur);
    }
    let mut loops = Vec::new();
    for s in 0..mg.n_edges() {
        if used[s] {
            continue;
        }
        let mut lp = Vec::new();
        let mut j = s;
        while !used[j] {
            used[j] = true;
            lp.push(j);
            j = successor(&ex, &open, j).ok_or_else(|| RcmError::Precondition("open loop".into()))?;
        }
        loops.push(lp);
    }
    Ok(LoopDecomposition {
        loops,
        exploration_path: path,
    })
}

/// Total rotation along `path` between positions `from` and `to`.
pub fn winding_between(mg: &MedialGraph, path: &[usize], from: usize, to: usize) -> f64 {
    (from..to).map(|t| mg.turn(path[t], path[t + 1])).sum()
}

/// Rotation from the first occurrence of `from_edge` to the next
/// occurrence of `to_edge` along `path`.
pub fn winding(mg: &MedialGraph, path: &[usize], from_edge: usize, to_edge: usize) -> Result<f64> {
    let i = path
        .iter()
        .position(|&e| e == from_edge)
        .ok_or_else(|| RcmError::Precondition("edge not on path".into()))?;
    let j = path[i..]
        .iter()
        .position(|&e| e == to_edge)
        .ok_or_else(|| RcmError::Precondition("edge not on path".into()))?;
    Ok(winding_between(mg, path, i, i + j))
}

#[derive(Clone, Debug)]
pub struct ObservableField {
    pub values: Vec<Complex64>,
    pub params: ModelParams,
    pub domain: LatticeDomain,
    pub medial: MedialGraph,
    pub bc: BoundaryCondition,
    /// Loop-form partition function over the interacting edges.
    pub loop_partition_function: f64,
}

/// Loop-form weight `x^{#open interacting edges} sqrt(2)^{#loops}`.
pub fn loop_weight(cfg: &Configuration, mg: &MedialGraph, p: f64) -> Result<f64> {
    let dec = loop_decomposition(cfg, mg)?;
    let open = relevant_edges(mg).iter().filter(|&&k| cfg.is_open(k)).count();
    Ok(x_of_p(p).powi(open as i32) * SQRT_2.powi(dec.loops.len() as i32))
}

/// Exact observable `F(e) = E[e^{i W(e, e_b) / 2} 1{e in gamma}]` under the
/// Dobrushin measure.
pub fn observable_exact(d: &LatticeDomain, bc: &BoundaryCondition, params: ModelParams) -> Result<ObservableField> {
    if params.q != 2.0 {
        return Err(RcmError::InvalidParameter("the fermionic observable is defined for q = 2".into()));
    }
    if !(params.p > 0.0 && params.p < 1.0) {
        return Err(RcmError::InvalidParameter("p must lie in (0, 1)".into()));
    }
    if !matches!(bc, BoundaryCondition::Dobrushin { .. }) {
        return Err(RcmError::InvalidBoundary("observable needs Dobrushin conditions".into()));
    }
    if d.n_edges() > OBSERVABLE_CAP {
        return Err(RcmError::TooLarge {
            edges: d.n_edges(),
            cap: OBSERVABLE_CAP,
        });
    }
    let mg = medial_graph(d, bc)?;
    let (ea, eb) = (mg.e_a.unwrap(), mg.e_b.unwrap());
    let ex = exits(&mg);
    let rel = relevant_edges(&mg);
    let x = x_of_p(params.p);
    let m = mg.n_edges();
    let mut f = vec![Complex64::new(0.0, 0.0); m];
    let mut z = 0.0;
    let mut open = vec![false; d.n_edges()];
    let mut seen = vec![0u32; m];
    let mut path = Vec::with_capacity(m);
    let mut wind = Vec::with_capacity(m);
    let half_turn: Vec<Complex64> = (-64..=64).map(|k| Complex64::from_polar(1.0, k as f64 * FRAC_PI_4 / 2.0)).collect();
    for bits in 0u64..(1u64 << rel.len()) {
        for (j, &k) in rel.iter().enumerate() {
            open[k] = (bits >> j) & 1 == 1;
        }
        let stamp = bits as u32 + 1;
        path.clear();
        path.push(ea);
        seen[ea] = stamp;
        let mut cur = ea;
        while cur != eb {
            cur = successor(&ex, &open, cur).expect("path continues");
            seen[cur] = stamp;
            path.push(cur);
        }
        let mut loops = 0i32;
        for s in 0..m {
            if seen[s] == stamp {
                continue;
            }
            let mut j = s;
            while seen[j] != stamp {
                seen[j] = stamp;
                j = successor(&ex, &open, j).expect("closed loop");
            }
            loops += 1;
        }
        let w = x.powi(bits.count_ones() as i32) * SQRT_2.powi(loops);
        z += w;
        // Winding to e_b in quarter turns, accumulated backwards.
        wind.clear();
        wind.resize(path.len(), 0i32);
        for t in (0..path.len() - 1).rev() {
            wind[t] = wind[t + 1] + (mg.turn(path[t], path[t + 1]) / std::f64::consts::FRAC_PI_2).round() as i32;
        }
        for (t, &e) in path.iter().enumerate() {
            // e^{i W / 2} with W = wind * pi/2  ->  index wind into pi/4 steps
            f[e] += w * half_turn[(wind[t] + 64) as usize * 2 - 64];
        }
    }
    for v in f.iter_mut() {
        *v /= z;
    }
    Ok(ObservableField {
        values: f,
        params,
        domain: d.clone(),
        medial: mg,
        bc: bc.clone(),
        loop_partition_function: z,
    })
}

impl ObservableField {
    pub fn e_a(&self) -> usize {
        self.medial.e_a.unwrap()
    }

    pub fn e_b(&self) -> usize {
        self.medial.e_b.unwrap()
    }

    fn ne(&self, x: i64, y: i64) -> Option<usize> {
        let v = self.domain.vertex_index(x, y)?;
        self.medial.ne_edge(&self.domain, v)
    }

    /// Largest distance of `F(e)` from the line `e^{-i theta/2} R`, where
    /// `theta` is the rotation from `e_b`'s direction to `e`'s.
    pub fn argument_residual(&self) -> f64 {
        let tb = self.medial.edges[self.e_b()].dir.angle();
        self.medial
            .edges
            .iter()
            .zip(&self.values)
            .map(|(e, v)| {
                let lam = Complex64::from_polar(1.0, -(e.dir.angle() - tb) / 2.0);
                (v / lam).im.abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "medial_edge,direction,re,im,abs")?;
        for (i, (e, v)) in self.medial.edges.iter().zip(&self.values).enumerate() {
            writeln!(out, "{i},{},{:.17e},{:.17e},{:.17e}", e.dir.tag(), v.re, v.im, v.norm())?;
        }
        Ok(())
    }
}

/// `max |F(A) - F(C) - e^{-i alpha} i (F(B) - F(D))|` over medial vertices
/// with four incident edges, `A..D` clockwise from an incoming edge `A`.
///
/// With edges oriented counterclockwise around black diamonds the relation
/// holds with the phase `e^{-i alpha}`, i.e. the phase of the dual
/// parameter; both coincide at the self-dual point.
pub fn check_vertex_relation(f: &ObservableField) -> f64 {
    let mg = &f.medial;
    let phase = Complex64::from_polar(1.0, -alpha_of_p(f.params.p));
    let i = Complex64::new(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for (mv, inc) in mg.incident.iter().enumerate() {
        if inc.len() != 4 {
            continue;
        }
        let centre = mg.vertices[mv];
        let angle = |e: usize| {
            let me = &mg.edges[e];
            let other = if me.head == mv { me.tail } else { me.head };
            let o: Coord = mg.vertices[other];
            ((o.1 - centre.1) as f64).atan2((o.0 - centre.0) as f64)
        };
        let mut ordered = inc.clone();
        ordered.sort_by(|&a, &b| angle(b).total_cmp(&angle(a)));
        while mg.edges[ordered[0]].head != mv {
            ordered.rotate_left(1);
        }
        let [a, b, c, dd] = [ordered[0], ordered[1], ordered[2], ordered[3]];
        let v = &f.values;
        let r = v[a] - v[c] - phase * i * (v[b] - v[dd]);
        worst = worst.max(r.norm());
    }
    worst
}

/// Sites `X` whose north-east edge and the north-east edges of all four
/// neighbours exist, with `X` off the boundary.
pub fn harmonic_sites(f: &ObservableField) -> Vec<(i64, i64)> {
    let d = &f.domain;
    let mut out = Vec::new();
    for v in 0..d.n_vertices() {
        let (x, y) = d.vertices[v];
        if d.is_boundary(v) || f.ne(x, y).is_none() {
            continue;
        }
        if [(1, 0), (-1, 0), (0, 1), (0, -1)].iter().all(|(dx, dy)| f.ne(x + dx, y + dy).is_some()) {
            out.push((x, y));
        }
    }
    out
}

/// `max |cos(2 alpha)/4 sum_{Y~X} F(e_Y) - F(e_X)|` over [`harmonic_sites`];
/// `None` when no site qualifies.
pub fn check_massive_harmonicity(f: &ObservableField) -> Option<f64> {
    let mw = MassiveWalkParams::new(f.params.p);
    let sites = harmonic_sites(f);
    if sites.is_empty() {
        return None;
    }
    let v = &f.values;
    let mut worst: f64 = 0.0;
    for (x, y) in sites {
        let s: Complex64 = [(1, 0), (-1, 0), (0, 1), (0, -1)]
            .iter()
            .map(|(dx, dy)| v[f.ne(x + dx, y + dy).unwrap()])
            .sum();
        worst = worst.max((s * (mw.mass_interior / 4.0) - v[f.ne(x, y).unwrap()]).norm());
    }
    Some(worst)
}

/// Free-arc sites on the bottom side whose west, east and north neighbours
/// carry north-east edges.
pub fn free_arc_sites(f: &ObservableField) -> Vec<(i64, i64)> {
    let d = &f.domain;
    let mut out = Vec::new();
    for &v in &f.medial.free_arc {
        let (x, y) = d.vertices[v];
        if y != 0 {
            continue;
        }
        if [(0, 0), (-1, 0), (1, 0), (0, 1)].iter().all(|(dx, dy)| f.ne(x + dx, y + dy).is_some()) {
            out.push((x, y));
        }
    }
    out
}

/// Residual of the free-arc relation
/// `c_s [F(e_W) + F(e_N)] + c_e F(e_E) - F(e_X)` over [`free_arc_sites`];
/// `None` when no site qualifies.
pub fn check_free_arc_relation(f: &ObservableField) -> Result<Option<f64>> {
    if f.params.q != 2.0 {
        return Err(RcmError::InvalidParameter("free-arc relation is specific to q = 2".into()));
    }
    let mw = MassiveWalkParams::new(f.params.p);
    let sites = free_arc_sites(f);
    if sites.is_empty() {
        return Ok(None);
    }
    let v = &f.values;
    let mut worst: f64 = 0.0;
    for (x, y) in sites {
        let get = |dx: i64, dy: i64| v[f.ne(x + dx, y + dy).unwrap()];
        let r = (get(-1, 0) + get(0, 1)) * mw.free_arc_side + get(1, 0) * mw.free_arc_east - get(0, 0);
        worst = worst.max(r.norm());
    }
    Ok(Some(worst))
}

/// `max | |F(e)| - P(u <-> wired arc) |` over free-arc vertices `u` and
/// their medial edges facing the outside, plus `e_a`, `e_b` (probability 1).
pub fn check_boundary_connection(f: &ObservableField, dist: &ExactDistribution) -> Result<f64> {
    let d = &f.domain;
    if dist.n_edges != d.n_edges() {
        return Err(RcmError::DomainMismatch("distribution and observable domains differ".into()));
    }
    let graph = ClusterGraph::new(d, &f.bc)?;
    let ghost = d.n_vertices();
    let free = &f.medial.free_arc;
    let mut prob = vec![0.0; free.len()];
    for (idx, &pr) in dist.probabilities.iter().enumerate() {
        if pr == 0.0 {
            continue;
        }
        let open: Vec<bool> = (0..d.n_edges()).map(|k| (idx >> k) & 1 == 1).collect();
        let (labels, _) = label_components(&graph, &open);
        for (j, &u) in free.iter().enumerate() {
            if labels[u] == labels[ghost] {
                prob[j] += pr;
            }
        }
    }
    let w = d.width as i64;
    let h = d.height as i64;
    let outside = |c: Coord| !(c.0 > 0 && c.1 > 0 && c.0 < 2 * w && c.1 < 2 * h);
    let mut worst: f64 = 0.0;
    for (j, &u) in free.iter().enumerate() {
        for (i, e) in f.medial.edges.iter().enumerate() {
            if e.primal == u && outside(e.dual) {
                worst = worst.max((f.values[i].norm() - prob[j]).abs());
            }
        }
    }
    for e in [f.e_a(), f.e_b()] {
        worst = worst.max((f.values[e].norm() - 1.0).abs());
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MassiveWalkReport {
    pub residual: f64,
    pub n_unknowns: usize,
    pub n_boundary: usize,
}

/// Solves the interior and free-arc relations for the north-east edges not
/// on the wired boundary set, with boundary data taken from `f`, and
/// compares with `f`.
///
/// The boundary set consists of north-east edges at sites `X` with `X`,
/// its south neighbour or its east neighbour on the wired arc.
pub fn massive_walk_identity(f: &ObservableField, mw: &MassiveWalkParams) -> Result<MassiveWalkReport> {
    let d = &f.domain;
    let wired: BTreeSet<usize> = f.medial.wired_arc.iter().copied().collect();
    let is_wired = |x: i64, y: i64| d.vertex_index(x, y).is_some_and(|v| wired.contains(&v));
    let harmonic: BTreeSet<(i64, i64)> = harmonic_sites(f).into_iter().collect();
    let free_sites: BTreeSet<(i64, i64)> = free_arc_sites(f).into_iter().collect();
    let mut boundary = BTreeSet::new();
    let mut unknowns = Vec::new();
    let mut uncovered = Vec::new();
    for v in 0..d.n_vertices() {
        let (x, y) = d.vertices[v];
        if f.ne(x, y).is_none() {
            continue;
        }
        if is_wired(x, y) || is_wired(x, y - 1) || is_wired(x + 1, y) {
            boundary.insert((x, y));
        } else if harmonic.contains(&(x, y)) || free_sites.contains(&(x, y)) {
            unknowns.push((x, y));
        } else {
            uncovered.push((x, y));
        }
    }
    if !uncovered.is_empty() {
        return Err(RcmError::Precondition(format!(
            "no covering relation at sites {uncovered:?}"
        )));
    }
    if unknowns.is_empty() {
        return Err(RcmError::Precondition("no unknown north-east edges".into()));
    }
    let n = unknowns.len();
    let index = |s: (i64, i64)| unknowns.iter().position(|&u| u == s);
    let mut a = DMatrix::<Complex64>::zeros(n, n);
    let mut rhs = DVector::<Complex64>::zeros(n);
    for (i, &(x, y)) in unknowns.iter().enumerate() {
        a[(i, i)] = Complex64::new(-1.0, 0.0);
        let terms: Vec<((i64, i64), f64)> = if harmonic.contains(&(x, y)) {
            [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .map(|(dx, dy)| ((x + dx, y + dy), mw.mass_interior / 4.0))
                .collect()
        } else {
            vec![
                ((x - 1, y), mw.free_arc_side),
                ((x, y + 1), mw.free_arc_side),
                ((x + 1, y), mw.free_arc_east),
            ]
        };
        for (s, w) in terms {
            match index(s) {
                Some(j) => a[(i, j)] += Complex64::new(w, 0.0),
                None => {
                    if !boundary.contains(&s) {
                        return Err(RcmError::Precondition(format!("site {s:?} is neither unknown nor boundary")));
                    }
                    rhs[i] -= f.values[f.ne(s.0, s.1).unwrap()] * w;
                }
            }
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| RcmError::Singular(format!("{n} x {n} massive-walk system")))?;
    let residual = unknowns
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| (sol[i] - f.values[f.ne(x, y).unwrap()]).norm())
        .fold(0.0, f64::max);
    Ok(MassiveWalkReport {
        residual,
        n_unknowns: n,
        n_boundary: boundary.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::build_box;
    use crate::measure::{exact_distribution, self_dual_point, weight};
    use std::f64::consts::PI;

    fn psd() -> f64 {
        self_dual_point(2.0)
    }

    fn field(w: usize, h: usize, a: usize, b: usize, p: f64) -> ObservableField {
        let d = build_box(w, h).unwrap();
        observable_exact(&d, &BoundaryCondition::Dobrushin { a, b }, ModelParams::new(p, 2.0).unwrap()).unwrap()
    }

    #[test]
    fn x_and_alpha() {
        assert!((x_of_p(psd()) - 1.0).abs() < 1e-15);
        assert!(alpha_of_p(psd()).abs() < 1e-15);
        assert!((alpha_of_p(1e-12) - FRAC_PI_4).abs() < 1e-9);
        let mut prev = alpha_of_p(1e-3);
        for k in 2..1000 {
            let a = alpha_of_p(k as f64 * 1e-3);
            assert!(a < prev);
            assert!((a - prev).abs() < 0.01);
            prev = a;
        }
        let mw = MassiveWalkParams::new(psd());
        assert!((mw.mass_interior - 1.0).abs() < 1e-15);
        assert!((2.0 * mw.free_arc_side + mw.free_arc_east - 1.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_is_eulerian_on_unit_square() {
        let d = build_box(1, 1).unwrap();
        let mg = medial_graph(&d, &BoundaryCondition::Dobrushin { a: 0, b: 2 }).unwrap();
        for idx in 0..16 {
            let cfg = Configuration::from_index(idx, 4);
            let dec = loop_decomposition(&cfg, &mg).unwrap();
            let mut count = vec![0; mg.n_edges()];
            for &e in dec.exploration_path.iter().chain(dec.loops.iter().flatten()) {
                count[e] += 1;
            }
            assert!(count.iter().all(|&c| c == 1));
            assert_eq!(dec.exploration_path[0], mg.e_a.unwrap());
            assert_eq!(*dec.exploration_path.last().unwrap(), mg.e_b.unwrap());
            for path in dec.loops.iter().chain(std::iter::once(&dec.exploration_path)) {
                for t in 0..path.len() - 1 {
                    assert_eq!(mg.turn(path[t], path[t + 1]).abs(), PI / 2.0);
                }
            }
        }
    }

    #[test]
    fn winding_basics() {
        let d = build_box(1, 1).unwrap();
        let mg = medial_graph(&d, &BoundaryCondition::Free).unwrap();
        // Loop around the diamond of vertex (0, 0): counterclockwise.
        let v = d.vertex_index(0, 0).unwrap();
        let mut around: Vec<usize> = (0..mg.n_edges()).filter(|&i| mg.edges[i].primal == v).collect();
        let mut cyc = vec![around.remove(0)];
        while !around.is_empty() {
            let last = *cyc.last().unwrap();
            let pos = around.iter().position(|&j| mg.edges[j].tail == mg.edges[last].head).unwrap();
            cyc.push(around.remove(pos));
        }
        cyc.push(cyc[0]);
        assert!((winding_between(&mg, &cyc, 0, 4) - 2.0 * PI).abs() < 1e-15);
        assert_eq!(winding(&mg, &cyc, cyc[1], cyc[1]).unwrap(), 0.0);
    }

    #[test]
    fn loop_weights_match_cluster_weights() {
        for (w, h, a, b) in [(1, 1, 0, 2), (2, 1, 0, 3), (2, 1, 1, 4)] {
            let d = build_box(w, h).unwrap();
            let bc = BoundaryCondition::Dobrushin { a, b };
            let mg = medial_graph(&d, &bc).unwrap();
            let rel: BTreeSet<usize> = relevant_edges(&mg).into_iter().collect();
            for p in [0.4, psd(), 0.7] {
                let params = ModelParams::new(p, 2.0).unwrap();
                let mut ratios = Vec::new();
                for idx in 0..(1u64 << d.n_edges()) {
                    let cfg = Configuration::from_index(idx, d.n_edges());
                    let mut lw = loop_weight(&cfg, &mg, p).unwrap();
                    for k in 0..d.n_edges() {
                        if !rel.contains(&k) {
                            lw *= if cfg.is_open(k) { p } else { 1.0 - p };
                        }
                    }
                    ratios.push(weight(&d, &cfg, params, &bc).unwrap() / lw);
                }
                let r0 = ratios[0];
                assert!(ratios.iter().all(|r| (r / r0 - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn observable_basic_properties() {
        for p in [0.4, psd(), 0.7] {
            let f = field(1, 1, 0, 2, p);
            assert!((f.values[f.e_b()] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
            assert!(f.argument_residual() < 1e-10);
            let dec = loop_decomposition(&Configuration::all_closed(4), &f.medial).unwrap();
            let wa = winding_between(&f.medial, &dec.exploration_path, 0, dec.exploration_path.len() - 1);
            assert!((f.values[f.e_a()] - Complex64::from_polar(1.0, wa / 2.0)).norm() < 1e-14);
            assert!(check_vertex_relation(&f) < 1e-10);
            assert_eq!(check_massive_harmonicity(&f), None);
        }
    }

    #[test]
    fn observable_rejects_other_q_and_large_domains() {
        let d = build_box(1, 1).unwrap();
        let bc = BoundaryCondition::Dobrushin { a: 0, b: 2 };
        assert!(observable_exact(&d, &bc, ModelParams::new(0.5, 3.0).unwrap()).is_err());
        let big = build_box(4, 3).unwrap();
        assert!(observable_exact(&big, &bc, ModelParams::new(0.5, 2.0).unwrap()).is_err());
    }

    #[test]
    fn relations_on_three_by_two() {
        for p in [0.4, psd(), 0.7] {
            let f = field(3, 2, 0, 3, p);
            assert!(f.argument_residual() < 1e-10);
            assert!(check_vertex_relation(&f) < 1e-10);
            assert!(check_massive_harmonicity(&f).unwrap() < 1e-9);
            assert!(check_free_arc_relation(&f).unwrap().unwrap() < 1e-9);
            let r = massive_walk_identity(&f, &MassiveWalkParams::new(p)).unwrap();
            assert!(r.residual < 1e-8, "{r:?}");
        }
    }

    #[test]
    fn boundary_connection_probability() {
        for p in [0.4, psd()] {
            let d = build_box(2, 1).unwrap();
            let bc = BoundaryCondition::Dobrushin { a: 0, b: 3 };
            let params = ModelParams::new(p, 2.0).unwrap();
            let f = observable_exact(&d, &bc, params).unwrap();
            let dist = exact_distribution(&d, params, &bc).unwrap();
            assert!(check_boundary_connection(&f, &dist).unwrap() < 1e-10);
        }
    }

    #[test]
    fn uncovered_domain_is_rejected() {
        let f = field(2, 2, 0, 4, psd());
        let err = massive_walk_identity(&f, &MassiveWalkParams::new(psd()));
        assert!(matches!(err, Err(RcmError::Precondition(_))));
    }

    #[test]
    fn csv_dump_has_one_row_per_edge() {
        let f = field(1, 1, 0, 2, psd());
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), f.medial.n_edges() + 1);
    }
}
