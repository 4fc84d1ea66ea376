use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use nalgebra::{Matrix3, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bbox_diagonal, TriMesh};
use crate::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SurgeryConfig {
    pub shape_weight: f64,
    pub sampling_weight: f64,
    /// Collapses joining nodes farther apart than this fraction of the
    /// bounding-box diagonal are refused.
    pub max_collapse_fraction: f64,
}

impl Default for SurgeryConfig {
    fn default() -> Self {
        SurgeryConfig {
            shape_weight: 1.0,
            sampling_weight: 0.1,
            max_collapse_fraction: 0.5,
        }
    }
}

/// 1-D skeleton graph produced by edge collapse.
///
/// `absorbed[e]` lists the input vertices attributed to edge `e`; every vertex
/// of a node with at least one edge appears in exactly one edge set.
/// `node_absorbed[n]` is the collapse partition at node level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonGraph {
    pub nodes: Vec<Vec3>,
    pub edges: Vec<[usize; 2]>,
    pub absorbed: Vec<Vec<usize>>,
    pub node_absorbed: Vec<Vec<usize>>,
}

impl SkeletonGraph {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges.iter().filter(|e| e.contains(&node)).count()
    }

    pub fn component_labels(&self) -> Vec<usize> {
        crate::geometry::component_labels(self.nodes.len(), &self.edges)
    }

    pub fn num_components(&self) -> usize {
        self.component_labels().iter().max().map_or(0, |m| m + 1)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let g: SkeletonGraph =
            serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.absorbed.len() != self.edges.len() || self.node_absorbed.len() != n {
            return Err(Error::Schema("absorbed sets do not match graph size".into()));
        }
        for e in &self.edges {
            if e[0] >= n || e[1] >= n || e[0] == e[1] {
                return Err(Error::Schema(format!("bad edge {e:?}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    a: usize,
    b: usize,
    va: u64,
    vb: u64,
}

impl PartialEq for Candidate {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Candidate {
    // reversed: BinaryHeap pops the cheapest, ties by lowest (a, b)
    fn cmp(&self, o: &Self) -> Ordering {
        o.cost
            .total_cmp(&self.cost)
            .then_with(|| (o.a, o.b).cmp(&(self.a, self.b)))
    }
}

struct Collapser<'a> {
    cfg: &'a SurgeryConfig,
    pos: Vec<Vec3>,
    quadric: Vec<Matrix4<f64>>,
    alive: Vec<bool>,
    version: Vec<u64>,
    nbrs: Vec<BTreeSet<usize>>,
    node_faces: Vec<BTreeSet<usize>>,
    faces: Vec<[usize; 3]>,
    face_alive: Vec<bool>,
    live_faces: usize,
    absorbed: Vec<Vec<usize>>,
    max_len: f64,
}

fn face_quadric(p: [Vec3; 3]) -> Option<Matrix4<f64>> {
    let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
    let len = n.norm();
    if !(len > 0.0) {
        return None;
    }
    let n = n / len;
    let h = Vector4::new(n.x, n.y, n.z, -n.dot(&p[0]));
    Some(h * h.transpose())
}

fn quadric_error(q: &Matrix4<f64>, p: &Vec3) -> f64 {
    let h = Vector4::new(p.x, p.y, p.z, 1.0);
    (h.transpose() * q * h)[0].max(0.0)
}

/// Optimal point of a quadric, or the midpoint when the 3×3 block is
/// (nearly) singular or the optimum strays off the edge.
fn placement(q: &Matrix4<f64>, a: &Vec3, b: &Vec3) -> Vec3 {
    let mid = (a + b) * 0.5;
    let m: Matrix3<f64> = q.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant().abs() >= 1e-12 {
        if let Some(inv) = m.try_inverse() {
            let p = -(inv * q.fixed_view::<3, 1>(0, 3));
            if p.iter().all(|c| c.is_finite()) && (p - mid).norm() <= (a - b).norm() {
                return p;
            }
        }
    }
    mid
}

impl<'a> Collapser<'a> {
    fn new(mesh: &TriMesh, cfg: &'a SurgeryConfig) -> Self {
        let n = mesh.num_vertices();
        let pos = mesh.vertices().to_vec();
        let mut quadric = vec![Matrix4::zeros(); n];
        let mut node_faces = vec![BTreeSet::new(); n];
        for (fi, f) in mesh.faces().iter().enumerate() {
            if let Some(k) = face_quadric([pos[f[0]], pos[f[1]], pos[f[2]]]) {
                for &v in f {
                    quadric[v] += k;
                }
            }
            for &v in f {
                node_faces[v].insert(fi);
            }
        }
        let mut nbrs = vec![BTreeSet::new(); n];
        for &[a, b] in mesh.edges() {
            nbrs[a].insert(b);
            nbrs[b].insert(a);
        }
        Collapser {
            cfg,
            max_len: cfg.max_collapse_fraction * bbox_diagonal(&pos),
            pos,
            quadric,
            alive: vec![true; n],
            version: vec![0; n],
            nbrs,
            node_faces,
            faces: mesh.faces().to_vec(),
            face_alive: vec![true; mesh.num_faces()],
            live_faces: mesh.num_faces(),
            absorbed: (0..n).map(|i| vec![i]).collect(),
        }
    }

    fn has_face(&self, a: usize, b: usize) -> bool {
        self.node_faces[a]
            .iter()
            .any(|&f| self.face_alive[f] && self.faces[f].contains(&b))
    }

    fn travel(&self, v: usize) -> f64 {
        self.nbrs[v]
            .iter()
            .map(|&k| (self.pos[v] - self.pos[k]).norm())
            .sum()
    }

    fn cost(&self, a: usize, b: usize) -> f64 {
        let q = self.quadric[a] + self.quadric[b];
        let p = placement(&q, &self.pos[a], &self.pos[b]);
        let shape = quadric_error(&q, &p);
        let sample = (self.pos[a] - self.pos[b]).norm() * (self.travel(a) + self.travel(b));
        self.cfg.shape_weight * shape + self.cfg.sampling_weight * sample
    }

    fn candidate(&self, a: usize, b: usize) -> Option<Candidate> {
        let (a, b) = (a.min(b), a.max(b));
        if !self.has_face(a, b) || (self.pos[a] - self.pos[b]).norm() > self.max_len {
            return None;
        }
        Some(Candidate {
            cost: self.cost(a, b),
            a,
            b,
            va: self.version[a],
            vb: self.version[b],
        })
    }

    fn valid(&self, c: &Candidate) -> bool {
        self.alive[c.a]
            && self.alive[c.b]
            && self.version[c.a] == c.va
            && self.version[c.b] == c.vb
            && self.nbrs[c.a].contains(&c.b)
            && self.has_face(c.a, c.b)
    }

    /// Merge `b` into `a`.
    fn collapse(&mut self, a: usize, b: usize) {
        let q = self.quadric[a] + self.quadric[b];
        self.pos[a] = placement(&q, &self.pos[a], &self.pos[b]);
        self.quadric[a] = q;
        let moved = std::mem::take(&mut self.absorbed[b]);
        self.absorbed[a].extend(moved);

        let b_faces: Vec<usize> = self.node_faces[b].iter().copied().collect();
        for f in b_faces {
            if !self.face_alive[f] {
                continue;
            }
            if self.faces[f].contains(&a) {
                self.kill_face(f);
                continue;
            }
            for v in &mut self.faces[f] {
                if *v == b {
                    *v = a;
                }
            }
            let mut key = self.faces[f];
            key.sort_unstable();
            let dup = self.node_faces[a].iter().any(|&g| {
                let mut k = self.faces[g];
                k.sort_unstable();
                g != f && self.face_alive[g] && k == key
            });
            if dup {
                self.faces[f] = self.faces[f].map(|v| if v == a { b } else { v });
                self.kill_face(f);
            } else {
                self.node_faces[a].insert(f);
            }
        }
        self.node_faces[b].clear();

        let b_nbrs: Vec<usize> = std::mem::take(&mut self.nbrs[b]).into_iter().collect();
        for k in b_nbrs {
            self.nbrs[k].remove(&b);
            if k != a {
                self.nbrs[k].insert(a);
                self.nbrs[a].insert(k);
            }
        }
        self.nbrs[a].remove(&b);
        self.alive[b] = false;
    }

    fn kill_face(&mut self, f: usize) {
        self.face_alive[f] = false;
        self.live_faces -= 1;
        for v in self.faces[f] {
            self.node_faces[v].remove(&f);
        }
    }

    fn push_around(&mut self, heap: &mut BinaryHeap<Candidate>, v: usize) {
        let mut touched: BTreeSet<usize> = self.nbrs[v].clone();
        touched.insert(v);
        for &t in &touched {
            self.version[t] += 1;
        }
        let mut seen = BTreeSet::new();
        for &t in &touched {
            for &k in &self.nbrs[t] {
                let key = (t.min(k), t.max(k));
                if seen.insert(key) {
                    if let Some(c) = self.candidate(key.0, key.1) {
                        heap.push(c);
                    }
                }
            }
        }
    }

    fn run(mut self) -> SkeletonGraph {
        let mut heap = BinaryHeap::new();
        for a in 0..self.pos.len() {
            for &b in &self.nbrs[a] {
                if a < b {
                    if let Some(c) = self.candidate(a, b) {
                        heap.push(c);
                    }
                }
            }
        }
        while self.live_faces > 0 {
            let Some(c) = heap.pop() else { break };
            if !self.valid(&c) {
                continue;
            }
            self.collapse(c.a, c.b);
            self.push_around(&mut heap, c.a);
        }
        self.finish()
    }

    fn finish(self) -> SkeletonGraph {
        let mut index = vec![usize::MAX; self.pos.len()];
        let mut nodes = Vec::new();
        let mut node_absorbed = Vec::new();
        for v in 0..self.pos.len() {
            if self.alive[v] {
                index[v] = nodes.len();
                nodes.push(self.pos[v]);
                let mut s = self.absorbed[v].clone();
                s.sort_unstable();
                node_absorbed.push(s);
            }
        }
        let mut edges = BTreeSet::new();
        for v in 0..self.pos.len() {
            if self.alive[v] {
                for &k in &self.nbrs[v] {
                    let (x, y) = (index[v], index[k]);
                    edges.insert([x.min(y), x.max(y)]);
                }
            }
        }
        let edges: Vec<[usize; 2]> = edges.into_iter().collect();
        // edge attribution needs the input positions; filled in by the caller
        SkeletonGraph {
            absorbed: vec![Vec::new(); edges.len()],
            nodes,
            edges,
            node_absorbed,
        }
    }
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + d * t)).norm()
}

/// Splits each node's absorbed vertices among its incident edges, assigning
/// a vertex to the nearest edge segment (ties to the lowest edge index).
pub fn edge_partition(
    nodes: &[Vec3],
    edges: &[[usize; 2]],
    node_absorbed: &[Vec<usize>],
    positions: &[Vec3],
) -> Vec<Vec<usize>> {
    let mut incident = vec![Vec::new(); nodes.len()];
    for (ei, e) in edges.iter().enumerate() {
        incident[e[0]].push(ei);
        incident[e[1]].push(ei);
    }
    let mut out = vec![Vec::new(); edges.len()];
    for (n, verts) in node_absorbed.iter().enumerate() {
        if incident[n].is_empty() {
            continue;
        }
        for &v in verts {
            let p = &positions[v];
            let best = incident[n]
                .iter()
                .copied()
                .min_by(|&x, &y| {
                    let dx = point_segment_distance(p, &nodes[edges[x][0]], &nodes[edges[x][1]]);
                    let dy = point_segment_distance(p, &nodes[edges[y][0]], &nodes[edges[y][1]]);
                    dx.total_cmp(&dy).then(x.cmp(&y))
                })
                .expect("non-empty");
            out[best].push(v);
        }
    }
    for s in &mut out {
        s.sort_unstable();
    }
    out
}

/// Removes degree-2 nodes while the edge replacing them is no longer than
/// `min_length`, shortest replacement first. A removed node's vertices go
/// to the nearer neighbour; edge sets are left empty for `edge_partition`.
pub fn coarsen_chains(graph: &SkeletonGraph, min_length: f64) -> SkeletonGraph {
    let n = graph.nodes.len();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &[a, b] in &graph.edges {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let mut node_absorbed = graph.node_absorbed.clone();
    let mut alive = vec![true; n];
    loop {
        let mut best: Option<(f64, usize, usize, usize)> = None;
        for k in (0..n).filter(|&k| alive[k] && adj[k].len() == 2) {
            let mut it = adj[k].iter().copied();
            let (a, b) = (it.next().expect("two"), it.next().expect("two"));
            if adj[a].contains(&b) {
                continue;
            }
            let d = (graph.nodes[a] - graph.nodes[b]).norm();
            if d <= min_length && best.is_none_or(|x| d < x.0) {
                best = Some((d, k, a, b));
            }
        }
        let Some((_, k, a, b)) = best else { break };
        let near = if (graph.nodes[k] - graph.nodes[a]).norm() <= (graph.nodes[k] - graph.nodes[b]).norm() {
            a
        } else {
            b
        };
        let moved = std::mem::take(&mut node_absorbed[k]);
        node_absorbed[near].extend(moved);
        node_absorbed[near].sort_unstable();
        adj[a].remove(&k);
        adj[b].remove(&k);
        adj[a].insert(b);
        adj[b].insert(a);
        adj[k].clear();
        alive[k] = false;
    }
    let mut index = vec![usize::MAX; n];
    let mut nodes = Vec::new();
    let mut absorbed_nodes = Vec::new();
    for k in (0..n).filter(|&k| alive[k]) {
        index[k] = nodes.len();
        nodes.push(graph.nodes[k]);
        absorbed_nodes.push(std::mem::take(&mut node_absorbed[k]));
    }
    let mut edges = Vec::new();
    for a in 0..n {
        for &b in adj[a].iter().filter(|&&b| b > a) {
            edges.push([index[a], index[b]]);
        }
    }
    SkeletonGraph {
        nodes,
        absorbed: vec![Vec::new(); edges.len()],
        edges,
        node_absorbed: absorbed_nodes,
    }
}

/// Collapses face-incident edges by increasing cost until no triangle
/// remains, returning the 1-D graph. Vertices are attributed to graph edges
/// using their positions in `mesh` (normally the contracted mesh).
pub fn connectivity_surgery(mesh: &TriMesh, cfg: &SurgeryConfig) -> Result<SkeletonGraph> {
    if mesh.num_vertices() == 0 {
        return Err(Error::EmptyGraph);
    }
    if !(cfg.shape_weight >= 0.0 && cfg.sampling_weight >= 0.0 && cfg.max_collapse_fraction > 0.0)
    {
        return Err(Error::Config("surgery weights must be non-negative".into()));
    }
    let mut g = Collapser::new(mesh, cfg).run();
    g.absorbed = edge_partition(&g.nodes, &g.edges, &g.node_absorbed, mesh.vertices());
    Ok(g)
}
