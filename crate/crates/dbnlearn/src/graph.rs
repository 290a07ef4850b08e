//! Directed-graph primitives shared by every other module: edge supports,
//! DFS cycle detection, acyclicity checks and magnitude thresholding.
//!
//! Vertices are 0-indexed internally; all user-facing formatting (`Display`
//! impls) is 1-indexed.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{BufRead, Write};

use ndarray::Array2;

use crate::error::{Error, Result};

/// Set of directed edges `(from, to)` on `d` vertices, no self-loops.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeSupport {
    d: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSupport {
    pub fn new(d: usize) -> Self {
        EdgeSupport {
            d,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_edges<I: IntoIterator<Item = (usize, usize)>>(d: usize, iter: I) -> Result<Self> {
        let mut s = EdgeSupport::new(d);
        for (i, j) in iter {
            s.insert(i, j)?;
        }
        Ok(s)
    }

    /// Inserts edge `from -> to`. Rejects self-loops and out-of-range vertices;
    /// duplicate inserts are no-ops.
    pub fn insert(&mut self, from: usize, to: usize) -> Result<()> {
        if from == to {
            return Err(Error::Config(format!(
                "self-loop ({}, {}) not allowed",
                from + 1,
                to + 1
            )));
        }
        if from >= self.d || to >= self.d {
            return Err(Error::Config(format!(
                "edge ({}, {}) out of range for {} vertices",
                from + 1,
                to + 1,
                self.d
            )));
        }
        self.edges.insert((from, to));
        Ok(())
    }

    pub fn remove(&mut self, from: usize, to: usize) {
        self.edges.remove(&(from, to));
    }

    pub fn contains(&self, from: usize, to: usize) -> bool {
        self.edges.contains(&(from, to))
    }

    pub fn vertex_count(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges in ascending `(from, to)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Adjacency lists with neighbours in ascending order.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.d];
        for &(i, j) in &self.edges {
            adj[i].push(j);
        }
        adj
    }

    /// True when `self`'s edges are a subset of `other`'s.
    pub fn is_subset_of(&self, other: &EdgeSupport) -> bool {
        self.edges.is_subset(&other.edges)
    }
}

impl fmt::Display for EdgeSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (k, (i, j)) in self.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({}, {})", i + 1, j + 1)?;
        }
        write!(f, "}}")
    }
}

/// A simple directed cycle, stored as the closed edge walk
/// `(v1,v2), (v2,v3), ..., (vk,v1)` with all `vi` distinct.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Cycle {
    edges: Vec<(usize, usize)>,
}

impl Cycle {
    /// Builds a cycle from its vertex sequence `v1, ..., vk` (closing edge
    /// `vk -> v1` implied). Validates simplicity and `k >= 2`.
    pub fn from_vertices(vertices: &[usize]) -> Result<Self> {
        let k = vertices.len();
        if k < 2 {
            return Err(Error::Config(format!("cycle length {} < 2", k)));
        }
        let distinct: BTreeSet<usize> = vertices.iter().copied().collect();
        if distinct.len() != k {
            return Err(Error::Config("cycle vertices not distinct".into()));
        }
        let mut edges = Vec::with_capacity(k);
        for t in 0..k {
            edges.push((vertices[t], vertices[(t + 1) % k]));
        }
        Ok(Cycle { edges })
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Canonical key: the vertex sequence rotated so the smallest vertex
    /// comes first. Two representations of the same cycle share a key.
    pub fn canonical_key(&self) -> Vec<usize> {
        let verts: Vec<usize> = self.edges.iter().map(|&(i, _)| i).collect();
        let pos = verts
            .iter()
            .enumerate()
            .min_by_key(|&(_, v)| *v)
            .map(|(p, _)| p)
            .unwrap();
        let mut out = Vec::with_capacity(verts.len());
        for t in 0..verts.len() {
            out.push(verts[(pos + t) % verts.len()]);
        }
        out
    }

    /// Replays the edge list and checks it is a closed simple cycle.
    pub fn is_valid(&self) -> bool {
        let k = self.edges.len();
        if k < 2 {
            return false;
        }
        let mut seen = BTreeSet::new();
        for t in 0..k {
            let (from, to) = self.edges[t];
            if !seen.insert(from) {
                return false;
            }
            let (next_from, _) = self.edges[(t + 1) % k];
            if to != next_from {
                return false;
            }
        }
        true
    }
}

impl fmt::Display for Cycle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &(i, _) in &self.edges {
            write!(f, "{} -> ", i + 1)?;
        }
        write!(f, "{}", self.edges[0].0 + 1)
    }
}

/// Weighted dynamic-network graph: intra-slice matrix `W` (d x d, zero
/// diagonal) and `p` inter-slice lag matrices `A[s]` (each d x d).
///
/// Edge supports are derived from nonzero weights; there is no separate
/// support state to fall out of sync.
#[derive(Debug, Clone, PartialEq)]
pub struct DbnGraph {
    d: usize,
    p: usize,
    w: Array2<f64>,
    a: Vec<Array2<f64>>,
}

impl DbnGraph {
    pub fn new(w: Array2<f64>, a: Vec<Array2<f64>>) -> Result<Self> {
        let d = w.nrows();
        if w.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "W must be square, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        for (s, m) in a.iter().enumerate() {
            if m.nrows() != d || m.ncols() != d {
                return Err(Error::DimensionMismatch(format!(
                    "A[{}] must be {}x{}, got {}x{}",
                    s + 1,
                    d,
                    d,
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        for i in 0..d {
            if w[(i, i)] != 0.0 {
                return Err(Error::Config(format!(
                    "W diagonal must be zero, W[{},{}] = {}",
                    i + 1,
                    i + 1,
                    w[(i, i)]
                )));
            }
        }
        let p = a.len();
        Ok(DbnGraph { d, p, w, a })
    }

    /// All-zero graph.
    pub fn zeros(d: usize, p: usize) -> Self {
        DbnGraph {
            d,
            p,
            w: Array2::zeros((d, d)),
            a: vec![Array2::zeros((d, d)); p],
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn w(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn a(&self) -> &[Array2<f64>] {
        &self.a
    }

    pub fn w_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    pub fn a_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.a
    }

    /// Support of `W`: edges where the weight is nonzero.
    pub fn intra_support(&self) -> EdgeSupport {
        let mut s = EdgeSupport::new(self.d);
        for i in 0..self.d {
            for j in 0..self.d {
                if i != j && self.w[(i, j)] != 0.0 {
                    s.edges.insert((i, j));
                }
            }
        }
        s
    }

    /// Support of `A[s]` (both self-lags and cross-lags allowed). `lag` is
    /// 1-based; panics when out of range.
    pub fn inter_support(&self, lag: usize) -> Vec<(usize, usize)> {
        let m = &self.a[lag - 1];
        let mut out = Vec::new();
        for i in 0..self.d {
            for j in 0..self.d {
                if m[(i, j)] != 0.0 {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn intra_edge_count(&self) -> usize {
        self.intra_support().len()
    }

    pub fn inter_edge_count(&self) -> usize {
        (1..=self.p).map(|s| self.inter_support(s).len()).sum()
    }

    pub fn is_intra_acyclic(&self) -> bool {
        is_acyclic(&self.intra_support())
    }

    /// Plain-text serialization: header `d p`, then `W` as `d` rows of `d`
    /// decimals, then each `A[s]` likewise. Numbers use Rust's shortest
    /// round-trip formatting, so read-back is bit-exact.
    pub fn write_text<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "{} {}", self.d, self.p)?;
        write_matrix(out, &self.w)?;
        for m in &self.a {
            write_matrix(out, m)?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(input: &mut R) -> Result<Self> {
        let mut lines = input.lines().enumerate();
        let (line_no, header) = lines
            .next()
            .ok_or_else(|| Error::Data {
                line: 1,
                msg: "empty graph file".into(),
            })
            .and_then(|(n, r)| r.map(|l| (n + 1, l)).map_err(Error::Io))?;
        let mut it = header.split_whitespace();
        let d: usize = parse_field(it.next(), line_no, "d")?;
        let p: usize = parse_field(it.next(), line_no, "p")?;
        let read_matrix = |lines: &mut dyn Iterator<Item = (usize, std::io::Result<String>)>|
         -> Result<Array2<f64>> {
            let mut m = Array2::zeros((d, d));
            for i in 0..d {
                let (n, row) = lines
                    .next()
                    .ok_or_else(|| Error::Data {
                        line: line_no,
                        msg: "unexpected end of graph file".into(),
                    })
                    .and_then(|(n, r)| r.map(|l| (n + 1, l)).map_err(Error::Io))?;
                let vals: Vec<&str> = row.split_whitespace().collect();
                if vals.len() != d {
                    return Err(Error::Data {
                        line: n,
                        msg: format!("expected {} values, got {}", d, vals.len()),
                    });
                }
                for (j, v) in vals.iter().enumerate() {
                    m[(i, j)] = v.parse().map_err(|_| Error::Data {
                        line: n,
                        msg: format!("not a number: {:?}", v),
                    })?;
                }
            }
            Ok(m)
        };
        let w = read_matrix(&mut lines)?;
        let mut a = Vec::with_capacity(p);
        for _ in 0..p {
            a.push(read_matrix(&mut lines)?);
        }
        DbnGraph::new(w, a)
    }

    pub fn write_file(&self, path: &std::path::Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut f)
    }

    pub fn read_file(path: &std::path::Path) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_text(&mut f)
    }
}

fn write_matrix<W: Write>(out: &mut W, m: &Array2<f64>) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{}", v)).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(tok: Option<&str>, line: usize, name: &str) -> Result<T> {
    tok.ok_or_else(|| Error::Data {
        line,
        msg: format!("missing header field {}", name),
    })?
    .parse()
    .map_err(|_| Error::Data {
        line,
        msg: format!("bad header field {}", name),
    })
}

/// Finds simple cycles via one DFS traversal from every unvisited root in
/// ascending vertex order: each back edge closes one cycle through the
/// current DFS stack. Returns the empty list iff the graph is acyclic.
pub fn find_cycles(support: &EdgeSupport) -> Vec<Cycle> {
    let d = support.vertex_count();
    let adj = support.adjacency();
    let mut color = vec![0u8; d]; // 0 white, 1 on stack, 2 done
    let mut stack_pos = vec![usize::MAX; d];
    let mut stack = Vec::new();
    let mut cycles = Vec::new();

    // Iterative DFS; frame = (vertex, next neighbour index).
    for root in 0..d {
        if color[root] != 0 {
            continue;
        }
        let mut frames: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        stack_pos[root] = 0;
        stack.push(root);
        while let Some(&mut (u, ref mut next)) = frames.last_mut() {
            if *next < adj[u].len() {
                let v = adj[u][*next];
                *next += 1;
                match color[v] {
                    0 => {
                        color[v] = 1;
                        stack_pos[v] = stack.len();
                        stack.push(v);
                        frames.push((v, 0));
                    }
                    1 => {
                        // Back edge u -> v: the stack from v to u is a simple cycle.
                        let verts = stack[stack_pos[v]..].to_vec();
                        cycles.push(
                            Cycle::from_vertices(&verts)
                                .expect("DFS stack segment is a simple cycle"),
                        );
                    }
                    _ => {}
                }
            } else {
                frames.pop();
                color[u] = 2;
                stack_pos[u] = usize::MAX;
                stack.pop();
            }
        }
    }
    cycles
}

/// True iff the support contains no directed cycle. Early-exit DFS;
/// agrees with `find_cycles(support).is_empty()` by construction.
pub fn is_acyclic(support: &EdgeSupport) -> bool {
    let d = support.vertex_count();
    let adj = support.adjacency();
    let mut color = vec![0u8; d];
    for root in 0..d {
        if color[root] != 0 {
            continue;
        }
        let mut frames: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(&mut (u, ref mut next)) = frames.last_mut() {
            if *next < adj[u].len() {
                let v = adj[u][*next];
                *next += 1;
                match color[v] {
                    0 => {
                        color[v] = 1;
                        frames.push((v, 0));
                    }
                    1 => return false,
                    _ => {}
                }
            } else {
                frames.pop();
                color[u] = 2;
            }
        }
    }
    true
}

/// Copy of `g` with every weight of magnitude `< delta` zeroed (removed
/// from the support). Entries at or above `delta` are preserved exactly.
pub fn threshold(g: &DbnGraph, delta: f64) -> DbnGraph {
    assert!(delta >= 0.0, "threshold requires delta >= 0");
    let mut out = g.clone();
    out.w.mapv_inplace(|v| if v.abs() < delta { 0.0 } else { v });
    for m in &mut out.a {
        m.mapv_inplace(|v| if v.abs() < delta { 0.0 } else { v });
    }
    out
}
