//! The ward adjacency graph and its plain-text formats.
//!
//! The canonical on-disk form is a ward manifest (one id per line) plus an
//! edge list with one `ward_a<TAB>ward_b` pair per line. Blank lines and lines
//! starting with `#` are ignored in both.

use std::collections::{HashMap, VecDeque};
use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};

/// Undirected simple graph over a fixed, ordered set of wards.
#[derive(Debug, Clone, PartialEq)]
pub struct WardGraph {
    ward_ids: Vec<String>,
    index: HashMap<String, usize>,
    neighbours: Vec<Vec<usize>>,
}

impl WardGraph {
    /// Builds a graph from ward ids and index pairs. Duplicate edges are merged.
    pub fn new(ward_ids: Vec<String>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = ward_ids.len();
        if n < 2 {
            return Err(Error::InvalidGraph(format!("need at least 2 wards, got {n}")));
        }
        let mut index = HashMap::with_capacity(n);
        for (i, id) in ward_ids.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::InvalidGraph(format!("ward {i} has an empty id")));
            }
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateWard(id.clone()));
            }
        }
        let mut neighbours = vec![Vec::new(); n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(Error::IndexOutOfRange { index: a.max(b), len: n });
            }
            if a == b {
                return Err(Error::InvalidGraph(format!(
                    "self-loop on ward `{}`",
                    ward_ids[a]
                )));
            }
            neighbours[a].push(b);
            neighbours[b].push(a);
        }
        for list in &mut neighbours {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Self { ward_ids, index, neighbours })
    }

    /// Builds a graph from a dense 0/1 adjacency matrix.
    pub fn from_adjacency(ward_ids: Vec<String>, adjacency: &DMatrix<f64>) -> Result<Self> {
        let n = ward_ids.len();
        if adjacency.nrows() != n || adjacency.ncols() != n {
            return Err(Error::InvalidGraph(format!(
                "adjacency is {}x{} but there are {n} wards",
                adjacency.nrows(),
                adjacency.ncols()
            )));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let a = adjacency[(i, j)];
                if a != 0.0 && a != 1.0 {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency entry ({i}, {j}) = {a} is not 0/1"
                    )));
                }
                if a != adjacency[(j, i)] {
                    return Err(Error::InvalidGraph("adjacency is not symmetric".into()));
                }
                if i == j && a != 0.0 {
                    return Err(Error::InvalidGraph(format!("self-loop at {i}")));
                }
                if i < j && a == 1.0 {
                    edges.push((i, j));
                }
            }
        }
        Self::new(ward_ids, &edges)
    }

    pub fn len(&self) -> usize {
        self.ward_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ward_ids.is_empty()
    }

    pub fn ward_ids(&self) -> &[String] {
        &self.ward_ids
    }

    pub fn ward_id(&self, i: usize) -> &str {
        &self.ward_ids[i]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn neighbours(&self, i: usize) -> &[usize] {
        &self.neighbours[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbours[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.neighbours[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, list) in self.neighbours.iter().enumerate() {
            out.extend(list.iter().filter(|&&j| j > i).map(|&j| (i, j)));
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.neighbours.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut a = DMatrix::zeros(n, n);
        for (i, list) in self.neighbours.iter().enumerate() {
            for &j in list {
                a[(i, j)] = 1.0;
            }
        }
        a
    }

    /// Breadth-first hop counts from `source`; `None` for unreachable wards.
    pub fn hop_distances(&self, source: usize) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u].unwrap_or(0);
            for &v in &self.neighbours[u] {
                if dist[v].is_none() {
                    dist[v] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        self.hop_distances(0).iter().all(Option::is_some)
    }

    /// Relabels wards so that new ward `k` is old ward `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut inverse = vec![usize::MAX; n];
        for (k, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidParameter("order is not a permutation".into()));
            }
            inverse[old] = k;
        }
        if order.len() != n {
            return Err(Error::InvalidParameter("order is not a permutation".into()));
        }
        let ids = order.iter().map(|&old| self.ward_ids[old].clone()).collect();
        let edges: Vec<_> = self
            .edges()
            .into_iter()
            .map(|(a, b)| (inverse[a], inverse[b]))
            .collect();
        Self::new(ids, &edges)
    }

    /// Parses an edge list. Without a manifest the ward order is the order of
    /// first appearance in the edge list (isolated wards then cannot exist).
    pub fn from_edge_list<R: BufRead>(reader: R, manifest: Option<Vec<String>>) -> Result<Self> {
        let mut pairs = Vec::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(b), None) if !a.trim().is_empty() && !b.trim().is_empty() => {
                    pairs.push((a.trim().to_string(), b.trim().to_string()))
                }
                _ => {
                    return Err(Error::Parse(format!(
                        "edge list line {}: expected `ward_a<TAB>ward_b`",
                        lineno + 1
                    )))
                }
            }
        }
        let ids = match manifest {
            Some(ids) => ids,
            None => {
                let mut seen = HashMap::new();
                let mut ids = Vec::new();
                for (a, b) in &pairs {
                    for id in [a, b] {
                        if seen.insert(id.clone(), ()).is_none() {
                            ids.push(id.clone());
                        }
                    }
                }
                ids
            }
        };
        let lookup: HashMap<&str, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut edges = Vec::with_capacity(pairs.len());
        for (a, b) in &pairs {
            let ia = *lookup.get(a.as_str()).ok_or_else(|| Error::UnknownWard(a.clone()))?;
            let ib = *lookup.get(b.as_str()).ok_or_else(|| Error::UnknownWard(b.clone()))?;
            edges.push((ia, ib));
        }
        Self::new(ids, &edges)
    }

    pub fn write_edge_list<W: Write>(&self, mut out: W) -> Result<()> {
        for (a, b) in self.edges() {
            writeln!(out, "{}\t{}", self.ward_ids[a], self.ward_ids[b])?;
        }
        Ok(())
    }

    pub fn write_manifest<W: Write>(&self, mut out: W) -> Result<()> {
        for id in &self.ward_ids {
            writeln!(out, "{id}")?;
        }
        Ok(())
    }

    // Generated graphs used by tests, the simulation harness and the CLI.

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(numbered_ids(n), &edges)
    }

    pub fn cycle(n: usize) -> Result<Self> {
        let mut edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        if n > 2 {
            edges.push((n - 1, 0));
        }
        Self::new(numbered_ids(n), &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::new(numbered_ids(n), &edges)
    }

    pub fn edgeless(n: usize) -> Result<Self> {
        Self::new(numbered_ids(n), &[])
    }

    /// Rook-adjacency lattice, row-major ward order.
    pub fn grid(rows: usize, cols: usize) -> Result<Self> {
        let at = |r: usize, c: usize| r * cols + c;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((at(r, c), at(r, c + 1)));
                }
                if r + 1 < rows {
                    edges.push((at(r, c), at(r + 1, c)));
                }
            }
        }
        Self::new(numbered_ids(rows * cols), &edges)
    }

    /// Erdos-Renyi G(n, p).
    pub fn random(n: usize, p: f64, rng: &mut crate::Rng) -> Result<Self> {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::new(numbered_ids(n), &edges)
    }

    /// A fixed 76-ward planar map used as the stand-in study region.
    ///
    /// An 8 x 10 lattice with its four corner cells removed, rook adjacency
    /// plus one diagonal per lattice square (chosen by a fixed-seed coin), so
    /// every interior face is a triangle as in a real ward map. Degrees range
    /// from 2 to 8.
    pub fn study_region() -> Self {
        const ROWS: usize = 8;
        const COLS: usize = 10;
        let removed = [(0, 0), (0, COLS - 1), (ROWS - 1, 0), (ROWS - 1, COLS - 1)];
        let mut slot = vec![None; ROWS * COLS];
        let mut next = 0;
        for r in 0..ROWS {
            for c in 0..COLS {
                if !removed.contains(&(r, c)) {
                    slot[r * COLS + c] = Some(next);
                    next += 1;
                }
            }
        }
        let at = |r: usize, c: usize| slot[r * COLS + c];
        let mut rng = crate::rng_for(0x5EED_0076, 0);
        let mut edges = Vec::new();
        let mut push = |a: Option<usize>, b: Option<usize>| {
            if let (Some(a), Some(b)) = (a, b) {
                edges.push((a, b));
            }
        };
        for r in 0..ROWS {
            for c in 0..COLS {
                if c + 1 < COLS {
                    push(at(r, c), at(r, c + 1));
                }
                if r + 1 < ROWS {
                    push(at(r, c), at(r + 1, c));
                }
                if r + 1 < ROWS && c + 1 < COLS {
                    if rng.random::<bool>() {
                        push(at(r, c), at(r + 1, c + 1));
                    } else {
                        push(at(r, c + 1), at(r + 1, c));
                    }
                }
            }
        }
        Self::new(numbered_ids(next), &edges).expect("study region is a valid graph")
    }

    /// Uniformly random relabelling order, for invariance tests.
    pub fn random_order(n: usize, rng: &mut crate::Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        order
    }
}

/// `W01`, `W02`, ... zero padded to the width of `n`.
pub fn numbered_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|i| format!("W{i:0width$}")).collect()
}

/// Reads a ward manifest: one id per line.
pub fn read_manifest<R: BufRead>(reader: R) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for line in reader.lines() {
        let line = line?;
        let id = line.trim();
        if !id.is_empty() && !id.starts_with('#') {
            ids.push(id.to_string());
        }
    }
    Ok(ids)
}
