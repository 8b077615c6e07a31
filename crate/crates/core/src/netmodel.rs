//! Radial feeder model and LinDistFlow sensitivity matrices.
//!
//! Nodes are numbered `0..=n` with node 0 the substation. Every matrix in
//! the crate indexes the `n` non-substation nodes as rows/columns
//! `0..n` (node `i` lives at index `i - 1`). Three-phase feeders expand each
//! node into three consecutive rows, phase-major within the node.

use std::collections::{HashSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{Complex, DMatrix, Matrix3};

use crate::error::{Error, Result};

/// Per-edge 3x3 series impedance, resistance and reactance parts.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseBlock {
    pub r: Matrix3<f64>,
    pub x: Matrix3<f64>,
}

impl PhaseBlock {
    pub fn decoupled(r: f64, x: f64) -> Self {
        PhaseBlock {
            r: Matrix3::from_diagonal_element(r),
            x: Matrix3::from_diagonal_element(x),
        }
    }
}

/// A line segment, oriented from the upstream node to the downstream node.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub block: Option<PhaseBlock>,
}

impl Edge {
    pub fn new(from: usize, to: usize, r: f64, x: f64) -> Self {
        Edge {
            from,
            to,
            r,
            x,
            block: None,
        }
    }

    /// Series impedance block for `phases` phases (1x1 or 3x3).
    pub fn impedance_block(&self, phases: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        if phases == 1 {
            return (
                DMatrix::from_element(1, 1, self.r),
                DMatrix::from_element(1, 1, self.x),
            );
        }
        let block = self
            .block
            .clone()
            .unwrap_or_else(|| PhaseBlock::decoupled(self.r, self.x));
        (
            DMatrix::from_iterator(3, 3, block.r.iter().copied()),
            DMatrix::from_iterator(3, 3, block.x.iter().copied()),
        )
    }
}

#[derive(Clone, Debug)]
pub struct RadialNetwork {
    n: usize,
    phases: usize,
    /// Substation squared voltage magnitude (p.u.^2).
    pub v0: f64,
    /// Substation angle (rad).
    pub delta0: f64,
    edges: Vec<Edge>,
    // Indexed by node id; entry 0 is unused.
    parent: Vec<usize>,
    parent_edge: Vec<usize>,
    depth: Vec<usize>,
    // Nodes in breadth-first order from the substation, substation first.
    order: Vec<usize>,
}

impl RadialNetwork {
    /// Validates the edge list as a tree rooted at node 0 and orients every
    /// edge away from the substation.
    pub fn new(n: usize, edges: Vec<Edge>, phases: usize) -> Result<Self> {
        if phases != 1 && phases != 3 {
            return Err(Error::Topology(format!(
                "phase count must be 1 or 3, got {phases}"
            )));
        }
        for e in &edges {
            for node in [e.from, e.to] {
                if node > n {
                    return Err(Error::Topology(format!(
                        "edge ({}, {}) references node {node} beyond n = {n}",
                        e.from, e.to
                    )));
                }
            }
            if e.from == e.to {
                return Err(Error::Topology(format!("self-loop at node {}", e.from)));
            }
            validate_impedance(e)?;
        }

        // Union-find catches cycles independent of edge orientation.
        let mut uf: Vec<usize> = (0..=n).collect();
        fn find(uf: &mut [usize], mut a: usize) -> usize {
            while uf[a] != a {
                uf[a] = uf[uf[a]];
                a = uf[a];
            }
            a
        }
        for e in &edges {
            let (a, b) = (find(&mut uf, e.from), find(&mut uf, e.to));
            if a == b {
                return Err(Error::Topology(format!(
                    "edge ({}, {}) closes a cycle",
                    e.from, e.to
                )));
            }
            uf[a] = b;
        }
        if edges.len() != n {
            let root = find(&mut uf, 0);
            let unreachable: Vec<usize> = (1..=n).filter(|&i| find(&mut uf, i) != root).collect();
            return Err(Error::Topology(format!(
                "nodes {unreachable:?} have no path to the substation"
            )));
        }

        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); n + 1];
        for (k, e) in edges.iter().enumerate() {
            adjacency[e.from].push(k);
            adjacency[e.to].push(k);
        }
        let mut parent = vec![usize::MAX; n + 1];
        let mut parent_edge = vec![usize::MAX; n + 1];
        let mut depth = vec![0; n + 1];
        let mut order = Vec::with_capacity(n + 1);
        let mut seen = vec![false; n + 1];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut oriented = edges;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &k in &adjacency[u] {
                let e = &mut oriented[k];
                let v = if e.from == u { e.to } else { e.from };
                if seen[v] {
                    continue;
                }
                if e.from != u {
                    std::mem::swap(&mut e.from, &mut e.to);
                }
                seen[v] = true;
                parent[v] = u;
                parent_edge[v] = k;
                depth[v] = depth[u] + 1;
                queue.push_back(v);
            }
        }

        Ok(RadialNetwork {
            n,
            phases,
            v0: 1.0,
            delta0: 0.0,
            edges: oriented,
            parent,
            parent_edge,
            depth,
            order,
        })
    }

    /// Number of non-substation nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn phases(&self) -> usize {
        self.phases
    }

    /// Rows of the impedance matrices: `n * phases`.
    pub fn dim(&self) -> usize {
        self.n * self.phases
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        (node != 0 && node <= self.n).then(|| self.parent[node])
    }

    /// Index into [`edges`](Self::edges) of the edge feeding `node`.
    pub fn parent_edge(&self, node: usize) -> Option<usize> {
        (node != 0 && node <= self.n).then(|| self.parent_edge[node])
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Nodes in breadth-first order from the substation (substation first).
    pub fn bfs_order(&self) -> &[usize] {
        &self.order
    }

    /// Edge indices on the path from the substation to `node`, root first.
    pub fn path_edges(&self, node: usize) -> Vec<usize> {
        let mut path = Vec::with_capacity(self.depth[node]);
        let mut u = node;
        while u != 0 {
            path.push(self.parent_edge[u]);
            u = self.parent[u];
        }
        path.reverse();
        path
    }

    /// Deepest common ancestor of `i` and `j` (node 0 if only the substation is shared).
    pub fn common_ancestor(&self, mut i: usize, mut j: usize) -> usize {
        while self.depth[i] > self.depth[j] {
            i = self.parent[i];
        }
        while self.depth[j] > self.depth[i] {
            j = self.parent[j];
        }
        while i != j {
            i = self.parent[i];
            j = self.parent[j];
        }
        i
    }

    /// `true` when `up` lies on the path from the substation to `node`.
    pub fn is_upstream(&self, up: usize, node: usize) -> bool {
        self.common_ancestor(up, node) == up
    }

    /// Copy with edge `k`'s impedance (and block) multiplied by `factor`.
    pub fn with_edge_scaled(&self, k: usize, factor: f64) -> Self {
        let mut net = self.clone();
        let e = &mut net.edges[k];
        e.r *= factor;
        e.x *= factor;
        if let Some(b) = e.block.as_mut() {
            b.r *= factor;
            b.x *= factor;
        }
        net
    }

    /// Copy with every edge between the substation and `node` scaled by
    /// `factor`, which scales the self common-node impedance of `node`.
    pub fn with_path_scaled(&self, node: usize, factor: f64) -> Self {
        let mut net = self.clone();
        for k in self.path_edges(node) {
            let e = &mut net.edges[k];
            e.r *= factor;
            e.x *= factor;
            if let Some(b) = e.block.as_mut() {
                b.r *= factor;
                b.x *= factor;
            }
        }
        net
    }

    /// Copy with a new leaf `n + 1` hanging off `parent`.
    pub fn with_leaf(&self, parent: usize, r: f64, x: f64) -> Result<Self> {
        let mut edges = self.edges.clone();
        edges.push(Edge::new(parent, self.n + 1, r, x));
        let mut net = RadialNetwork::new(self.n + 1, edges, self.phases)?;
        net.v0 = self.v0;
        net.delta0 = self.delta0;
        Ok(net)
    }

    /// Serializes back to the feeder text format.
    pub fn to_feeder_text(&self) -> String {
        let mut out = String::new();
        if self.phases != 1 {
            let _ = writeln!(out, "phases {}", self.phases);
        }
        let _ = writeln!(out, "v0 {}", self.v0);
        let _ = writeln!(out, "delta0 {}", self.delta0);
        for e in &self.edges {
            let _ = write!(out, "edge {} {} {} {}", e.from, e.to, e.r, e.x);
            if let Some(b) = &e.block {
                for m in [&b.r, &b.x] {
                    for row in 0..3 {
                        for col in 0..3 {
                            let _ = write!(out, " {}", m[(row, col)]);
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

fn validate_impedance(e: &Edge) -> Result<()> {
    let finite = e.r.is_finite() && e.x.is_finite();
    if !finite || e.r < 0.0 || e.x < 0.0 || (e.r == 0.0 && e.x == 0.0) {
        return Err(Error::Topology(format!(
            "edge ({}, {}) needs r, x >= 0 with at least one positive (r = {}, x = {})",
            e.from, e.to, e.r, e.x
        )));
    }
    if let Some(b) = &e.block {
        for m in [&b.r, &b.x] {
            if (m - m.transpose()).abs().max() > 1e-12 {
                return Err(Error::Topology(format!(
                    "edge ({}, {}) has a non-symmetric phase block",
                    e.from, e.to
                )));
            }
            if m.diagonal().iter().any(|&d| !(d >= 0.0)) {
                return Err(Error::Topology(format!(
                    "edge ({}, {}) has a negative self-impedance",
                    e.from, e.to
                )));
            }
        }
    }
    Ok(())
}

/// Parses the line-oriented feeder format.
///
/// ```text
/// # comment
/// phases 3          # optional, default 1
/// v0 1.0            # optional substation squared magnitude, default 1.0
/// delta0 0.0        # optional substation angle (rad), default 0.0
/// node 4            # optional declaration
/// edge 0 1 0.1 0.2  # from to r x [9 r-block entries, 9 x-block entries]
/// ```
pub fn parse_feeder(text: &str) -> Result<RadialNetwork> {
    let mut phases = 1usize;
    let mut v0 = 1.0;
    let mut delta0 = 0.0;
    let mut edges: Vec<Edge> = Vec::new();
    let mut declared: Vec<usize> = Vec::new();
    let mut seen_edges: HashSet<(usize, usize)> = HashSet::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let keyword = tokens.next().unwrap_or_default();
        let rest: Vec<&str> = tokens.collect();
        match keyword {
            "phases" => {
                phases = parse_one(&rest, line_no, "phases")?;
                if phases != 1 && phases != 3 {
                    return Err(Error::parse(line_no, "phases must be 1 or 3"));
                }
            }
            "v0" => v0 = parse_one(&rest, line_no, "v0")?,
            "delta0" => delta0 = parse_one(&rest, line_no, "delta0")?,
            "node" => declared.push(parse_one(&rest, line_no, "node")?),
            "edge" => {
                if rest.len() != 4 && rest.len() != 22 {
                    return Err(Error::parse(
                        line_no,
                        format!(
                            "edge needs 4 fields (from to r x) or 22 with a 3-phase block, got {}",
                            rest.len()
                        ),
                    ));
                }
                let from: usize = parse_tok(rest[0], line_no)?;
                let to: usize = parse_tok(rest[1], line_no)?;
                let r: f64 = parse_tok(rest[2], line_no)?;
                let x: f64 = parse_tok(rest[3], line_no)?;
                if !seen_edges.insert((from, to)) {
                    return Err(Error::parse(
                        line_no,
                        format!("duplicate edge ({from}, {to})"),
                    ));
                }
                let block = if rest.len() == 22 {
                    let vals = rest[4..]
                        .iter()
                        .map(|t| parse_tok::<f64>(t, line_no))
                        .collect::<Result<Vec<_>>>()?;
                    Some(PhaseBlock {
                        r: Matrix3::from_row_slice(&vals[..9]),
                        x: Matrix3::from_row_slice(&vals[9..]),
                    })
                } else {
                    None
                };
                edges.push(Edge {
                    from,
                    to,
                    r,
                    x,
                    block,
                });
            }
            other => {
                return Err(Error::parse(
                    line_no,
                    format!("unknown directive `{other}`"),
                ))
            }
        }
    }

    if edges.iter().any(|e| e.block.is_some()) && phases != 3 {
        return Err(Error::parse(
            0,
            "3-phase impedance blocks require `phases 3`",
        ));
    }
    let n = edges
        .iter()
        .flat_map(|e| [e.from, e.to])
        .chain(declared.iter().copied())
        .max()
        .unwrap_or(0);
    let mut net = RadialNetwork::new(n, edges, phases)?;
    net.v0 = v0;
    net.delta0 = delta0;
    Ok(net)
}

fn parse_tok<T: std::str::FromStr>(tok: &str, line: usize) -> Result<T> {
    tok.parse()
        .map_err(|_| Error::parse(line, format!("cannot parse `{tok}`")))
}

fn parse_one<T: std::str::FromStr>(rest: &[&str], line: usize, what: &str) -> Result<T> {
    match rest {
        [tok] => parse_tok(tok, line),
        _ => Err(Error::parse(
            line,
            format!("`{what}` takes exactly one value"),
        )),
    }
}

/// LinDistFlow sensitivities: `R0[i][j] = 2 * sum(r)` over the edges shared by
/// the substation paths of `i` and `j`, likewise `X0` with `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImpedanceMatrices {
    pub r0: DMatrix<f64>,
    pub x0: DMatrix<f64>,
    pub phases: usize,
}

impl ImpedanceMatrices {
    pub fn dim(&self) -> usize {
        self.r0.nrows()
    }

    /// Row of (`node`, `phase`), both zero-based except `node` which is the
    /// 1-based feeder node id.
    pub fn index(&self, node: usize, phase: usize) -> usize {
        (node - 1) * self.phases + phase
    }
}

pub fn build_impedance_matrices(net: &RadialNetwork) -> ImpedanceMatrices {
    let ph = net.phases();
    let n = net.n();
    // Accumulated path impedance from the substation to each node.
    let mut cum_r = vec![DMatrix::<f64>::zeros(ph, ph); n + 1];
    let mut cum_x = vec![DMatrix::<f64>::zeros(ph, ph); n + 1];
    for &u in &net.bfs_order()[1..] {
        let edge = &net.edges()[net.parent_edge[u]];
        let (r, x) = edge.impedance_block(ph);
        let p = net.parent[u];
        cum_r[u] = &cum_r[p] + r;
        cum_x[u] = &cum_x[p] + x;
    }
    let dim = n * ph;
    let mut r0 = DMatrix::zeros(dim, dim);
    let mut x0 = DMatrix::zeros(dim, dim);
    for i in 1..=n {
        for j in i..=n {
            let a = net.common_ancestor(i, j);
            for pa in 0..ph {
                for pb in 0..ph {
                    let (ri, ci) = ((i - 1) * ph + pa, (j - 1) * ph + pb);
                    let rv = 2.0 * cum_r[a][(pa, pb)];
                    let xv = 2.0 * cum_x[a][(pa, pb)];
                    r0[(ri, ci)] = rv;
                    x0[(ri, ci)] = xv;
                    r0[((j - 1) * ph + pb, (i - 1) * ph + pa)] = rv;
                    x0[((j - 1) * ph + pb, (i - 1) * ph + pa)] = xv;
                }
            }
        }
    }
    ImpedanceMatrices { r0, x0, phases: ph }
}

/// Common-node impedance `Z_ij = R0_ij + j X0_ij` between feeder nodes `i`
/// and `j` (first phase for three-phase feeders).
pub fn common_node_impedance(
    net: &RadialNetwork,
    mats: &ImpedanceMatrices,
    i: usize,
    j: usize,
) -> Result<Complex<f64>> {
    for node in [i, j] {
        if node == 0 || node > net.n() {
            return Err(Error::Index {
                index: node,
                max: net.n(),
            });
        }
    }
    let (a, b) = (mats.index(i, 0), mats.index(j, 0));
    Ok(Complex::new(mats.r0[(a, b)], mats.x0[(a, b)]))
}
