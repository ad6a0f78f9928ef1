//! Directed and signed graph machinery over matrix patterns.
//!
//! Graph convention throughout: a square matrix `M` has an edge `j -> i` whenever
//! `M[(i, j)] != 0`, i.e. influence flows from column to row.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{self, InfluenceNetwork, LogicProfile, Sign};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("precondition violated: {0}")]
    PreconditionViolation(String),
}

/// Tarjan's algorithm. Components come out in reverse topological order of the
/// condensation (sinks first).
pub fn strongly_connected_components(graph: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = graph.len();
    let mut state = TarjanState {
        index: 0,
        stack: Vec::new(),
        on_stack: vec![false; n],
        idx: vec![None; n],
        low: vec![0; n],
        comps: Vec::new(),
    };
    for v in 0..n {
        if state.idx[v].is_none() {
            strongconnect(v, graph, &mut state);
        }
    }
    state.comps
}

struct TarjanState {
    index: usize,
    stack: Vec<usize>,
    on_stack: Vec<bool>,
    idx: Vec<Option<usize>>,
    low: Vec<usize>,
    comps: Vec<Vec<usize>>,
}

fn strongconnect(v: usize, graph: &[Vec<usize>], state: &mut TarjanState) {
    state.idx[v] = Some(state.index);
    state.low[v] = state.index;
    state.index += 1;
    state.stack.push(v);
    state.on_stack[v] = true;

    for &w in &graph[v] {
        match state.idx[w] {
            None => {
                strongconnect(w, graph, state);
                state.low[v] = state.low[v].min(state.low[w]);
            }
            Some(iw) if state.on_stack[w] => state.low[v] = state.low[v].min(iw),
            Some(_) => {}
        }
    }

    if Some(state.low[v]) == state.idx[v] {
        let mut comp = Vec::new();
        loop {
            let w = state.stack.pop().expect("tarjan stack underflow");
            state.on_stack[w] = false;
            comp.push(w);
            if w == v {
                break;
            }
        }
        state.comps.push(comp);
    }
}

pub fn is_strongly_connected(graph: &[Vec<usize>]) -> bool {
    strongly_connected_components(graph).len() == 1
}

/// Period of a strongly connected graph (gcd of its cycle lengths), or `None` if the
/// graph is not strongly connected.
pub fn period(graph: &[Vec<usize>]) -> Option<usize> {
    if graph.is_empty() || !is_strongly_connected(graph) {
        return None;
    }
    let mut level = vec![usize::MAX; graph.len()];
    level[0] = 0;
    let mut queue = VecDeque::from([0]);
    while let Some(u) = queue.pop_front() {
        for &v in &graph[u] {
            if level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for (u, outs) in graph.iter().enumerate() {
        for &v in outs {
            let d = (level[u] + 1).abs_diff(level[v]);
            g = gcd(g, d);
        }
    }
    // a single node without self-loop edges has no cycles; treat as aperiodic
    Some(g.max(1))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Graph of a matrix including self-loops, for period computations.
pub fn adjacency_with_loops(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for (j, out) in adj.iter_mut().enumerate() {
            if m[(i, j)] != 0.0 {
                out.push(i);
            }
        }
    }
    adj
}

/// Ordered strongly connected components of the shared logic graph.
///
/// Blocks are listed so that every block only depends on blocks before it; after
/// reordering topics by `perm`, each logic matrix is lower block triangular with
/// irreducible diagonal blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicPartition {
    /// `perm[k]` is the original topic placed at position `k`.
    pub perm: Vec<usize>,
    pub blocks: Vec<Vec<usize>>,
    pub closed: Vec<bool>,
    /// Per topic: the other topics it depends on.
    pub dependencies: Vec<Vec<usize>>,
    /// Per block: topics outside the block that its topics depend on.
    pub external_dependencies: Vec<Vec<usize>>,
    /// Per topic: index of its block.
    pub block_of: Vec<usize>,
}

impl TopicPartition {
    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }
}

/// Condenses the logic graph into its ordered strongly connected components.
///
/// Blocks follow a topological order of the condensation with sources first; among
/// blocks that are ready at the same time, the one holding the smallest original
/// topic index comes first. Topics inside a block are sorted ascending.
pub fn condense_logic(profile: &LogicProfile) -> TopicPartition {
    let m = profile.m();
    let adj = profile.pattern_adjacency();
    let mut comps = strongly_connected_components(&adj);
    for c in &mut comps {
        c.sort_unstable();
    }
    let mut comp_of = vec![0; m];
    for (cid, comp) in comps.iter().enumerate() {
        for &v in comp {
            comp_of[v] = cid;
        }
    }

    let ncomp = comps.len();
    let mut succ = vec![Vec::new(); ncomp];
    let mut indeg = vec![0usize; ncomp];
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            let (cu, cv) = (comp_of[u], comp_of[v]);
            if cu != cv && !succ[cu].contains(&cv) {
                succ[cu].push(cv);
                indeg[cv] += 1;
            }
        }
    }
    let closed_by_comp: Vec<bool> = indeg.iter().map(|&d| d == 0).collect();

    let mut ready: BinaryHeap<Reverse<(usize, usize)>> = (0..ncomp)
        .filter(|&c| indeg[c] == 0)
        .map(|c| Reverse((comps[c][0], c)))
        .collect();
    let mut order = Vec::with_capacity(ncomp);
    while let Some(Reverse((_, c))) = ready.pop() {
        order.push(c);
        for &d in &succ[c] {
            indeg[d] -= 1;
            if indeg[d] == 0 {
                ready.push(Reverse((comps[d][0], d)));
            }
        }
    }

    let blocks: Vec<Vec<usize>> = order.iter().map(|&c| comps[c].clone()).collect();
    let closed: Vec<bool> = order.iter().map(|&c| closed_by_comp[c]).collect();
    let perm: Vec<usize> = blocks.iter().flatten().copied().collect();
    let dependencies: Vec<Vec<usize>> = (0..m).map(|p| profile.dependencies(p)).collect();
    let mut block_of = vec![0; m];
    for (b, block) in blocks.iter().enumerate() {
        for &p in block {
            block_of[p] = b;
        }
    }
    let external_dependencies = blocks
        .iter()
        .map(|block| {
            let mut ext: Vec<usize> = block
                .iter()
                .flat_map(|&k| dependencies[k].iter().copied())
                .filter(|q| !block.contains(q))
                .collect();
            ext.sort_unstable();
            ext.dedup();
            ext
        })
        .collect();

    TopicPartition { perm, blocks, closed, dependencies, external_dependencies, block_of }
}

/// An undirected cycle: edge `k` joins `nodes[k]` and `nodes[(k + 1) % len]` and has
/// sign `signs[k]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NegativeCycle {
    pub nodes: Vec<usize>,
    pub signs: Vec<Sign>,
}

impl NegativeCycle {
    pub fn negative_count(&self) -> usize {
        self.signs.iter().filter(|&&s| s == Sign::Negative).count()
    }

    /// Whether every edge of the cycle exists in `m` (in either direction) with the
    /// recorded sign, and the number of negative edges is odd.
    pub fn is_witness_for(&self, m: &DMatrix<f64>) -> bool {
        let len = self.nodes.len();
        if len == 0 || self.signs.len() != len || self.negative_count() % 2 == 0 {
            return false;
        }
        (0..len).all(|k| {
            let (u, v) = (self.nodes[k], self.nodes[(k + 1) % len]);
            let s = self.signs[k];
            Sign::of(m[(u, v)]) == s || Sign::of(m[(v, u)]) == s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BalanceVerdict {
    pub balanced: bool,
    /// `(V+, V-)` when balanced.
    pub partition: Option<(Vec<usize>, Vec<usize>)>,
    /// A negative undirected cycle when unbalanced.
    pub witness: Option<NegativeCycle>,
}

impl BalanceVerdict {
    /// +1 for nodes in `V+`, -1 for nodes in `V-`; `None` if unbalanced.
    pub fn sides(&self, len: usize) -> Option<Vec<f64>> {
        let (_, minus) = self.partition.as_ref()?;
        let mut sides = vec![1.0; len];
        for &v in minus {
            sides[v] = -1.0;
        }
        Some(sides)
    }
}

struct ParityUnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
    // parity of the edge to the parent; 1 means opposite camps
    parity: Vec<u8>,
}

impl ParityUnionFind {
    fn new(n: usize) -> Self {
        ParityUnionFind { parent: (0..n).collect(), rank: vec![0; n], parity: vec![0; n] }
    }

    fn find(&mut self, x: usize) -> (usize, u8) {
        let p = self.parent[x];
        if p == x {
            return (x, 0);
        }
        let (root, par) = self.find(p);
        self.parity[x] ^= par;
        self.parent[x] = root;
        (root, self.parity[x])
    }

    /// Joins `a` and `b` with relative parity `rel`. `Ok(true)` when two trees were
    /// merged, `Ok(false)` when already consistent, `Err(())` on a parity conflict.
    fn union(&mut self, a: usize, b: usize, rel: u8) -> Result<bool, ()> {
        let (ra, pa) = self.find(a);
        let (rb, pb) = self.find(b);
        if ra == rb {
            return if pa ^ pb == rel { Ok(false) } else { Err(()) };
        }
        let (big, small) = if self.rank[ra] >= self.rank[rb] { (ra, rb) } else { (rb, ra) };
        self.parent[small] = big;
        self.parity[small] = pa ^ pb ^ rel;
        if self.rank[big] == self.rank[small] {
            self.rank[big] += 1;
        }
        Ok(true)
    }
}

/// Structural balance of the signed graph of `m`, ignoring edge direction.
///
/// Uses a union-find that tracks camp parity. The edges that merged trees form a
/// spanning forest; on the first parity conflict the forest path between the two
/// endpoints plus the conflicting edge is returned as a negative cycle.
pub fn structural_balance(m: &DMatrix<f64>) -> BalanceVerdict {
    let n = m.nrows();
    for v in 0..n {
        if Sign::of(m[(v, v)]) == Sign::Negative {
            return unbalanced(NegativeCycle { nodes: vec![v], signs: vec![Sign::Negative] });
        }
    }
    let mut uf = ParityUnionFind::new(n);
    let mut forest: Vec<Vec<(usize, Sign)>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            let s = Sign::of(m[(i, j)]);
            if i == j || s == Sign::Zero {
                continue;
            }
            let rel = u8::from(s == Sign::Negative);
            match uf.union(i, j, rel) {
                Ok(true) => {
                    forest[i].push((j, s));
                    forest[j].push((i, s));
                }
                Ok(false) => {}
                Err(()) => {
                    let (mut nodes, mut signs) = forest_path(&forest, j, i);
                    // path runs j .. i; close it with the edge i - j
                    signs.push(s);
                    debug_assert_eq!(nodes.len(), signs.len());
                    if nodes.is_empty() {
                        nodes.push(j);
                    }
                    return unbalanced(NegativeCycle { nodes, signs });
                }
            }
        }
    }

    let mut side = vec![0u8; n];
    let mut root_flip = vec![None; n];
    for v in 0..n {
        let (root, par) = uf.find(v);
        // v runs in increasing order, so the first node seen per root is the smallest
        let flip = *root_flip[root].get_or_insert(par);
        side[v] = par ^ flip;
    }
    let plus = (0..n).filter(|&v| side[v] == 0).collect();
    let minus = (0..n).filter(|&v| side[v] == 1).collect();
    BalanceVerdict { balanced: true, partition: Some((plus, minus)), witness: None }
}

fn unbalanced(witness: NegativeCycle) -> BalanceVerdict {
    BalanceVerdict { balanced: false, partition: None, witness: Some(witness) }
}

/// Path from `from` to `to` in a forest: the visited nodes (starting with `from`,
/// ending with `to`) and the sign of each traversed edge.
fn forest_path(forest: &[Vec<(usize, Sign)>], from: usize, to: usize) -> (Vec<usize>, Vec<Sign>) {
    let mut prev: Vec<Option<(usize, Sign)>> = vec![None; forest.len()];
    let mut seen = vec![false; forest.len()];
    seen[from] = true;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &(v, s) in &forest[u] {
            if !seen[v] {
                seen[v] = true;
                prev[v] = Some((u, s));
                queue.push_back(v);
            }
        }
    }
    let mut nodes = vec![to];
    let mut signs = Vec::new();
    let mut cur = to;
    while let Some((p, s)) = prev[cur] {
        nodes.push(p);
        signs.push(s);
        cur = p;
    }
    nodes.reverse();
    signs.reverse();
    (nodes, signs)
}

/// Topic-major multiplex matrix from raw parts: block `(p, q)` is
/// `diag(c_pq,1 .. c_pq,n) * W`, so entry `(p*n + i, q*n + j)` equals `c_pq,i * w_ij`.
pub fn multiplex_from_parts(weights: &DMatrix<f64>, logic: &[DMatrix<f64>]) -> DMatrix<f64> {
    let n = weights.nrows();
    let m = logic.first().map_or(0, |c| c.nrows());
    DMatrix::from_fn(n * m, n * m, |row, col| {
        let (p, i) = (row / n, row % n);
        let (q, j) = (col / n, col % n);
        logic[i][(p, q)] * weights[(i, j)]
    })
}

pub fn build_multiplex_pattern(net: &InfluenceNetwork, profile: &LogicProfile) -> DMatrix<f64> {
    let logic: Vec<DMatrix<f64>> = profile.matrices().iter().map(|c| c.matrix().clone()).collect();
    multiplex_from_parts(net.weights(), &logic)
}

/// Row-wise bitset of the nonzero pattern of a square matrix.
#[derive(Clone, PartialEq, Eq)]
struct BitPattern {
    dim: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitPattern {
    fn from_matrix(m: &DMatrix<f64>) -> Self {
        let dim = m.nrows();
        let words = dim.div_ceil(64).max(1);
        let mut bits = vec![0u64; dim * words];
        for i in 0..dim {
            for j in 0..dim {
                if m[(i, j)] != 0.0 {
                    bits[i * words + j / 64] |= 1 << (j % 64);
                }
            }
        }
        BitPattern { dim, words, bits }
    }

    fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    fn multiply(&self, rhs: &BitPattern) -> BitPattern {
        let mut out = vec![0u64; self.bits.len()];
        for i in 0..self.dim {
            let dst = &mut out[i * self.words..(i + 1) * self.words];
            for j in 0..self.dim {
                if self.row(i)[j / 64] >> (j % 64) & 1 == 1 {
                    for (d, s) in dst.iter_mut().zip(rhs.row(j)) {
                        *d |= s;
                    }
                }
            }
        }
        BitPattern { dim: self.dim, words: self.words, bits: out }
    }

    fn is_full(&self) -> bool {
        (0..self.dim).all(|i| (0..self.dim).all(|j| self.row(i)[j / 64] >> (j % 64) & 1 == 1))
    }
}

/// Smallest `k` with every entry of `|M|^k` positive, searched up to the Wielandt
/// bound `(d - 1)^2 + 1`. Works on the nonzero pattern only.
pub fn primitivity_exponent(m: &DMatrix<f64>) -> Option<usize> {
    let d = m.nrows();
    if d == 0 || m.ncols() != d {
        return None;
    }
    let base = BitPattern::from_matrix(m);
    let bound = (d - 1) * (d - 1) + 1;
    let mut power = base.clone();
    for k in 1..=bound {
        if power.is_full() {
            return Some(k);
        }
        if k < bound {
            power = power.multiply(&base);
        }
    }
    None
}

/// Whether the nonzero pattern of `m` is primitive.
pub fn primitivity_check(m: &DMatrix<f64>) -> bool {
    primitivity_exponent(m).is_some()
}

/// Structural balance of the multiplex graph obtained from the logic graph alone:
/// with competing interdependencies the multiplex graph is unbalanced; otherwise it
/// inherits the balance of the (common-sign) logic graph, each topic layer taking
/// its topic's side.
///
/// Requires an irreducible logic pattern. Witness cycles are lifted to concrete
/// cycles of the multiplex graph.
pub fn multiplex_balance_via_lemma(
    net: &InfluenceNetwork,
    profile: &LogicProfile,
) -> Result<BalanceVerdict, GraphError> {
    let m = profile.m();
    let n = profile.n();
    if strongly_connected_components(&profile.pattern_adjacency()).len() != 1 {
        return Err(GraphError::PreconditionViolation("logic pattern is reducible".into()));
    }
    if net.n() != n {
        return Err(GraphError::PreconditionViolation(format!(
            "network has {} individuals but profile has {n}",
            net.n()
        )));
    }
    let node = |topic: usize, ind: usize| topic * n + ind;

    for p in 0..m {
        if let Some(w) = model::detect_competing(profile, p).first() {
            let (q, i, j) = (w.q, w.i, w.j);
            let undirected = undirected_adjacency(net.weights());
            let (layer_path, _) = bfs_path(&undirected, i, j);
            let mut nodes = Vec::new();
            let mut signs = Vec::new();
            // (q,i) - (p,i) cross edge
            nodes.push(node(q, i));
            signs.push(Sign::of(profile.entry(i, p, q)));
            // walk layer p from i to j
            for (k, &a) in layer_path.iter().enumerate() {
                nodes.push(node(p, a));
                signs.push(if k + 1 == layer_path.len() {
                    Sign::of(profile.entry(j, p, q))
                } else {
                    Sign::Positive
                });
            }
            // (q,j) back to (q,i) within layer q
            for &a in layer_path.iter().rev().take(layer_path.len() - 1) {
                nodes.push(node(q, a));
                signs.push(Sign::Positive);
            }
            return Ok(unbalanced(NegativeCycle { nodes, signs }));
        }
    }

    let verdict = structural_balance(profile.matrix(0));
    if let Some((plus, minus)) = &verdict.partition {
        let lift = |topics: &[usize]| -> Vec<usize> {
            let mut v: Vec<usize> =
                topics.iter().flat_map(|&t| (0..n).map(move |i| node(t, i))).collect();
            v.sort_unstable();
            v
        };
        return Ok(BalanceVerdict {
            balanced: true,
            partition: Some((lift(plus), lift(minus))),
            witness: None,
        });
    }
    let cycle = verdict.witness.expect("unbalanced verdict carries a witness");
    Ok(unbalanced(NegativeCycle {
        nodes: cycle.nodes.iter().map(|&t| node(t, 0)).collect(),
        signs: cycle.signs,
    }))
}

fn undirected_adjacency(m: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = m.nrows();
    (0..n)
        .map(|u| (0..n).filter(|&v| v != u && (m[(u, v)] != 0.0 || m[(v, u)] != 0.0)).collect())
        .collect()
}

/// Shortest path in an unsigned graph, as a node list from `from` to `to`.
fn bfs_path(adj: &[Vec<usize>], from: usize, to: usize) -> (Vec<usize>, bool) {
    let mut prev = vec![usize::MAX; adj.len()];
    prev[from] = from;
    let mut queue = VecDeque::from([from]);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in &adj[u] {
            if prev[v] == usize::MAX {
                prev[v] = u;
                queue.push_back(v);
            }
        }
    }
    if prev[to] == usize::MAX {
        return (vec![from], false);
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[cur];
        path.push(cur);
    }
    path.reverse();
    (path, true)
}
