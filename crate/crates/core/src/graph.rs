//! Directed multigraphs with finitely many vertices and extended-natural
//! edge multiplicities, their vertex classification, and the preordered
//! component structure used for block-triangular matrix bookkeeping.

use std::collections::VecDeque;

use crate::ext::Ext;
use crate::{Error, Result};

/// A finite-vertex directed multigraph. `adj[i][j]` is the number of edges
/// from vertex `i` to vertex `j` (possibly `inf`).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Graph {
    names: Vec<String>,
    adj: Vec<Vec<Ext>>,
}

/// Classification of a vertex by its emitting and receiving behaviour.
///
/// A vertex is regular when it emits at least one and finitely many edges;
/// sinks and infinite emitters are singular. A regular source additionally
/// receives nothing.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VertexClass {
    Regular,
    RegularSource,
    Sink,
    InfiniteEmitter,
}

impl VertexClass {
    pub fn is_singular(self) -> bool {
        matches!(self, VertexClass::Sink | VertexClass::InfiniteEmitter)
    }

    pub fn is_regular(self) -> bool {
        !self.is_singular()
    }
}

/// Structural problems found in candidate graph data.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Violation(pub String);

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Checks candidate graph data against the structural invariants and returns
/// every violation found. An empty result means the data forms a valid graph.
pub fn validate_graph(names: &[String], adj: &[Vec<Ext>]) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = names.len();
    if n == 0 {
        out.push(Violation("graph must have at least one vertex".into()));
    }
    if adj.len() != n {
        out.push(Violation(format!(
            "adjacency has {} rows for {} vertices: not square",
            adj.len(),
            n
        )));
    }
    for (i, row) in adj.iter().enumerate() {
        if row.len() != n {
            out.push(Violation(format!(
                "adjacency row {i} has length {}, expected {n}: not square",
                row.len()
            )));
        }
        for (j, &e) in row.iter().enumerate() {
            if !e.is_multiplicity() {
                out.push(Violation(format!(
                    "negative multiplicity {e} at entry ({i}, {j})"
                )));
            }
        }
    }
    for (i, a) in names.iter().enumerate() {
        for (j, b) in names.iter().enumerate().skip(i + 1) {
            if a == b {
                out.push(Violation(format!(
                    "duplicate vertex name {a:?} at {i} and {j}"
                )));
            }
        }
    }
    out
}

impl Graph {
    /// Builds a graph, rejecting data that fails [`validate_graph`].
    pub fn new(names: Vec<String>, adj: Vec<Vec<Ext>>) -> Result<Self> {
        let violations = validate_graph(&names, &adj);
        if let Some(v) = violations.into_iter().next() {
            return Err(Error::InvalidGraph(v.0));
        }
        Ok(Graph { names, adj })
    }

    /// Builds a graph with synthetic vertex names `v1..vn`.
    pub fn from_adjacency(adj: Vec<Vec<Ext>>) -> Result<Self> {
        let names = (1..=adj.len()).map(|i| format!("v{i}")).collect();
        Graph::new(names, adj)
    }

    pub fn n(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, v: usize) -> &str {
        &self.names[v]
    }

    pub fn adjacency(&self) -> &[Vec<Ext>] {
        &self.adj
    }

    pub fn entry(&self, i: usize, j: usize) -> Ext {
        self.adj[i][j]
    }

    pub fn out_row(&self, v: usize) -> &[Ext] {
        &self.adj[v]
    }

    pub fn in_column(&self, v: usize) -> Vec<Ext> {
        self.adj.iter().map(|row| row[v]).collect()
    }

    pub fn out_degree(&self, v: usize) -> Result<Ext> {
        Ext::checked_sum(self.adj[v].iter().copied())
    }

    pub fn in_degree(&self, v: usize) -> Result<Ext> {
        Ext::checked_sum(self.adj.iter().map(|row| row[v]))
    }

    /// Classifies vertex `v`; errors when `v` is out of range.
    pub fn vertex_class(&self, v: usize) -> Result<VertexClass> {
        if v >= self.n() {
            return Err(Error::IndexOutOfRange {
                index: v,
                len: self.n(),
            });
        }
        let row = &self.adj[v];
        if row.iter().any(|e| e.is_inf()) {
            return Ok(VertexClass::InfiniteEmitter);
        }
        if row.iter().all(|e| e.is_zero()) {
            return Ok(VertexClass::Sink);
        }
        let receives = self.adj.iter().any(|r| !r[v].is_zero());
        if receives {
            Ok(VertexClass::Regular)
        } else {
            Ok(VertexClass::RegularSource)
        }
    }

    pub fn classes(&self) -> Vec<VertexClass> {
        (0..self.n())
            .map(|v| self.vertex_class(v).expect("in range"))
            .collect()
    }

    /// Indices of regular sources, in vertex order.
    pub fn regular_sources(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&v| matches!(self.vertex_class(v), Ok(VertexClass::RegularSource)))
            .collect()
    }

    /// True when there is at least one edge from `i` to `j`.
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i][j].is_positive()
    }

    /// Reachability by paths of length >= 1: `reach[i][j]` iff some nonempty
    /// path runs from `i` to `j`.
    pub fn reachability(&self) -> Vec<Vec<bool>> {
        let n = self.n();
        let mut reach = vec![vec![false; n]; n];
        for i in 0..n {
            let mut queue: VecDeque<usize> = VecDeque::new();
            for j in 0..n {
                if self.has_edge(i, j) && !reach[i][j] {
                    reach[i][j] = true;
                    queue.push_back(j);
                }
            }
            while let Some(u) = queue.pop_front() {
                for j in 0..n {
                    if self.has_edge(u, j) && !reach[i][j] {
                        reach[i][j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        reach
    }

    /// The preordered component structure of this graph.
    pub fn components(&self) -> Components {
        Components::of(self)
    }

    /// Renames-free structural equality: same adjacency, names ignored.
    pub fn same_shape(&self, other: &Graph) -> bool {
        self.adj == other.adj
    }
}

/// The preordered set of components of a graph.
///
/// Two vertices share a component when they are equal or mutually connected
/// by paths. Component `a <= b` holds when some vertex of `b` has a path to
/// some vertex of `a` (edges point from larger components to smaller ones),
/// or `a == b`. The block ordering lists larger components first and, inside
/// each component, singular vertices last, ties broken by original index.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Components {
    comp_of: Vec<usize>,
    members: Vec<Vec<usize>>,
    leq: Vec<Vec<bool>>,
    regular_count: Vec<usize>,
    singular_count: Vec<usize>,
    block_order: Vec<usize>,
    essential: Vec<bool>,
}

impl Components {
    pub fn of(g: &Graph) -> Components {
        let n = g.n();
        let reach = g.reachability();
        let mut comp_of = vec![usize::MAX; n];
        let mut members: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            if comp_of[i] != usize::MAX {
                continue;
            }
            let id = members.len();
            let mut who = vec![i];
            comp_of[i] = id;
            for j in i + 1..n {
                if comp_of[j] == usize::MAX && reach[i][j] && reach[j][i] {
                    comp_of[j] = id;
                    who.push(j);
                }
            }
            members.push(who);
        }
        let k = members.len();

        let mut leq = vec![vec![false; k]; k];
        for a in 0..k {
            for b in 0..k {
                // a <= b: path from a vertex of b to a vertex of a, or a == b.
                leq[a][b] = a == b || reach[members[b][0]][members[a][0]];
            }
        }

        let classes = g.classes();
        let mut regular_count = vec![0usize; k];
        let mut singular_count = vec![0usize; k];
        for v in 0..n {
            if classes[v].is_singular() {
                singular_count[comp_of[v]] += 1;
            } else {
                regular_count[comp_of[v]] += 1;
            }
        }

        // Larger components first: repeatedly take the maximal remaining
        // components, smallest original vertex index breaking ties.
        let mut block_order: Vec<usize> = Vec::with_capacity(k);
        let mut placed = vec![false; k];
        while block_order.len() < k {
            let mut best: Option<usize> = None;
            for c in 0..k {
                if placed[c] {
                    continue;
                }
                let maximal = (0..k).all(|d| placed[d] || d == c || !leq[c][d]);
                if maximal {
                    best = match best {
                        None => Some(c),
                        Some(b) if members[c][0] < members[b][0] => Some(c),
                        keep => keep,
                    };
                }
            }
            let c = best.expect("preorder condensation is a DAG");
            placed[c] = true;
            block_order.push(c);
        }

        // Within each component: regular vertices first, singular last,
        // original index order within each class.
        for (c, who) in members.iter_mut().enumerate() {
            who.sort_by_key(|&v| (classes[v].is_singular(), v));
            let _ = c;
        }

        // A component is essential when it can survive the move calculus:
        // more than one vertex, or a loop, or a singular vertex. Lone
        // loop-free regular vertices are transient.
        let mut essential = vec![false; k];
        for c in 0..k {
            let multi = members[c].len() > 1;
            let has_loop = members[c].iter().any(|&v| g.entry(v, v).is_positive());
            essential[c] = multi || has_loop || singular_count[c] > 0;
        }

        Components {
            comp_of,
            members,
            leq,
            regular_count,
            singular_count,
            block_order,
            essential,
        }
    }

    pub fn count(&self) -> usize {
        self.members.len()
    }

    pub fn component_of(&self, v: usize) -> usize {
        self.comp_of[v]
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn leq(&self, a: usize, b: usize) -> bool {
        self.leq[a][b]
    }

    pub fn regular_count(&self, c: usize) -> usize {
        self.regular_count[c]
    }

    pub fn singular_count(&self, c: usize) -> usize {
        self.singular_count[c]
    }

    pub fn size(&self, c: usize) -> usize {
        self.members[c].len()
    }

    /// Component ids in block order (larger components first).
    pub fn block_order(&self) -> &[usize] {
        &self.block_order
    }

    /// True when the component is not a lone loop-free regular vertex.
    pub fn is_essential(&self, c: usize) -> bool {
        self.essential[c]
    }

    pub fn essential_ids(&self) -> Vec<usize> {
        (0..self.count()).filter(|&c| self.essential[c]).collect()
    }

    /// The full vertex permutation realizing the block ordering:
    /// `perm[new_position] = old_index`.
    pub fn block_permutation(&self) -> Vec<usize> {
        let mut perm = Vec::with_capacity(self.comp_of.len());
        for &c in &self.block_order {
            perm.extend_from_slice(&self.members[c]);
        }
        perm
    }

    /// The block pattern for matrices over this component structure, with
    /// block sizes taken in block order.
    pub fn block_pattern(&self) -> BlockPattern {
        let k = self.count();
        let sizes = self.block_order.iter().map(|&c| self.size(c)).collect();
        let mut allowed = vec![vec![false; k]; k];
        for (bi, &ci) in self.block_order.iter().enumerate() {
            for (bj, &cj) in self.block_order.iter().enumerate() {
                allowed[bi][bj] = self.leq[ci][cj];
            }
        }
        BlockPattern { sizes, allowed }
    }
}

/// Membership test for block-patterned matrices: with blocks listed larger
/// first, an entry in block row `a` and block column `b` may be nonzero only
/// when component `a <= b`, which confines nonzero blocks to the lower-left
/// triangle including the diagonal.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BlockPattern {
    sizes: Vec<usize>,
    allowed: Vec<Vec<bool>>,
}

impl BlockPattern {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn total(&self) -> usize {
        self.sizes.iter().sum()
    }

    fn block_of(&self, idx: usize) -> usize {
        let mut acc = 0;
        for (b, &s) in self.sizes.iter().enumerate() {
            acc += s;
            if idx < acc {
                return b;
            }
        }
        panic!("index {idx} out of block range {}", self.total());
    }

    pub fn allows(&self, row: usize, col: usize) -> bool {
        self.allowed[self.block_of(row)][self.block_of(col)]
    }

    /// Checks a square integer matrix against the pattern.
    pub fn contains_int(&self, m: &[Vec<i64>]) -> bool {
        let n = self.total();
        m.len() == n
            && m.iter().enumerate().all(|(i, row)| {
                row.len() == n
                    && row
                        .iter()
                        .enumerate()
                        .all(|(j, &e)| e == 0 || self.allows(i, j))
            })
    }

    /// Checks a square extended-integer matrix against the pattern.
    pub fn contains_ext(&self, m: &[Vec<Ext>]) -> bool {
        let n = self.total();
        m.len() == n
            && m.iter().enumerate().all(|(i, row)| {
                row.len() == n
                    && row
                        .iter()
                        .enumerate()
                        .all(|(j, &e)| e.is_zero() || self.allows(i, j))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(adj: Vec<Vec<i64>>) -> Graph {
        let adj = adj
            .into_iter()
            .map(|r| r.into_iter().map(Ext::Fin).collect())
            .collect();
        Graph::from_adjacency(adj).unwrap()
    }

    #[test]
    fn smallest_valid_graph() {
        let names = vec!["v".to_string()];
        let adj = vec![vec![Ext::Fin(1)]];
        assert!(validate_graph(&names, &adj).is_empty());
    }

    #[test]
    fn non_square_is_reported() {
        let names = vec!["a".to_string(), "b".to_string()];
        let adj = vec![vec![Ext::Fin(0)]];
        let v = validate_graph(&names, &adj);
        assert!(v.iter().any(|v| v.0.contains("not square")));
    }

    #[test]
    fn negative_entry_is_reported() {
        let names = vec!["a".to_string()];
        let adj = vec![vec![Ext::Fin(-1)]];
        let v = validate_graph(&names, &adj);
        assert!(v.iter().any(|v| v.0.contains("negative multiplicity")));
    }

    #[test]
    fn classes_cover_all_cases() {
        // v1: loop (regular), v2: all-zero row (sink), v3: inf row (emitter),
        // v4: emits but receives nothing (regular source).
        let gr = Graph::from_adjacency(vec![
            vec![Ext::Fin(1), Ext::Fin(0), Ext::Fin(0), Ext::Fin(0)],
            vec![Ext::Fin(0), Ext::Fin(0), Ext::Fin(0), Ext::Fin(0)],
            vec![Ext::Inf, Ext::Fin(0), Ext::Fin(0), Ext::Fin(0)],
            vec![Ext::Fin(1), Ext::Fin(1), Ext::Fin(0), Ext::Fin(0)],
        ])
        .unwrap();
        assert_eq!(gr.vertex_class(0).unwrap(), VertexClass::Regular);
        assert_eq!(gr.vertex_class(1).unwrap(), VertexClass::Sink);
        assert_eq!(gr.vertex_class(2).unwrap(), VertexClass::InfiniteEmitter);
        assert_eq!(gr.vertex_class(3).unwrap(), VertexClass::RegularSource);
        assert!(gr.vertex_class(4).is_err());
    }

    #[test]
    fn two_cycle_is_one_component() {
        let gr = g(vec![vec![0, 1], vec![1, 0]]);
        let c = gr.components();
        assert_eq!(c.count(), 1);
        assert_eq!(c.regular_count(0), 2);
        assert_eq!(c.singular_count(0), 0);
    }

    #[test]
    fn edge_orients_the_preorder() {
        // v -> w, acyclic: two components with comp(w) <= comp(v).
        let gr = g(vec![vec![0, 1], vec![0, 0]]);
        let c = gr.components();
        assert_eq!(c.count(), 2);
        let cv = c.component_of(0);
        let cw = c.component_of(1);
        assert!(c.leq(cw, cv));
        assert!(!c.leq(cv, cw));
        // Larger first: v's component leads the block order.
        assert_eq!(c.block_order()[0], cv);
    }

    #[test]
    fn lone_loopless_vertex_is_its_own_component() {
        let gr = g(vec![vec![0]]);
        let c = gr.components();
        assert_eq!(c.count(), 1);
        assert_eq!(c.size(0), 1);
        // An isolated vertex is a sink, which makes the component essential;
        // a loop-free regular pass-through vertex is transient instead.
        assert!(c.is_essential(0));
        let gr2 = g(vec![vec![0, 1], vec![0, 0]]);
        let c2 = gr2.components();
        assert!(!c2.is_essential(c2.component_of(0)));
        assert!(c2.is_essential(c2.component_of(1)));
    }

    #[test]
    fn singular_vertices_sort_last_in_blocks() {
        // 1 <-> 2 with 2 an infinite emitter; order inside the component
        // must put vertex 2 after vertex 1.
        let gr = Graph::from_adjacency(vec![
            vec![Ext::Fin(1), Ext::Fin(1)],
            vec![Ext::Inf, Ext::Fin(0)],
        ])
        .unwrap();
        let c = gr.components();
        assert_eq!(c.count(), 1);
        assert_eq!(c.members(0), &[0, 1]);
        let gr2 = Graph::from_adjacency(vec![
            vec![Ext::Fin(0), Ext::Inf],
            vec![Ext::Fin(1), Ext::Fin(1)],
        ])
        .unwrap();
        let c2 = gr2.components();
        assert_eq!(c2.members(0), &[1, 0]);
    }
}
