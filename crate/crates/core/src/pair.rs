//! The two matrix encodings of a graph with at most one regular source.
//!
//! [`AcPair`] keeps the plain adjacency `A` of the non-source vertices plus
//! the antenna row `C` counting edges from the collected regular source into
//! each vertex. [`DbPair`] is the shifted transpose `b[i][j] = a[j][i] - δ_ij`
//! together with `d = c + 1`; row and column operations on `(D, B)` are what
//! the move compilers produce and consume. The two encodings carry the same
//! information and round-trip exactly.

use serde::{Deserialize, Serialize};

use crate::ext::Ext;
use crate::graph::{Components, Graph, VertexClass};
use crate::moves::{collect_sources, MoveScript};
use crate::{Error, Result};

/// Adjacency-plus-antennae form: `a[i][j]` counts edges `i -> j` over the
/// non-source vertices, `c[i]` counts antennae into vertex `i`. A zero `c`
/// means the source is absent.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AcPair {
    pub a: Vec<Vec<Ext>>,
    pub c: Vec<i64>,
}

/// Shifted-transpose form: `b[i][j] = a[j][i] - δ_ij`, `d[i] = c[i] + 1`.
#[derive(Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct DbPair {
    pub b: Vec<Vec<Ext>>,
    pub d: Vec<i64>,
}

/// Vertex class as visible from a column of `B`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DbClass {
    Regular,
    Sink,
    InfiniteEmitter,
}

impl DbClass {
    pub fn is_singular(self) -> bool {
        !matches!(self, DbClass::Regular)
    }
}

impl AcPair {
    pub fn new(a: Vec<Vec<Ext>>, c: Vec<i64>) -> Result<Self> {
        let p = AcPair { a, c };
        p.validate()?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if n == 0 {
            return Err(Error::InvalidPair("no non-source vertices".into()));
        }
        if self.a.len() != n || self.a.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidPair("adjacency is not square".into()));
        }
        for row in &self.a {
            for &e in row {
                if !e.is_multiplicity() {
                    return Err(Error::InvalidPair(format!("negative multiplicity {e}")));
                }
            }
        }
        if self.c.iter().any(|&c| c < 0) {
            return Err(Error::InvalidPair(
                "antenna counts must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn to_db(&self) -> DbPair {
        let n = self.n();
        let mut b = vec![vec![Ext::ZERO; n]; n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1 } else { 0 };
                b[i][j] = match self.a[j][i] {
                    Ext::Inf => Ext::Inf,
                    Ext::Fin(v) => Ext::Fin(v - delta),
                };
            }
        }
        let d = self.c.iter().map(|&c| c + 1).collect();
        DbPair { b, d }
    }

    /// Materializes the graph: the source goes first when any antenna exists.
    pub fn to_graph(&self) -> Graph {
        let n = self.n();
        let has_source = self.c.iter().any(|&c| c > 0);
        let mut names = Vec::new();
        let mut adj = Vec::new();
        if has_source {
            names.push("s".to_string());
            let mut row = vec![Ext::ZERO];
            row.extend(self.c.iter().map(|&c| Ext::Fin(c)));
            adj.push(row);
        }
        for i in 0..n {
            names.push(format!("v{}", i + 1));
            let mut row = Vec::with_capacity(n + 1);
            if has_source {
                row.push(Ext::ZERO);
            }
            row.extend(self.a[i].iter().copied());
            adj.push(row);
        }
        Graph::new(names, adj).expect("valid pair materializes a valid graph")
    }
}

impl DbPair {
    pub fn new(b: Vec<Vec<Ext>>, d: Vec<i64>) -> Result<Self> {
        let p = DbPair { b, d };
        p.validate()?;
        Ok(p)
    }

    /// Builds a pair without any validation. Operation pipelines pass
    /// through states where an indexed vertex briefly holds neither edges
    /// nor antennae; those states are representable here but rejected by
    /// [`DbPair::validate`].
    pub(crate) fn raw(b: Vec<Vec<Ext>>, d: Vec<i64>) -> Self {
        DbPair { b, d }
    }

    pub fn n(&self) -> usize {
        self.d.len()
    }

    /// Entry bounds only: square shape, `-1` floor on the diagonal, `0`
    /// elsewhere, antenna counts at least one.
    pub(crate) fn validate_bounds(&self) -> Result<()> {
        let n = self.d.len();
        if n == 0 {
            return Err(Error::InvalidPair("no non-source vertices".into()));
        }
        if self.b.len() != n || self.b.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidPair("B is not square".into()));
        }
        for (i, row) in self.b.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let lo = if i == j { -1 } else { 0 };
                if let Ext::Fin(v) = e {
                    if v < lo {
                        return Err(Error::InvalidPair(format!(
                            "entry ({i}, {j}) of B is {v}, below the bound {lo}"
                        )));
                    }
                }
            }
        }
        if self.d.iter().any(|&d| d < 1) {
            return Err(Error::InvalidPair("entries of D must be at least 1".into()));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_bounds()?;
        let n = self.n();
        // Sources are never indexed: a regular vertex receiving neither
        // edges nor antennae belongs in the antenna data, not in B.
        for v in 0..n {
            let row_empty = (0..n).all(|j| {
                let base = if j == v { Ext::Fin(-1) } else { Ext::ZERO };
                self.b[v][j] == base
            });
            if row_empty && self.d[v] == 1 && self.class(v) == DbClass::Regular {
                return Err(Error::InvalidPair(format!(
                    "index {v} encodes a regular source; collect it into the antenna data"
                )));
            }
        }
        Ok(())
    }

    /// Class of the vertex behind column `j`: a sink column is `-e_j`, an
    /// infinite-emitter column contains `inf`, anything else is regular.
    pub fn class(&self, j: usize) -> DbClass {
        let col: Vec<Ext> = self.b.iter().map(|r| r[j]).collect();
        if col.iter().any(|e| e.is_inf()) {
            return DbClass::InfiniteEmitter;
        }
        let sink = col.iter().enumerate().all(|(i, &e)| {
            if i == j {
                e == Ext::Fin(-1)
            } else {
                e.is_zero()
            }
        });
        if sink {
            DbClass::Sink
        } else {
            DbClass::Regular
        }
    }

    pub fn is_regular(&self, j: usize) -> bool {
        self.class(j) == DbClass::Regular
    }

    pub fn regular_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&j| self.is_regular(j)).collect()
    }

    pub fn singular_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&j| !self.is_regular(j)).collect()
    }

    /// Column sum of column `j` of `B`.
    pub fn column_sum(&self, j: usize) -> Result<Ext> {
        Ext::checked_sum(self.b.iter().map(|r| r[j]))
    }

    /// `B` restricted to regular columns, as plain integers (`n × m`).
    pub fn b_regular(&self) -> Vec<Vec<i64>> {
        let reg = self.regular_indices();
        self.b
            .iter()
            .map(|row| {
                reg.iter()
                    .map(|&j| row[j].finite().expect("regular columns are finite"))
                    .collect()
            })
            .collect()
    }

    /// `B` restricted to singular columns (`n` rows).
    pub fn b_singular(&self) -> Vec<Vec<Ext>> {
        let sing = self.singular_indices();
        self.b
            .iter()
            .map(|row| sing.iter().map(|&j| row[j]).collect())
            .collect()
    }

    pub fn to_ac(&self) -> AcPair {
        let n = self.n();
        let mut a = vec![vec![Ext::ZERO; n]; n];
        for i in 0..n {
            for j in 0..n {
                let delta = if i == j { 1 } else { 0 };
                a[i][j] = match self.b[j][i] {
                    Ext::Inf => Ext::Inf,
                    Ext::Fin(v) => Ext::Fin(v + delta),
                };
            }
        }
        let c = self.d.iter().map(|&d| d - 1).collect();
        AcPair { a, c }
    }

    /// Materializes the graph described by the pair (source first when present).
    pub fn to_graph(&self) -> Graph {
        self.to_ac().to_graph()
    }

    /// The graph on the indexed vertices alone (antenna source left out);
    /// this is what component structure and canonicity conditions see.
    pub fn indexed_graph(&self) -> Graph {
        let ac = self.to_ac();
        Graph::from_adjacency(ac.a).expect("indexed adjacency is valid")
    }

    /// Component structure of the indexed vertices.
    pub fn components(&self) -> Components {
        self.indexed_graph().components()
    }

    /// The same pair with vertices permuted into canonical block order.
    pub fn block_reordered(&self) -> DbPair {
        let comps = self.components();
        let perm = comps.block_permutation();
        self.permuted(&perm)
    }

    /// Applies a permutation given as `perm[new_index] = old_index`.
    pub fn permuted(&self, perm: &[usize]) -> DbPair {
        let n = self.n();
        assert_eq!(perm.len(), n);
        let mut b = vec![vec![Ext::ZERO; n]; n];
        let mut d = vec![0i64; n];
        for i in 0..n {
            d[i] = self.d[perm[i]];
            for j in 0..n {
                b[i][j] = self.b[perm[i]][perm[j]];
            }
        }
        DbPair { b, d }
    }
}

/// Pair view of a graph whose antenna carrier, when present, sits at slot
/// 0 by convention. Unlike [`to_db`], indexed vertices are never collected
/// away, even when an intermediate state leaves one without incoming
/// edges.
pub(crate) fn view_with_carrier(g: &Graph, carrier: bool) -> Result<DbPair> {
    let start = usize::from(carrier);
    if carrier && g.vertex_class(0)? != VertexClass::RegularSource {
        return Err(Error::Internal(
            "carrier slot is not a regular source".into(),
        ));
    }
    let n = g
        .n()
        .checked_sub(start)
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidGraph("no indexed vertices in the carrier view".into()))?;
    let mut a = vec![vec![Ext::ZERO; n]; n];
    for i in 0..n {
        for j in 0..n {
            a[i][j] = g.entry(i + start, j + start);
        }
    }
    let c: Vec<i64> = if carrier {
        (0..n)
            .map(|j| g.entry(0, j + start).finite())
            .collect::<Result<_>>()?
    } else {
        vec![0; n]
    };
    Ok(AcPair { a, c }.to_db())
}

/// Converts a graph to its `(D, B)` pair, collecting regular sources first.
/// The collection script is discarded; use [`collect_sources`] directly when
/// the certificate matters.
pub fn to_db(g: &Graph) -> Result<DbPair> {
    let (collected, _script) = collect_sources(g)?;
    let sources = collected.regular_sources();
    debug_assert!(sources.len() <= 1);
    let indexed: Vec<usize> = (0..collected.n())
        .filter(|v| !sources.contains(v))
        .collect();
    if indexed.is_empty() {
        return Err(Error::InvalidGraph(
            "graph has no non-source vertices; the pair encoding would be empty".into(),
        ));
    }
    let n = indexed.len();
    let mut a = vec![vec![Ext::ZERO; n]; n];
    for (i, &vi) in indexed.iter().enumerate() {
        for (j, &vj) in indexed.iter().enumerate() {
            a[i][j] = collected.entry(vi, vj);
        }
    }
    let c = match sources.first() {
        Some(&s) => indexed
            .iter()
            .map(|&v| collected.entry(s, v).finite())
            .collect::<Result<Vec<i64>>>()?,
        None => vec![0; n],
    };
    Ok(AcPair::new(a, c)?.to_db())
}

/// Inverse of [`to_db`]: builds the graph with the source placed first.
pub fn from_db(p: &DbPair) -> Result<Graph> {
    p.validate()?;
    Ok(p.to_graph())
}

/// Collects sources and converts, returning the collection script as well.
pub fn to_db_with_script(g: &Graph) -> Result<(DbPair, MoveScript)> {
    let (collected, script) = collect_sources(g)?;
    let p = to_db(&collected)?;
    Ok((p, script))
}
