//! Conditional characteristic graphs and their independent sets.
//!
//! Vertices are the letters of the composite alphabet of the `L`
//! coordinates, encoded in mixed radix with the first coordinate most
//! significant. Two letters are adjacent when some common `k` sees both with
//! positive probability and the function takes different values.

use std::collections::BTreeMap;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::dist::{pick, Coord, Joint};
use crate::error::{Error, Result};

pub const DEFAULT_MAX_VERTICES: usize = 4096;
/// Full independent-set enumeration is exponential in the vertex count.
pub const DEFAULT_MAX_INDEPENDENT_VERTICES: usize = 20;
pub const DEFAULT_MAX_SETS: usize = 1 << 20;

/// Which coordinates form the vertex letters (`l`) and which act as side
/// information (`k`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeSpec {
    pub l: Vec<Coord>,
    pub k: Vec<Coord>,
}

impl CompositeSpec {
    pub fn new(l: Vec<Coord>, k: Vec<Coord>) -> Result<Self> {
        if l.is_empty() {
            return Err(Error::InvalidCoordinates("L must name at least one coordinate".into()));
        }
        for c in &l {
            if k.contains(c) {
                return Err(Error::InvalidCoordinates(format!("{c} appears in both L and K")));
            }
            if l.iter().filter(|&d| d == c).count() > 1 {
                return Err(Error::InvalidCoordinates(format!("{c} repeated in L")));
            }
        }
        Ok(CompositeSpec { l, k })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharGraph {
    coords: Vec<Coord>,
    sizes: Vec<usize>,
    adj: Vec<FixedBitSet>,
}

/// Maps composite letters to vertex indices and back.
fn radix_index(sizes: &[usize], letters: &[u32]) -> usize {
    letters
        .iter()
        .zip(sizes)
        .fold(0, |acc, (&l, &s)| acc * s + l as usize)
}

impl CharGraph {
    /// A graph with explicit edges and no coordinate labels; vertices are
    /// `0..n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = CharGraph {
            coords: Vec::new(),
            sizes: vec![n],
            adj: vec![FixedBitSet::with_capacity(n); n],
        };
        for &(a, b) in edges {
            g.add_edge(a, b);
        }
        g
    }

    fn empty(coords: Vec<Coord>, sizes: Vec<usize>) -> Self {
        let n = sizes.iter().product();
        CharGraph {
            coords,
            sizes,
            adj: vec![FixedBitSet::with_capacity(n); n],
        }
    }

    fn add_edge(&mut self, a: usize, b: usize) {
        if a != b {
            self.adj[a].insert(b);
            self.adj[b].insert(a);
        }
    }

    pub fn remove_edge(&mut self, a: usize, b: usize) {
        self.adj[a].set(b, false);
        self.adj[b].set(a, false);
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn vertex_count(&self) -> usize {
        self.adj.len()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.adj[a].contains(b)
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].count_ones(..)
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[v].ones()
    }

    /// Edges `(a, b)` with `a < b`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.vertex_count())
            .flat_map(|a| self.adj[a].ones().filter(move |&b| b > a).map(move |b| (a, b)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn vertex_letters(&self, mut v: usize) -> Vec<u32> {
        let mut out = vec![0u32; self.sizes.len()];
        for i in (0..self.sizes.len()).rev() {
            out[i] = (v % self.sizes[i]) as u32;
            v /= self.sizes[i];
        }
        out
    }

    pub fn vertex_index(&self, letters: &[u32]) -> usize {
        radix_index(&self.sizes, letters)
    }

    pub fn is_independent(&self, set: &[usize]) -> bool {
        set.iter()
            .enumerate()
            .all(|(i, &a)| set[i + 1..].iter().all(|&b| !self.has_edge(a, b)))
    }
}

/// Builds `G_{L|K}`. `outputs[i]` is the function value on `joint.rows()[i]`.
pub fn build_char_graph(
    joint: &Joint,
    outputs: &[u32],
    spec: &CompositeSpec,
    max_vertices: usize,
) -> Result<CharGraph> {
    if outputs.len() != joint.len() {
        return Err(Error::InvalidCoordinates(
            "one function value is needed per joint row".into(),
        ));
    }
    let l_cols = joint.columns(&spec.l)?;
    let k_cols = joint.columns(&spec.k)?;
    let sizes: Vec<usize> = l_cols.iter().map(|&c| joint.sizes()[c]).collect();
    let n = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .unwrap_or(usize::MAX);
    if n > max_vertices {
        return Err(Error::GuardExceeded {
            what: "characteristic graph vertices",
            limit: max_vertices,
            actual: n,
        });
    }

    // k -> l -> f
    let mut fibers: BTreeMap<Vec<u32>, BTreeMap<usize, u32>> = BTreeMap::new();
    for ((x, _), &fv) in joint.rows().iter().zip(outputs) {
        let l = radix_index(&sizes, &pick(x, &l_cols));
        let k = pick(x, &k_cols);
        let slot = fibers.entry(k.clone()).or_default();
        match slot.get(&l) {
            Some(&prev) if prev != fv => {
                return Err(Error::NotDetermined(format!(
                    "letter {:?} with side information {:?} allows two function values",
                    pick(x, &l_cols),
                    k
                )));
            }
            _ => {
                slot.insert(l, fv);
            }
        }
    }

    let mut g = CharGraph::empty(spec.l.clone(), sizes);
    for fiber in fibers.values() {
        let by_value: Vec<(usize, u32)> = fiber.iter().map(|(&l, &v)| (l, v)).collect();
        for (i, &(a, fa)) in by_value.iter().enumerate() {
            for &(b, fb) in &by_value[i + 1..] {
                if fa != fb {
                    g.add_edge(a, b);
                }
            }
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SetKind {
    Independent,
    MaximalIndependent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndepSetFamily {
    /// Each set is sorted ascending.
    pub sets: Vec<Vec<usize>>,
    pub kind: SetKind,
}

impl IndepSetFamily {
    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Indices of the sets containing `v`.
    pub fn covering(&self, v: usize) -> Vec<usize> {
        (0..self.sets.len())
            .filter(|&i| self.sets[i].binary_search(&v).is_ok())
            .collect()
    }
}

fn vertex_guard(g: &CharGraph, cap: usize) -> Result<()> {
    if g.vertex_count() > cap {
        return Err(Error::GuardExceeded {
            what: "vertices for set enumeration",
            limit: cap,
            actual: g.vertex_count(),
        });
    }
    Ok(())
}

/// Every nonempty independent set, ordered by size and then lexicographically.
pub fn independent_sets(g: &CharGraph, max_vertices: usize) -> Result<IndepSetFamily> {
    vertex_guard(g, max_vertices)?;
    let mut sets = Vec::new();
    let mut current = Vec::new();
    grow_independent(g, 0, &mut current, &mut sets)?;
    sets.sort_by(|a: &Vec<usize>, b| (a.len(), a).cmp(&(b.len(), b)));
    Ok(IndepSetFamily {
        sets,
        kind: SetKind::Independent,
    })
}

fn grow_independent(
    g: &CharGraph,
    from: usize,
    current: &mut Vec<usize>,
    out: &mut Vec<Vec<usize>>,
) -> Result<()> {
    for v in from..g.vertex_count() {
        if current.iter().any(|&u| g.has_edge(u, v)) {
            continue;
        }
        current.push(v);
        out.push(current.clone());
        if out.len() > DEFAULT_MAX_SETS {
            return Err(Error::GuardExceeded {
                what: "independent sets",
                limit: DEFAULT_MAX_SETS,
                actual: out.len(),
            });
        }
        grow_independent(g, v + 1, current, out)?;
        current.pop();
    }
    Ok(())
}

/// Maximal independent sets, as maximal cliques of the complement graph
/// (Bron–Kerbosch with Tomita pivoting), sorted lexicographically.
pub fn maximal_independent_sets(g: &CharGraph, max_vertices: usize) -> Result<IndepSetFamily> {
    vertex_guard(g, max_vertices)?;
    let n = g.vertex_count();
    let comp: Vec<FixedBitSet> = (0..n)
        .map(|v| {
            let mut s = FixedBitSet::with_capacity(n);
            s.insert_range(..);
            s.difference_with(&g.adj[v]);
            s.set(v, false);
            s
        })
        .collect();
    let mut p = FixedBitSet::with_capacity(n);
    p.insert_range(..);
    let x = FixedBitSet::with_capacity(n);
    let mut sets = Vec::new();
    let mut r = Vec::new();
    if n > 0 {
        bron_kerbosch(&comp, &mut r, p, x, &mut sets)?;
    }
    for s in &mut sets {
        s.sort_unstable();
    }
    sets.sort();
    Ok(IndepSetFamily {
        sets,
        kind: SetKind::MaximalIndependent,
    })
}

fn bron_kerbosch(
    adj: &[FixedBitSet],
    r: &mut Vec<usize>,
    mut p: FixedBitSet,
    mut x: FixedBitSet,
    out: &mut Vec<Vec<usize>>,
) -> Result<()> {
    if p.is_clear() {
        if x.is_clear() {
            out.push(r.clone());
            if out.len() > DEFAULT_MAX_SETS {
                return Err(Error::GuardExceeded {
                    what: "maximal independent sets",
                    limit: DEFAULT_MAX_SETS,
                    actual: out.len(),
                });
            }
        }
        return Ok(());
    }
    let pivot = p
        .union(&x)
        .max_by_key(|&u| (p.intersection(&adj[u]).count(), std::cmp::Reverse(u)))
        .expect("P is nonempty");
    let mut candidates = p.clone();
    candidates.difference_with(&adj[pivot]);
    for v in candidates.ones() {
        r.push(v);
        let mut p2 = p.clone();
        p2.intersect_with(&adj[v]);
        let mut x2 = x.clone();
        x2.intersect_with(&adj[v]);
        bron_kerbosch(adj, r, p2, x2, out)?;
        r.pop();
        p.set(v, false);
        x.insert(v);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PartitionVerdict {
    Partition,
    Overlap {
        vertex: usize,
        first: Vec<usize>,
        second: Vec<usize>,
    },
    Uncovered(usize),
}

impl PartitionVerdict {
    pub fn is_partition(&self) -> bool {
        matches!(self, PartitionVerdict::Partition)
    }
}

/// Reports the smallest vertex lying in two sets, or missing from all.
pub fn check_partition(fam: &IndepSetFamily, g: &CharGraph) -> PartitionVerdict {
    let all: Vec<usize> = (0..g.vertex_count()).collect();
    check_partition_within(fam, &all)
}

/// Partition test restricted to `vertices`, typically the positive-probability
/// letters. Zero-probability letters are isolated, so they sit in every
/// maximal set and would otherwise defeat the test whenever there are two
/// blocks.
pub fn check_partition_within(fam: &IndepSetFamily, vertices: &[usize]) -> PartitionVerdict {
    for &v in vertices {
        let cover = fam.covering(v);
        match cover.len() {
            0 => return PartitionVerdict::Uncovered(v),
            1 => {}
            _ => {
                return PartitionVerdict::Overlap {
                    vertex: v,
                    first: fam.sets[cover[0]].clone(),
                    second: fam.sets[cover[1]].clone(),
                }
            }
        }
    }
    PartitionVerdict::Partition
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GraphComparison {
    Equal,
    VertexMismatch,
    /// First edge present in exactly one of the graphs.
    EdgeMismatch(usize, usize),
}

pub fn graph_equal(g1: &CharGraph, g2: &CharGraph) -> GraphComparison {
    if g1.coords != g2.coords || g1.sizes != g2.sizes {
        return GraphComparison::VertexMismatch;
    }
    for a in 0..g1.vertex_count() {
        if g1.adj[a] != g2.adj[a] {
            let b = g1.adj[a]
                .symmetric_difference(&g2.adj[a])
                .next()
                .expect("rows differ");
            return GraphComparison::EdgeMismatch(a.min(b), a.max(b));
        }
    }
    GraphComparison::Equal
}
