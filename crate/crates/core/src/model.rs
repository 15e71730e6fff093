//! Problem instances: the rooted tree, the sources' joint law and the target
//! function, plus the tree vocabulary (In, Child, Strangers, orderings, cuts)
//! the rate computations are phrased in.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};

use crate::dist::{Coord, Joint, Prob};
use crate::error::{Error, Result, TreeViolation};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u32> for NodeId {
    fn from(v: u32) -> Self {
        NodeId(v)
    }
}

pub fn ids(v: &[u32]) -> BTreeSet<NodeId> {
    v.iter().map(|&u| NodeId(u)).collect()
}

/// Checks every rooted-tree invariant and reports the first violation.
pub fn validate_tree(
    nodes: &[NodeId],
    edges: &[(NodeId, NodeId)],
    root: NodeId,
) -> std::result::Result<(), TreeViolation> {
    if nodes.is_empty() {
        return Err(TreeViolation::Empty);
    }
    let mut seen = BTreeSet::new();
    for &u in nodes {
        if !seen.insert(u) {
            return Err(TreeViolation::DuplicateNode(u));
        }
    }
    if !seen.contains(&root) {
        return Err(TreeViolation::UnknownRoot(root));
    }
    for &(u, v) in edges {
        for w in [u, v] {
            if !seen.contains(&w) {
                return Err(TreeViolation::UnknownEndpoint(w));
            }
        }
        if u == v {
            return Err(TreeViolation::SelfLoop(u));
        }
    }

    // Undirected cycles, found with a union-find over the edges.
    let mut parent: BTreeMap<NodeId, NodeId> = nodes.iter().map(|&u| (u, u)).collect();
    fn find(parent: &mut BTreeMap<NodeId, NodeId>, u: NodeId) -> NodeId {
        let p = parent[&u];
        if p == u {
            return u;
        }
        let r = find(parent, p);
        parent.insert(u, r);
        r
    }
    let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(u, v) in edges {
        let (ru, rv) = (find(&mut parent, u), find(&mut parent, v));
        if ru == rv {
            let mut path = undirected_path(&adjacency, v, u);
            path.push(v);
            return Err(TreeViolation::Cycle(path));
        }
        parent.insert(ru, rv);
        adjacency.entry(u).or_default().push(v);
        adjacency.entry(v).or_default().push(u);
    }

    let mut out: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    for &(u, v) in edges {
        if out.insert(u, v).is_some() {
            return Err(TreeViolation::MultipleOutEdges(u));
        }
    }
    if out.contains_key(&root) {
        return Err(TreeViolation::RootHasOutEdge(root));
    }
    for &u in nodes {
        let mut cur = u;
        while cur != root {
            match out.get(&cur) {
                Some(&next) => cur = next,
                None => return Err(TreeViolation::Disconnected(u)),
            }
        }
    }
    Ok(())
}

fn undirected_path(adj: &BTreeMap<NodeId, Vec<NodeId>>, from: NodeId, to: NodeId) -> Vec<NodeId> {
    let mut prev: BTreeMap<NodeId, NodeId> = BTreeMap::new();
    let mut queue = VecDeque::from([from]);
    prev.insert(from, from);
    while let Some(u) = queue.pop_front() {
        if u == to {
            break;
        }
        for &v in adj.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::btree_map::Entry::Vacant(e) = prev.entry(v) {
                e.insert(u);
                queue.push_back(v);
            }
        }
    }
    let mut path = vec![to];
    let mut cur = to;
    while cur != from {
        cur = prev[&cur];
        path.push(cur);
    }
    path.reverse();
    path
}

/// A directed tree whose edges all point towards `root`.
///
/// Nodes are stored in ascending id order; that order is also the
/// coordinate order of source tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RootedTree {
    nodes: Vec<NodeId>,
    out: Vec<Option<usize>>,
    ins: Vec<Vec<usize>>,
    root: usize,
}

/// Neighbourhood relations of a single node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relations {
    pub incoming: BTreeSet<NodeId>,
    pub out: Option<NodeId>,
    pub child: BTreeSet<NodeId>,
    pub strangers: BTreeSet<NodeId>,
}

impl RootedTree {
    pub fn new(nodes: Vec<NodeId>, edges: Vec<(NodeId, NodeId)>, root: NodeId) -> Result<Self> {
        validate_tree(&nodes, &edges, root).map_err(Error::Tree)?;
        let mut nodes = nodes;
        nodes.sort();
        let pos = |u: NodeId| nodes.binary_search(&u).expect("validated");
        let mut out = vec![None; nodes.len()];
        let mut ins = vec![Vec::new(); nodes.len()];
        for &(u, v) in &edges {
            out[pos(u)] = Some(pos(v));
            ins[pos(v)].push(pos(u));
        }
        for list in &mut ins {
            list.sort();
        }
        let root = pos(root);
        Ok(RootedTree {
            nodes,
            out,
            ins,
            root,
        })
    }

    /// Convenience constructor from raw labels.
    pub fn from_edges(edges: &[(u32, u32)], root: u32) -> Result<Self> {
        let mut nodes: BTreeSet<NodeId> = edges
            .iter()
            .flat_map(|&(u, v)| [NodeId(u), NodeId(v)])
            .collect();
        nodes.insert(NodeId(root));
        Self::new(
            nodes.into_iter().collect(),
            edges.iter().map(|&(u, v)| (NodeId(u), NodeId(v))).collect(),
            NodeId(root),
        )
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> NodeId {
        self.nodes[self.root]
    }

    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        (0..self.len())
            .filter_map(|i| self.out[i].map(|j| (self.nodes[i], self.nodes[j])))
            .collect()
    }

    /// Position of `u` in ascending id order, which is also its column in
    /// source tuples.
    pub fn index_of(&self, u: NodeId) -> Result<usize> {
        self.nodes.binary_search(&u).map_err(|_| Error::UnknownNode(u))
    }

    pub fn contains(&self, u: NodeId) -> bool {
        self.nodes.binary_search(&u).is_ok()
    }

    /// Non-root nodes in ascending id order.
    pub fn senders(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .copied()
            .filter(|&u| u != self.root())
            .collect()
    }

    pub fn out_of(&self, u: NodeId) -> Result<Option<NodeId>> {
        Ok(self.out[self.index_of(u)?].map(|j| self.nodes[j]))
    }

    pub fn incoming(&self, u: NodeId) -> Result<Vec<NodeId>> {
        Ok(self.ins[self.index_of(u)?]
            .iter()
            .map(|&j| self.nodes[j])
            .collect())
    }

    /// All nodes with a directed path to `u`, including `u` itself.
    pub fn child(&self, u: NodeId) -> Result<BTreeSet<NodeId>> {
        let mut stack = vec![self.index_of(u)?];
        let mut set = BTreeSet::new();
        while let Some(i) = stack.pop() {
            set.insert(self.nodes[i]);
            stack.extend(self.ins[i].iter().copied());
        }
        Ok(set)
    }

    pub fn strangers(&self, u: NodeId) -> Result<BTreeSet<NodeId>> {
        let child = self.child(u)?;
        let mut ancestors = BTreeSet::new();
        let mut cur = self.out_of(u)?;
        while let Some(v) = cur {
            ancestors.insert(v);
            cur = self.out_of(v)?;
        }
        Ok(self
            .nodes
            .iter()
            .copied()
            .filter(|v| !child.contains(v) && !ancestors.contains(v))
            .collect())
    }

    pub fn relations(&self, u: NodeId) -> Result<Relations> {
        Ok(Relations {
            incoming: self.incoming(u)?.into_iter().collect(),
            out: self.out_of(u)?,
            child: self.child(u)?,
            strangers: self.strangers(u)?,
        })
    }

    /// Number of edges on the path from `u` to the root.
    pub fn depth(&self, u: NodeId) -> Result<usize> {
        let mut i = self.index_of(u)?;
        let mut d = 0;
        while let Some(j) = self.out[i] {
            i = j;
            d += 1;
        }
        Ok(d)
    }

    /// Nodes sorted by decreasing depth, ties broken by ascending id.
    pub fn canonical_ordering(&self) -> Ordering {
        let mut seq = self.nodes.clone();
        seq.sort_by_key(|&u| (std::cmp::Reverse(self.depth(u).expect("own node")), u));
        Ordering::from_sequence(self, seq).expect("depth order is a linear extension")
    }

    /// Linear extensions of the edge order, canonical first, then the rest in
    /// lexicographic order of their node sequences. `limit` caps the count.
    pub fn enumerate_orderings(&self, limit: Option<usize>) -> Vec<Ordering> {
        let limit = limit.unwrap_or(usize::MAX);
        if limit == 0 {
            return Vec::new();
        }
        let canonical = self.canonical_ordering();
        let mut out = vec![canonical.clone()];
        let n = self.len();
        let mut placed = vec![false; n];
        let mut seq = Vec::with_capacity(n);
        self.extend_orderings(&mut placed, &mut seq, &canonical, limit, &mut out);
        out
    }

    fn extend_orderings(
        &self,
        placed: &mut [bool],
        seq: &mut Vec<usize>,
        canonical: &Ordering,
        limit: usize,
        out: &mut Vec<Ordering>,
    ) {
        if out.len() >= limit {
            return;
        }
        if seq.len() == self.len() {
            let nodes: Vec<NodeId> = seq.iter().map(|&i| self.nodes[i]).collect();
            if nodes != canonical.sequence() {
                out.push(Ordering::from_sequence(self, nodes).expect("built from ready sets"));
            }
            return;
        }
        for i in 0..self.len() {
            if placed[i] || !self.ins[i].iter().all(|&j| placed[j]) {
                continue;
            }
            placed[i] = true;
            seq.push(i);
            self.extend_orderings(placed, seq, canonical, limit, out);
            seq.pop();
            placed[i] = false;
            if out.len() >= limit {
                return;
            }
        }
    }

    /// Every nonempty proper subset closed under `Child`, with its boundary,
    /// sorted by size and then members.
    pub fn enumerate_valid_cuts(&self) -> Vec<CutInfo> {
        let order: Vec<usize> = self
            .canonical_ordering()
            .sequence()
            .iter()
            .map(|&u| self.index_of(u).expect("own node"))
            .filter(|&i| i != self.root)
            .collect();
        let mut cuts = Vec::new();
        let mut chosen = vec![false; self.len()];
        self.collect_cuts(&order, 0, &mut chosen, &mut cuts);
        let mut infos: Vec<CutInfo> = cuts
            .into_iter()
            .map(|members| self.cut_info(Cut { members }).expect("closed by construction"))
            .collect();
        infos.sort_by(|a, b| {
            (a.cut.members.len(), &a.cut.members).cmp(&(b.cut.members.len(), &b.cut.members))
        });
        infos
    }

    fn collect_cuts(
        &self,
        order: &[usize],
        k: usize,
        chosen: &mut [bool],
        cuts: &mut Vec<BTreeSet<NodeId>>,
    ) {
        if k == order.len() {
            let set: BTreeSet<NodeId> = (0..self.len())
                .filter(|&i| chosen[i])
                .map(|i| self.nodes[i])
                .collect();
            if !set.is_empty() {
                cuts.push(set);
            }
            return;
        }
        let i = order[k];
        self.collect_cuts(order, k + 1, chosen, cuts);
        if self.ins[i].iter().all(|&j| chosen[j]) {
            chosen[i] = true;
            self.collect_cuts(order, k + 1, chosen, cuts);
            chosen[i] = false;
        }
    }

    pub fn is_valid_cut(&self, members: &BTreeSet<NodeId>) -> Result<bool> {
        for &u in members {
            self.index_of(u)?;
        }
        if members.is_empty() || members.len() == self.len() {
            return Ok(false);
        }
        for &u in members {
            if !self.child(u)?.is_subset(members) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn cut_info(&self, cut: Cut) -> Result<CutInfo> {
        if !self.is_valid_cut(&cut.members)? {
            return Err(Error::InvalidCut(format!("{:?} is not closed under Child", cut.members)));
        }
        let mut boundary = BTreeSet::new();
        for &v in &cut.members {
            if let Some(w) = self.out_of(v)? {
                if !cut.members.contains(&w) {
                    boundary.insert(v);
                }
            }
        }
        Ok(CutInfo { cut, boundary })
    }

    /// Sub, Sup and Roots of `u` under `ord`.
    pub fn ordering_sets(&self, ord: &Ordering, u: NodeId) -> Result<OrderingSets> {
        ord.check(self)?;
        let rank = ord.rank(u)?;
        let sub: BTreeSet<NodeId> = ord.sequence()[..rank - 1].iter().copied().collect();
        let sup: BTreeSet<NodeId> = ord.sequence()[rank..].iter().copied().collect();
        let mut roots = BTreeSet::new();
        for &v in &sub {
            let out = self.out_of(v)?;
            if let Some(w) = out {
                if !sub.contains(&w) && w != u {
                    roots.insert(v);
                }
            }
        }
        Ok(OrderingSets { sub, sup, roots })
    }
}

/// A transmission schedule: a linear extension of the tree's edge order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ordering {
    seq: Vec<NodeId>,
}

impl Ordering {
    /// Builds an ordering from the node sequence (first transmitter first).
    pub fn from_sequence(tree: &RootedTree, seq: Vec<NodeId>) -> Result<Self> {
        let ord = Ordering { seq };
        ord.check(tree)?;
        Ok(ord)
    }

    /// Builds an ordering from the rank of each node (1-based).
    pub fn from_ranks(tree: &RootedTree, ranks: &BTreeMap<NodeId, usize>) -> Result<Self> {
        let mut seq = vec![None; tree.len()];
        for (&u, &r) in ranks {
            tree.index_of(u)?;
            if r == 0 || r > tree.len() || seq[r - 1].is_some() {
                return Err(Error::InvalidOrdering(format!("rank {r} of node {u} is not a free slot")));
            }
            seq[r - 1] = Some(u);
        }
        let seq: Option<Vec<NodeId>> = seq.into_iter().collect();
        let seq = seq.ok_or_else(|| Error::InvalidOrdering("ranks do not cover every node".into()))?;
        Self::from_sequence(tree, seq)
    }

    pub fn sequence(&self) -> &[NodeId] {
        &self.seq
    }

    /// 1-based position of `u`.
    pub fn rank(&self, u: NodeId) -> Result<usize> {
        self.seq
            .iter()
            .position(|&v| v == u)
            .map(|p| p + 1)
            .ok_or(Error::UnknownNode(u))
    }

    pub fn check(&self, tree: &RootedTree) -> Result<()> {
        let set: BTreeSet<NodeId> = self.seq.iter().copied().collect();
        if set.len() != self.seq.len() || set.len() != tree.len() || set.iter().any(|&u| !tree.contains(u)) {
            return Err(Error::InvalidOrdering("not a bijection onto the tree's nodes".into()));
        }
        for (u, v) in tree.edges() {
            if self.rank(u)? > self.rank(v)? {
                return Err(Error::InvalidOrdering(format!("edge {u} -> {v} goes backwards")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Ordering {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.seq.iter().map(|u| u.to_string()).collect();
        write!(f, "[{}]", s.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingSets {
    pub sub: BTreeSet<NodeId>,
    pub sup: BTreeSet<NodeId>,
    pub roots: BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cut {
    pub members: BTreeSet<NodeId>,
}

/// A valid cut with the members whose outgoing edge crosses it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutInfo {
    pub cut: Cut,
    pub boundary: BTreeSet<NodeId>,
}

/// Per-node alphabets and the exact joint pmf of the sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceModel {
    alphabets: Vec<Vec<String>>,
    pmf: BTreeMap<Vec<u32>, Prob>,
}

impl SourceModel {
    /// `alphabets` and tuple columns follow ascending node id order.
    /// Zero-probability rows are dropped.
    pub fn new(alphabets: Vec<Vec<String>>, pmf: BTreeMap<Vec<u32>, Prob>) -> Result<Self> {
        for (i, a) in alphabets.iter().enumerate() {
            if a.is_empty() {
                return Err(Error::InvalidModel(format!("alphabet of column {i} is empty")));
            }
            let distinct: BTreeSet<&String> = a.iter().collect();
            if distinct.len() != a.len() {
                return Err(Error::InvalidModel(format!("alphabet of column {i} repeats a letter")));
            }
        }
        let mut total = Prob::zero();
        let mut kept = BTreeMap::new();
        for (x, p) in pmf {
            if x.len() != alphabets.len() {
                return Err(Error::InvalidModel(format!("tuple {x:?} has the wrong arity")));
            }
            for (i, &l) in x.iter().enumerate() {
                if l as usize >= alphabets[i].len() {
                    return Err(Error::InvalidModel(format!("tuple {x:?} uses an unknown letter")));
                }
            }
            if p.is_negative() {
                return Err(Error::InvalidModel(format!("negative probability at {x:?}")));
            }
            total += &p;
            if p.is_positive() {
                kept.insert(x, p);
            }
        }
        if !total.is_one() {
            return Err(Error::InvalidModel(format!(
                "probabilities sum to {} instead of 1",
                crate::dist::format_prob(&total)
            )));
        }
        Ok(SourceModel {
            alphabets,
            pmf: kept,
        })
    }

    pub fn alphabets(&self) -> &[Vec<String>] {
        &self.alphabets
    }

    pub fn pmf(&self) -> &BTreeMap<Vec<u32>, Prob> {
        &self.pmf
    }

    pub fn probability(&self, x: &[u32]) -> Prob {
        self.pmf.get(x).cloned().unwrap_or_else(Prob::zero)
    }

    pub fn support(&self) -> impl Iterator<Item = &Vec<u32>> {
        self.pmf.keys()
    }
}

/// The target function on full source tuples.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionTable {
    outputs: BTreeMap<Vec<u32>, u32>,
    alphabet: Vec<String>,
}

impl FunctionTable {
    pub fn new(outputs: BTreeMap<Vec<u32>, u32>, alphabet: Vec<String>) -> Self {
        FunctionTable { outputs, alphabet }
    }

    /// Builds the table by evaluating `f` on every tuple of the product
    /// alphabet; output letters are the `Display` strings of the values.
    pub fn from_fn<T: fmt::Display>(sizes: &[usize], f: impl Fn(&[u32]) -> T) -> Self {
        let mut alphabet: Vec<String> = Vec::new();
        let mut outputs = BTreeMap::new();
        for x in product(sizes) {
            let s = f(&x).to_string();
            let idx = match alphabet.iter().position(|a| a == &s) {
                Some(i) => i,
                None => {
                    alphabet.push(s);
                    alphabet.len() - 1
                }
            };
            outputs.insert(x, idx as u32);
        }
        FunctionTable { outputs, alphabet }
    }

    pub fn value(&self, x: &[u32]) -> Option<u32> {
        self.outputs.get(x).copied()
    }

    pub fn alphabet(&self) -> &[String] {
        &self.alphabet
    }

    pub fn outputs(&self) -> &BTreeMap<Vec<u32>, u32> {
        &self.outputs
    }
}

/// Every tuple of the product alphabet with the given sizes, in
/// lexicographic order.
pub fn product(sizes: &[usize]) -> impl Iterator<Item = Vec<u32>> + '_ {
    let total: usize = sizes.iter().product();
    (0..total).map(move |mut k| {
        let mut x = vec![0u32; sizes.len()];
        for i in (0..sizes.len()).rev() {
            x[i] = (k % sizes[i]) as u32;
            k /= sizes[i];
        }
        x
    })
}

/// Outcome of the Markov property test.
#[derive(Debug, Clone, PartialEq)]
pub enum MarkovVerdict {
    Holds,
    ViolatedAt {
        node: NodeId,
        witness: crate::dist::CiWitness,
    },
}

impl MarkovVerdict {
    pub fn holds(&self) -> bool {
        matches!(self, MarkovVerdict::Holds)
    }
}

/// A complete problem: tree, sources and function.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub tree: RootedTree,
    pub model: SourceModel,
    pub function: FunctionTable,
}

impl Instance {
    pub fn new(tree: RootedTree, model: SourceModel, function: FunctionTable) -> Result<Self> {
        if model.alphabets().len() != tree.len() {
            return Err(Error::InvalidModel(format!(
                "{} alphabets for {} nodes",
                model.alphabets().len(),
                tree.len()
            )));
        }
        for x in model.support() {
            match function.value(x) {
                Some(v) if (v as usize) < function.alphabet().len() => {}
                Some(_) => {
                    return Err(Error::InvalidFunction(format!("output letter out of range at {x:?}")))
                }
                None => {
                    return Err(Error::InvalidFunction(format!(
                        "undefined on positive-probability tuple {x:?}"
                    )))
                }
            }
        }
        Ok(Instance {
            tree,
            model,
            function,
        })
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.model.alphabets().iter().map(Vec::len).collect()
    }

    pub fn letter(&self, u: NodeId, letter: u32) -> Result<&str> {
        let i = self.tree.index_of(u)?;
        self.model.alphabets()[i]
            .get(letter as usize)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidModel(format!("node {u} has no letter #{letter}")))
    }

    pub fn letter_index(&self, u: NodeId, letter: &str) -> Result<u32> {
        let i = self.tree.index_of(u)?;
        self.model.alphabets()[i]
            .iter()
            .position(|a| a == letter)
            .map(|p| p as u32)
            .ok_or_else(|| Error::InvalidModel(format!("node {u} has no letter {letter:?}")))
    }

    /// The sources' joint law as a [`Joint`] over `Source` coordinates.
    pub fn joint(&self) -> Joint {
        Joint::new(
            self.tree.nodes().iter().map(|&u| Coord::Source(u)).collect(),
            self.sizes(),
            self.model
                .pmf()
                .iter()
                .map(|(x, p)| (x.clone(), p.clone()))
                .collect(),
        )
    }

    pub fn source_coords(&self, nodes: &BTreeSet<NodeId>) -> Vec<Coord> {
        nodes.iter().map(|&u| Coord::Source(u)).collect()
    }

    pub fn complement(&self, nodes: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        self.tree
            .nodes()
            .iter()
            .copied()
            .filter(|u| !nodes.contains(u))
            .collect()
    }

    /// Exact marginal of `nodes` (keyed in ascending id order), optionally
    /// conditioned on a partial assignment of letter indices.
    pub fn marginal(
        &self,
        nodes: &BTreeSet<NodeId>,
        given: &BTreeMap<NodeId, u32>,
    ) -> Result<BTreeMap<Vec<u32>, Prob>> {
        let cols: Vec<usize> = nodes
            .iter()
            .map(|&u| self.tree.index_of(u))
            .collect::<Result<_>>()?;
        let cond: Vec<(usize, u32)> = given
            .iter()
            .map(|(&u, &l)| Ok((self.tree.index_of(u)?, l)))
            .collect::<Result<_>>()?;
        let mut out: BTreeMap<Vec<u32>, Prob> = BTreeMap::new();
        let mut mass = Prob::zero();
        for (x, p) in self.model.pmf() {
            if cond.iter().all(|&(c, l)| x[c] == l) {
                mass += p;
                *out.entry(crate::dist::pick(x, &cols)).or_insert_with(Prob::zero) += p;
            }
        }
        if !given.is_empty() {
            if mass.is_zero() {
                return Err(Error::ZeroProbabilityCondition);
            }
            for p in out.values_mut() {
                *p /= &mass;
            }
        }
        Ok(out)
    }

    /// Local Markov test at every node: the sources in the subtrees feeding
    /// `u` and the sources outside `Child(u)` are independent given `X_u`.
    pub fn markov_property_check(&self) -> MarkovVerdict {
        let joint = self.joint();
        for &u in self.tree.nodes() {
            let mut groups: Vec<Vec<Coord>> = self
                .tree
                .incoming(u)
                .expect("own node")
                .into_iter()
                .map(|c| self.source_coords(&self.tree.child(c).expect("own node")))
                .collect();
            let child = self.tree.child(u).expect("own node");
            groups.push(self.source_coords(&self.complement(&child)));
            let verdict = joint
                .conditionally_independent(&groups, &[Coord::Source(u)])
                .expect("source coordinates");
            if let Err(witness) = verdict {
                return MarkovVerdict::ViolatedAt { node: u, witness };
            }
        }
        MarkovVerdict::Holds
    }

    /// Exact test of full mutual independence of the sources.
    pub fn sources_independent(&self) -> std::result::Result<(), crate::dist::CiWitness> {
        let groups: Vec<Vec<Coord>> = self.tree.nodes().iter().map(|&u| vec![Coord::Source(u)]).collect();
        self.joint()
            .conditionally_independent(&groups, &[])
            .expect("source coordinates")
    }
}
