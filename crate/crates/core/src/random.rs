//! Small random instances for property tests and benchmarks.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::dist::Prob;
use crate::model::{product, FunctionTable, Instance, NodeId, RootedTree, SourceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub max_alphabet: usize,
    pub max_outputs: usize,
    /// Largest integer weight; weight 0 creates zero-probability letters.
    pub max_weight: u32,
    pub allow_zero: bool,
}

impl Default for RandomSpec {
    fn default() -> Self {
        RandomSpec {
            min_nodes: 2,
            max_nodes: 5,
            max_alphabet: 3,
            max_outputs: 3,
            max_weight: 3,
            allow_zero: true,
        }
    }
}

/// A uniformly shuffled rooted tree on nodes 1..=n: every node after the
/// first in a random order sends to a random earlier one.
pub fn random_tree<R: Rng>(rng: &mut R, n: usize) -> RootedTree {
    let mut order: Vec<u32> = (1..=n as u32).collect();
    order.shuffle(rng);
    let edges: Vec<(u32, u32)> = (1..n).map(|i| (order[i], order[rng.gen_range(0..i)])).collect();
    RootedTree::from_edges(&edges, order[0]).expect("construction yields a tree")
}

fn weights<R: Rng>(rng: &mut R, n: usize, spec: &RandomSpec) -> Vec<Prob> {
    let low = if spec.allow_zero { 0 } else { 1 };
    let mut w: Vec<u32> = (0..n).map(|_| rng.gen_range(low..=spec.max_weight)).collect();
    if w.iter().all(|&x| x == 0) {
        let i = rng.gen_range(0..n);
        w[i] = 1;
    }
    let total: u32 = w.iter().sum();
    w.into_iter()
        .map(|x| BigRational::new(BigInt::from(x), BigInt::from(total)))
        .collect()
}

fn letters(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn random_function<R: Rng>(rng: &mut R, sizes: &[usize], spec: &RandomSpec) -> FunctionTable {
    let outputs = rng.gen_range(2..=spec.max_outputs.max(2));
    let table: BTreeMap<Vec<u32>, u32> = product(sizes).map(|x| (x, rng.gen_range(0..outputs as u32))).collect();
    FunctionTable::new(table, letters(outputs))
}

fn random_shape<R: Rng>(rng: &mut R, spec: &RandomSpec) -> (RootedTree, Vec<usize>) {
    let n = rng.gen_range(spec.min_nodes..=spec.max_nodes);
    let tree = random_tree(rng, n);
    let sizes = (0..n).map(|_| rng.gen_range(1..=spec.max_alphabet)).collect();
    (tree, sizes)
}

/// p(x) = p(x_r) * prod over non-root u of p(x_u | x_{u_out}), with a random
/// function; such sources satisfy the Markov property.
pub fn random_markov_instance<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Instance {
    let (tree, sizes) = random_shape(rng, spec);
    let idx = |u: NodeId| tree.index_of(u).expect("tree node");
    let root = idx(tree.root());
    let mut root_law = weights(rng, sizes[root], spec);
    // Kernel per sender: one weight vector per letter of its out-neighbour.
    let mut kernels: BTreeMap<usize, (usize, Vec<Vec<Prob>>)> = BTreeMap::new();
    for u in tree.senders() {
        let out = idx(tree.out_of(u).expect("tree node").expect("sender"));
        let rows = (0..sizes[out]).map(|_| weights(rng, sizes[idx(u)], spec)).collect();
        kernels.insert(idx(u), (out, rows));
    }
    // Keep at least one positive row at the root so the pmf is nonempty.
    if root_law.iter().all(Zero::is_zero) {
        root_law[0] = Prob::one();
    }
    let mut pmf = BTreeMap::new();
    for x in product(&sizes) {
        let mut p = root_law[x[root] as usize].clone();
        for (&u, (out, rows)) in &kernels {
            if p.is_zero() {
                break;
            }
            p *= &rows[x[*out] as usize][x[u] as usize];
        }
        if !p.is_zero() {
            pmf.insert(x, p);
        }
    }
    let function = random_function(rng, &sizes, spec);
    let model = SourceModel::new(sizes.iter().map(|&s| letters(s)).collect(), pmf).expect("product law sums to 1");
    Instance::new(tree, model, function).expect("random instance is well formed")
}

/// Independent sources with random marginals.
pub fn random_independent_instance<R: Rng>(rng: &mut R, spec: &RandomSpec) -> Instance {
    let (tree, sizes) = random_shape(rng, spec);
    let marginals: Vec<Vec<Prob>> = sizes.iter().map(|&s| weights(rng, s, spec)).collect();
    let mut pmf = BTreeMap::new();
    for x in product(&sizes) {
        let p = x
            .iter()
            .enumerate()
            .fold(Prob::one(), |acc, (i, &a)| acc * &marginals[i][a as usize]);
        if !p.is_zero() {
            pmf.insert(x, p);
        }
    }
    let function = random_function(rng, &sizes, spec);
    let model = SourceModel::new(sizes.iter().map(|&s| letters(s)).collect(), pmf).expect("product law sums to 1");
    Instance::new(tree, model, function).expect("random instance is well formed")
}
