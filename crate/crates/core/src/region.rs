//! Rate bounds: the cut-set outer bound, the per-node region under the
//! Markov property, the closed form for independent sources, construction
//! and validation of auxiliary message families, and evaluation of the inner
//! bound a family induces.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::chargraph::{
    build_char_graph, check_partition_within, maximal_independent_sets, CharGraph, CompositeSpec,
    PartitionVerdict, DEFAULT_MAX_VERTICES,
};
use crate::dist::{pick, prob_from_f64, to_f64, CiWitness, Coord, Joint, Prob};
use crate::entropy::{graph_entropy, EntropyProblem, EntropySolution, SolverConfig};
use crate::error::{Error, Result};
use crate::model::{Instance, MarkovVerdict, NodeId, Ordering};

pub const DEFAULT_MAX_SUPPORT: usize = 1_000_000;
pub const DEFAULT_MAX_ORDERINGS: usize = 5_000;

/// Kernel probabilities are rounded to multiples of 2^-KERNEL_BITS.
const KERNEL_BITS: u32 = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOptions {
    pub max_vertices: usize,
    pub max_support: usize,
    pub max_orderings: usize,
    pub solver: SolverConfig,
}

impl Default for RegionOptions {
    fn default() -> Self {
        RegionOptions {
            max_vertices: DEFAULT_MAX_VERTICES,
            max_support: DEFAULT_MAX_SUPPORT,
            max_orderings: DEFAULT_MAX_ORDERINGS,
            solver: SolverConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    CutSet,
    MarkovRegion,
    IndependentSources,
    InnerBoundEval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutBound {
    pub cut: Vec<NodeId>,
    pub boundary: Vec<NodeId>,
    pub bits: f64,
    /// Solver gap: the true graph entropy lies in [bits - certificate, bits].
    pub certificate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub node_bounds: BTreeMap<NodeId, f64>,
    pub cut_bounds: Vec<CutBound>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub certificates: BTreeMap<NodeId, f64>,
}

impl RateReport {
    fn new(provenance: Provenance) -> Self {
        RateReport {
            node_bounds: BTreeMap::new(),
            cut_bounds: Vec::new(),
            provenance,
            certificates: BTreeMap::new(),
        }
    }

    /// Checks the rate point `rates` against every cut inequality, returning
    /// the worst shortfall (negative when some inequality fails).
    pub fn cut_slack(&self, rates: &BTreeMap<NodeId, f64>) -> f64 {
        self.cut_bounds
            .iter()
            .map(|c| c.boundary.iter().map(|v| rates.get(v).copied().unwrap_or(0.0)).sum::<f64>() - c.bits)
            .fold(f64::INFINITY, f64::min)
    }
}

fn clamp(bits: f64) -> f64 {
    if bits < 0.0 && bits > -1e-9 {
        0.0
    } else {
        bits
    }
}

/// The function value on every row of a joint that contains all sources.
pub fn function_values(inst: &Instance, joint: &Joint) -> Result<Vec<u32>> {
    let cols = joint.columns(&inst.source_coords(&inst.tree.nodes().iter().copied().collect()))?;
    joint
        .rows()
        .iter()
        .map(|(x, _)| {
            let s = pick(x, &cols);
            inst.function
                .value(&s)
                .ok_or_else(|| Error::InvalidFunction(format!("undefined on {s:?}")))
        })
        .collect()
}

/// `G_{L|K}` on a joint that contains every source.
pub fn conditional_graph(inst: &Instance, joint: &Joint, spec: &CompositeSpec, max_vertices: usize) -> Result<CharGraph> {
    let outputs = function_values(inst, joint)?;
    build_char_graph(joint, &outputs, spec, max_vertices)
}

/// A solved graph entropy instance with everything needed to inspect it.
#[derive(Debug, Clone)]
pub struct GraphEntropyResult {
    pub graph: CharGraph,
    pub problem: EntropyProblem,
    pub solution: EntropySolution,
}

/// H(G_{L|K}) on `joint`, minimized over the maximal independent sets.
pub fn graph_entropy_of(inst: &Instance, joint: &Joint, spec: &CompositeSpec, opts: &RegionOptions) -> Result<GraphEntropyResult> {
    let graph = conditional_graph(inst, joint, spec, opts.max_vertices)?;
    let family = maximal_independent_sets(&graph, opts.max_vertices)?;
    let problem = EntropyProblem::new(&graph, &family, joint, spec)?;
    let solution = graph_entropy(&problem, &opts.solver)?;
    Ok(GraphEntropyResult {
        graph,
        problem,
        solution,
    })
}

fn sources(nodes: &BTreeSet<NodeId>) -> Vec<Coord> {
    nodes.iter().map(|&u| Coord::Source(u)).collect()
}

fn messages(nodes: &BTreeSet<NodeId>) -> Vec<Coord> {
    nodes.iter().map(|&u| Coord::Message(u)).collect()
}

/// The spec of `G_{X_Child(u) | X_Child(u)^c}`.
pub fn child_spec(inst: &Instance, u: NodeId) -> Result<CompositeSpec> {
    let child = inst.tree.child(u)?;
    CompositeSpec::new(sources(&child), sources(&inst.complement(&child)))
}

/// Sum over boundary rates of a valid cut >= H(G_{X_S | X_{S^c}}).
pub fn cutset_outer_bound(inst: &Instance, opts: &RegionOptions) -> Result<RateReport> {
    let joint = inst.joint();
    let mut report = RateReport::new(Provenance::CutSet);
    for info in inst.tree.enumerate_valid_cuts() {
        let spec = CompositeSpec::new(sources(&info.cut.members), sources(&inst.complement(&info.cut.members)))?;
        let res = graph_entropy_of(inst, &joint, &spec, opts)?;
        report.cut_bounds.push(CutBound {
            cut: info.cut.members.iter().copied().collect(),
            boundary: info.boundary.iter().copied().collect(),
            bits: clamp(res.solution.value),
            certificate: res.solution.certificate,
        });
    }
    Ok(report)
}

fn require_markov(inst: &Instance) -> Result<()> {
    match inst.markov_property_check() {
        MarkovVerdict::Holds => Ok(()),
        MarkovVerdict::ViolatedAt { node, witness } => Err(Error::MarkovViolated {
            node,
            detail: witness.to_string(),
        }),
    }
}

/// R_u >= H(G_{X_Child(u) | X_Child(u)^c}) for every non-root u; only
/// claimed under the Markov property.
pub fn markov_rate_region(inst: &Instance, opts: &RegionOptions) -> Result<RateReport> {
    require_markov(inst)?;
    let joint = inst.joint();
    let mut report = RateReport::new(Provenance::MarkovRegion);
    for u in inst.tree.senders() {
        let res = graph_entropy_of(inst, &joint, &child_spec(inst, u)?, opts)?;
        report.node_bounds.insert(u, clamp(res.solution.value));
        report.certificates.insert(u, res.solution.certificate);
    }
    Ok(report)
}

/// The deterministic message of a node under independent sources: the block
/// of the support partition containing x_Child(u).
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionMessage {
    pub node: NodeId,
    pub coords: Vec<Coord>,
    /// Blocks as lists of positive-probability composite letters.
    pub blocks: Vec<Vec<Vec<u32>>>,
    pub probabilities: Vec<Prob>,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndependentRegion {
    pub report: RateReport,
    pub messages: BTreeMap<NodeId, PartitionMessage>,
}

/// R_u >= H(W*_u) where W*_u is the block of the maximal-independent-set
/// partition of `G_{X_Child(u)|X_Child(u)^c}` containing x_Child(u).
pub fn independent_sources_region(inst: &Instance, opts: &RegionOptions) -> Result<IndependentRegion> {
    if let Err(w) = inst.sources_independent() {
        return Err(Error::NotIndependent(w.to_string()));
    }
    let joint = inst.joint();
    let mut report = RateReport::new(Provenance::IndependentSources);
    let mut out = BTreeMap::new();
    for u in inst.tree.senders() {
        let spec = child_spec(inst, u)?;
        let g = conditional_graph(inst, &joint, &spec, opts.max_vertices)?;
        let fam = maximal_independent_sets(&g, opts.max_vertices)?;
        let marginal = joint.marginal(&spec.l)?;
        let support: Vec<usize> = marginal.keys().map(|l| g.vertex_index(l)).collect();
        match check_partition_within(&fam, &support) {
            PartitionVerdict::Partition => {}
            PartitionVerdict::Overlap { vertex, .. } => return Err(Error::PartitionOverlap { vertex }),
            PartitionVerdict::Uncovered(v) => return Err(Error::UncoveredVertex(v)),
        }
        let mut blocks = Vec::new();
        let mut probabilities = Vec::new();
        for set in &fam.sets {
            let mut letters = Vec::new();
            let mut mass = Prob::zero();
            for &v in set {
                let l = g.vertex_letters(v);
                if let Some(p) = marginal.get(&l) {
                    mass += p;
                    letters.push(l);
                }
            }
            if !letters.is_empty() {
                blocks.push(letters);
                probabilities.push(mass);
            }
        }
        let entropy = crate::dist::entropy_bits(probabilities.iter());
        report.node_bounds.insert(u, entropy);
        out.insert(
            u,
            PartitionMessage {
                node: u,
                coords: spec.l.clone(),
                blocks,
                probabilities,
                entropy,
            },
        );
    }
    Ok(IndependentRegion { report, messages: out })
}

/// The message law of one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeKernel {
    pub node: NodeId,
    /// Coordinates the message may depend on. The first `home` ones are
    /// (X_u, W_In(u)); anything after that is extra (and makes the family
    /// violate the local Markov conditions).
    pub inputs: Vec<Coord>,
    pub home: usize,
    /// Message alphabet: each message is a set of composite letters over the
    /// home coordinates, sorted.
    pub messages: Vec<Vec<Vec<u32>>>,
    /// Input letters -> (message index, probability), for every input
    /// context that occurs with positive probability.
    pub rows: BTreeMap<Vec<u32>, Vec<(usize, Prob)>>,
}

impl NodeKernel {
    pub fn is_deterministic(&self) -> bool {
        self.rows.values().all(|r| r.iter().filter(|(_, p)| !p.is_zero()).count() == 1)
    }

    pub fn home_coords(&self) -> &[Coord] {
        &self.inputs[..self.home]
    }
}

/// The message variables W_u of every non-root node.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxFamily {
    pub ordering: Ordering,
    pub kernels: BTreeMap<NodeId, NodeKernel>,
}

/// (X_u, W_In(u)).
pub fn home_coords(inst: &Instance, u: NodeId) -> Result<Vec<Coord>> {
    let mut c = vec![Coord::Source(u)];
    c.extend(inst.tree.incoming(u)?.into_iter().map(Coord::Message));
    Ok(c)
}

impl AuxFamily {
    pub fn kernel(&self, u: NodeId) -> Result<&NodeKernel> {
        self.kernels
            .get(&u)
            .ok_or_else(|| Error::InvalidFamily(format!("no message law for node {u}")))
    }

    pub fn is_deterministic(&self) -> bool {
        self.kernels.values().all(NodeKernel::is_deterministic)
    }

    /// Checks that every non-root node has a kernel whose shape fits the
    /// tree and whose rows are probability vectors.
    pub fn check_shape(&self, inst: &Instance) -> Result<()> {
        self.ordering.check(&inst.tree)?;
        for u in inst.tree.senders() {
            let k = self.kernel(u)?;
            let home = home_coords(inst, u)?;
            if k.home != home.len() || k.inputs[..k.home] != home[..] {
                return Err(Error::InvalidFamily(format!("node {u}: inputs must start with (X_u, W_In(u))")));
            }
            for (ctx, row) in &k.rows {
                if ctx.len() != k.inputs.len() {
                    return Err(Error::InvalidFamily(format!("node {u}: context {ctx:?} has the wrong arity")));
                }
                let mut total = Prob::zero();
                for (m, p) in row {
                    if *m >= k.messages.len() {
                        return Err(Error::InvalidFamily(format!("node {u}: message #{m} does not exist")));
                    }
                    total += p;
                }
                if !total.is_one() {
                    return Err(Error::InvalidFamily(format!("node {u}: row {ctx:?} does not sum to 1")));
                }
            }
        }
        if self.kernels.contains_key(&inst.tree.root()) {
            return Err(Error::InvalidFamily("the root sends no message".into()));
        }
        Ok(())
    }

    /// The exact joint law of (X_V, W), built message by message in the
    /// family's ordering.
    pub fn compose(&self, inst: &Instance, guard: usize) -> Result<Joint> {
        self.check_shape(inst)?;
        let mut joint = inst.joint();
        for &u in self.ordering.sequence() {
            if u == inst.tree.root() {
                continue;
            }
            joint = extend_with_kernel(&joint, self.kernel(u)?, guard)?;
        }
        Ok(joint)
    }

    /// Every node forwards its whole observation (X_u, W_In(u)) as a
    /// singleton message.
    pub fn forwarding(inst: &Instance, ord: &Ordering, guard: usize) -> Result<Self> {
        let mut joint = inst.joint();
        let mut kernels = BTreeMap::new();
        for &u in ord.sequence() {
            if u == inst.tree.root() {
                continue;
            }
            let inputs = home_coords(inst, u)?;
            let letters: Vec<Vec<u32>> = joint.marginal(&inputs)?.into_keys().collect();
            let kernel = NodeKernel {
                node: u,
                home: inputs.len(),
                inputs,
                messages: letters.iter().map(|l| vec![l.clone()]).collect(),
                rows: letters
                    .iter()
                    .enumerate()
                    .map(|(i, l)| (l.clone(), vec![(i, Prob::one())]))
                    .collect(),
            };
            joint = extend_with_kernel(&joint, &kernel, guard)?;
            kernels.insert(u, kernel);
        }
        Ok(AuxFamily {
            ordering: ord.clone(),
            kernels,
        })
    }
}

fn extend_with_kernel(joint: &Joint, k: &NodeKernel, guard: usize) -> Result<Joint> {
    let cols = joint.columns(&k.inputs)?;
    joint.extend_with(Coord::Message(k.node), k.messages.len(), guard, |row| {
        let ctx = pick(row, &cols);
        k.rows
            .get(&ctx)
            .map(|r| r.iter().map(|(m, p)| (*m as u32, p.clone())).collect())
            .ok_or_else(|| {
                Error::InvalidFamily(format!("node {} has no message law for context {ctx:?}", k.node))
            })
    })
}

/// The spec of the stage graph G_{X_u, W_In(u) | X_Sup(u), W_Roots(u)}.
pub fn stage_spec(inst: &Instance, ord: &Ordering, u: NodeId) -> Result<CompositeSpec> {
    let sets = inst.tree.ordering_sets(ord, u)?;
    let mut k = sources(&sets.sup);
    k.extend(messages(&sets.roots));
    CompositeSpec::new(home_coords(inst, u)?, k)
}

/// Rounds a probability row to exact dyadic rationals summing to one.
fn rationalize(row: &[(usize, f64)]) -> Vec<(usize, Prob)> {
    let mut out: Vec<(usize, Prob)> = row
        .iter()
        .map(|&(m, p)| (m, prob_from_f64(p, KERNEL_BITS)))
        .filter(|(_, p)| !p.is_zero())
        .collect();
    let total: Prob = out.iter().map(|(_, p)| p.clone()).sum();
    let top = (0..out.len())
        .max_by(|&a, &b| out[a].1.cmp(&out[b].1))
        .expect("a row keeps its largest entry");
    out[top].1 += Prob::one() - total;
    out
}

/// Per-node stage optimum recorded while building a family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub node: NodeId,
    pub bits: f64,
    pub certificate: f64,
    pub maximal_sets: usize,
    pub deterministic: bool,
}

/// Builds W node by node in `ord`. At each non-root u the stage graph is
/// built on the joint law of the sources and the messages already chosen;
/// W_u is the kernel p(w | x_u, w_In(u)) over its maximal independent sets
/// that minimizes I(X_u, W_In(u); W_u | X_Sup(u), W_Roots(u)).
pub fn build_aux_family(inst: &Instance, ord: &Ordering, opts: &RegionOptions) -> Result<(AuxFamily, Vec<StageRecord>)> {
    require_markov(inst)?;
    ord.check(&inst.tree)?;
    let mut joint = inst.joint();
    let mut kernels = BTreeMap::new();
    let mut records = Vec::new();
    for &u in ord.sequence() {
        if u == inst.tree.root() {
            continue;
        }
        let spec = stage_spec(inst, ord, u)?;
        let res = graph_entropy_of(inst, &joint, &spec, opts)?;
        let sets = res.problem.sets();

        let mut used: BTreeSet<usize> = BTreeSet::new();
        let mut float_rows: BTreeMap<Vec<u32>, Vec<(usize, f64)>> = BTreeMap::new();
        for &l in res.problem.active_letters() {
            let row: Vec<(usize, f64)> = (0..sets.len())
                .map(|v| (v, res.solution.assignment[l][v]))
                .filter(|&(_, p)| p > 0.0)
                .collect();
            float_rows.insert(res.graph.vertex_letters(l), row);
        }
        let mut rows = BTreeMap::new();
        for (ctx, row) in float_rows {
            let exact = rationalize(&row);
            used.extend(exact.iter().map(|(m, _)| *m));
            rows.insert(ctx, exact);
        }
        let index: BTreeMap<usize, usize> = used.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        for row in rows.values_mut() {
            for (m, _) in row.iter_mut() {
                *m = index[m];
            }
        }
        let kernel = NodeKernel {
            node: u,
            home: spec.l.len(),
            inputs: spec.l.clone(),
            messages: used
                .iter()
                .map(|&s| sets[s].iter().map(|&v| res.graph.vertex_letters(v)).collect())
                .collect(),
            rows,
        };
        joint = extend_with_kernel(&joint, &kernel, opts.max_support)?;
        records.push(StageRecord {
            node: u,
            bits: res.solution.value,
            certificate: res.solution.certificate,
            maximal_sets: sets.len(),
            deterministic: kernel.is_deterministic(),
        });
        kernels.insert(u, kernel);
    }
    Ok((
        AuxFamily {
            ordering: ord.clone(),
            kernels,
        },
        records,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    /// A positive-probability observation outside the message it maps to.
    Containment,
    /// A used message that is not independent in the stage graph.
    NotIndependent,
    /// The stage graph itself is undefined: f is not determined.
    Undetermined,
    /// W_u depends on more than (X_u, W_In(u)) given the rest of the tree.
    LocalMarkov,
    /// The ordering-specific form of the Markov conditions fails.
    OrderingMarkov,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub node: NodeId,
    pub ordering: Ordering,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub orderings_checked: usize,
    pub violations: Vec<Violation>,
}

impl ValidityReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn support_violations(inst: &Instance, fam: &AuxFamily, joint: &Joint, ord: &Ordering, opts: &RegionOptions) -> Result<Vec<Violation>> {
    let mut out = Vec::new();
    let outputs = function_values(inst, joint)?;
    for u in inst.tree.senders() {
        let k = fam.kernel(u)?;
        let spec = stage_spec(inst, ord, u)?;
        let violation = |kind, detail: String| Violation {
            kind,
            node: u,
            ordering: ord.clone(),
            detail,
        };
        let g = match build_char_graph(joint, &outputs, &spec, opts.max_vertices) {
            Ok(g) => g,
            Err(Error::NotDetermined(d)) => {
                out.push(violation(ViolationKind::Undetermined, d));
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut cols = spec.l.clone();
        cols.push(Coord::Message(u));
        let mut used = BTreeSet::new();
        for key in joint.marginal(&cols)?.keys() {
            let (l, w) = key.split_at(spec.l.len());
            let m = w[0] as usize;
            used.insert(m);
            if !k.messages[m].iter().any(|x| x[..] == *l) {
                out.push(violation(
                    ViolationKind::Containment,
                    format!("observation {l:?} is sent as message #{m} which does not contain it"),
                ));
            }
        }
        for m in used {
            let vertices: Vec<usize> = k.messages[m].iter().map(|x| g.vertex_index(x)).collect();
            if !g.is_independent(&vertices) {
                out.push(violation(
                    ViolationKind::NotIndependent,
                    format!("message #{m} joins two adjacent letters of the stage graph"),
                ));
            }
        }
    }
    Ok(out)
}

fn markov_violation(joint: &Joint, u: NodeId, home: &[Coord], rest: Vec<Coord>) -> Result<Option<CiWitness>> {
    let groups = vec![vec![Coord::Message(u)], rest];
    Ok(joint.conditionally_independent(&groups, home)?.err())
}

/// Checks a family under `ord`: containment and independence against the
/// stage graphs of `ord`, the local Markov chains, and the ordering-specific
/// Markov chains for every enumerated ordering.
pub fn check_aux_validity(inst: &Instance, fam: &AuxFamily, ord: &Ordering, opts: &RegionOptions) -> Result<ValidityReport> {
    let joint = fam.compose(inst, opts.max_support)?;
    ord.check(&inst.tree)?;
    let mut violations = support_violations(inst, fam, &joint, ord, opts)?;

    for u in inst.tree.senders() {
        let home = home_coords(inst, u)?;
        let child = inst.tree.child(u)?;
        let mut rest = sources(&inst.complement(&child));
        rest.extend(messages(&inst.tree.strangers(u)?));
        if let Some(w) = markov_violation(&joint, u, &home, rest)? {
            violations.push(Violation {
                kind: ViolationKind::LocalMarkov,
                node: u,
                ordering: ord.clone(),
                detail: w.to_string(),
            });
        }
    }

    // The chain at u only depends on Sub(u) \ Child(u), which many orderings share.
    let mut memo: BTreeMap<(NodeId, BTreeSet<NodeId>), Option<CiWitness>> = BTreeMap::new();
    let orderings = inst.tree.enumerate_orderings(Some(opts.max_orderings));
    for other in &orderings {
        for u in inst.tree.senders() {
            let child = inst.tree.child(u)?;
            let extra: BTreeSet<NodeId> = inst.tree.ordering_sets(other, u)?.sub.difference(&child).copied().collect();
            let key = (u, extra);
            if !memo.contains_key(&key) {
                let mut rest = sources(&inst.complement(&child));
                rest.extend(messages(&key.1));
                let verdict = markov_violation(&joint, u, &home_coords(inst, u)?, rest)?;
                memo.insert(key.clone(), verdict);
            }
            if let Some(w) = memo[&key].clone() {
                violations.push(Violation {
                    kind: ViolationKind::OrderingMarkov,
                    node: u,
                    ordering: other.clone(),
                    detail: w.to_string(),
                });
            }
        }
    }
    Ok(ValidityReport {
        orderings_checked: orderings.len(),
        violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintForm {
    /// Sum over S of R_v >= I(X_S, W_In(S); W_S | X_u, W_{In(u) \ S}).
    General,
    /// R_v >= I(X_v, W_In(v); W_v | X_{v_out}), valid under the Markov property.
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    /// The receiving node.
    pub receiver: NodeId,
    pub senders: Vec<NodeId>,
    pub bits: f64,
    pub form: ConstraintForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerBound {
    pub constraints: Vec<Constraint>,
    pub markov_holds: bool,
}

impl InnerBound {
    /// The reduced per-node values, keyed by sender.
    pub fn reduced(&self) -> BTreeMap<NodeId, f64> {
        self.constraints
            .iter()
            .filter(|c| c.form == ConstraintForm::Reduced)
            .map(|c| (c.senders[0], c.bits))
            .collect()
    }

    pub fn report(&self) -> RateReport {
        let mut r = RateReport::new(Provenance::InnerBoundEval);
        r.node_bounds = self.reduced();
        r
    }
}

/// Evaluates the rate constraints a family induces from the exact joint law
/// of sources and messages.
pub fn evaluate_inner_bound(inst: &Instance, fam: &AuxFamily, opts: &RegionOptions) -> Result<InnerBound> {
    let joint = fam.compose(inst, opts.max_support)?;
    let markov_holds = inst.markov_property_check().holds();
    let mut constraints = Vec::new();
    for &u in inst.tree.nodes() {
        let ins = inst.tree.incoming(u)?;
        for mask in 1u32..(1 << ins.len()) {
            let s: Vec<NodeId> = (0..ins.len()).filter(|&i| mask >> i & 1 == 1).map(|i| ins[i]).collect();
            let s_prime: Vec<NodeId> = (0..ins.len()).filter(|&i| mask >> i & 1 == 0).map(|i| ins[i]).collect();
            let mut a: Vec<Coord> = s.iter().map(|&v| Coord::Source(v)).collect();
            for &v in &s {
                a.extend(inst.tree.incoming(v)?.into_iter().map(Coord::Message));
            }
            let b: Vec<Coord> = s.iter().map(|&v| Coord::Message(v)).collect();
            let mut c = vec![Coord::Source(u)];
            c.extend(s_prime.iter().map(|&v| Coord::Message(v)));
            constraints.push(Constraint {
                receiver: u,
                senders: s,
                bits: clamp(joint.mutual_information(&a, &b, &c)?),
                form: ConstraintForm::General,
            });
        }
    }
    if markov_holds {
        for v in inst.tree.senders() {
            let out = inst.tree.out_of(v)?.expect("senders have an out-neighbour");
            let bits = joint.mutual_information(&home_coords(inst, v)?, &[Coord::Message(v)], &[Coord::Source(out)])?;
            constraints.push(Constraint {
                receiver: out,
                senders: vec![v],
                bits: clamp(bits),
                form: ConstraintForm::Reduced,
            });
        }
    }
    Ok(InnerBound {
        constraints,
        markov_holds,
    })
}

/// The subtree pairs (X_Child(c), W_Child(c)) for c in In(u), together with
/// (X_Child(u)^c, W_{Sub(u) \ Child(u)}), are independent given X_u.
pub fn subtree_independence(inst: &Instance, fam: &AuxFamily, joint: &Joint, u: NodeId) -> Result<Option<CiWitness>> {
    let root = inst.tree.root();
    let non_root = |s: &BTreeSet<NodeId>| -> BTreeSet<NodeId> { s.iter().copied().filter(|&v| v != root).collect() };
    let mut groups = Vec::new();
    for c in inst.tree.incoming(u)? {
        let child = inst.tree.child(c)?;
        let mut g = sources(&child);
        g.extend(messages(&non_root(&child)));
        groups.push(g);
    }
    let child = inst.tree.child(u)?;
    let sub = inst.tree.ordering_sets(&fam.ordering, u)?.sub;
    let mut rest = sources(&inst.complement(&child));
    rest.extend(messages(&sub.difference(&child).copied().collect()));
    groups.push(rest);
    Ok(joint.conditionally_independent(&groups, &[Coord::Source(u)])?.err())
}

/// `G_{X_Child(k) | X_Sup(k), W_Roots(k)}` on the composed joint.
pub fn child_graph_given_roots(inst: &Instance, fam: &AuxFamily, joint: &Joint, k: NodeId, max_vertices: usize) -> Result<CharGraph> {
    let sets = inst.tree.ordering_sets(&fam.ordering, k)?;
    let mut side = sources(&sets.sup);
    side.extend(messages(&sets.roots));
    let spec = CompositeSpec::new(sources(&inst.tree.child(k)?), side)?;
    conditional_graph(inst, joint, &spec, max_vertices)
}

/// Converts a float kernel row to the probabilities it was rounded to.
pub fn kernel_row_f64(row: &[(usize, Prob)]) -> Vec<(usize, f64)> {
    row.iter().map(|(m, p)| (*m, to_f64(p))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FunctionTable, RootedTree, SourceModel};
    use num_rational::BigRational;

    fn r(n: i64, d: i64) -> Prob {
        BigRational::new(n.into(), d.into())
    }

    fn letters(n: usize) -> Vec<String> {
        (0..n).map(|i| i.to_string()).collect()
    }

    /// Node 1 holds X, root 2 holds Y, uniform over distinct pairs in 1..=4,
    /// f = [x > y].
    pub(crate) fn off_diagonal() -> Instance {
        let tree = RootedTree::from_edges(&[(1, 2)], 2).unwrap();
        let mut pmf = BTreeMap::new();
        for x in 0..4u32 {
            for y in 0..4u32 {
                if x != y {
                    pmf.insert(vec![x, y], r(1, 12));
                }
            }
        }
        let alpha: Vec<String> = (1..=4).map(|i| i.to_string()).collect();
        let model = SourceModel::new(vec![alpha.clone(), alpha], pmf).unwrap();
        let f = FunctionTable::from_fn(&[4, 4], |x| u32::from(x[0] > x[1]));
        Instance::new(tree, model, f).unwrap()
    }

    pub(crate) fn xor_star() -> Instance {
        let tree = RootedTree::from_edges(&[(1, 3), (2, 3)], 3).unwrap();
        let mut pmf = BTreeMap::new();
        for a in 0..2u32 {
            for b in 0..2u32 {
                pmf.insert(vec![a, b, 0], r(1, 4));
            }
        }
        let model = SourceModel::new(vec![letters(2), letters(2), letters(1)], pmf).unwrap();
        let f = FunctionTable::from_fn(&[2, 2, 1], |x| x[0] ^ x[1]);
        Instance::new(tree, model, f).unwrap()
    }

    fn ternary_path() -> Instance {
        let tree = RootedTree::from_edges(&[(1, 2), (2, 3)], 3).unwrap();
        let mut pmf = BTreeMap::new();
        for a in 0..3u32 {
            pmf.insert(vec![a, 0, 0], r(1, 3));
        }
        let model = SourceModel::new(vec![letters(3), letters(1), letters(1)], pmf).unwrap();
        let f = FunctionTable::from_fn(&[3, 1, 1], |x| x[0] % 2);
        Instance::new(tree, model, f).unwrap()
    }

    fn opts() -> RegionOptions {
        RegionOptions::default()
    }

    #[test]
    fn off_diagonal_single_edge_bounds() {
        let inst = off_diagonal();
        let cut = cutset_outer_bound(&inst, &opts()).unwrap();
        assert_eq!(cut.cut_bounds.len(), 1);
        assert!((cut.cut_bounds[0].bits - 0.9183).abs() < 1e-3);
        let region = markov_rate_region(&inst, &opts()).unwrap();
        assert!((region.node_bounds[&NodeId(1)] - 0.9183).abs() < 1e-3);
    }

    #[test]
    fn off_diagonal_family_uses_the_two_outer_blocks() {
        let inst = off_diagonal();
        let ord = inst.tree.canonical_ordering();
        let (fam, _) = build_aux_family(&inst, &ord, &opts()).unwrap();
        let k = fam.kernel(NodeId(1)).unwrap();
        assert_eq!(k.messages, vec![vec![vec![0], vec![1]], vec![vec![2], vec![3]]]);
        assert!(k.is_deterministic());
        let inner = evaluate_inner_bound(&inst, &fam, &opts()).unwrap();
        assert!((inner.reduced()[&NodeId(1)] - 0.9183).abs() < 1e-3);
        assert!(check_aux_validity(&inst, &fam, &ord, &opts()).unwrap().is_ok());
    }

    #[test]
    fn xor_star_everything_is_one_bit() {
        let inst = xor_star();
        let cut = cutset_outer_bound(&inst, &opts()).unwrap();
        let bits: Vec<f64> = cut.cut_bounds.iter().map(|c| c.bits).collect();
        assert!((bits[0] - 1.0).abs() < 1e-9 && (bits[1] - 1.0).abs() < 1e-9);
        let region = markov_rate_region(&inst, &opts()).unwrap();
        assert!((region.node_bounds[&NodeId(1)] - 1.0).abs() < 1e-9);
        assert!((region.node_bounds[&NodeId(2)] - 1.0).abs() < 1e-9);
        let ind = independent_sources_region(&inst, &opts()).unwrap();
        assert_eq!(ind.messages[&NodeId(1)].blocks, vec![vec![vec![0]], vec![vec![1]]]);
        assert!((ind.report.node_bounds[&NodeId(2)] - 1.0).abs() < 1e-12);

        let (fam, _) = build_aux_family(&inst, &inst.tree.canonical_ordering(), &opts()).unwrap();
        assert_eq!(fam.kernel(NodeId(1)).unwrap().messages, vec![vec![vec![0]], vec![vec![1]]]);
    }

    #[test]
    fn forwarding_family_on_xor_star() {
        let inst = xor_star();
        let ord = inst.tree.canonical_ordering();
        let fam = AuxFamily::forwarding(&inst, &ord, 1000).unwrap();
        let inner = evaluate_inner_bound(&inst, &fam, &opts()).unwrap();
        let general: Vec<(Vec<NodeId>, f64)> = inner
            .constraints
            .iter()
            .filter(|c| c.form == ConstraintForm::General)
            .map(|c| (c.senders.clone(), c.bits))
            .collect();
        assert_eq!(general.len(), 3);
        for (s, bits) in general {
            assert!((bits - s.len() as f64).abs() < 1e-12, "{s:?} {bits}");
        }
    }

    #[test]
    fn constant_function_needs_nothing() {
        let tree = RootedTree::from_edges(&[(1, 2), (2, 3)], 3).unwrap();
        let mut pmf = BTreeMap::new();
        for a in 0..2u32 {
            for b in 0..2u32 {
                pmf.insert(vec![a, b, 0], r(1, 4));
            }
        }
        let model = SourceModel::new(vec![letters(2), letters(2), letters(1)], pmf).unwrap();
        let inst = Instance::new(tree, model, FunctionTable::from_fn(&[2, 2, 1], |_| 7)).unwrap();
        for c in cutset_outer_bound(&inst, &opts()).unwrap().cut_bounds {
            assert_eq!(c.bits, 0.0);
        }
        let (fam, _) = build_aux_family(&inst, &inst.tree.canonical_ordering(), &opts()).unwrap();
        for k in fam.kernels.values() {
            assert_eq!(k.messages.len(), 1);
        }
        for c in evaluate_inner_bound(&inst, &fam, &opts()).unwrap().constraints {
            assert!(c.bits.abs() < 1e-12);
        }
    }

    #[test]
    fn ternary_parity_partition() {
        let inst = ternary_path();
        let ind = independent_sources_region(&inst, &opts()).unwrap();
        let m = &ind.messages[&NodeId(1)];
        assert_eq!(m.blocks, vec![vec![vec![0], vec![2]], vec![vec![1]]]);
        let h = -(2.0f64 / 3.0) * (2.0f64 / 3.0).log2() - (1.0f64 / 3.0) * (1.0f64 / 3.0).log2();
        assert!((m.entropy - h).abs() < 1e-12);
        let region = markov_rate_region(&inst, &opts()).unwrap();
        assert!((region.node_bounds[&NodeId(1)] - h).abs() < 1e-9);
        assert!((region.node_bounds[&NodeId(2)] - h).abs() < 1e-9);
    }

    #[test]
    fn region_refuses_without_markov_property() {
        let tree = RootedTree::from_edges(&[(1, 3), (2, 3)], 3).unwrap();
        let mut pmf = BTreeMap::new();
        pmf.insert(vec![0, 0, 0], r(1, 2));
        pmf.insert(vec![1, 1, 0], r(1, 2));
        let model = SourceModel::new(vec![letters(2), letters(2), letters(1)], pmf).unwrap();
        let inst = Instance::new(tree, model, FunctionTable::from_fn(&[2, 2, 1], |x| x[0] & x[1])).unwrap();
        assert!(matches!(
            markov_rate_region(&inst, &opts()),
            Err(Error::MarkovViolated { node: NodeId(3), .. })
        ));
        assert!(independent_sources_region(&inst, &opts()).is_err());
        assert!(cutset_outer_bound(&inst, &opts()).is_ok());
    }

    #[test]
    fn enlarged_message_is_caught() {
        let inst = off_diagonal();
        let ord = inst.tree.canonical_ordering();
        let (mut fam, _) = build_aux_family(&inst, &ord, &opts()).unwrap();
        let k = fam.kernels.get_mut(&NodeId(1)).unwrap();
        k.messages[0].push(vec![2]);
        let rep = check_aux_validity(&inst, &fam, &ord, &opts()).unwrap();
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::NotIndependent));
    }

    #[test]
    fn stranger_dependence_is_caught() {
        let inst = xor_star();
        let ord = inst.tree.canonical_ordering();
        let (mut fam, _) = build_aux_family(&inst, &ord, &opts()).unwrap();
        // Node 1 now sends x1 xor x2, reading its stranger's source.
        let k = fam.kernels.get_mut(&NodeId(1)).unwrap();
        k.inputs.push(Coord::Source(NodeId(2)));
        k.rows = BTreeMap::new();
        for a in 0..2u32 {
            for b in 0..2u32 {
                k.rows.insert(vec![a, b], vec![((a ^ b) as usize, Prob::one())]);
            }
        }
        let rep = check_aux_validity(&inst, &fam, &ord, &opts()).unwrap();
        assert!(rep.violations.iter().any(|v| v.kind == ViolationKind::LocalMarkov && v.node == NodeId(1)));
    }
}
