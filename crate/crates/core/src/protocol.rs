//! Single-shot execution of the message-passing scheme a family induces, with
//! exhaustive zero-error certification at the root.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::Zero;
use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{entropy_bits, pick, to_f64, Coord, Joint, Prob};
use crate::error::{Error, Result};
use crate::model::{Instance, NodeId};
use crate::region::{home_coords, AuxFamily};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolTrace {
    pub realization: Vec<u32>,
    /// Message index sent by each non-root node.
    pub messages: BTreeMap<NodeId, usize>,
    /// The decoded value, or None when the root's view is ambiguous.
    pub root_output: Option<u32>,
    /// Every f value consistent with what the root holds.
    pub candidates: Vec<u32>,
    pub expected: u32,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub total_support_size: usize,
    /// Source realizations times message branches; equals the support size
    /// for deterministic families.
    pub branches: usize,
    pub error_count: usize,
    pub message_entropy: BTreeMap<NodeId, f64>,
    pub alphabet_size: BTreeMap<NodeId, usize>,
    pub deterministic: bool,
}

impl SimulationSummary {
    pub fn certified(&self) -> bool {
        self.error_count == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub summary: SimulationSummary,
    pub failures: Vec<ProtocolTrace>,
}

/// A family ready to run: the composed joint law and the root's decoding
/// table, i.e. the f values compatible with each (x_r, w_In(r)).
#[derive(Debug, Clone)]
pub struct Protocol<'a> {
    inst: &'a Instance,
    fam: &'a AuxFamily,
    joint: Joint,
    root_view: Vec<Coord>,
    compatible: BTreeMap<Vec<u32>, BTreeSet<u32>>,
}

impl<'a> Protocol<'a> {
    pub fn new(inst: &'a Instance, fam: &'a AuxFamily, guard: usize) -> Result<Self> {
        let joint = fam.compose(inst, guard)?;
        let root_view = home_coords(inst, inst.tree.root())?;
        let view_cols = joint.columns(&root_view)?;
        let src_cols = joint.columns(&inst.source_coords(&inst.tree.nodes().iter().copied().collect()))?;
        let mut compatible: BTreeMap<Vec<u32>, BTreeSet<u32>> = BTreeMap::new();
        for (row, _) in joint.rows() {
            let f = inst.function.value(&pick(row, &src_cols)).expect("f covers the support");
            compatible.entry(pick(row, &view_cols)).or_default().insert(f);
        }
        Ok(Protocol {
            inst,
            fam,
            joint,
            root_view,
            compatible,
        })
    }

    pub fn joint(&self) -> &Joint {
        &self.joint
    }

    fn value_of(&self, c: Coord, x: &[u32], msgs: &BTreeMap<NodeId, usize>) -> Result<u32> {
        match c {
            Coord::Source(v) => Ok(x[self.inst.tree.index_of(v)?]),
            Coord::Message(v) => msgs
                .get(&v)
                .map(|&m| m as u32)
                .ok_or_else(|| Error::InvalidFamily(format!("message of node {v} used before it is sent"))),
        }
    }

    /// Runs the scheme on `x`, asking `choose` to pick a message from each
    /// kernel row.
    fn run_with(
        &self,
        x: &[u32],
        mut choose: impl FnMut(NodeId, &[(usize, Prob)]) -> Result<usize>,
    ) -> Result<ProtocolTrace> {
        if x.len() != self.inst.tree.len() {
            return Err(Error::InvalidCoordinates(format!("expected {} letters", self.inst.tree.len())));
        }
        if self.inst.model.probability(x).is_zero() {
            return Err(Error::ZeroProbabilityRealization);
        }
        let mut msgs = BTreeMap::new();
        for &u in self.fam.ordering.sequence() {
            if u == self.inst.tree.root() {
                continue;
            }
            let k = self.fam.kernel(u)?;
            let ctx = k
                .inputs
                .iter()
                .map(|&c| self.value_of(c, x, &msgs))
                .collect::<Result<Vec<u32>>>()?;
            let row = k.rows.get(&ctx).ok_or_else(|| {
                Error::InvalidFamily(format!("node {u} has no message law for context {ctx:?}"))
            })?;
            msgs.insert(u, choose(u, row)?);
        }
        let view = self
            .root_view
            .iter()
            .map(|&c| self.value_of(c, x, &msgs))
            .collect::<Result<Vec<u32>>>()?;
        let candidates: Vec<u32> = self
            .compatible
            .get(&view)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        let expected = self.inst.function.value(x).expect("f covers the support");
        let root_output = (candidates.len() == 1).then(|| candidates[0]);
        Ok(ProtocolTrace {
            realization: x.to_vec(),
            messages: msgs,
            correct: root_output == Some(expected),
            root_output,
            candidates,
            expected,
        })
    }

    /// Runs a deterministic family on `x`.
    pub fn run(&self, x: &[u32]) -> Result<ProtocolTrace> {
        self.run_with(x, |u, row| {
            let mut live = row.iter().filter(|(_, p)| !p.is_zero());
            match (live.next(), live.next()) {
                (Some((m, _)), None) => Ok(*m),
                _ => Err(Error::RandomizedFamily(u)),
            }
        })
    }

    /// Runs the family on `x` drawing randomized messages from `rng`.
    pub fn run_sampled(&self, x: &[u32], rng: &mut ChaCha8Rng) -> Result<ProtocolTrace> {
        self.run_with(x, |_, row| {
            let w: Vec<f64> = row.iter().map(|(_, p)| to_f64(p)).collect();
            let dist = WeightedIndex::new(&w).map_err(|e| Error::InvalidFamily(e.to_string()))?;
            Ok(row[dist.sample(rng)].0)
        })
    }

    /// Runs every source realization along every message branch.
    pub fn simulate_all(&self) -> Result<Simulation> {
        let src_cols = self
            .joint
            .columns(&self.inst.source_coords(&self.inst.tree.nodes().iter().copied().collect()))?;
        let senders = self.inst.tree.senders();
        let msg_cols = self
            .joint
            .columns(&senders.iter().map(|&u| Coord::Message(u)).collect::<Vec<_>>())?;
        let mut failures = Vec::new();
        for (row, _) in self.joint.rows() {
            let x = pick(row, &src_cols);
            let chosen: BTreeMap<NodeId, usize> =
                senders.iter().zip(pick(row, &msg_cols)).map(|(&u, m)| (u, m as usize)).collect();
            let trace = self.run_with(&x, |u, _| Ok(chosen[&u]))?;
            if !trace.correct {
                failures.push(trace);
            }
        }
        let mut message_entropy = BTreeMap::new();
        let mut alphabet_size = BTreeMap::new();
        for &u in &senders {
            let m = self.joint.marginal(&[Coord::Message(u)])?;
            message_entropy.insert(u, entropy_bits(m.values()));
            alphabet_size.insert(u, self.fam.kernel(u)?.messages.len());
        }
        Ok(Simulation {
            summary: SimulationSummary {
                total_support_size: self.inst.model.pmf().len(),
                branches: self.joint.len(),
                error_count: failures.len(),
                message_entropy,
                alphabet_size,
                deterministic: self.fam.is_deterministic(),
            },
            failures,
        })
    }
}

/// Runs a deterministic family on one realization.
pub fn run_single_shot(inst: &Instance, fam: &AuxFamily, x: &[u32], guard: usize) -> Result<ProtocolTrace> {
    Protocol::new(inst, fam, guard)?.run(x)
}

/// Exhaustive certification over the support. Randomized families are
/// handled by enumerating every positive-probability message branch.
pub fn simulate_all(inst: &Instance, fam: &AuxFamily, guard: usize) -> Result<Simulation> {
    if inst.model.pmf().len() > guard {
        return Err(Error::GuardExceeded {
            what: "source support",
            limit: guard,
            actual: inst.model.pmf().len(),
        });
    }
    Protocol::new(inst, fam, guard)?.simulate_all()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub draws: usize,
    pub errors: usize,
    pub error_rate: f64,
    /// Empirical frequency of each message index per node.
    pub frequencies: BTreeMap<NodeId, Vec<f64>>,
}

/// `n` independent runs; draw i uses stream i of a ChaCha8 generator seeded
/// with `seed`, so the sequence does not depend on how draws are scheduled.
pub fn sample_traces(inst: &Instance, fam: &AuxFamily, n: usize, seed: u64, guard: usize) -> Result<Vec<ProtocolTrace>> {
    let proto = Protocol::new(inst, fam, guard)?;
    let support: Vec<&Vec<u32>> = inst.model.pmf().keys().collect();
    let weights: Vec<f64> = inst.model.pmf().values().map(to_f64).collect();
    let sources = WeightedIndex::new(&weights).map_err(|e| Error::InvalidModel(e.to_string()))?;
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let x = support[sources.sample(&mut rng)];
            proto.run_sampled(x, &mut rng)
        })
        .collect()
}

pub fn sample_runs(inst: &Instance, fam: &AuxFamily, n: usize, seed: u64, guard: usize) -> Result<SampleSummary> {
    let traces = sample_traces(inst, fam, n, seed, guard)?;
    let mut counts: BTreeMap<NodeId, Vec<usize>> = fam
        .kernels
        .iter()
        .map(|(&u, k)| (u, vec![0; k.messages.len()]))
        .collect();
    let mut errors = 0;
    for t in &traces {
        errors += usize::from(!t.correct);
        for (u, &m) in &t.messages {
            counts.get_mut(u).expect("kernel per sender")[m] += 1;
        }
    }
    let denom = n.max(1) as f64;
    Ok(SampleSummary {
        draws: n,
        errors,
        error_rate: errors as f64 / denom,
        frequencies: counts
            .into_iter()
            .map(|(u, c)| (u, c.into_iter().map(|k| k as f64 / denom).collect()))
            .collect(),
    })
}
