//! JSON formats: instances, auxiliary families, graph exports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::chargraph::CharGraph;
use crate::dist::{format_prob, parse_prob, Coord, Prob};
use crate::error::{Error, Result};
use crate::model::{FunctionTable, Instance, NodeId, Ordering, RootedTree, SourceModel};
use crate::region::{AuxFamily, NodeKernel};

fn parse_error(e: serde_json::Error) -> Error {
    Error::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeFile {
    pub id: u32,
    pub alphabet: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PmfEntry {
    pub x: BTreeMap<String, String>,
    pub p: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionEntry {
    pub x: BTreeMap<String, String>,
    pub value: String,
}

/// The on-disk instance format. Tuples map node ids (as strings) to letters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub nodes: Vec<NodeFile>,
    pub edges: Vec<[u32; 2]>,
    pub root: u32,
    pub pmf: Vec<PmfEntry>,
    pub f: Vec<FunctionEntry>,
}

fn tuple(tree: &RootedTree, alphabets: &[Vec<String>], x: &BTreeMap<String, String>, what: &str) -> Result<Vec<u32>> {
    if x.len() != tree.len() {
        return Err(Error::InvalidCoordinates(format!(
            "{what} tuple {x:?} names {} nodes, expected {}",
            x.len(),
            tree.len()
        )));
    }
    let mut out = vec![0u32; tree.len()];
    for (id, letter) in x {
        let u = NodeId(
            id.trim()
                .parse()
                .map_err(|_| Error::InvalidCoordinates(format!("{what} tuple key {id:?} is not a node id")))?,
        );
        let i = tree.index_of(u)?;
        out[i] = alphabets[i]
            .iter()
            .position(|a| a == letter)
            .ok_or_else(|| Error::InvalidCoordinates(format!("{what}: node {u} has no letter {letter:?}")))?
            as u32;
    }
    Ok(out)
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<Instance> {
        let mut nodes = self.nodes;
        nodes.sort_by_key(|n| n.id);
        let tree = RootedTree::new(
            nodes.iter().map(|n| NodeId(n.id)).collect(),
            self.edges.iter().map(|e| (NodeId(e[0]), NodeId(e[1]))).collect(),
            NodeId(self.root),
        )?;
        let alphabets: Vec<Vec<String>> = nodes.into_iter().map(|n| n.alphabet).collect();
        let mut pmf = BTreeMap::new();
        for e in &self.pmf {
            let x = tuple(&tree, &alphabets, &e.x, "pmf")?;
            if pmf.insert(x, parse_prob(&e.p)?).is_some() {
                return Err(Error::InvalidModel(format!("pmf lists {:?} twice", e.x)));
            }
        }
        let model = SourceModel::new(alphabets.clone(), pmf)?;
        let mut out_letters: Vec<String> = Vec::new();
        let mut outputs = BTreeMap::new();
        for e in &self.f {
            let x = tuple(&tree, &alphabets, &e.x, "f")?;
            let v = match out_letters.iter().position(|a| a == &e.value) {
                Some(i) => i,
                None => {
                    out_letters.push(e.value.clone());
                    out_letters.len() - 1
                }
            };
            if outputs.insert(x, v as u32).is_some() {
                return Err(Error::InvalidFunction(format!("f lists {:?} twice", e.x)));
            }
        }
        Instance::new(tree, model, FunctionTable::new(outputs, out_letters))
    }

    pub fn from_instance(inst: &Instance) -> Self {
        let nodes = inst.tree.nodes();
        let named = |x: &[u32]| -> BTreeMap<String, String> {
            nodes
                .iter()
                .zip(x)
                .enumerate()
                .map(|(i, (u, &a))| (u.to_string(), inst.model.alphabets()[i][a as usize].clone()))
                .collect()
        };
        InstanceFile {
            nodes: nodes
                .iter()
                .zip(inst.model.alphabets())
                .map(|(u, a)| NodeFile {
                    id: u.0,
                    alphabet: a.clone(),
                })
                .collect(),
            edges: inst.tree.edges().into_iter().map(|(u, v)| [u.0, v.0]).collect(),
            root: inst.tree.root().0,
            pmf: inst
                .model
                .pmf()
                .iter()
                .map(|(x, p)| PmfEntry {
                    x: named(x),
                    p: format_prob(p),
                })
                .collect(),
            f: inst
                .function
                .outputs()
                .iter()
                .map(|(x, &v)| FunctionEntry {
                    x: named(x),
                    value: inst.function.alphabet()[v as usize].clone(),
                })
                .collect(),
        }
    }
}

pub fn parse_instance(text: &str) -> Result<Instance> {
    serde_json::from_str::<InstanceFile>(text).map_err(parse_error)?.into_instance()
}

pub fn instance_to_json(inst: &Instance) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(inst)).expect("plain data serializes")
}

pub fn read_instance(path: &std::path::Path) -> Result<Instance> {
    parse_instance(&std::fs::read_to_string(path)?)
}

/// Parses "X3" / "W3".
pub fn parse_coord(s: &str) -> Result<Coord> {
    let bad = || Error::InvalidCoordinates(format!("{s:?} is not a coordinate like X3 or W3"));
    let (kind, id) = s.trim().split_at_checked(1).ok_or_else(bad)?;
    let id = NodeId(id.parse().map_err(|_| bad())?);
    match kind {
        "X" | "x" => Ok(Coord::Source(id)),
        "W" | "w" => Ok(Coord::Message(id)),
        _ => Err(bad()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LawEntry {
    pub message: usize,
    pub p: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelRow {
    pub context: Vec<u32>,
    pub law: Vec<LawEntry>,
}

/// Letters are indices: source letters by alphabet position, message
/// letters by message index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub node: u32,
    pub inputs: Vec<String>,
    pub home: usize,
    pub messages: Vec<Vec<Vec<u32>>>,
    pub rows: Vec<KernelRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    pub ordering: Vec<u32>,
    pub kernels: Vec<KernelFile>,
}

impl FamilyFile {
    pub fn from_family(fam: &AuxFamily) -> Self {
        FamilyFile {
            ordering: fam.ordering.sequence().iter().map(|u| u.0).collect(),
            kernels: fam
                .kernels
                .values()
                .map(|k| KernelFile {
                    node: k.node.0,
                    inputs: k.inputs.iter().map(Coord::to_string).collect(),
                    home: k.home,
                    messages: k.messages.clone(),
                    rows: k
                        .rows
                        .iter()
                        .map(|(ctx, law)| KernelRow {
                            context: ctx.clone(),
                            law: law
                                .iter()
                                .map(|(m, p)| LawEntry {
                                    message: *m,
                                    p: format_prob(p),
                                })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    pub fn into_family(self, inst: &Instance) -> Result<AuxFamily> {
        let ordering = Ordering::from_sequence(&inst.tree, self.ordering.into_iter().map(NodeId).collect())?;
        let mut kernels = BTreeMap::new();
        for k in self.kernels {
            let node = NodeId(k.node);
            let inputs = k.inputs.iter().map(|s| parse_coord(s)).collect::<Result<Vec<_>>>()?;
            if k.home > inputs.len() {
                return Err(Error::InvalidFamily(format!("node {node}: home exceeds the input count")));
            }
            let mut rows = BTreeMap::new();
            for r in k.rows {
                let law = r
                    .law
                    .iter()
                    .map(|e| Ok((e.message, parse_prob(&e.p)?)))
                    .collect::<Result<Vec<(usize, Prob)>>>()?;
                if rows.insert(r.context.clone(), law).is_some() {
                    return Err(Error::InvalidFamily(format!("node {node}: context {:?} listed twice", r.context)));
                }
            }
            let kernel = NodeKernel {
                node,
                inputs,
                home: k.home,
                messages: k.messages,
                rows,
            };
            if kernels.insert(node, kernel).is_some() {
                return Err(Error::InvalidFamily(format!("node {node} listed twice")));
            }
        }
        let fam = AuxFamily { ordering, kernels };
        fam.check_shape(inst)?;
        Ok(fam)
    }
}

pub fn parse_family(text: &str, inst: &Instance) -> Result<AuxFamily> {
    serde_json::from_str::<FamilyFile>(text).map_err(parse_error)?.into_family(inst)
}

pub fn family_to_json(fam: &AuxFamily) -> String {
    serde_json::to_string_pretty(&FamilyFile::from_family(fam)).expect("plain data serializes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphVertex {
    pub id: usize,
    pub letters: Vec<String>,
}

/// JSON mirror of a characteristic graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphFile {
    pub coords: Vec<String>,
    pub sizes: Vec<usize>,
    pub vertices: Vec<GraphVertex>,
    pub edges: Vec<[usize; 2]>,
}

/// Letter names of a vertex: alphabet names for sources, indices for
/// messages.
fn vertex_letters(inst: &Instance, g: &CharGraph, v: usize) -> Vec<String> {
    g.vertex_letters(v)
        .into_iter()
        .zip(g.coords())
        .map(|(a, c)| match c {
            Coord::Source(u) => inst.letter(*u, a).map(str::to_string).unwrap_or_else(|_| a.to_string()),
            Coord::Message(_) => a.to_string(),
        })
        .collect()
}

pub fn graph_file(inst: &Instance, g: &CharGraph) -> GraphFile {
    GraphFile {
        coords: g.coords().iter().map(Coord::to_string).collect(),
        sizes: g.sizes().to_vec(),
        vertices: (0..g.vertex_count())
            .map(|v| GraphVertex {
                id: v,
                letters: vertex_letters(inst, g, v),
            })
            .collect(),
        edges: g.edges().into_iter().map(|(a, b)| [a, b]).collect(),
    }
}

/// Edge list: a vertex manifest in comment lines, then one "u -- v" line
/// per edge.
pub fn graph_edge_list(inst: &Instance, g: &CharGraph) -> String {
    let mut out = String::new();
    let coords: Vec<String> = g.coords().iter().map(Coord::to_string).collect();
    writeln!(out, "# vertices ({})", coords.join(",")).unwrap();
    for v in 0..g.vertex_count() {
        writeln!(out, "# {v} = ({})", vertex_letters(inst, g, v).join(",")).unwrap();
    }
    for (a, b) in g.edges() {
        writeln!(out, "{a} -- {b}").unwrap();
    }
    out
}
