use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use treerate::chargraph::{CompositeSpec, DEFAULT_MAX_VERTICES};
use treerate::entropy::{graph_entropy_oracle, OracleLimits, SolverConfig};
use treerate::io::{family_to_json, graph_edge_list, graph_file, parse_coord, parse_family, read_instance};
use treerate::model::MarkovVerdict;
use treerate::protocol::{sample_runs, simulate_all};
use treerate::region::{
    build_aux_family, check_aux_validity, conditional_graph, cutset_outer_bound, graph_entropy_of,
    markov_rate_region, RateReport, DEFAULT_MAX_SUPPORT,
};
use treerate::{AuxFamily, Coord, Error, Instance, Joint, NodeId, Ordering, RegionOptions};

#[derive(Parser)]
#[command(name = "treerate", version, about = "Rate bounds for zero-error function computation on rooted trees")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Instance file (JSON).
    instance: PathBuf,
    /// Machine-readable output.
    #[arg(long)]
    json: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_VERTICES)]
    max_vertices: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SUPPORT)]
    max_support: usize,
}

#[derive(Args)]
struct Solver {
    #[arg(long, default_value_t = 16)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 20_000)]
    max_iter: usize,
    /// Step of the restart seeding grid, as 1/q.
    #[arg(long, default_value = "1/8")]
    grid_step: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct Composite {
    /// Coordinates of the vertex side, e.g. 1,2 or X1,W3.
    #[arg(long = "L", value_delimiter = ',', required = true)]
    l: Vec<String>,
    /// Side-information coordinates.
    #[arg(long = "K", value_delimiter = ',')]
    k: Vec<String>,
    /// Family whose messages may appear among the coordinates.
    #[arg(long)]
    family: Option<PathBuf>,
}

#[derive(Args)]
struct OrderingArg {
    /// `canonical` or an index into the list printed by `orderings`.
    #[arg(long, default_value = "canonical")]
    ordering: String,
}

#[derive(Subcommand)]
enum Cmd {
    /// Validate the instance and test the Markov property.
    Check {
        #[command(flatten)]
        common: Common,
    },
    /// Build and export a conditional characteristic graph.
    Graph {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        composite: Composite,
    },
    /// Conditional graph entropy H(G_{L|K}) with its certificate.
    Entropy {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        composite: Composite,
        #[command(flatten)]
        solver: Solver,
        /// Also compute the exhaustive grid bracket (step 1/16).
        #[arg(long)]
        oracle: bool,
    },
    /// Per-node rate region; requires the Markov property.
    Region {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: Solver,
    },
    /// Cut-set outer bound for every valid cut.
    Cutset {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: Solver,
    },
    /// Construct an auxiliary message family node by node.
    BuildAux {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: Solver,
        #[command(flatten)]
        ordering: OrderingArg,
        /// Write the family here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a family's support and Markov conditions.
    ValidateAux {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ordering: OrderingArg,
        #[arg(long)]
        family: PathBuf,
        #[arg(long, default_value_t = treerate::region::DEFAULT_MAX_ORDERINGS)]
        max_orderings: usize,
    },
    /// Run the single-shot protocol over the whole support.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        solver: Solver,
        #[command(flatten)]
        ordering: OrderingArg,
        /// Family to run; built under --ordering when absent.
        #[arg(long)]
        family: Option<PathBuf>,
        /// Also draw this many random runs (seeded by --seed).
        #[arg(long)]
        samples: Option<usize>,
    },
    /// List the valid orderings, canonical first.
    Orderings {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        limit: Option<usize>,
    },
}

/// Exit statuses: input error, guard exceeded, certification failure.
enum Failure {
    Input(String),
    Guard(String),
    Certification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_guard() {
            Failure::Guard(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

type Run = Result<(), Failure>;

fn solver_config(s: &Solver) -> Result<SolverConfig, Failure> {
    let bad = || Failure::Input(format!("--grid-step {:?} must look like 1/q", s.grid_step));
    let (p, q) = s.grid_step.split_once('/').ok_or_else(bad)?;
    let p: u32 = p.trim().parse().map_err(|_| bad())?;
    let q: u32 = q.trim().parse().map_err(|_| bad())?;
    if p == 0 || q == 0 || !q.is_multiple_of(p) {
        return Err(bad());
    }
    Ok(SolverConfig {
        restarts: s.restarts,
        tol: s.tol,
        max_iter: s.max_iter,
        grid_den: q / p,
        seed: s.seed,
    })
}

fn options(c: &Common, s: Option<&Solver>) -> Result<RegionOptions, Failure> {
    let mut o = RegionOptions {
        max_vertices: c.max_vertices,
        max_support: c.max_support,
        ..RegionOptions::default()
    };
    if let Some(s) = s {
        o.solver = solver_config(s)?;
    }
    Ok(o)
}

fn load(c: &Common) -> Result<Instance, Failure> {
    let inst = read_instance(&c.instance).map_err(|e| Failure::Input(format!("{}: {e}", c.instance.display())))?;
    if inst.model.pmf().len() > c.max_support {
        return Err(Failure::Guard(format!(
            "source support {} exceeds --max-support {}",
            inst.model.pmf().len(),
            c.max_support
        )));
    }
    Ok(inst)
}

fn load_family(path: &PathBuf, inst: &Instance) -> Result<AuxFamily, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_family(&text, inst).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn ordering(inst: &Instance, arg: &OrderingArg) -> Result<Ordering, Failure> {
    if arg.ordering == "canonical" {
        return Ok(inst.tree.canonical_ordering());
    }
    let i: usize = arg
        .ordering
        .parse()
        .map_err(|_| Failure::Input(format!("--ordering {:?} is neither canonical nor an index", arg.ordering)))?;
    inst.tree
        .enumerate_orderings(Some(i + 1))
        .into_iter()
        .nth(i)
        .ok_or_else(|| Failure::Input(format!("ordering index {i} is out of range")))
}

fn coord(s: &str) -> Result<Coord, Failure> {
    match s.trim().parse::<u32>() {
        Ok(u) => Ok(Coord::Source(NodeId(u))),
        Err(_) => Ok(parse_coord(s)?),
    }
}

fn composite(inst: &Instance, c: &Composite, guard: usize) -> Result<(Joint, CompositeSpec), Failure> {
    let l = c.l.iter().map(|s| coord(s)).collect::<Result<Vec<_>, _>>()?;
    let k = c.k.iter().map(|s| coord(s)).collect::<Result<Vec<_>, _>>()?;
    let joint = match &c.family {
        Some(path) => load_family(path, inst)?.compose(inst, guard)?,
        None => inst.joint(),
    };
    Ok((joint, CompositeSpec::new(l, k)?))
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", serde_json::to_string_pretty(v).expect("plain data serializes"));
}

fn check(c: &Common) -> Run {
    let inst = load(c)?;
    let markov = inst.markov_property_check();
    let independent = inst.sources_independent().is_ok();
    if c.json {
        let m = match &markov {
            MarkovVerdict::Holds => json!({"holds": true}),
            MarkovVerdict::ViolatedAt { node, witness } => {
                json!({"holds": false, "violated_at": node, "witness": witness.to_string()})
            }
        };
        print_json(&json!({"tree": "ok", "nodes": inst.tree.len(), "markov": m, "independent_sources": independent}));
    } else {
        let m = match &markov {
            MarkovVerdict::Holds => "holds".to_string(),
            MarkovVerdict::ViolatedAt { node, .. } => format!("violated-at({node})"),
        };
        println!("tree: ok; markov: {m}");
        if let MarkovVerdict::ViolatedAt { witness, .. } = &markov {
            println!("witness: {witness}");
        }
        println!("sources: {}", if independent { "independent" } else { "dependent" });
    }
    Ok(())
}

fn graph(c: &Common, comp: &Composite) -> Run {
    let inst = load(c)?;
    let (joint, spec) = composite(&inst, comp, c.max_support)?;
    let g = conditional_graph(&inst, &joint, &spec, c.max_vertices)?;
    if c.json {
        print_json(&graph_file(&inst, &g));
    } else {
        print!("{}", graph_edge_list(&inst, &g));
    }
    Ok(())
}

fn entropy(c: &Common, comp: &Composite, s: &Solver, oracle: bool) -> Run {
    let inst = load(c)?;
    let opts = options(c, Some(s))?;
    let (joint, spec) = composite(&inst, comp, c.max_support)?;
    let res = graph_entropy_of(&inst, &joint, &spec, &opts)?;
    let h_cond = res.problem.conditional_entropy();
    let sol = &res.solution;
    let vertices = graph_file(&inst, &res.graph).vertices;
    let support: Vec<Vec<Vec<String>>> = sol
        .used_sets(&res.problem, 1e-9)
        .into_iter()
        .map(|v| {
            res.problem.sets()[v]
                .iter()
                .map(|&x| vertices[x].letters.clone())
                .collect()
        })
        .collect();
    let bracket = if oracle {
        Some(graph_entropy_oracle(&res.problem, 16, &OracleLimits::default())?)
    } else {
        None
    };
    if c.json {
        print_json(&json!({
            "value": sol.value,
            "lower_bound": sol.lower_bound,
            "certificate": sol.certificate,
            "conditional_entropy": h_cond,
            "deterministic": sol.is_deterministic(&res.problem),
            "support": support,
            "oracle": bracket.as_ref().map(|b| json!({"lower": b.lower, "upper": b.upper, "points": b.points})),
        }));
    } else {
        println!("H(G) = {:.4} (≤ H(L|K)={:.4})", sol.value, h_cond);
        println!("certified gap: {:.2e} bits (lower bound {:.10})", sol.certificate, sol.lower_bound);
        let sets: Vec<String> = support
            .iter()
            .map(|set| format!("{{{}}}", set.iter().map(|l| l.join(":")).collect::<Vec<_>>().join(",")))
            .collect();
        println!("optimal support: {}", sets.join(" "));
        if let Some(b) = &bracket {
            println!("oracle bracket: [{:.10}, {:.10}] over {} grid points", b.lower, b.upper, b.points);
        }
    }
    if let Some(b) = bracket {
        if !b.contains(sol.value, opts.solver.tol) {
            return Err(Failure::Certification(format!(
                "solver value {} outside oracle bracket [{}, {}]",
                sol.value, b.lower, b.upper
            )));
        }
    }
    Ok(())
}

fn print_report(r: &RateReport, json: bool) {
    if json {
        print_json(r);
        return;
    }
    if !r.node_bounds.is_empty() {
        println!("{:>6}  {:>14}", "node", "rate >= bits");
        for (u, b) in &r.node_bounds {
            println!("{:>6}  {:>14.6}", u.to_string(), b);
        }
    }
    if !r.cut_bounds.is_empty() {
        let width = r
            .cut_bounds
            .iter()
            .map(|c| ids(&c.cut).len())
            .max()
            .unwrap_or(3)
            .max(3);
        println!("{:<width$}  {:<12}  {:>12}", "cut", "boundary", "sum >= bits");
        for c in &r.cut_bounds {
            println!("{:<width$}  {:<12}  {:>12.6}", ids(&c.cut), ids(&c.boundary), c.bits);
        }
    }
}

fn ids(v: &[NodeId]) -> String {
    format!("{{{}}}", v.iter().map(|u| u.to_string()).collect::<Vec<_>>().join(","))
}

fn region(c: &Common, s: &Solver) -> Run {
    let inst = load(c)?;
    let opts = options(c, Some(s))?;
    match markov_rate_region(&inst, &opts) {
        Ok(r) => {
            print_report(&r, c.json);
            Ok(())
        }
        Err(Error::MarkovViolated { node, detail }) => Err(Failure::Input(format!(
            "the Markov property fails at node {node} ({detail}); no region is claimed. \
             Use `cutset` for the outer bound and `build-aux`/`validate-aux` for inner-bound evaluation."
        ))),
        Err(e) => Err(e.into()),
    }
}

fn cutset(c: &Common, s: &Solver) -> Run {
    let inst = load(c)?;
    print_report(&cutset_outer_bound(&inst, &options(c, Some(s))?)?, c.json);
    Ok(())
}

fn build_aux(c: &Common, s: &Solver, ord: &OrderingArg, out: Option<&PathBuf>) -> Run {
    let inst = load(c)?;
    let ord = ordering(&inst, ord)?;
    let (fam, records) = build_aux_family(&inst, &ord, &options(c, Some(s))?)?;
    let text = family_to_json(&fam);
    match out {
        Some(path) => {
            std::fs::write(path, text + "\n").map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
            if c.json {
                print_json(&records);
            } else {
                println!("ordering {ord}");
                println!("{:>6}  {:>12}  {:>8}  {:>13}", "node", "stage bits", "messages", "deterministic");
                for r in &records {
                    let k = fam.kernel(r.node)?;
                    println!(
                        "{:>6}  {:>12.6}  {:>8}  {:>13}",
                        r.node.to_string(),
                        r.bits,
                        k.messages.len(),
                        r.deterministic
                    );
                }
            }
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn validate_aux(c: &Common, ord: &OrderingArg, family: &PathBuf, max_orderings: usize) -> Run {
    let inst = load(c)?;
    let ord = ordering(&inst, ord)?;
    let fam = load_family(family, &inst)?;
    let mut opts = options(c, None)?;
    opts.max_orderings = max_orderings;
    let rep = check_aux_validity(&inst, &fam, &ord, &opts)?;
    if c.json {
        print_json(&rep);
    } else if rep.is_ok() {
        println!("family: ok under {} ordering(s)", rep.orderings_checked);
    } else {
        for v in &rep.violations {
            println!(
                "violation {} at node {} (ordering {}): {}",
                serde_json::to_value(v.kind).expect("enum serializes").as_str().unwrap_or("?"),
                v.node,
                v.ordering,
                v.detail
            );
        }
    }
    if rep.is_ok() {
        Ok(())
    } else {
        Err(Failure::Certification(format!("{} violation(s)", rep.violations.len())))
    }
}

fn simulate(c: &Common, s: &Solver, ord: &OrderingArg, family: Option<&PathBuf>, samples: Option<usize>) -> Run {
    let inst = load(c)?;
    let fam = match family {
        Some(p) => load_family(p, &inst)?,
        None => build_aux_family(&inst, &ordering(&inst, ord)?, &options(c, Some(s))?)?.0,
    };
    let sim = simulate_all(&inst, &fam, c.max_support)?;
    let sampled = samples
        .map(|n| sample_runs(&inst, &fam, n, s.seed, c.max_support))
        .transpose()?;
    if c.json {
        println!("{}", serde_json::to_string(&json!({"summary": sim.summary, "samples": sampled})).expect("serializes"));
        for t in &sim.failures {
            println!("{}", serde_json::to_string(t).expect("serializes"));
        }
    } else {
        let sm = &sim.summary;
        println!(
            "support {}  branches {}  errors {}  deterministic {}",
            sm.total_support_size, sm.branches, sm.error_count, sm.deterministic
        );
        println!("{:>6}  {:>10}  {:>10}", "node", "H(W) bits", "|W|");
        for (u, h) in &sm.message_entropy {
            println!("{:>6}  {:>10.6}  {:>10}", u.to_string(), h, sm.alphabet_size[u]);
        }
        if let Some(sa) = &sampled {
            println!("sampled {} runs: {} errors (rate {:.3e})", sa.draws, sa.errors, sa.error_rate);
        }
        for t in sim.failures.iter().take(10) {
            println!(
                "failure: x={:?} messages={:?} candidates={:?} expected={}",
                t.realization, t.messages, t.candidates, t.expected
            );
        }
    }
    let errors = sim.summary.error_count + sampled.map_or(0, |s| s.errors);
    if errors > 0 {
        return Err(Failure::Certification(format!("{errors} decoding error(s)")));
    }
    Ok(())
}

fn orderings(c: &Common, limit: Option<usize>) -> Run {
    let inst = load(c)?;
    let all = inst.tree.enumerate_orderings(limit);
    if c.json {
        let seqs: Vec<Vec<NodeId>> = all.iter().map(|o| o.sequence().to_vec()).collect();
        print_json(&seqs);
    } else {
        for (i, o) in all.iter().enumerate() {
            println!("{i:>5}  {o}{}", if i == 0 { "  (canonical)" } else { "" });
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Check { common } => check(common),
        Cmd::Graph { common, composite } => graph(common, composite),
        Cmd::Entropy {
            common,
            composite,
            solver,
            oracle,
        } => entropy(common, composite, solver, *oracle),
        Cmd::Region { common, solver } => region(common, solver),
        Cmd::Cutset { common, solver } => cutset(common, solver),
        Cmd::BuildAux {
            common,
            solver,
            ordering,
            out,
        } => build_aux(common, solver, ordering, out.as_ref()),
        Cmd::ValidateAux {
            common,
            ordering,
            family,
            max_orderings,
        } => validate_aux(common, ordering, family, *max_orderings),
        Cmd::Simulate {
            common,
            solver,
            ordering,
            family,
            samples,
        } => simulate(common, solver, ordering, family.as_ref(), *samples),
        Cmd::Orderings { common, limit } => orderings(common, *limit),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Guard(m)) => {
            eprintln!("guard exceeded: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Certification(m)) => {
            eprintln!("certification failed: {m}");
            ExitCode::from(3)
        }
    }
}
