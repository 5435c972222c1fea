//! File formats and the command-line surface.
//!
//! Graphs travel as single-line JSON objects with sorted keys and a
//! trailing newline, so emitted files are byte-stable:
//! `{"adjacency":[[1,"inf"],[0,2]],"vertices":["a","b"]}`. Pairs use
//! `{"b":..,"d":..}`, move scripts one JSON object per line, and
//! certificates `{"U":..,"V":..,"level":"SL+"}`.
//!
//! Every transforming subcommand also emits its move script on request
//! (`--emit-script`), and replaying that script with `apply` reproduces the
//! subcommand's own output byte for byte.

use std::fs;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::canonical::{self, Certificate};
use crate::ext::Ext;
use crate::graph::{validate_graph, Graph};
use crate::ktheory::{self, PointedK0};
use crate::matops::{self, MatOp};
use crate::moves::{apply_script, collect_sources, MoveScript};
use crate::pair::{from_db, to_db, DbPair};
use crate::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphFile {
    adjacency: Vec<Vec<Ext>>,
    vertices: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairFile {
    b: Vec<Vec<Ext>>,
    d: Vec<i64>,
}

/// Parses a graph file, rejecting unknown keys and shape violations.
pub fn parse_graph(bytes: &[u8]) -> Result<Graph> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Parse("graph file is not valid UTF-8".into()))?;
    let file: GraphFile = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    let violations = validate_graph(&file.vertices, &file.adjacency);
    if let Some(v) = violations.first() {
        return Err(Error::InvalidGraph(v.0.clone()));
    }
    Graph::new(file.vertices, file.adjacency)
}

/// Canonical byte serialization: sorted keys, no insignificant whitespace,
/// one trailing newline.
pub fn emit_graph(g: &Graph) -> Vec<u8> {
    let file = GraphFile {
        adjacency: g.adjacency().to_vec(),
        vertices: g.names().to_vec(),
    };
    let mut out = serde_json::to_string(&file).expect("graphs serialize");
    out.push('\n');
    out.into_bytes()
}

pub fn parse_pair(bytes: &[u8]) -> Result<DbPair> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| Error::Parse("pair file is not valid UTF-8".into()))?;
    let file: PairFile = serde_json::from_str(text)
        .map_err(|e| Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    DbPair::new(file.b, file.d)
}

pub fn emit_pair(p: &DbPair) -> Vec<u8> {
    let file = PairFile {
        b: p.b.clone(),
        d: p.d.clone(),
    };
    let mut out = serde_json::to_string(&file).expect("pairs serialize");
    out.push('\n');
    out.into_bytes()
}

#[derive(Parser)]
#[command(
    name = "movecalc",
    version,
    about = "Graph moves, compiled matrix operations, canonical forms, and pointed K0 invariants"
)]
struct Cli {
    /// Emit machine-readable JSON instead of human-readable text.
    #[arg(long, global = true)]
    machine: bool,
    /// Seed for randomized search order in component matching.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Move budget for canonicalization (default scales with input size).
    #[arg(long, global = true)]
    step_budget: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check a graph file against the structural invariants.
    Validate { file: PathBuf },
    /// Vertex classes, components, canonical-form report, and pointed K0.
    Info { file: PathBuf },
    /// Convert a graph to its (D, B) pair.
    ToDb { file: PathBuf },
    /// Materialize the graph of a (D, B) pair.
    FromDb { file: PathBuf },
    /// Replay a move script on a graph.
    Apply { graph: PathBuf, script: PathBuf },
    /// Compile one matrix operation (JSON literal) into a move script.
    CompileOp {
        graph: PathBuf,
        /// Operation object, e.g. '{"op":"rowAdd","src":0,"dst":1}'.
        op: String,
        /// Write the certifying move script to this file.
        #[arg(long)]
        emit_script: Option<PathBuf>,
    },
    /// Bring a graph into canonical form.
    Canonicalize {
        graph: PathBuf,
        #[arg(long)]
        emit_script: Option<PathBuf>,
    },
    /// Report the canonical-form conditions for a graph.
    CheckCanonical { graph: PathBuf },
    /// Verify an equivalence certificate between two graphs.
    VerifyCert {
        graph_e: PathBuf,
        graph_f: PathBuf,
        cert: PathBuf,
    },
    /// Stepwise mode: print the pair and invariant, read one move per line.
    Repl { graph: PathBuf },
}

/// Entry point: returns the process exit code (0 success, 1 domain error,
/// 2 usage error).
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            println!("{}", serde_json::json!({ "error": e.to_string() }));
            1
        }
    }
}

fn read(path: &PathBuf) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

/// Transforming subcommands need the collected source, when present, listed
/// first so that emitted scripts replay on the input file itself.
fn prepared(g: &Graph) -> Result<(Graph, MoveScript)> {
    let sources = g.regular_sources();
    if !sources.is_empty() && sources[0] != 0 {
        return Err(Error::Precondition(
            "graphs with regular sources must list one at position 0 for script-certified transforms".into(),
        ));
    }
    collect_sources(g)
}

fn dispatch(cli: &Cli) -> Result<i32> {
    match &cli.cmd {
        Cmd::Validate { file } => {
            let bytes = read(file)?;
            let text = std::str::from_utf8(&bytes)
                .map_err(|_| Error::Parse("graph file is not valid UTF-8".into()))?;
            let parsed: GraphFile = serde_json::from_str(text).map_err(|e| {
                Error::Parse(format!("line {}, column {}: {e}", e.line(), e.column()))
            })?;
            let violations = validate_graph(&parsed.vertices, &parsed.adjacency);
            if cli.machine {
                let msgs: Vec<String> = violations.iter().map(|v| v.0.clone()).collect();
                println!("{}", serde_json::json!({ "violations": msgs }));
            } else if violations.is_empty() {
                println!("ok");
            } else {
                for v in &violations {
                    println!("violation: {v}");
                }
            }
            Ok(if violations.is_empty() { 0 } else { 1 })
        }
        Cmd::Info { file } => {
            let g = parse_graph(&read(file)?)?;
            let p = to_db(&g)?;
            info_report(cli, &g, &p)?;
            Ok(0)
        }
        Cmd::ToDb { file } => {
            let g = parse_graph(&read(file)?)?;
            let p = to_db(&g)?;
            print_bytes(&emit_pair(&p));
            Ok(0)
        }
        Cmd::FromDb { file } => {
            let p = parse_pair(&read(file)?)?;
            let g = from_db(&p)?;
            print_bytes(&emit_graph(&g));
            Ok(0)
        }
        Cmd::Apply { graph, script } => {
            let g = parse_graph(&read(graph)?)?;
            let text = String::from_utf8(read(script)?)
                .map_err(|_| Error::Parse("script is not valid UTF-8".into()))?;
            let s = MoveScript::from_jsonl(&text)?;
            let (end, _log) = apply_script(&g, &s)?;
            print_bytes(&emit_graph(&end));
            Ok(0)
        }
        Cmd::CompileOp {
            graph,
            op,
            emit_script,
        } => {
            let g = parse_graph(&read(graph)?)?;
            let (collected, mut script) = prepared(&g)?;
            let p = to_db(&collected)?;
            let op: MatOp =
                serde_json::from_str(op).map_err(|e| Error::Parse(format!("operation: {e}")))?;
            let compiled = matops::compile_op(&p, &op)?;
            script.extend(compiled.script);
            let (end, _log) = apply_script(&g, &script)?;
            if let Some(path) = emit_script {
                write_file(path, script.to_jsonl().as_bytes())?;
            }
            print_bytes(&emit_graph(&end));
            Ok(0)
        }
        Cmd::Canonicalize { graph, emit_script } => {
            let g = parse_graph(&read(graph)?)?;
            let (collected, mut script) = prepared(&g)?;
            let p = to_db(&collected)?;
            let (_canon, tail) = canonical::canonicalize(&p, cli.step_budget)?;
            script.extend(tail);
            let (end, _log) = apply_script(&g, &script)?;
            if let Some(path) = emit_script {
                write_file(path, script.to_jsonl().as_bytes())?;
            }
            print_bytes(&emit_graph(&end));
            Ok(0)
        }
        Cmd::CheckCanonical { graph } => {
            let g = parse_graph(&read(graph)?)?;
            let p = to_db(&g)?;
            let r = canonical::check_canonical(&p)?;
            if cli.machine {
                println!(
                    "{}",
                    serde_json::json!({
                        "canonical": r.is_canonical(),
                        "loops": r.loops_ok,
                        "paths_have_edges": r.paths_have_edges,
                        "infinite_multiplicities": r.infinite_multiplicities_ok,
                        "rich_components": r.rich_components_ok,
                        "witnesses": r.witnesses,
                        "trichotomy": r.trichotomy,
                        "mr": r.mr,
                    })
                );
            } else {
                println!("canonical: {}", r.is_canonical());
                for w in &r.witnesses {
                    println!("  fails: {w}");
                }
                for (c, t) in r.trichotomy.iter().enumerate() {
                    println!("  component {c}: {:?} (mr {})", t, r.mr[c]);
                }
            }
            Ok(0)
        }
        Cmd::VerifyCert {
            graph_e,
            graph_f,
            cert,
        } => {
            let ge = parse_graph(&read(graph_e)?)?;
            let gf = parse_graph(&read(graph_f)?)?;
            let pe = to_db(&ge)?;
            let pf = to_db(&gf)?;
            let cert: Certificate = serde_json::from_str(
                std::str::from_utf8(&read(cert)?)
                    .map_err(|_| Error::Parse("certificate is not valid UTF-8".into()))?,
            )
            .map_err(|e| Error::Parse(format!("certificate: {e}")))?;
            if canonical::match_components(&pe, &pf, cli.seed).is_none() {
                return Err(Error::Precondition(
                    "component structures do not match".into(),
                ));
            }
            let v = canonical::verify_certificate(&pe, &pf, &cert)?;
            if cli.machine {
                println!(
                    "{}",
                    serde_json::json!({
                        "claim_ok": v.claim_ok,
                        "achieved": v.achieved,
                        "pattern": v.pattern_ok,
                        "invertible": v.invertible,
                        "intertwines": v.intertwines,
                        "singular_columns_match": v.singular_columns_match,
                        "unit_diagonal_blocks": v.unit_diagonal_blocks,
                        "class_compatible": v.class_compatible,
                    })
                );
            } else {
                println!(
                    "claim: {}",
                    if v.claim_ok { "accepted" } else { "rejected" }
                );
                println!("strongest level passed: {:?}", v.achieved);
            }
            Ok(if v.claim_ok { 0 } else { 1 })
        }
        Cmd::Repl { graph } => repl(cli, graph),
    }
}

fn print_bytes(bytes: &[u8]) {
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    lock.write_all(bytes).expect("stdout");
}

fn format_k0(k: &PointedK0) -> String {
    let mut parts: Vec<String> = k.factors.iter().map(|f| format!("Z/{f}")).collect();
    if k.free_rank > 0 {
        parts.push(format!("Z^{}", k.free_rank));
    }
    let group = if parts.is_empty() {
        "0".to_string()
    } else {
        parts.join(" + ")
    };
    let mut class: Vec<String> = k.torsion_class.iter().map(|c| c.to_string()).collect();
    class.extend(k.free_class.iter().map(|c| c.to_string()));
    format!("{group}, class ({})", class.join(", "))
}

fn info_report(cli: &Cli, g: &Graph, p: &DbPair) -> Result<()> {
    let comps = p.components();
    let report = canonical::check_canonical(p)?;
    let k0 = ktheory::pointed_k0(p)?;
    let mut per_comp = Vec::new();
    for c in 0..comps.count() {
        per_comp.push(ktheory::pointed_k0_component(p, &comps, c)?);
    }
    if cli.machine {
        let comps_json: Vec<_> = (0..comps.count())
            .map(|c| {
                serde_json::json!({
                    "members": comps.members(c),
                    "regular": comps.regular_count(c),
                    "singular": comps.singular_count(c),
                    "trichotomy": report.trichotomy[c],
                    "mr": report.mr[c],
                    "k0": format_k0(&per_comp[c]),
                })
            })
            .collect();
        println!(
            "{}",
            serde_json::json!({
                "vertices": g.names(),
                "classes": g
                    .classes()
                    .iter()
                    .map(|c| format!("{c:?}"))
                    .collect::<Vec<_>>(),
                "components": comps_json,
                "canonical": report.is_canonical(),
                "witnesses": report.witnesses,
                "pointed_k0": format_k0(&k0),
            })
        );
    } else {
        println!("vertices ({}):", g.n());
        for (v, name) in g.names().iter().enumerate() {
            println!("  {v}: {name} [{:?}]", g.vertex_class(v)?);
        }
        println!("pair D = {:?}", p.d);
        for (i, row) in p.b.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|e| e.to_string()).collect();
            println!("  B[{i}] = ({})", cells.join(" "));
        }
        println!("components:");
        for c in 0..comps.count() {
            println!(
                "  {c}: members {:?}, regular {}, singular {}, mr {}, trichotomy {:?}, K0 {}",
                comps.members(c),
                comps.regular_count(c),
                comps.singular_count(c),
                report.mr[c],
                report.trichotomy[c],
                format_k0(&per_comp[c]),
            );
        }
        println!("canonical: {}", report.is_canonical());
        for w in &report.witnesses {
            println!("  fails: {w}");
        }
        println!("pointed K0: {}", format_k0(&k0));
    }
    Ok(())
}

fn repl(cli: &Cli, graph: &PathBuf) -> Result<i32> {
    let mut g = parse_graph(&read(graph)?)?;
    let stdin = std::io::stdin();
    print_state(cli, &g)?;
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| Error::Parse(e.to_string()))?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if line == "quit" || line == "q" {
            break;
        }
        match serde_json::from_str::<crate::moves::Move>(line) {
            Ok(mv) => match crate::moves::apply_move(&g, &mv) {
                Ok(applied) => {
                    g = applied.graph;
                    print_state(cli, &g)?;
                }
                Err(e) => println!("refused: {e}"),
            },
            Err(e) => println!("refused: cannot read move: {e}"),
        }
    }
    Ok(0)
}

fn print_state(cli: &Cli, g: &Graph) -> Result<()> {
    match to_db(g) {
        Ok(p) => {
            let k0 = ktheory::pointed_k0(&p)?;
            if cli.machine {
                println!(
                    "{}",
                    serde_json::json!({
                        "graph": serde_json::from_slice::<serde_json::Value>(&emit_graph(g)).unwrap(),
                        "d": p.d,
                        "b": p.b,
                        "k0": format_k0(&k0),
                    })
                );
            } else {
                print_bytes(&emit_graph(g));
                println!("D = {:?}", p.d);
                for (i, row) in p.b.iter().enumerate() {
                    let cells: Vec<String> = row.iter().map(|e| e.to_string()).collect();
                    println!("B[{i}] = ({})", cells.join(" "));
                }
                println!("pointed K0: {}", format_k0(&k0));
            }
        }
        Err(e) => println!("state has no pair view: {e}"),
    }
    Ok(())
}
