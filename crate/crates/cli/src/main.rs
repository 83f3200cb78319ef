use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slp_core::candidates::{ItemView, Universe};
use slp_core::costmodel::{CostModel, TableCostModel, UnitCostModel};
use slp_core::emit::CategoryCounts;
use slp_core::fuzz;
use slp_core::ilp;
use slp_core::ir::{parse_function, DepGraph, Function};
use slp_core::permute::{self, Limits};
use slp_core::pipeline::{pairwise_objective, vectorize, Options, Outcome, Strategy};
use slp_core::verify::{equivalent, parse_state, run_scalar, run_vector, Config, MachineState};

/// Straight-line SIMD vectorizer.
#[derive(Parser)]
#[command(name = "slpvec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vectorize one function and report what was emitted.
    Vectorize(VectorizeArgs),
    /// Run every strategy on a file or on each `.ir` file of a directory.
    Compare(CompareArgs),
    /// Execute a function on an input state and print the final state.
    Run(RunArgs),
}

#[derive(Args)]
struct Common {
    /// `unit`, `haswell-like`, or `table:<path>`.
    #[arg(long, default_value = "unit")]
    cost: String,
    #[arg(long, default_value_t = 2)]
    max_lanes: usize,
    /// Solver time limit per packing iteration.
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// Largest multi-node and candidate count for lane-order search.
    #[arg(long, default_value_t = Limits::default().nodes)]
    perm_nodes: usize,
    #[arg(long, default_value_t = Limits::default().candidates)]
    perm_candidates: usize,
}

#[derive(Args)]
struct VectorizeArgs {
    file: PathBuf,
    #[arg(long, default_value = "goslp")]
    strategy: Strategy,
    #[command(flatten)]
    common: Common,
    /// Compare against the scalar program on this many random inputs.
    #[arg(long, num_args = 0..=1, require_equals = true, default_missing_value = "16")]
    verify: Option<usize>,
    /// Seed for the random inputs of `--verify`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also compare on this input state.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    trap_float_div: bool,
    /// Print feasible sets, candidate pairs and their use maps.
    #[arg(long)]
    dump_candidates: bool,
    /// Print the linearized problem of the first packing iteration.
    #[arg(long)]
    dump_ilp: bool,
    /// Print the lane-order graph with candidate and chosen masks.
    #[arg(long)]
    dump_graph: bool,
    /// Write the vectorized function here; `-` for standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the stats here instead of standard output; `-` for standard output.
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    path: PathBuf,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// Initial state as `array NAME = v, v, _` lines.
    #[arg(long)]
    input: PathBuf,
    /// Run the vectorized code of this strategy instead of the scalar program.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    trap_float_div: bool,
}

fn cost_model(spec: &str) -> Result<Box<dyn CostModel>> {
    Ok(match spec {
        "unit" => Box::new(UnitCostModel),
        "haswell-like" => Box::new(TableCostModel::haswell_like()),
        _ => match spec.strip_prefix("table:") {
            Some(path) => Box::new(TableCostModel::load(Path::new(path)).with_context(|| format!("cost table {path}"))?),
            None => bail!("unknown cost model `{spec}`"),
        },
    })
}

impl Common {
    fn options(&self, strategy: Strategy) -> Options {
        Options {
            strategy,
            max_lanes: self.max_lanes,
            timeout: self.timeout_ms.map(Duration::from_millis),
            limits: Limits {
                nodes: self.perm_nodes,
                candidates: self.perm_candidates,
            },
        }
    }
}

fn read_function(path: &Path) -> Result<Function> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_function(&text).with_context(|| format!("parsing {}", path.display()))
}

fn read_state(f: &Function, path: &Path) -> Result<MachineState> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_state(f, &text).with_context(|| format!("parsing {}", path.display()))
}

fn write_to(dest: &Path, text: &str) -> Result<()> {
    if dest == Path::new("-") {
        print!("{text}");
        Ok(())
    } else {
        fs::write(dest, text).with_context(|| format!("writing {}", dest.display()))
    }
}

fn stats_doc(
    args: &VectorizeArgs,
    f: &Function,
    universe: &Universe,
    objective: Option<i64>,
    out: &Outcome,
    verified: Option<(usize, usize)>,
) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: &dyn std::fmt::Display| writeln!(s, "{k}: {v}").unwrap();
    kv("function", &f.name);
    kv("strategy", &args.strategy);
    kv("cost", &args.common.cost);
    kv("max_lanes", &args.common.max_lanes);
    kv("statements", &f.len());
    kv("candidate_pairs", &universe.len());
    kv("packs", &out.packs.packs.len());
    let widths: Vec<String> = out.packs.packs.iter().map(|p| p.width().to_string()).collect();
    kv("pack_widths", &widths.join(","));
    match objective {
        Some(o) => kv("objective", &o),
        None => kv("objective", &"-"),
    }
    for (k, it) in out.packs.log.iter().enumerate() {
        let p = format!("iteration.{}", k + 1);
        kv(&format!("{p}.width"), &it.width);
        kv(&format!("{p}.candidates"), &it.candidates);
        kv(&format!("{p}.status"), &format!("{:?}", it.status).to_lowercase());
        kv(&format!("{p}.objective"), &it.objective);
        kv(&format!("{p}.selected"), &it.selected);
        kv(&format!("{p}.cuts"), &it.cuts);
    }
    kv("permute_cost", &out.selection.cost);
    kv(
        "permute_fallback",
        &out.fallback.as_ref().map_or("none".to_string(), |e| e.to_string()),
    );
    let c = &out.counts;
    kv("scalar", &c.scalar);
    kv("vector", &c.vector);
    kv("packing", &c.packing);
    kv("unpacking", &c.unpacking);
    kv("permute", &c.permute);
    kv("total", &c.total);
    if let Some((runs, mismatches)) = verified {
        kv("verify_runs", &runs);
        kv("verify_mismatches", &mismatches);
    }
    s
}

fn cmd_vectorize(args: &VectorizeArgs) -> Result<bool> {
    let f = read_function(&args.file)?;
    let g = DepGraph::build(&f);
    let cm = cost_model(&args.common.cost)?;
    let opts = args.common.options(args.strategy);
    let view = ItemView::scalars(&f, &g);
    let universe = Universe::build(&view);
    if args.dump_candidates {
        print!("{}", universe.dump(&view));
    }
    if args.dump_ilp {
        let form = ilp::encode(&view, &universe, cm.as_ref())?;
        print!("{}", ilp::linearize(&form).dump());
    }
    let out = vectorize(&f, &g, cm.as_ref(), &opts)?;
    if args.dump_graph {
        print!("{}", permute::dump(&out.graph, &out.masks, Some(&out.selection)));
    }
    let objective = pairwise_objective(&f, &g, cm.as_ref(), &out.packs)?;

    let cfg = Config {
        trap_float_div: args.trap_float_div,
    };
    let mut inputs = Vec::new();
    if let Some(path) = &args.input {
        inputs.push(read_state(&f, path)?);
    }
    if let Some(runs) = args.verify {
        let mut r = fuzz::rng(args.seed);
        inputs.extend((0..runs).map(|_| fuzz::random_state(&f, &mut r)));
    }
    let verified = (args.verify.is_some() || args.input.is_some()).then(|| {
        let bad = inputs
            .iter()
            .filter(|init| !equivalent(&run_scalar(&f, init, cfg), &run_vector(&out.code, init, cfg)))
            .count();
        (inputs.len(), bad)
    });

    if let Some(dest) = &args.out {
        write_to(dest, &out.code.to_string())?;
    }
    let stats = stats_doc(args, &f, &universe, objective, &out, verified);
    match &args.stats {
        Some(dest) => write_to(dest, &stats)?,
        None => print!("{stats}"),
    }
    if let Some((runs, bad)) = verified {
        if bad > 0 {
            eprintln!("error: {bad} of {runs} inputs diverge from the scalar program");
            return Ok(false);
        }
    }
    Ok(true)
}

fn ir_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| format!("listing {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ir"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .ir files in {}", path.display());
    }
    Ok(files)
}

#[derive(Default, Clone, Copy)]
struct Row {
    counts: CategoryCounts,
    objective: Option<i64>,
}

impl Row {
    fn add(&mut self, other: &Row) {
        let (a, b) = (&mut self.counts, &other.counts);
        a.scalar += b.scalar;
        a.vector += b.vector;
        a.packing += b.packing;
        a.unpacking += b.unpacking;
        a.permute += b.permute;
        a.total += b.total;
        self.objective = match (self.objective, other.objective) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
    }
}

fn table(out: &mut String, title: &str, rows: &[(Strategy, Row)]) {
    writeln!(out, "{title}").unwrap();
    writeln!(
        out,
        "  {:<8} {:>7} {:>7} {:>8} {:>10} {:>8} {:>6} {:>10}",
        "strategy", "scalar", "vector", "packing", "unpacking", "permute", "total", "objective"
    )
    .unwrap();
    for (s, r) in rows {
        let c = &r.counts;
        let obj = r.objective.map_or("-".to_string(), |o| o.to_string());
        writeln!(
            out,
            "  {:<8} {:>7} {:>7} {:>8} {:>10} {:>8} {:>6} {:>10}",
            s.name(),
            c.scalar,
            c.vector,
            c.packing,
            c.unpacking,
            c.permute,
            c.total,
            obj
        )
        .unwrap();
    }
}

fn cmd_compare(args: &CompareArgs) -> Result<bool> {
    let cm = cost_model(&args.common.cost)?;
    let files = ir_files(&args.path)?;
    let mut report = String::new();
    let mut sums: Vec<(Strategy, Row)> = Strategy::ALL
        .iter()
        .map(|&s| {
            let zero = Row {
                objective: Some(0),
                ..Row::default()
            };
            (s, zero)
        })
        .collect();
    for file in &files {
        let f = read_function(file)?;
        let g = DepGraph::build(&f);
        let mut rows = Vec::new();
        for (k, s) in Strategy::ALL.into_iter().enumerate() {
            let out = vectorize(&f, &g, cm.as_ref(), &args.common.options(s))
                .with_context(|| format!("{} with {s}", file.display()))?;
            let row = Row {
                counts: out.counts,
                objective: pairwise_objective(&f, &g, cm.as_ref(), &out.packs)?,
            };
            sums[k].1.add(&row);
            rows.push((s, row));
        }
        table(&mut report, &file.display().to_string(), &rows);
    }
    if files.len() > 1 {
        table(&mut report, &format!("total over {} files", files.len()), &sums);
    }
    print!("{report}");
    Ok(true)
}

fn cmd_run(args: &RunArgs) -> Result<bool> {
    let f = read_function(&args.file)?;
    let init = read_state(&f, &args.input)?;
    let cfg = Config {
        trap_float_div: args.trap_float_div,
    };
    let result = match args.strategy {
        None => run_scalar(&f, &init, cfg),
        Some(s) => {
            let g = DepGraph::build(&f);
            let cm = cost_model(&args.common.cost)?;
            let out = vectorize(&f, &g, cm.as_ref(), &args.common.options(s))?;
            run_vector(&out.code, &init, cfg)
        }
    };
    match result {
        Ok(state) => {
            print!("{}", state.display(&f));
            Ok(true)
        }
        Err(e) => {
            eprintln!("error: execution failed: {e}");
            Ok(false)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Vectorize(a) => cmd_vectorize(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Run(a) => cmd_run(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
