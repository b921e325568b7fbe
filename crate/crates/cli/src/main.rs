use std::fs;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Parser, Subcommand};
use serde::Serialize;

use sqconn::engine::Stats;
use sqconn::replay::{ReplayOptions, Replayer, SCHEMA};
use sqconn::trace::{format_trace, parse_trace_bytes, Mix, TraceOp};
use sqconn::workload::{aspect_spike, generate, GenParams};

/// Connectivity of dynamic square sets: replay, generate and benchmark traces.
#[derive(Parser)]
#[command(name = "sqconn", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a trace, printing one line per query.
    Replay {
        /// Trace file, or `-` for stdin.
        trace: PathBuf,
        /// Verify every query against the brute-force oracle.
        #[arg(long)]
        check: bool,
        /// Also verify all structural state after every update.
        #[arg(long)]
        check_deep: bool,
        /// Write the JSON stats record here instead of stderr.
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
    /// Write a pseudorandom trace.
    Gen {
        /// Initial inserts.
        #[arg(long, default_value_t = 100)]
        n: usize,
        /// Mixed operations after the initial inserts.
        #[arg(long, default_value_t = 1000)]
        ops: usize,
        /// Largest side; sides are log-uniform in [1, psi-max].
        #[arg(long, default_value_t = 16)]
        psi_max: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Insert:delete:query weights.
        #[arg(long, default_value = "45:25:30")]
        mix: Mix,
        /// Positions are drawn from [0, box).
        #[arg(long = "box", value_name = "SIDE")]
        box_side: Option<i64>,
        /// Big square, small square, delete small, n big inserts, reinsert small.
        #[arg(long)]
        aspect_spike: bool,
        #[arg(short, long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Time a trace and record per-update work.
    Bench {
        trace: PathBuf,
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        reps: u32,
        /// Write the JSON report here instead of stdout.
        #[arg(long, value_name = "PATH")]
        stats: Option<PathBuf>,
    },
}

/// Exit status 1: the input could not be used.
struct InputError(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for InputError {
    fn from(e: E) -> Self {
        InputError(e.into())
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, InputError> {
    if path == Path::new("-") {
        let mut buf = Vec::new();
        io::stdin().read_to_end(&mut buf).context("reading stdin")?;
        Ok(buf)
    } else {
        Ok(fs::read(path).with_context(|| format!("reading {}", path.display()))?)
    }
}

fn load_trace(path: &Path) -> Result<Vec<(usize, TraceOp)>, InputError> {
    let bytes = read_input(path)?;
    Ok(parse_trace_bytes(&bytes).with_context(|| path.display().to_string())?)
}

fn write_json(value: &impl Serialize, path: Option<&Path>, fallback: &mut dyn Write) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display())),
        None => Ok(writeln!(fallback, "{text}")?),
    }
}

fn replay(trace: &Path, opts: ReplayOptions, stats: Option<&Path>) -> Result<ExitCode, InputError> {
    let ops = load_trace(trace)?;
    let mut r = Replayer::new(opts);
    let mut out = BufWriter::new(io::stdout().lock());
    let mut mismatches = 0u64;
    for (line, op) in &ops {
        let step = match r.step(*line, op) {
            Ok(s) => s,
            Err(e) => {
                out.flush()?;
                return Err(InputError(anyhow::Error::new(e).context(trace.display().to_string())));
            }
        };
        if let Some(a) = step.answer {
            writeln!(out, "{a}")?;
        }
        if let Some(m) = step.mismatch {
            mismatches += 1;
            out.flush()?;
            eprintln!("mismatch: {m}");
        }
    }
    out.flush()?;
    write_json(&r.summary(), stats, &mut io::stderr())?;
    Ok(if mismatches > 0 { ExitCode::from(2) } else { ExitCode::SUCCESS })
}

#[derive(Serialize)]
struct Percentiles {
    p50: u64,
    p90: u64,
    p99: u64,
    max: u64,
}

impl Percentiles {
    fn of(samples: &mut [u64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        samples.sort_unstable();
        let at = |q: f64| samples[((samples.len() - 1) as f64 * q).round() as usize];
        Some(Self {
            p50: at(0.5),
            p90: at(0.9),
            p99: at(0.99),
            max: at(1.0),
        })
    }
}

/// Per-operation columns from the first repetition. Queries record zero work.
#[derive(Default, Serialize)]
struct Series {
    contained: Vec<usize>,
    perimeter: Vec<usize>,
    quadtree_nodes: Vec<usize>,
    matched_edges: Vec<usize>,
    proxy_edges: Vec<usize>,
}

#[derive(Serialize)]
struct BenchReport {
    schema: u32,
    ops: usize,
    repetitions: u32,
    update_ns: Option<Percentiles>,
    query_ns: Option<Percentiles>,
    total_seconds: f64,
    series: Series,
    #[serde(rename = "final")]
    final_state: Option<Stats>,
}

fn bench(trace: &Path, reps: u32, stats: Option<&Path>) -> Result<ExitCode, InputError> {
    let ops = load_trace(trace)?;
    let mut series = Series::default();
    let (mut update_ns, mut query_ns) = (Vec::new(), Vec::new());
    let mut final_state = None;
    let start = Instant::now();
    for rep in 0..reps {
        let mut r = Replayer::new(ReplayOptions::default());
        for (line, op) in &ops {
            let t = Instant::now();
            let step = r
                .step(*line, op)
                .map_err(|e| InputError(anyhow::Error::new(e).context(trace.display().to_string())))?;
            let ns = t.elapsed().as_nanos() as u64;
            let is_query = step.answer.is_some();
            if is_query { &mut query_ns } else { &mut update_ns }.push(ns);
            if rep == 0 {
                let e = r.engine();
                let w = e.last_update();
                let (c, p) = if is_query { (0, 0) } else { (w.contained, w.perimeter) };
                series.contained.push(c);
                series.perimeter.push(p);
                series.quadtree_nodes.push(e.quadtree().len());
                series.matched_edges.push(e.matching().edge_count());
                series.proxy_edges.push(e.proxy().edge_count());
            }
        }
        final_state = (!ops.is_empty()).then(|| r.engine().stats());
    }
    let report = BenchReport {
        schema: SCHEMA,
        ops: ops.len(),
        repetitions: reps,
        update_ns: Percentiles::of(&mut update_ns),
        query_ns: Percentiles::of(&mut query_ns),
        total_seconds: start.elapsed().as_secs_f64(),
        series,
        final_state,
    };
    write_json(&report, stats, &mut io::stdout().lock())?;
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn gen(
    n: usize,
    ops: usize,
    psi_max: u64,
    seed: u64,
    mix: Mix,
    box_side: Option<i64>,
    spike: bool,
    out: Option<&Path>,
) -> Result<ExitCode, InputError> {
    let (header, trace) = if spike {
        (
            format!("# sqconn gen --aspect-spike --n {n} --psi-max {psi_max} --seed {seed}"),
            aspect_spike(n, psi_max, seed, box_side)?,
        )
    } else {
        let p = GenParams {
            n,
            ops,
            psi_max,
            seed,
            mix,
            box_side,
        };
        (
            format!("# sqconn gen --n {n} --ops {ops} --psi-max {psi_max} --seed {seed} --mix {mix}"),
            generate(&p)?,
        )
    };
    let text = format!("{header}\n{}", format_trace(&trace));
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.cmd {
        Cmd::Replay {
            trace,
            check,
            check_deep,
            stats,
        } => replay(&trace, ReplayOptions { check, check_deep }, stats.as_deref()),
        Cmd::Gen {
            n,
            ops,
            psi_max,
            seed,
            mix,
            box_side,
            aspect_spike,
            out,
        } => gen(n, ops, psi_max, seed, mix, box_side, aspect_spike, out.as_deref()),
        Cmd::Bench { trace, reps, stats } => bench(&trace, reps, stats.as_deref()),
    };
    match result {
        Ok(code) => code,
        Err(InputError(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
