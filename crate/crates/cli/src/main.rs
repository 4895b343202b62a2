use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde_json::json;

use dppsi::accountant::PlanReport;
use dppsi::bench::{bench_sweep, write_csv, SweepOptions, DEFAULT_OVERLAP};
use dppsi::inputs::load_party;
use dppsi::oracles::{exact_pmf_alg1, OracleScenario};
use dppsi::protocol::{DpIntersection, Role};
use dppsi::transport::{run_local, run_networked, BenchRecord, Endpoint, PartyInput, RunConfig};

/// Log filter variable; accepts `env_logger` syntax such as `info` or
/// `dppsi=debug`.
const LOG_ENV: &str = "DPPSI_LOG";

#[derive(Parser)]
#[command(
    name = "dppsi",
    version,
    about = "Differentially private set intersection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sender over TCP. The sender learns no items.
    RunSender(NetworkArgs),
    /// Run the receiver over TCP and write the released items.
    RunReceiver(NetworkArgs),
    /// Run both parties in this process.
    Local(LocalArgs),
    /// Print the privacy and utility guarantees for a configuration.
    Plan(PlanArgs),
    /// Time synthetic runs at sizes 2^k and write CSV.
    Bench(BenchArgs),
}

#[derive(Args, Clone)]
struct Budget {
    /// Sender privacy budget; sets p_A and q to their optimal values.
    #[arg(long, default_value_t = 3.0)]
    eps_a: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta_b: f64,
    /// Receiver subsampling rate, in [0.5, 1].
    #[arg(long, default_value_t = 0.9)]
    p_b: f64,
    /// Fixed seed for reproducible runs. Omit for OS randomness.
    #[arg(long)]
    seed: Option<u64>,
}

impl Budget {
    fn config(&self) -> Result<RunConfig> {
        RunConfig::new(self.eps_a, self.delta_b, self.p_b, self.seed)
            .context("invalid privacy parameters")
    }
}

#[derive(Args)]
#[group(id = "endpoint", required = true, multiple = false)]
struct EndpointArgs {
    /// Wait for the peer on ADDR.
    #[arg(long, value_name = "ADDR", group = "endpoint")]
    listen: Option<String>,
    /// Connect to the peer at ADDR, retrying for up to 30 s.
    #[arg(long, value_name = "ADDR", group = "endpoint")]
    connect: Option<String>,
}

impl EndpointArgs {
    fn endpoint(&self) -> Endpoint {
        match (&self.listen, &self.connect) {
            (Some(addr), _) => Endpoint::Listen(addr.clone()),
            (None, Some(addr)) => Endpoint::Connect(addr.clone()),
            (None, None) => unreachable!("clap requires one endpoint"),
        }
    }
}

#[derive(Args)]
struct NetworkArgs {
    /// Items, one per line.
    #[arg(long)]
    input: PathBuf,
    /// Receiver only: one number per item line.
    #[arg(long)]
    payloads: Option<PathBuf>,
    #[command(flatten)]
    endpoint: EndpointArgs,
    #[command(flatten)]
    budget: Budget,
    /// Receiver: file for the released items. Sender: file for the run summary.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalArgs {
    /// Sender items, one per line.
    #[arg(long)]
    input: PathBuf,
    /// Receiver items, one per line.
    #[arg(long)]
    receiver_input: PathBuf,
    /// Receiver payloads, one number per receiver item line.
    #[arg(long)]
    payloads: Option<PathBuf>,
    #[command(flatten)]
    budget: Budget,
    /// File for the released items.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long, default_value_t = 3.0)]
    eps_a: f64,
    #[arg(long, default_value_t = 1e-6)]
    delta_b: f64,
    #[arg(long, default_value_t = 0.9)]
    p_b: f64,
    /// Expected |X ∩ Y|; adds the realized-size receiver bound.
    #[arg(long)]
    intersection: Option<u64>,
    /// Expected |Y \ X|; with --intersection, adds expected precision.
    #[arg(long)]
    complement: Option<u64>,
    /// Print JSON instead of key=value lines.
    #[arg(long)]
    json: bool,
    /// Write the exact PMF of the sender's view of |X ∩ Y_sub| as k,prob
    /// CSV.
    #[arg(long, value_name = "PATH", requires = "pmf_size")]
    pmf: Option<PathBuf>,
    /// |X ∩ Y| for --pmf, at most 64.
    #[arg(long, value_name = "N", requires = "pmf")]
    pmf_size: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    bench_kmin: u32,
    #[arg(long, default_value_t = 17)]
    bench_kmax: u32,
    /// Share of items common to both sets.
    #[arg(long, default_value_t = DEFAULT_OVERLAP)]
    overlap: f64,
    /// Runs per size; the fastest is kept.
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[command(flatten)]
    budget: Budget,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_items(path: &Path, result: &DpIntersection) -> Result<()> {
    let mut w = output(Some(path))?;
    for item in &result.elements {
        w.write_all(item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn record_json(r: &BenchRecord) -> serde_json::Value {
    serde_json::to_value(r).expect("records serialize")
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load(items: &Path, payloads: Option<&Path>) -> Result<PartyInput> {
    load_party(items, payloads).with_context(|| format!("cannot load {}", items.display()))
}

fn run_party(role: Role, args: NetworkArgs) -> Result<()> {
    let cfg = args.budget.config()?;
    if role == Role::Sender && args.payloads.is_some() {
        bail!("--payloads belongs to the receiver");
    }
    let input = load(&args.input, args.payloads.as_deref())?;
    let endpoint = args.endpoint.endpoint();
    info!("{role:?} with {} items, {endpoint:?}", input.items.len());
    let outcome = run_networked(&cfg, role, input, &endpoint)?;
    let summary = match (role, &outcome.result) {
        (Role::Sender, _) => {
            let summary = json!({
                "role": "sender",
                "view": outcome.sender_view,
                "record": record_json(&outcome.record),
            });
            if let Some(path) = &args.out {
                let mut w = output(Some(path))?;
                serde_json::to_writer_pretty(&mut w, &summary)?;
                writeln!(w)?;
                w.flush()?;
            }
            summary
        }
        (Role::Receiver, Some(result)) => {
            if let Some(path) = &args.out {
                write_items(path, result)?;
            }
            json!({
                "role": "receiver",
                "released": result.elements.len(),
                "payload_sum": result.payload_sum,
                "record": record_json(&outcome.record),
            })
        }
        (Role::Receiver, None) => unreachable!("the receiver always has output"),
    };
    print_json(&summary)
}

fn local(args: LocalArgs) -> Result<()> {
    let cfg = args.budget.config()?;
    let sender = load(&args.input, None)?;
    let receiver = load(&args.receiver_input, args.payloads.as_deref())?;
    let outcome = run_local(&cfg, sender, receiver)?;
    if let Some(path) = &args.out {
        write_items(path, &outcome.result)?;
    }
    print_json(&json!({
        "released": outcome.result.elements.len(),
        "payload_sum": outcome.result.payload_sum,
        "sender_view": outcome.sender_view,
        "record": record_json(&outcome.record),
    }))
}

fn plan(args: PlanArgs) -> Result<()> {
    RunConfig::new(args.eps_a, args.delta_b, args.p_b, None)
        .context("invalid privacy parameters")?;
    let report = PlanReport::build(
        args.eps_a,
        args.p_b,
        args.delta_b,
        args.intersection,
        args.complement,
    )?;
    if let (Some(path), Some(size)) = (&args.pmf, args.pmf_size) {
        let pmf = exact_pmf_alg1(&OracleScenario::new(size, size, args.p_b)?)?;
        pmf.write_csv(output(Some(path))?)?;
    }
    let text = if args.json {
        report.to_json() + "\n"
    } else {
        report.to_text()
    };
    let mut w = output(args.out.as_deref())?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn bench(args: BenchArgs) -> Result<()> {
    if args.bench_kmin > args.bench_kmax {
        bail!("--bench-kmin exceeds --bench-kmax");
    }
    if args.bench_kmax > 24 {
        warn!(
            "2^{} items per party needs several GB of memory",
            args.bench_kmax
        );
    }
    let cfg = args.budget.config()?;
    let opts = SweepOptions {
        overlap: args.overlap,
        repetitions: args.repetitions,
    };
    let records = bench_sweep(args.bench_kmin, args.bench_kmax, &cfg, opts)?;
    write_csv(&records, output(args.out.as_deref())?)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    match Cli::parse().command {
        Command::RunSender(a) => run_party(Role::Sender, a),
        Command::RunReceiver(a) => run_party(Role::Receiver, a),
        Command::Local(a) => local(a),
        Command::Plan(a) => plan(a),
        Command::Bench(a) => bench(a),
    }
}
