mod demo;

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num::{BigRational, One, ToPrimitive};
use staircase_pir::ingest::{ingest, read_dir_files, Manifest};
use staircase_pir::net::{parse_endpoints, retrieve, serve, ClientOptions, ServeOptions};
use staircase_pir::protocol::{
    capacity_asymptotic, capacity_finite, capacity_finite_parts, to_big,
};
use staircase_pir::sim::{
    run_simulation, summarize, write_runs_csv, write_sweep_csv, LatencyModel, SimConfig, Strategy,
};
use staircase_pir::verifier::{
    exhaustive_search_space, subset_label, verify_linearity, verify_privacy_exhaustive,
    verify_privacy_rank, verify_rates, verify_robustness, EXHAUSTIVE_LIMIT,
};
use staircase_pir::{Error, SchemeParams, StaircaseCode};

#[derive(Parser)]
#[command(
    name = "staircase-pir",
    version,
    about = "Universally robust private information retrieval"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    JsonLines,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum StrategyKind {
    /// Wait for exactly `--mu` servers.
    Wait,
    /// Extension: take whoever answered within `--deadline-ms`; fails below k.
    Deadline,
}

#[derive(Args, Clone, Debug)]
struct SchemeArgs {
    /// Number of servers.
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// Minimum number of responders.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Collusion threshold.
    #[arg(long, default_value_t = 1)]
    t: usize,
    /// Number of files.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Field size (prime, larger than n).
    #[arg(long, default_value_t = 257)]
    q: u64,
    /// Field symbols per file part.
    #[arg(long, default_value_t = 1)]
    batch: usize,
}

impl SchemeArgs {
    fn params(&self) -> staircase_pir::Result<SchemeParams> {
        SchemeParams::new(self.n, self.k, self.t, self.m, self.q, self.batch)
    }
}

#[derive(Args, Clone, Debug)]
struct StrategyArgs {
    #[arg(long, value_enum, default_value_t = StrategyKind::Wait)]
    strategy: StrategyKind,
    /// Responders to wait for (wait strategy).
    #[arg(long)]
    mu: Option<usize>,
    /// Deadline in milliseconds (deadline strategy).
    #[arg(long, default_value_t = 20)]
    deadline_ms: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Print the derived layout numbers.
    Params {
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Walk through one of the two built-in small instances.
    Demo {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        example: u8,
        #[arg(long)]
        mu: Option<usize>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run privacy, robustness and rate checks; exit 1 on any failure.
    Verify {
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Also run the exhaustive privacy check (when small enough) and
        /// the linearity check.
        #[arg(long)]
        all: bool,
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Finite and asymptotic capacity for m = 1..=M files.
    Capacity {
        #[arg(long)]
        t: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
    /// Simulate retrievals under random server latencies; writes CSV.
    Simulate {
        #[command(flatten)]
        scheme: SchemeArgs,
        #[command(flatten)]
        strategy: StrategyArgs,
        /// `exp:MEAN_MS` or `det:MS[,MS...]` (one value or one per server).
        #[arg(long, default_value = "exp:10")]
        latency: String,
        /// Probability that a server never answers.
        #[arg(long, default_value_t = 0.0)]
        silent: f64,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// One summary row per configuration instead of one row per run.
        #[arg(long)]
        summary: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ingest a directory of files and serve it on the given endpoints.
    Serve {
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, default_value_t = 257)]
        q: u64,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long)]
        data_dir: PathBuf,
        /// Where to write the manifest clients need.
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated listen addresses, one server replica each.
        #[arg(long, value_delimiter = ',', required = true)]
        endpoints: Vec<String>,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
    },
    /// Privately retrieve one file from running servers.
    Retrieve {
        #[arg(long)]
        manifest: PathBuf,
        /// Comma-separated server addresses in server order.
        #[arg(long, value_delimiter = ',', required = true)]
        endpoints: Vec<String>,
        /// File number, starting at 1.
        #[arg(long)]
        index: usize,
        #[command(flatten)]
        strategy: StrategyArgs,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
        /// Fix the query randomness; omit for fresh randomness from the OS.
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the restored file.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
    },
}

enum Failure {
    Usage(String),
    Verification,
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NotPrime(_)
            | Error::InvalidThreshold { .. }
            | Error::InvalidK { .. }
            | Error::FieldTooSmall { .. }
            | Error::InvalidParameter(_)
            | Error::OutOfRange { .. }
            | Error::FileIndexOutOfRange { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification) => ExitCode::from(1),
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Params { scheme, format } => cmd_params(&scheme, format),
        Command::Demo { example, mu, seed } => {
            print!("{}", demo::render(example, mu, seed)?);
            Ok(())
        }
        Command::Verify {
            scheme,
            all,
            trials,
            seed,
            format,
        } => cmd_verify(&scheme, all, trials, seed, format),
        Command::Capacity { t, k, m, format } => cmd_capacity(t, k, m, format),
        Command::Simulate {
            scheme,
            strategy,
            latency,
            silent,
            reps,
            seed,
            summary,
            out,
        } => cmd_simulate(
            &scheme, &strategy, &latency, silent, reps, seed, summary, out,
        ),
        Command::Serve {
            n,
            k,
            t,
            q,
            batch,
            data_dir,
            manifest,
            endpoints,
            delay_ms,
        } => cmd_serve(
            n, k, t, q, batch, &data_dir, &manifest, &endpoints, delay_ms,
        ),
        Command::Retrieve {
            manifest,
            endpoints,
            index,
            strategy,
            timeout_ms,
            seed,
            out,
            format,
        } => cmd_retrieve(
            &manifest, &endpoints, index, &strategy, timeout_ms, seed, &out, format,
        ),
    }
}

fn json_line(value: serde_json::Value) {
    println!("{value}");
}

fn cmd_params(scheme: &SchemeArgs, format: Format) -> CmdResult {
    let p = scheme.params()?;
    let fields: Vec<(&str, String)> = vec![
        ("n", p.n().to_string()),
        ("k", p.k().to_string()),
        ("t", p.t().to_string()),
        ("m", p.m().to_string()),
        ("q", p.q().to_string()),
        ("s", p.s().to_string()),
        ("h", p.h().to_string()),
        ("mus", join(p.mus())),
        ("alphas", join(p.alphas())),
        ("alpha", p.alpha().to_string()),
        ("alpha_prime", p.alpha_prime().to_string()),
        ("block_cols", join(p.block_cols())),
        ("randomness", p.randomness_count().to_string()),
        ("vector_len", p.vector_len().to_string()),
    ];
    match format {
        Format::Text => {
            for (k, v) in fields {
                println!("{k:<12} {v}");
            }
        }
        Format::Csv => {
            println!(
                "{}",
                fields.iter().map(|f| f.0).collect::<Vec<_>>().join(",")
            );
            println!(
                "{}",
                fields
                    .iter()
                    .map(|f| f.1.replace(' ', ";"))
                    .collect::<Vec<_>>()
                    .join(",")
            );
        }
        Format::JsonLines => {
            let map: serde_json::Map<String, serde_json::Value> = fields
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.into()))
                .collect();
            json_line(map.into());
        }
    }
    Ok(())
}

fn join(xs: &[usize]) -> String {
    xs.iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

struct Record {
    subset: String,
    mode: &'static str,
    verdict: bool,
    detail: String,
}

fn cmd_verify(
    scheme: &SchemeArgs,
    all: bool,
    trials: usize,
    seed: u64,
    format: Format,
) -> CmdResult {
    let params = scheme.params()?;
    let code = StaircaseCode::vandermonde(params.clone())?;
    let mut records = Vec::new();
    let mut notes = Vec::new();

    let rank = verify_privacy_rank(&code);
    for s in &rank.subsets {
        records.push(Record {
            subset: subset_label(&s.subset),
            mode: "rank",
            verdict: s.verdict,
            detail: format!("rank {}/{}", s.rank.unwrap_or(0), params.randomness_count()),
        });
    }
    if all {
        match exhaustive_search_space(&params, &[]) {
            Some(space) if space <= EXHAUSTIVE_LIMIT => {
                let ex = verify_privacy_exhaustive(&code)?;
                for s in &ex.subsets {
                    records.push(Record {
                        subset: subset_label(&s.subset),
                        mode: "exhaustive",
                        verdict: s.verdict,
                        detail: format!("{} assignments per file", space),
                    });
                }
            }
            _ => notes.push(
                "exhaustive privacy skipped: search space above limit (try a small q and m)"
                    .to_string(),
            ),
        }
        records.push(Record {
            subset: "-".into(),
            mode: "linearity",
            verdict: verify_linearity(&code, trials.max(1), seed)?,
            detail: format!("{} trials", trials.max(1)),
        });
    }
    let robust = verify_robustness(&code, trials, seed)?;
    for s in &robust.subsets {
        records.push(Record {
            subset: subset_label(&s.subset),
            mode: "robustness",
            verdict: s.failures == 0 && s.rate_matches,
            detail: format!(
                "decoded {}/{} rate {}",
                s.trials - s.failures,
                s.trials,
                s.rate
            ),
        });
    }
    for row in verify_rates(&params)? {
        records.push(Record {
            subset: format!("mu={}", row.mu),
            mode: "rate",
            verdict: row.matches,
            detail: format!(
                "symbols {} rate {} capacity {}",
                row.symbols, row.rate, row.capacity
            ),
        });
    }

    let ok = records.iter().all(|r| r.verdict);
    match format {
        Format::Text => {
            for r in &records {
                println!(
                    "{:<10} {:<12} {} {}",
                    r.mode,
                    r.subset,
                    if r.verdict { "PASS" } else { "FAIL" },
                    r.detail
                );
            }
            for n in &notes {
                println!("note: {n}");
            }
            if !rank.verdict() {
                println!("note: the rank criterion is only sufficient; confirm with the exhaustive check");
            }
            println!("verify: {}", if ok { "PASS" } else { "FAIL" });
        }
        Format::Csv => {
            println!("subset,mode,verdict");
            for r in &records {
                println!(
                    "{},{},{}",
                    csv_field(&r.subset),
                    r.mode,
                    if r.verdict { "PASS" } else { "FAIL" }
                );
            }
        }
        Format::JsonLines => {
            for r in &records {
                json_line(serde_json::json!({
                    "subset": r.subset,
                    "mode": r.mode,
                    "verdict": r.verdict,
                    "detail": r.detail,
                }));
            }
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Verification)
    }
}

fn csv_field(s: &str) -> String {
    if s.contains(',') {
        format!("\"{s}\"")
    } else {
        s.to_string()
    }
}

fn cmd_capacity(t: usize, k: usize, m: usize, format: Format) -> CmdResult {
    let c = to_big(capacity_asymptotic(t, k)?);
    if m == 0 {
        return Err(Failure::Usage("m must be at least 1".into()));
    }
    if format == Format::Csv {
        println!("m,t,k,cm_num,cm_den,cm_reduced,c,ratio");
    }
    for mm in 1..=m {
        let (num, den) = capacity_finite_parts(mm, t, k)?;
        let cm = capacity_finite(mm, t, k)?;
        let ratio: BigRational = &c / &cm;
        let approx = ratio.to_f64().unwrap_or(f64::NAN);
        match format {
            Format::Text => {
                let gap = &cm - &c;
                let bound = BigRational::new(t.into(), k.into());
                let bound = (0..mm).fold(BigRational::one(), |acc, _| acc * &bound);
                println!(
                    "m={mm} C_m({t},{k}) = {num}/{den} = {cm}  C({t},{k}) = {c}  C/C_m = {ratio} ({approx:.4})  gap {} <= (t/k)^m {}",
                    gap,
                    if gap <= bound { "holds" } else { "VIOLATED" }
                );
            }
            Format::Csv => println!("{mm},{t},{k},{num},{den},{cm},{c},{ratio}"),
            Format::JsonLines => json_line(serde_json::json!({
                "m": mm, "t": t, "k": k,
                "cm": format!("{num}/{den}"),
                "cm_reduced": cm.to_string(),
                "c": c.to_string(),
                "ratio": ratio.to_string(),
            })),
        }
    }
    Ok(())
}

fn parse_latencies(spec: &str, silent: f64, n: usize) -> Result<Vec<LatencyModel>, Failure> {
    let bad = || {
        Failure::Usage(format!(
            "latency `{spec}`: expected exp:MEAN or det:MS[,MS...]"
        ))
    };
    let (kind, rest) = spec.split_once(':').ok_or_else(bad)?;
    let values: Vec<f64> = rest
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    let base: Vec<LatencyModel> = match (kind, values.len()) {
        ("exp", 1) => vec![LatencyModel::Exponential { mean_ms: values[0] }; n],
        ("det", 1) => vec![LatencyModel::Deterministic { ms: values[0] }; n],
        ("det", len) if len == n => values
            .iter()
            .map(|&ms| LatencyModel::Deterministic { ms })
            .collect(),
        _ => return Err(bad()),
    };
    let models: Vec<LatencyModel> = if silent > 0.0 {
        base.into_iter()
            .map(|m| LatencyModel::Unresponsive {
                p: silent,
                fallback: Box::new(m),
            })
            .collect()
    } else {
        base
    };
    for m in &models {
        m.validate()?;
    }
    Ok(models)
}

#[allow(clippy::too_many_arguments)]
fn cmd_simulate(
    scheme: &SchemeArgs,
    strategy: &StrategyArgs,
    latency: &str,
    silent: f64,
    reps: usize,
    seed: u64,
    summary: bool,
    out: Option<PathBuf>,
) -> CmdResult {
    let params = scheme.params()?;
    let code = StaircaseCode::vandermonde(params.clone())?;
    let latencies = parse_latencies(latency, silent, params.n())?;
    let strategies: Vec<Strategy> = match (strategy.strategy, strategy.mu) {
        (StrategyKind::Wait, Some(mu)) => vec![Strategy::WaitFor(mu)],
        (StrategyKind::Wait, None) => (params.k()..=params.n()).map(Strategy::WaitFor).collect(),
        (StrategyKind::Deadline, _) => vec![Strategy::Deadline(strategy.deadline_ms)],
    };
    let configs: Vec<SimConfig> = strategies
        .into_iter()
        .map(|s| SimConfig {
            id: match s {
                Strategy::WaitFor(mu) => format!("wait{mu}"),
                Strategy::Deadline(ms) => format!("deadline{ms}"),
            },
            code: code.clone(),
            latencies: latencies.clone(),
            strategy: s,
            seed,
            repetitions: reps,
        })
        .collect();
    let mut sink: Box<dyn Write> = match &out {
        Some(path) => Box::new(File::create(path)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut rows = Vec::new();
    let mut buffer = Vec::new();
    for (i, cfg) in configs.iter().enumerate() {
        let runs = run_simulation(cfg)?;
        if summary {
            rows.push(summarize(cfg, &runs));
        } else {
            let mut part = Vec::new();
            write_runs_csv(&mut part, &cfg.id, cfg.strategy, &runs)?;
            // keep a single header across configurations
            let text = String::from_utf8_lossy(&part).into_owned();
            let body = if i == 0 {
                text.as_str()
            } else {
                text.split_once('\n').map_or("", |x| x.1)
            };
            buffer.extend_from_slice(body.as_bytes());
        }
    }
    if summary {
        write_sweep_csv(&mut sink, &rows)?;
    } else {
        sink.write_all(&buffer)?;
    }
    sink.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_serve(
    n: usize,
    k: usize,
    t: usize,
    q: u64,
    batch: usize,
    data_dir: &std::path::Path,
    manifest_path: &std::path::Path,
    endpoints: &[String],
    delay_ms: u64,
) -> CmdResult {
    let files = read_dir_files(data_dir)?;
    let (manifest, db) = ingest(&files, n, k, t, q, batch)?;
    manifest.save(manifest_path)?;
    let code = StaircaseCode::vandermonde(manifest.params.clone())?;
    let db = Arc::new(db);
    let options = ServeOptions {
        response_delay: Duration::from_millis(delay_ms),
        ..Default::default()
    };
    let mut handles = Vec::new();
    for (i, ep) in endpoints.iter().enumerate() {
        let h = serve(ep.as_str(), code.clone(), Arc::clone(&db), options.clone())?;
        println!("server {} listening on {}", i + 1, h.local_addr());
        handles.push(h);
    }
    println!(
        "serving {} files with {}",
        manifest.files.len(),
        describe(&manifest.params)
    );
    io::stdout().flush()?;
    for h in handles {
        h.wait();
    }
    Ok(())
}

fn describe(p: &SchemeParams) -> String {
    format!(
        "(n, k, t) = ({}, {}, {}), q = {}, s = {}",
        p.n(),
        p.k(),
        p.t(),
        p.q(),
        p.s()
    )
}

#[allow(clippy::too_many_arguments)]
fn cmd_retrieve(
    manifest_path: &std::path::Path,
    endpoints: &[String],
    index: usize,
    strategy: &StrategyArgs,
    timeout_ms: u64,
    seed: Option<u64>,
    out: &std::path::Path,
    format: Format,
) -> CmdResult {
    let manifest = Manifest::load(manifest_path)?;
    let p = manifest.params.clone();
    if index == 0 || index > p.m() {
        return Err(Failure::Usage(format!("--index must lie in 1..={}", p.m())));
    }
    let code = StaircaseCode::vandermonde(p.clone())?;
    let addrs = parse_endpoints(endpoints)?;
    let strategy = match strategy.strategy {
        StrategyKind::Wait => Strategy::WaitFor(strategy.mu.unwrap_or(p.n())),
        StrategyKind::Deadline => Strategy::Deadline(strategy.deadline_ms),
    };
    let got = retrieve(
        &addrs,
        &code,
        index - 1,
        ClientOptions {
            strategy,
            timeout: Duration::from_millis(timeout_ms),
            seed,
        },
    )?;
    let bytes = manifest.restore(index - 1, &got.file)?;
    fs::write(out, &bytes)?;
    let m = &got.metrics;
    match format {
        Format::Text => println!(
            "retrieved {} ({} bytes) from servers {} rate {} wait {:.3} ms symbols {}",
            manifest.files[index - 1].name,
            bytes.len(),
            subset_label(&got.responders),
            m.rate,
            m.wait_ms(),
            m.symbols
        ),
        Format::Csv => {
            println!("file,bytes,responders,rate_num,rate_den,wait_ms,symbols");
            println!(
                "{},{},{},{},{},{:.3},{}",
                manifest.files[index - 1].name,
                bytes.len(),
                got.responders
                    .iter()
                    .map(|l| (l + 1).to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                m.rate.numer(),
                m.rate.denom(),
                m.wait_ms(),
                m.symbols
            );
        }
        Format::JsonLines => json_line(serde_json::json!({
            "file": manifest.files[index - 1].name,
            "bytes": bytes.len(),
            "responders": got.responders.iter().map(|l| l + 1).collect::<Vec<_>>(),
            "rate": m.rate.to_string(),
            "wait_ms": m.wait_ms(),
            "symbols": m.symbols,
        })),
    }
    Ok(())
}
