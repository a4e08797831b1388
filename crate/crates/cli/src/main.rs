use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use edgebench_core::charts::{emit_charts, write_charts};
use edgebench_core::config::{self, RunMode, ScenarioConfig};
use edgebench_core::cost::{
    cloud_monthly_cost, edge_monthly_cost, monthly_bandwidth, CostBreakdown, PipelineKind,
    BYTES_PER_GB, BYTES_PER_MB,
};
use edgebench_core::live::LiveOptions;
use edgebench_core::metrics::RunReport;
use edgebench_core::scenario::{run_scenario, RunOptions};

// Like `println!`, but a closed stdout (e.g. piping into `head`) is not fatal.
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Exit status for a run in which some message never reached storage.
const EXIT_INCOMPLETE: u8 = 3;

#[derive(Parser)]
#[command(
    name = "edgebench",
    version,
    about = "Edge-to-cloud pipeline benchmark simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write report.json, metrics.csv and charts/.
    Run(RunArgs),
    /// Load and validate scenario files without running them.
    Validate {
        /// Scenario files or shipped scenario names.
        #[arg(long = "config", required = true, num_args = 1..)]
        configs: Vec<String>,
    },
    /// Tabulate several report.json files side by side.
    Compare {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        /// Report name whose transmitted bytes the ratio column divides by;
        /// defaults to the first report.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Monthly cost of the edge and cloud pipelines for a usage scenario.
    Cost {
        /// Rate card file or shipped name.
        #[arg(long, default_value = "us-east-2018")]
        rate_card: String,
        /// Usage scenario file or shipped name.
        #[arg(long, default_value = "camera-image")]
        usage: String,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Draw grouped bar charts from report.json files.
    Charts {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Parser)]
struct RunArgs {
    /// Scenario file, or the name of a shipped scenario.
    #[arg(long)]
    config: String,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Output directory; falls back to the scenario's output_dir, then
    /// $EDGEBENCH_OUT, then ./edgebench-out/<scenario>.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Mirror every blob into this directory.
    #[arg(long)]
    persist_blobs: Option<PathBuf>,
    /// Live mode only: real milliseconds per simulated millisecond.
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Virtual,
    Live,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

fn load_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    let config = if path.exists() {
        config::load_config(path)?
    } else if config::BUILTIN_SCENARIOS.iter().any(|(n, _)| *n == spec) {
        config::builtin_scenario(spec)?
    } else {
        bail!("{spec}: no such file or shipped scenario");
    };
    Ok(config)
}

fn output_dir(args: &RunArgs, config: &ScenarioConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| config.output_dir.as_ref().map(PathBuf::from))
        .or_else(|| std::env::var_os("EDGEBENCH_OUT").map(|d| PathBuf::from(d).join(&config.name)))
        .unwrap_or_else(|| PathBuf::from("edgebench-out").join(&config.name))
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let mut config = load_scenario(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = Some(seed);
    }
    if let Some(mode) = args.mode {
        config.mode = match mode {
            ModeArg::Virtual => RunMode::Virtual,
            ModeArg::Live => RunMode::Live,
        };
    }
    config.validate()?;
    let out_dir = output_dir(&args, &config);
    let opts = RunOptions {
        out_dir: Some(out_dir.clone()),
        persist_blobs: args.persist_blobs,
        live: LiveOptions {
            time_scale: args.time_scale,
            ..LiveOptions::default()
        },
    };
    let outcome = run_scenario(&config, &opts)?;
    let r = &outcome.report;
    out!("scenario    {}", r.name);
    out!(
        "seed        {}",
        r.seed.map_or("none".into(), |s| s.to_string())
    );
    out!(
        "messages    emitted {}  stored {}  blobs {}  dropped {}",
        r.messages.emitted,
        r.messages.stored,
        r.messages.blobs,
        r.messages.dropped
    );
    if let Some(m) = &r.metrics {
        out!(
            "e2e         mean {:.1} ms  median {} ms  p95 {} ms",
            m.e2e_ms.mean,
            m.e2e_ms.median,
            m.e2e_ms.p95
        );
        out!("flight      mean {:.1} ms", m.flight_ms.mean);
        out!("residence   mean {:.1} ms", m.residence_ms.mean);
    }
    out!("transmitted {} bytes", r.bytes.total.transmitted_bytes);
    out!("output      {}", out_dir.display());
    if outcome.is_complete() {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!(
            "error: {} message(s) never reached storage",
            outcome.incomplete.len().max(1)
        );
        Ok(ExitCode::from(EXIT_INCOMPLETE))
    }
}

fn validate(configs: &[String]) -> Result<ExitCode> {
    let mut failed = false;
    for spec in configs {
        match load_scenario(spec) {
            Ok(c) => out!(
                "ok    {spec}  ({}, fingerprint {})",
                c.name,
                &c.fingerprint()[..12]
            ),
            Err(e) => {
                failed = true;
                out!("error {e:#}");
            }
        }
    }
    Ok(if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}

fn read_report(path: &Path) -> Result<RunReport> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    RunReport::from_json(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn compare(paths: &[PathBuf], baseline: Option<&str>, format: Format) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    let base = match baseline {
        Some(name) => reports
            .iter()
            .find(|r| r.name == name)
            .with_context(|| format!("no report named `{name}`"))?,
        None => &reports[0],
    };
    let base_bytes = base.bytes.total.transmitted_bytes;
    let ratio = |r: &RunReport| {
        (base_bytes > 0).then(|| r.bytes.total.transmitted_bytes as f64 / base_bytes as f64)
    };
    if format == Format::Json {
        let rows: Vec<_> = reports
            .iter()
            .map(|r| {
                serde_json::json!({
                    "name": r.name,
                    "pipeline": r.pipeline,
                    "workload": r.workload,
                    "metrics": r.metrics,
                    "transmitted_bytes": r.bytes.total.transmitted_bytes,
                    "byte_ratio": ratio(r),
                })
            })
            .collect();
        out!("{}", serde_json::to_string_pretty(&rows)?);
        return Ok(());
    }
    out!(
        "{:<22} {:<6} {:<7} {:>10} {:>10} {:>10} {:>10} {:>9} {:>12} {:>10}",
        "name",
        "pipe",
        "workload",
        "e2e_s",
        "flight_ms",
        "compute_s",
        "hub_s",
        "payload",
        "tx_bytes",
        "byte_ratio"
    );
    for r in &reports {
        let m = r.metrics.as_ref();
        let f = |v: Option<f64>, scale: f64, digits: usize| {
            v.map_or("-".to_string(), |v| format!("{:.*}", digits, v / scale))
        };
        out!(
            "{:<22} {:<6} {:<7} {:>10} {:>10} {:>10} {:>10} {:>9} {:>12} {:>10}",
            r.name,
            format!("{:?}", r.pipeline).to_lowercase(),
            r.workload.as_str(),
            f(m.map(|m| m.e2e_ms.mean), 1000.0, 3),
            f(m.map(|m| m.flight_ms.mean), 1.0, 1),
            f(m.map(|m| m.c_edge_ms.mean), 1000.0, 3),
            f(m.map(|m| m.residence_ms.mean), 1000.0, 3),
            f(m.map(|m| m.payload_bytes.mean), 1.0, 0),
            r.bytes.total.transmitted_bytes,
            f(ratio(r), 1.0, 2),
        );
    }
    Ok(())
}

fn print_breakdown(title: &str, b: &CostBreakdown) {
    out!("{title}");
    for line in &b.lines {
        out!("  {:<28} {:>10}", line.label, line.amount);
    }
    out!("  {:<28} {:>10}", "total", b.total);
    out!("  {}", b.additive_form());
}

fn cost(rate_card: &str, usage: &str, format: Format) -> Result<()> {
    let card = config::load_rate_card(rate_card)?;
    let usage = config::load_usage(usage)?;
    let edge = edge_monthly_cost(&card, &usage)?;
    let cloud = cloud_monthly_cost(&card, &usage)?;
    let ratio = cloud.total.as_usd() / edge.total.as_usd();
    let edge_bw = monthly_bandwidth(&usage, PipelineKind::Edge);
    let cloud_bw = monthly_bandwidth(&usage, PipelineKind::Cloud);
    if format == Format::Json {
        let out = serde_json::json!({
            "rate_card": card.name,
            "messages_per_month": usage.messages_per_month,
            "edge": edge,
            "cloud": cloud,
            "edge_total_usd": edge.total.to_string(),
            "cloud_total_usd": cloud.total.to_string(),
            "cloud_to_edge_ratio": ratio,
            "edge_bandwidth_bytes": edge_bw,
            "cloud_bandwidth_bytes": cloud_bw,
        });
        out!("{}", serde_json::to_string_pretty(&out)?);
        return Ok(());
    }
    out!(
        "monthly cost, rate card {}, {} messages/month, {} device(s)",
        card.name.as_deref().unwrap_or(rate_card),
        usage.messages_per_month,
        usage.devices
    );
    out!();
    print_breakdown("edge pipeline (USD)", &edge);
    out!();
    print_breakdown("cloud pipeline (USD)", &cloud);
    out!();
    out!("cloud / edge cost ratio   {ratio:.4}");
    out!(
        "bandwidth per month       edge {:.3} MB   cloud {:.3} GB",
        edge_bw as f64 / BYTES_PER_MB,
        cloud_bw as f64 / BYTES_PER_GB
    );
    Ok(())
}

fn charts(paths: &[PathBuf], out: &Path) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    let charts = emit_charts(&reports)?;
    for path in write_charts(&charts, out).with_context(|| format!("writing {}", out.display()))? {
        out!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { configs } => validate(&configs),
        Command::Compare {
            reports,
            baseline,
            format,
        } => compare(&reports, baseline.as_deref(), format).map(|()| ExitCode::SUCCESS),
        Command::Cost {
            rate_card,
            usage,
            format,
        } => cost(&rate_card, &usage, format).map(|()| ExitCode::SUCCESS),
        Command::Charts { reports, out } => charts(&reports, &out).map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
