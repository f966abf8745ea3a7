use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use paynet_sim::analysis::{correlate, write_findings, ChannelDirectory, CorrelationParams, DEFAULT_FEE_TOLERANCE_SAT};
use paynet_sim::codec::{self, Codebook, EncodingScheme};
use paynet_sim::harness::{read_receipts, replicate_tables, run_scenario, Scenario};
use paynet_sim::network::{ChannelInfo, NodeId};
use paynet_sim::payment::ForwardingEvent;

/// Offline simulator for payment-amount command channels and their detection.
#[derive(Debug, Parser)]
#[command(name = "paynet-sim", version)]
struct Cli {
    /// Override the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for reports and logs.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SchemeArg {
    Ascii,
    Huffman,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario file end to end.
    Run { scenario: PathBuf },
    /// Reproduce the formation, encoding, routing-fee and timing tables.
    ReplicateTables,
    /// Show the payment amounts that carry a command.
    Encode {
        command: String,
        #[arg(long, value_enum, default_value = "ascii")]
        scheme: SchemeArg,
        /// Codebook file for the huffman scheme; the built-in one otherwise.
        #[arg(long)]
        codebook: Option<PathBuf>,
    },
    /// Rank likely payment origins from C&C receipts and relay logs.
    Correlate {
        /// C&C receipt log (one `{timestamp_ns, amount_sat}` per line).
        cc_log: PathBuf,
        /// Forwarding logs named `<node id>.jsonl`.
        #[arg(required = true)]
        monitor_logs: Vec<PathBuf>,
        /// Channel directory (one `{chan_id, node1, node2}` per line).
        #[arg(long)]
        channels: PathBuf,
        #[arg(long, default_value_t = 10.0)]
        window: f64,
        #[arg(long, default_value_t = DEFAULT_FEE_TOLERANCE_SAT)]
        fee_tolerance: u64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{}:{}", path.display(), i + 1)))
        .collect()
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { scenario } => {
            let mut s = Scenario::load(&scenario)?;
            if let Some(seed) = cli.seed {
                s.seed = seed;
            }
            let output = run_scenario(&s)?;
            print!("{}", output.report.to_text());
            let out = cli.out.unwrap_or_else(|| PathBuf::from("out"));
            output.write_to(&out)?;
            eprintln!("logs written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ReplicateTables => {
            let r = replicate_tables()?;
            let text = r.to_text();
            print!("{text}");
            if let Some(out) = cli.out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("replication.txt"), &text)?;
                fs::write(out.join("replication.json"), serde_json::to_string_pretty(&r)? + "\n")?;
            }
            Ok(if r.all_match() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Encode { command, scheme, codebook } => {
            let scheme = match (scheme, codebook) {
                (SchemeArg::Ascii, None) => EncodingScheme::Ascii,
                (SchemeArg::Ascii, Some(_)) => bail!("--codebook only applies to the huffman scheme"),
                (SchemeArg::Huffman, None) => EncodingScheme::huffman_default(),
                (SchemeArg::Huffman, Some(p)) => EncodingScheme::Huffman(Codebook::parse(&read(&p)?)?),
            };
            let payload = codec::encode(&command, &scheme)?;
            let framed = codec::frame(&payload);
            let list = |v: &[u64]| v.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
            println!("scheme   {}", scheme.name());
            println!("payload  {} payments, {} sat", payload.len(), codec::cost(&payload));
            println!("framed   {} payments, {} sat", framed.len(), codec::cost(&framed));
            println!("amounts  {}", list(&framed));
            Ok(ExitCode::SUCCESS)
        }
        Command::Correlate { cc_log, monitor_logs, channels, window, fee_tolerance } => {
            let receipts = read_receipts(&read(&cc_log)?)?;
            let mut logs: BTreeMap<NodeId, Vec<ForwardingEvent>> = BTreeMap::new();
            for p in &monitor_logs {
                let id: u32 = p
                    .file_stem()
                    .and_then(|s| s.to_str())
                    .and_then(|s| s.parse().ok())
                    .with_context(|| format!("{}: monitor logs must be named <node id>.jsonl", p.display()))?;
                logs.entry(NodeId(id)).or_default().extend(jsonl::<ForwardingEvent>(p)?);
            }
            let directory: ChannelDirectory =
                jsonl::<ChannelInfo>(&channels)?.into_iter().map(|c| (c.chan_id, c)).collect();
            let params = CorrelationParams { window_s: window, fee_tolerance_sat: fee_tolerance };
            let findings = correlate(&receipts, &logs, &directory, &params)?;
            let mut buf = Vec::new();
            write_findings(&findings, &mut buf)?;
            print!("{}", String::from_utf8(buf.clone())?);
            if let Some(out) = cli.out {
                fs::create_dir_all(&out)?;
                fs::write(out.join("findings.jsonl"), buf)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
