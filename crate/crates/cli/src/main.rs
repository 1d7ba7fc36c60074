//! `lobtaq`: batch front end for feed parsing, book reconstruction and the
//! TAQ analytics. Exit status 0 on success, 1 on data errors, 2 on usage
//! errors.

mod analytics;
mod bundle;
mod feedcmd;
mod io;
mod signs;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Misuse of the command line discovered after argument parsing (missing
/// input file, missing output directory, bad flag value).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "lobtaq", version, about = "Order-book reconstruction and TAQ analytics")]
struct Cli {
    /// Worker threads for per-security work (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct OutArgs {
    /// Output directory; receives the files and manifest.json.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Decode a wire feed and re-emit it canonically (or as a message table).
    Parse(feedcmd::ParseArgs),
    /// Rebuild per-security top-of-book streams from a feed.
    BuildLob(feedcmd::BuildArgs),
    /// Clean a vendor TAQ file into an L1 stream.
    IngestVendor(analytics::VendorArgs),
    /// Quote series, returns, inter-arrivals, impact increments and bars.
    Taq(analytics::TaqArgs),
    /// Accuracy of the quote, tick and Lee-Ready rules against known signs.
    ClassifyEval(analytics::ClassifyArgs),
    /// Autocorrelations, distribution fits, QQ and CCDF data.
    Stylised(analytics::StylisedArgs),
    /// Binned price-impact curves with bootstrap envelopes.
    Impact(analytics::ImpactArgs),
    /// Master-curve calibration across securities.
    Master(analytics::MasterArgs),
    /// Trading-cost curves and the variability table.
    Costs(analytics::CostArgs),
    /// Intraday volume, absolute-return and spread profiles.
    Seasonality(analytics::SeasonArgs),
    /// Generate a synthetic feed.
    Gen(feedcmd::GenArgs),
    /// Check book reconstruction against the brute-force oracle.
    Verify(feedcmd::VerifyArgs),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Parse(a) => feedcmd::parse(a),
        Command::BuildLob(a) => feedcmd::build_lob(a),
        Command::IngestVendor(a) => analytics::ingest_vendor(a),
        Command::Taq(a) => analytics::taq(a),
        Command::ClassifyEval(a) => analytics::classify_eval(a),
        Command::Stylised(a) => analytics::stylised(a),
        Command::Impact(a) => analytics::impact(a),
        Command::Master(a) => analytics::master(a),
        Command::Costs(a) => analytics::costs(a),
        Command::Seasonality(a) => analytics::seasonality(a),
        Command::Gen(a) => feedcmd::gen(a),
        Command::Verify(a) => feedcmd::verify(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
    {
        eprintln!("lobtaq: {e}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lobtaq: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
