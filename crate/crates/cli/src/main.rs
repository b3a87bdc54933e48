//! `ipoxp`: ping across a simulated xylophone link, sweep its error rates,
//! or serve the live bridge.

use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod args;
mod bench;
mod ping;
mod serve;

use args::UsageError;

#[derive(Parser)]
#[command(name = "ipoxp", version, about = "IP over xylophone players")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Send ICMP echo requests from A to B and report round trips.
    Ping(ping::PingArgs),
    /// Measure delivery against per-symbol error rates.
    Bench(bench::BenchArgs),
    /// Run a live session for remote operators over WebSocket.
    Serve(serve::ServeArgs),
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Ping(a) => ping::run(a),
        Command::Bench(a) => bench::run(a).map(|()| ExitCode::SUCCESS),
        Command::Serve(a) => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(serve::run(a)))
            .map(|()| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("ipoxp: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("ipoxp: {e:#}");
            ExitCode::FAILURE
        }
    }
}
