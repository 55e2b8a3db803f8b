use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ctxr_harness::bench::bench_seeded;
use ctxr_harness::crash::crash_test;
use ctxr_harness::scenario::{scenario, SCENARIOS};
use ctxr_harness::Report;
use ctxrouter::record::{to_lines, Value};

#[derive(Debug, Parser)]
#[command(name = "ctxr-harness", version, about = "Desk-scale scenarios and drivers for ctxrouter")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a scenario, or `all`.
    Run {
        #[arg(value_parser = scenario_name)]
        scenario: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 4)]
        rooms: usize,
    },
    /// Context-path vs. device-path queries.
    Bench {
        #[arg(long, default_value_t = 4)]
        rooms: usize,
        #[arg(long, default_value_t = 1000)]
        records: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Kill and restart a pipelet chain while it moves records.
    Crash {
        #[arg(long, default_value_t = 10_000)]
        records: usize,
        #[arg(long, default_value_t = 25)]
        kills: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn scenario_name(s: &str) -> Result<String, String> {
    if s == "all" || SCENARIOS.contains(&s) {
        Ok(s.to_string())
    } else {
        Err(format!("expected one of: all, {}", SCENARIOS.join(", ")))
    }
}

fn emit(report: &Report) -> bool {
    print!("{}", to_lines(&report.to_records()));
    print!("{report}");
    report.pass()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run { scenario: name, seed, rooms } => {
            let names: Vec<&str> = if name == "all" { SCENARIOS.to_vec() } else { vec![name.as_str()] };
            names.into_iter().try_fold(true, |ok, n| scenario(n, seed, rooms).map(|r| emit(&r) && ok))
        }
        Cmd::Bench { rooms, records, seed } => bench_seeded(rooms, records, seed).map(|b| {
            let mut r = Report::new("bench_query_orientation");
            r.check("answers equal", b.equal, format!("max diff {:e}", b.max_diff));
            r.check(
                "context path scans fewer records",
                b.context.scanned < b.device.scanned,
                format!("{} vs {}", b.context.scanned, b.device.scanned),
            );
            r.metric("context_scanned", Value::Int(b.context.scanned as i64));
            r.metric("device_scanned", Value::Int(b.device.scanned as i64));
            r.metric("context_ms", Value::Float(b.context.wall.as_secs_f64() * 1e3));
            r.metric("device_ms", Value::Float(b.device.wall.as_secs_f64() * 1e3));
            r.metric("scan_ratio", Value::Float(b.scan_ratio()));
            emit(&r)
        }),
        Cmd::Crash { records, kills, seed } => crash_test(records, kills, seed).map(|c| {
            let mut r = Report::new("crash_test");
            r.check("exactly once, in order", c.pass(), format!("{c:?}"));
            r.metric("kills", Value::Int(c.kills as i64));
            r.metric("mid_commit", Value::Int(c.mid_commit as i64));
            r.metric("elapsed_ms", Value::Float(c.elapsed.as_secs_f64() * 1e3));
            emit(&r)
        }),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("ctxr-harness: {e}");
            ExitCode::FAILURE
        }
    }
}
