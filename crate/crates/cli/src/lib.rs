//! `ctxr`: a thin client for the ctxrouter HTTP surface.
//!
//! Exit codes: 0 on success, 2 when access is denied, 1 for anything else.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use ctxrouter::flow::{parse_pipeline, qcx};

pub const DEFAULT_ADDR: &str = "127.0.0.1:7878";

#[derive(Debug, Parser)]
#[command(name = "ctxr", version, about = "Talk to a ctxrouter runtime")]
pub struct Cli {
    /// Runtime address.
    #[arg(long, global = true, env = "CTXR_LISTEN", default_value = DEFAULT_ADDR)]
    pub addr: String,
    /// Role presented to access checks.
    #[arg(long, global = true)]
    pub role: Option<String>,
    #[command(subcommand)]
    pub cmd: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create or update contexts (and the ACL) from YAML documents.
    Apply {
        #[arg(short = 'f', required = true, num_args = 1..)]
        files: Vec<PathBuf>,
    },
    /// Join CHILD to PARENT, or leave with -l.
    Join {
        #[arg(short = 'l')]
        leave: bool,
        child: String,
        parent: String,
    },
    Leave {
        child: String,
        parent: String,
    },
    /// Run PIPELINE over TARGET (name@egress or kind:pattern@egress).
    Query { target: String, pipeline: String },
    /// Load record-lines from stdin into CTX.
    Load { ctx: String },
    /// Stream an egress view.
    Watch {
        target: String,
        /// Stop after this many records.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// List contexts.
    Ls,
    /// Query complexity of PIPELINE over the given targets.
    Qcx {
        #[arg(required = true, num_args = 2..)]
        args: Vec<String>,
    },
    /// Run the runtime and its HTTP surface.
    Serve {
        #[arg(long, env = "CTXR_DATA_DIR", default_value = "ctxr-data")]
        data: PathBuf,
    },
}

enum Failure {
    Denied(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Denied(_) => 2,
            Failure::Other(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Denied(m) | Failure::Other(m) => m,
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Other(e.to_string())
    }
}

struct Client {
    base: String,
    role: Option<String>,
    agent: ureq::Agent,
}

impl Client {
    fn new(addr: &str, role: Option<String>) -> Client {
        let base = if addr.contains("://") {
            addr.trim_end_matches('/').to_string()
        } else {
            format!("http://{addr}")
        };
        Client {
            base,
            role,
            agent: ureq::AgentBuilder::new().build(),
        }
    }

    fn send(&self, req: ureq::Request, body: Option<&str>) -> Result<ureq::Response, Failure> {
        let req = match &self.role {
            Some(r) => req.set("X-Role", r),
            None => req,
        };
        let res = match body {
            Some(b) => req.send_string(b),
            None => req.call(),
        };
        match res {
            Ok(r) => Ok(r),
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let msg = error_text(&body);
                Err(if code == 403 {
                    Failure::Denied(msg)
                } else {
                    Failure::Other(format!("{code}: {msg}"))
                })
            }
            Err(e) => Err(Failure::Other(format!("cannot reach runtime: {e}"))),
        }
    }

    fn get(&self, path: &str, params: &[(&str, &str)]) -> Result<ureq::Response, Failure> {
        let mut req = self.agent.get(&format!("{}{path}", self.base));
        for (k, v) in params {
            req = req.query(k, v);
        }
        self.send(req, None)
    }

    fn post(&self, path: &str, params: &[(&str, &str)], body: &str) -> Result<ureq::Response, Failure> {
        let mut req = self.agent.post(&format!("{}{path}", self.base));
        for (k, v) in params {
            req = req.query(k, v);
        }
        self.send(req, Some(body))
    }
}

/// Pulls the message out of an `{error:"..."}` body; falls back to the body.
fn error_text(body: &str) -> String {
    ctxrouter::record::parse_text(body.trim())
        .ok()
        .and_then(|r| r.get("error").and_then(|v| v.as_str()).map(str::to_string))
        .unwrap_or_else(|| body.trim().to_string())
}

fn body(resp: ureq::Response) -> Result<String, Failure> {
    Ok(resp.into_string()?)
}

fn quote(s: &str) -> String {
    let mut out = String::from("\"");
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn execute(cli: Cli, stdin: &mut dyn Read, out: &mut dyn Write) -> Result<(), Failure> {
    let client = Client::new(&cli.addr, cli.role.clone());
    match cli.cmd {
        Command::Apply { files } => {
            let mut text = String::new();
            for f in files {
                let doc = std::fs::read_to_string(&f).map_err(|e| Failure::Other(format!("{}: {e}", f.display())))?;
                if !text.is_empty() {
                    text.push_str("\n---\n");
                }
                text.push_str(&doc);
            }
            out.write_all(body(client.post("/apply", &[], &text)?)?.as_bytes())?;
        }
        Command::Join { leave, child, parent } => {
            let path = if leave { "/leave" } else { "/join" };
            let req = format!("{{child:{},parent:{}}}", quote(&child), quote(&parent));
            out.write_all(body(client.post(path, &[], &req)?)?.as_bytes())?;
        }
        Command::Leave { child, parent } => {
            let req = format!("{{child:{},parent:{}}}", quote(&child), quote(&parent));
            out.write_all(body(client.post("/leave", &[], &req)?)?.as_bytes())?;
        }
        Command::Query { target, pipeline } => {
            let resp = client.get("/query", &[("target", &target), ("q", &pipeline)])?;
            out.write_all(body(resp)?.as_bytes())?;
        }
        Command::Load { ctx } => {
            let mut text = String::new();
            stdin.read_to_string(&mut text)?;
            out.write_all(body(client.post("/load", &[("ctx", &ctx)], &text)?)?.as_bytes())?;
        }
        Command::Watch { target, limit } => {
            let limit = limit.map(|l| l.to_string());
            let mut params = vec![("target", target.as_str())];
            if let Some(l) = &limit {
                params.push(("limit", l));
            }
            let resp = client.get("/watch", &params)?;
            let reader = BufReader::new(resp.into_reader());
            for line in reader.lines() {
                writeln!(out, "{}", line?)?;
                out.flush()?;
            }
        }
        Command::Ls => {
            out.write_all(body(client.get("/contexts", &[])?)?.as_bytes())?;
        }
        Command::Qcx { mut args } => {
            let text = args.pop().expect("clap requires two arguments");
            let p = parse_pipeline(&text).map_err(|e| Failure::Other(format!("invalid pipeline: {e}")))?;
            writeln!(out, "{}", qcx(&args, &p))?;
        }
        Command::Serve { data } => serve(&cli.addr, &data)?,
    }
    Ok(())
}

fn serve(addr: &str, data: &std::path::Path) -> Result<(), Failure> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(io::stderr)
        .try_init();
    let rt = ctxrouter::runtime::Runtime::open_default(data).map_err(|e| Failure::Other(e.to_string()))?;
    let tokio = tokio::runtime::Runtime::new()?;
    tokio.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        ctxrouter::server::serve(rt, listener).await
    })?;
    Ok(())
}

/// Runs one invocation and returns its exit code.
pub fn run<I, S>(args: I, stdin: &mut dyn Read, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli, stdin, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "ctxr: {}", f.message());
            f.code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(args.iter().copied(), &mut io::empty(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn qcx_is_local() {
        assert_eq!(run_str(&["ctxr", "qcx", "BioHall@occupancy", "avg(occupancy)"]).1, "3\n");
        assert_eq!(run_str(&["ctxr", "qcx", "a@x", "b@y", "sort v | head"]).1, "6\n");
        assert_eq!(run_str(&["ctxr", "qcx", "a@x", "sort ("]).0, 1);
    }

    #[test]
    fn unreachable_runtime_exits_one() {
        let (code, _, err) = run_str(&["ctxr", "--addr", "127.0.0.1:1", "ls"]);
        assert_eq!(code, 1);
        assert!(err.contains("cannot reach runtime"), "{err}");
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_str(&["ctxr", "frobnicate"]).0, 1);
        assert_eq!(run_str(&["ctxr", "join", "onlyone"]).0, 1);
        assert_eq!(run_str(&["ctxr", "--help"]).0, 0);
    }

    #[test]
    fn error_bodies() {
        assert_eq!(error_text("{error:\"nope\"}\n"), "nope");
        assert_eq!(error_text("plain"), "plain");
        assert_eq!(quote("a\"b"), "\"a\\\"b\"");
    }
}
