//! Desk-scale evaluation for ctxrouter: scenarios S1-S4, S6 and S7, the
//! query-orientation bench, the pipelet crash driver and the property
//! checks behind the acceptance target.

pub mod bench;
pub mod checks;
pub mod crash;
pub mod dataset;
pub mod scenario;
pub mod topology;

use std::fmt;

use ctxrouter::record::{Record, Value};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Runtime(#[from] ctxrouter::runtime::RuntimeError),
    #[error(transparent)]
    Store(#[from] ctxrouter::store::StoreError),
    #[error(transparent)]
    Pipelet(#[from] ctxrouter::pipelet::PipeletError),
    #[error(transparent)]
    Context(#[from] ctxrouter::context::ContextError),
    #[error(transparent)]
    Flow(#[from] ctxrouter::flow::FlowError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad config: {0}")]
    Config(String),
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// Outcome of one scenario or driver run.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub name: String,
    pub checks: Vec<Check>,
    /// Extra numbers worth printing (scan counts, timings).
    pub metrics: Vec<(String, Value)>,
}

impl Report {
    pub fn new(name: impl Into<String>) -> Self {
        Report {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) -> bool {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
        pass
    }

    /// Records an equality check, with both sides as the detail on failure.
    pub fn expect_eq<T: PartialEq + fmt::Debug>(&mut self, name: impl Into<String>, got: T, want: T) -> bool {
        let pass = got == want;
        let detail = if pass {
            format!("{got:?}")
        } else {
            format!("got {got:?}, want {want:?}")
        };
        self.check(name, pass, detail)
    }

    pub fn metric(&mut self, name: impl Into<String>, v: Value) {
        self.metrics.push((name.into(), v));
    }

    pub fn pass(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    /// One record per check, then one with the metrics.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out: Vec<Record> = self
            .checks
            .iter()
            .map(|c| {
                Record::of([
                    ("scenario", Value::str(&self.name)),
                    ("check", Value::str(&c.name)),
                    ("pass", Value::Bool(c.pass)),
                    ("detail", Value::str(&c.detail)),
                ])
            })
            .collect();
        if !self.metrics.is_empty() {
            let mut m = Record::of([("scenario", Value::str(&self.name))]);
            for (k, v) in &self.metrics {
                m.set(k, v.clone());
            }
            out.push(m);
        }
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let passed = self.checks.iter().filter(|c| c.pass).count();
        writeln!(
            f,
            "{}: {} ({passed}/{} checks)",
            self.name,
            if self.pass() { "PASS" } else { "FAIL" },
            self.checks.len()
        )?;
        for c in self.failures() {
            writeln!(f, "  {} failed: {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

/// |a - b| <= tol, treating two missing answers as equal.
pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        _ => false,
    }
}
