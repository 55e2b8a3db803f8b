//! Simulated data sources. Connectors only ever write through
//! [`Runtime::load`](super::Runtime::load).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::record::{parse_lines, Record, RecordError, Timestamp, Value};

/// Replays record-lines whose `time_field` holds seconds relative to the
/// start of the replay.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub records: Vec<(f64, Record)>,
    /// 10.0 plays ten times faster than recorded.
    pub speed: f64,
}

impl Replay {
    pub fn parse(text: &str, time_field: &str, speed: f64) -> Result<Replay, RecordError> {
        let mut records = Vec::new();
        for mut r in parse_lines(text)? {
            let t = r.remove(time_field).and_then(|v| v.as_f64()).unwrap_or(0.0);
            records.push((t, r));
        }
        Ok(Replay { records, speed })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Signal {
    /// `true` with probability `p`.
    Bool { p: f64 },
    Uniform { lo: f64, hi: f64 },
}

/// Emits `template` plus one generated `field`, `rate` times per second.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub template: Record,
    pub field: String,
    pub signal: Signal,
    pub rate: f64,
    pub duration_secs: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Replay(Replay),
    Generator(Generator),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connector {
    pub target: String,
    pub source: Source,
}

/// How a connector's schedule maps onto loads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One commit per distinct schedule offset, without waiting.
    Immediate,
    /// Like `Immediate` but sleeps until each offset (scaled by speed).
    RealTime,
    /// Everything in one commit.
    Bulk,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConnectorReport {
    pub records: usize,
    pub commits: usize,
}

impl Connector {
    /// `(offset seconds, record)` pairs in emission order. Records without
    /// `event_ts` get `start + offset`.
    pub fn schedule(&self, start: Timestamp) -> Vec<(f64, Record)> {
        let mut out = match &self.source {
            Source::Replay(rp) => {
                let speed = if rp.speed > 0.0 { rp.speed } else { 1.0 };
                rp.records.iter().map(|(t, r)| (t / speed, r.clone())).collect::<Vec<_>>()
            }
            Source::Generator(g) => {
                let n = (g.rate * g.duration_secs).floor().max(0.0) as usize;
                let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
                (0..n)
                    .map(|i| {
                        let mut r = g.template.clone();
                        let v = match g.signal {
                            Signal::Bool { p } => Value::Bool(rng.gen_bool(p.clamp(0.0, 1.0))),
                            Signal::Uniform { lo, hi } => Value::Float(lo + (hi - lo) * rng.gen::<f64>()),
                        };
                        r.set(&g.field, v);
                        (i as f64 / g.rate, r)
                    })
                    .collect()
            }
        };
        for (t, r) in &mut out {
            if r.event_ts().is_none() {
                r.set("event_ts", Value::Time(start.plus_nanos((*t * 1e9) as i64)));
            }
        }
        out
    }
}
