//! Kills a device -> room -> building pipelet chain at random points and
//! checks that every device record reaches the building exactly once.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ctxrouter::cdg::{Injection, Source};
use ctxrouter::clock::{Clock, ManualClock};
use ctxrouter::context::ContextSpec;
use ctxrouter::pipelet::{Pipelet, PipeletOptions, Resolver};
use ctxrouter::record::{Record, Timestamp, Value};
use ctxrouter::store::{LoadStep, Message, Stamp, Store, StoreOptions, MAIN};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::HarnessError;

const ROOM: &str = r#"
kind: cot.dev/v1/Room
name: room
ingress:
  - name: motion
    flow: "put double := seq * 2"
    patch_from: true
egress:
  - name: occupancy
"#;

const BUILDING: &str = r#"
kind: cot.dev/v1/Building
name: building
ingress:
  - name: rooms
    patch_from: true
"#;

/// Crash points that fall before the commit's journal line is complete.
const PRE_JOURNAL: [LoadStep; 4] = [LoadStep::TornData, LoadStep::AfterData, LoadStep::AfterMessage, LoadStep::MidJournal];

#[derive(Debug, Clone, Default)]
pub struct CrashReport {
    pub records: usize,
    pub kills: usize,
    /// Kills that hit a commit in flight rather than a batch boundary.
    pub mid_commit: usize,
    pub delivered: usize,
    pub duplicates: Vec<i64>,
    pub missing: Vec<i64>,
    /// Positions where `seq` or `ts` did not increase.
    pub out_of_order: Vec<usize>,
    /// Records whose derived fields or lineage were wrong.
    pub malformed: usize,
    pub elapsed: Duration,
}

impl CrashReport {
    pub fn pass(&self) -> bool {
        self.delivered == self.records
            && self.duplicates.is_empty()
            && self.missing.is_empty()
            && self.out_of_order.is_empty()
            && self.malformed == 0
    }
}

fn source(ctx: &str, egress: &str) -> Source {
    Source {
        context: ctx.into(),
        egress: egress.into(),
        injection: Injection::default(),
        since: None,
    }
}

struct Chain {
    dir: tempfile::TempDir,
    clock: Arc<ManualClock>,
    opts: PipeletOptions,
    store: Store,
    pipelets: Vec<Pipelet>,
}

impl Chain {
    fn new(opts: PipeletOptions) -> Result<Chain, HarnessError> {
        let dir = tempfile::tempdir()?;
        let clock = Arc::new(ManualClock::new(Timestamp::from_secs(crate::topology::EPOCH)));
        let store = open(dir.path())?;
        for (pool, branch) in [("device", "detected"), ("room", MAIN), ("room", "occupancy"), ("building", MAIN)] {
            store.ensure_pool(pool)?;
            store.ensure_branch(pool, branch)?;
        }
        let pipelets = pipelets(&store, &clock, opts)?;
        Ok(Chain {
            dir,
            clock,
            opts,
            store,
            pipelets,
        })
    }

    /// Drops every pipelet and the store handle, then reopens from disk.
    fn restart(&mut self) -> Result<(), HarnessError> {
        self.pipelets.clear();
        self.store = open(self.dir.path())?;
        self.pipelets = pipelets(&self.store, &self.clock, self.opts)?;
        Ok(())
    }

    fn drain(&mut self) -> Result<(), HarnessError> {
        loop {
            let mut idle = true;
            for p in &mut self.pipelets {
                idle &= p.step()?.is_idle();
            }
            if idle {
                return Ok(());
            }
        }
    }
}

fn open(dir: &Path) -> Result<Store, HarnessError> {
    Ok(Store::open_with(dir, StoreOptions { fsync: false })?)
}

fn pipelets(store: &Store, clock: &Arc<ManualClock>, opts: PipeletOptions) -> Result<Vec<Pipelet>, HarnessError> {
    let room = ContextSpec::from_yaml(ROOM)?;
    let building = ContextSpec::from_yaml(BUILDING)?;
    let resolver: Resolver = Arc::new(|_, e| Some(e.to_string()));
    let clock: Arc<dyn Clock> = clock.clone();
    Ok(vec![
        Pipelet::ingress(store.clone(), "room", &room.ingress[0], &[source("device", "detected")], resolver.clone(), clock.clone(), opts)?,
        Pipelet::view(store.clone(), "room", &room.egress[0], "occupancy", clock.clone(), opts)?,
        Pipelet::ingress(store.clone(), "building", &building.ingress[0], &[source("room", "occupancy")], resolver, clock, opts)?,
    ])
}

pub fn crash_test(records: usize, kills: usize, seed: u64) -> Result<CrashReport, HarnessError> {
    crash_test_with(records, kills, seed, PipeletOptions::default())
}

/// Emits `records` device records in random batches, interleaved with
/// random pipelet steps. `kills` of those actions are replaced by a crash:
/// either a restart at a batch boundary or a fault injected into the next
/// commit before its journal line lands, followed by a restart.
pub fn crash_test_with(records: usize, kills: usize, seed: u64, opts: PipeletOptions) -> Result<CrashReport, HarnessError> {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batches = Vec::new();
    let mut left = records;
    while left > 0 {
        let n = rng.gen_range(1..=100).min(left);
        batches.push(n);
        left -= n;
    }
    let actions = batches.len() * 4;
    let mut points: Vec<usize> = (0..actions.max(kills)).collect();
    points.shuffle(&mut rng);
    let kill_at: BTreeSet<usize> = points.into_iter().take(kills).collect();

    let mut chain = Chain::new(opts)?;
    let mut report = CrashReport {
        records,
        ..Default::default()
    };
    let mut next = 0i64;
    let mut batch = 0;
    let mut action = 0;
    while batch < batches.len() || action < actions.max(kills) {
        chain.clock.advance_secs(1);
        if kill_at.contains(&action) {
            report.kills += 1;
            if rng.gen_bool(0.5) {
                let step = PRE_JOURNAL[rng.gen_range(0..PRE_JOURNAL.len())];
                chain.store.faults().arm(0, step);
                for p in &mut chain.pipelets {
                    if p.step().is_err() {
                        report.mid_commit += 1;
                        break;
                    }
                }
                chain.store.faults().disarm();
            }
            chain.restart()?;
        } else if batch < batches.len() && rng.gen_bool(0.25) {
            let n = batches[batch] as i64;
            let recs: Vec<Record> = (next..next + n)
                .map(|v| Record::of([("seq", Value::Int(v)), ("detected", Value::Bool(v % 3 == 0))]))
                .collect();
            chain
                .store
                .load("device", "detected", recs, Message::new(), Stamp::Load(chain.clock.now()))?;
            next += n;
            batch += 1;
        } else {
            let i = rng.gen_range(0..chain.pipelets.len());
            chain.pipelets[i].step()?;
        }
        action += 1;
    }
    chain.drain()?;
    verify(&chain.store.records("building", MAIN)?, &mut report);
    report.elapsed = started.elapsed();
    Ok(report)
}

fn verify(out: &[Record], report: &mut CrashReport) {
    report.delivered = out.len();
    let mut seen = vec![0usize; report.records];
    let lineage = Value::Array(vec![Value::str("device@detected"), Value::str("room@occupancy")]);
    for (i, r) in out.iter().enumerate() {
        let seq = match r.get("seq") {
            Some(Value::Int(s)) => *s,
            _ => {
                report.malformed += 1;
                continue;
            }
        };
        if r.get("double") != Some(&Value::Int(seq * 2)) || r.get("from") != Some(&lineage) {
            report.malformed += 1;
        }
        match seen.get_mut(seq as usize) {
            Some(n) => {
                *n += 1;
                if *n == 2 {
                    report.duplicates.push(seq);
                }
            }
            None => report.malformed += 1,
        }
        if i > 0 {
            let prev = &out[i - 1];
            let seq_ok = matches!(prev.get("seq"), Some(Value::Int(p)) if *p < seq);
            if !seq_ok || prev.ts() >= r.ts() {
                report.out_of_order.push(i);
            }
        }
    }
    report.missing = seen.iter().enumerate().filter(|(_, n)| **n == 0).map(|(s, _)| s as i64).collect();
}
