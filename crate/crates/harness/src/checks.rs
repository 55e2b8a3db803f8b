//! Property checks that are not tied to one scenario.

use std::collections::BTreeMap;

use ctxrouter::cdg::Composer;
use ctxrouter::context::ContextSpec;
use ctxrouter::flow::parse_pipeline;
use ctxrouter::policy::AclTable;
use ctxrouter::record::{parse_lines, Record, Timestamp, Value};
use ctxrouter::store::{LoadStep, Message, Stamp, Store, StoreOptions, MAIN};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::topology::{Env, SLOT_SECS};
use crate::{HarnessError, Report};

pub const S7_RECORDS: &str = r#"{watt:"80",from:"biolab",event_ts:2024-01-01T00:00:01Z,ts:2024-01-01T00:00:02Z}
{watt:null,from:"office",event_ts:2024-01-01T00:00:03Z,ts:2024-01-01T00:00:04Z}
{power:120.,unit:"watt",from:"lounge",event_ts:2024-01-01T00:00:05Z,ts:2024-01-01T00:00:06Z}
"#;

pub const S7_FLOW: &str = "rename watt:=power | shape(this, <{watt:float64}>) | cut watt,event_ts,from";

/// Checks `records` carry exactly the S7 watt values, as float64 or null,
/// and nothing but `allowed` fields.
pub fn check_s7_output(report: &mut Report, records: &[Record], allowed: &[&str]) {
    let watts: Vec<Value> = records.iter().map(|r| r.get("watt").cloned().unwrap_or(Value::Str("<missing>".into()))).collect();
    report.expect_eq("watt values", watts, vec![Value::Float(80.0), Value::Null, Value::Float(120.0)]);
    let stray: Vec<String> = records
        .iter()
        .flat_map(|r| r.names().filter(|n| !allowed.contains(n)).map(str::to_string).collect::<Vec<_>>())
        .collect();
    report.expect_eq("only kept fields", stray, Vec::<String>::new());
    let present: Vec<bool> = records.iter().map(|r| allowed.iter().all(|f| r.contains(f))).collect();
    report.expect_eq("kept fields present", present, vec![true; 3]);
}

/// The S7 pipeline applied to the three S7 records.
pub fn s7_pipeline() -> Result<Report, HarnessError> {
    let mut report = Report::new("s7_pipeline");
    let input = parse_lines(S7_RECORDS).map_err(|e| HarnessError::Config(e.to_string()))?;
    let out = parse_pipeline(S7_FLOW)?.eval(input);
    report.expect_eq("no rejects", out.report.rejected_total(), 0);
    check_s7_output(&mut report, &out.records, &["watt", "event_ts", "from"]);
    Ok(report)
}

const N: usize = 20;
const EGRESSES: [&str; 3] = ["noise", "energy", "occupancy"];
const ROLES: [&str; 3] = ["r0", "r1", "r2"];
const KINDS: [&str; 4] = ["cot.dev/v1/room", "cot.dev/v2/room", "vendor/v1/phone", "vendor/v1/lamp"];
const KIND_PATTERNS: [&str; 4] = ["cot.dev/*/room", "*/*/phone", "vendor/v1/lamp", "cot.dev/v1/room"];

fn random_context(rng: &mut ChaCha8Rng, i: usize) -> String {
    let mut y = format!(
        "kind: {}\nname: c{i}\nrole: {}\ningress:\n",
        KINDS.choose(rng).unwrap(),
        ROLES.choose(rng).unwrap()
    );
    for j in 0..rng.gen_range(0..3) {
        let intents: Vec<String> = (0..rng.gen_range(1..3))
            .map(|_| {
                let e = EGRESSES.choose(rng).unwrap();
                match rng.gen_range(0..3) {
                    0 => format!("c{}@{e}", rng.gen_range(0..N)),
                    1 => format!("{}@{e}", KIND_PATTERNS.choose(rng).unwrap()),
                    _ => format!("any@{e}"),
                }
            })
            .collect();
        y += &format!("  - {{name: i{j}, intent: {intents:?}}}\n");
    }
    y += "egress:\n";
    let mut egresses = EGRESSES.to_vec();
    egresses.shuffle(rng);
    for e in egresses.iter().take(rng.gen_range(0..=3)) {
        let policy = if rng.gen_bool(0.5) {
            let roles: Vec<String> = ROLES.iter().filter(|_| rng.gen_bool(0.4)).map(|r| format!("{r:?}")).collect();
            let mode = if rng.gen_bool(0.5) { "allow" } else { "block" };
            format!(", policy: {{mode: {mode}, roles: [{}]}}", roles.join(","))
        } else {
            String::new()
        };
        y += &format!("  - {{name: {e}{policy}}}\n");
    }
    y
}

/// Random join/leave sequences over 20 random contexts. After every event
/// the incrementally maintained source map must equal `resolve_all`.
pub fn composition_oracle(sequences: usize, seed: u64) -> Result<Report, HarnessError> {
    let mut report = Report::new("composition_oracle");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut events, mut mismatches, mut applied) = (0usize, Vec::new(), 0usize);
    for seq in 0..sequences {
        let mut c = Composer::new();
        if rng.gen_bool(0.5) {
            let acl = AclTable::from_yaml("r0: [\"*@*\"]\nr1: [\"*@noise\", \"c3@*\"]").map_err(|e| HarnessError::Config(e.to_string()))?;
            c.set_acl(Some(acl));
        }
        for i in 0..N {
            c.add_context(ContextSpec::from_yaml(&random_context(&mut rng, i))?)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        for k in 0..rng.gen_range(0..=200) {
            let (a, b) = (format!("c{}", rng.gen_range(0..N)), format!("c{}", rng.gen_range(0..N)));
            let at = Timestamp::from_secs(k as i64);
            let res = if rng.gen_bool(0.6) { c.on_join(&a, &b, at) } else { c.on_leave(&a, &b, at) };
            events += 1;
            applied += res.is_ok() as usize;
            if c.source_map() != &c.resolve_all() {
                mismatches.push(format!("sequence {seq} event {k}"));
            }
        }
    }
    report.metric("events", Value::Int(events as i64));
    report.metric("applied", Value::Int(applied as i64));
    report.expect_eq("incremental == resolve_all", mismatches, Vec::<String>::new());
    Ok(report)
}

const SENSOR: &str = "kind: cot.dev/v1/Sensor\nname: sensor\negress:\n  - name: out\n";

/// Loads `n` records without `event_ts` and `n` with one, through the
/// runtime's load path.
pub fn timestamp_rule(n: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("timestamp_rule");
    let env = Env::new()?;
    env.apply(SENSOR)?;
    let bare: Vec<Record> = (0..n).map(|i| Record::of([("i", Value::Int(i as i64))])).collect();
    env.rt.load("sensor", bare)?;
    let given = |i: usize| Timestamp::from_secs(1_000_000 + (i as i64 % 7) * SLOT_SECS);
    let stamped: Vec<Record> = (0..n)
        .map(|i| Record::of([("i", Value::Int((n + i) as i64)), ("event_ts", Value::Time(given(i)))]))
        .collect();
    env.rt.load("sensor", stamped)?;
    let main = env.rt.store().records("sensor", MAIN)?;
    report.expect_eq("record count", main.len(), 2 * n);
    let unset_ok = main[..n.min(main.len())].iter().filter(|r| r.ts().is_some() && r.event_ts() == r.ts()).count();
    report.expect_eq("event_ts == ts when absent", unset_ok, n);
    let kept = main
        .iter()
        .skip(n)
        .enumerate()
        .filter(|(i, r)| r.event_ts() == Some(given(*i)))
        .count();
    report.expect_eq("given event_ts preserved", kept, n);
    let ts: Vec<_> = main.iter().map(|r| r.ts()).collect();
    let increasing = ts.windows(2).all(|w| matches!((w[0], w[1]), (Some(a), Some(b)) if a < b));
    report.check("ts strictly increasing", increasing, format!("{} records", ts.len()));
    Ok(report)
}

const CHAIN: &str = r#"kind: cot.dev/v1/Motion
name: m0
egress:
  - name: detected
---
kind: cot.dev/v1/Room
name: BioLab
ingress:
  - name: motion
    intent: "*/*/Motion@detected"
    patch_from: true
egress:
  - name: occupancy
---
kind: cot.dev/v1/Building
name: BioHall
ingress:
  - name: rooms
    intent: "*/*/Room@occupancy"
    patch_from: true
egress:
  - name: occupancy
---
kind: cot.dev/v1/Campus
name: Campus
ingress:
  - name: buildings
    intent: "*/*/Building@occupancy"
    patch_from: true
"#;

/// Three hops with `patch_from` on each ingress.
pub fn lineage_three_hops() -> Result<Report, HarnessError> {
    let mut report = Report::new("lineage");
    let env = Env::new()?;
    env.apply(CHAIN)?;
    env.rt.join("m0", "BioLab")?;
    env.rt.join("BioLab", "BioHall")?;
    env.rt.join("BioHall", "Campus")?;
    env.rt.load("m0", parse_lines("{detected:true}\n{detected:false}\n").map_err(|e| HarnessError::Config(e.to_string()))?)?;
    env.rt.quiesce()?;
    let out = env.rt.store().records("Campus", MAIN)?;
    report.expect_eq("records reached the campus", out.len(), 2);
    let want = Value::Array(
        ["m0@detected", "BioLab@occupancy", "BioHall@occupancy"]
            .into_iter()
            .map(Value::str)
            .collect(),
    );
    let froms: Vec<Option<Value>> = out.iter().map(|r| r.get("from").cloned()).collect();
    report.expect_eq("from in path order", froms, vec![Some(want); 2]);
    Ok(report)
}

/// Kills store loads at random points and reopens; the reopened journal
/// must hold exactly the commits that completed, never a torn one.
pub fn durability(kills: usize, seed: u64) -> Result<Report, HarnessError> {
    let mut report = Report::new("durability");
    let dir = tempfile::tempdir()?;
    let opts = StoreOptions { fsync: false };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = Store::open_with(dir.path(), opts)?;
    store.create_pool("p")?;
    let mut expected: Vec<Vec<Record>> = Vec::new();
    let mut seq = 0i64;
    let mut problems = Vec::new();
    let mut by_step: BTreeMap<String, i64> = BTreeMap::new();
    for kill in 0..kills {
        let step = LoadStep::ALL[rng.gen_range(0..LoadStep::ALL.len())];
        *by_step.entry(format!("{step:?}")).or_default() += 1;
        store.faults().arm(rng.gen_range(0..5), step);
        loop {
            let batch: Vec<Record> = (0..rng.gen_range(1..6))
                .map(|_| {
                    seq += 1;
                    Record::of([("seq", Value::Int(seq)), ("pad", Value::str("x".repeat(rng.gen_range(0..40))))])
                })
                .collect();
            let mut m = Message::new();
            m.insert("seq".into(), seq.to_string());
            match store.load("p", MAIN, batch.clone(), m, Stamp::Verbatim) {
                Ok(_) => expected.push(batch),
                Err(e) => {
                    if !store.faults().crashed() {
                        problems.push(format!("kill {kill}: unexpected error {e}"));
                    }
                    if step == LoadStep::AfterJournal {
                        expected.push(batch);
                    }
                    break;
                }
            }
        }
        store = Store::open_with(dir.path(), opts)?;
        let commits = store.read("p", MAIN, 0)?;
        if commits.len() != expected.len() {
            problems.push(format!("kill {kill} at {step:?}: {} commits, want {}", commits.len(), expected.len()));
            break;
        }
        for (c, want) in commits.iter().zip(&expected) {
            if c.records.as_slice() != want.as_slice() {
                problems.push(format!("kill {kill} at {step:?}: commit {} differs", c.id));
            }
        }
    }
    for (k, v) in by_step {
        report.metric(k, Value::Int(v));
    }
    report.metric("commits", Value::Int(expected.len() as i64));
    report.expect_eq("journal prefix after every kill", problems, Vec::<String>::new());
    Ok(report)
}
