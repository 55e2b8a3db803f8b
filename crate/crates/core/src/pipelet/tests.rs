use std::sync::Arc;

use super::*;
use crate::cdg::Injection;
use crate::clock::ManualClock;
use crate::context::ContextSpec;
use crate::record::parse_lines;
use crate::store::StoreOptions;

struct Fx {
    _dir: tempfile::TempDir,
    store: Store,
    clock: Arc<ManualClock>,
}

fn fx() -> Fx {
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open_with(dir.path(), StoreOptions { fsync: false }).unwrap();
    Fx {
        _dir: dir,
        store,
        clock: Arc::new(ManualClock::new(Timestamp::from_secs(1_000))),
    }
}

impl Fx {
    fn emit(&self, pool: &str, branch: &str, text: &str) {
        self.store.ensure_pool(pool).unwrap();
        self.store.ensure_branch(pool, branch).unwrap();
        self.clock.advance_secs(1);
        let recs = parse_lines(text).unwrap();
        self.store
            .load(pool, branch, recs, Message::new(), Stamp::Load(self.clock.now()))
            .unwrap();
    }

    fn ingress(&self, yaml: &str, sources: &[(&str, &str)], opts: PipeletOptions) -> Pipelet {
        let spec = ContextSpec::from_yaml(yaml).unwrap();
        self.store.ensure_pool(&spec.name).unwrap();
        let sources: Vec<Source> = sources
            .iter()
            .map(|(c, e)| Source {
                context: c.to_string(),
                egress: e.to_string(),
                injection: Injection::default(),
                since: None,
            })
            .collect();
        let resolver: Resolver = Arc::new(|_, e| Some(e.to_string()));
        Pipelet::ingress(
            self.store.clone(),
            &spec.name,
            &spec.ingress[0],
            &sources,
            resolver,
            self.clock.clone(),
            opts,
        )
        .unwrap()
    }

    fn main(&self, pool: &str) -> Vec<Record> {
        self.store.records(pool, MAIN).unwrap()
    }
}

const ROOM: &str = r#"
kind: t/v1/Room
name: room
ingress:
  - name: occ
    flow: "put v2 := v * 2"
    patch_from: true
"#;

const SUM: &str = r#"
kind: t/v1/Room
name: room
ingress:
  - name: occ
    flow_agg: "sum(v) by k"
"#;

fn field(recs: &[Record], f: &str) -> Vec<Value> {
    recs.iter().map(|r| r.get(f).cloned().unwrap_or(Value::Null)).collect()
}

#[test]
fn moves_records_once_with_lineage() {
    let fx = fx();
    fx.emit("desk", "detected", "{v:1}\n{v:2}\n");
    let mut p = fx.ingress(ROOM, &[("desk", "detected")], PipeletOptions::default());
    let pr = p.step().unwrap();
    assert_eq!((pr.consumed, pr.emitted), (2, 2));
    assert!(p.step().unwrap().is_idle());
    let main = fx.main("room");
    assert_eq!(field(&main, "v2"), [Value::Int(2), Value::Int(4)]);
    assert_eq!(
        main[0].get("from"),
        Some(&Value::Array(vec![Value::str("desk@detected")]))
    );
    let src_ts = fx.store.last_ts("desk", "detected").unwrap().unwrap();
    assert_eq!(
        fx.store.latest_cursor("room", MAIN, "cursor.desk@detected").unwrap(),
        Some(src_ts.to_string())
    );
    for r in &main {
        assert!(r.ts().is_some() && r.event_ts().is_some());
    }
}

#[test]
fn restart_resumes_after_cursor() {
    let fx = fx();
    fx.emit("desk", "detected", "{v:1}\n");
    let mut p = fx.ingress(ROOM, &[("desk", "detected")], PipeletOptions::default());
    p.step().unwrap();
    drop(p);
    fx.emit("desk", "detected", "{v:2}\n");
    let mut p = fx.ingress(ROOM, &[("desk", "detected")], PipeletOptions::default());
    assert!(p.cursors()[0].1.is_some());
    let pr = p.step().unwrap();
    assert_eq!(pr.consumed, 1);
    assert_eq!(field(&fx.main("room"), "v"), [Value::Int(1), Value::Int(2)]);
}

#[test]
fn without_cursor_filter_restarts_duplicate() {
    let fx = fx();
    fx.emit("desk", "detected", "{v:1}\n");
    let opts = PipeletOptions {
        cursor_filter: false,
        ..Default::default()
    };
    let mut p = fx.ingress(ROOM, &[("desk", "detected")], opts);
    p.step().unwrap();
    drop(p);
    let mut p = fx.ingress(ROOM, &[("desk", "detected")], opts);
    p.step().unwrap();
    assert_eq!(fx.main("room").len(), 2);
}

#[test]
fn one_cursor_per_source() {
    let fx = fx();
    fx.emit("a", "detected", "{v:1}\n");
    fx.emit("b", "detected", "{v:10}\n{v:20}\n");
    let mut p = fx.ingress(ROOM, &[("a", "detected"), ("b", "detected")], PipeletOptions::default());
    let pr = p.step().unwrap();
    assert_eq!(pr.emitted, 3);
    assert_eq!(fx.store.head("room", MAIN).unwrap(), 1);
    let msgs = fx.store.read_messages("room", MAIN).unwrap();
    assert!(msgs[0].1.contains_key("cursor.a@detected"));
    assert!(msgs[0].1.contains_key("cursor.b@detected"));
    fx.emit("b", "detected", "{v:30}\n");
    p.step().unwrap();
    let msgs = fx.store.read_messages("room", MAIN).unwrap();
    assert!(!msgs[1].1.contains_key("cursor.a@detected"));
    let main = fx.main("room");
    let from: Vec<_> = main.iter().map(|r| r.get("from").unwrap().to_string()).collect();
    assert_eq!(from[0], "[\"a@detected\"]");
    assert_eq!(from[3], "[\"b@detected\"]");
}

#[test]
fn aggregates_survive_restart() {
    let fx = fx();
    fx.emit("a", "x", "{k:\"p\",v:1}\n{k:\"q\",v:2}\n");
    let mut p = fx.ingress(SUM, &[("a", "x")], PipeletOptions::default());
    p.step().unwrap();
    drop(p);
    fx.emit("a", "x", "{k:\"p\",v:5}\n");
    let mut p = fx.ingress(SUM, &[("a", "x")], PipeletOptions::default());
    p.step().unwrap();
    let main = fx.main("room");
    let last = main.last().unwrap();
    assert_eq!(last.get("k"), Some(&Value::str("p")));
    assert_eq!(last.get("sum"), Some(&Value::Int(6)));
}

#[test]
fn rejects_and_logs_go_to_side_branches() {
    let fx = fx();
    let yaml = r#"
kind: t/v1/Room
name: room
ingress:
  - name: occ
    rules:
      - {match: "has <secret: string>", action: reject}
      - {match: "has <note: string>", action: "log(\"n\")"}
    flow: "put w := v + 1"
"#;
    fx.emit("a", "x", "{v:1}\n{v:\"s\"}\n{secret:\"pw\"}\n{note:\"hi\"}\n");
    let mut p = fx.ingress(yaml, &[("a", "x")], PipeletOptions::default());
    let pr = p.step().unwrap();
    assert_eq!(pr.emitted, 1);
    assert_eq!(pr.rejected, 2);
    let errors = fx.store.records("room", ERRORS).unwrap();
    let reasons: Vec<_> = field(&errors, REASON_FIELD);
    assert_eq!(reasons, [Value::str("rule-reject"), Value::str("type-error")]);
    let log = fx.store.records("room", LOG).unwrap();
    assert_eq!(field(&log, LOG_FIELD), [Value::str("n")]);
}

#[test]
fn joined_sources_skip_older_records() {
    let fx = fx();
    fx.emit("phone", "x", "{v:1}\n");
    let since = fx.clock.now().plus_nanos(1);
    fx.emit("phone", "x", "{v:2}\n");
    let spec = ContextSpec::from_yaml(ROOM).unwrap();
    fx.store.ensure_pool("room").unwrap();
    let src = Source {
        context: "phone".into(),
        egress: "x".into(),
        injection: Injection::default(),
        since: Some(since),
    };
    let mut p = Pipelet::ingress(
        fx.store.clone(),
        "room",
        &spec.ingress[0],
        &[src],
        Arc::new(|_, e| Some(e.to_string())),
        fx.clock.clone(),
        PipeletOptions::default(),
    )
    .unwrap();
    assert_eq!(p.step().unwrap().consumed, 2);
    assert_eq!(field(&fx.main("room"), "v"), [Value::Int(2)]);
}

#[test]
fn view_follows_main() {
    let fx = fx();
    let spec = ContextSpec::from_yaml(
        "kind: t/v1/Room\nname: room\negress:\n  - name: big\n    flow: \"where v > 1\"\n",
    )
    .unwrap();
    fx.emit("room", MAIN, "{v:1}\n{v:2}\n");
    fx.store.ensure_branch("room", "big").unwrap();
    let mut v = Pipelet::view(
        fx.store.clone(),
        "room",
        &spec.egress[0],
        "big",
        fx.clock.clone(),
        PipeletOptions::default(),
    )
    .unwrap();
    v.step().unwrap();
    fx.emit("room", MAIN, "{v:3}\n");
    v.step().unwrap();
    let view = fx.store.records("room", "big").unwrap();
    assert_eq!(field(&view, "v"), [Value::Int(2), Value::Int(3)]);
    let main = fx.main("room");
    assert_eq!(view[1].ts(), main[2].ts());
    assert!(fx.store.latest_cursor("room", "big", "cursor.room@main").unwrap().is_some());
}

#[test]
fn crash_mid_commit_recovers_on_next_step() {
    let fx = fx();
    fx.emit("a", "x", "{v:1}\n");
    let mut p = fx.ingress(ROOM, &[("a", "x")], PipeletOptions::default());
    fx.store.faults().arm(0, crate::store::LoadStep::AfterMessage);
    assert!(p.step().is_err());
    drop(p);
    let store = Store::open(fx.store.root()).unwrap();
    let resolver: Resolver = Arc::new(|_, e| Some(e.to_string()));
    let spec = ContextSpec::from_yaml(ROOM).unwrap();
    let src = Source {
        context: "a".into(),
        egress: "x".into(),
        injection: Injection::default(),
        since: None,
    };
    let mut p = Pipelet::ingress(store.clone(), "room", &spec.ingress[0], &[src], resolver, fx.clock.clone(), PipeletOptions::default()).unwrap();
    p.step().unwrap();
    assert!(p.step().unwrap().is_idle());
    assert_eq!(store.records("room", MAIN).unwrap().len(), 1);
}

#[test]
fn lineage_appends_in_path_order() {
    let mut r = Record::new();
    append_from(&mut r, "a@x");
    append_from(&mut r, "b@y");
    assert_eq!(r.get("from").unwrap().to_string(), "[\"a@x\",\"b@y\"]");
}
