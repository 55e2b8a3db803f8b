//! Scenarios S1-S4, S6 and S7 at desk scale.

use std::collections::{BTreeMap, BTreeSet};

use ctxrouter::flow::{parse_pipeline, qcx};
use ctxrouter::policy::AclTable;
use ctxrouter::record::{parse_lines, to_lines, Record, Value};
use ctxrouter::runtime::{Runtime, ANONYMOUS, POLL};
use ctxrouter::store::MAIN;

use crate::checks::{check_s7_output, S7_FLOW, S7_RECORDS};
use crate::dataset::{self, energy_by_slot, latest_by_slot, occupancy_by_slot, occupied_share, Dataset};
use crate::topology::{Campus, DeviceKind, Env, BUILDING};
use crate::{close, HarnessError, Report};

pub const SCENARIOS: [&str; 6] = [
    "s1_query",
    "s2_compose",
    "s3_opportunistic",
    "s4_policy",
    "s6_automation",
    "s7_heterogeneous",
];

/// One hour of readings per device.
pub const RECORDS_PER_DEVICE: usize = 360;

pub fn scenario(name: &str, seed: u64, rooms: usize) -> Result<Report, HarnessError> {
    match name {
        "s1_query" => s1_query(seed, rooms),
        "s2_compose" => s2_compose(seed, rooms),
        "s3_opportunistic" => s3_opportunistic(rooms),
        "s4_policy" => s4_policy(rooms),
        "s6_automation" => s6_automation(seed, rooms),
        "s7_heterogeneous" => s7_heterogeneous(),
        _ => Err(HarnessError::UnknownScenario(name.to_string())),
    }
}

fn bad(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

/// Per-room oracles straight from the generated data.
struct Truth {
    occupancy: BTreeMap<String, BTreeMap<i64, f64>>,
    energy: BTreeMap<String, BTreeMap<i64, f64>>,
}

impl Truth {
    fn new(campus: &Campus, data: &Dataset) -> Truth {
        let mut t = Truth {
            occupancy: BTreeMap::new(),
            energy: BTreeMap::new(),
        };
        for room in &campus.rooms {
            let motion = campus
                .devices_of(room, DeviceKind::Motion)
                .flat_map(|d| dataset::records(data, &d.name));
            t.occupancy.insert(room.clone(), occupancy_by_slot(motion));
            let readings = [DeviceKind::Lamp, DeviceKind::Appliance]
                .into_iter()
                .flat_map(|k| campus.devices_of(room, k))
                .flat_map(|d| dataset::records(data, &d.name));
            t.energy.insert(room.clone(), energy_by_slot(readings));
        }
        t
    }
}

fn loaded_campus(seed: u64, rooms: usize, occupancy: impl Fn(usize) -> f64) -> Result<(Campus, Truth), HarnessError> {
    let campus = Campus::build(rooms)?;
    let data = dataset::generate(&campus, RECORDS_PER_DEVICE, seed, occupancy);
    dataset::load(&campus, &data)?;
    campus.rt().quiesce()?;
    let truth = Truth::new(&campus, &data);
    Ok((campus, truth))
}

fn float(records: &[Record], field: &str) -> Option<f64> {
    records.first().and_then(|r| r.get(field)).and_then(Value::as_f64)
}

fn by_slot_f64(records: &[Record], field: &str) -> BTreeMap<i64, f64> {
    latest_by_slot(records, field)
        .into_iter()
        .filter_map(|(s, v)| v.as_f64().map(|f| (s, f)))
        .collect()
}

fn sorted_lines(records: &[Record]) -> Vec<String> {
    let mut lines: Vec<String> = to_lines(records).lines().map(str::to_string).collect();
    lines.sort();
    lines
}

/// For every egress of every context, the view holds exactly what the
/// egress flow makes of the main branch. Call after quiescence.
pub fn view_convergence(rt: &Runtime) -> Result<Vec<String>, HarnessError> {
    let mut mismatches = Vec::new();
    for c in rt.contexts() {
        let Some(name) = c.get("name").and_then(Value::as_str).map(str::to_string) else { continue };
        let Some(spec) = rt.context(&name) else { continue };
        let main = rt.store().records(&name, MAIN)?;
        for e in &spec.egress {
            let want = e.flow.eval(main.clone()).records;
            let branch = rt.view_branch(&name, &e.id).ok_or_else(|| bad(format!("no view for {name}@{}", e.id)))?;
            let got = rt.store().records(&name, &branch)?;
            if sorted_lines(&got) != sorted_lines(&want) {
                mismatches.push(format!("{name}@{}: view has {}, flow gives {}", e.id, got.len(), want.len()));
            }
        }
    }
    Ok(mismatches)
}

/// Queries over one room, across rooms, and across two egresses.
pub fn s1_query(seed: u64, rooms: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("s1_query");
    let (campus, truth) = loaded_campus(seed, rooms, |i| 0.2 + 0.6 * (i % 4) as f64 / 3.0)?;
    let rt = campus.rt();
    let mut total_qcx = 0;
    let mut ask = |target: &str, q: &str| -> Result<Vec<Record>, HarnessError> {
        total_qcx += qcx(&[target], &parse_pipeline(q)?);
        Ok(rt.query(target, q, ANONYMOUS)?.records)
    };

    for room in &campus.rooms {
        let occ = ask(&format!("{room}@occupancy"), "max(occupancy) by slot")?;
        let got = occupied_share(&by_slot_f64(&occ, "max"));
        let want = occupied_share(&truth.occupancy[room]);
        report.check(format!("{room} occupancy"), close(got, want, 1e-9), format!("{got:?} vs {want:?}"));
    }

    let per_slot = ask("kind:*/*/Room@occupancy", "count() by _ctx,slot | sort -r count | head")?;
    let most = per_slot.first().and_then(|r| r.get("count")).cloned();
    report.expect_eq("one occupancy record per room and slot", most, Some(Value::Int(1)));
    let least = ask("kind:*/*/Room@occupancy", "avg(occupancy) by _ctx | sort avg | head")?;
    let want = truth.occupancy.values().filter_map(occupied_share).reduce(f64::min);
    report.check("least used room", close(float(&least, "avg"), want, 1e-9), to_lines(&least).trim().to_string());

    // Energy while occupied vs. while empty, joining two egresses by slot.
    for room in &campus.rooms {
        let occ = ask(&format!("{room}@occupancy"), "max(occupancy) by slot")?;
        let energy = ask(&format!("{room}@energy"), "max(watt) by slot")?;
        let occ = by_slot_f64(&occ, "max");
        let energy = by_slot_f64(&energy, "max");
        let split = |o: &BTreeMap<i64, f64>, e: &BTreeMap<i64, f64>| {
            let mut busy = 0.0;
            let mut idle = 0.0;
            for (s, w) in e {
                if o.get(s) == Some(&1.0) {
                    busy += w;
                } else {
                    idle += w;
                }
            }
            (busy, idle)
        };
        report.expect_eq(
            format!("{room} energy busy/idle"),
            split(&occ, &energy),
            split(&truth.occupancy[room], &truth.energy[room]),
        );
    }
    report.metric("qcx", Value::Int(total_qcx as i64));
    report.expect_eq("views converge", view_convergence(rt)?, Vec::new());
    Ok(report)
}

/// The building derives its occupancy and energy from the rooms' egresses.
pub fn s2_compose(seed: u64, rooms: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("s2_compose");
    let (campus, truth) = loaded_campus(seed, rooms, |i| if i % 2 == 0 { 1.0 } else { 0.0 })?;
    let rt = campus.rt();
    let occ = rt.query(&format!("{BUILDING}@occupancy"), "cut slot,occupancy", ANONYMOUS)?.records;
    let got = by_slot_f64(&occ, "occupancy");
    let mut want: BTreeMap<i64, f64> = BTreeMap::new();
    for per_room in truth.occupancy.values() {
        for (s, v) in per_room {
            *want.entry(*s).or_default() += v / rooms as f64;
        }
    }
    let slots_ok = got.len() == want.len() && got.iter().zip(&want).all(|((a, x), (b, y))| a == b && (x - y).abs() <= 1e-9);
    report.check("occupancy per slot = occupied rooms / rooms", slots_ok, format!("{} slots", got.len()));
    let half = (rooms / 2 + rooms % 2) as f64 / rooms as f64;
    report.check(
        "alternating rooms give a constant share",
        !got.is_empty() && got.values().all(|v| (v - half).abs() <= 1e-9),
        format!("expected {half}"),
    );

    let energy = rt.query(&format!("{BUILDING}@energy"), "cut slot,watt", ANONYMOUS)?.records;
    let got = by_slot_f64(&energy, "watt");
    let mut want: BTreeMap<i64, f64> = BTreeMap::new();
    for per_room in truth.energy.values() {
        for (s, v) in per_room {
            *want.entry(*s).or_default() += v;
        }
    }
    report.expect_eq("energy per slot = sum over rooms", got, want);

    let q1 = "avg(occupancy)";
    let q2 = "avg(watt)";
    let avg = rt.query(&format!("{BUILDING}@occupancy"), q1, ANONYMOUS)?.records;
    report.check("average building occupancy", close(float(&avg, "avg"), Some(half), 1e-9), to_lines(&avg).trim().to_string());
    rt.query(&format!("{BUILDING}@energy"), q2, ANONYMOUS)?;
    let total = qcx(&[format!("{BUILDING}@occupancy")], &parse_pipeline(q1)?) + qcx(&[format!("{BUILDING}@energy")], &parse_pipeline(q2)?);
    report.expect_eq("qcx of the two building queries", total, 6);
    Ok(report)
}

const PHONE: &str = "kind: cot.dev/v1/Phone\nname: phone\negress:\n  - name: netTest\n";

fn measurement(download: f64) -> Vec<Record> {
    vec![Record::of([
        ("download", Value::Float(download)),
        ("upload", Value::Float(download / 4.0)),
        ("rtt", Value::Float(20.0)),
    ])]
}

/// A phone reports network tests to whichever room it is in.
pub fn s3_opportunistic(rooms: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("s3_opportunistic");
    let campus = Campus::build(rooms.max(2))?;
    let (rt, clock) = (campus.rt(), &campus.env.clock);
    campus.env.apply(PHONE)?;
    let (a, b) = (campus.rooms[0].clone(), campus.rooms[1].clone());

    rt.load("phone", measurement(10.0))?;
    clock.advance_secs(10);
    rt.join("phone", &a)?;
    clock.advance_secs(10);
    rt.load("phone", measurement(20.0))?;
    rt.quiesce()?;
    clock.advance_secs(10);
    rt.leave("phone", &a)?;
    rt.join("phone", &b)?;
    clock.advance_secs(10);
    rt.load("phone", measurement(30.0))?;
    rt.quiesce()?;

    let speeds = |room: &str| -> Result<Vec<f64>, HarnessError> {
        let recs = rt.query(&format!("{room}@netSpeed"), "cut download", ANONYMOUS)?.records;
        Ok(recs.iter().filter_map(|r| r.get("download").and_then(Value::as_f64)).collect())
    };
    report.expect_eq(format!("{a} saw the test taken during the stay"), speeds(&a)?, vec![20.0]);
    report.expect_eq(format!("{b} saw only the test after joining"), speeds(&b)?, vec![30.0]);
    let fields: BTreeSet<String> = rt
        .query(&format!("{a}@netSpeed"), "head", ANONYMOUS)?
        .records
        .iter()
        .flat_map(|r| r.names().map(str::to_string).collect::<Vec<_>>())
        .collect();
    report.expect_eq(
        "netSpeed keeps bandwidth only",
        fields,
        ["download", "upload", "event_ts", "ts"].into_iter().map(str::to_string).collect(),
    );
    Ok(report)
}

pub const S4_ACL: &str = r#"acl:
  staff: ["*@netSpeed", "*@occupancy", "*@energy"]
  student: ["BioLab@netSpeed", "BioLab@occupancy"]
  room: ["*@detected", "*@energy", "*@netTest"]
  building: ["*@*"]
"#;

const APPS: &str = r#"kind: cot.dev/v1/App
name: StudentApp
role: student
ingress:
  - name: energy
    intent: ["BioHall@energy", "any@energy"]
---
kind: cot.dev/v1/App
name: StaffApp
role: staff
ingress:
  - name: energy
    intent: ["BioHall@energy", "any@energy"]
"#;

fn source_labels(rt: &Runtime, ctx: &str) -> Vec<String> {
    rt.source_map()
        .iter()
        .filter(|((c, _), _)| c == ctx)
        .flat_map(|(_, s)| s.iter().map(|s| s.label()))
        .collect()
}

/// Staff and student roles under the S4 ACL.
pub fn s4_policy(rooms: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("s4_policy");
    let campus = Campus::build(rooms.max(1))?;
    let rt = campus.rt();
    let acl: AclTable = AclTable::from_yaml(S4_ACL.trim_start_matches("acl:\n")).map_err(bad)?;
    report.expect_eq("acl document parses", acl.roles().count(), 4);
    campus.env.apply(S4_ACL)?;
    campus.env.apply(APPS)?;
    let data = dataset::generate(&campus, 60, 4, |_| 0.5);
    dataset::load(&campus, &data)?;

    let target = format!("{BUILDING}@energy");
    let mut student_ever = false;
    for app in ["StudentApp", "StaffApp"] {
        rt.join(BUILDING, app)?;
        rt.join(&campus.rooms[0], app)?;
        student_ever |= source_labels(rt, "StudentApp").contains(&target);
        rt.leave(BUILDING, app)?;
        student_ever |= source_labels(rt, "StudentApp").contains(&target);
        rt.join(BUILDING, app)?;
        student_ever |= source_labels(rt, "StudentApp").contains(&target);
    }
    rt.quiesce()?;
    report.expect_eq("student never sources BioHall@energy", student_ever, false);
    report.expect_eq("student sources nothing", source_labels(rt, "StudentApp"), Vec::<String>::new());
    let staff = source_labels(rt, "StaffApp");
    report.check("staff sources BioHall@energy", staff.contains(&target), format!("{staff:?}"));
    let staff_main = rt.store().records("StaffApp", MAIN)?.len();
    report.check("staff app ingested energy", staff_main > 0, format!("{staff_main} records"));

    let mut energy_targets: Vec<String> = vec![target.clone()];
    energy_targets.extend(campus.rooms.iter().map(|r| format!("{r}@energy")));
    energy_targets.extend(
        campus
            .devices
            .iter()
            .filter(|d| d.kind != DeviceKind::Motion)
            .map(|d| format!("{}@energy", d.name)),
    );
    let staff_ok = energy_targets.iter().filter(|t| rt.query(t, "count()", "staff").is_ok()).count();
    report.expect_eq("staff may query every *@energy", staff_ok, energy_targets.len());
    let fan = rt.query("any@energy", "count()", "staff")?;
    report.check("staff fan-out over any@energy", fan.scanned > 0, format!("scanned {}", fan.scanned));

    let status = |t: &str, role: &str| rt.query(t, "count()", role).err().map(|e| e.status());
    report.expect_eq("student denied BioHall@energy", status(&target, "student"), Some(403));
    let room = &campus.rooms[0];
    report.expect_eq(
        format!("student allowed {room}@occupancy"),
        status(&format!("{room}@occupancy"), "student"),
        if room == "BioLab" { None } else { Some(403) },
    );
    report.expect_eq(format!("student denied {room}@energy"), status(&format!("{room}@energy"), "student"), Some(403));
    Ok(report)
}

const OVERCROWDED: f64 = 0.5;

const ALERTS: &str = "kind: cot.dev/v1/App\nname: BioLabApp\n";

/// An app watches a room's occupancy and logs an alert for each occupied
/// slot, standing in for the SMS sink.
pub fn s6_automation(seed: u64, rooms: usize) -> Result<Report, HarnessError> {
    let mut report = Report::new("s6_automation");
    let campus = Campus::build(rooms.max(1))?;
    let rt = campus.rt();
    campus.env.apply(ALERTS)?;
    let room = campus.rooms[0].clone();
    let mut watcher = rt.watch(&format!("{room}@occupancy"), ANONYMOUS)?;
    let data = dataset::generate(&campus, RECORDS_PER_DEVICE, seed, |_| 0.5);
    dataset::load(&campus, &data)?;
    rt.quiesce()?;

    let mut seen = Vec::new();
    loop {
        let batch = watcher.next_batch(POLL / 10)?;
        if batch.is_empty() {
            break;
        }
        for c in batch {
            seen.extend(c.records.iter().cloned());
        }
    }
    let mut alerted = BTreeSet::new();
    let mut alerts = Vec::new();
    for r in &seen {
        let (Some(Value::Int(slot)), Some(occ)) = (r.get("slot"), r.get("occupancy").and_then(Value::as_f64)) else { continue };
        if occ > OVERCROWDED && alerted.insert(*slot) {
            alerts.push(Record::of([("room", Value::str(&room)), ("slot", Value::Int(*slot)), ("alert", Value::str("overcrowded"))]));
        }
    }
    let n = alerts.len();
    if !alerts.is_empty() {
        rt.load("BioLabApp", alerts)?;
    }
    let view = rt.query(&format!("{room}@occupancy"), "head 1000000", ANONYMOUS)?.records;
    report.expect_eq("watch sees the view in order", to_lines(&seen), to_lines(&view));
    let truth = Truth::new(&campus, &data);
    let want: BTreeSet<i64> = truth.occupancy[&room].iter().filter(|(_, v)| **v > OVERCROWDED).map(|(s, _)| *s).collect();
    report.expect_eq("alerts for exactly the occupied slots", alerted, want);
    report.expect_eq("alerts logged to the sink", rt.store().records("BioLabApp", MAIN)?.len(), n);
    Ok(report)
}

const METERS: [&str; 3] = ["biolab", "office", "lounge"];

fn s7_config() -> String {
    let mut docs: Vec<String> = METERS
        .iter()
        .map(|m| format!("kind: cot.dev/v1/Meter\nname: {m}\negress:\n  - name: energy\n"))
        .collect();
    docs.push(format!(
        "kind: cot.dev/v1/Phone\nname: phone\ningress:\n  - name: energy\n    intent: \"any@energy\"\n    flow: \"{S7_FLOW}\"\n"
    ));
    docs.join("---\n")
}

/// Three rooms report energy with three different schemas; the phone
/// normalizes them at its ingress.
pub fn s7_heterogeneous() -> Result<Report, HarnessError> {
    let mut report = Report::new("s7_heterogeneous");
    let env = Env::new()?;
    env.apply(&s7_config())?;
    for m in METERS {
        env.rt.join(m, "phone")?;
    }
    let records = parse_lines(S7_RECORDS).map_err(bad)?;
    for (m, mut r) in METERS.iter().zip(records) {
        r.remove("ts");
        env.clock.advance_secs(1);
        env.rt.load(m, vec![r])?;
    }
    env.rt.quiesce()?;
    let mut out = env.rt.store().records("phone", MAIN)?;
    out.sort_by_key(|r| r.event_ts());
    report.expect_eq("three records arrive", out.len(), 3);
    check_s7_output(&mut report, &out, &["watt", "event_ts", "from", "ts"]);
    let froms: Vec<Option<&str>> = out.iter().map(|r| r.get("from").and_then(Value::as_str)).collect();
    report.expect_eq("from kept as reported", froms, METERS.iter().map(|m| Some(*m)).collect());
    Ok(report)
}
