//! The desk-scale campus: rooms with motion sensors, lamps and an appliance,
//! all joined to one building.

use std::path::Path;
use std::sync::Arc;

use ctxrouter::clock::ManualClock;
use ctxrouter::record::Timestamp;
use ctxrouter::runtime::{Runtime, RuntimeOptions};
use ctxrouter::store::{Store, StoreOptions};

use crate::HarnessError;

/// Length of an occupancy slot in virtual seconds.
pub const SLOT_SECS: i64 = 60;
/// Virtual start of every run.
pub const EPOCH: i64 = 1_700_000_000;
pub const BUILDING: &str = "BioHall";

const ROOM_NAMES: [&str; 4] = ["BioLab", "PhyLab", "ChemLab", "MathLab"];

pub fn room_name(i: usize) -> String {
    ROOM_NAMES.get(i).map_or_else(|| format!("Room{i}"), |s| s.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeviceKind {
    Motion,
    Lamp,
    Appliance,
}

impl DeviceKind {
    pub fn egress(self) -> &'static str {
        match self {
            DeviceKind::Motion => "detected",
            DeviceKind::Lamp | DeviceKind::Appliance => "energy",
        }
    }

    /// The field a device reports.
    pub fn field(self) -> &'static str {
        match self {
            DeviceKind::Motion => "detected",
            DeviceKind::Lamp | DeviceKind::Appliance => "watt",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Device {
    pub name: String,
    pub room: String,
    pub kind: DeviceKind,
}

/// Two motion sensors, two lamps and an appliance per room.
pub fn devices(room: &str) -> Vec<Device> {
    let d = |suffix: &str, kind| Device {
        name: format!("{room}_{suffix}"),
        room: room.to_string(),
        kind,
    };
    vec![
        d("m0", DeviceKind::Motion),
        d("m1", DeviceKind::Motion),
        d("l0", DeviceKind::Lamp),
        d("l1", DeviceKind::Lamp),
        d("a0", DeviceKind::Appliance),
    ]
}

fn device_yaml(d: &Device) -> String {
    match d.kind {
        DeviceKind::Motion => format!("kind: cot.dev/v1/Motion\nname: {}\negress:\n  - name: detected\n", d.name),
        DeviceKind::Lamp => format!(
            "kind: cot.dev/v1/Lamp\nname: {}\negress:\n  - name: energy\n    flow: \"cut watt,slot,event_ts,ts\"\n  - name: brightness\n    flow: \"where has(brightness) | cut brightness,slot,event_ts,ts\"\n",
            d.name
        ),
        DeviceKind::Appliance => format!("kind: cot.dev/v1/Appliance\nname: {}\negress:\n  - name: energy\n", d.name),
    }
}

/// Room occupancy for a slot is the max over its motion records, so a room
/// counts as occupied when any sensor saw motion in the slot. Energy is the
/// per-slot sum over every energy source.
pub fn room_yaml(name: &str) -> String {
    format!(
        r#"kind: cot.dev/v1/Room
name: {name}
role: room
ingress:
  - name: motion
    intent: "*/*/Motion@detected"
    flow: "rename occupancy:=detected | shape(this, <{{occupancy:float64}}>)"
    flow_agg: "max(occupancy) by slot | rename occupancy:=max"
  - name: energy
    intent: "any@energy"
    flow_agg: "sum(watt) by slot | rename watt:=sum"
  - name: phones
    intent: "*/*/Phone@netTest"
egress:
  - name: occupancy
    flow: "where has(occupancy) | cut slot,occupancy,event_ts,ts"
  - name: energy
    flow: "where has(watt) | cut slot,watt,event_ts,ts"
  - name: netSpeed
    flow: "where has(download) | cut download,upload,event_ts,ts"
"#
    )
}

/// Building occupancy per slot is occupied rooms over total rooms.
pub fn building_yaml(name: &str) -> String {
    format!(
        r#"kind: cot.dev/v1/Building
name: {name}
role: building
ingress:
  - name: room_occupancy
    intent: "*/*/Room@occupancy"
    flow_agg: "avg(occupancy) by slot | rename occupancy:=avg"
  - name: room_energy
    intent: "*/*/Room@energy"
    flow_agg: "sum(watt) by slot | rename watt:=sum"
egress:
  - name: occupancy
    flow: "where has(occupancy)"
  - name: energy
    flow: "where has(watt)"
"#
    )
}

/// A runtime on a manual clock over a fresh directory.
pub struct Env {
    pub dir: tempfile::TempDir,
    pub clock: Arc<ManualClock>,
    pub rt: Runtime,
}

impl Env {
    pub fn new() -> Result<Env, HarnessError> {
        let dir = tempfile::tempdir()?;
        let clock = Arc::new(ManualClock::new(Timestamp::from_secs(EPOCH)));
        let rt = open(dir.path(), &clock)?;
        Ok(Env { dir, clock, rt })
    }

    pub fn apply(&self, yaml: &str) -> Result<(), HarnessError> {
        let rep = self.rt.apply(yaml);
        match rep.errors.first() {
            None => Ok(()),
            Some((i, e)) => Err(HarnessError::Config(format!("document {i}: {e}"))),
        }
    }
}

pub fn open(dir: &Path, clock: &Arc<ManualClock>) -> Result<Runtime, HarnessError> {
    let store = Store::open_with(dir, StoreOptions { fsync: false })?;
    Ok(Runtime::with_store(store, clock.clone(), RuntimeOptions::default())?)
}

/// The campus: `rooms` rooms, their devices joined to them, every room
/// joined to the building.
pub struct Campus {
    pub env: Env,
    pub rooms: Vec<String>,
    pub devices: Vec<Device>,
}

impl Campus {
    pub fn build(rooms: usize) -> Result<Campus, HarnessError> {
        let env = Env::new()?;
        let names: Vec<String> = (0..rooms).map(room_name).collect();
        let devices: Vec<Device> = names.iter().flat_map(|r| devices(r)).collect();
        let mut docs: Vec<String> = devices.iter().map(device_yaml).collect();
        docs.extend(names.iter().map(|r| room_yaml(r)));
        docs.push(building_yaml(BUILDING));
        env.apply(&docs.join("---\n"))?;
        for d in &devices {
            env.rt.join(&d.name, &d.room)?;
        }
        for r in &names {
            env.rt.join(r, BUILDING)?;
        }
        Ok(Campus {
            env,
            rooms: names,
            devices,
        })
    }

    pub fn rt(&self) -> &Runtime {
        &self.env.rt
    }

    pub fn devices_of<'a>(&'a self, room: &'a str, kind: DeviceKind) -> impl Iterator<Item = &'a Device> + 'a {
        self.devices.iter().filter(move |d| d.room == room && d.kind == kind)
    }
}
