//! Query over context data vs. query over device data.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use ctxrouter::record::Record;
use ctxrouter::runtime::ANONYMOUS;

use crate::dataset::{self, energy_by_slot, latest_by_slot, occupancy_by_slot, occupied_share};
use crate::topology::{Campus, DeviceKind};
use crate::{close, HarnessError};

pub const TOLERANCE: f64 = 1e-9;

/// Per-room answers: share of occupied slots and total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomAnswer {
    pub room: String,
    pub occupancy: Option<f64>,
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct PathStats {
    pub scanned: usize,
    pub wall: Duration,
    pub answers: Vec<RoomAnswer>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub context: PathStats,
    pub device: PathStats,
    /// Largest absolute difference between the two paths.
    pub max_diff: f64,
    pub equal: bool,
}

impl BenchReport {
    pub fn pass(&self) -> bool {
        self.equal && (self.context.scanned < self.device.scanned || self.device.scanned == 0)
    }

    pub fn scan_ratio(&self) -> f64 {
        self.device.scanned as f64 / self.context.scanned.max(1) as f64
    }
}

fn per_slot(records: &[Record]) -> BTreeMap<i64, f64> {
    latest_by_slot(records, "max")
        .into_iter()
        .filter_map(|(s, v)| v.as_f64().map(|f| (s, f)))
        .collect()
}

pub fn bench_query_orientation(rooms: usize, records_per_device: usize) -> Result<BenchReport, HarnessError> {
    bench_seeded(rooms, records_per_device, 1)
}

pub fn bench_seeded(rooms: usize, records_per_device: usize, seed: u64) -> Result<BenchReport, HarnessError> {
    let campus = Campus::build(rooms)?;
    let data = dataset::generate(&campus, records_per_device, seed, |i| 0.2 + 0.6 * (i % 4) as f64 / 3.0);
    dataset::load(&campus, &data)?;
    campus.rt().quiesce()?;
    let rt = campus.rt();

    let started = Instant::now();
    let mut context = PathStats::default();
    for room in &campus.rooms {
        // Rooms refresh a slot's record as data arrives; the largest value
        // per slot is the final one.
        let occ = rt.query(&format!("{room}@occupancy"), "max(occupancy) by slot", ANONYMOUS)?;
        let energy = rt.query(&format!("{room}@energy"), "max(watt) by slot", ANONYMOUS)?;
        context.scanned += occ.scanned + energy.scanned;
        let energy = per_slot(&energy.records);
        context.answers.push(RoomAnswer {
            room: room.clone(),
            occupancy: occupied_share(&per_slot(&occ.records)),
            energy: (!energy.is_empty()).then(|| energy.values().sum()),
        });
    }
    context.wall = started.elapsed();

    let started = Instant::now();
    let mut device = PathStats::default();
    for room in &campus.rooms {
        let mut motion = Vec::new();
        for d in campus.devices_of(room, DeviceKind::Motion) {
            let a = rt.query(&format!("{}@detected", d.name), "cut slot,detected", ANONYMOUS)?;
            device.scanned += a.scanned;
            motion.extend(a.records);
        }
        let mut readings = Vec::new();
        for kind in [DeviceKind::Lamp, DeviceKind::Appliance] {
            for d in campus.devices_of(room, kind) {
                let a = rt.query(&format!("{}@energy", d.name), "cut slot,watt", ANONYMOUS)?;
                device.scanned += a.scanned;
                readings.extend(a.records);
            }
        }
        let energy = energy_by_slot(&readings);
        device.answers.push(RoomAnswer {
            room: room.clone(),
            occupancy: occupied_share(&occupancy_by_slot(&motion)),
            energy: (!energy.is_empty()).then(|| energy.values().sum()),
        });
    }
    device.wall = started.elapsed();

    let mut max_diff: f64 = 0.0;
    let mut equal = context.answers.len() == device.answers.len();
    for (c, d) in context.answers.iter().zip(&device.answers) {
        for (a, b) in [(c.occupancy, d.occupancy), (c.energy, d.energy)] {
            equal &= close(a, b, TOLERANCE);
            if let (Some(a), Some(b)) = (a, b) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    Ok(BenchReport {
        context,
        device,
        max_diff,
        equal,
    })
}
