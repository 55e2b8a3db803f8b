//! Synthetic device data and the brute-force oracles computed from it.
//!
//! Each device reports every [`INTERVAL_SECS`]. A room is occupied during a
//! slot with its own probability; while occupied the first motion reading of
//! the slot fires and later ones fire with probability 1/2; an empty room
//! never fires. Lamps draw 0..=60 W and appliances 0..=200 W, in whole
//! watts so sums are exact in f64.

use std::collections::BTreeMap;

use ctxrouter::record::{Record, Value};
use ctxrouter::runtime::connector::{Replay, Source};
use ctxrouter::runtime::{Connector, Pacing};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::topology::{Campus, DeviceKind, SLOT_SECS};
use crate::HarnessError;

pub const INTERVAL_SECS: i64 = 10;

/// `(offset seconds, record)` per device name.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub per_device: BTreeMap<String, Vec<(f64, Record)>>,
}

/// `occupancy(i)` is the probability that room `i` is occupied in a slot.
pub fn generate(campus: &Campus, records_per_device: usize, seed: u64, occupancy: impl Fn(usize) -> f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = (records_per_device as i64 * INTERVAL_SECS + SLOT_SECS - 1) / SLOT_SECS;
    let occupied: Vec<Vec<bool>> = (0..campus.rooms.len())
        .map(|i| {
            let p = occupancy(i).clamp(0.0, 1.0);
            (0..slots).map(|_| rng.gen_bool(p)).collect()
        })
        .collect();
    let mut out = Dataset::default();
    for d in &campus.devices {
        let room = campus.rooms.iter().position(|r| *r == d.room).expect("device room exists");
        let recs = (0..records_per_device)
            .map(|k| {
                let t = k as i64 * INTERVAL_SECS;
                let slot = t / SLOT_SECS;
                let mut r = Record::of([("slot", Value::Int(slot))]);
                match d.kind {
                    DeviceKind::Motion => {
                        let first = t % SLOT_SECS == 0;
                        let fired = occupied[room][slot as usize] && (first || rng.gen_bool(0.5));
                        r.set("detected", Value::Bool(fired));
                    }
                    DeviceKind::Lamp => {
                        r.set("watt", Value::Float(rng.gen_range(0..=60) as f64));
                        r.set("brightness", Value::Int(rng.gen_range(0..=100)));
                    }
                    DeviceKind::Appliance => r.set("watt", Value::Float(rng.gen_range(0..=200) as f64)),
                }
                (t as f64, r)
            })
            .collect();
        out.per_device.insert(d.name.clone(), recs);
    }
    out
}

/// Replays every device's records in one commit per device.
pub fn load(campus: &Campus, data: &Dataset) -> Result<usize, HarnessError> {
    let mut n = 0;
    for (name, recs) in &data.per_device {
        let c = Connector {
            target: name.clone(),
            source: Source::Replay(Replay {
                records: recs.clone(),
                speed: 1.0,
            }),
        };
        n += campus.rt().run_connector(&c, Pacing::Bulk)?.records;
    }
    Ok(n)
}

fn slot(r: &Record) -> Option<i64> {
    match r.get("slot") {
        Some(Value::Int(s)) => Some(*s),
        _ => None,
    }
}

/// 1.0 for every slot in which some motion record fired, 0.0 for the rest.
pub fn occupancy_by_slot<'a>(motion: impl IntoIterator<Item = &'a Record>) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for r in motion {
        let Some(s) = slot(r) else { continue };
        let fired = matches!(r.get("detected"), Some(Value::Bool(true)));
        let e = out.entry(s).or_insert(0.0);
        if fired {
            *e = 1.0;
        }
    }
    out
}

pub fn energy_by_slot<'a>(readings: impl IntoIterator<Item = &'a Record>) -> BTreeMap<i64, f64> {
    let mut out = BTreeMap::new();
    for r in readings {
        let (Some(s), Some(w)) = (slot(r), r.get("watt").and_then(Value::as_f64)) else { continue };
        *out.entry(s).or_insert(0.0) += w;
    }
    out
}

/// Share of slots in which the room was occupied.
pub fn occupied_share(by_slot: &BTreeMap<i64, f64>) -> Option<f64> {
    if by_slot.is_empty() {
        return None;
    }
    Some(by_slot.values().sum::<f64>() / by_slot.len() as f64)
}

/// The raw records a device produced, without offsets.
pub fn records<'a>(data: &'a Dataset, device: &str) -> impl Iterator<Item = &'a Record> + 'a {
    data.per_device.get(device).into_iter().flatten().map(|(_, r)| r)
}

/// Reads the last record per slot, as later records refresh earlier ones.
pub fn latest_by_slot(records: &[Record], field: &str) -> BTreeMap<i64, Value> {
    let mut out = BTreeMap::new();
    for r in records {
        if let (Some(s), Some(v)) = (slot(r), r.get(field)) {
            out.insert(s, v.clone());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(slot: i64, field: &str, v: Value) -> Record {
        let mut r = Record::of([("slot", Value::Int(slot))]);
        r.set(field, v);
        r
    }

    #[test]
    fn occupancy_is_any_motion_per_slot() {
        let recs = [
            rec(0, "detected", Value::Bool(false)),
            rec(0, "detected", Value::Bool(true)),
            rec(1, "detected", Value::Bool(false)),
        ];
        let by = occupancy_by_slot(&recs);
        assert_eq!(by.into_iter().collect::<Vec<_>>(), [(0, 1.0), (1, 0.0)]);
        assert_eq!(occupied_share(&occupancy_by_slot(&recs)), Some(0.5));
        assert_eq!(occupied_share(&BTreeMap::new()), None);
    }

    #[test]
    fn energy_sums_per_slot_and_skips_nulls() {
        let recs = [
            rec(2, "watt", Value::Float(3.0)),
            rec(2, "watt", Value::Null),
            rec(2, "watt", Value::Float(4.0)),
        ];
        assert_eq!(energy_by_slot(&recs).get(&2), Some(&7.0));
    }

    #[test]
    fn latest_record_wins() {
        let recs = [rec(0, "max", Value::Float(1.0)), rec(0, "max", Value::Float(2.0))];
        assert_eq!(latest_by_slot(&recs, "max").get(&0), Some(&Value::Float(2.0)));
    }
}
