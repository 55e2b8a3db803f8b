use ctxrouter::record::{Record, Value};
use ctxrouter::store::{LoadStep, Message, Stamp, Store, StoreOptions, MAIN};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn batch(rng: &mut ChaCha8Rng, seq: &mut i64) -> Vec<Record> {
    (0..rng.gen_range(1..6))
        .map(|_| {
            *seq += 1;
            Record::of([("seq", Value::Int(*seq)), ("pad", Value::str("x".repeat(rng.gen_range(0..40))))])
        })
        .collect()
}

/// Every reopen after a kill shows exactly the commits that were journaled:
/// all acknowledged ones, plus the killed one only if it died after its
/// journal line was complete.
#[test]
fn kills_never_leave_torn_commits() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let opts = StoreOptions { fsync: false };
    let mut store = Store::open_with(dir.path(), opts).unwrap();
    store.create_pool("p").unwrap();
    let mut expected: Vec<Vec<Record>> = Vec::new();
    let mut seq = 0;
    for kill in 0..50 {
        let step = LoadStep::ALL[rng.gen_range(0..LoadStep::ALL.len())];
        store.faults().arm(rng.gen_range(0..5), step);
        loop {
            let b = batch(&mut rng, &mut seq);
            let mut m = Message::new();
            m.insert("seq".into(), seq.to_string());
            match store.load("p", MAIN, b.clone(), m, Stamp::Verbatim) {
                Ok(id) => {
                    assert_eq!(id as usize, expected.len());
                    expected.push(b);
                }
                Err(e) => {
                    assert!(store.faults().crashed(), "{e}");
                    if step == LoadStep::AfterJournal {
                        expected.push(b);
                    }
                    break;
                }
            }
        }
        store = Store::open_with(dir.path(), opts).unwrap();
        let commits = store.read("p", MAIN, 0).unwrap();
        assert_eq!(commits.len(), expected.len(), "kill {kill} at {step:?}");
        for (c, want) in commits.iter().zip(&expected) {
            assert_eq!(c.records.as_slice(), want.as_slice());
            let last = want.iter().filter_map(|r| r.get("seq")).next_back().unwrap();
            assert_eq!(c.message.get("seq").map(String::as_str), Some(last.to_string().as_str()));
        }
    }
    assert!(expected.len() > 50);
}
