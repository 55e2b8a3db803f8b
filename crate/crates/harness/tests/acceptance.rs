//! The ten acceptance criteria, one PASS/FAIL line each. Every criterion
//! runs even when an earlier one fails; the test fails at the end.

use std::time::{Duration, Instant};

use ctxr_harness::bench::{bench_query_orientation, TOLERANCE};
use ctxr_harness::checks::{composition_oracle, durability, lineage_three_hops, s7_pipeline, timestamp_rule};
use ctxr_harness::crash::{crash_test, crash_test_with};
use ctxr_harness::scenario::{s1_query, s4_policy, s7_heterogeneous};
use ctxr_harness::{HarnessError, Report};
use ctxrouter::pipelet::PipeletOptions;

struct Outcome {
    pass: bool,
    detail: String,
}

fn from_reports(reports: &[Report]) -> Outcome {
    let failed: Vec<String> = reports
        .iter()
        .flat_map(|r| r.failures().map(move |c| format!("{}/{}: {}", r.name, c.name, c.detail)))
        .collect();
    Outcome {
        pass: reports.iter().all(Report::pass),
        detail: if failed.is_empty() {
            format!("{} checks", reports.iter().map(|r| r.checks.len()).sum::<usize>())
        } else {
            failed.join("; ")
        },
    }
}

fn criterion(n: usize, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Result<Outcome, HarnessError>) -> bool {
    let started = Instant::now();
    let outcome = f().unwrap_or_else(|e| Outcome {
        pass: false,
        detail: format!("error: {e}"),
    });
    let took = started.elapsed();
    let in_time = limit.is_none_or(|l| took <= l);
    let pass = outcome.pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    println!(
        "{} {n:>2}. {name}: {} [{:.2}s{budget}]",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        took.as_secs_f64()
    );
    pass
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let mut results = Vec::new();

    results.push(criterion(1, "S7 heterogeneous records", Some(secs(1)), || {
        Ok(from_reports(&[s7_pipeline()?, s7_heterogeneous()?]))
    }));

    results.push(criterion(2, "composition oracle, 100 sequences", Some(secs(30)), || {
        Ok(from_reports(&[composition_oracle(100, 2)?]))
    }));

    results.push(criterion(3, "S4 policy outcomes", None, || Ok(from_reports(&[s4_policy(4)?]))));

    results.push(criterion(4, "EOIO crash test, 5 seeds + negative control", None, || {
        let mut lines = Vec::new();
        let mut pass = true;
        for seed in 1..=5 {
            let r = crash_test(10_000, 25, seed)?;
            let ok = r.pass() && r.kills == 25 && r.elapsed <= secs(60);
            pass &= ok;
            lines.push(format!(
                "seed {seed} {} ({} kills, {} mid-commit, {:.1}s)",
                if ok { "ok" } else { "bad" },
                r.kills,
                r.mid_commit,
                r.elapsed.as_secs_f64()
            ));
            if !ok {
                lines.push(format!("{r:?}"));
            }
        }
        let opts = PipeletOptions {
            cursor_filter: false,
            ..Default::default()
        };
        let control = crash_test_with(2_000, 5, 1, opts)?;
        pass &= !control.pass();
        lines.push(format!(
            "control {} ({} duplicates)",
            if control.pass() { "passed unexpectedly" } else { "fails" },
            control.duplicates.len()
        ));
        Ok(Outcome {
            pass,
            detail: lines.join(", "),
        })
    }));

    results.push(criterion(5, "query over context = device oracle", Some(secs(60)), || {
        let b = bench_query_orientation(4, 1000)?;
        Ok(Outcome {
            pass: b.pass(),
            detail: format!(
                "max diff {:e} (tol {TOLERANCE:e}), scanned {} vs {} device records",
                b.max_diff, b.context.scanned, b.device.scanned
            ),
        })
    }));

    results.push(criterion(6, "timestamp rule, 1000 records", None, || Ok(from_reports(&[timestamp_rule(1000)?]))));

    results.push(criterion(7, "lineage over 3 hops", None, || Ok(from_reports(&[lineage_three_hops()?]))));

    results.push(criterion(8, "view convergence in S1", None, || {
        let r = s1_query(7, 4)?;
        let c = r.checks.iter().find(|c| c.name == "views converge");
        Ok(Outcome {
            pass: c.is_some_and(|c| c.pass) && r.pass(),
            detail: c.map_or("check missing".into(), |c| format!("mismatches {}", c.detail)),
        })
    }));

    results.push(criterion(9, "ctxr qcx prints 3", None, || {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let args = ["ctxr", "qcx", "BioHall@occupancy", "avg(occupancy)"];
        let code = ctxr_cli::run(args, &mut std::io::empty(), &mut out, &mut err);
        let out = String::from_utf8_lossy(&out).to_string();
        Ok(Outcome {
            pass: code == 0 && out == "3\n",
            detail: format!("exit {code}, output {:?}", out.trim()),
        })
    }));

    results.push(criterion(10, "durability, 50 kills", Some(secs(30)), || Ok(from_reports(&[durability(50, 10)?]))));

    let passed = results.iter().filter(|p| **p).count();
    println!("{passed}/{} acceptance criteria passed", results.len());
    assert_eq!(passed, results.len());
}
