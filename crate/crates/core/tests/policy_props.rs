use ctxrouter::policy::{AclTable, TargetPattern};
use proptest::prelude::*;

const ROLES: [&str; 2] = ["r1", "r2"];
const NAMES: [&str; 4] = ["a", "b", "c", "d"];

fn part() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["*", "a", "b", "c"]).prop_map(str::to_string)
}

fn pattern() -> impl Strategy<Value = TargetPattern> {
    (part(), part()).prop_map(|(n, e)| TargetPattern::parse(&format!("{n}@{e}")).unwrap())
}

fn decisions(acl: &AclTable) -> Vec<bool> {
    let mut out = Vec::new();
    for r in ROLES {
        for n in NAMES {
            for e in NAMES {
                out.push(acl.check_target(r, n, e));
            }
        }
    }
    out
}

proptest! {
    #[test]
    fn granting_never_revokes(
        grants in prop::collection::vec((prop::sample::select(ROLES.to_vec()), pattern()), 0..8),
        extra in (prop::sample::select(ROLES.to_vec()), pattern()),
    ) {
        let mut acl = AclTable::new();
        for (role, p) in &grants {
            acl.grant(role, p.clone());
        }
        let before = decisions(&acl);
        acl.grant(extra.0, extra.1);
        for (b, a) in before.iter().zip(decisions(&acl)) {
            prop_assert!(!b || a);
        }
    }
}
