//! Control state kept as record-lines in the `_runtime` pool, one branch
//! per kind of fact. Later records supersede earlier ones.

use std::collections::BTreeMap;

use crate::cdg::Association;
use crate::record::{Record, Timestamp, Value};
use crate::store::{Message, Stamp, Store, StoreError};

pub const POOL: &str = "_runtime";
const CONTEXTS: &str = "contexts";
const ASSOCIATIONS: &str = "associations";
const ACL: &str = "acl";
const VIEWS: &str = "views";

#[derive(Debug, Default)]
pub(crate) struct Saved {
    /// `(name, config yaml)` in first-applied order.
    pub contexts: Vec<(String, String)>,
    pub associations: Vec<Association>,
    pub acl: Option<String>,
    pub views: BTreeMap<(String, String), String>,
}

pub(crate) fn init(store: &Store) -> Result<(), StoreError> {
    store.ensure_pool(POOL)?;
    for b in [CONTEXTS, ASSOCIATIONS, ACL, VIEWS] {
        store.ensure_branch(POOL, b)?;
    }
    Ok(())
}

fn append(store: &Store, branch: &str, r: Record, now: Timestamp) -> Result<(), StoreError> {
    store.load(POOL, branch, vec![r], Message::new(), Stamp::Monotonic(now))?;
    Ok(())
}

fn text(r: &Record, f: &str) -> Option<String> {
    r.get(f).and_then(Value::as_str).map(str::to_string)
}

pub(crate) fn save_context(store: &Store, name: &str, yaml: &str, now: Timestamp) -> Result<(), StoreError> {
    let r = Record::of([("name", Value::str(name)), ("config", Value::str(yaml))]);
    append(store, CONTEXTS, r, now)
}

pub(crate) fn save_association(store: &Store, a: &Association, now: Timestamp) -> Result<(), StoreError> {
    let r = Record::of([
        ("child", Value::str(&a.child)),
        ("parent", Value::str(&a.parent)),
        ("joined_at", Value::Time(a.joined_at)),
        ("left_at", a.left_at.map_or(Value::Null, Value::Time)),
    ]);
    append(store, ASSOCIATIONS, r, now)
}

pub(crate) fn save_acl(store: &Store, yaml: Option<&str>, now: Timestamp) -> Result<(), StoreError> {
    let r = Record::of([("acl", yaml.map_or(Value::Null, Value::str))]);
    append(store, ACL, r, now)
}

pub(crate) fn save_view(store: &Store, ctx: &str, egress: &str, branch: &str, now: Timestamp) -> Result<(), StoreError> {
    let r = Record::of([
        ("ctx", Value::str(ctx)),
        ("egress", Value::str(egress)),
        ("branch", Value::str(branch)),
    ]);
    append(store, VIEWS, r, now)
}

pub(crate) fn load(store: &Store) -> Result<Saved, StoreError> {
    let mut saved = Saved::default();
    for r in store.records(POOL, CONTEXTS)? {
        if let (Some(name), Some(cfg)) = (text(&r, "name"), text(&r, "config")) {
            match saved.contexts.iter_mut().find(|(n, _)| *n == name) {
                Some(slot) => slot.1 = cfg,
                None => saved.contexts.push((name, cfg)),
            }
        }
    }
    for r in store.records(POOL, ASSOCIATIONS)? {
        let (Some(child), Some(parent), Some(joined_at)) = (
            text(&r, "child"),
            text(&r, "parent"),
            r.get("joined_at").and_then(Value::as_time),
        ) else {
            continue;
        };
        let left_at = r.get("left_at").and_then(Value::as_time);
        let a = Association {
            child,
            parent,
            joined_at,
            left_at,
        };
        match saved
            .associations
            .iter_mut()
            .find(|x| x.child == a.child && x.parent == a.parent && x.joined_at == a.joined_at)
        {
            Some(x) => *x = a,
            None => saved.associations.push(a),
        }
    }
    if let Some(r) = store.records(POOL, ACL)?.last() {
        saved.acl = text(r, "acl");
    }
    for r in store.records(POOL, VIEWS)? {
        if let (Some(c), Some(e), Some(b)) = (text(&r, "ctx"), text(&r, "egress"), text(&r, "branch")) {
            saved.views.insert((c, e), b);
        }
    }
    Ok(saved)
}
