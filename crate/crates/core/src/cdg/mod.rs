//! Contextualized dataflow graph: which egresses feed which ingresses.
//!
//! [`Composer`] applies join/leave events one at a time and keeps every
//! ingress's source list up to date incrementally. [`Composer::resolve_all`]
//! recomputes the same map from scratch and serves as recovery path and test
//! oracle.

mod rules;

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::context::{ContextSpec, Intent, Kind, Selector};
use crate::policy::{authorize, AclTable};
use crate::record::Timestamp;

pub use rules::{
    compile_injection, Action, Injection, Match, Rule, RuleError, RuleSet, Unmatched, RULE_REJECT,
    UNMATCHED_SCHEMA,
};

#[derive(Debug, thiserror::Error, Clone, PartialEq, Eq)]
pub enum CdgError {
    #[error("unknown context {0:?}")]
    UnknownContext(String),
    #[error("context {0:?} already exists")]
    DuplicateContext(String),
    #[error("{child} is already joined to {parent}")]
    DuplicateAssociation { child: String, parent: String },
    #[error("{child} is not joined to {parent}")]
    NoAssociation { child: String, parent: String },
    #[error("context {0:?} cannot join itself")]
    SelfJoin(String),
}

/// Exact match on each of group, version and name, where a `*` component
/// matches anything. Direct selectors never match by kind.
pub fn match_kind(selector: &Selector, kind: &Kind) -> bool {
    let comp = |p: &Option<String>, v: &str| p.as_deref().is_none_or(|p| p == v);
    match selector {
        Selector::Any => true,
        Selector::Direct(_) => false,
        Selector::Kind { group, version, name } => {
            comp(group, &kind.group) && comp(version, &kind.version) && comp(name, &kind.name)
        }
    }
}

fn intent_matches(intent: &Intent, ctx: &ContextSpec) -> bool {
    match &intent.selector {
        Selector::Direct(name) => *name == ctx.name,
        sel => match_kind(sel, &ctx.kind),
    }
}

/// One resolved source of an ingress.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub context: String,
    pub egress: String,
    pub injection: Injection,
    /// Join time when the source exists only through an association;
    /// earlier records are not ingested.
    pub since: Option<Timestamp>,
}

impl Source {
    /// `context@egress`
    pub fn label(&self) -> String {
        format!("{}@{}", self.context, self.egress)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Association {
    pub child: String,
    pub parent: String,
    pub joined_at: Timestamp,
    pub left_at: Option<Timestamp>,
}

impl Association {
    pub fn is_open(&self) -> bool {
        self.left_at.is_none()
    }
}

/// `(context, ingress)`
pub type IngressKey = (String, String);
/// Sources of every ingress, each list sorted by `(context, egress)`.
pub type SourceMap = BTreeMap<IngressKey, Vec<Source>>;

/// Ingresses whose source lists changed in one composition step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Delta {
    pub changed: Vec<IngressKey>,
}

impl Delta {
    pub fn is_empty(&self) -> bool {
        self.changed.is_empty()
    }
}

#[derive(Debug, Clone, Default)]
pub struct Composer {
    contexts: BTreeMap<String, Arc<ContextSpec>>,
    associations: Vec<Association>,
    acl: Option<AclTable>,
    sources: SourceMap,
    restarts: BTreeMap<IngressKey, u64>,
}

/// Sources that `child` offers to ingress `ig_idx` of `parent`. Without a
/// join time only direct intents are considered.
fn offered(
    parent: &ContextSpec,
    ig_idx: usize,
    child: &ContextSpec,
    joined_at: Option<Timestamp>,
    acl: Option<&AclTable>,
) -> Vec<Source> {
    let ig = &parent.ingress[ig_idx];
    let mut out = Vec::new();
    if parent.name == child.name {
        return out;
    }
    for intent in &ig.intents {
        let direct = intent.selector.is_direct();
        if joined_at.is_none() && !direct {
            continue;
        }
        if !intent_matches(intent, child) {
            continue;
        }
        for e in &child.egress {
            if e.id == intent.egress && authorize(e.policy.as_ref(), acl, &parent.role, &child.name, &e.id) {
                out.push(Source {
                    context: child.name.clone(),
                    egress: e.id.clone(),
                    injection: compile_injection(&ig.rules, &e.schemas),
                    since: if direct { None } else { joined_at },
                });
            }
        }
    }
    out.sort_by_key(|s| s.since.is_some());
    out
}

/// Inserts keeping `(context, egress)` order; returns whether anything changed.
fn insert_sorted(list: &mut Vec<Source>, s: Source) -> bool {
    match list.binary_search_by(|x| (&x.context, &x.egress).cmp(&(&s.context, &s.egress))) {
        Ok(_) => false,
        Err(i) => {
            list.insert(i, s);
            true
        }
    }
}

impl Composer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn context(&self, name: &str) -> Option<&Arc<ContextSpec>> {
        self.contexts.get(name)
    }

    pub fn contexts(&self) -> impl Iterator<Item = &Arc<ContextSpec>> {
        self.contexts.values()
    }

    pub fn associations(&self) -> &[Association] {
        &self.associations
    }

    pub fn is_joined(&self, child: &str, parent: &str) -> bool {
        self.associations
            .iter()
            .any(|a| a.is_open() && a.child == child && a.parent == parent)
    }

    pub fn acl(&self) -> Option<&AclTable> {
        self.acl.as_ref()
    }

    pub fn sources(&self, context: &str, ingress: &str) -> &[Source] {
        self.sources
            .get(&(context.to_string(), ingress.to_string()))
            .map_or(&[], Vec::as_slice)
    }

    pub fn source_map(&self) -> &SourceMap {
        &self.sources
    }

    /// How many times the ingress was (re)configured because its sources changed.
    pub fn restarts(&self, context: &str, ingress: &str) -> u64 {
        self.restarts
            .get(&(context.to_string(), ingress.to_string()))
            .copied()
            .unwrap_or(0)
    }

    fn bump(&mut self, key: IngressKey, delta: &mut Delta) {
        *self.restarts.entry(key.clone()).or_default() += 1;
        if !delta.changed.contains(&key) {
            delta.changed.push(key);
        }
    }

    /// Registers a new context. Its direct intents resolve against existing
    /// contexts, and existing direct intents naming it resolve now.
    pub fn add_context(&mut self, spec: ContextSpec) -> Result<Delta, CdgError> {
        if self.contexts.contains_key(&spec.name) {
            return Err(CdgError::DuplicateContext(spec.name));
        }
        let spec = Arc::new(spec);
        self.contexts.insert(spec.name.clone(), spec.clone());
        let mut delta = Delta::default();
        for (i, ig) in spec.ingress.iter().enumerate() {
            let key = (spec.name.clone(), ig.id.clone());
            let mut list = Vec::new();
            for other in self.contexts.values() {
                for s in offered(&spec, i, other, None, self.acl.as_ref()) {
                    insert_sorted(&mut list, s);
                }
            }
            let changed = !list.is_empty();
            self.sources.insert(key.clone(), list);
            if changed {
                self.bump(key, &mut delta);
            }
        }
        let others: Vec<Arc<ContextSpec>> = self.contexts.values().cloned().collect();
        for parent in others {
            for i in 0..parent.ingress.len() {
                let key = (parent.name.clone(), parent.ingress[i].id.clone());
                let mut changed = false;
                for s in offered(&parent, i, &spec, None, self.acl.as_ref()) {
                    changed |= insert_sorted(self.sources.entry(key.clone()).or_default(), s);
                }
                if changed {
                    self.bump(key, &mut delta);
                }
            }
        }
        Ok(delta)
    }

    /// Replaces a context's configuration and re-resolves everything it
    /// touches.
    pub fn update_context(&mut self, spec: ContextSpec) -> Result<Delta, CdgError> {
        if !self.contexts.contains_key(&spec.name) {
            return Err(CdgError::UnknownContext(spec.name));
        }
        self.contexts.insert(spec.name.clone(), Arc::new(spec));
        Ok(self.reresolve())
    }

    /// Installs (or clears) the role ACL and re-resolves.
    pub fn set_acl(&mut self, acl: Option<AclTable>) -> Delta {
        self.acl = acl;
        self.reresolve()
    }

    /// Replaces the association history, e.g. after reloading it from disk.
    pub fn restore(&mut self, associations: Vec<Association>) -> Delta {
        self.associations = associations;
        self.reresolve()
    }

    fn reresolve(&mut self) -> Delta {
        let fresh = self.resolve_all();
        let mut delta = Delta::default();
        let keys: Vec<IngressKey> = fresh.keys().chain(self.sources.keys()).cloned().collect();
        for key in keys {
            if fresh.get(&key) != self.sources.get(&key) && !delta.changed.contains(&key) {
                self.bump(key, &mut delta);
            }
        }
        self.sources = fresh;
        delta
    }

    /// `join(child, parent)`: the Algorithm 1 loop over the parent's ingresses.
    pub fn on_join(&mut self, child: &str, parent: &str, at: Timestamp) -> Result<Delta, CdgError> {
        let (c, p) = self.pair(child, parent)?;
        if self.is_joined(child, parent) {
            return Err(CdgError::DuplicateAssociation {
                child: child.into(),
                parent: parent.into(),
            });
        }
        self.associations.push(Association {
            child: child.into(),
            parent: parent.into(),
            joined_at: at,
            left_at: None,
        });
        let mut delta = Delta::default();
        for i in 0..p.ingress.len() {
            let key = (p.name.clone(), p.ingress[i].id.clone());
            let mut changed = false;
            for s in offered(&p, i, &c, Some(at), self.acl.as_ref()) {
                changed |= insert_sorted(self.sources.entry(key.clone()).or_default(), s);
            }
            if changed {
                self.bump(key, &mut delta);
            }
        }
        Ok(delta)
    }

    /// `leave(child, parent)`: drops every source of `parent` that came from
    /// `child` through the association. Sources named by a direct intent stay.
    pub fn on_leave(&mut self, child: &str, parent: &str, at: Timestamp) -> Result<Delta, CdgError> {
        let (c, p) = self.pair(child, parent)?;
        let Some(assoc) = self
            .associations
            .iter_mut()
            .find(|a| a.is_open() && a.child == child && a.parent == parent)
        else {
            return Err(CdgError::NoAssociation {
                child: child.into(),
                parent: parent.into(),
            });
        };
        assoc.left_at = Some(at);
        let mut delta = Delta::default();
        for i in 0..p.ingress.len() {
            let key = (p.name.clone(), p.ingress[i].id.clone());
            let keep = offered(&p, i, &c, None, self.acl.as_ref());
            let list = self.sources.entry(key.clone()).or_default();
            let before = list.len();
            list.retain(|s| s.context != child || keep.iter().any(|k| k.egress == s.egress));
            if list.len() != before {
                self.bump(key, &mut delta);
            }
        }
        Ok(delta)
    }

    fn pair(&self, child: &str, parent: &str) -> Result<(Arc<ContextSpec>, Arc<ContextSpec>), CdgError> {
        if child == parent {
            return Err(CdgError::SelfJoin(child.into()));
        }
        let get = |n: &str| {
            self.contexts
                .get(n)
                .cloned()
                .ok_or_else(|| CdgError::UnknownContext(n.into()))
        };
        Ok((get(child)?, get(parent)?))
    }

    /// Every ingress's sources computed from the contexts, the open
    /// associations and the access policies alone.
    pub fn resolve_all(&self) -> SourceMap {
        let mut map = SourceMap::new();
        for parent in self.contexts.values() {
            for (i, ig) in parent.ingress.iter().enumerate() {
                let mut list = Vec::new();
                for other in self.contexts.values() {
                    for s in offered(parent, i, other, None, self.acl.as_ref()) {
                        insert_sorted(&mut list, s);
                    }
                }
                for a in self.associations.iter().filter(|a| a.is_open() && a.parent == parent.name) {
                    if let Some(child) = self.contexts.get(&a.child) {
                        for s in offered(parent, i, child, Some(a.joined_at), self.acl.as_ref()) {
                            insert_sorted(&mut list, s);
                        }
                    }
                }
                map.insert((parent.name.clone(), ig.id.clone()), list);
            }
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(yaml: &str) -> ContextSpec {
        ContextSpec::from_yaml(yaml).unwrap()
    }

    fn t(n: i64) -> Timestamp {
        Timestamp::from_secs(n)
    }

    fn labels(c: &Composer, ctx: &str, ig: &str) -> Vec<String> {
        c.sources(ctx, ig).iter().map(Source::label).collect()
    }

    fn rooms_and_phone() -> Composer {
        let mut c = Composer::new();
        c.add_context(ctx("kind: cot.dev/v1/Room\nname: RoomA\ningress: [{name: noise, intent: \"any@noise\"}]"))
            .unwrap();
        c.add_context(ctx("kind: cot.dev/v1/Room\nname: RoomB\ningress: [{name: noise, intent: \"any@noise\"}]"))
            .unwrap();
        c.add_context(ctx("kind: vendor_x/v2/phone\nname: Phone\negress: [{name: noise}, {name: loc}]"))
            .unwrap();
        c
    }

    #[test]
    fn kind_patterns() {
        let kind: Kind = "cot.dev/v1/Building".parse().unwrap();
        assert!(match_kind(&Selector::Any, &kind));
        let phone: Kind = "vendor_x/v2/phone".parse().unwrap();
        assert!(match_kind(&"vendor_x/*/phone".parse().unwrap(), &phone));
        assert!(match_kind(&"*/*/phone".parse().unwrap(), &phone));
        assert!(!match_kind(&"a/b/c".parse().unwrap(), &"a/b/d".parse().unwrap()));
        assert!(!match_kind(&Selector::Direct("phone".into()), &phone));
    }

    #[test]
    fn opportunistic_join_and_leave() {
        let mut c = rooms_and_phone();
        let d = c.on_join("Phone", "RoomA", t(1)).unwrap();
        assert_eq!(d.changed, [("RoomA".to_string(), "noise".to_string())]);
        assert_eq!(labels(&c, "RoomA", "noise"), ["Phone@noise"]);
        assert!(labels(&c, "RoomB", "noise").is_empty());
        c.on_leave("Phone", "RoomA", t(2)).unwrap();
        c.on_join("Phone", "RoomB", t(3)).unwrap();
        assert!(labels(&c, "RoomA", "noise").is_empty());
        assert_eq!(labels(&c, "RoomB", "noise"), ["Phone@noise"]);
        assert_eq!(c.source_map(), &c.resolve_all());
        assert_eq!(c.restarts("RoomA", "noise"), 2);
    }

    #[test]
    fn join_errors_leave_state_alone() {
        let mut c = rooms_and_phone();
        assert!(matches!(
            c.on_leave("Phone", "RoomA", t(1)),
            Err(CdgError::NoAssociation { .. })
        ));
        c.on_join("Phone", "RoomA", t(1)).unwrap();
        let before = c.source_map().clone();
        assert!(matches!(
            c.on_join("Phone", "RoomA", t(2)),
            Err(CdgError::DuplicateAssociation { .. })
        ));
        assert!(matches!(c.on_join("Ghost", "RoomA", t(2)), Err(CdgError::UnknownContext(_))));
        assert_eq!(c.source_map(), &before);
    }

    #[test]
    fn unmatched_join_restarts_nothing() {
        let mut c = rooms_and_phone();
        c.add_context(ctx("kind: a/v1/lamp\nname: Lamp\negress: [{name: power}]")).unwrap();
        let d = c.on_join("Lamp", "RoomA", t(1)).unwrap();
        assert!(d.is_empty());
        assert_eq!(c.restarts("RoomA", "noise"), 0);
    }

    #[test]
    fn egress_policy_filters_sources() {
        let mut c = Composer::new();
        c.add_context(ctx("kind: a/v1/lab\nname: BioLab\nrole: BioLab\ningress: [{name: loc, intent: \"any@location\"}]"))
            .unwrap();
        c.add_context(ctx("kind: a/v1/lab\nname: PhyLab\nrole: PhyLab\ningress: [{name: loc, intent: \"any@location\"}]"))
            .unwrap();
        c.add_context(ctx(
            "kind: a/v1/phone\nname: AlicePhone\negress: [{name: location, policy: {mode: allow, roles: [BioLab]}}]",
        ))
        .unwrap();
        c.on_join("AlicePhone", "BioLab", t(1)).unwrap();
        c.on_join("AlicePhone", "PhyLab", t(1)).unwrap();
        assert_eq!(labels(&c, "BioLab", "loc"), ["AlicePhone@location"]);
        assert!(labels(&c, "PhyLab", "loc").is_empty());
    }

    #[test]
    fn direct_intents_resolve_without_joins() {
        let mut c = Composer::new();
        c.add_context(ctx("kind: a/v1/b\nname: Hall\ningress: [{name: w, intent: \"Weather@temp\"}]"))
            .unwrap();
        assert!(labels(&c, "Hall", "w").is_empty());
        let d = c.add_context(ctx("kind: a/v1/w\nname: Weather\negress: [{name: temp}]")).unwrap();
        assert_eq!(d.changed.len(), 1);
        assert_eq!(labels(&c, "Hall", "w"), ["Weather@temp"]);
        c.on_join("Weather", "Hall", t(1)).unwrap();
        c.on_leave("Weather", "Hall", t(2)).unwrap();
        assert_eq!(labels(&c, "Hall", "w"), ["Weather@temp"]);
        assert_eq!(c.source_map(), &c.resolve_all());
    }

    #[test]
    fn several_children_leave_independently() {
        let mut c = rooms_and_phone();
        c.add_context(ctx("kind: a/v1/laptop\nname: Laptop\negress: [{name: noise}]")).unwrap();
        c.on_join("Phone", "RoomA", t(1)).unwrap();
        c.on_join("Laptop", "RoomA", t(1)).unwrap();
        c.on_leave("Phone", "RoomA", t(2)).unwrap();
        assert_eq!(labels(&c, "RoomA", "noise"), ["Laptop@noise"]);
    }

    #[test]
    fn acl_applies_at_join_time() {
        let mut c = Composer::new();
        c.add_context(ctx("kind: a/v1/app\nname: StudentApp\nrole: student\ningress: [{name: e, intent: \"any@energy\"}]"))
            .unwrap();
        c.add_context(ctx("kind: a/v1/bldg\nname: BioHall\negress: [{name: energy}]")).unwrap();
        c.set_acl(Some(AclTable::from_yaml("student: [\"BioLab@occupancy\"]").unwrap()));
        c.on_join("BioHall", "StudentApp", t(1)).unwrap();
        assert!(labels(&c, "StudentApp", "e").is_empty());
        c.set_acl(None);
        assert_eq!(labels(&c, "StudentApp", "e"), ["BioHall@energy"]);
    }

    #[test]
    fn injections_follow_advertised_schemas() {
        let mut c = Composer::new();
        c.add_context(ctx(r#"
kind: a/v1/user
name: Carbon
ingress:
  - name: energy
    intent: any@energy
    rules:
      - {match: "has <watt: string>", action: extract}
      - {match: "has <power: string>", action: "rename watt:=power"}
      - {match: "*", action: reject}
"#))
        .unwrap();
        c.add_context(ctx("kind: a/v1/lamp\nname: Lamp\negress: [{name: energy, schemas: [\"{power:string}\"]}]"))
            .unwrap();
        c.on_join("Lamp", "Carbon", t(1)).unwrap();
        let src = &c.sources("Carbon", "energy")[0];
        assert_eq!(src.injection.to_string(), "{power:string} => rename watt:=power");
    }
}
