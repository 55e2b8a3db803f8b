//! Pipelets move records along one CDG edge set with exactly-once,
//! in-order delivery.
//!
//! An ingress pipelet reads each source's egress branch, runs the injected
//! prefix and the ingress flows, and appends the result to the context's
//! `main` branch in a single commit whose message carries one cursor per
//! source (`cursor.<ctx>@<egress>` = newest source `ts` consumed). A view
//! pipelet does the same from `main` into an egress branch. After a restart
//! [`Pipelet::recover`] reads the cursors back from the target branch, so
//! source records at or before a cursor are never appended twice.

use std::collections::HashMap;
use std::sync::Arc;

use crate::cdg::{RuleSet, Source};
use crate::clock::Clock;
use crate::context::{EgressSpec, IngressSpec};
use crate::flow::{EvalReport, EvalState, Pipeline};
use crate::record::{Record, Timestamp, Value};
use crate::store::{CommitId, Message, Stamp, Store, StoreError, MAIN};

pub const ERRORS: &str = "errors";
pub const LOG: &str = "log";
/// Field added to records written to the errors branch.
pub const REASON_FIELD: &str = "_reason";
/// Field added to records written to the log branch.
pub const LOG_FIELD: &str = "_log";

#[derive(Debug, thiserror::Error)]
pub enum PipeletError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("cursor {key:?} holds {value:?}")]
    BadCursor { key: String, value: String },
}

/// Maps `(context, egress)` to the branch currently serving that egress.
pub type Resolver = Arc<dyn Fn(&str, &str) -> Option<String> + Send + Sync>;

#[derive(Debug, Clone, Copy)]
pub struct PipeletOptions {
    /// Drop source records at or before the cursor. Only turned off to show
    /// what goes wrong without it.
    pub cursor_filter: bool,
    /// Source commits read per edge in one step.
    pub max_commits: usize,
}

impl Default for PipeletOptions {
    fn default() -> Self {
        PipeletOptions {
            cursor_filter: true,
            max_commits: 256,
        }
    }
}

/// What one [`Pipelet::step`] did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    /// Source records read past the cursors.
    pub consumed: usize,
    pub emitted: usize,
    pub rejected: usize,
    pub commit: Option<CommitId>,
}

impl Progress {
    pub fn is_idle(&self) -> bool {
        self.consumed == 0
    }
}

pub fn cursor_key(context: &str, egress: &str) -> String {
    format!("cursor.{context}@{egress}")
}

#[derive(Debug)]
struct Edge {
    pool: String,
    egress: String,
    /// Fixed source branch; otherwise looked up through the resolver.
    branch: Option<String>,
    label: String,
    key: String,
    since: Option<Timestamp>,
    cursor: Option<Timestamp>,
    pending: Option<Timestamp>,
    /// Branch being read and the next commit to read from it.
    read: Option<(String, CommitId)>,
    state: EvalState,
    prefixes: HashMap<String, Pipeline>,
}

impl Edge {
    fn new(pool: &str, egress: &str, branch: Option<String>, since: Option<Timestamp>, flow: &Pipeline) -> Edge {
        Edge {
            pool: pool.to_string(),
            egress: egress.to_string(),
            branch,
            label: format!("{pool}@{egress}"),
            key: cursor_key(pool, egress),
            since,
            cursor: None,
            pending: None,
            read: None,
            state: EvalState::new(flow),
            prefixes: HashMap::new(),
        }
    }

    fn admits(&self, r: &Record, filter: bool) -> bool {
        match r.ts() {
            Some(ts) => {
                !(filter && self.cursor.is_some_and(|c| ts <= c)) && self.since.is_none_or(|s| ts >= s)
            }
            None => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Ingress,
    View,
}

pub struct Pipelet {
    store: Store,
    pool: String,
    name: String,
    kind: Kind,
    target: String,
    edges: Vec<Edge>,
    rules: Option<RuleSet>,
    flow: Pipeline,
    agg: Pipeline,
    agg_state: EvalState,
    patch_from: bool,
    resolver: Option<Resolver>,
    clock: Arc<dyn Clock>,
    opts: PipeletOptions,
    poisoned: bool,
}

impl std::fmt::Debug for Pipelet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipelet")
            .field("pool", &self.pool)
            .field("name", &self.name)
            .field("target", &self.target)
            .field("edges", &self.edges.iter().map(|e| &e.label).collect::<Vec<_>>())
            .finish()
    }
}

impl Pipelet {
    /// Ingress `spec` of context `ctx`, fed by `sources`. Recovers cursors
    /// and aggregate state before returning.
    pub fn ingress(
        store: Store,
        ctx: &str,
        spec: &IngressSpec,
        sources: &[Source],
        resolver: Resolver,
        clock: Arc<dyn Clock>,
        opts: PipeletOptions,
    ) -> Result<Pipelet, PipeletError> {
        let edges = sources
            .iter()
            .map(|s| {
                let mut e = Edge::new(&s.context, &s.egress, None, s.since, &spec.flow);
                e.prefixes = s.injection.prefixes.clone().into_iter().collect();
                e
            })
            .collect();
        let mut p = Pipelet {
            store,
            pool: ctx.to_string(),
            name: spec.id.clone(),
            kind: Kind::Ingress,
            target: MAIN.to_string(),
            edges,
            rules: Some(spec.rules.clone()),
            flow: spec.flow.clone(),
            agg: spec.flow_agg.clone(),
            agg_state: EvalState::new(&spec.flow_agg),
            patch_from: spec.patch_from,
            resolver: Some(resolver),
            clock,
            opts,
            poisoned: false,
        };
        p.recover()?;
        Ok(p)
    }

    /// Maintains egress `spec` of `ctx` from `main` into `branch`.
    pub fn view(
        store: Store,
        ctx: &str,
        spec: &EgressSpec,
        branch: &str,
        clock: Arc<dyn Clock>,
        opts: PipeletOptions,
    ) -> Result<Pipelet, PipeletError> {
        let edge = Edge::new(ctx, MAIN, Some(MAIN.to_string()), None, &spec.flow);
        let mut p = Pipelet {
            store,
            pool: ctx.to_string(),
            name: spec.id.clone(),
            kind: Kind::View,
            target: branch.to_string(),
            edges: vec![edge],
            rules: None,
            flow: spec.flow.clone(),
            agg: Pipeline::identity(),
            agg_state: EvalState::new(&Pipeline::identity()),
            patch_from: false,
            resolver: None,
            clock,
            opts,
            poisoned: false,
        };
        p.recover()?;
        Ok(p)
    }

    pub fn context(&self) -> &str {
        &self.pool
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    /// `(source label, cursor)` per edge.
    pub fn cursors(&self) -> Vec<(String, Option<Timestamp>)> {
        self.edges.iter().map(|e| (e.label.clone(), e.cursor)).collect()
    }

    /// Reloads cursors from the target branch and replays consumed source
    /// records through stateful flows so aggregates pick up where they
    /// left off. Nothing is written.
    pub fn recover(&mut self) -> Result<(), PipeletError> {
        self.agg_state = EvalState::new(&self.agg);
        for e in &mut self.edges {
            e.cursor = match self.store.latest_cursor(&self.pool, &self.target, &e.key)? {
                Some(v) => Some(parse_cursor(&e.key, &v)?),
                None => None,
            };
            e.pending = None;
            e.read = None;
            e.state = EvalState::new(&self.flow);
        }
        if !(self.flow.is_stateless() && self.agg.is_stateless()) {
            self.replay()?;
        }
        self.poisoned = false;
        Ok(())
    }

    fn replay(&mut self) -> Result<(), PipeletError> {
        let mut merged = Vec::new();
        for i in 0..self.edges.len() {
            let Some(cursor) = self.edges[i].cursor else { continue };
            let Some(branch) = self.source_branch(i) else { continue };
            if !self.store.has_branch(&self.edges[i].pool, &branch) {
                continue;
            }
            let edge = &self.edges[i];
            let batch: Vec<Record> = self
                .store
                .records(&edge.pool, &branch)?
                .into_iter()
                .filter(|r| r.ts().is_none_or(|t| t <= cursor) && edge.since.is_none_or(|s| r.ts().is_none_or(|t| t >= s)))
                .collect();
            let (out, _) = self.transform(i, batch);
            merged.extend(out);
        }
        self.agg.eval_batch(merged, &mut self.agg_state);
        Ok(())
    }

    fn source_branch(&self, i: usize) -> Option<String> {
        let e = &self.edges[i];
        match &e.branch {
            Some(b) => Some(b.clone()),
            None => self.resolver.as_ref().and_then(|r| r(&e.pool, &e.egress)),
        }
    }

    /// Prefix, per-source flow and lineage for one edge's batch.
    fn transform(&mut self, i: usize, batch: Vec<Record>) -> (Vec<Record>, EvalReport) {
        let mut report = EvalReport::default();
        let mut prefixed = Vec::with_capacity(batch.len());
        if let Some(rules) = &self.rules {
            let edge = &mut self.edges[i];
            for r in batch {
                let prefix = edge
                    .prefixes
                    .entry(r.schema().canonical())
                    .or_insert_with_key(|_| rules.compile(&r.schema()));
                if prefix.is_identity() {
                    prefixed.push(r);
                    continue;
                }
                let out = prefix.eval([r]);
                prefixed.extend(out.records);
                report.merge(out.report);
            }
        } else {
            prefixed = batch;
        }
        let edge = &mut self.edges[i];
        let out = self.flow.eval_batch(prefixed, &mut edge.state);
        report.merge(out.report);
        let mut records = out.records;
        if self.patch_from {
            for r in &mut records {
                append_from(r, &edge.label);
            }
        }
        (records, report)
    }

    /// Moves whatever is available on every edge in one commit.
    pub fn step(&mut self) -> Result<Progress, PipeletError> {
        if self.poisoned {
            self.recover()?;
        }
        let res = self.step_inner();
        if res.is_err() {
            self.poisoned = true;
        }
        res
    }

    fn step_inner(&mut self) -> Result<Progress, PipeletError> {
        let mut progress = Progress::default();
        let mut merged = Vec::new();
        let mut report = EvalReport::default();
        let mut message = Message::new();
        for i in 0..self.edges.len() {
            let Some(branch) = self.source_branch(i) else { continue };
            let edge = &mut self.edges[i];
            if !self.store.has_branch(&edge.pool, &branch) {
                continue;
            }
            if edge.read.as_ref().map(|(b, _)| b) != Some(&branch) {
                edge.read = Some((branch.clone(), 0));
            }
            let pos = edge.read.as_ref().map_or(0, |r| r.1);
            let mut commits = self.store.read(&edge.pool, &branch, pos)?;
            commits.truncate(self.opts.max_commits);
            if commits.is_empty() {
                continue;
            }
            if let Some(r) = edge.read.as_mut() {
                r.1 = pos + commits.len() as u64;
            }
            let mut batch = Vec::new();
            for c in &commits {
                for r in c.records.iter() {
                    if self.opts.cursor_filter && r.ts().is_some_and(|t| edge.cursor.is_some_and(|c| t <= c)) {
                        continue;
                    }
                    progress.consumed += 1;
                    if let Some(t) = r.ts() {
                        edge.pending = Some(edge.pending.map_or(t, |p| p.max(t)));
                    }
                    if edge.admits(r, self.opts.cursor_filter) {
                        batch.push(r.clone());
                    }
                }
            }
            if let Some(t) = edge.pending {
                message.insert(edge.key.clone(), t.to_string());
            }
            if batch.is_empty() {
                continue;
            }
            let (out, rep) = self.transform(i, batch);
            merged.extend(out);
            report.merge(rep);
        }
        if progress.consumed == 0 {
            return Ok(progress);
        }
        let out = self.agg.eval_batch(merged, &mut self.agg_state);
        report.merge(out.report);
        let now = self.clock.now();
        progress.rejected = report.rejects.len();
        self.write_side(&report, now)?;
        progress.emitted = out.records.len();
        if !out.records.is_empty() {
            let stamp = match self.kind {
                Kind::Ingress => Stamp::Load(now),
                Kind::View => Stamp::Monotonic(now),
            };
            let id = self.store.load(&self.pool, &self.target, out.records, message, stamp)?;
            tracing::debug!(ctx = %self.pool, pipelet = %self.name, id, "pipelet commit");
            progress.commit = Some(id);
        }
        for e in &mut self.edges {
            if let Some(t) = e.pending.take() {
                e.cursor = Some(e.cursor.map_or(t, |c| c.max(t)));
            }
        }
        Ok(progress)
    }

    /// Rejected and logged records go to the `errors` and `log` branches.
    /// These are written before the main commit, so a crash in between can
    /// repeat them but never loses them.
    fn write_side(&self, report: &EvalReport, now: Timestamp) -> Result<(), PipeletError> {
        let errors: Vec<Record> = report
            .rejects
            .iter()
            .map(|rj| {
                let mut r = rj.record.clone();
                r.set(REASON_FIELD, Value::str(rj.reason.clone()));
                r
            })
            .collect();
        let logged: Vec<Record> = report
            .logged
            .iter()
            .map(|(label, r)| {
                let mut r = r.clone();
                r.set(LOG_FIELD, Value::str(label.clone()));
                r
            })
            .collect();
        for (branch, records) in [(ERRORS, errors), (LOG, logged)] {
            if records.is_empty() {
                continue;
            }
            self.store.ensure_branch(&self.pool, branch)?;
            let mut m = Message::new();
            m.insert("pipelet".into(), self.name.clone());
            self.store.load(&self.pool, branch, records, m, Stamp::Monotonic(now))?;
        }
        Ok(())
    }
}

fn parse_cursor(key: &str, v: &str) -> Result<Timestamp, PipeletError> {
    Timestamp::parse_rfc3339(v).ok_or_else(|| PipeletError::BadCursor {
            key: key.to_string(),
            value: v.to_string(),
        })
}

/// Appends `label` to the record's `from` path.
pub fn append_from(r: &mut Record, label: &str) {
    let mut path = match r.get("from") {
        Some(Value::Array(items)) => items.clone(),
        Some(Value::Null) | None => Vec::new(),
        Some(v @ Value::Str(_)) => vec![v.clone()],
        Some(other) => vec![Value::str(other.to_string())],
    };
    path.push(Value::str(label));
    r.set("from", Value::Array(path));
}

#[cfg(test)]
mod tests;
