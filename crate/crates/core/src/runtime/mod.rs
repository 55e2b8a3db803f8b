//! Embedded registry hosting every context of one process.
//!
//! Composition events (apply, join, leave, ACL changes) run one at a time in
//! arrival order. Each event updates the [`Composer`], persists the fact to
//! the `_runtime` pool and restarts exactly the pipelets whose inputs
//! changed. Queries, loads and watches only take a short snapshot of the
//! control state and then talk to the store.

pub mod connector;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;

use crate::cdg::{match_kind, CdgError, Composer, IngressKey, SourceMap};
use crate::clock::{Clock, SystemClock};
use crate::context::{ContextConfig, ContextError, ContextSpec, Intent, Selector};
use crate::flow::{parse_pipeline, FlowError};
use crate::pipelet::{Pipelet, PipeletError, PipeletOptions, Resolver};
use crate::policy::{authorize, AclTable, EgressPolicy};
use crate::record::{Record, RecordError, Value};
use crate::store::{CommitId, Stamp, Store, StoreError, Watcher, MAIN};

pub use connector::{Connector, ConnectorReport, Pacing};
pub use persist::POOL as RUNTIME_POOL;

/// Fallback wake-up for pipelet workers.
pub const POLL: Duration = Duration::from_millis(100);
/// Role used when a caller presents none.
pub const ANONYMOUS: &str = "anonymous";
/// Field added to fan-out query results.
pub const CTX_FIELD: &str = "_ctx";

#[derive(Debug, thiserror::Error)]
pub enum RuntimeError {
    #[error("unknown context {0:?}")]
    UnknownContext(String),
    #[error("unknown egress {0:?}")]
    UnknownEgress(String),
    #[error("access denied: role {role:?} may not read {target}")]
    Denied { role: String, target: String },
    #[error("invalid target {0:?}")]
    Target(String),
    #[error("invalid pipeline: {0}")]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Cdg(#[from] CdgError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Pipelet(#[from] PipeletError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{0}")]
    BadRequest(String),
}

impl RuntimeError {
    /// HTTP status for the error.
    pub fn status(&self) -> u16 {
        match self {
            RuntimeError::UnknownContext(_) | RuntimeError::UnknownEgress(_) => 404,
            RuntimeError::Cdg(CdgError::UnknownContext(_)) => 404,
            RuntimeError::Denied { .. } => 403,
            RuntimeError::Cdg(
                CdgError::DuplicateAssociation { .. } | CdgError::NoAssociation { .. } | CdgError::DuplicateContext(_),
            ) => 409,
            RuntimeError::Cdg(CdgError::SelfJoin(_))
            | RuntimeError::Target(_)
            | RuntimeError::Flow(_)
            | RuntimeError::Context(_)
            | RuntimeError::Record(_)
            | RuntimeError::BadRequest(_)
            | RuntimeError::Store(StoreError::EmptyCommit) => 400,
            _ => 500,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuntimeOptions {
    pub pipelet: PipeletOptions,
}

/// One authorization decision taken by a query or watch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEntry {
    pub role: String,
    pub context: String,
    pub egress: String,
    pub allowed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Answer {
    pub records: Vec<Record>,
    /// Records read from views before evaluation.
    pub scanned: usize,
    pub rejected: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApplyReport {
    /// Names of created or changed contexts; `acl` for an ACL document.
    pub applied: Vec<String>,
    pub unchanged: Vec<String>,
    /// `(document index, message)`
    pub errors: Vec<(usize, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EdgeRole {
    Ingress,
    View,
}

type SlotKey = (String, EdgeRole, String);

struct Worker {
    stop: Arc<AtomicBool>,
    handle: JoinHandle<()>,
}

struct Slot {
    pipelet: Arc<Mutex<Pipelet>>,
    worker: Option<Worker>,
}

#[derive(Default)]
struct Control {
    composer: Composer,
    configs: BTreeMap<String, String>,
    slots: BTreeMap<SlotKey, Slot>,
}

/// Admits waiters strictly in arrival order.
#[derive(Default)]
struct Fifo {
    tickets: Mutex<(u64, u64)>,
    turn: Condvar,
}

struct FifoGuard<'a>(&'a Fifo);

impl Fifo {
    fn enter(&self) -> FifoGuard<'_> {
        let mut t = self.tickets.lock().unwrap();
        let mine = t.0;
        t.0 += 1;
        while t.1 != mine {
            t = self.turn.wait(t).unwrap();
        }
        FifoGuard(self)
    }
}

impl Drop for FifoGuard<'_> {
    fn drop(&mut self) {
        let mut t = self.0.tickets.lock().unwrap();
        t.1 += 1;
        self.0.turn.notify_all();
    }
}

type Views = Arc<RwLock<HashMap<(String, String), String>>>;

struct Inner {
    store: Store,
    clock: Arc<dyn Clock>,
    opts: RuntimeOptions,
    fifo: Fifo,
    control: Mutex<Control>,
    views: Views,
    access: Mutex<Vec<AccessEntry>>,
    running: AtomicBool,
}

impl Drop for Inner {
    fn drop(&mut self) {
        let ctrl = self.control.get_mut().unwrap();
        stop_all(&self.store, ctrl);
    }
}

/// Cheap to clone; every clone talks to the same registry.
#[derive(Clone)]
pub struct Runtime {
    inner: Arc<Inner>,
}

impl std::fmt::Debug for Runtime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Runtime").field("root", &self.inner.store.root()).finish()
    }
}

fn stop_worker(store: &Store, w: Worker) {
    w.stop.store(true, Ordering::SeqCst);
    store.nudge();
    let _ = w.handle.join();
}

fn stop_all(store: &Store, ctrl: &mut Control) {
    for slot in ctrl.slots.values_mut() {
        if let Some(w) = slot.worker.take() {
            stop_worker(store, w);
        }
    }
}

fn spawn_worker(store: Store, pipelet: Arc<Mutex<Pipelet>>) -> Worker {
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let name = {
        let p = pipelet.lock().unwrap();
        format!("pipelet-{}-{}", p.context(), p.name())
    };
    let handle = std::thread::Builder::new()
        .name(name)
        .spawn(move || {
            while !flag.load(Ordering::SeqCst) {
                let seen = store.generation();
                let res = pipelet.lock().unwrap().step();
                match res {
                    Ok(p) if !p.is_idle() => continue,
                    Ok(_) => {}
                    Err(e) => tracing::warn!(error = %e, "pipelet step failed"),
                }
                store.wait_change(seen, POLL);
            }
        })
        .expect("spawn pipelet worker");
    Worker { stop, handle }
}

/// A parsed `apply` document.
enum Document {
    Context(String, Box<ContextSpec>),
    Acl(Option<AclTable>, Option<String>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AclDocument {
    acl: Option<AclTable>,
}

fn parse_document(doc: serde_yaml::Value) -> Result<Document, String> {
    let is_acl = doc.as_mapping().is_some_and(|m| m.contains_key("acl"));
    if is_acl {
        let yaml = serde_yaml::to_string(&doc).map_err(|e| e.to_string())?;
        let d: AclDocument = serde_yaml::from_value(doc).map_err(|e| e.to_string())?;
        return Ok(Document::Acl(d.acl, Some(yaml)));
    }
    let cfg: ContextConfig = serde_yaml::from_value(doc).map_err(|e| e.to_string())?;
    let yaml = serde_yaml::to_string(&cfg).map_err(|e| e.to_string())?;
    let spec = cfg.validate().map_err(|e| e.to_string())?;
    if spec.name.starts_with('_') {
        return Err(format!("context name {:?} is reserved", spec.name));
    }
    Ok(Document::Context(yaml, Box::new(spec)))
}

impl Runtime {
    /// Opens (or creates) a runtime persisted under `root`, restoring every
    /// context, association, ACL and view generation saved there.
    pub fn open(root: impl AsRef<Path>, clock: Arc<dyn Clock>, opts: RuntimeOptions) -> Result<Runtime, RuntimeError> {
        let store = Store::open(root.as_ref())?;
        Self::with_store(store, clock, opts)
    }

    pub fn open_default(root: impl AsRef<Path>) -> Result<Runtime, RuntimeError> {
        Self::open(root, Arc::new(SystemClock), RuntimeOptions::default())
    }

    pub fn with_store(store: Store, clock: Arc<dyn Clock>, opts: RuntimeOptions) -> Result<Runtime, RuntimeError> {
        persist::init(&store)?;
        let saved = persist::load(&store)?;
        let rt = Runtime {
            inner: Arc::new(Inner {
                store,
                clock,
                opts,
                fifo: Fifo::default(),
                control: Mutex::new(Control::default()),
                views: Arc::default(),
                access: Mutex::default(),
                running: AtomicBool::new(false),
            }),
        };
        {
            let mut views = rt.inner.views.write().unwrap();
            for (k, b) in saved.views {
                views.insert(k, b);
            }
        }
        let mut ctrl = rt.inner.control.lock().unwrap();
        for (name, yaml) in saved.contexts {
            let spec = ContextSpec::from_yaml(&yaml)?;
            ctrl.composer.add_context(spec)?;
            ctrl.configs.insert(name, yaml);
        }
        if let Some(yaml) = saved.acl {
            let d: AclDocument = serde_yaml::from_str(&yaml).map_err(|e| RuntimeError::BadRequest(e.to_string()))?;
            ctrl.composer.set_acl(d.acl);
        }
        ctrl.composer.restore(saved.associations);
        let names: Vec<String> = ctrl.composer.contexts().map(|c| c.name.clone()).collect();
        for name in names {
            rt.instantiate(&mut ctrl, &name)?;
        }
        drop(ctrl);
        Ok(rt)
    }

    pub fn store(&self) -> &Store {
        &self.inner.store
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.inner.clock
    }

    fn resolver(&self) -> Resolver {
        let views = self.inner.views.clone();
        Arc::new(move |ctx, egress| views.read().unwrap().get(&(ctx.to_string(), egress.to_string())).cloned())
    }

    /// Branch currently serving `ctx@egress`.
    pub fn view_branch(&self, ctx: &str, egress: &str) -> Option<String> {
        self.inner
            .views
            .read()
            .unwrap()
            .get(&(ctx.to_string(), egress.to_string()))
            .cloned()
    }

    /// Starts one worker thread per pipelet; pipelets created later get one
    /// too. Without this, data moves only through [`Runtime::quiesce`].
    pub fn start(&self) {
        let _turn = self.inner.fifo.enter();
        let mut ctrl = self.inner.control.lock().unwrap();
        self.inner.running.store(true, Ordering::SeqCst);
        for slot in ctrl.slots.values_mut() {
            if slot.worker.is_none() {
                slot.worker = Some(spawn_worker(self.inner.store.clone(), slot.pipelet.clone()));
            }
        }
    }

    pub fn stop(&self) {
        let _turn = self.inner.fifo.enter();
        let mut ctrl = self.inner.control.lock().unwrap();
        self.inner.running.store(false, Ordering::SeqCst);
        stop_all(&self.inner.store, &mut ctrl);
    }

    fn install(&self, ctrl: &mut Control, key: SlotKey, pipelet: Pipelet) {
        if let Some(old) = ctrl.slots.remove(&key) {
            if let Some(w) = old.worker {
                stop_worker(&self.inner.store, w);
            }
        }
        let pipelet = Arc::new(Mutex::new(pipelet));
        let worker = self
            .inner
            .running
            .load(Ordering::SeqCst)
            .then(|| spawn_worker(self.inner.store.clone(), pipelet.clone()));
        ctrl.slots.insert(key, Slot { pipelet, worker });
    }

    fn uninstall(&self, ctrl: &mut Control, key: &SlotKey) {
        if let Some(old) = ctrl.slots.remove(key) {
            if let Some(w) = old.worker {
                stop_worker(&self.inner.store, w);
            }
        }
    }

    fn start_ingress(&self, ctrl: &mut Control, ctx: &str, ingress: &str) -> Result<(), RuntimeError> {
        let spec = ctrl
            .composer
            .context(ctx)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownContext(ctx.to_string()))?;
        let Some(ig) = spec.ingress(ingress) else {
            return Ok(());
        };
        let sources = ctrl.composer.sources(ctx, ingress).to_vec();
        let p = Pipelet::ingress(
            self.inner.store.clone(),
            ctx,
            ig,
            &sources,
            self.resolver(),
            self.inner.clock.clone(),
            self.inner.opts.pipelet,
        )?;
        tracing::info!(ctx, ingress, sources = sources.len(), "ingress pipelet started");
        self.install(ctrl, (ctx.to_string(), EdgeRole::Ingress, ingress.to_string()), p);
        Ok(())
    }

    fn start_view(&self, ctrl: &mut Control, spec: &ContextSpec, egress: &str, branch: &str) -> Result<(), RuntimeError> {
        let e = spec
            .egress(egress)
            .ok_or_else(|| RuntimeError::UnknownEgress(format!("{}@{egress}", spec.name)))?;
        self.inner.store.ensure_branch(&spec.name, branch)?;
        let p = Pipelet::view(
            self.inner.store.clone(),
            &spec.name,
            e,
            branch,
            self.inner.clock.clone(),
            self.inner.opts.pipelet,
        )?;
        self.install(ctrl, (spec.name.clone(), EdgeRole::View, egress.to_string()), p);
        Ok(())
    }

    /// Creates the pool, branches and pipelets of a registered context.
    fn instantiate(&self, ctrl: &mut Control, name: &str) -> Result<(), RuntimeError> {
        let spec = ctrl
            .composer
            .context(name)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownContext(name.to_string()))?;
        let store = &self.inner.store;
        store.ensure_pool(name)?;
        for e in &spec.egress {
            let branch = self
                .view_branch(name, &e.id)
                .unwrap_or_else(|| e.id.clone());
            self.inner
                .views
                .write()
                .unwrap()
                .insert((name.to_string(), e.id.clone()), branch.clone());
            self.start_view(ctrl, &spec, &e.id, &branch)?;
        }
        for ig in &spec.ingress {
            self.start_ingress(ctrl, name, &ig.id)?;
        }
        Ok(())
    }

    fn restart_changed(&self, ctrl: &mut Control, changed: &[IngressKey], skip: &str) -> Result<(), RuntimeError> {
        for (ctx, ig) in changed {
            if ctx != skip {
                self.start_ingress(ctrl, ctx, ig)?;
            }
        }
        Ok(())
    }

    /// Applies a multi-document YAML stream. Documents are independent: a
    /// bad one is reported and the rest still apply.
    pub fn apply(&self, text: &str) -> ApplyReport {
        let mut report = ApplyReport::default();
        for (i, doc) in serde_yaml::Deserializer::from_str(text).enumerate() {
            let parsed = serde_yaml::Value::deserialize(doc)
                .map_err(|e| e.to_string())
                .and_then(parse_document);
            let res = match parsed {
                Ok(Document::Context(yaml, spec)) => {
                    let name = spec.name.clone();
                    self.apply_context(*spec, yaml).map(|changed| (name, changed))
                }
                Ok(Document::Acl(acl, yaml)) => self
                    .set_acl_inner(acl, yaml)
                    .map(|_| ("acl".to_string(), true)),
                Err(e) => {
                    report.errors.push((i, e));
                    continue;
                }
            };
            match res {
                Ok((name, true)) => report.applied.push(name),
                Ok((name, false)) => report.unchanged.push(name),
                Err(e) => report.errors.push((i, e.to_string())),
            }
        }
        report
    }

    /// Creates or updates one context. Returns whether anything changed.
    pub fn apply_context(&self, spec: ContextSpec, yaml: String) -> Result<bool, RuntimeError> {
        let _turn = self.inner.fifo.enter();
        let mut ctrl = self.inner.control.lock().unwrap();
        let now = self.inner.clock.now();
        let name = spec.name.clone();
        let Some(old) = ctrl.composer.context(&name).cloned() else {
            let delta = ctrl.composer.add_context(spec)?;
            persist::save_context(&self.inner.store, &name, &yaml, now)?;
            ctrl.configs.insert(name.clone(), yaml);
            self.instantiate(&mut ctrl, &name)?;
            self.restart_changed(&mut ctrl, &delta.changed, &name)?;
            tracing::info!(ctx = %name, "context created");
            return Ok(true);
        };
        if *old == spec {
            return Ok(false);
        }
        let delta = ctrl.composer.update_context(spec.clone())?;
        persist::save_context(&self.inner.store, &name, &yaml, now)?;
        ctrl.configs.insert(name.clone(), yaml);
        for e in &old.egress {
            if spec.egress(&e.id).is_none() {
                self.uninstall(&mut ctrl, &(name.clone(), EdgeRole::View, e.id.clone()));
                self.inner.views.write().unwrap().remove(&(name.clone(), e.id.clone()));
            }
        }
        for e in &spec.egress {
            match old.egress(&e.id) {
                None => {
                    let branch = self.view_branch(&name, &e.id).unwrap_or_else(|| e.id.clone());
                    self.inner
                        .views
                        .write()
                        .unwrap()
                        .insert((name.clone(), e.id.clone()), branch.clone());
                    self.start_view(&mut ctrl, &spec, &e.id, &branch)?;
                }
                Some(o) if o.flow != e.flow => self.rebuild_view(&mut ctrl, &spec, &e.id)?,
                Some(_) => {}
            }
        }
        for ig in &old.ingress {
            if spec.ingress(&ig.id).is_none() {
                self.uninstall(&mut ctrl, &(name.clone(), EdgeRole::Ingress, ig.id.clone()));
            }
        }
        for ig in &spec.ingress {
            let moved = delta.changed.contains(&(name.clone(), ig.id.clone()));
            if moved || old.ingress(&ig.id) != Some(ig) {
                self.start_ingress(&mut ctrl, &name, &ig.id)?;
            }
        }
        self.restart_changed(&mut ctrl, &delta.changed, &name)?;
        tracing::info!(ctx = %name, "context updated");
        Ok(true)
    }

    /// Builds the egress view into a fresh branch generation, then repoints
    /// the egress to it. The old branch is left in place.
    fn rebuild_view(&self, ctrl: &mut Control, spec: &ContextSpec, egress: &str) -> Result<(), RuntimeError> {
        let current = self.view_branch(&spec.name, egress).unwrap_or_else(|| egress.to_string());
        let gen = current
            .rsplit_once(".g")
            .and_then(|(_, n)| n.parse::<u64>().ok())
            .unwrap_or(0)
            + 1;
        let branch = format!("{egress}.g{gen}");
        let e = spec
            .egress(egress)
            .ok_or_else(|| RuntimeError::UnknownEgress(format!("{}@{egress}", spec.name)))?;
        self.inner.store.ensure_branch(&spec.name, &branch)?;
        let mut p = Pipelet::view(
            self.inner.store.clone(),
            &spec.name,
            e,
            &branch,
            self.inner.clock.clone(),
            self.inner.opts.pipelet,
        )?;
        while !p.step()?.is_idle() {}
        persist::save_view(&self.inner.store, &spec.name, egress, &branch, self.inner.clock.now())?;
        self.inner
            .views
            .write()
            .unwrap()
            .insert((spec.name.clone(), egress.to_string()), branch);
        self.install(ctrl, (spec.name.clone(), EdgeRole::View, egress.to_string()), p);
        Ok(())
    }

    /// Installs (or with `None` removes) the runtime ACL.
    pub fn set_acl(&self, acl: Option<AclTable>) -> Result<(), RuntimeError> {
        let yaml = serde_yaml::to_string(&serde_yaml::Mapping::from_iter([(
            serde_yaml::Value::from("acl"),
            serde_yaml::to_value(&acl).map_err(|e| RuntimeError::BadRequest(e.to_string()))?,
        )]))
        .map_err(|e| RuntimeError::BadRequest(e.to_string()))?;
        self.set_acl_inner(acl, Some(yaml))
    }

    fn set_acl_inner(&self, acl: Option<AclTable>, yaml: Option<String>) -> Result<(), RuntimeError> {
        let _turn = self.inner.fifo.enter();
        let mut ctrl = self.inner.control.lock().unwrap();
        let delta = ctrl.composer.set_acl(acl);
        persist::save_acl(&self.inner.store, yaml.as_deref(), self.inner.clock.now())?;
        self.restart_changed(&mut ctrl, &delta.changed, "")
    }

    /// `child` joins `parent`. Returns the ingresses whose sources changed.
    pub fn join(&self, child: &str, parent: &str) -> Result<Vec<IngressKey>, RuntimeError> {
        self.associate(child, parent, true)
    }

    pub fn leave(&self, child: &str, parent: &str) -> Result<Vec<IngressKey>, RuntimeError> {
        self.associate(child, parent, false)
    }

    fn associate(&self, child: &str, parent: &str, join: bool) -> Result<Vec<IngressKey>, RuntimeError> {
        let _turn = self.inner.fifo.enter();
        let mut ctrl = self.inner.control.lock().unwrap();
        let now = self.inner.clock.now();
        let delta = if join {
            ctrl.composer.on_join(child, parent, now)?
        } else {
            ctrl.composer.on_leave(child, parent, now)?
        };
        let assoc = ctrl
            .composer
            .associations()
            .iter()
            .rev()
            .find(|a| a.child == child && a.parent == parent)
            .cloned()
            .expect("association just recorded");
        persist::save_association(&self.inner.store, &assoc, now)?;
        self.restart_changed(&mut ctrl, &delta.changed, "")?;
        tracing::info!(child, parent, join, changed = delta.changed.len(), "composition");
        Ok(delta.changed)
    }

    pub fn source_map(&self) -> SourceMap {
        self.inner.control.lock().unwrap().composer.source_map().clone()
    }

    /// From-scratch resolution, for comparing against [`Runtime::source_map`].
    pub fn resolve_all(&self) -> SourceMap {
        self.inner.control.lock().unwrap().composer.resolve_all()
    }

    pub fn restarts(&self, ctx: &str, ingress: &str) -> u64 {
        self.inner.control.lock().unwrap().composer.restarts(ctx, ingress)
    }

    pub fn context(&self, name: &str) -> Option<Arc<ContextSpec>> {
        self.inner.control.lock().unwrap().composer.context(name).cloned()
    }

    pub fn access_log(&self) -> Vec<AccessEntry> {
        self.inner.access.lock().unwrap().clone()
    }

    fn log_access(&self, role: &str, ctx: &str, egress: &str, allowed: bool) {
        self.inner.access.lock().unwrap().push(AccessEntry {
            role: role.to_string(),
            context: ctx.to_string(),
            egress: egress.to_string(),
            allowed,
        });
    }

    /// `(context, policy, view branch)` for every egress the target names,
    /// plus the ACL, under one lock.
    #[allow(clippy::type_complexity)]
    fn targets(&self, intent: &Intent) -> Result<(Vec<(String, Option<EgressPolicy>, String)>, Option<AclTable>), RuntimeError> {
        let ctrl = self.inner.control.lock().unwrap();
        let acl = ctrl.composer.acl().cloned();
        let mut out = Vec::new();
        match &intent.selector {
            Selector::Direct(name) => {
                let spec = ctrl
                    .composer
                    .context(name)
                    .ok_or_else(|| RuntimeError::UnknownContext(name.clone()))?;
                let e = spec
                    .egress(&intent.egress)
                    .ok_or_else(|| RuntimeError::UnknownEgress(format!("{name}@{}", intent.egress)))?;
                let branch = self.view_branch(name, &e.id).unwrap_or_else(|| e.id.clone());
                out.push((name.clone(), e.policy.clone(), branch));
            }
            sel => {
                for spec in ctrl.composer.contexts() {
                    if !match_kind(sel, &spec.kind) {
                        continue;
                    }
                    if let Some(e) = spec.egress(&intent.egress) {
                        let branch = self.view_branch(&spec.name, &e.id).unwrap_or_else(|| e.id.clone());
                        out.push((spec.name.clone(), e.policy.clone(), branch));
                    }
                }
            }
        }
        Ok((out, acl))
    }

    /// Evaluates `q` over the view of `target`. A kind pattern or `any`
    /// fans out: records of every permitted matching view are tagged with
    /// `_ctx`, concatenated in context-name order, and evaluated once.
    pub fn query(&self, target: &str, q: &str, role: &str) -> Result<Answer, RuntimeError> {
        let pipeline = parse_pipeline(q)?;
        let intent: Intent = target.parse().map_err(|_| RuntimeError::Target(target.to_string()))?;
        let direct = intent.selector.is_direct();
        let (targets, acl) = self.targets(&intent)?;
        let mut answer = Answer::default();
        let mut union = Vec::new();
        for (ctx, policy, branch) in targets {
            let allowed = authorize(policy.as_ref(), acl.as_ref(), role, &ctx, &intent.egress);
            self.log_access(role, &ctx, &intent.egress, allowed);
            if !allowed {
                if direct {
                    return Err(RuntimeError::Denied {
                        role: role.to_string(),
                        target: format!("{ctx}@{}", intent.egress),
                    });
                }
                continue;
            }
            if direct {
                let res = self.inner.store.query(&ctx, &branch, &pipeline)?;
                answer.scanned = res.scanned;
                answer.rejected = res.report.rejected_total();
                answer.records = res.records;
                return Ok(answer);
            }
            let records = self.inner.store.records(&ctx, &branch)?;
            answer.scanned += records.len();
            union.extend(records.into_iter().map(|mut r| {
                r.set(CTX_FIELD, Value::str(ctx.clone()));
                r
            }));
        }
        let out = pipeline.eval(union);
        answer.rejected = out.report.rejected_total();
        answer.records = out.records;
        Ok(answer)
    }

    /// Subscribes to the view of a single `name@egress`, from its first commit.
    pub fn watch(&self, target: &str, role: &str) -> Result<Watcher, RuntimeError> {
        let intent: Intent = target.parse().map_err(|_| RuntimeError::Target(target.to_string()))?;
        if !intent.selector.is_direct() {
            return Err(RuntimeError::BadRequest("watch needs a single name@egress target".into()));
        }
        let (targets, acl) = self.targets(&intent)?;
        let (ctx, policy, branch) = targets.into_iter().next().expect("direct target resolves to one egress");
        let allowed = authorize(policy.as_ref(), acl.as_ref(), role, &ctx, &intent.egress);
        self.log_access(role, &ctx, &intent.egress, allowed);
        if !allowed {
            return Err(RuntimeError::Denied {
                role: role.to_string(),
                target: target.to_string(),
            });
        }
        Ok(self.inner.store.watch(&ctx, &branch, 0)?)
    }

    /// Appends records to `ctx`'s main branch, stamping `ts` with load time.
    pub fn load(&self, ctx: &str, records: Vec<Record>) -> Result<CommitId, RuntimeError> {
        if self.context(ctx).is_none() {
            return Err(RuntimeError::UnknownContext(ctx.to_string()));
        }
        let now = self.inner.clock.now();
        Ok(self
            .inner
            .store
            .load(ctx, MAIN, records, Default::default(), Stamp::Load(now))?)
    }

    pub fn run_connector(&self, c: &Connector, pacing: Pacing) -> Result<ConnectorReport, RuntimeError> {
        if self.context(&c.target).is_none() {
            return Err(RuntimeError::UnknownContext(c.target.clone()));
        }
        let start = self.inner.clock.now();
        let schedule = c.schedule(start);
        let mut report = ConnectorReport::default();
        if schedule.is_empty() {
            return Ok(report);
        }
        if pacing == Pacing::Bulk {
            report.records = schedule.len();
            self.load(&c.target, schedule.into_iter().map(|(_, r)| r).collect())?;
            report.commits = 1;
            return Ok(report);
        }
        let began = std::time::Instant::now();
        let mut i = 0;
        while i < schedule.len() {
            let t = schedule[i].0;
            let mut batch = Vec::new();
            while i < schedule.len() && schedule[i].0 == t {
                batch.push(schedule[i].1.clone());
                i += 1;
            }
            if pacing == Pacing::RealTime {
                let due = Duration::from_secs_f64(t.max(0.0));
                if let Some(wait) = due.checked_sub(began.elapsed()) {
                    std::thread::sleep(wait);
                }
            }
            report.records += batch.len();
            self.load(&c.target, batch)?;
            report.commits += 1;
        }
        Ok(report)
    }

    /// One record per context: name, kind, role, egress ids, the parents it
    /// is joined to, and resolved sources as `ingress<-ctx@egress`.
    pub fn contexts(&self) -> Vec<Record> {
        let ctrl = self.inner.control.lock().unwrap();
        let c = &ctrl.composer;
        c.contexts()
            .map(|spec| {
                let strs = |v: Vec<String>| Value::Array(v.into_iter().map(Value::Str).collect());
                let parents = c
                    .associations()
                    .iter()
                    .filter(|a| a.is_open() && a.child == spec.name)
                    .map(|a| a.parent.clone())
                    .collect();
                let sources = spec
                    .ingress
                    .iter()
                    .flat_map(|ig| {
                        c.sources(&spec.name, &ig.id)
                            .iter()
                            .map(move |s| format!("{}<-{}", ig.id, s.label()))
                    })
                    .collect();
                Record::of([
                    ("name", Value::str(&spec.name)),
                    ("kind", Value::str(spec.kind.to_string())),
                    ("role", Value::str(&spec.role)),
                    ("egress", strs(spec.egress.iter().map(|e| e.id.clone()).collect())),
                    ("parents", strs(parents)),
                    ("sources", strs(sources)),
                ])
            })
            .collect()
    }

    /// Steps every pipelet, upstream first, until a full pass moves
    /// nothing. Returns the number of passes that moved data.
    pub fn quiesce(&self) -> Result<usize, RuntimeError> {
        let order = self.pipelets_in_order();
        let mut passes = 0;
        loop {
            let mut moved = false;
            for p in &order {
                moved |= !p.lock().unwrap().step()?.is_idle();
            }
            if !moved {
                return Ok(passes);
            }
            passes += 1;
        }
    }

    /// Ingress then view pipelets of each context, contexts in dataflow
    /// order (sources before the contexts that ingest them).
    fn pipelets_in_order(&self) -> Vec<Arc<Mutex<Pipelet>>> {
        let ctrl = self.inner.control.lock().unwrap();
        let names: Vec<String> = ctrl.composer.contexts().map(|c| c.name.clone()).collect();
        let mut upstream: BTreeMap<&str, BTreeSet<&str>> = names.iter().map(|n| (n.as_str(), BTreeSet::new())).collect();
        for ((ctx, _), sources) in ctrl.composer.source_map() {
            for s in sources {
                if let Some(set) = upstream.get_mut(ctx.as_str()) {
                    set.insert(s.context.as_str());
                }
            }
        }
        let mut order: Vec<&str> = Vec::new();
        let mut done: BTreeSet<&str> = BTreeSet::new();
        while order.len() < names.len() {
            let ready: Vec<&str> = upstream
                .iter()
                .filter(|(n, ups)| !done.contains(*n) && ups.iter().all(|u| done.contains(u) || !upstream.contains_key(u)))
                .map(|(n, _)| *n)
                .collect();
            // A cycle: take the remaining contexts in name order.
            let next = if ready.is_empty() {
                upstream.keys().copied().filter(|n| !done.contains(n)).collect()
            } else {
                ready
            };
            for n in next {
                done.insert(n);
                order.push(n);
            }
        }
        let mut out = Vec::new();
        for n in order {
            for role in [EdgeRole::Ingress, EdgeRole::View] {
                for ((ctx, r, _), slot) in &ctrl.slots {
                    if ctx == n && *r == role {
                        out.push(slot.pipelet.clone());
                    }
                }
            }
        }
        out
    }
}
