//! Append-only, branch-structured commit store.
//!
//! Layout on disk:
//!
//! ```text
//! <root>/<pool>/<branch>/00000000000000000000.rec   record-lines
//! <root>/<pool>/<branch>/00000000000000000000.msg   key=value lines
//! <root>/<pool>/<branch>/journal                    one commit id per line
//! ```
//!
//! A commit is written data first, message second, and becomes visible only
//! once its id line is appended to the journal. On open, the journal is read
//! up to the last complete line; anything after that is discarded.

mod fault;

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use crate::flow::{EvalReport, Pipeline};
use crate::record::{parse_lines, to_lines, Record, RecordError, Timestamp, Value, EVENT_TS, TS};

pub use fault::{FaultInjector, LoadStep};

pub type CommitId = u64;
pub type Message = BTreeMap<String, String>;

pub const MAIN: &str = "main";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("unknown pool {0:?}")]
    UnknownPool(String),
    #[error("unknown branch {pool}/{branch}")]
    UnknownBranch { pool: String, branch: String },
    #[error("pool {0:?} already exists")]
    PoolExists(String),
    #[error("branch {pool}/{branch} already exists")]
    BranchExists { pool: String, branch: String },
    #[error("invalid name {0:?}")]
    InvalidName(String),
    #[error("empty-commit: a commit needs at least one record")]
    EmptyCommit,
    #[error("ts regression in {branch}: {ts} after {last}")]
    TsRegression {
        branch: String,
        ts: Timestamp,
        last: Timestamp,
    },
    #[error("corrupt {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("record error in {path}: {source}")]
    Record { path: PathBuf, source: RecordError },
    #[error("store crashed (injected fault)")]
    Crashed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How `ts` is assigned when a batch is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stamp {
    /// Keep records as they are. Present `ts` values must not go backwards.
    Verbatim,
    /// `ts := now` (bumped by 1ns past the branch's last ts when needed);
    /// a missing or null `event_ts` becomes the new `ts`.
    Load(Timestamp),
    /// Keep a record's `ts` if it is past the branch's last ts, otherwise
    /// bump it; records without `ts` get `now` (bumped likewise).
    Monotonic(Timestamp),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Commit {
    pub id: CommitId,
    pub records: Arc<Vec<Record>>,
    pub message: Arc<Message>,
}

/// Output of [`Store::query`].
#[derive(Debug, Clone, Default)]
pub struct QueryResult {
    pub records: Vec<Record>,
    pub report: EvalReport,
    /// Records read from the branch before evaluation.
    pub scanned: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct StoreOptions {
    /// fsync data, message and journal on every commit.
    pub fsync: bool,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions { fsync: true }
    }
}

#[derive(Debug, Default)]
struct BranchState {
    commits: Vec<Commit>,
    last_ts: Option<Timestamp>,
}

#[derive(Debug)]
struct Branch {
    name: String,
    dir: PathBuf,
    state: RwLock<BranchState>,
    writer: Mutex<()>,
}

#[derive(Debug)]
struct Pool {
    dir: PathBuf,
    branches: RwLock<BTreeMap<String, Arc<Branch>>>,
}

#[derive(Debug)]
struct Inner {
    root: PathBuf,
    opts: StoreOptions,
    pools: Mutex<HashMap<String, Arc<Pool>>>,
    faults: FaultInjector,
    generation: Mutex<u64>,
    changed: Condvar,
}

/// Handle to a store rooted at one directory. Cheap to clone.
#[derive(Debug, Clone)]
pub struct Store {
    inner: Arc<Inner>,
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s.starts_with('.')
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

fn commit_path(dir: &Path, id: CommitId, ext: &str) -> PathBuf {
    dir.join(format!("{id:020}.{ext}"))
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut it = s.chars();
    while let Some(c) = it.next() {
        if c == '\\' {
            match it.next() {
                Some('n') => out.push('\n'),
                Some('r') => out.push('\r'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

fn encode_message(m: &Message) -> String {
    m.iter()
        .map(|(k, v)| format!("{}={}\n", escape(k).replace('=', "\\="), escape(v)))
        .collect()
}

/// Byte offset of the first `=` not preceded by an escaping backslash.
fn split_point(line: &str) -> Option<usize> {
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            _ if escaped => escaped = false,
            '\\' => escaped = true,
            '=' => return Some(i),
            _ => {}
        }
    }
    None
}

fn decode_message(path: &Path, text: &str) -> Result<Message, StoreError> {
    let mut m = Message::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let at = split_point(line).ok_or_else(|| StoreError::Corrupt {
            path: path.to_path_buf(),
            msg: format!("bad message line {line:?}"),
        })?;
        m.insert(unescape(&line[..at]), unescape(&line[at + 1..]));
    }
    Ok(m)
}

fn write_file(path: &Path, bytes: &[u8], fsync: bool) -> io::Result<()> {
    let mut f = File::create(path)?;
    f.write_all(bytes)?;
    if fsync {
        f.sync_all()?;
    }
    Ok(())
}

impl Branch {
    /// Reads the journal prefix and the commits it names; truncates a torn
    /// journal tail.
    fn open(name: &str, dir: PathBuf) -> Result<Branch, StoreError> {
        let jpath = dir.join("journal");
        let text = match fs::read(&jpath) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let mut state = BranchState::default();
        let mut good = 0usize;
        let mut start = 0usize;
        while let Some(nl) = text[start..].iter().position(|&b| b == b'\n') {
            let line = &text[start..start + nl];
            let expected = state.commits.len() as u64;
            let ok = std::str::from_utf8(line)
                .ok()
                .and_then(|s| s.parse::<u64>().ok())
                .is_some_and(|id| id == expected);
            if !ok {
                break;
            }
            let rpath = commit_path(&dir, expected, "rec");
            let rtext = fs::read_to_string(&rpath)?;
            let records = parse_lines(&rtext).map_err(|source| StoreError::Record {
                path: rpath.clone(),
                source,
            })?;
            let mpath = commit_path(&dir, expected, "msg");
            let message = decode_message(&mpath, &fs::read_to_string(&mpath)?)?;
            if let Some(ts) = records.iter().filter_map(Record::ts).max() {
                state.last_ts = Some(state.last_ts.map_or(ts, |l| l.max(ts)));
            }
            state.commits.push(Commit {
                id: expected,
                records: Arc::new(records),
                message: Arc::new(message),
            });
            start += nl + 1;
            good = start;
        }
        if good < text.len() {
            tracing::warn!(branch = name, dropped = text.len() - good, "truncating torn journal tail");
            let f = OpenOptions::new().write(true).open(&jpath)?;
            f.set_len(good as u64)?;
            f.sync_all()?;
        }
        Ok(Branch {
            name: name.to_string(),
            dir,
            state: RwLock::new(state),
            writer: Mutex::new(()),
        })
    }

    fn stamp(&self, records: &mut [Record], stamp: Stamp, mut last: Option<Timestamp>) -> Result<Option<Timestamp>, StoreError> {
        let next = |last: Option<Timestamp>, want: Timestamp| match last {
            Some(l) if want <= l => l.plus_nanos(1),
            _ => want,
        };
        for r in records.iter_mut() {
            match stamp {
                Stamp::Verbatim => {
                    if let Some(ts) = r.ts() {
                        if let Some(l) = last.filter(|l| ts < *l) {
                            return Err(StoreError::TsRegression {
                                branch: self.name.clone(),
                                ts,
                                last: l,
                            });
                        }
                        last = Some(ts);
                    }
                }
                Stamp::Load(now) => {
                    let ts = next(last, now);
                    r.set(TS, Value::Time(ts));
                    if r.event_ts().is_none() {
                        r.set(EVENT_TS, Value::Time(ts));
                    }
                    last = Some(ts);
                }
                Stamp::Monotonic(now) => {
                    let ts = next(last, r.ts().unwrap_or(now));
                    r.set(TS, Value::Time(ts));
                    last = Some(ts);
                }
            }
        }
        Ok(last)
    }
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Store, StoreError> {
        Self::open_with(root, StoreOptions::default())
    }

    pub fn open_with(root: impl Into<PathBuf>, opts: StoreOptions) -> Result<Store, StoreError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Store {
            inner: Arc::new(Inner {
                root,
                opts,
                pools: Mutex::new(HashMap::new()),
                faults: FaultInjector::default(),
                generation: Mutex::new(0),
                changed: Condvar::new(),
            }),
        })
    }

    pub fn root(&self) -> &Path {
        &self.inner.root
    }

    /// Fault injection hooks for crash tests.
    pub fn faults(&self) -> &FaultInjector {
        &self.inner.faults
    }

    fn live(&self) -> Result<(), StoreError> {
        if self.inner.faults.crashed() {
            Err(StoreError::Crashed)
        } else {
            Ok(())
        }
    }

    fn pool(&self, name: &str) -> Result<Arc<Pool>, StoreError> {
        self.live()?;
        let mut pools = self.inner.pools.lock().unwrap();
        if let Some(p) = pools.get(name) {
            return Ok(p.clone());
        }
        let dir = self.inner.root.join(name);
        if !valid_name(name) || !dir.is_dir() {
            return Err(StoreError::UnknownPool(name.to_string()));
        }
        let mut branches = BTreeMap::new();
        for entry in fs::read_dir(&dir)? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                let bname = entry.file_name().to_string_lossy().into_owned();
                if valid_name(&bname) {
                    branches.insert(bname.clone(), Arc::new(Branch::open(&bname, entry.path())?));
                }
            }
        }
        let pool = Arc::new(Pool {
            dir,
            branches: RwLock::new(branches),
        });
        pools.insert(name.to_string(), pool.clone());
        Ok(pool)
    }

    fn branch(&self, pool: &str, branch: &str) -> Result<Arc<Branch>, StoreError> {
        let p = self.pool(pool)?;
        let branches = p.branches.read().unwrap();
        branches.get(branch).cloned().ok_or_else(|| StoreError::UnknownBranch {
            pool: pool.to_string(),
            branch: branch.to_string(),
        })
    }

    pub fn has_pool(&self, name: &str) -> bool {
        self.pool(name).is_ok()
    }

    pub fn pools(&self) -> Result<Vec<String>, StoreError> {
        self.live()?;
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.inner.root)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if entry.file_type()?.is_dir() && valid_name(&name) {
                out.push(name);
            }
        }
        out.sort();
        Ok(out)
    }

    /// Creates a pool with its `main` branch.
    pub fn create_pool(&self, name: &str) -> Result<(), StoreError> {
        self.live()?;
        if !valid_name(name) {
            return Err(StoreError::InvalidName(name.to_string()));
        }
        if self.pool(name).is_ok() {
            return Err(StoreError::PoolExists(name.to_string()));
        }
        fs::create_dir_all(self.inner.root.join(name).join(MAIN))?;
        self.pool(name)?;
        Ok(())
    }

    /// Creates the pool if needed, and `main` if it is missing.
    pub fn ensure_pool(&self, name: &str) -> Result<(), StoreError> {
        match self.create_pool(name) {
            Err(StoreError::PoolExists(_)) => self.ensure_branch(name, MAIN),
            other => other,
        }
    }

    pub fn create_branch(&self, pool: &str, branch: &str) -> Result<(), StoreError> {
        let p = self.pool(pool)?;
        if !valid_name(branch) {
            return Err(StoreError::InvalidName(branch.to_string()));
        }
        let mut branches = p.branches.write().unwrap();
        if branches.contains_key(branch) {
            return Err(StoreError::BranchExists {
                pool: pool.to_string(),
                branch: branch.to_string(),
            });
        }
        let dir = p.dir.join(branch);
        fs::create_dir_all(&dir)?;
        branches.insert(branch.to_string(), Arc::new(Branch::open(branch, dir)?));
        Ok(())
    }

    pub fn ensure_branch(&self, pool: &str, branch: &str) -> Result<(), StoreError> {
        match self.create_branch(pool, branch) {
            Err(StoreError::BranchExists { .. }) => Ok(()),
            other => other,
        }
    }

    pub fn has_branch(&self, pool: &str, branch: &str) -> bool {
        self.branch(pool, branch).is_ok()
    }

    pub fn branches(&self, pool: &str) -> Result<Vec<String>, StoreError> {
        Ok(self.pool(pool)?.branches.read().unwrap().keys().cloned().collect())
    }

    /// Appends one commit. Returns its id once data, message and journal
    /// entry are on disk.
    pub fn load(
        &self,
        pool: &str,
        branch: &str,
        mut records: Vec<Record>,
        message: Message,
        stamp: Stamp,
    ) -> Result<CommitId, StoreError> {
        let b = self.branch(pool, branch)?;
        if records.is_empty() {
            return Err(StoreError::EmptyCommit);
        }
        let _w = b.writer.lock().unwrap();
        self.live()?;
        let (id, last) = {
            let st = b.state.read().unwrap();
            (st.commits.len() as u64, st.last_ts)
        };
        let last = b.stamp(&mut records, stamp, last)?;
        let fsync = self.inner.opts.fsync;
        let faults = &self.inner.faults;
        let step = faults.next_load();

        let data = to_lines(&records);
        let rpath = commit_path(&b.dir, id, "rec");
        if step == Some(LoadStep::TornData) {
            write_file(&rpath, &data.as_bytes()[..data.len() / 2], fsync)?;
            return Err(faults.crash());
        }
        write_file(&rpath, data.as_bytes(), fsync)?;
        if step == Some(LoadStep::AfterData) {
            return Err(faults.crash());
        }
        write_file(&commit_path(&b.dir, id, "msg"), encode_message(&message).as_bytes(), fsync)?;
        if step == Some(LoadStep::AfterMessage) {
            return Err(faults.crash());
        }
        let line = format!("{id}\n");
        let mut j = OpenOptions::new()
            .create(true)
            .append(true)
            .open(b.dir.join("journal"))?;
        if step == Some(LoadStep::MidJournal) {
            j.write_all(&line.as_bytes()[..line.len() - 1])?;
            return Err(faults.crash());
        }
        j.write_all(line.as_bytes())?;
        if fsync {
            j.sync_all()?;
        }
        {
            let mut st = b.state.write().unwrap();
            st.commits.push(Commit {
                id,
                records: Arc::new(records),
                message: Arc::new(message),
            });
            st.last_ts = last;
        }
        if step == Some(LoadStep::AfterJournal) {
            return Err(faults.crash());
        }
        tracing::debug!(pool, branch, id, "commit");
        let mut g = self.inner.generation.lock().unwrap();
        *g += 1;
        self.inner.changed.notify_all();
        Ok(id)
    }

    /// Commits with id ≥ `from`, in id order.
    pub fn read(&self, pool: &str, branch: &str, from: CommitId) -> Result<Vec<Commit>, StoreError> {
        let b = self.branch(pool, branch)?;
        let st = b.state.read().unwrap();
        Ok(st.commits.iter().skip(from as usize).cloned().collect())
    }

    /// Every record of the branch in journal order.
    pub fn records(&self, pool: &str, branch: &str) -> Result<Vec<Record>, StoreError> {
        let b = self.branch(pool, branch)?;
        let st = b.state.read().unwrap();
        Ok(st.commits.iter().flat_map(|c| c.records.iter().cloned()).collect())
    }

    /// Id the next commit will get.
    pub fn head(&self, pool: &str, branch: &str) -> Result<CommitId, StoreError> {
        Ok(self.branch(pool, branch)?.state.read().unwrap().commits.len() as u64)
    }

    pub fn last_ts(&self, pool: &str, branch: &str) -> Result<Option<Timestamp>, StoreError> {
        Ok(self.branch(pool, branch)?.state.read().unwrap().last_ts)
    }

    pub fn query(&self, pool: &str, branch: &str, pipeline: &Pipeline) -> Result<QueryResult, StoreError> {
        let records = self.records(pool, branch)?;
        let scanned = records.len();
        let out = pipeline.eval(records);
        Ok(QueryResult {
            records: out.records,
            report: out.report,
            scanned,
        })
    }

    pub fn read_messages(&self, pool: &str, branch: &str) -> Result<Vec<(CommitId, Arc<Message>)>, StoreError> {
        let b = self.branch(pool, branch)?;
        let st = b.state.read().unwrap();
        Ok(st.commits.iter().map(|c| (c.id, c.message.clone())).collect())
    }

    /// Value of `key` in the newest commit message that has it.
    pub fn latest_cursor(&self, pool: &str, branch: &str, key: &str) -> Result<Option<String>, StoreError> {
        let b = self.branch(pool, branch)?;
        let st = b.state.read().unwrap();
        Ok(st.commits.iter().rev().find_map(|c| c.message.get(key).cloned()))
    }

    /// Counter bumped by every commit in this store.
    pub fn generation(&self) -> u64 {
        *self.inner.generation.lock().unwrap()
    }

    /// Blocks until some commit lands after `seen`, or `timeout` passes.
    /// Returns the current generation.
    pub fn wait_change(&self, seen: u64, timeout: Duration) -> u64 {
        let g = self.inner.generation.lock().unwrap();
        let (g, _) = self
            .inner
            .changed
            .wait_timeout_while(g, timeout, |g| *g == seen)
            .unwrap();
        *g
    }

    /// Wakes every waiter without a commit, e.g. to deliver a stop signal.
    pub fn nudge(&self) {
        let mut g = self.inner.generation.lock().unwrap();
        *g += 1;
        self.inner.changed.notify_all();
    }

    /// Subscribes to a branch from commit `from` on.
    pub fn watch(&self, pool: &str, branch: &str, from: CommitId) -> Result<Watcher, StoreError> {
        let head = self.head(pool, branch)?;
        if from > head {
            return Err(StoreError::Corrupt {
                path: self.inner.root.join(pool).join(branch),
                msg: format!("watch from {from} beyond head {head}"),
            });
        }
        Ok(Watcher {
            store: self.clone(),
            pool: pool.to_string(),
            branch: branch.to_string(),
            next: from,
        })
    }
}

/// Delivers every commit of one branch exactly once, in id order.
#[derive(Debug, Clone)]
pub struct Watcher {
    store: Store,
    pool: String,
    branch: String,
    next: CommitId,
}

impl Watcher {
    pub fn position(&self) -> CommitId {
        self.next
    }

    /// Commits available now, without blocking.
    pub fn poll(&mut self) -> Result<Vec<Commit>, StoreError> {
        let commits = self.store.read(&self.pool, &self.branch, self.next)?;
        self.next += commits.len() as u64;
        Ok(commits)
    }

    /// Waits up to `timeout` for at least one new commit.
    pub fn next_batch(&mut self, timeout: Duration) -> Result<Vec<Commit>, StoreError> {
        let deadline = std::time::Instant::now() + timeout;
        loop {
            let seen = self.store.generation();
            let commits = self.poll()?;
            if !commits.is_empty() {
                return Ok(commits);
            }
            let now = std::time::Instant::now();
            if now >= deadline {
                return Ok(commits);
            }
            self.store.wait_change(seen, deadline - now);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::parse_pipeline;
    use crate::record::parse_text;

    fn recs(lines: &[&str]) -> Vec<Record> {
        lines.iter().map(|l| parse_text(l).unwrap()).collect()
    }

    fn msg(pairs: &[(&str, &str)]) -> Message {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    fn fresh() -> (tempfile::TempDir, Store) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open_with(dir.path(), StoreOptions { fsync: false }).unwrap();
        store.create_pool("p").unwrap();
        (dir, store)
    }

    #[test]
    fn first_commits_and_queries() {
        let (_d, s) = fresh();
        let id = s
            .load("p", MAIN, recs(&["{a:1}", "{a:2}"]), msg(&[("latest_ts", "T05")]), Stamp::Verbatim)
            .unwrap();
        assert_eq!(id, 0);
        assert_eq!(s.load("p", MAIN, recs(&["{a:3}"]), Message::new(), Stamp::Verbatim).unwrap(), 1);
        let all = s.query("p", MAIN, &Pipeline::identity()).unwrap();
        assert_eq!(all.records, recs(&["{a:1}", "{a:2}", "{a:3}"]));
        assert_eq!(all.scanned, 3);
        let count = s.query("p", MAIN, &parse_pipeline("count()").unwrap()).unwrap();
        assert_eq!(count.records, recs(&["{count:3}"]));
    }

    #[test]
    fn empty_commits_are_rejected() {
        let (_d, s) = fresh();
        assert!(matches!(
            s.load("p", MAIN, Vec::new(), Message::new(), Stamp::Verbatim),
            Err(StoreError::EmptyCommit)
        ));
        assert_eq!(s.head("p", MAIN).unwrap(), 0);
    }

    #[test]
    fn unknown_targets() {
        let (_d, s) = fresh();
        assert!(matches!(s.head("nope", MAIN), Err(StoreError::UnknownPool(_))));
        assert!(matches!(s.head("p", "nope"), Err(StoreError::UnknownBranch { .. })));
        assert!(matches!(s.create_pool("p"), Err(StoreError::PoolExists(_))));
        assert!(matches!(s.create_pool("../x"), Err(StoreError::InvalidName(_))));
    }

    #[test]
    fn cursors_scan_backwards() {
        let (_d, s) = fresh();
        assert_eq!(s.latest_cursor("p", MAIN, "latest_ts").unwrap(), None);
        for m in [msg(&[("latest_ts", "A")]), Message::new(), msg(&[("latest_ts", "B")]), msg(&[("x", "y")])] {
            s.load("p", MAIN, recs(&["{a:1}"]), m, Stamp::Verbatim).unwrap();
        }
        assert_eq!(s.latest_cursor("p", MAIN, "latest_ts").unwrap().as_deref(), Some("B"));
        let ids: Vec<_> = s.read_messages("p", MAIN).unwrap().into_iter().map(|m| m.0).collect();
        assert_eq!(ids, [0, 1, 2, 3]);
    }

    #[test]
    fn messages_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let odd = msg(&[("k=1", "line\nbreak\\x"), ("cursor.a@b", "2024-01-01T00:00:00Z")]);
        {
            let s = Store::open(dir.path()).unwrap();
            s.create_pool("p").unwrap();
            s.load("p", MAIN, recs(&["{a:\"x\"}"]), odd.clone(), Stamp::Verbatim).unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(*s.read_messages("p", MAIN).unwrap()[0].1, odd);
        assert_eq!(s.records("p", MAIN).unwrap(), recs(&["{a:\"x\"}"]));
    }

    #[test]
    fn load_stamping() {
        let (_d, s) = fresh();
        let now = Timestamp::from_secs(100);
        s.load("p", MAIN, recs(&["{a:1}", "{a:2,event_ts:1970-01-01T00:00:05Z}"]), Message::new(), Stamp::Load(now))
            .unwrap();
        let r = s.records("p", MAIN).unwrap();
        assert_eq!(r[0].ts(), Some(now));
        assert_eq!(r[0].event_ts(), Some(now));
        assert_eq!(r[1].ts(), Some(now.plus_nanos(1)));
        assert_eq!(r[1].event_ts(), Some(Timestamp::from_secs(5)));
        // an earlier clock reading still moves forward
        s.load("p", MAIN, recs(&["{a:3}"]), Message::new(), Stamp::Load(Timestamp::from_secs(1)))
            .unwrap();
        assert_eq!(s.records("p", MAIN).unwrap()[2].ts(), Some(now.plus_nanos(2)));
    }

    #[test]
    fn monotonic_and_verbatim_stamping() {
        let (_d, s) = fresh();
        s.create_branch("p", "v").unwrap();
        let now = Timestamp::from_secs(50);
        s.load(
            "p",
            "v",
            recs(&["{ts:1970-01-01T00:00:10Z}", "{ts:1970-01-01T00:00:10Z}", "{x:1}"]),
            Message::new(),
            Stamp::Monotonic(now),
        )
        .unwrap();
        let ts: Vec<_> = s.records("p", "v").unwrap().iter().map(|r| r.ts().unwrap()).collect();
        assert_eq!(ts, [Timestamp::from_secs(10), Timestamp::from_secs(10).plus_nanos(1), now]);
        let err = s.load("p", "v", recs(&["{ts:1970-01-01T00:00:01Z}"]), Message::new(), Stamp::Verbatim);
        assert!(matches!(err, Err(StoreError::TsRegression { .. })));
    }

    #[test]
    fn watchers_see_every_commit_once() {
        let (_d, s) = fresh();
        for i in 0..3 {
            s.load("p", MAIN, vec![Record::of([("i", Value::Int(i))])], Message::new(), Stamp::Verbatim)
                .unwrap();
        }
        let mut w1 = s.watch("p", MAIN, 0).unwrap();
        let mut w2 = s.watch("p", MAIN, 0).unwrap();
        assert_eq!(w1.poll().unwrap().len(), 3);
        assert!(w1.poll().unwrap().is_empty());
        let mut tail = s.watch("p", MAIN, 3).unwrap();
        let s2 = s.clone();
        let t = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(20));
            s2.load("p", MAIN, recs(&["{i:3}"]), Message::new(), Stamp::Verbatim).unwrap();
        });
        let got = tail.next_batch(Duration::from_secs(5)).unwrap();
        t.join().unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].id, 3);
        let a: Vec<_> = w1.poll().unwrap().into_iter().chain([]).map(|c| c.id).collect();
        assert_eq!(a, [3]);
        let b: Vec<_> = w2.poll().unwrap().into_iter().map(|c| c.id).collect();
        assert_eq!(b, [0, 1, 2, 3]);
        let replay: Vec<Record> = s
            .read("p", MAIN, 0)
            .unwrap()
            .iter()
            .flat_map(|c| c.records.iter().cloned())
            .collect();
        assert_eq!(replay, s.records("p", MAIN).unwrap());
        assert!(s.watch("p", MAIN, 9).is_err());
    }

    #[test]
    fn branches_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            s.create_pool("BioHall").unwrap();
            s.create_branch("BioHall", "energy").unwrap();
            s.create_branch("BioHall", "occupancy.g1").unwrap();
            s.load("BioHall", "energy", recs(&["{w:1}"]), Message::new(), Stamp::Verbatim)
                .unwrap();
        }
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.branches("BioHall").unwrap(), ["energy", "main", "occupancy.g1"]);
        assert_eq!(s.head("BioHall", "energy").unwrap(), 1);
        assert_eq!(s.pools().unwrap(), ["BioHall"]);
    }
}
