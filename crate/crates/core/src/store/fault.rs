use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use super::StoreError;

/// Where inside a load the simulated process death happens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LoadStep {
    /// Half of the record file written.
    TornData,
    /// Record file written, no message.
    AfterData,
    /// Record and message files written, journal untouched.
    AfterMessage,
    /// Journal line written without its newline.
    MidJournal,
    /// Commit durable, caller never told.
    AfterJournal,
}

impl LoadStep {
    pub const ALL: [LoadStep; 5] = [
        LoadStep::TornData,
        LoadStep::AfterData,
        LoadStep::AfterMessage,
        LoadStep::MidJournal,
        LoadStep::AfterJournal,
    ];
}

/// Kills the store at a chosen point of a chosen load. After the crash every
/// operation on the store handle fails; reopen the directory to recover.
#[derive(Debug, Default)]
pub struct FaultInjector {
    armed: Mutex<Option<(u64, LoadStep)>>,
    crashed: AtomicBool,
}

impl FaultInjector {
    /// The load after the next `loads` successful ones dies at `step`.
    pub fn arm(&self, loads: u64, step: LoadStep) {
        *self.armed.lock().unwrap() = Some((loads, step));
    }

    pub fn disarm(&self) {
        *self.armed.lock().unwrap() = None;
    }

    pub fn is_armed(&self) -> bool {
        self.armed.lock().unwrap().is_some()
    }

    pub fn crashed(&self) -> bool {
        self.crashed.load(Ordering::SeqCst)
    }

    pub(crate) fn next_load(&self) -> Option<LoadStep> {
        let mut armed = self.armed.lock().unwrap();
        match armed.as_mut() {
            Some((0, step)) => {
                let step = *step;
                *armed = None;
                Some(step)
            }
            Some((n, _)) => {
                *n -= 1;
                None
            }
            None => None,
        }
    }

    pub(crate) fn crash(&self) -> StoreError {
        self.crashed.store(true, Ordering::SeqCst);
        StoreError::Crashed
    }
}
