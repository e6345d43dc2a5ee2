//! Deterministic replays of two races around pending bundle entries.
//!
//! Both use the structure's hook callback to park one updater right after
//! its linearizing write, while its bundle entries are still pending, and
//! release it from the hook point the race is supposed to hit.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use bundled_refs::hooks::HookPoint;
use bundled_refs::{Config, InvariantViolation, OrderedSet, SetKind};

use crate::checker::{check, Verdict, DEFAULT_BUDGET};
use crate::history::{merge, Op, Ret, ThreadLog};

const TIMEOUT: Duration = Duration::from_secs(10);
const UPDATER: &str = "scenario-updater";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScenarioError {
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("{0}")]
    NotLinearizable(String),
    #[error("invariant violated: {0}")]
    Invariant(#[from] InvariantViolation),
}

/// A one-shot latch.
#[derive(Default)]
struct Gate {
    open: Mutex<bool>,
    cv: Condvar,
}

impl Gate {
    fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }

    fn wait(&self) -> bool {
        let g = self.open.lock().unwrap();
        let (g, _) = self.cv.wait_timeout_while(g, TIMEOUT, |o| !*o).unwrap();
        *g
    }
}

#[derive(Default)]
struct Gates {
    parked: Gate,
    release: Gate,
    /// The parked updater gave up waiting for release.
    stuck: AtomicBool,
}

impl Gates {
    fn check(&self) -> Result<(), ScenarioError> {
        if self.stuck.load(Ordering::SeqCst) {
            return Err(ScenarioError::Timeout("release of the parked updater"));
        }
        Ok(())
    }
}

fn on_updater() -> bool {
    std::thread::current().name() == Some(UPDATER)
}

/// Parks the updater thread at `park` once, and opens the release gate as
/// soon as any thread reaches `release_at`.
fn install(set: &dyn OrderedSet, park: HookPoint, release_at: HookPoint) -> Arc<Gates> {
    let gates = Arc::new(Gates::default());
    let g = Arc::clone(&gates);
    let parked_once = Mutex::new(false);
    set.hooks().set_callback(move |point| {
        if point == release_at {
            g.release.open();
        }
        if point == park && on_updater() {
            let mut once = parked_once.lock().unwrap();
            if !*once {
                *once = true;
                drop(once);
                g.parked.open();
                if !g.release.wait() {
                    g.stuck.store(true, Ordering::SeqCst);
                }
            }
        }
    });
    gates
}

fn spawn_updater(set: &Arc<dyn OrderedSet>, thread: usize, op: Op) -> JoinHandle<ThreadLog> {
    let set = Arc::clone(set);
    std::thread::Builder::new()
        .name(UPDATER.into())
        .spawn(move || {
            let mut log = ThreadLog::new(thread);
            log.run(&*set, op);
            log
        })
        .unwrap()
}

/// How the pending-stall replay is set up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StallVariant {
    /// Normal protocol: the range query waits on the pending entry.
    Waiting,
    /// Range queries skip pending entries (negative control).
    SkipReaderWait,
    /// The updater is parked before it linearizes.
    NeverLinearized,
}

/// An updater inserts 20 between 10 and 30 and stalls with its bundle
/// entries pending. Another thread then sees 20 via `contains` and runs a
/// range query over all keys. The combined history must be linearizable,
/// which requires the range query to include 20 whenever `contains` saw it.
pub fn pending_stall(kind: SetKind, variant: StallVariant) -> Result<(), ScenarioError> {
    let set = kind.build(Config::default());
    set.hooks().set_forced_top(Some(0));
    let mut pre = ThreadLog::new(2);
    pre.run(&*set, Op::Insert(10, 10));
    pre.run(&*set, Op::Insert(30, 30));
    set.hooks()
        .set_skip_reader_wait(variant == StallVariant::SkipReaderWait);
    let park = match variant {
        StallVariant::NeverLinearized => HookPoint::BeforePrepare,
        _ => HookPoint::AfterLinearize,
    };
    let gates = install(&*set, park, HookPoint::ReaderPendingWait);

    let updater = spawn_updater(&set, 0, Op::Insert(20, 20));
    let mut reader = ThreadLog::new(1);
    let result = (|| {
        if !gates.parked.wait() {
            return Err(ScenarioError::Timeout("updater to park"));
        }
        reader.run(&*set, Op::Contains(20));
        reader.run(&*set, Op::Range(1, 100));
        Ok(())
    })();
    gates.release.open();
    let updater = updater.join().unwrap();
    set.hooks().clear_callback();
    result?;
    gates.check()?;

    match check(&merge([pre, updater, reader]), DEFAULT_BUDGET) {
        Verdict::Linearizable => {}
        v => return Err(ScenarioError::NotLinearizable(v.to_string())),
    }
    set.hooks().set_skip_reader_wait(false);
    set.check_invariants()?;
    Ok(())
}

/// An updater links 50 before 100 and stalls with its entries pending.
/// A second update inserts 70 after 50, needing 50's bundle while the
/// first entry there is still pending. Unless the second update waits, its
/// entry lands on top of a pending one and the chain loses its ordering.
pub fn unlocked_successor(kind: SetKind, wait: bool) -> Result<(), ScenarioError> {
    let set = kind.build(Config::default());
    // Single-level towers, so the second insert latches only node 50.
    set.hooks().set_forced_top(Some(0));
    assert!(set.insert(100, 100));
    set.hooks().set_skip_writer_wait(!wait);
    let gates = install(
        &*set,
        HookPoint::AfterLinearize,
        HookPoint::WriterPendingWait,
    );

    let first = spawn_updater(&set, 0, Op::Insert(50, 50));
    let result = (|| {
        if !gates.parked.wait() {
            return Err(ScenarioError::Timeout("first updater to park"));
        }
        let second = {
            let set = Arc::clone(&set);
            std::thread::Builder::new()
                .name("scenario-second".into())
                .spawn(move || set.insert(70, 70))
                .unwrap()
        };
        let inserted = second.join().unwrap();
        assert!(inserted);
        Ok(())
    })();
    gates.release.open();
    first.join().unwrap();
    set.hooks().clear_callback();
    result?;
    gates.check()?;
    set.check_invariants()?;
    Ok(())
}

/// Sequential version of the unlocked-successor inserts; no race, so the
/// chain is trivially ordered.
pub fn unlocked_successor_sequential(kind: SetKind) -> Result<(), ScenarioError> {
    let set = kind.build(Config::default());
    let mut log = ThreadLog::new(0);
    for k in [100, 50, 70] {
        if log.run(&*set, Op::Insert(k, k)) != Ret::Bool(true) {
            return Err(ScenarioError::NotLinearizable(format!("insert {k} failed")));
        }
    }
    set.check_invariants()?;
    Ok(())
}

/// One scenario run with the outcome it is expected to have.
#[derive(Debug)]
pub struct ScenarioRun {
    pub name: String,
    pub expect_ok: bool,
    pub result: Result<(), ScenarioError>,
}

impl ScenarioRun {
    pub fn passed(&self) -> bool {
        self.result.is_ok() == self.expect_ok
    }
}

/// Every scenario and negative control for `kind`.
pub fn all(kind: SetKind) -> Vec<ScenarioRun> {
    let run = |name: &str, expect_ok, result| ScenarioRun {
        name: format!("{kind}/{name}"),
        expect_ok,
        result,
    };
    vec![
        run(
            "pending-stall",
            true,
            pending_stall(kind, StallVariant::Waiting),
        ),
        run(
            "pending-stall/skip-reader-wait",
            false,
            pending_stall(kind, StallVariant::SkipReaderWait),
        ),
        run(
            "pending-stall/never-linearized",
            true,
            pending_stall(kind, StallVariant::NeverLinearized),
        ),
        run("unlocked-successor", true, unlocked_successor(kind, true)),
        run(
            "unlocked-successor/skip-writer-wait",
            false,
            unlocked_successor(kind, false),
        ),
        run(
            "unlocked-successor/sequential",
            true,
            unlocked_successor_sequential(kind),
        ),
    ]
}
