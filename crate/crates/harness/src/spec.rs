//! Workload descriptions and their validation.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use bundled_refs::{ClockPolicy, Config, ReclaimConfig, SetKind};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid {field}: {reason}")]
pub struct SpecError {
    pub field: &'static str,
    pub reason: String,
}

fn bad(field: &'static str, reason: impl Into<String>) -> SpecError {
    SpecError {
        field,
        reason: reason.into(),
    }
}

/// How range queries are answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Snapshot range queries through bundles.
    Bundle,
    /// Range queries walk the newest links with no snapshot. Not
    /// linearizable; the throughput ceiling.
    Unsafe,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Bundle => "bundle",
            Variant::Unsafe => "unsafe",
        })
    }
}

impl FromStr for Variant {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bundle" | "bundled" => Ok(Variant::Bundle),
            "unsafe" => Ok(Variant::Unsafe),
            _ => Err(bad("variant", format!("{s:?} is not bundle or unsafe"))),
        }
    }
}

/// Percentages of updates, contains and range queries, written `U:C:RQ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Mix {
    pub update: u32,
    pub contains: u32,
    pub range: u32,
}

impl Mix {
    pub const fn new(update: u32, contains: u32, range: u32) -> Self {
        Mix {
            update,
            contains,
            range,
        }
    }
}

impl fmt::Display for Mix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.update, self.contains, self.range)
    }
}

impl FromStr for Mix {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<_> = s.split([':', '-']).collect();
        let [u, c, r] = parts[..] else {
            return Err(bad("mix", format!("{s:?} is not U:C:RQ")));
        };
        let num = |p: &str| {
            p.trim()
                .parse::<u32>()
                .map_err(|_| bad("mix", format!("{p:?} is not a percentage")))
        };
        Ok(Mix::new(num(u)?, num(c)?, num(r)?))
    }
}

/// The relaxation threshold: advance the clock every `T` updates, or never.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Relax(pub Option<u64>);

impl Relax {
    pub fn policy(self) -> ClockPolicy {
        ClockPolicy::relaxed(self.0)
    }
}

impl fmt::Display for Relax {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(t) => write!(f, "{t}"),
            None => f.write_str("inf"),
        }
    }
}

impl FromStr for Relax {
    type Err = SpecError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "inf" | "infinity" | "never" => Ok(Relax(None)),
            _ => match s.parse::<u64>() {
                Ok(0) | Err(_) => Err(bad("relax", format!("{s:?} is not an integer >= 1 or inf"))),
                Ok(t) => Ok(Relax(Some(t))),
            },
        }
    }
}

/// When a run stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stop {
    After(Duration),
    /// Each worker performs exactly this many operations.
    Ops(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub ds: SetKind,
    pub variant: Variant,
    pub keys: u64,
    pub mix: Mix,
    pub rq_size: u64,
    pub threads: usize,
    pub stop: Stop,
    pub seed: u64,
    pub relax: Relax,
    pub reclaim: bool,
    pub cleanup_delay: Duration,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            ds: SetKind::SkipList,
            variant: Variant::Bundle,
            keys: 100_000,
            mix: Mix::new(50, 40, 10),
            rq_size: 50,
            threads: 1,
            stop: Stop::After(Duration::from_secs(3)),
            seed: 1,
            relax: Relax(Some(1)),
            reclaim: false,
            cleanup_delay: Duration::ZERO,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), SpecError> {
        let m = self.mix;
        if m.update + m.contains + m.range != 100 {
            return Err(bad("mix", format!("{m} does not sum to 100")));
        }
        if self.keys < 2 {
            return Err(bad("keys", "need at least 2 keys"));
        }
        if self.keys > bundled_refs::MAX_KEY {
            return Err(bad("keys", "too large"));
        }
        if self.threads == 0 {
            return Err(bad("threads", "need at least one thread"));
        }
        // Leave thread ids for the pruner and the main thread.
        if self.threads >= bundled_refs::MAX_THREADS - 2 {
            return Err(bad(
                "threads",
                format!("at most {}", bundled_refs::MAX_THREADS - 3),
            ));
        }
        if self.relax.0 == Some(0) {
            return Err(bad("relax", "must be at least 1"));
        }
        match self.stop {
            Stop::After(d) if d.is_zero() => return Err(bad("seconds", "must be positive")),
            Stop::Ops(0) => return Err(bad("ops", "must be positive")),
            _ => {}
        }
        Ok(())
    }

    pub fn config(&self) -> Config {
        Config {
            reclaim: ReclaimConfig {
                enabled: self.reclaim,
                cleanup_delay: self.cleanup_delay,
            },
            relax: self.relax.policy(),
        }
    }
}
