//! The four-step linearization shared by every update.

use std::ptr::NonNull;
use std::sync::atomic::{AtomicBool, AtomicPtr, Ordering};

use arrayvec::ArrayVec;

use crate::bundle::{Bundle, BundleEntry, Timestamp};
use crate::context::Context;
use crate::hooks::HookPoint;

/// The single write that makes an update visible to point operations.
pub(crate) enum LinPoint<'a, N> {
    /// Store a new node reference into a link.
    Link(&'a AtomicPtr<N>, *mut N),
    /// Raise a flag (logical deletion or insertion completion).
    Flag(&'a AtomicBool),
}

impl<N> LinPoint<'_, N> {
    fn apply(self) {
        match self {
            LinPoint::Link(addr, val) => addr.store(val, Ordering::Release),
            LinPoint::Flag(flag) => flag.store(true, Ordering::Release),
        }
    }
}

pub(crate) const MAX_BUNDLES: usize = 4;

/// Bundles to prepare and the link value each will record, in prepare order.
pub(crate) type UpdatePlan<'a, N> = ArrayVec<(&'a Bundle<N>, *mut N), MAX_BUNDLES>;

/// An update whose bundles are installed as pending but which has not yet
/// taken its timestamp.
pub(crate) struct PreparedUpdate<'a, N> {
    bundles: ArrayVec<&'a Bundle<N>, MAX_BUNDLES>,
    ctx: &'a Context,
}

impl<'a, N> PreparedUpdate<'a, N> {
    /// Step 1: prepares every bundle in plan order.
    pub(crate) fn prepare(plan: UpdatePlan<'a, N>, ctx: &'a Context) -> Self {
        debug_assert!(!plan.is_empty(), "an update must record at least one link");
        ctx.hooks.fire(HookPoint::BeforePrepare);
        let mut bundles = ArrayVec::new();
        for (bundle, target) in plan {
            let _entry: NonNull<BundleEntry<N>> = bundle.prepare(target, ctx);
            bundles.push(bundle);
        }
        PreparedUpdate { bundles, ctx }
    }

    /// Steps 2 to 4: takes a timestamp, performs the linearizing write and
    /// finalizes the bundles in prepare order.
    pub(crate) fn commit(self, lin: LinPoint<'_, N>) -> Timestamp {
        let ctx = self.ctx;
        let n = ctx.count_update();
        let ts = if ctx.policy.advances_on(n) {
            ctx.clock.advance()
        } else {
            ctx.clock.read()
        };
        lin.apply();
        ctx.hooks.fire(HookPoint::AfterLinearize);
        for b in &self.bundles {
            b.finalize(ts, ctx);
        }
        ts
    }
}

/// Runs the whole four-step sequence for `plan` and returns the timestamp
/// the update was stamped with.
pub(crate) fn linearize_update<N>(
    plan: UpdatePlan<'_, N>,
    lin: LinPoint<'_, N>,
    ctx: &Context,
) -> Timestamp {
    PreparedUpdate::prepare(plan, ctx).commit(lin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::set::Config;
    use std::ptr;

    struct N;

    #[test]
    fn first_insert_stamps_both_bundles_with_one() {
        let ctx = Context::new(&Config::default());
        let tail = Box::into_raw(Box::new(N));
        let n20 = Box::into_raw(Box::new(N));
        let head_next = AtomicPtr::new(tail);
        let head_bundle = Bundle::with_entry(tail, 0, &ctx);
        let new_bundle = Bundle::new();
        let plan: UpdatePlan<'_, N> = [(&new_bundle, tail), (&head_bundle, n20)]
            .into_iter()
            .collect();
        let ts = linearize_update(plan, LinPoint::Link(&head_next, n20), &ctx);
        assert_eq!(ts, 1);
        assert_eq!(ctx.clock.read(), 1);
        assert_eq!(head_next.load(Ordering::Relaxed), n20);
        assert_eq!(head_bundle.entries(), vec![(1, n20), (0, tail)]);
        assert_eq!(new_bundle.entries(), vec![(1, tail)]);
        unsafe {
            head_bundle.free_entries();
            new_bundle.free_entries();
            drop(Box::from_raw(tail));
            drop(Box::from_raw(n20));
        }
    }

    #[test]
    fn relaxed_updates_share_the_clock_value() {
        let cfg = Config {
            relax: crate::ClockPolicy::Every(5),
            ..Config::default()
        };
        let ctx = Context::new(&cfg);
        let b: Bundle<N> = Bundle::with_entry(ptr::null_mut(), 0, &ctx);
        let flag = AtomicBool::new(false);
        let stamps: Vec<_> = (0..10)
            .map(|_| {
                linearize_update(
                    [(&b, ptr::null_mut())].into_iter().collect(),
                    LinPoint::Flag(&flag),
                    &ctx,
                )
            })
            .collect();
        assert_eq!(ctx.clock.read(), 2);
        assert_eq!(stamps, vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 2]);
        assert!(b.check(ptr::null_mut(), false, 2).is_ok());
        unsafe { b.free_entries() };
    }

    #[test]
    fn distinct_timestamps_across_threads() {
        let ctx = std::sync::Arc::new(Context::new(&Config::default()));
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let ctx = ctx.clone();
                std::thread::spawn(move || {
                    let b: Bundle<N> = Bundle::with_entry(ptr::null_mut(), 0, &ctx);
                    let flag = AtomicBool::new(false);
                    let v: Vec<_> = (0..250)
                        .map(|_| {
                            linearize_update(
                                [(&b, ptr::null_mut())].into_iter().collect(),
                                LinPoint::Flag(&flag),
                                &ctx,
                            )
                        })
                        .collect();
                    unsafe { b.free_entries() };
                    v
                })
            })
            .collect();
        let mut all: Vec<_> = handles
            .into_iter()
            .flat_map(|h| h.join().unwrap())
            .collect();
        all.sort_unstable();
        assert_eq!(all, (1..=1000).collect::<Vec<_>>());
    }
}
