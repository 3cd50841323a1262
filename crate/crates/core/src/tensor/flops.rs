//! Thread-local multiply-add accounting.
//!
//! Counts the multiply-add operations of matrix products: a (a x b)·(b x c)
//! product adds exactly a·b·c. Tagged scopes attribute counts to a named
//! phase (e.g. attention-score computation) on top of the running total, so
//! incremental and batch code paths can be compared on identical terms.

use std::cell::RefCell;
use std::collections::HashMap;

#[derive(Default)]
struct FlopState {
    total: u64,
    tags: HashMap<&'static str, u64>,
    active: Vec<&'static str>,
}

thread_local! {
    static STATE: RefCell<FlopState> = RefCell::new(FlopState::default());
}

/// Zero the total and all tagged counts on this thread.
pub fn reset() {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        s.total = 0;
        s.tags.clear();
    });
}

/// Multiply-adds recorded on this thread since the last reset.
pub fn total() -> u64 {
    STATE.with(|s| s.borrow().total)
}

/// Multiply-adds recorded under `tag` since the last reset.
pub fn tagged(tag: &'static str) -> u64 {
    STATE.with(|s| s.borrow().tags.get(tag).copied().unwrap_or(0))
}

/// RAII guard attributing enclosed multiply-adds to a tag.
pub struct Scope {
    _private: (),
}

/// Attribute multiply-adds to `tag` until the returned guard drops.
/// Scopes nest; every active tag receives the counts.
pub fn scope(tag: &'static str) -> Scope {
    STATE.with(|s| s.borrow_mut().active.push(tag));
    Scope { _private: () }
}

impl Drop for Scope {
    fn drop(&mut self) {
        STATE.with(|s| {
            s.borrow_mut().active.pop();
        });
    }
}

pub(crate) fn record(macs: u64) {
    STATE.with(|s| {
        let mut s = s.borrow_mut();
        s.total += macs;
        // Split borrow: collect active tags first.
        let active: Vec<&'static str> = s.active.clone();
        for tag in active {
            *s.tags.entry(tag).or_insert(0) += macs;
        }
    });
}
