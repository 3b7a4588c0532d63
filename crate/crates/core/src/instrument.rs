//! Thread-local counters used by tests to check which code paths touch
//! n-sized data.
//!
//! Every function that allocates or sweeps an n-sized object bumps
//! `n_sized_alloc`; the response moments bump `y_moment_pass` once per
//! recomputation. Counters are per thread, so parallel tests do not
//! interfere.

use std::cell::Cell;

thread_local! {
    static N_SIZED: Cell<u64> = const { Cell::new(0) };
    static Y_PASSES: Cell<u64> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counters {
    pub n_sized: u64,
    pub y_passes: u64,
}

pub(crate) fn n_sized_alloc() {
    N_SIZED.with(|c| c.set(c.get() + 1));
}

pub(crate) fn y_moment_pass() {
    Y_PASSES.with(|c| c.set(c.get() + 1));
}

pub fn snapshot() -> Counters {
    Counters {
        n_sized: N_SIZED.with(|c| c.get()),
        y_passes: Y_PASSES.with(|c| c.get()),
    }
}

pub fn reset() {
    N_SIZED.with(|c| c.set(0));
    Y_PASSES.with(|c| c.set(0));
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
