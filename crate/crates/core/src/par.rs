//! Data-parallel map with a sequential fallback.
//!
//! With the `parallel` feature (default) the map fans out over rayon;
//! without it, or when [`set_sequential`] is flipped on (used by the
//! benchmarks and by `SRLC_THREADS=1`), it runs in plain iteration order.
//! Either way the output vector is in input order, and callers reduce it
//! sequentially, so results never depend on scheduling.

use std::sync::atomic::{AtomicBool, Ordering};

static FORCE_SEQUENTIAL: AtomicBool = AtomicBool::new(false);

/// Force the sequential path even when compiled with `parallel`.
pub fn set_sequential(force: bool) {
    FORCE_SEQUENTIAL.store(force, Ordering::SeqCst);
}

pub fn is_sequential() -> bool {
    if cfg!(not(feature = "parallel")) {
        return true;
    }
    FORCE_SEQUENTIAL.load(Ordering::SeqCst)
}

/// Map `f` over owned items, preserving order.
pub fn map<T, U, F>(items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return items.into_par_iter().map(f).collect();
        }
    }
    items.into_iter().map(f).collect()
}

/// Map `f` over `&mut` slots, preserving order. Used for stepping a set of
/// stateful workers (envs with carried hidden state) in place.
pub fn map_mut<T, U, F>(items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(&mut T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if !is_sequential() {
            use rayon::prelude::*;
            return items.par_iter_mut().map(f).collect();
        }
    }
    items.iter_mut().map(f).collect()
}
