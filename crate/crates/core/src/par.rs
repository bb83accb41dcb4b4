//! Order-preserving parallel map; sequential without `std`.

use alloc::vec::Vec;

#[cfg(feature = "std")]
pub(crate) fn map_init<T, S, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map_init(init, f).collect()
}

#[cfg(not(feature = "std"))]
pub(crate) fn map_init<T, S, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> T,
{
    let mut state = init();
    (0..n).map(|k| f(&mut state, k)).collect()
}
