//! Order-preserving data-parallel map. With the `parallel` feature the work
//! runs on the rayon pool; without it (or when `sequential` is requested)
//! items are processed one after another. Results always come back in input
//! order, so any reduction over them is deterministic.

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[default]
    Auto,
    Sequential,
}

impl ExecMode {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == ExecMode::Auto
    }
}

pub fn ordered_map<I, O, F>(mode: ExecMode, items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

/// Runs `f` on every index in `0..n` and collects in order.
pub fn ordered_range<O, F>(mode: ExecMode, n: usize, f: F) -> Vec<O>
where
    O: Send,
    F: Fn(usize) -> O + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    ordered_map(mode, &idx, |_, &i| f(i))
}
