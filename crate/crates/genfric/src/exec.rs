//! Execution strategy for the data-parallel inner loops.
//!
//! Quadrature node batches, sweep rungs and diagnostic batches are
//! embarrassingly parallel. Both strategies use the same fixed chunking and
//! combine partial results in index order, so for a given input the two
//! modes produce bit-identical output.

/// How to run a data-parallel loop.
///
/// Without the `parallel` feature, `Parallel` silently degrades to the
/// sequential path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

/// Map `0..n` through `f` and collect results in index order.
pub(crate) fn indexed_map<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Exec::Sequential => (0..n).map(f).collect(),
        Exec::Parallel => {
            #[cfg(feature = "parallel")]
            {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_matches_sequential_bitwise() {
        let f = |i: usize| (i as f64).sqrt().sin() / (1.0 + i as f64);
        let seq = indexed_map(Exec::Sequential, 1000, f);
        let par = indexed_map(Exec::Parallel, 1000, f);
        assert_eq!(seq, par);
    }
}
