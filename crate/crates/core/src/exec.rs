//! Execution helpers: every data-parallel loop in the crate goes through this
//! module, so the `parallel` feature swaps rayon in or out in one place.
//!
//! The sequential variants are compiled unconditionally. They are the
//! reference implementations the benchmark suite compares against, and they
//! are bitwise identical to the parallel paths: rows are written to disjoint
//! output slots and every within-row reduction runs in a fixed ascending
//! order, so thread count never changes a result.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `0..n` to a vector, in parallel when the `parallel` feature is on.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Sequential reference for [`map_indexed`].
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Visit the rows of a flat row-major `n x cols` buffer, in parallel when
/// enabled. `f(i, row)` must fill row `i` only.
pub fn for_each_row<F>(buf: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    debug_assert_eq!(buf.len() % cols.max(1), 0);
    #[cfg(feature = "parallel")]
    {
        buf.par_chunks_mut(cols)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
    }
}

/// Sequential reference for [`for_each_row`].
pub fn for_each_row_seq<F>(buf: &mut [f64], cols: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    debug_assert_eq!(buf.len() % cols.max(1), 0);
    buf.chunks_mut(cols).enumerate().for_each(|(i, row)| f(i, row));
}

/// Cap the rayon worker count. `k = 0` keeps the automatic choice. Calling
/// this after the pool has already started returns an error message; without
/// the `parallel` feature it reports that the build is sequential.
pub fn configure_threads(k: usize) -> Result<(), String> {
    #[cfg(feature = "parallel")]
    {
        if k == 0 {
            return Ok(());
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| format!("thread pool already initialized: {e}"))
    }
    #[cfg(not(feature = "parallel"))]
    {
        if k <= 1 {
            Ok(())
        } else {
            Err("built without the `parallel` feature; running sequentially".into())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_rows_are_bitwise_identical() {
        let n = 37;
        let fill = |i: usize, row: &mut [f64]| {
            for (j, slot) in row.iter_mut().enumerate() {
                *slot = ((i * 31 + j) as f64).sin() / (1.0 + i as f64);
            }
        };
        let mut a = vec![0.0; n * n];
        let mut b = vec![0.0; n * n];
        for_each_row(&mut a, n, fill);
        for_each_row_seq(&mut b, n, fill);
        assert_eq!(a, b);

        let va = map_indexed(n, |i| (i as f64).sqrt().exp());
        let vb = map_indexed_seq(n, |i| (i as f64).sqrt().exp());
        assert_eq!(va, vb);
    }
}
