//! Execution policy for data-parallel kernels.
//!
//! Every parallel code path produces exactly the same output as its
//! sequential counterpart: work is split by output index and floating-point
//! reductions use fixed-size chunks summed in order.

use crate::bitset::Bitset;

/// Chunk length used for deterministic floating-point reductions.
pub const REDUCE_CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
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

impl Exec {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..len).map(f).collect()`, preserving order.
    pub fn map_indexed<T, F>(self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
        (0..len).map(f).collect()
    }

    /// Map over a slice, preserving order.
    pub fn map_slice<S, T, F>(self, items: &[S], f: F) -> Vec<T>
    where
        S: Sync,
        T: Send,
        F: Fn(&S) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Fill `out[i] = f(i)`.
    pub fn fill<T, F>(self, out: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
            return;
        }
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(i);
        }
    }

    /// Index of the first item satisfying `pred`, identical to the sequential scan.
    pub fn position_first<S, F>(self, items: &[S], pred: F) -> Option<usize>
    where
        S: Sync,
        F: Fn(&S) -> bool + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().position_first(pred);
        }
        items.iter().position(pred)
    }

    /// Deterministic sum of `f(i)` over `0..len`.
    pub fn sum<F>(self, len: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = len.div_ceil(REDUCE_CHUNK);
        let partial = self.map_indexed(chunks, |c| {
            let lo = c * REDUCE_CHUNK;
            let hi = (lo + REDUCE_CHUNK).min(len);
            (lo..hi).map(&f).sum::<f64>()
        });
        partial.into_iter().sum()
    }

    /// Union of the bitsets produced by `body` over chunks of `items`.
    ///
    /// `body` receives a chunk of items and a private bitset of `nbits` bits.
    pub fn union_over<S, F>(self, items: &[S], nbits: usize, chunk: usize, body: F) -> Bitset
    where
        S: Sync,
        F: Fn(&[S], &mut Bitset) + Sync + Send,
    {
        let chunk = chunk.max(1);
        #[cfg(feature = "parallel")]
        if self.is_parallel() && items.len() > chunk {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk)
                .fold(
                    || Bitset::new(nbits),
                    |mut acc, c| {
                        body(c, &mut acc);
                        acc
                    },
                )
                .reduce(
                    || Bitset::new(nbits),
                    |mut a, b| {
                        a.union_with(&b);
                        a
                    },
                );
        }
        let mut acc = Bitset::new(nbits);
        for c in items.chunks(chunk) {
            body(c, &mut acc);
        }
        acc
    }
}

/// Size the global rayon pool. Has no effect without the `parallel` feature
/// or after the pool has already been initialised.
pub fn configure_threads(threads: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt() / 3.0;
        let a = Exec::Sequential.sum(100_003, f);
        let b = Exec::Parallel.sum(100_003, f);
        assert_eq!(a.to_bits(), b.to_bits());
        let v: Vec<u32> = (0..5000).collect();
        let s = Exec::Sequential.union_over(&v, 10_000, 64, |c, bs| {
            for &x in c {
                bs.insert((x as usize * 7) % 10_000);
            }
        });
        let p = Exec::Parallel.union_over(&v, 10_000, 64, |c, bs| {
            for &x in c {
                bs.insert((x as usize * 7) % 10_000);
            }
        });
        assert_eq!(s, p);
        assert_eq!(Exec::Parallel.position_first(&v, |&x| x * x > 1000), Some(32));
    }
}
