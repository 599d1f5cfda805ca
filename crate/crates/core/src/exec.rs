//! Replication drivers.
//!
//! Every Monte-Carlo loop in the crate goes through [`Exec::moments`]: replication
//! `k` draws from stream `k` only, so results never depend on scheduling. In
//! [`Mode::Deterministic`] per-replication outputs are folded in replication order,
//! which makes sums bit-identical between sequential and parallel runs. In
//! [`Mode::Fast`] partial sums are combined by an unordered tree reduction.
//!
//! Without the `parallel` feature every driver runs sequentially.

use crate::error::Result;
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Deterministic,
    Fast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    pub mode: Mode,
    /// Ignored when the crate is built without the `parallel` feature.
    pub parallel: bool,
}

impl Default for Exec {
    fn default() -> Self {
        Exec { mode: Mode::Deterministic, parallel: true }
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Exec { mode: Mode::Deterministic, parallel: false }
    }

    pub fn fast() -> Self {
        Exec { mode: Mode::Fast, parallel: true }
    }

    #[cfg(feature = "parallel")]
    fn use_threads(&self) -> bool {
        self.parallel
    }

    /// Evaluates `f(k)` for `k in 0..count` and returns the results in replication order.
    pub fn map<T, F>(&self, count: u64, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(u64) -> Result<T> + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.use_threads() {
            use rayon::prelude::*;
            return (0..count).into_par_iter().map(f).collect();
        }
        (0..count).map(f).collect()
    }

    /// Per-coordinate sample moments of the `width`-vectors returned by `f(k)`.
    pub fn moments<F>(&self, count: u64, width: usize, f: F) -> Result<Vec<Moments>>
    where
        F: Fn(u64) -> Result<Vec<f64>> + Sync + Send,
    {
        let fold = |mut acc: Vec<Moments>, xs: Vec<f64>| {
            debug_assert_eq!(xs.len(), width);
            for (m, x) in acc.iter_mut().zip(xs) {
                m.push(x);
            }
            acc
        };
        match self.mode {
            Mode::Deterministic => {
                let rows = self.map(count, f)?;
                Ok(rows.into_iter().fold(vec![Moments::default(); width], fold))
            }
            Mode::Fast => {
                #[cfg(feature = "parallel")]
                if self.use_threads() {
                    use rayon::prelude::*;
                    return (0..count)
                        .into_par_iter()
                        .map(f)
                        .try_fold(
                            || vec![Moments::default(); width],
                            |acc, xs| xs.map(|xs| fold(acc, xs)),
                        )
                        .try_reduce(
                            || vec![Moments::default(); width],
                            |a, b| Ok(a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect()),
                        );
                }
                let mut acc = vec![Moments::default(); width];
                for k in 0..count {
                    acc = fold(acc, f(k)?);
                }
                Ok(acc)
            }
        }
    }
}
