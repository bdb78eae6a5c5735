//! Reproducible path sampling and order-preserving parallel evaluation.
//!
//! Path `k` draws its noise (and then its signal parameter) from stream `k`,
//! or from stream `k / 2` when antithetic pairs are on, in which case odd
//! paths use the reflected noise with the same parameter. Filters for path
//! `k` use stream `FILTER_STREAM_OFFSET + k`. The sample never depends on λ,
//! so sweeps over λ use common random numbers.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::ParameterLaw;
use crate::wiener::{sample_wiener_with, RngStream, TimeGrid, WienerPath};

pub const FILTER_STREAM_OFFSET: u64 = 1 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub index: usize,
    pub w: WienerPath,
    pub m: f64,
}

impl SamplePlan {
    pub fn new(n_paths: usize, seed: u64) -> Self {
        Self {
            n_paths,
            seed,
            antithetic: false,
        }
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn sample(&self, grid: TimeGrid, law: &ParameterLaw, index: usize) -> PathSample {
        let stream = if self.antithetic { index / 2 } else { index } as u64;
        let mut rng = RngStream::new(self.seed, stream).rng();
        let w = sample_wiener_with(grid, &mut rng);
        let m = law.sample(&mut rng);
        let w = if self.antithetic && index % 2 == 1 {
            w.reflected()
        } else {
            w
        };
        PathSample { index, w, m }
    }

    pub fn filter_stream(&self, index: usize) -> RngStream {
        RngStream::new(self.seed, FILTER_STREAM_OFFSET + index as u64)
    }

    /// Evaluates `f` on every path index in parallel; results are in index order.
    pub fn map<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..self.n_paths).into_par_iter().map(f).collect()
    }

    /// Like [`map`](Self::map) but stops at the lowest-index error.
    pub fn try_map<T, E, F>(&self, f: F) -> Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> Result<T, E> + Sync + Send,
    {
        self.map(f).into_iter().collect()
    }
}
