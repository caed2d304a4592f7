//! Data-parallel helpers over agents and sweep points.
//!
//! With the `parallel` feature (default) [`Execution::Parallel`] fans work out
//! on the rayon pool; without it every call runs sequentially. Results are
//! always collected in index order and reduced sequentially, so both modes
//! produce bitwise identical output.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when work is actually spread over threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    /// `(0..n).map(f)` in index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to every element of `items` in place.
    pub fn for_each_mut<T, F>(self, items: &mut [T], f: F)
    where
        T: Send,
        F: Fn(usize, &mut T) + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Execution::Parallel {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, t)| f(i, t));
            return;
        }
        items.iter_mut().enumerate().for_each(|(i, t)| f(i, t));
    }

    /// Sum of `f(i)` for `i in 0..n`, added left to right.
    pub fn sum<F>(self, n: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        self.map(n, f).into_iter().sum()
    }

    /// Vector sum of `f(i)` for `i in 0..n`, added left to right.
    pub fn sum_vectors<F>(self, n: usize, dim: usize, f: F) -> Array1<f64>
    where
        F: Fn(usize) -> Array1<f64> + Sync + Send,
    {
        self.map(n, f)
            .into_iter()
            .fold(Array1::zeros(dim), |acc, v| acc + v)
    }
}
