//! Sparse multivariate functional data: fitting, depth, outlier detection and
//! sparse functional boxplot geometry.

pub mod boxplot;
pub mod depth;
pub mod eval;
pub mod fdata;
pub mod fpca;
pub mod render;
pub mod seeding;
pub mod simgen;

/// `f(0..n)` collected in order, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}
