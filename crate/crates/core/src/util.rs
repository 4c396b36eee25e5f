use rayon::prelude::*;

/// Sum of `f(i)` for i in 0..n with a reduction order fixed by `chunk`, so the
/// result does not depend on the number of worker threads.
pub(crate) fn par_sum<F>(n: usize, chunk: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let chunk = chunk.max(1);
    let parts: Vec<f64> = (0..n.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n);
            (lo..hi).map(&f).sum()
        })
        .collect();
    parts.iter().sum()
}
