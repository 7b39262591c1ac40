//! Execution policy for data-parallel loops.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it, or
//! when [`Exec::Sequential`] is requested, they run on the calling thread.
//! Output order and reduction tie-breaks never depend on the policy.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

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

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `(0..n).map(f).collect()`, in order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, in order.
pub fn map_slice<S, T, F>(exec: Exec, items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Applies `f(i, &mut item)` to every element.
pub fn for_each_mut<T, F>(exec: Exec, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        items.par_iter_mut().enumerate().for_each(|(i, x)| f(i, x));
        return;
    }
    let _ = exec;
    items.iter_mut().enumerate().for_each(|(i, x)| f(i, x));
}

/// Index of the smallest key among `0..n`, skipping `None`s. Ties go to the
/// lowest index.
pub fn argmin<F>(exec: Exec, n: usize, key: F) -> Option<(usize, f64)>
where
    F: Fn(usize) -> Option<f64> + Sync + Send,
{
    let better = |a: Option<(usize, f64)>, b: Option<(usize, f64)>| match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            if y.1 < x.1 || (y.1 == x.1 && y.0 < x.0) {
                Some(y)
            } else {
                Some(x)
            }
        }
    };
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n)
            .into_par_iter()
            .map(|i| key(i).map(|k| (i, k)))
            .reduce(|| None, better);
    }
    let _ = exec;
    (0..n).map(|i| key(i).map(|k| (i, k))).fold(None, better)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policies_agree() {
        let seq = map_range(Exec::Sequential, 1000, |i| (i * i) % 97);
        let par = map_range(Exec::Parallel, 1000, |i| (i * i) % 97);
        assert_eq!(seq, par);
    }

    #[test]
    fn argmin_ties_go_to_lowest_index() {
        let keys = [3.0, 1.0, 5.0, 1.0, 1.0];
        for exec in [Exec::Sequential, Exec::Parallel] {
            let got = argmin(exec, keys.len(), |i| Some(keys[i]));
            assert_eq!(got, Some((1, 1.0)));
        }
        assert_eq!(argmin(Exec::Sequential, 3, |_| None), None);
    }
}
