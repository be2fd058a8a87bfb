//! Central-difference gradient checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParameterStore};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Above this many coordinates a seeded random subset is checked.
    pub max_coordinates: usize,
    /// Size of the random subset when `max_coordinates` is exceeded.
    pub subset_size: usize,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            max_coordinates: 10_000,
            subset_size: 2_000,
            floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub coordinates_checked: usize,
    /// Flat index of the worst coordinate.
    pub worst_coordinate: usize,
}

/// Compares the analytic gradient produced by `loss` against central
/// differences.
///
/// `loss` must zero the gradients, run a forward and backward pass on the
/// store's current values and return the loss value. The store's values are
/// restored before returning.
pub fn finite_difference_check<F>(
    store: &mut ParameterStore,
    mut loss: F,
    opts: GradCheckOptions,
) -> Result<GradCheckReport, AutodiffError>
where
    F: FnMut(&mut ParameterStore) -> Result<f64, AutodiffError>,
{
    loss(store)?;
    let analytic = store.flat_grads();
    let n = analytic.len();
    let coords: Vec<usize> = if n > opts.max_coordinates {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut v = sample(&mut rng, n, opts.subset_size.min(n)).into_vec();
        v.sort_unstable();
        v
    } else {
        (0..n).collect()
    };

    // flat index -> (parameter, offset)
    let mut offsets = Vec::with_capacity(store.len());
    let mut acc = 0;
    for p in store.iter() {
        offsets.push(acc);
        acc += p.value.len();
    }
    let locate = |flat: usize| {
        let pi = offsets.partition_point(|&o| o <= flat) - 1;
        (pi, flat - offsets[pi])
    };

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        coordinates_checked: coords.len(),
        worst_coordinate: 0,
    };
    for &flat in &coords {
        let (pi, off) = locate(flat);
        let original = nth_value(store, pi, off);
        set_nth(store, pi, off, original + opts.epsilon);
        let plus = loss(store)?;
        set_nth(store, pi, off, original - opts.epsilon);
        let minus = loss(store)?;
        set_nth(store, pi, off, original);

        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let a = analytic[flat];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_coordinate = flat;
        }
    }
    // leave the analytic gradient in place for the caller
    loss(store)?;
    Ok(report)
}

fn nth_value(store: &ParameterStore, pi: usize, off: usize) -> f64 {
    store
        .iter()
        .nth(pi)
        .expect("parameter index")
        .value
        .as_slice()[off]
}

fn set_nth(store: &mut ParameterStore, pi: usize, off: usize, v: f64) {
    store
        .iter_mut()
        .nth(pi)
        .expect("parameter index")
        .value
        .as_mut_slice()[off] = v;
}
