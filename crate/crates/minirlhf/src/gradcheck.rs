//! Central finite-difference gradient checking.
//!
//! Every analytic gradient in this crate is validated against this oracle on
//! randomly sampled coordinates. The oracle only evaluates the scalar loss;
//! it never touches the backward-pass code it is checking.

use crate::policy::ParamBlock;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Coordinates whose analytic and numeric values both sit below this floor
/// are compared absolutely; relative error is meaningless at the finite
/// difference noise level.
const SMALL_GRAD_FLOOR: f64 = 1e-6;
const SMALL_GRAD_ATOL: f64 = 1e-8;

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_coord: usize,
    pub checked: usize,
}

/// Central difference of `f` along flat coordinate `coord`.
pub fn central_diff<F: FnMut(&ParamBlock) -> f64>(
    block: &ParamBlock,
    mut f: F,
    coord: usize,
    step: f64,
) -> f64 {
    let base = block.flat_get(coord);
    let mut perturbed = block.clone();
    perturbed.flat_set(coord, base + step);
    let plus = f(&perturbed);
    perturbed.flat_set(coord, base - step);
    let minus = f(&perturbed);
    (plus - minus) / (2.0 * step)
}

/// Checks `analytic` against central differences on `n_coords` random
/// coordinates of `block`. Reports the worst relative error; coordinates
/// with both values below the noise floor count as exact when they agree
/// within the absolute tolerance.
pub fn check_gradient<F: FnMut(&ParamBlock) -> f64>(
    block: &ParamBlock,
    mut f: F,
    analytic: &ParamBlock,
    n_coords: usize,
    seed: u64,
) -> GradCheckReport {
    let len = block.flat_len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    for _ in 0..n_coords {
        let coord = rng.gen_range(0..len);
        let numeric = central_diff(block, &mut f, coord, DEFAULT_STEP);
        let a = analytic.flat_get(coord);
        let scale = a.abs().max(numeric.abs());
        let rel = if scale < SMALL_GRAD_FLOOR {
            if (a - numeric).abs() < SMALL_GRAD_ATOL {
                0.0
            } else {
                (a - numeric).abs() / SMALL_GRAD_FLOOR
            }
        } else {
            (a - numeric).abs() / scale
        };
        if rel > report.max_rel_err {
            report.max_rel_err = rel;
            report.worst_coord = coord;
        }
        report.checked += 1;
    }
    report
}
