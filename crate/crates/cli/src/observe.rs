use ndarray::ArrayView2;
use rand::Rng;

use crate::error::{CliError, CliResult};

/// `count` distinct grid points drawn uniformly, in row-major order, with
/// their values.
pub fn pick_observations<R: Rng + ?Sized>(
    field: ArrayView2<'_, f64>,
    count: usize,
    rng: &mut R,
) -> CliResult<(Vec<(usize, usize)>, Vec<f64>)> {
    let (h, w) = field.dim();
    if count > h * w {
        return Err(CliError::config(format!(
            "{count} observations requested on a {h}×{w} grid"
        )));
    }
    let mut flat = rand::seq::index::sample(rng, h * w, count).into_vec();
    flat.sort_unstable();
    let points: Vec<(usize, usize)> = flat.iter().map(|k| (k / w, k % w)).collect();
    let values = points.iter().map(|p| field[*p]).collect();
    Ok((points, values))
}
