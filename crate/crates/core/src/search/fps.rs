use crate::error::{Error, Result};

use super::dist2;

/// Greedy max-min subset selection.
///
/// Starts at `seed_index`; each following pick is the unselected point with
/// the largest distance to the selected set (lower index on ties). Returns
/// `n_out` distinct indices in selection order.
pub fn farthest_point_sampling(positions: &[[f64; 3]], n_out: usize, seed_index: usize) -> Result<Vec<usize>> {
    let n = positions.len();
    if n_out == 0 || n_out > n {
        return Err(Error::InvalidArgument(format!(
            "cannot sample {n_out} of {n} points"
        )));
    }
    if seed_index >= n {
        return Err(Error::InvalidArgument(format!(
            "seed index {seed_index} out of range for {n} points"
        )));
    }
    let mut selected = vec![false; n];
    let mut min_d2 = vec![f64::INFINITY; n];
    let mut order = Vec::with_capacity(n_out);
    let mut current = seed_index;
    loop {
        selected[current] = true;
        order.push(current);
        if order.len() == n_out {
            break;
        }
        let p = positions[current];
        let mut best: Option<usize> = None;
        for i in 0..n {
            if selected[i] {
                continue;
            }
            let d = dist2(positions[i], p);
            if d < min_d2[i] {
                min_d2[i] = d;
            }
            if best.is_none_or(|b| min_d2[i] > min_d2[b]) {
                best = Some(i);
            }
        }
        current = best.expect("n_out <= n leaves an unselected point");
    }
    Ok(order)
}
