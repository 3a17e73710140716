use crate::error::{ensure, Error, Result};

/// The weight-decay grid searched by the inner loop.
pub const DECAY_GRID: [f64; 3] = [1e-6, 1e-7, 1e-8];

/// Outcome of a grid search.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecaySelection {
    pub chosen: f64,
    /// `(decay, score)` for every evaluated grid point; divergence scores `+∞`.
    pub scores: Vec<(f64, f64)>,
}

/// Whether an error means the optimisation blew up rather than a bug or bad input.
pub fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::Diverged { .. } | Error::NonFinite(_))
}

/// Pick the grid value with the lowest score; ties go to the largest decay.
///
/// `score` is called once per grid value unless the grid has a single
/// entry, which is returned directly. Divergence scores `+∞`; other errors
/// propagate.
pub fn select_weight_decay(grid: &[f64], mut score: impl FnMut(f64) -> Result<f64>) -> Result<DecaySelection> {
    ensure!(!grid.is_empty(), InvalidArgument, "weight-decay grid is empty");
    ensure!(grid.iter().all(|d| *d >= 0.0 && d.is_finite()), InvalidArgument, "weight decays must be finite and non-negative");
    if grid.len() == 1 {
        return Ok(DecaySelection { chosen: grid[0], scores: Vec::new() });
    }
    let mut scores = Vec::with_capacity(grid.len());
    for &d in grid {
        let s = match score(d) {
            Ok(s) if s.is_nan() => f64::INFINITY,
            Ok(s) => s,
            Err(e) if is_divergence(&e) => f64::INFINITY,
            Err(e) => return Err(e),
        };
        scores.push((d, s));
    }
    let chosen = scores
        .iter()
        .copied()
        .reduce(|best, cur| if cur.1 < best.1 || (cur.1 == best.1 && cur.0 > best.0) { cur } else { best })
        .map(|(d, _)| d)
        .expect("non-empty grid");
    Ok(DecaySelection { chosen, scores })
}
