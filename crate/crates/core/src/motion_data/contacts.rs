use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Binary foot contacts from heel and toe trajectories.
///
/// `positions[k][j]` is the global position of foot joint `j` (left heel,
/// left toe, right heel, right toe) at frame `k`. A joint is in contact when
/// its finite-difference speed `|p[k+1] − p[k]| · fps` is below `threshold`.
/// The last frame repeats the previous frame's value.
pub fn derive_foot_contacts(positions: &[[[f64; 3]; 4]], fps: f64, threshold: f64) -> Result<Matrix> {
    let n = positions.len();
    if n < 2 {
        return Err(Error::TooFewFrames { needed: 2, got: n });
    }
    let mut out = Matrix::zeros(n, 4);
    for k in 0..n - 1 {
        for j in 0..4 {
            let a = positions[k][j];
            let b = positions[k + 1][j];
            let speed = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2) + (b[2] - a[2]).powi(2))
                .sqrt()
                * fps;
            out.set(k, j, if speed < threshold { 1.0 } else { 0.0 });
        }
    }
    for j in 0..4 {
        let prev = out.get(n - 2, j);
        out.set(n - 1, j, prev);
    }
    Ok(out)
}
