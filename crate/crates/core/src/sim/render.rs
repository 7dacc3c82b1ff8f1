use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::geometry::{Pose2, Sdf};

/// Local coordinate of the center of cell `i` out of `n` across `extent`.
fn cell(i: usize, n: usize, lo: f64, hi: f64) -> f64 {
    lo + (i as f64 + 0.5) / n as f64 * (hi - lo)
}

/// Contact image of an `size x size` grid spanning `patch` units centred on `sensor`.
///
/// Pixel `(r, c)` samples local point `(u_c, v_r)`; value `clamp(-sdf / p_max, 0, 1)`,
/// then additive Gaussian noise `sigma` and a re-clamp.
pub fn render_patch(
    solid: &dyn Sdf,
    sensor: Pose2,
    size: usize,
    patch: f64,
    p_max: f64,
    sigma: f64,
    rng: &mut impl Rng,
) -> Vec<f32> {
    let h = patch / 2.0;
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("finite sigma"));
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let v = cell(r, size, -h, h);
        for c in 0..size {
            let u = cell(c, size, -h, h);
            let d = solid.distance(sensor.apply([u, v]));
            let mut x = (-d / p_max).clamp(0.0, 1.0);
            if let Some(n) = &noise {
                x = (x + n.sample(rng)).clamp(0.0, 1.0);
            }
            out.push(x as f32);
        }
    }
    out
}

/// Binary occupancy image of `solid` over `extent = [[x_lo, x_hi], [y_lo, y_hi]]` in the `camera` frame.
/// Rows run along `x`, columns along `y`.
pub fn render_camera(solid: &dyn Sdf, camera: Pose2, shape: [usize; 2], extent: [[f64; 2]; 2]) -> Vec<f32> {
    let [rows, cols] = shape;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let x = cell(r, rows, extent[0][0], extent[0][1]);
        for c in 0..cols {
            let y = cell(c, cols, extent[1][0], extent[1][1]);
            out.push(if solid.distance(camera.apply([x, y])) < 0.0 { 1.0 } else { 0.0 });
        }
    }
    out
}
