use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Rigid transform `x -> R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose6D {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose6D {
    fn default() -> Self {
        Self::identity()
    }
}

/// Skew-symmetric cross-product matrix of `v`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rotation by `angle` about the unit vector `axis` (Rodrigues).
pub fn axis_angle(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let k = skew(axis);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation matrix of a rotation vector.
pub fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    let th2 = v.norm_squared();
    let (a, b) = if th2 < 1e-8 {
        // Taylor terms of sin(t)/t and (1-cos t)/t^2
        (1.0 - th2 / 6.0 + th2 * th2 / 120.0, 0.5 - th2 / 24.0 + th2 * th2 / 720.0)
    } else {
        let th = th2.sqrt();
        (th.sin() / th, (1.0 - th.cos()) / th2)
    };
    let k = skew(v);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of a rotation matrix, angle in `[0, pi]`.
///
/// At exactly `pi` the two candidate axes `n` and `-n` describe the same
/// rotation; the lexicographically larger one is returned.
pub fn log_so3(r: &Matrix3<f64>) -> Vector3<f64> {
    let w = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * 0.5;
    let s = w.norm();
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = s.atan2(c);
    if c > 0.0 {
        let f = if theta < 1e-8 { 1.0 + theta * theta / 6.0 } else { theta / theta.sin() };
        return w * f;
    }
    // near pi: recover the axis from the symmetric part (1 - cos) n n^T
    let b = (r + r.transpose()) * 0.5 - Matrix3::identity() * c;
    let i = (0..3).max_by(|&i, &j| b[(i, i)].total_cmp(&b[(j, j)])).unwrap_or(0);
    let mut n = b.column(i).into_owned();
    n /= n.norm();
    let d = n.dot(&w);
    let flip = if d.abs() <= 1e-12 { lex_less(&n, &-n) } else { d < 0.0 };
    if flip {
        n = -n;
    }
    n * theta
}

fn lex_less(a: &Vector3<f64>, b: &Vector3<f64>) -> bool {
    for i in 0..3 {
        if a[i] != b[i] {
            return a[i] < b[i];
        }
    }
    false
}

/// Extrinsic X-Y-Z (fixed-axis) roll/pitch/yaw: `Rz(yaw) * Ry(pitch) * Rx(roll)`.
pub fn rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    rz * ry * rx
}

impl Pose6D {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Matrix3::identity(), Vector3::new(x, y, z))
    }

    pub fn from_xyz_rpy(xyz: [f64; 3], rpy_angles: [f64; 3]) -> Self {
        Self::new(
            rpy(rpy_angles[0], rpy_angles[1], rpy_angles[2]),
            Vector3::new(xyz[0], xyz[1], xyz[2]),
        )
    }

    /// Planar pose: translation `(x, y, 0)` and rotation `yaw` about z.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Self::new(rpy(0.0, 0.0, yaw), Vector3::new(x, y, 0.0))
    }

    /// `(x, y, yaw)` of a pose assumed to lie in the z = 0 plane.
    pub fn to_planar(&self) -> [f64; 3] {
        let yaw = self.rotation[(1, 0)].atan2(self.rotation[(0, 0)]);
        [self.translation.x, self.translation.y, yaw]
    }

    pub fn from_vec6(v: [f64; 6]) -> Self {
        Self::new(
            exp_so3(&Vector3::new(v[3], v[4], v[5])),
            Vector3::new(v[0], v[1], v[2]),
        )
    }

    /// `[tx, ty, tz, rx, ry, rz]` with `(rx, ry, rz)` the rotation vector.
    pub fn to_vec6(&self) -> [f64; 6] {
        let r = log_so3(&self.rotation);
        let t = self.translation;
        [t.x, t.y, t.z, r.x, r.y, r.z]
    }

    pub fn compose(&self, other: &Pose6D) -> Pose6D {
        Pose6D {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose6D {
        let rt = self.rotation.transpose();
        Pose6D {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Largest deviation of `R^T R` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let r = &self.rotation;
        let e = (r.transpose() * r - Matrix3::identity()).abs().max();
        e.max((r.determinant() - 1.0).abs())
    }
}

impl Mul for Pose6D {
    type Output = Pose6D;

    fn mul(self, rhs: Pose6D) -> Pose6D {
        self.compose(&rhs)
    }
}

impl Mul<&Pose6D> for &Pose6D {
    type Output = Pose6D;

    fn mul(self, rhs: &Pose6D) -> Pose6D {
        self.compose(rhs)
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    x
}

/// Serialized origin: translation plus extrinsic XYZ roll/pitch/yaw.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Origin {
    pub fn to_pose(&self) -> Pose6D {
        Pose6D::from_xyz_rpy(self.xyz, self.rpy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn half_turn_about_z_picks_positive_axis() {
        let r = rpy(0.0, 0.0, PI);
        let v = log_so3(&r);
        assert!((v - Vector3::new(0.0, 0.0, PI)).norm() < 1e-12, "{v:?}");
        let r = axis_angle(&Vector3::new(-1.0, 0.0, 0.0), PI);
        let v = log_so3(&r);
        assert!((v - Vector3::new(PI, 0.0, 0.0)).norm() < 1e-12, "{v:?}");
    }

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn rpy_is_extrinsic_xyz() {
        // rotate x axis by yaw 90 first-applied roll has no effect on x
        let r = rpy(0.3, 0.0, PI / 2.0);
        let x = r * Vector3::x();
        assert!((x - Vector3::y()).norm() < 1e-12);
    }

    proptest! {
        #[test]
        fn vec6_round_trips(
            t in prop::array::uniform3(-5.0f64..5.0),
            axis in prop::array::uniform3(-1.0f64..1.0),
            angle in -3.1f64..3.1,
        ) {
            let a = Vector3::from(axis);
            prop_assume!(a.norm() > 1e-3);
            let rv = a.normalize() * angle;
            let v = [t[0], t[1], t[2], rv.x, rv.y, rv.z];
            let back = Pose6D::from_vec6(v).to_vec6();
            for i in 0..6 {
                prop_assert!((back[i] - v[i]).abs() < 1e-9, "{v:?} -> {back:?}");
            }
        }

        #[test]
        fn exp_is_orthonormal(v in prop::array::uniform3(-4.0f64..4.0)) {
            let p = Pose6D::new(exp_so3(&Vector3::from(v)), Vector3::zeros());
            prop_assert!(p.orthonormality_error() < 1e-12);
        }
    }
}
