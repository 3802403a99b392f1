//! Gaze angles, gaze vectors, the angular error metric, and the parametric
//! annotation-perturbation model used to inject controlled label
//! inconsistency into synthetic datasets.
//!
//! Convention (this fixes the meaning of every error number in the crate):
//! yaw and pitch are in radians, and the corresponding unit gaze vector in
//! camera coordinates is
//!
//! ```text
//! v = (cos(pitch)·sin(yaw), sin(pitch), cos(pitch)·cos(yaw))
//! ```
//!
//! so (0, 0) looks straight ahead along +z, positive yaw looks toward +x,
//! and positive pitch looks up toward +y.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeAngles {
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeAngles {
    pub fn new(yaw: f64, pitch: f64) -> Self {
        GazeAngles { yaw, pitch }
    }

    pub fn from_degrees(yaw_deg: f64, pitch_deg: f64) -> Self {
        GazeAngles {
            yaw: yaw_deg.to_radians(),
            pitch: pitch_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GazeVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl GazeVector {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn dot(&self, other: &GazeVector) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }
}

pub fn angles_to_vector(a: GazeAngles) -> GazeVector {
    GazeVector {
        x: a.pitch.cos() * a.yaw.sin(),
        y: a.pitch.sin(),
        z: a.pitch.cos() * a.yaw.cos(),
    }
}

pub fn vector_to_angles(v: GazeVector) -> GazeAngles {
    let n = v.norm();
    GazeAngles {
        yaw: v.x.atan2(v.z),
        pitch: (v.y / n).clamp(-1.0, 1.0).asin(),
    }
}

/// Angle between the two gaze directions, in degrees.
pub fn angular_error_deg(a: GazeAngles, b: GazeAngles) -> f64 {
    let va = angles_to_vector(a);
    let vb = angles_to_vector(b);
    va.dot(&vb).clamp(-1.0, 1.0).acos().to_degrees()
}

/// 3×3 rotation, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    pub m: [[f64; 3]; 3],
}

impl Rotation3 {
    pub fn identity() -> Self {
        Rotation3 {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rodrigues rotation about `axis` (normalized internally) by `angle`
    /// radians.
    pub fn from_axis_angle(axis: [f64; 3], angle: f64) -> Self {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        if n == 0.0 {
            return Rotation3::identity();
        }
        let (ux, uy, uz) = (axis[0] / n, axis[1] / n, axis[2] / n);
        let (s, c) = angle.sin_cos();
        let ic = 1.0 - c;
        Rotation3 {
            m: [
                [c + ux * ux * ic, ux * uy * ic - uz * s, ux * uz * ic + uy * s],
                [uy * ux * ic + uz * s, c + uy * uy * ic, uy * uz * ic - ux * s],
                [uz * ux * ic - uy * s, uz * uy * ic + ux * s, c + uz * uz * ic],
            ],
        }
    }

    pub fn apply(&self, v: GazeVector) -> GazeVector {
        GazeVector {
            x: self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            y: self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            z: self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        }
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max deviation of RᵀR from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let m = &self.m;
        let mut worst = 0.0f64;
        for i in 0..3 {
            for j in 0..3 {
                let mut dot = 0.0;
                for k in 0..3 {
                    dot += m[k][i] * m[k][j];
                }
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot - target).abs());
            }
        }
        worst
    }
}

/// Dataset-specific label distortion: a constant rotation applied to the
/// gaze vector, a constant (yaw, pitch) bias, and i.i.d. Gaussian angle
/// noise. Models systematic calibration mismatch plus estimation error
/// between acquisition setups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnnotationPerturbation {
    pub axis: [f64; 3],
    pub angle_rad: f64,
    pub bias_yaw: f64,
    pub bias_pitch: f64,
    pub noise_std: f64,
}

impl AnnotationPerturbation {
    pub fn identity() -> Self {
        AnnotationPerturbation {
            axis: [0.0, 1.0, 0.0],
            angle_rad: 0.0,
            bias_yaw: 0.0,
            bias_pitch: 0.0,
            noise_std: 0.0,
        }
    }

    /// Pure rotation about the vertical (y) axis, in degrees.
    pub fn yaw_rotation_deg(deg: f64) -> Self {
        AnnotationPerturbation {
            axis: [0.0, 1.0, 0.0],
            angle_rad: deg.to_radians(),
            ..AnnotationPerturbation::identity()
        }
    }

    pub fn is_identity(&self) -> bool {
        self.angle_rad == 0.0
            && self.bias_yaw == 0.0
            && self.bias_pitch == 0.0
            && self.noise_std == 0.0
    }

    pub fn rotation(&self) -> Rotation3 {
        Rotation3::from_axis_angle(self.axis, self.angle_rad)
    }
}

/// Distorts a clean gaze label: rotate the gaze vector, convert back to
/// angles, add the constant bias, then add Gaussian noise. A zero rotation
/// skips the vector round-trip, so the identity perturbation is exact.
pub fn perturb_annotation<R: Rng>(
    a: GazeAngles,
    p: &AnnotationPerturbation,
    rng: &mut R,
) -> GazeAngles {
    let rotated = if p.angle_rad == 0.0 {
        a
    } else {
        vector_to_angles(p.rotation().apply(angles_to_vector(a)))
    };
    let mut yaw = rotated.yaw + p.bias_yaw;
    let mut pitch = rotated.pitch + p.bias_pitch;
    if p.noise_std > 0.0 {
        let normal = Normal::new(0.0, p.noise_std).expect("noise_std >= 0");
        yaw += normal.sample(rng);
        pitch += normal.sample(rng);
    }
    GazeAngles::new(yaw, pitch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs;
    use std::f64::consts::{FRAC_PI_2, PI};

    #[test]
    fn straight_ahead_and_right() {
        let v = angles_to_vector(GazeAngles::new(0.0, 0.0));
        assert!((v.x).abs() < 1e-15 && (v.y).abs() < 1e-15 && (v.z - 1.0).abs() < 1e-15);
        let v = angles_to_vector(GazeAngles::new(FRAC_PI_2, 0.0));
        assert!((v.x - 1.0).abs() < 1e-15 && v.y.abs() < 1e-15 && v.z.abs() < 1e-12);
    }

    #[test]
    fn round_trip_over_pose_grid() {
        for yaw_deg in (-80..=80).step_by(10) {
            for pitch_deg in (-70..=70).step_by(10) {
                let a = GazeAngles::from_degrees(yaw_deg as f64, pitch_deg as f64);
                let back = vector_to_angles(angles_to_vector(a));
                assert!((back.yaw - a.yaw).abs() < 1e-12, "yaw {yaw_deg}");
                assert!((back.pitch - a.pitch).abs() < 1e-12, "pitch {pitch_deg}");
            }
        }
    }

    #[test]
    fn unit_norm_everywhere_on_grid() {
        for yaw_deg in (-120..=120).step_by(15) {
            for pitch_deg in (-70..=70).step_by(10) {
                let v = angles_to_vector(GazeAngles::from_degrees(yaw_deg as f64, pitch_deg as f64));
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angular_error_basics() {
        let a = GazeAngles::new(0.3, -0.2);
        assert_eq!(angular_error_deg(a, a), 0.0);
        let e = angular_error_deg(GazeAngles::new(0.0, 0.0), GazeAngles::new(FRAC_PI_2, 0.0));
        assert!((e - 90.0).abs() < 1e-12);
    }

    #[test]
    fn angular_error_matches_duplicate_implementation() {
        // Independent route: normalize both direction vectors explicitly and
        // take the arccos of the raw dot product.
        let dup = |a: GazeAngles, b: GazeAngles| -> f64 {
            let to_xyz = |g: GazeAngles| {
                [
                    g.pitch.cos() * g.yaw.sin(),
                    g.pitch.sin(),
                    g.pitch.cos() * g.yaw.cos(),
                ]
            };
            let va = to_xyz(a);
            let vb = to_xyz(b);
            let na = va.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = vb.iter().map(|v| v * v).sum::<f64>().sqrt();
            let dot = va.iter().zip(&vb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
            dot.clamp(-1.0, 1.0).acos() * 180.0 / PI
        };
        let mut rng = rngs::seeded(99);
        for _ in 0..1000 {
            let a = GazeAngles::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.2..1.2),
            );
            let b = GazeAngles::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.2..1.2),
            );
            assert!((angular_error_deg(a, b) - dup(a, b)).abs() < 1e-10);
        }
    }

    #[test]
    fn angular_error_symmetric_bounded() {
        let mut rng = rngs::seeded(100);
        for _ in 0..500 {
            let a = GazeAngles::new(rng.random_range(-PI..PI), rng.random_range(-1.4..1.4));
            let b = GazeAngles::new(rng.random_range(-PI..PI), rng.random_range(-1.4..1.4));
            let e1 = angular_error_deg(a, b);
            let e2 = angular_error_deg(b, a);
            assert!((e1 - e2).abs() < 1e-12);
            assert!((0.0..=180.0).contains(&e1));
        }
    }

    #[test]
    fn rotation_is_orthonormal_with_unit_det() {
        let r = Rotation3::from_axis_angle([0.3, -1.0, 0.2], 0.7);
        assert!(r.orthonormality_error() < 1e-12);
        assert!((r.det() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_perturbation_is_identity() {
        let mut rng = rngs::seeded(1);
        let p = AnnotationPerturbation::identity();
        for _ in 0..100 {
            let a = GazeAngles::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8));
            let out = perturb_annotation(a, &p, &mut rng);
            assert!((out.yaw - a.yaw).abs() < 1e-12);
            assert!((out.pitch - a.pitch).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_axis_rotation_shifts_yaw_of_straight_ahead() {
        let p = AnnotationPerturbation::yaw_rotation_deg(5.0);
        let mut rng = rngs::seeded(2);
        let out = perturb_annotation(GazeAngles::new(0.0, 0.0), &p, &mut rng);
        // R_y(+5°) applied to (0,0,1) with this convention turns the gaze
        // toward +x, i.e. yaw increases by exactly 5°.
        assert!((out.yaw - 5.0f64.to_radians()).abs() < 1e-12);
        assert!(out.pitch.abs() < 1e-12);
    }

    #[test]
    fn perturbation_error_respects_triangle_bound() {
        let p = AnnotationPerturbation {
            axis: [0.1, 1.0, 0.0],
            angle_rad: 4.0f64.to_radians(),
            bias_yaw: 1.0f64.to_radians(),
            bias_pitch: -0.5f64.to_radians(),
            noise_std: 0.3f64.to_radians(),
        };
        let bias_deg = (p.bias_yaw.abs() + p.bias_pitch.abs()).to_degrees();
        let bound = 4.0 + bias_deg + 5.0 * p.noise_std.to_degrees();
        let mut rng = rngs::seeded(3);
        for _ in 0..2000 {
            let a = GazeAngles::new(rng.random_range(-0.5..0.5), rng.random_range(-0.4..0.4));
            let out = perturb_annotation(a, &p, &mut rng);
            assert!(angular_error_deg(a, out) <= bound + 1e-9);
        }
    }
}
