//! Deterministic gaze-scene rendering.
//!
//! Each face image is an analytic scene sampled on the pixel grid: an
//! elliptical head whose position and shear encode head pose, two eye
//! sockets that move with the head, and dark iris disks displaced from the
//! socket centers in proportion to head-relative gaze. Everything is pure
//! f64 arithmetic of the inputs, so identical inputs give bitwise-identical
//! images at any resolution.
//!
//! Eye patches are not rendered separately: they are bilinear crops of the
//! face image around the socket centers, recomputable from the pose alone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::GazeAngles;
use crate::tensor::Tensor;

/// Per-subject shape factors, multiplicative around 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubjectParams {
    pub head_w: f64,
    pub head_h: f64,
    pub eye_dx: f64,
    pub eye_dy: f64,
    pub eye_r: f64,
    pub iris_r: f64,
    pub skin: f64,
}

impl SubjectParams {
    pub fn neutral() -> Self {
        SubjectParams {
            head_w: 1.0,
            head_h: 1.0,
            eye_dx: 1.0,
            eye_dy: 1.0,
            eye_r: 1.0,
            iris_r: 1.0,
            skin: 1.0,
        }
    }

    pub fn sample<R: Rng>(rng: &mut R) -> Self {
        let mut f = |lo: f64, hi: f64| rng.random_range(lo..hi);
        SubjectParams {
            head_w: f(0.90, 1.10),
            head_h: f(0.90, 1.10),
            eye_dx: f(0.92, 1.08),
            eye_dy: f(0.90, 1.10),
            eye_r: f(0.90, 1.10),
            iris_r: f(0.92, 1.08),
            skin: f(0.88, 1.12),
        }
    }
}

/// Per-dataset rendering style.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Appearance {
    pub brightness: f64,
    pub contrast: f64,
    pub iris_scale: f64,
}

impl Default for Appearance {
    fn default() -> Self {
        Appearance {
            brightness: 0.0,
            contrast: 1.0,
            iris_scale: 1.0,
        }
    }
}

// Scene geometry as fractions of the face image side.
const HEAD_SHIFT: f64 = 0.12;
const HEAD_RX: f64 = 0.34;
const HEAD_RY: f64 = 0.42;
const HEAD_SHEAR: f64 = 0.16;
const EYE_DX: f64 = 0.16;
const EYE_DY: f64 = 0.08;
const EYE_RX: f64 = 0.115;
const EYE_RY: f64 = 0.072;
const IRIS_R: f64 = 0.042;
const IRIS_MARGIN: f64 = 0.012;
/// tanh scale (radians) mapping head-relative gaze to iris displacement.
const GAZE_SCALE: f64 = 0.9;
/// Crop half-extent around each socket center.
pub const EYE_CROP_HALF: f64 = 0.14;

const BG: f64 = 0.24;
const SKIN: f64 = 0.55;
const SCLERA: f64 = 0.93;
const IRIS: f64 = 0.07;

fn check_pose(name: &str, a: GazeAngles) -> Result<()> {
    if !a.yaw.is_finite()
        || !a.pitch.is_finite()
        || a.yaw.abs() > std::f64::consts::PI
        || a.pitch.abs() > std::f64::consts::FRAC_PI_2
    {
        return Err(Error::PoseOutOfRange(format!(
            "{name} yaw {:.4} pitch {:.4} rad",
            a.yaw, a.pitch
        )));
    }
    Ok(())
}

/// Head-ellipse center in pixels; position encodes head pose.
fn head_center(head: GazeAngles, w: f64) -> (f64, f64) {
    (
        0.5 * w + HEAD_SHIFT * w * head.yaw.sin(),
        0.5 * w - HEAD_SHIFT * w * head.pitch.sin(),
    )
}

/// Socket centers (left, right) in face-image pixels, including the shear
/// that head yaw applies to everything above the head center.
pub fn eye_centers(head: GazeAngles, subj: &SubjectParams, face_size: usize) -> ([f64; 2], [f64; 2]) {
    let w = face_size as f64;
    let (hcx, hcy) = head_center(head, w);
    let shear = HEAD_SHEAR * head.yaw.sin();
    let dy = -EYE_DY * w * subj.eye_dy;
    let dx = EYE_DX * w * subj.eye_dx;
    let sheared_x = |off_x: f64| hcx + off_x + shear * dy;
    ([sheared_x(-dx), hcy + dy], [sheared_x(dx), hcy + dy])
}

/// Approximate signed pixel distance to an axis-aligned ellipse edge;
/// negative inside.
fn ellipse_dist(px: f64, py: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let q = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
    (q.sqrt() - 1.0) * rx.min(ry)
}

/// Linear 1-px antialiasing band around the edge.
fn coverage(dist: f64) -> f64 {
    (0.5 - dist).clamp(0.0, 1.0)
}

/// Iris displacement (pixels) for head-relative gaze, bounded inside the
/// socket by a tanh squash.
fn iris_offset(gaze: GazeAngles, head: GazeAngles, subj: &SubjectParams, app: &Appearance, w: f64) -> (f64, f64, f64) {
    let iris_r = IRIS_R * w * subj.iris_r * app.iris_scale;
    let amp_x = (EYE_RX * w * subj.eye_r - iris_r - IRIS_MARGIN * w).max(0.02 * w);
    let amp_y = (EYE_RY * w * subj.eye_r - iris_r * 0.6 - IRIS_MARGIN * w).max(0.012 * w);
    let rel_yaw = gaze.yaw - head.yaw;
    let rel_pitch = gaze.pitch - head.pitch;
    (
        amp_x * (rel_yaw / GAZE_SCALE).tanh(),
        -amp_y * (rel_pitch / GAZE_SCALE).tanh(),
        iris_r,
    )
}

/// Renders the face image: `[face_size, face_size, 1]`, values in [0, 1].
pub fn render_face(
    gaze: GazeAngles,
    head: GazeAngles,
    subj: &SubjectParams,
    app: &Appearance,
    face_size: usize,
) -> Result<Tensor> {
    check_pose("gaze", gaze)?;
    check_pose("head", head)?;
    let w = face_size as f64;
    let (hcx, hcy) = head_center(head, w);
    let shear = HEAD_SHEAR * head.yaw.sin();
    let head_rx = HEAD_RX * w * subj.head_w;
    let head_ry = HEAD_RY * w * subj.head_h;
    let skin = (SKIN * subj.skin).clamp(0.3, 0.8);
    let ([lx, ly], [rx, ry]) = eye_centers(head, subj, face_size);
    let (iox, ioy, iris_r) = iris_offset(gaze, head, subj, app, w);
    let eye_rx = EYE_RX * w * subj.eye_r;
    let eye_ry = EYE_RY * w * subj.eye_r;

    let scene = |px: f64, py: f64| -> f64 {
        let mut v = BG;
        // head ellipse, sheared horizontally around its center
        let hx = px - shear * (py - hcy);
        let c = coverage(ellipse_dist(hx, py, hcx, hcy, head_rx, head_ry));
        v = v * (1.0 - c) + skin * c;
        for (ex, ey) in [(lx, ly), (rx, ry)] {
            let socket = coverage(ellipse_dist(px, py, ex, ey, eye_rx, eye_ry));
            v = v * (1.0 - socket) + SCLERA * socket;
            // iris disk clipped to the socket
            let c = coverage(ellipse_dist(px, py, ex + iox, ey + ioy, iris_r, iris_r)) * socket;
            v = v * (1.0 - c) + IRIS * c;
        }
        v
    };

    // 3×3 supersampling keeps sub-pixel features symmetric on the grid
    const SUB: [f64; 3] = [-1.0 / 3.0, 0.0, 1.0 / 3.0];
    let mut data = Vec::with_capacity(face_size * face_size);
    for yi in 0..face_size {
        let py = yi as f64 + 0.5;
        for xi in 0..face_size {
            let px = xi as f64 + 0.5;
            let mut v = 0.0;
            for dy in SUB {
                for dx in SUB {
                    v += scene(px + dx, py + dy);
                }
            }
            v /= 9.0;
            v = ((v - 0.5) * app.contrast + 0.5 + app.brightness).clamp(0.0, 1.0);
            data.push(v);
        }
    }
    Tensor::new(vec![face_size, face_size, 1], data)
}

/// Bilinear crop around `center` with half-extent `half` (pixels), sampled
/// at `out_size × out_size`; source coordinates clamp at the borders.
pub fn crop_bilinear(face: &Tensor, center: [f64; 2], half: f64, out_size: usize) -> Tensor {
    let h = face.shape()[0];
    let w = face.shape()[1];
    let data = face.data();
    let sample = |sx: f64, sy: f64| -> f64 {
        let gx = (sx - 0.5).clamp(0.0, (w - 1) as f64);
        let gy = (sy - 0.5).clamp(0.0, (h - 1) as f64);
        let x0 = gx.floor() as usize;
        let y0 = gy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = gx - x0 as f64;
        let fy = gy - y0 as f64;
        let v00 = data[y0 * w + x0];
        let v01 = data[y0 * w + x1];
        let v10 = data[y1 * w + x0];
        let v11 = data[y1 * w + x1];
        v00 * (1.0 - fx) * (1.0 - fy) + v01 * fx * (1.0 - fy) + v10 * (1.0 - fx) * fy
            + v11 * fx * fy
    };
    let mut out = Vec::with_capacity(out_size * out_size);
    let step = 2.0 * half / out_size as f64;
    let start_x = center[0] - half;
    let start_y = center[1] - half;
    for yi in 0..out_size {
        let sy = start_y + (yi as f64 + 0.5) * step;
        for xi in 0..out_size {
            let sx = start_x + (xi as f64 + 0.5) * step;
            out.push(sample(sx, sy));
        }
    }
    Tensor::new(vec![out_size, out_size, 1], out).expect("crop shape is valid")
}

/// Face plus the two eye patches cropped out of it.
pub fn render_sample(
    gaze: GazeAngles,
    head: GazeAngles,
    subj: &SubjectParams,
    app: &Appearance,
    face_size: usize,
    eye_size: usize,
) -> Result<(Tensor, Tensor, Tensor)> {
    let face = render_face(gaze, head, subj, app, face_size)?;
    let (left, right) = crop_eyes(&face, head, subj, eye_size);
    Ok((face, left, right))
}

/// Recomputes the eye patches of a stored face image from the pose; used
/// both in generation and to verify stored patches.
pub fn crop_eyes(face: &Tensor, head: GazeAngles, subj: &SubjectParams, eye_size: usize) -> (Tensor, Tensor) {
    let face_size = face.shape()[0];
    let half = EYE_CROP_HALF * face_size as f64;
    let (lc, rc) = eye_centers(head, subj, face_size);
    (
        crop_bilinear(face, lc, half, eye_size),
        crop_bilinear(face, rc, half, eye_size),
    )
}

/// Intensity-weighted centroid of iris-dark pixels inside the socket crop
/// region; the measurement side of the render-and-measure tests.
pub fn iris_center_of_mass(face: &Tensor, socket: [f64; 2], face_size: usize) -> Option<(f64, f64)> {
    let half = EYE_CROP_HALF * face_size as f64;
    let w = face.shape()[1];
    let (mut sx, mut sy, mut mass) = (0.0, 0.0, 0.0);
    let x_lo = (socket[0] - half).floor().max(0.0) as usize;
    let x_hi = ((socket[0] + half).ceil() as usize).min(w);
    let y_lo = (socket[1] - half).floor().max(0.0) as usize;
    let y_hi = ((socket[1] + half).ceil() as usize).min(face.shape()[0]);
    for yi in y_lo..y_hi {
        for xi in x_lo..x_hi {
            let v = face.data()[yi * w + xi];
            if v < 0.35 {
                let weight = 0.35 - v;
                sx += (xi as f64 + 0.5) * weight;
                sy += (yi as f64 + 0.5) * weight;
                mass += weight;
            }
        }
    }
    (mass > 0.0).then(|| (sx / mass, sy / mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rngs;

    fn zero() -> GazeAngles {
        GazeAngles::new(0.0, 0.0)
    }

    #[test]
    fn rendering_is_bitwise_deterministic() {
        let subj = SubjectParams::sample(&mut rngs::seeded(1));
        let app = Appearance::default();
        let g = GazeAngles::from_degrees(12.0, -8.0);
        let h = GazeAngles::from_degrees(-20.0, 5.0);
        let (f1, l1, r1) = render_sample(g, h, &subj, &app, 32, 16).unwrap();
        let (f2, l2, r2) = render_sample(g, h, &subj, &app, 32, 16).unwrap();
        assert_eq!(f1.data(), f2.data());
        assert_eq!(l1.data(), l2.data());
        assert_eq!(r1.data(), r2.data());
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let subj = SubjectParams::sample(&mut rngs::seeded(2));
        let app = Appearance {
            brightness: 0.1,
            contrast: 1.2,
            iris_scale: 1.1,
        };
        let face = render_face(
            GazeAngles::from_degrees(40.0, -20.0),
            GazeAngles::from_degrees(30.0, 15.0),
            &subj,
            &app,
            32,
        )
        .unwrap();
        assert!(face.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn centered_gaze_puts_iris_at_socket_center() {
        let subj = SubjectParams::neutral();
        let face = render_face(zero(), zero(), &subj, &Appearance::default(), 32).unwrap();
        let (lc, rc) = eye_centers(zero(), &subj, 32);
        for socket in [lc, rc] {
            let (cx, cy) = iris_center_of_mass(&face, socket, 32).expect("iris visible");
            assert!(
                (cx - socket[0]).abs() < 0.5,
                "iris x {cx} vs socket {}",
                socket[0]
            );
            assert!(
                (cy - socket[1]).abs() < 0.5,
                "iris y {cy} vs socket {}",
                socket[1]
            );
        }
    }

    #[test]
    fn increasing_yaw_shifts_iris_monotonically() {
        let subj = SubjectParams::neutral();
        let app = Appearance::default();
        let (lc, _) = eye_centers(zero(), &subj, 32);
        let mut last = f64::NEG_INFINITY;
        for k in 0..9 {
            let yaw_deg = -60.0 + 15.0 * k as f64;
            let face = render_face(
                GazeAngles::from_degrees(yaw_deg, 0.0),
                zero(),
                &subj,
                &app,
                32,
            )
            .unwrap();
            let (cx, _) = iris_center_of_mass(&face, lc, 32).expect("iris visible");
            assert!(cx > last, "yaw {yaw_deg}: com {cx} <= {last}");
            last = cx;
        }
    }

    #[test]
    fn out_of_range_pose_is_rejected() {
        let subj = SubjectParams::neutral();
        let res = render_face(
            GazeAngles::new(0.0, 2.0),
            zero(),
            &subj,
            &Appearance::default(),
            32,
        );
        assert!(matches!(res, Err(Error::PoseOutOfRange(_))));
    }

    #[test]
    fn eye_patches_equal_recomputed_crops() {
        let subj = SubjectParams::sample(&mut rngs::seeded(3));
        let app = Appearance::default();
        let g = GazeAngles::from_degrees(18.0, 6.0);
        let h = GazeAngles::from_degrees(-10.0, -4.0);
        let (face, left, right) = render_sample(g, h, &subj, &app, 32, 16).unwrap();
        let (l2, r2) = crop_eyes(&face, h, &subj, 16);
        assert_eq!(left.data(), l2.data());
        assert_eq!(right.data(), r2.data());
    }

    #[test]
    fn head_pose_moves_the_sockets() {
        let subj = SubjectParams::neutral();
        let (l0, _) = eye_centers(zero(), &subj, 32);
        let (l1, _) = eye_centers(GazeAngles::from_degrees(25.0, 0.0), &subj, 32);
        assert!(l1[0] > l0[0], "yaw should shift sockets horizontally");
        let (l2, _) = eye_centers(GazeAngles::from_degrees(0.0, 25.0), &subj, 32);
        assert!(l2[1] < l0[1], "positive pitch should raise sockets");
    }
}
