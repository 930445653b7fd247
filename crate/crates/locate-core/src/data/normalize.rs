//! Canonical body-frame normalization.
//!
//! Each frame is moved into a pose-local coordinate system so the model never
//! sees global position or heading: the pelvis is subtracted, then the frame
//! is rotated so the hip line lies along the x-axis and the shoulder line —
//! after removing its hip-parallel component — points along the y-axis. The
//! two-step Gram-Schmidt makes the rotation well defined whenever hips are
//! separated and the shoulder line is not parallel to the hip line.

use super::{Frame, LEFT_HIP, LEFT_SHOULDER, PELVIS, RIGHT_HIP, RIGHT_SHOULDER};
use crate::error::{Error, Result};

/// Vectors shorter than this are treated as degenerate.
const DEGENERATE_NORM: f64 = 1e-9;

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn scaled(a: [f64; 3], k: f64) -> [f64; 3] {
    [a[0] * k, a[1] * k, a[2] * k]
}

/// Normalize every frame into the canonical body frame. Pure; the input is
/// untouched.
///
/// Degenerate skeletons fail with the frame index: coincident hips, or a
/// shoulder line parallel to the hip line (no residual to build the y-axis
/// from).
pub fn normalize_skeleton(frames: &[Frame]) -> Result<Vec<Frame>> {
    frames
        .iter()
        .enumerate()
        .map(|(i, frame)| normalize_frame(frame, i))
        .collect()
}

fn normalize_frame(frame: &Frame, index: usize) -> Result<Frame> {
    let degenerate = |what: &str| {
        Err(Error::InvalidSequence {
            id: format!("frame {index}"),
            problem: format!("degenerate skeleton: {what}"),
        })
    };

    let pelvis = frame[PELVIS];
    let hip = sub(frame[LEFT_HIP], frame[RIGHT_HIP]);
    let hip_len = norm(hip);
    if hip_len < DEGENERATE_NORM {
        return degenerate("hip joints coincide");
    }
    let x_axis = scaled(hip, 1.0 / hip_len);

    let shoulder = sub(frame[LEFT_SHOULDER], frame[RIGHT_SHOULDER]);
    let residual = sub(shoulder, scaled(x_axis, dot(shoulder, x_axis)));
    let res_len = norm(residual);
    if res_len < DEGENERATE_NORM {
        return degenerate("shoulder line parallel to hip line");
    }
    let y_axis = scaled(residual, 1.0 / res_len);
    let z_axis = cross(x_axis, y_axis);

    let mut out = *frame;
    for joint in &mut out {
        let p = sub(*joint, pelvis);
        *joint = [dot(x_axis, p), dot(y_axis, p), dot(z_axis, p)];
    }
    Ok(out)
}
