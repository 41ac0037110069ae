//! Just-in-time image augmentation: one random affine transform per image,
//! composed in the order rotate, shear, zoom, translate, resampled by
//! nearest neighbor with nearest-edge fill.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Magnitudes of the random augmentation draws.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentSpec {
    /// Rotation range in degrees; draws are uniform in `[-r, +r]`.
    pub rotation_deg: f64,
    /// Vertical translation as a fraction of the height.
    pub height_shift: f64,
    /// Horizontal translation as a fraction of the width.
    pub width_shift: f64,
    /// Shear angle range in radians.
    pub shear: f64,
    /// Zoom range; scale is uniform in `[1-z, 1+z]`.
    pub zoom: f64,
    pub fill: FillMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FillMode {
    /// Out-of-bounds samples clamp to the nearest edge pixel.
    Nearest,
}

impl Default for AugmentSpec {
    fn default() -> AugmentSpec {
        AugmentSpec {
            rotation_deg: 30.0,
            height_shift: 0.15,
            width_shift: 0.15,
            shear: 0.10,
            zoom: 0.10,
            fill: FillMode::Nearest,
        }
    }
}

impl AugmentSpec {
    /// Identity augmentation (all magnitudes zero).
    pub fn none() -> AugmentSpec {
        AugmentSpec {
            rotation_deg: 0.0,
            height_shift: 0.0,
            width_shift: 0.0,
            shear: 0.0,
            zoom: 0.0,
            fill: FillMode::Nearest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rotation_deg < 0.0
            || self.height_shift < 0.0
            || self.width_shift < 0.0
            || self.shear < 0.0
            || self.zoom < 0.0
        {
            return Err(Error::Domain("augmentation magnitudes must be >= 0".into()));
        }
        if self.height_shift >= 1.0 || self.width_shift >= 1.0 || self.shear >= 1.0 || self.zoom >= 1.0
        {
            return Err(Error::Domain("shift/shear/zoom must be < 1".into()));
        }
        Ok(())
    }
}

/// One concrete transform; tests can force parameters directly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    /// Rotation in radians, counterclockwise in (x, y) coordinates.
    pub rotation: f64,
    /// Vertical shift in pixels.
    pub shift_y: f64,
    /// Horizontal shift in pixels.
    pub shift_x: f64,
    /// Shear angle in radians (horizontal shear).
    pub shear: f64,
    /// Isotropic zoom factor.
    pub zoom: f64,
}

impl AffineParams {
    pub fn identity() -> AffineParams {
        AffineParams { rotation: 0.0, shift_y: 0.0, shift_x: 0.0, shear: 0.0, zoom: 1.0 }
    }
}

fn draw<R: Rng>(rng: &mut R, magnitude: f64) -> f64 {
    if magnitude > 0.0 {
        rng.gen_range(-magnitude..=magnitude)
    } else {
        0.0
    }
}

/// Independent uniform draw per option; draw order is fixed (rotation,
/// height shift, width shift, shear, zoom) so seeded runs reproduce.
pub fn sample_affine<R: Rng>(spec: &AugmentSpec, rng: &mut R, h: usize, w: usize) -> AffineParams {
    let rotation = draw(rng, spec.rotation_deg).to_radians();
    let shift_y = draw(rng, spec.height_shift) * h as f64;
    let shift_x = draw(rng, spec.width_shift) * w as f64;
    let shear = draw(rng, spec.shear);
    let zoom = if spec.zoom > 0.0 {
        1.0 + draw(rng, spec.zoom)
    } else {
        1.0
    };
    AffineParams { rotation, shift_y, shift_x, shear, zoom }
}

/// Apply the transform about the image center. Accepts `[H,W]` or `[C,H,W]`
/// tensors; every channel sees the same transform. Output pixel values are
/// always a subset of input pixel values (nearest-neighbor sampling).
pub fn apply_affine(image: &Tensor, params: &AffineParams) -> Result<Tensor> {
    let (channels, h, w) = match image.rank() {
        2 => (1, image.shape()[0], image.shape()[1]),
        3 => (image.shape()[0], image.shape()[1], image.shape()[2]),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "augment expects [H,W] or [C,H,W], got {:?}",
                image.shape()
            )))
        }
    };
    // Forward map: q = Z * Sh * R * p + t, all about the center. Sampling
    // inverts it: p = (Z * Sh * R)^-1 (q - t).
    let (sin_r, cos_r) = params.rotation.sin_cos();
    let (sin_s, cos_s) = params.shear.sin_cos();
    let z = params.zoom;
    // R, then shear [[1, -sin], [0, cos]], then isotropic zoom.
    let m00 = z * (cos_r - sin_s * sin_r);
    let m01 = z * (-sin_r - sin_s * cos_r);
    let m10 = z * cos_s * sin_r;
    let m11 = z * cos_s * cos_r;
    let det = m00 * m11 - m01 * m10;
    if det.abs() < 1e-12 {
        return Err(Error::Domain("degenerate affine transform".into()));
    }
    let (i00, i01, i10, i11) = (m11 / det, -m01 / det, -m10 / det, m00 / det);

    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; channels * h * w];
    let src = image.data();
    for y in 0..h {
        for x in 0..w {
            let qx = x as f64 - cx - params.shift_x;
            let qy = y as f64 - cy - params.shift_y;
            let px = i00 * qx + i01 * qy + cx;
            let py = i10 * qx + i11 * qy + cy;
            // Nearest-neighbor sample with nearest-edge fill.
            let sx = px.round().clamp(0.0, (w - 1) as f64) as usize;
            let sy = py.round().clamp(0.0, (h - 1) as f64) as usize;
            for c in 0..channels {
                out[c * h * w + y * w + x] = src[c * h * w + sy * w + sx];
            }
        }
    }
    Tensor::from_vec(image.shape(), out)
}

/// Draw one transform and apply it.
pub fn augment<R: Rng>(image: &Tensor, spec: &AugmentSpec, rng: &mut R) -> Result<Tensor> {
    spec.validate()?;
    let (h, w) = match image.rank() {
        2 => (image.shape()[0], image.shape()[1]),
        3 => (image.shape()[1], image.shape()[2]),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "augment expects [H,W] or [C,H,W], got {:?}",
                image.shape()
            )))
        }
    };
    let params = sample_affine(spec, rng, h, w);
    apply_affine(image, &params)
}
