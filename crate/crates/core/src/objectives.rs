//! Image objectives: thickness, aspect ratio, rotation, and set diversity.

use alloc::vec::Vec;

use crate::math::sqrt;

/// Default maximum intensity for 8-bit images.
pub const DEFAULT_MAX_INTENSITY: f64 = 255.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("image must be square: {len} pixels is not h² for side {side}")]
    NotSquare { side: usize, len: usize },
    #[error("image has no pixels")]
    EmptyImage,
    #[error("maximum intensity must be positive and finite, got {0}")]
    BadMaxIntensity(f64),
    #[error("pixel {index} = {value} outside [0, m]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("no qualifying rows or columns above m/2")]
    NoQualifyingRows,
    #[error("height is zero: a single row qualifies")]
    ZeroHeight,
    #[error("rotation undefined: {0}")]
    RotationUndefined(&'static str),
    #[error("diversity needs at least two images, got {0}")]
    TooFewImages(usize),
    #[error("image {index} has side {got}, expected {expected}")]
    MixedSizes {
        index: usize,
        expected: usize,
        got: usize,
    },
}

/// Square grayscale image, row-major, intensities in `[0, m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    side: usize,
    max_intensity: f64,
    pixels: Vec<f64>,
}

impl ImageGray {
    pub fn new(side: usize, max_intensity: f64, pixels: Vec<f64>) -> Result<Self, ObjectiveError> {
        if side == 0 {
            return Err(ObjectiveError::EmptyImage);
        }
        if pixels.len() != side * side {
            return Err(ObjectiveError::NotSquare {
                side,
                len: pixels.len(),
            });
        }
        if !(max_intensity > 0.0 && max_intensity.is_finite()) {
            return Err(ObjectiveError::BadMaxIntensity(max_intensity));
        }
        if let Some(index) = pixels.iter().position(|&p| !(0.0..=max_intensity).contains(&p)) {
            return Err(ObjectiveError::PixelOutOfRange {
                index,
                value: pixels[index],
            });
        }
        Ok(Self {
            side,
            max_intensity,
            pixels,
        })
    }

    /// Builds an image from a flat vector of side `√len`, clamping values
    /// into `[0, m]` (non-finite values become 0).
    pub fn from_clamped(values: &[f64], max_intensity: f64) -> Result<Self, ObjectiveError> {
        let side = sqrt(values.len() as f64) as usize;
        let side = (side.saturating_sub(1)..=side + 1)
            .find(|s| s * s == values.len())
            .ok_or(ObjectiveError::NotSquare {
                side,
                len: values.len(),
            })?;
        let pixels = values
            .iter()
            .map(|&v| if v.is_finite() { v.clamp(0.0, max_intensity) } else { 0.0 })
            .collect();
        Self::new(side, max_intensity, pixels)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn max_intensity(&self) -> f64 {
        self.max_intensity
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn transpose(&self) -> Self {
        let h = self.side;
        let pixels = (0..h * h).map(|i| self.get(i % h, i / h)).collect();
        Self {
            side: h,
            max_intensity: self.max_intensity,
            pixels,
        }
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Self {
        let h = self.side;
        let pixels = (0..h * h).map(|i| self.get(i / h, h - 1 - i % h)).collect();
        Self {
            side: h,
            max_intensity: self.max_intensity,
            pixels,
        }
    }
}

/// Mean pixel intensity.
pub fn thickness(img: &ImageGray) -> f64 {
    img.pixels.iter().sum::<f64>() / img.pixels.len() as f64
}

/// Span `max − min` of indices whose line has an intensity strictly above m/2.
fn bright_span(img: &ImageGray, by_rows: bool) -> Option<usize> {
    let h = img.side;
    let half = img.max_intensity / 2.0;
    let qualifies = |i: usize| {
        (0..h).any(|j| {
            let v = if by_rows { img.get(i, j) } else { img.get(j, i) };
            v > half
        })
    };
    let first = (0..h).find(|&i| qualifies(i))?;
    let last = (0..h).rev().find(|&i| qualifies(i))?;
    Some(last - first)
}

/// `width / height` of the bright region.
pub fn aspect_ratio(img: &ImageGray) -> Result<f64, ObjectiveError> {
    let height = bright_span(img, true).ok_or(ObjectiveError::NoQualifyingRows)?;
    let width = bright_span(img, false).ok_or(ObjectiveError::NoQualifyingRows)?;
    if height == 0 {
        return Err(ObjectiveError::ZeroHeight);
    }
    Ok(width as f64 / height as f64)
}

/// Slope of the second principal component of the on-pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    /// `v₂_y / v₂_x`; `+∞` when the component is vertical.
    pub slope: f64,
    pub vertical: bool,
}

/// Binarises at `> m/2`, runs PCA over the on-pixel coordinates in an
/// x-right / y-up frame, and returns the slope of the minor axis. The
/// eigenvector sign is fixed so `v₂_x ≥ 0` (and `v₂_y ≥ 0` when `v₂_x = 0`).
pub fn rotation(img: &ImageGray) -> Result<Rotation, ObjectiveError> {
    let h = img.side;
    let half = img.max_intensity / 2.0;
    // integer moments keep the covariance exact, so symmetric shapes give
    // exactly zero cross terms
    let (mut n, mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0i128, 0i128, 0i128, 0i128, 0i128, 0i128);
    for i in (0..h * h).filter(|&i| img.pixels[i] > half) {
        let (x, y) = ((i % h) as i128, -((i / h) as i128));
        n += 1;
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
    }
    if n < 2 {
        return Err(ObjectiveError::RotationUndefined("fewer than two on-pixels"));
    }
    // n² times the coordinate covariance
    let a = (n * sxx - sx * sx) as f64;
    let b = (n * sxy - sx * sy) as f64;
    let c = (n * syy - sy * sy) as f64;

    let disc = sqrt(((a - c) / 2.0) * ((a - c) / 2.0) + b * b);
    if disc <= 1e-12 * (a + c) {
        return Err(ObjectiveError::RotationUndefined("isotropic coordinate covariance"));
    }
    let minor = (a + c) / 2.0 - disc;

    let (mut vx, mut vy) = if b == 0.0 {
        if a < c {
            (1.0, 0.0)
        } else {
            (0.0, 1.0)
        }
    } else {
        // two equivalent null vectors of (Σ − λI); take the better-conditioned one
        let u = (b, minor - a);
        let w = (minor - c, b);
        if u.0 * u.0 + u.1 * u.1 >= w.0 * w.0 + w.1 * w.1 {
            u
        } else {
            w
        }
    };
    if vx < 0.0 || (vx == 0.0 && vy < 0.0) {
        vx = -vx;
        vy = -vy;
    }
    if vx == 0.0 {
        return Ok(Rotation {
            slope: f64::INFINITY,
            vertical: true,
        });
    }
    Ok(Rotation {
        slope: vy / vx,
        vertical: false,
    })
}

/// Average squared Frobenius distance between image pairs, per pixel.
pub fn diversity(images: &[ImageGray]) -> Result<f64, ObjectiveError> {
    let t = images.len();
    if t < 2 {
        return Err(ObjectiveError::TooFewImages(t));
    }
    let side = images[0].side;
    if let Some((index, img)) = images.iter().enumerate().find(|(_, im)| im.side != side) {
        return Err(ObjectiveError::MixedSizes {
            index,
            expected: side,
            got: img.side,
        });
    }
    let mut total = 0.0;
    for i in 0..t {
        for j in i + 1..t {
            let d: f64 = images[i]
                .pixels
                .iter()
                .zip(&images[j].pixels)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            total += d / (side * side) as f64;
        }
    }
    Ok(2.0 * total / (t * (t - 1)) as f64)
}
