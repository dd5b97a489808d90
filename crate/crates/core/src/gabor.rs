//! Gabor filter bank feature extraction.
//!
//! Kernels use the standard real Gabor form
//! `exp(-(x'^2 + gamma^2 y'^2) / (2 sigma^2)) * cos(2 pi x' / lambda + phi)`
//! with `x' = x cos(theta) + y sin(theta)` and `y' = -x sin(theta) + y cos(theta)`.
//! Magnitudes come from the even (`phi = 0`) and odd (`phi = pi/2`) kernels of
//! a quadrature pair. Convolution is spatial with symmetric (edge-repeating)
//! reflection at the borders.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature::{FeatureVector, Modality};
use crate::imageio::GrayImage;

/// Variance floor used when z-scoring each response.
pub const RESPONSE_VARIANCE_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaborParams {
    lambda: f64,
    theta: f64,
    phi: f64,
    sigma: f64,
    gamma: f64,
}

impl GaborParams {
    /// `theta` is folded into `[0, pi)`.
    pub fn new(lambda: f64, theta: f64, phi: f64, sigma: f64, gamma: f64) -> Result<Self> {
        for (name, v) in [("lambda", lambda), ("sigma", sigma), ("gamma", gamma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("gabor {name} must be positive, got {v}")));
            }
        }
        if !theta.is_finite() || !phi.is_finite() {
            return Err(Error::Config("gabor theta and phi must be finite".into()));
        }
        let mut theta = theta.rem_euclid(PI);
        if theta >= PI {
            theta = 0.0;
        }
        Ok(GaborParams {
            lambda,
            theta,
            phi,
            sigma,
            gamma,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn theta(&self) -> f64 {
        self.theta
    }
    pub fn phi(&self) -> f64 {
        self.phi
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_phi(&self, phi: f64) -> Self {
        GaborParams { phi, ..*self }
    }

    /// Rotated coordinates `(x', y')` of the offset `(x, y)`.
    pub fn rotate(&self, x: f64, y: f64) -> (f64, f64) {
        if self.theta == 0.0 {
            return (x, y);
        }
        let (s, c) = self.theta.sin_cos();
        (x * c + y * s, -x * s + y * c)
    }

    /// Kernel value at offset `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let (xr, yr) = self.rotate(x, y);
        let envelope =
            (-(xr * xr + self.gamma * self.gamma * yr * yr) / (2.0 * self.sigma * self.sigma)).exp();
        envelope * (2.0 * PI * xr / self.lambda + self.phi).cos()
    }
}

/// Square odd-sided real kernel indexed by offsets in `[-radius, radius]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    radius: usize,
    values: Vec<f64>,
}

impl Kernel {
    /// Row-major `(2r+1)^2` values; entry `(row, col)` is offset `(col - r, row - r)`.
    pub fn from_values(radius: usize, values: Vec<f64>) -> Result<Self> {
        let side = 2 * radius + 1;
        if values.len() != side * side {
            return Err(Error::Config(format!(
                "kernel of radius {radius} needs {} values, got {}",
                side * side,
                values.len()
            )));
        }
        Ok(Kernel { radius, values })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value at offset `(x, y)`.
    pub fn at(&self, x: isize, y: isize) -> f64 {
        let r = self.radius as isize;
        self.values[((y + r) as usize) * self.side() + (x + r) as usize]
    }

    fn flipped(&self) -> Vec<f64> {
        self.values.iter().rev().copied().collect()
    }
}

pub fn gabor_kernel(params: &GaborParams, radius: usize) -> Result<Kernel> {
    if radius == 0 {
        return Err(Error::Config("kernel radius must be at least 1".into()));
    }
    let r = radius as isize;
    let values = (-r..=r)
        .flat_map(|y| (-r..=r).map(move |x| (x, y)))
        .map(|(x, y)| params.eval(x as f64, y as f64))
        .collect();
    Ok(Kernel { radius, values })
}

/// One filter of a bank with its grid position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankFilter {
    pub scale: usize,
    pub orientation: usize,
    pub params: GaborParams,
}

/// Parameters of a scale x orientation grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BankSpec {
    pub scales: usize,
    pub orientations: usize,
    pub lambda0: f64,
    pub lambda_ratio: f64,
    pub sigma_over_lambda: f64,
    pub gamma: f64,
    pub kernel_radius_cap: usize,
}

impl Default for BankSpec {
    fn default() -> Self {
        BankSpec {
            scales: 5,
            orientations: 8,
            lambda0: 4.0,
            lambda_ratio: std::f64::consts::SQRT_2,
            sigma_over_lambda: 0.56,
            gamma: 0.5,
            kernel_radius_cap: 15,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    filters: Vec<BankFilter>,
    kernel_radius: usize,
}

impl FilterBank {
    pub fn filters(&self) -> &[BankFilter] {
        &self.filters
    }

    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn kernel_radius(&self) -> usize {
        self.kernel_radius
    }
}

/// Builds the bank in scale-major order. Every filter shares the radius
/// `ceil(3 sigma_max)`, limited by `kernel_radius_cap`.
pub fn build_bank(spec: &BankSpec) -> Result<FilterBank> {
    if spec.scales == 0 || spec.orientations == 0 {
        return Err(Error::Config("bank needs at least one scale and one orientation".into()));
    }
    if spec.kernel_radius_cap == 0 {
        return Err(Error::Config("kernel radius cap must be at least 1".into()));
    }
    let mut filters = Vec::with_capacity(spec.scales * spec.orientations);
    let mut sigma_max: f64 = 0.0;
    for s in 0..spec.scales {
        let lambda = spec.lambda0 * spec.lambda_ratio.powi(s as i32);
        let sigma = spec.sigma_over_lambda * lambda;
        sigma_max = sigma_max.max(sigma);
        for o in 0..spec.orientations {
            let theta = o as f64 * PI / spec.orientations as f64;
            filters.push(BankFilter {
                scale: s,
                orientation: o,
                params: GaborParams::new(lambda, theta, 0.0, sigma, spec.gamma)?,
            });
        }
    }
    let kernel_radius = ((3.0 * sigma_max).ceil() as usize).clamp(1, spec.kernel_radius_cap);
    Ok(FilterBank {
        filters,
        kernel_radius,
    })
}

/// Real-valued raster of the same geometry as its source image.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

/// Non-negative magnitude raster.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ResponseMap {
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

/// Symmetric reflection: `-1 -> 0`, `n -> n - 1`. Valid for overshoot up to `n`.
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i - 1
    } else if i >= n {
        2 * n - i - 1
    } else {
        i
    };
    j as usize
}

/// Image extended by `pad` reflected pixels on every side.
struct Padded {
    stride: usize,
    data: Vec<f64>,
}

impl Padded {
    fn new(src: &[f64], width: usize, height: usize, pad: usize) -> Self {
        let stride = width + 2 * pad;
        let mut data = Vec::with_capacity(stride * (height + 2 * pad));
        for py in 0..height + 2 * pad {
            let sy = reflect(py as isize - pad as isize, height);
            let row = &src[sy * width..(sy + 1) * width];
            for px in 0..stride {
                data.push(row[reflect(px as isize - pad as isize, width)]);
            }
        }
        Padded { stride, data }
    }

    /// Correlates the flipped kernel(s) with the window whose top-left corner
    /// is padded pixel `(x, y)`.
    #[inline]
    fn window_dot(&self, flipped: &[f64], side: usize, x: usize, y: usize) -> f64 {
        let mut acc = 0.0;
        for (ky, krow) in flipped.chunks_exact(side).enumerate() {
            let start = (y + ky) * self.stride + x;
            let irow = &self.data[start..start + side];
            acc += krow.iter().zip(irow).map(|(k, p)| k * p).sum::<f64>();
        }
        acc
    }

    #[inline]
    fn window_dot2(&self, a: &[f64], b: &[f64], side: usize, x: usize, y: usize) -> (f64, f64) {
        let (mut sa, mut sb) = (0.0, 0.0);
        for ky in 0..side {
            let start = (y + ky) * self.stride + x;
            let irow = &self.data[start..start + side];
            let ka = &a[ky * side..(ky + 1) * side];
            let kb = &b[ky * side..(ky + 1) * side];
            let mut ra = 0.0;
            let mut rb = 0.0;
            for i in 0..side {
                ra += ka[i] * irow[i];
                rb += kb[i] * irow[i];
            }
            sa += ra;
            sb += rb;
        }
        (sa, sb)
    }
}

fn check_kernel_fits(width: usize, height: usize, kernel: &Kernel) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage("empty image".into()));
    }
    let limit = 2 * width.min(height) + 1;
    if kernel.side() > limit {
        return Err(Error::Config(format!(
            "kernel side {} exceeds {limit} for a {width}x{height} image",
            kernel.side()
        )));
    }
    Ok(())
}

/// `out(x, y) = sum_{i,j} K(i, j) * img(x - i, y - j)` over a real raster.
pub fn convolve_real(src: &[f64], width: usize, height: usize, kernel: &Kernel) -> Result<RealImage> {
    if src.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            actual: src.len(),
        });
    }
    check_kernel_fits(width, height, kernel)?;
    let padded = Padded::new(src, width, height, kernel.radius());
    let flipped = kernel.flipped();
    let side = kernel.side();
    let values = (0..height)
        .flat_map(|y| (0..width).map(move |x| (x, y)))
        .map(|(x, y)| padded.window_dot(&flipped, side, x, y))
        .collect();
    Ok(RealImage {
        width,
        height,
        values,
    })
}

pub fn convolve(img: &GrayImage, kernel: &Kernel) -> Result<RealImage> {
    convolve_real(&img.to_f64(), img.width(), img.height(), kernel)
}

/// Prepared quadrature pair for one filter.
struct Quadrature {
    even: Vec<f64>,
    odd: Vec<f64>,
    side: usize,
}

impl Quadrature {
    fn new(params: &GaborParams, radius: usize) -> Result<Self> {
        let even = gabor_kernel(&params.with_phi(0.0), radius)?;
        let odd = gabor_kernel(&params.with_phi(FRAC_PI_2), radius)?;
        Ok(Quadrature {
            side: even.side(),
            even: even.flipped(),
            odd: odd.flipped(),
        })
    }

    fn magnitude(&self, padded: &Padded, x: usize, y: usize) -> f64 {
        let (e, o) = padded.window_dot2(&self.even, &self.odd, self.side, x, y);
        e.hypot(o)
    }
}

/// Per-pixel quadrature magnitude; `params.phi` is ignored.
pub fn magnitude_response(img: &GrayImage, params: &GaborParams, radius: usize) -> Result<ResponseMap> {
    let q = Quadrature::new(params, radius)?;
    check_kernel_fits(img.width(), img.height(), &gabor_kernel(params, radius)?)?;
    let padded = Padded::new(&img.to_f64(), img.width(), img.height(), radius);
    let (w, h) = (img.width(), img.height());
    let values = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| q.magnitude(&padded, x, y))
        .collect();
    Ok(ResponseMap {
        width: w,
        height: h,
        values,
    })
}

/// Row/column stride for a total reduction `factor`, which must be a perfect square.
pub fn downsample_stride(factor: usize) -> Result<usize> {
    if factor == 0 {
        return Err(Error::Config("downsample factor must be positive".into()));
    }
    let s = (factor as f64).sqrt().round() as usize;
    if s * s != factor {
        return Err(Error::Config(format!(
            "downsample factor {factor} is not a perfect square"
        )));
    }
    Ok(s)
}

/// Keeps rows and columns `0, s, 2s, ...` where `s = sqrt(factor)`.
pub fn downsample(map: &ResponseMap, factor: usize) -> Result<ResponseMap> {
    let stride = downsample_stride(factor)?;
    if stride > map.width.min(map.height) {
        return Err(Error::Config(format!(
            "downsample stride {stride} exceeds {}x{} map",
            map.width, map.height
        )));
    }
    let (w, h) = (map.width.div_ceil(stride), map.height.div_ceil(stride));
    let mut values = Vec::with_capacity(w * h);
    for y in (0..map.height).step_by(stride) {
        for x in (0..map.width).step_by(stride) {
            values.push(map.get(x, y));
        }
    }
    Ok(ResponseMap {
        width: w,
        height: h,
        values,
    })
}

/// Length of the vector [`extract_features`] produces.
pub fn feature_dim(bank: &FilterBank, width: usize, height: usize, factor: usize) -> Result<usize> {
    let s = downsample_stride(factor)?;
    Ok(bank.len() * width.div_ceil(s) * height.div_ceil(s))
}

fn zscore(values: &mut [f64]) {
    let n = values.len() as f64;
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        values.iter_mut().for_each(|v| *v = 0.0);
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.max(RESPONSE_VARIANCE_FLOOR).sqrt();
    values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
}

/// Concatenates each filter's downsampled, z-scored magnitude response in
/// bank order.
///
/// Only the retained grid positions are evaluated, which gives the same
/// numbers as `downsample(magnitude_response(..))`. Filters are processed in
/// parallel on the current rayon pool; output order never depends on it.
pub fn extract_features(
    img: &GrayImage,
    bank: &FilterBank,
    factor: usize,
    modality: Modality,
) -> Result<FeatureVector> {
    let stride = downsample_stride(factor)?;
    let (w, h) = (img.width(), img.height());
    if stride > w.min(h) {
        return Err(Error::Config(format!(
            "downsample stride {stride} exceeds {w}x{h} image"
        )));
    }
    let radius = bank.kernel_radius();
    let side = 2 * radius + 1;
    if side > 2 * w.min(h) + 1 {
        return Err(Error::Config(format!(
            "kernel side {side} exceeds {} for a {w}x{h} image",
            2 * w.min(h) + 1
        )));
    }
    let padded = Padded::new(&img.to_f64(), w, h, radius);
    let responses: Vec<Vec<f64>> = bank
        .filters()
        .par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let q = Quadrature::new(&f.params, radius)?;
            let mut out = Vec::with_capacity(w.div_ceil(stride) * h.div_ceil(stride));
            for y in (0..h).step_by(stride) {
                for x in (0..w).step_by(stride) {
                    out.push(q.magnitude(&padded, x, y));
                }
            }
            zscore(&mut out);
            Ok(out)
        })
        .collect::<Result<_>>()?;
    FeatureVector::new(modality, responses.concat())
}
