use super::GrayImage;
use crate::error::{Error, Result};

/// Bilinear resize with half-pixel centers.
///
/// Output pixel `(x, y)` samples the source at
/// `((x + 0.5) * sw / tw - 0.5, (y + 0.5) * sh / th - 0.5)`, clamped to the
/// source grid; results are rounded half away from zero and clamped to the
/// image's level range.
pub fn resample(img: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidImage(format!(
            "target size must be positive, got {target_w}x{target_h}"
        )));
    }
    if target_w == img.width() && target_h == img.height() {
        return Ok(img.clone());
    }
    let (sw, sh) = (img.width(), img.height());
    let cols: Vec<(usize, usize, f64)> = (0..target_w)
        .map(|x| taps(x, sw as f64 / target_w as f64, sw))
        .collect();
    let max = f64::from(img.max_value());
    let src = img.pixels();
    let mut out = Vec::with_capacity(target_w * target_h);
    for y in 0..target_h {
        let (y0, y1, fy) = taps(y, sh as f64 / target_h as f64, sh);
        for &(x0, x1, fx) in &cols {
            let p = |xx: usize, yy: usize| f64::from(src[yy * sw + xx]);
            let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
            let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out.push(v.round().clamp(0.0, max) as u16);
        }
    }
    GrayImage::new(target_w, target_h, img.levels(), out)
}

/// Neighbouring source indices and the interpolation weight of the second.
fn taps(i: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = s.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, s - i0 as f64)
}
