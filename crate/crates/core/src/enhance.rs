//! Global histogram equalization.
//!
//! Each level `v` maps to
//! `round((cdf(v) - cdf_min) / (W*H - cdf_min) * (N - 1))`, where `cdf_min`
//! is the smallest nonzero cumulative count. Rounding is half-up, evaluated in
//! exact integer arithmetic so every platform produces the same table.

use crate::imageio::GrayImage;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub cdf: Vec<u64>,
    pub cdf_min: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.cdf.last().copied().unwrap_or(0)
    }
}

pub fn histogram(img: &GrayImage) -> Histogram {
    let mut counts = vec![0u64; img.levels() as usize];
    for &p in img.pixels() {
        counts[p as usize] += 1;
    }
    let cdf: Vec<u64> = counts
        .iter()
        .scan(0u64, |acc, &c| {
            *acc += c;
            Some(*acc)
        })
        .collect();
    // the first occupied level has the smallest nonzero cdf
    let cdf_min = counts
        .iter()
        .position(|&c| c > 0)
        .map(|v| cdf[v])
        .unwrap_or(0);
    Histogram {
        counts,
        cdf,
        cdf_min,
    }
}

/// Level mapping `h(v)`, or `None` for a constant image (zero denominator).
pub fn equalization_table(hist: &Histogram, levels: u32) -> Option<Vec<u16>> {
    let total = hist.total();
    let den = u128::from(total - hist.cdf_min);
    if den == 0 {
        return None;
    }
    let top = u128::from(levels - 1);
    let table = hist
        .cdf
        .iter()
        .map(|&c| {
            // levels below the first occupied one never occur in the image
            let num = u128::from(c.saturating_sub(hist.cdf_min));
            ((2 * num * top + den) / (2 * den)) as u16
        })
        .collect();
    Some(table)
}

/// Equalizes an image. A constant image is returned unchanged.
pub fn equalize(img: &GrayImage) -> GrayImage {
    let hist = histogram(img);
    match equalization_table(&hist, img.levels()) {
        Some(table) => img.map_levels(&table),
        None => img.clone(),
    }
}
