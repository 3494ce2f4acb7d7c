//! Isotropic two-point correlation signatures of binary masks.
//!
//! The correlation map is computed with periodic boundaries through the
//! Fourier domain; since the mask is binary every entry of the raw map is an
//! integer pair count, which we round back to the nearest integer before
//! normalizing so the transform path reproduces exact pair counting.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Number of unit-pixel separation bins in a signature.
pub const SIGNATURE_BINS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct TpcfSignature {
    bins: Vec<f64>,
}

impl TpcfSignature {
    pub fn from_bins(bins: Vec<f64>) -> Result<Self> {
        if bins.len() != SIGNATURE_BINS {
            return Err(Error::Config(format!(
                "signature must have {SIGNATURE_BINS} bins, got {}",
                bins.len()
            )));
        }
        Ok(Self { bins })
    }

    pub fn bins(&self) -> &[f64] {
        &self.bins
    }

    /// Width of a bin in pixels.
    pub fn bin_separation_px(&self) -> f64 {
        1.0
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "bin,separation_px,xi2")?;
        for (k, v) in self.bins.iter().enumerate() {
            writeln!(out, "{k},{},{v}", k as f64 * self.bin_separation_px())?;
        }
        Ok(())
    }
}

/// Periodic autocorrelation normalized by the mask area, `map[dy][dx]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
}

impl CorrelationMap {
    pub fn at(&self, dx: usize, dy: usize) -> f64 {
        self.values[dy * self.width + dx]
    }
}

pub fn autocorrelate_periodic(mask: &BinaryMask) -> CorrelationMap {
    let (w, h) = (mask.width(), mask.height());
    let area = (w * h) as f64;
    let mut planner = FftPlanner::<f64>::new();
    let row_fwd = planner.plan_fft_forward(w);
    let col_fwd = planner.plan_fft_forward(h);
    let row_inv = planner.plan_fft_inverse(w);
    let col_inv = planner.plan_fft_inverse(h);

    let mut buf: Vec<Complex<f64>> = mask
        .bits()
        .iter()
        .map(|&b| Complex::new(if b { 1.0 } else { 0.0 }, 0.0))
        .collect();

    for row in buf.chunks_exact_mut(w) {
        row_fwd.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    transform_columns(&mut buf, w, h, &mut col, |c| col_fwd.process(c));

    for v in buf.iter_mut() {
        *v = Complex::new(v.norm_sqr(), 0.0);
    }

    for row in buf.chunks_exact_mut(w) {
        row_inv.process(row);
    }
    transform_columns(&mut buf, w, h, &mut col, |c| col_inv.process(c));

    // inverse transforms are unnormalized: divide by area once for the FFT
    // and once for the correlation's 1/A
    let values = buf
        .iter()
        .map(|v| (v.re / area).round().max(0.0) / area)
        .collect();
    CorrelationMap {
        width: w,
        height: h,
        values,
    }
}

fn transform_columns(
    buf: &mut [Complex<f64>],
    w: usize,
    h: usize,
    col: &mut [Complex<f64>],
    mut f: impl FnMut(&mut [Complex<f64>]),
) {
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        f(col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
}

/// Minimum-image offset along one periodic axis.
#[inline]
fn min_image(d: usize, n: usize) -> i64 {
    let d = d as i64;
    let n = n as i64;
    if d > n / 2 {
        d - n
    } else {
        d
    }
}

#[inline]
fn radial_bin(dx: i64, dy: i64) -> usize {
    (((dx * dx + dy * dy) as f64).sqrt()).round() as usize
}

/// Averages the map over rings of rounded minimum-image separation.
pub fn radial_profile(map: &CorrelationMap) -> Result<TpcfSignature> {
    if map.width < 2 || map.height < 2 {
        return Err(Error::Degenerate(format!(
            "correlation map {}x{} is smaller than 2x2",
            map.width, map.height
        )));
    }
    let mut sums = vec![0.0; SIGNATURE_BINS];
    let mut counts = vec![0usize; SIGNATURE_BINS];
    for dy in 0..map.height {
        let oy = min_image(dy, map.height);
        for dx in 0..map.width {
            let k = radial_bin(min_image(dx, map.width), oy);
            if k < SIGNATURE_BINS {
                sums[k] += map.at(dx, dy);
                counts[k] += 1;
            }
        }
    }
    let bins = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    TpcfSignature::from_bins(bins)
}

pub fn signature(mask: &BinaryMask) -> Result<TpcfSignature> {
    radial_profile(&autocorrelate_periodic(mask))
}

/// O(A^2) reference: enumerates every ordered pixel pair directly.
pub fn tpcf_bruteforce(mask: &BinaryMask) -> Result<TpcfSignature> {
    let (w, h) = (mask.width(), mask.height());
    if w < 2 || h < 2 {
        return Err(Error::Degenerate(format!("mask {w}x{h} is smaller than 2x2")));
    }
    let ones: Vec<(usize, usize)> = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| mask.get(x, y))
        .collect();

    // pair counts per periodic offset
    let mut pair_counts = vec![0u64; w * h];
    for &(x1, y1) in &ones {
        for &(x2, y2) in &ones {
            let dx = (x2 + w - x1) % w;
            let dy = (y2 + h - y1) % h;
            pair_counts[dy * w + dx] += 1;
        }
    }

    // number of offsets in each ring, enumerated over signed offsets
    let mut ring_sizes = vec![0usize; SIGNATURE_BINS];
    let mut ring_pairs = vec![0u64; SIGNATURE_BINS];
    let (lo_x, hi_x) = (-(((w - 1) / 2) as i64), (w / 2) as i64);
    let (lo_y, hi_y) = (-(((h - 1) / 2) as i64), (h / 2) as i64);
    for oy in lo_y..=hi_y {
        for ox in lo_x..=hi_x {
            let k = radial_bin(ox, oy);
            if k < SIGNATURE_BINS {
                ring_sizes[k] += 1;
                let dx = ox.rem_euclid(w as i64) as usize;
                let dy = oy.rem_euclid(h as i64) as usize;
                ring_pairs[k] += pair_counts[dy * w + dx];
            }
        }
    }
    let area = (w * h) as f64;
    let bins = ring_pairs
        .into_iter()
        .zip(ring_sizes)
        .map(|(p, n)| if n == 0 { 0.0 } else { p as f64 / area / n as f64 })
        .collect();
    TpcfSignature::from_bins(bins)
}
