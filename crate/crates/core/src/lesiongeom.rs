//! Sub-pixel lesion contours and millimetre-unit shape descriptors.
//!
//! Contours are iso-lines of a real field sampled at pixel centres, so a pixel
//! at column `x`, row `y` sits at the point `(x, y)`. Outer boundaries come out
//! with positive shoelace area and hole boundaries with negative area.

use std::collections::HashMap;
use std::io::Write;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Closed polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    vertices: Vec<(f64, f64)>,
}

impl Contour {
    pub fn new(vertices: Vec<(f64, f64)>) -> Result<Self> {
        let mut v: Vec<(f64, f64)> = Vec::with_capacity(vertices.len());
        for p in vertices {
            if v.last() != Some(&p) {
                v.push(p);
            }
        }
        while v.len() > 1 && v.first() == v.last() {
            v.pop();
        }
        if v.len() < 3 {
            return Err(Error::Degenerate(format!(
                "contour needs at least 3 distinct vertices, got {}",
                v.len()
            )));
        }
        Ok(Self { vertices: v })
    }

    pub fn vertices(&self) -> &[(f64, f64)] {
        &self.vertices
    }

    /// Shoelace area in px²; positive for outer boundaries.
    pub fn signed_area_px(&self) -> f64 {
        let n = self.vertices.len();
        let mut s = 0.0;
        for i in 0..n {
            let (x0, y0) = self.vertices[i];
            let (x1, y1) = self.vertices[(i + 1) % n];
            s += x0 * y1 - x1 * y0;
        }
        0.5 * s
    }

    pub fn is_outer(&self) -> bool {
        self.signed_area_px() > 0.0
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&(x, y)| (x + dx, y + dy)).collect(),
        }
    }

    pub fn rotated(&self, radians: f64) -> Self {
        let (s, c) = radians.sin_cos();
        Self {
            vertices: self.vertices.iter().map(|&(x, y)| (c * x - s * y, s * x + c * y)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryDescriptor {
    pub area_mm2: f64,
    pub perimeter_mm: f64,
    pub rg_mm: f64,
    pub n_components: usize,
}

impl GeometryDescriptor {
    pub const EMPTY: Self = Self {
        area_mm2: 0.0,
        perimeter_mm: 0.0,
        rg_mm: 0.0,
        n_components: 0,
    };
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryParams {
    /// Iso-level of the contour.
    pub level: f64,
    /// Gaussian smoothing applied to the mask field before contouring, in px.
    /// Zero contours the raw binary field.
    pub smoothing_sigma: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        Self {
            level: 0.5,
            smoothing_sigma: 1.0,
        }
    }
}

pub fn perimeter_px(contour: &Contour) -> f64 {
    let v = &contour.vertices;
    let n = v.len();
    (0..n)
        .map(|i| {
            let (x0, y0) = v[i];
            let (x1, y1) = v[(i + 1) % n];
            (x1 - x0).hypot(y1 - y0)
        })
        .sum()
}

pub fn perimeter_mm(contour: &Contour, alpha: f64) -> f64 {
    alpha * perimeter_px(contour)
}

/// Net area of a set of contours; holes cancel against their outer boundary.
pub fn area_mm2(contours: &[Contour], alpha: f64) -> f64 {
    alpha * alpha * contours.iter().map(Contour::signed_area_px).sum::<f64>().abs()
}

/// Root-mean-square vertex distance to the vertex centroid.
pub fn radius_of_gyration_mm(contour: &Contour, alpha: f64) -> f64 {
    let v = &contour.vertices;
    let n = v.len() as f64;
    let xc = v.iter().map(|p| p.0).sum::<f64>() / n;
    let yc = v.iter().map(|p| p.1).sum::<f64>() / n;
    let ms = v.iter().map(|&(x, y)| (x - xc).powi(2) + (y - yc).powi(2)).sum::<f64>() / n;
    alpha * ms.sqrt()
}

pub fn marching_squares(mask: &BinaryMask, level: f64) -> Result<Vec<Contour>> {
    let field: Vec<f64> = mask.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    marching_squares_field(&field, mask.width(), mask.height(), level)
}

/// Iso-contours of a row-major `width × height` field. The field is treated
/// as surrounded by zeros so every region yields a closed contour.
pub fn marching_squares_field(field: &[f64], width: usize, height: usize, level: f64) -> Result<Vec<Contour>> {
    if field.len() != width * height {
        return Err(Error::Precondition(format!(
            "field has {} values, expected {width}×{height}",
            field.len()
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Precondition(format!("contour level must lie in (0, 1), got {level}")));
    }
    let gw = width + 2;
    let gh = height + 2;
    let value = |i: usize, j: usize| -> f64 {
        if i == 0 || j == 0 || i > width || j > height {
            0.0
        } else {
            field[(j - 1) * width + (i - 1)]
        }
    };

    // edge key: (vertical, i, j) names the grid edge leaving (i, j) rightward or downward
    let point_on = |key: (bool, usize, usize)| -> (f64, f64) {
        let (vertical, i, j) = key;
        let a = value(i, j);
        let b = if vertical { value(i, j + 1) } else { value(i + 1, j) };
        let t = (level - a) / (b - a);
        let (x, y) = (i as f64 - 1.0, j as f64 - 1.0);
        if vertical {
            (x, y + t)
        } else {
            (x + t, y)
        }
    };

    let mut segments: Vec<((bool, usize, usize), (bool, usize, usize))> = Vec::new();
    for j in 0..gh - 1 {
        for i in 0..gw - 1 {
            let corners = [value(i, j), value(i + 1, j), value(i + 1, j + 1), value(i, j + 1)];
            let inside = corners.map(|c| c > level);
            if inside.iter().all(|&b| b) || inside.iter().all(|&b| !b) {
                continue;
            }
            // cell edges clockwise on screen: top, right, bottom, left
            let edges = [(false, i, j), (true, i + 1, j), (false, i, j + 1), (true, i, j)];
            // crossing k lies on edge k; exits go from an inside corner to an outside one
            let mut crossings: Vec<(usize, bool)> = Vec::with_capacity(4);
            for k in 0..4 {
                let (a, b) = (inside[k], inside[(k + 1) % 4]);
                if a != b {
                    crossings.push((k, a));
                }
            }
            let centre_inside = corners.iter().sum::<f64>() / 4.0 > level;
            let m = crossings.len();
            for (idx, &(k, exit)) in crossings.iter().enumerate() {
                if !exit {
                    continue;
                }
                let partner = if m == 2 || centre_inside {
                    crossings[(idx + 1) % m]
                } else {
                    crossings[(idx + m - 1) % m]
                };
                segments.push((edges[k], edges[partner.0]));
            }
        }
    }

    let mut by_start: HashMap<(bool, usize, usize), usize> = HashMap::with_capacity(segments.len());
    for (s, seg) in segments.iter().enumerate() {
        by_start.insert(seg.0, s);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    for first in 0..segments.len() {
        if used[first] {
            continue;
        }
        let mut pts = Vec::new();
        let mut s = first;
        while !used[s] {
            used[s] = true;
            pts.push(point_on(segments[s].0));
            match by_start.get(&segments[s].1) {
                Some(&next) => s = next,
                None => break,
            }
        }
        if let Ok(c) = Contour::new(pts) {
            contours.push(c);
        }
    }
    Ok(contours)
}

/// Separable Gaussian blur of the mask, padded so the blurred support fits.
/// Returns the field together with its width, height and the padding offset.
fn smoothed_field(mask: &BinaryMask, sigma: f64) -> (Vec<f64>, usize, usize, usize) {
    let radius = (4.0 * sigma).ceil() as usize;
    let pad = radius + 1;
    let (w, h) = (mask.width() + 2 * pad, mask.height() + 2 * pad);
    let kernel: Vec<f64> = {
        let raw: Vec<f64> = (0..=2 * radius)
            .map(|i| {
                let d = i as f64 - radius as f64;
                (-d * d / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    };
    let mut field = vec![0.0; w * h];
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                field[(y + pad) * w + x + pad] = 1.0;
            }
        }
    }
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - radius as isize;
                if sx >= 0 && (sx as usize) < w {
                    acc += kv * field[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = y as isize + k as isize - radius as isize;
                if sy >= 0 && (sy as usize) < h {
                    acc += kv * tmp[sy as usize * w + x];
                }
            }
            field[y * w + x] = acc;
        }
    }
    (field, w, h, pad)
}

/// Contours of a mask as used by [`describe`], in mask pixel coordinates.
pub fn lesion_contours(mask: &BinaryMask, params: &GeometryParams) -> Result<Vec<Contour>> {
    if params.smoothing_sigma <= 0.0 {
        return marching_squares(mask, params.level);
    }
    let (field, w, h, pad) = smoothed_field(mask, params.smoothing_sigma);
    let contours = marching_squares_field(&field, w, h, params.level)?;
    Ok(contours.into_iter().map(|c| c.translated(-(pad as f64), -(pad as f64))).collect())
}

/// Outer contour with the longest perimeter; ties go to the larger area, then
/// to the contour whose top-left vertex comes first.
pub fn dominant_contour(contours: &[Contour]) -> Option<&Contour> {
    let top_left = |c: &Contour| {
        c.vertices
            .iter()
            .copied()
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.total_cmp(&b.0)))
            .unwrap()
    };
    contours.iter().filter(|c| c.is_outer()).max_by(|a, b| {
        perimeter_px(a)
            .total_cmp(&perimeter_px(b))
            .then(a.signed_area_px().total_cmp(&b.signed_area_px()))
            .then_with(|| {
                let (ta, tb) = (top_left(a), top_left(b));
                tb.1.total_cmp(&ta.1).then(tb.0.total_cmp(&ta.0))
            })
    })
}

pub fn describe(mask: &BinaryMask, rho: f64) -> Result<GeometryDescriptor> {
    describe_with(mask, rho, &GeometryParams::default())
}

/// Area and perimeter over all contours, radius of gyration over the dominant
/// one, with `alpha = 1 / rho` mm per pixel.
pub fn describe_with(mask: &BinaryMask, rho: f64, params: &GeometryParams) -> Result<GeometryDescriptor> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Calibration(rho));
    }
    let contours = lesion_contours(mask, params)?;
    let Some(dominant) = dominant_contour(&contours) else {
        return Ok(GeometryDescriptor::EMPTY);
    };
    let alpha = 1.0 / rho;
    Ok(GeometryDescriptor {
        area_mm2: area_mm2(&contours, alpha),
        perimeter_mm: contours.iter().map(|c| perimeter_mm(c, alpha)).sum(),
        rg_mm: radius_of_gyration_mm(dominant, alpha),
        n_components: contours.iter().filter(|c| c.is_outer()).count(),
    })
}

pub const DESCRIPTOR_HEADER: &str = "id,area_mm2,perimeter_mm,rg_mm,n_components";

pub fn write_descriptors<W: Write>(mut out: W, rows: &[(String, GeometryDescriptor)]) -> std::io::Result<()> {
    writeln!(out, "{DESCRIPTOR_HEADER}")?;
    for (id, d) in rows {
        writeln!(out, "{id},{},{},{},{}", d.area_mm2, d.perimeter_mm, d.rg_mm, d.n_components)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Contour {
        Contour::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap()
    }

    #[test]
    fn square_descriptors() {
        let c = square();
        assert_eq!(perimeter_px(&c), 40.0);
        assert!((perimeter_mm(&c, 0.1) - 4.0).abs() < 1e-12);
        assert!((area_mm2(std::slice::from_ref(&c), 0.1) - 1.0).abs() < 1e-12);
        assert!((radius_of_gyration_mm(&c, 0.1) - 0.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn degenerate_contours_are_rejected() {
        assert!(Contour::new(vec![(0.0, 0.0), (1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]).is_err());
    }

    #[test]
    fn empty_mask_has_no_contours() {
        let m = BinaryMask::new(8, 8).unwrap();
        assert!(marching_squares(&m, 0.5).unwrap().is_empty());
        assert_eq!(describe(&m, 10.0).unwrap(), GeometryDescriptor::EMPTY);
    }

    #[test]
    fn non_positive_rho_is_a_calibration_error() {
        let m = BinaryMask::new(4, 4).unwrap();
        assert!(matches!(describe(&m, 0.0), Err(Error::Calibration(_))));
        assert!(matches!(describe(&m, -1.0), Err(Error::Calibration(_))));
    }

    #[test]
    fn single_pixel_is_a_diamond() {
        let m = BinaryMask::from_fn(3, 3, |x, y| x == 1 && y == 1).unwrap();
        let cs = marching_squares(&m, 0.5).unwrap();
        assert_eq!(cs.len(), 1);
        assert!((cs[0].signed_area_px() - 0.5).abs() < 1e-12);
    }
}
