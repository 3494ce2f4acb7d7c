//! Synthetic ruler mask scenes with exactly known pixels-per-millimetre.
//!
//! Each scene is rendered as a horizontal ruler with one tick per millimetre,
//! then pushed through a fixed sequence of stochastic transforms. Alongside the
//! binary raster we carry a label raster (tick / other ink / background) that is
//! resampled with the same nearest-neighbour maps, so the number of tick pixels
//! that survive every transform can be counted exactly.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::BinaryMask;

/// Number of millimetre marker glyphs that can be overlaid on a ruler.
pub const MM_MARKER_COUNT: u8 = 8;

const LABEL_BG: u8 = 0;
const LABEL_TICK: u8 = 1;
const LABEL_INK: u8 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct RulerTemplate {
    pub template_id: u8,
    /// Pixels between consecutive 1 mm ticks at unit scale.
    pub tick_spacing_px: f64,
    pub tick_len_px: f64,
    pub major_tick_len_px: f64,
    /// Every n-th tick is drawn with the major length.
    pub major_every: usize,
    pub tick_thickness_px: usize,
    /// Draw the long edge line the ticks hang from.
    pub backbone: bool,
    /// Ticks extend on both sides of the backbone.
    pub double_sided: bool,
    /// Index of the overlaid millimetre marker, if any.
    pub mm_marker: Option<u8>,
}

impl RulerTemplate {
    pub fn has_mm_marker(&self) -> bool {
        self.mm_marker.is_some()
    }

    fn validate(&self) -> Result<()> {
        if !(self.tick_spacing_px > self.tick_thickness_px as f64) || self.tick_thickness_px == 0 {
            return Err(Error::Config(format!(
                "template {}: tick spacing {} must exceed thickness {}",
                self.template_id, self.tick_spacing_px, self.tick_thickness_px
            )));
        }
        Ok(())
    }
}

/// The seven ruler designs. Template 0 is the realistic one that dominates sampling.
pub fn default_catalog() -> Vec<RulerTemplate> {
    let t = |id, len, major, every, thick, backbone, double| RulerTemplate {
        template_id: id,
        tick_spacing_px: 10.0,
        tick_len_px: len,
        major_tick_len_px: major,
        major_every: every,
        tick_thickness_px: thick,
        backbone,
        double_sided: double,
        mm_marker: None,
    };
    vec![
        t(0, 12.0, 24.0, 5, 2, true, false),
        t(1, 12.0, 24.0, 10, 2, true, false),
        t(2, 8.0, 16.0, 5, 2, true, true),
        t(3, 16.0, 28.0, 5, 3, true, false),
        t(4, 12.0, 20.0, 5, 2, false, false),
        t(5, 10.0, 22.0, 10, 3, true, true),
        t(6, 14.0, 14.0, 1, 2, false, false),
    ]
}

/// Template 0 with probability 1/2, the rest uniformly; a millimetre marker
/// is attached with probability 1/5.
pub fn sample_template<R: Rng + ?Sized>(rng: &mut R, catalog: &[RulerTemplate]) -> Result<RulerTemplate> {
    if catalog.is_empty() {
        return Err(Error::Config("ruler catalog is empty".into()));
    }
    let u: f64 = rng.random();
    let idx = if u < 0.5 || catalog.len() == 1 {
        0
    } else {
        let others = catalog.len() - 1;
        1 + (((u - 0.5) * 2.0 * others as f64) as usize).min(others - 1)
    };
    let mut template = catalog[idx].clone();
    template.mm_marker = if rng.random::<f64>() < 0.2 {
        Some(rng.random_range(0..MM_MARKER_COUNT))
    } else {
        None
    };
    Ok(template)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisParams {
    pub width: usize,
    pub height: usize,
    /// Range the per-scene base tick spacing (px per mm at unit scale) is drawn from.
    pub spacing_range: (f64, f64),
    /// Full ruler length as a fraction of the shorter canvas side.
    pub ruler_extent: f64,
    pub crop_range: (f64, f64),
    pub occlusion_prob: f64,
    /// Per-pixel flip probability is drawn uniformly from `[0, noise_max]`.
    pub noise_max: f64,
    pub rotation_prob: f64,
    pub scale_range: (f64, f64),
    pub blur_mean: f64,
    pub blur_std: f64,
    pub blur_clip: (f64, f64),
    pub min_survival: f64,
    pub max_attempts: usize,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            spacing_range: (6.0, 20.0),
            ruler_extent: 0.8,
            crop_range: (0.3, 1.0),
            occlusion_prob: 0.5,
            noise_max: 0.02,
            rotation_prob: 0.5,
            scale_range: (0.8, 1.2),
            blur_mean: 2.0,
            blur_std: 1.5,
            blur_clip: (0.5, 5.5),
            min_survival: 0.2,
            max_attempts: 100,
        }
    }
}

/// What was done to a scene, in application order.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformRecord {
    pub crop_fraction: f64,
    /// Top-left corner of the placed ruler segment's bounding box.
    pub position: (usize, usize),
    /// 0 when the rotation step was skipped.
    pub rotation_deg: f64,
    pub scale_factor: f64,
    pub blur_sigma: f64,
    pub noise_level: f64,
    pub occluded: bool,
    /// Vignette circle `(cx, cy, radius)` when occluded.
    pub occlusion: Option<(f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RulerScene {
    pub mask: BinaryMask,
    pub rho_true: f64,
    pub template_id: u8,
    pub mm_marker: Option<u8>,
    pub tick_spacing_px: f64,
    pub transforms: TransformRecord,
    pub seed: u64,
    pub pre_transform_tick_pixels: usize,
    pub surviving_tick_pixels: usize,
    pub attempts: usize,
}

/// Intermediate rasters kept for verification.
#[derive(Debug, Clone)]
pub struct SceneTrace {
    /// Tick pixels of the placed, cropped ruler before any degradation.
    pub pre_transform_ticks: BinaryMask,
}

/// True iff at least 20% of the pre-transform tick pixels survive.
pub fn accept_scene(surviving_tick_pixels: usize, pre_transform_tick_pixels: usize) -> bool {
    accept_with(surviving_tick_pixels, pre_transform_tick_pixels, 0.2)
}

fn accept_with(surviving: usize, pre: usize, min_fraction: f64) -> bool {
    pre > 0 && surviving as f64 >= min_fraction * pre as f64 - 1e-9 * pre as f64
}

pub fn synthesize_scene(seed: u64, params: &SynthesisParams) -> Result<RulerScene> {
    synthesize_scene_traced(seed, params).map(|(scene, _)| scene)
}

pub fn synthesize_scene_traced(seed: u64, params: &SynthesisParams) -> Result<(RulerScene, SceneTrace)> {
    validate_params(params)?;
    let catalog = default_catalog();
    for t in &catalog {
        t.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last_reason = String::from("no attempt made");
    for attempt in 1..=params.max_attempts {
        match attempt_scene(&mut rng, params, &catalog)? {
            Attempt::Accepted(mut scene, trace) => {
                scene.seed = seed;
                scene.attempts = attempt;
                return Ok((scene, trace));
            }
            Attempt::Rejected(reason) => last_reason = reason,
        }
    }
    Err(Error::Synthesis {
        attempts: params.max_attempts,
        reason: last_reason,
    })
}

/// Generates `n` scenes in parallel, scene `i` seeded by [`scene_seed`].
pub fn synthesize_batch(base_seed: u64, n: usize, params: &SynthesisParams) -> Result<Vec<RulerScene>> {
    (0..n)
        .into_par_iter()
        .map(|i| synthesize_scene(scene_seed(base_seed, i as u64), params))
        .collect()
}

/// Decorrelated per-scene seed (SplitMix64 finalizer).
pub fn scene_seed(base_seed: u64, index: u64) -> u64 {
    let mut z = base_seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn validate_params(p: &SynthesisParams) -> Result<()> {
    let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
    if p.width < 16 || p.height < 16 {
        return Err(Error::Config("canvas must be at least 16x16".into()));
    }
    if !ordered(p.spacing_range) || p.spacing_range.0 <= 3.0 {
        return Err(Error::Config("spacing range must be ordered and above 3 px".into()));
    }
    if !ordered(p.crop_range) || p.crop_range.0 <= 0.0 || p.crop_range.1 > 1.0 {
        return Err(Error::Config("crop range must lie in (0, 1]".into()));
    }
    if !ordered(p.scale_range) || p.scale_range.0 <= 0.0 {
        return Err(Error::Config("scale range must be positive".into()));
    }
    if !ordered(p.blur_clip) || p.blur_clip.0 < 0.0 {
        return Err(Error::Config("blur clip must be ordered and non-negative".into()));
    }
    if p.max_attempts == 0 {
        return Err(Error::Config("max_attempts must be positive".into()));
    }
    Ok(())
}

enum Attempt {
    Accepted(RulerScene, SceneTrace),
    Rejected(String),
}

struct Canvas {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    labels: Vec<u8>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
            labels: vec![LABEL_BG; width * height],
        }
    }

    fn fill_rect(&mut self, x0: i64, y0: i64, w: i64, h: i64, label: u8) {
        for y in y0.max(0)..(y0 + h).min(self.height as i64) {
            for x in x0.max(0)..(x0 + w).min(self.width as i64) {
                let i = y as usize * self.width + x as usize;
                self.bits[i] = true;
                // ticks win over other ink where they overlap
                if self.labels[i] != LABEL_TICK {
                    self.labels[i] = label;
                }
            }
        }
    }

    fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    fn surviving_ticks(&self) -> usize {
        self.bits
            .iter()
            .zip(&self.labels)
            .filter(|(&b, &l)| b && l == LABEL_TICK)
            .count()
    }

    /// Nearest-neighbour resampling: `out(p) = in(round(inverse(p)))`.
    fn resample(&mut self, inverse: impl Fn(f64, f64) -> (f64, f64)) {
        let (w, h) = (self.width, self.height);
        let mut bits = vec![false; w * h];
        let mut labels = vec![LABEL_BG; w * h];
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = inverse(x as f64, y as f64);
                let (sx, sy) = (sx.round(), sy.round());
                if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                    let src = sy as usize * w + sx as usize;
                    bits[y * w + x] = self.bits[src];
                    labels[y * w + x] = self.labels[src];
                }
            }
        }
        self.bits = bits;
        self.labels = labels;
    }

    fn centre(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }
}

/// Inverse map of a rotation by `deg` about `centre`.
pub fn rotation_inverse(centre: (f64, f64), deg: f64) -> impl Fn(f64, f64) -> (f64, f64) {
    let (s, c) = deg.to_radians().sin_cos();
    move |x, y| {
        let (dx, dy) = (x - centre.0, y - centre.1);
        (c * dx + s * dy + centre.0, -s * dx + c * dy + centre.1)
    }
}

/// Inverse map of an isotropic scaling by `k` about `centre`.
pub fn scale_inverse(centre: (f64, f64), k: f64) -> impl Fn(f64, f64) -> (f64, f64) {
    move |x, y| ((x - centre.0) / k + centre.0, (y - centre.1) / k + centre.1)
}

fn attempt_scene<R: Rng>(rng: &mut R, p: &SynthesisParams, catalog: &[RulerTemplate]) -> Result<Attempt> {
    let mut template = sample_template(rng, catalog)?;
    template.tick_spacing_px = rng.random_range(p.spacing_range.0..=p.spacing_range.1);
    let spacing = template.tick_spacing_px;
    let thick = template.tick_thickness_px as f64;

    let full_mm = ((p.ruler_extent * p.width.min(p.height) as f64) / spacing).floor().max(2.0) as usize;
    let full_len = full_mm as f64 * spacing;

    // crop a contiguous segment
    let crop_fraction = rng.random_range(p.crop_range.0..=p.crop_range.1);
    let seg_len = crop_fraction * full_len;
    let seg_start = rng.random_range(0.0..=(full_len - seg_len));
    let ticks: Vec<(usize, f64)> = (0..=full_mm)
        .map(|k| (k, k as f64 * spacing - seg_start))
        .filter(|&(_, pos)| pos >= 0.0 && pos <= seg_len)
        .collect();

    // vertical layout relative to the bounding box top
    let long = template.major_tick_len_px.max(template.tick_len_px);
    let marker_band = if template.mm_marker.is_some() { 14.0 } else { 0.0 };
    let upper = if template.double_sided { long } else { 0.0 };
    let backbone_y = marker_band + upper;
    let box_h = (backbone_y + thick + long).ceil() as usize;
    let box_w = (seg_len + thick).ceil() as usize + 1;
    if box_w + 2 >= p.width || box_h + 2 >= p.height {
        return Ok(Attempt::Rejected("ruler segment larger than canvas".into()));
    }

    // place at a uniform random position
    let px = rng.random_range(0..=(p.width - box_w - 1));
    let py = rng.random_range(0..=(p.height - box_h - 1));
    let mut canvas = Canvas::new(p.width, p.height);
    let (ox, oy) = (px as f64, py as f64);
    let t = template.tick_thickness_px as i64;

    if template.backbone {
        canvas.fill_rect(
            ox as i64,
            (oy + backbone_y).round() as i64,
            (seg_len + thick).round() as i64,
            t,
            LABEL_INK,
        );
    }
    for &(k, pos) in &ticks {
        let major = template.major_every > 0 && k % template.major_every == 0;
        let len = if major { template.major_tick_len_px } else { template.tick_len_px };
        let x = (ox + pos).round() as i64;
        let top = if template.double_sided { oy + backbone_y - len } else { oy + backbone_y };
        let h = if template.double_sided { 2.0 * len + thick } else { len + thick };
        canvas.fill_rect(x, top.round() as i64, t, h.round() as i64, LABEL_TICK);
    }
    if let Some(kind) = template.mm_marker {
        draw_marker(&mut canvas, kind, ox + 2.0, oy, spacing, t);
    }

    let pre = canvas.count_label(LABEL_TICK);
    if pre == 0 {
        return Ok(Attempt::Rejected("cropped segment contains no ticks".into()));
    }
    let pre_mask = BinaryMask::from_bits(
        p.width,
        p.height,
        canvas.labels.iter().map(|&l| l == LABEL_TICK).collect(),
    )?;

    // circular vignette: everything outside the circle is blacked out
    let occluded = rng.random::<f64>() < p.occlusion_prob;
    let occlusion = if occluded {
        let (w, h) = (p.width as f64, p.height as f64);
        let cx = w / 2.0 + rng.random_range(-0.1..=0.1) * w;
        let cy = h / 2.0 + rng.random_range(-0.1..=0.1) * h;
        let r = rng.random_range(0.4..=0.75) * w.min(h);
        for y in 0..p.height {
            for x in 0..p.width {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                if dx * dx + dy * dy > r * r {
                    canvas.bits[y * p.width + x] = false;
                }
            }
        }
        Some((cx, cy, r))
    } else {
        None
    };

    let noise_level = rng.random_range(0.0..=p.noise_max);
    for b in canvas.bits.iter_mut() {
        if rng.random::<f64>() < noise_level {
            *b = !*b;
        }
    }

    let rotation_deg = if rng.random::<f64>() < p.rotation_prob {
        rng.random_range(0.0..360.0)
    } else {
        0.0
    };
    if rotation_deg != 0.0 {
        let inv = rotation_inverse(canvas.centre(), rotation_deg);
        canvas.resample(inv);
    }

    let scale_factor = rng.random_range(p.scale_range.0..=p.scale_range.1);
    let inv = scale_inverse(canvas.centre(), scale_factor);
    canvas.resample(inv);

    let sigma_dist = Normal::new(p.blur_mean, p.blur_std.max(0.0))
        .map_err(|e| Error::Config(format!("blur distribution: {e}")))?;
    let blur_sigma = sigma_dist.sample(rng).clamp(p.blur_clip.0, p.blur_clip.1);
    canvas.bits = blur_and_threshold(&canvas.bits, p.width, p.height, blur_sigma);

    let surviving = canvas.surviving_ticks();
    if !accept_with(surviving, pre, p.min_survival) {
        return Ok(Attempt::Rejected(format!(
            "only {surviving} of {pre} tick pixels survived"
        )));
    }

    let scene = RulerScene {
        mask: BinaryMask::from_bits(p.width, p.height, canvas.bits)?,
        rho_true: spacing * scale_factor,
        template_id: template.template_id,
        mm_marker: template.mm_marker,
        tick_spacing_px: spacing,
        transforms: TransformRecord {
            crop_fraction,
            position: (px, py),
            rotation_deg,
            scale_factor,
            blur_sigma,
            noise_level,
            occluded,
            occlusion,
        },
        seed: 0,
        pre_transform_tick_pixels: pre,
        surviving_tick_pixels: surviving,
        attempts: 0,
    };
    Ok(Attempt::Accepted(
        scene,
        SceneTrace {
            pre_transform_ticks: pre_mask,
        },
    ))
}

/// Marker glyphs: kinds 0-3 are end-capped brackets, 4-7 solid bars, spanning 1-4 mm.
fn draw_marker(canvas: &mut Canvas, kind: u8, x: f64, y: f64, spacing: f64, t: i64) {
    let span = ((kind % 4) as f64 + 1.0) * spacing;
    let (x0, y0) = (x.round() as i64, y.round() as i64);
    let w = span.round() as i64;
    if kind < 4 {
        canvas.fill_rect(x0, y0 + 4, w, t, LABEL_INK);
        canvas.fill_rect(x0, y0, t, 10, LABEL_INK);
        canvas.fill_rect(x0 + w - t, y0, t, 10, LABEL_INK);
    } else {
        canvas.fill_rect(x0, y0 + 2, w, 6, LABEL_INK);
    }
}

/// Separable Gaussian blur with zero boundary, then re-binarization at 0.5.
pub fn blur_and_threshold(bits: &[bool], width: usize, height: usize, sigma: f64) -> Vec<bool> {
    let kernel = gaussian_kernel(sigma);
    let r = (kernel.len() / 2) as isize;
    let src: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut tmp = vec![0.0; width * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = x as isize + k as isize - r;
                if sx >= 0 && (sx as usize) < width {
                    acc += kv * row[sx as usize];
                }
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![false; width * height];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sy = y as isize + k as isize - r;
                if sy >= 0 && (sy as usize) < height {
                    acc += kv * tmp[sy as usize * width + x];
                }
            }
            out[y * width + x] = acc >= 0.5;
        }
    }
    out
}

/// Normalized Gaussian taps truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (4.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

pub const MANIFEST_HEADER: &str =
    "scene_id,seed,rho_true,crop_fraction,rotation_deg,scale_factor,blur_sigma,noise_level,occluded";

pub fn write_manifest<W: Write>(mut out: W, scenes: &[RulerScene]) -> std::io::Result<()> {
    writeln!(out, "{MANIFEST_HEADER}")?;
    for (i, s) in scenes.iter().enumerate() {
        let t = &s.transforms;
        writeln!(
            out,
            "{i},{},{},{},{},{},{},{},{}",
            s.seed,
            s.rho_true,
            t.crop_fraction,
            t.rotation_deg,
            t.scale_factor,
            t.blur_sigma,
            t.noise_level,
            u8::from(t.occluded)
        )?;
    }
    Ok(())
}

/// One manifest row: scene id, seed and ground-truth scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub scene_id: usize,
    pub seed: u64,
    pub rho_true: f64,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == MANIFEST_HEADER => {}
        other => {
            return Err(Error::format(
                path,
                1,
                format!("expected header {MANIFEST_HEADER:?}, found {:?}", other.unwrap_or("")),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 9 {
            return Err(Error::format(path, i + 2, format!("expected 9 fields, found {}", f.len())));
        }
        let bad = |what: &str| Error::format(path, i + 2, format!("unparsable {what}"));
        rows.push(ManifestRow {
            scene_id: f[0].parse().map_err(|_| bad("scene_id"))?,
            seed: f[1].parse().map_err(|_| bad("seed"))?,
            rho_true: f[2].parse().map_err(|_| bad("rho_true"))?,
        });
    }
    Ok(rows)
}
