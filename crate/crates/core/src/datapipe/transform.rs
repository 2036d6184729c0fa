use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Normalization;
use crate::error::{Error, Result};
use crate::tensor_core::Tensor;

/// Center crop, random training crop and network input side lengths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropGeometry {
    pub center: u32,
    pub crop: u32,
    pub output: u32,
}

impl Default for CropGeometry {
    fn default() -> Self {
        CropGeometry {
            center: 240,
            crop: 235,
            output: 224,
        }
    }
}

impl CropGeometry {
    /// The default proportions (240 of 256, 235 of 240) applied to a
    /// smaller source.
    pub fn scaled(source_side: u32, output: u32) -> Self {
        let center = (source_side as f64 * 240.0 / 256.0).round() as u32;
        let crop = (center as f64 * 235.0 / 240.0).round() as u32;
        CropGeometry { center, crop, output }
    }

    pub fn validate(&self, width: u32, height: u32) -> Result<()> {
        if self.crop == 0 || self.output == 0 || self.crop > self.center {
            return Err(Error::config(format!("inconsistent crop geometry {self:?}")));
        }
        if width < self.center || height < self.center {
            return Err(Error::config(format!(
                "source {width}x{height} is smaller than the {0}x{0} center crop",
                self.center
            )));
        }
        Ok(())
    }

    /// Top-left corner of the center crop.
    pub fn center_origin(&self, width: u32, height: u32) -> (i64, i64) {
        (((width - self.center) / 2) as i64, ((height - self.center) / 2) as i64)
    }
}

/// Color jitter ranges: factors uniform in `[1 - p, 1 + p]`, hue shift
/// uniform in `[-hue, hue]` of the hue circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JitterStrength {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl Default for JitterStrength {
    fn default() -> Self {
        JitterStrength {
            brightness: 0.5,
            contrast: 0.5,
            saturation: 0.5,
            hue: 0.1,
        }
    }
}

impl JitterStrength {
    pub fn none() -> Self {
        JitterStrength {
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
        }
    }
}

/// One draw of the training augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    /// Offset of the random crop inside the center crop.
    pub crop_offset: (u32, u32),
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue: f64,
}

impl AugmentParams {
    /// Centered crop and no color change.
    pub fn identity(geom: &CropGeometry) -> Self {
        let m = (geom.center - geom.crop) / 2;
        AugmentParams {
            crop_offset: (m, m),
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
        }
    }

    pub fn draw<R: Rng + ?Sized>(geom: &CropGeometry, jitter: &JitterStrength, rng: &mut R) -> Self {
        let slack = geom.center - geom.crop;
        let mut factor = |p: f64| if p > 0.0 { rng.gen_range(1.0 - p..=1.0 + p).max(0.0) } else { 1.0 };
        let brightness = factor(jitter.brightness);
        let contrast = factor(jitter.contrast);
        let saturation = factor(jitter.saturation);
        let hue = if jitter.hue > 0.0 {
            rng.gen_range(-jitter.hue..=jitter.hue)
        } else {
            0.0
        };
        AugmentParams {
            crop_offset: (rng.gen_range(0..=slack), rng.gen_range(0..=slack)),
            brightness,
            contrast,
            saturation,
            hue,
        }
    }
}

/// Planar `3 x size x size` crop scaled to `[0, 1]`; pixels outside the
/// source are zero.
pub fn crop_planar(img: &RgbImage, x0: i64, y0: i64, size: u32, pixel_scale: f64) -> Vec<f32> {
    let s = size as usize;
    let (w, h) = img.dimensions();
    let scale = (1.0 / pixel_scale) as f32;
    let mut out = vec![0.0f32; 3 * s * s];
    for y in 0..s {
        let sy = y0 + y as i64;
        if sy < 0 || sy >= h as i64 {
            continue;
        }
        for x in 0..s {
            let sx = x0 + x as i64;
            if sx < 0 || sx >= w as i64 {
                continue;
            }
            let p = img.get_pixel(sx as u32, sy as u32).0;
            for c in 0..3 {
                out[(c * s + y) * s + x] = p[c] as f32 * scale;
            }
        }
    }
    out
}

/// Bilinear resize of planar channels with half-pixel centers.
pub fn resize_bilinear(src: &[f32], channels: usize, from: usize, to: usize) -> Vec<f32> {
    if from == to {
        return src.to_vec();
    }
    let scale = from as f32 / to as f32;
    let taps: Vec<(usize, usize, f32)> = (0..to)
        .map(|d| {
            let s = ((d as f32 + 0.5) * scale - 0.5).clamp(0.0, (from - 1) as f32);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(from - 1);
            (i0, i1, s - i0 as f32)
        })
        .collect();
    let mut out = vec![0.0f32; channels * to * to];
    for c in 0..channels {
        let plane = &src[c * from * from..(c + 1) * from * from];
        for (y, &(y0, y1, fy)) in taps.iter().enumerate() {
            for (x, &(x0, x1, fx)) in taps.iter().enumerate() {
                let top = plane[y0 * from + x0] * (1.0 - fx) + plane[y0 * from + x1] * fx;
                let bottom = plane[y1 * from + x0] * (1.0 - fx) + plane[y1 * from + x1] * fx;
                out[(c * to + y) * to + x] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = (h6.floor() as i32).rem_euclid(6);
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    }
}

/// Brightness, contrast, saturation, then hue, each clamped to `[0, 1]`.
pub fn color_jitter(planar: &mut [f32], size: usize, p: &AugmentParams) {
    let n = size * size;
    let (rs, rest) = planar.split_at_mut(n);
    let (gs, bs) = rest.split_at_mut(n);
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if p.brightness != 1.0 {
        let f = p.brightness as f32;
        for v in rs.iter_mut().chain(gs.iter_mut()).chain(bs.iter_mut()) {
            *v = clamp(*v * f);
        }
    }
    if p.contrast != 1.0 {
        let f = p.contrast as f32;
        let mean = (0..n).map(|i| gray(rs[i], gs[i], bs[i]) as f64).sum::<f64>() as f32 / n as f32;
        for v in rs.iter_mut().chain(gs.iter_mut()).chain(bs.iter_mut()) {
            *v = clamp(f * *v + (1.0 - f) * mean);
        }
    }
    if p.saturation != 1.0 {
        let f = p.saturation as f32;
        for i in 0..n {
            let g = gray(rs[i], gs[i], bs[i]);
            rs[i] = clamp(f * rs[i] + (1.0 - f) * g);
            gs[i] = clamp(f * gs[i] + (1.0 - f) * g);
            bs[i] = clamp(f * bs[i] + (1.0 - f) * g);
        }
    }
    if p.hue != 0.0 {
        for i in 0..n {
            let (h, s, v) = rgb_to_hsv(rs[i], gs[i], bs[i]);
            let (r, g, b) = hsv_to_rgb(h + p.hue as f32, s, v);
            rs[i] = r;
            gs[i] = g;
            bs[i] = b;
        }
    }
}

pub fn normalize(planar: &mut [f32], size: usize, norm: &Normalization) {
    let n = size * size;
    for c in 0..3 {
        let (m, s) = (norm.mean[c] as f32, norm.std[c] as f32);
        for v in &mut planar[c * n..(c + 1) * n] {
            *v = (*v - m) / s;
        }
    }
}

/// Training transform with fixed parameters. `shift` displaces the center
/// crop (position perturbation).
pub fn augment_with(
    img: &RgbImage,
    geom: &CropGeometry,
    params: &AugmentParams,
    norm: &Normalization,
    shift: (i64, i64),
) -> Result<Vec<f32>> {
    let (w, h) = img.dimensions();
    geom.validate(w, h)?;
    let (cx, cy) = geom.center_origin(w, h);
    let x0 = cx + shift.0 + params.crop_offset.0 as i64;
    let y0 = cy + shift.1 + params.crop_offset.1 as i64;
    let crop = crop_planar(img, x0, y0, geom.crop, norm.pixel_scale);
    let out = geom.output as usize;
    let mut v = resize_bilinear(&crop, 3, geom.crop as usize, out);
    color_jitter(&mut v, out, params);
    normalize(&mut v, out, norm);
    Ok(v)
}

/// Test transform: center crop, resize, normalize.
pub fn preprocess_with(img: &RgbImage, geom: &CropGeometry, norm: &Normalization, shift: (i64, i64)) -> Result<Vec<f32>> {
    let (w, h) = img.dimensions();
    geom.validate(w, h)?;
    let (cx, cy) = geom.center_origin(w, h);
    let crop = crop_planar(img, cx + shift.0, cy + shift.1, geom.center, norm.pixel_scale);
    let out = geom.output as usize;
    let mut v = resize_bilinear(&crop, 3, geom.center as usize, out);
    normalize(&mut v, out, norm);
    Ok(v)
}

/// Random crop and color jitter drawn from `rng`, as a `3 x out x out`
/// tensor.
pub fn augment_train<R: Rng + ?Sized>(
    img: &RgbImage,
    geom: &CropGeometry,
    jitter: &JitterStrength,
    norm: &Normalization,
    rng: &mut R,
) -> Result<Tensor<f32>> {
    let p = AugmentParams::draw(geom, jitter, rng);
    let o = geom.output as usize;
    Tensor::new(vec![3, o, o], augment_with(img, geom, &p, norm, (0, 0))?)
}

pub fn preprocess_test(img: &RgbImage, geom: &CropGeometry, norm: &Normalization) -> Result<Tensor<f32>> {
    let o = geom.output as usize;
    Tensor::new(vec![3, o, o], preprocess_with(img, geom, norm, (0, 0))?)
}
