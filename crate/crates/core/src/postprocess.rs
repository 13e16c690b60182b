//! Display-space clean-up of generator output: contrast-limited adaptive
//! histogram equalization on luma, non-local means denoising and unsharp
//! masking, always applied in that order.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{ImageTensor, RasterImage};
use crate::error::{GathError, Result};

/// Which stages run. The order is fixed: CLAHE, then denoise, then sharpen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stages {
    pub clahe: bool,
    pub denoise: bool,
    pub sharpen: bool,
}

impl Stages {
    pub const NONE: Stages = Stages {
        clahe: false,
        denoise: false,
        sharpen: false,
    };
    pub const ALL: Stages = Stages {
        clahe: true,
        denoise: true,
        sharpen: true,
    };
    pub const CLAHE: Stages = Stages {
        clahe: true,
        denoise: false,
        sharpen: false,
    };

    pub fn is_empty(&self) -> bool {
        !(self.clahe || self.denoise || self.sharpen)
    }

    pub fn names(&self) -> Vec<&'static str> {
        let mut v = Vec::new();
        if self.clahe {
            v.push("clahe");
        }
        if self.denoise {
            v.push("denoise");
        }
        if self.sharpen {
            v.push("sharpen");
        }
        v
    }

    /// Parse a set from names; order and repetition are irrelevant.
    pub fn from_names<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut s = Stages::NONE;
        for n in names {
            match n.trim() {
                "" | "none" => {}
                "clahe" => s.clahe = true,
                "denoise" | "nlm" => s.denoise = true,
                "sharpen" | "unsharp" => s.sharpen = true,
                "all" => s = Stages::ALL,
                other => return Err(GathError::Config(format!("unknown postprocess stage `{other}`"))),
            }
        }
        Ok(s)
    }
}

impl std::str::FromStr for Stages {
    type Err = GathError;

    /// Comma-separated stage names, e.g. `clahe,sharpen`.
    fn from_str(s: &str) -> Result<Self> {
        Stages::from_names(s.split(','))
    }
}

impl std::fmt::Display for Stages {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&self.names().join(","))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostprocessConfig {
    /// Histogram clip limit as a multiple of the mean bin height.
    pub clahe_clip: f64,
    /// Tile grid as (rows, cols).
    pub clahe_tiles: (usize, usize),
    /// NLM filtering parameter `h`, in 8-bit levels.
    pub nlm_strength: f64,
    /// Expected noise standard deviation `σ`, in 8-bit levels.
    pub nlm_sigma: f64,
    pub nlm_patch: usize,
    pub nlm_window: usize,
    /// Gaussian standard deviation of the unsharp blur, in pixels.
    pub unsharp_radius: f64,
    pub unsharp_amount: f64,
    pub stages: Stages,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        PostprocessConfig {
            clahe_clip: 2.0,
            clahe_tiles: (8, 8),
            nlm_strength: 10.0,
            nlm_sigma: 0.0,
            nlm_patch: 7,
            nlm_window: 21,
            unsharp_radius: 1.5,
            unsharp_amount: 0.5,
            stages: Stages::NONE,
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .trim()
        .parse()
        .map_err(|_| GathError::Config(format!("invalid value `{value}` for `{key}`")))
}

impl PostprocessConfig {
    pub fn with_stages(stages: Stages) -> Self {
        PostprocessConfig {
            stages,
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let k = key.as_str();
        match k {
            "clahe_clip" => self.clahe_clip = parse(k, value)?,
            "clahe_tiles" => {
                let v = value.trim();
                let (r, c) = v
                    .split_once(['x', ','])
                    .ok_or_else(|| GathError::Config(format!("`{k}` expects ROWSxCOLS, got `{v}`")))?;
                self.clahe_tiles = (parse(k, r)?, parse(k, c)?);
            }
            "nlm_strength" => self.nlm_strength = parse(k, value)?,
            "nlm_sigma" => self.nlm_sigma = parse(k, value)?,
            "nlm_patch" => self.nlm_patch = parse(k, value)?,
            "nlm_window" => self.nlm_window = parse(k, value)?,
            "unsharp_radius" => self.unsharp_radius = parse(k, value)?,
            "unsharp_amount" => self.unsharp_amount = parse(k, value)?,
            "stages" => self.stages = value.trim().parse()?,
            _ => return Err(GathError::Config(format!("unknown postprocess key `{key}`"))),
        }
        Ok(())
    }

    /// Read the `[postprocess]` section of a config file; everything else
    /// is ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut inside = false;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.starts_with('[') && line.ends_with(']') {
                inside = &line[1..line.len() - 1] == "postprocess";
                continue;
            }
            if !inside || line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| GathError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k, v)
                .map_err(|e| GathError::Config(format!("line {}: {e}", i + 1)))?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GathError::Config(m));
        if !(self.clahe_clip > 0.0) {
            return bad(format!("clahe_clip must be positive, got {}", self.clahe_clip));
        }
        if self.clahe_tiles.0 == 0 || self.clahe_tiles.1 == 0 {
            return bad("clahe_tiles must be positive".into());
        }
        if !(self.nlm_strength >= 0.0) || !(self.nlm_sigma >= 0.0) {
            return bad("nlm_strength and nlm_sigma must be non-negative".into());
        }
        if self.nlm_patch % 2 == 0 || self.nlm_window % 2 == 0 {
            return bad("nlm_patch and nlm_window must be odd".into());
        }
        if !(self.unsharp_radius > 0.0) || !(self.unsharp_amount >= 0.0) {
            return bad("unsharp_radius must be positive and unsharp_amount non-negative".into());
        }
        Ok(())
    }
}

/// `round(255·(x + 1)/2)` per channel, ties up.
pub fn denormalize(x: &ImageTensor) -> RasterImage {
    x.to_raster()
}

fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Clip every bin at `limit` and hand the clipped mass back to the bins
/// still below it, never lifting one above `limit`. Mass that fits
/// nowhere (limit below the mean bin height) is spread evenly.
fn clip_histogram(hist: &[u32; 256], limit: f64) -> [f64; 256] {
    let mut bins = [0.0f64; 256];
    let mut excess = 0.0;
    for (b, &h) in bins.iter_mut().zip(hist) {
        let h = h as f64;
        *b = h.min(limit);
        excess += h - *b;
    }
    while excess > 1e-9 {
        let free = bins.iter().filter(|&&b| b < limit).count();
        if free == 0 {
            break;
        }
        let share = excess / free as f64;
        for b in bins.iter_mut().filter(|b| **b < limit) {
            let add = share.min(limit - *b);
            *b += add;
            excess -= add;
        }
    }
    if excess > 1e-9 {
        for b in &mut bins {
            *b += excess / 256.0;
        }
    }
    bins
}

/// Mapping for one tile. A tile holding a single grey level keeps it.
fn tile_lut(hist: &[u32; 256], count: u32, clip: f64) -> [f64; 256] {
    let mut lut = [0.0; 256];
    if count == 0 || hist.iter().filter(|&&h| h > 0).count() <= 1 {
        for (v, l) in lut.iter_mut().enumerate() {
            *l = v as f64;
        }
        return lut;
    }
    let clipped = clip_histogram(hist, clip * count as f64 / 256.0);
    let scale = 255.0 / count as f64;
    let mut cdf = 0.0;
    for (l, c) in lut.iter_mut().zip(&clipped) {
        cdf += c;
        *l = (cdf * scale).min(255.0);
    }
    lut
}

/// Contrast-limited adaptive histogram equalization of luma. Each pixel's
/// RGB channels shift by the same amount, which leaves both chroma
/// differences of the luma/chroma decomposition unchanged.
pub fn clahe(img: &RasterImage, cfg: &PostprocessConfig) -> RasterImage {
    let (h, w) = (img.height, img.width);
    if h == 0 || w == 0 {
        return img.clone();
    }
    let (mut rows, mut cols) = cfg.clahe_tiles;
    if rows > h || cols > w {
        warn!("clahe: {h}x{w} image smaller than {rows}x{cols} tile grid, reducing");
        rows = rows.min(h);
        cols = cols.min(w);
    }
    let level: Vec<u8> = img.data.chunks_exact(3).map(|p| to_u8(luma(p[0], p[1], p[2]))).collect();
    let bounds = |n: usize, parts: usize, i: usize| (i * n / parts, (i + 1) * n / parts);
    let mut luts = Vec::with_capacity(rows * cols);
    for tr in 0..rows {
        let (y0, y1) = bounds(h, rows, tr);
        for tc in 0..cols {
            let (x0, x1) = bounds(w, cols, tc);
            let mut hist = [0u32; 256];
            for y in y0..y1 {
                for x in x0..x1 {
                    hist[level[y * w + x] as usize] += 1;
                }
            }
            luts.push(tile_lut(&hist, ((y1 - y0) * (x1 - x0)) as u32, cfg.clahe_clip));
        }
    }
    // Position of a pixel centre in tile-centre coordinates, split into the
    // lower neighbouring tile and the blend weight toward the upper one.
    let locate = |p: usize, n: usize, parts: usize| -> (usize, usize, f64) {
        let t = (p as f64 + 0.5) * parts as f64 / n as f64 - 0.5;
        if t <= 0.0 {
            (0, 0, 0.0)
        } else if t >= (parts - 1) as f64 {
            (parts - 1, parts - 1, 0.0)
        } else {
            let lo = t.floor() as usize;
            (lo, lo + 1, t - lo as f64)
        }
    };
    let mut out = img.clone();
    for y in 0..h {
        let (r0, r1, fy) = locate(y, h, rows);
        for x in 0..w {
            let (c0, c1, fx) = locate(x, w, cols);
            let v = level[y * w + x] as usize;
            let at = |r: usize, c: usize| luts[r * cols + c][v];
            let top = at(r0, c0) * (1.0 - fx) + at(r0, c1) * fx;
            let bottom = at(r1, c0) * (1.0 - fx) + at(r1, c1) * fx;
            let delta = top * (1.0 - fy) + bottom * fy - v as f64;
            let i = 3 * (y * w + x);
            for c in 0..3 {
                out.data[i + c] = to_u8(img.data[i + c] as f64 + delta);
            }
        }
    }
    out
}

/// Non-local means: every pixel becomes a weighted average of the pixels
/// in its search window, weighted by `exp(−max(d² − 2σ², 0)/h²)` where `d²`
/// is the mean squared difference between the two surrounding patches over
/// all channels. Borders replicate.
pub fn nl_means_denoise(img: &RasterImage, cfg: &PostprocessConfig) -> RasterImage {
    let h2 = cfg.nlm_strength * cfg.nlm_strength;
    if h2 <= 0.0 || img.width == 0 || img.height == 0 {
        return img.clone();
    }
    let (hgt, wid) = (img.height as isize, img.width as isize);
    let pr = (cfg.nlm_patch / 2) as isize;
    let wr = (cfg.nlm_window / 2) as isize;
    let sigma2 = 2.0 * cfg.nlm_sigma * cfg.nlm_sigma;
    let px = |y: isize, x: isize, c: usize| -> f64 {
        let y = y.clamp(0, hgt - 1) as usize;
        let x = x.clamp(0, wid - 1) as usize;
        img.data[3 * (y * img.width + x) + c] as f64
    };
    let patch_len = ((2 * pr + 1) * (2 * pr + 1) * 3) as f64;
    let mut out = img.clone();
    for y in 0..hgt {
        for x in 0..wid {
            let mut acc = [0.0f64; 3];
            let mut total = 0.0;
            for qy in y - wr..=y + wr {
                for qx in x - wr..=x + wr {
                    if qy < 0 || qx < 0 || qy >= hgt || qx >= wid {
                        continue;
                    }
                    let mut d2 = 0.0;
                    for dy in -pr..=pr {
                        for dx in -pr..=pr {
                            for c in 0..3 {
                                let diff = px(y + dy, x + dx, c) - px(qy + dy, qx + dx, c);
                                d2 += diff * diff;
                            }
                        }
                    }
                    let weight = (-((d2 / patch_len) - sigma2).max(0.0) / h2).exp();
                    total += weight;
                    for (c, a) in acc.iter_mut().enumerate() {
                        *a += weight * px(qy, qx, c);
                    }
                }
            }
            let i = 3 * (y as usize * img.width + x as usize);
            for c in 0..3 {
                out.data[i + c] = to_u8(acc[c] / total);
            }
        }
    }
    out
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders, per channel, unrounded.
pub fn gaussian_blur(img: &RasterImage, sigma: f64) -> Vec<f64> {
    let (h, w) = (img.height, img.width);
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let src: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sx = (x as isize + j as isize - r).clamp(0, w as isize - 1) as usize;
                    s += kv * src[3 * (y * w + sx) + c];
                }
                tmp[3 * (y * w + x) + c] = s;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut s = 0.0;
                for (j, kv) in k.iter().enumerate() {
                    let sy = (y as isize + j as isize - r).clamp(0, h as isize - 1) as usize;
                    s += kv * tmp[3 * (sy * w + x) + c];
                }
                out[3 * (y * w + x) + c] = s;
            }
        }
    }
    out
}

/// `clamp(img + amount·(img − blur(img)))`.
pub fn unsharp_mask(img: &RasterImage, cfg: &PostprocessConfig) -> RasterImage {
    if cfg.unsharp_amount == 0.0 || img.data.is_empty() {
        return img.clone();
    }
    let blur = gaussian_blur(img, cfg.unsharp_radius);
    let mut out = img.clone();
    for (o, (&v, b)) in out.data.iter_mut().zip(img.data.iter().zip(&blur)) {
        let v = v as f64;
        *o = to_u8(v + cfg.unsharp_amount * (v - b));
    }
    out
}

/// Apply the enabled stages of `cfg` to a display raster.
pub fn postprocess_raster(img: &RasterImage, cfg: &PostprocessConfig) -> RasterImage {
    let mut r = img.clone();
    if cfg.stages.clahe {
        r = clahe(&r, cfg);
    }
    if cfg.stages.denoise {
        r = nl_means_denoise(&r, cfg);
    }
    if cfg.stages.sharpen {
        r = unsharp_mask(&r, cfg);
    }
    r
}

/// Denormalize, then run the enabled stages.
pub fn postprocess_pipeline(x: &ImageTensor, cfg: &PostprocessConfig) -> Result<RasterImage> {
    cfg.validate()?;
    Ok(postprocess_raster(&denormalize(x), cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> RasterImage {
        let mut r = RasterImage::filled(w, h, [0; 3]);
        for y in 0..h {
            for x in 0..w {
                let v = f(y, x);
                for c in 0..3 {
                    r.set(y, x, c, v);
                }
            }
        }
        r
    }

    #[test]
    fn stage_sets_parse_in_any_order() {
        let s: Stages = "sharpen,clahe".parse().unwrap();
        assert_eq!(s.names(), ["clahe", "sharpen"]);
        assert_eq!(s.to_string(), "clahe,sharpen");
        assert_eq!("none".parse::<Stages>().unwrap(), Stages::NONE);
        assert!("blur".parse::<Stages>().is_err());
    }

    #[test]
    fn config_section_is_read() {
        let mut c = PostprocessConfig::default();
        c.apply_text("[train]\nseed = 1\n[postprocess]\nclahe_tiles = 4x2\nstages = clahe\nnlm-patch = 5\n")
            .unwrap();
        assert_eq!(c.clahe_tiles, (4, 2));
        assert_eq!(c.stages, Stages::CLAHE);
        assert_eq!(c.nlm_patch, 5);
        assert!(c.apply_text("[postprocess]\nnlm_window = 4\n").is_err());
    }

    #[test]
    fn luma_shift_preserves_chroma() {
        let mut img = RasterImage::filled(16, 16, [0; 3]);
        for y in 0..16 {
            for x in 0..16 {
                let v = (100 + x + y) as u8;
                img.set(y, x, 0, v);
                img.set(y, x, 1, v - 30);
                img.set(y, x, 2, v + 20);
            }
        }
        let out = clahe(&img, &PostprocessConfig::default());
        let unclamped = |p: &[u8]| p.iter().all(|&v| (1..255).contains(&v));
        for (a, b) in img.data.chunks(3).zip(out.data.chunks(3)).filter(|(_, b)| unclamped(b)) {
            let d = |p: &[u8]| (p[0] as i32 - p[1] as i32, p[2] as i32 - p[1] as i32);
            assert_eq!(d(a), d(b));
        }
    }

    #[test]
    fn tiny_image_reduces_the_tile_grid() {
        let img = gray(3, 2, |y, x| (y * 50 + x * 20) as u8);
        let out = clahe(&img, &PostprocessConfig::default());
        assert_eq!((out.width, out.height), (3, 2));
    }

    #[test]
    fn blur_preserves_mass_in_the_interior() {
        let img = gray(9, 9, |y, x| if (y, x) == (4, 4) { 200 } else { 0 });
        let b = gaussian_blur(&img, 1.0);
        let sum: f64 = b.iter().step_by(3).sum();
        assert!((sum - 200.0).abs() < 1e-6);
    }
}
