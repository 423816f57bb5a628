//! Image/trimap/alpha file handling and the synthetic case generator.
//!
//! PNG in and out: 8-bit RGB images, 8-bit grayscale trimaps banded into
//! background (< 64), unknown, and foreground (> 191), and 16-bit grayscale
//! alpha so fractional coverage survives a round trip.

use crate::engine::{composite, TrimapLabel, TrimapMasks};
use crate::tensor::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const TRIMAP_BG_MAX: u8 = 63;
pub const TRIMAP_FG_MIN: u8 = 192;

#[derive(thiserror::Error, Debug)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("file i/o error at {path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path} is misshapen: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("synthetic case size must be at least 32x32, got {h}x{w}")]
    TooSmall { h: usize, w: usize },
    #[error("band_px must be >= 1")]
    BadBand,
    #[error("trimap band {band_px} empties the {which} region")]
    BandTooLarge { band_px: usize, which: &'static str },
    #[error("unknown shape kind {0:?} (expected disk, strands, or holed_ring)")]
    BadKind(String),
}

/// Loads an 8-bit RGB(A) PNG into `[3, H, W]` floats in [0, 1].
pub fn load_image(path: &Path) -> Result<Tensor<f32>, IoError> {
    let img = image::open(path)
        .map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let i = y as usize * w + x as usize;
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(Shape::chw(3, h, w), data).expect("image shape"))
}

/// Saves a `[3, H, W]` float tensor as 8-bit RGB PNG, clamping to [0, 1].
pub fn save_image(path: &Path, image: &Tensor<f32>) -> Result<(), IoError> {
    let (c, h, w) = chw(path, image)?;
    if c != 3 {
        return Err(IoError::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected 3 channels, got {c}"),
        });
    }
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let px = [0, 1, 2].map(|ch| quantize8(image.data[ch * h * w + i]));
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img.save(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an 8-bit grayscale trimap; bands: < 64 background, > 191
/// foreground, otherwise unknown.
pub fn load_trimap(path: &Path) -> Result<TrimapMasks, IoError> {
    let img = image::open(path)
        .map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<TrimapLabel> = img
        .pixels()
        .map(|p| {
            if p.0[0] <= TRIMAP_BG_MAX {
                TrimapLabel::Bg
            } else if p.0[0] >= TRIMAP_FG_MIN {
                TrimapLabel::Fg
            } else {
                TrimapLabel::Unknown
            }
        })
        .collect();
    Ok(TrimapMasks::from_labels(&labels, w, h))
}

/// Saves a trimap as 8-bit grayscale: F = 255, B = 0, U = 128.
pub fn save_trimap(path: &Path, masks: &TrimapMasks) -> Result<(), IoError> {
    let mut img = image::GrayImage::new(masks.width as u32, masks.height as u32);
    for y in 0..masks.height {
        for x in 0..masks.width {
            let i = y * masks.width + x;
            let v = if masks.fg[i] {
                255
            } else if masks.bg[i] {
                0
            } else {
                128
            };
            img.put_pixel(x as u32, y as u32, image::Luma([v]));
        }
    }
    img.save(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Saves a `[1, H, W]` alpha plane as 16-bit grayscale PNG.
pub fn save_alpha(path: &Path, alpha: &Tensor<f32>) -> Result<(), IoError> {
    let (c, h, w) = chw(path, alpha)?;
    if c != 1 {
        return Err(IoError::Malformed {
            path: path.to_path_buf(),
            reason: format!("expected 1 channel, got {c}"),
        });
    }
    let mut img = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let v = alpha.data[y * w + x].clamp(0.0, 1.0);
            img.put_pixel(x as u32, y as u32, image::Luma([(v * 65535.0).round() as u16]));
        }
    }
    img.save(path).map_err(|source| IoError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an alpha plane from 8- or 16-bit grayscale PNG.
pub fn load_alpha(path: &Path) -> Result<Tensor<f32>, IoError> {
    let img = image::open(path)
        .map_err(|source| IoError::Read {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma16();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = img.pixels().map(|p| p.0[0] as f32 / 65535.0).collect();
    Ok(Tensor::new(Shape::chw(1, h, w), data).expect("alpha shape"))
}

fn quantize8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn chw(path: &Path, t: &Tensor<f32>) -> Result<(usize, usize, usize), IoError> {
    t.shape.as_chw().map_err(|e| IoError::Malformed {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Strands,
    HoledRing,
}

impl FromStr for ShapeKind {
    type Err = IoError;
    fn from_str(s: &str) -> Result<Self, IoError> {
        match s {
            "disk" => Ok(ShapeKind::Disk),
            "strands" => Ok(ShapeKind::Strands),
            "holed_ring" => Ok(ShapeKind::HoledRing),
            other => Err(IoError::BadKind(other.to_string())),
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Strands => "strands",
            ShapeKind::HoledRing => "holed_ring",
        };
        f.write_str(s)
    }
}

/// An image with exact ground truth, manufactured through the compositing
/// equation so the model assumptions hold by construction.
#[derive(Clone, Debug)]
pub struct SyntheticCase {
    pub image: Tensor<f32>,
    pub masks: TrimapMasks,
    pub gt_alpha: Tensor<f32>,
    pub gt_fg: Tensor<f32>,
    pub gt_bg: Tensor<f32>,
    pub seed: u64,
    pub kind: ShapeKind,
    pub band_px: usize,
}

const SUPERSAMPLE: usize = 4;

/// Anti-aliased coverage of a region given by `inside(x, y)`, via 4×4
/// supersampling. Fully covered pixels are exactly 1.0, empty ones 0.0.
fn coverage(h: usize, w: usize, inside: impl Fn(f64, f64) -> bool) -> Vec<f32> {
    let n = SUPERSAMPLE;
    let mut alpha = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut hits = 0;
            for sy in 0..n {
                for sx in 0..n {
                    let px = x as f64 + (sx as f64 + 0.5) / n as f64;
                    let py = y as f64 + (sy as f64 + 0.5) / n as f64;
                    if inside(px, py) {
                        hits += 1;
                    }
                }
            }
            alpha[y * w + x] = hits as f32 / (n * n) as f32;
        }
    }
    alpha
}

/// Erodes a boolean plane by a Euclidean disk of radius `r`. Out-of-bounds
/// neighbors count as set, so regions touching the border survive.
fn erode(plane: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let ri = r as isize;
    let r2 = (r * r) as isize;
    let mut out = vec![false; h * w];
    for y in 0..h as isize {
        for x in 0..w as isize {
            if !plane[(y * w as isize + x) as usize] {
                continue;
            }
            let mut keep = true;
            'scan: for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dy * dy + dx * dx > r2 {
                        continue;
                    }
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    if !plane[(ny * w as isize + nx) as usize] {
                        keep = false;
                        break 'scan;
                    }
                }
            }
            out[(y * w as isize + x) as usize] = keep;
        }
    }
    out
}

/// Smooth random color field: a coarse control grid per channel,
/// bilinearly upsampled.
fn smooth_field(rng: &mut ChaCha8Rng, h: usize, w: usize, lo: f64, hi: f64) -> Tensor<f32> {
    const GRID: usize = 5;
    let mut data = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        let grid: Vec<f64> = (0..GRID * GRID).map(|_| rng.gen_range(lo..hi)).collect();
        for y in 0..h {
            let fy = y as f64 / (h - 1).max(1) as f64 * (GRID - 1) as f64;
            let (gy, ty) = (fy.floor() as usize, fy.fract());
            let gy1 = (gy + 1).min(GRID - 1);
            for x in 0..w {
                let fx = x as f64 / (w - 1).max(1) as f64 * (GRID - 1) as f64;
                let (gx, tx) = (fx.floor() as usize, fx.fract());
                let gx1 = (gx + 1).min(GRID - 1);
                let v = grid[gy * GRID + gx] * (1.0 - ty) * (1.0 - tx)
                    + grid[gy * GRID + gx1] * (1.0 - ty) * tx
                    + grid[gy1 * GRID + gx] * ty * (1.0 - tx)
                    + grid[gy1 * GRID + gx1] * ty * tx;
                data[c * h * w + y * w + x] = v as f32;
            }
        }
    }
    Tensor::new(Shape::chw(3, h, w), data).expect("field shape")
}

struct Segment {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    half_width: f64,
}

impl Segment {
    fn dist2(&self, px: f64, py: f64) -> f64 {
        let (dx, dy) = (self.x1 - self.x0, self.y1 - self.y0);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - self.x0) * dx + (py - self.y0) * dy) / len2).clamp(0.0, 1.0)
        };
        let (cx, cy) = (self.x0 + t * dx, self.y0 + t * dy);
        (px - cx) * (px - cx) + (py - cy) * (py - cy)
    }
}

/// Generates a synthetic matting case with exact ground truth.
pub fn synth_case(
    kind: ShapeKind,
    size: (usize, usize),
    band_px: usize,
    seed: u64,
) -> Result<SyntheticCase, IoError> {
    let (h, w) = size;
    if h < 32 || w < 32 {
        return Err(IoError::TooSmall { h, w });
    }
    if band_px == 0 {
        return Err(IoError::BadBand);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min_side = h.min(w) as f64;
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);

    let mut hole_mask: Option<Vec<bool>> = None;
    let alpha_data = match kind {
        ShapeKind::Disk => {
            let r = 0.3125 * min_side;
            coverage(h, w, |px, py| {
                (px - cx).powi(2) + (py - cy).powi(2) <= r * r
            })
        }
        ShapeKind::HoledRing => {
            let r_out = 0.36 * min_side;
            let r_in = 0.18 * min_side;
            // The trimap will deliberately leave the hole unknown.
            let mut hole = vec![false; h * w];
            for y in 0..h {
                for x in 0..w {
                    let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                    hole[y * w + x] = d2 < r_in * r_in;
                }
            }
            hole_mask = Some(hole);
            coverage(h, w, |px, py| {
                let d2 = (px - cx).powi(2) + (py - cy).powi(2);
                d2 <= r_out * r_out && d2 >= r_in * r_in
            })
        }
        ShapeKind::Strands => {
            let core_r = min_side / 8.0;
            let n_strands = rng.gen_range(20..=60);
            let mut segments = Vec::new();
            for _ in 0..n_strands {
                let theta = rng.gen_range(0.0..std::f64::consts::TAU);
                let length = rng.gen_range(min_side / 6.0..min_side / 2.5);
                let half_width = rng.gen_range(0.5..1.0);
                let mut dir = theta + rng.gen_range(-0.3..0.3);
                let mut x = cx + core_r * theta.cos();
                let mut y = cy + core_r * theta.sin();
                let step = 2.0;
                let n_steps = (length / step).ceil() as usize;
                for _ in 0..n_steps {
                    let (nx, ny) = (x + step * dir.cos(), y + step * dir.sin());
                    segments.push(Segment {
                        x0: x,
                        y0: y,
                        x1: nx,
                        y1: ny,
                        half_width,
                    });
                    x = nx;
                    y = ny;
                    dir += rng.gen_range(-0.3..0.3);
                }
            }
            coverage(h, w, |px, py| {
                let dx = px - cx;
                let dy = py - cy;
                if dx * dx + dy * dy <= core_r * core_r {
                    return true;
                }
                segments
                    .iter()
                    .any(|s| s.dist2(px, py) <= s.half_width * s.half_width)
            })
        }
    };
    let gt_alpha = Tensor::new(Shape::chw(1, h, w), alpha_data).expect("alpha shape");

    // Trimap: erode the certain regions so a band of width ~band_px around
    // every edge stays unknown.
    let fg_eligible: Vec<bool> = gt_alpha.data.iter().map(|&a| a >= 1.0).collect();
    let mut bg_eligible: Vec<bool> = gt_alpha.data.iter().map(|&a| a <= 0.0).collect();
    if let Some(hole) = &hole_mask {
        for (b, &in_hole) in bg_eligible.iter_mut().zip(hole) {
            if in_hole {
                *b = false;
            }
        }
    }
    let fg = erode(&fg_eligible, h, w, band_px);
    let bg = erode(&bg_eligible, h, w, band_px);
    if !fg.iter().any(|&b| b) {
        return Err(IoError::BandTooLarge {
            band_px,
            which: "foreground",
        });
    }
    if !bg.iter().any(|&b| b) {
        return Err(IoError::BandTooLarge {
            band_px,
            which: "background",
        });
    }
    let labels: Vec<TrimapLabel> = fg
        .iter()
        .zip(&bg)
        .map(|(&f, &b)| {
            if f {
                TrimapLabel::Fg
            } else if b {
                TrimapLabel::Bg
            } else {
                TrimapLabel::Unknown
            }
        })
        .collect();
    let masks = TrimapMasks::from_labels(&labels, w, h);

    let gt_fg = smooth_field(&mut rng, h, w, 0.55, 0.95);
    let mut gt_bg = smooth_field(&mut rng, h, w, 0.05, 0.45);
    // Through the ring's hole the backdrop shows foreground-like colors (a
    // surface behind the hole, not the ambient background). With no labels
    // in the hole this is the configuration the method cannot disambiguate.
    if let Some(hole) = &hole_mask {
        for c in 0..3 {
            for (i, &in_hole) in hole.iter().enumerate() {
                if in_hole {
                    gt_bg.data[c * h * w + i] = gt_fg.data[c * h * w + i];
                }
            }
        }
    }
    let image = composite(&gt_alpha, &gt_fg, &gt_bg).expect("composite shapes");

    Ok(SyntheticCase {
        image,
        masks,
        gt_alpha,
        gt_fg,
        gt_bg,
        seed,
        kind,
        band_px,
    })
}

/// Writes a case as a directory: image.png, trimap.png, gt_alpha.png, meta.txt.
pub fn write_case(dir: &Path, case: &SyntheticCase) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|source| IoError::File {
        path: dir.to_path_buf(),
        source,
    })?;
    save_image(&dir.join("image.png"), &case.image)?;
    save_trimap(&dir.join("trimap.png"), &case.masks)?;
    save_alpha(&dir.join("gt_alpha.png"), &case.gt_alpha)?;
    let meta = format!(
        "kind={}\nseed={}\nband_px={}\nwidth={}\nheight={}\n",
        case.kind, case.seed, case.band_px, case.masks.width, case.masks.height
    );
    let meta_path = dir.join("meta.txt");
    std::fs::write(&meta_path, meta).map_err(|source| IoError::File {
        path: meta_path,
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::composite;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn image_round_trip_within_8_bit_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data: Vec<f32> = (0..3 * 8 * 9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let img = Tensor::new(Shape::chw(3, 8, 9), data).unwrap();
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.shape, img.shape);
        for (a, b) in back.data.iter().zip(&img.data) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn alpha_round_trip_within_16_bit_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alpha.png");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<f32> = (0..8 * 8).map(|_| rng.gen_range(0.0..1.0)).collect();
        let alpha = Tensor::new(Shape::chw(1, 8, 8), data).unwrap();
        save_alpha(&path, &alpha).unwrap();
        let back = load_alpha(&path).unwrap();
        for (a, b) in back.data.iter().zip(&alpha.data) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-7);
        }
        // Exact endpoints survive exactly.
        let ends = Tensor::new(Shape::chw(1, 1, 2), vec![0.0, 1.0]).unwrap();
        save_alpha(&path, &ends).unwrap();
        assert_eq!(load_alpha(&path).unwrap().data, vec![0.0, 1.0]);
    }

    #[test]
    fn trimap_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trimap.png");
        let case = synth_case(ShapeKind::Disk, (32, 32), 3, 1).unwrap();
        save_trimap(&path, &case.masks).unwrap();
        let back = load_trimap(&path).unwrap();
        assert_eq!(back.fg, case.masks.fg);
        assert_eq!(back.bg, case.masks.bg);
        assert_eq!(back.unknown, case.masks.unknown);
    }

    #[test]
    fn mid_gray_trimap_is_all_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        image::GrayImage::from_pixel(6, 4, image::Luma([128u8]))
            .save(&path)
            .unwrap();
        let masks = load_trimap(&path).unwrap();
        assert_eq!(masks.n_unknown(), 24);
        assert_eq!(masks.n_constrained(), 0);
    }

    #[test]
    fn trimap_thresholds_bound_the_bands() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.png");
        let mut img = image::GrayImage::new(4, 1);
        img.put_pixel(0, 0, image::Luma([TRIMAP_BG_MAX]));
        img.put_pixel(1, 0, image::Luma([TRIMAP_BG_MAX + 1]));
        img.put_pixel(2, 0, image::Luma([TRIMAP_FG_MIN - 1]));
        img.put_pixel(3, 0, image::Luma([TRIMAP_FG_MIN]));
        img.save(&path).unwrap();
        let masks = load_trimap(&path).unwrap();
        assert_eq!(masks.bg, vec![true, false, false, false]);
        assert_eq!(masks.unknown, vec![false, true, true, false]);
        assert_eq!(masks.fg, vec![false, false, false, true]);
    }

    #[test]
    fn missing_file_is_an_io_error() {
        assert!(load_image(Path::new("/nonexistent/x.png")).is_err());
        assert!(load_trimap(Path::new("/nonexistent/x.png")).is_err());
    }

    #[test]
    fn synthetic_image_is_the_exact_composite_of_its_ground_truth() {
        for kind in [ShapeKind::Disk, ShapeKind::Strands, ShapeKind::HoledRing] {
            let case = synth_case(kind, (48, 48), 3, 9).unwrap();
            let recomposed = composite(&case.gt_alpha, &case.gt_fg, &case.gt_bg).unwrap();
            let got: Vec<u32> = case.image.data.iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = recomposed.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(got, want, "{kind}: compositing must hold bit-for-bit");
        }
    }

    #[test]
    fn synthetic_trimap_is_consistent_with_ground_truth() {
        for kind in [ShapeKind::Disk, ShapeKind::Strands, ShapeKind::HoledRing] {
            let case = synth_case(kind, (64, 64), 4, 2).unwrap();
            for i in 0..case.masks.n_pixels() {
                if case.masks.fg[i] {
                    assert_eq!(case.gt_alpha.data[i], 1.0, "{kind}: F pixel {i}");
                }
                if case.masks.bg[i] {
                    assert_eq!(case.gt_alpha.data[i], 0.0, "{kind}: B pixel {i}");
                }
            }
        }
    }

    #[test]
    fn disk_interior_alpha_is_exactly_one() {
        let case = synth_case(ShapeKind::Disk, (64, 64), 4, 0).unwrap();
        // r = 20 at 64; the center pixel sits fully inside.
        let c = 32 * 64 + 32;
        assert_eq!(case.gt_alpha.data[c], 1.0);
        // And a far corner is exactly zero.
        assert_eq!(case.gt_alpha.data[0], 0.0);
    }

    #[test]
    fn disk_unknown_fraction_matches_annulus_area_estimate() {
        let (h, w, band) = (64usize, 64usize, 4usize);
        let case = synth_case(ShapeKind::Disk, (h, w), band, 0).unwrap();
        let r = 0.3125 * 64.0;
        let (ro, ri) = (r + band as f64 + 0.5, r - band as f64 - 0.5);
        let annulus = std::f64::consts::PI * (ro * ro - ri * ri);
        let frac_got = case.masks.n_unknown() as f64 / (h * w) as f64;
        let frac_want = annulus / (h * w) as f64;
        assert!(
            (frac_got - frac_want).abs() / frac_want < 0.2,
            "U fraction {frac_got:.4} vs annulus estimate {frac_want:.4}"
        );
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let a = synth_case(ShapeKind::Strands, (48, 48), 3, 123).unwrap();
        let b = synth_case(ShapeKind::Strands, (48, 48), 3, 123).unwrap();
        assert_eq!(a.image.data, b.image.data);
        assert_eq!(a.gt_alpha.data, b.gt_alpha.data);
        assert_eq!(a.masks.unknown, b.masks.unknown);
        let c = synth_case(ShapeKind::Strands, (48, 48), 3, 124).unwrap();
        assert_ne!(a.image.data, c.image.data);
    }

    #[test]
    fn oversized_band_and_tiny_canvas_are_rejected() {
        assert!(matches!(
            synth_case(ShapeKind::Disk, (64, 64), 40, 0),
            Err(IoError::BandTooLarge { .. })
        ));
        assert!(matches!(
            synth_case(ShapeKind::Disk, (16, 64), 2, 0),
            Err(IoError::TooSmall { .. })
        ));
        assert!(matches!(
            synth_case(ShapeKind::Disk, (64, 64), 0, 0),
            Err(IoError::BadBand)
        ));
    }

    #[test]
    fn holed_ring_forces_the_hole_into_unknown() {
        let case = synth_case(ShapeKind::HoledRing, (64, 64), 3, 4).unwrap();
        // The hole keeps some pixels with alpha 0 inside U (never B).
        let trapped = (0..case.masks.n_pixels())
            .filter(|&i| case.masks.unknown[i] && case.gt_alpha.data[i] == 0.0)
            .count();
        assert!(trapped > 0, "hole must be label-starved");
    }

    #[test]
    fn shape_kind_parses_and_prints() {
        for kind in [ShapeKind::Disk, ShapeKind::Strands, ShapeKind::HoledRing] {
            assert_eq!(kind.to_string().parse::<ShapeKind>().unwrap(), kind);
        }
        assert!(matches!("blob".parse::<ShapeKind>(), Err(IoError::BadKind(_))));
    }

    #[test]
    fn write_case_produces_the_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let case = synth_case(ShapeKind::Disk, (32, 32), 2, 0).unwrap();
        write_case(dir.path(), &case).unwrap();
        for name in ["image.png", "trimap.png", "gt_alpha.png", "meta.txt"] {
            assert!(dir.path().join(name).exists(), "missing {name}");
        }
        let meta = std::fs::read_to_string(dir.path().join("meta.txt")).unwrap();
        assert!(meta.contains("kind=disk"));
        assert!(meta.contains("seed=0"));
    }
}
