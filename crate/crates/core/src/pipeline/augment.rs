use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::ImageTensor;

/// How samples that fall outside the source image are filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    #[default]
    Nearest,
    Reflect,
    /// Zero fill.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Probability of applying each enabled flip.
    pub flip_prob: f64,
    pub fill_mode: FillMode,
    pub rng_seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotation_max_deg: 40.0,
            width_shift_frac: 0.2,
            height_shift_frac: 0.2,
            horizontal_flip: true,
            vertical_flip: true,
            flip_prob: 0.5,
            fill_mode: FillMode::Nearest,
            rng_seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration that leaves every image untouched.
    pub fn identity() -> Self {
        Self {
            rotation_max_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.rotation_max_deg,
            self.width_shift_frac,
            self.height_shift_frac,
            self.flip_prob,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("augmentation magnitudes must be finite".into()));
        }
        if self.rotation_max_deg < 0.0 {
            return Err(Error::Config("rotation_max_deg must be >= 0".into()));
        }
        for (name, v) in [
            ("width_shift_frac", self.width_shift_frac),
            ("height_shift_frac", self.height_shift_frac),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config("flip_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_max_deg == 0.0
            && self.width_shift_frac == 0.0
            && self.height_shift_frac == 0.0
            && (!(self.horizontal_flip || self.vertical_flip) || self.flip_prob == 0.0)
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AugmentParams {
    pub angle_deg: f64,
    /// Horizontal translation in pixels (positive moves content right).
    pub shift_x: f64,
    /// Vertical translation in pixels (positive moves content down).
    pub shift_y: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    /// Draws parameters uniformly within the configured bounds. Five values
    /// are always consumed from `rng`, whatever the configuration.
    pub fn sample<R: Rng + ?Sized>(
        cfg: &AugmentConfig,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Self {
        let unit = |rng: &mut R| rng.random::<f64>() * 2.0 - 1.0;
        let angle = unit(rng) * cfg.rotation_max_deg;
        let sx = unit(rng) * cfg.width_shift_frac * width as f64;
        let sy = unit(rng) * cfg.height_shift_frac * height as f64;
        let fh = rng.random::<f64>() < cfg.flip_prob;
        let fv = rng.random::<f64>() < cfg.flip_prob;
        Self {
            angle_deg: angle,
            shift_x: sx,
            shift_y: sy,
            flip_horizontal: cfg.horizontal_flip && fh,
            flip_vertical: cfg.vertical_flip && fv,
        }
    }

    /// Applies rotation about the centre, then the shift, then flips.
    pub fn apply(&self, img: &ImageTensor, fill: FillMode) -> ImageTensor {
        let mut out = if self.angle_deg == 0.0 && self.shift_x == 0.0 && self.shift_y == 0.0 {
            img.clone()
        } else {
            warp(img, self.angle_deg, self.shift_x, self.shift_y, fill)
        };
        if self.flip_horizontal {
            flip(&mut out, true);
        }
        if self.flip_vertical {
            flip(&mut out, false);
        }
        out
    }
}

pub fn augment<R: Rng + ?Sized>(img: &ImageTensor, cfg: &AugmentConfig, rng: &mut R) -> ImageTensor {
    AugmentParams::sample(cfg, img.height(), img.width(), rng).apply(img, cfg.fill_mode)
}

fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Resolves a possibly out-of-range index; `None` means "use the fill value".
fn resolve(i: isize, n: usize, fill: FillMode) -> Option<usize> {
    match fill {
        FillMode::Nearest => Some(i.clamp(0, n as isize - 1) as usize),
        FillMode::Reflect => Some(reflect_index(i, n)),
        FillMode::Constant => (0..n as isize).contains(&i).then_some(i as usize),
    }
}

fn warp(img: &ImageTensor, angle_deg: f64, shift_x: f64, shift_y: f64, fill: FillMode) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let mut out = ImageTensor::filled(h, w, [0.0; 3]);
    let sample = |y: isize, x: isize| -> [f32; 3] {
        match (resolve(y, h, fill), resolve(x, w, fill)) {
            (Some(y), Some(x)) => img.pixel(y, x),
            _ => [0.0; 3],
        }
    };
    let dst = out.data_mut();
    for oy in 0..h {
        for ox in 0..w {
            // inverse map: undo the shift, then undo the rotation about the centre
            let dy = oy as f64 - shift_y - cy;
            let dx = ox as f64 - shift_x - cx;
            let sx = cos * dx + sin * dy + cx;
            let sy = -sin * dx + cos * dy + cy;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            let (x0, y0) = (x0 as isize, y0 as isize);
            let a = sample(y0, x0);
            let b = sample(y0, x0 + 1);
            let c = sample(y0 + 1, x0);
            let d = sample(y0 + 1, x0 + 1);
            let base = (oy * w + ox) * 3;
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bottom = c[k] + (d[k] - c[k]) * fx;
                dst[base + k] = (top + (bottom - top) * fy).clamp(0.0, 1.0);
            }
        }
    }
    out
}

fn flip(img: &mut ImageTensor, horizontal: bool) {
    let (h, w) = (img.height(), img.width());
    let data = img.data_mut();
    if horizontal {
        for row in data.chunks_exact_mut(w * 3) {
            for x in 0..w / 2 {
                for k in 0..3 {
                    row.swap(x * 3 + k, (w - 1 - x) * 3 + k);
                }
            }
        }
    } else {
        for y in 0..h / 2 {
            let (top, bottom) = data.split_at_mut((h - 1 - y) * w * 3);
            top[y * w * 3..(y + 1) * w * 3].swap_with_slice(&mut bottom[..w * 3]);
        }
    }
}
