//! Deterministic five-class procedural corpus standing in for real
//! microscope photographs.
//!
//! Each class has its own background tint and foreground texture (diagonal
//! filaments, bead chains, blobs, bands, a mesh). Every source image is
//! seen through a circular field stop, so its corner patches are black; some
//! images also carry an over-exposed blank block or a faint low-contrast
//! block, which the filter should reject or send to review.

use std::path::{Path, PathBuf};

use crate::dataset::{ClassLabel, DatasetError, LabelTable};
use crate::imaging::{encode_png, ImageBuffer};
use crate::rng::{derive_seed, SeededStream};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub images_per_class: usize,
    pub width: usize,
    pub height: usize,
    /// Blank and faint blocks are sized in units of this.
    pub cell: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            images_per_class: 6,
            width: 600,
            height: 450,
            cell: 100,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthCorpus {
    pub image_dir: PathBuf,
    pub labels_path: PathBuf,
    pub labels: LabelTable,
}

struct Style {
    background: [f64; 3],
    foreground: [f64; 3],
}

fn style(class: ClassLabel) -> Style {
    let (background, foreground) = match class {
        ClassLabel::Tsh => ([120.0, 190.0, 110.0], [35.0, 80.0, 40.0]),
        ClassLabel::Bash => ([110.0, 140.0, 220.0], [30.0, 40.0, 120.0]),
        ClassLabel::Gma => ([220.0, 130.0, 160.0], [120.0, 40.0, 70.0]),
        ClassLabel::Shc => ([220.0, 200.0, 90.0], [120.0, 100.0, 20.0]),
        ClassLabel::Bbh => ([170.0, 110.0, 200.0], [70.0, 30.0, 100.0]),
    };
    Style { background, foreground }
}

/// Per-pixel hash noise in `[-1, 1)`.
fn noise(seed: u64, x: usize, y: usize) -> f64 {
    let h = derive_seed(seed, &[x as u64, y as u64]);
    (h >> 11) as f64 * (2.0 / (1u64 << 53) as f64) - 1.0
}

/// Foreground coverage in `[0, 1]` for a class texture at `(x, y)`.
fn texture(class: ClassLabel, x: f64, y: f64, period: f64, phase: f64) -> f64 {
    let wrap = |v: f64| v.rem_euclid(period);
    match class {
        ClassLabel::Tsh => f64::from(u8::from(wrap(x + y + phase) < 3.0)),
        ClassLabel::Bash => {
            let dx = wrap(x + phase) - period / 2.0;
            let dy = wrap(y + phase / 2.0) - period / 2.0;
            f64::from(u8::from(dx * dx + dy * dy < (period / 4.0).powi(2)))
        }
        ClassLabel::Gma => {
            let f = period / std::f64::consts::PI;
            f64::from(u8::from(((x + phase) / f).sin() * ((y + phase) / f).sin() > 0.5))
        }
        ClassLabel::Shc => f64::from(u8::from(wrap(y + phase) < period / 3.0)),
        ClassLabel::Bbh => f64::from(u8::from(wrap(x + phase) < 2.0 || wrap(y + phase) < 2.0)),
    }
}

/// Render source image `index` of `class`.
pub fn render_image(config: &SynthConfig, class: ClassLabel, index: usize) -> ImageBuffer {
    let seed = derive_seed(config.seed, &[class.index() as u64, index as u64]);
    let mut rng = SeededStream::new(seed);
    let st = style(class);
    let period = rng.uniform(14.0, 22.0);
    let phase = rng.uniform(0.0, period);
    let tint: Vec<f64> = (0..3).map(|_| rng.uniform(-12.0, 12.0)).collect();
    let (w, h) = (config.width as f64, config.height as f64);
    let (cx, cy) = (w / 2.0, h / 2.0);
    let cell = config.cell;
    // Field stop reaching just short of the inner corner of each corner
    // cell, so those cells are entirely black.
    let c = cell as f64;
    let radius = ((cx - c).powi(2) + (cy - c).powi(2)).sqrt() - 2.0;
    let cols = config.width / cell;
    let rows = config.height / cell;
    let blank = (index % 3 == 1 && cols >= 3 && rows >= 2).then(|| (cell * (cols / 2), cell, 2 * cell, cell));
    let faint = (index % 3 == 2 && cols >= 3 && rows >= 2).then(|| (cell, cell * (rows / 2), cell, cell));
    let inside = |x: usize, y: usize, r: Option<(usize, usize, usize, usize)>| {
        r.is_some_and(|(rx, ry, rw, rh)| x >= rx && x < rx + rw && y >= ry && y < ry + rh)
    };

    ImageBuffer::from_fn(config.width, config.height, |x, y| {
        let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
        if ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt() > radius {
            return [0, 0, 0];
        }
        let n = noise(seed, x, y);
        let rgb: [f64; 3] = if inside(x, y, blank) {
            [236.0 + n, 236.0 + n, 236.0 + n]
        } else if inside(x, y, faint) {
            let t = texture(class, fx, fy, period, phase);
            let v = 196.0 + 32.0 * t + 2.0 * n;
            [v, v, v]
        } else {
            let t = texture(class, fx, fy, period, phase);
            std::array::from_fn(|c| st.background[c] * (1.0 - t) + st.foreground[c] * t + tint[c] + 10.0 * n)
        };
        rgb.map(|v| v.round().clamp(0.0, 255.0) as u8)
    })
}

/// Write `<dir>/images/<class>_<nnn>.png` for every class and a
/// `<dir>/labels.csv` naming each image's class.
pub fn generate_corpus(dir: &Path, config: &SynthConfig) -> Result<SynthCorpus, DatasetError> {
    use rayon::prelude::*;

    let image_dir = dir.join("images");
    std::fs::create_dir_all(&image_dir).map_err(|e| DatasetError::io(&image_dir, e))?;
    let jobs: Vec<(ClassLabel, usize)> = ClassLabel::ALL
        .iter()
        .flat_map(|&c| (0..config.images_per_class).map(move |i| (c, i)))
        .collect();
    let names = jobs
        .par_iter()
        .map(|&(class, i)| {
            let name = format!("{}_{i:03}.png", class.code().to_ascii_lowercase());
            let png = encode_png(&render_image(config, class, i)).map_err(|e| DatasetError::Malformed(e.to_string()))?;
            let path = image_dir.join(&name);
            std::fs::write(&path, png).map_err(|e| DatasetError::io(&path, e))?;
            Ok((name, class))
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let mut labels = LabelTable::new();
    for (name, class) in &names {
        labels.insert(name, *class)?;
    }
    let labels_path = dir.join("labels.csv");
    let file = std::fs::File::create(&labels_path).map_err(|e| DatasetError::io(&labels_path, e))?;
    labels.write_to(file)?;
    Ok(SynthCorpus {
        image_dir,
        labels_path,
        labels,
    })
}
