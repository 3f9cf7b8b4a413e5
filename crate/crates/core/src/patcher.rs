//! Edge-anchored square grid patching.
//!
//! Each axis of length `D` gets `ceil(D / P)` positions at offsets
//! `min(i * P, D - P)`: interior patches tile from the origin and the last
//! one is pulled back against the far edge, overlapping its neighbour when
//! `D` is not a multiple of `P`. An axis shorter than `P` is reflect-padded
//! up to `P` and gets a single offset 0. A 5152x3864 photograph at `P = 500`
//! therefore yields 11 x 8 = 88 patches.

use std::path::Path;

use thiserror::Error;

pub use crate::imaging::Rect;
use crate::imaging::ImageBuffer;

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("plan built for {plan_w}x{plan_h} but image is {img_w}x{img_h}")]
    PlanMismatch {
        plan_w: usize,
        plan_h: usize,
        img_w: usize,
        img_h: usize,
    },
    #[error("invalid grid parameters: {0}")]
    InvalidParameters(String),
    #[error("{path}: {source}")]
    Imaging {
        path: String,
        source: crate::imaging::ImagingError,
    },
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GridPlan {
    pub width: usize,
    pub height: usize,
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major; coordinates are in the padded image.
    pub rects: Vec<Rect>,
    pub pad_right: usize,
    pub pad_bottom: usize,
}

impl GridPlan {
    pub fn padded_width(&self) -> usize {
        self.width + self.pad_right
    }

    pub fn padded_height(&self) -> usize {
        self.height + self.pad_bottom
    }

    /// Grid position of the rect at `index`.
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

fn axis_offsets(len: usize, patch: usize) -> (Vec<usize>, usize) {
    if len < patch {
        return (vec![0], patch - len);
    }
    let n = len.div_ceil(patch);
    ((0..n).map(|i| (i * patch).min(len - patch)).collect(), 0)
}

pub fn plan_grid(width: usize, height: usize, patch_size: usize) -> Result<GridPlan, PatchError> {
    if width == 0 || height == 0 || patch_size == 0 {
        return Err(PatchError::InvalidParameters(format!(
            "width {width}, height {height}, patch size {patch_size} must all be positive"
        )));
    }
    let (xs, pad_right) = axis_offsets(width, patch_size);
    let (ys, pad_bottom) = axis_offsets(height, patch_size);
    let rects = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| Rect::new(x, y, patch_size, patch_size)))
        .collect();
    Ok(GridPlan {
        width,
        height,
        patch_size,
        rows: ys.len(),
        cols: xs.len(),
        rects,
        pad_right,
        pad_bottom,
    })
}

/// One square crop of a source image.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub row: usize,
    pub col: usize,
    pub rect: Rect,
    pub image: ImageBuffer,
}

/// Map a coordinate in the reflect-padded axis back into `0..len`
/// (mirror about the edge samples, edge not repeated).
fn reflect(i: usize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let m = i % period;
    if m < len {
        m
    } else {
        period - m
    }
}

pub fn extract_patches(img: &ImageBuffer, plan: &GridPlan) -> Result<Vec<Patch>, PatchError> {
    if img.width() != plan.width || img.height() != plan.height {
        return Err(PatchError::PlanMismatch {
            plan_w: plan.width,
            plan_h: plan.height,
            img_w: img.width(),
            img_h: img.height(),
        });
    }
    let patches = plan
        .rects
        .iter()
        .enumerate()
        .map(|(i, &rect)| {
            let (row, col) = plan.position(i);
            let image = ImageBuffer::from_fn(rect.w, rect.h, |dx, dy| {
                img.pixel(
                    reflect(rect.x + dx, img.width()),
                    reflect(rect.y + dy, img.height()),
                )
            });
            Patch { row, col, rect, image }
        })
        .collect();
    Ok(patches)
}

/// `"<source-stem>_r<row>_c<col>"`.
pub fn patch_id(source_name: &str, row: usize, col: usize) -> String {
    format!("{}_r{row}_c{col}", source_stem(source_name))
}

pub fn source_stem(source_name: &str) -> String {
    Path::new(source_name)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| source_name.to_string())
}

/// Inverse of [`patch_id`]: `(stem, row, col)`.
pub fn parse_patch_id(id: &str) -> Option<(&str, usize, usize)> {
    let (rest, col) = id.rsplit_once("_c")?;
    let (stem, row) = rest.rsplit_once("_r")?;
    if stem.is_empty() {
        return None;
    }
    Some((stem, row.parse().ok()?, col.parse().ok()?))
}

fn is_source_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Patch every PNG/JPEG in `input` into `<output>/<patch_id>.png`.
/// Returns the written patch ids, sorted.
pub fn patch_directory(input: &Path, output: &Path, patch_size: usize) -> Result<Vec<String>, PatchError> {
    use rayon::prelude::*;

    let io = |p: &Path, e: std::io::Error| PatchError::Io(format!("{}: {e}", p.display()));
    let mut sources = Vec::new();
    for entry in std::fs::read_dir(input).map_err(|e| io(input, e))? {
        let path = entry.map_err(|e| io(input, e))?.path();
        if path.is_file() && is_source_image(&path) {
            sources.push(path);
        }
    }
    sources.sort();
    std::fs::create_dir_all(output).map_err(|e| io(output, e))?;
    let per_source = sources
        .par_iter()
        .map(|path| {
            let imaging = |source| PatchError::Imaging {
                path: path.display().to_string(),
                source,
            };
            let bytes = std::fs::read(path).map_err(|e| io(path, e))?;
            let img = crate::imaging::decode_image(&bytes).map_err(imaging)?;
            let plan = plan_grid(img.width(), img.height(), patch_size)?;
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let mut ids = Vec::with_capacity(plan.rects.len());
            for patch in extract_patches(&img, &plan)? {
                let id = patch_id(&name, patch.row, patch.col);
                let png = crate::imaging::encode_png(&patch.image).map_err(imaging)?;
                let dest = output.join(format!("{id}.png"));
                std::fs::write(&dest, png).map_err(|e| io(&dest, e))?;
                ids.push(id);
            }
            Ok(ids)
        })
        .collect::<Result<Vec<_>, PatchError>>()?;
    let mut ids: Vec<String> = per_source.into_iter().flatten().collect();
    ids.sort();
    Ok(ids)
}
