use std::path::Path;

use ndarray::Array4;
use rayon::prelude::*;

use super::HarnessError;
use crate::dataset::{Manifest, Split};
use crate::filter::patch_path;
use crate::imaging::{decode_image, resize_bilinear, ImageBuffer};
use crate::model::{batch_from_images, Scalar};

/// Decoded, model-sized patches with their class indices.
#[derive(Clone, Debug, Default)]
pub struct SampleSet {
    pub ids: Vec<String>,
    pub images: Vec<ImageBuffer>,
    pub labels: Vec<usize>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Load `ids` from `patch_dir`, resizing each to `size x size`.
    pub fn load(manifest: &Manifest, ids: &[String], patch_dir: &Path, size: usize) -> Result<Self, HarnessError> {
        let labels = ids
            .iter()
            .map(|id| {
                manifest
                    .get(id)
                    .map(|r| r.class.index())
                    .ok_or_else(|| HarnessError::DataUnavailable(format!("{id}: not in manifest")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let images = ids
            .par_iter()
            .map(|id| {
                let path = patch_path(patch_dir, id);
                let bytes = std::fs::read(&path)
                    .map_err(|e| HarnessError::DataUnavailable(format!("{}: {e}", path.display())))?;
                let img = decode_image(&bytes)
                    .map_err(|e| HarnessError::DataUnavailable(format!("{}: {e}", path.display())))?;
                Ok(if img.width() == size && img.height() == size {
                    img
                } else {
                    resize_bilinear(&img, size, size)
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Self {
            ids: ids.to_vec(),
            images,
            labels,
        })
    }

    /// Rows of `manifest` whose split column equals `split`.
    pub fn load_split(manifest: &Manifest, split: Split, patch_dir: &Path, size: usize) -> Result<Self, HarnessError> {
        let ids: Vec<String> = manifest
            .rows()
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.patch_id.clone())
            .collect();
        Self::load(manifest, &ids, patch_dir, size)
    }

    pub fn from_parts(ids: Vec<String>, images: Vec<ImageBuffer>, labels: Vec<usize>) -> Self {
        assert!(ids.len() == images.len() && ids.len() == labels.len());
        Self { ids, images, labels }
    }

    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Array4<T>, Vec<usize>) {
        let imgs: Vec<&ImageBuffer> = indices.iter().map(|&i| &self.images[i]).collect();
        (batch_from_images(&imgs), indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Sizes of consecutive batches covering `n` samples.
pub fn batch_sizes(n: usize, batch: usize) -> Vec<usize> {
    assert!(batch > 0);
    (0..n.div_ceil(batch)).map(|i| batch.min(n - i * batch)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batching_arithmetic() {
        let sizes = batch_sizes(250, 45);
        assert_eq!(sizes, vec![45, 45, 45, 45, 45, 25]);
        assert_eq!(sizes.iter().sum::<usize>(), 250);
        assert_eq!(batch_sizes(90, 45), vec![45, 45]);
        assert!(batch_sizes(0, 45).is_empty());
    }
}
