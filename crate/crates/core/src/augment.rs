//! Label-preserving, seeded augmentation for training batches.
//!
//! Microscopy patches have no canonical orientation, so the policy is built
//! from flips, right-angle rotations and a small additive brightness shift.
//! Every call draws exactly four values from the stream (h-flip, v-flip,
//! rotation, jitter) regardless of the policy, so streams stay aligned when
//! a policy toggles an operation off.

use serde::{Deserialize, Serialize};

use crate::imaging::ImageBuffer;
use crate::rng::SeededStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentPolicy {
    pub horizontal_flip: f64,
    pub vertical_flip: f64,
    /// Uniform choice among 0, 90, 180 and 270 degrees.
    pub rotation: bool,
    /// Maximum absolute brightness shift, in luminance units.
    pub brightness_jitter: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            horizontal_flip: 0.5,
            vertical_flip: 0.5,
            rotation: true,
            brightness_jitter: 0.05,
        }
    }
}

impl AugmentPolicy {
    pub const IDENTITY: AugmentPolicy = AugmentPolicy {
        horizontal_flip: 0.0,
        vertical_flip: 0.0,
        rotation: false,
        brightness_jitter: 0.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        for (name, p) in [("horizontal_flip", self.horizontal_flip), ("vertical_flip", self.vertical_flip)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(0.0..=0.5).contains(&self.brightness_jitter) {
            return Err(format!(
                "brightness_jitter {} outside [0, 0.5]",
                self.brightness_jitter
            ));
        }
        Ok(())
    }
}

/// The concrete operations chosen for one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub flip_h: bool,
    pub flip_v: bool,
    pub quarter_turns: u8,
    pub brightness: f64,
}

impl AugmentDraw {
    pub fn sample(policy: &AugmentPolicy, stream: &mut SeededStream) -> Self {
        let flip_h = stream.bernoulli(policy.horizontal_flip);
        let flip_v = stream.bernoulli(policy.vertical_flip);
        let turns = stream.below(4) as u8;
        let jitter = stream.uniform(-1.0, 1.0);
        Self {
            flip_h,
            flip_v,
            quarter_turns: if policy.rotation { turns } else { 0 },
            brightness: jitter * policy.brightness_jitter,
        }
    }

    pub fn apply(&self, img: &ImageBuffer) -> ImageBuffer {
        let mut out = img.clone();
        if self.flip_h {
            out = flip_horizontal(&out);
        }
        if self.flip_v {
            out = flip_vertical(&out);
        }
        for _ in 0..self.quarter_turns {
            out = rotate90(&out);
        }
        if self.brightness != 0.0 {
            shift_brightness(&mut out, self.brightness);
        }
        out
    }
}

pub fn flip_horizontal(img: &ImageBuffer) -> ImageBuffer {
    let w = img.width();
    ImageBuffer::from_fn(w, img.height(), |x, y| img.pixel(w - 1 - x, y))
}

pub fn flip_vertical(img: &ImageBuffer) -> ImageBuffer {
    let h = img.height();
    ImageBuffer::from_fn(img.width(), h, |x, y| img.pixel(x, h - 1 - y))
}

/// Clockwise quarter turn.
pub fn rotate90(img: &ImageBuffer) -> ImageBuffer {
    let h = img.height();
    ImageBuffer::from_fn(h, img.width(), |x, y| img.pixel(y, h - 1 - x))
}

/// Add `delta` (luminance units) to every channel, clamped to the valid range.
pub fn shift_brightness(img: &mut ImageBuffer, delta: f64) {
    let offset = delta * 255.0;
    for v in img.data_mut() {
        *v = (*v as f64 + offset).round().clamp(0.0, 255.0) as u8;
    }
}

/// Augment one square patch.
pub fn augment(patch: &ImageBuffer, policy: &AugmentPolicy, stream: &mut SeededStream) -> ImageBuffer {
    debug_assert_eq!(patch.width(), patch.height(), "augmentation expects square patches");
    AugmentDraw::sample(policy, stream).apply(patch)
}
