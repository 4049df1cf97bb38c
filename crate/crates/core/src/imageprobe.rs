//! Image-side perturbations.
//!
//! An image is resized and center-cropped to the model's square input, cut
//! into `N` equal full-width bands (or full-height strips), and each band is
//! either kept in place (importance) or copied to every slot in turn (bias).
//! Everything outside the placed band is painted with the model's RGB mean,
//! which the provider's normalization maps to roughly zero.

use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::imageops::{self, FilterType as ResizeFilter};
use image::{ImageEncoder, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{variant_id, Modality, ModelProfile, Schedule, SegmentationPlan, VariantMode};

/// Direction along which an image is cut into segments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandAxis {
    /// Full-width bands stacked top to bottom; shifted vertically.
    #[default]
    Horizontal,
    /// Full-height strips left to right; shifted horizontally.
    Vertical,
}

/// 8-bit RGB pixels, row-major, before any normalization.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageCanvas {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageCanvas {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageCanvas")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl ImageCanvas {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width as usize * height as usize * 3 {
            return Err(Error::invalid(format!(
                "{width}x{height} canvas needs {} bytes, got {}",
                width as usize * height as usize * 3,
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn filled(width: u32, height: u32, color: [u8; 3]) -> Self {
        let pixels = color
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self { width, height, pixels }
    }

    pub fn from_rgb(img: RgbImage) -> Self {
        let (width, height) = img.dimensions();
        Self {
            width,
            height,
            pixels: img.into_raw(),
        }
    }

    pub fn to_rgb(&self) -> RgbImage {
        RgbImage::from_raw(self.width, self.height, self.pixels.clone())
            .expect("canvas buffer length checked at construction")
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// PNG bytes with fixed encoder settings (fast deflate, no filter), so
    /// identical canvases always yield identical bytes.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::with_capacity(self.pixels.len() / 2);
        PngEncoder::new_with_quality(&mut buf, CompressionType::Fast, FilterType::NoFilter).write_image(
            &self.pixels,
            self.width,
            self.height,
            image::ExtendedColorType::Rgb8,
        )?;
        Ok(buf)
    }

    /// Byte range of the band `[start, start + len)` along `axis` in row `y`
    /// (horizontal bands cover whole rows, so `y` must lie inside the band).
    fn band_bytes(&self, axis: BandAxis, start: usize, len: usize, y: usize) -> std::ops::Range<usize> {
        let row = self.width as usize * 3;
        match axis {
            BandAxis::Horizontal => start * row..(start + len) * row,
            BandAxis::Vertical => y * row + start * 3..y * row + (start + len) * 3,
        }
    }

    /// Copies band `src` of `source` onto band `dst` of `self`.
    fn paste_band(&mut self, source: &ImageCanvas, axis: BandAxis, src: usize, dst: usize, len: usize) {
        match axis {
            BandAxis::Horizontal => {
                let from = source.band_bytes(axis, src, len, 0);
                let to = self.band_bytes(axis, dst, len, 0);
                self.pixels[to].copy_from_slice(&source.pixels[from]);
            }
            BandAxis::Vertical => {
                for y in 0..self.height as usize {
                    let from = source.band_bytes(axis, src, len, y);
                    let to = self.band_bytes(axis, dst, len, y);
                    self.pixels[to].copy_from_slice(&source.pixels[from]);
                }
            }
        }
    }

    /// Raw bytes of band `[start, start + len)`, concatenated row by row.
    pub fn band(&self, axis: BandAxis, start: usize, len: usize) -> Vec<u8> {
        match axis {
            BandAxis::Horizontal => self.pixels[self.band_bytes(axis, start, len, 0)].to_vec(),
            BandAxis::Vertical => (0..self.height as usize)
                .flat_map(|y| self.pixels[self.band_bytes(axis, start, len, y)].iter().copied())
                .collect(),
        }
    }
}

/// Resizes the shorter side to the model resolution (bicubic), then crops
/// the center square.
pub fn preprocess_image(raw: &RgbImage, profile: &ModelProfile) -> Result<ImageCanvas> {
    let (w, h) = raw.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::invalid("image has a zero-length side"));
    }
    let res = profile.image_resolution;
    let short = w.min(h);
    let scaled = |side: u32| -> u32 {
        ((u64::from(side) * u64::from(res) * 2 + u64::from(short)) / (2 * u64::from(short))).max(u64::from(res)) as u32
    };
    let (nw, nh) = (scaled(w), scaled(h));
    let resized;
    let img = if (nw, nh) == (w, h) {
        raw
    } else {
        resized = imageops::resize(raw, nw, nh, ResizeFilter::CatmullRom);
        &resized
    };
    let (x0, y0) = ((nw - res) / 2, (nh - res) / 2);
    let cropped = imageops::crop_imm(img, x0, y0, res, res).to_image();
    Ok(ImageCanvas::from_rgb(cropped))
}

/// Decodes an image file and preprocesses it; failures carry the item id.
pub fn load_canvas(path: &Path, item_id: &str, profile: &ModelProfile) -> Result<ImageCanvas> {
    let img = image::open(path).map_err(|e| Error::ImageIngest {
        item: item_id.to_owned(),
        message: format!("{}: {e}", path.display()),
    })?;
    preprocess_image(&img.to_rgb8(), profile)
}

/// `N` equal bands over the model resolution, one slot per band.
pub fn derive_image_plan(profile: &ModelProfile, segments: usize) -> Result<SegmentationPlan> {
    if segments < 2 {
        return Err(Error::invalid("image plans need at least 2 segments"));
    }
    let res = profile.image_resolution as usize;
    if !res.is_multiple_of(segments) {
        return Err(Error::invalid(format!(
            "resolution {res} not divisible by split count {segments}"
        )));
    }
    let s = res / segments;
    let plan = SegmentationPlan {
        modality: Modality::Image,
        num_segments: segments,
        segment_length: s,
        positions: (0..segments).map(|i| i * s).collect(),
        capacity: res,
        schedule: Schedule::StepEqual,
        patch_aligned: profile.patch_size.is_some_and(|p| s.is_multiple_of(p as usize)),
    };
    plan.validate()?;
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageVariant {
    pub variant_id: String,
    pub mode: VariantMode,
    pub segment_index: usize,
    pub position_index: usize,
    pub canvas: ImageCanvas,
}

fn check(canvas: &ImageCanvas, plan: &SegmentationPlan, profile: &ModelProfile) -> Result<()> {
    if plan.modality != Modality::Image {
        return Err(Error::invalid("image variants need an image plan"));
    }
    plan.validate()?;
    let res = profile.image_resolution;
    if canvas.width != res || canvas.height != res {
        return Err(Error::invalid(format!(
            "canvas is {}x{}, expected {res}x{res}; preprocess first",
            canvas.width, canvas.height
        )));
    }
    if plan.capacity != res as usize {
        return Err(Error::invalid("plan capacity does not match the image resolution"));
    }
    Ok(())
}

fn placed(
    canvas: &ImageCanvas,
    plan: &SegmentationPlan,
    profile: &ModelProfile,
    axis: BandAxis,
    segment: usize,
    offset: usize,
) -> ImageCanvas {
    let s = plan.segment_length;
    let mut out = ImageCanvas::filled(canvas.width, canvas.height, profile.mean_fill());
    out.paste_band(canvas, axis, segment * s, offset, s);
    out
}

/// Variant `k` keeps band `k` in place and mean-fills everything else.
pub fn make_image_importance_variants(
    item_id: &str,
    canvas: &ImageCanvas,
    plan: &SegmentationPlan,
    profile: &ModelProfile,
    axis: BandAxis,
) -> Result<Vec<ImageVariant>> {
    check(canvas, plan, profile)?;
    Ok((0..plan.num_segments)
        .map(|k| ImageVariant {
            variant_id: variant_id(item_id, VariantMode::Importance, k, k),
            mode: VariantMode::Importance,
            segment_index: k,
            position_index: k,
            canvas: placed(canvas, plan, profile, axis, k, k * plan.segment_length),
        })
        .collect())
}

/// Variant `(k, j)` copies band `k` to slot `plan.positions[j]`; segment-major.
pub fn make_image_bias_variants(
    item_id: &str,
    canvas: &ImageCanvas,
    plan: &SegmentationPlan,
    profile: &ModelProfile,
    axis: BandAxis,
) -> Result<Vec<ImageVariant>> {
    check(canvas, plan, profile)?;
    let mut out = Vec::with_capacity(plan.num_segments * plan.num_positions());
    for k in 0..plan.num_segments {
        for (j, &offset) in plan.positions.iter().enumerate() {
            out.push(ImageVariant {
                variant_id: variant_id(item_id, VariantMode::BiasMask, k, j),
                mode: VariantMode::BiasMask,
                segment_index: k,
                position_index: j,
                canvas: placed(canvas, plan, profile, axis, k, offset),
            });
        }
    }
    Ok(out)
}
