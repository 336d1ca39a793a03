//! PNG export of predicted masks and heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::dataset::GroupSample;
use crate::error::{GresError, Result};
use crate::model::ImageInference;
use crate::tensor::Tensor;

fn save_gray(width: usize, height: usize, bytes: Vec<u8>, path: &Path) -> Result<()> {
    let img = GrayImage::from_raw(width as u32, height as u32, bytes)
        .ok_or_else(|| GresError::InvalidInput(format!("{}: bad buffer", path.display())))?;
    img.save(path).map_err(|source| GresError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Maps similarities in `[-1, 1]` to gray levels, upsampled by `scale` (nearest).
pub fn heatmap_bytes(values: &Tensor, scale: usize) -> Result<(usize, usize, Vec<u8>)> {
    let &[h, w] = values.shape() else {
        return Err(GresError::InvalidInput(format!(
            "heatmap must be 2-D, got shape {:?}",
            values.shape()
        )));
    };
    let scale = scale.max(1);
    let (oh, ow) = (h * scale, w * scale);
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let v = values.data()[(y / scale) * w + x / scale].clamp(-1.0, 1.0);
            out.push(((v + 1.0) * 0.5 * 255.0).round() as u8);
        }
    }
    Ok((oh, ow, out))
}

/// Writes a `{0,1}` mask as a `{0,255}` PNG.
pub fn write_mask_png(mask: &[u8], height: usize, width: usize, path: &Path) -> Result<()> {
    if mask.len() != height * width {
        return Err(GresError::shape(&[height * width], &[mask.len()]));
    }
    save_gray(width, height, mask.iter().map(|&m| if m != 0 { 255 } else { 0 }).collect(), path)
}

/// File-name-safe stem of an image id such as `images/g00001_2.png`.
pub fn image_stem(image_id: &str) -> String {
    let base = Path::new(image_id)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| image_id.to_string());
    base.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect()
}

/// Writes every heatmap of every image in `group`: slot 0 is the language
/// heatmap, slots 1.. are the ranked vision heatmaps.
///
/// Returns the written paths in image-then-slot order.
pub fn dump_heatmaps(group: &GroupSample, outputs: &[ImageInference], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| GresError::io(dir, e))?;
    let mut written = Vec::new();
    for (record, out) in group.images.iter().zip(outputs) {
        let stem = image_stem(&record.image_id);
        for (slot, map) in out.heatmaps.iter().enumerate() {
            let fh = map.values.shape().first().copied().unwrap_or(1).max(1);
            let (h, w, bytes) = heatmap_bytes(&map.values, record.height / fh)?;
            let path = dir.join(format!("{}_{stem}_slot{slot}.png", group.group_id));
            save_gray(w, h, bytes, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Writes each image's emitted mask.
pub fn dump_masks(group: &GroupSample, outputs: &[ImageInference], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| GresError::io(dir, e))?;
    let mut written = Vec::new();
    for (record, out) in group.images.iter().zip(outputs) {
        let path = dir.join(format!("{}_{}_mask.png", group.group_id, image_stem(&record.image_id)));
        write_mask_png(&out.mask, record.height, record.width, &path)?;
        written.push(path);
    }
    Ok(written)
}
