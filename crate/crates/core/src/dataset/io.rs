use std::fs;
use std::path::Path;

use image::{GrayImage, RgbImage};
use log::warn;

use super::{DatasetManifest, GroupSample, ImageRecord, SyntheticCorpus};
use crate::error::{GresError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| GresError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(path, text).map_err(|e| GresError::io(path, e))
}

/// Writes `manifest.json` plus every image and mask PNG under `dir`.
pub fn write_corpus(corpus: &SyntheticCorpus, dir: &Path) -> Result<()> {
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| GresError::io(&p, e))?;
    }
    for (entry, sample) in corpus.manifest.groups.iter().zip(&corpus.groups) {
        for (img, rec) in entry.images.iter().zip(&sample.images) {
            let path = dir.join(&img.path);
            let rgb = RgbImage::from_raw(rec.width as u32, rec.height as u32, rec.pixels.clone())
                .ok_or_else(|| GresError::Dataset(format!("{}: bad pixel buffer", rec.image_id)))?;
            rgb.save(&path).map_err(|source| GresError::Image {
                path: path.clone(),
                source,
            })?;
            if let (Some(mask_path), Some(mask)) = (&img.mask_path, &rec.mask) {
                let path = dir.join(mask_path);
                let bytes = mask.iter().map(|&m| m * 255).collect();
                let gray = GrayImage::from_raw(rec.width as u32, rec.height as u32, bytes)
                    .ok_or_else(|| GresError::Dataset(format!("{}: bad mask buffer", rec.image_id)))?;
                gray.save(&path).map_err(|source| GresError::Image {
                    path: path.clone(),
                    source,
                })?;
            }
        }
    }
    write_manifest(&corpus.manifest, &dir.join(MANIFEST_FILE))
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.exists() {
        return Err(GresError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file is missing"),
        ));
    }
    image::open(path).map_err(|source| GresError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a single-channel mask and binarizes it at half its maximum value.
///
/// Returns the `{0,1}` mask and whether the source held values other than `{0, max}`.
pub(crate) fn read_mask(path: &Path) -> Result<(usize, usize, Vec<u8>, bool)> {
    let gray = open_image(path)?.into_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let raw = gray.into_raw();
    let max = raw.iter().copied().max().unwrap_or(0);
    let mixed = raw.iter().any(|&v| v != 0 && v != max);
    let bits = raw
        .iter()
        .map(|&v| u8::from(max > 0 && u16::from(v) * 2 >= u16::from(max)))
        .collect();
    Ok((h, w, bits, mixed))
}

/// Decodes one group of `manifest`, resolving paths against `root`.
pub fn load_group(manifest: &DatasetManifest, root: &Path, group_id: &str) -> Result<GroupSample> {
    let entry = manifest
        .group(group_id)
        .ok_or_else(|| GresError::Dataset(format!("group {group_id} not in manifest")))?;
    let mut images = Vec::with_capacity(entry.images.len());
    for img in &entry.images {
        let path = root.join(&img.path);
        let rgb = open_image(&path)?.into_rgb8();
        let (w, h) = (rgb.width() as usize, rgb.height() as usize);
        let mask = match &img.mask_path {
            Some(mp) => {
                let (mh, mw, bits, mixed) = read_mask(&root.join(mp))?;
                if (mh, mw) != (h, w) {
                    return Err(GresError::Dataset(format!(
                        "{}: mask is {mw}×{mh}, image is {w}×{h}",
                        img.path
                    )));
                }
                if mixed {
                    warn!("{mp}: mask is not binary; thresholding at half of its maximum");
                }
                Some(bits)
            }
            None => None,
        };
        images.push(ImageRecord::new(
            img.path.clone(),
            h,
            w,
            rgb.into_raw(),
            mask,
            img.is_positive,
        )?);
    }
    Ok(GroupSample {
        group_id: entry.group_id.clone(),
        expression: entry.expression.clone(),
        images,
    })
}

/// Loads `dir/manifest.json` and decodes every group it lists.
pub fn load_split(dir: &Path) -> Result<(DatasetManifest, Vec<GroupSample>)> {
    let manifest = load_manifest(&dir.join(MANIFEST_FILE))?;
    let groups = manifest
        .groups
        .iter()
        .map(|g| load_group(&manifest, dir, &g.group_id))
        .collect::<Result<Vec<_>>>()?;
    Ok((manifest, groups))
}
