//! On-disk light-field containers.
//!
//! A container is a directory holding `meta.json` and either one 8-bit PNG
//! per view (`view_<u>_<v>.png`, each `H x W`) or a single lenslet mosaic
//! (`mosaic.png`, `(H*A) x (W*A)`). Both layouts decode to identical fields.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::lightfield::{Image, LightField, PerspectiveImage};

pub const META_FILE: &str = "meta.json";
pub const MOSAIC_FILE: &str = "mosaic.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub height: usize,
    pub width: usize,
    pub angular: usize,
    pub channels: usize,
    pub bit_depth: u32,
}

impl ContainerMeta {
    pub fn of(lf: &LightField) -> Self {
        Self {
            height: lf.height(),
            width: lf.width(),
            angular: lf.angular(),
            channels: lf.channels(),
            bit_depth: 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Views,
    Mosaic,
}

pub fn view_file_name(u: usize, v: usize) -> String {
    format!("view_{u}_{v}.png")
}

fn container_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Container {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn read_meta(dir: &Path) -> Result<ContainerMeta> {
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ContainerMeta =
        serde_json::from_str(&text).map_err(|source| Error::Json { path: path.clone(), source })?;
    if meta.bit_depth != 8 {
        return Err(container_err(
            dir,
            format!("unsupported bit depth {} (only 8 is supported)", meta.bit_depth),
        ));
    }
    if !(meta.channels == 1 || meta.channels == 3) {
        return Err(container_err(dir, format!("unsupported channel count {}", meta.channels)));
    }
    if meta.height == 0 || meta.width == 0 || meta.angular == 0 {
        return Err(container_err(dir, "zero dimension in meta.json"));
    }
    Ok(meta)
}

fn has_view_files(dir: &Path) -> Result<bool> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("view_") && name.ends_with(".png") {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Loads a container, auto-detecting its layout. If both layouts are present
/// they must decode to the same field.
pub fn read_container(dir: &Path) -> Result<LightField> {
    let meta = read_meta(dir)?;
    let has_mosaic = dir.join(MOSAIC_FILE).is_file();
    let has_views = has_view_files(dir)?;
    match (has_views, has_mosaic) {
        (true, true) => {
            let a = read_views(dir, &meta)?;
            let b = read_mosaic(dir, &meta)?;
            if a != b {
                return Err(container_err(
                    dir,
                    "ambiguous layout: view files and mosaic.png disagree",
                ));
            }
            Ok(a)
        }
        (true, false) => read_views(dir, &meta),
        (false, true) => read_mosaic(dir, &meta),
        (false, false) => Err(container_err(dir, "no view_<u>_<v>.png files and no mosaic.png")),
    }
}

fn read_png(path: &Path, channels: usize) -> Result<Image> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match (channels, img) {
        (1, DynamicImage::ImageLuma8(g)) => g.into_raw().into_iter().map(decode).collect(),
        (3, DynamicImage::ImageRgb8(rgb)) => {
            let raw = rgb.into_raw();
            (0..3)
                .flat_map(|c| raw.iter().skip(c).step_by(3).copied().map(decode).collect::<Vec<_>>())
                .collect()
        }
        (_, other) => {
            return Err(container_err(
                path,
                format!("expected 8-bit {channels}-channel PNG, found {:?}", other.color()),
            ))
        }
    };
    Image::new(channels, h, w, data)
}

fn read_views(dir: &Path, meta: &ContainerMeta) -> Result<LightField> {
    let mut views = Vec::with_capacity(meta.angular * meta.angular);
    for u in 0..meta.angular {
        for v in 0..meta.angular {
            let path = dir.join(view_file_name(u, v));
            if !path.is_file() {
                return Err(Error::MissingView { u, v });
            }
            let image = read_png(&path, meta.channels)?;
            if (image.height(), image.width()) != (meta.height, meta.width) {
                return Err(container_err(
                    &path,
                    format!(
                        "view is {}x{}, meta.json says {}x{}",
                        image.height(),
                        image.width(),
                        meta.height,
                        meta.width
                    ),
                ));
            }
            views.push(PerspectiveImage {
                angular_index: (u, v),
                image,
            });
        }
    }
    LightField::from_perspectives(meta.angular, views)
}

fn read_mosaic(dir: &Path, meta: &ContainerMeta) -> Result<LightField> {
    let path = dir.join(MOSAIC_FILE);
    let mosaic = read_png(&path, meta.channels)?;
    let lf = LightField::from_lenslet_mosaic(&mosaic, meta.angular)?;
    if (lf.height(), lf.width()) != (meta.height, meta.width) {
        return Err(container_err(
            &path,
            format!(
                "mosaic holds {}x{} lenslets, meta.json says {}x{}",
                lf.height(),
                lf.width(),
                meta.height,
                meta.width
            ),
        ));
    }
    Ok(lf)
}

#[inline]
fn decode(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Quantizes a `[0, 1]` sample to 8 bits, rounding half up and clamping.
#[inline]
pub fn encode(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Round-trips a field through 8-bit quantization without touching disk.
pub fn quantize(lf: &LightField) -> LightField {
    let data = lf.data().iter().map(|&v| decode(encode(v))).collect();
    LightField::new(lf.channels(), lf.height(), lf.width(), lf.angular(), data)
        .expect("quantized samples stay in range")
}

fn encode_png(img: &Image) -> Result<DynamicImage> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => {
            let raw = img.data().iter().map(|&v| encode(v)).collect();
            Ok(DynamicImage::ImageLuma8(
                GrayImage::from_raw(w, h, raw).expect("buffer sized from image"),
            ))
        }
        3 => {
            let n = img.height() * img.width();
            let mut raw = Vec::with_capacity(3 * n);
            for i in 0..n {
                for c in 0..3 {
                    raw.push(encode(img.plane(c)[i]));
                }
            }
            Ok(DynamicImage::ImageRgb8(
                RgbImage::from_raw(w, h, raw).expect("buffer sized from image"),
            ))
        }
        n => Err(Error::ChannelCount {
            expected: 3,
            found: n,
        }),
    }
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    encode_png(img)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

fn write_contents(lf: &LightField, dir: &Path, layout: Layout) -> Result<()> {
    let meta = serde_json::to_string_pretty(&ContainerMeta::of(lf)).expect("meta serializes");
    let meta_path = dir.join(META_FILE);
    fs::write(&meta_path, meta + "\n").map_err(|e| Error::io(&meta_path, e))?;
    match layout {
        Layout::Mosaic => write_png(&dir.join(MOSAIC_FILE), &lf.to_lenslet_mosaic()),
        Layout::Views => {
            for view in lf.perspectives() {
                let (u, v) = view.angular_index;
                write_png(&dir.join(view_file_name(u, v)), &view.image)?;
            }
            Ok(())
        }
    }
}

/// Writes `lf` as a container at `dir`, replacing any previous content only
/// once the new container is complete.
pub fn write_container(lf: &LightField, dir: &Path, layout: Layout) -> Result<PathBuf> {
    fsutil::replace_dir(dir, |tmp| write_contents(lf, tmp, layout))?;
    Ok(dir.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn encode_rounds_half_up_and_clamps() {
        assert_eq!(encode(0.0), 0);
        assert_eq!(encode(1.0), 255);
        assert_eq!(encode(0.5), 128);
        assert_eq!(encode(-0.2), 0);
        assert_eq!(encode(1.7), 255);
        for q in 0..=255u8 {
            assert_eq!(encode(decode(q)), q);
        }
    }

    #[test]
    fn both_layouts_load_identically() {
        let lf = quantize(&synthetic::smooth_field(3, 5, 4, 6, 11));
        let tmp = tempfile::tempdir().unwrap();
        let views = tmp.path().join("views");
        let mosaic = tmp.path().join("mosaic");
        write_container(&lf, &views, Layout::Views).unwrap();
        write_container(&lf, &mosaic, Layout::Mosaic).unwrap();
        let a = read_container(&views).unwrap();
        let b = read_container(&mosaic).unwrap();
        assert_eq!(a, lf);
        assert_eq!(b, lf);
    }

    #[test]
    fn grayscale_container_round_trip() {
        let lf = quantize(&synthetic::smooth_field(1, 3, 3, 4, 2));
        let tmp = tempfile::tempdir().unwrap();
        write_container(&lf, tmp.path(), Layout::Views).unwrap();
        assert_eq!(read_container(tmp.path()).unwrap(), lf);
    }

    #[test]
    fn consistent_dual_layout_accepted_conflicting_rejected() {
        let lf = quantize(&synthetic::smooth_field(1, 3, 3, 2, 5));
        let tmp = tempfile::tempdir().unwrap();
        write_container(&lf, tmp.path(), Layout::Views).unwrap();
        write_png(&tmp.path().join(MOSAIC_FILE), &lf.to_lenslet_mosaic()).unwrap();
        assert_eq!(read_container(tmp.path()).unwrap(), lf);

        let other = LightField::constant(1, 3, 3, 2, 0.0).unwrap();
        write_png(&tmp.path().join(MOSAIC_FILE), &other.to_lenslet_mosaic()).unwrap();
        let err = read_container(tmp.path()).unwrap_err();
        assert!(err.to_string().contains("ambiguous"), "{err}");
    }

    #[test]
    fn missing_view_names_index() {
        let lf = LightField::constant(1, 2, 2, 2, 0.5).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        write_container(&lf, tmp.path(), Layout::Views).unwrap();
        fs::remove_file(tmp.path().join(view_file_name(1, 0))).unwrap();
        assert!(matches!(
            read_container(tmp.path()),
            Err(Error::MissingView { u: 1, v: 0 })
        ));
    }

    #[test]
    fn mosaic_size_must_divide() {
        let tmp = tempfile::tempdir().unwrap();
        let meta = ContainerMeta {
            height: 2,
            width: 2,
            angular: 3,
            channels: 1,
            bit_depth: 8,
        };
        fs::write(tmp.path().join(META_FILE), serde_json::to_string(&meta).unwrap()).unwrap();
        write_png(&tmp.path().join(MOSAIC_FILE), &Image::filled(1, 6, 7, 0.5)).unwrap();
        assert!(matches!(
            read_container(tmp.path()),
            Err(Error::NotDivisible { axis: "mosaic width", .. })
        ));
    }
}
