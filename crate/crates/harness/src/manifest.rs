//! CSV manifests (`path,label,split`) and PNG decoding.

use std::fs;
use std::path::{Path, PathBuf};

use image::DynamicImage;
use serde::Deserialize;
use siamese_core::data::{Dataset, Sample, Split};
use siamese_core::raster::preprocess;
use siamese_core::{ClassId, Raster};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read manifest {path}: {source}")]
    Manifest {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty dataset")]
    Empty,
    #[error("{path}: missing header row `path,label,split`")]
    Header { path: PathBuf },
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("row {row}: cannot read image {path}: {message}")]
    Image {
        row: usize,
        path: PathBuf,
        message: String,
    },
    #[error("row {row}: {source}")]
    Data {
        row: usize,
        #[source]
        source: siamese_core::data::DataError,
    },
}

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    label: String,
    split: String,
}

/// Decodes `path` into a `channels`-deep raster with values in `[0, 1]`.
/// Grayscale images are replicated across channels; colour images are
/// reduced to luma when a single channel is requested.
pub fn read_image(path: &Path, channels: usize) -> Result<Raster, String> {
    let img = image::open(path).map_err(|e| e.to_string())?;
    decode(&img, channels)
}

fn decode(img: &DynamicImage, channels: usize) -> Result<Raster, String> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f32> = match channels {
        1 => img.to_luma32f().into_raw(),
        3 if img.color().has_color() => img.to_rgb32f().into_raw(),
        _ => img
            .to_luma32f()
            .into_raw()
            .into_iter()
            .flat_map(|v| std::iter::repeat_n(v, channels))
            .collect(),
    };
    Raster::new(
        h,
        w,
        channels,
        data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    )
    .map_err(|e| e.to_string())
}

/// Loads a manifest into a dataset named `name`. Image paths are resolved
/// against the manifest's directory; every image is resized to
/// `shape = (height, width, channels)`. Sample ids are the path column.
pub fn load_manifest(
    path: &Path,
    name: &str,
    shape: (usize, usize, usize),
) -> Result<Dataset, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Manifest {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| LoadError::Row {
        row: 1,
        message: e.to_string(),
    })?;
    if header.iter().collect::<Vec<_>>() != ["path", "label", "split"] {
        return Err(LoadError::Header {
            path: path.to_path_buf(),
        });
    }
    let (h, w, c) = shape;
    let mut samples = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        // header is line 1
        let row = i + 2;
        let rec = rec.map_err(|e| LoadError::Row {
            row,
            message: e.to_string(),
        })?;
        let label: ClassId = rec.label.parse().map_err(|_| LoadError::Row {
            row,
            message: format!("label `{}` is not a non-negative integer", rec.label),
        })?;
        let split = match rec.split.as_str() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(LoadError::Row {
                    row,
                    message: format!("split `{other}` is not one of train, test"),
                })
            }
        };
        let file = base.join(&rec.path);
        let raw = read_image(&file, c).map_err(|message| LoadError::Image {
            row,
            path: file.clone(),
            message,
        })?;
        samples.push(Sample {
            id: rec.path,
            image: preprocess(&raw, h, w).map_err(|e| LoadError::Row {
                row,
                message: e.to_string(),
            })?,
            label,
            source: name.to_string(),
            split,
        });
    }
    if samples.is_empty() {
        return Err(LoadError::Empty);
    }
    let n = samples.len();
    Dataset::with_shape(name, shape, samples)
        .map_err(|source| LoadError::Data { row: n + 1, source })
}

/// Writes `image` as an 8-bit PNG (gray for one channel, RGB for three).
pub fn write_png(image: &Raster, path: &Path) -> Result<(), image::ImageError> {
    let (h, w, c) = image.shape();
    let bytes: Vec<u8> = image
        .data()
        .iter()
        .map(|&v| (v * 255.0).round() as u8)
        .collect();
    let color = if c == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    image::save_buffer(path, &bytes, w as u32, h as u32, color)
}

/// Writes a manifest for `(relative path, label, split)` rows.
pub fn write_manifest(path: &Path, rows: &[(String, ClassId, Split)]) -> std::io::Result<()> {
    let mut out = String::from("path,label,split\n");
    for (p, label, split) in rows {
        let split = match split {
            Split::Train => "train",
            Split::Test => "test",
        };
        out.push_str(&format!("{p},{label},{split}\n"));
    }
    fs::write(path, out)
}
