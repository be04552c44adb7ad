//! Image buffers produced and consumed by the renderer and the view metrics,
//! with their PNG encodings.
//!
//! On-disk formats:
//! - masks: 8-bit single-channel PNG, 0 background / 255 foreground;
//! - depth: 16-bit single-channel PNG, 0 background, foreground linearly
//!   mapped to 1..=65535 between the `near`/`far` values recorded in a JSON
//!   sidecar (`{"near": .., "far": ..}`);
//! - normal maps: 8-bit RGB PNG storing `(n · 0.5 + 0.5) · 255` per channel;
//!   the zero vector (background) decodes from any pixel with norm < 0.5;
//! - instance maps: 16-bit single-channel PNG of instance ids, 0 background.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Vec3;

#[derive(Error, Debug)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("png error on {path}: {message}")]
    Png { path: PathBuf, message: String },
    #[error("resolution mismatch: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(u32, u32, u32, u32),
    #[error("buffer length {len} does not match {width}x{height}")]
    BadBufferLength { len: usize, width: u32, height: u32 },
    #[error("depth sidecar missing or malformed at {path}: {message}")]
    Sidecar { path: PathBuf, message: String },
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ImageError + '_ {
    move |source| ImageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn png_err(path: &Path) -> impl Fn(image::ImageError) -> ImageError + '_ {
    move |e| ImageError::Png {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

macro_rules! pixel_buffer {
    ($name:ident, $elem:ty, $zero:expr) => {
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            width: u32,
            height: u32,
            data: Vec<$elem>,
        }

        impl $name {
            pub fn new(width: u32, height: u32) -> Self {
                Self {
                    width,
                    height,
                    data: vec![$zero; (width * height) as usize],
                }
            }

            pub fn from_data(width: u32, height: u32, data: Vec<$elem>) -> Result<Self, ImageError> {
                if data.len() != (width * height) as usize {
                    return Err(ImageError::BadBufferLength {
                        len: data.len(),
                        width,
                        height,
                    });
                }
                Ok(Self { width, height, data })
            }

            pub fn width(&self) -> u32 {
                self.width
            }

            pub fn height(&self) -> u32 {
                self.height
            }

            pub fn get(&self, x: u32, y: u32) -> $elem {
                self.data[(y * self.width + x) as usize]
            }

            pub fn set(&mut self, x: u32, y: u32, value: $elem) {
                self.data[(y * self.width + x) as usize] = value;
            }

            pub fn data(&self) -> &[$elem] {
                &self.data
            }

            pub fn same_resolution(&self, other: &Self) -> Result<(), ImageError> {
                if self.width != other.width || self.height != other.height {
                    return Err(ImageError::ResolutionMismatch(
                        self.width,
                        self.height,
                        other.width,
                        other.height,
                    ));
                }
                Ok(())
            }
        }
    };
}

pixel_buffer!(Mask, bool, false);
pixel_buffer!(DepthMap, f64, 0.0);
pixel_buffer!(NormalMap, Vec3, Vec3::ZERO);
pixel_buffer!(InstanceMap, u16, 0);
pixel_buffer!(GrayImage, u8, 255);

impl Mask {
    pub fn count_foreground(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&b| !b)
    }

    /// Foreground pixel coordinates in row-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let w = self.width;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| (i as u32 % w, i as u32 / w))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let buf: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        let img = image::GrayImage::from_raw(self.width, self.height, buf).unwrap();
        img.save(path).map_err(png_err(path))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(png_err(path))?.into_luma8();
        let (w, h) = img.dimensions();
        let data = img.into_raw().into_iter().map(|v| v > 0).collect();
        Mask::from_data(w, h, data)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthSidecar {
    near: f64,
    far: f64,
}

impl DepthMap {
    /// Saves the 16-bit PNG and its `<stem>.json` near/far sidecar.
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let fg: Vec<f64> = self.data.iter().copied().filter(|&d| d > 0.0).collect();
        let near = fg.iter().copied().fold(f64::INFINITY, f64::min);
        let far = fg.iter().copied().fold(0.0f64, f64::max);
        let (near, far) = if fg.is_empty() { (0.0, 0.0) } else { (near, far) };
        let span = (far - near).max(f64::MIN_POSITIVE);
        let buf: Vec<u16> = self
            .data
            .iter()
            .map(|&d| {
                if d <= 0.0 {
                    0
                } else {
                    1 + ((d - near) / span * 65534.0).round() as u16
                }
            })
            .collect();
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, buf).unwrap();
        img.save(path).map_err(png_err(path))?;
        let sidecar_path = path.with_extension("json");
        let json = serde_json::to_string(&DepthSidecar { near, far }).unwrap();
        std::fs::write(&sidecar_path, json).map_err(io_err(&sidecar_path))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(png_err(path))?.into_luma16();
        let (w, h) = img.dimensions();
        let sidecar_path = path.with_extension("json");
        let text = std::fs::read_to_string(&sidecar_path).map_err(|e| ImageError::Sidecar {
            path: sidecar_path.clone(),
            message: e.to_string(),
        })?;
        let sidecar: DepthSidecar =
            serde_json::from_str(&text).map_err(|e| ImageError::Sidecar {
                path: sidecar_path.clone(),
                message: e.to_string(),
            })?;
        let span = sidecar.far - sidecar.near;
        let data = img
            .into_raw()
            .into_iter()
            .map(|v| {
                if v == 0 {
                    0.0
                } else {
                    sidecar.near + (v - 1) as f64 / 65534.0 * span
                }
            })
            .collect();
        DepthMap::from_data(w, h, data)
    }
}

impl NormalMap {
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let mut buf = Vec::with_capacity(self.data.len() * 3);
        for n in &self.data {
            for c in [n.x, n.y, n.z] {
                buf.push(((c * 0.5 + 0.5) * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        let img = image::RgbImage::from_raw(self.width, self.height, buf).unwrap();
        img.save(path).map_err(png_err(path))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(png_err(path))?.into_rgb8();
        let (w, h) = img.dimensions();
        let raw = img.into_raw();
        let data = raw
            .chunks_exact(3)
            .map(|c| {
                let v = Vec3::new(
                    c[0] as f64 / 255.0 * 2.0 - 1.0,
                    c[1] as f64 / 255.0 * 2.0 - 1.0,
                    c[2] as f64 / 255.0 * 2.0 - 1.0,
                );
                if v.norm() < 0.5 {
                    Vec3::ZERO
                } else {
                    v.normalized().unwrap()
                }
            })
            .collect();
        NormalMap::from_data(w, h, data)
    }

    /// True where the pixel carries a unit normal.
    pub fn is_valid(&self, x: u32, y: u32) -> bool {
        self.get(x, y) != Vec3::ZERO
    }
}

impl InstanceMap {
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let img: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
            image::ImageBuffer::from_raw(self.width, self.height, self.data.clone()).unwrap();
        img.save(path).map_err(png_err(path))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(png_err(path))?.into_luma16();
        let (w, h) = img.dimensions();
        InstanceMap::from_data(w, h, img.into_raw())
    }

    /// Binary mask of the pixels carrying `id`.
    pub fn mask_of(&self, id: u16) -> Mask {
        Mask::from_data(
            self.width,
            self.height,
            self.data.iter().map(|&v| v == id).collect(),
        )
        .unwrap()
    }
}

impl GrayImage {
    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        let img = image::GrayImage::from_raw(self.width, self.height, self.data.clone()).unwrap();
        img.save(path).map_err(png_err(path))
    }

    pub fn load_png(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(png_err(path))?.into_luma8();
        let (w, h) = img.dimensions();
        GrayImage::from_data(w, h, img.into_raw())
    }
}
