//! Frame directories and the raw tensor dump.
//!
//! Dump layout: `b"L4DT"`, then frames, height, width, channels as `u32` LE,
//! then the payload as `f32` LE in tensor order.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor4, VideoTensor};

pub const DUMP_MAGIC: &[u8; 4] = b"L4DT";
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameFormat {
    #[default]
    Png,
    Ppm,
}

impl FrameFormat {
    pub fn extension(self) -> &'static str {
        match self {
            FrameFormat::Png => "png",
            FrameFormat::Ppm => "ppm",
        }
    }
}

pub fn frame_file_name(index: usize, format: FrameFormat) -> String {
    format!("frame_{index:04}.{}", format.extension())
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes one file per frame, quantized to 8 bits. Returns the paths written.
pub fn write_frames(dir: &Path, video: &VideoTensor, format: FrameFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let s = video.shape();
    let mut paths = Vec::with_capacity(s.frames);
    for f in 0..s.frames {
        let path = dir.join(frame_file_name(f, format));
        let bytes: Vec<u8> = video.frame(f).iter().map(|&v| quantize(v)).collect();
        let img_err = |source| Error::Image {
            path: path.clone(),
            source,
        };
        match format {
            FrameFormat::Png => {
                let color = if s.channels == 1 {
                    ExtendedColorType::L8
                } else {
                    ExtendedColorType::Rgb8
                };
                image::save_buffer_with_format(
                    &path,
                    &bytes,
                    s.width as u32,
                    s.height as u32,
                    color,
                    image::ImageFormat::Png,
                )
                .map_err(img_err)?;
            }
            FrameFormat::Ppm => {
                // P6 is RGB only; grey frames are replicated.
                let rgb: Vec<u8> = if s.channels == 1 {
                    bytes.iter().flat_map(|&b| [b, b, b]).collect()
                } else {
                    bytes
                };
                let file = fs::File::create(&path)?;
                PnmEncoder::new(std::io::BufWriter::new(file))
                    .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
                    .write_image(&rgb, s.width as u32, s.height as u32, ExtendedColorType::Rgb8)
                    .map_err(img_err)?;
            }
        }
        paths.push(path);
    }
    Ok(paths)
}

/// Sorted `frame_*.png` / `frame_*.ppm` files in `dir`.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
            name.starts_with("frame_") && matches!(ext, "png" | "ppm")
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Loads every frame of a directory written by [`write_frames`] (or any
/// equal-sized `frame_NNNN` images) into a video in [0, 1].
pub fn read_frames(dir: &Path) -> Result<VideoTensor> {
    let paths = list_frames(dir)?;
    if paths.is_empty() {
        return Err(Error::EmptyDirectory(dir.to_path_buf()));
    }
    let mut frames = Vec::with_capacity(paths.len());
    let mut dims: Option<(u32, u32, usize)> = None;
    for path in &paths {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.clone(),
            source,
        })?;
        let (w, h) = (img.width(), img.height());
        let (channels, raw) = match img {
            DynamicImage::ImageLuma8(g) => (1, g.into_raw()),
            other => (3, other.to_rgb8().into_raw()),
        };
        match dims {
            None => dims = Some((w, h, channels)),
            Some(d) if d != (w, h, channels) => {
                return Err(Error::shape(
                    format!("{}x{}x{}", d.1, d.0, d.2),
                    format!("{h}x{w}x{channels} in {}", path.display()),
                ));
            }
            Some(_) => {}
        }
        frames.push(raw);
    }
    let (w, h, c) = dims.expect("at least one frame");
    let shape = Shape::new(frames.len(), h as usize, w as usize, c);
    let data = frames
        .concat()
        .into_iter()
        .map(|b| f64::from(b) / 255.0)
        .collect();
    VideoTensor::from_vec(shape, data)
}

pub fn write_dump(mut w: impl Write, t: &Tensor4) -> Result<()> {
    let s = t.shape();
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * s.len());
    buf.extend_from_slice(DUMP_MAGIC);
    for d in [s.frames, s.height, s.width, s.channels] {
        let d = u32::try_from(d).map_err(|_| Error::BadDump(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_dump(mut r: impl Read) -> Result<Tensor4> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    if &header[..4] != DUMP_MAGIC {
        return Err(Error::BadDump("missing L4DT magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(header[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2), dim(3));
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != 4 * shape.len() {
        return Err(Error::BadDump(format!(
            "payload has {} bytes, header {shape} needs {}",
            payload.len(),
            4 * shape.len()
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    Tensor4::from_vec(shape, data)
}

pub fn save_dump(path: &Path, t: &Tensor4) -> Result<()> {
    write_dump(std::io::BufWriter::new(fs::File::create(path)?), t)
}

pub fn load_dump(path: &Path) -> Result<Tensor4> {
    read_dump(std::io::BufReader::new(fs::File::open(path)?))
}
