//! File formats: raw float32 tensors, PNG images, and CSV manifests.
//!
//! A raw tensor record is the magic `ILNS`, three little-endian `u32`s
//! (height, width, channels), then `height * width * channels` little-endian
//! `f32`s in channel-major order. Weight files concatenate several records.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ImageError, ImageShape, ImageTensor};

pub const MAGIC: &[u8; 4] = b"ILNS";

#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn from_f64(height: usize, width: usize, channels: usize, data: &[f64]) -> Self {
        Self { height, width, channels, data: data.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn shape(&self) -> ImageShape {
        ImageShape::new(self.height, self.width, self.channels)
    }
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

pub fn write_raw_record<W: Write>(out: &mut W, t: &RawTensor) -> io::Result<()> {
    if t.data.len() != t.height * t.width * t.channels {
        return Err(invalid("tensor data length does not match its header"));
    }
    out.write_all(MAGIC)?;
    for dim in [t.height, t.width, t.channels] {
        let dim = u32::try_from(dim).map_err(|_| invalid("dimension exceeds u32"))?;
        out.write_all(&dim.to_le_bytes())?;
    }
    for v in &t.data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record; `Ok(None)` at a clean end of input.
pub fn read_raw_record<R: Read>(input: &mut R) -> io::Result<Option<RawTensor>> {
    let mut magic = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match input.read(&mut magic[got..])? {
            0 if got == 0 => return Ok(None),
            0 => return Err(invalid("truncated header")),
            k => got += k,
        }
    }
    if &magic != MAGIC {
        return Err(invalid(format!("bad magic {magic:?}, expected \"ILNS\"")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        let mut b = [0u8; 4];
        input.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let len = dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| invalid("tensor size overflows"))?;
    let mut bytes = vec![0u8; len.checked_mul(4).ok_or_else(|| invalid("tensor size overflows"))?];
    input.read_exact(&mut bytes).map_err(|_| invalid("truncated tensor data"))?;
    let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Some(RawTensor { height: dims[0], width: dims[1], channels: dims[2], data }))
}

pub fn write_raw_records(path: &Path, records: &[RawTensor]) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for r in records {
        write_raw_record(&mut out, r)?;
    }
    out.flush()
}

pub fn read_raw_records(path: &Path) -> io::Result<Vec<RawTensor>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(r) = read_raw_record(&mut input)? {
        out.push(r);
    }
    Ok(out)
}

fn file_err(path: &Path, message: impl ToString) -> ImageError {
    ImageError::File { path: path.display().to_string(), message: message.to_string() }
}

pub fn write_image_raw(path: &Path, image: &ImageTensor) -> Result<(), ImageError> {
    let s = image.shape();
    let t = RawTensor::from_f64(s.height, s.width, s.channels, image.data());
    write_raw_records(path, &[t]).map_err(|e| file_err(path, e))
}

pub fn read_image_raw(path: &Path) -> Result<ImageTensor, ImageError> {
    let records = read_raw_records(path).map_err(|e| file_err(path, e))?;
    let [record] = <[RawTensor; 1]>::try_from(records)
        .map_err(|r| file_err(path, format!("expected one tensor record, found {}", r.len())))?;
    ImageTensor::new(record.shape(), record.to_f64()).map_err(|e| file_err(path, e))
}

/// Decodes a PNG to `[0, 1]` floats; grayscale stays single-channel, anything
/// else becomes RGB (alpha dropped).
pub fn read_png(path: &Path) -> Result<ImageTensor, ImageError> {
    let img = image::open(path).map_err(|e| file_err(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, bytes) =
        if img.color().has_color() { (3, img.to_rgb8().into_raw()) } else { (1, img.to_luma8().into_raw()) };
    let mut data = vec![0.0; bytes.len()];
    for (k, b) in bytes.iter().enumerate() {
        // interleaved HWC to channel-major CHW
        let c = k % channels;
        let pix = k / channels;
        data[c * h * w + pix] = f64::from(*b) / 255.0;
    }
    ImageTensor::new(ImageShape::new(h, w, channels), data).map_err(|e| file_err(path, e))
}

/// Loads a `.png` or raw tensor file, chosen by extension.
pub fn load_image(path: &Path) -> Result<ImageTensor, ImageError> {
    let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
    if is_png {
        read_png(path)
    } else {
        read_image_raw(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
}

/// Reads a `path,label` CSV. Relative paths resolve against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, ImageError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| file_err(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut out = Vec::new();
    for row in reader.deserialize::<ManifestEntry>() {
        let mut entry = row.map_err(|e| file_err(path, e))?;
        if entry.path.is_relative() {
            entry.path = base.join(&entry.path);
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), ImageError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| file_err(path, e))?;
    for e in entries {
        w.serialize(e).map_err(|err| file_err(path, err))?;
    }
    w.flush().map_err(|e| file_err(path, e))
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub id: usize,
    pub path: Option<PathBuf>,
    pub image: ImageTensor,
    pub label: usize,
}

pub fn load_dataset(manifest: &Path) -> Result<Vec<LabeledImage>, ImageError> {
    read_manifest(manifest)?
        .into_iter()
        .enumerate()
        .map(|(id, e)| {
            let image = load_image(&e.path)?;
            Ok(LabeledImage { id, path: Some(e.path), image, label: e.label })
        })
        .collect()
}
