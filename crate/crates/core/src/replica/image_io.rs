use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder, RgbImage};

use super::{DepthImage, ReplicaError};

fn decode(path: &Path) -> Result<DynamicImage, ReplicaError> {
    let file = File::open(path).map_err(|e| ReplicaError::io(path, e))?;
    let decoder = PnmDecoder::new(BufReader::new(file)).map_err(|e| ReplicaError::io(path, e))?;
    DynamicImage::from_decoder(decoder).map_err(|e| ReplicaError::io(path, e))
}

pub fn read_color_ppm(path: &Path) -> Result<RgbImage, ReplicaError> {
    match decode(path)? {
        DynamicImage::ImageRgb8(img) => Ok(img),
        other => Err(ReplicaError::io(path, format!("expected 8-bit RGB, found {:?}", other.color()))),
    }
}

/// Reads a 16-bit binary PGM (big-endian samples) holding millimeters.
pub fn read_depth_pgm(path: &Path) -> Result<DepthImage, ReplicaError> {
    match decode(path)? {
        DynamicImage::ImageLuma16(img) => Ok(img),
        other => Err(ReplicaError::io(path, format!("expected 16-bit grayscale, found {:?}", other.color()))),
    }
}

fn encode(path: &Path, subtype: PnmSubtype, bytes: &[u8], w: u32, h: u32, ty: ExtendedColorType) -> Result<(), ReplicaError> {
    let file = File::create(path).map_err(|e| ReplicaError::io(path, e))?;
    PnmEncoder::new(BufWriter::new(file))
        .with_subtype(subtype)
        .write_image(bytes, w, h, ty)
        .map_err(|e| ReplicaError::io(path, e))
}

pub fn write_color_ppm(path: &Path, img: &RgbImage) -> Result<(), ReplicaError> {
    encode(
        path,
        PnmSubtype::Pixmap(SampleEncoding::Binary),
        img.as_raw(),
        img.width(),
        img.height(),
        ExtendedColorType::Rgb8,
    )
}

/// Writes a binary PGM with maxval 65535; samples are big-endian as the
/// format requires.
pub fn write_depth_pgm(path: &Path, img: &DepthImage) -> Result<(), ReplicaError> {
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width(), img.height()).into_bytes();
    bytes.reserve(img.as_raw().len() * 2);
    bytes.extend(img.as_raw().iter().flat_map(|v| v.to_be_bytes()));
    std::fs::write(path, bytes).map_err(|e| ReplicaError::io(path, e))
}
