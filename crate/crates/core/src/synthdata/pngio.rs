use std::fs;
use std::path::Path;

use crate::error::{MclError, Result};
use crate::motionfield::Frame;

/// Encodes a frame as 8-bit gray or RGB PNG.
pub fn encode_png(frame: &Frame) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, frame.width() as u32, frame.height() as u32);
        enc.set_color(if frame.channels() == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| MclError::Input(format!("png header: {e}")))?;
        let bytes: Vec<u8> = frame.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
        writer
            .write_image_data(&bytes)
            .map_err(|e| MclError::Input(format!("png encode: {e}")))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, frame: &Frame) -> Result<()> {
    crate::motionfield::write_atomic(path, &encode_png(frame)?)
}

/// Reads an 8-bit gray, gray+alpha, RGB or RGBA PNG; alpha is dropped.
pub fn read_png(path: &Path) -> Result<Frame> {
    let file = fs::File::open(path).map_err(|e| MclError::io(path, e))?;
    let mut decoder = png::Decoder::new(std::io::BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| MclError::format(path, e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| MclError::format(path, "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| MclError::format(path, e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src, keep) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        other => return Err(MclError::format(path, format!("unsupported color type {other:?}"))),
    };
    let data = buf[..info.buffer_size()]
        .chunks_exact(src)
        .flat_map(|px| px[..keep].iter().map(|&b| b as f32 / 255.0))
        .collect();
    Frame::new(h, w, keep, data).map_err(|e| MclError::format(path, e.to_string()))
}
