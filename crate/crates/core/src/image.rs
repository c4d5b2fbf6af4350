//! Planar float images, PNG IO and compositing helpers.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{resize_bilinear, Tensor};

/// Rounds to the nearest multiple of 1/255 so 8-bit round trips are exact.
pub fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Writes a `[3, H, W]` tensor in `[0, 1]` as an 8-bit RGB PNG.
pub fn write_rgb_png(path: &Path, img: &Tensor) -> Result<()> {
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    if c != 3 {
        return Err(Error::BadShape(format!("expected 3 channels, got {c}")));
    }
    let mut bytes = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = img.data()[(ch * h + y) * w + x];
                bytes[(y * w + x) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    encode_png(path, w, h, png::ColorType::Rgb, png::BitDepth::Eight, &bytes)
}

/// In-memory 8-bit RGB PNG encoding.
pub fn rgb_png_bytes(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = (img.dim(1), img.dim(2));
    let mut bytes = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = img.data()[(ch * h + y) * w + x];
                bytes[(y * w + x) * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut wr = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
        wr.write_image_data(&bytes).map_err(|e| Error::Png(e.to_string()))?;
    }
    Ok(out)
}

pub fn read_rgb_png(path: &Path) -> Result<Tensor> {
    let dec = png::Decoder::new(BufReader::new(File::open(path)?));
    let mut reader = dec.read_info().map_err(|e| Error::Png(e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Png("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Png(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = match (info.color_type, info.bit_depth) {
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        (png::ColorType::Rgba, png::BitDepth::Eight) => 4,
        other => return Err(Error::Png(format!("unsupported pixel format {other:?}"))),
    };
    let mut t = Tensor::zeros(&[3, h, w]);
    let d = t.data_mut();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                d[(ch * h + y) * w + x] = buf[(y * w + x) * stride + ch] as f64 / 255.0;
            }
        }
    }
    Ok(t)
}

/// Writes `pages` equally sized 16-bit grayscale images stacked vertically.
pub fn write_gray16_pages_png(path: &Path, pages: &[&[f64]], h: usize, w: usize) -> Result<()> {
    let mut bytes = Vec::with_capacity(pages.len() * h * w * 2);
    for p in pages {
        for &v in p.iter() {
            let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
            bytes.extend_from_slice(&q.to_be_bytes());
        }
    }
    encode_png(
        path,
        w,
        h * pages.len(),
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &bytes,
    )
}

fn encode_png(
    path: &Path,
    w: usize,
    h: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    bytes: &[u8],
) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    let mut enc = png::Encoder::new(file, w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut wr = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
    wr.write_image_data(bytes).map_err(|e| Error::Png(e.to_string()))?;
    wr.finish().map_err(|e| Error::Png(e.to_string()))?;
    Ok(())
}

/// Copies the `[C, y0..y1, x0..x1]` window of a `[C, H, W]` tensor.
pub fn crop(img: &Tensor, x0: usize, y0: usize, x1: usize, y1: usize) -> Tensor {
    let (c, h, w) = (img.dim(0), img.dim(1), img.dim(2));
    let (cw, ch) = (x1 - x0, y1 - y0);
    let mut out = Tensor::zeros(&[c, ch, cw]);
    let od = out.data_mut();
    for k in 0..c {
        for y in 0..ch {
            let src = (k * h + y0 + y) * w + x0;
            od[(k * ch + y) * cw..(k * ch + y + 1) * cw].copy_from_slice(&img.data()[src..src + cw]);
        }
    }
    out
}

/// Alpha-composites an RGBA `[4, h, w]` image over `[3, H, W]` after
/// resizing it to cover pixels `x0..x1, y0..y1` (clipped to the canvas).
pub fn paste_rgba(canvas: &mut Tensor, rgba: &Tensor, x0: usize, y0: usize, x1: usize, y1: usize) {
    let (h, w) = (canvas.dim(1), canvas.dim(2));
    if x1 <= x0 || y1 <= y0 {
        return;
    }
    let (rw, rh) = (x1 - x0, y1 - y0);
    let resized = resize_bilinear(rgba, rh, rw);
    let rd = resized.data();
    let cd = canvas.data_mut();
    for y in 0..rh {
        let cy = y0 + y;
        if cy >= h {
            break;
        }
        for x in 0..rw {
            let cx = x0 + x;
            if cx >= w {
                break;
            }
            let a = rd[(3 * rh + y) * rw + x].clamp(0.0, 1.0);
            for ch in 0..3 {
                let dst = &mut cd[(ch * h + cy) * w + cx];
                *dst = a * rd[(ch * rh + y) * rw + x] + (1.0 - a) * *dst;
            }
        }
    }
}

/// Composites an RGBA image over a constant gray background.
pub fn flatten_rgba(rgba: &Tensor, background: f64) -> Tensor {
    let (h, w) = (rgba.dim(1), rgba.dim(2));
    let n = h * w;
    let d = rgba.data();
    let mut out = Tensor::zeros(&[3, h, w]);
    let od = out.data_mut();
    for i in 0..n {
        let a = d[3 * n + i];
        for ch in 0..3 {
            od[ch * n + i] = a * d[ch * n + i] + (1.0 - a) * background;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_for_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let mut t = Tensor::zeros(&[3, 5, 7]);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = quantize((i as f64 * 0.137).fract());
        }
        write_rgb_png(&p, &t).unwrap();
        assert_eq!(read_rgb_png(&p).unwrap(), t);
    }

    #[test]
    fn paste_maps_crop_corners_to_rect_corners() {
        let mut rgba = Tensor::full(&[4, 3, 4], 1.0);
        for (i, v) in rgba.data_mut()[..12].iter_mut().enumerate() {
            *v = i as f64 / 12.0;
        }
        let mut canvas = Tensor::zeros(&[3, 10, 12]);
        paste_rgba(&mut canvas, &rgba, 2, 1, 10, 7);
        let at = |y: usize, x: usize| canvas.data()[y * 12 + x];
        assert_eq!(at(1, 2), 0.0);
        assert!((at(1, 9) - 3.0 / 12.0).abs() < 1e-12);
        assert!((at(6, 2) - 8.0 / 12.0).abs() < 1e-12);
        assert!((at(6, 9) - 11.0 / 12.0).abs() < 1e-12);
        assert_eq!(at(0, 0), 0.0);
        assert_eq!(at(7, 10), 0.0);
    }
}
