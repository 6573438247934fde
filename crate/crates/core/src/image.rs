//! 8-bit RGB frames plus PNG I/O.

use crate::error::{Error, IoContext, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

pub type Rgb = [u8; 3];

/// Row-major interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "{} bytes cannot hold a {width}x{height} RGB image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Rgb {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, row: usize, col: usize, rgb: Rgb) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Fill `row[col_lo..col_hi]` with one colour.
    pub fn fill_span(&mut self, row: usize, col_lo: usize, col_hi: usize, rgb: Rgb) {
        let start = (row * self.width + col_lo) * 3;
        let end = (row * self.width + col_hi) * 3;
        for px in self.data[start..end].chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
    }

    /// Channel-planar `[3, H, W]` floats scaled to `[0, 1]`.
    pub fn to_planar(&self) -> Vec<f32> {
        let hw = self.width * self.height;
        let mut out = vec![0.0f32; 3 * hw];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * hw + i] = px[c] as f32 / 255.0;
            }
        }
        out
    }

    /// Inverse of [`Image::to_planar`], rounding and clamping to 8 bits.
    pub fn from_planar(width: usize, height: usize, planar: &[f32]) -> Self {
        let hw = width * height;
        assert_eq!(planar.len(), 3 * hw, "planar buffer size");
        let mut data = vec![0u8; 3 * hw];
        for i in 0..hw {
            for c in 0..3 {
                data[i * 3 + c] = (planar[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        write_png(path, self.width, self.height, png::ColorType::Rgb, &self.data)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let file = File::open(path).at(path)?;
        let codec = |e: png::DecodingError| Error::Image {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        let mut reader = png::Decoder::new(BufReader::new(file))
            .read_info()
            .map_err(codec)?;
        let size = reader.output_buffer_size().ok_or_else(|| Error::Image {
            path: path.to_path_buf(),
            reason: "image too large".into(),
        })?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(codec)?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(Error::Image {
                path: path.to_path_buf(),
                reason: format!("expected 8-bit RGB, found {:?}/{:?}", info.color_type, info.bit_depth),
            });
        }
        buf.truncate(info.buffer_size());
        Self::from_raw(info.width as usize, info.height as usize, buf)
    }
}

pub(crate) fn write_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> Result<()> {
    let file = File::create(path).at(path)?;
    let codec = |e: png::EncodingError| Error::Image {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header().map_err(codec)?;
    writer.write_image_data(data).map_err(codec)?;
    writer.finish().map_err(codec)
}

/// Save a single-channel 8-bit image.
pub fn save_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    if data.len() != width * height {
        return Err(Error::Shape(format!(
            "{} bytes cannot hold a {width}x{height} grayscale image",
            data.len()
        )));
    }
    write_png(path, width, height, png::ColorType::Grayscale, data)
}

/// Tile equally sized images into a grid; `rows[r][c]` lands at row `r`,
/// column `c`.
pub fn compose_grid(rows: &[Vec<Image>]) -> Result<Image> {
    let first = rows
        .first()
        .and_then(|r| r.first())
        .ok_or_else(|| Error::Shape("empty image grid".into()))?;
    let (w, h) = (first.width, first.height);
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Shape("grid rows have different lengths".into()));
    }
    let mut out = Image::filled(w * cols, h * rows.len(), [0, 0, 0]);
    for (r, row) in rows.iter().enumerate() {
        for (c, img) in row.iter().enumerate() {
            if img.width != w || img.height != h {
                return Err(Error::Shape("grid tiles differ in size".into()));
            }
            for y in 0..h {
                let src = &img.data[y * w * 3..(y + 1) * w * 3];
                let dst = ((r * h + y) * out.width + c * w) * 3;
                out.data[dst..dst + w * 3].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}
