//! Image tensors in `[-1, 1]` and binary PPM I/O.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Channel-major image with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("images have 1 or 3 channels, got {channels}")));
        }
        if data.len() != height * width * channels {
            return shape_err(format!("{height}x{width}x{channels} image needs {} values, got {}", height * width * channels, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidArgument(format!("pixel value {v} outside [-1, 1]")));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels, data: vec![0.0; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Pixel-wise mean squared error.
    pub fn mse(&self, other: &Image) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / self.data.len() as f64
    }

    pub fn crop_rows(&self, rows: usize) -> Image {
        let rows = rows.min(self.height);
        let mut data = Vec::with_capacity(rows * self.width * self.channels);
        for plane in self.data.chunks(self.height * self.width) {
            data.extend_from_slice(&plane[..rows * self.width]);
        }
        Image { height: rows, width: self.width, channels: self.channels, data }
    }

    /// Zeroes every row at or below `row`.
    pub fn mask_rows_from(&self, row: usize) -> Image {
        let mut out = self.clone();
        for plane in out.data.chunks_mut(self.height * self.width) {
            for v in &mut plane[row.min(self.height) * self.width..] {
                *v = 0.0;
            }
        }
        out
    }
}

/// Stacks images into an NCHW batch.
pub fn to_batch(images: &[Image]) -> Result<Tensor> {
    let Some(first) = images.first() else {
        return shape_err("empty image batch");
    };
    let mut data = Vec::with_capacity(images.len() * first.data.len());
    for im in images {
        if (im.height, im.width, im.channels) != (first.height, first.width, first.channels) {
            return shape_err("images in a batch must share dimensions");
        }
        data.extend_from_slice(&im.data);
    }
    Tensor::from_vec(&[images.len(), first.channels, first.height, first.width], data)
}

/// Splits an NCHW batch into images, clamping into `[-1, 1]`.
pub fn from_batch(t: &Tensor) -> Vec<Image> {
    let (n, c, h, w) = t.dims4();
    (0..n)
        .map(|i| Image { height: h, width: w, channels: c, data: t.item(i).iter().map(|v| v.clamp(-1.0, 1.0)).collect() })
        .collect()
}

fn to_byte(v: f64) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8
}

/// Lays images out on a `cols`-wide grid with a 1-pixel separator.
pub fn tile(images: &[Image], cols: usize) -> Result<Image> {
    let Some(first) = images.first() else {
        return shape_err("nothing to tile");
    };
    let (h, w) = (first.height, first.width);
    let cols = cols.max(1).min(images.len());
    let rows = images.len().div_ceil(cols);
    let gh = rows * (h + 1) - 1;
    let gw = cols * (w + 1) - 1;
    let mut out = Image { height: gh, width: gw, channels: 3, data: vec![1.0; 3 * gh * gw] };
    for (i, im) in images.iter().enumerate() {
        if im.width != w || im.height > h {
            return shape_err("tiled images must share dimensions");
        }
        let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
        for c in 0..3 {
            let src = c.min(im.channels - 1);
            for y in 0..h {
                for x in 0..w {
                    let v = if y < im.height { im.get(src, y, x) } else { -1.0 };
                    out.data[(c * gh + oy + y) * gw + ox + x] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Writes a binary PPM (P6, maxval 255); grayscale is replicated to RGB.
pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    let hw = image.height * image.width;
    for p in 0..hw {
        for c in 0..3 {
            let src = c.min(image.channels - 1);
            bytes.push(to_byte(image.data[src * hw + p]));
        }
    }
    crate::checkpoint::write_atomic(path, &bytes)
}

fn ppm_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut b = [0u8; 1];
        if r.read(&mut b)? == 0 {
            break;
        }
        let ch = b[0] as char;
        if ch == '#' && tok.is_empty() {
            let mut line = String::new();
            r.read_line(&mut line)?;
            continue;
        }
        if ch.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(ch);
    }
    Ok(tok)
}

/// Reads a binary PPM (P6) with maxval 255 into a 3-channel image.
pub fn read_ppm(path: &Path) -> Result<Image> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let bad = |m: &str| Error::InvalidArgument(format!("{}: {m}", path.display()));
    if ppm_token(&mut r)? != "P6" {
        return Err(bad("not a P6 PPM"));
    }
    let mut num = || -> Result<usize> { ppm_token(&mut r)?.parse().map_err(|_| bad("bad header")) };
    let (w, h, maxval) = (num()?, num()?, num()?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let mut raw = vec![0u8; w * h * 3];
    r.read_exact(&mut raw)?;
    Ok(from_rgb8(h, w, &raw))
}

/// Interleaved RGB bytes to a channel-major image.
pub fn from_rgb8(h: usize, w: usize, raw: &[u8]) -> Image {
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = raw[p * 3 + c] as f64 / 127.5 - 1.0;
        }
    }
    Image { height: h, width: w, channels: 3, data }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    crate::checkpoint::write_atomic(path, text.as_bytes())
}

/// Appends `text` to a byte buffer, for callers assembling CSV output.
pub fn push_line(buf: &mut Vec<u8>, text: &str) {
    buf.write_all(text.as_bytes()).expect("vec write");
    buf.push(b'\n');
}
