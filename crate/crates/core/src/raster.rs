//! Stroke images: trace → floor-resolution raster → 128×128 → unit scale.

use std::path::Path;

use thiserror::Error;

use crate::dataset::HourTrace;

/// Side length of the images fed to the network.
pub const IMAGE_SIDE: usize = 128;
pub const STROKE: f64 = 255.0;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("point {point} at ({x}, {y}) lies outside the {width}x{height} floor plan")]
    OutOfBounds {
        point: usize,
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("trace has no points")]
    EmptyTrace,
    #[error("expected a {expected:?}-scale image, got {found:?}")]
    ScaleMode { expected: ScaleMode, found: ScaleMode },
    #[error("cannot resample {from_w}x{from_h} to {to_w}x{to_h}: only downscaling is supported")]
    UnsupportedSize {
        from_w: usize,
        from_h: usize,
        to_w: usize,
        to_h: usize,
    },
    #[error("png export failed: {0}")]
    Png(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleMode {
    /// Intensities in `[0, 255]`.
    Raw,
    /// Intensities in `[0, 1]`.
    Unit,
}

impl ScaleMode {
    pub fn max_value(self) -> f64 {
        match self {
            ScaleMode::Raw => STROKE,
            ScaleMode::Unit => 1.0,
        }
    }
}

/// Row-major grayscale image.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
    pub mode: ScaleMode,
}

impl GrayImage {
    pub fn zeros(width: usize, height: usize, mode: ScaleMode) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
            mode,
        }
    }

    pub fn from_fn(width: usize, height: usize, mode: ScaleMode, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(width, height, mode);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = f(x, y);
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Total intensity. Values are added in sorted order so the result is
    /// identical for any permutation of the pixels.
    pub fn sum(&self) -> f64 {
        let mut v = self.data.clone();
        v.sort_by(f64::total_cmp);
        v.iter().sum()
    }

    /// Coordinates of all non-zero pixels, row-major order.
    pub fn lit_pixels(&self) -> Vec<(usize, usize)> {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| (i % self.width, i / self.width))
            .collect()
    }

    /// Quantizes to 8 bits, rounding to nearest.
    pub fn to_u8(&self) -> Vec<u8> {
        let scale = STROKE / self.mode.max_value();
        self.data
            .iter()
            .map(|&v| (v * scale).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.to_u8())
            .expect("buffer length matches dimensions");
        buf.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }

    fn expect_mode(&self, expected: ScaleMode) -> Result<(), RasterError> {
        if self.mode == expected {
            Ok(())
        } else {
            Err(RasterError::ScaleMode {
                expected,
                found: self.mode,
            })
        }
    }
}

/// Walks the discrete segment from `(x0, y0)` to `(x1, y1)`, endpoints
/// included.
///
/// Integer midpoint walk along the major axis. When the ideal line passes
/// exactly halfway between two pixels, the one nearer the start's minor
/// coordinate is chosen.
pub fn walk_line(x0: i64, y0: i64, x1: i64, y1: i64, mut plot: impl FnMut(i64, i64)) {
    let (dx, dy) = ((x1 - x0).abs(), (y1 - y0).abs());
    let (sx, sy) = (if x1 >= x0 { 1 } else { -1 }, if y1 >= y0 { 1 } else { -1 });
    let (major, minor) = if dx >= dy { (dx, dy) } else { (dy, dx) };

    let mut offset = 0;
    let mut d = 2 * minor - major;
    for k in 0..=major {
        if dx >= dy {
            plot(x0 + k * sx, y0 + offset * sy);
        } else {
            plot(x0 + offset * sx, y0 + k * sy);
        }
        if d > 0 {
            offset += 1;
            d -= 2 * major;
        }
        d += 2 * minor;
    }
}

/// Draws the trace as a white-on-black polyline at floor resolution.
///
/// Each point lands in the pixel containing it; adjacent points are joined by
/// [`walk_line`]. Overlapping strokes stay at 255.
pub fn rasterize_trace(t: &HourTrace, floor_width: u32, floor_height: u32) -> Result<GrayImage, RasterError> {
    if t.points.is_empty() {
        return Err(RasterError::EmptyTrace);
    }
    let (w, h) = (floor_width as usize, floor_height as usize);
    let pixels = t
        .points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let inside = p.x >= 0.0 && p.y >= 0.0 && p.x < w as f64 && p.y < h as f64;
            if inside {
                Ok((p.x.floor() as i64, p.y.floor() as i64))
            } else {
                Err(RasterError::OutOfBounds {
                    point: i,
                    x: p.x,
                    y: p.y,
                    width: floor_width,
                    height: floor_height,
                })
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut img = GrayImage::zeros(w, h, ScaleMode::Raw);
    let mut plot = |x: i64, y: i64| img.data[y as usize * w + x as usize] = STROKE;
    if let [(x, y)] = pixels[..] {
        plot(x, y);
    }
    for seg in pixels.windows(2) {
        walk_line(seg[0].0, seg[0].1, seg[1].0, seg[1].1, &mut plot);
    }
    Ok(img)
}

/// Divides every intensity by 255.
pub fn normalize(img: &GrayImage) -> Result<GrayImage, RasterError> {
    img.expect_mode(ScaleMode::Raw)?;
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| v / STROKE).collect(),
        mode: ScaleMode::Unit,
    })
}

/// Overlap weights of source cells `[i, i+1)` with output cell
/// `[o*s, (o+1)*s)`, for every output cell.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = (o * src) as f64 / dst as f64;
            let hi = ((o + 1) * src) as f64 / dst as f64;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|i| {
                    let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)) / scale;
                    (overlap > 0.0).then_some((i, overlap))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resample; each output pixel is the mean of the source
/// region it covers, including fractional edge cells.
pub fn downscale(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage, RasterError> {
    if out_w == 0 || out_h == 0 || out_w > img.width || out_h > img.height {
        return Err(RasterError::UnsupportedSize {
            from_w: img.width,
            from_h: img.height,
            to_w: out_w,
            to_h: out_h,
        });
    }
    let wx = area_weights(img.width, out_w);
    let wy = area_weights(img.height, out_h);

    let mut rows = vec![0.0; out_w * img.height];
    for y in 0..img.height {
        let src = &img.data[y * img.width..(y + 1) * img.width];
        for (ox, taps) in wx.iter().enumerate() {
            rows[y * out_w + ox] = taps.iter().map(|&(i, w)| src[i] * w).sum();
        }
    }

    let max = img.mode.max_value();
    let mut out = GrayImage::zeros(out_w, out_h, img.mode);
    for (oy, taps) in wy.iter().enumerate() {
        for ox in 0..out_w {
            let v: f64 = taps.iter().map(|&(i, w)| rows[i * out_w + ox] * w).sum();
            out.data[oy * out_w + ox] = v.clamp(0.0, max);
        }
    }
    Ok(out)
}

/// Rasterize, shrink to [`IMAGE_SIDE`]², then normalize.
pub fn stroke_image(t: &HourTrace, floor_width: u32, floor_height: u32) -> Result<GrayImage, RasterError> {
    let raw = rasterize_trace(t, floor_width, floor_height)?;
    normalize(&downscale(&raw, IMAGE_SIDE, IMAGE_SIDE)?)
}
