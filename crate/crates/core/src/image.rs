//! Image buffers, raster I/O and the resampling primitives shared by the
//! matching and flow pipelines.
//!
//! Coordinates follow the pixel-edge convention throughout: pixel `(i, j)`
//! covers `[i, i+1) x [j, j+1)` and its center sits at `(i + 0.5, j + 0.5)`.

use std::path::Path;

use crate::error::{Error, Result};

/// Row-major multi-channel image with samples in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Single-channel floating point raster with no range restriction.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Reads with replicate-border clamping.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let xc = x.clamp(0, self.width as isize - 1) as usize;
        let yc = y.clamp(0, self.height as isize - 1) as usize;
        self.data[yc * self.width + xc]
    }

    pub fn scaled(&self, k: f32) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| v * k).collect(),
        }
    }

    /// Bilinear sample at index coordinates (pixel `i` sits at `i`), with
    /// replicate border.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

impl ImageBuffer {
    /// Validates shape and sample range.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "zero dimension {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "expected 1 or 3 channels, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::InvalidImage(format!(
                "data length {} != {width}*{height}*{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidImage(format!("sample {bad} outside [0,1]")));
        }
        Ok(ImageBuffer {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a grayscale image, clamping samples into `[0, 1]`.
    pub fn from_gray_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let plane = Plane::from_fn(width, height, f);
        Self::from_planes(&[plane])
    }

    /// Interleaves planes (1 or 3) into an image, clamping into `[0, 1]`.
    pub fn from_planes(planes: &[Plane]) -> Self {
        assert!(planes.len() == 1 || planes.len() == 3);
        let (w, h) = (planes[0].width, planes[0].height);
        let c = planes.len();
        let mut data = vec![0.0; w * h * c];
        for (k, p) in planes.iter().enumerate() {
            assert_eq!((p.width, p.height), (w, h));
            for (i, v) in p.data.iter().enumerate() {
                let v = if v.is_finite() {
                    v.clamp(0.0, 1.0)
                } else {
                    0.0
                };
                data[i * c + k] = v;
            }
        }
        ImageBuffer {
            width: w,
            height: h,
            channels: c,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn channel(&self, c: usize) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .skip(c)
                .step_by(self.channels)
                .copied()
                .collect(),
        }
    }

    pub fn planes(&self) -> Vec<Plane> {
        (0..self.channels).map(|c| self.channel(c)).collect()
    }

    /// Unweighted channel mean.
    pub fn to_gray(&self) -> Plane {
        if self.channels == 1 {
            return self.channel(0);
        }
        let inv = 1.0 / self.channels as f32;
        Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .chunks_exact(self.channels)
                .map(|px| px.iter().sum::<f32>() * inv)
                .collect(),
        }
    }
}

/// Loads a binary PGM (P5), PPM (P6) or, with the `png` feature, an 8-bit PNG.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

/// Decodes an in-memory raster.
pub fn decode_image(bytes: &[u8]) -> Result<ImageBuffer> {
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(bytes);
    }
    Err(Error::UnsupportedFormat(
        "expected binary PGM (P5), PPM (P6) or PNG".into(),
    ))
}

fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let channels = if &bytes[..2] == b"P5" { 1 } else { 3 };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while !matches!(bytes.get(pos), None | Some(b'\n')) {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::MalformedImage("truncated header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("expected a header number".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::MalformedImage("header number overflow".into()))?;
    }
    // exactly one whitespace byte before the raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::MalformedImage("missing raster separator".into()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::InvalidImage(format!(
            "zero dimension {width}x{height}"
        )));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::MalformedImage(format!("bad maxval {maxval}")));
    }
    let bps = if maxval > 255 { 2 } else { 1 };
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::MalformedImage("dimensions overflow".into()))?;
    let raster = &bytes[pos..];
    if raster.len() < n * bps {
        return Err(Error::MalformedImage(format!(
            "raster truncated: {} of {} bytes",
            raster.len(),
            n * bps
        )));
    }
    let scale = 1.0 / maxval as f32;
    let data = if bps == 1 {
        raster[..n]
            .iter()
            .map(|&b| (b as f32 * scale).min(1.0))
            .collect()
    } else {
        raster[..2 * n]
            .chunks_exact(2)
            .map(|b| (u16::from_be_bytes([b[0], b[1]]) as f32 * scale).min(1.0))
            .collect()
    };
    ImageBuffer::new(width, height, channels, data)
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::MalformedImage(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_c = info.color_type.samples();
    let channels = if src_c >= 3 { 3 } else { 1 };
    let mut data = Vec::with_capacity(w * h * channels);
    for px in buf[..info.buffer_size()].chunks_exact(src_c) {
        for &b in &px[..channels] {
            data.push(b as f32 / 255.0);
        }
    }
    ImageBuffer::new(w, h, channels, data)
}

#[cfg(not(feature = "png"))]
fn decode_png(_bytes: &[u8]) -> Result<ImageBuffer> {
    Err(Error::UnsupportedFormat(
        "PNG support disabled at build time".into(),
    ))
}

/// Encodes as binary PGM or PPM depending on the channel count.
pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| (v * 255.0).round() as u8));
    out
}

pub fn save_pnm(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e))
}

/// Writes an 8-bit PNG.
#[cfg(feature = "png")]
pub fn save_png(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(
        std::io::BufWriter::new(file),
        img.width as u32,
        img.height as u32,
    );
    enc.set_color(if img.channels == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    enc.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = img.data.iter().map(|v| (v * 255.0).round() as u8).collect();
    enc.write_header()
        .and_then(|mut w| w.write_image_data(&bytes))
        .map_err(|e| Error::Io {
            path: path.into(),
            source: std::io::Error::other(e),
        })
}

/// Saves as PNG when the extension says so, PNM otherwise.
pub fn save_image(path: impl AsRef<Path>, img: &ImageBuffer) -> Result<()> {
    let path = path.as_ref();
    #[cfg(feature = "png")]
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
    {
        return save_png(path, img);
    }
    save_pnm(path, img)
}

/// Normalized Gaussian kernel truncated at 4 sigma.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let radius = (4.0 * sigma).ceil() as usize;
    let mut k: Vec<f32> = (0..=2 * radius)
        .map(|i| {
            let d = i as f32 - radius as f32;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian smoothing with replicate border; `sigma <= 0` is an
/// identity pass.
pub fn gaussian_blur(src: &Plane, sigma: f32) -> Plane {
    if sigma <= 0.0 {
        return src.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (src.width, src.height);
    let mut tmp = Plane::new(w, h);
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * row[xx];
            }
            tmp.data[y * w + x] = acc;
        }
    }
    let mut out = Plane::new(w, h);
    for y in 0..h {
        let orow = &mut out.data[y * w..(y + 1) * w];
        for (i, kv) in k.iter().enumerate() {
            let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let trow = &tmp.data[yy * w..(yy + 1) * w];
            for (o, t) in orow.iter_mut().zip(trow) {
                *o += kv * t;
            }
        }
    }
    out
}

/// Per-output-sample `(first input index, weights)` for area averaging.
fn area_weights(src_len: usize, dst_len: usize) -> Vec<(usize, Vec<f32>)> {
    let s = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let a = i as f64 * s;
            let b = ((i + 1) as f64 * s).min(src_len as f64);
            let first = a.floor() as usize;
            let last = (b.ceil() as usize).min(src_len);
            let w = (first..last)
                .map(|k| {
                    let lo = a.max(k as f64);
                    let hi = b.min(k as f64 + 1.0);
                    ((hi - lo).max(0.0) / (b - a)) as f32
                })
                .collect();
            (first, w)
        })
        .collect()
}

/// Area-averaging resize of a plane to `dst_w x dst_h` (no upsampling).
pub fn resize_area(src: &Plane, dst_w: usize, dst_h: usize) -> Plane {
    assert!(dst_w >= 1 && dst_h >= 1 && dst_w <= src.width && dst_h <= src.height);
    if dst_w == src.width && dst_h == src.height {
        return src.clone();
    }
    let wx = area_weights(src.width, dst_w);
    let wy = area_weights(src.height, dst_h);
    let mut tmp = Plane::new(dst_w, src.height);
    for y in 0..src.height {
        let row = &src.data[y * src.width..(y + 1) * src.width];
        for (x, (first, ws)) in wx.iter().enumerate() {
            tmp.data[y * dst_w + x] = ws.iter().enumerate().map(|(k, w)| w * row[first + k]).sum();
        }
    }
    let mut out = Plane::new(dst_w, dst_h);
    for (y, (first, ws)) in wy.iter().enumerate() {
        for (k, w) in ws.iter().enumerate() {
            let trow = &tmp.data[(first + k) * dst_w..(first + k + 1) * dst_w];
            let orow = &mut out.data[y * dst_w..(y + 1) * dst_w];
            for (o, t) in orow.iter_mut().zip(trow) {
                *o += w * t;
            }
        }
    }
    out
}

/// Output size when shrinking `len` by `factor >= 1`.
pub fn downsized_len(len: usize, factor: f32) -> usize {
    ((len as f32 / factor).round() as usize).clamp(1, len)
}

/// Box-filter downsizing by `factor >= 1`. Returns the image together with
/// the exact per-axis ratios `src / dst` that map output edge coordinates
/// back to input ones.
pub fn downsize(img: &ImageBuffer, factor: f32) -> (ImageBuffer, (f32, f32)) {
    assert!(factor >= 1.0, "downsize factor must be >= 1");
    let w = downsized_len(img.width, factor);
    let h = downsized_len(img.height, factor);
    let ratio = (img.width as f32 / w as f32, img.height as f32 / h as f32);
    if w == img.width && h == img.height {
        return (img.clone(), ratio);
    }
    let planes: Vec<Plane> = img.planes().iter().map(|p| resize_area(p, w, h)).collect();
    (ImageBuffer::from_planes(&planes), ratio)
}

/// Bilinear resize mapping edge coordinates linearly (pixel centers align
/// as `(x + 0.5) * src/dst - 0.5`).
pub fn resize_bilinear(src: &Plane, dst_w: usize, dst_h: usize) -> Plane {
    let sx = src.width as f32 / dst_w as f32;
    let sy = src.height as f32 / dst_h as f32;
    Plane::from_fn(dst_w, dst_h, |x, y| {
        src.sample_bilinear((x as f32 + 0.5) * sx - 0.5, (y as f32 + 0.5) * sy - 0.5)
    })
}

/// Geometry of an image rotated onto an enlarged canvas.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationFrame {
    /// Rotation applied to the content (radians, counter-clockwise in a
    /// y-down frame means clockwise on screen).
    pub angle: f32,
    pub src_center: (f32, f32),
    pub canvas_center: (f32, f32),
    pub canvas_size: (usize, usize),
}

impl RotationFrame {
    pub fn new(src_w: usize, src_h: usize, angle: f32) -> Self {
        let (c, s) = (angle.cos().abs(), angle.sin().abs());
        let (w, h) = (src_w as f32, src_h as f32);
        // snap near-integer extents so right-angle rotations stay tight
        let fit = |v: f32| {
            let r = v.round();
            if (v - r).abs() < 1e-3 {
                r as usize
            } else {
                v.ceil() as usize
            }
        };
        let cw = fit(w * c + h * s).max(1);
        let ch = fit(w * s + h * c).max(1);
        RotationFrame {
            angle,
            src_center: (w / 2.0, h / 2.0),
            canvas_center: (cw as f32 / 2.0, ch as f32 / 2.0),
            canvas_size: (cw, ch),
        }
    }

    /// Source edge coordinates to canvas edge coordinates.
    pub fn to_canvas(&self, x: f32, y: f32) -> (f32, f32) {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.src_center.0;
        let dy = y - self.src_center.1;
        (
            self.canvas_center.0 + c * dx - s * dy,
            self.canvas_center.1 + s * dx + c * dy,
        )
    }

    /// Canvas edge coordinates to source edge coordinates.
    pub fn to_source(&self, x: f32, y: f32) -> (f32, f32) {
        let (s, c) = self.angle.sin_cos();
        let dx = x - self.canvas_center.0;
        let dy = y - self.canvas_center.1;
        (
            self.src_center.0 + c * dx + s * dy,
            self.src_center.1 - s * dx + c * dy,
        )
    }
}

/// Rotates `img` by `angle` onto a canvas that fully contains it. Samples
/// are bilinear with edge replication outside the source.
pub fn rotate_on_canvas(img: &ImageBuffer, angle: f32) -> (ImageBuffer, RotationFrame) {
    let frame = RotationFrame::new(img.width, img.height, angle);
    let (cw, ch) = frame.canvas_size;
    let planes: Vec<Plane> = img
        .planes()
        .iter()
        .map(|p| {
            Plane::from_fn(cw, ch, |x, y| {
                let (sx, sy) = frame.to_source(x as f32 + 0.5, y as f32 + 0.5);
                p.sample_bilinear(sx - 0.5, sy - 0.5)
            })
        })
        .collect();
    (ImageBuffer::from_planes(&planes), frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_scale_to_unit_range() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([0u8, 255, 128, 64]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 2, 1));
        assert_eq!(img.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
    }

    #[test]
    fn truncated_pgm_is_malformed() {
        let mut bytes = b"P5\n4 4\n255\n".to_vec();
        bytes.extend([1u8; 7]);
        let err = decode_image(&bytes).unwrap_err();
        assert!(err.to_string().contains("malformed image"), "{err}");
    }

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6\n# made by hand\n3 1\n255\n".to_vec();
        bytes.extend([255u8, 0, 0, 0, 255, 0, 0, 0, 255]);
        let img = decode_image(&bytes).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (3, 1, 3));
        assert_eq!(img.get(1, 0, 1), 1.0);
        assert_eq!(img.get(2, 0, 0), 0.0);
    }

    #[test]
    fn zero_dimension_rejected() {
        let bytes = b"P5\n0 3\n255\n".to_vec();
        assert!(matches!(decode_image(&bytes), Err(Error::InvalidImage(_))));
    }

    #[test]
    fn unknown_magic_rejected() {
        assert!(matches!(
            decode_image(b"GIF89a"),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn pnm_roundtrip() {
        let img = ImageBuffer::from_gray_fn(5, 3, |x, y| ((x * 40 + y * 10) as f32) / 255.0);
        let back = decode_image(&encode_pnm(&img)).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[cfg(feature = "png")]
    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let planes: Vec<Plane> = (0..3)
            .map(|c| Plane::from_fn(4, 3, |x, y| ((x + y * 4 + c * 12) as f32) / 64.0))
            .collect();
        let img = ImageBuffer::from_planes(&planes);
        save_image(&path, &img).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.channels(), 3);
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn out_of_range_samples_rejected() {
        assert!(ImageBuffer::new(1, 1, 1, vec![1.5]).is_err());
        assert!(ImageBuffer::new(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(ImageBuffer::new(2, 1, 1, vec![0.5]).is_err());
    }

    #[test]
    fn blur_preserves_constants_and_zero_sigma_is_identity() {
        let p = Plane::from_fn(7, 5, |_, _| 0.25);
        let b = gaussian_blur(&p, 1.5);
        assert!(b.data.iter().all(|v| (v - 0.25).abs() < 1e-6));
        let q = Plane::from_fn(7, 5, |x, y| (x * y) as f32);
        assert_eq!(gaussian_blur(&q, 0.0), q);
    }

    #[test]
    fn area_resize_halves_by_averaging() {
        let p = Plane::from_fn(4, 2, |x, _| x as f32);
        let r = resize_area(&p, 2, 1);
        assert_eq!(r.data, vec![0.5, 2.5]);
    }

    #[test]
    fn area_resize_fractional_preserves_mean() {
        let p = Plane::from_fn(10, 7, |x, y| (x * 3 + y) as f32);
        let r = resize_area(&p, 7, 5);
        let m0: f32 = p.data.iter().sum::<f32>() / p.data.len() as f32;
        let m1: f32 = r.data.iter().sum::<f32>() / r.data.len() as f32;
        assert!((m0 - m1).abs() < 1e-4, "{m0} vs {m1}");
    }

    #[test]
    fn rotation_frame_roundtrip() {
        for k in 0..8 {
            let f = RotationFrame::new(37, 21, k as f32 * std::f32::consts::FRAC_PI_4);
            for &(x, y) in &[(0.0, 0.0), (3.5, 7.25), (37.0, 21.0)] {
                let (cx, cy) = f.to_canvas(x, y);
                let (bx, by) = f.to_source(cx, cy);
                assert!((bx - x).abs() < 1e-4 && (by - y).abs() < 1e-4);
                assert!(cx >= -1e-3 && cy >= -1e-3);
                assert!(cx <= f.canvas_size.0 as f32 + 1e-3);
                assert!(cy <= f.canvas_size.1 as f32 + 1e-3);
            }
        }
    }

    #[test]
    fn right_angle_rotation_is_a_pixel_permutation() {
        let img = ImageBuffer::from_gray_fn(6, 4, |x, y| ((x + 6 * y) as f32) / 30.0);
        let (rot, frame) = rotate_on_canvas(&img, std::f32::consts::FRAC_PI_2);
        assert_eq!(frame.canvas_size, (4, 6));
        // source pixel center (x+.5, y+.5) lands on a canvas pixel center
        for y in 0..4 {
            for x in 0..6 {
                let (cx, cy) = frame.to_canvas(x as f32 + 0.5, y as f32 + 0.5);
                let (ix, iy) = ((cx - 0.5).round() as usize, (cy - 0.5).round() as usize);
                assert!((rot.get(ix, iy, 0) - img.get(x, y, 0)).abs() < 1e-5);
            }
        }
    }
}
