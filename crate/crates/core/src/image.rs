//! Grayscale image container, file I/O, Gaussian smoothing and gradients.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Row-major scalar image. Loaded images hold intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Real> GrayImage<T> {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![T::zero(); width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::InvalidParameter(format!(
                "buffer of {} values for a {width}x{height} image",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    /// Value with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> T {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { width: self.width, height: self.height, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Quantizes `[0, 1]` intensities to 8 bits (values are clamped).
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.max(T::zero()).min(T::one()) * T::of(255.0)).round().to_u8().unwrap_or(0))
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        save_luma8(path, self.width, self.height, self.to_u8(), image::ImageFormat::Png)
    }

    /// Binary PGM (P5) dump, used for debug heat maps.
    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut bytes = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        bytes.extend(self.to_u8());
        std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

pub(crate) fn save_luma8(
    path: &Path,
    width: usize,
    height: usize,
    data: Vec<u8>,
    format: image::ImageFormat,
) -> Result<()> {
    let buf = image::GrayImage::from_raw(width as u32, height as u32, data)
        .ok_or(Error::InvalidParameter("buffer size".into()))?;
    buf.save_with_format(path, format)
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })
}

/// Loads a PNG or binary PGM file as luminance scaled to `[0, 1]`.
pub fn load_grayscale<T: Real>(path: &Path) -> Result<GrayImage<T>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    let format = image::guess_format(&bytes)
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Pnm) {
        return Err(Error::Format { path: path.to_path_buf(), reason: format!("{format:?} not supported") });
    }
    let decoded = image::load_from_memory_with_format(&bytes, format)
        .map_err(|e| Error::Format { path: path.to_path_buf(), reason: e.to_string() })?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage);
    }
    let data = if decoded.color().bytes_per_pixel() / decoded.color().channel_count() > 1 {
        let luma = decoded.into_luma16();
        luma.into_raw().into_iter().map(|v| T::of(v as f64 / 65535.0)).collect()
    } else {
        let luma = decoded.into_luma8();
        luma.into_raw().into_iter().map(|v| T::of(v as f64 / 255.0)).collect()
    };
    GrayImage::from_vec(w, h, data)
}

/// Normalized Gaussian kernel truncated at `ceil(3 sigma)`.
pub fn gaussian_kernel<T: Real>(sigma: T) -> Result<Vec<T>> {
    if !(sigma > T::zero()) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let radius = (T::of(3.0) * sigma).ceil().to_usize().unwrap_or(1);
    let two_s2 = T::of(2.0) * sigma * sigma;
    let mut k: Vec<T> = (0..=2 * radius)
        .map(|i| {
            let d = T::of_usize(i) - T::of_usize(radius);
            (-(d * d) / two_s2).exp()
        })
        .collect();
    let sum = k.iter().fold(T::zero(), |a, &b| a + b);
    k.iter_mut().for_each(|v| *v = *v / sum);
    Ok(k)
}

/// Separable Gaussian blur with edge replication.
pub fn gaussian_smooth<T: Real>(img: &GrayImage<T>, sigma: T) -> Result<GrayImage<T>> {
    let kernel = gaussian_kernel(sigma)?;
    let r = (kernel.len() / 2) as isize;
    let (w, h) = img.dims();
    let mut tmp = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, &k) in kernel.iter().enumerate() {
                acc = acc + k * img.get_clamped(x as isize + i as isize - r, y as isize);
            }
            tmp.set(x, y, acc);
        }
    }
    let mut out = GrayImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = T::zero();
            for (i, &k) in kernel.iter().enumerate() {
                acc = acc + k * tmp.get_clamped(x as isize, y as isize + i as isize - r);
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Per-pixel first derivatives and gradient magnitude.
#[derive(Debug, Clone)]
pub struct GradientField<T> {
    pub gx: GrayImage<T>,
    pub gy: GrayImage<T>,
    pub magnitude: GrayImage<T>,
}

impl<T: Real> GradientField<T> {
    pub fn dims(&self) -> (usize, usize) {
        self.gx.dims()
    }

    /// Multiplies every derivative by `k` (used for contrast invariance checks).
    pub fn scaled(&self, k: T) -> Self {
        Self {
            gx: self.gx.map(|v| v * k),
            gy: self.gy.map(|v| v * k),
            magnitude: self.magnitude.map(|v| v * k.abs()),
        }
    }
}

/// Central differences in the interior, one-sided at the borders.
pub fn gradient<T: Real>(img: &GrayImage<T>) -> Result<GradientField<T>> {
    let (w, h) = img.dims();
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall { width: w, height: h, min: 3 });
    }
    let half = T::of(0.5);
    let gx = GrayImage::from_fn(w, h, |x, y| match x {
        0 => img.get(1, y) - img.get(0, y),
        _ if x == w - 1 => img.get(x, y) - img.get(x - 1, y),
        _ => (img.get(x + 1, y) - img.get(x - 1, y)) * half,
    });
    let gy = GrayImage::from_fn(w, h, |x, y| match y {
        0 => img.get(x, 1) - img.get(x, 0),
        _ if y == h - 1 => img.get(x, y) - img.get(x, y - 1),
        _ => (img.get(x, y + 1) - img.get(x, y - 1)) * half,
    });
    let magnitude = GrayImage::from_fn(w, h, |x, y| gx.get(x, y).hypot(gy.get(x, y)));
    Ok(GradientField { gx, gy, magnitude })
}
