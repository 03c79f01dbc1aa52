//! Image planes, colour conversion, resampling and multiscale retinex.
//!
//! Pixel values are kept as `f64` in the 8-bit range `[0, 255]`. Images are
//! stored as one [`Plane`] per channel (row-major).
//!
//! The retinex response of a channel `I` is
//!
//! ```text
//! R = Σ_s w_s · ( ln(I + ε) − ln(G_σs ∗ I + ε) )
//! ```
//!
//! with the Gaussian surround applied to the linear plane. `exp(R)` is then
//! linearly stretched per channel so its low/high percentiles land on 0/255.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "plane dimensions must be positive, got {width}x{height}"
            )));
        }
        if data.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "plane of {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// An RGB (3 planes) or grayscale (1 plane) image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    planes: Vec<Plane>,
}

impl Image {
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "image must have 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        let (w, h) = (planes[0].width, planes[0].height);
        if planes.iter().any(|p| p.width != w || p.height != h) {
            return Err(Error::InvalidArgument("channel planes differ in size".into()));
        }
        Ok(Self { planes })
    }

    pub fn gray(plane: Plane) -> Self {
        Self {
            planes: vec![plane],
        }
    }

    pub fn rgb(r: Plane, g: Plane, b: Plane) -> Result<Self> {
        Self::from_planes(vec![r, g, b])
    }

    pub fn width(&self) -> usize {
        self.planes[0].width
    }

    pub fn height(&self) -> usize {
        self.planes[0].height
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    /// Rounds and clamps every value to an integer in `[0, 255]`, i.e. the
    /// values an 8-bit encoder would store.
    pub fn quantized(&self) -> Image {
        Image {
            planes: self
                .planes
                .iter()
                .map(|p| p.map(|v| v.round().clamp(0.0, 255.0)))
                .collect(),
        }
    }
}

/// Loads a PNG or JPEG file as an RGB image with values in `[0, 255]`.
pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = image::guess_format(&bytes).map_err(|e| Error::UnsupportedFormat {
        path: path.to_owned(),
        reason: e.to_string(),
    })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: format!("{format:?} is not PNG or JPEG"),
        });
    }
    let decoded = image::load_from_memory_with_format(&bytes, format).map_err(|e| {
        Error::UnsupportedFormat {
            path: path.to_owned(),
            reason: e.to_string(),
        }
    })?;
    let rgb = decoded.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut planes = vec![Vec::with_capacity(w * h); 3];
    for px in rgb.pixels() {
        for (c, plane) in planes.iter_mut().enumerate() {
            plane.push(f64::from(px.0[c]));
        }
    }
    let planes = planes
        .into_iter()
        .map(|d| Plane::new(w, h, d))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(planes)
}

/// Writes an 8-bit RGB PNG. Grayscale images are replicated over the three
/// channels; values are rounded and clamped.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let q = img.quantized();
    let (w, h) = (img.width(), img.height());
    let mut buf = Vec::with_capacity(w * h * 3);
    for i in 0..w * h {
        for c in 0..3 {
            let plane = if q.channels() == 3 { &q.planes[c] } else { &q.planes[0] };
            buf.push(plane.data[i] as u8);
        }
    }
    let out = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::InvalidArgument("image buffer size mismatch".into()))?;
    out.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::UnsupportedFormat {
                path: path.to_owned(),
                reason: other.to_string(),
            },
        })
}

/// BT.601 luma of an RGB image.
pub fn to_grayscale(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "grayscale conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let [r, g, b] = [&img.planes[0], &img.planes[1], &img.planes[2]];
    let data = r
        .data
        .iter()
        .zip(&g.data)
        .zip(&b.data)
        .map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b)
        .collect();
    Ok(Image::gray(Plane::new(r.width, r.height, data)?))
}

/// Converts to a single luminance plane, passing grayscale input through.
pub fn luminance(img: &Image) -> Plane {
    match img.channels() {
        1 => img.planes[0].clone(),
        _ => to_grayscale(img).expect("3-channel image").planes.remove(0),
    }
}

/// Bilinear resampling with pixel-centre alignment and edge clamping.
pub fn resize_bilinear(img: &Image, out_w: usize, out_h: usize) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {out_w}x{out_h}"
        )));
    }
    if out_w == img.width() && out_h == img.height() {
        return Ok(img.clone());
    }
    let planes = img
        .planes
        .iter()
        .map(|p| resize_plane(p, out_w, out_h))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(planes)
}

fn sample_axis(out_idx: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((out_idx as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(in_len - 1);
    (i0, i1, src - i0 as f64)
}

fn resize_plane(p: &Plane, out_w: usize, out_h: usize) -> Result<Plane> {
    let xs: Vec<_> = (0..out_w).map(|x| sample_axis(x, p.width, out_w)).collect();
    let ys: Vec<_> = (0..out_h).map(|y| sample_axis(y, p.height, out_h)).collect();
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = p.get(x0, y0) * (1.0 - fx) + p.get(x1, y0) * fx;
            let bottom = p.get(x0, y1) * (1.0 - fx) + p.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Plane::new(out_w, out_h, data)
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`), valid
/// for offsets of any size.
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// 1-D reflective convolution along one axis of length `n`. Kernels longer
/// than the axis are folded into a dense `n×n` operator.
enum AxisOperator<'a> {
    Taps(&'a [f64]),
    Dense { n: usize, weights: Vec<f64> },
}

fn axis_operator(kernel: &[f64], n: usize) -> AxisOperator<'_> {
    if kernel.len() <= n {
        return AxisOperator::Taps(kernel);
    }
    let radius = (kernel.len() / 2) as isize;
    let mut weights = vec![0.0; n * n];
    for x in 0..n {
        for (k, &t) in kernel.iter().enumerate() {
            weights[x * n + reflect(x as isize + k as isize - radius, n)] += t;
        }
    }
    AxisOperator::Dense { n, weights }
}

impl AxisOperator<'_> {
    #[inline]
    fn apply(&self, line: &[f64], x: usize) -> f64 {
        let centre = line[x];
        let acc: f64 = match self {
            AxisOperator::Taps(kernel) => {
                let radius = (kernel.len() / 2) as isize;
                let n = line.len();
                kernel
                    .iter()
                    .enumerate()
                    .map(|(k, &t)| t * (line[reflect(x as isize + k as isize - radius, n)] - centre))
                    .sum()
            }
            AxisOperator::Dense { n, weights } => weights[x * n..(x + 1) * n]
                .iter()
                .zip(line)
                .map(|(&t, &v)| t * (v - centre))
                .sum(),
        };
        centre + acc
    }
}

/// Convolves `plane` with a normalized Gaussian of standard deviation `sigma`
/// (reflective borders). Constant planes are reproduced exactly.
pub fn gaussian_surround(plane: &Plane, sigma: f64) -> Result<Plane> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "surround sigma must be positive, got {sigma}"
        )));
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (plane.width, plane.height);
    let row_op = axis_operator(&kernel, w);
    let col_op = axis_operator(&kernel, h);

    // Taps act on differences from the centre sample, so constants stay exact.
    let mut tmp = vec![0.0; w * h];
    let mut line = Vec::with_capacity(w.max(h));
    for y in 0..h {
        line.clear();
        line.extend_from_slice(&plane.data[y * w..(y + 1) * w]);
        for x in 0..w {
            tmp[y * w + x] = row_op.apply(&line, x);
        }
    }
    let mut out = vec![0.0; w * h];
    for x in 0..w {
        line.clear();
        line.extend((0..h).map(|y| tmp[y * w + x]));
        for y in 0..h {
            out[y * w + x] = col_op.apply(&line, y);
        }
    }
    Plane::new(w, h, out)
}

/// Multiscale retinex settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsrParams {
    scales: Vec<f64>,
    weights: Vec<f64>,
    epsilon_log: f64,
    clip: (f64, f64),
}

impl MsrParams {
    /// Validates the settings and renormalizes `weights` to sum to one.
    pub fn new(scales: Vec<f64>, weights: Vec<f64>, epsilon_log: f64, clip: (f64, f64)) -> Result<Self> {
        if scales.is_empty() || scales.len() != weights.len() {
            return Err(Error::InvalidArgument(format!(
                "need matching non-empty scales and weights, got {} and {}",
                scales.len(),
                weights.len()
            )));
        }
        if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidArgument("retinex scales must be positive".into()));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("retinex weights must be positive".into()));
        }
        if !(epsilon_log > 0.0) {
            return Err(Error::InvalidArgument("epsilon_log must be positive".into()));
        }
        let (lo, hi) = clip;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "percentile clip must satisfy 0 <= low < high <= 100, got ({lo}, {hi})"
            )));
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            scales,
            weights,
            epsilon_log,
            clip,
        })
    }

    pub fn with_scales(scales: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let d = Self::default();
        Self::new(scales, weights, d.epsilon_log, d.clip)
    }

    pub fn scales(&self) -> &[f64] {
        &self.scales
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn epsilon_log(&self) -> f64 {
        self.epsilon_log
    }

    pub fn clip(&self) -> (f64, f64) {
        self.clip
    }
}

impl Default for MsrParams {
    fn default() -> Self {
        Self {
            scales: vec![15.0, 80.0, 250.0],
            weights: vec![1.0 / 3.0; 3],
            epsilon_log: 1.0,
            clip: (1.0, 99.0),
        }
    }
}

/// Weighted sum of single-scale log ratios for one plane (before `exp`).
pub fn msr_plane_response(plane: &Plane, params: &MsrParams) -> Result<Plane> {
    let eps = params.epsilon_log;
    let log_plane: Vec<f64> = plane.data.iter().map(|&v| (v + eps).ln()).collect();
    let mut acc = vec![0.0; log_plane.len()];
    for (&sigma, &weight) in params.scales.iter().zip(&params.weights) {
        let surround = gaussian_surround(plane, sigma)?;
        for ((a, &l), &f) in acc.iter_mut().zip(&log_plane).zip(&surround.data) {
            *a += weight * (l - (f + eps).ln());
        }
    }
    Plane::new(plane.width, plane.height, acc)
}

/// Per-channel log-domain retinex response `R`.
pub fn msr_log_response(img: &Image, params: &MsrParams) -> Result<Vec<Plane>> {
    if img.channels() != 3 {
        return Err(Error::InvalidArgument(format!(
            "retinex enhancement needs an RGB image, got {} channel(s)",
            img.channels()
        )));
    }
    img.planes.iter().map(|p| msr_plane_response(p, params)).collect()
}

/// Linear interpolated percentile of `values` (`p` in `[0, 100]`).
pub fn percentile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Maps the `clip` percentiles of a plane to 0 and 255 and clamps. A plane
/// with no spread maps to mid-gray.
pub fn percentile_stretch(plane: &Plane, clip: (f64, f64)) -> Plane {
    let lo = percentile(&plane.data, clip.0);
    let hi = percentile(&plane.data, clip.1);
    let span = hi - lo;
    if !(span > 0.0) {
        return plane.map(|_| 127.5);
    }
    plane.map(|v| ((v - lo) / span * 255.0).clamp(0.0, 255.0))
}

/// Multiscale retinex enhancement of an RGB image.
pub fn msr_enhance(img: &Image, params: &MsrParams) -> Result<Image> {
    let planes = msr_log_response(img, params)?
        .into_iter()
        .map(|r| percentile_stretch(&r.map(f64::exp), params.clip))
        .collect();
    Image::from_planes(planes)
}
