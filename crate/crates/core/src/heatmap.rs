//! Per-joint score grids: target rendering, smoothing, flip merging and decoding.
//!
//! Grid coordinate `g` along an axis is the center of cell `g`. A grid
//! position maps to image pixels as `crop_origin + (g + 0.5) * stride`.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::instance::{BBox, Keypoint};

/// Links a heatmap grid to image coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Crop box in image pixels.
    pub crop: BBox,
    pub stride_x: f64,
    pub stride_y: f64,
}

impl Geometry {
    /// Geometry of a `height x width` grid spread over `crop`.
    pub fn for_crop(crop: BBox, height: usize, width: usize) -> Self {
        Geometry {
            crop,
            stride_x: crop.w / width as f64,
            stride_y: crop.h / height as f64,
        }
    }

    /// Grid equals image: unit strides, origin at zero.
    pub fn identity(height: usize, width: usize) -> Self {
        Geometry::for_crop(BBox::new(0.0, 0.0, width as f64, height as f64), height, width)
    }

    pub fn to_image(&self, gx: f64, gy: f64) -> (f64, f64) {
        (
            self.crop.x + (gx + 0.5) * self.stride_x,
            self.crop.y + (gy + 0.5) * self.stride_y,
        )
    }

    pub fn to_grid(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.crop.x) / self.stride_x - 0.5,
            (y - self.crop.y) / self.stride_y - 0.5,
        )
    }
}

/// `K x H x W` score grids for one joint set, row-major per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    pub joint_set: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub geometry: Geometry,
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(joint_set: impl Into<String>, channels: usize, height: usize, width: usize, geometry: Geometry) -> Result<Self> {
        Heatmap::from_values(joint_set, channels, height, width, geometry, vec![0.0; channels * height * width])
    }

    pub fn from_values(
        joint_set: impl Into<String>,
        channels: usize,
        height: usize,
        width: usize,
        geometry: Geometry,
        values: Vec<f32>,
    ) -> Result<Self> {
        let h = Heatmap {
            joint_set: joint_set.into(),
            channels,
            height,
            width,
            geometry,
            values,
        };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 3 || self.width < 3 {
            return Err(Error::ShapeMismatch(format!(
                "heatmap grid {}x{} is smaller than 3x3",
                self.height, self.width
            )));
        }
        if self.values.len() != self.channels * self.height * self.width {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{}x{} heatmap",
                self.values.len(),
                self.channels,
                self.height,
                self.width
            )));
        }
        if !(self.geometry.stride_x > 0.0 && self.geometry.stride_y > 0.0) {
            return Err(Error::InvalidValue("heatmap strides must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue("heatmap contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.plane();
        &self.values[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.plane();
        &mut self.values[k * n..(k + 1) * n]
    }

    pub fn at(&self, k: usize, y: usize, x: usize) -> f32 {
        self.values[(k * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, k: usize, y: usize, x: usize, v: f32) {
        self.values[(k * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Heatmap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Multiplies every value of one channel by `factor`.
    pub fn scale_channel(&mut self, k: usize, factor: f32) {
        self.channel_mut(k).iter_mut().for_each(|v| *v *= factor);
    }
}

/// A rendered training target plus its annotation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTarget {
    pub heatmap: Heatmap,
    pub mask: Vec<bool>,
}

/// Renders one unnormalized Gaussian per joint, centered at the joint's grid position.
///
/// `None` joints and joints whose nearest cell lies outside the grid yield
/// all-zero channels with a cleared mask bit.
pub fn render_target(
    joint_set: &str,
    joints: &[Option<(f64, f64)>],
    sigma: f64,
    height: usize,
    width: usize,
) -> Result<RenderedTarget> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidValue(format!("target sigma must be positive, got {sigma}")));
    }
    let mut heatmap = Heatmap::zeros(joint_set, joints.len(), height, width, Geometry::identity(height, width))?;
    let mut mask = vec![false; joints.len()];
    let denom = 2.0 * sigma * sigma;
    for (k, joint) in joints.iter().enumerate() {
        let Some((jx, jy)) = *joint else { continue };
        let inside = jx.is_finite()
            && jy.is_finite()
            && (-0.5..width as f64 - 0.5).contains(&jx)
            && (-0.5..height as f64 - 0.5).contains(&jy);
        if !inside {
            continue;
        }
        mask[k] = true;
        let channel = heatmap.channel_mut(k);
        for y in 0..height {
            let dy = y as f64 - jy;
            for x in 0..width {
                let dx = x as f64 - jx;
                channel[y * width + x] = (-(dx * dx + dy * dy) / denom).exp() as f32;
            }
        }
    }
    Ok(RenderedTarget { heatmap, mask })
}

/// Normalized 1-D Gaussian kernel of radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Edge-inclusive mirror index (`cba|abc|cba`), valid for any offset.
fn reflect(i: i64, n: i64) -> usize {
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

fn convolve_axis(src: &[f64], dst: &mut [f64], height: usize, width: usize, kernel: &[f64], along_x: bool) {
    let radius = (kernel.len() / 2) as i64;
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let off = t as i64 - radius;
                let v = if along_x {
                    src[y * width + reflect(x as i64 + off, width as i64)]
                } else {
                    src[reflect(y as i64 + off, height as i64) * width + x]
                };
                acc += w * v;
            }
            dst[y * width + x] = acc;
        }
    }
}

/// Separable Gaussian smoothing of one channel in double precision.
pub(crate) fn smooth_channel(channel: &[f32], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let src: Vec<f64> = channel.iter().map(|&v| v as f64).collect();
    if sigma <= 0.0 {
        return src;
    }
    let kernel = gaussian_kernel(sigma);
    let mut tmp = vec![0.0; src.len()];
    let mut out = vec![0.0; src.len()];
    convolve_axis(&src, &mut tmp, height, width, &kernel, true);
    convolve_axis(&tmp, &mut out, height, width, &kernel, false);
    out
}

/// Per-channel Gaussian smoothing with reflected borders; `sigma_filter = 0` is the identity.
pub fn smooth(h: &Heatmap, sigma_filter: f64) -> Result<Heatmap> {
    if sigma_filter < 0.0 || !sigma_filter.is_finite() {
        return Err(Error::InvalidValue(format!("smoothing sigma must be >= 0, got {sigma_filter}")));
    }
    if sigma_filter == 0.0 {
        return Ok(h.clone());
    }
    let mut out = h.clone();
    for k in 0..h.channels {
        let smoothed = smooth_channel(h.channel(k), h.height, h.width, sigma_filter);
        for (dst, v) in out.channel_mut(k).iter_mut().zip(smoothed) {
            *dst = v as f32;
        }
    }
    Ok(out)
}

/// Cells the un-mirrored map is shifted along W to compensate the flip offset.
pub const DEFAULT_FLIP_SHIFT: usize = 1;

/// Maps the output for a mirrored input back into the original frame:
/// reverse W, shift `shift` cells toward +x (edge columns repeat), swap paired channels.
pub fn unmirror(flipped: &Heatmap, flip_pairs: &[(usize, usize)], shift: usize) -> Heatmap {
    let mut out = flipped.clone();
    let mut perm: Vec<usize> = (0..flipped.channels).collect();
    for &(a, b) in flip_pairs {
        perm.swap(a, b);
    }
    let w = flipped.width;
    for (k, &src_k) in perm.iter().enumerate() {
        for y in 0..flipped.height {
            for x in 0..w {
                let unshifted = x.saturating_sub(shift);
                out.set(k, y, x, flipped.at(src_k, y, w - 1 - unshifted));
            }
        }
    }
    out
}

/// Inverse of [`unmirror`] away from the first `shift` columns: simulates the
/// network output for a horizontally mirrored input.
pub fn mirror(h: &Heatmap, flip_pairs: &[(usize, usize)], shift: usize) -> Heatmap {
    let mut out = h.clone();
    let mut perm: Vec<usize> = (0..h.channels).collect();
    for &(a, b) in flip_pairs {
        perm.swap(a, b);
    }
    let w = h.width;
    for (k, &src_k) in perm.iter().enumerate() {
        for y in 0..h.height {
            for j in 0..w {
                let x = (w - 1 - j + shift).min(w - 1);
                out.set(k, y, j, h.at(src_k, y, x));
            }
        }
    }
    out
}

/// Averages a heatmap with the un-mirrored output for the flipped input.
pub fn flip_merge(h: &Heatmap, flipped: &Heatmap, flip_pairs: &[(usize, usize)]) -> Result<Heatmap> {
    flip_merge_with_shift(h, flipped, flip_pairs, DEFAULT_FLIP_SHIFT)
}

pub fn flip_merge_with_shift(h: &Heatmap, flipped: &Heatmap, flip_pairs: &[(usize, usize)], shift: usize) -> Result<Heatmap> {
    if !h.same_shape(flipped) {
        return Err(Error::ShapeMismatch(format!(
            "flip merge of {}x{}x{} with {}x{}x{}",
            h.channels, h.height, h.width, flipped.channels, flipped.height, flipped.width
        )));
    }
    if let Some(&(a, b)) = flip_pairs.iter().find(|&&(a, b)| a >= h.channels || b >= h.channels) {
        return Err(Error::ShapeMismatch(format!("flip pair ({a}, {b}) exceeds {} channels", h.channels)));
    }
    let back = unmirror(flipped, flip_pairs, shift);
    let mut out = h.clone();
    for (dst, &v) in out.values.iter_mut().zip(&back.values) {
        *dst = ((*dst as f64 + v as f64) / 2.0) as f32;
    }
    Ok(out)
}

/// Decoded joints of one heatmap, in image pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPose {
    pub joint_set: String,
    pub keypoints: Vec<Keypoint>,
}

impl DecodedPose {
    pub fn missing(joint_set: impl Into<String>, count: usize) -> Self {
        DecodedPose {
            joint_set: joint_set.into(),
            keypoints: vec![Keypoint::missing(); count],
        }
    }
}

/// Direction of the quarter-cell refinement given the two axis neighbors.
fn quarter_shift(before: f64, after: f64) -> f64 {
    if after > before {
        0.25
    } else if before > after {
        -0.25
    } else {
        0.0
    }
}

/// Decodes one channel to a keypoint; `None` when the channel is all zeros.
pub(crate) fn decode_channel(
    channel: &[f32],
    height: usize,
    width: usize,
    geometry: &Geometry,
    smooth_sigma: f64,
    use_quarter_offset: bool,
) -> Keypoint {
    if channel.iter().all(|&v| v == 0.0) {
        return Keypoint::missing();
    }
    let map = smooth_channel(channel, height, width, smooth_sigma);
    let mut best = 0;
    for (i, &v) in map.iter().enumerate() {
        if v > map[best] {
            best = i;
        }
    }
    let (px, py) = (best % width, best / width);
    let (mut gx, mut gy) = (px as f64, py as f64);
    if use_quarter_offset {
        if px > 0 && px + 1 < width {
            gx += quarter_shift(map[best - 1], map[best + 1]);
        }
        if py > 0 && py + 1 < height {
            gy += quarter_shift(map[best - width], map[best + width]);
        }
    }
    let (x, y) = geometry.to_image(gx, gy);
    Keypoint::new(x, y, map[best])
}

/// Argmax decoding with optional smoothing and quarter-cell refinement.
pub fn decode(h: &Heatmap, smooth_sigma: f64, use_quarter_offset: bool) -> Result<DecodedPose> {
    h.validate()?;
    if smooth_sigma < 0.0 || !smooth_sigma.is_finite() {
        return Err(Error::InvalidValue(format!("smoothing sigma must be >= 0, got {smooth_sigma}")));
    }
    let keypoints = (0..h.channels)
        .map(|k| decode_channel(h.channel(k), h.height, h.width, &h.geometry, smooth_sigma, use_quarter_offset))
        .collect();
    Ok(DecodedPose {
        joint_set: h.joint_set.clone(),
        keypoints,
    })
}

const MAGIC: &[u8; 4] = b"PKHM";
const VERSION: u32 = 1;
const MAX_NAME_LEN: usize = 4096;

impl Heatmap {
    /// Little-endian binary encoding (`PKHM` version 1).
    pub fn to_bytes(&self) -> Vec<u8> {
        let name = self.joint_set.as_bytes();
        let mut buf = Vec::with_capacity(4 + 4 * 4 + 6 * 8 + 4 + name.len() + 4 * self.values.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        for dim in [self.channels, self.height, self.width] {
            buf.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        let g = &self.geometry;
        for v in [g.crop.x, g.crop.y, g.crop.w, g.crop.h, g.stride_x, g.stride_y] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::MalformedHeatmap("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::MalformedHeatmap(format!("unsupported version {version}")));
        }
        let channels = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let crop = BBox::new(r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let (stride_x, stride_y) = (r.f64()?, r.f64()?);
        let name_len = r.u32()? as usize;
        if name_len > MAX_NAME_LEN {
            return Err(Error::MalformedHeatmap(format!("joint set name length {name_len}")));
        }
        let joint_set = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::MalformedHeatmap("joint set name is not UTF-8".into()))?;
        let count = channels
            .checked_mul(height)
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| Error::MalformedHeatmap("dimensions overflow".into()))?;
        let payload = r.rest();
        if payload.len() != count * 4 {
            return Err(Error::MalformedHeatmap(format!(
                "payload holds {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        let values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let geometry = Geometry { crop, stride_x, stride_y };
        Heatmap::from_values(joint_set, channels, height, width, geometry, values)
            .map_err(|e| Error::MalformedHeatmap(e.to_string()))
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Heatmap::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::from(e).in_file(path.display().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::from(e).in_file(path.display().to_string()))?;
        Heatmap::from_bytes(&bytes).map_err(|e| e.in_file(path.display().to_string()))
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::MalformedHeatmap(format!("truncated header at byte {}", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(f64::from_le_bytes(a))
    }

    fn rest(&mut self) -> &'a [u8] {
        let out = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        out
    }
}
