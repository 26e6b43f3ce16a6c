//! Grayscale preprocessing and binary morphology.
//!
//! Foreground objects are labelled with 8-connectivity and background (hole)
//! regions with 4-connectivity, the complementary pair that keeps
//! `euler_number = objects - holes` topologically consistent. Pixels outside
//! the image are treated as background everywhere.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Grayscale image with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("intensity {bad} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        Self::new(width, height, vec![0.0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    fn same_shape(&self, other: &BinaryImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "image {}x{} vs mask {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }
}

/// Binary image, `true` = foreground.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        check_dims(width, height, bits.len())?;
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    /// Parses rows of `'#'`/`'1'` (foreground) and `'.'`/`'0'` (background).
    pub fn from_ascii(rows: &[&str]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut bits = Vec::with_capacity(width * height);
        for row in rows {
            if row.len() != width {
                return Err(Error::Dimension("ragged ascii rows".into()));
            }
            bits.extend(row.chars().map(|c| matches!(c, '#' | '1')));
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.width + col] = value;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn same_shape(&self, other: &BinaryImage) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Dimension(format!(
                "{}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    fn zip_with(&self, other: &BinaryImage, f: impl Fn(bool, bool) -> bool) -> Result<Self> {
        self.same_shape(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            bits,
        })
    }

    pub fn and(&self, other: &BinaryImage) -> Result<Self> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &BinaryImage) -> Result<Self> {
        self.zip_with(other, |a, b| a || b)
    }

    /// Set difference `self \ other`.
    pub fn minus(&self, other: &BinaryImage) -> Result<Self> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Rotates 90 degrees clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = BinaryImage::empty(h, w);
        for r in 0..h {
            for c in 0..w {
                out.set(c, h - 1 - r, self.get(r, c));
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(r, self.width - 1 - c, self.get(r, c));
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = self.clone();
        for r in 0..self.height {
            for c in 0..self.width {
                out.set(self.height - 1 - r, c, self.get(r, c));
            }
        }
        out
    }
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!("empty image {width}x{height}")));
    }
    if width * height != len {
        return Err(Error::Dimension(format!(
            "{width}x{height} image needs {} pixels, got {len}",
            width * height
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        const FOUR: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
        const EIGHT: [(isize, isize); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        match self {
            Connectivity::Four => &FOUR,
            Connectivity::Eight => &EIGHT,
        }
    }
}

/// Maximal connected set of foreground pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Component {
    /// `(row, col)` coordinates in discovery order; the first entry is the
    /// smallest pixel in row-major order.
    pub pixels: Vec<(usize, usize)>,
    pub area: usize,
    pub perimeter: usize,
}

/// Linearly maps `raw` so that its minimum goes to 0 and maximum to 1.
/// A constant image maps to all zeros.
pub fn rescale_to_unit(width: usize, height: usize, raw: &[f64]) -> Result<GrayImage> {
    check_dims(width, height, raw.len())?;
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite pixel".into()));
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let data = if span > 0.0 {
        raw.iter()
            .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; raw.len()]
    };
    GrayImage::new(width, height, data)
}

pub fn gamma_transform(img: &GrayImage, gamma: f64) -> Result<GrayImage> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Parameter(format!("gamma must be positive, got {gamma}")));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&p| p.powf(gamma)).collect(),
    })
}

/// Pixel-wise product with a binary mask.
pub fn apply_mask(img: &GrayImage, mask: &BinaryImage) -> Result<GrayImage> {
    img.same_shape(mask)?;
    let data = img
        .data
        .iter()
        .zip(&mask.bits)
        .map(|(&p, &m)| if m { p } else { 0.0 })
        .collect();
    Ok(GrayImage {
        width: img.width,
        height: img.height,
        data,
    })
}

/// Foreground iff intensity is strictly greater than `threshold`.
pub fn threshold_binary(img: &GrayImage, threshold: f64) -> Result<BinaryImage> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Parameter(format!(
            "threshold {threshold} outside [0,1]"
        )));
    }
    Ok(BinaryImage {
        width: img.width,
        height: img.height,
        bits: img.data.iter().map(|&p| p > threshold).collect(),
    })
}

/// Flood-fills every region of pixels whose value equals `target`. Returns
/// the region pixel lists in row-major order of their first pixel.
fn regions(bin: &BinaryImage, target: bool, conn: Connectivity) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = (bin.width, bin.height);
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if seen[start] || bin.bits[start] != target {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut pixels = Vec::new();
        while let Some(idx) = queue.pop_front() {
            let (r, c) = (idx / w, idx % w);
            pixels.push((r, c));
            for &(dr, dc) in conn.offsets() {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let n = nr as usize * w + nc as usize;
                if !seen[n] && bin.bits[n] == target {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        out.push(pixels);
    }
    out
}

fn is_boundary_pixel(bin: &BinaryImage, r: usize, c: usize) -> bool {
    Connectivity::Four.offsets().iter().any(|&(dr, dc)| {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        nr < 0
            || nc < 0
            || nr >= bin.height as isize
            || nc >= bin.width as isize
            || !bin.get(nr as usize, nc as usize)
    })
}

pub fn label_components(bin: &BinaryImage, conn: Connectivity) -> Vec<Component> {
    regions(bin, true, conn)
        .into_iter()
        .map(|pixels| {
            let perimeter = pixels
                .iter()
                .filter(|&&(r, c)| is_boundary_pixel(bin, r, c))
                .count();
            Component {
                area: pixels.len(),
                perimeter,
                pixels,
            }
        })
        .collect()
}

/// Number of component pixels that have a background (or off-image)
/// 4-neighbour.
pub fn perimeter(component: &Component, bin: &BinaryImage) -> usize {
    component
        .pixels
        .iter()
        .filter(|&&(r, c)| is_boundary_pixel(bin, r, c))
        .count()
}

/// Background 4-connected regions that do not touch the image border.
pub fn count_holes(bin: &BinaryImage) -> usize {
    let (w, h) = (bin.width, bin.height);
    regions(bin, false, Connectivity::Four)
        .iter()
        .filter(|px| {
            !px.iter()
                .any(|&(r, c)| r == 0 || c == 0 || r == h - 1 || c == w - 1)
        })
        .count()
}

pub fn euler_number(bin: &BinaryImage) -> i64 {
    label_components(bin, Connectivity::Eight).len() as i64 - count_holes(bin) as i64
}

/// Offsets of a digital disk: every `(dr, dc)` with `dr² + dc² <= radius²`.
pub fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let r2 = r * r;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r2 {
                out.push((dr, dc));
            }
        }
    }
    out
}

pub fn dilate(bin: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return bin.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (bin.width as isize, bin.height as isize);
    let mut out = BinaryImage::empty(bin.width, bin.height);
    for r in 0..h {
        for c in 0..w {
            if !bin.get(r as usize, c as usize) {
                continue;
            }
            for &(dr, dc) in &offsets {
                let (nr, nc) = (r + dr, c + dc);
                if nr >= 0 && nc >= 0 && nr < h && nc < w {
                    out.set(nr as usize, nc as usize, true);
                }
            }
        }
    }
    out
}

/// A pixel survives iff every disk offset lands on in-image foreground.
pub fn erode(bin: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return bin.clone();
    }
    let offsets = disk_offsets(radius);
    let (w, h) = (bin.width as isize, bin.height as isize);
    let mut out = BinaryImage::empty(bin.width, bin.height);
    for r in 0..h {
        for c in 0..w {
            let keep = offsets.iter().all(|&(dr, dc)| {
                let (nr, nc) = (r + dr, c + dc);
                nr >= 0 && nc >= 0 && nr < h && nc < w && bin.get(nr as usize, nc as usize)
            });
            if keep {
                out.set(r as usize, c as usize, true);
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RoiKind {
    Full,
    /// Band of the given width centred on the mask boundary.
    Ring(usize),
    /// Mask eroded by the given number of pixels.
    Inner(usize),
    /// Dilation by the given number of pixels, minus the mask.
    Outer(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub kind: RoiKind,
    pub bits: BinaryImage,
}

impl RoiMask {
    pub fn pixel_count(&self) -> usize {
        self.bits.count_ones()
    }
}

/// Builds a region of interest from the cell mask.
///
/// Returns [`Error::DegenerateMask`] when an `Inner` erosion removes every
/// pixel; callers fall back to the full mask in that case.
pub fn make_roi_mask(cell_mask: &BinaryImage, kind: RoiKind) -> Result<RoiMask> {
    if cell_mask.is_empty() {
        return Err(Error::DegenerateMask("cell mask has no foreground".into()));
    }
    let bits = match kind {
        RoiKind::Full => cell_mask.clone(),
        RoiKind::Ring(width) => {
            let outer = dilate(cell_mask, width.div_ceil(2));
            let inner = erode(cell_mask, width / 2);
            outer.minus(&inner)?
        }
        RoiKind::Inner(k) => {
            let eroded = erode(cell_mask, k);
            if eroded.is_empty() {
                return Err(Error::DegenerateMask(format!(
                    "erosion by {k} px empties the cell mask"
                )));
            }
            eroded
        }
        RoiKind::Outer(k) => dilate(cell_mask, k).minus(cell_mask)?,
    };
    Ok(RoiMask { kind, bits })
}

/// Mean, over all foreground pixels, of the distance to the nearest image
/// edge. Zero for an empty image.
pub fn average_object_distance(bin: &BinaryImage) -> f64 {
    let (w, h) = (bin.width, bin.height);
    let mut total = 0usize;
    let mut n = 0usize;
    for r in 0..h {
        for c in 0..w {
            if bin.get(r, c) {
                total += r.min(c).min(h - 1 - r).min(w - 1 - c);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        total as f64 / n as f64
    }
}
