//! Class-specific, texture and combined feature vectors, plus z-score
//! normalization.
//!
//! Layouts (stable, versioned by [`FeatureVector::layout`]):
//!
//! * class-specific (`cs-v1`, 128): for each class group H, S, N, C, NM, G,
//!   for each of its three scalars, for each of the 7 grid thresholds; then
//!   masked mean and masked variance. Index = `(group * 3 + slot) * 7 + level`.
//! * texture (`tex-v1`, 140): for each of 20 thresholds spread evenly from the
//!   masked minimum towards the maximum, six morphology scalars (objects,
//!   area, convex area, mean eccentricity, Euler number, max perimeter); then
//!   mean, standard deviation, 32-bin entropy, range; then GLCM contrast,
//!   correlation, energy, homogeneity for offsets (0,1), (1,0), (1,1), (1,-1).
//! * combined (`comb-v1`, 177): the texture vector, then EACC, BAR, OAR, IAR,
//!   AOD at the 7 grid thresholds, then masked mean and variance.
//! * scalar pool (`pool-v1`, 20): the 18 class scalars, each at its class's
//!   own threshold, then masked mean and variance. Used by the cascade.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{
    self, apply_mask, average_object_distance, count_holes, gamma_transform, label_components,
    make_roi_mask, threshold_binary, BinaryImage, Component, Connectivity, GrayImage, RoiKind,
    RoiMask,
};
use crate::labels::ClassLabel;

pub const CLASS_SPECIFIC_LEN: usize = 128;
pub const TEXTURE_LEN: usize = 140;
pub const COMBINED_LEN: usize = 177;
pub const POOL_LEN: usize = 20;

pub const TEXTURE_LEVELS: usize = 20;
pub const TEXTURE_MORPH: usize = 6;
pub const ENTROPY_BINS: usize = 32;
pub const GLCM_LEVELS: usize = 8;
pub const GLCM_OFFSETS: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

/// Index of masked mean / variance inside the scalar pool.
pub const POOL_MEAN: usize = 18;
pub const POOL_VARIANCE: usize = 19;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScalarFeatureKind {
    /// Maximum object area.
    Moa,
    /// Total foreground area inside the cell.
    Acc,
    /// Maximum object perimeter.
    Mp,
    /// Hole count.
    Hn,
    /// Background pixel count inside the cell.
    Ha,
    /// Euler number.
    En,
    /// Average object area.
    Aoa,
    /// Object count.
    Cc,
    /// Area ratio in the boundary ring.
    Bar,
    /// Area ratio in the inner mask.
    Iar,
    /// Foreground count inside the inner mask.
    Eacc,
    /// Area ratio in the outer mask.
    Oar,
    /// Average object distance to the image border.
    Aod,
    MaskedMean,
    MaskedVariance,
}

impl ScalarFeatureKind {
    pub fn name(self) -> &'static str {
        use ScalarFeatureKind::*;
        match self {
            Moa => "MOA",
            Acc => "ACC",
            Mp => "MP",
            Hn => "HN",
            Ha => "HA",
            En => "EN",
            Aoa => "AOA",
            Cc => "CC",
            Bar => "BAR",
            Iar => "IAR",
            Eacc => "EACC",
            Oar => "OAR",
            Aod => "AOD",
            MaskedMean => "mean",
            MaskedVariance => "variance",
        }
    }
}

/// The three binary-image scalars that characterise each class.
pub fn class_scalars(class: ClassLabel) -> [ScalarFeatureKind; 3] {
    use ScalarFeatureKind::*;
    match class {
        ClassLabel::Homogeneous => [Moa, Acc, Mp],
        ClassLabel::Speckled => [Hn, Ha, En],
        ClassLabel::Nucleolar => [Moa, Aoa, Cc],
        ClassLabel::Centromere => [Moa, Aoa, Cc],
        ClassLabel::NuclearMembrane => [Bar, Iar, Eacc],
        ClassLabel::Golgi => [Oar, Eacc, Aod],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureSetKind {
    ClassSpecific,
    Texture,
    Combined,
}

impl FeatureSetKind {
    pub fn len(self) -> usize {
        match self {
            FeatureSetKind::ClassSpecific => CLASS_SPECIFIC_LEN,
            FeatureSetKind::Texture => TEXTURE_LEN,
            FeatureSetKind::Combined => COMBINED_LEN,
        }
    }

    pub fn layout_id(self) -> &'static str {
        match self {
            FeatureSetKind::ClassSpecific => "cs-v1",
            FeatureSetKind::Texture => "tex-v1",
            FeatureSetKind::Combined => "comb-v1",
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            FeatureSetKind::ClassSpecific => "cs",
            FeatureSetKind::Texture => "texture",
            FeatureSetKind::Combined => "combined",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cs" | "class-specific" => Some(FeatureSetKind::ClassSpecific),
            "texture" | "tex" => Some(FeatureSetKind::Texture),
            "combined" | "comb" => Some(FeatureSetKind::Combined),
            _ => None,
        }
    }

    /// Column names for the layout, in vector order.
    pub fn column_names(self) -> Vec<String> {
        match self {
            FeatureSetKind::ClassSpecific => class_specific_names(&default_grid()),
            FeatureSetKind::Texture => texture_names(),
            FeatureSetKind::Combined => {
                let mut names = texture_names();
                let grid = default_grid();
                for kind in COMBINED_EXTRAS.iter().map(|(_, _, k)| k) {
                    for t in &grid {
                        names.push(format!("{}@{t:.2}", kind.name()));
                    }
                }
                names.push("mean".into());
                names.push("variance".into());
                names
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub kind: FeatureSetKind,
    pub values: Vec<f64>,
    pub layout: String,
    /// Set when an ROI erosion emptied the mask and the full mask was used.
    pub degenerate: bool,
}

impl FeatureVector {
    fn new(kind: FeatureSetKind, values: Vec<f64>, degenerate: bool) -> Self {
        debug_assert_eq!(values.len(), kind.len());
        Self {
            kind,
            values,
            layout: kind.layout_id().to_string(),
            degenerate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub gamma: f64,
    pub threshold: f64,
}

impl Default for ClassParams {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            threshold: 0.45,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    /// Indexed by [`ClassLabel::index`].
    pub class_params: [ClassParams; 6],
    pub threshold_grid: Vec<f64>,
    /// k_b
    pub ring_width: usize,
    /// k_i
    pub inner_margin: usize,
    /// k_o
    pub outer_margin: usize,
}

fn default_grid() -> Vec<f64> {
    vec![0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8]
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            class_params: [ClassParams::default(); 6],
            threshold_grid: default_grid(),
            ring_width: 5,
            inner_margin: 5,
            outer_margin: 10,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threshold_grid.len() != 7 {
            return Err(Error::Parameter(format!(
                "threshold grid needs 7 levels, got {}",
                self.threshold_grid.len()
            )));
        }
        if self.threshold_grid.iter().any(|t| !(0.0..=1.0).contains(t))
            || self.threshold_grid.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::Parameter(
                "threshold grid must be strictly increasing within [0,1]".into(),
            ));
        }
        for p in &self.class_params {
            if !(p.gamma > 0.0 && p.gamma.is_finite()) {
                return Err(Error::Parameter(format!("gamma {} must be positive", p.gamma)));
            }
            if !(0.0..=1.0).contains(&p.threshold) {
                return Err(Error::Parameter(format!("threshold {} outside [0,1]", p.threshold)));
            }
        }
        if self.ring_width == 0 || self.inner_margin == 0 || self.outer_margin == 0 {
            return Err(Error::Parameter("k_b, k_i, k_o must be at least 1".into()));
        }
        Ok(())
    }
}

/// Foreground fraction of `bin` inside `roi`.
pub fn area_ratio(bin: &BinaryImage, roi: &RoiMask) -> Result<f64> {
    bin.same_shape(&roi.bits)?;
    let total = roi.pixel_count();
    if total == 0 {
        return Err(Error::DegenerateMask(format!("{:?} ROI is empty", roi.kind)));
    }
    Ok(count_within(bin, &roi.bits) as f64 / total as f64)
}

fn count_within(bin: &BinaryImage, region: &BinaryImage) -> usize {
    bin.bits()
        .iter()
        .zip(region.bits())
        .filter(|(&a, &b)| a && b)
        .count()
}

/// Every region a class scalar can be measured over, built once per cell.
#[derive(Debug, Clone)]
pub struct CellRegions {
    pub full: RoiMask,
    pub ring: RoiMask,
    /// Falls back to the full mask when erosion empties it.
    pub inner: RoiMask,
    pub outer: RoiMask,
    /// Cell mask dilated by `k_o`: where AOD looks for objects.
    pub extended: BinaryImage,
    pub degenerate: bool,
}

impl CellRegions {
    pub fn new(cell_mask: &BinaryImage, cfg: &ExtractorConfig) -> Result<Self> {
        let full = make_roi_mask(cell_mask, RoiKind::Full)?;
        let ring = make_roi_mask(cell_mask, RoiKind::Ring(cfg.ring_width))?;
        let (inner, degenerate) = match make_roi_mask(cell_mask, RoiKind::Inner(cfg.inner_margin)) {
            Ok(m) => (m, false),
            Err(Error::DegenerateMask(_)) => (full.clone(), true),
            Err(e) => return Err(e),
        };
        let outer = make_roi_mask(cell_mask, RoiKind::Outer(cfg.outer_margin))?;
        let extended = imaging::dilate(cell_mask, cfg.outer_margin);
        Ok(Self {
            full,
            ring,
            inner,
            outer,
            extended,
            degenerate,
        })
    }
}

/// Lazily evaluated scalars for one thresholded image.
struct ThresholdedCell<'a> {
    bits: BinaryImage,
    regions: &'a CellRegions,
    in_cell: BinaryImage,
    components: Option<Vec<Component>>,
}

impl<'a> ThresholdedCell<'a> {
    fn new(img: &GrayImage, threshold: f64, regions: &'a CellRegions) -> Result<Self> {
        let bits = threshold_binary(img, threshold)?;
        let in_cell = bits.and(&regions.full.bits)?;
        Ok(Self {
            bits,
            regions,
            in_cell,
            components: None,
        })
    }

    fn components(&mut self) -> &[Component] {
        if self.components.is_none() {
            self.components = Some(label_components(&self.in_cell, Connectivity::Eight));
        }
        self.components.as_deref().unwrap_or(&[])
    }

    fn ratio(&self, roi: &RoiMask) -> f64 {
        let total = roi.pixel_count();
        if total == 0 {
            return 0.0;
        }
        count_within(&self.bits, &roi.bits) as f64 / total as f64
    }

    fn scalar(&mut self, kind: ScalarFeatureKind) -> f64 {
        use ScalarFeatureKind::*;
        match kind {
            Moa => self.components().iter().map(|c| c.area).max().unwrap_or(0) as f64,
            Acc => self.in_cell.count_ones() as f64,
            Mp => self.components().iter().map(|c| c.perimeter).max().unwrap_or(0) as f64,
            Hn => count_holes(&self.in_cell) as f64,
            Ha => (self.regions.full.pixel_count() - self.in_cell.count_ones()) as f64,
            En => self.components().len() as f64 - count_holes(&self.in_cell) as f64,
            Aoa => {
                let comps = self.components();
                if comps.is_empty() {
                    0.0
                } else {
                    comps.iter().map(|c| c.area).sum::<usize>() as f64 / comps.len() as f64
                }
            }
            Cc => self.components().len() as f64,
            Bar => self.ratio(&self.regions.ring),
            Iar => self.ratio(&self.regions.inner),
            Eacc => count_within(&self.bits, &self.regions.inner.bits) as f64,
            Oar => self.ratio(&self.regions.outer),
            Aod => {
                let objects = self
                    .bits
                    .and(&self.regions.extended)
                    .expect("regions share the image shape");
                average_object_distance(&objects)
            }
            MaskedMean | MaskedVariance => unreachable!("grayscale statistics are not thresholded"),
        }
    }
}

fn masked_mean_variance(img: &GrayImage, mask: &BinaryImage) -> (f64, f64) {
    let values: Vec<f64> = img
        .pixels()
        .iter()
        .zip(mask.bits())
        .filter_map(|(&p, &m)| m.then_some(p))
        .collect();
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Computes one scalar on an already preprocessed (rescaled, gamma-adjusted)
/// image. The grayscale statistics ignore `threshold`.
pub fn compute_scalar(
    kind: ScalarFeatureKind,
    img: &GrayImage,
    cell_mask: &BinaryImage,
    threshold: f64,
    cfg: &ExtractorConfig,
) -> Result<f64> {
    if img.width() != cell_mask.width() || img.height() != cell_mask.height() {
        return Err(Error::Dimension("image and cell mask differ in size".into()));
    }
    let regions = CellRegions::new(cell_mask, cfg)?;
    match kind {
        ScalarFeatureKind::MaskedMean => Ok(masked_mean_variance(img, cell_mask).0),
        ScalarFeatureKind::MaskedVariance => Ok(masked_mean_variance(img, cell_mask).1),
        _ => Ok(ThresholdedCell::new(img, threshold, &regions)?.scalar(kind)),
    }
}

/// Every feature view of a single cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFeatures {
    pub class_specific: FeatureVector,
    pub texture: FeatureVector,
    pub pool: Vec<f64>,
}

impl CellFeatures {
    pub fn view(&self, kind: FeatureSetKind) -> FeatureVector {
        match kind {
            FeatureSetKind::ClassSpecific => self.class_specific.clone(),
            FeatureSetKind::Texture => self.texture.clone(),
            FeatureSetKind::Combined => build_combined_vector(&self.texture, &self.class_specific)
                .expect("vectors come from the same extractor"),
        }
    }
}

/// Runs every extractor on one cell. `img` is the rescaled image.
pub fn extract_all(img: &GrayImage, cell_mask: &BinaryImage, cfg: &ExtractorConfig) -> Result<CellFeatures> {
    cfg.validate()?;
    let regions = CellRegions::new(cell_mask, cfg)?;
    let (class_specific, pool) = class_specific_and_pool(img, &regions, cfg)?;
    let texture = extract_texture_vector(img, cell_mask)?;
    Ok(CellFeatures {
        class_specific,
        texture,
        pool,
    })
}

fn class_specific_and_pool(
    img: &GrayImage,
    regions: &CellRegions,
    cfg: &ExtractorConfig,
) -> Result<(FeatureVector, Vec<f64>)> {
    let mut cs = Vec::with_capacity(CLASS_SPECIFIC_LEN);
    let mut pool = Vec::with_capacity(POOL_LEN);
    for class in ClassLabel::ALL {
        let params = cfg.class_params[class.index()];
        let adjusted = gamma_transform(img, params.gamma)?;
        let scalars = class_scalars(class);
        let mut per_level = Vec::with_capacity(cfg.threshold_grid.len());
        for &t in &cfg.threshold_grid {
            let mut cell = ThresholdedCell::new(&adjusted, t, regions)?;
            per_level.push(scalars.map(|k| cell.scalar(k)));
        }
        for slot in 0..3 {
            cs.extend(per_level.iter().map(|v| v[slot]));
        }
        let mut cell = ThresholdedCell::new(&adjusted, params.threshold, regions)?;
        pool.extend(scalars.map(|k| cell.scalar(k)));
    }
    let (mean, var) = masked_mean_variance(img, &regions.full.bits);
    cs.extend([mean, var]);
    pool.extend([mean, var]);
    Ok((
        FeatureVector::new(FeatureSetKind::ClassSpecific, cs, regions.degenerate),
        pool,
    ))
}

/// 128-dimensional class-specific vector of a rescaled cell image.
pub fn extract_class_specific_vector(
    img: &GrayImage,
    cell_mask: &BinaryImage,
    cfg: &ExtractorConfig,
) -> Result<FeatureVector> {
    cfg.validate()?;
    let regions = CellRegions::new(cell_mask, cfg)?;
    Ok(class_specific_and_pool(img, &regions, cfg)?.0)
}

/// The 20-value scalar pool: each class's scalars at its own threshold.
pub fn extract_scalar_pool(img: &GrayImage, cell_mask: &BinaryImage, cfg: &ExtractorConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let regions = CellRegions::new(cell_mask, cfg)?;
    Ok(class_specific_and_pool(img, &regions, cfg)?.1)
}

/// Pool indices of a class's three scalars.
pub fn pool_indices(class: ClassLabel) -> [usize; 3] {
    let base = class.index() * 3;
    [base, base + 1, base + 2]
}

/// Position of `(class group, slot, level)` in the class-specific layout.
pub fn class_specific_index(class: ClassLabel, slot: usize, level: usize) -> usize {
    (class.index() * 3 + slot) * 7 + level
}

fn class_specific_names(grid: &[f64]) -> Vec<String> {
    let mut names = Vec::with_capacity(CLASS_SPECIFIC_LEN);
    for class in ClassLabel::ALL {
        for kind in class_scalars(class) {
            for t in grid {
                names.push(format!("{}.{}@{t:.2}", class.short(), kind.name()));
            }
        }
    }
    names.push("mean".into());
    names.push("variance".into());
    names
}

fn texture_names() -> Vec<String> {
    const MORPH: [&str; TEXTURE_MORPH] = ["objects", "area", "convex_area", "eccentricity", "euler", "max_perimeter"];
    const GLCM: [&str; 4] = ["contrast", "correlation", "energy", "homogeneity"];
    let mut names = Vec::with_capacity(TEXTURE_LEN);
    for level in 0..TEXTURE_LEVELS {
        for m in MORPH {
            names.push(format!("L{:02}.{m}", level + 1));
        }
    }
    names.extend(["int.mean", "int.std", "int.entropy", "int.range"].map(String::from));
    for (dr, dc) in GLCM_OFFSETS {
        for g in GLCM {
            names.push(format!("glcm[{dr}:{dc}].{g}"));
        }
    }
    names
}

/// Convex hull area of a component, taking each pixel as a unit square.
fn convex_area(component: &Component) -> f64 {
    use std::collections::BTreeMap;
    let mut spans: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &(r, c) in &component.pixels {
        let e = spans.entry(r).or_insert((c, c));
        e.0 = e.0.min(c);
        e.1 = e.1.max(c);
    }
    let mut pts: Vec<(i64, i64)> = Vec::with_capacity(spans.len() * 4);
    for (&r, &(lo, hi)) in &spans {
        let (r, lo, hi) = (r as i64, lo as i64, hi as i64 + 1);
        pts.extend([(r, lo), (r, hi), (r + 1, lo), (r + 1, hi)]);
    }
    pts.sort_unstable();
    pts.dedup();
    let hull = monotone_chain(&pts);
    let n = hull.len();
    let twice: i64 = (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum();
    twice.abs() as f64 / 2.0
}

fn monotone_chain(pts: &[(i64, i64)]) -> Vec<(i64, i64)> {
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let cross = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Eccentricity of the ellipse with the component's second central moments.
fn eccentricity(component: &Component) -> f64 {
    let n = component.pixels.len() as f64;
    let (sr, sc) = component
        .pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), &(r, c)| (a + r as f64, b + c as f64));
    let (mr, mc) = (sr / n, sc / n);
    let (mut a, mut b, mut c) = (1.0 / 12.0, 0.0, 1.0 / 12.0);
    for &(r, col) in &component.pixels {
        let (dr, dc) = (r as f64 - mr, col as f64 - mc);
        a += dr * dr / n;
        b += dr * dc / n;
        c += dc * dc / n;
    }
    let half_diff = ((a - c) / 2.0).hypot(b);
    let l1 = (a + c) / 2.0 + half_diff;
    let l2 = (a + c) / 2.0 - half_diff;
    if l1 <= 0.0 {
        return 0.0;
    }
    (1.0 - (l2 / l1).max(0.0)).max(0.0).sqrt()
}

fn glcm_stats(img: &GrayImage, mask: &BinaryImage, offset: (isize, isize)) -> [f64; 4] {
    let q = |v: f64| ((v * GLCM_LEVELS as f64) as usize).min(GLCM_LEVELS - 1);
    let mut counts = [[0.0f64; GLCM_LEVELS]; GLCM_LEVELS];
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut total = 0.0;
    for r in 0..h {
        for c in 0..w {
            let (nr, nc) = (r + offset.0, c + offset.1);
            if nr < 0 || nc < 0 || nr >= h || nc >= w {
                continue;
            }
            let (r, c, nr, nc) = (r as usize, c as usize, nr as usize, nc as usize);
            if !mask.get(r, c) || !mask.get(nr, nc) {
                continue;
            }
            let (i, j) = (q(img.get(r, c)), q(img.get(nr, nc)));
            counts[i][j] += 1.0;
            counts[j][i] += 1.0;
            total += 2.0;
        }
    }
    if total == 0.0 {
        return [0.0; 4];
    }
    let mut mu = 0.0;
    for (i, row) in counts.iter().enumerate() {
        for &v in row {
            mu += i as f64 * v / total;
        }
    }
    let (mut contrast, mut var, mut cov, mut energy, mut homogeneity) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, row) in counts.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let p = v / total;
            let d = i as f64 - j as f64;
            contrast += d * d * p;
            var += (i as f64 - mu).powi(2) * p;
            cov += (i as f64 - mu) * (j as f64 - mu) * p;
            energy += p * p;
            homogeneity += p / (1.0 + d.abs());
        }
    }
    let correlation = if var > 1e-15 { cov / var } else { 0.0 };
    [contrast, correlation, energy, homogeneity]
}

/// 140-dimensional texture vector over the masked, rescaled image.
pub fn extract_texture_vector(img: &GrayImage, cell_mask: &BinaryImage) -> Result<FeatureVector> {
    let masked = apply_mask(img, cell_mask)?;
    let values: Vec<f64> = img
        .pixels()
        .iter()
        .zip(cell_mask.bits())
        .filter_map(|(&p, &m)| m.then_some(p))
        .collect();
    let (lo, hi) = if values.is_empty() {
        (0.0, 0.0)
    } else {
        values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    };

    let mut out = Vec::with_capacity(TEXTURE_LEN);
    for level in 0..TEXTURE_LEVELS {
        let t = lo + (hi - lo) * level as f64 / TEXTURE_LEVELS as f64;
        let bin = threshold_binary(&masked, t)?.and(cell_mask)?;
        let comps = label_components(&bin, Connectivity::Eight);
        let area = bin.count_ones() as f64;
        let convex: f64 = comps.iter().map(convex_area).sum();
        let ecc = if comps.is_empty() {
            0.0
        } else {
            comps.iter().map(eccentricity).sum::<f64>() / comps.len() as f64
        };
        let euler = comps.len() as f64 - count_holes(&bin) as f64;
        let max_perimeter = comps.iter().map(|c| c.perimeter).max().unwrap_or(0) as f64;
        out.extend([comps.len() as f64, area, convex, ecc, euler, max_perimeter]);
    }

    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut hist = [0usize; ENTROPY_BINS];
    for &v in &values {
        hist[((v * ENTROPY_BINS as f64) as usize).min(ENTROPY_BINS - 1)] += 1;
    }
    let entropy = -hist
        .iter()
        .filter(|&&k| k > 0)
        .map(|&k| {
            let p = k as f64 / n;
            p * p.log2()
        })
        .sum::<f64>();
    out.extend([mean, std, entropy.max(0.0), hi - lo]);

    for offset in GLCM_OFFSETS {
        out.extend(glcm_stats(img, cell_mask, offset));
    }
    Ok(FeatureVector::new(FeatureSetKind::Texture, out, false))
}

/// Class-specific slots appended to the texture vector, as
/// `(class group, slot, kind)`.
const COMBINED_EXTRAS: [(ClassLabel, usize, ScalarFeatureKind); 5] = [
    (ClassLabel::NuclearMembrane, 2, ScalarFeatureKind::Eacc),
    (ClassLabel::NuclearMembrane, 0, ScalarFeatureKind::Bar),
    (ClassLabel::Golgi, 0, ScalarFeatureKind::Oar),
    (ClassLabel::NuclearMembrane, 1, ScalarFeatureKind::Iar),
    (ClassLabel::Golgi, 2, ScalarFeatureKind::Aod),
];

pub fn build_combined_vector(tex: &FeatureVector, cs: &FeatureVector) -> Result<FeatureVector> {
    if tex.kind != FeatureSetKind::Texture || cs.kind != FeatureSetKind::ClassSpecific {
        return Err(Error::Input("combined vector needs a texture and a class-specific vector".into()));
    }
    if tex.values.len() != TEXTURE_LEN || cs.values.len() != CLASS_SPECIFIC_LEN {
        return Err(Error::Dimension("unexpected source vector length".into()));
    }
    let mut values = tex.values.clone();
    for (class, slot, _) in COMBINED_EXTRAS {
        values.extend((0..7).map(|level| cs.values[class_specific_index(class, slot, level)]));
    }
    values.extend_from_slice(&cs.values[126..128]);
    Ok(FeatureVector::new(
        FeatureSetKind::Combined,
        values,
        tex.degenerate || cs.degenerate,
    ))
}

/// Per-column z-score parameters fitted on a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    pub constant: Vec<bool>,
    pub fitted_on: String,
}

pub const CONSTANT_STDEV: f64 = 1e-12;

/// Population (divisor n) column means and standard deviations.
pub fn fit_zscore(rows: &[Vec<f64>], fitted_on: &str) -> Result<NormalizationStats> {
    if rows.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "z-score needs at least 2 rows, got {}",
            rows.len()
        )));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Dimension("ragged training matrix".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in rows {
        for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m).powi(2);
        }
    }
    let stdev: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
    let constant = stdev.iter().map(|&s| s < CONSTANT_STDEV).collect();
    Ok(NormalizationStats {
        mean,
        stdev,
        constant,
        fitted_on: fitted_on.to_string(),
    })
}

impl NormalizationStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `(x - mean) / stdev` per column; constant columns map to 0.
    pub fn apply(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "vector of length {} vs stats of length {}",
                values.len(),
                self.dim()
            )));
        }
        Ok(values
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if self.constant[i] {
                    0.0
                } else {
                    (x - self.mean[i]) / self.stdev[i]
                }
            })
            .collect())
    }

    pub fn apply_rows(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.apply(r)).collect()
    }
}

pub fn apply_zscore(stats: &NormalizationStats, v: &FeatureVector) -> Result<FeatureVector> {
    Ok(FeatureVector {
        kind: v.kind,
        values: stats.apply(&v.values)?,
        layout: v.layout.clone(),
        degenerate: v.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::rescale_to_unit;
    use proptest::prelude::*;

    fn disk_mask(size: usize, cy: f64, cx: f64, radius: f64) -> BinaryImage {
        let mut m = BinaryImage::empty(size, size);
        for r in 0..size {
            for c in 0..size {
                if (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2) <= radius * radius {
                    m.set(r, c, true);
                }
            }
        }
        m
    }

    /// Bright disk image with a few dark pixels and a brighter spot.
    fn phantom(size: usize) -> (Vec<f64>, BinaryImage) {
        let mask = disk_mask(size, size as f64 / 2.0, size as f64 / 2.0, size as f64 / 3.0);
        let raw: Vec<f64> = (0..size * size)
            .map(|i| {
                let (r, c) = (i / size, i % size);
                let base = if mask.get(r, c) { 120.0 } else { 10.0 };
                base + ((r * 7 + c * 13) % 17) as f64 * 5.0
            })
            .collect();
        (raw, mask)
    }

    #[test]
    fn area_ratio_examples() {
        let roi = RoiMask {
            kind: RoiKind::Full,
            bits: BinaryImage::new(5, 2, vec![true; 10]).unwrap(),
        };
        assert_eq!(area_ratio(&BinaryImage::full(5, 2), &roi).unwrap(), 1.0);
        assert_eq!(area_ratio(&BinaryImage::empty(5, 2), &roi).unwrap(), 0.0);
        let mut b = BinaryImage::empty(5, 2);
        for i in 0..4 {
            b.set(0, i, true);
        }
        assert!((area_ratio(&b, &roi).unwrap() - 0.4).abs() < 1e-15);
        let empty = RoiMask {
            kind: RoiKind::Inner(5),
            bits: BinaryImage::empty(5, 2),
        };
        assert!(matches!(area_ratio(&b, &empty), Err(Error::DegenerateMask(_))));
    }

    #[test]
    fn scalar_examples_on_blank_and_solid() {
        let cfg = ExtractorConfig::default();
        let mask = disk_mask(21, 10.0, 10.0, 8.0);
        let zero = GrayImage::zeros(21, 21).unwrap();
        for kind in [ScalarFeatureKind::Moa, ScalarFeatureKind::Cc, ScalarFeatureKind::Aoa, ScalarFeatureKind::Hn] {
            assert_eq!(compute_scalar(kind, &zero, &mask, 0.45, &cfg).unwrap(), 0.0);
        }
        let solid = apply_mask(&GrayImage::new(21, 21, vec![1.0; 441]).unwrap(), &mask).unwrap();
        let area = mask.count_ones() as f64;
        assert_eq!(compute_scalar(ScalarFeatureKind::Acc, &solid, &mask, 0.45, &cfg).unwrap(), area);
        assert_eq!(compute_scalar(ScalarFeatureKind::Cc, &solid, &mask, 0.45, &cfg).unwrap(), 1.0);
        assert_eq!(compute_scalar(ScalarFeatureKind::Ha, &solid, &mask, 0.45, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn punched_disk_holes_match_flood_fill() {
        // 15x15 disk with three isolated single-pixel holes.
        let mask = disk_mask(15, 7.0, 7.0, 6.5);
        let mut data = vec![0.0; 225];
        for r in 0..15 {
            for c in 0..15 {
                if mask.get(r, c) {
                    data[r * 15 + c] = 1.0;
                }
            }
        }
        for (r, c) in [(4, 4), (7, 9), (10, 5)] {
            data[r * 15 + c] = 0.0;
        }
        let img = GrayImage::new(15, 15, data).unwrap();
        let cfg = ExtractorConfig::default();
        // Oracle: flood the background from the border, count what is left.
        let fg: Vec<bool> = img.pixels().iter().map(|&p| p > 0.45).collect();
        let mut reached = vec![false; 225];
        let mut stack: Vec<(usize, usize)> = (0..15)
            .flat_map(|i| [(0, i), (14, i), (i, 0), (i, 14)])
            .filter(|&(r, c)| !fg[r * 15 + c])
            .collect();
        while let Some((r, c)) = stack.pop() {
            if reached[r * 15 + c] {
                continue;
            }
            reached[r * 15 + c] = true;
            for (dr, dc) in [(-1i32, 0i32), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as i32 + dr, c as i32 + dc);
                if (0..15).contains(&nr) && (0..15).contains(&nc) && !fg[nr as usize * 15 + nc as usize] {
                    stack.push((nr as usize, nc as usize));
                }
            }
        }
        let enclosed = (0..225).filter(|&i| !fg[i] && !reached[i]).count();
        assert_eq!(enclosed, 3);
        assert_eq!(compute_scalar(ScalarFeatureKind::Hn, &img, &mask, 0.45, &cfg).unwrap(), 3.0);
        assert_eq!(compute_scalar(ScalarFeatureKind::En, &img, &mask, 0.45, &cfg).unwrap(), -2.0);
    }

    #[test]
    fn vector_lengths_are_fixed() {
        let (raw, mask) = phantom(40);
        let img = rescale_to_unit(40, 40, &raw).unwrap();
        let all = extract_all(&img, &mask, &ExtractorConfig::default()).unwrap();
        assert_eq!(all.class_specific.values.len(), 128);
        assert_eq!(all.texture.values.len(), 140);
        assert_eq!(all.pool.len(), POOL_LEN);
        let comb = all.view(FeatureSetKind::Combined);
        assert_eq!(comb.values.len(), 177);
        assert_eq!(&comb.values[..140], &all.texture.values[..]);
        for kind in [FeatureSetKind::ClassSpecific, FeatureSetKind::Texture, FeatureSetKind::Combined] {
            assert_eq!(kind.column_names().len(), kind.len());
        }
    }

    #[test]
    fn blank_cell_class_specific() {
        let mask = disk_mask(30, 15.0, 15.0, 11.0);
        let img = rescale_to_unit(30, 30, &[3.0; 900]).unwrap();
        let v = extract_class_specific_vector(&img, &mask, &ExtractorConfig::default()).unwrap();
        let area = mask.count_ones() as f64;
        for (i, &x) in v.values[..126].iter().enumerate() {
            let is_ha = (i / 7) == 4;
            if is_ha {
                // background count inside the cell is the whole cell
                assert_eq!(x, area, "index {i}");
            } else {
                assert_eq!(x, 0.0, "index {i}");
            }
        }
        assert_eq!(v.values[126], 0.0);
        assert_eq!(v.values[127], 0.0);
    }

    #[test]
    fn doubling_contrast_is_cancelled_by_rescale() {
        let (raw, mask) = phantom(40);
        let doubled: Vec<f64> = raw.iter().map(|v| v * 2.0).collect();
        let cfg = ExtractorConfig::default();
        let a = extract_all(&rescale_to_unit(40, 40, &raw).unwrap(), &mask, &cfg).unwrap();
        let b = extract_all(&rescale_to_unit(40, 40, &doubled).unwrap(), &mask, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_cell_texture() {
        let mask = disk_mask(30, 15.0, 15.0, 11.0);
        let mut raw = vec![0.0; 900];
        for i in 0..900 {
            if mask.bits()[i] {
                raw[i] = 1.0;
            }
        }
        let img = rescale_to_unit(30, 30, &raw).unwrap();
        let v = extract_texture_vector(&img, &mask).unwrap();
        let stats = &v.values[120..124];
        assert_eq!(stats[2], 0.0, "entropy");
        assert_eq!(stats[3], 0.0, "range");
        for k in 0..4 {
            assert_eq!(v.values[124 + k * 4 + 2], 1.0, "energy at offset {k}");
        }
    }

    #[test]
    fn texture_area_decreases_with_level() {
        let (raw, mask) = phantom(40);
        let img = rescale_to_unit(40, 40, &raw).unwrap();
        let v = extract_texture_vector(&img, &mask).unwrap();
        for level in 1..TEXTURE_LEVELS {
            assert!(v.values[level * 6 + 1] <= v.values[(level - 1) * 6 + 1]);
        }
    }

    #[test]
    fn convex_area_of_shapes() {
        let square = BinaryImage::full(3, 3);
        let c = &label_components(&square, Connectivity::Eight)[0];
        assert_eq!(convex_area(c), 9.0);
        let l = BinaryImage::from_ascii(&["#..", "#..", "###"]).unwrap();
        let c = &label_components(&l, Connectivity::Eight)[0];
        // right triangle hull of the L: 9 - 2 (two corner triangles of area 1)
        assert_eq!(convex_area(c), 7.0);
        let dot = BinaryImage::from_ascii(&["#"]).unwrap();
        let c = &label_components(&dot, Connectivity::Eight)[0];
        assert_eq!(convex_area(c), 1.0);
        assert_eq!(eccentricity(c), 0.0);
        let line = BinaryImage::from_ascii(&["########"]).unwrap();
        let c = &label_components(&line, Connectivity::Eight)[0];
        assert!(eccentricity(c) > 0.99);
    }

    #[test]
    fn combined_of_zero_vectors_is_zero() {
        let tex = FeatureVector::new(FeatureSetKind::Texture, vec![0.0; 140], false);
        let cs = FeatureVector::new(FeatureSetKind::ClassSpecific, vec![0.0; 128], false);
        let comb = build_combined_vector(&tex, &cs).unwrap();
        assert_eq!(comb.values, vec![0.0; 177]);
        assert!(build_combined_vector(&cs, &tex).is_err());
    }

    #[test]
    fn combined_pulls_the_right_slots() {
        let tex = FeatureVector::new(FeatureSetKind::Texture, vec![0.0; 140], false);
        let cs = FeatureVector::new(FeatureSetKind::ClassSpecific, (0..128).map(|i| i as f64).collect(), false);
        let comb = build_combined_vector(&tex, &cs).unwrap();
        // EACC of the NM group: group 4, slot 2 -> (4*3+2)*7 = 98
        assert_eq!(comb.values[140], 98.0);
        // BAR: group 4 slot 0 -> 84; OAR: group 5 slot 0 -> 105; IAR -> 91; AOD -> 119
        assert_eq!(comb.values[147], 84.0);
        assert_eq!(comb.values[154], 105.0);
        assert_eq!(comb.values[161], 91.0);
        assert_eq!(comb.values[168], 119.0);
        assert_eq!(comb.values[175], 126.0);
        assert_eq!(comb.values[176], 127.0);
    }

    #[test]
    fn zscore_examples() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0], vec![3.0, 5.0]];
        let stats = fit_zscore(&rows, "train").unwrap();
        assert_eq!(stats.mean, vec![2.0, 5.0]);
        assert!((stats.stdev[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((stats.stdev[0] - 0.8165).abs() < 1e-4);
        assert_eq!(stats.stdev[1], 0.0);
        assert_eq!(stats.constant, vec![false, true]);
        assert_eq!(stats.apply(&[2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
        let one = stats.apply(&[2.0 + stats.stdev[0], 9.0]).unwrap();
        assert!((one[0] - 1.0).abs() < 1e-15);
        assert_eq!(one[1], 0.0);
        assert!(matches!(stats.apply(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(fit_zscore(&rows[..1], "x"), Err(Error::InsufficientData(_))));

        // Two columns by hand: {0, 4} and {-1, 3} have means 2, 1 and stdevs 2, 2.
        let stats = fit_zscore(&[vec![0.0, -1.0], vec![4.0, 3.0]], "toy").unwrap();
        assert_eq!(stats.mean, vec![2.0, 1.0]);
        assert_eq!(stats.stdev, vec![2.0, 2.0]);
    }

    #[test]
    fn degenerate_inner_mask_falls_back() {
        let mask = disk_mask(15, 7.0, 7.0, 3.0);
        let img = GrayImage::new(15, 15, vec![0.9; 225]).unwrap();
        let v = extract_class_specific_vector(&img, &mask, &ExtractorConfig::default()).unwrap();
        assert!(v.degenerate);
        // IAR now measures the full mask, which is entirely bright.
        assert_eq!(v.values[class_specific_index(ClassLabel::NuclearMembrane, 1, 0)], 1.0);
    }

    #[test]
    fn config_validation() {
        let mut cfg = ExtractorConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.threshold_grid = vec![0.2, 0.3];
        assert!(cfg.validate().is_err());
        cfg.threshold_grid = vec![0.2, 0.3, 0.3, 0.5, 0.6, 0.7, 0.8];
        assert!(cfg.validate().is_err());
        let mut cfg = ExtractorConfig::default();
        cfg.class_params[2].gamma = 0.0;
        assert!(cfg.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn zscore_standardizes_training_matrix(rows in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 4), 2..30)) {
            let stats = fit_zscore(&rows, "train").unwrap();
            let z = stats.apply_rows(&rows).unwrap();
            let n = z.len() as f64;
            for col in 0..4 {
                if stats.constant[col] {
                    continue;
                }
                let mean = z.iter().map(|r| r[col]).sum::<f64>() / n;
                let sd = (z.iter().map(|r| (r[col] - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((sd - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn acc_and_ha_are_monotone_in_threshold(seed in 0u64..1000) {
            let size = 24;
            let mask = disk_mask(size, 12.0, 12.0, 9.0);
            let raw: Vec<f64> = (0..size * size)
                .map(|i| ((i as u64 * 2654435761 + seed * 97) % 1000) as f64)
                .collect();
            let img = rescale_to_unit(size, size, &raw).unwrap();
            let v = extract_class_specific_vector(&img, &mask, &ExtractorConfig::default()).unwrap();
            for level in 1..7 {
                let acc = |l| v.values[class_specific_index(ClassLabel::Homogeneous, 1, l)];
                let ha = |l| v.values[class_specific_index(ClassLabel::Speckled, 1, l)];
                prop_assert!(acc(level) <= acc(level - 1));
                prop_assert!(ha(level) >= ha(level - 1));
            }
            for &x in &v.values {
                prop_assert!(x.is_finite());
            }
            for slot in [(ClassLabel::NuclearMembrane, 0), (ClassLabel::NuclearMembrane, 1), (ClassLabel::Golgi, 0)] {
                for l in 0..7 {
                    let r = v.values[class_specific_index(slot.0, slot.1, l)];
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }
        }
    }
}
