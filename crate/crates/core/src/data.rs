//! Dataset loading, synthetic phantoms, feature export and model persistence.
//!
//! A dataset directory holds `gt.csv` (columns `id,label,intensity`) and, per
//! cell, `<id>.png` plus `<id>_mask.png` (8- or 16-bit grayscale; any nonzero
//! mask pixel is inside the cell). Images are rescaled to [0,1] on load.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::ExperimentData;
use crate::features::{extract_all, CellFeatures, ExtractorConfig, FeatureSetKind, NormalizationStats};
use crate::frameworks::{
    FrameworkBody, FrameworkKind, FrameworkModel, FrameworkSpec, OvrBlock, PairModel, Resolver, SampleSet,
    VerificationBlock,
};
use crate::imaging::{rescale_to_unit, BinaryImage, GrayImage};
use crate::labels::{ClassLabel, IntensityTag};
use crate::persist;
use crate::svm::SvmModel;
use crate::trees::TreeEnsembleModel;

pub const GT_FILE: &str = "gt.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryImage,
    pub label: ClassLabel,
    pub tag: IntensityTag,
}

impl CellRecord {
    pub fn new(id: String, image: GrayImage, mask: BinaryImage, label: ClassLabel, tag: IntensityTag) -> Result<Self> {
        if image.width() != mask.width() || image.height() != mask.height() {
            return Err(Error::Record {
                id,
                reason: format!(
                    "image is {}x{} but mask is {}x{}",
                    image.width(),
                    image.height(),
                    mask.width(),
                    mask.height()
                ),
            });
        }
        if mask.is_empty() {
            return Err(Error::Record {
                id,
                reason: "mask has no foreground pixels".into(),
            });
        }
        Ok(CellRecord {
            id,
            image,
            mask,
            label,
            tag,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    /// Sorted by id.
    pub records: Vec<CellRecord>,
    pub skipped: Vec<SkippedRecord>,
}

impl DatasetManifest {
    pub fn from_records(mut records: Vec<CellRecord>) -> Self {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        DatasetManifest {
            records,
            skipped: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// `counts()[class][0]` positives, `[class][1]` intermediates.
    pub fn counts(&self) -> [[usize; 2]; ClassLabel::COUNT] {
        let mut c = [[0; 2]; ClassLabel::COUNT];
        for r in &self.records {
            c[r.label.index()][(r.tag == IntensityTag::Intermediate) as usize] += 1;
        }
        c
    }

    pub fn summary(&self) -> String {
        let mut out = String::from("class      positive  intermediate  total\n");
        let counts = self.counts();
        for class in ClassLabel::ALL {
            let [p, i] = counts[class.index()];
            out.push_str(&format!("{:<10} {p:>8} {i:>13} {:>6}\n", class.name(), p + i));
        }
        out.push_str(&format!("total {:>32}\n", self.len()));
        if !self.skipped.is_empty() {
            out.push_str(&format!("skipped {}\n", self.skipped.len()));
        }
        out
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn read_gray(path: &Path) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    let img = image::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let luma = img.into_luma16();
    let (w, h) = luma.dimensions();
    Ok((w as usize, h as usize, luma.into_raw().into_iter().map(f64::from).collect()))
}

#[derive(Debug, Deserialize)]
struct GtRow {
    id: String,
    label: String,
    intensity: String,
}

fn load_one(root: &Path, row: &GtRow) -> std::result::Result<CellRecord, String> {
    let label: ClassLabel = row.label.parse().map_err(|e: Error| e.to_string())?;
    let tag: IntensityTag = row.intensity.parse().map_err(|e: Error| e.to_string())?;
    let image_path = root.join(format!("{}.png", row.id));
    let mask_path = root.join(format!("{}_mask.png", row.id));
    if !image_path.exists() {
        return Err(format!("missing image {}", image_path.display()));
    }
    if !mask_path.exists() {
        return Err(format!("missing mask {}", mask_path.display()));
    }
    let (w, h, raw) = read_gray(&image_path)?;
    let (mw, mh, mraw) = read_gray(&mask_path)?;
    if (w, h) != (mw, mh) {
        return Err(format!("image is {w}x{h} but mask is {mw}x{mh}"));
    }
    let image = rescale_to_unit(w, h, &raw).map_err(|e| e.to_string())?;
    let mask = BinaryImage::new(w, h, mraw.iter().map(|&v| v > 0.0).collect()).map_err(|e| e.to_string())?;
    CellRecord::new(row.id.clone(), image, mask, label, tag).map_err(|e| match e {
        Error::Record { reason, .. } => reason,
        other => other.to_string(),
    })
}

/// Loads every row of `gt.csv`. Rows that fail validation are listed in
/// `skipped` with their reason. A directory with no `gt.csv` and no PNG files
/// is an empty dataset.
pub fn load_dataset(root: &Path) -> Result<DatasetManifest> {
    let entries = fs::read_dir(root).map_err(io_err(root))?;
    let gt = root.join(GT_FILE);
    if !gt.exists() {
        let has_png = entries
            .filter_map(|e| e.ok())
            .any(|e| e.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("png")));
        if has_png {
            return Err(Error::Input(format!("{} not found", gt.display())));
        }
        return Ok(DatasetManifest::default());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&gt)
        .map_err(|e| Error::Corrupt {
            path: gt.clone(),
            reason: e.to_string(),
        })?;
    let rows: Vec<GtRow> = reader
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Corrupt {
            path: gt.clone(),
            reason: e.to_string(),
        })?;
    let loaded: Vec<std::result::Result<CellRecord, SkippedRecord>> = rows
        .par_iter()
        .map(|row| {
            load_one(root, row).map_err(|reason| SkippedRecord {
                id: row.id.clone(),
                reason,
            })
        })
        .collect();
    let mut manifest = DatasetManifest::default();
    for r in loaded {
        match r {
            Ok(rec) => manifest.records.push(rec),
            Err(s) => manifest.skipped.push(s),
        }
    }
    manifest.records.sort_by(|a, b| a.id.cmp(&b.id));
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = manifest.records.iter().find(|r| !seen.insert(r.id.clone())) {
        return Err(Error::Input(format!("duplicate id {} in {}", dup.id, gt.display())));
    }
    Ok(manifest)
}

/// Writes the records as 16-bit PNGs plus `gt.csv`.
pub fn save_dataset(manifest: &DatasetManifest, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    manifest.records.par_iter().try_for_each(|r| -> Result<()> {
        let (w, h) = (r.image.width() as u32, r.image.height() as u32);
        let pixels: Vec<u16> = r.image.pixels().iter().map(|&p| (p * 65535.0).round() as u16).collect();
        let img: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(w, h, pixels).expect("buffer matches size");
        let path = root.join(format!("{}.png", r.id));
        img.save(&path).map_err(|e| Error::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let bits: Vec<u8> = r.mask.bits().iter().map(|&b| if b { 255 } else { 0 }).collect();
        let mask: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(w, h, bits).expect("buffer matches size");
        let path = root.join(format!("{}_mask.png", r.id));
        mask.save(&path).map_err(|e| Error::Corrupt {
            path: path.clone(),
            reason: e.to_string(),
        })
    })?;
    let gt = root.join(GT_FILE);
    let mut w = csv::Writer::from_path(&gt).map_err(|e| Error::Corrupt {
        path: gt.clone(),
        reason: e.to_string(),
    })?;
    let csv_err = |e: csv::Error| Error::Corrupt {
        path: gt.clone(),
        reason: e.to_string(),
    };
    w.write_record(["id", "label", "intensity"]).map_err(csv_err)?;
    for r in &manifest.records {
        w.write_record([r.id.as_str(), r.label.short(), r.tag.as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(&gt))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub class: ClassLabel,
    pub size: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
    pub contrast: IntensityTag,
    pub seed: u64,
}

pub const PHANTOM_SIZE: usize = 70;
pub const PHANTOM_NOISE: f64 = 0.15;
/// Intensity factor applied to intermediate-contrast phantoms.
pub const INTERMEDIATE_SCALE: f64 = 0.35;
/// Noise factor for intermediate phantoms, relative to `PhantomSpec::noise`.
pub const INTERMEDIATE_NOISE_GAIN: f64 = 1.1;

impl PhantomSpec {
    pub fn new(class: ClassLabel, contrast: IntensityTag, seed: u64) -> Self {
        PhantomSpec {
            class,
            size: PHANTOM_SIZE,
            noise: PHANTOM_NOISE,
            contrast,
            seed,
        }
    }

    pub fn id(&self) -> String {
        format!("{}-{}-{:06}", self.class.short(), self.contrast.as_str(), self.seed)
    }
}

/// `per_class` phantoms per class, alternating positive and intermediate
/// contrast, with seeds drawn from `seed`.
pub fn phantom_specs(per_class: usize, seed: u64) -> Vec<PhantomSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut specs = Vec::with_capacity(per_class * ClassLabel::COUNT);
    for class in ClassLabel::ALL {
        for k in 0..per_class {
            let contrast = if k % 2 == 0 {
                IntensityTag::Positive
            } else {
                IntensityTag::Intermediate
            };
            specs.push(PhantomSpec::new(class, contrast, rng.random_range(0..1_000_000)));
        }
    }
    specs
}

struct Canvas {
    size: usize,
    px: Vec<f64>,
}

impl Canvas {
    fn ellipse(&mut self, cy: f64, cx: f64, (a, b): (f64, f64), theta: f64, value: f64) {
        let (sin, cos) = theta.sin_cos();
        let lo_y = (cy - a).floor().max(0.0) as usize;
        let hi_y = ((cy + a).ceil() as usize).min(self.size - 1);
        let lo_x = (cx - a).floor().max(0.0) as usize;
        let hi_x = ((cx + a).ceil() as usize).min(self.size - 1);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let (u, v) = (dx * cos + dy * sin, -dx * sin + dy * cos);
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    self.px[y * self.size + x] = value;
                }
            }
        }
    }

    fn disk(&mut self, cy: f64, cx: f64, r: f64, value: f64) {
        let r2 = r * r;
        let lo_y = (cy - r).floor().max(0.0) as usize;
        let hi_y = ((cy + r).ceil() as usize).min(self.size - 1);
        let lo_x = (cx - r).floor().max(0.0) as usize;
        let hi_x = ((cx + r).ceil() as usize).min(self.size - 1);
        for y in lo_y..=hi_y {
            for x in lo_x..=hi_x {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= r2 {
                    self.px[y * self.size + x] = value;
                }
            }
        }
    }
}

/// Places up to `n` non-overlapping disks with centers within `max_dist` of
/// `(cy, cx)`; `gap` is the minimum clearance between disk edges.
fn scatter(
    rng: &mut ChaCha8Rng,
    n: usize,
    (cy, cx): (f64, f64),
    max_dist: f64,
    radius: (f64, f64),
    gap: f64,
) -> Vec<(f64, f64, f64)> {
    let mut placed: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
    for _ in 0..n * 400 {
        if placed.len() == n {
            break;
        }
        let r = rng.random_range(radius.0..=radius.1);
        let reach = (max_dist - r).max(0.0);
        let d = reach * rng.random::<f64>().sqrt();
        let a = rng.random_range(0.0..2.0 * PI);
        let (y, x) = (cy + d * a.sin(), cx + d * a.cos());
        if placed
            .iter()
            .all(|&(py, px, pr)| ((py - y).powi(2) + (px - x).powi(2)).sqrt() >= pr + r + gap)
        {
            placed.push((y, x, r));
        }
    }
    placed
}

/// Synthesizes one cell with its class's visual traits.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<CellRecord> {
    if spec.size < 40 {
        return Err(Error::Parameter(format!("phantom size {} below 40", spec.size)));
    }
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(Error::Parameter("noise must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((spec.class.index() as u64) << 56));
    let n = spec.size;
    let half = n as f64 / 2.0;
    let cy = half + rng.random_range(-2.0..=2.0);
    let cx = half + rng.random_range(-2.0..=2.0);
    let r = (n as f64 * rng.random_range(0.31..=0.36)).min(half - 12.0);
    let bright = rng.random_range(0.78..=0.95);
    let dim = rng.random_range(0.08..=0.2);
    let mut c = Canvas {
        size: n,
        px: vec![0.03; n * n],
    };
    let mut mask = BinaryImage::empty(n, n);
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            if dy * dy + dx * dx <= r * r {
                mask.set(y, x, true);
            }
        }
    }
    match spec.class {
        ClassLabel::Homogeneous => {
            // Gentle radial falloff keeps the whole disk above the threshold.
            for y in 0..n {
                for x in 0..n {
                    if mask.get(y, x) {
                        let d2 = ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)) / (r * r);
                        c.px[y * n + x] = bright * (1.0 - 0.06 * d2);
                    }
                }
            }
        }
        ClassLabel::Speckled => {
            c.disk(cy, cx, r, bright);
            let k = rng.random_range(5..=15);
            for (hy, hx, hr) in scatter(&mut rng, k, (cy, cx), r - 4.0, (1.8, 2.8), 2.0) {
                c.disk(hy, hx, hr, dim * 0.5);
            }
        }
        ClassLabel::Nucleolar => {
            c.disk(cy, cx, r, dim);
            let k = rng.random_range(2..=6);
            for (by, bx, br) in scatter(&mut rng, k, (cy, cx), r - 3.0, (3.2, 5.5), 3.0) {
                let minor = br * rng.random_range(0.5..=1.0);
                c.ellipse(by, bx, (br, minor), rng.random_range(0.0..PI), bright);
            }
        }
        ClassLabel::Centromere => {
            c.disk(cy, cx, r, dim);
            // 2x2 speckles on a spacing-4 lattice never touch, even diagonally.
            let oy = rng.random_range(0..4) as f64;
            let ox = rng.random_range(0..4) as f64;
            let mut sites = Vec::new();
            let mut y = (cy - r).floor() + oy;
            while y <= cy + r {
                let mut x = (cx - r).floor() + ox;
                while x <= cx + r {
                    if ((y + 0.5 - cy).powi(2) + (x + 0.5 - cx).powi(2)).sqrt() <= r - 3.0 {
                        sites.push((y as usize, x as usize));
                    }
                    x += 4.0;
                }
                y += 4.0;
            }
            let k = rng.random_range(40..=60).min(sites.len());
            for i in 0..k {
                let j = rng.random_range(i..sites.len());
                sites.swap(i, j);
                let (sy, sx) = sites[i];
                let v = bright * rng.random_range(0.85..=1.0);
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    c.px[(sy + dy) * n + sx + dx] = v;
                }
            }
        }
        ClassLabel::NuclearMembrane => {
            c.disk(cy, cx, r, dim);
            let width = rng.random_range(3.0..=4.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            let lobes = rng.random_range(2..=5) as f64;
            for y in 0..n {
                for x in 0..n {
                    let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                    let d = (dy * dy + dx * dx).sqrt();
                    if mask.get(y, x) && d >= r - width {
                        let theta = dy.atan2(dx);
                        c.px[y * n + x] = bright * (0.8 + 0.2 * (lobes * theta + phase).cos());
                    }
                }
            }
        }
        ClassLabel::Golgi => {
            c.disk(cy, cx, r, dim);
            // Polar cluster of blobs straddling the cell edge on one side.
            let k = rng.random_range(3..=8);
            let center = rng.random_range(0.0..2.0 * PI);
            for _ in 0..k {
                let a = center + rng.random_range(-1.2..=1.2);
                let d = r + rng.random_range(-1.0..=2.5);
                let br = rng.random_range(4.0..=7.0);
                c.disk(cy + d * a.sin(), cx + d * a.cos(), br, bright);
            }
        }
    }
    let (scale, sigma) = match spec.contrast {
        IntensityTag::Positive => (1.0, spec.noise),
        IntensityTag::Intermediate => (INTERMEDIATE_SCALE, spec.noise * INTERMEDIATE_NOISE_GAIN),
    };
    let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let raw: Vec<f64> = c
        .px
        .iter()
        .map(|&v| {
            let e = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            (v * scale + e).clamp(0.0, 1.0)
        })
        .collect();
    // Same preprocessing as loaded images.
    let image = rescale_to_unit(n, n, &raw)?;
    CellRecord::new(spec.id(), image, mask, spec.class, spec.contrast)
}

pub fn generate_phantoms(specs: &[PhantomSpec]) -> Result<DatasetManifest> {
    let records: Vec<CellRecord> = specs.par_iter().map(generate_phantom).collect::<Result<_>>()?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = records.iter().find(|r| !seen.insert(r.id.clone())) {
        return Err(Error::Input(format!("duplicate phantom id {}", dup.id)));
    }
    Ok(DatasetManifest::from_records(records))
}

/// Every feature view of every record, in manifest order.
pub fn extract_features(manifest: &DatasetManifest, cfg: &ExtractorConfig) -> Result<Vec<CellFeatures>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            extract_all(&r.image, &r.mask, cfg).map_err(|e| Error::Record {
                id: r.id.clone(),
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Experiment input with the chosen high-dimensional view and the scalar pool.
pub fn experiment_data(manifest: &DatasetManifest, features: &[CellFeatures], kind: FeatureSetKind) -> ExperimentData {
    ExperimentData {
        samples: SampleSet {
            full: features.iter().map(|f| f.view(kind).values).collect(),
            pool: features.iter().map(|f| f.pool.clone()).collect(),
            labels: manifest.records.iter().map(|r| r.label.index()).collect(),
        },
        tags: manifest.records.iter().map(|r| r.tag).collect(),
        n_classes: ClassLabel::COUNT,
    }
}

/// Shortest decimal with 9 significant digits.
fn sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let s = format!("{v:.8e}");
    let parsed: f64 = s.parse().expect("formatted float parses");
    format!("{parsed}")
}

/// Writes `id,label,<feature columns>` rows sorted by id.
pub fn export_features(
    manifest: &DatasetManifest,
    kind: FeatureSetKind,
    cfg: &ExtractorConfig,
    out: &Path,
) -> Result<()> {
    if manifest.is_empty() {
        return Err(Error::InsufficientData("no records to export".into()));
    }
    let features = extract_features(manifest, cfg)?;
    let mut rows: Vec<(&CellRecord, &CellFeatures)> = manifest.records.iter().zip(&features).collect();
    rows.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let csv_err = |e: csv::Error| Error::Corrupt {
        path: out.to_path_buf(),
        reason: e.to_string(),
    };
    let mut w = csv::Writer::from_path(out).map_err(csv_err)?;
    let mut header = vec!["id".to_string(), "label".to_string()];
    header.extend(kind.column_names());
    w.write_record(&header).map_err(csv_err)?;
    for (rec, f) in rows {
        let mut row = vec![rec.id.clone(), rec.label.short().to_string()];
        row.extend(f.view(kind).values.iter().map(|&v| sig9(v)));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(out))?;
    Ok(())
}

/// A framework with everything needed to run it on new cells.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub spec: FrameworkSpec,
    pub features: FeatureSetKind,
    pub extractor: ExtractorConfig,
    pub model: FrameworkModel,
}

impl TrainedModel {
    pub fn predict_record(&self, record: &CellRecord) -> Result<crate::frameworks::Outcome> {
        let f = extract_all(&record.image, &record.mask, &self.extractor)?;
        self.model.predict(&f.view(self.features).values, &f.pool)
    }
}

const MODEL_FORMAT: &str = "hep2-model";
const MODEL_VERSION: u32 = 1;
pub const MODEL_MANIFEST: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PairRef {
    a: usize,
    b: usize,
    features: Option<Vec<usize>>,
    c: f64,
    gamma: f64,
    validation_score: f64,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct OvrRef {
    owner: usize,
    c: f64,
    gamma: f64,
    validation_score: f64,
    file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum BodyRef {
    OneVsOne(Vec<PairRef>),
    OneVsRest(Vec<OvrRef>),
    Hierarchy(Vec<(usize, Vec<PairRef>)>),
    Ensemble(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum ResolverRef {
    None,
    Score,
    Pairwise(Vec<PairRef>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelManifest {
    spec: FrameworkSpec,
    kind: FrameworkKind,
    n_classes: usize,
    features: FeatureSetKind,
    layout: String,
    extractor: ExtractorConfig,
    full_norm: NormalizationStats,
    pool_norm: Option<NormalizationStats>,
    body: BodyRef,
    resolver: ResolverRef,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Corrupt { reason, .. } => Error::Corrupt {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    }
}

/// Writes `model.json` plus one file per binary SVM or ensemble into `dir`.
pub fn save_model(dir: &Path, trained: &TrainedModel) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files: Vec<(String, String)> = Vec::new();
    let pair_ref = |prefix: &str, p: &PairModel, files: &mut Vec<(String, String)>| {
        let file = format!("{prefix}-{}-{}.svm.json", p.a + 1, p.b + 1);
        files.push((file.clone(), p.svm.to_text()));
        PairRef {
            a: p.a,
            b: p.b,
            features: p.features.clone(),
            c: p.c,
            gamma: p.gamma,
            validation_score: p.validation_score,
            file,
        }
    };
    let m = &trained.model;
    let body = match &m.body {
        FrameworkBody::OneVsOne(pairs) => BodyRef::OneVsOne(pairs.iter().map(|p| pair_ref("ovo", p, &mut files)).collect()),
        FrameworkBody::OneVsRest(blocks) => BodyRef::OneVsRest(
            blocks
                .iter()
                .map(|b| {
                    let file = format!("ovr-{}.svm.json", b.owner + 1);
                    files.push((file.clone(), b.svm.to_text()));
                    OvrRef {
                        owner: b.owner,
                        c: b.c,
                        gamma: b.gamma,
                        validation_score: b.validation_score,
                        file,
                    }
                })
                .collect(),
        ),
        FrameworkBody::Hierarchy(blocks) => BodyRef::Hierarchy(
            blocks
                .iter()
                .map(|b| (b.owner, b.subs.iter().map(|s| pair_ref("verify", s, &mut files)).collect()))
                .collect(),
        ),
        FrameworkBody::Ensemble(e) => {
            let file = "ensemble.json".to_string();
            files.push((file.clone(), e.to_text()));
            BodyRef::Ensemble(file)
        }
    };
    let resolver = match &m.resolver {
        Resolver::None => ResolverRef::None,
        Resolver::Score => ResolverRef::Score,
        Resolver::Pairwise(pairs) => ResolverRef::Pairwise(pairs.iter().map(|p| pair_ref("resolve", p, &mut files)).collect()),
    };
    for (name, text) in &files {
        write_text(&dir.join(name), text)?;
    }
    let manifest = ModelManifest {
        spec: trained.spec,
        kind: m.kind,
        n_classes: m.n_classes,
        features: trained.features,
        layout: trained.features.layout_id().to_string(),
        extractor: trained.extractor.clone(),
        full_norm: m.full_norm.clone(),
        pool_norm: m.pool_norm.clone(),
        body,
        resolver,
    };
    // The manifest goes last so a partial save never looks complete.
    write_text(&dir.join(MODEL_MANIFEST), &persist::to_text(MODEL_FORMAT, MODEL_VERSION, &manifest))
}

pub fn load_model(dir: &Path) -> Result<TrainedModel> {
    let path = dir.join(MODEL_MANIFEST);
    let man: ModelManifest =
        persist::from_text(MODEL_FORMAT, MODEL_VERSION, &read_text(&path)?).map_err(|e| with_path(e, &path))?;
    if man.layout != man.features.layout_id() {
        return Err(Error::Version {
            expected: man.features.layout_id().into(),
            found: man.layout,
        });
    }
    let svm = |file: &str| -> Result<SvmModel> {
        let p = dir.join(file);
        SvmModel::from_text(&read_text(&p)?).map_err(|e| with_path(e, &p))
    };
    let pair = |r: &PairRef| -> Result<PairModel> {
        Ok(PairModel {
            a: r.a,
            b: r.b,
            features: r.features.clone(),
            svm: svm(&r.file)?,
            c: r.c,
            gamma: r.gamma,
            validation_score: r.validation_score,
        })
    };
    let body = match &man.body {
        BodyRef::OneVsOne(p) => FrameworkBody::OneVsOne(p.iter().map(pair).collect::<Result<_>>()?),
        BodyRef::OneVsRest(b) => FrameworkBody::OneVsRest(
            b.iter()
                .map(|r| {
                    Ok(OvrBlock {
                        owner: r.owner,
                        svm: svm(&r.file)?,
                        c: r.c,
                        gamma: r.gamma,
                        validation_score: r.validation_score,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        BodyRef::Hierarchy(blocks) => FrameworkBody::Hierarchy(
            blocks
                .iter()
                .map(|(owner, subs)| {
                    Ok(VerificationBlock {
                        owner: *owner,
                        subs: subs.iter().map(pair).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?,
        ),
        BodyRef::Ensemble(file) => {
            let p = dir.join(file);
            FrameworkBody::Ensemble(TreeEnsembleModel::from_text(&read_text(&p)?).map_err(|e| with_path(e, &p))?)
        }
    };
    let resolver = match &man.resolver {
        ResolverRef::None => Resolver::None,
        ResolverRef::Score => Resolver::Score,
        ResolverRef::Pairwise(p) => Resolver::Pairwise(p.iter().map(pair).collect::<Result<_>>()?),
    };
    Ok(TrainedModel {
        spec: man.spec,
        features: man.features,
        extractor: man.extractor,
        model: FrameworkModel {
            kind: man.kind,
            n_classes: man.n_classes,
            body,
            resolver,
            full_norm: man.full_norm,
            pool_norm: man.pool_norm,
        },
    })
}

/// Per-class, per-tag counts as a map keyed by `(class short name, tag)`.
pub fn count_table(manifest: &DatasetManifest) -> BTreeMap<(String, String), usize> {
    let mut m = BTreeMap::new();
    for r in &manifest.records {
        *m.entry((r.label.short().to_string(), r.tag.as_str().to_string())).or_insert(0) += 1;
    }
    m
}

pub fn default_output_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{compute_scalar, ScalarFeatureKind};
    use crate::imaging::{label_components, threshold_binary, gamma_transform, Connectivity, count_holes};

    fn scalar(rec: &CellRecord, kind: ScalarFeatureKind) -> f64 {
        let cfg = ExtractorConfig::default();
        let img = gamma_transform(&rec.image, 1.5).unwrap();
        compute_scalar(kind, &img, &rec.mask, 0.45, &cfg).unwrap()
    }

    #[test]
    fn phantoms_are_deterministic() {
        let specs = phantom_specs(4, 9);
        let a = generate_phantoms(&specs).unwrap();
        let b = generate_phantoms(&specs).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 24);
        assert_eq!(a.counts()[3], [2, 2]);
    }

    #[test]
    fn phantom_structure_checks() {
        // Low noise: the default level deliberately adds spurious fragments.
        for contrast in [IntensityTag::Positive, IntensityTag::Intermediate] {
            for seed in 0..25u64 {
                let rec = |class| {
                    let spec = PhantomSpec {
                        noise: 0.02,
                        ..PhantomSpec::new(class, contrast, seed)
                    };
                    generate_phantom(&spec).unwrap()
                };
                let cc = |r: &CellRecord| scalar(r, ScalarFeatureKind::Cc);
                let h = rec(ClassLabel::Homogeneous);
                assert_eq!(cc(&h), 1.0, "H seed {seed} {contrast}");
                let s = rec(ClassLabel::Speckled);
                assert!(scalar(&s, ScalarFeatureKind::Hn) >= 3.0, "S seed {seed} {contrast}");
                let nu = rec(ClassLabel::Nucleolar);
                assert!((2.0..=6.0).contains(&cc(&nu)), "N seed {seed} {contrast}: {}", cc(&nu));
                let c = rec(ClassLabel::Centromere);
                assert!((35.0..=65.0).contains(&cc(&c)), "C seed {seed} {contrast}: {}", cc(&c));
                let nm = rec(ClassLabel::NuclearMembrane);
                let (bar, iar) = (scalar(&nm, ScalarFeatureKind::Bar), scalar(&nm, ScalarFeatureKind::Iar));
                assert!(bar > 2.0 * iar, "NM seed {seed} {contrast}: {bar} {iar}");
                let g = rec(ClassLabel::Golgi);
                let (oar, iar) = (scalar(&g, ScalarFeatureKind::Oar), scalar(&g, ScalarFeatureKind::Iar));
                assert!(oar > iar, "G seed {seed} {contrast}: {oar} {iar}");
            }
        }
    }

    #[test]
    fn centromere_speckles_by_construction() {
        // Without noise every placed speckle is its own component.
        for seed in 0..20 {
            let spec = PhantomSpec {
                noise: 0.0,
                ..PhantomSpec::new(ClassLabel::Centromere, IntensityTag::Positive, seed)
            };
            let r = generate_phantom(&spec).unwrap();
            let bin = threshold_binary(&r.image, 0.45).unwrap().and(&r.mask).unwrap();
            let n = label_components(&bin, Connectivity::Eight).len();
            assert!((40..=60).contains(&n), "{n}");
            assert_eq!(count_holes(&bin), 0);
        }
    }

    #[test]
    fn empty_directory_and_single_record() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_dataset(dir.path()).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.counts(), [[0; 2]; 6]);

        let rec = generate_phantom(&PhantomSpec::new(ClassLabel::Golgi, IntensityTag::Intermediate, 5)).unwrap();
        let one = DatasetManifest::from_records(vec![rec.clone()]);
        save_dataset(&one, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back.records[0].mask, rec.mask);
        assert_eq!(back.records[0].label, ClassLabel::Golgi);
        assert_eq!(back.records[0].tag, IntensityTag::Intermediate);
        let diff = back.records[0]
            .image
            .pixels()
            .iter()
            .zip(rec.image.pixels())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-4, "{diff}");
    }

    #[test]
    fn bad_records_are_skipped_with_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let recs: Vec<CellRecord> = (0..3)
            .map(|s| generate_phantom(&PhantomSpec::new(ClassLabel::Homogeneous, IntensityTag::Positive, s)).unwrap())
            .collect();
        save_dataset(&DatasetManifest::from_records(recs.clone()), dir.path()).unwrap();
        fs::remove_file(dir.path().join(format!("{}_mask.png", recs[0].id))).unwrap();
        let small: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(4, 4, vec![255; 16]).unwrap();
        small.save(dir.path().join(format!("{}_mask.png", recs[1].id))).unwrap();
        let gt = dir.path().join(GT_FILE);
        let mut text = fs::read_to_string(&gt).unwrap();
        text.push_str("ghost,Mitotic,positive\n");
        fs::write(&gt, text).unwrap();
        let m = load_dataset(dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.skipped.len(), 3);
        let reason = |id: &str| m.skipped.iter().find(|s| s.id == id).unwrap().reason.clone();
        assert!(reason(&recs[0].id).contains("missing mask"));
        assert!(reason(&recs[1].id).contains("mask is 4x4"));
        assert!(reason("ghost").contains("unknown class label"));
    }

    #[test]
    fn eight_bit_images_are_rescaled() {
        let dir = tempfile::tempdir().unwrap();
        let img: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(3, 1, vec![0, 64, 255]).unwrap();
        img.save(dir.path().join("a.png")).unwrap();
        let mask: ImageBuffer<Luma<u8>, Vec<u8>> = ImageBuffer::from_raw(3, 1, vec![0, 1, 1]).unwrap();
        mask.save(dir.path().join("a_mask.png")).unwrap();
        fs::write(dir.path().join(GT_FILE), "id,label,intensity\na,Centromere,positive\n").unwrap();
        let m = load_dataset(dir.path()).unwrap();
        let px = m.records[0].image.pixels();
        assert_eq!(px[0], 0.0);
        assert!((px[1] - 64.0 / 255.0).abs() < 1e-12);
        assert_eq!(px[2], 1.0);
        assert_eq!(m.records[0].mask.count_ones(), 2);
    }

    #[test]
    fn feature_export_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let specs: Vec<PhantomSpec> = phantom_specs(2, 3).into_iter().take(10).collect();
        let m = generate_phantoms(&specs).unwrap();
        let cfg = ExtractorConfig::default();
        for kind in [FeatureSetKind::ClassSpecific, FeatureSetKind::Combined, FeatureSetKind::Texture] {
            let cols = kind.len() + 2;
            let out = dir.path().join(format!("{}.csv", kind.short()));
            export_features(&m, kind, &cfg, &out).unwrap();
            let text = fs::read_to_string(&out).unwrap();
            let lines: Vec<&str> = text.lines().collect();
            assert_eq!(lines.len(), 11);
            assert!(lines.iter().all(|l| l.split(',').count() == cols));
            let ids: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
            let mut sorted = ids.clone();
            sorted.sort();
            assert_eq!(ids, sorted);
            export_features(&m, kind, &cfg, &out).unwrap();
            assert_eq!(fs::read_to_string(&out).unwrap(), text);
        }
        assert!(export_features(&DatasetManifest::default(), FeatureSetKind::Texture, &cfg, &dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn nine_significant_digits() {
        assert_eq!(sig9(0.1234567891234), "0.123456789");
        assert_eq!(sig9(123456.7891), "123456.789");
        assert_eq!(sig9(0.0), "0");
        assert_eq!(sig9(2.0), "2");
    }
}
