//! Synthetic 6-band scenes, the cloud filter, augmentation and the
//! stratified split.
//!
//! Negatives are smooth terrain with band-specific base reflectance. A
//! fraction of negatives also carries bright cloud-like blobs, the usual
//! false-positive source. Positives add one to three elliptical lakes with a
//! water signature: bright blue/green, moderate NIR, dark SWIR.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::riskflow::{ImageSample, BANDS, SIDE};
use crate::tensor::{self, Tensor};

pub const LABELS_HEADER: [&str; 4] = ["index", "label", "cloud_fraction", "provenance"];
pub const ORIGINAL: &str = "original";

/// Reflectance of open water in B2, B3, B4, B8, B11, B12.
pub const WATER: [f64; BANDS] = [0.35, 0.30, 0.20, 0.12, 0.03, 0.02];
/// Mean terrain reflectance per band.
pub const TERRAIN: [f64; BANDS] = [0.45, 0.45, 0.42, 0.40, 0.25, 0.20];
pub const CLOUD: f64 = 0.85;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMeta {
    pub cloud_fraction: f64,
    pub label: u8,
    /// `original`, or `<op>:<source index>` for augmented samples.
    pub provenance: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImageGenParams {
    /// Fraction of negatives carrying cloud-like confusers.
    pub confuser_fraction: f64,
    pub terrain_amplitude: f64,
    pub pixel_noise: f64,
}

impl Default for ImageGenParams {
    fn default() -> Self {
        Self { confuser_fraction: 0.3, terrain_amplitude: 0.08, pixel_noise: 0.015 }
    }
}

/// A rendered scene and, for positives, the lake mask.
#[derive(Clone, Debug)]
pub struct Scene {
    pub bands: Tensor,
    pub cloud_fraction: f64,
    pub lake_mask: Option<Vec<bool>>,
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn random(rng: &mut ChaCha8Rng, min_axis: f64, max_axis: f64) -> Self {
        Self {
            cy: rng.random_range(24.0..104.0),
            cx: rng.random_range(24.0..104.0),
            a: rng.random_range(min_axis..max_axis),
            b: rng.random_range(min_axis..max_axis),
            theta: rng.random_range(0.0..std::f64::consts::PI),
        }
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        let (dy, dx) = (y as f64 - self.cy, x as f64 - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

/// Smooth noise: an 9×9 grid of normals bilinearly upsampled to 128×128.
fn smooth_field(rng: &mut ChaCha8Rng) -> Vec<f64> {
    const G: usize = 9;
    let grid: Vec<f64> = (0..G * G).map(|_| StandardNormal.sample(rng)).collect();
    let scale = (G - 1) as f64 / (SIDE - 1) as f64;
    let mut out = Vec::with_capacity(SIDE * SIDE);
    for y in 0..SIDE {
        let gy = y as f64 * scale;
        let (y0, fy) = (gy.floor() as usize, gy.fract());
        let y1 = (y0 + 1).min(G - 1);
        for x in 0..SIDE {
            let gx = x as f64 * scale;
            let (x0, fx) = (gx.floor() as usize, gx.fract());
            let x1 = (x0 + 1).min(G - 1);
            let top = grid[y0 * G + x0] * (1.0 - fx) + grid[y0 * G + x1] * fx;
            let bot = grid[y1 * G + x0] * (1.0 - fx) + grid[y1 * G + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Renders one scene with the requested label.
pub fn render_scene(rng: &mut ChaCha8Rng, label: u8, params: &ImageGenParams) -> Scene {
    let px = SIDE * SIDE;
    let field = smooth_field(rng);
    let gains: [f64; BANDS] = std::array::from_fn(|_| rng.random_range(0.7..1.3));
    let mut data = vec![0.0; BANDS * px];
    for (b, plane) in data.chunks_exact_mut(px).enumerate() {
        for (i, v) in plane.iter_mut().enumerate() {
            *v = TERRAIN[b] + params.terrain_amplitude * gains[b] * field[i];
        }
    }
    let mut lake_mask = None;
    if label == 1 {
        let lakes: Vec<Ellipse> = (0..rng.random_range(1..=3)).map(|_| Ellipse::random(rng, 8.0, 22.0)).collect();
        let mask: Vec<bool> = (0..px).map(|i| lakes.iter().any(|e| e.contains(i / SIDE, i % SIDE))).collect();
        for (b, plane) in data.chunks_exact_mut(px).enumerate() {
            for (v, _) in plane.iter_mut().zip(&mask).filter(|(_, &m)| m) {
                *v = WATER[b];
            }
        }
        lake_mask = Some(mask);
    } else if rng.random::<f64>() < params.confuser_fraction {
        let clouds: Vec<Ellipse> = (0..rng.random_range(1..=3)).map(|_| Ellipse::random(rng, 6.0, 20.0)).collect();
        for i in 0..px {
            if clouds.iter().any(|e| e.contains(i / SIDE, i % SIDE)) {
                for b in 0..BANDS {
                    data[b * px + i] = CLOUD;
                }
            }
        }
    }
    for v in &mut data {
        let z: f64 = StandardNormal.sample(rng);
        *v = (*v + params.pixel_noise * z).clamp(0.0, 1.0);
    }
    let cloud_fraction = rng.random::<f64>();
    Scene {
        bands: Tensor::new(vec![BANDS, SIDE, SIDE], data).expect("scene shape"),
        cloud_fraction,
        lake_mask,
    }
}

/// Images with their scene metadata, index-aligned.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageDataset {
    pub samples: Vec<ImageSample>,
    pub meta: Vec<SceneMeta>,
}

impl ImageDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: ImageSample, cloud_fraction: f64, provenance: String) {
        self.meta.push(SceneMeta { cloud_fraction, label: sample.label(), provenance });
        self.samples.push(sample);
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(ImageSample::label).collect()
    }

    pub fn count(&self, label: u8) -> usize {
        self.samples.iter().filter(|s| s.label() == label).count()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            meta: indices.iter().map(|&i| self.meta[i].clone()).collect(),
        }
    }
}

/// `n_pos` positives followed by `n_neg` negatives.
pub fn gen_image_dataset(seed: u64, n_pos: usize, n_neg: usize, params: &ImageGenParams) -> Result<ImageDataset> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("image dataset needs at least one sample per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ImageDataset::default();
    for label in std::iter::repeat_n(1, n_pos).chain(std::iter::repeat_n(0, n_neg)) {
        let scene = render_scene(&mut rng, label, params);
        out.push(ImageSample::new(scene.bands, label)?, scene.cloud_fraction, ORIGINAL.into());
    }
    Ok(out)
}

/// Indices of scenes with `cloud_fraction < max_cover`.
pub fn cloud_filter(scenes: &[SceneMeta], max_cover: f64) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&max_cover) {
        return Err(Error::invalid(format!("max cloud cover {max_cover} outside [0,1]")));
    }
    Ok(scenes.iter().enumerate().filter(|(_, s)| s.cloud_fraction < max_cover).map(|(i, _)| i).collect())
}

/// Draws scenes until `n_pos` positives and `n_neg` negatives pass the
/// cloud filter, keeping only those.
pub fn gen_filtered_scenes(
    seed: u64,
    n_pos: usize,
    n_neg: usize,
    max_cover: f64,
    params: &ImageGenParams,
) -> Result<ImageDataset> {
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::invalid("image dataset needs at least one sample per class"));
    }
    if !(max_cover > 0.0 && max_cover <= 1.0) {
        return Err(Error::invalid(format!("max cloud cover {max_cover} keeps no scenes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ImageDataset::default();
    let (mut pos, mut neg) = (0, 0);
    while pos < n_pos || neg < n_neg {
        let label = u8::from(pos < n_pos && (neg >= n_neg || rng.random::<f64>() < 0.5));
        let scene = render_scene(&mut rng, label, params);
        if scene.cloud_fraction >= max_cover {
            continue;
        }
        if label == 1 { pos += 1 } else { neg += 1 }
        out.push(ImageSample::new(scene.bands, label)?, scene.cloud_fraction, ORIGINAL.into());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augment {
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
    Brightness(f64),
}

impl Augment {
    pub fn name(self) -> String {
        match self {
            Augment::FlipH => "flip_h".into(),
            Augment::FlipV => "flip_v".into(),
            Augment::Rot90 => "rot90".into(),
            Augment::Rot180 => "rot180".into(),
            Augment::Rot270 => "rot270".into(),
            Augment::Brightness(f) => format!("brightness{f:.3}"),
        }
    }

    fn random(rng: &mut ChaCha8Rng) -> Self {
        match rng.random_range(0..6) {
            0 => Augment::FlipH,
            1 => Augment::FlipV,
            2 => Augment::Rot90,
            3 => Augment::Rot180,
            4 => Augment::Rot270,
            _ => Augment::Brightness(rng.random_range(0.8..=1.2)),
        }
    }

    /// Applies the transform to a `C×n×n` image.
    pub fn apply(self, img: &Tensor) -> Result<Tensor> {
        let s = img.shape();
        if s.len() != 3 || s[1] != s[2] {
            return Err(Error::shape(format!("augment needs a square C×n×n image, got {s:?}")));
        }
        let n = s[1];
        let src = img.data();
        let remap = |f: &dyn Fn(usize, usize) -> (usize, usize)| {
            let mut out = vec![0.0; src.len()];
            for (c, plane) in out.chunks_exact_mut(n * n).enumerate() {
                for y in 0..n {
                    for x in 0..n {
                        let (sy, sx) = f(y, x);
                        plane[y * n + x] = src[c * n * n + sy * n + sx];
                    }
                }
            }
            out
        };
        let data = match self {
            Augment::FlipH => remap(&|y, x| (y, n - 1 - x)),
            Augment::FlipV => remap(&|y, x| (n - 1 - y, x)),
            Augment::Rot90 => remap(&|y, x| (x, n - 1 - y)),
            Augment::Rot180 => remap(&|y, x| (n - 1 - y, n - 1 - x)),
            Augment::Rot270 => remap(&|y, x| (n - 1 - x, y)),
            Augment::Brightness(f) => src.iter().map(|v| (v * f).clamp(0.0, 1.0)).collect(),
        };
        Tensor::new(s.to_vec(), data)
    }
}

/// Grows each class to `target_per_class` by transforming randomly chosen
/// members of that class. Existing samples are kept in place.
pub fn augment_balance(set: &ImageDataset, target_per_class: usize, seed: u64) -> Result<ImageDataset> {
    let mut out = set.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for label in [1u8, 0] {
        let members: Vec<usize> = (0..set.len()).filter(|&i| set.samples[i].label() == label).collect();
        if members.is_empty() {
            return Err(Error::invalid(format!("class {label} has no samples to augment")));
        }
        if members.len() > target_per_class {
            return Err(Error::invalid(format!(
                "class {label} already has {} samples, above the target {target_per_class}",
                members.len()
            )));
        }
        for _ in members.len()..target_per_class {
            let src = *members.choose(&mut rng).expect("nonempty");
            let op = Augment::random(&mut rng);
            let img = op.apply(set.samples[src].bands())?;
            out.push(ImageSample::new(img, label)?, set.meta[src].cloud_fraction, format!("{}:{src}", op.name()));
        }
    }
    Ok(out)
}

/// Train/validation/test indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified, seeded partition of sample indices by label.
pub fn split_dataset(labels: &[u8], fractions: [f64; 3], seed: u64) -> Result<Split> {
    super::check_fractions(fractions)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split { train: Vec::new(), val: Vec::new(), test: Vec::new() };
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    for class in classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < 3 {
            return Err(Error::invalid(format!("class {class} has {} samples; stratifying needs 3", idx.len())));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let a = (n * fractions[0]).round() as usize;
        let b = (a + (n * fractions[1]).round() as usize).min(idx.len());
        split.train.extend_from_slice(&idx[..a]);
        split.val.extend_from_slice(&idx[a..b]);
        split.test.extend_from_slice(&idx[b..]);
    }
    split.train.sort_unstable();
    split.val.sort_unstable();
    split.test.sort_unstable();
    Ok(split)
}

pub fn write_labels_csv<W: Write>(meta: &[SceneMeta], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    w.write_record(LABELS_HEADER)?;
    for (i, m) in meta.iter().enumerate() {
        w.write_record([i.to_string(), m.label.to_string(), format!("{:.6}", m.cloud_fraction), m.provenance.clone()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<SceneMeta>> {
    let mut rdr = csv::Reader::from_reader(input);
    if rdr.headers()?.iter().ne(LABELS_HEADER) {
        return Err(Error::Format(format!("labels CSV must start with {}", LABELS_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for (expect, row) in rdr.records().enumerate() {
        let row = row?;
        let bad = |what: &str| Error::Format(format!("labels row {expect}: bad {what}"));
        let idx: usize = row[0].parse().map_err(|_| bad("index"))?;
        if idx != expect {
            return Err(bad("index order"));
        }
        let label: u8 = row[1].parse().map_err(|_| bad("label"))?;
        let cloud_fraction: f64 = row[2].parse().map_err(|_| bad("cloud_fraction"))?;
        if label > 1 || !(0.0..=1.0).contains(&cloud_fraction) {
            return Err(bad("label or cloud_fraction range"));
        }
        out.push(SceneMeta { cloud_fraction, label, provenance: row[3].to_string() });
    }
    Ok(out)
}

/// Writes `images.iwt` (N×6×128×128) and `images_labels.csv` under `dir`.
pub fn write_image_dataset(set: &ImageDataset, dir: &Path) -> Result<()> {
    let refs: Vec<&Tensor> = set.samples.iter().map(ImageSample::bands).collect();
    tensor::write_stack_file(dir.join("images.iwt"), &refs)?;
    let f = std::fs::File::create(dir.join("images_labels.csv"))?;
    write_labels_csv(&set.meta, std::io::BufWriter::new(f))
}

pub fn read_image_dataset(dir: &Path) -> Result<ImageDataset> {
    let images = tensor::read_stack_file(dir.join("images.iwt"))?;
    let meta = read_labels_csv(std::fs::File::open(dir.join("images_labels.csv"))?)?;
    if images.len() != meta.len() {
        return Err(Error::Format(format!("{} images but {} label rows", images.len(), meta.len())));
    }
    let samples = images
        .into_iter()
        .zip(&meta)
        .map(|(t, m)| ImageSample::new(t, m.label))
        .collect::<Result<_>>()?;
    Ok(ImageDataset { samples, meta })
}
