//! Synthetic shapes dataset, manifests, file formats and batching.
//!
//! A manifest is a tab-separated text file, one sample per line:
//! `image<TAB>mask<TAB>depth`, the last two optional (empty or absent).
//! Paths are relative to the manifest's directory. Lines starting with `#`
//! are comments, except `#split<TAB>name` which tags the split.
//!
//! Depth rasters start with a 16-byte header (`"DPTH"`, u32 width, u32
//! height, u32 reserved) followed by little-endian `f32` values in metres.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{stream_rng, Stream};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// Shape primitives in class order; class 0 is background.
pub const SHAPES: [&str; 5] = ["circle", "square", "triangle", "cross", "ring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthRule {
    /// Shape depth uniform in the range.
    Uniform,
    /// Larger shapes are nearer, with jitter.
    BySize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticShapesSpec {
    pub count: usize,
    pub image_size: usize,
    /// Number of shape types; masks hold values `0..=num_classes`.
    pub num_classes: usize,
    pub shapes_per_image: (usize, usize),
    pub depth_range: (f64, f64),
    pub depth_rule: DepthRule,
    pub seed: u64,
}

impl Default for SyntheticShapesSpec {
    fn default() -> Self {
        Self {
            count: 512,
            image_size: 32,
            num_classes: 4,
            shapes_per_image: (1, 3),
            depth_range: (0.1, 10.0),
            depth_rule: DepthRule::BySize,
            seed: 0,
        }
    }
}

impl SyntheticShapesSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > SHAPES.len() {
            return Err(Error::config(format!(
                "num_classes {} must be in 1..={}",
                self.num_classes,
                SHAPES.len()
            )));
        }
        let (lo, hi) = self.shapes_per_image;
        if lo == 0 || lo > hi {
            return Err(Error::config(format!("shapes_per_image ({lo}, {hi}) is invalid")));
        }
        let (d0, d1) = self.depth_range;
        if !(d0 >= 0.0 && d1 > d0) {
            return Err(Error::config(format!("depth_range ({d0}, {d1}) is invalid")));
        }
        if self.image_size < 8 {
            return Err(Error::config("image_size must be at least 8"));
        }
        Ok(())
    }
}

/// One rendered sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub mask: Option<Vec<u8>>,
    pub depth: Option<Vec<f32>>,
}

fn inside(kind: usize, dx: f64, dy: f64, r: f64) -> bool {
    match kind {
        0 => dx * dx + dy * dy <= r * r,
        1 => dx.abs() <= r * 0.85 && dy.abs() <= r * 0.85,
        2 => {
            // apex at -r, base at 0.6r
            let top = -r;
            let bottom = 0.6 * r;
            if dy < top || dy > bottom {
                return false;
            }
            let half = (dy - top) / (bottom - top) * r * 0.95;
            dx.abs() <= half
        }
        3 => {
            let arm = 0.33 * r;
            (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
        }
        _ => {
            let d2 = dx * dx + dy * dy;
            d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
        }
    }
}

fn random_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Renders one sample deterministically from `rng`.
pub fn render_sample<R: Rng + ?Sized>(spec: &SyntheticShapesSpec, rng: &mut R) -> Sample {
    let s = spec.image_size;
    let (d_min, d_max) = spec.depth_range;
    let mut image = Image::filled(s, s, [0.0; 3]);
    // low-contrast stripes between a base colour and a nearby tint
    let c0 = random_color(rng);
    let tint = random_color(rng);
    let c1: [f32; 3] = std::array::from_fn(|c| c0[c] + 0.3 * (tint[c] - c0[c]));
    let freq = rng.random_range(0.15..0.6);
    let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (ca, sa) = (angle.cos(), angle.sin());
    for y in 0..s {
        for x in 0..s {
            let t = 0.5 + 0.5 * ((x as f64 * ca + y as f64 * sa) * freq).sin();
            let grain = rng.random_range(-0.05..0.05);
            for c in 0..3 {
                let v = c0[c] as f64 * (1.0 - t) + c1[c] as f64 * t + grain;
                *image.at_mut(c, y, x) = v.clamp(0.0, 1.0) as f32;
            }
        }
    }
    let mut mask = vec![0u8; s * s];
    let mut depth = vec![d_max as f32; s * s];

    let n = rng.random_range(spec.shapes_per_image.0..=spec.shapes_per_image.1);
    let sf = s as f64;
    let mut shapes: Vec<(usize, f64, f64, f64, f64, [f32; 3])> = (0..n)
        .map(|_| {
            let kind = rng.random_range(0..spec.num_classes);
            let r = rng.random_range(0.15 * sf..0.32 * sf);
            let cx = rng.random_range(r * 0.5..sf - r * 0.5);
            let cy = rng.random_range(r * 0.5..sf - r * 0.5);
            let depth = match spec.depth_rule {
                DepthRule::Uniform => rng.random_range(d_min..d_max),
                DepthRule::BySize => {
                    // radius fraction 0.15..0.32 maps onto the far..near end of the range
                    let nearness = (r / sf - 0.15) / 0.17;
                    let jitter = rng.random_range(-0.05..0.05);
                    let frac = (0.9 - 0.8 * nearness + jitter).clamp(0.02, 0.98);
                    d_min + (d_max - d_min) * frac
                }
            };
            (kind, r, cx, cy, depth, random_color(rng))
        })
        .collect();
    // painter's order: far shapes first so near ones occlude them
    shapes.sort_by(|a, b| b.4.total_cmp(&a.4));
    for (kind, r, cx, cy, d, color) in shapes {
        for y in 0..s {
            for x in 0..s {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                if inside(kind, dx, dy, r) {
                    (0..3).for_each(|c| *image.at_mut(c, y, x) = color[c]);
                    mask[y * s + x] = kind as u8 + 1;
                    depth[y * s + x] = d as f32;
                }
            }
        }
    }
    Sample {
        image,
        mask: Some(mask),
        depth: Some(depth),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub depth: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    pub split: Option<String>,
    pub records: Vec<Record>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let mut split = None;
        let mut records = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.strip_prefix("split\t") {
                    split = Some(name.trim().to_string());
                }
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() > 3 || cols[0].is_empty() {
                return Err(Error::Decode {
                    path: root.clone(),
                    detail: format!("manifest line {}: expected image[<TAB>mask[<TAB>depth]]", lineno + 1),
                });
            }
            let opt = |i: usize| cols.get(i).filter(|c| !c.is_empty()).map(PathBuf::from);
            records.push(Record {
                image: PathBuf::from(cols[0]),
                mask: opt(1),
                depth: opt(2),
            });
        }
        Ok(Self { root, split, records })
    }

    /// Reads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Self::parse(&text, root)?;
        for r in &manifest.records {
            for rel in std::iter::once(&r.image).chain(&r.mask).chain(&r.depth) {
                let full = manifest.resolve(rel);
                if !full.is_file() {
                    return Err(Error::io(
                        full,
                        std::io::Error::new(std::io::ErrorKind::NotFound, "listed in manifest but missing"),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(split) = &self.split {
            out.push_str(&format!("#split\t{split}\n"));
        }
        let show = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        for r in &self.records {
            out.push_str(&format!("{}\t{}\t{}\n", r.image.display(), show(&r.mask), show(&r.depth)));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let r = &self.records[index];
        let image = read_png_rgb(&self.resolve(&r.image))?;
        let mask = r.mask.as_ref().map(|m| read_png_mask(&self.resolve(m))).transpose()?;
        let depth = r.depth.as_ref().map(|d| read_depth(&self.resolve(d))).transpose()?;
        let n = image.width * image.height;
        for (what, len) in [("mask", mask.as_ref().map(|m| m.1.len())), ("depth", depth.as_ref().map(|d| d.2.len()))] {
            if len.is_some_and(|l| l != n) {
                return Err(Error::Decode {
                    path: self.resolve(&r.image),
                    detail: format!("{what} size does not match the image"),
                });
            }
        }
        Ok(Sample {
            image,
            mask: mask.map(|m| m.1),
            depth: depth.map(|d| d.2),
        })
    }

    pub fn load_all(&self) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load_sample(i)).collect()
    }
}

fn decode_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Decode {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let reader = ImageReader::open(path).map_err(|e| Error::io(path, e))?;
    let reader = reader.with_guessed_format().map_err(|e| Error::io(path, e))?;
    reader.decode().map_err(|e| decode_err(path, e))
}

pub fn read_png_rgb(path: &Path) -> Result<Image> {
    let rgb = open_image(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut img = Image::filled(w, h, [0.0; 3]);
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            *img.at_mut(c, y as usize, x as usize) = px[c] as f32 / 255.0;
        }
    }
    Ok(img)
}

pub fn write_png_rgb(path: &Path, img: &Image) -> Result<()> {
    let mut out = RgbImage::new(img.width as u32, img.height as u32);
    for (x, y, px) in out.enumerate_pixels_mut() {
        for c in 0..3 {
            px[c] = (img.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    out.save(path).map_err(|e| decode_err(path, e))
}

/// Single-channel class-index PNG as `(width, values)`.
pub fn read_png_mask(path: &Path) -> Result<(usize, Vec<u8>)> {
    let img = open_image(path)?;
    if img.color().channel_count() != 1 {
        return Err(decode_err(path, "mask must be single-channel"));
    }
    let gray = img.to_luma8();
    Ok((gray.width() as usize, gray.into_raw()))
}

pub fn write_png_mask(path: &Path, width: usize, values: &[u8]) -> Result<()> {
    let height = values.len() / width;
    let img = GrayImage::from_raw(width as u32, height as u32, values.to_vec()).expect("mask buffer matches size");
    img.save(path).map_err(|e| decode_err(path, e))
}

pub fn encode_depth(width: usize, height: usize, values: &[f32]) -> Vec<u8> {
    assert_eq!(values.len(), width * height, "depth buffer size");
    let mut out = Vec::with_capacity(16 + 4 * values.len());
    out.extend_from_slice(DEPTH_MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a depth raster into `(width, height, values)`.
pub fn decode_depth(bytes: &[u8], path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 16 || &bytes[..4] != DEPTH_MAGIC {
        return Err(decode_err(path, "not a DPTH raster"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h) = (word(4), word(8));
    if bytes.len() != 16 + 4 * w * h {
        return Err(decode_err(path, format!("{w}×{h} raster has {} payload bytes", bytes.len() - 16)));
    }
    let values = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((w, h, values))
}

pub fn read_depth(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&bytes, path)
}

pub fn write_depth(path: &Path, width: usize, height: usize, values: &[f32]) -> Result<()> {
    fs::write(path, encode_depth(width, height, values)).map_err(|e| Error::io(path, e))
}

/// Renders `spec.count` samples into `out_dir` and writes `<split>.tsv`.
pub fn generate_shapes(spec: &SyntheticShapesSpec, out_dir: &Path, split: &str) -> Result<DatasetManifest> {
    spec.validate()?;
    let sub = |name: &str| -> Result<PathBuf> {
        let d = out_dir.join(split).join(name);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        Ok(d)
    };
    let (img_dir, mask_dir, depth_dir) = (sub("images")?, sub("masks")?, sub("depth")?);
    let split_tag = split.bytes().fold(0u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
    let mut records = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mut rng = stream_rng(spec.seed, Stream::Generate, &[split_tag, i as u64]);
        let sample = render_sample(spec, &mut rng);
        let stem = format!("{i:05}");
        let s = spec.image_size;
        write_png_rgb(&img_dir.join(format!("{stem}.png")), &sample.image)?;
        write_png_mask(&mask_dir.join(format!("{stem}.png")), s, sample.mask.as_deref().expect("rendered"))?;
        write_depth(&depth_dir.join(format!("{stem}.dpth")), s, s, sample.depth.as_deref().expect("rendered"))?;
        let rel = |d: &str, ext: &str| PathBuf::from(format!("{split}/{d}/{stem}.{ext}"));
        records.push(Record {
            image: rel("images", "png"),
            mask: Some(rel("masks", "png")),
            depth: Some(rel("depth", "dpth")),
        });
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        split: Some(split.to_string()),
        records,
    };
    manifest.save(&out_dir.join(format!("{split}.tsv")))?;
    Ok(manifest)
}

/// Drop-last batches of indices `0..len`, shuffled per epoch when `seed` is given.
pub fn epoch_batches(len: usize, batch: usize, seed: Option<u64>, epoch: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    if let Some(seed) = seed {
        order.shuffle(&mut stream_rng(seed, Stream::Shuffle, &[epoch]));
    }
    order.chunks_exact(batch.max(1)).map(<[usize]>::to_vec).collect()
}

/// Lazily decoding batch iterator over a manifest.
pub struct BatchIter<'a> {
    manifest: &'a DatasetManifest,
    batches: std::vec::IntoIter<Vec<usize>>,
}

impl<'a> BatchIter<'a> {
    pub fn new(manifest: &'a DatasetManifest, batch_size: usize, shuffle_seed: Option<u64>, epoch: u64) -> Result<Self> {
        if manifest.is_empty() || batch_size == 0 || manifest.len() < batch_size {
            return Err(Error::EmptyDataset);
        }
        Ok(Self {
            manifest,
            batches: epoch_batches(manifest.len(), batch_size, shuffle_seed, epoch).into_iter(),
        })
    }

    pub fn num_batches(&self) -> usize {
        self.batches.len()
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Vec<Sample>>;

    fn next(&mut self) -> Option<Self::Item> {
        let idx = self.batches.next()?;
        Some(idx.into_iter().map(|i| self.manifest.load_sample(i)).collect())
    }
}

pub fn load_batchiter(manifest: &DatasetManifest, batch_size: usize, shuffle_seed: u64) -> Result<BatchIter<'_>> {
    BatchIter::new(manifest, batch_size, Some(shuffle_seed), 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(count: usize) -> SyntheticShapesSpec {
        SyntheticShapesSpec {
            count,
            image_size: 16,
            seed: 3,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_byte_identical() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let spec = small_spec(4);
        let ma = generate_shapes(&spec, a.path(), "train").unwrap();
        generate_shapes(&spec, b.path(), "train").unwrap();
        for r in &ma.records {
            for rel in [&r.image, r.mask.as_ref().unwrap(), r.depth.as_ref().unwrap()] {
                assert_eq!(fs::read(a.path().join(rel)).unwrap(), fs::read(b.path().join(rel)).unwrap());
            }
        }
        assert_eq!(
            fs::read(a.path().join("train.tsv")).unwrap(),
            fs::read(b.path().join("train.tsv")).unwrap()
        );
    }

    #[test]
    fn generated_contracts_hold() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(6);
        generate_shapes(&spec, dir.path(), "val").unwrap();
        let m = DatasetManifest::load(dir.path().join("val.tsv")).unwrap();
        assert_eq!(m.split.as_deref(), Some("val"));
        assert_eq!(m.len(), 6);
        for s in m.load_all().unwrap() {
            assert!(s.mask.unwrap().iter().all(|&v| (v as usize) < spec.num_classes + 1));
            assert!(s.depth.unwrap().iter().all(|&d| (0.1..=10.0).contains(&d)));
            assert!(s.image.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn manifest_text_round_trip() {
        let text = "#split\ttrain\na.png\tm.png\td.dpth\nb.png\n# comment\nc.png\t\td2.dpth\n";
        let m = DatasetManifest::parse(text, "/x").unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.records[1].mask, None);
        assert_eq!(m.records[2].depth, Some(PathBuf::from("d2.dpth")));
        let again = DatasetManifest::parse(&m.to_text(), "/x").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn depth_raster_round_trip() {
        let bytes = encode_depth(2, 1, &[0.5, 7.25]);
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"DPTH");
        assert_eq!(decode_depth(&bytes, Path::new("x")).unwrap(), (2, 1, vec![0.5, 7.25]));
        assert!(decode_depth(&bytes[..20], Path::new("x")).is_err());
    }

    #[test]
    fn drop_last_and_shuffle() {
        assert_eq!(epoch_batches(10, 3, Some(1), 0).len(), 3);
        assert_eq!(epoch_batches(10, 3, Some(1), 4), epoch_batches(10, 3, Some(1), 4));
        assert_ne!(epoch_batches(10, 3, Some(1), 0), epoch_batches(10, 3, Some(1), 1));
        assert_eq!(epoch_batches(4, 2, None, 0), vec![vec![0, 1], vec![2, 3]]);
    }

    #[test]
    fn corrupt_image_names_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("bad.png"), b"not a png at all").unwrap();
        fs::write(dir.path().join("m.tsv"), "bad.png\n").unwrap();
        let m = DatasetManifest::load(dir.path().join("m.tsv")).unwrap();
        let err = load_batchiter(&m, 1, 0).unwrap().next().unwrap().unwrap_err();
        match err {
            Error::Decode { path, .. } => assert!(path.ends_with("bad.png")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_file_fails_manifest_load() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("m.tsv"), "nope.png\n").unwrap();
        assert!(matches!(DatasetManifest::load(dir.path().join("m.tsv")), Err(Error::Io { .. })));
    }
}
