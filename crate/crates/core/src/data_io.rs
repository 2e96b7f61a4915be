//! File formats: PNG images and label maps, label-id mapping, input
//! normalization, the binary weight format, raw tensor dumps and a synthetic
//! dataset generator.
//!
//! Every writer goes through a temporary file in the target directory and a
//! rename, so a failed write never leaves a partial file behind.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::Sample;
use crate::error::{Error, Result, WeightError};
use crate::params::ParamStore;
use crate::tensor::{LabelMap, Shape, Tensor, IGNORE_ID};

// ---------------------------------------------------------------- atomic writes

/// Write `path` by filling a sibling temp file and renaming it into place.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::data(path, "not a file path"))?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        fill(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

// ---------------------------------------------------------------- normalization

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Normalization {
    #[default]
    /// `(x/255 − 0.5) / 0.5`, mapping [0,255] onto [−1,1].
    Symmetric,
    /// Per-channel `(x/255 − mean) / std`.
    Stats { mean: [f64; 3], std: [f64; 3] },
}

impl Normalization {
    /// ImageNet channel statistics, a common choice for RGB street scenes.
    pub const IMAGENET: Normalization = Normalization::Stats { mean: [0.485, 0.456, 0.406], std: [0.229, 0.224, 0.225] };

    fn coeffs(&self, c: usize) -> (f64, f64) {
        match self {
            Normalization::Symmetric => (0.5, 0.5),
            Normalization::Stats { mean, std } => (mean[c], std[c]),
        }
    }

    pub fn apply(&self, c: usize, v: u8) -> f32 {
        let (m, s) = self.coeffs(c);
        ((v as f64 / 255.0 - m) / s) as f32
    }

    /// Back to 8-bit, rounded and clamped.
    pub fn invert(&self, c: usize, v: f32) -> u8 {
        let (m, s) = self.coeffs(c);
        ((v as f64 * s + m) * 255.0).round().clamp(0.0, 255.0) as u8
    }

    pub fn describe(&self) -> String {
        match self {
            Normalization::Symmetric => "symmetric (x/255-0.5)/0.5".to_string(),
            Normalization::Stats { mean, std } => format!("stats mean={mean:?} std={std:?}"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Normalization::Stats { std, .. } = self {
            if std.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::invalid(format!("normalization std {std:?} must be positive")));
            }
        }
        Ok(())
    }
}

/// Interleaved 8-bit RGB to a normalized `(1,3,H,W)` tensor.
pub fn image_tensor(h: usize, w: usize, rgb: &[u8], norm: Normalization) -> Result<Tensor> {
    if rgb.len() != h * w * 3 {
        return Err(Error::shape(format!("rgb buffer of {} bytes for {h}x{w}", rgb.len())));
    }
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| norm.apply(c, rgb[(y * w + x) * 3 + c])))
}

/// Inverse of [`image_tensor`] for the first batch item.
pub fn tensor_rgb(t: &Tensor, norm: Normalization) -> Vec<u8> {
    let s = t.shape();
    let mut out = Vec::with_capacity(s.plane() * 3);
    for y in 0..s.h {
        for x in 0..s.w {
            for c in 0..3 {
                out.push(norm.invert(c, t.at(0, c, y, x)));
            }
        }
    }
    out
}

// ---------------------------------------------------------------- PNG

/// Decoded 8-bit image: `channels` interleaved values per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Image8 {
    pub h: usize,
    pub w: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

fn read_png(path: &Path) -> Result<(png::ColorType, png::BitDepth, Image8)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let bad = |e: png::DecodingError| Error::data(path, format!("undecodable PNG: {e}"));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::data(path, "PNG too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    let img = Image8 { h: info.height as usize, w: info.width as usize, channels, data: buf };
    Ok((info.color_type, info.bit_depth, img))
}

/// An 8-bit RGB PNG.
pub fn read_rgb(path: &Path) -> Result<Image8> {
    let (color, depth, img) = read_png(path)?;
    if color != png::ColorType::Rgb || depth != png::BitDepth::Eight {
        return Err(Error::data(path, format!("expected 8-bit RGB image, found {color:?} {depth:?}")));
    }
    Ok(img)
}

/// A single-channel 8-bit PNG (grayscale, or palette indices taken as ids).
pub fn read_ids(path: &Path) -> Result<Image8> {
    let (color, depth, img) = read_png(path)?;
    if !matches!(color, png::ColorType::Grayscale | png::ColorType::Indexed) || depth != png::BitDepth::Eight {
        return Err(Error::data(path, format!("expected single-channel 8-bit label map, found {color:?} {depth:?}")));
    }
    Ok(img)
}

fn write_png(path: &Path, w: usize, h: usize, color: png::ColorType, palette: Option<Vec<u8>>, data: &[u8], text: &[(&str, &str)]) -> Result<()> {
    write_atomic(path, |out| {
        let mut enc = png::Encoder::new(out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        if let Some(p) = palette {
            enc.set_palette(p);
        }
        for (k, v) in text {
            enc.add_text_chunk(k.to_string(), v.to_string()).map_err(std::io::Error::other)?;
        }
        let mut writer = enc.write_header().map_err(std::io::Error::other)?;
        writer.write_image_data(data).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    })
}

pub fn write_rgb(path: &Path, w: usize, h: usize, rgb: &[u8]) -> Result<()> {
    write_png(path, w, h, png::ColorType::Rgb, None, rgb, &[])
}

pub fn write_gray(path: &Path, w: usize, h: usize, ids: &[u8]) -> Result<()> {
    write_png(path, w, h, png::ColorType::Grayscale, None, ids, &[])
}

/// Cityscapes colours for the 19 evaluation classes.
pub const CITYSCAPES_PALETTE: [[u8; 3]; 19] = [
    [128, 64, 128],
    [244, 35, 232],
    [70, 70, 70],
    [102, 102, 156],
    [190, 153, 153],
    [153, 153, 153],
    [250, 170, 30],
    [220, 220, 0],
    [107, 142, 35],
    [152, 251, 152],
    [70, 130, 180],
    [220, 20, 60],
    [255, 0, 0],
    [0, 0, 142],
    [0, 0, 70],
    [0, 60, 100],
    [0, 80, 100],
    [0, 0, 230],
    [119, 11, 32],
];

/// 256-entry palette: Cityscapes colours first, a deterministic spread after,
/// black for the ignore id.
pub fn palette() -> Vec<u8> {
    let mut p = Vec::with_capacity(256 * 3);
    for i in 0..256usize {
        let rgb = match i {
            _ if i < 19 => CITYSCAPES_PALETTE[i],
            255 => [0, 0, 0],
            _ => [(i * 67 % 256) as u8, (i * 131 % 256) as u8, (i * 199 % 256) as u8],
        };
        p.extend_from_slice(&rgb);
    }
    p
}

/// Indexed PNG whose pixel values are the class ids of batch item 0.
/// `text` entries are stored as tEXt chunks.
pub fn write_label_png(path: &Path, labels: &LabelMap, text: &[(&str, &str)]) -> Result<()> {
    let (_, h, w) = labels.dims();
    write_png(path, w, h, png::ColorType::Indexed, Some(palette()), labels.item(0), text)
}

// ---------------------------------------------------------------- label mapping

/// Raw id → train id, total over all 256 byte values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMapping {
    table: [u8; 256],
}

/// Cityscapes raw ids of the 19 evaluation classes, in train-id order.
pub const CITYSCAPES_EVAL_IDS: [u8; 19] = [7, 8, 11, 12, 13, 17, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 31, 32, 33];

impl LabelMapping {
    /// The Cityscapes table; every id outside the 19 evaluation classes is ignored.
    pub fn cityscapes() -> Self {
        let mut table = [IGNORE_ID; 256];
        for (train, &raw) in CITYSCAPES_EVAL_IDS.iter().enumerate() {
            table[raw as usize] = train as u8;
        }
        LabelMapping { table }
    }

    /// Every id maps to itself; for labels already in train-id space.
    pub fn identity() -> Self {
        let mut table = [0; 256];
        for (i, t) in table.iter_mut().enumerate() {
            *t = i as u8;
        }
        LabelMapping { table }
    }

    pub fn get(&self, raw: u8) -> u8 {
        self.table[raw as usize]
    }

    /// `raw_id trainId` per line; `#` starts a comment. Ids not listed are ignored.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut table = [IGNORE_ID; 256];
        let mut seen = HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::data(path, format!("line {}: expected `raw_id trainId`, got {line:?}", n + 1));
            let mut it = line.split_whitespace();
            let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
                return Err(bad());
            };
            let raw: u8 = a.parse().map_err(|_| bad())?;
            let train: u8 = b.parse().map_err(|_| bad())?;
            if !seen.insert(raw) {
                return Err(Error::data(path, format!("line {}: raw id {raw} listed twice", n + 1)));
            }
            table[raw as usize] = train;
        }
        Ok(LabelMapping { table })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Map raw ids; a result that is neither a valid class nor the ignore id is
    /// reported as an unknown label id.
    pub fn apply(&self, raw: &[u8], num_classes: usize, path: &Path) -> Result<Vec<u8>> {
        raw.iter()
            .enumerate()
            .map(|(i, &r)| {
                let t = self.get(r);
                if t != IGNORE_ID && t as usize >= num_classes {
                    Err(Error::data(path, format!("unknown label id {r} at pixel {i} (maps to {t}, {num_classes} classes)")))
                } else {
                    Ok(t)
                }
            })
            .collect()
    }
}

// ---------------------------------------------------------------- datasets

/// Image/label pairs of one split under `<root>/<split>/{images,labels}`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetIndex {
    pub split: String,
    pub pairs: Vec<(PathBuf, PathBuf)>,
    pub num_classes: usize,
}

impl DatasetIndex {
    /// Index every `images/*.png` with a same-named file in `labels/`.
    pub fn open(root: &Path, split: &str, num_classes: usize) -> Result<Self> {
        let dir = root.join(split);
        let images = dir.join("images");
        let labels = dir.join("labels");
        let entries = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
        let mut pairs = Vec::new();
        for e in entries {
            let p = e.map_err(|e| Error::io(&images, e))?.path();
            if p.extension().is_some_and(|x| x == "png") {
                let l = labels.join(p.file_name().expect("listed file"));
                if !l.is_file() {
                    return Err(Error::data(&l, format!("missing label for {}", p.display())));
                }
                pairs.push((p, l));
            }
        }
        if pairs.is_empty() {
            return Err(Error::data(&images, "no PNG images found"));
        }
        pairs.sort();
        Ok(DatasetIndex { split: split.to_string(), pairs, num_classes })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn load(&self, i: usize, mapping: &LabelMapping, norm: Normalization) -> Result<Sample> {
        let (img, lbl) = &self.pairs[i];
        load_sample(img, lbl, mapping, self.num_classes, norm)
    }

    pub fn load_all(&self, mapping: &LabelMapping, norm: Normalization) -> Result<Vec<Sample>> {
        (0..self.len()).map(|i| self.load(i, mapping, norm)).collect()
    }
}

pub fn load_sample(image: &Path, label: &Path, mapping: &LabelMapping, num_classes: usize, norm: Normalization) -> Result<Sample> {
    let img = read_rgb(image)?;
    let ids = read_ids(label)?;
    if (img.h, img.w) != (ids.h, ids.w) {
        return Err(Error::data(label, format!("label is {}x{} but image {} is {}x{}", ids.h, ids.w, image.display(), img.h, img.w)));
    }
    let mapped = mapping.apply(&ids.data, num_classes, label)?;
    Sample::new(image_tensor(img.h, img.w, &img.data, norm)?, LabelMap::new(1, img.h, img.w, mapped)?)
}

// ---------------------------------------------------------------- weights

pub const WEIGHT_MAGIC: [u8; 4] = *b"FSCN";
pub const WEIGHT_VERSION: u32 = 1;

/// One named tensor of a weight file.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_weights(entries: &[WeightEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        out.extend_from_slice(e.name.as_bytes());
        out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
        for &d in &e.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &e.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], WeightError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(WeightError::Truncated(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, WeightError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_weights(bytes: &[u8]) -> Result<Vec<WeightEntry>, WeightError> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    let magic: [u8; 4] = c.take(4, "magic")?.try_into().expect("4 bytes");
    if magic != WEIGHT_MAGIC {
        return Err(WeightError::BadMagic(magic));
    }
    let version = c.u32("version")?;
    if version != WEIGHT_VERSION {
        return Err(WeightError::UnsupportedVersion(version));
    }
    let count = c.u32("tensor count")?;
    let mut names = HashSet::new();
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = c.u32("name length")? as usize;
        let name = std::str::from_utf8(c.take(len, "name")?).map_err(|_| WeightError::BadName)?.to_string();
        if !names.insert(name.clone()) {
            return Err(WeightError::DuplicateName(name));
        }
        let rank = c.u32("rank")? as usize;
        let dims = (0..rank).map(|_| c.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(WeightError::Truncated("payload"))?;
        let payload = c.take(numel.checked_mul(4).ok_or(WeightError::Truncated("payload"))?, "payload")?;
        let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
        entries.push(WeightEntry { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(WeightError::TrailingBytes(bytes.len() - c.pos));
    }
    Ok(entries)
}

/// Every registered tensor, running statistics included, in registry order.
pub fn store_entries(store: &ParamStore) -> Vec<WeightEntry> {
    store.iter().map(|(_, p)| WeightEntry { name: p.name().to_string(), dims: p.dims().to_vec(), data: p.value().data().to_vec() }).collect()
}

pub fn save_weights(store: &ParamStore, path: &Path) -> Result<()> {
    let bytes = encode_weights(&store_entries(store));
    write_atomic(path, |w| w.write_all(&bytes))
}

/// Which tensors a load may leave out or bring in extra.
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// File tensors under these prefixes are skipped when the store lacks them.
    pub skip_extra: Vec<String>,
}

/// Check every entry against the store, then apply all of them. On any error
/// the store is untouched.
pub fn apply_weights(store: &mut ParamStore, entries: Vec<WeightEntry>, opts: &LoadOptions) -> Result<(), WeightError> {
    let mut staged = BTreeMap::new();
    for e in entries {
        let Some(id) = store.find(&e.name) else {
            if opts.skip_extra.iter().any(|p| e.name.starts_with(p.as_str())) {
                continue;
            }
            return Err(WeightError::UnknownTensor(e.name));
        };
        let expected = store.get(id).dims().to_vec();
        if expected != e.dims {
            return Err(WeightError::ShapeMismatch { name: e.name, expected, found: e.dims });
        }
        staged.insert(id, e.data);
    }
    if let Some((_, p)) = store.iter().find(|(id, _)| !staged.contains_key(id)) {
        return Err(WeightError::MissingTensor(p.name().to_string()));
    }
    for (id, data) in staged {
        let shape = store.value(id).shape();
        store.set_value(id, Tensor::from_parts(shape, data)).expect("shape checked");
    }
    Ok(())
}

pub fn load_weights(store: &mut ParamStore, path: &Path, opts: &LoadOptions) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let entries = decode_weights(&bytes).map_err(|e| Error::data(path, e.to_string()))?;
    apply_weights(store, entries, opts).map_err(|e| Error::data(path, e.to_string()))
}

/// Decode a weight file, keeping the structured error.
pub fn read_weight_file(path: &Path) -> Result<Vec<WeightEntry>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode_weights(&bytes)?)
}

// ---------------------------------------------------------------- raw tensors

/// Little-endian f32 payload at `path`, text header at `path.hdr`:
/// `shape=NxCxHxW`, `dtype=f32le`, then any extra `key=value` lines.
pub fn write_raw_tensor(path: &Path, t: &Tensor, extra: &[(String, String)]) -> Result<()> {
    let s = t.shape();
    let mut header = format!("shape={}x{}x{}x{}\ndtype=f32le\n", s.n, s.c, s.h, s.w);
    for (k, v) in extra {
        header.push_str(&format!("{k}={v}\n"));
    }
    let payload: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, |w| w.write_all(&payload))?;
    write_atomic(&header_path(path), |w| w.write_all(header.as_bytes()))
}

pub fn header_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".hdr");
    PathBuf::from(p)
}

pub fn read_raw_tensor(path: &Path) -> Result<(Tensor, Vec<(String, String)>)> {
    let hdr = header_path(path);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let mut shape = None;
    let mut extra = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::data(&hdr, format!("bad header line {line:?}")))?;
        match k {
            "shape" => {
                let d: Vec<usize> =
                    v.split('x').map(str::parse).collect::<Result<_, _>>().map_err(|_| Error::data(&hdr, format!("bad shape {v:?}")))?;
                let [n, c, h, w] = d[..] else { return Err(Error::data(&hdr, format!("shape {v:?} must have 4 dims"))) };
                shape = Some(Shape::new(n, c, h, w));
            }
            "dtype" if v != "f32le" => return Err(Error::data(&hdr, format!("unsupported dtype {v}"))),
            "dtype" => {}
            _ => extra.push((k.to_string(), v.to_string())),
        }
    }
    let shape = shape.ok_or_else(|| Error::data(&hdr, "missing shape"))?;
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != shape.numel() * 4 {
        return Err(Error::data(path, format!("{} bytes, header shape {shape} needs {}", bytes.len(), shape.numel() * 4)));
    }
    let data = bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))).collect();
    Ok((Tensor::new(shape, data)?, extra))
}

// ---------------------------------------------------------------- synthetic data

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub h: usize,
    pub w: usize,
    pub n: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn toy() -> Self {
        SynthSpec { num_classes: 3, h: 128, w: 256, n: 4, seed: 0 }
    }
}

/// Base colour of a class in the synthetic images.
fn synth_color(class: usize) -> [u8; 3] {
    const BASE: [[u8; 3]; 8] =
        [[60, 60, 60], [220, 40, 40], [40, 200, 60], [50, 70, 220], [230, 210, 40], [200, 60, 210], [40, 210, 210], [240, 240, 240]];
    if class < BASE.len() {
        BASE[class]
    } else {
        [(class * 73 % 256) as u8, (class * 151 % 256) as u8, (class * 37 % 256) as u8]
    }
}

enum Shape2 {
    Rect { y0: i64, x0: i64, y1: i64, x1: i64 },
    Disc { cy: i64, cx: i64, r: i64 },
    Tri { cy: i64, cx: i64, r: i64 },
}

impl Shape2 {
    fn contains(&self, y: i64, x: i64) -> bool {
        match *self {
            Shape2::Rect { y0, x0, y1, x1 } => y >= y0 && y < y1 && x >= x0 && x < x1,
            Shape2::Disc { cy, cx, r } => (y - cy).pow(2) + (x - cx).pow(2) <= r * r,
            // apex up, base at cy + r
            Shape2::Tri { cy, cx, r } => y >= cy - r && y <= cy + r && (x - cx).abs() * 2 <= y - (cy - r),
        }
    }
}

/// Background of class 0 with one or more filled shapes of every other
/// class. Labels are exact: a pixel belongs to the last shape drawn over it.
pub fn synth_sample(spec: &SynthSpec, index: u64) -> (Vec<u8>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index);
    let (h, w) = (spec.h as i64, spec.w as i64);
    let mut shapes = Vec::new();
    let mut order: Vec<usize> = (1..spec.num_classes).collect();
    for _ in 0..2 {
        order.extend(1..spec.num_classes);
    }
    for class in order {
        let r = rng.random_range((h / 10).max(2)..=(h / 4).max(3));
        let cy = rng.random_range(r..(h - r).max(r + 1));
        let cx = rng.random_range(r..(w - r).max(r + 1));
        let shape = match rng.random_range(0..3) {
            0 => Shape2::Rect { y0: cy - r, x0: cx - r * 3 / 2, y1: cy + r, x1: cx + r * 3 / 2 },
            1 => Shape2::Disc { cy, cx, r },
            _ => Shape2::Tri { cy, cx, r },
        };
        shapes.push((class, shape));
    }
    let mut rgb = Vec::with_capacity(spec.h * spec.w * 3);
    let mut ids = Vec::with_capacity(spec.h * spec.w);
    for y in 0..h {
        for x in 0..w {
            let class = shapes.iter().rev().find(|(_, s)| s.contains(y, x)).map_or(0, |(c, _)| *c);
            ids.push(class as u8);
            for v in synth_color(class) {
                let jitter: i16 = rng.random_range(-12..=12);
                rgb.push((v as i16 + jitter).clamp(0, 255) as u8);
            }
        }
    }
    (rgb, ids)
}

/// Write `spec.n` synthetic pairs to `<root>/<split>/{images,labels}` and
/// index them.
pub fn synth_dataset(root: &Path, split: &str, spec: &SynthSpec) -> Result<DatasetIndex> {
    if spec.num_classes < 1 || spec.num_classes > 255 || spec.h < 8 || spec.w < 8 {
        return Err(Error::invalid(format!("synthetic spec {spec:?}: need 1..=255 classes and at least 8x8 pixels")));
    }
    let images = root.join(split).join("images");
    let labels = root.join(split).join("labels");
    for d in [&images, &labels] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut pairs = Vec::new();
    for i in 0..spec.n {
        let (rgb, ids) = synth_sample(spec, i as u64);
        let name = format!("{i:04}.png");
        let (ip, lp) = (images.join(&name), labels.join(&name));
        write_rgb(&ip, spec.w, spec.h, &rgb)?;
        write_gray(&lp, spec.w, spec.h, &ids)?;
        pairs.push((ip, lp));
    }
    Ok(DatasetIndex { split: split.to_string(), pairs, num_classes: spec.num_classes })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gray_normalizes_to_one_over_255() {
        let v = Normalization::Symmetric.apply(0, 128);
        assert!((v as f64 - (128.0 / 255.0 - 0.5) / 0.5).abs() < 1e-7);
        assert!((v - 0.003_921_6).abs() < 1e-6);
    }

    #[test]
    fn cityscapes_table() {
        let m = LabelMapping::cityscapes();
        assert_eq!(m.get(7), 0);
        assert_eq!(m.get(26), 13);
        assert_eq!(m.get(33), 18);
        assert_eq!(m.get(0), IGNORE_ID);
        assert_eq!(m.get(34), IGNORE_ID);
        assert_eq!(m.get(255), IGNORE_ID);
    }

    #[test]
    fn mapping_text() {
        let m = LabelMapping::parse("# raw train\n7 0\n8 1  # road\n", Path::new("t")).unwrap();
        assert_eq!((m.get(7), m.get(8), m.get(9)), (0, 1, IGNORE_ID));
        assert!(LabelMapping::parse("7\n", Path::new("t")).is_err());
        assert!(LabelMapping::parse("7 0\n7 1\n", Path::new("t")).is_err());
        assert!(LabelMapping::parse("300 0\n", Path::new("t")).is_err());
    }

    #[test]
    fn truncated_payload() {
        let e = WeightEntry { name: "a".into(), dims: vec![2], data: vec![1.0, 2.0] };
        let bytes = encode_weights(&[e]);
        assert_eq!(decode_weights(&bytes[..bytes.len() - 1]), Err(WeightError::Truncated("payload")));
        assert_eq!(decode_weights(b"FSCX"), Err(WeightError::BadMagic(*b"FSCX")));
    }
}
