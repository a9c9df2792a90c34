//! On-disk formats. All integers and floats are little-endian.
//!
//! | magic  | layout after the magic |
//! |--------|------------------------|
//! | `SIG1` | u32 version, u64 sample count, f64 sample rate, f32 samples |
//! | `SPC1` | u32 version, u32 rows, u32 cols, u32 class id, u8 flags, f32 values row-major |
//! | `SEG1` | u32 version, u32 rows, u32 cols, u32 segment count, u32 labels row-major |
//! | `EXP1` | u32 version, u32 rows, u32 cols, u32 target class, u32 segment count, packed mask rows, f32 coefficients |
//! | `MDL1` | u32 version, u64 architecture hash, u64 parameter count, f32 parameters |
//!
//! `SPC1` flags: bit 0 is the log-scaled flag; bits 4..8 hold the content
//! kind (0 spectrogram, 1 aggregated explanation, 2.. frequency profiles).
//! Profiles are stored with `rows = 1`. `EXP1` masks pack each row MSB-first
//! into `ceil(cols / 8)` bytes.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::AggregatedExplanation;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::limexp::{Explanation, LimeParams};
use crate::model::{Architecture, Cnn};
use crate::quickseg::SuperpixelMap;
use crate::spectro::{FrequencyProfile, ProfileKind, Spectrogram};

pub const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, vals: impl IntoIterator<Item = f32>) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in u32")))
}

/// Cursor over an in-memory file with format-aware errors.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn open(buf: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if buf.len() < 8 || &buf[..4] != magic {
            return Err(Error::Format(format!(
                "expected {} header",
                String::from_utf8_lossy(magic)
            )));
        }
        let mut r = Self { buf, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Writes `bytes` to `path`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::File::create(path)?.write_all(bytes)?;
    Ok(())
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    Ok(buf)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&read_bytes(path)?)?)
}

// --- SIG1 -------------------------------------------------------------------

pub fn encode_signal(samples: &[f32], sample_rate: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + samples.len() * 4);
    out.extend_from_slice(b"SIG1");
    put_u32(&mut out, VERSION);
    put_u64(&mut out, samples.len() as u64);
    out.extend_from_slice(&sample_rate.to_le_bytes());
    put_f32s(&mut out, samples.iter().copied());
    out
}

/// Returns `(samples, sample_rate)`.
pub fn decode_signal(buf: &[u8]) -> Result<(Vec<f32>, f64)> {
    let mut r = Reader::open(buf, b"SIG1")?;
    let n = r.u64()? as usize;
    let rate = r.f64()?;
    let samples = r.f32s(n)?;
    r.finish()?;
    Ok((samples, rate))
}

pub fn write_signal(path: &Path, samples: &[f32], sample_rate: f64) -> Result<()> {
    write_bytes(path, &encode_signal(samples, sample_rate))
}

pub fn read_signal(path: &Path) -> Result<(Vec<f32>, f64)> {
    decode_signal(&read_bytes(path)?)
}

// --- SPC1 -------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridKind {
    Spectrogram,
    Aggregate,
    Profile(ProfileKind),
}

impl GridKind {
    fn tag(self) -> u8 {
        match self {
            GridKind::Spectrogram => 0,
            GridKind::Aggregate => 1,
            GridKind::Profile(k) => k.tag(),
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(GridKind::Spectrogram),
            1 => Ok(GridKind::Aggregate),
            t => ProfileKind::from_tag(t)
                .map(GridKind::Profile)
                .ok_or_else(|| Error::Format(format!("unknown grid kind {t}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub grid: Grid,
    pub class_id: u32,
    pub log_scaled: bool,
    pub kind: GridKind,
}

pub fn encode_grid(file: &GridFile) -> Result<Vec<u8>> {
    let g = &file.grid;
    let mut out = Vec::with_capacity(21 + g.len() * 4);
    out.extend_from_slice(b"SPC1");
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(g.rows(), "rows")?);
    put_u32(&mut out, to_u32(g.cols(), "cols")?);
    put_u32(&mut out, file.class_id);
    out.push(u8::from(file.log_scaled) | (file.kind.tag() << 4));
    put_f32s(&mut out, g.as_slice().iter().copied());
    Ok(out)
}

pub fn decode_grid(buf: &[u8]) -> Result<GridFile> {
    let mut r = Reader::open(buf, b"SPC1")?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let class_id = r.u32()?;
    let flags = r.u8()?;
    if flags & 0x0e != 0 {
        return Err(Error::Format(format!("reserved flag bits set: {flags:#04x}")));
    }
    let values = r.f32s(rows * cols)?;
    r.finish()?;
    Ok(GridFile {
        grid: Grid::from_vec(rows, cols, values)?,
        class_id,
        log_scaled: flags & 1 == 1,
        kind: GridKind::from_tag(flags >> 4)?,
    })
}

impl GridFile {
    pub fn spectrogram(s: &Spectrogram) -> Self {
        Self {
            grid: s.values.clone(),
            class_id: s.class_id,
            log_scaled: s.log_scaled,
            kind: GridKind::Spectrogram,
        }
    }

    pub fn aggregate(a: &AggregatedExplanation) -> Self {
        Self {
            grid: a.values.clone(),
            class_id: a.class_id,
            log_scaled: false,
            kind: GridKind::Aggregate,
        }
    }

    pub fn profile(p: &FrequencyProfile, class_id: u32) -> Self {
        Self {
            grid: Grid::from_vec(1, p.bins(), p.values.iter().map(|&v| v as f32).collect())
                .expect("1 x n"),
            class_id,
            log_scaled: false,
            kind: GridKind::Profile(p.kind),
        }
    }
}

pub fn write_grid(path: &Path, file: &GridFile) -> Result<()> {
    write_bytes(path, &encode_grid(file)?)
}

pub fn read_grid(path: &Path) -> Result<GridFile> {
    decode_grid(&read_bytes(path)?)
}

// --- SEG1 -------------------------------------------------------------------

pub fn encode_segmentation(map: &SuperpixelMap) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(20 + map.labels().len() * 4);
    out.extend_from_slice(b"SEG1");
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(map.rows(), "rows")?);
    put_u32(&mut out, to_u32(map.cols(), "cols")?);
    put_u32(&mut out, to_u32(map.n_segments(), "segment count")?);
    for &l in map.labels() {
        put_u32(&mut out, l);
    }
    Ok(out)
}

pub fn decode_segmentation(buf: &[u8]) -> Result<SuperpixelMap> {
    let mut r = Reader::open(buf, b"SEG1")?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let n = r.u32()? as usize;
    let labels = r.u32s(rows * cols)?;
    r.finish()?;
    let map = SuperpixelMap::new(rows, cols, labels)?;
    if map.n_segments() != n {
        return Err(Error::Format(format!(
            "header says {n} segments, labels use {}",
            map.n_segments()
        )));
    }
    Ok(map)
}

pub fn write_segmentation(path: &Path, map: &SuperpixelMap) -> Result<()> {
    write_bytes(path, &encode_segmentation(map)?)
}

pub fn read_segmentation(path: &Path) -> Result<SuperpixelMap> {
    decode_segmentation(&read_bytes(path)?)
}

// --- EXP1 -------------------------------------------------------------------

/// JSON sidecar for an explanation file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationMeta {
    pub local_r2: f64,
    pub intercept: f64,
    pub top_segments: Vec<usize>,
    pub short_of_positive: bool,
    pub params: Option<LimeParams>,
}

pub fn encode_explanation(e: &Explanation) -> Result<Vec<u8>> {
    let row_bytes = e.cols.div_ceil(8);
    let mut out = Vec::with_capacity(24 + e.rows * row_bytes + e.superpixel_weights.len() * 4);
    out.extend_from_slice(b"EXP1");
    put_u32(&mut out, VERSION);
    put_u32(&mut out, to_u32(e.rows, "rows")?);
    put_u32(&mut out, to_u32(e.cols, "cols")?);
    put_u32(&mut out, e.target_class);
    put_u32(&mut out, to_u32(e.superpixel_weights.len(), "segment count")?);
    for row in e.mask.chunks(e.cols.max(1)) {
        let mut packed = vec![0u8; row_bytes];
        for (i, &b) in row.iter().enumerate() {
            if b {
                packed[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out.extend_from_slice(&packed);
    }
    put_f32s(&mut out, e.superpixel_weights.iter().map(|&w| w as f32));
    Ok(out)
}

/// Decodes an explanation; `meta` restores the fields only the sidecar
/// carries.
pub fn decode_explanation(buf: &[u8], meta: Option<&ExplanationMeta>) -> Result<Explanation> {
    let mut r = Reader::open(buf, b"EXP1")?;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let target_class = r.u32()?;
    let n_segments = r.u32()? as usize;
    let row_bytes = cols.div_ceil(8);
    let mut mask = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let packed = r.take(row_bytes)?;
        mask.extend((0..cols).map(|i| packed[i / 8] & (0x80 >> (i % 8)) != 0));
    }
    let weights = r.f32s(n_segments)?;
    r.finish()?;
    Ok(Explanation {
        rows,
        cols,
        mask,
        target_class,
        superpixel_weights: weights.into_iter().map(f64::from).collect(),
        intercept: meta.map_or(0.0, |m| m.intercept),
        top_segments: meta.map_or_else(Vec::new, |m| m.top_segments.clone()),
        local_r2: meta.map_or(f64::NAN, |m| m.local_r2),
        short_of_positive: meta.is_some_and(|m| m.short_of_positive),
    })
}

pub fn write_explanation(path: &Path, e: &Explanation, params: Option<&LimeParams>) -> Result<()> {
    write_bytes(path, &encode_explanation(e)?)?;
    let meta = ExplanationMeta {
        local_r2: e.local_r2,
        intercept: e.intercept,
        top_segments: e.top_segments.clone(),
        short_of_positive: e.short_of_positive,
        params: params.copied(),
    };
    write_json(&path.with_extension("json"), &meta)
}

pub fn read_explanation(path: &Path) -> Result<Explanation> {
    let sidecar = path.with_extension("json");
    let meta: Option<ExplanationMeta> = if sidecar.exists() { Some(read_json(&sidecar)?) } else { None };
    decode_explanation(&read_bytes(path)?, meta.as_ref())
}

// --- MDL1 -------------------------------------------------------------------

/// JSON sidecar describing a checkpoint's tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: Architecture,
    pub architecture_hash: String,
    pub n_params: usize,
    pub tensors: Vec<TensorMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl CheckpointMeta {
    pub fn describe(arch: &Architecture) -> Self {
        let mut offset = 0;
        let tensors = arch
            .tensor_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let t = TensorMeta { name, offset, shape };
                offset += t.shape.iter().product::<usize>();
                t
            })
            .collect();
        Self {
            architecture: arch.clone(),
            architecture_hash: format!("{:016x}", arch.hash()),
            n_params: offset,
            tensors,
        }
    }
}

pub fn encode_checkpoint(net: &Cnn<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + net.n_params() * 4);
    out.extend_from_slice(b"MDL1");
    put_u32(&mut out, VERSION);
    put_u64(&mut out, net.architecture().hash());
    put_u64(&mut out, net.n_params() as u64);
    put_f32s(&mut out, net.params().iter().copied());
    out
}

/// Rebuilds a network, checking the stored hash against `arch`.
pub fn decode_checkpoint(buf: &[u8], arch: Architecture) -> Result<Cnn<f32>> {
    let mut r = Reader::open(buf, b"MDL1")?;
    let hash = r.u64()?;
    if hash != arch.hash() {
        return Err(Error::Format(format!(
            "checkpoint architecture hash {hash:016x} does not match {:016x}",
            arch.hash()
        )));
    }
    let n = r.u64()? as usize;
    let params = r.f32s(n)?;
    r.finish()?;
    Cnn::from_params(arch, params)
}

/// Writes `<path>` and its JSON sidecar (same stem, `.json` extension).
pub fn write_checkpoint(path: &Path, net: &Cnn<f32>) -> Result<()> {
    write_bytes(path, &encode_checkpoint(net))?;
    write_json(&path.with_extension("json"), &CheckpointMeta::describe(net.architecture()))
}

pub fn read_checkpoint(path: &Path) -> Result<Cnn<f32>> {
    let meta: CheckpointMeta = read_json(&path.with_extension("json"))?;
    decode_checkpoint(&read_bytes(path)?, meta.architecture)
}

// --- CSV --------------------------------------------------------------------

/// `bin,freq_hz,value[,value_std]`, optionally scaled so the largest value
/// is 1 (the std column shares the scale).
pub fn profile_csv(profile: &FrequencyProfile, std: Option<&FrequencyProfile>, unit_max: bool) -> Result<String> {
    if let Some(s) = std {
        if s.bins() != profile.bins() {
            return Err(Error::shape(profile.bins(), s.bins()));
        }
    }
    let peak = profile.values.iter().copied().fold(0.0, f64::max);
    let scale = if unit_max && peak > 0.0 { 1.0 / peak } else { 1.0 };
    let mut out = String::from(if std.is_some() { "bin,freq_hz,value,value_std\n" } else { "bin,freq_hz,value\n" });
    for (i, v) in profile.values.iter().enumerate() {
        out.push_str(&format!("{i},{},{}", profile.freq_hz(i), v * scale));
        if let Some(s) = std {
            out.push_str(&format!(",{}", s.values[i] * scale));
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_profile_csv(
    path: &Path,
    profile: &FrequencyProfile,
    std: Option<&FrequencyProfile>,
    unit_max: bool,
) -> Result<()> {
    write_bytes(path, profile_csv(profile, std, unit_max)?.as_bytes())
}

/// Parses the `value` column of a profile CSV.
pub fn read_profile_csv(path: &Path, kind: ProfileKind) -> Result<FrequencyProfile> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?;
    if !header.starts_with("bin,freq_hz,value") {
        return Err(Error::Format(format!("unexpected CSV header {header:?}")));
    }
    let mut values = Vec::new();
    let mut freqs = Vec::new();
    for line in lines {
        let mut cols = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Format(format!("bad CSV row {line:?}")))
        };
        let _bin = parse(cols.next())?;
        freqs.push(parse(cols.next())?);
        values.push(parse(cols.next())?);
    }
    let bin_hz = if freqs.len() > 1 { freqs[1] - freqs[0] } else { 0.0 };
    Ok(FrequencyProfile::new(values, kind, bin_hz))
}

/// Reads from any reader into memory; used by callers that stream files.
pub fn read_all(mut r: impl Read) -> io::Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    Ok(buf)
}
