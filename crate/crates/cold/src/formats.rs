//! On-disk formats: encodings and points (binary or CSV), persisted HNSW
//! indexes, grayscale images (PGM or CSV matrix), and JSON model weights.
//!
//! Binary files are little-endian. Encodings and points share a layout
//! (`magic, u32 N, u32 D, records`) with distinct magics so one cannot be
//! mistaken for the other.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use cold_core::knn_index::{HnswParams, KnnError, KnnIndex};
use cold_core::linalg::Matrix;
use cold_core::model::{Activation, Layer, MlpPredictor};
use cold_core::objectives::{ImageGray, DEFAULT_MAX_INTENSITY};
use cold_core::pipeline::{Decoder, PluginError};
use serde::{Deserialize, Serialize};

pub const ENCODINGS_MAGIC: &[u8; 8] = b"COLDENC1";
pub const POINTS_MAGIC: &[u8; 8] = b"COLDPTS1";
pub const INDEX_MAGIC: &[u8; 8] = b"COLDHNSW";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

impl FormatError {
    fn invalid(path: &Path, message: impl Into<String>) -> Self {
        FormatError::Invalid {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// 17 significant digits: enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

fn read(path: &Path) -> Result<Vec<u8>, FormatError> {
    fs::read(path).map_err(|e| FormatError::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    fs::write(path, bytes).map_err(|e| FormatError::io(path, e))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| FormatError::invalid(self.path, "truncated file"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn finish(&self) -> Result<(), FormatError> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(FormatError::invalid(self.path, "trailing bytes after last record"))
        }
    }
}

/// Per-datapoint encoding distributions `(mu, var)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Encodings {
    pub dim: usize,
    pub components: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Encodings {
    pub fn means_flat(&self) -> Vec<f64> {
        self.components.iter().flat_map(|(m, _)| m.iter().copied()).collect()
    }
}

fn check_magic(path: &Path, bytes: &[u8], want: &[u8; 8]) -> Result<(), FormatError> {
    let known: [(&[u8; 8], &str); 3] = [
        (ENCODINGS_MAGIC, "an encodings file"),
        (POINTS_MAGIC, "a points file"),
        (INDEX_MAGIC, "an index file"),
    ];
    let head = bytes.get(..8).unwrap_or(bytes);
    if head == want {
        return Ok(());
    }
    let expected = known.iter().find(|(m, _)| *m == want).map_or("?", |k| k.1);
    match known.iter().find(|(m, _)| *m == head) {
        Some((_, what)) => Err(FormatError::invalid(path, format!("expected {expected}, found {what}"))),
        None => Err(FormatError::invalid(path, format!("bad magic, expected {expected}"))),
    }
}

fn looks_binary(bytes: &[u8]) -> bool {
    bytes.len() >= 8 && bytes[..4] == *b"COLD"
}

fn read_records(path: &Path, bytes: &[u8], magic: &[u8; 8], per_record: usize) -> Result<(usize, Vec<f64>), FormatError> {
    check_magic(path, bytes, magic)?;
    let mut c = Cursor::new(path, bytes);
    c.take(8)?;
    let n = c.u32()? as usize;
    let d = c.u32()? as usize;
    if d == 0 {
        return Err(FormatError::invalid(path, "dimension is zero"));
    }
    let want = n
        .checked_mul(per_record * d)
        .and_then(|v| v.checked_mul(8))
        .ok_or_else(|| FormatError::invalid(path, "record count overflows"))?;
    if bytes.len() - 16 != want {
        return Err(FormatError::invalid(
            path,
            format!("expected {want} bytes of records for N = {n}, D = {d}, found {}", bytes.len() - 16),
        ));
    }
    let mut values = Vec::with_capacity(n * per_record * d);
    for _ in 0..n * per_record * d {
        values.push(c.f64()?);
    }
    c.finish()?;
    Ok((d, values))
}

fn write_records(path: &Path, magic: &[u8; 8], n: usize, d: usize, values: impl Iterator<Item = f64>) -> Result<(), FormatError> {
    let n32 = u32::try_from(n).map_err(|_| FormatError::invalid(path, "too many records"))?;
    let d32 = u32::try_from(d).map_err(|_| FormatError::invalid(path, "dimension too large"))?;
    let mut out = Vec::with_capacity(16 + n * d * 16);
    out.extend_from_slice(magic);
    out.extend_from_slice(&n32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    write(path, &out)
}

type CsvRows = (Option<Vec<String>>, Vec<Vec<f64>>);

fn parse_csv_rows(path: &Path, bytes: &[u8], has_header: bool) -> Result<CsvRows, FormatError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let header = if has_header {
        let h = rdr.headers().map_err(|e| FormatError::invalid(path, e.to_string()))?;
        Some(h.iter().map(str::to_owned).collect())
    } else {
        None
    };
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FormatError::invalid(path, e.to_string()))?;
        let row = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FormatError::invalid(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads a binary (`COLDENC1`) or CSV encodings file; the format is chosen
/// by content.
pub fn read_encodings(path: &Path) -> Result<Encodings, FormatError> {
    let bytes = read(path)?;
    if looks_binary(&bytes) {
        let (d, values) = read_records(path, &bytes, ENCODINGS_MAGIC, 2)?;
        let components = values
            .chunks_exact(2 * d)
            .map(|r| (r[..d].to_vec(), r[d..].to_vec()))
            .collect();
        return Ok(Encodings { dim: d, components });
    }
    let (header, rows) = parse_csv_rows(path, &bytes, true)?;
    let header = header.unwrap_or_default();
    if header.is_empty() || header.len() % 2 != 0 {
        return Err(FormatError::invalid(path, "header must be mu_0..mu_{D-1},var_0..var_{D-1}"));
    }
    let d = header.len() / 2;
    let expected: Vec<String> = (0..d).map(|i| format!("mu_{i}")).chain((0..d).map(|i| format!("var_{i}"))).collect();
    if header != expected {
        return Err(FormatError::invalid(path, "header must be mu_0..mu_{D-1},var_0..var_{D-1}"));
    }
    let components = rows.into_iter().map(|r| (r[..d].to_vec(), r[d..].to_vec())).collect();
    Ok(Encodings { dim: d, components })
}

pub fn write_encodings(path: &Path, enc: &Encodings) -> Result<(), FormatError> {
    write_records(
        path,
        ENCODINGS_MAGIC,
        enc.components.len(),
        enc.dim,
        enc.components.iter().flat_map(|(m, v)| m.iter().chain(v).copied()),
    )
}

pub fn write_encodings_csv(path: &Path, enc: &Encodings) -> Result<(), FormatError> {
    let mut out = String::new();
    let header: Vec<String> = (0..enc.dim)
        .map(|i| format!("mu_{i}"))
        .chain((0..enc.dim).map(|i| format!("var_{i}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for (m, v) in &enc.components {
        let row: Vec<String> = m.iter().chain(v).map(|&x| fmt_f64(x)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    write(path, out.as_bytes())
}

/// Reads a binary (`COLDPTS1`) or CSV points file. CSV files need a header
/// row; its names are ignored.
pub fn read_points(path: &Path) -> Result<Vec<Vec<f64>>, FormatError> {
    let bytes = read(path)?;
    if looks_binary(&bytes) {
        let (d, values) = read_records(path, &bytes, POINTS_MAGIC, 1)?;
        return Ok(values.chunks_exact(d).map(<[f64]>::to_vec).collect());
    }
    let (header, rows) = parse_csv_rows(path, &bytes, true)?;
    if header.is_none_or(|h| h.is_empty()) {
        return Err(FormatError::invalid(path, "empty header"));
    }
    Ok(rows)
}

pub fn write_points(path: &Path, points: &[Vec<f64>]) -> Result<(), FormatError> {
    let d = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != d) {
        return Err(FormatError::invalid(path, "points have mixed dimensions"));
    }
    write_records(path, POINTS_MAGIC, points.len(), d, points.iter().flatten().copied())
}

/// Persists the graph of an index; the points themselves are not stored.
pub fn write_index(path: &Path, index: &KnnIndex) -> Result<(), FormatError> {
    let mut out = Vec::new();
    let p = index.params();
    out.extend_from_slice(INDEX_MAGIC);
    for v in [INDEX_VERSION, p.m as u32, p.ef_construction as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&p.seed.to_le_bytes());
    out.extend_from_slice(&index.checksum().to_le_bytes());
    for v in [index.len(), index.dim(), index.entry_point()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for node in index.links() {
        out.extend_from_slice(&(node.len() as u32).to_le_bytes());
        for layer in node {
            out.extend_from_slice(&(layer.len() as u32).to_le_bytes());
            for &id in layer {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
    }
    write(path, &out)
}

#[derive(Debug, thiserror::Error)]
pub enum IndexLoadError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Knn {
        path: PathBuf,
        #[source]
        source: KnnError,
    },
}

/// Loads an index and binds it to `means`; fails on a checksum mismatch.
pub fn read_index(path: &Path, means: &[f64], dim: usize) -> Result<KnnIndex, IndexLoadError> {
    let bytes = read(path)?;
    check_magic(path, &bytes, INDEX_MAGIC)?;
    let mut c = Cursor::new(path, &bytes);
    c.take(8)?;
    if c.u32()? != INDEX_VERSION {
        return Err(FormatError::invalid(path, "unsupported index version").into());
    }
    let m = c.u32()? as usize;
    let ef_construction = c.u32()? as usize;
    let seed = c.u64()?;
    let checksum = c.u64()?;
    let n = c.u32()? as usize;
    let stored_dim = c.u32()? as usize;
    let entry = c.u32()?;
    if stored_dim != dim {
        return Err(FormatError::invalid(path, format!("index dimension {stored_dim}, encodings dimension {dim}")).into());
    }
    if bytes.len() < 44 + 4 * n {
        return Err(FormatError::invalid(path, "truncated file").into());
    }
    let mut links = Vec::with_capacity(n);
    for _ in 0..n {
        let layers = c.u32()? as usize;
        if layers > 64 {
            return Err(FormatError::invalid(path, "implausible layer count").into());
        }
        let mut node = Vec::with_capacity(layers);
        for _ in 0..layers {
            let count = c.u32()? as usize;
            let raw = c.take(count.checked_mul(4).ok_or_else(|| FormatError::invalid(path, "truncated file"))?)?;
            node.push(raw.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes"))).collect());
        }
        links.push(node);
    }
    c.finish()?;
    let params = HnswParams { m, ef_construction, seed };
    KnnIndex::from_parts(means, dim, params, links, entry, checksum).map_err(|source| IndexLoadError::Knn {
        path: path.to_path_buf(),
        source,
    })
}

fn pgm_tokens<'a>(path: &Path, bytes: &'a [u8], count: usize) -> Result<(Vec<&'a [u8]>, usize), FormatError> {
    let mut tokens = Vec::with_capacity(count);
    let mut i = 0;
    while tokens.len() < count {
        while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
            if bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                i += 1;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'#' {
            i += 1;
        }
        if start == i {
            return Err(FormatError::invalid(path, "truncated PGM header"));
        }
        tokens.push(&bytes[start..i]);
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() || !bytes[i].is_ascii_whitespace() {
        return Err(FormatError::invalid(path, "missing raster"));
    }
    Ok((tokens, i + 1))
}

/// Parses a binary PGM (P5). The image must be square; the maximum
/// intensity is the file's maxval.
pub fn parse_pgm(path: &Path, bytes: &[u8]) -> Result<ImageGray, FormatError> {
    let (tok, raster_start) = pgm_tokens(path, bytes, 4)?;
    if tok[0] != b"P5" {
        return Err(FormatError::invalid(path, "not a binary PGM (P5)"));
    }
    let num = |t: &[u8], what: &str| -> Result<usize, FormatError> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| FormatError::invalid(path, format!("bad PGM {what}")))
    };
    let (w, h, maxval) = (num(tok[1], "width")?, num(tok[2], "height")?, num(tok[3], "maxval")?);
    if w != h {
        return Err(FormatError::invalid(path, format!("image is {w}×{h}, must be square")));
    }
    if !(1..=65535).contains(&maxval) {
        return Err(FormatError::invalid(path, "maxval outside 1..=65535"));
    }
    let bpp = if maxval < 256 { 1 } else { 2 };
    let raster = &bytes[raster_start..];
    if raster.len() != w * h * bpp {
        return Err(FormatError::invalid(path, format!("raster has {} bytes, expected {}", raster.len(), w * h * bpp)));
    }
    let pixels: Vec<f64> = if bpp == 1 {
        raster.iter().map(|&b| f64::from(b)).collect()
    } else {
        raster.chunks_exact(2).map(|b| f64::from(u16::from_be_bytes([b[0], b[1]]))).collect()
    };
    ImageGray::new(w, maxval as f64, pixels).map_err(|e| FormatError::invalid(path, e.to_string()))
}

/// Writes a P5 PGM, rounding intensities to integers.
pub fn write_pgm(path: &Path, img: &ImageGray) -> Result<(), FormatError> {
    let maxval = img.max_intensity().round();
    if !(1.0..=65535.0).contains(&maxval) {
        return Err(FormatError::invalid(path, "maximum intensity not representable in PGM"));
    }
    let mut out = Vec::new();
    write!(out, "P5\n{} {}\n{}\n", img.side(), img.side(), maxval as u32).expect("write to vec");
    for &p in img.pixels() {
        let v = p.round().clamp(0.0, maxval) as u16;
        if maxval < 256.0 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    write(path, &out)
}

/// Square CSV matrix without header, intensities in `[0, 255]`.
pub fn parse_image_csv(path: &Path, bytes: &[u8]) -> Result<ImageGray, FormatError> {
    let (_, rows) = parse_csv_rows(path, bytes, false)?;
    let h = rows.len();
    if rows.iter().any(|r| r.len() != h) {
        return Err(FormatError::invalid(path, "CSV image must be a square matrix"));
    }
    ImageGray::new(h, DEFAULT_MAX_INTENSITY, rows.concat()).map_err(|e| FormatError::invalid(path, e.to_string()))
}

/// Reads a PGM, or a CSV matrix when the extension is `.csv`.
pub fn read_image(path: &Path) -> Result<ImageGray, FormatError> {
    let bytes = read(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    if is_csv {
        parse_image_csv(path, &bytes)
    } else {
        parse_pgm(path, &bytes)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
    act: Activation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictorFile {
    layers: Vec<LayerFile>,
}

fn json_err(path: &Path, e: impl std::fmt::Display) -> FormatError {
    FormatError::invalid(path, e.to_string())
}

fn matrix(path: &Path, rows: &[Vec<f64>]) -> Result<Matrix, FormatError> {
    if rows.is_empty() {
        return Err(FormatError::invalid(path, "empty weight matrix"));
    }
    Matrix::from_rows(rows).ok_or_else(|| FormatError::invalid(path, "ragged weight matrix"))
}

/// `{"layers": [{"w": [[...]], "b": [...], "act": "relu"}, ...]}`.
pub fn read_predictor(path: &Path) -> Result<MlpPredictor, FormatError> {
    let file: PredictorFile = serde_json::from_slice(&read(path)?).map_err(|e| json_err(path, e))?;
    let layers = file
        .layers
        .iter()
        .map(|l| {
            Ok(Layer {
                weight: matrix(path, &l.w)?,
                bias: l.b.clone(),
                activation: l.act,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    MlpPredictor::new(layers).map_err(|e| json_err(path, e))
}

pub fn write_predictor(path: &Path, p: &MlpPredictor) -> Result<(), FormatError> {
    let file = PredictorFile {
        layers: p
            .layers()
            .iter()
            .map(|l| LayerFile {
                w: l.weight.to_rows(),
                b: l.bias.clone(),
                act: l.activation,
            })
            .collect(),
    };
    write(path, &serde_json::to_vec_pretty(&file).expect("serialisable"))
}

/// Affine decoder `x = W z + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDecoder {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Decoder for LinearDecoder {
    fn decode(&self, z: &[f64]) -> Result<Vec<f64>, PluginError> {
        if z.len() != self.weight.cols() {
            return Err(PluginError::new("latent dimension does not match decoder"));
        }
        let mut x = self.weight.mul_vec(z);
        for (v, b) in x.iter_mut().zip(&self.bias) {
            *v += b;
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(PluginError::new("non-finite decoder output"))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecoderFile {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

/// `{"w": [[...]], "b": [...]}` with `w` of shape data × latent.
pub fn read_linear_decoder(path: &Path) -> Result<LinearDecoder, FormatError> {
    let file: DecoderFile = serde_json::from_slice(&read(path)?).map_err(|e| json_err(path, e))?;
    let weight = matrix(path, &file.w)?;
    if file.b.len() != weight.rows() {
        return Err(FormatError::invalid(path, "bias length differs from weight rows"));
    }
    if !weight.as_slice().iter().chain(&file.b).all(|v| v.is_finite()) {
        return Err(FormatError::invalid(path, "non-finite decoder weights"));
    }
    Ok(LinearDecoder { weight, bias: file.b })
}

pub fn write_linear_decoder(path: &Path, d: &LinearDecoder) -> Result<(), FormatError> {
    let file = DecoderFile {
        w: d.weight.to_rows(),
        b: d.bias.clone(),
    };
    write(path, &serde_json::to_vec_pretty(&file).expect("serialisable"))
}
