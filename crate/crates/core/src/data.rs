//! Datasets, file loading, and the image preprocessing pipeline
//! (YCoCg colour transform, 256-bin quantization, patch extraction).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::circuit::{Circuit, VarKind};
use crate::error::{Error, Result};

/// One cell of a sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Cat(u32),
    Real(f64),
}

/// Row-major sample matrix with per-column variable kinds.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    vars: Vec<VarKind>,
    rows: usize,
    cells: Vec<Value>,
}

impl Dataset {
    pub fn new(vars: Vec<VarKind>, rows: Vec<Vec<Value>>) -> Result<Self> {
        let mut cells = Vec::with_capacity(rows.len() * vars.len());
        for (r, row) in rows.iter().enumerate() {
            if row.len() != vars.len() {
                return Err(Error::Data(format!("row {r} has {} cells, expected {}", row.len(), vars.len())));
            }
            for (c, v) in row.iter().enumerate() {
                check_cell(&vars[c], v).map_err(|reason| Error::DataCell { row: r, col: c, reason })?;
            }
            cells.extend_from_slice(row);
        }
        Ok(Dataset { vars, rows: rows.len(), cells })
    }

    /// All-categorical dataset from integer rows.
    pub fn categorical(cards: &[u32], rows: &[Vec<u32>]) -> Result<Self> {
        let vars = cards.iter().map(|&k| VarKind::Categorical(k)).collect();
        Self::new(vars, rows.iter().map(|r| r.iter().map(|&v| Value::Cat(v)).collect()).collect())
    }

    pub(crate) fn from_cells(vars: Vec<VarKind>, cells: Vec<Value>) -> Self {
        let rows = if vars.is_empty() { 0 } else { cells.len() / vars.len() };
        Dataset { vars, rows, cells }
    }

    pub fn vars(&self) -> &[VarKind] {
        &self.vars
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[Value] {
        let w = self.vars.len();
        &self.cells[i * w..(i + 1) * w]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[Value]> + Clone + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    /// Rows at the given indices, in order.
    pub fn select(&self, indices: &[usize]) -> Vec<&[Value]> {
        indices.iter().map(|&i| self.row(i)).collect()
    }

    /// Splits into the first `at` rows and the rest.
    pub fn split_at(&self, at: usize) -> (Dataset, Dataset) {
        let at = at.min(self.rows);
        let w = self.vars.len();
        let (a, b) = self.cells.split_at(at * w);
        (
            Dataset { vars: self.vars.clone(), rows: at, cells: a.to_vec() },
            Dataset { vars: self.vars.clone(), rows: self.rows - at, cells: b.to_vec() },
        )
    }

    /// Checks that columns match the circuit's variables.
    pub fn check_against(&self, circuit: &Circuit) -> Result<()> {
        if self.vars.len() != circuit.num_vars() {
            return Err(Error::Data(format!(
                "dataset has {} columns, circuit has {} variables",
                self.vars.len(),
                circuit.num_vars()
            )));
        }
        for (k, (a, b)) in self.vars.iter().zip(circuit.vars()).enumerate() {
            let compatible = match (a, b) {
                (VarKind::Continuous, VarKind::Continuous) => true,
                (VarKind::Categorical(x), VarKind::Categorical(y)) => x <= y,
                _ => false,
            };
            if !compatible {
                return Err(Error::Data(format!("column {k} is {a:?} but circuit variable is {b:?}")));
            }
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self
            .vars
            .iter()
            .map(|v| match v {
                VarKind::Categorical(k) => format!("card:{k}"),
                VarKind::Continuous => "cont".to_string(),
            })
            .collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.rows() {
            let cells: Vec<String> = row
                .iter()
                .map(|v| match v {
                    Value::Cat(k) => k.to_string(),
                    Value::Real(x) => format!("{x:?}"),
                })
                .collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Encodes as the `PCD1` raw byte format. Requires one shared cardinality <= 256.
    pub fn to_raw(&self) -> Result<Vec<u8>> {
        let card = match self.vars.first() {
            Some(VarKind::Categorical(k)) => *k,
            Some(VarKind::Continuous) => return Err(Error::Data("raw format is categorical only".into())),
            None => return Err(Error::Data("dataset has no columns".into())),
        };
        if card > 256 || self.vars.iter().any(|v| *v != VarKind::Categorical(card)) {
            return Err(Error::Data("raw format needs one cardinality <= 256 for all columns".into()));
        }
        let mut out = Vec::with_capacity(16 + self.cells.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.vars.len() as u32).to_le_bytes());
        out.extend_from_slice(&card.to_le_bytes());
        for v in &self.cells {
            match v {
                Value::Cat(k) => out.push(*k as u8),
                Value::Real(_) => unreachable!("checked categorical"),
            }
        }
        Ok(out)
    }
}

fn check_cell(kind: &VarKind, v: &Value) -> std::result::Result<(), String> {
    match (kind, v) {
        (VarKind::Categorical(card), Value::Cat(k)) if k < card => Ok(()),
        (VarKind::Categorical(card), Value::Cat(k)) => {
            Err(format!("value {k} out of range for cardinality {card}"))
        }
        (VarKind::Continuous, Value::Real(x)) if x.is_finite() => Ok(()),
        (VarKind::Continuous, Value::Real(x)) => Err(format!("non-finite value {x}")),
        (VarKind::Categorical(_), Value::Real(_)) => Err("real value in categorical column".into()),
        (VarKind::Continuous, Value::Cat(_)) => Err("category in continuous column".into()),
    }
}

const RAW_MAGIC: &[u8; 4] = b"PCD1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataFormat {
    /// Header `card:<k>|cont` per column, then one sample per line.
    Csv,
    /// `PCD1`, rows, cols, cardinality as little-endian u32, then one byte per cell.
    Raw,
}

impl DataFormat {
    /// Raw if the file starts with the `PCD1` magic, CSV otherwise.
    pub fn detect(bytes: &[u8]) -> Self {
        if bytes.starts_with(RAW_MAGIC) {
            DataFormat::Raw
        } else {
            DataFormat::Csv
        }
    }
}

pub fn load_dataset(path: impl AsRef<Path>, format: Option<DataFormat>) -> Result<Dataset> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format.unwrap_or_else(|| DataFormat::detect(&bytes)) {
        DataFormat::Raw => parse_raw(&bytes),
        DataFormat::Csv => {
            let text = std::str::from_utf8(&bytes).map_err(|_| Error::Data("CSV is not valid UTF-8".into()))?;
            parse_csv(text)
        }
    }
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset, format: DataFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        DataFormat::Csv => data.to_csv().into_bytes(),
        DataFormat::Raw => data.to_raw()?,
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn parse_csv(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Data("missing header".into()))?;
    let vars = header
        .split(',')
        .map(|h| {
            let h = h.trim();
            if h == "cont" {
                Ok(VarKind::Continuous)
            } else if let Some(k) = h.strip_prefix("card:") {
                k.trim()
                    .parse::<u32>()
                    .ok()
                    .filter(|&k| k > 0)
                    .map(VarKind::Categorical)
                    .ok_or_else(|| Error::Data(format!("malformed header field `{h}`")))
            } else {
                Err(Error::Data(format!("malformed header field `{h}`")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    let mut rows = 0;
    for (r, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != vars.len() {
            return Err(Error::Data(format!("row {r} has {} cells, expected {}", fields.len(), vars.len())));
        }
        for (c, (f, kind)) in fields.iter().zip(&vars).enumerate() {
            let v = match kind {
                VarKind::Categorical(_) => f.parse::<u32>().map(Value::Cat).ok(),
                VarKind::Continuous => f.parse::<f64>().map(Value::Real).ok(),
            }
            .ok_or_else(|| Error::DataCell { row: r, col: c, reason: format!("cannot parse `{f}`") })?;
            check_cell(kind, &v).map_err(|reason| Error::DataCell { row: r, col: c, reason })?;
            cells.push(v);
        }
        rows += 1;
    }
    Ok(Dataset { vars, rows, cells })
}

pub fn parse_raw(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
        return Err(Error::Data("missing PCD1 header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let (rows, cols, card) = (word(4), word(8), word(12));
    if card == 0 || card > 256 {
        return Err(Error::Data(format!("cardinality {card} not in 1..=256")));
    }
    let body = &bytes[16..];
    if body.len() != rows * cols {
        return Err(Error::Data(format!("expected {} cells, found {}", rows * cols, body.len())));
    }
    let mut cells = Vec::with_capacity(body.len());
    for (k, &b) in body.iter().enumerate() {
        if b as usize >= card {
            return Err(Error::DataCell {
                row: k / cols,
                col: k % cols,
                reason: format!("value {b} out of range for cardinality {card}"),
            });
        }
        cells.push(Value::Cat(b as u32));
    }
    Ok(Dataset { vars: vec![VarKind::Categorical(card as u32); cols], rows, cells })
}

/// Sign convention for the luma offset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum YccMode {
    /// `y = 2*tmp + cg - 1`, which keeps `y` in `[-1, 1]`.
    #[default]
    Centered,
    /// `y = 2*tmp + cg + 1`, literal offset; `y` lands in `[1, 3]` and saturates the quantizer.
    LiteralOffset,
}

/// Unquantized `(y, co, cg)` for 8-bit RGB.
pub fn ycc_continuous(r: u8, g: u8, b: u8, mode: YccMode) -> [f64; 3] {
    let (r, g, b) = (r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0);
    let co = r - b;
    let tmp = b + co / 2.0;
    let cg = g - tmp;
    let offset = match mode {
        YccMode::Centered => -1.0,
        YccMode::LiteralOffset => 1.0,
    };
    [tmp * 2.0 + cg + offset, co, cg]
}

/// Inverse of [`ycc_continuous`] in `Centered` mode, returning `(r, g, b)` in `[0, 1]`.
pub fn ycc_inverse(y: f64, co: f64, cg: f64) -> [f64; 3] {
    let tmp = (y + 1.0 - cg) / 2.0;
    let g = cg + tmp;
    let b = tmp - co / 2.0;
    let r = co + b;
    [r, g, b]
}

/// Maps `[-1, 1]` onto 256 uniform bins; `1.0` lands in bin 255.
pub fn quantize(v: f64) -> u8 {
    ((v + 1.0) / 2.0 * 256.0).floor().clamp(0.0, 255.0) as u8
}

pub fn ycc_transform(r: u8, g: u8, b: u8, mode: YccMode) -> [u8; 3] {
    ycc_continuous(r, g, b, mode).map(quantize)
}

/// `count` images of `height x width` RGB pixels, row-major, channel innermost.
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl ImageBatch {
    pub fn new(count: usize, height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != count * height * width * 3 {
            return Err(Error::Data(format!(
                "expected {} bytes for {count} images of {height}x{width}x3, found {}",
                count * height * width * 3,
                pixels.len()
            )));
        }
        Ok(ImageBatch { count, height, width, pixels })
    }
}

/// Cuts each image into `patch x patch` tiles and encodes each tile as one
/// row of `patch * patch * 3` categorical variables with 256 categories.
///
/// Tiles are emitted row-major over the tile grid; within a tile pixels are
/// row-major and each pixel contributes `(Y, Co, Cg)` consecutively.
pub fn patchify(images: &ImageBatch, patch: usize, mode: YccMode) -> Result<Dataset> {
    if patch == 0 || !images.height.is_multiple_of(patch) || !images.width.is_multiple_of(patch) {
        return Err(Error::Data(format!(
            "image size {}x{} is not divisible by patch size {patch}",
            images.height, images.width
        )));
    }
    let cols = patch * patch * 3;
    let (h, w) = (images.height, images.width);
    let mut cells = Vec::with_capacity(images.pixels.len());
    for img in 0..images.count {
        let base = img * h * w * 3;
        for ty in 0..h / patch {
            for tx in 0..w / patch {
                for py in 0..patch {
                    for px in 0..patch {
                        let (y, x) = (ty * patch + py, tx * patch + px);
                        let o = base + (y * w + x) * 3;
                        let p = &images.pixels[o..o + 3];
                        for v in ycc_transform(p[0], p[1], p[2], mode) {
                            cells.push(Value::Cat(v as u32));
                        }
                    }
                }
            }
        }
    }
    Ok(Dataset::from_cells(vec![VarKind::Categorical(256); cols], cells))
}
