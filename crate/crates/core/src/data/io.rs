//! Text and binary cloud formats.
//!
//! Text: one point per line, whitespace separated. The column count picks
//! the layout: `x y z`, `x y z label`, `x y z r g b` or `x y z r g b label`.
//! `#` starts a comment; a `# num_classes: N` comment fixes the class count.
//!
//! Binary: `PCSB`, then little-endian `u32` version, point count, flags
//! (bit 0 colours, bit 1 labels) and class count, followed by `f32`
//! positions, `f32` colours and `u32` labels.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::PointCloud;
use crate::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"PCSB";
pub const BINARY_VERSION: u32 = 1;
const FLAG_COLORS: u32 = 1;
const FLAG_LABELS: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    Text,
    Binary,
}

impl CloudFormat {
    /// `.pcsb` and `.bin` are binary; everything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("pcsb") | Some("bin") => Self::Binary,
            _ => Self::Text,
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let file = fs::File::open(path)?;
    match format {
        CloudFormat::Text => read_text(BufReader::new(file)),
        CloudFormat::Binary => read_binary(BufReader::new(file)),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    match format {
        CloudFormat::Text => write_text(cloud, &mut out)?,
        CloudFormat::Binary => write_binary(cloud, &mut out)?,
    }
    out.flush()?;
    Ok(())
}

fn parse_field(tok: &str, line: usize) -> Result<f32> {
    tok.parse::<f32>().map_err(|_| Error::Parse { line, message: format!("`{tok}` is not a number") })
}

pub fn read_text<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut positions = Vec::new();
    let mut colors = Vec::new();
    let mut labels = Vec::new();
    let mut declared = None;
    let mut layout = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let (body, comment) = match line.split_once('#') {
            Some((b, c)) => (b, Some(c)),
            None => (line.as_str(), None),
        };
        if let Some(value) = comment.and_then(|c| c.trim().strip_prefix("num_classes:")) {
            let n = value
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Parse { line: lineno, message: format!("bad class count `{}`", value.trim()) })?;
            declared = Some(n);
        }
        let toks: Vec<&str> = body.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if !matches!(toks.len(), 3 | 4 | 6 | 7) {
            return Err(Error::Parse { line: lineno, message: format!("expected 3, 4, 6 or 7 columns, got {}", toks.len()) });
        }
        match layout {
            None => layout = Some(toks.len()),
            Some(cols) if cols != toks.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    message: format!("{} columns after earlier lines with {cols}", toks.len()),
                })
            }
            _ => {}
        }
        let mut v = [0.0f32; 6];
        let float_cols = if toks.len() >= 6 { 6 } else { 3 };
        for (slot, tok) in v.iter_mut().zip(&toks[..float_cols]) {
            *slot = parse_field(tok, lineno)?;
        }
        positions.push([v[0], v[1], v[2]]);
        if float_cols == 6 {
            colors.push([v[3], v[4], v[5]]);
        }
        if toks.len() == 4 || toks.len() == 7 {
            let tok = toks[toks.len() - 1];
            let label = tok
                .parse::<u32>()
                .map_err(|_| Error::Parse { line: lineno, message: format!("`{tok}` is not a class id") })?;
            labels.push(label);
        }
    }
    let cols = layout.ok_or_else(|| Error::EmptyInput("no points in file".into()))?;
    let colors = (cols >= 6).then(|| normalize_colors(colors));
    let labels = (cols == 4 || cols == 7).then_some(labels);
    let num_classes = match (declared, &labels) {
        (Some(n), _) => n,
        (None, Some(l)) => l.iter().max().map_or(0, |&m| m as usize + 1),
        (None, None) => 0,
    };
    PointCloud::new(positions, colors, labels, num_classes)
}

/// Colours above 1 are taken as 8-bit and rescaled.
fn normalize_colors(mut colors: Vec<[f32; 3]>) -> Vec<[f32; 3]> {
    if colors.iter().flatten().any(|&c| c > 1.0) {
        colors.iter_mut().flatten().for_each(|c| *c /= 255.0);
    }
    colors
}

/// Writes every float in shortest round-trip form.
pub fn write_text<W: Write>(cloud: &PointCloud, out: &mut W) -> Result<()> {
    writeln!(out, "# num_classes: {}", cloud.num_classes)?;
    for i in 0..cloud.len() {
        let p = cloud.positions[i];
        write!(out, "{} {} {}", p[0], p[1], p[2])?;
        if let Some(c) = &cloud.colors {
            write!(out, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
        }
        if let Some(l) = &cloud.labels {
            write!(out, " {}", l[i])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn write_binary<W: Write>(cloud: &PointCloud, out: &mut W) -> Result<()> {
    let flags = if cloud.colors.is_some() { FLAG_COLORS } else { 0 } | if cloud.labels.is_some() { FLAG_LABELS } else { 0 };
    out.write_all(BINARY_MAGIC)?;
    for v in [BINARY_VERSION, cloud.len() as u32, flags, cloud.num_classes as u32] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in cloud.positions.iter().flatten() {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in cloud.colors.iter().flatten().flatten() {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in cloud.labels.iter().flatten() {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("truncated binary cloud".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f32>> {
    (0..count).map(|_| read_u32(r).map(f32::from_bits)).collect()
}

fn triples(v: Vec<f32>) -> Vec<[f32; 3]> {
    v.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

pub fn read_binary<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Format("truncated binary cloud".into()))?;
    if &magic != BINARY_MAGIC {
        return Err(Error::Format("missing PCSB magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != BINARY_VERSION {
        return Err(Error::Incompatible { found: version, expected: BINARY_VERSION });
    }
    let n = read_u32(&mut r)? as usize;
    let flags = read_u32(&mut r)?;
    if flags & !(FLAG_COLORS | FLAG_LABELS) != 0 {
        return Err(Error::Format(format!("unknown attribute flags {flags:#x}")));
    }
    let num_classes = read_u32(&mut r)? as usize;
    let positions = triples(read_f32s(&mut r, 3 * n)?);
    let colors = (flags & FLAG_COLORS != 0).then(|| read_f32s(&mut r, 3 * n).map(triples)).transpose()?;
    let labels = (flags & FLAG_LABELS != 0).then(|| (0..n).map(|_| read_u32(&mut r)).collect()).transpose()?;
    PointCloud::new(positions, colors, labels, num_classes)
}
