//! On-disk formats used by the CLI: a small binary cube container,
//! headerless CSV matrices, 8-bit PGM images, and `key=value` manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::SpectralCube;

const CUBE_MAGIC: &[u8; 4] = b"HSIB";
const CUBE_VERSION: u32 = 1;

/// Writes a cube as `HSIB`, version, band/row/column counts (u32 little
/// endian), then all pixels in row-major pixel order, each pixel as `L`
/// little-endian f64 values.
pub fn write_cube(path: &Path, cube: &SpectralCube) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CUBE_MAGIC)?;
    w.write_all(&CUBE_VERSION.to_le_bytes())?;
    for dim in [cube.bands(), cube.rows(), cube.cols()] {
        let dim = u32::try_from(dim)
            .map_err(|_| Error::Format(format!("dimension {dim} exceeds u32")))?;
        w.write_all(&dim.to_le_bytes())?;
    }
    for n in 0..cube.num_pixels() {
        for b in 0..cube.bands() {
            w.write_all(&cube.data()[(b, n)].to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_cube(path: &Path) -> Result<SpectralCube> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CUBE_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            magic, CUBE_MAGIC
        )));
    }
    let version = read_u32(&mut r)?;
    if version != CUBE_VERSION {
        return Err(Error::Format(format!(
            "unsupported cube version {version}"
        )));
    }
    let l = read_u32(&mut r)? as usize;
    let rows = read_u32(&mut r)? as usize;
    let cols = read_u32(&mut r)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Format("pixel count overflows".into()))?;
    let mut payload = vec![0u8; 8 * l * n];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("cube payload truncated".into()))?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after cube payload".into()));
    }
    let mut data = DMatrix::zeros(l, n);
    for px in 0..n {
        for b in 0..l {
            let off = 8 * (px * l + b);
            data[(b, px)] = f64::from_le_bytes(payload[off..off + 8].try_into().unwrap());
        }
    }
    SpectralCube::new(data, rows, cols)
}

/// Writes a matrix as headerless CSV, one row per line, values formatted
/// with 17 significant digits so a read back is bit-exact.
pub fn write_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for i in 0..m.nrows() {
        let line: Vec<String> = (0..m.ncols()).map(|j| format!("{:.16e}", m[(i, j)])).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<DMatrix<f64>> {
    let r = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let row: Vec<f64> = trimmed
            .split(',')
            .map(|tok| {
                tok.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!("line {}: bad float {tok:?}", lineno + 1))
                })
            })
            .collect::<Result<_>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Format(format!(
                    "line {}: {} values, expected {}",
                    lineno + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Format("empty CSV".into()));
    }
    let nrows = rows.len();
    let ncols = rows[0].len();
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Writes integer labels as one row-major CSV line per image row.
pub fn write_labels(path: &Path, labels: &[usize], rows: usize, cols: usize) -> Result<()> {
    if labels.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a {rows}x{cols} image",
            labels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..rows {
        let line: Vec<String> = (0..cols).map(|c| labels[r * cols + c].to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<(Vec<usize>, usize, usize)> {
    let m = read_csv(path)?;
    let mut labels = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            let v = m[(i, j)];
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Format(format!("label ({i},{j}) = {v} is not a nonnegative integer")));
            }
            labels.push(v as usize);
        }
    }
    Ok((labels, m.nrows(), m.ncols()))
}

/// Writes a grayscale image as binary PGM (P5), linearly rescaling values
/// to 0..=255. A constant image maps to zero.
pub fn write_pgm(path: &Path, image: &DMatrix<f64>) -> Result<()> {
    if image.is_empty() {
        return Err(Error::InvalidArgument("empty image".into()));
    }
    if image.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("image contains non-finite values".into()));
    }
    let min = image.min();
    let max = image.max();
    let span = max - min;
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", image.ncols(), image.nrows())?;
    for i in 0..image.nrows() {
        for j in 0..image.ncols() {
            let v = if span > 0.0 {
                ((image[(i, j)] - min) / span * 255.0).round() as u8
            } else {
                0
            };
            w.write_all(&[v])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes a label map as binary PGM (P5) carrying raw class indices, with
/// maxval set to the largest class so the map is viewable and the indices
/// survive a read back exactly.
pub fn write_label_pgm(
    path: &Path,
    labels: &[usize],
    rows: usize,
    cols: usize,
    n_classes: usize,
) -> Result<()> {
    if labels.len() != rows * cols {
        return Err(Error::InvalidArgument(format!(
            "{} labels for a {rows}x{cols} image",
            labels.len()
        )));
    }
    if n_classes < 1 || n_classes > 256 {
        return Err(Error::InvalidArgument(format!(
            "{n_classes} classes do not fit an 8-bit PGM"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{cols} {rows}\n{}\n", (n_classes - 1).max(1))?;
    for &c in labels {
        w.write_all(&[c as u8])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a label map written by `write_label_pgm`. Returns labels in
/// row-major order plus the geometry and class count.
pub fn read_label_pgm(path: &Path) -> Result<(Vec<usize>, usize, usize, usize)> {
    let bytes = std::fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| {
            Error::Format("PGM header is not ASCII".into())
        })?);
    }
    if fields.len() != 4 || fields[0] != "P5" {
        return Err(Error::Format("not a binary PGM".into()));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header field {s:?}")))
    };
    let cols = parse(fields[1])?;
    let rows = parse(fields[2])?;
    let maxval = parse(fields[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    pos += 1; // the single whitespace byte after maxval
    let payload = bytes
        .get(pos..pos + rows * cols)
        .ok_or_else(|| Error::Format("PGM payload truncated".into()))?;
    let labels: Vec<usize> = payload.iter().map(|&b| b as usize).collect();
    Ok((labels, rows, cols, maxval + 1))
}

/// Writes a manifest: sorted `key=value` lines, one per entry.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut sorted: Vec<&(String, String)> = entries.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));
    let mut w = BufWriter::new(File::create(path)?);
    for (k, v) in sorted {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Format(format!("manifest entry {k:?} contains reserved characters")));
        }
        writeln!(w, "{k}={v}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("line {}: expected key=value", lineno + 1))
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
