//! Green's function tensor files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic    4 bytes  "GFT1"
//! n_freq   u32
//! n_focus  u32
//! n_mic    u32
//! freqs    n_freq × f64
//! values   n_freq × n_focus × n_mic × (f64 re, f64 im), row-major
//! ```
//!
//! The CSV debug variant has the header `freq_hz,focus_idx,mic_idx,re,im`
//! and one row per entry in any order; every entry must appear exactly once.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::scalar::{Cplx, Real};
use crate::scene::Scene;

use super::{GfError, GfTensor, Provenance};

pub const GF_MAGIC: &[u8; 4] = b"GFT1";

pub fn write_gf_binary<T: Real, W: Write>(tensor: &GfTensor<T>, writer: W) -> Result<(), GfError> {
    let mut w = BufWriter::new(writer);
    w.write_all(GF_MAGIC)?;
    for n in [tensor.n_freq(), tensor.n_focus, tensor.n_mic] {
        let n = u32::try_from(n).map_err(|_| GfError::DimensionMismatch(format!("{n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for f in &tensor.frequencies {
        w.write_all(&f.to_f64_lossy().to_le_bytes())?;
    }
    for v in &tensor.values {
        w.write_all(&v.re.to_f64_lossy().to_le_bytes())?;
        w.write_all(&v.im.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> GfError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        GfError::FormatMismatch("file is truncated".into())
    } else {
        GfError::Io(e)
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, GfError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64, GfError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_gf_binary<T: Real, R: Read>(reader: R) -> Result<GfTensor<T>, GfError> {
    let mut r = BufReader::new(reader);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != GF_MAGIC {
        return Err(GfError::FormatMismatch(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(GF_MAGIC),
            String::from_utf8_lossy(&magic)
        )));
    }
    let n_freq = read_u32(&mut r)? as usize;
    let n_focus = read_u32(&mut r)? as usize;
    let n_mic = read_u32(&mut r)? as usize;
    let frequencies = (0..n_freq)
        .map(|_| read_f64(&mut r).map(T::lit))
        .collect::<Result<Vec<_>, _>>()?;
    let count = n_freq * n_focus * n_mic;
    let mut values = Vec::with_capacity(count);
    for _ in 0..count {
        let re = read_f64(&mut r)?;
        let im = read_f64(&mut r)?;
        values.push(Cplx::new(T::lit(re), T::lit(im)));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(GfError::FormatMismatch("trailing bytes after tensor data".into()));
    }
    GfTensor::new(frequencies, n_focus, n_mic, values, Provenance::Imported)
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    freq_hz: f64,
    focus_idx: usize,
    mic_idx: usize,
    re: f64,
    im: f64,
}

fn csv_error(e: csv::Error) -> GfError {
    GfError::FormatMismatch(format!("CSV: {e}"))
}

pub fn write_gf_csv<T: Real, W: Write>(tensor: &GfTensor<T>, writer: W) -> Result<(), GfError> {
    let mut w = csv::Writer::from_writer(writer);
    for (flat, v) in tensor.values.iter().enumerate() {
        let (q, n, m) = tensor.position(flat);
        w.serialize(CsvRow {
            freq_hz: tensor.frequencies[q].to_f64_lossy(),
            focus_idx: n,
            mic_idx: m,
            re: v.re.to_f64_lossy(),
            im: v.im.to_f64_lossy(),
        })
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_gf_csv<T: Real, R: Read>(reader: R) -> Result<GfTensor<T>, GfError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let rows = rdr
        .deserialize::<CsvRow>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(csv_error)?;
    if rows.is_empty() {
        return Err(GfError::FormatMismatch("CSV has no rows".into()));
    }
    let mut freqs: Vec<f64> = rows.iter().map(|r| r.freq_hz).collect();
    freqs.sort_by(|a, b| a.total_cmp(b));
    freqs.dedup();
    let n_focus = rows.iter().map(|r| r.focus_idx).max().unwrap_or(0) + 1;
    let n_mic = rows.iter().map(|r| r.mic_idx).max().unwrap_or(0) + 1;
    let count = freqs.len() * n_focus * n_mic;
    if rows.len() != count {
        return Err(GfError::DimensionMismatch(format!(
            "{} rows for {} x {} x {} tensor",
            rows.len(),
            freqs.len(),
            n_focus,
            n_mic
        )));
    }
    let mut slots: Vec<Option<Cplx<T>>> = vec![None; count];
    for row in &rows {
        let q = freqs
            .binary_search_by(|f| f.total_cmp(&row.freq_hz))
            .expect("frequency collected above");
        let flat = (q * n_focus + row.focus_idx) * n_mic + row.mic_idx;
        if slots[flat].replace(Cplx::new(T::lit(row.re), T::lit(row.im))).is_some() {
            return Err(GfError::FormatMismatch(format!(
                "duplicate entry for frequency {} Hz, focus {}, mic {}",
                row.freq_hz, row.focus_idx, row.mic_idx
            )));
        }
    }
    let values = slots
        .into_iter()
        .map(|v| v.expect("row count equals slot count and no duplicates"))
        .collect();
    GfTensor::new(
        freqs.into_iter().map(T::lit).collect(),
        n_focus,
        n_mic,
        values,
        Provenance::Imported,
    )
}

/// Loads a GFT1 or CSV tensor and checks it against the scene and the
/// requested frequencies, which are selected in the order given.
pub fn import_gf_file<T: Real>(path: &Path, scene: &Scene<T>, frequencies: &[T]) -> Result<GfTensor<T>, GfError> {
    let bytes = std::fs::read(path)?;
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let tensor: GfTensor<T> = if bytes.starts_with(GF_MAGIC) {
        read_gf_binary(bytes.as_slice())?
    } else if is_csv {
        read_gf_csv(bytes.as_slice())?
    } else {
        return Err(GfError::FormatMismatch(format!(
            "{} is neither a GFT1 file nor a .csv file",
            path.display()
        )));
    };

    if tensor.n_focus != scene.grid.len() || tensor.n_mic != scene.array.len() {
        return Err(GfError::DimensionMismatch(format!(
            "file has {} focus points x {} mics, scene has {} x {}",
            tensor.n_focus,
            tensor.n_mic,
            scene.grid.len(),
            scene.array.len()
        )));
    }
    let mut indices = Vec::with_capacity(frequencies.len());
    for &f in frequencies {
        let tol = T::lit(1e-9) * f.abs().max(T::one());
        let q = tensor.frequency_index(f, tol).ok_or_else(|| {
            GfError::DimensionMismatch(format!("frequency {f} Hz is not present in {}", path.display()))
        })?;
        indices.push(q);
    }
    Ok(tensor.select_frequencies(&indices))
}
