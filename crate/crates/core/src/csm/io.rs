//! CSM export/import and time-record readers.
//!
//! CSM binary layout (little-endian), the sibling of the GF tensor format:
//!
//! ```text
//! magic    4 bytes  "CSM1"
//! n_freq   u32
//! n_mic    u32
//! freqs    n_freq × f64
//! values   n_freq × n_mic × n_mic × (f64 re, f64 im), row-major
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::scalar::{Cplx, Real};

use super::{Csm, CsmError, TimeRecord};

pub const CSM_MAGIC: &[u8; 4] = b"CSM1";

pub fn write_csm_binary<T: Real, W: Write>(csm: &Csm<T>, writer: W) -> Result<(), CsmError> {
    let mut w = BufWriter::new(writer);
    w.write_all(CSM_MAGIC)?;
    for n in [csm.n_freq(), csm.n_mic] {
        let n = u32::try_from(n).map_err(|_| CsmError::FormatMismatch(format!("{n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    for f in &csm.frequencies {
        w.write_all(&f.to_f64_lossy().to_le_bytes())?;
    }
    for v in &csm.matrices {
        w.write_all(&v.re.to_f64_lossy().to_le_bytes())?;
        w.write_all(&v.im.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn read_array<R: Read, const N: usize>(r: &mut R) -> Result<[u8; N], CsmError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CsmError::FormatMismatch("file is truncated".into())
        } else {
            CsmError::Io(e)
        }
    })?;
    Ok(b)
}

/// Reads a CSM1 file. The bin spacing is not stored, so the result matches
/// frequencies exactly; set `bin_spacing` afterwards to relax that.
pub fn read_csm_binary<T: Real, R: Read>(reader: R) -> Result<Csm<T>, CsmError> {
    let mut r = BufReader::new(reader);
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != CSM_MAGIC {
        return Err(CsmError::FormatMismatch(format!(
            "expected magic \"CSM1\", found {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let n_freq = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let n_mic = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut next = || read_array::<_, 8>(&mut r).map(|b| T::lit(f64::from_le_bytes(b)));
    let frequencies = (0..n_freq).map(|_| next()).collect::<Result<Vec<_>, _>>()?;
    let count = n_freq * n_mic * n_mic;
    let mut matrices = Vec::with_capacity(count);
    for _ in 0..count {
        let re = next()?;
        let im = next()?;
        matrices.push(Cplx::new(re, im));
    }
    if r.read(&mut [0u8; 1])? != 0 {
        return Err(CsmError::FormatMismatch("trailing bytes after matrix data".into()));
    }
    Ok(Csm {
        frequencies,
        n_mic,
        matrices,
        bin_spacing: None,
        averages: None,
    })
}

/// Reads a multichannel WAV file. Integer PCM (16, 24, 32 bit) is scaled to
/// ±1 full scale and 32-bit float is taken as is; both are then multiplied by
/// `pascal_per_unit`.
pub fn read_wav<T: Real>(path: &Path, pascal_per_unit: T) -> Result<TimeRecord<T>, CsmError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<T> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(CsmError::FormatMismatch(format!("{}-bit float WAV", spec.bits_per_sample)));
            }
            reader
                .samples::<f32>()
                .map(|s| s.map(|v| T::lit(f64::from(v)) * pascal_per_unit))
                .collect::<Result<_, _>>()?
        }
        hound::SampleFormat::Int => {
            if !matches!(spec.bits_per_sample, 16 | 24 | 32) {
                return Err(CsmError::FormatMismatch(format!("{}-bit PCM WAV", spec.bits_per_sample)));
            }
            let full_scale = T::lit(2f64.powi(i32::from(spec.bits_per_sample) - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| T::lit(f64::from(v)) / full_scale * pascal_per_unit))
                .collect::<Result<_, _>>()?
        }
    };
    let mut data = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (ch, &v) in data.iter_mut().zip(frame) {
            ch.push(v);
        }
    }
    TimeRecord::new(T::lit(f64::from(spec.sample_rate)), data)
}

/// Reads a CSV time record with one column per channel and one row per
/// sample. A first row that does not parse as numbers is treated as a header.
pub fn read_record_csv<T: Real, R: Read>(reader: R, sample_rate: T) -> Result<TimeRecord<T>, CsmError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data: Vec<Vec<T>> = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CsmError::FormatMismatch(format!("CSV: {e}")))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if line == 0 => continue,
            Err(e) => return Err(CsmError::FormatMismatch(format!("CSV row {}: {e}", line + 1))),
        };
        if data.is_empty() {
            data = vec![Vec::new(); values.len()];
        }
        if values.len() != data.len() {
            return Err(CsmError::FormatMismatch(format!(
                "CSV row {} has {} columns, expected {}",
                line + 1,
                values.len(),
                data.len()
            )));
        }
        for (ch, v) in data.iter_mut().zip(values) {
            ch.push(T::lit(v));
        }
    }
    TimeRecord::new(sample_rate, data)
}
