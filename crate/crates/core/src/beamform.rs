//! Dirty maps, point spread functions and a time-domain reference
//! beamformer.
//!
//! Map values are linear power; dB conversion happens only at export and in
//! the metrics. Argmax ties go to the lowest linear grid index.

use std::io::{BufWriter, Read, Write};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::csm::{welch_csm, welch_csm_at, Csm, CsmError, TimeRecord, WelchParams};
use crate::geometry::Vec3;
use crate::greens::{GfTensor, Provenance};
use crate::scalar::{inner, power_db, Cplx, Real};
use crate::scene::{FocusGrid, Scene};
use crate::steering::{SteeringParams, SteeringSet};

/// Relative bound on `Im(wᴴ C w)` before a map value is rejected.
pub const IMAG_RESIDUE_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum BeamformError {
    #[error("FREQ_MISMATCH: {0} Hz not available in {1}")]
    FreqMismatch(f64, &'static str),
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("imaginary residue {residue:e} (relative) at focus {focus}, {frequency} Hz")]
    ImaginaryResidue { residue: f64, focus: usize, frequency: f64 },
    #[error("focus index {index} out of range for {n_focus} focus points")]
    IndexOutOfRange { index: usize, n_focus: usize },
    #[error("record too short: {samples} samples, maximum delay needs {needed}")]
    TooShort { samples: usize, needed: usize },
    #[error("FORMAT_MISMATCH: {0}")]
    FormatMismatch(String),
    #[error(transparent)]
    Csm(#[from] CsmError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Beamformer output over the focus grid at one frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceMap<T> {
    pub frequency: T,
    pub values: Vec<T>,
    pub grid: Arc<FocusGrid<T>>,
    pub params: SteeringParams<T>,
    pub provenance: Provenance,
}

impl<T: Real> SourceMap<T> {
    /// Index of the largest value, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.values)
    }

    pub fn max(&self) -> T {
        self.values[self.argmax()]
    }

    /// Values in dB re 1. Nonpositive values map to `-inf`.
    pub fn values_db(&self) -> Vec<T> {
        self.values.iter().map(|&v| to_db(v)).collect()
    }

    /// Same map with every value multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self {
            values: self.values.iter().map(|&v| v * factor).collect(),
            ..self.clone()
        }
    }
}

pub(crate) fn to_db<T: Real>(v: T) -> T {
    if v > T::zero() {
        power_db(v)
    } else {
        T::neg_infinity()
    }
}

/// Index of the largest value, lowest index on ties. NaN never wins.
pub fn argmax<T: Real>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] || values[best].is_nan() {
            best = i;
        }
    }
    best
}

fn check_grid<T: Real>(n_focus: usize, grid: &FocusGrid<T>) -> Result<(), BeamformError> {
    if n_focus != grid.len() {
        return Err(BeamformError::DimensionMismatch(format!(
            "steering set has {n_focus} focus points, grid has {}",
            grid.len()
        )));
    }
    Ok(())
}

fn steering_index<T: Real>(steering: &SteeringSet<T>, frequency: T) -> Result<usize, BeamformError> {
    steering
        .frequency_index(frequency)
        .ok_or(BeamformError::FreqMismatch(frequency.to_f64_lossy(), "steering set"))
}

/// `wᴴ C w` with the imaginary residue checked. The residue is relative to
/// `‖w‖²·‖C‖_F`, an upper bound on `|wᴴ C w|`; `c_frobenius` is `‖C‖_F`.
fn quadratic_form<T: Real>(w: &[Cplx<T>], c: &[Cplx<T>], c_frobenius: T) -> (T, f64) {
    let m = w.len();
    let mut total = Cplx::new(T::zero(), T::zero());
    for (i, wi) in w.iter().enumerate() {
        let row = &c[i * m..(i + 1) * m];
        let cw = row
            .iter()
            .zip(w)
            .fold(Cplx::new(T::zero(), T::zero()), |acc, (cij, wj)| acc + cij * wj);
        total = total + wi.conj() * cw;
    }
    let scale = w.iter().map(|v| v.norm_sqr()).fold(T::zero(), |a, b| a + b) * c_frobenius;
    let residue = if scale > T::zero() {
        (total.im.abs() / scale).to_f64_lossy()
    } else {
        0.0
    };
    (total.re, residue)
}

fn frobenius<T: Real>(c: &[Cplx<T>]) -> T {
    c.iter().map(|v| v.norm_sqr()).fold(T::zero(), |a, b| a + b).sqrt()
}

/// Frequency-domain beamformer `A(y_n) = Re(w(y_n)ᴴ C w(y_n))` at one
/// frequency. Both the CSM and the steering set must contain `frequency`.
pub fn dirty_map<T: Real>(
    csm: &Csm<T>,
    steering: &SteeringSet<T>,
    grid: &Arc<FocusGrid<T>>,
    frequency: T,
) -> Result<SourceMap<T>, BeamformError> {
    check_grid(steering.n_focus, grid)?;
    if csm.n_mic != steering.n_mic {
        return Err(BeamformError::DimensionMismatch(format!(
            "CSM has {} microphones, steering set has {}",
            csm.n_mic, steering.n_mic
        )));
    }
    let qc = csm.frequency_index(frequency).map_err(|e| match e {
        CsmError::FreqMismatch(f) => BeamformError::FreqMismatch(f, "CSM"),
        other => other.into(),
    })?;
    let qs = steering_index(steering, frequency)?;
    let c = csm.matrix(qc);
    let c_norm = frobenius(c);
    let values = (0..steering.n_focus)
        .into_par_iter()
        .map(|n| {
            let (v, residue) = quadratic_form(steering.row(qs, n), c, c_norm);
            if residue > IMAG_RESIDUE_TOLERANCE {
                Err(BeamformError::ImaginaryResidue {
                    residue,
                    focus: n,
                    frequency: frequency.to_f64_lossy(),
                })
            } else {
                Ok(v)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SourceMap {
        frequency,
        values,
        grid: Arc::clone(grid),
        params: steering.params,
        provenance: steering.provenance,
    })
}

/// Dirty maps for several frequencies, computed in parallel.
pub fn dirty_maps<T: Real>(
    csm: &Csm<T>,
    steering: &SteeringSet<T>,
    grid: &Arc<FocusGrid<T>>,
    frequencies: &[T],
) -> Result<Vec<SourceMap<T>>, BeamformError> {
    frequencies
        .par_iter()
        .map(|&f| dirty_map(csm, steering, grid, f))
        .collect()
}

/// Point spread function `|w(y_n)ᴴ g(y_s)|²` at every frequency of `gf`.
/// `gf` supplies the source field, `steering` the weights; they may come from
/// different Green's function models.
pub fn psf_map<T: Real>(
    gf: &GfTensor<T>,
    source_index: usize,
    steering: &SteeringSet<T>,
    grid: &Arc<FocusGrid<T>>,
) -> Result<Vec<SourceMap<T>>, BeamformError> {
    if source_index >= gf.n_focus {
        return Err(BeamformError::IndexOutOfRange {
            index: source_index,
            n_focus: gf.n_focus,
        });
    }
    check_grid(steering.n_focus, grid)?;
    if gf.n_mic != steering.n_mic {
        return Err(BeamformError::DimensionMismatch(format!(
            "GF tensor has {} microphones, steering set has {}",
            gf.n_mic, steering.n_mic
        )));
    }
    gf.frequencies
        .par_iter()
        .enumerate()
        .map(|(q, &f)| {
            let qs = steering_index(steering, f)?;
            let gs = gf.row(q, source_index);
            let values = (0..steering.n_focus)
                .map(|n| inner(steering.row(qs, n), gs).norm_sqr())
                .collect();
            Ok(SourceMap {
                frequency: f,
                values,
                grid: Arc::clone(grid),
                params: steering.params,
                provenance: steering.provenance,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Nearest,
    Linear,
    /// 16-tap Kaiser-windowed sinc.
    #[default]
    Sinc,
}

/// Number of taps of the windowed-sinc fractional delay.
pub const SINC_TAPS: usize = 16;
/// Kaiser window shape parameter of the windowed-sinc fractional delay.
pub const KAISER_BETA: f64 = 8.0;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

/// Taps for a delay of `frac ∈ [0, 1)` samples, applied to samples at
/// offsets `−7..=8` from the integer part.
fn sinc_taps(frac: f64) -> [f64; SINC_TAPS] {
    let half = (SINC_TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let mut taps = [0.0; SINC_TAPS];
    for (i, tap) in taps.iter_mut().enumerate() {
        let x = i as f64 - (half - 1.0) - frac;
        let sinc = if x == 0.0 {
            1.0
        } else if x.fract() == 0.0 {
            0.0
        } else {
            (std::f64::consts::PI * x).sin() / (std::f64::consts::PI * x)
        };
        let r = x / half;
        let window = if r.abs() < 1.0 {
            bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm
        } else {
            0.0
        };
        *tap = sinc * window;
    }
    taps
}

/// Samples `p(k + d)` for every output index `k`, with `d ≥ 0` in samples.
/// Samples outside the record read as zero.
fn delayed<T: Real>(signal: &[T], delay: f64, out_len: usize, interp: Interpolation) -> Vec<T> {
    let at = |i: isize| -> T {
        if i >= 0 && (i as usize) < signal.len() {
            signal[i as usize]
        } else {
            T::zero()
        }
    };
    let whole = delay.floor();
    let frac = delay - whole;
    let base = whole as isize;
    match interp {
        Interpolation::Nearest => {
            let shift = delay.round() as isize;
            (0..out_len).map(|k| at(k as isize + shift)).collect()
        }
        Interpolation::Linear => {
            let (a, b) = (T::lit(1.0 - frac), T::lit(frac));
            (0..out_len)
                .map(|k| {
                    let i = k as isize + base;
                    at(i) * a + at(i + 1) * b
                })
                .collect()
        }
        Interpolation::Sinc => {
            let taps: Vec<T> = sinc_taps(frac).iter().map(|&t| T::lit(t)).collect();
            let first = 1 - (SINC_TAPS / 2) as isize;
            (0..out_len)
                .map(|k| {
                    let i = k as isize + base + first;
                    taps.iter()
                        .enumerate()
                        .map(|(n, &t)| at(i + n as isize) * t)
                        .fold(T::zero(), |acc, v| acc + v)
                })
                .collect()
        }
    }
}

/// Time series `σ̄(t, y)` for a set of focus points.
#[derive(Debug, Clone, PartialEq)]
pub struct TdOutput<T> {
    pub sample_rate: T,
    pub focus: Vec<usize>,
    pub series: Vec<Vec<T>>,
}

/// Delay-and-sum `σ̄(t, y) = (1/M) Σ_m 4π r_m p_m(t + r_m/c)` for each
/// requested focus point. All series have the record length minus the
/// largest delay (rounded up to whole samples) over the requested points.
pub fn td_beamform<T: Real>(
    record: &TimeRecord<T>,
    scene: &Scene<T>,
    focus: &[usize],
    interp: Interpolation,
) -> Result<TdOutput<T>, BeamformError> {
    let mics = &scene.array.positions;
    if record.n_channels() != mics.len() {
        return Err(BeamformError::DimensionMismatch(format!(
            "record has {} channels, array has {} microphones",
            record.n_channels(),
            mics.len()
        )));
    }
    if let Some(&bad) = focus.iter().find(|&&n| n >= scene.grid.len()) {
        return Err(BeamformError::IndexOutOfRange {
            index: bad,
            n_focus: scene.grid.len(),
        });
    }
    let fs = record.sample_rate.to_f64_lossy();
    let c = scene.speed_of_sound.to_f64_lossy();
    let points: Vec<Vec3<T>> = focus.iter().map(|&n| scene.grid.point(n)).collect();
    let dist = |y: Vec3<T>, x: Vec3<T>| x.distance(y).to_f64_lossy();
    let max_delay = points
        .iter()
        .flat_map(|&y| mics.iter().map(move |&x| dist(y, x) * fs / c))
        .fold(0.0f64, f64::max);
    let needed = max_delay.ceil() as usize;
    if needed >= record.len() {
        return Err(BeamformError::TooShort {
            samples: record.len(),
            needed: needed + 1,
        });
    }
    let out_len = record.len() - needed;
    let m = T::from_usize_lossy(mics.len());
    let series = points
        .par_iter()
        .map(|&y| {
            let mut acc = vec![T::zero(); out_len];
            for (x, p) in mics.iter().zip(&record.channels) {
                let r = dist(y, *x);
                let weight = T::lit(4.0 * std::f64::consts::PI * r) / m;
                for (a, v) in acc.iter_mut().zip(delayed(p, r * fs / c, out_len, interp)) {
                    *a = *a + v * weight;
                }
            }
            acc
        })
        .collect();
    Ok(TdOutput {
        sample_rate: record.sample_rate,
        focus: focus.to_vec(),
        series,
    })
}

/// Welch power spectra `σ̂(f, y)` of the time-domain output.
#[derive(Debug, Clone, PartialEq)]
pub struct TdSpectrum<T> {
    pub frequencies: Vec<T>,
    /// `power[focus][freq]`, in the CSM auto-power convention.
    pub power: Vec<Vec<T>>,
}

/// One-channel Welch auto-spectrum of each output series, at every bin or at
/// the bins matching `frequencies`.
pub fn td_spectrum<T: Real>(
    td: &TdOutput<T>,
    params: &WelchParams<T>,
    frequencies: Option<&[T]>,
) -> Result<TdSpectrum<T>, BeamformError> {
    let mut out_freqs = Vec::new();
    let mut power = Vec::with_capacity(td.series.len());
    for s in &td.series {
        let rec = TimeRecord::new(td.sample_rate, vec![s.clone()])?;
        let csm = match frequencies {
            Some(f) => welch_csm_at(&rec, params, f)?,
            None => welch_csm(&rec, params)?,
        };
        power.push(csm.matrices.iter().map(|v| v.re).collect());
        out_freqs = csm.frequencies;
    }
    Ok(TdSpectrum {
        frequencies: out_freqs,
        power,
    })
}

/// Map binary layout (little-endian):
///
/// ```text
/// magic     4 bytes "MAP1"
/// n_freq    u32
/// nx, ny    u32, u32
/// origin    3 × f64
/// axis_u    3 × f64
/// axis_v    3 × f64
/// spacing   f64
/// freqs     n_freq × f64
/// values    n_freq × ny × nx × f64 (linear), row-major with x fastest
/// ```
pub const MAP_MAGIC: &[u8; 4] = b"MAP1";

/// Writes one or more maps on the same grid as a single MAP1 stack.
pub fn write_map_binary<T: Real, W: Write>(maps: &[SourceMap<T>], writer: W) -> Result<(), BeamformError> {
    let Some(first) = maps.first() else {
        return Err(BeamformError::DimensionMismatch("no maps to write".into()));
    };
    let grid = &first.grid;
    if maps.iter().any(|m| m.grid.as_ref() != grid.as_ref()) {
        return Err(BeamformError::DimensionMismatch("maps are on different grids".into()));
    }
    let mut w = BufWriter::new(writer);
    w.write_all(MAP_MAGIC)?;
    for n in [maps.len(), grid.nx, grid.ny] {
        let n = u32::try_from(n).map_err(|_| BeamformError::DimensionMismatch(format!("{n} exceeds u32")))?;
        w.write_all(&n.to_le_bytes())?;
    }
    let geometry = [grid.origin, grid.axis_u, grid.axis_v]
        .into_iter()
        .flat_map(|v| [v.x, v.y, v.z])
        .chain([grid.spacing])
        .chain(maps.iter().map(|m| m.frequency))
        .chain(maps.iter().flat_map(|m| m.values.iter().copied()));
    for v in geometry {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Contents of a MAP1 file.
#[derive(Debug, Clone, PartialEq)]
pub struct MapStack {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 3],
    pub axis_u: [f64; 3],
    pub axis_v: [f64; 3],
    pub spacing: f64,
    pub frequencies: Vec<f64>,
    /// One vector of `nx·ny` linear values per frequency.
    pub values: Vec<Vec<f64>>,
}

pub fn read_map_binary<R: Read>(mut reader: R) -> Result<MapStack, BeamformError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAP_MAGIC {
        return Err(BeamformError::FormatMismatch("missing MAP1 header".into()));
    }
    let u = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let (n_freq, nx, ny) = (u(0), u(1), u(2));
    let n_f64 = 10 + n_freq + n_freq * nx * ny;
    if bytes.len() != 16 + 8 * n_f64 {
        return Err(BeamformError::FormatMismatch(format!(
            "expected {} bytes, found {}",
            16 + 8 * n_f64,
            bytes.len()
        )));
    }
    let f: Vec<f64> = bytes[16..]
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    let vec3 = |i: usize| [f[i], f[i + 1], f[i + 2]];
    let values = f[10 + n_freq..].chunks(nx * ny).map(<[f64]>::to_vec).collect();
    Ok(MapStack {
        nx,
        ny,
        origin: vec3(0),
        axis_u: vec3(3),
        axis_v: vec3(6),
        spacing: f[9],
        frequencies: f[10..10 + n_freq].to_vec(),
        values,
    })
}

/// CSV export with columns `x, y, value_linear, value_db`, where `x` and `y`
/// are world coordinates of each focus point.
pub fn write_map_csv<T: Real, W: Write>(map: &SourceMap<T>, writer: W) -> Result<(), BeamformError> {
    let mut w = csv::Writer::from_writer(writer);
    let to_io = |e: csv::Error| BeamformError::Io(std::io::Error::other(e));
    w.write_record(["x", "y", "value_linear", "value_db"]).map_err(to_io)?;
    for (n, &v) in map.values.iter().enumerate() {
        let p = map.grid.point(n);
        w.write_record([
            p.x.to_f64_lossy().to_string(),
            p.y.to_f64_lossy().to_string(),
            v.to_f64_lossy().to_string(),
            to_db(v).to_f64_lossy().to_string(),
        ])
        .map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csm::{synthetic_csm, Normalization, Window};
    use crate::scene::{build_focus_grid, MicrophoneArray, ReflectorSet};
    use crate::steering::{steering_vector, Preset};

    fn c(re: f64, im: f64) -> Cplx<f64> {
        Cplx::new(re, im)
    }

    fn one_point_grid() -> Arc<FocusGrid<f64>> {
        Arc::new(
            build_focus_grid(
                Vec3::zero(),
                (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
                (0.0, 0.0),
                0.1,
            )
            .unwrap(),
        )
    }

    fn gf_single(g: Vec<Cplx<f64>>) -> GfTensor<f64> {
        let m = g.len();
        GfTensor::new(vec![500.0], 1, m, g, Provenance::Imported).unwrap()
    }

    #[test]
    fn preset_iii_recovers_unit_power() {
        let gf = gf_single(vec![c(0.4, -0.3), c(-1.0, 0.2), c(0.1, 0.9)]);
        let csm = synthetic_csm(&gf, 0, c(1.0, 0.0)).unwrap();
        let set = SteeringSet::build(&gf, SteeringParams::preset(Preset::III)).unwrap();
        let map = dirty_map(&csm, &set, &one_point_grid(), 500.0).unwrap();
        assert!((map.values[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_csm_gives_zero_map() {
        let gf = gf_single(vec![c(0.4, -0.3), c(-1.0, 0.2)]);
        let mut csm = synthetic_csm(&gf, 0, c(1.0, 0.0)).unwrap();
        csm.matrices.iter_mut().for_each(|v| *v = c(0.0, 0.0));
        let set = SteeringSet::build(&gf, SteeringParams::preset(Preset::I)).unwrap();
        assert_eq!(dirty_map(&csm, &set, &one_point_grid(), 500.0).unwrap().values, vec![0.0]);
    }

    #[test]
    fn two_mic_double_sum_oracle() {
        let cm = [c(2.0, 0.0), c(0.3, -0.7), c(0.3, 0.7), c(1.5, 0.0)];
        let w = [c(0.2, 0.9), c(-0.6, 0.4)];
        let mut oracle = c(0.0, 0.0);
        for i in 0..2 {
            for j in 0..2 {
                oracle += w[i].conj() * cm[i * 2 + j] * w[j];
            }
        }
        let (v, residue) = quadratic_form(&w, &cm, frobenius(&cm));
        assert!((v - oracle.re).abs() < 1e-12);
        assert!(residue < 1e-15);
    }

    #[test]
    fn frequency_and_dimension_errors() {
        let gf = gf_single(vec![c(0.4, -0.3), c(-1.0, 0.2)]);
        let csm = synthetic_csm(&gf, 0, c(1.0, 0.0)).unwrap();
        let set = SteeringSet::build(&gf, SteeringParams::preset(Preset::I)).unwrap();
        let grid = one_point_grid();
        assert!(matches!(dirty_map(&csm, &set, &grid, 510.0), Err(BeamformError::FreqMismatch(..))));
        let gf3 = gf_single(vec![c(1.0, 0.0); 3]);
        let set3 = SteeringSet::build(&gf3, SteeringParams::preset(Preset::I)).unwrap();
        assert!(matches!(
            dirty_map(&csm, &set3, &grid, 500.0),
            Err(BeamformError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn non_hermitian_csm_is_rejected() {
        let gf = gf_single(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let mut csm = synthetic_csm(&gf, 0, c(1.0, 0.0)).unwrap();
        csm.matrices[1] = c(0.0, 1.0);
        let set = SteeringSet::build(&gf, SteeringParams::preset(Preset::I)).unwrap();
        assert!(matches!(
            dirty_map(&csm, &set, &one_point_grid(), 500.0),
            Err(BeamformError::ImaginaryResidue { .. })
        ));
    }

    #[test]
    fn argmax_ties_take_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[f64::NAN, 0.0]), 1);
        assert_eq!(argmax(&[5.0f64]), 0);
    }

    #[test]
    fn sinc_taps_are_exact_at_integer_delay() {
        let taps = sinc_taps(0.0);
        for (i, &t) in taps.iter().enumerate() {
            assert_eq!(t, if i == SINC_TAPS / 2 - 1 { 1.0 } else { 0.0 });
        }
        let sum: f64 = sinc_taps(0.5).iter().sum();
        assert!((sum - 1.0).abs() < 1e-2);
    }

    #[test]
    fn delayed_schemes_agree_on_integer_shift() {
        let s: Vec<f64> = (0..40).map(|k| (k as f64 * 0.3).sin()).collect();
        for interp in [Interpolation::Nearest, Interpolation::Linear, Interpolation::Sinc] {
            let d = delayed(&s, 3.0, 30, interp);
            for k in 0..30 {
                assert!((d[k] - s[k + 3]).abs() < 1e-15, "{interp:?}");
            }
        }
        let lin = delayed(&s, 2.25, 10, Interpolation::Linear);
        assert!((lin[0] - (0.75 * s[2] + 0.25 * s[3])).abs() < 1e-15);
    }

    fn single_mic_scene(r: f64, fs: f64) -> Scene<f64> {
        let _ = fs;
        let array = MicrophoneArray::new(vec![Vec3::new(0.0, 0.0, r)]).unwrap();
        let (scene, _) = Scene::new(array, (*one_point_grid()).clone(), ReflectorSet::empty(), 343.0, vec![]).unwrap();
        scene
    }

    #[test]
    fn single_channel_impulse_has_unit_output() {
        // Delay of exactly 10 samples: r = 10·c/fs.
        let fs = 8000.0;
        let r = 10.0 * 343.0 / fs;
        let scene = single_mic_scene(r, fs);
        let t0 = 5;
        let mut p = vec![0.0; 64];
        // Free-field pressure of a unit impulse with 1/(4πr) spreading.
        p[t0 + 10] = 1.0 / (4.0 * std::f64::consts::PI * r);
        let rec = TimeRecord::new(fs, vec![p]).unwrap();
        for interp in [Interpolation::Nearest, Interpolation::Linear, Interpolation::Sinc] {
            let out = td_beamform(&rec, &scene, &[0], interp).unwrap();
            assert_eq!(out.series[0].len(), 54);
            for (k, &v) in out.series[0].iter().enumerate() {
                let expected = if k == t0 { 1.0 } else { 0.0 };
                assert!((v - expected).abs() < 1e-12, "{interp:?} k={k} v={v}");
            }
        }
    }

    #[test]
    fn td_rejects_short_record() {
        let scene = single_mic_scene(343.0 * 100.0 / 8000.0, 8000.0);
        let rec = TimeRecord::new(8000.0, vec![vec![0.0; 50]]).unwrap();
        assert!(matches!(
            td_beamform(&rec, &scene, &[0], Interpolation::Sinc),
            Err(BeamformError::TooShort { .. })
        ));
    }

    #[test]
    fn td_spectrum_of_zeros_and_sinusoid() {
        let fs = 1000.0;
        let params = WelchParams::new(100, 0.5, Window::Hann, Normalization::AmplitudeCorrected).unwrap();
        let zero = TdOutput {
            sample_rate: fs,
            focus: vec![0],
            series: vec![vec![0.0; 500]],
        };
        let sp = td_spectrum(&zero, &params, None).unwrap();
        assert!(sp.power[0].iter().all(|&v| v == 0.0));
        let tone = TdOutput {
            sample_rate: fs,
            focus: vec![0],
            series: vec![(0..500).map(|k| 3.0 * (std::f64::consts::TAU * 50.0 * k as f64 / fs).sin()).collect()],
        };
        let sp = td_spectrum(&tone, &params, Some(&[50.0])).unwrap();
        assert!((sp.power[0][0] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn map_binary_and_csv() {
        let grid = Arc::new(
            build_focus_grid(
                Vec3::new(-0.1, 0.0, 0.03),
                (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
                (0.1, 0.1),
                0.1,
            )
            .unwrap(),
        );
        let map = SourceMap {
            frequency: 480.0,
            values: vec![1.0, 0.5, 0.0, 0.25],
            grid,
            params: SteeringParams::preset(Preset::I),
            provenance: Provenance::Ism,
        };
        let mut buf = Vec::new();
        write_map_binary(&[map.clone(), map.scaled(2.0)], &mut buf).unwrap();
        let stack = read_map_binary(buf.as_slice()).unwrap();
        assert_eq!((stack.nx, stack.ny), (2, 2));
        assert_eq!(stack.frequencies, vec![480.0, 480.0]);
        assert_eq!(stack.values[1], vec![2.0, 1.0, 0.0, 0.5]);
        assert!(read_map_binary(&buf[..buf.len() - 1]).is_err());

        let mut csv = Vec::new();
        write_map_csv(&map, &mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "x,y,value_linear,value_db");
        assert_eq!(lines[1], "-0.1,0,1,0");
        assert!(lines[3].ends_with(",0,-inf"));
    }

    #[test]
    fn steering_row_used_for_psf() {
        let gf = gf_single(vec![c(0.4, -0.3), c(-1.0, 0.2)]);
        let params = SteeringParams::preset(Preset::IV);
        let set = SteeringSet::build(&gf, params).unwrap();
        let maps = psf_map(&gf, 0, &set, &one_point_grid()).unwrap();
        let w = steering_vector(gf.row(0, 0), &params).unwrap();
        assert_eq!(maps[0].values[0], inner(&w, gf.row(0, 0)).norm_sqr());
    }
}
