//! Cross-spectral matrices: Welch estimation from multichannel records and
//! synthetic rank-1 matrices from Green's function tensors.
//!
//! Spectral convention: a block of `K` samples maps to the one-sided
//! amplitude spectrum `p̂(f) = (2/K) Σ_k p_k exp(-2πi f k Δt)` with `k`
//! counted from the block start, and `C = ½ p̂ p̂ᴴ`. A sinusoid of amplitude
//! `A` on a bin therefore has `|p̂| = A` and auto-power `A²/2`.

mod io;

pub use io::{read_csm_binary, read_record_csv, read_wav, write_csm_binary, CSM_MAGIC};

use std::sync::Arc;

use nalgebra::{Complex as NaComplex, DMatrix};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::greens::{closest_within, GfTensor};
use crate::scalar::{Cplx, Real};

#[derive(Debug, Error)]
pub enum CsmError {
    #[error("NOT_A_BIN: {frequency} Hz is not a DFT bin of a {block_len}-sample block at {sample_rate} Hz")]
    NotABin {
        frequency: f64,
        block_len: usize,
        sample_rate: f64,
    },
    #[error("TOO_SHORT: record has {samples} samples, one block needs {block_len}")]
    TooShort { samples: usize, block_len: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("invalid Welch parameters: {0}")]
    InvalidParams(String),
    #[error("source index {index} out of range for {n_focus} focus points")]
    IndexOutOfRange { index: usize, n_focus: usize },
    #[error("source amplitude must be nonzero")]
    ZeroAmplitude,
    #[error("FREQ_MISMATCH: no CSM bin within tolerance of {0} Hz")]
    FreqMismatch(f64),
    #[error("FORMAT_MISMATCH: {0}")]
    FormatMismatch(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("WAV error: {0}")]
    Wav(#[from] hound::Error),
}

/// Multichannel real-valued pressure record (Pa), channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeRecord<T> {
    pub sample_rate: T,
    pub channels: Vec<Vec<T>>,
}

impl<T: Real> TimeRecord<T> {
    pub fn new(sample_rate: T, channels: Vec<Vec<T>>) -> Result<Self, CsmError> {
        if !(sample_rate > T::zero()) || !sample_rate.is_finite() {
            return Err(CsmError::InvalidRecord(format!("sample rate {sample_rate} must be positive")));
        }
        if channels.is_empty() {
            return Err(CsmError::InvalidRecord("no channels".into()));
        }
        let len = channels[0].len();
        if let Some((m, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != len) {
            return Err(CsmError::InvalidRecord(format!(
                "channel {m} has {} samples, channel 0 has {len}",
                c.len()
            )));
        }
        Ok(Self { sample_rate, channels })
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Hann,
    Rect,
}

impl Window {
    /// Periodic window of length `len`.
    pub fn coefficients<T: Real>(self, len: usize) -> Vec<T> {
        match self {
            Window::Rect => vec![T::one(); len],
            Window::Hann => {
                let n = T::from_usize_lossy(len);
                (0..len)
                    .map(|k| {
                        let phase = T::TAU() * T::from_usize_lossy(k) / n;
                        T::lit(0.5) - T::lit(0.5) * phase.cos()
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Divide by the window's coherent gain so a sinusoid keeps amplitude `A`.
    AmplitudeCorrected,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams<T> {
    pub block_len: usize,
    pub overlap: T,
    pub window: Window,
    pub normalization: Normalization,
}

impl<T: Real> WelchParams<T> {
    pub fn new(block_len: usize, overlap: T, window: Window, normalization: Normalization) -> Result<Self, CsmError> {
        if block_len < 2 {
            return Err(CsmError::InvalidParams(format!("block length {block_len} < 2")));
        }
        if !(overlap >= T::zero() && overlap < T::one()) {
            return Err(CsmError::InvalidParams(format!("overlap {overlap} outside [0, 1)")));
        }
        Ok(Self {
            block_len,
            overlap,
            window,
            normalization,
        })
    }

    /// Block advance in samples, `floor(K·(1 − overlap))`, at least 1.
    pub fn hop(&self) -> usize {
        let hop = (T::from_usize_lossy(self.block_len) * (T::one() - self.overlap))
            .floor()
            .to_usize()
            .unwrap_or(1);
        hop.max(1)
    }

    /// Number of complete blocks in a record of `samples` samples.
    pub fn block_count(&self, samples: usize) -> usize {
        if samples < self.block_len {
            0
        } else {
            (samples - self.block_len) / self.hop() + 1
        }
    }

    pub fn bin_spacing(&self, sample_rate: T) -> T {
        sample_rate / T::from_usize_lossy(self.block_len)
    }

    /// Window samples pre-scaled by the amplitude normalization.
    fn scaled_window(&self) -> Vec<T> {
        let w = self.window.coefficients::<T>(self.block_len);
        match self.normalization {
            Normalization::None => w,
            Normalization::AmplitudeCorrected => {
                let gain = w.iter().copied().sum::<T>() / T::from_usize_lossy(w.len());
                w.into_iter().map(|x| x / gain).collect()
            }
        }
    }
}

/// Per-frequency `M × M` Hermitian matrices, stored row-major per frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct Csm<T> {
    pub frequencies: Vec<T>,
    pub n_mic: usize,
    pub matrices: Vec<Cplx<T>>,
    /// Welch bin spacing; frequency lookups accept targets within half of it.
    /// `None` requires an exact match.
    pub bin_spacing: Option<T>,
    /// Number of Welch blocks averaged, when estimated from a record.
    pub averages: Option<usize>,
}

impl<T: Real> Csm<T> {
    pub fn n_freq(&self) -> usize {
        self.frequencies.len()
    }

    pub fn matrix(&self, freq: usize) -> &[Cplx<T>] {
        let size = self.n_mic * self.n_mic;
        &self.matrices[freq * size..(freq + 1) * size]
    }

    pub fn get(&self, freq: usize, row: usize, col: usize) -> Cplx<T> {
        self.matrix(freq)[row * self.n_mic + col]
    }

    pub fn trace(&self, freq: usize) -> T {
        (0..self.n_mic).map(|i| self.get(freq, i, i).re).sum()
    }

    /// Index of the bin matching `frequency`: within half a bin for Welch
    /// matrices, within 1e-9 relative otherwise.
    pub fn frequency_index(&self, frequency: T) -> Result<usize, CsmError> {
        let tol = match self.bin_spacing {
            Some(df) => df / T::lit(2.0),
            None => T::lit(1e-9) * frequency.abs().max(T::one()),
        };
        closest_within(&self.frequencies, frequency, tol)
            .ok_or_else(|| CsmError::FreqMismatch(frequency.to_f64_lossy()))
    }

    /// Largest `|C_ij − conj(C_ji)|` relative to the largest entry magnitude.
    pub fn hermitian_error(&self, freq: usize) -> f64 {
        let m = self.n_mic;
        let mut max_dev = 0.0f64;
        let mut scale = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                let a = self.get(freq, i, j);
                let b = self.get(freq, j, i).conj();
                max_dev = max_dev.max((a - b).norm().to_f64_lossy());
                scale = scale.max(a.norm().to_f64_lossy());
            }
        }
        if scale == 0.0 {
            0.0
        } else {
            max_dev / scale
        }
    }

    /// Eigenvalues in ascending order, computed in `f64` from the Hermitian
    /// part of the matrix.
    pub fn eigenvalues(&self, freq: usize) -> Vec<f64> {
        let m = self.n_mic;
        let mat = DMatrix::from_fn(m, m, |i, j| {
            let a = self.get(freq, i, j);
            let b = self.get(freq, j, i).conj();
            NaComplex::new(
                (a.re.to_f64_lossy() + b.re.to_f64_lossy()) / 2.0,
                (a.im.to_f64_lossy() + b.im.to_f64_lossy()) / 2.0,
            )
        });
        let mut ev: Vec<f64> = mat.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Selects matrices by frequency index.
    pub fn select(&self, indices: &[usize]) -> Self {
        let size = self.n_mic * self.n_mic;
        let mut matrices = Vec::with_capacity(indices.len() * size);
        for &q in indices {
            matrices.extend_from_slice(self.matrix(q));
        }
        Self {
            frequencies: indices.iter().map(|&q| self.frequencies[q]).collect(),
            n_mic: self.n_mic,
            matrices,
            bin_spacing: self.bin_spacing,
            averages: self.averages,
        }
    }
}

fn bin_index<T: Real>(frequency: T, block_len: usize, sample_rate: T) -> Result<usize, CsmError> {
    let err = || CsmError::NotABin {
        frequency: frequency.to_f64_lossy(),
        block_len,
        sample_rate: sample_rate.to_f64_lossy(),
    };
    let exact = frequency * T::from_usize_lossy(block_len) / sample_rate;
    let rounded = exact.round();
    if !(exact >= T::zero()) || (exact - rounded).abs() > T::lit(1e-9) * rounded.max(T::one()) {
        return Err(err());
    }
    let bin = rounded.to_usize().ok_or_else(err)?;
    if bin > block_len / 2 {
        return Err(err());
    }
    Ok(bin)
}

fn forward_fft<T: Real>(len: usize) -> Arc<dyn Fft<T>> {
    FftPlanner::new().plan_fft_forward(len)
}

/// One-sided amplitude `p̂(f)` of `block` at an exact DFT bin, via FFT.
pub fn dft_block<T: Real>(block: &[T], sample_rate: T, frequency: T) -> Result<Cplx<T>, CsmError> {
    let k = block.len();
    if k == 0 {
        return Err(CsmError::TooShort { samples: 0, block_len: 1 });
    }
    let bin = bin_index(frequency, k, sample_rate)?;
    let mut buf: Vec<Cplx<T>> = block.iter().map(|&x| Cplx::new(x, T::zero())).collect();
    forward_fft::<T>(k).process(&mut buf);
    Ok(buf[bin] * (T::lit(2.0) / T::from_usize_lossy(k)))
}

/// Welch estimate at every bin from 0 to `K/2`.
pub fn welch_csm<T: Real>(record: &TimeRecord<T>, params: &WelchParams<T>) -> Result<Csm<T>, CsmError> {
    let bins: Vec<usize> = (0..=params.block_len / 2).collect();
    welch_bins(record, params, &bins)
}

/// Welch estimate restricted to the bins nearest each requested frequency.
/// Every target must lie within half a bin of a bin center.
pub fn welch_csm_at<T: Real>(
    record: &TimeRecord<T>,
    params: &WelchParams<T>,
    frequencies: &[T],
) -> Result<Csm<T>, CsmError> {
    let df = params.bin_spacing(record.sample_rate);
    let bins = frequencies
        .iter()
        .map(|&f| {
            let b = (f / df).round();
            let ok = f >= T::zero() && (f - b * df).abs() <= df / T::lit(2.0);
            match b.to_usize() {
                Some(b) if ok && b <= params.block_len / 2 => Ok(b),
                _ => Err(CsmError::FreqMismatch(f.to_f64_lossy())),
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    welch_bins(record, params, &bins)
}

fn welch_bins<T: Real>(record: &TimeRecord<T>, params: &WelchParams<T>, bins: &[usize]) -> Result<Csm<T>, CsmError> {
    let k = params.block_len;
    let n_blocks = params.block_count(record.len());
    if n_blocks == 0 {
        return Err(CsmError::TooShort {
            samples: record.len(),
            block_len: k,
        });
    }
    let m = record.n_channels();
    let hop = params.hop();
    let window = params.scaled_window();
    let fft = forward_fft::<T>(k);
    let spectrum_scale = T::lit(2.0) / T::from_usize_lossy(k);
    let half = T::lit(0.5);
    let zero = Cplx::new(T::zero(), T::zero());
    let size = m * m;
    let mut acc = vec![zero; bins.len() * size];

    for b in 0..n_blocks {
        let start = b * hop;
        // spectra[ch][bin]
        let spectra: Vec<Vec<Cplx<T>>> = record
            .channels
            .par_iter()
            .map(|ch| {
                let mut buf: Vec<Cplx<T>> = ch[start..start + k]
                    .iter()
                    .zip(&window)
                    .map(|(&x, &w)| Cplx::new(x * w, T::zero()))
                    .collect();
                fft.process(&mut buf);
                bins.iter().map(|&i| buf[i] * spectrum_scale).collect()
            })
            .collect();
        acc.par_chunks_mut(size).enumerate().for_each(|(q, mat)| {
            for i in 0..m {
                let pi = spectra[i][q];
                for j in i..m {
                    mat[i * m + j] = mat[i * m + j] + pi * spectra[j][q].conj() * half;
                }
            }
        });
    }

    let norm = T::one() / T::from_usize_lossy(n_blocks);
    acc.par_chunks_mut(size).for_each(|mat| {
        for i in 0..m {
            mat[i * m + i] = Cplx::new(mat[i * m + i].re * norm, T::zero());
            for j in i + 1..m {
                let v = mat[i * m + j] * norm;
                mat[i * m + j] = v;
                mat[j * m + i] = v.conj();
            }
        }
    });
    let df = params.bin_spacing(record.sample_rate);
    Ok(Csm {
        frequencies: bins.iter().map(|&b| T::from_usize_lossy(b) * df).collect(),
        n_mic: m,
        matrices: acc,
        bin_spacing: Some(df),
        averages: Some(n_blocks),
    })
}

/// `C = |a|² g gᴴ` at every tensor frequency, `g` the column of the source
/// focus point.
pub fn synthetic_csm<T: Real>(gf: &GfTensor<T>, source_index: usize, amplitude: Cplx<T>) -> Result<Csm<T>, CsmError> {
    if source_index >= gf.n_focus {
        return Err(CsmError::IndexOutOfRange {
            index: source_index,
            n_focus: gf.n_focus,
        });
    }
    let power = amplitude.norm_sqr();
    if !(power > T::zero()) {
        return Err(CsmError::ZeroAmplitude);
    }
    let m = gf.n_mic;
    let mut matrices = Vec::with_capacity(gf.n_freq() * m * m);
    for q in 0..gf.n_freq() {
        let g = gf.row(q, source_index);
        for gi in g {
            for gj in g {
                matrices.push(*gi * gj.conj() * power);
            }
        }
    }
    Ok(Csm {
        frequencies: gf.frequencies.clone(),
        n_mic: m,
        matrices,
        bin_spacing: None,
        averages: None,
    })
}

/// Zeroes the main diagonal of every matrix. The result stays Hermitian but
/// is in general no longer positive semi-definite.
pub fn remove_diagonal<T: Real>(csm: &Csm<T>) -> Csm<T> {
    let m = csm.n_mic;
    let mut out = csm.clone();
    for mat in out.matrices.chunks_mut(m * m) {
        for i in 0..m {
            mat[i * m + i] = Cplx::new(T::zero(), T::zero());
        }
    }
    out
}
