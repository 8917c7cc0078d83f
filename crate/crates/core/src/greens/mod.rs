//! Green's function providers and the `(frequency, focus point, microphone)`
//! tensor built from them.
//!
//! Amplitude convention: a unit monopole at distance `r` gives
//! `exp(-j k r) / r` with `k = 2πf/c`, without a `1/(4π)` factor.

mod io;
mod ism;

pub use io::{import_gf_file, read_gf_binary, read_gf_csv, write_gf_binary, write_gf_csv, GF_MAGIC};
pub use ism::{candidate_image_count, ism_gf, ImagePath, ImageSource, DEFAULT_MAX_ORDER};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::{Cplx, Real};
use crate::scene::{Scene, POINT_TOLERANCE};

#[derive(Debug, Error)]
pub enum GfError {
    #[error("COINCIDENT: source and receiver are closer than 1e-9 m")]
    Coincident,
    #[error("ON_REFLECTOR: point lies on reflector panel {panel}")]
    OnReflector { panel: usize },
    #[error("invalid frequency {0} Hz (must be finite and >= 0)")]
    InvalidFrequency(f64),
    #[error("speed of sound must be positive, got {0}")]
    InvalidSpeed(f64),
    #[error("frequency list is empty")]
    NoFrequencies,
    #[error("at frequency #{freq}, focus {focus}, mic {mic}: {source}")]
    At {
        freq: usize,
        focus: usize,
        mic: usize,
        #[source]
        source: Box<GfError>,
    },
    #[error("ZERO_GF: Green's function vanishes at frequency #{freq}, focus {focus}, mic {mic}")]
    ZeroValue { freq: usize, focus: usize, mic: usize },
    #[error("FORMAT_MISMATCH: {0}")]
    FormatMismatch(String),
    #[error("DIMENSION_MISMATCH: {0}")]
    DimensionMismatch(String),
    #[error("NONFINITE_VALUE at frequency #{freq}, focus {focus}, mic {mic}")]
    NonfiniteValue { freq: usize, focus: usize, mic: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Origin of a Green's function tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Freefield,
    Ism,
    Imported,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Freefield => "freefield",
            Self::Ism => "ism",
            Self::Imported => "imported",
        }
    }
}

/// Pure evaluator of `g(source, receiver, f)`.
pub trait GreenFunction<T: Real>: Send + Sync {
    fn evaluate(&self, source: Vec3<T>, receiver: Vec3<T>, frequency: T) -> Result<Cplx<T>, GfError>;

    /// Evaluates at every frequency in `frequencies`, writing into `out`.
    /// Providers override this when geometry work can be shared across
    /// frequencies.
    fn evaluate_many(
        &self,
        source: Vec3<T>,
        receiver: Vec3<T>,
        frequencies: &[T],
        out: &mut [Cplx<T>],
    ) -> Result<(), GfError> {
        for (o, &f) in out.iter_mut().zip(frequencies) {
            *o = self.evaluate(source, receiver, f)?;
        }
        Ok(())
    }

    fn provenance(&self) -> Provenance;
}

pub(crate) fn check_frequency<T: Real>(f: T) -> Result<(), GfError> {
    if f >= T::zero() && f.is_finite() {
        Ok(())
    } else {
        Err(GfError::InvalidFrequency(f.to_f64_lossy()))
    }
}

pub(crate) fn check_speed<T: Real>(c: T) -> Result<(), GfError> {
    if c > T::zero() && c.is_finite() {
        Ok(())
    } else {
        Err(GfError::InvalidSpeed(c.to_f64_lossy()))
    }
}

pub(crate) fn wavenumber<T: Real>(f: T, c: T) -> T {
    T::TAU() * f / c
}

/// `exp(-j k r) / r` for a path of length `r`.
pub(crate) fn spherical_wave<T: Real>(k: T, r: T) -> Cplx<T> {
    Cplx::from_polar(T::one() / r, -k * r)
}

/// Free-field monopole Green's function `exp(-j k r) / r`.
pub fn freefield_gf<T: Real>(source: Vec3<T>, receiver: Vec3<T>, f: T, c: T) -> Result<Cplx<T>, GfError> {
    check_frequency(f)?;
    check_speed(c)?;
    let r = source.distance(receiver);
    if !(r > T::lit(POINT_TOLERANCE)) {
        return Err(GfError::Coincident);
    }
    Ok(spherical_wave(wavenumber(f, c), r))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeField<T> {
    pub speed_of_sound: T,
}

impl<T: Real> FreeField<T> {
    pub fn new(speed_of_sound: T) -> Self {
        Self { speed_of_sound }
    }
}

impl<T: Real> GreenFunction<T> for FreeField<T> {
    fn evaluate(&self, source: Vec3<T>, receiver: Vec3<T>, frequency: T) -> Result<Cplx<T>, GfError> {
        freefield_gf(source, receiver, frequency, self.speed_of_sound)
    }

    fn provenance(&self) -> Provenance {
        Provenance::Freefield
    }
}

/// Green's function values indexed `(frequency, focus point, microphone)`,
/// stored row-major so that the microphone vector of one focus point is
/// contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct GfTensor<T> {
    pub frequencies: Vec<T>,
    pub n_focus: usize,
    pub n_mic: usize,
    pub values: Vec<Cplx<T>>,
    pub provenance: Provenance,
}

impl<T: Real> GfTensor<T> {
    /// Wraps raw values after checking shape, finiteness and `|g| > 0`.
    pub fn new(
        frequencies: Vec<T>,
        n_focus: usize,
        n_mic: usize,
        values: Vec<Cplx<T>>,
        provenance: Provenance,
    ) -> Result<Self, GfError> {
        let expected = frequencies.len() * n_focus * n_mic;
        if values.len() != expected {
            return Err(GfError::DimensionMismatch(format!(
                "{} values for {} x {} x {} tensor",
                values.len(),
                frequencies.len(),
                n_focus,
                n_mic
            )));
        }
        let tensor = Self {
            frequencies,
            n_focus,
            n_mic,
            values,
            provenance,
        };
        tensor.validate()?;
        Ok(tensor)
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.len()
    }

    pub fn offset(&self, freq: usize, focus: usize, mic: usize) -> usize {
        (freq * self.n_focus + focus) * self.n_mic + mic
    }

    pub fn position(&self, flat: usize) -> (usize, usize, usize) {
        let mic = flat % self.n_mic;
        let rest = flat / self.n_mic;
        (rest / self.n_focus, rest % self.n_focus, mic)
    }

    pub fn get(&self, freq: usize, focus: usize, mic: usize) -> Cplx<T> {
        self.values[self.offset(freq, focus, mic)]
    }

    /// Microphone vector `g(y_focus)` at one frequency.
    pub fn row(&self, freq: usize, focus: usize) -> &[Cplx<T>] {
        let start = self.offset(freq, focus, 0);
        &self.values[start..start + self.n_mic]
    }

    /// Index of `frequency` within `tolerance` Hz, closest match first.
    pub fn frequency_index(&self, frequency: T, tolerance: T) -> Option<usize> {
        closest_within(&self.frequencies, frequency, tolerance)
    }

    pub fn validate(&self) -> Result<(), GfError> {
        for (flat, v) in self.values.iter().enumerate() {
            let (freq, focus, mic) = self.position(flat);
            if !(v.re.is_finite() && v.im.is_finite()) {
                return Err(GfError::NonfiniteValue { freq, focus, mic });
            }
            if v.norm_sqr() == T::zero() {
                return Err(GfError::ZeroValue { freq, focus, mic });
            }
        }
        Ok(())
    }

    /// Same tensor restricted to the given frequency indices.
    pub fn select_frequencies(&self, indices: &[usize]) -> Self {
        let block = self.n_focus * self.n_mic;
        let mut values = Vec::with_capacity(indices.len() * block);
        for &q in indices {
            values.extend_from_slice(&self.values[q * block..(q + 1) * block]);
        }
        Self {
            frequencies: indices.iter().map(|&q| self.frequencies[q]).collect(),
            n_focus: self.n_focus,
            n_mic: self.n_mic,
            values,
            provenance: self.provenance,
        }
    }
}

pub(crate) fn closest_within<T: Real>(list: &[T], target: T, tolerance: T) -> Option<usize> {
    list.iter()
        .enumerate()
        .map(|(i, &f)| (i, (f - target).abs()))
        .filter(|&(_, d)| d <= tolerance)
        .min_by(|a, b| a.1.partial_cmp(&b.1).expect("finite frequencies"))
        .map(|(i, _)| i)
}

/// Evaluates `provider(grid point n, mic m, f_q)` for every focus point,
/// microphone and frequency. Work is split over focus points.
pub fn evaluate_gf_tensor<T: Real, G: GreenFunction<T> + ?Sized>(
    provider: &G,
    scene: &Scene<T>,
    frequencies: &[T],
) -> Result<GfTensor<T>, GfError> {
    if frequencies.is_empty() {
        return Err(GfError::NoFrequencies);
    }
    for &f in frequencies {
        check_frequency(f)?;
    }
    let n_freq = frequencies.len();
    let n_focus = scene.grid.len();
    let mics = &scene.array.positions;
    let n_mic = mics.len();

    // One (mic × freq) block per focus point, then transposed into place.
    let blocks: Vec<Vec<Cplx<T>>> = (0..n_focus)
        .into_par_iter()
        .map(|n| {
            let y = scene.grid.point(n);
            let mut block = vec![Cplx::new(T::zero(), T::zero()); n_mic * n_freq];
            for (m, (x, out)) in mics.iter().zip(block.chunks_mut(n_freq)).enumerate() {
                if let Err(e) = provider.evaluate_many(y, *x, frequencies, out) {
                    let freq = frequencies
                        .iter()
                        .position(|&f| provider.evaluate(y, *x, f).is_err())
                        .unwrap_or(0);
                    return Err(GfError::At {
                        freq,
                        focus: n,
                        mic: m,
                        source: Box::new(e),
                    });
                }
            }
            Ok(block)
        })
        .collect::<Result<_, GfError>>()?;

    let mut values = vec![Cplx::new(T::zero(), T::zero()); n_freq * n_focus * n_mic];
    for (n, block) in blocks.iter().enumerate() {
        for m in 0..n_mic {
            for q in 0..n_freq {
                values[(q * n_focus + n) * n_mic + m] = block[m * n_freq + q];
            }
        }
    }
    GfTensor::new(frequencies.to_vec(), n_focus, n_mic, values, provider.provenance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_focus_grid, MicrophoneArray, ReflectorSet};

    fn c64(re: f64, im: f64) -> Cplx<f64> {
        Cplx::new(re, im)
    }

    #[test]
    fn freefield_examples() {
        let o = Vec3::new(0.0, 0.0, 0.0);
        let g = freefield_gf(o, Vec3::new(1.0, 0.0, 0.0), 0.0, 343.0).unwrap();
        assert_eq!(g, c64(1.0, 0.0));

        // k = π  <=>  f = c/2
        let g = freefield_gf(o, Vec3::new(0.0, 2.0, 0.0), 171.5, 343.0).unwrap();
        assert!((g - c64(0.5, 0.0)).norm() < 1e-15);

        let g = freefield_gf(o, Vec3::new(0.0, 0.0, 0.5), 171.5, 343.0).unwrap();
        assert!((g - c64(0.0, -2.0)).norm() < 1e-15);
    }

    #[test]
    fn freefield_rejects_coincident_points() {
        let p = Vec3::new(0.1, 0.2, 0.3);
        assert!(matches!(freefield_gf(p, p, 100.0, 343.0), Err(GfError::Coincident)));
        assert!(matches!(
            freefield_gf(p, Vec3::zero(), -1.0, 343.0),
            Err(GfError::InvalidFrequency(_))
        ));
    }

    fn tiny_scene(mics: Vec<Vec3<f64>>) -> Scene<f64> {
        let grid = build_focus_grid(
            Vec3::new(0.0, 0.0, 0.0),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            (0.2, 0.1),
            0.1,
        )
        .unwrap();
        Scene::new(MicrophoneArray::new(mics).unwrap(), grid, ReflectorSet::empty(), 343.0, vec![])
            .unwrap()
            .0
    }

    #[test]
    fn tensor_layout_matches_provider() {
        let scene = tiny_scene(vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.3, 0.1, 1.2)]);
        let freqs = [0.0, 250.0, 1000.0];
        let t = evaluate_gf_tensor(&FreeField::new(343.0), &scene, &freqs).unwrap();
        assert_eq!((t.n_freq(), t.n_focus, t.n_mic), (3, 6, 2));
        for (q, &f) in freqs.iter().enumerate() {
            for n in 0..6 {
                for (m, x) in scene.array.positions.iter().enumerate() {
                    let direct = freefield_gf(scene.grid.point(n), *x, f, 343.0).unwrap();
                    assert_eq!(t.get(q, n, m), direct);
                }
            }
        }
        assert_eq!(t.position(t.offset(2, 4, 1)), (2, 4, 1));
    }

    #[test]
    fn single_entry_tensor() {
        let grid = build_focus_grid(
            Vec3::zero(),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            (0.0, 0.0),
            0.1,
        )
        .unwrap();
        let mic = Vec3::new(0.0, 0.0, 2.0);
        let scene = Scene::new(MicrophoneArray::new(vec![mic]).unwrap(), grid, ReflectorSet::empty(), 343.0, vec![])
            .unwrap()
            .0;
        let t = evaluate_gf_tensor(&FreeField::new(343.0), &scene, &[500.0]).unwrap();
        assert_eq!(t.values, vec![freefield_gf(Vec3::zero(), mic, 500.0, 343.0).unwrap()]);
    }

    #[test]
    fn errors_carry_indices() {
        // Mic 1 sits on focus point 4 = (0.1, 0.1, 0).
        let scene = tiny_scene(vec![Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.1, 0.1, 0.0)]);
        let err = evaluate_gf_tensor(&FreeField::new(343.0), &scene, &[100.0]).unwrap_err();
        match err {
            GfError::At { focus, mic, source, .. } => {
                assert_eq!((focus, mic), (4, 1));
                assert!(matches!(*source, GfError::Coincident));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tensor_new_rejects_bad_values() {
        let vals = vec![c64(1.0, 0.0), c64(f64::NAN, 0.0)];
        assert!(matches!(
            GfTensor::new(vec![1.0], 1, 2, vals, Provenance::Imported),
            Err(GfError::NonfiniteValue { freq: 0, focus: 0, mic: 1 })
        ));
        let vals = vec![c64(0.0, 0.0)];
        assert!(matches!(
            GfTensor::new(vec![1.0], 1, 1, vals, Provenance::Imported),
            Err(GfError::ZeroValue { .. })
        ));
    }

    #[test]
    fn reference_tensor_size() {
        let grid = crate::scene::centered_box_grid(1.44, 0.01).unwrap();
        let (scene, _) = Scene::new(
            crate::scene::reference_array(),
            grid,
            ReflectorSet::empty(),
            343.0,
            vec![],
        )
        .unwrap();
        let t = evaluate_gf_tensor(&FreeField::new(343.0), &scene, &[1000.0]).unwrap();
        assert_eq!(t.n_focus, 21025);
        assert_eq!(t.values.len(), 1_345_600);
    }
}
