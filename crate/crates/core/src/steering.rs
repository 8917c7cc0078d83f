//! Steering vectors from Green's functions.
//!
//! Every steering vector has the form `w_m = f_m · g_m/|g_m|`: phases always
//! come from the Green's function, only the amplitude scale `f_m` varies.
//! The two-parameter family
//!
//! ```text
//! f_m = |g_m|^(β−1) / ( (Σ_n |g_n|^β)^α · M^(1−α) )
//! ```
//!
//! places the map maximum at the source when `α = 1 − 1/β` and reproduces the
//! source power there when `α = 1`. The classic formulations are presets:
//!
//! | preset | α   | β | property                     |
//! |--------|-----|---|------------------------------|
//! | I      | 0   | 1 | location                     |
//! | II     | 1   | 0 | power                        |
//! | III    | 1   | 2 | power                        |
//! | IV     | 1/2 | 1 | neither, in general          |

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::greens::{GfError, GfTensor, GreenFunction, Provenance};
use crate::scalar::{inner, Cplx, Real};
use crate::scene::Scene;

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("ZERO_GF: Green's function magnitude is zero at microphone {mic}")]
    ZeroGf { mic: usize },
    #[error("ZERO_GF: Green's function magnitude is zero at frequency index {freq}, focus {focus}, microphone {mic}")]
    ZeroGfAt { freq: usize, focus: usize, mic: usize },
    #[error("empty Green's function vector")]
    Empty,
    #[error("invalid steering parameters: alpha = {alpha}, beta = {beta}")]
    InvalidParams { alpha: f64, beta: f64 },
    #[error("BOUNDARY: focus point {0} lies on the grid boundary")]
    Boundary(usize),
    #[error("focus index {index} out of range for {n_focus} focus points")]
    IndexOutOfRange { index: usize, n_focus: usize },
    #[error("finite-difference step must be positive")]
    NonPositiveStep,
    #[error(transparent)]
    Gf(#[from] GfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    I,
    II,
    III,
    IV,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::I, Preset::II, Preset::III, Preset::IV];

    /// `(α, β)` of the preset.
    pub fn alpha_beta(self) -> (f64, f64) {
        match self {
            Preset::I => (0.0, 1.0),
            Preset::II => (1.0, 0.0),
            Preset::III => (1.0, 2.0),
            Preset::IV => (0.5, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::I => "I",
            Preset::II => "II",
            Preset::III => "III",
            Preset::IV => "IV",
        }
    }
}

impl std::str::FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(Preset::I),
            "II" | "2" => Ok(Preset::II),
            "III" | "3" => Ok(Preset::III),
            "IV" | "4" => Ok(Preset::IV),
            other => Err(format!("unknown steering preset {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringParams<T> {
    pub alpha: T,
    pub beta: T,
    pub preset: Option<Preset>,
}

impl<T: Real> SteeringParams<T> {
    pub fn preset(preset: Preset) -> Self {
        let (alpha, beta) = preset.alpha_beta();
        Self {
            alpha: T::lit(alpha),
            beta: T::lit(beta),
            preset: Some(preset),
        }
    }

    pub fn custom(alpha: T, beta: T) -> Result<Self, SteeringError> {
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(SteeringError::InvalidParams {
                alpha: alpha.to_f64_lossy(),
                beta: beta.to_f64_lossy(),
            });
        }
        Ok(Self {
            alpha,
            beta,
            preset: None,
        })
    }

    fn is_formulation_ii(&self) -> bool {
        self.alpha == T::one() && self.beta == T::zero()
    }

    /// `α = 1 − 1/β`, the condition for a map maximum at the source.
    /// Never true for `β = 0`.
    pub fn satisfies_location_condition(&self, tol: T) -> bool {
        self.beta != T::zero() && (self.alpha - (T::one() - self.beta.recip())).abs() <= tol
    }

    /// `α = 1`, the condition for the correct level at the source.
    pub fn satisfies_amplitude_condition(&self, tol: T) -> bool {
        (self.alpha - T::one()).abs() <= tol
    }

    /// Short label for file names and reports.
    pub fn label(&self) -> String {
        match self.preset {
            Some(p) => p.as_str().to_string(),
            None => format!("a{}_b{}", self.alpha, self.beta),
        }
    }
}

fn magnitudes<T: Real>(g: &[Cplx<T>]) -> Result<Vec<T>, SteeringError> {
    if g.is_empty() {
        return Err(SteeringError::Empty);
    }
    g.iter()
        .enumerate()
        .map(|(mic, v)| {
            let a = v.norm();
            if a > T::zero() && a.is_finite() {
                Ok(a)
            } else {
                Err(SteeringError::ZeroGf { mic })
            }
        })
        .collect()
}

/// Amplitude scale `f_m` for every microphone.
pub fn scale_function<T: Real>(g: &[Cplx<T>], alpha: T, beta: T) -> Result<Vec<T>, SteeringError> {
    let a = magnitudes(g)?;
    let m = T::from_usize_lossy(a.len());
    let sum: T = a.iter().map(|&x| x.powf(beta)).sum();
    let denom = sum.powf(alpha) * m.powf(T::one() - alpha);
    Ok(a.iter().map(|&x| x.powf(beta - T::one()) / denom).collect())
}

/// Steering vector `w_m = f_m · g_m/|g_m|`. Formulation II uses the exact
/// closed form `g_m / (M |g_m|²)`.
pub fn steering_vector<T: Real>(g: &[Cplx<T>], params: &SteeringParams<T>) -> Result<Vec<Cplx<T>>, SteeringError> {
    if params.is_formulation_ii() {
        let a = magnitudes(g)?;
        let m = T::from_usize_lossy(g.len());
        return Ok(g.iter().zip(&a).map(|(v, &x)| *v / (m * x * x)).collect());
    }
    let f = scale_function(g, params.alpha, params.beta)?;
    Ok(g.iter().zip(&f).map(|(v, &s)| *v * (s / v.norm())).collect())
}

/// Steering vectors for every frequency and focus point of a tensor, laid out
/// like the tensor itself.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringSet<T> {
    pub frequencies: Vec<T>,
    pub n_focus: usize,
    pub n_mic: usize,
    pub values: Vec<Cplx<T>>,
    pub params: SteeringParams<T>,
    pub provenance: Provenance,
}

impl<T: Real> SteeringSet<T> {
    pub fn build(gf: &GfTensor<T>, params: SteeringParams<T>) -> Result<Self, SteeringError> {
        let m = gf.n_mic;
        let mut values = vec![Cplx::new(T::zero(), T::zero()); gf.values.len()];
        values
            .par_chunks_mut(m.max(1))
            .zip(gf.values.par_chunks(m.max(1)))
            .enumerate()
            .try_for_each(|(row, (out, g))| {
                let w = steering_vector(g, &params).map_err(|e| match e {
                    SteeringError::ZeroGf { mic } => SteeringError::ZeroGfAt {
                        freq: row / gf.n_focus,
                        focus: row % gf.n_focus,
                        mic,
                    },
                    other => other,
                })?;
                out.copy_from_slice(&w);
                Ok::<_, SteeringError>(())
            })?;
        Ok(Self {
            frequencies: gf.frequencies.clone(),
            n_focus: gf.n_focus,
            n_mic: m,
            values,
            params,
            provenance: gf.provenance,
        })
    }

    pub fn n_freq(&self) -> usize {
        self.frequencies.len()
    }

    pub fn row(&self, freq: usize, focus: usize) -> &[Cplx<T>] {
        let start = (freq * self.n_focus + focus) * self.n_mic;
        &self.values[start..start + self.n_mic]
    }

    /// Index of `frequency` within 1e-9 relative.
    pub fn frequency_index(&self, frequency: T) -> Option<usize> {
        let tol = T::lit(1e-9) * frequency.abs().max(T::one());
        crate::greens::closest_within(&self.frequencies, frequency, tol)
    }
}

/// `A(y_s, y_s) = |w(y_s)ᴴ g(y_s)|²` at every tensor frequency.
pub fn check_amplitude_condition<T: Real>(
    gf: &GfTensor<T>,
    source_index: usize,
    params: &SteeringParams<T>,
) -> Result<Vec<T>, SteeringError> {
    if source_index >= gf.n_focus {
        return Err(SteeringError::IndexOutOfRange {
            index: source_index,
            n_focus: gf.n_focus,
        });
    }
    (0..gf.n_freq())
        .map(|q| {
            let g = gf.row(q, source_index);
            let w = steering_vector(g, params)?;
            Ok(inner(&w, g).norm_sqr())
        })
        .collect()
}

/// Result of the finite-difference location check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalMaxCheck<T> {
    /// `‖∇_y A(y, y_s)‖` at `y = y_s`, per meter.
    pub gradient_norm: T,
    /// `A(y_s, y_s)`.
    pub source_value: T,
}

impl<T: Real> LocalMaxCheck<T> {
    /// Passes when the gradient norm is below `rel · A(y_s) / fd_step`.
    pub fn vanishes(&self, rel: T, fd_step: T) -> bool {
        self.gradient_norm < rel * self.source_value / fd_step
    }
}

/// Central finite-difference gradient of the PSF `A(y) = |w(y)ᴴ g(y_s)|²` at
/// the source point, along both grid axes, with the steering vectors computed
/// from `provider` at the displaced focus points. The source must be an
/// interior grid point.
pub fn check_local_max_condition<T: Real, G: GreenFunction<T> + ?Sized>(
    provider: &G,
    scene: &Scene<T>,
    source_index: usize,
    frequency: T,
    params: &SteeringParams<T>,
    fd_step: T,
) -> Result<LocalMaxCheck<T>, SteeringError> {
    let grid = &scene.grid;
    if source_index >= grid.len() {
        return Err(SteeringError::IndexOutOfRange {
            index: source_index,
            n_focus: grid.len(),
        });
    }
    if grid.is_boundary(source_index) {
        return Err(SteeringError::Boundary(source_index));
    }
    if !(fd_step > T::zero()) {
        return Err(SteeringError::NonPositiveStep);
    }
    let mics = &scene.array.positions;
    let column = |y: Vec3<T>| -> Result<Vec<Cplx<T>>, SteeringError> {
        mics.iter()
            .map(|&x| provider.evaluate(y, x, frequency).map_err(SteeringError::from))
            .collect()
    };
    let ys = grid.point(source_index);
    let gs = column(ys)?;
    let psf = |y: Vec3<T>| -> Result<T, SteeringError> {
        let w = steering_vector(&column(y)?, params)?;
        Ok(inner(&w, &gs).norm_sqr())
    };
    let two_h = fd_step + fd_step;
    let du = (psf(ys + grid.axis_u * fd_step)? - psf(ys - grid.axis_u * fd_step)?) / two_h;
    let dv = (psf(ys + grid.axis_v * fd_step)? - psf(ys - grid.axis_v * fd_step)?) / two_h;
    let w = steering_vector(&gs, params)?;
    Ok(LocalMaxCheck {
        gradient_norm: (du * du + dv * dv).sqrt(),
        source_value: inner(&w, &gs).norm_sqr(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::greens::{freefield_gf, FreeField};
    use crate::scene::{build_focus_grid, MicrophoneArray, ReflectorSet};

    fn c(re: f64, im: f64) -> Cplx<f64> {
        Cplx::new(re, im)
    }

    #[test]
    fn preset_values() {
        assert_eq!(Preset::IV.alpha_beta(), (0.5, 1.0));
        let p = SteeringParams::<f64>::preset(Preset::III);
        assert_eq!((p.alpha, p.beta), (1.0, 2.0));
        assert_eq!("iii".parse::<Preset>().unwrap(), Preset::III);
        assert!("V".parse::<Preset>().is_err());
        assert!(SteeringParams::custom(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn scale_function_examples() {
        let g = [c(1.0, 1.0), c(0.0, -3.0), c(0.2, 0.0)];
        for f in scale_function(&g, 0.0, 1.0).unwrap() {
            assert!((f - 1.0 / 3.0).abs() < 1e-15);
        }
        let norm2: f64 = g.iter().map(|v| v.norm_sqr()).sum();
        for (f, v) in scale_function(&g, 1.0, 2.0).unwrap().iter().zip(&g) {
            assert!((f - v.norm() / norm2).abs() < 1e-15);
        }
        assert_eq!(scale_function(&[c(2.0, 0.0)], 1.0, 2.0).unwrap(), vec![0.5]);
        let f = scale_function(&[c(2.0, 0.0)], 0.3, 1.7).unwrap()[0];
        assert!((f - 2f64.powf(0.7) / 2f64.powf(0.3 * 1.7)).abs() < 1e-15);
    }

    #[test]
    fn zero_gf_is_rejected() {
        let err = scale_function(&[c(1.0, 0.0), c(0.0, 0.0)], 0.0, 1.0).unwrap_err();
        assert!(matches!(err, SteeringError::ZeroGf { mic: 1 }));
        let err = steering_vector(&[c(0.0, 0.0)], &SteeringParams::preset(Preset::II)).unwrap_err();
        assert!(matches!(err, SteeringError::ZeroGf { mic: 0 }));
    }

    #[test]
    fn preset_iii_scalar_case() {
        let w = steering_vector(&[c(0.5, 0.0)], &SteeringParams::preset(Preset::III)).unwrap();
        assert!((w[0] - c(2.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn free_field_closed_forms() {
        let y = Vec3::new(0.1, -0.2, 0.0);
        let mics = [Vec3::new(0.5, 0.3, 1.0), Vec3::new(-0.4, 0.1, 0.9), Vec3::new(0.0, 0.0, 1.2)];
        let f = 900.0;
        let k = std::f64::consts::TAU * f / 343.0;
        let r: Vec<f64> = mics.iter().map(|x| x.distance(y)).collect();
        let g: Vec<_> = mics.iter().map(|&x| freefield_gf(y, x, f, 343.0).unwrap()).collect();
        let m = 3.0;
        let sum_inv2: f64 = r.iter().map(|r| r.powi(-2)).sum();

        let w1 = steering_vector(&g, &SteeringParams::preset(Preset::I)).unwrap();
        let w2 = steering_vector(&g, &SteeringParams::preset(Preset::II)).unwrap();
        let w3 = steering_vector(&g, &SteeringParams::preset(Preset::III)).unwrap();
        for i in 0..3 {
            let phase = Cplx::from_polar(1.0, -k * r[i]);
            let e1 = phase / m;
            let e2 = phase * r[i] / m;
            let e3 = phase / (r[i] * sum_inv2);
            assert!((w1[i] - e1).norm() <= 1e-14 * e1.norm());
            assert!((w2[i] - e2).norm() <= 1e-14 * e2.norm());
            assert!((w3[i] - e3).norm() <= 1e-14 * e3.norm());
        }
    }

    #[test]
    fn phases_follow_gf() {
        let g = [c(0.3, -0.8), c(-2.0, 0.1), c(0.01, 0.02)];
        for preset in Preset::ALL {
            let w = steering_vector(&g, &SteeringParams::preset(preset)).unwrap();
            for (wm, gm) in w.iter().zip(&g) {
                let prod = wm * gm.conj();
                assert!(prod.im.abs() <= 1e-12 * prod.norm());
                assert!(prod.re > 0.0);
            }
        }
    }

    #[test]
    fn amplitude_condition_examples() {
        let gf = GfTensor::new(vec![100.0], 1, 2, vec![c(1.0, 0.0), c(0.0, 2.0)], Provenance::Imported).unwrap();
        let a1 = check_amplitude_condition(&gf, 0, &SteeringParams::preset(Preset::I)).unwrap();
        assert!((a1[0] - 2.25).abs() < 1e-14);
        for preset in [Preset::II, Preset::III] {
            let a = check_amplitude_condition(&gf, 0, &SteeringParams::preset(preset)).unwrap();
            assert!((a[0] - 1.0).abs() < 1e-14);
        }
        assert!(check_amplitude_condition(&gf, 1, &SteeringParams::preset(Preset::I)).is_err());
    }

    #[test]
    fn steering_set_matches_rows() {
        let gf = GfTensor::new(
            vec![100.0, 200.0],
            2,
            2,
            (1..=8).map(|i| c(i as f64, 1.0)).collect(),
            Provenance::Imported,
        )
        .unwrap();
        let params = SteeringParams::preset(Preset::III);
        let set = SteeringSet::build(&gf, params).unwrap();
        assert_eq!(set.row(1, 0), steering_vector(gf.row(1, 0), &params).unwrap().as_slice());
        assert_eq!(set.frequency_index(200.0), Some(1));
    }

    fn line_scene() -> Scene<f64> {
        let array = MicrophoneArray::new(vec![
            Vec3::new(0.3, 0.1, 1.0),
            Vec3::new(-0.5, 0.2, 0.8),
            Vec3::new(0.1, -0.6, 1.1),
            Vec3::new(0.7, 0.7, 0.9),
        ])
        .unwrap();
        let grid = build_focus_grid(
            Vec3::new(-0.1, -0.1, 0.0),
            (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)),
            (0.2, 0.2),
            0.1,
        )
        .unwrap();
        Scene::new(array, grid, ReflectorSet::empty(), 343.0, vec![]).unwrap().0
    }

    #[test]
    fn local_max_condition_preset_i_vs_iii() {
        let scene = line_scene();
        let ff = FreeField::new(343.0);
        let h = 1e-4;
        let i = check_local_max_condition(&ff, &scene, 4, 800.0, &SteeringParams::preset(Preset::I), h).unwrap();
        assert!(i.vanishes(1e-6, h), "{i:?}");
        let iii = check_local_max_condition(&ff, &scene, 4, 800.0, &SteeringParams::preset(Preset::III), h).unwrap();
        assert!(!iii.vanishes(1e-6, h), "{iii:?}");
        let err = check_local_max_condition(&ff, &scene, 0, 800.0, &SteeringParams::preset(Preset::I), h);
        assert!(matches!(err, Err(SteeringError::Boundary(0))));
    }
}
