//! Image source method for finite rigid rectangular panels.
//!
//! A reflection sequence `p1, p2, …, po` (no panel twice in a row) mirrors the
//! source successively across each panel plane. The sequence contributes only
//! if the specular path exists: tracing back from the receiver, every segment
//! must cross the next panel's plane inside the panel rectangle. Occlusion
//! and diffraction are not modeled.

use crate::geometry::Vec3;
use crate::scalar::{Cplx, Real};
use crate::scene::{Reflector, ReflectorSet, POINT_TOLERANCE};

use super::{check_frequency, check_speed, spherical_wave, wavenumber, GfError, GreenFunction, Provenance};

pub const DEFAULT_MAX_ORDER: usize = 3;

/// One valid propagation path: unfolded length and product of reflection
/// coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImagePath<T> {
    pub distance: T,
    pub weight: T,
    pub order: usize,
}

/// Number of reflection sequences examined at exactly `order` reflections
/// over `panels` panels: `P·(P−1)^(o−1)`.
pub fn candidate_image_count(panels: usize, order: usize) -> usize {
    match order {
        0 => 1,
        _ if panels == 0 => 0,
        _ => panels * (panels - 1).pow(order as u32 - 1),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageSource<T> {
    pub reflectors: ReflectorSet<T>,
    pub max_order: usize,
    pub speed_of_sound: T,
}

impl<T: Real> ImageSource<T> {
    pub fn new(reflectors: ReflectorSet<T>, max_order: usize, speed_of_sound: T) -> Self {
        Self {
            reflectors,
            max_order,
            speed_of_sound,
        }
    }

    /// Direct path plus every valid image path up to `max_order`.
    pub fn paths(&self, source: Vec3<T>, receiver: Vec3<T>) -> Result<Vec<ImagePath<T>>, GfError> {
        for p in [source, receiver] {
            if let Some(panel) = self.reflectors.touching(p) {
                return Err(GfError::OnReflector { panel });
            }
        }
        let direct = source.distance(receiver);
        if !(direct > T::lit(POINT_TOLERANCE)) {
            return Err(GfError::Coincident);
        }
        let mut out = vec![ImagePath {
            distance: direct,
            weight: T::one(),
            order: 0,
        }];
        let mut chain = Vec::with_capacity(self.max_order);
        self.extend(source, receiver, T::one(), &mut chain, &mut out);
        Ok(out)
    }

    fn extend(
        &self,
        image: Vec3<T>,
        receiver: Vec3<T>,
        weight: T,
        chain: &mut Vec<(usize, Vec3<T>)>,
        out: &mut Vec<ImagePath<T>>,
    ) {
        if chain.len() == self.max_order {
            return;
        }
        let last = chain.last().map(|&(k, _)| k);
        for (k, panel) in self.reflectors.panels.iter().enumerate() {
            if Some(k) == last {
                continue;
            }
            let w = weight * panel.reflection;
            if !(w > T::zero()) {
                continue;
            }
            let mirrored = panel.mirror(image);
            chain.push((k, mirrored));
            if self.path_exists(chain, receiver) {
                out.push(ImagePath {
                    distance: mirrored.distance(receiver),
                    weight: w,
                    order: chain.len(),
                });
            }
            self.extend(mirrored, receiver, w, chain, out);
            chain.pop();
        }
    }

    /// Backward trace from the receiver through the mirrored images.
    fn path_exists(&self, chain: &[(usize, Vec3<T>)], receiver: Vec3<T>) -> bool {
        let mut from = receiver;
        for &(k, image) in chain.iter().rev() {
            match crossing(&self.reflectors.panels[k], from, image) {
                Some(hit) => from = hit,
                None => return false,
            }
        }
        true
    }
}

/// Point where segment `a → b` crosses the panel, if it does so strictly
/// between the endpoints and inside the rectangle.
fn crossing<T: Real>(panel: &Reflector<T>, a: Vec3<T>, b: Vec3<T>) -> Option<Vec3<T>> {
    let da = panel.signed_distance(a);
    let db = panel.signed_distance(b);
    if !(da * db < T::zero()) {
        return None;
    }
    let t = da / (da - db);
    let hit = a + (b - a) * t;
    panel.contains_projection(hit).then_some(hit)
}

impl<T: Real> GreenFunction<T> for ImageSource<T> {
    fn evaluate(&self, source: Vec3<T>, receiver: Vec3<T>, frequency: T) -> Result<Cplx<T>, GfError> {
        let mut out = [Cplx::new(T::zero(), T::zero())];
        self.evaluate_many(source, receiver, &[frequency], &mut out)?;
        Ok(out[0])
    }

    fn evaluate_many(
        &self,
        source: Vec3<T>,
        receiver: Vec3<T>,
        frequencies: &[T],
        out: &mut [Cplx<T>],
    ) -> Result<(), GfError> {
        check_speed(self.speed_of_sound)?;
        for &f in frequencies {
            check_frequency(f)?;
        }
        let paths = self.paths(source, receiver)?;
        for (o, &f) in out.iter_mut().zip(frequencies) {
            let k = wavenumber(f, self.speed_of_sound);
            *o = paths
                .iter()
                .map(|p| spherical_wave(k, p.distance) * p.weight)
                .fold(Cplx::new(T::zero(), T::zero()), |acc, v| acc + v);
        }
        Ok(())
    }

    fn provenance(&self) -> Provenance {
        Provenance::Ism
    }
}

/// Image-source Green's function between two points.
pub fn ism_gf<T: Real>(
    source: Vec3<T>,
    receiver: Vec3<T>,
    f: T,
    reflectors: &ReflectorSet<T>,
    max_order: usize,
    c: T,
) -> Result<Cplx<T>, GfError> {
    ImageSource::new(reflectors.clone(), max_order, c).evaluate(source, receiver, f)
}
