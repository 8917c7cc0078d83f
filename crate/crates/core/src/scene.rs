//! Geometric configuration: microphone array, planar focus grid, reflecting
//! panels, sources and the speed of sound.
//!
//! All types are plain data with public fields. The builders validate their
//! inputs; [`validate_scene`] re-checks every invariant on an assembled
//! [`Scene`] and reports violations as [`Diagnostic`]s instead of failing.
//!
//! Grid indexing is row-major: point `(i, j)` has linear index `j * nx + i`
//! and coordinate `origin + i·spacing·axis_u + j·spacing·axis_v`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scalar::{Cplx, Real};

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;

/// Minimum separation between distinct points (m).
pub const POINT_TOLERANCE: f64 = 1e-9;

/// Relative slack when counting grid points, so that `1.44 / 0.01` yields 145.
const GRID_COUNT_SLACK: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("list lengths differ: {diameters} diameters, {counts} counts, {offsets} plane offsets")]
    MismatchedLengths {
        diameters: usize,
        counts: usize,
        offsets: usize,
    },
    #[error("ring {ring}: diameter must be positive, got {diameter}")]
    NonPositiveDiameter { ring: usize, diameter: f64 },
    #[error("ring {ring}: microphone count must be at least 1")]
    ZeroCount { ring: usize },
    #[error("grid spacing must be positive, got {0}")]
    NonPositiveSpacing(f64),
    #[error("grid extent must be non-negative and finite, got ({0}, {1})")]
    InvalidExtent(f64, f64),
    #[error("grid axes are not orthonormal")]
    AxesNotOrthonormal,
    #[error("mask has {got} entries, grid has {expected} points")]
    MaskLength { expected: usize, got: usize },
    #[error("array must contain at least one microphone")]
    EmptyArray,
    #[error("invalid scene: {}", summarize(.0))]
    Invalid(Vec<Diagnostic>),
}

fn summarize(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DiagnosticCode {
    EmptyArray,
    DuplicateMic,
    NonfiniteCoordinate,
    NonPositiveSpeed,
    NonPositiveSpacing,
    InvalidExtent,
    AxesNotOrthonormal,
    MaskLength,
    PanelNotOrthogonal,
    PanelZeroArea,
    ReflectionOutOfRange,
    MicOnReflector,
    GridOnReflector,
    SourceOffGrid,
    SourceOutsideGrid,
}

impl DiagnosticCode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::EmptyArray => "EMPTY_ARRAY",
            Self::DuplicateMic => "DUPLICATE_MIC",
            Self::NonfiniteCoordinate => "NONFINITE_COORDINATE",
            Self::NonPositiveSpeed => "NONPOSITIVE_SPEED",
            Self::NonPositiveSpacing => "NONPOSITIVE_SPACING",
            Self::InvalidExtent => "INVALID_EXTENT",
            Self::AxesNotOrthonormal => "AXES_NOT_ORTHONORMAL",
            Self::MaskLength => "MASK_LENGTH",
            Self::PanelNotOrthogonal => "PANEL_NOT_ORTHOGONAL",
            Self::PanelZeroArea => "PANEL_ZERO_AREA",
            Self::ReflectionOutOfRange => "REFLECTION_OUT_OF_RANGE",
            Self::MicOnReflector => "MIC_ON_REFLECTOR",
            Self::GridOnReflector => "GRID_ON_REFLECTOR",
            Self::SourceOffGrid => "SOURCE_OFF_GRID",
            Self::SourceOutsideGrid => "SOURCE_OUTSIDE_GRID",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub code: DiagnosticCode,
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self {
            code,
            severity: Severity::Error,
            message: message.into(),
        }
    }

    fn warning(code: DiagnosticCode, message: impl Into<String>) -> Self {
        Self {
            code,
            severity: Severity::Warning,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev} {}: {}", self.code.as_str(), self.message)
    }
}

fn axis_tolerance<T: Real>() -> T {
    T::lit(1e-12).max(T::epsilon() * T::lit(8.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MicrophoneArray<T> {
    pub positions: Vec<Vec3<T>>,
}

impl<T: Real> MicrophoneArray<T> {
    /// Builds an array, rejecting empty input. Duplicates are reported by
    /// [`validate_scene`].
    pub fn new(positions: Vec<Vec3<T>>) -> Result<Self, SceneError> {
        if positions.is_empty() {
            return Err(SceneError::EmptyArray);
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Pairs of microphone indices closer than [`POINT_TOLERANCE`].
    pub fn duplicate_pairs(&self) -> Vec<(usize, usize)> {
        let tol = T::lit(POINT_TOLERANCE);
        let mut out = Vec::new();
        for (a, pa) in self.positions.iter().enumerate() {
            for (b, pb) in self.positions.iter().enumerate().skip(a + 1) {
                if pa.distance(*pb) <= tol {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Concentric rings about the z axis. Ring `i` has `counts[i]` microphones
/// equally spaced on a circle of diameter `diameters[i]` in the plane
/// `z = plane_offsets[i]`; the first microphone of every ring sits at angle 0
/// (on the positive x axis).
pub fn build_ring_array<T: Real>(
    diameters: &[T],
    counts: &[usize],
    plane_offsets: &[T],
) -> Result<MicrophoneArray<T>, SceneError> {
    if diameters.len() != counts.len() || diameters.len() != plane_offsets.len() {
        return Err(SceneError::MismatchedLengths {
            diameters: diameters.len(),
            counts: counts.len(),
            offsets: plane_offsets.len(),
        });
    }
    let mut positions = Vec::with_capacity(counts.iter().sum());
    for (ring, ((&d, &n), &z)) in diameters.iter().zip(counts).zip(plane_offsets).enumerate() {
        if !(d > T::zero()) || !d.is_finite() {
            return Err(SceneError::NonPositiveDiameter {
                ring,
                diameter: d.to_f64_lossy(),
            });
        }
        if n == 0 {
            return Err(SceneError::ZeroCount { ring });
        }
        let radius = d / T::lit(2.0);
        for k in 0..n {
            let angle = T::TAU() * T::from_usize_lossy(k) / T::from_usize_lossy(n);
            positions.push(Vec3::new(radius * angle.cos(), radius * angle.sin(), z));
        }
    }
    MicrophoneArray::new(positions)
}

/// Planar rectangular focus grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusGrid<T> {
    pub origin: Vec3<T>,
    pub axis_u: Vec3<T>,
    pub axis_v: Vec3<T>,
    pub spacing: T,
    pub nx: usize,
    pub ny: usize,
    /// Optional per-point selection, e.g. "inside the box". `None` selects all.
    pub mask: Option<Vec<bool>>,
}

pub fn build_focus_grid<T: Real>(
    origin: Vec3<T>,
    axes: (Vec3<T>, Vec3<T>),
    extent: (T, T),
    spacing: T,
) -> Result<FocusGrid<T>, SceneError> {
    if !(spacing > T::zero()) || !spacing.is_finite() {
        return Err(SceneError::NonPositiveSpacing(spacing.to_f64_lossy()));
    }
    let (w, h) = extent;
    if !(w >= T::zero() && h >= T::zero()) || !w.is_finite() || !h.is_finite() {
        return Err(SceneError::InvalidExtent(w.to_f64_lossy(), h.to_f64_lossy()));
    }
    if !axes_orthonormal(axes.0, axes.1) {
        return Err(SceneError::AxesNotOrthonormal);
    }
    let count = |len: T| {
        let steps = (len / spacing + T::lit(GRID_COUNT_SLACK)).floor();
        steps.to_usize().expect("finite step count") + 1
    };
    Ok(FocusGrid {
        origin,
        axis_u: axes.0,
        axis_v: axes.1,
        spacing,
        nx: count(w),
        ny: count(h),
        mask: None,
    })
}

fn axes_orthonormal<T: Real>(u: Vec3<T>, v: Vec3<T>) -> bool {
    let tol = axis_tolerance::<T>();
    (u.norm() - T::one()).abs() <= tol
        && (v.norm() - T::one()).abs() <= tol
        && u.dot(v).abs() <= tol
}

impl<T: Real> FocusGrid<T> {
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    pub fn ij(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn point_ij(&self, i: usize, j: usize) -> Vec3<T> {
        self.origin
            + self.axis_u * (T::from_usize_lossy(i) * self.spacing)
            + self.axis_v * (T::from_usize_lossy(j) * self.spacing)
    }

    pub fn point(&self, index: usize) -> Vec3<T> {
        let (i, j) = self.ij(index);
        self.point_ij(i, j)
    }

    pub fn points(&self) -> Vec<Vec3<T>> {
        (0..self.len()).map(|n| self.point(n)).collect()
    }

    /// Nearest grid index to `p` after projection onto the grid plane.
    pub fn nearest_index(&self, p: Vec3<T>) -> usize {
        let local = p - self.origin;
        let snap = |coord: T, n: usize| {
            let r = (coord / self.spacing).round();
            if r <= T::zero() {
                0
            } else {
                r.to_usize().unwrap_or(usize::MAX).min(n - 1)
            }
        };
        self.index(snap(local.dot(self.axis_u), self.nx), snap(local.dot(self.axis_v), self.ny))
    }

    /// True when the point lies on the outer ring of the grid.
    pub fn is_boundary(&self, index: usize) -> bool {
        let (i, j) = self.ij(index);
        i == 0 || j == 0 || i + 1 == self.nx || j + 1 == self.ny
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self, SceneError> {
        if mask.len() != self.len() {
            return Err(SceneError::MaskLength {
                expected: self.len(),
                got: mask.len(),
            });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    /// Selects the points inside the closed axis-aligned box `[min, max]`.
    pub fn with_mask_box(self, min: Vec3<T>, max: Vec3<T>) -> Self {
        let inside = |p: Vec3<T>| {
            p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y && p.z >= min.z && p.z <= max.z
        };
        let mask = (0..self.len()).map(|n| inside(self.point(n))).collect();
        Self {
            mask: Some(mask),
            ..self
        }
    }

    pub fn is_selected(&self, index: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[index])
    }
}

/// Rigid rectangular panel spanned by two orthogonal edges from `corner`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reflector<T> {
    pub corner: Vec3<T>,
    pub edge_u: Vec3<T>,
    pub edge_v: Vec3<T>,
    /// Pressure reflection coefficient in `[0, 1]`.
    pub reflection: T,
}

impl<T: Real> Reflector<T> {
    pub fn new(corner: Vec3<T>, edge_u: Vec3<T>, edge_v: Vec3<T>, reflection: T) -> Self {
        Self {
            corner,
            edge_u,
            edge_v,
            reflection,
        }
    }

    pub fn normal(&self) -> Vec3<T> {
        let n = self.edge_u.cross(self.edge_v);
        n.scale(T::one() / n.norm())
    }

    pub fn area(&self) -> T {
        self.edge_u.cross(self.edge_v).norm()
    }

    pub fn signed_distance(&self, p: Vec3<T>) -> T {
        (p - self.corner).dot(self.normal())
    }

    /// Mirror image of `p` across the panel's plane.
    pub fn mirror(&self, p: Vec3<T>) -> Vec3<T> {
        let n = self.normal();
        p - n * (T::lit(2.0) * (p - self.corner).dot(n))
    }

    /// Whether the orthogonal projection of `p` falls inside the rectangle
    /// (edges included).
    pub fn contains_projection(&self, p: Vec3<T>) -> bool {
        let d = p - self.corner;
        let s = d.dot(self.edge_u) / self.edge_u.dot(self.edge_u);
        let t = d.dot(self.edge_v) / self.edge_v.dot(self.edge_v);
        let tol = T::lit(1e-12);
        s >= -tol && s <= T::one() + tol && t >= -tol && t <= T::one() + tol
    }

    /// Whether `p` lies on the panel surface itself.
    pub fn touches(&self, p: Vec3<T>) -> bool {
        self.signed_distance(p).abs() <= T::lit(POINT_TOLERANCE) && self.contains_projection(p)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReflectorSet<T> {
    pub panels: Vec<Reflector<T>>,
}

impl<T: Real> ReflectorSet<T> {
    pub fn new(panels: Vec<Reflector<T>>) -> Self {
        Self { panels }
    }

    pub fn empty() -> Self {
        Self { panels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.panels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.panels.is_empty()
    }

    /// Index of the first panel whose surface contains `p`.
    pub fn touching(&self, p: Vec3<T>) -> Option<usize> {
        self.panels.iter().position(|panel| panel.touches(p))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Source<T> {
    pub position: Vec3<T>,
    pub amplitude: Cplx<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene<T> {
    pub array: MicrophoneArray<T>,
    pub grid: Arc<FocusGrid<T>>,
    pub reflectors: ReflectorSet<T>,
    pub speed_of_sound: T,
    pub sources: Vec<Source<T>>,
}

impl<T: Real> Scene<T> {
    /// Assembles a scene and rejects it when any error-level diagnostic is
    /// raised. Warnings are returned alongside the scene.
    pub fn new(
        array: MicrophoneArray<T>,
        grid: FocusGrid<T>,
        reflectors: ReflectorSet<T>,
        speed_of_sound: T,
        sources: Vec<Source<T>>,
    ) -> Result<(Self, Vec<Diagnostic>), SceneError> {
        let scene = Self {
            array,
            grid: Arc::new(grid),
            reflectors,
            speed_of_sound,
            sources,
        };
        let diags = validate_scene(&scene);
        if diags.iter().any(|d| d.severity == Severity::Error) {
            return Err(SceneError::Invalid(diags));
        }
        Ok((scene, diags))
    }

    /// Grid index each source snaps to, with the snapping distance in meters.
    pub fn source_grid_indices(&self) -> Vec<(usize, T)> {
        self.sources
            .iter()
            .map(|s| {
                let n = self.grid.nearest_index(s.position);
                (n, self.grid.point(n).distance(s.position))
            })
            .collect()
    }
}

/// Checks every scene invariant. Returns an empty list iff all hold.
pub fn validate_scene<T: Real>(scene: &Scene<T>) -> Vec<Diagnostic> {
    use DiagnosticCode as C;
    let mut out = Vec::new();
    let mics = &scene.array.positions;
    if mics.is_empty() {
        out.push(Diagnostic::error(C::EmptyArray, "array has no microphones"));
    }
    for (m, p) in mics.iter().enumerate() {
        if !p.is_finite() {
            out.push(Diagnostic::error(
                C::NonfiniteCoordinate,
                format!("microphone {m} has a non-finite coordinate"),
            ));
        }
    }
    for (a, b) in scene.array.duplicate_pairs() {
        out.push(Diagnostic::error(
            C::DuplicateMic,
            format!("microphones {a} and {b} coincide"),
        ));
    }
    if !(scene.speed_of_sound > T::zero()) || !scene.speed_of_sound.is_finite() {
        out.push(Diagnostic::error(
            C::NonPositiveSpeed,
            format!("speed of sound must be positive, got {}", scene.speed_of_sound),
        ));
    }

    let grid = &scene.grid;
    if !(grid.spacing > T::zero()) || !grid.spacing.is_finite() {
        out.push(Diagnostic::error(
            C::NonPositiveSpacing,
            format!("grid spacing must be positive, got {}", grid.spacing),
        ));
    }
    if grid.nx == 0 || grid.ny == 0 {
        out.push(Diagnostic::error(C::InvalidExtent, "grid has no points"));
    }
    if !axes_orthonormal(grid.axis_u, grid.axis_v) {
        out.push(Diagnostic::error(
            C::AxesNotOrthonormal,
            "grid axes must be orthonormal to 1e-12",
        ));
    }
    if let Some(mask) = &grid.mask {
        if mask.len() != grid.len() {
            out.push(Diagnostic::error(
                C::MaskLength,
                format!("mask has {} entries, grid has {}", mask.len(), grid.len()),
            ));
        }
    }

    for (k, panel) in scene.reflectors.panels.iter().enumerate() {
        let (lu, lv) = (panel.edge_u.norm(), panel.edge_v.norm());
        if !(lu > T::zero() && lv > T::zero()) {
            out.push(Diagnostic::error(
                C::PanelZeroArea,
                format!("panel {k} has a zero-length edge"),
            ));
            continue;
        }
        if panel.edge_u.dot(panel.edge_v).abs() > axis_tolerance::<T>() * lu * lv {
            out.push(Diagnostic::error(
                C::PanelNotOrthogonal,
                format!("panel {k} edges are not orthogonal"),
            ));
        }
        if !(panel.reflection >= T::zero() && panel.reflection <= T::one()) {
            out.push(Diagnostic::error(
                C::ReflectionOutOfRange,
                format!("panel {k} reflection coefficient {} outside [0, 1]", panel.reflection),
            ));
        }
    }
    let geometry_ok = !out.iter().any(|d| {
        matches!(
            d.code,
            C::PanelZeroArea | C::NonPositiveSpacing | C::InvalidExtent | C::AxesNotOrthonormal
        )
    });
    if geometry_ok && !scene.reflectors.is_empty() {
        for (m, p) in mics.iter().enumerate() {
            if let Some(k) = scene.reflectors.touching(*p) {
                out.push(Diagnostic::error(
                    C::MicOnReflector,
                    format!("microphone {m} lies on panel {k}"),
                ));
            }
        }
        for n in 0..grid.len() {
            if let Some(k) = scene.reflectors.touching(grid.point(n)) {
                out.push(Diagnostic::error(
                    C::GridOnReflector,
                    format!("focus point {n} lies on panel {k}"),
                ));
            }
        }
    }

    if geometry_ok && !grid.is_empty() {
        let on_grid = T::lit(POINT_TOLERANCE);
        for (s, src) in scene.sources.iter().enumerate() {
            let n = grid.nearest_index(src.position);
            let dist = grid.point(n).distance(src.position);
            if dist > grid.spacing {
                out.push(Diagnostic::warning(
                    C::SourceOutsideGrid,
                    format!("source {s} is {dist} m from the nearest focus point {n}"),
                ));
            } else if dist > on_grid {
                out.push(Diagnostic::warning(
                    C::SourceOffGrid,
                    format!("source {s} is {dist} m off-grid; snapped to focus point {n}"),
                ));
            }
        }
    }
    out
}

fn default_speed() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

fn default_axis_u() -> [f64; 3] {
    [1.0, 0.0, 0.0]
}

fn default_axis_v() -> [f64; 3] {
    [0.0, 1.0, 0.0]
}

fn default_reflection() -> f64 {
    1.0
}

fn default_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

/// Scene file schema. See `README.md` for a worked example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_speed")]
    pub speed_of_sound: f64,
    pub array: ArrayConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub reflectors: Vec<PanelConfig>,
    #[serde(default)]
    pub sources: Vec<SourceConfig>,
}

/// Either concentric rings, explicit positions, or both (rings first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    #[serde(default)]
    pub rings: Option<RingConfig>,
    #[serde(default)]
    pub positions: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingConfig {
    pub diameters: Vec<f64>,
    pub counts: Vec<usize>,
    pub plane_offsets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub origin: [f64; 3],
    #[serde(default = "default_axis_u")]
    pub axis_u: [f64; 3],
    #[serde(default = "default_axis_v")]
    pub axis_v: [f64; 3],
    pub extent: [f64; 2],
    pub spacing: f64,
    #[serde(default)]
    pub mask_box: Option<BoxConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelConfig {
    pub corner: [f64; 3],
    pub edge_u: [f64; 3],
    pub edge_v: [f64; 3],
    #[serde(default = "default_reflection")]
    pub reflection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    pub position: [f64; 3],
    #[serde(default = "default_amplitude")]
    pub amplitude: [f64; 2],
}

fn v3<T: Real>(a: [f64; 3]) -> Vec3<T> {
    Vec3::new(T::lit(a[0]), T::lit(a[1]), T::lit(a[2]))
}

impl SceneConfig {
    pub fn build<T: Real>(&self) -> Result<(Scene<T>, Vec<Diagnostic>), SceneError> {
        let mut positions = Vec::new();
        if let Some(rings) = &self.array.rings {
            let d: Vec<T> = rings.diameters.iter().map(|&x| T::lit(x)).collect();
            let z: Vec<T> = rings.plane_offsets.iter().map(|&x| T::lit(x)).collect();
            positions.extend(build_ring_array(&d, &rings.counts, &z)?.positions);
        }
        positions.extend(self.array.positions.iter().map(|&p| v3::<T>(p)));
        let array = MicrophoneArray::new(positions)?;

        let g = &self.grid;
        let mut grid = build_focus_grid(
            v3(g.origin),
            (v3(g.axis_u), v3(g.axis_v)),
            (T::lit(g.extent[0]), T::lit(g.extent[1])),
            T::lit(g.spacing),
        )?;
        if let Some(b) = &g.mask_box {
            grid = grid.with_mask_box(v3(b.min), v3(b.max));
        }
        let reflectors = ReflectorSet::new(
            self.reflectors
                .iter()
                .map(|p| Reflector::new(v3(p.corner), v3(p.edge_u), v3(p.edge_v), T::lit(p.reflection)))
                .collect(),
        );
        let sources = self
            .sources
            .iter()
            .map(|s| Source {
                position: v3(s.position),
                amplitude: Cplx::new(T::lit(s.amplitude[0]), T::lit(s.amplitude[1])),
            })
            .collect();
        Scene::new(array, grid, reflectors, T::lit(self.speed_of_sound), sources)
    }
}

/// Box dimensions (x, y, depth) of the heat-exchanger enclosure, in meters.
pub const BOX_DIMENSIONS: [f64; 3] = [1.54, 1.14, 0.46];
/// Offset of the focus plane in front of the separating wall, toward the array.
pub const FOCUS_PLANE_OFFSET: f64 = 0.03;

/// Two-ring, 64-microphone array: 40 microphones on a 1.6 m ring at 0.8 m and
/// 24 on a 0.8 m ring at 1.3 m from the wall.
pub fn reference_array<T: Real>() -> MicrophoneArray<T> {
    build_ring_array(
        &[T::lit(1.6), T::lit(0.8)],
        &[40, 24],
        &[T::lit(0.8), T::lit(1.3)],
    )
    .expect("reference layout is valid")
}

/// Separating wall in `z = 0` plus the four rigid side walls of the box,
/// which extend from the wall toward the array. The box front is open.
pub fn wall_box_reflectors<T: Real>(reflection: T) -> ReflectorSet<T> {
    let [bx, by, depth] = BOX_DIMENSIONS.map(T::lit);
    let half = T::lit(0.5);
    let (hx, hy) = (bx * half, by * half);
    let zero = T::zero();
    let wall = T::lit(3.0);
    ReflectorSet::new(vec![
        Reflector::new(
            Vec3::new(-wall * half, -wall * half, zero),
            Vec3::new(wall, zero, zero),
            Vec3::new(zero, wall, zero),
            reflection,
        ),
        Reflector::new(Vec3::new(-hx, -hy, zero), Vec3::new(zero, by, zero), Vec3::new(zero, zero, depth), reflection),
        Reflector::new(Vec3::new(hx, -hy, zero), Vec3::new(zero, by, zero), Vec3::new(zero, zero, depth), reflection),
        Reflector::new(Vec3::new(-hx, -hy, zero), Vec3::new(bx, zero, zero), Vec3::new(zero, zero, depth), reflection),
        Reflector::new(Vec3::new(-hx, hy, zero), Vec3::new(bx, zero, zero), Vec3::new(zero, zero, depth), reflection),
    ])
}

/// Square focus grid of side `extent`, centered on the box axis in the plane
/// `z = FOCUS_PLANE_OFFSET`, masked to the box interior.
pub fn centered_box_grid<T: Real>(extent: T, spacing: T) -> Result<FocusGrid<T>, SceneError> {
    let probe = build_focus_grid(Vec3::zero(), (Vec3::new(T::one(), T::zero(), T::zero()), Vec3::new(T::zero(), T::one(), T::zero())), (extent, extent), spacing)?;
    let half_span = T::from_usize_lossy(probe.nx - 1) * spacing / T::lit(2.0);
    let origin = Vec3::new(-half_span, -half_span, T::lit(FOCUS_PLANE_OFFSET));
    let grid = FocusGrid { origin, ..probe };
    let [bx, by, depth] = BOX_DIMENSIONS.map(T::lit);
    let half = T::lit(0.5);
    Ok(grid.with_mask_box(
        Vec3::new(-bx * half, -by * half, T::zero()),
        Vec3::new(bx * half, by * half, depth),
    ))
}

/// Grid indices `(i, j)` of the four default source positions on a centered
/// 29×29 grid (0.05 m spacing), all inside the box.
pub const DESK_SOURCE_CELLS: [(usize, usize); 4] = [(14, 14), (20, 17), (8, 10), (19, 7)];

/// Desk-scale version of the fan/heat-exchanger setup: reference array,
/// 1.44 m focus grid at 0.05 m spacing, rigid wall and box, and the four
/// [`DESK_SOURCE_CELLS`] as unit sources.
pub fn desk_scale_scene<T: Real>(reflection: T) -> Scene<T> {
    let grid = centered_box_grid(T::lit(1.44), T::lit(0.05)).expect("valid grid");
    let sources = DESK_SOURCE_CELLS
        .iter()
        .map(|&(i, j)| Source {
            position: grid.point_ij(i, j),
            amplitude: Cplx::new(T::one(), T::zero()),
        })
        .collect();
    Scene::new(
        reference_array(),
        grid,
        wall_box_reflectors(reflection),
        T::lit(DEFAULT_SPEED_OF_SOUND),
        sources,
    )
    .expect("desk-scale scene is valid")
    .0
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy_axes() -> (Vec3<f64>, Vec3<f64>) {
        (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0))
    }

    #[test]
    fn reference_layout_has_64_mics() {
        let a = build_ring_array::<f64>(&[1.6, 0.8], &[40, 24], &[0.8, 1.3]).unwrap();
        assert_eq!(a.len(), 64);
        assert!(a.duplicate_pairs().is_empty());
        assert_eq!(a.positions[0], Vec3::new(0.8, 0.0, 0.8));
        assert_eq!(a.positions[40], Vec3::new(0.4, 0.0, 1.3));
        for p in &a.positions[..40] {
            assert!((p.x.hypot(p.y) - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn single_mic_ring() {
        let a = build_ring_array::<f64>(&[2.0], &[1], &[0.0]).unwrap();
        assert_eq!(a.positions, vec![Vec3::new(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn four_mic_ring_is_symmetric() {
        let a = build_ring_array::<f64>(&[2.0], &[4], &[0.0]).unwrap();
        let expected = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)];
        for (p, (x, y)) in a.positions.iter().zip(expected) {
            assert!((p.x - x).abs() < 1e-15 && (p.y - y).abs() < 1e-15);
            assert!((p.norm() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ring_errors() {
        assert!(matches!(
            build_ring_array(&[1.0, 2.0], &[3], &[0.0, 0.0]),
            Err(SceneError::MismatchedLengths { .. })
        ));
        assert!(matches!(
            build_ring_array(&[-1.0], &[3], &[0.0]),
            Err(SceneError::NonPositiveDiameter { ring: 0, .. })
        ));
        assert!(matches!(
            build_ring_array(&[1.0], &[0], &[0.0]),
            Err(SceneError::ZeroCount { ring: 0 })
        ));
    }

    #[test]
    fn grid_counts() {
        let g = build_focus_grid(Vec3::zero(), xy_axes(), (1.44, 1.44), 0.01).unwrap();
        assert_eq!((g.nx, g.ny, g.len()), (145, 145, 21025));
        let g = build_focus_grid(Vec3::zero(), xy_axes(), (0.0, 0.0), 0.01).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.point(0), Vec3::zero());
        let g = build_focus_grid(Vec3::zero(), xy_axes(), (0.02, 0.01), 0.01).unwrap();
        assert_eq!((g.nx, g.ny), (3, 2));
        let g = build_focus_grid(Vec3::zero(), xy_axes(), (1.44, 1.44), 0.05).unwrap();
        assert_eq!((g.nx, g.ny), (29, 29));
    }

    #[test]
    fn grid_errors() {
        assert!(matches!(
            build_focus_grid(Vec3::zero(), xy_axes(), (1.0, 1.0), 0.0),
            Err(SceneError::NonPositiveSpacing(_))
        ));
        assert!(matches!(
            build_focus_grid(Vec3::zero(), xy_axes(), (-1.0, 1.0), 0.1),
            Err(SceneError::InvalidExtent(..))
        ));
        let skew = (Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.1, 1.0, 0.0));
        assert_eq!(
            build_focus_grid(Vec3::zero(), skew, (1.0, 1.0), 0.1),
            Err(SceneError::AxesNotOrthonormal)
        );
    }

    #[test]
    fn grid_coordinates_follow_row_major_layout() {
        let origin = Vec3::new(-0.5, -0.25, -0.03);
        let g = build_focus_grid(origin, xy_axes(), (1.0, 0.5), 0.25).unwrap();
        assert_eq!((g.nx, g.ny), (5, 3));
        assert_eq!(g.point(g.index(3, 2)), Vec3::new(0.25, 0.25, -0.03));
        assert_eq!(g.ij(7), (2, 1));
        assert!(g.is_boundary(0) && g.is_boundary(4) && !g.is_boundary(7));
    }

    #[test]
    fn mask_box_selects_interior() {
        let g = centered_box_grid(1.44, 0.05).unwrap();
        let mask = g.mask.as_ref().unwrap();
        // |x| ≤ 0.70 always inside 0.77; |y| ≤ 0.57 keeps rows j = 3..=25.
        assert_eq!(mask.iter().filter(|&&b| b).count(), 29 * 23);
    }

    #[test]
    fn duplicate_mic_is_diagnosed() {
        let mut scene = desk_scale_scene(1.0);
        scene.array.positions[5] = scene.array.positions[3];
        let diags = validate_scene(&scene);
        assert!(diags.iter().any(|d| d.code == DiagnosticCode::DuplicateMic));
    }

    #[test]
    fn desk_scene_is_clean() {
        let scene = desk_scale_scene(1.0);
        assert!(validate_scene(&scene).is_empty());
    }

    #[test]
    fn off_grid_source_warns() {
        let mut scene = desk_scale_scene::<f64>(1.0);
        let g = build_focus_grid(Vec3::zero(), xy_axes(), (1.0, 1.0), 0.01).unwrap();
        scene.grid = Arc::new(g);
        scene.reflectors = ReflectorSet::empty();
        scene.sources = vec![Source {
            position: Vec3::new(0.504, 0.3, 0.0),
            amplitude: Cplx::new(1.0, 0.0),
        }];
        let diags = validate_scene(&scene);
        assert_eq!(diags.len(), 1);
        assert_eq!(diags[0].code, DiagnosticCode::SourceOffGrid);
        assert_eq!(diags[0].severity, Severity::Warning);
        assert_eq!(scene.source_grid_indices()[0].0, scene.grid.index(50, 30));
    }

    #[test]
    fn other_invariants_are_diagnosed() {
        let mut scene = desk_scale_scene::<f64>(1.0);
        scene.speed_of_sound = 0.0;
        scene.reflectors.panels[1].reflection = 1.5;
        scene.reflectors.panels[2].edge_v = Vec3::new(0.0, 0.1, 0.46);
        scene.array.positions[0] = Vec3::new(0.0, 0.0, 0.0);
        let codes: Vec<_> = validate_scene(&scene).iter().map(|d| d.code).collect();
        for code in [
            DiagnosticCode::NonPositiveSpeed,
            DiagnosticCode::ReflectionOutOfRange,
            DiagnosticCode::PanelNotOrthogonal,
            DiagnosticCode::MicOnReflector,
        ] {
            assert!(codes.contains(&code), "missing {code:?} in {codes:?}");
        }
    }

    #[test]
    fn mirror_reflects_across_plane() {
        let floor = Reflector::new(
            Vec3::new(-1.0, -1.0, 0.0),
            Vec3::new(2.0, 0.0, 0.0),
            Vec3::new(0.0, 2.0, 0.0),
            1.0,
        );
        assert_eq!(floor.mirror(Vec3::new(0.2, 0.3, 1.0)), Vec3::new(0.2, 0.3, -1.0));
        assert!(floor.touches(Vec3::new(0.5, 0.5, 0.0)));
        assert!(!floor.touches(Vec3::new(1.5, 0.5, 0.0)));
    }

    #[test]
    fn config_builds_scene() {
        let cfg = SceneConfig {
            speed_of_sound: 343.0,
            array: ArrayConfig {
                rings: Some(RingConfig {
                    diameters: vec![1.6, 0.8],
                    counts: vec![40, 24],
                    plane_offsets: vec![0.8, 1.3],
                }),
                positions: vec![[0.0, 0.0, 2.0]],
            },
            grid: GridConfig {
                origin: [-0.7, -0.7, 0.03],
                axis_u: default_axis_u(),
                axis_v: default_axis_v(),
                extent: [1.44, 1.44],
                spacing: 0.05,
                mask_box: None,
            },
            reflectors: vec![],
            sources: vec![SourceConfig {
                position: [0.0, 0.0, 0.03],
                amplitude: default_amplitude(),
            }],
        };
        let (scene, diags) = cfg.build::<f64>().unwrap();
        assert_eq!(scene.array.len(), 65);
        assert_eq!(scene.grid.len(), 841);
        assert!(diags.is_empty(), "{diags:?}");
    }

    #[test]
    fn f32_scene_builds() {
        let scene = desk_scale_scene::<f32>(1.0);
        assert_eq!(scene.array.len(), 64);
        assert_eq!(scene.grid.len(), 841);
    }
}
