//! Run configuration. One TOML file describes a full pipeline run; command
//! line flags override individual fields after loading.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use gfbeam::csm::{Normalization, Window};
use gfbeam::scene::{desk_scale_scene, BoxConfig, SceneConfig};
use gfbeam::steering::{Preset, SteeringParams};
use gfbeam::Scene64;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scene: SceneSource,
    pub gf: GfSection,
    /// Green's functions used to build the steering vectors. Defaults to `gf`,
    /// which gives the matching case.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steering_gf: Option<GfSection>,
    pub csm: CsmSection,
    #[serde(default)]
    pub steering: SteeringSection,
    #[serde(default)]
    pub frequencies: FrequencySpec,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Overrides the scene's evaluation mask. An empty table disables it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    #[serde(default)]
    pub diagonal_removal: bool,
    #[serde(default = "default_step")]
    pub step_db: f64,
    #[serde(default)]
    pub map_format: MapFormat,
}

fn default_output() -> PathBuf {
    PathBuf::from("gfbeam-run")
}

fn default_step() -> f64 {
    gfbeam::metrics::DEFAULT_STEP_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSource {
    /// Scene file, relative to the run config.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Built-in scene. Only `"desk"` exists.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Reflection coefficient of the desk preset's panels.
    #[serde(default = "one")]
    pub reflection: f64,
}

fn one() -> f64 {
    1.0
}

/// Exactly one of the three keys must be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GfSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freefield: Option<Empty>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ism: Option<IsmConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub import: Option<ImportConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Empty {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsmConfig {
    #[serde(default = "default_order")]
    pub max_order: usize,
}

fn default_order() -> usize {
    gfbeam::greens::DEFAULT_MAX_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportConfig {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub enum GfChoice {
    FreeField,
    Ism { max_order: usize },
    Import { path: PathBuf },
}

impl GfSection {
    pub fn choice(&self, what: &str) -> Result<GfChoice> {
        let mut found = Vec::new();
        if self.freefield.is_some() {
            found.push(GfChoice::FreeField);
        }
        if let Some(i) = &self.ism {
            found.push(GfChoice::Ism { max_order: i.max_order });
        }
        if let Some(i) = &self.import {
            found.push(GfChoice::Import { path: i.path.clone() });
        }
        match found.len() {
            1 => Ok(found.remove(0)),
            0 => bail!("[{what}] needs one of freefield, ism or import"),
            _ => bail!("[{what}] must name exactly one of freefield, ism or import"),
        }
    }
}

/// Exactly one of `synthetic` and `wav` must be present.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsmSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wav: Option<WavConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    /// Source cells as `[i, j]` grid coordinates. Defaults to the grid points
    /// nearest the scene's sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<[usize; 2]>>,
    /// Complex amplitude `[re, im]` applied to every source.
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavConfig {
    /// Multichannel WAV (or CSV with `sample_rate`), relative to the run config.
    pub path: PathBuf,
    #[serde(default = "one")]
    pub pascal_per_unit: f64,
    /// Needed only for CSV records.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate: Option<f64>,
    #[serde(default)]
    pub welch: WelchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WelchConfig {
    pub block_len: usize,
    pub overlap: f64,
    pub window: Window,
    pub normalization: Normalization,
}

impl Default for WelchConfig {
    fn default() -> Self {
        Self {
            block_len: 4096,
            overlap: 0.5,
            window: Window::Hann,
            normalization: Normalization::AmplitudeCorrected,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CsmChoice<'a> {
    Synthetic(&'a SyntheticConfig),
    Wav(&'a WavConfig),
}

impl CsmSection {
    pub fn choice(&self) -> Result<CsmChoice<'_>> {
        match (&self.synthetic, &self.wav) {
            (Some(s), None) => Ok(CsmChoice::Synthetic(s)),
            (None, Some(w)) => Ok(CsmChoice::Wav(w)),
            (None, None) => bail!("[csm] needs one of synthetic or wav"),
            (Some(_), Some(_)) => bail!("[csm] must name exactly one of synthetic or wav, not both"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteeringSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<Preset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for SteeringSection {
    fn default() -> Self {
        Self {
            preset: Some(Preset::I),
            alpha: None,
            beta: None,
        }
    }
}

impl SteeringSection {
    pub fn params(&self) -> Result<SteeringParams<f64>> {
        match (self.preset, self.alpha, self.beta) {
            (Some(p), None, None) => Ok(SteeringParams::preset(p)),
            (None, Some(a), Some(b)) => Ok(SteeringParams::custom(a, b)?),
            _ => bail!("[steering] takes either a preset or both alpha and beta"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencySpec {
    /// Explicit list in Hz.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub list: Option<Vec<f64>>,
    /// `[start, stop, step]`, stop included.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[f64; 3]>,
}

/// 120 to 2040 Hz every 120 Hz, with 60 Hz spacing between 480 and 1080 Hz.
pub fn default_sweep() -> Vec<f64> {
    let mut f: Vec<f64> = (1..=17).map(|k| 120.0 * k as f64).collect();
    f.extend((0..5).map(|k| 540.0 + 120.0 * k as f64));
    f.sort_by(f64::total_cmp);
    f
}

impl FrequencySpec {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        let freqs = match (&self.list, &self.range) {
            (Some(l), None) => l.clone(),
            (None, Some([start, stop, step])) => {
                if !(step > &0.0) || stop < start {
                    bail!("frequency range needs step > 0 and stop >= start");
                }
                let n = ((stop - start) / step + 1e-9).floor() as usize;
                (0..=n).map(|k| start + step * k as f64).collect()
            }
            (None, None) => default_sweep(),
            (Some(_), Some(_)) => bail!("[frequencies] takes either list or range"),
        };
        if freqs.is_empty() {
            bail!("no frequencies selected");
        }
        if let Some(f) = freqs.iter().find(|f| !(**f > 0.0) || !f.is_finite()) {
            bail!("frequency {f} Hz is not positive");
        }
        Ok(freqs)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_box: Option<BoxConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapFormat {
    Binary,
    Csv,
    #[default]
    Both,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("config: parsing {}", path.display()))?;
        cfg.rebase(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes relative input paths relative to the config file's directory.
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(p) = &mut self.scene.path {
            fix(p);
        }
        for gf in [Some(&mut self.gf), self.steering_gf.as_mut()].into_iter().flatten() {
            if let Some(i) = &mut gf.import {
                fix(&mut i.path);
            }
        }
        if let Some(w) = &mut self.csm.wav {
            fix(&mut w.path);
        }
    }

    /// Checks every "exactly one of" rule up front so errors surface before
    /// any computation.
    pub fn validate(&self) -> Result<()> {
        match (&self.scene.path, &self.scene.preset) {
            (Some(_), None) => {}
            (None, Some(p)) if p == "desk" => {}
            (None, Some(p)) => bail!("config: unknown scene preset {p:?} (only \"desk\")"),
            _ => bail!("config: [scene] takes either path or preset"),
        }
        self.gf.choice("gf").context("config")?;
        if let Some(s) = &self.steering_gf {
            s.choice("steering_gf").context("config")?;
        }
        self.csm.choice().context("config")?;
        self.steering.params().context("config")?;
        self.frequencies.resolve().context("config")?;
        if !(self.step_db > 0.0) {
            bail!("config: step_db must be positive");
        }
        Ok(())
    }

    pub fn build_scene(&self) -> Result<Scene64> {
        let mut scene = match (&self.scene.path, &self.scene.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("scene: reading {}", path.display()))?;
                let sc: SceneConfig =
                    toml::from_str(&text).with_context(|| format!("scene: parsing {}", path.display()))?;
                let (scene, diags) = sc.build::<f64>().context("scene")?;
                for d in diags {
                    eprintln!("scene {:?} {}: {}", d.severity, d.code.as_str(), d.message);
                }
                scene
            }
            _ => desk_scale_scene::<f64>(self.scene.reflection),
        };
        if let Some(mask) = &self.mask {
            let mut grid = (*scene.grid).clone();
            grid.mask = None;
            if let Some(b) = &mask.mask_box {
                let v = |a: [f64; 3]| gfbeam::Vec3::new(a[0], a[1], a[2]);
                grid = grid.with_mask_box(v(b.min), v(b.max));
            }
            scene.grid = std::sync::Arc::new(grid);
        }
        Ok(scene)
    }
}
