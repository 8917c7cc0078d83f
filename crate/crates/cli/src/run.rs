use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use gfbeam::beamform::{dirty_maps, write_map_binary, write_map_csv, SourceMap};
use gfbeam::csm::{read_record_csv, read_wav, remove_diagonal, synthetic_csm, welch_csm_at, Csm, WelchParams};
use gfbeam::greens::{evaluate_gf_tensor, import_gf_file, FreeField, GfTensor, ImageSource};
use gfbeam::metrics::{aggregate, evaluate_map, AggregateCriteria, MapCriteria};
use gfbeam::steering::SteeringSet;
use gfbeam::{Cplx, FocusGrid64, Scene64};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{CsmChoice, GfChoice, MapFormat, RunConfig};

pub const CRITERIA_FILE: &str = "criteria.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceInfo {
    pub index: usize,
    pub cell: [usize; 2],
    pub position: [f64; 3],
    pub true_power: f64,
}

/// Everything `compare` needs from a run.
#[derive(Debug, Serialize)]
pub struct CriteriaReport {
    pub speed_of_sound: f64,
    pub steering: String,
    pub gf_provenance: &'static str,
    pub steering_provenance: &'static str,
    pub frequencies: Vec<f64>,
    pub sources: Vec<SourceInfo>,
    pub maps: Vec<MapCriteria<f64>>,
    pub aggregate: Vec<AggregateCriteria<f64>>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    tool_version: &'static str,
    library_version: &'static str,
    config_sha256: String,
    config: &'a RunConfig,
    gf_provenance: &'static str,
    steering_provenance: &'static str,
    steering: String,
    n_frequencies: usize,
    n_sources: usize,
    n_maps: usize,
    files: BTreeMap<String, String>,
}

/// Maps and criteria for one synthetic source.
type SourceResult = (Vec<SourceMap<f64>>, Vec<MapCriteria<f64>>);

pub struct RunSummary {
    pub output_dir: PathBuf,
    pub n_maps: usize,
    pub n_frequencies: usize,
    pub n_sources: usize,
}

pub fn build_gf(choice: &GfChoice, scene: &Scene64, freqs: &[f64]) -> Result<GfTensor<f64>> {
    let c = scene.speed_of_sound;
    let gf = match choice {
        GfChoice::FreeField => evaluate_gf_tensor(&FreeField::new(c), scene, freqs),
        GfChoice::Ism { max_order } => {
            evaluate_gf_tensor(&ImageSource::new(scene.reflectors.clone(), *max_order, c), scene, freqs)
        }
        GfChoice::Import { path } => import_gf_file(path, scene, freqs),
    };
    gf.context("greens")
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn source_info(grid: &FocusGrid64, index: usize, true_power: f64) -> SourceInfo {
    let (i, j) = grid.ij(index);
    let p = grid.point(index);
    SourceInfo {
        index,
        cell: [i, j],
        position: [p.x, p.y, p.z],
        true_power,
    }
}

fn map_stem(f: f64, source: Option<usize>) -> String {
    match source {
        Some(k) => format!("src{k:02}_f{f}Hz"),
        None => format!("f{f}Hz"),
    }
}

fn write_maps(dir: &Path, maps: &[SourceMap<f64>], source: Option<usize>, format: MapFormat) -> Result<()> {
    for map in maps {
        let stem = map_stem(map.frequency, source);
        if format != MapFormat::Csv {
            let file = File::create(dir.join(format!("{stem}.map")))?;
            write_map_binary(std::slice::from_ref(map), BufWriter::new(file)).context("beamform")?;
        }
        if format != MapFormat::Binary {
            let file = File::create(dir.join(format!("{stem}.csv")))?;
            write_map_csv(map, BufWriter::new(file)).context("beamform")?;
        }
    }
    Ok(())
}

fn maybe_remove_diagonal(csm: Csm<f64>, on: bool) -> Csm<f64> {
    if on {
        remove_diagonal(&csm)
    } else {
        csm
    }
}

fn criteria_csv(maps: &[MapCriteria<f64>]) -> String {
    let mut out = String::from("frequency,source_index,spatial_deviation,level_error,resolution_b,msr,spr,flags\n");
    for m in maps {
        let flags: Vec<&str> = m.flags.iter().map(|f| f.as_str()).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.frequency,
            m.source_index,
            m.spatial_deviation,
            m.level_error,
            m.resolution_b,
            m.msr,
            m.spr,
            flags.join("|")
        ));
    }
    out
}

pub fn run(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let scene = cfg.build_scene()?;
    let grid: Arc<FocusGrid64> = scene.grid.clone();
    let freqs = cfg.frequencies.resolve()?;
    let params = cfg.steering.params()?;

    let gf = build_gf(&cfg.gf.choice("gf")?, &scene, &freqs)?;
    let steer_gf = match &cfg.steering_gf {
        Some(s) => build_gf(&s.choice("steering_gf")?, &scene, &freqs)?,
        None => gf.clone(),
    };
    let steering = SteeringSet::build(&steer_gf, params).context("steering")?;

    let out = &cfg.output_dir;
    let maps_dir = out.join("maps");
    fs::create_dir_all(&maps_dir).with_context(|| format!("creating {}", maps_dir.display()))?;

    // One list of criteria per source position, each over the full frequency axis.
    let (sources, per_position, n_maps) = match cfg.csm.choice()? {
        CsmChoice::Synthetic(syn) => {
            let indices: Vec<usize> = match &syn.cells {
                Some(cells) => cells
                    .iter()
                    .map(|&[i, j]| {
                        if i >= grid.nx || j >= grid.ny {
                            bail!("config: source cell [{i}, {j}] lies outside the {}x{} grid", grid.nx, grid.ny);
                        }
                        Ok(grid.index(i, j))
                    })
                    .collect::<Result<_>>()?,
                None => scene.source_grid_indices().into_iter().map(|(n, _)| n).collect(),
            };
            if indices.is_empty() {
                bail!("config: synthetic CSM needs source cells or scene sources");
            }
            let amp = Cplx::new(syn.amplitude[0], syn.amplitude[1]);
            let power = amp.norm_sqr();
            let results: Vec<SourceResult> = indices
                .par_iter()
                .map(|&s| {
                    let csm = synthetic_csm(&gf, s, amp).context("csm")?;
                    let csm = maybe_remove_diagonal(csm, cfg.diagonal_removal);
                    let maps = dirty_maps(&csm, &steering, &grid, &freqs).context("beamform")?;
                    let crit = maps
                        .iter()
                        .map(|m| evaluate_map(m, s, power, cfg.step_db).context("metrics"))
                        .collect::<Result<Vec<_>>>()?;
                    Ok((maps, crit))
                })
                .collect::<Result<_>>()?;
            let mut per_position = Vec::new();
            for (k, (maps, crit)) in results.into_iter().enumerate() {
                write_maps(&maps_dir, &maps, Some(k), cfg.map_format)?;
                per_position.push(crit);
            }
            let sources = indices.iter().map(|&s| source_info(&grid, s, power)).collect();
            (sources, per_position, indices.len() * freqs.len())
        }
        CsmChoice::Wav(wav) => {
            let is_csv = wav.path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            let record = if is_csv {
                let fs = wav
                    .sample_rate
                    .context("config: [csm.wav] sample_rate is required for CSV records")?;
                let file = File::open(&wav.path).with_context(|| format!("csm: opening {}", wav.path.display()))?;
                read_record_csv(file, fs).context("csm")?
            } else {
                read_wav(&wav.path, wav.pascal_per_unit).context("csm")?
            };
            if record.n_channels() != scene.array.len() {
                bail!(
                    "csm: record has {} channels but the array has {} microphones",
                    record.n_channels(),
                    scene.array.len()
                );
            }
            let w = &wav.welch;
            let welch = WelchParams::new(w.block_len, w.overlap, w.window, w.normalization).context("csm")?;
            let csm = welch_csm_at(&record, &welch, &freqs).context("csm")?;
            let csm = maybe_remove_diagonal(csm, cfg.diagonal_removal);
            let maps = dirty_maps(&csm, &steering, &grid, &freqs).context("beamform")?;
            write_maps(&maps_dir, &maps, None, cfg.map_format)?;
            // Peak amplitude a gives C = ½|a|² g gᴴ at the source.
            let sources: Vec<SourceInfo> = scene
                .source_grid_indices()
                .into_iter()
                .zip(&scene.sources)
                .map(|((n, _), s)| source_info(&grid, n, 0.5 * s.amplitude.norm_sqr()))
                .collect();
            let per_position = sources
                .par_iter()
                .map(|s| {
                    maps.iter()
                        .map(|m| evaluate_map(m, s.index, s.true_power, cfg.step_db).context("metrics"))
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            (sources, per_position, maps.len())
        }
    };

    let report = CriteriaReport {
        speed_of_sound: scene.speed_of_sound,
        steering: params.label(),
        gf_provenance: gf.provenance.as_str(),
        steering_provenance: steer_gf.provenance.as_str(),
        frequencies: freqs.clone(),
        sources,
        aggregate: aggregate(&per_position).context("metrics")?,
        maps: per_position.into_iter().flatten().collect(),
    };
    let criteria = serde_json::to_string_pretty(&report)?;
    fs::write(out.join(CRITERIA_FILE), &criteria)?;
    fs::write(out.join("criteria.csv"), criteria_csv(&report.maps))?;

    let mut files = BTreeMap::new();
    for entry in walk(out)? {
        let rel = entry.strip_prefix(out).unwrap_or(&entry).to_string_lossy().replace('\\', "/");
        if rel != MANIFEST_FILE {
            files.insert(rel, sha256_hex(&fs::read(&entry)?));
        }
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        tool_version: env!("CARGO_PKG_VERSION"),
        library_version: gfbeam::VERSION,
        config_sha256: sha256_hex(serde_json::to_string(cfg)?.as_bytes()),
        config: cfg,
        gf_provenance: report.gf_provenance,
        steering_provenance: report.steering_provenance,
        steering: report.steering.clone(),
        n_frequencies: freqs.len(),
        n_sources: report.sources.len(),
        n_maps,
        files,
    };
    fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;

    Ok(RunSummary {
        output_dir: out.clone(),
        n_maps,
        n_frequencies: freqs.len(),
        n_sources: report.sources.len(),
    })
}

/// Regular files under `dir`, sorted.
fn walk(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}
