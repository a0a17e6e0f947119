use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::commands::{
    create_dir, metric_rows, read_config, reconstruct_sample, refine_and_report, render_views, resolve_seed,
    retrieve_for, train_model, write_json, write_metrics, write_recon, write_views,
};
use super::CliError;
use crate::refine::PpoConfig;
use crate::retrieval::{load_kb, save_kb, toy_kb, Category};
use crate::rgan::{save_dataset, RganConfig, Sample, FRAME_MARGIN};
use crate::scan::io::load_mesh;
use crate::scan::{backproject, mesh_to_solid_grid, object_frame, DESK_IMAGE_SIZE, RIG_RADIUS, RIG_VIEWS};
use crate::voxel::{devoxelize, voxelize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub views: usize,
    pub radius: f64,
    pub image_size: usize,
}

impl Default for ScanSection {
    fn default() -> Self {
        Self {
            views: RIG_VIEWS,
            radius: RIG_RADIUS,
            image_size: DESK_IMAGE_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub m: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { m: 32 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveSection {
    /// Knowledge-base manifest; a generated toy base is used when absent.
    pub kb_path: Option<PathBuf>,
    pub category: Category,
}

impl Default for RetrieveSection {
    fn default() -> Self {
        Self {
            kb_path: None,
            category: Category::Lift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    pub mesh: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub scan: ScanSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub train: RganConfig,
    #[serde(default)]
    pub retrieve: RetrieveSection,
    #[serde(default)]
    pub refine: PpoConfig,
    pub io: IoSection,
}

impl PipelineConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let cfg: PipelineConfig = read_config(path)?;
        Ok(cfg.resolved(path.parent().unwrap_or(Path::new(""))))
    }

    fn resolved(mut self, base: &Path) -> Self {
        let resolve = |p: &Path| if p.is_relative() { base.join(p) } else { p.to_path_buf() };
        self.io.mesh = resolve(&self.io.mesh);
        self.io.out_dir = resolve(&self.io.out_dir);
        self.retrieve.kb_path = self.retrieve.kb_path.as_deref().map(resolve);
        self
    }
}

/// Render, dataset, train, reconstruct, evaluate, retrieve and refine one
/// mesh. Returns every file written; `pipeline.json` records the effective
/// configuration with paths as written.
pub fn run_pipeline(config: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut recorded: PipelineConfig = read_config(config)?;
    let seed = resolve_seed(None, recorded.io.seed)?;
    let m = recorded.grid.m;
    recorded.io.seed = seed;
    recorded.train.grid_dim = m;
    recorded.train.seed = seed;
    recorded.refine.seed = seed;
    let cfg = recorded.clone().resolved(config.parent().unwrap_or(Path::new("")));
    let out = cfg.io.out_dir.clone();
    let name = cfg
        .io
        .mesh
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into());
    let mut written = Vec::new();

    let mesh = load_mesh(&cfg.io.mesh)?;
    let (cams, imgs) = render_views(&mesh, cfg.scan.views, cfg.scan.radius, cfg.scan.image_size)?;
    create_dir(&out)?;
    written.extend(write_views(&out.join("render"), &cams, &imgs)?);
    eprintln!("rendered {} views", imgs.len());

    let frame = object_frame(&mesh, m, FRAME_MARGIN)?;
    let truth = mesh_to_solid_grid(&mesh, frame)?;
    let views = cams
        .iter()
        .zip(&imgs)
        .map(|(c, img)| Ok(voxelize(&backproject(img, c)?, frame).grid))
        .collect::<Result<Vec<_>, CliError>>()?;
    let sample = Sample {
        name: name.clone(),
        views,
        truth,
    };
    let data_dir = out.join("dataset");
    create_dir(&data_dir)?;
    save_dataset(&data_dir, std::slice::from_ref(&sample))?;
    written.push(data_dir.join("dataset.json"));

    let (model, files) = train_model(cfg.train.clone(), std::slice::from_ref(&sample), &out.join("model"))?;
    written.extend(files);

    let recon = reconstruct_sample(&model, &sample, None)?;
    written.extend(write_recon(&out.join("recon"), &name, &recon)?);

    let metrics = out.join("metrics.csv");
    write_metrics(&metrics, &metric_rows(&[(name.clone(), recon.clone(), &sample.truth)], &[])?)?;
    written.push(metrics);

    let kb = match &cfg.retrieve.kb_path {
        Some(p) => load_kb(p)?,
        None => {
            let kb = toy_kb(m, seed)?;
            let p = out.join("kb").join("kb.json");
            save_kb(&kb, &p)?;
            written.push(p);
            kb
        }
    };
    let retrieval = retrieve_for(&devoxelize(&recon), cfg.retrieve.category, &kb)?;
    let retrieval_path = out.join("retrieval.json");
    write_json(&retrieval_path, &retrieval)?;
    written.push(retrieval_path);
    eprintln!("retrieved {} (d' = {:.6})", retrieval.entry_id, retrieval.d_prime);

    let (outcome, files) = refine_and_report(
        &recon,
        &name,
        &retrieval,
        cfg.retrieve.category,
        &cfg.refine,
        &out.join("refine.csv"),
    )?;
    written.extend(files);
    eprintln!("refinement eval success {:.3}", outcome.eval_success_rate);

    let manifest = out.join("pipeline.json");
    write_json(&manifest, &recorded)?;
    written.push(manifest);
    Ok(written)
}
