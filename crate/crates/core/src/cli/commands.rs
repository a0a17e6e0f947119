use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{env_seed, CliError};
use crate::refine::{refine_grasp, write_report, PpoConfig, RefineOutcome, ReportRow};
use crate::retrieval::{load_kb, retrieve as retrieve_entry, transfer_strategy, Category, GraspStrategy, KnowledgeBase};
use crate::rgan::{load_dataset, perturbed_toy_dataset, sample_from_mesh, save_dataset, toy_dataset, write_log, Rgan, RganConfig, Sample};
use crate::scan::io::{load_mesh, write_depth};
use crate::scan::{hemisphere_views, mesh_center, render_depth, Camera, DepthImage, TriangleMesh, DEFAULT_FOV};
use crate::voxel::io::{read_grid, save_ply, write_grid};
use crate::voxel::{devoxelize, MetricReport, PointCloud, VoxelGrid};

pub(crate) fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value).map_err(|e| CliError::io(path, e))?;
    std::fs::write(path, body + "\n").map_err(|e| CliError::io(path, e))
}

pub(crate) fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::io(path, e))
}

/// Configuration files: unreadable is an I/O failure, malformed is a usage error.
pub(crate) fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

/// `--seed`, then the environment, then the configured value.
pub(crate) fn resolve_seed(flag: Option<u64>, configured: u64) -> Result<u64, CliError> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(configured),
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "object".into())
}

pub(crate) fn render_views(
    mesh: &TriangleMesh,
    views: usize,
    radius: f64,
    size: usize,
) -> Result<(Vec<Camera>, Vec<DepthImage>), CliError> {
    let center = mesh_center(mesh).ok_or_else(|| CliError::Domain("mesh has no triangles".into()))?;
    let cams = hemisphere_views(views, radius, center, size, DEFAULT_FOV)?;
    let imgs = cams
        .iter()
        .map(|c| render_depth(mesh, c))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((cams, imgs))
}

pub(crate) fn write_views(dir: &Path, cams: &[Camera], imgs: &[DepthImage]) -> Result<Vec<PathBuf>, CliError> {
    create_dir(dir)?;
    let mut written = Vec::with_capacity(imgs.len() + 1);
    for (i, img) in imgs.iter().enumerate() {
        let p = dir.join(format!("view_{i:03}.dpt"));
        write_depth(&p, img)?;
        written.push(p);
    }
    let p = dir.join("cameras.json");
    write_json(&p, &cams)?;
    written.push(p);
    Ok(written)
}

pub fn render(mesh: &Path, out_dir: &Path, views: usize, radius: f64, size: usize) -> Result<(), CliError> {
    let mesh = load_mesh(mesh)?;
    let (cams, imgs) = render_views(&mesh, views, radius, size)?;
    write_views(out_dir, &cams, &imgs)?;
    println!("wrote {} views to {}", imgs.len(), out_dir.display());
    Ok(())
}

pub fn dataset(
    out_dir: &Path,
    meshes: &[PathBuf],
    m: usize,
    views: usize,
    size: usize,
    perturb: Option<u64>,
) -> Result<(), CliError> {
    let samples: Vec<Sample> = if meshes.is_empty() {
        match perturb {
            Some(seed) => perturbed_toy_dataset(m, views, size, seed, 0.2)?,
            None => toy_dataset(m, views, size)?,
        }
    } else {
        meshes
            .iter()
            .map(|p| Ok(sample_from_mesh(&stem(p), &load_mesh(p)?, m, views, size)?))
            .collect::<Result<_, CliError>>()?
    };
    create_dir(out_dir)?;
    save_dataset(out_dir, &samples)?;
    println!("wrote {} samples to {}", samples.len(), out_dir.display());
    Ok(())
}

pub(crate) fn train_model(cfg: RganConfig, data: &[Sample], out_dir: &Path) -> Result<(Rgan, Vec<PathBuf>), CliError> {
    let mut model = Rgan::new(cfg)?;
    let log = model.train(data, |_, _| Ok(()))?;
    create_dir(out_dir)?;
    let ckpt = out_dir.join("model.tnsr");
    model.save(&ckpt)?;
    let log_path = out_dir.join("train_log.csv");
    write_log(&log_path, &log)?;
    if let Some(last) = log.last() {
        println!("epoch {} mean train IoU {:.4}", last.epoch, last.mean_train_iou);
    }
    Ok((model, vec![ckpt.clone(), ckpt.with_extension("json"), log_path]))
}

pub fn train(
    dataset: &Path,
    out_dir: &Path,
    config: Option<&Path>,
    epochs: Option<usize>,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let configured = config.map(read_config::<RganConfig>).transpose()?;
    let seed = resolve_seed(seed, configured.as_ref().map_or(RganConfig::default().seed, |c| c.seed))?;
    let data = load_dataset(dataset)?;
    let mut cfg = configured.unwrap_or_else(|| RganConfig {
        grid_dim: data.first().map_or(32, |s| s.truth.dims()[0]),
        ..RganConfig::default()
    });
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.seed = seed;
    train_model(cfg, &data, out_dir).map(|_| ())
}

pub(crate) fn reconstruct_sample(model: &Rgan, s: &Sample, views: Option<usize>) -> Result<VoxelGrid, CliError> {
    let k = views.unwrap_or(model.cfg.max_views).min(s.views.len()).max(1);
    Ok(model.gen.reconstruct(&s.views[..k], 0.5)?)
}

pub(crate) fn write_recon(dir: &Path, name: &str, grid: &VoxelGrid) -> Result<Vec<PathBuf>, CliError> {
    create_dir(dir)?;
    let vxg = dir.join(format!("{name}.vxg"));
    write_grid(&vxg, grid)?;
    let ply = dir.join(format!("{name}.ply"));
    save_ply(&ply, &devoxelize(grid))?;
    Ok(vec![vxg, ply])
}

pub fn reconstruct(checkpoint: &Path, dataset: &Path, out_dir: &Path, views: Option<usize>) -> Result<(), CliError> {
    let model = Rgan::load(checkpoint)?;
    let data = load_dataset(dataset)?;
    for s in &data {
        let grid = reconstruct_sample(&model, s, views)?;
        write_recon(out_dir, &s.name, &grid)?;
    }
    println!("wrote {} reconstructions to {}", data.len(), out_dir.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub row: &'static str,
    pub name: String,
    pub iou: f64,
    pub hit_rate: f64,
    pub accuracy: f64,
}

fn mean_row(row: &'static str, name: String, rows: &[&MetricRow]) -> MetricRow {
    let n = rows.len() as f64;
    MetricRow {
        row,
        name,
        iou: rows.iter().map(|r| r.iou).sum::<f64>() / n,
        hit_rate: rows.iter().map(|r| r.hit_rate).sum::<f64>() / n,
        accuracy: rows.iter().map(|r| r.accuracy).sum::<f64>() / n,
    }
}

/// Object rows, then unweighted category means (sorted by category), then
/// the overall mean.
pub(crate) fn metric_rows(
    pairs: &[(String, VoxelGrid, &VoxelGrid)],
    categories: &[(String, String)],
) -> Result<Vec<MetricRow>, CliError> {
    if pairs.is_empty() {
        return Err(CliError::Domain("no objects to evaluate".into()));
    }
    let mut rows = Vec::with_capacity(pairs.len() + 1);
    for (name, recon, truth) in pairs {
        let m = MetricReport::compute(recon, truth).map_err(|e| CliError::Domain(format!("{name}: {e}")))?;
        rows.push(MetricRow {
            row: "object",
            name: name.clone(),
            iou: m.iou,
            hit_rate: m.hit_rate,
            accuracy: m.accuracy,
        });
    }
    let mut groups: BTreeMap<&str, Vec<&MetricRow>> = BTreeMap::new();
    for (obj, cat) in categories {
        let r = rows
            .iter()
            .find(|r| &r.name == obj)
            .ok_or_else(|| CliError::Usage(format!("category assigned to unknown object {obj:?}")))?;
        groups.entry(cat.as_str()).or_default().push(r);
    }
    let mut out: Vec<MetricRow> = groups
        .iter()
        .map(|(cat, members)| mean_row("category", cat.to_string(), members))
        .collect();
    let all: Vec<&MetricRow> = rows.iter().collect();
    out.push(mean_row("mean", "all".into(), &all));
    rows.extend(out);
    Ok(rows)
}

pub(crate) fn write_metrics(path: &Path, rows: &[MetricRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn evaluate(
    recon_dir: &Path,
    dataset: &Path,
    out: &Path,
    categories: &[(String, String)],
) -> Result<(), CliError> {
    let data = load_dataset(dataset)?;
    let pairs = data
        .iter()
        .map(|s| Ok((s.name.clone(), read_grid(recon_dir.join(format!("{}.vxg", s.name)))?, &s.truth)))
        .collect::<Result<Vec<_>, CliError>>()?;
    let rows = metric_rows(&pairs, categories)?;
    write_metrics(out, &rows)?;
    let mean = rows.last().expect("mean row");
    println!(
        "IoU {:.4} HR {:.4} accuracy {:.4} over {} objects",
        mean.iou,
        mean.hit_rate,
        mean.accuracy,
        pairs.len()
    );
    Ok(())
}

/// What `retrieve` writes and `refine` reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalOutput {
    pub entry_id: String,
    pub d_prime: f64,
    pub transferred_strategy: GraspStrategy,
}

pub(crate) fn retrieve_for(cloud: &PointCloud, category: Category, kb: &KnowledgeBase) -> Result<RetrievalOutput, CliError> {
    let (entry, d) = retrieve_entry(cloud, category, kb)?;
    Ok(RetrievalOutput {
        entry_id: entry.id.clone(),
        d_prime: d,
        transferred_strategy: transfer_strategy(entry, cloud)?,
    })
}

pub fn retrieve(recon: &Path, category: Category, kb: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let cloud = crate::voxel::io::load_ply(recon)?;
    let kb = load_kb(kb)?;
    let result = retrieve_for(&cloud, category, &kb)?;
    match out {
        Some(p) => write_json(p, &result),
        None => {
            println!("{}", serde_json::to_string_pretty(&result).expect("serializable"));
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
struct RefinedStrategy {
    strategy: GraspStrategy,
    train_success_rate: f64,
    eval_success_rate: f64,
}

/// Runs refinement and writes the report CSV at `out` plus the refined
/// strategy next to it as JSON.
pub(crate) fn refine_and_report(
    grid: &VoxelGrid,
    object_id: &str,
    retrieval: &RetrievalOutput,
    category: Category,
    cfg: &PpoConfig,
    out: &Path,
) -> Result<(RefineOutcome, Vec<PathBuf>), CliError> {
    let cloud = devoxelize(grid);
    let outcome = refine_grasp(&cloud, grid, &retrieval.transferred_strategy, cfg)?;
    write_report(
        out,
        &[ReportRow {
            task: category.as_str().into(),
            object_id: object_id.into(),
            episodes: cfg.episodes,
            train_success_rate: outcome.train_success_rate,
            eval_success_rate: outcome.eval_success_rate,
            chamfer_d_prime: retrieval.d_prime,
        }],
    )?;
    let side = out.with_extension("json");
    write_json(
        &side,
        &RefinedStrategy {
            strategy: outcome.strategy,
            train_success_rate: outcome.train_success_rate,
            eval_success_rate: outcome.eval_success_rate,
        },
    )?;
    Ok((outcome, vec![out.to_path_buf(), side]))
}

pub fn refine(
    recon: &Path,
    retrieval: &Path,
    category: Category,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg = match config {
        Some(p) => read_config::<PpoConfig>(p)?,
        None => PpoConfig::default(),
    };
    cfg.seed = resolve_seed(seed, cfg.seed)?;
    let grid = read_grid(recon)?;
    let r: RetrievalOutput = read_json(retrieval)?;
    let (outcome, _) = refine_and_report(&grid, &stem(recon), &r, category, &cfg, out)?;
    println!(
        "train success {:.3} eval success {:.3}",
        outcome.train_success_rate, outcome.eval_success_rate
    );
    Ok(())
}
