//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on failure.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{brute_chamfer, naive_counts, naive_metrics, random_cloud, random_grid, PRIMITIVES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use voxforge::refine::{refine_grasp, PpoConfig};
use voxforge::retrieval::{chamfer, retrieve, toy_kb, Category, GraspStrategy};
use voxforge::rgan::{perturbed_toy_dataset, toy_dataset, EpochLog, Rgan, RganConfig};
use voxforge::scan::io::save_obj;
use voxforge::scan::shapes::cube;
use voxforge::scan::{mesh_to_solid_grid, object_frame};
use voxforge::voxel::{devoxelize, MetricReport, PointCloud};

const METRIC_PAIRS: usize = 200;
const GRAD_INSTANCES: usize = 20;
const GRAD_TOL: f64 = 1e-4;
const CHAMFER_PAIRS: usize = 100;
const CHAMFER_MAX_POINTS: usize = 1000;
const CHAMFER_TOL: f64 = 1e-9;
const OVERFIT_IOU: f64 = 0.9;
const OVERFIT_EPOCHS: usize = 500;
const MULTIVIEW_SLACK: f64 = 0.02;
const RETRIEVAL_QUERIES: usize = 50;
const PPO_EPISODES: usize = 1000;
const PPO_EVAL: usize = 100;
const PPO_SUCCESS: f64 = 0.8;
const PIPELINE_VIEWS: usize = 125;
const PIPELINE_RADIUS: f64 = 1.6;

type Outcome = Result<String, String>;
type Check = Box<dyn FnOnce(&mut Option<Rgan>) -> Outcome>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for k in 0..METRIC_PAIRS {
        let (dr, dt) = (rng.random_range(0.02..0.9), rng.random_range(0.02..0.9));
        let recon = random_grid(&mut rng, 16, dr);
        let truth = random_grid(&mut rng, 16, dt);
        let m = MetricReport::compute(&recon, &truth).map_err(|e| e.to_string())?;
        let c = m.counts;
        ensure(c.intersection + c.false_negative + c.false_positive == c.union, || {
            format!("pair {k}: counts identity broken {c:?}")
        })?;
        let (i, u, f_n, f_p) = naive_counts(&recon, &truth);
        ensure((i, u, f_n, f_p) == (c.intersection, c.union, c.false_negative, c.false_positive), || {
            format!("pair {k}: counts {c:?} vs naive {:?}", (i, u, f_n, f_p))
        })?;
        let (iou, hr, acc) = naive_metrics(&recon, &truth);
        let same = iou.to_bits() == m.iou.to_bits()
            && hr.to_bits() == m.hit_rate.to_bits()
            && acc.to_bits() == m.accuracy.to_bits();
        ensure(same, || format!("pair {k}: {m:?} vs naive {:?}", (iou, hr, acc)))?;
    }
    Ok(format!("{METRIC_PAIRS} pairs at 16^3 bit-identical to the naive oracle"))
}

fn autodiff_soundness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut report = Vec::new();
    for (name, check) in PRIMITIVES {
        let worst = (0..GRAD_INSTANCES).map(|_| check(&mut rng)).fold(0.0, f64::max);
        ensure(worst < GRAD_TOL, || format!("{name}: max relative error {worst:.3e}"))?;
        report.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("{GRAD_INSTANCES} instances each, max rel err: {}", report.join(", ")))
}

fn chamfer_correctness() -> Outcome {
    let a = PointCloud::from_arrays(&[[0.0, 0.0, 0.0]]).unwrap();
    let b = PointCloud::from_arrays(&[[1.0, 0.0, 0.0]]).unwrap();
    let hand = chamfer(&a, &b).map_err(|e| e.to_string())?;
    ensure(hand == 2.0, || format!("hand case gave {hand}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for k in 0..CHAMFER_PAIRS {
        let na = rng.random_range(1..=CHAMFER_MAX_POINTS);
        let nb = rng.random_range(1..=CHAMFER_MAX_POINTS);
        let a = random_cloud(&mut rng, na, 1.0);
        let b = random_cloud(&mut rng, nb, 1.0).translated(&nalgebra::Vector3::new(0.3, 0.0, -0.2));
        let fast = chamfer(&a, &b).map_err(|e| e.to_string())?;
        let slow = brute_chamfer(&a, &b);
        let rel = (fast - slow).abs() / slow;
        worst = worst.max(rel);
        ensure(rel < CHAMFER_TOL, || format!("pair {k}: {fast} vs {slow}"))?;
    }
    Ok(format!("hand case 2.0, {CHAMFER_PAIRS} pairs max rel diff {worst:.1e}"))
}

fn overfit_config() -> RganConfig {
    RganConfig {
        grid_dim: 16,
        encoder_channels: [4, 8, 16, 32, 32],
        latent: 64,
        lstm_hidden: 64,
        decoder_channels: [32, 32, 16, 8, 8],
        disc_channels: [4, 8, 16, 32, 32, 1],
        batch: 5,
        lr: 1e-3,
        epochs: OVERFIT_EPOCHS,
        seed: 0,
        max_views: 3,
        target_iou: Some(OVERFIT_IOU),
        ..RganConfig::default()
    }
}

fn log_bits(log: &[EpochLog]) -> Vec<[u64; 4]> {
    log.iter()
        .map(|r| {
            [
                r.gen_recon_loss.to_bits(),
                r.gen_adv_loss.to_bits(),
                r.dis_loss.to_bits(),
                r.mean_train_iou.to_bits(),
            ]
        })
        .collect()
}

fn overfit_reconstruction(model: &mut Option<Rgan>) -> Outcome {
    let data = toy_dataset(16, 3, 64).map_err(|e| e.to_string())?;
    let train = || -> Result<(Rgan, Vec<EpochLog>), String> {
        let mut m = Rgan::new(overfit_config()).map_err(|e| e.to_string())?;
        let log = m.train(&data, |_, _| Ok(())).map_err(|e| e.to_string())?;
        Ok((m, log))
    };
    let (first, log) = train()?;
    let last = *log.last().ok_or("no epochs ran")?;
    ensure(last.mean_train_iou >= OVERFIT_IOU, || {
        format!("mean train IoU {:.4} after {} epochs", last.mean_train_iou, last.epoch)
    })?;
    let (_, again) = train()?;
    ensure(log_bits(&log) == log_bits(&again), || "second run with the same seed diverged".into())?;
    *model = Some(first);
    Ok(format!(
        "mean train IoU {:.4} at epoch {} of {OVERFIT_EPOCHS}, rerun bit-identical",
        last.mean_train_iou, last.epoch
    ))
}

fn multiview_benefit(model: &Option<Rgan>) -> Outcome {
    let model = model.as_ref().ok_or("needs the overfit model")?;
    let held_out = perturbed_toy_dataset(16, 3, 64, 7, 0.2).map_err(|e| e.to_string())?;
    let one = model.mean_iou(&held_out, Some(1)).map_err(|e| e.to_string())?;
    let three = model.mean_iou(&held_out, Some(3)).map_err(|e| e.to_string())?;
    ensure(three >= one - MULTIVIEW_SLACK, || format!("3 views {three:.4} vs 1 view {one:.4}"))?;
    Ok(format!("held-out mean IoU 1 view {one:.4}, 3 views {three:.4}"))
}

fn retrieval_oracle() -> Outcome {
    let kb = toy_kb(10, 8).map_err(|e| e.to_string())?;
    ensure(kb.len() == 12, || format!("{} entries", kb.len()))?;
    for cat in Category::ALL {
        let n = kb.entries().iter().filter(|e| e.category == cat).count();
        ensure(n == 3, || format!("{cat}: {n} entries"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for q in 0..RETRIEVAL_QUERIES {
        let cat = Category::ALL[q % 4];
        let query = if q % 2 == 0 {
            let n = rng.random_range(50..400);
            random_cloud(&mut rng, n, 0.12)
        } else {
            let base = &kb.entries()[rng.random_range(0..kb.len())].cloud;
            let pts: Vec<[f64; 3]> = base
                .points()
                .iter()
                .map(|p| std::array::from_fn(|a| p[a] + rng.random_range(-0.01..0.01)))
                .collect();
            PointCloud::from_arrays(&pts).unwrap()
        };
        let (hit, d) = retrieve(&query, cat, &kb).map_err(|e| e.to_string())?;
        ensure(hit.category == cat, || format!("query {q}: crossed into {}", hit.category))?;
        let centered = query.centered();
        let mut best: Option<(&str, f64)> = None;
        for e in kb.entries().iter().filter(|e| e.category == cat) {
            let bd = brute_chamfer(&centered, &e.cloud.centered());
            if best.is_none_or(|(_, b)| bd < b) {
                best = Some((&e.id, bd));
            }
        }
        let (id, bd) = best.unwrap();
        ensure(hit.id == id, || format!("query {q}: {} vs brute {id}", hit.id))?;
        ensure((d - bd).abs() <= 1e-9 * bd.max(1e-300), || format!("query {q}: d {d} vs brute {bd}"))?;
    }
    Ok(format!("{RETRIEVAL_QUERIES} queries agree with brute-force argmin within category"))
}

fn ppo_refinement() -> Outcome {
    let mesh = cube(0.12);
    let frame = object_frame(&mesh, 16, 0.1).map_err(|e| e.to_string())?;
    let grid = mesh_to_solid_grid(&mesh, frame).map_err(|e| e.to_string())?;
    let cloud = devoxelize(&grid);
    let seed = GraspStrategy {
        grasp_point: [0.0, 0.0, 0.06],
        wrist_orientation: [0.0, 1.0, 0.0, 0.0],
        joint_angles: [0.2; 8],
    };
    let cfg = PpoConfig {
        episodes: PPO_EPISODES,
        eval_episodes: PPO_EVAL,
        ..PpoConfig::default()
    };
    let untrained = refine_grasp(&cloud, &grid, &seed, &PpoConfig { episodes: 0, ..cfg.clone() })
        .map_err(|e| e.to_string())?;
    let out = refine_grasp(&cloud, &grid, &seed, &cfg).map_err(|e| e.to_string())?;
    ensure(out.eval_success_rate >= PPO_SUCCESS, || {
        format!("eval success {:.2} (untrained {:.2})", out.eval_success_rate, untrained.eval_success_rate)
    })?;
    Ok(format!(
        "eval success {:.2} over {PPO_EVAL} episodes after {PPO_EPISODES} (untrained {:.2}, final batch {:.2})",
        out.eval_success_rate,
        untrained.eval_success_rate,
        out.curve.last().copied().unwrap_or(f64::NAN)
    ))
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn end_to_end_pipeline() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    save_obj(dir.join("cube.obj"), &cube(0.2)).map_err(|e| e.to_string())?;
    let config = dir.join("pipeline.json");
    let body = serde_json::json!({
        "scan": {"views": PIPELINE_VIEWS, "radius": PIPELINE_RADIUS, "image_size": 64},
        "grid": {"m": 16},
        "train": {
            "encoder_channels": [4, 8, 16, 32, 32],
            "latent": 64,
            "lstm_hidden": 64,
            "decoder_channels": [32, 32, 16, 8, 8],
            "disc_channels": [4, 8, 16, 32, 32, 1],
            "batch": 1,
            "epochs": 60
        },
        "retrieve": {"category": "lift"},
        "io": {"mesh": "cube.obj", "out_dir": "out", "seed": 5}
    });
    std::fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).map_err(|e| e.to_string())?;
    let run = || -> Result<BTreeMap<String, Vec<u8>>, String> {
        let o = Command::new(env!("CARGO_BIN_EXE_voxforge"))
            .arg("pipeline")
            .arg(&config)
            .env_remove("VOXFORGE_SEED")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(o.status.code() == Some(0), || {
            format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr))
        })?;
        Ok(snapshot(&dir.join("out")))
    };
    let first = run()?;
    let mut expected: Vec<String> = (0..PIPELINE_VIEWS).map(|i| format!("render/view_{i:03}.dpt")).collect();
    expected.extend(
        [
            "render/cameras.json",
            "dataset/dataset.json",
            "dataset/cube/truth.vxg",
            "model/model.tnsr",
            "model/model.json",
            "model/train_log.csv",
            "recon/cube.vxg",
            "recon/cube.ply",
            "metrics.csv",
            "kb/kb.json",
            "retrieval.json",
            "refine.csv",
            "refine.json",
            "pipeline.json",
        ]
        .map(String::from),
    );
    for f in &expected {
        ensure(first.contains_key(f), || format!("missing artifact {f}"))?;
    }
    let second = run()?;
    let reports: Vec<&String> = first
        .keys()
        .filter(|k| k.ends_with(".csv") || k.ends_with(".json"))
        .collect();
    for k in &reports {
        ensure(second.get(*k) == first.get(*k), || format!("{k} differs between runs"))?;
    }
    ensure(second.keys().eq(first.keys()), || "rerun wrote a different file set".into())?;
    Ok(format!(
        "exit 0, {} files, {} CSV/JSON byte-identical on rerun",
        first.len(),
        reports.len()
    ))
}

fn main() {
    let mut model = None;
    let criteria: Vec<(&str, Duration, Check)> = vec![
        ("metric identities", Duration::from_secs(5), Box::new(|_| metric_identities())),
        ("autodiff soundness", Duration::from_secs(60), Box::new(|_| autodiff_soundness())),
        ("chamfer correctness", Duration::from_secs(10), Box::new(|_| chamfer_correctness())),
        ("overfit reconstruction", Duration::from_secs(30 * 60), Box::new(overfit_reconstruction)),
        ("multi-view benefit", Duration::MAX, Box::new(|m| multiview_benefit(m))),
        ("retrieval oracle", Duration::from_secs(5), Box::new(|_| retrieval_oracle())),
        ("ppo refinement", Duration::from_secs(10 * 60), Box::new(|_| ppo_refinement())),
        ("end-to-end pipeline", Duration::MAX, Box::new(|_| end_to_end_pipeline())),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let result = check(&mut model);
        let took = start.elapsed();
        let result = result.and_then(|detail| {
            ensure(took <= budget, || format!("{detail}; took {took:.1?}, budget {budget:.0?}")).map(|_| detail)
        });
        match result {
            Ok(detail) => println!("PASS {name}: {detail} ({:.2}s)", took.as_secs_f64()),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why} ({:.2}s)", took.as_secs_f64());
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
