use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Discriminator, Generator, RganConfig, RganError, Sample};
use crate::autodiff::{checkpoint, Adam, ParamSet, Tape, Tensor, Var};
use crate::voxel::{iou, VoxelGrid};

const POS_WEIGHT_RANGE: (f64, f64) = (1.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepLosses {
    pub recon: f64,
    pub adv: f64,
    pub dis: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub gen_recon_loss: f64,
    pub gen_adv_loss: f64,
    pub dis_loss: f64,
    pub mean_train_iou: f64,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    config: RganConfig,
    epoch: usize,
}

/// Generator, discriminator and their optimizers.
pub struct Rgan {
    pub cfg: RganConfig,
    pub gen: Generator,
    pub dis: Discriminator,
    gen_opt: Adam,
    dis_opt: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
}

fn stack(grids: &[&[f64]], m: usize) -> Result<Tensor, RganError> {
    Ok(Tensor::new(vec![grids.len(), 1, m, m, m], grids.concat())?)
}

fn finite(v: f64, what: &str) -> Result<f64, RganError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(RganError::NonFinite(what.into()))
    }
}

impl Rgan {
    pub fn new(cfg: RganConfig) -> Result<Self, RganError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let gen = Generator::new(&cfg, &mut rng)?;
        let dis = Discriminator::new(&cfg, &mut rng)?;
        Ok(Self {
            gen_opt: Adam::new(cfg.lr),
            dis_opt: Adam::new(cfg.lr),
            rng,
            epoch: 0,
            cfg,
            gen,
            dis,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One discriminator update followed by one generator update on `batch`
    /// pairs of (views, truth).
    pub fn train_step(&mut self, batch: &[(Vec<&VoxelGrid>, &VoxelGrid)]) -> Result<StepLosses, RganError> {
        if batch.is_empty() {
            return Err(RganError::EmptyDataset);
        }
        let m = self.cfg.grid_dim;
        let n = batch.len() as f64;
        let truths: Vec<Vec<f64>> = batch.iter().map(|(_, t)| t.to_f64()).collect();
        let occupied: usize = batch.iter().map(|(_, t)| t.count()).sum();
        let total = batch.len() * m * m * m;
        let pos_weight = if occupied == 0 {
            POS_WEIGHT_RANGE.1
        } else {
            ((total - occupied) as f64 / occupied as f64).clamp(POS_WEIGHT_RANGE.0, POS_WEIGHT_RANGE.1)
        };

        let tape = Tape::new();
        let gb = self.gen.params.bind(&tape);
        let fakes = batch
            .iter()
            .map(|(views, _)| self.gen.forward(&gb, &tape, views))
            .collect::<Result<Vec<Var>, _>>()?;

        // discriminator on real grids and detached reconstructions
        let dis_loss = {
            let dt = Tape::new();
            let db = self.dis.params.bind(&dt);
            let fake_vals: Vec<Vec<f64>> = fakes.iter().map(|f| f.value().data().to_vec()).collect();
            let real = dt.constant(stack(&truths.iter().map(Vec::as_slice).collect::<Vec<_>>(), m)?);
            let fake = dt.constant(stack(&fake_vals.iter().map(Vec::as_slice).collect::<Vec<_>>(), m)?);
            let (sr, _) = self.dis.forward(&db, real)?;
            let (sf, _) = self.dis.forward(&db, fake)?;
            let loss = sr
                .bce(&Tensor::ones(&sr.shape()), None)?
                .add(sf.bce(&Tensor::zeros(&sf.shape()), None)?)?;
            let value = finite(loss.item(), "discriminator loss")?;
            let grads = db.grads(&dt.backward(loss)?);
            self.dis_opt.step(&mut self.dis.params, &grads);
            value
        };

        // generator: weighted reconstruction plus feature-mean gap
        let dfb = self.dis.params.bind_frozen(&tape);
        let mut recon: Option<Var> = None;
        let mut adv: Option<Var> = None;
        for (fake, truth) in fakes.iter().zip(&truths) {
            let target = Tensor::new(fake.shape(), truth.clone())?;
            let weight = Tensor::from_fn(target.shape(), |i| if truth[i] > 0.5 { pos_weight } else { 1.0 });
            let r = fake.bce(&target, Some(&weight))?;
            let (_, ff) = self.dis.forward(&dfb, *fake)?;
            let (_, fr) = self.dis.forward(&dfb, tape.constant(target))?;
            let gap = ff.mean().sub(fr.mean())?.abs();
            recon = Some(match recon {
                Some(acc) => acc.add(r)?,
                None => r,
            });
            adv = Some(match adv {
                Some(acc) => acc.add(gap)?,
                None => gap,
            });
        }
        let recon = recon.expect("nonempty batch").scale(1.0 / n);
        let adv = adv.expect("nonempty batch").scale(1.0 / n);
        let (recon_v, adv_v) = (
            finite(recon.item(), "reconstruction loss")?,
            finite(adv.item(), "adversarial loss")?,
        );
        let loss = if self.cfg.lambda_adv > 0.0 {
            recon.add(adv.scale(self.cfg.lambda_adv))?
        } else {
            recon
        };
        let grads = gb.grads(&tape.backward(loss)?);
        self.gen_opt.step(&mut self.gen.params, &grads);
        Ok(StepLosses {
            recon: recon_v,
            adv: adv_v,
            dis: dis_loss,
        })
    }

    /// Mean IoU of thresholded reconstructions using up to `views` leading
    /// views of each sample (all of them up to `max_views` when `None`).
    pub fn mean_iou(&self, data: &[Sample], views: Option<usize>) -> Result<f64, RganError> {
        if data.is_empty() {
            return Err(RganError::EmptyDataset);
        }
        let mut total = 0.0;
        for s in data {
            let k = views.unwrap_or(self.cfg.max_views).min(s.views.len()).max(1);
            let recon = self.gen.reconstruct(&s.views[..k], 0.5)?;
            total += match iou(&recon, &s.truth) {
                Ok(v) => v,
                // both empty: a perfect match
                Err(crate::voxel::VoxelError::EmptyUnion) => 1.0,
                Err(e) => return Err(e.into()),
            };
        }
        Ok(total / data.len() as f64)
    }

    /// One pass over `data` in shuffled batches; each sample contributes a
    /// random ordered subset of between one and `max_views` views.
    pub fn train_epoch(&mut self, data: &[Sample]) -> Result<EpochLog, RganError> {
        if data.is_empty() {
            return Err(RganError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = (0.0, 0.0, 0.0);
        let mut steps = 0;
        for chunk in order.chunks(self.cfg.batch) {
            let mut batch = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = &data[i];
                if s.views.is_empty() {
                    return Err(RganError::EmptySequence);
                }
                let avail = s.views.len().min(self.cfg.max_views);
                let k = self.rng.random_range(1..=avail);
                let mut pick = index::sample(&mut self.rng, s.views.len(), k).into_vec();
                pick.sort_unstable();
                batch.push((pick.iter().map(|&j| &s.views[j]).collect(), &s.truth));
            }
            let l = self.train_step(&batch)?;
            sums.0 += l.recon;
            sums.1 += l.adv;
            sums.2 += l.dis;
            steps += 1;
        }
        self.epoch += 1;
        let k = steps as f64;
        Ok(EpochLog {
            epoch: self.epoch,
            gen_recon_loss: sums.0 / k,
            gen_adv_loss: sums.1 / k,
            dis_loss: sums.2 / k,
            mean_train_iou: self.mean_iou(data, None)?,
        })
    }

    /// Runs up to `cfg.epochs` epochs, stopping early at `cfg.target_iou`.
    /// `on_epoch` sees the model after every epoch.
    pub fn train(
        &mut self,
        data: &[Sample],
        mut on_epoch: impl FnMut(&Rgan, &EpochLog) -> Result<(), RganError>,
    ) -> Result<Vec<EpochLog>, RganError> {
        let mut log = Vec::with_capacity(self.cfg.epochs);
        for _ in 0..self.cfg.epochs {
            let row = self.train_epoch(data)?;
            on_epoch(self, &row)?;
            log.push(row);
            if self.cfg.target_iou.is_some_and(|t| row.mean_train_iou >= t) {
                break;
            }
        }
        Ok(log)
    }

    fn combined_params(&self) -> ParamSet {
        let mut ps = ParamSet::new();
        for (name, t) in self.gen.params.iter().chain(self.dis.params.iter()) {
            ps.add(name, t.clone());
        }
        ps
    }

    /// Writes parameters to `path` and the config and epoch to `path` with a
    /// `.json` extension.
    pub fn save(&self, path: &Path) -> Result<(), RganError> {
        checkpoint::save(&self.combined_params(), path)?;
        let side = path.with_extension("json");
        let body = serde_json::to_string_pretty(&Sidecar {
            config: self.cfg.clone(),
            epoch: self.epoch,
        })
        .map_err(|e| RganError::json(&side, e))?;
        std::fs::write(&side, body + "\n").map_err(|e| RganError::io(&side, e))
    }

    pub fn load(path: &Path) -> Result<Self, RganError> {
        let side = path.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| RganError::io(&side, e))?;
        let sc: Sidecar = serde_json::from_str(&text).map_err(|e| RganError::json(&side, e))?;
        let mut model = Self::new(sc.config)?;
        let stored = checkpoint::load(path)?;
        let mut combined = model.combined_params();
        combined
            .load_from(&stored)
            .map_err(|e| RganError::Checkpoint(format!("{}: {e}", path.display())))?;
        let n_gen = model.gen.params.len();
        for (i, (_, t)) in combined.iter().enumerate() {
            if i < n_gen {
                model.gen.params.values_mut()[i] = t.clone();
            } else {
                model.dis.params.values_mut()[i - n_gen] = t.clone();
            }
        }
        model.epoch = sc.epoch;
        Ok(model)
    }
}

pub fn write_log(path: &Path, log: &[EpochLog]) -> Result<(), RganError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| RganError::io(path, std::io::Error::other(e)))?;
    for row in log {
        w.serialize(row)
            .map_err(|e| RganError::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| RganError::io(path, e))
}
