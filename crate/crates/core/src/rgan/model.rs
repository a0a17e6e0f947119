use rand::Rng;

use super::{RganConfig, RganError};
use crate::autodiff::{
    lstm_cell, Bound, Conv3d, ConvTranspose3d, Linear, Lstm, LstmState, ParamSet, Tape, Tensor, Var,
};
use crate::voxel::VoxelGrid;

/// Spatial sizes along a stack of layers that halve while the size is even and
/// above one, and keep the size otherwise. Returns the size before every layer
/// and the final size.
pub(crate) fn halving_schedule(m: usize, layers: usize) -> (Vec<usize>, usize) {
    let mut sizes = Vec::with_capacity(layers);
    let mut s = m;
    for _ in 0..layers {
        sizes.push(s);
        if s > 1 && s.is_multiple_of(2) {
            s /= 2;
        }
    }
    (sizes, s)
}

fn conv_for(ps: &mut ParamSet, name: &str, size: usize, cin: usize, cout: usize, rng: &mut impl Rng) -> Conv3d {
    if size > 1 && size.is_multiple_of(2) {
        Conv3d::new(ps, name, cin, cout, 4, 2, 1, rng)
    } else {
        Conv3d::new(ps, name, cin, cout, 3, 1, 1, rng)
    }
}

fn check_grid(g: &VoxelGrid, m: usize) -> Result<(), RganError> {
    if g.dims() != [m, m, m] {
        return Err(RganError::GridSize {
            expected: m,
            got: g.dims(),
        });
    }
    Ok(())
}

/// Per-view encoder, LSTM fusion and upsampling decoder.
#[derive(Debug, Clone)]
pub struct Generator {
    pub(crate) params: ParamSet,
    m: usize,
    encoder: Vec<Conv3d>,
    /// flattened encoder volume
    flat: usize,
    fc: [Linear; 2],
    lstm: Lstm,
    base: usize,
    decoder: Vec<ConvTranspose3d>,
    upscale: Vec<Conv3d>,
}

impl Generator {
    pub fn new(cfg: &RganConfig, rng: &mut impl Rng) -> Result<Self, RganError> {
        cfg.validate()?;
        let m = cfg.grid_dim;
        let mut ps = ParamSet::new();
        let (sizes, base) = halving_schedule(m, 5);
        let mut cin = 1;
        let encoder: Vec<Conv3d> = sizes
            .iter()
            .zip(cfg.encoder_channels)
            .enumerate()
            .map(|(i, (&s, c))| {
                let layer = conv_for(&mut ps, &format!("gen.enc{i}"), s, cin, c, rng);
                cin = c;
                layer
            })
            .collect();
        let flat = cin * base * base * base;
        let fc = [
            Linear::new(&mut ps, "gen.fc0", flat, cfg.latent, rng),
            Linear::new(&mut ps, "gen.fc1", cfg.latent, cfg.latent, rng),
        ];
        let lstm = Lstm::new(&mut ps, "gen.lstm", cfg.latent, cfg.lstm_hidden, rng);

        // the decoder mirrors the encoder: size-keeping layers first, then doublings
        let mut size = base;
        let mut cin = cfg.lstm_hidden / (base * base * base);
        let doublings = sizes.iter().filter(|&&s| s > 1 && s % 2 == 0).count();
        let mut decoder = Vec::with_capacity(5);
        for (i, &c) in cfg.decoder_channels.iter().enumerate() {
            let name = format!("gen.dec{i}");
            let layer = if i >= 5 - doublings {
                size *= 2;
                ConvTranspose3d::new(&mut ps, &name, cin, c, 4, 2, 1, rng)
            } else {
                ConvTranspose3d::new(&mut ps, &name, cin, c, 3, 1, 1, rng)
            };
            decoder.push(layer);
            cin = c;
        }
        debug_assert_eq!(size, m);
        let upscale = (0..cfg.upscale_layers)
            .map(|i| {
                let cout = if i + 1 == cfg.upscale_layers { 1 } else { cin };
                Conv3d::new(&mut ps, &format!("gen.up{i}"), cin, cout, 3, 1, 1, rng)
            })
            .collect();
        Ok(Self {
            params: ps,
            m,
            encoder,
            flat,
            fc,
            lstm,
            base,
            decoder,
            upscale,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn grid_dim(&self) -> usize {
        self.m
    }

    /// Features of `n` views stacked along the batch axis: `[n, f]`.
    pub fn encode<'t>(&self, b: &Bound<'t>, tape: &'t Tape, views: &[&VoxelGrid]) -> Result<Var<'t>, RganError> {
        if views.is_empty() {
            return Err(RganError::EmptySequence);
        }
        let m = self.m;
        let mut data = Vec::with_capacity(views.len() * m * m * m);
        for v in views {
            check_grid(v, m)?;
            if v.frame() != views[0].frame() {
                return Err(RganError::FrameMismatch);
            }
            data.extend(v.to_f64());
        }
        let mut x = tape.constant(Tensor::new(vec![views.len(), 1, m, m, m], data)?);
        for layer in &self.encoder {
            x = layer.forward(b, x)?.relu();
        }
        let x = x.reshape(&[views.len(), self.flat])?;
        let x = self.fc[0].forward(b, x)?.relu();
        Ok(self.fc[1].forward(b, x)?)
    }

    /// Runs the LSTM over `[n, f]` features, one view per step, from a zero state.
    pub fn fuse<'t>(&self, b: &Bound<'t>, tape: &'t Tape, features: Var<'t>) -> Result<Var<'t>, RganError> {
        let n = features.shape()[0];
        let p = self.lstm.params(b);
        let mut state = LstmState::zeros(tape, 1, self.lstm.hidden);
        for t in 0..n {
            state = lstm_cell(features.slice_rows(t, 1)?, &state, &p)?;
        }
        Ok(state.h)
    }

    /// Occupancy probabilities `[1, 1, m, m, m]` from a `[1, H]` latent.
    pub fn decode<'t>(&self, b: &Bound<'t>, latent: Var<'t>) -> Result<Var<'t>, RganError> {
        let h = self.lstm.hidden / (self.base * self.base * self.base);
        let mut x = latent.reshape(&[1, h, self.base, self.base, self.base])?;
        for layer in &self.decoder {
            x = layer.forward(b, x)?.relu();
        }
        let last = self.upscale.len() - 1;
        for (i, layer) in self.upscale.iter().enumerate() {
            x = layer.forward(b, x)?;
            x = if i == last { x.sigmoid() } else { x.relu() };
        }
        Ok(x)
    }

    pub fn forward<'t>(&self, b: &Bound<'t>, tape: &'t Tape, views: &[&VoxelGrid]) -> Result<Var<'t>, RganError> {
        let f = self.encode(b, tape, views)?;
        let h = self.fuse(b, tape, f)?;
        self.decode(b, h)
    }

    /// Feature vector of a single view.
    pub fn encode_view(&self, view: &VoxelGrid) -> Result<Vec<f64>, RganError> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let f = self.encode(&b, &tape, &[view])?;
        let out = f.value().data().to_vec();
        Ok(out)
    }

    /// Final hidden state for a sequence of view features.
    pub fn fuse_sequence(&self, features: &[Vec<f64>]) -> Result<Vec<f64>, RganError> {
        if features.is_empty() {
            return Err(RganError::EmptySequence);
        }
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let n = features.len();
        let f = features[0].len();
        let x = tape.constant(Tensor::new(vec![n, f], features.concat())?);
        let h = self.fuse(&b, &tape, x)?;
        let out = h.value().data().to_vec();
        Ok(out)
    }

    /// Occupancy probabilities in x-fastest order.
    pub fn generate(&self, views: &[VoxelGrid]) -> Result<Vec<f64>, RganError> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let refs: Vec<&VoxelGrid> = views.iter().collect();
        let y = self.forward(&b, &tape, &refs)?;
        let out = y.value().data().to_vec();
        Ok(out)
    }

    /// Thresholded reconstruction in the frame of the views.
    pub fn reconstruct(&self, views: &[VoxelGrid], threshold: f64) -> Result<VoxelGrid, RganError> {
        let probs = self.generate(views)?;
        Ok(VoxelGrid::from_probabilities(*views[0].frame(), &probs, threshold)?)
    }
}

/// Six-layer convolutional critic.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub(crate) params: ParamSet,
    m: usize,
    layers: Vec<Conv3d>,
    features: usize,
}

impl Discriminator {
    pub fn new(cfg: &RganConfig, rng: &mut impl Rng) -> Result<Self, RganError> {
        cfg.validate()?;
        let m = cfg.grid_dim;
        let mut ps = ParamSet::new();
        let (sizes, last) = halving_schedule(m, 5);
        let mut cin = 1;
        let mut layers = Vec::with_capacity(6);
        for (i, &s) in sizes.iter().enumerate() {
            let c = cfg.disc_channels[i];
            layers.push(conv_for(&mut ps, &format!("dis.conv{i}"), s, cin, c, rng));
            cin = c;
        }
        // the last layer spans the remaining volume
        layers.push(Conv3d::new(&mut ps, "dis.conv5", cin, cfg.disc_channels[5], last, 1, 0, rng));
        Ok(Self {
            params: ps,
            m,
            layers,
            features: cin * last * last * last,
        })
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Scores `[N, C6]` in (0, 1) and pre-final features `[N, K]` of `x: [N, 1, m, m, m]`.
    pub fn forward<'t>(&self, b: &Bound<'t>, x: Var<'t>) -> Result<(Var<'t>, Var<'t>), RganError> {
        let n = x.shape()[0];
        let mut h = x;
        let last = self.layers.len() - 1;
        for layer in &self.layers[..last] {
            h = layer.forward(b, h)?.relu();
        }
        let features = h.reshape(&[n, self.features])?;
        let score = self.layers[last].forward(b, h)?.sigmoid();
        let c = score.shape()[1];
        Ok((score.reshape(&[n, c])?, features))
    }

    fn input_tensor(&self, grid: &[f64]) -> Result<Tensor, RganError> {
        let m = self.m;
        if grid.len() != m * m * m {
            return Err(RganError::GridSize {
                expected: m,
                got: [grid.len(), 0, 0],
            });
        }
        Ok(Tensor::new(vec![1, 1, m, m, m], grid.to_vec())?)
    }

    /// Mean score and flattened pre-final features of one grid in x-fastest order.
    pub fn discriminate(&self, grid: &[f64]) -> Result<(f64, Vec<f64>), RganError> {
        let tape = Tape::new();
        let b = self.params.bind_frozen(&tape);
        let x = tape.constant(self.input_tensor(grid)?);
        let (s, f) = self.forward(&b, x)?;
        let score = s.value().data().iter().sum::<f64>() / s.value().len() as f64;
        let feats = f.value().data().to_vec();
        Ok((score, feats))
    }

    /// Mean feature of `fake` minus mean feature of `real`.
    pub fn feature_mean_gap(&self, fake: &[f64], real: &VoxelGrid) -> Result<f64, RganError> {
        check_grid(real, self.m)?;
        let (_, ff) = self.discriminate(fake)?;
        let (_, fr) = self.discriminate(&real.to_f64())?;
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(mean(&ff) - mean(&fr))
    }
}
