//! Direct-loop 3D convolution kernels on `[N, C, D, H, W]` buffers.
//!
//! Each kernel writes disjoint output blocks from a fixed summation order, so
//! results do not depend on how rayon schedules the blocks.

use rayon::prelude::*;

use super::TensorError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    /// Geometry of a forward convolution of `x` (`[N,C,D,H,W]`) by `w` (`[F,C,k,k,k]`).
    pub fn forward(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self, TensorError> {
        if x.len() != 5 || w.len() != 5 {
            return Err(TensorError::Shape(format!(
                "conv3d expects 5-d input and kernel, got {x:?} and {w:?}"
            )));
        }
        if x[1] != w[1] {
            return Err(TensorError::Shape(format!(
                "conv3d channel mismatch: input {x:?}, kernel {w:?}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Shape("stride must be positive".into()));
        }
        let mut output = [0; 3];
        for a in 0..3 {
            let span = x[2 + a] + 2 * pad;
            if span < w[2 + a] {
                return Err(TensorError::Shape(format!(
                    "conv3d kernel {:?} larger than padded input {x:?}",
                    &w[2..]
                )));
            }
            output[a] = (span - w[2 + a]) / stride + 1;
        }
        Ok(Self {
            batch: x[0],
            in_channels: x[1],
            out_channels: w[0],
            input: [x[2], x[3], x[4]],
            output,
            kernel: [w[2], w[3], w[4]],
            stride,
            pad,
        })
    }

    /// Geometry of the convolution whose input-gradient is a transposed
    /// convolution of `x` (`[N,F,D,H,W]`) by `w` (`[F,C,k,k,k]`).
    pub fn transpose(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Result<Self, TensorError> {
        if x.len() != 5 || w.len() != 5 {
            return Err(TensorError::Shape(format!(
                "conv3d_transpose expects 5-d input and kernel, got {x:?} and {w:?}"
            )));
        }
        if x[1] != w[0] {
            return Err(TensorError::Shape(format!(
                "conv3d_transpose channel mismatch: input {x:?}, kernel {w:?}"
            )));
        }
        if stride == 0 {
            return Err(TensorError::Shape("stride must be positive".into()));
        }
        let mut input = [0; 3];
        for a in 0..3 {
            let full = (x[2 + a] - 1) * stride + w[2 + a];
            if full <= 2 * pad {
                return Err(TensorError::Shape(format!(
                    "conv3d_transpose output would be empty for input {x:?}"
                )));
            }
            input[a] = full - 2 * pad;
        }
        Ok(Self {
            batch: x[0],
            in_channels: w[1],
            out_channels: w[0],
            input,
            output: [x[2], x[3], x[4]],
            kernel: [w[2], w[3], w[4]],
            stride,
            pad,
        })
    }

    pub fn input_shape(&self) -> Vec<usize> {
        let [d, h, w] = self.input;
        vec![self.batch, self.in_channels, d, h, w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let [d, h, w] = self.output;
        vec![self.batch, self.out_channels, d, h, w]
    }

    pub fn kernel_shape(&self) -> Vec<usize> {
        let [a, b, c] = self.kernel;
        vec![self.out_channels, self.in_channels, a, b, c]
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn k_vol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Output indices `o` along `axis` for which `o*stride + k - pad` is in bounds.
    #[inline]
    fn valid(&self, axis: usize, k: usize) -> std::ops::Range<usize> {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = (-off).max(0);
        let lo = (lo + s - 1) / s;
        let hi = (self.input[axis] as isize - 1 - off).div_euclid(s);
        let hi = hi.min(self.output[axis] as isize - 1);
        if hi < lo {
            0..0
        } else {
            lo as usize..hi as usize + 1
        }
    }

    /// Visits every (output offset, input offset) pair of one kernel tap.
    #[inline]
    fn for_tap(&self, kz: usize, ky: usize, kx: usize, mut f: impl FnMut(usize, usize)) {
        let [_, oh, ow] = self.output;
        let [_, ih, iw] = self.input;
        let s = self.stride;
        let (rz, ry, rx) = (self.valid(0, kz), self.valid(1, ky), self.valid(2, kx));
        if rx.is_empty() {
            return;
        }
        for oz in rz {
            let iz = oz * s + kz - self.pad;
            for oy in ry.clone() {
                let iy = oy * s + ky - self.pad;
                let out_row = (oz * oh + oy) * ow;
                let in_row = (iz * ih + iy) * iw;
                for ox in rx.clone() {
                    f(out_row + ox, in_row + ox * s + kx - self.pad);
                }
            }
        }
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let [kd, kh, kw] = self.kernel;
        (0..kd).flat_map(move |kz| {
            (0..kh).flat_map(move |ky| (0..kw).map(move |kx| (((kz * kh) + ky) * kw + kx, kz, ky, kx)))
        })
    }
}

/// Cross-correlation `y[n,f] = b[f] + sum_c w[f,c] * x[n,c]`.
pub fn forward(g: &ConvGeom, x: &[f64], w: &[f64], bias: Option<&[f64]>) -> Vec<f64> {
    let (iv, ov, kv) = (g.in_vol(), g.out_vol(), g.k_vol());
    let c_n = g.in_channels;
    let mut y = vec![0.0; g.batch * g.out_channels * ov];
    y.par_chunks_mut(ov).enumerate().for_each(|(nf, out)| {
        let (n, f) = (nf / g.out_channels, nf % g.out_channels);
        if let Some(b) = bias {
            out.fill(b[f]);
        }
        for c in 0..c_n {
            let xin = &x[(n * c_n + c) * iv..(n * c_n + c + 1) * iv];
            let wk = &w[(f * c_n + c) * kv..(f * c_n + c + 1) * kv];
            for (t, kz, ky, kx) in g.taps() {
                let wv = wk[t];
                g.for_tap(kz, ky, kx, |o, i| out[o] += wv * xin[i]);
            }
        }
    });
    y
}

/// Gradient of [`forward`] with respect to its input; also the forward pass of
/// a transposed convolution.
pub fn backward_input(g: &ConvGeom, gy: &[f64], w: &[f64]) -> Vec<f64> {
    let (iv, ov, kv) = (g.in_vol(), g.out_vol(), g.k_vol());
    let (c_n, f_n) = (g.in_channels, g.out_channels);
    let mut gx = vec![0.0; g.batch * c_n * iv];
    gx.par_chunks_mut(iv).enumerate().for_each(|(nc, gin)| {
        let (n, c) = (nc / c_n, nc % c_n);
        for f in 0..f_n {
            let gout = &gy[(n * f_n + f) * ov..(n * f_n + f + 1) * ov];
            let wk = &w[(f * c_n + c) * kv..(f * c_n + c + 1) * kv];
            for (t, kz, ky, kx) in g.taps() {
                let wv = wk[t];
                g.for_tap(kz, ky, kx, |o, i| gin[i] += wv * gout[o]);
            }
        }
    });
    gx
}

/// Gradient of [`forward`] with respect to the kernel.
pub fn backward_kernel(g: &ConvGeom, x: &[f64], gy: &[f64]) -> Vec<f64> {
    let (iv, ov, kv) = (g.in_vol(), g.out_vol(), g.k_vol());
    let (c_n, f_n) = (g.in_channels, g.out_channels);
    let mut gw = vec![0.0; f_n * c_n * kv];
    gw.par_chunks_mut(c_n * kv).enumerate().for_each(|(f, gwf)| {
        for c in 0..c_n {
            for (t, kz, ky, kx) in g.taps() {
                let mut acc = 0.0;
                for n in 0..g.batch {
                    let xin = &x[(n * c_n + c) * iv..(n * c_n + c + 1) * iv];
                    let gout = &gy[(n * f_n + f) * ov..(n * f_n + f + 1) * ov];
                    g.for_tap(kz, ky, kx, |o, i| acc += gout[o] * xin[i]);
                }
                gwf[c * kv + t] = acc;
            }
        }
    });
    gw
}

/// Per-channel sum of an `[N, F, ...]` gradient.
pub fn backward_bias(batch: usize, channels: usize, vol: usize, gy: &[f64]) -> Vec<f64> {
    let mut gb = vec![0.0; channels];
    for n in 0..batch {
        for (f, b) in gb.iter_mut().enumerate() {
            *b += gy[(n * channels + f) * vol..(n * channels + f + 1) * vol]
                .iter()
                .sum::<f64>();
        }
    }
    gb
}
