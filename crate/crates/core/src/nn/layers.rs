use candle_core::Tensor;

use super::{Init, ParamBuilder};
use crate::Result;

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    // tanh form stays finite for large |x| in both passes
    Ok(((x * 0.5)?.tanh()? + 1.0)?.affine(0.5, 0.0)?)
}

pub fn softplus(x: &Tensor) -> Result<Tensor> {
    let tail = (x.abs()?.neg()?.exp()? + 1.0)?.log()?;
    Ok((x.relu()? + tail)?)
}

pub fn elu(x: &Tensor) -> Result<Tensor> {
    Ok(x.elu(1.0)?)
}

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(((x * slope)? + (x.relu()? * (1.0 - slope))?)?)
}

/// Numerically stable softmax along `dim`.
pub fn softmax(x: &Tensor, dim: usize) -> Result<Tensor> {
    let max = x.max_keepdim(dim)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(dim)?)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (frequency, time) kernel size.
    pub kernel: (usize, usize),
    pub stride_f: usize,
    /// (top, bottom) zero padding along frequency.
    pub pad_f: (usize, usize),
    /// Symmetric zero padding along time.
    pub pad_t: usize,
    pub weight_norm: bool,
    pub bias: bool,
}

impl Conv2dSpec {
    /// `k x k` kernel, stride 1, "same" padding.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride_f: 1,
            pad_f: (k / 2, k / 2),
            pad_t: k / 2,
            weight_norm: false,
            bias: true,
        }
    }

    pub fn with_weight_norm(mut self, on: bool) -> Self {
        self.weight_norm = on;
        self
    }

    pub fn with_stride_f(mut self, s: usize) -> Self {
        self.stride_f = s;
        self
    }

    pub fn output_freq(&self, f_in: usize) -> usize {
        (f_in + self.pad_f.0 + self.pad_f.1 - self.kernel.0) / self.stride_f + 1
    }
}

/// 2D convolution over `(B, C, F, T)` with a frequency-only stride, optional weight
/// normalization (`w = g * v / ||v||` per output channel) and asymmetric frequency padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    spec: Conv2dSpec,
    weight: Tensor,
    gain: Option<Tensor>,
    bias: Option<Tensor>,
}

impl Conv2d {
    pub fn new(spec: Conv2dSpec, pb: &mut ParamBuilder) -> Result<Self> {
        let (kf, kt) = spec.kernel;
        let fan_in = spec.in_channels * kf * kt;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = pb.get(
            "weight",
            &[spec.out_channels, spec.in_channels, kf, kt],
            Init::Uniform(bound),
        )?;
        let gain = if spec.weight_norm {
            // g starts at ||v|| so that w == v at construction
            let norms = weight.sqr()?.sum_keepdim((1, 2, 3))?.sqrt()?.detach();
            Some(pb.get_from("gain", norms)?)
        } else {
            None
        };
        let bias = if spec.bias {
            Some(pb.get("bias", &[spec.out_channels], Init::Uniform(bound))?)
        } else {
            None
        };
        Ok(Self {
            spec,
            weight,
            gain,
            bias,
        })
    }

    /// Zero-initialized convolution without weight normalization.
    pub fn zeros(spec: Conv2dSpec, pb: &mut ParamBuilder) -> Result<Self> {
        let (kf, kt) = spec.kernel;
        let weight = pb.get("weight", &[spec.out_channels, spec.in_channels, kf, kt], Init::Zeros)?;
        let bias = if spec.bias {
            Some(pb.get("bias", &[spec.out_channels], Init::Zeros)?)
        } else {
            None
        };
        Ok(Self {
            spec: Conv2dSpec {
                weight_norm: false,
                ..spec
            },
            weight,
            gain: None,
            bias,
        })
    }

    pub fn spec(&self) -> &Conv2dSpec {
        &self.spec
    }

    fn effective_weight(&self) -> Result<Tensor> {
        match &self.gain {
            Some(g) => {
                let norm = self.weight.sqr()?.sum_keepdim((1, 2, 3))?.sqrt()?;
                Ok(self.weight.broadcast_mul(&g.broadcast_div(&norm)?)?)
            }
            None => Ok(self.weight.clone()),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let s = &self.spec;
        let w = self.effective_weight()?;
        let mut xp = x.clone();
        if s.pad_t > 0 {
            xp = xp.pad_with_zeros(3, s.pad_t, s.pad_t)?;
        }
        if s.pad_f.0 > 0 || s.pad_f.1 > 0 {
            xp = xp.pad_with_zeros(2, s.pad_f.0, s.pad_f.1)?;
        }
        let y = if s.stride_f == 1 {
            xp.conv2d(&w, 0, 1, 1, 1)?
        } else {
            strided_freq_conv(&xp, &w, s.stride_f)?
        };
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// Polyphase decomposition of a frequency-strided convolution: phase `p` convolves the rows
/// `p, p + s, p + 2s, ...` with kernel taps `p, p + s, ...`; the phases are summed.
fn strided_freq_conv(xp: &Tensor, w: &Tensor, stride: usize) -> Result<Tensor> {
    let (b, c, fp, t) = xp.dims4()?;
    let (_, _, kf, _) = w.dims4()?;
    let f_out = (fp - kf) / stride + 1;
    let mut acc: Option<Tensor> = None;
    for p in 0..stride.min(kf) {
        let taps: Vec<u32> = (p..kf).step_by(stride).map(|k| k as u32).collect();
        let hp = taps.len();
        let wp = w.index_select(&Tensor::new(taps.as_slice(), w.device())?, 2)?;
        let need = f_out + hp - 1;
        let end = p + need * stride;
        let rows = if end > fp {
            xp.narrow(2, p, fp - p)?.pad_with_zeros(2, 0, end - fp)?
        } else {
            xp.narrow(2, p, need * stride)?
        };
        let phase = rows
            .reshape((b, c, need, stride, t))?
            .narrow(3, 0, 1)?
            .squeeze(3)?
            .contiguous()?;
        let y = phase.conv2d(&wp.contiguous()?, 0, 1, 1, 1)?;
        acc = Some(match acc {
            Some(a) => (a + y)?,
            None => y,
        });
    }
    Ok(acc.expect("kernel has at least one tap"))
}

/// Frequency upsampling by 2: zero insertion between frequency rows followed by a
/// stride-1 3x3 convolution, cropped to the requested height.
///
/// Evaluated polyphase at the input resolution: even output rows only see kernel row 1,
/// odd rows see kernel rows 0 and 2 applied to neighbouring input rows.
#[derive(Debug, Clone)]
pub struct UpConv2d {
    conv: Conv2d,
}

impl UpConv2d {
    pub fn new(in_channels: usize, out_channels: usize, weight_norm: bool, pb: &mut ParamBuilder) -> Result<Self> {
        let spec = Conv2dSpec::same(in_channels, out_channels, 3).with_weight_norm(weight_norm);
        Ok(Self {
            conv: Conv2d::new(spec, pb)?,
        })
    }

    /// `(B, C, F, T)` to `(B, O, f_out, T)` with `f_out <= 2F`.
    pub fn forward(&self, x: &Tensor, f_out: usize) -> Result<Tensor> {
        let (b, _, f, t) = x.dims4()?;
        assert!(f_out <= 2 * f, "cannot upsample {f} rows to {f_out}");
        let w = self.conv.effective_weight()?;
        let o = w.dim(0)?;
        let xp = x.pad_with_zeros(3, 1, 1)?;
        let even = xp.conv2d(&w.narrow(2, 1, 1)?.contiguous()?, 0, 1, 1, 1)?;
        let w_odd = w.index_select(&Tensor::new(&[0u32, 2], w.device())?, 2)?.contiguous()?;
        let odd = xp.pad_with_zeros(2, 0, 1)?.conv2d(&w_odd, 0, 1, 1, 1)?;
        let y = Tensor::stack(&[even, odd], 3)?.reshape((b, o, 2 * f, t))?.narrow(2, 0, f_out)?;
        match &self.conv.bias {
            Some(bias) => Ok(y.broadcast_add(&bias.reshape((1, (), 1, 1))?)?),
            None => Ok(y),
        }
    }
}

/// `y = x W^T + b` over the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl Linear {
    pub fn new(input: usize, output: usize, bias: bool, pb: &mut ParamBuilder) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        let weight = pb.get("weight", &[output, input], Init::Uniform(bound))?;
        let bias = if bias {
            Some(pb.get("bias", &[output], Init::Uniform(bound))?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn zeros(input: usize, output: usize, pb: &mut ParamBuilder) -> Result<Self> {
        let weight = pb.get("weight", &[output, input], Init::Zeros)?;
        let bias = Some(pb.get("bias", &[output], Init::Zeros)?);
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.broadcast_matmul(&self.weight.t()?)?;
        match &self.bias {
            Some(b) => Ok(y.broadcast_add(b)?),
            None => Ok(y),
        }
    }
}

/// Single-direction LSTM layer over `(B, T, I)` sequences.
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    bias: Tensor,
    hidden: usize,
}

impl Lstm {
    pub fn new(input: usize, hidden: usize, pb: &mut ParamBuilder) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = pb.get("w_ih", &[4 * hidden, input], Init::Uniform(bound))?;
        let w_hh = pb.get("w_hh", &[4 * hidden, hidden], Init::Uniform(bound))?;
        // forget-gate bias of one
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = pb.get_from("bias", Tensor::from_vec(b, 4 * hidden, &pb.device())?)?;
        Ok(Self {
            w_ih,
            w_hh,
            bias,
            hidden,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h_dim = self.hidden;
        let pre = x.broadcast_matmul(&self.w_ih.t()?)?.broadcast_add(&self.bias)?;
        let w_hh_t = self.w_hh.t()?.contiguous()?;
        let mut h = Tensor::zeros((b, h_dim), x.dtype(), x.device())?;
        let mut c = h.clone();
        let mut outs = Vec::with_capacity(t);
        for x_t in split_steps(&pre, 1)? {
            let gates = (x_t + h.matmul(&w_hh_t)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h_dim)?)?;
            let f = sigmoid(&gates.narrow(1, h_dim, h_dim)?)?;
            let g = gates.narrow(1, 2 * h_dim, h_dim)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h_dim, h_dim)?)?;
            c = ((f * &c)? + (i * g)?)?;
            h = (o * c.tanh()?)?;
            outs.push(h.clone());
        }
        Ok(Tensor::stack(&outs, 1)?)
    }
}

/// Unit slices of `x` along `dim`, squeezed. Slicing goes through blocks of about
/// `sqrt(n)` steps: the gradient of every slice is scattered into a tensor the size of
/// its parent, so slicing the full sequence directly costs `n` full-size buffers.
pub fn split_steps(x: &Tensor, dim: usize) -> Result<Vec<Tensor>> {
    let n = x.dim(dim)?;
    let block = ((n as f64).sqrt().ceil() as usize).max(1);
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = block.min(n - start);
        let chunk = x.narrow(dim, start, len)?;
        for i in 0..len {
            out.push(chunk.narrow(dim, i, 1)?.squeeze(dim)?);
        }
        start += len;
    }
    Ok(out)
}
