//! Building blocks shared by the reconstructors. Tensors are `(batch, channels, length)`.

use candle_core::{DType, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use crate::error::Result;

/// Pix2Pix weight init: N(0, 0.02) for convolutions, N(1, 0.02) for norm scales.
pub const INIT_STD: f32 = 0.02;
pub const LEAKY_SLOPE: f64 = 0.2;

/// Forward-pass mode. Dropout masks are drawn from the context's own stream
/// so training is reproducible from the run seed.
pub struct Ctx {
    train: bool,
    rng: ChaCha8Rng,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    /// Inverted dropout: zero with probability `p`, scale survivors by `1/(1-p)`.
    pub fn dropout(&mut self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let scale = (1.0 / (1.0 - p)) as f32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if self.rng.random::<f64>() < p { 0.0 } else { scale })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?;
        Ok(x.mul(&mask)?)
    }
}

pub fn leaky_relu(x: &Tensor) -> Result<Tensor> {
    Ok(x.maximum(&x.affine(LEAKY_SLOPE, 0.0)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok(((x.affine(0.5, 0.0)?.tanh()? + 1.0)? * 0.5)?)
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    padding: usize,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    ) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[c_out, c_in, kernel], 0.0, INIT_STD)?;
        let bias = if bias {
            Some(store.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = conv1d(x, &self.weight, self.stride, self.padding, self.padding)?;
        add_channel_bias(y, self.bias.as_ref())
    }

    pub fn out_len(&self, len: usize) -> usize {
        let k = self.weight.dim(2).expect("rank-3 kernel");
        (len + 2 * self.padding - k) / self.stride + 1
    }
}

/// Cross-correlation via explicit patches and one matrix product.
///
/// Equivalent to candle's `conv1d`, but its gradient is made of slicing and
/// gemm, which on CPU is several times faster than the built-in backward.
pub fn conv1d(x: &Tensor, weight: &Tensor, stride: usize, pad_left: usize, pad_right: usize) -> Result<Tensor> {
    let (b, c_in, len) = x.dims3()?;
    let (c_out, wc_in, k) = weight.dims3()?;
    if wc_in != c_in {
        return Err(crate::error::Error::ShapeMismatch(format!(
            "conv expects {wc_in} input channels, got {c_in}"
        )));
    }
    let padded_len = len + pad_left + pad_right;
    if padded_len < k {
        return Err(crate::error::Error::BadLength { len, multiple: k });
    }
    let n = (padded_len - k) / stride + 1;
    // Every tap t reads x_p[stride·j + t]; pad the tail so each tap can take stride·n samples.
    let need = (k - 1) + stride * n;
    let extra = need.saturating_sub(padded_len);
    let xp = x.pad_with_zeros(D::Minus1, pad_left, pad_right + extra)?;
    let taps = (0..k)
        .map(|t| {
            let s = xp.narrow(2, t, stride * n)?;
            if stride == 1 {
                Ok(s)
            } else {
                s.reshape((b, c_in, n, stride))?.narrow(3, 0, 1)?.squeeze(3)
            }
        })
        .collect::<candle_core::Result<Vec<_>>>()?;
    // (b, c_in, n, k) -> (b, n, c_in·k), matching the (c_out, c_in·k) weight layout
    let cols = Tensor::stack(&taps, 3)?.permute((0, 2, 1, 3))?.reshape((b * n, c_in * k))?;
    let w = weight.reshape((c_out, c_in * k))?.t()?;
    Ok(cols.matmul(&w)?.reshape((b, n, c_out))?.transpose(1, 2)?)
}

fn add_channel_bias(y: Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    match bias {
        Some(b) => Ok(y.broadcast_add(&b.reshape((1, (), 1))?)?),
        None => Ok(y),
    }
}

/// Transposed convolution with kernel 4, stride 2, padding 1 (doubles length).
///
/// Computed as two phase convolutions over the input, one per output parity:
/// `out[2j] = w₁·x[j] + w₃·x[j−1]` and `out[2j+1] = w₀·x[j+1] + w₂·x[j]`, where
/// `w` has the conv layout `(c_out, c_in, 4)`. This is exactly the stride-2
/// transposed convolution and differentiates through ordinary conv1d.
#[derive(Debug, Clone)]
pub struct UpConv1d {
    weight: Tensor,
    bias: Option<Tensor>,
}

impl UpConv1d {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, bias: bool) -> Result<Self> {
        let weight = store.normal(&format!("{name}.weight"), &[c_out, c_in, 4], 0.0, INIT_STD)?;
        let bias = if bias {
            Some(store.constant(&format!("{name}.bias"), &[c_out], 0.0)?)
        } else {
            None
        };
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (b, _, len) = x.dims3()?;
        let (c_out, c_in, _) = self.weight.dims3()?;
        let taps = Tensor::new(&[3u32, 1, 2, 0], x.device())?;
        // (c_out, c_in, 4) -> even taps [w3, w1] stacked over odd taps [w2, w0]
        let kernel = self
            .weight
            .index_select(&taps, 2)?
            .reshape((c_out, c_in, 2, 2))?
            .permute((2, 0, 1, 3))?
            .reshape((2 * c_out, c_in, 2))?;
        let y = conv1d(x, &kernel, 1, 1, 1)?; // (b, 2·c_out, len+1)
        let even = y.narrow(1, 0, c_out)?.narrow(2, 0, len)?;
        let odd = y.narrow(1, c_out, c_out)?.narrow(2, 1, len)?;
        let out = Tensor::stack(&[even, odd], 3)?.reshape((b, c_out, 2 * len))?;
        add_channel_bias(out, self.bias.as_ref())
    }
}

/// Batch normalisation over (batch, length) per channel with running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    gamma: Tensor,
    beta: Tensor,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.normal(&format!("{name}.weight"), &[channels], 1.0, INIT_STD)?,
            beta: store.constant(&format!("{name}.bias"), &[channels], 0.0)?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
        })
    }

    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, c, len) = x.dims3()?;
        let (mean, var) = if ctx.is_train() {
            let n = b * len;
            let flat = x.transpose(0, 1)?.reshape((c, n))?;
            let mean = flat.mean_keepdim(1)?;
            let centered = flat.broadcast_sub(&mean)?;
            let var = centered.sqr()?.mean_keepdim(1)?;
            // A single element per channel has no spread estimate; keep the old variance.
            let unbiased = n as f64 / (n as f64 - 1.0).max(1.0);
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_detached_tensor() * (1.0 - m))?
                + (mean.detach().flatten_all()? * m)?)?;
            self.running_mean.set(&new_mean)?;
            if n > 1 {
                let new_var = ((self.running_var.as_detached_tensor() * (1.0 - m))?
                    + (var.detach().flatten_all()? * (m * unbiased))?)?;
                self.running_var.set(&new_var)?;
            }
            (mean.reshape((1, c, 1))?, var.reshape((1, c, 1))?)
        } else {
            (
                self.running_mean.as_detached_tensor().reshape((1, c, 1))?,
                self.running_var.as_detached_tensor().reshape((1, c, 1))?,
            )
        };
        let x_hat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(x_hat
            .broadcast_mul(&self.gamma.reshape((1, c, 1))?)?
            .broadcast_add(&self.beta.reshape((1, c, 1))?)?)
    }
}

/// Dense layer applied to the last dimension.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Tensor,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f32).sqrt();
        Ok(Self {
            weight: store.uniform(&format!("{name}.weight"), &[d_out, d_in], bound)?,
            bias: store.uniform(&format!("{name}.bias"), &[d_out], bound)?,
        })
    }

    /// `(…, d_in)` → `(…, d_out)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x.broadcast_matmul(&self.weight.t()?)?.broadcast_add(&self.bias)?)
    }
}

/// Single-direction LSTM layer with PyTorch gate order (input, forget, cell, output).
#[derive(Debug, Clone)]
pub struct Lstm {
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor,
    b_hh: Tensor,
    hidden: usize,
    reverse: bool,
}

impl Lstm {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, reverse: bool) -> Result<Self> {
        let bound = 1.0 / (hidden as f32).sqrt();
        let w_ih = store.uniform(&format!("{name}.weight_ih"), &[4 * hidden, d_in], bound)?;
        let w_hh = store.uniform(&format!("{name}.weight_hh"), &[4 * hidden, hidden], bound)?;
        let b_ih = store.uniform(&format!("{name}.bias_ih"), &[4 * hidden], bound)?;
        let b_hh = store.uniform(&format!("{name}.bias_hh"), &[4 * hidden], bound)?;
        Ok(Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            hidden,
            reverse,
        })
    }

    /// `(batch, time, d_in)` → `(batch, time, hidden)`, zero initial state.
    /// Without `ctx` in train mode the state is detached every step, so inference
    /// never builds a graph as deep as the sequence.
    pub fn forward(&self, x: &Tensor, ctx: &Ctx) -> Result<Tensor> {
        let (b, t, _) = x.dims3()?;
        let h = self.hidden;
        // Input projections for every step at once; only the recurrence is sequential.
        let proj = x
            .broadcast_matmul(&self.w_ih.t()?)?
            .broadcast_add(&(&self.b_ih + &self.b_hh)?)?
            .contiguous()?;
        let w_hh_t = self.w_hh.t()?.contiguous()?;
        let mut h_t = Tensor::zeros((b, h), DType::F32, x.device())?;
        let mut c_t = h_t.clone();
        let mut outputs = vec![None; t];
        let order: Box<dyn Iterator<Item = usize>> = if self.reverse {
            Box::new((0..t).rev())
        } else {
            Box::new(0..t)
        };
        for step in order {
            let gates = (proj.narrow(1, step, 1)?.squeeze(1)? + h_t.matmul(&w_hh_t)?)?;
            let i = sigmoid(&gates.narrow(1, 0, h)?)?;
            let f = sigmoid(&gates.narrow(1, h, h)?)?;
            let g = gates.narrow(1, 2 * h, h)?.tanh()?;
            let o = sigmoid(&gates.narrow(1, 3 * h, h)?)?;
            c_t = ((f * &c_t)? + (i * g)?)?;
            h_t = (o * c_t.tanh()?)?;
            if !ctx.is_train() {
                c_t = c_t.detach();
                h_t = h_t.detach();
            }
            outputs[step] = Some(h_t.clone());
        }
        let outputs: Vec<Tensor> = outputs.into_iter().map(|o| o.expect("every step visited")).collect();
        Ok(Tensor::stack(&outputs, 1)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::Device;

    fn tensor(data: &[f32], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape, &Device::Cpu).unwrap()
    }

    fn rand_vec(n: usize, seed: u64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Scatter definition of the stride-2, padding-1, kernel-4 transposed conv.
    fn naive_transposed(x: &[f32], w: &[f32], c_in: usize, c_out: usize, len: usize) -> Vec<f32> {
        let mut out = vec![0.0f64; c_out * 2 * len];
        for o in 0..c_out {
            for i in 0..c_in {
                for j in 0..len {
                    for k in 0..4 {
                        let t = 2 * j as i64 - 1 + k as i64;
                        if (0..2 * len as i64).contains(&t) {
                            out[o * 2 * len + t as usize] +=
                                w[(o * c_in + i) * 4 + k] as f64 * x[i * len + j] as f64;
                        }
                    }
                }
            }
        }
        out.into_iter().map(|v| v as f32).collect()
    }

    #[test]
    fn phase_upconv_matches_scatter_definition() {
        let (c_in, c_out, len) = (3, 5, 7);
        let mut store = ParamStore::new(4);
        let up = UpConv1d::new(&mut store, "up", c_in, c_out, false).unwrap();
        let w: Vec<f32> = store.get("up.weight").unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let x = rand_vec(c_in * len, 9);
        let got: Vec<f32> = up
            .forward(&tensor(&x, &[1, c_in, len]))
            .unwrap()
            .flatten_all()
            .unwrap()
            .to_vec1()
            .unwrap();
        let want = naive_transposed(&x, &w, c_in, c_out, len);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
    }

    #[test]
    fn upconv_is_differentiable() {
        let mut store = ParamStore::new(0);
        let up = UpConv1d::new(&mut store, "up", 2, 2, true).unwrap();
        let x = Var::from_tensor(&tensor(&rand_vec(2 * 8, 1), &[1, 2, 8])).unwrap();
        let loss = up.forward(x.as_tensor()).unwrap().sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        assert!(grads.get(x.as_tensor()).is_some());
        assert!(grads.get(store.get("up.weight").unwrap().as_tensor()).is_some());
    }

    #[test]
    fn patch_conv_matches_builtin() {
        for (len, k, stride, pad) in [(16, 4, 2, 1), (15, 4, 2, 1), (9, 4, 1, 1), (10, 3, 3, 0), (7, 2, 1, 0)] {
            let x = tensor(&rand_vec(2 * 3 * len, 5), &[2, 3, len]);
            let w = tensor(&rand_vec(4 * 3 * k, 6), &[4, 3, k]);
            let want: Vec<f32> = x.conv1d(&w, pad, stride, 1, 1).unwrap().flatten_all().unwrap().to_vec1().unwrap();
            let got = conv1d(&x, &w, stride, pad, pad).unwrap();
            assert_eq!(got.dims()[2], (len + 2 * pad - k) / stride + 1);
            let got: Vec<f32> = got.flatten_all().unwrap().to_vec1().unwrap();
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-5, "{g} vs {w}");
            }
        }
    }

    #[test]
    fn conv_lengths() {
        let mut store = ParamStore::new(0);
        let down = Conv1d::new(&mut store, "d", 3, 4, 4, 2, 1, false).unwrap();
        let x = tensor(&rand_vec(3 * 16, 2), &[1, 3, 16]);
        assert_eq!(down.forward(&x).unwrap().dims(), &[1, 4, 8]);
        assert_eq!(down.out_len(16), 8);
    }

    #[test]
    fn batch_norm_modes() {
        let mut store = ParamStore::new(0);
        let bn = BatchNorm1d::new(&mut store, "bn", 2).unwrap();
        let x = tensor(&rand_vec(2 * 2 * 50, 3), &[2, 2, 50]);
        let y = bn.forward(&x, &Ctx::train(0)).unwrap();
        // per-channel output mean ~ beta = 0
        let m: Vec<f32> = y.transpose(0, 1).unwrap().reshape((2, 100)).unwrap().mean(1).unwrap().to_vec1().unwrap();
        assert!(m.iter().all(|v| v.abs() < 1e-5));
        let rm: Vec<f32> = store.get("bn.running_mean").unwrap().to_vec1().unwrap();
        assert!(rm.iter().any(|v| *v != 0.0));

        // single element per channel must not poison the running variance
        let one = tensor(&[0.5, -0.5], &[1, 2, 1]);
        bn.forward(&one, &Ctx::train(0)).unwrap();
        let rv: Vec<f32> = store.get("bn.running_var").unwrap().to_vec1().unwrap();
        assert!(rv.iter().all(|v| v.is_finite() && *v > 0.0));
        let e = bn.forward(&one, &Ctx::eval()).unwrap();
        assert!(e.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn lstm_zero_weights_give_zero_state() {
        let mut store = ParamStore::new(0);
        let lstm = Lstm::new(&mut store, "l", 3, 4, false).unwrap();
        for name in ["l.weight_ih", "l.weight_hh", "l.bias_ih", "l.bias_hh"] {
            let v = store.get(name).unwrap();
            v.set(&v.zeros_like().unwrap()).unwrap();
        }
        let x = tensor(&rand_vec(2 * 5 * 3, 4), &[2, 5, 3]);
        let y = lstm.forward(&x, &Ctx::eval()).unwrap();
        assert_eq!(y.dims(), &[2, 5, 4]);
        assert!(y.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lstm_single_step_matches_hand_computation() {
        let mut store = ParamStore::new(7);
        let lstm = Lstm::new(&mut store, "l", 1, 1, false).unwrap();
        let get = |n: &str| store.get(n).unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let (wih, bih, bhh) = (get("l.weight_ih"), get("l.bias_ih"), get("l.bias_hh"));
        let x = 0.7f32;
        let gate = |k: usize| wih[k] * x + bih[k] + bhh[k];
        let sig = |v: f32| 1.0 / (1.0 + (-v).exp());
        let c = sig(gate(0)) * gate(2).tanh();
        let h = sig(gate(3)) * c.tanh();
        let y: Vec<f32> = lstm.forward(&tensor(&[x], &[1, 1, 1]), &Ctx::eval()).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        assert!((y[0] - h).abs() < 1e-6);
    }

    #[test]
    fn dropout_only_in_training() {
        let x = tensor(&[1.0; 1000], &[1, 1, 1000]);
        let same = Ctx::eval().dropout(&x, 0.5).unwrap();
        assert_eq!(same.sum_all().unwrap().to_scalar::<f32>().unwrap(), 1000.0);
        let d: Vec<f32> = Ctx::train(1).dropout(&x, 0.5).unwrap().flatten_all().unwrap().to_vec1().unwrap();
        let zeros = d.iter().filter(|v| **v == 0.0).count();
        assert!((400..600).contains(&zeros));
        assert!(d.iter().all(|v| *v == 0.0 || *v == 2.0));
    }
}
