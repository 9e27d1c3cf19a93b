//! The despeckling network.
//!
//! Eight 3×3 convolution blocks estimate the speckle field: the first and
//! last are Conv-ReLU, the six in between Conv-BN-ReLU with 64 features.
//! The noisy input is divided by that estimate and passed through `tanh`:
//!
//! ```text
//! y ─┬─ conv·relu ─ 6×(conv·bn·relu) ─ conv·relu ─ n̂
//!    └───────────────── y / (n̂ + ε) ── tanh ── x̂
//! ```

mod activation;
mod batchnorm;
mod conv;
mod io;

pub use activation::{
    division_residual, division_residual_backward, relu, relu_backward, tanh_backward, tanh_head,
    DIVISION_EPS,
};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BatchMoments, BatchNormLayer, BnCache, BnGrads, Mode,
};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer, KERNEL};
pub use io::{load_params, read_params, save_params, write_params, PARAMS_MAGIC};

use crate::error::{Error, Result};
use crate::image::{images_to_tensor, tensor_to_images, Image};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor4};

/// Width and depth of the convolution stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub features: usize,
    /// Number of convolution layers, including the first and last.
    pub depth: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            features: 64,
            depth: 8,
        }
    }
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.features == 0 || self.depth < 2 {
            return Err(Error::InvalidArgument(format!(
                "architecture needs features >= 1 and depth >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// One convolution followed by optional batch norm, then ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<T = f32> {
    pub conv: ConvLayer<T>,
    pub bn: Option<BatchNormLayer<T>>,
}

impl<T: Real> Block<T> {
    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, BatchNormLayer::param_count)
    }
}

/// Learned parameters and batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T = f32> {
    blocks: Vec<Block<T>>,
}

/// Outputs of a forward pass.
#[derive(Debug, Clone)]
pub struct Forward<T> {
    /// Output of the last block's ReLU: the estimated speckle.
    pub speckle: Tensor4<T>,
    pub despeckled: Tensor4<T>,
    pub trace: Option<ForwardTrace<T>>,
}

/// Activations retained for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<T> {
    mode: Mode,
    /// Input to every block; entry 0 is the network input.
    block_inputs: Vec<Tensor4<T>>,
    bn_caches: Vec<Option<BnCache<T>>>,
    speckle: Tensor4<T>,
    despeckled: Tensor4<T>,
}

impl<T> ForwardTrace<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads<T> {
    pub conv: ConvGrads<T>,
    pub bn: Option<BnGrads<T>>,
}

/// Gradients for every parameter plus the network input.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub blocks: Vec<BlockGrads<T>>,
    /// Network input with its gradient slot filled.
    pub input: Tensor4<T>,
}

impl<T: Real> Gradients<T> {
    /// Gradient slices in the order of [`NetworkParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.conv.weights.as_slice());
            out.push(b.conv.bias.as_slice());
            if let Some(bn) = &b.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }
}

impl<T: Real> NetworkParams<T> {
    /// Assembles and validates a block stack: 1 input and 1 output channel,
    /// channel counts chained, batch norm on interior blocks only.
    pub fn from_blocks(blocks: Vec<Block<T>>) -> Result<Self> {
        if blocks.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "network needs at least 2 conv layers, got {}",
                blocks.len()
            )));
        }
        let last = blocks.len() - 1;
        let mut channels = 1;
        for (i, b) in blocks.iter().enumerate() {
            if b.conv.in_channels() != channels {
                return Err(Error::ShapeMismatch(format!(
                    "layer {} expects {} input channels, previous layer yields {channels}",
                    i + 1,
                    b.conv.in_channels()
                )));
            }
            let interior = i != 0 && i != last;
            match (&b.bn, interior) {
                (Some(bn), true) => {
                    bn.validate()?;
                    if bn.channels() != b.conv.out_channels() {
                        return Err(Error::ShapeMismatch(format!(
                            "layer {} batch norm width {} vs conv width {}",
                            i + 1,
                            bn.channels(),
                            b.conv.out_channels()
                        )));
                    }
                }
                (None, false) => {}
                (Some(_), false) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {} must not have batch norm",
                        i + 1
                    )))
                }
                (None, true) => {
                    return Err(Error::InvalidArgument(format!(
                        "layer {} is missing batch norm",
                        i + 1
                    )))
                }
            }
            channels = b.conv.out_channels();
        }
        if channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "final layer must output 1 channel, got {channels}"
            )));
        }
        Ok(Self { blocks })
    }

    /// He-initialized network: conv weights `N(0, 2 / fan_in)`, zero
    /// biases, batch norm `gamma = 1`, `beta = 0`.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let f = arch.features;
        let blocks = (0..arch.depth)
            .map(|i| {
                let cin = if i == 0 { 1 } else { f };
                let cout = if i + 1 == arch.depth { 1 } else { f };
                let std = (2.0 / (cin * KERNEL * KERNEL) as f64).sqrt();
                let weights = (0..cout * cin * KERNEL * KERNEL)
                    .map(|_| T::from_f64_lossy(std * rng.standard_normal()))
                    .collect();
                let conv = ConvLayer::new(cout, cin, weights, vec![T::zero(); cout])?;
                let interior = i != 0 && i + 1 != arch.depth;
                Ok(Block {
                    conv,
                    bn: interior.then(|| BatchNormLayer::new(cout)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(blocks)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            features: self.blocks[0].conv.out_channels(),
            depth: self.blocks.len(),
        }
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block<T>] {
        &mut self.blocks
    }

    /// Learnable parameter count per conv layer.
    pub fn param_census(&self) -> Vec<usize> {
        self.blocks.iter().map(Block::param_count).collect()
    }

    pub fn param_count(&self) -> usize {
        self.param_census().iter().sum()
    }

    /// Learnable tensors in a fixed order: per block weights, bias, and for
    /// batch-norm blocks gamma and beta.
    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::new();
        for b in &mut self.blocks {
            out.push(b.conv.weights.as_mut_slice());
            out.push(b.conv.bias.as_mut_slice());
            if let Some(bn) = &mut b.bn {
                out.push(bn.gamma.as_mut_slice());
                out.push(bn.beta.as_mut_slice());
            }
        }
        out
    }

    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::new();
        for b in &self.blocks {
            out.push(b.conv.weights.as_slice());
            out.push(b.conv.bias.as_slice());
            if let Some(bn) = &b.bn {
                out.push(bn.gamma.as_slice());
                out.push(bn.beta.as_slice());
            }
        }
        out
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv: b.conv.cast(),
                    bn: b.bn.as_ref().map(BatchNormLayer::cast),
                })
                .collect(),
        }
    }

    /// True when every batch-norm layer has running statistics.
    pub fn is_calibrated(&self) -> bool {
        self.blocks
            .iter()
            .filter_map(|b| b.bn.as_ref())
            .all(|bn| bn.calibrated)
    }

    fn check_input(y: &Tensor4<T>) -> Result<()> {
        let d = y.dims();
        if d.n == 0 || d.c != 1 || d.h < 3 || d.w < 3 {
            return Err(Error::ShapeMismatch(format!(
                "network input must be Nx1xHxW with N >= 1 and H, W >= 3, got {d}"
            )));
        }
        Ok(())
    }

    /// Forward pass that never mutates the parameters. `Mode::Train` is
    /// treated as `Mode::BatchStats` here; the returned moments let
    /// [`NetworkParams::forward`] update running statistics.
    fn run(
        &self,
        y: &Tensor4<T>,
        mode: Mode,
        record: bool,
    ) -> Result<(Forward<T>, Vec<Option<BatchMoments<T>>>)> {
        Self::check_input(y)?;
        let mut block_inputs = Vec::new();
        let mut bn_caches = Vec::new();
        let mut moments = Vec::with_capacity(self.blocks.len());
        let mut x = y.clone();
        for block in &self.blocks {
            let mut z = conv2d_forward(&x, &block.conv)?;
            let mut cache = None;
            let mut moment = None;
            if let Some(bn) = &block.bn {
                let out = batchnorm_forward(&z, bn, mode, record)?;
                z = out.output;
                cache = out.cache;
                moment = out.moments;
            }
            let a = relu(&z);
            if record {
                block_inputs.push(std::mem::replace(&mut x, a));
                bn_caches.push(cache);
            } else {
                x = a;
            }
            moments.push(moment);
        }
        let speckle = x;
        let eps = T::from_f64_lossy(DIVISION_EPS);
        let despeckled = tanh_head(&division_residual(y, &speckle, eps)?);
        let trace = record.then(|| ForwardTrace {
            mode,
            block_inputs,
            bn_caches,
            speckle: speckle.clone(),
            despeckled: despeckled.clone(),
        });
        Ok((
            Forward {
                speckle,
                despeckled,
                trace,
            },
            moments,
        ))
    }

    /// Full forward pass. In [`Mode::Train`] batch-norm running statistics
    /// are updated; `record` keeps the activations needed by
    /// [`NetworkParams::backward`].
    pub fn forward(&mut self, y: &Tensor4<T>, mode: Mode, record: bool) -> Result<Forward<T>> {
        let (out, moments) = self.run(y, mode, record)?;
        if mode == Mode::Train {
            for (block, m) in self.blocks.iter_mut().zip(moments) {
                if let (Some(bn), Some(m)) = (block.bn.as_mut(), m) {
                    bn.update_running(&m);
                }
            }
        }
        Ok(out)
    }

    /// Inference with running statistics; a pure function of input and params.
    pub fn infer(&self, y: &Tensor4<T>) -> Result<Forward<T>> {
        Ok(self.run(y, Mode::Eval, false)?.0)
    }

    /// Non-mutating forward in `Mode::BatchStats` or `Mode::Eval`.
    pub fn forward_frozen(&self, y: &Tensor4<T>, mode: Mode, record: bool) -> Result<Forward<T>> {
        if mode == Mode::Train {
            return Err(Error::InvalidArgument(
                "training mode mutates running statistics; use forward".into(),
            ));
        }
        Ok(self.run(y, mode, record)?.0)
    }

    /// Inference that falls back to batch statistics when the batch-norm
    /// layers were never trained.
    pub fn despeckle(&self, y: &Tensor4<T>) -> Result<Forward<T>> {
        match self.infer(y) {
            Err(Error::UncalibratedBatchNorm) => self.forward_frozen(y, Mode::BatchStats, false),
            other => other,
        }
    }

    /// Despeckles one image; returns `(x̂, n̂)`.
    pub fn despeckle_image(&self, y: &Image) -> Result<(Image, Image)> {
        let out = self.despeckle(&images_to_tensor(&[y])?)?;
        let mut x = tensor_to_images(&out.despeckled)?;
        let mut n = tensor_to_images(&out.speckle)?;
        Ok((x.remove(0), n.remove(0)))
    }

    /// Reverse-mode pass given `dL/dx̂` for the despeckled output.
    pub fn backward(&self, trace: &ForwardTrace<T>, d_out: &Tensor4<T>) -> Result<Gradients<T>> {
        if !trace.mode.uses_batch_stats() {
            return Err(Error::TraceMismatch(
                "trace was recorded in inference mode".into(),
            ));
        }
        if trace.block_inputs.len() != self.blocks.len() {
            return Err(Error::TraceMismatch(format!(
                "trace has {} blocks, network has {}",
                trace.block_inputs.len(),
                self.blocks.len()
            )));
        }
        trace.despeckled.ensure_same_dims(d_out, "upstream gradient")?;
        let input = &trace.block_inputs[0];
        let eps = T::from_f64_lossy(DIVISION_EPS);

        let d_ratio = tanh_backward(&trace.despeckled, d_out)?;
        let (d_skip, mut d_act) = division_residual_backward(input, &trace.speckle, eps, &d_ratio)?;

        let mut grads = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate().rev() {
            let output = trace
                .block_inputs
                .get(i + 1)
                .unwrap_or(&trace.speckle);
            let block_in = &trace.block_inputs[i];
            if block_in.dims().c != block.conv.in_channels() {
                return Err(Error::TraceMismatch(format!("layer {} width differs", i + 1)));
            }
            let mut d_z = relu_backward(output, &d_act)?;
            let mut bn_grads = None;
            if let Some(bn) = &block.bn {
                let cache = trace.bn_caches[i]
                    .as_ref()
                    .ok_or_else(|| Error::TraceMismatch(format!("layer {} has no BN cache", i + 1)))?;
                let (g, dx) = batchnorm_backward(cache, bn, &d_z)?;
                bn_grads = Some(g);
                d_z = dx;
            }
            let (conv_grads, d_in) = conv2d_backward(block_in, &block.conv, &d_z)?;
            grads.push(BlockGrads {
                conv: conv_grads,
                bn: bn_grads,
            });
            d_act = d_in;
        }
        grads.reverse();

        let mut input_grad = d_act;
        for (g, s) in input_grad.data_mut().iter_mut().zip(d_skip.data()) {
            *g += *s;
        }
        let mut input = input.clone();
        input.set_grad(input_grad.into_vec())?;
        Ok(Gradients {
            blocks: grads,
            input,
        })
    }
}
