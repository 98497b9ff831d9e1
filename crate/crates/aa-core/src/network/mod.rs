//! Minimal convolutional classifier with hand-derived gradients.
//!
//! The layer menu is fixed: each configured conv layer is a valid (no
//! padding) convolution followed by ReLU and a 2x2 stride-2 max pool
//! (odd trailing rows/columns are dropped), then the feature maps are
//! flattened into a chain of dense layers whose last width is the class
//! count; hidden dense layers use ReLU, the final layer emits logits for
//! a softmax. Backprop is written out for exactly this menu — there is
//! no general autodiff graph — and a central finite-difference oracle
//! ([`grad_check`]) certifies it.
//!
//! All arithmetic runs in f64; checkpoints quantize parameters to f32 on
//! disk (see [`checkpoint`]). Convolutions are evaluated as im2col plus
//! one matrix product per layer, which keeps the hot loop inside the
//! matrix backend.

mod checkpoint;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointMeta, OptimizerInfo, CHECKPOINT_VERSION,
};

use crate::error::{Error, Result};
use ndarray::{Array2, Array4, ArrayView2, Axis};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// One convolutional layer: `out_channels` filters of size
/// `kernel x kernel` applied at the given stride, no padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Network shape: input grid, conv stack, dense widths and class count.
///
/// `dense_layers` lists every dense layer including the output layer, so
/// its last entry must equal `num_classes`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_h: usize,
    pub input_w: usize,
    pub conv_layers: Vec<ConvLayer>,
    pub dense_layers: Vec<usize>,
    pub num_classes: usize,
}

/// Shape, name and flat-buffer location of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub offset: usize,
    pub len: usize,
    /// Row-major dimensions; weights are `[out, in, k, k]` (conv) or
    /// `[out, in]` (dense), biases `[out]`.
    pub shape: Vec<usize>,
}

impl Architecture {
    /// Default desk-scale shape for `k` classes on a 32x32 grid: two conv
    /// layers (8 then 16 channels, 3x3, stride 1) and a 64-wide hidden
    /// dense layer. Trains in seconds while keeping real spatial feature
    /// extraction.
    pub fn default_for(num_classes: usize) -> Architecture {
        Architecture {
            input_h: 32,
            input_w: 32,
            conv_layers: vec![
                ConvLayer { out_channels: 8, kernel: 3, stride: 1 },
                ConvLayer { out_channels: 16, kernel: 3, stride: 1 },
            ],
            dense_layers: vec![64, num_classes],
            num_classes,
        }
    }

    /// Channel and spatial dims after each conv block, starting from the
    /// input `(1, H, W)`. Fails if any kernel or pool no longer fits.
    pub fn block_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        if self.input_h < 1 || self.input_w < 1 {
            return Err(Error::config("architecture: input grid must be non-empty"));
        }
        let mut shapes = vec![(1usize, self.input_h, self.input_w)];
        let (_, mut h, mut w) = shapes[0];
        for (i, layer) in self.conv_layers.iter().enumerate() {
            if layer.out_channels < 1 || layer.kernel < 1 || layer.stride < 1 {
                return Err(Error::config(format!(
                    "conv layer {i}: channels, kernel and stride must be >= 1"
                )));
            }
            if layer.kernel > h || layer.kernel > w {
                return Err(Error::config(format!(
                    "conv layer {i}: kernel {} does not fit in {h}x{w} input",
                    layer.kernel
                )));
            }
            let oh = (h - layer.kernel) / layer.stride + 1;
            let ow = (w - layer.kernel) / layer.stride + 1;
            if oh < 2 || ow < 2 {
                return Err(Error::config(format!(
                    "conv layer {i}: output {oh}x{ow} too small for 2x2 pooling"
                )));
            }
            h = oh / 2;
            w = ow / 2;
            shapes.push((layer.out_channels, h, w));
        }
        Ok(shapes)
    }

    /// Flattened feature length feeding the first dense layer.
    pub fn flatten_len(&self) -> Result<usize> {
        let (c, h, w) = *self.block_shapes()?.last().expect("non-empty chain");
        Ok(c * h * w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("architecture: need at least 2 classes"));
        }
        if self.dense_layers.is_empty() {
            return Err(Error::config("architecture: need at least one dense layer"));
        }
        if self.dense_layers.iter().any(|&wdt| wdt < 1) {
            return Err(Error::config("architecture: dense widths must be >= 1"));
        }
        if *self.dense_layers.last().unwrap() != self.num_classes {
            return Err(Error::config(format!(
                "architecture: last dense width {} must equal num_classes {}",
                self.dense_layers.last().unwrap(),
                self.num_classes
            )));
        }
        self.block_shapes()?;
        Ok(())
    }

    /// Parameter tensors in their fixed flat order: for each conv layer
    /// `convI.weight` then `convI.bias`, then for each dense layer
    /// `denseJ.weight` then `denseJ.bias`.
    pub fn param_layout(&self) -> Result<Vec<TensorInfo>> {
        self.validate()?;
        let shapes = self.block_shapes()?;
        let mut layout = Vec::new();
        let mut offset = 0usize;
        let mut push = |name: String, shape: Vec<usize>, offset: &mut usize| {
            let len: usize = shape.iter().product();
            layout.push(TensorInfo { name, offset: *offset, len, shape });
            *offset += len;
        };
        for (i, layer) in self.conv_layers.iter().enumerate() {
            let c_in = shapes[i].0;
            push(
                format!("conv{i}.weight"),
                vec![layer.out_channels, c_in, layer.kernel, layer.kernel],
                &mut offset,
            );
            push(format!("conv{i}.bias"), vec![layer.out_channels], &mut offset);
        }
        let mut fan_in = self.flatten_len()?;
        for (j, &width) in self.dense_layers.iter().enumerate() {
            push(format!("dense{j}.weight"), vec![width, fan_in], &mut offset);
            push(format!("dense{j}.bias"), vec![width], &mut offset);
            fan_in = width;
        }
        Ok(layout)
    }

    /// Total parameter count (closed form over the layout).
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_layout()?.iter().map(|t| t.len).sum())
    }
}

/// All parameters of a network in one contiguous f64 buffer.
///
/// Tensor accessors are slices into the same buffer, so writes through
/// [`NetworkParams::flat_view_mut`] and through [`NetworkParams::tensor_mut`]
/// are literally the same memory.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    flat: Vec<f64>,
}

impl NetworkParams {
    pub fn flat_view(&self) -> &[f64] {
        &self.flat
    }

    pub fn flat_view_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    /// Rebuilds params from a flat buffer (checkpoint loading).
    pub fn from_flat(arch: Architecture, flat: Vec<f64>) -> Result<NetworkParams> {
        let expected = arch.param_count()?;
        if flat.len() != expected {
            return Err(Error::dimension(
                format!("{expected} parameters"),
                format!("{}", flat.len()),
            ));
        }
        Ok(NetworkParams { arch, flat })
    }

    fn tensor_info(&self, name: &str) -> Result<TensorInfo> {
        self.arch
            .param_layout()?
            .into_iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::lookup(format!("no parameter tensor named '{name}'")))
    }

    /// Read view of one named tensor with its shape.
    pub fn tensor(&self, name: &str) -> Result<(&[f64], Vec<usize>)> {
        let info = self.tensor_info(name)?;
        Ok((&self.flat[info.offset..info.offset + info.len], info.shape))
    }

    /// Write view of one named tensor with its shape.
    pub fn tensor_mut(&mut self, name: &str) -> Result<(&mut [f64], Vec<usize>)> {
        let info = self.tensor_info(name)?;
        Ok((&mut self.flat[info.offset..info.offset + info.len], info.shape))
    }

    /// Rounds every parameter to its nearest f32 value. Checkpoints store
    /// f32, so quantizing before final evaluation makes reported metrics
    /// bit-reproducible from the saved file.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.flat {
            *v = *v as f32 as f64;
        }
    }
}

/// Draws fresh parameters: weights from a zero-mean normal scaled by
/// sqrt(2 / fan_in), biases exactly zero. Weight tensors are filled in
/// layout order from a ChaCha12 stream of `seed`, so the result depends
/// only on `(arch, seed)`.
pub fn init_params(arch: &Architecture, seed: u64) -> Result<NetworkParams> {
    let layout = arch.param_layout()?;
    let count: usize = layout.iter().map(|t| t.len).sum();
    let mut flat = vec![0.0f64; count];
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for info in &layout {
        if info.name.ends_with(".weight") {
            let fan_in: usize = info.shape[1..].iter().product();
            let scale = (2.0 / fan_in as f64).sqrt();
            for v in &mut flat[info.offset..info.offset + info.len] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * scale;
            }
        }
        // Biases stay zero.
    }
    Ok(NetworkParams { arch: arch.clone(), flat })
}

/// Per-conv-block intermediates kept for the backward pass.
#[derive(Debug)]
struct ConvStage {
    /// Patches matrix, rows ordered `(example, out_y, out_x)`, columns
    /// `(in_channel, ky, kx)`.
    im2col: Array2<f64>,
    /// Pre-activation maps `[N, C_out, out_h, out_w]`.
    pre: Array4<f64>,
    /// Post-ReLU post-pool maps `[N, C_out, out_h/2, out_w/2]`.
    pooled: Array4<f64>,
    /// Winning plane index (`y * w + x` within the pre-pool map) per
    /// pooled cell, row-major over `[N, C_out, ph, pw]`.
    pool_idx: Vec<u32>,
}

/// Intermediates of one batched forward pass.
#[derive(Debug)]
pub struct BatchTrace {
    input: Array4<f64>,
    conv: Vec<ConvStage>,
    /// Flattened conv features `[N, C*h*w]`.
    flat: Array2<f64>,
    /// Pre-activations of every dense layer; the last entry is the logits.
    dense_pre: Vec<Array2<f64>>,
    /// Softmax outputs `[N, K]`.
    pub probs: Array2<f64>,
}

impl BatchTrace {
    pub fn logits(&self) -> ArrayView2<'_, f64> {
        self.dense_pre.last().expect("at least one dense layer").view()
    }

    pub fn len(&self) -> usize {
        self.probs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.nrows() == 0
    }
}

/// Forward pass over a single image (row-major normalized grid).
///
/// Pure function of `(params, image)`: identical inputs give bitwise
/// identical traces.
#[derive(Debug)]
pub struct ForwardTrace {
    /// Softmax output, length `num_classes`; entries in (0, 1], sum 1.
    pub output_probs: Vec<f64>,
    pub batch: BatchTrace,
}

pub fn forward(params: &NetworkParams, image: &[f64]) -> Result<ForwardTrace> {
    let view = ArrayView2::from_shape((1, image.len()), image)
        .map_err(|e| Error::config(format!("image view: {e}")))?;
    let batch = forward_batch(params, view)?;
    let output_probs = batch.probs.row(0).to_vec();
    Ok(ForwardTrace { output_probs, batch })
}

/// Forward pass over a batch of flattened images `[N, H*W]`.
pub fn forward_batch(params: &NetworkParams, images: ArrayView2<'_, f64>) -> Result<BatchTrace> {
    let arch = &params.arch;
    let expected = arch.input_h * arch.input_w;
    if images.ncols() != expected {
        return Err(Error::dimension(
            format!("{} pixels ({}x{})", expected, arch.input_h, arch.input_w),
            format!("{} pixels", images.ncols()),
        ));
    }
    let n = images.nrows();
    if n == 0 {
        return Err(Error::EmptyInput("forward_batch: empty batch".into()));
    }
    let shapes = arch.block_shapes()?;
    let layout = arch.param_layout()?;

    let mut input = Array4::<f64>::zeros((n, 1, arch.input_h, arch.input_w));
    for ni in 0..n {
        for y in 0..arch.input_h {
            for x in 0..arch.input_w {
                input[[ni, 0, y, x]] = images[[ni, y * arch.input_w + x]];
            }
        }
    }

    let mut conv_stages = Vec::with_capacity(arch.conv_layers.len());
    {
        let mut x = input.view();
        for (i, layer) in arch.conv_layers.iter().enumerate() {
            let (c_in, h_in, w_in) = shapes[i];
            let w_mat = param_matrix(params, &layout, &format!("conv{i}.weight"))?;
            let bias = param_vector(params, &layout, &format!("conv{i}.bias"))?;
            let oh = (h_in - layer.kernel) / layer.stride + 1;
            let ow = (w_in - layer.kernel) / layer.stride + 1;

            let im2col = build_im2col(x, c_in, layer.kernel, layer.stride, oh, ow);
            let mut out_mat = im2col.dot(&w_mat.t());
            for mut row in out_mat.rows_mut() {
                row += &bias;
            }

            let mut pre = Array4::<f64>::zeros((n, layer.out_channels, oh, ow));
            for ni in 0..n {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let row = (ni * oh + oy) * ow + ox;
                        for co in 0..layer.out_channels {
                            pre[[ni, co, oy, ox]] = out_mat[[row, co]];
                        }
                    }
                }
            }

            let post = pre.mapv(|v| v.max(0.0));
            let (pooled, pool_idx) = max_pool_2x2(&post);
            conv_stages.push(ConvStage { im2col, pre, pooled, pool_idx });
            x = conv_stages.last().unwrap().pooled.view();
        }
    }

    let (c_last, h_last, w_last) = *shapes.last().unwrap();
    let flat_len = c_last * h_last * w_last;
    let features = if conv_stages.is_empty() {
        input.view()
    } else {
        conv_stages.last().unwrap().pooled.view()
    };
    let mut flat = Array2::<f64>::zeros((n, flat_len));
    for ni in 0..n {
        let mut k = 0;
        for c in 0..c_last {
            for y in 0..h_last {
                for x in 0..w_last {
                    flat[[ni, k]] = features[[ni, c, y, x]];
                    k += 1;
                }
            }
        }
    }

    let mut dense_pre = Vec::with_capacity(arch.dense_layers.len());
    let mut x = flat.clone();
    for j in 0..arch.dense_layers.len() {
        let w_mat = param_matrix(params, &layout, &format!("dense{j}.weight"))?;
        let bias = param_vector(params, &layout, &format!("dense{j}.bias"))?;
        let mut pre = x.dot(&w_mat.t());
        for mut row in pre.rows_mut() {
            row += &bias;
        }
        let is_last = j + 1 == arch.dense_layers.len();
        if !is_last {
            x = pre.mapv(|v| v.max(0.0));
        }
        dense_pre.push(pre);
    }

    let probs = softmax_rows(dense_pre.last().unwrap().view());
    Ok(BatchTrace { input, conv: conv_stages, flat, dense_pre, probs })
}

/// Mean cross-entropy of softmax(logits) against target rows, computed in
/// the log-sum-exp form so confident logits cannot overflow.
pub fn mean_ce_from_logits(logits: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    if logits.dim() != targets.dim() {
        return Err(Error::dimension(
            format!("targets shaped {:?}", logits.dim()),
            format!("{:?}", targets.dim()),
        ));
    }
    if logits.nrows() == 0 {
        return Err(Error::EmptyInput("cross-entropy over empty batch".into()));
    }
    let mut total = 0.0f64;
    for (lrow, trow) in logits.rows().into_iter().zip(targets.rows()) {
        let max = lrow.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + lrow.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        total += lrow
            .iter()
            .zip(trow.iter())
            .map(|(&l, &t)| t * (lse - l))
            .sum::<f64>();
    }
    Ok(total / logits.nrows() as f64)
}

/// Checks that every target row is a probability vector over `k` classes
/// (entries >= 0 and finite, sum within 1e-6 of 1).
pub fn validate_targets(targets: ArrayView2<'_, f64>, k: usize) -> Result<()> {
    if targets.ncols() != k {
        return Err(Error::dimension(
            format!("{k} target columns"),
            format!("{}", targets.ncols()),
        ));
    }
    for (i, row) in targets.rows().into_iter().enumerate() {
        if row.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::config(format!(
                "target row {i} has a negative or non-finite entry"
            )));
        }
        let sum: f64 = row.sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::config(format!("target row {i} sums to {sum}, not 1")));
        }
    }
    Ok(())
}

/// Gradient of the mean cross-entropy between softmax outputs and target
/// rows, flattened in parameter-layout order. Targets may be one-hot
/// (supervised classes) or any probability vector (e.g. uniform rows).
pub fn backward(
    params: &NetworkParams,
    images: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    Ok(backward_full(params, images, targets)?.2)
}

/// Forward + backward in one pass; returns (mean loss, trace, gradient).
pub fn backward_full(
    params: &NetworkParams,
    images: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, BatchTrace, Vec<f64>)> {
    let arch = &params.arch;
    validate_targets(targets, arch.num_classes)?;
    if targets.nrows() != images.nrows() {
        return Err(Error::dimension(
            format!("{} target rows", images.nrows()),
            format!("{}", targets.nrows()),
        ));
    }
    let trace = forward_batch(params, images)?;
    let loss = mean_ce_from_logits(trace.logits(), targets)?;

    let layout = arch.param_layout()?;
    let shapes = arch.block_shapes()?;
    let mut grad = vec![0.0f64; params.flat.len()];
    let n = images.nrows();
    let inv_n = 1.0 / n as f64;

    // Softmax-CE gradient w.r.t. logits is (probs - targets) / N.
    let mut dout: Array2<f64> = (&trace.probs - &targets).mapv(|v| v * inv_n);

    let n_dense = arch.dense_layers.len();
    for j in (0..n_dense).rev() {
        let x_in: Array2<f64> = if j == 0 {
            trace.flat.clone()
        } else {
            trace.dense_pre[j - 1].mapv(|v| v.max(0.0))
        };
        let dw = dout.t().dot(&x_in);
        let db = dout.sum_axis(Axis(0));
        // Degenerate shapes (e.g. a single flattened feature) can make the
        // matmul result non-standard-layout, so normalize before slicing.
        let dw = dw.as_standard_layout();
        write_tensor_grad(&mut grad, &layout, &format!("dense{j}.weight"), dw.as_slice().unwrap());
        write_tensor_grad(&mut grad, &layout, &format!("dense{j}.bias"), db.as_slice().unwrap());

        let w_mat = param_matrix(params, &layout, &format!("dense{j}.weight"))?;
        let mut dx = dout.dot(&w_mat);
        if j > 0 {
            // ReLU mask of the previous dense pre-activation.
            dx.zip_mut_with(&trace.dense_pre[j - 1], |d, &pre| {
                if pre <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        dout = dx;
    }

    // `dout` now holds the gradient w.r.t. the flattened conv features.
    let (c_last, h_last, w_last) = *shapes.last().unwrap();
    let mut d_maps = Array4::<f64>::zeros((n, c_last, h_last, w_last));
    for ni in 0..n {
        let mut k = 0;
        for c in 0..c_last {
            for y in 0..h_last {
                for x in 0..w_last {
                    d_maps[[ni, c, y, x]] = dout[[ni, k]];
                    k += 1;
                }
            }
        }
    }

    for i in (0..arch.conv_layers.len()).rev() {
        let layer = &arch.conv_layers[i];
        let stage = &trace.conv[i];
        let (c_in, h_in, w_in) = shapes[i];
        let (_, _, oh, ow) = stage.pre.dim();
        let (_, _, ph, pw) = stage.pooled.dim();
        let cout = layer.out_channels;

        // Un-pool: route each pooled gradient to its winning cell, then
        // apply the ReLU mask of the pre-activation.
        let mut d_pre = Array4::<f64>::zeros((n, cout, oh, ow));
        let mut cell = 0usize;
        for ni in 0..n {
            for co in 0..cout {
                for py in 0..ph {
                    for px in 0..pw {
                        let win = stage.pool_idx[cell] as usize;
                        cell += 1;
                        let (wy, wx) = (win / ow, win % ow);
                        if stage.pre[[ni, co, wy, wx]] > 0.0 {
                            d_pre[[ni, co, wy, wx]] += d_maps[[ni, co, py, px]];
                        }
                    }
                }
            }
        }

        let mut dout_mat = Array2::<f64>::zeros((n * oh * ow, cout));
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (ni * oh + oy) * ow + ox;
                    for co in 0..cout {
                        dout_mat[[row, co]] = d_pre[[ni, co, oy, ox]];
                    }
                }
            }
        }

        let dw = dout_mat.t().dot(&stage.im2col);
        let db = dout_mat.sum_axis(Axis(0));
        let dw = dw.as_standard_layout();
        write_tensor_grad(&mut grad, &layout, &format!("conv{i}.weight"), dw.as_slice().unwrap());
        write_tensor_grad(&mut grad, &layout, &format!("conv{i}.bias"), db.as_slice().unwrap());

        let w_mat = param_matrix(params, &layout, &format!("conv{i}.weight"))?;
        let dcols = dout_mat.dot(&w_mat);
        let mut dx = Array4::<f64>::zeros((n, c_in, h_in, w_in));
        let k = layer.kernel;
        for ni in 0..n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let row = (ni * oh + oy) * ow + ox;
                    let (y0, x0) = (oy * layer.stride, ox * layer.stride);
                    let mut col = 0;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            for kx in 0..k {
                                dx[[ni, ci, y0 + ky, x0 + kx]] += dcols[[row, col]];
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
        d_maps = dx;
    }

    let _ = trace.input; // input gradients are not needed
    Ok((loss, trace, grad))
}

/// Central finite-difference check of [`backward`] on the mean
/// cross-entropy loss. Returns the maximum relative error, with
/// denominator `max(|analytic|, |finite difference|, 1e-12)`.
///
/// Coordinates where both values sit below 1e-8 count as matching: the
/// finite difference of an O(1) loss at eps >= 1e-7 carries rounding
/// noise of roughly `|loss| * 2^-52 / eps` (about 1e-11 at eps = 1e-5),
/// so values that small are noise, not gradient signal. Without this
/// guard a gradient that is analytically zero — e.g. targets equal to
/// the outputs — would compare pure noise against zero and report an
/// error near 1.
///
/// Every coordinate is checked for nets of at most 600 parameters;
/// larger nets check a deterministic 256-coordinate subsample.
pub fn grad_check(
    params: &NetworkParams,
    images: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
    epsilon: f64,
) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::config(format!(
            "grad_check: epsilon {epsilon} outside [1e-7, 1e-3]"
        )));
    }
    let (_, _, analytic) = backward_full(params, images, targets)?;
    let count = params.flat.len();
    let coords: Vec<usize> = if count <= 600 {
        (0..count).collect()
    } else {
        let mut rng = ChaCha12Rng::seed_from_u64(0x6772_6164);
        rand::seq::index::sample(&mut rng, count, 256).into_vec()
    };

    let mut probe = params.clone();
    let mut max_rel = 0.0f64;
    for &i in &coords {
        let orig = probe.flat[i];
        probe.flat[i] = orig + epsilon;
        let up = loss_only(&probe, images, targets)?;
        probe.flat[i] = orig - epsilon;
        let down = loss_only(&probe, images, targets)?;
        probe.flat[i] = orig;
        let fd = (up - down) / (2.0 * epsilon);
        let a = analytic[i];
        if fd.abs().max(a.abs()) < 1e-8 {
            continue;
        }
        let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// Mean cross-entropy of a batch without computing gradients.
pub fn loss_only(
    params: &NetworkParams,
    images: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<f64> {
    let trace = forward_batch(params, images)?;
    mean_ce_from_logits(trace.logits(), targets)
}

/// Plain gradient-descent step: `p -= lr * g`. Rejects non-finite
/// gradients before touching the parameters.
pub fn sgd_step(params: &mut NetworkParams, grad: &[f64], learning_rate: f64) -> Result<()> {
    check_step_inputs(params, grad, learning_rate)?;
    for (p, g) in params.flat.iter_mut().zip(grad) {
        *p -= learning_rate * g;
    }
    Ok(())
}

/// Adam optimizer state: first/second moment vectors and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamMoments {
    pub fn zeros(param_count: usize) -> AdamMoments {
        AdamMoments { m: vec![0.0; param_count], v: vec![0.0; param_count], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// Adam hyper-parameters; defaults are lr 1e-3, betas 0.9/0.999, eps 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// One bias-corrected Adam update through the flat view.
pub fn adam_step(
    params: &mut NetworkParams,
    grad: &[f64],
    moments: &mut AdamMoments,
    hyper: &AdamHyper,
) -> Result<()> {
    check_step_inputs(params, grad, hyper.learning_rate)?;
    if moments.m.len() != params.flat.len() {
        return Err(Error::dimension(
            format!("{} moment entries", params.flat.len()),
            format!("{}", moments.m.len()),
        ));
    }
    moments.t += 1;
    let t = moments.t as i32;
    let bc1 = 1.0 - hyper.beta1.powi(t);
    let bc2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.flat.len() {
        let g = grad[i];
        moments.m[i] = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        moments.v[i] = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = moments.m[i] / bc1;
        let v_hat = moments.v[i] / bc2;
        params.flat[i] -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
    }
    Ok(())
}

fn check_step_inputs(params: &NetworkParams, grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate must be > 0, got {lr}")));
    }
    if grad.len() != params.flat.len() {
        return Err(Error::dimension(
            format!("{} gradient entries", params.flat.len()),
            format!("{}", grad.len()),
        ));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::numeric(format!(
            "gradient entry {i} is {}; step aborted",
            grad[i]
        )));
    }
    Ok(())
}

fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(logits.dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (j, &l) in row.iter().enumerate() {
            let e = (l - max).exp();
            out[[i, j]] = e;
            sum += e;
        }
        for j in 0..row.len() {
            out[[i, j]] /= sum;
        }
    }
    out
}

fn build_im2col(
    x: ndarray::ArrayView4<'_, f64>,
    c_in: usize,
    kernel: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let n = x.dim().0;
    let cols = c_in * kernel * kernel;
    let mut out = Array2::<f64>::zeros((n * oh * ow, cols));
    for ni in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let row = (ni * oh + oy) * ow + ox;
                let (y0, x0) = (oy * stride, ox * stride);
                let mut col = 0;
                for ci in 0..c_in {
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            out[[row, col]] = x[[ni, ci, y0 + ky, x0 + kx]];
                            col += 1;
                        }
                    }
                }
            }
        }
    }
    out
}

fn max_pool_2x2(pre: &Array4<f64>) -> (Array4<f64>, Vec<u32>) {
    let (n, c, h, w) = pre.dim();
    let (ph, pw) = (h / 2, w / 2);
    let mut pooled = Array4::<f64>::zeros((n, c, ph, pw));
    let mut idx = Vec::with_capacity(n * c * ph * pw);
    for ni in 0..n {
        for ci in 0..c {
            for py in 0..ph {
                for px in 0..pw {
                    let (y0, x0) = (2 * py, 2 * px);
                    let mut best = pre[[ni, ci, y0, x0]];
                    let mut best_at = (y0 * w + x0) as u32;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let v = pre[[ni, ci, y0 + dy, x0 + dx]];
                            if v > best {
                                best = v;
                                best_at = ((y0 + dy) * w + (x0 + dx)) as u32;
                            }
                        }
                    }
                    pooled[[ni, ci, py, px]] = best;
                    idx.push(best_at);
                }
            }
        }
    }
    (pooled, idx)
}

fn param_matrix<'a>(
    params: &'a NetworkParams,
    layout: &[TensorInfo],
    name: &str,
) -> Result<ArrayView2<'a, f64>> {
    let info = layout
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::lookup(format!("no parameter tensor named '{name}'")))?;
    let rows = info.shape[0];
    let cols = info.len / rows;
    ArrayView2::from_shape((rows, cols), &params.flat[info.offset..info.offset + info.len])
        .map_err(|e| Error::config(format!("tensor view '{name}': {e}")))
}

fn param_vector<'a>(
    params: &'a NetworkParams,
    layout: &[TensorInfo],
    name: &str,
) -> Result<ndarray::ArrayView1<'a, f64>> {
    let info = layout
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::lookup(format!("no parameter tensor named '{name}'")))?;
    Ok(ndarray::ArrayView1::from(
        &params.flat[info.offset..info.offset + info.len],
    ))
}

fn write_tensor_grad(grad: &mut [f64], layout: &[TensorInfo], name: &str, values: &[f64]) {
    let info = layout
        .iter()
        .find(|t| t.name == name)
        .expect("layout consistent with architecture");
    grad[info.offset..info.offset + info.len].copy_from_slice(values);
}
