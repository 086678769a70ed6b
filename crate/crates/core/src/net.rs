//! Model configuration and the FCN / U-Net graphs.
//!
//! Both topologies are lowered to a fixed list of [`Op`]s over numbered
//! nodes (node 0 is the input). The forward pass records every node value so
//! the backward pass can walk the list in reverse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, shape_err, Error, Result};
use crate::layers::{
    concat_channels, conv2d, conv2d_backward, maxpool2, maxpool2_backward, relu, relu_backward,
    softmax_channels, split_channels, transposed_conv2d, transposed_conv2d_backward, ConvParams,
    PoolIndices,
};
use crate::metrics::LabelMap;
use crate::tensor::{Real, Shape4, Tensor4};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    #[serde(rename = "FCN", alias = "fcn")]
    Fcn,
    #[serde(rename = "UNET", alias = "unet", alias = "U-Net")]
    Unet,
}

fn default_deconv_kernel() -> usize {
    2
}
fn default_out_kernel() -> usize {
    1
}
fn default_pool_size() -> usize {
    2
}
fn default_deconv_strides() -> [usize; 2] {
    [2, 2]
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub arch: Arch,
    pub num_channels: usize,
    pub num_classes: usize,
    pub filters: Vec<usize>,
    pub conv_kernel: usize,
    #[serde(default = "default_deconv_kernel")]
    pub deconv_kernel: usize,
    #[serde(default = "default_out_kernel")]
    pub out_kernel: usize,
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    #[serde(default = "default_deconv_strides")]
    pub deconv_strides: [usize; 2],
}

impl ModelConfig {
    pub fn fcn(filters: &[usize], conv_kernel: usize, out_kernel: usize, num_channels: usize, num_classes: usize) -> Self {
        ModelConfig {
            arch: Arch::Fcn,
            num_channels,
            num_classes,
            filters: filters.to_vec(),
            conv_kernel,
            deconv_kernel: default_deconv_kernel(),
            out_kernel,
            pool_size: 2,
            deconv_strides: [2, 2],
        }
    }

    pub fn unet(
        filters: &[usize],
        conv_kernel: usize,
        deconv_kernel: usize,
        out_kernel: usize,
        num_channels: usize,
        num_classes: usize,
    ) -> Self {
        ModelConfig {
            arch: Arch::Unet,
            num_channels,
            num_classes,
            filters: filters.to_vec(),
            conv_kernel,
            deconv_kernel,
            out_kernel,
            pool_size: 2,
            deconv_strides: [2, 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.num_channels == 0 {
            bad.push("num_channels must be >= 1".to_string());
        }
        if self.num_classes < 2 {
            bad.push("num_classes must be >= 2".to_string());
        }
        if self.num_classes > 256 {
            bad.push("num_classes must be <= 256".to_string());
        }
        if self.conv_kernel == 0 {
            bad.push("conv_kernel must be >= 1".to_string());
        }
        if self.out_kernel == 0 {
            bad.push("out_kernel must be >= 1".to_string());
        }
        if self.deconv_kernel == 0 {
            bad.push("deconv_kernel must be >= 1".to_string());
        }
        if self.pool_size != 2 {
            bad.push(format!("pool_size must be 2, got {}", self.pool_size));
        }
        if self.deconv_strides != [2, 2] {
            bad.push(format!("deconv_strides must be [2, 2], got {:?}", self.deconv_strides));
        }
        if self.filters.contains(&0) {
            bad.push("filters entries must be >= 1".to_string());
        }
        match self.arch {
            Arch::Fcn if self.filters.len() < 3 => {
                bad.push(format!("FCN filters needs >= 3 entries, got {}", self.filters.len()))
            }
            Arch::Unet if self.filters.len() != 5 => {
                bad.push(format!("U-Net filters needs exactly 5 entries, got {}", self.filters.len()))
            }
            _ => {}
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Required divisor of input height and width.
    pub fn spatial_divisor(&self) -> usize {
        match self.arch {
            Arch::Fcn => 1,
            Arch::Unet => 16,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    Conv,
    Deconv,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub params: ConvParams<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Op {
    Conv { layer: usize, input: usize },
    Deconv { layer: usize, input: usize },
    Relu { input: usize },
    Pool { input: usize },
    Concat { first: usize, second: usize },
}

/// One gradient per learnable layer, shaped like the layer's parameters.
pub type Gradients<T> = Vec<ConvParams<T>>;

struct Cache<T> {
    nodes: Vec<Tensor4<T>>,
    pools: Vec<Option<PoolIndices>>,
}

/// ReLU on/off masks and pooling argmaxes of the last forward pass. Two
/// passes with equal patterns lie in the same differentiable piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ActivationPattern {
    relu: Vec<Vec<bool>>,
    pools: Vec<Vec<usize>>,
}

pub struct Graph<T> {
    config: ModelConfig,
    layers: Vec<Layer<T>>,
    ops: Vec<Op>,
    cache: Option<Cache<T>>,
}

impl<T> std::fmt::Debug for Graph<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Graph")
            .field("config", &self.config)
            .field("layers", &self.layers.iter().map(|l| l.name.as_str()).collect::<Vec<_>>())
            .finish_non_exhaustive()
    }
}

impl<T: Real> Clone for Graph<T> {
    fn clone(&self) -> Self {
        Graph {
            config: self.config.clone(),
            layers: self.layers.clone(),
            ops: self.ops.clone(),
            cache: None,
        }
    }
}

struct Planner<T> {
    layers: Vec<Layer<T>>,
    ops: Vec<Op>,
    channels: Vec<usize>,
    rng_seed: u64,
}

impl<T: Real> Planner<T> {
    fn new(input_channels: usize, seed: u64) -> Self {
        Planner {
            layers: Vec::new(),
            ops: Vec::new(),
            channels: vec![input_channels],
            rng_seed: seed,
        }
    }

    fn push(&mut self, op: Op, channels: usize) -> usize {
        self.ops.push(op);
        self.channels.push(channels);
        self.ops.len()
    }

    /// He-uniform kernel, zero bias. Each layer draws from its own ChaCha
    /// stream so layer `i` does not depend on the sizes of earlier layers.
    fn init(&self, k: usize, dim2: usize, dim3: usize, fan_in: usize, out: usize) -> ConvParams<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(self.layers.len() as u64);
        let limit = (6.0 / fan_in as f64).sqrt();
        let mut p = ConvParams::zeros(k, dim2, dim3, out);
        for v in p.kernel.data_mut() {
            *v = T::from_f64_lossy(rng.random_range(-limit..limit));
        }
        p
    }

    fn conv(&mut self, name: String, input: usize, filters: usize, k: usize) -> usize {
        let cin = self.channels[input];
        let params = self.init(k, cin, filters, k * k * cin, filters);
        self.layers.push(Layer {
            name,
            kind: LayerKind::Conv,
            params,
        });
        self.push(
            Op::Conv {
                layer: self.layers.len() - 1,
                input,
            },
            filters,
        )
    }

    fn conv_relu(&mut self, name: String, input: usize, filters: usize, k: usize) -> usize {
        let z = self.conv(name, input, filters, k);
        self.push(Op::Relu { input: z }, filters)
    }

    fn deconv(&mut self, name: String, input: usize, filters: usize, k: usize) -> usize {
        let cin = self.channels[input];
        let params = self.init(k, filters, cin, k * k * cin, filters);
        self.layers.push(Layer {
            name,
            kind: LayerKind::Deconv,
            params,
        });
        self.push(
            Op::Deconv {
                layer: self.layers.len() - 1,
                input,
            },
            filters,
        )
    }

    fn pool(&mut self, input: usize) -> usize {
        let c = self.channels[input];
        self.push(Op::Pool { input }, c)
    }

    fn concat(&mut self, first: usize, second: usize) -> usize {
        let c = self.channels[first] + self.channels[second];
        self.push(Op::Concat { first, second }, c)
    }
}

/// Builds the plain convolution stack: `conv_i` + ReLU for every filter
/// count, then the softmax output convolution.
pub fn build_fcn<T: Real>(config: &ModelConfig, seed: u64) -> Result<Graph<T>> {
    config.validate()?;
    if config.arch != Arch::Fcn {
        return Err(config_err!("build_fcn called with arch {:?}", config.arch));
    }
    let mut p = Planner::new(config.num_channels, seed);
    let mut h = 0;
    for (i, &f) in config.filters.iter().enumerate() {
        h = p.conv_relu(format!("conv_{}", i + 1), h, f, config.conv_kernel);
    }
    p.conv("out".into(), h, config.num_classes, config.out_kernel);
    Ok(Graph::from_plan(config.clone(), p))
}

/// Builds the five-level U-Net: two conv + ReLU per level, four pools, four
/// transposed convolutions each concatenated (upsampled first) with the
/// mirror level, and the softmax output convolution.
pub fn build_unet<T: Real>(config: &ModelConfig, seed: u64) -> Result<Graph<T>> {
    config.validate()?;
    if config.arch != Arch::Unet {
        return Err(config_err!("build_unet called with arch {:?}", config.arch));
    }
    let k = config.conv_kernel;
    let f = &config.filters;
    let mut p = Planner::new(config.num_channels, seed);
    let mut skips = Vec::new();
    let mut h = 0;
    for level in 0..5 {
        if level > 0 {
            h = p.pool(h);
        }
        let n = level + 1;
        h = p.conv_relu(format!("conv_{n}a"), h, f[level], k);
        h = p.conv_relu(format!("conv_{n}b"), h, f[level], k);
        skips.push(h);
    }
    for (i, level) in (0..4).rev().enumerate() {
        let n = i + 6;
        let up = p.deconv(format!("up_{n}"), h, f[level], config.deconv_kernel);
        let cat = p.concat(up, skips[level]);
        h = p.conv_relu(format!("conv_{n}a"), cat, f[level], k);
        h = p.conv_relu(format!("conv_{n}b"), h, f[level], k);
    }
    p.conv("out".into(), h, config.num_classes, config.out_kernel);
    Ok(Graph::from_plan(config.clone(), p))
}

pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<Graph<T>> {
    match config.arch {
        Arch::Fcn => build_fcn(config, seed),
        Arch::Unet => build_unet(config, seed),
    }
}

/// Learnable parameter count of a configuration, without allocating it.
pub fn config_param_count(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let conv = |k: usize, cin: usize, cout: usize| k * k * cin * cout + cout;
    let k = config.conv_kernel;
    let f = &config.filters;
    let mut total = 0;
    let mut c = config.num_channels;
    match config.arch {
        Arch::Fcn => {
            for &n in f {
                total += conv(k, c, n);
                c = n;
            }
        }
        Arch::Unet => {
            for &n in f {
                total += conv(k, c, n) + conv(k, n, n);
                c = n;
            }
            for level in (0..4).rev() {
                let n = f[level];
                total += conv(config.deconv_kernel, c, n) + conv(k, 2 * n, n) + conv(k, n, n);
                c = n;
            }
        }
    }
    Ok(total + conv(config.out_kernel, c, config.num_classes))
}

impl<T: Real> Graph<T> {
    fn from_plan(config: ModelConfig, plan: Planner<T>) -> Self {
        Graph {
            config,
            layers: plan.layers,
            ops: plan.ops,
            cache: None,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        self.cache = None;
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.params.param_count()).sum()
    }

    /// Copies parameters from `source`, which must have identical shapes.
    pub fn load_params(&mut self, source: &[ConvParams<T>]) -> Result<()> {
        if source.len() != self.layers.len() {
            return Err(shape_err!("expected {} parameter sets, got {}", self.layers.len(), source.len()));
        }
        for (l, p) in self.layers.iter().zip(source) {
            if l.params.kernel.shape() != p.kernel.shape() || l.params.bias.len() != p.bias.len() {
                return Err(shape_err!(
                    "layer {}: expected kernel {} + {} bias, got {} + {}",
                    l.name,
                    l.params.kernel.shape(),
                    l.params.bias.len(),
                    p.kernel.shape(),
                    p.bias.len()
                ));
            }
        }
        for (l, p) in self.layers.iter_mut().zip(source) {
            l.params = p.clone();
        }
        self.cache = None;
        Ok(())
    }

    pub fn params(&self) -> Vec<ConvParams<T>> {
        self.layers.iter().map(|l| l.params.clone()).collect()
    }

    /// Flat views of every learnable tensor in layer order (kernel, then bias).
    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.cache = None;
        self.layers
            .iter_mut()
            .flat_map(|l| [l.params.kernel.data_mut(), l.params.bias.as_mut_slice()])
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Graph<U> {
        Graph {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    name: l.name.clone(),
                    kind: l.kind,
                    params: ConvParams {
                        kernel: l.params.kernel.cast(),
                        bias: l.params.bias.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
                    },
                })
                .collect(),
            ops: self.ops.clone(),
            cache: None,
        }
    }

    pub fn check_input(&self, s: Shape4) -> Result<()> {
        if s.channels != self.config.num_channels {
            return Err(shape_err!(
                "input {s} has {} channels, model expects {}",
                s.channels,
                self.config.num_channels
            ));
        }
        let d = self.config.spatial_divisor();
        if !s.height.is_multiple_of(d) || !s.width.is_multiple_of(d) {
            return Err(shape_err!(
                "input {s}: height and width must be divisible by {d} for this architecture"
            ));
        }
        Ok(())
    }

    /// Class probabilities `(batch, height, width, num_classes)`. Caches every
    /// intermediate value for [`Graph::backward`].
    pub fn forward(&mut self, batch: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check_input(batch.shape())?;
        let mut nodes = Vec::with_capacity(self.ops.len() + 1);
        let mut pools = Vec::with_capacity(self.ops.len());
        nodes.push(batch.clone());
        for op in &self.ops {
            let (value, pool) = match *op {
                Op::Conv { layer, input } => (conv2d(&nodes[input], &self.layers[layer].params)?, None),
                Op::Deconv { layer, input } => (transposed_conv2d(&nodes[input], &self.layers[layer].params)?, None),
                Op::Relu { input } => (relu(&nodes[input]), None),
                Op::Pool { input } => {
                    let (v, idx) = maxpool2(&nodes[input]);
                    (v, Some(idx))
                }
                Op::Concat { first, second } => (concat_channels(&nodes[first], &nodes[second])?, None),
            };
            nodes.push(value);
            pools.push(pool);
        }
        let probs = softmax_channels(nodes.last().expect("graph has an output node"))?;
        self.cache = Some(Cache { nodes, pools });
        Ok(probs)
    }

    /// Parameter gradients given `loss_gradient`, the gradient of the loss
    /// with respect to the output logits (for softmax + cross-entropy this is
    /// the fused `(p - y) / N`). Requires a forward pass on `batch_input`.
    pub fn backward(&self, batch_input: &Tensor4<T>, loss_gradient: &Tensor4<T>) -> Result<Gradients<T>> {
        let cache = self
            .cache
            .as_ref()
            .filter(|c| c.nodes[0] == *batch_input)
            .ok_or_else(|| Error::State("backward called without a forward pass on this batch".into()))?;
        let out = cache.nodes.last().expect("output node");
        if loss_gradient.shape() != out.shape() {
            return Err(shape_err!(
                "loss gradient {} does not match output {}",
                loss_gradient.shape(),
                out.shape()
            ));
        }
        let mut grads: Vec<Option<Tensor4<T>>> = vec![None; cache.nodes.len()];
        *grads.last_mut().expect("output node") = Some(loss_gradient.clone());
        let mut param_grads: Vec<Option<ConvParams<T>>> = vec![None; self.layers.len()];

        fn accumulate<T: Real>(slot: &mut Option<Tensor4<T>>, g: Tensor4<T>) {
            match slot {
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => *slot = Some(g),
            }
        }

        for (i, op) in self.ops.iter().enumerate().rev() {
            let node = i + 1;
            let Some(g) = grads[node].take() else { continue };
            match *op {
                Op::Conv { layer, input } => {
                    let r = conv2d_backward(&cache.nodes[input], &self.layers[layer].params, &g)?;
                    param_grads[layer] = Some(r.params);
                    if input != 0 {
                        accumulate(&mut grads[input], r.input);
                    }
                }
                Op::Deconv { layer, input } => {
                    let r = transposed_conv2d_backward(&cache.nodes[input], &self.layers[layer].params, &g)?;
                    param_grads[layer] = Some(r.params);
                    accumulate(&mut grads[input], r.input);
                }
                Op::Relu { input } => {
                    accumulate(&mut grads[input], relu_backward(&cache.nodes[node], &g)?);
                }
                Op::Pool { input } => {
                    let idx = cache.pools[i].as_ref().expect("pool indices cached");
                    accumulate(&mut grads[input], maxpool2_backward(idx, &g)?);
                }
                Op::Concat { first, second } => {
                    let (a, b) = split_channels(&g, cache.nodes[first].shape().channels)?;
                    accumulate(&mut grads[first], a);
                    accumulate(&mut grads[second], b);
                }
            }
        }
        Ok(param_grads
            .into_iter()
            .zip(&self.layers)
            .map(|(g, l)| {
                g.unwrap_or_else(|| {
                    let s = l.params.kernel.shape();
                    ConvParams::zeros(s.batch, s.width, s.channels, l.params.bias.len())
                })
            })
            .collect())
    }

    pub fn activation_pattern(&self) -> Option<ActivationPattern> {
        let cache = self.cache.as_ref()?;
        let relu = self
            .ops
            .iter()
            .filter_map(|op| match *op {
                Op::Relu { input } => Some(cache.nodes[input].data().iter().map(|&v| v > T::zero()).collect()),
                _ => None,
            })
            .collect();
        let pools = cache.pools.iter().flatten().map(|p| p.argmax.clone()).collect();
        Some(ActivationPattern { relu, pools })
    }

    /// Per-pixel argmax of a single-sample forward pass.
    pub fn predict(&mut self, image: &Tensor4<T>) -> Result<LabelMap> {
        if image.shape().batch != 1 {
            return Err(shape_err!("predict expects a single sample, got {}", image.shape()));
        }
        let probs = self.forward(image)?;
        Ok(LabelMap::argmax(&probs, 0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fcn_layer_sequence() {
        let g: Graph<f32> = build_fcn(&ModelConfig::fcn(&[8, 16, 32, 16, 8], 3, 1, 1, 3), 0).unwrap();
        let names: Vec<_> = g.layers().iter().map(|l| l.name.as_str()).collect();
        assert_eq!(names, ["conv_1", "conv_2", "conv_3", "conv_4", "conv_5", "out"]);
        assert_eq!(g.param_count(), 11_699);
    }

    #[test]
    fn unet_layer_sequence() {
        let g: Graph<f32> = build_unet(&ModelConfig::unet(&[2, 4, 8, 16, 32], 3, 2, 1, 1, 3), 0).unwrap();
        let names: Vec<_> = g.layers().iter().map(|l| l.name.clone()).collect();
        assert_eq!(names.len(), 23);
        assert_eq!(names[10], "up_6");
        assert_eq!(names[22], "out");
        let up6 = &g.layers()[10];
        assert_eq!(up6.kind, LayerKind::Deconv);
        // scatter orientation (k, k, out, in)
        assert_eq!(up6.params.kernel.shape(), Shape4::new(2, 2, 16, 32));
        // conv_6a consumes upsampled + skip channels
        assert_eq!(g.layers()[11].params.kernel.shape(), Shape4::new(3, 3, 32, 16));
    }

    #[test]
    fn config_validation_lists_fields() {
        let mut c = ModelConfig::unet(&[2, 4, 8, 16], 0, 2, 1, 1, 3);
        c.pool_size = 3;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("conv_kernel") && err.contains("5 entries") && err.contains("pool_size"), "{err}");
        assert!(build_fcn::<f32>(&ModelConfig::fcn(&[4, 4], 3, 1, 1, 3), 0).is_err());
        assert!(build_fcn::<f32>(&ModelConfig::unet(&[1, 1, 1, 1, 1], 3, 2, 1, 1, 3), 0).is_err());
    }

    #[test]
    fn same_seed_same_params() {
        let c = ModelConfig::unet(&[2, 4, 8, 16, 32], 3, 2, 1, 1, 3);
        let a: Graph<f32> = build(&c, 7).unwrap();
        let b: Graph<f32> = build(&c, 7).unwrap();
        let d: Graph<f32> = build(&c, 8).unwrap();
        assert_eq!(a.params(), b.params());
        assert_ne!(a.params(), d.params());
        assert!(a.layers().iter().all(|l| l.params.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn unet_rejects_indivisible_input() {
        let mut g: Graph<f32> = build(&ModelConfig::unet(&[2, 4, 8, 16, 32], 3, 2, 1, 1, 3), 0).unwrap();
        let err = g.forward(&Tensor4::zeros(Shape4::new(1, 24, 32, 1))).unwrap_err();
        assert!(err.to_string().contains("divisible by 16"), "{err}");
    }

    #[test]
    fn backward_requires_forward() {
        let g: Graph<f64> = build(&ModelConfig::fcn(&[2, 2, 2], 3, 1, 1, 3), 0).unwrap();
        let x = Tensor4::zeros(Shape4::new(1, 4, 4, 1));
        let err = g.backward(&x, &Tensor4::zeros(Shape4::new(1, 4, 4, 3))).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn zero_loss_gradient_gives_zero_grads() {
        let mut g: Graph<f64> = build(&ModelConfig::unet(&[2, 4, 8, 16, 32], 3, 2, 1, 1, 3), 3).unwrap();
        let x = Tensor4::from_fn(Shape4::new(1, 16, 16, 1), |_, y, x, _| ((y * 5 + x * 3) % 7) as f64 / 7.0);
        let p = g.forward(&x).unwrap();
        let grads = g.backward(&x, &Tensor4::zeros(p.shape())).unwrap();
        assert!(grads
            .iter()
            .all(|gp| gp.kernel.data().iter().chain(&gp.bias).all(|&v| v == 0.0)));
    }
}
