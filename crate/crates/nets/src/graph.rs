//! A small layer-graph IR for convolutional backbones.
//!
//! Builders create layers in the same order and with the same automatic
//! names as the Keras application code, so parameter files exported from
//! Keras load by name. [`Graph::order`] reproduces Keras' flattened layer
//! list, which defines what "the last k layers" means.

use std::collections::{BTreeMap, HashMap, HashSet};

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{self, pad_amounts, Padding};

pub const BN_EPSILON: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Input,
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        use_bias: bool,
        relu: bool,
    },
    BatchNorm {
        scale: bool,
    },
    Relu,
    MaxPool {
        size: usize,
        stride: usize,
        padding: Padding,
    },
    AvgPool {
        size: usize,
        stride: usize,
        padding: Padding,
    },
    Concat,
    /// `inputs[0] + scale · inputs[1]`.
    ScaleAdd {
        scale: f64,
    },
}

impl Op {
    /// Keras class name of the equivalent layer.
    pub fn keras_class(&self) -> &'static str {
        match self {
            Op::Input => "InputLayer",
            Op::Conv2d { .. } => "Conv2D",
            Op::BatchNorm { .. } => "BatchNormalization",
            Op::Relu => "Activation",
            Op::MaxPool { .. } => "MaxPooling2D",
            Op::AvgPool { .. } => "AveragePooling2D",
            Op::Concat => "Concatenate",
            Op::ScaleAdd { .. } => "CustomScaleLayer",
        }
    }

    fn auto_name(&self) -> &'static str {
        match self {
            Op::Input => "input_layer",
            Op::Conv2d { .. } => "conv2d",
            Op::BatchNorm { .. } => "batch_normalization",
            Op::Relu => "activation",
            Op::MaxPool { .. } => "max_pooling2d",
            Op::AvgPool { .. } => "average_pooling2d",
            Op::Concat => "concatenate",
            Op::ScaleAdd { .. } => "custom_scale_layer",
        }
    }
}

/// Output shape as (height, width, channels).
pub type Shape = (usize, usize, usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<usize>,
    pub shape: Shape,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    GlorotUniform,
    Zeros,
    Ones,
}

/// One parameter tensor of a layer, in storage (OIHW) layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub layer: usize,
    pub key: String,
    pub role: &'static str,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Clone, Debug)]
pub struct Graph {
    name: String,
    layers: Vec<Layer>,
    output: usize,
    order: Vec<usize>,
}

pub struct GraphBuilder {
    name: String,
    layers: Vec<Layer>,
    counters: HashMap<&'static str, usize>,
    names: HashSet<String>,
}

impl GraphBuilder {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            layers: Vec::new(),
            counters: HashMap::new(),
            names: HashSet::new(),
        }
    }

    fn push(&mut self, name: Option<&str>, op: Op, inputs: Vec<usize>, shape: Shape) -> usize {
        let name = match name {
            Some(n) => n.to_string(),
            None => {
                let base = op.auto_name();
                let n = self.counters.entry(base).or_insert(0);
                let name = if *n == 0 {
                    base.to_string()
                } else {
                    format!("{base}_{n}")
                };
                *n += 1;
                name
            }
        };
        assert!(self.names.insert(name.clone()), "duplicate layer name {name}");
        self.layers.push(Layer {
            name,
            op,
            inputs,
            shape,
        });
        self.layers.len() - 1
    }

    fn shape(&self, x: usize) -> Shape {
        self.layers[x].shape
    }

    pub fn shape_of(&self, x: usize) -> Shape {
        self.shape(x)
    }

    pub fn input(&mut self, side: usize, channels: usize) -> usize {
        self.push(None, Op::Input, vec![], (side, side, channels))
    }

    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        &mut self,
        x: usize,
        name: Option<&str>,
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        use_bias: bool,
        relu: bool,
    ) -> usize {
        let (h, w, _) = self.shape(x);
        let (oh, _, _) = pad_amounts(h, kernel.0, stride, padding);
        let (ow, _, _) = pad_amounts(w, kernel.1, stride, padding);
        let op = Op::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            use_bias,
            relu,
        };
        self.push(name, op, vec![x], (oh, ow, filters))
    }

    pub fn batch_norm(&mut self, x: usize, name: Option<&str>, scale: bool) -> usize {
        let s = self.shape(x);
        self.push(name, Op::BatchNorm { scale }, vec![x], s)
    }

    pub fn relu(&mut self, x: usize, name: Option<&str>) -> usize {
        let s = self.shape(x);
        self.push(name, Op::Relu, vec![x], s)
    }

    fn pool_shape(&self, x: usize, size: usize, stride: usize, padding: Padding) -> Shape {
        let (h, w, c) = self.shape(x);
        (
            pad_amounts(h, size, stride, padding).0,
            pad_amounts(w, size, stride, padding).0,
            c,
        )
    }

    pub fn max_pool(&mut self, x: usize, name: Option<&str>, size: usize, stride: usize, padding: Padding) -> usize {
        let s = self.pool_shape(x, size, stride, padding);
        self.push(name, Op::MaxPool { size, stride, padding }, vec![x], s)
    }

    pub fn avg_pool(&mut self, x: usize, name: Option<&str>, size: usize, stride: usize, padding: Padding) -> usize {
        let s = self.pool_shape(x, size, stride, padding);
        self.push(name, Op::AvgPool { size, stride, padding }, vec![x], s)
    }

    pub fn concat(&mut self, xs: &[usize], name: Option<&str>) -> usize {
        let (h, w, _) = self.shape(xs[0]);
        let mut c = 0;
        for &x in xs {
            let (xh, xw, xc) = self.shape(x);
            assert_eq!((xh, xw), (h, w), "concatenating mismatched spatial shapes");
            c += xc;
        }
        self.push(name, Op::Concat, xs.to_vec(), (h, w, c))
    }

    pub fn scale_add(&mut self, x: usize, residual: usize, scale: f64, name: Option<&str>) -> usize {
        let s = self.shape(x);
        assert_eq!(s, self.shape(residual), "residual shape mismatch");
        self.push(name, Op::ScaleAdd { scale }, vec![x, residual], s)
    }

    pub fn finish(self, output: usize) -> Graph {
        let order = keras_order(&self.layers, output);
        Graph {
            name: self.name,
            layers: self.layers,
            output,
            order,
        }
    }
}

/// Keras' flattened layer order: a depth-first walk from the output assigns
/// each layer an index on first visit; depth is the longest path to the
/// output; layers are listed by decreasing depth, ties by index.
fn keras_order(layers: &[Layer], output: usize) -> Vec<usize> {
    let n = layers.len();
    let mut index = vec![usize::MAX; n];
    let mut finished = vec![false; n];
    let mut post = Vec::with_capacity(n);
    let mut next = 0;
    // explicit stack of (layer, next input to visit)
    let mut stack = vec![(output, 0usize)];
    while let Some(top) = stack.len().checked_sub(1) {
        let (l, child) = stack[top];
        if child == 0 {
            if finished[l] {
                stack.pop();
                continue;
            }
            if index[l] == usize::MAX {
                index[l] = next;
                next += 1;
            }
        }
        if let Some(&c) = layers[l].inputs.get(child) {
            stack[top].1 += 1;
            if !finished[c] {
                stack.push((c, 0));
            }
        } else {
            finished[l] = true;
            post.push(l);
            stack.pop();
        }
    }
    let mut depth = vec![0usize; n];
    for &l in post.iter().rev() {
        for &p in &layers[l].inputs {
            depth[p] = depth[p].max(depth[l] + 1);
        }
    }
    let mut order = post;
    order.sort_by_key(|&l| (std::cmp::Reverse(depth[l]), index[l]));
    order
}

impl Graph {
    pub fn name(&self) -> &str {
        &self.name
    }

    /// Layers in creation order, which is topological.
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Layer indices in Keras' flattened order.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn output_shape(&self) -> Shape {
        self.layers[self.output].shape
    }

    pub fn input_shape(&self) -> Shape {
        self.layers[0].shape
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    /// Flags for the last `k` layers of [`Graph::order`].
    pub fn last_k_mask(&self, k: usize) -> Vec<bool> {
        let mut mask = vec![false; self.layers.len()];
        for &l in &self.order[self.order.len().saturating_sub(k)..] {
            mask[l] = true;
        }
        mask
    }

    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut push = |role: &'static str, shape: Vec<usize>, trainable: bool, init: Init| {
                out.push(ParamSpec {
                    layer: i,
                    key: format!("{}/{role}", layer.name),
                    role,
                    shape,
                    trainable,
                    init,
                })
            };
            match &layer.op {
                Op::Conv2d {
                    filters,
                    kernel,
                    use_bias,
                    ..
                } => {
                    let cin = self.layers[layer.inputs[0]].shape.2;
                    push(
                        "kernel",
                        vec![*filters, cin, kernel.0, kernel.1],
                        true,
                        Init::GlorotUniform,
                    );
                    if *use_bias {
                        push("bias", vec![*filters], true, Init::Zeros);
                    }
                }
                Op::BatchNorm { scale } => {
                    let c = layer.shape.2;
                    if *scale {
                        push("gamma", vec![c], true, Init::Ones);
                    }
                    push("beta", vec![c], true, Init::Zeros);
                    push("moving_mean", vec![c], false, Init::Zeros);
                    push("moving_variance", vec![c], false, Init::Ones);
                }
                _ => {}
            }
        }
        out
    }

    /// Parameter count of every layer, including non-trainable statistics.
    pub fn layer_params(&self) -> Vec<usize> {
        let mut counts = vec![0; self.layers.len()];
        for p in self.param_specs() {
            counts[p.layer] += p.numel();
        }
        counts
    }

    /// Counts of trainable-role parameters per layer.
    pub fn layer_trainable_params(&self) -> Vec<usize> {
        let mut counts = vec![0; self.layers.len()];
        for p in self.param_specs().into_iter().filter(|p| p.trainable) {
            counts[p.layer] += p.numel();
        }
        counts
    }

    pub fn total_params(&self) -> usize {
        self.layer_params().iter().sum()
    }

    /// Trainable parameters once the last `k` layers are unfrozen.
    pub fn trainable_params_last_k(&self, k: usize) -> usize {
        let mask = self.last_k_mask(k);
        self.layer_trainable_params()
            .iter()
            .zip(mask)
            .filter(|(_, m)| *m)
            .map(|(c, _)| c)
            .sum()
    }

    /// Runs the graph on an NCHW batch.
    ///
    /// `trainable` marks layers whose parameters receive gradients; their
    /// batch-norm layers use batch statistics. Everything else runs in
    /// inference mode on detached parameters. With `trainable = None` the
    /// whole pass is inference.
    pub fn forward(&self, params: &ParamStore, x: &Tensor, trainable: Option<&[bool]>) -> Result<ForwardOutput> {
        let n = self.layers.len();
        let mut last_use = vec![0usize; n];
        for (i, l) in self.layers.iter().enumerate() {
            for &p in &l.inputs {
                last_use[p] = last_use[p].max(i);
            }
        }
        last_use[self.output] = usize::MAX;
        let is_trainable = |i: usize| trainable.is_some_and(|t| t[i]);
        let mut needs_grad = vec![false; n];
        let mut outs: Vec<Option<Tensor>> = vec![None; n];
        let mut bn_updates = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            needs_grad[i] = is_trainable(i) || layer.inputs.iter().any(|&p| needs_grad[p]);
            let input = |j: usize| outs[layer.inputs[j]].as_ref().expect("input computed");
            let param = |role: &str| params.tensor(&format!("{}/{role}", layer.name), is_trainable(i));
            let y = match &layer.op {
                Op::Input => x.detach(),
                Op::Conv2d {
                    stride,
                    padding,
                    use_bias,
                    relu,
                    ..
                } => {
                    let kernel = param("kernel")?;
                    let bias = if *use_bias { Some(param("bias")?) } else { None };
                    let y = ops::conv2d(input(0), &kernel, bias.as_ref(), *stride, *padding)?;
                    if *relu {
                        y.relu()?
                    } else {
                        y
                    }
                }
                Op::BatchNorm { scale } => {
                    let gamma = if *scale { Some(param("gamma")?) } else { None };
                    let beta = param("beta")?;
                    if is_trainable(i) {
                        let (y, mean, var) = ops::batch_norm_train(input(0), gamma.as_ref(), &beta, BN_EPSILON)?;
                        bn_updates.push(BnUpdate {
                            layer: layer.name.clone(),
                            mean,
                            var,
                        });
                        y
                    } else {
                        let mean = param("moving_mean")?;
                        let var = param("moving_variance")?;
                        ops::batch_norm(input(0), gamma.as_ref(), &beta, &mean, &var, BN_EPSILON)?
                    }
                }
                Op::Relu => input(0).relu()?,
                Op::MaxPool { size, stride, padding } => {
                    ops::max_pool(input(0), *size, *stride, *padding, needs_grad[i])?
                }
                Op::AvgPool { size, stride, padding } => {
                    ops::avg_pool(input(0), *size, *stride, *padding, needs_grad[i])?
                }
                Op::Concat => {
                    let parts: Vec<&Tensor> = (0..layer.inputs.len()).map(input).collect();
                    Tensor::cat(&parts, 1)?
                }
                Op::ScaleAdd { scale } => (input(0) + (input(1) * *scale)?)?,
            };
            outs[i] = Some(y);
            for &p in &layer.inputs {
                if last_use[p] == i {
                    outs[p] = None;
                }
            }
        }
        Ok(ForwardOutput {
            features: outs[self.output].take().expect("output computed"),
            bn_updates,
        })
    }
}

/// Batch statistics gathered by training-mode batch-norm layers.
#[derive(Debug)]
pub struct BnUpdate {
    pub layer: String,
    pub mean: Tensor,
    pub var: Tensor,
}

pub struct ForwardOutput {
    pub features: Tensor,
    pub bn_updates: Vec<BnUpdate>,
}

/// Named parameter tensors keyed `<layer>/<role>`.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, var: Var) {
        self.vars.insert(key.into(), var);
    }

    pub fn get(&self, key: &str) -> Option<&Var> {
        self.vars.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// The tensor for `key`; detached unless `tracked`.
    pub fn tensor(&self, key: &str, tracked: bool) -> Result<Tensor> {
        let var = self
            .vars
            .get(key)
            .ok_or_else(|| Error::Weights(format!("missing parameter `{key}`")))?;
        Ok(if tracked {
            var.as_tensor().clone()
        } else {
            var.as_tensor().detach()
        })
    }

    /// Bit-exact copies of every tensor.
    pub fn snapshot(&self) -> Result<BTreeMap<String, Vec<f32>>> {
        self.vars
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().flatten_all()?.to_vec1::<f32>()?)))
            .collect()
    }

    /// Applies `moving = momentum · moving + (1 - momentum) · batch`.
    pub fn apply_bn_updates(&self, updates: &[BnUpdate], momentum: f64) -> Result<()> {
        for u in updates {
            for (role, batch) in [("moving_mean", &u.mean), ("moving_variance", &u.var)] {
                let key = format!("{}/{role}", u.layer);
                let var = self
                    .vars
                    .get(&key)
                    .ok_or_else(|| Error::Weights(format!("missing parameter `{key}`")))?;
                let next = ((var.as_tensor() * momentum)? + (batch * (1.0 - momentum))?)?;
                var.set(&next)?;
            }
        }
        Ok(())
    }

    /// Seeded initialization of every parameter of `specs`.
    pub fn init(specs: &[ParamSpec], seed: u64, device: &Device) -> Result<Self> {
        let mut store = Self::new();
        for spec in specs {
            let n = spec.numel();
            let data = match spec.init {
                Init::Zeros => vec![0f32; n],
                Init::Ones => vec![1f32; n],
                Init::GlorotUniform => glorot_uniform(&spec.shape, fer_core::seed::derive_seed(seed, &spec.key, 0)),
            };
            let t = Tensor::from_vec(data, spec.shape.as_slice(), device)?;
            store.insert(spec.key.clone(), Var::from_tensor(&t)?);
        }
        Ok(store)
    }

    pub fn check_against(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let var = self
                .vars
                .get(&spec.key)
                .ok_or_else(|| Error::Weights(format!("missing parameter `{}`", spec.key)))?;
            if var.as_tensor().dims() != spec.shape.as_slice() {
                return Err(Error::Weights(format!(
                    "`{}` has shape {:?}, architecture expects {:?}",
                    spec.key,
                    var.as_tensor().dims(),
                    spec.shape
                )));
            }
            if var.as_tensor().dtype() != DType::F32 {
                return Err(Error::Weights(format!("`{}` must be f32", spec.key)));
            }
        }
        Ok(())
    }
}

/// Glorot-uniform values for a kernel stored as `[out, in, kh, kw]` or
/// `[in, out]` (dense). The limit is `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(shape: &[usize], seed: u64) -> Vec<f32> {
    let (fan_in, fan_out) = match shape {
        [o, i, kh, kw] => (i * kh * kw, o * kh * kw),
        [i, o] => (*i, *o),
        _ => (shape.iter().product(), shape.iter().product()),
    };
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
    let mut rng = fer_core::seed::rng_from_seed(seed);
    (0..shape.iter().product::<usize>())
        .map(|_| rng.random_range(-limit..=limit))
        .collect()
}
