use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::ops::{col2im, gemm, im2col, ConvGeom, Mat};
use super::spec::{Init, LayerSpec, NetworkSpec};
use super::{Scalar, Tensor};

/// Parameters of one node: weights then biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Params<T> {
    fn zeros_like(&self) -> Self {
        Params {
            weight: vec![T::zero(); self.weight.len()],
            bias: vec![T::zero(); self.bias.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.weight.iter().chain(&self.bias)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// A network instance: graph, parameters and which layers may be updated.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T = f32> {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    params: Vec<Params<T>>,
    trainable: Vec<bool>,
}

/// Every node's batched output from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache<T> {
    outputs: Vec<Tensor<T>>,
    output: usize,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn output(&self) -> &Tensor<T> {
        &self.outputs[self.output]
    }

    pub fn node(&self, idx: usize) -> &Tensor<T> {
        &self.outputs[idx]
    }

    pub fn into_output(mut self) -> Tensor<T> {
        self.outputs.swap_remove(self.output)
    }
}

/// Parameter gradients, one entry per node (empty for parameterless nodes).
pub type Gradients<T> = Vec<Params<T>>;

fn batched(batch: usize, sample: &[usize]) -> Vec<usize> {
    let mut s = vec![batch];
    s.extend_from_slice(sample);
    s
}

impl<T: Scalar> Network<T> {
    /// Instantiates a spec with seeded Kaiming-uniform (fan-in) weights and
    /// zero biases; nodes marked [`Init::Zero`] start at zero.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.infer_shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let params = spec
            .nodes
            .iter()
            .map(|node| match node.layer.param_shape() {
                None => Params {
                    weight: vec![],
                    bias: vec![],
                },
                Some((nw, nb)) => {
                    let weight = match node.init {
                        Init::Zero => vec![T::zero(); nw],
                        Init::KaimingUniform => {
                            let bound = (6.0 / node.layer.fan_in() as f64).sqrt();
                            (0..nw)
                                .map(|_| T::from_f64(rng.gen_range(-bound..bound) as f32 as f64))
                                .collect()
                        }
                    };
                    Params {
                        weight,
                        bias: vec![T::zero(); nb],
                    }
                }
            })
            .collect();
        let trainable = spec
            .nodes
            .iter()
            .map(|n| n.layer.param_shape().is_some())
            .collect();
        Ok(Network {
            spec,
            shapes,
            params,
            trainable,
        })
    }

    /// Instantiates a spec with explicit parameters in declaration order.
    pub fn from_params(spec: NetworkSpec, flat: &[T]) -> Result<Self> {
        let mut net = Self::new(spec)?;
        if flat.len() != net.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "spec needs {} parameters, got {}",
                net.param_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter();
        for p in &mut net.params {
            for v in p.iter_mut() {
                *v = *it.next().expect("length checked");
            }
        }
        Ok(net)
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            spec: self.spec.clone(),
            shapes: self.shapes.clone(),
            params: self
                .params
                .iter()
                .map(|p| Params {
                    weight: p.weight.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                    bias: p.bias.iter().map(|v| U::from_f64(v.to_f64())).collect(),
                })
                .collect(),
            trainable: self.trainable.clone(),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Params<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Params<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// All parameters in declaration order.
    pub fn flat_params(&self) -> Vec<T> {
        self.params.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.shapes[self.spec.output]
    }

    pub fn input_shapes(&self) -> Vec<Vec<usize>> {
        self.spec
            .input_nodes()
            .into_iter()
            .map(|i| self.shapes[i].clone())
            .collect()
    }

    pub fn is_trainable(&self, node: usize) -> bool {
        self.trainable[node]
    }

    pub fn set_trainable(&mut self, node: usize, on: bool) {
        self.trainable[node] = on && self.spec.nodes[node].layer.param_shape().is_some();
    }

    /// Index of the last node that owns parameters.
    pub fn last_param_node(&self) -> Option<usize> {
        (0..self.spec.nodes.len())
            .rev()
            .find(|i| self.spec.nodes[*i].layer.param_shape().is_some())
    }

    pub fn forward(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        Ok(self.forward_cached(inputs)?.into_output())
    }

    /// Forward pass keeping every intermediate output for [`Network::backward`].
    pub fn forward_cached(&self, inputs: &[Tensor<T>]) -> Result<ForwardCache<T>> {
        let input_nodes = self.spec.input_nodes();
        if inputs.len() != input_nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "network takes {} inputs, got {}",
                input_nodes.len(),
                inputs.len()
            )));
        }
        let batch = inputs.first().map(|t| t.batch()).unwrap_or(0);
        for (t, node) in inputs.iter().zip(&input_nodes) {
            let want = batched(batch, &self.shapes[*node]);
            if t.shape() != want.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "input for node {node} should be {want:?}, got {:?}",
                    t.shape()
                )));
            }
        }
        let mut next_input = inputs.iter();
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.spec.nodes.len());
        for (idx, node) in self.spec.nodes.iter().enumerate() {
            let out = match &node.layer {
                LayerSpec::Input { .. } => next_input.next().expect("counted").clone(),
                layer => {
                    let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|i| &outputs[*i]).collect();
                    self.forward_node(idx, layer, &ins, batch)
                }
            };
            outputs.push(out);
        }
        Ok(ForwardCache {
            outputs,
            output: self.spec.output,
        })
    }

    fn conv_geom(&self, idx: usize, src: usize) -> ConvGeom {
        let s_in = &self.shapes[src];
        let s_out = &self.shapes[idx];
        match self.spec.nodes[idx].layer {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom {
                channels: s_in[0],
                height: s_in[1],
                width: s_in[2],
                kernel,
                stride,
                padding,
                out_h: s_out[1],
                out_w: s_out[2],
            },
            // a transposed conv is the adjoint of a conv from its output grid
            LayerSpec::TransposedConv2d {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeom {
                channels: s_out[0],
                height: s_out[1],
                width: s_out[2],
                kernel,
                stride,
                padding,
                out_h: s_in[1],
                out_w: s_in[2],
            },
            _ => unreachable!("not a convolution"),
        }
    }

    fn forward_node(&self, idx: usize, layer: &LayerSpec, ins: &[&Tensor<T>], batch: usize) -> Tensor<T> {
        let out_shape = batched(batch, &self.shapes[idx]);
        let p = &self.params[idx];
        match *layer {
            LayerSpec::Input { .. } => unreachable!(),
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geom(idx, self.spec.nodes[idx].inputs[0]);
                let (k, ncols) = (g.rows(), g.cols());
                let mut out = Tensor::zeros(out_shape);
                let mut cols = vec![T::zero(); k * ncols];
                let osz = out.sample_len();
                for n in 0..batch {
                    im2col(ins[0].sample(n), &g, &mut cols);
                    let dst = &mut out.data_mut()[n * osz..(n + 1) * osz];
                    for (oc, row) in dst.chunks_mut(ncols).enumerate() {
                        row.iter_mut().for_each(|v| *v = p.bias[oc]);
                    }
                    gemm(
                        out_channels,
                        k,
                        ncols,
                        Mat::new(&p.weight, k),
                        Mat::new(&cols, ncols),
                        T::one(),
                        dst,
                    );
                }
                out
            }
            LayerSpec::TransposedConv2d {
                in_channels,
                out_channels,
                ..
            } => {
                let g = self.conv_geom(idx, self.spec.nodes[idx].inputs[0]);
                let (k, ncols) = (g.rows(), g.cols());
                let mut out = Tensor::zeros(out_shape);
                let mut cols = vec![T::zero(); k * ncols];
                let osz = out.sample_len();
                let plane = osz / out_channels;
                for n in 0..batch {
                    gemm(
                        k,
                        in_channels,
                        ncols,
                        Mat::t(&p.weight, k),
                        Mat::new(ins[0].sample(n), ncols),
                        T::zero(),
                        &mut cols,
                    );
                    let dst = &mut out.data_mut()[n * osz..(n + 1) * osz];
                    col2im(&cols, &g, dst);
                    for (oc, chunk) in dst.chunks_mut(plane).enumerate() {
                        chunk.iter_mut().for_each(|v| *v += p.bias[oc]);
                    }
                }
                out
            }
            LayerSpec::Dense { inputs, outputs } => {
                let mut out = Tensor::zeros(out_shape);
                for row in out.data_mut().chunks_mut(outputs) {
                    row.copy_from_slice(&p.bias);
                }
                gemm(
                    batch,
                    inputs,
                    outputs,
                    Mat::new(ins[0].data(), inputs),
                    Mat::t(&p.weight, inputs),
                    T::one(),
                    out.data_mut(),
                );
                out
            }
            LayerSpec::Relu => ins[0].map(|v| if v > T::zero() { v } else { T::zero() }),
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                Tensor::new(out_shape, ins[0].data().to_vec()).expect("shape inferred")
            }
            LayerSpec::Concat => {
                let mut data = Vec::with_capacity(out_shape.iter().product());
                for n in 0..batch {
                    for t in ins {
                        data.extend_from_slice(t.sample(n));
                    }
                }
                Tensor::new(out_shape, data).expect("shape inferred")
            }
        }
    }

    /// Reverse-mode gradients of a scalar loss with respect to every
    /// trainable parameter, given `dL/d(output)`.
    ///
    /// Gradient flow stops below the earliest trainable layer: frozen
    /// prefixes cost nothing.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_output: &Tensor<T>) -> Result<Gradients<T>> {
        let out = cache.output();
        if grad_output.shape() != out.shape() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                grad_output.shape(),
                out.shape()
            )));
        }
        let n_nodes = self.spec.nodes.len();
        // needs[i]: some trainable node depends on node i's output
        let mut needs = vec![false; n_nodes];
        for i in 0..n_nodes {
            needs[i] = self.trainable[i] || self.spec.nodes[i].inputs.iter().any(|j| needs[*j]);
        }
        let mut grads: Gradients<T> = self.params.iter().map(|p| p.zeros_like()).collect();
        let mut upstream: Vec<Option<Tensor<T>>> = vec![None; n_nodes];
        upstream[self.spec.output] = Some(grad_output.clone());
        for idx in (0..n_nodes).rev() {
            let Some(gout) = upstream[idx].take() else {
                continue;
            };
            if !needs[idx] {
                continue;
            }
            let node = &self.spec.nodes[idx];
            let ins: Vec<&Tensor<T>> = node.inputs.iter().map(|i| cache.node(*i)).collect();
            let want: Vec<bool> = node.inputs.iter().map(|i| needs[*i]).collect();
            let in_grads = self.backward_node(idx, &ins, &cache.outputs[idx], &gout, &want, &mut grads[idx]);
            for (k, g) in in_grads.into_iter().enumerate() {
                let Some(g) = g else { continue };
                let src = node.inputs[k];
                match &mut upstream[src] {
                    Some(acc) => acc
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .for_each(|(a, b)| *a += *b),
                    slot => *slot = Some(g),
                }
            }
        }
        for (i, g) in grads.iter_mut().enumerate() {
            if !self.trainable[i] {
                *g = self.params[i].zeros_like();
            }
        }
        Ok(grads)
    }

    fn backward_node(
        &self,
        idx: usize,
        ins: &[&Tensor<T>],
        out: &Tensor<T>,
        gout: &Tensor<T>,
        want: &[bool],
        pgrad: &mut Params<T>,
    ) -> Vec<Option<Tensor<T>>> {
        let batch = gout.batch();
        let p = &self.params[idx];
        let train = self.trainable[idx];
        match self.spec.nodes[idx].layer {
            LayerSpec::Input { .. } => vec![],
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geom(idx, self.spec.nodes[idx].inputs[0]);
                let (k, ncols) = (g.rows(), g.cols());
                let mut cols = vec![T::zero(); k * ncols];
                let mut dx = want[0].then(|| Tensor::zeros(ins[0].shape().to_vec()));
                let isz = ins[0].sample_len();
                for n in 0..batch {
                    let go = gout.sample(n);
                    if train {
                        im2col(ins[0].sample(n), &g, &mut cols);
                        gemm(out_channels, ncols, k, Mat::new(go, ncols), Mat::t(&cols, ncols), T::one(), &mut pgrad.weight);
                        for (oc, row) in go.chunks(ncols).enumerate() {
                            pgrad.bias[oc] += row.iter().fold(T::zero(), |a, b| a + *b);
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(k, out_channels, ncols, Mat::t(&p.weight, k), Mat::new(go, ncols), T::zero(), &mut cols);
                        col2im(&cols, &g, &mut dx.data_mut()[n * isz..(n + 1) * isz]);
                    }
                }
                vec![dx]
            }
            LayerSpec::TransposedConv2d {
                in_channels,
                out_channels,
                ..
            } => {
                let g = self.conv_geom(idx, self.spec.nodes[idx].inputs[0]);
                let (k, ncols) = (g.rows(), g.cols());
                let mut cols = vec![T::zero(); k * ncols];
                let mut dx = want[0].then(|| Tensor::zeros(ins[0].shape().to_vec()));
                let isz = ins[0].sample_len();
                let plane = gout.sample_len() / out_channels;
                for n in 0..batch {
                    let go = gout.sample(n);
                    im2col(go, &g, &mut cols);
                    if train {
                        gemm(in_channels, ncols, k, Mat::new(ins[0].sample(n), ncols), Mat::t(&cols, ncols), T::one(), &mut pgrad.weight);
                        for (oc, chunk) in go.chunks(plane).enumerate() {
                            pgrad.bias[oc] += chunk.iter().fold(T::zero(), |a, b| a + *b);
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        gemm(in_channels, k, ncols, Mat::new(&p.weight, k), Mat::new(&cols, ncols), T::zero(), &mut dx.data_mut()[n * isz..(n + 1) * isz]);
                    }
                }
                vec![dx]
            }
            LayerSpec::Dense { inputs, outputs } => {
                if train {
                    gemm(outputs, batch, inputs, Mat::t(gout.data(), outputs), Mat::new(ins[0].data(), inputs), T::one(), &mut pgrad.weight);
                    for row in gout.data().chunks(outputs) {
                        for (b, g) in pgrad.bias.iter_mut().zip(row) {
                            *b += *g;
                        }
                    }
                }
                let dx = want[0].then(|| {
                    let mut dx = Tensor::zeros(ins[0].shape().to_vec());
                    gemm(batch, outputs, inputs, Mat::new(gout.data(), outputs), Mat::new(&p.weight, inputs), T::zero(), dx.data_mut());
                    dx
                });
                vec![dx]
            }
            LayerSpec::Relu => {
                let dx = want[0].then(|| {
                    let data = gout
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, y)| if *y > T::zero() { *g } else { T::zero() })
                        .collect();
                    Tensor::new(ins[0].shape().to_vec(), data).expect("same shape")
                });
                vec![dx]
            }
            LayerSpec::Flatten | LayerSpec::Reshape { .. } => {
                let dx = want[0].then(|| {
                    Tensor::new(ins[0].shape().to_vec(), gout.data().to_vec()).expect("same size")
                });
                vec![dx]
            }
            LayerSpec::Concat => {
                let sizes: Vec<usize> = ins.iter().map(|t| t.sample_len()).collect();
                let mut parts: Vec<Option<Vec<T>>> = want
                    .iter()
                    .zip(&sizes)
                    .map(|(w, s)| w.then(|| Vec::with_capacity(s * batch)))
                    .collect();
                for n in 0..batch {
                    let mut off = 0;
                    let go = gout.sample(n);
                    for (k, s) in sizes.iter().enumerate() {
                        if let Some(part) = parts[k].as_mut() {
                            part.extend_from_slice(&go[off..off + s]);
                        }
                        off += s;
                    }
                }
                parts
                    .into_iter()
                    .zip(ins)
                    .map(|(p, t)| p.map(|d| Tensor::new(t.shape().to_vec(), d).expect("split")))
                    .collect()
            }
        }
    }
}

/// Restricts training to the final parameterized layer.
pub fn freeze_all_but_last<T: Scalar>(net: &mut Network<T>) {
    let last = net.last_param_node();
    for i in 0..net.spec.nodes.len() {
        net.set_trainable(i, Some(i) == last);
    }
}
