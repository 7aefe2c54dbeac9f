use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One operation of a network graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Per-sample input shape, e.g. `[channels, height, width]` or `[features]`.
    Input { shape: Vec<usize> },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    TransposedConv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    Dense { inputs: usize, outputs: usize },
    Relu,
    Flatten,
    Reshape { shape: Vec<usize> },
    /// Concatenates along the first per-sample axis.
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    #[default]
    KaimingUniform,
    Zero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub layer: LayerSpec,
    /// Indices of earlier nodes feeding this one.
    #[serde(default)]
    pub inputs: Vec<usize>,
    #[serde(default)]
    pub init: Init,
}

/// A network as a topologically ordered list of nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub nodes: Vec<Node>,
    pub output: usize,
    pub seed: u64,
}

impl LayerSpec {
    /// Weight and bias counts.
    pub fn param_shape(&self) -> Option<(usize, usize)> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((out_channels * in_channels * kernel * kernel, out_channels)),
            LayerSpec::TransposedConv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((in_channels * out_channels * kernel * kernel, out_channels)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs * outputs, outputs)),
            _ => None,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_shape().map(|(w, b)| w + b).unwrap_or(0)
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            LayerSpec::TransposedConv2d {
                in_channels,
                kernel,
                stride,
                ..
            } => (in_channels * kernel * kernel / (stride * stride)).max(1),
            LayerSpec::Dense { inputs, .. } => inputs,
            _ => 0,
        }
    }
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn tconv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    ((size - 1) * stride + kernel).checked_sub(2 * padding)
}

impl NetworkSpec {
    /// Per-sample output shape of every node; fails on incompatible wiring.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let bad = |msg: String| Error::ShapeMismatch(format!("node {idx}: {msg}"));
            if node.inputs.iter().any(|i| *i >= idx) {
                return Err(bad("inputs must refer to earlier nodes".into()));
            }
            let ins: Vec<&Vec<usize>> = node.inputs.iter().map(|i| &shapes[*i]).collect();
            let want_inputs = match node.layer {
                LayerSpec::Input { .. } => 0,
                LayerSpec::Concat => ins.len().max(2),
                _ => 1,
            };
            if ins.len() != want_inputs {
                return Err(bad(format!("expects {want_inputs} inputs, has {}", ins.len())));
            }
            let shape = match &node.layer {
                LayerSpec::Input { shape } => {
                    if shape.is_empty() || shape.contains(&0) {
                        return Err(bad(format!("bad input shape {shape:?}")));
                    }
                    shape.clone()
                }
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let s = ins[0];
                    if s.len() != 3 || s[0] != *in_channels {
                        return Err(bad(format!("conv expects [{in_channels}, h, w], got {s:?}")));
                    }
                    let oh = conv_out(s[1], *kernel, *stride, *padding);
                    let ow = conv_out(s[2], *kernel, *stride, *padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => vec![*out_channels, oh, ow],
                        _ => return Err(bad(format!("conv does not fit input {s:?}"))),
                    }
                }
                LayerSpec::TransposedConv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let s = ins[0];
                    if s.len() != 3 || s[0] != *in_channels || *stride == 0 {
                        return Err(bad(format!(
                            "transposed conv expects [{in_channels}, h, w], got {s:?}"
                        )));
                    }
                    let oh = tconv_out(s[1], *kernel, *stride, *padding);
                    let ow = tconv_out(s[2], *kernel, *stride, *padding);
                    match (oh, ow) {
                        (Some(oh), Some(ow)) if oh > 0 && ow > 0 => vec![*out_channels, oh, ow],
                        _ => return Err(bad(format!("transposed conv does not fit {s:?}"))),
                    }
                }
                LayerSpec::Dense { inputs, outputs } => {
                    if ins[0] != &vec![*inputs] {
                        return Err(bad(format!("dense expects [{inputs}], got {:?}", ins[0])));
                    }
                    vec![*outputs]
                }
                LayerSpec::Relu => ins[0].clone(),
                LayerSpec::Flatten => vec![ins[0].iter().product()],
                LayerSpec::Reshape { shape } => {
                    let n: usize = shape.iter().product();
                    if n != ins[0].iter().product::<usize>() {
                        return Err(bad(format!("cannot reshape {:?} to {shape:?}", ins[0])));
                    }
                    shape.clone()
                }
                LayerSpec::Concat => {
                    let first = ins[0];
                    let mut total = 0;
                    for s in &ins {
                        if s.len() != first.len() || s[1..] != first[1..] {
                            return Err(bad(format!("cannot concat {first:?} with {s:?}")));
                        }
                        total += s[0];
                    }
                    let mut out = first.clone();
                    out[0] = total;
                    out
                }
            };
            shapes.push(shape);
        }
        if self.output >= self.nodes.len() {
            return Err(Error::ShapeMismatch("output node out of range".into()));
        }
        Ok(shapes)
    }

    pub fn input_nodes(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.layer, LayerSpec::Input { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }
}

/// Incremental builder for [`NetworkSpec`]; every method returns the new
/// node's index.
#[derive(Clone, Debug, Default)]
pub struct SpecBuilder {
    nodes: Vec<Node>,
}

impl SpecBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, layer: LayerSpec, inputs: Vec<usize>, init: Init) -> usize {
        self.nodes.push(Node {
            layer,
            inputs,
            init,
        });
        self.nodes.len() - 1
    }

    pub fn input(&mut self, shape: &[usize]) -> usize {
        self.push(
            LayerSpec::Input {
                shape: shape.to_vec(),
            },
            vec![],
            Init::default(),
        )
    }

    pub fn conv(&mut self, from: usize, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> usize {
        self.push(
            LayerSpec::Conv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: s,
                padding: p,
            },
            vec![from],
            Init::KaimingUniform,
        )
    }

    pub fn tconv(&mut self, from: usize, cin: usize, cout: usize, k: usize, s: usize, p: usize) -> usize {
        self.push(
            LayerSpec::TransposedConv2d {
                in_channels: cin,
                out_channels: cout,
                kernel: k,
                stride: s,
                padding: p,
            },
            vec![from],
            Init::KaimingUniform,
        )
    }

    pub fn dense(&mut self, from: usize, inputs: usize, outputs: usize) -> usize {
        self.push(
            LayerSpec::Dense { inputs, outputs },
            vec![from],
            Init::KaimingUniform,
        )
    }

    pub fn relu(&mut self, from: usize) -> usize {
        self.push(LayerSpec::Relu, vec![from], Init::default())
    }

    pub fn flatten(&mut self, from: usize) -> usize {
        self.push(LayerSpec::Flatten, vec![from], Init::default())
    }

    pub fn reshape(&mut self, from: usize, shape: &[usize]) -> usize {
        self.push(
            LayerSpec::Reshape {
                shape: shape.to_vec(),
            },
            vec![from],
            Init::default(),
        )
    }

    pub fn concat(&mut self, from: &[usize]) -> usize {
        self.push(LayerSpec::Concat, from.to_vec(), Init::default())
    }

    /// Marks a parameterized node as zero-initialized.
    pub fn zero_init(&mut self, node: usize) {
        self.nodes[node].init = Init::Zero;
    }

    pub fn build(self, output: usize, seed: u64) -> Result<NetworkSpec> {
        let spec = NetworkSpec {
            nodes: self.nodes,
            output,
            seed,
        };
        spec.infer_shapes()?;
        Ok(spec)
    }
}
