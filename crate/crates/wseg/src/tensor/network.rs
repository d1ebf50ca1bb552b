//! Fixed computation-graph replay.
//!
//! A [`Network`] is built once from layer specs, holds its parameters, and is
//! immutable during forward/backward. All per-pass state (activations,
//! gradients, pooling argmax) lives in a [`Workspace`], so a shared network
//! can be driven from several workspaces in parallel, one per image.

use crate::error::{Error, Result};
use crate::tensor::init::glorot_uniform;
use crate::tensor::ops;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// The layer kinds the engine supports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    /// Graph input placeholder.
    Input,
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
    },
    Relu,
    MaxPool2x2,
    GlobalAvgPool,
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Upsample2x,
    SoftmaxPixelwise,
    /// Channel concatenation of two same-resolution feature maps.
    ConcatSkip,
}

#[derive(Debug, Clone)]
struct Node {
    spec: LayerSpec,
    inputs: Vec<NodeId>,
    out_shape: Vec<usize>,
    /// Index into `Network::params` for parameterized layers.
    pidx: Option<usize>,
}

/// Weights and bias of one parameterized layer.
#[derive(Debug, Clone)]
pub struct ParamSet {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Incrementally describes a graph; `build` freezes it and initializes parameters.
pub struct NetworkBuilder {
    nodes: Vec<Node>,
}

impl NetworkBuilder {
    /// Starts a graph with a single input of the given shape.
    pub fn new(input_shape: &[usize]) -> NetworkBuilder {
        NetworkBuilder {
            nodes: vec![Node {
                spec: LayerSpec::Input,
                inputs: vec![],
                out_shape: input_shape.to_vec(),
                pidx: None,
            }],
        }
    }

    pub fn input(&self) -> NodeId {
        0
    }

    fn shape_of(&self, id: NodeId) -> Result<&[usize]> {
        self.nodes
            .get(id)
            .map(|n| n.out_shape.as_slice())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown node id {id}")))
    }

    fn push(&mut self, spec: LayerSpec, inputs: Vec<NodeId>, out_shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node {
            spec,
            inputs,
            out_shape,
            pidx: None,
        });
        self.nodes.len() - 1
    }

    pub fn conv2d(&mut self, src: NodeId, out_channels: usize, kernel: usize) -> Result<NodeId> {
        let shape = self.shape_of(src)?;
        if shape.len() != 3 {
            return Err(Error::shape("conv2d source", "C×H×W", format!("{shape:?}")));
        }
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::InvalidConfig(format!(
                "conv2d kernel size must be odd, got {kernel}"
            )));
        }
        if out_channels == 0 {
            return Err(Error::InvalidConfig("conv2d out_channels must be positive".into()));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        Ok(self.push(
            LayerSpec::Conv2d {
                in_channels: c,
                out_channels,
                kernel,
            },
            vec![src],
            vec![out_channels, h, w],
        ))
    }

    pub fn relu(&mut self, src: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(src)?.to_vec();
        Ok(self.push(LayerSpec::Relu, vec![src], shape))
    }

    pub fn maxpool2x2(&mut self, src: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(src)?;
        if shape.len() != 3 || shape[1] % 2 != 0 || shape[2] % 2 != 0 {
            return Err(Error::shape(
                "maxpool2x2 source",
                "C×H×W with even H and W",
                format!("{shape:?}"),
            ));
        }
        let out = vec![shape[0], shape[1] / 2, shape[2] / 2];
        Ok(self.push(LayerSpec::MaxPool2x2, vec![src], out))
    }

    pub fn global_avg_pool(&mut self, src: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(src)?;
        if shape.len() != 3 {
            return Err(Error::shape("gap source", "C×H×W", format!("{shape:?}")));
        }
        let out = vec![shape[0]];
        Ok(self.push(LayerSpec::GlobalAvgPool, vec![src], out))
    }

    pub fn dense(&mut self, src: NodeId, out_features: usize) -> Result<NodeId> {
        let shape = self.shape_of(src)?;
        if shape.len() != 1 {
            return Err(Error::shape("dense source", "flat vector", format!("{shape:?}")));
        }
        if out_features == 0 {
            return Err(Error::InvalidConfig("dense out_features must be positive".into()));
        }
        let nin = shape[0];
        Ok(self.push(
            LayerSpec::Dense {
                in_features: nin,
                out_features,
            },
            vec![src],
            vec![out_features],
        ))
    }

    pub fn upsample2x(&mut self, src: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(src)?;
        if shape.len() != 3 {
            return Err(Error::shape("upsample2x source", "C×H×W", format!("{shape:?}")));
        }
        let out = vec![shape[0], shape[1] * 2, shape[2] * 2];
        Ok(self.push(LayerSpec::Upsample2x, vec![src], out))
    }

    pub fn softmax_pixelwise(&mut self, src: NodeId) -> Result<NodeId> {
        let shape = self.shape_of(src)?.to_vec();
        if shape.len() != 3 {
            return Err(Error::shape("softmax source", "K×H×W", format!("{shape:?}")));
        }
        Ok(self.push(LayerSpec::SoftmaxPixelwise, vec![src], shape))
    }

    pub fn concat_skip(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.shape_of(a)?.to_vec();
        let sb = self.shape_of(b)?.to_vec();
        if sa.len() != 3 || sb.len() != 3 || sa[1..] != sb[1..] {
            return Err(Error::shape(
                "concat_skip sources",
                format!("matching H×W, got {sa:?}"),
                format!("{sb:?}"),
            ));
        }
        let out = vec![sa[0] + sb[0], sa[1], sa[2]];
        Ok(self.push(LayerSpec::ConcatSkip, vec![a, b], out))
    }

    /// Freezes the graph. Conv kernels and dense weights get Glorot-uniform
    /// values from per-layer seeds derived from `seed`; biases start at zero.
    pub fn build(mut self, output: NodeId, seed: u64) -> Result<Network> {
        if output >= self.nodes.len() {
            return Err(Error::InvalidConfig(format!("output node {output} does not exist")));
        }
        let mut params = Vec::new();
        for (id, node) in self.nodes.iter_mut().enumerate() {
            let pset = match node.spec {
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => Some(ParamSet {
                    weights: glorot_uniform(
                        &[out_channels, in_channels, kernel, kernel],
                        seed.wrapping_add(id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    ),
                    bias: Tensor::zeros(&[out_channels]),
                }),
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => Some(ParamSet {
                    weights: glorot_uniform(
                        &[out_features, in_features],
                        seed.wrapping_add(id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
                    ),
                    bias: Tensor::zeros(&[out_features]),
                }),
                _ => None,
            };
            if let Some(p) = pset {
                node.pidx = Some(params.len());
                params.push(p);
            }
        }
        let param_len = params.iter().map(|p| p.weights.len() + p.bias.len()).sum();
        Ok(Network {
            nodes: self.nodes,
            params,
            output,
            param_len,
        })
    }
}

/// Per-pass state: node activations, node gradients, pooling argmax, and a
/// flat parameter-gradient buffer.
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
    param_grads: Vec<f64>,
    forward_done: bool,
}

impl Workspace {
    /// Flat parameter gradients accumulated by `backward`, ordered as
    /// (weights, bias) per parameterized node in graph order.
    pub fn param_grads(&self) -> &[f64] {
        &self.param_grads
    }

    pub fn zero_param_grads(&mut self) {
        self.param_grads.fill(0.0);
    }
}

/// A frozen computation graph plus its parameters.
pub struct Network {
    nodes: Vec<Node>,
    params: Vec<ParamSet>,
    output: NodeId,
    param_len: usize,
}

impl Network {
    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.nodes.iter().map(|n| vec![0.0; n.out_shape.iter().product()]).collect(),
            grads: self.nodes.iter().map(|n| vec![0.0; n.out_shape.iter().product()]).collect(),
            argmax: self
                .nodes
                .iter()
                .map(|n| {
                    if n.spec == LayerSpec::MaxPool2x2 {
                        vec![0u32; n.out_shape.iter().product()]
                    } else {
                        Vec::new()
                    }
                })
                .collect(),
            param_grads: vec![0.0; self.param_len],
            forward_done: false,
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].out_shape
    }

    pub fn output_id(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output].out_shape
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id].out_shape
    }

    /// Total number of scalar parameters.
    pub fn param_len(&self) -> usize {
        self.param_len
    }

    pub fn param_sets(&self) -> &[ParamSet] {
        &self.params
    }

    pub fn param_sets_mut(&mut self) -> &mut [ParamSet] {
        &mut self.params
    }

    /// Parameters of the layer that produced node `id`, if it has any.
    pub fn params_of(&self, id: NodeId) -> Option<&ParamSet> {
        self.nodes[id].pidx.map(|p| &self.params[p])
    }

    /// Copies all parameters into one flat buffer, (weights, bias) per layer
    /// in graph order. The same layout is used by `param_grads`.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len);
        for p in &self.params {
            out.extend_from_slice(p.weights.values());
            out.extend_from_slice(p.bias.values());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_len {
            return Err(Error::shape("set_params_flat", self.param_len, flat.len()));
        }
        let mut off = 0;
        for p in &mut self.params {
            let wl = p.weights.len();
            p.weights.values_mut().copy_from_slice(&flat[off..off + wl]);
            off += wl;
            let bl = p.bias.len();
            p.bias.values_mut().copy_from_slice(&flat[off..off + bl]);
            off += bl;
        }
        Ok(())
    }

    /// Runs the graph on `input`, recording every activation in `ws`.
    pub fn forward<'w>(&self, ws: &'w mut Workspace, input: &Tensor) -> Result<&'w [f64]> {
        if input.shape() != self.input_shape() {
            return Err(Error::shape(
                "network input",
                format!("{:?}", self.input_shape()),
                format!("{:?}", input.shape()),
            ));
        }
        input.check_finite("network input")?;
        ws.acts[0].copy_from_slice(input.values());
        for id in 1..self.nodes.len() {
            // Split so we can borrow the input activation and output buffer together.
            let (done, rest) = ws.acts.split_at_mut(id);
            let out = &mut rest[0];
            let node = &self.nodes[id];
            let src = &done[node.inputs[0]];
            match node.spec {
                LayerSpec::Input => unreachable!("input nodes are never re-evaluated"),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let ishape = &self.nodes[node.inputs[0]].out_shape;
                    let p = &self.params[node.pidx.unwrap()];
                    ops::conv2d_fwd(
                        src,
                        in_channels,
                        ishape[1],
                        ishape[2],
                        p.weights.values(),
                        out_channels,
                        kernel,
                        p.bias.values(),
                        out,
                    );
                }
                LayerSpec::Relu => ops::relu_fwd(src, out),
                LayerSpec::MaxPool2x2 => {
                    let ishape = &self.nodes[node.inputs[0]].out_shape;
                    ops::maxpool2x2_fwd(src, ishape[0], ishape[1], ishape[2], out, &mut ws.argmax[id]);
                }
                LayerSpec::GlobalAvgPool => {
                    let ishape = &self.nodes[node.inputs[0]].out_shape;
                    ops::gap_fwd(src, ishape[0], ishape[1], ishape[2], out);
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let p = &self.params[node.pidx.unwrap()];
                    ops::dense_fwd(src, p.weights.values(), in_features, out_features, p.bias.values(), out);
                }
                LayerSpec::Upsample2x => {
                    let ishape = &self.nodes[node.inputs[0]].out_shape;
                    ops::upsample2x_fwd(src, ishape[0], ishape[1], ishape[2], out);
                }
                LayerSpec::SoftmaxPixelwise => {
                    let shape = &node.out_shape;
                    ops::softmax_pixelwise_fwd(src, shape[0], shape[1], shape[2], out);
                }
                LayerSpec::ConcatSkip => {
                    let b = &done[node.inputs[1]];
                    ops::concat_fwd(src, b, out);
                }
            }
        }
        crate::tensor::check_finite(&ws.acts[self.output], "network output")?;
        ws.forward_done = true;
        Ok(&ws.acts[self.output])
    }

    /// Activation of a node from the last forward pass.
    pub fn activation<'w>(&self, ws: &'w Workspace, id: NodeId) -> &'w [f64] {
        &ws.acts[id]
    }

    /// d(loss)/d(input) from the last backward pass.
    pub fn input_gradient<'w>(&self, ws: &'w Workspace) -> &'w [f64] {
        &ws.grads[0]
    }

    /// Reverse-mode pass seeded with d(loss)/d(output). Parameter gradients
    /// accumulate into `ws.param_grads` (call `zero_param_grads` between
    /// optimizer steps); node gradients are reset internally.
    pub fn backward(&self, ws: &mut Workspace, out_grad: &[f64]) -> Result<()> {
        if !ws.forward_done {
            return Err(Error::BackwardBeforeForward);
        }
        let out_len: usize = self.nodes[self.output].out_shape.iter().product();
        if out_grad.len() != out_len {
            return Err(Error::shape("backward seed", out_len, out_grad.len()));
        }
        for g in &mut ws.grads {
            g.fill(0.0);
        }
        ws.grads[self.output].copy_from_slice(out_grad);

        let mut poff_table = Vec::with_capacity(self.params.len());
        let mut off = 0;
        for p in &self.params {
            poff_table.push(off);
            off += p.weights.len() + p.bias.len();
        }

        for id in (1..self.nodes.len()).rev() {
            let node = &self.nodes[id];
            let (gdone, grest) = ws.grads.split_at_mut(id);
            let dout = &grest[0];
            let src_id = node.inputs[0];
            match node.spec {
                LayerSpec::Input => unreachable!(),
                LayerSpec::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                } => {
                    let ishape = &self.nodes[src_id].out_shape;
                    let p = &self.params[node.pidx.unwrap()];
                    let poff = poff_table[node.pidx.unwrap()];
                    let (dker, dbias) = ws.param_grads[poff..poff + p.weights.len() + p.bias.len()]
                        .split_at_mut(p.weights.len());
                    ops::conv2d_bwd_params(
                        &ws.acts[src_id],
                        in_channels,
                        ishape[1],
                        ishape[2],
                        dout,
                        out_channels,
                        kernel,
                        dker,
                        dbias,
                    );
                    ops::conv2d_bwd_input(
                        dout,
                        in_channels,
                        ishape[1],
                        ishape[2],
                        p.weights.values(),
                        out_channels,
                        kernel,
                        &mut gdone[src_id],
                    );
                }
                LayerSpec::Relu => ops::relu_bwd(&ws.acts[src_id], dout, &mut gdone[src_id]),
                LayerSpec::MaxPool2x2 => ops::maxpool2x2_bwd(dout, &ws.argmax[id], &mut gdone[src_id]),
                LayerSpec::GlobalAvgPool => {
                    let ishape = &self.nodes[src_id].out_shape;
                    ops::gap_bwd(dout, ishape[0], ishape[1], ishape[2], &mut gdone[src_id]);
                }
                LayerSpec::Dense {
                    in_features,
                    out_features,
                } => {
                    let p = &self.params[node.pidx.unwrap()];
                    let poff = poff_table[node.pidx.unwrap()];
                    let (dwts, dbias) = ws.param_grads[poff..poff + p.weights.len() + p.bias.len()]
                        .split_at_mut(p.weights.len());
                    ops::dense_bwd(
                        &ws.acts[src_id],
                        p.weights.values(),
                        in_features,
                        out_features,
                        dout,
                        &mut gdone[src_id],
                        dwts,
                        dbias,
                    );
                }
                LayerSpec::Upsample2x => {
                    let ishape = &self.nodes[src_id].out_shape;
                    ops::upsample2x_bwd(dout, ishape[0], ishape[1], ishape[2], &mut gdone[src_id]);
                }
                LayerSpec::SoftmaxPixelwise => {
                    let shape = &node.out_shape;
                    ops::softmax_pixelwise_bwd(
                        &ws.acts[id],
                        shape[0],
                        shape[1],
                        shape[2],
                        dout,
                        &mut gdone[src_id],
                    );
                }
                LayerSpec::ConcatSkip => {
                    let b_id = node.inputs[1];
                    // inputs of a concat are always distinct earlier nodes
                    let (lo, hi) = if src_id < b_id { (src_id, b_id) } else { (b_id, src_id) };
                    let (glo, ghi) = gdone.split_at_mut(hi);
                    let (da, db) = if src_id < b_id {
                        (&mut glo[lo], &mut ghi[0])
                    } else {
                        (&mut ghi[0], &mut glo[lo])
                    };
                    ops::concat_bwd(dout, da, db);
                }
            }
        }
        Ok(())
    }
}
