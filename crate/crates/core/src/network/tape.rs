//! Reverse-mode record of a forward pass.
//!
//! Every operation appends a [`TapeNode`] holding its output activation and
//! the ids of its inputs. [`Tape::backward`] takes the tape by value and walks
//! it from the end, so each cached activation serves exactly one backward
//! pass.

use crate::mri::Acquisition;
use crate::tensor::{self, Tensor};

use super::dc;
use super::params::Gradients;

pub type NodeId = usize;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Op {
    Leaf,
    /// Zero-padded convolution; parameters at `2*layer` (weight) and
    /// `2*layer + 1` (bias).
    Conv { layer: usize, stride: usize },
    LeakyRelu(f64),
    Upsample { factor: usize },
    Add,
    DataConsistency,
    GlobalMean,
    /// Affine map of a `C×1×1` tensor to `1×1×1`.
    Dense { layer: usize },
}

#[derive(Clone, Debug)]
pub struct TapeNode {
    pub op: Op,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
}

pub struct Tape<'a> {
    weights: &'a [Vec<f64>],
    kernel: usize,
    acquisition: Option<&'a Acquisition>,
    nodes: Vec<TapeNode>,
}

/// Result of a backward pass.
pub struct Backward {
    pub params: Gradients,
    /// Gradient with respect to each leaf, in leaf creation order.
    pub leaves: Vec<Tensor>,
}

impl<'a> Tape<'a> {
    pub fn new(weights: &'a [Vec<f64>], kernel: usize, acquisition: Option<&'a Acquisition>) -> Self {
        Tape {
            weights,
            kernel,
            acquisition,
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn node(&self, id: NodeId) -> &TapeNode {
        &self.nodes[id]
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        self.nodes.push(TapeNode { op, inputs, value });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(Op::Leaf, Vec::new(), value)
    }

    pub fn conv(&mut self, x: NodeId, layer: usize, stride: usize) -> NodeId {
        let weight = &self.weights[2 * layer];
        let bias = &self.weights[2 * layer + 1];
        let out = tensor::conv2d_forward(&self.nodes[x].value, weight, bias, bias.len(), self.kernel, stride);
        self.push(Op::Conv { layer, stride }, vec![x], out)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let out = tensor::leaky_relu(&self.nodes[x].value, slope);
        self.push(Op::LeakyRelu(slope), vec![x], out)
    }

    pub fn upsample(&mut self, x: NodeId, factor: usize, height: usize, width: usize) -> NodeId {
        let out = tensor::upsample_nearest(&self.nodes[x].value, factor, height, width);
        self.push(Op::Upsample { factor }, vec![x], out)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut out = self.nodes[a].value.clone();
        out.add_assign(&self.nodes[b].value);
        self.push(Op::Add, vec![a, b], out)
    }

    pub fn data_consistency(&mut self, x: NodeId) -> NodeId {
        let acq = self.acquisition.expect("data consistency needs an acquisition");
        let img = self.nodes[x].value.to_complex();
        let out = dc::dc_layer(&img, acq).expect("acquisition shapes validated");
        self.push(Op::DataConsistency, vec![x], Tensor::from_complex(&out))
    }

    pub fn global_mean(&mut self, x: NodeId) -> NodeId {
        let v = &self.nodes[x].value;
        let n = (v.height * v.width) as f64;
        let mut out = Tensor::zeros(v.channels, 1, 1);
        for c in 0..v.channels {
            out.data[c] = v.plane(c).iter().sum::<f64>() / n;
        }
        self.push(Op::GlobalMean, vec![x], out)
    }

    pub fn dense(&mut self, x: NodeId, layer: usize) -> NodeId {
        let weight = &self.weights[2 * layer];
        let bias = &self.weights[2 * layer + 1];
        let v = &self.nodes[x].value.data;
        let s = bias[0] + weight.iter().zip(v).map(|(w, x)| w * x).sum::<f64>();
        let mut out = Tensor::zeros(1, 1, 1);
        out.data[0] = s;
        self.push(Op::Dense { layer }, vec![x], out)
    }

    /// Propagates `grad` from node `output` back to every parameter and
    /// leaf.
    pub fn backward(mut self, output: NodeId, grad: Tensor) -> Backward {
        let mut params = Gradients(self.weights.iter().map(|w| vec![0.0; w.len()]).collect());
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output] = Some(grad);
        let mut leaves = Vec::new();

        while let Some(node) = self.nodes.pop() {
            let id = self.nodes.len();
            let Some(g) = grads[id].take() else {
                if node.op == Op::Leaf {
                    leaves.push(Tensor::zeros_like(&node.value));
                }
                continue;
            };
            match node.op {
                Op::Leaf => leaves.push(g),
                Op::Conv { layer, stride } => {
                    let input = &self.nodes[node.inputs[0]].value;
                    let (gw, rest) = params.0.split_at_mut(2 * layer + 1);
                    let gi = tensor::conv2d_backward(
                        input,
                        &self.weights[2 * layer],
                        &g,
                        self.kernel,
                        stride,
                        &mut gw[2 * layer],
                        &mut rest[0],
                    );
                    accumulate(&mut grads, node.inputs[0], gi);
                }
                Op::LeakyRelu(slope) => {
                    let input = &self.nodes[node.inputs[0]].value;
                    let gi = tensor::leaky_relu_backward(input, &g, slope);
                    accumulate(&mut grads, node.inputs[0], gi);
                }
                Op::Upsample { factor } => {
                    let input = &self.nodes[node.inputs[0]].value;
                    let gi = tensor::upsample_nearest_backward(&g, factor, input.height, input.width);
                    accumulate(&mut grads, node.inputs[0], gi);
                }
                Op::Add => {
                    accumulate(&mut grads, node.inputs[1], g.clone());
                    accumulate(&mut grads, node.inputs[0], g);
                }
                Op::DataConsistency => {
                    let acq = self.acquisition.expect("data consistency needs an acquisition");
                    let gi = dc::dc_backward(&g.to_complex(), acq);
                    accumulate(&mut grads, node.inputs[0], Tensor::from_complex(&gi));
                }
                Op::GlobalMean => {
                    let input = &self.nodes[node.inputs[0]].value;
                    let n = (input.height * input.width) as f64;
                    let mut gi = Tensor::zeros_like(input);
                    for c in 0..input.channels {
                        let v = g.data[c] / n;
                        gi.plane_mut(c).iter_mut().for_each(|x| *x = v);
                    }
                    accumulate(&mut grads, node.inputs[0], gi);
                }
                Op::Dense { layer } => {
                    let input = &self.nodes[node.inputs[0]].value;
                    let go = g.data[0];
                    params.0[2 * layer + 1][0] += go;
                    for (gw, x) in params.0[2 * layer].iter_mut().zip(&input.data) {
                        *gw += go * x;
                    }
                    let mut gi = Tensor::zeros_like(input);
                    for (gx, w) in gi.data.iter_mut().zip(&self.weights[2 * layer]) {
                        *gx = go * w;
                    }
                    accumulate(&mut grads, node.inputs[0], gi);
                }
            }
        }
        leaves.reverse();
        Backward { params, leaves }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, g: Tensor) {
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
