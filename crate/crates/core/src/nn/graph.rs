//! Compiled execution of a [`NetworkSpec`]: forward pass with a cache of
//! activations, and reverse-mode gradients for every trainable array.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ops;
use super::params::{param_layout, ParamBlock, Params};
use super::spec::{LayerKind, NetworkSpec, Shape};
use super::tensor::Tensor;
use super::Real;
use crate::error::{OocsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active.
    Train,
    Eval,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Conv { filters: usize, slot: usize },
    Pool,
    Dense { units: usize, slot: usize },
    Relu,
    Flatten,
    Dropout { rate: f64 },
    Concat,
    Residual { kernel: Vec<f64>, size: usize, down: usize },
    Loss,
}

/// A validated spec with node inputs resolved to indices and residual
/// kernels built once.
#[derive(Debug, Clone)]
pub struct Graph {
    spec: NetworkSpec,
    shapes: Vec<Shape>,
    ops: Vec<Op>,
    inputs: Vec<Vec<usize>>,
    /// Whether a node's output depends on any trainable parameter, i.e.
    /// whether its gradient is ever needed.
    needs_grad: Vec<bool>,
    layout: Vec<(String, usize, usize)>,
    hash: u64,
}

impl Graph {
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let layout: Vec<_> = param_layout(&spec)?
            .into_iter()
            .map(|(n, w, b, _)| (n, w, b))
            .collect();
        let mut ops = Vec::with_capacity(spec.nodes.len());
        let mut inputs = Vec::with_capacity(spec.nodes.len());
        let mut needs_grad = Vec::with_capacity(spec.nodes.len());
        let mut slot = 0;
        for node in &spec.nodes {
            let idx: Vec<usize> = node
                .inputs
                .iter()
                .map(|n| spec.index_of(n).ok_or_else(|| OocsError::UnknownNode(n.clone())))
                .collect::<Result<_>>()?;
            let op = match &node.kind {
                LayerKind::Input { .. } => Op::Input,
                LayerKind::Conv2D { filters } => {
                    slot += 1;
                    Op::Conv { filters: *filters, slot: slot - 1 }
                }
                LayerKind::MaxPool2x2 => Op::Pool,
                LayerKind::Dense { units } => {
                    slot += 1;
                    Op::Dense { units: *units, slot: slot - 1 }
                }
                LayerKind::ReLU => Op::Relu,
                LayerKind::Flatten => Op::Flatten,
                LayerKind::Dropout { rate } => Op::Dropout { rate: *rate },
                LayerKind::Concat => Op::Concat,
                LayerKind::FixedDogResidual(r) => {
                    let k = r.kernel()?;
                    Op::Residual {
                        kernel: k.weights().to_vec(),
                        size: k.size(),
                        down: r.downsample,
                    }
                }
                LayerKind::SoftmaxCE => Op::Loss,
            };
            let dep = node.kind.is_trainable() || idx.iter().any(|&j| needs_grad[j]);
            needs_grad.push(dep);
            ops.push(op);
            inputs.push(idx);
        }
        let hash = spec.hash();
        Ok(Self {
            spec,
            shapes,
            ops,
            inputs,
            needs_grad,
            layout,
            hash,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[Shape] {
        &self.shapes
    }

    pub fn input_shape(&self) -> Shape {
        self.shapes[0]
    }

    /// Width of the logits row.
    pub fn num_classes(&self) -> usize {
        self.shapes[self.shapes.len() - 1].c
    }

    pub fn param_count(&self) -> usize {
        self.layout.iter().map(|(_, w, b)| w + b).sum()
    }

    fn check_params<T: Real>(&self, params: &Params<T>) -> Result<()> {
        if params.blocks.len() != self.layout.len() {
            return Err(OocsError::Shape {
                node: self.spec.nodes.last().map(|n| n.name.clone()).unwrap_or_default(),
                detail: format!(
                    "expected {} parameter blocks, got {}",
                    self.layout.len(),
                    params.blocks.len()
                ),
            });
        }
        for ((name, w, b), block) in self.layout.iter().zip(&params.blocks) {
            if &block.node != name || block.weight.len() != *w || block.bias.len() != *b {
                return Err(OocsError::Shape {
                    node: name.clone(),
                    detail: format!(
                        "parameter block `{}` has {}+{} values, expected {w}+{b}",
                        block.node,
                        block.weight.len(),
                        block.bias.len()
                    ),
                });
            }
        }
        Ok(())
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    outputs: Vec<Tensor<T>>,
    pool_args: Vec<Vec<u32>>,
    masks: Vec<Vec<T>>,
    hash: u64,
    n: usize,
}

impl<T: Real> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.n
    }

    /// Output of node `i` in declaration order.
    pub fn output(&self, i: usize) -> &Tensor<T> {
        &self.outputs[i]
    }
}

fn dropout_seed(seed: u64, node: usize) -> u64 {
    seed ^ (node as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Runs the network on `batch` and returns the logits.
///
/// `seed` only matters in [`Mode::Train`], where it drives the dropout masks.
pub fn forward<T: Real>(
    graph: &Graph,
    params: &Params<T>,
    batch: &Tensor<T>,
    mode: Mode,
    seed: u64,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    graph.check_params(params)?;
    let want = graph.input_shape();
    if (batch.h, batch.w, batch.c) != (want.h, want.w, want.c) {
        return Err(OocsError::Shape {
            node: graph.spec.nodes[0].name.clone(),
            detail: format!("batch samples are {}x{}x{}, network expects {want}", batch.h, batch.w, batch.c),
        });
    }
    let len = graph.ops.len();
    let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(len);
    let mut pool_args = vec![Vec::new(); len];
    let mut masks = vec![Vec::new(); len];
    for (i, op) in graph.ops.iter().enumerate() {
        let ins = &graph.inputs[i];
        let out = match op {
            Op::Input => batch.clone(),
            Op::Conv { filters, slot } => {
                let b = &params.blocks[*slot];
                ops::conv_forward(&outputs[ins[0]], &b.weight, &b.bias, *filters)
            }
            Op::Pool => {
                let (out, arg) = ops::maxpool_forward(&outputs[ins[0]]);
                pool_args[i] = arg;
                out
            }
            Op::Dense { units, slot } => {
                let b = &params.blocks[*slot];
                ops::dense_forward(&outputs[ins[0]], &b.weight, &b.bias, *units)
            }
            Op::Relu => ops::relu_forward(&outputs[ins[0]]),
            Op::Flatten => {
                let x = &outputs[ins[0]];
                Tensor {
                    n: x.n,
                    h: 1,
                    w: 1,
                    c: x.sample_len(),
                    data: x.data.clone(),
                }
            }
            Op::Dropout { rate } => {
                let x = &outputs[ins[0]];
                if mode == Mode::Eval || *rate == 0.0 {
                    x.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed(seed, i));
                    let keep = T::from_f64(1.0 / (1.0 - rate));
                    let mask: Vec<T> = (0..x.data.len())
                        .map(|_| if rng.random::<f64>() < *rate { T::zero() } else { keep })
                        .collect();
                    let mut out = x.clone();
                    for (v, &m) in out.data.iter_mut().zip(&mask) {
                        *v = *v * m;
                    }
                    masks[i] = mask;
                    out
                }
            }
            Op::Concat => concat(ins.iter().map(|&j| &outputs[j]).collect::<Vec<_>>().as_slice()),
            Op::Residual { kernel, size, down } => {
                let k: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
                let resp = ops::residual_response(&outputs[ins[1]], &k, *size, *down);
                ops::broadcast_add(&outputs[ins[0]], &resp)
            }
            // logits stay in the producing node's slot
            Op::Loss => Tensor::zeros(0, 0, 0, 0),
        };
        outputs.push(out);
    }
    let logits_node = graph.inputs[len - 1][0];
    let logits = outputs[logits_node].clone();
    let n = batch.n;
    Ok((
        logits,
        ForwardCache {
            outputs,
            pool_args,
            masks,
            hash: graph.hash,
            n,
        },
    ))
}

fn concat<T: Real>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let (n, h, w) = (parts[0].n, parts[0].h, parts[0].w);
    let c: usize = parts.iter().map(|p| p.c).sum();
    let mut out = Tensor::zeros(n, h, w, c);
    for (px, dst) in out.data.chunks_exact_mut(c).enumerate() {
        let mut off = 0;
        for p in parts {
            dst[off..off + p.c].copy_from_slice(&p.data[px * p.c..(px + 1) * p.c]);
            off += p.c;
        }
    }
    out
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn check_labels(labels: &[u8], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(OocsError::Dimension(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l as usize >= classes) {
        return Err(OocsError::InvalidLabel {
            index,
            label,
            num_classes: classes,
        });
    }
    Ok(())
}

/// Mean cross-entropy of the cached forward pass and its gradient with
/// respect to every parameter.
pub fn backward<T: Real>(
    graph: &Graph,
    params: &Params<T>,
    cache: &ForwardCache<T>,
    labels: &[u8],
) -> Result<(T, Params<T>)> {
    if cache.hash != graph.hash || cache.outputs.len() != graph.ops.len() {
        return Err(OocsError::StaleCache(
            "forward cache was produced by a different network".into(),
        ));
    }
    graph.check_params(params)?;
    check_labels(labels, cache.n, graph.num_classes())?;

    let len = graph.ops.len();
    let logits_node = graph.inputs[len - 1][0];
    let (loss, dlogits) = ops::softmax_ce(&cache.outputs[logits_node], labels);

    let mut grads: Vec<Option<Tensor<T>>> = vec![None; len];
    grads[logits_node] = Some(dlogits);
    let mut pgrads: Vec<ParamBlock<T>> = params.zeros_like().blocks;

    for i in (0..len - 1).rev() {
        let Some(g) = grads[i].take() else { continue };
        let ins = &graph.inputs[i];
        let wants = |j: usize| graph.needs_grad[j];
        match &graph.ops[i] {
            Op::Input | Op::Loss => {}
            Op::Conv { slot, .. } => {
                let x = &cache.outputs[ins[0]];
                let (dw, db, dx) = ops::conv_backward(x, &params.blocks[*slot].weight, &g, wants(ins[0]));
                pgrads[*slot].weight = dw;
                pgrads[*slot].bias = db;
                if let Some(dx) = dx {
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Dense { slot, .. } => {
                let x = &cache.outputs[ins[0]];
                let (dw, db, dx) = ops::dense_backward(x, &params.blocks[*slot].weight, &g, wants(ins[0]));
                pgrads[*slot].weight = dw;
                pgrads[*slot].bias = db;
                if let Some(dx) = dx {
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Pool => {
                if wants(ins[0]) {
                    let dx = ops::maxpool_backward(&g, &cache.pool_args[i], &cache.outputs[ins[0]]);
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Relu => {
                if wants(ins[0]) {
                    let dx = ops::relu_backward(&cache.outputs[i], &g);
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Flatten => {
                if wants(ins[0]) {
                    let x = &cache.outputs[ins[0]];
                    let dx = Tensor {
                        n: x.n,
                        h: x.h,
                        w: x.w,
                        c: x.c,
                        data: g.data,
                    };
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Dropout { .. } => {
                if wants(ins[0]) {
                    let mut dx = g;
                    if !cache.masks[i].is_empty() {
                        for (v, &m) in dx.data.iter_mut().zip(&cache.masks[i]) {
                            *v = *v * m;
                        }
                    }
                    accumulate(&mut grads[ins[0]], dx);
                }
            }
            Op::Concat => {
                let c = g.c;
                let mut off = 0;
                for &j in ins {
                    let x = &cache.outputs[j];
                    if wants(j) {
                        let mut dx = Tensor::zeros(x.n, x.h, x.w, x.c);
                        for (src, dst) in g.data.chunks_exact(c).zip(dx.data.chunks_exact_mut(x.c)) {
                            dst.copy_from_slice(&src[off..off + x.c]);
                        }
                        accumulate(&mut grads[j], dx);
                    }
                    off += x.c;
                }
            }
            Op::Residual { kernel, size, down } => {
                let src = ins[1];
                if wants(src) {
                    let s = &cache.outputs[src];
                    let k: Vec<T> = kernel.iter().map(|&v| T::from_f64(v)).collect();
                    let ds = ops::residual_source_grad(&g, (s.h, s.w, s.c), &k, *size, *down);
                    accumulate(&mut grads[src], ds);
                }
                if wants(ins[0]) {
                    accumulate(&mut grads[ins[0]], g);
                }
            }
        }
    }
    Ok((loss, Params { blocks: pgrads }))
}

/// Evaluation-mode forward pass followed by the mean cross-entropy.
pub fn loss_and_logits<T: Real>(
    graph: &Graph,
    params: &Params<T>,
    batch: &Tensor<T>,
    labels: &[u8],
) -> Result<(T, Tensor<T>)> {
    let (logits, _) = forward(graph, params, batch, Mode::Eval, 0)?;
    check_labels(labels, batch.n, graph.num_classes())?;
    let (loss, _) = ops::softmax_ce(&logits, labels);
    Ok((loss, logits))
}
