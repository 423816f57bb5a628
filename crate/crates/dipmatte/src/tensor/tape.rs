//! Operation tape for reverse-mode differentiation.
//!
//! Ops append nodes in execution order; [`Tape::backward`] walks the records
//! in exact reverse order, accumulating adjoints additively so a value
//! consumed by several ops receives the sum of all contributions.

use super::kernels;
use super::{Element, Shape, Tensor, TensorError};

/// Handle to a tensor on a tape.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<E: Element> {
    Leaf,
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    ScalarMul { a: Var, s: E },
    Abs { a: Var },
    Square { a: Var },
    Sum { a: Var },
    Concat { inputs: Vec<Var> },
    LeakyRelu { a: Var, slope: E },
    Sigmoid { a: Var },
    InstanceNorm { a: Var, inv_stds: Vec<E> },
    Conv2d { input: Var, kernel: Var, stride: usize },
    Upsample2 { a: Var },
    SpatialGradL1 { a: Var },
    BiasAdd { a: Var, b: Var },
    Crop { a: Var, y0: usize, x0: usize },
}

struct Record<E: Element> {
    out: usize,
    op: Op<E>,
}

/// Records executed operations and replays their adjoints.
pub struct Tape<E: Element> {
    nodes: Vec<Tensor<E>>,
    records: Vec<Record<E>>,
    backward_done: bool,
}

impl<E: Element> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Element> Tape<E> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            records: Vec::new(),
            backward_done: false,
        }
    }

    /// Registers an existing tensor as a leaf.
    pub fn leaf(&mut self, t: Tensor<E>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf that does not require gradients.
    pub fn constant(&mut self, shape: Shape, data: Vec<E>) -> Result<Var, TensorError> {
        Ok(self.leaf(Tensor::new(shape, data)?))
    }

    /// Leaf that participates in backward.
    pub fn param(&mut self, shape: Shape, data: Vec<E>) -> Result<Var, TensorError> {
        Ok(self.leaf(Tensor::new(shape, data)?.with_grad()))
    }

    pub fn shape(&self, v: Var) -> &Shape {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[E] {
        &self.nodes[v.0].data
    }

    pub fn scalar_value(&self, v: Var) -> E {
        self.nodes[v.0].data[0]
    }

    /// Gradient of a tensor, populated by [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Option<&[E]> {
        self.nodes[v.0].grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, t: Tensor<E>, op: Op<E>) -> Var {
        let id = self.nodes.len();
        self.nodes.push(t);
        self.records.push(Record { out: id, op });
        Var(id)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn result(&mut self, shape: Shape, data: Vec<E>, inputs: &[Var], op: Op<E>) -> Var {
        let mut t = Tensor {
            shape,
            data,
            requires_grad: false,
            grad: None,
        };
        t.requires_grad = self.any_grad(inputs);
        self.push(t, op)
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::ShapeMismatch {
                op,
                left: self.shape(a).clone(),
                right: self.shape(b).clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_same_shape("add", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.result(self.shape(a).clone(), data, &[a, b], Op::Add { a, b }))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_same_shape("sub", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.result(self.shape(a).clone(), data, &[a, b], Op::Sub { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.check_same_shape("mul", a, b)?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.result(self.shape(a).clone(), data, &[a, b], Op::Mul { a, b }))
    }

    pub fn scalar_mul(&mut self, a: Var, s: E) -> Var {
        let data = self.value(a).iter().map(|&x| x * s).collect();
        self.result(self.shape(a).clone(), data, &[a], Op::ScalarMul { a, s })
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|&x| x.abs()).collect();
        self.result(self.shape(a).clone(), data, &[a], Op::Abs { a })
    }

    pub fn square(&mut self, a: Var) -> Var {
        let data = self.value(a).iter().map(|&x| x * x).collect();
        self.result(self.shape(a).clone(), data, &[a], Op::Square { a })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let mut acc = E::zero();
        for &x in self.value(a) {
            acc += x;
        }
        self.result(Shape::scalar(), vec![acc], &[a], Op::Sum { a })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: E) -> Result<Var, TensorError> {
        if slope <= E::zero() || slope >= E::one() {
            return Err(TensorError::BadSlope {
                slope: slope.to_f64(),
            });
        }
        let data = self
            .value(a)
            .iter()
            .map(|&x| if x >= E::zero() { x } else { slope * x })
            .collect();
        Ok(self.result(self.shape(a).clone(), data, &[a], Op::LeakyRelu { a, slope }))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .iter()
            .map(|&x| E::one() / (E::one() + (-x).exp()))
            .collect();
        self.result(self.shape(a).clone(), data, &[a], Op::Sigmoid { a })
    }

    pub fn instance_norm(&mut self, a: Var, eps: E) -> Result<Var, TensorError> {
        let (c, h, w) = self.shape(a).as_chw()?;
        let (out, _means, inv_stds) = kernels::instance_norm_forward(self.value(a), c, h * w, eps);
        Ok(self.result(
            self.shape(a).clone(),
            out,
            &[a],
            Op::InstanceNorm { a, inv_stds },
        ))
    }

    /// 2-d convolution with reflect padding. `kernel` is `[c_out, c_in, k, k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize) -> Result<Var, TensorError> {
        let (c_in, h, w) = self.shape(input).as_chw()?;
        let kshape = &self.shape(kernel).0;
        let (c_out, kc_in, k) = match kshape.as_slice() {
            &[co, ci, ky, kx] if ky == kx => (co, ci, ky),
            _ => {
                return Err(TensorError::Rank {
                    expected: 4,
                    got: kshape.len(),
                })
            }
        };
        if kc_in != c_in {
            return Err(TensorError::ChannelMismatch {
                input_channels: c_in,
                kernel_channels: kc_in,
            });
        }
        if k % 2 == 0 {
            return Err(TensorError::EvenKernel { k });
        }
        if stride != 1 && stride != 2 {
            return Err(TensorError::BadStride { stride });
        }
        if h < k || w < k {
            return Err(TensorError::InputTooSmall { h, w, k });
        }
        let p = k / 2;
        let (oh, ow) = (kernels::conv_out_size(h, stride), kernels::conv_out_size(w, stride));
        let padded = kernels::pad_reflect(self.value(input), c_in, h, w, p);
        let out = kernels::conv2d_forward(
            &padded,
            c_in,
            h + 2 * p,
            w + 2 * p,
            self.value(kernel),
            c_out,
            k,
            stride,
            oh,
            ow,
        );
        Ok(self.result(
            Shape::chw(c_out, oh, ow),
            out,
            &[input, kernel],
            Op::Conv2d {
                input,
                kernel,
                stride,
            },
        ))
    }

    pub fn upsample_nearest(&mut self, a: Var, factor: usize) -> Result<Var, TensorError> {
        if factor != 2 {
            return Err(TensorError::BadUpsampleFactor { factor });
        }
        let (c, h, w) = self.shape(a).as_chw()?;
        let out = kernels::upsample2_forward(self.value(a), c, h, w);
        Ok(self.result(Shape::chw(c, 2 * h, 2 * w), out, &[a], Op::Upsample2 { a }))
    }

    /// Per-pixel L1 spatial gradient magnitude, summed across channels.
    pub fn spatial_grad_l1(&mut self, a: Var) -> Result<Var, TensorError> {
        let (c, h, w) = self.shape(a).as_chw()?;
        let out = kernels::spatial_grad_l1_forward(self.value(a), c, h, w);
        Ok(self.result(Shape::chw(1, h, w), out, &[a], Op::SpatialGradL1 { a }))
    }

    /// Concatenates along the channel axis; spatial sizes must agree.
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var, TensorError> {
        assert!(!inputs.is_empty());
        let (_, h, w) = self.shape(inputs[0]).as_chw()?;
        let mut c_total = 0;
        for &v in inputs {
            let (c, vh, vw) = self.shape(v).as_chw()?;
            if (vh, vw) != (h, w) {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_channels",
                    left: self.shape(inputs[0]).clone(),
                    right: self.shape(v).clone(),
                });
            }
            c_total += c;
        }
        let mut data = Vec::with_capacity(c_total * h * w);
        for &v in inputs {
            data.extend_from_slice(self.value(v));
        }
        Ok(self.result(
            Shape::chw(c_total, h, w),
            data,
            inputs,
            Op::Concat {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Adds a per-channel bias `b: [C]` to `a: [C, H, W]`.
    pub fn bias_add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (c, h, w) = self.shape(a).as_chw()?;
        if self.shape(b).0 != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "bias_add",
                left: self.shape(a).clone(),
                right: self.shape(b).clone(),
            });
        }
        let bias = self.value(b).to_vec();
        let mut data = self.value(a).to_vec();
        for ch in 0..c {
            let bv = bias[ch];
            for v in &mut data[ch * h * w..(ch + 1) * h * w] {
                *v += bv;
            }
        }
        Ok(self.result(Shape::chw(c, h, w), data, &[a, b], Op::BiasAdd { a, b }))
    }

    /// Spatial crop to a `[C, h, w]` window starting at `(y0, x0)`.
    pub fn crop(
        &mut self,
        a: Var,
        y0: usize,
        x0: usize,
        h: usize,
        w: usize,
    ) -> Result<Var, TensorError> {
        let (c, ih, iw) = self.shape(a).as_chw()?;
        if y0 + h > ih || x0 + w > iw {
            return Err(TensorError::BadCrop {
                y0,
                x0,
                h,
                w,
                ih,
                iw,
            });
        }
        if (y0, x0, h, w) == (0, 0, ih, iw) {
            return Ok(a);
        }
        let mut data = Vec::with_capacity(c * h * w);
        {
            let src = self.value(a);
            for ch in 0..c {
                for y in 0..h {
                    let base = ch * ih * iw + (y0 + y) * iw + x0;
                    data.extend_from_slice(&src[base..base + w]);
                }
            }
        }
        Ok(self.result(Shape::chw(c, h, w), data, &[a], Op::Crop { a, y0, x0 }))
    }

    /// Reverse sweep from a scalar loss. Populates `grad` on every tensor
    /// with `requires_grad` on the path to the loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if !self.shape(loss).is_scalar() {
            return Err(TensorError::NonScalarLoss {
                shape: self.shape(loss).clone(),
            });
        }
        if self.backward_done {
            return Err(TensorError::DoubleBackward);
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![E::one()]);

        for ri in (0..self.records.len()).rev() {
            let out = self.records[ri].out;
            if !self.nodes[out].requires_grad {
                continue;
            }
            let Some(gout) = grads[out].take() else {
                continue;
            };
            self.step_backward(ri, &gout, &mut grads);
            grads[out] = Some(gout);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if node.requires_grad {
                node.grad = g;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<E>>], v: Var, contrib: impl Iterator<Item = E>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| vec![E::zero(); self.nodes[v.0].numel()]);
        for (g, c) in slot.iter_mut().zip(contrib) {
            *g += c;
        }
    }

    fn step_backward(&self, ri: usize, gout: &[E], grads: &mut [Option<Vec<E>>]) {
        let out = self.records[ri].out;
        match &self.records[ri].op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                self.accumulate(grads, *a, gout.iter().copied());
                self.accumulate(grads, *b, gout.iter().copied());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, gout.iter().copied());
                self.accumulate(grads, *b, gout.iter().map(|&g| -g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (&self.nodes[a.0].data, &self.nodes[b.0].data);
                self.accumulate(grads, *a, gout.iter().zip(bv).map(|(&g, &y)| g * y));
                self.accumulate(grads, *b, gout.iter().zip(av).map(|(&g, &x)| g * x));
            }
            Op::ScalarMul { a, s } => {
                let s = *s;
                self.accumulate(grads, *a, gout.iter().map(move |&g| g * s));
            }
            Op::Abs { a } => {
                let av = &self.nodes[a.0].data;
                self.accumulate(
                    grads,
                    *a,
                    gout.iter().zip(av).map(|(&g, &x)|

                        if x > E::zero() {
                            g
                        } else if x < E::zero() {
                            -g
                        } else {
                            E::zero()
                        }),
                );
            }
            Op::Square { a } => {
                let two = E::from_f64(2.0);
                let av = &self.nodes[a.0].data;
                self.accumulate(grads, *a, gout.iter().zip(av).map(|(&g, &x)| two * g * x));
            }
            Op::Sum { a } => {
                let g = gout[0];
                let n = self.nodes[a.0].numel();
                self.accumulate(grads, *a, std::iter::repeat_n(g, n));
            }
            Op::LeakyRelu { a, slope } => {
                let slope = *slope;
                let av = &self.nodes[a.0].data;
                self.accumulate(
                    grads,
                    *a,
                    gout.iter()
                        .zip(av)
                        .map(move |(&g, &x)| if x >= E::zero() { g } else { g * slope }),
                );
            }
            Op::Sigmoid { a } => {
                let y = &self.nodes[out].data;
                self.accumulate(
                    grads,
                    *a,
                    gout.iter().zip(y).map(|(&g, &y)| g * y * (E::one() - y)),
                );
            }
            Op::InstanceNorm { a, inv_stds } => {
                let (c, h, w) = self.nodes[a.0].shape.as_chw().expect("checked at forward");
                let gin = kernels::instance_norm_backward(
                    &self.nodes[out].data,
                    gout,
                    inv_stds,
                    c,
                    h * w,
                );
                self.accumulate(grads, *a, gin.into_iter());
            }
            Op::Conv2d {
                input,
                kernel,
                stride,
            } => {
                let (c_in, h, w) = self.nodes[input.0].shape.as_chw().expect("checked");
                let kshape = &self.nodes[kernel.0].shape.0;
                let (c_out, k) = (kshape[0], kshape[2]);
                let p = k / 2;
                let (oh, ow) = (
                    kernels::conv_out_size(h, *stride),
                    kernels::conv_out_size(w, *stride),
                );
                if self.nodes[kernel.0].requires_grad {
                    let padded = kernels::pad_reflect(&self.nodes[input.0].data, c_in, h, w, p);
                    let gk = kernels::conv2d_grad_kernel(
                        &padded,
                        c_in,
                        h + 2 * p,
                        w + 2 * p,
                        gout,
                        c_out,
                        k,
                        *stride,
                        oh,
                        ow,
                    );
                    self.accumulate(grads, *kernel, gk.into_iter());
                }
                if self.nodes[input.0].requires_grad {
                    let gin = kernels::conv2d_grad_input(
                        gout,
                        &self.nodes[kernel.0].data,
                        c_in,
                        c_out,
                        h,
                        w,
                        k,
                        *stride,
                        oh,
                        ow,
                    );
                    self.accumulate(grads, *input, gin.into_iter());
                }
            }
            Op::Upsample2 { a } => {
                let (c, h, w) = self.nodes[a.0].shape.as_chw().expect("checked");
                let gin = kernels::upsample2_backward(gout, c, h, w);
                self.accumulate(grads, *a, gin.into_iter());
            }
            Op::SpatialGradL1 { a } => {
                let (c, h, w) = self.nodes[a.0].shape.as_chw().expect("checked");
                let gin =
                    kernels::spatial_grad_l1_backward(&self.nodes[a.0].data, gout, c, h, w);
                self.accumulate(grads, *a, gin.into_iter());
            }
            Op::Concat { inputs } => {
                let mut offset = 0;
                for &v in inputs {
                    let n = self.nodes[v.0].numel();
                    self.accumulate(grads, v, gout[offset..offset + n].iter().copied());
                    offset += n;
                }
            }
            Op::BiasAdd { a, b } => {
                self.accumulate(grads, *a, gout.iter().copied());
                let (c, h, w) = self.nodes[a.0].shape.as_chw().expect("checked");
                let gb = (0..c).map(|ch| {
                    let mut acc = E::zero();
                    for &g in &gout[ch * h * w..(ch + 1) * h * w] {
                        acc += g;
                    }
                    acc
                });
                self.accumulate(grads, *b, gb);
            }
            Op::Crop { a, y0, x0 } => {
                let (c, ih, iw) = self.nodes[a.0].shape.as_chw().expect("checked");
                let (_, h, w) = self.nodes[out].shape.as_chw().expect("checked");
                let mut gin = vec![E::zero(); c * ih * iw];
                for ch in 0..c {
                    for y in 0..h {
                        let dst = ch * ih * iw + (y0 + y) * iw + x0;
                        let src = ch * h * w + y * w;
                        for x in 0..w {
                            gin[dst + x] += gout[src + x];
                        }
                    }
                }
                self.accumulate(grads, *a, gin.into_iter());
            }
        }
    }
}

fn zip_map<E: Element>(a: &[E], b: &[E], f: impl Fn(E, E) -> E) -> Vec<E> {
    a.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
}
