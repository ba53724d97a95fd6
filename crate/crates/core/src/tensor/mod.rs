//! A small dense tensor type and a tape-based reverse-mode autodiff graph
//! covering the operators the network needs: standard, depth-wise and
//! deformable convolution, leaky ReLU, element-wise arithmetic and the
//! training losses.
//!
//! Shapes never broadcast; every binary operator requires equal shapes.

mod checkpoint;
mod conv;
mod deform;

pub use checkpoint::{read_tensors, write_tensors};

use crate::error::{invalid, Error, Result};

/// Row-major dense array of up to rank 4 (`[batch, channels, height, width]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.len() > 4 {
            return Err(invalid!("rank {} exceeds 4", shape.len()));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(invalid!("shape {shape:?} needs {numel} values, got {}", data.len()));
        }
        Ok(Self { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![0.0; shape.iter().product()] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(invalid!("tensor of shape {:?} is not a scalar", self.shape)),
        }
    }

    pub fn dims4(&self) -> Result<[usize; 4]> {
        <[usize; 4]>::try_from(self.shape.as_slice())
            .map_err(|_| invalid!("expected a rank-4 tensor, got shape {:?}", self.shape))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Concatenates rank-4 tensors along the batch axis.
    pub fn stack_batch(items: &[Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| invalid!("nothing to stack"))?;
        let [_, c, h, w] = first.dims4()?;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            let [tn, tc, th, tw] = t.dims4()?;
            if (tc, th, tw) != (c, h, w) {
                return Err(invalid!("cannot stack {:?} with {:?}", t.shape, first.shape));
            }
            n += tn;
            data.extend_from_slice(&t.data);
        }
        Tensor::new(&[n, c, h, w], data)
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, stride: usize, pad: usize, depthwise: bool },
    Deform { x: Var, w: Var, b: Var, off: Var },
    LeakyRelu { x: Var, slope: f64 },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { x: Var, factor: f64 },
    WeightedSum { xs: Vec<Var>, weights: Vec<f64> },
    Sum { x: Var },
    Charbonnier { pred: Var, target: Tensor, betas: Vec<f64>, epsilon: f64 },
    Mse { pred: Var, target: Tensor },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Records operations in execution order; since inputs always precede their
/// consumers, a reverse sweep over the tape is a valid topological order.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of a trainable leaf, if any backward pass has run.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad, grad: None });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape != self.value(b).shape {
            return Err(invalid!(
                "{what}: shape {:?} does not match {:?}",
                self.value(a).shape,
                self.value(b).shape
            ));
        }
        Ok(())
    }

    fn conv_geom(&self, x: Var, w: Var, b: Var, stride: usize, pad: usize, depthwise: bool) -> Result<conv::ConvGeom> {
        let xs = self.value(x).dims4()?;
        let [oc, ic, kh, kw] = self.value(w).dims4()?;
        if kh != kw {
            return Err(invalid!("kernels must be square, got {kh}x{kw}"));
        }
        if depthwise {
            if ic != 1 || oc != xs[1] {
                return Err(invalid!(
                    "depthwise kernel {:?} does not match {} input channels",
                    self.value(w).shape,
                    xs[1]
                ));
            }
        } else if ic != xs[1] {
            return Err(invalid!("kernel expects {ic} input channels, input has {}", xs[1]));
        }
        if self.value(b).shape != [oc] {
            return Err(invalid!("bias shape {:?} does not match {oc} filters", self.value(b).shape));
        }
        conv::ConvGeom::new(xs, oc, kh, stride, pad)
    }

    /// Standard 2-D cross-correlation; `w` is `[out_c, in_c, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_impl(x, w, b, stride, padding, false)
    }

    /// Per-channel convolution; `w` is `[channels, 1, k, k]`.
    pub fn depthwise_conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize, padding: usize) -> Result<Var> {
        self.conv_impl(x, w, b, stride, padding, true)
    }

    fn conv_impl(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, depthwise: bool) -> Result<Var> {
        let g = self.conv_geom(x, w, b, stride, pad, depthwise)?;
        let out = conv::forward(&g, self.value(x).data(), self.value(w).data(), self.value(b).data(), depthwise);
        let value = Tensor { shape: vec![g.n, g.out_c, g.out_h, g.out_w], data: out };
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, Op::Conv { x, w, b, stride, pad, depthwise }, rg))
    }

    /// Deformable convolution with odd square kernel, stride 1 and "same"
    /// padding. `offsets` is `[n, 2 k k, h, w]`.
    pub fn deformable_conv2d(&mut self, x: Var, w: Var, b: Var, offsets: Var) -> Result<Var> {
        let g = self.deform_geom(x, w, b, offsets)?;
        let out = deform::forward(
            &g,
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            self.value(offsets).data(),
        );
        let value = Tensor { shape: vec![g.n, g.out_c, g.h, g.w], data: out };
        let rg = self.any_grad(&[x, w, b, offsets]);
        Ok(self.push(value, Op::Deform { x, w, b, off: offsets }, rg))
    }

    fn deform_geom(&self, x: Var, w: Var, b: Var, off: Var) -> Result<deform::DeformGeom> {
        let [n, in_c, h, wd] = self.value(x).dims4()?;
        let [out_c, ic, kh, kw] = self.value(w).dims4()?;
        if kh != kw || kh % 2 == 0 {
            return Err(invalid!("deformable kernels must be odd and square, got {kh}x{kw}"));
        }
        if ic != in_c {
            return Err(invalid!("kernel expects {ic} input channels, input has {in_c}"));
        }
        if self.value(b).shape != [out_c] {
            return Err(invalid!("bias shape {:?} does not match {out_c} filters", self.value(b).shape));
        }
        let expected = [n, 2 * kh * kh, h, wd];
        if self.value(off).shape != expected {
            return Err(invalid!("offsets have shape {:?}, expected {expected:?}", self.value(off).shape));
        }
        Ok(deform::DeformGeom { n, in_c, out_c, h, w: wd, k: kh })
    }

    /// `x` where `x >= 0`, `slope * x` elsewhere.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        let data = self.value(x).data.iter().map(|&v| if v >= 0.0 { v } else { slope * v }).collect();
        let value = Tensor { shape: self.value(x).shape.clone(), data };
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::LeakyRelu { x, slope }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x + y).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self.value(a).data.iter().zip(&self.value(b).data).map(|(x, y)| x * y).collect();
        let value = Tensor { shape: self.value(a).shape.clone(), data };
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.value(x).data.iter().map(|v| v * factor).collect();
        let value = Tensor { shape: self.value(x).shape.clone(), data };
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Scale { x, factor }, rg))
    }

    /// `sum_i weights[i] * xs[i]`.
    pub fn weighted_sum(&mut self, xs: &[Var], weights: &[f64]) -> Result<Var> {
        if xs.is_empty() || xs.len() != weights.len() {
            return Err(invalid!("weighted_sum needs one weight per input"));
        }
        for &x in &xs[1..] {
            self.same_shape(xs[0], x, "weighted_sum")?;
        }
        let mut data = vec![0.0; self.value(xs[0]).numel()];
        for (&x, &wt) in xs.iter().zip(weights) {
            for (d, v) in data.iter_mut().zip(&self.value(x).data) {
                *d += wt * v;
            }
        }
        let value = Tensor { shape: self.value(xs[0]).shape.clone(), data };
        let rg = self.any_grad(xs);
        Ok(self.push(value, Op::WeightedSum { xs: xs.to_vec(), weights: weights.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).data.iter().sum());
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Sum { x }, rg))
    }

    /// Channel-weighted Charbonnier loss over `[n, c, h, w]`:
    /// `1/n sum_b 1/(c h w) sum_c beta_c sum_xy sqrt((p - t)^2 + eps^2)`.
    pub fn weighted_charbonnier(&mut self, pred: Var, target: &Tensor, betas: &[f64], epsilon: f64) -> Result<Var> {
        let [n, c, h, w] = self.value(pred).dims4()?;
        if target.shape != self.value(pred).shape {
            return Err(invalid!("loss target {:?} does not match prediction {:?}", target.shape, self.value(pred).shape));
        }
        if betas.len() != c {
            return Err(invalid!("{} channel weights for {c} channels", betas.len()));
        }
        if !(epsilon > 0.0) {
            return Err(invalid!("Charbonnier epsilon must be positive"));
        }
        let plane = h * w;
        let p = &self.value(pred).data;
        let mut total = 0.0;
        for b in 0..n {
            for (ch, beta) in betas.iter().enumerate() {
                let base = (b * c + ch) * plane;
                let s: f64 = (base..base + plane)
                    .map(|i| {
                        let d = p[i] - target.data[i];
                        (d * d + epsilon * epsilon).sqrt()
                    })
                    .sum();
                total += beta * s;
            }
        }
        let value = Tensor::scalar(total / (n * c * plane) as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(
            value,
            Op::Charbonnier { pred, target: target.clone(), betas: betas.to_vec(), epsilon },
            rg,
        ))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if target.shape != self.value(pred).shape {
            return Err(invalid!("loss target {:?} does not match prediction {:?}", target.shape, self.value(pred).shape));
        }
        let p = &self.value(pred).data;
        let s: f64 = p.iter().zip(&target.data).map(|(a, b)| (a - b) * (a - b)).sum();
        let value = Tensor::scalar(s / p.len().max(1) as f64);
        let rg = self.any_grad(&[pred]);
        Ok(self.push(value, Op::Mse { pred, target: target.clone() }, rg))
    }

    /// Propagates d(loss)/d(node) back through the tape and adds the result
    /// to every trainable leaf's gradient.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(invalid!("backward needs a scalar loss, got shape {:?}", self.value(loss).shape));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor { shape: self.value(loss).shape.clone(), data: vec![1.0] });

        for i in (0..=loss.0).rev() {
            let Some(gout) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let node = &mut self.nodes[i];
                match &mut node.grad {
                    Some(g) => g.add_assign(&gout),
                    None => node.grad = Some(gout),
                }
                continue;
            }
            for (v, g) in self.local_grads(i, &gout)? {
                if !self.nodes[v.0].requires_grad {
                    continue;
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
        }
        Ok(())
    }

    fn local_grads(&self, i: usize, gout: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let like = |v: Var, data: Vec<f64>| Tensor { shape: self.value(v).shape.clone(), data };
        let gs = gout.data();
        let out = match &node.op {
            Op::Leaf => vec![],
            &Op::Conv { x, w, b, stride, pad, depthwise } => {
                let g = self.conv_geom(x, w, b, stride, pad, depthwise)?;
                let mut out = Vec::with_capacity(3);
                if self.requires_grad(x) {
                    out.push((x, like(x, conv::backward_input(&g, self.value(w).data(), gs, depthwise))));
                }
                if self.requires_grad(w) {
                    out.push((w, like(w, conv::backward_weight(&g, self.value(x).data(), gs, depthwise))));
                }
                if self.requires_grad(b) {
                    out.push((b, like(b, conv::backward_bias(g.n, g.out_c, g.out_h * g.out_w, gs))));
                }
                out
            }
            &Op::Deform { x, w, b, off } => {
                let g = self.deform_geom(x, w, b, off)?;
                let d = deform::backward(&g, self.value(x).data(), self.value(w).data(), self.value(off).data(), gs);
                vec![
                    (x, like(x, d.dx)),
                    (w, like(w, d.dw)),
                    (b, like(b, conv::backward_bias(g.n, g.out_c, g.h * g.w, gs))),
                    (off, like(off, d.doff)),
                ]
            }
            &Op::LeakyRelu { x, slope } => {
                let data = self.value(x).data.iter().zip(gs).map(|(&v, &g)| if v > 0.0 { g } else { slope * g }).collect();
                vec![(x, like(x, data))]
            }
            &Op::Add { a, b } => vec![(a, gout.clone()), (b, gout.clone())],
            &Op::Mul { a, b } => {
                let da = self.value(b).data.iter().zip(gs).map(|(v, g)| v * g).collect();
                let db = self.value(a).data.iter().zip(gs).map(|(v, g)| v * g).collect();
                vec![(a, like(a, da)), (b, like(b, db))]
            }
            &Op::Scale { x, factor } => vec![(x, like(x, gs.iter().map(|g| g * factor).collect()))],
            Op::WeightedSum { xs, weights } => xs
                .iter()
                .zip(weights)
                .map(|(&x, &wt)| (x, like(x, gs.iter().map(|g| g * wt).collect())))
                .collect(),
            &Op::Sum { x } => vec![(x, like(x, vec![gs[0]; self.value(x).numel()]))],
            Op::Charbonnier { pred, target, betas, epsilon } => {
                let [n, c, h, w] = self.value(*pred).dims4()?;
                let plane = h * w;
                let scale = gs[0] / (n * c * plane) as f64;
                let p = self.value(*pred).data();
                let data = (0..p.len())
                    .map(|i| {
                        let ch = (i / plane) % c;
                        let d = p[i] - target.data[i];
                        scale * betas[ch] * d / (d * d + epsilon * epsilon).sqrt()
                    })
                    .collect();
                vec![(*pred, like(*pred, data))]
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let scale = 2.0 * gs[0] / p.len().max(1) as f64;
                let data = p.iter().zip(&target.data).map(|(a, b)| scale * (a - b)).collect();
                vec![(*pred, like(*pred, data))]
            }
        };
        for (v, g) in &out {
            if g.shape != self.value(*v).shape {
                return Err(Error::Internal(format!("gradient shape {:?} for node {}", g.shape, v.0)));
            }
        }
        Ok(out)
    }
}
