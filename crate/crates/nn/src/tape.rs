//! Reverse-mode automatic differentiation over `[C, H, W]` feature maps.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! then walks it in reverse. Shape errors inside the tape are programming
//! errors and panic; public entry points validate inputs before recording.

use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;

use crate::tensor::Shape;

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Conv { x: Var, w: Var, b: Var, kernel: usize, dilation: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    AvgPool2(Var),
    Upsample2(Var),
    Softmax(Var),
    FuseUnnormalized(Var, Var),
    L1 { x: Var, target: Vec<f64>, scale: f64 },
    Sum(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    op: Op,
    shape: Shape,
    value: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar with respect to every node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    /// `None` when the node does not influence the root.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        let g = &self.grads[v.0];
        (!g.is_empty()).then_some(g.as_slice())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let n = &self.nodes[v.0];
        assert_eq!(n.value.len(), 1, "not a scalar");
        n.value[0]
    }

    fn push(&mut self, op: Op, shape: Shape, value: Vec<f64>) -> Var {
        debug_assert_eq!(shape.len(), value.len());
        self.nodes.push(Node { op, shape, value });
        Var(self.nodes.len() - 1)
    }

    /// A leaf: data, state initializers and parameters alike.
    pub fn leaf(&mut self, shape: Shape, value: Vec<f64>) -> Var {
        assert_eq!(shape.len(), value.len(), "leaf shape");
        self.push(Op::Leaf, shape, value)
    }

    pub fn zeros(&mut self, shape: Shape) -> Var {
        self.push(Op::Leaf, shape, vec![0.0; shape.len()])
    }

    /// Same-size zero-padded convolution. `w` holds `[out, in, k, k]`, `b` holds `[out]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, kernel: usize, dilation: usize) -> Var {
        let xs = self.shape(x);
        let cout = self.nodes[b.0].value.len();
        let kk = xs.channels * kernel * kernel;
        assert!(kernel % 2 == 1 && dilation >= 1, "kernel must be odd, dilation >= 1");
        assert_eq!(self.nodes[w.0].value.len(), cout * kk, "conv weight size");
        let hw = xs.plane();
        let mut cols = vec![0.0; kk * hw];
        im2col(&self.nodes[x.0].value, xs, kernel, dilation, &mut cols);
        let mut out = vec![0.0; cout * hw];
        let wv = &self.nodes[w.0].value;
        // SAFETY: the slices cover exactly m·k, k·n and m·n elements at the given strides.
        unsafe {
            matrixmultiply::dgemm(
                cout,
                kk,
                hw,
                1.0,
                wv.as_ptr(),
                kk as isize,
                1,
                cols.as_ptr(),
                hw as isize,
                1,
                0.0,
                out.as_mut_ptr(),
                hw as isize,
                1,
            );
        }
        for (o, &bias) in out.chunks_exact_mut(hw).zip(&self.nodes[b.0].value) {
            o.iter_mut().for_each(|v| *v += bias);
        }
        self.push(Op::Conv { x, w, b, kernel, dilation }, xs.with_channels(cout), out)
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let s = self.shape(a);
        assert_eq!(s, self.shape(b), "elementwise shapes");
        let value = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(op, s, value)
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let s = self.shape(a);
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op, s, value)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    /// Stacks along channels; spatial sizes must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let first = self.shape(parts[0]);
        let mut channels = 0;
        let mut value = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            assert_eq!((s.height, s.width), (first.height, first.width), "concat spatial size");
            channels += s.channels;
            value.extend_from_slice(self.value(p));
        }
        self.push(Op::Concat(parts.to_vec()), first.with_channels(channels), value)
    }

    /// Channels `start..start + len`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let s = self.shape(x);
        assert!(start + len <= s.channels, "slice out of range");
        let p = s.plane();
        let value = self.value(x)[start * p..(start + len) * p].to_vec();
        self.push(Op::Slice { x, start }, s.with_channels(len), value)
    }

    /// 2×2 mean pooling with stride 2; height and width must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        assert!(s.height % 2 == 0 && s.width % 2 == 0, "pooling needs even sizes");
        let out = Shape::new(s.channels, s.height / 2, s.width / 2);
        let xv = self.value(x);
        let mut value = vec![0.0; out.len()];
        for c in 0..s.channels {
            for y in 0..out.height {
                for xx in 0..out.width {
                    let i = c * s.plane() + 2 * y * s.width + 2 * xx;
                    value[c * out.plane() + y * out.width + xx] =
                        0.25 * (xv[i] + xv[i + 1] + xv[i + s.width] + xv[i + s.width + 1]);
                }
            }
        }
        self.push(Op::AvgPool2(x), out, value)
    }

    /// Nearest-neighbour doubling of height and width.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let out = Shape::new(s.channels, s.height * 2, s.width * 2);
        let xv = self.value(x);
        let mut value = vec![0.0; out.len()];
        for c in 0..s.channels {
            for y in 0..out.height {
                for xx in 0..out.width {
                    value[c * out.plane() + y * out.width + xx] = xv[c * s.plane() + (y / 2) * s.width + xx / 2];
                }
            }
        }
        self.push(Op::Upsample2(x), out, value)
    }

    /// Per-cell normalized exponential across channels.
    pub fn softmax(&mut self, x: Var) -> Var {
        let s = self.shape(x);
        let (p, xv) = (s.plane(), self.value(x));
        let mut value = vec![0.0; s.len()];
        for i in 0..p {
            let max = (0..s.channels).map(|c| xv[c * p + i]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for c in 0..s.channels {
                let e = (xv[c * p + i] - max).exp();
                value[c * p + i] = e;
                total += e;
            }
            for c in 0..s.channels {
                value[c * p + i] /= total;
            }
        }
        self.push(Op::Softmax(x), s, value)
    }

    /// Unnormalized Dempster combination of two `(m_o, m_f)` maps, giving `(u_o, u_f)`.
    pub fn fuse_unnormalized(&mut self, a: Var, b: Var) -> Var {
        let s = self.shape(a);
        assert_eq!(s, self.shape(b), "fusion shapes");
        assert_eq!(s.channels, 2, "fusion takes (m_o, m_f)");
        let p = s.plane();
        let (av, bv) = (self.value(a), self.value(b));
        let mut value = vec![0.0; s.len()];
        for i in 0..p {
            let (ao, af, bo, bf) = (av[i], av[p + i], bv[i], bv[p + i]);
            let (aof, bof) = (1.0 - ao - af, 1.0 - bo - bf);
            value[i] = ao * bo + (ao * bof + aof * bo);
            value[p + i] = af * bf + (af * bof + aof * bf);
        }
        self.push(Op::FuseUnnormalized(a, b), s, value)
    }

    /// `scale · Σ |x − target|`, a scalar.
    pub fn l1(&mut self, x: Var, target: &[f64], scale: f64) -> Var {
        assert_eq!(self.value(x).len(), target.len(), "l1 target size");
        let total: f64 = self.value(x).iter().zip(target).map(|(&a, &t)| (a - t).abs()).sum();
        let op = Op::L1 { x, target: target.to_vec(), scale };
        self.push(op, Shape::new(1, 1, 1), vec![scale * total])
    }

    /// Sum of scalars.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.scalar(p)).sum();
        self.push(Op::Sum(parts.to_vec()), Shape::new(1, 1, 1), vec![total])
    }

    /// Hash of the side every kink (`relu`, `|·|`) was evaluated on.
    ///
    /// Two passes with equal signatures lie in the same smooth piece, which is
    /// what a finite-difference comparison needs.
    pub fn kink_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        let side = |v: f64| -> u8 {
            if v > 0.0 {
                2
            } else if v < 0.0 {
                0
            } else {
                1
            }
        };
        for n in &self.nodes {
            match &n.op {
                Op::Relu(a) => self.value(*a).iter().for_each(|&v| h.write_u8(side(v))),
                Op::L1 { x, target, .. } => {
                    self.value(*x).iter().zip(target).for_each(|(&v, &t)| h.write_u8(side(v - t)))
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Gradients of the scalar `root` with respect to every recorded node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        assert_eq!(self.nodes[root.0].value.len(), 1, "backward needs a scalar root");
        grads[root.0] = vec![1.0];
        for id in (0..=root.0).rev() {
            if grads[id].is_empty() {
                continue;
            }
            let g = std::mem::take(&mut grads[id]);
            let node = &self.nodes[id];
            self.propagate(node, &g, &mut grads);
            grads[id] = g;
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Vec<f64>]) {
        macro_rules! slot {
            ($v:expr) => {
                accumulator(grads, $v, self.nodes[$v.0].value.len())
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                slot!(*a).iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                slot!(*b).iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            Op::Sub(a, b) => {
                slot!(*a).iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
                slot!(*b).iter_mut().zip(g).for_each(|(d, &gi)| *d -= gi);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = slot!(*a);
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
                let db = slot!(*b);
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
            Op::Sigmoid(a) => {
                let d = slot!(*a);
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * y * (1.0 - y);
                }
            }
            Op::Tanh(a) => {
                let d = slot!(*a);
                for ((d, &gi), &y) in d.iter_mut().zip(g).zip(&node.value) {
                    *d += gi * (1.0 - y * y);
                }
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let d = slot!(*a);
                for ((d, &gi), &x) in d.iter_mut().zip(g).zip(av) {
                    if x > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let d = slot!(p);
                    let n = d.len();
                    d.iter_mut().zip(&g[off..off + n]).for_each(|(d, &gi)| *d += gi);
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let off = start * node.shape.plane();
                let d = slot!(*x);
                d[off..off + g.len()].iter_mut().zip(g).for_each(|(d, &gi)| *d += gi);
            }
            Op::AvgPool2(x) => {
                let s = self.shape(*x);
                let o = node.shape;
                let d = slot!(*x);
                for c in 0..o.channels {
                    for y in 0..o.height {
                        for xx in 0..o.width {
                            let gi = 0.25 * g[c * o.plane() + y * o.width + xx];
                            let i = c * s.plane() + 2 * y * s.width + 2 * xx;
                            d[i] += gi;
                            d[i + 1] += gi;
                            d[i + s.width] += gi;
                            d[i + s.width + 1] += gi;
                        }
                    }
                }
            }
            Op::Upsample2(x) => {
                let s = self.shape(*x);
                let o = node.shape;
                let d = slot!(*x);
                for c in 0..o.channels {
                    for y in 0..o.height {
                        for xx in 0..o.width {
                            d[c * s.plane() + (y / 2) * s.width + xx / 2] += g[c * o.plane() + y * o.width + xx];
                        }
                    }
                }
            }
            Op::Softmax(x) => {
                let s = node.shape;
                let (p, y) = (s.plane(), &node.value);
                let d = slot!(*x);
                for i in 0..p {
                    let dot: f64 = (0..s.channels).map(|c| y[c * p + i] * g[c * p + i]).sum();
                    for c in 0..s.channels {
                        d[c * p + i] += y[c * p + i] * (g[c * p + i] - dot);
                    }
                }
            }
            Op::FuseUnnormalized(a, b) => {
                let p = node.shape.plane();
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = slot!(*a);
                for i in 0..p {
                    let (bo, bf) = (bv[i], bv[p + i]);
                    let bof = 1.0 - bo - bf;
                    let (go, gf) = (g[i], g[p + i]);
                    da[i] += go * bof - gf * bf;
                    da[p + i] += gf * bof - go * bo;
                }
                let db = slot!(*b);
                for i in 0..p {
                    let (ao, af) = (av[i], av[p + i]);
                    let aof = 1.0 - ao - af;
                    let (go, gf) = (g[i], g[p + i]);
                    db[i] += go * aof - gf * af;
                    db[p + i] += gf * aof - go * ao;
                }
            }
            Op::L1 { x, target, scale } => {
                let xv = self.value(*x);
                let gs = g[0] * scale;
                let d = slot!(*x);
                for ((d, &v), &t) in d.iter_mut().zip(xv).zip(target) {
                    let diff = v - t;
                    if diff > 0.0 {
                        *d += gs;
                    } else if diff < 0.0 {
                        *d -= gs;
                    }
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    slot!(p)[0] += g[0];
                }
            }
            Op::Conv { x, w, b, kernel, dilation } => {
                let xs = self.shape(*x);
                let hw = xs.plane();
                let cout = node.shape.channels;
                let kk = xs.channels * kernel * kernel;
                let db = slot!(*b);
                for (d, gc) in db.iter_mut().zip(g.chunks_exact(hw)) {
                    *d += gc.iter().sum::<f64>();
                }
                let mut cols = vec![0.0; kk * hw];
                im2col(self.value(*x), xs, *kernel, *dilation, &mut cols);
                let dw = slot!(*w);
                // SAFETY: dW[cout, kk] += dOut[cout, hw] · colsᵀ[hw, kk].
                unsafe {
                    matrixmultiply::dgemm(
                        cout,
                        hw,
                        kk,
                        1.0,
                        g.as_ptr(),
                        hw as isize,
                        1,
                        cols.as_ptr(),
                        1,
                        hw as isize,
                        1.0,
                        dw.as_mut_ptr(),
                        kk as isize,
                        1,
                    );
                }
                let wv = self.value(*w);
                // SAFETY: dcols[kk, hw] = Wᵀ[kk, cout] · dOut[cout, hw]; `cols` is reused as output.
                unsafe {
                    matrixmultiply::dgemm(
                        kk,
                        cout,
                        hw,
                        1.0,
                        wv.as_ptr(),
                        1,
                        kk as isize,
                        g.as_ptr(),
                        hw as isize,
                        1,
                        0.0,
                        cols.as_mut_ptr(),
                        hw as isize,
                        1,
                    );
                }
                col2im(&cols, xs, *kernel, *dilation, slot!(*x));
            }
        }
    }
}

/// Gradient buffer of `v`, allocated on first use.
fn accumulator(grads: &mut [Vec<f64>], v: Var, len: usize) -> &mut [f64] {
    let slot = &mut grads[v.0];
    if slot.is_empty() {
        *slot = vec![0.0; len];
    }
    slot
}

/// Valid output range `[lo, hi)` along one axis for a tap offset.
fn tap_range(offset: isize, n: usize) -> (usize, usize) {
    let lo = (-offset).max(0) as usize;
    let hi = (n as isize - offset).clamp(0, n as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(x: &[f64], s: Shape, kernel: usize, dilation: usize, cols: &mut [f64]) {
    let (h, w, hw) = (s.height, s.width, s.plane());
    let pad = (dilation * (kernel - 1) / 2) as isize;
    for ci in 0..s.channels {
        let src = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..kernel {
            let oy = (ky * dilation) as isize - pad;
            let (ylo, yhi) = tap_range(oy, h);
            for kx in 0..kernel {
                let ox = (kx * dilation) as isize - pad;
                let (xlo, xhi) = tap_range(ox, w);
                let row = (ci * kernel + ky) * kernel + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                dst.fill(0.0);
                for y in ylo..yhi {
                    let sy = (y as isize + oy) as usize;
                    let sx0 = (xlo as isize + ox) as usize;
                    dst[y * w + xlo..y * w + xhi].copy_from_slice(&src[sy * w + sx0..sy * w + sx0 + (xhi - xlo)]);
                }
            }
        }
    }
}

fn col2im(cols: &[f64], s: Shape, kernel: usize, dilation: usize, dx: &mut [f64]) {
    let (h, w, hw) = (s.height, s.width, s.plane());
    let pad = (dilation * (kernel - 1) / 2) as isize;
    for ci in 0..s.channels {
        let dst = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..kernel {
            let oy = (ky * dilation) as isize - pad;
            let (ylo, yhi) = tap_range(oy, h);
            for kx in 0..kernel {
                let ox = (kx * dilation) as isize - pad;
                let (xlo, xhi) = tap_range(ox, w);
                let row = (ci * kernel + ky) * kernel + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for y in ylo..yhi {
                    let sy = (y as isize + oy) as usize;
                    let sx0 = (xlo as isize + ox) as usize;
                    let d = &mut dst[sy * w + sx0..sy * w + sx0 + (xhi - xlo)];
                    d.iter_mut().zip(&src[y * w + xlo..y * w + xhi]).for_each(|(d, &v)| *d += v);
                }
            }
        }
    }
}
