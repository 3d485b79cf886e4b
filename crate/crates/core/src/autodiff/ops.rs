use super::conv;
use super::Saved;
use crate::error::{Error, Result};
use crate::tensor::{numel, Tensor};

/// The primitive set. Attributes travel inside the variant.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `[.., m, k] × [.., k, n]`, identical leading batch axes.
    MatMul,
    Add,
    Sub,
    Mul,
    /// Right operand's shape is a prefix of the left's; it is broadcast over
    /// the remaining trailing axes (channel rescaling `S ⊗ X`).
    MulChannel,
    /// Right operand's shape is a suffix of the left's.
    MulTrailing,
    /// Right operand's shape is a suffix of the left's (bias add).
    AddTrailing,
    Relu,
    Sigmoid,
    Sqrt,
    Exp,
    Log,
    Softmax,
    LogSoftmax,
    Mean { axis: usize },
    /// `[T, C, H, W]` against a per-channel kernel `[C, H, W]` → `[T, C]`.
    WeightedSpatialSum,
    /// `[N, Cin, H, W]` with weight `[Cout, Cin, kh, kw]` and optional bias `[Cout]`.
    Conv2d { stride: usize, padding: usize },
    /// Over the last axis with affine `gamma`, `beta` of that axis' length.
    LayerNorm { eps: f64 },
    Scale(f64),
    Concat { axis: usize },
    Reshape(Vec<usize>),
    Permute(Vec<usize>),
    /// Values of the maximum along the last axis; ties go to the lowest index.
    MaxLastAxis,
    /// Flat-index gather into a tensor of the given shape.
    Gather { indices: Vec<usize>, shape: Vec<usize> },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MulChannel => "mul_channel",
            Primitive::MulTrailing => "mul_trailing",
            Primitive::AddTrailing => "add_trailing",
            Primitive::Relu => "relu",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Sqrt => "sqrt",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::Softmax => "softmax",
            Primitive::LogSoftmax => "log_softmax",
            Primitive::Mean { .. } => "mean",
            Primitive::WeightedSpatialSum => "weighted_spatial_sum",
            Primitive::Conv2d { .. } => "conv2d",
            Primitive::LayerNorm { .. } => "layer_norm",
            Primitive::Scale(_) => "scale",
            Primitive::Concat { .. } => "concat",
            Primitive::Reshape(_) => "reshape",
            Primitive::Permute(_) => "permute",
            Primitive::MaxLastAxis => "max_last_axis",
            Primitive::Gather { .. } => "gather",
        }
    }

    fn arity(&self) -> Option<usize> {
        match self {
            Primitive::MatMul
            | Primitive::Add
            | Primitive::Sub
            | Primitive::Mul
            | Primitive::MulChannel
            | Primitive::MulTrailing
            | Primitive::AddTrailing
            | Primitive::WeightedSpatialSum => Some(2),
            Primitive::LayerNorm { .. } => Some(3),
            Primitive::Conv2d { .. } | Primitive::Concat { .. } => None,
            _ => Some(1),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const SQRT_FLOOR: f64 = 1e-12;

fn elementwise(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    a.map(f)
}

fn zip_with(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = numel(&shape[..axis]);
    let n = shape[axis];
    let inner = numel(&shape[axis + 1..]);
    (outer, n, inner)
}

fn last_axis(op: &'static str, x: &Tensor) -> Result<(usize, usize)> {
    match x.shape().last() {
        Some(&n) if n > 0 => Ok((x.len() / n, n)),
        _ => Err(Error::shape(op, x.shape(), &[])),
    }
}

fn batch_dims(op: &'static str, a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2] {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (k2, n) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    if k != k2 {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok((numel(&a.shape()[..ra - 2]), m, k, n))
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for d in (0..shape.len().saturating_sub(1)).rev() {
        s[d] = s[d + 1] * shape[d + 1];
    }
    s
}

fn permute_data(x: &Tensor, perm: &[usize]) -> Tensor {
    let in_shape = x.shape();
    let in_strides = strides(in_shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = x.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; out_shape.len()];
    let src = x.data();
    for _ in 0..total {
        let off: usize = idx.iter().zip(&src_strides).map(|(i, s)| i * s).sum();
        out.push(src[off]);
        for d in (0..idx.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, out).expect("permuted shape")
}

fn is_prefix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[..short.len()] == *short
}

fn is_suffix(short: &[usize], long: &[usize]) -> bool {
    short.len() <= long.len() && long[long.len() - short.len()..] == *short
}

pub(crate) fn forward(prim: &Primitive, xs: &[&Tensor]) -> Result<(Tensor, Saved)> {
    let op = prim.name();
    match prim.arity() {
        Some(n) if xs.len() != n => {
            return Err(Error::contract(format!("{op}: expected {n} inputs, got {}", xs.len())));
        }
        None if xs.is_empty() => {
            return Err(Error::contract(format!("{op}: no inputs")));
        }
        _ => {}
    }
    let plain = |t: Tensor| Ok((t, Saved::None));
    match prim {
        Primitive::MatMul => {
            let (a, b) = (xs[0], xs[1]);
            let (batch, m, k, n) = batch_dims(op, a, b)?;
            let mut out = vec![0.0; batch * m * n];
            for bi in 0..batch {
                let ad = &a.data()[bi * m * k..(bi + 1) * m * k];
                let bd = &b.data()[bi * k * n..(bi + 1) * k * n];
                let cd = &mut out[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let crow = &mut cd[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = ad[i * k + p];
                        let brow = &bd[p * n..(p + 1) * n];
                        for (c, &bv) in crow.iter_mut().zip(brow) {
                            *c += aip * bv;
                        }
                    }
                }
            }
            let mut shape = a.shape()[..a.rank() - 1].to_vec();
            shape.push(n);
            plain(Tensor::new(shape, out)?)
        }
        Primitive::Add => {
            same_shape(op, xs[0], xs[1])?;
            plain(zip_with(xs[0], xs[1], |a, b| a + b))
        }
        Primitive::Sub => {
            same_shape(op, xs[0], xs[1])?;
            plain(zip_with(xs[0], xs[1], |a, b| a - b))
        }
        Primitive::Mul => {
            same_shape(op, xs[0], xs[1])?;
            plain(zip_with(xs[0], xs[1], |a, b| a * b))
        }
        Primitive::MulChannel => {
            let (x, s) = (xs[0], xs[1]);
            if !is_prefix(s.shape(), x.shape()) || s.is_empty() {
                return Err(Error::shape(op, x.shape(), s.shape()));
            }
            let inner = x.len() / s.len();
            let data = x
                .data()
                .chunks(inner)
                .zip(s.data())
                .flat_map(|(chunk, &sv)| chunk.iter().map(move |&v| sv * v))
                .collect();
            plain(Tensor::new(x.shape(), data)?)
        }
        Primitive::MulTrailing | Primitive::AddTrailing => {
            let (x, b) = (xs[0], xs[1]);
            if !is_suffix(b.shape(), x.shape()) || b.is_empty() {
                return Err(Error::shape(op, x.shape(), b.shape()));
            }
            let bd = b.data();
            let mul = matches!(prim, Primitive::MulTrailing);
            let data = x
                .data()
                .chunks(bd.len())
                .flat_map(|row| {
                    row.iter()
                        .zip(bd)
                        .map(move |(&v, &w)| if mul { v * w } else { v + w })
                })
                .collect();
            plain(Tensor::new(x.shape(), data)?)
        }
        Primitive::Relu => plain(elementwise(xs[0], |v| if v > 0.0 { v } else { 0.0 })),
        Primitive::Sigmoid => plain(elementwise(xs[0], sigmoid)),
        Primitive::Sqrt => plain(elementwise(xs[0], f64::sqrt)),
        Primitive::Exp => plain(elementwise(xs[0], f64::exp)),
        Primitive::Log => plain(elementwise(xs[0], f64::ln)),
        Primitive::Softmax | Primitive::LogSoftmax => {
            let x = xs[0];
            let (_, n) = last_axis(op, x)?;
            let log = matches!(prim, Primitive::LogSoftmax);
            let mut out = Vec::with_capacity(x.len());
            for row in x.data().chunks(n) {
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = row.iter().map(|&v| (v - m).exp()).sum();
                if log {
                    let lz = z.ln();
                    out.extend(row.iter().map(|&v| v - m - lz));
                } else {
                    out.extend(row.iter().map(|&v| (v - m).exp() / z));
                }
            }
            plain(Tensor::new(x.shape(), out)?)
        }
        Primitive::Mean { axis } => {
            let x = xs[0];
            if *axis >= x.rank() || x.shape()[*axis] == 0 {
                return Err(Error::shape(op, x.shape(), &[*axis]));
            }
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut out = vec![0.0; outer * inner];
            let d = x.data();
            for o in 0..outer {
                let dst = &mut out[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let src = &d[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (a, &b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
                for a in dst.iter_mut() {
                    *a /= n as f64;
                }
            }
            let mut shape = x.shape().to_vec();
            shape.remove(*axis);
            plain(Tensor::new(shape, out)?)
        }
        Primitive::WeightedSpatialSum => {
            let (x, w) = (xs[0], xs[1]);
            if x.rank() != 4 || w.rank() != 3 || x.shape()[1..] != *w.shape() {
                return Err(Error::shape(op, x.shape(), w.shape()));
            }
            let (t, c) = (x.shape()[0], x.shape()[1]);
            let hw = w.shape()[1] * w.shape()[2];
            if hw == 0 {
                return Err(Error::EmptyFeature(format!("{op}: spatial size 0")));
            }
            let mut out = Vec::with_capacity(t * c);
            for ti in 0..t {
                for ci in 0..c {
                    let xs = &x.data()[(ti * c + ci) * hw..(ti * c + ci + 1) * hw];
                    let ws = &w.data()[ci * hw..(ci + 1) * hw];
                    out.push(xs.iter().zip(ws).map(|(a, b)| a * b).sum());
                }
            }
            plain(Tensor::new([t, c], out)?)
        }
        Primitive::Conv2d { stride, padding } => {
            let bias = match xs.len() {
                2 => None,
                3 => Some(xs[2]),
                n => return Err(Error::contract(format!("{op}: expected 2 or 3 inputs, got {n}"))),
            };
            plain(conv::forward(xs[0], xs[1], bias, *stride, *padding)?)
        }
        Primitive::LayerNorm { eps } => {
            let (x, g, b) = (xs[0], xs[1], xs[2]);
            let (_, n) = last_axis(op, x)?;
            if g.shape() != [n] || b.shape() != [n] {
                return Err(Error::shape(op, x.shape(), g.shape()));
            }
            let mut out = Vec::with_capacity(x.len());
            let mut xhat = Vec::with_capacity(x.len());
            let mut rstd = Vec::with_capacity(x.len() / n);
            for row in x.data().chunks(n) {
                let mu = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd.push(r);
                for (j, &v) in row.iter().enumerate() {
                    let h = (v - mu) * r;
                    xhat.push(h);
                    out.push(h * g.data()[j] + b.data()[j]);
                }
            }
            Ok((Tensor::new(x.shape(), out)?, Saved::Norm { xhat, rstd }))
        }
        Primitive::Scale(c) => plain(elementwise(xs[0], |v| v * c)),
        Primitive::Concat { axis } => {
            let first = xs[0];
            if *axis >= first.rank() {
                return Err(Error::shape(op, first.shape(), &[*axis]));
            }
            let mut total = 0;
            for x in xs {
                let ok = x.rank() == first.rank()
                    && x.shape()
                        .iter()
                        .zip(first.shape())
                        .enumerate()
                        .all(|(d, (a, b))| d == *axis || a == b);
                if !ok {
                    return Err(Error::shape(op, first.shape(), x.shape()));
                }
                total += x.shape()[*axis];
            }
            let (outer, _, inner) = split_axis(first.shape(), *axis);
            let mut out = Vec::with_capacity(outer * total * inner);
            for o in 0..outer {
                for x in xs {
                    let chunk = x.shape()[*axis] * inner;
                    out.extend_from_slice(&x.data()[o * chunk..(o + 1) * chunk]);
                }
            }
            let mut shape = first.shape().to_vec();
            shape[*axis] = total;
            plain(Tensor::new(shape, out)?)
        }
        Primitive::Reshape(shape) => {
            let x = xs[0];
            if numel(shape) != x.len() {
                return Err(Error::shape(op, x.shape(), shape));
            }
            plain(x.clone().reshape(shape.clone())?)
        }
        Primitive::Permute(perm) => {
            let x = xs[0];
            let mut seen = vec![false; x.rank()];
            let valid = perm.len() == x.rank()
                && perm.iter().all(|&p| p < seen.len() && !std::mem::replace(&mut seen[p], true));
            if !valid {
                return Err(Error::shape(op, x.shape(), perm));
            }
            plain(permute_data(x, perm))
        }
        Primitive::MaxLastAxis => {
            let x = xs[0];
            let (rows, n) = last_axis(op, x)?;
            let mut out = Vec::with_capacity(rows);
            let mut idx = Vec::with_capacity(rows);
            for (r, row) in x.data().chunks(n).enumerate() {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = j;
                    }
                }
                out.push(row[best]);
                idx.push(r * n + best);
            }
            let shape = x.shape()[..x.rank() - 1].to_vec();
            Ok((Tensor::new(shape, out)?, Saved::Indices(idx)))
        }
        Primitive::Gather { indices, shape } => {
            let x = xs[0];
            if numel(shape) != indices.len() {
                return Err(Error::shape(op, shape, &[indices.len()]));
            }
            if let Some(&bad) = indices.iter().find(|&&i| i >= x.len()) {
                return Err(Error::contract(format!(
                    "{op}: index {bad} out of range for {} elements",
                    x.len()
                )));
            }
            let data = indices.iter().map(|&i| x.data()[i]).collect();
            plain(Tensor::new(shape.clone(), data)?)
        }
    }
}

/// Adjoints. `needs[i]` is false when input `i` does not take a gradient and
/// its slot may be left `None`.
pub(crate) fn backward(
    prim: &Primitive,
    xs: &[&Tensor],
    out: &Tensor,
    saved: &Saved,
    g: &Tensor,
    needs: &[bool],
) -> Vec<Option<Tensor>> {
    let want = |i: usize| needs.get(i).copied().unwrap_or(false);
    match prim {
        Primitive::MatMul => {
            let (a, b) = (xs[0], xs[1]);
            let (batch, m, k, n) = batch_dims("matmul", a, b).expect("checked in forward");
            let mut ga = want(0).then(|| vec![0.0; a.len()]);
            let mut gb = want(1).then(|| vec![0.0; b.len()]);
            for bi in 0..batch {
                let ad = &a.data()[bi * m * k..(bi + 1) * m * k];
                let bd = &b.data()[bi * k * n..(bi + 1) * k * n];
                let gd = &g.data()[bi * m * n..(bi + 1) * m * n];
                if let Some(ga) = ga.as_mut() {
                    let ga = &mut ga[bi * m * k..(bi + 1) * m * k];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bd[p * n..(p + 1) * n];
                            ga[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                }
                if let Some(gb) = gb.as_mut() {
                    let gb = &mut gb[bi * k * n..(bi + 1) * k * n];
                    for i in 0..m {
                        let grow = &gd[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            for (dst, &gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *dst += aip * gv;
                            }
                        }
                    }
                }
            }
            vec![
                ga.map(|d| Tensor::new(a.shape(), d).unwrap()),
                gb.map(|d| Tensor::new(b.shape(), d).unwrap()),
            ]
        }
        Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
        Primitive::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
        Primitive::Mul => vec![
            want(0).then(|| zip_with(g, xs[1], |a, b| a * b)),
            want(1).then(|| zip_with(g, xs[0], |a, b| a * b)),
        ],
        Primitive::MulChannel => {
            let (x, s) = (xs[0], xs[1]);
            let inner = x.len() / s.len();
            let gx = want(0).then(|| {
                let data = g
                    .data()
                    .chunks(inner)
                    .zip(s.data())
                    .flat_map(|(chunk, &sv)| chunk.iter().map(move |&v| sv * v))
                    .collect();
                Tensor::new(x.shape(), data).unwrap()
            });
            let gs = want(1).then(|| {
                let data = g
                    .data()
                    .chunks(inner)
                    .zip(x.data().chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(a, b)| a * b).sum())
                    .collect();
                Tensor::new(s.shape(), data).unwrap()
            });
            vec![gx, gs]
        }
        Primitive::MulTrailing => {
            let (x, w) = (xs[0], xs[1]);
            let n = w.len();
            let gx = want(0).then(|| {
                let data = g
                    .data()
                    .chunks(n)
                    .flat_map(|row| row.iter().zip(w.data()).map(|(a, b)| a * b))
                    .collect();
                Tensor::new(x.shape(), data).unwrap()
            });
            let gw = want(1).then(|| {
                let mut acc = vec![0.0; n];
                for (grow, xrow) in g.data().chunks(n).zip(x.data().chunks(n)) {
                    for ((a, gv), xv) in acc.iter_mut().zip(grow).zip(xrow) {
                        *a += gv * xv;
                    }
                }
                Tensor::new(w.shape(), acc).unwrap()
            });
            vec![gx, gw]
        }
        Primitive::AddTrailing => {
            let b = xs[1];
            let n = b.len();
            let gb = want(1).then(|| {
                let mut acc = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                Tensor::new(b.shape(), acc).unwrap()
            });
            vec![want(0).then(|| g.clone()), gb]
        }
        Primitive::Relu => vec![Some(zip_with(g, xs[0], |gv, x| if x > 0.0 { gv } else { 0.0 }))],
        Primitive::Sigmoid => vec![Some(zip_with(g, out, |gv, y| gv * y * (1.0 - y)))],
        Primitive::Sqrt => vec![Some(zip_with(g, xs[0], |gv, x| {
            gv * 0.5 / x.max(SQRT_FLOOR).sqrt()
        }))],
        Primitive::Exp => vec![Some(zip_with(g, out, |gv, y| gv * y))],
        Primitive::Log => vec![Some(zip_with(g, xs[0], |gv, x| gv / x))],
        Primitive::Softmax => {
            let n = *out.shape().last().unwrap();
            let mut gx = Vec::with_capacity(out.len());
            for (grow, yrow) in g.data().chunks(n).zip(out.data().chunks(n)) {
                let dot: f64 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                gx.extend(grow.iter().zip(yrow).map(|(gv, y)| y * (gv - dot)));
            }
            vec![Some(Tensor::new(out.shape(), gx).unwrap())]
        }
        Primitive::LogSoftmax => {
            let n = *out.shape().last().unwrap();
            let mut gx = Vec::with_capacity(out.len());
            for (grow, lrow) in g.data().chunks(n).zip(out.data().chunks(n)) {
                let total: f64 = grow.iter().sum();
                gx.extend(grow.iter().zip(lrow).map(|(gv, l)| gv - l.exp() * total));
            }
            vec![Some(Tensor::new(out.shape(), gx).unwrap())]
        }
        Primitive::Mean { axis } => {
            let x = xs[0];
            let (outer, n, inner) = split_axis(x.shape(), *axis);
            let mut gx = vec![0.0; x.len()];
            let scale = 1.0 / n as f64;
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for j in 0..n {
                    let dst = &mut gx[(o * n + j) * inner..(o * n + j + 1) * inner];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = s * scale;
                    }
                }
            }
            vec![Some(Tensor::new(x.shape(), gx).unwrap())]
        }
        Primitive::WeightedSpatialSum => {
            let (x, w) = (xs[0], xs[1]);
            let (t, c) = (x.shape()[0], x.shape()[1]);
            let hw = w.len() / c;
            let mut gx = want(0).then(|| vec![0.0; x.len()]);
            let mut gw = want(1).then(|| vec![0.0; w.len()]);
            for ti in 0..t {
                for ci in 0..c {
                    let gv = g.data()[ti * c + ci];
                    let base = (ti * c + ci) * hw;
                    if let Some(gx) = gx.as_mut() {
                        for (d, &wv) in gx[base..base + hw].iter_mut().zip(&w.data()[ci * hw..]) {
                            *d = gv * wv;
                        }
                    }
                    if let Some(gw) = gw.as_mut() {
                        for (d, &xv) in gw[ci * hw..(ci + 1) * hw].iter_mut().zip(&x.data()[base..]) {
                            *d += gv * xv;
                        }
                    }
                }
            }
            vec![
                gx.map(|d| Tensor::new(x.shape(), d).unwrap()),
                gw.map(|d| Tensor::new(w.shape(), d).unwrap()),
            ]
        }
        Primitive::Conv2d { stride, padding } => {
            let (gx, gw, gb) = conv::backward(
                xs[0],
                xs[1],
                g,
                *stride,
                *padding,
                want(0),
                want(1),
                xs.len() == 3 && want(2),
            );
            let mut v = vec![gx, gw];
            if xs.len() == 3 {
                v.push(gb);
            }
            v
        }
        Primitive::LayerNorm { .. } => {
            let Saved::Norm { xhat, rstd } = saved else {
                unreachable!("layer_norm saves its statistics")
            };
            let (x, gamma) = (xs[0], xs[1]);
            let n = gamma.len();
            let mut gx = vec![0.0; x.len()];
            let mut gg = vec![0.0; n];
            let mut gb = vec![0.0; n];
            for (r, ((grow, hrow), dst)) in g
                .data()
                .chunks(n)
                .zip(xhat.chunks(n))
                .zip(gx.chunks_mut(n))
                .enumerate()
            {
                let mut mean_dh = 0.0;
                let mut mean_dh_h = 0.0;
                for j in 0..n {
                    gg[j] += grow[j] * hrow[j];
                    gb[j] += grow[j];
                    let dh = grow[j] * gamma.data()[j];
                    mean_dh += dh;
                    mean_dh_h += dh * hrow[j];
                }
                mean_dh /= n as f64;
                mean_dh_h /= n as f64;
                for j in 0..n {
                    let dh = grow[j] * gamma.data()[j];
                    dst[j] = rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                }
            }
            vec![
                Some(Tensor::new(x.shape(), gx).unwrap()),
                Some(Tensor::new([n], gg).unwrap()),
                Some(Tensor::new([n], gb).unwrap()),
            ]
        }
        Primitive::Scale(c) => vec![Some(g.map(|v| v * c))],
        Primitive::Concat { axis } => {
            let (outer, _, inner) = split_axis(out.shape(), *axis);
            let total = out.shape()[*axis];
            let mut offset = 0;
            xs.iter()
                .enumerate()
                .map(|(i, x)| {
                    let len = x.shape()[*axis];
                    let start = offset;
                    offset += len;
                    want(i).then(|| {
                        let mut d = Vec::with_capacity(x.len());
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            d.extend_from_slice(&g.data()[base..base + len * inner]);
                        }
                        Tensor::new(x.shape(), d).unwrap()
                    })
                })
                .collect()
        }
        Primitive::Reshape(_) => vec![Some(g.clone().reshape(xs[0].shape()).unwrap())],
        Primitive::Permute(perm) => {
            let mut inverse = vec![0; perm.len()];
            for (i, &p) in perm.iter().enumerate() {
                inverse[p] = i;
            }
            vec![Some(permute_data(g, &inverse))]
        }
        Primitive::MaxLastAxis => {
            let Saved::Indices(idx) = saved else {
                unreachable!("max saves its argmax")
            };
            let mut gx = vec![0.0; xs[0].len()];
            for (&i, &gv) in idx.iter().zip(g.data()) {
                gx[i] += gv;
            }
            vec![Some(Tensor::new(xs[0].shape(), gx).unwrap())]
        }
        Primitive::Gather { indices, .. } => {
            let mut gx = vec![0.0; xs[0].len()];
            for (&i, &gv) in indices.iter().zip(g.data()) {
                gx[i] += gv;
            }
            vec![Some(Tensor::new(xs[0].shape(), gx).unwrap())]
        }
    }
}
