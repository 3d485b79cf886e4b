//! Direct 2-D convolution, NCHW, square stride and zero padding.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(x: &Tensor, weight: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let bad = || Error::shape("conv2d", x.shape(), weight.shape());
        if x.rank() != 4 || weight.rank() != 4 || stride == 0 {
            return Err(bad());
        }
        let (n, cin, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (cout, cin_w, kh, kw) = (
            weight.shape()[0],
            weight.shape()[1],
            weight.shape()[2],
            weight.shape()[3],
        );
        if cin != cin_w || kh == 0 || kw == 0 || h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(bad());
        }
        Ok(Geometry {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (w + 2 * pad - kw) / stride + 1,
            stride,
            pad,
        })
    }

    /// Output index range `[lo, hi)` along one axis whose input coordinate
    /// `o * stride + k - pad` lands inside `[0, len)`.
    fn valid(&self, k: usize, len: usize, out_len: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let off = k as isize - self.pad as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let hi = ((len as isize - 1 - off).div_euclid(s) + 1).clamp(0, out_len as isize);
        (lo as usize, (hi as usize).max(lo as usize))
    }
}

impl Geometry {
    fn k(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold image `ni` into `col[k, p]`, `k = (ci, ky, kx)`, `p = (oy, ox)`.
    fn im2col(&self, xd: &[f64], ni: usize, col: &mut [f64]) {
        let plane_in = self.h * self.w;
        let p = self.p();
        col.fill(0.0);
        for ci in 0..self.cin {
            let src = &xd[(ni * self.cin + ci) * plane_in..(ni * self.cin + ci + 1) * plane_in];
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = self.valid(ky, self.h, self.ho);
                for kx in 0..self.kw {
                    let (ox_lo, ox_hi) = self.valid(kx, self.w, self.wo);
                    let row = &mut col[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let srow = &src[iy * self.w..(iy + 1) * self.w];
                        let drow = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        for ox in ox_lo..ox_hi {
                            drow[ox] = srow[ox * self.stride + kx - self.pad];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `gcol[k, p]` back onto image `ni` of `gx`.
    fn col2im(&self, gcol: &[f64], ni: usize, gx: &mut [f64]) {
        let plane_in = self.h * self.w;
        let p = self.p();
        for ci in 0..self.cin {
            let dst = &mut gx[(ni * self.cin + ci) * plane_in..(ni * self.cin + ci + 1) * plane_in];
            for ky in 0..self.kh {
                let (oy_lo, oy_hi) = self.valid(ky, self.h, self.ho);
                for kx in 0..self.kw {
                    let (ox_lo, ox_hi) = self.valid(kx, self.w, self.wo);
                    let row = &gcol[((ci * self.kh + ky) * self.kw + kx) * p..][..p];
                    for oy in oy_lo..oy_hi {
                        let iy = oy * self.stride + ky - self.pad;
                        let drow = &mut dst[iy * self.w..(iy + 1) * self.w];
                        let grow = &row[oy * self.wo..(oy + 1) * self.wo];
                        for ox in ox_lo..ox_hi {
                            drow[ox * self.stride + kx - self.pad] += grow[ox];
                        }
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn forward(
    x: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = Geometry::new(x, weight, stride, pad)?;
    if let Some(b) = bias {
        if b.shape() != [g.cout] {
            return Err(Error::shape("conv2d", weight.shape(), b.shape()));
        }
    }
    let (k, p) = (g.k(), g.p());
    let mut out = vec![0.0; g.n * g.cout * p];
    let mut col = vec![0.0; k * p];
    let wd = weight.data();
    for ni in 0..g.n {
        g.im2col(x.data(), ni, &mut col);
        for co in 0..g.cout {
            let dst = &mut out[(ni * g.cout + co) * p..][..p];
            if let Some(b) = bias {
                dst.fill(b.data()[co]);
            }
            for (ki, &wv) in wd[co * k..(co + 1) * k].iter().enumerate() {
                if wv != 0.0 {
                    axpy(dst, wv, &col[ki * p..(ki + 1) * p]);
                }
            }
        }
    }
    Tensor::new([g.n, g.cout, g.ho, g.wo], out)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward(
    x: &Tensor,
    weight: &Tensor,
    grad: &Tensor,
    stride: usize,
    pad: usize,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let g = Geometry::new(x, weight, stride, pad).expect("checked in forward");
    let (k, p) = (g.k(), g.p());
    let wd = weight.data();
    let gd = grad.data();
    let mut gx = want_x.then(|| vec![0.0; x.len()]);
    let mut gw = want_w.then(|| vec![0.0; weight.len()]);
    let mut gb = want_b.then(|| vec![0.0; g.cout]);
    let mut col = vec![0.0; if want_w { k * p } else { 0 }];
    let mut gcol = vec![0.0; if want_x { k * p } else { 0 }];

    for ni in 0..g.n {
        let gimg = &gd[ni * g.cout * p..(ni + 1) * g.cout * p];
        if let Some(gb) = gb.as_mut() {
            for (co, b) in gb.iter_mut().enumerate() {
                *b += gimg[co * p..(co + 1) * p].iter().sum::<f64>();
            }
        }
        if let Some(gw) = gw.as_mut() {
            g.im2col(x.data(), ni, &mut col);
            for co in 0..g.cout {
                let grow = &gimg[co * p..(co + 1) * p];
                for ki in 0..k {
                    gw[co * k + ki] += dot(grow, &col[ki * p..(ki + 1) * p]);
                }
            }
        }
        if let Some(gx) = gx.as_mut() {
            gcol.fill(0.0);
            for co in 0..g.cout {
                let grow = &gimg[co * p..(co + 1) * p];
                for (ki, &wv) in wd[co * k..(co + 1) * k].iter().enumerate() {
                    if wv != 0.0 {
                        axpy(&mut gcol[ki * p..(ki + 1) * p], wv, grow);
                    }
                }
            }
            g.col2im(&gcol, ni, gx);
        }
    }
    (
        gx.map(|d| Tensor::new(x.shape(), d).unwrap()),
        gw.map(|d| Tensor::new(weight.shape(), d).unwrap()),
        gb.map(|d| Tensor::new([g.cout], d).unwrap()),
    )
}
