//! Convolution, pooling and resampling kernels on single-item `Planes`.
//!
//! 3x3 convolutions use zero padding of one pixel and are lowered to GEMM
//! through an im2col buffer built a block of rows at a time.

use rand::Rng;

use crate::raster::Planes;

/// Target size (in values) of the im2col scratch buffer; blocks of whole rows
/// are chosen so the buffer stays near this size.
const BLOCK_VALUES: usize = 1 << 17;

/// `c = alpha * a * b + beta * c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // Bounds of the strided views, checked once so the raw call stays in range.
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    if k > 0 {
        assert!(last(m, k, rsa, csa) < a.len());
        assert!(last(k, n, rsb, csb) < b.len());
    }
    assert!(last(m, n, rsc, 1) < c.len());
    // SAFETY: every index touched by the kernel was bounds-checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    /// Kernel side, 1 or 3.
    pub k: usize,
    /// `[cout][cin][k][k]`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Self {
        assert!(k == 1 || k == 3, "only 1x1 and 3x3 kernels are supported");
        Self {
            cin,
            cout,
            k,
            weight: vec![0.0; cout * cin * k * k],
            bias: vec![0.0; cout],
        }
    }

    /// Weights uniform in `[-bound, bound]` with `bound = gain / sqrt(fan_in)`, zero bias.
    pub fn init_uniform(cin: usize, cout: usize, k: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let mut conv = Self::zeros(cin, cout, k);
        let bound = gain / ((cin * k * k) as f64).sqrt();
        for w in conv.weight.iter_mut() {
            *w = rng.random_range(-bound..=bound);
        }
        conv
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn forward(&self, x: &Planes) -> Planes {
        assert_eq!(x.channels, self.cin, "conv input channels");
        let mut out = correlate(&self.weight, self.cout, self.k, x);
        for (co, &b) in self.bias.iter().enumerate() {
            if b != 0.0 {
                out.plane_mut(co).iter_mut().for_each(|v| *v += b);
            }
        }
        out
    }

    /// Kernel of the adjoint map: `[cin][cout][k][k]` with spatially flipped taps.
    fn flipped_transpose(&self) -> Vec<f64> {
        let k2 = self.k * self.k;
        let mut t = vec![0.0; self.weight.len()];
        for co in 0..self.cout {
            for ci in 0..self.cin {
                let src = &self.weight[(co * self.cin + ci) * k2..][..k2];
                let dst = &mut t[(ci * self.cout + co) * k2..][..k2];
                for (i, &v) in src.iter().enumerate() {
                    dst[k2 - 1 - i] = v;
                }
            }
        }
        t
    }

    /// Accumulates parameter gradients into `gw`/`gb` and returns the input
    /// gradient when `need_input_grad` is set.
    pub fn backward(&self, x: &Planes, grad_out: &Planes, gw: &mut [f64], gb: &mut [f64], need_input_grad: bool) -> Option<Planes> {
        let (h, w) = (x.height, x.width);
        let hw = h * w;
        assert_eq!(grad_out.channels, self.cout);
        assert_eq!((grad_out.height, grad_out.width), (h, w));
        for (co, g) in gb.iter_mut().enumerate() {
            *g += grad_out.plane(co).iter().sum::<f64>();
        }
        if self.k == 1 {
            // gw (cout x cin) += grad_out (cout x hw) * x^T (hw x cin)
            gemm(self.cout, hw, self.cin, &grad_out.data, hw, 1, &x.data, 1, hw, 1.0, gw, self.cin);
            return need_input_grad.then(|| {
                let mut dx = Planes::zeros(self.cin, h, w);
                gemm(self.cin, self.cout, hw, &self.weight, 1, self.cin, &grad_out.data, hw, 1, 0.0, &mut dx.data, hw);
                dx
            });
        }
        let kk = self.patch();
        let rows = block_rows(kk, w);
        let mut cols = Vec::new();
        for y0 in (0..h).step_by(rows) {
            let y1 = (y0 + rows).min(h);
            let p = (y1 - y0) * w;
            im2col(x, y0, y1, &mut cols);
            // gw (cout x kk) += g (cout x p) * cols^T (p x kk)
            gemm(self.cout, p, kk, &grad_out.data[y0 * w..], hw, 1, &cols, 1, p, 1.0, gw, kk);
        }
        // The input gradient is a same-padded correlation of the output
        // gradient with the flipped, transposed kernel.
        need_input_grad.then(|| correlate(&self.flipped_transpose(), self.cin, 3, grad_out))
    }
}

/// Same-padded cross-correlation without bias: `weight` is `[cout][cin][k][k]`.
fn correlate(weight: &[f64], cout: usize, k: usize, x: &Planes) -> Planes {
    let (cin, h, w) = (x.channels, x.height, x.width);
    let hw = h * w;
    let mut out = Planes::zeros(cout, h, w);
    if k == 1 {
        gemm(cout, cin, hw, weight, cin, 1, &x.data, hw, 1, 0.0, &mut out.data, hw);
        return out;
    }
    let kk = cin * 9;
    let rows = block_rows(kk, w);
    let mut cols = Vec::new();
    for y0 in (0..h).step_by(rows) {
        let y1 = (y0 + rows).min(h);
        let p = (y1 - y0) * w;
        im2col(x, y0, y1, &mut cols);
        gemm(cout, kk, p, weight, kk, 1, &cols, p, 1, 0.0, &mut out.data[y0 * w..], hw);
    }
    out
}

fn block_rows(patch: usize, width: usize) -> usize {
    (BLOCK_VALUES / (patch * width)).max(1)
}

/// Fills `cols` with the `(cin * 9) x ((y1 - y0) * w)` patch matrix of rows `y0..y1`.
fn im2col(x: &Planes, y0: usize, y1: usize, cols: &mut Vec<f64>) {
    let (h, w) = (x.height, x.width);
    let p = (y1 - y0) * w;
    cols.clear();
    cols.resize(x.channels * 9 * p, 0.0);
    for ci in 0..x.channels {
        let plane = x.plane(ci);
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * p..][..p];
                for y in y0..y1 {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..][..w];
                    let dst = &mut row[(y - y0) * w..][..w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
}

pub fn relu_inplace(x: &mut Planes) {
    x.data.iter_mut().for_each(|v| {
        if *v < 0.0 {
            *v = 0.0
        }
    });
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward_inplace(grad: &mut Planes, out: &Planes) {
    grad.data.iter_mut().zip(&out.data).for_each(|(g, &o)| {
        if o <= 0.0 {
            *g = 0.0
        }
    });
}

/// 2x2 max pooling with stride 2; also returns the winning offset (0..4) per output.
pub fn maxpool2(x: &Planes) -> (Planes, Vec<u8>) {
    let (h, w) = (x.height / 2, x.width / 2);
    let mut out = Planes::zeros(x.channels, h, w);
    let mut arg = vec![0u8; x.channels * h * w];
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        let a = &mut arg[c * h * w..(c + 1) * h * w];
        for r in 0..h {
            let top = &src[2 * r * x.width..][..x.width];
            let bot = &src[(2 * r + 1) * x.width..][..x.width];
            for col in 0..w {
                let cand = [top[2 * col], top[2 * col + 1], bot[2 * col], bot[2 * col + 1]];
                let mut best = 0;
                for i in 1..4 {
                    if cand[i] > cand[best] {
                        best = i;
                    }
                }
                dst[r * w + col] = cand[best];
                a[r * w + col] = best as u8;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward(grad_out: &Planes, arg: &[u8], in_h: usize, in_w: usize) -> Planes {
    let (h, w) = (grad_out.height, grad_out.width);
    let mut dx = Planes::zeros(grad_out.channels, in_h, in_w);
    for c in 0..grad_out.channels {
        let g = grad_out.plane(c);
        let a = &arg[c * h * w..(c + 1) * h * w];
        let d = dx.plane_mut(c);
        for r in 0..h {
            for col in 0..w {
                let i = r * w + col;
                let (dr, dc) = ((a[i] / 2) as usize, (a[i] % 2) as usize);
                d[(2 * r + dr) * in_w + 2 * col + dc] += g[i];
            }
        }
    }
    dx
}

/// Nearest-neighbour x2 enlargement.
pub fn upsample2(x: &Planes) -> Planes {
    let (h, w) = (x.height * 2, x.width * 2);
    let mut out = Planes::zeros(x.channels, h, w);
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = out.plane_mut(c);
        for r in 0..h {
            let s = &src[(r / 2) * x.width..][..x.width];
            let d = &mut dst[r * w..][..w];
            for (col, v) in d.iter_mut().enumerate() {
                *v = s[col / 2];
            }
        }
    }
    out
}

/// Adjoint of [`upsample2`]: sums each 2x2 block.
pub fn upsample2_backward(grad: &Planes) -> Planes {
    let (h, w) = (grad.height / 2, grad.width / 2);
    let mut out = Planes::zeros(grad.channels, h, w);
    for c in 0..grad.channels {
        let g = grad.plane(c);
        let d = out.plane_mut(c);
        for r in 0..grad.height {
            let row = &g[r * grad.width..][..grad.width];
            let dst = &mut d[(r / 2) * w..][..w];
            for (col, v) in row.iter().enumerate() {
                dst[col / 2] += v;
            }
        }
    }
    out
}

pub fn concat_channels(a: &Planes, b: &Planes) -> Planes {
    assert_eq!((a.height, a.width), (b.height, b.width));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Planes {
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    }
}

pub fn split_channels(x: Planes, first: usize) -> (Planes, Planes) {
    let n = first * x.plane_len();
    let (h, w) = (x.height, x.width);
    let mut data = x.data;
    let rest = data.split_off(n);
    (
        Planes {
            channels: first,
            height: h,
            width: w,
            data,
        },
        Planes {
            channels: rest.len() / (h * w),
            height: h,
            width: w,
            data: rest,
        },
    )
}
