//! Differentiable ops over `Tensor`.
//!
//! Backward closures read parent values at sweep time instead of cloning
//! them at forward time; conv2d re-derives its im2col buffer in the backward
//! pass for the same reason. Inside a closure, all parent gradients are
//! computed into local buffers before any accumulation, so aliased parents
//! (e.g. `mul(x, x)`) stay sound.

use std::cell::RefCell;
use std::rc::Rc;

use super::tensor::Tensor;
use crate::{Error, Result};

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Vec<usize>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(sa)
}

fn dims2(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    let s = t.shape();
    if s.len() != 2 {
        return Err(shape_err(op, format!("expected 2-d, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

fn dims4(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let s = t.shape();
    if s.len() != 4 {
        return Err(shape_err(op, format!("expected 4-d, got {s:?}")));
    }
    Ok((s[0], s[1], s[2], s[3]))
}

// ---------------------------------------------------------------------------
// GEMM kernels. All accumulate (`out +=`), row-major, and keep the innermost
// loop over contiguous slices so it vectorizes.

/// out[m,n] += a[m,k] * b[k,n]
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T (row-by-row dot products)
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[m,n] += a[k,m]^T * b[k,n]
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = same_shape("add", a, b)?;
    let data: Vec<f64> = {
        let (ia, ib) = (a.0.borrow(), b.0.borrow());
        ia.data.iter().zip(&ib.data).map(|(x, y)| x + y).collect()
    };
    Ok(Tensor::from_op(
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            parents[0].accumulate(g);
            parents[1].accumulate(g);
        }),
    ))
}

/// Hadamard product.
pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let shape = same_shape("mul", a, b)?;
    let data: Vec<f64> = {
        let (ia, ib) = (a.0.borrow(), b.0.borrow());
        ia.data.iter().zip(&ib.data).map(|(x, y)| x * y).collect()
    };
    Ok(Tensor::from_op(
        data,
        shape,
        vec![a.clone(), b.clone()],
        Box::new(|g, parents| {
            let da: Vec<f64> = {
                let ib = parents[1].0.borrow();
                g.iter().zip(&ib.data).map(|(gv, y)| gv * y).collect()
            };
            let db: Vec<f64> = {
                let ia = parents[0].0.borrow();
                g.iter().zip(&ia.data).map(|(gv, x)| gv * x).collect()
            };
            parents[0].accumulate(&da);
            parents[1].accumulate(&db);
        }),
    ))
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    let data: Vec<f64> = a.0.borrow().data.iter().map(|x| x * c).collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone()],
        Box::new(move |g, parents| {
            let da: Vec<f64> = g.iter().map(|gv| gv * c).collect();
            parents[0].accumulate(&da);
        }),
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    let data: Vec<f64> = a.0.borrow().data.iter().map(|&x| x.max(0.0)).collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone()],
        Box::new(|g, parents| {
            let da: Vec<f64> = {
                let ia = parents[0].0.borrow();
                g.iter().zip(&ia.data).map(|(gv, &x)| if x > 0.0 { *gv } else { 0.0 }).collect()
            };
            parents[0].accumulate(&da);
        }),
    )
}

/// Shifted softplus: log(0.5 e^x + 0.5) = softplus(x) - ln 2, with ssp(0) = 0
/// exactly. Evaluated in overflow-safe form.
pub fn ssp(a: &Tensor) -> Tensor {
    fn f(x: f64) -> f64 {
        x.max(0.0) + (-x.abs()).exp().ln_1p() - std::f64::consts::LN_2
    }
    fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }
    let data: Vec<f64> = a.0.borrow().data.iter().map(|&x| f(x)).collect();
    Tensor::from_op(
        data,
        a.shape(),
        vec![a.clone()],
        Box::new(|g, parents| {
            let da: Vec<f64> = {
                let ia = parents[0].0.borrow();
                g.iter().zip(&ia.data).map(|(gv, &x)| gv * sigmoid(x)).collect()
            };
            parents[0].accumulate(&da);
        }),
    )
}

pub fn sum_all(a: &Tensor) -> Result<Tensor> {
    let total: f64 = a.0.borrow().data.iter().sum();
    Ok(Tensor::from_op(
        vec![total],
        vec![1],
        vec![a.clone()],
        Box::new(|g, parents| {
            let da = vec![g[0]; parents[0].numel()];
            parents[0].accumulate(&da);
        }),
    ))
}

pub fn reshape(a: &Tensor, new_shape: &[usize]) -> Result<Tensor> {
    let numel: usize = new_shape.iter().product();
    if numel != a.numel() {
        return Err(shape_err("reshape", format!("{:?} -> {:?}", a.shape(), new_shape)));
    }
    Ok(Tensor::from_op(
        a.value(),
        new_shape.to_vec(),
        vec![a.clone()],
        Box::new(|g, parents| parents[0].accumulate(g)),
    ))
}

// ---------------------------------------------------------------------------
// Row selection / stacking (graph plumbing)

/// Gather rows of a [N, D] tensor; duplicate indices are allowed and their
/// gradients add up.
pub fn rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (n, d) = dims2("rows", a)?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
        return Err(shape_err("rows", format!("index {bad} out of {n}")));
    }
    let data: Vec<f64> = {
        let ia = a.0.borrow();
        let mut out = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            out.extend_from_slice(&ia.data[i * d..(i + 1) * d]);
        }
        out
    };
    let idx = idx.to_vec();
    Ok(Tensor::from_op(
        data,
        vec![idx.len(), d],
        vec![a.clone()],
        Box::new(move |g, parents| {
            let mut da = vec![0.0; parents[0].numel()];
            for (r, &i) in idx.iter().enumerate() {
                for (dst, src) in da[i * d..(i + 1) * d].iter_mut().zip(&g[r * d..(r + 1) * d]) {
                    *dst += src;
                }
            }
            parents[0].accumulate(&da);
        }),
    ))
}

/// Stack 2-d tensors with equal column counts along rows.
pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(shape_err("concat_rows", "no inputs".into()));
    }
    let (_, d) = dims2("concat_rows", &parts[0])?;
    let mut total = 0;
    let mut row_counts = Vec::with_capacity(parts.len());
    for p in parts {
        let (ni, di) = dims2("concat_rows", p)?;
        if di != d {
            return Err(shape_err("concat_rows", format!("column mismatch {di} vs {d}")));
        }
        row_counts.push(ni);
        total += ni;
    }
    let mut data = Vec::with_capacity(total * d);
    for p in parts {
        data.extend_from_slice(&p.0.borrow().data);
    }
    Ok(Tensor::from_op(
        data,
        vec![total, d],
        parts.to_vec(),
        Box::new(move |g, parents| {
            let mut offset = 0;
            for (p, &ni) in parents.iter().zip(&row_counts) {
                p.accumulate(&g[offset..offset + ni * d]);
                offset += ni * d;
            }
        }),
    ))
}

/// Multiply by a constant matrix: out[m, d] = a[m, n] * x[n, d]. Used to
/// aggregate per-edge messages per node in one op.
pub fn matmul_const(a: Vec<f64>, m: usize, x: &Tensor) -> Result<Tensor> {
    let (n, d) = dims2("matmul_const", x)?;
    if a.len() != m * n {
        return Err(shape_err("matmul_const", format!("matrix {} vs {}x{}", a.len(), m, n)));
    }
    let mut data = vec![0.0; m * d];
    gemm_nn(&a, &x.0.borrow().data, m, n, d, &mut data);
    Ok(Tensor::from_op(
        data,
        vec![m, d],
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut dx = vec![0.0; n * d];
            gemm_tn(&a, g, n, m, d, &mut dx);
            parents[0].accumulate(&dx);
        }),
    ))
}

// ---------------------------------------------------------------------------
// Linear

/// x[n, din] * w[dout, din]^T + b[dout]
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, din) = dims2("linear", x)?;
    let (dout, din_w) = dims2("linear", w)?;
    if din != din_w {
        return Err(shape_err("linear", format!("x has {din} features, w expects {din_w}")));
    }
    if let Some(bias) = b {
        if bias.shape() != [dout] {
            return Err(shape_err("linear", format!("bias {:?} vs dout {dout}", bias.shape())));
        }
    }
    let mut data = vec![0.0; n * dout];
    gemm_nt(&x.0.borrow().data, &w.0.borrow().data, n, din, dout, &mut data);
    if let Some(bias) = b {
        let ib = bias.0.borrow();
        for row in data.chunks_mut(dout) {
            for (y, bv) in row.iter_mut().zip(&ib.data) {
                *y += bv;
            }
        }
    }
    let mut parents = vec![x.clone(), w.clone()];
    if let Some(bias) = b {
        parents.push(bias.clone());
    }
    Ok(Tensor::from_op(
        data,
        vec![n, dout],
        parents,
        Box::new(move |g, parents| {
            let dx = if parents[0].requires_grad() {
                let iw = parents[1].0.borrow();
                let mut dx = vec![0.0; n * din];
                gemm_nn(g, &iw.data, n, dout, din, &mut dx);
                Some(dx)
            } else {
                None
            };
            let dw = {
                let ix = parents[0].0.borrow();
                let mut dw = vec![0.0; dout * din];
                gemm_tn(g, &ix.data, dout, n, din, &mut dw);
                dw
            };
            let db = if parents.len() == 3 {
                let mut db = vec![0.0; dout];
                for row in g.chunks(dout) {
                    for (acc, gv) in db.iter_mut().zip(row) {
                        *acc += gv;
                    }
                }
                Some(db)
            } else {
                None
            };
            if let Some(dx) = dx {
                parents[0].accumulate(&dx);
            }
            parents[1].accumulate(&dw);
            if let Some(db) = db {
                parents[2].accumulate(&db);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// Conv2d (3x3, stride 1, zero padding 1) via im2col + GEMM

/// cols[(c*3+ky)*3+kx, oy*w+ox] = x[c, oy+ky-1, ox+kx-1] (zero outside).
fn im2col3(x: &[f64], c: usize, h: usize, w: usize, cols: &mut [f64]) {
    let hw = h * w;
    debug_assert_eq!(x.len(), c * hw);
    debug_assert_eq!(cols.len(), c * 9 * hw);
    for ci in 0..c {
        let chan = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &mut cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &chan[(iy as usize) * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = 0.0;
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of im2col3: scatter-adds column gradients back onto the image.
fn col2im3_add(cols: &[f64], c: usize, h: usize, w: usize, dx: &mut [f64]) {
    let hw = h * w;
    for ci in 0..c {
        let chan = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..3usize {
            for kx in 0..3usize {
                let row = &cols[((ci * 3 + ky) * 3 + kx) * hw..][..hw];
                for oy in 0..h {
                    let iy = oy as isize + ky as isize - 1;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &row[oy * w..(oy + 1) * w];
                    let dst = &mut chan[(iy as usize) * w..(iy as usize + 1) * w];
                    match kx {
                        0 => {
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-d convolution, kernel 3x3, stride 1, zero padding 1 (shape-preserving).
/// x[n, c, h, w], w[f, c, 3, 3], b[f].
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let (n, c, h, w) = dims4("conv2d", x)?;
    let ws = weight.shape();
    if ws.len() != 4 || ws[1] != c || ws[2] != 3 || ws[3] != 3 {
        return Err(shape_err("conv2d", format!("weight {ws:?} vs input channels {c}")));
    }
    let f = ws[0];
    if let Some(b) = bias {
        if b.shape() != [f] {
            return Err(shape_err("conv2d", format!("bias {:?} vs filters {f}", b.shape())));
        }
    }
    let hw = h * w;
    let c9 = c * 9;
    let mut data = vec![0.0; n * f * hw];
    {
        let ix = x.0.borrow();
        let iw = weight.0.borrow();
        let mut cols = vec![0.0; c9 * hw];
        for im in 0..n {
            im2col3(&ix.data[im * c * hw..(im + 1) * c * hw], c, h, w, &mut cols);
            gemm_nn(&iw.data, &cols, f, c9, hw, &mut data[im * f * hw..(im + 1) * f * hw]);
        }
        if let Some(b) = bias {
            let ib = b.0.borrow();
            for im in 0..n {
                for (fi, &bv) in ib.data.iter().enumerate() {
                    for y in &mut data[(im * f + fi) * hw..(im * f + fi + 1) * hw] {
                        *y += bv;
                    }
                }
            }
        }
    }
    let mut parents = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        data,
        vec![n, f, h, w],
        parents,
        Box::new(move |g, parents| {
            let need_dx = parents[0].requires_grad();
            let mut dw = vec![0.0; f * c9];
            let mut db = if parents.len() == 3 { Some(vec![0.0; f]) } else { None };
            let mut dx = if need_dx { Some(vec![0.0; n * c * hw]) } else { None };
            {
                let ix = parents[0].0.borrow();
                let iw = parents[1].0.borrow();
                let mut cols = vec![0.0; c9 * hw];
                let mut dcols = vec![0.0; c9 * hw];
                for im in 0..n {
                    let g_im = &g[im * f * hw..(im + 1) * f * hw];
                    im2col3(&ix.data[im * c * hw..(im + 1) * c * hw], c, h, w, &mut cols);
                    gemm_nt(g_im, &cols, f, hw, c9, &mut dw);
                    if let Some(db) = db.as_mut() {
                        for (fi, acc) in db.iter_mut().enumerate() {
                            *acc += g_im[fi * hw..(fi + 1) * hw].iter().sum::<f64>();
                        }
                    }
                    if let Some(dx) = dx.as_mut() {
                        dcols.fill(0.0);
                        gemm_tn(&iw.data, g_im, c9, f, hw, &mut dcols);
                        col2im3_add(&dcols, c, h, w, &mut dx[im * c * hw..(im + 1) * c * hw]);
                    }
                }
            }
            if let Some(dx) = dx {
                parents[0].accumulate(&dx);
            }
            parents[1].accumulate(&dw);
            if let Some(db) = db {
                parents[2].accumulate(&db);
            }
        }),
    ))
}

// ---------------------------------------------------------------------------
// BatchNorm2d

/// Running statistics side-state for one BatchNorm2d layer.
#[derive(Debug, Clone)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub batches: u64,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self { mean: vec![0.0; channels], var: vec![1.0; channels], batches: 0 }
    }
}

/// Per-channel batch normalization over (N, H, W).
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates (momentum 0.1, unbiased running variance). Eval mode
/// uses the running estimates and errors when none have been recorded.
pub fn batchnorm2d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &Rc<RefCell<RunningStats>>,
    training: bool,
) -> Result<Tensor> {
    let (n, c, h, w) = dims4("batchnorm2d", x)?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err(
            "batchnorm2d",
            format!("gamma {:?} beta {:?} vs channels {c}", gamma.shape(), beta.shape()),
        ));
    }
    let hw = h * w;
    let m = n * hw;

    let (mean, istd) = if training {
        let ix = x.0.borrow();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut sum = 0.0;
            for im in 0..n {
                sum += ix.data[(im * c + ci) * hw..(im * c + ci + 1) * hw].iter().sum::<f64>();
            }
            let mu = sum / m as f64;
            let mut sq = 0.0;
            for im in 0..n {
                for &v in &ix.data[(im * c + ci) * hw..(im * c + ci + 1) * hw] {
                    sq += (v - mu) * (v - mu);
                }
            }
            mean[ci] = mu;
            var[ci] = sq / m as f64;
        }
        {
            let mut st = stats.borrow_mut();
            let unbias = if m > 1 { m as f64 / (m as f64 - 1.0) } else { 1.0 };
            for ci in 0..c {
                st.mean[ci] = (1.0 - BN_MOMENTUM) * st.mean[ci] + BN_MOMENTUM * mean[ci];
                st.var[ci] = (1.0 - BN_MOMENTUM) * st.var[ci] + BN_MOMENTUM * var[ci] * unbias;
            }
            st.batches += 1;
        }
        let istd: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        (mean, istd)
    } else {
        let st = stats.borrow();
        if st.batches == 0 {
            return Err(Error::UninitializedBatchNorm);
        }
        let istd: Vec<f64> = st.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        (st.mean.clone(), istd)
    };

    let data: Vec<f64> = {
        let ix = x.0.borrow();
        let (ig, ib) = (gamma.0.borrow(), beta.0.borrow());
        let mut out = vec![0.0; n * c * hw];
        for im in 0..n {
            for ci in 0..c {
                let (mu, is, ga, be) = (mean[ci], istd[ci], ig.data[ci], ib.data[ci]);
                let src = &ix.data[(im * c + ci) * hw..(im * c + ci + 1) * hw];
                let dst = &mut out[(im * c + ci) * hw..(im * c + ci + 1) * hw];
                for (d, &v) in dst.iter_mut().zip(src) {
                    *d = ga * (v - mu) * is + be;
                }
            }
        }
        out
    };

    Ok(Tensor::from_op(
        data,
        vec![n, c, h, w],
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |g, parents| {
            let (mut dx, mut dgamma, mut dbeta) =
                (vec![0.0; n * c * hw], vec![0.0; c], vec![0.0; c]);
            {
                let ix = parents[0].0.borrow();
                let ig = parents[1].0.borrow();
                for ci in 0..c {
                    let (mu, is, ga) = (mean[ci], istd[ci], ig.data[ci]);
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for im in 0..n {
                        let base = (im * c + ci) * hw;
                        for off in 0..hw {
                            let gv = g[base + off];
                            sum_g += gv;
                            sum_gx += gv * (ix.data[base + off] - mu) * is;
                        }
                    }
                    dgamma[ci] = sum_gx;
                    dbeta[ci] = sum_g;
                    if training {
                        let mf = m as f64;
                        for im in 0..n {
                            let base = (im * c + ci) * hw;
                            for off in 0..hw {
                                let xhat = (ix.data[base + off] - mu) * is;
                                dx[base + off] =
                                    ga * is / mf * (mf * g[base + off] - sum_g - xhat * sum_gx);
                            }
                        }
                    } else {
                        for im in 0..n {
                            let base = (im * c + ci) * hw;
                            for off in 0..hw {
                                dx[base + off] = g[base + off] * ga * is;
                            }
                        }
                    }
                }
            }
            parents[0].accumulate(&dx);
            parents[1].accumulate(&dgamma);
            parents[2].accumulate(&dbeta);
        }),
    ))
}

// ---------------------------------------------------------------------------
// MaxPool2d (2x2, stride 2, floor)

pub fn maxpool2d(x: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = dims4("maxpool2d", x)?;
    let (ho, wo) = (h / 2, w / 2);
    if ho == 0 || wo == 0 {
        return Err(shape_err("maxpool2d", format!("input {h}x{w} too small")));
    }
    let (hw, hwo) = (h * w, ho * wo);
    let mut data = vec![0.0; n * c * hwo];
    let mut argmax = vec![0u32; n * c * hwo];
    {
        let ix = x.0.borrow();
        for nc in 0..n * c {
            let src = &ix.data[nc * hw..(nc + 1) * hw];
            for oy in 0..ho {
                for ox in 0..wo {
                    // Scan the window in row-major order; strict > keeps the
                    // first occurrence on ties.
                    let mut best_idx = (2 * oy) * w + 2 * ox;
                    let mut best = src[best_idx];
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > best {
                            best = src[idx];
                            best_idx = idx;
                        }
                    }
                    data[nc * hwo + oy * wo + ox] = best;
                    argmax[nc * hwo + oy * wo + ox] = (nc * hw + best_idx) as u32;
                }
            }
        }
    }
    Ok(Tensor::from_op(
        data,
        vec![n, c, ho, wo],
        vec![x.clone()],
        Box::new(move |g, parents| {
            let mut dx = vec![0.0; parents[0].numel()];
            for (gv, &idx) in g.iter().zip(&argmax) {
                dx[idx as usize] += gv;
            }
            parents[0].accumulate(&dx);
        }),
    ))
}

// ---------------------------------------------------------------------------
// Softmax cross-entropy

/// Mean negative log-likelihood of `labels` under softmax(logits).
/// logits[n, k]; stable log-sum-exp; gradient (softmax - onehot) / n.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let (n, k) = dims2("softmax_cross_entropy", logits)?;
    if labels.len() != n {
        return Err(shape_err("softmax_cross_entropy", format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(shape_err("softmax_cross_entropy", format!("label {bad} out of {k} classes")));
    }
    let mut probs = vec![0.0; n * k];
    let mut loss = 0.0;
    {
        let il = logits.0.borrow();
        for (i, &label) in labels.iter().enumerate() {
            let row = &il.data[i * k..(i + 1) * k];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (p, &v) in probs[i * k..(i + 1) * k].iter_mut().zip(row) {
                *p = (v - mx).exp();
                z += *p;
            }
            for p in &mut probs[i * k..(i + 1) * k] {
                *p /= z;
            }
            loss += mx + z.ln() - row[label];
        }
    }
    loss /= n as f64;
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![loss],
        vec![1],
        vec![logits.clone()],
        Box::new(move |g, parents| {
            let scale = g[0] / n as f64;
            let mut dl = probs.clone();
            for (i, &label) in labels.iter().enumerate() {
                dl[i * k + label] -= 1.0;
            }
            for v in &mut dl {
                *v *= scale;
            }
            parents[0].accumulate(&dl);
        }),
    ))
}
