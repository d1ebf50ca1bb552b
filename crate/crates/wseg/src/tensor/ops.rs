//! Forward and backward kernels for the supported layer kinds.
//!
//! Kernels operate on flat row-major buffers so the network replay loop can
//! reuse preallocated workspaces. Summation order inside every kernel is
//! fixed, which keeps results bit-identical across runs and thread counts.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// orow[x] += Σ_j kw[j] * buf[x + j], with `buf` a row padded by k−1 extras.
#[inline]
fn conv_row_taps(buf: &[f64], kw: &[f64], orow: &mut [f64]) {
    let n = orow.len();
    match kw.len() {
        1 => {
            let w0 = kw[0];
            for (o, &b) in orow.iter_mut().zip(buf) {
                *o += w0 * b;
            }
        }
        3 => {
            let (w0, w1, w2) = (kw[0], kw[1], kw[2]);
            let b = &buf[..n + 2];
            for (i, o) in orow.iter_mut().enumerate() {
                *o += w0 * b[i] + w1 * b[i + 1] + w2 * b[i + 2];
            }
        }
        _ => {
            for (j, &wj) in kw.iter().enumerate() {
                for (o, &b) in orow.iter_mut().zip(&buf[j..j + n]) {
                    *o += wj * b;
                }
            }
        }
    }
}

/// Σ_x a[x] * b[x] with eight fixed accumulator lanes so the loop vectorizes
/// while the summation order stays deterministic.
#[inline]
fn dot_row(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut chunks_a = a.chunks_exact(8);
    let mut chunks_b = b.chunks_exact(8);
    for (ca, cb) in (&mut chunks_a).zip(&mut chunks_b) {
        for i in 0..8 {
            lanes[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0.0f64;
    for (ra, rb) in chunks_a.remainder().iter().zip(chunks_b.remainder()) {
        tail += ra * rb;
    }
    lanes.iter().sum::<f64>() + tail
}

/// All nine 3×3 taps fused over one output row. `r0`/`r1`/`r2` are padded
/// rows of length `orow.len() + 2`.
#[inline]
fn conv_row_3x3(r0: &[f64], r1: &[f64], r2: &[f64], kw: &[f64], orow: &mut [f64]) {
    let n = orow.len();
    let (r0, r1, r2) = (&r0[..n + 2], &r1[..n + 2], &r2[..n + 2]);
    for (i, o) in orow.iter_mut().enumerate() {
        *o += kw[0] * r0[i] + kw[1] * r0[i + 1] + kw[2] * r0[i + 2]
            + kw[3] * r1[i] + kw[4] * r1[i + 1] + kw[5] * r1[i + 2]
            + kw[6] * r2[i] + kw[7] * r2[i + 1] + kw[8] * r2[i + 2];
    }
}

/// As [`conv_row_3x3`] but feeding two output rows from the same padded rows,
/// so each loaded input value serves two accumulation chains.
#[inline]
#[allow(clippy::too_many_arguments)]
fn conv_row_3x3_x2(
    r0: &[f64],
    r1: &[f64],
    r2: &[f64],
    kw_a: &[f64],
    kw_b: &[f64],
    orow_a: &mut [f64],
    orow_b: &mut [f64],
) {
    let n = orow_a.len();
    let (r0, r1, r2) = (&r0[..n + 2], &r1[..n + 2], &r2[..n + 2]);
    let orow_b = &mut orow_b[..n];
    for (i, oa) in orow_a.iter_mut().enumerate() {
        let (v0, v1, v2) = (r0[i], r0[i + 1], r0[i + 2]);
        let (v3, v4, v5) = (r1[i], r1[i + 1], r1[i + 2]);
        let (v6, v7, v8) = (r2[i], r2[i + 1], r2[i + 2]);
        *oa += kw_a[0] * v0 + kw_a[1] * v1 + kw_a[2] * v2
            + kw_a[3] * v3 + kw_a[4] * v4 + kw_a[5] * v5
            + kw_a[6] * v6 + kw_a[7] * v7 + kw_a[8] * v8;
        orow_b[i] += kw_b[0] * v0 + kw_b[1] * v1 + kw_b[2] * v2
            + kw_b[3] * v3 + kw_b[4] * v4 + kw_b[5] * v5
            + kw_b[6] * v6 + kw_b[7] * v7 + kw_b[8] * v8;
    }
}

/// (Σ a[i]·b[i], Σ a[i]·b[i+1], Σ a[i]·b[i+2]) over all rows of a plane
/// against rows `ky..` of its padded counterpart. Lane accumulators live in
/// locals for the whole plane and are reduced once, in a fixed order.
#[inline]
fn dot_plane3(a: &[f64], h: usize, w: usize, pad: &[f64], pw: usize, ky: usize) -> (f64, f64, f64) {
    let mut l0 = [0.0f64; 8];
    let mut l1 = [0.0f64; 8];
    let mut l2 = [0.0f64; 8];
    let (mut t0, mut t1, mut t2) = (0.0f64, 0.0f64, 0.0f64);
    for y in 0..h {
        let arow = &a[y * w..(y + 1) * w];
        let brow = &pad[(y + ky) * pw..(y + ky) * pw + w + 2];
        let mut i = 0;
        while i + 8 <= w {
            for j in 0..8 {
                let av = arow[i + j];
                l0[j] += av * brow[i + j];
                l1[j] += av * brow[i + j + 1];
                l2[j] += av * brow[i + j + 2];
            }
            i += 8;
        }
        while i < w {
            let av = arow[i];
            t0 += av * brow[i];
            t1 += av * brow[i + 1];
            t2 += av * brow[i + 2];
            i += 1;
        }
    }
    (
        l0.iter().sum::<f64>() + t0,
        l1.iter().sum::<f64>() + t1,
        l2.iter().sum::<f64>() + t2,
    )
}

/// Copies a C×H×W plane into an (H+2p)×(W+2p) zero-padded scratch buffer.
#[inline]
fn fill_padded_plane(plane: &[f64], h: usize, w: usize, p: usize, pad: &mut [f64]) {
    let pw = w + 2 * p;
    for y in 0..h {
        pad[(y + p) * pw + p..(y + p) * pw + p + w].copy_from_slice(&plane[y * w..(y + 1) * w]);
    }
}

/// Zero-padded stride-1 cross-correlation. `inp` is C_in×H×W, `ker` is
/// C_out×C_in×k×k (k odd), `bias` C_out, `out` C_out×H×W.
///
/// Works one output row at a time: the padded input row stays in L1 across
/// all output channels, and the k taps fuse into a single pass per row.
pub(crate) fn conv2d_fwd(
    inp: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    ker: &[f64],
    cout: usize,
    k: usize,
    bias: &[f64],
    out: &mut [f64],
) {
    let p = k / 2;
    let plane = h * w;
    for co in 0..cout {
        out[co * plane..(co + 1) * plane].fill(bias[co]);
    }
    if k == 1 {
        for ci in 0..cin {
            let iplane = &inp[ci * plane..(ci + 1) * plane];
            for co in 0..cout {
                let wgt = ker[co * cin + ci];
                for (o, &i) in out[co * plane..(co + 1) * plane].iter_mut().zip(iplane) {
                    *o += wgt * i;
                }
            }
        }
        return;
    }
    let pw = w + 2 * p;
    let mut pad = vec![0.0; (h + 2 * p) * pw];
    for ci in 0..cin {
        fill_padded_plane(&inp[ci * plane..(ci + 1) * plane], h, w, p, &mut pad);
        if k == 3 {
            let mut co = 0;
            while co + 2 <= cout {
                let kw_a = &ker[(co * cin + ci) * 9..][..9];
                let kw_b = &ker[((co + 1) * cin + ci) * 9..][..9];
                let (lo, hi) = out.split_at_mut((co + 1) * plane);
                let oplane_a = &mut lo[co * plane..];
                let oplane_b = &mut hi[..plane];
                for y in 0..h {
                    let r0 = &pad[y * pw..];
                    let r1 = &pad[(y + 1) * pw..];
                    let r2 = &pad[(y + 2) * pw..];
                    let (a, b) = (&mut oplane_a[y * w..y * w + w], &mut oplane_b[y * w..y * w + w]);
                    conv_row_3x3_x2(r0, r1, r2, kw_a, kw_b, a, b);
                }
                co += 2;
            }
            if co < cout {
                let kw = &ker[(co * cin + ci) * 9..][..9];
                for y in 0..h {
                    let r0 = &pad[y * pw..];
                    let r1 = &pad[(y + 1) * pw..];
                    let r2 = &pad[(y + 2) * pw..];
                    conv_row_3x3(r0, r1, r2, kw, &mut out[co * plane + y * w..][..w]);
                }
            }
        } else {
            for co in 0..cout {
                let kw = &ker[(co * cin + ci) * k * k..][..k * k];
                for y in 0..h {
                    for ky in 0..k {
                        let buf = &pad[(y + ky) * pw..(y + ky + 1) * pw];
                        conv_row_taps(buf, &kw[ky * k..(ky + 1) * k], &mut out[co * plane + y * w..][..w]);
                    }
                }
            }
        }
    }
}

/// Gradient of conv2d w.r.t. its input. Accumulates into `dinp` (must be zeroed).
pub(crate) fn conv2d_bwd_input(
    dout: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    ker: &[f64],
    cout: usize,
    k: usize,
    dinp: &mut [f64],
) {
    let p = k / 2;
    let plane = h * w;
    if k == 1 {
        for co in 0..cout {
            let oplane = &dout[co * plane..(co + 1) * plane];
            for ci in 0..cin {
                let wgt = ker[co * cin + ci];
                for (d, &g) in dinp[ci * plane..(ci + 1) * plane].iter_mut().zip(oplane) {
                    *d += wgt * g;
                }
            }
        }
        return;
    }
    // d_in[r][c] = Σ_co Σ_ky,kx K[co,ci,ky,kx] · d_out[co][r−ky+p][c−kx+p]:
    // a correlation of the padded output gradient with the 180°-rotated kernel.
    let pw = w + 2 * p;
    let mut pad = vec![0.0; (h + 2 * p) * pw];
    let mut krot_a = vec![0.0; k * k];
    let mut krot_b = vec![0.0; k * k];
    for co in 0..cout {
        fill_padded_plane(&dout[co * plane..(co + 1) * plane], h, w, p, &mut pad);
        if k == 3 {
            let mut ci = 0;
            while ci + 2 <= cin {
                let kw_a = &ker[(co * cin + ci) * 9..][..9];
                let kw_b = &ker[(co * cin + ci + 1) * 9..][..9];
                for j in 0..9 {
                    krot_a[j] = kw_a[8 - j];
                    krot_b[j] = kw_b[8 - j];
                }
                let (lo, hi) = dinp.split_at_mut((ci + 1) * plane);
                let iplane_a = &mut lo[ci * plane..];
                let iplane_b = &mut hi[..plane];
                for r in 0..h {
                    let r0 = &pad[r * pw..];
                    let r1 = &pad[(r + 1) * pw..];
                    let r2 = &pad[(r + 2) * pw..];
                    let (a, b) = (&mut iplane_a[r * w..r * w + w], &mut iplane_b[r * w..r * w + w]);
                    conv_row_3x3_x2(r0, r1, r2, &krot_a, &krot_b, a, b);
                }
                ci += 2;
            }
            if ci < cin {
                let kw = &ker[(co * cin + ci) * 9..][..9];
                for j in 0..9 {
                    krot_a[j] = kw[8 - j];
                }
                for r in 0..h {
                    let r0 = &pad[r * pw..];
                    let r1 = &pad[(r + 1) * pw..];
                    let r2 = &pad[(r + 2) * pw..];
                    conv_row_3x3(r0, r1, r2, &krot_a, &mut dinp[ci * plane + r * w..][..w]);
                }
            }
        } else {
            for ci in 0..cin {
                let kw = &ker[(co * cin + ci) * k * k..][..k * k];
                for j in 0..k * k {
                    krot_a[j] = kw[k * k - 1 - j];
                }
                for r in 0..h {
                    for ky in 0..k {
                        let buf = &pad[(r + ky) * pw..(r + ky + 1) * pw];
                        conv_row_taps(buf, &krot_a[ky * k..(ky + 1) * k], &mut dinp[ci * plane + r * w..][..w]);
                    }
                }
            }
        }
    }
}

/// Gradients of conv2d w.r.t. kernels and bias. Accumulates into `dker`/`dbias`.
pub(crate) fn conv2d_bwd_params(
    inp: &[f64],
    cin: usize,
    h: usize,
    w: usize,
    dout: &[f64],
    cout: usize,
    k: usize,
    dker: &mut [f64],
    dbias: &mut [f64],
) {
    let p = k / 2;
    let plane = h * w;
    for co in 0..cout {
        dbias[co] += sum_plane(&dout[co * plane..(co + 1) * plane]);
    }
    if k == 1 {
        for ci in 0..cin {
            let iplane = &inp[ci * plane..(ci + 1) * plane];
            for co in 0..cout {
                dker[co * cin + ci] += dot_row(&dout[co * plane..(co + 1) * plane], iplane);
            }
        }
        return;
    }
    let pw = w + 2 * p;
    let mut pad = vec![0.0; (h + 2 * p) * pw];
    for ci in 0..cin {
        fill_padded_plane(&inp[ci * plane..(ci + 1) * plane], h, w, p, &mut pad);
        for co in 0..cout {
            let kbase = (co * cin + ci) * k * k;
            if k == 3 {
                let oplane = &dout[co * plane..(co + 1) * plane];
                for ky in 0..3 {
                    let (d0, d1, d2) = dot_plane3(oplane, h, w, &pad, pw, ky);
                    dker[kbase + ky * 3] += d0;
                    dker[kbase + ky * 3 + 1] += d1;
                    dker[kbase + ky * 3 + 2] += d2;
                }
            } else {
                for y in 0..h {
                    let orow = &dout[co * plane + y * w..][..w];
                    for ky in 0..k {
                        let prow = &pad[(y + ky) * pw..(y + ky + 1) * pw];
                        for kx in 0..k {
                            dker[kbase + ky * k + kx] += dot_row(orow, &prow[kx..kx + w]);
                        }
                    }
                }
            }
        }
    }
}

#[inline]
fn sum_plane(v: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 8];
    let mut chunks = v.chunks_exact(8);
    for c in &mut chunks {
        for i in 0..8 {
            lanes[i] += c[i];
        }
    }
    lanes.iter().sum::<f64>() + chunks.remainder().iter().sum::<f64>()
}

pub(crate) fn relu_fwd(inp: &[f64], out: &mut [f64]) {
    for (o, &i) in out.iter_mut().zip(inp) {
        *o = if i > 0.0 { i } else { 0.0 };
    }
}

pub(crate) fn relu_bwd(inp: &[f64], dout: &[f64], dinp: &mut [f64]) {
    for ((di, &i), &g) in dinp.iter_mut().zip(inp).zip(dout) {
        if i > 0.0 {
            *di += g;
        }
    }
}

/// 2×2 max pooling with stride 2; records flat argmax indices for backward.
pub(crate) fn maxpool2x2_fwd(
    inp: &[f64],
    c: usize,
    h: usize,
    w: usize,
    out: &mut [f64],
    argmax: &mut [u32],
) {
    let (oh, ow) = (h / 2, w / 2);
    for ch in 0..c {
        let iplane = &inp[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let base = (2 * oy) * w + 2 * ox;
                let cand = [base, base + 1, base + w, base + w + 1];
                let mut best = cand[0];
                let mut bv = iplane[cand[0]];
                for &ix in &cand[1..] {
                    if iplane[ix] > bv {
                        bv = iplane[ix];
                        best = ix;
                    }
                }
                let oidx = ch * oh * ow + oy * ow + ox;
                out[oidx] = bv;
                argmax[oidx] = (ch * h * w + best) as u32;
            }
        }
    }
}

pub(crate) fn maxpool2x2_bwd(dout: &[f64], argmax: &[u32], dinp: &mut [f64]) {
    for (&g, &ix) in dout.iter().zip(argmax) {
        dinp[ix as usize] += g;
    }
}

/// Per-channel spatial mean: C×H×W -> C.
pub(crate) fn gap_fwd(inp: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    let inv = 1.0 / plane as f64;
    for ch in 0..c {
        out[ch] = sum_plane(&inp[ch * plane..(ch + 1) * plane]) * inv;
    }
}

pub(crate) fn gap_bwd(dout: &[f64], c: usize, h: usize, w: usize, dinp: &mut [f64]) {
    let plane = h * w;
    for ch in 0..c {
        let g = dout[ch] / plane as f64;
        for d in &mut dinp[ch * plane..(ch + 1) * plane] {
            *d += g;
        }
    }
}

/// Fully connected layer: out = W·inp + b with W of shape out×in.
pub(crate) fn dense_fwd(inp: &[f64], wts: &[f64], nin: usize, nout: usize, bias: &[f64], out: &mut [f64]) {
    for o in 0..nout {
        let row = &wts[o * nin..(o + 1) * nin];
        let mut acc = bias[o];
        for (wv, iv) in row.iter().zip(inp) {
            acc += wv * iv;
        }
        out[o] = acc;
    }
}

pub(crate) fn dense_bwd(
    inp: &[f64],
    wts: &[f64],
    nin: usize,
    nout: usize,
    dout: &[f64],
    dinp: &mut [f64],
    dwts: &mut [f64],
    dbias: &mut [f64],
) {
    for o in 0..nout {
        let g = dout[o];
        dbias[o] += g;
        let row = &wts[o * nin..(o + 1) * nin];
        let drow = &mut dwts[o * nin..(o + 1) * nin];
        for i in 0..nin {
            drow[i] += g * inp[i];
            dinp[i] += g * row[i];
        }
    }
}

/// Nearest-neighbour 2× upsampling: C×H×W -> C×2H×2W.
pub(crate) fn upsample2x_fwd(inp: &[f64], c: usize, h: usize, w: usize, out: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        let iplane = &inp[ch * h * w..(ch + 1) * h * w];
        let oplane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for oy in 0..oh {
            let irow = &iplane[(oy / 2) * w..(oy / 2 + 1) * w];
            let orow = &mut oplane[oy * ow..(oy + 1) * ow];
            for (ox, o) in orow.iter_mut().enumerate() {
                *o = irow[ox / 2];
            }
        }
    }
}

pub(crate) fn upsample2x_bwd(dout: &[f64], c: usize, h: usize, w: usize, dinp: &mut [f64]) {
    let (oh, ow) = (2 * h, 2 * w);
    for ch in 0..c {
        let dplane = &dout[ch * oh * ow..(ch + 1) * oh * ow];
        let iplane = &mut dinp[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let drow = &dplane[oy * ow..(oy + 1) * ow];
            let irow = &mut iplane[(oy / 2) * w..(oy / 2 + 1) * w];
            for (ox, &d) in drow.iter().enumerate() {
                irow[ox / 2] += d;
            }
        }
    }
}

/// Numerically stable per-pixel softmax over the channel axis of K×H×W.
pub(crate) fn softmax_pixelwise_fwd(inp: &[f64], k: usize, h: usize, w: usize, out: &mut [f64]) {
    let plane = h * w;
    for px in 0..plane {
        let mut m = f64::NEG_INFINITY;
        for ch in 0..k {
            m = m.max(inp[ch * plane + px]);
        }
        let mut z = 0.0;
        for ch in 0..k {
            let e = (inp[ch * plane + px] - m).exp();
            out[ch * plane + px] = e;
            z += e;
        }
        let inv = 1.0 / z;
        for ch in 0..k {
            out[ch * plane + px] *= inv;
        }
    }
}

/// Softmax Jacobian-vector product: dz_j = p_j (g_j − Σ_k g_k p_k) per pixel.
pub(crate) fn softmax_pixelwise_bwd(out: &[f64], k: usize, h: usize, w: usize, dout: &[f64], dinp: &mut [f64]) {
    let plane = h * w;
    for px in 0..plane {
        let mut dot = 0.0;
        for ch in 0..k {
            let ix = ch * plane + px;
            dot += dout[ix] * out[ix];
        }
        for ch in 0..k {
            let ix = ch * plane + px;
            dinp[ix] += out[ix] * (dout[ix] - dot);
        }
    }
}

/// Channel concatenation of two C_i×H×W blocks.
pub(crate) fn concat_fwd(a: &[f64], b: &[f64], out: &mut [f64]) {
    out[..a.len()].copy_from_slice(a);
    out[a.len()..].copy_from_slice(b);
}

pub(crate) fn concat_bwd(dout: &[f64], da: &mut [f64], db: &mut [f64]) {
    let na = da.len();
    for (d, &g) in da.iter_mut().zip(&dout[..na]) {
        *d += g;
    }
    for (d, &g) in db.iter_mut().zip(&dout[na..]) {
        *d += g;
    }
}

// ---------------------------------------------------------------------------
// Tensor-level entry points
// ---------------------------------------------------------------------------

fn expect_rank(t: &Tensor, rank: usize, context: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(Error::shape(context, format!("rank {rank}"), format!("{:?}", t.shape())));
    }
    Ok(())
}

/// Zero-padded cross-correlation of a C_in×H×W input with C_out×C_in×k×k kernels.
///
/// The kernel size must be odd so the (k−1)/2 padding preserves spatial size.
pub fn conv2d_forward(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    expect_rank(input, 3, "conv2d input")?;
    expect_rank(kernels, 4, "conv2d kernels")?;
    expect_rank(bias, 1, "conv2d bias")?;
    let (cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (cout, kcin, kh, kw) = (
        kernels.shape()[0],
        kernels.shape()[1],
        kernels.shape()[2],
        kernels.shape()[3],
    );
    if kcin != cin {
        return Err(Error::shape("conv2d kernel input-channel dimension", cin, kcin));
    }
    if kh != kw {
        return Err(Error::shape("conv2d kernel window", "square kernel", format!("{kh}x{kw}")));
    }
    if kh % 2 == 0 || kh == 0 {
        return Err(Error::InvalidConfig(format!("conv2d kernel size must be odd, got {kh}")));
    }
    if bias.shape()[0] != cout {
        return Err(Error::shape("conv2d bias dimension", cout, bias.shape()[0]));
    }
    input.check_finite("conv2d input")?;
    let mut out = Tensor::zeros(&[cout, h, w]);
    conv2d_fwd(
        input.values(),
        cin,
        h,
        w,
        kernels.values(),
        cout,
        kh,
        bias.values(),
        out.values_mut(),
    );
    Ok(out)
}

/// Global average pooling: C×H×W -> C.
pub fn gap_forward(input: &Tensor) -> Result<Tensor> {
    expect_rank(input, 3, "gap input")?;
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h == 0 || w == 0 {
        return Err(Error::shape("gap input", "H,W >= 1", format!("{h}x{w}")));
    }
    let mut out = Tensor::zeros(&[c]);
    gap_fwd(input.values(), c, h, w, out.values_mut());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq_tensor(shape: &[usize], f: impl Fn(usize) -> f64) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(f).collect()).unwrap()
    }

    /// Direct six-nested-loop convolution used as the oracle.
    fn conv_oracle(inp: &Tensor, ker: &Tensor, bias: &Tensor) -> Tensor {
        let (cin, h, w) = (inp.shape()[0], inp.shape()[1], inp.shape()[2]);
        let (cout, k) = (ker.shape()[0], ker.shape()[2]);
        let p = (k / 2) as isize;
        let mut out = Tensor::zeros(&[cout, h, w]);
        for co in 0..cout {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = bias.values()[co];
                    for ci in 0..cin {
                        for ky in 0..k as isize {
                            for kx in 0..k as isize {
                                let iy = y + ky - p;
                                let ix = x + kx - p;
                                if iy >= 0 && iy < h as isize && ix >= 0 && ix < w as isize {
                                    let iv = inp.values()[ci * h * w + iy as usize * w + ix as usize];
                                    let kv = ker.values()
                                        [((co * cin + ci) * k + ky as usize) * k + kx as usize];
                                    acc += iv * kv;
                                }
                            }
                        }
                    }
                    out.values_mut()[co * h * w + (y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_scalar_multiply_add() {
        let inp = Tensor::from_vec(&[1, 1, 1], vec![2.0]).unwrap();
        let ker = Tensor::from_vec(&[1, 1, 1, 1], vec![3.0]).unwrap();
        let bias = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let out = conv2d_forward(&inp, &ker, &bias).unwrap();
        assert_eq!(out.values(), &[7.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let inp = seq_tensor(&[1, 4, 5], |i| (i as f64) * 0.37 - 2.0);
        let mut kv = vec![0.0; 9];
        kv[4] = 1.0; // centre
        let ker = Tensor::from_vec(&[1, 1, 3, 3], kv).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&inp, &ker, &bias).unwrap();
        assert_eq!(out.values(), inp.values());
    }

    #[test]
    fn conv2d_matches_loop_oracle() {
        // Pseudo-random but fixed inputs: 2×5×5 input, 3 kernels of size 3.
        let inp = seq_tensor(&[2, 5, 5], |i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0);
        let ker = seq_tensor(&[3, 2, 3, 3], |i| ((i * 40503) % 997) as f64 / 498.5 - 1.0);
        let bias = Tensor::from_vec(&[3], vec![0.1, -0.2, 0.3]).unwrap();
        let got = conv2d_forward(&inp, &ker, &bias).unwrap();
        let want = conv_oracle(&inp, &ker, &bias);
        for (g, w) in got.values().iter().zip(want.values()) {
            assert!((g - w).abs() < 1e-12, "{g} vs {w}");
        }
    }

    #[test]
    fn conv2d_rejects_even_kernel_and_bad_channels() {
        let inp = Tensor::zeros(&[2, 4, 4]);
        let ker = Tensor::zeros(&[1, 2, 2, 2]);
        let bias = Tensor::zeros(&[1]);
        assert!(matches!(
            conv2d_forward(&inp, &ker, &bias),
            Err(Error::InvalidConfig(_))
        ));
        let ker = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&inp, &ker, &bias).unwrap_err();
        assert!(err.to_string().contains("input-channel"), "{err}");
    }

    #[test]
    fn gap_constant_field() {
        let inp = Tensor::filled(&[1, 3, 4], 5.0);
        let out = gap_forward(&inp).unwrap();
        assert_eq!(out.values(), &[5.0]);
    }

    #[test]
    fn gap_small_mean() {
        let inp = Tensor::from_vec(&[1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = gap_forward(&inp).unwrap();
        assert!((out.values()[0] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gap_matches_sum_oracle() {
        let inp = seq_tensor(&[4, 7, 9], |i| ((i * 12923) % 881) as f64 / 440.5 - 1.0);
        let out = gap_forward(&inp).unwrap();
        for c in 0..4 {
            let mut s = 0.0;
            for px in 0..63 {
                s += inp.values()[c * 63 + px];
            }
            assert!((out.values()[c] - s / 63.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one_and_positive() {
        let inp = seq_tensor(&[2, 3, 3], |i| ((i * 7919) % 23) as f64 - 11.0);
        let mut out = vec![0.0; 18];
        softmax_pixelwise_fwd(inp.values(), 2, 3, 3, &mut out);
        for px in 0..9 {
            let s = out[px] + out[9 + px];
            assert!((s - 1.0).abs() < 1e-9);
            assert!(out[px] > 0.0 && out[9 + px] > 0.0);
        }
    }

    #[test]
    fn maxpool_forward_and_routing() {
        let inp = Tensor::from_vec(&[1, 2, 4], vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 1.0, 6.0]).unwrap();
        let mut out = vec![0.0; 2];
        let mut arg = vec![0u32; 2];
        maxpool2x2_fwd(inp.values(), 1, 2, 4, &mut out, &mut arg);
        assert_eq!(out, vec![5.0, 6.0]);
        let mut dinp = vec![0.0; 8];
        maxpool2x2_bwd(&[1.0, 2.0], &arg, &mut dinp);
        assert_eq!(dinp, vec![0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn upsample_round_trip_gradient() {
        let inp = seq_tensor(&[2, 2, 3], |i| i as f64);
        let mut out = vec![0.0; 2 * 4 * 6];
        upsample2x_fwd(inp.values(), 2, 2, 3, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[1], 0.0);
        assert_eq!(out[6], 0.0); // second row copies first input row
        // each input cell receives the sum of its 4 upsampled copies
        let dout = vec![1.0; 2 * 4 * 6];
        let mut dinp = vec![0.0; 12];
        upsample2x_bwd(&dout, 2, 2, 3, &mut dinp);
        assert!(dinp.iter().all(|&d| (d - 4.0).abs() < 1e-15));
    }
}
