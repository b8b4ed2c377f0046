//! Forward pass of the embedding backbone with the activation trace needed
//! by the hand-written reverse pass.

use alloc::vec;
use alloc::vec::Vec;

use super::config::ConvGeometry;
use super::params::{Gradients, Parameters, Scalar};
use super::ModelError;
use crate::raster::Raster;

/// Squared-norm floor of the ℓ2 normalization.
const NORM_EPS: f64 = 1e-12;

/// Output indices `o` for which `o * stride + offset` lands in `0..n_in`.
#[inline]
fn valid_range(n_out: usize, n_in: usize, stride: usize, offset: isize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 {
        0
    } else {
        ((-offset) + s - 1) / s
    };
    let hi_excl = (n_in as isize - offset + s - 1).div_euclid(s);
    let lo = lo.max(0) as usize;
    let hi = hi_excl.clamp(0, n_out as isize) as usize;
    (lo.min(hi), hi)
}

struct BlockTrace<F> {
    /// Block input, CHW.
    input: Vec<F>,
    /// Pre-activation, CHW at conv resolution.
    pre: Vec<F>,
    /// Flat index into `pre` selected by each pooled output.
    argmax: Vec<usize>,
}

/// Activations of one forward pass.
pub struct Trace<F> {
    blocks: Vec<BlockTrace<F>>,
    flat: Vec<F>,
    /// Dense output before normalization.
    pub pre_norm: Vec<F>,
    norm: F,
    pub embedding: Vec<F>,
}

fn image_to_chw<F: Scalar>(image: &Raster) -> Vec<F> {
    let (h, w, c) = image.shape();
    let mut out = vec![F::zero(); h * w * c];
    for (i, &v) in image.data().iter().enumerate() {
        let ch = i % c;
        let pix = i / c;
        out[ch * h * w + pix] = F::from_f64(f64::from(v));
    }
    out
}

/// `y += a * x` over equal-length slices.
#[inline]
fn axpy<F: Scalar>(a: F, x: &[F], y: &mut [F]) {
    for (d, &v) in y.iter_mut().zip(x) {
        *d += a * v;
    }
}

/// Dot product with eight independent accumulators so it vectorizes.
#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [F::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = F::zero();
    for j in chunks * 8..n {
        tail += a[j] * b[j];
    }
    acc.iter().copied().sum::<F>() + tail
}

/// Stride-1 convolutions are computed on a zero-padded copy of the input at
/// padded row width, which turns every kernel tap into one contiguous
/// multiply-add over the whole plane. Columns past `conv_w` are scratch.
struct Padded {
    wp: usize,
    /// Length of a padded plane plus slack for the last taps.
    len: usize,
}

impl Padded {
    fn of(g: &ConvGeometry) -> Self {
        let wp = g.in_w + 2 * g.pad;
        let hp = g.in_h + 2 * g.pad;
        Self {
            wp,
            len: hp * wp + g.kernel,
        }
    }

    fn pad<F: Scalar>(&self, g: &ConvGeometry, x: &[F]) -> Vec<F> {
        let mut out = vec![F::zero(); g.in_c * self.len];
        for i in 0..g.in_c {
            for y in 0..g.in_h {
                let src = &x[(i * g.in_h + y) * g.in_w..(i * g.in_h + y + 1) * g.in_w];
                let dst = i * self.len + (y + g.pad) * self.wp + g.pad;
                out[dst..dst + g.in_w].copy_from_slice(src);
            }
        }
        out
    }
}

fn conv_forward_s1<F: Scalar>(g: &ConvGeometry, w: &[F], b: Option<&[F]>, x: &[F]) -> Vec<F> {
    let p = Padded::of(g);
    let xp = p.pad(g, x);
    let k = g.kernel;
    let span = g.conv_h * p.wp;
    let mut acc = vec![F::zero(); span];
    let mut z = vec![F::zero(); g.out_c * g.conv_h * g.conv_w];
    for o in 0..g.out_c {
        acc.iter_mut()
            .for_each(|v| *v = b.map_or(F::zero(), |b| b[o]));
        for i in 0..g.in_c {
            let xi = &xp[i * p.len..(i + 1) * p.len];
            for ky in 0..k {
                for kx in 0..k {
                    let start = ky * p.wp + kx;
                    axpy(
                        w[((o * g.in_c + i) * k + ky) * k + kx],
                        &xi[start..start + span],
                        &mut acc,
                    );
                }
            }
        }
        for y in 0..g.conv_h {
            let dst = (o * g.conv_h + y) * g.conv_w;
            z[dst..dst + g.conv_w].copy_from_slice(&acc[y * p.wp..y * p.wp + g.conv_w]);
        }
    }
    z
}

fn conv_backward_s1<F: Scalar>(
    g: &ConvGeometry,
    w: &[F],
    x: &[F],
    gz: &[F],
    gw: &mut [F],
    gx: Option<&mut [F]>,
) {
    let p = Padded::of(g);
    let xp = p.pad(g, x);
    let k = g.kernel;
    let span = g.conv_h * p.wp;
    let plane = g.conv_h * g.conv_w;
    // output gradient at padded width, scratch columns zero
    let mut gzp = vec![F::zero(); span];
    let mut gxp = gx.as_ref().map(|_| vec![F::zero(); g.in_c * p.len]);
    for o in 0..g.out_c {
        for y in 0..g.conv_h {
            let src = &gz[o * plane + y * g.conv_w..o * plane + (y + 1) * g.conv_w];
            gzp[y * p.wp..y * p.wp + g.conv_w].copy_from_slice(src);
        }
        for i in 0..g.in_c {
            let xi = &xp[i * p.len..(i + 1) * p.len];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * g.in_c + i) * k + ky) * k + kx;
                    let start = ky * p.wp + kx;
                    gw[widx] += dot(&gzp, &xi[start..start + span]);
                    if let Some(gxp) = gxp.as_mut() {
                        let base = i * p.len + start;
                        axpy(w[widx], &gzp, &mut gxp[base..base + span]);
                    }
                }
            }
        }
    }
    if let (Some(gx), Some(gxp)) = (gx, gxp) {
        for i in 0..g.in_c {
            for y in 0..g.in_h {
                let src = i * p.len + (y + g.pad) * p.wp + g.pad;
                let dst = (i * g.in_h + y) * g.in_w;
                for (d, &v) in gx[dst..dst + g.in_w]
                    .iter_mut()
                    .zip(&gxp[src..src + g.in_w])
                {
                    *d += v;
                }
            }
        }
    }
}

fn conv_forward<F: Scalar>(g: &ConvGeometry, w: &[F], b: Option<&[F]>, x: &[F]) -> Vec<F> {
    if g.stride == 1 {
        return conv_forward_s1(g, w, b, x);
    }
    let plane = g.conv_h * g.conv_w;
    let mut z = vec![F::zero(); g.out_c * plane];
    let k = g.kernel;
    for o in 0..g.out_c {
        let zo = &mut z[o * plane..(o + 1) * plane];
        if let Some(b) = b {
            zo.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..g.in_c {
            let xi = &x[i * g.in_h * g.in_w..(i + 1) * g.in_h * g.in_w];
            for ky in 0..k {
                let (y_lo, y_hi) =
                    valid_range(g.conv_h, g.in_h, g.stride, ky as isize - g.pad as isize);
                for kx in 0..k {
                    let wv = w[((o * g.in_c + i) * k + ky) * k + kx];
                    let off_x = kx as isize - g.pad as isize;
                    let (x_lo, x_hi) = valid_range(g.conv_w, g.in_w, g.stride, off_x);
                    for oy in y_lo..y_hi {
                        let iy = (oy * g.stride + ky) - g.pad;
                        let row_out = &mut zo[oy * g.conv_w..(oy + 1) * g.conv_w];
                        let row_in = &xi[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let start = (x_lo as isize + off_x) as usize;
                            let src = &row_in[start..start + (x_hi - x_lo)];
                            for (o_v, &i_v) in row_out[x_lo..x_hi].iter_mut().zip(src) {
                                *o_v += wv * i_v;
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                row_out[ox] += wv * row_in[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    z
}

/// Accumulates weight/bias gradients and, when `gx` is given, the input
/// gradient of one convolution.
fn conv_backward<F: Scalar>(
    g: &ConvGeometry,
    w: &[F],
    x: &[F],
    gz: &[F],
    gw: &mut [F],
    gb: Option<&mut [F]>,
    mut gx: Option<&mut [F]>,
) {
    let plane = g.conv_h * g.conv_w;
    let k = g.kernel;
    if let Some(gb) = gb {
        for o in 0..g.out_c {
            gb[o] += gz[o * plane..(o + 1) * plane].iter().copied().sum::<F>();
        }
    }
    if g.stride == 1 {
        return conv_backward_s1(g, w, x, gz, gw, gx);
    }
    let in_plane = g.in_h * g.in_w;
    for o in 0..g.out_c {
        let gzo = &gz[o * plane..(o + 1) * plane];
        for i in 0..g.in_c {
            let xi = &x[i * in_plane..(i + 1) * in_plane];
            for ky in 0..k {
                let (y_lo, y_hi) =
                    valid_range(g.conv_h, g.in_h, g.stride, ky as isize - g.pad as isize);
                for kx in 0..k {
                    let widx = ((o * g.in_c + i) * k + ky) * k + kx;
                    let wv = w[widx];
                    let off_x = kx as isize - g.pad as isize;
                    let (x_lo, x_hi) = valid_range(g.conv_w, g.in_w, g.stride, off_x);
                    let mut acc = F::zero();
                    for oy in y_lo..y_hi {
                        let iy = (oy * g.stride + ky) - g.pad;
                        let grow = &gzo[oy * g.conv_w..(oy + 1) * g.conv_w];
                        let xrow = &xi[iy * g.in_w..(iy + 1) * g.in_w];
                        if g.stride == 1 {
                            let start = (x_lo as isize + off_x) as usize;
                            let n = x_hi - x_lo;
                            let gs = &grow[x_lo..x_hi];
                            acc += gs
                                .iter()
                                .zip(&xrow[start..start + n])
                                .map(|(&a, &b)| a * b)
                                .sum::<F>();
                            if let Some(gx) = gx.as_deref_mut() {
                                let row = &mut gx
                                    [i * in_plane + iy * g.in_w..i * in_plane + (iy + 1) * g.in_w];
                                for (d, &gv) in row[start..start + n].iter_mut().zip(gs) {
                                    *d += wv * gv;
                                }
                            }
                        } else {
                            for ox in x_lo..x_hi {
                                let ix = (ox as isize * g.stride as isize + off_x) as usize;
                                acc += grow[ox] * xrow[ix];
                                if let Some(gx) = gx.as_deref_mut() {
                                    gx[i * in_plane + iy * g.in_w + ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
}

/// ReLU followed by max pooling; returns pooled output and argmax indices.
fn relu_pool<F: Scalar>(g: &ConvGeometry, pre: &[F]) -> (Vec<F>, Vec<usize>) {
    let plane = g.conv_h * g.conv_w;
    let mut out = Vec::with_capacity(g.out_c * g.out_h * g.out_w);
    let mut argmax = Vec::with_capacity(out.capacity());
    for c in 0..g.out_c {
        for py in 0..g.out_h {
            for px in 0..g.out_w {
                let mut best_i = c * plane + (py * g.pool) * g.conv_w + px * g.pool;
                let mut best = pre[best_i];
                for dy in 0..g.pool {
                    for dx in 0..g.pool {
                        let idx = c * plane + (py * g.pool + dy) * g.conv_w + px * g.pool + dx;
                        if pre[idx] > best {
                            best = pre[idx];
                            best_i = idx;
                        }
                    }
                }
                out.push(best.max(F::zero()));
                argmax.push(best_i);
            }
        }
    }
    (out, argmax)
}

fn check_finite<F: Scalar>(values: &[F], layer: usize) -> Result<(), ModelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(ModelError::NumericFault { layer })
    }
}

impl<F: Scalar> Parameters<F> {
    fn check_input(&self, image: &Raster) -> Result<(), ModelError> {
        if image.shape() != self.config.input_shape {
            return Err(ModelError::InputShape {
                expected: self.config.input_shape,
                found: image.shape(),
            });
        }
        Ok(())
    }

    /// Forward pass keeping every intermediate needed by [`Parameters::backward`].
    pub fn forward_trace(&self, image: &Raster) -> Result<Trace<F>, ModelError> {
        self.check_input(image)?;
        let geo = self.config.geometry()?;
        let stride = if self.config.bias { 2 } else { 1 };
        let mut x = image_to_chw::<F>(image);
        let mut blocks = Vec::with_capacity(geo.len());
        for (l, g) in geo.iter().enumerate() {
            let w = &self.tensors[l * stride].data;
            let b = self
                .config
                .bias
                .then(|| self.tensors[l * stride + 1].data.as_slice());
            let pre = conv_forward(g, w, b, &x);
            check_finite(&pre, l)?;
            let (pooled, argmax) = relu_pool(g, &pre);
            blocks.push(BlockTrace {
                input: core::mem::replace(&mut x, pooled),
                pre,
                argmax,
            });
        }
        let dense_layer = geo.len();
        let w = &self.tensors[dense_layer * stride].data;
        let n = self.config.embedding_dim;
        let flat_len = x.len();
        let mut pre_norm: Vec<F> = (0..n)
            .map(|r| {
                w[r * flat_len..(r + 1) * flat_len]
                    .iter()
                    .zip(&x)
                    .map(|(&a, &b)| a * b)
                    .sum::<F>()
            })
            .collect();
        if self.config.bias {
            for (v, &b) in pre_norm
                .iter_mut()
                .zip(&self.tensors[dense_layer * stride + 1].data)
            {
                *v += b;
            }
        }
        check_finite(&pre_norm, dense_layer)?;
        let (embedding, norm) = if self.config.normalize {
            let sq: F = pre_norm.iter().map(|&v| v * v).sum();
            let norm = sq.max(F::from_f64(NORM_EPS)).sqrt();
            (pre_norm.iter().map(|&v| v / norm).collect(), norm)
        } else {
            (pre_norm.clone(), F::one())
        };
        check_finite(&embedding, dense_layer + 1)?;
        Ok(Trace {
            blocks,
            flat: x,
            pre_norm,
            norm,
            embedding,
        })
    }

    pub fn forward(&self, image: &Raster) -> Result<Vec<F>, ModelError> {
        Ok(self.forward_trace(image)?.embedding)
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂embedding`.
    pub fn backward(&self, trace: &Trace<F>, grad_embedding: &[F], grads: &mut Gradients<F>) {
        let geo = self
            .config
            .geometry()
            .expect("parameters carry a validated config");
        let stride = if self.config.bias { 2 } else { 1 };
        let n = self.config.embedding_dim;

        // through e = z / max(|z|, sqrt(eps))
        let gz: Vec<F> = if self.config.normalize {
            let sq: F = trace.pre_norm.iter().map(|&v| v * v).sum();
            if sq > F::from_f64(NORM_EPS) {
                let dot: F = trace
                    .embedding
                    .iter()
                    .zip(grad_embedding)
                    .map(|(&e, &g)| e * g)
                    .sum();
                grad_embedding
                    .iter()
                    .zip(&trace.embedding)
                    .map(|(&g, &e)| (g - e * dot) / trace.norm)
                    .collect()
            } else {
                grad_embedding.iter().map(|&g| g / trace.norm).collect()
            }
        } else {
            grad_embedding.to_vec()
        };

        let dense_layer = geo.len();
        let flat_len = trace.flat.len();
        let w = &self.tensors[dense_layer * stride].data;
        {
            let gw = &mut grads.0[dense_layer * stride];
            for r in 0..n {
                let g = gz[r];
                for (d, &x) in gw[r * flat_len..(r + 1) * flat_len]
                    .iter_mut()
                    .zip(&trace.flat)
                {
                    *d += g * x;
                }
            }
        }
        if self.config.bias {
            for (d, &g) in grads.0[dense_layer * stride + 1].iter_mut().zip(&gz) {
                *d += g;
            }
        }
        if geo.is_empty() {
            return;
        }
        let mut g_out = vec![F::zero(); flat_len];
        for r in 0..n {
            let g = gz[r];
            for (d, &wv) in g_out.iter_mut().zip(&w[r * flat_len..(r + 1) * flat_len]) {
                *d += g * wv;
            }
        }

        for (l, g) in geo.iter().enumerate().rev() {
            let bt = &trace.blocks[l];
            // pooled gradient → conv-resolution gradient through max and ReLU
            let mut g_pre = vec![F::zero(); bt.pre.len()];
            for (&idx, &gv) in bt.argmax.iter().zip(&g_out) {
                if bt.pre[idx] > F::zero() {
                    g_pre[idx] += gv;
                }
            }
            let w = &self.tensors[l * stride].data;
            let mut g_in = (l > 0).then(|| vec![F::zero(); bt.input.len()]);
            let (gw, gb) = if self.config.bias {
                let (a, b) = grads.0.split_at_mut(l * stride + 1);
                (&mut a[l * stride][..], Some(&mut b[0][..]))
            } else {
                (&mut grads.0[l * stride][..], None)
            };
            conv_backward(g, w, &bt.input, &g_pre, gw, gb, g_in.as_deref_mut());
            match g_in {
                Some(gi) => g_out = gi,
                None => break,
            }
        }
    }
}
