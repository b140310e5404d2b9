//! Layer primitives of the generator and their exact adjoints.
//!
//! Tensors are `channels × spatial` with the spatial block row-major, last
//! axis fastest. Convolutions use 3-wide kernels on every axis; the weight of
//! output channel `o`, input channel `c` and kernel offset `k` lives at
//! `(o·cin + c)·3^d + k`.

use rayon::prelude::*;

use crate::error::{FwiError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    channels: usize,
    dims: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(channels: usize, dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = channels * dims.iter().product::<usize>();
        if data.len() != expected {
            return Err(FwiError::ShapeMismatch(format!(
                "tensor {channels}×{dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { channels, dims, data })
    }

    pub fn zeros(channels: usize, dims: Vec<usize>) -> Self {
        let n = channels * dims.iter().product::<usize>();
        Self {
            channels,
            dims,
            data: vec![0.0; n],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
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

    pub fn plane(&self) -> usize {
        self.dims.iter().product()
    }

    fn same_shape(&self, other: &Tensor) -> bool {
        self.channels == other.channels && self.dims == other.dims
    }

    pub fn dot(&self, other: &Tensor) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

pub fn kernel_len(ndim: usize) -> usize {
    3usize.pow(ndim as u32)
}

fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for a in (0..dims.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * dims[a + 1];
    }
    s
}

/// A contiguous run along the last axis shared by an output row and a
/// shifted input row.
#[derive(Debug, Clone, Copy)]
struct Run {
    out: usize,
    inp: usize,
    len: usize,
}

/// Output shape and, per kernel offset, the runs that contribute to it.
fn conv_runs(in_dims: &[usize], pad: usize) -> (Vec<usize>, Vec<Vec<Run>>) {
    let nd = in_dims.len();
    let out_dims: Vec<usize> = in_dims.iter().map(|&n| n + 2 * pad - 2).collect();
    let out_strides = strides(&out_dims);
    let in_strides = strides(in_dims);
    let last = nd - 1;
    let outer: usize = out_dims[..last].iter().product();
    let mut all = Vec::with_capacity(kernel_len(nd));
    for k in 0..kernel_len(nd) {
        // kernel offset per axis, row-major over {0,1,2}^d
        let shift: Vec<isize> = (0..nd)
            .map(|a| ((k / 3usize.pow((nd - 1 - a) as u32)) % 3) as isize - pad as isize)
            .collect();
        let lo = (-shift[last]).max(0) as usize;
        let hi = (out_dims[last] as isize).min(in_dims[last] as isize - shift[last]);
        let mut runs = Vec::new();
        if hi > lo as isize {
            let len = hi as usize - lo;
            'rows: for row in 0..outer {
                let mut out_base = 0;
                let mut in_base = 0;
                let mut rem = row;
                for a in (0..last).rev() {
                    let o = rem % out_dims[a];
                    rem /= out_dims[a];
                    let i = o as isize + shift[a];
                    if i < 0 || i >= in_dims[a] as isize {
                        continue 'rows;
                    }
                    out_base += o * out_strides[a];
                    in_base += i as usize * in_strides[a];
                }
                runs.push(Run {
                    out: out_base + lo,
                    inp: (in_base as isize + lo as isize + shift[last]) as usize,
                    len,
                });
            }
        }
        all.push(runs);
    }
    (out_dims, all)
}

/// 3-wide convolution with zero padding `pad` (0 or 1) on every axis.
pub fn conv_forward(x: &Tensor, weights: &[f64], bias: &[f64], pad: usize) -> Tensor {
    let cout = bias.len();
    let cin = x.channels;
    let nk = kernel_len(x.dims.len());
    debug_assert_eq!(weights.len(), cout * cin * nk);
    let (out_dims, runs) = conv_runs(&x.dims, pad);
    let plane_out: usize = out_dims.iter().product();
    let plane_in = x.plane();
    let mut data = vec![0.0; cout * plane_out];
    data.par_chunks_mut(plane_out.max(1)).enumerate().for_each(|(o, out)| {
        out.fill(bias[o]);
        for c in 0..cin {
            let inp = &x.data[c * plane_in..(c + 1) * plane_in];
            for (k, kruns) in runs.iter().enumerate() {
                let w = weights[(o * cin + c) * nk + k];
                for r in kruns {
                    let dst = &mut out[r.out..r.out + r.len];
                    let src = &inp[r.inp..r.inp + r.len];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
    });
    Tensor {
        channels: cout,
        dims: out_dims,
        data,
    }
}

/// Cotangents of a convolution: `(input, weights, bias)`.
pub fn conv_backward(
    x: &Tensor,
    weights: &[f64],
    grad_out: &Tensor,
    pad: usize,
) -> (Tensor, Vec<f64>, Vec<f64>) {
    let cin = x.channels;
    let cout = grad_out.channels;
    let nk = kernel_len(x.dims.len());
    let (out_dims, runs) = conv_runs(&x.dims, pad);
    debug_assert_eq!(out_dims, grad_out.dims);
    let plane_out = grad_out.plane();
    let plane_in = x.plane();
    let gy = &grad_out.data;

    let grad_bias: Vec<f64> = gy.chunks(plane_out.max(1)).map(|p| p.iter().sum()).collect();

    let mut grad_w = vec![0.0; weights.len()];
    grad_w
        .par_chunks_mut(cin * nk)
        .enumerate()
        .for_each(|(o, gw)| {
            let g = &gy[o * plane_out..(o + 1) * plane_out];
            for c in 0..cin {
                let inp = &x.data[c * plane_in..(c + 1) * plane_in];
                for (k, kruns) in runs.iter().enumerate() {
                    let mut acc = 0.0;
                    for r in kruns {
                        acc += g[r.out..r.out + r.len]
                            .iter()
                            .zip(&inp[r.inp..r.inp + r.len])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                    gw[c * nk + k] = acc;
                }
            }
        });

    let mut grad_x = vec![0.0; x.data.len()];
    grad_x
        .par_chunks_mut(plane_in.max(1))
        .enumerate()
        .for_each(|(c, gx)| {
            for o in 0..cout {
                let g = &gy[o * plane_out..(o + 1) * plane_out];
                for (k, kruns) in runs.iter().enumerate() {
                    let w = weights[(o * cin + c) * nk + k];
                    for r in kruns {
                        let dst = &mut gx[r.inp..r.inp + r.len];
                        for (d, s) in dst.iter_mut().zip(&g[r.out..r.out + r.len]) {
                            *d += w * s;
                        }
                    }
                }
            }
        });
    (
        Tensor {
            channels: cin,
            dims: x.dims.clone(),
            data: grad_x,
        },
        grad_w,
        grad_bias,
    )
}

/// For every node of `out_dims`, the flat index of its source node.
fn gather_map(out_dims: &[usize], src_dims: &[usize], src_of: impl Fn(usize, usize) -> usize) -> Vec<usize> {
    let src_strides = strides(src_dims);
    let n: usize = out_dims.iter().product();
    (0..n)
        .map(|mut flat| {
            let mut idx = 0;
            for a in (0..out_dims.len()).rev() {
                let o = flat % out_dims[a];
                flat /= out_dims[a];
                idx += src_of(a, o) * src_strides[a];
            }
            idx
        })
        .collect()
}

fn gather(x: &Tensor, out_dims: Vec<usize>, map: &[usize]) -> Tensor {
    let plane_in = x.plane();
    let mut data = Vec::with_capacity(x.channels * map.len());
    for c in 0..x.channels {
        let inp = &x.data[c * plane_in..(c + 1) * plane_in];
        data.extend(map.iter().map(|&j| inp[j]));
    }
    Tensor {
        channels: x.channels,
        dims: out_dims,
        data,
    }
}

fn scatter_add(g: &Tensor, in_dims: Vec<usize>, map: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(g.channels, in_dims);
    let plane_in = out.plane();
    let plane_out = g.plane();
    for c in 0..g.channels {
        let dst = &mut out.data[c * plane_in..(c + 1) * plane_in];
        for (&j, v) in map.iter().zip(&g.data[c * plane_out..(c + 1) * plane_out]) {
            dst[j] += v;
        }
    }
    out
}

fn upsample_map(in_dims: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_dims: Vec<usize> = in_dims.iter().map(|n| 2 * n).collect();
    let map = gather_map(&out_dims, in_dims, |_, o| o / 2);
    (out_dims, map)
}

/// Nearest-neighbour ×2 upsampling on every spatial axis.
pub fn upsample(x: &Tensor) -> Tensor {
    let (out_dims, map) = upsample_map(&x.dims);
    gather(x, out_dims, &map)
}

/// Adjoint of [`upsample`]: sums each 2×2(×2) block.
pub fn upsample_adjoint(g: &Tensor) -> Tensor {
    let in_dims: Vec<usize> = g.dims.iter().map(|n| n / 2).collect();
    let (_, map) = upsample_map(&in_dims);
    scatter_add(g, in_dims, &map)
}

fn crop_map(in_dims: &[usize], out_dims: &[usize]) -> Vec<usize> {
    let offset: Vec<usize> = in_dims.iter().zip(out_dims).map(|(i, o)| (i - o) / 2).collect();
    gather_map(out_dims, in_dims, |a, o| o + offset[a])
}

/// Central crop to `out_dims`; odd excess leaves the extra node at the end.
pub fn crop(x: &Tensor, out_dims: &[usize]) -> Tensor {
    let map = crop_map(&x.dims, out_dims);
    gather(x, out_dims.to_vec(), &map)
}

/// Adjoint of [`crop`]: zero padding back to `in_dims`.
pub fn crop_adjoint(g: &Tensor, in_dims: &[usize]) -> Tensor {
    let map = crop_map(in_dims, &g.dims);
    scatter_add(g, in_dims.to_vec(), &map)
}

pub fn prelu(x: &Tensor, slope: f64) -> Tensor {
    let data = x.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
    Tensor {
        channels: x.channels,
        dims: x.dims.clone(),
        data,
    }
}

/// Cotangents of PReLU: `(input, slope)`.
pub fn prelu_backward(x: &Tensor, slope: f64, g: &Tensor) -> (Tensor, f64) {
    let mut grad_slope = 0.0;
    let data = x
        .data
        .iter()
        .zip(&g.data)
        .map(|(&v, &gv)| {
            if v > 0.0 {
                gv
            } else {
                grad_slope += gv * v;
                slope * gv
            }
        })
        .collect();
    (
        Tensor {
            channels: x.channels,
            dims: x.dims.clone(),
            data,
        },
        grad_slope,
    )
}

const PIXEL_NORM_FLOOR: f64 = 1e-8;

/// `x_c / sqrt(mean_c x_c² + 1e−8)` at every spatial position.
pub fn pixel_norm(x: &Tensor) -> Tensor {
    let plane = x.plane();
    let ch = x.channels as f64;
    let mut out = x.clone();
    for p in 0..plane {
        let ms: f64 = (0..x.channels).map(|c| x.data[c * plane + p].powi(2)).sum::<f64>() / ch;
        let inv = 1.0 / (ms + PIXEL_NORM_FLOOR).sqrt();
        for c in 0..x.channels {
            out.data[c * plane + p] *= inv;
        }
    }
    out
}

pub fn pixel_norm_backward(x: &Tensor, g: &Tensor) -> Tensor {
    let plane = x.plane();
    let ch = x.channels as f64;
    let mut out = g.clone();
    for p in 0..plane {
        let ms: f64 = (0..x.channels).map(|c| x.data[c * plane + p].powi(2)).sum::<f64>() / ch;
        let s = (ms + PIXEL_NORM_FLOOR).sqrt();
        let gx: f64 = (0..x.channels)
            .map(|c| g.data[c * plane + p] * x.data[c * plane + p])
            .sum();
        let k = gx / (ch * s * s * s);
        for c in 0..x.channels {
            let i = c * plane + p;
            out.data[i] = g.data[i] / s - x.data[i] * k;
        }
    }
    out
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Checks a tensor pair has matching shapes before an elementwise adjoint.
pub(crate) fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(FwiError::ShapeMismatch(format!("{what}: cache and cotangent shapes differ")))
    }
}
