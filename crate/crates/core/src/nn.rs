//! Minimal single-sample CNN building blocks with hand-written backward
//! passes.
//!
//! All parameters of a network live in one flat `Vec<f32>`; layers hold
//! offsets into it. Gradients use the same layout, so the optimizer and the
//! checkpoint writer never need to know the architecture. Convolutions are
//! lowered to im2col + SGEMM.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Allocates parameter offsets while a network is being assembled.
#[derive(Debug, Default)]
pub struct ParamLayout {
    len: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, n: usize) -> usize {
        let off = self.len;
        self.len += n;
        off
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// `C = alpha * A·B + beta * C` on row-major buffers, with optional
/// transposition of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], a_t: bool, b: &[f32], b_t: bool, beta: f32, c: &mut [f32]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are at least as long as the strided views require.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Square-kernel convolution with stride 1 and "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Conv2d {
    pub fn new(
        layout: &mut ParamLayout,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel must be odd");
        let weight = layout.alloc(out_channels * in_channels * kernel * kernel);
        let bias = layout.alloc(out_channels);
        Self {
            in_channels,
            out_channels,
            kernel,
            dilation,
            weight,
            bias,
        }
    }

    fn patch(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn init(&self, params: &mut [f32], rng: &mut ChaCha8Rng) {
        he_uniform(
            &mut params[self.weight..self.weight + self.out_channels * self.patch()],
            self.patch(),
            rng,
        );
        params[self.bias..self.bias + self.out_channels].fill(0.0);
    }

    fn im2col(&self, input: &[f32], h: usize, w: usize, cols: &mut Vec<f32>) {
        let hw = h * w;
        let k = self.kernel as isize;
        let pad = (self.kernel / 2 * self.dilation) as isize;
        let d = self.dilation as isize;
        cols.clear();
        cols.resize(self.patch() * hw, 0.0);
        for c in 0..self.in_channels {
            let plane = &input[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c as isize * k + ky) * k + kx) as usize;
                    let dst = &mut cols[row * hw..(row + 1) * hw];
                    let dy = ky * d - pad;
                    let dx = kx * d - pad;
                    for y in 0..h as isize {
                        let sy = y + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0);
                        let x1 = (w as isize - dx).min(w as isize);
                        if x0 >= x1 {
                            continue;
                        }
                        let s = (sy * w as isize + x0 + dx) as usize;
                        let t = (y * w as isize + x0) as usize;
                        let len = (x1 - x0) as usize;
                        dst[t..t + len].copy_from_slice(&plane[s..s + len]);
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f32], h: usize, w: usize, grad_input: &mut [f32]) {
        let hw = h * w;
        let k = self.kernel as isize;
        let pad = (self.kernel / 2 * self.dilation) as isize;
        let d = self.dilation as isize;
        for c in 0..self.in_channels {
            let plane = &mut grad_input[c * hw..(c + 1) * hw];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c as isize * k + ky) * k + kx) as usize;
                    let src = &cols[row * hw..(row + 1) * hw];
                    let dy = ky * d - pad;
                    let dx = kx * d - pad;
                    for y in 0..h as isize {
                        let sy = y + dy;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let x0 = (-dx).max(0);
                        let x1 = (w as isize - dx).min(w as isize);
                        if x0 >= x1 {
                            continue;
                        }
                        let s = (sy * w as isize + x0 + dx) as usize;
                        let t = (y * w as isize + x0) as usize;
                        for (g, v) in plane[s..s + (x1 - x0) as usize].iter_mut().zip(&src[t..]) {
                            *g += v;
                        }
                    }
                }
            }
        }
    }

    /// Writes `out_channels × h × w` into `out`; leaves the im2col buffer in
    /// `cols` for the backward pass.
    pub fn forward(&self, params: &[f32], input: &[f32], h: usize, w: usize, cols: &mut Vec<f32>, out: &mut Vec<f32>) {
        let hw = h * w;
        self.im2col(input, h, w, cols);
        out.clear();
        out.resize(self.out_channels * hw, 0.0);
        for (o, plane) in out.chunks_exact_mut(hw).enumerate() {
            plane.fill(params[self.bias + o]);
        }
        let weight = &params[self.weight..self.weight + self.out_channels * self.patch()];
        gemm(
            self.out_channels,
            self.patch(),
            hw,
            weight,
            false,
            cols,
            false,
            1.0,
            out,
        );
    }

    /// Accumulates parameter gradients into `grads`; when `grad_input` is
    /// given, overwrites it with the gradient w.r.t. the layer input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f32],
        cols: &[f32],
        grad_out: &[f32],
        h: usize,
        w: usize,
        grads: &mut [f32],
        scratch: &mut Vec<f32>,
        grad_input: Option<&mut Vec<f32>>,
    ) {
        let hw = h * w;
        let patch = self.patch();
        for (o, plane) in grad_out.chunks_exact(hw).enumerate() {
            grads[self.bias + o] += plane.iter().sum::<f32>();
        }
        let gw = &mut grads[self.weight..self.weight + self.out_channels * patch];
        gemm(self.out_channels, hw, patch, grad_out, false, cols, true, 1.0, gw);
        if let Some(grad_input) = grad_input {
            scratch.clear();
            scratch.resize(patch * hw, 0.0);
            let weight = &params[self.weight..self.weight + self.out_channels * patch];
            gemm(
                patch,
                self.out_channels,
                hw,
                weight,
                true,
                grad_out,
                false,
                0.0,
                scratch,
            );
            grad_input.clear();
            grad_input.resize(self.in_channels * hw, 0.0);
            self.col2im_add(scratch, h, w, grad_input);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: usize,
    pub bias: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, inputs: usize, outputs: usize) -> Self {
        let weight = layout.alloc(inputs * outputs);
        let bias = layout.alloc(outputs);
        Self {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn init(&self, params: &mut [f32], rng: &mut ChaCha8Rng) {
        he_uniform(
            &mut params[self.weight..self.weight + self.inputs * self.outputs],
            self.inputs,
            rng,
        );
        params[self.bias..self.bias + self.outputs].fill(0.0);
    }

    pub fn forward(&self, params: &[f32], x: &[f32], y: &mut Vec<f32>) {
        y.clear();
        for o in 0..self.outputs {
            let row = &params[self.weight + o * self.inputs..self.weight + (o + 1) * self.inputs];
            y.push(params[self.bias + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f32>());
        }
    }

    pub fn backward(
        &self,
        params: &[f32],
        x: &[f32],
        grad_y: &[f32],
        grads: &mut [f32],
        grad_x: Option<&mut Vec<f32>>,
    ) {
        for (o, g) in grad_y.iter().enumerate() {
            grads[self.bias + o] += g;
            let row = &mut grads[self.weight + o * self.inputs..self.weight + (o + 1) * self.inputs];
            for (r, xi) in row.iter_mut().zip(x) {
                *r += g * xi;
            }
        }
        if let Some(gx) = grad_x {
            gx.clear();
            gx.resize(self.inputs, 0.0);
            for (o, g) in grad_y.iter().enumerate() {
                let row = &params[self.weight + o * self.inputs..self.weight + (o + 1) * self.inputs];
                for (d, wv) in gx.iter_mut().zip(row) {
                    *d += g * wv;
                }
            }
        }
    }
}

fn he_uniform(w: &mut [f32], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / fan_in as f32).sqrt();
    for v in w {
        *v = rng.random_range(-bound..bound);
    }
}

pub fn relu_inplace(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the ReLU output was not positive.
pub fn relu_backward(output: &[f32], grad: &mut [f32]) {
    for (g, o) in grad.iter_mut().zip(output) {
        if *o <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 2×2 average pooling; `h` and `w` must be even.
pub fn avg_pool2(input: &[f32], channels: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; channels * oh * ow];
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let base = c * h * w;
                let s = input[base + 2 * y * w + 2 * x]
                    + input[base + 2 * y * w + 2 * x + 1]
                    + input[base + (2 * y + 1) * w + 2 * x]
                    + input[base + (2 * y + 1) * w + 2 * x + 1];
                out[(c * oh + y) * ow + x] = 0.25 * s;
            }
        }
    }
    out
}

/// 2×2 max pooling. Returns the pooled map and, per output cell, the flat
/// input index of the winner.
pub fn max_pool2(input: &[f32], channels: usize, h: usize, w: usize) -> (Vec<f32>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut arg = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        for y in 0..oh {
            for x in 0..ow {
                let base = c * h * w;
                let mut best = base + 2 * y * w + 2 * x;
                for idx in [
                    base + 2 * y * w + 2 * x + 1,
                    base + (2 * y + 1) * w + 2 * x,
                    base + (2 * y + 1) * w + 2 * x + 1,
                ] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                out.push(input[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(grad_out: &[f32], argmax: &[usize], input_len: usize) -> Vec<f32> {
    let mut g = vec![0.0; input_len];
    for (go, idx) in grad_out.iter().zip(argmax) {
        g[*idx] += go;
    }
    g
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: i32,
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    pub fn new(num_params: usize, learning_rate: f32) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
        }
    }
}

/// Plain stochastic gradient descent.
pub fn sgd_step(params: &mut [f32], grads: &[f32], learning_rate: f32) {
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= learning_rate * g;
    }
}

/// Bilinear resize of one H×W plane (align-corners = false).
pub fn bilinear_resize(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    if sh == dh && sw == dw {
        return src.to_vec();
    }
    let mut out = Vec::with_capacity(dh * dw);
    let sy_scale = sh as f32 / dh as f32;
    let sx_scale = sw as f32 / dw as f32;
    for y in 0..dh {
        let fy = ((y as f32 + 0.5) * sy_scale - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f32;
        for x in 0..dw {
            let fx = ((x as f32 + 0.5) * sx_scale - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bottom = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}
