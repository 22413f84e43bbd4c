use super::kernels::{axis_extents, col2im, gemm, im2col, ConvGeom};
use super::{accumulate, Op, Tape, Var};
use crate::error::{Error, Result};

/// Per-channel statistics of a training-mode batch norm call.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Unbiased variance, as used for running estimates.
    pub var: Vec<f64>,
}

impl Tape {
    /// Matrix product over the last two axes. Leading axes of `a` are
    /// batch axes; `b` either carries the same batch axes or is a plain
    /// matrix shared by every batch entry.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_ex(a, b, false, false)
    }

    /// [`Tape::matmul`] with either operand transposed in its last two axes.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let mismatch = || Error::dim(format!("matmul of {sa:?} and {sb:?}"));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (ra, ca) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (rb, cb) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let (m, k) = if trans_a { (ca, ra) } else { (ra, ca) };
        let (kb, n) = if trans_b { (cb, rb) } else { (rb, cb) };
        if k != kb {
            return Err(mismatch());
        }
        let lead = &sa[..sa.len() - 2];
        let rhs_shared = sb.len() == 2;
        if !rhs_shared && sb[..sb.len() - 2] != *lead {
            return Err(mismatch());
        }
        let batch: usize = lead.iter().product();
        let mut out = vec![0.0; batch * m * n];
        {
            let da = self.data(a);
            let db = self.data(b);
            for i in 0..batch {
                let bi = if rhs_shared { db } else { &db[i * k * n..(i + 1) * k * n] };
                gemm(
                    m,
                    k,
                    n,
                    &da[i * m * k..(i + 1) * m * k],
                    trans_a,
                    bi,
                    trans_b,
                    &mut out[i * m * n..(i + 1) * m * n],
                    false,
                );
            }
        }
        let mut shape = lead.to_vec();
        shape.extend([m, n]);
        let op = Op::MatMul {
            a,
            b,
            trans_a,
            trans_b,
            batch,
            m,
            k,
            n,
            rhs_shared,
        };
        Ok(self.push_derived(shape, out, &[a, b], op))
    }

    /// 2-D convolution of `input[B, C_in, T, V]` with
    /// `weight[C_out, C_in, k_t, k_v]`, strided and zero-padded along `T`.
    pub fn conv2d(&mut self, input: Var, weight: Var, stride_t: usize, padding_t: usize) -> Result<Var> {
        self.check(input)?;
        self.check(weight)?;
        let si = self.shape(input).to_vec();
        let sw = self.shape(weight).to_vec();
        if si.len() != 4 || sw.len() != 4 || si[1] != sw[1] {
            return Err(Error::dim(format!("conv2d input {si:?} with weight {sw:?}")));
        }
        if stride_t == 0 {
            return Err(Error::Contract("conv2d stride must be positive".into()));
        }
        let (b, c_in, t, v) = (si[0], si[1], si[2], si[3]);
        let (c_out, kt, kv) = (sw[0], sw[2], sw[3]);
        if kt > t + 2 * padding_t || kv > v {
            return Err(Error::dim(format!(
                "conv2d kernel {kt}x{kv} larger than padded input {}x{v}",
                t + 2 * padding_t
            )));
        }
        let geom = ConvGeom {
            c_in,
            t_in: t,
            v_in: v,
            kt,
            kv,
            stride: stride_t,
            padding: padding_t,
            t_out: (t + 2 * padding_t - kt) / stride_t + 1,
            v_out: v - kv + 1,
        };
        let (rows, cols) = (geom.col_rows(), geom.col_cols());
        let in_plane = c_in * t * v;
        let mut out = vec![0.0; b * c_out * cols];
        let mut col = if geom.is_pointwise() { Vec::new() } else { vec![0.0; rows * cols] };
        {
            let x = self.data(input);
            let w = self.data(weight);
            for bi in 0..b {
                let xb = &x[bi * in_plane..(bi + 1) * in_plane];
                let src = if geom.is_pointwise() {
                    xb
                } else {
                    im2col(xb, &geom, &mut col);
                    &col
                };
                gemm(
                    c_out,
                    rows,
                    cols,
                    w,
                    false,
                    src,
                    false,
                    &mut out[bi * c_out * cols..(bi + 1) * c_out * cols],
                    false,
                );
            }
        }
        let op = Op::Conv2d {
            input,
            weight,
            geom,
            batch: b,
            c_out,
        };
        Ok(self.push_derived(vec![b, c_out, geom.t_out, geom.v_out], out, &[input, weight], op))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax axis {axis} for shape {shape:?}")));
        }
        let out = softmax_forward(self.data(x), &shape, axis);
        Ok(self.push_derived(shape, out, &[x], Op::Softmax { x, axis }))
    }

    /// Mean negative log-likelihood of `labels` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let shape = self.shape(logits).to_vec();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::dim(format!(
                "cross_entropy logits {shape:?} with {} labels",
                labels.len()
            )));
        }
        let classes = shape[1];
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index(format!("label {bad} outside [0, {classes})")));
        }
        let probs = softmax_forward(self.data(logits), &shape, 1);
        let z = self.data(logits);
        let mut loss = 0.0;
        for (row, &label) in labels.iter().enumerate() {
            let r = &z[row * classes..(row + 1) * classes];
            let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + r.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - r[label];
        }
        loss /= labels.len() as f64;
        let op = Op::CrossEntropy {
            logits,
            probs,
            labels: labels.to_vec(),
        };
        Ok(self.push_derived(vec![1], vec![loss], &[logits], op))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.data(x).iter().map(|&v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_derived(shape, out, &[x], Op::Relu { x }))
    }

    /// Batch norm over axis 1 of `x[N, C, ...]`. With `running = None` the
    /// batch's own statistics are used and returned; otherwise the given
    /// `(mean, var)` estimates normalize the input.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&[f64], &[f64])>,
    ) -> Result<(Var, Option<BatchStats>)> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(Error::dim(format!("batch_norm input {shape:?}")));
        }
        let c = shape[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm affine {:?}/{:?} for {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let (n, _, inner) = axis_extents(&shape, 1);
        let count = (n * inner) as f64;
        let xd = self.data(x);
        let (mean, var, stats) = match running {
            Some((rm, rv)) => {
                if rm.len() != c || rv.len() != c {
                    return Err(Error::dim("batch_norm running statistics length"));
                }
                (rm.to_vec(), rv.to_vec(), None)
            }
            None => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for ni in 0..n {
                    for (ci, m) in mean.iter_mut().enumerate() {
                        let base = (ni * c + ci) * inner;
                        *m += xd[base..base + inner].iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= count);
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * inner;
                        var[ci] += xd[base..base + inner]
                            .iter()
                            .map(|v| (v - mean[ci]).powi(2))
                            .sum::<f64>();
                    }
                }
                let unbiased = var
                    .iter()
                    .map(|s| if count > 1.0 { s / (count - 1.0) } else { 0.0 })
                    .collect();
                var.iter_mut().for_each(|s| *s /= count);
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let g = self.data(gamma);
        let bt = self.data(beta);
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                for j in base..base + inner {
                    let h = (xd[j] - mean[ci]) * inv_std[ci];
                    xhat[j] = h;
                    out[j] = g[ci] * h + bt[ci];
                }
            }
        }
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            batch_stats: running.is_none(),
        };
        Ok((self.push_derived(shape, out, &[x, gamma, beta], op), stats))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("mean axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_extents(&shape, axis);
        let xd = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let src = &xd[(o * len + l) * inner..(o * len + l + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v /= len as f64);
        let mut new_shape = shape.clone();
        new_shape.remove(axis);
        if new_shape.is_empty() {
            new_shape.push(1);
        }
        Ok(self.push_derived(new_shape, out, &[x], Op::MeanAxis { x, axis }))
    }

    /// Average over every axis after the first two: `[B, C, ...] -> [B, C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 3 {
            return Err(Error::dim(format!("global_avg_pool input {shape:?}")));
        }
        let rest: usize = shape[2..].iter().product();
        let flat = self.reshape(x, &[shape[0], shape[1], rest])?;
        self.mean_axis(flat, 2)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push_derived(shape, out, &[a, b], Op::Mul { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let out = self.data(x).iter().map(|v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        Ok(self.push_derived(shape, out, &[x], Op::Scale { x, factor }))
    }

    /// Add `bias[C]` along axis 1 of `x[N, C, ...]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 || self.shape(bias) != [shape[1]] {
            return Err(Error::dim(format!(
                "bias {:?} for input {shape:?}",
                self.shape(bias)
            )));
        }
        let (n, c, inner) = axis_extents(&shape, 1);
        let xd = self.data(x);
        let bd = self.data(bias);
        let mut out = xd.to_vec();
        for ni in 0..n {
            for ci in 0..c {
                let base = (ni * c + ci) * inner;
                out[base..base + inner].iter_mut().for_each(|v| *v += bd[ci]);
            }
        }
        Ok(self.push_derived(shape, out, &[x, bias], Op::AddBias { x, bias }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.data(x).to_vec();
        Ok(self.push_derived(shape.to_vec(), out, &[x], Op::Reshape { x }))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let total = self.data(x).iter().sum();
        Ok(self.push_derived(vec![1], vec![total], &[x], Op::Sum { x }))
    }

    /// `Σ_i weights[i] · inputs[i]` with constant weights.
    pub fn weighted_sum(&mut self, inputs: &[Var], weights: &[f64]) -> Result<Var> {
        if inputs.is_empty() || inputs.len() != weights.len() {
            return Err(Error::Contract(format!(
                "weighted_sum of {} inputs with {} weights",
                inputs.len(),
                weights.len()
            )));
        }
        for &v in inputs {
            self.check(v)?;
        }
        let shape = self.shape(inputs[0]).to_vec();
        let mut out = vec![0.0; self.value(inputs[0]).numel()];
        for (&v, &w) in inputs.iter().zip(weights) {
            if self.shape(v) != shape.as_slice() {
                return Err(Error::dim(format!(
                    "weighted_sum of {shape:?} and {:?}",
                    self.shape(v)
                )));
            }
            for (o, x) in out.iter_mut().zip(self.data(v)) {
                *o += w * x;
            }
        }
        let op = Op::WeightedSum {
            inputs: inputs.to_vec(),
            weights: weights.to_vec(),
        };
        Ok(self.push_derived(shape, out, inputs, op))
    }

    fn zip_same(&self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{name} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    /// Push the upstream gradient of node `id` into its inputs.
    pub(super) fn propagate(&self, id: usize, up: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                batch,
                m,
                k,
                n,
                rhs_shared,
            } => {
                let da = self.data(a);
                let db = self.data(b);
                if self.needs_grad(a) {
                    let mut ga = vec![0.0; da.len()];
                    for i in 0..batch {
                        let bi = if rhs_shared { db } else { &db[i * k * n..(i + 1) * k * n] };
                        let gi = &up[i * m * n..(i + 1) * m * n];
                        let out = &mut ga[i * m * k..(i + 1) * m * k];
                        if trans_a {
                            gemm(k, n, m, bi, trans_b, gi, true, out, false);
                        } else {
                            gemm(m, n, k, gi, false, bi, !trans_b, out, false);
                        }
                    }
                    accumulate(grads, a, ga);
                }
                if self.needs_grad(b) {
                    let mut gb = vec![0.0; db.len()];
                    for i in 0..batch {
                        let ai = &da[i * m * k..(i + 1) * m * k];
                        let gi = &up[i * m * n..(i + 1) * m * n];
                        let (out, acc) = if rhs_shared {
                            (&mut gb[..], i > 0)
                        } else {
                            (&mut gb[i * k * n..(i + 1) * k * n], false)
                        };
                        if trans_b {
                            gemm(n, m, k, gi, true, ai, trans_a, out, acc);
                        } else {
                            gemm(k, m, n, ai, !trans_a, gi, false, out, acc);
                        }
                    }
                    accumulate(grads, b, gb);
                }
            }
            &Op::Conv2d {
                input,
                weight,
                geom,
                batch,
                c_out,
            } => {
                let x = self.data(input);
                let w = self.data(weight);
                let (rows, cols) = (geom.col_rows(), geom.col_cols());
                let in_plane = geom.c_in * geom.t_in * geom.v_in;
                let need_x = self.needs_grad(input);
                let need_w = self.needs_grad(weight);
                let mut gx = if need_x { vec![0.0; x.len()] } else { Vec::new() };
                let mut gw = if need_w { vec![0.0; w.len()] } else { Vec::new() };
                let pointwise = geom.is_pointwise();
                let mut col = if pointwise { Vec::new() } else { vec![0.0; rows * cols] };
                let mut dcol = if pointwise || !need_x { Vec::new() } else { vec![0.0; rows * cols] };
                for bi in 0..batch {
                    let gy = &up[bi * c_out * cols..(bi + 1) * c_out * cols];
                    let xb = &x[bi * in_plane..(bi + 1) * in_plane];
                    if need_w {
                        let src = if pointwise {
                            xb
                        } else {
                            im2col(xb, &geom, &mut col);
                            &col
                        };
                        gemm(c_out, cols, rows, gy, false, src, true, &mut gw, true);
                    }
                    if need_x {
                        let dst = &mut gx[bi * in_plane..(bi + 1) * in_plane];
                        if pointwise {
                            gemm(rows, c_out, cols, w, true, gy, false, dst, false);
                        } else {
                            gemm(rows, c_out, cols, w, true, gy, false, &mut dcol, false);
                            col2im(&dcol, &geom, dst);
                        }
                    }
                }
                if need_x {
                    accumulate(grads, input, gx);
                }
                if need_w {
                    accumulate(grads, weight, gw);
                }
            }
            &Op::Softmax { x, axis } => {
                if !self.needs_grad(x) {
                    return;
                }
                let y = node.value.data();
                let (outer, len, inner) = axis_extents(node.value.shape(), axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |l: usize| (o * len + l) * inner + i;
                        let dot: f64 = (0..len).map(|l| up[at(l)] * y[at(l)]).sum();
                        for l in 0..len {
                            gx[at(l)] = y[at(l)] * (up[at(l)] - dot);
                        }
                    }
                }
                accumulate(grads, x, gx);
            }
            Op::CrossEntropy {
                logits,
                probs,
                labels,
            } => {
                if !self.needs_grad(*logits) {
                    return;
                }
                let classes = probs.len() / labels.len();
                let scale = up[0] / labels.len() as f64;
                let mut g: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (row, &l) in labels.iter().enumerate() {
                    g[row * classes + l] -= scale;
                }
                accumulate(grads, *logits, g);
            }
            &Op::Relu { x } => {
                if !self.needs_grad(x) {
                    return;
                }
                let g = self
                    .data(x)
                    .iter()
                    .zip(up)
                    .map(|(&v, &u)| if v > 0.0 { u } else { 0.0 })
                    .collect();
                accumulate(grads, x, g);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let shape = node.value.shape();
                let (n, c, inner) = axis_extents(shape, 1);
                let count = (n * inner) as f64;
                let g = self.data(*gamma);
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * inner;
                        for j in base..base + inner {
                            dgamma[ci] += up[j] * xhat[j];
                            dbeta[ci] += up[j];
                        }
                    }
                }
                if self.needs_grad(*x) {
                    let mut gx = vec![0.0; up.len()];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * inner;
                            for j in base..base + inner {
                                gx[j] = if *batch_stats {
                                    // dxhat = up·γ; Σdxhat = γ·dβ; Σdxhat·xhat = γ·dγ
                                    g[ci] * inv_std[ci] / count
                                        * (count * up[j] - dbeta[ci] - xhat[j] * dgamma[ci])
                                } else {
                                    g[ci] * inv_std[ci] * up[j]
                                };
                            }
                        }
                    }
                    accumulate(grads, *x, gx);
                }
                if self.needs_grad(*gamma) {
                    accumulate(grads, *gamma, dgamma);
                }
                if self.needs_grad(*beta) {
                    accumulate(grads, *beta, dbeta);
                }
            }
            &Op::MeanAxis { x, axis } => {
                if !self.needs_grad(x) {
                    return;
                }
                let (outer, len, inner) = axis_extents(self.shape(x), axis);
                let mut g = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            g[(o * len + l) * inner + i] = up[o * inner + i] / len as f64;
                        }
                    }
                }
                accumulate(grads, x, g);
            }
            &Op::Add { a, b } => {
                if self.needs_grad(a) {
                    accumulate(grads, a, up.to_vec());
                }
                if self.needs_grad(b) {
                    accumulate(grads, b, up.to_vec());
                }
            }
            &Op::Mul { a, b } => {
                if self.needs_grad(a) {
                    let g = up.iter().zip(self.data(b)).map(|(u, v)| u * v).collect();
                    accumulate(grads, a, g);
                }
                if self.needs_grad(b) {
                    let g = up.iter().zip(self.data(a)).map(|(u, v)| u * v).collect();
                    accumulate(grads, b, g);
                }
            }
            &Op::Scale { x, factor } => {
                if self.needs_grad(x) {
                    accumulate(grads, x, up.iter().map(|u| u * factor).collect());
                }
            }
            &Op::AddBias { x, bias } => {
                if self.needs_grad(x) {
                    accumulate(grads, x, up.to_vec());
                }
                if self.needs_grad(bias) {
                    let (n, c, inner) = axis_extents(node.value.shape(), 1);
                    let mut gb = vec![0.0; c];
                    for ni in 0..n {
                        for (ci, g) in gb.iter_mut().enumerate() {
                            let base = (ni * c + ci) * inner;
                            *g += up[base..base + inner].iter().sum::<f64>();
                        }
                    }
                    accumulate(grads, bias, gb);
                }
            }
            &Op::Reshape { x } => {
                if self.needs_grad(x) {
                    accumulate(grads, x, up.to_vec());
                }
            }
            &Op::Sum { x } => {
                if self.needs_grad(x) {
                    accumulate(grads, x, vec![up[0]; self.value(x).numel()]);
                }
            }
            Op::WeightedSum { inputs, weights } => {
                for (&v, &w) in inputs.iter().zip(weights) {
                    if self.needs_grad(v) {
                        accumulate(grads, v, up.iter().map(|u| u * w).collect());
                    }
                }
            }
        }
    }
}

pub(crate) fn softmax_forward(x: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
    let (outer, len, inner) = axis_extents(shape, axis);
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |l: usize| (o * len + l) * inner + i;
            let max = (0..len).map(|l| x[at(l)]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for l in 0..len {
                let e = (x[at(l)] - max).exp();
                out[at(l)] = e;
                total += e;
            }
            for l in 0..len {
                out[at(l)] /= total;
            }
        }
    }
    out
}
