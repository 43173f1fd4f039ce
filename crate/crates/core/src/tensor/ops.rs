use super::Tensor;
use crate::error::{Error, Result};

/// Default clamp for probabilities fed to a log in [`Tensor::binary_cross_entropy`].
pub const BCE_EPS: f64 = 1e-7;

fn matmul_kernel(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (p, &aip) in a[i * k..(i + 1) * k].iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in row.iter_mut().zip(&b[p * m..(p + 1) * m]) {
                *o += aip * bpj;
            }
        }
    }
    out
}

/// `a[n×k] · b[m×k]ᵀ`
fn matmul_nt_kernel(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let ai = &a[i * k..(i + 1) * k];
        for j in 0..m {
            let bj = &b[j * k..(j + 1) * k];
            out[i * m + j] = ai.iter().zip(bj).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `a[k×n]ᵀ · b[k×m]`
fn matmul_tn_kernel(a: &[f64], b: &[f64], k: usize, n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for p in 0..k {
        let brow = &b[p * m..(p + 1) * m];
        for i in 0..n {
            let api = a[p * n + i];
            if api == 0.0 {
                continue;
            }
            for (o, &bpj) in out[i * m..(i + 1) * m].iter_mut().zip(brow) {
                *o += api * bpj;
            }
        }
    }
    out
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NumericDomain {
            op,
            detail: format!("non-finite input {} at flat index {i}", data[i]),
        }),
        None => Ok(()),
    }
}

impl Tensor {
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (n, k) = self.dims2("matmul")?;
        let (k2, m) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", self.shape(), rhs.shape()));
        }
        let data = matmul_kernel(self.data(), rhs.data(), n, k, m);
        Ok(Tensor::from_op(
            "matmul",
            vec![n, m],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, p| {
                let ga = p[0].requires_grad().then(|| matmul_nt_kernel(g, p[1].data(), n, m, k));
                let gb = p[1].requires_grad().then(|| matmul_tn_kernel(p[0].data(), g, n, k, m));
                vec![ga, gb]
            }),
        ))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("transpose")?;
        let src = self.data();
        let mut data = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                data[j * n + i] = src[i * m + j];
            }
        }
        Ok(Tensor::from_op(
            "transpose",
            vec![m, n],
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; n * m];
                for i in 0..n {
                    for j in 0..m {
                        out[i * m + j] = g[j * n + i];
                    }
                }
                vec![Some(out)]
            }),
        ))
    }

    fn zip_same_shape(&self, rhs: &Tensor, op: &'static str, f: fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(op, self.shape(), rhs.shape()));
        }
        Ok(self.data().iter().zip(rhs.data()).map(|(&a, &b)| f(a, b)).collect())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(rhs, "add", |a, b| a + b)?;
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, _, p| {
                vec![
                    p[0].requires_grad().then(|| g.to_vec()),
                    p[1].requires_grad().then(|| g.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(rhs, "sub", |a, b| a - b)?;
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, _, p| {
                vec![
                    p[0].requires_grad().then(|| g.to_vec()),
                    p[1].requires_grad().then(|| g.iter().map(|v| -v).collect()),
                ]
            }),
        ))
    }

    /// Element-wise product.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        let data = self.zip_same_shape(rhs, "mul", |a, b| a * b)?;
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, _, p| {
                let ga = p[0]
                    .requires_grad()
                    .then(|| g.iter().zip(p[1].data()).map(|(g, b)| g * b).collect());
                let gb = p[1]
                    .requires_grad()
                    .then(|| g.iter().zip(p[0].data()).map(|(g, a)| g * a).collect());
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        let data = self.data().iter().map(|v| v * c).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|v| v * c).collect())]),
        )
    }

    /// Adds a length-`d` bias (shape `[d]` or `[1×d]`) to every row of `[n×d]`.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, d) = self.dims2("add_row")?;
        if bias.numel() != d || bias.rank() > 2 || (bias.rank() == 2 && bias.shape()[0] != 1) {
            return Err(Error::shape("add_row", self.shape(), bias.shape()));
        }
        let b = bias.data();
        let data = self
            .data()
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(x, y)| x + y))
            .collect();
        Ok(Tensor::from_op(
            "add_row",
            vec![n, d],
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, _, p| {
                let gb = p[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for row in g.chunks_exact(d) {
                        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![p[0].requires_grad().then(|| g.to_vec()), gb]
            }),
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![1],
            vec![total],
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel().max(1) as f64)
    }

    /// Same values under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape("reshape", self.shape(), shape));
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(|g, _, _| vec![Some(g.to_vec())]),
        ))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (n, m) = self.dims2("softmax_rows")?;
        if m == 0 {
            return Err(Error::shape("softmax_rows", self.shape(), &[n, 1]));
        }
        check_finite("softmax_rows", self.data())?;
        let mut data = Vec::with_capacity(n * m);
        for row in self.data().chunks_exact(m) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            data.extend(row.iter().map(|v| (v - mx).exp()));
            let z: f64 = data[start..].iter().sum();
            data[start..].iter_mut().for_each(|v| *v /= z);
        }
        Ok(Tensor::from_op(
            "softmax_rows",
            vec![n, m],
            data,
            vec![self.clone()],
            Box::new(move |g, y, _| {
                let mut out = vec![0.0; n * m];
                for i in 0..n {
                    let (gi, yi) = (&g[i * m..(i + 1) * m], &y[i * m..(i + 1) * m]);
                    let dot: f64 = gi.iter().zip(yi).map(|(a, b)| a * b).sum();
                    for j in 0..m {
                        out[i * m + j] = yi[j] * (gi[j] - dot);
                    }
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Per-row normalization with biased variance, then `gamma * x̂ + beta`.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let (n, d) = self.dims2("layer_norm")?;
        if gamma.numel() != d || beta.numel() != d {
            return Err(Error::shape("layer_norm", self.shape(), gamma.shape()));
        }
        if !(eps > 0.0) {
            return Err(Error::Contract(format!("layer_norm eps must be > 0, got {eps}")));
        }
        let (gm, bt) = (gamma.data(), beta.data());
        let mut xhat = Vec::with_capacity(n * d);
        let mut inv_std = Vec::with_capacity(n);
        for row in self.data().chunks_exact(d) {
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|v| (v - mean) * is));
        }
        let data = xhat
            .chunks_exact(d)
            .flat_map(|row| row.iter().enumerate().map(|(j, v)| gm[j] * v + bt[j]))
            .collect();
        Ok(Tensor::from_op(
            "layer_norm",
            vec![n, d],
            data,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g, _, p| {
                let gm = p[1].data();
                let gx = p[0].requires_grad().then(|| {
                    let mut out = vec![0.0; n * d];
                    for i in 0..n {
                        let gi = &g[i * d..(i + 1) * d];
                        let xi = &xhat[i * d..(i + 1) * d];
                        let dxhat: Vec<f64> = gi.iter().zip(gm).map(|(a, b)| a * b).collect();
                        let mean_dx = dxhat.iter().sum::<f64>() / d as f64;
                        let mean_dx_x = dxhat.iter().zip(xi).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            out[i * d + j] = inv_std[i] * (dxhat[j] - mean_dx - xi[j] * mean_dx_x);
                        }
                    }
                    out
                });
                let ggamma = p[1].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for (gi, xi) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                        for j in 0..d {
                            acc[j] += gi[j] * xi[j];
                        }
                    }
                    acc
                });
                let gbeta = p[2].requires_grad().then(|| {
                    let mut acc = vec![0.0; d];
                    for gi in g.chunks_exact(d) {
                        acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v);
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            }),
        ))
    }

    /// Exact GELU, `x·Φ(x)`.
    pub fn gelu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x * std_normal_cdf(x)).collect();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, _, p| {
                let out = g
                    .iter()
                    .zip(p[0].data())
                    .map(|(g, &x)| g * (std_normal_cdf(x) + x * std_normal_pdf(x)))
                    .collect();
                vec![Some(out)]
            }),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let data = self
            .data()
            .iter()
            .map(|&x| {
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        Tensor::from_op(
            "sigmoid",
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(|g, y, _| vec![Some(g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect())]),
        )
    }

    /// Column-wise concatenation `[n×p] ⧺ [n×q] -> [n×(p+q)]`.
    pub fn concat_cols(&self, rhs: &Tensor) -> Result<Tensor> {
        let (n, p) = self.dims2("concat")?;
        let (n2, q) = rhs.dims2("concat")?;
        if n != n2 {
            return Err(Error::shape("concat", self.shape(), rhs.shape()));
        }
        let w = p + q;
        let mut data = Vec::with_capacity(n * w);
        for i in 0..n {
            data.extend_from_slice(&self.data()[i * p..(i + 1) * p]);
            data.extend_from_slice(&rhs.data()[i * q..(i + 1) * q]);
        }
        Ok(Tensor::from_op(
            "concat",
            vec![n, w],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, par| {
                let ga = par[0]
                    .requires_grad()
                    .then(|| (0..n).flat_map(|i| g[i * w..i * w + p].iter().copied()).collect());
                let gb = par[1]
                    .requires_grad()
                    .then(|| (0..n).flat_map(|i| g[i * w + p..(i + 1) * w].iter().copied()).collect());
                vec![ga, gb]
            }),
        ))
    }

    /// Stacks rank-2 tensors (or rank-1 rows) with a common width vertically.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let Some(first) = parts.first() else {
            return Err(Error::Contract("concat_rows of zero tensors".into()));
        };
        let width = |t: &Tensor| -> Result<(usize, usize)> {
            match t.shape() {
                &[w] => Ok((1, w)),
                &[r, w] => Ok((r, w)),
                other => Err(Error::shape("concat_rows", other, first.shape())),
            }
        };
        let (_, w) = width(first)?;
        let mut rows = Vec::with_capacity(parts.len());
        for t in parts {
            let (r, tw) = width(t)?;
            if tw != w {
                return Err(Error::shape("concat_rows", t.shape(), first.shape()));
            }
            rows.push(r);
        }
        let total: usize = rows.iter().sum();
        let data: Vec<f64> = parts.iter().flat_map(|t| t.data().iter().copied()).collect();
        Ok(Tensor::from_op(
            "concat_rows",
            vec![total, w],
            data,
            parts.to_vec(),
            Box::new(move |g, _, par| {
                let mut off = 0;
                par.iter()
                    .map(|t| {
                        let len = t.numel();
                        let slice = &g[off..off + len];
                        off += len;
                        t.requires_grad().then(|| slice.to_vec())
                    })
                    .collect()
            }),
        ))
    }

    /// Columns `start..end` of an `[n×m]` tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, m) = self.dims2("slice_cols")?;
        if start > end || end > m {
            return Err(Error::shape("slice_cols", self.shape(), &[start, end]));
        }
        let w = end - start;
        let data = self
            .data()
            .chunks_exact(m.max(1))
            .flat_map(|row| row[start..end].iter().copied())
            .collect();
        Ok(Tensor::from_op(
            "slice_cols",
            vec![n, w],
            data,
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; n * m];
                for i in 0..n {
                    out[i * m + start..i * m + end].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Rows `start..end` of an `[n×m]` tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (n, m) = self.dims2("slice_rows")?;
        if start > end || end > n {
            return Err(Error::shape("slice_rows", self.shape(), &[start, end]));
        }
        Ok(Tensor::from_op(
            "slice_rows",
            vec![end - start, m],
            self.data()[start * m..end * m].to_vec(),
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let mut out = vec![0.0; n * m];
                out[start * m..end * m].copy_from_slice(g);
                vec![Some(out)]
            }),
        ))
    }

    /// Row-wise outer product `[n×p] ⊗ [n×q] -> [n×(q·p)]`, laid out so that
    /// column `j·p + i` holds `a[r,i]·b[r,j]`, i.e. one contiguous block of
    /// `a`'s row per column of `b`.
    pub fn outer_rows(&self, rhs: &Tensor) -> Result<Tensor> {
        let (n, p) = self.dims2("outer_rows")?;
        let (n2, q) = rhs.dims2("outer_rows")?;
        if n != n2 {
            return Err(Error::shape("outer_rows", self.shape(), rhs.shape()));
        }
        let w = p * q;
        let mut data = Vec::with_capacity(n * w);
        for r in 0..n {
            let a = &self.data()[r * p..(r + 1) * p];
            for &bj in &rhs.data()[r * q..(r + 1) * q] {
                data.extend(a.iter().map(|ai| ai * bj));
            }
        }
        Ok(Tensor::from_op(
            "outer_rows",
            vec![n, w],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g, _, par| {
                let (a, b) = (par[0].data(), par[1].data());
                let ga = par[0].requires_grad().then(|| {
                    let mut out = vec![0.0; n * p];
                    for r in 0..n {
                        for j in 0..q {
                            let bj = b[r * q + j];
                            for i in 0..p {
                                out[r * p + i] += g[r * w + j * p + i] * bj;
                            }
                        }
                    }
                    out
                });
                let gb = par[1].requires_grad().then(|| {
                    let mut out = vec![0.0; n * q];
                    for r in 0..n {
                        for j in 0..q {
                            out[r * q + j] = (0..p).map(|i| g[r * w + j * p + i] * a[r * p + i]).sum();
                        }
                    }
                    out
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Identity forward; backward multiplies the upstream gradient by `-lambda`.
    pub fn grad_reverse(&self, lambda: f64) -> Result<Tensor> {
        if !(lambda >= 0.0) {
            return Err(Error::Contract(format!(
                "gradient reversal needs lambda >= 0, got {lambda}"
            )));
        }
        Ok(Tensor::from_op(
            "grad_reverse",
            self.shape().to_vec(),
            self.data().to_vec(),
            vec![self.clone()],
            Box::new(move |g, _, _| vec![Some(g.iter().map(|v| -lambda * v).collect())]),
        ))
    }

    /// Batch-mean cross-entropy of `[n×K]` logits against class indices.
    pub fn cross_entropy(&self, labels: &[usize]) -> Result<Tensor> {
        let (n, k) = self.dims2("cross_entropy")?;
        if n == 0 || labels.len() != n {
            return Err(Error::shape("cross_entropy", self.shape(), &[labels.len()]));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::Label {
                index,
                label,
                classes: k,
            });
        }
        check_finite("cross_entropy", self.data())?;
        let mut probs = Vec::with_capacity(n * k);
        let mut loss = 0.0;
        for (row, &y) in self.data().chunks_exact(k).zip(labels) {
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        let labels = labels.to_vec();
        Ok(Tensor::from_op(
            "cross_entropy",
            vec![1],
            vec![loss / n as f64],
            vec![self.clone()],
            Box::new(move |g, _, _| {
                let s = g[0] / n as f64;
                let mut out: Vec<f64> = probs.iter().map(|p| p * s).collect();
                for (i, &y) in labels.iter().enumerate() {
                    out[i * k + y] -= s;
                }
                vec![Some(out)]
            }),
        ))
    }

    /// Batch-mean binary cross-entropy of probabilities against 0/1 targets,
    /// with both log arguments clamped to `[eps, 1 - eps]`.
    pub fn binary_cross_entropy(&self, targets: &Tensor, eps: f64) -> Result<Tensor> {
        if self.shape() != targets.shape() || self.numel() == 0 {
            return Err(Error::shape("binary_cross_entropy", self.shape(), targets.shape()));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::Contract(format!("bce eps must be in (0, 0.5), got {eps}")));
        }
        if let Some(t) = targets.data().iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(Error::Contract(format!("bce target must be 0 or 1, got {t}")));
        }
        check_finite("binary_cross_entropy", self.data())?;
        let n = self.numel() as f64;
        let clamp = |v: f64| v.clamp(eps, 1.0 - eps);
        let loss = self
            .data()
            .iter()
            .zip(targets.data())
            .map(|(&p, &t)| -(t * clamp(p).ln() + (1.0 - t) * clamp(1.0 - p).ln()))
            .sum::<f64>()
            / n;
        Ok(Tensor::from_op(
            "binary_cross_entropy",
            vec![1],
            vec![loss],
            vec![self.clone(), targets.clone()],
            Box::new(move |g, _, par| {
                let s = g[0] / n;
                let inside = |v: f64| v > eps && v < 1.0 - eps;
                let gp = par[0]
                    .data()
                    .iter()
                    .zip(par[1].data())
                    .map(|(&p, &t)| {
                        let mut d = 0.0;
                        if t == 1.0 && inside(p) {
                            d -= 1.0 / p;
                        }
                        if t == 0.0 && inside(1.0 - p) {
                            d += 1.0 / (1.0 - p);
                        }
                        s * d
                    })
                    .collect();
                vec![Some(gp), None]
            }),
        ))
    }

    /// Row-wise argmax; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (_, m) = self.dims2("argmax_rows")?;
        Ok(self
            .data()
            .chunks_exact(m.max(1))
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold(
                        (0, f64::NEG_INFINITY),
                        |(bi, bv), (i, &v)| {
                            if v > bv {
                                (i, v)
                            } else {
                                (bi, bv)
                            }
                        },
                    )
                    .0
            })
            .collect())
    }
}
