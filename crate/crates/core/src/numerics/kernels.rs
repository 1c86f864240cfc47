//! Forward kernels. Every function here is pure and allocation-returning;
//! the graph backends in `graph.rs` wrap them with finiteness checks and
//! gradient bookkeeping.

use super::{NumericsError, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const MIN_ROW_NORM: f64 = 1e-12;

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), NumericsError> {
    if t.is_matrix() {
        Ok(())
    } else {
        Err(NumericsError::shape(op, &[0, 0], t.shape()))
    }
}

/// `a[m×k] · b[k×n]`
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(NumericsError::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_rows(m, n, out)
}

/// `a[m×k] · b[n×k]ᵀ`
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul_nt", a)?;
    require_matrix("matmul_nt", b)?;
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    if b.cols() != k {
        return Err(NumericsError::shape("matmul_nt", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out[i * n + j] = dot(arow, b.row(j));
        }
    }
    Tensor::from_rows(m, n, out)
}

/// `a[k×m]ᵀ · b[k×n]`
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul_tn", a)?;
    require_matrix("matmul_tn", b)?;
    let (k, m, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(NumericsError::shape("matmul_tn", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Tensor::from_rows(m, n, out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::shape("add", a.shape(), b.shape()));
    }
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data)
}

/// Adds a `[1×n]` row to every row of `a[m×n]`.
pub fn add_row(a: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("add_row", a)?;
    if bias.len() != a.cols() {
        return Err(NumericsError::shape("add_row", a.shape(), bias.shape()));
    }
    let mut out = a.clone();
    let n = a.cols();
    for row in out.data_mut().chunks_mut(n.max(1)) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

pub fn scale(a: &Tensor, c: f64) -> Tensor {
    a.map(|v| v * c)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(a: &Tensor) -> Tensor {
    a.map(gelu_scalar)
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

/// Row-wise layer norm with affine `gain`/`bias` rows.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("layer_norm", x)?;
    let n = x.cols();
    if gain.len() != n || bias.len() != n {
        return Err(NumericsError::shape("layer_norm", x.shape(), gain.shape()));
    }
    let mut out = x.clone();
    for r in 0..x.rows() {
        let (mean, inv) = row_moments(x.row(r));
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (*o - mean) * inv * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}

/// Mean and inverse standard deviation of one row.
pub fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

/// Softmax over each row restricted to permitted entries; masked entries are
/// exactly zero. `mask` is row-major with the same shape as `scores`.
pub fn masked_softmax(scores: &Tensor, mask: &[bool]) -> Result<Tensor, NumericsError> {
    require_matrix("masked_softmax", scores)?;
    if mask.len() != scores.len() {
        return Err(NumericsError::shape(
            "masked_softmax",
            scores.shape(),
            &[mask.len()],
        ));
    }
    let k = scores.cols();
    let mut out = Tensor::zeros(scores.shape());
    for r in 0..scores.rows() {
        let mrow = &mask[r * k..(r + 1) * k];
        let srow = scores.row(r);
        let max = srow
            .iter()
            .zip(mrow)
            .filter(|(_, &m)| m)
            .map(|(&s, _)| s)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(NumericsError::FullyMaskedRow { row: r });
        }
        let orow = out.row_mut(r);
        let mut sum = 0.0;
        for j in 0..k {
            if mrow[j] {
                let e = (srow[j] - max).exp();
                orow[j] = e;
                sum += e;
            }
        }
        for o in orow.iter_mut() {
            *o /= sum;
        }
    }
    Ok(out)
}

pub fn l2_normalize(x: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("l2_normalize", x)?;
    let mut out = x.clone();
    for r in 0..x.rows() {
        let norm = dot(x.row(r), x.row(r)).sqrt();
        if norm <= MIN_ROW_NORM {
            return Err(NumericsError::ZeroNorm { op: "l2_normalize", row: r });
        }
        for v in out.row_mut(r) {
            *v /= norm;
        }
    }
    Ok(out)
}

/// Mean over tokens of `1 - cos(a_i, b_i)`.
pub fn cosine_distance(a: &Tensor, b: &Tensor) -> Result<f64, NumericsError> {
    if a.shape() != b.shape() || !a.is_matrix() {
        return Err(NumericsError::shape("cosine_distance", a.shape(), b.shape()));
    }
    let mut total = 0.0;
    for r in 0..a.rows() {
        let (ar, br) = (a.row(r), b.row(r));
        let na2 = dot(ar, ar);
        let nb2 = dot(br, br);
        if na2.sqrt() <= MIN_ROW_NORM || nb2.sqrt() <= MIN_ROW_NORM {
            return Err(NumericsError::ZeroNorm { op: "cosine_distance", row: r });
        }
        // sqrt(x*x) == x exactly, so identical rows give cos == 1 exactly
        let cos = (dot(ar, br) / (na2 * nb2).sqrt()).clamp(-1.0, 1.0);
        total += 1.0 - cos;
    }
    Ok(total / a.rows() as f64)
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64, NumericsError> {
    if a.shape() != b.shape() {
        return Err(NumericsError::shape("mse", a.shape(), b.shape()));
    }
    if a.is_empty() {
        return Err(NumericsError::shape("mse", a.shape(), b.shape()));
    }
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Mean negative log-probability of the target class per row.
pub fn cross_entropy(logits: &Tensor, targets: &[usize]) -> Result<f64, NumericsError> {
    require_matrix("cross_entropy", logits)?;
    if targets.len() != logits.rows() || targets.is_empty() {
        return Err(NumericsError::shape(
            "cross_entropy",
            logits.shape(),
            &[targets.len()],
        ));
    }
    let classes = logits.cols();
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(NumericsError::IndexOutOfRange { index: t, bound: classes });
        }
        let row = logits.row(r);
        total += log_sum_exp(row) - row[t];
    }
    Ok(total / targets.len() as f64)
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor, NumericsError> {
    require_matrix("slice_rows", a)?;
    if start + len > a.rows() {
        return Err(NumericsError::IndexOutOfRange { index: start + len, bound: a.rows() });
    }
    let c = a.cols();
    Tensor::from_rows(len, c, a.data()[start * c..(start + len) * c].to_vec())
}

pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor, NumericsError> {
    require_matrix("gather_rows", a)?;
    let c = a.cols();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        if i >= a.rows() {
            return Err(NumericsError::IndexOutOfRange { index: i, bound: a.rows() });
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::from_rows(idx.len(), c, data)
}

pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor, NumericsError> {
    require_matrix("slice_cols", a)?;
    if start + len > a.cols() {
        return Err(NumericsError::IndexOutOfRange { index: start + len, bound: a.cols() });
    }
    let mut data = Vec::with_capacity(a.rows() * len);
    for r in 0..a.rows() {
        data.extend_from_slice(&a.row(r)[start..start + len]);
    }
    Tensor::from_rows(a.rows(), len, data)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let rows = parts.first().map_or(0, |p| p.rows());
    let mut cols = 0;
    for p in parts {
        require_matrix("concat_cols", p)?;
        if p.rows() != rows {
            return Err(NumericsError::shape("concat_cols", &[rows], p.shape()));
        }
        cols += p.cols();
    }
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::from_rows(rows, cols, data)
}

pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    for p in parts {
        require_matrix("concat_rows", p)?;
    }
    Tensor::vstack(parts)
}

pub fn mean_rows(a: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("mean_rows", a)?;
    if a.rows() == 0 {
        return Err(NumericsError::Empty { op: "mean_rows" });
    }
    let c = a.cols();
    let mut out = vec![0.0; c];
    for r in 0..a.rows() {
        for (o, v) in out.iter_mut().zip(a.row(r)) {
            *o += v;
        }
    }
    let n = a.rows() as f64;
    Tensor::from_rows(1, c, out.into_iter().map(|v| v / n).collect())
}
