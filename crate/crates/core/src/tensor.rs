//! Dense row-major `f64` tensors and the numerical kernels used by the
//! channel and fusion code.
//!
//! Layout is fixed: the last axis is contiguous. Every operation returns a
//! fresh tensor; nothing mutates a tensor after construction.

use std::fmt;

use crate::error::{dim_err, Error, Result};

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

/// How the kernel of [`Tensor::conv2d`] is laid out and applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// `1 x 1 x C_in x C_out`
    Pointwise,
    /// `k x k x C x 1`, one filter per channel.
    Depthwise,
    /// `k x k x C_in x C_out`
    Dense,
}

/// Splits `shape` around `axis` into (outer, len, inner) element counts.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn broadcast_shapes(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat offset into a (possibly broadcast) batch of `src_shape` for the
/// multi-index `idx` of the full broadcast batch shape.
fn broadcast_offset(idx: &[usize], src_shape: &[usize]) -> usize {
    let skip = idx.len() - src_shape.len();
    let mut off = 0;
    for (k, &d) in src_shape.iter().enumerate() {
        let i = if d == 1 { 0 } else { idx[skip + k] };
        off = off * d + i;
    }
    off
}

fn increment(idx: &mut [usize], shape: &[usize]) {
    for k in (0..shape.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return dim_err(format!("shape {shape:?} must be nonempty with positive dims"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return dim_err(format!(
                "shape {shape:?} needs {n} elements, got {}",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; for internal call sites whose shapes are
    /// already validated.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    /// Builds a tensor from a function of the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), (0..n).map(f).collect())
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.rank() {
            return dim_err(format!("axis {axis} out of range for shape {:?}", self.shape));
        }
        Ok(())
    }

    pub fn at(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.rank(), "index rank mismatch");
        let mut off = 0;
        for (&i, &d) in idx.iter().zip(&self.shape) {
            assert!(i < d, "index {idx:?} out of bounds for {:?}", self.shape);
            off = off * d + i;
        }
        self.data[off]
    }

    // ---- layout ----------------------------------------------------------

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return dim_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        Ok(Self::from_parts(shape.to_vec(), self.data.clone()))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return dim_err(format!("invalid permutation {perm:?} for shape {:?}", self.shape));
        }
        let mut src_strides = vec![1usize; rank];
        for k in (0..rank.saturating_sub(1)).rev() {
            src_strides[k] = src_strides[k + 1] * self.shape[k + 1];
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let strides: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
        let mut data = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        // innermost axis walked in a tight loop
        let last = rank - 1;
        let (n_last, s_last) = (out_shape[last], strides[last]);
        let outer = self.numel() / n_last;
        for _ in 0..outer {
            let base: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
            data.extend((0..n_last).map(|j| self.data[base + j * s_last]));
            increment(&mut idx[..last], &out_shape[..last]);
        }
        Ok(Self::from_parts(out_shape, data))
    }

    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        self.check_axis(a)?;
        self.check_axis(b)?;
        let mut perm: Vec<usize> = (0..self.rank()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    /// Removes `axis`, which must have length 1.
    pub fn squeeze(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        if self.shape[axis] != 1 || self.rank() == 1 {
            return dim_err(format!("cannot squeeze axis {axis} of {:?}", self.shape));
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        self.reshape(&shape)
    }

    /// Slice at `index` along `axis`, dropping that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        if index >= self.shape[axis] {
            return dim_err(format!("index {index} out of range on axis {axis} of {:?}", self.shape));
        }
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let start = (o * len + index) * inner;
            data.extend_from_slice(&self.data[start..start + inner]);
        }
        let mut shape = self.shape.clone();
        shape.remove(axis);
        if shape.is_empty() {
            shape.push(1);
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Dimension("stack of nothing".into()))?;
        if let Some(bad) = parts.iter().find(|t| t.shape != first.shape) {
            return dim_err(format!("cannot stack {:?} with {:?}", first.shape, bad.shape));
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        let data = parts.iter().flat_map(|t| t.data.iter().copied()).collect();
        Ok(Self::from_parts(shape, data))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Dimension("concat of nothing".into()))?;
        first.check_axis(axis)?;
        for t in parts {
            let compatible = t.rank() == first.rank()
                && t.shape.iter().zip(&first.shape).enumerate().all(|(k, (a, b))| k == axis || a == b);
            if !compatible {
                return dim_err(format!(
                    "cannot concat {:?} with {:?} on axis {axis}",
                    first.shape, t.shape
                ));
            }
        }
        let (outer, _, inner) = axis_split(&first.shape, axis);
        let total: usize = parts.iter().map(|t| t.shape[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for t in parts {
                let block = t.shape[axis] * inner;
                data.extend_from_slice(&t.data[o * block..(o + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        Ok(Self::from_parts(shape, data))
    }

    /// Splits the last axis into `parts` equal pieces.
    pub fn chunk(&self, parts: usize) -> Result<Vec<Tensor>> {
        let last = self.rank() - 1;
        let c = self.shape[last];
        if parts == 0 || c % parts != 0 {
            return dim_err(format!("cannot chunk last axis of {:?} into {parts}", self.shape));
        }
        let width = c / parts;
        let rows = self.numel() / c;
        let mut shape = self.shape.clone();
        shape[last] = width;
        Ok((0..parts)
            .map(|p| {
                let mut data = Vec::with_capacity(rows * width);
                for r in 0..rows {
                    let s = r * c + p * width;
                    data.extend_from_slice(&self.data[s..s + width]);
                }
                Self::from_parts(shape.clone(), data)
            })
            .collect())
    }

    pub fn broadcast_to(&self, shape: &[usize]) -> Result<Tensor> {
        match broadcast_shapes(&self.shape, shape) {
            Some(s) if s == shape => {}
            _ => return dim_err(format!("cannot broadcast {:?} to {shape:?}", self.shape)),
        }
        let mut idx = vec![0usize; shape.len()];
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(self.data[broadcast_offset(&idx, &self.shape)]);
            increment(&mut idx, shape);
        }
        Ok(Self::from_parts(shape.to_vec(), data))
    }

    // ---- elementwise -----------------------------------------------------

    fn zip_with(&self, other: &Tensor, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Self::from_parts(self.shape.clone(), data));
        }
        let shape = broadcast_shapes(&self.shape, &other.shape).ok_or_else(|| {
            Error::Dimension(format!("{op}: shapes {:?} and {:?} do not broadcast", self.shape, other.shape))
        })?;
        let a = self.broadcast_to(&shape)?;
        let b = other.broadcast_to(&shape)?;
        a.zip_with(&b, op, f)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    // ---- reductions ------------------------------------------------------

    /// Reduces `axis` with `f`, keeping it as a length-1 axis.
    fn reduce_axis(&self, axis: usize, f: impl Fn(&mut dyn Iterator<Item = f64>) -> f64) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut data = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                data.push(f(&mut (0..len).map(|i| self.data[base + i * inner])));
            }
        }
        let mut shape = self.shape.clone();
        shape[axis] = 1;
        Ok(Self::from_parts(shape, data))
    }

    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, |it| it.sum())
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor> {
        let n = self.shape.get(axis).copied().unwrap_or(1) as f64;
        self.reduce_axis(axis, |it| it.sum::<f64>() / n)
    }

    pub fn max_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, |it| it.fold(f64::NEG_INFINITY, f64::max))
    }

    pub fn min_axis(&self, axis: usize) -> Result<Tensor> {
        self.reduce_axis(axis, |it| it.fold(f64::INFINITY, f64::min))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    // ---- linear algebra --------------------------------------------------

    /// Batched matrix product over the trailing two axes; leading axes
    /// broadcast.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let mismatch = || {
            Error::Dimension(format!("matmul: incompatible shapes {:?} and {:?}", self.shape, other.shape))
        };
        if self.rank() < 2 || other.rank() < 2 {
            return Err(mismatch());
        }
        let (ra, rb) = (self.rank(), other.rank());
        let (m, k) = (self.shape[ra - 2], self.shape[ra - 1]);
        let (k2, n) = (other.shape[rb - 2], other.shape[rb - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let (batch_a, batch_b) = (&self.shape[..ra - 2], &other.shape[..rb - 2]);
        let batch = broadcast_shapes(batch_a, batch_b).ok_or_else(mismatch)?;
        let n_batch: usize = batch.iter().product();
        let mut out = vec![0.0; n_batch * m * n];
        let mut idx = vec![0usize; batch.len()];
        for bi in 0..n_batch {
            let a = &self.data[broadcast_offset(&idx, batch_a) * m * k..][..m * k];
            let b = &other.data[broadcast_offset(&idx, batch_b) * k * n..][..k * n];
            let c = &mut out[bi * m * n..(bi + 1) * m * n];
            for i in 0..m {
                let row = &mut c[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = a[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    for (cj, &bj) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                        *cj += aip * bj;
                    }
                }
            }
            increment(&mut idx, &batch);
        }
        let mut shape = batch;
        shape.extend_from_slice(&[m, n]);
        Ok(Self::from_parts(shape, out))
    }

    // ---- normalization ---------------------------------------------------

    /// Numerically stable softmax along `axis` (max-subtracted).
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        self.check_axis(axis)?;
        let (outer, len, inner) = axis_split(&self.shape, axis);
        let mut data = self.data.clone();
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let at = |i: usize| base + i * inner;
                let max = (0..len).map(|i| data[at(i)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for i in 0..len {
                    let e = (data[at(i)] - max).exp();
                    data[at(i)] = e;
                    total += e;
                }
                for i in 0..len {
                    data[at(i)] /= total;
                }
            }
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    /// Layer normalization over the last axis: `gamma * (x - mean) /
    /// sqrt(var + eps) + beta`, biased variance.
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
        let c = *self.shape.last().unwrap();
        if gamma.numel() != c || beta.numel() != c {
            return dim_err(format!(
                "layer_norm: affine sizes {:?}/{:?} do not match last axis of {:?}",
                gamma.shape, beta.shape, self.shape
            ));
        }
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data.chunks_exact(c) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            data.extend(
                row.iter()
                    .zip(gamma.data.iter().zip(&beta.data))
                    .map(|(v, (g, b))| g * (v - mean) * inv + b),
            );
        }
        Ok(Self::from_parts(self.shape.clone(), data))
    }

    // ---- convolution -----------------------------------------------------

    /// Same-size zero-padded 2-D cross-correlation of an `H x W x C` map.
    pub fn conv2d(&self, kernel: &Tensor, mode: ConvMode) -> Result<Tensor> {
        if self.rank() != 3 || kernel.rank() != 4 {
            return dim_err(format!(
                "conv2d expects H x W x C input and 4-D kernel, got {:?} and {:?}",
                self.shape, kernel.shape
            ));
        }
        let (h, w, cin) = (self.shape[0], self.shape[1], self.shape[2]);
        let (kh, kw, kin, kout) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
        let bad = |why: &str| {
            dim_err(format!(
                "conv2d {mode:?}: {why} (input {:?}, kernel {:?})",
                self.shape, kernel.shape
            ))
        };
        if kh != kw || kh % 2 == 0 {
            return bad("kernel must be square with odd size");
        }
        if kin != cin {
            return bad("kernel input channels differ from input");
        }
        match mode {
            ConvMode::Pointwise if kh != 1 => return bad("pointwise kernel must be 1x1"),
            ConvMode::Depthwise if kout != 1 => return bad("depthwise kernel must have one output per channel"),
            _ => {}
        }
        let pad = kh / 2;
        let cout = if mode == ConvMode::Depthwise { cin } else { kout };
        let mut out = vec![0.0; h * w * cout];
        for y in 0..h {
            for x in 0..w {
                let o = &mut out[(y * w + x) * cout..(y * w + x + 1) * cout];
                for dy in 0..kh {
                    let sy = y + dy;
                    if sy < pad || sy - pad >= h {
                        continue;
                    }
                    for dx in 0..kw {
                        let sx = x + dx;
                        if sx < pad || sx - pad >= w {
                            continue;
                        }
                        let src = &self.data[((sy - pad) * w + sx - pad) * cin..][..cin];
                        let kbase = (dy * kw + dx) * kin * kout;
                        match mode {
                            ConvMode::Depthwise => {
                                let kv = &kernel.data[kbase..kbase + cin];
                                for ((oc, &s), &k) in o.iter_mut().zip(src).zip(kv) {
                                    *oc += s * k;
                                }
                            }
                            _ => {
                                for (ci, &s) in src.iter().enumerate() {
                                    if s == 0.0 {
                                        continue;
                                    }
                                    let kv = &kernel.data[kbase + ci * kout..][..kout];
                                    for (oc, &k) in o.iter_mut().zip(kv) {
                                        *oc += s * k;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Self::from_parts(vec![h, w, cout], out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = CounterRng::new(seed);
        Tensor::from_fn(shape, |_| rng.normal())
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(Tensor::eye(2).matmul(&a).unwrap(), a);
        let ones = Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap();
        assert_eq!(a.matmul(&ones).unwrap().data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(&[3, 4], 1);
        let b = random(&[4, 5], 2);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += a.at(&[i, k]) * b.at(&[k, j]);
                }
                assert!((c.at(&[i, j]) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_broadcasts_batches() {
        let a = random(&[2, 3, 2, 4], 3);
        let b = random(&[4, 3], 4);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 3, 2, 3]);
        let a1 = a.select(0, 1).unwrap().select(0, 2).unwrap();
        let c1 = c.select(0, 1).unwrap().select(0, 2).unwrap();
        assert_eq!(a1.matmul(&b).unwrap(), c1);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(&[2, 3]).matmul(&Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let s = Tensor::zeros(&[3]).softmax(0).unwrap();
        assert!(close(s.data(), &[1.0 / 3.0; 3], 1e-15));

        let s = Tensor::new(vec![2], vec![1000.0, 0.0]).unwrap().softmax(0).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[1] < 1e-300);

        let x = [1.0f64, 2.0, 3.0];
        let z: f64 = x.iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = x.iter().map(|v| v.exp() / z).collect();
        let s = Tensor::new(vec![3], x.to_vec()).unwrap().softmax(0).unwrap();
        assert!(close(s.data(), &want, 1e-12));

        assert!(Tensor::zeros(&[3]).softmax(1).is_err());
    }

    #[test]
    fn softmax_inner_axis() {
        let x = random(&[3, 4, 5], 9);
        let s = x.softmax(1).unwrap();
        let sums = s.sum_axis(1).unwrap();
        assert!(sums.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn layer_norm_cases() {
        let g = Tensor::full(&[4], 1.0);
        let b = Tensor::zeros(&[4]);
        let y = Tensor::full(&[4], 3.5).layer_norm(&g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let g2 = Tensor::full(&[2], 1.0);
        let b2 = Tensor::zeros(&[2]);
        let y = Tensor::new(vec![2], vec![1.0, 3.0]).unwrap().layer_norm(&g2, &b2, 0.0).unwrap();
        assert!(close(y.data(), &[-1.0, 1.0], 1e-15));

        assert!(Tensor::zeros(&[3, 4]).layer_norm(&g2, &b2, 1e-5).is_err());
    }

    #[test]
    fn layer_norm_matches_two_pass() {
        let x = random(&[17], 5);
        let g = random(&[17], 6);
        let b = random(&[17], 7);
        let y = x.layer_norm(&g, &b, 1e-5).unwrap();
        let mean = x.data().iter().sum::<f64>() / 17.0;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 17.0;
        for i in 0..17 {
            let want = g.data()[i] * (x.data()[i] - mean) / (var + 1e-5).sqrt() + b.data()[i];
            assert!((y.data()[i] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn conv_identity_pointwise() {
        let x = random(&[4, 5, 3], 8);
        let k = Tensor::eye(3).reshape(&[1, 1, 3, 3]).unwrap();
        assert_eq!(x.conv2d(&k, ConvMode::Pointwise).unwrap(), x);
    }

    #[test]
    fn conv_depthwise_box_sum() {
        let x = Tensor::full(&[5, 5, 2], 1.0);
        let k = Tensor::full(&[3, 3, 2, 1], 1.0);
        let y = x.conv2d(&k, ConvMode::Depthwise).unwrap();
        assert_eq!(y.at(&[2, 2, 0]), 9.0);
        assert_eq!(y.at(&[0, 0, 1]), 4.0);
        assert_eq!(y.at(&[0, 2, 1]), 6.0);
    }

    #[test]
    fn conv_dense_matches_sliding_window() {
        let (h, w, ci, co, k) = (6, 7, 3, 4, 5);
        let x = random(&[h, w, ci], 10);
        let ker = random(&[k, k, ci, co], 11);
        let y = x.conv2d(&ker, ConvMode::Dense).unwrap();
        let p = (k / 2) as isize;
        for yy in 0..h {
            for xx in 0..w {
                for o in 0..co {
                    let mut s = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            let sy = yy as isize + dy as isize - p;
                            let sx = xx as isize + dx as isize - p;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            for i in 0..ci {
                                s += x.at(&[sy as usize, sx as usize, i]) * ker.at(&[dy, dx, i, o]);
                            }
                        }
                    }
                    assert!((y.at(&[yy, xx, o]) - s).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn conv_rejects_inconsistent_channels() {
        let x = Tensor::zeros(&[3, 3, 2]);
        assert!(x.conv2d(&Tensor::zeros(&[1, 1, 3, 2]), ConvMode::Pointwise).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[3, 3, 2, 2]), ConvMode::Depthwise).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[3, 3, 2, 2]), ConvMode::Pointwise).is_err());
        assert!(x.conv2d(&Tensor::zeros(&[2, 2, 2, 2]), ConvMode::Dense).is_err());
    }

    #[test]
    fn permute_roundtrip_and_chunk_concat() {
        let x = random(&[2, 3, 4], 12);
        let p = x.permute(&[2, 0, 1]).unwrap();
        assert_eq!(p.shape(), &[4, 2, 3]);
        assert_eq!(p.at(&[3, 1, 2]), x.at(&[1, 2, 3]));
        assert_eq!(p.permute(&[1, 2, 0]).unwrap(), x);
        assert!(x.permute(&[0, 0, 1]).is_err());

        let y = random(&[2, 6], 13);
        let parts = y.chunk(3).unwrap();
        assert!(parts.iter().all(|t| t.shape() == [2, 2]));
        let refs: Vec<&Tensor> = parts.iter().collect();
        assert_eq!(Tensor::concat(&refs, 1).unwrap(), y);
        assert!(y.chunk(4).is_err());
        assert!(Tensor::concat(&[&y, &Tensor::zeros(&[3, 2])], 1).is_err());
    }

    #[test]
    fn reductions_and_select() {
        let c = Tensor::full(&[3, 4], 2.5);
        assert_eq!(c.mean(), 2.5);
        assert!(c.mean_axis(1).unwrap().data().iter().all(|&v| v == 2.5));
        let x = Tensor::from_fn(&[2, 3], |i| i as f64);
        assert_eq!(x.sum_axis(0).unwrap().data(), &[3.0, 5.0, 7.0]);
        assert_eq!(x.max_axis(1).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(x.min_axis(1).unwrap().data(), &[0.0, 3.0]);
        assert_eq!(x.select(1, 2).unwrap().data(), &[2.0, 5.0]);
        assert_eq!(x.select(0, 1).unwrap().data(), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn broadcasting() {
        let a = Tensor::from_fn(&[2, 1], |i| i as f64);
        let b = a.broadcast_to(&[2, 3]).unwrap();
        assert_eq!(b.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let s = Tensor::full(&[3], 1.0).add(&b).unwrap();
        assert_eq!(s.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert!(Tensor::zeros(&[2]).add(&Tensor::zeros(&[3])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn tensor3() -> impl Strategy<Value = Tensor> {
            (1usize..5, 1usize..5, 1usize..6).prop_flat_map(|(a, b, c)| {
                proptest::collection::vec(-50.0f64..50.0, a * b * c)
                    .prop_map(move |d| Tensor::new(vec![a, b, c], d).unwrap())
            })
        }

        proptest! {
            #[test]
            fn softmax_rows_sum_to_one(x in tensor3(), axis in 0usize..3) {
                let s = x.softmax(axis).unwrap();
                prop_assert!(s.data().iter().all(|&v| v >= 0.0 && v.is_finite()));
                for v in s.sum_axis(axis).unwrap().data() {
                    prop_assert!((v - 1.0).abs() < 1e-9);
                }
            }

            #[test]
            fn permute_preserves_multiset(x in tensor3()) {
                let mut a = x.data().to_vec();
                let mut b = x.permute(&[1, 2, 0]).unwrap().into_data();
                a.sort_by(f64::total_cmp);
                b.sort_by(f64::total_cmp);
                prop_assert_eq!(a, b);
            }

            #[test]
            fn identity_associativity(x in tensor3()) {
                let c = x.shape()[2];
                let b = Tensor::from_fn(&[c, 3], |i| (i as f64).sin());
                let lhs = x.matmul(&Tensor::eye(c)).unwrap().matmul(&b).unwrap();
                let rhs = x.matmul(&b).unwrap();
                for (p, q) in lhs.data().iter().zip(rhs.data()) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
            }

            #[test]
            fn pointwise_identity_is_bit_exact(x in tensor3()) {
                let c = x.shape()[2];
                let k = Tensor::eye(c).reshape(&[1, 1, c, c]).unwrap();
                prop_assert_eq!(x.conv2d(&k, ConvMode::Pointwise).unwrap(), x);
            }
        }
    }
}
