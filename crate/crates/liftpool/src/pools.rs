//! Baseline pooling layers: max pooling with recorded argmax indices, average
//! pooling, strided-convolution downsampling ("skip"), and max up-pooling that
//! writes values back at the recorded indices and zeros elsewhere.

use serde::{Deserialize, Serialize};

use crate::conv;
use crate::scalar::Scalar;
use crate::tensor::{PadMode, Tensor, TensorError, TensorResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub kernel: usize,
    pub stride: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig { kernel: 2, stride: 2 }
    }
}

impl PoolConfig {
    pub fn new(kernel: usize, stride: usize) -> Self {
        PoolConfig { kernel, stride }
    }
}

/// Per-window argmax positions from a max pooling pass. Indices are flat
/// within their `k x k` window (row-major), lowest index on ties, and the
/// struct remembers the pooling geometry so the paired up-pool can place
/// values back.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaxIndices {
    data: Vec<usize>,
    out_shape: Vec<usize>,
    kernel: usize,
    stride: usize,
}

impl MaxIndices {
    pub fn data(&self) -> &[usize] {
        &self.data
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }
}

fn check_pool_input<T: Scalar>(
    x: &Tensor<T>,
    cfg: PoolConfig,
) -> TensorResult<(usize, usize, usize, usize, usize, usize)> {
    if x.shape().len() != 4 {
        return Err(TensorError::BadRank {
            expected: 4,
            shape: x.shape().to_vec(),
        });
    }
    if cfg.kernel == 0 || cfg.stride == 0 {
        return Err(TensorError::Invalid("pool kernel and stride must be >= 1".into()));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if h < cfg.kernel || w < cfg.kernel {
        return Err(TensorError::Invalid(format!(
            "input {h}x{w} smaller than pooling kernel {k}",
            k = cfg.kernel
        )));
    }
    // Incomplete edge windows are dropped (floor division).
    let out_h = (h - cfg.kernel) / cfg.stride + 1;
    let out_w = (w - cfg.kernel) / cfg.stride + 1;
    Ok((n, c, h, w, out_h, out_w))
}

/// Windowed max with stride; ties resolve to the lowest in-window flat index.
pub fn max_pool2d<T: Scalar>(x: &Tensor<T>, cfg: PoolConfig) -> TensorResult<(Tensor<T>, MaxIndices)> {
    let (n, c, h, w, out_h, out_w) = check_pool_input(x, cfg)?;
    let k = cfg.kernel;
    let s = cfg.stride;
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let mut idx = vec![0usize; n * c * out_h * out_w];
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let x_base = plane * h * w;
        let o_base = plane * out_h * out_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut best = xd[x_base + (oy * s) * w + ox * s];
                let mut best_at = 0usize;
                for ky in 0..k {
                    for kx in 0..k {
                        let v = xd[x_base + (oy * s + ky) * w + (ox * s + kx)];
                        if v > best {
                            best = v;
                            best_at = ky * k + kx;
                        }
                    }
                }
                od[o_base + oy * out_w + ox] = best;
                idx[o_base + oy * out_w + ox] = best_at;
            }
        }
    }
    Ok((
        out,
        MaxIndices {
            data: idx,
            out_shape: vec![n, c, out_h, out_w],
            kernel: k,
            stride: s,
        },
    ))
}

/// Windowed mean with stride; incomplete edge windows are dropped.
pub fn avg_pool2d<T: Scalar>(x: &Tensor<T>, cfg: PoolConfig) -> TensorResult<Tensor<T>> {
    let (n, c, h, w, out_h, out_w) = check_pool_input(x, cfg)?;
    let k = cfg.kernel;
    let s = cfg.stride;
    let norm = T::one() / T::from_usize_lossy(k * k);
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let xd = x.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let x_base = plane * h * w;
        let o_base = plane * out_h * out_w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let mut acc = T::zero();
                for ky in 0..k {
                    for kx in 0..k {
                        acc += xd[x_base + (oy * s + ky) * w + (ox * s + kx)];
                    }
                }
                od[o_base + oy * out_w + ox] = acc * norm;
            }
        }
    }
    Ok(out)
}

/// Downsampling by a learned stride-2 convolution.
pub fn skip_pool2d<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> TensorResult<Tensor<T>> {
    conv::conv2d(x, w, b, 2, PadMode::Zero)
}

/// Writes `y` back at the recorded argmax positions of an `out_h x out_w`
/// plane; every other cell stays exactly zero.
pub fn max_up_pool2d<T: Scalar>(
    y: &Tensor<T>,
    idx: &MaxIndices,
    out_h: usize,
    out_w: usize,
) -> TensorResult<Tensor<T>> {
    if y.shape() != idx.out_shape.as_slice() {
        return Err(TensorError::ShapeMismatch {
            op: "max_up_pool2d",
            lhs: y.shape().to_vec(),
            rhs: idx.out_shape.clone(),
        });
    }
    let (n, c, ph, pw) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let k = idx.kernel;
    let s = idx.stride;
    let mut out = Tensor::zeros(&[n, c, out_h, out_w]);
    let yd = y.data();
    let od = out.data_mut();
    for plane in 0..n * c {
        let y_base = plane * ph * pw;
        let o_base = plane * out_h * out_w;
        for oy in 0..ph {
            for ox in 0..pw {
                let within = idx.data[y_base + oy * pw + ox];
                if within >= k * k {
                    return Err(TensorError::Invalid(format!(
                        "max index {within} outside {k}x{k} window"
                    )));
                }
                let ty = oy * s + within / k;
                let tx = ox * s + within % k;
                if ty >= out_h || tx >= out_w {
                    return Err(TensorError::Invalid(format!(
                        "max index {within} maps to ({ty},{tx}) outside {out_h}x{out_w} output"
                    )));
                }
                od[o_base + ty * out_w + tx] = yd[y_base + oy * pw + ox];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng64;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn max_pool_basic() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = max_pool2d(&x, PoolConfig::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(idx.data(), &[3]);
    }

    #[test]
    fn max_pool_tie_breaks_low() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 7.0);
        let (y, idx) = max_pool2d(&x, PoolConfig::default()).unwrap();
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(idx.data().iter().all(|&i| i == 0));
    }

    #[test]
    fn max_pool_drops_incomplete_edges() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 3, 3], |i| i as f64);
        let (y, _) = max_pool2d(&x, PoolConfig::default()).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn avg_pool_basic() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let y = avg_pool2d(&x, PoolConfig::default()).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let c = Tensor::<f64>::full(&[1, 2, 4, 4], 3.25);
        let yc = avg_pool2d(&c, PoolConfig::default()).unwrap();
        assert!(yc.data().iter().all(|&v| (v - 3.25).abs() < 1e-15));
    }

    #[test]
    fn avg_pool_equals_uniform_strided_conv() {
        let mut rng = Rng64::new(31);
        let x = Tensor::from_fn(&[2, 3, 6, 6], |_| rng.uniform(-2.0, 2.0));
        let pooled = avg_pool2d(&x, PoolConfig::default()).unwrap();
        // Oracle: channelwise 3x3 kernel holding 1/4 in its 2x2 lower-right
        // corner, stride 2, zero padding: with the K/2 offset this reads the
        // same windows the pooling does.
        let c = 3;
        let mut w = Tensor::<f64>::zeros(&[c, c, 3, 3]);
        for ch in 0..c {
            for ky in 1..3 {
                for kx in 1..3 {
                    w.data_mut()[((ch * c + ch) * 3 + ky) * 3 + kx] = 0.25;
                }
            }
        }
        let b = Tensor::zeros(&[c]);
        let viaconv = conv::conv2d(&x, &w, &b, 2, PadMode::Zero).unwrap();
        let max_diff = pooled
            .data()
            .iter()
            .zip(viaconv.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max_diff < 1e-12, "avg pool vs conv oracle diff {max_diff}");
    }

    #[test]
    fn skip_pool_identity_kernel_subsamples() {
        let x = Tensor::<f64>::from_fn(&[1, 1, 4, 4], |i| i as f64);
        let w = t(&[1, 1, 1, 1], &[1.0]);
        let b = t(&[1], &[0.0]);
        let y = skip_pool2d(&x, &w, &b).unwrap();
        assert_eq!(y.data(), &[0.0, 2.0, 8.0, 10.0]);
        let wz = t(&[1, 1, 3, 3], &[0.0; 9]);
        let yz = skip_pool2d(&x, &wz, &b).unwrap();
        assert!(yz.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_up_pool_places_values() {
        let x = t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (y, idx) = max_pool2d(&x, PoolConfig::default()).unwrap();
        let up = max_up_pool2d(&y, &idx, 2, 2).unwrap();
        assert_eq!(up.data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn max_up_pool_sparsity() {
        let mut rng = Rng64::new(13);
        let x = Tensor::from_fn(&[2, 2, 8, 8], |_| rng.uniform(-1.0, 1.0));
        let (y, idx) = max_pool2d(&x, PoolConfig::default()).unwrap();
        let up = max_up_pool2d(&y, &idx, 8, 8).unwrap();
        // At most one nonzero per 2x2 window.
        let nonzero = up.data().iter().filter(|&&v| v != 0.0).count();
        assert!(nonzero <= y.numel());
    }

    #[test]
    fn max_up_pool_projection_identity() {
        let mut rng = Rng64::new(14);
        let x = Tensor::from_fn(&[1, 1, 6, 6], |_| rng.uniform(0.5, 2.0));
        let (y, idx) = max_pool2d(&x, PoolConfig::default()).unwrap();
        let up = max_up_pool2d(&y, &idx, 6, 6).unwrap();
        let (again, _) = max_pool2d(&up, PoolConfig::default()).unwrap();
        assert_eq!(again.data(), y.data());
    }
}
