//! Fused kernels with hand-written backward passes.
//!
//! Built from generic tensor ops the attention softmax costs five passes
//! over the scores forward and about as many again backward, which dominates
//! CPU training time at channel lengths in the hundreds. The GELU here is the
//! tanh approximation with its exact derivative; the stock backward rounds
//! its constants to six digits, which is visible in a finite-difference
//! check.

use candle::{CpuStorage, CustomOp1, CustomOp2, Layout, Shape, Tensor};

use crate::error::Result;

struct Softmax;
struct SoftmaxBackward;
struct Gelu;
struct GeluBackward;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044_715;

fn contiguous<'a, T>(data: &'a [T], layout: &Layout) -> candle::Result<&'a [T]> {
    match layout.contiguous_offsets() {
        Some((start, end)) => Ok(&data[start..end]),
        None => candle::bail!("softmax expects a contiguous tensor"),
    }
}

macro_rules! softmax_rows {
    ($x:expr, $n:expr, $t:ty) => {{
        let mut out: Vec<$t> = Vec::with_capacity($x.len());
        for row in $x.chunks_exact($n) {
            let max = row.iter().copied().fold(<$t>::NEG_INFINITY, <$t>::max);
            let start = out.len();
            let mut sum: $t = 0.0;
            for &v in row {
                let e = (v - max).exp();
                sum += e;
                out.push(e);
            }
            let inv = 1.0 / sum;
            for v in &mut out[start..] {
                *v *= inv;
            }
        }
        out
    }};
}

macro_rules! softmax_grad_rows {
    ($y:expr, $g:expr, $n:expr, $t:ty) => {{
        let mut out: Vec<$t> = Vec::with_capacity($y.len());
        for (yr, gr) in $y.chunks_exact($n).zip($g.chunks_exact($n)) {
            let dot: $t = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            out.extend(yr.iter().zip(gr).map(|(y, g)| y * (g - dot)));
        }
        out
    }};
}

impl CustomOp1 for Softmax {
    fn name(&self) -> &'static str {
        "fused-softmax"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle::Result<(CpuStorage, Shape)> {
        let n = layout.dims().last().copied().unwrap_or(1).max(1);
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(softmax_rows!(contiguous(x, layout)?, n, f32)),
            CpuStorage::F64(x) => CpuStorage::F64(softmax_rows!(contiguous(x, layout)?, n, f64)),
            _ => candle::bail!("softmax supports f32 and f64 only"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, _arg: &Tensor, res: &Tensor, grad_res: &Tensor) -> candle::Result<Option<Tensor>> {
        let grad = res.apply_op2_no_bwd(&grad_res.contiguous()?, &SoftmaxBackward)?;
        Ok(Some(grad))
    }
}

impl CustomOp2 for SoftmaxBackward {
    fn name(&self) -> &'static str {
        "fused-softmax-backward"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle::Result<(CpuStorage, Shape)> {
        let n = l1.dims().last().copied().unwrap_or(1).max(1);
        let out = match (s1, s2) {
            (CpuStorage::F32(y), CpuStorage::F32(g)) => {
                CpuStorage::F32(softmax_grad_rows!(contiguous(y, l1)?, contiguous(g, l2)?, n, f32))
            }
            (CpuStorage::F64(y), CpuStorage::F64(g)) => {
                CpuStorage::F64(softmax_grad_rows!(contiguous(y, l1)?, contiguous(g, l2)?, n, f64))
            }
            _ => candle::bail!("softmax backward supports matching f32 or f64 inputs only"),
        };
        Ok((out, l1.shape().clone()))
    }
}

macro_rules! map_rows {
    ($x:expr, $t:ty, $f:expr) => {{
        let f = $f;
        $x.iter().map(|&v| f(v as f64) as $t).collect::<Vec<$t>>()
    }};
}

fn gelu_value(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

fn gelu_slope(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let d_inner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

impl CustomOp1 for Gelu {
    fn name(&self) -> &'static str {
        "gelu-tanh"
    }

    fn cpu_fwd(&self, storage: &CpuStorage, layout: &Layout) -> candle::Result<(CpuStorage, Shape)> {
        let out = match storage {
            CpuStorage::F32(x) => CpuStorage::F32(map_rows!(contiguous(x, layout)?, f32, gelu_value)),
            CpuStorage::F64(x) => CpuStorage::F64(map_rows!(contiguous(x, layout)?, f64, gelu_value)),
            _ => candle::bail!("gelu supports f32 and f64 only"),
        };
        Ok((out, layout.shape().clone()))
    }

    fn bwd(&self, arg: &Tensor, _res: &Tensor, grad_res: &Tensor) -> candle::Result<Option<Tensor>> {
        let grad = arg.apply_op2_no_bwd(&grad_res.contiguous()?, &GeluBackward)?;
        Ok(Some(grad))
    }
}

impl CustomOp2 for GeluBackward {
    fn name(&self) -> &'static str {
        "gelu-tanh-backward"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle::Result<(CpuStorage, Shape)> {
        let out = match (s1, s2) {
            (CpuStorage::F32(x), CpuStorage::F32(g)) => {
                let (x, g) = (contiguous(x, l1)?, contiguous(g, l2)?);
                CpuStorage::F32(
                    x.iter()
                        .zip(g)
                        .map(|(&x, &g)| (gelu_slope(x as f64) as f32) * g)
                        .collect(),
                )
            }
            (CpuStorage::F64(x), CpuStorage::F64(g)) => {
                let (x, g) = (contiguous(x, l1)?, contiguous(g, l2)?);
                CpuStorage::F64(x.iter().zip(g).map(|(&x, &g)| gelu_slope(x) * g).collect())
            }
            _ => candle::bail!("gelu backward supports matching f32 or f64 inputs only"),
        };
        Ok((out, l1.shape().clone()))
    }
}

/// Tanh-approximated GELU, differentiable.
pub fn gelu(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Gelu)?)
}

/// Softmax over the last axis, differentiable.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op1(Softmax)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle::{DType, Device, Var, D};

    fn composed(x: &Tensor) -> Tensor {
        let max = x.max_keepdim(D::Minus1).unwrap().detach();
        let e = x.broadcast_sub(&max).unwrap().exp().unwrap();
        e.broadcast_div(&e.sum_keepdim(D::Minus1).unwrap()).unwrap()
    }

    #[test]
    fn matches_composed_softmax_and_gradient() {
        let dev = Device::Cpu;
        let x = Var::from_tensor(&Tensor::randn(0f64, 3.0, (3, 2, 7), &dev).unwrap()).unwrap();
        let w = Tensor::randn(0f64, 1.0, (3, 2, 7), &dev).unwrap();
        let fused = softmax_last(x.as_tensor()).unwrap();
        let plain = composed(x.as_tensor());
        let diff = (&fused - &plain)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(diff < 1e-14);
        let g1 = (&fused * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = (&plain * &w).unwrap().sum_all().unwrap().backward().unwrap();
        let (g1, g2) = (g1.get(x.as_tensor()).unwrap(), g2.get(x.as_tensor()).unwrap());
        let diff = (g1 - g2)
            .unwrap()
            .abs()
            .unwrap()
            .max_all()
            .unwrap()
            .to_scalar::<f64>()
            .unwrap();
        assert!(diff < 1e-14);
    }

    #[test]
    fn gelu_slope_matches_central_difference() {
        for &x in &[-4.0, -1.3, -0.2, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let numeric = (gelu_value(x + h) - gelu_value(x - h)) / (2.0 * h);
            assert!((gelu_slope(x) - numeric).abs() < 1e-8);
        }
        let x = Tensor::new(&[-1.0f64, 0.5, 3.0], &Device::Cpu).unwrap();
        let stock = x.gelu().unwrap().to_vec1::<f64>().unwrap();
        let ours = gelu(&x).unwrap().to_vec1::<f64>().unwrap();
        for (a, b) in stock.iter().zip(&ours) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn large_negative_bias_gives_exact_zeros() {
        let x = Tensor::new(&[[0.5f32, -1e9, 0.25]], &Device::Cpu).unwrap();
        let y = softmax_last(&x)
            .unwrap()
            .to_dtype(DType::F64)
            .unwrap()
            .to_vec2::<f64>()
            .unwrap();
        assert_eq!(y[0][1], 0.0);
        assert!((y[0].iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
