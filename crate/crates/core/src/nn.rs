//! Dense building blocks shared by the encoder and the head: linear maps,
//! layer normalization, the gated activation and row softmax, each with an
//! explicit backward pass.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating point element type usable by every model component.
///
/// Models run in `f32`; gradient verification instantiates the same code in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + LinalgScalar
    + ScalarOperand
    + Send
    + Sync
    + Debug
    + Display
    + Default
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("finite constant")
}

/// Normal(0, std) truncated to ±2·std by resampling.
pub fn trunc_normal<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || {
        loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                return cast(z * std);
            }
        }
    })
}

pub fn normal_matrix<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), std: f64) -> Array2<T> {
    Array2::from_shape_simple_fn(shape, || {
        let z: f64 = StandardNormal.sample(rng);
        cast(z * std)
    })
}

/// Affine map `y = W x + b` applied row-wise; `weight` is `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Array2<T>,
    pub weight: Option<Array2<T>>,
    pub bias: Option<Array1<T>>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }

    /// Backward through the map. Parameter gradients are produced only when
    /// `param_grads` is set.
    pub fn backward(&self, x: ArrayView2<T>, dy: ArrayView2<T>, param_grads: bool) -> LinearGrads<T> {
        let input = dy.dot(&self.weight);
        let (weight, bias) = if param_grads {
            (Some(dy.t().dot(&x)), Some(dy.sum_axis(Axis(0))))
        } else {
            (None, None)
        };
        LinearGrads { input, weight, bias }
    }
}

/// Per-feature normalization over the last axis with learned scale and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub weight: Array1<T>,
    pub bias: Array1<T>,
    pub eps: T,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    normalized: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize, eps: T) -> Self {
        Self {
            weight: Array1::ones(dim),
            bias: Array1::zeros(dim),
            eps,
        }
    }

    pub fn forward(&self, x: ArrayView2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let n = cast::<T>(x.ncols() as f64);
        let mut normalized = x.to_owned();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in normalized.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / n;
            *s = T::one() / (var + self.eps).sqrt();
            let k = *s;
            row.mapv_inplace(|v| v * k);
        }
        let mut y = &normalized * &self.weight;
        y += &self.bias;
        (y, LayerNormCache { normalized, inv_std })
    }

    /// Returns `(dx, dweight, dbias)`.
    pub fn backward(&self, cache: &LayerNormCache<T>, dy: ArrayView2<T>) -> (Array2<T>, Array1<T>, Array1<T>) {
        let dweight = (&dy * &cache.normalized).sum_axis(Axis(0));
        let dbias = dy.sum_axis(Axis(0));
        let dnorm = &dy * &self.weight;
        let n = cast::<T>(dy.ncols() as f64);
        let mut dx = Array2::zeros(dy.raw_dim());
        for (((mut out, g), xh), &s) in dx
            .rows_mut()
            .into_iter()
            .zip(dnorm.rows())
            .zip(cache.normalized.rows())
            .zip(cache.inv_std.iter())
        {
            let mean_g = g.sum() / n;
            let mean_gx = g.dot(&xh) / n;
            Zip::from(&mut out)
                .and(&g)
                .and(&xh)
                .for_each(|o, &gi, &xi| *o = s * (gi - mean_g - xi * mean_gx));
        }
        (dx, dweight, dbias)
    }
}

const GELU_GATE: f64 = 1.702;

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Sigmoid-gated GELU approximation, `x · σ(1.702 x)`.
pub fn quick_gelu<T: Real>(x: &Array2<T>) -> Array2<T> {
    let k = cast::<T>(GELU_GATE);
    x.mapv(|v| v * sigmoid(k * v))
}

pub fn quick_gelu_backward<T: Real>(x: &Array2<T>, dy: ArrayView2<T>) -> Array2<T> {
    let k = cast::<T>(GELU_GATE);
    let mut dx = x.clone();
    Zip::from(&mut dx).and(&dy).for_each(|v, &g| {
        let s = sigmoid(k * *v);
        *v = g * (s + k * *v * s * (T::one() - s));
    });
    dx
}

/// Numerically stable softmax of each row.
pub fn softmax_rows<T: Real>(x: &Array2<T>) -> Array2<T> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        softmax_in_place(row.view_mut());
    }
    out
}

pub fn softmax_in_place<T: Real>(mut row: ndarray::ArrayViewMut1<T>) {
    let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    row.mapv_inplace(|v| (v - max).exp());
    let total = row.sum();
    row.mapv_inplace(|v| v / total);
}

pub fn softmax<T: Real>(x: ArrayView1<T>) -> Array1<T> {
    let mut out = x.to_owned();
    softmax_in_place(out.view_mut());
    out
}

/// Backward of a row softmax given its output `p`.
pub fn softmax_rows_backward<T: Real>(p: &Array2<T>, dp: &Array2<T>) -> Array2<T> {
    let mut ds = p * dp;
    for (mut row, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
        let total = row.sum();
        Zip::from(&mut row).and(&prow).for_each(|d, &pi| *d = *d - pi * total);
    }
    ds
}

pub fn all_finite<'a, T: Real, I: IntoIterator<Item = &'a T>>(values: I) -> bool {
    values.into_iter().all(|v| v.is_finite())
}
