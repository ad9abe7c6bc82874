use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::lora::{BranchCache, LoraPair, Target};
use crate::nn::{all_finite, cast, softmax_rows, softmax_rows_backward, Linear, Real};

/// `softmax(Q Kᵀ / √d_k) V` for one head, with the probability matrix.
fn scaled_dot_product<T: Real>(q: ArrayView2<T>, k: ArrayView2<T>, v: ArrayView2<T>) -> (Array2<T>, Array2<T>) {
    let scale = T::one() / cast::<T>(q.ncols() as f64).sqrt();
    let scores = q.dot(&k.t()) * scale;
    let probs = softmax_rows(&scores);
    (probs.dot(&v), probs)
}

/// Attention for a single head over `tokens × d_k` projections.
pub fn attention_head<T: Real>(q: ArrayView2<T>, k: ArrayView2<T>, v: ArrayView2<T>) -> Result<Array2<T>> {
    if q.dim() != k.dim() || k.dim() != v.dim() {
        return Err(Error::shape("attention head operands", q.shape(), k.shape()));
    }
    if !(all_finite(q.iter()) && all_finite(k.iter()) && all_finite(v.iter())) {
        return Err(Error::Numeric("non-finite attention input".into()));
    }
    Ok(scaled_dot_product(q, k, v).0)
}

/// Multi-head self-attention with fused `d × d` projections. Adapters may sit
/// on the query and value projections only.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
    pub q_lora: Option<LoraPair<T>>,
    pub v_lora: Option<LoraPair<T>>,
    pub num_heads: usize,
}

/// Dropout multipliers for the adapter branch inputs of one attention layer.
#[derive(Debug, Clone, Default)]
pub struct AdapterMasks<T> {
    pub q: Option<Array2<T>>,
    pub v: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<T> {
    x: Array2<T>,
    q: Array2<T>,
    k: Array2<T>,
    v: Array2<T>,
    probs: Vec<Array2<T>>,
    concat: Array2<T>,
    q_branch: Option<BranchCache<T>>,
    v_branch: Option<BranchCache<T>>,
}

/// Which parameter families receive gradients during a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradScope {
    pub base: bool,
    pub adapters: bool,
}

impl GradScope {
    pub const ALL: GradScope = GradScope {
        base: true,
        adapters: true,
    };

    pub fn any(&self) -> bool {
        self.base || self.adapters
    }
}

impl<T: Real> Attention<T> {
    pub fn zeros(dim: usize, num_heads: usize) -> Self {
        Self {
            q: Linear::zeros(dim, dim),
            k: Linear::zeros(dim, dim),
            v: Linear::zeros(dim, dim),
            o: Linear::zeros(dim, dim),
            q_lora: None,
            v_lora: None,
            num_heads,
        }
    }

    pub fn adapter(&self, target: Target) -> Option<&LoraPair<T>> {
        match target {
            Target::Q => self.q_lora.as_ref(),
            Target::V => self.v_lora.as_ref(),
        }
    }

    pub fn check_adapters(&self) -> Result<()> {
        if let Some(pair) = &self.q_lora {
            pair.check_against(&self.q.weight)?;
        }
        if let Some(pair) = &self.v_lora {
            pair.check_against(&self.v.weight)?;
        }
        Ok(())
    }

    pub fn forward(&self, x: ArrayView2<T>, masks: AdapterMasks<T>) -> Result<(Array2<T>, AttentionCache<T>)> {
        let dim = self.q.out_dim();
        if x.ncols() != dim {
            return Err(Error::shape("attention input width", &[dim], &[x.ncols()]));
        }
        let mut q = self.q.forward(x);
        let k = self.k.forward(x);
        let mut v = self.v.forward(x);
        let q_branch = self.q_lora.as_ref().map(|pair| {
            let (delta, cache) = pair.branch_forward(x, masks.q);
            q += &delta;
            cache
        });
        let v_branch = self.v_lora.as_ref().map(|pair| {
            let (delta, cache) = pair.branch_forward(x, masks.v);
            v += &delta;
            cache
        });
        if !all_finite(q.iter()) || !all_finite(k.iter()) || !all_finite(v.iter()) {
            return Err(Error::Numeric("non-finite attention projection".into()));
        }

        let dk = dim / self.num_heads;
        let mut concat = Array2::zeros(q.raw_dim());
        let mut probs = Vec::with_capacity(self.num_heads);
        for h in 0..self.num_heads {
            let cols = s![.., h * dk..(h + 1) * dk];
            let (out, p) = scaled_dot_product(q.slice(cols), k.slice(cols), v.slice(cols));
            concat.slice_mut(cols).assign(&out);
            probs.push(p);
        }
        let y = self.o.forward(concat.view());
        let cache = AttentionCache {
            x: x.to_owned(),
            q,
            k,
            v,
            probs,
            concat,
            q_branch,
            v_branch,
        };
        Ok((y, cache))
    }

    /// Backward pass; accumulates into `grads` according to `scope` and
    /// returns the gradient with respect to the attention input.
    pub fn backward(&self, cache: &AttentionCache<T>, dy: ArrayView2<T>, scope: GradScope, grads: &mut Attention<T>) -> Array2<T> {
        let dim = self.q.out_dim();
        let dk = dim / self.num_heads;
        let scale = T::one() / cast::<T>(dk as f64).sqrt();

        let o_grads = self.o.backward(cache.concat.view(), dy, scope.base);
        accumulate_linear(&mut grads.o, o_grads.weight, o_grads.bias);
        let dconcat = o_grads.input;

        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk_mat = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dk..(h + 1) * dk];
            let dout = dconcat.slice(cols);
            let qh = cache.q.slice(cols);
            let kh = cache.k.slice(cols);
            let vh = cache.v.slice(cols);
            let dp = dout.dot(&vh.t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let ds = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&kh));
            dk_mat.slice_mut(cols).assign(&ds.t().dot(&qh));
        }

        let x = cache.x.view();
        let mut dx = Array2::zeros(cache.x.raw_dim());
        for (lin, grad_lin, d) in [
            (&self.q, &mut grads.q, &dq),
            (&self.k, &mut grads.k, &dk_mat),
            (&self.v, &mut grads.v, &dv),
        ] {
            let g = lin.backward(x, d.view(), scope.base);
            dx += &g.input;
            accumulate_linear(grad_lin, g.weight, g.bias);
        }
        for (pair, branch, grad_pair, d) in [
            (&self.q_lora, &cache.q_branch, &mut grads.q_lora, &dq),
            (&self.v_lora, &cache.v_branch, &mut grads.v_lora, &dv),
        ] {
            if let (Some(pair), Some(branch)) = (pair, branch) {
                let g = pair.branch_backward(branch, d.view());
                dx += &g.input;
                if scope.adapters {
                    let gp = grad_pair.as_mut().expect("gradient container mirrors adapters");
                    gp.a += &g.a;
                    gp.b += &g.b;
                }
            }
        }
        dx
    }

    /// Folds attached adapters into the query and value weights.
    pub fn merge_adapters(&mut self) -> Result<()> {
        if let Some(pair) = self.q_lora.take() {
            self.q.weight = crate::lora::merge(&self.q.weight, &pair)?;
        }
        if let Some(pair) = self.v_lora.take() {
            self.v.weight = crate::lora::merge(&self.v.weight, &pair)?;
        }
        Ok(())
    }
}

pub(crate) fn accumulate_linear<T: Real>(dst: &mut Linear<T>, weight: Option<Array2<T>>, bias: Option<ndarray::Array1<T>>) {
    if let Some(w) = weight {
        dst.weight += &w;
    }
    if let Some(b) = bias {
        dst.bias += &b;
    }
}
