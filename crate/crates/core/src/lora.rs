//! Low-rank adapters for the attention query and value projections.
//!
//! A frozen projection `W0` (`d × k`) is augmented with a trainable update
//! `γ · B A`, where `A` is `r × k`, `B` is `d × r` and `γ` depends on the
//! scaling mode: `α / r` for classic LoRA and `α / √r` for the
//! rank-stabilized variant. `B` starts at zero so a freshly attached adapter
//! leaves the model output untouched.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{cast, normal_matrix, Real};
use crate::vit::EncoderConfig;

pub const LORA_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalingMode {
    Classic,
    RankStabilized,
}

/// Attention projections that may carry an adapter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Q,
    V,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Q => "q",
            Target::V => "v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdapterConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub scaling_mode: ScalingMode,
    pub targets: Vec<Target>,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 8.0,
            dropout: 0.4,
            scaling_mode: ScalingMode::RankStabilized,
            targets: vec![Target::Q, Target::V],
        }
    }
}

impl AdapterConfig {
    pub fn validate(&self, encoder: &EncoderConfig) -> Result<()> {
        compute_gamma(self.scaling_mode, self.alpha, self.rank)?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("adapter dropout {} outside [0, 1)", self.dropout)));
        }
        if self.rank > encoder.embed_dim {
            return Err(Error::config(format!(
                "adapter rank {} exceeds embedding width {}",
                self.rank, encoder.embed_dim
            )));
        }
        let mut seen = self.targets.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.targets.len() {
            return Err(Error::config("duplicate adapter target"));
        }
        Ok(())
    }

    pub fn with_rank(mut self, rank: usize) -> Self {
        self.rank = rank;
        self
    }

    pub fn targets(&self, target: Target) -> bool {
        self.targets.contains(&target)
    }

    pub fn gamma(&self) -> Result<f64> {
        compute_gamma(self.scaling_mode, self.alpha, self.rank)
    }
}

/// Scale applied to the low-rank product `B A`.
pub fn compute_gamma(mode: ScalingMode, alpha: f64, rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(Error::Domain("adapter rank must be at least 1".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("adapter alpha must be positive, got {alpha}")));
    }
    let r = rank as f64;
    Ok(match mode {
        ScalingMode::Classic => alpha / r,
        ScalingMode::RankStabilized => alpha / r.sqrt(),
    })
}

/// Trainable rank decomposition for one frozen `d × k` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<T> {
    /// `r × k`
    pub a: Array2<T>,
    /// `d × r`
    pub b: Array2<T>,
    pub gamma: T,
}

/// Intermediates of one adapter branch evaluation over a token matrix.
#[derive(Debug, Clone)]
pub struct BranchCache<T> {
    /// Branch input after dropout.
    input: Array2<T>,
    /// Inverted-dropout multipliers, absent when dropout was not applied.
    mask: Option<Array2<T>>,
    /// `input · Aᵀ`
    down: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct BranchGrads<T> {
    pub input: Array2<T>,
    pub a: Array2<T>,
    pub b: Array2<T>,
}

impl<T: Real> LoraPair<T> {
    /// Gaussian `A`, zero `B`.
    pub fn init<R: Rng + ?Sized>(config: &AdapterConfig, in_dim: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        let gamma = cast(config.gamma()?);
        Ok(Self {
            a: normal_matrix(rng, (config.rank, in_dim), LORA_INIT_STD),
            b: Array2::zeros((out_dim, config.rank)),
            gamma,
        })
    }

    pub fn zeros(config: &AdapterConfig, in_dim: usize, out_dim: usize) -> Result<Self> {
        Ok(Self {
            a: Array2::zeros((config.rank, in_dim)),
            b: Array2::zeros((out_dim, config.rank)),
            gamma: cast(config.gamma()?),
        })
    }

    pub fn rank(&self) -> usize {
        self.a.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.a.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.b.nrows()
    }

    pub fn check_against(&self, w0: &Array2<T>) -> Result<()> {
        if self.b.ncols() != self.a.nrows() {
            return Err(Error::shape("lora B columns", &[self.a.nrows()], &[self.b.ncols()]));
        }
        if (self.out_dim(), self.in_dim()) != w0.dim() {
            return Err(Error::shape(
                "lora pair vs frozen weight",
                w0.shape(),
                &[self.out_dim(), self.in_dim()],
            ));
        }
        Ok(())
    }

    /// Low-rank update `γ · B A`.
    pub fn delta(&self) -> Array2<T> {
        self.b.dot(&self.a) * self.gamma
    }

    /// `γ · B A drop(x)` for every row of `x`. `mask` holds the
    /// inverted-dropout multipliers for the branch input.
    pub fn branch_forward(&self, x: ArrayView2<T>, mask: Option<Array2<T>>) -> (Array2<T>, BranchCache<T>) {
        let input = match &mask {
            Some(m) => &x * m,
            None => x.to_owned(),
        };
        let down = input.dot(&self.a.t());
        let out = down.dot(&self.b.t()) * self.gamma;
        (out, BranchCache { input, mask, down })
    }

    pub fn branch_backward(&self, cache: &BranchCache<T>, dy: ArrayView2<T>) -> BranchGrads<T> {
        let scaled = &dy * self.gamma;
        let b = scaled.t().dot(&cache.down);
        let ddown = scaled.dot(&self.b);
        let a = ddown.t().dot(&cache.input);
        let mut input = ddown.dot(&self.a);
        if let Some(m) = &cache.mask {
            input *= m;
        }
        BranchGrads { input, a, b }
    }
}

/// Inverted-dropout multipliers: each entry is `0` with probability `rate`,
/// otherwise `1 / (1 - rate)`. A zero rate yields no mask.
pub fn dropout_mask<T: Real, R: Rng + ?Sized>(shape: (usize, usize), rate: f64, rng: &mut R) -> Option<Array2<T>> {
    if rate <= 0.0 {
        return None;
    }
    let keep = cast::<T>(1.0 / (1.0 - rate));
    Some(Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < rate {
            T::zero()
        } else {
            keep
        }
    }))
}

/// `W0 x + γ B A drop(x)`. Dropout (training only) touches the adapter branch
/// input and never the frozen path.
pub fn adapted_apply<T: Real, R: Rng + ?Sized>(
    x: ArrayView1<T>,
    w0: &Array2<T>,
    pair: &LoraPair<T>,
    dropout: Option<(f64, &mut R)>,
) -> Result<Array1<T>> {
    pair.check_against(w0)?;
    if x.len() != w0.ncols() {
        return Err(Error::shape("adapted_apply input", &[w0.ncols()], &[x.len()]));
    }
    let row = x.insert_axis(ndarray::Axis(0));
    let mask = dropout.and_then(|(rate, rng)| dropout_mask(row.dim(), rate, rng));
    let (branch, _) = pair.branch_forward(row, mask);
    Ok(w0.dot(&x) + branch.row(0))
}

#[derive(Debug, Clone)]
pub struct AdaptedGrads<T> {
    pub input: Array1<T>,
    /// Absent when the frozen matrix is excluded from differentiation.
    pub w0: Option<Array2<T>>,
    pub a: Array2<T>,
    pub b: Array2<T>,
}

/// Gradients of `adapted_apply` (dropout off) for an upstream gradient `dy`.
pub fn adapted_apply_backward<T: Real>(
    x: ArrayView1<T>,
    w0: &Array2<T>,
    pair: &LoraPair<T>,
    dy: ArrayView1<T>,
    w0_frozen: bool,
) -> Result<AdaptedGrads<T>> {
    pair.check_against(w0)?;
    let row = x.insert_axis(ndarray::Axis(0));
    let dy_row = dy.insert_axis(ndarray::Axis(0));
    let (_, cache) = pair.branch_forward(row, None);
    let branch = pair.branch_backward(&cache, dy_row);
    let input = dy.dot(w0) + branch.input.row(0);
    let w0_grad = (!w0_frozen).then(|| dy_row.t().dot(&row));
    Ok(AdaptedGrads {
        input,
        w0: w0_grad,
        a: branch.a,
        b: branch.b,
    })
}

/// `W0 + γ B A`.
pub fn merge<T: Real>(w0: &Array2<T>, pair: &LoraPair<T>) -> Result<Array2<T>> {
    pair.check_against(w0)?;
    Ok(w0 + &pair.delta())
}

/// Adapter parameters across the encoder for fused `d × d` projections.
pub fn trainable_param_count(encoder: &EncoderConfig, adapter: &AdapterConfig) -> usize {
    let d = encoder.embed_dim;
    let r = adapter.rank;
    encoder.num_layers * adapter.targets.len() * (r * d + d * r)
}
