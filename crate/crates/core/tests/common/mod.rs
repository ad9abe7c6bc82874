#![allow(dead_code)]

use foundpad::lora::{AdapterConfig, LoraPair};
use foundpad::model::PadModel;
use foundpad::nn::{normal_matrix, LayerNorm, Linear};
use foundpad::train::TrainBatch;
use foundpad::vit::{EncoderConfig, ImageBatch};
use foundpad::Label;
use ndarray::{Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Toy f64 model with every parameter family away from its trivial init, so
/// adapters, norms and head all carry gradient.
pub fn toy_model(seed: u64) -> PadModel<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = EncoderConfig::toy();
    let mut model = PadModel::<f64>::init(&cfg, 0.3, &mut rng).unwrap();
    model.encoder.attach_adapters(&AdapterConfig::default().with_rank(2), &mut rng).unwrap();
    for block in &mut model.encoder.blocks {
        for pair in [block.attn.q_lora.as_mut().unwrap(), block.attn.v_lora.as_mut().unwrap()] {
            pair.a = normal_matrix(&mut rng, pair.a.dim(), 0.3);
            pair.b = normal_matrix(&mut rng, pair.b.dim(), 0.3);
        }
        block.norm1.weight.mapv_inplace(|_| rng.random_range(0.5..1.5));
        block.norm2.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
    }
    model.head.linear.weight = normal_matrix(&mut rng, (2, 8), 0.5);
    model
}

pub fn toy_images(n: usize, seed: u64) -> ImageBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBatch::new(Array4::from_shape_simple_fn((n, 3, 16, 16), || rng.random_range(-1.5..1.5))).unwrap()
}

pub fn toy_batch(n: usize, seed: u64) -> TrainBatch<f64> {
    let labels = (0..n).map(|i| if i % 2 == 0 { Label::Attack } else { Label::BonaFide }).collect();
    TrainBatch::new(toy_images(n, seed), labels).unwrap()
}

// Straight-line reference forward pass on nested vectors. Shares no code
// with the library beyond reading its parameters.

type Mat = Vec<Vec<f64>>;

fn linear(x: &Mat, l: &Linear<f64>) -> Mat {
    x.iter()
        .map(|row| {
            (0..l.weight.nrows())
                .map(|o| l.bias[o] + (0..row.len()).map(|i| l.weight[[o, i]] * row[i]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn lora(x: &Mat, pair: &LoraPair<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let h: Vec<f64> = (0..pair.a.nrows())
                .map(|r| (0..row.len()).map(|i| pair.a[[r, i]] * row[i]).sum())
                .collect();
            (0..pair.b.nrows())
                .map(|o| pair.gamma * (0..h.len()).map(|r| pair.b[[o, r]] * h[r]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn add(a: &Mat, b: &Mat) -> Mat {
    a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
}

fn layer_norm(x: &Mat, n: &LayerNorm<f64>) -> Mat {
    x.iter()
        .map(|row| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            row.iter()
                .enumerate()
                .map(|(i, v)| (v - mean) / (var + n.eps).sqrt() * n.weight[i] + n.bias[i])
                .collect()
        })
        .collect()
}

/// Class logits `[attack, bona-fide]` for one `3 × S × S` image.
pub fn oracle_logits(model: &PadModel<f64>, image: &Array3<f64>) -> [f64; 2] {
    let cfg = &model.encoder.config;
    let (p, g, d, heads) = (cfg.patch_size, cfg.image_size / cfg.patch_size, cfg.embed_dim, cfg.num_heads);
    let embed = &model.encoder.embed;

    let mut tokens: Mat = vec![(0..d).map(|j| embed.cls_token[j] + embed.position[[0, j]]).collect()];
    for gy in 0..g {
        for gx in 0..g {
            let mut patch = Vec::with_capacity(3 * p * p);
            for c in 0..3 {
                for dy in 0..p {
                    for dx in 0..p {
                        patch.push(image[[c, gy * p + dy, gx * p + dx]]);
                    }
                }
            }
            let t = tokens.len();
            let e = linear(&vec![patch], &embed.projection).remove(0);
            tokens.push(e.iter().enumerate().map(|(j, v)| v + embed.position[[t, j]]).collect());
        }
    }

    for block in &model.encoder.blocks {
        let attn = &block.attn;
        let h = layer_norm(&tokens, &block.norm1);
        let mut q = linear(&h, &attn.q);
        if let Some(pair) = &attn.q_lora {
            q = add(&q, &lora(&h, pair));
        }
        let k = linear(&h, &attn.k);
        let mut v = linear(&h, &attn.v);
        if let Some(pair) = &attn.v_lora {
            v = add(&v, &lora(&h, pair));
        }
        let hd = d / heads;
        let n = tokens.len();
        let mut ctx = vec![vec![0.0; d]; n];
        for head in 0..heads {
            let cols = head * hd..(head + 1) * hd;
            for i in 0..n {
                let scores: Vec<f64> = (0..n)
                    .map(|j| cols.clone().map(|c| q[i][c] * k[j][c]).sum::<f64>() / (hd as f64).sqrt())
                    .collect();
                let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
                let z: f64 = e.iter().sum();
                for c in cols.clone() {
                    ctx[i][c] = (0..n).map(|j| e[j] / z * v[j][c]).sum();
                }
            }
        }
        tokens = add(&tokens, &linear(&ctx, &attn.o));
        let h = layer_norm(&tokens, &block.norm2);
        let hidden: Mat = linear(&h, &block.fc1)
            .into_iter()
            .map(|r| r.into_iter().map(|x| x / (1.0 + (-1.702 * x).exp())).collect())
            .collect();
        tokens = add(&tokens, &linear(&hidden, &block.fc2));
    }
    let cls = layer_norm(&vec![tokens[0].clone()], &model.encoder.norm);
    let logits = linear(&cls, &model.head.linear).remove(0);
    [logits[0], logits[1]]
}
