//! Procedural two-class face-proxy dataset with controllable domain shift.
//!
//! Bona-fide samples are smooth shaded ellipses ("faces") with eyes and a
//! mouth over a textured background. Attack samples are rendered the same way
//! and then re-captured through a simulated screen: a beating sinusoidal grid
//! (moiré) over compressed contrast, plus a hue cast and a faint glow. Each
//! domain draws its own background, skin palette, lighting and moiré
//! geometry, so held-out domains are genuinely shifted.

use std::collections::BTreeMap;
use std::f32::consts::PI;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::manifest::{DatasetManifest, ManifestEntry};
use super::protocol::Domain;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::metrics::{auc, ScoreRecord};
use crate::rng;

pub const SYNTH_SIZE: u32 = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SynthSpec {
    pub domains: usize,
    pub per_class: usize,
    pub seed: u64,
}

impl SynthSpec {
    pub fn domain_name(index: usize) -> Domain {
        Domain::new(format!("D{}", index + 1)).expect("valid id")
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.per_class == 0 {
            return Err(Error::config("synthetic dataset needs at least one domain and one sample per class"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct DomainStyle {
    background: [f32; 3],
    skin: [f32; 3],
    illumination: f32,
    light_angle: f32,
    moire_period: f32,
    moire_angle: f32,
    cast: [f32; 3],
}

fn domain_style(seed: u64, index: usize) -> DomainStyle {
    let mut r = rng::stream(seed, &[rng::SYNTH, 0, index as u64]);
    let mut unit = |lo: f32, hi: f32| r.random_range(lo..hi);
    let background = [unit(0.1, 0.9), unit(0.1, 0.9), unit(0.1, 0.9)];
    let tone = unit(0.35, 0.85);
    let skin = [tone + unit(0.05, 0.15), tone * unit(0.75, 0.9), tone * unit(0.6, 0.8)];
    DomainStyle {
        background,
        skin,
        illumination: unit(0.75, 1.15),
        light_angle: unit(0.0, 2.0 * PI),
        moire_period: unit(48.0, 64.0),
        moire_angle: unit(0.0, PI / 4.0),
        cast: zero_mean([unit(-0.06, 0.06), unit(-0.06, 0.06), unit(-0.06, 0.06)]),
    }
}

/// Colour casts shift hue only, so the glow alone sets the brightness cue.
fn zero_mean(c: [f32; 3]) -> [f32; 3] {
    let m = (c[0] + c[1] + c[2]) / 3.0;
    c.map(|v| v - m)
}

fn ellipse(x: f32, y: f32, cx: f32, cy: f32, rx: f32, ry: f32) -> f32 {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy
}

/// Soft inside-indicator for an ellipse level value.
fn soft_inside(level: f32) -> f32 {
    1.0 / (1.0 + ((level - 1.0) * 12.0).exp())
}

/// Renders one sample deterministically from `(seed, domain, label, index)`.
pub fn synth_image(seed: u64, domain: usize, label: Label, index: usize) -> RgbImage {
    let style = domain_style(seed, domain);
    let mut r = rng::stream(seed, &[rng::SYNTH, 1, domain as u64, label.index() as u64, index as u64]);
    let size = SYNTH_SIZE as f32;
    let cx = size / 2.0 + r.random_range(-18.0..18.0);
    let cy = size / 2.0 + r.random_range(-14.0..14.0);
    let rx = r.random_range(64.0..84.0);
    let ry = r.random_range(86.0..108.0);
    let skin_jitter: [f32; 3] = std::array::from_fn(|_| r.random_range(-0.06..0.06));
    let waves: Vec<(f32, f32, f32, f32)> = (0..4)
        .map(|_| {
            (
                r.random_range(0.01..0.05),
                r.random_range(0.0..2.0 * PI),
                r.random_range(0.0..2.0 * PI),
                r.random_range(0.01..0.04),
            )
        })
        .collect();
    let eye_dy = r.random_range(-0.35..-0.2) * ry;
    let eye_dx = r.random_range(0.3..0.42) * rx;
    let mouth_dy = r.random_range(0.4..0.55) * ry;
    let (lx, ly) = (style.light_angle.cos(), style.light_angle.sin());

    let attack = label == Label::Attack;
    let exposure = r.random_range(0.85..1.15);
    let moire_jitter = r.random_range(0.9..1.1);
    let period = style.moire_period * moire_jitter;
    let (mc, ms) = (style.moire_angle.cos(), style.moire_angle.sin());

    let mut img = RgbImage::new(SYNTH_SIZE, SYNTH_SIZE);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let (xf, yf) = (x as f32, y as f32);
        let texture: f32 = waves
            .iter()
            .map(|&(freq, angle, phase, amp)| amp * (freq * (xf * angle.cos() + yf * angle.sin()) + phase).sin())
            .sum();
        let light = exposure * style.illumination * (1.0 + 0.15 * ((xf - size / 2.0) * lx + (yf - size / 2.0) * ly) / size);
        let face = soft_inside(ellipse(xf, yf, cx, cy, rx, ry));
        let shade = 1.0 - 0.35 * ellipse(xf, yf, cx, cy, rx, ry).min(1.0);
        let eyes = soft_inside(ellipse(xf, yf, cx - eye_dx, cy + eye_dy, 11.0, 6.0))
            + soft_inside(ellipse(xf, yf, cx + eye_dx, cy + eye_dy, 11.0, 6.0));
        let mouth = soft_inside(ellipse(xf, yf, cx, cy + mouth_dy, 24.0, 7.0));
        let noise = r.random_range(-0.02..0.02);

        let mut v = [0f32; 3];
        for c in 0..3 {
            let skin = (style.skin[c] + skin_jitter[c]) * shade;
            let mut s = skin * (1.0 - 0.8 * eyes.min(1.0));
            if c == 0 {
                s += 0.15 * mouth;
            } else {
                s -= 0.1 * mouth;
            }
            let base = style.background[c] * (1.0 - face) + s * face;
            v[c] = (base + texture) * light + noise;
        }

        if attack {
            let u = xf * mc + yf * ms;
            let w = -xf * ms + yf * mc;
            let grid = 0.5 * ((2.0 * PI * u / period).sin() + (2.0 * PI * w / (period * 1.07)).sin());
            let mean = (v[0] + v[1] + v[2]) / 3.0;
            for c in 0..3 {
                v[c] = mean + 0.75 * (v[c] - mean) + 0.2 * grid + style.cast[c] + 0.02;
            }
        }
        *px = Rgb(v.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    img
}

pub fn mean_intensity(img: &RgbImage) -> f64 {
    img.as_raw().iter().map(|&v| v as f64).sum::<f64>() / (img.as_raw().len() as f64 * 255.0)
}

/// Per-domain generation statistics.
#[derive(Debug, Clone, Serialize)]
pub struct DomainSummary {
    pub mean_intensity: f64,
    /// AUC of a darker-is-bona-fide brightness rule within the domain.
    pub brightness_auc: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest: DatasetManifest,
    pub summary: BTreeMap<Domain, DomainSummary>,
}

/// Per-class sample count below which the brightness check adds renders.
const CHECK_MIN_PER_CLASS: usize = 64;

/// `(domain, label, index)` for indices `from..to` of every class.
fn jobs_for(domains: usize, from: usize, to: usize) -> Vec<(usize, Label, usize)> {
    (0..domains)
        .flat_map(|d| [Label::BonaFide, Label::Attack].into_iter().flat_map(move |l| (from..to).map(move |i| (d, l, i))))
        .collect()
}

/// Writes `domains × 2 × per_class` PNGs under `out_dir/<domain>/<label>/`
/// plus `out_dir/manifest.jsonl` with paths relative to `out_dir`. The
/// returned manifest has the same entries resolved against `out_dir`.
pub fn synth_generate(spec: &SynthSpec, out_dir: &Path) -> Result<SynthOutput> {
    spec.validate()?;
    let jobs = jobs_for(spec.domains, 0, spec.per_class);
    let rendered: Vec<(ManifestEntry, f64)> = jobs
        .par_iter()
        .map(|&(d, label, i)| {
            let domain = SynthSpec::domain_name(d);
            let rel = Path::new(domain.as_str()).join(label.as_str()).join(format!("{i:05}.png"));
            let path = out_dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            let img = synth_image(spec.seed, d, label, i);
            img.save(&path)?;
            Ok((
                ManifestEntry {
                    path: rel,
                    label,
                    domain,
                },
                mean_intensity(&img),
            ))
        })
        .collect::<Result<_>>()?;

    // Small sets are topped up with unsaved renders so the brightness check
    // is not decided by a handful of images.
    let extra: Vec<(usize, Label, f64)> = jobs_for(spec.domains, spec.per_class, CHECK_MIN_PER_CLASS)
        .into_par_iter()
        .map(|(d, label, i)| (d, label, mean_intensity(&synth_image(spec.seed, d, label, i))))
        .collect();
    let mut summary = BTreeMap::new();
    for d in 0..spec.domains {
        let domain = SynthSpec::domain_name(d);
        let rows: Vec<(Label, f64)> = rendered
            .iter()
            .filter(|(e, _)| e.domain == domain)
            .map(|(e, m)| (e.label, *m))
            .chain(extra.iter().filter(|x| x.0 == d).map(|&(_, l, m)| (l, m)))
            .collect();
        let mean = rows.iter().map(|(_, m)| m).sum::<f64>() / rows.len() as f64;
        let records: Vec<ScoreRecord> = rows.iter().map(|&(l, m)| ScoreRecord::new(1.0 - m, l, domain.clone())).collect();
        let brightness_auc = auc(&records)?;
        if brightness_auc <= 0.5 {
            return Err(Error::Domain(format!(
                "synthetic domain {domain} is not separable by brightness (AUC {brightness_auc:.3})"
            )));
        }
        summary.insert(
            domain,
            DomainSummary {
                mean_intensity: mean,
                brightness_auc,
            },
        );
    }
    let mut entries: Vec<ManifestEntry> = rendered.into_iter().map(|(e, _)| e).collect();
    DatasetManifest::new(entries.clone()).write(&out_dir.join("manifest.jsonl"))?;
    for e in &mut entries {
        e.path = out_dir.join(&e.path);
    }
    Ok(SynthOutput {
        manifest: DatasetManifest::new(entries),
        summary,
    })
}
