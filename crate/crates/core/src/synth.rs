//! Synthetic class-conditional images with a controllable domain shift.
//!
//! Each class owns a shape (disk, square, triangle, ring, cycling), a stripe
//! frequency and a colour palette. Source images sit on a diagonal-stripe
//! background; the target domain can swap that for a checkerboard, rescale
//! and offset each channel, and add Gaussian noise.
//!
//! Sample `i` is rendered from its own RNG stream, so the train split
//! (indices `0..n_train`) and eval split (`n_train..n_train + n_eval`) never
//! share a sample.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::{LabelMatrix, TaskKind, Tensor};

pub const CHANNELS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Source,
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftSpec {
    pub gain: [f64; 3],
    pub bias: [f64; 3],
    pub noise_sigma: f64,
    pub swap_background: bool,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        ShiftSpec {
            gain: [1.0; 3],
            bias: [0.0; 3],
            noise_sigma: 0.0,
            swap_background: false,
        }
    }
}

impl Default for ShiftSpec {
    fn default() -> Self {
        ShiftSpec {
            gain: [0.75, 1.1, 0.9],
            bias: [0.08, -0.05, 0.04],
            noise_sigma: 0.05,
            swap_background: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub num_classes: usize,
    pub kind: TaskKind,
    pub n_train: usize,
    pub n_eval: usize,
    /// `[height, width]` of the rendered images.
    pub image_size: [usize; 2],
    #[serde(default)]
    pub shift: ShiftSpec,
    /// Per-class presence probability for multi-label tasks.
    #[serde(default = "default_presence")]
    pub label_presence: f64,
}

fn default_presence() -> f64 {
    0.4
}

impl TaskSpec {
    pub fn multi_class(num_classes: usize, n_train: usize, n_eval: usize, side: usize) -> Self {
        TaskSpec {
            num_classes,
            kind: TaskKind::MultiClass,
            n_train,
            n_eval,
            image_size: [side, side],
            shift: ShiftSpec::default(),
            label_presence: default_presence(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Spec("synthetic task needs at least 2 classes".into()));
        }
        if self.n_train < self.num_classes || self.n_eval < 1 {
            return Err(Error::Spec(format!(
                "need n_train >= classes ({}) and n_eval >= 1, got {} / {}",
                self.num_classes, self.n_train, self.n_eval
            )));
        }
        if self.image_size.iter().any(|&d| d < 4) {
            return Err(Error::Spec("image sides must be at least 4 pixels".into()));
        }
        if !(0.0..=1.0).contains(&self.label_presence) || self.shift.noise_sigma < 0.0 {
            return Err(Error::Spec("presence must lie in [0,1] and noise must be >= 0".into()));
        }
        Ok(())
    }
}

struct ShapeDraw {
    class: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    angle: f64,
    phase: f64,
}

fn palette(class: usize) -> [f64; 3] {
    const BASE: [[f64; 3]; 6] = [
        [0.95, 0.35, 0.30],
        [0.30, 0.90, 0.40],
        [0.35, 0.45, 0.95],
        [0.90, 0.85, 0.30],
        [0.85, 0.35, 0.90],
        [0.30, 0.85, 0.90],
    ];
    BASE[class % BASE.len()]
}

fn stripe_frequency(class: usize) -> f64 {
    1.5 + 1.25 * class as f64
}

/// Signed membership test in shape-local coordinates (unit radius).
fn inside(class: usize, u: f64, v: f64) -> bool {
    match class % 4 {
        0 => u * u + v * v <= 1.0,
        1 => u.abs() <= 0.8 && v.abs() <= 0.8,
        2 => v <= 0.7 && v >= -0.9 + 1.6 * u.abs(),
        _ => {
            let r2 = u * u + v * v;
            (0.3..=1.0).contains(&r2)
        }
    }
}

fn render(
    draws: &[ShapeDraw],
    bg_phase: f64,
    h: usize,
    w: usize,
    swap_background: bool,
) -> Vec<f64> {
    let mut img = vec![0.0; CHANNELS * h * w];
    let scale = h.min(w) as f64;
    for y in 0..h {
        for x in 0..w {
            let (fx, fy) = (x as f64 / scale, y as f64 / scale);
            let bg = if swap_background {
                let s = (2.0 * PI * 3.0 * fx + bg_phase).sin() * (2.0 * PI * 3.0 * fy).sin();
                0.35 + 0.12 * s.signum()
            } else {
                0.35 + 0.1 * (2.0 * PI * 2.5 * (fx + fy) + bg_phase).sin()
            };
            let mut px = [bg, bg * 0.9, bg * 1.1];
            for d in draws {
                let (dx, dy) = ((fx - d.cx) / d.radius, (fy - d.cy) / d.radius);
                let (c, s) = (d.angle.cos(), d.angle.sin());
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                if inside(d.class, u, v) {
                    let t = 0.5 + 0.4 * (2.0 * PI * stripe_frequency(d.class) * u / 2.0 + d.phase).sin();
                    let pal = palette(d.class);
                    for ch in 0..CHANNELS {
                        px[ch] = 0.15 + 0.8 * t * pal[ch];
                    }
                }
            }
            for ch in 0..CHANNELS {
                img[(ch * h + y) * w + x] = px[ch];
            }
        }
    }
    img
}

fn draw_shape(rng: &mut ChaCha8Rng, class: usize, aspect_w: f64, aspect_h: f64, small: bool) -> ShapeDraw {
    let radius = if small {
        rng.gen_range(0.14..0.22)
    } else {
        rng.gen_range(0.22..0.34)
    };
    ShapeDraw {
        class,
        cx: rng.gen_range(radius..(aspect_w - radius).max(radius + 1e-9)),
        cy: rng.gen_range(radius..(aspect_h - radius).max(radius + 1e-9)),
        radius,
        angle: rng.gen_range(0.0..2.0 * PI),
        phase: rng.gen_range(0.0..2.0 * PI),
    }
}

/// Renders the `split` portion of a synthetic task in the given domain.
pub fn synth_generate(task: &TaskSpec, domain: Domain, split: Split, seed: u64) -> Result<Dataset> {
    task.validate()?;
    let [h, w] = task.image_size;
    let range = match split {
        Split::Train => 0..task.n_train,
        Split::Eval => task.n_train..task.n_train + task.n_eval,
    };
    let n = range.len();
    let k = task.num_classes;
    let scale = h.min(w) as f64;
    let (aspect_w, aspect_h) = (w as f64 / scale, h as f64 / scale);
    let shifted = domain == Domain::Target;
    let shift = &task.shift;
    let noise = Normal::new(0.0, shift.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Spec(format!("noise distribution: {e}")))?;

    let mut pixels = Vec::with_capacity(n * CHANNELS * h * w);
    let mut labels = vec![0u8; n * k];
    for (row, index) in range.enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index as u64);
        let mut present = Vec::new();
        match task.kind {
            TaskKind::MultiClass => present.push(index % k),
            TaskKind::MultiLabel => {
                for class in 0..k {
                    if rng.gen_bool(task.label_presence) {
                        present.push(class);
                    }
                }
            }
        }
        let small = present.len() > 1;
        let draws: Vec<ShapeDraw> = present
            .iter()
            .map(|&c| draw_shape(&mut rng, c, aspect_w, aspect_h, small))
            .collect();
        let bg_phase = rng.gen_range(0.0..2.0 * PI);
        let mut img = render(&draws, bg_phase, h, w, shifted && shift.swap_background);

        if shifted {
            let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5348_4946_54);
            noise_rng.set_stream(index as u64);
            for ch in 0..CHANNELS {
                for v in &mut img[ch * h * w..(ch + 1) * h * w] {
                    *v = *v * shift.gain[ch] + shift.bias[ch];
                    if shift.noise_sigma > 0.0 {
                        *v += noise.sample(&mut noise_rng);
                    }
                }
            }
        }
        // Quantize to f32 so datasets survive the FTDS round trip exactly.
        pixels.extend(img.iter().map(|v| f64::from(v.clamp(0.0, 1.0) as f32)));
        for c in present {
            labels[row * k + c] = 1;
        }
    }
    let images = Tensor::new(vec![n, CHANNELS, h, w], pixels)?;
    Dataset::new(images, LabelMatrix::new(n, k, labels)?, task.kind, split)
}
