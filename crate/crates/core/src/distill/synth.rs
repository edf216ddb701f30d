//! Deterministic synthetic sequences: a textured rectangle wandering over a
//! textured background, with optional distractor objects, a transient
//! occluder bar, and gradual scale change. Ground-truth boxes are exactly
//! the drawn integer rectangles.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::bench::SequenceRecord;
use crate::geom::Rect;
use crate::util::seeded_rng;

/// Kind presets for the benchmark suite.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    Plain,
    Distractor,
    Occlusion,
    ScaleChange,
}

impl SynthKind {
    pub fn name(&self) -> &'static str {
        match self {
            SynthKind::Plain => "plain",
            SynthKind::Distractor => "distractor",
            SynthKind::Occlusion => "occlusion",
            SynthKind::ScaleChange => "scale",
        }
    }
}

/// Generator knobs; `SynthConfig::kind` builds the benchmark presets.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub frame_w: u32,
    pub frame_h: u32,
    pub target_w: u32,
    pub target_h: u32,
    pub distractors: usize,
    pub occluder: bool,
    /// Per-frame relative scale drift bound (0 disables scale change).
    pub scale_drift: f64,
    /// Velocity scale in pixels per frame.
    pub speed: f64,
    pub name_prefix: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frame_w: 128,
            frame_h: 128,
            target_w: 26,
            target_h: 22,
            distractors: 0,
            occluder: false,
            scale_drift: 0.0,
            speed: 1.6,
            name_prefix: "synth".to_string(),
        }
    }
}

impl SynthConfig {
    pub fn kind(kind: SynthKind) -> SynthConfig {
        let base = SynthConfig {
            name_prefix: format!("synth-{}", kind.name()),
            ..SynthConfig::default()
        };
        match kind {
            SynthKind::Plain => base,
            SynthKind::Distractor => SynthConfig {
                distractors: 2,
                ..base
            },
            SynthKind::Occlusion => SynthConfig {
                occluder: true,
                ..base
            },
            SynthKind::ScaleChange => SynthConfig {
                scale_drift: 0.01,
                ..base
            },
        }
    }
}

const TEX: u32 = 32;

struct Texture {
    pixels: Vec<[u8; 3]>,
}

impl Texture {
    fn noise(rng: &mut ChaCha8Rng, lo: u8, hi: u8) -> Texture {
        let pixels = (0..(TEX * TEX) as usize)
            .map(|_| {
                [
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                    rng.gen_range(lo..hi),
                ]
            })
            .collect();
        Texture { pixels }
    }

    fn sample(&self, u: f64, v: f64) -> [u8; 3] {
        let x = ((u * TEX as f64) as usize).min(TEX as usize - 1);
        let y = ((v * TEX as f64) as usize).min(TEX as usize - 1);
        self.pixels[y * TEX as usize + x]
    }
}

struct Mover {
    cx: f64,
    cy: f64,
    vx: f64,
    vy: f64,
    scale: f64,
}

impl Mover {
    fn step(&mut self, rng: &mut ChaCha8Rng, cfg: &SynthConfig, w: f64, h: f64, margin: f64) {
        let kick = cfg.speed;
        self.vx = 0.85 * self.vx + rng.gen_range(-kick..=kick) * 0.3;
        self.vy = 0.85 * self.vy + rng.gen_range(-kick..=kick) * 0.3;
        let vmax = cfg.speed * 2.0;
        self.vx = self.vx.clamp(-vmax, vmax);
        self.vy = self.vy.clamp(-vmax, vmax);
        self.cx += self.vx;
        self.cy += self.vy;
        if self.cx < margin {
            self.cx = margin;
            self.vx = self.vx.abs();
        }
        if self.cx > w - margin {
            self.cx = w - margin;
            self.vx = -self.vx.abs();
        }
        if self.cy < margin {
            self.cy = margin;
            self.vy = self.vy.abs();
        }
        if self.cy > h - margin {
            self.cy = h - margin;
            self.vy = -self.vy.abs();
        }
        if cfg.scale_drift > 0.0 {
            self.scale *= 1.0 + rng.gen_range(-cfg.scale_drift..=cfg.scale_drift);
            self.scale = self.scale.clamp(0.6, 1.5);
        }
    }

    fn int_box(&self, w0: f64, h0: f64, frame_w: u32, frame_h: u32) -> (i64, i64, i64, i64) {
        let w = ((w0 * self.scale).round() as i64).max(8);
        let h = ((h0 * self.scale).round() as i64).max(8);
        let mut x = (self.cx - w as f64 / 2.0).round() as i64;
        let mut y = (self.cy - h as f64 / 2.0).round() as i64;
        x = x.clamp(1, frame_w as i64 - w - 1);
        y = y.clamp(1, frame_h as i64 - h - 1);
        (x, y, w, h)
    }
}

fn draw_rect(frame: &mut RgbImage, tex: &Texture, x: i64, y: i64, w: i64, h: i64) {
    for py in 0..h {
        for px in 0..w {
            let u = px as f64 / w as f64;
            let v = py as f64 / h as f64;
            let c = tex.sample(u, v);
            let fx = x + px;
            let fy = y + py;
            if fx >= 0 && fy >= 0 && (fx as u32) < frame.width() && (fy as u32) < frame.height() {
                frame.put_pixel(fx as u32, fy as u32, Rgb(c));
            }
        }
    }
}

fn boxes_overlap(a: (i64, i64, i64, i64), b: (i64, i64, i64, i64), pad: i64) -> bool {
    a.0 - pad < b.0 + b.2 && b.0 - pad < a.0 + a.2 && a.1 - pad < b.1 + b.3 && b.1 - pad < a.1 + a.3
}

/// Generates `count` sequences of `length` frames each, deterministically
/// derived from `seed`.
pub fn synth_sequences(
    count: usize,
    length: usize,
    seed: u64,
    config: &SynthConfig,
) -> Vec<SequenceRecord> {
    (0..count)
        .map(|i| synth_one(length, seed.wrapping_add(i as u64), config, i))
        .collect()
}

fn synth_one(length: usize, seed: u64, cfg: &SynthConfig, index: usize) -> SequenceRecord {
    let mut rng = seeded_rng(seed.wrapping_mul(0x9e3779b97f4a7c15).wrapping_add(7));
    let (w, h) = (cfg.frame_w, cfg.frame_h);

    // Static textured background.
    let mut bg = RgbImage::new(w, h);
    for py in 0..h {
        for px in 0..w {
            let base = 40 + ((px / 8 + py / 8) % 2) as u8 * 25;
            let p = [
                base + rng.gen_range(0..40),
                base + rng.gen_range(0..40),
                base + rng.gen_range(0..40),
            ];
            bg.put_pixel(px, py, Rgb(p));
        }
    }
    let target_tex = Texture::noise(&mut rng, 130, 250);
    let distractor_tex: Vec<Texture> = (0..cfg.distractors)
        .map(|_| Texture::noise(&mut rng, 130, 250))
        .collect();
    let occ_tex = Texture::noise(&mut rng, 10, 60);

    let margin = (cfg.target_w.max(cfg.target_h)) as f64 / 2.0 + 4.0;
    let mut target = Mover {
        cx: rng.gen_range(margin..w as f64 - margin),
        cy: rng.gen_range(margin..h as f64 - margin),
        vx: rng.gen_range(-cfg.speed..=cfg.speed),
        vy: rng.gen_range(-cfg.speed..=cfg.speed),
        scale: 1.0,
    };
    let mut distractors: Vec<Mover> = (0..cfg.distractors)
        .map(|_| Mover {
            cx: rng.gen_range(margin..w as f64 - margin),
            cy: rng.gen_range(margin..h as f64 - margin),
            vx: rng.gen_range(-cfg.speed..=cfg.speed),
            vy: rng.gen_range(-cfg.speed..=cfg.speed),
            scale: 1.0,
        })
        .collect();

    let mut frames = Vec::with_capacity(length);
    let mut boxes = Vec::with_capacity(length);
    let occ_start = length * 2 / 5;
    let occ_end = (length * 3 / 5).max(occ_start + 1);
    for t in 0..length {
        if t > 0 {
            target.step(&mut rng, cfg, w as f64, h as f64, margin);
            for d in &mut distractors {
                d.step(&mut rng, cfg, w as f64, h as f64, margin);
            }
        }
        let tb = target.int_box(cfg.target_w as f64, cfg.target_h as f64, w, h);
        let mut frame = bg.clone();
        for (d, tex) in distractors.iter().zip(&distractor_tex) {
            let db = d.int_box(cfg.target_w as f64, cfg.target_h as f64, w, h);
            // Distractors never overlap the target; they skip a frame instead.
            if !boxes_overlap(db, tb, 2) {
                draw_rect(&mut frame, tex, db.0, db.1, db.2, db.3);
            }
        }
        draw_rect(&mut frame, &target_tex, tb.0, tb.1, tb.2, tb.3);
        if cfg.occluder && t >= occ_start && t < occ_end && length > 1 {
            let k = (t - occ_start) as f64 / (occ_end - occ_start) as f64;
            let bar_w = ((tb.2 as f64) * 0.8).round() as i64;
            let bar_cx = target.cx + (k - 0.5) * 3.0 * tb.2 as f64;
            draw_rect(
                &mut frame,
                &occ_tex,
                (bar_cx - bar_w as f64 / 2.0).round() as i64,
                0,
                bar_w,
                h as i64,
            );
        }
        frames.push(frame);
        boxes.push(Rect::new(tb.0 as f64, tb.1 as f64, tb.2 as f64, tb.3 as f64));
    }
    SequenceRecord::from_memory(format!("{}-{:02}", cfg.name_prefix, index), frames, boxes)
        .expect("synthetic sequence is well-formed")
}
