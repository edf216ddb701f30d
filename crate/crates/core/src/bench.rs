//! Dataset ingestion, one-pass evaluation with success/AUC metrics, and
//! model cost reports.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::distill::{synth_sequences, SynthConfig, SynthKind};
use crate::error::{Error, Result};
use crate::geom::Rect;
use crate::nnet::{count_flops, FlopsReport, NetworkSpec};

pub use crate::geom::iou;

pub type Frame = image::RgbImage;

/// Frames either live on disk (OTB-style directories) or in memory
/// (synthetic sequences).
#[derive(Debug, Clone)]
pub enum FrameSource {
    Disk(PathBuf),
    Memory(Frame),
}

/// Ordered frames plus one ground-truth box per frame.
#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub name: String,
    frames: Vec<FrameSource>,
    pub boxes: Vec<Rect>,
    pub warnings: Vec<String>,
}

impl SequenceRecord {
    pub fn from_memory(name: String, frames: Vec<Frame>, boxes: Vec<Rect>) -> Result<Self> {
        if frames.len() != boxes.len() || frames.is_empty() {
            return Err(Error::Invalid(format!(
                "sequence needs equal nonzero frame/box counts, got {}/{}",
                frames.len(),
                boxes.len()
            )));
        }
        Ok(SequenceRecord {
            name,
            frames: frames.into_iter().map(FrameSource::Memory).collect(),
            boxes,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> Result<Cow<'_, Frame>> {
        match &self.frames[i] {
            FrameSource::Memory(f) => Ok(Cow::Borrowed(f)),
            FrameSource::Disk(p) => {
                let img = image::open(p)
                    .map_err(|e| Error::Format(format!("cannot read {}: {e}", p.display())))?;
                Ok(Cow::Owned(img.to_rgb8()))
            }
        }
    }
}

fn parse_box_line(line: &str, line_no: usize) -> Result<Rect> {
    let cleaned = line.replace('\t', ",");
    let parts: Vec<&str> = cleaned.split(',').map(|s| s.trim()).collect();
    if parts.len() != 4 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("expected 4 comma- or tab-separated values, got {}", parts.len()),
        });
    }
    let mut vals = [0.0f64; 4];
    for (i, p) in parts.iter().enumerate() {
        vals[i] = p.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("'{p}' is not a number"),
        })?;
    }
    let rect = Rect::new(vals[0], vals[1], vals[2], vals[3]);
    if rect.w <= 0.0 || rect.h <= 0.0 {
        return Err(Error::Parse {
            line: line_no,
            message: format!("box has non-positive area: {},{}", rect.w, rect.h),
        });
    }
    Ok(rect)
}

/// Loads an OTB-style sequence directory: `img/NNNN.png` (or .jpg) frames
/// plus `groundtruth_rect.txt`. Frame/box counts are reconciled by
/// truncating to the shorter list, with a warning.
pub fn load_sequence(dir: &Path) -> Result<SequenceRecord> {
    let img_dir = dir.join("img");
    let frames_dir = if img_dir.is_dir() { img_dir } else { dir.to_path_buf() };
    let mut frames: Vec<(u64, PathBuf)> = Vec::new();
    for entry in fs::read_dir(&frames_dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if !matches!(ext.as_deref(), Some("png") | Some("jpg") | Some("jpeg")) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
        if let Ok(n) = stem.parse::<u64>() {
            frames.push((n, path));
        }
    }
    if frames.is_empty() {
        return Err(Error::Invalid(format!(
            "no numbered frames under {}",
            frames_dir.display()
        )));
    }
    frames.sort_by_key(|(n, _)| *n);

    let gt_path = dir.join("groundtruth_rect.txt");
    let text = fs::read_to_string(&gt_path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", gt_path.display())))?;
    let mut boxes = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        boxes.push(parse_box_line(line, i + 1)?);
    }
    let mut warnings = Vec::new();
    let n = frames.len().min(boxes.len());
    if frames.len() != boxes.len() {
        warnings.push(format!(
            "{} frames vs {} boxes; truncating to {n}",
            frames.len(),
            boxes.len()
        ));
    }
    let name = dir
        .file_name()
        .and_then(|s| s.to_str())
        .unwrap_or("sequence")
        .to_string();
    Ok(SequenceRecord {
        name,
        frames: frames
            .into_iter()
            .take(n)
            .map(|(_, p)| FrameSource::Disk(p))
            .collect(),
        boxes: boxes.into_iter().take(n).collect(),
        warnings,
    })
}

/// The fixed 21-point threshold grid {0.00, 0.05, …, 1.00}.
pub fn thresholds() -> [f64; 21] {
    let mut t = [0.0; 21];
    for (i, v) in t.iter_mut().enumerate() {
        *v = i as f64 * 0.05;
    }
    t
}

/// One tracked frame: predicted box plus feature-extraction time.
pub struct TrackStep {
    pub bbox: Rect,
    pub feat_ms: f64,
}

/// Anything that can track a sequence frame by frame.
pub trait Tracker {
    fn track(&mut self, frame: &Frame) -> Result<TrackStep>;
}

impl Tracker for crate::tracker::TrackerState {
    fn track(&mut self, frame: &Frame) -> Result<TrackStep> {
        let upd = self.update(frame)?;
        Ok(TrackStep {
            bbox: upd.bbox,
            feat_ms: upd.diag.feat_ms,
        })
    }
}

/// Builds a tracker from the first frame and its ground-truth box.
pub type TrackerFactory<'a> = dyn Fn(&Frame, Rect, u64) -> Result<Box<dyn Tracker>> + 'a;

/// Per-sequence evaluation results.
#[derive(Debug, Clone)]
pub struct SequenceEval {
    pub name: String,
    pub frames: usize,
    pub ious: Vec<f64>,
    pub success: Vec<f64>,
    pub auc: f64,
    pub mean_iou: f64,
    pub fps: f64,
    pub feat_ms: f64,
    pub failed: bool,
}

/// One-pass evaluation report.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub sequences: Vec<SequenceEval>,
    pub mean_auc: f64,
    pub mean_success: Vec<f64>,
}

/// One-pass evaluation: initialize on the first ground-truth box, track to
/// the end, never re-initialize. success(t) is the fraction of frames with
/// IoU strictly above t; AUC is the mean success over the 21-point grid.
/// Timing covers tracker updates only, never frame decoding.
pub fn run_ope(sequences: &[SequenceRecord], factory: &TrackerFactory, seed: u64) -> Result<EvalReport> {
    if sequences.is_empty() {
        return Err(Error::Invalid("no sequences to evaluate".into()));
    }
    let grid = thresholds();
    let mut evals = Vec::with_capacity(sequences.len());
    for seq in sequences {
        if seq.len() < 2 {
            return Err(Error::Invalid(format!(
                "sequence '{}' has {} frames; one-pass evaluation needs at least 2",
                seq.name,
                seq.len()
            )));
        }
        let first = seq.frame(0)?;
        let gt0 = seq.boxes[0];
        let mut ious = vec![0.0; seq.len()];
        // Frame 1 reports the given ground truth by protocol.
        ious[0] = 1.0;
        let mut failed = false;
        let mut total_secs = 0.0;
        let mut feat_ms_total = 0.0;
        let mut steps = 0usize;
        match factory(&first, gt0, seed) {
            Ok(mut tracker) => {
                for i in 1..seq.len() {
                    let frame = seq.frame(i)?; // I/O excluded from timing
                    let t0 = Instant::now();
                    match tracker.track(&frame) {
                        Ok(step) => {
                            total_secs += t0.elapsed().as_secs_f64();
                            feat_ms_total += step.feat_ms;
                            steps += 1;
                            ious[i] = iou(&step.bbox, &seq.boxes[i]);
                        }
                        Err(_) => {
                            failed = true;
                            break; // remaining frames stay at IoU 0
                        }
                    }
                }
            }
            Err(_) => failed = true,
        }
        let success: Vec<f64> = grid
            .iter()
            .map(|t| ious.iter().filter(|v| **v > *t).count() as f64 / ious.len() as f64)
            .collect();
        let auc = success.iter().sum::<f64>() / success.len() as f64;
        let mean_iou = ious.iter().sum::<f64>() / ious.len() as f64;
        evals.push(SequenceEval {
            name: seq.name.clone(),
            frames: seq.len(),
            ious,
            success,
            auc,
            mean_iou,
            fps: if total_secs > 0.0 { steps as f64 / total_secs } else { 0.0 },
            feat_ms: if steps > 0 { feat_ms_total / steps as f64 } else { 0.0 },
            failed,
        });
    }
    evals.sort_by(|a, b| a.name.cmp(&b.name));
    let mean_auc = evals.iter().map(|e| e.auc).sum::<f64>() / evals.len() as f64;
    let mean_success = (0..grid.len())
        .map(|i| evals.iter().map(|e| e.success[i]).sum::<f64>() / evals.len() as f64)
        .collect();
    Ok(EvalReport {
        sequences: evals,
        mean_auc,
        mean_success,
    })
}

/// CSV with one row per sequence: `sequence,frames,auc,mean_iou,fps,feat_ms`.
/// The timing columns are wall-clock measurements and vary run to run; all
/// other columns are deterministic for a fixed seed.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::from("sequence,frames,auc,mean_iou,fps,feat_ms\n");
    for e in &report.sequences {
        out.push_str(&format!(
            "{},{},{},{},{:.3},{:.3}\n",
            e.name, e.frames, e.auc, e.mean_iou, e.fps, e.feat_ms
        ));
    }
    out
}

/// FLOPs/parameter comparison of two geometries.
#[derive(Debug, Clone)]
pub struct ModelReport {
    pub reference: FlopsReport,
    pub subject: FlopsReport,
    pub flops_ratio: f64,
    pub param_ratio: f64,
}

/// Cost report of `subject` against `reference` (typically student against
/// teacher). Ratios are reference/subject.
pub fn report_model(reference: &NetworkSpec, subject: &NetworkSpec) -> Result<ModelReport> {
    let r = count_flops(reference)?;
    let s = count_flops(subject)?;
    Ok(ModelReport {
        flops_ratio: r.total_flops as f64 / s.total_flops as f64,
        param_ratio: r.total_params as f64 / s.total_params as f64,
        reference: r,
        subject: s,
    })
}

impl ModelReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,layer,kind,out_h,out_w,out_c,flops,params\n");
        for (section, rep) in [("reference", &self.reference), ("subject", &self.subject)] {
            for l in &rep.layers {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{}\n",
                    section, l.index, l.kind, l.output.0, l.output.1, l.output.2, l.flops, l.params
                ));
            }
            out.push_str(&format!(
                "{},total,,,,,{},{}\n",
                section, rep.total_flops, rep.total_params
            ));
        }
        out.push_str(&format!("ratio,flops,,,,,{:.4},\n", self.flops_ratio));
        out.push_str(&format!("ratio,params,,,,,,{:.4}\n", self.param_ratio));
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (section, rep) in [("reference", &self.reference), ("subject", &self.subject)] {
            out.push_str(&format!("{section}:\n"));
            out.push_str(&format!(
                "  {:<5} {:<8} {:>14} {:>14} {:>12}\n",
                "layer", "kind", "output", "flops", "params"
            ));
            for l in &rep.layers {
                out.push_str(&format!(
                    "  {:<5} {:<8} {:>14} {:>14} {:>12}\n",
                    l.index,
                    l.kind,
                    format!("{}x{}x{}", l.output.0, l.output.1, l.output.2),
                    l.flops,
                    l.params
                ));
            }
            out.push_str(&format!(
                "  total flops {} params {}\n",
                rep.total_flops, rep.total_params
            ));
        }
        out.push_str(&format!(
            "flops ratio {:.2}x, parameter ratio {:.2}x\n",
            self.flops_ratio, self.param_ratio
        ));
        out
    }
}

/// The seeded synthetic benchmark: kinds cycle plain → distractor →
/// occlusion → scale, so 20 sequences give five of each.
pub fn synth_benchmark(seed: u64, count: usize, length: usize) -> Vec<SequenceRecord> {
    let kinds = [
        SynthKind::Plain,
        SynthKind::Distractor,
        SynthKind::Occlusion,
        SynthKind::ScaleChange,
    ];
    (0..count)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let mut cfg = SynthConfig::kind(kind);
            cfg.name_prefix = format!("synth-{}", kind.name());
            let mut seqs = synth_sequences(1, length, seed.wrapping_add(i as u64), &cfg);
            let mut seq = seqs.pop().expect("one sequence");
            seq.name = format!("synth-{}-{:02}", kind.name(), i / kinds.len());
            seq
        })
        .collect()
}

/// Synthetic sequences for training: plain, scale-change and distractor
/// kinds only (no occluders, which would poison training labels).
pub fn synth_training_set(seed: u64, count: usize, length: usize) -> Vec<SequenceRecord> {
    let kinds = [SynthKind::Plain, SynthKind::ScaleChange, SynthKind::Distractor];
    (0..count)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            let cfg = SynthConfig::kind(kind);
            let mut seqs = synth_sequences(1, length, seed.wrapping_add(1000 + i as u64), &cfg);
            let mut seq = seqs.pop().expect("one sequence");
            seq.name = format!("train-{}-{:02}", kind.name(), i);
            seq
        })
        .collect()
}
