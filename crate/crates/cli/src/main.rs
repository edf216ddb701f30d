//! Command-line surface: offline distillation, first-frame adaptation,
//! sequence tracking, benchmark evaluation, model cost reports, and the
//! oracle/gradient selfcheck. The seed defaults to 0 and can be overridden
//! through the DT_SEED environment variable.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use cftrack_core::adapt::{adapt_online, AdaptContext, OnlineConfig};
use cftrack_core::bench::{
    load_sequence, report_csv, report_model, run_ope, synth_benchmark, synth_training_set,
    SequenceRecord, Tracker,
};
use cftrack_core::distill::{
    build_training_set, train_offline, write_history_csv, CropConfig, TrainingConfig,
};
use cftrack_core::nnet::{count_flops, load_weights, save_weights, NetworkSpec, NetworkWeights};
use cftrack_core::tracker::{tracker_init, write_trajectory, LevelSelect, Net, TrackerConfig};
use cftrack_core::util::default_seed;
use cftrack_core::{Frame, Rect};

#[derive(Parser)]
#[command(name = "cftrack", about = "Correlation-filter tracking with distilled features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Distill a teacher network into a pruned student.
    Distill {
        /// Teacher weights file, or `random:SEED` for a seeded random teacher.
        #[arg(long)]
        teacher: String,
        /// Sequence directory, or `synth:N` for N synthetic sequences.
        #[arg(long)]
        data: String,
        /// Teacher geometry when the teacher is random: table3 or desk64.
        #[arg(long, default_value = "desk64")]
        profile: String,
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Number of training pairs sampled from the data.
        #[arg(long, default_value_t = 200)]
        pairs: usize,
        /// Output student weights file.
        #[arg(long)]
        out: PathBuf,
        /// Loss history CSV.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Fine-tune a student on the first frame of a sequence.
    Adapt {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long, default_value_t = 8)]
        iters: usize,
        /// Teacher weights for the fidelity term; omitted = tracking-only.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Track one sequence and write the trajectory.
    Track {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        /// low | middle | high | fused
        #[arg(long, default_value = "fused")]
        level: String,
        /// Run background-aware adaptation on the first frame.
        #[arg(long)]
        adapt: bool,
        /// Teacher weights for the adaptation fidelity term.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-pass evaluation over a dataset.
    Bench {
        #[arg(long)]
        net: PathBuf,
        /// Dataset directory (one sequence per subdirectory) or `synth:N`.
        #[arg(long)]
        dataset: String,
        #[arg(long, default_value = "fused")]
        level: String,
        /// Run background-aware adaptation on each first frame.
        #[arg(long)]
        adapt: bool,
        /// Teacher weights for the adaptation fidelity term.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Report CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// FLOPs and parameter accounting for a network spec.
    Flops {
        /// Profile name (table3, table3-student, desk64, desk64-student) or
        /// a JSON spec file.
        #[arg(long)]
        spec: String,
        /// Optional reference spec for compression ratios.
        #[arg(long = "ref")]
        reference: Option<String>,
    },
    /// Run all oracle and gradient suites; exits nonzero on failure.
    Selfcheck,
}

fn parse_spec(arg: &str) -> Result<NetworkSpec> {
    if let Some(spec) = NetworkSpec::profile(arg) {
        return Ok(spec);
    }
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let spec: NetworkSpec =
            serde_json_from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        spec.validate()?;
        return Ok(spec);
    }
    bail!("'{arg}' is neither a known profile nor a readable spec file")
}

// serde_json is not a direct dependency of the CLI; the core crate exposes
// its spec parsing through this shim.
fn serde_json_from_str(text: &str) -> Result<NetworkSpec> {
    cftrack_core::nnet::spec_from_json(text).map_err(|e| anyhow!("{e}"))
}

fn load_dataset(arg: &str, seed: u64) -> Result<Vec<SequenceRecord>> {
    if let Some(n) = arg.strip_prefix("synth:") {
        let n: usize = n.parse().context("synth:N needs an integer")?;
        return Ok(synth_benchmark(seed, n, 40));
    }
    let dir = Path::new(arg);
    let mut seqs = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            seqs.push(load_sequence(&path)?);
        }
    }
    if seqs.is_empty() {
        bail!("no sequence directories under {}", dir.display());
    }
    seqs.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(seqs)
}

fn load_net(path: &Path) -> Result<Arc<Net>> {
    let (spec, weights) = load_weights(path, None)?;
    Ok(Arc::new(Net { spec, weights }))
}

fn first_frame(seq: &SequenceRecord) -> Result<(Frame, Rect)> {
    let frame = seq.frame(0)?.into_owned();
    Ok((frame, seq.boxes[0]))
}

fn tracker_config(level: &str, input_size: usize) -> Result<TrackerConfig> {
    let level = LevelSelect::parse(level)
        .ok_or_else(|| anyhow!("level must be low, middle, high or fused"))?;
    Ok(TrackerConfig {
        level,
        input_size,
        ..TrackerConfig::default()
    })
}

fn run_distill(
    teacher: &str,
    data: &str,
    profile: &str,
    epochs: usize,
    pairs: usize,
    out: &Path,
    log: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let (teacher_spec, teacher_weights) = if let Some(s) = teacher.strip_prefix("random:") {
        let tseed: u64 = s.parse().context("random:SEED needs an integer")?;
        let spec = NetworkSpec::profile(profile)
            .ok_or_else(|| anyhow!("unknown profile '{profile}'"))?;
        let weights = NetworkWeights::seeded(&spec, tseed)?;
        (spec, weights)
    } else {
        load_weights(Path::new(teacher), None)?
    };
    let sequences = if let Some(n) = data.strip_prefix("synth:") {
        let n: usize = n.parse().context("synth:N needs an integer")?;
        synth_training_set(seed, n, 30)
    } else {
        load_dataset(data, seed)?
    };
    let crop = CropConfig {
        out_size: teacher_spec.input.0,
        ..CropConfig::default()
    };
    let dataset = build_training_set(&sequences, pairs, &crop, seed)?;
    eprintln!(
        "distilling: {} pairs from {} sequences, {} epochs",
        dataset.len(),
        sequences.len(),
        epochs
    );
    let config = TrainingConfig {
        epochs,
        seed,
        ..TrainingConfig::default()
    };
    let output = train_offline(&dataset, &teacher_spec, &teacher_weights, &config)?;
    save_weights(out, &output.spec, &output.weights)?;
    if let Some(log) = log {
        write_history_csv(log, &output.history)?;
    }
    let first = output.history.first().expect("history has the init row");
    let last = output.history.last().expect("history has epochs");
    println!(
        "distilled student written to {} (loss {:.6} -> {:.6})",
        out.display(),
        first.total,
        last.total
    );
    Ok(())
}

fn adapt_context<'a>(
    adapt: bool,
    teacher: &'a Option<(NetworkSpec, NetworkWeights)>,
    seed: u64,
    iterations: usize,
) -> Option<AdaptContext<'a>> {
    if !adapt {
        return None;
    }
    Some(AdaptContext {
        teacher: teacher.as_ref().map(|(s, w)| (s, w)),
        config: OnlineConfig {
            seed,
            iterations,
            ..OnlineConfig::default()
        },
    })
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let seed = default_seed();
    match cli.command {
        Command::Distill {
            teacher,
            data,
            profile,
            epochs,
            pairs,
            out,
            log,
        } => run_distill(
            &teacher,
            &data,
            &profile,
            epochs,
            pairs,
            &out,
            log.as_deref(),
            seed,
        ),
        Command::Adapt {
            net,
            sequence,
            iters,
            teacher,
            out,
        } => {
            let (spec, weights) = load_weights(&net, None)?;
            let teacher = teacher
                .map(|p| load_weights(&p, None))
                .transpose()?;
            let seq = load_sequence(&sequence)?;
            let (frame, bbox) = first_frame(&seq)?;
            let config = OnlineConfig {
                iterations: iters,
                seed,
                ..OnlineConfig::default()
            };
            let outcome = adapt_online(
                &spec,
                &weights,
                teacher.as_ref().map(|(s, w)| (s, w)),
                &frame,
                bbox,
                &config,
            )?;
            if let Some(w) = &outcome.warning {
                eprintln!("warning: {w}");
            }
            save_weights(&out, &spec, &outcome.weights)?;
            println!("adapted weights written to {}", out.display());
            Ok(())
        }
        Command::Track {
            net,
            sequence,
            level,
            adapt,
            teacher,
            out,
        } => {
            let net = load_net(&net)?;
            let teacher = teacher.map(|p| load_weights(&p, None)).transpose()?;
            let seq = load_sequence(&sequence)?;
            let (frame, bbox) = first_frame(&seq)?;
            let config = tracker_config(&level, net.spec.input.0)?;
            let ctx = adapt_context(adapt, &teacher, seed, 8);
            let mut state = tracker_init(&frame, bbox, net, config, ctx.as_ref())?;
            let mut boxes = vec![bbox];
            for i in 1..seq.len() {
                let frame = seq.frame(i)?;
                boxes.push(state.track(&frame)?.bbox);
            }
            write_trajectory(&out, &boxes)?;
            println!("trajectory ({} frames) written to {}", boxes.len(), out.display());
            Ok(())
        }
        Command::Bench {
            net,
            dataset,
            level,
            adapt,
            teacher,
            out,
        } => {
            let net = load_net(&net)?;
            let teacher = teacher.map(|p| load_weights(&p, None)).transpose()?;
            let sequences = load_dataset(&dataset, seed)?;
            let config = tracker_config(&level, net.spec.input.0)?;
            let factory = |frame: &Frame, bbox: Rect, seed: u64| {
                let ctx = adapt_context(adapt, &teacher, seed, 8);
                let state = tracker_init(frame, bbox, net.clone(), config.clone(), ctx.as_ref())?;
                Ok(Box::new(state) as Box<dyn Tracker>)
            };
            let report = run_ope(&sequences, &factory, seed)?;
            std::fs::write(&out, report_csv(&report))?;
            for e in &report.sequences {
                println!(
                    "{:<24} auc {:.4} mean-iou {:.4}{}",
                    e.name,
                    e.auc,
                    e.mean_iou,
                    if e.failed { "  [failed]" } else { "" }
                );
            }
            println!("mean auc {:.4} over {} sequences", report.mean_auc, report.sequences.len());
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Flops { spec, reference } => {
            let subject = parse_spec(&spec)?;
            match reference {
                Some(r) => {
                    let reference = parse_spec(&r)?;
                    let report = report_model(&reference, &subject)?;
                    print!("{}", report.to_text());
                }
                None => {
                    let report = count_flops(&subject)?;
                    for l in &report.layers {
                        println!(
                            "layer {:<3} {:<8} out {:>3}x{:<3}x{:<4} flops {:>12} params {:>9}",
                            l.index, l.kind, l.output.0, l.output.1, l.output.2, l.flops, l.params
                        );
                    }
                    println!("total flops {}", report.total_flops);
                    println!("total params {}", report.total_params);
                }
            }
            Ok(())
        }
        Command::Selfcheck => {
            let results = cftrack_core::selfcheck::run_all(seed);
            let mut all = true;
            for r in &results {
                println!(
                    "{} {:<45} {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
                all &= r.passed;
            }
            if !all {
                std::process::exit(1);
            }
            Ok(())
        }
    }
}
