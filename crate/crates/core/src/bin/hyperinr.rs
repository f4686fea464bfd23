//! Command-line front end. Output is one `key=value` line per fact.
//!
//! Exit codes: 0 success, 1 runtime or verification failure, 2 usage or
//! configuration error, 3 training divergence.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use hyperinr::audio::{read_wav, resampled_len, stft, write_wav, AudioBuffer, WavEncoding};
use hyperinr::config::RunConfig;
use hyperinr::data::{build_manifest, ingest, leading_crop, Dataset, DatasetManifest};
use hyperinr::hypernet::HyperNetModel;
use hyperinr::inr::{make_grid, TargetNetParams};
use hyperinr::metrics::{evaluate_set, EvalItem};
use hyperinr::train::{self, gradcheck, GradComponent};
use hyperinr::Error;

#[derive(Parser)]
#[command(name = "hyperinr", version, about = "Waveform to implicit-neural-representation toolkit")]
struct Cli {
    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Float32,
    Pcm16,
}

impl From<Format> for WavEncoding {
    fn from(f: Format) -> Self {
        match f {
            Format::Float32 => WavEncoding::Float32,
            Format::Pcm16 => WavEncoding::Pcm16,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a hypernetwork on a directory of per-speaker WAV folders.
    Train {
        /// JSON run configuration; flags below override its values.
        #[arg(long, conflicts_with = "preset")]
        config: Option<PathBuf>,
        /// Built-in configuration (desk or paper) used when --config is absent.
        #[arg(long, default_value = "desk")]
        preset: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Number of speakers held out for validation.
        #[arg(long, default_value_t = 0)]
        val_speakers: usize,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Predict INR weights for one recording.
    Encode {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate INR weights on a uniform grid.
    Render {
        #[arg(long)]
        inr: PathBuf,
        #[arg(long)]
        rate: u32,
        #[arg(long)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "float32")]
        format: Format,
    },
    /// Encode a recording and render it at another rate.
    Resample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        rate: u32,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "float32")]
        format: Format,
    },
    /// Score reconstructions at one or more rates.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Dataset directory or a manifest JSON written by `train`.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated sampling rates.
        #[arg(long, value_delimiter = ',', required = true)]
        rates: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
        /// Evaluate the first N samples of each file (0 = whole file).
        #[arg(long, default_value_t = 0)]
        crop: usize,
    },
    /// Compare analytic gradients with central differences.
    Gradcheck {
        #[arg(long)]
        component: GradComponent,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Export a magnitude spectrogram as CSV.
    Spectrogram {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = 1024)]
        fft: usize,
        #[arg(long, default_value_t = 256)]
        hop: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::NonFiniteLoss { .. } => 3,
            Error::InvalidConfig(_)
            | Error::UnknownPreset(_)
            | Error::EmptyDataset(_)
            | Error::InputTooShort { .. }
            | Error::TooFewSamples(_)
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::LengthMismatch { .. }
            | Error::CorruptHeader(_)
            | Error::UnsupportedFormat(_)
            | Error::NonFiniteParams
            | Error::DimensionMismatch { .. }
            | Error::InvalidRange(_)
            | Error::Json(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e).into()
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn load_model(path: &Path) -> Result<HyperNetModel, Failure> {
    Ok(HyperNetModel::load_checkpoint(path)?.model)
}

/// Reads a WAV and brings it to the model's rate.
fn read_at_rate(path: &Path, rate: u32) -> Result<AudioBuffer, Failure> {
    let audio = read_wav(path)?;
    Ok(if audio.sample_rate() == rate {
        audio
    } else {
        hyperinr::audio::sinc_resample(&audio, rate)
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    config: Option<PathBuf>,
    preset: &str,
    data: &Path,
    out: &Path,
    steps: Option<u64>,
    seed: Option<u64>,
    val_speakers: usize,
    resume: Option<PathBuf>,
    threads: usize,
) -> CmdResult {
    let mut run = match config {
        Some(path) => RunConfig::load(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?,
        None => RunConfig::preset(preset)?,
    };
    if let Some(s) = steps {
        run.steps = s;
    }
    if let Some(s) = seed {
        run = run.with_seed(s);
    }
    run.validate()?;
    let arch = &run.architecture;
    let split = build_manifest(data, arch.crop_length, arch.sample_rate, val_speakers)?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.json"), run.to_json()?)?;
    split.train.save(out.join("train_manifest.json"))?;
    split.val.save(out.join("val_manifest.json"))?;
    println!("train_files={}", split.train.entries.len());
    println!("val_files={}", split.val.entries.len());
    println!("skipped_files={}", split.skipped);

    let dataset = Dataset::from_manifest(&split.train)?;
    let tc = run.train_config(threads, Some(out.join("checkpoints")));
    let outcome = match resume {
        Some(path) => train::resume(HyperNetModel::load_checkpoint(path)?, &dataset, &tc),
        None => train::train(HyperNetModel::init(run.seed, run.model_config()?)?, &dataset, &tc),
    };
    let outcome = match outcome {
        Ok(o) => o,
        Err(Error::NonFiniteLoss { step, last_checkpoint }) => {
            println!("status=diverged");
            println!("step={step}");
            if let Some(p) = &last_checkpoint {
                println!("last_checkpoint={}", p.display());
            }
            return Err(Failure {
                code: 3,
                message: format!("non-finite loss at step {step}"),
            });
        }
        Err(e) => return Err(e.into()),
    };
    for e in &outcome.log.entries {
        println!("step={} total_loss={} sl1={} stft={}", e.step, e.total_loss, e.sl1, e.stft);
    }
    outcome.log.write_csv(BufWriter::new(File::create(out.join("train_log.csv"))?))?;
    let model_path = out.join("model.hsck");
    outcome
        .model
        .save_checkpoint(&model_path, Some(&outcome.optimizer.snapshot()), Some(serde_json::to_value(&run).map_err(Error::from)?))?;
    println!("steps={}", outcome.optimizer.step);
    println!("checkpoint={}", model_path.display());
    Ok(())
}

fn cmd_encode(ckpt: &Path, input: &Path, out: &Path) -> CmdResult {
    let model = load_model(ckpt)?;
    let x = read_at_rate(input, model.config().sample_rate)?;
    let inr = model.predict_inr(&x)?;
    std::fs::write(out, inr.to_bytes())?;
    println!("params={}", inr.theta().len());
    println!("out={}", out.display());
    Ok(())
}

fn cmd_render(inr: &Path, rate: u32, samples: usize, out: &Path, format: Format) -> CmdResult {
    let params = TargetNetParams::from_bytes(&std::fs::read(inr)?)?;
    let audio = params.render(&make_grid(samples, rate)?)?;
    write_wav(&audio, out, format.into())?;
    println!("samples={}", audio.len());
    println!("rate={rate}");
    println!("out={}", out.display());
    Ok(())
}

fn cmd_resample(ckpt: &Path, input: &Path, rate: u32, out: &Path, format: Format) -> CmdResult {
    let model = load_model(ckpt)?;
    let original = read_wav(input)?;
    let n = resampled_len(original.len(), original.sample_rate(), rate);
    let native = model.config().sample_rate;
    let x = if original.sample_rate() == native {
        original
    } else {
        hyperinr::audio::sinc_resample(&original, native)
    };
    let audio = model.predict_inr(&x)?.render(&make_grid(n, rate)?)?;
    write_wav(&audio, out, format.into())?;
    println!("samples={}", audio.len());
    println!("rate={rate}");
    println!("out={}", out.display());
    Ok(())
}

fn eval_items(data: &Path, rate: u32, crop: usize) -> Result<Vec<EvalItem>, Failure> {
    let crop_to = |audio: AudioBuffer, crop: usize| if crop > 0 { leading_crop(&audio, crop) } else { audio };
    if data.is_file() {
        let manifest = DatasetManifest::load(data)?;
        let crop = if crop > 0 { crop } else { manifest.crop_length };
        return manifest
            .entries
            .iter()
            .map(|e| {
                let (_, audio) = ingest(&e.path, rate)?;
                let stem = e.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                Ok(EvalItem {
                    id: format!("{}/{stem}", e.speaker_id),
                    audio: crop_to(audio, crop),
                })
            })
            .collect();
    }
    let split = build_manifest(data, crop.max(1), rate, 0)?;
    split
        .train
        .entries
        .iter()
        .map(|e| {
            let (_, audio) = ingest(&e.path, rate)?;
            let stem = e.path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            Ok(EvalItem {
                id: format!("{}/{stem}", e.speaker_id),
                audio: crop_to(audio, crop),
            })
        })
        .collect()
}

fn cmd_eval(ckpt: &Path, data: &Path, rates: &[u32], out: &Path, crop: usize) -> CmdResult {
    let model = load_model(ckpt)?;
    let items = eval_items(data, model.config().sample_rate, crop)?;
    if items.is_empty() {
        return Err(usage("no evaluation items"));
    }
    std::fs::create_dir_all(out)?;
    for &rate in rates {
        if rate == 0 {
            return Err(usage("rates must be positive"));
        }
        let report = evaluate_set(&model, &items, rate)?;
        report.write_csv(BufWriter::new(File::create(out.join(format!("report_{rate}.csv")))?))?;
        std::fs::write(out.join(format!("report_{rate}.json")), report.to_json()?)?;
        let a = &report.aggregate;
        let si_snr = a.si_snr_db.map_or("nan".to_string(), |v| v.to_string());
        println!(
            "rate={rate} count={} failures={} mse={} lsd={} si_snr_db={si_snr}",
            a.count,
            report.failures.len(),
            a.mse,
            a.lsd
        );
    }
    Ok(())
}

fn cmd_gradcheck(component: GradComponent, seed: u64) -> CmdResult {
    let r = gradcheck(component, seed)?;
    println!("component={}", r.component);
    println!("max_rel_error={:e}", r.max_rel_error);
    println!("checked={}", r.checked);
    println!("skipped={}", r.skipped);
    println!("unresolved={}", r.unresolved);
    println!("noise={:e}", r.noise);
    println!("passed={}", r.passed);
    if r.passed {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("gradcheck failed for {component}"),
        })
    }
}

fn cmd_spectrogram(input: &Path, fft: usize, hop: usize, out: &Path) -> CmdResult {
    let x = read_wav(input)?;
    let spec = stft(&x, fft, hop)?;
    spec.write_csv(BufWriter::new(File::create(out)?))?;
    println!("frames={}", spec.frames());
    println!("bins={}", spec.bins());
    println!("out={}", out.display());
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    let threads = cli.threads.max(1);
    match cli.command {
        Command::Train {
            config,
            preset,
            data,
            out,
            steps,
            seed,
            val_speakers,
            resume,
        } => cmd_train(config, &preset, &data, &out, steps, seed, val_speakers, resume, threads),
        Command::Encode { ckpt, input, out } => cmd_encode(&ckpt, &input, &out),
        Command::Render {
            inr,
            rate,
            samples,
            out,
            format,
        } => cmd_render(&inr, rate, samples, &out, format),
        Command::Resample {
            ckpt,
            input,
            rate,
            out,
            format,
        } => cmd_resample(&ckpt, &input, rate, &out, format),
        Command::Eval {
            ckpt,
            data,
            rates,
            out,
            crop,
        } => cmd_eval(&ckpt, &data, &rates, &out, crop),
        Command::Gradcheck { component, seed } => cmd_gradcheck(component, seed),
        Command::Spectrogram { input, fft, hop, out } => cmd_spectrogram(&input, fft, hop, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
