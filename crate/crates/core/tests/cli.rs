mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use hyperinr::audio::{read_wav, write_wav, AudioBuffer, WavEncoding};
use hyperinr::inr::{TargetNetConfig, TargetNetParams};

const RATE: u32 = 22050;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hyperinr"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn hyperinr")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Trained {
    _dir: tempfile::TempDir,
    data: PathBuf,
    out: PathBuf,
}

/// One short desk run shared by the tests that need a checkpoint.
fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        common::write_sine_corpus(&data, 2, 2, 4096, RATE, 1);
        let out = dir.path().join("run");
        let o = run(&["train", "--data", p(&data), "--out", p(&out), "--steps", "3", "--seed", "4"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        Trained { _dir: dir, data, out }
    })
}

#[test]
fn train_writes_run_artifacts() {
    let t = trained();
    for f in ["model.hsck", "config.json", "train_log.csv", "train_manifest.json", "checkpoints/step_00000003.hsck"] {
        assert!(t.out.join(f).exists(), "{f} missing");
    }
    let log = std::fs::read_to_string(t.out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("step,total_loss,sl1,stft,wall_time"));
}

#[test]
fn missing_data_flag_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("--data"));
}

#[test]
fn zero_steps_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_sine_corpus(&data, 1, 1, 4096, RATE, 2);
    let o = run(&["train", "--data", p(&data), "--out", p(&dir.path().join("o")), "--steps", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_preset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--preset", "huge", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn encode_is_deterministic_and_tagged() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let wav = t.data.join("spk0/clip0.wav");
    let a = dir.path().join("a.hsir");
    let b = dir.path().join("b.hsir");
    for out in [&a, &b] {
        let o = run(&["encode", "--ckpt", p(&t.out.join("model.hsck")), "--in", p(&wav), "--out", p(out)]);
        assert_eq!(code(&o), 0);
    }
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(&bytes[..4], b"HSIR");
    assert_eq!(bytes, std::fs::read(&b).unwrap());
}

#[test]
fn encode_rejects_input_shorter_than_the_encoder_hop() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("short.wav");
    write_wav(&AudioBuffer::new(vec![0.1; 100], RATE).unwrap(), &wav, WavEncoding::Float32).unwrap();
    let o = run(&["encode", "--ckpt", p(&t.out.join("model.hsck")), "--in", p(&wav), "--out", p(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn render_of_zero_weights_is_silent() {
    let dir = tempfile::tempdir().unwrap();
    let inr = dir.path().join("zero.hsir");
    std::fs::write(&inr, TargetNetParams::zeros(TargetNetConfig::small()).unwrap().to_bytes()).unwrap();
    let wav = dir.path().join("out.wav");
    let o = run(&["render", "--inr", p(&inr), "--rate", "8000", "--samples", "11889", "--out", p(&wav)]);
    assert_eq!(code(&o), 0);
    let audio = read_wav(&wav).unwrap();
    assert_eq!(audio.len(), 11889);
    assert_eq!(audio.sample_rate(), 8000);
    assert!(audio.samples().iter().all(|&s| s == 0.0));
}

#[test]
fn resample_sets_length_from_the_rate_ratio() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("long.wav");
    let clip = common::sine_clips(1, 32768, RATE, 9).remove(0);
    write_wav(&clip, &wav, WavEncoding::Float32).unwrap();
    let ckpt = t.out.join("model.hsck");
    for (rate, expected) in [(8000u32, 11889usize), (RATE, 32768)] {
        let out = dir.path().join(format!("r{rate}.wav"));
        let o = run(&["resample", "--ckpt", p(&ckpt), "--in", p(&wav), "--rate", &rate.to_string(), "--out", p(&out)]);
        assert_eq!(code(&o), 0);
        assert_eq!(read_wav(&out).unwrap().len(), expected);
    }
}

#[test]
fn eval_writes_one_report_per_rate() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("eval");
    let o = run(&[
        "eval",
        "--ckpt",
        p(&t.out.join("model.hsck")),
        "--data",
        p(&t.data),
        "--rates",
        "8000,16000,22050,44100",
        "--out",
        p(&out),
        "--crop",
        "2048",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    for rate in [8000, 16000, 22050, 44100] {
        assert!(text.contains(&format!("rate={rate} count=4")), "{text}");
        let csv = std::fs::read_to_string(out.join(format!("report_{rate}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 5);
        assert!(out.join(format!("report_{rate}.json")).exists());
    }
}

#[test]
fn eval_of_an_empty_dataset_is_a_usage_error() {
    let t = trained();
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let o = run(&["eval", "--ckpt", p(&t.out.join("model.hsck")), "--data", p(&empty), "--rates", "22050", "--out", p(&dir.path().join("e"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn gradcheck_loss_passes() {
    let o = run(&["gradcheck", "--component", "loss"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("passed=true"));
}

#[test]
fn unknown_gradcheck_component_is_a_usage_error() {
    assert_eq!(code(&run(&["gradcheck", "--component", "decoder"])), 2);
}

#[test]
fn spectrogram_of_silence_is_all_zero() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("silence.wav");
    write_wav(&AudioBuffer::silence(1000, 16000).unwrap(), &wav, WavEncoding::Pcm16).unwrap();
    let csv = dir.path().join("spec.csv");
    let o = run(&["spectrogram", "--in", p(&wav), "--fft", "256", "--hop", "64", "--out", p(&csv)]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut rows = text.lines();
    assert_eq!(rows.next(), Some("frame,bin,magnitude"));
    let rows: Vec<&str> = rows.collect();
    assert_eq!(rows.len(), (1 + 1000 / 64) * 129);
    assert!(rows.iter().all(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap() == 0.0));
}
