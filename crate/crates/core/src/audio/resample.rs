use super::AudioBuffer;

/// Kaiser window shape parameter of the interpolation kernel.
pub const KAISER_BETA: f64 = 14.77;
/// Zero crossings of the sinc kernel on each side of the centre tap.
pub const ZERO_CROSSINGS: usize = 64;
/// Kernel table samples per zero crossing (linear interpolation between them).
const TABLE_RES: usize = 512;

/// Output length for a rate change, `round(len * target / source)`.
pub fn resampled_len(len: usize, source_rate: u32, target_rate: u32) -> usize {
    ((len as f64) * target_rate as f64 / source_rate as f64).round() as usize
}

fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn kernel_table() -> Vec<f64> {
    let n = ZERO_CROSSINGS * TABLE_RES;
    let norm = bessel_i0(KAISER_BETA);
    (0..=n + 1)
        .map(|m| {
            if m > n {
                return 0.0;
            }
            let u = m as f64 / TABLE_RES as f64;
            let sinc = if m == 0 {
                1.0
            } else {
                let pu = std::f64::consts::PI * u;
                pu.sin() / pu
            };
            let r = u / ZERO_CROSSINGS as f64;
            let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / norm;
            sinc * window
        })
        .collect()
}

/// Band-limited resampling with a Kaiser-windowed sinc kernel.
///
/// The lowpass cutoff sits at `min(source, target) / 2`. Samples outside the
/// signal are treated as zero, so only interior samples are free of edge
/// effects. Equal rates return the input unchanged.
pub fn sinc_resample(x: &AudioBuffer, target_rate: u32) -> AudioBuffer {
    assert!(target_rate > 0, "target rate must be positive");
    let src = x.sample_rate();
    if src == target_rate {
        return x.clone();
    }
    let input = x.samples();
    let out_len = resampled_len(input.len(), src, target_rate);
    let table = kernel_table();
    let cutoff = (target_rate as f64 / src as f64).min(1.0);
    let reach = ZERO_CROSSINGS as f64 / cutoff;
    let n = input.len() as i64;

    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len as u64 {
        // Source position of output j, split exactly into integer and fraction.
        let num = j * src as u64;
        let base = (num / target_rate as u64) as i64;
        let frac = (num % target_rate as u64) as f64 / target_rate as f64;
        let lo = (base - reach.floor() as i64 - 1).max(0);
        let hi = (base + reach.ceil() as i64 + 1).min(n - 1);
        let mut acc = 0.0;
        for i in lo..=hi {
            let dist = ((base - i) as f64 + frac).abs() * cutoff;
            let pos = dist * TABLE_RES as f64;
            let idx = pos as usize;
            if idx >= ZERO_CROSSINGS * TABLE_RES {
                continue;
            }
            let t = pos - idx as f64;
            let h = table[idx] + t * (table[idx + 1] - table[idx]);
            acc += input[i as usize] * h;
        }
        out.push(acc * cutoff);
    }
    AudioBuffer::new(out, target_rate).expect("resampled samples are finite")
}
