//! Rational-ratio polyphase resampling with a Kaiser-windowed sinc kernel.

use crate::scalar::Scalar;

const TAPS_PER_PHASE: usize = 64;
const KAISER_BETA: f64 = 8.6;

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resamples `x` from `from_hz` to `to_hz`.
///
/// Output sample `n` sits at input time `n * from / to`; the kernel spans
/// 64 input samples, and its cutoff is lowered to the output Nyquist
/// when decimating. Output length is `ceil(len * to / from)`.
pub fn resample<T: Scalar>(x: &[T], from_hz: u32, to_hz: u32) -> Vec<T> {
    if from_hz == to_hz {
        return x.to_vec();
    }
    let g = gcd(from_hz as u64, to_hz as u64);
    let up = to_hz as u64 / g;
    let down = from_hz as u64 / g;
    let scale = (up as f64 / down as f64).min(1.0);
    let half = (TAPS_PER_PHASE / 2) as f64;
    let i0_beta = bessel_i0(KAISER_BETA);

    // table[phase][k] weights input sample (base - half + 1 + k)
    let table: Vec<Vec<T>> = (0..up)
        .map(|phase| {
            (0..TAPS_PER_PHASE)
                .map(|k| {
                    let tau = phase as f64 / up as f64 + half - 1.0 - k as f64;
                    let r = tau / half;
                    if r.abs() >= 1.0 {
                        return T::zero();
                    }
                    let window = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                    T::of(scale * sinc(scale * tau) * window)
                })
                .collect()
        })
        .collect();

    let out_len = (x.len() as u64 * up).div_ceil(down) as usize;
    let n_in = x.len() as i64;
    (0..out_len as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &table[(pos % up) as usize];
            let first = base - half as i64 + 1;
            let mut acc = T::zero();
            for (k, &w) in taps.iter().enumerate() {
                let j = first + k as i64;
                if j >= 0 && j < n_in {
                    acc += w * x[j as usize];
                }
            }
            acc
        })
        .collect()
}
