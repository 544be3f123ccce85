//! RIFF WAVE input/output. Channel 0 carries speech, channel 1 (when
//! present) the simultaneously recorded EGG.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{Role, Waveform};
use crate::error::{Error, Result};
use crate::io::atomic_write_with;

fn wav_err(path: &Path, source: hound::Error) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads a mono or two-channel WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<(Waveform<f64>, Option<Waveform<f64>>)> {
    let reader = WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(Error::UnsupportedAudio(format!(
            "{}: {} channels (expected 1 or 2)",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => {
            let scale = 1.0 / (1u32 << 15) as f64;
            reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<Result<_, _>>()
                .map_err(|e| wav_err(path, e))?
        }
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedAudio(format!(
                "{}: {bits}-bit {fmt:?}",
                path.display()
            )))
        }
    };
    let channels = spec.channels as usize;
    let frames = interleaved.len() / channels;
    if frames == 0 {
        return Err(Error::UnsupportedAudio(format!("{}: zero-length audio", path.display())));
    }
    let channel = |c: usize| -> Vec<f64> { interleaved.iter().skip(c).step_by(channels).copied().collect() };
    let speech = Waveform::new(channel(0), spec.sample_rate, Role::Speech)?;
    let egg = if channels == 2 {
        Some(Waveform::new(channel(1), spec.sample_rate, Role::Egg)?)
    } else {
        None
    };
    Ok((speech, egg))
}

/// Writes 32-bit float WAV, interleaving the EGG as channel 1 when given.
pub fn write_wav(path: &Path, speech: &Waveform<f64>, egg: Option<&Waveform<f64>>) -> Result<()> {
    if let Some(e) = egg {
        if e.len() != speech.len() || e.sample_rate_hz != speech.sample_rate_hz {
            return Err(Error::InvalidArgument(
                "speech and egg channels must share length and rate".into(),
            ));
        }
    }
    let spec = WavSpec {
        channels: if egg.is_some() { 2 } else { 1 },
        sample_rate: speech.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    atomic_write_with(path, |tmp| {
        let mut w = WavWriter::create(tmp, spec).map_err(|e| wav_err(tmp, e))?;
        for i in 0..speech.len() {
            w.write_sample(speech.samples[i] as f32).map_err(|e| wav_err(tmp, e))?;
            if let Some(e) = egg {
                w.write_sample(e.samples[i] as f32).map_err(|err| wav_err(tmp, err))?;
            }
        }
        w.finalize().map_err(|e| wav_err(tmp, e))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pcm16(path: &Path, channels: u16, rate: u32, samples: &[i16]) {
        let spec = WavSpec {
            channels,
            sample_rate: rate,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(path, spec).unwrap();
        for &s in samples {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
    }

    #[test]
    fn mono_pcm16_header_contract() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.wav");
        let mut samples = vec![0i16; 160];
        samples[3] = -32768;
        samples[4] = 16384;
        write_pcm16(&p, 1, 8000, &samples);
        let (speech, egg) = read_wav(&p).unwrap();
        assert!(egg.is_none());
        assert_eq!(speech.len(), 160);
        assert_eq!(speech.sample_rate_hz, 8000);
        assert_eq!(speech.role, Role::Speech);
        assert_eq!(speech.samples[3], -1.0);
        assert_eq!(speech.samples[4], 0.5);
    }

    #[test]
    fn stereo_splits_speech_and_egg() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        write_pcm16(&p, 2, 16000, &[1, -1, 2, -2, 3, -3]);
        let (speech, egg) = read_wav(&p).unwrap();
        let egg = egg.unwrap();
        assert_eq!(speech.len(), egg.len());
        assert_eq!(egg.role, Role::Egg);
        assert!(speech.samples.iter().all(|&v| v > 0.0));
        assert!(egg.samples.iter().all(|&v| v < 0.0));
    }

    #[test]
    fn float_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let speech = Waveform::new(vec![0.25, -0.5, 0.125], 16000, Role::Speech).unwrap();
        let egg = Waveform::new(vec![-0.75, 0.0, 0.5], 16000, Role::Egg).unwrap();
        write_wav(&p, &speech, Some(&egg)).unwrap();
        let (s2, e2) = read_wav(&p).unwrap();
        assert_eq!(s2.samples, speech.samples);
        assert_eq!(e2.unwrap().samples, egg.samples);
    }

    #[test]
    fn rejects_zero_length_and_24_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("z.wav");
        write_pcm16(&p, 1, 16000, &[]);
        assert!(matches!(read_wav(&p), Err(Error::UnsupportedAudio(_))));

        let p24 = dir.path().join("x.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: 16000,
            bits_per_sample: 24,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&p24, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&p24), Err(Error::UnsupportedAudio(_))));

        assert!(read_wav(&dir.path().join("missing.wav")).is_err());
    }
}
