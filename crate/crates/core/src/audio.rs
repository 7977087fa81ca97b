//! WAV input/output. Everything written is 32-bit float.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Reads every channel of a WAV file (any integer depth or float32) as
/// `f64` in `[-1, 1]`, together with its sample rate.
pub fn read_wav(path: &Path) -> Result<(Vec<Vec<f64>>, u32)> {
    let mut reader = WavReader::open(path).map_err(wav_err(path))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(wav_err(path))?,
        SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(wav_err(path))?
        }
    };
    let mut out = vec![Vec::with_capacity(interleaved.len() / channels.max(1)); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (ch, v) in frame.iter().enumerate() {
            out[ch].push(*v);
        }
    }
    Ok((out, spec.sample_rate))
}

/// Reads a mono file and checks its sample rate.
pub fn read_mono(path: &Path, expected_rate: u32) -> Result<Vec<f64>> {
    let (mut channels, rate) = read_wav(path)?;
    if rate != expected_rate {
        return Err(Error::format(
            path,
            format!("sample rate {rate} Hz, expected {expected_rate} Hz"),
        ));
    }
    if channels.len() != 1 {
        return Err(Error::format(path, format!("{} channels, expected mono", channels.len())));
    }
    Ok(channels.remove(0))
}

pub fn write_wav<C: AsRef<[f64]>>(path: &Path, channels: &[C], sample_rate_hz: u32) -> Result<()> {
    if channels.is_empty() {
        return Err(Error::format(path, "no channels to write"));
    }
    let len = channels[0].as_ref().len();
    if channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(Error::format(path, "channels differ in length"));
    }
    let spec = WavSpec {
        channels: channels.len() as u16,
        sample_rate: sample_rate_hz,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec).map_err(wav_err(path))?;
    for n in 0..len {
        for ch in channels {
            writer.write_sample(ch.as_ref()[n] as f32).map_err(wav_err(path))?;
        }
    }
    writer.finalize().map_err(wav_err(path))
}

pub fn write_mono(path: &Path, signal: &[f64], sample_rate_hz: u32) -> Result<()> {
    write_wav(path, &[signal], sample_rate_hz)
}
