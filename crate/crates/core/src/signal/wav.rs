use std::io::{Cursor, Read, Seek, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use serde::{Deserialize, Serialize};

use super::TimeSignal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WavEncoding {
    /// 16-bit signed PCM; lossy, `x * 32768` rounded and clamped.
    Pcm16,
    /// IEEE float32; bit-exact for [`TimeSignal`] samples.
    Float32,
}

impl WavEncoding {
    pub fn suffix(self) -> &'static str {
        match self {
            WavEncoding::Pcm16 => "pcm16",
            WavEncoding::Float32 => "f32",
        }
    }
}

fn wav_err(path: &Path) -> impl FnOnce(hound::Error) -> Error + '_ {
    move |source| Error::Wav {
        path: path.to_path_buf(),
        source,
    }
}

/// Loads a PCM integer (16/24/32-bit) or float32 wav file as mono.
/// Integers are scaled by `2^-(bits-1)`; channels are averaged.
pub fn load_wav(path: impl AsRef<Path>) -> Result<TimeSignal> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(wav_err(path))?;
    read(reader, path)
}

fn read<R: Read>(reader: WavReader<R>, path: &Path) -> Result<TimeSignal> {
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::UnsupportedWav("zero channels".into()));
    }
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(wav_err(path))?,
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = 1.0 / (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| (v as f64 * scale) as f32))
                .collect::<Result<_, _>>()
                .map_err(wav_err(path))?
        }
        (format, bits) => {
            return Err(Error::UnsupportedWav(format!(
                "{bits}-bit {format:?} samples in {}",
                path.display()
            )))
        }
    };
    if interleaved.len() < channels {
        return Err(Error::InvalidSignal(format!("{} contains no audio", path.display())));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| (frame.iter().map(|&s| s as f64).sum::<f64>() / channels as f64) as f32)
            .collect()
    };
    TimeSignal::new(samples, spec.sample_rate)
}

/// Writes a mono wav. Samples outside `[-1, 1]` are hard-clipped and the
/// number clipped is logged.
pub fn save_wav(signal: &TimeSignal, path: impl AsRef<Path>, encoding: WavEncoding) -> Result<()> {
    let path = path.as_ref();
    let writer = WavWriter::create(path, wav_spec(signal, encoding)).map_err(wav_err(path))?;
    write(signal, writer, encoding, path)
}

/// What a save/load cycle through `encoding` does to `signal`, without
/// touching the filesystem.
pub fn wav_roundtrip(signal: &TimeSignal, encoding: WavEncoding) -> Result<TimeSignal> {
    let origin = Path::new("<memory>");
    let mut buf = Cursor::new(Vec::new());
    let writer = WavWriter::new(&mut buf, wav_spec(signal, encoding)).map_err(wav_err(origin))?;
    write(signal, writer, encoding, origin)?;
    buf.set_position(0);
    read(WavReader::new(buf).map_err(wav_err(origin))?, origin)
}

fn wav_spec(signal: &TimeSignal, encoding: WavEncoding) -> WavSpec {
    let (bits, format) = match encoding {
        WavEncoding::Pcm16 => (16, SampleFormat::Int),
        WavEncoding::Float32 => (32, SampleFormat::Float),
    };
    WavSpec {
        channels: 1,
        sample_rate: signal.sample_rate(),
        bits_per_sample: bits,
        sample_format: format,
    }
}

fn write<W: Write + Seek>(
    signal: &TimeSignal,
    mut writer: WavWriter<W>,
    encoding: WavEncoding,
    path: &Path,
) -> Result<()> {
    let clipped = signal.samples().iter().filter(|s| s.abs() > 1.0).count();
    if clipped > 0 {
        log::warn!("{}: clipped {clipped} samples to [-1, 1]", path.display());
    }
    for &s in signal.samples() {
        let s = s.clamp(-1.0, 1.0);
        match encoding {
            WavEncoding::Pcm16 => {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(wav_err(path))?;
            }
            WavEncoding::Float32 => writer.write_sample(s).map_err(wav_err(path))?,
        }
    }
    writer.finalize().map_err(wav_err(path))
}
