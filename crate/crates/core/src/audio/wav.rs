use std::io::{ErrorKind, Read, Write};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{chunk_len, AudioChunk, AudioError, Result, CHUNKS_PER_SECOND};

fn to_float(s: i16) -> f32 {
    s as f32 / 32768.0
}

fn to_pcm(s: f32) -> i16 {
    (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Reads a 16-bit PCM mono WAV file as a sequence of chunks. A trailing partial chunk is
/// zero-padded and flagged.
pub fn read_pcm(path: impl AsRef<Path>) -> Result<Vec<AudioChunk>> {
    let path = path.as_ref();
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}: {} channels, only mono is supported",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}: {}-bit {:?} samples, only 16-bit PCM is supported",
            path.display(),
            spec.bits_per_sample,
            spec.sample_format
        )));
    }
    if spec.sample_rate % CHUNKS_PER_SECOND != 0 {
        return Err(AudioError::UnsupportedFormat(format!(
            "{}: sample rate {} is not a multiple of {CHUNKS_PER_SECOND}",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .map(|s| s.map(to_float))
        .collect::<std::result::Result<Vec<_>, _>>()?;

    let len = chunk_len(spec.sample_rate);
    samples
        .chunks(len)
        .enumerate()
        .map(|(i, block)| {
            let start = (i * len) as u64;
            if block.len() == len {
                AudioChunk::new(block.to_vec(), spec.sample_rate, start)
            } else {
                AudioChunk::partial(block, spec.sample_rate, start)
            }
        })
        .collect()
}

/// Writes chunks as 16-bit PCM mono WAV, trimming padding from partial chunks.
pub fn write_pcm(path: impl AsRef<Path>, chunks: &[AudioChunk]) -> Result<()> {
    let sample_rate = chunks
        .first()
        .map(|c| c.sample_rate())
        .unwrap_or(super::DEFAULT_SAMPLE_RATE);
    let spec = WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec)?;
    for chunk in chunks {
        if chunk.sample_rate() != sample_rate {
            return Err(AudioError::InvalidArgument(
                "all chunks must share one sample rate".into(),
            ));
        }
        for &s in &chunk.samples()[..chunk.valid_len()] {
            writer.write_sample(to_pcm(s))?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Reads one frame of raw little-endian 16-bit PCM. Returns `None` at a clean end of
/// stream; a short final frame is padded and flagged.
pub fn read_raw_frame(
    reader: &mut impl Read,
    sample_rate: u32,
    start_index: u64,
) -> Result<Option<AudioChunk>> {
    let len = chunk_len(sample_rate);
    let mut bytes = vec![0u8; len * 2];
    let mut filled = 0;
    while filled < bytes.len() {
        match reader.read(&mut bytes[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    if filled == 0 {
        return Ok(None);
    }
    let samples: Vec<f32> = bytes[..filled - filled % 2]
        .chunks_exact(2)
        .map(|b| to_float(i16::from_le_bytes([b[0], b[1]])))
        .collect();
    let chunk = if samples.len() == len {
        AudioChunk::new(samples, sample_rate, start_index)?
    } else {
        AudioChunk::partial(&samples, sample_rate, start_index)?
    };
    Ok(Some(chunk))
}

pub fn write_raw_frame(writer: &mut impl Write, chunk: &AudioChunk) -> Result<()> {
    let bytes: Vec<u8> = chunk.samples()[..chunk.valid_len()]
        .iter()
        .flat_map(|&s| to_pcm(s).to_le_bytes())
        .collect();
    writer.write_all(&bytes)?;
    Ok(())
}
