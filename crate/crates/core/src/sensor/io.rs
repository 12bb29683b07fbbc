use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{LandmarkFrame, Result, SensorError, StateChange};

/// Reads a `*.landmarks.jsonl` stream, validating each frame and the time order.
pub fn read_landmarks(path: impl AsRef<Path>) -> Result<Vec<LandmarkFrame>> {
    let reader = BufReader::new(File::open(path)?);
    let mut frames: Vec<LandmarkFrame> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let frame: LandmarkFrame = serde_json::from_str(&line).map_err(|e| SensorError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        frame.validate().map_err(|e| SensorError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if let Some(prev) = frames.last() {
            if frame.timestamp < prev.timestamp {
                return Err(SensorError::Parse {
                    line: i + 1,
                    reason: format!(
                        "timestamp {} precedes previous frame at {}",
                        frame.timestamp, prev.timestamp
                    ),
                });
            }
        }
        frames.push(frame);
    }
    Ok(frames)
}

pub fn write_landmarks(path: impl AsRef<Path>, frames: &[LandmarkFrame]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for f in frames {
        serde_json::to_writer(&mut out, f).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a detection track: one debounced state change per line, time-ordered.
pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<StateChange>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out: Vec<StateChange> = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let c: StateChange = serde_json::from_str(&line).map_err(|e| SensorError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !c.t.is_finite() || out.last().is_some_and(|p| c.t < p.t) {
            return Err(SensorError::Parse {
                line: i + 1,
                reason: format!("timestamp {} out of order", c.t),
            });
        }
        out.push(c);
    }
    Ok(out)
}

pub fn write_detections(path: impl AsRef<Path>, changes: &[StateChange]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    for c in changes {
        serde_json::to_writer(&mut out, c).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
