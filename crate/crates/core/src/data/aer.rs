//! Address-event representation decoder for the 34x34 neuromorphic digit
//! recordings: five bytes per event — byte 0 = x, byte 1 = y, byte 2 bit 7 =
//! polarity, and the remaining 23 bits (byte 2 bits 6..0, byte 3, byte 4,
//! big-endian bit order) = timestamp in microseconds.

use std::fs;
use std::path::Path;

use super::DataError;

pub const SENSOR_SIZE: usize = 34;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Polarity {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    pub x: u8,
    pub y: u8,
    pub polarity: Polarity,
    pub timestamp_us: u32,
}

/// Bounds-checked, time-ordered event stream from one recording.
#[derive(Clone, Debug)]
pub struct EventStream {
    pub events: Vec<Event>,
    pub height: usize,
    pub width: usize,
}

/// Decode a raw byte buffer; `origin` names the source in errors.
pub fn decode_aer(bytes: &[u8], origin: &Path) -> Result<EventStream, DataError> {
    if !bytes.len().is_multiple_of(5) {
        return Err(DataError::Format {
            path: origin.to_path_buf(),
            offset: (bytes.len() - bytes.len() % 5) as u64,
            detail: format!("file length {} is not a multiple of 5", bytes.len()),
        });
    }
    let mut events = Vec::with_capacity(bytes.len() / 5);
    let mut last_ts = 0u32;
    for (i, chunk) in bytes.chunks_exact(5).enumerate() {
        let offset = (i * 5) as u64;
        let (x, y) = (chunk[0], chunk[1]);
        if usize::from(x) >= SENSOR_SIZE || usize::from(y) >= SENSOR_SIZE {
            return Err(DataError::Format {
                path: origin.to_path_buf(),
                offset,
                detail: format!("event coordinate ({x}, {y}) outside the {SENSOR_SIZE}x{SENSOR_SIZE} sensor"),
            });
        }
        let polarity = if chunk[2] & 0x80 != 0 {
            Polarity::On
        } else {
            Polarity::Off
        };
        let timestamp_us = (u32::from(chunk[2] & 0x7F) << 16) | (u32::from(chunk[3]) << 8) | u32::from(chunk[4]);
        if timestamp_us < last_ts {
            return Err(DataError::Format {
                path: origin.to_path_buf(),
                offset,
                detail: format!("timestamp {timestamp_us} decreases below {last_ts}"),
            });
        }
        last_ts = timestamp_us;
        events.push(Event {
            x,
            y,
            polarity,
            timestamp_us,
        });
    }
    Ok(EventStream {
        events,
        height: SENSOR_SIZE,
        width: SENSOR_SIZE,
    })
}

/// Load and decode one recording file.
pub fn load_aer(path: &Path) -> Result<EventStream, DataError> {
    let bytes = fs::read(path).map_err(|e| DataError::io(path, e))?;
    decode_aer(&bytes, path)
}
