//! Binary capture file: a 24-byte header followed by frames of interleaved
//! little-endian `f32` samples in XI, XQ, YI, YQ order.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ccotdr::receiver::{CaptureFrame, FrameSource};
use ccotdr::DualPolFrame;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::files::write_atomic;
use crate::{CliError, CliResult};

pub const MAGIC: &[u8; 4] = b"CCOT";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
const BYTES_PER_SAMPLE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureHeader {
    pub version: u32,
    pub sample_rate: f64,
    pub frame_length: u32,
    pub frame_count: u32,
}

impl CaptureHeader {
    pub fn new(sample_rate: f64, frame_length: usize, frame_count: usize) -> CliResult<Self> {
        let narrow = |v: usize, what: &str| {
            u32::try_from(v).map_err(|_| CliError::Config(format!("{what} {v} exceeds u32")))
        };
        Ok(Self {
            version: VERSION,
            sample_rate,
            frame_length: narrow(frame_length, "frame length")?,
            frame_count: narrow(frame_count, "frame count")?,
        })
    }

    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.version.to_le_bytes());
        b[8..16].copy_from_slice(&self.sample_rate.to_le_bytes());
        b[16..20].copy_from_slice(&self.frame_length.to_le_bytes());
        b[20..24].copy_from_slice(&self.frame_count.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8]) -> CliResult<Self> {
        if b.len() < HEADER_LEN {
            return Err(CliError::Corrupt("capture header truncated".into()));
        }
        if &b[..4] != MAGIC {
            return Err(CliError::Corrupt("capture magic is not CCOT".into()));
        }
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().expect("4 bytes"));
        let header = Self {
            version: u32_at(4),
            sample_rate: f64::from_le_bytes(b[8..16].try_into().expect("8 bytes")),
            frame_length: u32_at(16),
            frame_count: u32_at(20),
        };
        if header.version != VERSION {
            return Err(CliError::Corrupt(format!(
                "unsupported capture version {}",
                header.version
            )));
        }
        if !(header.sample_rate > 0.0 && header.sample_rate.is_finite()) {
            return Err(CliError::Corrupt("capture sample rate is not positive".into()));
        }
        if header.frame_length == 0 || header.frame_count == 0 {
            return Err(CliError::Corrupt("capture has no samples".into()));
        }
        Ok(header)
    }

    pub fn frame_bytes(&self) -> u64 {
        self.frame_length as u64 * BYTES_PER_SAMPLE as u64
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.frame_count as u64 * self.frame_bytes()
    }
}

fn encode_frame(frame: &CaptureFrame, out: &mut Vec<u8>) {
    out.clear();
    let [xi, xq, yi, yq] = &frame.channels;
    for i in 0..frame.len() {
        for v in [xi[i], xq[i], yi[i], yq[i]] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn decode_frame(bytes: &[u8]) -> CaptureFrame {
    let n = bytes.len() / BYTES_PER_SAMPLE;
    let mut channels: [Vec<f32>; 4] = std::array::from_fn(|_| Vec::with_capacity(n));
    for (i, chunk) in bytes.chunks_exact(4).enumerate() {
        channels[i % 4].push(f32::from_le_bytes(chunk.try_into().expect("4 bytes")));
    }
    CaptureFrame { channels }
}

/// Writes already-quantized frames.
pub fn write_capture_frames(path: &Path, sample_rate: f64, frames: &[CaptureFrame]) -> CliResult<()> {
    let len = frames.first().map_or(0, CaptureFrame::len);
    if frames.iter().any(|f| f.len() != len) {
        return Err(CliError::Config("frames have unequal lengths".into()));
    }
    let header = CaptureHeader::new(sample_rate, len, frames.len())?;
    write_atomic(path, |w| {
        w.write_all(&header.to_bytes()).map_err(|e| CliError::io(path, e))?;
        let mut buf = Vec::new();
        for f in frames {
            encode_frame(f, &mut buf);
            w.write_all(&buf).map_err(|e| CliError::io(path, e))?;
        }
        Ok(())
    })
}

/// Streams every frame of `source` to `path`, generating `batch` frames at a
/// time in parallel and writing them in index order.
pub fn write_capture(
    path: &Path,
    sample_rate: f64,
    source: &dyn FrameSource,
    batch: usize,
) -> CliResult<()> {
    let count = source.frame_count();
    let header = CaptureHeader::new(sample_rate, source.frame_len(), count)?;
    write_atomic(path, |w| {
        w.write_all(&header.to_bytes()).map_err(|e| CliError::io(path, e))?;
        for start in (0..count).step_by(batch.max(1)) {
            let end = (start + batch.max(1)).min(count);
            let encoded: Vec<Vec<u8>> = (start..end)
                .into_par_iter()
                .map(|k| {
                    let frame = source.read_frame(k)?;
                    let mut buf = Vec::new();
                    encode_frame(&CaptureFrame::from_dual_pol(&frame), &mut buf);
                    Ok(buf)
                })
                .collect::<ccotdr::Result<_>>()?;
            for buf in encoded {
                w.write_all(&buf).map_err(|e| CliError::io(path, e))?;
            }
        }
        Ok(())
    })
}

/// Capture file opened for random frame access.
#[derive(Debug)]
pub struct CaptureReader {
    pub path: PathBuf,
    pub header: CaptureHeader,
    file: Mutex<File>,
}

impl CaptureReader {
    /// Opens and checks the header and the exact payload size.
    pub fn open(path: &Path) -> CliResult<Self> {
        let mut file = File::open(path).map_err(|e| CliError::io(path, e))?;
        let mut head = Vec::with_capacity(HEADER_LEN);
        (&mut file)
            .take(HEADER_LEN as u64)
            .read_to_end(&mut head)
            .map_err(|e| CliError::io(path, e))?;
        let header = CaptureHeader::from_bytes(&head)
            .map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))?;
        let len = file.metadata().map_err(|e| CliError::io(path, e))?.len();
        if len != header.file_len() {
            return Err(CliError::Corrupt(format!(
                "{}: {len} bytes on disk, header implies {}",
                path.display(),
                header.file_len()
            )));
        }
        Ok(Self {
            path: path.to_path_buf(),
            header,
            file: Mutex::new(file),
        })
    }

    pub fn read_capture_frame(&self, index: usize) -> CliResult<CaptureFrame> {
        if index >= self.header.frame_count as usize {
            return Err(CliError::Config(format!("frame {index} out of range")));
        }
        let size = self.header.frame_bytes();
        let mut buf = vec![0u8; size as usize];
        let mut f = self.file.lock().expect("capture file lock");
        f.seek(SeekFrom::Start(HEADER_LEN as u64 + index as u64 * size))
            .and_then(|_| f.read_exact(&mut buf))
            .map_err(|e| CliError::io(&self.path, e))?;
        Ok(decode_frame(&buf))
    }

    pub fn read_all(&self) -> CliResult<Vec<CaptureFrame>> {
        (0..self.header.frame_count as usize)
            .map(|k| self.read_capture_frame(k))
            .collect()
    }
}

impl FrameSource for CaptureReader {
    fn frame_count(&self) -> usize {
        self.header.frame_count as usize
    }

    fn frame_len(&self) -> usize {
        self.header.frame_length as usize
    }

    fn read_frame(&self, index: usize) -> ccotdr::Result<DualPolFrame> {
        self.read_capture_frame(index)
            .map(|f| f.to_dual_pol())
            .map_err(|e| ccotdr::Error::Parameter(e.to_string()))
    }
}

/// Rounds a frame through the `f32` capture representation.
pub fn quantize(frame: &DualPolFrame) -> DualPolFrame {
    let q = |v: &Complex64| Complex64::new(v.re as f32 as f64, v.im as f32 as f64);
    DualPolFrame {
        x: frame.x.iter().map(q).collect(),
        y: frame.y.iter().map(q).collect(),
    }
}
