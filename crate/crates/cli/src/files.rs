//! Atomic output, provenance hashing, the waterfall binary format and the
//! return-loss CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ccotdr::correlator::ReturnLossTrace;
use ccotdr::fingerprint::{Polarization, Section, SectionPhaseWaterfall};
use sha2::{Digest, Sha256};

use crate::{CliError, CliResult};

pub const WATERFALL_MAGIC: &[u8; 4] = b"CCWF";
pub const WATERFALL_VERSION: u32 = 1;

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(sha256(bytes))
}

/// Writes through a temporary file in the destination directory and
/// renames it into place, so readers never observe a partial file.
pub fn write_atomic<F>(path: &Path, fill: F) -> CliResult<()>
where
    F: FnOnce(&mut dyn Write) -> CliResult<()>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.as_file().sync_all().map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn write_bytes_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, |w| w.write_all(bytes).map_err(|e| CliError::io(path, e)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WaterfallKind {
    /// Polarization-sum level per peak, dB.
    Amplitude = 0,
    /// Section phase difference, rad.
    Phase = 1,
}

/// A waterfall file: rows are frames, columns are peaks or sections.
#[derive(Debug, Clone, PartialEq)]
pub struct WaterfallFile {
    pub kind: WaterfallKind,
    pub polarization: Polarization,
    pub frame_period: f64,
    /// SHA-256 of the scenario manifest.
    pub manifest_hash: [u8; 32],
    pub columns: Vec<Section>,
    pub masked: Vec<bool>,
    /// Row-major `rows × columns.len()`.
    pub data: Vec<f64>,
}

fn pol_code(p: Polarization) -> u8 {
    match p {
        Polarization::X => 0,
        Polarization::Y => 1,
        Polarization::Fused => 2,
    }
}

impl WaterfallFile {
    pub fn rows(&self) -> usize {
        if self.columns.is_empty() {
            0
        } else {
            self.data.len() / self.columns.len()
        }
    }

    pub fn manifest_hash_hex(&self) -> String {
        hex::encode(self.manifest_hash)
    }

    pub fn from_phase(w: &SectionPhaseWaterfall, manifest_hash: [u8; 32]) -> Self {
        Self {
            kind: WaterfallKind::Phase,
            polarization: w.polarization,
            frame_period: w.frame_period,
            manifest_hash,
            columns: w.sections.clone(),
            masked: w.masked.clone(),
            data: w.matrix.iter().flatten().copied().collect(),
        }
    }

    pub fn to_phase(&self) -> CliResult<SectionPhaseWaterfall> {
        if self.kind != WaterfallKind::Phase {
            return Err(CliError::Config("not a phase waterfall".into()));
        }
        let cols = self.columns.len().max(1);
        Ok(SectionPhaseWaterfall {
            polarization: self.polarization,
            sections: self.columns.clone(),
            matrix: self.data.chunks(cols).map(<[f64]>::to_vec).collect(),
            frame_period: self.frame_period,
            masked: self.masked.clone(),
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let cols = self.columns.len();
        let mut b = Vec::with_capacity(64 + cols * 25 + self.data.len() * 8);
        b.extend_from_slice(WATERFALL_MAGIC);
        b.extend_from_slice(&WATERFALL_VERSION.to_le_bytes());
        b.push(self.kind as u8);
        b.push(pol_code(self.polarization));
        b.extend_from_slice(&[0, 0]);
        b.extend_from_slice(&(self.rows() as u32).to_le_bytes());
        b.extend_from_slice(&(cols as u32).to_le_bytes());
        b.extend_from_slice(&self.frame_period.to_le_bytes());
        b.extend_from_slice(&self.manifest_hash);
        for s in &self.columns {
            b.extend_from_slice(&s.center.to_le_bytes());
            for v in [s.lower_bin, s.upper_bin, s.lower_peak, s.upper_peak] {
                b.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        b.extend(self.masked.iter().map(|&m| m as u8));
        for v in &self.data {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> CliResult<Self> {
        let corrupt = |m: &str| CliError::Corrupt(format!("waterfall: {m}"));
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok_or_else(|| corrupt("truncated header"))? != WATERFALL_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let header = (|| {
            let version = r.u32()?;
            let kind = r.take(1)?[0];
            let pol = r.take(1)?[0];
            r.take(2)?;
            Some((version, kind, pol, r.u32()?, r.u32()?, r.f64()?, r.take(32)?))
        })()
        .ok_or_else(|| corrupt("truncated header"))?;
        let (version, kind, pol, rows, cols, frame_period, hash) = header;
        if version != WATERFALL_VERSION {
            return Err(corrupt(&format!("unsupported version {version}")));
        }
        let kind = match kind {
            0 => WaterfallKind::Amplitude,
            1 => WaterfallKind::Phase,
            _ => return Err(corrupt("unknown kind")),
        };
        let polarization = match pol {
            0 => Polarization::X,
            1 => Polarization::Y,
            2 => Polarization::Fused,
            _ => return Err(corrupt("unknown polarization")),
        };
        let (rows, cols) = (rows as usize, cols as usize);
        let expected = r.pos + cols * 25 + rows * cols * 8;
        if bytes.len() != expected {
            return Err(corrupt(&format!(
                "size {} does not match the {expected} bytes the header implies",
                bytes.len()
            )));
        }
        let mut columns = Vec::with_capacity(cols);
        for _ in 0..cols {
            let center = r.f64().expect("size checked");
            let mut idx = [0usize; 4];
            for v in &mut idx {
                *v = r.u32().expect("size checked") as usize;
            }
            columns.push(Section {
                center,
                lower_bin: idx[0],
                upper_bin: idx[1],
                lower_peak: idx[2],
                upper_peak: idx[3],
            });
        }
        let masked = r.take(cols).expect("size checked").iter().map(|&m| m != 0).collect();
        let data = (0..rows * cols).map(|_| r.f64().expect("size checked")).collect();
        Ok(Self {
            kind,
            polarization,
            frame_period,
            manifest_hash: hash.try_into().expect("32 bytes"),
            columns,
            masked,
            data,
        })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        write_bytes_atomic(path, &self.to_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes)
            .map_err(|e| CliError::Corrupt(format!("{}: {e}", path.display())))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

/// `distance_m,return_loss_db,manifest_sha256` rows.
pub fn trace_csv(trace: &ReturnLossTrace, manifest_hash: &str) -> String {
    let mut s = String::from("distance_m,return_loss_db,manifest_sha256\n");
    for (d, v) in trace.distances.iter().zip(&trace.values) {
        s.push_str(&format!("{d:.4},{v:.4},{manifest_hash}\n"));
    }
    s
}

/// Parses the first two columns of a trace CSV.
pub fn parse_trace_csv(text: &str) -> CliResult<Vec<(f64, f64)>> {
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut f = l.split(',');
            let mut num = || {
                f.next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| CliError::Corrupt(format!("bad trace row {l:?}")))
            };
            Ok((num()?, num()?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WaterfallFile {
        WaterfallFile {
            kind: WaterfallKind::Phase,
            polarization: Polarization::Y,
            frame_period: 3.9e-4,
            manifest_hash: [7; 32],
            columns: vec![
                Section { center: 1.5, lower_bin: 3, upper_bin: 9, lower_peak: 0, upper_peak: 1 },
                Section { center: 2.5, lower_bin: 9, upper_bin: 22, lower_peak: 1, upper_peak: 2 },
            ],
            masked: vec![false, true],
            data: vec![0.0, -1.25, 3.5, f64::MIN_POSITIVE, 1e300, -0.0],
        }
    }

    #[test]
    fn waterfall_round_trip() {
        let w = sample();
        let back = WaterfallFile::from_bytes(&w.to_bytes()).unwrap();
        assert_eq!(back, w);
        assert_eq!(back.rows(), 3);
        let phase = back.to_phase().unwrap();
        assert_eq!(phase.matrix[1], vec![3.5, f64::MIN_POSITIVE]);
    }

    #[test]
    fn waterfall_corruption_detected() {
        let bytes = sample().to_bytes();
        let err = WaterfallFile::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(WaterfallFile::from_bytes(&bad).unwrap_err().exit_code(), 4);
        assert_eq!(WaterfallFile::from_bytes(&bytes[..10]).unwrap_err().exit_code(), 4);
    }

    #[test]
    fn atomic_write_leaves_nothing_on_failure() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.bin");
        let r = write_atomic(&path, |w| {
            w.write_all(b"partial").unwrap();
            Err(CliError::Corrupt("stop".into()))
        });
        assert!(r.is_err());
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
        write_bytes_atomic(&path, b"ok").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"ok");
    }

    #[test]
    fn csv_round_trip() {
        let t = ReturnLossTrace {
            values: vec![-75.0, -45.25],
            calibration_offset: 0.0,
            distances: vec![0.0, 0.16],
        };
        let text = trace_csv(&t, "ab");
        assert!(text.starts_with("distance_m,return_loss_db,manifest_sha256\n"));
        assert_eq!(parse_trace_csv(&text).unwrap(), vec![(0.0, -75.0), (0.16, -45.25)]);
    }

    #[test]
    fn hash_is_hex_sha256() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
