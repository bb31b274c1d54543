//! Binary containers for signals and dictionaries, and the on-disk layout of
//! a dictionary bank.
//!
//! All numbers are little-endian. Signal layout:
//!
//! ```text
//! magic  b"CDSIGNL1"
//! u64    n_tx, n_rx
//! f64    spacing
//! f64    snr_db (NaN for noiseless)
//! u64    rows, cols
//! f64    re, im for each entry, column by column
//! ```
//!
//! Dictionary layout:
//!
//! ```text
//! magic  b"CDDICT01"
//! u64    n_features, n_atoms
//! f64    trained lambda
//! u64    iteration count
//! f64    entries, column by column
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ShapeBuilder};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coupled_dict::{AngleInterval, DictionaryPair, GridDictionaryBank};
use crate::error::{Error, Result};
use crate::radar_model::{ArrayConfig, ReceivedSignal, Snr};
use crate::sparse_coding::Dictionary;

const SIGNAL_MAGIC: &[u8; 8] = b"CDSIGNL1";
const DICT_MAGIC: &[u8; 8] = b"CDDICT01";
pub const MANIFEST_FILE: &str = "manifest.toml";

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format(self.path, "unexpected end of file"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v).map_err(|_| Error::format(self.path, format!("count {v} too large")))
    }

    fn magic(&mut self, expect: &[u8; 8]) -> Result<()> {
        if self.take(8)? != expect {
            return Err(Error::format(self.path, "wrong magic bytes"));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(self.path, "trailing bytes after payload"));
        }
        Ok(())
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn encode_signal(signal: &ReceivedSignal) -> Vec<u8> {
    let data = signal.data();
    let cfg = signal.config();
    let mut out = Vec::with_capacity(64 + 16 * data.len());
    out.extend_from_slice(SIGNAL_MAGIC);
    out.extend_from_slice(&(cfg.n_tx as u64).to_le_bytes());
    out.extend_from_slice(&(cfg.n_rx as u64).to_le_bytes());
    out.extend_from_slice(&cfg.spacing.to_le_bytes());
    out.extend_from_slice(&signal.snr().db().unwrap_or(f64::NAN).to_le_bytes());
    out.extend_from_slice(&(data.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(data.ncols() as u64).to_le_bytes());
    for col in data.columns() {
        for z in col {
            out.extend_from_slice(&z.re.to_le_bytes());
            out.extend_from_slice(&z.im.to_le_bytes());
        }
    }
    out
}

pub fn decode_signal(bytes: &[u8], path: &Path) -> Result<ReceivedSignal> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.magic(SIGNAL_MAGIC)?;
    let n_tx = r.usize()?;
    let n_rx = r.usize()?;
    let spacing = r.f64()?;
    let snr = Snr::from_db_or_nan(r.f64()?);
    let rows = r.usize()?;
    let cols = r.usize()?;
    let config = ArrayConfig::with_spacing(n_tx, n_rx, spacing)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(16) == Some(bytes.len() - r.pos))
        .ok_or_else(|| Error::format(path, format!("payload does not hold {rows}x{cols} entries")))?;
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f64()?;
        let im = r.f64()?;
        flat.push(Complex64::new(re, im));
    }
    r.finish()?;
    let data = Array2::from_shape_vec((rows, cols).f(), flat).expect("length checked");
    ReceivedSignal::new(data, config, snr).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_signal(path: &Path, signal: &ReceivedSignal) -> Result<()> {
    write_file(path, &encode_signal(signal))
}

pub fn read_signal(path: &Path) -> Result<ReceivedSignal> {
    decode_signal(&read_file(path)?, path)
}

/// Header fields stored alongside dictionary atoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DictionaryHeader {
    pub lambda: f64,
    pub n_iters: usize,
}

pub fn encode_dictionary(dict: &Dictionary, header: DictionaryHeader) -> Vec<u8> {
    let atoms = dict.atoms();
    let mut out = Vec::with_capacity(40 + 8 * atoms.len());
    out.extend_from_slice(DICT_MAGIC);
    out.extend_from_slice(&(atoms.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(atoms.ncols() as u64).to_le_bytes());
    out.extend_from_slice(&header.lambda.to_le_bytes());
    out.extend_from_slice(&(header.n_iters as u64).to_le_bytes());
    for col in atoms.columns() {
        for v in col {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dictionary(bytes: &[u8], path: &Path) -> Result<(Dictionary, DictionaryHeader)> {
    let mut r = Reader { buf: bytes, pos: 0, path };
    r.magic(DICT_MAGIC)?;
    let rows = r.usize()?;
    let cols = r.usize()?;
    let lambda = r.f64()?;
    let n_iters = r.usize()?;
    let n = rows
        .checked_mul(cols)
        .filter(|n| n.checked_mul(8) == Some(bytes.len() - r.pos))
        .ok_or_else(|| Error::format(path, format!("payload does not hold {rows}x{cols} entries")))?;
    let mut flat = Vec::with_capacity(n);
    for _ in 0..n {
        flat.push(r.f64()?);
    }
    r.finish()?;
    let atoms = Array2::from_shape_vec((rows, cols).f(), flat).expect("length checked");
    let dict = Dictionary::new(atoms).map_err(|e| Error::format(path, e.to_string()))?;
    Ok((dict, DictionaryHeader { lambda, n_iters }))
}

pub fn write_dictionary(path: &Path, dict: &Dictionary, header: DictionaryHeader) -> Result<()> {
    write_file(path, &encode_dictionary(dict, header))
}

pub fn read_dictionary(path: &Path) -> Result<(Dictionary, DictionaryHeader)> {
    decode_dictionary(&read_file(path)?, path)
}

/// Atoms as CSV, one feature per line and one atom per column.
pub fn dictionary_csv(dict: &Dictionary) -> String {
    let mut out = String::new();
    for row in dict.atoms().rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    grid: AngleInterval,
    file: String,
    lambda: f64,
    n_iters: usize,
    n_atoms: usize,
    training_error: f64,
    seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    low_config: ArrayConfig,
    high_config: ArrayConfig,
    pairs: Vec<ManifestEntry>,
}

/// Writes `bank` into `dir` as a manifest plus one dictionary file per pair.
pub fn write_bank(dir: &Path, bank: &GridDictionaryBank) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(bank.len());
    for (i, pair) in bank.pairs().iter().enumerate() {
        let file = format!("pair_{i}.dict");
        write_dictionary(
            &dir.join(&file),
            pair.stacked(),
            DictionaryHeader {
                lambda: pair.lambda_train(),
                n_iters: pair.n_iters(),
            },
        )?;
        entries.push(ManifestEntry {
            grid: pair.grid(),
            file,
            lambda: pair.lambda_train(),
            n_iters: pair.n_iters(),
            n_atoms: pair.n_atoms(),
            training_error: pair.training_error(),
            seed: pair.seed(),
        });
    }
    let manifest = Manifest {
        low_config: *bank.low_config(),
        high_config: *bank.high_config(),
        pairs: entries,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Accepts either the bank directory or the manifest file itself.
pub fn read_bank(path: &Path) -> Result<GridDictionaryBank> {
    let (dir, manifest_path): (PathBuf, PathBuf) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, path.to_path_buf())
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest =
        toml::from_str(&text).map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    let mut pairs = Vec::with_capacity(manifest.pairs.len());
    for entry in manifest.pairs {
        let file = dir.join(&entry.file);
        let (stacked, header) = read_dictionary(&file)?;
        if header.lambda != entry.lambda || header.n_iters != entry.n_iters || stacked.n_atoms() != entry.n_atoms {
            return Err(Error::format(&file, "header disagrees with the manifest"));
        }
        let pair = DictionaryPair::new(
            stacked,
            entry.grid,
            entry.lambda,
            manifest.low_config,
            manifest.high_config,
            entry.n_iters,
            entry.training_error,
            entry.seed,
        )
        .map_err(|e| Error::format(&file, e.to_string()))?;
        pairs.push(pair);
    }
    GridDictionaryBank::new(pairs).map_err(|e| Error::format(&manifest_path, e.to_string()))
}
