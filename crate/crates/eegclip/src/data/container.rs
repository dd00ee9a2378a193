//! Binary container files.
//!
//! Two trivially parseable formats share the same shape: an ASCII header
//! line, optional name lines, then a raw little-endian payload.
//!
//! Signal container (`.eegc`):
//! ```text
//! EEGC1 <n_channels> <n_samples> <rate_hz>\n
//! <channel name>\n            (exactly n_channels lines)
//! <f32 payload, channel-major>
//! ```
//!
//! Array container (`.eega`), used for model weights and any numeric state:
//! ```text
//! EEGA1 <f32|f64> <ndim> <dim0> <dim1> ...\n
//! <payload, row-major>
//! ```
//!
//! Age and gender ride in an optional `<signal stem>.meta` sidecar of
//! `key = value` lines so the signal header stays exactly as documented.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayD, IxDyn};

use super::{Gender, Recording, RecordingRef};
use crate::{Error, Result};

const SIGNAL_MAGIC: &str = "EEGC1";
const ARRAY_MAGIC: &str = "EEGA1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes `recording` into `dir` as `<id>.eegc` + `<id>.txt` (+ `<id>.meta`
/// when age or gender is present) and returns a ref that loads back equal.
pub fn write_recording(recording: &Recording, dir: &Path) -> Result<RecordingRef> {
    recording.validate()?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;

    let signal_path = dir.join(format!("{}.eegc", recording.id));
    let report_path = dir.join(format!("{}.txt", recording.id));

    let file = File::create(&signal_path).map_err(io_err(&signal_path))?;
    let mut w = BufWriter::new(file);
    writeln!(
        w,
        "{} {} {} {}",
        SIGNAL_MAGIC,
        recording.n_channels(),
        recording.n_samples(),
        recording.rate_hz
    )
    .map_err(io_err(&signal_path))?;
    for name in &recording.channel_names {
        writeln!(w, "{}", name).map_err(io_err(&signal_path))?;
    }
    for v in recording.signal.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(&signal_path))?;
    }
    w.flush().map_err(io_err(&signal_path))?;

    fs::write(&report_path, recording.report_text.as_bytes()).map_err(io_err(&report_path))?;

    if recording.age_years.is_some() || recording.gender.is_some() {
        let meta_path = dir.join(format!("{}.meta", recording.id));
        let mut meta = String::new();
        if let Some(age) = recording.age_years {
            meta.push_str(&format!("age = {}\n", age));
        }
        if let Some(g) = recording.gender {
            meta.push_str(&format!("gender = {}\n", g.as_str()));
        }
        fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;
    }

    Ok(RecordingRef {
        id: recording.id.clone(),
        signal_path,
        report_path,
        split_hint: None,
    })
}

/// Loads the recording a [`RecordingRef`] points to.
pub fn read_recording(r: &RecordingRef) -> Result<Recording> {
    let (signal, rate_hz, channel_names) = read_signal(&r.signal_path)?;
    let report_text = fs::read_to_string(&r.report_path).map_err(io_err(&r.report_path))?;
    let (age_years, gender) = read_meta_sidecar(&r.signal_path)?;

    let rec = Recording {
        id: r.id.clone(),
        signal,
        rate_hz,
        channel_names,
        age_years,
        gender,
        report_text,
    };
    rec.validate()?;
    Ok(rec)
}

fn meta_path_for(signal_path: &Path) -> PathBuf {
    signal_path.with_extension("meta")
}

fn read_meta_sidecar(signal_path: &Path) -> Result<(Option<u32>, Option<Gender>)> {
    let path = meta_path_for(signal_path);
    if !path.exists() {
        return Ok((None, None));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let mut age = None;
    let mut gender = None;
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.clone(),
            line: idx + 1,
            msg: "expected `key = value`".into(),
        })?;
        match key.trim() {
            "age" => {
                age = Some(value.trim().parse::<u32>().map_err(|e| Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("bad age: {e}"),
                })?)
            }
            "gender" => {
                gender = Some(Gender::parse(value).ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("bad gender {value:?}, expected M or F"),
                })?)
            }
            other => {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: idx + 1,
                    msg: format!("unknown meta key {other:?}"),
                })
            }
        }
    }
    Ok((age, gender))
}

fn read_signal(path: &Path) -> Result<(Array2<f32>, f64, Vec<String>)> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);

    let mut header = String::new();
    reader.read_line(&mut header).map_err(io_err(path))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 4 || fields[0] != SIGNAL_MAGIC {
        return Err(Error::Corrupt {
            path: path.into(),
            msg: format!("bad header line {:?}", header.trim_end()),
        });
    }
    let corrupt = |msg: String| Error::Corrupt {
        path: path.into(),
        msg,
    };
    let n_channels: usize = fields[1]
        .parse()
        .map_err(|e| corrupt(format!("bad channel count: {e}")))?;
    let n_samples: usize = fields[2]
        .parse()
        .map_err(|e| corrupt(format!("bad sample count: {e}")))?;
    let rate_hz: f64 = fields[3]
        .parse()
        .map_err(|e| corrupt(format!("bad rate: {e}")))?;

    let mut channel_names = Vec::with_capacity(n_channels);
    for i in 0..n_channels {
        let mut name = String::new();
        let n = reader.read_line(&mut name).map_err(io_err(path))?;
        if n == 0 {
            return Err(corrupt(format!(
                "header ended after {i} of {n_channels} channel names"
            )));
        }
        channel_names.push(name.trim_end_matches(['\r', '\n']).to_string());
    }

    let expected = n_channels
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("declared shape overflows".into()))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(io_err(path))?;
    if payload.len() != expected {
        return Err(corrupt(format!(
            "payload holds {} bytes, header declares {}×{} f32 = {} bytes",
            payload.len(),
            n_channels,
            n_samples,
            expected
        )));
    }

    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let signal = Array2::from_shape_vec((n_channels, n_samples), values)
        .expect("shape checked against payload length");
    Ok((signal, rate_hz, channel_names))
}

/// Writes a float array as an `EEGA1` container. `f64` payloads round-trip
/// bit-exactly, which model serialization relies on.
pub fn write_array(path: &Path, array: &ArrayD<f64>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let dims: Vec<String> = array.shape().iter().map(|d| d.to_string()).collect();
    writeln!(w, "{} f64 {} {}", ARRAY_MAGIC, array.ndim(), dims.join(" "))
        .map_err(io_err(path))?;
    for v in array.iter() {
        w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads an `EEGA1` container back into a dynamic-dimension array.
pub fn read_array(path: &Path) -> Result<ArrayD<f64>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(io_err(path))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let corrupt = |msg: String| Error::Corrupt {
        path: path.into(),
        msg,
    };
    if fields.len() < 3 || fields[0] != ARRAY_MAGIC {
        return Err(corrupt(format!("bad header line {:?}", header.trim_end())));
    }
    let dtype = fields[1];
    let ndim: usize = fields[2]
        .parse()
        .map_err(|e| corrupt(format!("bad ndim: {e}")))?;
    if fields.len() != 3 + ndim {
        return Err(corrupt(format!(
            "header declares {} dims but lists {}",
            ndim,
            fields.len().saturating_sub(3)
        )));
    }
    let mut shape = Vec::with_capacity(ndim);
    for f in &fields[3..] {
        shape.push(
            f.parse::<usize>()
                .map_err(|e| corrupt(format!("bad dim: {e}")))?,
        );
    }
    let count: usize = shape.iter().product();

    let width = match dtype {
        "f64" => 8,
        "f32" => 4,
        other => return Err(corrupt(format!("unsupported dtype {other:?}"))),
    };
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(io_err(path))?;
    if payload.len() != count * width {
        return Err(corrupt(format!(
            "payload holds {} bytes, header declares {} elements of {} bytes",
            payload.len(),
            count,
            width
        )));
    }
    let values: Vec<f64> = match dtype {
        "f64" => payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        _ => payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), values).expect("shape checked"))
}
