//! Line-delimited record files.
//!
//! Every record is one JSON object per line. Floats are written with 17
//! significant digits so that parsing them back restores the exact bits.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::ser::{Formatter, Serializer};

use crate::error::{Error, Result};

/// JSON formatter that prints every float as `d.dddddddddddddddde±x`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sig17Formatter;

impl Formatter for Sig17Formatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{}", fmt_f64(value))
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{}", fmt_f64(f64::from(value)))
    }
}

/// 17-significant-digit decimal representation of a finite float.
pub fn fmt_f64(value: f64) -> String {
    format!("{value:.16e}")
}

/// Serialize a record to a single line (no trailing newline).
pub fn to_line<T: Serialize>(record: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = Serializer::with_formatter(&mut buf, Sig17Formatter);
    record
        .serialize(&mut ser)
        .map_err(|e| Error::input(format!("serialize: {e}")))?;
    Ok(String::from_utf8(buf).expect("serde_json emits utf-8"))
}

pub fn from_line<T: DeserializeOwned>(line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::corruption(format!("bad record: {e}")))
}

pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&to_line(r)?);
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            from_line(&line)
                .map_err(|e| Error::corruption(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

/// Write through a temporary sibling so readers never see half a file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
