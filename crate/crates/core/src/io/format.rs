//! Numeric formatting shared by every artifact.
//!
//! Floats are written with 17 significant digits (`{:.16e}`), which
//! round-trips any `f64` exactly and keeps diffs between runs meaningful.
//! Non-finite values become `null` in JSON and empty cells in CSV.

use std::io;

use serde::Serialize;
use serde_json::ser::{CompactFormatter, Formatter, PrettyFormatter};

use crate::error::Result;

/// Text form of a float for CSV cells.
pub fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

/// Formatter writing floats with 17 significant digits.
struct Digits17<F>(F);

impl<F: Formatter> Formatter for Digits17<F> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(writer, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

fn write_with<T: Serialize + ?Sized, F: Formatter>(value: &T, f: F) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Digits17(f));
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

/// Pretty JSON with 17-digit floats and a trailing newline.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = write_with(value, PrettyFormatter::with_indent(b"  "))?;
    s.push('\n');
    Ok(s)
}

/// Compact JSON with 17-digit floats, used for hashing and HTTP bodies.
pub fn to_json_value_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    write_with(value, CompactFormatter)
}
