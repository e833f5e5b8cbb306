//! Small shared helpers for CSV and text report emission.
//!
//! All outputs are UTF-8 with LF line endings, and floats are printed
//! with 17 significant digits so that re-reading reproduces the exact
//! binary value.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

/// Format a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x == 0.0 {
        // Normalize the sign of zero so reports are byte-stable.
        return "0".to_string();
    }
    format!("{x:.16e}")
}

/// Write lines to a file, creating parent directories as needed.
pub fn write_text_file(path: &Path, content: &str) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(content.as_bytes())?;
    w.flush()
}

/// CSV writer over rows of pre-formatted cells.
pub fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{header}")?;
    for row in rows {
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()
}
