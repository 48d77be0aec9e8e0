//! Map and table exports for abundance estimates.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary (P5) 8-bit greyscale image of `values` in row-major order, each
/// value clamped to `[0, 1]` and scaled to `0..=255`.
pub fn pgm_bytes(width: usize, height: usize, values: &[f64]) -> Result<Vec<u8>> {
    if values.len() != width * height {
        return Err(Error::shape(format!(
            "{} values for a {width}x{height} map",
            values.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(
        values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    Ok(out)
}

pub fn write_pgm(
    path: impl AsRef<Path>,
    width: usize,
    height: usize,
    values: &[f64],
) -> Result<()> {
    fs::write(path, pgm_bytes(width, height, values)?)?;
    Ok(())
}

/// `pixel,row,col,<name>...` with one row per pixel; `abundances` is
/// pixel-major with `names.len()` entries per pixel.
pub fn abundance_csv(width: usize, names: &[String], abundances: &[f64]) -> Result<String> {
    let n = names.len();
    if n == 0 || !abundances.len().is_multiple_of(n) {
        return Err(Error::shape(format!(
            "{} abundance values do not split into {n} columns",
            abundances.len()
        )));
    }
    let mut out = String::from("pixel,row,col");
    for name in names {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (i, row) in abundances.chunks_exact(n).enumerate() {
        write!(out, "{i},{},{}", i / width.max(1), i % width.max(1)).unwrap();
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_abundance_csv(
    path: impl AsRef<Path>,
    width: usize,
    names: &[String],
    abundances: &[f64],
) -> Result<()> {
    fs::write(path, abundance_csv(width, names, abundances)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let bytes = pgm_bytes(2, 1, &[0.0, 1.5]).unwrap();
        assert_eq!(&bytes[..11], b"P5\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 255]);
        assert!(pgm_bytes(2, 2, &[0.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let csv = abundance_csv(
            2,
            &["a".into(), "b".into()],
            &[0.25, 0.75, 1.0, 0.0, 0.5, 0.5],
        )
        .unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "pixel,row,col,a,b");
        assert_eq!(lines[1], "0,0,0,0.25,0.75");
        assert_eq!(lines[3], "2,1,0,0.5,0.5");
    }
}
