use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Writes a matrix as CSV: a `row,c0,c1,…` header, then one line per row
/// prefixed by its index, values with 17 significant digits.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = BufWriter::new(file);
    write!(w, "row")?;
    for j in 0..m.ncols() {
        write!(w, ",c{j}")?;
    }
    writeln!(w)?;
    for i in 0..m.nrows() {
        write!(w, "{i}")?;
        for j in 0..m.ncols() {
            write!(w, ",{:.16e}", m[(i, j)])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let ctx = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(&ctx, e.to_string()))?;
    let cols = reader
        .headers()
        .map_err(|e| Error::format(&ctx, e.to_string()))?
        .len()
        .saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(&ctx, e.to_string()))?;
        if rec.len() != cols + 1 {
            return Err(Error::format(&ctx, format!("row {i} has {} fields, expected {}", rec.len(), cols + 1)));
        }
        if rec[0].trim().parse::<usize>().ok() != Some(i) {
            return Err(Error::format(&ctx, format!("row {i} has index {:?}", &rec[0])));
        }
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(&ctx, format!("row {i}: bad number {field:?}")))?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 || cols == 0 {
        return Err(Error::format(&ctx, "empty matrix"));
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}
