use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};

use super::{FusedRow, FusedSample};
use crate::error::{Error, Result};

/// Reads a fused sample with header `r,y,d,z,x1,...,xp`.
///
/// Missing values are empty cells: `y` is empty exactly on auxiliary rows and
/// `d` exactly on primary rows.
pub fn read_fused_csv(path: impl AsRef<Path>) -> Result<FusedSample> {
    let file = File::open(path)?;
    read_fused_csv_from(BufReader::new(file))
}

pub fn read_fused_csv_from<R: Read>(reader: R) -> Result<FusedSample> {
    let mut rdr = ReaderBuilder::new()
        .has_headers(true)
        .trim(Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let p = check_header(&header)?;

    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, .. } => Error::Schema(format!(
                "line {}: wrong number of fields",
                pos.as_ref().map_or(0, |p| p.line())
            )),
            _ => Error::Csv(e),
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        rows.push(parse_row(&record, line, p)?);
    }
    FusedSample::new(rows)
}

fn check_header(header: &StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 4 || fields[..4] != ["r", "y", "d", "z"] {
        return Err(Error::Schema(format!(
            "header must start with r,y,d,z; got `{}`",
            fields.join(",")
        )));
    }
    for (j, name) in fields[4..].iter().enumerate() {
        let expected = format!("x{}", j + 1);
        if *name != expected {
            return Err(Error::Schema(format!(
                "expected column `{expected}`, found `{name}`"
            )));
        }
    }
    Ok(fields.len() - 4)
}

fn parse_indicator(field: &str, name: &str, line: usize) -> Result<u8> {
    match field {
        "0" => Ok(0),
        "1" => Ok(1),
        _ => Err(Error::Parse {
            line,
            field: name.to_string(),
            msg: format!("expected 0 or 1, got `{field}`"),
        }),
    }
}

fn parse_real(field: &str, name: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| Error::Parse {
        line,
        field: name.to_string(),
        msg: format!("not a number: `{field}`"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            field: name.to_string(),
            msg: "value must be finite".into(),
        });
    }
    Ok(v)
}

fn parse_row(record: &StringRecord, line: usize, p: usize) -> Result<FusedRow> {
    let r = parse_indicator(&record[0], "r", line)?;
    let z = parse_indicator(&record[3], "z", line)?;
    let (y_raw, d_raw) = (&record[1], &record[2]);
    let (y, d) = match (r, y_raw.is_empty(), d_raw.is_empty()) {
        (1, false, true) => (Some(parse_real(y_raw, "y", line)?), None),
        (0, true, false) => (None, Some(parse_indicator(d_raw, "d", line)?)),
        (1, _, _) => {
            return Err(Error::Consistency {
                line,
                msg: "primary row (r=1) needs y filled and d empty".into(),
            })
        }
        _ => {
            return Err(Error::Consistency {
                line,
                msg: "auxiliary row (r=0) needs d filled and y empty".into(),
            })
        }
    };
    let x = (0..p)
        .map(|j| parse_real(&record[4 + j], &format!("x{}", j + 1), line))
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedRow {
        r,
        y,
        d,
        z,
        x,
        transformed: None,
    })
}

/// Writes `sample` so that [`read_fused_csv`] returns an equal sample.
///
/// Reals are written with 17 significant digits. Transformed covariates are
/// simulation-only and are not written.
pub fn write_fused_csv(sample: &FusedSample, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    write_fused_csv_to(sample, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_fused_csv_to<W: Write>(sample: &FusedSample, w: &mut W) -> Result<()> {
    let mut header = String::from("r,y,d,z");
    for j in 1..=sample.p() {
        header.push_str(&format!(",x{j}"));
    }
    writeln!(w, "{header}")?;
    let mut line = String::new();
    for row in sample.rows() {
        line.clear();
        line.push_str(if row.is_primary() { "1," } else { "0," });
        if let Some(y) = row.y {
            line.push_str(&format!("{y:.16e}"));
        }
        line.push(',');
        if let Some(d) = row.d {
            line.push_str(if d == 1 { "1" } else { "0" });
        }
        line.push_str(if row.z == 1 { ",1" } else { ",0" });
        for v in &row.x {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
