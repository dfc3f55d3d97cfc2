//! CSV and JSON emission and parsing. Floats are written as `{:.16e}`
//! (17 significant digits), which round-trips binary64 exactly.

use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::averaging::{Ensemble, Particle};
use crate::diagnostics::ComparisonRecord;
use crate::error::{Error, Result};
use crate::kinetic::VelocityFieldGrid;
use crate::solver::{Sample, Trajectory};

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    match field.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Parse(format!("row {row}, column {col}: not a finite number: {field:?}"))),
    }
}

fn axis_columns(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

fn dimension_from_header(header: &csv::StringRecord, first: &str, tail: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = header.iter().collect();
    if cols.first() != Some(&first) {
        return Err(Error::Parse(format!("header must start with '{first}'")));
    }
    let body = cols.len().checked_sub(1 + tail.len()).filter(|n| n % 2 == 0 && *n >= 4);
    let Some(body) = body else {
        return Err(Error::Parse(format!("unexpected header with {} columns", cols.len())));
    };
    let d = body / 2;
    let mut expect = vec![first.to_string()];
    expect.extend(axis_columns("x", d));
    expect.extend(axis_columns("y", d));
    expect.extend(tail.iter().map(|s| s.to_string()));
    if cols != expect.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::Parse(format!("header {cols:?} does not match {expect:?}")));
    }
    Ok(d)
}

pub fn write_ensemble<W: Write>(ensemble: &Ensemble, out: W) -> Result<()> {
    let d = ensemble.dim;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["a".to_string()];
    header.extend(axis_columns("x", d));
    header.extend(axis_columns("y", d));
    header.push("w".into());
    w.write_record(&header)?;
    for (a, p) in ensemble.particles.iter().enumerate() {
        let mut row = vec![a.to_string()];
        row.extend(p.x.iter().map(|v| fmt(*v)));
        row.extend(p.y.iter().map(|v| fmt(*v)));
        row.push(fmt(p.w));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses an ensemble CSV. Rows must be numbered `0, 1, …` in order.
pub fn read_ensemble<R: Read>(input: R) -> Result<Ensemble> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    let d = dimension_from_header(&header, "a", &["w"])?;
    let mut particles = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 * d + 2 {
            return Err(Error::Parse(format!("row {row} has {} fields", rec.len())));
        }
        let a: usize = rec[0]
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("row {row}: bad particle index {:?}", &rec[0])))?;
        if a != row {
            return Err(Error::Parse(format!("row {row}: particle index {a} out of order")));
        }
        let vals: Vec<f64> = (1..rec.len())
            .map(|i| parse_f64(&rec[i], row, &header[i]))
            .collect::<Result<_>>()?;
        particles.push(Particle {
            x: vals[..d].to_vec(),
            y: vals[d..2 * d].to_vec(),
            w: vals[2 * d],
        });
    }
    Ensemble::new(d, particles).map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, out: W) -> Result<()> {
    let d = traj.dim();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(axis_columns("x", d));
    header.extend(axis_columns("y", d));
    w.write_record(&header)?;
    for s in &traj.samples {
        let mut row = vec![fmt(s.t)];
        row.extend(s.x.iter().map(|v| fmt(*v)));
        row.extend(s.y.iter().map(|v| fmt(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a trajectory CSV; the step is taken from the first two samples.
pub fn read_trajectory<R: Read>(input: R) -> Result<Trajectory> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    let d = dimension_from_header(&header, "t", &[])?;
    let mut samples: Vec<Sample> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 * d + 1 {
            return Err(Error::Parse(format!("row {row} has {} fields", rec.len())));
        }
        let vals: Vec<f64> = (0..rec.len())
            .map(|i| parse_f64(&rec[i], row, &header[i]))
            .collect::<Result<_>>()?;
        if let Some(prev) = samples.last() {
            if !(vals[0] > prev.t) {
                return Err(Error::Parse(format!("row {row}: times must increase")));
            }
        }
        samples.push(Sample {
            t: vals[0],
            x: vals[1..=d].to_vec(),
            y: vals[d + 1..].to_vec(),
        });
    }
    if samples.is_empty() {
        return Err(Error::Parse("trajectory has no samples".into()));
    }
    let h = if samples.len() > 1 { samples[1].t - samples[0].t } else { 0.0 };
    Ok(Trajectory {
        samples,
        conn_id: "file".into(),
        h,
    })
}

fn grid_header(ns: usize) -> Vec<String> {
    let d = ns + 1;
    let mut h = vec!["cell".to_string()];
    h.extend(axis_columns("idx", ns));
    h.extend((1..=ns).map(|a| format!("c{a}")));
    h.extend(axis_columns("v", d));
    h.push("alpha".into());
    h.push("weight".into());
    h.extend(axis_columns("r", d));
    h
}

/// One row of a grid CSV. Empty cells leave `v` and `r` absent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub cell: usize,
    pub index: Vec<usize>,
    pub center: Vec<f64>,
    pub velocity: Option<Vec<f64>>,
    pub alpha: f64,
    pub weight: f64,
    pub residual: Option<Vec<f64>>,
}

pub fn write_grid<W: Write>(grid: &VelocityFieldGrid, out: W) -> Result<()> {
    let ns = grid.layout.cells.len();
    let d = ns + 1;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(grid_header(ns))?;
    let blank = |n: usize| vec![String::new(); n];
    for c in 0..grid.layout.len() {
        let idx = grid.layout.unflatten(c);
        let mut row = vec![c.to_string()];
        row.extend(idx.iter().map(|i| i.to_string()));
        row.extend(grid.layout.center(&idx).iter().map(|v| fmt(*v)));
        match &grid.velocity[c] {
            Some(v) => row.extend(v.iter().map(|x| fmt(*x))),
            None => row.extend(blank(d)),
        }
        row.push(fmt(grid.alpha[c]));
        row.push(fmt(grid.weight[c]));
        match &grid.residual[c] {
            Some(r) => row.extend(r.iter().map(|x| fmt(*x))),
            None => row.extend(blank(d)),
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn optional_block(rec: &csv::StringRecord, start: usize, n: usize, row: usize, what: &str) -> Result<Option<Vec<f64>>> {
    let fields: Vec<&str> = (start..start + n).map(|i| rec[i].trim()).collect();
    if fields.iter().all(|f| f.is_empty()) {
        return Ok(None);
    }
    fields
        .iter()
        .map(|f| parse_f64(f, row, what))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn read_grid<R: Read>(input: R) -> Result<Vec<GridRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    // cell, ns indices, ns centers, d velocities, alpha, weight, d residuals
    let ns = (header.len().saturating_sub(5)) / 4;
    if ns == 0 || header != grid_header(ns) {
        return Err(Error::Parse(format!("unexpected grid header {header:?}")));
    }
    let d = ns + 1;
    let mut rows = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("row {row} has {} fields", rec.len())));
        }
        let int = |i: usize| -> Result<usize> {
            rec[i]
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("row {row}: bad integer {:?}", &rec[i])))
        };
        let cell = int(0)?;
        let index = (1..=ns).map(int).collect::<Result<Vec<_>>>()?;
        let center = (1 + ns..1 + 2 * ns)
            .map(|i| parse_f64(&rec[i], row, &header[i]))
            .collect::<Result<Vec<_>>>()?;
        let velocity = optional_block(&rec, 1 + 2 * ns, d, row, "v")?;
        let alpha = parse_f64(&rec[1 + 2 * ns + d], row, "alpha")?;
        let weight = parse_f64(&rec[2 + 2 * ns + d], row, "weight")?;
        let residual = optional_block(&rec, 3 + 2 * ns + d, d, row, "r")?;
        rows.push(GridRow {
            cell,
            index,
            center,
            velocity,
            alpha,
            weight,
            residual,
        });
    }
    Ok(rows)
}

pub const REPORT_COLUMNS: [&str; 8] = ["t_lab", "dx", "dy", "theta2", "theta_bar2", "gamma_bar", "alpha", "energy"];

pub fn write_report<W: Write>(records: &[ComparisonRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_COLUMNS)?;
    for r in records {
        w.write_record(
            [r.t_lab, r.dx, r.dy, r.theta2, r.theta_bar2, r.gamma_bar, r.alpha, r.energy].map(fmt),
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: Read>(input: R) -> Result<Vec<ComparisonRecord>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != REPORT_COLUMNS {
        return Err(Error::Parse("unexpected report header".into()));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != REPORT_COLUMNS.len() {
            return Err(Error::Parse(format!("row {row} has {} fields", rec.len())));
        }
        let v: Vec<f64> = (0..rec.len())
            .map(|i| parse_f64(&rec[i], row, REPORT_COLUMNS[i]))
            .collect::<Result<_>>()?;
        out.push(ComparisonRecord {
            t_lab: v[0],
            dx: v[1],
            dy: v[2],
            theta2: v[3],
            theta_bar2: v[4],
            gamma_bar: v[5],
            alpha: v[6],
            energy: v[7],
        });
    }
    Ok(out)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize, W: Write>(value: &T, mut out: W) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::io::BufWriter::new(std::fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::averaging::{sample_ensemble, EnsembleSpec};
    use crate::geometry::Metric;

    #[test]
    fn ensemble_round_trip_is_lossless() {
        let m = Metric::minkowski();
        let e = sample_ensemble(
            &m,
            &EnsembleSpec {
                count: 64,
                mean_velocity: m.boosted_unit(37.0, 2),
                spread: 0.013,
                position_width: 0.7,
                center: vec![0.25, 0.0, 0.0, 0.0],
                seed: 3,
            },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_ensemble(&e, &mut buf).unwrap();
        let back = read_ensemble(buf.as_slice()).unwrap();
        assert_eq!(back.particles, e.particles);
    }

    #[test]
    fn malformed_ensembles_are_parse_errors() {
        for text in [
            "",
            "a,x0,y0,w\n0,1,1,1\n",
            "a,x0,x1,y0,y1,w\n0,0,0,1,0,1\n2,0,0,1,0,1\n",
            "a,x0,x1,y0,y1,w\n0,0,0,1,zero,1\n",
            "a,x0,x1,y0,y1,w\n0,0,0,1,0,-1\n",
            "a,x0,x1,y0,y1,w\n0,0,0,1,0\n",
        ] {
            assert!(read_ensemble(text.as_bytes()).is_err(), "{text:?}");
        }
    }

    #[test]
    fn report_round_trip() {
        let r = ComparisonRecord {
            t_lab: 0.1,
            dx: 1e-9,
            dy: 3e-8,
            theta2: -1e-3,
            theta_bar2: 2e-3,
            gamma_bar: 100.0,
            alpha: 0.01,
            energy: 100.0,
        };
        let mut buf = Vec::new();
        write_report(&[r, r], &mut buf).unwrap();
        assert_eq!(read_report(buf.as_slice()).unwrap(), vec![r, r]);
    }
}
