//! CSV readers and writers for sample sets and numeric tables.
//!
//! Scalar data uses the columns `r,y`; particle data one row per particle per frame with
//! `frame,id,type,x,y,z,fx,fy,fz`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::SampleSet;

pub const SCALAR_HEADER: [&str; 2] = ["r", "y"];
pub const PARTICLE_HEADER: [&str; 9] = ["frame", "id", "type", "x", "y", "z", "fx", "fy", "fz"];

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != expected {
        return Err(parse_error(
            1,
            format!("expected header {}, found {}", expected.join(","), got.join(",")),
        ));
    }
    Ok(())
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, name: &str, line: u64) -> Result<T> {
    let raw = record.get(i).map(str::trim).unwrap_or("");
    raw.parse()
        .map_err(|_| parse_error(line, format!("column {name}: cannot parse {raw:?}")))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).from_reader(input)
}

fn records<R: Read>(
    rdr: &mut csv::Reader<R>,
    width: usize,
) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
    rdr.records().map(move |rec| {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_error(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != width {
            return Err(parse_error(
                line,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        Ok((line, rec))
    })
}

pub fn read_scalar<R: Read>(input: R) -> Result<SampleSet> {
    let mut rdr = reader(input);
    check_header(
        rdr.headers().map_err(|e| parse_error(1, e.to_string()))?,
        &SCALAR_HEADER,
    )?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in records(&mut rdr, 2) {
        let (line, rec) = rec?;
        let r: f64 = field(&rec, 0, "r", line)?;
        let y: f64 = field(&rec, 1, "y", line)?;
        if !(r.is_finite() && y.is_finite()) {
            return Err(parse_error(line, "non-finite value"));
        }
        xs.push(r);
        ys.push(y);
    }
    Ok(SampleSet::scalar(&xs, &ys))
}

/// Frames become samples; particles are ordered by id and must carry consistent types.
pub fn read_particles<R: Read>(input: R) -> Result<SampleSet> {
    let mut rdr = reader(input);
    check_header(
        rdr.headers().map_err(|e| parse_error(1, e.to_string()))?,
        &PARTICLE_HEADER,
    )?;
    type Row = (usize, [f64; 3], [f64; 3], u64);
    let mut frames: BTreeMap<usize, BTreeMap<usize, Row>> = BTreeMap::new();
    for rec in records(&mut rdr, 9) {
        let (line, rec) = rec?;
        let frame: usize = field(&rec, 0, "frame", line)?;
        let id: usize = field(&rec, 1, "id", line)?;
        let ty: usize = field(&rec, 2, "type", line)?;
        let mut vals = [0.0f64; 6];
        for (c, v) in vals.iter_mut().enumerate() {
            *v = field(&rec, 3 + c, PARTICLE_HEADER[3 + c], line)?;
            if !v.is_finite() {
                return Err(parse_error(line, "non-finite value"));
            }
        }
        let row = (ty, [vals[0], vals[1], vals[2]], [vals[3], vals[4], vals[5]], line);
        if frames.entry(frame).or_default().insert(id, row).is_some() {
            return Err(parse_error(
                line,
                format!("duplicate particle {id} in frame {frame}"),
            ));
        }
    }
    let mut samples = SampleSet::default();
    let mut ids: Option<Vec<usize>> = None;
    for (frame, particles) in &frames {
        let these: Vec<usize> = particles.keys().copied().collect();
        let types: Vec<usize> = particles.values().map(|r| r.0).collect();
        match &ids {
            None => {
                ids = Some(these);
                samples.types = types;
            }
            Some(first) => {
                if *first != these || samples.types != types {
                    let line = particles.values().map(|r| r.3).min().unwrap_or(0);
                    return Err(parse_error(
                        line,
                        format!("frame {frame} does not match the particles and types of the first frame"),
                    ));
                }
            }
        }
        samples
            .inputs
            .push(particles.values().flat_map(|r| r.1).collect());
        samples
            .outputs
            .push(particles.values().flat_map(|r| r.2).collect());
    }
    if samples.is_empty() {
        return Err(parse_error(1, "no data rows"));
    }
    Ok(samples)
}

/// Dispatches on the header row.
pub fn read_samples(path: &Path) -> Result<SampleSet> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    let first = text.lines().next().unwrap_or("");
    if first.split(',').count() == PARTICLE_HEADER.len() {
        read_particles(text.as_bytes())
    } else {
        read_scalar(text.as_bytes())
    }
}

pub fn write_scalar<W: Write>(out: W, samples: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCALAR_HEADER)?;
    for (x, y) in samples.inputs.iter().zip(&samples.outputs) {
        w.write_record([x[0].to_string(), y[0].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_particles<W: Write>(out: W, samples: &SampleSet) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARTICLE_HEADER)?;
    for (frame, (pos, force)) in samples.inputs.iter().zip(&samples.outputs).enumerate() {
        for (id, ty) in samples.types.iter().enumerate() {
            let mut rec = vec![frame.to_string(), id.to_string(), ty.to_string()];
            rec.extend(pos[3 * id..3 * id + 3].iter().map(f64::to_string));
            rec.extend(force[3 * id..3 * id + 3].iter().map(f64::to_string));
            w.write_record(rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_samples(path: &Path, samples: &SampleSet) -> Result<()> {
    let file = BufWriter::new(File::create(path)?);
    if samples.types.is_empty() {
        write_scalar(file, samples)
    } else {
        write_particles(file, samples)
    }
}

/// A header plus rows of numbers, written with shortest round-trip formatting.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))?;
    }
    w.flush()?;
    Ok(())
}

/// Serializable records written through serde.
pub fn write_records<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}
