//! Ensemble files: a JSON header followed by rows
//! `(replica, t, particle, x₁..x_d)`.
//!
//! * `csv`: the header on a first line starting with `# `, then a column
//!   line, then one text row per particle and recorded time.
//! * `packed`: the 16-byte magic `MVSELAB\0ENSEMBLE`, the header length as a
//!   little-endian `u64`, the header JSON, the row count as a little-endian
//!   `u64`, then every row as little-endian `f64` values.

use std::io::{BufRead, BufReader, Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{PathEnsemble, ReplicaFailure, RngProvenance, SimConfig};

pub const PACKED_MAGIC: &[u8; 16] = b"MVSELAB\0ENSEMBLE";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleFormat {
    Csv,
    Packed,
}

impl FromStr for EnsembleFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(EnsembleFormat::Csv),
            "packed" => Ok(EnsembleFormat::Packed),
            other => Err(Error::usage(format!("unknown ensemble format {other:?}; expected csv or packed"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    model: String,
    dim: usize,
    n_particles: usize,
    n_paths: usize,
    times: Vec<f64>,
    failures: Vec<ReplicaFailure>,
    config: Option<SimConfig>,
    provenance: Option<RngProvenance>,
    warnings: Vec<String>,
}

fn header(ens: &PathEnsemble) -> Header {
    Header {
        format_version: 1,
        model: ens.model_label.clone(),
        dim: ens.dim,
        n_particles: ens.n_particles,
        n_paths: ens.n_paths(),
        times: ens.times.clone(),
        failures: ens.failures.clone(),
        config: ens.config.clone(),
        provenance: ens.provenance.clone(),
        warnings: ens.warnings.clone(),
    }
}

fn rows(ens: &PathEnsemble) -> impl Iterator<Item = (usize, f64, usize, &[f64])> + '_ {
    (0..ens.n_paths()).flat_map(move |r| {
        (0..ens.n_frames(r)).flat_map(move |k| {
            ens.frame(r, k)
                .chunks_exact(ens.dim)
                .enumerate()
                .map(move |(i, x)| (r, ens.times[k], i, x))
        })
    })
}

pub fn write_csv<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(&header(ens))?)?;
    let mut cols = vec!["replica".to_string(), "t".into(), "particle".into()];
    cols.extend((1..=ens.dim).map(|k| format!("x{k}")));
    writeln!(w, "{}", cols.join(","))?;
    for (r, t, i, x) in rows(ens) {
        write!(w, "{r},{t},{i}")?;
        for v in x {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_packed<W: Write>(ens: &PathEnsemble, mut w: W) -> Result<()> {
    let head = serde_json::to_vec(&header(ens))?;
    w.write_all(PACKED_MAGIC)?;
    w.write_all(&(head.len() as u64).to_le_bytes())?;
    w.write_all(&head)?;
    let n_rows: usize = (0..ens.n_paths()).map(|r| ens.n_frames(r) * ens.n_particles).sum();
    w.write_all(&(n_rows as u64).to_le_bytes())?;
    for (r, t, i, x) in rows(ens) {
        for v in [r as f64, t, i as f64].iter().chain(x) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ensemble<W: Write>(ens: &PathEnsemble, format: EnsembleFormat, w: W) -> Result<()> {
    match format {
        EnsembleFormat::Csv => write_csv(ens, w),
        EnsembleFormat::Packed => write_packed(ens, w),
    }
}

/// Reassembles an ensemble from its header and `(replica, t, particle, x)`
/// rows, which must appear in replica, time, particle order.
fn assemble(head: Header, rows: impl Iterator<Item = Result<(usize, f64, usize, Vec<f64>)>>) -> Result<PathEnsemble> {
    let mut replicas: Vec<Vec<f64>> = vec![Vec::new(); head.n_paths];
    let frame = head.dim * head.n_particles;
    for row in rows {
        let (r, t, i, x) = row?;
        let data = replicas
            .get_mut(r)
            .ok_or_else(|| Error::structural(format!("row for replica {r} of {}", head.n_paths)))?;
        let k = data.len() / frame;
        if i != (data.len() % frame) / head.dim || head.times.get(k) != Some(&t) || x.len() != head.dim {
            return Err(Error::structural(format!("row (replica {r}, t {t}, particle {i}) out of order")));
        }
        data.extend_from_slice(&x);
    }
    let mut ens = PathEnsemble::from_parts(head.dim, head.n_particles, head.times, replicas, head.failures)?;
    ens.model_label = head.model;
    ens.config = head.config;
    ens.provenance = head.provenance;
    ens.warnings = head.warnings;
    Ok(ens)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        position: line,
        message: format!("ensemble line {line}: {}", msg.into()),
    }
}

pub fn read_csv<R: Read>(r: R) -> Result<PathEnsemble> {
    let mut lines = BufReader::new(r).lines();
    let first = lines.next().ok_or_else(|| parse_err(1, "empty file"))??;
    let json = first.strip_prefix("# ").ok_or_else(|| parse_err(1, "missing header line"))?;
    let head: Header = serde_json::from_str(json).map_err(|e| parse_err(1, e.to_string()))?;
    lines.next().ok_or_else(|| parse_err(2, "missing column line"))??;
    let dim = head.dim;
    let parsed = lines.enumerate().map(move |(n, line)| {
        let line = line?;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 + dim {
            return Err(parse_err(n + 3, format!("expected {} fields, got {}", 3 + dim, f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(n + 3, format!("{s:?}: {e}")));
        let idx = |s: &str| s.parse::<usize>().map_err(|e| parse_err(n + 3, format!("{s:?}: {e}")));
        let x = f[3..].iter().map(|s| num(s)).collect::<Result<Vec<f64>>>()?;
        Ok((idx(f[0])?, num(f[1])?, idx(f[2])?, x))
    });
    assemble(head, parsed)
}

pub fn read_packed<R: Read>(r: R) -> Result<PathEnsemble> {
    let mut r = BufReader::new(r);
    let mut magic = [0u8; 16];
    r.read_exact(&mut magic)?;
    if &magic != PACKED_MAGIC {
        return Err(Error::Parse {
            position: 0,
            message: "not a packed ensemble (bad magic)".into(),
        });
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let mut head = vec![0u8; u64::from_le_bytes(word) as usize];
    r.read_exact(&mut head)?;
    let head: Header = serde_json::from_slice(&head)?;
    r.read_exact(&mut word)?;
    let n_rows = u64::from_le_bytes(word) as usize;
    let width = 3 + head.dim;
    let mut rows = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let mut vals = Vec::with_capacity(width);
        for _ in 0..width {
            r.read_exact(&mut word)?;
            vals.push(f64::from_le_bytes(word));
        }
        rows.push(Ok((vals[0] as usize, vals[1], vals[2] as usize, vals[3..].to_vec())));
    }
    assemble(head, rows.into_iter())
}

pub fn read_ensemble<R: Read>(format: EnsembleFormat, r: R) -> Result<PathEnsemble> {
    match format {
        EnsembleFormat::Csv => read_csv(r),
        EnsembleFormat::Packed => read_packed(r),
    }
}
