//! On-disk formats: hashed JSON documents and the per-path CSV time series.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::dynamics::{PathRecord, PathSample};
use crate::error::{Error, Result};

/// SHA-256 of the compact JSON form, hex encoded.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

/// Column names of a path CSV in dimension `d`.
pub fn path_header(d: usize) -> Vec<String> {
    let mut cols = vec!["time".to_string()];
    cols.extend((1..=d).map(|p| format!("eta_{p}")));
    for a in 1..=d {
        for b in 1..=d {
            cols.push(format!("theta_{a}{b}"));
        }
    }
    cols.extend(["h_inf", "gradh_inf", "H", "G"].map(String::from));
    cols
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Malformed(format!("csv: {other:?}")),
    }
}

/// Opens `path` and writes the `# config_hash=` comment line.
pub fn hashed_csv_writer(path: &Path, hash: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "# config_hash={hash}")?;
    Ok(csv::Writer::from_writer(f))
}

pub fn write_path_csv(path: &Path, hash: &str, rec: &PathRecord) -> Result<()> {
    let d = rec.dim;
    let mut w = hashed_csv_writer(path, hash)?;
    w.write_record(path_header(d)).map_err(csv_err)?;
    let mut row = Vec::with_capacity(5 + d + d * d);
    for s in &rec.samples {
        row.clear();
        row.push(s.time);
        row.extend_from_slice(&s.eta);
        row.extend_from_slice(&s.theta);
        row.extend([s.h_inf, s.gradh_inf, s.h, s.g]);
        w.serialize(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Value of the `# config_hash=` line, if the file starts with one.
pub fn read_csv_hash(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line
        .trim_end()
        .strip_prefix("# config_hash=")
        .map(str::to_string))
}

/// Samples of a path CSV written by [`write_path_csv`].
pub fn read_path_csv(path: &Path, d: usize) -> Result<Vec<PathSample>> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(String::from).collect();
    if header != path_header(d) {
        return Err(Error::Malformed(format!(
            "{}: unexpected columns {header:?}",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for row in r.deserialize::<Vec<f64>>() {
        let v = row.map_err(csv_err)?;
        let (eta, rest) = v[1..].split_at(d);
        let (theta, tail) = rest.split_at(d * d);
        out.push(PathSample {
            time: v[0],
            eta: eta.to_vec(),
            theta: theta.to_vec(),
            h_inf: tail[0],
            gradh_inf: tail[1],
            h: tail[2],
            g: tail[3],
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_csv_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("path.csv");
        let rec = PathRecord {
            dim: 2,
            samples: vec![
                PathSample {
                    time: 0.0,
                    eta: vec![0.1, -1.0 / 3.0],
                    theta: vec![1.0, 0.0, 0.0, 1.0],
                    h_inf: 0.0,
                    gradh_inf: 0.0,
                    h: 0.0,
                    g: 0.0,
                },
                PathSample {
                    time: 0.001,
                    eta: vec![1e-300, std::f64::consts::PI],
                    theta: vec![0.8, -0.6, 0.6, 0.8],
                    h_inf: 2.5e-3,
                    gradh_inf: 1.0 / 7.0,
                    h: 6.02e23,
                    g: 5e-324,
                },
            ],
            sigma: None,
            brownian_mean: vec![0.0, 0.0],
            com_identity_error: 0.0,
            path_seed: 3,
            steps: 10,
            dt_micro_used: 1e-3,
        };
        write_path_csv(&p, "abc", &rec).unwrap();
        assert_eq!(read_csv_hash(&p).unwrap().as_deref(), Some("abc"));
        assert_eq!(read_path_csv(&p, 2).unwrap(), rec.samples);
        assert!(matches!(read_path_csv(&p, 3), Err(Error::Malformed(_))));
    }

    #[test]
    fn header_is_stable() {
        assert_eq!(
            path_header(2).join(","),
            "time,eta_1,eta_2,theta_11,theta_12,theta_21,theta_22,h_inf,gradh_inf,H,G"
        );
    }

    #[test]
    fn hash_is_hex_sha256() {
        let h = config_hash(&vec![1, 2, 3]).unwrap();
        assert_eq!(h.len(), 64);
        assert_eq!(h, config_hash(&vec![1, 2, 3]).unwrap());
        assert_ne!(h, config_hash(&vec![1, 2, 4]).unwrap());
    }
}
