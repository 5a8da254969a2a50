//! Trace serialization: the files the simulator writes and the attacker
//! reads back.
//!
//! Observations: one record per line, `time_s,gate,lane,pseudonym`.
//! Ground-truth sidecar: `egress_pseudonym,ingress_pseudonym,kind`.
//! Neither file carries a header — the formats are the contract.

use std::fmt::Write as _;
use std::io;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use mixzone::sim::{EntityKind, EntityLink, Observation, Pseudonym};
use mixzone::zone::{GateId, LaneDirection};

#[derive(Error, Debug)]
pub enum TraceIoError {
    #[error("cannot access {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Malformed { path: String, line: usize, message: String },
}

impl TraceIoError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> TraceIoError + '_ {
        move |source| TraceIoError::Io { path: path.display().to_string(), source }
    }

    fn at(path: &Path, line: usize, message: String) -> TraceIoError {
        TraceIoError::Malformed { path: path.display().to_string(), line, message }
    }
}

pub fn observations_to_string(observations: &[Observation]) -> String {
    let mut out = String::new();
    for o in observations {
        let _ = writeln!(out, "{},{},{},{}", o.time_s, o.gate, o.lane.as_str(), o.pseudonym);
    }
    out
}

pub fn write_observations(path: &Path, observations: &[Observation]) -> Result<(), TraceIoError> {
    std::fs::write(path, observations_to_string(observations)).map_err(TraceIoError::io(path))
}

pub fn read_observations(path: &Path) -> Result<Vec<Observation>, TraceIoError> {
    let text = std::fs::read_to_string(path).map_err(TraceIoError::io(path))?;
    let mut observations = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(TraceIoError::at(
                path,
                lineno,
                format!("expected time_s,gate,lane,pseudonym — got {} fields", fields.len()),
            ));
        }
        let time_s: f64 = fields[0]
            .parse()
            .map_err(|_| TraceIoError::at(path, lineno, format!("bad time {:?}", fields[0])))?;
        if !time_s.is_finite() {
            return Err(TraceIoError::at(path, lineno, format!("non-finite time {time_s}")));
        }
        let gate = fields[1].parse::<usize>().ok().and_then(GateId::new).ok_or_else(|| {
            TraceIoError::at(path, lineno, format!("bad gate {:?} (gates are 1-based)", fields[1]))
        })?;
        let lane = LaneDirection::from_str(fields[2])
            .map_err(|_| TraceIoError::at(path, lineno, format!("bad lane {:?}", fields[2])))?;
        if fields[3].is_empty() {
            return Err(TraceIoError::at(path, lineno, "empty pseudonym".into()));
        }
        observations.push(Observation { time_s, gate, lane, pseudonym: Pseudonym::new(fields[3]) });
    }
    Ok(observations)
}

pub fn ground_truth_to_string(links: &[EntityLink]) -> String {
    let mut out = String::new();
    for link in links {
        let _ = writeln!(out, "{},{},{}", link.egress, link.ingress, link.kind.as_str());
    }
    out
}

pub fn write_ground_truth(path: &Path, links: &[EntityLink]) -> Result<(), TraceIoError> {
    std::fs::write(path, ground_truth_to_string(links)).map_err(TraceIoError::io(path))
}

pub fn read_ground_truth(path: &Path) -> Result<Vec<EntityLink>, TraceIoError> {
    let text = std::fs::read_to_string(path).map_err(TraceIoError::io(path))?;
    let mut links = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(TraceIoError::at(
                path,
                lineno,
                format!(
                    "expected egress_pseudonym,ingress_pseudonym,kind — got {} fields",
                    fields.len()
                ),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(TraceIoError::at(path, lineno, "empty pseudonym".into()));
        }
        let kind = EntityKind::from_str(fields[2])
            .map_err(|_| TraceIoError::at(path, lineno, format!("bad kind {:?}", fields[2])))?;
        links.push(EntityLink {
            egress: Pseudonym::new(fields[0]),
            ingress: Pseudonym::new(fields[1]),
            kind,
        });
    }
    Ok(links)
}
