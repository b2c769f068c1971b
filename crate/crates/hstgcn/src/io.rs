//! On-disk formats: the road network as a structured text document,
//! travel-time and volume series as long-format delimited text, the
//! navigation log as one record per line, tensors as little-endian
//! 64-bit binary blobs, and stage manifests as JSON with content hashes
//! chained across pipeline stages.
//!
//! Floating point values in text files use Rust's shortest round-trip
//! formatting, so writing and re-reading reproduces bit-identical
//! values; reruns of any writer therefore produce byte-identical files.

use crate::error::{Error, Result};
use crate::navlog::{NavigationLog, RouteRecord};
use crate::network::{RoadNetwork, Segment};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    Ok(out)
}

// ---- binary blobs -----------------------------------------------------

/// Write a flat f64 slice as little-endian bytes.
pub fn write_f64_blob(path: &Path, data: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for &x in data {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_f64_blob(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse(format!(
            "{}: blob length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

// ---- road network -----------------------------------------------------

/// Write the network as a line-oriented text document:
/// `node <id> <x_km> <y_km>` and
/// `segment <id> <from> <to> <length_m> <class> <free_flow_kmh>`.
pub fn write_network(path: &Path, net: &RoadNetwork) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# road network: {} nodes, {} segments", net.n_nodes(), net.n_segments())?;
    for (id, (x, y)) in net.node_xy.iter().enumerate() {
        writeln!(w, "node {id} {x} {y}")?;
    }
    for seg in &net.segments {
        writeln!(
            w,
            "segment {} {} {} {} {} {}",
            seg.id, seg.from, seg.to, seg.length_m, seg.class, seg.free_flow_kmh
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_network(path: &Path) -> Result<RoadNetwork> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut nodes: Vec<(usize, f64, f64)> = Vec::new();
    let mut segments: Vec<Segment> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let context = |what: &str| {
            Error::Parse(format!("{}:{}: {what}", path.display(), lineno + 1))
        };
        match parts.next() {
            Some("node") => {
                let id = parse_field(parts.next(), "node id", path, lineno)?;
                let x = parse_field(parts.next(), "node x", path, lineno)?;
                let y = parse_field(parts.next(), "node y", path, lineno)?;
                nodes.push((id, x, y));
            }
            Some("segment") => {
                let id = parse_field(parts.next(), "segment id", path, lineno)?;
                let from = parse_field(parts.next(), "from node", path, lineno)?;
                let to = parse_field(parts.next(), "to node", path, lineno)?;
                let length_m = parse_field(parts.next(), "length", path, lineno)?;
                let class = parts
                    .next()
                    .ok_or_else(|| context("missing road class"))?
                    .parse()
                    .map_err(|_| context("bad road class"))?;
                let free_flow_kmh = parse_field(parts.next(), "free-flow speed", path, lineno)?;
                segments.push(Segment { id, from, to, length_m, class, free_flow_kmh });
            }
            Some(other) => {
                return Err(context(&format!("unknown record kind {other:?}")));
            }
            None => unreachable!("blank lines are skipped"),
        }
    }
    nodes.sort_by_key(|&(id, _, _)| id);
    for (pos, &(id, _, _)) in nodes.iter().enumerate() {
        if id != pos {
            return Err(Error::Parse(format!(
                "{}: node ids must be dense 0..{}, found {id}",
                path.display(),
                nodes.len()
            )));
        }
    }
    segments.sort_by_key(|s| s.id);
    let node_xy = nodes.into_iter().map(|(_, x, y)| (x, y)).collect();
    RoadNetwork::new(node_xy, segments)
}

fn parse_field<T: std::str::FromStr>(
    field: Option<&str>,
    what: &str,
    path: &Path,
    lineno: usize,
) -> Result<T> {
    field
        .ok_or_else(|| {
            Error::Parse(format!("{}:{}: missing {what}", path.display(), lineno + 1))
        })?
        .parse()
        .map_err(|_| Error::Parse(format!("{}:{}: bad {what}", path.display(), lineno + 1)))
}

// ---- long-format series ----------------------------------------------

/// Write an n×S tensor as long-format delimited text: one
/// `segment<TAB>slot<TAB>value` line per entry.
pub fn write_series(path: &Path, series: &Tensor) -> Result<()> {
    let [n, s] = *series.shape() else {
        return Err(Error::Shape(format!(
            "series must be 2D n×S, got {:?}",
            series.shape()
        )));
    };
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# segment\tslot\tvalue")?;
    for i in 0..n {
        for t in 0..s {
            writeln!(w, "{i}\t{t}\t{}", series.at(&[i, t]))?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_series(path: &Path) -> Result<Tensor> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    let mut max_seg = 0usize;
    let mut max_slot = 0usize;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split('\t');
        let seg: usize = parse_field(parts.next(), "segment", path, lineno)?;
        let slot: usize = parse_field(parts.next(), "slot", path, lineno)?;
        let value: f64 = parse_field(parts.next(), "value", path, lineno)?;
        max_seg = max_seg.max(seg);
        max_slot = max_slot.max(slot);
        entries.push((seg, slot, value));
    }
    if entries.is_empty() {
        return Err(Error::Parse(format!("{}: empty series", path.display())));
    }
    let n = max_seg + 1;
    let s = max_slot + 1;
    if entries.len() != n * s {
        return Err(Error::Parse(format!(
            "{}: {} entries cannot fill a dense {n}×{s} table",
            path.display(),
            entries.len()
        )));
    }
    let mut seen = vec![false; n * s];
    let mut out = Tensor::zeros(&[n, s]);
    for (seg, slot, value) in entries {
        if seen[seg * s + slot] {
            return Err(Error::Parse(format!(
                "{}: duplicate entry for segment {seg} slot {slot}",
                path.display()
            )));
        }
        seen[seg * s + slot] = true;
        out.set(&[seg, slot], value);
    }
    Ok(out)
}

// ---- navigation log ---------------------------------------------------

/// Write the navigation log, one route per line:
/// `<route_id> <launch_slot> <seg>:<arrival_slot>...` where an arrival
/// outside the daily window is written as `<seg>:-`.
pub fn write_navlog(path: &Path, log: &NavigationLog) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# route_id launch_slot hop(segment:planned_arrival)...")?;
    for rec in &log.records {
        write!(w, "{} {}", rec.route_id, rec.launch_slot)?;
        for &(seg, arrival) in &rec.hops {
            match arrival {
                Some(slot) => write!(w, " {seg}:{slot}")?,
                None => write!(w, " {seg}:-")?,
            }
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_navlog(path: &Path) -> Result<NavigationLog> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let route_id: usize = parse_field(parts.next(), "route id", path, lineno)?;
        let launch_slot: usize = parse_field(parts.next(), "launch slot", path, lineno)?;
        let mut hops = Vec::new();
        for hop in parts {
            let (seg, arrival) = hop.split_once(':').ok_or_else(|| {
                Error::Parse(format!(
                    "{}:{}: hop {hop:?} is not segment:slot",
                    path.display(),
                    lineno + 1
                ))
            })?;
            let seg: usize = seg.parse().map_err(|_| {
                Error::Parse(format!("{}:{}: bad segment in {hop:?}", path.display(), lineno + 1))
            })?;
            let arrival = if arrival == "-" {
                None
            } else {
                Some(arrival.parse().map_err(|_| {
                    Error::Parse(format!(
                        "{}:{}: bad arrival in {hop:?}",
                        path.display(),
                        lineno + 1
                    ))
                })?)
            };
            hops.push((seg, arrival));
        }
        records.push(RouteRecord { route_id, launch_slot, hops });
    }
    Ok(NavigationLog { records })
}

// ---- stage manifests --------------------------------------------------

/// Provenance record written by every pipeline stage. `files` maps each
/// emitted file name to its content hash; `input_manifest_sha256` chains
/// back to the consumed stage so a report can be audited down to the
/// dataset that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub seed: u64,
    pub config_sha256: String,
    pub input_manifest_sha256: Option<String>,
    pub files: BTreeMap<String, String>,
    pub extra: BTreeMap<String, String>,
}

impl StageManifest {
    pub fn new(stage: &str, seed: u64, config_sha256: String) -> Self {
        Self {
            stage: stage.to_string(),
            seed,
            config_sha256,
            input_manifest_sha256: None,
            files: BTreeMap::new(),
            extra: BTreeMap::new(),
        }
    }

    /// Hash and record one emitted file (by bare file name).
    pub fn record_file(&mut self, dir: &Path, name: &str) -> Result<()> {
        let hash = sha256_file(&dir.join(name))?;
        self.files.insert(name.to_string(), hash);
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Parse(format!("manifest serialization: {e}")))?;
        fs::write(dir.join("manifest.json"), body + "\n")?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let body = fs::read_to_string(&path)?;
        serde_json::from_str(&body)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Content hash of the manifest file itself, for chaining.
    pub fn file_hash(dir: &Path) -> Result<String> {
        sha256_file(&dir.join("manifest.json"))
    }

    /// Verify every recorded file still hashes to its manifest entry.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for (name, expect) in &self.files {
            let got = sha256_file(&dir.join(name))?;
            if &got != expect {
                return Err(Error::Data(format!(
                    "{} does not match its manifest hash (expected {expect}, got {got})",
                    dir.join(name).display()
                )));
            }
        }
        Ok(())
    }
}
