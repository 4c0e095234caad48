//! Simulation traces and their on-disk CSV form.
//!
//! The format is one comment preamble (`# key = value`), one header row, and
//! one record row per iteration. Floats are serialized with 17 significant
//! digits so a written trace parses back bit-for-bit, and the writer is
//! fully deterministic so identical runs produce identical bytes.
//!
//! ```text
//! # agc trace v1
//! # name = s51_sat
//! # config_hash = 9f2c…
//! # protocol = sat
//! # n = 10
//! # p_mis = 7.0000000000000000e2
//! # eta = 1.0000000000000000e0
//! # rrl = 1.0000000000000000e0
//! # tol = 0.0000000000000000e0
//! k,x_1,…,x_n,dx_1,…,dx_n,cost,residual,feas_residual,grad_spread
//! 0,7.0000000000000000e1,…
//! ```

use std::io::{self, Write};
use thiserror::Error;

const MAGIC: &str = "# agc trace v1";
/// Parser guard against absurd node counts in hostile input.
const MAX_NODES: usize = 2_000;

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("trace is not valid UTF-8")]
    NotUtf8,
    #[error("missing magic line `{MAGIC}`")]
    BadMagic,
    #[error("line {0}: malformed preamble entry")]
    BadPreamble(usize),
    #[error("missing preamble key `{0}`")]
    MissingKey(&'static str),
    #[error("preamble key `{0}` has an invalid value")]
    BadValue(&'static str),
    #[error("node count {0} exceeds the supported maximum {MAX_NODES}")]
    TooManyNodes(usize),
    #[error("line {0}: header row does not match the declared node count")]
    BadHeader(usize),
    #[error("line {line}: expected {expected} columns, got {got}")]
    ColumnMismatch {
        line: usize,
        expected: usize,
        got: usize,
    },
    #[error("line {line}: field `{field}` is not a number")]
    BadNumber { line: usize, field: &'static str },
    #[error("line {line}: iteration index {got} does not match row position {expected}")]
    BadIteration { line: usize, expected: u64, got: u64 },
    #[error("trace contains no records")]
    Empty,
}

/// Identifies the run a trace came from; enough, together with the config
/// file it hashes, to reproduce the trace bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub name: String,
    pub config_hash: String,
    pub protocol: String,
    pub n: usize,
    pub p_mis: f64,
    pub eta: f64,
    pub rrl: f64,
    pub tol: f64,
}

impl TraceMeta {
    /// Placeholder metadata for library-level tests that never touch disk.
    pub fn for_tests(n: usize) -> TraceMeta {
        TraceMeta {
            name: "test".into(),
            config_hash: String::new(),
            protocol: "sat".into(),
            n,
            p_mis: 0.0,
            eta: 1.0,
            rrl: 1.0,
            tol: 0.0,
        }
    }
}

/// One iteration: state, realized step, and the derived run quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub k: u64,
    /// Power per node [MW].
    pub x: Vec<f64>,
    /// Realized step `x(k) − x(k−1)` [MW]; zero at k = 0.
    pub dx: Vec<f64>,
    /// Total penalized cost [$/h].
    pub cost: f64,
    /// Cost minus the oracle optimum [$/h]; NaN when no oracle was attached.
    pub residual: f64,
    /// |Σx − P_mis| [MW].
    pub feas_residual: f64,
    /// Max minus min marginal cost over all nodes [$/MWh].
    pub grad_spread: f64,
}

/// A full run: metadata plus one record per recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub meta: TraceMeta,
    pub records: Vec<TraceRecord>,
}

/// 17-significant-digit scientific notation; lossless for f64.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl SimTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        writeln!(w, "# name = {}", self.meta.name)?;
        writeln!(w, "# config_hash = {}", self.meta.config_hash)?;
        writeln!(w, "# protocol = {}", self.meta.protocol)?;
        writeln!(w, "# n = {}", self.meta.n)?;
        writeln!(w, "# p_mis = {}", format_f64(self.meta.p_mis))?;
        writeln!(w, "# eta = {}", format_f64(self.meta.eta))?;
        writeln!(w, "# rrl = {}", format_f64(self.meta.rrl))?;
        writeln!(w, "# tol = {}", format_f64(self.meta.tol))?;
        writeln!(w, "{}", header(self.meta.n))?;
        let mut line = String::new();
        for r in &self.records {
            line.clear();
            line.push_str(&r.k.to_string());
            for v in r.x.iter().chain(&r.dx) {
                line.push(',');
                line.push_str(&format_f64(*v));
            }
            for v in [r.cost, r.residual, r.feas_residual, r.grad_spread] {
                line.push(',');
                line.push_str(&format_f64(v));
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("trace text is ASCII")
    }

    /// Parse a trace from raw bytes; safe on arbitrary input.
    pub fn from_csv_bytes(bytes: &[u8]) -> Result<SimTrace, TraceError> {
        let text = std::str::from_utf8(bytes).map_err(|_| TraceError::NotUtf8)?;
        SimTrace::from_csv_str(text)
    }

    pub fn from_csv_str(text: &str) -> Result<SimTrace, TraceError> {
        let mut lines = text.lines().enumerate();
        let (_, first) = lines.next().ok_or(TraceError::BadMagic)?;
        if first.trim_end() != MAGIC {
            return Err(TraceError::BadMagic);
        }

        let mut name = None;
        let mut config_hash = None;
        let mut protocol = None;
        let mut n_decl: Option<usize> = None;
        let mut p_mis = None;
        let mut eta = None;
        let mut rrl = None;
        let mut tol = None;
        let mut header_line = None;
        for (idx, line) in &mut lines {
            let line_no = idx + 1;
            if let Some(rest) = line.strip_prefix("# ") {
                let (key, value) = rest
                    .split_once(" = ")
                    .ok_or(TraceError::BadPreamble(line_no))?;
                match key {
                    "name" => name = Some(value.to_string()),
                    "config_hash" => config_hash = Some(value.to_string()),
                    "protocol" => protocol = Some(value.to_string()),
                    "n" => {
                        let v: usize =
                            value.parse().map_err(|_| TraceError::BadValue("n"))?;
                        if v == 0 {
                            return Err(TraceError::BadValue("n"));
                        }
                        if v > MAX_NODES {
                            return Err(TraceError::TooManyNodes(v));
                        }
                        n_decl = Some(v);
                    }
                    "p_mis" => p_mis = Some(parse_f64(value, "p_mis")?),
                    "eta" => eta = Some(parse_f64(value, "eta")?),
                    "rrl" => rrl = Some(parse_f64(value, "rrl")?),
                    "tol" => tol = Some(parse_f64(value, "tol")?),
                    _ => return Err(TraceError::BadPreamble(line_no)),
                }
            } else {
                header_line = Some((line_no, line));
                break;
            }
        }

        let meta = TraceMeta {
            name: name.ok_or(TraceError::MissingKey("name"))?,
            config_hash: config_hash.ok_or(TraceError::MissingKey("config_hash"))?,
            protocol: protocol.ok_or(TraceError::MissingKey("protocol"))?,
            n: n_decl.ok_or(TraceError::MissingKey("n"))?,
            p_mis: p_mis.ok_or(TraceError::MissingKey("p_mis"))?,
            eta: eta.ok_or(TraceError::MissingKey("eta"))?,
            rrl: rrl.ok_or(TraceError::MissingKey("rrl"))?,
            tol: tol.ok_or(TraceError::MissingKey("tol"))?,
        };

        let (header_no, header_text) = header_line.ok_or(TraceError::Empty)?;
        if header_text.trim_end() != header(meta.n) {
            return Err(TraceError::BadHeader(header_no));
        }

        let expected_cols = 1 + 2 * meta.n + 4;
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != expected_cols {
                return Err(TraceError::ColumnMismatch {
                    line: line_no,
                    expected: expected_cols,
                    got: fields.len(),
                });
            }
            let k: u64 = fields[0].parse().map_err(|_| TraceError::BadNumber {
                line: line_no,
                field: "k",
            })?;
            let expected_k = records.len() as u64;
            if k != expected_k {
                return Err(TraceError::BadIteration {
                    line: line_no,
                    expected: expected_k,
                    got: k,
                });
            }
            let mut nums = Vec::with_capacity(expected_cols - 1);
            for f in &fields[1..] {
                nums.push(f.parse::<f64>().map_err(|_| TraceError::BadNumber {
                    line: line_no,
                    field: "value",
                })?);
            }
            let x = nums[..meta.n].to_vec();
            let dx = nums[meta.n..2 * meta.n].to_vec();
            records.push(TraceRecord {
                k,
                x,
                dx,
                cost: nums[2 * meta.n],
                residual: nums[2 * meta.n + 1],
                feas_residual: nums[2 * meta.n + 2],
                grad_spread: nums[2 * meta.n + 3],
            });
        }
        if records.is_empty() {
            return Err(TraceError::Empty);
        }
        Ok(SimTrace { meta, records })
    }
}

fn parse_f64(value: &str, key: &'static str) -> Result<f64, TraceError> {
    value.parse().map_err(|_| TraceError::BadValue(key))
}

fn header(n: usize) -> String {
    let mut h = String::from("k");
    for i in 1..=n {
        h.push_str(&format!(",x_{i}"));
    }
    for i in 1..=n {
        h.push_str(&format!(",dx_{i}"));
    }
    h.push_str(",cost,residual,feas_residual,grad_spread");
    h
}
