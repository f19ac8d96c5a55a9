//! CMAPSS whitespace-separated text format.
//!
//! Each row holds `engine cycle op1 op2 op3 s1 .. s21`. The companion `RUL_FDxxx.txt`
//! file holds one true remaining lifetime per test engine.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OP_SETTINGS: usize = 3;
pub const RAW_SENSORS: usize = 21;
pub const RAW_COLUMNS: usize = 2 + OP_SETTINGS + RAW_SENSORS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    FD001,
    FD002,
    FD003,
    FD004,
}

impl Subset {
    pub const ALL: [Subset; 4] = [Subset::FD001, Subset::FD002, Subset::FD003, Subset::FD004];

    /// Window length, set by the shortest test series of each subset.
    pub fn window(self) -> usize {
        match self {
            Subset::FD001 => 30,
            Subset::FD002 => 20,
            Subset::FD003 => 30,
            Subset::FD004 => 15,
        }
    }

    pub fn train_engines(self) -> usize {
        match self {
            Subset::FD001 => 100,
            Subset::FD002 => 260,
            Subset::FD003 => 100,
            Subset::FD004 => 249,
        }
    }

    pub fn test_engines(self) -> usize {
        match self {
            Subset::FD001 => 100,
            Subset::FD002 => 259,
            Subset::FD003 => 100,
            Subset::FD004 => 248,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Subset::FD001 => "FD001",
            Subset::FD002 => "FD002",
            Subset::FD003 => "FD003",
            Subset::FD004 => "FD004",
        }
    }

    pub fn train_file(self) -> String {
        format!("train_{}.txt", self.name())
    }

    pub fn test_file(self) -> String {
        format!("test_{}.txt", self.name())
    }

    pub fn rul_file(self) -> String {
        format!("RUL_{}.txt", self.name())
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FD001" => Ok(Subset::FD001),
            "FD002" => Ok(Subset::FD002),
            "FD003" => Ok(Subset::FD003),
            "FD004" => Ok(Subset::FD004),
            _ => Err(Error::Config(format!("unknown subset `{s}` (expected FD001..FD004)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

/// One engine's multivariate time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineSeries {
    pub engine_id: u32,
    /// Number of sensor channels per time step.
    pub channels: usize,
    /// Row-major `[len, channels]`.
    pub readings: Vec<f64>,
    /// Row-major `[len, 3]`.
    pub op_settings: Vec<f64>,
}

impl EngineSeries {
    pub fn new(engine_id: u32, channels: usize, readings: Vec<f64>, op_settings: Vec<f64>) -> Result<Self> {
        if channels == 0 || readings.is_empty() || !readings.len().is_multiple_of(channels) {
            return Err(Error::Data(format!(
                "engine {engine_id}: {} readings do not form rows of {channels}",
                readings.len()
            )));
        }
        let len = readings.len() / channels;
        if op_settings.len() != len * OP_SETTINGS {
            return Err(Error::Data(format!("engine {engine_id}: operating settings do not match length {len}")));
        }
        Ok(Self {
            engine_id,
            channels,
            readings,
            op_settings,
        })
    }

    /// Number of time steps (cycles).
    pub fn len(&self) -> usize {
        self.readings.len() / self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.readings.is_empty()
    }

    /// Readings at 0-based step `t`.
    pub fn row(&self, t: usize) -> &[f64] {
        &self.readings[t * self.channels..(t + 1) * self.channels]
    }

    /// The first `len` steps.
    pub fn prefix(&self, len: usize) -> EngineSeries {
        let len = len.min(self.len());
        EngineSeries {
            engine_id: self.engine_id,
            channels: self.channels,
            readings: self.readings[..len * self.channels].to_vec(),
            op_settings: self.op_settings[..len * OP_SETTINGS].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesSet {
    pub subset: Subset,
    pub role: Role,
    pub series: Vec<EngineSeries>,
    /// True remaining lifetime after the last observed step, one per series (test role).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_rul: Option<Vec<f64>>,
}

impl SeriesSet {
    pub fn new(subset: Subset, role: Role, series: Vec<EngineSeries>) -> Result<Self> {
        let set = Self {
            subset,
            role,
            series,
            test_rul: None,
        };
        set.check_unique_ids()?;
        Ok(set)
    }

    pub fn with_test_rul(mut self, rul: Vec<f64>) -> Result<Self> {
        if rul.len() != self.series.len() {
            return Err(Error::Data(format!(
                "{} true RUL values for {} test engines",
                rul.len(),
                self.series.len()
            )));
        }
        self.test_rul = Some(rul);
        Ok(self)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &self.series {
            if !seen.insert(s.engine_id) {
                return Err(Error::Data(format!("duplicate engine id {}", s.engine_id)));
            }
        }
        Ok(())
    }

    /// Checks role-specific invariants.
    pub fn validate(&self) -> Result<()> {
        self.check_unique_ids()?;
        if self.role == Role::Test {
            match &self.test_rul {
                Some(r) if r.len() == self.series.len() => {}
                _ => return Err(Error::Data("test set requires one true RUL per engine".into())),
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn channels(&self) -> Option<usize> {
        self.series.first().map(|s| s.channels)
    }

    pub fn engine_ids(&self) -> Vec<u32> {
        self.series.iter().map(|s| s.engine_id).collect()
    }

    pub fn total_steps(&self) -> usize {
        self.series.iter().map(EngineSeries::len).sum()
    }
}

/// Parses a CMAPSS train or test file.
pub fn parse_cmapss<R: BufRead>(reader: R, subset: Subset, role: Role) -> Result<SeriesSet> {
    let mut rows: BTreeMap<u32, Vec<(u32, usize, Vec<f64>)>> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != RAW_COLUMNS {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected {RAW_COLUMNS} columns, found {}", fields.len()),
            });
        }
        let parse_int = |s: &str, what: &str| -> Result<u32> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 0.0)
                .map(|v| v as u32)
                .ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: format!("invalid {what} `{s}`"),
                })
        };
        let engine = parse_int(fields[0], "engine id")?;
        let cycle = parse_int(fields[1], "cycle")?;
        let values = fields[2..]
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| Error::Parse {
                    line: line_no,
                    msg: format!("invalid number `{s}`"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.entry(engine).or_default().push((cycle, line_no, values));
    }

    let mut series = Vec::with_capacity(rows.len());
    for (engine, mut steps) in rows {
        steps.sort_by_key(|(cycle, _, _)| *cycle);
        let mut readings = Vec::with_capacity(steps.len() * RAW_SENSORS);
        let mut ops = Vec::with_capacity(steps.len() * OP_SETTINGS);
        for (k, (cycle, line_no, values)) in steps.into_iter().enumerate() {
            if cycle as usize != k + 1 {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("engine {engine}: expected cycle {}, found {cycle}", k + 1),
                });
            }
            ops.extend_from_slice(&values[..OP_SETTINGS]);
            readings.extend_from_slice(&values[OP_SETTINGS..]);
        }
        series.push(EngineSeries::new(engine, RAW_SENSORS, readings, ops)?);
    }
    SeriesSet::new(subset, role, series)
}

/// Parses an `RUL_FDxxx.txt` file.
pub fn parse_rul<R: BufRead>(reader: R) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = line.parse::<f64>().map_err(|_| Error::Parse {
            line: i + 1,
            msg: format!("invalid RUL value `{line}`"),
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Writes a raw (21-sensor) set back in CMAPSS layout.
pub fn write_cmapss(set: &SeriesSet) -> Result<String> {
    let mut out = String::new();
    for s in &set.series {
        if s.channels != RAW_SENSORS {
            return Err(Error::Data(format!("engine {} has {} channels, expected 21", s.engine_id, s.channels)));
        }
        for t in 0..s.len() {
            write!(out, "{} {}", s.engine_id, t + 1).expect("string write");
            for v in &s.op_settings[t * OP_SETTINGS..(t + 1) * OP_SETTINGS] {
                write!(out, " {v}").expect("string write");
            }
            for v in s.row(t) {
                write!(out, " {v}").expect("string write");
            }
            out.push('\n');
        }
    }
    Ok(out)
}

pub fn write_rul(rul: &[f64]) -> String {
    rul.iter().map(|v| format!("{v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(engine: u32, cycle: u32, cols: usize) -> String {
        let mut s = format!("{engine} {cycle}");
        for c in 0..cols - 2 {
            s.push_str(&format!(" {}.5", c + engine as usize));
        }
        s
    }

    #[test]
    fn groups_rows_by_engine() {
        let text: String = [row(1, 1, 26), row(1, 2, 26), row(1, 3, 26), row(2, 1, 26), row(2, 2, 26), row(2, 3, 26)]
            .join("\n");
        let set = parse_cmapss(text.as_bytes(), Subset::FD001, Role::Train).unwrap();
        assert_eq!(set.len(), 2);
        assert!(set.series.iter().all(|s| s.len() == 3 && s.channels == 21));
        assert_eq!(set.series[1].row(0)[0], 5.5);
    }

    #[test]
    fn wrong_column_count_reports_line() {
        let text = [row(1, 1, 26), row(1, 2, 25)].join("\n");
        match parse_cmapss(text.as_bytes(), Subset::FD001, Role::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn gap_in_cycles_is_rejected() {
        let text = [row(1, 1, 26), row(1, 3, 26)].join("\n");
        assert!(matches!(
            parse_cmapss(text.as_bytes(), Subset::FD001, Role::Train),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn subset_table() {
        let w: Vec<usize> = Subset::ALL.iter().map(|s| s.window()).collect();
        assert_eq!(w, vec![30, 20, 30, 15]);
        assert_eq!(Subset::FD001.train_engines(), 100);
        assert_eq!("fd004".parse::<Subset>().unwrap(), Subset::FD004);
    }

    #[test]
    fn test_role_requires_rul() {
        let text = row(1, 1, 26);
        let set = parse_cmapss(text.as_bytes(), Subset::FD001, Role::Test).unwrap();
        assert!(set.validate().is_err());
        assert!(set.with_test_rul(vec![10.0]).unwrap().validate().is_ok());
    }
}
