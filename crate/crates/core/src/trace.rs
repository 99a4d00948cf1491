//! Per-trial trace CSVs and local-state statistics recomputed from them.
//!
//! A trace has one row per time step with columns
//! `t_s,evidence,detected,node0_state,node1_state,...`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::experiment::{LocalStats, TrialRecord};
use crate::output::fmt6;

const FIXED_COLUMNS: [&str; 3] = ["t_s", "evidence", "detected"];

/// A parsed trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub t_s: Vec<f64>,
    pub evidence: Vec<f64>,
    pub detected: Vec<bool>,
    /// `states[k][i]`: node `i` ON at row `k`.
    pub states: Vec<Vec<bool>>,
}

impl Trace {
    pub fn n_nodes(&self) -> usize {
        self.states.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.t_s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_s.is_empty()
    }

    /// Time step recovered from the first two rows.
    pub fn dt_s(&self) -> f64 {
        self.t_s[1] - self.t_s[0]
    }

    /// First row flagged as detected.
    pub fn detection_time_s(&self) -> Option<f64> {
        self.detected.iter().position(|&d| d).map(|k| self.t_s[k])
    }

    /// Builds the trace of a record that kept its state history.
    pub fn from_record(record: &TrialRecord) -> Result<Trace> {
        let states = record
            .states
            .clone()
            .ok_or_else(|| Error::Trace("trial record has no state history".into()))?;
        let t_s: Vec<f64> = (0..record.evidence.len()).map(|k| k as f64 * record.dt_s).collect();
        let detected = t_s
            .iter()
            .map(|&t| record.detection_time_s.is_some_and(|d| t >= d - 1e-9))
            .collect();
        Ok(Trace {
            t_s,
            evidence: record.evidence.clone(),
            detected,
            states,
        })
    }

    pub fn write<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((0..self.n_nodes()).map(|i| format!("node{i}_state")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut row = vec![
                fmt6(self.t_s[k]),
                fmt6(self.evidence[k]),
                flag(self.detected[k]).to_string(),
            ];
            row.extend(self.states[k].iter().map(|&s| flag(s).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::Trace(e.to_string()))?;
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Trace> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers().map_err(trace_err)?.clone();
        if header.len() < FIXED_COLUMNS.len() + 1 {
            return Err(Error::Trace(format!(
                "expected at least {} columns, got {}",
                FIXED_COLUMNS.len() + 1,
                header.len()
            )));
        }
        for (i, want) in FIXED_COLUMNS.iter().enumerate() {
            if &header[i] != *want {
                return Err(Error::Trace(format!("column {i} must be `{want}`, got `{}`", &header[i])));
            }
        }
        let n_nodes = header.len() - FIXED_COLUMNS.len();
        for i in 0..n_nodes {
            let want = format!("node{i}_state");
            let got = &header[FIXED_COLUMNS.len() + i];
            if got != want {
                return Err(Error::Trace(format!("expected column `{want}`, got `{got}`")));
            }
        }

        let mut trace = Trace {
            t_s: Vec::new(),
            evidence: Vec::new(),
            detected: Vec::new(),
            states: Vec::new(),
        };
        for (row_idx, rec) in r.records().enumerate() {
            let rec = rec.map_err(trace_err)?;
            let line = row_idx + 2;
            let t = parse_num(&rec[0], line, "t_s")?;
            if let Some(&prev) = trace.t_s.last() {
                if t <= prev {
                    return Err(Error::Trace(format!("line {line}: t_s is not increasing")));
                }
            }
            let a = parse_num(&rec[1], line, "evidence")?;
            trace.t_s.push(t);
            trace.evidence.push(a);
            trace.detected.push(parse_flag(&rec[2], line, "detected")?);
            let mut states = Vec::with_capacity(n_nodes);
            for i in 0..n_nodes {
                states.push(parse_flag(&rec[FIXED_COLUMNS.len() + i], line, "node state")?);
            }
            trace.states.push(states);
        }
        if trace.len() < 2 {
            return Err(Error::Trace("a trace needs at least two rows".into()));
        }
        Ok(trace)
    }

    pub fn load(path: &Path) -> Result<Trace> {
        let file = fs::File::open(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Trace::read(std::io::BufReader::new(file))
            .map_err(|e| Error::Trace(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let write_err = |source| Error::Write {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(write_err)?;
        }
        let file = fs::File::create(path).map_err(write_err)?;
        self.write(std::io::BufWriter::new(file))
    }

    /// ON/OFF counters of this trace.
    pub fn activity(&self) -> Activity {
        let mut act = Activity {
            node_steps: (self.len() * self.n_nodes()) as u64,
            node_trials: self.n_nodes() as u64,
            ..Activity::default()
        };
        for i in 0..self.n_nodes() {
            let mut prev = false;
            for row in &self.states {
                let on = row[i];
                if on {
                    act.on_steps += 1;
                    if !prev {
                        act.runs += 1;
                    }
                }
                prev = on;
            }
        }
        act
    }
}

/// ON/OFF counters pooled over nodes and traces.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Activity {
    pub node_steps: u64,
    pub node_trials: u64,
    pub on_steps: u64,
    /// Maximal ON runs; a run already ON in the first row counts as one.
    pub runs: u64,
}

impl Activity {
    pub fn merge(&mut self, other: Activity) {
        self.node_steps += other.node_steps;
        self.node_trials += other.node_trials;
        self.on_steps += other.on_steps;
        self.runs += other.runs;
    }

    pub fn stats(&self, dt: f64) -> LocalStats {
        LocalStats::from_counts(self.node_steps, self.on_steps, self.runs, 0, self.node_trials, dt)
    }
}

/// Trace file name for a record: `<group>_trial<index>.csv`.
pub fn trace_file_name(group: &str, trial_index: u32) -> String {
    format!("{group}_trial{trial_index:05}.csv")
}

/// Group a trace file belongs to: its name up to the last `_trial`.
pub fn group_of(file_name: &str) -> Option<&str> {
    let stem = file_name.strip_suffix(".csv")?;
    let at = stem.rfind("_trial")?;
    Some(&stem[..at])
}

/// Local-state statistics of one group of traces.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub group: String,
    pub n_traces: usize,
    pub stats: LocalStats,
}

pub const STATS_HEADER: [&str; 6] = [
    "group",
    "n_traces",
    "on_fraction",
    "rising_per_node",
    "on_duration_mean_s",
    "duration_defined",
];

/// Pools every `*_trial*.csv` file in `dir` by group. Files that do not follow
/// the naming scheme are skipped; malformed traces are errors.
pub fn stats_for_dir(dir: &Path) -> Result<Vec<GroupStats>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Read {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut files: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Read {
            path: dir.to_path_buf(),
            source,
        })?;
        files.push(entry.path());
    }
    files.sort();

    let mut groups: BTreeMap<String, (usize, Activity, f64)> = BTreeMap::new();
    for path in files {
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        let Some(group) = group_of(name) else {
            continue;
        };
        let trace = Trace::load(&path)?;
        let dt = trace.dt_s();
        let slot = groups.entry(group.to_string()).or_insert((0, Activity::default(), dt));
        if (slot.2 - dt).abs() > 1e-9 * dt.abs().max(1.0) {
            return Err(Error::Trace(format!(
                "{}: time step {dt} differs from the rest of group `{group}`",
                path.display()
            )));
        }
        slot.0 += 1;
        slot.1.merge(trace.activity());
    }
    Ok(groups
        .into_iter()
        .map(|(group, (n_traces, act, dt))| GroupStats {
            group,
            n_traces,
            stats: act.stats(dt),
        })
        .collect())
}

pub fn write_stats<W: Write>(groups: &[GroupStats], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(STATS_HEADER)?;
    for g in groups {
        w.write_record([
            g.group.clone(),
            g.n_traces.to_string(),
            fmt6(g.stats.on_fraction),
            fmt6(g.stats.rising_per_node),
            fmt6(g.stats.on_duration_mean_s),
            flag(g.stats.duration_defined).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Other(e.to_string()))?;
    Ok(())
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

fn trace_err(e: csv::Error) -> Error {
    Error::Trace(e.to_string())
}

fn parse_num(s: &str, line: usize, col: &str) -> Result<f64> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::Trace(format!("line {line}: bad {col} value `{s}`"))),
    }
}

fn parse_flag(s: &str, line: usize, col: &str) -> Result<bool> {
    match s.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(Error::Trace(format!("line {line}: {col} must be 0 or 1, got `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace_of(states: &[&[u8]]) -> Trace {
        let n = states[0].len();
        let rows: Vec<Vec<bool>> = (0..n).map(|k| states.iter().map(|s| s[k] == 1).collect()).collect();
        Trace {
            t_s: (0..n).map(|k| k as f64).collect(),
            evidence: vec![0.0; n],
            detected: vec![false; n],
            states: rows,
        }
    }

    #[test]
    fn hand_counted_trace() {
        let stats = trace_of(&[&[0, 1, 1, 0, 1]]).activity().stats(1.0);
        assert_eq!(stats.rising_per_node, 2.0);
        assert!((stats.on_fraction - 0.6).abs() < 1e-15);
        assert!((stats.on_duration_mean_s - 1.5).abs() < 1e-15);
        assert!(stats.duration_defined);
    }

    #[test]
    fn leading_on_counts_as_run() {
        let act = trace_of(&[&[1, 1, 0, 0]]).activity();
        assert_eq!(act.runs, 1);
        assert_eq!(act.on_steps, 2);
    }

    #[test]
    fn all_off_is_flagged() {
        let stats = trace_of(&[&[0, 0, 0], &[0, 0, 0]]).activity().stats(1.0);
        assert_eq!(stats.on_fraction, 0.0);
        assert_eq!(stats.rising_per_node, 0.0);
        assert_eq!(stats.on_duration_mean_s, 0.0);
        assert!(!stats.duration_defined);
    }

    #[test]
    fn write_then_read() {
        let mut t = trace_of(&[&[0, 1, 1], &[1, 0, 0]]);
        t.evidence = vec![0.0, 1.5, 123456.789];
        t.detected = vec![false, false, true];
        let mut buf = Vec::new();
        t.write(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t_s,evidence,detected,node0_state,node1_state\n0,0,0,0,1\n"));
        let back = Trace::read(buf.as_slice()).unwrap();
        assert_eq!(back.states, t.states);
        assert_eq!(back.detected, t.detected);
        assert_eq!(back.evidence[2], 123457.0);
        assert_eq!(back.detection_time_s(), Some(2.0));
    }

    #[test]
    fn malformed_traces() {
        for text in [
            "",
            "t_s,evidence,detected\n0,0,0\n1,0,0\n",
            "t,evidence,detected,node0_state\n0,0,0,0\n1,0,0,0\n",
            "t_s,evidence,detected,node1_state\n0,0,0,0\n1,0,0,0\n",
            "t_s,evidence,detected,node0_state\n0,0,0,2\n1,0,0,0\n",
            "t_s,evidence,detected,node0_state\n0,x,0,0\n1,0,0,0\n",
            "t_s,evidence,detected,node0_state\n1,0,0,0\n1,0,0,0\n",
            "t_s,evidence,detected,node0_state\n0,0,0,0\n",
            "t_s,evidence,detected,node0_state\n0,0,0,0\n1,0,0\n",
        ] {
            assert!(matches!(Trace::read(text.as_bytes()), Err(Error::Trace(_))), "{text:?}");
        }
    }

    #[test]
    fn grouping_by_prefix() {
        assert_eq!(group_of("eir_h1_baseline_trial00003.csv"), Some("eir_h1_baseline"));
        assert_eq!(group_of("tr_h0_t_infer_s=60_trial00000.csv"), Some("tr_h0_t_infer_s=60"));
        assert_eq!(group_of("metrics.csv"), None);
        assert_eq!(group_of("x_trial1.txt"), None);
        assert_eq!(trace_file_name("rr_h1_baseline", 7), "rr_h1_baseline_trial00007.csv");
    }
}
