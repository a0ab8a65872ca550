//! CSV tables and run manifests. Floats are written with 17 significant
//! digits; files are collected in memory and written only once a run has
//! fully succeeded, so a failing run leaves nothing behind.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::cavity::ReadoutTrace;
use crate::config::RunConfig;
use crate::device::ShiftRow;
use crate::experiments::{ExperimentResult, Payload};
use crate::pulse::EnvelopeSample;
use crate::state::DensityMatrix3;

/// Float with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A CSV table under construction.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(header).expect("in-memory write");
        Self { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("in-memory write");
    }

    pub fn finish(self) -> String {
        String::from_utf8(self.writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
    }
}

/// Output files of one run, keyed by file name.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Bundle {
    pub files: Vec<(String, String)>,
}

impl Bundle {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Creates `dir` and writes every file; returns the written paths.
    pub fn write(&self, dir: &Path) -> io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut out = Vec::with_capacity(self.files.len());
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents)?;
            out.push(path);
        }
        Ok(out)
    }
}

/// Resolved configuration of a run; feeding it back through `--config`
/// repeats the run.
pub fn manifest(command: &str, cfg: &RunConfig) -> String {
    format!(
        "# qutrit {} {command}\n# rerun: qutrit {command} --config <this file>\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_toml()
    )
}

pub fn spectrum_csv(rows: &[ShiftRow]) -> String {
    let mut t = Table::new(&["omega01_MHz", "s0_MHz", "s1_MHz", "s2_MHz"]);
    for r in rows {
        t.row([num(r.omega_01), num(r.s[0]), num(r.s[1]), num(r.s[2])]);
    }
    t.finish()
}

/// Long format, one block per trace: level, time_ns, I, Q, p0, p1, p2.
pub fn traces_csv(label: &str, keys: &[String], traces: &[ReadoutTrace]) -> String {
    let mut t = Table::new(&[label, "time_ns", "I", "Q", "p0", "p1", "p2"]);
    for (key, tr) in keys.iter().zip(traces) {
        for k in 0..tr.len() {
            let p = tr.populations[k];
            t.row([
                key.clone(),
                num(tr.times[k]),
                num(tr.i_quad[k]),
                num(tr.q_quad[k]),
                num(p[0]),
                num(p[1]),
                num(p[2]),
            ]);
        }
    }
    t.finish()
}

pub fn quadrature_map_csv(label: &str, sweep: &[f64], times: &[f64], q: &[Vec<f64>]) -> String {
    let mut t = Table::new(&[label, "time_ns", "Q"]);
    for (s, row) in sweep.iter().zip(q) {
        for (time, v) in times.iter().zip(row) {
            t.row([num(*s), num(*time), num(*v)]);
        }
    }
    t.finish()
}

pub fn populations_csv(label: &str, sweep: &[f64], pops: &[[f64; 3]]) -> String {
    let mut t = Table::new(&[label, "p0", "p1", "p2"]);
    for (s, p) in sweep.iter().zip(pops) {
        t.row([num(*s), num(p[0]), num(p[1]), num(p[2])]);
    }
    t.finish()
}

/// Rows of ρ as paired real and imaginary columns.
pub fn density_matrix_csv(rho: &DensityMatrix3) -> String {
    let mut t = Table::new(&["row", "re0", "im0", "re1", "im1", "re2", "im2"]);
    for i in 0..3 {
        let m = rho.matrix();
        t.row([
            i.to_string(),
            num(m[(i, 0)].re),
            num(m[(i, 0)].im),
            num(m[(i, 1)].re),
            num(m[(i, 1)].im),
            num(m[(i, 2)].re),
            num(m[(i, 2)].im),
        ]);
    }
    t.finish()
}

/// Several labelled density matrices in one table.
pub fn states_csv(labels: &[String], states: &[DensityMatrix3]) -> String {
    let mut t = Table::new(&["target", "row", "re0", "im0", "re1", "im1", "re2", "im2"]);
    for (label, rho) in labels.iter().zip(states) {
        let m = rho.matrix();
        for i in 0..3 {
            let mut fields = vec![label.clone(), i.to_string()];
            for j in 0..3 {
                fields.push(num(m[(i, j)].re));
                fields.push(num(m[(i, j)].im));
            }
            t.row(fields);
        }
    }
    t.finish()
}

pub fn fit_csv(res: &ExperimentResult) -> String {
    let mut t = Table::new(&["name", "value", "error"]);
    for p in &res.fit_params {
        t.row([p.name.clone(), num(p.value), num(p.error)]);
    }
    t.finish()
}

pub fn envelope_csv(samples: &[EnvelopeSample]) -> String {
    let mut t = Table::new(&["time_ns", "omega_x_MHz", "omega_y_MHz"]);
    for s in samples {
        t.row([num(s.time), num(s.omega.re), num(s.omega.im)]);
    }
    t.finish()
}

/// The payload of an experiment as its natural table.
pub fn payload_csv(res: &ExperimentResult) -> String {
    let label = res.sweep_axis.label.as_str();
    let sweep = &res.sweep_axis.values;
    match &res.payload {
        Payload::Traces(traces) => {
            let keys: Vec<String> = if res.point_labels.is_empty() {
                sweep.iter().map(|v| v.to_string()).collect()
            } else {
                res.point_labels.clone()
            };
            traces_csv(label, &keys, traces)
        }
        Payload::QuadratureMap { times, q } => quadrature_map_csv(label, sweep, times, q),
        Payload::Populations(p) => populations_csv(label, sweep, p),
        Payload::States(states) => {
            let keys: Vec<String> = if res.point_labels.is_empty() {
                sweep.iter().map(|v| v.to_string()).collect()
            } else {
                res.point_labels.clone()
            };
            states_csv(&keys, states)
        }
    }
}
