//! On-disk artifacts and the stage commands built on them.
//!
//! Layout of an output directory:
//!
//! ```text
//! config.toml                  resolved configuration
//! spectra/step_NNNNN.spec      raw spectra (simulate)
//! calibration_sets/step_NNNNN/ meas1, meas2, meas3, hot, cold + set.json
//! calibration.json             calibration results (calibrate)
//! cut_log.json                 cut decisions (process)
//! step_noise.csv               step_id, nu_c_hz, sigma, sigma_radiometer
//! grand_spectrum.csv           nu_hz, x, eta_sens, n_contrib
//! rescan_list.json             candidates above threshold
//! rescans/rescan_NNNNN.spec    rescan spectra
//! rescan_grand_spectrum.csv
//! rescan_measurements.csv      nu_hz, x, eta_sens of rescanned initial bins
//! exclusion.json               g_star, aggregate curve, windows
//! exclusion_curve.csv          g, U
//! exclusion_windows.csv        window_lo_hz, window_hi_hz, g_10pct
//! exclusion_surface.csv        windows x couplings
//! budget_reference.csv         β = 2, no squeezing
//! budget_operating.csv         configured operating point
//! enhancement.json
//! run_info.json                timings (the only non-reproducible file)
//! PARTIAL                      present while a command runs or after it failed
//! ```
//!
//! JSON files carry a `provenance` object and CSV files a leading
//! `# config_hash=… seed=…` comment.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::calibration::CalibrationResult;
use crate::campaign::{CalibrationSet, RawSpectrum};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::inference::{Measurements, RescanMeasurement};
use crate::runner::{budgets, calibrate_all, exclude, process, report_enhancement, simulate, Campaign, SimulatedData};
use crate::spectrum_io::{load_spectrum, save_spectrum, Encoding, Provenance};

pub struct Artifacts {
    dir: PathBuf,
    prov: Provenance,
    encoding: Encoding,
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>, config: &Config) -> Self {
        Artifacts {
            dir: dir.into(),
            prov: Provenance {
                config_hash: config.hash(),
                seed: config.campaign.seed,
            },
            encoding: config.output.spectrum_encoding,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn provenance(&self) -> &Provenance {
        &self.prov
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn ensure_dir(&self, sub: &str) -> Result<PathBuf> {
        let p = self.dir.join(sub);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn stamp(&self) -> Value {
        json!({ "config_hash": self.prov.config_hash, "seed": self.prov.seed })
    }

    /// Objects get a `provenance` key; anything else is wrapped under `key`.
    pub fn write_json<T: Serialize>(&self, name: &str, key: &str, value: &T) -> Result<()> {
        let mut obj = match serde_json::to_value(value)? {
            Value::Object(m) => m,
            other => {
                let mut m = Map::new();
                m.insert(key.to_string(), other);
                m
            }
        };
        obj.insert("provenance".into(), self.stamp());
        self.ensure_dir("")?;
        let mut text = serde_json::to_string_pretty(&Value::Object(obj))?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str, key: &str) -> Result<T> {
        let path = self.path(name);
        let mut v: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
        let Some(obj) = v.as_object_mut() else {
            return Err(format_err(&path, "expected a JSON object"));
        };
        if let Some(p) = obj.remove("provenance") {
            self.check_provenance(&path, p.get("config_hash").and_then(Value::as_str));
        }
        let body = match obj.remove(key) {
            Some(inner) if obj.is_empty() => inner,
            Some(inner) => {
                obj.insert(key.to_string(), inner);
                v
            }
            None => v,
        };
        Ok(serde_json::from_value(body)?)
    }

    fn check_provenance(&self, path: &Path, hash: Option<&str>) {
        if hash != Some(self.prov.config_hash.as_str()) {
            warn!("{} was produced by a different configuration", path.display());
        }
    }

    pub fn write_csv(&self, name: &str, body: &str) -> Result<()> {
        self.ensure_dir("")?;
        let mut f = fs::File::create(self.path(name))?;
        writeln!(f, "# config_hash={} seed={}", self.prov.config_hash, self.prov.seed)?;
        f.write_all(body.as_bytes())?;
        Ok(())
    }

    /// Data rows of a CSV artifact, split on commas, header skipped.
    fn read_csv(&self, name: &str) -> Result<Vec<Vec<String>>> {
        let path = self.path(name);
        let f = BufReader::new(fs::File::open(&path)?);
        let mut rows = Vec::new();
        let mut header = false;
        for line in f.lines() {
            let line = line?;
            if let Some(c) = line.strip_prefix("# config_hash=") {
                self.check_provenance(&path, c.split_whitespace().next());
                continue;
            }
            if !header {
                header = true;
                continue;
            }
            rows.push(line.split(',').map(str::to_string).collect());
        }
        Ok(rows)
    }

    fn spectrum_files(&self, sub: &str) -> Result<Vec<PathBuf>> {
        let dir = self.path(sub);
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "spec"));
        files.sort();
        Ok(files)
    }

    pub fn save_spectra(&self, sub: &str, prefix: &str, spectra: &[RawSpectrum]) -> Result<()> {
        let dir = self.ensure_dir(sub)?;
        for s in spectra {
            let p = dir.join(format!("{prefix}_{:05}.spec", s.step_id));
            save_spectrum(&p, s, Some(&self.prov), self.encoding)?;
        }
        Ok(())
    }

    pub fn load_spectra(&self, sub: &str) -> Result<Vec<RawSpectrum>> {
        let files = self.spectrum_files(sub)?;
        let mut out = Vec::with_capacity(files.len());
        for f in files {
            let (s, prov) = load_spectrum(&f)?;
            self.check_provenance(&f, prov.as_ref().map(|p| p.config_hash.as_str()));
            out.push(s);
        }
        Ok(out)
    }

    pub fn save_calibration_sets(&self, sets: &[CalibrationSet]) -> Result<()> {
        for set in sets {
            let sub = format!("calibration_sets/step_{:05}", set.step_id);
            let dir = self.ensure_dir(&sub)?;
            for (name, s) in [
                ("meas1", &set.meas1),
                ("meas2", &set.meas2),
                ("meas3", &set.meas3),
                ("hot", &set.hot),
                ("cold", &set.cold),
            ] {
                save_spectrum(&dir.join(format!("{name}.spec")), s, Some(&self.prov), self.encoding)?;
            }
            let info = SetInfo {
                step_id: set.step_id,
                t_hot: set.t_hot,
                t_cold: set.t_cold,
                meas1_offset_hz: set.meas1_offset_hz,
            };
            self.write_json(&format!("{sub}/set.json"), "set", &info)?;
        }
        Ok(())
    }

    pub fn load_calibration_sets(&self) -> Result<Vec<CalibrationSet>> {
        let root = self.path("calibration_sets");
        let mut dirs: Vec<PathBuf> = fs::read_dir(&root)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        dirs.retain(|p| p.is_dir());
        dirs.sort();
        dirs.iter()
            .map(|d| {
                let rel = d.strip_prefix(&self.dir).unwrap_or(d);
                let info: SetInfo = self.read_json(&format!("{}/set.json", rel.display()), "set")?;
                let load = |name: &str| load_spectrum(&d.join(format!("{name}.spec"))).map(|r| r.0);
                Ok(CalibrationSet {
                    step_id: info.step_id,
                    meas1: load("meas1")?,
                    meas2: load("meas2")?,
                    meas3: load("meas3")?,
                    hot: load("hot")?,
                    cold: load("cold")?,
                    t_hot: info.t_hot,
                    t_cold: info.t_cold,
                    meas1_offset_hz: info.meas1_offset_hz,
                })
            })
            .collect()
    }

    /// Initial valid bins from `grand_spectrum.csv` plus the rescans.
    pub fn load_measurements(&self) -> Result<Measurements> {
        let mut m = Measurements::default();
        for row in self.read_csv("grand_spectrum.csv")? {
            let [nu, x, eta, ..] = parse_row(&self.path("grand_spectrum.csv"), &row, 3)?[..] else {
                unreachable!()
            };
            if x.is_finite() {
                m.nu_hz.push(nu);
                m.x.push(x);
                m.eta.push(eta);
            }
        }
        let rescan_path = self.path("rescan_measurements.csv");
        if rescan_path.exists() {
            for row in self.read_csv("rescan_measurements.csv")? {
                let [nu, x, eta] = parse_row(&rescan_path, &row, 3)?[..] else {
                    unreachable!()
                };
                let bin = m
                    .nearest(nu)
                    .filter(|&b| m.nu_hz[b] == nu)
                    .ok_or_else(|| format_err(&rescan_path, format!("no initial bin at {nu} Hz")))?;
                m.rescans.push(RescanMeasurement { bin, x, eta });
            }
        }
        Ok(m)
    }
}

fn parse_row(path: &Path, row: &[String], min: usize) -> Result<Vec<f64>> {
    if row.len() < min {
        return Err(format_err(
            path,
            format!("row has {} columns, expected {min}", row.len()),
        ));
    }
    row.iter()
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format_err(path, format!("bad number {v:?}")))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SetInfo {
    step_id: usize,
    t_hot: f64,
    t_cold: f64,
    meas1_offset_hz: f64,
}

fn measurements_csv(m: &Measurements) -> String {
    let mut s = String::from("nu_hz,x,eta_sens\n");
    for r in &m.rescans {
        s.push_str(&format!("{:?},{:?},{:?}\n", m.nu_hz[r.bin], r.x, r.eta));
    }
    s
}

/// Steps of the data chain, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Simulate,
    Calibrate,
    Process,
    Exclude,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Calibrate, Stage::Process, Stage::Exclude];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Calibrate => "calibrate",
            Stage::Process => "process",
            Stage::Exclude => "exclude",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Chain(Stage),
    /// Data chain up to and including the given stage.
    All(Stage),
    Budget,
    Enhancement,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Chain(s) => s.name(),
            Command::All(_) => "all",
            Command::Budget => "budget",
            Command::Enhancement => "enhancement",
        }
    }
}

pub fn stage_simulate(c: &Campaign, a: &Artifacts) -> Result<SimulatedData> {
    let data = simulate(c)?;
    a.save_spectra("spectra", "step", &data.spectra)?;
    a.save_calibration_sets(&data.calibrations)?;
    Ok(data)
}

pub fn stage_calibrate(
    c: &Campaign,
    a: &Artifacts,
    sets: Option<Vec<CalibrationSet>>,
) -> Result<Vec<CalibrationResult>> {
    let sets = match sets {
        Some(s) => s,
        None => a.load_calibration_sets()?,
    };
    let results = calibrate_all(&c.config, &sets)?;
    a.write_json("calibration.json", "calibrations", &results)?;
    Ok(results)
}

pub fn stage_process(
    c: &Campaign,
    a: &Artifacts,
    spectra: Option<Vec<RawSpectrum>>,
    cals: Option<Vec<CalibrationResult>>,
) -> Result<Measurements> {
    let spectra = match spectra {
        Some(s) => s,
        None => a.load_spectra("spectra")?,
    };
    let cals = match cals {
        Some(c) => c,
        None => a.read_json("calibration.json", "calibrations")?,
    };
    let p = process(c, spectra, &cals)?;
    a.write_json("cut_log.json", "cut_log", &p.scan.cut_log)?;
    let mut noise = String::from("step_id,nu_c_hz,sigma,sigma_radiometer\n");
    for n in &p.scan.noise {
        noise.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            n.step_id, n.nu_c, n.sigma, n.sigma_radiometer
        ));
    }
    a.write_csv("step_noise.csv", &noise)?;
    a.write_csv("grand_spectrum.csv", &p.scan.grand.to_csv())?;
    a.write_json("rescan_list.json", "rescans", &p.rescans)?;
    if let Some(r) = &p.rescan_scan {
        a.write_csv("rescan_grand_spectrum.csv", &r.grand.to_csv())?;
        a.write_json("rescan_cut_log.json", "cut_log", &r.cut_log)?;
    }
    a.write_csv("rescan_measurements.csv", &measurements_csv(&p.measurements))?;
    if !p.rescan_spectra.is_empty() {
        a.save_spectra("rescans", "rescan", &p.rescan_spectra)?;
    }
    Ok(p.measurements)
}

pub fn stage_exclude(c: &Campaign, a: &Artifacts, meas: Option<Measurements>) -> Result<()> {
    let meas = match meas {
        Some(m) => m,
        None => a.load_measurements()?,
    };
    let r = exclude(&c.config, &meas)?;
    match r.g_star {
        Some(g) => info!("10% aggregate update at g = {g:.4}"),
        None => warn!("aggregate update never falls to the target on the coupling grid"),
    }
    a.write_json("exclusion.json", "exclusion", &r)?;
    a.write_csv("exclusion_curve.csv", &r.curve_csv())?;
    a.write_csv("exclusion_windows.csv", &r.windows_csv())?;
    a.write_csv("exclusion_surface.csv", &r.surface_csv())?;
    Ok(())
}

pub fn stage_budget(c: &Campaign, a: &Artifacts) -> Result<()> {
    let b = budgets(c)?;
    a.write_csv("budget_reference.csv", &b.reference.to_csv())?;
    a.write_csv("budget_operating.csv", &b.operating.to_csv())?;
    Ok(())
}

pub fn stage_enhancement(c: &Campaign, a: &Artifacts) -> Result<()> {
    let r = report_enhancement(&c.config)?;
    info!("scan-rate enhancement {:.3}", r.ratio);
    a.write_json("enhancement.json", "enhancement", &r)?;
    Ok(())
}

/// A failed command: the error and the stage it came from.
#[derive(Debug)]
pub struct Failure {
    pub stage: &'static str,
    pub error: Error,
}

impl Failure {
    pub fn to_json(&self) -> Value {
        json!({
            "error": {
                "kind": self.error.kind(),
                "exit_code": self.error.exit_code(),
                "stage": self.stage,
                "message": self.error.to_string(),
            }
        })
    }
}

struct Marker {
    path: PathBuf,
    command: &'static str,
    completed: Vec<&'static str>,
}

impl Marker {
    fn write(&self, failure: Option<&Failure>) -> std::io::Result<()> {
        let mut v = json!({ "command": self.command, "completed_stages": self.completed });
        if let Some(f) = failure {
            v["failure"] = f.to_json()["error"].clone();
        }
        fs::write(&self.path, format!("{v:#}\n"))
    }
}

/// Runs a command against `a`, keeping a `PARTIAL` marker until it
/// succeeds.
pub fn run(config: Config, command: Command, a: &Artifacts) -> std::result::Result<(), Failure> {
    let fail = |stage: &'static str| move |error: Error| Failure { stage, error };
    let c = Campaign::new(config).map_err(fail("config"))?;
    fs::create_dir_all(a.dir()).map_err(|e| fail("output")(e.into()))?;
    let mut marker = Marker {
        path: a.path("PARTIAL"),
        command: command.name(),
        completed: Vec::new(),
    };
    marker.write(None).map_err(|e| fail("output")(e.into()))?;
    fs::write(a.path("config.toml"), c.config.to_toml()).map_err(|e| fail("output")(e.into()))?;

    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut timings = Map::new();
    let result = (|| -> std::result::Result<(), Failure> {
        let mut step = |name: &'static str, f: &mut dyn FnMut() -> Result<()>| {
            let t = Instant::now();
            info!("stage {name}");
            match f() {
                Ok(()) => {
                    marker.completed.push(name);
                    let _ = marker.write(None);
                    timings.insert(name.into(), json!(t.elapsed().as_secs_f64()));
                    Ok(())
                }
                Err(error) => {
                    let f = Failure { stage: name, error };
                    let _ = marker.write(Some(&f));
                    Err(f)
                }
            }
        };
        match command {
            Command::Budget => step("budget", &mut || stage_budget(&c, a)),
            Command::Enhancement => step("enhancement", &mut || stage_enhancement(&c, a)),
            Command::Chain(Stage::Simulate) => step("simulate", &mut || stage_simulate(&c, a).map(|_| ())),
            Command::Chain(Stage::Calibrate) => step("calibrate", &mut || stage_calibrate(&c, a, None).map(|_| ())),
            Command::Chain(Stage::Process) => step("process", &mut || stage_process(&c, a, None, None).map(|_| ())),
            Command::Chain(Stage::Exclude) => step("exclude", &mut || stage_exclude(&c, a, None)),
            Command::All(last) => {
                let mut data = None;
                let mut cals = None;
                let mut meas = None;
                for s in Stage::ALL.into_iter().filter(|s| *s <= last) {
                    match s {
                        Stage::Simulate => step("simulate", &mut || {
                            data = Some(stage_simulate(&c, a)?);
                            Ok(())
                        })?,
                        Stage::Calibrate => step("calibrate", &mut || {
                            let sets = data.as_mut().map(|d| std::mem::take(&mut d.calibrations));
                            cals = Some(stage_calibrate(&c, a, sets)?);
                            Ok(())
                        })?,
                        Stage::Process => step("process", &mut || {
                            let spectra = data.take().map(|d| d.spectra);
                            meas = Some(stage_process(&c, a, spectra, cals.clone())?);
                            Ok(())
                        })?,
                        Stage::Exclude => step("exclude", &mut || stage_exclude(&c, a, meas.take()))?,
                    }
                }
                if last < Stage::Exclude {
                    for s in Stage::ALL.into_iter().filter(|s| *s > last) {
                        info!("skipping stage {} (--stage {})", s.name(), last.name());
                    }
                }
                Ok(())
            }
        }
    })();
    result?;
    let info = json!({ "command": command.name(), "started_unix_s": started, "stage_seconds": timings });
    fs::write(a.path("run_info.json"), format!("{info:#}\n")).map_err(|e| fail("output")(e.into()))?;
    fs::remove_file(a.path("PARTIAL")).map_err(|e| fail("output")(e.into()))?;
    Ok(())
}
