//! Columnar file format for raw spectra.
//!
//! ```text
//! # haloscan-spectrum v1
//! step_id = 12
//! nu_start_hz = 4101020000.0
//! ...
//! ---
//! 0.2692144
//! 0.2687711
//! ```
//!
//! The body is either one value per line, written with Rust's shortest
//! round-trip float formatting, or packed little-endian `f64` records
//! (`encoding = f64le`). Both read back bit-identical.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::campaign::{RawSpectrum, SpectrumMeta};
use crate::error::{Error, Result};

pub const MAGIC: &str = "# haloscan-spectrum v1";
const SEPARATOR: &str = "---";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Encoding {
    #[default]
    Text,
    F64le,
}

impl Encoding {
    fn tag(self) -> &'static str {
        match self {
            Encoding::Text => "text",
            Encoding::F64le => "f64le",
        }
    }
}

/// Config hash and seed stamped into every artifact.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

pub fn write_spectrum<W: Write>(
    out: W,
    s: &RawSpectrum,
    prov: Option<&Provenance>,
    encoding: Encoding,
) -> std::io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "encoding = {}", encoding.tag())?;
    writeln!(w, "step_id = {}", s.step_id)?;
    writeln!(w, "nu_start_hz = {:?}", s.nu_start)?;
    writeln!(w, "bin_width_hz = {:?}", s.bin_width)?;
    writeln!(w, "n_averages = {}", s.n_averages)?;
    writeln!(w, "n_bins = {}", s.psd.len())?;
    let m = &s.meta;
    writeln!(w, "label = {}", m.label)?;
    writeln!(w, "nu_c_hz = {:?}", m.nu_c)?;
    writeln!(w, "beta = {:?}", m.beta)?;
    writeln!(w, "kappa_l_hz = {:?}", m.kappa_l)?;
    writeln!(w, "q_loaded = {:?}", m.q_loaded)?;
    writeln!(w, "drift_hz = {:?}", m.drift_hz)?;
    writeln!(w, "squeezing_db = {:?}", m.squeezing_db)?;
    writeln!(w, "probe_tone_db = {:?}", m.probe_tone_db)?;
    writeln!(w, "t_start_s = {:?}", m.t_start_s)?;
    if let Some(t) = m.load_temperature_k {
        writeln!(w, "load_temperature_k = {t:?}")?;
    }
    if let Some(p) = prov {
        writeln!(w, "config_hash = {}", p.config_hash)?;
        writeln!(w, "seed = {}", p.seed)?;
    }
    writeln!(w, "{SEPARATOR}")?;
    match encoding {
        Encoding::Text => {
            for v in &s.psd {
                writeln!(w, "{v:?}")?;
            }
        }
        Encoding::F64le => {
            for v in &s.psd {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    w.flush()
}

pub fn save_spectrum(path: &Path, s: &RawSpectrum, prov: Option<&Provenance>, encoding: Encoding) -> Result<()> {
    let f = fs::File::create(path)?;
    write_spectrum(f, s, prov, encoding)?;
    Ok(())
}

fn format_err(path: &str, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_string(),
        reason: reason.into(),
    }
}

/// Parses a spectrum; `name` labels errors.
pub fn read_spectrum<R: BufRead>(mut input: R, name: &str) -> Result<(RawSpectrum, Option<Provenance>)> {
    let mut first = String::new();
    input.read_line(&mut first)?;
    if first.trim() != MAGIC {
        return Err(format_err(name, format!("unrecognized header {first:?}")));
    }
    let mut header = BTreeMap::new();
    let mut closed = false;
    loop {
        let mut raw = String::new();
        if input.read_line(&mut raw)? == 0 {
            break;
        }
        let line = raw.trim();
        if line == SEPARATOR {
            closed = true;
            break;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format_err(name, format!("malformed header line {line:?}")))?;
        header.insert(k.trim().to_string(), v.trim().to_string());
    }
    let get = |k: &str| {
        header
            .get(k)
            .ok_or_else(|| format_err(name, format!("missing header key {k}")))
    };
    fn num<T: std::str::FromStr>(name: &str, k: &str, v: &str) -> Result<T> {
        v.parse()
            .map_err(|_| format_err(name, format!("bad value for {k}: {v:?}")))
    }
    let f = |k: &str| -> Result<f64> { num(name, k, get(k)?) };
    if !closed {
        return Err(format_err(name, "header is not terminated"));
    }
    let n_bins: usize = num(name, "n_bins", get("n_bins")?)?;
    let mut psd = Vec::with_capacity(n_bins);
    match get("encoding")?.as_str() {
        "text" => {
            for line in input.lines() {
                let line = line?;
                let t = line.trim();
                if !t.is_empty() {
                    psd.push(num::<f64>(name, "psd", t)?);
                }
            }
        }
        "f64le" => {
            let mut body = Vec::with_capacity(8 * n_bins);
            input.read_to_end(&mut body)?;
            if body.len() % 8 != 0 {
                return Err(format_err(name, "binary body is not a whole number of records"));
            }
            psd.extend(
                body.chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))),
            );
        }
        other => return Err(format_err(name, format!("unknown encoding {other:?}"))),
    }
    if psd.len() != n_bins {
        return Err(format_err(name, format!("expected {n_bins} bins, found {}", psd.len())));
    }
    let load_temperature_k = match header.get("load_temperature_k") {
        Some(v) => Some(num(name, "load_temperature_k", v)?),
        None => None,
    };
    let spectrum = RawSpectrum {
        step_id: num(name, "step_id", get("step_id")?)?,
        nu_start: f("nu_start_hz")?,
        bin_width: f("bin_width_hz")?,
        n_averages: num(name, "n_averages", get("n_averages")?)?,
        psd,
        meta: SpectrumMeta {
            label: get("label")?.clone(),
            nu_c: f("nu_c_hz")?,
            beta: f("beta")?,
            kappa_l: f("kappa_l_hz")?,
            q_loaded: f("q_loaded")?,
            drift_hz: f("drift_hz")?,
            squeezing_db: f("squeezing_db")?,
            probe_tone_db: f("probe_tone_db")?,
            t_start_s: f("t_start_s")?,
            load_temperature_k,
        },
    };
    let prov = match (header.get("config_hash"), header.get("seed")) {
        (Some(h), Some(s)) => Some(Provenance {
            config_hash: h.clone(),
            seed: num(name, "seed", s)?,
        }),
        _ => None,
    };
    Ok((spectrum, prov))
}

pub fn load_spectrum(path: &Path) -> Result<(RawSpectrum, Option<Provenance>)> {
    let f = fs::File::open(path)?;
    read_spectrum(BufReader::new(f), &path.display().to_string())
}
