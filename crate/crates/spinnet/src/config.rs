//! Configuration ingestion: TOML parsing, named presets, and command-line
//! overrides.
//!
//! A configuration file is a TOML document mapping directly onto
//! [`ScenarioConfig`]; `scenario` and `seed` are required, everything else
//! has defaults. Unknown keys are errors (they are almost always typos).
//! Presets carry fixed seeds so their outputs are exactly reproducible.

use crate::error::{Error, Result};
use crate::harness::{Scenario, ScenarioConfig};

/// Parse and fully validate a TOML configuration document.
///
/// Parse errors carry the line and column; unknown keys are named.
pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Serialize a configuration back to TOML. Round-trips through
/// [`parse_config`] to an equal value.
pub fn serialize_config(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Parse(format!("cannot serialize config: {e}")))
}

/// Apply `key.path=value` overrides on top of a configuration and
/// re-validate. Values are parsed as TOML; bare words fall back to strings,
/// so `scenario=ramsey-clock` works without quoting.
pub fn apply_overrides(cfg: &ScenarioConfig, overrides: &[String]) -> Result<ScenarioConfig> {
    if overrides.is_empty() {
        return Ok(cfg.clone());
    }
    let text = serialize_config(cfg)?;
    let mut table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    for entry in overrides {
        let (path, value_text) = entry.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("override '{entry}' must look like key.path=value"))
        })?;
        let segments: Vec<&str> = path.trim().split('.').map(str::trim).collect();
        if segments.iter().any(|s| s.is_empty()) {
            return Err(Error::InvalidConfig(format!(
                "override '{entry}' has an empty path segment"
            )));
        }
        let value = parse_override_value(value_text.trim())?;
        let mut node = &mut table;
        for seg in &segments[..segments.len() - 1] {
            node = node
                .entry(seg.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                .as_table_mut()
                .ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "override path '{}' crosses the non-table key '{seg}'",
                        path.trim()
                    ))
                })?;
        }
        node.insert(segments[segments.len() - 1].to_string(), value);
    }
    let merged: ScenarioConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
    merged.validate()?;
    Ok(merged)
}

fn parse_override_value(text: &str) -> Result<toml::Value> {
    if text.is_empty() {
        return Err(Error::InvalidConfig("override value is empty".into()));
    }
    let doc = format!("v = {text}");
    if let Ok(table) = doc.parse::<toml::Table>() {
        return Ok(table["v"].clone());
    }
    let quoted = format!("v = {:?}", text);
    let table: toml::Table = quoted
        .parse()
        .map_err(|e: toml::de::Error| Error::Parse(format!("override value '{text}': {e}")))?;
    Ok(table["v"].clone())
}

/// The named presets, each with a one-line description.
pub fn list_presets() -> &'static [(&'static str, &'static str)] {
    &[
        (
            "fig2a",
            "spin-echo readout-phase scan: opposite single-mode slopes vs the entangled pair",
        ),
        (
            "fig2b",
            "two-mode Ramsey clock: outcome histograms for entangled, separable, single-mode, and coherent operation",
        ),
        (
            "fig2c",
            "entangled gradiometer response to a coil-current sweep, with a no-pulses reference",
        ),
        (
            "fig3",
            "clock network sensitivity vs mode count (1, 2, 4) for entangled, separable, and coherent operation",
        ),
        (
            "fig4",
            "entangled momentum-space interferometer vs coherent reference, with stability curve",
        ),
        (
            "contrast",
            "analytic interferometer contrast vs mode-separation time",
        ),
    ]
}

/// Probe and readout settings of the clock apparatus: a dispersive probe
/// resolving 30.736 spins, a destructive readout of the same resolution,
/// and a per-pulse oscillator phase error sized so the three-pulse echo's
/// technical budget totals 3.6 mrad.
fn clock_noise(cfg: &mut ScenarioConfig) {
    cfg.qnd.resolution_std = 30.736;
    cfg.readout_std = 30.736;
    cfg.lo_noise_std = 3.6e-3 / 6f64.sqrt();
}

/// Build a named preset. Seeds are fixed per preset so published outputs
/// reproduce bit-for-bit.
pub fn preset(name: &str) -> Result<ScenarioConfig> {
    let cfg = match name {
        "fig2a" => {
            let mut cfg = ScenarioConfig::new(Scenario::PhaseScan, 2201);
            cfg.atoms_per_mode = 40_000.0;
            cfg.timings.t_int = 110e-6;
            cfg.sweep = (0..11).map(|i| -0.01 + 0.002 * i as f64).collect();
            clock_noise(&mut cfg);
            cfg
        }
        "fig2b" => {
            let mut cfg = ScenarioConfig::new(Scenario::RamseyClock, 2202);
            cfg.timings.t_int = 100e-6;
            clock_noise(&mut cfg);
            cfg
        }
        "fig2c" => {
            let mut cfg = ScenarioConfig::new(Scenario::GradientScan, 2203);
            cfg.timings.t_int = 110e-6;
            clock_noise(&mut cfg);
            cfg
        }
        "fig3" => {
            let mut cfg = ScenarioConfig::new(Scenario::NetworkScaling, 2301);
            cfg.timings.t_int = 100e-6;
            clock_noise(&mut cfg);
            // The mode-count scaling is read with the oscillator noise off;
            // technical dephasing is reported separately.
            cfg.lo_noise_std = 0.0;
            cfg
        }
        "fig4" => {
            let mut cfg = ScenarioConfig::new(Scenario::Interferometer, 2401);
            cfg.atoms_per_mode = 110_000.0;
            // Four optical π pulses and one fluorescence detection, each
            // costing contrast, on top of the prepared-state contrast.
            cfg.contrast = 0.88f64.powi(4) * 0.79;
            cfg.timings.t_int = 50e-6;
            cfg.qnd.resolution_std = 161.1;
            cfg.readout_std = 198.13;
            cfg.raman_phase_std = 10e-3;
            cfg
        }
        "contrast" => {
            let mut cfg = ScenarioConfig::new(Scenario::ContrastCurve, 2501);
            cfg.contrast = 0.73;
            cfg.coherence_time_constant = 0.46e-6;
            cfg.ensemble_temperature = 25e-6;
            cfg
        }
        other => {
            let names: Vec<&str> = list_presets().iter().map(|(n, _)| *n).collect();
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}'; available: {}",
                names.join(", ")
            )));
        }
    };
    cfg.validate()?;
    Ok(cfg)
}
