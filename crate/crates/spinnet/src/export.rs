//! Report export: trial tables, summary text, figure data files, and a
//! run manifest.
//!
//! All numeric text uses Rust's shortest round-trip decimal formatting, so
//! parsing a value back yields the exact bits that were written; re-running
//! the same configuration therefore reproduces every file byte for byte.
//! No timestamps or machine identifiers are written.

use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::serialize_config;
use crate::error::{Error, Result};
use crate::harness::{ReportRow, RunReport, Scenario, SeriesKind};

/// Paths and identity of one exported run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputBundle {
    /// Directory everything was written into.
    pub root: PathBuf,
    pub config_path: PathBuf,
    pub manifest_path: PathBuf,
    pub summary_path: PathBuf,
    /// One trial table per report row, in row order.
    pub trial_tables: Vec<PathBuf>,
    /// Figure data files, scenario-dependent.
    pub figure_paths: Vec<PathBuf>,
    /// Hex SHA-256 of the serialized configuration file's bytes.
    pub config_sha256: String,
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn make_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Column header shared by every trial table.
pub const TRIAL_TABLE_HEADER: &str =
    "set\ttrial\toutcome_first\toutcome_second\tdelta_jz\ttheta_bar";

fn trial_table(row: &ReportRow) -> String {
    let mut out = String::new();
    out.push_str("# outcomes and delta_jz in spins; theta_bar in rad\n");
    out.push_str(TRIAL_TABLE_HEADER);
    out.push('\n');
    for t in &row.trials {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            t.set, t.trial, t.outcome_first, t.outcome_second, t.delta_jz, t.theta_bar
        );
    }
    out
}

fn summary_text(report: &RunReport) -> String {
    let cfg = &report.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# Units: angles rad (mrad where marked), spin sums in spins, squeezing in dB."
    );
    let _ = writeln!(
        out,
        "# run scenario={} seed={} modes={} atoms_per_mode={} contrast={} trials={} sets={}",
        cfg.scenario, cfg.seed, cfg.modes, cfg.atoms_per_mode, cfg.contrast, cfg.trials, cfg.sets
    );
    for (idx, row) in report.rows.iter().enumerate() {
        let _ = writeln!(
            out,
            "\n[row {idx:03}] series={} sweep_value={} modes={} n_trials={}",
            row.series, row.sweep_value, row.modes, row.pooled.n_trials
        );
        let p = &row.pooled;
        let _ = writeln!(out, "mean_delta_jz_spins = {}", p.mean_delta_jz);
        let _ = writeln!(out, "var_delta_jz_spins2 = {}", p.var_delta_jz);
        let _ = writeln!(out, "mean_theta_rad = {}", p.mean_theta);
        let _ = writeln!(out, "var_theta_rad2 = {}", p.var_theta);
        let _ = writeln!(out, "xi_net_db = {}", p.xi_net_db);
        // Same quantity with the sign flipped: positive when squeezed below
        // the projection-noise reference.
        let _ = writeln!(out, "improvement_db = {}", -p.xi_net_db);
        let _ = writeln!(out, "qpn_relative_db = {}", p.qpn_relative_db);
        let _ = writeln!(out, "sensitivity_rad = {}", p.sensitivity_rad);
        if let Some(fit) = &p.gaussian_fit {
            let _ = writeln!(
                out,
                "gaussian_fit_mean_rad = {} ci68 = [{}, {}]",
                fit.mean, fit.mean_ci.0, fit.mean_ci.1
            );
            let _ = writeln!(
                out,
                "gaussian_fit_std_rad = {} ci68 = [{}, {}]",
                fit.std, fit.std_ci.0, fit.std_ci.1
            );
        }
        if let Some(sq) = &p.squeezing {
            let _ = writeln!(out, "squeezing_network_db = {}", sq.network_db);
        }
        for (s, set) in row.per_set.iter().enumerate() {
            let _ = writeln!(
                out,
                "set {s}: n = {} mean_theta_rad = {} var_theta_rad2 = {} xi_net_db = {}",
                set.n_trials, set.mean_theta, set.var_theta, set.xi_net_db
            );
        }
    }
    if !report.fits.is_empty() {
        let _ = writeln!(out, "\n[fits] theta_bar (rad) vs sweep value");
        for f in &report.fits {
            let _ = writeln!(
                out,
                "series={} slope = {} ci68 = [{}, {}] intercept = {} ci68 = [{}, {}] residual_std = {}",
                f.series,
                f.fit.slope,
                f.fit.slope_ci.0,
                f.fit.slope_ci.1,
                f.fit.intercept,
                f.fit.intercept_ci.0,
                f.fit.intercept_ci.1,
                f.fit.residual_std
            );
        }
    }
    if let Some(fit) = &report.scaling_fit {
        let _ = writeln!(out, "\n[scaling] ln(sensitivity_rad) vs ln(modes)");
        let _ = writeln!(
            out,
            "slope = {} ci68 = [{}, {}] intercept = {}",
            fit.slope, fit.slope_ci.0, fit.slope_ci.1, fit.intercept
        );
    }
    if !report.stability.is_empty() {
        let _ = writeln!(out, "\n[stability] fractional deviation of theta_bar (rad)");
        for s in &report.stability {
            for p in &s.points {
                let _ = writeln!(
                    out,
                    "series={} sweep_value={} averaging_count={} deviation = {} ci68 = [{}, {}]",
                    s.series, s.sweep_value, p.averaging_count, p.deviation, p.ci_low, p.ci_high
                );
            }
        }
    }
    if let Some(model) = &report.contrast_model {
        let _ = writeln!(out, "\n[contrast-model]");
        let _ = writeln!(out, "thermal_wavelength_m = {}", model.thermal_wavelength);
        let _ = writeln!(out, "time_constant_s = {}", model.time_constant);
        let _ = writeln!(out, "initial_contrast = {}", model.contrast);
    }
    if let Some(g) = &report.moment_grids {
        let _ = writeln!(out, "\n[probe-conditioning] single-mode variances, spins^2");
        let _ = writeln!(out, "prior_variance = {}", g.prior_variance);
        let _ = writeln!(out, "marginal_variance = {}", g.marginal_variance);
        let _ = writeln!(out, "conditional_variance = {}", g.conditional_variance);
        let _ = writeln!(out, "conditional_center_spins = {}", g.conditional_center);
    }
    out
}

fn sem_mrad(row: &ReportRow) -> f64 {
    1e3 * (row.pooled.var_theta / row.pooled.n_trials as f64).sqrt()
}

fn phase_response(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# spin-echo response vs final-pulse phase; theta_bar in mrad\n");
    out.push_str("series\tphase_rad\ttheta_bar_mrad\tsem_mrad\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            row.series,
            row.sweep_value,
            1e3 * row.pooled.mean_theta,
            sem_mrad(row)
        );
    }
    out
}

fn gradient_response(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# gradiometer response vs coil current; theta_bar in mrad\n");
    out.push_str("series\tcurrent_a\ttheta_bar_mrad\tsem_mrad\n");
    for row in &report.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            row.series,
            row.sweep_value,
            1e3 * row.pooled.mean_theta,
            sem_mrad(row)
        );
    }
    out
}

fn histograms(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# theta_bar histograms per series with Gaussian-fit expected counts\n");
    out.push_str("series\tsweep_value\tbin_center_mrad\tcount\texpected_count\n");
    const BINS: usize = 41;
    for row in &report.rows {
        let Some(fit) = &row.pooled.gaussian_fit else {
            continue;
        };
        if fit.std <= 0.0 {
            continue;
        }
        let lo = fit.mean - 4.0 * fit.std;
        let width = 8.0 * fit.std / BINS as f64;
        let mut counts = [0usize; BINS];
        for t in &row.trials {
            let k = ((t.theta_bar - lo) / width).floor();
            if (0.0..BINS as f64).contains(&k) {
                counts[k as usize] += 1;
            }
        }
        let n = row.trials.len() as f64;
        for (k, count) in counts.iter().enumerate() {
            let center = lo + (k as f64 + 0.5) * width;
            let z = (center - fit.mean) / fit.std;
            let expected =
                n * width / (fit.std * (2.0 * std::f64::consts::PI).sqrt()) * (-0.5 * z * z).exp();
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                row.series,
                row.sweep_value,
                1e3 * center,
                count,
                expected
            );
        }
    }
    out
}

fn scaling(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# network sensitivity vs mode count; sensitivities in rad\n");
    out.push_str(
        "series\tmodes\tsensitivity_rad\tfit_std_rad\tfit_std_ci_low\tfit_std_ci_high\n",
    );
    for row in &report.rows {
        let (std, lo, hi) = row
            .pooled
            .gaussian_fit
            .as_ref()
            .map(|f| (f.std, f.std_ci.0, f.std_ci.1))
            .unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            row.series, row.modes, row.pooled.sensitivity_rad, std, lo, hi
        );
    }
    // Projection of simultaneous-operation separable sensitivity from the
    // measured single-mode conditioning floor: variance scaled by 1/M.
    if let Some(base) = report
        .rows
        .iter()
        .find(|r| r.series == SeriesKind::DetectionOnly && r.modes == 1)
    {
        out.push_str("# projected separable baseline from the single-mode floor\n");
        out.push_str("# series\tmodes\tprojected_sensitivity_rad\n");
        let mut modes_seen: Vec<usize> = report.rows.iter().map(|r| r.modes).collect();
        modes_seen.sort_unstable();
        modes_seen.dedup();
        for m in modes_seen {
            let projected = base.pooled.sensitivity_rad / (m as f64).sqrt();
            let _ = writeln!(out, "#ms_projected\t{m}\t{projected}");
        }
    }
    out
}

fn stability(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# overlapping fractional deviation of theta_bar vs averaging count\n");
    out.push_str("series\tsweep_value\taveraging_count\tdeviation_rad\tci_low\tci_high\n");
    for s in &report.stability {
        for p in &s.points {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                s.series, s.sweep_value, p.averaging_count, p.deviation, p.ci_low, p.ci_high
            );
        }
    }
    out
}

fn contrast_curve(report: &RunReport) -> String {
    let mut out = String::new();
    out.push_str("# interferometer contrast vs mode-separation time\n");
    out.push_str("separation_time_s\tderived_contrast\tfitted_contrast\n");
    for p in &report.contrast_points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            p.separation_time, p.derived_contrast, p.fitted_contrast
        );
    }
    out
}

fn moment_grids(report: &RunReport) -> Option<String> {
    let g = report.moment_grids.as_ref()?;
    let mut out = String::new();
    out.push_str("# single-mode distributions before/after one collective probe\n");
    let _ = writeln!(
        out,
        "# prior_variance={} marginal_variance={} conditional_variance={} conditional_center={}",
        g.prior_variance, g.marginal_variance, g.conditional_variance, g.conditional_center
    );
    out.push_str("jz_spins\tprior_pdf\tposterior_marginal_pdf\tposterior_conditional_pdf\n");
    for (i, &z) in g.jz.iter().enumerate() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            z, g.prior_pdf[i], g.posterior_marginal_pdf[i], g.posterior_conditional_pdf[i]
        );
    }
    Some(out)
}

/// Write the full report into `out_dir`: `config.toml`, `manifest.toml`,
/// `summary.txt`, one trial table per row under `trial_tables/`, and the
/// scenario's figure data files. Returns the paths written.
pub fn export(report: &RunReport, out_dir: &Path) -> Result<OutputBundle> {
    make_dir(out_dir)?;
    let tables_dir = out_dir.join("trial_tables");
    make_dir(&tables_dir)?;

    let config_text = serialize_config(&report.config)?;
    let config_path = out_dir.join("config.toml");
    write_file(&config_path, &config_text)?;

    let digest = Sha256::digest(config_text.as_bytes());
    let config_sha256: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    let manifest_path = out_dir.join("manifest.toml");
    let manifest = format!(
        "version = {:?}\nscenario = {:?}\nseed = {}\nconfig_sha256 = {:?}\n",
        env!("CARGO_PKG_VERSION"),
        report.config.scenario.label(),
        report.config.seed,
        config_sha256
    );
    write_file(&manifest_path, &manifest)?;

    let summary_path = out_dir.join("summary.txt");
    write_file(&summary_path, &summary_text(report))?;

    let mut trial_tables = Vec::with_capacity(report.rows.len());
    for (idx, row) in report.rows.iter().enumerate() {
        let path = tables_dir.join(format!("{}_{idx:03}.tsv", row.series.label()));
        write_file(&path, &trial_table(row))?;
        trial_tables.push(path);
    }

    let mut figure_paths = Vec::new();
    let mut figure = |name: &str, contents: String| -> Result<()> {
        let path = out_dir.join(name);
        write_file(&path, &contents)?;
        figure_paths.push(path);
        Ok(())
    };
    match report.config.scenario {
        Scenario::PhaseScan => {
            figure("phase_response.tsv", phase_response(report))?;
            figure("histograms.tsv", histograms(report))?;
        }
        Scenario::GradientScan => figure("gradient_response.tsv", gradient_response(report))?,
        Scenario::NetworkScaling => figure("scaling.tsv", scaling(report))?,
        Scenario::RamseyClock => figure("histograms.tsv", histograms(report))?,
        Scenario::Interferometer => {
            figure("histograms.tsv", histograms(report))?;
            figure("stability.tsv", stability(report))?;
        }
        Scenario::ContrastCurve => figure("contrast_curve.tsv", contrast_curve(report))?,
    }
    if let Some(text) = moment_grids(report) {
        figure("moment_grids.tsv", text)?;
    }

    Ok(OutputBundle {
        root: out_dir.to_path_buf(),
        config_path,
        manifest_path,
        summary_path,
        trial_tables,
        figure_paths,
        config_sha256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_scenario, ScenarioConfig};
    use crate::metrology::{self, StatsSummary};
    use approx::assert_abs_diff_eq;

    fn small_run(scenario: Scenario, seed: u64) -> RunReport {
        let mut cfg = ScenarioConfig::new(scenario, seed);
        cfg.trials = 16;
        cfg.sets = 2;
        cfg.qnd.resolution_std = 30.736;
        cfg.readout_std = 30.736;
        run_scenario(&cfg).unwrap()
    }

    #[test]
    fn export_writes_manifest_tables_and_figures() {
        let report = small_run(Scenario::RamseyClock, 61);
        let dir = tempfile::tempdir().unwrap();
        let bundle = export(&report, dir.path()).unwrap();
        assert!(bundle.config_path.exists());
        assert!(bundle.manifest_path.exists());
        assert!(bundle.summary_path.exists());
        assert_eq!(bundle.trial_tables.len(), report.rows.len());
        assert!(bundle
            .figure_paths
            .iter()
            .any(|p| p.ends_with("histograms.tsv")));
        assert!(bundle
            .figure_paths
            .iter()
            .any(|p| p.ends_with("moment_grids.tsv")));

        let manifest = std::fs::read_to_string(&bundle.manifest_path).unwrap();
        assert!(manifest.contains(&bundle.config_sha256));
        assert!(!manifest.to_lowercase().contains("time"));
        // The recorded hash matches the config file bytes.
        let config_bytes = std::fs::read(&bundle.config_path).unwrap();
        let digest = Sha256::digest(&config_bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        assert_eq!(hex, bundle.config_sha256);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let report_a = small_run(Scenario::RamseyClock, 67);
        let report_b = small_run(Scenario::RamseyClock, 67);
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let bundle_a = export(&report_a, dir_a.path()).unwrap();
        let bundle_b = export(&report_b, dir_b.path()).unwrap();
        let pairs = bundle_a
            .trial_tables
            .iter()
            .zip(&bundle_b.trial_tables)
            .chain(bundle_a.figure_paths.iter().zip(&bundle_b.figure_paths))
            .chain([
                (&bundle_a.config_path, &bundle_b.config_path),
                (&bundle_a.manifest_path, &bundle_b.manifest_path),
                (&bundle_a.summary_path, &bundle_b.summary_path),
            ]);
        for (a, b) in pairs {
            let bytes_a = std::fs::read(a).unwrap();
            let bytes_b = std::fs::read(b).unwrap();
            assert_eq!(bytes_a, bytes_b, "{} differs", a.display());
        }
    }

    #[test]
    fn trial_table_recomputes_to_the_summary_statistics() {
        let report = small_run(Scenario::RamseyClock, 71);
        let dir = tempfile::tempdir().unwrap();
        let bundle = export(&report, dir.path()).unwrap();
        for (row, path) in report.rows.iter().zip(&bundle.trial_tables) {
            let text = std::fs::read_to_string(path).unwrap();
            let mut per_set: Vec<(Vec<f64>, Vec<f64>)> =
                vec![(Vec::new(), Vec::new()); report.config.sets];
            for line in text.lines() {
                if line.starts_with('#') || line.starts_with("set\t") {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                let set: usize = cols[0].parse().unwrap();
                per_set[set].0.push(cols[4].parse().unwrap());
                per_set[set].1.push(cols[5].parse().unwrap());
            }
            let mut delta_m = Vec::new();
            let mut theta_m = Vec::new();
            for (deltas, thetas) in &per_set {
                let s = StatsSummary::from_trials(
                    deltas,
                    thetas,
                    row.modes,
                    report.config.atoms_per_mode,
                    report.config.contrast,
                )
                .unwrap();
                delta_m.push((s.n_trials, s.mean_delta_jz, s.var_delta_jz));
                theta_m.push((s.n_trials, s.mean_theta, s.var_theta));
            }
            let (n, mean_d, var_d) = metrology::pooled_mean_variance(&delta_m).unwrap();
            let (_, mean_t, var_t) = metrology::pooled_mean_variance(&theta_m).unwrap();
            let recomputed = StatsSummary::from_moments(
                n,
                mean_d,
                var_d,
                mean_t,
                var_t,
                row.modes,
                report.config.atoms_per_mode,
                report.config.contrast,
            )
            .unwrap();
            assert_eq!(n, row.pooled.n_trials);
            assert_abs_diff_eq!(recomputed.mean_theta, row.pooled.mean_theta, epsilon = 1e-12);
            assert_abs_diff_eq!(recomputed.var_theta, row.pooled.var_theta, epsilon = 1e-12);
            assert_abs_diff_eq!(
                recomputed.mean_delta_jz,
                row.pooled.mean_delta_jz,
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(
                recomputed.var_delta_jz,
                row.pooled.var_delta_jz,
                epsilon = 1e-9
            );
            assert_abs_diff_eq!(recomputed.xi_net_db, row.pooled.xi_net_db, epsilon = 1e-12);
        }
    }

    #[test]
    fn contrast_curve_export_is_analytic_only() {
        let mut cfg = ScenarioConfig::new(Scenario::ContrastCurve, 73);
        cfg.contrast = 0.73;
        let report = run_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let bundle = export(&report, dir.path()).unwrap();
        assert!(bundle.trial_tables.is_empty());
        let curve = std::fs::read_to_string(dir.path().join("contrast_curve.tsv")).unwrap();
        assert_eq!(curve.lines().count(), 2 + 61);
        assert!(bundle.manifest_path.exists());
    }

    #[test]
    fn gradient_export_has_the_documented_columns() {
        let mut cfg = ScenarioConfig::new(Scenario::GradientScan, 79);
        cfg.trials = 8;
        cfg.sets = 2;
        cfg.sweep = vec![-1.0, 0.0, 1.0];
        let report = run_scenario(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export(&report, dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("gradient_response.tsv")).unwrap();
        let header = text.lines().nth(1).unwrap();
        assert_eq!(header, "series\tcurrent_a\ttheta_bar_mrad\tsem_mrad");
        // One line per (series, current).
        assert_eq!(text.lines().count(), 2 + report.rows.len());
    }
}
