//! Scenario files, experiment runners and result tables.
//!
//! A scenario is a flat `key = value` text file; see `docs/scenario.md`
//! for the grammar. Files use GHz, ps, dBm and metres; everything is
//! converted to SI on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beamforming::{design, td_module_count, BeamformerConfig, DesignKind};
use crate::channel::PiecewiseForm;
use crate::error::{Error, Result};
use crate::geometry::{FrequencyGrid, IrsLayout, Point3, SceneGeometry, SubsurfacePartition};
use crate::metrics::{
    beam_pattern, dbm_to_watts, edge_gain_clamped, gain_profile, rate_from_amplitudes,
    GainEvaluator, PlaneSpec,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

const PS: f64 = 1e-12;
const GHZ: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    HalfWavelength,
    Meters(f64),
}

/// Frequency selector for beam patterns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternFrequency {
    First,
    Center,
    Last,
    Hz(f64),
}

impl PatternFrequency {
    pub fn resolve(self, grid: &FrequencyGrid) -> f64 {
        match self {
            Self::First => grid.first(),
            Self::Center => grid.center(),
            Self::Last => grid.last(),
            Self::Hz(f) => f,
        }
    }
}

/// Evaluation plane with the height left open; `None` means the user's
/// height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSettings {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: Option<f64>,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub bs: Point3,
    pub user: Point3,
    pub n_y: usize,
    pub n_z: usize,
    pub spacing: Spacing,
    pub k_y: usize,
    pub k_z: usize,
    pub center_frequency: f64,
    pub bandwidth: f64,
    pub subcarriers: usize,
    pub partitions: Vec<(usize, usize)>,
    /// Seconds.
    pub t_req: Vec<f64>,
    pub power_dbm: Vec<f64>,
    pub plane: PlaneSettings,
    pub pattern_frequencies: Vec<PatternFrequency>,
    pub noise_dbm_per_hz: f64,
    pub piecewise_form: PiecewiseForm,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            bs: Point3::new(0.0, 1.5, -1.5),
            user: Point3::new(2.0, -4.0, -2.0),
            n_y: 100,
            n_z: 100,
            spacing: Spacing::HalfWavelength,
            k_y: 10,
            k_z: 10,
            center_frequency: 300.0 * GHZ,
            bandwidth: 30.0 * GHZ,
            subcarriers: 128,
            partitions: [1, 2, 4, 5, 10, 20, 25, 50]
                .iter()
                .map(|&k| (k, k))
                .collect(),
            t_req: (0..=20).map(|t| t as f64 * PS).collect(),
            power_dbm: (0..=12).map(|i| 40.0 + 5.0 * i as f64).collect(),
            plane: PlaneSettings {
                x_min: 0.5,
                x_max: 4.0,
                y_min: -6.0,
                y_max: 2.0,
                z: None,
                nx: 201,
                ny: 201,
            },
            pattern_frequencies: vec![
                PatternFrequency::First,
                PatternFrequency::Center,
                PatternFrequency::Last,
            ],
            noise_dbm_per_hz: -174.0,
            piecewise_form: PiecewiseForm::Corrected,
        }
    }
}

impl Scenario {
    pub fn grid(&self) -> Result<FrequencyGrid> {
        FrequencyGrid::new(self.center_frequency, self.bandwidth, self.subcarriers)
    }

    pub fn layout(&self) -> Result<IrsLayout> {
        match self.spacing {
            Spacing::HalfWavelength => {
                IrsLayout::half_wavelength(self.n_y, self.n_z, self.grid()?.wavelength())
            }
            Spacing::Meters(d) => IrsLayout::new(self.n_y, self.n_z, d),
        }
    }

    pub fn scene(&self) -> Result<SceneGeometry> {
        SceneGeometry::new(self.bs, self.user, self.layout()?)
    }

    pub fn partition(&self) -> Result<SubsurfacePartition> {
        SubsurfacePartition::new(&self.layout()?, self.k_y, self.k_z)
    }

    pub fn plane(&self) -> PlaneSpec {
        let p = self.plane;
        PlaneSpec {
            x_min: p.x_min,
            x_max: p.x_max,
            y_min: p.y_min,
            y_max: p.y_max,
            z: p.z.unwrap_or(self.user.z),
            nx: p.nx,
            ny: p.ny,
        }
    }

    pub fn pattern_frequencies_hz(&self) -> Result<Vec<f64>> {
        let grid = self.grid()?;
        Ok(self
            .pattern_frequencies
            .iter()
            .map(|p| p.resolve(&grid))
            .collect())
    }

    pub fn noise_density(&self) -> f64 {
        dbm_to_watts(self.noise_dbm_per_hz)
    }

    /// Checks every cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        let v = |m: String| Error::Validation(m);
        let scene = self.scene().map_err(|e| v(e.to_string()))?;
        self.partition().map_err(|e| v(e.to_string()))?;
        let layout = scene.layout;
        for &(ky, kz) in &self.partitions {
            SubsurfacePartition::new(&layout, ky, kz)
                .map_err(|e| v(format!("sweep.partitions {ky}x{kz}: {e}")))?;
        }
        if self.partitions.is_empty() {
            return Err(v("sweep.partitions is empty".into()));
        }
        if self.t_req.is_empty() || self.t_req.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(v(
                "sweep.t_req_ps must be a non-empty list of finite values >= 0".into(),
            ));
        }
        if self.power_dbm.is_empty() || self.power_dbm.iter().any(|p| !p.is_finite()) {
            return Err(v(
                "sweep.power_dbm must be a non-empty list of finite values".into(),
            ));
        }
        if !self.noise_dbm_per_hz.is_finite() {
            return Err(v("rate.noise_dbm_per_hz must be finite".into()));
        }
        self.plane()
            .validate(&scene)
            .map_err(|e| v(format!("pattern: {e}")))?;
        if self.pattern_frequencies.is_empty() {
            return Err(v("pattern.frequencies is empty".into()));
        }
        for f in self.pattern_frequencies_hz()? {
            if !(f > 0.0 && f.is_finite()) {
                return Err(v(format!("pattern frequency {f} Hz must be positive")));
            }
        }
        Ok(())
    }

    /// Fully resolved scenario in file syntax. Every key is written, so
    /// parsing the result gives back the same scenario.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        let list = |v: &[f64], scale: f64| {
            v.iter()
                .map(|x| format!("{}", x / scale))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(s, "bs.x = {}", self.bs.x);
        let _ = writeln!(s, "bs.y = {}", self.bs.y);
        let _ = writeln!(s, "bs.z = {}", self.bs.z);
        let _ = writeln!(s, "user.x = {}", self.user.x);
        let _ = writeln!(s, "user.y = {}", self.user.y);
        let _ = writeln!(s, "user.z = {}", self.user.z);
        let _ = writeln!(s, "irs.n_y = {}", self.n_y);
        let _ = writeln!(s, "irs.n_z = {}", self.n_z);
        match self.spacing {
            Spacing::HalfWavelength => {
                let _ = writeln!(s, "irs.d_mm = half-wavelength");
            }
            Spacing::Meters(d) => {
                let _ = writeln!(s, "irs.d_mm = {}", d * 1e3);
            }
        }
        let _ = writeln!(s, "partition.k_y = {}", self.k_y);
        let _ = writeln!(s, "partition.k_z = {}", self.k_z);
        let _ = writeln!(s, "grid.f_c_ghz = {}", self.center_frequency / GHZ);
        let _ = writeln!(s, "grid.bandwidth_ghz = {}", self.bandwidth / GHZ);
        let _ = writeln!(s, "grid.subcarriers = {}", self.subcarriers);
        let parts: Vec<String> = self
            .partitions
            .iter()
            .map(|(a, b)| format!("{a}x{b}"))
            .collect();
        let _ = writeln!(s, "sweep.partitions = {}", parts.join(", "));
        let _ = writeln!(s, "sweep.t_req_ps = {}", list(&self.t_req, PS));
        let _ = writeln!(s, "sweep.power_dbm = {}", list(&self.power_dbm, 1.0));
        let p = self.plane;
        let _ = writeln!(s, "pattern.x_min = {}", p.x_min);
        let _ = writeln!(s, "pattern.x_max = {}", p.x_max);
        let _ = writeln!(s, "pattern.y_min = {}", p.y_min);
        let _ = writeln!(s, "pattern.y_max = {}", p.y_max);
        match p.z {
            Some(z) => {
                let _ = writeln!(s, "pattern.z = {z}");
            }
            None => {
                let _ = writeln!(s, "pattern.z = user");
            }
        }
        let _ = writeln!(s, "pattern.nx = {}", p.nx);
        let _ = writeln!(s, "pattern.ny = {}", p.ny);
        let freqs: Vec<String> = self
            .pattern_frequencies
            .iter()
            .map(|f| match f {
                PatternFrequency::First => "first".to_string(),
                PatternFrequency::Center => "center".to_string(),
                PatternFrequency::Last => "last".to_string(),
                PatternFrequency::Hz(hz) => format!("{}", hz / GHZ),
            })
            .collect();
        let _ = writeln!(s, "pattern.frequencies = {}", freqs.join(", "));
        let _ = writeln!(s, "rate.noise_dbm_per_hz = {}", self.noise_dbm_per_hz);
        let form = match self.piecewise_form {
            PiecewiseForm::Corrected => "corrected",
            PiecewiseForm::Printed => "printed",
        };
        let _ = writeln!(s, "model.piecewise_form = {form}");
        s
    }

    /// SHA-256 of the canonical form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_string().as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text)
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut sc = Scenario::default();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            return Err(Error::Parse {
                line,
                key: None,
                message: "expected `key = value`".into(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        let err = |message: String| Error::Parse {
            line,
            key: Some(key.to_string()),
            message,
        };
        if let Some(prev) = seen.insert(key.to_string(), line) {
            return Err(err(format!("duplicate key, first set on line {prev}")));
        }
        if value.is_empty() {
            return Err(err("missing value".into()));
        }
        apply(&mut sc, key, value).map_err(err)?;
    }
    sc.validate()?;
    Ok(sc)
}

fn num<T: FromStr>(value: &str) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("cannot parse `{value}` as a number"))
}

fn finite(value: &str) -> std::result::Result<f64, String> {
    let v: f64 = num(value)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{value}` is not finite"))
    }
}

/// Comma-separated numbers; `start:step:stop` expands to an inclusive range.
fn number_list(value: &str) -> std::result::Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for item in value.split(',').map(str::trim) {
        let parts: Vec<&str> = item.split(':').map(str::trim).collect();
        match parts.as_slice() {
            [v] => out.push(finite(v)?),
            [a, step, b] => {
                let (a, step, b) = (finite(a)?, finite(step)?, finite(b)?);
                if step <= 0.0 || b < a {
                    return Err(format!("range `{item}` needs step > 0 and stop >= start"));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                if n > 1_000_000 {
                    return Err(format!("range `{item}` is too long"));
                }
                out.extend((0..=n).map(|i| a + step * i as f64));
            }
            _ => return Err(format!("cannot parse list item `{item}`")),
        }
    }
    Ok(out)
}

fn apply(sc: &mut Scenario, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "bs.x" => sc.bs.x = finite(value)?,
        "bs.y" => sc.bs.y = finite(value)?,
        "bs.z" => sc.bs.z = finite(value)?,
        "user.x" => sc.user.x = finite(value)?,
        "user.y" => sc.user.y = finite(value)?,
        "user.z" => sc.user.z = finite(value)?,
        "irs.n_y" => sc.n_y = num(value)?,
        "irs.n_z" => sc.n_z = num(value)?,
        "irs.d_mm" => {
            sc.spacing = if value == "half-wavelength" {
                Spacing::HalfWavelength
            } else {
                Spacing::Meters(finite(value)? * 1e-3)
            }
        }
        "partition.k_y" => sc.k_y = num(value)?,
        "partition.k_z" => sc.k_z = num(value)?,
        "grid.f_c_ghz" => sc.center_frequency = finite(value)? * GHZ,
        "grid.bandwidth_ghz" => sc.bandwidth = finite(value)? * GHZ,
        "grid.subcarriers" => sc.subcarriers = num(value)?,
        "sweep.partitions" => {
            sc.partitions = value
                .split(',')
                .map(str::trim)
                .map(|item| match item.split_once(['x', 'X']) {
                    Some((a, b)) => Ok((num(a.trim())?, num(b.trim())?)),
                    None => num(item).map(|k| (k, k)),
                })
                .collect::<std::result::Result<_, String>>()?
        }
        "sweep.t_req_ps" => sc.t_req = number_list(value)?.into_iter().map(|t| t * PS).collect(),
        "sweep.power_dbm" => sc.power_dbm = number_list(value)?,
        "pattern.x_min" => sc.plane.x_min = finite(value)?,
        "pattern.x_max" => sc.plane.x_max = finite(value)?,
        "pattern.y_min" => sc.plane.y_min = finite(value)?,
        "pattern.y_max" => sc.plane.y_max = finite(value)?,
        "pattern.z" => {
            sc.plane.z = if value == "user" {
                None
            } else {
                Some(finite(value)?)
            }
        }
        "pattern.nx" => sc.plane.nx = num(value)?,
        "pattern.ny" => sc.plane.ny = num(value)?,
        "pattern.frequencies" => {
            sc.pattern_frequencies = value
                .split(',')
                .map(str::trim)
                .map(|item| match item {
                    "first" => Ok(PatternFrequency::First),
                    "center" => Ok(PatternFrequency::Center),
                    "last" => Ok(PatternFrequency::Last),
                    ghz => finite(ghz).map(|g| PatternFrequency::Hz(g * GHZ)),
                })
                .collect::<std::result::Result<_, String>>()?
        }
        "rate.noise_dbm_per_hz" => sc.noise_dbm_per_hz = finite(value)?,
        "model.piecewise_form" => {
            sc.piecewise_form = match value {
                "corrected" => PiecewiseForm::Corrected,
                "printed" => PiecewiseForm::Printed,
                other => return Err(format!("unknown piecewise form `{other}`")),
            }
        }
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Numeric table with a provenance header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub experiment: String,
    pub scenario_hash: String,
    pub version: String,
    /// Extra `key: value` header lines, in order.
    pub notes: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ResultTable {
    pub fn new(experiment: &str, scenario: &Scenario, columns: Vec<String>) -> Self {
        Self {
            experiment: experiment.to_string(),
            scenario_hash: scenario.hash(),
            version: VERSION.to_string(),
            notes: Vec::new(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn note(&mut self, key: &str, value: impl Into<String>) {
        self.notes.push((key.to_string(), value.into()));
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::InvalidArgument(format!(
                "row has {} values for {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# experiment: {}", self.experiment)?;
        writeln!(out, "# scenario_sha256: {}", self.scenario_hash)?;
        writeln!(out, "# version: {}", self.version)?;
        for (k, v) in &self.notes {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn designed_configs(
    scenario: &Scenario,
    designs: &[DesignKind],
    table: &mut ResultTable,
) -> Result<Vec<BeamformerConfig>> {
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let partition = scenario.partition()?;
    designs
        .iter()
        .map(|&kind| {
            let d = design(kind, &scene, &grid, &partition, scenario.piecewise_form)?;
            for w in &d.warnings {
                table.note("warning", format!("{kind}: {w}"));
            }
            Ok(d.config)
        })
        .collect()
}

fn check_designs(designs: &[DesignKind]) -> Result<()> {
    if designs.is_empty() {
        return Err(Error::InvalidArgument("no designs selected".into()));
    }
    Ok(())
}

/// Gain per subcarrier, one column per design.
pub fn run_gain_profile(scenario: &Scenario, designs: &[DesignKind]) -> Result<ResultTable> {
    check_designs(designs)?;
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let mut columns = vec!["subcarrier".to_string(), "frequency_hz".to_string()];
    columns.extend(designs.iter().map(|d| format!("gain_{d}")));
    let mut table = ResultTable::new("gain-profile", scenario, columns);
    let configs = designed_configs(scenario, designs, &mut table)?;
    let profiles = configs
        .iter()
        .map(|c| gain_profile(&scene, &grid, c))
        .collect::<Result<Vec<_>>>()?;
    for (m, &f) in grid.frequencies().iter().enumerate() {
        let mut row = vec![m as f64, f];
        row.extend(profiles.iter().map(|p| p.gains[m]));
        table.push(row)?;
    }
    Ok(table)
}

/// Long-format gain over the scenario's plane. Rows with `kind = 0` are
/// grid samples; `kind = 1` rows are the per-frequency peaks.
pub fn run_beam_pattern(scenario: &Scenario, kind: DesignKind) -> Result<ResultTable> {
    let scene = scenario.scene()?;
    let columns = ["kind", "frequency_hz", "x_m", "y_m", "gain"]
        .map(String::from)
        .to_vec();
    let mut table = ResultTable::new("beam-pattern", scenario, columns);
    table.note("design", kind.name());
    let config = designed_configs(scenario, &[kind], &mut table)?.remove(0);
    let plane = scenario.plane();
    let freqs = scenario.pattern_frequencies_hz()?;
    let pattern = beam_pattern(&scene, &config, &freqs, &plane)?;
    for (k, &f) in freqs.iter().enumerate() {
        for ix in 0..plane.nx {
            for iy in 0..plane.ny {
                table.push(vec![
                    0.0,
                    f,
                    plane.x(ix),
                    plane.y(iy),
                    pattern.value(k, ix, iy),
                ])?;
            }
        }
    }
    for p in &pattern.peaks {
        table.push(vec![1.0, p.frequency, p.x, p.y, p.gain])?;
    }
    Ok(table)
}

/// DLDD edge gain against the number of delay modules.
pub fn run_td_count_sweep(scenario: &Scenario) -> Result<ResultTable> {
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let columns = ["k_y", "k_z", "k_t", "edge_gain"]
        .map(String::from)
        .to_vec();
    let mut table = ResultTable::new("td-count-sweep", scenario, columns);
    let rows = scenario
        .partitions
        .par_iter()
        .map(|&(ky, kz)| {
            let partition = SubsurfacePartition::new(&scene.layout, ky, kz)?;
            let d = design(
                DesignKind::Dldd,
                &scene,
                &grid,
                &partition,
                scenario.piecewise_form,
            )?;
            let g = edge_gain_clamped(&scene, &grid, &d.config, None)?;
            let kt = td_module_count(&partition);
            Ok((vec![ky as f64, kz as f64, kt as f64, g], d.warnings))
        })
        .collect::<Result<Vec<_>>>()?;
    for (row, warnings) in rows {
        for w in warnings {
            table.note("warning", format!("{}x{}: {w}", row[0], row[1]));
        }
        table.push(row)?;
    }
    Ok(table)
}

/// Edge gain of DLDD and per-element delays with every module saturated
/// at each `t_req`.
pub fn run_delay_range_sweep(scenario: &Scenario) -> Result<ResultTable> {
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let columns = ["t_req_ps", "edge_gain_dldd", "edge_gain_per_element"]
        .map(String::from)
        .to_vec();
    let mut table = ResultTable::new("delay-range-sweep", scenario, columns);
    let configs = designed_configs(
        scenario,
        &[DesignKind::Dldd, DesignKind::PerElement],
        &mut table,
    )?;
    let rows = scenario
        .t_req
        .par_iter()
        .map(|&t| {
            let mut row = vec![t / PS];
            for c in &configs {
                row.push(edge_gain_clamped(&scene, &grid, c, Some(t))?);
            }
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    for row in rows {
        table.push(row)?;
    }
    Ok(table)
}

/// Mean rate per subcarrier against transmit power.
pub fn run_rate_sweep(scenario: &Scenario, designs: &[DesignKind]) -> Result<ResultTable> {
    check_designs(designs)?;
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let mut columns = vec!["power_dbm".to_string()];
    columns.extend(designs.iter().map(|d| format!("rate_{d}")));
    let mut table = ResultTable::new("rate-sweep", scenario, columns);
    table.note("noise_dbm_per_hz", scenario.noise_dbm_per_hz.to_string());
    let configs = designed_configs(scenario, designs, &mut table)?;
    let amplitudes = configs
        .iter()
        .map(|c| {
            let eval = GainEvaluator::new(&scene, c, None)?;
            Ok(grid
                .frequencies()
                .par_iter()
                .map(|&f| eval.cascaded_amplitude(f))
                .collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let n0 = scenario.noise_density();
    for &p in &scenario.power_dbm {
        let mut row = vec![p];
        for a in &amplitudes {
            row.push(rate_from_amplitudes(a, &grid, dbm_to_watts(p), n0)?.mean);
        }
        table.push(row)?;
    }
    Ok(table)
}

/// Beamformer JSON for one design on the scenario.
pub fn export_config(scenario: &Scenario, kind: DesignKind) -> Result<String> {
    let scene = scenario.scene()?;
    let grid = scenario.grid()?;
    let partition = scenario.partition()?;
    design(kind, &scene, &grid, &partition, scenario.piecewise_form)?
        .config
        .to_json()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Scenario {
        parse_scenario(
            "irs.n_y = 20\nirs.n_z = 20\npartition.k_y = 4\npartition.k_z = 4\n\
             grid.subcarriers = 16\nsweep.partitions = 1, 2x2, 5\nsweep.t_req_ps = 0:5:10\n\
             sweep.power_dbm = 40, 70\npattern.nx = 5\npattern.ny = 7\n",
        )
        .unwrap()
    }

    #[test]
    fn empty_file_is_default() {
        let sc = parse_scenario("# nothing\n\n").unwrap();
        assert_eq!(sc, Scenario::default());
        assert_eq!(
            sc.layout().unwrap().spacing,
            0.5 * sc.grid().unwrap().wavelength()
        );
        assert_eq!(sc.partitions.len(), 8);
        assert_eq!(sc.t_req.len(), 21);
    }

    #[test]
    fn indivisible_partition_is_a_validation_error() {
        let e = parse_scenario("partition.k_y = 7\n").unwrap_err();
        assert!(matches!(e, Error::Validation(_)), "{e}");
    }

    #[test]
    fn parse_errors_carry_line_and_key() {
        match parse_scenario("bs.x = 1\n\nbs.y = abc\n").unwrap_err() {
            Error::Parse { line, key, .. } => {
                assert_eq!(line, 3);
                assert_eq!(key.as_deref(), Some("bs.y"));
            }
            e => panic!("{e}"),
        }
        assert!(matches!(
            parse_scenario("nonsense\n"),
            Err(Error::Parse {
                line: 1,
                key: None,
                ..
            })
        ));
        assert!(parse_scenario("foo.bar = 1\n").is_err());
        assert!(parse_scenario("bs.x = 1\nbs.x = 2\n").is_err());
        assert!(parse_scenario("sweep.t_req_ps = -1\n").is_err());
        assert!(parse_scenario("sweep.power_dbm = 1:0:5\n").is_err());
    }

    #[test]
    fn ranges_and_units() {
        let sc =
            parse_scenario("sweep.t_req_ps = 0:2.5:10, 20\nirs.d_mm = 0.5\ngrid.f_c_ghz = 100\n")
                .unwrap();
        let t: Vec<f64> = sc
            .t_req
            .iter()
            .map(|t| (t / PS * 1e6).round() / 1e6)
            .collect();
        assert_eq!(t, vec![0.0, 2.5, 5.0, 7.5, 10.0, 20.0]);
        assert_eq!(sc.spacing, Spacing::Meters(0.5e-3));
        assert_eq!(sc.center_frequency, 100e9);
    }

    #[test]
    fn canonical_form_round_trips() {
        let sc = small();
        assert_eq!(parse_scenario(&sc.to_canonical_string()).unwrap(), sc);
        let def = Scenario::default();
        assert_eq!(parse_scenario(&def.to_canonical_string()).unwrap(), def);
    }

    #[test]
    fn hash_tracks_content() {
        let a = small();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.user.x += 0.01;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn gain_profile_table_shape() {
        let sc = small();
        let t = run_gain_profile(&sc, &DesignKind::ALL).unwrap();
        assert_eq!(
            t.columns,
            [
                "subcarrier",
                "frequency_hz",
                "gain_narrowband",
                "gain_dldd",
                "gain_per-element"
            ]
        );
        assert_eq!(t.rows.len(), 16);
        assert!(t
            .column("gain_per-element")
            .unwrap()
            .iter()
            .all(|g| (g - 1.0).abs() < 1e-9));
        assert!(run_gain_profile(&sc, &[]).is_err());
    }

    #[test]
    fn csv_has_header_and_is_deterministic() {
        let sc = small();
        let a = run_td_count_sweep(&sc).unwrap().to_csv_string().unwrap();
        let b = run_td_count_sweep(&sc).unwrap().to_csv_string().unwrap();
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next(), Some("# experiment: td-count-sweep"));
        assert!(lines.next().unwrap().starts_with("# scenario_sha256: "));
        assert!(a.contains("k_y,k_z,k_t,edge_gain\n1,1,0,"));
    }

    #[test]
    fn delay_sweep_at_zero_is_narrowband() {
        let sc = small();
        let t = run_delay_range_sweep(&sc).unwrap();
        let nb = edge_gain_clamped(
            &sc.scene().unwrap(),
            &sc.grid().unwrap(),
            &crate::beamforming::narrowband_design(&sc.scene().unwrap(), &sc.grid().unwrap())
                .unwrap(),
            None,
        )
        .unwrap();
        assert_eq!(t.rows[0][0], 0.0);
        assert!((t.rows[0][2] - nb).abs() < 1e-9);
    }

    #[test]
    fn beam_pattern_rows() {
        let sc = small();
        let t = run_beam_pattern(&sc, DesignKind::PerElement).unwrap();
        assert_eq!(t.rows.len(), 3 * 5 * 7 + 3);
        assert_eq!(t.rows.iter().filter(|r| r[0] == 1.0).count(), 3);
    }

    #[test]
    fn rate_table_and_json() {
        let sc = small();
        let t = run_rate_sweep(&sc, &DesignKind::ALL).unwrap();
        assert_eq!(t.rows.len(), 2);
        let json = t.to_json_string().unwrap();
        let back: ResultTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        assert!(export_config(&sc, DesignKind::Dldd)
            .unwrap()
            .contains("\"dldd\""));
    }
}
