//! Reflection designs and their frequency-dependent realisation.
//!
//! Every design produces a [`BeamformerConfig`]: one phase shift per element
//! plus an optional true-time-delay network. At frequency `f` element `n`
//! reflects with `exp(j (theta_n - 2 pi f tau_n))`, where `tau_n` is the
//! delay the network presents to that element.
//!
//! The double-layer delta-delay (DLDD) network realises one delay per
//! sub-surface as a running sum of small deltas: a first chain of `K_y - 1`
//! modules along y, each tap of which feeds a second chain of `K_z - 1`
//! modules along z. A 2-output switch in front of each chain picks the end
//! it is fed from, so negative deltas are realised by walking the chain
//! backwards and every physical module delay stays non-negative.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::channel::{cascaded_decomposition_with, CascadedDecomposition, PiecewiseForm};
use crate::error::{Error, Result};
use crate::geometry::{
    FrequencyGrid, IrsLayout, SceneGeometry, SubsurfacePartition, SPEED_OF_LIGHT,
};

/// Per-element phase shifts, radians in `[0, 2 pi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseShiftConfig(Vec<f64>);

impl PhaseShiftConfig {
    pub fn new(phases: Vec<f64>) -> Result<Self> {
        if let Some(bad) = phases.iter().find(|p| !(0.0..TAU).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "phase {bad} outside [0, 2pi)"
            )));
        }
        Ok(Self(phases))
    }

    /// Reduces arbitrary phases modulo `2 pi`.
    pub fn wrapped(phases: impl IntoIterator<Item = f64>) -> Self {
        Self(phases.into_iter().map(wrap_phase).collect())
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[inline]
fn wrap_phase(p: f64) -> f64 {
    let r = p.rem_euclid(TAU);
    // rem_euclid can round up to exactly 2 pi for tiny negative inputs
    if r >= TAU {
        0.0
    } else {
        r
    }
}

/// How the switch in front of a chain routes the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerRouting {
    /// All deltas non-negative; chain fed from its first tap.
    Forward,
    /// All deltas non-positive; chain fed from its last tap.
    Reverse,
    /// Mixed signs. Each module realises its delta's magnitude and the
    /// sign is applied per module; a global offset keeps delays non-negative.
    PerModule,
}

impl LayerRouting {
    fn of(deltas: &[f64]) -> Self {
        match polarity(deltas) {
            Polarity::Positive => LayerRouting::Forward,
            Polarity::Negative => LayerRouting::Reverse,
            Polarity::Mixed => LayerRouting::PerModule,
        }
    }

    /// Switch output as a sign: +1 forward, -1 reverse, 0 per-module.
    pub fn switch_sign(self) -> i8 {
        match self {
            LayerRouting::Forward => 1,
            LayerRouting::Reverse => -1,
            LayerRouting::PerModule => 0,
        }
    }
}

/// Sign shared by a set of delays. Zeros are compatible with either sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Mixed,
}

pub fn polarity(values: &[f64]) -> Polarity {
    let pos = values.iter().any(|&v| v > 0.0);
    let neg = values.iter().any(|&v| v < 0.0);
    match (pos, neg) {
        (true, true) => Polarity::Mixed,
        (false, true) => Polarity::Negative,
        _ => Polarity::Positive,
    }
}

/// Delays of a double-layer delta-delay network, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlddDelayNetwork {
    pub k_y: usize,
    pub k_z: usize,
    /// Signed deltas between consecutive rows along the feed column, `k_y - 1` entries.
    #[serde(rename = "first_layer_s")]
    pub first_layer: Vec<f64>,
    /// Signed deltas along z, `k_y` rows of `k_z - 1` entries, row-major.
    #[serde(rename = "second_layer_s")]
    pub second_layer: Vec<f64>,
    pub first_routing: LayerRouting,
    pub second_routing: LayerRouting,
    /// 1-based column whose sub-surfaces the first layer feeds directly.
    pub feed_column: usize,
}

impl DlddDelayNetwork {
    pub fn module_count(&self) -> usize {
        self.first_layer.len() + self.second_layer.len()
    }

    /// Second-layer delta `i` (1-based) of row `ky`.
    pub fn second(&self, ky: usize, i: usize) -> f64 {
        self.second_layer[(ky - 1) * (self.k_z - 1) + (i - 1)]
    }

    /// Physical (non-negative) delay of every module, first layer then
    /// second layer row by row, saturated at `clamp` when given.
    pub fn module_delays(&self, clamp: Option<f64>) -> Vec<f64> {
        self.first_layer
            .iter()
            .chain(&self.second_layer)
            .map(|d| saturate(d.abs(), clamp))
            .collect()
    }

    /// Largest single-module delay.
    pub fn max_module_delay(&self) -> f64 {
        self.module_delays(None).into_iter().fold(0.0, f64::max)
    }

    /// Delay presented to every sub-surface (row-major), with each module
    /// saturated at `clamp` when given.
    pub fn cumulative_delays(&self, clamp: Option<f64>) -> Vec<f64> {
        let first = chain_taps(&self.first_layer, self.first_routing, clamp);
        let mut out = Vec::with_capacity(self.k_y * self.k_z);
        for (row, feed) in first.iter().enumerate() {
            let deltas = &self.second_layer[row * (self.k_z - 1)..(row + 1) * (self.k_z - 1)];
            out.extend(
                chain_taps(deltas, self.second_routing, clamp)
                    .into_iter()
                    .map(|t| feed + t),
            );
        }
        let min = out.iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            out.iter_mut().for_each(|t| *t -= min);
        }
        out
    }
}

#[inline]
fn saturate(delay: f64, clamp: Option<f64>) -> f64 {
    match clamp {
        Some(t) => delay.min(t),
        None => delay,
    }
}

/// Delay at each of the `deltas.len() + 1` taps of one chain.
fn chain_taps(deltas: &[f64], routing: LayerRouting, clamp: Option<f64>) -> Vec<f64> {
    let eff: Vec<f64> = deltas
        .iter()
        .map(|d| d.signum() * saturate(d.abs(), clamp))
        .collect();
    let mut taps = vec![0.0; deltas.len() + 1];
    match routing {
        LayerRouting::Forward | LayerRouting::PerModule => {
            for (i, e) in eff.iter().enumerate() {
                taps[i + 1] = taps[i] + e;
            }
        }
        LayerRouting::Reverse => {
            for i in (0..eff.len()).rev() {
                taps[i] = taps[i + 1] - eff[i];
            }
        }
    }
    taps
}

/// One delay line per element, seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerElementDelayConfig {
    #[serde(rename = "tau_s")]
    pub tau: Vec<f64>,
}

impl PerElementDelayConfig {
    /// Delays as realised by non-negative delay lines: shifted by the most
    /// negative entry when there is one, saturated at `clamp` when given.
    pub fn routed(&self, clamp: Option<f64>) -> Vec<f64> {
        let min = self.tau.iter().copied().fold(f64::INFINITY, f64::min);
        let shift = if min < 0.0 { -min } else { 0.0 };
        self.tau
            .iter()
            .map(|t| saturate(t + shift, clamp))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DelayNetwork {
    None,
    Dldd(DlddDelayNetwork),
    PerElement(PerElementDelayConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    Narrowband,
    Dldd,
    PerElement,
}

impl DesignKind {
    pub const ALL: [DesignKind; 3] = [
        DesignKind::Narrowband,
        DesignKind::Dldd,
        DesignKind::PerElement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DesignKind::Narrowband => "narrowband",
            DesignKind::Dldd => "dldd",
            DesignKind::PerElement => "per-element",
        }
    }
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "narrowband" => Ok(DesignKind::Narrowband),
            "dldd" => Ok(DesignKind::Dldd),
            "per-element" => Ok(DesignKind::PerElement),
            other => Err(Error::InvalidArgument(format!(
                "unknown design `{other}` (expected narrowband, dldd or per-element)"
            ))),
        }
    }
}

/// A complete reflection design for one panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerConfig {
    pub kind: DesignKind,
    pub layout: IrsLayout,
    pub partition: Option<SubsurfacePartition>,
    /// Frequency at which the phase shifters were aligned, Hz.
    #[serde(rename = "reference_frequency_hz")]
    pub reference_frequency: f64,
    #[serde(rename = "phases_rad")]
    pub phases: PhaseShiftConfig,
    #[serde(rename = "delay_network")]
    pub delays: DelayNetwork,
}

/// Frequency-independent parts of the reflection: element `n` reflects
/// with `exp(j (offset[n] - 2 pi f delay[n]))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectionTerms {
    pub offset: Vec<f64>,
    pub delay: Vec<f64>,
}

impl ReflectionTerms {
    pub fn coefficient(&self, n: usize, f: f64) -> Complex64 {
        Complex64::from_polar(1.0, self.offset[n] - TAU * f * self.delay[n])
    }
}

impl BeamformerConfig {
    pub fn element_count(&self) -> usize {
        self.phases.len()
    }

    /// Delay presented to each element, with modules saturated at `clamp`.
    pub fn element_delays(&self, clamp: Option<f64>) -> Vec<f64> {
        match &self.delays {
            DelayNetwork::None => vec![0.0; self.element_count()],
            DelayNetwork::PerElement(pe) => pe.routed(clamp),
            DelayNetwork::Dldd(net) => {
                let per_subsurface = net.cumulative_delays(clamp);
                let part = self
                    .partition
                    .expect("DLDD configuration always carries its partition");
                let mut out = Vec::with_capacity(self.element_count());
                for ay in 0..self.layout.n_y {
                    for az in 0..self.layout.n_z {
                        out.push(per_subsurface[(ay / part.s) * part.k_z + az / part.s]);
                    }
                }
                out
            }
        }
    }

    /// Reflection terms with every delay module saturated at `clamp`.
    ///
    /// When a module saturates, the phase shifter absorbs the shortfall at
    /// the reference frequency, so the design stays aligned there and only
    /// the frequency slope is lost. Without a clamp this is exactly
    /// `theta_n - 2 pi f tau_n`.
    pub fn reflection_terms(&self, clamp: Option<f64>) -> Result<ReflectionTerms> {
        if let Some(t) = clamp {
            if t.is_nan() || t < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "delay clamp must be non-negative, got {t}"
                )));
            }
        }
        let ideal = self.element_delays(None);
        let realised = match clamp {
            None => ideal.clone(),
            Some(_) => self.element_delays(clamp),
        };
        let offset = self
            .phases
            .as_slice()
            .iter()
            .zip(ideal.iter().zip(&realised))
            .map(|(theta, (t, r))| theta - TAU * self.reference_frequency * (t - r))
            .collect();
        Ok(ReflectionTerms {
            offset,
            delay: realised,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Unit-magnitude reflection coefficient of every element at `f`.
pub fn effective_reflection(
    config: &BeamformerConfig,
    f: f64,
    clamp: Option<f64>,
) -> Result<Vec<Complex64>> {
    let terms = config.reflection_terms(clamp)?;
    Ok((0..config.element_count())
        .map(|n| terms.coefficient(n, f))
        .collect())
}

/// Phase-only design aligning every element at the carrier.
pub fn narrowband_design(scene: &SceneGeometry, grid: &FrequencyGrid) -> Result<BeamformerConfig> {
    let k = TAU / grid.wavelength();
    let diffs = scene.path_differences()?;
    Ok(BeamformerConfig {
        kind: DesignKind::Narrowband,
        layout: scene.layout,
        partition: None,
        reference_frequency: grid.center(),
        phases: PhaseShiftConfig::wrapped(diffs.iter().map(|d| k * d)),
        delays: DelayNetwork::None,
    })
}

/// One dedicated delay per sub-surface, `-inter / c`, row-major.
pub fn required_subsurface_delays(decomp: &CascadedDecomposition) -> Vec<f64> {
    decomp
        .inter_delta_r
        .iter()
        .map(|dr| -dr / SPEED_OF_LIGHT)
        .collect()
}

/// Delay line per element cancelling the cascaded path difference at
/// every frequency.
pub fn per_element_td_design(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
) -> Result<BeamformerConfig> {
    let diffs = scene.path_differences()?;
    Ok(BeamformerConfig {
        kind: DesignKind::PerElement,
        layout: scene.layout,
        partition: None,
        reference_frequency: grid.center(),
        phases: PhaseShiftConfig::zeros(diffs.len()),
        delays: DelayNetwork::PerElement(PerElementDelayConfig {
            tau: diffs.iter().map(|d| -d / SPEED_OF_LIGHT).collect(),
        }),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DelayGroup {
    Subsurface,
    FirstLayer,
    SecondLayer,
}

/// A set of delays whose signs disagree. Each index names the 1-based
/// `(k_y, k_z)` sub-surface at the upstream end of the offending module
/// (or the sub-surface itself for [`DelayGroup::Subsurface`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignInconsistency {
    pub group: DelayGroup,
    pub offending: Vec<(usize, usize)>,
}

impl fmt::Display for SignInconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?} delays have mixed signs at {} position(s), first {:?}",
            self.group,
            self.offending.len(),
            self.offending.first()
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    pub subsurface: Polarity,
    pub first_layer: Polarity,
    pub second_layer: Polarity,
    pub feed_column: usize,
    pub issues: Vec<SignInconsistency>,
}

impl SignReport {
    pub fn consistent(&self) -> bool {
        self.issues.is_empty()
    }

    /// Common sign of the per-sub-surface delays, when they share one.
    pub fn sign(&self) -> Option<i8> {
        match self.subsurface {
            Polarity::Positive => Some(1),
            Polarity::Negative => Some(-1),
            Polarity::Mixed => None,
        }
    }
}

struct LayerDeltas {
    first: Vec<f64>,
    second: Vec<f64>,
    feed_column: usize,
}

fn layer_deltas(tau: &[f64], k_y: usize, k_z: usize) -> LayerDeltas {
    let at = |ky: usize, kz: usize| tau[ky * k_z + kz];
    let mut second = Vec::with_capacity(k_y * (k_z.saturating_sub(1)));
    for ky in 0..k_y {
        for kz in 0..k_z.saturating_sub(1) {
            second.push(at(ky, kz + 1) - at(ky, kz));
        }
    }
    // A reversed second layer is fed from its last tap, so that column is
    // the one the first layer has to equalise.
    let feed = match LayerRouting::of(&second) {
        LayerRouting::Reverse => k_z - 1,
        _ => 0,
    };
    let first = (0..k_y.saturating_sub(1))
        .map(|ky| at(ky + 1, feed) - at(ky, feed))
        .collect();
    LayerDeltas {
        first,
        second,
        feed_column: feed + 1,
    }
}

fn minority(values: &[f64], index: impl Fn(usize) -> (usize, usize)) -> Vec<(usize, usize)> {
    let pos = values.iter().filter(|&&v| v > 0.0).count();
    let neg = values.iter().filter(|&&v| v < 0.0).count();
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| if pos >= neg { v < 0.0 } else { v > 0.0 })
        .map(|(i, _)| index(i))
        .collect()
}

/// Checks that the sub-surface delays and each layer's deltas share one sign.
pub fn sign_consistency_check(
    decomp: &CascadedDecomposition,
    partition: &SubsurfacePartition,
) -> SignReport {
    let (k_y, k_z) = (partition.k_y, partition.k_z);
    let tau = required_subsurface_delays(decomp);
    let deltas = layer_deltas(&tau, k_y, k_z);
    let mut issues = Vec::new();
    let groups = [
        (DelayGroup::Subsurface, &tau),
        (DelayGroup::FirstLayer, &deltas.first),
        (DelayGroup::SecondLayer, &deltas.second),
    ];
    for (group, values) in groups {
        if polarity(values) == Polarity::Mixed {
            let feed = deltas.feed_column;
            let offending = minority(values, |i| match group {
                DelayGroup::Subsurface => (i / k_z + 1, i % k_z + 1),
                DelayGroup::FirstLayer => (i + 1, feed),
                DelayGroup::SecondLayer => (i / (k_z - 1) + 1, i % (k_z - 1) + 1),
            });
            issues.push(SignInconsistency { group, offending });
        }
    }
    SignReport {
        subsurface: polarity(&tau),
        first_layer: polarity(&deltas.first),
        second_layer: polarity(&deltas.second),
        feed_column: deltas.feed_column,
        issues,
    }
}

/// A design together with anything noteworthy found while building it.
#[derive(Debug, Clone)]
pub struct Designed {
    pub config: BeamformerConfig,
    pub warnings: Vec<SignInconsistency>,
}

pub fn dldd_design(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    partition: &SubsurfacePartition,
) -> Result<Designed> {
    dldd_design_with(scene, grid, partition, PiecewiseForm::Corrected)
}

pub fn dldd_design_with(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    partition: &SubsurfacePartition,
    form: PiecewiseForm,
) -> Result<Designed> {
    let decomp = cascaded_decomposition_with(scene, partition, form)?;
    let tau = required_subsurface_delays(&decomp);
    let deltas = layer_deltas(&tau, partition.k_y, partition.k_z);
    let report = sign_consistency_check(&decomp, partition);
    let warnings: Vec<SignInconsistency> = report
        .issues
        .into_iter()
        .filter(|i| i.group != DelayGroup::Subsurface)
        .collect();
    for w in &warnings {
        log::warn!("DLDD routing falls back to per-module signs: {w}");
    }

    let k = TAU * grid.center() / SPEED_OF_LIGHT;
    let phases = PhaseShiftConfig::wrapped(decomp.intra_delta_phi.iter().map(|p| -k * p));
    let network = DlddDelayNetwork {
        k_y: partition.k_y,
        k_z: partition.k_z,
        first_routing: LayerRouting::of(&deltas.first),
        second_routing: LayerRouting::of(&deltas.second),
        first_layer: deltas.first,
        second_layer: deltas.second,
        feed_column: deltas.feed_column,
    };
    Ok(Designed {
        config: BeamformerConfig {
            kind: DesignKind::Dldd,
            layout: scene.layout,
            partition: Some(*partition),
            reference_frequency: grid.center(),
            phases,
            delays: DelayNetwork::Dldd(network),
        },
        warnings,
    })
}

/// Builds any of the three designs. `partition` is only used by DLDD.
pub fn design(
    kind: DesignKind,
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    partition: &SubsurfacePartition,
    form: PiecewiseForm,
) -> Result<Designed> {
    let config = match kind {
        DesignKind::Narrowband => narrowband_design(scene, grid)?,
        DesignKind::PerElement => per_element_td_design(scene, grid)?,
        DesignKind::Dldd => return dldd_design_with(scene, grid, partition, form),
    };
    Ok(Designed {
        config,
        warnings: Vec::new(),
    })
}

/// Physical cumulative delay presented to sub-surface `(ky, kz)`.
pub fn cumulative_delay(network: &DlddDelayNetwork, ky: usize, kz: usize) -> Result<f64> {
    if ky == 0 || ky > network.k_y {
        return Err(Error::IndexOutOfRange {
            what: "sub-surface y",
            index: ky,
            len: network.k_y,
        });
    }
    if kz == 0 || kz > network.k_z {
        return Err(Error::IndexOutOfRange {
            what: "sub-surface z",
            index: kz,
            len: network.k_z,
        });
    }
    Ok(network.cumulative_delays(None)[(ky - 1) * network.k_z + (kz - 1)])
}

/// Number of delay modules a DLDD network needs, `(K_y - 1) + K_y (K_z - 1)`.
pub fn td_module_count(partition: &SubsurfacePartition) -> usize {
    (partition.k_y - 1) + partition.k_y * (partition.k_z - 1)
}

/// Largest delay any single module of the design must realise.
pub fn required_delay_range(config: &BeamformerConfig) -> Result<f64> {
    match &config.delays {
        DelayNetwork::None => Err(Error::InvalidArgument("design has no delay network".into())),
        DelayNetwork::Dldd(net) => Ok(net.max_module_delay()),
        DelayNetwork::PerElement(pe) => Ok(pe.routed(None).into_iter().fold(0.0, f64::max)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::cascaded_decomposition;
    use crate::geometry::{Endpoint, Point3};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid() -> FrequencyGrid {
        FrequencyGrid::new(300e9, 30e9, 128).unwrap()
    }

    fn scene(n: usize) -> SceneGeometry {
        let layout = IrsLayout::half_wavelength(n, n, grid().wavelength()).unwrap();
        SceneGeometry::new(
            Point3::new(0.0, 1.5, -1.5),
            Point3::new(2.0, -4.0, -2.0),
            layout,
        )
        .unwrap()
    }

    fn gain_at(scene: &SceneGeometry, config: &BeamformerConfig, f: f64) -> f64 {
        let diffs = scene.path_differences().unwrap();
        let coef = effective_reflection(config, f, None).unwrap();
        let k = TAU * f / SPEED_OF_LIGHT;
        let sum: Complex64 = diffs
            .iter()
            .zip(&coef)
            .map(|(d, c)| Complex64::from_polar(1.0, -k * d) * c)
            .sum();
        sum.norm() / diffs.len() as f64
    }

    #[test]
    fn phase_config_rejects_out_of_range() {
        assert!(PhaseShiftConfig::new(vec![0.0, 1.0, 6.0]).is_ok());
        assert!(PhaseShiftConfig::new(vec![TAU]).is_err());
        assert!(PhaseShiftConfig::new(vec![-0.1]).is_err());
        let w = PhaseShiftConfig::wrapped([-1e-18, 7.0, -TAU]);
        assert!(w.as_slice().iter().all(|p| (0.0..TAU).contains(p)));
    }

    #[test]
    fn narrowband_cancels_at_carrier() {
        let s = scene(30);
        let cfg = narrowband_design(&s, &grid()).unwrap();
        assert_abs_diff_eq!(gain_at(&s, &cfg, 300e9), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn narrowband_zero_for_mirrored_scene() {
        let layout = IrsLayout::half_wavelength(10, 10, grid().wavelength()).unwrap();
        let s = SceneGeometry::new(
            Point3::new(1.0, 0.3, 0.2),
            Point3::new(-1.0, 0.3, 0.2),
            layout,
        )
        .unwrap();
        let cfg = narrowband_design(&s, &grid()).unwrap();
        assert!(cfg.phases.as_slice().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn subsurface_delay_examples() {
        let dec = CascadedDecomposition {
            k_y: 1,
            k_z: 3,
            inter_delta_r: vec![-3.0, 0.0, -2.777_66],
            intra_delta_phi: vec![],
            owner: vec![],
        };
        let tau = required_subsurface_delays(&dec);
        // 10,000 ps holds for c = 3e8; exact c is 0.07% off.
        assert_abs_diff_eq!(tau[0] * 1e12, 10_000.0, epsilon = 10_000.0 * 1e-3);
        assert_abs_diff_eq!(tau[0], 3.0 / SPEED_OF_LIGHT, epsilon = 1e-24);
        assert_eq!(tau[1], 0.0);
        assert_abs_diff_eq!(tau[2] * 1e12, 9265.2, epsilon = 0.5);
    }

    #[test]
    fn module_count_examples() {
        let layout = IrsLayout::new(100, 100, 1e-3).unwrap();
        let p = |k| SubsurfacePartition::new(&layout, k, k).unwrap();
        assert_eq!(td_module_count(&p(10)), 99);
        assert_eq!(td_module_count(&p(2)), 3);
        assert_eq!(td_module_count(&p(1)), 0);
    }

    #[test]
    fn single_subsurface_dldd_has_no_delays() {
        let s = scene(20);
        let part = SubsurfacePartition::whole(&s.layout).unwrap();
        let d = dldd_design(&s, &grid(), &part).unwrap();
        let DelayNetwork::Dldd(net) = &d.config.delays else {
            panic!()
        };
        assert_eq!(net.module_count(), 0);
        assert_eq!(required_delay_range(&d.config).unwrap(), 0.0);
        assert_eq!(cumulative_delay(net, 1, 1).unwrap(), 0.0);
        let dec = cascaded_decomposition(&s, &part).unwrap();
        let k = TAU * 300e9 / SPEED_OF_LIGHT;
        for (p, intra) in d.config.phases.as_slice().iter().zip(&dec.intra_delta_phi) {
            assert_abs_diff_eq!(*p, wrap_phase(-k * intra), epsilon = 1e-12);
        }
    }

    #[test]
    fn cumulative_delay_on_forward_network() {
        // BS and user swapped relative to the default scene flips every delta.
        let net = DlddDelayNetwork {
            k_y: 3,
            k_z: 3,
            first_layer: vec![2.0, 3.0],
            second_layer: vec![1.0, 1.0, 0.5, 0.5, 0.0, 4.0],
            first_routing: LayerRouting::Forward,
            second_routing: LayerRouting::Forward,
            feed_column: 1,
        };
        assert_eq!(cumulative_delay(&net, 1, 1).unwrap(), 0.0);
        assert_eq!(cumulative_delay(&net, 2, 1).unwrap(), 2.0);
        assert_eq!(cumulative_delay(&net, 3, 3).unwrap(), 9.0);
        assert!(cumulative_delay(&net, 4, 1).is_err());
    }

    #[test]
    fn reverse_chain_is_fed_from_the_far_end() {
        let taps = chain_taps(&[-1.0, -2.0], LayerRouting::Reverse, None);
        assert_eq!(taps, vec![3.0, 2.0, 0.0]);
        let clamped = chain_taps(&[-1.0, -2.0], LayerRouting::Reverse, Some(1.5));
        assert_eq!(clamped, vec![2.5, 1.5, 0.0]);
        let mixed = chain_taps(&[1.0, -2.0], LayerRouting::PerModule, None);
        assert_eq!(mixed, vec![0.0, 1.0, -1.0]);
    }

    #[test]
    fn default_scene_dldd_routing() {
        let s = scene(100);
        let part = SubsurfacePartition::new(&s.layout, 10, 10).unwrap();
        let d = dldd_design(&s, &grid(), &part).unwrap();
        assert!(d.warnings.is_empty());
        let DelayNetwork::Dldd(net) = &d.config.delays else {
            panic!()
        };
        assert_eq!(net.first_routing, LayerRouting::Forward);
        assert_eq!(net.second_routing, LayerRouting::Reverse);
        assert_eq!(net.feed_column, 10);
        assert_eq!(net.module_count(), 99);
        assert!(net.module_delays(None).iter().all(|&t| t >= 0.0));
        assert!(net.cumulative_delays(None).iter().all(|&t| t >= 0.0));
    }

    #[test]
    fn cumulative_delays_track_dedicated_delays() {
        let s = scene(100);
        let part = SubsurfacePartition::new(&s.layout, 10, 10).unwrap();
        let d = dldd_design(&s, &grid(), &part).unwrap();
        let DelayNetwork::Dldd(net) = &d.config.delays else {
            panic!()
        };
        let tau = required_subsurface_delays(&cascaded_decomposition(&s, &part).unwrap());
        let cum = net.cumulative_delays(None);
        for k in 0..100 {
            assert_abs_diff_eq!(cum[k] - cum[0], tau[k] - tau[0], epsilon = 1e-15);
        }
        let c = |ky, kz| cumulative_delay(net, ky, kz).unwrap();
        assert_abs_diff_eq!(c(10, 10) - c(1, 1), tau[99] - tau[0], epsilon = 1e-13);
    }

    #[test]
    fn per_element_cancels_everywhere() {
        let s = scene(30);
        let g = grid();
        let cfg = per_element_td_design(&s, &g).unwrap();
        for &f in g.frequencies() {
            assert_abs_diff_eq!(gain_at(&s, &cfg, f), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn single_element_per_element_design() {
        let layout = IrsLayout::new(1, 1, 1e-3).unwrap();
        let s = SceneGeometry::new(
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 1.0, 0.0),
            layout,
        )
        .unwrap();
        let cfg = per_element_td_design(&s, &grid()).unwrap();
        let DelayNetwork::PerElement(pe) = &cfg.delays else {
            panic!()
        };
        assert_eq!(pe.tau.len(), 1);
        assert_abs_diff_eq!(gain_at(&s, &cfg, 315e9), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn effective_reflection_basics() {
        let s = scene(10);
        let g = grid();
        let nb = narrowband_design(&s, &g).unwrap();
        let a = effective_reflection(&nb, 290e9, None).unwrap();
        let b = effective_reflection(&nb, 310e9, Some(1e-12)).unwrap();
        for ((x, y), th) in a.iter().zip(&b).zip(nb.phases.as_slice()) {
            assert_abs_diff_eq!((x - y).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(
                (x - Complex64::from_polar(1.0, *th)).norm(),
                0.0,
                epsilon = 1e-15
            );
        }
        let pe = per_element_td_design(&s, &g).unwrap();
        let z = effective_reflection(&pe, 0.0, None).unwrap();
        assert!(z
            .iter()
            .all(|c| (c - Complex64::new(1.0, 0.0)).norm() < 1e-15));
        assert!(effective_reflection(&pe, 3e11, Some(-1e-12)).is_err());
        assert!(effective_reflection(&pe, 3e11, Some(f64::NAN)).is_err());
    }

    #[test]
    fn zero_clamp_per_element_is_narrowband() {
        let s = scene(20);
        let g = grid();
        let pe = per_element_td_design(&s, &g).unwrap();
        let nb = narrowband_design(&s, &g).unwrap();
        for f in [g.first(), g.last()] {
            let a = effective_reflection(&pe, f, Some(0.0)).unwrap();
            let b = effective_reflection(&nb, f, None).unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn delay_range_needs_a_network() {
        let s = scene(10);
        let nb = narrowband_design(&s, &grid()).unwrap();
        assert!(required_delay_range(&nb).is_err());
    }

    #[test]
    fn design_kind_names_round_trip() {
        for k in DesignKind::ALL {
            assert_eq!(k.name().parse::<DesignKind>().unwrap(), k);
        }
        assert!("tdd".parse::<DesignKind>().is_err());
    }

    #[test]
    fn sign_check_default_and_mirror() {
        let s = scene(100);
        let part = SubsurfacePartition::new(&s.layout, 10, 10).unwrap();
        let r = sign_consistency_check(&cascaded_decomposition(&s, &part).unwrap(), &part);
        assert!(r.consistent());
        assert_eq!(r.sign(), Some(1));
        assert_eq!(r.first_layer, Polarity::Positive);
        assert_eq!(r.second_layer, Polarity::Negative);

        let layout = IrsLayout::half_wavelength(20, 20, grid().wavelength()).unwrap();
        let m = SceneGeometry::new(
            Point3::new(1.0, 0.5, 0.5),
            Point3::new(-1.0, 0.5, 0.5),
            layout,
        )
        .unwrap();
        let mp = SubsurfacePartition::new(&layout, 4, 4).unwrap();
        let r = sign_consistency_check(&cascaded_decomposition(&m, &mp).unwrap(), &mp);
        assert!(r.consistent());
    }

    #[test]
    fn mixed_signs_are_reported_with_indices() {
        // BS and user on the same side at nearly matching y direction cosines.
        let layout = IrsLayout::half_wavelength(40, 40, grid().wavelength()).unwrap();
        let s = SceneGeometry::new(
            Point3::new(0.5, 0.0, 0.3),
            Point3::new(5.0, 0.0, -3.0),
            layout,
        )
        .unwrap();
        let part = SubsurfacePartition::new(&layout, 8, 8).unwrap();
        let d = dldd_design(&s, &grid(), &part).unwrap();
        assert!(!d.warnings.is_empty());
        let w = &d.warnings[0];
        assert!(!w.offending.is_empty());
        let DelayNetwork::Dldd(net) = &d.config.delays else {
            panic!()
        };
        assert!(net.cumulative_delays(None).iter().all(|&t| t >= 0.0));
        assert!(
            net.first_routing == LayerRouting::PerModule
                || net.second_routing == LayerRouting::PerModule
        );
    }

    #[test]
    fn json_export_shape() {
        let s = scene(20);
        let part = SubsurfacePartition::new(&s.layout, 4, 4).unwrap();
        let d = dldd_design(&s, &grid(), &part).unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.config.to_json().unwrap()).unwrap();
        assert_eq!(v["kind"], "dldd");
        assert_eq!(v["phases_rad"].as_array().unwrap().len(), 400);
        assert_eq!(v["delay_network"]["type"], "dldd");
        assert_eq!(
            v["delay_network"]["first_layer_s"]
                .as_array()
                .unwrap()
                .len(),
            3
        );
        assert_eq!(
            v["delay_network"]["second_layer_s"]
                .as_array()
                .unwrap()
                .len(),
            12
        );
        assert_eq!(v["partition"]["s"], 5);
        let back: BeamformerConfig = serde_json::from_value(v).unwrap();
        assert_eq!(back, d.config);
    }

    #[test]
    fn endpoint_helper() {
        let s = scene(4);
        assert_eq!(s.endpoint(Endpoint::Bs), s.bs);
    }

    proptest! {
        #[test]
        fn module_count_is_k_minus_one(ky in 1usize..30, kz in 1usize..30) {
            let part = SubsurfacePartition { k_y: ky, k_z: kz, s: 1 };
            prop_assert_eq!(td_module_count(&part), ky * kz - 1);
        }

        #[test]
        fn row_telescoping(deltas in proptest::collection::vec(-5e-12f64..5e-12, 1..12), reverse in any::<bool>()) {
            let deltas: Vec<f64> = deltas.iter().map(|d| if reverse { -d.abs() } else { d.abs() }).collect();
            let routing = LayerRouting::of(&deltas);
            let taps = chain_taps(&deltas, routing, None);
            let mut acc = 0.0;
            for (i, d) in deltas.iter().enumerate() {
                acc += d;
                prop_assert!((taps[i + 1] - taps[0] - acc).abs() < 1e-24);
            }
            prop_assert!(taps.iter().all(|&t| t >= -1e-24));
        }

        #[test]
        fn global_offsets_do_not_change_gain(shift in 0.0f64..TAU, delay in 0.0f64..1e-9) {
            let s = scene(12);
            let g = grid();
            let mut cfg = per_element_td_design(&s, &g).unwrap();
            let base: Vec<f64> = [g.first(), g.last()].iter().map(|&f| gain_at(&s, &cfg, f)).collect();
            cfg.phases = PhaseShiftConfig::wrapped(cfg.phases.as_slice().iter().map(|p| p + shift));
            if let DelayNetwork::PerElement(pe) = &mut cfg.delays {
                pe.tau.iter_mut().for_each(|t| *t += delay);
            }
            for (i, &f) in [g.first(), g.last()].iter().enumerate() {
                prop_assert!((gain_at(&s, &cfg, f) - base[i]).abs() < 1e-9);
            }
        }
    }
}
