//! Array gain, beam patterns and achievable rate, always evaluated against
//! the exact spherical-wave channel regardless of the model a design was
//! built from.
//!
//! Each gain is one sequential, compensated sum over the elements in
//! row-major order. Parallelism is only ever across subcarriers or
//! evaluation points, so results do not depend on thread scheduling.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::beamforming::{BeamformerConfig, ReflectionTerms};
use crate::error::{Error, Result};
use crate::geometry::{
    distance, element_distances_to, FrequencyGrid, Point3, SceneGeometry, SPEED_OF_LIGHT,
};

/// Neumaier-compensated accumulator for a sum of complex phasors.
#[derive(Debug, Default, Clone, Copy)]
pub struct PhasorSum {
    re: f64,
    im: f64,
    re_c: f64,
    im_c: f64,
}

impl PhasorSum {
    #[inline]
    pub fn add(&mut self, re: f64, im: f64) {
        neumaier(&mut self.re, &mut self.re_c, re);
        neumaier(&mut self.im, &mut self.im_c, im);
    }

    #[inline]
    pub fn add_polar(&mut self, amplitude: f64, phase: f64) {
        let (s, c) = phase.sin_cos();
        self.add(amplitude * c, amplitude * s);
    }

    pub fn norm(&self) -> f64 {
        (self.re + self.re_c).hypot(self.im + self.im_c)
    }
}

#[inline]
fn neumaier(sum: &mut f64, comp: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *comp += (*sum - t) + x;
    } else {
        *comp += (x - t) + *sum;
    }
    *sum = t;
}

/// Everything needed to evaluate a fixed design against exact channels
/// towards arbitrary receive points.
///
/// The phase of element `n` towards a receiver at range `r_n` is
/// `offset[n] - 2 pi f (lead[n] - r_n / c)` with
/// `lead[n] = r_br[n] / c + delay[n]`.
#[derive(Debug, Clone)]
pub struct GainEvaluator {
    positions: Vec<Point3>,
    offset: Vec<f64>,
    lead: Vec<f64>,
    bs_range: Vec<f64>,
    user_over_c: Vec<f64>,
}

impl GainEvaluator {
    pub fn new(
        scene: &SceneGeometry,
        config: &BeamformerConfig,
        clamp: Option<f64>,
    ) -> Result<Self> {
        if config.layout != scene.layout {
            return Err(Error::InvalidArgument(
                "beamformer was built for a different panel layout".into(),
            ));
        }
        let ReflectionTerms { offset, delay } = config.reflection_terms(clamp)?;
        let bs_range = element_distances_to(&scene.layout, scene.bs)?;
        let user = element_distances_to(&scene.layout, scene.user)?;
        let lead = bs_range
            .iter()
            .zip(&delay)
            .map(|(r, t)| r / SPEED_OF_LIGHT + t)
            .collect();
        Ok(Self {
            positions: scene.layout.positions(),
            offset,
            lead,
            bs_range,
            user_over_c: user.iter().map(|r| r / SPEED_OF_LIGHT).collect(),
        })
    }

    pub fn element_count(&self) -> usize {
        self.offset.len()
    }

    #[inline]
    fn phase(&self, n: usize, f: f64, rx_over_c: f64) -> f64 {
        self.offset[n] - TAU * f * (self.lead[n] - rx_over_c)
    }

    /// Normalized array gain at the scene's user.
    pub fn gain(&self, f: f64) -> f64 {
        let mut acc = PhasorSum::default();
        for (n, &r) in self.user_over_c.iter().enumerate() {
            acc.add_polar(1.0, self.phase(n, f, r));
        }
        acc.norm() / self.element_count() as f64
    }

    /// Normalized gains at `point` for several frequencies, sharing the
    /// distance computation.
    pub fn gains_at(&self, point: Point3, frequencies: &[f64]) -> Vec<f64> {
        let mut acc = vec![PhasorSum::default(); frequencies.len()];
        for (n, e) in self.positions.iter().enumerate() {
            let r = distance(*e, point) / SPEED_OF_LIGHT;
            for (a, &f) in acc.iter_mut().zip(frequencies) {
                a.add_polar(1.0, self.phase(n, f, r));
            }
        }
        let inv = 1.0 / self.element_count() as f64;
        acc.iter().map(|a| a.norm() * inv).collect()
    }

    /// `|sum_n alpha^2 / (r_br r_ru) e^{j phase}|`, the un-normalized
    /// cascaded amplitude at the user.
    pub fn cascaded_amplitude(&self, f: f64) -> f64 {
        let alpha = SPEED_OF_LIGHT / (4.0 * PI * f);
        let a2 = alpha * alpha;
        let mut acc = PhasorSum::default();
        for (n, &r) in self.user_over_c.iter().enumerate() {
            let amp = a2 / (self.bs_range[n] * r * SPEED_OF_LIGHT);
            acc.add_polar(amp, self.phase(n, f, r));
        }
        acc.norm()
    }
}

pub fn normalized_array_gain(
    scene: &SceneGeometry,
    config: &BeamformerConfig,
    f: f64,
) -> Result<f64> {
    Ok(GainEvaluator::new(scene, config, None)?.gain(f))
}

/// Normalized gain per subcarrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainProfile {
    pub frequencies: Vec<f64>,
    pub gains: Vec<f64>,
}

impl GainProfile {
    pub fn min(&self) -> f64 {
        self.gains.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn gain_profile(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    config: &BeamformerConfig,
) -> Result<GainProfile> {
    gain_profile_clamped(scene, grid, config, None)
}

/// Gain profile with every delay module saturated at `clamp`.
pub fn gain_profile_clamped(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    config: &BeamformerConfig,
    clamp: Option<f64>,
) -> Result<GainProfile> {
    let eval = GainEvaluator::new(scene, config, clamp)?;
    let gains = grid
        .frequencies()
        .par_iter()
        .map(|&f| eval.gain(f))
        .collect();
    Ok(GainProfile {
        frequencies: grid.frequencies().to_vec(),
        gains,
    })
}

/// Worse of the two band-edge gains.
pub fn edge_gain(profile: &GainProfile) -> Result<f64> {
    let g = &profile.gains;
    if g.len() < 2 {
        return Err(Error::InvalidArgument(
            "edge gain needs at least two subcarriers".into(),
        ));
    }
    Ok(g[0].min(g[g.len() - 1]))
}

/// Edge-subcarrier gain evaluated directly at the two band edges.
pub fn edge_gain_clamped(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    config: &BeamformerConfig,
    clamp: Option<f64>,
) -> Result<f64> {
    if grid.len() < 2 {
        return Err(Error::InvalidArgument(
            "edge gain needs at least two subcarriers".into(),
        ));
    }
    let eval = GainEvaluator::new(scene, config, clamp)?;
    Ok(eval.gain(grid.first()).min(eval.gain(grid.last())))
}

/// Horizontal evaluation rectangle at height `z`, sampled on an
/// `nx x ny` grid including its edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub z: f64,
    pub nx: usize,
    pub ny: usize,
}

impl PlaneSpec {
    pub fn validate(&self, scene: &SceneGeometry) -> Result<()> {
        let finite = [self.x_min, self.x_max, self.y_min, self.y_max, self.z]
            .iter()
            .all(|v| v.is_finite());
        if !finite
            || self.x_max <= self.x_min
            || self.y_max <= self.y_min
            || self.nx < 2
            || self.ny < 2
        {
            return Err(Error::InvalidArgument(format!(
                "degenerate evaluation plane {self:?}"
            )));
        }
        let l = &scene.layout;
        let half_y = (l.n_y - 1) as f64 * l.spacing / 2.0;
        let half_z = (l.n_z - 1) as f64 * l.spacing / 2.0;
        let crosses = self.x_min <= 0.0
            && self.x_max >= 0.0
            && self.z.abs() <= half_z
            && self.y_min <= half_y
            && self.y_max >= -half_y;
        if crosses {
            return Err(Error::InvalidArgument(
                "evaluation plane intersects the panel".into(),
            ));
        }
        Ok(())
    }

    pub fn x(&self, ix: usize) -> f64 {
        self.x_min + (self.x_max - self.x_min) * ix as f64 / (self.nx - 1) as f64
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.y_min + (self.y_max - self.y_min) * iy as f64 / (self.ny - 1) as f64
    }

    pub fn point(&self, ix: usize, iy: usize) -> Point3 {
        Point3::new(self.x(ix), self.y(iy), self.z)
    }

    /// Grid cell closest to `(x, y)`.
    pub fn nearest_cell(&self, x: f64, y: f64) -> (usize, usize) {
        let fx = (x - self.x_min) / (self.x_max - self.x_min) * (self.nx - 1) as f64;
        let fy = (y - self.y_min) / (self.y_max - self.y_min) * (self.ny - 1) as f64;
        let ix = fx.round().clamp(0.0, (self.nx - 1) as f64) as usize;
        let iy = fy.round().clamp(0.0, (self.ny - 1) as f64) as usize;
        (ix, iy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternPeak {
    pub frequency: f64,
    pub ix: usize,
    pub iy: usize,
    pub x: f64,
    pub y: f64,
    pub gain: f64,
}

impl PatternPeak {
    /// Chebyshev distance in grid cells to `cell`.
    pub fn cells_from(&self, cell: (usize, usize)) -> usize {
        self.ix.abs_diff(cell.0).max(self.iy.abs_diff(cell.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamPattern {
    pub plane: PlaneSpec,
    pub frequencies: Vec<f64>,
    /// `values[k][ix * ny + iy]` is the gain at frequency `k`.
    pub values: Vec<Vec<f64>>,
    pub peaks: Vec<PatternPeak>,
}

impl BeamPattern {
    pub fn value(&self, k: usize, ix: usize, iy: usize) -> f64 {
        self.values[k][ix * self.plane.ny + iy]
    }
}

/// Gain over a plane of receive points at each of `frequencies`.
pub fn beam_pattern(
    scene: &SceneGeometry,
    config: &BeamformerConfig,
    frequencies: &[f64],
    plane: &PlaneSpec,
) -> Result<BeamPattern> {
    plane.validate(scene)?;
    if frequencies.is_empty() {
        return Err(Error::InvalidArgument("no frequencies requested".into()));
    }
    let eval = GainEvaluator::new(scene, config, None)?;
    let cells: Vec<(usize, usize)> = (0..plane.nx)
        .flat_map(|ix| (0..plane.ny).map(move |iy| (ix, iy)))
        .collect();
    let per_cell: Vec<Vec<f64>> = cells
        .par_iter()
        .map(|&(ix, iy)| eval.gains_at(plane.point(ix, iy), frequencies))
        .collect();
    let values: Vec<Vec<f64>> = (0..frequencies.len())
        .map(|k| per_cell.iter().map(|g| g[k]).collect())
        .collect();
    let peaks = values
        .iter()
        .zip(frequencies)
        .map(|(v, &f)| {
            let (best, gain) = v
                .iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |acc, (i, &g)| if g > acc.1 { (i, g) } else { acc },
                );
            let (ix, iy) = cells[best];
            PatternPeak {
                frequency: f,
                ix,
                iy,
                x: plane.x(ix),
                y: plane.y(iy),
                gain,
            }
        })
        .collect();
    Ok(BeamPattern {
        plane: *plane,
        frequencies: frequencies.to_vec(),
        values,
        peaks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    /// Transmit power, W.
    pub power: f64,
    /// Noise power spectral density, W/Hz.
    pub noise_density: f64,
    /// bits/s/Hz per subcarrier.
    pub per_subcarrier: Vec<f64>,
    pub mean: f64,
}

/// Spectral efficiency with the power split equally over the subcarriers
/// and noise integrated over one subcarrier bandwidth.
pub fn achievable_rate(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    config: &BeamformerConfig,
    power: f64,
    noise_density: f64,
) -> Result<RateResult> {
    let eval = GainEvaluator::new(scene, config, None)?;
    let amplitudes: Vec<f64> = grid
        .frequencies()
        .par_iter()
        .map(|&f| eval.cascaded_amplitude(f))
        .collect();
    rate_from_amplitudes(&amplitudes, grid, power, noise_density)
}

/// Rates for a precomputed per-subcarrier cascaded amplitude, so power
/// sweeps need only one channel evaluation.
pub fn rate_from_amplitudes(
    amplitudes: &[f64],
    grid: &FrequencyGrid,
    power: f64,
    noise_density: f64,
) -> Result<RateResult> {
    if !(power > 0.0 && power.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "transmit power must be positive, got {power}"
        )));
    }
    if !(noise_density > 0.0 && noise_density.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "noise density must be positive, got {noise_density}"
        )));
    }
    let m = grid.len() as f64;
    let per_power = power / m;
    let noise = noise_density * grid.spacing().max(f64::MIN_POSITIVE);
    let per_subcarrier: Vec<f64> = amplitudes
        .iter()
        .map(|a| (1.0 + per_power * a * a / noise).log2())
        .collect();
    let mean = per_subcarrier.iter().sum::<f64>() / m;
    Ok(RateResult {
        power,
        noise_density,
        per_subcarrier,
        mean,
    })
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * (w * 1e3).log10()
}
