//! Line-of-sight channels between the panel and one endpoint, exact
//! (spherical wavefront per element) or piece-wise far-field (planar
//! wavefront per sub-surface), and the inter/intra split of the cascaded
//! path length.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    centred, element_distances_to, link_angles, Endpoint, FrequencyGrid, IrsLayout, LinkAngles,
    SceneGeometry, SubsurfacePartition, SPEED_OF_LIGHT,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelModel {
    Exact,
    Piecewise,
}

/// Form of the linear intra-sub-surface term.
///
/// `Corrected` is the first-order expansion `r_k - oz cos(ele) - oy sin(ele) sin(azi)`.
/// `Printed` multiplies the z term by `r_k` as well; it exists only to
/// reproduce that variant and is not dimensionally consistent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PiecewiseForm {
    #[default]
    Corrected,
    Printed,
}

/// Complex gain per (element, subcarrier).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    model: ChannelModel,
    normalized: bool,
    elements: usize,
    frequencies: Vec<f64>,
    // subcarrier-major: gains[m * elements + n]
    gains: Vec<Complex64>,
}

impl ChannelSet {
    pub fn model(&self) -> ChannelModel {
        self.model
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn element_count(&self) -> usize {
        self.elements
    }

    pub fn subcarrier_count(&self) -> usize {
        self.frequencies.len()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn get(&self, n: usize, m: usize) -> Complex64 {
        self.gains[m * self.elements + n]
    }

    /// All element gains at subcarrier `m`.
    pub fn subcarrier(&self, m: usize) -> &[Complex64] {
        &self.gains[m * self.elements..(m + 1) * self.elements]
    }

    /// Element-wise `conj(user) * bs`, the cascaded BS-IRS-user gain before
    /// reflection.
    pub fn cascade(bs: &ChannelSet, user: &ChannelSet) -> Result<ChannelSet> {
        if bs.elements != user.elements || bs.frequencies != user.frequencies {
            return Err(Error::InvalidArgument(
                "cascaded channels must share elements and subcarriers".into(),
            ));
        }
        let gains = bs
            .gains
            .iter()
            .zip(&user.gains)
            .map(|(g, h)| h.conj() * g)
            .collect();
        Ok(ChannelSet {
            model: if bs.model == ChannelModel::Exact && user.model == ChannelModel::Exact {
                ChannelModel::Exact
            } else {
                ChannelModel::Piecewise
            },
            normalized: bs.normalized && user.normalized,
            elements: bs.elements,
            frequencies: bs.frequencies.clone(),
            gains,
        })
    }
}

/// Free-space amplitude factor `c / (4 pi f)`.
pub fn path_loss_factor(f: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * f)
}

/// Spherical-wave channel to one endpoint.
pub fn exact_los_channel(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    endpoint: Endpoint,
    normalized: bool,
) -> Result<ChannelSet> {
    let ranges = scene.element_distances(endpoint)?;
    let gains = synthesize(&ranges, grid.frequencies(), |f, r| {
        if normalized {
            1.0
        } else {
            path_loss_factor(f) / r
        }
    });
    Ok(ChannelSet {
        model: ChannelModel::Exact,
        normalized,
        elements: ranges.len(),
        frequencies: grid.frequencies().to_vec(),
        gains,
    })
}

/// Unit-magnitude piece-wise far-field channel to one endpoint.
pub fn piecewise_channel(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    partition: &SubsurfacePartition,
    endpoint: Endpoint,
) -> Result<ChannelSet> {
    piecewise_channel_with(scene, grid, partition, endpoint, PiecewiseForm::Corrected)
}

pub fn piecewise_channel_with(
    scene: &SceneGeometry,
    grid: &FrequencyGrid,
    partition: &SubsurfacePartition,
    endpoint: Endpoint,
    form: PiecewiseForm,
) -> Result<ChannelSet> {
    // The exact distances are only needed for the degenerate-geometry check.
    element_distances_to(&scene.layout, scene.endpoint(endpoint))?;
    let ranges = piecewise_distances(&scene.layout, partition, scene.endpoint(endpoint), form)?;
    let gains = synthesize(&ranges, grid.frequencies(), |_, _| 1.0);
    Ok(ChannelSet {
        model: ChannelModel::Piecewise,
        normalized: true,
        elements: ranges.len(),
        frequencies: grid.frequencies().to_vec(),
        gains,
    })
}

fn synthesize<A>(ranges: &[f64], frequencies: &[f64], amplitude: A) -> Vec<Complex64>
where
    A: Fn(f64, f64) -> f64 + Sync,
{
    let n = ranges.len();
    let mut gains = vec![Complex64::new(0.0, 0.0); n * frequencies.len()];
    gains
        .par_chunks_mut(n)
        .zip(frequencies.par_iter())
        .for_each(|(row, &f)| {
            let k = 2.0 * PI * f / SPEED_OF_LIGHT;
            for (g, &r) in row.iter_mut().zip(ranges) {
                *g = Complex64::from_polar(amplitude(f, r), -k * r);
            }
        });
    gains
}

/// Per-sub-surface link angles to `endpoint`, row-major.
pub(crate) fn subsurface_links(
    layout: &IrsLayout,
    partition: &SubsurfacePartition,
    endpoint: crate::geometry::Point3,
) -> Result<Vec<LinkAngles>> {
    if !partition.fits(layout) {
        return Err(Error::InvalidPartition(
            "partition does not match the panel layout".into(),
        ));
    }
    partition
        .centers(layout)
        .into_iter()
        .map(|c| link_angles(endpoint, c))
        .collect()
}

/// Linear intra-sub-surface path term for offsets `(oy, oz)` from the centre.
#[inline]
fn intra_term(link: &LinkAngles, oy: f64, oz: f64, form: PiecewiseForm) -> f64 {
    let z_term = match form {
        PiecewiseForm::Corrected => oz * link.cos_elevation,
        PiecewiseForm::Printed => oz * link.range * link.cos_elevation,
    };
    oy * link.y_cosine() + z_term
}

/// Visits every element with its sub-surface index and centred offsets.
fn for_each_slot(
    layout: &IrsLayout,
    partition: &SubsurfacePartition,
    mut visit: impl FnMut(usize, f64, f64),
) {
    let s = partition.s;
    let d = layout.spacing;
    for ay in 0..layout.n_y {
        for az in 0..layout.n_z {
            let k = (ay / s) * partition.k_z + az / s;
            let oy = centred(ay % s, s) * d;
            let oz = centred(az % s, s) * d;
            visit(k, oy, oz);
        }
    }
}

/// Approximate element distances `r_k - phi` in row-major order.
pub fn piecewise_distances(
    layout: &IrsLayout,
    partition: &SubsurfacePartition,
    endpoint: crate::geometry::Point3,
    form: PiecewiseForm,
) -> Result<Vec<f64>> {
    let links = subsurface_links(layout, partition, endpoint)?;
    let mut out = Vec::with_capacity(layout.element_count());
    for_each_slot(layout, partition, |k, oy, oz| {
        let link = &links[k];
        out.push(link.range - intra_term(link, oy, oz, form));
    });
    Ok(out)
}

/// Cascaded path length split into a per-sub-surface part and a
/// per-element remainder: `r_br - r_ru ~= inter[k(n)] - intra[n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadedDecomposition {
    pub k_y: usize,
    pub k_z: usize,
    /// `r_br,k - r_ru,k` per sub-surface, meters, row-major.
    pub inter_delta_r: Vec<f64>,
    /// `phi_br - phi_ru` per element, meters, row-major.
    pub intra_delta_phi: Vec<f64>,
    /// Sub-surface of each element.
    pub owner: Vec<usize>,
}

impl CascadedDecomposition {
    pub fn inter(&self, ky: usize, kz: usize) -> f64 {
        self.inter_delta_r[(ky - 1) * self.k_z + (kz - 1)]
    }

    /// Piece-wise cascaded phase `-2 pi f/c (inter - intra)` per element.
    pub fn cascaded_phase(&self, f: f64) -> Vec<f64> {
        let k = 2.0 * PI * f / SPEED_OF_LIGHT;
        self.intra_delta_phi
            .iter()
            .zip(&self.owner)
            .map(|(&intra, &o)| -k * (self.inter_delta_r[o] - intra))
            .collect()
    }
}

pub fn cascaded_decomposition(
    scene: &SceneGeometry,
    partition: &SubsurfacePartition,
) -> Result<CascadedDecomposition> {
    cascaded_decomposition_with(scene, partition, PiecewiseForm::Corrected)
}

pub fn cascaded_decomposition_with(
    scene: &SceneGeometry,
    partition: &SubsurfacePartition,
    form: PiecewiseForm,
) -> Result<CascadedDecomposition> {
    let layout = &scene.layout;
    let br = subsurface_links(layout, partition, scene.bs)?;
    let ru = subsurface_links(layout, partition, scene.user)?;
    let inter_delta_r = br.iter().zip(&ru).map(|(b, u)| b.range - u.range).collect();
    let mut intra_delta_phi = Vec::with_capacity(layout.element_count());
    let mut owner = Vec::with_capacity(layout.element_count());
    for_each_slot(layout, partition, |k, oy, oz| {
        intra_delta_phi.push(intra_term(&br[k], oy, oz, form) - intra_term(&ru[k], oy, oz, form));
        owner.push(k);
    });
    Ok(CascadedDecomposition {
        k_y: partition.k_y,
        k_z: partition.k_z,
        inter_delta_r,
        intra_delta_phi,
        owner,
    })
}
