//! Coordinates and indexing for a uniform planar IRS centred at the origin
//! of the y-z plane.
//!
//! Elements and sub-surfaces are addressed with 1-based `(y, z)` index pairs.
//! Flattened tables throughout the crate use row-major order with `z` as the
//! fast axis: element `(iy, iz)` lives at `(iy - 1) * n_z + (iz - 1)`.

use std::ops::Sub;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Propagation speed in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl Sub for Point3 {
    type Output = Point3;

    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// Euclidean distance between two points.
pub fn distance(p: Point3, q: Point3) -> f64 {
    (p - q).norm()
}

/// Centred offset `a - (b - 1) / 2` of the `a`-th (0-based) slot on an axis of
/// `b` slots.
pub fn delta_index(a: usize, b: usize) -> Result<f64> {
    if a >= b {
        return Err(Error::InvalidArgument(format!(
            "offset index {a} outside 0..{b}"
        )));
    }
    Ok(centred(a, b))
}

#[inline]
pub(crate) fn centred(a: usize, b: usize) -> f64 {
    a as f64 - (b as f64 - 1.0) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IrsLayout {
    pub n_y: usize,
    pub n_z: usize,
    /// Element spacing in meters.
    pub spacing: f64,
}

impl IrsLayout {
    pub fn new(n_y: usize, n_z: usize, spacing: f64) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::InvalidArgument(format!(
                "element counts must be positive, got {n_y}x{n_z}"
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "element spacing must be positive and finite, got {spacing}"
            )));
        }
        Ok(Self { n_y, n_z, spacing })
    }

    /// Layout with half-wavelength spacing at `wavelength`.
    pub fn half_wavelength(n_y: usize, n_z: usize, wavelength: f64) -> Result<Self> {
        Self::new(n_y, n_z, wavelength / 2.0)
    }

    pub fn element_count(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn element_index(&self, iy: usize, iz: usize) -> Result<usize> {
        self.check(iy, iz)?;
        Ok((iy - 1) * self.n_z + (iz - 1))
    }

    pub fn element_position(&self, iy: usize, iz: usize) -> Result<Point3> {
        self.check(iy, iz)?;
        Ok(self.position_unchecked(iy - 1, iz - 1))
    }

    #[inline]
    pub(crate) fn position_unchecked(&self, ay: usize, az: usize) -> Point3 {
        Point3::new(
            0.0,
            centred(ay, self.n_y) * self.spacing,
            centred(az, self.n_z) * self.spacing,
        )
    }

    /// All element positions in row-major order.
    pub fn positions(&self) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.element_count());
        for ay in 0..self.n_y {
            for az in 0..self.n_z {
                out.push(self.position_unchecked(ay, az));
            }
        }
        out
    }

    /// Largest chord of the panel (its diagonal), meters.
    pub fn aperture(&self) -> f64 {
        let wy = (self.n_y - 1) as f64;
        let wz = (self.n_z - 1) as f64;
        self.spacing * (wy * wy + wz * wz).sqrt()
    }

    fn check(&self, iy: usize, iz: usize) -> Result<()> {
        if iy == 0 || iy > self.n_y {
            return Err(Error::IndexOutOfRange {
                what: "element y",
                index: iy,
                len: self.n_y,
            });
        }
        if iz == 0 || iz > self.n_z {
            return Err(Error::IndexOutOfRange {
                what: "element z",
                index: iz,
                len: self.n_z,
            });
        }
        Ok(())
    }
}

/// Fraunhofer distance `2 D^2 / lambda` with `D` the panel diagonal.
pub fn fraunhofer_distance(layout: &IrsLayout, wavelength: f64) -> f64 {
    let d = layout.aperture();
    2.0 * d * d / wavelength
}

/// Grouping of the panel into `k_y x k_z` square sub-surfaces of `s x s`
/// elements each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsurfacePartition {
    pub k_y: usize,
    pub k_z: usize,
    /// Elements per side of one sub-surface.
    pub s: usize,
}

/// Position of an element inside the partition, all indices 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ElementSlot {
    pub ky: usize,
    pub kz: usize,
    pub sy: usize,
    pub sz: usize,
}

impl SubsurfacePartition {
    pub fn new(layout: &IrsLayout, k_y: usize, k_z: usize) -> Result<Self> {
        if k_y == 0 || k_z == 0 {
            return Err(Error::InvalidPartition(format!(
                "sub-surface counts must be positive, got {k_y}x{k_z}"
            )));
        }
        if !layout.n_y.is_multiple_of(k_y) {
            return Err(Error::InvalidPartition(format!(
                "n_y = {} is not divisible by k_y = {k_y}",
                layout.n_y
            )));
        }
        if !layout.n_z.is_multiple_of(k_z) {
            return Err(Error::InvalidPartition(format!(
                "n_z = {} is not divisible by k_z = {k_z}",
                layout.n_z
            )));
        }
        let s = layout.n_y / k_y;
        if layout.n_z / k_z != s {
            return Err(Error::InvalidPartition(format!(
                "sub-surfaces must be square: n_y/k_y = {s} but n_z/k_z = {}",
                layout.n_z / k_z
            )));
        }
        Ok(Self { k_y, k_z, s })
    }

    /// Whole panel as a single sub-surface. Requires a square layout.
    pub fn whole(layout: &IrsLayout) -> Result<Self> {
        Self::new(layout, 1, 1)
    }

    pub fn count(&self) -> usize {
        self.k_y * self.k_z
    }

    pub fn fits(&self, layout: &IrsLayout) -> bool {
        self.s * self.k_y == layout.n_y && self.s * self.k_z == layout.n_z
    }

    pub fn subsurface_index(&self, ky: usize, kz: usize) -> Result<usize> {
        self.check(ky, kz)?;
        Ok((ky - 1) * self.k_z + (kz - 1))
    }

    pub fn subsurface_center(&self, layout: &IrsLayout, ky: usize, kz: usize) -> Result<Point3> {
        self.check(ky, kz)?;
        Ok(self.center_unchecked(layout.spacing, ky - 1, kz - 1))
    }

    #[inline]
    pub(crate) fn center_unchecked(&self, spacing: f64, ay: usize, az: usize) -> Point3 {
        let side = self.s as f64 * spacing;
        Point3::new(
            0.0,
            centred(ay, self.k_y) * side,
            centred(az, self.k_z) * side,
        )
    }

    /// Sub-surface centres in row-major order.
    pub fn centers(&self, layout: &IrsLayout) -> Vec<Point3> {
        let mut out = Vec::with_capacity(self.count());
        for ay in 0..self.k_y {
            for az in 0..self.k_z {
                out.push(self.center_unchecked(layout.spacing, ay, az));
            }
        }
        out
    }

    /// Sub-surface and in-sub-surface indices of element `(iy, iz)`.
    pub fn locate(&self, iy: usize, iz: usize) -> ElementSlot {
        ElementSlot {
            ky: (iy - 1) / self.s + 1,
            kz: (iz - 1) / self.s + 1,
            sy: (iy - 1) % self.s + 1,
            sz: (iz - 1) % self.s + 1,
        }
    }

    fn check(&self, ky: usize, kz: usize) -> Result<()> {
        if ky == 0 || ky > self.k_y {
            return Err(Error::IndexOutOfRange {
                what: "sub-surface y",
                index: ky,
                len: self.k_y,
            });
        }
        if kz == 0 || kz > self.k_z {
            return Err(Error::IndexOutOfRange {
                what: "sub-surface z",
                index: kz,
                len: self.k_z,
            });
        }
        Ok(())
    }
}

/// Trigonometric description of the link from a sub-surface centre to an
/// endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkAngles {
    pub sin_azimuth: f64,
    pub sin_elevation: f64,
    pub cos_elevation: f64,
    /// Distance from the centre to the endpoint.
    pub range: f64,
}

impl LinkAngles {
    /// Direction cosine along y, `sin(ele) * sin(azi)`.
    pub fn y_cosine(&self) -> f64 {
        self.sin_elevation * self.sin_azimuth
    }
}

pub fn link_angles(endpoint: Point3, center: Point3) -> Result<LinkAngles> {
    let rel = endpoint - center;
    let range = rel.norm();
    if range == 0.0 {
        return Err(Error::DegenerateGeometry(
            "endpoint coincides with the sub-surface centre".into(),
        ));
    }
    let horizontal = (rel.x * rel.x + rel.y * rel.y).sqrt();
    // Directly above or below the centre the azimuth is undefined; its
    // product with sin(ele) = 0 is what enters the channel.
    let sin_azimuth = if horizontal == 0.0 {
        0.0
    } else {
        rel.y / horizontal
    };
    Ok(LinkAngles {
        sin_azimuth,
        sin_elevation: horizontal / range,
        cos_elevation: rel.z / range,
        range,
    })
}

/// Distance from `endpoint` to a point `(0, oy, oz)` on the panel, expanded
/// around the panel-centre link (law of cosines in the link angles).
pub fn distance_via_angles(endpoint: Point3, oy: f64, oz: f64) -> Result<f64> {
    let a = link_angles(endpoint, Point3::ORIGIN)?;
    let r = a.range;
    let sq =
        r * r + oy * oy - 2.0 * oy * r * a.y_cosine() + oz * oz - 2.0 * oz * r * a.cos_elevation;
    Ok(sq.max(0.0).sqrt())
}

/// Transmitter/receiver pair and the panel between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneGeometry {
    pub bs: Point3,
    pub user: Point3,
    pub layout: IrsLayout,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Bs,
    User,
}

impl SceneGeometry {
    pub fn new(bs: Point3, user: Point3, layout: IrsLayout) -> Result<Self> {
        for (name, p) in [("BS", bs), ("user", user)] {
            if !p.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "{name} position has a non-finite coordinate"
                )));
            }
            if p.x == 0.0 {
                log::warn!("{name} lies in the panel plane (x = 0)");
            }
        }
        Ok(Self { bs, user, layout })
    }

    pub fn endpoint(&self, which: Endpoint) -> Point3 {
        match which {
            Endpoint::Bs => self.bs,
            Endpoint::User => self.user,
        }
    }

    /// Same scene with the user moved to `user`.
    pub fn with_user(&self, user: Point3) -> Self {
        Self { user, ..*self }
    }

    /// Exact element-to-endpoint distances in row-major order.
    pub fn element_distances(&self, which: Endpoint) -> Result<Vec<f64>> {
        element_distances_to(&self.layout, self.endpoint(which))
    }

    /// Per-element `r_br - r_ru`, meters.
    pub fn path_differences(&self) -> Result<Vec<f64>> {
        let br = self.element_distances(Endpoint::Bs)?;
        let ru = self.element_distances(Endpoint::User)?;
        Ok(br.iter().zip(&ru).map(|(b, u)| b - u).collect())
    }
}

pub(crate) fn element_distances_to(layout: &IrsLayout, p: Point3) -> Result<Vec<f64>> {
    let out: Vec<f64> = layout
        .positions()
        .into_iter()
        .map(|e| distance(e, p))
        .collect();
    if out.contains(&0.0) {
        return Err(Error::DegenerateGeometry(
            "endpoint coincides with an element position".into(),
        ));
    }
    Ok(out)
}

/// OFDM subcarrier grid symmetric about the carrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    center: f64,
    bandwidth: f64,
    frequencies: Vec<f64>,
}

impl FrequencyGrid {
    /// `m` subcarriers at `f_c + (B/M)(i - (M-1)/2)`, `i = 0..M`.
    pub fn new(center: f64, bandwidth: f64, m: usize) -> Result<Self> {
        if !(center.is_finite() && center > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "carrier frequency must be positive, got {center}"
            )));
        }
        if !(bandwidth.is_finite() && bandwidth >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "bandwidth must be non-negative, got {bandwidth}"
            )));
        }
        if m == 0 {
            return Err(Error::InvalidArgument(
                "need at least one subcarrier".into(),
            ));
        }
        if m > 1 && bandwidth == 0.0 {
            return Err(Error::InvalidArgument(
                "several subcarriers need a positive bandwidth".into(),
            ));
        }
        let step = bandwidth / m as f64;
        let frequencies: Vec<f64> = (0..m).map(|i| center + step * centred(i, m)).collect();
        if frequencies[0] <= 0.0 {
            return Err(Error::InvalidArgument(
                "lowest subcarrier frequency must be positive".into(),
            ));
        }
        Ok(Self {
            center,
            bandwidth,
            frequencies,
        })
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    /// Subcarrier spacing `B/M`.
    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.len() as f64
    }

    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.center
    }

    pub fn first(&self) -> f64 {
        self.frequencies[0]
    }

    pub fn last(&self) -> f64 {
        self.frequencies[self.len() - 1]
    }
}
