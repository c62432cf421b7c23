//! Local equirectangular projection between lon/lat degrees and metres.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Origin and scale factors of an equirectangular projection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub lon0: f64,
    pub lat0: f64,
    /// Metres per degree of longitude at `lat0`.
    pub scale_x: f64,
    /// Metres per degree of latitude.
    pub scale_y: f64,
}

impl Projection {
    pub fn about(lon0: f64, lat0: f64) -> Result<Self> {
        check_lonlat(0, lon0, lat0)?;
        let per_deg = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        Ok(Self {
            lon0,
            lat0,
            scale_x: per_deg * lat0.to_radians().cos(),
            scale_y: per_deg,
        })
    }

    pub fn forward(&self, lon: f64, lat: f64) -> [f64; 2] {
        [(lon - self.lon0) * self.scale_x, (lat - self.lat0) * self.scale_y]
    }

    pub fn inverse(&self, xy: [f64; 2]) -> (f64, f64) {
        (self.lon0 + xy[0] / self.scale_x, self.lat0 + xy[1] / self.scale_y)
    }

    /// Projects further locations with this origin.
    pub fn project(&self, lonlat: &[(f64, f64)]) -> Result<PlanarPoints> {
        let mut xy = Vec::with_capacity(lonlat.len());
        for (i, &(lon, lat)) in lonlat.iter().enumerate() {
            check_lonlat(i, lon, lat)?;
            xy.push(self.forward(lon, lat));
        }
        Ok(PlanarPoints {
            xy,
            projection: *self,
        })
    }
}

fn check_lonlat(i: usize, lon: f64, lat: f64) -> Result<()> {
    if !lon.is_finite() || !lat.is_finite() || lat.abs() > 89.0 {
        return Err(Error::invalid(format!(
            "location {i}: ({lon}, {lat}) is not a usable lon/lat pair"
        )));
    }
    Ok(())
}

/// Planar coordinates in metres together with the projection that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarPoints {
    pub xy: Vec<[f64; 2]>,
    pub projection: Projection,
}

impl PlanarPoints {
    pub fn len(&self) -> usize {
        self.xy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xy.is_empty()
    }

    pub fn to_lonlat(&self) -> Vec<(f64, f64)> {
        self.xy.iter().map(|&p| self.projection.inverse(p)).collect()
    }

    /// Width and height of the bounding box in metres.
    pub fn extent(&self) -> (f64, f64) {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &self.xy {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        if self.xy.is_empty() {
            (0.0, 0.0)
        } else {
            (x1 - x0, y1 - y0)
        }
    }
}

/// Projects lon/lat degrees about the mean lon/lat of the input.
pub fn project_coords(lonlat: &[(f64, f64)]) -> Result<PlanarPoints> {
    if lonlat.is_empty() {
        return Err(Error::invalid("cannot project an empty set of locations"));
    }
    for (i, &(lon, lat)) in lonlat.iter().enumerate() {
        check_lonlat(i, lon, lat)?;
    }
    let n = lonlat.len() as f64;
    let lon0 = lonlat.iter().map(|p| p.0).sum::<f64>() / n;
    let lat0 = lonlat.iter().map(|p| p.1).sum::<f64>() / n;
    Projection::about(lon0, lat0)?.project(lonlat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centroid_maps_to_origin() {
        let pts = project_coords(&[(-4.3, 55.8), (-4.2, 55.9)]).unwrap();
        let c = pts.projection.forward(-4.25, 55.85);
        assert!(c[0].abs() < 1e-9 && c[1].abs() < 1e-9);
    }

    #[test]
    fn thousandth_degree_of_latitude() {
        let pts = project_coords(&[(0.0, 10.0), (0.0, 10.001)]).unwrap();
        let dy = pts.xy[1][1] - pts.xy[0][1];
        assert!((dy - 111.19).abs() < 0.01, "{dy}");
        assert_eq!(pts.xy[0][0], 0.0);
    }

    #[test]
    fn glasgow_extent() {
        let pts = project_coords(&[(-4.313, 55.843), (-4.210, 55.883)]).unwrap();
        let (w, h) = pts.extent();
        assert!((w - 6450.0).abs() < 50.0, "{w}");
        assert!((h - 4448.0).abs() < 50.0, "{h}");
    }

    #[test]
    fn inverse_round_trips() {
        let input = [(-4.31, 55.85), (-4.22, 55.87), (-4.25, 55.84)];
        let pts = project_coords(&input).unwrap();
        for (a, b) in input.iter().zip(pts.to_lonlat()) {
            assert!((a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_polar_latitudes() {
        assert!(project_coords(&[(0.0, 89.5)]).is_err());
        assert!(project_coords(&[]).is_err());
    }
}
