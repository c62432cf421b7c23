//! Mesh export to CSV and GeoJSON.

use std::io::Write;

use serde_json::{json, Value};

use crate::error::Result;
use crate::mesh::{Mesh, Projection};

/// `vertex,x_m,y_m,lon,lat,site,inner`.
pub fn write_vertices_csv<W: Write>(mesh: &Mesh, projection: &Projection, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["vertex", "x_m", "y_m", "lon", "lat", "site", "inner"])?;
    for (v, &p) in mesh.vertices.iter().enumerate() {
        let (lon, lat) = projection.inverse(p);
        w.write_record([
            v.to_string(),
            format!("{:.6}", p[0]),
            format!("{:.6}", p[1]),
            format!("{lon:.9}"),
            format!("{lat:.9}"),
            u8::from(v < mesh.n_sites).to_string(),
            u8::from(mesh.is_inner_vertex(v)).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `triangle,v0,v1,v2,area_m2`.
pub fn write_triangles_csv<W: Write>(mesh: &Mesh, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["triangle", "v0", "v1", "v2", "area_m2"])?;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        w.write_record([
            t.to_string(),
            tri[0].to_string(),
            tri[1].to_string(),
            tri[2].to_string(),
            format!("{:.6}", mesh.triangle_area(t)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Triangles as lon/lat polygons, with optional per-vertex values averaged per triangle.
pub fn triangulation_geojson(mesh: &Mesh, projection: &Projection, vertex_values: Option<&[f64]>) -> Value {
    let features: Vec<Value> = mesh
        .triangles
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let mut ring: Vec<[f64; 2]> = tri
                .iter()
                .map(|&v| {
                    let (lon, lat) = projection.inverse(mesh.vertices[v]);
                    [lon, lat]
                })
                .collect();
            ring.push(ring[0]);
            let mut props = json!({
                "triangle": t,
                "vertices": tri,
                "inner": tri.iter().all(|&v| mesh.is_inner_vertex(v)),
            });
            if let Some(vals) = vertex_values {
                props["value"] = json!(tri.iter().map(|&v| vals[v]).sum::<f64>() / 3.0);
            }
            json!({
                "type": "Feature",
                "geometry": {"type": "Polygon", "coordinates": [ring]},
                "properties": props,
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_geojson_shapes() {
        let mesh = Mesh::from_parts(vec![[0.0, 0.0], [100.0, 0.0], [0.0, 100.0]], vec![[0, 1, 2]]).unwrap();
        let proj = Projection::about(-4.25, 55.86).unwrap();
        let mut buf = Vec::new();
        write_vertices_csv(&mesh, &proj, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("vertex,x_m,y_m,lon,lat,site,inner"));
        let mut buf = Vec::new();
        write_triangles_csv(&mesh, &mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().contains("0,0,1,2,5000.000000"));
        let gj = triangulation_geojson(&mesh, &proj, Some(&[1.0, 2.0, 3.0]));
        let f = &gj["features"][0];
        assert_eq!(f["geometry"]["coordinates"][0].as_array().unwrap().len(), 4);
        assert_eq!(f["properties"]["value"], 2.0);
    }
}
