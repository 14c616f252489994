//! Wavefront OBJ snapshots of a deformation on a structured grid.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use bilayer_core::energy::Deformation;
use bilayer_core::geometry::PlateDomain;

#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<[f64; 3]>,
    /// 0-based vertex indices, counterclockwise in the reference plane.
    pub quads: Vec<[usize; 4]>,
}

/// Samples `def` at `nx × ny` grid nodes over the outer rectangle; nodes
/// strictly inside the hole and cells touching them are dropped.
pub fn surface_mesh(def: &dyn Deformation, domain: &PlateDomain, resolution: [usize; 2]) -> SurfaceMesh {
    let [nx, ny] = resolution;
    assert!(nx >= 2 && ny >= 2, "mesh resolution must be at least 2 per axis");
    let o = &domain.outer;
    let node = |i: usize, j: usize| {
        [
            o.x0 + o.width() * i as f64 / (nx - 1) as f64,
            o.y0 + o.height() * j as f64 / (ny - 1) as f64,
        ]
    };
    let in_hole = |p: [f64; 2]| domain.hole.is_some_and(|h| h.contains_open(p));
    let mut index = vec![None; nx * ny];
    let mut vertices = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let x = node(i, j);
            if !in_hole(x) {
                index[j * nx + i] = Some(vertices.len());
                vertices.push(def.jet(x).map(|c| c.value));
            }
        }
    }
    let mut quads = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b) = (node(i, j), node(i + 1, j + 1));
            if in_hole([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]) {
                continue;
            }
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)].map(|(p, q)| index[q * nx + p]);
            if let [Some(v0), Some(v1), Some(v2), Some(v3)] = corners {
                quads.push([v0, v1, v2, v3]);
            }
        }
    }
    SurfaceMesh { vertices, quads }
}

impl SurfaceMesh {
    pub fn write_obj(&self, out: &mut impl Write) -> std::io::Result<()> {
        for v in &self.vertices {
            writeln!(out, "v {:?} {:?} {:?}", v[0], v[1], v[2])?;
        }
        for q in &self.quads {
            writeln!(out, "f {} {} {} {}", q[0] + 1, q[1] + 1, q[2] + 1, q[3] + 1)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        self.write_obj(&mut out)?;
        out.flush()
    }
}

pub fn export_mesh(def: &dyn Deformation, domain: &PlateDomain, resolution: [usize; 2], path: &Path) -> std::io::Result<()> {
    surface_mesh(def, domain, resolution).save(path)
}
