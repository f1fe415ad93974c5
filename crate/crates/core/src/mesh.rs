//! Conforming triangulations of rectangles.
//!
//! The only generator is the criss-cross pattern: every cell of a uniform
//! `nx × ny` grid is split into four triangles through its centroid, so the
//! element edges line up with both coordinate directions and with the two
//! diagonals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub const UNIT: BBox = BBox { x0: 0.0, y0: 0.0, x1: 1.0, y1: 1.0 };

    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    fn on_perimeter(&self, p: [f64; 2], tol: f64) -> bool {
        (p[0] - self.x0).abs() < tol
            || (p[0] - self.x1).abs() < tol
            || (p[1] - self.y0).abs() < tol
            || (p[1] - self.y1).abs() < tol
    }
}

impl Default for BBox {
    fn default() -> Self {
        BBox::UNIT
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Internal,
    Boundary,
}

/// A mesh edge.
///
/// For internal edges `plus` is the incident triangle with the smaller index
/// and `normal` is the outward unit normal of `plus` (pointing into `minus`).
/// Boundary edges have `minus == None` and `normal` points out of the domain.
#[derive(Clone, Debug)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub plus: usize,
    pub minus: Option<usize>,
    pub normal: [f64; 2],
    pub length: f64,
}

impl Edge {
    pub fn kind(&self) -> EdgeKind {
        if self.minus.is_some() {
            EdgeKind::Internal
        } else {
            EdgeKind::Boundary
        }
    }

    pub fn is_internal(&self) -> bool {
        self.minus.is_some()
    }
}

/// Immutable triangulation with edge incidence.
#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    triangle_edges: Vec<[usize; 3]>,
    bbox: BBox,
}

impl Mesh {
    /// Criss-cross mesh of `nx × ny` equal cells, each cut into four triangles
    /// through its centroid.
    pub fn crisscross(nx: usize, ny: usize, bbox: BBox) -> Result<Mesh> {
        if nx == 0 || ny == 0 {
            return Err(Error::Mesh(format!("cell counts must be positive, got {nx}×{ny}")));
        }
        let (w, h) = (bbox.width(), bbox.height());
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::Mesh(format!("degenerate bounding box {bbox:?}")));
        }
        let dx = w / nx as f64;
        let dy = h / ny as f64;

        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
        for j in 0..=ny {
            for i in 0..=nx {
                vertices.push([bbox.x0 + i as f64 * dx, bbox.y0 + j as f64 * dy]);
            }
        }
        let corner = |i: usize, j: usize| j * (nx + 1) + i;
        let first_center = vertices.len();
        for j in 0..ny {
            for i in 0..nx {
                vertices.push([bbox.x0 + (i as f64 + 0.5) * dx, bbox.y0 + (j as f64 + 0.5) * dy]);
            }
        }

        let mut triangles = Vec::with_capacity(4 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let c = first_center + j * nx + i;
                let (sw, se) = (corner(i, j), corner(i + 1, j));
                let (ne, nw) = (corner(i + 1, j + 1), corner(i, j + 1));
                // bottom, right, top, left; all counterclockwise
                triangles.push([sw, se, c]);
                triangles.push([se, ne, c]);
                triangles.push([ne, nw, c]);
                triangles.push([nw, sw, c]);
            }
        }
        Mesh::from_triangles(vertices, triangles, bbox)
    }

    /// Builds edge incidence for a counterclockwise triangle list.
    pub fn from_triangles(vertices: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, bbox: BBox) -> Result<Mesh> {
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(Error::Mesh(format!("triangle {t} references a missing vertex")));
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area2 = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
            if area2 <= 0.0 {
                return Err(Error::Mesh(format!("triangle {t} is not counterclockwise")));
            }
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut triangle_edges = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let idx = match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.minus.is_some() {
                            return Err(Error::Mesh(format!("edge {key:?} shared by more than two triangles")));
                        }
                        // triangles are visited in index order, so the first one seen is `plus`
                        edge.minus = Some(t);
                        e
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let (tx, ty) = (pb[0] - pa[0], pb[1] - pa[1]);
                        let length = tx.hypot(ty);
                        // outward normal of a counterclockwise triangle
                        let normal = [ty / length, -tx / length];
                        edges.push(Edge { vertices: [a, b], plus: t, minus: None, normal, length });
                        lookup.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                triangle_edges[t][k] = idx;
            }
        }
        Ok(Mesh { vertices, triangles, edges, triangle_edges, bbox })
    }

    pub fn vertices(&self) -> &[[f64; 2]] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Local edge `k` of a triangle joins its vertices `k` and `k + 1`.
    pub fn triangle_edges(&self) -> &[[usize; 3]] {
        &self.triangle_edges
    }

    pub fn bbox(&self) -> BBox {
        self.bbox
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle_vertices(&self, t: usize) -> [[f64; 2]; 3] {
        self.triangles[t].map(|v| self.vertices[v])
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_vertices(t);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    }

    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangle_vertices(t);
        [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    /// Largest edge length.
    pub fn h_max(&self) -> f64 {
        self.edges.iter().map(|e| e.length).fold(0.0, f64::max)
    }

    /// Partition of edge indices into (internal, boundary).
    pub fn classify_edges(&self) -> (Vec<usize>, Vec<usize>) {
        let (internal, boundary): (Vec<usize>, Vec<usize>) =
            (0..self.edges.len()).partition(|&e| self.edges[e].is_internal());
        (internal, boundary)
    }

    /// True when both endpoints of edge `e` sit on the bounding-box perimeter
    /// and its midpoint does too.
    pub fn edge_on_perimeter(&self, e: usize) -> bool {
        let edge = &self.edges[e];
        let [a, b] = edge.vertices.map(|v| self.vertices[v]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let tol = 1e-12 * (1.0 + self.bbox.width().max(self.bbox.height()));
        self.bbox.on_perimeter(a, tol) && self.bbox.on_perimeter(b, tol) && self.bbox.on_perimeter(mid, tol)
    }

    /// Writes `vertices.csv`, `triangles.csv` and `edges.csv` into `dir`.
    ///
    /// Columns: `id,x,y`; `id,v0,v1,v2`; `id,v0,v1,plus,minus,nx,ny,length,kind`
    /// (`minus` is `-1` on the boundary).
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut s = String::from("id,x,y\n");
        for (i, v) in self.vertices.iter().enumerate() {
            writeln!(s, "{i},{:.17e},{:.17e}", v[0], v[1]).unwrap();
        }
        std::fs::write(dir.join("vertices.csv"), s)?;

        let mut s = String::from("id,v0,v1,v2\n");
        for (i, t) in self.triangles.iter().enumerate() {
            writeln!(s, "{i},{},{},{}", t[0], t[1], t[2]).unwrap();
        }
        std::fs::write(dir.join("triangles.csv"), s)?;

        let mut s = String::from("id,v0,v1,plus,minus,nx,ny,length,kind\n");
        for (i, e) in self.edges.iter().enumerate() {
            let minus = e.minus.map_or(-1, |m| m as i64);
            let kind = if e.is_internal() { "internal" } else { "boundary" };
            writeln!(
                s,
                "{i},{},{},{},{minus},{:.17e},{:.17e},{:.17e},{kind}",
                e.vertices[0], e.vertices[1], e.plus, e.normal[0], e.normal[1], e.length
            )
            .unwrap();
        }
        std::fs::write(dir.join("edges.csv"), s)?;
        Ok(())
    }
}
