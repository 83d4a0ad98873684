//! On-disk artifact formats: a plain-text mesh format that round-trips
//! through `--mesh`, and a dependency-free SVG rendering of a triangulation.

use amfem::mesh::Mesh;
use anyhow::{bail, Context, Result};

/// Serializes a mesh as line-oriented text:
/// a vertex count header, one `x y boundary_flag` line per vertex,
/// a triangle count header, one `a b c` line per triangle.
pub fn mesh_to_text(mesh: &Mesh) -> String {
    let mut out = String::new();
    out.push_str(&format!("vertices {}\n", mesh.n_vertices()));
    for v in 0..mesh.n_vertices() {
        let [x, y] = mesh.vertex(v);
        let flag = if mesh.is_boundary_vertex(v) { 1 } else { 0 };
        out.push_str(&format!("{x:e} {y:e} {flag}\n"));
    }
    out.push_str(&format!("triangles {}\n", mesh.n_triangles()));
    for t in 0..mesh.n_triangles() {
        let [a, b, c] = mesh.triangle(t);
        out.push_str(&format!("{a} {b} {c}\n"));
    }
    out
}

/// Parses the format written by [`mesh_to_text`]. The boundary flags are
/// revalidated by the mesh constructor against the actual edge topology.
pub fn mesh_from_text(text: &str) -> Result<Mesh> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().context("missing vertex header")?;
    let nv: usize = header
        .strip_prefix("vertices ")
        .with_context(|| format!("expected 'vertices <n>', got '{header}'"))?
        .trim()
        .parse()
        .context("vertex count")?;
    let mut vertices = Vec::with_capacity(nv);
    let mut boundary = Vec::with_capacity(nv);
    for i in 0..nv {
        let line = lines.next().with_context(|| format!("missing vertex {i}"))?;
        let mut it = line.split_whitespace();
        let x: f64 = it.next().context("x coordinate")?.parse()?;
        let y: f64 = it.next().context("y coordinate")?.parse()?;
        let flag: u8 = it.next().context("boundary flag")?.parse()?;
        if !(x.is_finite() && y.is_finite()) {
            bail!("vertex {i} has a non-finite coordinate");
        }
        vertices.push([x, y]);
        boundary.push(flag != 0);
    }
    let header = lines.next().context("missing triangle header")?;
    let nt: usize = header
        .strip_prefix("triangles ")
        .with_context(|| format!("expected 'triangles <n>', got '{header}'"))?
        .trim()
        .parse()
        .context("triangle count")?;
    let mut triangles = Vec::with_capacity(nt);
    for i in 0..nt {
        let line = lines
            .next()
            .with_context(|| format!("missing triangle {i}"))?;
        let mut it = line.split_whitespace();
        let a: usize = it.next().context("first vertex")?.parse()?;
        let b: usize = it.next().context("second vertex")?.parse()?;
        let c: usize = it.next().context("third vertex")?.parse()?;
        triangles.push([a, b, c]);
    }
    Mesh::from_arrays(vertices, boundary, triangles).context("mesh construction")
}

/// Renders the triangulation as a standalone SVG (edges only, boundary
/// vertices marked). Deterministic: no timestamps or generator metadata.
pub fn mesh_to_svg(mesh: &Mesh) -> String {
    let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
    let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for v in 0..mesh.n_vertices() {
        let [x, y] = mesh.vertex(v);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let w = (x1 - x0).max(1e-12);
    let h = (y1 - y0).max(1e-12);
    let size = 640.0;
    let scale = size / w.max(h);
    let pad = 10.0;
    // SVG y runs downward; flip so the drawing matches plot orientation.
    let map = |p: [f64; 2]| -> (f64, f64) {
        (
            pad + (p[0] - x0) * scale,
            pad + (y1 - p[1]) * scale,
        )
    };
    let width = w * scale + 2.0 * pad;
    let height = h * scale + 2.0 * pad;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.1}\" height=\"{height:.1}\" \
         viewBox=\"0 0 {width:.1} {height:.1}\">\n<g stroke=\"#333\" stroke-width=\"0.7\" \
         stroke-linecap=\"round\">\n"
    );
    for e in 0..mesh.n_edges() {
        let [a, b] = mesh.edge(e);
        let (ax, ay) = map(mesh.vertex(a));
        let (bx, by) = map(mesh.vertex(b));
        out.push_str(&format!(
            "<line x1=\"{ax:.2}\" y1=\"{ay:.2}\" x2=\"{bx:.2}\" y2=\"{by:.2}\"/>\n"
        ));
    }
    out.push_str("</g>\n<g fill=\"#c22\">\n");
    for v in 0..mesh.n_vertices() {
        if mesh.is_boundary_vertex(v) {
            let (x, y) = map(mesh.vertex(v));
            out.push_str(&format!("<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"1.6\"/>\n"));
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mesh_text_round_trips() {
        let mesh = Mesh::l_shape_fan().uniform_refine().0;
        let text = mesh_to_text(&mesh);
        let back = mesh_from_text(&text).unwrap();
        assert_eq!(back.n_vertices(), mesh.n_vertices());
        assert_eq!(back.n_triangles(), mesh.n_triangles());
        for v in 0..mesh.n_vertices() {
            assert_eq!(back.vertex(v), mesh.vertex(v));
            assert_eq!(back.is_boundary_vertex(v), mesh.is_boundary_vertex(v));
        }
        for t in 0..mesh.n_triangles() {
            assert_eq!(back.triangle(t), mesh.triangle(t));
        }
        assert_eq!(mesh_to_text(&back), text);
    }

    #[test]
    fn malformed_mesh_text_is_rejected() {
        assert!(mesh_from_text("nonsense").is_err());
        assert!(mesh_from_text("vertices 1\n0 0 1\ntriangles 1\n0 0 0\n").is_err());
        let truncated = "vertices 3\n0 0 1\n1 0 1\n";
        assert!(mesh_from_text(truncated).is_err());
    }

    #[test]
    fn svg_contains_every_edge() {
        let mesh = Mesh::criss_cross();
        let svg = mesh_to_svg(&mesh);
        assert_eq!(svg.matches("<line ").count(), mesh.n_edges());
        assert!(svg.starts_with("<svg "));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
