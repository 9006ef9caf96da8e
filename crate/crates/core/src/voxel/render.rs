use super::mesh::TriangleMesh;

/// Orthographic view along −z onto the xy plane. Pixel `(u, v)` samples the
/// world point `center + ((u + ½ − res/2), (v + ½ − res/2)) · pixel_size`;
/// rasters are stored row-major with `u` fastest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterView {
    pub resolution: usize,
    pub center: [f64; 2],
    pub pixel_size: f64,
}

/// Calls `hit(pixel, triangle, barycentric)` for every pixel center covered
/// by a triangle's projection.
fn rasterize(mesh: &TriangleMesh, view: &RasterView, mut hit: impl FnMut(usize, usize, [f64; 3])) {
    let res = view.resolution;
    let half = res as f64 / 2.0;
    let to_px = |p: &[f64; 3]| {
        [
            (p[0] - view.center[0]) / view.pixel_size + half,
            (p[1] - view.center[1]) / view.pixel_size + half,
        ]
    };
    let pts: Vec<[f64; 2]> = mesh.vertices.iter().map(to_px).collect();
    for (ti, t) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = t.map(|i| pts[i]);
        let area = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
        if area == 0.0 {
            continue;
        }
        let lo_u = (a[0].min(b[0]).min(c[0]) - 0.5).ceil().max(0.0) as usize;
        let hi_u = (a[0].max(b[0]).max(c[0]) - 0.5)
            .floor()
            .min(res as f64 - 1.0);
        let lo_v = (a[1].min(b[1]).min(c[1]) - 0.5).ceil().max(0.0) as usize;
        let hi_v = (a[1].max(b[1]).max(c[1]) - 0.5)
            .floor()
            .min(res as f64 - 1.0);
        if hi_u < 0.0 || hi_v < 0.0 {
            continue;
        }
        let edge = |p: [f64; 2], q: [f64; 2], x: f64, y: f64| {
            (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0])
        };
        for v in lo_v..=hi_v as usize {
            for u in lo_u..=hi_u as usize {
                let (x, y) = (u as f64 + 0.5, v as f64 + 0.5);
                let w = [edge(b, c, x, y), edge(c, a, x, y), edge(a, b, x, y)];
                let inside = if area > 0.0 {
                    w.iter().all(|&e| e >= 0.0)
                } else {
                    w.iter().all(|&e| e <= 0.0)
                };
                if inside {
                    hit(u + res * v, ti, w.map(|e| e / area));
                }
            }
        }
    }
}

/// Binary silhouette: 1.0 where a pixel center falls inside the projection
/// of any triangle, else 0.0.
pub fn render_silhouette(mesh: &TriangleMesh, view: &RasterView) -> Vec<f64> {
    let mut out = vec![0.0; view.resolution * view.resolution];
    rasterize(mesh, view, |px, _, _| out[px] = 1.0);
    out
}

/// Light direction for [`render_shaded`], pointing from the surface toward
/// the light.
pub const LIGHT_DIR: [f64; 3] = [0.3, 0.5, 0.8124038404635961];
const AMBIENT: f64 = 0.2;

/// Grayscale render of the nearest surface (largest z) with two-sided
/// Lambertian shading, `AMBIENT + (1 − AMBIENT)·|n·l|`; background is 0.
pub fn render_shaded(mesh: &TriangleMesh, view: &RasterView) -> Vec<f64> {
    let n = view.resolution * view.resolution;
    let mut depth = vec![f64::NEG_INFINITY; n];
    let mut out = vec![0.0; n];
    let shade: Vec<f64> = mesh
        .triangles
        .iter()
        .map(|t| {
            let [a, b, c] = t.map(|i| mesh.vertices[i]);
            let e1 = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let e2 = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let nrm = [
                e1[1] * e2[2] - e1[2] * e2[1],
                e1[2] * e2[0] - e1[0] * e2[2],
                e1[0] * e2[1] - e1[1] * e2[0],
            ];
            let len = (nrm[0] * nrm[0] + nrm[1] * nrm[1] + nrm[2] * nrm[2]).sqrt();
            let dot = nrm.iter().zip(LIGHT_DIR).map(|(x, l)| x * l).sum::<f64>();
            AMBIENT + (1.0 - AMBIENT) * (dot / len).abs()
        })
        .collect();
    rasterize(mesh, view, |px, ti, w| {
        let t = mesh.triangles[ti];
        let z = w[0] * mesh.vertices[t[0]][2]
            + w[1] * mesh.vertices[t[1]][2]
            + w[2] * mesh.vertices[t[2]][2];
        if z > depth[px] {
            depth[px] = z;
            out[px] = shade[ti];
        }
    });
    out
}
