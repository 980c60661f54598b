//! Attention grids projected onto a landmark-registered triangle mesh.
//!
//! Image coordinates are continuous: pixel `p` covers `[p, p + 1)` and its
//! center is `p + 0.5`. Grid cell `i` of a `G`-grid upsampled to `S` pixels
//! covers `[i * S / G, (i + 1) * S / G)`.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_IMAGE_SIZE: usize = 112;
pub const COLORMAP: &str = "viridis";

/// Square grid of nonnegative attention values, row-major (row = y).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionGrid {
    size: usize,
    values: Vec<f64>,
}

impl AttentionGrid {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        if size == 0 {
            return Err(Error::EmptyInput);
        }
        if values.len() != size * size {
            return Err(Error::LengthMismatch(format!("{} values for a {size}x{size} grid", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidInput(format!("attention value {v} is not a finite nonnegative number")));
        }
        Ok(AttentionGrid { size, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(Error::InvalidInput(format!("grid is not square: {n} rows, a row of {}", r.len())));
        }
        AttentionGrid::new(n, rows.concat())
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    /// Mean of per-head grids of equal size.
    pub fn mean_of_heads(heads: &[AttentionGrid]) -> Result<Self> {
        let first = heads.first().ok_or(Error::EmptyInput)?;
        let mut acc = vec![0.0; first.values.len()];
        for h in heads {
            if h.size != first.size {
                return Err(Error::LengthMismatch(format!("head grids of size {} and {}", first.size, h.size)));
            }
            for (a, v) in acc.iter_mut().zip(&h.values) {
                *a += v;
            }
        }
        let k = heads.len() as f64;
        AttentionGrid::new(first.size, acc.into_iter().map(|a| a / k).collect())
    }

    /// Bilinear value at continuous image coordinates for an image of
    /// `out_size` pixels. Coordinates outside the outer cell centers clamp.
    pub fn interpolate(&self, x: f64, y: f64, out_size: usize) -> f64 {
        let scale = self.size as f64 / out_size as f64;
        bilinear(&self.values, self.size, x * scale - 0.5, y * scale - 0.5)
    }
}

// bilinear on a row-major square array at node coordinates (u = col, v = row)
fn bilinear(values: &[f64], n: usize, u: f64, v: f64) -> f64 {
    let (c0, fu) = node(u, n);
    let (r0, fv) = node(v, n);
    let c1 = (c0 + 1).min(n - 1);
    let r1 = (r0 + 1).min(n - 1);
    let at = |r: usize, c: usize| values[r * n + c];
    let top = at(r0, c0) * (1.0 - fu) + at(r0, c1) * fu;
    let bottom = at(r1, c0) * (1.0 - fu) + at(r1, c1) * fu;
    top * (1.0 - fv) + bottom * fv
}

fn node(u: f64, n: usize) -> (usize, f64) {
    let u = u.clamp(0.0, (n - 1) as f64);
    let i = (u.floor() as usize).min(n.saturating_sub(2));
    (i, u - i as f64)
}

/// Square per-pixel map.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMap {
    size: usize,
    values: Vec<f64>,
}

impl DenseMap {
    pub fn new(size: usize, values: Vec<f64>) -> Result<Self> {
        let g = AttentionGrid::new(size, values)?;
        Ok(DenseMap { size: g.size, values: g.values })
    }

    pub fn constant(size: usize, value: f64) -> Self {
        DenseMap { size, values: vec![value; size * size] }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of pixel (row, col).
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.size + col]
    }

    /// Bilinear sample between pixel centers at continuous coordinates.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.values, self.size, x - 0.5, y - 0.5)
    }
}

/// Bilinear upsampling with cell-centered grids; requires `out_size >= G`.
pub fn upsample_bilinear(grid: &AttentionGrid, out_size: usize) -> Result<DenseMap> {
    if out_size < grid.size {
        return Err(Error::InvalidInput(format!("output size {out_size} is smaller than the grid ({})", grid.size)));
    }
    let mut values = Vec::with_capacity(out_size * out_size);
    for row in 0..out_size {
        for col in 0..out_size {
            values.push(grid.interpolate(col as f64 + 0.5, row as f64 + 0.5, out_size));
        }
    }
    Ok(DenseMap { size: out_size, values })
}

/// Triangle mesh with a 2D image landmark per vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
    pub landmarks: Vec<[f64; 2]>,
}

impl FaceMesh {
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>, landmarks: Vec<[f64; 2]>) -> Result<Self> {
        if vertices.len() != landmarks.len() {
            return Err(Error::LengthMismatch(format!("{} vertices, {} landmarks", vertices.len(), landmarks.len())));
        }
        for (k, t) in triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= vertices.len()) {
                return Err(Error::OutOfRange(format!("triangle {k} references a vertex beyond {}", vertices.len())));
            }
            if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(Error::InvalidInput(format!("triangle {k} repeats a vertex")));
            }
        }
        if vertices.iter().flatten().chain(landmarks.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(FaceMesh { vertices, triangles, landmarks })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let x = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
        0.5 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt()
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = self.triangles.iter().flat_map(tri_edges).collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }
}

fn tri_edges(t: &[usize; 3]) -> [(usize, usize); 3] {
    let e = |a: usize, b: usize| (a.min(b), a.max(b));
    [e(t[0], t[1]), e(t[1], t[2]), e(t[2], t[0])]
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subdivision {
    pub mesh: FaceMesh,
    /// Indices of zero-area input triangles (subdivided anyway).
    pub degenerate: Vec<usize>,
}

/// Split every triangle into four at edge midpoints. Original vertices keep
/// their indices; one new vertex per unique edge follows, in first-seen
/// order. Triangle `t` becomes `4t..4t+4`: the three corners then the center.
pub fn subdivide_once(mesh: &FaceMesh) -> Subdivision {
    let mut vertices = mesh.vertices.clone();
    let mut landmarks = mesh.landmarks.clone();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    let mut degenerate = Vec::new();

    let mut mid = |a: usize, b: usize, vertices: &mut Vec<[f64; 3]>, landmarks: &mut Vec<[f64; 2]>| -> usize {
        *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
            let (p, q) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1]), 0.5 * (p[2] + q[2])]);
            let (p, q) = (landmarks[a], landmarks[b]);
            landmarks.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
            vertices.len() - 1
        })
    };

    for (k, &[a, b, c]) in mesh.triangles.iter().enumerate() {
        if mesh.triangle_area(k) == 0.0 {
            degenerate.push(k);
        }
        let ab = mid(a, b, &mut vertices, &mut landmarks);
        let bc = mid(b, c, &mut vertices, &mut landmarks);
        let ca = mid(c, a, &mut vertices, &mut landmarks);
        triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    Subdivision { mesh: FaceMesh { vertices, triangles, landmarks }, degenerate }
}

/// Mean attention per triangle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TriangleAttention {
    pub scores: Vec<f64>,
    /// Number of images averaged into the scores.
    pub image_count: usize,
    /// Triangles whose mask was empty and were sampled at the centroid.
    pub fallback: Vec<usize>,
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Pixels (row, col) whose centers lie inside or on the projected triangle.
pub fn rasterize(tri: [[f64; 2]; 3], size: usize) -> Vec<(usize, usize)> {
    let [a, b, c] = tri;
    let area = edge(a, b, c);
    if area == 0.0 {
        return Vec::new();
    }
    let sign = area.signum();
    let lo = |k: usize| tri.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min);
    let hi = |k: usize| tri.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max);
    let range = |k: usize| {
        let first = (lo(k) - 0.5).ceil().max(0.0) as usize;
        let last = ((hi(k) - 0.5).floor()).min(size as f64 - 1.0);
        (first, last)
    };
    let (c0, c1) = range(0);
    let (r0, r1) = range(1);
    let mut out = Vec::new();
    if c1 < 0.0 || r1 < 0.0 {
        return out;
    }
    for row in r0..=r1 as usize {
        for col in c0..=c1 as usize {
            let p = [col as f64 + 0.5, row as f64 + 0.5];
            if sign * edge(a, b, p) >= 0.0 && sign * edge(b, c, p) >= 0.0 && sign * edge(c, a, p) >= 0.0 {
                out.push((row, col));
            }
        }
    }
    out
}

/// Average map value under each triangle's pixel mask. Landmarks must lie
/// within `[0, size]`.
pub fn triangle_attention(mesh: &FaceMesh, map: &DenseMap) -> Result<TriangleAttention> {
    let size = map.size as f64;
    if let Some((i, l)) = mesh.landmarks.iter().enumerate().find(|(_, l)| !(l[0] >= 0.0 && l[0] <= size && l[1] >= 0.0 && l[1] <= size)) {
        return Err(Error::OutOfRange(format!("landmark {i} at ({}, {}) lies outside the {size}-pixel image", l[0], l[1])));
    }
    let mut scores = Vec::with_capacity(mesh.triangles.len());
    let mut fallback = Vec::new();
    for (k, t) in mesh.triangles.iter().enumerate() {
        let tri = t.map(|i| mesh.landmarks[i]);
        let pixels = rasterize(tri, map.size);
        if pixels.is_empty() {
            let cx = (tri[0][0] + tri[1][0] + tri[2][0]) / 3.0;
            let cy = (tri[0][1] + tri[1][1] + tri[2][1]) / 3.0;
            scores.push(map.sample(cx, cy));
            fallback.push(k);
        } else {
            let sum: f64 = pixels.iter().map(|&(r, c)| map.get(r, c)).sum();
            scores.push(sum / pixels.len() as f64);
        }
    }
    Ok(TriangleAttention { scores, image_count: 1, fallback })
}

/// Per-triangle mean across images, weighting each input by its image count.
pub fn average_over_dataset(per_image: &[TriangleAttention]) -> Result<TriangleAttention> {
    let first = per_image.first().ok_or(Error::EmptyInput)?;
    let n = first.scores.len();
    let mut sum = vec![0.0; n];
    let mut images = 0;
    for a in per_image {
        if a.scores.len() != n {
            return Err(Error::LengthMismatch(format!("triangle counts {n} and {}", a.scores.len())));
        }
        for (s, v) in sum.iter_mut().zip(&a.scores) {
            *s += v * a.image_count as f64;
        }
        images += a.image_count;
    }
    if images == 0 {
        return Err(Error::EmptyInput);
    }
    let mut fallback: Vec<usize> = per_image.iter().flat_map(|a| a.fallback.iter().copied()).collect();
    fallback.sort_unstable();
    fallback.dedup();
    Ok(TriangleAttention { scores: sum.into_iter().map(|s| s / images as f64).collect(), image_count: images, fallback })
}

// matplotlib viridis sampled at nine evenly spaced stops
const VIRIDIS: [[f64; 3]; 9] = [
    [0.267004, 0.004874, 0.329415],
    [0.282623, 0.140926, 0.457517],
    [0.253935, 0.265254, 0.529983],
    [0.206756, 0.371758, 0.553117],
    [0.163625, 0.471133, 0.558148],
    [0.127568, 0.566949, 0.550556],
    [0.134692, 0.658636, 0.517649],
    [0.266941, 0.748751, 0.440573],
    [0.993248, 0.906157, 0.143936],
];

/// Color for a normalized value in `[0, 1]`.
pub fn colormap(name: &str, t: f64) -> Result<[f64; 3]> {
    if name != COLORMAP {
        return Err(Error::UnknownName(format!("colormap {name:?}")));
    }
    let x = t.clamp(0.0, 1.0) * (VIRIDIS.len() - 1) as f64;
    let i = (x.floor() as usize).min(VIRIDIS.len() - 2);
    let f = x - i as f64;
    let (a, b) = (VIRIDIS[i], VIRIDIS[i + 1]);
    Ok([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]), a[2] + f * (b[2] - a[2])])
}

/// OBJ with three colored vertices per face. Scores are min-max normalized;
/// constant scores map to the colormap midpoint.
pub fn export_obj(mesh: &FaceMesh, scores: &TriangleAttention, colormap_name: &str) -> Result<Vec<u8>> {
    if scores.scores.len() != mesh.triangles.len() {
        return Err(Error::LengthMismatch(format!("{} scores for {} triangles", scores.scores.len(), mesh.triangles.len())));
    }
    if let Some(s) = scores.scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("score {s}")));
    }
    colormap(colormap_name, 0.0)?;
    let lo = scores.scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = String::new();
    writeln!(out, "# per-face attention, colormap {colormap_name}").unwrap();
    writeln!(out, "# faces {} images {}", mesh.triangles.len(), scores.image_count).unwrap();
    for (t, &s) in mesh.triangles.iter().zip(&scores.scores) {
        let norm = if hi > lo { (s - lo) / (hi - lo) } else { 0.5 };
        let [r, g, b] = colormap(colormap_name, norm)?;
        for &i in t {
            let v = mesh.vertices[i];
            writeln!(out, "v {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}", v[0], v[1], v[2], r, g, b).unwrap();
        }
    }
    for k in 0..mesh.triangles.len() {
        writeln!(out, "f {} {} {}", 3 * k + 1, 3 * k + 2, 3 * k + 3).unwrap();
    }
    Ok(out.into_bytes())
}

/// Geometry read from an OBJ file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjData {
    pub vertices: Vec<[f64; 3]>,
    /// Present only when every vertex carries a color.
    pub colors: Option<Vec<[f64; 3]>>,
    pub faces: Vec<[usize; 3]>,
}

/// Strict reader: only comments, blank lines, `v x y z [r g b]` and
/// triangular `f a b c` with positive 1-based indices.
pub fn read_obj(text: &str) -> Result<ObjData> {
    let mut vertices = Vec::new();
    let mut colors = Vec::new();
    let mut faces = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::InvalidInput(format!("OBJ line {}: {msg}", ln + 1));
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let nums: Vec<f64> = parts.map(|p| p.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad number"))?;
                match nums.len() {
                    3 => vertices.push([nums[0], nums[1], nums[2]]),
                    6 => {
                        vertices.push([nums[0], nums[1], nums[2]]);
                        colors.push([nums[3], nums[4], nums[5]]);
                    }
                    _ => return Err(bad("vertex needs 3 or 6 numbers")),
                }
            }
            Some("f") => {
                let idx: Vec<usize> = parts.map(|p| p.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| bad("bad face index"))?;
                if idx.len() != 3 {
                    return Err(bad("face is not a triangle"));
                }
                if idx.iter().any(|&i| i == 0 || i > vertices.len()) {
                    return Err(bad("face index out of range"));
                }
                faces.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            Some(other) => return Err(bad(&format!("unsupported statement {other:?}"))),
            None => {}
        }
    }
    if !colors.is_empty() && colors.len() != vertices.len() {
        return Err(Error::InvalidInput("only some vertices carry colors".into()));
    }
    let colors = if colors.is_empty() { None } else { Some(colors) };
    Ok(ObjData { vertices, colors, faces })
}

/// Landmark CSV with header `vertex_index,x,y`; every vertex exactly once.
pub fn read_landmarks_csv(text: &str, n_vertices: usize) -> Result<Vec<[f64; 2]>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["vertex_index", "x", "y"] {
        return Err(Error::MissingColumn("vertex_index,x,y".into()));
    }
    let mut out: Vec<Option<[f64; 2]>> = vec![None; n_vertices];
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || Error::InvalidInput(format!("landmark row {:?}", rec.iter().collect::<Vec<_>>()));
        let i: usize = rec[0].parse().map_err(|_| bad())?;
        let x: f64 = rec[1].parse().map_err(|_| bad())?;
        let y: f64 = rec[2].parse().map_err(|_| bad())?;
        let slot = out.get_mut(i).ok_or_else(|| Error::OutOfRange(format!("landmark vertex {i}")))?;
        if slot.replace([x, y]).is_some() {
            return Err(Error::InvalidInput(format!("duplicate landmark for vertex {i}")));
        }
    }
    out.into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| Error::InvalidInput(format!("no landmark for vertex {i}"))))
        .collect()
}

/// Headerless square CSV grid (e.g. 7x7 or a dense 112x112 map).
pub fn read_grid_csv(text: &str) -> Result<AttentionGrid> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row: Vec<f64> = rec
            .iter()
            .map(|v| v.parse::<f64>().map_err(|_| Error::InvalidInput(format!("grid value {v:?}"))))
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    AttentionGrid::from_rows(&rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_mesh() -> FaceMesh {
        FaceMesh::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![[0.0, 0.0], [112.0, 0.0], [112.0, 112.0], [0.0, 112.0]],
        )
        .unwrap()
    }

    #[test]
    fn constant_grid_upsamples_constant() {
        let g = AttentionGrid::new(7, vec![0.25; 49]).unwrap();
        let m = upsample_bilinear(&g, 112).unwrap();
        assert!(m.values().iter().all(|&v| v == 0.25));
        assert!(upsample_bilinear(&g, 6).is_err());
    }

    #[test]
    fn monotone_rows() {
        let g = AttentionGrid::from_rows(&[vec![0.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let m = upsample_bilinear(&g, 112).unwrap();
        for r in 0..112 {
            for c in 1..112 {
                assert!(m.get(r, c) >= m.get(r, c - 1));
            }
        }
    }

    #[test]
    fn single_triangle_subdivision() {
        let mesh = FaceMesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 2.0, 0.0]], vec![[0, 1, 2]], vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0]]).unwrap();
        let s = subdivide_once(&mesh);
        assert_eq!(s.mesh.triangles.len(), 4);
        assert_eq!(s.mesh.vertices.len(), 6);
        assert_eq!(s.mesh.surface_area(), 2.0);
        assert_eq!(s.mesh.landmarks[3], [1.0, 0.0]);
    }

    #[test]
    fn shared_edge_shares_midpoint() {
        let s = subdivide_once(&square_mesh());
        assert_eq!(s.mesh.vertices.len(), 4 + 5);
        assert!(s.degenerate.is_empty());
    }

    #[test]
    fn degenerate_triangle_flagged() {
        let mesh = FaceMesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]], vec![[0.0; 2]; 3]).unwrap();
        assert_eq!(subdivide_once(&mesh).degenerate, vec![0]);
    }

    #[test]
    fn ramp_orders_halves() {
        let values: Vec<f64> = (0..112 * 112).map(|k| (k % 112) as f64).collect();
        let map = DenseMap::new(112, values).unwrap();
        let mesh = FaceMesh::new(
            vec![[0.0; 3]; 6],
            vec![[0, 1, 2], [3, 4, 5]],
            vec![[0.0, 0.0], [56.0, 0.0], [0.0, 112.0], [56.0, 0.0], [112.0, 0.0], [112.0, 112.0]],
        )
        .unwrap();
        let a = triangle_attention(&mesh, &map).unwrap();
        assert!(a.scores[0] < a.scores[1]);
    }

    #[test]
    fn tiny_triangle_falls_back_to_centroid() {
        let map = DenseMap::constant(112, 3.0);
        let mesh = FaceMesh::new(vec![[0.0; 3]; 3], vec![[0, 1, 2]], vec![[10.1, 10.1], [10.2, 10.1], [10.1, 10.2]]).unwrap();
        let a = triangle_attention(&mesh, &map).unwrap();
        assert_eq!(a.fallback, vec![0]);
        assert_eq!(a.scores, vec![3.0]);
    }

    #[test]
    fn landmarks_outside_image_rejected() {
        let mut mesh = square_mesh();
        mesh.landmarks[0] = [-1.0, 0.0];
        assert!(triangle_attention(&mesh, &DenseMap::constant(112, 1.0)).is_err());
    }

    #[test]
    fn average_is_linear() {
        let s = TriangleAttention { scores: vec![1.0, 4.0], image_count: 1, fallback: vec![] };
        let t = TriangleAttention { scores: vec![3.0, 0.0], image_count: 1, fallback: vec![] };
        let avg = average_over_dataset(&[s.clone(), t]).unwrap();
        assert_eq!(avg.scores, vec![2.0, 2.0]);
        assert_eq!(avg.image_count, 2);
        assert_eq!(average_over_dataset(std::slice::from_ref(&s)).unwrap(), s);
        assert!(average_over_dataset(&[]).is_err());
    }

    #[test]
    fn obj_counts_and_constant_colors() {
        let mesh = FaceMesh::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]], vec![[0.0; 2]; 3]).unwrap();
        let scores = TriangleAttention { scores: vec![0.7], image_count: 1, fallback: vec![] };
        let bytes = export_obj(&mesh, &scores, COLORMAP).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(text.lines().filter(|l| l.starts_with("f ")).count(), 1);
        let obj = read_obj(&text).unwrap();
        let mid = colormap(COLORMAP, 0.5).unwrap();
        for c in obj.colors.unwrap() {
            for k in 0..3 {
                assert!((c[k] - mid[k]).abs() < 1e-6);
            }
        }
        assert_eq!(export_obj(&mesh, &scores, COLORMAP).unwrap(), bytes);
        assert!(export_obj(&mesh, &scores, "jet").is_err());
    }

    #[test]
    fn strict_obj_reader_rejects() {
        assert!(read_obj("v 0 0 0\nf 1 1\n").is_err());
        assert!(read_obj("vt 0 0\n").is_err());
        assert!(read_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n").is_err());
        assert!(read_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n").is_ok());
    }

    #[test]
    fn landmark_and_grid_csv() {
        let l = read_landmarks_csv("vertex_index,x,y\n1,2.5,3\n0,1,1\n", 2).unwrap();
        assert_eq!(l, vec![[1.0, 1.0], [2.5, 3.0]]);
        assert!(read_landmarks_csv("vertex_index,x,y\n0,1,1\n", 2).is_err());
        let g = read_grid_csv("1,2\n3,4\n").unwrap();
        assert_eq!(g.get(1, 0), 3.0);
        assert!(read_grid_csv("1,2\n3\n").is_err());
    }
}
