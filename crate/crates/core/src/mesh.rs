//! Triangulations of the unit disk and the unit square.
//!
//! Disk meshes start from a fan of six triangles around the origin and are
//! refined 1→4; midpoints of boundary edges are pushed radially onto the unit
//! circle. Square meshes are uniform grids split along one diagonal.

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};

/// Maximum disk refinement level accepted by [`build_disk_mesh`].
pub const MAX_DISK_LEVEL: usize = 10;

/// Largest square grid accepted by [`build_square_mesh`] (cells per side).
pub const MAX_SQUARE_CELLS: usize = 4096;

/// Signed areas below this are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DomainKind {
    Disk,
    Square,
}

impl DomainKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainKind::Disk => "disk",
            DomainKind::Square => "square",
        }
    }
}

impl std::str::FromStr for DomainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "disk" => Ok(DomainKind::Disk),
            "square" => Ok(DomainKind::Square),
            other => Err(Error::config(format!(
                "unknown domain `{other}` (expected `disk` or `square`)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    nodes: Vec<[f64; 2]>,
    triangles: Vec<[usize; 3]>,
    boundary: Vec<bool>,
    kind: DomainKind,
}

type EdgeKey = (usize, usize);

fn edge_key(a: usize, b: usize) -> EdgeKey {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    fn from_parts(nodes: Vec<[f64; 2]>, triangles: Vec<[usize; 3]>, kind: DomainKind) -> Self {
        let mut boundary = vec![false; nodes.len()];
        for ((a, b), count) in edge_counts(&triangles) {
            if count == 1 {
                boundary[a] = true;
                boundary[b] = true;
            }
        }
        Mesh {
            nodes,
            triangles,
            boundary,
            kind,
        }
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_boundary(&self, node: usize) -> bool {
        self.boundary[node]
    }

    /// Indices of nodes on Γ, ascending.
    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    /// Signed area of triangle `t` (positive for counterclockwise vertices).
    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.nodes[a], self.nodes[b], self.nodes[c])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.signed_area(t)).sum()
    }

    /// Longest edge length of triangle `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let p = &self.nodes;
        dist(p[a], p[b]).max(dist(p[b], p[c])).max(dist(p[c], p[a]))
    }

    /// Largest element diameter.
    pub fn h_max(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| self.diameter(t))
            .fold(0.0, f64::max)
    }

    /// Undirected edges with the number of triangles sharing each one, sorted by key.
    pub fn edges(&self) -> Vec<(EdgeKey, usize)> {
        let mut v: Vec<_> = edge_counts(&self.triangles).into_iter().collect();
        v.sort_unstable();
        v
    }

    /// True if some triangle has an angle strictly larger than 90°.
    pub fn has_obtuse_triangle(&self) -> bool {
        const SLACK: f64 = 1e-12;
        self.triangles.iter().any(|&[a, b, c]| {
            let p = &self.nodes;
            let l = [dist2(p[b], p[c]), dist2(p[c], p[a]), dist2(p[a], p[b])];
            let (imax, &lmax) = l
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .unwrap();
            let rest: f64 = l.iter().enumerate().filter(|(i, _)| *i != imax).map(|(_, v)| v).sum();
            lmax > rest * (1.0 + SLACK)
        })
    }

    /// Index of the node closest to `p` (first one on ties).
    pub fn nearest_node(&self, p: [f64; 2]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &q) in self.nodes.iter().enumerate() {
            let d = dist2(p, q);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Triangles whose closed region contains `p`.
    pub fn triangles_containing(&self, p: [f64; 2]) -> Vec<usize> {
        const TOL: f64 = 1e-14;
        (0..self.triangles.len())
            .filter(|&t| {
                let [a, b, c] = self.triangles[t];
                let n = &self.nodes;
                let area = self.signed_area(t);
                let l0 = signed_area(p, n[b], n[c]) / area;
                let l1 = signed_area(n[a], p, n[c]) / area;
                let l2 = signed_area(n[a], n[b], p) / area;
                l0 >= -TOL && l1 >= -TOL && l2 >= -TOL
            })
            .collect()
    }

    /// Checks every structural invariant of a produced mesh.
    pub fn check_invariants(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            let area = self.signed_area(t);
            if !(area > 0.0) {
                return Err(Error::numerical(format!(
                    "triangle {t} has non-positive signed area {area:e}"
                )));
            }
        }
        for i in self.boundary_nodes() {
            let [x, y] = self.nodes[i];
            let ok = match self.kind {
                DomainKind::Disk => (x * x + y * y - 1.0).abs() < 1e-12,
                DomainKind::Square => x == 0.0 || x == 1.0 || y == 0.0 || y == 1.0,
            };
            if !ok {
                return Err(Error::numerical(format!(
                    "boundary node {i} at ({x}, {y}) is off the {} boundary",
                    self.kind.as_str()
                )));
            }
        }
        let edges = self.edges();
        if let Some(((a, b), c)) = edges.iter().find(|(_, c)| *c > 2) {
            return Err(Error::numerical(format!(
                "edge ({a}, {b}) is shared by {c} triangles"
            )));
        }
        let euler = self.nodes.len() as i64 - edges.len() as i64 + self.triangles.len() as i64;
        if euler != 1 {
            return Err(Error::numerical(format!(
                "Euler characteristic V - E + T = {euler}, expected 1"
            )));
        }
        let mut seen = HashSet::with_capacity(self.nodes.len());
        for (i, &[x, y]) in self.nodes.iter().enumerate() {
            if !seen.insert((x.to_bits(), y.to_bits())) {
                return Err(Error::numerical(format!("node {i} duplicates an earlier node")));
            }
        }
        Ok(())
    }
}

fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    dist2(a, b).sqrt()
}

fn edge_counts(triangles: &[[usize; 3]]) -> HashMap<EdgeKey, usize> {
    let mut counts = HashMap::with_capacity(triangles.len() * 2);
    for &[a, b, c] in triangles {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            *counts.entry(edge_key(p, q)).or_insert(0) += 1;
        }
    }
    counts
}

/// Fan of six triangles around the origin, refined uniformly `level` times.
pub fn build_disk_mesh(level: usize) -> Result<Mesh> {
    if level > MAX_DISK_LEVEL {
        return Err(Error::config(format!(
            "disk refinement level {level} exceeds the maximum {MAX_DISK_LEVEL}"
        )));
    }
    let mut nodes = vec![[0.0, 0.0]];
    for k in 0..6 {
        let angle = k as f64 * std::f64::consts::FRAC_PI_3;
        nodes.push([angle.cos(), angle.sin()]);
    }
    let triangles = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let mut mesh = Mesh::from_parts(nodes, triangles, DomainKind::Disk);
    for _ in 0..level {
        mesh = refine_uniform(&mesh);
    }
    Ok(mesh)
}

/// Uniform `n × n` grid on the unit square, each cell split along its
/// lower-left to upper-right diagonal.
pub fn build_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::config("square mesh needs at least one cell per side"));
    }
    if n > MAX_SQUARE_CELLS {
        return Err(Error::config(format!(
            "square mesh with {n} cells per side exceeds the maximum {MAX_SQUARE_CELLS}"
        )));
    }
    let nf = n as f64;
    let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            nodes.push([i as f64 / nf, j as f64 / nf]);
        }
    }
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v11, v01) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Ok(Mesh::from_parts(nodes, triangles, DomainKind::Square))
}

/// Creates midpoint nodes for `edges` (in the given order) and returns the
/// edge → node map. Boundary midpoints of disk meshes are projected onto the
/// unit circle.
fn insert_midpoints(
    mesh: &Mesh,
    nodes: &mut Vec<[f64; 2]>,
    edges: impl Iterator<Item = EdgeKey>,
    boundary_edge: impl Fn(EdgeKey) -> bool,
) -> HashMap<EdgeKey, usize> {
    let mut mid = HashMap::new();
    for key in edges {
        if mid.contains_key(&key) {
            continue;
        }
        let (a, b) = key;
        let pa = mesh.nodes[a];
        let pb = mesh.nodes[b];
        let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
        if mesh.kind == DomainKind::Disk && boundary_edge(key) {
            let r = m[0].hypot(m[1]);
            m = [m[0] / r, m[1] / r];
        }
        mid.insert(key, nodes.len());
        nodes.push(m);
    }
    mid
}

/// Splits every triangle into four through its edge midpoints.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let counts = edge_counts(&mesh.triangles);
    let mut nodes = mesh.nodes.clone();
    let ordered = mesh
        .triangles
        .iter()
        .flat_map(|&[a, b, c]| [edge_key(a, b), edge_key(b, c), edge_key(c, a)]);
    let mid = insert_midpoints(mesh, &mut nodes, ordered, |k| counts[&k] == 1);

    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid[&edge_key(a, b)];
        let bc = mid[&edge_key(b, c)];
        let ca = mid[&edge_key(c, a)];
        triangles.push([a, ab, ca]);
        triangles.push([ab, b, bc]);
        triangles.push([ca, bc, c]);
        triangles.push([ab, bc, ca]);
    }
    Mesh::from_parts(nodes, triangles, mesh.kind)
}

/// Local index k of the longest edge (v_k, v_{k+1}); ties go to the smaller
/// edge key so the choice is reproducible.
fn longest_edge(nodes: &[[f64; 2]], tri: [usize; 3]) -> usize {
    let mut best = 0;
    for k in 1..3 {
        let lk = dist2(nodes[tri[k]], nodes[tri[(k + 1) % 3]]);
        let lb = dist2(nodes[tri[best]], nodes[tri[(best + 1) % 3]]);
        let kk = edge_key(tri[k], tri[(k + 1) % 3]);
        let kb = edge_key(tri[best], tri[(best + 1) % 3]);
        if lk > lb || (lk == lb && kk < kb) {
            best = k;
        }
    }
    best
}

/// Four-triangle longest-edge partition of the marked triangles: each marked
/// triangle is bisected at its longest edge and both children are bisected at
/// the remaining original edges. The edge set is closed under conformity (any
/// triangle with a bisected edge also has its own longest edge bisected), so
/// no hanging nodes remain.
pub fn refine_marked(mesh: &Mesh, marks: &[usize]) -> Result<Mesh> {
    if let Some(&bad) = marks.iter().find(|&&t| t >= mesh.triangles.len()) {
        return Err(Error::config(format!(
            "marked triangle {bad} out of range (mesh has {} triangles)",
            mesh.triangles.len()
        )));
    }
    if marks.is_empty() {
        return Ok(mesh.clone());
    }

    let longest: Vec<EdgeKey> = mesh
        .triangles
        .iter()
        .map(|&tri| {
            let k = longest_edge(&mesh.nodes, tri);
            edge_key(tri[k], tri[(k + 1) % 3])
        })
        .collect();

    let mut marked: HashSet<EdgeKey> = marks
        .iter()
        .flat_map(|&t| {
            let [a, b, c] = mesh.triangles[t];
            [edge_key(a, b), edge_key(b, c), edge_key(c, a)]
        })
        .collect();
    loop {
        let mut changed = false;
        for (t, &[a, b, c]) in mesh.triangles.iter().enumerate() {
            if marked.contains(&longest[t]) {
                continue;
            }
            if [edge_key(a, b), edge_key(b, c), edge_key(c, a)]
                .iter()
                .any(|e| marked.contains(e))
            {
                marked.insert(longest[t]);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let counts = edge_counts(&mesh.triangles);
    let mut nodes = mesh.nodes.clone();
    let ordered = mesh
        .triangles
        .iter()
        .flat_map(|&[a, b, c]| [edge_key(a, b), edge_key(b, c), edge_key(c, a)])
        .filter(|e| marked.contains(e));
    let mid = insert_midpoints(mesh, &mut nodes, ordered, |k| counts[&k] == 1);

    let mut triangles = Vec::with_capacity(mesh.triangles.len() + 3 * marked.len());
    for &tri in &mesh.triangles {
        bisect_recursive(&mesh.nodes, &mid, tri, &mut triangles);
    }
    let refined = Mesh::from_parts(nodes, triangles, mesh.kind);
    Ok(refined)
}

/// Bisects `tri` at its longest edge carrying a midpoint, then recurses into
/// the children. Edges that touch a new node never carry a midpoint.
fn bisect_recursive(
    nodes: &[[f64; 2]],
    mid: &HashMap<EdgeKey, usize>,
    tri: [usize; 3],
    out: &mut Vec<[usize; 3]>,
) {
    let mut split: Option<(usize, f64)> = None;
    for k in 0..3 {
        let (p, q) = (tri[k], tri[(k + 1) % 3]);
        if p >= nodes.len() || q >= nodes.len() || !mid.contains_key(&edge_key(p, q)) {
            continue;
        }
        let len = dist2(nodes[p], nodes[q]);
        if split.is_none_or(|(_, l)| len > l) {
            split = Some((k, len));
        }
    }
    let Some((k, _)) = split else {
        out.push(tri);
        return;
    };
    let (v0, v1, v2) = (tri[k], tri[(k + 1) % 3], tri[(k + 2) % 3]);
    let m = mid[&edge_key(v0, v1)];
    bisect_recursive(nodes, mid, [v0, m, v2], out);
    bisect_recursive(nodes, mid, [m, v1, v2], out);
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn disk_level_zero_is_hexagon_fan() {
        let m = build_disk_mesh(0).unwrap();
        assert_eq!(m.num_nodes(), 7);
        assert_eq!(m.num_triangles(), 6);
        // shoelace: six equilateral triangles with unit sides
        let expected = 6.0 * (60f64.to_radians().sin()) / 2.0;
        assert!((m.total_area() - expected).abs() < 1e-14);
        assert!((m.total_area() - 2.598076).abs() < 1e-6);
        let b = m.boundary_nodes();
        assert_eq!(b.len(), 6);
        for i in b {
            let [x, y] = m.nodes()[i];
            assert!((x.hypot(y) - 1.0).abs() < 1e-15);
        }
        m.check_invariants().unwrap();
    }

    #[test]
    fn disk_levels_converge_to_pi_quadratically() {
        let errs: Vec<f64> = (0..=5)
            .map(|l| PI - build_disk_mesh(l).unwrap().total_area())
            .collect();
        for w in errs.windows(2) {
            assert!(w[1] < w[0] && w[1] > 0.0, "area must increase toward pi: {errs:?}");
        }
        assert!(errs[3] < 1e-2);
        for l in 2..5 {
            let ratio = errs[l] / errs[l + 1];
            assert!((ratio - 4.0).abs() < 0.1, "level {l} ratio {ratio}");
        }
    }

    #[test]
    fn disk_boundary_count_doubles() {
        for level in 0..=4 {
            let m = build_disk_mesh(level).unwrap();
            assert_eq!(m.boundary_nodes().len(), 6 << level);
            assert_eq!(m.num_triangles(), 6 * 4usize.pow(level as u32));
            m.check_invariants().unwrap();
        }
    }

    #[test]
    fn disk_level_guard() {
        assert!(matches!(build_disk_mesh(11), Err(Error::Config(_))));
    }

    #[test]
    fn square_counts() {
        let m = build_square_mesh(1).unwrap();
        assert_eq!((m.num_nodes(), m.num_triangles()), (4, 2));
        assert_eq!(m.total_area(), 1.0);
        let m = build_square_mesh(2).unwrap();
        assert_eq!((m.num_nodes(), m.num_triangles()), (9, 8));
        assert_eq!(m.boundary_nodes().len(), 8);
        let m = build_square_mesh(4).unwrap();
        for t in 0..m.num_triangles() {
            assert_eq!(m.signed_area(t), 1.0 / 32.0);
        }
        m.check_invariants().unwrap();
        assert!(!m.has_obtuse_triangle());
        assert!(matches!(build_square_mesh(0), Err(Error::Config(_))));
    }

    #[test]
    fn uniform_refinement_matches_levels() {
        let l0 = build_disk_mesh(0).unwrap();
        assert_eq!(refine_uniform(&l0), build_disk_mesh(1).unwrap());
        let sq = refine_uniform(&build_square_mesh(2).unwrap());
        assert_eq!(sq.num_nodes(), 25);
        assert_eq!(sq.num_triangles(), 32);
        sq.check_invariants().unwrap();
    }

    #[test]
    fn conformity_interior_two_boundary_one() {
        let m = build_disk_mesh(3).unwrap();
        for ((a, b), c) in m.edges() {
            let on_gamma = m.is_boundary(a) && m.is_boundary(b);
            if c == 1 {
                assert!(on_gamma);
            } else {
                assert_eq!(c, 2);
            }
        }
    }

    #[test]
    fn marked_refinement_empty_is_identity() {
        let m = build_disk_mesh(2).unwrap();
        assert_eq!(refine_marked(&m, &[]).unwrap(), m);
    }

    #[test]
    fn marked_refinement_single_triangle_conforms() {
        let m = build_disk_mesh(2).unwrap();
        for t in [0, 17, m.num_triangles() - 1] {
            let r = refine_marked(&m, &[t]).unwrap();
            assert!(r.num_triangles() > m.num_triangles());
            r.check_invariants().unwrap();
            for (_, c) in r.edges() {
                assert!(c <= 2);
            }
            assert!((r.total_area() - m.total_area()).abs() < 1e-2);
        }
    }

    #[test]
    fn marked_refinement_rejects_bad_index() {
        let m = build_square_mesh(2).unwrap();
        assert!(matches!(refine_marked(&m, &[8]), Err(Error::Config(_))));
    }

    #[test]
    fn marked_refinement_square_preserves_area() {
        let mut m = build_square_mesh(3).unwrap();
        for _ in 0..4 {
            let marks = m.triangles_containing([0.5, 0.5]);
            m = refine_marked(&m, &marks).unwrap();
            m.check_invariants().unwrap();
            assert!((m.total_area() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn marked_refinement_shrinks_elements_at_origin() {
        let mut m = build_disk_mesh(3).unwrap();
        let min_diam = |m: &Mesh| {
            m.triangles_containing([0.0, 0.0])
                .into_iter()
                .map(|t| m.diameter(t))
                .fold(f64::INFINITY, f64::min)
        };
        let before = min_diam(&m);
        for _ in 0..5 {
            let marks = m.triangles_containing([0.0, 0.0]);
            m = refine_marked(&m, &marks).unwrap();
            m.check_invariants().unwrap();
        }
        let after = min_diam(&m);
        assert!(before / after >= 16.0, "shrink factor {}", before / after);
    }
}
