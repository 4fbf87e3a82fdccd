//! Field export: CSV (17 significant digits) and legacy ASCII VTK.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::ExportFormat;
use crate::discretization::{Discretization, Geometry};
use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// A named nodal field.
pub type NamedField<'a> = (&'a str, &'a [f64]);

fn check_fields(n: usize, fields: &[NamedField]) -> Result<()> {
    for (name, values) in fields {
        if values.len() != n {
            return Err(Error::config(format!(
                "field `{name}` has {} values, expected {n}",
                values.len()
            )));
        }
        if name.is_empty() || name.contains([',', ' ', '\n', '\r']) {
            return Err(Error::config(format!("invalid field name `{name}`")));
        }
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_text(coord_header: &str, coords: &[Vec<f64>], fields: &[NamedField]) -> String {
    let n = coords.first().map_or(0, Vec::len);
    let mut out = String::with_capacity((coords.len() + fields.len()) * n * 24 + 64);
    out.push_str(coord_header);
    for (name, _) in fields {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for i in 0..n {
        let mut first = true;
        for col in coords.iter().map(|c| c[i]).chain(fields.iter().map(|(_, v)| v[i])) {
            if !first {
                out.push(',');
            }
            first = false;
            let _ = write!(out, "{col:.16e}");
        }
        out.push('\n');
    }
    out
}

/// CSV text for a planar mesh: header `x,y,<names>`, one row per node.
pub fn mesh_csv(mesh: &Mesh, fields: &[NamedField]) -> Result<String> {
    check_fields(mesh.num_nodes(), fields)?;
    let xs = mesh.nodes().iter().map(|p| p[0]).collect();
    let ys = mesh.nodes().iter().map(|p| p[1]).collect();
    Ok(csv_text("x,y", &[xs, ys], fields))
}

/// CSV text for a radial grid: header `r,<names>`.
pub fn radial_csv(radii: &[f64], fields: &[NamedField]) -> Result<String> {
    check_fields(radii.len(), fields)?;
    Ok(csv_text("r", &[radii.to_vec()], fields))
}

/// Legacy VTK 3.0 ASCII unstructured grid of triangles with point data.
pub fn mesh_vtk(mesh: &Mesh, fields: &[NamedField]) -> Result<String> {
    check_fields(mesh.num_nodes(), fields)?;
    let nt = mesh.num_triangles();
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\nbohmgrav\nASCII\nDATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", mesh.num_nodes());
    for p in mesh.nodes() {
        let _ = writeln!(out, "{:.16e} {:.16e} 0", p[0], p[1]);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        out.push_str("5\n");
    }
    if !fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", mesh.num_nodes());
        for (name, values) in fields {
            let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
            for v in *values {
                let _ = writeln!(out, "{v:.16e}");
            }
        }
    }
    Ok(out)
}

/// Writes `fields` on `disc` to `path` in `format`.
pub fn export_field(disc: &Discretization, fields: &[NamedField], format: ExportFormat, path: &Path) -> Result<()> {
    let text = match (disc.geometry(), format) {
        (Geometry::Planar(mesh), ExportFormat::Csv) => mesh_csv(mesh, fields)?,
        (Geometry::Planar(mesh), ExportFormat::Vtk) => mesh_vtk(mesh, fields)?,
        (Geometry::Radial(grid), ExportFormat::Csv) => radial_csv(grid.radii(), fields)?,
        (Geometry::Radial(_), ExportFormat::Vtk) => {
            return Err(Error::config("radial states export as csv only"));
        }
    };
    write_file(path, &text)
}

/// A CSV table read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.header.iter().position(|h| h == name).map(|i| self.columns[i].as_slice())
    }
}

/// Parses numeric CSV text as written by the exporters.
pub fn parse_csv(text: &str) -> Result<CsvTable> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::config("empty csv"))?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(Error::config(format!("csv row {}: {} cells, expected {}", row + 2, cells.len(), header.len())));
        }
        for (col, cell) in columns.iter_mut().zip(cells) {
            let v = cell
                .parse::<f64>()
                .map_err(|_| Error::config(format!("csv row {}: `{cell}` is not a number", row + 2)))?;
            col.push(v);
        }
    }
    Ok(CsvTable { header, columns })
}

pub fn read_csv(path: &Path) -> Result<CsvTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_disk_mesh;
    use crate::mesh::tests_support::single_triangle;
    use proptest::prelude::*;

    #[test]
    fn three_node_csv_has_four_lines() {
        let mesh = single_triangle([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]);
        let text = mesh_csv(&mesh, &[("u", &[1.0, 2.0, 3.0])]).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("x,y,u\n"));
        assert!(!text.contains('\r'));
        assert!(text.ends_with('\n'));
    }

    #[test]
    fn vtk_counts_level_zero() {
        let mesh = build_disk_mesh(0).unwrap();
        let text = mesh_vtk(&mesh, &[("n", &[1.0; 7])]).unwrap();
        assert!(text.starts_with("# vtk DataFile Version 3.0\n"));
        assert!(text.contains("POINTS 7 double\n"));
        assert!(text.contains("CELLS 6 24\n"));
        assert!(text.contains("CELL_TYPES 6\n"));
        let types: Vec<&str> = text.split("CELL_TYPES 6\n").nth(1).unwrap().lines().take(6).collect();
        assert!(types.iter().all(|t| *t == "5"));
        assert!(text.contains("POINT_DATA 7\nSCALARS n double 1\nLOOKUP_TABLE default\n"));
    }

    #[test]
    fn mismatched_field_rejected() {
        let mesh = build_disk_mesh(0).unwrap();
        assert!(mesh_csv(&mesh, &[("u", &[1.0])]).is_err());
        assert!(radial_csv(&[0.0, 1.0], &[("a,b", &[1.0, 2.0])]).is_err());
    }

    #[test]
    fn radial_header() {
        let text = radial_csv(&[0.0, 0.5, 1.0], &[("u", &[1.0, 2.0, 3.0]), ("n", &[0.0; 3])]).unwrap();
        assert_eq!(text.lines().next().unwrap(), "r,u,n");
        let table = parse_csv(&text).unwrap();
        assert_eq!(table.column("r").unwrap(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn parse_errors() {
        assert!(parse_csv("").is_err());
        assert!(parse_csv("a,b\n1\n").is_err());
        assert!(parse_csv("a\nx\n").is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_bit_exact(values in proptest::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 7)) {
            let mesh = build_disk_mesh(0).unwrap();
            let text = mesh_csv(&mesh, &[("f", &values)]).unwrap();
            let table = parse_csv(&text).unwrap();
            let back = table.column("f").unwrap();
            for (a, b) in values.iter().zip(back) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
            let xs: Vec<f64> = mesh.nodes().iter().map(|p| p[0]).collect();
            prop_assert_eq!(table.column("x").unwrap(), xs.as_slice());
        }
    }
}
