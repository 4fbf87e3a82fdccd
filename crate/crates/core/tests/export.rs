use bohmgrav::config::ExportFormat;
use bohmgrav::discretization::{Discretization, RadialGrid};
use bohmgrav::export::{export_field, read_csv};
use bohmgrav::mesh::{build_disk_mesh, DomainKind};
use bohmgrav::quantum::{picard_fixed_point, IterationConfig, ModelParams};
use bohmgrav::Error;

#[test]
fn solved_fields_round_trip_bit_exact() {
    let disc = Discretization::planar(build_disk_mesh(3).unwrap()).unwrap();
    let params = ModelParams::new(0.1, 12.0, DomainKind::Disk).unwrap();
    let state = picard_fixed_point(&disc, &params, &IterationConfig::default()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("state.csv");
    export_field(&disc, &[("u", &state.u), ("n", &state.n)], ExportFormat::Csv, &path).unwrap();
    let table = read_csv(&path).unwrap();
    for (name, original) in [("u", &state.u), ("n", &state.n)] {
        let back = table.column(name).unwrap();
        assert!(original.iter().zip(back).all(|(a, b)| a.to_bits() == b.to_bits()), "{name}");
    }
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(!text.contains('\r'));
    // 17 significant digits per value
    let first_row = text.lines().nth(1).unwrap();
    assert!(first_row.split(',').all(|c| c.split('e').next().unwrap().trim_start_matches('-').len() == 18));
}

#[test]
fn vtk_of_level_zero_disk() {
    let disc = Discretization::planar(build_disk_mesh(0).unwrap()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("mesh.vtk");
    let f: Vec<f64> = (0..7).map(f64::from).collect();
    export_field(&disc, &[("f", &f)], ExportFormat::Vtk, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "# vtk DataFile Version 3.0");
    assert_eq!(lines[2], "ASCII");
    assert_eq!(lines[3], "DATASET UNSTRUCTURED_GRID");
    assert_eq!(lines[4], "POINTS 7 double");
    assert!(lines[5..12].iter().all(|l| l.ends_with(" 0")));
    assert_eq!(lines[12], "CELLS 6 24");
    assert_eq!(lines[19], "CELL_TYPES 6");
    assert!(lines[20..26].iter().all(|l| *l == "5"));
    assert_eq!(lines[26], "POINT_DATA 7");
}

#[test]
fn radial_grid_is_csv_only() {
    let disc = Discretization::radial(RadialGrid::new(64, 0.0).unwrap()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let r = vec![0.0; 64];
    assert!(matches!(
        export_field(&disc, &[("u", &r)], ExportFormat::Vtk, &tmp.path().join("x.vtk")),
        Err(Error::Config(_))
    ));
    export_field(&disc, &[("u", &r)], ExportFormat::Csv, &tmp.path().join("x.csv")).unwrap();
    assert_eq!(read_csv(&tmp.path().join("x.csv")).unwrap().header, ["r", "u"]);
}

#[test]
fn write_failure_is_io_error() {
    let disc = Discretization::planar(build_disk_mesh(0).unwrap()).unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("missing-dir").join("x.csv");
    let err = export_field(&disc, &[], ExportFormat::Csv, &path).unwrap_err();
    assert!(matches!(err, Error::Io(_)));
    assert!(err.to_string().contains("missing-dir"));
}
