use hamlearn_demo::{lidar_scan, potential_field, room_segments, stabilize_native, STABILIZE_STRIDE};

#[test]
fn stabilize_reaches_the_origin() {
    let rows = stabilize_native(2.0, -2.0, -90.0, 30.0).unwrap();
    assert_eq!(rows.len() % STABILIZE_STRIDE, 0);
    assert_eq!(rows.len() / STABILIZE_STRIDE, 1501);
    let last = &rows[rows.len() - STABILIZE_STRIDE..];
    assert!(last[4] < 0.05, "{}", last[4]);
    assert!((rows[1] - 2.0).abs() < 1e-12 && (rows[2] + 2.0).abs() < 1e-12);
}

#[test]
fn scan_points_lie_inside_the_room() {
    let pts = lidar_scan(0.5, -0.5, 30.0, 180, 1);
    assert!(pts.len() >= 2 * 170);
    let segs = room_segments();
    let max = segs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(pts.iter().all(|v| v.abs() <= max + 0.1));
    assert_eq!(segs.len() % 4, 0);
}

#[test]
fn potential_field_is_nonnegative_with_a_singular_centre() {
    let n = 41;
    let v = potential_field(45.0, 0.0, n, 2.0);
    assert_eq!(v.len(), n * n);
    assert!(v[20 * n + 20].is_nan());
    assert!(v.iter().filter(|x| x.is_finite()).all(|&x| x >= -1e-12));
    assert_eq!(v.iter().filter(|x| x.is_nan()).count(), 1);
}
