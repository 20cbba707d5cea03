use dynlap_wasm::Demo;

#[test]
fn demo_operations_are_consistent() {
    let demo = Demo::build(600, 8, 0.3, 6, 3).unwrap();
    assert_eq!(demo.n_months(), 8);
    assert_eq!(demo.eigenvalues().len(), 6);
    assert!(demo.n_features() >= 1);
    assert_eq!(demo.floats(0).len(), 2 * 600);
    assert!(demo.floats(8).is_empty());

    let n = demo.grid_nx() * demo.grid_ny();
    let field = demo.field(0, 3);
    assert_eq!(field.len(), n);
    assert!(field.iter().cloned().fold(f64::MIN, f64::max) > 0.5);
    assert!(demo.field(demo.n_features(), 0).is_empty());

    let rings = demo.contours(0, 3, 0.5);
    assert!(!rings.is_empty());
    assert_eq!(rings.len() % 2, 0);
    assert!(rings[rings.len() - 1].is_nan());

    let curve = demo.cheeger_curve(0);
    assert_eq!(curve.len(), 100);
    let c_min = curve[99];
    assert!(c_min > 0.0 && c_min < 1.0);
    let k = (c_min / 0.01).round() as usize - 1;
    let best = curve[..99].iter().cloned().filter(|h| !h.is_nan()).fold(f64::INFINITY, f64::min);
    assert_eq!(curve[k], best);
}
