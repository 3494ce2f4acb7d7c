use std::f64::consts::PI;

use lesiongraph::lesiongeom::{
    area_mm2, describe, describe_with, lesion_contours, marching_squares, perimeter_mm, perimeter_px,
    radius_of_gyration_mm, write_descriptors, Contour, GeometryDescriptor, GeometryParams,
};
use lesiongraph::BinaryMask;
use proptest::prelude::*;

fn disk(size: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(size, size, |x, y| {
        let (dx, dy) = (x as f64 - cx, y as f64 - cy);
        dx * dx + dy * dy <= r * r
    })
    .unwrap()
}

fn block(size: usize, x0: usize, y0: usize, side: usize) -> BinaryMask {
    BinaryMask::from_fn(size, size, |x, y| (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)).unwrap()
}

fn square_contour(x0: f64, y0: f64, side: f64, outer: bool) -> Contour {
    let mut v = vec![(x0, y0), (x0, y0 + side), (x0 + side, y0 + side), (x0 + side, y0)];
    let c = Contour::new(v.clone()).unwrap();
    if c.is_outer() == outer {
        return c;
    }
    v.reverse();
    Contour::new(v).unwrap()
}

#[test]
fn ten_by_ten_block_area_lies_in_pixel_bracket() {
    let m = block(20, 5, 5, 10);
    let cs = marching_squares(&m, 0.5).unwrap();
    assert_eq!(cs.len(), 1);
    let a = cs[0].signed_area_px();
    assert!((81.0..=100.0).contains(&a), "area {a}");
}

#[test]
fn disk_and_square_give_two_contours() {
    let m = BinaryMask::from_fn(80, 40, |x, y| {
        let (dx, dy) = (x as f64 - 15.0, y as f64 - 20.0);
        dx * dx + dy * dy <= 100.0 || ((50..60).contains(&x) && (15..25).contains(&y))
    })
    .unwrap();
    assert_eq!(marching_squares(&m, 0.5).unwrap().len(), 2);
    assert_eq!(describe(&m, 1.0).unwrap().n_components, 2);
}

#[test]
fn holes_have_opposite_orientation_and_subtract() {
    let outer = square_contour(0.0, 0.0, 10.0, true);
    let hole = square_contour(3.0, 3.0, 4.0, false);
    assert!(outer.signed_area_px() > 0.0 && hole.signed_area_px() < 0.0);
    assert!((area_mm2(&[outer, hole], 1.0) - 84.0).abs() < 1e-12);

    let ring = BinaryMask::from_fn(30, 30, |x, y| {
        (5..25).contains(&x) && (5..25).contains(&y) && !((12..18).contains(&x) && (12..18).contains(&y))
    })
    .unwrap();
    let cs = marching_squares(&ring, 0.5).unwrap();
    assert_eq!(cs.len(), 2);
    assert_eq!(cs.iter().filter(|c| c.is_outer()).count(), 1);
}

#[test]
fn adding_a_hole_reduces_area_and_keeps_contours() {
    let solid = block(40, 5, 5, 30);
    let mut holed = solid.clone();
    for y in 15..22 {
        for x in 15..22 {
            holed.set(x, y, false);
        }
    }
    for params in [GeometryParams::default(), GeometryParams { smoothing_sigma: 0.0, ..Default::default() }] {
        let a = describe_with(&solid, 1.0, &params).unwrap();
        let b = describe_with(&holed, 1.0, &params).unwrap();
        assert!(b.area_mm2 < a.area_mm2);
        let na = lesion_contours(&solid, &params).unwrap().len();
        let nb = lesion_contours(&holed, &params).unwrap().len();
        assert!(nb >= na);
    }
}

#[test]
fn square_contour_reference_values() {
    let c = Contour::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap();
    assert_eq!(perimeter_px(&c), 40.0);
    assert!((perimeter_mm(&c, 0.1) - 4.0).abs() < 1e-12);
    assert!((area_mm2(std::slice::from_ref(&c), 0.1) - 1.0).abs() < 1e-12);
    assert!((radius_of_gyration_mm(&c, 0.1) - 0.70711).abs() < 5e-6);
}

#[test]
fn perimeter_is_rotation_invariant() {
    let c = Contour::new(vec![(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]).unwrap();
    let r = c.rotated(37f64.to_radians());
    assert!((perimeter_px(&r) - 40.0).abs() < 1e-9);
    assert!((radius_of_gyration_mm(&r, 1.0) - radius_of_gyration_mm(&c, 1.0)).abs() < 1e-9);
    assert!((r.signed_area_px() - c.signed_area_px()).abs() < 1e-9);
}

#[test]
fn diagonal_staircase_matches_chain_code_length() {
    // closed path of n diagonal steps out and n back along a parallel offset
    for n in [1usize, 4, 9] {
        let mut v: Vec<(f64, f64)> = (0..=n).map(|k| (k as f64, k as f64)).collect();
        v.extend((0..=n).rev().map(|k| (k as f64 + 1.0, k as f64 - 1.0)));
        let c = Contour::new(v.clone()).unwrap();
        let mut direct = 0.0;
        for i in 0..v.len() {
            let (a, b) = (v[i], v[(i + 1) % v.len()]);
            direct += ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        }
        let chain = 2.0 * n as f64 * 2f64.sqrt() + 2.0 * 2f64.sqrt();
        assert!((perimeter_px(&c) - direct).abs() < 1e-12);
        assert!((perimeter_px(&c) - chain).abs() < 1e-12);
    }
}

#[test]
fn rg_doubles_with_alpha_and_converges_on_circles() {
    let r = 25.0;
    let v: Vec<(f64, f64)> = (0..4000)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 4000.0;
            (50.0 + r * t.cos(), 40.0 + r * t.sin())
        })
        .collect();
    let c = Contour::new(v).unwrap();
    let rg = radius_of_gyration_mm(&c, 1.0);
    assert!((rg - r).abs() / r < 0.005);
    assert_eq!(radius_of_gyration_mm(&c, 2.0), 2.0 * rg);
}

#[test]
fn disk_radius_thirty_converges_to_circle() {
    let m = disk(80, 40.0, 40.0, 30.0);
    let d = describe(&m, 1.0).unwrap();
    let area = PI * 900.0;
    let perim = 2.0 * PI * 30.0;
    assert!((d.area_mm2 - area).abs() / area <= 0.02, "area {}", d.area_mm2);
    assert!((d.perimeter_mm - perim).abs() / perim <= 0.03, "perimeter {}", d.perimeter_mm);
    assert_eq!(d.n_components, 1);
}

#[test]
fn block_descriptor_brackets() {
    let d = describe(&block(30, 10, 10, 10), 10.0).unwrap();
    assert!((0.81..=1.0).contains(&d.area_mm2), "{d:?}");
    assert!((3.6..=4.0).contains(&d.perimeter_mm), "{d:?}");
}

#[test]
fn finer_rasterization_keeps_mm_descriptors() {
    let rho = 4.0;
    let a = describe(&disk(64, 31.5, 31.5, 20.0), rho).unwrap();
    for s in [2usize, 3] {
        let c = 31.5 * s as f64 + (s as f64 - 1.0) / 2.0;
        let b = describe(&disk(64 * s, c, c, 20.0 * s as f64), rho * s as f64).unwrap();
        for (x, y) in [(a.area_mm2, b.area_mm2), (a.perimeter_mm, b.perimeter_mm), (a.rg_mm, b.rg_mm)] {
            assert!((x - y).abs() / x <= 0.02, "scale {s}: {a:?} vs {b:?}");
        }
    }
}

#[test]
fn block_upscaled_disks_keep_area_and_rg() {
    let base = disk(64, 31.5, 31.5, 20.0);
    let rho = 4.0;
    let a = describe(&base, rho).unwrap();
    for s in [2usize, 3] {
        let b = describe(&base.upscaled(s), rho * s as f64).unwrap();
        assert!((a.area_mm2 - b.area_mm2).abs() / a.area_mm2 <= 0.02, "scale {s}: {a:?} vs {b:?}");
        assert!((a.rg_mm - b.rg_mm).abs() / a.rg_mm <= 0.02, "scale {s}: {a:?} vs {b:?}");
    }
}

#[test]
fn descriptor_csv_has_expected_header() {
    let mut out = Vec::new();
    write_descriptors(&mut out, &[("a".into(), GeometryDescriptor::EMPTY)]).unwrap();
    assert_eq!(String::from_utf8(out).unwrap(), "id,area_mm2,perimeter_mm,rg_mm,n_components\na,0,0,0,0\n");
}

proptest! {
    #[test]
    fn descriptors_are_translation_invariant(dx in 0usize..20, dy in 0usize..20, seed in 0u64..1000) {
        let base = BinaryMask::from_fn(24, 24, |x, y| {
            let h = (x as u64 * 31 + y as u64 * 17 + seed * 7) % 5;
            (4..20).contains(&x) && (4..20).contains(&y) && h != 0
        }).unwrap();
        let mut shifted = BinaryMask::new(48, 48).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                shifted.set(x + dx, y + dy, base.get(x, y));
            }
        }
        let a = describe(&base, 3.0).unwrap();
        let b = describe(&shifted, 3.0).unwrap();
        prop_assert!((a.area_mm2 - b.area_mm2).abs() < 1e-9);
        prop_assert!((a.perimeter_mm - b.perimeter_mm).abs() < 1e-9);
        prop_assert!((a.rg_mm - b.rg_mm).abs() < 1e-9);
        prop_assert_eq!(a.n_components, b.n_components);
    }

    #[test]
    fn fully_random_masks_produce_finite_descriptors(bits in proptest::collection::vec(any::<bool>(), 16 * 16)) {
        let m = BinaryMask::from_bits(16, 16, bits).unwrap();
        for sigma in [0.0, 1.0] {
            let d = describe_with(&m, 2.0, &GeometryParams { smoothing_sigma: sigma, ..Default::default() }).unwrap();
            prop_assert!(d.area_mm2.is_finite() && d.area_mm2 >= 0.0);
            prop_assert!(d.perimeter_mm.is_finite() && d.rg_mm.is_finite());
            if d.n_components == 0 {
                prop_assert_eq!(d, GeometryDescriptor::EMPTY);
            }
        }
    }
}
