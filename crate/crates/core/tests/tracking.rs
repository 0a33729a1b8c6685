mod common;

use common::*;
use dragforge_core::drag::{point_track, track_in_features};
use dragforge_core::field::{ConvKernel, FeatureField};
use dragforge_core::grid::{GridTensor, Pixel, Point};
use rand::seq::SliceRandom;
use rand::Rng;

#[test]
fn point_track_equals_exhaustive_scan() {
    let mut r = rng(41);
    for trial in 0..200 {
        let (h, w) = (r.random_range(4..12), r.random_range(4..12));
        let c = r.random_range(1..4);
        // coarse values force plenty of exact ties
        let levels = if trial % 2 == 0 { 3 } else { 1000 };
        let z = GridTensor::from_fn(h, w, c, |_, _, _| r.random_range(0..levels) as f32);
        let z_new = GridTensor::from_fn(h, w, c, |_, _, _| r.random_range(0..levels) as f32);
        let field = if trial % 3 == 0 {
            let weights = (0..9 * c * c).map(|_| r.random_range(-2..3) as f32).collect();
            FeatureField::LinearConv(ConvKernel::new(3, c, c, weights).unwrap())
        } else {
            FeatureField::Identity
        };
        let mut region: Vec<Pixel> = (0..h)
            .flat_map(|y| (0..w).map(move |x| Pixel::new(x, y)))
            .filter(|_| r.random_bool(0.5))
            .collect();
        if region.is_empty() {
            region.push(Pixel::new(0, 0));
        }
        region.shuffle(&mut r);
        let p0 = Point::new(r.random_range(0.0..(w - 1) as f64), r.random_range(0.0..(h - 1) as f64));

        let got = point_track(&field, &z_new, &z, p0, &region).unwrap();
        let reference = dragforge_core::bilinear_sample(&field.forward(&z).unwrap(), p0).unwrap();
        let want = brute_force_track(&field.forward(&z_new).unwrap(), &reference, &region);
        assert_eq!(got, want, "trial {trial}");
    }
}

#[test]
fn translated_content_is_found() {
    let mut r = rng(42);
    let orig = GridTensor::from_fn(12, 12, 2, |_, _, _| r.random_range(-1.0..1.0));
    let moved = GridTensor::from_fn(12, 12, 2, |y, x, c| if x >= 2 { orig.at(y, x - 2, c) } else { 5.0 });
    let region: Vec<Pixel> = (0..12).flat_map(|y| (0..12).map(move |x| Pixel::new(x, y))).collect();
    for p in [Point::new(3.0, 4.0), Point::new(7.0, 1.0), Point::new(0.0, 11.0)] {
        let got = point_track(&FeatureField::Identity, &moved, &orig, p, &region).unwrap();
        assert_eq!(got, Pixel::new(p.x as usize + 2, p.y as usize));
    }
}

#[test]
fn reference_channel_mismatch_is_an_error() {
    let f = GridTensor::zeros(3, 3, 2);
    assert!(track_in_features(&f, &[0.0], &[Pixel::new(0, 0)]).is_err());
}
